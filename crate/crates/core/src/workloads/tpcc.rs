//! Reduced TPC-C: NewOrder, Payment and Delivery over the usual tables, at a
//! configurable (small) scale.
//!
//! Loops map onto a repeated access-id, so NewOrder has 12 states, Payment 8
//! and Delivery 6. Delivery locates the oldest undelivered order per district
//! with a committed-only ordered scan and then claims it with a
//! read-modify-write (a delete) of its `new_order` row, which is validated.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{decode, encode, field, key, key_parts, worker_rng, InputStream, Workload};
use crate::executor::{Observed, Op, TxnProgram};
use crate::policy::{AccessKind, TxnTypeSpec, WorkloadSchema};
use crate::store::{Store, TableId};

pub const WAREHOUSE: TableId = TableId(0);
pub const DISTRICT: TableId = TableId(1);
pub const CUSTOMER: TableId = TableId(2);
pub const CUSTOMER_NAME_IDX: TableId = TableId(3);
pub const HISTORY: TableId = TableId(4);
pub const ORDER: TableId = TableId(5);
pub const NEW_ORDER: TableId = TableId(6);
pub const ORDER_CID_IDX: TableId = TableId(7);
pub const ORDER_LINE: TableId = TableId(8);
pub const ITEM: TableId = TableId(9);
pub const STOCK: TableId = TableId(10);

const TABLES: [&str; 11] = [
    "warehouse",
    "district",
    "customer",
    "customer_name_idx",
    "history",
    "order",
    "new_order",
    "order_cid_idx",
    "order_line",
    "item",
    "stock",
];

pub const NEW_ORDER_TYPE: usize = 0;
pub const PAYMENT_TYPE: usize = 1;
pub const DELIVERY_TYPE: usize = 2;

/// Initial district year-to-date balance; the warehouse starts at the sum.
const DISTRICT_YTD: i64 = 3_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpccConfig {
    pub warehouses: u32,
    pub districts: u32,
    pub customers_per_district: u32,
    /// Distinct customer last names per district.
    pub names_per_district: u32,
    pub items: u32,
    /// Mix weights for NewOrder, Payment and Delivery.
    pub mix: [u32; 3],
    pub load_seed: u64,
}

impl Default for TpccConfig {
    fn default() -> Self {
        Self {
            warehouses: 1,
            districts: 10,
            customers_per_district: 1000,
            names_per_district: 100,
            items: 10_000,
            mix: [45, 43, 4],
            load_seed: 0x7063_6321,
        }
    }
}

impl TpccConfig {
    /// Small scale for tests.
    pub fn tiny() -> Self {
        Self { customers_per_district: 30, names_per_district: 10, items: 200, ..Self::default() }
    }
}

#[derive(Debug, Clone)]
pub struct TpccLite {
    config: TpccConfig,
}

impl TpccLite {
    pub fn new(config: TpccConfig) -> Self {
        assert!(config.warehouses > 0 && config.districts > 0 && config.items > 0);
        assert!(config.customers_per_district > 0 && config.names_per_district > 0);
        assert!(config.mix.iter().sum::<u32>() > 0);
        Self { config }
    }

    pub fn config(&self) -> &TpccConfig {
        &self.config
    }

    pub fn schema_spec() -> WorkloadSchema {
        use AccessKind::*;
        WorkloadSchema::new(
            "tpcc-lite",
            vec![
                TxnTypeSpec::new("NewOrder", vec![Read, Read, Write, Read, Write, Write, Write, Read, Read, Write, Rmw, Write]),
                TxnTypeSpec::new("Payment", vec![Read, Write, Read, Write, Read, Read, Write, Write]),
                TxnTypeSpec::new("Delivery", vec![Rmw, Read, Write, Read, Read, Write]),
            ],
        )
        .expect("valid schema")
    }

    /// Checks the TPC-C consistency conditions that this subset maintains:
    /// warehouse YTD equals the sum of its districts' YTD, every district's
    /// next order id is one past its last order, and an order is undelivered
    /// exactly when its `new_order` row exists.
    pub fn check_consistency(&self, store: &Store) -> Result<(), String> {
        let c = &self.config;
        let row = |t: TableId, k: &[u64]| -> Result<Vec<i64>, String> {
            store
                .lookup(t, &key(k))
                .ok()
                .and_then(|r| r.committed_value())
                .map(|v| decode(&v))
                .ok_or_else(|| format!("missing row {k:?} in {}", TABLES[t.0 as usize]))
        };
        let orders = store.committed_rows(ORDER).map_err(|e| e.to_string())?;
        let new_orders = store.committed_rows(NEW_ORDER).map_err(|e| e.to_string())?;
        for w in 1..=c.warehouses as u64 {
            let w_ytd = row(WAREHOUSE, &[w])?[1];
            let mut d_sum = 0;
            for d in 1..=c.districts as u64 {
                let dist = row(DISTRICT, &[w, d])?;
                d_sum += dist[1];
                let next = dist[2] as u64;
                let mine: Vec<_> = orders
                    .iter()
                    .filter(|(k, _)| key_parts(k)[..2] == [w, d])
                    .map(|(k, v)| (key_parts(k)[2], decode(v)))
                    .collect();
                if mine.len() as u64 != next - 1 || mine.last().is_some_and(|(o, _)| *o != next - 1) {
                    return Err(format!("district {w}/{d}: next order id {next} but {} orders", mine.len()));
                }
                for (o, ord) in &mine {
                    let pending = new_orders.iter().any(|(k, _)| key_parts(k) == [w, d, *o]);
                    if pending != (ord[2] == 0) {
                        return Err(format!("order {w}/{d}/{o}: carrier {} but new_order present = {pending}", ord[2]));
                    }
                }
            }
            if w_ytd != d_sum {
                return Err(format!("warehouse {w}: ytd {w_ytd} != district sum {d_sum}"));
            }
        }
        Ok(())
    }
}

/// TPC-C's non-uniform random, with `a` scaled to the population.
fn nurand(rng: &mut impl Rng, n: u64) -> u64 {
    let a = (n.next_power_of_two() / 4).max(1) - 1;
    ((rng.random_range(0..=a) | rng.random_range(0..n)) % n) + 1
}

impl Workload for TpccLite {
    fn schema(&self) -> WorkloadSchema {
        Self::schema_spec()
    }

    fn table_names(&self) -> Vec<String> {
        TABLES.iter().map(|s| s.to_string()).collect()
    }

    fn load(&self, store: &Store) {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.load_seed);
        let put = |t: TableId, k: &[u64], v: &[i64]| store.load(t, key(k), &encode(v)).expect("known table");
        for i in 1..=c.items as u64 {
            put(ITEM, &[i], &[rng.random_range(100..10_000)]);
        }
        for w in 1..=c.warehouses as u64 {
            put(WAREHOUSE, &[w], &[rng.random_range(0..2000), DISTRICT_YTD * c.districts as i64]);
            for i in 1..=c.items as u64 {
                put(STOCK, &[w, i], &[rng.random_range(10..=100), 0, 0, 0]);
            }
            for d in 1..=c.districts as u64 {
                put(DISTRICT, &[w, d], &[rng.random_range(0..2000), DISTRICT_YTD, 1]);
                for cid in 1..=c.customers_per_district as u64 {
                    put(CUSTOMER, &[w, d, cid], &[rng.random_range(0..5000), -1000, 1000, 1, 0]);
                }
                for n in 0..c.names_per_district.min(c.customers_per_district) as u64 {
                    put(CUSTOMER_NAME_IDX, &[w, d, n], &[n as i64 + 1]);
                }
            }
        }
    }

    fn generator(&self, seed: u64, worker: u32) -> InputStream {
        let c = self.config;
        let mut rng = worker_rng(seed, worker);
        let mut history_seq = 0u64;
        let total: u32 = c.mix.iter().sum();
        Box::new(std::iter::from_fn(move || {
            let w = rng.random_range(1..=c.warehouses as u64);
            let r = rng.random_range(0..total);
            let program: Arc<dyn TxnProgram> = if r < c.mix[0] {
                let n = rng.random_range(5..=15);
                let items = (0..n)
                    .map(|_| {
                        let i = nurand(&mut rng, c.items as u64);
                        let supply = if c.warehouses > 1 && rng.random_ratio(1, 100) {
                            let other = rng.random_range(1..c.warehouses as u64);
                            if other >= w { other + 1 } else { other }
                        } else {
                            w
                        };
                        (i, supply, rng.random_range(1..=10))
                    })
                    .collect();
                Arc::new(TpccTxn::NewOrder {
                    w,
                    d: rng.random_range(1..=c.districts as u64),
                    c: nurand(&mut rng, c.customers_per_district as u64),
                    items,
                })
            } else if r < c.mix[0] + c.mix[1] {
                let d = rng.random_range(1..=c.districts as u64);
                let customer = if rng.random_ratio(60, 100) {
                    CustomerBy::Name(rng.random_range(0..c.names_per_district.min(c.customers_per_district) as u64))
                } else {
                    CustomerBy::Id(nurand(&mut rng, c.customers_per_district as u64))
                };
                history_seq += 1;
                Arc::new(TpccTxn::Payment {
                    w,
                    d,
                    customer,
                    amount: rng.random_range(100..=500_000),
                    history_id: (worker as u64) << 40 | history_seq,
                })
            } else {
                Arc::new(TpccTxn::Delivery { w, districts: c.districts as u64, carrier: rng.random_range(1..=10) })
            };
            Some(program)
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CustomerBy {
    Id(u64),
    /// Last-name bucket, resolved through the name index.
    Name(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TpccTxn {
    NewOrder { w: u64, d: u64, c: u64, items: Vec<(u64, u64, i64)> },
    Payment { w: u64, d: u64, customer: CustomerBy, amount: i64, history_id: u64 },
    Delivery { w: u64, districts: u64, carrier: i64 },
}

fn rd(access_id: u16, table: TableId, k: &[u64]) -> Option<Op> {
    Some(Op::Read { access_id, table, key: key(k) })
}

fn wr(access_id: u16, table: TableId, k: &[u64], v: Option<&[i64]>) -> Option<Op> {
    Some(Op::Write { access_id, table, key: key(k), value: v.map(encode) })
}

fn row(h: &Observed) -> Vec<i64> {
    h.value().map(decode).unwrap_or_default()
}

impl TpccTxn {
    fn new_order(w: u64, d: u64, c: u64, items: &[(u64, u64, i64)], h: &[Observed]) -> Option<Op> {
        let o = || field(h[1].value(), 2) as u64;
        match h.len() {
            0 => rd(1, WAREHOUSE, &[w]),
            1 => rd(2, DISTRICT, &[w, d]),
            2 => {
                let mut dist = row(&h[1]);
                dist.resize(3, 0);
                dist[2] += 1;
                wr(3, DISTRICT, &[w, d], Some(&dist))
            }
            3 => rd(4, CUSTOMER, &[w, d, c]),
            4 => {
                let all_local = items.iter().all(|&(_, s, _)| s == w) as i64;
                wr(5, ORDER, &[w, d, o()], Some(&[c as i64, items.len() as i64, 0, all_local]))
            }
            5 => wr(6, ORDER_CID_IDX, &[w, d, c], Some(&[o() as i64])),
            6 => wr(7, NEW_ORDER, &[w, d, o()], Some(&[o() as i64])),
            n => {
                let (j, step) = ((n - 7) / 4, (n - 7) % 4);
                let &(i, supply, qty) = items.get(j)?;
                let remote = supply != w;
                let base = 7 + 4 * j;
                match step {
                    0 => rd(8, ITEM, &[i]),
                    1 => rd(if remote { 11 } else { 9 }, STOCK, &[supply, i]),
                    2 => {
                        let mut s = row(&h[base + 1]);
                        s.resize(4, 0);
                        s[0] = if s[0] >= qty + 10 { s[0] - qty } else { s[0] - qty + 91 };
                        s[1] += qty;
                        s[2] += 1;
                        s[3] += remote as i64;
                        wr(if remote { 11 } else { 10 }, STOCK, &[supply, i], Some(&s))
                    }
                    _ => {
                        let amount = qty * field(h[base].value(), 0);
                        let line = [i as i64, supply as i64, qty, amount, 0];
                        wr(12, ORDER_LINE, &[w, d, o(), j as u64 + 1], Some(&line))
                    }
                }
            }
        }
    }

    fn payment(w: u64, d: u64, customer: CustomerBy, amount: i64, history_id: u64, h: &[Observed]) -> Option<Op> {
        let by_name = matches!(customer, CustomerBy::Name(_)) as usize;
        let cid = |h: &[Observed]| match customer {
            CustomerBy::Id(c) => c,
            CustomerBy::Name(_) => field(h[4].value(), 0) as u64,
        };
        match h.len() {
            0 => rd(1, WAREHOUSE, &[w]),
            1 => {
                let mut wh = row(&h[0]);
                wh.resize(2, 0);
                wh[1] += amount;
                wr(2, WAREHOUSE, &[w], Some(&wh))
            }
            2 => rd(3, DISTRICT, &[w, d]),
            3 => {
                let mut dist = row(&h[2]);
                dist.resize(3, 0);
                dist[1] += amount;
                wr(4, DISTRICT, &[w, d], Some(&dist))
            }
            4 if by_name == 1 => match customer {
                CustomerBy::Name(n) => rd(5, CUSTOMER_NAME_IDX, &[w, d, n]),
                CustomerBy::Id(_) => unreachable!(),
            },
            n if n == 4 + by_name => rd(6, CUSTOMER, &[w, d, cid(h)]),
            n if n == 5 + by_name => {
                let mut cust = row(&h[n - 1]);
                cust.resize(5, 0);
                cust[1] -= amount;
                cust[2] += amount;
                cust[3] += 1;
                wr(7, CUSTOMER, &[w, d, cid(h)], Some(&cust))
            }
            n if n == 6 + by_name => wr(8, HISTORY, &[w, d, history_id], Some(&[cid(h) as i64, amount])),
            _ => None,
        }
    }

    fn delivery(w: u64, districts: u64, carrier: i64, h: &[Observed]) -> Option<Op> {
        // Replays the district loop over the history to find the next op.
        let mut i = 0;
        macro_rules! next {
            ($op:expr) => {{
                if i == h.len() {
                    return $op;
                }
                i += 1;
                &h[i - 1]
            }};
        }
        for d in 1..=districts {
            let scanned = next!(Some(Op::ScanFirst {
                table: NEW_ORDER,
                from: key(&[w, d]),
                to: key(&[w, d + 1]),
            }));
            let Some(o) = scanned.scanned_key().map(|k| key_parts(k)[2]) else { continue };
            // Another delivery may have claimed it since the scan.
            if next!(rd(1, NEW_ORDER, &[w, d, o])).value().is_none() {
                continue;
            }
            let _ = next!(wr(1, NEW_ORDER, &[w, d, o], None));
            let mut ord = row(next!(rd(2, ORDER, &[w, d, o])));
            if ord.len() < 4 {
                continue;
            }
            let (c, lines) = (ord[0] as u64, ord[1] as u64);
            ord[2] = carrier;
            let _ = next!(wr(3, ORDER, &[w, d, o], Some(&ord)));
            let mut total = 0;
            for ol in 1..=lines {
                total += field(next!(rd(4, ORDER_LINE, &[w, d, o, ol])).value(), 3);
            }
            let mut cust = row(next!(rd(5, CUSTOMER, &[w, d, c])));
            cust.resize(5, 0);
            cust[1] += total;
            cust[4] += 1;
            let _ = next!(wr(6, CUSTOMER, &[w, d, c], Some(&cust)));
        }
        None
    }
}

impl TxnProgram for TpccTxn {
    fn type_index(&self) -> usize {
        match self {
            TpccTxn::NewOrder { .. } => NEW_ORDER_TYPE,
            TpccTxn::Payment { .. } => PAYMENT_TYPE,
            TpccTxn::Delivery { .. } => DELIVERY_TYPE,
        }
    }

    fn next_op(&self, history: &[Observed]) -> Option<Op> {
        match self {
            TpccTxn::NewOrder { w, d, c, items } => Self::new_order(*w, *d, *c, items, history),
            TpccTxn::Payment { w, d, customer, amount, history_id } => {
                Self::payment(*w, *d, *customer, *amount, *history_id, history)
            }
            TpccTxn::Delivery { w, districts, carrier } => Self::delivery(*w, *districts, *carrier, history),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::state_count;
    use crate::store::StoreConfig;

    /// Executes a program serially against committed state.
    fn run_serial(store: &Store, p: &dyn TxnProgram) -> Vec<Op> {
        let mut h = Vec::new();
        let mut ops = Vec::new();
        while let Some(op) = p.next_op(&h) {
            let obs = match &op {
                Op::Read { table, key, .. } => Observed::Value(store.lookup(*table, key).ok().and_then(|r| r.committed_value())),
                Op::Write { table, key, value, .. } => {
                    let rec = store.lookup_or_insert(*table, key).unwrap();
                    rec.try_latch(u64::MAX);
                    store.install_committed(&rec, value.clone(), crate::store::VersionId::new(u64::MAX, 0), u64::MAX);
                    rec.unlatch(u64::MAX);
                    Observed::Written
                }
                Op::ScanFirst { table, from, to } => Observed::Scanned(store.scan_first_committed(*table, from, to).unwrap()),
            };
            h.push(obs);
            ops.push(op);
        }
        ops
    }

    #[test]
    fn schema_has_26_states() {
        let s = TpccLite::schema_spec();
        assert_eq!(state_count(&s), 26);
        assert_eq!(s.access_count(NEW_ORDER_TYPE), 12);
        assert_eq!(s.access_count(PAYMENT_TYPE), 8);
        assert_eq!(s.access_count(DELIVERY_TYPE), 6);
    }

    #[test]
    fn mix_follows_weights() {
        let w = TpccLite::new(TpccConfig::tiny());
        let mut counts = [0usize; 3];
        let n = 46_000;
        for p in w.generator(11, 0).take(n) {
            counts[p.type_index()] += 1;
        }
        for (t, weight) in [45.0, 43.0, 4.0].iter().enumerate() {
            let expected = n as f64 * weight / 92.0;
            let sd = (n as f64 * weight / 92.0 * (1.0 - weight / 92.0)).sqrt();
            assert!((counts[t] as f64 - expected).abs() < 5.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn generator_is_deterministic() {
        let w = TpccLite::new(TpccConfig::tiny());
        let a: Vec<_> = w.generator(3, 2).take(100).map(|p| format!("{p:?}")).collect();
        let b: Vec<_> = w.generator(3, 2).take(100).map(|p| format!("{p:?}")).collect();
        let c: Vec<_> = w.generator(3, 1).take(100).map(|p| format!("{p:?}")).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn access_ids_match_schema_kinds() {
        let wl = TpccLite::new(TpccConfig { warehouses: 2, ..TpccConfig::tiny() });
        let schema = wl.schema();
        let store = wl.build_store(StoreConfig::default(), false);
        for p in wl.generator(5, 0).take(400) {
            for op in run_serial(&store, p.as_ref()) {
                match op {
                    Op::Read { access_id, .. } => assert!(schema.access_kind(p.type_index(), access_id).reads()),
                    Op::Write { access_id, .. } => assert!(schema.access_kind(p.type_index(), access_id).writes()),
                    Op::ScanFirst { table, .. } => assert_eq!(table, NEW_ORDER),
                }
            }
        }
    }

    #[test]
    fn serial_execution_stays_consistent() {
        let wl = TpccLite::new(TpccConfig::tiny());
        let store = wl.build_store(StoreConfig::default(), false);
        wl.check_consistency(&store).unwrap();
        let mut delivered = 0;
        for p in wl.generator(9, 0).take(600) {
            let ops = run_serial(&store, p.as_ref());
            if p.type_index() == DELIVERY_TYPE {
                delivered += ops.iter().filter(|o| matches!(o, Op::Write { access_id: 1, .. })).count();
            }
        }
        assert!(delivered > 0);
        wl.check_consistency(&store).unwrap();
    }

    #[test]
    fn consistency_check_detects_damage() {
        let wl = TpccLite::new(TpccConfig::tiny());
        let store = wl.build_store(StoreConfig::default(), false);
        store.load(WAREHOUSE, key(&[1]), &encode(&[0, 1])).unwrap();
        assert!(wl.check_consistency(&store).is_err());
    }

    #[test]
    fn nurand_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1, 2, 30, 1000] {
            for _ in 0..1000 {
                let v = nurand(&mut rng, n);
                assert!((1..=n).contains(&v));
            }
        }
    }
}
