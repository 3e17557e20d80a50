//! Random small committed histories and a brute-force serializability check
//! written independently of the library's oracle.

use std::collections::BTreeMap;

use learned_cc::executor::{CommitRecord, LoggedAccess};
use learned_cc::store::{TableId, VersionId};
use rand::seq::SliceRandom;
use rand::Rng;

/// Up to `max_txns` transactions over a handful of keys in two tables.
/// Every read names a version that some other transaction in the history
/// installs, or the initial version; timestamps are a random permutation.
pub fn random_history(rng: &mut impl Rng, max_txns: usize) -> Vec<CommitRecord> {
    let n = rng.random_range(1..=max_txns);
    let keys: Vec<(u32, u8)> = vec![(0, 0), (0, 1), (1, 0)];
    let write_sets: Vec<Vec<(u32, u8)>> = (0..n)
        .map(|_| keys.iter().copied().filter(|_| rng.random_bool(0.4)).collect())
        .collect();
    let mut ts: Vec<u64> = (1..=n as u64).map(|t| t * 10).collect();
    ts.shuffle(rng);
    (0..n)
        .map(|i| {
            let attempt = 100 + i as u64;
            let mut reads = Vec::new();
            for &k in &keys {
                if !rng.random_bool(0.5) {
                    continue;
                }
                let mut options = vec![VersionId::INITIAL];
                options.extend(
                    (0..n)
                        .filter(|&j| j != i && write_sets[j].contains(&k))
                        .map(|j| VersionId::new(100 + j as u64, 1 + j as u32 % 3)),
                );
                reads.push(access(k, options[rng.random_range(0..options.len())]));
            }
            let writes = write_sets[i].iter().map(|&k| access(k, VersionId::new(attempt, 1 + i as u32 % 3))).collect();
            CommitRecord { attempt, txn_type: 0, ts: ts[i], worker: 0, reads, writes }
        })
        .collect()
}

fn access((table, key): (u32, u8), vid: VersionId) -> LoggedAccess {
    LoggedAccess { table: TableId(table), key: vec![key], vid }
}

/// True if some serial order of the history reads exactly what it read and
/// installs each key's versions in timestamp order.
pub fn serial_order_exists(log: &[CommitRecord]) -> bool {
    let mut order: Vec<usize> = (0..log.len()).collect();
    permutations(&mut order, 0, &mut |perm| replays(log, perm))
}

fn permutations(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize]) -> bool) -> bool {
    if k == v.len() {
        return f(v);
    }
    for i in k..v.len() {
        v.swap(k, i);
        if permutations(v, k + 1, f) {
            v.swap(k, i);
            return true;
        }
        v.swap(k, i);
    }
    false
}

/// Whether running `log` serially in the order `perm` reproduces it.
pub fn replays(log: &[CommitRecord], perm: &[usize]) -> bool {
    let mut current: BTreeMap<(TableId, Vec<u8>), (VersionId, u64)> = BTreeMap::new();
    for &i in perm {
        let t = &log[i];
        for r in &t.reads {
            let seen = current.get(&(r.table, r.key.clone())).map_or(VersionId::INITIAL, |&(v, _)| v);
            if seen != r.vid {
                return false;
            }
        }
        for w in &t.writes {
            let slot = current.entry((w.table, w.key.clone())).or_insert((VersionId::INITIAL, 0));
            if slot.1 > t.ts {
                return false;
            }
            *slot = (w.vid, t.ts);
        }
    }
    true
}
