//! Workload schemas and the two learned tables: the concurrency-control
//! action table (one row per `(type, access-id)` state) and the backoff
//! adjustment table.
//!
//! The wait-target domain is `NO_WAIT`, `ACCESS(1..=d_X)` and `COMMIT`, a
//! strict superset of a pure per-type access-id encoding. `COMMIT` expresses
//! "wait until the dependency finishes" inside the same table, which is what
//! a 2PL-style blocking policy needs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessKind {
    #[serde(rename = "READ")]
    Read,
    #[serde(rename = "WRITE")]
    Write,
    #[serde(rename = "RMW")]
    Rmw,
}

impl AccessKind {
    pub fn reads(self) -> bool {
        matches!(self, AccessKind::Read | AccessKind::Rmw)
    }

    pub fn writes(self) -> bool {
        matches!(self, AccessKind::Write | AccessKind::Rmw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnTypeSpec {
    pub name: String,
    pub access_kinds: Vec<AccessKind>,
}

impl TxnTypeSpec {
    pub fn new(name: impl Into<String>, access_kinds: Vec<AccessKind>) -> Self {
        Self { name: name.into(), access_kinds }
    }

    pub fn access_count(&self) -> usize {
        self.access_kinds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSchema {
    name: String,
    txn_types: Vec<TxnTypeSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema has no transaction types")]
    Empty,
    #[error("transaction type `{0}` has no accesses")]
    NoAccesses(String),
    #[error("duplicate transaction type name `{0}`")]
    DuplicateType(String),
    #[error("transaction type `{0}` has more than {max} accesses", max = u16::MAX)]
    TooManyAccesses(String),
}

impl WorkloadSchema {
    pub fn new(name: impl Into<String>, txn_types: Vec<TxnTypeSpec>) -> Result<Self, SchemaError> {
        if txn_types.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut seen = BTreeSet::new();
        for t in &txn_types {
            if t.access_kinds.is_empty() {
                return Err(SchemaError::NoAccesses(t.name.clone()));
            }
            if t.access_kinds.len() > u16::MAX as usize {
                return Err(SchemaError::TooManyAccesses(t.name.clone()));
            }
            if !seen.insert(t.name.as_str()) {
                return Err(SchemaError::DuplicateType(t.name.clone()));
            }
        }
        Ok(Self { name: name.into(), txn_types })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn txn_types(&self) -> &[TxnTypeSpec] {
        &self.txn_types
    }

    pub fn type_count(&self) -> usize {
        self.txn_types.len()
    }

    /// Number of accesses `d` of the given type.
    pub fn access_count(&self, type_index: usize) -> u16 {
        self.txn_types[type_index].access_count() as u16
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.txn_types.iter().position(|t| t.name == name)
    }

    pub fn access_kind(&self, type_index: usize, access_id: u16) -> AccessKind {
        self.txn_types[type_index].access_kinds[access_id as usize - 1]
    }

    /// Iterates all states `(type_index, access_id)` in table order.
    pub fn states(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        self.txn_types
            .iter()
            .enumerate()
            .flat_map(|(t, spec)| (1..=spec.access_count() as u16).map(move |a| (t, a)))
    }
}

/// Number of policy-table rows: the sum of per-type access counts.
pub fn state_count(schema: &WorkloadSchema) -> usize {
    schema.txn_types.iter().map(TxnTypeSpec::access_count).sum()
}

/// Per-state action-combination counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionCombinations {
    /// `d_1 * ... * d_n * 8`: one access-id choice per type, three binary knobs.
    pub access_only: BigUint,
    /// `(d_1 + 2) * ... * (d_n + 2) * 8`: the implemented domain, which also
    /// admits `NO_WAIT` and `COMMIT` per type.
    pub implemented: BigUint,
}

pub fn action_combinations_per_state(schema: &WorkloadSchema) -> ActionCombinations {
    let mut access_only = BigUint::one();
    let mut implemented = BigUint::one();
    for t in &schema.txn_types {
        let d = t.access_count() as u64;
        access_only *= BigUint::from(d);
        implemented *= BigUint::from(d + 2);
    }
    access_only *= BigUint::from(8u32);
    implemented *= BigUint::from(8u32);
    ActionCombinations { access_only, implemented }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum WaitTarget {
    NoWait,
    Access(u16),
    Commit,
}

impl WaitTarget {
    /// File encoding: `-1` = NO_WAIT, `0` = COMMIT, `k >= 1` = ACCESS(k).
    pub fn encode(self) -> i64 {
        match self {
            WaitTarget::NoWait => -1,
            WaitTarget::Commit => 0,
            WaitTarget::Access(a) => a as i64,
        }
    }

    /// Decodes without range checking against a type's access count.
    pub fn decode(v: i64) -> Option<Self> {
        match v {
            -1 => Some(WaitTarget::NoWait),
            0 => Some(WaitTarget::Commit),
            k if k >= 1 && k <= u16::MAX as i64 => Some(WaitTarget::Access(k as u16)),
            _ => None,
        }
    }

    /// Position in the ordered domain `[NO_WAIT, ACCESS(1), .., ACCESS(d), COMMIT]`.
    pub fn ordinal(self, d: u16) -> u32 {
        match self {
            WaitTarget::NoWait => 0,
            WaitTarget::Access(a) => a as u32,
            WaitTarget::Commit => d as u32 + 1,
        }
    }

    pub fn from_ordinal(ord: u32, d: u16) -> Self {
        if ord == 0 {
            WaitTarget::NoWait
        } else if ord > d as u32 {
            WaitTarget::Commit
        } else {
            WaitTarget::Access(ord as u16)
        }
    }

    pub fn in_range(self, d: u16) -> bool {
        match self {
            WaitTarget::Access(a) => a >= 1 && a <= d,
            _ => true,
        }
    }
}

impl fmt::Display for WaitTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaitTarget::NoWait => f.write_str("NO_WAIT"),
            WaitTarget::Commit => f.write_str("COMMIT"),
            WaitTarget::Access(a) => write!(f, "ACCESS({a})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadVersion {
    #[serde(rename = "CLEAN")]
    CleanRead,
    #[serde(rename = "DIRTY")]
    DirtyRead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WriteVisibility {
    #[serde(rename = "PRIVATE")]
    Private,
    #[serde(rename = "PUBLIC")]
    Public,
}

/// Actions for one state. `read_version` matters only for accesses that
/// read, `write_visibility` only for accesses that write; both are always
/// stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionRow {
    pub wait_targets: Vec<WaitTarget>,
    pub read_version: ReadVersion,
    pub write_visibility: WriteVisibility,
    pub early_validate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CcPolicyTable {
    pub schema_name: String,
    pub rows: BTreeMap<(usize, u16), ActionRow>,
}

impl CcPolicyTable {
    pub fn row(&self, type_index: usize, access_id: u16) -> Option<&ActionRow> {
        self.rows.get(&(type_index, access_id))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AbortBucket {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2+")]
    TwoPlus,
}

impl AbortBucket {
    pub const ALL: [AbortBucket; 3] = [AbortBucket::Zero, AbortBucket::One, AbortBucket::TwoPlus];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for AbortBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortBucket::Zero => "0",
            AbortBucket::One => "1",
            AbortBucket::TwoPlus => "2+",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "COMMITTED")]
    Committed,
    #[serde(rename = "ABORTED")]
    Aborted,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::Committed, Outcome::Aborted];
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Committed => "COMMITTED",
            Outcome::Aborted => "ABORTED",
        })
    }
}

/// Backoff adjustment factor, kept as an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Alpha(pub Ratio<i64>);

impl Alpha {
    pub const ZERO: Alpha = Alpha(Ratio::new_raw(0, 1));

    pub fn new(numer: i64, denom: i64) -> Self {
        Alpha(Ratio::new(numer, denom))
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// Parses `"n"`, `"n/d"` or a plain decimal such as `"0.25"`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i64 = n.trim().parse().ok()?;
            let d: i64 = d.trim().parse().ok()?;
            if d == 0 {
                return None;
            }
            return Some(Alpha(Ratio::new(n, d)));
        }
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int, frac) = body.split_once('.').unwrap_or((body, ""));
        if int.is_empty() && frac.is_empty() {
            return None;
        }
        if !int.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        if frac.len() > 12 {
            return None;
        }
        let denom = 10i64.checked_pow(frac.len() as u32)?;
        let int_v: i64 = if int.is_empty() { 0 } else { int.parse().ok()? };
        let frac_v: i64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        let numer = int_v.checked_mul(denom)?.checked_add(frac_v)?;
        Some(Alpha(Ratio::new(if neg { -numer } else { numer }, denom)))
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

/// Ordered finite set of admissible α values; always contains 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlphaSet(Vec<Alpha>);

impl Default for AlphaSet {
    fn default() -> Self {
        AlphaSet(vec![
            Alpha::ZERO,
            Alpha::new(1, 4),
            Alpha::new(1, 2),
            Alpha::new(1, 1),
            Alpha::new(2, 1),
            Alpha::new(4, 1),
        ])
    }
}

impl AlphaSet {
    pub fn new(values: impl IntoIterator<Item = Alpha>) -> Result<Self, PolicyError> {
        let mut v: Vec<Alpha> = values.into_iter().collect();
        v.sort();
        v.dedup();
        if v.iter().any(Alpha::is_negative) {
            return Err(PolicyError::InvalidAlphaSet("α values must be ≥ 0".into()));
        }
        if v.first() != Some(&Alpha::ZERO) {
            return Err(PolicyError::InvalidAlphaSet("α set must contain 0".into()));
        }
        Ok(AlphaSet(v))
    }

    pub fn values(&self) -> &[Alpha] {
        &self.0
    }

    pub fn position(&self, a: Alpha) -> Option<usize> {
        self.0.binary_search(&a).ok()
    }

    pub fn contains(&self, a: Alpha) -> bool {
        self.position(a).is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackoffPolicyTable {
    pub entries: BTreeMap<(usize, AbortBucket, Outcome), Alpha>,
}

impl BackoffPolicyTable {
    /// Every entry set to `alpha`.
    pub fn uniform(schema: &WorkloadSchema, alpha: Alpha) -> Self {
        let mut entries = BTreeMap::new();
        for t in 0..schema.type_count() {
            for b in AbortBucket::ALL {
                for o in Outcome::ALL {
                    entries.insert((t, b, o), alpha);
                }
            }
        }
        Self { entries }
    }

    pub fn alpha(&self, type_index: usize, bucket: AbortBucket, outcome: Outcome) -> Alpha {
        self.entries.get(&(type_index, bucket, outcome)).copied().unwrap_or(Alpha::ZERO)
    }
}

/// Backoff seed used alongside the seed cc policies: double on abort,
/// leave unchanged on commit.
pub fn seed_backoff(schema: &WorkloadSchema) -> BackoffPolicyTable {
    let mut table = BackoffPolicyTable::uniform(schema, Alpha::ZERO);
    for ((_, _, outcome), alpha) in table.entries.iter_mut() {
        if *outcome == Outcome::Aborted {
            *alpha = Alpha::new(1, 1);
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SeedKind {
    Occ,
    TwoPlStar,
    Pipeline,
}

impl SeedKind {
    pub const ALL: [SeedKind; 3] = [SeedKind::Occ, SeedKind::TwoPlStar, SeedKind::Pipeline];

    pub fn name(self) -> &'static str {
        match self {
            SeedKind::Occ => "occ",
            SeedKind::TwoPlStar => "2pl",
            SeedKind::Pipeline => "pipeline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "occ" => Some(SeedKind::Occ),
            "2pl" | "2pl*" | "2plstar" | "two_pl_star" => Some(SeedKind::TwoPlStar),
            "pipeline" | "ic3" => Some(SeedKind::Pipeline),
            _ => None,
        }
    }
}

/// Encodes a known algorithm as a table.
///
/// `Pipeline` waits, for each type `X`, until dependents of `X` have passed
/// the same access-id (clipped to `d_X`); it approximates IC3-style piece
/// pipelining without a static conflict analysis.
pub fn seed_policy(schema: &WorkloadSchema, kind: SeedKind) -> CcPolicyTable {
    let n = schema.type_count();
    let mut rows = BTreeMap::new();
    for (t, a) in schema.states() {
        let row = match kind {
            SeedKind::Occ => ActionRow {
                wait_targets: vec![WaitTarget::NoWait; n],
                read_version: ReadVersion::CleanRead,
                write_visibility: WriteVisibility::Private,
                early_validate: false,
            },
            SeedKind::TwoPlStar => ActionRow {
                wait_targets: vec![WaitTarget::Commit; n],
                read_version: ReadVersion::CleanRead,
                write_visibility: WriteVisibility::Public,
                early_validate: true,
            },
            SeedKind::Pipeline => ActionRow {
                wait_targets: (0..n)
                    .map(|x| WaitTarget::Access(a.min(schema.access_count(x))))
                    .collect(),
                read_version: ReadVersion::DirtyRead,
                write_visibility: WriteVisibility::Public,
                early_validate: true,
            },
        };
        rows.insert((t, a), row);
    }
    CcPolicyTable { schema_name: schema.name().to_string(), rows }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("malformed policy document: {0}")]
    Malformed(String),
    #[error("unsupported policy format {found}, expected {FORMAT_VERSION}")]
    Format { found: u64 },
    #[error("policy schema `{found}` does not match workload schema `{expected}`")]
    SchemaMismatch { found: String, expected: String },
    #[error("row count {found} ≠ {expected}")]
    RowCount { found: usize, expected: usize },
    #[error("backoff entry count {found} ≠ {expected}")]
    BackoffCount { found: usize, expected: usize },
    #[error("{section} row {row}: unknown transaction type `{name}`")]
    UnknownType { section: &'static str, row: usize, name: String },
    #[error("cc row {row}: access-id {access} out of range 1..={max} for type `{txn_type}`")]
    AccessOutOfRange { row: usize, txn_type: String, access: i64, max: u16 },
    #[error("cc row {row}: wait column {column} has {len} entries, expected {expected}")]
    WaitArity { row: usize, column: &'static str, len: usize, expected: usize },
    #[error("cc row {row}: wait target {value} for type `{target_type}` out of range (d = {max})")]
    WaitOutOfRange { row: usize, target_type: String, value: i64, max: u16 },
    #[error("cc row {row}: duplicate state ({txn_type}, {access})")]
    DuplicateRow { row: usize, txn_type: String, access: u16 },
    #[error("backoff row {row}: duplicate entry ({txn_type}, {bucket}, {outcome})")]
    DuplicateBackoff { row: usize, txn_type: String, bucket: AbortBucket, outcome: Outcome },
    #[error("backoff row {row}: α `{value}` is not in the configured set")]
    AlphaNotInSet { row: usize, value: String },
    #[error("invalid α set: {0}")]
    InvalidAlphaSet(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    MissingRow { type_index: usize, access_id: u16 },
    ExtraRow { type_index: usize, access_id: u16 },
    WaitArity { type_index: usize, access_id: u16, len: usize },
    WaitOutOfRange { type_index: usize, access_id: u16, target_type: usize, target: WaitTarget },
    MissingBackoff { type_index: usize, bucket: AbortBucket, outcome: Outcome },
    ExtraBackoff { type_index: usize },
    NegativeAlpha { type_index: usize, bucket: AbortBucket, outcome: Outcome, alpha: Alpha },
    AlphaNotInSet { type_index: usize, bucket: AbortBucket, outcome: Outcome, alpha: Alpha },
    SchemaName { found: String, expected: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingRow { type_index, access_id } => {
                write!(f, "missing cc row ({type_index}, {access_id})")
            }
            Violation::ExtraRow { type_index, access_id } => {
                write!(f, "cc row ({type_index}, {access_id}) is not a state of the schema")
            }
            Violation::WaitArity { type_index, access_id, len } => {
                write!(f, "cc row ({type_index}, {access_id}) has {len} wait targets")
            }
            Violation::WaitOutOfRange { type_index, access_id, target_type, target } => write!(
                f,
                "cc row ({type_index}, {access_id}): wait target {target} out of range for type {target_type}"
            ),
            Violation::MissingBackoff { type_index, bucket, outcome } => {
                write!(f, "missing backoff entry ({type_index}, {bucket}, {outcome})")
            }
            Violation::ExtraBackoff { type_index } => {
                write!(f, "backoff entry for unknown type index {type_index}")
            }
            Violation::NegativeAlpha { type_index, bucket, outcome, alpha } => write!(
                f,
                "backoff ({type_index}, {bucket}, {outcome}): α must be ≥ 0, got {alpha}"
            ),
            Violation::AlphaNotInSet { type_index, bucket, outcome, alpha } => write!(
                f,
                "backoff ({type_index}, {bucket}, {outcome}): α {alpha} not in configured set"
            ),
            Violation::SchemaName { found, expected } => {
                write!(f, "table schema `{found}` ≠ `{expected}`")
            }
        }
    }
}

pub fn validate_table(
    schema: &WorkloadSchema,
    table: &CcPolicyTable,
    backoff: &BackoffPolicyTable,
) -> Result<(), Vec<Violation>> {
    validate_table_with(schema, table, backoff, &AlphaSet::default())
}

pub fn validate_table_with(
    schema: &WorkloadSchema,
    table: &CcPolicyTable,
    backoff: &BackoffPolicyTable,
    alphas: &AlphaSet,
) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if table.schema_name != schema.name() {
        v.push(Violation::SchemaName {
            found: table.schema_name.clone(),
            expected: schema.name().to_string(),
        });
    }
    let n = schema.type_count();
    for (t, a) in schema.states() {
        match table.rows.get(&(t, a)) {
            None => v.push(Violation::MissingRow { type_index: t, access_id: a }),
            Some(row) => {
                if row.wait_targets.len() != n {
                    v.push(Violation::WaitArity {
                        type_index: t,
                        access_id: a,
                        len: row.wait_targets.len(),
                    });
                }
                for (x, w) in row.wait_targets.iter().enumerate().take(n) {
                    if !w.in_range(schema.access_count(x)) {
                        v.push(Violation::WaitOutOfRange {
                            type_index: t,
                            access_id: a,
                            target_type: x,
                            target: *w,
                        });
                    }
                }
            }
        }
    }
    for &(t, a) in table.rows.keys() {
        if t >= n || a == 0 || a > schema.access_count(t) {
            v.push(Violation::ExtraRow { type_index: t, access_id: a });
        }
    }
    for t in 0..n {
        for b in AbortBucket::ALL {
            for o in Outcome::ALL {
                match backoff.entries.get(&(t, b, o)) {
                    None => v.push(Violation::MissingBackoff { type_index: t, bucket: b, outcome: o }),
                    Some(alpha) if alpha.is_negative() => v.push(Violation::NegativeAlpha {
                        type_index: t,
                        bucket: b,
                        outcome: o,
                        alpha: *alpha,
                    }),
                    Some(alpha) if !alphas.contains(*alpha) => v.push(Violation::AlphaNotInSet {
                        type_index: t,
                        bucket: b,
                        outcome: o,
                        alpha: *alpha,
                    }),
                    Some(_) => {}
                }
            }
        }
    }
    for &(t, _, _) in backoff.entries.keys() {
        if t >= n {
            v.push(Violation::ExtraBackoff { type_index: t });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PolicyDoc {
    format: u64,
    schema: String,
    cc_rows: Vec<CcRowDoc>,
    backoff: Vec<BackoffRowDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CcRowDoc {
    #[serde(rename = "type")]
    txn_type: String,
    access: i64,
    wait: Vec<i64>,
    read: ReadVersion,
    write: WriteVisibility,
    early_validate: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct BackoffRowDoc {
    #[serde(rename = "type")]
    txn_type: String,
    aborts: AbortBucket,
    outcome: Outcome,
    alpha: String,
}

/// Serializes both tables as one JSON document. Rows are emitted in state
/// order and backoff entries in `(type, bucket, outcome)` order, so equal
/// tables always produce identical bytes.
pub fn serialize_policy(
    schema: &WorkloadSchema,
    table: &CcPolicyTable,
    backoff: &BackoffPolicyTable,
) -> Vec<u8> {
    let type_name = |t: usize| {
        schema
            .txn_types()
            .get(t)
            .map(|s| s.name.clone())
            .unwrap_or_else(|| format!("#{t}"))
    };
    let cc_rows = table
        .rows
        .iter()
        .map(|(&(t, a), row)| CcRowDoc {
            txn_type: type_name(t),
            access: a as i64,
            wait: row.wait_targets.iter().map(|w| w.encode()).collect(),
            read: row.read_version,
            write: row.write_visibility,
            early_validate: row.early_validate,
        })
        .collect();
    let backoff = backoff
        .entries
        .iter()
        .map(|(&(t, b, o), alpha)| BackoffRowDoc {
            txn_type: type_name(t),
            aborts: b,
            outcome: o,
            alpha: alpha.to_string(),
        })
        .collect();
    let doc = PolicyDoc {
        format: FORMAT_VERSION as u64,
        schema: table.schema_name.clone(),
        cc_rows,
        backoff,
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("policy document serializes");
    out.push(b'\n');
    out
}

pub fn parse_policy(
    bytes: &[u8],
    schema: &WorkloadSchema,
) -> Result<(CcPolicyTable, BackoffPolicyTable), PolicyError> {
    parse_policy_with(bytes, schema, &AlphaSet::default())
}

/// Reads only the `schema` field, for reporting mismatches.
pub fn peek_schema_name(bytes: &[u8]) -> Option<String> {
    let v: serde_json::Value = serde_json::from_slice(bytes).ok()?;
    v.get("schema")?.as_str().map(str::to_string)
}

pub fn parse_policy_with(
    bytes: &[u8],
    schema: &WorkloadSchema,
    alphas: &AlphaSet,
) -> Result<(CcPolicyTable, BackoffPolicyTable), PolicyError> {
    let raw: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| PolicyError::Malformed(e.to_string()))?;
    match raw.get("format").and_then(serde_json::Value::as_u64) {
        Some(f) if f == FORMAT_VERSION as u64 => {}
        Some(f) => return Err(PolicyError::Format { found: f }),
        None => return Err(PolicyError::Malformed("missing `format` field".into())),
    }
    let doc: PolicyDoc =
        serde_json::from_value(raw).map_err(|e| PolicyError::Malformed(e.to_string()))?;
    if doc.schema != schema.name() {
        return Err(PolicyError::SchemaMismatch {
            found: doc.schema,
            expected: schema.name().to_string(),
        });
    }
    let expected_rows = state_count(schema);
    if doc.cc_rows.len() != expected_rows {
        return Err(PolicyError::RowCount { found: doc.cc_rows.len(), expected: expected_rows });
    }
    let n = schema.type_count();
    let mut rows = BTreeMap::new();
    for (i, r) in doc.cc_rows.into_iter().enumerate() {
        let t = schema.type_index(&r.txn_type).ok_or_else(|| PolicyError::UnknownType {
            section: "cc",
            row: i,
            name: r.txn_type.clone(),
        })?;
        let d = schema.access_count(t);
        if r.access < 1 || r.access > d as i64 {
            return Err(PolicyError::AccessOutOfRange {
                row: i,
                txn_type: r.txn_type,
                access: r.access,
                max: d,
            });
        }
        if r.wait.len() != n {
            return Err(PolicyError::WaitArity {
                row: i,
                column: "wait",
                len: r.wait.len(),
                expected: n,
            });
        }
        let mut waits = Vec::with_capacity(n);
        for (x, &w) in r.wait.iter().enumerate() {
            let dx = schema.access_count(x);
            match WaitTarget::decode(w) {
                Some(target) if target.in_range(dx) => waits.push(target),
                _ => {
                    return Err(PolicyError::WaitOutOfRange {
                        row: i,
                        target_type: schema.txn_types()[x].name.clone(),
                        value: w,
                        max: dx,
                    })
                }
            }
        }
        let access = r.access as u16;
        let row = ActionRow {
            wait_targets: waits,
            read_version: r.read,
            write_visibility: r.write,
            early_validate: r.early_validate,
        };
        if rows.insert((t, access), row).is_some() {
            return Err(PolicyError::DuplicateRow { row: i, txn_type: r.txn_type, access });
        }
    }
    let expected_backoff = n * AbortBucket::ALL.len() * Outcome::ALL.len();
    if doc.backoff.len() != expected_backoff {
        return Err(PolicyError::BackoffCount {
            found: doc.backoff.len(),
            expected: expected_backoff,
        });
    }
    let mut entries = BTreeMap::new();
    for (i, b) in doc.backoff.into_iter().enumerate() {
        let t = schema.type_index(&b.txn_type).ok_or_else(|| PolicyError::UnknownType {
            section: "backoff",
            row: i,
            name: b.txn_type.clone(),
        })?;
        let alpha = Alpha::parse(&b.alpha)
            .filter(|a| alphas.contains(*a))
            .ok_or_else(|| PolicyError::AlphaNotInSet { row: i, value: b.alpha.clone() })?;
        if entries.insert((t, b.aborts, b.outcome), alpha).is_some() {
            return Err(PolicyError::DuplicateBackoff {
                row: i,
                txn_type: b.txn_type,
                bucket: b.aborts,
                outcome: b.outcome,
            });
        }
    }
    Ok((
        CcPolicyTable { schema_name: schema.name().to_string(), rows },
        BackoffPolicyTable { entries },
    ))
}

/// Stable content hash of a policy pair, hex encoded.
pub fn policy_hash(
    schema: &WorkloadSchema,
    table: &CcPolicyTable,
    backoff: &BackoffPolicyTable,
) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(serialize_policy(schema, table, backoff));
    hex::encode(&digest[..8])
}

/// Multiplicative factor `1 + α`.
pub fn one_plus(alpha: Alpha) -> Ratio<i64> {
    Ratio::one() + alpha.0
}

impl Alpha {
    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}
