//! Quadruplet construction over an embedding snapshot.
//!
//! The negative is always the globally closest sample from a different
//! coarse class. The two positives (same fine class, and same coarse but
//! different fine class) are then picked by one of three strategies:
//!
//! - `random`: uniform draws from the constraint pools;
//! - `method1`: among candidates farther from the reference than the
//!   negative, the one closest to the negative;
//! - `method2`: among candidates strictly outside the sphere of radius
//!   `D(R,N)` around the reference, the one closest to the reference,
//!   falling back to the in-sphere candidate farthest from the reference.
//!
//! "Outside" is strict (`distance > D(R,N)`); a candidate exactly on the
//! sphere counts as inside. Method 1 uses the same farthest-from-reference
//! fallback when no candidate clears the radius. All ties break towards
//! the smallest row index, so every selection is deterministic and
//! checkable against an exhaustive scan.

use crate::core::{l2_distance, EmbeddingSet, QuadrupletIdx};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng;
use std::fmt;
use std::str::FromStr;

/// Which positive-selection rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionKind {
    Random,
    Method1,
    Method2,
}

impl fmt::Display for SelectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Random => write!(f, "random"),
            Self::Method1 => write!(f, "method1"),
            Self::Method2 => write!(f, "method2"),
        }
    }
}

impl FromStr for SelectionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "method1" => Ok(Self::Method1),
            "method2" => Ok(Self::Method2),
            other => Err(Error::Config(format!(
                "unknown mining strategy {other:?}; expected random, method1 or method2"
            ))),
        }
    }
}

/// A selection rule plus the seed of the stream of random choices it
/// consumes (reference draws, and pool draws for the random baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningStrategy {
    pub kind: SelectionKind,
    pub rng_seed: u64,
}

impl MiningStrategy {
    pub fn new(kind: SelectionKind, rng_seed: u64) -> Self {
        Self { kind, rng_seed }
    }
}

/// A batch of mined quadruplets tied to the snapshot it was mined from
/// by the snapshot's content fingerprint.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupletBatch {
    pub quads: Vec<QuadrupletIdx>,
    pub source: u64,
}

fn dist(s: &EmbeddingSet, i: usize, j: usize) -> f64 {
    l2_distance(s.row(i), s.row(j)).expect("rows share a dimension")
}

/// Globally closest sample to row `r` among all rows of a different
/// coarse class; ties break to the smallest index.
pub fn select_hardest_negative(r: usize, s: &EmbeddingSet) -> Result<usize> {
    let coarse_r = s.coarse(r);
    let mut best: Option<(usize, f64)> = None;
    for j in 0..s.len() {
        if s.coarse(j) == coarse_r {
            continue;
        }
        let d = dist(s, r, j);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j).ok_or_else(|| {
        Error::Degenerate(format!(
            "no negative candidate: coarse class {coarse_r} is the only one present"
        ))
    })
}

/// All rows sharing the reference's fine class, excluding the reference.
fn same_fine_pool(r: usize, s: &EmbeddingSet) -> Vec<usize> {
    (0..s.len())
        .filter(|&j| j != r && s.fine(j) == s.fine(r))
        .collect()
}

/// All rows sharing the reference's coarse class but not its fine class.
fn same_coarse_other_fine_pool(r: usize, s: &EmbeddingSet) -> Vec<usize> {
    (0..s.len())
        .filter(|&j| s.coarse(j) == s.coarse(r) && s.fine(j) != s.fine(r))
        .collect()
}

fn empty_pp_pool(r: usize, s: &EmbeddingSet) -> Error {
    Error::Degenerate(format!(
        "fine class {} has no second sample to serve as P+",
        s.fine(r)
    ))
}

fn empty_pm_pool(r: usize, s: &EmbeddingSet) -> Error {
    Error::Degenerate(format!(
        "coarse class {} has no sample outside fine class {} to serve as P-",
        s.coarse(r),
        s.fine(r)
    ))
}

/// Argmin of `key` over `pool`, ties to the smallest index. `pool` must be
/// in ascending index order, which the pool builders guarantee.
fn argmin_by_key(pool: &[usize], mut key: impl FnMut(usize) -> f64) -> usize {
    let mut best = pool[0];
    let mut best_key = key(pool[0]);
    for &j in &pool[1..] {
        let k = key(j);
        if k < best_key {
            best = j;
            best_key = k;
        }
    }
    best
}

fn argmax_by_key(pool: &[usize], mut key: impl FnMut(usize) -> f64) -> usize {
    let mut best = pool[0];
    let mut best_key = key(pool[0]);
    for &j in &pool[1..] {
        let k = key(j);
        if k > best_key {
            best = j;
            best_key = k;
        }
    }
    best
}

/// Selects one positive from `pool` by the method-1 rule: among candidates
/// with `D(R, j) > D(R, N)`, the one closest to the negative; if no
/// candidate clears the radius, the pool member farthest from the
/// reference.
fn method1_pick(r: usize, n: usize, pool: &[usize], s: &EmbeddingSet) -> usize {
    let d_rn = dist(s, r, n);
    let beyond: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&j| dist(s, r, j) > d_rn)
        .collect();
    if beyond.is_empty() {
        argmax_by_key(pool, |j| dist(s, r, j))
    } else {
        argmin_by_key(&beyond, |j| dist(s, n, j))
    }
}

/// Selects one positive from `pool` by the method-2 rule: the candidate
/// closest to the reference among those strictly outside the sphere of
/// radius `D(R, N)`, else the in-sphere candidate farthest from the
/// reference.
fn method2_pick(r: usize, n: usize, pool: &[usize], s: &EmbeddingSet) -> usize {
    let d_rn = dist(s, r, n);
    let beyond: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&j| dist(s, r, j) > d_rn)
        .collect();
    if beyond.is_empty() {
        argmax_by_key(pool, |j| dist(s, r, j))
    } else {
        argmin_by_key(&beyond, |j| dist(s, r, j))
    }
}

/// Method-1 positives for reference `r` and negative `n`.
pub fn select_positives_method1(r: usize, n: usize, s: &EmbeddingSet) -> Result<(usize, usize)> {
    let pp_pool = same_fine_pool(r, s);
    if pp_pool.is_empty() {
        return Err(empty_pp_pool(r, s));
    }
    let pm_pool = same_coarse_other_fine_pool(r, s);
    if pm_pool.is_empty() {
        return Err(empty_pm_pool(r, s));
    }
    Ok((
        method1_pick(r, n, &pp_pool, s),
        method1_pick(r, n, &pm_pool, s),
    ))
}

/// Method-2 positives for reference `r` and negative `n`.
pub fn select_positives_method2(r: usize, n: usize, s: &EmbeddingSet) -> Result<(usize, usize)> {
    let pp_pool = same_fine_pool(r, s);
    if pp_pool.is_empty() {
        return Err(empty_pp_pool(r, s));
    }
    let pm_pool = same_coarse_other_fine_pool(r, s);
    if pm_pool.is_empty() {
        return Err(empty_pm_pool(r, s));
    }
    Ok((
        method2_pick(r, n, &pp_pool, s),
        method2_pick(r, n, &pm_pool, s),
    ))
}

/// Baseline: `pp`, `pm` and `n` drawn uniformly from their constraint
/// pools, in that order.
pub fn select_random_quadruplet<R: Rng>(
    r: usize,
    s: &EmbeddingSet,
    rng: &mut R,
) -> Result<QuadrupletIdx> {
    let pp_pool = same_fine_pool(r, s);
    if pp_pool.is_empty() {
        return Err(empty_pp_pool(r, s));
    }
    let pm_pool = same_coarse_other_fine_pool(r, s);
    if pm_pool.is_empty() {
        return Err(empty_pm_pool(r, s));
    }
    let n_pool: Vec<usize> = (0..s.len())
        .filter(|&j| s.coarse(j) != s.coarse(r))
        .collect();
    if n_pool.is_empty() {
        return Err(Error::Degenerate(format!(
            "no negative candidate: coarse class {} is the only one present",
            s.coarse(r)
        )));
    }
    let pp = pp_pool[rng.random_range(0..pp_pool.len())];
    let pm = pm_pool[rng.random_range(0..pm_pool.len())];
    let n = n_pool[rng.random_range(0..n_pool.len())];
    Ok(QuadrupletIdx { r, pp, pm, n })
}

/// Mines one quadruplet for a fixed reference with the given strategy.
pub fn mine_for_reference<R: Rng>(
    r: usize,
    s: &EmbeddingSet,
    kind: SelectionKind,
    rng: &mut R,
) -> Result<QuadrupletIdx> {
    match kind {
        SelectionKind::Random => select_random_quadruplet(r, s, rng),
        SelectionKind::Method1 => {
            let n = select_hardest_negative(r, s)?;
            let (pp, pm) = select_positives_method1(r, n, s)?;
            Ok(QuadrupletIdx { r, pp, pm, n })
        }
        SelectionKind::Method2 => {
            let n = select_hardest_negative(r, s)?;
            let (pp, pm) = select_positives_method2(r, n, s)?;
            Ok(QuadrupletIdx { r, pp, pm, n })
        }
    }
}

/// Builds a batch of `batch_size` quadruplets.
///
/// References are drawn uniformly without replacement when
/// `batch_size <= N` (a shuffled pass over the snapshot) and with
/// replacement otherwise. References whose pools are degenerate are
/// skipped and another reference is drawn; after `10 * batch_size` failed
/// draws the dataset is declared degenerate with the last failure as the
/// cause.
pub fn build_quadruplet_batch<R: Rng>(
    s: &EmbeddingSet,
    batch_size: usize,
    strategy: &MiningStrategy,
    rng: &mut R,
) -> Result<QuadrupletBatch> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let n_rows = s.len();
    let retry_budget = 10 * batch_size;
    let mut retries = 0usize;
    let mut quads = Vec::with_capacity(batch_size);

    let exhausted = |cause: &Error| {
        Error::Degenerate(format!(
            "gave up after {retry_budget} failed reference draws; last failure: {cause}"
        ))
    };

    if batch_size <= n_rows {
        let mut order: Vec<usize> = (0..n_rows).collect();
        order.shuffle(rng);
        let mut last_failure: Option<Error> = None;
        for &r in &order {
            if quads.len() == batch_size {
                break;
            }
            match mine_for_reference(r, s, strategy.kind, rng) {
                Ok(q) => quads.push(q),
                Err(e) => {
                    retries += 1;
                    if retries > retry_budget {
                        return Err(exhausted(&e));
                    }
                    last_failure = Some(e);
                }
            }
        }
        if quads.len() < batch_size {
            let cause = last_failure
                .unwrap_or_else(|| Error::Degenerate("no mineable reference".into()));
            return Err(Error::Degenerate(format!(
                "only {} of {batch_size} references are mineable; last failure: {cause}",
                quads.len()
            )));
        }
    } else {
        while quads.len() < batch_size {
            let r = rng.random_range(0..n_rows);
            match mine_for_reference(r, s, strategy.kind, rng) {
                Ok(q) => quads.push(q),
                Err(e) => {
                    retries += 1;
                    if retries > retry_budget {
                        return Err(exhausted(&e));
                    }
                }
            }
        }
    }

    debug_assert!(quads.iter().all(|q| q.validate(s).is_ok()));
    Ok(QuadrupletBatch {
        quads,
        source: s.fingerprint(),
    })
}

/// Header naming the columns of the audit dump, one `#` comment line.
pub const DUMP_HEADER: &str =
    "# r_id pp_id pm_id n_id d_r_pp d_r_pm d_r_n d_n_pp d_n_pm";

/// One audit record: the four member sample ids followed by the five
/// pairwise distances consumed by the losses and the selection rules, in
/// the fixed column order of [`DUMP_HEADER`].
pub fn quadruplet_record(q: &QuadrupletIdx, s: &EmbeddingSet) -> String {
    format!(
        "{} {} {} {} {} {} {} {} {}",
        s.id(q.r),
        s.id(q.pp),
        s.id(q.pm),
        s.id(q.n),
        dist(s, q.r, q.pp),
        dist(s, q.r, q.pm),
        dist(s, q.r, q.n),
        dist(s, q.n, q.pp),
        dist(s, q.n, q.pm),
    )
}
