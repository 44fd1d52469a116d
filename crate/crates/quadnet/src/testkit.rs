//! Test-only oracles: independent exhaustive scans, finite differences,
//! and instance generators.
//!
//! Everything here recomputes its answer from first principles (own
//! distance loops, full enumeration) so the test suites can compare the
//! production paths against an implementation they do not share code
//! with. Enabled by the `testkit` feature; not part of the regular API.

use crate::core::{EmbeddingSet, HyperParams};
use crate::encoder::{forward_traced, EncoderArch, EncoderParams, TrainingQuadruplet};
use crate::losses::QuadrupletDistances;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

/// Central finite-difference gradient of `f` at `point`.
pub fn fd_gradient<F>(mut f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        work[i] = point[i] + step;
        let plus = f(&work);
        work[i] = point[i] - step;
        let minus = f(&work);
        work[i] = point[i];
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}

/// Relative error with an absolute floor.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn odist(s: &EmbeddingSet, i: usize, j: usize) -> f64 {
    s.row(i)
        .iter()
        .zip(s.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Exhaustive hardest-negative scan; `None` when no row has a different
/// coarse class. Ties resolve to the smallest index by scan order.
pub fn oracle_hardest_negative(r: usize, s: &EmbeddingSet) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for j in 0..s.len() {
        if s.coarse(j) == s.coarse(r) {
            continue;
        }
        let d = odist(s, r, j);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

fn oracle_pools(r: usize, s: &EmbeddingSet) -> (Vec<usize>, Vec<usize>) {
    let pp: Vec<usize> = (0..s.len())
        .filter(|&j| j != r && s.fine(j) == s.fine(r))
        .collect();
    let pm: Vec<usize> = (0..s.len())
        .filter(|&j| s.coarse(j) == s.coarse(r) && s.fine(j) != s.fine(r))
        .collect();
    (pp, pm)
}

fn oracle_pick(
    r: usize,
    n: usize,
    pool: &[usize],
    s: &EmbeddingSet,
    key_outside: impl Fn(usize) -> f64,
) -> usize {
    let radius = odist(s, r, n);
    let outside: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&j| odist(s, r, j) > radius)
        .collect();
    if outside.is_empty() {
        let mut best = pool[0];
        let mut best_d = odist(s, r, pool[0]);
        for &j in &pool[1..] {
            let d = odist(s, r, j);
            if d > best_d {
                best = j;
                best_d = d;
            }
        }
        best
    } else {
        let mut best = outside[0];
        let mut best_k = key_outside(outside[0]);
        for &j in &outside[1..] {
            let k = key_outside(j);
            if k < best_k {
                best = j;
                best_k = k;
            }
        }
        best
    }
}

/// Exhaustive method-1 scan; `None` when either pool is empty.
pub fn oracle_positives_method1(
    r: usize,
    n: usize,
    s: &EmbeddingSet,
) -> Option<(usize, usize)> {
    let (pp_pool, pm_pool) = oracle_pools(r, s);
    if pp_pool.is_empty() || pm_pool.is_empty() {
        return None;
    }
    Some((
        oracle_pick(r, n, &pp_pool, s, |j| odist(s, n, j)),
        oracle_pick(r, n, &pm_pool, s, |j| odist(s, n, j)),
    ))
}

/// Exhaustive method-2 scan; `None` when either pool is empty.
pub fn oracle_positives_method2(
    r: usize,
    n: usize,
    s: &EmbeddingSet,
) -> Option<(usize, usize)> {
    let (pp_pool, pm_pool) = oracle_pools(r, s);
    if pp_pool.is_empty() || pm_pool.is_empty() {
        return None;
    }
    Some((
        oracle_pick(r, n, &pp_pool, s, |j| odist(s, r, j)),
        oracle_pick(r, n, &pm_pool, s, |j| odist(s, r, j)),
    ))
}

/// Brute-force Recall@K: full neighbor scan with `(distance, index)`
/// ordering and self exclusion.
pub fn oracle_recall_at_k(s: &EmbeddingSet, k: usize) -> f64 {
    let n = s.len();
    let mut hits = 0usize;
    for q in 0..n {
        let mut neighbors: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != q)
            .map(|j| (odist(s, q, j), j))
            .collect();
        neighbors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        if neighbors
            .iter()
            .take(k)
            .any(|&(_, j)| s.fine(j) == s.fine(q))
        {
            hits += 1;
        }
    }
    hits as f64 / n as f64
}

/// Relabels an assignment by order of first appearance, so structurally
/// equal partitions compare equal.
pub fn canonical_partition(assign: &[usize]) -> Vec<usize> {
    let mut mapping: Vec<usize> = Vec::new();
    assign
        .iter()
        .map(|&a| {
            if let Some(pos) = mapping.iter().position(|&m| m == a) {
                pos
            } else {
                mapping.push(a);
                mapping.len() - 1
            }
        })
        .collect()
}

fn partition_inertia(s: &EmbeddingSet, assign: &[usize], k: usize) -> f64 {
    let dim = s.dim();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (d, v) in s.row(i).iter().enumerate() {
            sums[a][d] += v;
        }
    }
    let mut inertia = 0.0;
    for (i, &a) in assign.iter().enumerate() {
        if counts[a] == 0 {
            continue;
        }
        for (d, v) in s.row(i).iter().enumerate() {
            let c = sums[a][d] / counts[a] as f64;
            inertia += (v - c) * (v - c);
        }
    }
    inertia
}

/// Enumerates every assignment of `N <= 12` rows to `k` clusters and
/// returns the canonicalized minimum-inertia partition with its inertia.
pub fn oracle_min_inertia_partition(s: &EmbeddingSet, k: usize) -> (f64, Vec<usize>) {
    let n = s.len();
    assert!(n <= 12, "exhaustive partition search is exponential in N");
    let total = k.pow(n as u32);
    let mut best_inertia = f64::INFINITY;
    let mut best: Vec<usize> = vec![0; n];
    let mut assign = vec![0usize; n];
    for code in 0..total {
        let mut c = code;
        for slot in assign.iter_mut() {
            *slot = c % k;
            c /= k;
        }
        let inertia = partition_inertia(s, &assign, k);
        if inertia < best_inertia {
            best_inertia = inertia;
            best = assign.clone();
        }
    }
    (best_inertia, canonical_partition(&best))
}

/// Random embedding set with a `coarse = fine / fines_per_coarse`
/// hierarchy and Gaussian rows; labels drawn uniformly.
pub fn random_embedding_set(
    seed: u64,
    n_rows: usize,
    dim: usize,
    k1: usize,
    fines_per_coarse: usize,
) -> EmbeddingSet {
    let mut rng = StdRng::seed_from_u64(seed);
    let k2 = k1 * fines_per_coarse;
    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        rows.push(
            (0..dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        let fine = rng.random_range(0..k2);
        labels.push((fine / fines_per_coarse, fine));
    }
    EmbeddingSet::from_rows(rows, labels, (0..n_rows).collect()).expect("rows are valid")
}

/// A self-contained gradient-check instance: a small encoder, a batch of
/// quadruplet inputs, and hyperparameters.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub params: EncoderParams,
    pub quads: Vec<OwnedQuadruplet>,
    pub hyper: HyperParams,
}

/// Owned quadruplet inputs (the borrowed view is
/// [`TrainingQuadruplet`]).
#[derive(Debug, Clone)]
pub struct OwnedQuadruplet {
    pub r: Vec<f64>,
    pub pp: Vec<f64>,
    pub pm: Vec<f64>,
    pub n: Vec<f64>,
    pub coarse: usize,
    pub fine: usize,
}

impl GradInstance {
    pub fn batch(&self) -> Vec<TrainingQuadruplet<'_>> {
        self.quads
            .iter()
            .map(|q| TrainingQuadruplet {
                r: &q.r,
                pp: &q.pp,
                pm: &q.pm,
                n: &q.n,
                coarse: q.coarse,
                fine: q.fine,
            })
            .collect()
    }
}

/// Margin that every hinge argument, trunk preactivation, and pairwise
/// distance must clear for finite differences to be trustworthy.
const KINK_MARGIN: f64 = 1e-3;
const MIN_DISTANCE: f64 = 1e-2;

/// Draws a random gradient-check instance, rejecting any draw that sits
/// near a hinge kink, an activation kink, or a coincident pair, where
/// central differences would disagree with one-sided subgradients.
/// Returns `None` for rejected seeds; callers scan seeds until one
/// sticks.
pub fn random_grad_instance(
    seed: u64,
    input_dim: usize,
    hidden: Vec<usize>,
    embed_dim: usize,
    coarse_classes: usize,
    fine_classes: usize,
    n_quads: usize,
) -> Option<GradInstance> {
    let mut rng = StdRng::seed_from_u64(seed);
    let arch = EncoderArch {
        input_dim,
        hidden,
        embed_dim,
        coarse_classes,
        fine_classes,
    };
    let params = EncoderParams::init(&arch, rng.random()).ok()?;
    let hyper = HyperParams::default();
    let gauss = |rng: &mut StdRng| -> Vec<f64> {
        (0..input_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut quads = Vec::with_capacity(n_quads);
    for _ in 0..n_quads {
        quads.push(OwnedQuadruplet {
            r: gauss(&mut rng),
            pp: gauss(&mut rng),
            pm: gauss(&mut rng),
            n: gauss(&mut rng),
            coarse: rng.random_range(0..coarse_classes),
            fine: rng.random_range(0..fine_classes),
        });
    }
    let instance = GradInstance {
        params,
        quads,
        hyper,
    };
    instance_is_kink_free(&instance).then_some(instance)
}

fn instance_is_kink_free(inst: &GradInstance) -> bool {
    let h = &inst.hyper;
    let mut dists = Vec::with_capacity(inst.quads.len());
    for quad in &inst.quads {
        let mut embeddings = Vec::with_capacity(4);
        for member in [&quad.r, &quad.pp, &quad.pm, &quad.n] {
            let trace = match forward_traced(&inst.params, member) {
                Ok(t) => t,
                Err(_) => return false,
            };
            if !trace.preactivations_clear(KINK_MARGIN) {
                return false;
            }
            embeddings.push(trace.output.embedding);
        }
        let d = QuadrupletDistances::from_embeddings(
            &embeddings[0],
            &embeddings[1],
            &embeddings[2],
            &embeddings[3],
        )
        .expect("dimensions match");
        if d.d_rpp < MIN_DISTANCE || d.d_rpm < MIN_DISTANCE || d.d_rn < MIN_DISTANCE {
            return false;
        }
        let h1 = 1.0 - d.d_rpm / (d.d_rpp + h.m1 - h.m2);
        let h2 = 1.0 - d.d_rn / (d.d_rpm + h.m2);
        if h1.abs() < KINK_MARGIN || h2.abs() < KINK_MARGIN {
            return false;
        }
        dists.push(d);
    }
    let b = dists.len() as f64;
    let mean = |f: fn(&QuadrupletDistances) -> f64| dists.iter().map(f).sum::<f64>() / b;
    let g1 = mean(|d| d.d_rpp) - mean(|d| d.d_rpm) + h.t1 - h.t2;
    let g2 = mean(|d| d.d_rpm) - mean(|d| d.d_rn) + h.t2;
    g1.abs() >= KINK_MARGIN && g2.abs() >= KINK_MARGIN
}
