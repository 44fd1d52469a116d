//! Zero-shot retrieval and clustering metrics over an embedding set.
//!
//! Recall@K asks, for every sample as a query, whether any of its K
//! nearest neighbors (self excluded, ties to the smaller index) shares
//! the query's fine class. NMI compares a seeded k-means clustering of
//! the embeddings against the fine labels, normalized by the geometric
//! mean of the two entropies.

use crate::core::{l2_distance, pairwise_distances, EmbeddingSet};
use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Retrieval and clustering quality of one embedding set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(K, Recall@K)` pairs in ascending K order.
    pub recall_at: Vec<(usize, f64)>,
    pub nmi: f64,
    pub n_queries: usize,
}

impl EvalReport {
    /// CSV header matching [`EvalReport::csv_row`], e.g.
    /// `method,R@1,R@2,R@4,R@8,NMI`.
    pub fn csv_header(&self) -> String {
        let ks: Vec<String> = self
            .recall_at
            .iter()
            .map(|(k, _)| format!("R@{k}"))
            .collect();
        format!("method,{},NMI", ks.join(","))
    }

    /// One CSV row labeled with `method`.
    pub fn csv_row(&self, method: &str) -> String {
        let values: Vec<String> = self
            .recall_at
            .iter()
            .map(|(_, v)| format!("{v:.6}"))
            .collect();
        format!("{method},{},{:.6}", values.join(","), self.nmi)
    }
}

/// Fraction of queries whose K nearest neighbors contain a sample of the
/// query's fine class. Needs at least two rows and `k >= 1`.
pub fn recall_at_k(s: &EmbeddingSet, k: usize) -> Result<f64> {
    if s.len() < 2 {
        return Err(Error::Validation(format!(
            "recall needs at least 2 rows, got {}",
            s.len()
        )));
    }
    if k < 1 {
        return Err(Error::Config("recall K must be >= 1".into()));
    }
    let n = s.len();
    let dists = pairwise_distances(s);
    let mut hits = 0usize;
    for query in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != query).collect();
        order.sort_by(|&a, &b| {
            dists
                .get(query, a)
                .partial_cmp(&dists.get(query, b))
                .expect("distances are finite")
                .then(a.cmp(&b))
        });
        let hit = order
            .iter()
            .take(k)
            .any(|&j| s.fine(j) == s.fine(query));
        if hit {
            hits += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Greedy k-means++ initial centers: each step samples a few candidates
/// by squared-distance weight and keeps the one that minimizes the
/// resulting potential.
fn kmeanspp_init(s: &EmbeddingSet, k: usize, rng: &mut StdRng) -> Vec<Vec<f64>> {
    let n = s.len();
    let local_trials = 2 + (k as f64).ln().floor() as usize;
    let first = rng.random_range(0..n);
    let mut chosen = vec![first];
    // d2[i] tracks the squared distance of point i to its nearest center
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist(s.row(i), s.row(first)))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut best: Option<(usize, f64)> = None;
            for _ in 0..local_trials {
                let target = rng.random::<f64>() * total;
                let mut cum = 0.0;
                let mut pick = None;
                for (i, &w) in d2.iter().enumerate() {
                    cum += w;
                    if cum > target && w > 0.0 {
                        pick = Some(i);
                        break;
                    }
                }
                // floating point edge: fall back to the last positive weight
                let candidate = pick.unwrap_or_else(|| {
                    d2.iter()
                        .rposition(|&w| w > 0.0)
                        .expect("total > 0 implies a positive weight")
                });
                let potential: f64 = (0..n)
                    .map(|i| d2[i].min(sq_dist(s.row(i), s.row(candidate))))
                    .sum();
                if best.map_or(true, |(_, bp)| potential < bp) {
                    best = Some((candidate, potential));
                }
            }
            best.expect("at least one trial ran").0
        } else {
            // every point coincides with a center; take the smallest
            // index not yet chosen, or 0 if all are chosen
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(s.row(i), s.row(next)));
        }
    }
    chosen.iter().map(|&i| s.row(i).to_vec()).collect()
}

fn assign_step(s: &EmbeddingSet, centers: &[Vec<f64>]) -> Vec<usize> {
    (0..s.len())
        .map(|i| {
            let mut best = 0usize;
            let mut best_d = sq_dist(s.row(i), &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(s.row(i), center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Re-seeds empty clusters with the point farthest from its current
/// center, provided moving it strictly reduces its distance and does not
/// empty its donor cluster. Clusters of coincident points stay empty.
fn fix_empty_clusters(
    s: &EmbeddingSet,
    assign: &mut [usize],
    centers: &[Vec<f64>],
    k: usize,
) {
    let mut counts = vec![0usize; k];
    for &a in assign.iter() {
        counts[a] += 1;
    }
    for empty in 0..k {
        if counts[empty] > 0 {
            continue;
        }
        let mut candidate: Option<(usize, f64)> = None;
        for i in 0..s.len() {
            let owner = assign[i];
            if counts[owner] < 2 {
                continue;
            }
            let d = sq_dist(s.row(i), &centers[owner]);
            if d > 0.0 && candidate.map_or(true, |(_, bd)| d > bd) {
                candidate = Some((i, d));
            }
        }
        if let Some((i, _)) = candidate {
            counts[assign[i]] -= 1;
            assign[i] = empty;
            counts[empty] += 1;
        }
    }
}

fn update_centers(s: &EmbeddingSet, assign: &[usize], centers: &mut [Vec<f64>], k: usize) {
    let dim = s.dim();
    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0f64; dim]; k];
    for (i, &a) in assign.iter().enumerate() {
        counts[a] += 1;
        for (d, v) in s.row(i).iter().enumerate() {
            sums[a][d] += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for d in 0..dim {
                centers[c][d] = sums[c][d] / counts[c] as f64;
            }
        }
        // empty clusters keep their previous center
    }
}

/// Inertia of an assignment: summed squared distance of every point to
/// the mean of its cluster.
fn assignment_inertia(s: &EmbeddingSet, assign: &[usize], k: usize) -> f64 {
    let mut centers = vec![vec![0.0f64; s.dim()]; k];
    update_centers(s, assign, &mut centers, k);
    assign
        .iter()
        .enumerate()
        .map(|(i, &a)| sq_dist(s.row(i), &centers[a]))
        .sum()
}

/// Exact minimum-inertia partition for tiny inputs, enumerating set
/// partitions with at most `k` blocks as restricted growth strings.
/// Labels come out in first-occurrence order.
fn exact_min_inertia(s: &EmbeddingSet, k: usize) -> Vec<usize> {
    let n = s.len();
    let mut assign = vec![0usize; n];
    let mut best_inertia = f64::INFINITY;
    let mut best = assign.clone();
    // depth-first over positions; blocks[i] may be any used block or the
    // next fresh one, capped at k blocks
    fn descend(
        s: &EmbeddingSet,
        k: usize,
        assign: &mut Vec<usize>,
        i: usize,
        used: usize,
        best_inertia: &mut f64,
        best: &mut Vec<usize>,
    ) {
        if i == assign.len() {
            let inertia = assignment_inertia(s, assign, used);
            if inertia < *best_inertia {
                *best_inertia = inertia;
                best.clone_from(assign);
            }
            return;
        }
        let limit = (used + 1).min(k);
        for block in 0..limit {
            assign[i] = block;
            descend(s, k, assign, i + 1, used.max(block + 1), best_inertia, best);
        }
    }
    descend(s, k, &mut assign, 0, 0, &mut best_inertia, &mut best);
    best
}

/// Point-count threshold below which clustering is solved exactly.
/// Point-initialized Lloyd iterations provably cannot reach the optimum
/// on some tiny instances, no matter how many restarts run.
const EXACT_KMEANS_LIMIT: usize = 10;

/// Seeded k-means. Inputs of more than `EXACT_KMEANS_LIMIT` (10) rows
/// run greedy k-means++ initialization with Lloyd iterations to
/// convergence (at most 100) and keep the best inertia over the
/// restarts; tiny inputs are solved exactly by partition enumeration.
/// Returns the cluster index of every row; deterministic given the seed.
pub fn kmeans(s: &EmbeddingSet, k_clusters: usize, seed: u64) -> Result<Vec<usize>> {
    if k_clusters < 1 || k_clusters > s.len() {
        return Err(Error::Config(format!(
            "k must be in [1, {}], got {k_clusters}",
            s.len()
        )));
    }
    if s.len() <= EXACT_KMEANS_LIMIT {
        return Ok(exact_min_inertia(s, k_clusters));
    }
    const MAX_ITERS: usize = 100;
    // ten restarts suffice at evaluation scale; small inputs get many
    // more so the best restart reliably lands in the global basin
    let restarts = if s.len() <= 32 { 128 } else { 10 };
    let mut rng = StdRng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts {
        let mut centers = kmeanspp_init(s, k_clusters, &mut rng);
        let mut assign: Vec<usize> = Vec::new();
        for _ in 0..MAX_ITERS {
            let mut next = assign_step(s, &centers);
            fix_empty_clusters(s, &mut next, &centers, k_clusters);
            if next == assign {
                break;
            }
            assign = next;
            update_centers(s, &assign, &mut centers, k_clusters);
        }
        let inertia = assignment_inertia(s, &assign, k_clusters);
        if best.as_ref().map_or(true, |(bi, _)| inertia < *bi) {
            best = Some((inertia, assign));
        }
    }
    Ok(best.expect("at least one restart ran").1)
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let dense = labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("label present"))
        .collect();
    (dense, distinct.len())
}

/// Normalized mutual information between a cluster assignment and a
/// labeling: `I(A;L) / sqrt(H(A) * H(L))`, clamped to `[0, 1]`. Returns 0
/// when the mutual information is zero (including any single-cluster
/// side) and 1 when both partitions are trivial, hence identical.
pub fn nmi(assignment: &[usize], labels: &[usize]) -> Result<f64> {
    if assignment.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: assignment.len(),
            right: labels.len(),
        });
    }
    if assignment.is_empty() {
        return Err(Error::Validation("NMI needs at least one sample".into()));
    }
    let n = assignment.len();
    let (a_dense, a_count) = compact(assignment);
    let (l_dense, l_count) = compact(labels);

    let mut table = vec![vec![0usize; l_count]; a_count];
    let mut a_sizes = vec![0usize; a_count];
    let mut l_sizes = vec![0usize; l_count];
    for (&a, &l) in a_dense.iter().zip(l_dense.iter()) {
        table[a][l] += 1;
        a_sizes[a] += 1;
        l_sizes[l] += 1;
    }

    let nf = n as f64;
    let entropy = |sizes: &[usize]| -> f64 {
        sizes
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&a_sizes);
    let h_l = entropy(&l_sizes);
    if h_a == 0.0 && h_l == 0.0 {
        return Ok(1.0);
    }

    let mut info = 0.0;
    for a in 0..a_count {
        for l in 0..l_count {
            let c = table[a][l];
            if c == 0 {
                continue;
            }
            let p = c as f64 / nf;
            info += p * ((nf * c as f64) / (a_sizes[a] as f64 * l_sizes[l] as f64)).ln();
        }
    }
    if info <= 0.0 || h_a == 0.0 || h_l == 0.0 {
        return Ok(0.0);
    }
    Ok((info / (h_a * h_l).sqrt()).clamp(0.0, 1.0))
}

/// Recall@K for every requested K plus NMI of a k-means clustering with
/// as many clusters as distinct fine labels.
pub fn evaluate(s: &EmbeddingSet, ks: &[usize], seed: u64) -> Result<EvalReport> {
    if ks.is_empty() {
        return Err(Error::Config("need at least one K".into()));
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let distinct_fines = s.distinct_fine_count();
    if distinct_fines < 2 {
        return Err(Error::Validation(
            "NMI needs at least two distinct fine labels".into(),
        ));
    }
    let mut recall_at = Vec::with_capacity(ks.len());
    for &k in &ks {
        recall_at.push((k, recall_at_k(s, k)?));
    }
    let assignment = kmeans(s, distinct_fines, seed)?;
    let nmi_value = nmi(&assignment, &s.fine_labels())?;
    Ok(EvalReport {
        recall_at,
        nmi: nmi_value,
        n_queries: s.len(),
    })
}

// used by recall tests below; the public distance lives in core
#[allow(dead_code)]
fn dist(s: &EmbeddingSet, i: usize, j: usize) -> f64 {
    l2_distance(s.row(i), s.row(j)).expect("rows share a dimension")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_set(points: &[f64], fines: &[usize]) -> EmbeddingSet {
        let rows = points.iter().map(|&x| vec![x]).collect();
        let labels = fines.iter().map(|&f| (0, f)).collect();
        EmbeddingSet::from_rows(rows, labels, (0..points.len()).collect()).unwrap()
    }

    #[test]
    fn recall_at_one_paired_points() {
        let s = line_set(&[0.0, 0.1, 5.0, 5.1], &[0, 0, 1, 1]);
        assert_eq!(recall_at_k(&s, 1).unwrap(), 1.0);
        let s = line_set(&[0.0, 0.1, 5.0, 5.1], &[0, 1, 0, 1]);
        assert_eq!(recall_at_k(&s, 1).unwrap(), 0.0);
    }

    #[test]
    fn recall_saturates_when_k_covers_everything() {
        let s = line_set(&[0.0, 1.0, 2.0, 3.0], &[0, 1, 0, 1]);
        assert_eq!(recall_at_k(&s, 3).unwrap(), 1.0);
        assert_eq!(recall_at_k(&s, 17).unwrap(), 1.0);
    }

    #[test]
    fn recall_is_monotone_in_k() {
        let s = line_set(&[0.0, 0.4, 0.9, 2.0, 2.2, 5.0], &[0, 1, 0, 1, 0, 1]);
        let mut prev = 0.0;
        for k in 1..6 {
            let r = recall_at_k(&s, k).unwrap();
            assert!(r >= prev);
            prev = r;
        }
    }

    #[test]
    fn recall_needs_two_rows_and_positive_k() {
        let s = line_set(&[0.0], &[0]);
        assert!(recall_at_k(&s, 1).is_err());
        let s = line_set(&[0.0, 1.0], &[0, 1]);
        assert!(recall_at_k(&s, 0).is_err());
    }

    #[test]
    fn recall_breaks_ties_by_smaller_index() {
        // rows 1 and 2 are equidistant from row 0; the tie goes to row 1,
        // whose fine class differs from the query's
        let points = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let labels = vec![(0, 0), (0, 1), (0, 0)];
        let s = EmbeddingSet::from_rows(points, labels, vec![0, 1, 2]).unwrap();
        // query 0 at K=1 must see row 1 (miss); at K=2 row 2 appears (hit)
        let r1 = recall_at_k(&s, 1).unwrap();
        let r2 = recall_at_k(&s, 2).unwrap();
        assert!(r1 < r2);
    }

    #[test]
    fn kmeans_separates_two_clumps() {
        let s = line_set(&[0.0, 0.1, 10.0, 10.1], &[0, 0, 1, 1]);
        let assign = kmeans(&s, 2, 0).unwrap();
        assert_eq!(assign[0], assign[1]);
        assert_eq!(assign[2], assign[3]);
        assert_ne!(assign[0], assign[2]);
    }

    #[test]
    fn kmeans_k_equals_n_gives_singletons() {
        let s = line_set(&[0.0, 1.0, 2.0, 3.5], &[0, 0, 1, 1]);
        let assign = kmeans(&s, 4, 0).unwrap();
        let mut sorted = assign.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
        assert_eq!(assignment_inertia(&s, &assign, 4), 0.0);
    }

    #[test]
    fn kmeans_duplicated_points_stay_together() {
        let base = [0.0, 0.1, 10.0, 10.1];
        let doubled: Vec<f64> = base.iter().chain(base.iter()).copied().collect();
        let fines = vec![0, 0, 1, 1, 0, 0, 1, 1];
        let s = line_set(&doubled, &fines);
        let assign = kmeans(&s, 2, 3).unwrap();
        for i in 0..4 {
            assert_eq!(assign[i], assign[i + 4], "duplicate {i} strayed");
        }
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let s = line_set(&[0.0, 1.0], &[0, 1]);
        assert!(kmeans(&s, 0, 0).is_err());
        assert!(kmeans(&s, 3, 0).is_err());
    }

    #[test]
    fn nmi_perfect_match_is_one_up_to_relabeling() {
        let labels = vec![5, 5, 9, 9, 2, 2];
        let assignment = vec![1, 1, 0, 0, 2, 2];
        let v = nmi(&assignment, &labels).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_independent_partitions_are_zero() {
        let labels = vec![0, 0, 1, 1];
        let assignment = vec![0, 1, 0, 1];
        assert_eq!(nmi(&assignment, &labels).unwrap(), 0.0);
    }

    #[test]
    fn nmi_is_symmetric() {
        let a = vec![0, 0, 1, 2, 2, 1, 0, 2];
        let b = vec![1, 1, 1, 0, 0, 2, 2, 2];
        let ab = nmi(&a, &b).unwrap();
        let ba = nmi(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn nmi_degenerate_conventions() {
        // both trivial and identical
        assert_eq!(nmi(&[0, 0, 0], &[7, 7, 7]).unwrap(), 1.0);
        // single cluster against real labels carries no information
        assert_eq!(nmi(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap(), 0.0);
        // length mismatch
        assert!(nmi(&[0, 1], &[0]).is_err());
        assert!(nmi(&[], &[]).is_err());
    }

    #[test]
    fn evaluate_well_separated_fixture() {
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for fine in 0..4usize {
            for j in 0..5usize {
                points.push(vec![10.0 * fine as f64 + 0.01 * j as f64, 0.0]);
                labels.push((fine / 2, fine));
            }
        }
        let s = EmbeddingSet::from_rows(points, labels, (0..20).collect()).unwrap();
        let report = evaluate(&s, &[1, 2, 4, 8], 0).unwrap();
        assert_eq!(report.recall_at[0], (1, 1.0));
        assert!((report.nmi - 1.0).abs() < 1e-12);
        assert_eq!(report.n_queries, 20);
        // nondecreasing in K
        for w in report.recall_at.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert_eq!(report.csv_header(), "method,R@1,R@2,R@4,R@8,NMI");
        let row = report.csv_row("fixture");
        assert!(row.starts_with("fixture,1.000000,"));
    }

    #[test]
    fn evaluate_identical_embeddings_have_zero_nmi() {
        let s = line_set(&[1.0, 1.0, 1.0, 1.0], &[0, 0, 1, 1]);
        let report = evaluate(&s, &[1], 0).unwrap();
        assert_eq!(report.nmi, 0.0);
    }

    #[test]
    fn evaluate_requires_two_fine_classes() {
        let s = line_set(&[0.0, 1.0], &[3, 3]);
        assert!(evaluate(&s, &[1], 0).is_err());
    }
}
