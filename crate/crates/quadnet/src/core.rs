//! Domain types, label hierarchy, and l2 distance geometry.
//!
//! Everything here is an immutable value type shared by the mining,
//! loss, encoder, and evaluation modules. A sample carries two labels: a
//! coarse class and a fine class, where every fine class belongs to
//! exactly one coarse class.

use crate::error::{Error, Result};
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

/// One raw input vector together with its coarse and fine labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub id: usize,
    pub features: Vec<f64>,
    pub coarse: usize,
    pub fine: usize,
}

/// Two-level label hierarchy: `k2` fine classes partitioned among `k1`
/// coarse classes via a total `fine -> coarse` map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelHierarchy {
    k1: usize,
    parent: Vec<usize>,
}

impl LabelHierarchy {
    /// Builds a hierarchy from the number of coarse classes and the parent
    /// map indexed by fine id. Requires `k1 >= 2`, `parent.len() >= k1`,
    /// and every parent id in `[0, k1)`.
    pub fn new(k1: usize, parent: Vec<usize>) -> Result<Self> {
        if k1 < 2 {
            return Err(Error::Validation(format!(
                "need at least 2 coarse classes, got {k1}"
            )));
        }
        if parent.len() < k1 {
            return Err(Error::Validation(format!(
                "need k2 >= k1, got k2 = {} with k1 = {k1}",
                parent.len()
            )));
        }
        if let Some((fine, &c)) = parent.iter().enumerate().find(|(_, &c)| c >= k1) {
            return Err(Error::Validation(format!(
                "fine class {fine} maps to coarse class {c}, outside [0, {k1})"
            )));
        }
        Ok(Self { k1, parent })
    }

    pub fn coarse_count(&self) -> usize {
        self.k1
    }

    pub fn fine_count(&self) -> usize {
        self.parent.len()
    }

    /// Coarse parent of a fine class id.
    pub fn parent_of(&self, fine: usize) -> Result<usize> {
        self.parent.get(fine).copied().ok_or_else(|| {
            Error::Validation(format!(
                "fine class {fine} missing from hierarchy of {} fine classes",
                self.parent.len()
            ))
        })
    }

    pub fn parents(&self) -> &[usize] {
        &self.parent
    }
}

/// Immutable snapshot of `N` embeddings with their labels and sample ids;
/// the substrate for mining and evaluation. Row `i` belongs to `ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f64>,
    ids: Vec<usize>,
    labels: Vec<(usize, usize)>,
}

impl EmbeddingSet {
    /// Builds a set from per-sample rows. All rows must be finite and of
    /// equal dimension, and there must be at least one row.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        labels: Vec<(usize, usize)>,
        ids: Vec<usize>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Validation("embedding set must be non-empty".into()));
        }
        if rows.len() != labels.len() || rows.len() != ids.len() {
            return Err(Error::Validation(format!(
                "row/label/id counts differ: {} rows, {} labels, {} ids",
                rows.len(),
                labels.len(),
                ids.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::Validation("embedding dimension must be >= 1".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "row {i} contains non-finite value {v}"
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            dim,
            data,
            ids,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn id(&self, i: usize) -> usize {
        self.ids[i]
    }

    pub fn coarse(&self, i: usize) -> usize {
        self.labels[i].0
    }

    pub fn fine(&self, i: usize) -> usize {
        self.labels[i].1
    }

    pub fn labels(&self) -> &[(usize, usize)] {
        &self.labels
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    /// Fine labels of every row, in row order.
    pub fn fine_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|&(_, f)| f).collect()
    }

    /// Number of distinct fine labels present in the set.
    pub fn distinct_fine_count(&self) -> usize {
        let mut fines: Vec<usize> = self.labels.iter().map(|&(_, f)| f).collect();
        fines.sort_unstable();
        fines.dedup();
        fines.len()
    }

    /// Copy with every embedding multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
            ids: self.ids.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Copy with every row scaled to unit l2 norm. Rows are not normalized
    /// by default anywhere in the crate; this is opt-in. Zero rows are
    /// left untouched.
    pub fn l2_normalized(&self) -> Self {
        let mut data = self.data.clone();
        for i in 0..self.len() {
            let row = &mut data[i * self.dim..(i + 1) * self.dim];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        Self {
            dim: self.dim,
            data,
            ids: self.ids.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Content fingerprint used to tie mined batches back to the snapshot
    /// they were mined from. Deterministic across runs.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.dim.hash(&mut h);
        self.ids.hash(&mut h);
        self.labels.hash(&mut h);
        for v in &self.data {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Indices of one quadruplet (reference, same-fine positive, same-coarse
/// positive, negative) into an [`EmbeddingSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadrupletIdx {
    pub r: usize,
    pub pp: usize,
    pub pm: usize,
    pub n: usize,
}

impl QuadrupletIdx {
    /// Checks the three label constraints against `s`:
    /// `fine(pp) = fine(r)` with `pp != r`, `coarse(pm) = coarse(r)` with
    /// `fine(pm) != fine(r)`, and `coarse(n) != coarse(r)`.
    pub fn validate(&self, s: &EmbeddingSet) -> Result<()> {
        let n_rows = s.len();
        for idx in [self.r, self.pp, self.pm, self.n] {
            if idx >= n_rows {
                return Err(Error::Validation(format!(
                    "quadruplet index {idx} out of range for {n_rows} rows"
                )));
            }
        }
        if self.pp == self.r {
            return Err(Error::Validation(
                "positive-positive must differ from the reference".into(),
            ));
        }
        if s.fine(self.pp) != s.fine(self.r) {
            return Err(Error::Validation(format!(
                "P+ fine class {} differs from reference fine class {}",
                s.fine(self.pp),
                s.fine(self.r)
            )));
        }
        if s.coarse(self.pm) != s.coarse(self.r) || s.fine(self.pm) == s.fine(self.r) {
            return Err(Error::Validation(
                "P- must share the coarse class but not the fine class of the reference".into(),
            ));
        }
        if s.coarse(self.n) == s.coarse(self.r) {
            return Err(Error::Validation(
                "negative must come from a different coarse class".into(),
            ));
        }
        Ok(())
    }
}

/// Margins and weights for all loss terms.
///
/// `m1`/`m2` are the joint-loss margins (`m1 > m2 > 0` is enforced),
/// `t1`/`t2` the global-loss margins, `lambda_c1`/`lambda_c2` the coarse
/// and fine classification weights, `lambda_g1`/`lambda_g2` the global
/// hinge weights, `eta` the global-loss weight, `alpha` the contrastive
/// margin, and `m_trip` the triplet margin.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub m1: f64,
    pub m2: f64,
    pub t1: f64,
    pub t2: f64,
    pub lambda_c1: f64,
    pub lambda_c2: f64,
    pub lambda_g1: f64,
    pub lambda_g2: f64,
    pub eta: f64,
    pub alpha: f64,
    pub m_trip: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            m1: 0.7,
            m2: 0.3,
            t1: 0.7,
            t2: 0.3,
            lambda_c1: 0.08,
            lambda_c2: 0.25,
            lambda_g1: 1.0,
            lambda_g2: 1.0,
            eta: 1.0,
            alpha: 0.5,
            m_trip: 0.5,
        }
    }
}

impl HyperParams {
    /// Validates every field and returns the value, for construction via
    /// struct update syntax:
    /// `HyperParams { m1: 0.9, ..Default::default() }.validated()?`.
    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Rejects any assignment violating `m1 > m2 > 0` or a negative weight.
    pub fn validate(&self) -> Result<()> {
        if !(self.m2 > 0.0 && self.m1 > self.m2) {
            return Err(Error::Config(format!(
                "margins must satisfy m1 > m2 > 0, got m1 = {}, m2 = {}",
                self.m1, self.m2
            )));
        }
        let named = [
            ("t1", self.t1),
            ("t2", self.t2),
            ("lambda_c1", self.lambda_c1),
            ("lambda_c2", self.lambda_c2),
            ("lambda_g1", self.lambda_g1),
            ("lambda_g2", self.lambda_g2),
            ("eta", self.eta),
            ("alpha", self.alpha),
            ("m_trip", self.m_trip),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be a nonnegative finite number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// l2 distance between two vectors of equal length.
pub fn l2_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut sum = 0.0;
    for (a, b) in u.iter().zip(v.iter()) {
        let d = a - b;
        sum += d * d;
    }
    Ok(sum.sqrt())
}

/// Symmetric `N x N` matrix of pairwise distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Full pairwise distance matrix of an embedding set. The upper triangle
/// is computed once and mirrored, so symmetry is exact.
pub fn pairwise_distances(s: &EmbeddingSet) -> DistanceMatrix {
    let n = s.len();
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            // rows of one set always share a dimension
            let d = l2_distance(s.row(i), s.row(j)).expect("rows share a dimension");
            data[i * n + j] = d;
            data[j * n + i] = d;
        }
    }
    DistanceMatrix { n, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set_from(points: &[(f64, f64)], labels: &[(usize, usize)]) -> EmbeddingSet {
        let rows = points.iter().map(|&(x, y)| vec![x, y]).collect();
        let ids = (0..points.len()).collect();
        EmbeddingSet::from_rows(rows, labels.to_vec(), ids).unwrap()
    }

    #[test]
    fn l2_distance_three_four_five() {
        assert_eq!(l2_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
    }

    #[test]
    fn l2_distance_identity() {
        let u = [0.3, -1.7, 2.0];
        assert_eq!(l2_distance(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn l2_distance_sqrt_two() {
        let d = l2_distance(&[1.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn l2_distance_rejects_dimension_mismatch() {
        let err = l2_distance(&[1.0], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch { left: 1, right: 2 }
        ));
    }

    #[test]
    fn pairwise_single_row() {
        let s = set_from(&[(0.0, 0.0)], &[(0, 0)]);
        let m = pairwise_distances(&s);
        assert_eq!(m.n(), 1);
        assert_eq!(m.get(0, 0), 0.0);
    }

    #[test]
    fn pairwise_symmetric_three_four_five() {
        let s = set_from(&[(0.0, 0.0), (3.0, 4.0)], &[(0, 0), (1, 1)]);
        let m = pairwise_distances(&s);
        assert_eq!(m.get(0, 1), 5.0);
        assert_eq!(m.get(1, 0), 5.0);
        assert_eq!(m.get(0, 0), 0.0);
        assert_eq!(m.get(1, 1), 0.0);
    }

    #[test]
    fn hierarchy_rejects_bad_shapes() {
        assert!(LabelHierarchy::new(1, vec![0]).is_err());
        assert!(LabelHierarchy::new(2, vec![0]).is_err());
        assert!(LabelHierarchy::new(2, vec![0, 2]).is_err());
        let h = LabelHierarchy::new(2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(h.coarse_count(), 2);
        assert_eq!(h.fine_count(), 4);
        assert_eq!(h.parent_of(2).unwrap(), 1);
        assert!(h.parent_of(4).is_err());
    }

    #[test]
    fn embedding_set_rejects_ragged_and_non_finite_rows() {
        let ragged = EmbeddingSet::from_rows(
            vec![vec![0.0, 1.0], vec![0.0]],
            vec![(0, 0), (0, 0)],
            vec![0, 1],
        );
        assert!(matches!(ragged, Err(Error::DimensionMismatch { .. })));
        let nan = EmbeddingSet::from_rows(vec![vec![f64::NAN]], vec![(0, 0)], vec![0]);
        assert!(nan.is_err());
        assert!(EmbeddingSet::from_rows(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn quadruplet_constraints_are_checked() {
        // coarse A = 0 holds fines 0 and 1; coarse B = 1 holds fine 2
        let s = set_from(
            &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (5.0, 5.0)],
            &[(0, 0), (0, 0), (0, 1), (1, 2)],
        );
        let good = QuadrupletIdx {
            r: 0,
            pp: 1,
            pm: 2,
            n: 3,
        };
        good.validate(&s).unwrap();
        let self_positive = QuadrupletIdx {
            r: 0,
            pp: 0,
            pm: 2,
            n: 3,
        };
        assert!(self_positive.validate(&s).is_err());
        let wrong_negative = QuadrupletIdx {
            r: 0,
            pp: 1,
            pm: 2,
            n: 2,
        };
        assert!(wrong_negative.validate(&s).is_err());
        let wrong_pm = QuadrupletIdx {
            r: 0,
            pp: 1,
            pm: 3,
            n: 3,
        };
        assert!(wrong_pm.validate(&s).is_err());
    }

    #[test]
    fn hyperparams_default_is_valid_and_margin_order_is_enforced() {
        HyperParams::default().validate().unwrap();
        let swapped = HyperParams {
            m1: 0.3,
            m2: 0.7,
            ..Default::default()
        };
        assert!(matches!(swapped.validated(), Err(Error::Config(_))));
        let zero_m2 = HyperParams {
            m2: 0.0,
            ..Default::default()
        };
        assert!(zero_m2.validated().is_err());
        let negative_weight = HyperParams {
            lambda_g1: -1.0,
            ..Default::default()
        };
        assert!(negative_weight.validated().is_err());
    }

    #[test]
    fn scaling_rows_scales_distances_exactly() {
        let s = set_from(&[(0.25, -1.5), (3.5, 0.125)], &[(0, 0), (1, 1)]);
        let scaled = s.scaled(2.0);
        let d = l2_distance(s.row(0), s.row(1)).unwrap();
        let d2 = l2_distance(scaled.row(0), scaled.row(1)).unwrap();
        assert_eq!(d2, 2.0 * d);
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let s = set_from(&[(3.0, 4.0), (0.0, 0.0)], &[(0, 0), (1, 1)]);
        let n = s.l2_normalized();
        let norm0: f64 = n.row(0).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm0 - 1.0).abs() < 1e-12);
        assert_eq!(n.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = set_from(&[(0.0, 0.0), (1.0, 0.0)], &[(0, 0), (0, 0)]);
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b = b.scaled(2.0);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
