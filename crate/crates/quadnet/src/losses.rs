//! Loss functions over quadruplet distances and classification heads,
//! with closed-form values and analytic gradients.
//!
//! Value conventions used throughout:
//!
//! - hinges are `max(0, .)` and take subgradient 0 at the kink;
//! - batch variances are population variances (divide by the batch size);
//! - batch statistics are over plain distances, not squared distances;
//! - softmax cross entropies use hard labels and stable log-sum-exp;
//! - the classification term of the joint loss applies to the reference
//!   sample only.

use crate::core::{l2_distance, HyperParams};
use crate::error::{Error, Result};

/// The three reference-anchored distances of one quadruplet:
/// `D(R,P+)`, `D(R,P-)`, `D(R,N)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrupletDistances {
    pub d_rpp: f64,
    pub d_rpm: f64,
    pub d_rn: f64,
}

impl QuadrupletDistances {
    pub fn new(d_rpp: f64, d_rpm: f64, d_rn: f64) -> Self {
        Self { d_rpp, d_rpm, d_rn }
    }

    /// Distances computed from the four member embeddings.
    pub fn from_embeddings(r: &[f64], pp: &[f64], pm: &[f64], n: &[f64]) -> Result<Self> {
        Ok(Self {
            d_rpp: l2_distance(r, pp)?,
            d_rpm: l2_distance(r, pm)?,
            d_rn: l2_distance(r, n)?,
        })
    }
}

/// Means and population variances of the three distance channels over a
/// batch of quadruplets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchDistanceStats {
    pub mean_pp: f64,
    pub mean_pm: f64,
    pub mean_n: f64,
    pub var_pp: f64,
    pub var_pm: f64,
    pub var_n: f64,
}

/// Batch statistics of the distance channels; errors on an empty batch.
pub fn batch_distance_stats(batch: &[QuadrupletDistances]) -> Result<BatchDistanceStats> {
    if batch.is_empty() {
        return Err(Error::Validation(
            "batch statistics need at least one quadruplet".into(),
        ));
    }
    let b = batch.len() as f64;
    let mut mean = [0.0; 3];
    for q in batch {
        mean[0] += q.d_rpp;
        mean[1] += q.d_rpm;
        mean[2] += q.d_rn;
    }
    for m in &mut mean {
        *m /= b;
    }
    let mut var = [0.0; 3];
    for q in batch {
        var[0] += (q.d_rpp - mean[0]) * (q.d_rpp - mean[0]);
        var[1] += (q.d_rpm - mean[1]) * (q.d_rpm - mean[1]);
        var[2] += (q.d_rn - mean[2]) * (q.d_rn - mean[2]);
    }
    for v in &mut var {
        *v /= b;
    }
    Ok(BatchDistanceStats {
        mean_pp: mean[0],
        mean_pm: mean[1],
        mean_n: mean[2],
        var_pp: var[0],
        var_pm: var[1],
        var_n: var[2],
    })
}

/// A labeled pair for the contrastive loss: its distance and whether the
/// two members share a class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairExample {
    pub distance: f64,
    pub same_class: bool,
}

/// Score vectors of the two classification heads for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLogits {
    pub coarse_scores: Vec<f64>,
    pub fine_scores: Vec<f64>,
}

fn hinge(x: f64) -> f64 {
    x.max(0.0)
}

/// Contrastive pair loss: `y * d^2 + (1 - y) * max(0, alpha - d)^2`.
pub fn contrastive_loss(p: &PairExample, alpha: f64) -> f64 {
    if p.same_class {
        p.distance * p.distance
    } else {
        let h = hinge(alpha - p.distance);
        h * h
    }
}

/// Triplet loss on squared distances: `max(0, d_rp^2 - d_rn^2 + margin)`.
pub fn triplet_loss(d_rp: f64, d_rn: f64, margin: f64) -> f64 {
    hinge(d_rp * d_rp - d_rn * d_rn + margin)
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Two-head softmax cross entropy with hard labels:
/// `lambda_c1 * CE(coarse head, coarse) + lambda_c2 * CE(fine head, fine)`.
///
/// Panics if a label is out of range for its head (caller contract).
pub fn classification_loss(
    logits: &HeadLogits,
    coarse: usize,
    fine: usize,
    lambda_c1: f64,
    lambda_c2: f64,
) -> f64 {
    assert!(
        coarse < logits.coarse_scores.len(),
        "coarse label {coarse} out of range for {} scores",
        logits.coarse_scores.len()
    );
    assert!(
        fine < logits.fine_scores.len(),
        "fine label {fine} out of range for {} scores",
        logits.fine_scores.len()
    );
    let ce_coarse = log_sum_exp(&logits.coarse_scores) - logits.coarse_scores[coarse];
    let ce_fine = log_sum_exp(&logits.fine_scores) - logits.fine_scores[fine];
    lambda_c1 * ce_coarse + lambda_c2 * ce_fine
}

/// The two margin hinges of the joint loss, before adding the
/// classification term. Errors if the margins violate `m1 > m2 > 0`,
/// which keeps both denominators positive.
pub fn joint_hinges(q: &QuadrupletDistances, h: &HyperParams) -> Result<(f64, f64)> {
    h.validate()?;
    let first = hinge(1.0 - q.d_rpm / (q.d_rpp + h.m1 - h.m2));
    let second = hinge(1.0 - q.d_rn / (q.d_rpm + h.m2));
    Ok((first, second))
}

/// Joint quadruplet loss: two ratio hinges enforcing
/// `D(R,P+) + m1 < D(R,P-)` and `D(R,P-) + m2 < D(R,N)` in relative form,
/// plus the classification loss of the reference sample.
pub fn joint_loss(
    q: &QuadrupletDistances,
    ref_logits: &HeadLogits,
    coarse: usize,
    fine: usize,
    h: &HyperParams,
) -> Result<f64> {
    let (first, second) = joint_hinges(q, h)?;
    Ok(first + second + classification_loss(ref_logits, coarse, fine, h.lambda_c1, h.lambda_c2))
}

/// Batch-level loss on the statistics of the distance channels:
/// the three variances plus two hinges on the means.
pub fn global_loss(batch: &[QuadrupletDistances], h: &HyperParams) -> Result<f64> {
    h.validate()?;
    let s = batch_distance_stats(batch)?;
    Ok(s.var_pp
        + s.var_pm
        + s.var_n
        + h.lambda_g1 * hinge(s.mean_pp - s.mean_pm + h.t1 - h.t2)
        + h.lambda_g2 * hinge(s.mean_pm - s.mean_n + h.t2))
}

/// One quadruplet's contribution to the combined loss: its distances, the
/// reference sample's head scores, and the reference labels.
#[derive(Debug, Clone)]
pub struct QuadrupletLossTerm<'a> {
    pub distances: QuadrupletDistances,
    pub ref_logits: &'a HeadLogits,
    pub coarse: usize,
    pub fine: usize,
}

/// Combined loss: the sum of the per-quadruplet joint losses plus
/// `eta` times the global loss of the batch.
pub fn combined_loss(batch: &[QuadrupletLossTerm<'_>], h: &HyperParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Validation(
            "combined loss needs at least one quadruplet".into(),
        ));
    }
    let mut total = 0.0;
    for term in batch {
        total += joint_loss(&term.distances, term.ref_logits, term.coarse, term.fine, h)?;
    }
    let dists: Vec<QuadrupletDistances> = batch.iter().map(|t| t.distances).collect();
    Ok(total + h.eta * global_loss(&dists, h)?)
}

/// One quadruplet's inputs for gradient computation: the four member
/// embeddings plus the reference head scores and labels.
#[derive(Debug, Clone)]
pub struct QuadrupletGradTerm<'a> {
    pub r: &'a [f64],
    pub pp: &'a [f64],
    pub pm: &'a [f64],
    pub n: &'a [f64],
    pub ref_logits: &'a HeadLogits,
    pub coarse: usize,
    pub fine: usize,
}

/// Gradients of the combined loss for one quadruplet: with respect to the
/// four member embeddings and the reference head scores.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrupletGradients {
    pub r: Vec<f64>,
    pub pp: Vec<f64>,
    pub pm: Vec<f64>,
    pub n: Vec<f64>,
    pub coarse_scores: Vec<f64>,
    pub fine_scores: Vec<f64>,
}

/// Combined loss value and all gradients for a batch.
#[derive(Debug, Clone)]
pub struct CombinedLossGrad {
    pub loss: f64,
    pub quads: Vec<QuadrupletGradients>,
    /// Number of distance terms whose gradient was required but undefined
    /// because the two points coincide; those terms contributed zero.
    pub singular_distances: usize,
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    scores.iter().map(|s| (s - lse).exp()).collect()
}

/// Analytic gradients of [`combined_loss`] under l2 distance.
///
/// Hinge kinks take subgradient 0. If two members of a pair coincide and
/// that pair's distance carries a nonzero coefficient, the term
/// contributes zero and the event is counted in `singular_distances`.
pub fn combined_loss_grad(
    batch: &[QuadrupletGradTerm<'_>],
    h: &HyperParams,
) -> Result<CombinedLossGrad> {
    h.validate()?;
    if batch.is_empty() {
        return Err(Error::Validation(
            "combined loss needs at least one quadruplet".into(),
        ));
    }
    let b = batch.len() as f64;
    let dists: Vec<QuadrupletDistances> = batch
        .iter()
        .map(|t| QuadrupletDistances::from_embeddings(t.r, t.pp, t.pm, t.n))
        .collect::<Result<_>>()?;
    let stats = batch_distance_stats(&dists)?;

    let g1_arg = stats.mean_pp - stats.mean_pm + h.t1 - h.t2;
    let g2_arg = stats.mean_pm - stats.mean_n + h.t2;
    let g1_active = g1_arg > 0.0;
    let g2_active = g2_arg > 0.0;
    let global_value = stats.var_pp
        + stats.var_pm
        + stats.var_n
        + h.lambda_g1 * hinge(g1_arg)
        + h.lambda_g2 * hinge(g2_arg);

    let mut loss = h.eta * global_value;
    let mut singular = 0usize;
    let mut quads = Vec::with_capacity(batch.len());

    for (term, q) in batch.iter().zip(dists.iter()) {
        let denom1 = q.d_rpp + h.m1 - h.m2;
        let denom2 = q.d_rpm + h.m2;
        let h1 = 1.0 - q.d_rpm / denom1;
        let h2 = 1.0 - q.d_rn / denom2;
        let h1_active = h1 > 0.0;
        let h2_active = h2 > 0.0;
        loss += hinge(h1) + hinge(h2);
        loss += classification_loss(
            term.ref_logits,
            term.coarse,
            term.fine,
            h.lambda_c1,
            h.lambda_c2,
        );

        // d(loss)/d(distance) for the three channels: the joint hinges of
        // this quadruplet plus eta times the batch statistics terms.
        let mut coef_pp = h.eta * (2.0 * (q.d_rpp - stats.mean_pp) / b);
        let mut coef_pm = h.eta * (2.0 * (q.d_rpm - stats.mean_pm) / b);
        let mut coef_n = h.eta * (2.0 * (q.d_rn - stats.mean_n) / b);
        if g1_active {
            coef_pp += h.eta * h.lambda_g1 / b;
            coef_pm -= h.eta * h.lambda_g1 / b;
        }
        if g2_active {
            coef_pm += h.eta * h.lambda_g2 / b;
            coef_n -= h.eta * h.lambda_g2 / b;
        }
        if h1_active {
            coef_pp += q.d_rpm / (denom1 * denom1);
            coef_pm -= 1.0 / denom1;
        }
        if h2_active {
            coef_pm += q.d_rn / (denom2 * denom2);
            coef_n -= 1.0 / denom2;
        }

        let dim = term.r.len();
        let mut grad = QuadrupletGradients {
            r: vec![0.0; dim],
            pp: vec![0.0; dim],
            pm: vec![0.0; dim],
            n: vec![0.0; dim],
            coarse_scores: vec![0.0; term.ref_logits.coarse_scores.len()],
            fine_scores: vec![0.0; term.ref_logits.fine_scores.len()],
        };

        // grad of d = |r - x| is (r - x)/d towards r and its negation
        // towards x; undefined at d = 0.
        let mut pair = |other: &[f64],
                        d: f64,
                        coef: f64,
                        grad_r: &mut [f64],
                        grad_other: &mut [f64]| {
            if coef == 0.0 {
                return;
            }
            if d == 0.0 {
                singular += 1;
                return;
            }
            for i in 0..dim {
                let u = (term.r[i] - other[i]) / d;
                grad_r[i] += coef * u;
                grad_other[i] -= coef * u;
            }
        };
        let mut grad_r = vec![0.0; dim];
        pair(term.pp, q.d_rpp, coef_pp, &mut grad_r, &mut grad.pp);
        pair(term.pm, q.d_rpm, coef_pm, &mut grad_r, &mut grad.pm);
        pair(term.n, q.d_rn, coef_n, &mut grad_r, &mut grad.n);
        grad.r = grad_r;

        // classification gradient: lambda * (softmax - onehot) per head
        let p_coarse = softmax(&term.ref_logits.coarse_scores);
        for (i, p) in p_coarse.iter().enumerate() {
            let target = if i == term.coarse { 1.0 } else { 0.0 };
            grad.coarse_scores[i] = h.lambda_c1 * (p - target);
        }
        let p_fine = softmax(&term.ref_logits.fine_scores);
        for (i, p) in p_fine.iter().enumerate() {
            let target = if i == term.fine { 1.0 } else { 0.0 };
            grad.fine_scores[i] = h.lambda_c2 * (p - target);
        }

        quads.push(grad);
    }

    Ok(CombinedLossGrad {
        loss,
        quads,
        singular_distances: singular,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-12;

    fn zero_logits(k1: usize, k2: usize) -> HeadLogits {
        HeadLogits {
            coarse_scores: vec![0.0; k1],
            fine_scores: vec![0.0; k2],
        }
    }

    #[test]
    fn contrastive_matches_hand_values() {
        let same_at_zero = PairExample {
            distance: 0.0,
            same_class: true,
        };
        assert_eq!(contrastive_loss(&same_at_zero, 0.5), 0.0);
        let far_negative = PairExample {
            distance: 0.7,
            same_class: false,
        };
        assert_eq!(contrastive_loss(&far_negative, 0.5), 0.0);
        let near_negative = PairExample {
            distance: 0.2,
            same_class: false,
        };
        assert!((contrastive_loss(&near_negative, 0.5) - 0.09).abs() < TOL);
    }

    #[test]
    fn triplet_matches_hand_values() {
        assert_eq!(triplet_loss(1.0, 2.0, 0.5), 0.0);
        assert!((triplet_loss(2.0, 1.0, 0.5) - 3.5).abs() < TOL);
        assert_eq!(triplet_loss(0.8, 0.8, 0.0), 0.0);
    }

    #[test]
    fn classification_uniform_logits() {
        let l = zero_logits(2, 4);
        let expected = 0.08 * 2.0_f64.ln() + 0.25 * 4.0_f64.ln();
        let got = classification_loss(&l, 0, 3, 0.08, 0.25);
        assert!((got - expected).abs() < TOL, "{got} vs {expected}");
    }

    #[test]
    fn classification_shift_invariance() {
        let l = HeadLogits {
            coarse_scores: vec![0.3, -1.2, 0.8],
            fine_scores: vec![2.0, -0.5, 0.1, 1.4],
        };
        let shifted = HeadLogits {
            coarse_scores: l.coarse_scores.iter().map(|v| v + 17.25).collect(),
            fine_scores: l.fine_scores.iter().map(|v| v - 3.5).collect(),
        };
        let a = classification_loss(&l, 2, 1, 0.08, 0.25);
        let b = classification_loss(&shifted, 2, 1, 0.08, 0.25);
        assert!((a - b).abs() < TOL);
    }

    #[test]
    fn classification_saturated_softmax_vanishes() {
        let mut l = zero_logits(3, 5);
        l.coarse_scores[1] = 100.0;
        l.fine_scores[4] = 100.0;
        assert!(classification_loss(&l, 1, 4, 0.08, 0.25) <= 1e-10);
    }

    #[test]
    fn joint_loss_hinges_inactive_reduces_to_classification() {
        let h = HyperParams::default();
        let q = QuadrupletDistances::new(0.5, 1.0, 2.0);
        let l = zero_logits(2, 4);
        let c = classification_loss(&l, 0, 0, h.lambda_c1, h.lambda_c2);
        let got = joint_loss(&q, &l, 0, 0, &h).unwrap();
        assert!((got - c).abs() < TOL);
    }

    #[test]
    fn joint_loss_matches_hand_value() {
        let h = HyperParams {
            lambda_c1: 0.0,
            lambda_c2: 0.0,
            ..Default::default()
        };
        let q = QuadrupletDistances::new(1.0, 1.0, 1.05);
        let l = zero_logits(2, 2);
        let expected = (1.0 - 1.0 / 1.4) + (1.0 - 1.05 / 1.3);
        let got = joint_loss(&q, &l, 0, 0, &h).unwrap();
        assert!((got - expected).abs() < TOL);
        assert!((got - 0.478_021_978_021_978).abs() < 1e-9);
    }

    #[test]
    fn joint_loss_hinge_boundaries_are_exact() {
        let h = HyperParams {
            lambda_c1: 0.0,
            lambda_c2: 0.0,
            ..Default::default()
        };
        let l = zero_logits(2, 2);
        // d_rpm exactly d_rpp + m1 - m2 and d_rn exactly d_rpm + m2
        let q = QuadrupletDistances::new(0.6, 1.0, 1.3);
        let got = joint_loss(&q, &l, 0, 0, &h).unwrap();
        assert_eq!(got, 0.0);
        // one epsilon inside the margin the hinge is strictly positive
        let q = QuadrupletDistances::new(0.6, 1.0 - 1e-9, 1.3);
        assert!(joint_loss(&q, &l, 0, 0, &h).unwrap() > 0.0);
    }

    #[test]
    fn joint_loss_rejects_bad_margins() {
        let bad = HyperParams {
            m1: 0.2,
            m2: 0.3,
            ..Default::default()
        };
        let q = QuadrupletDistances::new(0.5, 1.0, 2.0);
        let l = zero_logits(2, 2);
        assert!(matches!(
            joint_loss(&q, &l, 0, 0, &bad),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn global_loss_single_quadruplet_with_satisfied_margins_is_zero() {
        let h = HyperParams::default();
        let batch = [QuadrupletDistances::new(0.5, 1.0, 2.0)];
        assert_eq!(global_loss(&batch, &h).unwrap(), 0.0);
    }

    #[test]
    fn global_loss_two_quadruplet_hand_value() {
        let h = HyperParams::default();
        let batch = [
            QuadrupletDistances::new(0.5, 1.0, 2.0),
            QuadrupletDistances::new(0.7, 0.8, 1.5),
        ];
        let got = global_loss(&batch, &h).unwrap();
        assert!((got - 0.1825).abs() < 1e-12, "{got}");
    }

    #[test]
    fn global_loss_of_identical_quadruplets_matches_single() {
        let h = HyperParams::default();
        let q = QuadrupletDistances::new(0.9, 1.1, 1.2);
        let single = global_loss(&[q], &h).unwrap();
        let repeated = global_loss(&[q; 7], &h).unwrap();
        assert!((single - repeated).abs() < TOL);
    }

    #[test]
    fn global_loss_rejects_empty_batch() {
        let h = HyperParams::default();
        assert!(global_loss(&[], &h).is_err());
    }

    #[test]
    fn combined_loss_single_quadruplet_reduces_to_classification() {
        let h = HyperParams::default();
        let l = zero_logits(2, 4);
        let term = QuadrupletLossTerm {
            distances: QuadrupletDistances::new(0.5, 1.0, 2.0),
            ref_logits: &l,
            coarse: 0,
            fine: 1,
        };
        let c = classification_loss(&l, 0, 1, h.lambda_c1, h.lambda_c2);
        let got = combined_loss(&[term], &h).unwrap();
        assert!((got - c).abs() < TOL);
    }

    #[test]
    fn combined_loss_eta_zero_is_sum_of_joint_losses() {
        let h = HyperParams {
            eta: 0.0,
            ..Default::default()
        };
        let l = zero_logits(3, 6);
        let quads = [
            QuadrupletDistances::new(0.4, 0.5, 0.6),
            QuadrupletDistances::new(1.0, 0.2, 3.0),
        ];
        let terms: Vec<QuadrupletLossTerm> = quads
            .iter()
            .map(|&distances| QuadrupletLossTerm {
                distances,
                ref_logits: &l,
                coarse: 1,
                fine: 2,
            })
            .collect();
        let expected: f64 = quads
            .iter()
            .map(|q| joint_loss(q, &l, 1, 2, &h).unwrap())
            .sum();
        let got = combined_loss(&terms, &h).unwrap();
        assert!((got - expected).abs() < TOL);
    }

    #[test]
    fn combined_loss_isolates_global_term() {
        let h = HyperParams {
            lambda_c1: 0.0,
            lambda_c2: 0.0,
            eta: 2.0,
            ..Default::default()
        };
        let l = zero_logits(2, 2);
        // hinges satisfied in every quadruplet but the channels vary
        let quads = [
            QuadrupletDistances::new(0.5, 1.0, 2.0),
            QuadrupletDistances::new(0.6, 1.2, 2.2),
        ];
        let terms: Vec<QuadrupletLossTerm> = quads
            .iter()
            .map(|&distances| QuadrupletLossTerm {
                distances,
                ref_logits: &l,
                coarse: 0,
                fine: 0,
            })
            .collect();
        let expected = 2.0 * global_loss(&quads, &h).unwrap();
        let got = combined_loss(&terms, &h).unwrap();
        assert!((got - expected).abs() < TOL);
    }

    // --- gradient tests ------------------------------------------------

    struct GradFixture {
        embeddings: Vec<[Vec<f64>; 4]>,
        logits: Vec<HeadLogits>,
        labels: Vec<(usize, usize)>,
    }

    impl GradFixture {
        fn terms(&self) -> Vec<QuadrupletGradTerm<'_>> {
            self.embeddings
                .iter()
                .zip(self.logits.iter())
                .zip(self.labels.iter())
                .map(|((e, l), &(coarse, fine))| QuadrupletGradTerm {
                    r: &e[0],
                    pp: &e[1],
                    pm: &e[2],
                    n: &e[3],
                    ref_logits: l,
                    coarse,
                    fine,
                })
                .collect()
        }

        fn loss(&self, h: &HyperParams) -> f64 {
            let terms: Vec<QuadrupletLossTerm> = self
                .embeddings
                .iter()
                .zip(self.logits.iter())
                .zip(self.labels.iter())
                .map(|((e, l), &(coarse, fine))| QuadrupletLossTerm {
                    distances: QuadrupletDistances::from_embeddings(&e[0], &e[1], &e[2], &e[3])
                        .unwrap(),
                    ref_logits: l,
                    coarse,
                    fine,
                })
                .collect();
            combined_loss(&terms, h).unwrap()
        }
    }

    fn fixture() -> GradFixture {
        // two quadruplets in R^3 with all hinges active-ish and distances
        // well away from zero and from hinge kinks
        GradFixture {
            embeddings: vec![
                [
                    vec![0.1, -0.4, 0.9],
                    vec![0.8, 0.2, 0.5],
                    vec![-0.3, 0.6, 1.1],
                    vec![0.4, -0.9, 0.2],
                ],
                [
                    vec![-0.5, 0.3, -0.2],
                    vec![0.9, -0.1, 0.4],
                    vec![-0.8, -0.6, 0.7],
                    vec![0.2, 1.0, -0.9],
                ],
            ],
            logits: vec![
                HeadLogits {
                    coarse_scores: vec![0.2, -0.7],
                    fine_scores: vec![1.1, -0.3, 0.5, 0.0],
                },
                HeadLogits {
                    coarse_scores: vec![-0.4, 0.6],
                    fine_scores: vec![0.3, 0.9, -1.2, 0.4],
                },
            ],
            labels: vec![(0, 1), (1, 3)],
        }
    }

    #[test]
    fn flat_region_has_zero_gradients() {
        let h = HyperParams {
            lambda_c1: 0.0,
            lambda_c2: 0.0,
            eta: 0.0,
            ..Default::default()
        };
        let l = zero_logits(2, 2);
        let (r, pp, pm, n) = (
            vec![0.0, 0.0],
            vec![0.1, 0.0],
            vec![1.0, 0.0],
            vec![3.0, 0.0],
        );
        let term = QuadrupletGradTerm {
            r: &r,
            pp: &pp,
            pm: &pm,
            n: &n,
            ref_logits: &l,
            coarse: 0,
            fine: 0,
        };
        let g = combined_loss_grad(&[term], &h).unwrap();
        for q in &g.quads {
            assert!(q.r.iter().all(|&v| v == 0.0));
            assert!(q.pp.iter().all(|&v| v == 0.0));
            assert!(q.pm.iter().all(|&v| v == 0.0));
            assert!(q.n.iter().all(|&v| v == 0.0));
        }
        assert_eq!(g.singular_distances, 0);
    }

    #[test]
    fn logit_gradients_sum_to_zero_per_head() {
        let h = HyperParams::default();
        let f = fixture();
        let g = combined_loss_grad(&f.terms(), &h).unwrap();
        for q in &g.quads {
            let coarse_sum: f64 = q.coarse_scores.iter().sum();
            let fine_sum: f64 = q.fine_scores.iter().sum();
            assert!(coarse_sum.abs() < TOL);
            assert!(fine_sum.abs() < TOL);
        }
    }

    #[test]
    fn gradients_match_central_finite_differences() {
        let h = HyperParams::default();
        let mut f = fixture();
        let step = 1e-5;
        let analytic = combined_loss_grad(&f.terms(), &h).unwrap();
        assert_eq!(analytic.singular_distances, 0);
        let mut worst = 0.0_f64;
        for quad in 0..f.embeddings.len() {
            for member in 0..4 {
                for i in 0..f.embeddings[quad][member].len() {
                    let orig = f.embeddings[quad][member][i];
                    f.embeddings[quad][member][i] = orig + step;
                    let plus = f.loss(&h);
                    f.embeddings[quad][member][i] = orig - step;
                    let minus = f.loss(&h);
                    f.embeddings[quad][member][i] = orig;
                    let fd = (plus - minus) / (2.0 * step);
                    let a = match member {
                        0 => analytic.quads[quad].r[i],
                        1 => analytic.quads[quad].pp[i],
                        2 => analytic.quads[quad].pm[i],
                        _ => analytic.quads[quad].n[i],
                    };
                    worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
                }
            }
        }
        for quad in 0..f.logits.len() {
            for head in 0..2 {
                let len = if head == 0 {
                    f.logits[quad].coarse_scores.len()
                } else {
                    f.logits[quad].fine_scores.len()
                };
                for i in 0..len {
                    let set = |f: &mut GradFixture, v: f64| {
                        if head == 0 {
                            f.logits[quad].coarse_scores[i] = v;
                        } else {
                            f.logits[quad].fine_scores[i] = v;
                        }
                    };
                    let orig = if head == 0 {
                        f.logits[quad].coarse_scores[i]
                    } else {
                        f.logits[quad].fine_scores[i]
                    };
                    set(&mut f, orig + step);
                    let plus = f.loss(&h);
                    set(&mut f, orig - step);
                    let minus = f.loss(&h);
                    set(&mut f, orig);
                    let fd = (plus - minus) / (2.0 * step);
                    let a = if head == 0 {
                        analytic.quads[quad].coarse_scores[i]
                    } else {
                        analytic.quads[quad].fine_scores[i]
                    };
                    worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(1e-6));
                }
            }
        }
        assert!(worst <= 1e-4, "max relative error {worst}");
    }

    #[test]
    fn coincident_points_are_flagged_and_contribute_zero() {
        let h = HyperParams::default();
        let l = zero_logits(2, 2);
        // d_rpm = 0.2 < m1 - m2 keeps the first hinge active, so the
        // coincident P+ pair's distance gradient is genuinely required
        let (r, pm, n) = (vec![0.5, 0.5], vec![0.7, 0.5], vec![0.6, 0.45]);
        let pp = r.clone(); // coincident with the reference
        let term = QuadrupletGradTerm {
            r: &r,
            pp: &pp,
            pm: &pm,
            n: &n,
            ref_logits: &l,
            coarse: 0,
            fine: 0,
        };
        let g = combined_loss_grad(&[term], &h).unwrap();
        assert!(g.singular_distances >= 1);
        assert!(g.quads[0].pp.iter().all(|&v| v == 0.0));
        assert!(g.loss.is_finite());
    }
}
