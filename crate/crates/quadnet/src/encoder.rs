//! A small fully connected encoder with one embedding head and two
//! classification heads, trained by analytic backpropagation.
//!
//! One parameter store serves all four quadruplet streams; members are
//! encoded by plain forward calls against the same weights, so sharing is
//! structural. The trunk is a stack of fully connected layers with a
//! leaky rectifier (slope 0.01) between them; the three heads are linear
//! maps from the last trunk activation.

use crate::core::{EmbeddingSet, HyperParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval;
use crate::losses::{
    combined_loss, combined_loss_grad, HeadLogits, QuadrupletDistances, QuadrupletGradTerm,
    QuadrupletLossTerm,
};
use crate::mining::{build_quadruplet_batch, MiningStrategy, SelectionKind};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const LEAKY_SLOPE: f64 = 0.01;

fn activate(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

// derivative at the kink takes the nonnegative branch
fn activate_deriv(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// One fully connected layer, `out_dim x in_dim` weights in row-major
/// order plus a bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LinearLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    fn init(in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut draw = || bound * (2.0 * rng.random::<f64>() - 1.0);
        Self {
            in_dim,
            out_dim,
            weights: (0..in_dim * out_dim).map(|_| draw()).collect(),
            biases: (0..out_dim).map(|_| draw()).collect(),
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut out = self.biases.clone();
        for (o, out_v) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            *out_v += acc;
        }
        out
    }

    /// Accumulates `d_out (x) input` into the weight gradient and `d_out`
    /// into the bias gradient, and returns this layer's input gradient.
    fn backward(&self, input: &[f64], d_out: &[f64], grad: &mut LinearLayer) -> Vec<f64> {
        let mut d_in = vec![0.0; self.in_dim];
        for (o, &dy) in d_out.iter().enumerate() {
            grad.biases[o] += dy;
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let grad_row = &mut grad.weights[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                grad_row[i] += dy * input[i];
                d_in[i] += dy * row[i];
            }
        }
        d_in
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Layer sizes of an encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub coarse_classes: usize,
    pub fine_classes: usize,
}

impl EncoderArch {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("coarse_classes", self.coarse_classes),
            ("fine_classes", self.fine_classes),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.hidden.iter().any(|&w| w < 1) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// All weights of the encoder. The same value is also used as the
/// container for gradients and optimizer velocity, which share its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub trunk: Vec<LinearLayer>,
    pub embed_head: LinearLayer,
    pub coarse_head: LinearLayer,
    pub fine_head: LinearLayer,
}

impl EncoderParams {
    /// Seeded initialization: every layer uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(arch: &EncoderArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut trunk = Vec::with_capacity(arch.hidden.len());
        let mut prev = arch.input_dim;
        for &width in &arch.hidden {
            trunk.push(LinearLayer::init(prev, width, &mut rng));
            prev = width;
        }
        Ok(Self {
            trunk,
            embed_head: LinearLayer::init(prev, arch.embed_dim, &mut rng),
            coarse_head: LinearLayer::init(prev, arch.coarse_classes, &mut rng),
            fine_head: LinearLayer::init(prev, arch.fine_classes, &mut rng),
        })
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |l: &LinearLayer| LinearLayer::zeros(l.in_dim, l.out_dim);
        Self {
            trunk: self.trunk.iter().map(zero).collect(),
            embed_head: zero(&self.embed_head),
            coarse_head: zero(&self.coarse_head),
            fine_head: zero(&self.fine_head),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.trunk
            .first()
            .map_or(self.embed_head.in_dim, |l| l.in_dim)
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_head.out_dim
    }

    pub fn coarse_classes(&self) -> usize {
        self.coarse_head.out_dim
    }

    pub fn fine_classes(&self) -> usize {
        self.fine_head.out_dim
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.trunk.iter().map(|l| l.out_dim).collect()
    }

    fn layers(&self) -> Vec<&LinearLayer> {
        let mut v: Vec<&LinearLayer> = self.trunk.iter().collect();
        v.push(&self.embed_head);
        v.push(&self.coarse_head);
        v.push(&self.fine_head);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        let mut v: Vec<&mut LinearLayer> = self.trunk.iter_mut().collect();
        v.push(&mut self.embed_head);
        v.push(&mut self.coarse_head);
        v.push(&mut self.fine_head);
        v
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Scalar at `idx` in the fixed flat order: trunk layers first, then
    /// the embedding, coarse, and fine heads; weights before biases
    /// within each layer.
    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for layer in self.layers() {
            if idx < layer.weights.len() {
                return layer.weights[idx];
            }
            idx -= layer.weights.len();
            if idx < layer.biases.len() {
                return layer.biases[idx];
            }
            idx -= layer.biases.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for layer in self.layers_mut() {
            if idx < layer.weights.len() {
                layer.weights[idx] = value;
                return;
            }
            idx -= layer.weights.len();
            if idx < layer.biases.len() {
                layer.biases[idx] = value;
                return;
            }
            idx -= layer.biases.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.layers().iter().all(|l| {
            l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite())
        })
    }
}

/// Embedding and head scores of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub embedding: Vec<f64>,
    pub logits: HeadLogits,
}

/// Forward pass with cached activations for backpropagation.
pub(crate) struct ForwardTrace {
    /// `acts[0]` is the input, `acts[l]` the activation after trunk
    /// layer `l - 1`.
    acts: Vec<Vec<f64>>,
    /// Preactivations of each trunk layer.
    pres: Vec<Vec<f64>>,
    pub(crate) output: ForwardOutput,
}

impl ForwardTrace {
    /// True when every trunk preactivation clears `margin` in absolute
    /// value; the finite-difference instance filter rejects traces that
    /// straddle the activation kink.
    #[cfg(feature = "testkit")]
    pub(crate) fn preactivations_clear(&self, margin: f64) -> bool {
        self.pres.iter().flatten().all(|&z| z.abs() >= margin)
    }
}

pub(crate) fn forward_traced(p: &EncoderParams, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != p.input_dim() {
        return Err(Error::DimensionMismatch {
            left: p.input_dim(),
            right: x.len(),
        });
    }
    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut pres: Vec<Vec<f64>> = Vec::with_capacity(p.trunk.len());
    for layer in &p.trunk {
        let pre = layer.forward(acts.last().expect("non-empty"));
        let act = pre.iter().map(|&v| activate(v)).collect();
        pres.push(pre);
        acts.push(act);
    }
    let last = acts.last().expect("non-empty");
    let output = ForwardOutput {
        embedding: p.embed_head.forward(last),
        logits: HeadLogits {
            coarse_scores: p.coarse_head.forward(last),
            fine_scores: p.fine_head.forward(last),
        },
    };
    Ok(ForwardTrace { acts, pres, output })
}

/// Deterministic forward pass: embedding plus the two head score vectors.
pub fn forward(p: &EncoderParams, x: &[f64]) -> Result<ForwardOutput> {
    Ok(forward_traced(p, x)?.output)
}

/// Backpropagates head gradients of one sample into `grads`.
fn backprop_sample(
    p: &EncoderParams,
    trace: &ForwardTrace,
    d_embed: &[f64],
    d_coarse: Option<&[f64]>,
    d_fine: Option<&[f64]>,
    grads: &mut EncoderParams,
) {
    let last = trace.acts.last().expect("non-empty");
    let mut d_act = p.embed_head.backward(last, d_embed, &mut grads.embed_head);
    if let Some(d) = d_coarse {
        let extra = p.coarse_head.backward(last, d, &mut grads.coarse_head);
        for (a, b) in d_act.iter_mut().zip(extra.iter()) {
            *a += b;
        }
    }
    if let Some(d) = d_fine {
        let extra = p.fine_head.backward(last, d, &mut grads.fine_head);
        for (a, b) in d_act.iter_mut().zip(extra.iter()) {
            *a += b;
        }
    }
    for l in (0..p.trunk.len()).rev() {
        let d_pre: Vec<f64> = d_act
            .iter()
            .zip(trace.pres[l].iter())
            .map(|(&da, &z)| da * activate_deriv(z))
            .collect();
        d_act = p.trunk[l].backward(&trace.acts[l], &d_pre, &mut grads.trunk[l]);
    }
}

/// Raw inputs of one training quadruplet plus the reference labels.
#[derive(Debug, Clone)]
pub struct TrainingQuadruplet<'a> {
    pub r: &'a [f64],
    pub pp: &'a [f64],
    pub pm: &'a [f64],
    pub n: &'a [f64],
    pub coarse: usize,
    pub fine: usize,
}

/// Loss and parameter gradient of one batch.
#[derive(Debug)]
pub struct BackwardResult {
    pub loss: f64,
    pub grads: EncoderParams,
    pub singular_distances: usize,
}

/// Combined loss of a batch along the value-only path (forward plus the
/// closed-form loss). This is the route the finite-difference check
/// perturbs, independent of the analytic gradients.
pub fn batch_loss(p: &EncoderParams, batch: &[TrainingQuadruplet<'_>], h: &HyperParams) -> Result<f64> {
    let mut outputs = Vec::with_capacity(batch.len());
    for quad in batch {
        let r = forward(p, quad.r)?;
        let pp = forward(p, quad.pp)?;
        let pm = forward(p, quad.pm)?;
        let n = forward(p, quad.n)?;
        outputs.push((r, pp, pm, n));
    }
    let terms: Vec<QuadrupletLossTerm> = outputs
        .iter()
        .zip(batch.iter())
        .map(|((r, pp, pm, n), quad)| {
            Ok(QuadrupletLossTerm {
                distances: QuadrupletDistances::from_embeddings(
                    &r.embedding,
                    &pp.embedding,
                    &pm.embedding,
                    &n.embedding,
                )?,
                ref_logits: &r.logits,
                coarse: quad.coarse,
                fine: quad.fine,
            })
        })
        .collect::<Result<_>>()?;
    combined_loss(&terms, h)
}

/// Gradient of the combined loss with respect to every scalar in `p`,
/// by the chain rule through the shared forward pass. Members are
/// backpropagated in fixed order (per quadruplet: R, P+, P-, N), so the
/// accumulated gradient is bit-reproducible.
pub fn backward(
    p: &EncoderParams,
    batch: &[TrainingQuadruplet<'_>],
    h: &HyperParams,
) -> Result<BackwardResult> {
    if batch.is_empty() {
        return Err(Error::Validation("backward needs at least one quadruplet".into()));
    }
    let traces: Vec<[ForwardTrace; 4]> = batch
        .iter()
        .map(|quad| {
            Ok([
                forward_traced(p, quad.r)?,
                forward_traced(p, quad.pp)?,
                forward_traced(p, quad.pm)?,
                forward_traced(p, quad.n)?,
            ])
        })
        .collect::<Result<_>>()?;
    let terms: Vec<QuadrupletGradTerm> = traces
        .iter()
        .zip(batch.iter())
        .map(|(t, quad)| QuadrupletGradTerm {
            r: &t[0].output.embedding,
            pp: &t[1].output.embedding,
            pm: &t[2].output.embedding,
            n: &t[3].output.embedding,
            ref_logits: &t[0].output.logits,
            coarse: quad.coarse,
            fine: quad.fine,
        })
        .collect();
    let loss_grad = combined_loss_grad(&terms, h)?;

    let mut grads = p.zeros_like();
    for (t, quad_grad) in traces.iter().zip(loss_grad.quads.iter()) {
        backprop_sample(
            p,
            &t[0],
            &quad_grad.r,
            Some(&quad_grad.coarse_scores),
            Some(&quad_grad.fine_scores),
            &mut grads,
        );
        backprop_sample(p, &t[1], &quad_grad.pp, None, None, &mut grads);
        backprop_sample(p, &t[2], &quad_grad.pm, None, None, &mut grads);
        backprop_sample(p, &t[3], &quad_grad.n, None, None, &mut grads);
    }
    Ok(BackwardResult {
        loss: loss_grad.loss,
        grads,
        singular_distances: loss_grad.singular_distances,
    })
}

/// Classic momentum update, in place:
/// `velocity = momentum * velocity + grads; params -= lr * velocity`.
pub fn sgd_momentum_step(
    params: &mut EncoderParams,
    grads: &EncoderParams,
    velocity: &mut EncoderParams,
    learning_rate: f64,
    momentum: f64,
) {
    let g_layers = grads.layers();
    let mut v_layers = velocity.layers_mut();
    let mut p_layers = params.layers_mut();
    assert_eq!(g_layers.len(), p_layers.len());
    for ((p, g), v) in p_layers.iter_mut().zip(g_layers.iter()).zip(v_layers.iter_mut()) {
        assert_eq!(p.weights.len(), g.weights.len(), "shape mismatch");
        for i in 0..p.weights.len() {
            v.weights[i] = momentum * v.weights[i] + g.weights[i];
            p.weights[i] -= learning_rate * v.weights[i];
        }
        for i in 0..p.biases.len() {
            v.biases[i] = momentum * v.biases[i] + g.biases[i];
            p.biases[i] -= learning_rate * v.biases[i];
        }
    }
}

/// Training hyperparameters and loop shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    /// Recompute the mining snapshot every this many epochs.
    pub snapshot_refresh_every: usize,
    /// Opt-in row normalization of every snapshot and evaluation
    /// embedding; distances are unnormalized by default.
    pub normalize_embeddings: bool,
    pub seed: u64,
    pub strategy: MiningStrategy,
    pub hyper: HyperParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.0003,
            momentum: 0.9,
            epochs: 20,
            batch_size: 32,
            embedding_dim: 32,
            hidden: vec![64],
            snapshot_refresh_every: 1,
            normalize_embeddings: false,
            seed: 0,
            strategy: MiningStrategy::new(SelectionKind::Method2, 0),
            hyper: HyperParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.snapshot_refresh_every < 1 {
            return Err(Error::Config("snapshot_refresh_every must be >= 1".into()));
        }
        if self.embedding_dim < 1 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        if self.hidden.iter().any(|&w| w < 1) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        self.hyper.validate()
    }
}

/// Embeds every sample of a dataset, preserving sample order.
pub fn embed_dataset(p: &EncoderParams, ds: &Dataset, normalize: bool) -> Result<EmbeddingSet> {
    let mut rows = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        rows.push(forward(p, &s.features)?.embedding);
    }
    let labels = ds.samples().iter().map(|s| (s.coarse, s.fine)).collect();
    let ids = ds.samples().iter().map(|s| s.id).collect();
    let set = EmbeddingSet::from_rows(rows, labels, ids)?;
    Ok(if normalize { set.l2_normalized() } else { set })
}

/// One epoch of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub recall1: Option<f64>,
    pub nmi: Option<f64>,
}

/// Final parameters plus the per-epoch log.
#[derive(Debug)]
pub struct TrainRun {
    pub params: EncoderParams,
    pub history: Vec<EpochRecord>,
}

/// Optional per-epoch evaluation against a held-out dataset.
#[derive(Debug, Clone, Copy)]
pub struct EvalHook<'a> {
    pub dataset: &'a Dataset,
    /// Evaluate when `(epoch + 1) % every == 0` and on the final epoch;
    /// 0 disables the hook.
    pub every: usize,
    pub kmeans_seed: u64,
}

/// Trains an encoder on `train_set`.
///
/// Each epoch refreshes the embedding snapshot on its cadence, mines
/// `len / batch_size` batches (at least one) from the snapshot, and runs
/// forward, combined loss, backward, and an SGD-momentum step per batch.
/// Deterministic given the config seeds. Aborts with a diagnostic if the
/// loss or any parameter turns non-finite.
pub fn train(train_set: &Dataset, cfg: &TrainConfig, eval: Option<EvalHook<'_>>) -> Result<TrainRun> {
    cfg.validate()?;
    let arch = EncoderArch {
        input_dim: train_set.input_dim(),
        hidden: cfg.hidden.clone(),
        embed_dim: cfg.embedding_dim,
        coarse_classes: train_set.hierarchy().coarse_count(),
        fine_classes: train_set.hierarchy().fine_count(),
    };
    let mut params = EncoderParams::init(&arch, cfg.seed)?;
    let mut velocity = params.zeros_like();
    let mut mining_rng = StdRng::seed_from_u64(cfg.strategy.rng_seed);
    let batches_per_epoch = (train_set.len() / cfg.batch_size).max(1);
    let samples = train_set.samples();

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut snapshot: Option<EmbeddingSet> = None;
    for epoch in 0..cfg.epochs {
        if epoch % cfg.snapshot_refresh_every == 0 || snapshot.is_none() {
            snapshot = Some(embed_dataset(&params, train_set, cfg.normalize_embeddings)?);
        }
        let snap = snapshot.as_ref().expect("snapshot just ensured");
        let mut epoch_loss = 0.0;
        for batch_i in 0..batches_per_epoch {
            let batch = build_quadruplet_batch(snap, cfg.batch_size, &cfg.strategy, &mut mining_rng)?;
            let quads: Vec<TrainingQuadruplet> = batch
                .quads
                .iter()
                .map(|q| TrainingQuadruplet {
                    r: &samples[q.r].features,
                    pp: &samples[q.pp].features,
                    pm: &samples[q.pm].features,
                    n: &samples[q.n].features,
                    coarse: samples[q.r].coarse,
                    fine: samples[q.r].fine,
                })
                .collect();
            let result = backward(&params, &quads, &cfg.hyper)?;
            if !result.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_i,
                });
            }
            sgd_momentum_step(
                &mut params,
                &result.grads,
                &mut velocity,
                cfg.learning_rate,
                cfg.momentum,
            );
            epoch_loss += result.loss;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batches_per_epoch,
            });
        }

        let mut record = EpochRecord {
            epoch,
            mean_loss: epoch_loss / batches_per_epoch as f64,
            recall1: None,
            nmi: None,
        };
        if let Some(hook) = eval {
            let due = hook.every > 0
                && ((epoch + 1) % hook.every == 0 || epoch + 1 == cfg.epochs);
            if due {
                let embedded = embed_dataset(&params, hook.dataset, cfg.normalize_embeddings)?;
                record.recall1 = Some(eval::recall_at_k(&embedded, 1)?);
                let clusters =
                    eval::kmeans(&embedded, embedded.distinct_fine_count(), hook.kmeans_seed)?;
                record.nmi = Some(eval::nmi(&clusters, &embedded.fine_labels())?);
            }
        }
        history.push(record);
    }
    Ok(TrainRun { params, history })
}

/// Worst relative disagreement between analytic and finite-difference
/// parameter gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_coordinate: usize,
    /// Number of coordinates compared.
    pub checked: usize,
}

/// Relative error with an absolute floor, so near-zero coordinate pairs
/// compare by absolute difference.
fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

const FULL_CHECK_LIMIT: usize = 400;
const SUBSET_SIZE: usize = 200;

/// Central finite differences over the parameters (all of them up to
/// 400, otherwise a seeded random subset of 200 coordinates) against
/// [`backward`]. `inject_fault` doubles the largest analytic coordinate
/// before comparison, for validating that the check detects faults.
pub fn grad_check_with_fault(
    p: &EncoderParams,
    batch: &[TrainingQuadruplet<'_>],
    h: &HyperParams,
    step: f64,
    inject_fault: bool,
) -> Result<GradCheckReport> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::Config(format!("step must be > 0, got {step}")));
    }
    let analytic = backward(p, batch, h)?.grads;
    let count = p.param_count();
    let coords: Vec<usize> = if count <= FULL_CHECK_LIMIT {
        (0..count).collect()
    } else {
        // deterministic subset; seed tied to the parameter count
        let mut rng = StdRng::seed_from_u64(0x5eed_c0de ^ count as u64);
        let mut all: Vec<usize> = (0..count).collect();
        for i in (1..all.len()).rev() {
            let j = rng.random_range(0..=i);
            all.swap(i, j);
        }
        let mut subset = all[..SUBSET_SIZE.min(count)].to_vec();
        subset.sort_unstable();
        subset
    };

    let fault_coord = if inject_fault {
        let mut worst = coords[0];
        let mut worst_mag = 0.0f64;
        for &c in &coords {
            let mag = analytic.get_flat(c).abs();
            if mag > worst_mag {
                worst_mag = mag;
                worst = c;
            }
        }
        Some(worst)
    } else {
        None
    };

    let mut work = p.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coordinate: 0,
        checked: coords.len(),
    };
    for &c in &coords {
        let orig = work.get_flat(c);
        work.set_flat(c, orig + step);
        let plus = batch_loss(&work, batch, h)?;
        work.set_flat(c, orig - step);
        let minus = batch_loss(&work, batch, h)?;
        work.set_flat(c, orig);
        let fd = (plus - minus) / (2.0 * step);
        let mut a = analytic.get_flat(c);
        if fault_coord == Some(c) {
            a *= 2.0;
        }
        let err = rel_error(a, fd);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coordinate = c;
        }
    }
    Ok(report)
}

/// [`grad_check_with_fault`] without fault injection.
pub fn grad_check(
    p: &EncoderParams,
    batch: &[TrainingQuadruplet<'_>],
    h: &HyperParams,
    step: f64,
) -> Result<GradCheckReport> {
    grad_check_with_fault(p, batch, h, step, false)
}
