//! Browser bindings for the quadnet demo page.
//!
//! Three interactive operations, all returning JSON strings the page
//! renders onto canvases:
//!
//! - [`MiningDemo`]: a 2-D labeled point cloud; pick a reference and a
//!   strategy and watch which negative and positives get selected,
//!   together with the selection sphere of radius `D(R,N)`.
//! - [`TrainingDemo`]: a live training loop with a 2-D embedding head,
//!   stepped one epoch at a time; reports the loss curve, zero-shot test
//!   Recall@1, and the current test embeddings.
//! - [`joint_hinge_curve`]: the two ratio hinges of the joint loss as a
//!   function of `D(R,P-)` for chosen margins and fixed other distances.

use quadnet::core::{EmbeddingSet, HyperParams, QuadrupletIdx};
use quadnet::data::{generate_synthetic, split_zero_shot, Dataset, SyntheticSpec};
use quadnet::encoder::{
    backward, embed_dataset, sgd_momentum_step, EncoderArch, EncoderParams, TrainConfig,
    TrainingQuadruplet,
};
use quadnet::error::Error;
use quadnet::eval::recall_at_k;
use quadnet::losses::joint_hinges;
use quadnet::mining::{build_quadruplet_batch, mine_for_reference, MiningStrategy, SelectionKind};
use rand::rngs::StdRng;
use rand::SeedableRng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string(value).map_err(|e| Error::Validation(format!("json: {e}")))
}

#[derive(Serialize)]
struct PointJson {
    x: f64,
    y: f64,
    coarse: usize,
    fine: usize,
}

#[derive(Serialize)]
struct MiningJson {
    reference: usize,
    negative: usize,
    pp: usize,
    pm: usize,
    radius: f64,
    d_r_pp: f64,
    d_r_pm: f64,
}

/// A fixed 2-D labeled cloud whose raw coordinates serve as the
/// embedding space for selection.
#[wasm_bindgen]
pub struct MiningDemo {
    set: EmbeddingSet,
}

impl MiningDemo {
    fn build(
        seed: u64,
        coarse_classes: usize,
        fines_per_coarse: usize,
        samples_per_fine: usize,
    ) -> Result<MiningDemo, Error> {
        let spec = SyntheticSpec {
            coarse_classes,
            fines_per_coarse,
            samples_per_fine,
            input_dim: 2,
            coarse_center_scale: 3.0,
            fine_center_scale: 1.1,
            noise_scale: 0.35,
            seed,
        };
        let ds = generate_synthetic(&spec)?;
        Ok(MiningDemo {
            set: ds.as_embedding_set(),
        })
    }

    fn points_string(&self) -> Result<String, Error> {
        let points: Vec<PointJson> = (0..self.set.len())
            .map(|i| PointJson {
                x: self.set.row(i)[0],
                y: self.set.row(i)[1],
                coarse: self.set.coarse(i),
                fine: self.set.fine(i),
            })
            .collect();
        to_json(&points)
    }

    fn mine_string(&self, reference: usize, strategy: &str, seed: u64) -> Result<String, Error> {
        if reference >= self.set.len() {
            return Err(Error::Validation(format!(
                "reference index {reference} out of range for {} points",
                self.set.len()
            )));
        }
        let kind: SelectionKind = strategy.parse()?;
        let mut rng = StdRng::seed_from_u64(seed);
        let quad: QuadrupletIdx = mine_for_reference(reference, &self.set, kind, &mut rng)?;
        let dist = |a: usize, b: usize| {
            quadnet::l2_distance(self.set.row(a), self.set.row(b)).expect("same dim")
        };
        to_json(&MiningJson {
            reference,
            negative: quad.n,
            pp: quad.pp,
            pm: quad.pm,
            radius: dist(reference, quad.n),
            d_r_pp: dist(reference, quad.pp),
            d_r_pm: dist(reference, quad.pm),
        })
    }
}

#[wasm_bindgen]
impl MiningDemo {
    /// Generates the cloud: `coarse_classes` groups of `fines_per_coarse`
    /// fine classes with `samples_per_fine` points each.
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u64,
        coarse_classes: usize,
        fines_per_coarse: usize,
        samples_per_fine: usize,
    ) -> Result<MiningDemo, JsValue> {
        Self::build(seed, coarse_classes, fines_per_coarse, samples_per_fine).map_err(js_err)
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    /// All points as `[{x, y, coarse, fine}, ...]`.
    pub fn points_json(&self) -> Result<String, JsValue> {
        self.points_string().map_err(js_err)
    }

    /// Mines one quadruplet for `reference` under `strategy`
    /// (`random`, `method1`, or `method2`); `seed` only feeds the
    /// random baseline.
    pub fn mine_json(
        &self,
        reference: usize,
        strategy: &str,
        seed: u64,
    ) -> Result<String, JsValue> {
        self.mine_string(reference, strategy, seed).map_err(js_err)
    }
}

#[derive(Serialize)]
struct EpochJson {
    epoch: usize,
    mean_loss: f64,
    test_recall1: f64,
}

#[derive(Serialize)]
struct EmbeddingJson {
    x: f64,
    y: f64,
    coarse: usize,
    fine: usize,
}

/// A stepping training loop: a small encoder with a 2-D embedding head
/// on a synthetic zero-shot split, advanced one epoch per call so the
/// page can animate the embedding space while it trains.
#[wasm_bindgen]
pub struct TrainingDemo {
    train_set: Dataset,
    test_set: Dataset,
    cfg: TrainConfig,
    params: EncoderParams,
    velocity: EncoderParams,
    mining_rng: StdRng,
    epoch: usize,
}

impl TrainingDemo {
    fn build(seed: u64, strategy: &str, learning_rate: f64) -> Result<TrainingDemo, Error> {
        let kind: SelectionKind = strategy.parse()?;
        let spec = SyntheticSpec {
            coarse_classes: 4,
            fines_per_coarse: 3,
            samples_per_fine: 20,
            input_dim: 10,
            coarse_center_scale: 3.0,
            fine_center_scale: 0.8,
            noise_scale: 0.45,
            seed,
        };
        let ds = generate_synthetic(&spec)?;
        let order: Vec<usize> = (0..ds.hierarchy().fine_count()).collect();
        let split = split_zero_shot(&ds, &order, 6)?;
        let (train_set, test_set) = split.partition(&ds)?;
        let cfg = TrainConfig {
            learning_rate,
            epochs: 1,
            batch_size: 8,
            embedding_dim: 2,
            hidden: vec![32],
            seed,
            strategy: MiningStrategy::new(kind, seed),
            ..Default::default()
        };
        cfg.validate()?;
        let arch = EncoderArch {
            input_dim: train_set.input_dim(),
            hidden: cfg.hidden.clone(),
            embed_dim: cfg.embedding_dim,
            coarse_classes: train_set.hierarchy().coarse_count(),
            fine_classes: train_set.hierarchy().fine_count(),
        };
        let params = EncoderParams::init(&arch, cfg.seed)?;
        let velocity = params.zeros_like();
        let mining_rng = StdRng::seed_from_u64(cfg.strategy.rng_seed);
        Ok(TrainingDemo {
            train_set,
            test_set,
            cfg,
            params,
            velocity,
            mining_rng,
            epoch: 0,
        })
    }

    fn step_epoch_string(&mut self) -> Result<String, Error> {
        let snapshot = embed_dataset(&self.params, &self.train_set, false)?;
        let samples = self.train_set.samples();
        let batches = (self.train_set.len() / self.cfg.batch_size).max(1);
        let mut epoch_loss = 0.0;
        for _ in 0..batches {
            let batch = build_quadruplet_batch(
                &snapshot,
                self.cfg.batch_size,
                &self.cfg.strategy,
                &mut self.mining_rng,
            )?;
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
            let result = backward(&self.params, &quads, &self.cfg.hyper)?;
            if !result.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch,
                    batch: 0,
                });
            }
            sgd_momentum_step(
                &mut self.params,
                &result.grads,
                &mut self.velocity,
                self.cfg.learning_rate,
                self.cfg.momentum,
            );
            epoch_loss += result.loss;
        }
        let embedded = embed_dataset(&self.params, &self.test_set, false)?;
        let recall = recall_at_k(&embedded, 1)?;
        let record = EpochJson {
            epoch: self.epoch,
            mean_loss: epoch_loss / batches as f64,
            test_recall1: recall,
        };
        self.epoch += 1;
        to_json(&record)
    }

    fn test_embeddings_string(&self) -> Result<String, Error> {
        let embedded = embed_dataset(&self.params, &self.test_set, false)?;
        let points: Vec<EmbeddingJson> = (0..embedded.len())
            .map(|i| EmbeddingJson {
                x: embedded.row(i)[0],
                y: embedded.row(i)[1],
                coarse: embedded.coarse(i),
                fine: embedded.fine(i),
            })
            .collect();
        to_json(&points)
    }
}

#[wasm_bindgen]
impl TrainingDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, strategy: &str, learning_rate: f64) -> Result<TrainingDemo, JsValue> {
        Self::build(seed, strategy, learning_rate).map_err(js_err)
    }

    /// Runs one epoch (snapshot refresh, mining, backprop, update) and
    /// returns `{epoch, mean_loss, test_recall1}`.
    pub fn step_epoch_json(&mut self) -> Result<String, JsValue> {
        self.step_epoch_string().map_err(js_err)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Current 2-D embeddings of the held-out test samples.
    pub fn test_embeddings_json(&self) -> Result<String, JsValue> {
        self.test_embeddings_string().map_err(js_err)
    }
}

#[derive(Serialize)]
struct CurveJson {
    xs: Vec<f64>,
    first_hinge: Vec<f64>,
    second_hinge: Vec<f64>,
    total: Vec<f64>,
}

fn joint_hinge_curve_string(
    d_rpp: f64,
    d_rn: f64,
    m1: f64,
    m2: f64,
    max_d_rpm: f64,
    samples: usize,
) -> Result<String, Error> {
    if samples < 2 || !(max_d_rpm > 0.0) {
        return Err(Error::Config(
            "need samples >= 2 and max_d_rpm > 0".into(),
        ));
    }
    let hyper = HyperParams {
        m1,
        m2,
        ..Default::default()
    }
    .validated()?;
    let mut curve = CurveJson {
        xs: Vec::with_capacity(samples),
        first_hinge: Vec::with_capacity(samples),
        second_hinge: Vec::with_capacity(samples),
        total: Vec::with_capacity(samples),
    };
    for i in 0..samples {
        let d_rpm = max_d_rpm * i as f64 / (samples - 1) as f64;
        let q = quadnet::losses::QuadrupletDistances::new(d_rpp, d_rpm, d_rn);
        let (h1, h2) = joint_hinges(&q, &hyper)?;
        curve.xs.push(d_rpm);
        curve.first_hinge.push(h1);
        curve.second_hinge.push(h2);
        curve.total.push(h1 + h2);
    }
    to_json(&curve)
}

/// Samples the two joint-loss hinges over `d_rpm` in `[0, max_d_rpm]`
/// with `d_rpp`, `d_rn`, and the margins fixed.
#[wasm_bindgen]
pub fn joint_hinge_curve(
    d_rpp: f64,
    d_rn: f64,
    m1: f64,
    m2: f64,
    max_d_rpm: f64,
    samples: usize,
) -> Result<String, JsValue> {
    joint_hinge_curve_string(d_rpp, d_rn, m1, m2, max_d_rpm, samples).map_err(js_err)
}
