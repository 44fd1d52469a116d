//! Experiment configuration: a single TOML file whose keys mirror the
//! library's hyperparameter and training fields, with every default
//! taken from the library defaults.
//!
//! Seeds resolve from one master `seed`: sections may pin their own,
//! otherwise data generation uses `seed`, encoder initialization
//! `seed + 1`, mining `seed + 2`, and k-means `seed + 3`. A `--seed`
//! override replaces the master seed before derivation.

use quadnet::core::HyperParams;
use quadnet::data::SyntheticSpec;
use quadnet::encoder::TrainConfig;
use quadnet::error::{Error, Result};
use quadnet::mining::{MiningStrategy, SelectionKind};
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub hyper: HyperSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// One of `synthetic`, `dataset`, `embeddings`.
    #[serde(default = "default_source")]
    pub source: String,
    /// File path for the `dataset` and `embeddings` sources.
    #[serde(default)]
    pub path: Option<String>,
    #[serde(default)]
    pub synthetic: SynthSection,
}

fn default_source() -> String {
    "synthetic".into()
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            source: default_source(),
            path: None,
            synthetic: SynthSection::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub coarse_classes: usize,
    pub fines_per_coarse: usize,
    pub samples_per_fine: usize,
    pub input_dim: usize,
    pub coarse_center_scale: f64,
    pub fine_center_scale: f64,
    pub noise_scale: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for SynthSection {
    fn default() -> Self {
        let d = SyntheticSpec::default();
        Self {
            coarse_classes: d.coarse_classes,
            fines_per_coarse: d.fines_per_coarse,
            samples_per_fine: d.samples_per_fine,
            input_dim: d.input_dim,
            coarse_center_scale: d.coarse_center_scale,
            fine_center_scale: d.fine_center_scale,
            noise_scale: d.noise_scale,
            seed: None,
        }
    }
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Number of fine classes that train; the rest are held out. Absent
    /// means no zero-shot split.
    #[serde(default)]
    pub train_fine_count: Option<usize>,
    /// Optional explicit fine-class order; natural order when absent.
    #[serde(default)]
    pub order: Option<Vec<usize>>,
}

macro_rules! hyper_fields {
    ($($name:ident),*) => {
        #[derive(Debug, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct HyperSection {
            $(pub $name: f64,)*
        }

        impl Default for HyperSection {
            fn default() -> Self {
                let d = HyperParams::default();
                Self { $($name: d.$name,)* }
            }
        }

        impl HyperSection {
            fn to_hyper(&self) -> Result<HyperParams> {
                HyperParams { $($name: self.$name,)* }.validated()
            }
        }
    };
}

hyper_fields!(m1, m2, t1, t2, lambda_c1, lambda_c2, lambda_g1, lambda_g2, eta, alpha, m_trip);

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub snapshot_refresh_every: usize,
    pub normalize_embeddings: bool,
    /// Mining strategy: `random`, `method1`, or `method2`.
    pub strategy: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mining_seed: Option<u64>,
    /// Evaluate on the held-out split every this many epochs (0 = off).
    #[serde(default)]
    pub eval_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            epochs: d.epochs,
            batch_size: d.batch_size,
            embedding_dim: d.embedding_dim,
            hidden: d.hidden,
            snapshot_refresh_every: d.snapshot_refresh_every,
            normalize_embeddings: d.normalize_embeddings,
            strategy: d.strategy.kind.to_string(),
            seed: None,
            mining_seed: None,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    #[serde(default)]
    pub method_label: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 2, 4, 8],
            method_label: None,
            seed: None,
        }
    }
}

/// Where the experiment's samples come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    DatasetPath(PathBuf),
    EmbeddingsPath(PathBuf),
}

/// The optional zero-shot split request.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub train_count: usize,
    pub order: Option<Vec<usize>>,
}

/// Fully resolved experiment: every seed pinned, every section validated.
#[derive(Debug)]
pub struct Experiment {
    pub master_seed: u64,
    pub out_dir: Option<PathBuf>,
    pub data: DataSource,
    pub split: Option<SplitSpec>,
    pub train: TrainConfig,
    pub eval_ks: Vec<usize>,
    pub eval_seed: u64,
    pub eval_every: usize,
    pub method_label: Option<String>,
}

pub fn parse_file_config(text: &str) -> Result<FileConfig> {
    toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))
}

pub fn resolve(
    file: FileConfig,
    out_override: Option<PathBuf>,
    seed_override: Option<u64>,
) -> Result<Experiment> {
    let master_seed = seed_override.unwrap_or(file.seed);
    let out_dir = out_override.or_else(|| file.out_dir.as_ref().map(PathBuf::from));

    let data = match file.data.source.as_str() {
        "synthetic" => DataSource::Synthetic(SyntheticSpec {
            coarse_classes: file.data.synthetic.coarse_classes,
            fines_per_coarse: file.data.synthetic.fines_per_coarse,
            samples_per_fine: file.data.synthetic.samples_per_fine,
            input_dim: file.data.synthetic.input_dim,
            coarse_center_scale: file.data.synthetic.coarse_center_scale,
            fine_center_scale: file.data.synthetic.fine_center_scale,
            noise_scale: file.data.synthetic.noise_scale,
            seed: file.data.synthetic.seed.unwrap_or(master_seed),
        }),
        "dataset" => DataSource::DatasetPath(require_path(&file.data.path, "dataset")?),
        "embeddings" => DataSource::EmbeddingsPath(require_path(&file.data.path, "embeddings")?),
        other => {
            return Err(Error::Config(format!(
                "data.source must be synthetic, dataset or embeddings, got {other:?}"
            )))
        }
    };

    let split = file.split.train_fine_count.map(|train_count| SplitSpec {
        train_count,
        order: file.split.order.clone(),
    });

    let hyper = file.hyper.to_hyper()?;
    let kind: SelectionKind = file.train.strategy.parse()?;
    let train = TrainConfig {
        learning_rate: file.train.learning_rate,
        momentum: file.train.momentum,
        epochs: file.train.epochs,
        batch_size: file.train.batch_size,
        embedding_dim: file.train.embedding_dim,
        hidden: file.train.hidden.clone(),
        snapshot_refresh_every: file.train.snapshot_refresh_every,
        normalize_embeddings: file.train.normalize_embeddings,
        seed: file.train.seed.unwrap_or(master_seed.wrapping_add(1)),
        strategy: MiningStrategy::new(
            kind,
            file.train.mining_seed.unwrap_or(master_seed.wrapping_add(2)),
        ),
        hyper,
    };
    train.validate()?;

    if file.eval.ks.is_empty() {
        return Err(Error::Config("eval.ks must not be empty".into()));
    }

    Ok(Experiment {
        master_seed,
        out_dir,
        data,
        split,
        train,
        eval_ks: file.eval.ks.clone(),
        eval_seed: file.eval.seed.unwrap_or(master_seed.wrapping_add(3)),
        eval_every: file.train.eval_every,
        method_label: file.eval.method_label.clone(),
    })
}

fn require_path(path: &Option<String>, source: &str) -> Result<PathBuf> {
    path.as_ref().map(PathBuf::from).ok_or_else(|| {
        Error::Config(format!("data.path is required when data.source = {source:?}"))
    })
}
