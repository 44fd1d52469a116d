//! The five subcommands: gen, train, eval, mine-audit, gradcheck.

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{DataSource, Experiment};
use crate::CliError;
use quadnet::core::EmbeddingSet;
use quadnet::data::{
    generate_synthetic, load_dataset, load_embeddings, save_dataset, split_zero_shot, Dataset,
    SyntheticSpec,
};
use quadnet::encoder::{
    embed_dataset, grad_check_with_fault, train, EncoderArch, EncoderParams, EvalHook,
    TrainingQuadruplet,
};
use quadnet::error::Error;
use quadnet::eval::evaluate;
use quadnet::mining::{build_quadruplet_batch, mine_for_reference, MiningStrategy, SelectionKind,
    DUMP_HEADER, quadruplet_record};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use std::fs;
use std::path::{Path, PathBuf};

type CmdResult = Result<(), CliError>;

fn lib(e: Error) -> CliError {
    CliError::Lib(e)
}

/// Creates the run directory and echoes the config file into it
/// verbatim for provenance.
fn prepare_out_dir(exp: &Experiment, config_text: Option<&str>) -> Result<PathBuf, CliError> {
    let out = exp.out_dir.clone().ok_or_else(|| {
        CliError::Usage("an output directory is required (set out_dir in the config or pass --out)".into())
    })?;
    fs::create_dir_all(&out).map_err(|e| {
        lib(Error::Io {
            path: out.display().to_string(),
            source: e,
        })
    })?;
    if let Some(text) = config_text {
        let echo = out.join("config.toml");
        fs::write(&echo, text).map_err(|e| {
            lib(Error::Io {
                path: echo.display().to_string(),
                source: e,
            })
        })?;
    }
    Ok(out)
}

fn materialize_dataset(exp: &Experiment) -> Result<Dataset, CliError> {
    match &exp.data {
        DataSource::Synthetic(spec) => generate_synthetic(spec).map_err(lib),
        DataSource::DatasetPath(path) => load_dataset(path).map_err(lib),
        DataSource::EmbeddingsPath(_) => Err(CliError::Usage(
            "this command needs raw samples; data.source = \"embeddings\" only supports eval and mine-audit".into(),
        )),
    }
}

fn fine_order(exp: &Experiment, ds: &Dataset) -> Vec<usize> {
    exp.split
        .as_ref()
        .and_then(|s| s.order.clone())
        .unwrap_or_else(|| (0..ds.hierarchy().fine_count()).collect())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| {
        lib(Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

pub fn cmd_gen(exp: &Experiment, config_text: Option<&str>) -> CmdResult {
    let DataSource::Synthetic(spec) = &exp.data else {
        return Err(CliError::Usage(
            "gen requires data.source = \"synthetic\"".into(),
        ));
    };
    // validate before touching the filesystem so a bad spec leaves no file
    spec.validate().map_err(lib)?;
    let ds = generate_synthetic(spec).map_err(lib)?;
    let out = prepare_out_dir(exp, config_text)?;
    let path = out.join("dataset.txt");
    save_dataset(&ds, &path).map_err(lib)?;
    println!(
        "gen: wrote {} ({} samples, {} coarse and {} fine classes, input dim {})",
        path.display(),
        ds.len(),
        ds.hierarchy().coarse_count(),
        ds.hierarchy().fine_count(),
        ds.input_dim()
    );
    Ok(())
}

fn metrics_csv(history: &[quadnet::encoder::EpochRecord]) -> String {
    let mut csv = String::from("epoch,mean_loss,recall1,nmi\n");
    for rec in history {
        let r1 = rec.recall1.map(|v| v.to_string()).unwrap_or_default();
        let nmi = rec.nmi.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{},{}\n", rec.epoch, rec.mean_loss, r1, nmi));
    }
    csv
}

pub fn cmd_train(exp: &Experiment, config_text: Option<&str>) -> CmdResult {
    let ds = materialize_dataset(exp)?;
    let (train_set, test_set) = match &exp.split {
        Some(split) => {
            let order = fine_order(exp, &ds);
            let zs = split_zero_shot(&ds, &order, split.train_count).map_err(lib)?;
            let (train_set, test_set) = zs.partition(&ds).map_err(lib)?;
            (train_set, Some(test_set))
        }
        None => (ds, None),
    };
    let hook = match (&test_set, exp.eval_every) {
        (Some(test), every) if every > 0 => Some(EvalHook {
            dataset: test,
            every,
            kmeans_seed: exp.eval_seed,
        }),
        _ => None,
    };
    let run = train(&train_set, &exp.train, hook).map_err(lib)?;

    let out = prepare_out_dir(exp, config_text)?;
    let ckpt_path = out.join("checkpoint.txt");
    save_checkpoint(&ckpt_path, &run.params, &exp.train).map_err(lib)?;
    let metrics_path = out.join("metrics.csv");
    write_file(&metrics_path, &metrics_csv(&run.history))?;

    let last = run.history.last();
    println!(
        "train: {} epochs on {} samples (strategy {}), final mean loss {}",
        run.history.len(),
        train_set.len(),
        exp.train.strategy.kind,
        last.map_or("n/a".into(), |r| r.mean_loss.to_string()),
    );
    if let Some(r) = last {
        if let (Some(r1), Some(nmi)) = (r.recall1, r.nmi) {
            println!("train: final test R@1 {r1:.4}, NMI {nmi:.4}");
        }
    }
    println!(
        "train: wrote {} and {}",
        ckpt_path.display(),
        metrics_path.display()
    );
    Ok(())
}

pub struct EvalInputs {
    pub embeddings_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    pub label: Option<String>,
}

fn eval_embedding_set(
    exp: &Experiment,
    inputs: &EvalInputs,
) -> Result<(EmbeddingSet, String), CliError> {
    if let Some(path) = &inputs.embeddings_path {
        let set = load_embeddings(path).map_err(lib)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "embeddings".into());
        return Ok((set, label));
    }
    if let Some(ckpt) = &inputs.checkpoint_path {
        let (params, cfg) = load_checkpoint(ckpt).map_err(lib)?;
        let ds = materialize_dataset(exp)?;
        let target = match &exp.split {
            Some(split) => {
                let order = fine_order(exp, &ds);
                let zs = split_zero_shot(&ds, &order, split.train_count).map_err(lib)?;
                zs.partition(&ds).map_err(lib)?.1
            }
            None => ds,
        };
        let set = embed_dataset(&params, &target, cfg.normalize_embeddings).map_err(lib)?;
        return Ok((set, cfg.strategy.kind.to_string()));
    }
    if let DataSource::EmbeddingsPath(path) = &exp.data {
        let set = load_embeddings(path).map_err(lib)?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "embeddings".into());
        return Ok((set, label));
    }
    Err(CliError::Usage(
        "eval needs --embeddings <file>, --checkpoint <file>, or data.source = \"embeddings\"".into(),
    ))
}

pub fn cmd_eval(exp: &Experiment, inputs: &EvalInputs, config_text: Option<&str>) -> CmdResult {
    let (set, derived_label) = eval_embedding_set(exp, inputs)?;
    let label = inputs
        .label
        .clone()
        .or_else(|| exp.method_label.clone())
        .unwrap_or(derived_label);
    let report = evaluate(&set, &exp.eval_ks, exp.eval_seed).map_err(lib)?;

    let out = prepare_out_dir(exp, config_text)?;
    let path = out.join("eval.csv");
    let header = report.csv_header();
    let row = report.csv_row(&label);
    let mut contents = if path.exists() {
        fs::read_to_string(&path).map_err(|e| {
            lib(Error::Io {
                path: path.display().to_string(),
                source: e,
            })
        })?
    } else {
        format!("{header}\n")
    };
    contents.push_str(&row);
    contents.push('\n');
    write_file(&path, &contents)?;

    println!("{header}");
    println!("{row}");
    println!("eval: appended to {}", path.display());
    Ok(())
}

pub struct MineAuditInputs {
    pub strategy: Option<String>,
    pub count: usize,
    pub checkpoint_path: Option<PathBuf>,
}

pub fn cmd_mine_audit(
    exp: &Experiment,
    inputs: &MineAuditInputs,
    config_text: Option<&str>,
) -> CmdResult {
    let snapshot: EmbeddingSet = match (&inputs.checkpoint_path, &exp.data) {
        (Some(ckpt), _) => {
            let (params, cfg) = load_checkpoint(ckpt).map_err(lib)?;
            let ds = materialize_dataset(exp)?;
            embed_dataset(&params, &ds, cfg.normalize_embeddings).map_err(lib)?
        }
        (None, DataSource::EmbeddingsPath(path)) => load_embeddings(path).map_err(lib)?,
        (None, _) => materialize_dataset(exp)?.as_embedding_set(),
    };
    let kind: SelectionKind = match &inputs.strategy {
        Some(s) => s.parse().map_err(lib)?,
        None => exp.train.strategy.kind,
    };
    let strategy = MiningStrategy::new(kind, exp.train.strategy.rng_seed);
    let mut rng = StdRng::seed_from_u64(strategy.rng_seed);

    let mut lines = vec![
        format!(
            "# quadnet mine-audit: strategy {} rng_seed {} snapshot {:016x} rows {}",
            strategy.kind,
            strategy.rng_seed,
            snapshot.fingerprint(),
            snapshot.len()
        ),
        DUMP_HEADER.to_string(),
    ];
    let mut written = 0usize;
    let mut attempts = 0usize;
    let budget = 10 * inputs.count;
    // references draw without replacement unless more quadruplets than
    // rows were requested, mirroring the batch builder
    let with_replacement = inputs.count > snapshot.len();
    let mut order: Vec<usize> = (0..snapshot.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut last_error: Option<Error> = None;
    while written < inputs.count && attempts < budget {
        let r = if cursor < order.len() {
            let r = order[cursor];
            cursor += 1;
            r
        } else if with_replacement {
            use rand::Rng;
            rng.random_range(0..snapshot.len())
        } else {
            break;
        };
        attempts += 1;
        match mine_for_reference(r, &snapshot, strategy.kind, &mut rng) {
            Ok(q) => {
                q.validate(&snapshot).map_err(lib)?;
                lines.push(quadruplet_record(&q, &snapshot));
                written += 1;
            }
            Err(e) => {
                lines.push(format!("# reference {} skipped: {e}", snapshot.id(r)));
                last_error = Some(e);
            }
        }
    }

    let out = prepare_out_dir(exp, config_text)?;
    let path = out.join("quadruplets.txt");
    write_file(&path, &(lines.join("\n") + "\n"))?;
    println!(
        "mine-audit: wrote {written} of {} requested quadruplets to {}",
        inputs.count,
        path.display()
    );
    if written < inputs.count {
        let cause = last_error.unwrap_or_else(|| Error::Degenerate("no mineable reference".into()));
        return Err(lib(Error::Degenerate(format!(
            "only {written} of {} quadruplets mineable within {budget} attempts; last failure: {cause}",
            inputs.count
        ))));
    }
    Ok(())
}

pub struct GradCheckInputs {
    pub threshold: f64,
    pub step: f64,
    pub inject_fault: bool,
}

/// Builds the seeded gradcheck instance: a small synthetic dataset, a
/// method-2 batch mined from the raw features, and a compact encoder.
fn gradcheck_instance(
    exp: &Experiment,
) -> Result<(EncoderParams, Dataset, Vec<quadnet::core::QuadrupletIdx>), CliError> {
    let spec = SyntheticSpec {
        coarse_classes: 2,
        fines_per_coarse: 2,
        samples_per_fine: 4,
        input_dim: 4,
        coarse_center_scale: 2.0,
        fine_center_scale: 1.0,
        noise_scale: 0.6,
        seed: exp.master_seed,
    };
    let ds = generate_synthetic(&spec).map_err(lib)?;
    let snapshot = ds.as_embedding_set();
    let strategy = MiningStrategy::new(SelectionKind::Method2, exp.master_seed.wrapping_add(2));
    let mut rng = StdRng::seed_from_u64(strategy.rng_seed);
    let batch = build_quadruplet_batch(&snapshot, 2, &strategy, &mut rng).map_err(lib)?;
    let arch = EncoderArch {
        input_dim: ds.input_dim(),
        hidden: vec![5],
        embed_dim: 3,
        coarse_classes: ds.hierarchy().coarse_count(),
        fine_classes: ds.hierarchy().fine_count(),
    };
    let params =
        EncoderParams::init(&arch, exp.master_seed.wrapping_add(1)).map_err(lib)?;
    Ok((params, ds, batch.quads))
}

pub fn cmd_gradcheck(exp: &Experiment, inputs: &GradCheckInputs) -> CmdResult {
    let (params, ds, quads) = gradcheck_instance(exp)?;
    let samples = ds.samples();
    let batch: Vec<TrainingQuadruplet> = quads
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
    let report = grad_check_with_fault(
        &params,
        &batch,
        &exp.train.hyper,
        inputs.step,
        inputs.inject_fault,
    )
    .map_err(lib)?;
    println!(
        "gradcheck: max relative error {:.3e} at flat coordinate {} ({} coordinates checked, threshold {:.1e})",
        report.max_rel_error, report.worst_coordinate, report.checked, inputs.threshold
    );
    if report.max_rel_error <= inputs.threshold {
        println!("gradcheck: PASS");
        Ok(())
    } else {
        Err(CliError::Threshold(format!(
            "gradcheck: FAIL, max relative error {:.3e} exceeds threshold {:.1e} at coordinate {}",
            report.max_rel_error, inputs.threshold, report.worst_coordinate
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_file_config, resolve};

    #[test]
    fn gradcheck_default_instance_is_clean() {
        let exp = resolve(parse_file_config("").unwrap(), None, None).unwrap();
        let inputs = GradCheckInputs {
            threshold: 1e-4,
            step: 1e-5,
            inject_fault: false,
        };
        cmd_gradcheck(&exp, &inputs).unwrap();
    }

    #[test]
    fn gradcheck_injected_fault_fails() {
        let exp = resolve(parse_file_config("").unwrap(), None, None).unwrap();
        let inputs = GradCheckInputs {
            threshold: 1e-4,
            step: 1e-5,
            inject_fault: true,
        };
        assert!(matches!(
            cmd_gradcheck(&exp, &inputs),
            Err(CliError::Threshold(_))
        ));
    }
}
