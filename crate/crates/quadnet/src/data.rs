//! Synthetic hierarchical datasets, zero-shot splits, and file I/O.
//!
//! Two line-oriented text formats live here. Floats are written with
//! Rust's shortest round-trip formatting, so `load(save(x)) == x` exactly.
//!
//! Dataset files:
//!
//! ```text
//! quadnet-dataset v1
//! dims <n> coarse <k1> fine <k2>
//! parents <coarse id of fine 0> ... <coarse id of fine k2-1>
//! <id> <coarse> <fine> <x_0> ... <x_{n-1}>        (one line per sample)
//! ```
//!
//! Embedding files:
//!
//! ```text
//! quadnet-embeddings v1
//! rows <N> dim <k>
//! <id> <coarse> <fine> <v_0> ... <v_{k-1}>        (one line per row)
//! ```

use crate::core::{EmbeddingSet, LabelHierarchy, LabeledSample};
use crate::error::{Error, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Shape and noise parameters of a synthetic hierarchical dataset.
///
/// Coarse class centers are isotropic Gaussian draws scaled by
/// `coarse_center_scale`; each fine center is its coarse center plus a
/// Gaussian draw scaled by `fine_center_scale`; each sample is its fine
/// center plus Gaussian noise scaled by `noise_scale`. Nothing enforces
/// fine scatter below coarse scatter, so overlap is configurable.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub coarse_classes: usize,
    pub fines_per_coarse: usize,
    pub samples_per_fine: usize,
    pub input_dim: usize,
    pub coarse_center_scale: f64,
    pub fine_center_scale: f64,
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            coarse_classes: 4,
            fines_per_coarse: 3,
            samples_per_fine: 20,
            input_dim: 8,
            coarse_center_scale: 4.0,
            fine_center_scale: 1.5,
            noise_scale: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 coarse classes, got {}",
                self.coarse_classes
            )));
        }
        for (name, v) in [
            ("fines_per_coarse", self.fines_per_coarse),
            ("samples_per_fine", self.samples_per_fine),
            ("input_dim", self.input_dim),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        for (name, v) in [
            ("coarse_center_scale", self.coarse_center_scale),
            ("fine_center_scale", self.fine_center_scale),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config(format!(
                "noise_scale must be >= 0, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

/// An owned set of labeled samples plus the hierarchy they live in.
/// Construction validates label consistency, so a `Dataset` in hand is
/// structurally sound.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
    hierarchy: LabelHierarchy,
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>, hierarchy: LabelHierarchy) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("dataset has no samples".into()));
        }
        let dim = samples[0].features.len();
        if dim == 0 {
            return Err(Error::Validation("input dimension must be >= 1".into()));
        }
        let mut seen_ids: Vec<usize> = samples.iter().map(|s| s.id).collect();
        seen_ids.sort_unstable();
        if seen_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate sample ids".into()));
        }
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim,
                    right: s.features.len(),
                });
            }
            if let Some(v) = s.features.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!(
                    "sample {} contains non-finite value {v}",
                    s.id
                )));
            }
            let parent = hierarchy.parent_of(s.fine)?;
            if s.coarse != parent {
                return Err(Error::Validation(format!(
                    "sample {} has coarse class {} but fine class {} belongs to coarse class {parent}",
                    s.id, s.coarse, s.fine
                )));
            }
        }
        Ok(Self { samples, hierarchy })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn hierarchy(&self) -> &LabelHierarchy {
        &self.hierarchy
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.samples[0].features.len()
    }

    /// Samples whose fine class is in `fines`, under the same (full)
    /// hierarchy. Errors if nothing matches.
    pub fn subset_by_fines(&self, fines: &[usize]) -> Result<Dataset> {
        let keep: Vec<LabeledSample> = self
            .samples
            .iter()
            .filter(|s| fines.contains(&s.fine))
            .cloned()
            .collect();
        if keep.is_empty() {
            return Err(Error::Validation(
                "no samples left after fine-class filtering".into(),
            ));
        }
        Dataset::new(keep, self.hierarchy.clone())
    }

    /// The raw inputs viewed as an embedding set (identity embedding).
    pub fn as_embedding_set(&self) -> EmbeddingSet {
        let rows = self.samples.iter().map(|s| s.features.clone()).collect();
        let labels = self.samples.iter().map(|s| (s.coarse, s.fine)).collect();
        let ids = self.samples.iter().map(|s| s.id).collect();
        EmbeddingSet::from_rows(rows, labels, ids).expect("dataset rows are valid")
    }
}

/// Deterministic synthetic dataset per `spec`; identical seeds give
/// identical datasets.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let n = spec.input_dim;
    let gauss_vec = |scale: f64, rng: &mut StdRng| -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    };

    let coarse_centers: Vec<Vec<f64>> = (0..spec.coarse_classes)
        .map(|_| gauss_vec(spec.coarse_center_scale, &mut rng))
        .collect();
    let mut fine_centers = Vec::with_capacity(spec.coarse_classes * spec.fines_per_coarse);
    let mut parent = Vec::with_capacity(spec.coarse_classes * spec.fines_per_coarse);
    for (c, center) in coarse_centers.iter().enumerate() {
        for _ in 0..spec.fines_per_coarse {
            let offset = gauss_vec(spec.fine_center_scale, &mut rng);
            let fine_center: Vec<f64> = center.iter().zip(&offset).map(|(a, b)| a + b).collect();
            fine_centers.push(fine_center);
            parent.push(c);
        }
    }

    let hierarchy = LabelHierarchy::new(spec.coarse_classes, parent)?;
    let mut samples = Vec::with_capacity(fine_centers.len() * spec.samples_per_fine);
    let mut id = 0usize;
    for (fine, center) in fine_centers.iter().enumerate() {
        let coarse = hierarchy.parent_of(fine)?;
        for _ in 0..spec.samples_per_fine {
            let noise = gauss_vec(spec.noise_scale, &mut rng);
            let features: Vec<f64> = center.iter().zip(&noise).map(|(a, b)| a + b).collect();
            samples.push(LabeledSample {
                id,
                features,
                coarse,
                fine,
            });
            id += 1;
        }
    }
    Dataset::new(samples, hierarchy)
}

/// Disjoint train/test partition of the fine classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroShotSplit {
    pub train_fines: Vec<usize>,
    pub test_fines: Vec<usize>,
}

impl ZeroShotSplit {
    /// Materializes the two datasets. Train and test share no fine class
    /// by construction.
    pub fn partition(&self, ds: &Dataset) -> Result<(Dataset, Dataset)> {
        Ok((
            ds.subset_by_fines(&self.train_fines)?,
            ds.subset_by_fines(&self.test_fines)?,
        ))
    }
}

/// Splits the fine classes: the first `train_count` ids of
/// `ordered_fines` train, the rest test. `ordered_fines` must be a
/// permutation of all fine ids of the dataset.
pub fn split_zero_shot(
    ds: &Dataset,
    ordered_fines: &[usize],
    train_count: usize,
) -> Result<ZeroShotSplit> {
    let k2 = ds.hierarchy().fine_count();
    let mut sorted: Vec<usize> = ordered_fines.to_vec();
    sorted.sort_unstable();
    if sorted != (0..k2).collect::<Vec<_>>() {
        return Err(Error::Validation(format!(
            "fine id ordering must be a permutation of 0..{k2}"
        )));
    }
    if train_count < 1 || train_count >= k2 {
        return Err(Error::Config(format!(
            "train_count must be in [1, {k2}), got {train_count}"
        )));
    }
    Ok(ZeroShotSplit {
        train_fines: ordered_fines[..train_count].to_vec(),
        test_fines: ordered_fines[train_count..].to_vec(),
    })
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

const DATASET_MAGIC: &str = "quadnet-dataset v1";
const EMBEDDINGS_MAGIC: &str = "quadnet-embeddings v1";

/// Writes a dataset in the documented line format.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>, s: String| -> Result<()> {
        writeln!(w, "{s}").map_err(|e| io_err(path, e))
    };
    write(&mut w, DATASET_MAGIC.to_string())?;
    write(
        &mut w,
        format!(
            "dims {} coarse {} fine {}",
            ds.input_dim(),
            ds.hierarchy().coarse_count(),
            ds.hierarchy().fine_count()
        ),
    )?;
    let parents: Vec<String> = ds.hierarchy().parents().iter().map(|p| p.to_string()).collect();
    write(&mut w, format!("parents {}", parents.join(" ")))?;
    for s in ds.samples() {
        let values: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
        write(
            &mut w,
            format!("{} {} {} {}", s.id, s.coarse, s.fine, values.join(" ")),
        )?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

struct LineReader {
    lines: Vec<(usize, String)>,
    pos: usize,
}

impl LineReader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut lines = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if !line.trim().is_empty() {
                lines.push((i + 1, line));
            }
        }
        Ok(Self { lines, pos: 0 })
    }

    fn next(&mut self) -> Option<(usize, &str)> {
        let item = self.lines.get(self.pos)?;
        self.pos += 1;
        Some((item.0, item.1.as_str()))
    }
}

fn parse_usize(path: &Path, line: usize, tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("expected {what}, got {tok:?}")))
}

fn parse_f64(path: &Path, line: usize, tok: &str, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("expected {what}, got {tok:?}")))
}

/// Reads a dataset saved by [`save_dataset`]. Malformed lines are
/// reported with their 1-based line number; label inconsistencies are
/// validation errors.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut r = LineReader::open(path)?;
    let (line, magic) = r
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty dataset file"))?;
    if magic != DATASET_MAGIC {
        return Err(parse_err(
            path,
            line,
            format!("expected header {DATASET_MAGIC:?}, got {magic:?}"),
        ));
    }
    let (line, dims) = r
        .next()
        .ok_or_else(|| parse_err(path, line, "missing dims header"))?;
    let toks: Vec<&str> = dims.split_whitespace().collect();
    if toks.len() != 6 || toks[0] != "dims" || toks[2] != "coarse" || toks[4] != "fine" {
        return Err(parse_err(
            path,
            line,
            "expected `dims <n> coarse <k1> fine <k2>`",
        ));
    }
    let n = parse_usize(path, line, toks[1], "input dimension")?;
    let k1 = parse_usize(path, line, toks[3], "coarse class count")?;
    let k2 = parse_usize(path, line, toks[5], "fine class count")?;

    let (line, parents_line) = r
        .next()
        .ok_or_else(|| parse_err(path, line, "missing parents line"))?;
    let toks: Vec<&str> = parents_line.split_whitespace().collect();
    if toks.first() != Some(&"parents") || toks.len() != k2 + 1 {
        return Err(parse_err(
            path,
            line,
            format!("expected `parents` followed by {k2} coarse ids"),
        ));
    }
    let mut parent = Vec::with_capacity(k2);
    for tok in &toks[1..] {
        parent.push(parse_usize(path, line, tok, "coarse id")?);
    }
    let hierarchy = LabelHierarchy::new(k1, parent)?;

    let mut samples = Vec::new();
    let mut last_line = line;
    while let Some((line, record)) = r.next() {
        last_line = line;
        let toks: Vec<&str> = record.split_whitespace().collect();
        if toks.len() != 3 + n {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 label fields plus {n} values, got {} fields", toks.len()),
            ));
        }
        let id = parse_usize(path, line, toks[0], "sample id")?;
        let coarse = parse_usize(path, line, toks[1], "coarse id")?;
        let fine = parse_usize(path, line, toks[2], "fine id")?;
        let mut features = Vec::with_capacity(n);
        for tok in &toks[3..] {
            features.push(parse_f64(path, line, tok, "feature value")?);
        }
        samples.push(LabeledSample {
            id,
            features,
            coarse,
            fine,
        });
    }
    if samples.is_empty() {
        return Err(parse_err(path, last_line, "dataset file has no samples"));
    }
    Dataset::new(samples, hierarchy)
}

/// Writes an embedding set in the documented line format.
pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{EMBEDDINGS_MAGIC}").map_err(|e| io_err(path, e))?;
    writeln!(w, "rows {} dim {}", set.len(), set.dim()).map_err(|e| io_err(path, e))?;
    for i in 0..set.len() {
        let values: Vec<String> = set.row(i).iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{} {} {} {}",
            set.id(i),
            set.coarse(i),
            set.fine(i),
            values.join(" ")
        )
        .map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads an embedding set saved by [`save_embeddings`].
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let mut r = LineReader::open(path)?;
    let (line, magic) = r
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty embeddings file"))?;
    if magic != EMBEDDINGS_MAGIC {
        return Err(parse_err(
            path,
            line,
            format!("expected header {EMBEDDINGS_MAGIC:?}, got {magic:?}"),
        ));
    }
    let (line, header) = r
        .next()
        .ok_or_else(|| parse_err(path, line, "missing rows header"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 4 || toks[0] != "rows" || toks[2] != "dim" {
        return Err(parse_err(path, line, "expected `rows <N> dim <k>`"));
    }
    let n_rows = parse_usize(path, line, toks[1], "row count")?;
    let dim = parse_usize(path, line, toks[3], "dimension")?;

    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    let mut ids = Vec::with_capacity(n_rows);
    while let Some((line, record)) = r.next() {
        let toks: Vec<&str> = record.split_whitespace().collect();
        if toks.len() != 3 + dim {
            return Err(parse_err(
                path,
                line,
                format!("expected 3 label fields plus {dim} values, got {} fields", toks.len()),
            ));
        }
        ids.push(parse_usize(path, line, toks[0], "sample id")?);
        let coarse = parse_usize(path, line, toks[1], "coarse id")?;
        let fine = parse_usize(path, line, toks[2], "fine id")?;
        labels.push((coarse, fine));
        let mut row = Vec::with_capacity(dim);
        for tok in &toks[3..] {
            row.push(parse_f64(path, line, tok, "embedding value")?);
        }
        rows.push(row);
    }
    if rows.len() != n_rows {
        return Err(parse_err(
            path,
            1,
            format!("header declares {n_rows} rows but file has {}", rows.len()),
        ));
    }
    EmbeddingSet::from_rows(rows, labels, ids)
}
