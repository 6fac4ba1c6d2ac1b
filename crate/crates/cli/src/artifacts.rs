//! On-disk formats. Every artifact carries the hash of the configuration
//! stage that produced it.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use base64::Engine as _;
use bpgnn::bp::{Split, TraceDataset};
use bpgnn::gnn::{Architecture, DynamicalParams, StructuralParams};
use bpgnn::pgm::GaussianPgm;
use bpgnn::train::{EnsembleMetrics, TrainedEnsemble};
use bpgnn::translator::{GraphTranslator, TranslatorSplit};
use nalgebra::DMatrix;
use ndarray::Array3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const VERSION: u32 = 1;
const ALIGN: usize = 64;

pub fn pgm_path(dir: &Path, g: usize) -> PathBuf {
    dir.join(format!("pgm_{g:03}.json"))
}

pub fn traces_path(dir: &Path, g: usize) -> PathBuf {
    dir.join(format!("traces_{g:03}.bin"))
}

pub fn traces_manifest_path(dir: &Path, g: usize) -> PathBuf {
    dir.join(format!("traces_{g:03}.json"))
}

/// Writes through a temporary file so a failed command leaves no partial artifact.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("writing {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_required(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        bail!("missing artifact: expected {}", path.display());
    }
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_required(path)?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
}

impl Header {
    pub fn new(format: &str, config_hash: &str) -> Self {
        Self {
            format: format.into(),
            version: VERSION,
            config_hash: config_hash.into(),
        }
    }

    pub fn check(&self, format: &str, expected_hash: &str, path: &Path, force: bool) -> Result<()> {
        if self.format != format {
            bail!("{}: expected a {format} artifact, found {}", path.display(), self.format);
        }
        if self.version != VERSION {
            bail!("{}: unsupported format version {}", path.display(), self.version);
        }
        if self.config_hash != expected_hash && !force {
            bail!(
                "{}: produced by config {} but the current config hashes to {expected_hash}; rerun the producing command or pass --force",
                path.display(),
                self.config_hash
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PgmFile {
    #[serde(flatten)]
    header: Header,
    pgm_id: usize,
    n: usize,
    epsilon: f64,
    /// Row-major little-endian f64, base64.
    precision: String,
}

pub fn save_pgm(path: &Path, pgm_id: usize, pgm: &GaussianPgm, hash: &str) -> Result<()> {
    let n = pgm.n();
    let mut raw = Vec::with_capacity(n * n * 8);
    for i in 0..n {
        for j in 0..n {
            raw.extend_from_slice(&pgm.precision()[(i, j)].to_le_bytes());
        }
    }
    write_json(
        path,
        &PgmFile {
            header: Header::new("bpgnn-pgm", hash),
            pgm_id,
            n,
            epsilon: pgm.epsilon(),
            precision: base64::engine::general_purpose::STANDARD.encode(raw),
        },
    )
}

pub fn load_pgm(path: &Path, hash: &str, force: bool) -> Result<(usize, GaussianPgm)> {
    let f: PgmFile = read_json(path)?;
    f.header.check("bpgnn-pgm", hash, path, force)?;
    let raw = base64::engine::general_purpose::STANDARD
        .decode(&f.precision)
        .with_context(|| format!("{}: bad precision encoding", path.display()))?;
    if raw.len() != f.n * f.n * 8 {
        bail!("{}: precision holds {} bytes, expected {}", path.display(), raw.len(), f.n * f.n * 8);
    }
    let values: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let a = DMatrix::from_row_slice(f.n, f.n, &values);
    let pgm = GaussianPgm::new(a, f.epsilon).with_context(|| format!("{}: invalid precision matrix", path.display()))?;
    Ok((f.pgm_id, pgm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub dtype: String,
    /// `(trial, vertex, time)`
    pub shape: [usize; 3],
    /// Byte offset into the data file; a multiple of 64.
    pub offset: usize,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceManifest {
    #[serde(flatten)]
    pub header: Header,
    pub pgm_id: usize,
    pub data_file: String,
    pub splits: Vec<Split>,
    pub blocks: Vec<Block>,
}

/// Stores inputs, targets and noiseless reference as aligned f32 blocks.
pub fn save_traces(dir: &Path, g: usize, ds: &TraceDataset, hash: &str) -> Result<()> {
    let data_path = traces_path(dir, g);
    let shape = [ds.trials(), ds.n(), ds.duration()];
    let mut data = Vec::new();
    let mut blocks = Vec::new();
    for (name, array) in [("inputs", &ds.inputs), ("targets", &ds.targets), ("reference", &ds.reference)] {
        data.resize(data.len().next_multiple_of(ALIGN), 0);
        let offset = data.len();
        for v in array.iter() {
            data.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        blocks.push(Block {
            name: name.into(),
            dtype: "f32le".into(),
            shape,
            offset,
            bytes: data.len() - offset,
        });
    }
    write_atomic(&data_path, &data)?;
    write_json(
        &traces_manifest_path(dir, g),
        &TraceManifest {
            header: Header::new("bpgnn-traces", hash),
            pgm_id: ds.pgm_id,
            data_file: data_path.file_name().expect("file").to_string_lossy().into_owned(),
            splits: ds.splits.clone(),
            blocks,
        },
    )
}

pub fn load_traces(dir: &Path, g: usize, hash: &str, force: bool) -> Result<TraceDataset> {
    let manifest_path = traces_manifest_path(dir, g);
    let m: TraceManifest = read_json(&manifest_path)?;
    m.header.check("bpgnn-traces", hash, &manifest_path, force)?;
    let data = read_required(&dir.join(&m.data_file))?;
    let block = |name: &str| -> Result<Array3<f64>> {
        let b = m
            .blocks
            .iter()
            .find(|b| b.name == name)
            .with_context(|| format!("{}: no {name} block", manifest_path.display()))?;
        let count = b.shape.iter().product::<usize>();
        if b.dtype != "f32le" || b.offset % ALIGN != 0 || b.bytes != count * 4 || b.offset + b.bytes > data.len() {
            bail!("{}: malformed {name} block", manifest_path.display());
        }
        let values = data[b.offset..b.offset + b.bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Ok(Array3::from_shape_vec((b.shape[0], b.shape[1], b.shape[2]), values)?)
    };
    let ds = TraceDataset {
        pgm_id: m.pgm_id,
        inputs: block("inputs")?,
        targets: block("targets")?,
        reference: block("reference")?,
        splits: m.splits.clone(),
    };
    ds.validate().with_context(|| format!("{}: inconsistent dataset", manifest_path.display()))?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub pgm_ids: Vec<usize>,
    pub best_step: usize,
    pub steps_run: usize,
    pub metrics: EnsembleMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(flatten)]
    pub header: Header,
    pub arch: Architecture,
    pub dynamical: DynamicalParams,
    pub structural: Vec<StructuralParams>,
    pub training: TrainingMetadata,
}

impl Checkpoint {
    pub fn from_ensemble(ens: &TrainedEnsemble, hash: &str) -> Self {
        Self {
            header: Header::new("bpgnn-checkpoint", hash),
            arch: ens.arch.clone(),
            dynamical: ens.dynamical.clone(),
            structural: ens.structural.clone(),
            training: TrainingMetadata {
                pgm_ids: ens.pgm_ids.clone(),
                best_step: ens.best_step,
                steps_run: ens.steps_run,
                metrics: ens.metrics.clone(),
            },
        }
    }

    pub fn model(&self, g: usize) -> bpgnn::gnn::GnnModel {
        bpgnn::gnn::GnnModel {
            arch: self.arch.clone(),
            dynamical: self.dynamical.clone(),
            structural: self.structural[g].clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path, hash: &str, force: bool) -> Result<Self> {
        let c: Self = read_json(path)?;
        c.header.check("bpgnn-checkpoint", hash, path, force)?;
        c.dynamical.check(&c.arch).with_context(|| format!("{}: dynamical parameters", path.display()))?;
        for (g, s) in c.structural.iter().enumerate() {
            s.check(&c.arch, s.n()).with_context(|| format!("{}: structural parameters of graph {g}", path.display()))?;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslatorFile {
    #[serde(flatten)]
    pub header: Header,
    pub split: TranslatorSplit,
    pub translator: GraphTranslator,
}

impl TranslatorFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path, hash: &str, force: bool) -> Result<Self> {
        let t: Self = read_json(path)?;
        t.header.check("bpgnn-translator", hash, path, force)?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructedFile {
    #[serde(flatten)]
    pub header: Header,
    pub graphs: Vec<usize>,
    pub structural: Vec<StructuralParams>,
}

impl ConstructedFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path, hash: &str, force: bool) -> Result<Self> {
        let t: Self = read_json(path)?;
        t.header.check("bpgnn-constructed", hash, path, force)?;
        Ok(t)
    }
}

/// CSV with a header row, written atomically.
pub fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    write_atomic(path, &bytes)
}

/// CSV from explicit header and rows of already-formatted fields.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
    write_atomic(path, &bytes)
}
