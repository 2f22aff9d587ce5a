//! The nine forecasting networks and their on-disk weight format.
//!
//! Layer accounting: every conv/dense unit counts as one layer, batch
//! normalization and activations do not. Residual networks add a 1×1
//! projection on the first skip and a two-unit head (1×1 squeeze, then the
//! 3×3 output conv); Cascade heads see the raw input plus every block output.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use hvfcast_nn::{Activation, BatchNormState, BatchStats, Graph, Mode, NnError, ParamId, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hvf::{GRID_CELLS, GRID_COLS, GRID_ROWS};
use crate::seed::sha256_hex;

pub const CANONICAL_WIDTHS: [usize; 3] = [64, 128, 256];
pub const FORMAT_VERSION: &str = "1";
const MANIFEST_FILE: &str = "manifest.json";
const BLOB_FILE: &str = "weights.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    FullyConnected,
    FullBN,
    Residual,
    Cascade,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::FullyConnected => "FullyConnected",
            Family::FullBN => "FullBN",
            Family::Residual => "Residual",
            Family::Cascade => "Cascade",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Number of three-conv blocks; `None` for the fully connected network.
    pub depth_k: Option<usize>,
    pub widths: [usize; 3],
    pub in_channels: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(family: Family, depth_k: Option<usize>, widths: [usize; 3], in_channels: usize, seed: u64) -> Self {
        ModelSpec {
            family,
            depth_k,
            widths,
            in_channels,
            batch_size: 32,
            lr: 1e-3,
            seed,
        }
    }

    /// Parses names such as `FullBN-5`, `Cascade-3` or `FullyConnected`.
    pub fn from_name(name: &str, widths: [usize; 3], in_channels: usize, seed: u64) -> Result<Self, ArchError> {
        if name == "FullyConnected" || name == "FC" {
            return Ok(Self::new(Family::FullyConnected, None, widths, in_channels, seed));
        }
        let (fam, k) = name
            .split_once('-')
            .ok_or_else(|| ArchError::Spec(format!("unknown architecture {name:?}")))?;
        let family = match fam {
            "FullBN" => Family::FullBN,
            "Residual" => Family::Residual,
            "Cascade" => Family::Cascade,
            _ => return Err(ArchError::Spec(format!("unknown family {fam:?}"))),
        };
        let k = k
            .parse()
            .map_err(|_| ArchError::Spec(format!("bad depth in {name:?}")))?;
        let spec = Self::new(family, Some(k), widths, in_channels, seed);
        spec.validate()?;
        Ok(spec)
    }

    pub fn name(&self) -> String {
        match self.depth_k {
            Some(k) => format!("{}-{k}", self.family.name()),
            None => self.family.name().to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ArchError> {
        if self.widths.contains(&0) {
            return Err(ArchError::Spec("widths must be positive".into()));
        }
        if self.in_channels == 0 {
            return Err(ArchError::Spec("in_channels must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ArchError::Spec("batch_size must be at least 1".into()));
        }
        match (self.family, self.depth_k) {
            (Family::FullyConnected, None) => Ok(()),
            (Family::FullyConnected, Some(_)) => Err(ArchError::Spec("FullyConnected takes no depth".into())),
            (_, Some(k)) if k >= 1 => Ok(()),
            (f, _) => Err(ArchError::Spec(format!("{} needs depth_k >= 1", f.name()))),
        }
    }

    /// Hidden width of the fully connected network.
    pub fn fc_hidden(&self) -> usize {
        8 * self.widths[2]
    }

    /// Names of the fields that differ in architecture (seed and optimizer
    /// settings are ignored).
    pub fn structural_diff(&self, other: &ModelSpec) -> Vec<&'static str> {
        let mut d = Vec::new();
        if self.family != other.family {
            d.push("family");
        }
        if self.depth_k != other.depth_k {
            d.push("depth_k");
        }
        if self.widths != other.widths {
            d.push("widths");
        }
        if self.in_channels != other.in_channels {
            d.push("in_channels");
        }
        d
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// The nine candidate networks in table order.
pub fn candidate_specs(widths: [usize; 3], in_channels: usize, seed: u64) -> Vec<ModelSpec> {
    let mut v = vec![ModelSpec::new(Family::FullyConnected, None, widths, in_channels, seed)];
    for k in [3, 5, 7] {
        v.push(ModelSpec::new(Family::FullBN, Some(k), widths, in_channels, seed));
    }
    for k in [3, 5, 7] {
        v.push(ModelSpec::new(Family::Residual, Some(k), widths, in_channels, seed));
    }
    for k in [3, 5] {
        v.push(ModelSpec::new(Family::Cascade, Some(k), widths, in_channels, seed));
    }
    v
}

pub fn count_layers(spec: &ModelSpec) -> usize {
    let k = spec.depth_k.unwrap_or(0);
    match spec.family {
        Family::FullyConnected => 2,
        Family::FullBN | Family::Cascade => 3 * k + 1,
        Family::Residual => 3 * k + 3,
    }
}

#[derive(Debug, Error)]
pub enum ArchError {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("spec mismatch in {}", .0.join(", "))]
    SpecMismatch(Vec<&'static str>),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("unsupported version {0:?}")]
    UnsupportedVersion(String),
    #[error("length mismatch: manifest expects {expected} bytes, blob has {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("checksum mismatch: manifest {expected}, blob {actual}")]
    Checksum { expected: String, actual: String },
    #[error("shape mismatch in layer `{layer}`: {detail}")]
    LayerShape { layer: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchError + '_ {
    move |source| ArchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone)]
struct BnRef {
    gamma: ParamId,
    beta: ParamId,
    state: usize,
}

#[derive(Debug, Clone)]
struct Unit {
    w: ParamId,
    b: ParamId,
    bn: Option<BnRef>,
    act: Activation,
}

#[derive(Debug, Clone)]
enum Topology {
    Dense {
        hidden: Unit,
        out: Unit,
    },
    Sequential {
        blocks: Vec<Vec<Unit>>,
        head: Unit,
    },
    Residual {
        blocks: Vec<Vec<Unit>>,
        projection: Unit,
        squeeze: Unit,
        head: Unit,
    },
    Cascade {
        blocks: Vec<Vec<Unit>>,
        head: Unit,
    },
}

/// A built network: parameters, batch-norm running statistics and wiring.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub bn_states: Vec<BatchNormState>,
    bn_names: Vec<String>,
    topology: Topology,
}

struct Builder {
    params: ParamSet,
    bn_states: Vec<BatchNormState>,
    bn_names: Vec<String>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn he_uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let limit = (6.0 / fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-limit..=limit)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape matches data")
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, bn: bool, act: Activation) -> Unit {
        let w = self.he_uniform(&[cout, cin, kernel, kernel], cin * kernel * kernel);
        let w = self.params.insert(format!("{name}.weight"), w).expect("unique name");
        let b = self
            .params
            .insert(format!("{name}.bias"), Tensor::zeros(&[cout]))
            .expect("unique name");
        let bn = bn.then(|| {
            let gamma = self
                .params
                .insert(format!("{name}.bn.gamma"), Tensor::filled(&[cout], 1.0))
                .expect("unique name");
            let beta = self
                .params
                .insert(format!("{name}.bn.beta"), Tensor::zeros(&[cout]))
                .expect("unique name");
            self.bn_states.push(BatchNormState::new(cout));
            self.bn_names.push(format!("{name}.bn"));
            BnRef {
                gamma,
                beta,
                state: self.bn_states.len() - 1,
            }
        });
        Unit { w, b, bn, act }
    }

    fn dense(&mut self, name: &str, fin: usize, fout: usize, act: Activation) -> Unit {
        let w = self.he_uniform(&[fout, fin], fin);
        let w = self.params.insert(format!("{name}.weight"), w).expect("unique name");
        let b = self
            .params
            .insert(format!("{name}.bias"), Tensor::zeros(&[fout]))
            .expect("unique name");
        Unit { w, b, bn: None, act }
    }

    /// One block of three conv→BN→relu units.
    fn block(&mut self, j: usize, cin: usize, widths: [usize; 3]) -> Vec<Unit> {
        let mut cin = cin;
        let mut units = Vec::with_capacity(3);
        for (i, &w) in widths.iter().enumerate() {
            units.push(self.conv(&format!("block{j}.conv{}", i + 1), cin, w, 3, true, Activation::Relu));
            cin = w;
        }
        units
    }
}

pub fn build_model(spec: &ModelSpec) -> Result<Model, ArchError> {
    spec.validate()?;
    let mut b = Builder {
        params: ParamSet::new(),
        bn_states: Vec::new(),
        bn_names: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let [_, _, w2] = spec.widths;
    let cin = spec.in_channels;
    let k = spec.depth_k.unwrap_or(0);
    let topology = match spec.family {
        Family::FullyConnected => {
            let hidden = b.dense("dense1", cin * GRID_CELLS, spec.fc_hidden(), Activation::Relu);
            let out = b.dense("dense2", spec.fc_hidden(), GRID_CELLS, Activation::Linear);
            Topology::Dense { hidden, out }
        }
        Family::FullBN => {
            let blocks = (1..=k)
                .map(|j| b.block(j, if j == 1 { cin } else { w2 }, spec.widths))
                .collect();
            let head = b.conv("head", w2, 1, 3, false, Activation::Linear);
            Topology::Sequential { blocks, head }
        }
        Family::Residual => {
            let projection = b.conv("skip1.proj", cin, w2, 1, false, Activation::Linear);
            let blocks = (1..=k)
                .map(|j| b.block(j, if j == 1 { cin } else { w2 }, spec.widths))
                .collect();
            let squeeze = b.conv("head.squeeze", w2, spec.widths[0], 1, true, Activation::Relu);
            let head = b.conv("head", spec.widths[0], 1, 3, false, Activation::Linear);
            Topology::Residual {
                blocks,
                projection,
                squeeze,
                head,
            }
        }
        Family::Cascade => {
            let blocks = (1..=k).map(|j| b.block(j, cin + (j - 1) * w2, spec.widths)).collect();
            let head = b.conv("head", cin + k * w2, 1, 3, false, Activation::Linear);
            Topology::Cascade { blocks, head }
        }
    };
    Ok(Model {
        spec: spec.clone(),
        params: b.params,
        bn_states: b.bn_states,
        bn_names: b.bn_names,
        topology,
    })
}

/// Input channel count of each Cascade block (empty for other families).
pub fn cascade_block_inputs(spec: &ModelSpec) -> Vec<usize> {
    match (spec.family, spec.depth_k) {
        (Family::Cascade, Some(k)) => (0..k).map(|j| spec.in_channels + j * spec.widths[2]).collect(),
        _ => Vec::new(),
    }
}

/// Forward pass recorded on a caller-owned graph, with the per-BN batch
/// statistics a training step should fold into the running state.
pub struct Forward {
    pub output: Var,
    pub batch_stats: Vec<BatchStats>,
}

impl Model {
    pub fn count_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn count_layers(&self) -> usize {
        count_layers(&self.spec)
    }

    fn unit(&self, g: &mut Graph, x: Var, u: &Unit, mode: Mode, stats: &mut Vec<BatchStats>) -> Result<Var, ArchError> {
        let w = g.param(&self.params, u.w);
        let b = g.param(&self.params, u.b);
        let Some(bn) = &u.bn else {
            return Ok(g.conv2d(x, w, b, u.act)?);
        };
        let y = g.conv2d(x, w, b, Activation::Linear)?;
        let gamma = g.param(&self.params, bn.gamma);
        let beta = g.param(&self.params, bn.beta);
        let state = &self.bn_states[bn.state];
        let y = match mode {
            Mode::Train => {
                let (y, s) = g.batch_norm_train(y, gamma, beta, state.eps)?;
                stats.push(s);
                y
            }
            Mode::Infer => g.batch_norm_infer(y, gamma, beta, state)?,
        };
        Ok(g.activate(y, u.act))
    }

    fn run_block(&self, g: &mut Graph, x: Var, block: &[Unit], mode: Mode, stats: &mut Vec<BatchStats>) -> Result<Var, ArchError> {
        block.iter().try_fold(x, |h, u| self.unit(g, h, u, mode, stats))
    }

    /// Records the network on `g`.
    pub fn forward_on(&self, g: &mut Graph, x: Var, mode: Mode) -> Result<Forward, ArchError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1] != self.spec.in_channels || shape[2] != GRID_ROWS || shape[3] != GRID_COLS {
            return Err(ArchError::Nn(NnError::Shape(format!(
                "{} expects input (B, {}, {GRID_ROWS}, {GRID_COLS}), got {shape:?}",
                self.spec.name(),
                self.spec.in_channels
            ))));
        }
        let batch = shape[0];
        let mut stats = Vec::new();
        let output = match &self.topology {
            Topology::Dense { hidden, out } => {
                let flat = g.reshape(x, &[batch, self.spec.in_channels * GRID_CELLS])?;
                let (w, b) = (g.param(&self.params, hidden.w), g.param(&self.params, hidden.b));
                let h = g.dense(flat, w, b, hidden.act)?;
                let (w, b) = (g.param(&self.params, out.w), g.param(&self.params, out.b));
                let y = g.dense(h, w, b, out.act)?;
                g.reshape(y, &[batch, 1, GRID_ROWS, GRID_COLS])?
            }
            Topology::Sequential { blocks, head } => {
                let mut h = x;
                for block in blocks {
                    h = self.run_block(g, h, block, mode, &mut stats)?;
                }
                self.unit(g, h, head, mode, &mut stats)?
            }
            Topology::Residual {
                blocks,
                projection,
                squeeze,
                head,
            } => {
                let mut h = x;
                for (j, block) in blocks.iter().enumerate() {
                    let skip = if j == 0 {
                        self.unit(g, h, projection, mode, &mut stats)?
                    } else {
                        h
                    };
                    let body = self.run_block(g, h, block, mode, &mut stats)?;
                    h = g.add(body, skip)?;
                }
                let s = self.unit(g, h, squeeze, mode, &mut stats)?;
                self.unit(g, s, head, mode, &mut stats)?
            }
            Topology::Cascade { blocks, head } => {
                let mut feeds = vec![x];
                for block in blocks {
                    let input = if feeds.len() == 1 { x } else { g.concat_channels(&feeds)? };
                    let out = self.run_block(g, input, block, mode, &mut stats)?;
                    feeds.push(out);
                }
                let input = g.concat_channels(&feeds)?;
                self.unit(g, input, head, mode, &mut stats)?
            }
        };
        Ok(Forward {
            output,
            batch_stats: stats,
        })
    }

    /// Folds training-pass statistics into the running BN state.
    pub fn update_bn(&mut self, stats: &[BatchStats]) {
        for (state, s) in self.bn_states.iter_mut().zip(stats) {
            state.update(s);
        }
    }

    /// Runs the network. Training mode updates BN running statistics.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor, ArchError> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let f = self.forward_on(&mut g, xv, mode)?;
        if mode == Mode::Train {
            self.update_bn(&f.batch_stats);
        }
        Ok(g.value(f.output).clone())
    }

    /// Pure inference pass.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, ArchError> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let f = self.forward_on(&mut g, xv, Mode::Infer)?;
        Ok(g.value(f.output).clone())
    }

    /// Layer names and shapes in blob order.
    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut v: Vec<(String, Vec<usize>)> = self
            .params
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.shape().to_vec()))
            .collect();
        for (name, s) in self.bn_names.iter().zip(&self.bn_states) {
            v.push((format!("{name}.running_mean"), vec![s.channels()]));
            v.push((format!("{name}.running_var"), vec![s.channels()]));
        }
        v
    }

    /// Parameters followed by BN running statistics, as little-endian f64.
    pub fn weights_blob(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut push = |xs: &[f64]| {
            for x in xs {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        for (_, p) in self.params.iter() {
            push(p.value.data());
        }
        for s in &self.bn_states {
            push(&s.running_mean);
            push(&s.running_var);
        }
        out
    }

    /// SHA-256 of [`Model::weights_blob`].
    pub fn weights_digest(&self) -> String {
        sha256_hex(&self.weights_blob())
    }

    pub fn manifest(&self, provenance: Provenance) -> WeightsManifest {
        let mut offset = 0;
        let entries = self
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let length = shape.iter().product::<usize>() * 8;
                let e = ManifestEntry {
                    name,
                    shape,
                    dtype: "f64le".into(),
                    offset,
                    length,
                };
                offset += length;
                e
            })
            .collect();
        WeightsManifest {
            format_version: FORMAT_VERSION.into(),
            spec: self.spec.clone(),
            entries,
            provenance,
            sha256: self.weights_digest(),
        }
    }

    /// Writes `manifest.json` and `weights.bin` into `dir` (created if
    /// needed), each via a temporary file and rename.
    pub fn save_weights(&self, dir: &Path, provenance: Provenance) -> Result<WeightsManifest, ArchError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let manifest = self.manifest(provenance);
        let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomic(&dir.join(BLOB_FILE), &self.weights_blob())?;
        write_atomic(&dir.join(MANIFEST_FILE), &json)?;
        Ok(manifest)
    }

    fn assign_blob(&mut self, manifest: &WeightsManifest, blob: &[u8]) -> Result<(), ArchError> {
        let layout = self.layout();
        if layout.len() != manifest.entries.len() {
            return Err(ArchError::Manifest(format!(
                "{} entries for a model with {} layers of state",
                manifest.entries.len(),
                layout.len()
            )));
        }
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(layout.len());
        for ((name, shape), e) in layout.iter().zip(&manifest.entries) {
            if &e.name != name || &e.shape != shape {
                return Err(ArchError::LayerShape {
                    layer: e.name.clone(),
                    detail: format!("expected `{name}` {shape:?}, manifest has {:?}", e.shape),
                });
            }
            if e.dtype != "f64le" || e.length != shape.iter().product::<usize>() * 8 {
                return Err(ArchError::LayerShape {
                    layer: e.name.clone(),
                    detail: format!("dtype {} with {} bytes", e.dtype, e.length),
                });
            }
            let bytes = blob
                .get(e.offset..e.offset + e.length)
                .ok_or(ArchError::LengthMismatch {
                    expected: e.offset + e.length,
                    actual: blob.len(),
                })?;
            values.push(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            );
        }
        let mut it = values.into_iter();
        for p in self.params.iter_mut() {
            p.value.data_mut().copy_from_slice(&it.next().expect("layout length"));
        }
        for s in &mut self.bn_states {
            s.running_mean = it.next().expect("layout length");
            s.running_var = it.next().expect("layout length");
        }
        Ok(())
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArchError> {
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArchError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    write_atomic(path, bytes)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub phase: Option<String>,
    pub bin: Option<f64>,
    pub fold: Option<usize>,
    pub epoch: Option<usize>,
    pub combo: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub format_version: String,
    pub spec: ModelSpec,
    pub entries: Vec<ManifestEntry>,
    pub provenance: Provenance,
    pub sha256: String,
}

impl WeightsManifest {
    pub fn total_length(&self) -> usize {
        self.entries.iter().map(|e| e.length).sum()
    }
}

/// Rebuilds a model from a manifest/blob pair held in memory.
pub fn model_from_parts(manifest: &WeightsManifest, blob: &[u8]) -> Result<Model, ArchError> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(ArchError::UnsupportedVersion(manifest.format_version.clone()));
    }
    let mut expected = 0;
    for e in &manifest.entries {
        if e.offset != expected {
            return Err(ArchError::Manifest(format!("entry `{}` is not contiguous", e.name)));
        }
        expected += e.length;
    }
    if blob.len() != expected {
        return Err(ArchError::LengthMismatch {
            expected,
            actual: blob.len(),
        });
    }
    let actual = sha256_hex(blob);
    if actual != manifest.sha256 {
        return Err(ArchError::Checksum {
            expected: manifest.sha256.clone(),
            actual,
        });
    }
    let mut m = build_model(&manifest.spec)?;
    m.assign_blob(manifest, blob)?;
    Ok(m)
}

pub fn read_manifest(dir: &Path) -> Result<WeightsManifest, ArchError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| ArchError::Manifest(e.to_string()))?;
    if let Some(ver) = v.get("format_version").and_then(|x| x.as_str()) {
        if ver != FORMAT_VERSION {
            return Err(ArchError::UnsupportedVersion(ver.to_string()));
        }
    }
    serde_json::from_value(v).map_err(|e| ArchError::Manifest(e.to_string()))
}

pub fn load_weights(dir: &Path) -> Result<(Model, WeightsManifest), ArchError> {
    let manifest = read_manifest(dir)?;
    let path = dir.join(BLOB_FILE);
    let blob = fs::read(&path).map_err(io_err(&path))?;
    let m = model_from_parts(&manifest, &blob)?;
    Ok((m, manifest))
}

/// Returns `dst` carrying `src`'s parameters and BN statistics. Optimizer
/// moments are not part of a model, so training after a transfer starts
/// from fresh Adam state.
pub fn transfer_weights(src: &Model, dst: &Model) -> Result<Model, ArchError> {
    let diff = src.spec.structural_diff(&dst.spec);
    if !diff.is_empty() {
        return Err(ArchError::SpecMismatch(diff));
    }
    let mut out = dst.clone();
    out.params = src.params.clone();
    out.params.zero_grads();
    out.bn_states = src.bn_states.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(family: Family, k: Option<usize>, cin: usize) -> ModelSpec {
        ModelSpec::new(family, k, [4, 8, 12], cin, 17)
    }

    fn random_input(batch: usize, cin: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = batch * cin * GRID_CELLS;
        Tensor::new(vec![batch, cin, GRID_ROWS, GRID_COLS], (0..n).map(|_| rng.random_range(0.0..35.0)).collect()).unwrap()
    }

    #[test]
    fn layer_counts_follow_the_table() {
        let expected = [2, 10, 16, 22, 12, 18, 24, 10, 16];
        let got: Vec<usize> = candidate_specs(CANONICAL_WIDTHS, 1, 0).iter().map(count_layers).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn cascade_concat_arithmetic() {
        let spec = ModelSpec::new(Family::Cascade, Some(3), CANONICAL_WIDTHS, 2, 0);
        assert_eq!(cascade_block_inputs(&spec), vec![2, 258, 514]);
        let m = build_model(&spec).unwrap();
        let w = m.params.get(m.params.id("block3.conv1.weight").unwrap());
        assert_eq!(w.value.shape(), &[64, 514, 3, 3]);
    }

    #[test]
    fn parameter_count_examples() {
        let spec = tiny(Family::FullBN, Some(1), 1);
        let m = build_model(&spec).unwrap();
        // conv 1→4, 4→8, 8→12 with BN, head 12→1
        let expect = (9 * 4 + 4 + 8) + (36 * 8 + 8 + 16) + (72 * 12 + 12 + 24) + (108 + 1);
        assert_eq!(m.count_parameters(), expect);
        assert_eq!(9 * 64 + 64, 640);

        let fc = build_model(&tiny(Family::FullyConnected, None, 1)).unwrap();
        let h = 96;
        assert_eq!(fc.count_parameters(), 72 * h + h + h * 72 + 72);
    }

    #[test]
    fn every_family_outputs_one_grid() {
        for spec in candidate_specs([4, 8, 12], 3, 5) {
            let spec = ModelSpec {
                depth_k: spec.depth_k.map(|_| 1),
                ..spec
            };
            let mut m = build_model(&spec).unwrap();
            let x = random_input(2, 3, 1);
            assert_eq!(m.forward(&x, Mode::Train).unwrap().shape(), &[2, 1, 8, 9]);
            let a = m.predict(&x).unwrap();
            let b = m.predict(&x).unwrap();
            assert_eq!(a, b);
            assert!(m.predict(&random_input(2, 2, 1)).is_err());
        }
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut m = build_model(&tiny(Family::Cascade, Some(2), 1)).unwrap();
        for name in ["head.weight", "head.bias"] {
            let id = m.params.id(name).unwrap();
            m.params.get_mut(id).value.data_mut().fill(0.0);
        }
        let y = m.predict(&random_input(3, 1, 2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_seeded() {
        let a = build_model(&tiny(Family::Residual, Some(2), 1)).unwrap();
        let b = build_model(&tiny(Family::Residual, Some(2), 1)).unwrap();
        assert_eq!(a.weights_digest(), b.weights_digest());
        let c = build_model(&ModelSpec {
            seed: 18,
            ..tiny(Family::Residual, Some(2), 1)
        })
        .unwrap();
        assert_ne!(a.weights_digest(), c.weights_digest());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = build_model(&tiny(Family::Cascade, Some(2), 2)).unwrap();
        let x = random_input(4, 2, 3);
        m.forward(&x, Mode::Train).unwrap();
        let manifest = m.save_weights(dir.path(), Provenance::default()).unwrap();
        assert_eq!(manifest.total_length(), m.weights_blob().len());
        let (back, _) = load_weights(dir.path()).unwrap();
        assert_eq!(back.weights_blob(), m.weights_blob());
        assert_eq!(back.spec, m.spec);
        let (p, q) = (m.predict(&x).unwrap(), back.predict(&x).unwrap());
        assert!(p.data().iter().zip(q.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_model(&tiny(Family::FullBN, Some(1), 1)).unwrap();
        let manifest = m.save_weights(dir.path(), Provenance::default()).unwrap();
        let blob = m.weights_blob();

        let err = model_from_parts(&manifest, &blob[..blob.len() - 8]).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");

        let mut v2 = manifest.clone();
        v2.format_version = "2".into();
        assert!(model_from_parts(&v2, &blob).unwrap_err().to_string().contains("unsupported version"));

        let mut flipped = blob.clone();
        flipped[0] ^= 1;
        assert!(model_from_parts(&manifest, &flipped).unwrap_err().to_string().contains("checksum"));

        let mut reshaped = manifest.clone();
        reshaped.entries[0].shape = vec![4, 1, 1, 9];
        let err = model_from_parts(&reshaped, &blob).unwrap_err().to_string();
        assert!(err.contains("block1.conv1.weight"), "{err}");

        let mut on_disk = serde_json::to_value(&manifest).unwrap();
        on_disk["format_version"] = "2".into();
        fs::write(dir.path().join(MANIFEST_FILE), on_disk.to_string()).unwrap();
        assert!(load_weights(dir.path()).unwrap_err().to_string().contains("unsupported version"));
    }

    #[test]
    fn transfer_copies_state() {
        let mut src = build_model(&tiny(Family::Residual, Some(1), 2)).unwrap();
        let x = random_input(3, 2, 4);
        src.forward(&x, Mode::Train).unwrap();
        let dst = build_model(&ModelSpec {
            seed: 99,
            ..src.spec.clone()
        })
        .unwrap();
        let t = transfer_weights(&src, &dst).unwrap();
        assert_eq!(t.predict(&x).unwrap(), src.predict(&x).unwrap());
        assert_eq!(t.spec.seed, 99);

        let other = build_model(&tiny(Family::Residual, Some(1), 3)).unwrap();
        let err = transfer_weights(&src, &other).unwrap_err().to_string();
        assert!(err.contains("in_channels"), "{err}");
    }

    #[test]
    fn names_round_trip() {
        for spec in candidate_specs([4, 8, 12], 1, 0) {
            let back = ModelSpec::from_name(&spec.name(), spec.widths, 1, 0).unwrap();
            assert_eq!(back, spec);
        }
        assert!(ModelSpec::from_name("DenseNet-3", [4, 8, 12], 1, 0).is_err());
    }
}
