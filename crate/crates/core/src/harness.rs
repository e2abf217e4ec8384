//! A desk-scale task that needs long-range aggregation, and a tiny network
//! to train on it.
//!
//! Each sample is an 8x8 grid of near-zero noise with two marked cells far
//! apart. Each marked cell holds one of `P` orthonormal pattern vectors and
//! the label says whether both cells hold the same one.
//!
//! The network applies a ReLU after the (optional) block and before
//! pooling. Without a block every position only sees its own 3x3
//! neighbourhood, the two neighbourhoods never overlap, and the pooled
//! features are a sum of per-cell terms: a linear head on such a sum cannot
//! express "same pattern". A nonlocal block mixes the whole grid into each
//! position before the nonlinearity.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{block_forward, BlockConfig, BlockParams, BlockTape};
use crate::error::{shape_err, Error, Result};
use crate::graph::FeatureMap;
use crate::io::{read_matrix_file, write_binary_file};
use crate::linalg::Matrix;
use crate::synth;

pub const GRID: usize = 8;
pub const DEFAULT_MIN_SEPARATION: usize = 5;

fn chebyshev_distance(a: usize, b: usize) -> usize {
    let (ra, ca) = (a / GRID, a % GRID);
    let (rb, cb) = (b / GRID, b % GRID);
    ra.abs_diff(rb).max(ca.abs_diff(cb))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: FeatureMap<f64>,
    pub label: usize,
    /// Flat grid indices of the two marked cells.
    pub cells: (usize, usize),
    pub patterns: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedPatchDataset {
    pub samples: Vec<Sample>,
    pub channels: usize,
    pub patterns: usize,
    pub min_separation: usize,
    pub noise: f64,
}

/// Generation settings; `noise` is the half-width of the uniform background.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub channels: usize,
    pub patterns: usize,
    #[serde(default = "default_min_separation")]
    pub min_separation: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_min_separation() -> usize {
    DEFAULT_MIN_SEPARATION
}

fn default_noise() -> f64 {
    0.05
}

impl DatasetSpec {
    pub fn new(n_samples: usize, channels: usize, patterns: usize) -> Self {
        Self {
            n_samples,
            channels,
            patterns,
            min_separation: DEFAULT_MIN_SEPARATION,
            noise: default_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patterns < 2 {
            return Err(Error::Config(format!("need at least 2 patterns, got {}", self.patterns)));
        }
        if self.patterns > self.channels {
            return Err(Error::Config(format!(
                "{} orthogonal patterns do not fit in {} channels",
                self.patterns, self.channels
            )));
        }
        if self.min_separation > GRID - 1 {
            return Err(Error::Config(format!(
                "min_separation {} is impossible on an {GRID}x{GRID} grid",
                self.min_separation
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

pub fn gen_dataset(seed: u64, spec: &DatasetSpec) -> Result<PairedPatchDataset> {
    spec.validate()?;
    let mut rng = synth::rng(seed);
    let n = spec.n_samples;
    let mut labels: Vec<usize> = (0..n).map(|i| usize::from(i < n / 2)).collect();
    labels.shuffle(&mut rng);
    let cells = GRID * GRID;
    let samples = labels
        .into_iter()
        .map(|label| {
            let (a, b) = loop {
                let a = rng.gen_range(0..cells);
                let b = rng.gen_range(0..cells);
                if chebyshev_distance(a, b) >= spec.min_separation.max(1) {
                    break (a, b);
                }
            };
            let pa = rng.gen_range(0..spec.patterns);
            let pb = if label == 1 {
                pa
            } else {
                (pa + rng.gen_range(1..spec.patterns)) % spec.patterns
            };
            let mut values = if spec.noise > 0.0 {
                synth::uniform_matrix(&mut rng, cells, spec.channels, -spec.noise, spec.noise)
            } else {
                Matrix::zeros(cells, spec.channels)
            };
            for (cell, p) in [(a, pa), (b, pb)] {
                let row = values.row_mut(cell);
                row.fill(0.0);
                row[p] = 1.0;
            }
            Sample {
                x: FeatureMap::new(GRID, GRID, values).expect("8x8 grid"),
                label,
                cells: (a, b),
                patterns: (pa, pb),
            }
        })
        .collect();
    Ok(PairedPatchDataset {
        samples,
        channels: spec.channels,
        patterns: spec.patterns,
        min_separation: spec.min_separation,
        noise: spec.noise,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    grid: [usize; 2],
    channels: usize,
    patterns: usize,
    min_separation: usize,
    noise: f64,
    features: String,
    labels: Vec<usize>,
    cells: Vec<[usize; 2]>,
    pattern_ids: Vec<[usize; 2]>,
}

impl PairedPatchDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }

    /// All samples stacked into one `(n * 64) x C` binary matrix plus
    /// `dataset.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut data = Vec::with_capacity(self.len() * GRID * GRID * self.channels);
        for s in &self.samples {
            data.extend_from_slice(s.x.values().as_slice());
        }
        write_binary_file(
            &Matrix::new(self.len() * GRID * GRID, self.channels, data)?,
            dir.join("features.bin"),
        )?;
        let manifest = DatasetManifest {
            grid: [GRID, GRID],
            channels: self.channels,
            patterns: self.patterns,
            min_separation: self.min_separation,
            noise: self.noise,
            features: "features.bin".into(),
            labels: self.samples.iter().map(|s| s.label).collect(),
            cells: self.samples.iter().map(|s| [s.cells.0, s.cells.1]).collect(),
            pattern_ids: self.samples.iter().map(|s| [s.patterns.0, s.patterns.1]).collect(),
        };
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("dataset.json"))?)?;
        let features: Matrix<f64> = read_matrix_file(dir.join(&m.features))?;
        let per = m.grid[0] * m.grid[1];
        if m.grid != [GRID, GRID]
            || features.rows() != m.labels.len() * per
            || features.cols() != m.channels
            || m.cells.len() != m.labels.len()
            || m.pattern_ids.len() != m.labels.len()
        {
            return Err(Error::Format("dataset manifest does not match its features".into()));
        }
        let samples = (0..m.labels.len())
            .map(|i| {
                let rows = features.as_slice()[i * per * m.channels..(i + 1) * per * m.channels].to_vec();
                Ok(Sample {
                    x: FeatureMap::new(GRID, GRID, Matrix::new(per, m.channels, rows)?)?,
                    label: m.labels[i],
                    cells: (m.cells[i][0], m.cells[i][1]),
                    patterns: (m.pattern_ids[i][0], m.pattern_ids[i][1]),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            channels: m.channels,
            patterns: m.patterns,
            min_separation: m.min_separation,
            noise: m.noise,
        })
    }
}

/// 3x3 zero-padded convolution (no bias), optional nonlocal block, ReLU,
/// global average pooling, linear head to two logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyNet {
    pub channels: usize,
    /// `9C x C`; row `(dy * 3 + dx) * C + c_in`.
    pub conv_w: Matrix<f64>,
    pub block: Option<(BlockConfig, BlockParams<f64>)>,
    pub head_w: Matrix<f64>,
    pub head_b: Matrix<f64>,
}

/// Per-parameter gradients, laid out like [`ToyNet`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetGrads {
    conv_w: Matrix<f64>,
    block: Option<BlockParams<f64>>,
    head_w: Matrix<f64>,
    head_b: Matrix<f64>,
}

/// `N x 9C` patches of a zero-padded 3x3 neighbourhood.
fn im2col(x: &FeatureMap<f64>) -> Matrix<f64> {
    let (h, w, c) = (x.height() as isize, x.width() as isize, x.channels());
    let mut out = Matrix::zeros(x.positions(), 9 * c);
    for r in 0..h {
        for col in 0..w {
            let row = out.row_mut((r * w + col) as usize);
            for dy in 0..3isize {
                for dx in 0..3isize {
                    let (rr, cc) = (r + dy - 1, col + dx - 1);
                    if rr < 0 || rr >= h || cc < 0 || cc >= w {
                        continue;
                    }
                    let src = x.values().row((rr * w + cc) as usize);
                    let at = ((dy * 3 + dx) as usize) * c;
                    row[at..at + c].copy_from_slice(src);
                }
            }
        }
    }
    out
}

fn add_row_bias(m: &mut Matrix<f64>, bias: &Matrix<f64>) {
    for i in 0..m.rows() {
        for (v, b) in m.row_mut(i).iter_mut().zip(bias.as_slice()) {
            *v += b;
        }
    }
}

fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let hi = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exps: Vec<f64> = logits.iter().map(|v| (v - hi).exp()).collect();
    let z: f64 = exps.iter().sum();
    let probs: Vec<f64> = exps.iter().map(|e| e / z).collect();
    let loss = -(logits[label] - hi - z.ln());
    (loss, probs)
}

impl ToyNet {
    /// Conv and head uniform in `±1/sqrt(C)`, head bias zero. The block
    /// takes its default projections but random filters in
    /// `±1/sqrt(rows)`: with zero filters the projections get no gradient
    /// until the filters have grown, which stalls training for hundreds of
    /// steps.
    ///
    /// The conv bound ignores the 9x fan-in on purpose: inputs are mostly
    /// zero off the marked cells, so only the centre tap carries signal.
    pub fn new(channels: usize, block: Option<BlockConfig>, seed: u64) -> Result<Self> {
        let mut rng = synth::rng(seed);
        let bound = 1.0 / (channels as f64).sqrt();
        let conv_w = synth::uniform_matrix(&mut rng, 9 * channels, channels, -bound, bound);
        let head_w = synth::uniform_matrix(&mut rng, channels, 2, -bound, bound);
        let block = match block {
            Some(cfg) => {
                if cfg.c_in != channels {
                    return Err(Error::Config(format!(
                        "block c_in {} does not match the network width {channels}",
                        cfg.c_in
                    )));
                }
                let mut bp = BlockParams::init(&cfg, &mut rng)?;
                for f in &mut bp.filters {
                    let b = 1.0 / (f.rows() as f64).sqrt();
                    *f = synth::uniform_matrix(&mut rng, f.rows(), f.cols(), -b, b);
                }
                Some((cfg, bp))
            }
            None => None,
        };
        Ok(Self {
            channels,
            conv_w,
            block,
            head_w,
            head_b: Matrix::zeros(1, 2),
        })
    }

    fn conv(&self, x: &FeatureMap<f64>) -> Result<(Matrix<f64>, FeatureMap<f64>)> {
        if x.channels() != self.channels {
            return shape_err(format!("input has {} channels, net expects {}", x.channels(), self.channels));
        }
        let patches = im2col(x);
        let u = patches.matmul(&self.conv_w)?;
        Ok((patches, x.with_values(u)?))
    }

    /// Output of the convolution, before the block.
    pub fn front(&self, x: &FeatureMap<f64>) -> Result<FeatureMap<f64>> {
        Ok(self.conv(x)?.1)
    }

    /// Mean over positions of `relu(v)`.
    fn pool(&self, v: &Matrix<f64>) -> Matrix<f64> {
        let n = v.rows() as f64;
        let mut pooled = Matrix::zeros(1, self.channels);
        for i in 0..v.rows() {
            for (p, &x) in pooled.as_mut_slice().iter_mut().zip(v.row(i)) {
                *p += x.max(0.0);
            }
        }
        pooled.map(|p| p / n)
    }

    fn head(&self, pooled: &Matrix<f64>) -> Result<Vec<f64>> {
        let mut logits = pooled.matmul(&self.head_w)?;
        add_row_bias(&mut logits, &self.head_b);
        Ok(logits.into_vec())
    }

    /// Mean-pooled post-ReLU features that feed the head.
    pub fn pooled(&self, x: &FeatureMap<f64>) -> Result<Matrix<f64>> {
        let (_, front) = self.conv(x)?;
        let v = match &self.block {
            Some((cfg, p)) => block_forward(&front, cfg, p)?,
            None => front,
        };
        Ok(self.pool(v.values()))
    }

    pub fn logits(&self, x: &FeatureMap<f64>) -> Result<Vec<f64>> {
        self.head(&self.pooled(x)?)
    }

    /// Cross-entropy loss and whether the prediction is correct.
    pub fn evaluate(&self, s: &Sample) -> Result<(f64, bool)> {
        let logits = self.logits(&s.x)?;
        let (loss, _) = softmax_xent(&logits, s.label);
        let pred = usize::from(logits[1] > logits[0]);
        Ok((loss, pred == s.label))
    }

    /// Loss and gradients for one sample.
    pub fn loss_and_grads(&self, s: &Sample) -> Result<(f64, NetGrads)> {
        let (patches, front) = self.conv(&s.x)?;
        let tape = match &self.block {
            Some((cfg, p)) => Some(BlockTape::record(&front, cfg, p)?),
            None => None,
        };
        let v = tape.as_ref().map_or(front.values(), |t| t.output().values());
        let pooled = self.pool(v);
        let logits = self.head(&pooled)?;
        let (loss, probs) = softmax_xent(&logits, s.label);
        let mut d_logits = probs;
        d_logits[s.label] -= 1.0;
        let d_logits = Matrix::new(1, 2, d_logits)?;
        let head_w = pooled.matmul_tn(&d_logits)?;
        let d_pooled = d_logits.matmul_nt(&self.head_w)?;
        let n = v.rows() as f64;
        let d_v = Matrix::from_fn(v.rows(), self.channels, |i, j| {
            if v[(i, j)] > 0.0 {
                d_pooled[(0, j)] / n
            } else {
                0.0
            }
        });
        let (d_u, block) = match &tape {
            Some(t) => {
                let g = t.backward(&d_v)?;
                (g.x, Some(g.params))
            }
            None => (d_v, None),
        };
        let conv_w = patches.matmul_tn(&d_u)?;
        Ok((
            loss,
            NetGrads {
                conv_w,
                block,
                head_w,
                head_b: d_logits,
            },
        ))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix<f64>> {
        let mut out = vec![&mut self.conv_w];
        if let Some((cfg, p)) = &mut self.block {
            out.extend(p.named_mut(cfg).into_iter().map(|(_, m)| m));
        }
        out.push(&mut self.head_w);
        out.push(&mut self.head_b);
        out
    }
}

impl NetGrads {
    fn into_list(self, net: &ToyNet) -> Vec<Matrix<f64>> {
        let mut out = vec![self.conv_w];
        if let (Some(p), Some((cfg, _))) = (self.block, &net.block) {
            out.extend(p.named(cfg).into_iter().map(|(_, m)| m.clone()));
        }
        out.push(self.head_w);
        out.push(self.head_b);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Evaluate on the full training set every this many steps (and after
    /// the last one).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Rescale the batch gradient (all parameters jointly) to at most this
    /// L2 norm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
}

fn default_batch() -> usize {
    32
}

fn default_momentum() -> f64 {
    0.9
}

fn default_eval_every() -> usize {
    100
}

impl TrainOptions {
    pub fn new(steps: usize, lr: f64) -> Self {
        Self {
            steps,
            lr,
            batch_size: default_batch(),
            momentum: default_momentum(),
            eval_every: default_eval_every(),
            clip_norm: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm must be finite and > 0, got {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Mean loss and accuracy over the whole dataset. Samples are evaluated in
/// parallel and reduced in index order.
pub fn evaluate(net: &ToyNet, data: &PairedPatchDataset) -> Result<(f64, f64)> {
    let results = data
        .samples
        .par_iter()
        .map(|s| net.evaluate(s))
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / n;
    let acc = results.iter().filter(|r| r.1).count() as f64 / n;
    Ok((loss, acc))
}

// Inf/NaN produced inside the network during training.
fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Divergence { step, loss: f64::NAN },
        e => e,
    }
}

/// Minibatch SGD with momentum on cross-entropy. Batches walk through a
/// fresh seeded permutation each epoch. Per-sample gradients are computed
/// in parallel and summed in batch order, so the run is bit-reproducible.
pub fn train(net: &mut ToyNet, data: &PairedPatchDataset, opts: &TrainOptions, seed: u64) -> Result<Vec<Metrics>> {
    opts.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let mut rng: ChaCha8Rng = synth::rng(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut velocity: Vec<Matrix<f64>> = net
        .params_mut()
        .into_iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    let mut history = Vec::new();
    let (loss, accuracy) = evaluate(net, data).map_err(|e| diverged(e, 0))?;
    if !loss.is_finite() {
        return Err(Error::Divergence { step: 0, loss });
    }
    history.push(Metrics { step: 0, loss, accuracy });
    let batch = opts.batch_size.min(data.len());
    for step in 1..=opts.steps {
        let mut idx = Vec::with_capacity(batch);
        while idx.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let per_sample = idx
            .par_iter()
            .map(|&i| net.loss_and_grads(&data.samples[i]))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| diverged(e, step))?;
        let mut batch_loss = 0.0;
        let mut total: Option<Vec<Matrix<f64>>> = None;
        for (l, g) in per_sample {
            batch_loss += l;
            let g = g.into_list(net);
            match &mut total {
                None => total = Some(g),
                Some(t) => {
                    for (a, b) in t.iter_mut().zip(&g) {
                        a.add_assign(b)?;
                    }
                }
            }
        }
        if !batch_loss.is_finite() {
            return Err(Error::Divergence {
                step,
                loss: batch_loss / batch as f64,
            });
        }
        let total = total.expect("batch is non-empty");
        let mut scale = 1.0 / batch as f64;
        if let Some(c) = opts.clip_norm {
            let sq: f64 = total.iter().flat_map(|g| g.as_slice()).map(|v| v * v).sum();
            let norm = sq.sqrt() * scale;
            if norm > c {
                scale *= c / norm;
            }
        }
        for ((p, v), g) in net.params_mut().into_iter().zip(velocity.iter_mut()).zip(&total) {
            for ((pv, vv), &gv) in p.as_mut_slice().iter_mut().zip(v.as_mut_slice()).zip(g.as_slice()) {
                *vv = opts.momentum * *vv + gv * scale;
                *pv -= opts.lr * *vv;
            }
        }
        if step % opts.eval_every == 0 || step == opts.steps {
            let (loss, accuracy) = evaluate(net, data).map_err(|e| diverged(e, step))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { step, loss });
            }
            history.push(Metrics { step, loss, accuracy });
        }
    }
    Ok(history)
}

pub fn write_metrics_csv<W: Write>(history: &[Metrics], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "loss", "accuracy"])?;
    for m in history {
        w.write_record([m.step.to_string(), format!("{:.17e}", m.loss), format!("{:.6}", m.accuracy)])?;
    }
    w.flush()?;
    Ok(())
}

/// Full description of one training run, as read from a JSON config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub train: TrainOptions,
    /// `None` trains the conv-only baseline.
    #[serde(default)]
    pub block: Option<BlockConfig>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.train.validate()?;
        if let Some(b) = &self.block {
            b.validate()?;
            if b.c_in != self.dataset.channels {
                return Err(Error::Config(format!(
                    "block c_in {} does not match dataset channels {}",
                    b.c_in, self.dataset.channels
                )));
            }
        }
        Ok(())
    }

    /// Settings used by the long-range demonstration.
    pub fn long_range(block: Option<BlockConfig>) -> Self {
        Self {
            dataset: DatasetSpec::new(512, 8, 4),
            train: TrainOptions {
                clip_norm: Some(1.0),
                ..TrainOptions::new(2000, 0.2)
            },
            block,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub history: Vec<Metrics>,
    pub net: ToyNet,
}

impl RunResult {
    pub fn final_metrics(&self) -> Metrics {
        *self.history.last().expect("history starts with step 0")
    }
}

/// Dataset, initialization and batch order all derive from `seed`.
pub fn run(config: &TrainConfig, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let data = gen_dataset(seed, &config.dataset)?;
    let mut net = ToyNet::new(config.dataset.channels, config.block, seed.wrapping_add(1))?;
    let history = train(&mut net, &data, &config.train, seed.wrapping_add(2))?;
    Ok(RunResult { history, net })
}
