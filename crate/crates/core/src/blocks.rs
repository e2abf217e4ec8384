//! Nonlocal block variants as polynomial graph filters.
//!
//! Every variant computes `Y = X + F(A, Z)` where `A` is an affinity built
//! from the embeddings `phi = X W_phi`, `psi = X W_psi` and `Z = X W_z` is
//! the node signal. The variants differ only in how `A` is normalized, what
//! plays the role of the node signal and which polynomial in `A` multiplies
//! it:
//!
//! | variant | affinity                      | node signal | `F`                 |
//! |---------|-------------------------------|-------------|---------------------|
//! | NL      | `D^-1 M`                      | `Z`         | `A Z W`             |
//! | A2      | `M`                           | `Z`         | `A Z W`             |
//! | CGNL    | `D^-1 M` over `vec(phi, psi)` | `vec(Z)`    | `unvec(A vec Z) W`  |
//! | NS      | `D^-1 M`                      | `Z`         | `-Z W + A Z W`      |
//! | CC      | `D^-1 (C ⊙ M)`                | `X`         | `A X W`             |
//! | SNL     | `D^-1/2 M̂ D^-1/2`             | `Z`         | `Z W1 + A Z W2`     |
//! | SNL_A1  | `D^-1/2 M̂ D^-1/2`             | `Z`         | `A Z W`             |
//! | SNL_A2  | `D^-1 M`                      | `Z`         | `Z W1 + A Z W2`     |
//! | CHEB_K  | `D^-1/2 M̂ D^-1/2`             | `Z`         | `sum_k A^k Z W_k+1` |
//!
//! [`block_forward`] evaluates each row directly. [`unified_forward`] goes
//! through a single routine, [`chebyshev_form`], that only sees the
//! affinity, the node signal and the per-power weight list of the row.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{
    apply_mask, compute_affinity, crisscross_mask, flatten_spatial_channel, normalize, symmetrize,
    unflatten_spatial_channel, AffinityMatrix, FeatureMap, Kernel, Normalization,
};
use crate::io::{read_matrix_file, write_binary_file};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::spectral::{polynomial_filter, FilterSpec};

/// Largest flattened graph CGNL is allowed to build.
pub const CGNL_MAX_VERTICES: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "NL")]
    Nl,
    #[serde(rename = "NS")]
    Ns,
    #[serde(rename = "A2")]
    A2,
    #[serde(rename = "CGNL")]
    Cgnl,
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "SNL")]
    Snl,
    #[serde(rename = "SNL_A1")]
    SnlA1,
    #[serde(rename = "SNL_A2")]
    SnlA2,
    #[serde(rename = "CHEB_K")]
    ChebK,
}

pub const ALL_VARIANTS: [Variant; 9] = [
    Variant::Nl,
    Variant::Ns,
    Variant::A2,
    Variant::Cgnl,
    Variant::Cc,
    Variant::Snl,
    Variant::SnlA1,
    Variant::SnlA2,
    Variant::ChebK,
];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Nl => "NL",
            Variant::Ns => "NS",
            Variant::A2 => "A2",
            Variant::Cgnl => "CGNL",
            Variant::Cc => "CC",
            Variant::Snl => "SNL",
            Variant::SnlA1 => "SNL_A1",
            Variant::SnlA2 => "SNL_A2",
            Variant::ChebK => "CHEB_K",
        }
    }

    pub fn normalization(self) -> Normalization {
        match self {
            Variant::A2 => Normalization::None,
            Variant::Snl | Variant::SnlA1 | Variant::ChebK => Normalization::Symmetric,
            _ => Normalization::RandomWalk,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ALL_VARIANTS
            .iter()
            .copied()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

fn default_order() -> usize {
    2
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub variant: Variant,
    pub c_in: usize,
    pub c_s: usize,
    /// Number of polynomial terms; only read by `CHEB_K`.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default = "default_true")]
    pub backprop_affinity: bool,
}

impl BlockConfig {
    pub fn new(variant: Variant, c_in: usize, c_s: usize) -> Self {
        Self {
            variant,
            c_in,
            c_s,
            order: 2,
            kernel: Kernel::ExpDot,
            backprop_affinity: true,
        }
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    pub fn with_kernel(mut self, kernel: Kernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_backprop_affinity(mut self, on: bool) -> Self {
        self.backprop_affinity = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 {
            return Err(Error::Config("c_in must be positive".into()));
        }
        if self.c_s == 0 || self.c_s > self.c_in {
            return Err(Error::Config(format!(
                "c_s must lie in 1..={}, got {}",
                self.c_in, self.c_s
            )));
        }
        if self.variant == Variant::ChebK && self.order < 2 {
            return Err(Error::Config(format!("CHEB_K needs order >= 2, got {}", self.order)));
        }
        Ok(())
    }

    /// Checks the config against a concrete input.
    pub fn validate_for<T: Scalar>(&self, x: &FeatureMap<T>) -> Result<()> {
        self.validate()?;
        if x.channels() != self.c_in {
            return shape_err(format!(
                "input has {} channels, block expects {}",
                x.channels(),
                self.c_in
            ));
        }
        if self.variant == Variant::Cgnl && x.positions() * self.c_s > CGNL_MAX_VERTICES {
            return Err(Error::Config(format!(
                "CGNL graph would have {} vertices (limit {CGNL_MAX_VERTICES})",
                x.positions() * self.c_s
            )));
        }
        Ok(())
    }

    /// How many filter weight matrices the variant carries.
    pub fn filter_count(&self) -> usize {
        match self.variant {
            Variant::Snl | Variant::SnlA2 => 2,
            Variant::ChebK => self.order,
            _ => 1,
        }
    }

    /// Shape of each filter weight. CC filters `X` itself, so its weight is
    /// square in the input channels.
    pub fn filter_shape(&self) -> (usize, usize) {
        if self.variant == Variant::Cc {
            (self.c_in, self.c_in)
        } else {
            (self.c_s, self.c_in)
        }
    }

    fn uses_z(&self) -> bool {
        self.variant != Variant::Cc
    }

    pub fn filter_names(&self) -> Vec<String> {
        match self.filter_count() {
            1 => vec!["w".to_string()],
            k => (1..=k).map(|i| format!("w_{i}")).collect(),
        }
    }
}

/// Learnable matrices of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub w_phi: Matrix<T>,
    pub w_psi: Matrix<T>,
    /// Absent for CC, whose node signal is the input itself.
    pub w_z: Option<Matrix<T>>,
    pub filters: Vec<Matrix<T>>,
}

impl<T: Scalar> BlockParams<T> {
    /// Default initialization: projections uniform in `±1/sqrt(C_in)`,
    /// filters zero so the block starts as the identity.
    pub fn init<R: Rng>(cfg: &BlockConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let bound = 1.0 / (cfg.c_in as f64).sqrt();
        let mut proj = || crate::synth::uniform_matrix(rng, cfg.c_in, cfg.c_s, -bound, bound);
        let w_phi = proj();
        let w_psi = proj();
        let w_z = cfg.uses_z().then(proj);
        let (r, c) = cfg.filter_shape();
        Ok(Self {
            w_phi,
            w_psi,
            w_z,
            filters: (0..cfg.filter_count()).map(|_| Matrix::zeros(r, c)).collect(),
        })
    }

    /// Every matrix random: projections in `±1`, filters in `±0.5`.
    pub fn random<R: Rng>(cfg: &BlockConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (r, c) = cfg.filter_shape();
        let w_phi = crate::synth::uniform_matrix(rng, cfg.c_in, cfg.c_s, -1.0, 1.0);
        let w_psi = crate::synth::uniform_matrix(rng, cfg.c_in, cfg.c_s, -1.0, 1.0);
        let w_z = cfg
            .uses_z()
            .then(|| crate::synth::uniform_matrix(rng, cfg.c_in, cfg.c_s, -1.0, 1.0));
        let filters = (0..cfg.filter_count())
            .map(|_| crate::synth::uniform_matrix(rng, r, c, -0.5, 0.5))
            .collect();
        Ok(Self {
            w_phi,
            w_psi,
            w_z,
            filters,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix<T>| Matrix::zeros(m.rows(), m.cols());
        Self {
            w_phi: z(&self.w_phi),
            w_psi: z(&self.w_psi),
            w_z: self.w_z.as_ref().map(z),
            filters: self.filters.iter().map(z).collect(),
        }
    }

    pub fn validate(&self, cfg: &BlockConfig) -> Result<()> {
        cfg.validate()?;
        let proj = (cfg.c_in, cfg.c_s);
        if self.w_phi.shape() != proj || self.w_psi.shape() != proj {
            return shape_err(format!("projections must be {}x{}", cfg.c_in, cfg.c_s));
        }
        match (&self.w_z, cfg.uses_z()) {
            (Some(w), true) if w.shape() == proj => {}
            (None, false) => {}
            _ => return shape_err(format!("w_z does not fit variant {}", cfg.variant)),
        }
        if self.filters.len() != cfg.filter_count() {
            return shape_err(format!(
                "{} expects {} filter weights, got {}",
                cfg.variant,
                cfg.filter_count(),
                self.filters.len()
            ));
        }
        let shape = cfg.filter_shape();
        if self.filters.iter().any(|w| w.shape() != shape) {
            return shape_err(format!("filter weights must be {}x{}", shape.0, shape.1));
        }
        Ok(())
    }

    /// Matrices in a fixed order with their role names.
    pub fn named(&self, cfg: &BlockConfig) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![("w_phi".to_string(), &self.w_phi), ("w_psi".to_string(), &self.w_psi)];
        if let Some(w) = &self.w_z {
            out.push(("w_z".to_string(), w));
        }
        out.extend(cfg.filter_names().into_iter().zip(&self.filters));
        out
    }

    pub fn named_mut(&mut self, cfg: &BlockConfig) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = vec![
            ("w_phi".to_string(), &mut self.w_phi),
            ("w_psi".to_string(), &mut self.w_psi),
        ];
        if let Some(w) = &mut self.w_z {
            out.push(("w_z".to_string(), w));
        }
        out.extend(cfg.filter_names().into_iter().zip(self.filters.iter_mut()));
        out
    }

    /// Writes one binary matrix file per role plus `manifest.json`.
    pub fn save(&self, cfg: &BlockConfig, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut entries = Vec::new();
        for (role, m) in self.named(cfg) {
            let file = format!("{role}.bin");
            write_binary_file(m, dir.join(&file))?;
            entries.push(ManifestEntry {
                role,
                file,
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        let manifest = ParamsManifest {
            config: *cfg,
            matrices: entries,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(BlockConfig, Self)> {
        let dir = dir.as_ref();
        let manifest: ParamsManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let cfg = manifest.config;
        let mut params = Self::init(&cfg, &mut crate::synth::rng(0))?;
        let mut slots = params.named_mut(&cfg);
        if slots.len() != manifest.matrices.len() {
            return Err(Error::Format(format!(
                "manifest lists {} matrices, {} expects {}",
                manifest.matrices.len(),
                cfg.variant,
                slots.len()
            )));
        }
        for entry in &manifest.matrices {
            let slot = slots
                .iter_mut()
                .find(|(role, _)| *role == entry.role)
                .ok_or_else(|| Error::Format(format!("unexpected role {:?}", entry.role)))?;
            let m: Matrix<T> = read_matrix_file(dir.join(&entry.file))?;
            if m.shape() != (entry.rows, entry.cols) {
                return Err(Error::Format(format!("{} does not match its manifest shape", entry.file)));
            }
            *slot.1 = m;
        }
        drop(slots);
        params.validate(&cfg)?;
        Ok((cfg, params))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    role: String,
    file: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsManifest {
    config: BlockConfig,
    matrices: Vec<ManifestEntry>,
}

/// `(phi, psi, Z)`. For CC, `Z` is the input itself.
pub fn embed<T: Scalar>(
    x: &FeatureMap<T>,
    params: &BlockParams<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
    let xv = x.values();
    if xv.cols() != params.w_phi.rows() {
        return shape_err(format!(
            "input has {} channels, projections expect {}",
            xv.cols(),
            params.w_phi.rows()
        ));
    }
    let phi = xv.matmul(&params.w_phi)?;
    let psi = xv.matmul(&params.w_psi)?;
    let z = match &params.w_z {
        Some(w) => xv.matmul(w)?,
        None => xv.clone(),
    };
    Ok((phi, psi, z))
}

/// Everything the backward pass needs from the forward.
struct Trace<T> {
    phi: Matrix<T>,
    psi: Matrix<T>,
    /// Node signal in the graph's vertex space (`vec(Z)` for CGNL).
    signal: Matrix<T>,
    /// Kernel output before masking.
    kernel: Matrix<T>,
    /// Criss-cross mask, CC only.
    mask: Option<Matrix<T>>,
    /// Affinity right before degree normalization (masked / symmetrized).
    pre_norm: Matrix<T>,
    a: AffinityMatrix<T>,
}

fn trace<T: Scalar>(x: &FeatureMap<T>, cfg: &BlockConfig, params: &BlockParams<T>) -> Result<Trace<T>> {
    cfg.validate_for(x)?;
    params.validate(cfg)?;
    let (phi, psi, z) = embed(x, params)?;
    let (m, signal) = if cfg.variant == Variant::Cgnl {
        let m = compute_affinity(&flatten_spatial_channel(&phi), &flatten_spatial_channel(&psi), cfg.kernel)?;
        (m, flatten_spatial_channel(&z))
    } else {
        (compute_affinity(&phi, &psi, cfg.kernel)?, z)
    };
    let kernel = m.values().clone();
    let mask = (cfg.variant == Variant::Cc).then(|| crisscross_mask(x.height(), x.width()));
    let m = match &mask {
        Some(c) => apply_mask(&m, c)?,
        None if cfg.variant.normalization() == Normalization::Symmetric => symmetrize(&m)?,
        None => m,
    };
    let pre_norm = m.values().clone();
    let a = match cfg.variant.normalization() {
        Normalization::None => m,
        mode => normalize(&m, mode)?,
    };
    Ok(Trace {
        phi,
        psi,
        signal,
        kernel,
        mask,
        pre_norm,
        a,
    })
}

/// The affinity of the variant's row in the table above.
pub fn build_block_affinity<T: Scalar>(
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
) -> Result<AffinityMatrix<T>> {
    Ok(trace(x, cfg, params)?.a)
}

fn node_signal<T: Scalar>(x: &FeatureMap<T>, cfg: &BlockConfig, params: &BlockParams<T>) -> Result<Matrix<T>> {
    let (_, _, z) = embed(x, params)?;
    Ok(if cfg.variant == Variant::Cgnl {
        flatten_spatial_channel(&z)
    } else {
        z
    })
}

/// `F(A, Z)` written out per variant.
fn filter_response<T: Scalar>(
    a: &Matrix<T>,
    signal: &Matrix<T>,
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
) -> Result<Matrix<T>> {
    let w = &params.filters;
    match cfg.variant {
        Variant::Nl | Variant::A2 | Variant::SnlA1 | Variant::Cc => a.matmul(signal)?.matmul(&w[0]),
        Variant::Cgnl => {
            let n = x.positions();
            unflatten_spatial_channel(&a.matmul(signal)?, n, cfg.c_s)?.matmul(&w[0])
        }
        Variant::Ns => {
            let mut f = signal.matmul(&w[0])?.neg();
            f.add_assign(&a.matmul(signal)?.matmul(&w[0])?)?;
            Ok(f)
        }
        Variant::Snl | Variant::SnlA2 => signal.matmul(&w[0])?.add(&a.matmul(signal)?.matmul(&w[1])?),
        Variant::ChebK => polynomial_filter(a, signal, &FilterSpec::monomial_weights(w.clone())?),
    }
}

/// `Y = X + F(A, Z)` using the given affinity instead of building one.
pub fn block_forward_with_affinity<T: Scalar>(
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
    a: &Matrix<T>,
) -> Result<FeatureMap<T>> {
    cfg.validate_for(x)?;
    params.validate(cfg)?;
    let signal = node_signal(x, cfg, params)?;
    if a.shape() != (signal.rows(), signal.rows()) {
        return shape_err(format!(
            "affinity is {}x{} but the graph has {} vertices",
            a.rows(),
            a.cols(),
            signal.rows()
        ));
    }
    let f = filter_response(a, &signal, x, cfg, params)?;
    x.with_values(x.values().add(&f)?)
}

pub fn block_forward<T: Scalar>(
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
) -> Result<FeatureMap<T>> {
    Ok(BlockTape::record(x, cfg, params)?.output)
}

/// One row of the table: affinity, node signal, an optional reshape from
/// vertex space back to `N x C_s`, and one weight per power of `A`
/// (starting at `A^0`).
#[derive(Clone, Debug)]
pub struct UnifiedRow<T> {
    pub a: Matrix<T>,
    pub signal: Matrix<T>,
    pub reshape: Option<(usize, usize)>,
    pub weights: Vec<Matrix<T>>,
}

/// Per-power weights implied by the variant's filter parameters.
pub fn expand_weights<T: Scalar>(cfg: &BlockConfig, filters: &[Matrix<T>]) -> Vec<Matrix<T>> {
    let zero = |w: &Matrix<T>| Matrix::zeros(w.rows(), w.cols());
    match cfg.variant {
        Variant::Nl | Variant::A2 | Variant::Cgnl | Variant::Cc | Variant::SnlA1 => {
            vec![zero(&filters[0]), filters[0].clone()]
        }
        Variant::Ns => vec![filters[0].neg(), filters[0].clone()],
        Variant::Snl | Variant::SnlA2 | Variant::ChebK => filters.to_vec(),
    }
}

pub fn unified_row<T: Scalar>(
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
) -> Result<UnifiedRow<T>> {
    let t = trace(x, cfg, params)?;
    Ok(UnifiedRow {
        a: t.a.into_values(),
        signal: t.signal,
        reshape: (cfg.variant == Variant::Cgnl).then_some((x.positions(), cfg.c_s)),
        weights: expand_weights(cfg, &params.filters),
    })
}

fn reshape_back<T: Scalar>(p: &Matrix<T>, reshape: Option<(usize, usize)>) -> Result<Matrix<T>> {
    match reshape {
        Some((n, c)) => unflatten_spatial_channel(p, n, c),
        None => Ok(p.clone()),
    }
}

/// `sum_k R(A^k P) W_k`, the single routine every variant reduces to.
pub fn chebyshev_form<T: Scalar>(row: &UnifiedRow<T>) -> Result<Matrix<T>> {
    if row.weights.is_empty() {
        return Err(Error::Spec("no filter weights".into()));
    }
    let mut power = row.signal.clone();
    let mut out = reshape_back(&power, row.reshape)?.matmul(&row.weights[0])?;
    for w in &row.weights[1..] {
        power = row.a.matmul(&power)?;
        out.add_assign(&reshape_back(&power, row.reshape)?.matmul(w)?)?;
    }
    Ok(out)
}

/// Forward pass through [`chebyshev_form`].
pub fn unified_forward<T: Scalar>(
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
) -> Result<FeatureMap<T>> {
    let f = chebyshev_form(&unified_row(x, cfg, params)?)?;
    x.with_values(x.values().add(&f)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGradients<T> {
    pub x: Matrix<T>,
    pub params: BlockParams<T>,
}

/// A forward pass that keeps its intermediates so the backward pass does
/// not have to recompute them.
pub struct BlockTape<'a, T> {
    x: &'a FeatureMap<T>,
    cfg: &'a BlockConfig,
    params: &'a BlockParams<T>,
    trace: Trace<T>,
    output: FeatureMap<T>,
}

impl<'a, T: Scalar> BlockTape<'a, T> {
    pub fn record(x: &'a FeatureMap<T>, cfg: &'a BlockConfig, params: &'a BlockParams<T>) -> Result<Self> {
        let trace = trace(x, cfg, params)?;
        let f = filter_response(trace.a.values(), &trace.signal, x, cfg, params)?;
        let output = x.with_values(x.values().add(&f)?)?;
        Ok(Self {
            x,
            cfg,
            params,
            trace,
            output,
        })
    }

    pub fn output(&self) -> &FeatureMap<T> {
        &self.output
    }

    pub fn affinity(&self) -> &AffinityMatrix<T> {
        &self.trace.a
    }

    /// Gradients of `<upstream, Y>` with respect to `X` and every parameter.
    pub fn backward(&self, upstream: &Matrix<T>) -> Result<BlockGradients<T>> {
        backward(self.x, self.cfg, self.params, &self.trace, upstream)
    }
}

/// Gradients of `<upstream, Y>` with respect to `X` and every parameter.
pub fn block_backward<T: Scalar>(
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
    upstream: &Matrix<T>,
) -> Result<BlockGradients<T>> {
    BlockTape::record(x, cfg, params)?.backward(upstream)
}

fn backward<T: Scalar>(
    x: &FeatureMap<T>,
    cfg: &BlockConfig,
    params: &BlockParams<T>,
    t: &Trace<T>,
    upstream: &Matrix<T>,
) -> Result<BlockGradients<T>> {
    if upstream.shape() != x.values().shape() {
        return shape_err(format!(
            "upstream gradient is {}x{}, output is {}x{}",
            upstream.rows(),
            upstream.cols(),
            x.positions(),
            x.channels()
        ));
    }
    let a = t.a.values();
    let xv = x.values();
    let g = upstream;
    let reshape = (cfg.variant == Variant::Cgnl).then_some((x.positions(), cfg.c_s));
    let weights = expand_weights(cfg, &params.filters);
    let k = weights.len();

    // Powers P_0 .. P_{K-1} of the node signal.
    let mut powers = Vec::with_capacity(k);
    powers.push(t.signal.clone());
    for i in 1..k {
        let next = a.matmul(&powers[i - 1])?;
        powers.push(next);
    }

    let mut d_weights = Vec::with_capacity(k);
    for p in &powers {
        d_weights.push(reshape_back(p, reshape)?.matmul_tn(g)?);
    }
    let to_vertex = |m: Matrix<T>| match reshape {
        Some(_) => flatten_spatial_channel(&m),
        None => m,
    };
    let n_v = t.signal.rows();
    let mut d_a = Matrix::zeros(n_v, n_v);
    let mut h = to_vertex(g.matmul_nt(&weights[k - 1])?);
    for i in (1..k).rev() {
        d_a.add_assign(&h.matmul_nt(&powers[i - 1])?)?;
        let mut next = to_vertex(g.matmul_nt(&weights[i - 1])?);
        next.add_assign(&a.matmul_tn(&h)?)?;
        h = next;
    }

    let mut grads = params.zeros_like();
    match cfg.variant {
        Variant::Nl | Variant::A2 | Variant::Cgnl | Variant::Cc | Variant::SnlA1 => {
            grads.filters[0] = d_weights.swap_remove(1);
        }
        Variant::Ns => grads.filters[0] = d_weights[1].sub(&d_weights[0])?,
        Variant::Snl | Variant::SnlA2 | Variant::ChebK => grads.filters = d_weights,
    }

    let mut d_x = g.clone();
    match &params.w_z {
        None => d_x.add_assign(&h)?,
        Some(w_z) => {
            let d_z = reshape_back(&h, reshape)?;
            grads.w_z = Some(xv.matmul_tn(&d_z)?);
            d_x.add_assign(&d_z.matmul_nt(w_z)?)?;
        }
    }

    if cfg.backprop_affinity {
        let d_kernel = affinity_to_kernel_grad(t, cfg, &d_a)?;
        let (d_phi, d_psi) = kernel_to_embedding_grad(t, cfg, &d_kernel)?;
        let (d_phi, d_psi) = match reshape {
            Some((n, c)) => (
                unflatten_spatial_channel(&d_phi, n, c)?,
                unflatten_spatial_channel(&d_psi, n, c)?,
            ),
            None => (d_phi, d_psi),
        };
        grads.w_phi = xv.matmul_tn(&d_phi)?;
        grads.w_psi = xv.matmul_tn(&d_psi)?;
        d_x.add_assign(&d_phi.matmul_nt(&params.w_phi)?)?;
        d_x.add_assign(&d_psi.matmul_nt(&params.w_psi)?)?;
    }
    Ok(BlockGradients { x: d_x, params: grads })
}

/// Pulls `dL/dA` back through normalization, symmetrization and masking to
/// the raw kernel output.
fn affinity_to_kernel_grad<T: Scalar>(t: &Trace<T>, cfg: &BlockConfig, d_a: &Matrix<T>) -> Result<Matrix<T>> {
    let n = d_a.rows();
    let m = &t.pre_norm;
    let a = t.a.values();
    let d_m = match cfg.variant.normalization() {
        Normalization::None => d_a.clone(),
        Normalization::RandomWalk => {
            let d = m.row_sums();
            let mut out = Matrix::zeros(n, n);
            for i in 0..n {
                let dot: T = (0..n).map(|j| d_a[(i, j)] * a[(i, j)]).sum();
                for j in 0..n {
                    out[(i, j)] = (d_a[(i, j)] - dot) / d[i];
                }
            }
            out
        }
        Normalization::Symmetric => {
            let s: Vec<T> = m.row_sums().iter().map(|&d| T::one() / d.sqrt()).collect();
            let half = T::of(0.5);
            let g: Vec<T> = (0..n)
                .map(|i| (0..n).map(|j| (d_a[(i, j)] + d_a[(j, i)]) * m[(i, j)] * s[j]).sum())
                .collect();
            let d_hat = Matrix::from_fn(n, n, |i, j| {
                d_a[(i, j)] * s[i] * s[j] - half * s[i] * s[i] * s[i] * g[i]
            });
            Matrix::from_fn(n, n, |i, j| (d_hat[(i, j)] + d_hat[(j, i)]) * half)
        }
    };
    match &t.mask {
        Some(c) => d_m.hadamard(c),
        None => Ok(d_m),
    }
}

fn kernel_to_embedding_grad<T: Scalar>(
    t: &Trace<T>,
    cfg: &BlockConfig,
    d_kernel: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>)> {
    let (phi, psi) = if cfg.variant == Variant::Cgnl {
        (flatten_spatial_channel(&t.phi), flatten_spatial_channel(&t.psi))
    } else {
        (t.phi.clone(), t.psi.clone())
    };
    let d_s = match cfg.kernel {
        Kernel::Dot => d_kernel.clone(),
        Kernel::ExpDot => {
            let scale = T::one() / T::of(phi.cols() as f64).sqrt();
            d_kernel.hadamard(&t.kernel)?.scale(scale)
        }
    };
    Ok((d_s.matmul(&psi)?, d_s.matmul_tn(&phi)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::jacobi_eigh;
    use crate::synth;
    use proptest::prelude::*;

    fn problem(cfg: &BlockConfig, seed: u64) -> (FeatureMap<f64>, BlockParams<f64>) {
        let mut rng = synth::rng(seed);
        let x = synth::uniform_feature_map(&mut rng, 3, 4, cfg.c_in);
        let p = BlockParams::random(cfg, &mut rng).unwrap();
        (x, p)
    }

    fn rel(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        crate::linalg::rel_error(a, b).unwrap()
    }

    #[test]
    fn identity_projections_embed_to_input() {
        let cfg = BlockConfig::new(Variant::Nl, 3, 3);
        let mut p = BlockParams::<f64>::init(&cfg, &mut synth::rng(0)).unwrap();
        p.w_phi = Matrix::identity(3);
        p.w_psi = Matrix::identity(3);
        p.w_z = Some(Matrix::identity(3));
        let x = synth::uniform_feature_map(&mut synth::rng(1), 2, 2, 3);
        let (phi, psi, z) = embed(&x, &p).unwrap();
        assert_eq!((&phi, &psi, &z), (x.values(), x.values(), x.values()));
        let zero = x.with_values(Matrix::zeros(4, 3)).unwrap();
        let (phi, psi, z) = embed(&zero, &p).unwrap();
        assert_eq!(phi.max_abs() + psi.max_abs() + z.max_abs(), 0.0);
    }

    #[test]
    fn embed_matches_per_row_products() {
        let cfg = BlockConfig::new(Variant::Snl, 5, 2);
        let (x, p) = problem(&cfg, 4);
        let (phi, _, z) = embed(&x, &p).unwrap();
        for i in 0..x.positions() {
            for j in 0..2 {
                let want: f64 = (0..5).map(|c| x.values()[(i, c)] * p.w_phi[(c, j)]).sum();
                assert!((phi[(i, j)] - want).abs() < 1e-14);
                let want: f64 = (0..5).map(|c| x.values()[(i, c)] * p.w_z.as_ref().unwrap()[(c, j)]).sum();
                assert!((z[(i, j)] - want).abs() < 1e-14);
            }
        }
        let wrong = synth::uniform_feature_map(&mut synth::rng(0), 3, 4, 4);
        assert!(matches!(embed(&wrong, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn affinity_shapes_per_variant() {
        for seed in 0..5 {
            let cfg = BlockConfig::new(Variant::Snl, 4, 2);
            let (x, p) = problem(&cfg, seed);
            assert!(build_block_affinity(&x, &cfg, &p).unwrap().values().is_exactly_symmetric());

            let cfg = BlockConfig::new(Variant::Nl, 4, 2);
            let (x, p) = problem(&cfg, seed);
            let a = build_block_affinity(&x, &cfg, &p).unwrap();
            assert!(a.values().row_sums().iter().all(|s| (s - 1.0).abs() < 1e-12));

            let cfg = BlockConfig::new(Variant::Cgnl, 4, 2);
            let (x, p) = problem(&cfg, seed);
            assert_eq!(build_block_affinity(&x, &cfg, &p).unwrap().vertices(), 24);
        }
    }

    #[test]
    fn crisscross_zeros_on_two_by_two() {
        let cfg = BlockConfig::new(Variant::Cc, 3, 2);
        let mut rng = synth::rng(9);
        let x: FeatureMap<f64> = synth::uniform_feature_map(&mut rng, 2, 2, 3);
        let p = BlockParams::random(&cfg, &mut rng).unwrap();
        let a = build_block_affinity(&x, &cfg, &p).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let (ri, ci, rj, cj) = (i / 2, i % 2, j / 2, j % 2);
                let linked = ri == rj || ci == cj;
                assert_eq!(a.values()[(i, j)] == 0.0, !linked, "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_filters_are_identity() {
        for v in ALL_VARIANTS {
            let cfg = BlockConfig::new(v, 4, 2).with_order(3);
            let mut rng = synth::rng(2);
            let x: FeatureMap<f64> = synth::uniform_feature_map(&mut rng, 3, 3, 4);
            let p = BlockParams::init(&cfg, &mut rng).unwrap();
            let y = block_forward(&x, &cfg, &p).unwrap();
            assert_eq!(y, x, "{v}");
            let g = synth::uniform_matrix(&mut rng, 9, 4, -1.0, 1.0);
            let grads = block_backward(&x, &cfg, &p, &g).unwrap();
            assert_eq!(grads.x, g, "{v}");
        }
    }

    #[test]
    fn ns_with_identity_affinity_is_identity() {
        let cfg = BlockConfig::new(Variant::Ns, 4, 2);
        let (x, p) = problem(&cfg, 3);
        let y = block_forward_with_affinity(&x, &cfg, &p, &Matrix::identity(12)).unwrap();
        assert!(rel(y.values(), x.values()) < 1e-15);
    }

    #[test]
    fn snl_equals_second_order_chebyshev() {
        for seed in 0..5 {
            let cfg = BlockConfig::new(Variant::Snl, 4, 2);
            let (x, p) = problem(&cfg, seed);
            let cheb = BlockConfig::new(Variant::ChebK, 4, 2).with_order(2);
            let y = block_forward(&x, &cfg, &p).unwrap();
            let yc = block_forward(&x, &cheb, &p).unwrap();
            assert!(rel(y.values(), yc.values()) <= 1e-12);
        }
    }

    #[test]
    fn specialized_and_unified_paths_agree_exactly() {
        for v in ALL_VARIANTS {
            for seed in 0..3 {
                let cfg = BlockConfig::new(v, 4, 2).with_order(4);
                let (x, p) = problem(&cfg, seed);
                let y = block_forward(&x, &cfg, &p).unwrap();
                let u = unified_forward(&x, &cfg, &p).unwrap();
                assert_eq!(y, u, "{v} seed {seed}");
            }
        }
    }

    #[test]
    fn tied_weight_identities() {
        for seed in 0..5 {
            let cfg = BlockConfig::new(Variant::Nl, 4, 2);
            let (x, p) = problem(&cfg, seed);
            let a = build_block_affinity(&x, &cfg, &p).unwrap();
            let (_, _, z) = embed(&x, &p).unwrap();
            let w = &p.filters[0];
            let spec = FilterSpec::monomial_weights(vec![Matrix::zeros(2, 4), w.clone()]).unwrap();
            let want = x.values().add(&polynomial_filter(a.values(), &z, &spec).unwrap()).unwrap();
            assert!(rel(block_forward(&x, &cfg, &p).unwrap().values(), &want) <= 1e-12);

            let ns = BlockConfig::new(Variant::Ns, 4, 2);
            let spec = FilterSpec::monomial_weights(vec![w.neg(), w.clone()]).unwrap();
            let want = x.values().add(&polynomial_filter(a.values(), &z, &spec).unwrap()).unwrap();
            assert!(rel(block_forward(&x, &ns, &p).unwrap().values(), &want) <= 1e-12);
        }
    }

    #[test]
    fn snl_affinity_has_real_spectrum_on_degenerate_inputs() {
        let cfg = BlockConfig::new(Variant::Snl, 4, 2);
        for seed in 0..10 {
            let mut rng = synth::rng(seed);
            let x: FeatureMap<f64> = synth::near_degenerate_features(&mut rng, 3, 3, 4, 1e-10);
            let p = BlockParams::random(&cfg, &mut rng).unwrap();
            let a = build_block_affinity(&x, &cfg, &p).unwrap();
            let dec = jacobi_eigh(a.values()).unwrap();
            assert!(dec.eigenvalues.iter().all(|l| l.abs() <= 1.0 + 1e-9));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for v in ALL_VARIANTS {
            let cfg = BlockConfig::new(v, 4, 2);
            let (x, p) = problem(&cfg, 1);
            let g = block_backward(&x, &cfg, &p, &Matrix::zeros(12, 4)).unwrap();
            assert_eq!(g.x.max_abs(), 0.0);
            for (_, m) in g.params.named(&cfg) {
                assert_eq!(m.max_abs(), 0.0, "{v}");
            }
            assert!(block_backward(&x, &cfg, &p, &Matrix::zeros(12, 3)).is_err());
        }
    }

    #[test]
    fn cc_is_equivariant_under_grid_line_swaps() {
        let cfg = BlockConfig::new(Variant::Cc, 3, 2);
        let (x, p) = problem(&cfg, 6);
        let (h, w) = (x.height(), x.width());
        let y = block_forward(&x, &cfg, &p).unwrap();
        // swap grid rows 0 and 2, then columns 1 and 3
        let swap_row = |i: usize| {
            let (r, c) = (i / w, i % w);
            let r = match r { 0 => 2, 2 => 0, r => r };
            r * w + c
        };
        let swap_col = |i: usize| {
            let (r, c) = (i / w, i % w);
            let c = match c { 1 => 3, 3 => 1, c => c };
            r * w + c
        };
        for perm in [&swap_row as &dyn Fn(usize) -> usize, &swap_col] {
            let xp = FeatureMap::new(h, w, Matrix::from_fn(h * w, 3, |i, j| x.values()[(perm(i), j)])).unwrap();
            let yp = block_forward(&xp, &cfg, &p).unwrap();
            for i in 0..h * w {
                for j in 0..3 {
                    assert!((yp.values()[(i, j)] - y.values()[(perm(i), j)]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn config_json_contract() {
        let cfg: BlockConfig =
            serde_json::from_str(r#"{"variant":"SNL_A2","c_in":8,"c_s":4,"kernel":"dot"}"#).unwrap();
        assert_eq!(cfg.variant, Variant::SnlA2);
        assert_eq!(cfg.kernel, Kernel::Dot);
        assert!(cfg.backprop_affinity);
        let back: BlockConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<BlockConfig>(r#"{"variant":"NL","c_in":8,"c_s":4,"kernal":"dot"}"#).is_err());
        assert!(BlockConfig::new(Variant::Nl, 4, 5).validate().is_err());
        assert!(BlockConfig::new(Variant::Nl, 4, 0).validate().is_err());
        assert!(BlockConfig::new(Variant::ChebK, 4, 2).with_order(1).validate().is_err());
        let big = BlockConfig::new(Variant::Cgnl, 4, 4);
        let x = synth::uniform_feature_map::<f64, _>(&mut synth::rng(0), 32, 33, 4);
        assert!(matches!(big.validate_for(&x), Err(Error::Config(_))));
        assert_eq!("snl_a1".parse::<Variant>().unwrap(), Variant::SnlA1);
    }

    #[test]
    fn params_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for v in [Variant::Cc, Variant::ChebK] {
            let cfg = BlockConfig::new(v, 4, 2).with_order(3);
            let (_, p) = problem(&cfg, 8);
            p.save(&cfg, dir.path().join(v.name())).unwrap();
            let (cfg2, p2) = BlockParams::<f64>::load(dir.path().join(v.name())).unwrap();
            assert_eq!((cfg2, p2), (cfg, p));
        }
    }

    fn permuted(x: &FeatureMap<f64>, perm: &[usize]) -> FeatureMap<f64> {
        let c = x.channels();
        FeatureMap::flat(Matrix::from_fn(perm.len(), c, |i, j| x.values()[(perm[i], j)]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_equivariance(seed in 0u64..1000, perm in Just((0..10).collect::<Vec<usize>>()).prop_shuffle()) {
            for v in [Variant::Nl, Variant::Ns, Variant::A2, Variant::Snl, Variant::SnlA1, Variant::SnlA2] {
                let cfg = BlockConfig::new(v, 3, 2);
                let mut rng = synth::rng(seed);
                let x = FeatureMap::flat(synth::uniform_matrix(&mut rng, 10, 3, -1.0, 1.0));
                let p = BlockParams::random(&cfg, &mut rng).unwrap();
                let y = block_forward(&x, &cfg, &p).unwrap();
                let yp = block_forward(&permuted(&x, &perm), &cfg, &p).unwrap();
                let want = permuted(&y, &perm);
                prop_assert!(yp.values().sub(want.values()).unwrap().max_abs() <= 1e-10);
            }
        }

        #[test]
        fn output_shape_matches_input(seed in 0u64..1000, h in 1usize..4, w in 1usize..4) {
            for v in ALL_VARIANTS {
                let cfg = BlockConfig::new(v, 3, 2).with_order(3);
                let mut rng = synth::rng(seed);
                let x = synth::uniform_feature_map::<f64, _>(&mut rng, h, w, 3);
                let p = BlockParams::random(&cfg, &mut rng).unwrap();
                let y = block_forward(&x, &cfg, &p).unwrap();
                prop_assert_eq!(y.values().shape(), x.values().shape());
                prop_assert_eq!((y.height(), y.width()), (h, w));
            }
        }
    }
}
