//! Invariant suites behind `snl verify`.
//!
//! Every group is seeded and single-precision free, so its case log is a
//! pure function of the build.

use std::fmt;
use std::io::Write;

use snl_core::blocks::{
    block_forward, block_forward_with_affinity, build_block_affinity, unified_forward, BlockConfig, BlockParams,
    Variant, ALL_VARIANTS,
};
use snl_core::graph::{
    compute_affinity, crisscross_mask, flatten_spatial_channel, laplacian, normalize, scaled_laplacian,
    unflatten_spatial_channel, FeatureMap, Kernel, Normalization,
};
use snl_core::linalg::{jacobi_eigh, rel_error, Matrix};
use snl_core::spectral::{cheb_filter_apply, gft, inverse_gft, poly_filter_apply, spectral_oracle, spectral_oracle_spec};
use snl_core::{synth, Error, FilterSpec, Result};

/// One comparison inside a group. `error` is the group's metric for this
/// case (a relative error unless the group says otherwise).
#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub group: &'static str,
    pub case: usize,
    pub k: usize,
    pub n: usize,
    pub error: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    Above(f64),
}

impl Bound {
    fn holds(self, v: f64) -> bool {
        match self {
            Bound::AtMost(b) => v <= b,
            Bound::Above(b) => v > b,
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b:.0e}"),
            Bound::Above(b) => write!(f, "> {b}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub name: &'static str,
    pub metric: &'static str,
    pub value: f64,
    pub bound: Bound,
    pub cases: Vec<Case>,
}

impl GroupReport {
    pub fn passed(&self) -> bool {
        self.value.is_finite() && self.bound.holds(self.value)
    }

    fn worst(name: &'static str, metric: &'static str, bound: f64, cases: Vec<Case>) -> Self {
        let value = cases.iter().fold(0.0f64, |m, c| if c.error.is_nan() { f64::NAN } else { m.max(c.error) });
        Self {
            name,
            metric,
            value,
            bound: Bound::AtMost(bound),
            cases,
        }
    }
}

type Suite = fn() -> Result<GroupReport>;

/// Registered groups, in report order.
pub const GROUPS: &[(&str, Suite)] = &[
    ("spectral_equivalence", spectral_equivalence),
    ("eigenvalue_bound", eigenvalue_bound),
    ("snl_symmetry", snl_symmetry),
    ("nl_asymmetry", nl_asymmetry),
    ("unification", unification),
    ("tied_weights", tied_weights),
    ("snl_chebyshev", snl_chebyshev),
    ("chebyshev_recursion", chebyshev_recursion),
    ("scaled_laplacian", scaled_laplacian_is_negated_affinity),
    ("gft_round_trip", gft_round_trip),
    ("jacobi_reconstruction", jacobi_reconstruction),
    ("random_walk_rows", random_walk_rows),
    ("crisscross_support", crisscross_support),
    ("cgnl_vectorization", cgnl_vectorization),
    ("permutation_equivariance", permutation_equivariance),
    ("zero_filter_identity", zero_filter_identity),
];

/// Runs every group whose name contains `filter` (all when `None`).
pub fn run_groups(filter: Option<&str>) -> Result<Vec<GroupReport>> {
    GROUPS
        .iter()
        .filter(|(name, _)| filter.map_or(true, |f| name.contains(f)))
        .map(|(_, suite)| suite())
        .collect()
}

pub fn format_table(reports: &[GroupReport]) -> String {
    let mw = reports.iter().map(|r| r.metric.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<26} {:>6}  {:<mw$} {:>10}  {:<10} status\n",
        "group", "cases", "metric", "value", "bound"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<26} {:>6}  {:<mw$} {:>10.3e}  {:<10} {}\n",
            r.name,
            r.cases.len(),
            r.metric,
            r.value,
            r.bound.to_string(),
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    let passed = reports.iter().filter(|r| r.passed()).count();
    out.push_str(&format!("{passed}/{} groups passed\n", reports.len()));
    out
}

pub fn write_summary_csv<W: Write>(reports: &[GroupReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "cases", "metric", "value", "bound", "passed"])?;
    for r in reports {
        w.write_record([
            r.name.to_string(),
            r.cases.len().to_string(),
            r.metric.to_string(),
            format!("{:e}", r.value),
            r.bound.to_string(),
            r.passed().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cases_csv<W: Write>(reports: &[GroupReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "case", "k", "n", "error"])?;
    for c in reports.iter().flat_map(|r| &r.cases) {
        w.write_record([
            c.group.to_string(),
            c.case.to_string(),
            c.k.to_string(),
            c.n.to_string(),
            format!("{:e}", c.error),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const SIZES: [usize; 4] = [8, 16, 32, 64];

fn problem(cfg: &BlockConfig, seed: u64, h: usize, w: usize) -> Result<(FeatureMap<f64>, BlockParams<f64>)> {
    let mut rng = synth::rng(seed);
    let x = synth::uniform_feature_map(&mut rng, h, w, cfg.c_in);
    let p = BlockParams::random(cfg, &mut rng)?;
    Ok((x, p))
}

fn spectral_equivalence() -> Result<GroupReport> {
    let name = "spectral_equivalence";
    let mut cases = Vec::new();
    for i in 0..50 {
        let mut rng = synth::rng(1000 + i as u64);
        let n = SIZES[i % SIZES.len()];
        let a = synth::symmetric_affinity(&mut rng, n, 4)?;
        let z: Matrix<f64> = synth::uniform_matrix(&mut rng, n, 3, -1.0, 1.0);
        for k in 1..=6 {
            let theta = synth::uniform_matrix::<f64, _>(&mut rng, 1, k, -1.0, 1.0).into_vec();
            let got = poly_filter_apply(&a, &z, &FilterSpec::monomial(theta.clone())?)?;
            let want = spectral_oracle(&a, &z, &theta)?;
            cases.push(Case {
                group: name,
                case: i,
                k,
                n,
                error: rel_error(&got, &want)?,
            });
        }
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-8, cases))
}

fn eigenvalue_bound() -> Result<GroupReport> {
    let name = "eigenvalue_bound";
    let mut cases = Vec::new();
    for i in 0..100 {
        let mut rng = synth::rng(2000 + i as u64);
        let n = SIZES[i % 3];
        let a = synth::symmetric_affinity::<f64, _>(&mut rng, n, 1 + i % 4)?;
        let dec = jacobi_eigh(&laplacian(&a)?)?;
        let lo = dec.eigenvalues[0];
        let hi = dec.eigenvalues[n - 1];
        cases.push(Case {
            group: name,
            case: i,
            k: 0,
            n,
            error: (-lo).max(hi - 2.0).max(0.0),
        });
    }
    Ok(GroupReport::worst(name, "max excursion from [0,2]", 1e-9, cases))
}

/// 0 when `jacobi_eigh` accepts the matrix, else its largest asymmetry.
fn jacobi_rejection(a: &Matrix<f64>) -> Result<f64> {
    match jacobi_eigh(a) {
        Ok(_) => Ok(0.0),
        Err(Error::NotSymmetric { max_asymmetry }) => Ok(max_asymmetry.max(f64::MIN_POSITIVE)),
        Err(e) => Err(e),
    }
}

fn snl_symmetry() -> Result<GroupReport> {
    let name = "snl_symmetry";
    let cfg = BlockConfig::new(Variant::Snl, 4, 2);
    let mut cases = Vec::new();
    for i in 0..1010 {
        let (x, p) = if i < 1000 {
            problem(&cfg, 3000 + i as u64, 3, 3)?
        } else {
            let mut rng = synth::rng(4000 + i as u64);
            let jitter = 10f64.powi(-(6 + (i % 10) as i32));
            let x = synth::near_degenerate_features(&mut rng, 3, 3, 4, jitter);
            (x, BlockParams::random(&cfg, &mut rng)?)
        };
        let a = build_block_affinity(&x, &cfg, &p)?;
        let exact = if a.values().is_exactly_symmetric() { 0.0 } else { 1.0 };
        cases.push(Case {
            group: name,
            case: i,
            k: 0,
            n: a.vertices(),
            error: jacobi_rejection(a.values())?.max(exact),
        });
    }
    Ok(GroupReport::worst(name, "rejections", 0.0, cases))
}

fn nl_asymmetry() -> Result<GroupReport> {
    let name = "nl_asymmetry";
    let cfg = BlockConfig::new(Variant::Nl, 4, 2);
    let mut cases = Vec::new();
    for i in 0..1000 {
        let (x, p) = problem(&cfg, 5000 + i as u64, 3, 3)?;
        let a = build_block_affinity(&x, &cfg, &p)?;
        cases.push(Case {
            group: name,
            case: i,
            k: 0,
            n: a.vertices(),
            error: jacobi_rejection(a.values())?,
        });
    }
    let rejected = cases.iter().filter(|c| c.error > 0.0).count();
    Ok(GroupReport {
        name,
        metric: "rejected fraction",
        value: rejected as f64 / cases.len() as f64,
        bound: Bound::Above(0.9),
        cases,
    })
}

fn unification() -> Result<GroupReport> {
    let name = "unification";
    let mut cases = Vec::new();
    for (vi, v) in [Variant::Nl, Variant::Ns, Variant::A2, Variant::Cgnl, Variant::Cc].into_iter().enumerate() {
        let cfg = BlockConfig::new(v, 4, 2);
        for seed in 0..10 {
            let (x, p) = problem(&cfg, 6000 + 100 * vi as u64 + seed, 4, 4)?;
            let y = block_forward(&x, &cfg, &p)?;
            let u = unified_forward(&x, &cfg, &p)?;
            cases.push(Case {
                group: name,
                case: vi * 10 + seed as usize,
                k: 2,
                n: x.positions(),
                error: rel_error(u.values(), y.values())?,
            });
        }
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-12, cases))
}

/// Runs the second-order Chebyshev block on `a` with filters `[w1, w2]`.
fn cheb2_on(x: &FeatureMap<f64>, p: &BlockParams<f64>, a: &Matrix<f64>, w1: Matrix<f64>, w2: Matrix<f64>) -> Result<FeatureMap<f64>> {
    let cheb = BlockConfig::new(Variant::ChebK, p.w_phi.rows(), p.w_phi.cols()).with_order(2);
    let mut q = p.clone();
    q.filters = vec![w1, w2];
    block_forward_with_affinity(x, &cheb, &q, a)
}

fn tied_weights() -> Result<GroupReport> {
    let name = "tied_weights";
    let nl = BlockConfig::new(Variant::Nl, 4, 2);
    let ns = BlockConfig::new(Variant::Ns, 4, 2);
    let mut cases = Vec::new();
    for seed in 0..10 {
        let (x, p) = problem(&nl, 7000 + seed, 4, 4)?;
        let a = build_block_affinity(&x, &nl, &p)?;
        let w = p.filters[0].clone();
        let zero = Matrix::zeros(w.rows(), w.cols());
        let got = cheb2_on(&x, &p, a.values(), zero, w.clone())?;
        cases.push(Case {
            group: name,
            case: 2 * seed as usize,
            k: 2,
            n: x.positions(),
            error: rel_error(got.values(), block_forward(&x, &nl, &p)?.values())?,
        });
        let got = cheb2_on(&x, &p, a.values(), w.neg(), w)?;
        cases.push(Case {
            group: name,
            case: 2 * seed as usize + 1,
            k: 2,
            n: x.positions(),
            error: rel_error(got.values(), block_forward(&x, &ns, &p)?.values())?,
        });
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-12, cases))
}

fn snl_chebyshev() -> Result<GroupReport> {
    let name = "snl_chebyshev";
    let snl = BlockConfig::new(Variant::Snl, 4, 2);
    let a1 = BlockConfig::new(Variant::SnlA1, 4, 2);
    let cheb = BlockConfig::new(Variant::ChebK, 4, 2).with_order(2);
    let mut cases = Vec::new();
    for seed in 0..10 {
        let (x, p) = problem(&snl, 8000 + seed, 4, 4)?;
        let got = block_forward(&x, &cheb, &p)?;
        cases.push(Case {
            group: name,
            case: 2 * seed as usize,
            k: 2,
            n: x.positions(),
            error: rel_error(got.values(), block_forward(&x, &snl, &p)?.values())?,
        });
        let mut q = p.clone();
        q.filters = vec![p.filters[1].clone()];
        let mut tied = p.clone();
        tied.filters[0] = Matrix::zeros(cheb.filter_shape().0, cheb.filter_shape().1);
        let got = block_forward(&x, &cheb, &tied)?;
        cases.push(Case {
            group: name,
            case: 2 * seed as usize + 1,
            k: 2,
            n: x.positions(),
            error: rel_error(got.values(), block_forward(&x, &a1, &q)?.values())?,
        });
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-12, cases))
}

fn chebyshev_recursion() -> Result<GroupReport> {
    let name = "chebyshev_recursion";
    let mut cases = Vec::new();
    for i in 0..24 {
        let mut rng = synth::rng(9000 + i as u64);
        let n = SIZES[i % 3];
        let k = 1 + i % 6;
        let a = synth::symmetric_affinity(&mut rng, n, 3)?;
        let z: Matrix<f64> = synth::uniform_matrix(&mut rng, n, 2, -1.0, 1.0);
        let theta = synth::uniform_matrix::<f64, _>(&mut rng, 1, k, -1.0, 1.0).into_vec();
        let got = cheb_filter_apply(&scaled_laplacian(&a)?, &z, &theta)?;
        let want = spectral_oracle_spec(&a, &z, &FilterSpec::chebyshev(theta)?)?;
        cases.push(Case {
            group: name,
            case: i,
            k,
            n,
            error: rel_error(&got, &want)?,
        });
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-8, cases))
}

fn scaled_laplacian_is_negated_affinity() -> Result<GroupReport> {
    let name = "scaled_laplacian";
    let mut cases = Vec::new();
    for i in 0..20 {
        let mut rng = synth::rng(10_000 + i as u64);
        let n = SIZES[i % 4];
        let a = synth::symmetric_affinity(&mut rng, n, 2)?;
        cases.push(Case {
            group: name,
            case: i,
            k: 0,
            n,
            error: rel_error(&scaled_laplacian(&a)?, &a.values().neg())?,
        });
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-12, cases))
}

fn gft_round_trip() -> Result<GroupReport> {
    let name = "gft_round_trip";
    let mut cases = Vec::new();
    for i in 0..20 {
        let mut rng = synth::rng(11_000 + i as u64);
        let n = SIZES[i % 3];
        let a = synth::symmetric_affinity(&mut rng, n, 2)?;
        let z: Matrix<f64> = synth::uniform_matrix(&mut rng, n, 3, -1.0, 1.0);
        let u = jacobi_eigh(a.values())?.eigenvectors;
        let z_hat = gft(&u, &z)?;
        let back = inverse_gft(&u, &z_hat)?;
        let parseval = (z_hat.frobenius_norm() - z.frobenius_norm()).abs() / z.frobenius_norm();
        cases.push(Case {
            group: name,
            case: i,
            k: 0,
            n,
            error: rel_error(&back, &z)?.max(parseval),
        });
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-10, cases))
}

fn jacobi_reconstruction() -> Result<GroupReport> {
    let name = "jacobi_reconstruction";
    let mut cases = Vec::new();
    for i in 0..20 {
        let mut rng = synth::rng(12_000 + i as u64);
        let n = 2 + 3 * i;
        let r: Matrix<f64> = synth::uniform_matrix(&mut rng, n, n, -1.0, 1.0);
        let s = Matrix::from_fn(n, n, |a, b| r[(a, b)] + r[(b, a)]);
        let dec = jacobi_eigh(&s)?;
        let u = &dec.eigenvectors;
        let gram = u.matmul_tn(u)?.sub(&Matrix::identity(n))?.max_abs();
        cases.push(Case {
            group: name,
            case: i,
            k: 0,
            n,
            error: rel_error(&dec.reconstruct(), &s)?.max(gram),
        });
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-10, cases))
}

fn random_walk_rows() -> Result<GroupReport> {
    let name = "random_walk_rows";
    let mut cases = Vec::new();
    for i in 0..20 {
        let mut rng = synth::rng(13_000 + i as u64);
        let n = SIZES[i % 4];
        let phi: Matrix<f64> = synth::uniform_matrix(&mut rng, n, 3, -1.0, 1.0);
        let psi: Matrix<f64> = synth::uniform_matrix(&mut rng, n, 3, -1.0, 1.0);
        let a = normalize(&compute_affinity(&phi, &psi, Kernel::ExpDot)?, Normalization::RandomWalk)?;
        let error = a.values().row_sums().iter().fold(0.0f64, |m, s| m.max((s - 1.0).abs()));
        cases.push(Case {
            group: name,
            case: i,
            k: 0,
            n,
            error,
        });
    }
    Ok(GroupReport::worst(name, "max |row sum - 1|", 1e-12, cases))
}

fn crisscross_support() -> Result<GroupReport> {
    let name = "crisscross_support";
    let cfg = BlockConfig::new(Variant::Cc, 4, 2);
    let mut cases = Vec::new();
    for seed in 0..10 {
        let (h, w) = (3 + seed as usize % 3, 4);
        let (x, p) = problem(&cfg, 14_000 + seed, h, w)?;
        let a = build_block_affinity(&x, &cfg, &p)?;
        let mask: Matrix<f64> = crisscross_mask(h, w);
        let mut error = 0.0f64;
        for i in 0..h * w {
            let row = a.values().row(i);
            let sum: f64 = row.iter().sum();
            error = error.max((sum - 1.0).abs());
            for (j, &v) in row.iter().enumerate() {
                if mask[(i, j)] == 0.0 {
                    error = error.max(v.abs());
                }
            }
        }
        cases.push(Case {
            group: name,
            case: seed as usize,
            k: 0,
            n: h * w,
            error,
        });
    }
    Ok(GroupReport::worst(name, "max off-mask or row error", 1e-12, cases))
}

fn cgnl_vectorization() -> Result<GroupReport> {
    let name = "cgnl_vectorization";
    let cfg = BlockConfig::new(Variant::Cgnl, 4, 2);
    let mut cases = Vec::new();
    for seed in 0..10 {
        let mut rng = synth::rng(15_000 + seed);
        let (n, c) = (4 + seed as usize, 1 + seed as usize % 3);
        let z: Matrix<f64> = synth::uniform_matrix(&mut rng, n, c, -1.0, 1.0);
        let v = flatten_spatial_channel(&z);
        let mut error = 0.0f64;
        for i in 0..n {
            for j in 0..c {
                if v[(i + j * n, 0)] != z[(i, j)] {
                    error = 1.0;
                }
            }
        }
        if unflatten_spatial_channel(&v, n, c)? != z {
            error = 1.0;
        }
        let (x, p) = problem(&cfg, 15_100 + seed, 2, 3)?;
        if build_block_affinity(&x, &cfg, &p)?.vertices() != x.positions() * cfg.c_s {
            error = 1.0;
        }
        cases.push(Case {
            group: name,
            case: seed as usize,
            k: 0,
            n,
            error,
        });
    }
    Ok(GroupReport::worst(name, "layout mismatches", 0.0, cases))
}

fn permutation_equivariance() -> Result<GroupReport> {
    let name = "permutation_equivariance";
    let mut cases = Vec::new();
    let variants = ALL_VARIANTS.into_iter().filter(|&v| v != Variant::Cc);
    for (vi, v) in variants.enumerate() {
        let cfg = BlockConfig::new(v, 3, 2).with_order(3);
        for seed in 0..3u64 {
            let (x, p) = problem(&cfg, 16_000 + 10 * vi as u64 + seed, 1, 10)?;
            let n = x.positions();
            let perm: Vec<usize> = (0..n).map(|i| (7 * i + 3 + seed as usize) % n).collect();
            let permute = |m: &Matrix<f64>| Matrix::from_fn(n, m.cols(), |i, j| m[(perm[i], j)]);
            let px = FeatureMap::flat(permute(x.values()));
            let y = block_forward(&FeatureMap::flat(x.values().clone()), &cfg, &p)?;
            let py = block_forward(&px, &cfg, &p)?;
            cases.push(Case {
                group: name,
                case: 3 * vi + seed as usize,
                k: cfg.filter_count(),
                n,
                error: rel_error(py.values(), &permute(y.values()))?,
            });
        }
    }
    Ok(GroupReport::worst(name, "max rel error", 1e-10, cases))
}

fn zero_filter_identity() -> Result<GroupReport> {
    let name = "zero_filter_identity";
    let mut cases = Vec::new();
    for (vi, v) in ALL_VARIANTS.into_iter().enumerate() {
        let cfg = BlockConfig::new(v, 4, 2).with_order(3);
        let (x, mut p) = problem(&cfg, 17_000 + vi as u64, 3, 3)?;
        for w in &mut p.filters {
            *w = Matrix::zeros(w.rows(), w.cols());
        }
        let y = block_forward(&x, &cfg, &p)?;
        cases.push(Case {
            group: name,
            case: vi,
            k: cfg.filter_count(),
            n: x.positions(),
            error: y.values().sub(x.values())?.max_abs(),
        });
    }
    Ok(GroupReport::worst(name, "max |Y - X|", 0.0, cases))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_names_are_unique() {
        let mut names: Vec<_> = GROUPS.iter().map(|(n, _)| *n).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), GROUPS.len());
        assert!(GROUPS.len() >= 12);
    }

    #[test]
    fn reports_carry_their_own_name() {
        for (name, suite) in GROUPS.iter().filter(|(n, _)| !["snl_symmetry", "nl_asymmetry", "spectral_equivalence"].contains(n)) {
            let r = suite().unwrap();
            assert_eq!(r.name, *name);
            assert!(r.cases.iter().all(|c| c.group == *name));
            assert!(r.passed(), "{name}: {}", r.value);
        }
    }

    #[test]
    fn bounds() {
        assert!(Bound::AtMost(0.0).holds(0.0));
        assert!(!Bound::Above(0.9).holds(0.9));
        let nan = GroupReport::worst("x", "m", 1.0, vec![Case { group: "x", case: 0, k: 0, n: 1, error: f64::NAN }]);
        assert!(!nan.passed());
    }

    #[test]
    fn filter_selects_by_substring() {
        let r = run_groups(Some("scaled_lap")).unwrap();
        assert_eq!(r.len(), 1);
        assert!(run_groups(Some("no such group")).unwrap().is_empty());
    }
}
