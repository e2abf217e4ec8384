use std::path::Path;
use std::time::Instant;

use snl_core::blocks::{block_forward, BlockConfig, BlockParams, Variant, ALL_VARIANTS};
use snl_core::{synth, FeatureMap};

use crate::{create_dir, write_file, CliError, CliResult};

/// Grid size for the Chebyshev order sweep.
pub const ORDER_N: usize = 256;
pub const ORDERS: std::ops::RangeInclusive<usize> = 2..=10;
/// Largest accepted ratio between the per-order cost at high and low K.
pub const MAX_CURVATURE: f64 = 1.5;

fn config(v: Variant) -> BlockConfig {
    // CGNL's graph has N * C_s vertices.
    if v == Variant::Cgnl {
        BlockConfig::new(v, 4, 2)
    } else {
        BlockConfig::new(v, 8, 4).with_order(3)
    }
}

fn side(n: usize) -> CliResult<usize> {
    let s = (n as f64).sqrt().round() as usize;
    if s == 0 || s * s != n {
        return Err(CliError::Usage(format!("bench size {n} is not a square grid")));
    }
    Ok(s)
}

/// Fastest of `reps` forward passes, in seconds.
fn time_forward(cfg: &BlockConfig, n: usize, reps: usize) -> CliResult<f64> {
    let s = side(n)?;
    let mut rng = synth::rng(n as u64);
    let x: FeatureMap<f64> = synth::uniform_feature_map(&mut rng, s, s, cfg.c_in);
    let p = BlockParams::init(cfg, &mut rng)?;
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t = Instant::now();
        std::hint::black_box(block_forward(&x, cfg, &p)?);
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Least-squares slope of `t` against `k`.
fn slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let mk = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let mt = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|&(k, t)| (k as f64 - mk) * (t - mt)).sum();
    let den: f64 = points.iter().map(|&(k, _)| (k as f64 - mk).powi(2)).sum();
    num / den
}

/// Ratio of the per-order cost over the upper half of the sweep to that
/// over the lower half. Close to 1 when each extra power costs the same.
pub fn curvature(points: &[(usize, f64)]) -> f64 {
    let mid = points.len() / 2;
    let lo = slope(&points[..=mid]);
    let hi = slope(&points[mid..]);
    if lo <= 0.0 {
        return if hi <= 0.0 { 1.0 } else { f64::INFINITY };
    }
    hi / lo
}

pub fn bench(sizes: &[usize], reps: usize, out: Option<&Path>) -> CliResult<bool> {
    if reps == 0 || sizes.is_empty() {
        return Err(CliError::Usage("need at least one size and one repetition".into()));
    }
    for &n in sizes {
        side(n)?;
    }
    let mut table = String::from("variant,n,c_in,c_s,order,seconds\n");
    println!("{:<8} {:>6} {:>12}", "variant", "N", "seconds");
    for v in ALL_VARIANTS {
        let cfg = config(v);
        for &n in sizes {
            let t = time_forward(&cfg, n, reps)?;
            println!("{:<8} {:>6} {:>12.6}", v.name(), n, t);
            table.push_str(&format!("{},{n},{},{},{},{t:.9}\n", v.name(), cfg.c_in, cfg.c_s, cfg.order));
        }
    }

    let mut order_table = String::from("n,order,seconds\n");
    let mut points = Vec::new();
    for k in ORDERS {
        let cfg = BlockConfig::new(Variant::ChebK, 8, 4).with_order(k);
        let t = time_forward(&cfg, ORDER_N, reps.max(5))?;
        order_table.push_str(&format!("{ORDER_N},{k},{t:.9}\n"));
        points.push((k, t));
    }
    let per_order = slope(&points);
    let bend = curvature(&points);
    let linear = bend <= MAX_CURVATURE;
    println!(
        "CHEB_K at N={ORDER_N}: {:.3e} s per extra order, high/low ratio {bend:.2} ({})",
        per_order,
        if linear { "linear" } else { "SUPERLINEAR" }
    );
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("bench.csv"), table.as_bytes())?;
        write_file(&dir.join("bench_order.csv"), order_table.as_bytes())?;
    }
    Ok(linear)
}
