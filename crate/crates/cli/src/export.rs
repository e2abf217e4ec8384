use std::fs;
use std::path::Path;

use snl_core::blocks::{build_block_affinity, BlockConfig, BlockParams, Variant};
use snl_core::io::{heatmap_pgm, read_matrix_file, write_csv};
use snl_core::{synth, Error, FeatureMap, Matrix};

use crate::{create_dir, input, write_file, CliError, CliResult};

pub struct ExportArgs<'a> {
    pub input: &'a Path,
    pub block: &'a Path,
    pub positions: &'a [usize],
    pub out: &'a Path,
    pub height: Option<usize>,
    pub params: Option<&'a Path>,
    pub seed: u64,
}

fn grid(n: usize, height: Option<usize>) -> CliResult<(usize, usize)> {
    match height {
        Some(h) if h > 0 && n % h == 0 => Ok((h, n / h)),
        Some(h) => Err(CliError::Usage(format!("{n} positions do not fill a grid of height {h}"))),
        None => {
            let s = (n as f64).sqrt().round() as usize;
            if s * s == n && n > 0 {
                Ok((s, s))
            } else {
                Err(CliError::Usage(format!("{n} positions is not a square grid; pass --height")))
            }
        }
    }
}

/// Writes `attention_<p>.pgm` for each requested position `p` plus the
/// same rows as `attention.csv`.
pub fn export_attention(args: &ExportArgs<'_>) -> CliResult<bool> {
    let values: Matrix<f64> = input(args.input, read_matrix_file(args.input))?;
    let text = input(args.block, fs::read_to_string(args.block).map_err(Error::from))?;
    let cfg: BlockConfig = input(args.block, serde_json::from_str(&text).map_err(Error::from))?;
    if cfg.variant == Variant::Cgnl {
        return Err(CliError::Usage(
            "CGNL attends over (position, channel) pairs, not positions; pick another variant".into(),
        ));
    }
    let (h, w) = grid(values.rows(), args.height)?;
    let x = input(args.input, FeatureMap::new(h, w, values))?;
    input(args.block, cfg.validate_for(&x))?;
    let params = match args.params {
        Some(dir) => {
            let (saved, p) = input(dir, BlockParams::load(dir))?;
            if saved != cfg {
                return Err(CliError::Usage(format!(
                    "{} was saved for a different block config",
                    dir.display()
                )));
            }
            p
        }
        None => BlockParams::init(&cfg, &mut synth::rng(args.seed))?,
    };
    if let Some(&p) = args.positions.iter().find(|&&p| p >= h * w) {
        return Err(CliError::Usage(format!("position {p} is outside the {h}x{w} grid")));
    }
    let a = build_block_affinity(&x, &cfg, &params)?;
    create_dir(args.out)?;
    let mut rows = Vec::with_capacity(args.positions.len());
    for &p in args.positions {
        let row = a.values().row(p);
        write_file(&args.out.join(format!("attention_{p}.pgm")), &heatmap_pgm(row, h, w)?)?;
        rows.push(row.to_vec());
    }
    let mut buf = Vec::new();
    write_csv(&Matrix::from_rows(&rows)?, &mut buf)?;
    write_file(&args.out.join("attention.csv"), &buf)?;
    println!("wrote {} heatmaps ({h}x{w}) to {}", rows.len(), args.out.display());
    Ok(true)
}
