//! Benchmark targets, dataset generators, error metrics, the baseline ResNet
//! regressor and frozen-partition diagnostics.

mod baseline;
mod oracle;

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baseline::{baseline_resnet_fit, baseline_width, ResNetRegressor, BASELINE_DEPTH};
pub use oracle::{
    indicator_partition, loglog_slope, partition_diagnostics, theorem1_scaling_oracle, PartitionDiagnostics,
};

use crate::domain::Domain;
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{norm2, DenseMatrix};
use crate::model::Dataset;

/// Triangle wave `2|p·x − ⌊p·x + 1/2⌋| − 1` with `p` periods on `[0, 1]`.
pub fn tri_wave(x: f64, p: u32) -> f64 {
    let px = p as f64 * x;
    2.0 * (px - (px + 0.5).floor()).abs() - 1.0
}

/// `sin(2π x₁)` on the horizontal arm of the cross, `sin(2π x₂)` on the
/// vertical arm.
pub fn sine_cross(x: &[f64]) -> Result<f64> {
    match *x {
        [x1, 0.0] => Ok((2.0 * std::f64::consts::PI * x1).sin()),
        [0.0, x2] => Ok((2.0 * std::f64::consts::PI * x2).sin()),
        [_, _] => Err(Error::InvalidArgument(format!("point {x:?} is not on the cross x1 = 0 or x2 = 0"))),
        _ => Err(dim_mismatch(format!("sine_cross takes 2-d points, got {}", x.len()))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveKind {
    /// Piecewise linear `TRI(x; p)`.
    Triangle,
    /// Piecewise quadratic `TRI(x; p)²`.
    Quadratic,
}

/// Formula frequency of benchmark wave `p`: `2^(p−1)`, so that wave `p` has
/// `2^p` linear (or quadratic) pieces on `[0, 1]`.
pub fn wave_frequency(p: u32) -> u32 {
    1 << (p.max(1) - 1)
}

impl WaveKind {
    /// Benchmark wave `p` (with `2^p` pieces) at `x`.
    pub fn eval(self, x: f64, p: u32) -> f64 {
        let t = tri_wave(x, wave_frequency(p));
        match self {
            WaveKind::Triangle => t,
            WaveKind::Quadratic => t * t,
        }
    }
}

/// Benchmark target functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetFunction {
    SineCross,
    TriWave {
        p: u32,
    },
    TriWaveSquared {
        p: u32,
    },
    /// `sin(2π·freq·x)` on `[0, 1]`, a smooth 1-d target.
    Sine {
        freq: f64,
    },
}

impl TargetFunction {
    pub fn domain(&self) -> Domain {
        match self {
            TargetFunction::SineCross => Domain::cube(2, -1.0, 1.0).expect("valid"),
            _ => Domain::unit(1),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match *self {
            TargetFunction::SineCross => sine_cross(x),
            TargetFunction::TriWave { p } => Ok(WaveKind::Triangle.eval(scalar(x)?, p)),
            TargetFunction::TriWaveSquared { p } => Ok(WaveKind::Quadratic.eval(scalar(x)?, p)),
            TargetFunction::Sine { freq } => Ok((2.0 * std::f64::consts::PI * freq * scalar(x)?).sin()),
        }
    }
}

fn scalar(x: &[f64]) -> Result<f64> {
    match *x {
        [v] => Ok(v),
        _ => Err(dim_mismatch(format!("expected a 1-d point, got {}", x.len()))),
    }
}

/// How points along each arm of the cross are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossSampling {
    /// `n_per_axis` equispaced points on `[−1, 1]`, endpoints included.
    #[default]
    Grid,
    /// `n_per_axis` iid uniform points on `[−1, 1]` per arm.
    Uniform,
}

/// Sine-on-a-cross dataset from an equispaced grid on each arm. The origin
/// appears on both arms and is kept once, so 501 points per arm give 1001.
pub fn make_cross_dataset(n_per_axis: usize) -> Result<Dataset> {
    if n_per_axis < 2 {
        return Err(Error::InvalidArgument(format!("n_per_axis must be at least 2, got {n_per_axis}")));
    }
    let step = 2.0 / (n_per_axis - 1) as f64;
    let ts: Vec<f64> =
        (0..n_per_axis).map(|i| if 2 * i + 1 == n_per_axis { 0.0 } else { -1.0 + step * i as f64 }).collect();
    cross_from_arm_samples(&ts, &ts)
}

/// Cross dataset with iid uniform samples on each arm.
pub fn make_cross_dataset_uniform<R: Rng + ?Sized>(n_per_axis: usize, rng: &mut R) -> Result<Dataset> {
    if n_per_axis < 2 {
        return Err(Error::InvalidArgument(format!("n_per_axis must be at least 2, got {n_per_axis}")));
    }
    let horizontal: Vec<f64> = (0..n_per_axis).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let vertical: Vec<f64> = (0..n_per_axis).map(|_| rng.random_range(-1.0..=1.0)).collect();
    cross_from_arm_samples(&horizontal, &vertical)
}

fn cross_from_arm_samples(horizontal: &[f64], vertical: &[f64]) -> Result<Dataset> {
    let mut data = Vec::with_capacity(2 * (horizontal.len() + vertical.len()));
    let mut ys = Vec::with_capacity(horizontal.len() + vertical.len());
    for &t in horizontal {
        data.extend([t, 0.0]);
        ys.push(sine_cross(&[t, 0.0])?);
    }
    for &t in vertical {
        data.extend([0.0, t]);
        ys.push(sine_cross(&[0.0, t])?);
    }
    Dataset::new(DenseMatrix::new(ys.len(), 2, data)?, ys)
}

/// `n_data` iid uniform points on `[0, 1]` labelled by wave `p` of `kind`.
pub fn make_wave_dataset<R: Rng + ?Sized>(p: u32, n_data: usize, kind: WaveKind, rng: &mut R) -> Result<Dataset> {
    if n_data == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!("need n_data ≥ 1 and p ≥ 1 (got {n_data}, {p})")));
    }
    let xs: Vec<f64> = (0..n_data).map(|_| rng.random_range(0.0..1.0)).collect();
    let ys = xs.iter().map(|&x| kind.eval(x, p)).collect();
    Dataset::new(DenseMatrix::new(n_data, 1, xs)?, ys)
}

/// `sqrt(mean((ŷ − y)²))`.
pub fn rms(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(yhat, y)?;
    if y.is_empty() {
        return Err(Error::InvalidArgument("rms of an empty set".into()));
    }
    Ok((sq_err(yhat, y) / y.len() as f64).sqrt())
}

/// `‖ŷ − y‖₂ / ‖y‖₂`.
pub fn relative_l2(yhat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(yhat, y)?;
    let ny = norm2(y);
    if ny == 0.0 {
        return Err(Error::InvalidArgument("relative error against an all-zero target".into()));
    }
    Ok(sq_err(yhat, y).sqrt() / ny)
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_mismatch(format!("{} predictions for {} targets", a.len(), b.len())));
    }
    Ok(())
}

fn sq_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, t)| (p - t) * (p - t)).sum()
}

/// Writes `x1,…,xd,y` rows with 17 significant digits, in dataset order.
pub fn write_dataset_csv<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = data.dim();
    let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    w.write_record(&header).map_err(csv_err)?;
    for (row, y) in data.xs().row_iter().zip(data.ys()) {
        let rec: Vec<String> = row.iter().chain(std::iter::once(y)).map(|v| format!("{v:.16e}")).collect();
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_dataset_csv`] (or any `x1,…,xd,y` CSV).
pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let d = header.len().saturating_sub(1);
    let expected: Vec<String> = (1..=d).map(|j| format!("x{j}")).chain(["y".to_string()]).collect();
    if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::InvalidArgument(format!(
            "dataset header must be x1,…,xd,y; got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("row {}: cannot parse {field:?} as a number", line + 2)))?;
            if j < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    Dataset::new(DenseMatrix::new(ys.len(), d, xs)?, ys)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}
