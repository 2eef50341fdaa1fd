use serde::{Deserialize, Serialize};

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::linalg::{solve_least_squares, DenseMatrix};
use crate::model::assemble_design;
use crate::optim::detect_collapse;
use crate::poly::MonomialBasis;

/// Disjoint indicator partition of `[0, 1]` into `n_part` equal cells,
/// evaluated at 1-d points. The right endpoint belongs to the last cell.
pub fn indicator_partition(xs: &[f64], n_part: usize) -> DenseMatrix {
    let mut phi = DenseMatrix::zeros(xs.len(), n_part);
    for (i, &x) in xs.iter().enumerate() {
        let cell = ((x * n_part as f64).floor().max(0.0) as usize).min(n_part - 1);
        phi.set(i, cell, 1.0);
    }
    phi
}

/// Best training RMS of a degree-`m` POUnet on a frozen uniform indicator
/// partition of `[0, 1]`, for each `N_part`. The `n_points` samples are cell
/// midpoints of a uniform grid; coefficients come from one exact
/// unregularized least-squares solve (no training).
pub fn theorem1_scaling_oracle(
    m: usize,
    n_part_list: &[usize],
    target: impl Fn(f64) -> f64,
    n_points: usize,
) -> Result<Vec<(usize, f64)>> {
    let xs: Vec<f64> = (0..n_points).map(|i| (i as f64 + 0.5) / n_points as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| target(x)).collect();
    let basis = MonomialBasis::for_domain(&Domain::unit(1), m);
    let pv = basis.eval_batch(&DenseMatrix::new(n_points, 1, xs.clone())?)?;
    n_part_list
        .iter()
        .map(|&np| {
            if np == 0 || np * (m + 1) > n_points {
                return Err(Error::InvalidArgument(format!(
                    "{n_points} points cannot determine {np} cells of degree {m}"
                )));
            }
            let a = assemble_design(&indicator_partition(&xs, np), &pv)?;
            let c = solve_least_squares(&a, &ys, 0.0)?;
            let pred = a.matvec(&c)?;
            Ok((np, crate::bench::rms(&pred, &ys)?))
        })
        .collect()
}

/// Least-squares slope of `ln(error)` against `ln(N_part)`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|(k, _)| (*k as f64).ln()).collect();
    let ly: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionDiagnostics {
    /// Diameter of each partition's effective support on the point cloud.
    pub diameters: Vec<f64>,
    pub collapsed_count: usize,
    pub tau: f64,
}

/// Effective support `S_α = {x_i : φ_α(x_i) > tau}` and its diameter (largest
/// pairwise distance, 0 for fewer than two points), plus the collapse count.
pub fn partition_diagnostics(
    partition_evals: &DenseMatrix,
    xs: &DenseMatrix,
    tau: f64,
) -> Result<PartitionDiagnostics> {
    if partition_evals.rows() != xs.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} partition rows for {} points",
            partition_evals.rows(),
            xs.rows()
        )));
    }
    let diameters = (0..partition_evals.cols())
        .map(|alpha| {
            let support: Vec<&[f64]> = xs
                .row_iter()
                .zip(partition_evals.row_iter())
                .filter(|(_, phi)| phi[alpha] > tau)
                .map(|(x, _)| x)
                .collect();
            let mut diam2 = 0.0_f64;
            for (i, a) in support.iter().enumerate() {
                for b in &support[i + 1..] {
                    let d2: f64 = a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum();
                    diam2 = diam2.max(d2);
                }
            }
            diam2.sqrt()
        })
        .collect();
    Ok(PartitionDiagnostics { diameters, collapsed_count: detect_collapse(partition_evals, tau).len(), tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomials_are_reproduced_exactly() {
        for m in 0..=3usize {
            let poly = move |x: f64| (0..=m).map(|k| (k as f64 + 1.0) * x.powi(k as i32)).sum::<f64>();
            for (_, e) in theorem1_scaling_oracle(m, &[1, 4, 8, 16, 32], poly, 1024).unwrap() {
                assert!(e <= 1e-10, "m={m} rms={e}");
            }
        }
    }

    /// Per-cell reference: within one cell the LS fit is a local polynomial
    /// regression, solved here through explicit normal equations in local
    /// coordinates.
    fn per_cell_rms(m: usize, n_part: usize, n_points: usize) -> f64 {
        let f = |x: f64| (2.0 * PI * x).sin();
        let mut sse = 0.0;
        for cell in 0..n_part {
            let pts: Vec<f64> = (0..n_points)
                .map(|i| (i as f64 + 0.5) / n_points as f64)
                .filter(|&x| ((x * n_part as f64).floor() as usize).min(n_part - 1) == cell)
                .collect();
            let mid = (cell as f64 + 0.5) / n_part as f64;
            let k = m + 1;
            let mut g = vec![vec![0.0; k + 1]; k];
            for &x in &pts {
                let t = (x - mid) * n_part as f64;
                let row: Vec<f64> = (0..k).map(|j| t.powi(j as i32)).collect();
                for a in 0..k {
                    for b in 0..k {
                        g[a][b] += row[a] * row[b];
                    }
                    g[a][k] += row[a] * f(x);
                }
            }
            // Gauss-Jordan on the small SPD system.
            for col in 0..k {
                let piv = g[col][col];
                g[col][col..=k].iter_mut().for_each(|v| *v /= piv);
                let prow = g[col].clone();
                for (r, row) in g.iter_mut().enumerate() {
                    if r != col {
                        let fac = row[col];
                        for (v, p) in row[col..=k].iter_mut().zip(&prow[col..=k]) {
                            *v -= fac * p;
                        }
                    }
                }
            }
            for &x in &pts {
                let t = (x - mid) * n_part as f64;
                let p: f64 = (0..k).map(|j| g[j][k] * t.powi(j as i32)).sum();
                sse += (p - f(x)).powi(2);
            }
        }
        (sse / n_points as f64).sqrt()
    }

    #[test]
    fn matches_per_cell_reference() {
        let sine = |x: f64| (2.0 * PI * x).sin();
        for m in 1..=2 {
            let got = theorem1_scaling_oracle(m, &[4, 8, 16], sine, 1024).unwrap();
            for (np, e) in got {
                let reference = per_cell_rms(m, np, 1024);
                assert!((e - reference).abs() <= 1e-8 * reference, "m={m} N={np}: {e} vs {reference}");
            }
        }
    }

    #[test]
    fn sine_error_quarters_per_doubling_for_linear() {
        let sine = |x: f64| (2.0 * PI * x).sin();
        let r = theorem1_scaling_oracle(1, &[8, 16, 32], sine, 2048).unwrap();
        for w in r.windows(2) {
            let ratio = w[1].1 / w[0].1;
            assert!((ratio - 0.25).abs() < 0.03, "ratio {ratio}");
        }
        let s1 = loglog_slope(&theorem1_scaling_oracle(1, &[4, 8, 16, 32], sine, 2048).unwrap());
        let s2 = loglog_slope(&theorem1_scaling_oracle(2, &[4, 8, 16, 32], sine, 2048).unwrap());
        assert!(s2 < s1, "{s2} !< {s1}");
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(usize, f64)> = [2usize, 4, 8].iter().map(|&n| (n, 3.0 * (n as f64).powf(-2.5))).collect();
        assert!((loglog_slope(&pts) + 2.5).abs() < 1e-12);
    }

    #[test]
    fn diagnostics() {
        let n = 1001;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let phi = indicator_partition(&xs, 4);
        let pts = DenseMatrix::new(n, 1, xs).unwrap();
        let d = partition_diagnostics(&phi, &pts, 1e-3).unwrap();
        for diam in &d.diameters {
            assert!((diam - 0.25).abs() < 2e-3, "{diam}");
        }
        assert_eq!(d.collapsed_count, 0);

        let single = DenseMatrix::new(1, 1, vec![0.3]).unwrap();
        let one = DenseMatrix::new(1, 1, vec![1.0]).unwrap();
        assert_eq!(partition_diagnostics(&one, &single, 1e-3).unwrap().diameters, vec![0.0]);

        let uniform = DenseMatrix::new(n, 3, vec![1.0 / 3.0; 3 * n]).unwrap();
        let u = partition_diagnostics(&uniform, &pts, 1e-3).unwrap();
        assert_eq!(u.collapsed_count, 0);
        assert!(u.diameters.iter().all(|&x| (x - 1.0).abs() < 1e-12));
    }
}
