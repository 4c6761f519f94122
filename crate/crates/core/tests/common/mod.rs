//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use cvon_lab::monitor::MonitorSeries;
use cvon_lab::{ConvexSet, ParameterVector};

/// `E_z |grad V(f, z)|^2` for the square loss on linear-gaussian data with
/// identity covariance: `4((p + 2)|f - w*|^2 + p sigma^2)`.
pub fn square_grad_second_moment(dist_sq: f64, p: usize, sigma: f64) -> f64 {
    let p = p as f64;
    4.0 * ((p + 2.0) * dist_sq + p * sigma * sigma)
}

/// Unprojected one-step gap `E_z[V(f, z) - V(f - gamma g, z)]` for the same
/// model: `4 gamma E[r^2 |x|^2] - 4 gamma^2 E[r^2 |x|^4]` with Gaussian
/// fourth and sixth moments.
pub fn square_gap(dist_sq: f64, p: usize, sigma: f64, gamma: f64) -> f64 {
    let p = p as f64;
    let s2 = sigma * sigma;
    let m2 = (p + 2.0) * dist_sq + p * s2;
    let m4 = (p + 2.0) * (p + 4.0) * dist_sq + p * (p + 2.0) * s2;
    4.0 * gamma * m2 - 4.0 * gamma * gamma * m4
}

/// The growth constant `sup E|g|^2 / (1 + |f - w*|^2) = 4 max(p + 2, p sigma^2)`.
pub fn square_growth(p: usize, sigma: f64) -> f64 {
    4.0 * ((p as f64 + 2.0).max(p as f64 * sigma * sigma))
}

/// Direct iteration of `V_{n+1} = V_n (1 + 2^-n) + 2^-n - V_n / 4` from
/// `V_0 = 1`.
pub fn deterministic_recursion(len: usize) -> MonitorSeries {
    let beta: Vec<f64> = (0..len).map(|n| 0.5f64.powi(n as i32)).collect();
    let chi = beta.clone();
    let mut v = vec![1.0];
    let mut eta = Vec::with_capacity(len);
    for n in 0..len {
        eta.push(v[n] / 4.0);
        if n + 1 < len {
            v.push(v[n] * (1.0 + beta[n]) + chi[n] - eta[n]);
        }
    }
    MonitorSeries::new(0, v, beta, chi, eta, 0).unwrap()
}

/// `V_{n+1} = V_n + 1` with zero perturbations, repeated `replicates` times.
pub fn drifting_series(replicates: usize, len: usize) -> Vec<MonitorSeries> {
    (0..replicates)
        .map(|r| {
            let v = (0..len).map(|n| n as f64 + 1.0).collect();
            MonitorSeries::new(0, v, vec![0.0; len], vec![0.0; len], vec![0.0; len], r).unwrap()
        })
        .collect()
}

/// Nearest point of `k` to `x` by exhaustive search over a grid of
/// spacing `h` covering `[-extent, extent]^p` (`p <= 3`). Simplex points are
/// enumerated on the simplex itself since it has no volume.
pub fn brute_force_projection(k: &ConvexSet, x: &[f64], h: f64, extent: f64) -> Vec<f64> {
    let p = x.len();
    assert!(p <= 3);
    let steps = (2.0 * extent / h).round() as i64;
    let coord = |i: i64| -extent + i as f64 * h;
    let mut best = (f64::INFINITY, vec![]);
    let mut consider = |y: Vec<f64>| {
        let d: f64 = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.0 {
            best = (d, y);
        }
    };
    if let ConvexSet::Simplex { scale } = k {
        let n = (scale / h).round() as i64;
        let h = scale / n as f64;
        match p {
            1 => consider(vec![*scale]),
            2 => (0..=n).for_each(|i| consider(vec![i as f64 * h, scale - i as f64 * h])),
            _ => {
                for i in 0..=n {
                    for j in 0..=n - i {
                        let (a, b) = (i as f64 * h, j as f64 * h);
                        consider(vec![a, b, (scale - a - b).max(0.0)]);
                    }
                }
            }
        }
        return best.1;
    }
    let total = (steps + 1).pow(p as u32);
    for idx in 0..total {
        let mut rest = idx;
        let y: Vec<f64> = (0..p)
            .map(|_| {
                let c = coord(rest % (steps + 1));
                rest /= steps + 1;
                c
            })
            .collect();
        if k.contains(&ParameterVector::new(y.clone()).unwrap(), 0.0)
            .unwrap()
        {
            consider(y);
        }
    }
    best.1
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            let pivot_row = a[col].clone();
            for (x, p) in a[row].iter_mut().zip(&pivot_row).skip(col) {
                *x -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
