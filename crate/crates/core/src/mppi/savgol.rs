//! Savitzky–Golay smoothing of control sequences.
//!
//! Each output sample is the value of the least-squares polynomial fitted
//! over a window of `window` samples. Near the ends of the sequence the window
//! is shifted to stay inside it (a one-sided fit evaluated off-centre), so no
//! padding samples are invented.

use crate::dynamics::ControlInput;
use crate::error::{Error, Result};

/// Solves `m x = rhs` in place by Gaussian elimination with partial pivoting.
fn solve_dense(mut m: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Vec<f64> {
    let n = rhs.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, pivot);
        rhs.swap(col, pivot);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                rhs[row] -= f * rhs[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
        x[row] = (rhs[row] - tail) / m[row][row];
    }
    x
}

/// Weights `h` such that `sum_j h[j] * y[j]` is the fitted polynomial's value
/// at sample `eval_at` of a `window`-sample window.
pub fn savgol_coefficients(window: usize, order: usize, eval_at: usize) -> Vec<f64> {
    let half = (window as f64 - 1.0) / 2.0;
    let scale = half.max(1.0);
    let z: Vec<f64> = (0..window).map(|j| (j as f64 - eval_at as f64) / scale).collect();
    let terms = order + 1;
    let mut normal = vec![vec![0.0; terms]; terms];
    for zj in &z {
        for p in 0..terms {
            for q in 0..terms {
                normal[p][q] += zj.powi((p + q) as i32);
            }
        }
    }
    let mut e0 = vec![0.0; terms];
    e0[0] = 1.0;
    let x = solve_dense(normal, e0);
    z.iter().map(|zj| (0..terms).map(|p| x[p] * zj.powi(p as i32)).sum()).collect()
}

fn check_params(window: usize, order: usize) -> Result<()> {
    if window.is_multiple_of(2) || window <= order {
        return Err(Error::invalid(format!(
            "smoothing window must be odd and exceed the order (window={window}, order={order})"
        )));
    }
    Ok(())
}

pub fn savgol_filter(values: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    check_params(window, order)?;
    let n = values.len();
    if window > n {
        return Err(Error::WindowTooLarge { window, len: n });
    }
    let tables: Vec<Vec<f64>> = (0..window).map(|off| savgol_coefficients(window, order, off)).collect();
    let half = window / 2;
    Ok((0..n)
        .map(|i| {
            let start = i.saturating_sub(half).min(n - window);
            let h = &tables[i - start];
            h.iter().zip(&values[start..start + window]).map(|(c, y)| c * y).sum()
        })
        .collect())
}

/// Smooths both control channels independently.
pub fn savgol_smooth(seq: &[ControlInput], window: usize, order: usize) -> Result<Vec<ControlInput>> {
    let a: Vec<f64> = seq.iter().map(|u| u.a).collect();
    let w: Vec<f64> = seq.iter().map(|u| u.omega).collect();
    let a = savgol_filter(&a, window, order)?;
    let w = savgol_filter(&w, window, order)?;
    Ok(a.into_iter().zip(w).map(|(a, omega)| ControlInput { a, omega }).collect())
}
