use crate::{Error, Result};

/// Exponential smoothing with half-life `h`: `y_1 = x_1`,
/// `y_t = λ y_{t−1} + (1 − λ) x_t`, `λ = 2^(−1/h)`.
pub fn exp_smooth(series: &[f64], half_life: f64) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::InvalidInput("cannot smooth an empty series".into()));
    }
    if !(half_life > 0.0) {
        return Err(Error::InvalidInput(format!("half-life {half_life} must be positive")));
    }
    let lambda = smoothing_factor(half_life);
    let mut out = Vec::with_capacity(series.len());
    let mut y = series[0];
    out.push(y);
    for &x in &series[1..] {
        y = lambda * y + (1.0 - lambda) * x;
        out.push(y);
    }
    Ok(out)
}

pub fn smoothing_factor(half_life: f64) -> f64 {
    (-1.0 / half_life).exp2()
}

/// One-dimensional Wasserstein-1 distance between two empirical measures.
///
/// Equal sizes use the sorted coupling; otherwise the quantile functions
/// are integrated over the merged breakpoints.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("Wasserstein distance of an empty sample".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("Wasserstein sample".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / a.len() as f64);
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let next_a = (i + 1) as f64 / n;
        let next_b = (j + 1) as f64 / m;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// Mean and standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
