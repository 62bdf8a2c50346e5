//! Small statistical helpers shared by the audit harness and the
//! benchmarks: Kolmogorov-Smirnov against a uniform law, lag-1 serial
//! correlation, and least-squares curve fits.

/// Two-sided KS statistic of `samples` against Uniform[0, range).
pub fn ks_statistic_uniform(samples: &[f64], range: f64) -> f64 {
    assert!(!samples.is_empty(), "KS needs at least one sample");
    let n = samples.len() as f64;
    let mut u: Vec<f64> = samples.iter().map(|&x| (x / range).clamp(0.0, 1.0)).collect();
    u.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let mut d: f64 = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        let hi = (i as f64 + 1.0) / n - ui;
        let lo = ui - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Asymptotic 1% critical value for the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

/// Lag-1 autocorrelation; a constant sequence reports 1 (maximal
/// dependence) rather than 0/0.
pub fn lag1_autocorrelation(samples: &[f64]) -> f64 {
    let n = samples.len();
    assert!(n >= 2, "autocorrelation needs at least two samples");
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    if var <= f64::EPSILON * n as f64 {
        return 1.0;
    }
    let cov: f64 = samples
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum();
    cov / var
}

/// Least-squares fit of `y ~ a*x^2 + b*x` (no intercept). Returns
/// `(a, b, r_squared)` with R^2 measured against the mean of `y`.
pub fn fit_quadratic_through_origin(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2, "fit needs at least two points");
    let (mut s4, mut s3, mut s2) = (0.0, 0.0, 0.0);
    let (mut sx2y, mut sxy) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let x2 = x * x;
        s4 += x2 * x2;
        s3 += x2 * x;
        s2 += x2;
        sx2y += x2 * y;
        sxy += x * y;
    }
    let det = s4 * s2 - s3 * s3;
    assert!(det.abs() > 0.0, "degenerate design matrix");
    let a = (sx2y * s2 - s3 * sxy) / det;
    let b = (s4 * sxy - s3 * sx2y) / det;
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let p = a * x * x + b * x;
            (y - p) * (y - p)
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (a, b, r2)
}

/// Ordinary least-squares slope and intercept of `y ~ slope*x + intercept`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Median of a sample (averaging the central pair for even sizes).
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seedstream::CounterStream;

    #[test]
    fn ks_accepts_uniform_and_rejects_constant() {
        let mut s = CounterStream::new(5);
        let uniform: Vec<f64> = (0..5000).map(|_| s.next_angle()).collect();
        let d = ks_statistic_uniform(&uniform, std::f64::consts::TAU);
        assert!(d < ks_critical_1pct(5000), "d={d}");

        let constant = vec![1.0; 500];
        let dc = ks_statistic_uniform(&constant, std::f64::consts::TAU);
        assert!(dc > ks_critical_1pct(500), "dc={dc}");
    }

    #[test]
    fn autocorrelation_flags_repetition() {
        let mut s = CounterStream::new(6);
        let noise: Vec<f64> = (0..5000).map(|_| s.next_f64()).collect();
        assert!(lag1_autocorrelation(&noise).abs() < 3.0 / (5000f64).sqrt());
        assert_eq!(lag1_autocorrelation(&[2.0; 100]), 1.0);
        let alternating: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
        assert!(lag1_autocorrelation(&alternating) < -0.9);
    }

    #[test]
    fn quadratic_fit_recovers_exact_coefficients() {
        let xs: Vec<f64> = (1..50).map(|t| t as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| 3.5 * t * t + 2.0 * t).collect();
        let (a, b, r2) = fit_quadratic_through_origin(&xs, &ys);
        assert!((a - 3.5).abs() < 1e-9);
        assert!((b - 2.0).abs() < 1e-6);
        assert!(r2 > 0.999999);
    }

    #[test]
    fn line_fit_recovers_slope() {
        let xs: Vec<f64> = (0..20).map(|t| t as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| -0.5 * t + 3.0).collect();
        let (slope, intercept) = fit_line(&xs, &ys);
        assert!((slope + 0.5).abs() < 1e-12);
        assert!((intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
