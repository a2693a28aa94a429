//! Shared numerical utilities: stable log-sum-exp, compensated summation,
//! deterministic quadrature, the normal CDF and simple least-squares fits.

/// Stable log of the sum of exponentials of `values`.
///
/// Returns `NEG_INFINITY` for an empty slice or when every entry is
/// `NEG_INFINITY`. Entries equal to `NEG_INFINITY` are skipped so that
/// zero-weight particles cannot poison the sum.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = NeumaierSum::new();
    for &v in values {
        if v != f64::NEG_INFINITY {
            sum.add((v - max).exp());
        }
    }
    max + sum.total().ln()
}

/// Neumaier variant of Kahan compensated summation.
///
/// Used for every reduction whose result feeds a reported number, so that
/// aggregation order (and therefore thread count) cannot move the output.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// Compensated sum of a slice.
pub fn sum_compensated(values: &[f64]) -> f64 {
    let mut s = NeumaierSum::new();
    for &v in values {
        s.add(v);
    }
    s.total()
}

/// Compensated mean of a slice. Empty input yields NaN.
pub fn mean(values: &[f64]) -> f64 {
    sum_compensated(values) / values.len() as f64
}

/// Sample standard deviation (n-1 denominator) of a slice.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    let mut s = NeumaierSum::new();
    for &v in values {
        let d = v - m;
        s.add(d * d);
    }
    (s.total() / (n - 1) as f64).sqrt()
}

/// Composite Simpson quadrature of `f` on `[a, b]` with `2 * half_steps`
/// panels. Deterministic; used only for closed-form oracles, never inside
/// sampled estimators.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, half_steps: usize) -> f64 {
    let n = 2 * half_steps.max(1);
    let h = (b - a) / n as f64;
    let mut acc = NeumaierSum::new();
    acc.add(f(a));
    acc.add(f(b));
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc.add(w * f(a + i as f64 * h));
    }
    acc.total() * h / 3.0
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF, evaluated by quadrature of the density.
///
/// Accurate to roughly 1e-13 over the useful range; beyond |x| = 12 the
/// result saturates at 0 or 1 in f64 anyway.
pub fn normal_cdf(x: f64) -> f64 {
    if x < -12.0 {
        return 0.0;
    }
    if x > 12.0 {
        return 1.0;
    }
    let body = simpson(normal_pdf, 0.0, x.abs(), 6_000);
    if x >= 0.0 {
        0.5 + body
    } else {
        0.5 - body
    }
}

/// Ordinary least-squares line fit with coefficient of determination.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Fit `y = intercept + slope * x` by ordinary least squares.
///
/// Returns `None` for fewer than 3 points or a degenerate abscissa.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = NeumaierSum::new();
    let mut sxy = NeumaierSum::new();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx.add((x - mx) * (x - mx));
        sxy.add((x - mx) * (y - my));
    }
    let sxx = sxx.total();
    if sxx <= 0.0 || !sxx.is_finite() {
        return None;
    }
    let slope = sxy.total() / sxx;
    let intercept = my - slope * mx;
    let mut ss_res = NeumaierSum::new();
    let mut ss_tot = NeumaierSum::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let e = y - (intercept + slope * x);
        ss_res.add(e * e);
        ss_tot.add((y - my) * (y - my));
    }
    let ss_tot = ss_tot.total();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res.total() / ss_tot
    } else {
        1.0
    };
    let _ = n;
    Some(LineFit {
        slope,
        intercept,
        r2,
    })
}

/// Median of a slice (values are copied and sorted).
pub fn median(values: &[f64]) -> f64 {
    quantile_sorted(&sorted(values), 0.5)
}

/// (q25, median, q75) of a slice.
pub fn quartiles(values: &[f64]) -> (f64, f64, f64) {
    let s = sorted(values);
    (
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    )
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}

// Linear interpolation between order statistics, matching the common
// "type 7" definition.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_matches_naive_in_safe_range() {
        let v = [0.5f64, 2.0, -1.0];
        let naive = (v.iter().map(|x| x.exp()).sum::<f64>()).ln();
        assert!((logsumexp(&v) - naive).abs() < 1e-12);
    }

    #[test]
    fn logsumexp_survives_large_shifts() {
        let v = [1000.0, 1000.0 + 2f64.ln()];
        assert!((logsumexp(&v) - (1000.0 + 3f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn logsumexp_all_neg_inf() {
        assert_eq!(logsumexp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn normal_cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-14);
        // Phi(1) and Phi(-1.96) from standard tables.
        assert!((normal_cdf(1.0) - 0.841344746068543).abs() < 1e-10);
        assert!((normal_cdf(-1.96) - 0.024997895148220).abs() < 1e-10);
    }

    #[test]
    fn ols_recovers_exact_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 + 2.0 * x).collect();
        let fit = ols_fit(&xs, &ys).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_rejects_degenerate_input() {
        assert!(ols_fit(&[1.0, 2.0], &[1.0, 2.0]).is_none());
        assert!(ols_fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn quartiles_of_small_sample() {
        let (q25, med, q75) = quartiles(&[4.0, 1.0, 3.0, 2.0]);
        assert!((q25 - 1.75).abs() < 1e-12);
        assert!((med - 2.5).abs() < 1e-12);
        assert!((q75 - 3.25).abs() < 1e-12);
    }

    #[test]
    fn simpson_integrates_polynomial_exactly() {
        // Simpson is exact on cubics.
        let v = simpson(|x| x * x * x - x, 0.0, 2.0, 4);
        assert!((v - 2.0).abs() < 1e-12);
    }
}
