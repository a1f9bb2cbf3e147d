//! Natural-log arithmetic helpers.
//!
//! Every probability in the crate is carried as a natural logarithm. The
//! accumulators here rescale by the running maximum so that sums spanning
//! hundreds of orders of magnitude stay finite.

/// `ln(exp(a) + exp(b))`.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Log-sum-exp over a slice using a single max-rescaled pass.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let mut acc = LogSumAccumulator::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Log-sum-exp by a balanced pairwise tree.
///
/// The reduction shape depends only on `values.len()`, so chunked or parallel
/// producers that concatenate their outputs in index order get bit-identical
/// results.
pub fn log_sum_exp_pairwise(values: &[f64]) -> f64 {
    match values.len() {
        0 => f64::NEG_INFINITY,
        1 => values[0],
        2 => log_add(values[0], values[1]),
        n => {
            let mid = n / 2;
            log_add(
                log_sum_exp_pairwise(&values[..mid]),
                log_sum_exp_pairwise(&values[mid..]),
            )
        }
    }
}

/// Normalizes log-scores into log-probabilities in place and returns the
/// normalizer.
pub fn log_normalize(values: &mut [f64]) -> f64 {
    let z = log_sum_exp(values);
    if z.is_finite() {
        for v in values.iter_mut() {
            *v -= z;
        }
    }
    z
}

/// Running log-sum-exp with Neumaier-compensated summation of the rescaled
/// terms.
#[derive(Debug, Clone, Copy)]
pub struct LogSumAccumulator {
    max: f64,
    sum: f64,
    comp: f64,
    count: u64,
}

impl Default for LogSumAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl LogSumAccumulator {
    pub fn new() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            comp: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, x: f64) {
        self.count += 1;
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            if self.max != f64::NEG_INFINITY {
                let scale = (self.max - x).exp();
                self.sum *= scale;
                self.comp *= scale;
            }
            self.max = x;
        }
        let term = (x - self.max).exp();
        let t = self.sum + term;
        if self.sum.abs() >= term.abs() {
            self.comp += (self.sum - t) + term;
        } else {
            self.comp += (term - t) + self.sum;
        }
        self.sum = t;
    }

    /// Merges another accumulator; callers merge in a fixed order to keep
    /// results reproducible.
    pub fn merge(&mut self, other: &LogSumAccumulator) {
        if other.max == f64::NEG_INFINITY {
            self.count += other.count;
            return;
        }
        let mut o = *other;
        if o.max > self.max {
            std::mem::swap(self, &mut o);
        }
        let scale = (o.max - self.max).exp();
        self.sum += (o.sum + o.comp) * scale;
        self.count += o.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.max + (self.sum + self.comp).ln()
    }
}

/// Formats a value with `digits` significant digits in plain decimal
/// notation; infinities print as `-inf`/`inf`.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x < 0.0 { "-inf".into() } else { "inf".into() };
    }
    if x == 0.0 {
        return format!("{:.*}", digits.saturating_sub(1), 0.0);
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{:.*}", decimals, x)
}
