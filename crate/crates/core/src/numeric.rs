//! Summation and weighted-mean statistics shared by the estimators.

/// Below this length the pairwise recursion falls back to a plain loop.
const PAIRWISE_BLOCK: usize = 16;

/// Pairwise (tree) summation. Error grows with `O(log n)` rather than `O(n)`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(x)` over an iterator, in iteration order.
pub fn pairwise_sum_by<T>(items: impl IntoIterator<Item = T>, f: impl FnMut(T) -> f64) -> f64 {
    let values: Vec<f64> = items.into_iter().map(f).collect();
    pairwise_sum(&values)
}

/// Summary of a weighted sample of observations `(w_k, x_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedMean {
    pub mean: f64,
    /// Standard error of the weighted mean, when it is defined.
    pub std_err: Option<f64>,
    /// Kish effective sample size `(Σw)² / Σw²`.
    pub n_effective: f64,
}

impl WeightedMean {
    /// Weighted mean with the standard error for weights that express the
    /// relative importance of observations:
    ///
    /// `SE² = (Σw·x²/Σw − x̄²) · Σw² / ((Σw)² − Σw²)`
    ///
    /// Returns `None` when there are no observations or the total weight is
    /// not positive. The standard error is undefined (`None`) when the
    /// denominator vanishes, i.e. a single effective observation.
    pub fn relative_importance(observations: &[(f64, f64)]) -> Option<Self> {
        let weights: Vec<f64> = observations.iter().map(|&(w, _)| w).collect();
        let sum_w = pairwise_sum(&weights);
        if observations.is_empty() || sum_w <= 0.0 {
            return None;
        }
        let sum_wx = pairwise_sum_by(observations, |&(w, x)| w * x);
        let sum_wxx = pairwise_sum_by(observations, |&(w, x)| w * x * x);
        let sum_ww = pairwise_sum_by(observations, |&(w, _)| w * w);
        let mean = sum_wx / sum_w;
        let second = sum_wxx / sum_w;
        let variance = (second - mean * mean).max(0.0);
        let denom = sum_w * sum_w - sum_ww;
        let std_err = if denom > sum_w * sum_w * 1e-12 {
            Some((variance * sum_ww / denom).sqrt())
        } else {
            None
        };
        Some(Self {
            mean,
            std_err,
            n_effective: sum_w * sum_w / sum_ww,
        })
    }

    /// Mean of replicated observations, where `(count, x)` stands for
    /// `count` independent draws with value `x`. The standard error is that
    /// of a plain mean over all draws.
    pub fn replicated(observations: &[(u64, f64)]) -> Option<Self> {
        let n: u64 = observations.iter().map(|&(c, _)| c).sum();
        if n == 0 {
            return None;
        }
        let n_f = n as f64;
        let sum_x = pairwise_sum_by(observations, |&(c, x)| c as f64 * x);
        let sum_xx = pairwise_sum_by(observations, |&(c, x)| c as f64 * x * x);
        let mean = sum_x / n_f;
        let variance = (sum_xx / n_f - mean * mean).max(0.0);
        let std_err = (n > 1).then(|| (variance / (n_f - 1.0)).sqrt());
        Some(Self {
            mean,
            std_err,
            n_effective: n_f,
        })
    }
}
