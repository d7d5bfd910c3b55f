use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{config_err, Result};

/// Rank of `truth` among `draws`: the number of draws strictly below it.
pub fn sbc_rank(truth: f64, draws: &[f64]) -> usize {
    draws.iter().filter(|d| **d < truth).count()
}

/// Chi-squared uniformity test of ranks in `0..=n_draws` grouped into
/// `bins` equal-width bins. Returns `(statistic, p-value)`.
pub fn rank_uniformity(ranks: &[usize], n_draws: usize, bins: usize) -> Result<(f64, f64)> {
    if ranks.is_empty() || bins < 2 || bins > n_draws + 1 {
        return Err(config_err(
            "uniformity test needs ranks and 2 <= bins <= n_draws + 1",
        ));
    }
    let levels = n_draws + 1;
    let mut counts = vec![0usize; bins];
    for &r in ranks {
        counts[(r.min(n_draws) * bins) / levels] += 1;
    }
    let n = ranks.len() as f64;
    let mut stat = 0.0;
    for (b, &c) in counts.iter().enumerate() {
        // Exact bin probability when levels do not divide evenly.
        let lo = (b * levels).div_ceil(bins);
        let hi = ((b + 1) * levels).div_ceil(bins);
        let expected = n * (hi - lo) as f64 / levels as f64;
        stat += (c as f64 - expected).powi(2) / expected;
    }
    let dist = ChiSquared::new((bins - 1) as f64).map_err(|e| config_err(e.to_string()))?;
    Ok((stat, 1.0 - dist.cdf(stat)))
}
