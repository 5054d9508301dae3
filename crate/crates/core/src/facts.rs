//! Return statistics and the stylised-facts distance.
//!
//! The distance between a simulated and a historical day is the weighted sum
//! of four non-negative parts: the two-sample Kolmogorov-Smirnov statistic of
//! returns, the absolute volatility gap, and the mean absolute gaps between
//! the autocorrelations of returns and of squared returns over fixed lag sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PricePath;

/// Lags used for the return autocorrelation gap: three blocks of three
/// consecutive lags starting at 1, 10 and 20.
pub const RETURN_ACF_LAGS: [usize; 9] = [1, 2, 3, 10, 11, 12, 20, 21, 22];

/// Lags used for the squared-return autocorrelation gap.
pub const SQUARED_ACF_LAGS: [usize; 20] = [
    1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20,
];

/// Shortest price path for which every lag in [`RETURN_ACF_LAGS`] exists.
pub const MIN_PATH_LEN: usize = 24;

/// Per-minute returns, defined as first differences of price.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub values: Vec<f64>,
}

impl ReturnSeries {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn squared(&self) -> ReturnSeries {
        ReturnSeries::new(self.values.iter().map(|r| r * r).collect())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn returns(prices: &PricePath) -> ReturnSeries {
    ReturnSeries::new(prices.prices.windows(2).map(|w| w[1] - w[0]).collect())
}

/// `sup_x |F_a(x) - F_b(x)|` over the two empirical CDFs. Both CDFs only
/// jump at sample points, so the supremum is attained at one of them.
pub fn ks_statistic(a: &ReturnSeries, b: &ReturnSeries) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("KS statistic needs non-empty samples".into()));
    }
    let mut a = a.values.clone();
    let mut b = b.values.clone();
    if a.iter().chain(&b).any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("NaN in KS sample".into()));
    }
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(ks_sorted(&a, &b))
}

pub(crate) fn ks_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    sup
}

/// Biased sample autocorrelation at `lag`:
/// `sum_{t<n-l} (r_t - m)(r_{t+l} - m) / sum_t (r_t - m)^2`.
pub fn acf(series: &ReturnSeries, lag: usize) -> Result<f64> {
    acf_lags(series, &[lag]).map(|v| v[0])
}

/// [`acf`] at several lags, sharing the mean and denominator.
pub fn acf_lags(series: &ReturnSeries, lags: &[usize]) -> Result<Vec<f64>> {
    let r = &series.values;
    let n = r.len();
    if let Some(&max_lag) = lags.iter().max() {
        if n <= max_lag {
            return Err(Error::InsufficientData {
                needed: max_lag + 1,
                got: n,
            });
        }
    }
    let mean = series.mean();
    let centered: Vec<f64> = r.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|c| c * c).sum();
    if !(denom > 0.0) {
        return Err(Error::UndefinedAcf);
    }
    Ok(lags
        .iter()
        .map(|&l| {
            centered[..n - l]
                .iter()
                .zip(&centered[l..])
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / denom
        })
        .collect())
}

/// `m4 / m2^2 - 3` with population central moments.
pub fn excess_kurtosis(series: &ReturnSeries) -> Result<f64> {
    let n = series.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let mean = series.mean();
    let (m2, m4) = series.values.iter().fold((0.0, 0.0), |(m2, m4), v| {
        let d = (v - mean) * (v - mean);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n as f64, m4 / n as f64);
    if !(m2 > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

/// Sample standard deviation (n - 1 denominator).
pub fn volatility(series: &ReturnSeries) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let mean = series.mean();
    let ss: f64 = series.values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistanceWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl Default for DistanceWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            w4: 1.0,
        }
    }
}

impl DistanceWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.w1, self.w2, self.w3, self.w4];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParams("distance weights must be >= 0".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidParams("distance weights are all zero".into()));
        }
        Ok(())
    }

    pub fn combine(&self, ks: f64, vol_gap: f64, acf1_gap: f64, acf2_gap: f64) -> f64 {
        self.w1 * ks + self.w2 * vol_gap + self.w3 * acf1_gap + self.w4 * acf2_gap
    }
}

/// The four distance components and their weighted sum.
///
/// When `degenerate` is set the simulated path had no defined
/// autocorrelation (constant returns or constant squared returns); `total`
/// then holds the ceiling score instead of the weighted sum and the ACF gaps
/// are zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBreakdown {
    pub ks: f64,
    pub vol_gap: f64,
    pub acf1_gap: f64,
    pub acf2_gap: f64,
    pub total: f64,
    #[serde(default)]
    pub degenerate: bool,
}

impl DistanceBreakdown {
    pub fn from_components(
        weights: &DistanceWeights,
        ks: f64,
        vol_gap: f64,
        acf1_gap: f64,
        acf2_gap: f64,
    ) -> Self {
        Self {
            ks,
            vol_gap,
            acf1_gap,
            acf2_gap,
            total: weights.combine(ks, vol_gap, acf1_gap, acf2_gap),
            degenerate: false,
        }
    }

    pub fn degenerate(ceiling: f64) -> Self {
        Self {
            ks: 0.0,
            vol_gap: 0.0,
            acf1_gap: 0.0,
            acf2_gap: 0.0,
            total: ceiling,
            degenerate: true,
        }
    }
}

/// Precomputed statistics of one day, so that a fixed history can be
/// compared against many simulations cheaply.
#[derive(Debug, Clone)]
pub struct FactsProfile {
    pub sorted_returns: Vec<f64>,
    pub volatility: f64,
    pub return_acf: Vec<f64>,
    pub squared_acf: Vec<f64>,
}

impl FactsProfile {
    pub fn new(prices: &PricePath) -> Result<Self> {
        if prices.len() < MIN_PATH_LEN {
            return Err(Error::InsufficientData {
                needed: MIN_PATH_LEN,
                got: prices.len(),
            });
        }
        let r = returns(prices);
        if r.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite return".into()));
        }
        let return_acf = acf_lags(&r, &RETURN_ACF_LAGS)?;
        let squared_acf = acf_lags(&r.squared(), &SQUARED_ACF_LAGS)?;
        let volatility = volatility(&r)?;
        let mut sorted_returns = r.values;
        sorted_returns.sort_by(f64::total_cmp);
        Ok(Self {
            sorted_returns,
            volatility,
            return_acf,
            squared_acf,
        })
    }

    pub fn distance_to(&self, hist: &FactsProfile, weights: &DistanceWeights) -> DistanceBreakdown {
        let ks = ks_sorted(&self.sorted_returns, &hist.sorted_returns);
        let vol_gap = (self.volatility - hist.volatility).abs();
        let acf1_gap = mean_abs_gap(&self.return_acf, &hist.return_acf);
        let acf2_gap = mean_abs_gap(&self.squared_acf, &hist.squared_acf);
        DistanceBreakdown::from_components(weights, ks, vol_gap, acf1_gap, acf2_gap)
    }
}

fn mean_abs_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Stylised-facts distance of `sim` from a precomputed historical profile.
/// A simulated path whose autocorrelations are undefined scores `ceiling`
/// with the degenerate flag.
pub fn distance_to_profile(
    sim: &PricePath,
    hist: &FactsProfile,
    weights: &DistanceWeights,
    ceiling: f64,
) -> Result<DistanceBreakdown> {
    match FactsProfile::new(sim) {
        Ok(profile) => Ok(profile.distance_to(hist, weights)),
        Err(Error::UndefinedAcf) | Err(Error::InvalidInput(_)) => {
            Ok(DistanceBreakdown::degenerate(ceiling))
        }
        Err(e) => Err(e),
    }
}

/// Stylised-facts distance between a simulated and a historical path. The
/// historical path must itself have well-defined statistics.
pub fn distance(
    sim: &PricePath,
    hist: &PricePath,
    weights: &DistanceWeights,
) -> Result<DistanceBreakdown> {
    weights.validate()?;
    let hist = FactsProfile::new(hist)?;
    if sim.len() < MIN_PATH_LEN {
        return Err(Error::InsufficientData {
            needed: MIN_PATH_LEN,
            got: sim.len(),
        });
    }
    distance_to_profile(sim, &hist, weights, 1.0)
}
