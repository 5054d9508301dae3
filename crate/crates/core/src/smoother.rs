//! Latent fundamental value via a local-level state-space model.
//!
//! ```text
//! V_t = V_{t-1} + w_t,  w_t ~ N(0, q)
//! P_t = V_t + v_t,      v_t ~ N(0, r)
//! V_0 ~ N(v0, p0)
//! ```
//!
//! [`kalman_smooth`] runs the forward filter and the Rauch-Tung-Striebel
//! backward pass; [`em_fit`] estimates `(q, r)` by expectation-maximisation
//! with the initial state held fixed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PricePath;

/// Noise variances and initial state of the local-level model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseEstimates {
    /// State (transition) noise variance.
    pub q: f64,
    /// Observation noise variance.
    pub r: f64,
    /// Initial state mean.
    pub v0: f64,
    /// Initial state variance.
    pub p0: f64,
}

impl NoiseEstimates {
    pub fn validate(&self) -> Result<()> {
        let ok = self.q >= 0.0
            && self.r >= 0.0
            && self.p0 > 0.0
            && self.v0.is_finite()
            && self.q.is_finite()
            && self.r.is_finite()
            && self.p0.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "noise estimates need q >= 0, r >= 0, p0 > 0 (got q={}, r={}, p0={})",
                self.q, self.r, self.p0
            )))
        }
    }

    /// Data-driven starting point for EM: `v0` is the first price, `p0` the
    /// sample variance of the prices, and `q = r` the variance of the first
    /// differences.
    pub fn initial(prices: &PricePath) -> Self {
        let z = &prices.prices;
        let diffs: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
        let mut qr = sample_variance(&diffs);
        if qr == 0.0 && !prices.is_constant() {
            // a perfectly linear trend has zero difference variance
            qr = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        }
        let scale = z[0].abs().max(1.0);
        let p0 = sample_variance(z).max(1e-12 * scale * scale);
        Self {
            q: qr,
            r: qr,
            v0: z[0],
            p0,
        }
    }
}

fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Smoothed fundamental value estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FundamentalSeries {
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
}

impl FundamentalSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Forward-pass output. `predicted_*` are the one-step-ahead moments before
/// observation `t` is absorbed.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub predicted_means: Vec<f64>,
    pub predicted_variances: Vec<f64>,
    pub log_likelihood: f64,
}

pub fn kalman_filter(prices: &PricePath, noise: &NoiseEstimates) -> Result<FilterOutput> {
    noise.validate()?;
    let z = &prices.prices;
    let n = z.len();
    let mut out = FilterOutput {
        means: Vec::with_capacity(n),
        variances: Vec::with_capacity(n),
        predicted_means: Vec::with_capacity(n),
        predicted_variances: Vec::with_capacity(n),
        log_likelihood: 0.0,
    };
    let (mut a, mut p) = (noise.v0, noise.p0);
    for (t, &obs) in z.iter().enumerate() {
        if t > 0 {
            a = out.means[t - 1];
            p = out.variances[t - 1] + noise.q;
        }
        out.predicted_means.push(a);
        out.predicted_variances.push(p);
        let innovation = obs - a;
        let s = p + noise.r;
        if s <= 0.0 {
            if innovation != 0.0 {
                return Err(Error::DegenerateModel);
            }
            out.means.push(a);
            out.variances.push(0.0);
            continue;
        }
        let gain = p / s;
        out.means.push(a + gain * innovation);
        out.variances.push(p * noise.r / s);
        out.log_likelihood -=
            0.5 * ((2.0 * std::f64::consts::PI * s).ln() + innovation * innovation / s);
    }
    Ok(out)
}

/// Smoother output including the lag-one posterior covariances
/// `Cov(V_t, V_{t-1} | all prices)` at index `t` (index 0 unused).
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub series: FundamentalSeries,
    pub lag_one_covariances: Vec<f64>,
    pub filtered: FilterOutput,
}

pub fn rts_smooth(prices: &PricePath, noise: &NoiseEstimates) -> Result<SmootherOutput> {
    if noise.q == 0.0 && noise.r == 0.0 {
        noise.validate()?;
        if !prices.is_constant() {
            return Err(Error::DegenerateModel);
        }
    }
    let filtered = kalman_filter(prices, noise)?;
    let n = filtered.means.len();
    let mut means = filtered.means.clone();
    let mut variances = filtered.variances.clone();
    let mut lag_one = vec![0.0; n];
    for t in (0..n - 1).rev() {
        let pred_var = filtered.predicted_variances[t + 1];
        let j = if pred_var > 0.0 {
            filtered.variances[t] / pred_var
        } else {
            0.0
        };
        means[t] = filtered.means[t] + j * (means[t + 1] - filtered.predicted_means[t + 1]);
        variances[t] = (filtered.variances[t] + j * j * (variances[t + 1] - pred_var)).max(0.0);
        lag_one[t + 1] = j * variances[t + 1];
    }
    Ok(SmootherOutput {
        series: FundamentalSeries { values: means, variances },
        lag_one_covariances: lag_one,
        filtered,
    })
}

/// Posterior means and variances of the latent value given the whole path.
pub fn kalman_smooth(prices: &PricePath, noise: &NoiseEstimates) -> Result<FundamentalSeries> {
    rts_smooth(prices, noise).map(|s| s.series)
}

/// Result of [`em_fit_with_trace`]: the fitted estimates and the
/// log-likelihood evaluated at the start of each iteration plus at the end.
#[derive(Debug, Clone)]
pub struct EmTrace {
    pub noise: NoiseEstimates,
    pub log_likelihood: Vec<f64>,
}

pub fn em_fit(prices: &PricePath, n_iter: usize, init: NoiseEstimates) -> Result<NoiseEstimates> {
    em_fit_with_trace(prices, n_iter, init).map(|t| t.noise)
}

pub fn em_fit_with_trace(
    prices: &PricePath,
    n_iter: usize,
    init: NoiseEstimates,
) -> Result<EmTrace> {
    let z = &prices.prices;
    if z.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: z.len(),
        });
    }
    if n_iter == 0 {
        return Err(Error::InvalidParams("n_iter must be at least 1".into()));
    }
    init.validate()?;
    let n = z.len() as f64;
    let mut noise = init;
    let mut trace = Vec::with_capacity(n_iter + 1);
    for _ in 0..n_iter {
        let sm = rts_smooth(prices, &noise)?;
        trace.push(sm.filtered.log_likelihood);
        let m = &sm.series.values;
        let v = &sm.series.variances;

        let r = z
            .iter()
            .zip(m)
            .zip(v)
            .map(|((zt, mt), vt)| (zt - mt) * (zt - mt) + vt)
            .sum::<f64>()
            / n;
        let q = (1..z.len())
            .map(|t| {
                let d = m[t] - m[t - 1];
                d * d + v[t] + v[t - 1] - 2.0 * sm.lag_one_covariances[t]
            })
            .sum::<f64>()
            / (n - 1.0);
        noise.q = q.max(0.0);
        noise.r = r.max(0.0);
    }
    if let Ok(f) = kalman_filter(prices, &noise) {
        trace.push(f.log_likelihood);
    }
    Ok(EmTrace {
        noise,
        log_likelihood: trace,
    })
}

/// Data-driven initial estimates refined by `em_iterations` EM steps.
pub fn estimate_noise(prices: &PricePath, em_iterations: usize) -> Result<NoiseEstimates> {
    let init = NoiseEstimates::initial(prices);
    if em_iterations == 0 || prices.len() < 3 {
        Ok(init)
    } else {
        em_fit(prices, em_iterations, init)
    }
}

/// Default extraction used by calibration: [`estimate_noise`], then smoothing.
pub fn extract_fundamental(prices: &PricePath, em_iterations: usize) -> Result<FundamentalSeries> {
    kalman_smooth(prices, &estimate_noise(prices, em_iterations)?)
}
