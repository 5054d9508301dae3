//! Synthetic trading days for tests, demos and benchmarks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::{simulate, ModelParams, PricePath};
use crate::seed;

/// Gaussian random walk of `n` values starting at `start`.
pub fn random_walk(start: f64, step_sd: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let mut v = start;
    (0..n)
        .map(|i| {
            if i > 0 {
                let e: f64 = StandardNormal.sample(&mut rng);
                v += step_sd * e;
            }
            v
        })
        .collect()
}

/// A day of `n_prices` prices generated by the agent model driven by a
/// random-walk fundamental starting at 100. Returns the path and the
/// fundamental that produced it (`fundamental[t]` drives step `t`, and
/// `fundamental[0]` is unused by the simulation).
pub fn model_day(
    params: &ModelParams,
    n_prices: usize,
    fundamental_sd: f64,
    seed: u64,
) -> Result<(PricePath, Vec<f64>)> {
    let fundamental = random_walk(100.0, fundamental_sd, n_prices, seed::derive(seed, &[1]));
    let path = simulate(params, &fundamental[1..], fundamental[0], 0.0, seed::derive(seed, &[2]))?;
    Ok((path, fundamental))
}

/// Arithmetic random walk whose step size follows a two-state Markov
/// chain (calm / turbulent). Persistent regimes produce clustered
/// volatility: squared returns are positively autocorrelated.
#[derive(Debug, Clone, Copy)]
pub struct RegimeSwitching {
    pub calm_sd: f64,
    pub turbulent_sd: f64,
    /// Probability of staying in the current regime at each step.
    pub persistence: f64,
}

impl Default for RegimeSwitching {
    fn default() -> Self {
        Self {
            calm_sd: 0.01,
            turbulent_sd: 0.05,
            persistence: 0.97,
        }
    }
}

impl RegimeSwitching {
    pub fn day(&self, start: f64, n_prices: usize, seed: u64) -> Result<PricePath> {
        let mut rng = seed::rng(seed);
        let mut turbulent = false;
        let mut p = start;
        let mut prices = Vec::with_capacity(n_prices);
        prices.push(p);
        for _ in 1..n_prices {
            if rng.random::<f64>() > self.persistence {
                turbulent = !turbulent;
            }
            let sd = if turbulent { self.turbulent_sd } else { self.calm_sd };
            let e: f64 = StandardNormal.sample(&mut rng);
            p += sd * e;
            prices.push(p);
        }
        PricePath::new(prices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facts::{acf_lags, returns};

    #[test]
    fn regime_switching_clusters_volatility() {
        let day = RegimeSwitching::default().day(100.0, 5000, 3).unwrap();
        let sq = returns(&day).squared();
        let acfs = acf_lags(&sq, &[1, 2, 3, 4, 5]).unwrap();
        assert!(acfs.iter().all(|a| *a > 0.05), "{acfs:?}");
    }

    #[test]
    fn model_day_shapes() {
        let (path, v) = model_day(&ModelParams::new(0.05, 0.1, 0.02), 390, 0.02, 1).unwrap();
        assert_eq!(path.len(), 390);
        assert_eq!(v.len(), 390);
        assert_eq!(path.first(), 100.0);
    }
}
