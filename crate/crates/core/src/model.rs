//! Discrete three-agent price dynamics and GBM reference paths.
//!
//! One step of the market model, with all demands expressed in price units
//! (the linear impact coefficient is absorbed into the parameters):
//!
//! ```text
//! dP_t = kappa * (V_t - P_{t-1}) + beta * tanh(gamma * M_{t-1}) + sigma_n * eps_t
//! P_t  = P_{t-1} + dP_t
//! M_t  = (1 - alpha) * M_{t-1} + alpha * dP_t
//! ```
//!
//! Demand is evaluated on the previous state, so each step is explicit.

use chrono::NaiveDateTime;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Agent-model parameters. `kappa`, `beta` and `sigma_n` are calibrated;
/// `alpha` and `gamma` are held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Fundamentalist demand per unit of mispricing, per step.
    pub kappa: f64,
    /// Momentum demand scale.
    pub beta: f64,
    /// Noise demand scale.
    pub sigma_n: f64,
    /// EWMA decay of the momentum signal.
    pub alpha: f64,
    /// Momentum saturation.
    pub gamma: f64,
}

impl ModelParams {
    pub const DEFAULT_ALPHA: f64 = 0.1;
    pub const DEFAULT_GAMMA: f64 = 10.0;

    pub fn new(kappa: f64, beta: f64, sigma_n: f64) -> Self {
        Self {
            kappa,
            beta,
            sigma_n,
            alpha: Self::DEFAULT_ALPHA,
            gamma: Self::DEFAULT_GAMMA,
        }
    }

    pub fn with_fixed(mut self, alpha: f64, gamma: f64) -> Self {
        self.alpha = alpha;
        self.gamma = gamma;
        self
    }

    /// The calibrated coordinates `[kappa, beta, sigma_n]`.
    pub fn theta(&self) -> [f64; 3] {
        [self.kappa, self.beta, self.sigma_n]
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.kappa, self.beta, self.sigma_n, self.alpha, self.gamma]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite model parameter".into()));
        }
        if self.kappa < 0.0 || self.beta < 0.0 || self.sigma_n < 0.0 {
            return Err(Error::InvalidParams(format!(
                "kappa, beta and sigma_n must be non-negative (got {}, {}, {})",
                self.kappa, self.beta, self.sigma_n
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParams(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Momentum demand for a given trend signal. Bounded by `beta`.
    #[inline]
    pub fn momentum_demand(&self, momentum: f64) -> f64 {
        self.beta * (self.gamma * momentum).tanh()
    }
}

/// A price series, optionally labelled with minute timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePath {
    pub prices: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<NaiveDateTime>>,
}

impl PricePath {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if prices.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: prices.len(),
            });
        }
        if let Some(i) = prices.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite price at index {i}")));
        }
        Ok(Self {
            prices,
            timestamps: None,
        })
    }

    pub fn with_timestamps(prices: Vec<f64>, timestamps: Vec<NaiveDateTime>) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(Error::DimensionMismatch {
                expected: prices.len(),
                got: timestamps.len(),
            });
        }
        let mut path = Self::new(prices)?;
        path.timestamps = Some(timestamps);
        Ok(path)
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.prices[0]
    }

    /// True when any price is zero or negative. The arithmetic model does not
    /// prevent this, so it is reported rather than rejected.
    pub fn has_nonpositive(&self) -> bool {
        self.prices.iter().any(|&p| p <= 0.0)
    }

    pub fn is_constant(&self) -> bool {
        self.prices.iter().all(|&p| p == self.prices[0])
    }
}

/// Market state carried between steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub price: f64,
    pub momentum: f64,
}

impl SimState {
    /// Advances one step given the fundamental value and a standard-normal draw.
    #[inline]
    pub fn step(self, params: &ModelParams, fundamental: f64, eps: f64) -> (Self, f64) {
        let dp = params.kappa * (fundamental - self.price)
            + params.momentum_demand(self.momentum)
            + params.sigma_n * eps;
        let next = SimState {
            price: self.price + dp,
            momentum: (1.0 - params.alpha) * self.momentum + params.alpha * dp,
        };
        (next, dp)
    }
}

/// The first `n` standard-normal draws of the noise stream keyed by `seed`.
/// Step `t` (1-based) of [`simulate`] consumes draw `t - 1`.
pub fn noise_draws(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Runs the model over `fundamental` (one value per step) starting from
/// `(p0, m0)`. Returns `fundamental.len() + 1` prices with `prices[0] == p0`.
pub fn simulate(
    params: &ModelParams,
    fundamental: &[f64],
    p0: f64,
    m0: f64,
    seed: u64,
) -> Result<PricePath> {
    params.validate()?;
    if fundamental.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if !p0.is_finite() || !m0.is_finite() {
        return Err(Error::InvalidInput("initial state must be finite".into()));
    }
    let mut rng = seed::rng(seed);
    let mut prices = Vec::with_capacity(fundamental.len() + 1);
    prices.push(p0);
    let mut state = SimState {
        price: p0,
        momentum: m0,
    };
    for (i, &v) in fundamental.iter().enumerate() {
        let eps: f64 = StandardNormal.sample(&mut rng);
        state = state.step(params, v, eps).0;
        if !state.price.is_finite() || !state.momentum.is_finite() {
            return Err(Error::SimulationDiverged { step: i + 1 });
        }
        prices.push(state.price);
    }
    Ok(PricePath {
        prices,
        timestamps: None,
    })
}

/// Specification of a batch of geometric Brownian motion paths. `mu` and
/// `sigma` are per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmSpec {
    pub s0: f64,
    pub mu: f64,
    pub sigma: f64,
    pub n_steps: usize,
    pub n_paths: usize,
}

/// `S_t = S_{t-1} * exp((mu - sigma^2 / 2) + sigma * eps_t)`. Path `i` draws
/// from its own stream derived from `(seed, i)`.
pub fn gbm_paths(spec: &GbmSpec, seed: u64) -> Result<Vec<PricePath>> {
    let GbmSpec {
        s0,
        mu,
        sigma,
        n_steps,
        n_paths,
    } = *spec;
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::InvalidParams(format!("s0 must be positive, got {s0}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) || !mu.is_finite() {
        return Err(Error::InvalidParams(
            "sigma must be non-negative and mu finite".into(),
        ));
    }
    if n_steps == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let drift = mu - 0.5 * sigma * sigma;
    (0..n_paths)
        .map(|i| {
            let draws = noise_draws(gbm_path_seed(seed, i), n_steps);
            let mut prices = Vec::with_capacity(n_steps + 1);
            let mut s = s0;
            prices.push(s);
            for eps in draws {
                s *= (drift + sigma * eps).exp();
                prices.push(s);
            }
            PricePath::new(prices)
        })
        .collect()
}

/// Seed of the `index`-th GBM path of a batch.
pub fn gbm_path_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, &[seed::TAG_PATH, index as u64])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_demand_keeps_price_flat() {
        let params = ModelParams::new(0.0, 0.0, 0.0);
        let v = vec![123.0, 80.0, 95.5, 110.0];
        let path = simulate(&params, &v, 100.0, 0.0, 7).unwrap();
        assert_eq!(path.prices, vec![100.0; 5]);
    }

    #[test]
    fn hand_evaluated_recurrence() {
        let params = ModelParams::new(0.1, 0.5, 0.0).with_fixed(0.1, 10.0);
        let path = simulate(&params, &[110.0, 110.0], 100.0, 0.0, 0).unwrap();
        assert_abs_diff_eq!(path.prices[1], 101.0, epsilon = 1e-12);
        assert_abs_diff_eq!(path.prices[2], 102.280797, epsilon = 1e-6);

        let mut state = SimState {
            price: 100.0,
            momentum: 0.0,
        };
        state = state.step(&params, 110.0, 0.0).0;
        assert_abs_diff_eq!(state.momentum, 0.1, epsilon = 1e-12);
        state = state.step(&params, 110.0, 0.0).0;
        assert_abs_diff_eq!(state.momentum, 0.2180797, epsilon = 1e-7);
    }

    #[test]
    fn pure_noise_is_cumulative_sum_of_draws() {
        let params = ModelParams::new(0.0, 0.0, 1.0);
        let path = simulate(&params, &vec![0.0; 50], 100.0, 0.0, 99).unwrap();
        let draws = noise_draws(99, 50);
        let mut acc = 0.0;
        for (t, d) in draws.iter().enumerate() {
            acc += d;
            assert_abs_diff_eq!(path.prices[t + 1] - 100.0, acc, epsilon = 1e-9);
        }
    }

    #[test]
    fn divergence_reports_step() {
        let params = ModelParams::new(0.0, 0.0, 0.0);
        let err = simulate(&params, &[1.0, f64::NAN], 1.0, 0.0, 0);
        // zero kappa multiplies NaN
        assert!(matches!(err, Err(Error::SimulationDiverged { step: 2 })));

        let explosive = ModelParams::new(1e300, 0.0, 0.0);
        let err = simulate(&explosive, &[1e300; 4], -1e300, 0.0, 0);
        assert!(matches!(err, Err(Error::SimulationDiverged { step: 1 })));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(-0.1, 0.0, 0.0).validate().is_err());
        assert!(ModelParams::new(0.1, 0.0, 0.0)
            .with_fixed(1.0, 10.0)
            .validate()
            .is_err());
        assert!(ModelParams::new(0.1, 0.0, 0.0)
            .with_fixed(0.1, 0.0)
            .validate()
            .is_err());
        assert!(simulate(&ModelParams::new(0.1, 0.1, 0.1), &[], 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn nonpositive_flag() {
        let params = ModelParams::new(1.0, 0.0, 0.0);
        let path = simulate(&params, &[-5.0, -5.0], 1.0, 0.0, 0).unwrap();
        assert!(path.has_nonpositive());
        assert!(!PricePath::new(vec![1.0, 2.0]).unwrap().has_nonpositive());
    }

    #[test]
    fn gbm_deterministic_cases() {
        let flat = gbm_paths(
            &GbmSpec {
                s0: 50.0,
                mu: 0.0,
                sigma: 0.0,
                n_steps: 10,
                n_paths: 3,
            },
            1,
        )
        .unwrap();
        assert_eq!(flat.len(), 3);
        assert!(flat.iter().all(|p| p.prices == vec![50.0; 11]));

        let drift = gbm_paths(
            &GbmSpec {
                s0: 100.0,
                mu: 0.01,
                sigma: 0.0,
                n_steps: 2,
                n_paths: 1,
            },
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(drift[0].prices[1], 101.00502, epsilon = 1e-5);
        assert_abs_diff_eq!(drift[0].prices[2], 102.02013, epsilon = 1e-5);
    }

    #[test]
    fn gbm_log_returns_match_draws() {
        let spec = GbmSpec {
            s0: 20.0,
            mu: 0.0002,
            sigma: 0.001,
            n_steps: 100,
            n_paths: 2,
        };
        let paths = gbm_paths(&spec, 5).unwrap();
        for (i, path) in paths.iter().enumerate() {
            let draws = noise_draws(gbm_path_seed(5, i), spec.n_steps);
            for (w, eps) in path.prices.windows(2).zip(&draws) {
                let lr = (w[1] / w[0]).ln();
                let expected = spec.mu - 0.5 * spec.sigma * spec.sigma + spec.sigma * eps;
                assert_abs_diff_eq!(lr, expected, epsilon = 1e-12);
            }
        }
        assert_ne!(paths[0].prices, paths[1].prices);
    }

    #[test]
    fn gbm_rejects_bad_spec() {
        let base = GbmSpec {
            s0: 1.0,
            mu: 0.0,
            sigma: 0.1,
            n_steps: 1,
            n_paths: 1,
        };
        assert!(gbm_paths(&GbmSpec { s0: 0.0, ..base }, 0).is_err());
        assert!(gbm_paths(&GbmSpec { sigma: -1.0, ..base }, 0).is_err());
        assert!(gbm_paths(&GbmSpec { n_steps: 0, ..base }, 0).is_err());
    }

    proptest! {
        #[test]
        fn deterministic_for_fixed_seed(
            kappa in 0.0..1.0f64, beta in 0.0..1.0f64, sigma in 0.0..1.0f64, seed in any::<u64>()
        ) {
            let params = ModelParams::new(kappa, beta, sigma);
            let v: Vec<f64> = (0..40).map(|i| 100.0 + (i as f64 * 0.3).sin()).collect();
            let a = simulate(&params, &v, 100.0, 0.0, seed).unwrap();
            let b = simulate(&params, &v, 100.0, 0.0, seed).unwrap();
            prop_assert_eq!(a.prices.iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                            b.prices.iter().map(|p| p.to_bits()).collect::<Vec<_>>());
        }

        #[test]
        fn contraction_towards_constant_fundamental(
            kappa in 0.001..1.999f64, p0 in 50.0..150.0f64, v in 50.0..150.0f64
        ) {
            let params = ModelParams::new(kappa, 0.0, 0.0);
            let path = simulate(&params, &[v; 30], p0, 0.0, 0).unwrap();
            for t in 1..path.len() {
                let prev = (path.prices[t - 1] - v).abs();
                let cur = (path.prices[t] - v).abs();
                let expected = (1.0 - kappa).abs() * prev;
                prop_assert!((cur - expected).abs() <= 1e-9 * (1.0 + prev));
                prop_assert!(cur <= prev + 1e-12);
            }
        }

        #[test]
        fn momentum_bounded_by_largest_move(
            kappa in 0.0..1.0f64, beta in 0.0..2.0f64, sigma in 0.0..2.0f64,
            alpha in 0.01..0.99f64, seed in any::<u64>()
        ) {
            let params = ModelParams::new(kappa, beta, sigma).with_fixed(alpha, 10.0);
            let v: Vec<f64> = (0..60).map(|i| 100.0 + 0.5 * (i as f64 * 0.2).cos()).collect();
            let draws = noise_draws(seed, v.len());
            let mut state = SimState { price: 100.0, momentum: 0.0 };
            let mut max_move: f64 = 0.0;
            for (vt, eps) in v.iter().zip(draws) {
                let (next, dp) = state.step(&params, *vt, eps);
                max_move = max_move.max(dp.abs());
                prop_assert!(next.momentum.abs() <= max_move + 1e-12);
                state = next;
            }
        }

        #[test]
        fn momentum_demand_saturates(beta in 0.0..10.0f64, m in -1e6..1e6f64, gamma in 0.01..100.0f64) {
            let params = ModelParams::new(0.0, beta, 0.0).with_fixed(0.1, gamma);
            prop_assert!(params.momentum_demand(m).abs() <= beta);
        }

        #[test]
        fn gbm_strictly_positive(mu in -0.01..0.01f64, sigma in 0.0..0.2f64, seed in any::<u64>()) {
            let spec = GbmSpec { s0: 10.0, mu, sigma, n_steps: 200, n_paths: 2 };
            for path in gbm_paths(&spec, seed).unwrap() {
                prop_assert!(path.prices.iter().all(|&p| p > 0.0));
            }
        }
    }
}
