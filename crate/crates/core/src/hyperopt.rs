//! Gaussian-process Bayesian optimisation over GBT hyperparameters.
//!
//! The objective (typically cross-validated surrogate RMSE) is modelled as a
//! GP on the unit cube with a squared-exponential kernel. Kernel
//! hyperparameters are picked by maximising the marginal likelihood over a
//! small log-spaced grid; the next point maximises expected improvement over
//! a dense Sobol candidate set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::gbt::GbtHyperParams;
use crate::seed;
use crate::sobol::Sobol;

/// Score assigned to objective evaluations that return a non-finite value.
pub const NON_FINITE_SCORE: f64 = 1.0;

const CANDIDATES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HyperParam {
    NTrees,
    MaxDepth,
    LearningRate,
    L2Leaf,
    MinChildWeight,
    Subsample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperDim {
    pub param: HyperParam,
    pub low: f64,
    pub high: f64,
    pub integer: bool,
}

impl HyperDim {
    pub fn continuous(param: HyperParam, low: f64, high: f64) -> Self {
        Self { param, low, high, integer: false }
    }

    pub fn integer(param: HyperParam, low: f64, high: f64) -> Self {
        Self { param, low, high, integer: true }
    }

    fn decode(&self, u: f64) -> f64 {
        let v = self.low + u * (self.high - self.low);
        if self.integer {
            v.round().clamp(self.low, self.high)
        } else {
            v
        }
    }
}

/// Searched dimensions; parameters not listed keep their value in `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSpace {
    pub base: GbtHyperParams,
    pub dims: Vec<HyperDim>,
}

impl Default for HyperSpace {
    fn default() -> Self {
        use HyperParam::*;
        Self {
            base: GbtHyperParams::default(),
            dims: vec![
                HyperDim::integer(NTrees, 50.0, 400.0),
                HyperDim::integer(MaxDepth, 2.0, 7.0),
                HyperDim::continuous(LearningRate, 0.02, 0.3),
                HyperDim::continuous(L2Leaf, 0.0, 5.0),
                HyperDim::continuous(MinChildWeight, 1.0, 8.0),
                HyperDim::continuous(Subsample, 0.5, 1.0),
            ],
        }
    }
}

impl HyperSpace {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > crate::sobol::MAX_DIM {
            return Err(Error::InvalidParams(format!(
                "hyperparameter space needs 1..={} dimensions",
                crate::sobol::MAX_DIM
            )));
        }
        for d in &self.dims {
            if !(d.low < d.high) {
                return Err(Error::InvalidParams(format!("empty range for {:?}", d.param)));
            }
        }
        Ok(())
    }

    pub fn decode(&self, u: &[f64]) -> GbtHyperParams {
        let mut h = self.base;
        for (d, &ui) in self.dims.iter().zip(u) {
            let v = d.decode(ui);
            match d.param {
                HyperParam::NTrees => h.n_trees = v as usize,
                HyperParam::MaxDepth => h.max_depth = v as usize,
                HyperParam::LearningRate => h.learning_rate = v,
                HyperParam::L2Leaf => h.l2_leaf = v,
                HyperParam::MinChildWeight => h.min_child_weight = v,
                HyperParam::Subsample => h.subsample = v,
            }
        }
        h
    }
}

/// Observations and kernel hyperparameters of a GP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpState {
    pub inputs: Vec<Vec<f64>>,
    pub outputs: Vec<f64>,
    pub length_scale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    #[serde(default)]
    pub prior_mean: f64,
}

impl GpState {
    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.signal_var * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }
}

/// A GP with its factorised kernel matrix, for repeated queries.
#[derive(Debug, Clone)]
pub struct GpFit {
    state: GpState,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpFit {
    pub fn new(state: GpState) -> Result<Self> {
        let n = state.inputs.len();
        if n == 0 || state.outputs.len() != n {
            return Err(Error::InsufficientData { needed: 1, got: n });
        }
        if !(state.length_scale > 0.0 && state.signal_var > 0.0 && state.noise_var >= 0.0) {
            return Err(Error::InvalidParams("GP kernel parameters must be positive".into()));
        }
        let k = DMatrix::from_fn(n, n, |i, j| state.kernel(&state.inputs[i], &state.inputs[j]));
        let resid = DVector::from_iterator(n, state.outputs.iter().map(|y| y - state.prior_mean));
        for jitter in [0.0, 1e-12, 1e-10, 1e-8, 1e-6] {
            let mut kk = k.clone();
            for i in 0..n {
                kk[(i, i)] += state.noise_var + jitter * state.signal_var;
            }
            if let Some(chol) = kk.cholesky() {
                let alpha = chol.solve(&resid);
                return Ok(Self { state, chol, alpha });
            }
        }
        Err(Error::Numerical("kernel matrix not positive definite after jitter".into()))
    }

    pub fn state(&self) -> &GpState {
        &self.state
    }

    pub fn posterior(&self, query: &[f64]) -> (f64, f64) {
        let s = &self.state;
        let kstar = DVector::from_iterator(
            s.inputs.len(),
            s.inputs.iter().map(|x| s.kernel(x, query)),
        );
        let mean = s.prior_mean + kstar.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&kstar).unwrap_or(kstar);
        let var = (s.signal_var - v.dot(&v)).max(0.0);
        (mean, var)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.state.outputs.len() as f64;
        let resid = DVector::from_iterator(
            self.state.outputs.len(),
            self.state.outputs.iter().map(|y| y - self.state.prior_mean),
        );
        let log_det: f64 = self.chol.l().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * resid.dot(&self.alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Posterior mean and variance at `query`.
pub fn gp_posterior(state: &GpState, query: &[f64]) -> Result<(f64, f64)> {
    Ok(GpFit::new(state.clone())?.posterior(query))
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let gap = best - mean;
    if sigma <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * std_normal_cdf(z) + sigma * std_normal_pdf(z)).max(0.0)
}

/// Fits kernel hyperparameters to standardised observations by grid search
/// on the log marginal likelihood.
pub fn fit_gp(inputs: Vec<Vec<f64>>, outputs: Vec<f64>) -> Result<GpFit> {
    const LENGTHS: [f64; 8] = [0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 1.5];
    const SIGNALS: [f64; 3] = [0.5, 1.0, 2.0];
    const NOISES: [f64; 3] = [1e-6, 1e-3, 1e-1];
    let mut best: Option<(f64, GpFit)> = None;
    for &length_scale in &LENGTHS {
        for &signal_var in &SIGNALS {
            for &noise_var in &NOISES {
                let state = GpState {
                    inputs: inputs.clone(),
                    outputs: outputs.clone(),
                    length_scale,
                    signal_var,
                    noise_var,
                    prior_mean: 0.0,
                };
                let Ok(fit) = GpFit::new(state) else { continue };
                let lml = fit.log_marginal_likelihood();
                if lml.is_finite() && best.as_ref().is_none_or(|(b, _)| lml > *b) {
                    best = Some((lml, fit));
                }
            }
        }
    }
    best.map(|(_, f)| f)
        .ok_or_else(|| Error::Numerical("no kernel setting gave a usable GP".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrial {
    pub hyper: GbtHyperParams,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: GbtHyperParams,
    pub best_score: f64,
    pub trials: Vec<TuneTrial>,
}

/// Minimises `objective` over `space` with at most `budget` evaluations.
///
/// The first `max(2, ceil(budget / 4))` points are Sobol points; the rest are
/// chosen by expected improvement. All Sobol sets are shifted by a random
/// offset drawn from `seed` (a Cranley-Patterson rotation).
pub fn tune<F>(mut objective: F, space: &HyperSpace, budget: usize, seed: u64) -> Result<TuneResult>
where
    F: FnMut(&GbtHyperParams) -> f64,
{
    space.validate()?;
    if budget < 2 {
        return Err(Error::InvalidParams("tuning budget must be at least 2".into()));
    }
    let dim = space.dims.len();
    let mut rng = seed::rng(seed::derive(seed, &[seed::TAG_TUNE]));
    let shift: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
    let rotate = |p: Vec<f64>| -> Vec<f64> {
        p.iter().zip(&shift).map(|(u, s)| (u + s).fract()).collect()
    };

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut trials: Vec<TuneTrial> = Vec::new();
    let mut evaluate = |u: Vec<f64>, xs: &mut Vec<Vec<f64>>, trials: &mut Vec<TuneTrial>| {
        let hyper = space.decode(&u);
        let raw = objective(&hyper);
        let score = if raw.is_finite() { raw } else { NON_FINITE_SCORE };
        xs.push(u);
        trials.push(TuneTrial { hyper, score });
    };

    let n_init = budget.div_ceil(4).max(2).min(budget);
    for p in Sobol::new(dim)?.take(n_init) {
        evaluate(rotate(p), &mut xs, &mut trials);
    }

    let candidates: Vec<Vec<f64>> = Sobol::starting_at(dim, 1 << 16)?
        .take(CANDIDATES)
        .map(rotate)
        .collect();
    while trials.len() < budget {
        let ys: Vec<f64> = trials.iter().map(|t| t.score).collect();
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let sd = (ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / ys.len() as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        let standardised: Vec<f64> = ys.iter().map(|y| (y - mean) / sd).collect();
        let best_std = standardised.iter().copied().fold(f64::INFINITY, f64::min);
        let gp = fit_gp(xs.clone(), standardised)?;

        let mut scored: Vec<(f64, usize)> = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (m, v) = gp.posterior(c);
                (expected_improvement(m, v, best_std), i)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let next = scored.iter().find(|(_, i)| {
            let h = space.decode(&candidates[*i]);
            trials.iter().all(|t| t.hyper != h)
        });
        match next {
            Some(&(_, i)) => evaluate(candidates[i].clone(), &mut xs, &mut trials),
            None => break,
        }
    }

    let best = trials
        .iter()
        .min_by(|a, b| a.score.total_cmp(&b.score))
        .expect("at least two trials")
        .clone();
    Ok(TuneResult {
        best: best.hyper,
        best_score: best.score,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn one_obs(noise: f64) -> GpState {
        GpState {
            inputs: vec![vec![0.0]],
            outputs: vec![1.0],
            length_scale: 1.0,
            signal_var: 1.0,
            noise_var: noise,
            prior_mean: 0.0,
        }
    }

    #[test]
    fn single_observation_closed_form() {
        let (m, v) = gp_posterior(&one_obs(0.0), &[0.5]).unwrap();
        assert_abs_diff_eq!(m, (-0.125f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(m, 0.8825, epsilon = 1e-4);
        assert_abs_diff_eq!(v, 1.0 - (-0.25f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn interpolates_observations() {
        let state = GpState {
            inputs: vec![vec![0.1, 0.2], vec![0.7, 0.4], vec![0.3, 0.9]],
            outputs: vec![0.5, -1.0, 2.0],
            length_scale: 0.3,
            signal_var: 1.5,
            noise_var: 0.0,
            prior_mean: 0.0,
        };
        let fit = GpFit::new(state.clone()).unwrap();
        for (x, y) in state.inputs.iter().zip(&state.outputs) {
            let (m, v) = fit.posterior(x);
            assert_abs_diff_eq!(m, *y, epsilon = 1e-8);
            assert!(v <= 1e-8);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let mut state = one_obs(0.0);
        state.prior_mean = 0.25;
        state.signal_var = 2.0;
        let (m, v) = gp_posterior(&state, &[100.0]).unwrap();
        assert_abs_diff_eq!(m, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn needs_observations() {
        let mut state = one_obs(0.0);
        state.inputs.clear();
        state.outputs.clear();
        assert!(gp_posterior(&state, &[0.0]).is_err());
    }

    #[test]
    fn duplicate_inputs_use_jitter() {
        let state = GpState {
            inputs: vec![vec![0.5], vec![0.5]],
            outputs: vec![1.0, 1.0],
            length_scale: 0.2,
            signal_var: 1.0,
            noise_var: 0.0,
            prior_mean: 0.0,
        };
        let (m, v) = gp_posterior(&state, &[0.5]).unwrap();
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-4);
        assert!(v >= 0.0);
    }

    #[test]
    fn ei_examples() {
        assert_eq!(expected_improvement(0.3, 0.0, 0.3), 0.0);
        assert_eq!(expected_improvement(-0.7, 0.0, 0.3), 1.0);
        assert_abs_diff_eq!(expected_improvement(0.3, 1.0, 0.3), 0.398942280401, epsilon = 1e-9);
        assert_eq!(expected_improvement(2.0, 0.0, 0.3), 0.0);
    }

    fn l2_space() -> HyperSpace {
        HyperSpace {
            base: GbtHyperParams::default(),
            dims: vec![HyperDim::continuous(HyperParam::L2Leaf, 0.0, 10.0)],
        }
    }

    #[test]
    fn budget_two_picks_better_initial_point() {
        let space = l2_space();
        let res = tune(|h| (h.l2_leaf - 6.0).abs(), &space, 2, 5).unwrap();
        assert_eq!(res.trials.len(), 2);
        let better = res
            .trials
            .iter()
            .min_by(|a, b| a.score.total_cmp(&b.score))
            .unwrap();
        assert_eq!(res.best, better.hyper);
    }

    #[test]
    fn finds_quadratic_minimum() {
        let space = l2_space();
        for seed in 0..5 {
            let res = tune(|h| (h.l2_leaf - 3.7).powi(2), &space, 20, seed).unwrap();
            assert!((res.best.l2_leaf - 3.7).abs() < 0.37, "seed {seed}: {}", res.best.l2_leaf);
            assert_eq!(res.trials.len(), 20);
        }
    }

    #[test]
    fn non_finite_objective_is_scored_at_ceiling() {
        let space = l2_space();
        let res = tune(
            |h| if h.l2_leaf > 5.0 { f64::NAN } else { 2.0 + h.l2_leaf },
            &space,
            8,
            1,
        )
        .unwrap();
        assert!(res.trials.iter().all(|t| t.score.is_finite()));
        assert!(res.trials.iter().any(|t| t.score == NON_FINITE_SCORE));
        assert_eq!(res.best_score, NON_FINITE_SCORE);
    }

    #[test]
    fn integer_dims_decode_to_integers() {
        let space = HyperSpace::default();
        let h = space.decode(&[0.33, 0.91, 0.5, 0.5, 0.5, 0.5]);
        assert!((50..=400).contains(&h.n_trees));
        assert!((2..=7).contains(&h.max_depth));
        assert!(h.validate().is_ok());
        assert_eq!(space.decode(&[0.0; 6]).n_trees, 50);
    }

    #[test]
    fn deterministic_and_returns_evaluated_point() {
        let space = HyperSpace::default();
        let obj = |h: &GbtHyperParams| {
            (h.learning_rate - 0.1).powi(2) + 0.001 * h.max_depth as f64 + (h.subsample - 0.8).abs()
        };
        let a = tune(obj, &space, 12, 42).unwrap();
        let b = tune(obj, &space, 12, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.trials.iter().any(|t| t.hyper == a.best));
        assert!(a.trials.iter().all(|t| a.best_score <= t.score));
        assert!(tune(obj, &space, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn variance_and_ei_non_negative(
            pts in proptest::collection::vec((0.0..1.0f64, -2.0..2.0f64), 1..8),
            q in 0.0..1.0f64, ls in 0.05..2.0f64, noise in 0.0..0.1f64
        ) {
            let state = GpState {
                inputs: pts.iter().map(|p| vec![p.0]).collect(),
                outputs: pts.iter().map(|p| p.1).collect(),
                length_scale: ls,
                signal_var: 1.0,
                noise_var: noise,
                prior_mean: 0.0,
            };
            if let Ok(fit) = GpFit::new(state) {
                let (m, v) = fit.posterior(&[q]);
                prop_assert!(v >= 0.0);
                prop_assert!(expected_improvement(m, v, 0.0) >= 0.0);
            }
        }
    }
}
