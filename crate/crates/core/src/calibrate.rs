//! Surrogate-driven calibration of `(kappa, beta, sigma_n)` for one day.
//!
//! 1. Extract the fundamental series from the historical prices.
//! 2. Draw a Sobol pool over the parameter box and evaluate a random initial
//!    subset with the real simulator.
//! 3. Repeat: fit the GBT surrogate on clipped labels, predict the unlabelled
//!    pool, evaluate the `exploit_size` lowest predictions plus
//!    `explore_size` uniformly drawn points.
//! 4. Return the best point actually evaluated.

use log::{info, warn};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facts::{self, DistanceBreakdown, DistanceWeights, FactsProfile};
use crate::gbt::{self, GbtHyperParams, GbtModel};
use crate::hyperopt::{self, HyperSpace, TuneResult};
use crate::model::{simulate, ModelParams, PricePath};
use crate::par;
use crate::seed;
use crate::smoother::{self, FundamentalSeries};
use crate::sobol::{self, ParameterBounds, ParameterPool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub pool_size: usize,
    pub init_size: usize,
    pub batch_size: usize,
    pub exploit_size: usize,
    pub explore_size: usize,
    pub max_iterations: usize,
    pub label_ceiling: f64,
    pub replications: usize,
    pub weights: DistanceWeights,
    /// Parameter box; scaled to the day's return volatility when absent.
    pub bounds: Option<ParameterBounds>,
    pub alpha: f64,
    pub gamma: f64,
    pub seed: u64,
    /// EM iterations for the fundamental-value smoother.
    pub em_iterations: usize,
    /// Tune surrogate hyperparameters once, before the first iteration.
    pub tune: bool,
    pub tune_budget: usize,
    pub cv_folds: usize,
    /// Surrogate hyperparameters used when `tune` is off.
    pub hyper: GbtHyperParams,
    pub hyper_space: HyperSpace,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            pool_size: 16384,
            init_size: 2000,
            batch_size: 300,
            exploit_size: 200,
            explore_size: 100,
            max_iterations: 5,
            label_ceiling: 1.0,
            replications: 1,
            weights: DistanceWeights::default(),
            bounds: None,
            alpha: ModelParams::DEFAULT_ALPHA,
            gamma: ModelParams::DEFAULT_GAMMA,
            seed: 0,
            em_iterations: 10,
            tune: true,
            tune_budget: 20,
            cv_folds: 5,
            hyper: GbtHyperParams::default(),
            hyper_space: HyperSpace::default(),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if self.exploit_size + self.explore_size != self.batch_size {
            return bad(format!(
                "exploit_size ({}) + explore_size ({}) must equal batch_size ({})",
                self.exploit_size, self.explore_size, self.batch_size
            ));
        }
        if self.init_size < 2 {
            return bad("init_size must be at least 2".into());
        }
        if self.init_size + self.max_iterations * self.batch_size > self.pool_size {
            return bad(format!(
                "init_size + max_iterations * batch_size = {} exceeds pool_size {}",
                self.init_size + self.max_iterations * self.batch_size,
                self.pool_size
            ));
        }
        if !(self.label_ceiling > 0.0) {
            return bad("label_ceiling must be positive".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.tune {
            if self.tune_budget < 2 {
                return bad("tune_budget must be at least 2".into());
            }
            self.hyper_space.validate()?;
        }
        self.weights.validate()?;
        self.hyper.validate()?;
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        ModelParams::new(0.0, 0.0, 0.0)
            .with_fixed(self.alpha, self.gamma)
            .validate()
    }

    pub fn params(&self, theta: [f64; 3]) -> ModelParams {
        ModelParams::new(theta[0], theta[1], theta[2]).with_fixed(self.alpha, self.gamma)
    }
}

/// Seed of replication `replication` of pool point `point_index`.
pub fn point_seed(master: u64, point_index: u64, replication: u64) -> u64 {
    seed::derive(master, &[seed::TAG_POINT, point_index, replication])
}

/// A historical day prepared for repeated simulation-based evaluation.
#[derive(Debug, Clone)]
pub struct Evaluator<'a> {
    hist: &'a PricePath,
    profile: FactsProfile,
    fundamental: &'a FundamentalSeries,
    cfg: &'a CalibrationConfig,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        hist: &'a PricePath,
        fundamental: &'a FundamentalSeries,
        cfg: &'a CalibrationConfig,
    ) -> Result<Self> {
        if fundamental.len() != hist.len() {
            return Err(Error::DimensionMismatch {
                expected: hist.len(),
                got: fundamental.len(),
            });
        }
        Ok(Self {
            hist,
            profile: FactsProfile::new(hist)?,
            fundamental,
            cfg,
        })
    }

    /// The simulated day for one replication of a point: starts at the first
    /// historical price with zero momentum and is driven by the fundamental
    /// values of minutes `1..T`.
    pub fn simulate(&self, theta: &ModelParams, seed: u64) -> Result<PricePath> {
        simulate(
            theta,
            &self.fundamental.values[1..],
            self.hist.first(),
            0.0,
            seed,
        )
    }

    pub fn evaluate(&self, theta: &ModelParams, point_index: u64) -> Result<DistanceBreakdown> {
        theta.validate()?;
        let ceiling = self.cfg.label_ceiling;
        let reps = self.cfg.replications;
        let mut acc = DistanceBreakdown {
            ks: 0.0,
            vol_gap: 0.0,
            acf1_gap: 0.0,
            acf2_gap: 0.0,
            total: 0.0,
            degenerate: false,
        };
        for rep in 0..reps {
            let seed = point_seed(self.cfg.seed, point_index, rep as u64);
            let d = match self.simulate(theta, seed) {
                Ok(path) => {
                    facts::distance_to_profile(&path, &self.profile, &self.cfg.weights, ceiling)?
                }
                Err(Error::SimulationDiverged { .. }) => DistanceBreakdown::degenerate(ceiling),
                Err(e) => return Err(e),
            };
            acc.ks += d.ks;
            acc.vol_gap += d.vol_gap;
            acc.acf1_gap += d.acf1_gap;
            acc.acf2_gap += d.acf2_gap;
            acc.total += d.total;
            acc.degenerate |= d.degenerate;
        }
        let k = reps as f64;
        acc.ks /= k;
        acc.vol_gap /= k;
        acc.acf1_gap /= k;
        acc.acf2_gap /= k;
        acc.total /= k;
        Ok(acc)
    }
}

/// Stylised-facts distance of `theta` against `hist`, averaged over the
/// configured replications.
pub fn evaluate_point(
    theta: &ModelParams,
    hist: &PricePath,
    fundamental: &FundamentalSeries,
    cfg: &CalibrationConfig,
    point_index: u64,
) -> Result<DistanceBreakdown> {
    Evaluator::new(hist, fundamental, cfg)?.evaluate(theta, point_index)
}

/// Picks the `n_exploit` lowest predictions (ties to the lower index) and
/// `n_explore` further indices uniformly without replacement from the rest.
/// Returned indices refer to positions in `predictions`, exploit first.
pub fn select_batch(predictions: &[f64], n_exploit: usize, n_explore: usize, seed: u64) -> Vec<usize> {
    let n = predictions.len();
    let (mut n_exploit, mut n_explore) = (n_exploit, n_explore);
    if n_exploit + n_explore > n {
        let want = n_exploit + n_explore;
        warn!("only {n} unlabelled points for a batch of {want}; shrinking");
        n_exploit = n_exploit * n / want;
        n_explore = n - n_exploit;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| predictions[a].total_cmp(&predictions[b]).then(a.cmp(&b)));
    let mut batch: Vec<usize> = order[..n_exploit].to_vec();
    let rest = &order[n_exploit..];
    let mut rng = seed::rng(seed);
    batch.extend(index::sample(&mut rng, rest.len(), n_explore).iter().map(|i| rest[i]));
    batch
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedPoint {
    /// Index in the Sobol pool.
    pub index: usize,
    pub theta: [f64; 3],
    pub distance: DistanceBreakdown,
    /// 0 for the initial set, otherwise the iteration that selected it.
    pub iteration: usize,
}

/// Summary of one train / predict / supplement round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_train: usize,
    pub train_rmse: f64,
    pub predicted_optimum_index: usize,
    pub predicted_optimum: [f64; 3],
    pub predicted_distance: f64,
    pub actual_distance: f64,
    /// `|predicted - actual| / actual` (absolute error when actual is 0).
    pub relative_error: f64,
    pub best_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub config: CalibrationConfig,
    pub bounds: ParameterBounds,
    pub fundamental: FundamentalSeries,
    pub hyper: GbtHyperParams,
    pub tuning: Option<TuneResult>,
    pub initial_best_total: f64,
    pub iterations: Vec<IterationRecord>,
    pub evaluated: Vec<EvaluatedPoint>,
    pub best_index: usize,
    pub best_params: ModelParams,
    pub best_distance: DistanceBreakdown,
    /// Surrogate refit on every evaluated point.
    pub surrogate: GbtModel,
}

impl CalibrationResult {
    pub fn surrogate_prediction(&self, theta: [f64; 3]) -> f64 {
        self.surrogate.predict_row(&theta)
    }
}

fn training_set(pool: &ParameterPool, ceiling: f64) -> (Vec<[f64; 3]>, Vec<f64>) {
    let idx = pool.labeled();
    let x = idx.iter().map(|&i| pool.points[i]).collect();
    let y: Vec<f64> = idx
        .iter()
        .map(|&i| pool.labels[i].as_ref().map_or(ceiling, |d| d.total))
        .collect();
    (x, gbt::clip_labels(&y, ceiling))
}

/// Runs the full calibration loop against one historical day.
pub fn calibrate(hist: &PricePath, cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    if hist.len() < facts::MIN_PATH_LEN {
        return Err(Error::InsufficientData {
            needed: facts::MIN_PATH_LEN,
            got: hist.len(),
        });
    }
    let fundamental = smoother::extract_fundamental(hist, cfg.em_iterations)?;
    let bounds = match cfg.bounds {
        Some(b) => b,
        None => ParameterBounds::stock_scaled(facts::volatility(&facts::returns(hist))?),
    };
    bounds.validate()?;
    let mut pool = sobol::scale(&sobol::sobol_points(3, cfg.pool_size, 1)?, &bounds)?;
    let evaluator = Evaluator::new(hist, &fundamental, cfg)?;
    let mut evaluated = Vec::new();

    let evaluate_batch = |pool: &mut ParameterPool,
                          evaluated: &mut Vec<EvaluatedPoint>,
                          batch: &[usize],
                          iteration: usize|
     -> Result<()> {
        let results = par::map(batch, |&i| {
            evaluator.evaluate(&cfg.params(pool.points[i]), i as u64)
        });
        for (&i, d) in batch.iter().zip(results) {
            let d = d?;
            pool.labels[i] = Some(d);
            evaluated.push(EvaluatedPoint {
                index: i,
                theta: pool.points[i],
                distance: d,
                iteration,
            });
        }
        Ok(())
    };

    let mut rng = seed::rng(seed::derive(cfg.seed, &[seed::TAG_INIT]));
    let init = index::sample(&mut rng, cfg.pool_size, cfg.init_size).into_vec();
    evaluate_batch(&mut pool, &mut evaluated, &init, 0)?;
    let best_total = |ev: &[EvaluatedPoint]| {
        ev.iter().map(|e| e.distance.total).fold(f64::INFINITY, f64::min)
    };
    let initial_best_total = best_total(&evaluated);
    info!("initial set: {} points, best {:.6}", evaluated.len(), initial_best_total);

    let mut hyper = cfg.hyper;
    let mut tuning = None;
    let mut iterations = Vec::new();
    for iteration in 1..=cfg.max_iterations {
        let (x, y) = training_set(&pool, cfg.label_ceiling);
        if iteration == 1 && cfg.tune {
            let folds = cfg.cv_folds.min(x.len() / 2).max(2);
            let res = hyperopt::tune(
                |h| gbt::cross_val_rmse(&x, &y, h, folds, cfg.seed).unwrap_or(f64::NAN),
                &cfg.hyper_space,
                cfg.tune_budget,
                seed::derive(cfg.seed, &[seed::TAG_TUNE]),
            )?;
            info!("tuned surrogate: {:?} (cv rmse {:.6})", res.best, res.best_score);
            hyper = res.best;
            tuning = Some(res);
        }
        let fit_seed = seed::derive(cfg.seed, &[seed::TAG_FIT, iteration as u64]);
        let model = gbt::fit(&x, &y, &hyper, fit_seed)?;
        let train_rmse = gbt::rmse(&y, &model.predict(&x)?);

        let unlabeled = pool.unlabeled();
        let queries: Vec<[f64; 3]> = unlabeled.iter().map(|&i| pool.points[i]).collect();
        let predictions = model.predict(&queries)?;
        let batch_seed = seed::derive(cfg.seed, &[seed::TAG_BATCH, iteration as u64]);
        let picks = select_batch(&predictions, cfg.exploit_size, cfg.explore_size, batch_seed);
        if picks.is_empty() {
            break;
        }
        let batch: Vec<usize> = picks.iter().map(|&k| unlabeled[k]).collect();
        evaluate_batch(&mut pool, &mut evaluated, &batch, iteration)?;

        // exploit picks come first, sorted by prediction
        let optimum = batch[0];
        let predicted = predictions[picks[0]];
        let actual = pool.labels[optimum].as_ref().map_or(cfg.label_ceiling, |d| d.total);
        let relative_error = if actual > 0.0 {
            (predicted - actual).abs() / actual
        } else {
            (predicted - actual).abs()
        };
        let record = IterationRecord {
            iteration,
            n_train: x.len(),
            train_rmse,
            predicted_optimum_index: optimum,
            predicted_optimum: pool.points[optimum],
            predicted_distance: predicted,
            actual_distance: actual,
            relative_error,
            best_total: best_total(&evaluated),
        };
        info!(
            "iteration {iteration}: predicted {:.6} actual {:.6} (err {:.2}%), best {:.6}",
            predicted,
            actual,
            100.0 * relative_error,
            record.best_total
        );
        iterations.push(record);
    }

    let (x, y) = training_set(&pool, cfg.label_ceiling);
    let surrogate = gbt::fit(&x, &y, &hyper, seed::derive(cfg.seed, &[seed::TAG_FIT, 0]))?;
    let best = evaluated
        .iter()
        .min_by(|a, b| {
            a.distance
                .total
                .total_cmp(&b.distance.total)
                .then(a.index.cmp(&b.index))
        })
        .expect("initial set is non-empty")
        .clone();
    Ok(CalibrationResult {
        config: cfg.clone(),
        bounds,
        fundamental,
        hyper,
        tuning,
        initial_best_total,
        iterations,
        evaluated,
        best_index: best.index,
        best_params: cfg.params(best.theta),
        best_distance: best.distance,
        surrogate,
    })
}
