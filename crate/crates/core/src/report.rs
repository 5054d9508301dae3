//! Plot-ready report files for a calibrated day and GBM scenario runs.
//!
//! Every file is a plain CSV with a header row, except the calibration
//! record and the summary, which are JSON.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::calibrate::{point_seed, CalibrationResult, Evaluator};
use crate::error::{Error, Result};
use crate::facts::{self, ReturnSeries};
use crate::io::{out_file, write_json};
use crate::model::{gbm_path_seed, gbm_paths, simulate, GbmSpec, ModelParams, PricePath};
use crate::par;
use crate::seed;

pub const CALIBRATION_FILE: &str = "calibration.json";
pub const ACF_FILE: &str = "acf.csv";
pub const CDF_FILE: &str = "cdf.csv";
pub const SENSITIVITY_FILE: &str = "sensitivity.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SCENARIO_PRICES_FILE: &str = "scenario_prices.csv";
pub const SCENARIO_ACF_FILE: &str = "scenario_acf.csv";

pub const PARAM_NAMES: [&str; 3] = ["kappa", "beta", "sigma_n"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    /// Grid points per parameter in the sensitivity sweep (the optimum's own
    /// coordinate is always added).
    pub sweep_points: usize,
    pub max_lag: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            sweep_points: 21,
            max_lag: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfRow {
    pub lag: usize,
    pub hist_return_acf: f64,
    pub sim_return_acf: f64,
    pub return_acf_gap: f64,
    pub hist_squared_acf: f64,
    pub sim_squared_acf: f64,
    pub squared_acf_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfRow {
    #[serde(rename = "return")]
    pub value: f64,
    pub hist_ecdf: f64,
    pub sim_ecdf: f64,
    pub normal_cdf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub predicted: f64,
    pub actual: f64,
    pub is_optimum: bool,
}

/// Moments and tail statistics of one return series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub excess_kurtosis: Option<f64>,
}

impl ReturnSummary {
    pub fn new(r: &ReturnSeries) -> Self {
        Self {
            n: r.len(),
            mean: r.mean(),
            std: facts::volatility(r).unwrap_or(f64::NAN),
            excess_kurtosis: facts::excess_kurtosis(r).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub hist_returns: ReturnSummary,
    pub sim_returns: ReturnSummary,
    /// Mean and standard deviation of the normal reference in the CDF file.
    pub normal_mean: f64,
    pub normal_std: f64,
}

/// The simulated day at the calibrated optimum, with the seed used to score it.
pub fn best_simulation(result: &CalibrationResult, hist: &PricePath) -> Result<PricePath> {
    let ev = Evaluator::new(hist, &result.fundamental, &result.config)?;
    let mut sim = ev.simulate(
        &result.best_params,
        point_seed(result.config.seed, result.best_index as u64, 0),
    )?;
    sim.timestamps = hist.timestamps.clone();
    Ok(sim)
}

fn acf_or_nan(r: &ReturnSeries, lag: usize) -> f64 {
    facts::acf(r, lag).unwrap_or(f64::NAN)
}

/// Per-lag autocorrelations of returns and squared returns, historical vs
/// simulated. Gaps are `sim - hist`.
pub fn acf_table(hist: &PricePath, sim: &PricePath, max_lag: usize) -> Vec<AcfRow> {
    let (hr, sr) = (facts::returns(hist), facts::returns(sim));
    let (hs, ss) = (hr.squared(), sr.squared());
    let max_lag = max_lag.min(hr.len().min(sr.len()).saturating_sub(1));
    (1..=max_lag)
        .map(|lag| {
            let (a, b) = (acf_or_nan(&hr, lag), acf_or_nan(&sr, lag));
            let (c, d) = (acf_or_nan(&hs, lag), acf_or_nan(&ss, lag));
            AcfRow {
                lag,
                hist_return_acf: a,
                sim_return_acf: b,
                return_acf_gap: b - a,
                hist_squared_acf: c,
                sim_squared_acf: d,
                squared_acf_gap: d - c,
            }
        })
        .collect()
}

fn ecdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|&v| v <= x) as f64 / sorted.len() as f64
}

/// Empirical CDFs of both return series on the union of their values, next
/// to a normal CDF with the historical sample mean and standard deviation.
pub fn cdf_table(hist: &ReturnSeries, sim: &ReturnSeries) -> Result<(Vec<CdfRow>, f64, f64)> {
    let mean = hist.mean();
    let std = facts::volatility(hist)?;
    let normal = Normal::new(mean, std)
        .map_err(|e| Error::Numerical(format!("normal reference: {e}")))?;
    let sort = |r: &ReturnSeries| {
        let mut v = r.values.clone();
        v.sort_by(f64::total_cmp);
        v
    };
    let (h, s) = (sort(hist), sort(sim));
    let mut grid: Vec<f64> = h.iter().chain(&s).copied().collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let rows = grid
        .into_iter()
        .map(|x| CdfRow {
            value: x,
            hist_ecdf: ecdf(&h, x),
            sim_ecdf: ecdf(&s, x),
            normal_cdf: normal.cdf(x),
        })
        .collect();
    Ok((rows, mean, std))
}

/// Sweeps each parameter across its bounds with the other two held at the
/// optimum. Actual distances reuse the optimum's simulation seed.
pub fn sensitivity_sweep(
    result: &CalibrationResult,
    hist: &PricePath,
    n_points: usize,
) -> Result<Vec<SweepRow>> {
    let ev = Evaluator::new(hist, &result.fundamental, &result.config)?;
    let best = result.best_params.theta();
    let bounds = result.bounds.as_array();
    let mut thetas = Vec::new();
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        let mut values: Vec<f64> = (0..n_points)
            .map(|i| {
                if n_points == 1 {
                    lo
                } else {
                    lo + (hi - lo) * i as f64 / (n_points - 1) as f64
                }
            })
            .collect();
        values.push(best[j]);
        values.sort_by(f64::total_cmp);
        values.dedup();
        for v in values {
            let mut theta = best;
            theta[j] = v;
            thetas.push((j, theta));
        }
    }
    let actual = par::map(&thetas, |(_, theta)| {
        ev.evaluate(&result.config.params(*theta), result.best_index as u64)
    });
    thetas
        .iter()
        .zip(actual)
        .map(|(&(j, theta), actual)| {
            Ok(SweepRow {
                parameter: PARAM_NAMES[j].to_string(),
                value: theta[j],
                predicted: result.surrogate_prediction(theta),
                actual: actual?.total,
                is_optimum: theta == best,
            })
        })
        .collect()
}

pub(crate) fn write_rows<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the calibration record, ACF table, CDF table, sensitivity sweep
/// and a JSON summary into `out_dir`.
pub fn report(
    result: &CalibrationResult,
    hist: &PricePath,
    out_dir: &Path,
    opts: &ReportOptions,
) -> Result<ReportSummary> {
    let sim = best_simulation(result, hist)?;
    let (hr, sr) = (facts::returns(hist), facts::returns(&sim));

    let calib = out_file(out_dir, CALIBRATION_FILE)?;
    write_json(result, &calib)?;
    let acf = out_file(out_dir, ACF_FILE)?;
    write_rows(&acf_table(hist, &sim, opts.max_lag), &acf)?;
    let cdf = out_file(out_dir, CDF_FILE)?;
    let (rows, normal_mean, normal_std) = cdf_table(&hr, &sr)?;
    write_rows(&rows, &cdf)?;
    let sweep = out_file(out_dir, SENSITIVITY_FILE)?;
    write_rows(&sensitivity_sweep(result, hist, opts.sweep_points)?, &sweep)?;

    let summary_path = out_file(out_dir, SUMMARY_FILE)?;
    let summary = ReportSummary {
        files: vec![calib, acf, cdf, sweep, summary_path.clone()],
        hist_returns: ReturnSummary::new(&hr),
        sim_returns: ReturnSummary::new(&sr),
        normal_mean,
        normal_std,
    };
    write_json(&summary, &summary_path)?;
    Ok(summary)
}

/// GBM fundamentals and the model paths they drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutput {
    pub params: ModelParams,
    pub spec: GbmSpec,
    pub seed: u64,
    pub gbm: Vec<PricePath>,
    pub model: Vec<PricePath>,
    pub lags: Vec<usize>,
    /// Squared-return autocorrelation averaged over paths, per lag.
    pub gbm_squared_acf: Vec<f64>,
    pub model_squared_acf: Vec<f64>,
    /// `2 / sqrt(n_steps)`, the usual white-noise band.
    pub band: f64,
}

/// Seed of the model noise for scenario path `index`.
pub fn scenario_path_seed(seed: u64, index: usize) -> u64 {
    seed::derive(gbm_path_seed(seed, index), &[1])
}

fn mean_squared_acf(paths: &[PricePath], lags: &[usize], what: &str) -> Vec<f64> {
    let mut sum = vec![0.0; lags.len()];
    let mut used = 0usize;
    for (i, p) in paths.iter().enumerate() {
        match facts::acf_lags(&facts::returns(p).squared(), lags) {
            Ok(v) => {
                used += 1;
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
            }
            Err(e) => warn!("{what} path {i}: {e}; left out of the average"),
        }
    }
    sum.iter().map(|s| s / used as f64).collect()
}

/// Simulates the model with each GBM path as its fundamental series,
/// starting at the path's first value with zero momentum.
pub fn scenario(params: &ModelParams, spec: &GbmSpec, seed: u64, max_lag: usize) -> Result<ScenarioOutput> {
    params.validate()?;
    if max_lag == 0 || max_lag >= spec.n_steps {
        return Err(Error::InvalidParams(format!(
            "max_lag must be in 1..{}, got {max_lag}",
            spec.n_steps
        )));
    }
    let gbm = gbm_paths(spec, seed)?;
    let indexed: Vec<(usize, &PricePath)> = gbm.iter().enumerate().collect();
    let model = par::map(&indexed, |&(i, g)| {
        simulate(params, &g.prices[1..], g.first(), 0.0, scenario_path_seed(seed, i))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let lags: Vec<usize> = (1..=max_lag).collect();
    Ok(ScenarioOutput {
        params: *params,
        spec: *spec,
        seed,
        gbm_squared_acf: mean_squared_acf(&gbm, &lags, "GBM"),
        model_squared_acf: mean_squared_acf(&model, &lags, "model"),
        band: 2.0 / (spec.n_steps as f64).sqrt(),
        lags,
        gbm,
        model,
    })
}

#[derive(Serialize)]
struct PanelRow {
    path: usize,
    step: usize,
    fundamental: f64,
    price: f64,
}

#[derive(Serialize)]
struct ScenarioAcfRow {
    lag: usize,
    gbm: f64,
    model: f64,
    band: f64,
}

/// Writes the price panel (`path,step,fundamental,price`) and the averaged
/// squared-return ACF curves (`lag,gbm,model,band`).
pub fn write_scenario(out: &ScenarioOutput, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let prices = out_file(out_dir, SCENARIO_PRICES_FILE)?;
    let mut w = csv::Writer::from_path(&prices)?;
    for (i, (g, m)) in out.gbm.iter().zip(&out.model).enumerate() {
        for (step, (&f, &p)) in g.prices.iter().zip(&m.prices).enumerate() {
            w.serialize(PanelRow {
                path: i,
                step,
                fundamental: f,
                price: p,
            })?;
        }
    }
    w.flush()?;
    let acf = out_file(out_dir, SCENARIO_ACF_FILE)?;
    let rows: Vec<ScenarioAcfRow> = out
        .lags
        .iter()
        .enumerate()
        .map(|(k, &lag)| ScenarioAcfRow {
            lag,
            gbm: out.gbm_squared_acf[k],
            model: out.model_squared_acf[k],
            band: out.band,
        })
        .collect();
    write_rows(&rows, &acf)?;
    Ok(vec![prices, acf])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_counts_ties() {
        let s = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(ecdf(&s, 0.5), 0.0);
        assert_eq!(ecdf(&s, 2.0), 0.75);
        assert_eq!(ecdf(&s, 3.0), 1.0);
    }

    #[test]
    fn cdf_reference_moments() {
        let h = ReturnSeries::new(vec![0.1, -0.2, 0.05, 0.3, -0.1]);
        let s = ReturnSeries::new(vec![0.0, 0.1, 0.2]);
        let (rows, mean, std) = cdf_table(&h, &s).unwrap();
        assert_eq!(rows.len(), 7);
        assert!((mean - 0.03).abs() < 1e-15);
        let var = [0.07f64, -0.23, 0.02, 0.27, -0.13].iter().map(|d| d * d).sum::<f64>() / 4.0;
        assert!((std - var.sqrt()).abs() < 1e-15);
        assert!(rows.windows(2).all(|w| w[0].normal_cdf <= w[1].normal_cdf));
    }

    #[test]
    fn self_acf_gaps_vanish() {
        let p = PricePath::new((0..60).map(|i| 100.0 + ((i * 7919) % 13) as f64).collect()).unwrap();
        let rows = acf_table(&p, &p, 10);
        assert_eq!(rows.len(), 10);
        assert!(rows.iter().all(|r| r.return_acf_gap == 0.0 && r.squared_acf_gap == 0.0));
    }

    #[test]
    fn scenario_reuses_fundamentals() {
        let spec = GbmSpec { s0: 100.0, mu: 0.0, sigma: 0.01, n_steps: 50, n_paths: 3 };
        let out = scenario(&ModelParams::new(0.3, 0.05, 0.02), &spec, 9, 5).unwrap();
        assert_eq!(out.model.len(), 3);
        for (g, m) in out.gbm.iter().zip(&out.model) {
            assert_eq!(m.len(), g.len());
            assert_eq!(m.first(), g.first());
        }
        assert_eq!(out.gbm, gbm_paths(&spec, 9).unwrap());
        assert!(scenario(&ModelParams::new(0.3, 0.05, 0.02), &spec, 9, 50).is_err());
    }
}
