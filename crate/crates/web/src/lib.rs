//! Browser bindings for the interactive demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string, so the page
//! needs no generated type glue beyond `wasm-bindgen` itself.

use chiarella::facts::{self, DistanceWeights, SQUARED_ACF_LAGS};
use chiarella::model::GbmSpec;
use chiarella::report;
use chiarella::smoother;
use chiarella::synthetic::{self, RegimeSwitching};
use chiarella::{ModelParams, PricePath};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Length of every demo day, one Nasdaq session of minute prices.
pub const DAY_LEN: usize = 390;

#[derive(Debug, Serialize)]
pub struct SimulatedDay {
    pub prices: Vec<f64>,
    pub fundamental: Vec<f64>,
    pub volatility: f64,
    pub excess_kurtosis: Option<f64>,
}

/// A model day driven by a random-walk fundamental.
pub fn simulated_day(kappa: f64, beta: f64, sigma_n: f64, fundamental_sd: f64, seed: u64) -> chiarella::Result<SimulatedDay> {
    let (path, fundamental) =
        synthetic::model_day(&ModelParams::new(kappa, beta, sigma_n), DAY_LEN, fundamental_sd, seed)?;
    let r = facts::returns(&path);
    Ok(SimulatedDay {
        volatility: facts::volatility(&r)?,
        excess_kurtosis: facts::excess_kurtosis(&r).ok(),
        prices: path.prices,
        fundamental,
    })
}

#[derive(Debug, Serialize)]
pub struct FactsComparison {
    pub hist_prices: Vec<f64>,
    pub sim_prices: Vec<f64>,
    pub lags: Vec<usize>,
    pub hist_squared_acf: Vec<f64>,
    pub sim_squared_acf: Vec<f64>,
    pub ks: f64,
    pub vol_gap: f64,
    pub acf1_gap: f64,
    pub acf2_gap: f64,
    pub total: f64,
    pub degenerate: bool,
}

/// A reference day with clustered volatility.
pub fn reference_day(seed: u64) -> chiarella::Result<PricePath> {
    RegimeSwitching::default().day(100.0, DAY_LEN, seed)
}

/// Simulates the model on the reference day's smoothed fundamental and
/// scores it against that day.
pub fn facts_comparison(kappa: f64, beta: f64, sigma_n: f64, day_seed: u64, seed: u64) -> chiarella::Result<FactsComparison> {
    let hist = reference_day(day_seed)?;
    let fund = smoother::extract_fundamental(&hist, 10)?;
    let params = ModelParams::new(kappa, beta, sigma_n);
    params.validate()?;
    let sim = chiarella::model::simulate(&params, &fund.values[1..], hist.first(), 0.0, seed);
    let sim = match sim {
        Ok(p) => p,
        Err(chiarella::Error::SimulationDiverged { .. }) => PricePath::new(vec![hist.first(); hist.len()])?,
        Err(e) => return Err(e),
    };
    let d = facts::distance(&sim, &hist, &DistanceWeights::default())?;
    let acf = |p: &PricePath| {
        let sq = facts::returns(p).squared();
        SQUARED_ACF_LAGS
            .iter()
            .map(|&l| facts::acf(&sq, l).unwrap_or(f64::NAN))
            .collect::<Vec<_>>()
    };
    Ok(FactsComparison {
        lags: SQUARED_ACF_LAGS.to_vec(),
        hist_squared_acf: acf(&hist),
        sim_squared_acf: acf(&sim),
        hist_prices: hist.prices,
        sim_prices: sim.prices,
        ks: d.ks,
        vol_gap: d.vol_gap,
        acf1_gap: d.acf1_gap,
        acf2_gap: d.acf2_gap,
        total: d.total,
        degenerate: d.degenerate,
    })
}

#[derive(Debug, Serialize)]
pub struct ScenarioCurves {
    pub lags: Vec<usize>,
    pub gbm: Vec<f64>,
    pub model: Vec<f64>,
    pub band: f64,
    /// First path of each kind, for plotting.
    pub gbm_path: Vec<f64>,
    pub model_path: Vec<f64>,
}

/// GBM fundamentals vs the model paths they drive.
pub fn scenario_curves(kappa: f64, beta: f64, sigma_n: f64, gbm_sigma: f64, n_paths: usize, seed: u64) -> chiarella::Result<ScenarioCurves> {
    let spec = GbmSpec {
        s0: 100.0,
        mu: 0.0,
        sigma: gbm_sigma,
        n_steps: DAY_LEN - 1,
        n_paths: n_paths.max(1),
    };
    let out = report::scenario(&ModelParams::new(kappa, beta, sigma_n), &spec, seed, 20)?;
    Ok(ScenarioCurves {
        lags: out.lags,
        gbm: out.gbm_squared_acf,
        model: out.model_squared_acf,
        band: out.band,
        gbm_path: out.gbm[0].prices.clone(),
        model_path: out.model[0].prices.clone(),
    })
}

fn to_js<T: Serialize>(r: chiarella::Result<T>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen]
pub fn simulate(kappa: f64, beta: f64, sigma_n: f64, fundamental_sd: f64, seed: u32) -> Result<String, JsValue> {
    to_js(simulated_day(kappa, beta, sigma_n, fundamental_sd, seed.into()))
}

#[wasm_bindgen]
pub fn compare(kappa: f64, beta: f64, sigma_n: f64, day_seed: u32, seed: u32) -> Result<String, JsValue> {
    to_js(facts_comparison(kappa, beta, sigma_n, day_seed.into(), seed.into()))
}

#[wasm_bindgen]
pub fn scenario(kappa: f64, beta: f64, sigma_n: f64, gbm_sigma: f64, n_paths: u32, seed: u32) -> Result<String, JsValue> {
    to_js(scenario_curves(kappa, beta, sigma_n, gbm_sigma, n_paths as usize, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_shapes() {
        let d = simulated_day(0.05, 0.1, 0.02, 0.02, 1).unwrap();
        assert_eq!(d.prices.len(), DAY_LEN);
        assert_eq!(d.fundamental.len(), DAY_LEN);
        assert!(d.volatility > 0.0);
        assert!(simulated_day(-1.0, 0.1, 0.02, 0.02, 1).is_err());
    }

    #[test]
    fn comparison_scores() {
        let c = facts_comparison(0.1, 0.05, 0.05, 3, 4).unwrap();
        assert_eq!(c.lags.len(), 20);
        assert!(c.total > 0.0 && !c.degenerate);
        let z = facts_comparison(0.0, 0.0, 0.0, 3, 4).unwrap();
        assert!(z.degenerate);
    }

    #[test]
    fn scenario_shapes() {
        let s = scenario_curves(0.2, 0.05, 0.01, 0.001, 5, 2).unwrap();
        assert_eq!(s.lags.len(), 20);
        assert_eq!(s.gbm_path.len(), DAY_LEN);
        assert_eq!(s.model_path[0], s.gbm_path[0]);
    }
}
