//! WebAssembly bindings for the static demo page. Every operation returns a
//! JSON string; the plain-Rust versions are usable (and tested) natively.

use pairweight::design::{draw_sample, enumerate_design, pair_probabilities, DesignConfig, DesignNode};
use pairweight::diagnostics::{check_conditions, ConditionThresholds};
use pairweight::numeric::quantile_sorted;
use pairweight::popgen::{generate_population, PopulationConfig};
use pairweight::weights::{full_pairwise_weights, marginal_weights, TargetSize, WeightOptions};
use pairweight::{Error, Result};
use serde_json::json;
use wasm_bindgen::prelude::*;

const ENUMERATION_CAP: u128 = 200_000;

fn parse_sizes(text: &str) -> Result<Vec<f64>> {
    text.split([',', ' '])
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|e| Error::InvalidParameter(format!("size {t:?}: {e}"))))
        .collect()
}

/// Pair and person inclusion probabilities for one household roster.
pub fn pair_table_json(sizes: &str) -> Result<String> {
    let sizes = parse_sizes(sizes)?;
    let (pairs, marginals) = pair_probabilities(&sizes)?;
    let pairs: Vec<_> = pairs.iter().map(|&((a, b), p)| json!({ "a": a, "b": b, "p": p })).collect();
    Ok(json!({ "sizes": sizes, "pairs": pairs, "marginals": marginals }).to_string())
}

/// Condition constants of a small design, by exact enumeration.
/// `kind` is `srswor`, `census` or `brewer` (which uses `sizes`).
pub fn design_conditions_json(kind: &str, big_n: usize, n: usize, sizes: &str) -> Result<String> {
    let design = match kind {
        "srswor" => DesignNode::srswor(big_n, n),
        "census" => DesignNode::census(big_n),
        "brewer" => DesignNode::brewer(&parse_sizes(sizes)?, n)?,
        other => return Err(Error::InvalidParameter(format!("unknown design {other:?}"))),
    };
    design.validate()?;
    let t = enumerate_design(&design, ENUMERATION_CAP)?;
    let report = check_conditions(&t, t.expected_sample_size, t.population_size, &ConditionThresholds::default())?;
    report.to_json()
}

/// Full pairwise against marginal weights for one sample of `k` PSUs from
/// the default population, with N estimated by the marginal weight total.
pub fn weight_convergence_json(k: usize, seed: u64) -> Result<String> {
    let pop = generate_population(&PopulationConfig::default())?;
    let sample = draw_sample(&pop, &DesignConfig { n_psu_selected: k, seed, ..Default::default() })?;
    let opts = WeightOptions { target_size: TargetSize::Estimated, ..Default::default() };
    let full = full_pairwise_weights(&sample, None, &opts)?;
    let marg = marginal_weights(&sample, None)?;
    let big_n: f64 = marg.raw.iter().sum();
    let mut ratio = Vec::with_capacity(sample.len());
    let mut approx_err = Vec::with_capacity(sample.len());
    for (f, m) in full.raw.iter().zip(&marg.raw) {
        ratio.push(f / m);
        let approx = (big_n - m) / (big_n - 1.0) * m;
        approx_err.push((f - approx).abs() / approx);
    }
    ratio.sort_by(f64::total_cmp);
    approx_err.sort_by(f64::total_cmp);
    let mut dev: Vec<f64> = ratio.iter().map(|r| (r - 1.0).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let quantiles: Vec<f64> = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0].iter().map(|&p| quantile_sorted(&ratio, p)).collect();
    Ok(json!({
        "k": k,
        "sample_size": sample.len(),
        "estimated_population_size": big_n,
        "median_abs_deviation": quantile_sorted(&dev, 0.5),
        "median_approximation_error": quantile_sorted(&approx_err, 0.5),
        "ratio_quantiles": { "p": [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0], "value": quantiles },
    })
    .to_string())
}

fn to_js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn pair_table(sizes: &str) -> std::result::Result<String, JsError> {
    to_js(pair_table_json(sizes))
}

#[wasm_bindgen]
pub fn design_conditions(kind: &str, big_n: usize, n: usize, sizes: &str) -> std::result::Result<String, JsError> {
    to_js(design_conditions_json(kind, big_n, n, sizes))
}

#[wasm_bindgen]
pub fn weight_convergence(k: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(weight_convergence_json(k, seed as u64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> serde_json::Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn pair_table_marginals() {
        let v = parse(&pair_table_json("1, 2, 3").unwrap());
        let m: Vec<f64> = serde_json::from_value(v["marginals"].clone()).unwrap();
        for (got, want) in m.iter().zip([7.0 / 12.0, 8.0 / 12.0, 9.0 / 12.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(v["pairs"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn srswor_conditions() {
        let v = parse(&design_conditions_json("srswor", 6, 2, "").unwrap());
        assert_eq!(v["gamma"]["value"], 15.0);
    }

    #[test]
    fn bad_inputs_are_errors() {
        assert!(pair_table_json("1").is_err());
        assert!(pair_table_json("1,x").is_err());
        assert!(design_conditions_json("cluster", 6, 2, "").is_err());
        assert!(design_conditions_json("srswor", 60, 30, "").is_err());
    }

    #[test]
    fn convergence_summary() {
        let v = parse(&weight_convergence_json(40, 3).unwrap());
        assert!(v["sample_size"].as_u64().unwrap() >= 400);
        assert!(v["median_abs_deviation"].as_f64().unwrap() < 0.05);
    }
}
