//! Browser bindings for three small calculators: closed-form dimensions,
//! the Moran equation for similarity ratios, and pressure curves.
//!
//! The `*_value` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors into JS exceptions.

use bowenlab::families::{mayer_dimension, theoretical_dimension};
use bowenlab::ncifs::{bowen_dimension, NcifsSystem, DEFAULT_WORD_CAP};
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEPTH: usize = 4;

/// `kind` is "escape" (`rho`, `beta`, `mult`) or "mayer" (`rho`, `alpha`, `mult`).
pub fn formula_value(kind: &str, rho: f64, shift: f64, mult: u32) -> Result<f64, String> {
    let r = match kind {
        "escape" => theoretical_dimension(rho, shift, mult),
        "mayer" => mayer_dimension(rho, shift, mult),
        other => return Err(format!("unknown formula kind {other:?}")),
    };
    r.map_err(|e| e.to_string())
}

/// Bowen dimension of the similarity system with these ratios, to 1e-9.
pub fn moran_value(ratios: &[f64]) -> Result<f64, String> {
    let sys = NcifsSystem::similarity(ratios).map_err(|e| e.to_string())?;
    let d = bowen_dimension(&sys, 0.0, 8.0, 1e-9, DEPTH, DEFAULT_WORD_CAP).map_err(|e| e.to_string())?;
    Ok(0.5 * (d.bowen_bracket.0 + d.bowen_bracket.1))
}

/// `{"t": [...], "pressure": [...]}` on `points` evenly spaced values in `[t_lo, t_hi]`.
pub fn pressure_curve_json(ratios: &[f64], t_lo: f64, t_hi: f64, points: usize) -> Result<String, String> {
    if points < 2 || !(t_hi > t_lo) {
        return Err(format!("need at least 2 points on a nonempty range, got {points} on [{t_lo}, {t_hi}]"));
    }
    let spec = NcifsSystem::similarity(ratios)
        .and_then(|s| s.spectrum(DEPTH, DEFAULT_WORD_CAP))
        .map_err(|e| e.to_string())?;
    let ts: Vec<f64> = (0..points).map(|i| t_lo + (t_hi - t_lo) * i as f64 / (points - 1) as f64).collect();
    let ps: Vec<f64> = ts.iter().map(|&t| spec.pressure(t).lower_pressure).collect();
    Ok(json!({ "t": ts, "pressure": ps }).to_string())
}

#[wasm_bindgen]
pub fn formula(kind: &str, rho: f64, shift: f64, mult: u32) -> Result<f64, JsError> {
    formula_value(kind, rho, shift, mult).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn moran(ratios: &[f64]) -> Result<f64, JsError> {
    moran_value(ratios).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pressure_curve(ratios: &[f64], t_lo: f64, t_hi: f64, points: usize) -> Result<String, JsError> {
    pressure_curve_json(ratios, t_lo, t_hi, points).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calculators_agree_with_closed_forms() {
        assert_eq!(formula_value("escape", 2.0, 0.0, 3).unwrap(), 1.5);
        assert_eq!(formula_value("mayer", 1.0, 0.0, 1).unwrap(), 0.5);
        assert!(formula_value("other", 1.0, 0.0, 1).is_err());
        let d = moran_value(&[0.25; 3]).unwrap();
        assert!((d - 3f64.ln() / 4f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn pressure_curve_crosses_zero_at_dimension() {
        let v: serde_json::Value = serde_json::from_str(&pressure_curve_json(&[0.5, 0.5], 0.0, 2.0, 5).unwrap()).unwrap();
        let p: Vec<f64> = v["pressure"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        assert!((p[0] - 2f64.ln()).abs() < 1e-12);
        assert!(p[2].abs() < 1e-12);
        assert!(p[4] < 0.0);
        assert!(pressure_curve_json(&[0.5], 1.0, 0.0, 5).is_err());
    }
}
