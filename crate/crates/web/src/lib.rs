//! Browser bindings: exponent admissibility, Poisson smoothing heatmaps and
//! Morrey radius profiles on a two-dimensional boundary grid.

use serde_json::json;
use wasm_bindgen::prelude::*;

use dynbound::fields::{BoundaryField, TangentialGrid};
use dynbound::morrey::{morrey_functional, MorreySpec, PointSet};
use dynbound::data::homogeneous;
use dynbound::operators::poisson_boundary;
use dynbound::params::{check_admissible, derive_exponents, find_admissible, ProblemParams};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Derived exponents and the constraint table as JSON. Non-finite `q1` or
/// `q2` asks for an automatically chosen pair.
pub fn admissibility_json(n: usize, p1: f64, p2: f64, mu: f64, q1: f64, q2: f64) -> Result<String, String> {
    let params = ProblemParams::new(n, p1, p2, mu).map_err(|e| e.to_string())?;
    let (q1, q2) = if q1.is_finite() && q2.is_finite() {
        (q1, q2)
    } else {
        find_admissible(&params).map_err(|e| format!("no admissible pair: {} ({})", e.empty_interval, e.detail))?
    };
    let exps = derive_exponents(&params, q1, q2).map_err(|e| e.to_string())?;
    let report = check_admissible(&exps);
    Ok(json!({ "exponents": exps, "report": report }).to_string())
}

#[wasm_bindgen]
pub fn admissibility(n: usize, p1: f64, p2: f64, mu: f64, q1: f64, q2: f64) -> Result<String, JsValue> {
    admissibility_json(n, p1, p2, mu, q1, q2).map_err(js_err)
}

fn profile(kind: &str, x: &[f64]) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    match kind {
        "disk" => (r2 <= 1.0) as u8 as f64,
        "ring" => (-(r2.sqrt() - 1.5).powi(2) * 8.0).exp(),
        _ => (-r2).exp(),
    }
}

/// Input followed by its smoothing at `depth`, each `m × m` in row-major
/// order (first axis slowest).
pub fn poisson_smoothing_values(kind: &str, m: usize, half_width: f64, depth: f64) -> Result<Vec<f64>, String> {
    let grid = TangentialGrid::new(2, half_width, m).map_err(|e| e.to_string())?;
    let f = BoundaryField::from_fn(grid.clone(), |x| profile(kind, x));
    let mut out = f.values.clone();
    out.extend(poisson_boundary(&grid, &f.values, depth).map_err(|e| e.to_string())?);
    Ok(out)
}

#[wasm_bindgen]
pub fn poisson_smoothing(kind: &str, m: usize, half_width: f64, depth: f64) -> Result<Vec<f64>, JsValue> {
    poisson_smoothing_values(kind, m, half_width, depth).map_err(js_err)
}

/// `r ↦ r^{-μ/q}‖f‖_{L^q(B_r(0))}` on log-spaced radii for a bump or for
/// `|x|^{-k}`, as JSON `{radii, values}`.
pub fn morrey_profile_json(kind: &str, k: f64, q: f64, mu: f64, m: usize, half_width: f64) -> Result<String, String> {
    let grid = TangentialGrid::new(2, half_width, m).map_err(|e| e.to_string())?;
    let f = match kind {
        "power" => homogeneous(&grid, 1.0, k).map_err(|e| e.to_string())?,
        _ => BoundaryField::from_fn(grid.clone(), |x| profile(kind, x)),
    };
    let spec = MorreySpec::boundary(q, mu, 2).map_err(|e| e.to_string())?;
    let set = PointSet::boundary(&grid);
    let (lo, hi) = (4.0 * grid.spacing(), half_width);
    let radii: Vec<f64> = (0..24).map(|i| lo * (hi / lo).powf(i as f64 / 23.0)).collect();
    let values: Vec<f64> = radii
        .iter()
        .map(|&r| morrey_functional(&set, &f.values, &spec, &[0.0, 0.0], r, f.singularity.as_ref()))
        .collect();
    Ok(json!({ "radii": radii, "values": values, "invariant_k": (2.0 - mu) / q }).to_string())
}

#[wasm_bindgen]
pub fn morrey_profile(kind: &str, k: f64, q: f64, mu: f64, m: usize, half_width: f64) -> Result<String, JsValue> {
    morrey_profile_json(kind, k, q, mu, m, half_width).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn witness_is_admissible() {
        let s = admissibility_json(3, 6.0, 3.5, 0.5, 8.0, 6.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["report"]["admissible"], true);
        let auto = admissibility_json(3, 6.0, 3.5, 0.5, f64::NAN, f64::NAN).unwrap();
        assert!(auto.contains("\"admissible\":true"));
        assert!(admissibility_json(2, 3.0, 2.0, 0.0, 8.0, 6.0).is_err());
    }

    #[test]
    fn smoothing_flattens_and_leaks_little_mass() {
        let m = 65;
        let v = poisson_smoothing_values("bump", m, 8.0, 0.5).unwrap();
        let (input, output) = v.split_at(m * m);
        let mass = |a: &[f64]| a.iter().sum::<f64>();
        // Some mass leaks out of the box through the kernel tail.
        assert!(mass(output) < mass(input) && mass(output) > 0.9 * mass(input));
        let peak = |a: &[f64]| a.iter().cloned().fold(0.0, f64::max);
        assert!(peak(output) < peak(input));
    }

    #[test]
    fn invariant_power_has_a_flat_profile() {
        let s = morrey_profile_json("power", 0.4, 3.75, 0.5, 257, 4.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        let vals: Vec<f64> = v["values"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let exact = (4.0 * std::f64::consts::PI).powf(1.0 / 3.75);
        assert!(vals.iter().all(|v| (v / exact - 1.0).abs() < 0.02), "{vals:?}");
    }
}
