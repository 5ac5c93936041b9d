//! Numerical checks of the qualitative statements: self-similarity, axial
//! symmetry, positivity, trace convergence and asymptotic stability.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{BoundaryField, Field, TangentialGrid};
use crate::morrey::duality_pairing_at;
use crate::solver::{SolutionRecord, Solver};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectReport {
    pub property: String,
    pub status: Status,
    pub defect: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub breakdown: BTreeMap<String, Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl DefectReport {
    fn new(property: &str, defect: f64, tolerance: f64, pass: bool) -> Self {
        Self {
            property: property.into(),
            status: if pass { Status::Pass } else { Status::Fail },
            defect,
            tolerance,
            pass,
            breakdown: BTreeMap::new(),
            note: None,
        }
    }

    pub fn skipped(property: &str, reason: impl Into<String>) -> Self {
        Self {
            property: property.into(),
            status: Status::Skipped,
            defect: 0.0,
            tolerance: 0.0,
            pass: false,
            breakdown: BTreeMap::new(),
            note: Some(format!("precondition unmet: {}", reason.into())),
        }
    }

    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

/// Tangential offsets of the grid nodes from the centre node, per axis.
fn offsets(grid: &TangentialGrid, j: usize) -> Vec<i64> {
    let mut idx = vec![0; grid.dim];
    grid.unravel(j, &mut idx);
    let c = (grid.m / 2) as i64;
    idx.iter().map(|&i| i as i64 - c).collect()
}

/// `max_{x ≠ 0} |φ(x) - λ^k φ(λx)| / |φ(x)|` over nodes with `λx` a node.
pub fn homogeneity_defect(phi: &BoundaryField, k: f64, lambda: f64) -> f64 {
    let g = &phi.grid;
    let h = g.spacing();
    let mut worst = 0.0f64;
    for j in 0..g.len() {
        let x = g.point(j);
        if x.iter().all(|v| v.abs() < 0.5 * h) {
            continue;
        }
        let y: Vec<f64> = x.iter().map(|v| lambda * v).collect();
        let on_node = y.iter().all(|v| ((v / h).round() - v / h).abs() < 1e-9 && v.abs() <= g.half_width + 1e-9);
        if !on_node {
            continue;
        }
        let (Ok(a), Ok(b)) = (phi.sample_at(0, &x), phi.sample_at(0, &y)) else { continue };
        if a != 0.0 {
            worst = worst.max((a - lambda.powf(k) * b).abs() / a.abs());
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelfSimilarityOptions {
    pub lambdas: Vec<f64>,
    pub tolerance: f64,
    /// Normal coordinates of the sample points; `λ xn` is interpolated.
    pub normal_points: Vec<f64>,
    /// Samples with `min(|x′|, λ|x′|)` below this many cells are dropped:
    /// the origin cell holds a cell average, not a point value.
    pub origin_exclusion_cells: f64,
}

impl Default for SelfSimilarityOptions {
    fn default() -> Self {
        Self { lambdas: vec![0.5, 2.0], tolerance: 0.05, normal_points: vec![0.0], origin_exclusion_cells: 2.0 }
    }
}

/// `max |u(x,t) - λ^k u(λx, λt)| / (|u(x,t)| + floor)` over tangential nodes
/// with `λx′` a node and times with `λt` a node, `k` the data's degree.
pub fn check_self_similarity(
    u: &Field,
    phi: &BoundaryField,
    k: f64,
    opts: &SelfSimilarityOptions,
) -> Result<DefectReport> {
    for &lam in &opts.lambdas {
        if lam != 1.0 {
            let d = homogeneity_defect(phi, k, lam);
            if d > 0.01 {
                return Err(Error::Precondition(format!("data homogeneity defect {d:.3e} exceeds 1% at λ = {lam}")));
            }
        }
    }
    let tan = &u.grid.tan;
    let h = tan.spacing();
    let floor = 1e-9 * u.max_abs();
    let mut worst = 0.0f64;
    let mut report_breakdown = BTreeMap::new();
    for &lam in &opts.lambdas {
        if !(lam > 0.0) {
            return Err(invalid("scaling factors must be positive"));
        }
        let mut times = Vec::new();
        let mut per_time = Vec::new();
        for (i, &t) in u.times.nodes().iter().enumerate() {
            let Some(j) = u.times.node_index(lam * t) else { continue };
            let mut w = 0.0f64;
            for p in 0..tan.len() {
                let x = tan.point(p);
                let off = offsets(tan, p);
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if r.min(lam * r) < opts.origin_exclusion_cells * h - 1e-9 {
                    continue;
                }
                let y: Vec<f64> = x.iter().map(|v| lam * v).collect();
                let y_on_grid = off.iter().all(|&o| {
                    let s = lam * o as f64;
                    (s - s.round()).abs() < 1e-9
                });
                if !y_on_grid || y.iter().any(|v| v.abs() > tan.half_width + 1e-9) {
                    continue;
                }
                for &xn in &opts.normal_points {
                    if lam * xn > u.grid.nor.extent || xn > u.grid.nor.extent {
                        continue;
                    }
                    let mut xp = x.clone();
                    xp.push(xn);
                    let mut yp = y.clone();
                    yp.push(lam * xn);
                    let a = u.sample_at(i, &xp)?;
                    let b = lam.powf(k) * u.sample_at(j, &yp)?;
                    w = w.max((a - b).abs() / (a.abs() + floor));
                }
            }
            times.push(t);
            per_time.push(w);
            worst = worst.max(w);
        }
        if times.is_empty() {
            return Err(invalid(format!("no time node t has λt a node for λ = {lam}")));
        }
        report_breakdown.insert(format!("lambda={lam}:t"), times);
        report_breakdown.insert(format!("lambda={lam}:defect"), per_time);
    }
    let mut r = DefectReport::new("self-similarity", worst, opts.tolerance, worst <= opts.tolerance);
    r.breakdown = report_breakdown;
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Rotation {
    /// Multiples of 90° in the first two tangential axes (grid-exact).
    QuarterTurns(u8),
    /// Arbitrary angle through interpolation.
    Degrees(f64),
}

/// Node mapped by `k` quarter turns in axes 0, 1: `(i, j) ↦ (m-1-j, i)`.
fn quarter_turn(grid: &TangentialGrid, p: usize, k: u8) -> usize {
    let mut idx = vec![0; grid.dim];
    grid.unravel(p, &mut idx);
    for _ in 0..k % 4 {
        let (i, j) = (idx[0], idx[1]);
        idx[0] = grid.m - 1 - j;
        idx[1] = i;
    }
    grid.ravel(&idx)
}

/// Bound of multilinear interpolation error, `(h²/8) Σ_a max |∂²_a u|`, with
/// the second derivatives taken from grid differences of time slice `i`.
fn interpolation_bound(u: &Field, i: usize) -> f64 {
    let tan = &u.grid.tan;
    let h = tan.spacing();
    let m_nor = u.grid.nor.m;
    let s = u.slice(i);
    let mut idx = vec![0; tan.dim];
    let mut total = 0.0;
    for a in 0..tan.dim {
        let mut worst = 0.0f64;
        for p in 0..tan.len() {
            tan.unravel(p, &mut idx);
            if idx[a] == 0 || idx[a] + 1 == tan.m {
                continue;
            }
            let mut lo = idx.clone();
            lo[a] -= 1;
            let mut hi = idx.clone();
            hi[a] += 1;
            let (pl, ph) = (tan.ravel(&lo), tan.ravel(&hi));
            for k in 0..m_nor {
                let d2 = s[ph * m_nor + k] - 2.0 * s[p * m_nor + k] + s[pl * m_nor + k];
                worst = worst.max(d2.abs());
            }
        }
        total += worst / (h * h);
    }
    h * h / 8.0 * total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SymmetryOptions {
    pub rotations: Vec<Rotation>,
    pub exact_tolerance: f64,
    /// Multiplies the interpolation bound for non-grid rotations.
    pub interpolation_safety: f64,
}

impl Default for SymmetryOptions {
    fn default() -> Self {
        Self {
            rotations: vec![Rotation::QuarterTurns(1), Rotation::QuarterTurns(2), Rotation::Degrees(30.0)],
            exact_tolerance: 1e-10,
            interpolation_safety: 2.0,
        }
    }
}

/// Relative defect `max |u(Mx′, xn, t) - u(x, t)| / max |u|` per rotation.
/// Quarter turns are compared node to node; other angles sample the rotated
/// point and are held to the interpolation bound.
pub fn check_axial_symmetry(u: &Field, opts: &SymmetryOptions) -> Result<DefectReport> {
    let tan = &u.grid.tan;
    if tan.dim < 2 {
        return Err(invalid("axial symmetry needs at least two tangential axes"));
    }
    let scale = u.max_abs();
    let m_nor = u.grid.nor.m;
    let mut defects = Vec::new();
    let mut tolerances = Vec::new();
    let mut pass = true;
    let mut worst_ratio = 0.0f64;
    for rot in &opts.rotations {
        let (defect, tol) = match *rot {
            Rotation::QuarterTurns(k) => {
                let mut d = 0.0f64;
                for i in 0..u.times.len() {
                    let s = u.slice(i);
                    for p in 0..tan.len() {
                        let q = quarter_turn(tan, p, k);
                        for kk in 0..m_nor {
                            d = d.max((s[q * m_nor + kk] - s[p * m_nor + kk]).abs());
                        }
                    }
                }
                (d, opts.exact_tolerance)
            }
            Rotation::Degrees(deg) => {
                let (sn, cs) = deg.to_radians().sin_cos();
                let mut d = 0.0f64;
                let mut bound = 0.0f64;
                for i in 0..u.times.len() {
                    bound = bound.max(interpolation_bound(u, i));
                    for p in 0..tan.len() {
                        let x = tan.point(p);
                        let mut y = x.clone();
                        y[0] = cs * x[0] - sn * x[1];
                        y[1] = sn * x[0] + cs * x[1];
                        if y.iter().any(|v| v.abs() > tan.half_width) {
                            continue;
                        }
                        for (kk, &xn) in u.grid.nor.nodes().iter().enumerate() {
                            let mut yp = y.clone();
                            yp.push(xn);
                            let v = u.sample_at(i, &yp)?;
                            d = d.max((v - u.slice(i)[p * m_nor + kk]).abs());
                        }
                    }
                }
                (d, opts.interpolation_safety * bound / scale.max(f64::MIN_POSITIVE))
            }
        };
        let rel = if scale > 0.0 { defect / scale } else { 0.0 };
        pass &= rel <= tol;
        if tol > 0.0 {
            worst_ratio = worst_ratio.max(rel / tol);
        }
        defects.push(rel);
        tolerances.push(tol);
    }
    // Headline defect is normalized by each rotation's own tolerance.
    let mut r = DefectReport::new("axial-symmetry", worst_ratio, 1.0, pass);
    r.breakdown.insert("defect".into(), defects);
    r.breakdown.insert("tolerance".into(), tolerances);
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositivityOptions {
    /// Allowed negative part relative to `max |u|`.
    pub budget: f64,
    /// Strict positivity is required on `|x′|_∞ <= frac·L_tan`, `0 < xn <= frac·L_nor`.
    pub interior_fraction: f64,
}

impl Default for PositivityOptions {
    fn default() -> Self {
        Self { budget: 1e-9, interior_fraction: 0.5 }
    }
}

/// Minimum of `u` and of its trace; strict positivity on interior samples.
pub fn check_positivity(u: &Field, data_nonnegative: bool, opts: &PositivityOptions) -> DefectReport {
    if !data_nonnegative {
        return DefectReport::skipped("positivity", "boundary data is signed");
    }
    let scale = u.max_abs();
    let g = &u.grid;
    let m_nor = g.nor.m;
    let min_u = u.min();
    let mut min_trace = f64::INFINITY;
    let mut min_interior = f64::INFINITY;
    for i in 0..u.times.len() {
        let s = u.slice(i);
        for p in 0..g.tan.len() {
            min_trace = min_trace.min(s[p * m_nor]);
            let x = g.tan.point(p);
            if x.iter().any(|v| v.abs() > opts.interior_fraction * g.tan.half_width) {
                continue;
            }
            for (k, &xn) in g.nor.nodes().iter().enumerate() {
                if xn > 0.0 && xn <= opts.interior_fraction * g.nor.extent {
                    min_interior = min_interior.min(s[p * m_nor + k]);
                }
            }
        }
    }
    let defect = if scale > 0.0 { (-min_u).max(0.0) / scale } else { 0.0 };
    let strict = scale == 0.0 || min_interior > 0.0;
    let mut r = DefectReport::new("positivity", defect, opts.budget, defect <= opts.budget && strict);
    r.breakdown.insert("min_u".into(), vec![min_u]);
    r.breakdown.insert("min_trace".into(), vec![min_trace]);
    r.breakdown.insert("min_interior".into(), vec![min_interior]);
    r
}

/// `exp(-1 / (1 - |x - c|²/R²))` inside the ball, zero outside.
pub fn smooth_test_function(grid: &TangentialGrid, center: &[f64], radius: f64) -> BoundaryField {
    BoundaryField::from_fn(grid.clone(), |x| {
        let s = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (radius * radius);
        if s < 1.0 {
            (-1.0 / (1.0 - s)).exp()
        } else {
            0.0
        }
    })
}

pub fn default_test_functions(grid: &TangentialGrid) -> Vec<BoundaryField> {
    let d = grid.dim;
    let mut off = vec![0.0; d];
    off[0] = 1.0;
    vec![smooth_test_function(grid, &vec![0.0; d], 2.0), smooth_test_function(grid, &off, 1.5)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceOptions {
    /// `e(t_min) < tolerance·|⟨φ, ψ⟩| + floor`.
    pub tolerance: f64,
    pub floor: f64,
    pub nodes: usize,
    /// Lower bound on the fitted decay exponent, if any.
    pub min_exponent: Option<f64>,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { tolerance: 0.05, floor: 1e-12, nodes: 5, min_exponent: None }
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// `e(t) = |⟨u(·,0,t), ψ⟩ - ⟨φ, ψ⟩|` on the smallest time nodes.
pub fn check_trace_convergence(
    u0: &BoundaryField,
    phi: &BoundaryField,
    test_functions: &[BoundaryField],
    opts: &TraceOptions,
) -> Result<DefectReport> {
    let times = u0.times.as_ref().ok_or_else(|| invalid("trace convergence needs a trace history"))?;
    if opts.nodes < 2 || opts.nodes > times.len() {
        return Err(invalid("trace convergence needs between 2 and m_t nodes"));
    }
    let t = &times.nodes()[..opts.nodes];
    let mut pass = true;
    let mut worst = 0.0f64;
    let mut r = DefectReport::new("trace-convergence", 0.0, opts.tolerance, true);
    r.breakdown.insert("t".into(), t.to_vec());
    let mut exponents = Vec::new();
    for (id, psi) in test_functions.iter().enumerate() {
        let target = crate::morrey::duality_pairing(phi, psi)?;
        let e: Vec<f64> = (0..opts.nodes)
            .map(|i| Ok((duality_pairing_at(u0, i, psi)? - target).abs()))
            .collect::<Result<_>>()?;
        let allowed = opts.tolerance * target.abs() + opts.floor;
        let negligible = e.iter().all(|&v| v <= opts.floor);
        let decreasing = negligible || e.windows(2).all(|w| w[0] < w[1]);
        let small = e[0] < allowed;
        pass &= decreasing && small;
        if !negligible {
            let k = log_log_slope(t, &e);
            exponents.push(k);
            if let Some(min) = opts.min_exponent {
                pass &= k >= min;
            }
        }
        worst = worst.max(e[0] / allowed);
        r.breakdown.insert(format!("psi{id}:e"), e);
    }
    r.breakdown.insert("exponent".into(), exponents);
    r.defect = worst;
    r.tolerance = 1.0;
    r.pass = pass;
    r.status = if pass { Status::Pass } else { Status::Fail };
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityOptions {
    /// Pass requires `D(t_max) < ratio · max_t D(t)`.
    pub ratio: f64,
    /// Number of largest nodes on which `D` must decrease.
    pub tail_nodes: usize,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self { ratio: 0.5, tail_nodes: 3 }
    }
}

/// Solves with `φ` and `φ + a` and tracks `D(t) = ‖u - v‖` in the per-time norm.
pub fn stability_experiment(
    solver: &Solver<'_>,
    phi: &BoundaryField,
    a: &BoundaryField,
    opts: &StabilityOptions,
) -> Result<(DefectReport, SolutionRecord, SolutionRecord)> {
    let invalid_run = |e: Error| Error::Precondition(format!("stability experiment invalid: {e}"));
    let u = solver.solve(phi).map_err(invalid_run)?;
    let mut perturbed = phi.axpby(1.0, a, 1.0)?;
    perturbed.exterior = phi.exterior;
    perturbed.singularity = phi.singularity;
    let v = solver.solve(&perturbed).map_err(invalid_run)?;
    if !u.converged || !v.converged {
        return Err(Error::Precondition("stability experiment invalid: a run did not converge".into()));
    }
    let norms = solver.norms();
    let d: Vec<f64> = norms.per_time(&v.u.axpby(1.0, &u.u, -1.0)?)?.iter().map(|p| p.total()).collect();
    let mut a0 = a.clone();
    a0.exterior = Some(crate::fields::Exterior::Constant { value: 0.0 });
    let lin: Vec<f64> = norms.per_time(&solver.linear_part(&a0)?)?.iter().map(|p| p.total()).collect();
    let max = d.iter().fold(0.0f64, |m, &v| m.max(v));
    let last = *d.last().expect("time grid is nonempty");
    let k = opts.tail_nodes.clamp(2, d.len());
    let tail = &d[d.len() - k..];
    let zero = max == 0.0;
    let decreasing = zero || tail.windows(2).all(|w| w[1] < w[0]);
    let small = zero || last < opts.ratio * max;
    let defect = if zero { 0.0 } else { last / max };
    let mut r = DefectReport::new("stability", defect, opts.ratio, decreasing && small);
    r.breakdown.insert("t".into(), u.u.times.nodes().to_vec());
    r.breakdown.insert("D".into(), d);
    r.breakdown.insert("linear".into(), lin);
    Ok((r, u, v))
}
