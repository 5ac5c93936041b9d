//! Morrey norm estimation, Hölder and Riesz probes, duality pairings and the
//! dyadic-annulus block-space upper bound.
//!
//! The Morrey norm `sup_{x0, r} r^{-μ/q} ‖f‖_{L^q(Ω_r(x0))}` is replaced by the
//! maximum over a finite family of centers and a geometric radius ladder, so
//! every estimate is a lower bound of the (discrete) norm. Balls are open:
//! a node belongs to `Ω_r(x0)` when `|x - x0| < r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{random_bumps, Bump};
use crate::error::{invalid, Result};
use crate::fields::{quadrature_weights, BoundaryField, Field, HalfSpaceGrid, PowerSingularity, TangentialGrid};
use crate::par::par_map;
use crate::quadrature::{integrate_box, singular_box_integral};
use crate::report::ProbeReport;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Domain {
    HalfSpace,
    Boundary,
}

/// Morrey index `(q, μ)` on a `d`-dimensional domain; `q = ∞` means `L^∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MorreySpec {
    pub q: f64,
    pub mu: f64,
    pub d: usize,
    pub domain: Domain,
}

impl MorreySpec {
    pub fn new(q: f64, mu: f64, d: usize, domain: Domain) -> Result<Self> {
        if !(q >= 1.0) {
            return Err(invalid(format!("Morrey exponent q = {q} must be at least 1")));
        }
        if !(mu >= 0.0 && mu < d as f64) {
            return Err(invalid(format!("Morrey parameter mu = {mu} must lie in [0, {d})")));
        }
        Ok(Self { q, mu, d, domain })
    }

    pub fn boundary(q: f64, mu: f64, d: usize) -> Result<Self> {
        Self::new(q, mu, d, Domain::Boundary)
    }

    pub fn half_space(q: f64, mu: f64, n: usize) -> Result<Self> {
        Self::new(q, mu, n, Domain::HalfSpace)
    }
}

/// Which centers and radii the estimator tries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPolicy {
    pub n_radii: usize,
    /// Centers are the nodes whose every axis index is a multiple of this.
    pub center_stride: usize,
    /// Defaults to the smallest grid spacing.
    pub r_min: Option<f64>,
    /// Defaults to twice the tangential half-width.
    pub r_max: Option<f64>,
    pub extra_centers: Vec<Vec<f64>>,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self { n_radii: 16, center_stride: 2, r_min: None, r_max: None, extra_centers: Vec::new() }
    }
}

impl SamplingPolicy {
    /// A policy whose centers and radii contain this one's.
    pub fn refine(&self) -> Self {
        Self {
            n_radii: 2 * self.n_radii - 1,
            center_stride: if self.center_stride.is_multiple_of(2) { self.center_stride / 2 } else { 1 },
            ..self.clone()
        }
    }

    pub fn with_center(mut self, c: Vec<f64>) -> Self {
        self.extra_centers.push(c);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub value: f64,
    pub centers_tried: usize,
    pub radii_tried: usize,
    pub argmax: (Vec<f64>, f64),
}

/// Nodes, quadrature weights and lattice indices of a grid.
#[derive(Clone, Debug)]
pub struct PointSet {
    pub dim: usize,
    pub domain: Domain,
    coords: Vec<f64>,
    weights: Vec<f64>,
    lattice: Vec<u32>,
    min_spacing: f64,
    half_width: f64,
    /// Tangential spacing of a boundary grid, for exact singular cells.
    cell: Option<f64>,
}

impl PointSet {
    pub fn boundary(grid: &TangentialGrid) -> Self {
        let d = grid.dim;
        let mut coords = Vec::with_capacity(grid.len() * d);
        let mut lattice = Vec::with_capacity(grid.len() * d);
        let mut idx = vec![0; d];
        for j in 0..grid.len() {
            grid.unravel(j, &mut idx);
            coords.extend(idx.iter().map(|&i| grid.coord(i)));
            lattice.extend(idx.iter().map(|&i| (i as i64 - (grid.m / 2) as i64).unsigned_abs() as u32));
        }
        Self {
            dim: d,
            domain: Domain::Boundary,
            coords,
            weights: grid.weights(),
            lattice,
            min_spacing: grid.spacing(),
            half_width: grid.half_width,
            cell: Some(grid.spacing()),
        }
    }

    pub fn half_space(grid: &HalfSpaceGrid) -> Self {
        let d = grid.n;
        let mut coords = Vec::with_capacity(grid.len() * d);
        let mut lattice = Vec::with_capacity(grid.len() * d);
        let mut idx = vec![0; d - 1];
        for t in 0..grid.tan.len() {
            grid.tan.unravel(t, &mut idx);
            for (k, &xn) in grid.nor.nodes().iter().enumerate() {
                coords.extend(idx.iter().map(|&i| grid.tan.coord(i)));
                coords.push(xn);
                lattice.extend(idx.iter().map(|&i| (i as i64 - (grid.tan.m / 2) as i64).unsigned_abs() as u32));
                lattice.push(k as u32);
            }
        }
        Self {
            dim: d,
            domain: Domain::HalfSpace,
            coords,
            weights: quadrature_weights(grid),
            lattice,
            min_spacing: grid.tan.spacing().min(grid.nor.first_spacing()),
            half_width: grid.tan.half_width,
            cell: None,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.coords[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn dist2(&self, j: usize, c: &[f64]) -> f64 {
        self.point(j).iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
    }

    /// `w_j |f_j|^q`, with exact cell integrals of the power singularity near
    /// the origin when one is known.
    fn powered(&self, values: &[f64], q: f64, sing: Option<&PowerSingularity>) -> Vec<f64> {
        let mut g: Vec<f64> = values.iter().zip(&self.weights).map(|(v, w)| w * v.abs().powf(q)).collect();
        if let (Some(s), Some(h)) = (sing, self.cell) {
            let beta = s.k * q;
            let amp = s.amplitude.abs().powf(q);
            let zone = 2.0 * h * (1.0 + 1e-9);
            let origin = vec![0.0; self.dim];
            for (j, gj) in g.iter_mut().enumerate() {
                let x = self.point(j);
                if x.iter().any(|v| v.abs() > zone) || self.weights[j] < h.powi(self.dim as i32) * (1.0 - 1e-9) {
                    continue;
                }
                let lo: Vec<f64> = x.iter().map(|v| v - 0.5 * h).collect();
                let hi: Vec<f64> = x.iter().map(|v| v + 0.5 * h).collect();
                let contains = x.iter().all(|v| v.abs() < 0.5 * h);
                *gj = if contains {
                    if beta >= self.dim as f64 {
                        f64::INFINITY
                    } else {
                        amp * singular_box_integral(&origin, &lo, &hi, beta)
                    }
                } else {
                    amp * integrate_box(&lo, &hi, &origin, 0.5 * h, 8, |y| {
                        y.iter().map(|v| v * v).sum::<f64>().powf(-0.5 * beta)
                    })
                };
            }
        }
        g
    }
}

/// Counts of bins per center are stored when `centers × nodes` is below this.
const BIN_TABLE_LIMIT: usize = 80_000_000;

pub struct MorreyEstimator {
    set: PointSet,
    radii: Vec<f64>,
    centers: Vec<Vec<f64>>,
    /// For each (center, node): index of the smallest radius whose open ball
    /// contains the node, or `u8::MAX`.
    bins: Option<Vec<u8>>,
}

impl std::fmt::Debug for MorreyEstimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MorreyEstimator")
            .field("nodes", &self.set.len())
            .field("centers", &self.centers.len())
            .field("radii", &self.radii.len())
            .finish()
    }
}

impl MorreyEstimator {
    pub fn new(set: PointSet, policy: &SamplingPolicy) -> Result<Self> {
        if policy.n_radii < 1 || policy.n_radii > 250 || policy.center_stride < 1 {
            return Err(invalid("sampling policy needs 1..=250 radii and a positive stride"));
        }
        let r_min = policy.r_min.unwrap_or(set.min_spacing);
        let r_max = policy.r_max.unwrap_or(2.0 * set.half_width);
        if !(r_min > 0.0 && r_max >= r_min) {
            return Err(invalid("radius ladder needs 0 < r_min <= r_max"));
        }
        let radii: Vec<f64> = if policy.n_radii == 1 {
            vec![r_min]
        } else {
            let span = (r_max / r_min).ln();
            (0..policy.n_radii)
                .map(|j| r_min * (span * j as f64 / (policy.n_radii - 1) as f64).exp())
                .collect()
        };
        let s = policy.center_stride as u32;
        let mut centers: Vec<Vec<f64>> = (0..set.len())
            .filter(|&j| set.lattice[j * set.dim..(j + 1) * set.dim].iter().all(|&i| i % s == 0))
            .map(|j| set.point(j).to_vec())
            .collect();
        let origin = vec![0.0; set.dim];
        for c in std::iter::once(origin).chain(policy.extra_centers.iter().cloned()) {
            if c.len() != set.dim {
                return Err(invalid("extra center has the wrong dimension"));
            }
            if !centers.contains(&c) {
                centers.push(c);
            }
        }
        let mut est = Self { set, radii, centers, bins: None };
        if est.centers.len() * est.set.len() <= BIN_TABLE_LIMIT {
            let n = est.set.len();
            let rows = par_map(est.centers.len(), |c| est.bin_row(&est.centers[c]));
            let mut bins = Vec::with_capacity(est.centers.len() * n);
            rows.into_iter().for_each(|r| bins.extend(r));
            est.bins = Some(bins);
        }
        Ok(est)
    }

    pub fn set(&self) -> &PointSet {
        &self.set
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    fn bin_row(&self, c: &[f64]) -> Vec<u8> {
        let r2: Vec<f64> = self.radii.iter().map(|r| r * r).collect();
        (0..self.set.len())
            .map(|j| {
                let d2 = self.set.dist2(j, c);
                r2.iter().position(|&v| d2 < v).map_or(u8::MAX, |b| b as u8)
            })
            .collect()
    }

    fn check(&self, values: &[f64], spec: &MorreySpec) -> Result<()> {
        if values.len() != self.set.len() {
            return Err(invalid("field length does not match the estimator grid"));
        }
        if spec.d != self.set.dim || spec.domain != self.set.domain {
            return Err(invalid(format!(
                "spec (d = {}, {:?}) does not match the grid (d = {}, {:?})",
                spec.d, spec.domain, self.set.dim, self.set.domain
            )));
        }
        Ok(())
    }

    pub fn estimate(&self, values: &[f64], spec: &MorreySpec) -> Result<NormEstimate> {
        Ok(self.estimate_many(values, std::slice::from_ref(spec), None)?.remove(0))
    }

    /// Several specs of one field in a single pass over the bin table.
    pub fn estimate_many(
        &self,
        values: &[f64],
        specs: &[MorreySpec],
        sing: Option<&PowerSingularity>,
    ) -> Result<Vec<NormEstimate>> {
        for s in specs {
            self.check(values, s)?;
        }
        let nb = self.radii.len();
        let argmax_node = values
            .iter()
            .enumerate()
            .fold((0, -1.0), |(bj, bv), (j, v)| if v.abs() > bv { (j, v.abs()) } else { (bj, bv) })
            .0;
        let argmax_center = self.set.point(argmax_node).to_vec();
        let dynamic = !self.centers.contains(&argmax_center);
        let n_centers = self.centers.len() + dynamic as usize;

        let finite: Vec<usize> = (0..specs.len()).filter(|&s| specs[s].q.is_finite()).collect();
        let powered: Vec<Vec<f64>> = finite.iter().map(|&s| self.set.powered(values, specs[s].q, sing)).collect();
        let n = self.set.len();
        // Ball sums per (center, spec, radius).
        let sums: Vec<Vec<f64>> = par_map(n_centers, |c| {
            let mut acc = vec![0.0; finite.len() * nb];
            let owned;
            let row: &[u8] = if c < self.centers.len() {
                match &self.bins {
                    Some(b) => &b[c * n..(c + 1) * n],
                    None => {
                        owned = self.bin_row(&self.centers[c]);
                        &owned
                    }
                }
            } else {
                owned = self.bin_row(&argmax_center);
                &owned
            };
            for (j, &b) in row.iter().enumerate() {
                if b != u8::MAX {
                    for (s, g) in powered.iter().enumerate() {
                        acc[s * nb + b as usize] += g[j];
                    }
                }
            }
            for s in 0..finite.len() {
                for b in 1..nb {
                    acc[s * nb + b] += acc[s * nb + b - 1];
                }
            }
            acc
        });

        let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut out = Vec::with_capacity(specs.len());
        for (s, spec) in specs.iter().enumerate() {
            if !spec.q.is_finite() {
                out.push(NormEstimate {
                    value: sup,
                    centers_tried: n_centers,
                    radii_tried: nb,
                    argmax: (argmax_center.clone(), self.radii[0]),
                });
                continue;
            }
            let fi = finite.iter().position(|&x| x == s).expect("finite spec index");
            let mut best = (0.0, 0usize, 0usize);
            for (c, acc) in sums.iter().enumerate() {
                for b in 0..nb {
                    let v = self.radii[b].powf(-spec.mu / spec.q) * acc[fi * nb + b].powf(1.0 / spec.q);
                    if v > best.0 || v.is_nan() {
                        best = (v, c, b);
                    }
                }
            }
            let center = if best.1 < self.centers.len() { self.centers[best.1].clone() } else { argmax_center.clone() };
            out.push(NormEstimate {
                value: best.0,
                centers_tried: n_centers,
                radii_tried: nb,
                argmax: (center, self.radii[best.2]),
            });
        }
        Ok(out)
    }
}

/// The per-ball functional `r^{-μ/q} (Σ_{|x_j - x0| < r} w_j |f_j|^q)^{1/q}`.
pub fn morrey_functional(
    set: &PointSet,
    values: &[f64],
    spec: &MorreySpec,
    center: &[f64],
    r: f64,
    sing: Option<&PowerSingularity>,
) -> f64 {
    let g = set.powered(values, spec.q, sing);
    let s: f64 = (0..set.len()).filter(|&j| set.dist2(j, center) < r * r).map(|j| g[j]).sum();
    r.powf(-spec.mu / spec.q) * s.powf(1.0 / spec.q)
}

#[derive(Clone, Copy, Debug)]
pub enum FieldRef<'a> {
    Boundary(&'a BoundaryField, usize),
    HalfSpace(&'a Field, usize),
}

/// One-off estimate of a boundary or half-space slice.
pub fn morrey_norm(f: FieldRef<'_>, spec: &MorreySpec, policy: &SamplingPolicy) -> Result<NormEstimate> {
    match f {
        FieldRef::Boundary(b, i) => {
            let est = MorreyEstimator::new(PointSet::boundary(&b.grid), policy)?;
            Ok(est.estimate_many(b.slice(i), std::slice::from_ref(spec), b.singularity.as_ref())?.remove(0))
        }
        FieldRef::HalfSpace(u, i) => {
            let est = MorreyEstimator::new(PointSet::half_space(&u.grid), policy)?;
            est.estimate(u.slice(i), spec)
        }
    }
}

fn holder_compatible(s: &[MorreySpec; 3]) -> Result<()> {
    let d = s[0].d as f64;
    let inv = 1.0 / s[2].q - 1.0 / s[0].q - 1.0 / s[1].q;
    let scale = (d - s[2].mu) / s[2].q - (d - s[0].mu) / s[0].q - (d - s[1].mu) / s[1].q;
    if s.iter().any(|x| x.d != s[0].d || x.domain != s[0].domain) || inv.abs() > 1e-9 || scale.abs() > 1e-9 {
        return Err(invalid("exponents violate 1/p3 = 1/p1 + 1/p2 or the matching scaling relation"));
    }
    Ok(())
}

/// `‖fg‖_{(p3,μ3)} / (‖f‖_{(p1,μ1)} ‖g‖_{(p2,μ2)})`, 0 when either factor vanishes.
pub fn holder_ratio(est: &MorreyEstimator, f: &[f64], g: &[f64], specs: &[MorreySpec; 3]) -> Result<f64> {
    holder_compatible(specs)?;
    let fg: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    let nf = est.estimate(f, &specs[0])?.value;
    let ng = est.estimate(g, &specs[1])?.value;
    if nf == 0.0 || ng == 0.0 {
        return Ok(0.0);
    }
    Ok(est.estimate(&fg, &specs[2])?.value / (nf * ng))
}

/// Hölder inequality over `trials` seeded pairs of random bump sums on a
/// boundary grid. Passes when every ratio is at most `1 + slack`.
pub fn holder_probe(
    grid: &TangentialGrid,
    specs: [MorreySpec; 3],
    trials: usize,
    seed: u64,
    policy: &SamplingPolicy,
    slack: f64,
) -> Result<ProbeReport> {
    holder_compatible(&specs)?;
    let est = MorreyEstimator::new(PointSet::boundary(grid), policy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = grid.spacing();
    let l = grid.half_width;
    let mut report = ProbeReport::new("holder", slack);
    for t in 0..trials {
        let bf = random_bumps(&mut rng, grid.dim, 5, (2.0 * h, 0.5 * l), 0.5 * l, true);
        let bg = random_bumps(&mut rng, grid.dim, 5, (2.0 * h, 0.5 * l), 0.5 * l, true);
        let f = BoundaryField::from_fn(grid.clone(), |x| bf.iter().map(|b| b.eval(x)).sum());
        let g = BoundaryField::from_fn(grid.clone(), |x| bg.iter().map(|b| b.eval(x)).sum());
        report.observe(t, holder_ratio(&est, &f.values, &g.values, &specs)?);
    }
    report.pass = report.max_ratio.is_finite() && report.max_ratio <= 1.0 + slack;
    Ok(report)
}

/// Grid on which a Riesz probe runs: boundary to boundary (the `R^d`
/// estimate) or half-space to boundary (the trace estimate).
#[derive(Clone, Debug)]
pub enum RieszSetting {
    Boundary(TangentialGrid),
    Trace(HalfSpaceGrid),
}

fn riesz_relation(setting: &RieszSetting, gamma: f64, src: &MorreySpec, dst: &MorreySpec) -> Result<()> {
    let bad = |m: &str| Err(invalid(format!("Riesz exponent relation violated: {m}")));
    if src.mu != dst.mu {
        return bad("source and target must share mu");
    }
    let mu = src.mu;
    match setting {
        RieszSetting::Boundary(g) => {
            let d = g.dim as f64;
            if src.domain != Domain::Boundary || dst.domain != Domain::Boundary || src.d != g.dim || dst.d != g.dim {
                return bad("both specs must live on the boundary grid");
            }
            let expected = (d - mu) / src.q - (d - mu) / dst.q;
            if !(gamma > 0.0 && gamma < d) || (gamma - expected).abs() > 1e-9 {
                return bad("gamma must equal (d-mu)/p1 - (d-mu)/p2 and lie in (0, d)");
            }
        }
        RieszSetting::Trace(g) => {
            let n = g.n as f64;
            if src.domain != Domain::HalfSpace || dst.domain != Domain::Boundary || src.d != g.n || dst.d != g.n - 1 {
                return bad("source must be the half-space and target the boundary");
            }
            let expected = (n - mu) / src.q - (n - mu - 1.0) / dst.q;
            if !(gamma > 0.0 && gamma < n) || (gamma - expected).abs() > 1e-9 {
                return bad("gamma must equal (n-mu)/p1 - (n-mu-1)/p2 and lie in (0, n)");
            }
            if !(mu < n - 1.0) || !(gamma * src.q > 1.0) {
                return bad("need mu < n-1 and gamma*p1 > 1");
            }
        }
    }
    Ok(())
}

/// `‖I_γ f‖_dst / ‖f‖_src`; `None` when `f` vanishes.
pub fn riesz_ratio(
    setting: &RieszSetting,
    values: &[f64],
    gamma: f64,
    src: &MorreySpec,
    dst: &MorreySpec,
    policy: &SamplingPolicy,
) -> Result<Option<f64>> {
    riesz_relation(setting, gamma, src, dst)?;
    let (src_norm, dst_norm) = match setting {
        RieszSetting::Boundary(g) => {
            let out = crate::operators::riesz_boundary(g, values, gamma)?;
            let est = MorreyEstimator::new(PointSet::boundary(g), policy)?;
            (est.estimate(values, src)?.value, est.estimate(&out, dst)?.value)
        }
        RieszSetting::Trace(g) => {
            let out = crate::operators::riesz_half_space(g, values, gamma, true)?;
            let s = MorreyEstimator::new(PointSet::half_space(g), policy)?.estimate(values, src)?.value;
            let d = MorreyEstimator::new(PointSet::boundary(&g.tan), policy)?.estimate(&out, dst)?.value;
            (s, d)
        }
    };
    Ok((src_norm > 0.0).then(|| dst_norm / src_norm))
}

/// Ratios `‖I_γ f_λ‖ / ‖f_λ‖` over the dilations `f_λ(x) = f(λx)` of a bump.
/// `max_ratio` is the empirical constant; the pass criterion is the spread
/// `max/min - 1 <= tolerance`.
#[allow(clippy::too_many_arguments)]
pub fn riesz_probe(
    setting: &RieszSetting,
    base: &Bump,
    dilations: &[f64],
    gamma: f64,
    src: &MorreySpec,
    dst: &MorreySpec,
    policy: &SamplingPolicy,
    tolerance: f64,
) -> Result<ProbeReport> {
    let name = match setting {
        RieszSetting::Boundary(_) => "riesz",
        RieszSetting::Trace(_) => "riesz-trace",
    };
    let mut report = ProbeReport::new(name, tolerance);
    let mut min_ratio = f64::INFINITY;
    let mut skipped = 0usize;
    for (i, &lam) in dilations.iter().enumerate() {
        let f = |x: &[f64]| {
            let y: Vec<f64> = x.iter().map(|v| lam * v).collect();
            base.eval(&y)
        };
        let values: Vec<f64> = match setting {
            RieszSetting::Boundary(g) => (0..g.len()).map(|j| f(&g.point(j))).collect(),
            RieszSetting::Trace(g) => (0..g.len()).map(|j| f(&g.point(j))).collect(),
        };
        match riesz_ratio(setting, &values, gamma, src, dst, policy)? {
            Some(r) => {
                report.observe(i, r);
                report.note(format!("ratio_lambda_{lam}"), r);
                min_ratio = min_ratio.min(r);
            }
            None => skipped += 1,
        }
    }
    report.note("not_applicable", skipped as f64);
    if report.trials == 0 {
        report.pass = true;
        return Ok(report);
    }
    let spread = report.max_ratio / min_ratio - 1.0;
    report.note("min_ratio", min_ratio);
    report.note("spread", spread);
    report.pass = report.max_ratio.is_finite() && spread <= tolerance;
    Ok(report)
}

/// Conjugate exponent.
pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else if p.is_infinite() {
        1.0
    } else {
        p / (p - 1.0)
    }
}

/// A `(q′, μ)`-block on a boundary grid: supported in the open ball
/// `B(center, radius)` with `R^{μ/q} ‖A‖_{L^{q′}} <= 1`, `q` the conjugate of `q′`.
#[derive(Clone, Debug)]
pub struct Block {
    pub center: Vec<f64>,
    pub radius: f64,
    pub q_prime: f64,
    pub mu: f64,
    pub values: BoundaryField,
}

impl Block {
    /// `profile` restricted to the ball and scaled to unit block norm.
    pub fn normalized(
        grid: &TangentialGrid,
        center: Vec<f64>,
        radius: f64,
        q_prime: f64,
        mu: f64,
        profile: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        if !(q_prime > 1.0) || !(radius > 0.0) {
            return Err(invalid("a block needs q′ > 1 and a positive radius"));
        }
        let mut values = BoundaryField::from_fn(grid.clone(), |x| {
            let r2: f64 = x.iter().zip(&center).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 < radius * radius {
                profile(x)
            } else {
                0.0
            }
        });
        let mut block = Self { center, radius, q_prime, mu, values: values.clone() };
        let norm = block.norm_constraint();
        if !(norm > 0.0) {
            return Err(invalid("block profile vanishes on its support ball"));
        }
        values.values.iter_mut().for_each(|v| *v /= norm);
        block.values = values;
        Ok(block)
    }

    /// `R^{μ/q} ‖A‖_{L^{q′}}`, at most 1 for a block.
    pub fn norm_constraint(&self) -> f64 {
        let q = conjugate(self.q_prime);
        let w = self.values.grid.weights();
        let s: f64 = self.values.values.iter().zip(&w).map(|(v, w)| w * v.abs().powf(self.q_prime)).sum();
        self.radius.powf(self.mu / q) * s.powf(1.0 / self.q_prime)
    }
}

/// The constructive bound `Σ_k α_k` and its terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockBound {
    pub value: f64,
    pub terms: Vec<f64>,
    pub divergent: bool,
}

/// Upper bound of the `H_{q′,μ}` norm of `g` (time index 0) from the
/// decomposition over `B_1 = B(x0, 2R)`, `B_k = B(x0, 2^k R) \ B(x0, 2^{k-1} R)`:
/// each `g·χ_{B_k} / α_k` with `α_k = (2^k R)^{μ/q} ‖g‖_{L^{q′}(B_k)}` is a block.
/// When `g` is supported in `B(x0, R)` the one-block decomposition is also
/// valid and the smaller of the two is returned.
pub fn block_norm_upper_bound(g: &BoundaryField, q_prime: f64, mu: f64, x0: &[f64], radius: f64) -> Result<BlockBound> {
    if !(q_prime > 1.0) || !(radius > 0.0) || x0.len() != g.grid.dim {
        return Err(invalid("block bound needs q′ > 1, R > 0 and a center on the grid"));
    }
    let q = conjugate(q_prime);
    let grid = &g.grid;
    let w = grid.weights();
    let vals = g.slice(0);
    let mut shells: Vec<f64> = Vec::new();
    let mut inside_r = 0.0;
    let mut outside_r = false;
    for j in 0..grid.len() {
        if vals[j] == 0.0 {
            continue;
        }
        let x = grid.point(j);
        let dist = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let c = w[j] * vals[j].abs().powf(q_prime);
        if dist < radius {
            inside_r += c;
        } else {
            outside_r = true;
        }
        // k = 1 for dist < 2R, else the k with 2^{k-1} R <= dist < 2^k R.
        let mut k = 1usize;
        while dist >= radius * 2f64.powi(k as i32) {
            k += 1;
        }
        if shells.len() < k {
            shells.resize(k, 0.0);
        }
        shells[k - 1] += c;
    }
    let terms: Vec<f64> = shells
        .iter()
        .enumerate()
        .map(|(i, s)| (radius * 2f64.powi(i as i32 + 1)).powf(mu / q) * s.powf(1.0 / q_prime))
        .collect();
    let total: f64 = terms.iter().sum();
    // Shells clipped by the grid edge are not comparable, so the decay test
    // looks at the outermost shells that fit inside the grid.
    let reach = grid.half_width - x0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let full = terms.iter().enumerate().take_while(|(i, _)| radius * 2f64.powi(*i as i32 + 1) <= reach).count();
    let nonzero: Vec<f64> = terms[..full].iter().copied().filter(|&t| t > 0.0).collect();
    // The tail is unresolved when the outermost shells stop decaying.
    let divergent = !total.is_finite()
        || (nonzero.len() >= 2 && {
            let (a, b) = (nonzero[nonzero.len() - 2], nonzero[nonzero.len() - 1]);
            b >= a && b > 1e-3 * total
        });
    let mut value = if divergent { f64::INFINITY } else { total };
    if !outside_r {
        value = value.min(radius.powf(mu / q) * inside_r.powf(1.0 / q_prime));
    }
    Ok(BlockBound { value, terms, divergent })
}

/// For seeded blocks `A`, the bound of `P_t * A - A` along decreasing `t`.
/// `max_ratio` is the largest ratio of consecutive bounds, so the bound
/// decreases along `ts` exactly when `max_ratio < 1`.
pub fn block_identity_probe(
    grid: &TangentialGrid,
    q_prime: f64,
    mu: f64,
    blocks: usize,
    ts: &[f64],
    seed: u64,
) -> Result<ProbeReport> {
    if ts.len() < 2 || ts.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("block probe needs at least two strictly decreasing times"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = grid.spacing();
    let l = grid.half_width;
    let mut report = ProbeReport::new("block-approximate-identity", 1.0);
    for b in 0..blocks {
        let center: Vec<f64> = (0..grid.dim).map(|_| 0.25 * l * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let radius = ((2.0 * h).ln() + rng.gen::<f64>() * ((0.25 * l).ln() - (2.0 * h).ln())).exp();
        let bumps = random_bumps(&mut rng, grid.dim, 3, (0.5 * radius, 2.0 * radius), 0.5 * radius, false);
        let shifted: Vec<Bump> = bumps
            .into_iter()
            .map(|mut bump| {
                bump.center.iter_mut().zip(&center).for_each(|(c, x)| *c += x);
                bump
            })
            .collect();
        let block = Block::normalized(grid, center.clone(), radius, q_prime, mu, |x| {
            shifted.iter().map(|bump| bump.eval(x)).sum()
        })?;
        let mut bounds = Vec::with_capacity(ts.len());
        for &t in ts {
            let smoothed = crate::operators::poisson_boundary(grid, &block.values.values, t)?;
            let diff: Vec<f64> = smoothed.iter().zip(&block.values.values).map(|(a, b)| a - b).collect();
            let g = BoundaryField::new(grid.clone(), diff)?;
            let bound = block_norm_upper_bound(&g, q_prime, mu, &center, radius)?;
            report.note(format!("block{b}:t={t}"), bound.value);
            bounds.push(bound.value);
        }
        let worst = bounds.windows(2).map(|w| w[1] / w[0]).fold(0.0f64, f64::max);
        report.observe(b, worst);
    }
    report.pass = report.trials > 0 && report.max_ratio.is_finite() && report.max_ratio < 1.0;
    Ok(report)
}

/// Discrete pairing `Σ w f ψ` at time index 0 of both fields.
pub fn duality_pairing(f: &BoundaryField, psi: &BoundaryField) -> Result<f64> {
    duality_pairing_at(f, 0, psi)
}

pub fn duality_pairing_at(f: &BoundaryField, i: usize, psi: &BoundaryField) -> Result<f64> {
    if f.grid != psi.grid {
        return Err(invalid("pairing requires a shared grid"));
    }
    let w = f.grid.weights();
    Ok(f.slice(i).iter().zip(psi.slice(0)).zip(&w).map(|((a, b), w)| w * a * b).sum())
}
