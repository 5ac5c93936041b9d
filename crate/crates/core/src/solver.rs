//! The weighted norm, the Picard map and the fixed-point iteration.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::random_bumps;
use crate::error::{invalid, Error, Result};
use crate::fields::{trace, BoundaryField, Exterior, Field};
use crate::morrey::{MorreyEstimator, MorreySpec, PointSet, SamplingPolicy};
use crate::operators::Operators;
use crate::params::ExponentSet;
use crate::report::ProbeReport;

/// Floor of the relative-residual denominator.
pub const RESIDUAL_FLOOR: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Ball radius used by the contraction probe; `None` means the weighted
    /// norm of `I1[φ]`.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    /// Relative residual in the weighted norm.
    pub tolerance: f64,
    /// `u ← (1-ω) u + ω Φ(u)`.
    pub relaxation: f64,
    pub policy: SamplingPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { epsilon: None, max_iters: 60, tolerance: 1e-8, relaxation: 1.0, policy: SamplingPolicy::default() }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(invalid("solver tolerance must be positive"));
        }
        if self.max_iters < 1 {
            return Err(invalid("solver needs at least one iteration"));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(invalid("under-relaxation factor must lie in (0, 1]"));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(invalid("epsilon must be positive"));
            }
        }
        Ok(())
    }
}

/// `sup_t ‖u‖_{q0}`, `sup_t t^α ‖u‖_{q1}` and `sup_t t^β ‖u0‖_{q2}` over the time grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct XNorm {
    pub sup_q0: f64,
    pub sup_q1_weighted: f64,
    pub sup_q2_weighted: f64,
    pub total: f64,
}

/// The three weighted components at one time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeNorms {
    pub q0: f64,
    pub q1_weighted: f64,
    pub q2_weighted: f64,
}

impl TimeNorms {
    pub fn total(&self) -> f64 {
        self.q0 + self.q1_weighted + self.q2_weighted
    }
}

/// Morrey estimators for the half-space and the boundary, with the exponents.
#[derive(Debug)]
pub struct NormEngine {
    exps: ExponentSet,
    half: MorreyEstimator,
    bnd: MorreyEstimator,
    specs_half: [MorreySpec; 2],
    spec_bnd: MorreySpec,
}

impl NormEngine {
    pub fn new(ops: &Operators, exps: &ExponentSet, policy: &SamplingPolicy) -> Result<Self> {
        let g = ops.grid();
        let n = g.n;
        if exps.params.n != n {
            return Err(invalid("exponent set and grid disagree on the dimension"));
        }
        let mu = exps.params.mu;
        Ok(Self {
            exps: *exps,
            half: MorreyEstimator::new(PointSet::half_space(g), policy)?,
            bnd: MorreyEstimator::new(PointSet::boundary(&g.tan), policy)?,
            specs_half: [MorreySpec::half_space(exps.q0, mu, n)?, MorreySpec::half_space(exps.q1, mu, n)?],
            spec_bnd: MorreySpec::boundary(exps.q2, mu, n - 1)?,
        })
    }

    pub fn exponents(&self) -> &ExponentSet {
        &self.exps
    }

    /// Weighted components at every time node.
    pub fn per_time(&self, u: &Field) -> Result<Vec<TimeNorms>> {
        let u0 = trace(u);
        u.times
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let h = self.half.estimate_many(u.slice(i), &self.specs_half, None)?;
                let b = self.bnd.estimate(u0.slice(i), &self.spec_bnd)?;
                Ok(TimeNorms {
                    q0: h[0].value,
                    q1_weighted: t.powf(self.exps.alpha) * h[1].value,
                    q2_weighted: t.powf(self.exps.beta) * b.value,
                })
            })
            .collect()
    }

    pub fn x_norm(&self, u: &Field) -> Result<XNorm> {
        Ok(sup_norms(&self.per_time(u)?))
    }
}

pub fn sup_norms(per_time: &[TimeNorms]) -> XNorm {
    let mut x = XNorm::default();
    for p in per_time {
        x.sup_q0 = x.sup_q0.max(p.q0);
        x.sup_q1_weighted = x.sup_q1_weighted.max(p.q1_weighted);
        x.sup_q2_weighted = x.sup_q2_weighted.max(p.q2_weighted);
    }
    x.total = x.sup_q0 + x.sup_q1_weighted + x.sup_q2_weighted;
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iter: usize,
    pub residual: f64,
    /// `‖u^{k+1} - u^k‖ / ‖u^k - u^{k-1}‖`; absent on the first step.
    pub ratio: Option<f64>,
    pub x_norm: XNorm,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SolutionRecord {
    pub u: Field,
    pub u0: BoundaryField,
    pub x_norm: XNorm,
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
    pub log: Vec<IterationRow>,
    pub iterations: usize,
    pub converged: bool,
    /// Weighted norm of the first iterate.
    pub initial_norm: f64,
    /// Largest weighted norm over the iterates.
    pub max_iterate_norm: f64,
}

impl SolutionRecord {
    /// Every iterate stayed in the ball of radius `2 ‖u^1‖`.
    pub fn stayed_in_ball(&self) -> bool {
        self.max_iterate_norm <= 2.0 * self.initial_norm * (1.0 + 1e-12)
    }

    pub fn residuals_nonincreasing(&self) -> bool {
        self.residuals.windows(2).skip(1).all(|w| w[1] <= w[0])
    }

    /// Iteration CSV; wall time is included only when asked for, since it
    /// breaks byte-identical reruns.
    pub fn write_csv(&self, w: &mut impl Write, timing: bool) -> Result<()> {
        let head = "iter,residual,ratio,sup_q0,sup_q1_weighted,sup_q2_weighted,total";
        if timing {
            writeln!(w, "{head},wall_seconds")?;
        } else {
            writeln!(w, "{head}")?;
        }
        for r in &self.log {
            let ratio = r.ratio.map_or(String::new(), |v| format!("{v:e}"));
            let x = &r.x_norm;
            write!(
                w,
                "{},{:e},{},{:e},{:e},{:e},{:e}",
                r.iter, r.residual, ratio, x.sup_q0, x.sup_q1_weighted, x.sup_q2_weighted, x.total
            )?;
            if timing {
                write!(w, ",{:.3}", r.wall_seconds)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `u|u|^{p-1}`.
pub fn power_nonlinearity(v: f64, p: f64) -> f64 {
    v * v.abs().powf(p - 1.0)
}

pub struct Solver<'a> {
    ops: &'a Operators,
    exps: ExponentSet,
    config: SolverConfig,
    norms: NormEngine,
}

impl<'a> Solver<'a> {
    pub fn new(ops: &'a Operators, exps: &ExponentSet, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let norms = NormEngine::new(ops, exps, &config.policy)?;
        Ok(Self { ops, exps: *exps, config, norms })
    }

    pub fn norms(&self) -> &NormEngine {
        &self.norms
    }

    pub fn operators(&self) -> &Operators {
        self.ops
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn linear_part(&self, phi: &BoundaryField) -> Result<Field> {
        self.ops.apply_i1(phi)
    }

    /// `Φ(u) = I1[φ] + I2[N2(u0)] + I3[N1(u)] + I4[N1(u)]` given `I1[φ]`.
    pub fn picard_map(&self, u: &Field, linear: &Field) -> Result<Field> {
        let (n1, n2) = self.nonlinear_sources(u);
        let mut out = linear.clone();
        self.add_nonlinear(&mut out, &n1, &n2)?;
        Ok(out)
    }

    fn nonlinear_sources(&self, u: &Field) -> (Field, BoundaryField) {
        let p = self.exps.params;
        let n1 = u.map(|v| power_nonlinearity(v, p.p1));
        let mut n2 = trace(u).map(|v| power_nonlinearity(v, p.p2));
        n2.exterior = Some(Exterior::Constant { value: 0.0 });
        (n1, n2)
    }

    fn add_nonlinear(&self, out: &mut Field, n1: &Field, n2: &BoundaryField) -> Result<()> {
        for part in [self.ops.apply_i2(n2)?, self.ops.apply_i3(n1)?, self.ops.apply_i4(n1)?] {
            out.values.iter_mut().zip(&part.values).for_each(|(a, b)| *a += b);
        }
        Ok(())
    }

    pub fn solve(&self, phi: &BoundaryField) -> Result<SolutionRecord> {
        let linear = self.linear_part(phi)?;
        self.iterate(&linear, linear.clone())
    }

    /// Picard iteration from an arbitrary first iterate.
    pub fn solve_from(&self, phi: &BoundaryField, first: Field) -> Result<SolutionRecord> {
        let linear = self.linear_part(phi)?;
        self.iterate(&linear, first)
    }

    fn iterate(&self, linear: &Field, first: Field) -> Result<SolutionRecord> {
        if first.grid != *self.ops.grid() || first.times != *self.ops.times() {
            return Err(invalid("first iterate lives on a different grid"));
        }
        let start = Instant::now();
        let omega = self.config.relaxation;
        let mut u = first;
        let mut u_norm = self.norms.x_norm(&u)?;
        let initial_norm = u_norm.total;
        let mut max_iterate_norm = initial_norm;
        let mut residuals = Vec::new();
        let mut ratios = Vec::new();
        let mut log = Vec::new();
        let mut prev_step: Option<f64> = None;
        let mut streak = 0usize;
        for k in 1..=self.config.max_iters {
            let mapped = self.picard_map(&u, linear)?;
            let next = if omega == 1.0 { mapped } else { u.axpby(1.0 - omega, &mapped, omega)? };
            if let Some(bad) = next.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Diverged { iteration: k, reason: format!("non-finite iterate value {bad}") });
            }
            let step = self.norms.x_norm(&next.axpby(1.0, &u, -1.0)?)?.total;
            let residual = step / u_norm.total.max(RESIDUAL_FLOOR);
            let ratio = prev_step.map(|p| if p > 0.0 { step / p } else { 0.0 });
            let next_norm = self.norms.x_norm(&next)?;
            if !next_norm.total.is_finite() || !residual.is_finite() {
                return Err(Error::Diverged { iteration: k, reason: "non-finite weighted norm".into() });
            }
            max_iterate_norm = max_iterate_norm.max(next_norm.total);
            residuals.push(residual);
            if let Some(r) = ratio {
                ratios.push(r);
            }
            log.push(IterationRow {
                iter: k,
                residual,
                ratio,
                x_norm: next_norm,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
            u = next;
            u_norm = next_norm;
            if residual < self.config.tolerance {
                return Ok(self.record(u, u_norm, residuals, ratios, log, k, true, initial_norm, max_iterate_norm));
            }
            match ratio {
                Some(r) if r >= 1.0 => streak += 1,
                _ => streak = 0,
            }
            if streak >= 3 {
                return Err(Error::NoContraction { consecutive: streak, last_ratio: ratio.unwrap_or(f64::NAN) });
            }
            prev_step = Some(step);
        }
        let iters = self.config.max_iters;
        Ok(self.record(u, u_norm, residuals, ratios, log, iters, false, initial_norm, max_iterate_norm))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        u: Field,
        x_norm: XNorm,
        residuals: Vec<f64>,
        ratios: Vec<f64>,
        log: Vec<IterationRow>,
        iterations: usize,
        converged: bool,
        initial_norm: f64,
        max_iterate_norm: f64,
    ) -> SolutionRecord {
        let u0 = trace(&u);
        SolutionRecord { u, u0, x_norm, residuals, ratios, log, iterations, converged, initial_norm, max_iterate_norm }
    }

    /// `Φ(u) - Φ(v)`, which does not involve the data.
    pub fn map_difference(&self, u: &Field, v: &Field) -> Result<Field> {
        let (nu1, nu2) = self.nonlinear_sources(u);
        let (nv1, nv2) = self.nonlinear_sources(v);
        let n1 = nu1.axpby(1.0, &nv1, -1.0)?;
        let mut n2 = nu2.axpby(1.0, &nv2, -1.0)?;
        n2.exterior = Some(Exterior::Constant { value: 0.0 });
        let mut out = Field::zeros(u.grid.clone(), u.times.clone());
        self.add_nonlinear(&mut out, &n1, &n2)?;
        Ok(out)
    }

    /// Seeded pairs `u, v = I1[φ] + ε·w` with `‖w‖ ≤ 1`, so both lie in the
    /// ball of radius `2ε`; reports `max ‖Φ(u) - Φ(v)‖ / ‖u - v‖`.
    pub fn contraction_probe(&self, phi: &BoundaryField, pairs: usize, seed: u64) -> Result<ProbeReport> {
        let linear = self.linear_part(phi)?;
        let eps = match self.config.epsilon {
            Some(e) => e,
            None => self.norms.x_norm(&linear)?.total,
        };
        let mut report = ProbeReport::new("contraction", 1.0);
        report.note("epsilon", eps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tan = &self.ops.grid().tan;
        let spread = 0.5 * tan.half_width;
        let widths = (2.0 * tan.spacing(), 0.25 * tan.half_width);
        let mut perturbation = || -> Result<Field> {
            let bumps = random_bumps(&mut rng, tan.dim, 3, widths, spread, true);
            let mut b = BoundaryField::from_fn(tan.clone(), |x| bumps.iter().map(|b| b.eval(x)).sum());
            b.exterior = Some(Exterior::Constant { value: 0.0 });
            let w = self.ops.apply_i1(&b)?;
            let norm = self.norms.x_norm(&w)?.total;
            Ok(w.map(|v| v / norm))
        };
        for id in 0..pairs {
            let (wa, wb) = (perturbation()?, perturbation()?);
            let u = linear.axpby(1.0, &wa, eps)?;
            let v = linear.axpby(1.0, &wb, eps)?;
            let num = self.norms.x_norm(&self.map_difference(&u, &v)?)?.total;
            let den = self.norms.x_norm(&u.axpby(1.0, &v, -1.0)?)?.total;
            if den > 0.0 {
                report.observe(id, num / den);
            }
        }
        report.pass = report.max_ratio.is_finite() && report.max_ratio < 1.0;
        Ok(report)
    }
}
