//! The four integral operators of the fixed-point formulation and the Riesz
//! potentials.
//!
//! With `x = (x′, xn)`, `y = (y′, yn)`:
//!
//! * `I1[φ](x,t)  = ∫ P(x′-y′, xn+t) φ(y′) dy′`
//! * `I2[g](x,t)  = ∫_0^t ∫ P(x′-y′, xn+t-s) g(y′,s) dy′ ds`
//! * `I3[f](x,t)  = ∫_0^t ∫_{R^n_+} P(x′-y′, xn+yn+t-s) f(y,s) dy ds`
//! * `I4[f](x,t)  = ∫_{R^n_+} G(x,y) f(y,t) dy`
//!
//! Tangential sums are exact linear convolutions (see [`crate::conv`]) with
//! cell-integrated kernels: a nodal value stands for its cell, and the kernel
//! is integrated over that cell, so concentrating kernels (`xn + t - s → 0`)
//! keep their exact cell masses. Time integrals substitute `τ = t - s` and use
//! Gauss panels `[0, t_0], [t_0, t_1], …` shared by every output time; the
//! source is linear in `s` between time nodes and frozen at `t_0` below it.

use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::conv::{Convolver, KernelSpectrum};
use crate::error::{invalid, Error, Result};
use crate::fields::{BoundaryField, Exterior, Field, HalfSpaceGrid, TangentialGrid, TimeGrid};
use crate::kernels::{
    green_cell_weight, poisson_box_mass, poisson_cell_weight, poisson_unchecked, riesz_cell_weight, KernelConstants,
};
use crate::par::par_map;
use crate::quadrature::{gauss, graded_rule};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimeRule {
    /// Gauss–Legendre panels between consecutive time nodes in `τ = t - s`.
    EndpointGraded { points_per_panel: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorBudgets {
    pub i1: f64,
    pub i2: f64,
    pub i3: f64,
    pub i4: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    pub tail_correction: bool,
    /// Cells closer than this many cell sizes get graded quadrature.
    pub near_cells: f64,
    pub time_rule: TimeRule,
    pub budgets: OperatorBudgets,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            tail_correction: true,
            near_cells: 2.0,
            time_rule: TimeRule::EndpointGraded { points_per_panel: 3 },
            budgets: OperatorBudgets { i1: 0.02, i2: 0.02, i3: 0.02, i4: 0.05 },
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.near_cells >= 1.0) {
            return Err(invalid("near-diagonal radius must be at least one cell"));
        }
        let b = self.budgets;
        if !(b.i1 > 0.0 && b.i2 > 0.0 && b.i3 > 0.0 && b.i4 > 0.0) {
            return Err(invalid("operator budgets must be positive"));
        }
        let TimeRule::EndpointGraded { points_per_panel } = self.time_rule;
        if points_per_panel == 0 {
            return Err(invalid("time rule needs at least one point per panel"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Lag {
    tau: f64,
    weight: f64,
}

type Spectrum = Vec<Complex64>;

pub struct Operators {
    grid: HalfSpaceGrid,
    times: TimeGrid,
    kc: KernelConstants,
    config: OperatorConfig,
    conv: Convolver,
    edge: Vec<f64>,
    /// Transform of the edge fractions, the data `1` on the grid.
    ones: Spectrum,
    /// `points_per_panel` lags per panel, panel `p` covering `[t_{p-1}, t_p]`.
    lags: Vec<Lag>,
    per_panel: usize,
    i1: OnceLock<Vec<KernelSpectrum>>,
    i2: OnceLock<Vec<KernelSpectrum>>,
    i3: OnceLock<Vec<KernelSpectrum>>,
    i4: OnceLock<Vec<KernelSpectrum>>,
    i2_complement: OnceLock<Vec<Vec<f64>>>,
}

impl std::fmt::Debug for Operators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Operators")
            .field("grid", &self.grid)
            .field("times", &self.times.len())
            .field("lags", &self.lags.len())
            .finish()
    }
}

impl Operators {
    pub fn new(grid: HalfSpaceGrid, times: TimeGrid, config: OperatorConfig) -> Result<Self> {
        config.validate()?;
        let kc = KernelConstants::new(grid.n)?;
        let conv = Convolver::new(grid.n - 1, grid.tan.m);
        let edge = grid.tan.edge_fractions();
        let ones = conv.forward(&edge);
        let TimeRule::EndpointGraded { points_per_panel } = config.time_rule;
        let gl = gauss(points_per_panel);
        let mut lags = Vec::new();
        let mut prev = 0.0;
        for &t in times.nodes() {
            lags.extend(gl.on(prev, t).map(|(tau, weight)| Lag { tau, weight }));
            prev = t;
        }
        Ok(Self {
            grid,
            times,
            kc,
            config,
            conv,
            edge,
            ones,
            lags,
            per_panel: points_per_panel,
            i1: OnceLock::new(),
            i2: OnceLock::new(),
            i3: OnceLock::new(),
            i4: OnceLock::new(),
            i2_complement: OnceLock::new(),
        })
    }

    pub fn grid(&self) -> &HalfSpaceGrid {
        &self.grid
    }

    pub fn times(&self) -> &TimeGrid {
        &self.times
    }

    pub fn config(&self) -> &OperatorConfig {
        &self.config
    }

    pub fn constants(&self) -> &KernelConstants {
        &self.kc
    }

    fn m_nor(&self) -> usize {
        self.grid.nor.m
    }

    fn n_tan(&self) -> usize {
        self.grid.tan.len()
    }

    fn poisson_spectrum(&self, depth: f64) -> KernelSpectrum {
        let h = self.grid.tan.spacing();
        let kc = &self.kc;
        let mut z = vec![0.0; self.grid.n - 1];
        self.conv.kernel_spectrum(|off| {
            for (zi, &o) in z.iter_mut().zip(off) {
                *zi = o as f64 * h;
            }
            poisson_cell_weight(&z, h, depth, kc)
        })
    }

    fn spectra(&self, depths: &[f64]) -> Vec<KernelSpectrum> {
        par_map(depths.len(), |j| self.poisson_spectrum(depths[j]))
    }

    fn i1_spectra(&self) -> &[KernelSpectrum] {
        self.i1.get_or_init(|| {
            let xn = self.grid.nor.nodes();
            let depths: Vec<f64> =
                self.times.nodes().iter().flat_map(|&t| xn.iter().map(move |&x| x + t)).collect();
            self.spectra(&depths)
        })
    }

    fn i2_spectra(&self) -> &[KernelSpectrum] {
        self.i2.get_or_init(|| {
            let depths: Vec<f64> =
                self.grid.nor.nodes().iter().flat_map(|&x| self.lags.iter().map(move |l| x + l.tau)).collect();
            self.spectra(&depths)
        })
    }

    fn pair(&self, k: usize, l: usize) -> usize {
        let (a, b) = if k <= l { (k, l) } else { (l, k) };
        // Row-major upper triangle.
        a * self.m_nor() - a * (a + 1) / 2 + b
    }

    fn i3_spectra(&self) -> &[KernelSpectrum] {
        self.i3.get_or_init(|| {
            let xn = self.grid.nor.nodes();
            let mut depths = Vec::new();
            for a in 0..xn.len() {
                for b in a..xn.len() {
                    depths.extend(self.lags.iter().map(|l| xn[a] + xn[b] + l.tau));
                }
            }
            self.spectra(&depths)
        })
    }

    fn i4_spectra(&self) -> &[KernelSpectrum] {
        self.i4.get_or_init(|| {
            let m = self.m_nor();
            let h = self.grid.tan.spacing();
            let nodes = self.grid.nor.nodes().to_vec();
            par_map(m * m, |kl| {
                let (k, l) = (kl / m, kl % m);
                let (ylo, yhi) = self.grid.nor.dual_cell(l);
                let mut z = vec![0.0; self.grid.n - 1];
                self.conv.kernel_spectrum(|off| {
                    for (zi, &o) in z.iter_mut().zip(off) {
                        *zi = o as f64 * h;
                    }
                    green_cell_weight(&z, h, nodes[k], ylo, yhi, self.config.near_cells, &self.kc)
                })
            })
        })
    }

    /// `1 - Σ_y K(x′ - y′)` over the grid cells: the kernel mass the box
    /// misses, measured with the same cell weights as the box part so that
    /// constants are reproduced exactly.
    fn complement_mass(&self, spec: &KernelSpectrum) -> Vec<f64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.ones.len()];
        self.conv.accumulate(&mut acc, spec, &self.ones, 1.0);
        self.conv.inverse(acc).into_iter().map(|v| 1.0 - v).collect()
    }

    fn weighted(&self, data: &[f64]) -> Vec<f64> {
        data.iter().zip(&self.edge).map(|(v, e)| v * e).collect()
    }

    fn assemble(&self, slices: Vec<Vec<f64>>) -> Result<Field> {
        let (nt, m) = (self.n_tan(), self.m_nor());
        let mut values = vec![0.0; self.times.len() * nt * m];
        for (ik, s) in slices.into_iter().enumerate() {
            let (i, k) = (ik / m, ik % m);
            for (j, v) in s.into_iter().enumerate() {
                values[i * nt * m + j * m + k] = v;
            }
        }
        Field::new(self.grid.clone(), self.times.clone(), values)
    }

    fn check_boundary(&self, b: &BoundaryField) -> Result<()> {
        if b.grid != self.grid.tan {
            return Err(invalid("boundary field lives on a different tangential grid"));
        }
        Ok(())
    }

    fn check_history(&self, g: &BoundaryField) -> Result<()> {
        self.check_boundary(g)?;
        match &g.times {
            Some(t) if *t == self.times => Ok(()),
            _ => Err(invalid("history must be given on the operator time grid")),
        }
    }

    fn check_field(&self, f: &Field) -> Result<()> {
        if f.grid != self.grid || f.times != self.times {
            return Err(invalid("field lives on a different grid or time grid"));
        }
        Ok(())
    }

    /// Exterior contribution of `φ` at tangential nodes for depth `a`.
    fn exterior_tail(&self, ext: &Exterior, a: f64, spec: &KernelSpectrum, cache: &mut PowerTailCache) -> Vec<f64> {
        match *ext {
            Exterior::Constant { value } => {
                if value == 0.0 {
                    vec![0.0; self.n_tan()]
                } else {
                    self.complement_mass(spec).into_iter().map(|c| value * c).collect()
                }
            }
            Exterior::Power { amplitude, k } => cache.eval(self, a, amplitude, k),
        }
    }

    /// `I1[φ]` at every time node.
    pub fn apply_i1(&self, phi: &BoundaryField) -> Result<Field> {
        self.check_boundary(phi)?;
        let spectra = self.i1_spectra();
        let s = self.conv.forward(&self.weighted(phi.slice(0)));
        let m = self.m_nor();
        let mut slices = par_map(self.times.len() * m, |ik| {
            let mut acc = vec![Complex64::new(0.0, 0.0); s.len()];
            self.conv.accumulate(&mut acc, &spectra[ik], &s, 1.0);
            self.conv.inverse(acc)
        });
        if let (true, Some(ext)) = (self.config.tail_correction, phi.exterior) {
            let xn = self.grid.nor.nodes();
            let mut cache = PowerTailCache::default();
            for (ik, slice) in slices.iter_mut().enumerate() {
                let a = xn[ik % m] + self.times.nodes()[ik / m];
                for (v, t) in slice.iter_mut().zip(self.exterior_tail(&ext, a, &spectra[ik], &mut cache)) {
                    *v += t;
                }
            }
        }
        self.assemble(slices)
    }

    /// `I1[φ]` at an arbitrary time `t > 0`; returns the (tangential, normal) slice.
    pub fn apply_i1_at(&self, phi: &BoundaryField, t: f64) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("I1 needs t > 0, got {t}")));
        }
        self.check_boundary(phi)?;
        let s = self.conv.forward(&self.weighted(phi.slice(0)));
        let m = self.m_nor();
        let xn = self.grid.nor.nodes();
        let cols = par_map(m, |k| {
            let spec = self.poisson_spectrum(xn[k] + t);
            let mut acc = vec![Complex64::new(0.0, 0.0); s.len()];
            self.conv.accumulate(&mut acc, &spec, &s, 1.0);
            (self.conv.inverse(acc), spec)
        });
        let mut cache = PowerTailCache::default();
        let mut out = vec![0.0; self.n_tan() * m];
        for (k, (mut col, spec)) in cols.into_iter().enumerate() {
            if let (true, Some(ext)) = (self.config.tail_correction, phi.exterior) {
                for (v, tail) in col.iter_mut().zip(self.exterior_tail(&ext, xn[k] + t, &spec, &mut cache)) {
                    *v += tail;
                }
            }
            for (j, v) in col.into_iter().enumerate() {
                out[j * m + k] = v;
            }
        }
        Ok(out)
    }

    /// Source time interpolation: `s` ↦ (node, weight, node, weight).
    fn interp(&self, s: f64) -> (usize, f64, usize, f64) {
        let t = self.times.nodes();
        if s <= t[0] {
            return (0, 1.0, 0, 0.0);
        }
        let j = t.partition_point(|&v| v <= s).min(t.len() - 1);
        let (a, b) = (t[j - 1], t[j]);
        let w = (s - a) / (b - a);
        (j - 1, 1.0 - w, j, w)
    }

    fn lags_for(&self, i: usize) -> usize {
        (i + 1) * self.per_panel
    }

    /// `I2[g]` at every time node for a history `g` on the operator time grid.
    pub fn apply_i2(&self, g: &BoundaryField) -> Result<Field> {
        self.check_history(g)?;
        let spectra = self.i2_spectra();
        let src: Vec<Spectrum> = par_map(self.times.len(), |j| self.conv.forward(&self.weighted(g.slice(j))));
        let m = self.m_nor();
        let nl = self.lags.len();
        let t = self.times.nodes();
        let mut slices = par_map(self.times.len() * m, |ik| {
            let (i, k) = (ik / m, ik % m);
            let mut acc = vec![Complex64::new(0.0, 0.0); src[0].len()];
            for (gi, lag) in self.lags[..self.lags_for(i)].iter().enumerate() {
                let (ja, wa, jb, wb) = self.interp(t[i] - lag.tau);
                let spec = &spectra[k * nl + gi];
                if wb == 0.0 {
                    self.conv.accumulate(&mut acc, spec, &src[ja], lag.weight * wa);
                } else {
                    self.conv.accumulate2(&mut acc, spec, &src[ja], lag.weight * wa, &src[jb], lag.weight * wb);
                }
            }
            self.conv.inverse(acc)
        });
        if let (true, Some(Exterior::Constant { value })) = (self.config.tail_correction, g.exterior) {
            if value != 0.0 {
                let comp = self.i2_complement.get_or_init(|| par_map(m * nl, |kg| self.complement_mass(&spectra[kg])));
                for (ik, slice) in slices.iter_mut().enumerate() {
                    let (i, k) = (ik / m, ik % m);
                    for (gi, lag) in self.lags[..self.lags_for(i)].iter().enumerate() {
                        for (v, c) in slice.iter_mut().zip(&comp[k * nl + gi]) {
                            *v += value * lag.weight * c;
                        }
                    }
                }
            }
        }
        self.assemble(slices)
    }

    /// `I2[g]` at the time node `t`.
    pub fn apply_i2_at(&self, g: &BoundaryField, t: f64) -> Result<Vec<f64>> {
        let i = self.node(t)?;
        Ok(self.apply_i2(g)?.slice(i).to_vec())
    }

    fn node(&self, t: f64) -> Result<usize> {
        self.times.node_index(t).ok_or_else(|| invalid(format!("t = {t} is not a time node")))
    }

    fn source_spectra(&self, f: &Field) -> Vec<Spectrum> {
        let (nt, m) = (self.n_tan(), self.m_nor());
        par_map(self.times.len() * m, |jl| {
            let (j, l) = (jl / m, jl % m);
            let slice = f.slice(j);
            let col: Vec<f64> = (0..nt).map(|x| slice[x * m + l] * self.edge[x]).collect();
            self.conv.forward(&col)
        })
    }

    /// `I3[f]` at every time node.
    pub fn apply_i3(&self, f: &Field) -> Result<Field> {
        self.check_field(f)?;
        let spectra = self.i3_spectra();
        let src = self.source_spectra(f);
        let m = self.m_nor();
        let nl = self.lags.len();
        let t = self.times.nodes();
        let w = self.grid.nor.weights();
        let slices = par_map(self.times.len() * m, |ik| {
            let (i, k) = (ik / m, ik % m);
            let mut acc = vec![Complex64::new(0.0, 0.0); src[0].len()];
            for (gi, lag) in self.lags[..self.lags_for(i)].iter().enumerate() {
                let (ja, wa, jb, wb) = self.interp(t[i] - lag.tau);
                for l in 0..m {
                    let spec = &spectra[self.pair(k, l) * nl + gi];
                    let c = lag.weight * w[l];
                    if wb == 0.0 {
                        self.conv.accumulate(&mut acc, spec, &src[ja * m + l], c * wa);
                    } else {
                        self.conv.accumulate2(&mut acc, spec, &src[ja * m + l], c * wa, &src[jb * m + l], c * wb);
                    }
                }
            }
            self.conv.inverse(acc)
        });
        self.assemble(slices)
    }

    pub fn apply_i3_at(&self, f: &Field, t: f64) -> Result<Vec<f64>> {
        let i = self.node(t)?;
        Ok(self.apply_i3(f)?.slice(i).to_vec())
    }

    /// `I4[f]` at every time node (no time integral).
    pub fn apply_i4(&self, f: &Field) -> Result<Field> {
        self.check_field(f)?;
        let spectra = self.i4_spectra();
        let src = self.source_spectra(f);
        let m = self.m_nor();
        let nt = self.n_tan();
        let slices = par_map(self.times.len() * m, |ik| {
            let (i, k) = (ik / m, ik % m);
            if self.grid.nor.nodes()[k] == 0.0 {
                return vec![0.0; nt];
            }
            let mut acc = vec![Complex64::new(0.0, 0.0); src[0].len()];
            for l in 0..m {
                self.conv.accumulate(&mut acc, &spectra[k * m + l], &src[i * m + l], 1.0);
            }
            self.conv.inverse(acc)
        });
        self.assemble(slices)
    }

    /// `I4` of one (tangential, normal) slice.
    pub fn apply_i4_slice(&self, slice: &[f64]) -> Result<Vec<f64>> {
        let (nt, m) = (self.n_tan(), self.m_nor());
        if slice.len() != nt * m {
            return Err(invalid("slice length does not match the grid"));
        }
        let spectra = self.i4_spectra();
        let src: Vec<Spectrum> = (0..m)
            .map(|l| self.conv.forward(&(0..nt).map(|x| slice[x * m + l] * self.edge[x]).collect::<Vec<_>>()))
            .collect();
        let cols = par_map(m, |k| {
            if self.grid.nor.nodes()[k] == 0.0 {
                return vec![0.0; nt];
            }
            let mut acc = vec![Complex64::new(0.0, 0.0); src[0].len()];
            for l in 0..m {
                self.conv.accumulate(&mut acc, &spectra[k * m + l], &src[l], 1.0);
            }
            self.conv.inverse(acc)
        });
        let mut out = vec![0.0; nt * m];
        for (k, col) in cols.into_iter().enumerate() {
            for (j, v) in col.into_iter().enumerate() {
                out[j * m + k] = v;
            }
        }
        Ok(out)
    }

    /// A-posteriori truncation bound at the box center for data bounded by
    /// `exterior_max` outside the box: `exterior_max · (1 - box mass of P(·, a))`.
    pub fn tail_bound(&self, exterior_max: f64, depth: f64) -> f64 {
        let l = self.grid.tan.half_width;
        let d = self.grid.n - 1;
        exterior_max * (1.0 - poisson_box_mass(&vec![-l; d], &vec![l; d], depth, &self.kc))
    }
}

/// Power-law exterior integrals, shared across the cube symmetries of the
/// point and reused for repeated depths.
#[derive(Default)]
struct PowerTailCache {
    entries: std::collections::HashMap<(u64, Vec<u32>), f64>,
}

impl PowerTailCache {
    fn eval(&mut self, ops: &Operators, a: f64, amplitude: f64, k: f64) -> Vec<f64> {
        let tan = &ops.grid.tan;
        let centre = (tan.m / 2) as i64;
        let symmetric = tan.m % 2 == 1;
        let mut idx = vec![0; tan.dim];
        (0..tan.len())
            .map(|j| {
                tan.unravel(j, &mut idx);
                let x = tan.point(j);
                if !symmetric {
                    return power_tail(&x, a, amplitude, k, tan.half_width, &ops.kc);
                }
                let mut key: Vec<u32> = idx.iter().map(|&i| (i as i64 - centre).unsigned_abs() as u32).collect();
                key.sort_unstable();
                *self
                    .entries
                    .entry((a.to_bits(), key))
                    .or_insert_with(|| power_tail(&x, a, amplitude, k, tan.half_width, &ops.kc))
            })
            .collect()
    }
}

/// `∫_{R^d \ [-L,L]^d} P(x - y, a) · A|y|^{-k} dy` in cube-polar coordinates
/// `y = s·ω`, `|ω|_∞ = 1`, `s > L`, with the remainder beyond `s = S` taken
/// from the far-field form of `P`.
pub fn power_tail(x: &[f64], a: f64, amplitude: f64, k: f64, l: f64, kc: &KernelConstants) -> f64 {
    let d = x.len();
    let n = d as f64 + 1.0;
    let big_s = 256.0 * (l + a);
    let mut total = 0.0;
    let mut y = vec![0.0; d];
    for axis in 0..d {
        for sign in [-1.0, 1.0] {
            let gap = l - sign * x[axis];
            let scale = 0.5 * (gap + a);
            let s_rule = graded_rule(l, big_s, l, scale, 5);
            let others: Vec<usize> = (0..d).filter(|&i| i != axis).collect();
            let v_rules: Vec<Vec<(f64, f64)>> =
                others.iter().map(|&i| graded_rule(-1.0, 1.0, x[i] / l, scale / l, 5)).collect();
            let mut far = 0.0;
            let mut idx = vec![0usize; others.len()];
            loop {
                let mut wv = 1.0;
                let mut omega2 = 1.0;
                let mut v = vec![0.0; others.len()];
                for (o, rule) in v_rules.iter().enumerate() {
                    let (vi, wi) = rule[idx[o]];
                    v[o] = vi;
                    wv *= wi;
                    omega2 += vi * vi;
                }
                let omega_k = omega2.powf(-0.5 * k);
                for &(s, ws) in &s_rule {
                    y[axis] = sign * s;
                    for (o, &i) in others.iter().enumerate() {
                        y[i] = s * v[o];
                    }
                    let r2: f64 = y.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum();
                    total += wv * ws * poisson_unchecked(r2, a, kc) * s.powf(d as f64 - 1.0 - k) * omega_k;
                }
                far += wv * omega2.powf(-0.5 * (n + k));
                // Odometer.
                let mut o = 0;
                loop {
                    if o == idx.len() {
                        break;
                    }
                    idx[o] += 1;
                    if idx[o] < v_rules[o].len() {
                        break;
                    }
                    idx[o] = 0;
                    o += 1;
                }
                if o == idx.len() {
                    break;
                }
            }
            // P ≈ c_n a s^{-n} |ω|^{-n} for s ≥ S; ∫_S^∞ s^{d-1-k-n} ds = S^{-1-k}/(1+k).
            total += kc.c_n * a * far * big_s.powf(-1.0 - k) / (1.0 + k);
        }
    }
    amplitude * total
}

/// Poisson smoothing `P(·, a) * f` of a boundary slice (the trace of `I1` at depth `a`).
pub fn poisson_boundary(grid: &TangentialGrid, values: &[f64], a: f64) -> Result<Vec<f64>> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("Poisson smoothing needs a > 0, got {a}")));
    }
    boundary_check(grid, values)?;
    let kc = KernelConstants::new(grid.dim + 1)?;
    let conv = Convolver::new(grid.dim, grid.m);
    let h = grid.spacing();
    let mut z = vec![0.0; grid.dim];
    let spec = conv.kernel_spectrum(|off| {
        for (zi, &o) in z.iter_mut().zip(off) {
            *zi = o as f64 * h;
        }
        poisson_cell_weight(&z, h, a, &kc)
    });
    let data: Vec<f64> = values.iter().zip(grid.edge_fractions()).map(|(v, e)| v * e).collect();
    Ok(conv.convolve(&data, &spec))
}

fn boundary_check(grid: &TangentialGrid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(invalid("values do not match the boundary grid"));
    }
    Ok(())
}

fn gamma_check(gamma: f64, d: usize) -> Result<()> {
    if !(gamma > 0.0 && gamma < d as f64) {
        return Err(invalid(format!("gamma = {gamma} must lie in (0, {d})")));
    }
    Ok(())
}

/// `∫_{R^d} |x - y|^{-(d-γ)} f(y) dy` on a boundary grid.
pub fn riesz_boundary(grid: &TangentialGrid, values: &[f64], gamma: f64) -> Result<Vec<f64>> {
    gamma_check(gamma, grid.dim)?;
    boundary_check(grid, values)?;
    let beta = grid.dim as f64 - gamma;
    let conv = Convolver::new(grid.dim, grid.m);
    let h = grid.spacing();
    let near = OperatorConfig::default().near_cells;
    let mut z = vec![0.0; grid.dim];
    let spec = conv.kernel_spectrum(|off| {
        for (zi, &o) in z.iter_mut().zip(off) {
            *zi = o as f64 * h;
        }
        riesz_cell_weight(&z, h, None, beta, near)
    });
    let data: Vec<f64> = values.iter().zip(grid.edge_fractions()).map(|(v, e)| v * e).collect();
    Ok(conv.convolve(&data, &spec))
}

/// `∫_{R^n_+} |x - y|^{-(n-γ)} f(y) dy` for a (tangential, normal) slice;
/// with `trace` the output is the boundary slice `x = (x′, 0)`.
pub fn riesz_half_space(grid: &HalfSpaceGrid, values: &[f64], gamma: f64, trace: bool) -> Result<Vec<f64>> {
    gamma_check(gamma, grid.n)?;
    let (nt, m) = (grid.tan.len(), grid.nor.m);
    if values.len() != nt * m {
        return Err(invalid("values do not match the half-space grid"));
    }
    let beta = grid.n as f64 - gamma;
    let conv = Convolver::new(grid.n - 1, grid.tan.m);
    let h = grid.tan.spacing();
    let near = OperatorConfig::default().near_cells;
    let edge = grid.tan.edge_fractions();
    let src: Vec<Spectrum> = (0..m)
        .map(|l| conv.forward(&(0..nt).map(|x| values[x * m + l] * edge[x]).collect::<Vec<_>>()))
        .collect();
    let nodes = grid.nor.nodes();
    let outputs: Vec<usize> = if trace { vec![0] } else { (0..m).collect() };
    let cols = par_map(outputs.len(), |o| {
        let xn = nodes[outputs[o]];
        let mut acc = vec![Complex64::new(0.0, 0.0); src[0].len()];
        let mut z = vec![0.0; grid.n - 1];
        for (l, s) in src.iter().enumerate() {
            let cell = grid.nor.dual_cell(l);
            let spec = conv.kernel_spectrum(|off| {
                for (zi, &o) in z.iter_mut().zip(off) {
                    *zi = o as f64 * h;
                }
                riesz_cell_weight(&z, h, Some((xn, cell.0, cell.1)), beta, near)
            });
            conv.accumulate(&mut acc, &spec, s, 1.0);
        }
        conv.inverse(acc)
    });
    if trace {
        return Ok(cols.into_iter().next().expect("one trace column"));
    }
    let mut out = vec![0.0; nt * m];
    for (k, col) in cols.into_iter().enumerate() {
        for (j, v) in col.into_iter().enumerate() {
            out[j * m + k] = v;
        }
    }
    Ok(out)
}

/// Riesz potential of a boundary slice or a half-space slice.
pub fn riesz_potential(f: RieszInput<'_>, gamma: f64, trace: bool) -> Result<Vec<f64>> {
    match f {
        RieszInput::Boundary(g, v) => {
            if trace {
                return Err(invalid("the trace variant needs a half-space input"));
            }
            riesz_boundary(g, v, gamma)
        }
        RieszInput::HalfSpace(g, v) => riesz_half_space(g, v, gamma, trace),
    }
}

#[derive(Clone, Copy, Debug)]
pub enum RieszInput<'a> {
    Boundary(&'a TangentialGrid, &'a [f64]),
    HalfSpace(&'a HalfSpaceGrid, &'a [f64]),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::trace;
    use proptest::prelude::*;

    fn small() -> Operators {
        let grid = HalfSpaceGrid::new(3, 4.0, 9, 4.0, 6, 1.3).unwrap();
        let times = TimeGrid::new(0.05, 2.0, 5).unwrap();
        Operators::new(grid, times, OperatorConfig::default()).unwrap()
    }

    fn bump_field(ops: &Operators, c: f64) -> Field {
        Field::from_fn(ops.grid.clone(), ops.times.clone(), |x, t| {
            let r2 = x[0] * x[0] + (x[1] - c) * (x[1] - c) + (x[2] - 0.5) * (x[2] - 0.5);
            (-r2).exp() * (1.0 + 0.1 * t)
        })
    }

    #[test]
    fn config_validation() {
        let mut c = OperatorConfig::default();
        assert!(c.validate().is_ok());
        c.near_cells = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn i1_of_one_is_one_with_the_tail() {
        let ops = small();
        let mut phi = BoundaryField::from_fn(ops.grid.tan.clone(), |_| 1.0);
        phi.exterior = Some(Exterior::Constant { value: 1.0 });
        let u = ops.apply_i1(&phi).unwrap();
        for v in &u.values {
            assert!((v - 1.0).abs() < 1e-3, "{v}");
        }
    }

    #[test]
    fn i1_matches_direct_summation() {
        let ops = small();
        let phi = BoundaryField::from_fn(ops.grid.tan.clone(), |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let u = ops.apply_i1(&phi).unwrap();
        let (i, k) = (2, 3);
        let a = ops.grid.nor.nodes()[k] + ops.times.nodes()[i];
        let h = ops.grid.tan.spacing();
        let ef = ops.grid.tan.edge_fractions();
        for x in [0, 7, 40, 80] {
            let px = ops.grid.tan.point(x);
            let direct: f64 = (0..ops.n_tan())
                .map(|y| {
                    let py = ops.grid.tan.point(y);
                    let z: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a - b).collect();
                    poisson_cell_weight(&z, h, a, &ops.kc) * phi.values[y] * ef[y]
                })
                .sum();
            let v = u.slice(i)[x * ops.m_nor() + k];
            assert!((v - direct).abs() < 1e-12, "{v} vs {direct}");
        }
    }

    #[test]
    fn i1_rejects_nonpositive_time() {
        let ops = small();
        let phi = BoundaryField::zeros(ops.grid.tan.clone());
        assert!(matches!(ops.apply_i1_at(&phi, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn i2_of_one_has_trace_t() {
        let ops = small();
        let mut g = BoundaryField::history(
            ops.grid.tan.clone(),
            ops.times.clone(),
            vec![1.0; ops.n_tan() * ops.times.len()],
        )
        .unwrap();
        g.exterior = Some(Exterior::Constant { value: 1.0 });
        let u = ops.apply_i2(&g).unwrap();
        let tr = trace(&u);
        for (i, &t) in ops.times.nodes().iter().enumerate() {
            for v in tr.slice(i) {
                assert!((v - t).abs() < 0.02 * t, "t = {t}: {v}");
            }
        }
    }

    #[test]
    fn i2_needs_a_time_node() {
        let ops = small();
        let g = BoundaryField::history(ops.grid.tan.clone(), ops.times.clone(), vec![0.0; ops.n_tan() * 5]).unwrap();
        assert!(ops.apply_i2_at(&g, 0.3).is_err());
        assert!(ops.apply_i2_at(&g, ops.times.nodes()[1]).is_ok());
    }

    #[test]
    fn i4_vanishes_on_the_boundary_and_is_positive_inside() {
        let ops = small();
        let f = bump_field(&ops, 0.0);
        let u = ops.apply_i4(&f).unwrap();
        assert!(trace(&u).values.iter().all(|&v| v == 0.0));
        assert!(u.min() >= -1e-12 * u.max_abs());
        let s = ops.apply_i4_slice(f.slice(1)).unwrap();
        assert_eq!(s, u.slice(1));
    }

    #[test]
    fn operators_are_linear() {
        let ops = small();
        let f = bump_field(&ops, 0.0);
        let g = bump_field(&ops, 1.0).map(|v| v * v - 0.3);
        let (a, b) = (0.7, -1.3);
        let comb = f.axpby(a, &g, b).unwrap();
        for op in [Operators::apply_i3, Operators::apply_i4] {
            let lhs = op(&ops, &comb).unwrap();
            let rhs = op(&ops, &f).unwrap().axpby(a, &op(&ops, &g).unwrap(), b).unwrap();
            let scale = lhs.max_abs();
            for (x, y) in lhs.values.iter().zip(&rhs.values) {
                assert!((x - y).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn quarter_turn_equivariance() {
        let ops = small();
        let f = bump_field(&ops, 1.0);
        let m = ops.grid.tan.m;
        let rot = |u: &Field| {
            let mut out = u.clone();
            let nm = ops.m_nor();
            for i in 0..u.times.len() {
                for a in 0..m {
                    for b in 0..m {
                        let (ra, rb) = (m - 1 - b, a);
                        for k in 0..nm {
                            out.slice_mut(i)[(ra * m + rb) * nm + k] = u.slice(i)[(a * m + b) * nm + k];
                        }
                    }
                }
            }
            out
        };
        let lhs = ops.apply_i3(&rot(&f)).unwrap();
        let rhs = rot(&ops.apply_i3(&f).unwrap());
        for (x, y) in lhs.values.iter().zip(&rhs.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn power_tail_matches_polar_quadrature() {
        let kc = KernelConstants::new(3).unwrap();
        let (x, a, k, l) = ([1.0, -0.5], 0.7, 0.4, 2.0);
        let v = power_tail(&x, a, 1.0, k, l, &kc);
        // Polar coordinates about the origin; the exterior starts at
        // r0(θ) = L / max(|cos θ|, |sin θ|), with kinks at multiples of π/4.
        let quarter = std::f64::consts::FRAC_PI_4;
        let mut reference = 0.0;
        for panel in 0..8 {
            for (th, wt) in gauss(48).on(panel as f64 * quarter, (panel + 1) as f64 * quarter) {
                let r0 = l / th.cos().abs().max(th.sin().abs());
                for (r, wr) in graded_rule(r0, 1e5, r0, 0.25, 12) {
                    let y = [r * th.cos(), r * th.sin()];
                    let r2 = (y[0] - x[0]).powi(2) + (y[1] - x[1]).powi(2);
                    reference += wt * wr * r * poisson_unchecked(r2, a, &kc) * r.powf(-k);
                }
            }
        }
        assert!((v - reference).abs() < 2e-3 * reference, "{v} vs {reference}");
    }

    #[test]
    fn riesz_of_a_point_mass_far_away() {
        let g = TangentialGrid::new(2, 4.0, 33).unwrap();
        let h = g.spacing();
        let mut vals = vec![0.0; g.len()];
        vals[g.origin_index().unwrap()] = 1.0;
        let out = riesz_boundary(&g, &vals, 0.5).unwrap();
        let j = g.ravel(&[16, 28]);
        let r = g.point(j)[1];
        let expected = h * h * r.powf(0.5 - 2.0);
        assert!((out[j] - expected).abs() < 0.01 * expected, "{} vs {expected}", out[j]);
        assert!(riesz_boundary(&g, &vals, 2.0).is_err());
        assert!(riesz_boundary(&g, &vec![0.0; g.len()], 0.5).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poisson_smoothing_of_constants() {
        let g = TangentialGrid::new(2, 8.0, 65).unwrap();
        let out = poisson_boundary(&g, &vec![1.0; g.len()], 0.1).unwrap();
        assert!((out[g.origin_index().unwrap()] - 1.0).abs() < 0.02);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        #[test]
        fn nonnegative_inputs_give_nonnegative_outputs(seed in 0u64..1000) {
            let ops = small();
            let c = (seed % 7) as f64 * 0.3 - 1.0;
            let f = bump_field(&ops, c);
            let g = trace(&f);
            let phi = BoundaryField::new(ops.grid.tan.clone(), g.slice(0).to_vec()).unwrap();
            for u in [ops.apply_i1(&phi).unwrap(), ops.apply_i2(&g).unwrap(), ops.apply_i3(&f).unwrap(), ops.apply_i4(&f).unwrap()] {
                prop_assert!(u.min() >= -1e-12 * u.max_abs());
            }
        }
    }
}
