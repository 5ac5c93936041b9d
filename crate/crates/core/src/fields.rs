//! Grids on the truncated half-space and its boundary, space-time fields,
//! interpolation, traces, quadrature weights and file formats.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Uniform grid on `[-L, L]^dim` with `m` nodes per axis, endpoints included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentialGrid {
    pub dim: usize,
    pub half_width: f64,
    pub m: usize,
}

impl TangentialGrid {
    pub fn new(dim: usize, half_width: f64, m: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("tangential dimension must be positive"));
        }
        if m < 4 {
            return Err(invalid(format!("need at least 4 nodes per axis, got {m}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(invalid(format!("half width {half_width} must be positive")));
        }
        Ok(Self { dim, half_width, m })
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.m - 1) as f64
    }

    pub fn coord(&self, j: usize) -> f64 {
        if j + 1 == self.m {
            self.half_width
        } else {
            -self.half_width + j as f64 * self.spacing()
        }
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major multi-index of a flat index (last axis fastest).
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for a in (0..self.dim).rev() {
            out[a] = flat % self.m;
            flat /= self.m;
        }
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.m + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim];
        self.unravel(flat, &mut idx);
        idx.iter().map(|&j| self.coord(j)).collect()
    }

    /// Flat index of the origin when it is a node (odd `m`).
    pub fn origin_index(&self) -> Option<usize> {
        (self.m % 2 == 1).then(|| self.ravel(&vec![self.m / 2; self.dim]))
    }

    /// Trapezoid weights per axis, `(h/2, h, …, h, h/2)`.
    pub fn axis_weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.m];
        w[0] = 0.5 * h;
        w[self.m - 1] = 0.5 * h;
        w
    }

    /// Product trapezoid weights.
    pub fn weights(&self) -> Vec<f64> {
        let aw = self.axis_weights();
        let mut idx = vec![0; self.dim];
        (0..self.len())
            .map(|f| {
                self.unravel(f, &mut idx);
                idx.iter().map(|&j| aw[j]).product()
            })
            .collect()
    }

    /// Trapezoid weights divided by the cell volume: 1 inside, ½ per boundary face.
    pub fn edge_fractions(&self) -> Vec<f64> {
        let hd = self.spacing().powi(self.dim as i32);
        self.weights().into_iter().map(|w| w / hd).collect()
    }

    pub fn measure(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// Lower node index and fraction for interpolation along one axis.
    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let l = self.half_width;
        let slack = 1e-12 * l;
        if !(x >= -l - slack && x <= l + slack) {
            return None;
        }
        let s = ((x + l) / self.spacing()).clamp(0.0, (self.m - 1) as f64);
        let j = (s.floor() as usize).min(self.m - 2);
        Some((j, s - j as f64))
    }
}

/// Geometrically graded nodes on `[0, extent]` starting at 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalGrid {
    pub extent: f64,
    pub m: usize,
    pub ratio: f64,
    nodes: Vec<f64>,
}

impl NormalGrid {
    pub fn new(extent: f64, m: usize, ratio: f64) -> Result<Self> {
        if m < 4 {
            return Err(invalid(format!("need at least 4 normal nodes, got {m}")));
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(invalid(format!("normal extent {extent} must be positive")));
        }
        if !(ratio >= 1.0) || !ratio.is_finite() {
            return Err(invalid(format!("grading ratio {ratio} must be >= 1")));
        }
        let cells = (m - 1) as i32;
        let h0 = if ratio == 1.0 {
            extent / cells as f64
        } else {
            extent * (ratio - 1.0) / (ratio.powi(cells) - 1.0)
        };
        let mut nodes = Vec::with_capacity(m);
        let mut x = 0.0;
        let mut h = h0;
        for _ in 0..m {
            nodes.push(x);
            x += h;
            h *= ratio;
        }
        nodes[m - 1] = extent;
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("normal nodes are not strictly increasing"));
        }
        Ok(Self { extent, m, ratio, nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn first_spacing(&self) -> f64 {
        self.nodes[1]
    }

    /// Trapezoid weights, equal to the lengths of the dual cells.
    pub fn weights(&self) -> Vec<f64> {
        (0..self.m).map(|k| self.dual_cell(k).1 - self.dual_cell(k).0).collect()
    }

    /// `[mid(k-1, k), mid(k, k+1)]` clipped to `[0, extent]`.
    pub fn dual_cell(&self, k: usize) -> (f64, f64) {
        let x = &self.nodes;
        let lo = if k == 0 { 0.0 } else { 0.5 * (x[k - 1] + x[k]) };
        let hi = if k + 1 == self.m { self.extent } else { 0.5 * (x[k] + x[k + 1]) };
        (lo, hi)
    }

    fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let slack = 1e-12 * self.extent;
        if !(x >= -slack && x <= self.extent + slack) {
            return None;
        }
        let x = x.clamp(0.0, self.extent);
        let k = match self.nodes.binary_search_by(|v| v.partial_cmp(&x).expect("finite nodes")) {
            Ok(k) => k.min(self.m - 2),
            Err(k) => k.saturating_sub(1).min(self.m - 2),
        };
        let (a, b) = (self.nodes[k], self.nodes[k + 1]);
        Some((k, (x - a) / (b - a)))
    }
}

/// `[-L_tan, L_tan]^{n-1} × [0, L_nor]` with a uniform tangential grid and a
/// graded normal grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceGrid {
    pub n: usize,
    pub tan: TangentialGrid,
    pub nor: NormalGrid,
}

impl HalfSpaceGrid {
    pub fn new(n: usize, l_tan: f64, m_tan: usize, l_nor: f64, m_nor: usize, rho: f64) -> Result<Self> {
        if n < 2 {
            return Err(invalid("half-space dimension must be at least 2"));
        }
        Ok(Self {
            n,
            tan: TangentialGrid::new(n - 1, l_tan, m_tan)?,
            nor: NormalGrid::new(l_nor, m_nor, rho)?,
        })
    }

    pub fn len(&self) -> usize {
        self.tan.len() * self.nor.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat index with the normal index fastest.
    pub fn index(&self, tan: usize, k: usize) -> usize {
        tan * self.nor.m + k
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = self.tan.point(flat / self.nor.m);
        p.push(self.nor.nodes[flat % self.nor.m]);
        p
    }

    pub fn measure(&self) -> f64 {
        self.tan.measure() * self.nor.extent
    }
}

/// Trapezoid-type weights per node of a half-space grid.
pub fn quadrature_weights(grid: &HalfSpaceGrid) -> Vec<f64> {
    let wt = grid.tan.weights();
    let wn = grid.nor.weights();
    let mut out = Vec::with_capacity(grid.len());
    for a in &wt {
        for b in &wn {
            out.push(a * b);
        }
    }
    out
}

/// Log-uniform time nodes on `[t_min, t_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_min: f64,
    pub t_max: f64,
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t_min: f64, t_max: f64, m_t: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min) || !t_max.is_finite() {
            return Err(invalid(format!("time window [{t_min}, {t_max}] must satisfy 0 < t_min < t_max")));
        }
        if m_t < 2 {
            return Err(invalid("need at least 2 time nodes"));
        }
        let (a, b) = (t_min.ln(), t_max.ln());
        let mut nodes: Vec<f64> =
            (0..m_t).map(|i| (a + (b - a) * i as f64 / (m_t - 1) as f64).exp()).collect();
        nodes[0] = t_min;
        nodes[m_t - 1] = t_max;
        Ok(Self { t_min, t_max, nodes })
    }

    /// Explicit increasing positive nodes.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || !(nodes[0] > 0.0) || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("time nodes must be positive and strictly increasing"));
        }
        Ok(Self { t_min: nodes[0], t_max: *nodes.last().expect("nonempty"), nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Interval and fraction in `log t`.
    fn locate(&self, t: f64) -> Option<(usize, f64)> {
        let slack = 1e-12;
        if !(t >= self.t_min * (1.0 - slack) && t <= self.t_max * (1.0 + slack)) {
            return None;
        }
        let t = t.clamp(self.t_min, self.t_max);
        let i = match self.nodes.binary_search_by(|v| v.partial_cmp(&t).expect("finite nodes")) {
            Ok(i) => i.min(self.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.len() - 2),
        };
        let (a, b) = (self.nodes[i].ln(), self.nodes[i + 1].ln());
        Some((i, (t.ln() - a) / (b - a)))
    }

    /// Index of a node equal to `t` up to relative `1e-12`.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        self.nodes.iter().position(|&v| (v - t).abs() <= 1e-12 * v)
    }
}

/// Radial model of a boundary datum outside the truncated box, used for
/// analytic tail corrections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exterior {
    Constant { value: f64 },
    Power { amplitude: f64, k: f64 },
}

impl Exterior {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Exterior::Constant { value } => value,
            Exterior::Power { amplitude, k } => amplitude * r.powf(-k),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        match *self {
            Exterior::Constant { value } => Exterior::Constant { value: s * value },
            Exterior::Power { amplitude, k } => Exterior::Power { amplitude: s * amplitude, k },
        }
    }
}

/// `amplitude · |x|^{-k}` behaviour at the origin; lets integrals of `|f|^q`
/// near the singular node be taken exactly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerSingularity {
    pub amplitude: f64,
    pub k: f64,
}

/// A function on the boundary `R^{n-1}`, at one time or on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryField {
    pub grid: TangentialGrid,
    pub times: Option<TimeGrid>,
    pub values: Vec<f64>,
    #[serde(default)]
    pub exterior: Option<Exterior>,
    #[serde(default)]
    pub singularity: Option<PowerSingularity>,
}

impl BoundaryField {
    pub fn new(grid: TangentialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!("expected {} values, got {}", grid.len(), values.len())));
        }
        check_finite(&values)?;
        Ok(Self { grid, times: None, values, exterior: None, singularity: None })
    }

    pub fn history(grid: TangentialGrid, times: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * times.len() {
            return Err(invalid("history values do not match grid × times"));
        }
        check_finite(&values)?;
        Ok(Self { grid, times: Some(times), values, exterior: None, singularity: None })
    }

    pub fn zeros(grid: TangentialGrid) -> Self {
        let values = vec![0.0; grid.len()];
        Self { grid, times: None, values, exterior: None, singularity: None }
    }

    pub fn from_fn(grid: TangentialGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|j| f(&grid.point(j))).collect();
        Self { grid, times: None, values, exterior: None, singularity: None }
    }

    pub fn n_times(&self) -> usize {
        self.times.as_ref().map_or(1, |t| t.len())
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            exterior: None,
            singularity: None,
        }
    }

    /// Linear combination `a·self + b·other`; the exterior model combines
    /// only when both are constants.
    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        same_boundary_shape(self, other)?;
        let exterior = match (self.exterior, other.exterior) {
            (Some(Exterior::Constant { value: x }), Some(Exterior::Constant { value: y })) => {
                Some(Exterior::Constant { value: a * x + b * y })
            }
            (Some(e), None) if b == 0.0 || other.values.iter().all(|&v| v == 0.0) => Some(e.scaled(a)),
            (None, Some(e)) if a == 0.0 || self.values.iter().all(|&v| v == 0.0) => Some(e.scaled(b)),
            _ => None,
        };
        Ok(Self {
            grid: self.grid.clone(),
            times: self.times.clone(),
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
            exterior,
            singularity: None,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation in space (time index `i`).
    pub fn sample_at(&self, i: usize, x: &[f64]) -> Result<f64> {
        interp_tangential(&self.grid, self.slice(i), x)
    }

    /// Space-time interpolation; linear in `log t` between time nodes.
    pub fn sample(&self, x: &[f64], t: f64) -> Result<f64> {
        match &self.times {
            None => self.sample_at(0, x),
            Some(times) => {
                let (i, s) = times
                    .locate(t)
                    .ok_or_else(|| Error::Extrapolation(format!("t = {t} outside the time window")))?;
                let a = self.sample_at(i, x)?;
                let b = self.sample_at(i + 1, x)?;
                Ok(a + s * (b - a))
            }
        }
    }
}

/// A function on `R^n_+ × [t_min, t_max]`, stored as (time, tangential…, normal).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: HalfSpaceGrid,
    pub times: TimeGrid,
    pub values: Vec<f64>,
}

impl Field {
    pub fn new(grid: HalfSpaceGrid, times: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * times.len() {
            return Err(invalid(format!(
                "expected {} values, got {}",
                grid.len() * times.len(),
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self { grid, times, values })
    }

    pub fn zeros(grid: HalfSpaceGrid, times: TimeGrid) -> Self {
        let values = vec![0.0; grid.len() * times.len()];
        Self { grid, times, values }
    }

    pub fn from_fn(grid: HalfSpaceGrid, times: TimeGrid, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len() * times.len());
        for &t in times.nodes() {
            for j in 0..grid.len() {
                values.push(f(&grid.point(j), t));
            }
        }
        Self { grid, times, values }
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn slice_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[i * n..(i + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn axpby(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.grid != other.grid || self.times != other.times {
            return Err(invalid("fields live on different grids"));
        }
        Ok(Self {
            grid: self.grid.clone(),
            times: self.times.clone(),
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Spatial interpolation at time index `i`: multilinear in `x′`, linear in `xn`.
    pub fn sample_at(&self, i: usize, x: &[f64]) -> Result<f64> {
        let g = &self.grid;
        if x.len() != g.n {
            return Err(invalid(format!("point has {} coordinates, expected {}", x.len(), g.n)));
        }
        let d = g.n - 1;
        let (k, s) = g
            .nor
            .locate(x[d])
            .ok_or_else(|| Error::Extrapolation(format!("xn = {} outside [0, {}]", x[d], g.nor.extent)))?;
        let slice = self.slice(i);
        let m_nor = g.nor.m;
        let plane = |kk: usize| -> Result<f64> {
            interp_strided(&g.tan, &x[..d], |tan| slice[tan * m_nor + kk])
        };
        let a = plane(k)?;
        let b = plane(k + 1)?;
        Ok(a + s * (b - a))
    }

    pub fn sample(&self, x: &[f64], t: f64) -> Result<f64> {
        let (i, s) = self
            .times
            .locate(t)
            .ok_or_else(|| Error::Extrapolation(format!("t = {t} outside the time window")))?;
        let a = self.sample_at(i, x)?;
        let b = self.sample_at(i + 1, x)?;
        Ok(a + s * (b - a))
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite field value"));
    }
    Ok(())
}

fn same_boundary_shape(a: &BoundaryField, b: &BoundaryField) -> Result<()> {
    if a.grid != b.grid || a.times != b.times {
        return Err(invalid("boundary fields live on different grids"));
    }
    Ok(())
}

fn interp_tangential(grid: &TangentialGrid, values: &[f64], x: &[f64]) -> Result<f64> {
    interp_strided(grid, x, |j| values[j])
}

fn interp_strided(grid: &TangentialGrid, x: &[f64], value: impl Fn(usize) -> f64) -> Result<f64> {
    if x.len() != grid.dim {
        return Err(invalid(format!("point has {} coordinates, expected {}", x.len(), grid.dim)));
    }
    let mut base = vec![0usize; grid.dim];
    let mut frac = vec![0.0; grid.dim];
    for a in 0..grid.dim {
        let (j, s) = grid
            .locate(x[a])
            .ok_or_else(|| Error::Extrapolation(format!("x[{a}] = {} outside the box", x[a])))?;
        base[a] = j;
        frac[a] = s;
    }
    let mut total = 0.0;
    let mut idx = vec![0usize; grid.dim];
    for corner in 0..(1usize << grid.dim) {
        let mut w = 1.0;
        for a in 0..grid.dim {
            let up = (corner >> a) & 1;
            idx[a] = base[a] + up;
            w *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if w != 0.0 {
            total += w * value(grid.ravel(&idx));
        }
    }
    Ok(total)
}

/// Values on the `xn = 0` plane at every time node.
pub fn trace(u: &Field) -> BoundaryField {
    let g = &u.grid;
    let nt = g.tan.len();
    let mut values = Vec::with_capacity(nt * u.times.len());
    for i in 0..u.times.len() {
        let s = u.slice(i);
        values.extend((0..nt).map(|j| s[g.index(j, 0)]));
    }
    BoundaryField {
        grid: g.tan.clone(),
        times: Some(u.times.clone()),
        values,
        exterior: None,
        singularity: None,
    }
}

/// Extend a boundary field constantly in `xn`; `trace(embed(b)) == b`.
pub fn embed(b: &BoundaryField, grid: &HalfSpaceGrid, times: &TimeGrid) -> Result<Field> {
    if b.grid != grid.tan {
        return Err(invalid("boundary grid does not match the half-space grid"));
    }
    let nt = grid.tan.len();
    let mut values = Vec::with_capacity(grid.len() * times.len());
    for i in 0..times.len() {
        let src = if b.times.is_some() { b.slice(i) } else { b.slice(0) };
        for j in 0..nt {
            values.extend(std::iter::repeat_n(src[j], grid.nor.m));
        }
    }
    if let Some(bt) = &b.times {
        if bt != times {
            return Err(invalid("boundary history uses a different time grid"));
        }
    }
    Field::new(grid.clone(), times.clone(), values)
}

const FIELD_MAGIC: &[u8; 8] = b"DYNBFLD1";
const BOUNDARY_MAGIC: &[u8; 8] = b"DYNBBND1";

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_payload(r: &mut impl Read, len: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

fn write_payload(w: &mut impl Write, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(w.write_all(&bytes)?)
}

/// Header: magic, then `n, m_tan, m_nor, m_t` as u64 and
/// `L_tan, L_nor, rho, t_min, t_max` as f64, all little-endian; then the
/// row-major payload.
pub fn write_field(w: &mut impl Write, u: &Field) -> Result<()> {
    let g = &u.grid;
    w.write_all(FIELD_MAGIC)?;
    for v in [g.n, g.tan.m, g.nor.m, u.times.len()] {
        put_u64(w, v as u64)?;
    }
    for v in [g.tan.half_width, g.nor.extent, g.nor.ratio, u.times.t_min, u.times.t_max] {
        put_f64(w, v)?;
    }
    write_payload(w, &u.values)
}

pub fn read_field(r: &mut impl Read) -> Result<Field> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format("not a field file".into()));
    }
    let n = get_u64(r)? as usize;
    let m_tan = get_u64(r)? as usize;
    let m_nor = get_u64(r)? as usize;
    let m_t = get_u64(r)? as usize;
    let l_tan = get_f64(r)?;
    let l_nor = get_f64(r)?;
    let rho = get_f64(r)?;
    let t_min = get_f64(r)?;
    let t_max = get_f64(r)?;
    if n > 16 || m_tan > 1 << 16 || m_nor > 1 << 16 || m_t > 1 << 16 {
        return Err(Error::Format("implausible field header".into()));
    }
    let grid = HalfSpaceGrid::new(n, l_tan, m_tan, l_nor, m_nor, rho)?;
    let times = TimeGrid::new(t_min, t_max, m_t)?;
    let values = read_payload(r, grid.len() * times.len())?;
    Field::new(grid, times, values)
}

/// Header: magic, then `dim, m, m_t` (0 for a single time) as u64 and
/// `L, t_min, t_max` as f64; then the payload.
pub fn write_boundary(w: &mut impl Write, b: &BoundaryField) -> Result<()> {
    w.write_all(BOUNDARY_MAGIC)?;
    let (m_t, t_min, t_max) = b.times.as_ref().map_or((0, 0.0, 0.0), |t| (t.len(), t.t_min, t.t_max));
    for v in [b.grid.dim, b.grid.m, m_t] {
        put_u64(w, v as u64)?;
    }
    for v in [b.grid.half_width, t_min, t_max] {
        put_f64(w, v)?;
    }
    write_payload(w, &b.values)
}

pub fn read_boundary(r: &mut impl Read) -> Result<BoundaryField> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != BOUNDARY_MAGIC {
        return Err(Error::Format("not a boundary field file".into()));
    }
    let dim = get_u64(r)? as usize;
    let m = get_u64(r)? as usize;
    let m_t = get_u64(r)? as usize;
    let l = get_f64(r)?;
    let t_min = get_f64(r)?;
    let t_max = get_f64(r)?;
    if dim > 16 || m > 1 << 16 || m_t > 1 << 16 {
        return Err(Error::Format("implausible boundary header".into()));
    }
    let grid = TangentialGrid::new(dim, l, m)?;
    if m_t == 0 {
        let values = read_payload(r, grid.len())?;
        BoundaryField::new(grid, values)
    } else {
        let times = TimeGrid::new(t_min, t_max, m_t)?;
        let values = read_payload(r, grid.len() * times.len())?;
        BoundaryField::history(grid, times, values)
    }
}

/// CSV of one normal plane at one time: tangential coordinates, then the value.
pub fn write_plane_csv(w: &mut impl Write, u: &Field, ti: usize, k: usize) -> Result<()> {
    let g = &u.grid;
    let header: Vec<String> = (1..g.n).map(|a| format!("x{a}")).chain(["value".to_string()]).collect();
    writeln!(w, "{}", header.join(","))?;
    let s = u.slice(ti);
    for j in 0..g.tan.len() {
        let p = g.tan.point(j);
        let cols: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{},{}", cols.join(","), s[g.index(j, k)])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (HalfSpaceGrid, TimeGrid) {
        (
            HalfSpaceGrid::new(3, 2.0, 9, 3.0, 6, 1.2).unwrap(),
            TimeGrid::new(0.1, 10.0, 5).unwrap(),
        )
    }

    #[test]
    fn trapezoid_weights_1d() {
        let g = TangentialGrid::new(1, 0.5, 5).unwrap();
        let w = g.weights();
        let h = 0.25;
        assert_eq!(w, vec![h / 2.0, h, h, h, h / 2.0]);
    }

    #[test]
    fn weights_sum_to_measure() {
        let (g, _) = small();
        let s: f64 = quadrature_weights(&g).iter().sum();
        assert!((s - g.measure()).abs() < 1e-12 * g.measure());
    }

    #[test]
    fn weights_integrate_linear_functions() {
        let g = HalfSpaceGrid::new(3, 2.0, 9, 3.0, 6, 1.0).unwrap();
        let w = quadrature_weights(&g);
        // ∫ (1 + x1 + 2 xn) over [-2,2]² × [0,3] = 16·3 + 0 + 2·16·4.5.
        let s: f64 = (0..g.len()).map(|j| {
            let p = g.point(j);
            w[j] * (1.0 + p[0] + 2.0 * p[2])
        }).sum();
        assert!((s - (48.0 + 144.0)).abs() < 1e-11);
    }

    #[test]
    fn normal_grid_grading() {
        let g = NormalGrid::new(8.0, 16, 1.15).unwrap();
        let x = g.nodes();
        assert_eq!(x[0], 0.0);
        assert_eq!(x[15], 8.0);
        assert!((x[2] - x[1] - 1.15 * x[1]).abs() < 1e-12);
        assert!(NormalGrid::new(8.0, 3, 1.1).is_err());
    }

    #[test]
    fn trace_examples() {
        let (g, t) = small();
        let c = Field::from_fn(g.clone(), t.clone(), |_, _| 3.0);
        assert!(trace(&c).values.iter().all(|&v| v == 3.0));
        let xn = Field::from_fn(g.clone(), t.clone(), |x, _| x[2] * (1.0 + x[0] * x[0]));
        assert!(trace(&xn).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn trace_of_embed_is_identity() {
        let (g, t) = small();
        let mut vals = Vec::new();
        for i in 0..t.len() {
            for j in 0..g.tan.len() {
                vals.push((i * 31 + j) as f64 * 0.1);
            }
        }
        let b = BoundaryField::history(g.tan.clone(), t.clone(), vals).unwrap();
        let u = embed(&b, &g, &t).unwrap();
        assert_eq!(trace(&u).values, b.values);
    }

    #[test]
    fn sample_is_exact_on_nodes_and_affine_functions() {
        let (g, t) = small();
        let f = |x: &[f64], s: f64| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2] + s.ln();
        let u = Field::from_fn(g.clone(), t.clone(), f);
        let p = g.point(37);
        assert_eq!(u.sample_at(2, &p).unwrap(), u.slice(2)[37]);
        for x in [[0.13, -1.7, 0.4], [1.99, 0.0, 2.9], [-0.77, 0.31, 0.017]] {
            let tt = 0.37;
            assert!((u.sample(&x, tt).unwrap() - f(&x, tt)).abs() < 1e-12);
        }
        assert!(matches!(u.sample(&[3.0, 0.0, 0.0], 1.0), Err(Error::Extrapolation(_))));
        assert!(matches!(u.sample(&[0.0, 0.0, 0.0], 20.0), Err(Error::Extrapolation(_))));
    }

    #[test]
    fn sample_quadratic_error_bound() {
        // One axis: the midpoint error of |x|² is exactly h²/4.
        for m in [9, 17, 33] {
            let g = TangentialGrid::new(1, 2.0, m).unwrap();
            let b = BoundaryField::from_fn(g.clone(), |x| x[0] * x[0]);
            let h = g.spacing();
            let worst = (0..m - 1)
                .map(|i| {
                    let c = g.coord(i) + 0.5 * h;
                    (b.sample_at(0, &[c]).unwrap() - c * c).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst <= 0.25 * h * h * (1.0 + 1e-12), "m={m}: {worst}");
        }
        // Per-axis errors add up at cell centres of the half-space grid.
        let (g, t) = small();
        let u = Field::from_fn(g.clone(), t, |x, _| x.iter().map(|v| v * v).sum());
        let h = g.tan.spacing();
        let x = g.nor.nodes();
        let mut worst: f64 = 0.0;
        let mut bound: f64 = 0.0;
        for k in 0..g.nor.m - 1 {
            let hn = x[k + 1] - x[k];
            let c = [g.tan.coord(3) + 0.5 * h, g.tan.coord(5) + 0.5 * h, 0.5 * (x[k] + x[k + 1])];
            let e = (u.sample_at(1, &c).unwrap() - c.iter().map(|v| v * v).sum::<f64>()).abs();
            worst = worst.max(e);
            bound = bound.max(0.25 * (2.0 * h * h + hn * hn));
        }
        assert!(worst <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn gaussian_integral_converges_at_second_order() {
        let errs: Vec<f64> = [17, 33, 65]
            .iter()
            .map(|&m| {
                let g = TangentialGrid::new(2, 1.0, m).unwrap();
                let w = g.weights();
                let s: f64 = (0..g.len())
                    .map(|j| {
                        let p = g.point(j);
                        w[j] * (-(p[0] * p[0] + p[1] * p[1])).exp()
                    })
                    .sum();
                // ∫_{[-1,1]²} e^{-r²} = π erf(1)²
                let erf1 = 0.842_700_792_949_714_9_f64;
                (s - std::f64::consts::PI * erf1 * erf1).abs()
            })
            .collect();
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(r1 > 3.8 && r2 > 3.8, "{errs:?}");
    }

    #[test]
    fn binary_round_trip() {
        let (g, t) = small();
        let u = Field::from_fn(g, t, |x, s| x[0] * s + x[2]);
        let mut buf = Vec::new();
        write_field(&mut buf, &u).unwrap();
        let v = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(u, v);
        let b = trace(&u);
        let mut buf = Vec::new();
        write_boundary(&mut buf, &b).unwrap();
        let c = read_boundary(&mut buf.as_slice()).unwrap();
        assert_eq!(b.values, c.values);
        assert!(read_field(&mut &b"garbage!"[..]).is_err());
    }

    #[test]
    fn csv_plane_has_header_and_rows() {
        let (g, t) = small();
        let u = Field::zeros(g.clone(), t);
        let mut buf = Vec::new();
        write_plane_csv(&mut buf, &u, 0, 0).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x1,x2,value\n"));
        assert_eq!(s.lines().count(), 1 + g.tan.len());
    }
}
