//! Gauss–Legendre rules, geometrically graded composite rules, and singular
//! box integrals used to build cell-integrated kernel weights.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        let n = order as f64;
        for i in 0..order.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(order, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(order, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[order - 1 - i] = x;
            weights[i] = w;
            weights[order - 1 - i] = w;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = n as f64;
    let d = n * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared rule of the given order.
pub fn gauss(order: usize) -> std::sync::Arc<GaussLegendre> {
    static CACHE: OnceLock<Mutex<HashMap<usize, std::sync::Arc<GaussLegendre>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("gauss cache poisoned");
    guard
        .entry(order)
        .or_insert_with(|| std::sync::Arc::new(GaussLegendre::new(order)))
        .clone()
}

/// Composite rule on `[lo, hi]` whose panels double in width away from
/// `center` (clamped into the interval). The first panel has width
/// `max(scale, distance from center to the interval)`.
pub fn graded_rule(lo: f64, hi: f64, center: f64, scale: f64, order: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    if !(hi > lo) {
        return out;
    }
    let gl = gauss(order);
    let c = center.clamp(lo, hi);
    let dist = (center - c).abs();
    let len = hi - lo;
    let w0 = scale.max(dist).max(len * 1e-9);
    let mut push_side = |from: f64, to: f64| {
        let dir = if to >= from { 1.0 } else { -1.0 };
        let total = (to - from).abs();
        if total <= 0.0 {
            return;
        }
        let mut pos = 0.0;
        let mut width = w0.min(total);
        while pos < total {
            let end = (pos + width).min(total);
            // Absorb a sliver of a final panel into its neighbour.
            let end = if total - end < 0.25 * width { total } else { end };
            let (a, b) = (from + dir * pos, from + dir * end);
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            out.extend(gl.on(a, b));
            pos = end;
            width *= 2.0;
        }
    };
    push_side(c, hi);
    push_side(c, lo);
    out
}

/// Tensor-product graded quadrature of `f` over the box `[lo, hi]`, graded
/// toward `center` with length scale `scale` along every axis.
pub fn integrate_box(
    lo: &[f64],
    hi: &[f64],
    center: &[f64],
    scale: f64,
    order: usize,
    f: impl Fn(&[f64]) -> f64,
) -> f64 {
    let d = lo.len();
    let rules: Vec<Vec<(f64, f64)>> = (0..d)
        .map(|i| graded_rule(lo[i], hi[i], center[i], scale, order))
        .collect();
    if rules.iter().any(|r| r.is_empty()) {
        return if d == 0 { f(&[]) } else { 0.0 };
    }
    let mut point = vec![0.0; d];
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for i in 0..d {
            let (x, wi) = rules[i][idx[i]];
            point[i] = x;
            w *= wi;
        }
        total += w * f(&point);
        // Odometer increment.
        let mut axis = 0;
        loop {
            if axis == d {
                return total;
            }
            idx[axis] += 1;
            if idx[axis] < rules[axis].len() {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// `∫_box |y - x|^{-beta} dy` for a point `x` inside (or on the boundary of)
/// the box, `beta < d`. The box is split into one pyramid per face with apex
/// `x`; the radial integral is exact, leaving a smooth face integral.
pub fn singular_box_integral(x: &[f64], lo: &[f64], hi: &[f64], beta: f64) -> f64 {
    let d = x.len();
    debug_assert!(beta < d as f64);
    let mut total = 0.0;
    let mut face_lo = vec![0.0; d.saturating_sub(1)];
    let mut face_hi = vec![0.0; d.saturating_sub(1)];
    let mut face_c = vec![0.0; d.saturating_sub(1)];
    for axis in 0..d {
        let mut j = 0;
        for k in 0..d {
            if k != axis {
                face_lo[j] = lo[k];
                face_hi[j] = hi[k];
                face_c[j] = x[k];
                j += 1;
            }
        }
        for side in [lo[axis], hi[axis]] {
            let hgt = (side - x[axis]).abs();
            if hgt == 0.0 {
                continue;
            }
            let face = integrate_box(&face_lo, &face_hi, &face_c, hgt, 10, |v| {
                let mut r2 = hgt * hgt;
                for (vi, ci) in v.iter().zip(&face_c) {
                    r2 += (vi - ci) * (vi - ci);
                }
                r2.powf(-0.5 * beta)
            });
            total += hgt / (d as f64 - beta) * face;
        }
    }
    total
}
