//! Poisson kernel of the half-space, its even extension, the Dirichlet Green
//! function, Riesz kernels, and cell-integrated versions used as quadrature
//! weights on uniform tangential grids.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss, integrate_box, singular_box_integral};
use crate::report::ProbeReport;

/// `Γ(n/2)` from the integer and half-integer closed forms.
pub fn gamma_half(n: usize) -> f64 {
    assert!(n >= 1);
    if n.is_multiple_of(2) {
        (1..n / 2).map(|k| k as f64).product()
    } else {
        // Γ(1/2 + j) = sqrt(π) (2j-1)!! / 2^j
        let j = (n - 1) / 2;
        let mut v = PI.sqrt();
        for i in 0..j {
            v *= 0.5 + i as f64;
        }
        v
    }
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub n: usize,
    pub c_n: f64,
    pub cbar_n: f64,
}

impl KernelConstants {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(invalid(format!("kernel constants need n >= 3, got {n}")));
        }
        let c_n = gamma_half(n) * PI.powf(-(n as f64) / 2.0);
        Ok(Self { n, c_n, cbar_n: c_n / (2.0 * (n as f64 - 2.0)) })
    }

    /// `ĉ_n = c_n (∫_0^{π/2} cos(r)^{(n-1)q-2} dr)^{1/q}`, evaluated numerically.
    pub fn c_hat(&self, q: f64) -> f64 {
        let e = (self.n as f64 - 1.0) * q - 2.0;
        let integral = cos_power_integral(e);
        self.c_n * integral.powf(1.0 / q)
    }
}

/// `∫_0^{π/2} cos(r)^e dr` for `e >= 0`.
fn cos_power_integral(e: f64) -> f64 {
    // Substituting r = π/2 - s leaves sin(s)^e, which vanishes at s = 0 like s^e;
    // a graded rule toward s = 0 keeps this accurate for fractional e.
    let rule = crate::quadrature::graded_rule(0.0, PI / 2.0, 0.0, 1e-3, 16);
    rule.iter().map(|&(s, w)| w * s.sin().powf(e)).sum()
}

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `c_n xn / (xn² + |xp|²)^{n/2}` without argument checks.
#[inline]
pub fn poisson_unchecked(r2: f64, xn: f64, c: &KernelConstants) -> f64 {
    let s = xn * xn + r2;
    c.c_n * xn / (s.powi(c.n as i32 / 2) * if c.n % 2 == 1 { s.sqrt() } else { 1.0 })
}

pub fn poisson(xp: &[f64], xn: f64, c: &KernelConstants) -> Result<f64> {
    check_tangential(xp, c)?;
    if !(xn > 0.0) || !xn.is_finite() {
        return Err(Error::Domain(format!("poisson kernel needs xn > 0, got {xn}")));
    }
    Ok(poisson_unchecked(norm2(xp), xn, c))
}

/// Even extension in `xn`: `P(xp, t + |xn|)`.
pub fn poisson_bar(xp: &[f64], xn: f64, t: f64, c: &KernelConstants) -> Result<f64> {
    check_tangential(xp, c)?;
    if !(t > 0.0) || !t.is_finite() || !xn.is_finite() {
        return Err(Error::Domain(format!("extended poisson kernel needs t > 0, got {t}")));
    }
    let depth = if xn > 0.0 { t + xn } else { t - xn };
    Ok(poisson_unchecked(norm2(xp), depth, c))
}

fn check_tangential(xp: &[f64], c: &KernelConstants) -> Result<()> {
    if xp.len() != c.n - 1 {
        return Err(invalid(format!("tangential point has {} coordinates, expected {}", xp.len(), c.n - 1)));
    }
    if xp.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite tangential coordinate"));
    }
    Ok(())
}

/// Green function from the squared distance and the normal coordinates.
///
/// Uses `|x-ỹ|² = |x-y|² + 4 xn yn` so that
/// `1 - (|x-y|/|x-ỹ|)^{n-2} = -expm1(-(n-2)/2 · ln1p(4 xn yn / |x-y|²))`
/// keeps full relative accuracy when the two Newtonian terms nearly cancel.
#[inline]
pub fn green_from_parts(r2: f64, xn: f64, yn: f64, c: &KernelConstants) -> f64 {
    let half = 0.5 * (c.n as f64 - 2.0);
    let newton = if c.n == 3 { 1.0 / r2.sqrt() } else { r2.powf(-half) };
    let factor = -(-half * (4.0 * xn * yn / r2).ln_1p()).exp_m1();
    c.cbar_n * newton * factor
}

pub fn green(x: &[f64], y: &[f64], c: &KernelConstants) -> Result<f64> {
    let n = c.n;
    if x.len() != n || y.len() != n {
        return Err(invalid(format!("green expects points in R^{n}")));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite point"));
    }
    if x[n - 1] < 0.0 || y[n - 1] < 0.0 {
        return Err(Error::Domain("green function is defined on the closed half-space".into()));
    }
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if r2 == 0.0 {
        return Err(Error::Singularity);
    }
    Ok(green_from_parts(r2, x[n - 1], y[n - 1], c))
}

/// The two Newtonian terms evaluated separately (the textbook formula).
pub fn green_naive(x: &[f64], y: &[f64], c: &KernelConstants) -> f64 {
    let n = c.n;
    let e = 2.0 - n as f64;
    let mut r2 = 0.0;
    let mut s2 = 0.0;
    for i in 0..n {
        let d = x[i] - y[i];
        r2 += d * d;
        let di = if i == n - 1 { x[i] + y[i] } else { d };
        s2 += di * di;
    }
    c.cbar_n * (r2.powf(e / 2.0) - s2.powf(e / 2.0))
}

pub fn riesz_kernel(x: &[f64], gamma: f64) -> Result<f64> {
    let d = x.len() as f64;
    if !(gamma > 0.0 && gamma < d) {
        return Err(invalid(format!("riesz order {gamma} outside (0, {d})")));
    }
    let r2 = norm2(x);
    if r2 == 0.0 {
        return Err(Error::Singularity);
    }
    Ok(r2.powf(-(d - gamma) / 2.0))
}

/// Closed-form mass of `P(·, a)` over the rectangle `[x1,x2]×[y1,y2]` (n = 3).
fn poisson_rect_mass_2d(x1: f64, x2: f64, y1: f64, y2: f64, a: f64) -> f64 {
    let f = |x: f64, y: f64| (x * y / (a * (a * a + x * x + y * y).sqrt())).atan();
    (f(x2, y2) - f(x1, y2) - f(x2, y1) + f(x1, y1)) / (2.0 * PI)
}

/// `∫_box P(w, a) dw` for an axis-aligned box in `R^{n-1}`.
pub fn poisson_box_mass(lo: &[f64], hi: &[f64], a: f64, c: &KernelConstants) -> f64 {
    debug_assert_eq!(lo.len(), c.n - 1);
    if c.n == 3 {
        return poisson_rect_mass_2d(lo[0], hi[0], lo[1], hi[1], a);
    }
    let center = vec![0.0; lo.len()];
    integrate_box(lo, hi, &center, a, 8, |w| poisson_unchecked(norm2(w), a, c))
}

/// Mass of `P(·, a)` over the cell of side `h` centred at `z`, the weight a
/// unit nodal value at offset `z` receives.
pub fn poisson_cell_weight(z: &[f64], h: f64, a: f64, c: &KernelConstants) -> f64 {
    let dist2: f64 = z.iter().map(|v| (v.abs() - 0.5 * h).max(0.0).powi(2)).sum();
    let lo: Vec<f64> = z.iter().map(|v| v - 0.5 * h).collect();
    let hi: Vec<f64> = z.iter().map(|v| v + 0.5 * h).collect();
    // Without a closed form, far cells use tensor Gauss (error ~ (h/dist)^8).
    if c.n != 3 && dist2 > (4.0 * h) * (4.0 * h) {
        return tensor_gauss(&lo, &hi, 4, |w| poisson_unchecked(norm2(w), a, c));
    }
    poisson_box_mass(&lo, &hi, a, c)
}

/// Cell integral of the Green function over `[z ± h/2] × [ylo, yhi]` seen from
/// the point `(0, xn)`.
pub fn green_cell_weight(z: &[f64], h: f64, xn: f64, ylo: f64, yhi: f64, near: f64, c: &KernelConstants) -> f64 {
    if xn == 0.0 {
        return 0.0;
    }
    let d = z.len();
    let mut lo: Vec<f64> = z.iter().map(|v| v - 0.5 * h).collect();
    let mut hi: Vec<f64> = z.iter().map(|v| v + 0.5 * h).collect();
    lo.push(ylo);
    hi.push(yhi);
    let mut x = vec![0.0; d];
    x.push(xn);
    let gap2 = box_gap2(&x, &lo, &hi);
    let size = h.max(yhi - ylo);
    let kernel = |y: &[f64]| {
        let r2: f64 = (0..d).map(|i| y[i] * y[i]).sum::<f64>() + (xn - y[d]) * (xn - y[d]);
        green_from_parts(r2, xn, y[d], c)
    };
    if gap2 == 0.0 {
        // The cell contains x: integrate the Newtonian singularity exactly and
        // subtract the smooth image term.
        let beta = c.n as f64 - 2.0;
        let direct = c.cbar_n * singular_box_integral(&x, &lo, &hi, beta);
        let mirror = [x[..d].to_vec(), vec![-xn]].concat();
        let image = integrate_box(&lo, &hi, &mirror, xn + ylo.max(0.0), 6, |y| {
            let r2: f64 = (0..d).map(|i| y[i] * y[i]).sum::<f64>() + (xn + y[d]) * (xn + y[d]);
            c.cbar_n * r2.powf(-beta / 2.0)
        });
        direct - image
    } else if gap2 < (near * size) * (near * size) {
        integrate_box(&lo, &hi, &x, gap2.sqrt(), 5, kernel)
    } else {
        tensor_gauss(&lo, &hi, 2, kernel)
    }
}

/// Cell integral of `|·|^{-beta}` over `[z ± h/2] × [ylo, yhi]` seen from
/// `(0, xn)`; with `normal = None` the cell is purely tangential.
pub fn riesz_cell_weight(z: &[f64], h: f64, normal: Option<(f64, f64, f64)>, beta: f64, near: f64) -> f64 {
    let d = z.len();
    let mut lo: Vec<f64> = z.iter().map(|v| v - 0.5 * h).collect();
    let mut hi: Vec<f64> = z.iter().map(|v| v + 0.5 * h).collect();
    let mut x = vec![0.0; d];
    let mut size = h;
    if let Some((xn, ylo, yhi)) = normal {
        lo.push(ylo);
        hi.push(yhi);
        x.push(xn);
        size = size.max(yhi - ylo);
    }
    let gap2 = box_gap2(&x, &lo, &hi);
    let kernel = |y: &[f64]| {
        let r2: f64 = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
        r2.powf(-beta / 2.0)
    };
    if gap2 == 0.0 {
        singular_box_integral(&x, &lo, &hi, beta)
    } else if gap2 < (near * size) * (near * size) {
        integrate_box(&lo, &hi, &x, gap2.sqrt(), 5, kernel)
    } else {
        tensor_gauss(&lo, &hi, 2, kernel)
    }
}

fn box_gap2(x: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&a, &b))| {
            if v < a {
                (a - v) * (a - v)
            } else if v > b {
                (v - b) * (v - b)
            } else {
                0.0
            }
        })
        .sum()
}

/// Tensor Gauss rule of the given order on a box.
pub fn tensor_gauss(lo: &[f64], hi: &[f64], order: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let d = lo.len();
    let g = gauss(order);
    let pts: Vec<Vec<(f64, f64)>> = (0..d).map(|i| g.on(lo[i], hi[i]).collect()).collect();
    let mut idx = vec![0usize; d];
    let mut y = vec![0.0; d];
    let mut total = 0.0;
    loop {
        let mut w = 1.0;
        for i in 0..d {
            let (v, wi) = pts[i][idx[i]];
            y[i] = v;
            w *= wi;
        }
        total += w * f(&y);
        let mut axis = 0;
        loop {
            if axis == d {
                return total;
            }
            idx[axis] += 1;
            if idx[axis] < order {
                break;
            }
            idx[axis] = 0;
            axis += 1;
        }
    }
}

/// `‖P(z, · + t)‖_{L^q(0,∞)}` by the substitution `xn + t = |z| tan θ`,
/// which turns the integrand into `sin^q θ cos^{q(n-1)-2} θ` on `[atan(t/|z|), π/2]`.
pub fn poisson_normal_lq(zabs: f64, t: f64, q: f64, c: &KernelConstants) -> f64 {
    let n = c.n as f64;
    let theta0 = (t / zabs).atan();
    let e = q * (n - 1.0) - 2.0;
    // Graded toward π/2, where the cosine power vanishes.
    let rule = crate::quadrature::graded_rule(theta0, PI / 2.0, PI / 2.0, 1e-3, 20);
    let integral: f64 = rule
        .iter()
        .map(|&(th, w)| w * th.sin().powf(q) * (PI / 2.0 - th).sin().powf(e))
        .sum();
    c.c_n * zabs.powf(1.0 - n + 1.0 / q) * integral.powf(1.0 / q)
}

/// Ratios of the left to the right side of the two pointwise kernel bounds
/// and of the elementary interpolation inequality over seeded random inputs.
pub fn kernel_bound_probe(n: usize, samples: usize, theta: f64, q: f64, seed: u64) -> Result<ProbeReport> {
    if !(0.0..1.0).contains(&theta) {
        return Err(invalid(format!("theta = {theta} outside [0, 1)")));
    }
    if !(q >= 1.0) || !q.is_finite() {
        return Err(invalid(format!("q = {q} must be a finite exponent >= 1")));
    }
    let c = KernelConstants::new(n)?;
    let nf = n as f64;
    let chat = c.c_hat(q);
    let s = nf - 1.0 - 1.0 / q;
    let tol = 1e-9;
    let mut report = ProbeReport::new("kernel_bounds", 1.0 + tol);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| (rng.gen_range(lo.ln()..hi.ln())).exp();
    let mut est1_max: f64 = 0.0;
    let mut est2_max: f64 = 0.0;
    for id in 0..samples {
        let zabs = log_uniform(&mut rng, 1e-2, 1e2);
        let t = log_uniform(&mut rng, 1e-2, 1e2);
        let xn = log_uniform(&mut rng, 1e-3, 1e2);
        let yn = log_uniform(&mut rng, 1e-3, 1e2);
        let lhs1 = poisson_normal_lq(zabs, t, q, &c);
        let rhs1 = chat * t.powf(-theta * s) * zabs.powf(-(1.0 - theta) * s);
        let r1 = lhs1 / rhs1;
        let lhs2 = poisson_unchecked(zabs * zabs, xn + yn + t, &c);
        let dist = (zabs * zabs + (xn - yn) * (xn - yn)).sqrt();
        let rhs2 = c.c_n * t.powf(-theta * (nf - 1.0)) * dist.powf(-(1.0 - theta) * (nf - 1.0));
        let r2 = lhs2 / rhs2;
        est1_max = est1_max.max(r1);
        est2_max = est2_max.max(r2);
        report.observe(id, r1.max(r2));
    }
    // Tail regime at fixed t with theta = 0: the ratio settles to a constant.
    for zabs in [10.0, 100.0, 1000.0] {
        let r = poisson_normal_lq(zabs, 1.0, q, &c) / (chat * zabs.powf(-s));
        report.note(format!("tail_ratio_z{zabs}"), r);
    }
    // Elementary inequality (a²+b²)^{-q} <= (a^{2θ} b^{2(1-θ)})^{-q}.
    let mut interp_max: f64 = 0.0;
    for _ in 0..100_000 {
        let a = log_uniform(&mut rng, 1e-3, 1e3);
        let b = log_uniform(&mut rng, 1e-3, 1e3);
        let th = rng.gen_range(0.0..1.0);
        let log_ratio = q * (2.0 * th * a.ln() + 2.0 * (1.0 - th) * b.ln() - (a * a + b * b).ln());
        interp_max = interp_max.max(log_ratio.exp());
    }
    report.note("est1_max", est1_max);
    report.note("est2_max", est2_max);
    report.note("interpolation_max", interp_max);
    report.note("c_hat", chat);
    report.pass = report.max_ratio.is_finite() && report.max_ratio <= 1.0 + tol && interp_max <= 1.0 + tol;
    Ok(report)
}
