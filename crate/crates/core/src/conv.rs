//! Exact linear convolution on uniform tangential grids.
//!
//! Kernels depend on the offset `x′ - y′` only, so a sum
//! `out[x] = Σ_y K(x - y) data[y]` over an `m^d` grid is a linear convolution.
//! Zero padding to at least `2m - 1` points per axis removes wrap-around,
//! which makes the FFT product identical to direct summation up to rounding.
//! Kernels are even in every axis, so their transforms are real and even and
//! are stored on the reduced index set `0..=P/2` per axis.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Smallest `2^a 3^b 5^c` not below `n`.
fn smooth_len(n: usize) -> usize {
    (n..)
        .find(|&k| {
            let mut v = k;
            for p in [2, 3, 5] {
                while v % p == 0 {
                    v /= p;
                }
            }
            v == 1
        })
        .expect("smooth numbers are unbounded")
}

/// Real spectrum of an axis-even kernel on the reduced index set.
#[derive(Clone, Debug)]
pub struct KernelSpectrum {
    values: Vec<f64>,
}

impl KernelSpectrum {
    pub fn bytes(&self) -> usize {
        self.values.len() * 8
    }
}

pub struct Convolver {
    dim: usize,
    m: usize,
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Reduced index of every padded index.
    reduced: Vec<u32>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("dim", &self.dim).field("m", &self.m).field("p", &self.p).finish()
    }
}

impl Convolver {
    pub fn new(dim: usize, m: usize) -> Self {
        let p = smooth_len(2 * m - 1);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(p);
        let inv = planner.plan_fft_inverse(p);
        let half = p / 2 + 1;
        let total = p.pow(dim as u32);
        let mut reduced = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for flat in 0..total {
            let mut f = flat;
            for a in (0..dim).rev() {
                idx[a] = f % p;
                f /= p;
            }
            let r = idx.iter().fold(0usize, |acc, &i| acc * half + i.min(p - i));
            reduced.push(r as u32);
        }
        Self { dim, m, p, fwd, inv, reduced }
    }

    pub fn padded_len(&self) -> usize {
        self.p
    }

    pub fn spectrum_len(&self) -> usize {
        self.p.pow(self.dim as u32)
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let p = self.p;
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut line = vec![Complex64::new(0.0, 0.0); p];
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let total = buf.len();
        for axis in 0..self.dim {
            let stride = p.pow((self.dim - 1 - axis) as u32);
            let block = stride * p;
            for base in (0..total).step_by(block) {
                for off in 0..stride {
                    let start = base + off;
                    if stride == 1 {
                        plan.process_with_scratch(&mut buf[start..start + p], &mut scratch);
                        continue;
                    }
                    for (i, v) in line.iter_mut().enumerate() {
                        *v = buf[start + i * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (i, v) in line.iter().enumerate() {
                        buf[start + i * stride] = *v;
                    }
                }
            }
        }
    }

    /// Padded flat index of a grid multi-index given as a flat grid index.
    fn embed_index(&self, grid_flat: usize) -> usize {
        let mut f = grid_flat;
        let mut out = 0;
        let mut scale = 1;
        for _ in 0..self.dim {
            out += (f % self.m) * scale;
            f /= self.m;
            scale *= self.p;
        }
        out
    }

    /// Transform of zero-padded grid data (`m^d` values, row-major).
    pub fn forward(&self, data: &[f64]) -> Vec<Complex64> {
        debug_assert_eq!(data.len(), self.m.pow(self.dim as u32));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.spectrum_len()];
        for (j, &v) in data.iter().enumerate() {
            if v != 0.0 {
                buf[self.embed_index(j)] = Complex64::new(v, 0.0);
            }
        }
        self.transform(&mut buf, false);
        buf
    }

    /// Spectrum of the kernel sampled at integer offsets in `[-(m-1), m-1]^d`.
    /// The kernel must satisfy `K(…, -z_a, …) = K(…, z_a, …)` for every axis.
    pub fn kernel_spectrum(&self, mut kernel: impl FnMut(&[i64]) -> f64) -> KernelSpectrum {
        let p = self.p;
        let total = self.spectrum_len();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        // Evaluate on the non-negative orthant and mirror.
        let half_count = self.m.pow(self.dim as u32);
        let mut off = vec![0i64; self.dim];
        for flat in 0..half_count {
            let mut f = flat;
            for a in (0..self.dim).rev() {
                off[a] = (f % self.m) as i64;
                f /= self.m;
            }
            let v = kernel(&off);
            if v == 0.0 {
                continue;
            }
            // All sign combinations of the nonzero offsets.
            for signs in 0..(1usize << self.dim) {
                let mut skip = false;
                let mut idx = 0usize;
                for a in 0..self.dim {
                    let neg = (signs >> a) & 1 == 1;
                    if neg && off[a] == 0 {
                        skip = true;
                        break;
                    }
                    let z = if neg { -off[a] } else { off[a] };
                    let wrapped = if z < 0 { (z + p as i64) as usize } else { z as usize };
                    idx = idx * p + wrapped;
                }
                if !skip {
                    buf[idx] = Complex64::new(v, 0.0);
                }
            }
        }
        self.transform(&mut buf, false);
        let half = p / 2 + 1;
        let mut values = vec![0.0; half.pow(self.dim as u32)];
        for (flat, c) in buf.iter().enumerate() {
            let r = self.reduced[flat] as usize;
            values[r] = c.re;
        }
        KernelSpectrum { values }
    }

    /// `acc += w · K ⊙ s`.
    pub fn accumulate(&self, acc: &mut [Complex64], kernel: &KernelSpectrum, s: &[Complex64], w: f64) {
        for ((a, &r), v) in acc.iter_mut().zip(&self.reduced).zip(s) {
            *a += v * (w * kernel.values[r as usize]);
        }
    }

    /// `acc += K ⊙ (wa·sa + wb·sb)`, the product with a linearly interpolated source.
    pub fn accumulate2(
        &self,
        acc: &mut [Complex64],
        kernel: &KernelSpectrum,
        sa: &[Complex64],
        wa: f64,
        sb: &[Complex64],
        wb: f64,
    ) {
        for (((a, &r), x), y) in acc.iter_mut().zip(&self.reduced).zip(sa).zip(sb) {
            *a += (x * wa + y * wb) * kernel.values[r as usize];
        }
    }

    /// Back-transform and extract the `m^d` output window.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, true);
        let scale = 1.0 / self.spectrum_len() as f64;
        (0..self.m.pow(self.dim as u32)).map(|j| spec[self.embed_index(j)].re * scale).collect()
    }

    /// Convolution of one data array with one kernel.
    pub fn convolve(&self, data: &[f64], kernel: &KernelSpectrum) -> Vec<f64> {
        let s = self.forward(data);
        let mut acc = vec![Complex64::new(0.0, 0.0); s.len()];
        self.accumulate(&mut acc, kernel, &s, 1.0);
        self.inverse(acc)
    }
}

/// Reference `O(N²)` summation `out[x] = Σ_y K(x - y) data[y]`.
pub fn direct_convolve(dim: usize, m: usize, data: &[f64], kernel: impl Fn(&[i64]) -> f64) -> Vec<f64> {
    let total = m.pow(dim as u32);
    let unravel = |mut f: usize| {
        let mut v = vec![0i64; dim];
        for a in (0..dim).rev() {
            v[a] = (f % m) as i64;
            f /= m;
        }
        v
    };
    let pts: Vec<Vec<i64>> = (0..total).map(unravel).collect();
    let mut off = vec![0i64; dim];
    pts.iter()
        .map(|x| {
            let mut s = 0.0;
            for (y, &v) in pts.iter().zip(data) {
                if v == 0.0 {
                    continue;
                }
                for a in 0..dim {
                    off[a] = x[a] - y[a];
                }
                s += kernel(&off) * v;
            }
            s
        })
        .collect()
}
