//! Boundary data recipes and seeded random families.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fields::{BoundaryField, Exterior, Field, HalfSpaceGrid, PowerSingularity, TangentialGrid, TimeGrid};
use crate::quadrature::singular_box_integral;

/// `amplitude · exp(-|x - center|² / width²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub amplitude: f64,
    pub width: f64,
    pub center: Vec<f64>,
}

impl Bump {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        self.amplitude * (-r2 / (self.width * self.width)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataRecipe {
    Zero,
    Constant { value: f64 },
    /// A single bump; an empty center means the origin.
    GaussianBump {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `amplitude · |x′|^{-k}`.
    HomogeneousPower { amplitude: f64, k: f64 },
    BumpSum { bumps: Vec<Bump> },
}

impl DataRecipe {
    pub fn build(&self, grid: &TangentialGrid) -> Result<BoundaryField> {
        let d = grid.dim;
        let mut field = match self {
            DataRecipe::Zero => BoundaryField::zeros(grid.clone()),
            DataRecipe::Constant { value } => BoundaryField::from_fn(grid.clone(), |_| *value),
            DataRecipe::GaussianBump { amplitude, width, center } => {
                let bump = Bump { amplitude: *amplitude, width: *width, center: pad_center(center, d)? };
                check_bump(&bump)?;
                BoundaryField::from_fn(grid.clone(), |x| bump.eval(x))
            }
            DataRecipe::HomogeneousPower { amplitude, k } => return homogeneous(grid, *amplitude, *k),
            DataRecipe::BumpSum { bumps } => {
                for b in bumps {
                    if b.center.len() != d {
                        return Err(invalid("bump center dimension does not match the grid"));
                    }
                    check_bump(b)?;
                }
                BoundaryField::from_fn(grid.clone(), |x| bumps.iter().map(|b| b.eval(x)).sum())
            }
        };
        field.exterior = Some(match self {
            DataRecipe::Constant { value } => Exterior::Constant { value: *value },
            _ => Exterior::Constant { value: 0.0 },
        });
        Ok(field)
    }

    /// Invariant under every rotation about the origin.
    pub fn is_radial(&self) -> bool {
        match self {
            DataRecipe::Zero | DataRecipe::Constant { .. } | DataRecipe::HomogeneousPower { .. } => true,
            DataRecipe::GaussianBump { center, .. } => center.iter().all(|&c| c == 0.0),
            DataRecipe::BumpSum { bumps } => bumps.iter().all(|b| b.center.iter().all(|&c| c == 0.0)),
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            DataRecipe::Zero => true,
            DataRecipe::Constant { value } => *value >= 0.0,
            DataRecipe::GaussianBump { amplitude, .. } | DataRecipe::HomogeneousPower { amplitude, .. } => {
                *amplitude >= 0.0
            }
            DataRecipe::BumpSum { bumps } => bumps.iter().all(|b| b.amplitude >= 0.0),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            DataRecipe::Zero => {}
            DataRecipe::Constant { value } => *value *= s,
            DataRecipe::GaussianBump { amplitude, .. } | DataRecipe::HomogeneousPower { amplitude, .. } => {
                *amplitude *= s
            }
            DataRecipe::BumpSum { bumps } => bumps.iter_mut().for_each(|b| b.amplitude *= s),
        }
        out
    }

    /// Degree of homogeneity `k` when the datum is `A|x′|^{-k}`.
    pub fn homogeneity(&self) -> Option<f64> {
        match self {
            DataRecipe::HomogeneousPower { k, .. } => Some(*k),
            _ => None,
        }
    }
}

fn pad_center(center: &[f64], d: usize) -> Result<Vec<f64>> {
    match center.len() {
        0 => Ok(vec![0.0; d]),
        l if l == d => Ok(center.to_vec()),
        _ => Err(invalid("bump center dimension does not match the grid")),
    }
}

fn check_bump(b: &Bump) -> Result<()> {
    if !(b.width > 0.0) || !b.amplitude.is_finite() || b.center.iter().any(|c| !c.is_finite()) {
        return Err(invalid("bump needs a positive width and finite amplitude and center"));
    }
    Ok(())
}

/// `A|x′|^{-k}` with the origin node holding the cell average.
pub fn homogeneous(grid: &TangentialGrid, amplitude: f64, k: f64) -> Result<BoundaryField> {
    let d = grid.dim as f64;
    if !(k > 0.0 && k < d) {
        return Err(invalid(format!("homogeneity degree {k} must lie in (0, {d})")));
    }
    let h = grid.spacing();
    let half = vec![0.5 * h; grid.dim];
    let neg: Vec<f64> = half.iter().map(|v| -v).collect();
    let origin = singular_box_integral(&vec![0.0; grid.dim], &neg, &half, k) / h.powi(grid.dim as i32);
    let mut f = BoundaryField::from_fn(grid.clone(), |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        // Nodes at round-off distance from 0 count as the origin.
        if r2 <= (1e-12 * h) * (1e-12 * h) {
            amplitude * origin
        } else {
            amplitude * r2.powf(-0.5 * k)
        }
    });
    f.exterior = Some(Exterior::Power { amplitude, k });
    f.singularity = Some(PowerSingularity { amplitude, k });
    Ok(f)
}

/// 1–`max_count` bumps with log-uniform widths in `widths`, centers uniform in
/// `[-spread, spread]^dim` and amplitudes uniform in `[0.5, 1]` (random sign
/// when `signed`).
pub fn random_bumps(
    rng: &mut impl Rng,
    dim: usize,
    max_count: usize,
    widths: (f64, f64),
    spread: f64,
    signed: bool,
) -> Vec<Bump> {
    let count = rng.gen_range(1..=max_count.max(1));
    (0..count)
        .map(|_| {
            let width = (widths.0.ln() + rng.gen::<f64>() * (widths.1.ln() - widths.0.ln())).exp();
            let center = (0..dim).map(|_| spread * (2.0 * rng.gen::<f64>() - 1.0)).collect();
            let mut amplitude = 0.5 + 0.5 * rng.gen::<f64>();
            if signed && rng.gen::<bool>() {
                amplitude = -amplitude;
            }
            Bump { amplitude, width, center }
        })
        .collect()
}

/// Time-independent half-space field built from bumps in `R^n` (centers may
/// sit below the boundary plane).
pub fn half_space_bumps(grid: &HalfSpaceGrid, times: &TimeGrid, bumps: &[Bump]) -> Field {
    Field::from_fn(grid.clone(), times.clone(), |x, _| bumps.iter().map(|b| b.eval(x)).sum())
}
