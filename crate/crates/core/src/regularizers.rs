//! Anisotropic total variation and its edge-preserving weighted variant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2D image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return Err(Error::Input(format!(
                "{width}x{height} image cannot hold {} values",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn check_nondegenerate(&self) -> Result<()> {
        if self.width * self.height < 2 {
            return Err(Error::Input("image needs at least two pixels".into()));
        }
        Ok(())
    }

    /// Forward differences (horizontal, vertical) at (row, col); zero on the
    /// last column/row.
    #[inline]
    fn diffs(&self, row: usize, col: usize) -> (f64, f64) {
        let i = row * self.width + col;
        let dh = if col + 1 < self.width {
            self.values[i + 1] - self.values[i]
        } else {
            0.0
        };
        let dv = if row + 1 < self.height {
            self.values[i + self.width] - self.values[i]
        } else {
            0.0
        };
        (dh, dv)
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Scatters d(penalty)/d(dh) and d(penalty)/d(dv) at one site onto the
/// pixels entering those differences.
#[inline]
fn scatter(grad: &mut [f64], width: usize, height: usize, row: usize, col: usize, gh: f64, gv: f64) {
    let i = row * width + col;
    if col + 1 < width {
        grad[i + 1] += gh;
        grad[i] -= gh;
    }
    if row + 1 < height {
        grad[i + width] += gv;
        grad[i] -= gv;
    }
}

/// Mean anisotropic total variation and its subgradient (sign(0) = 0).
pub fn tv(x: &Image2D) -> Result<(f64, Image2D)> {
    x.check_nondegenerate()?;
    let n = x.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for row in 0..x.height {
        for col in 0..x.width {
            let (dh, dv) = x.diffs(row, col);
            value += dh.abs() + dv.abs();
            scatter(&mut grad, x.width, x.height, row, col, sign(dh) / n, sign(dv) / n);
        }
    }
    Ok((value / n, Image2D::new(x.width, x.height, grad)?))
}

/// Whether the edge weights of [`eptv`] are held fixed when differentiating.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightGradient {
    #[default]
    Detached,
    Full,
}

/// Edge-aware weight w = 1 / (1 + (sqrt(dh^2 + dv^2 + eps) / kappa)^2).
pub fn edge_weight(dh: f64, dv: f64, kappa: f64, eps: f64) -> f64 {
    let g2 = dh * dh + dv * dv + eps;
    1.0 / (1.0 + g2 / (kappa * kappa))
}

/// Edge-preserving TV: mean over sites of w * (|dh| + |dv|).
pub fn eptv(x: &Image2D, kappa: f64, eps: f64, mode: WeightGradient) -> Result<(f64, Image2D)> {
    x.check_nondegenerate()?;
    if !(kappa > 0.0) || !(eps > 0.0) {
        return Err(Error::Parameter(format!(
            "kappa and eps must be positive, got {kappa} and {eps}"
        )));
    }
    let n = x.len() as f64;
    let k2 = kappa * kappa;
    let mut value = 0.0;
    let mut grad = vec![0.0; x.len()];
    for row in 0..x.height {
        for col in 0..x.width {
            let (dh, dv) = x.diffs(row, col);
            let w = edge_weight(dh, dv, kappa, eps);
            let l1 = dh.abs() + dv.abs();
            value += w * l1;
            let mut gh = w * sign(dh);
            let mut gv = w * sign(dv);
            if mode == WeightGradient::Full {
                // dw/dd = -w^2 * 2 d / kappa^2
                let c = -2.0 * w * w * l1 / k2;
                gh += c * dh;
                gv += c * dv;
            }
            scatter(&mut grad, x.width, x.height, row, col, gh / n, gv / n);
        }
    }
    Ok((value / n, Image2D::new(x.width, x.height, grad)?))
}
