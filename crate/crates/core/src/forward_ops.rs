//! Linear forward operators and their exact adjoints.
//!
//! Three operators are provided: the identity, a 1D convolution with a
//! normalized symmetric kernel under half-sample reflective boundaries, and
//! a 2D parallel-beam projector whose rows hold exact ray/pixel intersection
//! lengths computed by Siddon-style grid traversal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Odd-length symmetric convolution kernel with taps summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
}

impl Kernel1D {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn halfwidth(&self) -> usize {
        self.taps.len() / 2
    }
}

/// Sampled Gaussian, truncated at `halfwidth` and renormalized.
pub fn gaussian_kernel(sigma: f64, halfwidth: usize) -> Result<Kernel1D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Parameter(format!("kernel sigma must be positive, got {sigma}")));
    }
    if halfwidth == 0 {
        return Err(Error::Parameter("kernel halfwidth must be >= 1".into()));
    }
    let h = halfwidth as i64;
    let mut taps: Vec<f64> = (-h..=h)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    Ok(Kernel1D { taps })
}

/// Parallel-beam scan geometry over a square image centred on the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectorGeometry {
    /// Image side length in pixels.
    pub side: usize,
    pub n_angles: usize,
    pub n_bins: usize,
    pub pixel_size: f64,
    pub bin_size: f64,
}

impl Default for ProjectorGeometry {
    fn default() -> Self {
        Self {
            side: 64,
            n_angles: 60,
            n_bins: 95,
            pixel_size: 1.0,
            bin_size: 1.0,
        }
    }
}

impl ProjectorGeometry {
    pub fn with_side(side: usize, n_angles: usize) -> Self {
        let n_bins = ((side as f64 * 2f64.sqrt()).ceil() as usize + 4) | 1;
        Self {
            side,
            n_angles,
            n_bins,
            pixel_size: 1.0,
            bin_size: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side < 2 || self.n_angles < 1 {
            return Err(Error::Parameter("projector needs side >= 2 and n_angles >= 1".into()));
        }
        if !(self.pixel_size > 0.0 && self.bin_size > 0.0) {
            return Err(Error::Parameter("pixel and bin sizes must be positive".into()));
        }
        let fov = self.side as f64 * self.pixel_size * 2f64.sqrt();
        if (self.n_bins as f64) * self.bin_size < fov {
            return Err(Error::Parameter(format!(
                "{} bins of size {} do not cover the image diagonal {fov:.2}",
                self.n_bins, self.bin_size
            )));
        }
        Ok(())
    }

    pub fn n_pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn n_rays(&self) -> usize {
        self.n_angles * self.n_bins
    }

    pub fn angle(&self, a: usize) -> f64 {
        PI * a as f64 / self.n_angles as f64
    }

    pub fn bin_offset(&self, b: usize) -> f64 {
        (b as f64 - (self.n_bins as f64 - 1.0) / 2.0) * self.bin_size
    }
}

/// Sparse system matrix in compressed-row form; row index = angle * n_bins + bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Projector {
    geometry: ProjectorGeometry,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl Projector {
    /// Builds the intersection-length matrix, scaled by `scale` (use it to
    /// fold a count level into the operator).
    pub fn new(geometry: ProjectorGeometry, scale: f64) -> Result<Self> {
        geometry.validate()?;
        if !(scale > 0.0) {
            return Err(Error::Parameter("projector scale must be positive".into()));
        }
        let mut row_ptr = Vec::with_capacity(geometry.n_rays() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        let mut scratch = Vec::new();
        for a in 0..geometry.n_angles {
            let theta = geometry.angle(a);
            for b in 0..geometry.n_bins {
                trace_ray(&geometry, theta, geometry.bin_offset(b), &mut scratch);
                for &(col, len) in &scratch {
                    cols.push(col as u32);
                    vals.push(len * scale);
                }
                row_ptr.push(cols.len());
            }
        }
        Ok(Self {
            geometry,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn geometry(&self) -> &ProjectorGeometry {
        &self.geometry
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[lo..hi], &self.vals[lo..hi])
    }

    /// Number of rows; equals `geometry().n_rays()` unless rows were dropped.
    pub fn n_rows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Keeps only the rows for which `keep(row)` is true, in order.
    pub fn retain_rows(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for i in (0..self.n_rows()).filter(|&i| keep(i)) {
            let (c, v) = self.row(i);
            cols.extend_from_slice(c);
            vals.extend_from_slice(v);
            row_ptr.push(cols.len());
        }
        Self {
            geometry: self.geometry,
            row_ptr,
            cols,
            vals,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &w)| w * x[j as usize]).sum()
            })
            .collect()
    }

    fn adjoint(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.geometry.n_pixels()];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            let (c, v) = self.row(i);
            for (&j, &w) in c.iter().zip(v) {
                out[j as usize] += w * yi;
            }
        }
        out
    }
}

/// Intersection lengths of the line {t n + s d} with the pixel grid, where
/// d = (cos theta, sin theta) and n = (-sin theta, cos theta). Pixel (ix, iy)
/// spans x in [x0 + ix p, x0 + (ix + 1) p] and likewise in y; its flat index
/// is iy * side + ix.
fn trace_ray(g: &ProjectorGeometry, theta: f64, t: f64, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let p = g.pixel_size;
    let half = g.side as f64 * p / 2.0;
    let (dx, dy) = (theta.cos(), theta.sin());
    let (ox, oy) = (-t * dy, t * dx);
    // Parametric range of the ray inside the bounding square.
    let mut s_min = f64::NEG_INFINITY;
    let mut s_max = f64::INFINITY;
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < 1e-15 {
            if o < -half || o > half {
                return;
            }
        } else {
            let s1 = (-half - o) / d;
            let s2 = (half - o) / d;
            s_min = s_min.max(s1.min(s2));
            s_max = s_max.min(s1.max(s2));
        }
    }
    if s_max <= s_min {
        return;
    }
    let mut crossings = vec![s_min, s_max];
    for (o, d) in [(ox, dx), (oy, dy)] {
        if d.abs() < 1e-15 {
            continue;
        }
        for k in 0..=g.side {
            let s = (-half + k as f64 * p - o) / d;
            if s > s_min && s < s_max {
                crossings.push(s);
            }
        }
    }
    crossings.sort_unstable_by(f64::total_cmp);
    for w in crossings.windows(2) {
        let len = w[1] - w[0];
        if len <= 1e-12 * p {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let ix = ((ox + mid * dx + half) / p).floor();
        let iy = ((oy + mid * dy + half) / p).floor();
        if ix < 0.0 || iy < 0.0 || ix >= g.side as f64 || iy >= g.side as f64 {
            continue;
        }
        out.push((iy as usize * g.side + ix as usize, len));
    }
}

/// Half-sample symmetric reflection of an index into [0, n).
fn reflect(mut i: i64, n: i64) -> usize {
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

/// Linear forward model mapping parameters to predicted data.
#[derive(Clone, Debug, PartialEq)]
pub enum ForwardOp {
    Identity(usize),
    Conv1D { kernel: Kernel1D, n: usize },
    ParallelBeam(Projector),
}

impl ForwardOp {
    pub fn conv1d(kernel: Kernel1D, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("convolution length must be >= 1".into()));
        }
        Ok(ForwardOp::Conv1D { kernel, n })
    }

    pub fn parallel_beam(geometry: ProjectorGeometry, scale: f64) -> Result<Self> {
        Projector::new(geometry, scale).map(ForwardOp::ParallelBeam)
    }

    pub fn input_len(&self) -> usize {
        match self {
            ForwardOp::Identity(n) => *n,
            ForwardOp::Conv1D { n, .. } => *n,
            ForwardOp::ParallelBeam(p) => p.geometry.n_pixels(),
        }
    }

    pub fn output_len(&self) -> usize {
        match self {
            ForwardOp::Identity(n) => *n,
            ForwardOp::Conv1D { n, .. } => *n,
            ForwardOp::ParallelBeam(p) => p.n_rows(),
        }
    }

    pub fn apply(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_len(), theta.len())?;
        Ok(match self {
            ForwardOp::Identity(_) => theta.to_vec(),
            ForwardOp::Conv1D { kernel, n } => {
                let h = kernel.halfwidth() as i64;
                let n = *n as i64;
                (0..n)
                    .map(|i| {
                        kernel
                            .taps
                            .iter()
                            .enumerate()
                            .map(|(k, w)| w * theta[reflect(i + k as i64 - h, n)])
                            .sum()
                    })
                    .collect()
            }
            ForwardOp::ParallelBeam(p) => p.apply(theta),
        })
    }

    pub fn adjoint(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len(self.output_len(), v.len())?;
        Ok(match self {
            ForwardOp::Identity(_) => v.to_vec(),
            ForwardOp::Conv1D { kernel, n } => {
                let h = kernel.halfwidth() as i64;
                let n = *n as i64;
                let mut out = vec![0.0; n as usize];
                for i in 0..n {
                    let vi = v[i as usize];
                    for (k, w) in kernel.taps.iter().enumerate() {
                        out[reflect(i + k as i64 - h, n)] += w * vi;
                    }
                }
                out
            }
            ForwardOp::ParallelBeam(p) => p.adjoint(v),
        })
    }

    /// Adjoint applied to an all-ones data vector.
    pub fn sensitivity(&self) -> Vec<f64> {
        self.adjoint(&vec![1.0; self.output_len()])
            .expect("ones vector has the output length")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn kernel_shape_and_symmetry() {
        let k = gaussian_kernel(1.0, 15).unwrap();
        assert_eq!(k.taps().len(), 31);
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..15 {
            assert_eq!(k.taps()[i], k.taps()[30 - i]);
        }
        let d = gaussian_kernel(1e-6, 3).unwrap();
        assert_eq!(d.taps()[3], 1.0);
        assert!(d.taps().iter().enumerate().all(|(i, &t)| i == 3 || t == 0.0));
        assert!(gaussian_kernel(0.0, 3).is_err());
        assert!(gaussian_kernel(1.0, 0).is_err());
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(-7, 3), 0);
    }

    #[test]
    fn conv_preserves_constants() {
        let op = ForwardOp::conv1d(gaussian_kernel(1.0, 15).unwrap(), 40).unwrap();
        let y = op.apply(&vec![2.5; 40]).unwrap();
        assert!(y.iter().all(|v| (v - 2.5).abs() < 1e-12));
        // kernel wider than the signal still works
        let op = ForwardOp::conv1d(gaussian_kernel(2.0, 15).unwrap(), 4).unwrap();
        let y = op.apply(&[1.0; 4]).unwrap();
        assert!(y.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn identity_is_identity() {
        let op = ForwardOp::Identity(4);
        let x = [1.0, -2.0, 3.0, 0.5];
        assert_eq!(op.apply(&x).unwrap(), x);
        assert_eq!(op.adjoint(&x).unwrap(), x);
        assert_eq!(op.sensitivity(), vec![1.0; 4]);
        assert!(op.apply(&[1.0]).is_err());
    }

    #[test]
    fn conv_sensitivity_interior_is_one() {
        let op = ForwardOp::conv1d(gaussian_kernel(1.0, 15).unwrap(), 100).unwrap();
        let s = op.sensitivity();
        // reflective boundaries keep every column sum at one
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn single_pixel_axis_aligned_ray() {
        let g = ProjectorGeometry {
            side: 3,
            n_angles: 2,
            n_bins: 5,
            pixel_size: 0.5,
            bin_size: 0.5,
        };
        let op = ForwardOp::parallel_beam(g, 1.0).unwrap();
        let mut x = vec![0.0; 9];
        x[4] = 1.0;
        let y = op.apply(&x).unwrap();
        // angle 0 and angle pi/2, central bin
        assert!((y[2] - 0.5).abs() < 1e-12);
        assert!((y[5 + 2] - 0.5).abs() < 1e-12);
        assert_eq!(y[0], 0.0);
    }

    #[test]
    fn diagonal_ray_length() {
        let g = ProjectorGeometry {
            side: 4,
            n_angles: 4,
            n_bins: 7,
            pixel_size: 1.0,
            bin_size: 1.0,
        };
        let op = ForwardOp::parallel_beam(g, 1.0).unwrap();
        let y = op.apply(&[1.0; 16]).unwrap();
        // angle pi/4 through the centre crosses the full diagonal
        assert!((y[7 + 3] - 4.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn geometry_validation() {
        let g = ProjectorGeometry {
            n_bins: 10,
            ..ProjectorGeometry::default()
        };
        assert!(g.validate().is_err());
        assert!(ProjectorGeometry::default().validate().is_ok());
        assert_eq!(ProjectorGeometry::with_side(64, 60), ProjectorGeometry::default());
    }

    #[test]
    fn adjointness_small() {
        let mut st = RngStream::new(1);
        let ops = [
            ForwardOp::Identity(7),
            ForwardOp::conv1d(gaussian_kernel(1.5, 4).unwrap(), 7).unwrap(),
            ForwardOp::parallel_beam(ProjectorGeometry::with_side(8, 5), 1.0).unwrap(),
        ];
        for op in &ops {
            let x = st.sample_uniform(op.input_len());
            let v = st.sample_uniform(op.output_len());
            let lhs = dot(&op.apply(&x).unwrap(), &v);
            let rhs = dot(&x, &op.adjoint(&v).unwrap());
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs());
        }
    }
}
