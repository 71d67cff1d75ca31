//! In-memory labeled datasets and seeded synthetic generators: Gaussian
//! blobs, two moons, and the Gaussian ring mixture used for GAN runs.

use alloc::vec::Vec;

use crate::math;
use crate::matrix::{CoreError, DenseMatrix, Result};
use crate::rng::SeededRng;

/// Features with integer labels; `image_shape` is set when rows are
/// flattened images (needed by blur corruption and conv encoders).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub image_shape: Option<(usize, usize, usize)>,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(CoreError::Data(alloc::format!(
                "{} rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(CoreError::Data(alloc::format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows selected by index, in order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = DenseMatrix::zeros(indices.len(), self.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).copy_from_slice(self.features.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            labels,
            classes: self.classes,
            image_shape: self.image_shape,
        }
    }
}

/// Class centers for a blob mixture, one row per class, i.i.d.
/// `N(0, scale^2)` coordinates.
pub fn blob_centers(
    classes: usize,
    dim: usize,
    scale: f64,
    rng: &mut SeededRng,
) -> Result<DenseMatrix> {
    if classes < 2 || dim == 0 {
        return Err(CoreError::Parameter(
            "blob centers need >= 2 classes and dim > 0".into(),
        ));
    }
    rng.gaussian_matrix(classes, dim, scale)
}

/// `n` samples scattered around fixed class centers with isotropic `spread`;
/// labels are assigned round-robin so classes stay balanced.
pub fn blobs_from_centers(
    centers: &DenseMatrix,
    spread: f64,
    n: usize,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let classes = centers.rows();
    let dim = centers.cols();
    if n == 0 {
        return Err(CoreError::Parameter("blobs need n > 0".into()));
    }
    let mut features = DenseMatrix::zeros(n, dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let row = features.row_mut(i);
        for (c, v) in row.iter_mut().enumerate() {
            *v = centers.get(y, c) + spread * rng.next_gaussian();
        }
        labels.push(y);
    }
    Dataset::new(features, labels, classes)
}

/// Train/test pair drawn around one shared set of centers.
pub fn gaussian_blobs_split(
    classes: usize,
    dim: usize,
    spread: f64,
    center_scale: f64,
    n_train: usize,
    n_test: usize,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset)> {
    let centers = blob_centers(classes, dim, center_scale, rng)?;
    let train = blobs_from_centers(&centers, spread, n_train, rng)?;
    let test = blobs_from_centers(&centers, spread, n_test, rng)?;
    Ok((train, test))
}

/// Per-class anisotropy: each class gets `axes` random orthonormal long
/// directions scaled by `long_scale`; the orthogonal complement keeps the
/// base spread. With unequal class covariances the clean-optimal decision
/// rule shifts under added input noise, which is what makes robustness
/// comparisons informative on synthetic data.
#[derive(Clone, Copy, Debug)]
pub struct Anisotropy {
    pub long_scale: f64,
    pub axes: usize,
}

/// Gaussian mixture with fixed centers and per-class anisotropic covariance
/// `spread^2 I + (long^2 - spread^2) sum_i u_i u_i^T`.
pub struct AnisotropicBlobs {
    centers: DenseMatrix,
    /// Per class, `axes` orthonormal rows.
    frames: Vec<DenseMatrix>,
    spread: f64,
    long_scale: f64,
}

impl AnisotropicBlobs {
    pub fn new(
        centers: DenseMatrix,
        spread: f64,
        aniso: Anisotropy,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let dim = centers.cols();
        if aniso.axes == 0 || aniso.axes > dim {
            return Err(CoreError::Parameter(alloc::format!(
                "anisotropy axes {} outside 1..={dim}",
                aniso.axes
            )));
        }
        let mut frames = Vec::with_capacity(centers.rows());
        for _ in 0..centers.rows() {
            frames.push(random_orthonormal_rows(aniso.axes, dim, rng)?);
        }
        Ok(AnisotropicBlobs {
            centers,
            frames,
            spread,
            long_scale: aniso.long_scale,
        })
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Result<Dataset> {
        let dim = self.centers.cols();
        let classes = self.centers.rows();
        let axes = self.frames[0].rows();
        let mut features = DenseMatrix::zeros(n, dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let y = i % classes;
            let frame = &self.frames[y];
            let mut g: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
            let w: Vec<f64> = (0..axes).map(|_| rng.next_gaussian()).collect();
            // Remove the long-axis components from the isotropic draw, then
            // add them back at the long scale.
            for a in 0..axes {
                let u = frame.row(a);
                let proj: f64 = g.iter().zip(u).map(|(x, y)| x * y).sum();
                for (gv, &uv) in g.iter_mut().zip(u) {
                    *gv -= proj * uv;
                }
            }
            let row = features.row_mut(i);
            for (c, r) in row.iter_mut().enumerate() {
                let mut v = self.centers.get(y, c) + self.spread * g[c];
                for a in 0..axes {
                    v += self.long_scale * w[a] * frame.get(a, c);
                }
                *r = v;
            }
            labels.push(y);
        }
        Dataset::new(features, labels, classes)
    }
}

/// `rows` orthonormal vectors in `dim` dimensions via Gram-Schmidt over
/// Gaussian draws.
fn random_orthonormal_rows(
    rows: usize,
    dim: usize,
    rng: &mut SeededRng,
) -> Result<DenseMatrix> {
    let mut out = DenseMatrix::zeros(rows, dim);
    for r in 0..rows {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
            for prev in 0..r {
                let u = out.row(prev);
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vv, &uv) in v.iter_mut().zip(u) {
                    *vv -= proj * uv;
                }
            }
            let norm = math::sqrt(v.iter().map(|x| x * x).sum());
            if norm > 1e-8 {
                for (o, vv) in out.row_mut(r).iter_mut().zip(&v) {
                    *o = vv / norm;
                }
                break;
            }
        }
    }
    Ok(out)
}

/// Train/test pair of anisotropic blobs sharing centers and class frames.
#[allow(clippy::too_many_arguments)]
pub fn anisotropic_blobs_split(
    classes: usize,
    dim: usize,
    spread: f64,
    aniso: Anisotropy,
    center_scale: f64,
    n_train: usize,
    n_test: usize,
    rng: &mut SeededRng,
) -> Result<(Dataset, Dataset)> {
    let centers = blob_centers(classes, dim, center_scale, rng)?;
    let mixture = AnisotropicBlobs::new(centers, spread, aniso, rng)?;
    let train = mixture.sample(n_train, rng)?;
    let test = mixture.sample(n_test, rng)?;
    Ok((train, test))
}

/// One blob dataset with freshly drawn centers.
pub fn gaussian_blobs(
    classes: usize,
    dim: usize,
    spread: f64,
    center_scale: f64,
    n: usize,
    rng: &mut SeededRng,
) -> Result<Dataset> {
    let centers = blob_centers(classes, dim, center_scale, rng)?;
    blobs_from_centers(&centers, spread, n, rng)
}

/// Two interleaving half circles with Gaussian jitter.
pub fn two_moons(n: usize, noise: f64, rng: &mut SeededRng) -> Result<Dataset> {
    if n < 2 {
        return Err(CoreError::Parameter("two_moons needs n >= 2".into()));
    }
    let mut features = DenseMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let t = math::PI * rng.next_f64();
        let (mut px, mut py) = if y == 0 {
            (math::cos(t), math::sin(t))
        } else {
            (1.0 - math::cos(t), 0.5 - math::sin(t))
        };
        px += noise * rng.next_gaussian();
        py += noise * rng.next_gaussian();
        features.set(i, 0, px);
        features.set(i, 1, py);
        labels.push(y);
    }
    Dataset::new(features, labels, 2)
}

/// Mixture of `modes` equal-weight 2-D Gaussians placed evenly on a circle.
#[derive(Clone, Debug)]
pub struct RingMixture {
    pub modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl RingMixture {
    pub fn new(modes: usize, radius: f64, sigma: f64) -> Result<Self> {
        if modes == 0 || radius <= 0.0 || sigma < 0.0 {
            return Err(CoreError::Parameter("ring mixture needs modes > 0, radius > 0, sigma >= 0".into()));
        }
        Ok(RingMixture { modes, radius, sigma })
    }

    pub fn center(&self, mode: usize) -> (f64, f64) {
        let theta = 2.0 * math::PI * mode as f64 / self.modes as f64;
        (self.radius * math::cos(theta), self.radius * math::sin(theta))
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(n, 2);
        for i in 0..n {
            let mode = rng.next_below(self.modes);
            let (cx, cy) = self.center(mode);
            out.set(i, 0, cx + self.sigma * rng.next_gaussian());
            out.set(i, 1, cy + self.sigma * rng.next_gaussian());
        }
        out
    }

    /// Index of the nearest mode center (for diagnostics).
    pub fn nearest_mode(&self, x: f64, y: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for m in 0..self.modes {
            let (cx, cy) = self.center(m);
            let d = (x - cx) * (x - cx) + (y - cy) * (y - cy);
            if d < best_d {
                best_d = d;
                best = m;
            }
        }
        best
    }
}
