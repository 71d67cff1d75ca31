//! Dataset sources: synthetic generators (blobs, two moons, Gaussian ring)
//! and file-backed data (CSV with an `f0,...,f{D-1},label` header, or a pair
//! of MBGT tensors for features and labels).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mbgnn_core::data::{
    blob_centers, blobs_from_centers, two_moons, Anisotropy, AnisotropicBlobs, Dataset,
    RingMixture,
};
use mbgnn_core::matrix::DenseMatrix;
use mbgnn_core::rng::{stream, SeededRng};

use crate::config::Config;
use crate::{mbgt, LabError};

#[derive(Clone, Debug)]
pub enum DatasetSource {
    SyntheticBlobs {
        classes: usize,
        dim: usize,
        spread: f64,
        center_scale: f64,
        /// 0 disables anisotropy; otherwise the long-axis standard deviation.
        aniso_scale: f64,
        aniso_axes: usize,
        train_size: usize,
        test_size: usize,
    },
    TwoMoons {
        noise: f64,
        train_size: usize,
        test_size: usize,
    },
    GaussianRing {
        modes: usize,
        radius: f64,
        sigma: f64,
        train_size: usize,
        test_size: usize,
    },
    CsvFile {
        train: PathBuf,
        test: PathBuf,
    },
    MbgtFile {
        train_features: PathBuf,
        train_labels: PathBuf,
        test_features: PathBuf,
        test_labels: PathBuf,
    },
}

impl DatasetSource {
    pub fn from_config(cfg: &Config) -> Result<Self, LabError> {
        let train_size = cfg.get_usize("dataset.train_size", 4000)?;
        let test_size = cfg.get_usize("dataset.test_size", 1000)?;
        match cfg.get_str("dataset.source", "blobs") {
            "blobs" => Ok(DatasetSource::SyntheticBlobs {
                classes: cfg.get_usize("dataset.classes", 8)?,
                dim: cfg.get_usize("dataset.dim", 16)?,
                spread: cfg.get_f64("dataset.spread", 1.0)?,
                center_scale: cfg.get_f64("dataset.center_scale", 1.0)?,
                aniso_scale: cfg.get_f64("dataset.aniso_scale", 0.0)?,
                aniso_axes: cfg.get_usize("dataset.aniso_axes", 3)?,
                train_size,
                test_size,
            }),
            "two_moons" => Ok(DatasetSource::TwoMoons {
                noise: cfg.get_f64("dataset.noise", 0.1)?,
                train_size,
                test_size,
            }),
            "ring" => Ok(DatasetSource::GaussianRing {
                modes: cfg.get_usize("dataset.modes", 8)?,
                radius: cfg.get_f64("dataset.radius", 2.0)?,
                sigma: cfg.get_f64("dataset.sigma", 0.05)?,
                train_size,
                test_size,
            }),
            "csv" => Ok(DatasetSource::CsvFile {
                train: PathBuf::from(cfg.require_str("dataset.train_csv")?),
                test: PathBuf::from(cfg.require_str("dataset.test_csv")?),
            }),
            "mbgt" => Ok(DatasetSource::MbgtFile {
                train_features: PathBuf::from(cfg.require_str("dataset.train_features")?),
                train_labels: PathBuf::from(cfg.require_str("dataset.train_labels")?),
                test_features: PathBuf::from(cfg.require_str("dataset.test_features")?),
                test_labels: PathBuf::from(cfg.require_str("dataset.test_labels")?),
            }),
            other => Err(LabError::Config(format!(
                "dataset.source `{other}` is not one of blobs|two_moons|ring|csv|mbgt"
            ))),
        }
    }

    /// Materialize train and test sets; synthetic sources draw from the
    /// `DATA` substream of `seed`, so the same seed yields the same bytes.
    pub fn load(&self, cfg: &Config, seed: u64) -> Result<(Dataset, Dataset), LabError> {
        let mut rng = SeededRng::substream(seed, &[stream::DATA]);
        let (mut train, mut test) = match self {
            DatasetSource::SyntheticBlobs {
                classes,
                dim,
                spread,
                center_scale,
                aniso_scale,
                aniso_axes,
                train_size,
                test_size,
            } => {
                let centers = blob_centers(*classes, *dim, *center_scale, &mut rng)?;
                if *aniso_scale > 0.0 {
                    let mixture = AnisotropicBlobs::new(
                        centers,
                        *spread,
                        Anisotropy {
                            long_scale: *aniso_scale,
                            axes: *aniso_axes,
                        },
                        &mut rng,
                    )?;
                    (
                        mixture.sample(*train_size, &mut rng)?,
                        mixture.sample(*test_size, &mut rng)?,
                    )
                } else {
                    let train = blobs_from_centers(&centers, *spread, *train_size, &mut rng)?;
                    let test = blobs_from_centers(&centers, *spread, *test_size, &mut rng)?;
                    (train, test)
                }
            }
            DatasetSource::TwoMoons {
                noise,
                train_size,
                test_size,
            } => (
                two_moons(*train_size, *noise, &mut rng)?,
                two_moons(*test_size, *noise, &mut rng)?,
            ),
            DatasetSource::GaussianRing {
                modes,
                radius,
                sigma,
                train_size,
                test_size,
            } => {
                let ring = RingMixture::new(*modes, *radius, *sigma)?;
                // Ring samples get their nearest mode as the label.
                let make = |n: usize, rng: &mut SeededRng| -> Result<Dataset, LabError> {
                    let features = ring.sample(n, rng);
                    let labels = (0..n)
                        .map(|i| ring.nearest_mode(features.get(i, 0), features.get(i, 1)))
                        .collect();
                    Ok(Dataset::new(features, labels, *modes)?)
                };
                (make(*train_size, &mut rng)?, make(*test_size, &mut rng)?)
            }
            DatasetSource::CsvFile { train, test } => (read_csv(train)?, read_csv(test)?),
            DatasetSource::MbgtFile {
                train_features,
                train_labels,
                test_features,
                test_labels,
            } => (
                read_mbgt_pair(train_features, train_labels)?,
                read_mbgt_pair(test_features, test_labels)?,
            ),
        };
        if let Some(shape) = image_shape_from_config(cfg)? {
            let expected = shape.0 * shape.1 * shape.2;
            if train.dim() != expected {
                return Err(LabError::Config(format!(
                    "dataset.image_* {shape:?} needs {expected} features, data has {}",
                    train.dim()
                )));
            }
            train.image_shape = Some(shape);
            test.image_shape = Some(shape);
        }
        Ok((train, test))
    }
}

fn image_shape_from_config(
    cfg: &Config,
) -> Result<Option<(usize, usize, usize)>, LabError> {
    let h = cfg.get_usize("dataset.image_height", 0)?;
    let w = cfg.get_usize("dataset.image_width", 0)?;
    let c = cfg.get_usize("dataset.image_channels", 1)?;
    match (h, w) {
        (0, 0) => Ok(None),
        (h, w) if h > 0 && w > 0 => Ok(Some((h, w, c))),
        _ => Err(LabError::Config(
            "dataset.image_height and dataset.image_width must be set together".into(),
        )),
    }
}

/// CSV layout: header `f0,...,f{D-1},label`, UTF-8, LF line endings.
pub fn read_csv(path: &Path) -> Result<Dataset, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(LabError::Data(format!("{}: empty file", path.display())));
    };
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 2 || cols.last() != Some(&"label") {
        return Err(LabError::Data(format!(
            "{}: header must end with `label`",
            path.display()
        )));
    }
    let dim = cols.len() - 1;
    for (i, c) in cols[..dim].iter().enumerate() {
        if *c != format!("f{i}") {
            return Err(LabError::Data(format!(
                "{}: header column {} is `{c}`, expected `f{i}`",
                path.display(),
                i
            )));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0usize;
    for (lineno, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(LabError::Data(format!(
                "{}: line {}: {} fields, expected {}",
                path.display(),
                lineno + 1,
                fields.len(),
                dim + 1
            )));
        }
        for f in &fields[..dim] {
            let v: f64 = f.trim().parse().map_err(|_| {
                LabError::Data(format!(
                    "{}: line {}: `{f}` is not a number",
                    path.display(),
                    lineno + 1
                ))
            })?;
            features.push(v);
        }
        let label: usize = fields[dim].trim().parse().map_err(|_| {
            LabError::Data(format!(
                "{}: line {}: `{}` is not a label",
                path.display(),
                lineno + 1,
                fields[dim]
            ))
        })?;
        labels.push(label);
        rows += 1;
    }
    if rows == 0 {
        return Err(LabError::Data(format!("{}: no data rows", path.display())));
    }
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let features = DenseMatrix::from_vec(rows, dim, features)
        .map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    Ok(Dataset::new(features, labels, classes.max(2))?)
}

pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<(), LabError> {
    let mut out = String::new();
    for i in 0..dataset.dim() {
        let _ = write!(out, "f{i},");
    }
    out.push_str("label\n");
    for r in 0..dataset.len() {
        for v in dataset.features.row(r) {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{}", dataset.labels[r]);
    }
    std::fs::write(path, out).map_err(|e| LabError::Data(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn read_mbgt_pair(features_path: &Path, labels_path: &Path) -> Result<Dataset, LabError> {
    let features = mbgt::read_matrix(features_path)?;
    let labels = mbgt::read_labels(labels_path)?;
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    Ok(Dataset::new(features, labels, classes.max(2))?)
}
