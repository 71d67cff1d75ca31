//! Model checkpoints: a directory of MBGT tensors plus a plain-text manifest
//! carrying the model configuration and the tensor table.

use std::fmt::Write as _;
use std::path::Path;

use mbgnn_core::model::Classifier;

use crate::builders::{build_classifier, DataShape};
use crate::config::Config;
use crate::{mbgt, LabError};

const HEADER: &str = "mbgnn-checkpoint v1";

/// Write `dir/manifest.txt` plus one `.mbgt` file per parameter. The config
/// section records everything needed to rebuild the model shape.
pub fn save(dir: &Path, clf: &Classifier, model_cfg: &Config, shape: &DataShape) -> Result<(), LabError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{HEADER}");

    let mut cfg = model_cfg.clone();
    cfg.set("dataset.dim", shape.input_dim);
    cfg.set("dataset.classes", shape.classes);
    if let Some((h, w, c)) = shape.image_shape {
        cfg.set("dataset.image_height", h);
        cfg.set("dataset.image_width", w);
        cfg.set("dataset.image_channels", c);
    }
    manifest.push_str(&cfg.echo());
    manifest.push_str("[tensors]\n");

    let mut tensors: Vec<(String, usize, usize)> = Vec::new();
    clf.visit_params(&mut |name, p| {
        tensors.push((name.to_string(), p.rows(), p.cols()));
    });
    let mut save_err = None;
    let mut idx = 0usize;
    clf.visit_params(&mut |name, p| {
        let file = format!("{name}.mbgt");
        if save_err.is_none() {
            if let Err(e) = mbgt::write_matrix(&dir.join(&file), p) {
                save_err = Some(e);
            }
        }
        let _ = writeln!(
            manifest,
            "{} {} {} {}",
            name, tensors[idx].1, tensors[idx].2, file
        );
        idx += 1;
    });
    if let Some(e) = save_err {
        return Err(e);
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Rebuild the classifier from a checkpoint directory. Weights are restored
/// at float32 precision (the MBGT payload width).
pub fn load(dir: &Path) -> Result<Classifier, LabError> {
    let manifest_path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| LabError::Format(format!("{}: {e}", manifest_path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => {
            return Err(LabError::Format(format!(
                "{}: bad header {other:?}",
                manifest_path.display()
            )))
        }
    }

    let mut config_text = String::new();
    let mut tensor_lines = Vec::new();
    let mut in_tensors = false;
    for line in lines {
        if line == "[tensors]" {
            in_tensors = true;
            continue;
        }
        if in_tensors {
            if !line.trim().is_empty() {
                tensor_lines.push(line.to_string());
            }
        } else {
            config_text.push_str(line);
            config_text.push('\n');
        }
    }
    let cfg = Config::parse(&config_text)?;
    let image_shape = if cfg.contains("dataset.image_height") {
        Some((
            cfg.get_usize("dataset.image_height", 0)?,
            cfg.get_usize("dataset.image_width", 0)?,
            cfg.get_usize("dataset.image_channels", 1)?,
        ))
    } else {
        None
    };
    let shape = DataShape {
        input_dim: cfg.get_usize("dataset.dim", 0)?,
        classes: cfg.get_usize("dataset.classes", 0)?,
        image_shape,
    };
    let seed = cfg.get_u64("seed", 0)?;
    let mut clf = build_classifier(&cfg, &shape, seed)?;

    let mut files = std::collections::BTreeMap::new();
    for line in &tensor_lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(LabError::Format(format!("bad tensor line `{line}`")));
        }
        files.insert(parts[0].to_string(), parts[3].to_string());
    }

    let mut load_err: Option<LabError> = None;
    let mut names = Vec::new();
    clf.visit_params(&mut |name, _| names.push(name.to_string()));
    let mut idx = 0usize;
    clf.visit_params_mut(&mut |p| {
        if load_err.is_some() {
            idx += 1;
            return;
        }
        let name = &names[idx];
        match files.get(name) {
            None => load_err = Some(LabError::Format(format!("manifest missing tensor `{name}`"))),
            Some(file) => match mbgt::read_matrix(&dir.join(file)) {
                Err(e) => load_err = Some(e),
                Ok(m) => {
                    if m.shape() != p.shape() {
                        load_err = Some(LabError::Format(format!(
                            "tensor `{name}` has shape {:?}, expected {:?}",
                            m.shape(),
                            p.shape()
                        )));
                    } else {
                        *p = m;
                    }
                }
            },
        }
        idx += 1;
    });
    if let Some(e) = load_err {
        return Err(e);
    }
    Ok(clf)
}
