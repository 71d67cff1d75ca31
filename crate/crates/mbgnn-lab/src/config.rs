//! Flat `key = value` experiment configuration: one assignment per line,
//! `#` comments, dotted section keys. Unknown keys are rejected up front,
//! and every run echoes its fully resolved config into the output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::LabError;

/// Every key any subcommand understands. Parsing rejects anything else.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    // dataset
    "dataset.source",
    "dataset.classes",
    "dataset.dim",
    "dataset.spread",
    "dataset.center_scale",
    "dataset.aniso_scale",
    "dataset.aniso_axes",
    "dataset.train_size",
    "dataset.test_size",
    "dataset.noise",
    "dataset.modes",
    "dataset.radius",
    "dataset.sigma",
    "dataset.train_csv",
    "dataset.test_csv",
    "dataset.train_features",
    "dataset.train_labels",
    "dataset.test_features",
    "dataset.test_labels",
    "dataset.image_height",
    "dataset.image_width",
    "dataset.image_channels",
    // model
    "model.kind",
    "model.encoder",
    "model.mlp_widths",
    "model.conv1",
    "model.conv2",
    "model.embed_dim",
    "model.layers",
    "model.hidden",
    "model.k",
    "model.heads",
    "model.attn_dim",
    "model.attn_hidden",
    "model.combine",
    "model.alpha",
    "model.p",
    // training
    "train.epochs",
    "train.batch_size",
    "train.optimizer",
    "train.lr",
    "train.momentum",
    "train.eval_subsample",
    "train.transductive_subsample",
    // sweeps
    "ablate.k_values",
    "ablate.batch_sizes",
    // robustness
    "robust.kind",
    "robust.severities",
    // attack
    "attack.epsilon",
    "attack.budget",
    "attack.targets",
    // attenuation check
    "prop.k_values",
    "prop.batch_size",
    "prop.dim",
    "prop.alpha",
    "prop.p",
    "prop.trials",
    // gan
    "gan.iterations",
    "gan.batch_size",
    "gan.noise_dim",
    "gan.out_scale",
    "gan.gen_hidden",
    "gan.disc_hidden",
    "gan.disc_feat",
    "gan.head",
    "gan.heads",
    "gan.proj_dim",
    "gan.phi_hidden",
    "gan.feat_dim",
    "gan.psi",
    "gan.adam_beta1",
    "gan.lr_gen",
    "gan.lr_disc",
    "gan.ndb_every",
    "gan.ndb_bins",
    "gan.ndb_samples",
    "gan.ndb_significance",
    "gan.modes",
    "gan.radius",
    "gan.sigma",
    // ndb subcommand
    "ndb.train_path",
    "ndb.generated_path",
    "ndb.bins",
    "ndb.significance",
];

#[derive(Clone, Debug, Default)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn empty() -> Self {
        Config::default()
    }

    pub fn parse(text: &str) -> Result<Self, LabError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(LabError::Config(format!(
                    "line {}: expected `key = value`, got `{raw}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(LabError::Config(format!(
                    "line {}: unknown key `{key}`",
                    lineno + 1
                )));
            }
            values.insert(key, value);
        }
        Ok(Config { values })
    }

    pub fn from_file(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        Config::parse(&text)
    }

    /// Apply `key=value` command-line overrides.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), LabError> {
        for item in overrides {
            let Some((key, value)) = item.split_once('=') else {
                return Err(LabError::Config(format!(
                    "override `{item}` is not of the form key=value"
                )));
            };
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(LabError::Config(format!("unknown override key `{key}`")));
            }
            self.values.insert(key, value.trim().to_string());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        debug_assert!(KNOWN_KEYS.contains(&key), "unregistered key {key}");
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn get_str<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.values.get(key).map_or(default, |s| s.as_str())
    }

    pub fn require_str(&self, key: &str) -> Result<&str, LabError> {
        self.values
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| LabError::Config(format!("missing required key `{key}`")))
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize, LabError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| LabError::Config(format!("key `{key}`: `{s}` is not an integer"))),
        }
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64, LabError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| LabError::Config(format!("key `{key}`: `{s}` is not an integer"))),
        }
    }

    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64, LabError> {
        match self.values.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| LabError::Config(format!("key `{key}`: `{s}` is not a number"))),
        }
    }

    pub fn get_usize_list(&self, key: &str, default: &[usize]) -> Result<Vec<usize>, LabError> {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|item| {
                    item.trim().parse().map_err(|_| {
                        LabError::Config(format!("key `{key}`: `{item}` is not an integer"))
                    })
                })
                .collect(),
        }
    }

    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, LabError> {
        match self.values.get(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|item| {
                    item.trim().parse().map_err(|_| {
                        LabError::Config(format!("key `{key}`: `{item}` is not a number"))
                    })
                })
                .collect(),
        }
    }

    /// Sorted `key = value` lines; written into every run's output directory.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_dotted_keys() {
        let cfg = Config::parse("# a comment\nmodel.k = 16\n\ntrain.lr = 0.001\n").unwrap();
        assert_eq!(cfg.get_usize("model.k", 0).unwrap(), 16);
        assert_eq!(cfg.get_f64("train.lr", 0.0).unwrap(), 0.001);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Config::parse("model.unknown_thing = 3\n").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = Config::parse("model.k = 1\nnot a config line\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn overrides_replace_values() {
        let mut cfg = Config::parse("model.k = 4\n").unwrap();
        cfg.apply_overrides(&["model.k=8".to_string()]).unwrap();
        assert_eq!(cfg.get_usize("model.k", 0).unwrap(), 8);
        assert!(cfg
            .apply_overrides(&["bogus.key=1".to_string()])
            .is_err());
    }

    #[test]
    fn echo_is_sorted_and_reparseable() {
        let mut cfg = Config::parse("train.lr = 0.01\nmodel.k = 3\n").unwrap();
        cfg.set("seed", 7);
        let echoed = cfg.echo();
        let lines: Vec<&str> = echoed.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort();
        assert_eq!(lines, sorted);
        let reparsed = Config::parse(&echoed).unwrap();
        assert_eq!(reparsed.echo(), echoed);
    }

    #[test]
    fn lists_parse() {
        let cfg = Config::parse("robust.severities = 0, 0.5, 1.0\nablate.k_values = 2,4,8\n")
            .unwrap();
        assert_eq!(
            cfg.get_f64_list("robust.severities", &[]).unwrap(),
            vec![0.0, 0.5, 1.0]
        );
        assert_eq!(
            cfg.get_usize_list("ablate.k_values", &[]).unwrap(),
            vec![2, 4, 8]
        );
    }
}
