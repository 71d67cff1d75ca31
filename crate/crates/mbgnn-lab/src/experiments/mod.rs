//! Experiment orchestration: one module per CLI subcommand, a shared run
//! context that owns the output directory, and a small deterministic worker
//! pool for sweeps.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::Config;
use crate::LabError;

pub mod ablate;
pub mod attack_exp;
pub mod gan_exp;
pub mod ndb_exp;
pub mod prop_check;
pub mod robust_exp;
pub mod train_exp;

/// A single run: resolved config, seed, and an output directory that all
/// artifacts stay inside.
pub struct RunContext {
    pub cfg: Config,
    pub out: PathBuf,
    pub seed: u64,
}

impl RunContext {
    pub fn new(mut cfg: Config, out: PathBuf, seed_flag: Option<u64>) -> Result<Self, LabError> {
        let seed = match seed_flag {
            Some(s) => {
                cfg.set("seed", s);
                s
            }
            None => cfg.get_u64("seed", 0)?,
        };
        std::fs::create_dir_all(&out)?;
        Ok(RunContext { cfg, out, seed })
    }

    /// Echo the fully resolved config (including the seed) for replay.
    pub fn echo_config(&self) -> Result<(), LabError> {
        let mut cfg = self.cfg.clone();
        cfg.set("seed", self.seed);
        std::fs::write(self.out.join("config.resolved"), cfg.echo())?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), LabError> {
        write_json_file(&self.out.join(name), value)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), LabError> {
        std::fs::write(self.out.join(name), text)?;
        Ok(())
    }

    pub fn subdir(&self, name: &str) -> Result<PathBuf, LabError> {
        let dir = self.out.join(name);
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

pub fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), LabError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| LabError::Format(format!("json: {e}")))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Worker count: `MBGNN_THREADS` when set, otherwise available parallelism.
pub fn max_threads() -> usize {
    std::env::var("MBGNN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

/// Run independent jobs across the worker pool; results come back in job
/// order regardless of scheduling.
pub fn run_parallel<T, F>(jobs: Vec<F>) -> Vec<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    let n = jobs.len();
    let workers = max_threads().min(n);
    if workers <= 1 {
        return jobs.into_iter().map(|job| job()).collect();
    }
    let slots: Vec<Mutex<Option<F>>> = jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = slots[i].lock().unwrap().take().expect("job taken once");
                let out = job();
                *results[i].lock().unwrap() = Some(out);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("job completed"))
        .collect()
}
