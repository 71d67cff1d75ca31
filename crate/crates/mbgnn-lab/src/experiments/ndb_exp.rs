//! `ndb`: score a generated sample set against a training reference, both
//! supplied as rank-2 MBGT tensors.

use std::path::PathBuf;

use mbgnn_core::ndb::ndb_score;
use serde::Serialize;

use crate::experiments::RunContext;
use crate::{mbgt, LabError};

#[derive(Serialize)]
pub struct NdbBinOut {
    pub train_count: usize,
    pub generated_count: usize,
    pub train_proportion: f64,
    pub generated_proportion: f64,
    pub z: f64,
    pub significant: bool,
    pub excluded: bool,
}

#[derive(Serialize)]
pub struct NdbOut {
    pub seed: u64,
    pub bins: usize,
    pub significance: f64,
    pub z_critical: f64,
    pub ndb: f64,
    pub significant_bins: usize,
    pub excluded_bins: usize,
    pub per_bin: Vec<NdbBinOut>,
}

pub fn run(ctx: &RunContext) -> Result<(), LabError> {
    ctx.echo_config()?;
    let train_path = PathBuf::from(ctx.cfg.require_str("ndb.train_path")?);
    let gen_path = PathBuf::from(ctx.cfg.require_str("ndb.generated_path")?);
    let bins = ctx.cfg.get_usize("ndb.bins", 20)?;
    let significance = ctx.cfg.get_f64("ndb.significance", 0.05)?;

    let train = mbgt::read_matrix(&train_path)?;
    let generated = mbgt::read_matrix(&gen_path)?;
    let report = ndb_score(&train, &generated, bins, significance, ctx.seed)?;

    let out = NdbOut {
        seed: ctx.seed,
        bins,
        significance,
        z_critical: report.z_critical,
        ndb: report.ndb,
        significant_bins: report.significant_bins,
        excluded_bins: report.excluded_bins,
        per_bin: report
            .bins
            .iter()
            .map(|b| NdbBinOut {
                train_count: b.train_count,
                generated_count: b.generated_count,
                train_proportion: b.train_proportion,
                generated_proportion: b.generated_proportion,
                z: b.z,
                significant: b.significant,
                excluded: b.excluded,
            })
            .collect(),
    };
    println!("ndb: {} ({} of {} bins significant)", out.ndb, out.significant_bins, bins);
    ctx.write_json("ndb.json", &out)
}
