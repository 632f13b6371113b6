//! Cross-seed statistics for a finished experiment directory.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::agents::RunRecord;
use crate::error::{Error, Result};

use super::experiment::{load_manifest, seed_file_stem, variant_dir, RunMeta};
use super::stats;

/// Checkpoints averaged by the curve smoother.
pub const SMOOTHING_WINDOW: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub env_step: u64,
    pub mean: f64,
    /// Zero with `sem_defined = false` for a single seed.
    pub sem: f64,
    pub sem_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub env_step: Vec<u64>,
    pub raw: Vec<f64>,
    pub smoothed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub seeds: Vec<u64>,
    pub finals: Vec<f64>,
    pub mean: f64,
    pub iqm: f64,
    pub median: f64,
    pub sem: f64,
    pub sem_defined: bool,
    pub final_model_nll: Vec<f64>,
    pub per_seed: Vec<SeedCurve>,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub name: String,
    pub config_hash: String,
    pub variants: Vec<VariantSummary>,
}

impl AggregateReport {
    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }
}

fn sem_or_flag(xs: &[f64]) -> Result<(f64, bool)> {
    Ok(match stats::sem(xs)? {
        Some(s) => (s, true),
        None => (0.0, false),
    })
}

/// Summarizes one variant from its per-seed records.
pub fn summarize(name: &str, records: &[(u64, RunRecord)]) -> Result<VariantSummary> {
    if records.is_empty() {
        return Err(Error::Aggregation(format!("variant {name} has no run records")));
    }
    let mut finals = Vec::new();
    let mut nll = Vec::new();
    let mut per_seed = Vec::new();
    let steps: Vec<u64> = records[0].1.rows.iter().map(|r| r.env_step).collect();
    for (seed, rec) in records {
        let row = rec
            .final_row()
            .ok_or_else(|| Error::Aggregation(format!("variant {name} seed {seed} has no checkpoints")))?;
        finals.push(row.eval_mean_return);
        nll.push(row.model_nll);
        let these: Vec<u64> = rec.rows.iter().map(|r| r.env_step).collect();
        if these != steps {
            return Err(Error::Aggregation(format!("variant {name} seed {seed} has different checkpoint steps")));
        }
        let raw: Vec<f64> = rec.rows.iter().map(|r| r.eval_mean_return).collect();
        per_seed.push(SeedCurve {
            seed: *seed,
            env_step: these,
            smoothed: stats::smooth(&raw, SMOOTHING_WINDOW),
            raw,
        });
    }
    let mut curve = Vec::with_capacity(steps.len());
    for (i, &env_step) in steps.iter().enumerate() {
        let column: Vec<f64> = per_seed.iter().map(|c| c.smoothed[i]).collect();
        let (sem, sem_defined) = sem_or_flag(&column)?;
        curve.push(CurvePoint {
            env_step,
            mean: stats::mean(&column)?,
            sem,
            sem_defined,
        });
    }
    let (sem, sem_defined) = sem_or_flag(&finals)?;
    Ok(VariantSummary {
        name: name.to_string(),
        seeds: records.iter().map(|(s, _)| *s).collect(),
        mean: stats::mean(&finals)?,
        iqm: stats::iqm(&finals)?,
        median: stats::median(&finals)?,
        sem,
        sem_defined,
        finals,
        final_model_nll: nll,
        per_seed,
        curve,
    })
}

fn read_meta(path: &Path) -> Result<RunMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Reads an experiment directory written by `run_experiment`.
///
/// Every run sidecar found anywhere under `run_dir` must carry the manifest's
/// configuration hash; leftovers from a different configuration are an error.
pub fn aggregate(run_dir: &Path) -> Result<AggregateReport> {
    let manifest = load_manifest(run_dir)?;
    for entry in fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))? {
        let dir = entry.map_err(|e| Error::io(run_dir, e))?.path();
        if !dir.is_dir() {
            continue;
        }
        for file in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let path = file.map_err(|e| Error::io(&dir, e))?.path();
            if path.to_string_lossy().ends_with(".meta.json") {
                let meta = read_meta(&path)?;
                if meta.config_hash != manifest.config_hash {
                    return Err(Error::Aggregation(format!(
                        "{} was produced by configuration {}, but the manifest is for {}",
                        path.display(),
                        meta.config_hash,
                        manifest.config_hash
                    )));
                }
            }
        }
    }
    let mut variants = Vec::new();
    for v in &manifest.variants {
        let dir = variant_dir(run_dir, &v.name);
        let mut records = Vec::new();
        for &seed in &manifest.seeds {
            let stem = seed_file_stem(seed);
            let meta = read_meta(&dir.join(format!("{stem}.meta.json")))?;
            if meta.variant != v.name || meta.seed != seed {
                return Err(Error::Aggregation(format!("{} does not belong to variant {} seed {seed}", dir.display(), v.name)));
            }
            records.push((seed, RunRecord::load_csv(&dir.join(format!("{stem}.csv")))?));
        }
        variants.push(summarize(&v.name, &records)?);
    }
    if variants.is_empty() {
        return Err(Error::Aggregation("manifest lists no variants".into()));
    }
    Ok(AggregateReport {
        name: manifest.name,
        config_hash: manifest.config_hash,
        variants,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes `final.csv`, `curves.csv` (one row per checkpoint per seed per
/// variant) and `curve_summary.csv` into `dir`.
pub fn write_report(report: &AggregateReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("final.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["variant", "n_seeds", "mean", "iqm", "median", "sem", "sem_defined"])
        .map_err(|e| csv_err(&path, e))?;
    for v in &report.variants {
        w.write_record([
            v.name.clone(),
            v.seeds.len().to_string(),
            v.mean.to_string(),
            v.iqm.to_string(),
            v.median.to_string(),
            v.sem.to_string(),
            v.sem_defined.to_string(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("curves.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["variant", "seed", "env_step", "eval_mean_return", "smoothed_return"])
        .map_err(|e| csv_err(&path, e))?;
    for v in &report.variants {
        for c in &v.per_seed {
            for i in 0..c.env_step.len() {
                w.write_record([
                    v.name.clone(),
                    c.seed.to_string(),
                    c.env_step[i].to_string(),
                    c.raw[i].to_string(),
                    c.smoothed[i].to_string(),
                ])
                .map_err(|e| csv_err(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("curve_summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["variant", "env_step", "mean", "sem", "sem_defined"])
        .map_err(|e| csv_err(&path, e))?;
    for v in &report.variants {
        for p in &v.curve {
            w.write_record([
                v.name.clone(),
                p.env_step.to_string(),
                p.mean.to_string(),
                p.sem.to_string(),
                p.sem_defined.to_string(),
            ])
            .map_err(|e| csv_err(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::CheckpointRow;
    use proptest::prelude::*;

    fn record(returns: &[f64]) -> RunRecord {
        RunRecord {
            rows: returns
                .iter()
                .enumerate()
                .map(|(i, &r)| CheckpointRow {
                    env_step: 100 * (i as u64 + 1),
                    eval_mean_return: r,
                    eval_sem: 0.0,
                    model_nll: 1.0,
                    policy_entropy: 0.0,
                    model_entropy: 0.0,
                    alpha_value: 0.0,
                    s_value: 0.0,
                    wallclock: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn final_statistics_hand_example() {
        let recs: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().enumerate().map(|(i, &f)| (i as u64, record(&[0.0, f]))).collect();
        let v = summarize("x", &recs).unwrap();
        assert_eq!((v.mean, v.median, v.iqm), (2.5, 2.5, 2.5));
        assert!(v.sem_defined);
    }

    #[test]
    fn single_seed_flags_sem() {
        let v = summarize("x", &[(7, record(&[0.0, 3.0, 0.0, 3.0]))]).unwrap();
        assert_eq!((v.mean, v.median, v.iqm, v.sem, v.sem_defined), (3.0, 3.0, 3.0, 0.0, false));
        let means: Vec<f64> = v.curve.iter().map(|p| p.mean).collect();
        assert_eq!(means, vec![1.5, 1.0, 2.0, 1.5]);
        assert!(v.curve.iter().all(|p| !p.sem_defined && p.sem == 0.0));
    }

    #[test]
    fn mismatched_checkpoints_are_rejected() {
        let mut b = record(&[1.0, 2.0]);
        b.rows[1].env_step = 999;
        assert!(matches!(summarize("x", &[(0, record(&[1.0, 2.0])), (1, b)]), Err(Error::Aggregation(_))));
        assert!(matches!(summarize("x", &[]), Err(Error::Aggregation(_))));
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant_in_seeds(finals in proptest::collection::vec(-10.0f64..10.0, 1..8), rot in 0usize..8) {
            let recs: Vec<_> = finals.iter().enumerate().map(|(i, &f)| (i as u64, record(&[f / 2.0, f]))).collect();
            let mut moved = recs.clone();
            let k = rot % moved.len();
            moved.rotate_left(k);
            moved.reverse();
            let a = summarize("x", &recs).unwrap();
            let b = summarize("x", &moved).unwrap();
            prop_assert_eq!((a.mean, a.iqm, a.median, a.sem), (b.mean, b.iqm, b.median, b.sem));
            for (p, q) in a.curve.iter().zip(&b.curve) {
                prop_assert_eq!(p.mean, q.mean);
                prop_assert_eq!(p.sem, q.sem);
            }
            let lo = finals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= a.iqm && a.iqm <= hi);
        }
    }
}
