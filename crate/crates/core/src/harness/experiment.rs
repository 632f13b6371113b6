//! Running every (variant, seed) pair of an experiment and writing results.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json
//! <variant>/seed_<k>.csv
//! <variant>/seed_<k>.meta.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{train, AgentConfig, RunRecord};
use crate::error::{Error, Result};

use super::config::{ExperimentConfig, Variant};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    /// Overrides `output_dir` from the config.
    pub out: Option<PathBuf>,
    /// Run only this seed instead of the configured range.
    pub seed: Option<u64>,
    /// Worker threads; 0 or 1 runs sequentially.
    pub parallel: usize,
    /// Expand the `[sweep]` table; otherwise run the base agent only.
    pub sweep: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestVariant {
    pub name: String,
    pub agent: AgentConfig,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub owm: String,
    pub record_format: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub variants: Vec<ManifestVariant>,
    pub versions: Versions,
}

/// Per-run sidecar tying a CSV to the configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub variant: String,
    pub seed: u64,
}

/// SHA-256 of the configuration's canonical JSON, with the output directory
/// cleared so that relocating a run does not change its identity.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut canonical = cfg.clone();
    canonical.output_dir = None;
    let json = serde_json::to_string(&canonical).expect("configuration serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn seed_file_stem(seed: u64) -> String {
    format!("seed_{seed}")
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.=+".contains(c) { c } else { '_' })
        .collect()
}

pub fn variant_dir(root: &Path, variant: &str) -> PathBuf {
    root.join(sanitize(variant))
}

fn writable_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::config("output_dir", format!("cannot create {}: {e}", dir.display())))?;
    let probe = dir.join(".owm-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::config("output_dir", format!("{} is not writable: {e}", dir.display())))?;
    let _ = fs::remove_file(&probe);
    Ok(())
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Trains every requested (variant, seed) pair and writes CSVs plus the manifest.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest> {
    cfg.validate()?;
    let root = opts
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::config("output_dir", "no output directory given (set output_dir or pass --out)"))?;
    let variants: Vec<Variant> = if opts.sweep {
        if cfg.sweep.is_none() {
            return Err(Error::config("sweep", "the sweep command needs a [sweep] table"));
        }
        cfg.variants()
    } else {
        vec![Variant {
            name: cfg.agent.agent_kind.name().to_string(),
            agent: cfg.agent.clone(),
        }]
    };
    let seeds: Vec<u64> = match opts.seed {
        Some(s) => vec![s],
        None => cfg.seeds().collect(),
    };
    let env = cfg.env.build()?;
    let hash = config_hash(cfg);

    writable_dir(&root)?;
    for v in &variants {
        writable_dir(&variant_dir(&root, &v.name))?;
    }

    let jobs: Vec<(usize, u64)> = (0..variants.len()).flat_map(|v| seeds.iter().map(move |&s| (v, s))).collect();
    let run_one = |&(v, seed): &(usize, u64)| -> Result<()> {
        let variant = &variants[v];
        let mut agent = variant.agent.clone();
        agent.seed = seed;
        let record: RunRecord = train(&env, &agent, cfg.budget, cfg.checkpoint_every)?;
        let dir = variant_dir(&root, &variant.name);
        let stem = seed_file_stem(seed);
        record.save_csv(&dir.join(format!("{stem}.csv")))?;
        write_json(
            &dir.join(format!("{stem}.meta.json")),
            &RunMeta {
                config_hash: hash.clone(),
                variant: variant.name.clone(),
                seed,
            },
        )
    };
    if opts.parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.parallel)
            .build()
            .map_err(|e| Error::config("--parallel", e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run_one).collect::<Result<Vec<()>>>())?;
    } else {
        jobs.iter().try_for_each(run_one)?;
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        config_hash: hash,
        config: cfg.clone(),
        seeds: seeds.clone(),
        variants: variants
            .iter()
            .map(|v| ManifestVariant {
                name: v.name.clone(),
                agent: v.agent.clone(),
                files: seeds
                    .iter()
                    .map(|&s| format!("{}/{}.csv", sanitize(&v.name), seed_file_stem(s)))
                    .collect(),
            })
            .collect(),
        versions: Versions {
            owm: env!("CARGO_PKG_VERSION").to_string(),
            record_format: RECORD_FORMAT_VERSION,
        },
    };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn load_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
name = "tiny"
budget = 200
checkpoint_every = 100
n_seeds = 2
[env]
name = "riverswim"
n_states = 4
[agent]
imagination_n = 4
imagination_l = 5
model_batch = 16
"#,
        )
        .unwrap()
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = tiny();
        let mut b = a.clone();
        b.output_dir = Some("/elsewhere".into());
        assert_eq!(config_hash(&a), config_hash(&b));
        b.budget = 300;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn writes_one_csv_per_seed_and_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny();
        let m = run_experiment(
            &cfg,
            &RunOptions {
                out: Some(dir.path().to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.seeds, vec![0, 1]);
        assert_eq!(m.variants.len(), 1);
        for f in &m.variants[0].files {
            let rec = RunRecord::load_csv(&dir.path().join(f)).unwrap();
            assert_eq!(rec.rows.len(), 2);
        }
        assert_eq!(load_manifest(dir.path()).unwrap(), m);
    }

    #[test]
    fn missing_output_dir_is_a_config_error() {
        let err = run_experiment(&tiny(), &RunOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "output_dir"));
        let err = run_experiment(
            &tiny(),
            &RunOptions {
                out: Some("/tmp".into()),
                sweep: true,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "sweep"));
    }
}
