//! Operator surface for the GARCIA pipeline: scenario generation, graph
//! building, the two training stages, sliced evaluation, embedding export,
//! retrieval, the ablation harness, and report/chart emission. All command
//! logic lives here so integration tests can drive it without a subprocess.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use garcia_core::synthgen::ScenarioConfig;
use garcia_core::training::TrainConfig;

pub mod ablation;
pub mod chart;
pub mod commands;
pub mod dataset;

/// A failed command, split by whose fault it is: bad configuration or inputs
/// (exit 1) versus a failure while doing the work (exit 2).
#[derive(Debug)]
pub enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Validation(e) => write!(f, "{e:#}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, Failure>;

pub fn validation(err: impl Into<anyhow::Error>) -> Failure {
    Failure::Validation(err.into())
}

pub fn runtime(err: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(err.into())
}

/// One config file for the whole pipeline. The root `seed` is copied into the
/// scenario and training sections during resolution so every stage draws from
/// named sub-streams of a single value; per-section `seed` keys in the file
/// are therefore overwritten.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed for data, initialization, and sampling streams.
    pub seed: u64,
    /// Fraction of queries ranked head by exposure.
    pub head_fraction: f64,
    /// Ranking cutoff for NDCG and the default retrieval depth.
    pub k: usize,
    /// Keep the log(1+clicks) channel on interaction edges.
    pub include_log_clicks: bool,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            head_fraction: 0.05,
            k: 10,
            include_log_clicks: true,
            scenario: ScenarioConfig::default(),
            train: desk_scale_train(),
        }
    }
}

/// Training settings sized for a single laptop core: the library defaults
/// describe the full-scale regime, these finish the default scenario's
/// end-to-end pipeline in minutes.
fn desk_scale_train() -> TrainConfig {
    let mut train = TrainConfig::default();
    train.epochs_pretrain = 6;
    train.epochs_finetune = 5;
    train.batch_size = 256;
    train.lr = 3e-3;
    train.patience = 2;
    train.hyper.embed_dim = 32;
    train
}

impl RunConfig {
    /// Read a config file, or start from defaults when none is given.
    pub fn load(path: Option<&Path>) -> CliResult<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            validation(anyhow::anyhow!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| validation(anyhow::anyhow!("config {}: {e}", path.display())))
    }

    /// Apply flag overrides, propagate the root seed, and validate.
    pub fn resolve(mut self, seed_override: Option<u64>) -> CliResult<RunConfig> {
        if let Some(seed) = seed_override {
            self.seed = seed;
        }
        self.scenario.seed = self.seed;
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(self.head_fraction > 0.0 && self.head_fraction < 1.0) {
            return Err(validation(anyhow::anyhow!(
                "head_fraction {} must be in (0, 1)",
                self.head_fraction
            )));
        }
        if self.k == 0 {
            return Err(validation(anyhow::anyhow!("k must be at least 1")));
        }
        self.scenario.validate().map_err(validation)?;
        self.train.validate().map_err(validation)?;
        Ok(())
    }

    /// Echo the resolved config into an output directory as `config.resolved`.
    pub fn write_resolved(&self, dir: &Path) -> CliResult<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| runtime(anyhow::anyhow!("serializing resolved config: {e}")));
        std::fs::write(dir.join("config.resolved"), text?)
            .map_err(|e| runtime(anyhow::anyhow!("writing config.resolved: {e}")))
    }
}

/// (year, month, day) of a day count since 1970-01-01.
fn civil_from_days(days: i64) -> (i64, u32, u32) {
    let z = days + 719_468;
    let era = if z >= 0 { z } else { z - 146_096 } / 146_097;
    let doe = (z - era * 146_097) as u64;
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let y = yoe as i64 + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    (if m <= 2 { y + 1 } else { y }, m, d)
}

pub fn utc_timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .expect("clock after 1970")
        .as_secs();
    let (y, m, d) = civil_from_days((secs / 86_400) as i64);
    let rem = secs % 86_400;
    format!(
        "{y:04}{m:02}{d:02}T{:02}{:02}{:02}Z",
        rem / 3600,
        (rem % 3600) / 60,
        rem % 60
    )
}

/// Create the command's output directory: the `--out` override (which must
/// not already hold files) or a fresh timestamped directory under `runs/`.
pub fn fresh_run_dir(out: Option<&Path>, command: &str) -> CliResult<PathBuf> {
    if let Some(dir) = out {
        if dir.exists() {
            let occupied = std::fs::read_dir(dir)
                .map_err(|e| validation(anyhow::anyhow!("cannot read {}: {e}", dir.display())))?
                .next()
                .is_some();
            if occupied {
                return Err(validation(anyhow::anyhow!(
                    "output directory {} is not empty; outputs never overwrite existing files",
                    dir.display()
                )));
            }
        } else {
            std::fs::create_dir_all(dir)
                .map_err(|e| runtime(anyhow::anyhow!("creating {}: {e}", dir.display())))?;
        }
        return Ok(dir.to_path_buf());
    }
    let stamp = utc_timestamp();
    let base = PathBuf::from("runs");
    for attempt in 0..1000u32 {
        let name = if attempt == 0 {
            format!("{command}-{stamp}")
        } else {
            format!("{command}-{stamp}-{attempt}")
        };
        let dir = base.join(name);
        match std::fs::create_dir_all(dir.parent().expect("runs parent"))
            .and_then(|_| std::fs::create_dir(&dir))
        {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(runtime(anyhow::anyhow!("creating {}: {e}", dir.display()))),
        }
    }
    Err(runtime(anyhow::anyhow!("could not find a fresh name under runs/")))
}

pub fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| runtime(anyhow::anyhow!("serializing {name}: {e}")))?;
    std::fs::write(dir.join(name), text + "\n")
        .map_err(|e| runtime(anyhow::anyhow!("writing {name}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates_and_round_trips_through_toml() {
        let cfg = RunConfig::default().resolve(None).unwrap();
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.scenario, cfg.scenario);
        assert_eq!(back.train.batch_size, cfg.train.batch_size);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("mystery = 3\n").unwrap_err();
        assert!(err.to_string().contains("mystery"));
    }

    #[test]
    fn seed_override_propagates_to_sections() {
        let cfg = RunConfig::default().resolve(Some(99)).unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.scenario.seed, 99);
        assert_eq!(cfg.train.seed, 99);
    }

    #[test]
    fn bad_head_fraction_is_a_validation_failure() {
        let mut cfg = RunConfig::default();
        cfg.head_fraction = 1.5;
        let err = cfg.resolve(None).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn civil_from_days_matches_known_dates() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(19_723), (2024, 1, 1));
        assert_eq!(civil_from_days(20_681), (2026, 8, 16));
    }

    #[test]
    fn out_override_refuses_a_populated_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("present"), "x").unwrap();
        let err = fresh_run_dir(Some(dir.path()), "gen-data").unwrap_err();
        assert_eq!(err.exit_code(), 1);

        let empty = dir.path().join("empty");
        let made = fresh_run_dir(Some(&empty), "gen-data").unwrap();
        assert_eq!(made, empty);
        assert!(made.is_dir());
    }
}
