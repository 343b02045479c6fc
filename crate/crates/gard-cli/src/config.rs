//! Run configuration: defaults, the key=value config-file format, flag
//! overrides, and the deterministic echo written into every run directory.
//!
//! Precedence, lowest to highest: built-in defaults, the `GARD_SEED`
//! environment variable (seed only), the `--config` file, command-line
//! flags. The echoed `config.txt` parses back to the identical effective
//! configuration, so a run directory is sufficient to reproduce its run.

use std::path::{Path, PathBuf};

use gard_core::datagen::GenSpec;
use gard_core::model::Activation;
use gard_core::training::{TrainConfig, Variant};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub gen: GenSpec,
    pub train: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            gen: GenSpec::default(),
            train: TrainConfig::default(),
            corpus: None,
            model: None,
            out: None,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_value<T: std::str::FromStr>(section: &str, key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| usage(format!("[{section}] {key} = {value:?}: {e}")))
}

fn parse_deadlines(section: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value::<f64>(section, "deadlines_min", s))
        .collect()
}

impl RunConfig {
    /// Apply one `[section] key = value` assignment.
    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        match (section, key) {
            ("gen", "n_events") => self.gen.n_events = parse_value(section, key, value)?,
            ("gen", "classes") => self.gen.classes = parse_value(section, key, value)?,
            ("gen", "d") => self.gen.d = parse_value(section, key, value)?,
            ("gen", "min_nodes") => self.gen.min_nodes = parse_value(section, key, value)?,
            ("gen", "max_nodes") => self.gen.max_nodes = parse_value(section, key, value)?,
            ("gen", "branching_bias") => {
                self.gen.branching_bias = parse_value(section, key, value)?
            }
            ("gen", "chain_bias") => self.gen.chain_bias = parse_value(section, key, value)?,
            ("gen", "mean_gap_min") => self.gen.mean_gap_min = parse_value(section, key, value)?,
            ("gen", "gap_jitter_min") => {
                self.gen.gap_jitter_min = parse_value(section, key, value)?
            }
            ("gen", "topics") => self.gen.topics = parse_value(section, key, value)?,
            ("gen", "drift_scale") => self.gen.drift_scale = parse_value(section, key, value)?,
            ("gen", "flip_delay_min") => {
                self.gen.flip_delay_min = parse_value(section, key, value)?
            }
            ("gen", "noise_sigma") => self.gen.noise_sigma = parse_value(section, key, value)?,
            ("gen", "seed") => self.gen.seed = parse_value(section, key, value)?,
            ("train", "lr") => self.train.lr = parse_value(section, key, value)?,
            ("train", "epochs") => self.train.epochs = parse_value(section, key, value)?,
            ("train", "batch_size") => self.train.batch_size = parse_value(section, key, value)?,
            ("train", "mask_ratio") => self.train.mask_ratio = parse_value(section, key, value)?,
            ("train", "d_h") => self.train.d_h = parse_value(section, key, value)?,
            ("train", "alpha1") => self.train.alpha1 = parse_value(section, key, value)?,
            ("train", "alpha2") => self.train.alpha2 = parse_value(section, key, value)?,
            ("train", "t") => self.train.t = parse_value(section, key, value)?,
            ("train", "uniformity_normalize") => {
                self.train.uniformity_normalize = parse_value(section, key, value)?
            }
            ("train", "variant") => self.train.variant = parse_value::<Variant>(section, key, value)?,
            ("train", "folds") => self.train.folds = parse_value(section, key, value)?,
            ("train", "seed") => self.train.seed = parse_value(section, key, value)?,
            ("train", "deadlines_min") => {
                self.train.deadlines_min = parse_deadlines(section, value)?
            }
            ("train", "stratified") => self.train.stratified = parse_value(section, key, value)?,
            ("train", "activation") => {
                self.train.activation = parse_value::<Activation>(section, key, value)?
            }
            ("train", "classifier_hidden") => {
                self.train.classifier_hidden = if value == "none" {
                    None
                } else {
                    Some(parse_value(section, key, value)?)
                }
            }
            ("train", "beta1") => self.train.beta1 = parse_value(section, key, value)?,
            ("train", "beta2") => self.train.beta2 = parse_value(section, key, value)?,
            ("train", "eps") => self.train.eps = parse_value(section, key, value)?,
            ("train", "patience") => self.train.patience = parse_value(section, key, value)?,
            ("train", "jobs") => self.train.jobs = parse_value(section, key, value)?,
            ("paths", "corpus") => self.corpus = Some(PathBuf::from(value)),
            ("paths", "model") => self.model = Some(PathBuf::from(value)),
            ("paths", "out") => self.out = Some(PathBuf::from(value)),
            _ => return Err(usage(format!("unknown config key [{section}] {key}"))),
        }
        Ok(())
    }

    /// Parse a config file: `[section]` headers, `key = value` lines, `#`
    /// comments. Unknown sections or keys are rejected.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::MissingFile(path.to_path_buf())
            } else {
                CliError::Runtime(format!("reading {}: {e}", path.display()))
            }
        })?;
        self.apply_text(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "gen" | "train" | "paths") {
                    return Err(usage(format!(
                        "line {}: unknown config section [{section}]",
                        idx + 1
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!("line {}: expected key = value, got {line:?}", idx + 1))
            })?;
            if section.is_empty() {
                return Err(usage(format!(
                    "line {}: key before any [section] header",
                    idx + 1
                )));
            }
            self.apply(&section, key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Seed from `GARD_SEED` when set; flag and config values override it.
    pub fn apply_env(&mut self) -> Result<(), CliError> {
        if let Ok(raw) = std::env::var("GARD_SEED") {
            let seed: u64 = raw
                .parse()
                .map_err(|e| usage(format!("GARD_SEED = {raw:?}: {e}")))?;
            self.gen.seed = seed;
            self.train.seed = seed;
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.gen.seed = seed;
        self.train.seed = seed;
    }

    /// Deterministic echo in the same format `apply_text` parses.
    pub fn render(&self) -> String {
        let mut s = self.render_science();
        s.push_str("\n[paths]\n");
        s.push_str(&format!("corpus = {}\n", self.corpus_path().display()));
        s.push_str(&format!("model = {}\n", self.model_path().display()));
        s.push_str(&format!("out = {}\n", self.out_dir().display()));
        s
    }

    /// The [gen] and [train] sections only; the run-directory hash covers
    /// exactly this part, so moving outputs does not rename runs.
    fn render_science(&self) -> String {
        let mut s = String::new();
        s.push_str("[gen]\n");
        s.push_str(&format!("n_events = {}\n", self.gen.n_events));
        s.push_str(&format!("classes = {}\n", self.gen.classes));
        s.push_str(&format!("d = {}\n", self.gen.d));
        s.push_str(&format!("min_nodes = {}\n", self.gen.min_nodes));
        s.push_str(&format!("max_nodes = {}\n", self.gen.max_nodes));
        s.push_str(&format!("branching_bias = {}\n", self.gen.branching_bias));
        s.push_str(&format!("chain_bias = {}\n", self.gen.chain_bias));
        s.push_str(&format!("mean_gap_min = {}\n", self.gen.mean_gap_min));
        s.push_str(&format!("gap_jitter_min = {}\n", self.gen.gap_jitter_min));
        s.push_str(&format!("topics = {}\n", self.gen.topics));
        s.push_str(&format!("drift_scale = {}\n", self.gen.drift_scale));
        s.push_str(&format!("flip_delay_min = {}\n", self.gen.flip_delay_min));
        s.push_str(&format!("noise_sigma = {}\n", self.gen.noise_sigma));
        s.push_str(&format!("seed = {}\n", self.gen.seed));
        s.push_str("\n[train]\n");
        s.push_str(&format!("lr = {}\n", self.train.lr));
        s.push_str(&format!("epochs = {}\n", self.train.epochs));
        s.push_str(&format!("batch_size = {}\n", self.train.batch_size));
        s.push_str(&format!("mask_ratio = {}\n", self.train.mask_ratio));
        s.push_str(&format!("d_h = {}\n", self.train.d_h));
        s.push_str(&format!("alpha1 = {}\n", self.train.alpha1));
        s.push_str(&format!("alpha2 = {}\n", self.train.alpha2));
        s.push_str(&format!("t = {}\n", self.train.t));
        s.push_str(&format!(
            "uniformity_normalize = {}\n",
            self.train.uniformity_normalize
        ));
        s.push_str(&format!("variant = {}\n", self.train.variant));
        s.push_str(&format!("folds = {}\n", self.train.folds));
        s.push_str(&format!("seed = {}\n", self.train.seed));
        let deadlines: Vec<String> = self
            .train
            .deadlines_min
            .iter()
            .map(|d| format!("{d}"))
            .collect();
        s.push_str(&format!("deadlines_min = {}\n", deadlines.join(",")));
        s.push_str(&format!("stratified = {}\n", self.train.stratified));
        s.push_str(&format!("activation = {}\n", self.train.activation));
        match self.train.classifier_hidden {
            Some(h) => s.push_str(&format!("classifier_hidden = {h}\n")),
            None => s.push_str("classifier_hidden = none\n"),
        }
        s.push_str(&format!("beta1 = {}\n", self.train.beta1));
        s.push_str(&format!("beta2 = {}\n", self.train.beta2));
        s.push_str(&format!("eps = {}\n", self.train.eps));
        s.push_str(&format!("patience = {}\n", self.train.patience));
        s.push_str(&format!("jobs = {}\n", self.train.jobs));
        s
    }

    /// FNV-1a hash of the gen+train configuration (paths excluded), naming
    /// the default run directory.
    pub fn config_hash(&self) -> String {
        let science = self.render_science();
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in science.bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{hash:016x}")
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.config_hash()))
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.corpus
            .clone()
            .unwrap_or_else(|| self.out_dir().join("corpus.jsonl"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model
            .clone()
            .unwrap_or_else(|| self.out_dir().join("model.json"))
    }
}
