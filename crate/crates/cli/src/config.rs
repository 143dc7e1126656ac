//! Run configuration: one TOML file, presets, `key=value` overrides and the
//! provenance hash.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dualx_core::degrade::DegradationConfig;
use dualx_core::io::FrameFormat;
use dualx_core::synth::SceneConfig;
use dualx_core::tiling::TileConfig;
use dualx_core::train::TrainConfig;
use dualx_core::ModelConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Evaluation and motion-analysis settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub motion_block: usize,
    pub motion_search: usize,
    /// Synthetic held-out clips used by `ablate`.
    pub holdout_clips: usize,
    pub holdout_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            motion_block: 16,
            motion_search: 8,
            holdout_clips: 4,
            holdout_seed: 999,
        }
    }
}

/// Default locations; command-line paths take precedence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub hq: Option<PathBuf>,
    pub lq: Option<PathBuf>,
    pub sr: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Weight initialization; also the default trainer and degradation seed.
    pub seed: u64,
    pub format: FrameFormat,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub degrade: DegradationConfig,
    pub tiling: TileConfig,
    pub synth: SceneConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            format: FrameFormat::Png,
            model: ModelConfig::full(),
            train: TrainConfig::default(),
            degrade: DegradationConfig::default(),
            tiling: TileConfig::default(),
            synth: SceneConfig::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

/// Everything that shapes outputs; paths are excluded so a replay into another
/// directory carries the same hash.
#[derive(Serialize)]
struct Hashed<'a> {
    seed: u64,
    format: FrameFormat,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    degrade: &'a DegradationConfig,
    tiling: &'a TileConfig,
    synth: &'a SceneConfig,
    eval: &'a EvalConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)?;
        self.degrade.validate()?;
        self.tiling.validate()?;
        if self.eval.motion_block == 0 {
            bail!("eval.motion_block must be positive");
        }
        Ok(())
    }

    /// Canonical JSON of the output-shaping fields.
    pub fn canonical(&self) -> serde_json::Value {
        serde_json::to_value(Hashed {
            seed: self.seed,
            format: self.format,
            model: &self.model,
            train: &self.train,
            degrade: &self.degrade,
            tiling: &self.tiling,
            synth: &self.synth,
            eval: &self.eval,
        })
        .expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(&self.canonical()).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Parse `KEY=VALUE`, reading VALUE as a TOML literal and falling back to a bare string.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s.split_once('=').ok_or_else(|| anyhow!("override {s:?} is not KEY=VALUE"))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(String::is_empty) {
        bail!("override key {key:?} has an empty segment");
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()));
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("override path {}: {p} is not a table", path.join(".")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Recursively overlay `top` on `base`.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn resolve_paths(paths: &mut Paths, dir: &Path) {
    for p in [&mut paths.hq, &mut paths.lq, &mut paths.sr, &mut paths.checkpoint, &mut paths.reports]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = dir.join(&*p);
        }
    }
}

/// Build the run configuration from TOML text. `model.preset` selects the
/// base network; other `[model]` keys adjust it. `seed` also seeds the trainer
/// and the degradation pipeline unless they are set explicitly.
pub fn from_toml(text: &str, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut table: Table = text.parse().context("config is not valid TOML")?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut table, &path, value)?;
    }
    if let Some(s) = seed {
        for path in [&["seed"][..], &["train", "seed"], &["degrade", "seed"]] {
            let path: Vec<String> = path.iter().map(|s| s.to_string()).collect();
            set_path(&mut table, &path, Value::Integer(s as i64))?;
        }
    }
    let preset = match table.get_mut("model").and_then(Value::as_table_mut) {
        Some(m) => match m.remove("preset") {
            Some(Value::String(s)) => Some(s),
            Some(v) => bail!("model.preset must be a string, got {v}"),
            None => None,
        },
        None => None,
    };
    let base_model = match &preset {
        Some(name) => ModelConfig::preset(name)?,
        None => ModelConfig::full(),
    };
    let mut model = match Value::try_from(&base_model).context("preset serializes")? {
        Value::Table(t) => t,
        _ => unreachable!("model config is a table"),
    };
    if let Some(Value::Table(user)) = table.remove("model") {
        merge(&mut model, user);
    }
    table.insert("model".into(), Value::Table(model));
    let top_seed = table.get("seed").cloned();
    if let Some(s) = top_seed {
        for section in ["train", "degrade"] {
            let t = table
                .entry(section)
                .or_insert_with(|| Value::Table(Table::new()))
                .as_table_mut()
                .ok_or_else(|| anyhow!("{section} must be a table"))?;
            t.entry("seed").or_insert(s.clone());
        }
    }
    let cfg: RunConfig = Value::Table(table).try_into().map_err(|e: toml::de::Error| anyhow!("{}", e.message()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load `path` (or the defaults when absent) with overrides applied.
pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let (text, dir) = match path {
        Some(p) => (
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::new()),
    };
    let mut cfg = from_toml(&text, overrides, seed).with_context(|| match path {
        Some(p) => format!("config {}", p.display()),
        None => "default config".into(),
    })?;
    resolve_paths(&mut cfg.paths, &dir);
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_then_fields() {
        let cfg = from_toml("[model]\npreset = \"desk\"\nheads = 2\n", &[], None).unwrap();
        assert_eq!(cfg.model, ModelConfig { heads: 2, ..ModelConfig::desk() });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(from_toml("bogus = 1\n", &[], None).is_err());
        assert!(from_toml("[train]\nlearning_rate = 1.0\n", &[], None).is_err());
        assert!(from_toml("", &["model.depth=3".into()], None).is_err());
    }

    #[test]
    fn overrides_parse_literals_and_strings() {
        let cfg = from_toml(
            "[model]\npreset = \"desk\"\n",
            &["train.lr=0.001".into(), "model.variant=temporal".into(), "format=\"ppm\"".into()],
            None,
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.model.variant, dualx_core::topology::AttentionVariant::Temporal);
        assert_eq!(cfg.format, FrameFormat::Ppm);
        let cfg = from_toml("", &["model.preset=tiny".into()], None).unwrap();
        assert_eq!(cfg.model, ModelConfig::tiny());
    }

    #[test]
    fn seed_reaches_every_stage() {
        let cfg = from_toml("[train]\nseed = 4\n", &[], Some(9)).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.degrade.seed), (9, 9, 9));
        let cfg = from_toml("seed = 3\n[train]\nseed = 4\n", &[], None).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.degrade.seed), (3, 4, 3));
    }

    #[test]
    fn hash_ignores_paths_only() {
        let a = from_toml("[paths]\nhq = \"a\"\n", &[], None).unwrap();
        let b = from_toml("[paths]\nhq = \"b\"\n", &[], None).unwrap();
        let c = from_toml("seed = 1\n", &[], None).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(from_toml("[train]\ncrop = 30\n", &[], None).is_err());
        assert!(from_toml("[tiling]\ntile = 4\noverlap = 4\n", &[], None).is_err());
    }
}
