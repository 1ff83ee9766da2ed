//! Run settings gathered from flags and TOML config files. Flags win over
//! file values; anything left unset takes the engine defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use groundcast::detection::{load_detections, load_label_set, DetectionDump, DetectorId};
use groundcast::eval::GtMerge;
use groundcast::localize::ConsensusConfig;
use groundcast::pipeline::parse_detector_set;
use groundcast::{EmbeddingTable, RunConfig, Similarity, Strategy};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Detector set, e.g. `tfcoco+tfoid+places365` or `CC+OI+PL`.
    #[arg(long)]
    pub detectors: Option<String>,
    /// w2v_avg, w2v_max, w2v_last or no_filter.
    #[arg(long)]
    pub similarity: Option<String>,
    /// random, largest, confidence, union or consensus.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub consensus_k: Option<usize>,
    #[arg(long)]
    pub consensus_threshold: Option<f64>,
    /// Correct out-of-vocabulary query words [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub spell_correct: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Word vectors in word2vec text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Optional `token count` file overriding rank-derived frequencies.
    #[arg(long)]
    pub frequencies: Option<PathBuf>,
    /// Detection dump, as `path` or `detector=path`. Repeatable.
    #[arg(long)]
    #[serde(default)]
    pub detections: Vec<String>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// How multi-box ground truths are merged: union or first.
    #[arg(long)]
    pub gt_merge: Option<String>,
    /// Labels kept for tfcoco20, one per line [default: the 20 VOC classes].
    #[arg(long)]
    pub coco20_labels: Option<PathBuf>,
}

impl Settings {
    /// Fills unset fields from `base`.
    pub fn or(mut self, base: &Settings) -> Settings {
        macro_rules! fill {
            ($($f:ident),*) => {$(
                if self.$f.is_none() {
                    self.$f = base.$f.clone();
                }
            )*};
        }
        fill!(
            detectors,
            similarity,
            strategy,
            consensus_k,
            consensus_threshold,
            spell_correct,
            seed,
            embeddings,
            frequencies,
            queries,
            gt_merge,
            coco20_labels
        );
        if self.detections.is_empty() {
            self.detections = base.detections.clone();
        }
        self
    }

    /// Resolves relative paths against `dir`, the config file's directory.
    pub fn relative_to(mut self, dir: &Path) -> Settings {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        };
        fix(&mut self.embeddings);
        fix(&mut self.frequencies);
        fix(&mut self.queries);
        fix(&mut self.coco20_labels);
        for d in &mut self.detections {
            let (id, path) = split_detection_arg(d);
            if Path::new(path).is_relative() {
                let joined = dir.join(path).display().to_string();
                *d = match id {
                    Some(id) => format!("{id}={joined}"),
                    None => joined,
                };
            }
        }
        self
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(d) = &self.detectors {
            cfg.detectors = parse_detector_set(d)?;
        }
        if let Some(s) = &self.similarity {
            cfg.similarity = s.parse::<Similarity>()?;
        }
        if let Some(s) = &self.strategy {
            cfg.strategy = s.parse::<Strategy>()?;
        }
        let defaults = ConsensusConfig::default();
        cfg.consensus = ConsensusConfig {
            top_k: self.consensus_k.unwrap_or(defaults.top_k),
            similarity_threshold: self.consensus_threshold.unwrap_or(defaults.similarity_threshold),
        };
        cfg.spell_correct = self.spell_correct.unwrap_or(true);
        cfg.seed = self.seed.unwrap_or(0);
        if let Some(path) = &self.coco20_labels {
            cfg.subset20 = load_label_set(path).with_context(|| format!("loading {}", path.display()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn gt_merge(&self) -> Result<GtMerge> {
        parse_gt_merge(self.gt_merge.as_deref())
    }

    pub fn queries_path(&self) -> Result<&Path> {
        self.queries.as_deref().context("--queries is required")
    }

    pub fn load_embeddings(&self) -> Result<EmbeddingTable> {
        let path = self.embeddings.as_deref().context("--embeddings is required")?;
        let mut table = EmbeddingTable::load(path).with_context(|| format!("loading embeddings {}", path.display()))?;
        if let Some(f) = &self.frequencies {
            table
                .load_frequencies(f)
                .with_context(|| format!("loading frequencies {}", f.display()))?;
        }
        Ok(table)
    }

    pub fn load_detections(&self) -> Result<Vec<DetectionDump>> {
        self.detections
            .iter()
            .map(|arg| {
                let (id, path) = split_detection_arg(arg);
                let hint = id.map(str::parse::<DetectorId>).transpose()?;
                load_detections(path, hint).with_context(|| format!("loading detections {path}"))
            })
            .collect()
    }
}

pub fn parse_gt_merge(s: Option<&str>) -> Result<GtMerge> {
    match s {
        None | Some("union") => Ok(GtMerge::Union),
        Some("first") => Ok(GtMerge::First),
        Some(other) => bail!("unknown gt merge rule `{other}` (expected union or first)"),
    }
}

/// `tfcoco=dets.json` -> (Some("tfcoco"), "dets.json"); plain paths have no id.
fn split_detection_arg(arg: &str) -> (Option<&str>, &str) {
    match arg.split_once('=') {
        Some((id, path)) if id.parse::<DetectorId>().is_ok() => (Some(id), path),
        _ => (None, arg),
    }
}

pub fn read_settings_file(path: &Path) -> Result<Settings> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s: Settings = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(s.relative_to(path.parent().unwrap_or(Path::new("."))))
}

/// A sweep file: shared settings at top level and one `[[run]]` table per
/// configuration.
#[derive(Debug, Deserialize)]
pub struct SweepFile {
    #[serde(flatten)]
    pub shared: BTreeMap<String, toml::Value>,
    #[serde(default)]
    pub run: Vec<toml::Value>,
}

/// A sweep entry: optional display name and its own settings.
pub type NamedRun = (Option<String>, Settings);

pub fn read_sweep_file(path: &Path) -> Result<(Settings, Vec<NamedRun>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: SweepFile = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let shared: Settings = toml::Value::Table(file.shared.into_iter().collect())
        .try_into()
        .with_context(|| format!("{}: shared settings", path.display()))?;
    let shared = shared.relative_to(dir);
    if file.run.is_empty() {
        bail!("{}: no [[run]] entries", path.display());
    }
    let runs = file
        .run
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut table = match v {
                toml::Value::Table(t) => t,
                _ => bail!("{}: run {} is not a table", path.display(), i + 1),
            };
            let name = match table.remove("name") {
                Some(toml::Value::String(s)) => Some(s),
                None => None,
                Some(_) => bail!("{}: run {}: name must be a string", path.display(), i + 1),
            };
            let s: Settings = toml::Value::Table(table)
                .try_into()
                .with_context(|| format!("{}: run {}", path.display(), i + 1))?;
            Ok((name, s.relative_to(dir)))
        })
        .collect::<Result<_>>()?;
    Ok((shared, runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: Settings = toml::from_str("strategy = \"largest\"\nseed = 3\nconsensus-k = 2").unwrap();
        let flags = Settings {
            strategy: Some("union".into()),
            ..Settings::default()
        };
        let merged = flags.or(&file);
        let cfg = merged.run_config().unwrap();
        assert_eq!(cfg.strategy, Strategy::Union);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.consensus.top_k, 2);
        assert!(cfg.spell_correct);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("strategy = \"union\"\nstrategee = 1").is_err());
    }

    #[test]
    fn detection_args() {
        assert_eq!(split_detection_arg("tfoid=a=b.json"), (Some("tfoid"), "a=b.json"));
        assert_eq!(split_detection_arg("x=b.json"), (None, "x=b.json"));
        assert_eq!(split_detection_arg("b.json"), (None, "b.json"));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let s = Settings {
            embeddings: Some("v.txt".into()),
            detections: vec!["tfcoco=d.json".into(), "/abs/e.json".into()],
            ..Settings::default()
        }
        .relative_to(Path::new("/cfg"));
        assert_eq!(s.embeddings.unwrap(), PathBuf::from("/cfg/v.txt"));
        assert_eq!(s.detections, ["tfcoco=/cfg/d.json", "/abs/e.json"]);
    }
}
