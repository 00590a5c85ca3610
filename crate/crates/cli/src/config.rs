//! Pipeline configuration: a TOML document layered as
//! built-in defaults, then the config file, then `--section.key value` flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tad_core::augment::{AugmentMode, ShiftSpec};
use tad_core::metrics::{default_tiou_thresholds, EvalConfig};
use tad_core::postproc::NmsConfig;
use tad_core::propgen::{DecodeConfig, ScoreFusion};
use tad_core::relation::{BatchOrder, CombineMode, PoolConfig, TrainConfig};
use tad_core::synth::SynthConfig;
use toml::{Table, Value};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed for synthetic data and relation weight initialization.
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub parallelism: usize,
    pub paths: PathsConfig,
    pub propgen: PropgenConfig,
    pub relation: RelationConfig,
    pub postproc: PostprocConfig,
    pub metrics: MetricsConfig,
    pub augment: AugmentConfig,
    pub synth: SynthConfig,
}

/// Relative paths are resolved against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub features_dir: PathBuf,
    pub annotations: PathBuf,
    pub classification: PathBuf,
    pub head_weights: PathBuf,
    pub relation_weights: PathBuf,
    /// Proposal file read by `relate`, `train-relation`, `detect` and `eval-proposals`.
    pub proposals: PathBuf,
    /// Submission file read by `eval-detections`.
    pub detections: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropgenConfig {
    /// Snippets per video; features are resampled to this length.
    pub t: usize,
    /// Longest proposal, in snippets.
    pub d_max: usize,
    pub boundary_ratio: f64,
    pub max_proposals: usize,
    pub fusion: ScoreFusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationConfig {
    /// Bins per pooled region.
    pub bins: usize,
    pub context_ratio: f64,
    pub d_att: usize,
    pub hidden: usize,
    pub combine_mode: CombineMode,
    pub lr: f64,
    pub epochs: usize,
    pub order: BatchOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostprocConfig {
    pub sigma: f64,
    pub score_floor: f64,
    pub top_k: usize,
    pub top_k_classes: usize,
    pub ensemble_mode: EnsembleMode,
    /// Submission files (`detections` mode) or head weight manifests (`maps` mode).
    pub ensemble_inputs: Vec<PathBuf>,
    /// One weight per input; empty means equal weights.
    pub ensemble_weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    Detections,
    Maps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub tiou_thresholds: Vec<f64>,
    pub proposal_recall_thresholds: Vec<f64>,
    /// AR is evaluated at every AN in `1..=max_an`.
    pub max_an: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub forward_fraction: f64,
    pub backward_fraction: f64,
    pub step: usize,
    pub mode: AugmentMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let decode = DecodeConfig::default();
        let pool = PoolConfig::default();
        let train = TrainConfig::default();
        let nms = NmsConfig::default();
        let shift = ShiftSpec::default();
        Self {
            seed: 0,
            parallelism: 0,
            paths: PathsConfig {
                features_dir: "data/features".into(),
                annotations: "data/annotations.json".into(),
                classification: "data/classification.json".into(),
                head_weights: "weights/head.json".into(),
                relation_weights: "weights/relation.json".into(),
                proposals: "out/proposals.json".into(),
                detections: "out/detections.json".into(),
                output_dir: "out".into(),
            },
            propgen: PropgenConfig {
                t: 100,
                d_max: 100,
                boundary_ratio: decode.boundary_ratio,
                max_proposals: decode.max_proposals,
                fusion: decode.fusion,
            },
            relation: RelationConfig {
                bins: pool.bins,
                context_ratio: pool.context_ratio,
                d_att: train.d_att,
                hidden: train.h_r,
                combine_mode: CombineMode::default(),
                lr: train.lr,
                epochs: train.epochs,
                order: train.order,
            },
            postproc: PostprocConfig {
                sigma: nms.sigma,
                score_floor: nms.score_floor,
                top_k: nms.top_k,
                top_k_classes: 2,
                ensemble_mode: EnsembleMode::Detections,
                ensemble_inputs: Vec::new(),
                ensemble_weights: Vec::new(),
            },
            metrics: MetricsConfig {
                tiou_thresholds: default_tiou_thresholds(),
                proposal_recall_thresholds: default_tiou_thresholds(),
                max_an: 100,
            },
            augment: AugmentConfig {
                forward_fraction: shift.forward_fraction,
                backward_fraction: shift.backward_fraction,
                step: shift.step,
                mode: AugmentMode::default(),
            },
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Defaults, overlaid with the file at `path` (if any), overlaid with
    /// `overrides` given as (dotted key, raw value) pairs.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, Failure> {
        let mut tree = Value::try_from(Self::default()).expect("defaults serialize");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Io(format!("cannot read config {}: {e}", path.display())))?;
            let file: Table = text
                .parse()
                .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            merge(&mut tree, Value::Table(file));
        }
        for (key, raw) in overrides {
            set_dotted(&mut tree, key, parse_scalar(raw))?;
        }
        let cfg: Self = tree
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Config(e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |e: tad_core::Error| Failure::Config(e.to_string());
        if self.propgen.t == 0 || self.propgen.d_max == 0 {
            return Err(Failure::Config("propgen.t and propgen.d_max must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.propgen.boundary_ratio) {
            return Err(Failure::Config("propgen.boundary_ratio must be in [0, 1]".into()));
        }
        if self.relation.bins == 0 || self.relation.d_att == 0 || self.relation.hidden == 0 {
            return Err(Failure::Config(
                "relation.bins, d_att and hidden must be positive".into(),
            ));
        }
        if self.relation.context_ratio.is_nan()
            || self.relation.context_ratio < 0.0
            || self.relation.lr.is_nan()
            || self.relation.lr <= 0.0
        {
            return Err(Failure::Config(
                "relation.context_ratio must be >= 0 and relation.lr > 0".into(),
            ));
        }
        if self.postproc.top_k_classes == 0 {
            return Err(Failure::Config("postproc.top_k_classes must be positive".into()));
        }
        self.nms().validate().map_err(bad)?;
        self.eval().validate().map_err(bad)?;
        self.shift().validate().map_err(bad)?;
        Ok(())
    }

    pub fn decode(&self) -> DecodeConfig {
        DecodeConfig {
            boundary_ratio: self.propgen.boundary_ratio,
            max_proposals: self.propgen.max_proposals,
            fusion: self.propgen.fusion,
        }
    }

    pub fn pool(&self) -> PoolConfig {
        PoolConfig {
            bins: self.relation.bins,
            context_ratio: self.relation.context_ratio,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            lr: self.relation.lr,
            epochs: self.relation.epochs,
            seed: self.seed,
            d_att: self.relation.d_att,
            h_r: self.relation.hidden,
            order: self.relation.order,
        }
    }

    pub fn nms(&self) -> NmsConfig {
        NmsConfig {
            sigma: self.postproc.sigma,
            score_floor: self.postproc.score_floor,
            top_k: self.postproc.top_k,
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            tiou_thresholds: self.metrics.tiou_thresholds.clone(),
            an_grid: (1..=self.metrics.max_an).collect(),
            proposal_recall_thresholds: self.metrics.proposal_recall_thresholds.clone(),
        }
    }

    pub fn shift(&self) -> ShiftSpec {
        ShiftSpec {
            forward_fraction: self.augment.forward_fraction,
            backward_fraction: self.augment.backward_fraction,
            step: self.augment.step,
        }
    }

    /// The commented default configuration written to `config.example`.
    pub fn example() -> String {
        let body = toml::to_string(&Self::default()).expect("defaults serialize");
        format!(
            "# Pipeline configuration. Every key may also be given on the command line\n\
             # as --section.key VALUE (e.g. --propgen.t 128); flags win over this file.\n\
             # Relative paths are resolved against the working directory.\n\n{body}"
        )
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Table(base), Value::Table(overlay)) => {
            for (k, v) in overlay {
                match base.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        base.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_dotted(tree: &mut Value, key: &str, value: Value) -> Result<(), Failure> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Table(table) = node else {
            return Err(Failure::Config(format!(
                "--{key}: {} is not a section",
                parts[..i].join(".")
            )));
        };
        if !table.contains_key(*part) {
            return Err(Failure::Config(format!("--{key}: unknown key")));
        }
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table.get_mut(*part).expect("checked");
    }
    unreachable!("split yields at least one part")
}

/// A flag value as TOML when it parses as one (number, bool, array), else a
/// bare string.
fn parse_scalar(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// (dotted key, raw value) pairs taken from the command line.
pub type Overrides = Vec<(String, String)>;

/// Splits `--a.b VALUE` / `--a.b=VALUE` overrides out of the argument list.
/// Everything else is returned untouched for the regular parser.
pub fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides), Failure> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (flag.to_string(), None),
        };
        if !key.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .ok_or_else(|| Failure::Config(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}
