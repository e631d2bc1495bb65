//! Flat `key=value` run configuration.
//!
//! ```text
//! # RMA-Mamba-S at desk scale
//! variant=S
//! attention=RMA
//! desk_divisor=8
//! lr=1e-4
//! ```
//!
//! Blank lines and text after `#` are ignored. `variant` is applied first
//! and sets the depth and extra-block defaults; every other key overrides
//! it regardless of order. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use rma_core::model::Supervision;
use rma_core::ss2d::ScanMode;
use rma_core::train::TrainConfig;
use rma_core::{AttentionMode, ModelConfig, Variant};

use crate::error::{Error, Result};

/// Keys that describe the network; a checkpoint must agree on all of them.
pub const MODEL_KEYS: &[&str] = &[
    "variant",
    "n_extra_vss",
    "attention",
    "ladder",
    "depths",
    "desk_divisor",
    "d_state",
    "expansion",
    "conv_kernel",
    "scan_mode",
    "ffn_ratio",
    "supervision",
];

pub const TRAIN_KEYS: &[&str] = &[
    "lr",
    "plateau_factor",
    "plateau_patience",
    "max_epochs",
    "early_stop_patience",
    "batch_size",
    "image_size",
    "seed",
    "augment",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::tiny(),
            train: TrainConfig::default(),
        }
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Tiny => "T",
        Variant::Small => "S",
    }
}

fn list<const N: usize>(v: [usize; N]) -> String {
    v.map(|x| x.to_string()).join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigSyntax {
                line: line_no,
                msg: format!("expected key=value, got `{line}`"),
            })?;
            let key = key.trim().to_ascii_lowercase();
            if !MODEL_KEYS.contains(&key.as_str()) && !TRAIN_KEYS.contains(&key.as_str()) {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    msg: format!("unknown key `{key}`"),
                });
            }
            if entries.insert(key.clone(), (line_no, value.trim().to_string())).is_some() {
                return Err(Error::ConfigSyntax {
                    line: line_no,
                    msg: format!("key `{key}` given twice"),
                });
            }
        }

        let mut cfg = RunConfig::default();
        if let Some((line, v)) = entries.remove("variant") {
            let variant = match v.to_ascii_lowercase().as_str() {
                "t" | "tiny" => Variant::Tiny,
                "s" | "small" => Variant::Small,
                _ => return Err(bad(line, "variant", &v)),
            };
            cfg.model = ModelConfig::new(variant);
        }
        for (key, (line, v)) in &entries {
            let line = *line;
            let m = &mut cfg.model;
            let t = &mut cfg.train;
            match key.as_str() {
                "n_extra_vss" => m.n_extra_vss = num(line, key, v)?,
                "attention" => {
                    m.attention = match v.to_ascii_lowercase().as_str() {
                        "rma" => AttentionMode::Rma,
                        "ra" => AttentionMode::Ra,
                        _ => return Err(bad(line, key, v)),
                    }
                }
                "ladder" => m.encoder.ladder = array(line, key, v)?,
                "depths" => m.encoder.depths = array(line, key, v)?,
                "desk_divisor" => m.encoder.divisor = num(line, key, v)?,
                "d_state" => m.ssm.d_state = num(line, key, v)?,
                "expansion" => m.ssm.expansion = num(line, key, v)?,
                "conv_kernel" => m.ssm.conv_kernel = num(line, key, v)?,
                "scan_mode" => {
                    m.ssm.scan_mode = match v.to_ascii_lowercase().as_str() {
                        "sequential" => ScanMode::Sequential,
                        "parallel" => ScanMode::Parallel,
                        _ => return Err(bad(line, key, v)),
                    }
                }
                "ffn_ratio" => m.ffn_ratio = num(line, key, v)?,
                "supervision" => {
                    m.supervision = match v.to_ascii_lowercase().as_str() {
                        "deep" => Supervision::Deep,
                        "final" => Supervision::FinalOnly,
                        _ => return Err(bad(line, key, v)),
                    }
                }
                "lr" => t.lr = num(line, key, v)?,
                "plateau_factor" => t.plateau_factor = num(line, key, v)?,
                "plateau_patience" => t.plateau_patience = num(line, key, v)?,
                "max_epochs" => t.max_epochs = num(line, key, v)?,
                "early_stop_patience" => t.early_stop_patience = num(line, key, v)?,
                "batch_size" => t.batch_size = num(line, key, v)?,
                "image_size" => t.image_size = num(line, key, v)?,
                "seed" => t.seed = num(line, key, v)?,
                "augment" => t.augment = num(line, key, v)?,
                _ => unreachable!("key validated above"),
            }
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Text form that [`RunConfig::parse`] reads back to an equal value.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to string");
        kv("variant", variant_name(m.variant).into());
        kv("n_extra_vss", m.n_extra_vss.to_string());
        kv(
            "attention",
            match m.attention {
                AttentionMode::Rma => "RMA",
                AttentionMode::Ra => "RA",
            }
            .into(),
        );
        kv("ladder", list(m.encoder.ladder));
        kv("depths", list(m.encoder.depths));
        kv("desk_divisor", m.encoder.divisor.to_string());
        kv("d_state", m.ssm.d_state.to_string());
        kv("expansion", m.ssm.expansion.to_string());
        kv("conv_kernel", m.ssm.conv_kernel.to_string());
        kv(
            "scan_mode",
            match m.ssm.scan_mode {
                ScanMode::Sequential => "sequential",
                ScanMode::Parallel => "parallel",
            }
            .into(),
        );
        kv("ffn_ratio", m.ffn_ratio.to_string());
        kv(
            "supervision",
            match m.supervision {
                Supervision::Deep => "deep",
                Supervision::FinalOnly => "final",
            }
            .into(),
        );
        kv("lr", format!("{:e}", t.lr));
        kv("plateau_factor", t.plateau_factor.to_string());
        kv("plateau_patience", t.plateau_patience.to_string());
        kv("max_epochs", t.max_epochs.to_string());
        kv("early_stop_patience", t.early_stop_patience.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("image_size", t.image_size.to_string());
        kv("seed", t.seed.to_string());
        kv("augment", t.augment.to_string());
        s
    }
}

fn bad(line: usize, key: &str, value: &str) -> Error {
    Error::ConfigSyntax {
        line,
        msg: format!("invalid value `{value}` for `{key}`"),
    }
}

fn num<V: FromStr>(line: usize, key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| bad(line, key, value))
}

fn array(line: usize, key: &str, value: &str) -> Result<[usize; 4]> {
    let parts: Vec<usize> = value
        .split(',')
        .map(|p| num(line, key, p.trim()))
        .collect::<Result<_>>()?;
    parts.try_into().map_err(|_| bad(line, key, value))
}

/// Names the model keys on which two configurations differ.
pub fn model_diff(a: &ModelConfig, b: &ModelConfig) -> Vec<String> {
    let text = |m: &ModelConfig| {
        RunConfig {
            model: *m,
            train: TrainConfig::default(),
        }
        .to_text()
    };
    let (ta, tb) = (text(a), text(b));
    ta.lines()
        .zip(tb.lines())
        .filter(|(x, y)| x != y)
        .filter_map(|(x, y)| {
            let key = x.split('=').next()?;
            MODEL_KEYS
                .contains(&key)
                .then(|| format!("{key}: {} vs {}", &x[key.len() + 1..], &y[key.len() + 1..]))
        })
        .collect()
}
