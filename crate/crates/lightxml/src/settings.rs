//! Resolved run settings and `key=value` configuration files.
//!
//! Precedence, lowest first: built-in defaults, the named preset, the
//! config file, command-line flags.

use std::path::Path;

use lightxml_core::encoder::EncoderConfig;
use lightxml_core::rank::{Bottleneck, TargetPolarity};
use lightxml_core::train::{preset, SamplingMode, TrainConfig};

use crate::error::{CliError, Result};

/// Ordered `key=value` pairs.
pub type Pairs = Vec<(String, String)>;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub concat_layers: usize,
    pub block_dropout: f64,
    pub min_freq: usize,
    /// 64-bit floats end to end.
    pub verify: bool,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hidden: 128,
            layers: 4,
            heads: 4,
            ff_dim: 512,
            concat_layers: 4,
            block_dropout: 0.1,
            min_freq: 1,
            verify: false,
        }
    }
}

pub const KEYS: [&str; 26] = [
    "preset",
    "epochs",
    "batch_size",
    "b_top",
    "embed_dim",
    "cluster_size",
    "max_len",
    "lr",
    "weight_decay",
    "decay_bias_norm",
    "dropout",
    "sampling",
    "swa_start_epoch",
    "static_warmup_epochs",
    "clip_norm",
    "polarity",
    "bottleneck",
    "seed",
    "hidden",
    "layers",
    "heads",
    "ff_dim",
    "concat_layers",
    "block_dropout",
    "min_freq",
    "verify",
];

fn bad(key: &str, value: &str) -> CliError {
    CliError::Usage(format!("invalid value {value:?} for {key}"))
}

fn num<N: std::str::FromStr>(key: &str, value: &str) -> Result<N> {
    value.parse().map_err(|_| bad(key, value))
}

fn opt<N: std::str::FromStr>(key: &str, value: &str) -> Result<Option<N>> {
    match value {
        "auto" | "none" => Ok(None),
        v => num(key, v).map(Some),
    }
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn show_opt<N: ToString>(v: &Option<N>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), N::to_string)
}

impl Settings {
    /// Applies one override. `preset` only records the name; use
    /// [`Settings::resolve`] to load a preset's values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "preset" => t.preset = if value == "none" { String::new() } else { value.to_string() },
            "epochs" => t.epochs = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "b_top" => t.b_top = opt(key, value)?,
            "embed_dim" => t.embed_dim = num(key, value)?,
            "cluster_size" => t.cluster_size = num(key, value)?,
            "max_len" => t.max_len = num(key, value)?,
            "lr" => t.lr = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "decay_bias_norm" => t.decay_bias_norm = flag(key, value)?,
            "dropout" => t.dropout = num(key, value)?,
            "sampling" => t.sampling = value.parse().map_err(|_| bad(key, value))?,
            "swa_start_epoch" => t.swa_start_epoch = opt(key, value)?,
            "static_warmup_epochs" => t.static_warmup_epochs = opt(key, value)?,
            "clip_norm" => t.clip_norm = opt(key, value)?,
            "polarity" => {
                t.polarity = match value {
                    "high" => TargetPolarity::PositivesHigh,
                    "low" => TargetPolarity::PositivesLow,
                    _ => return Err(bad(key, value)),
                }
            }
            "bottleneck" => {
                t.bottleneck = match value {
                    "sigmoid" => Bottleneck::Sigmoid,
                    "relu" => Bottleneck::Relu,
                    _ => return Err(bad(key, value)),
                }
            }
            "seed" => t.seed = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "ff_dim" => self.ff_dim = num(key, value)?,
            "concat_layers" => self.concat_layers = num(key, value)?,
            "block_dropout" => self.block_dropout = num(key, value)?,
            "min_freq" => self.min_freq = num(key, value)?,
            "verify" => self.verify = flag(key, value)?,
            _ => return Err(CliError::Usage(format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Defaults, then the preset named by `flags` or `file`, then `file`,
    /// then `flags`.
    pub fn resolve(file: &[(String, String)], flags: &[(String, String)]) -> Result<Self> {
        let mut s = Settings::default();
        // The last flag entry wins, else the last file entry.
        let named = flags
            .iter()
            .rev()
            .find(|(k, _)| k == "preset")
            .or_else(|| file.iter().rev().find(|(k, _)| k == "preset"))
            .map(|(_, v)| v.as_str());
        if let Some(name) = named.filter(|n| !n.is_empty() && *n != "none") {
            let p = preset(name).ok_or_else(|| CliError::Usage(format!("unknown preset {name:?}")))?;
            s.train.apply_preset(p);
        }
        for (k, v) in file.iter().chain(flags) {
            s.set(k, v)?;
        }
        Ok(s)
    }

    /// Every setting, materialized.
    pub fn to_pairs(&self) -> Pairs {
        let t = &self.train;
        let polarity = match t.polarity {
            TargetPolarity::PositivesHigh => "high",
            TargetPolarity::PositivesLow => "low",
        };
        let bottleneck = match t.bottleneck {
            Bottleneck::Sigmoid => "sigmoid",
            Bottleneck::Relu => "relu",
        };
        let preset_name = if t.preset.is_empty() { "none" } else { &t.preset };
        [
            ("preset", preset_name.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("b_top", show_opt(&t.b_top, "auto")),
            ("embed_dim", t.embed_dim.to_string()),
            ("cluster_size", t.cluster_size.to_string()),
            ("max_len", t.max_len.to_string()),
            ("lr", t.lr.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("decay_bias_norm", t.decay_bias_norm.to_string()),
            ("dropout", t.dropout.to_string()),
            ("sampling", t.sampling.as_str().to_string()),
            ("swa_start_epoch", show_opt(&t.swa_start_epoch, "auto")),
            ("static_warmup_epochs", show_opt(&t.static_warmup_epochs, "auto")),
            ("clip_norm", show_opt(&t.clip_norm, "none")),
            ("polarity", polarity.to_string()),
            ("bottleneck", bottleneck.to_string()),
            ("seed", t.seed.to_string()),
            ("hidden", self.hidden.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("ff_dim", self.ff_dim.to_string()),
            ("concat_layers", self.concat_layers.to_string()),
            ("block_dropout", self.block_dropout.to_string()),
            ("min_freq", self.min_freq.to_string()),
            ("verify", self.verify.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        let mut c = EncoderConfig::new(vocab_size, self.hidden, self.layers, self.heads, self.train.max_len);
        c.ff_dim = self.ff_dim;
        c.concat_layers = self.concat_layers.min(self.layers);
        c.block_dropout = self.block_dropout;
        c
    }

    pub fn sampling(&self) -> SamplingMode {
        self.train.sampling
    }
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped, as
/// are keys under `input.`, `artifact.` and `run.`, so a run manifest can
/// be fed back as a config file.
pub fn parse_pairs(text: &str, path: &Path) -> Result<Pairs> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(path, i + 1, format!("expected key=value, got {line:?}")))?;
        let k = k.trim();
        if ["input.", "artifact.", "run."].iter().any(|p| k.starts_with(p)) {
            continue;
        }
        if !KEYS.contains(&k) {
            return Err(CliError::parse(path, i + 1, format!("unknown setting {k:?}")));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn read_pairs(path: &Path) -> Result<Pairs> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_pairs(&text, path)
}

pub fn format_pairs(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Pairs {
        items.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn preset_resolves_table_values() {
        let s = Settings::resolve(&[], &pairs(&[("preset", "eurlex-4k")])).unwrap();
        assert_eq!((s.train.epochs, s.train.batch_size, s.train.max_len), (20, 16, 512));
        let s = Settings::resolve(&[], &pairs(&[("preset", "wiki-500k")])).unwrap();
        assert_eq!((s.train.embed_dim, s.train.cluster_size, s.train.max_len), (500, 60, 128));
    }

    #[test]
    fn precedence() {
        let file = pairs(&[("preset", "eurlex-4k"), ("epochs", "7"), ("lr", "0.5")]);
        let flags = pairs(&[("epochs", "3")]);
        let s = Settings::resolve(&file, &flags).unwrap();
        assert_eq!(s.train.epochs, 3);
        assert_eq!(s.train.lr, 0.5);
        assert_eq!(s.train.batch_size, 16);
        // A flag preset replaces the file's, but file values still override it.
        let flags = pairs(&[("preset", "wiki-500k")]);
        let s = Settings::resolve(&file, &flags).unwrap();
        assert_eq!((s.train.batch_size, s.train.epochs), (32, 7));
        assert_eq!(s.train.preset, "wiki-500k");
    }

    #[test]
    fn pairs_roundtrip() {
        let mut s = Settings::default();
        s.train.clip_norm = None;
        s.train.b_top = Some(4);
        s.train.lr = 3e-3;
        s.train.sampling = SamplingMode::Static;
        let text = format_pairs(&s.to_pairs());
        let back = Settings::resolve(&parse_pairs(&text, Path::new("c")).unwrap(), &[]).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn unknown_keys_and_values_rejected() {
        assert!(parse_pairs("nope=1\n", Path::new("c")).is_err());
        assert!(parse_pairs("epochs\n", Path::new("c")).is_err());
        assert!(Settings::resolve(&pairs(&[("epochs", "x")]), &[]).is_err());
        assert!(Settings::resolve(&pairs(&[("preset", "mnist")]), &[]).is_err());
        let p = parse_pairs("# c\n\ninput.train=x\nepochs = 2\n", Path::new("c")).unwrap();
        assert_eq!(p, pairs(&[("epochs", "2")]));
    }
}
