//! Text renderings: predictions, evaluation reports, per-epoch log lines
//! and run manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use lightxml_core::metrics::EvalReport;
use lightxml_core::predict::Prediction;
use lightxml_core::train::EpochRecord;

use crate::error::{CliError, Result};
use crate::settings::{format_pairs, Pairs};

/// `x` with 6 significant digits, trailing zeros dropped.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (m, e) = s.split_once('e').expect("exponent form");
        let m = if m.contains('.') {
            m.trim_end_matches('0').trim_end_matches('.')
        } else {
            m
        };
        format!("{m}e{e}")
    }
}

/// `label:score` pairs separated by spaces.
pub fn format_prediction(p: &Prediction) -> String {
    p.labels
        .iter()
        .map(|(l, s)| format!("{l}:{}", sig6(*s)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Inverse of [`format_prediction`].
pub fn parse_prediction(line: &str) -> Option<Vec<(u32, f64)>> {
    line.split_whitespace()
        .map(|pair| {
            let (l, s) = pair.split_once(':')?;
            Some((l.parse().ok()?, s.parse().ok()?))
        })
        .collect()
}

/// Aligned table followed by `key=value` lines.
pub fn format_eval(precisions: &[(usize, f64)], report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16}{:>10}", "metric", "value");
    for (k, p) in precisions {
        let _ = writeln!(out, "{:<16}{:>10.4}", format!("P@{k}"), p);
    }
    let _ = writeln!(out, "{:<16}{:>10.4}", "cluster_recall", report.cluster_recall);
    let _ = writeln!(out, "{:<16}{:>10}", "instances", report.instances);
    for (k, p) in precisions {
        let _ = writeln!(out, "p{k}={p}");
    }
    let _ = writeln!(out, "cluster_recall={}", report.cluster_recall);
    let _ = writeln!(out, "instances={}", report.instances);
    out
}

/// One grep-able line per epoch; dev metrics are `nan` when no dev set was
/// given.
pub fn format_epoch(r: &EpochRecord) -> String {
    let dev = r.dev.unwrap_or(EvalReport {
        p1: f64::NAN,
        p3: f64::NAN,
        p5: f64::NAN,
        cluster_recall: f64::NAN,
        instances: 0,
    });
    format!(
        "epoch={} loss_g={:.6} loss_d={:.6} half_epoch_loss={:.6} warmup={} sample_calls={} p1={:.4} p3={:.4} p5={:.4} cluster_recall={:.4} wall_ms={}",
        r.epoch,
        r.loss_g,
        r.loss_d,
        r.half_epoch_loss,
        r.warmup,
        r.sample_calls,
        dev.p1,
        dev.p3,
        dev.p5,
        dev.cluster_recall,
        r.wall_ms.unwrap_or(0),
    )
}

/// Everything needed to repeat a command: the resolved settings, the
/// inputs it read and the artifacts it wrote.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub settings: Pairs,
    pub inputs: Vec<(String, PathBuf)>,
    pub artifacts: Vec<(String, PathBuf)>,
    /// Command-specific facts, such as the sampling mode.
    pub facts: Pairs,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, settings: Pairs) -> Self {
        Self {
            command: command.to_string(),
            seed,
            settings,
            ..Self::default()
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> &mut Self {
        self.inputs.push((role.to_string(), path.to_path_buf()));
        self
    }

    pub fn artifact(&mut self, role: &str, path: &Path) -> &mut Self {
        self.artifacts.push((role.to_string(), path.to_path_buf()));
        self
    }

    pub fn fact(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.facts.push((key.to_string(), value.to_string()));
        self
    }

    /// `run.*`, `input.*` and `artifact.*` lines, then the settings. The
    /// file can be passed back with `--config`.
    pub fn render(&self) -> String {
        let mut out = format!(
            "run.command={}\nrun.tool_version={}\nrun.seed={}\n",
            self.command,
            env!("CARGO_PKG_VERSION"),
            self.seed
        );
        for (k, v) in &self.facts {
            let _ = writeln!(out, "run.{k}={v}");
        }
        for (k, p) in &self.inputs {
            let _ = writeln!(out, "input.{k}={}", p.display());
        }
        for (k, p) in &self.artifacts {
            let _ = writeln!(out, "artifact.{k}={}", p.display());
        }
        out.push_str(&format_pairs(&self.settings));
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| CliError::io(path, e))
    }
}

/// Where the manifest of `artifact` goes.
pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut s = artifact.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.4), "0.4");
        assert_eq!(sig6(0.123456789), "0.123457");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(1234567.0), "1.23457e6");
        assert_eq!(sig6(0.000012345678), "1.23457e-5");
        assert_eq!(sig6(0.00012345678), "0.000123457");
    }

    #[test]
    fn prediction_line() {
        let p = Prediction {
            labels: vec![(3, 0.75), (1, 0.5)],
            short: false,
        };
        let line = format_prediction(&p);
        assert_eq!(line, "3:0.75 1:0.5");
        assert_eq!(parse_prediction(&line).unwrap(), p.labels);
    }

    #[test]
    fn manifest_feeds_back_as_config() {
        let settings = crate::settings::Settings::default().to_pairs();
        let mut m = RunManifest::new("train", 7, settings);
        m.input("train_text", Path::new("a.txt")).fact("sampling", "static");
        let text = m.render();
        assert!(text.contains("run.sampling=static"));
        let pairs = crate::settings::parse_pairs(&text, Path::new("m")).unwrap();
        let s = crate::settings::Settings::resolve(&pairs, &[]).unwrap();
        assert_eq!(s, crate::settings::Settings::default());
    }
}
