//! Statistic tables and their CSV, JSON and plotting-script renderings.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::stats::Estimate;

/// How a row is judged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// `|z| <= threshold` against a target.
    Mean,
    /// `p >= threshold` for a distributional test.
    Distribution,
    /// Fitted quantity within an explicit tolerance.
    Fit,
    /// Reported only.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub name: String,
    #[serde(with = "nullable")]
    pub estimate: f64,
    #[serde(with = "nullable")]
    pub stderr: f64,
    pub target: Option<f64>,
    pub z: Option<f64>,
    pub p_value: Option<f64>,
    pub pass: bool,
    pub kind: RowKind,
    /// Formula and parameters behind the target.
    pub oracle: Option<String>,
}

impl StatRow {
    pub fn mean(name: impl Into<String>, est: Estimate, target: f64, oracle: impl Into<String>) -> Self {
        StatRow {
            name: clean(name.into()),
            estimate: est.value,
            stderr: est.stderr,
            target: Some(target),
            z: Some(est.z(target)),
            p_value: None,
            pass: false,
            kind: RowKind::Mean,
            oracle: Some(oracle.into()),
        }
    }

    pub fn distribution(name: impl Into<String>, statistic: f64, p_value: f64, oracle: impl Into<String>) -> Self {
        StatRow {
            name: clean(name.into()),
            estimate: statistic,
            stderr: 0.0,
            target: None,
            z: None,
            p_value: Some(p_value),
            pass: false,
            kind: RowKind::Distribution,
            oracle: Some(oracle.into()),
        }
    }

    pub fn fit(name: impl Into<String>, est: Estimate, target: f64, tolerance: f64, oracle: impl Into<String>) -> Self {
        StatRow {
            name: clean(name.into()),
            estimate: est.value,
            stderr: est.stderr,
            target: Some(target),
            z: None,
            p_value: None,
            pass: (est.value - target).abs() <= tolerance,
            kind: RowKind::Fit,
            oracle: Some(format!("{}; tolerance {tolerance}", oracle.into())),
        }
    }

    pub fn info(name: impl Into<String>, value: f64, stderr: f64) -> Self {
        StatRow {
            name: clean(name.into()),
            estimate: value,
            stderr,
            target: None,
            z: None,
            p_value: None,
            pass: true,
            kind: RowKind::Info,
            oracle: None,
        }
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_pass(mut self, pass: bool) -> Self {
        self.pass = pass;
        self
    }
}

/// JSON has no NaN or infinity; they are written as `null` and read back as NaN.
mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Names go into CSV cells unquoted.
fn clean(name: String) -> String {
    name.replace([',', '"', '\n'], "_")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub experiment: String,
    pub rows: Vec<StatRow>,
    pub warnings: Vec<String>,
    /// Thresholds actually applied after any multiplicity correction.
    pub z_threshold: f64,
    pub p_threshold: f64,
}

impl StatReport {
    pub fn new(experiment: impl Into<String>) -> Self {
        StatReport {
            experiment: experiment.into(),
            rows: Vec::new(),
            warnings: Vec::new(),
            z_threshold: 3.0,
            p_threshold: 0.01,
        }
    }

    pub fn push(&mut self, row: StatRow) {
        self.rows.push(row);
    }

    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, name: &str) -> Option<&StatRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Applies the thresholds to mean and distribution rows. With Bonferroni
    /// the two-sided level implied by `z` and the p threshold are divided by
    /// the number of judged rows.
    pub fn judge(&mut self, z_threshold: f64, p_threshold: f64, bonferroni: bool) {
        let judged = self
            .rows
            .iter()
            .filter(|r| matches!(r.kind, RowKind::Mean | RowKind::Distribution))
            .count()
            .max(1) as f64;
        let (z_thr, p_thr) = if bonferroni {
            let n = Normal::standard();
            let alpha = 2.0 * (1.0 - n.cdf(z_threshold)) / judged;
            (n.inverse_cdf(1.0 - alpha / 2.0), p_threshold / judged)
        } else {
            (z_threshold, p_threshold)
        };
        self.z_threshold = z_thr;
        self.p_threshold = p_thr;
        for r in &mut self.rows {
            match r.kind {
                RowKind::Mean => r.pass = r.z.is_some_and(|z| z.abs() <= z_thr),
                RowKind::Distribution => r.pass = r.p_value.is_some_and(|p| p >= p_thr),
                RowKind::Fit | RowKind::Info => {}
            }
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,estimate,stderr,target,z,pass\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{},{},{}",
                r.name,
                r.estimate,
                r.stderr,
                opt(r.target),
                opt(r.z),
                r.pass
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("report is not serialisable: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad report JSON: {e}")))
    }
}

/// Python script drawing every `name@key=value` family as a curve of
/// estimates with two-sigma bars against its targets.
pub fn plot_script(csv_name: &str) -> String {
    format!(
        r#"# Convergence curves from {csv_name}. Usage: python3 this_script.py
import csv
import collections
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

curves = collections.defaultdict(list)
with open("{csv_name}") as fh:
    for row in csv.DictReader(fh):
        name = row["name"]
        if "@" not in name or "=" not in name.split("@", 1)[1]:
            continue
        base, where = name.split("@", 1)
        key, value = where.split("=", 1)
        try:
            x = float(value)
        except ValueError:
            continue
        target = float(row["target"]) if row["target"] else None
        curves[(base, key)].append((x, float(row["estimate"]), float(row["stderr"]), target))

for (base, key), points in sorted(curves.items()):
    points.sort()
    xs = [p[0] for p in points]
    fig, ax = plt.subplots()
    ax.errorbar(xs, [p[1] for p in points], yerr=[2 * p[2] for p in points], marker="o", label="estimate")
    if all(p[3] is not None for p in points):
        ax.plot(xs, [p[3] for p in points], "k--", label="target")
    if min(xs) > 0 and max(xs) / min(xs) > 20:
        ax.set_xscale("log")
    ax.set_xlabel(key)
    ax.set_title(base)
    ax.legend()
    fig.savefig(f"{{base}}_vs_{{key}}.png".replace("/", "_"), dpi=120)
    plt.close(fig)
"#
    )
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `text` to `dir/name`, creating `dir` if needed.
pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir.join(name), text)
}

/// Writes the requested formats and the resolved configuration into `dir`.
/// Returns the files written.
pub fn emit_outputs(report: &StatReport, config: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = report.experiment.replace(['/', ' '], "_");
    let mut out = Vec::new();
    let formats = &config.output.formats;
    if formats.iter().any(|f| f == "csv") {
        out.push(write(dir.join(format!("{stem}.csv")), &report.to_csv())?);
    }
    if formats.iter().any(|f| f == "json") {
        out.push(write(dir.join(format!("{stem}.json")), &report.to_json()?)?);
    }
    if formats.iter().any(|f| f == "plot") {
        out.push(write(dir.join(format!("plot_{stem}.py")), &plot_script(&format!("{stem}.csv")))?);
    }
    out.push(write(dir.join(format!("{stem}.config.toml")), &config.resolved().to_toml()?)?);
    Ok(out)
}
