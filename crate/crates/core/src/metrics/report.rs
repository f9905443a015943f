use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{external_metric, lsd, mcd, paired_t_test, si_sdr};
use crate::dsp::load_wav;
use crate::{Error, Result};

/// A metric to compute for every (utterance, system) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    Lsd,
    SiSdr,
    Mcd,
    /// External scorer; `command` uses `{ref}` and `{est}`.
    External {
        name: String,
        command: String,
        #[serde(default)]
        pattern: Option<String>,
    },
}

impl MetricSpec {
    pub fn name(&self) -> String {
        match self {
            MetricSpec::Lsd => "lsd".into(),
            MetricSpec::SiSdr => "si_sdr".into(),
            MetricSpec::Mcd => "mcd".into(),
            MetricSpec::External { name, .. } => name.clone(),
        }
    }

    /// Whether a larger value is better.
    pub fn higher_is_better(&self) -> bool {
        !matches!(self, MetricSpec::Lsd | MetricSpec::Mcd)
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "lsd" => Ok(MetricSpec::Lsd),
            "si_sdr" | "si-sdr" => Ok(MetricSpec::SiSdr),
            "mcd" => Ok(MetricSpec::Mcd),
            other => Err(Error::Config(format!(
                "unknown metric {other:?} (native metrics: lsd, si_sdr, mcd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub id: String,
    pub system: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub system: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub system_a: String,
    pub system_b: String,
    pub mean_diff: f64,
    pub t: f64,
    pub p: Option<f64>,
    pub degenerate: bool,
}

/// Per-utterance scores with aggregates and pairwise paired t-tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub systems: Vec<String>,
    pub metrics: Vec<String>,
    pub rows: Vec<ScoreRow>,
    pub aggregates: Vec<AggregateRow>,
    pub comparisons: Vec<ComparisonRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl MetricReport {
    /// Builds aggregates and comparisons for every system pair from rows.
    pub fn from_rows(rows: Vec<ScoreRow>, systems: Vec<String>, metrics: Vec<String>) -> Result<Self> {
        let mut report = Self {
            systems,
            metrics,
            rows,
            aggregates: Vec::new(),
            comparisons: Vec::new(),
        };
        for m in &report.metrics {
            for s in &report.systems {
                let v = report.values(s, m);
                if v.is_empty() {
                    continue;
                }
                let (mean, std) = mean_std(&v);
                report.aggregates.push(AggregateRow {
                    system: s.clone(),
                    metric: m.clone(),
                    mean,
                    std,
                    n: v.len(),
                });
            }
        }
        let mut comparisons = Vec::new();
        for m in &report.metrics {
            for (i, a) in report.systems.iter().enumerate() {
                for b in &report.systems[i + 1..] {
                    if let Ok(c) = report.compare(m, a, b) {
                        comparisons.push(c);
                    }
                }
            }
        }
        report.comparisons = comparisons;
        Ok(report)
    }

    /// Values of one system and metric, in utterance-id order.
    pub fn values(&self, system: &str, metric: &str) -> Vec<f64> {
        let by_id: BTreeMap<&str, f64> = self
            .rows
            .iter()
            .filter(|r| r.system == system && r.metric == metric)
            .map(|r| (r.id.as_str(), r.value))
            .collect();
        by_id.into_values().collect()
    }

    pub fn aggregate(&self, system: &str, metric: &str) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.system == system && a.metric == metric)
    }

    /// Paired t-test of `a − b` over utterances scored for both.
    pub fn compare(&self, metric: &str, a: &str, b: &str) -> Result<ComparisonRow> {
        let pick = |s: &str| -> BTreeMap<&str, f64> {
            self.rows
                .iter()
                .filter(|r| r.system == s && r.metric == metric)
                .map(|r| (r.id.as_str(), r.value))
                .collect()
        };
        let (ma, mb) = (pick(a), pick(b));
        let (va, vb): (Vec<f64>, Vec<f64>) = ma
            .iter()
            .filter_map(|(id, x)| mb.get(id).map(|y| (*x, *y)))
            .unzip();
        let r = paired_t_test(&va, &vb)?;
        Ok(ComparisonRow {
            metric: metric.into(),
            system_a: a.into(),
            system_b: b.into(),
            mean_diff: r.mean_diff,
            t: r.t,
            p: r.p,
            degenerate: r.degenerate(),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,system,metric,value\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{}", r.id, r.system, r.metric, r.value);
        }
        out
    }

    /// Table-style summary: mean (std) per system and metric, then tests.
    pub fn summary_table(&self) -> String {
        let mut out = String::new();
        let w = 22;
        let _ = write!(out, "{:<12}", "system");
        for m in &self.metrics {
            let _ = write!(out, "{m:>w$}");
        }
        out.push('\n');
        for s in &self.systems {
            let _ = write!(out, "{s:<12}");
            for m in &self.metrics {
                let cell = self
                    .aggregate(s, m)
                    .map(|a| format!("{:.4} ({:.4})", a.mean, a.std))
                    .unwrap_or_else(|| "-".into());
                let _ = write!(out, "{cell:>w$}");
            }
            out.push('\n');
        }
        if let Some(n) = self.aggregates.first().map(|a| a.n) {
            let _ = writeln!(out, "\nmean (std) over {n} utterances");
        }
        if !self.comparisons.is_empty() {
            out.push_str("\npaired t-tests (a - b)\n");
            for c in &self.comparisons {
                let p = match c.p {
                    Some(p) => format!("p={p:.4e}"),
                    None => "p=undefined (zero-variance differences)".into(),
                };
                let _ = writeln!(
                    out,
                    "{:<8} {} vs {}: diff={:.4} t={:.4} {p}",
                    c.metric, c.system_a, c.system_b, c.mean_diff, c.t
                );
            }
        }
        out
    }

    /// Writes `metrics.csv`, `summary.txt` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        put("metrics.csv", self.to_csv())?;
        put("summary.txt", self.summary_table())?;
        put("report.json", serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// One utterance: the clean reference and each system's output.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub clean: PathBuf,
    pub outputs: BTreeMap<String, PathBuf>,
}

/// Seeded choice of `n` indices out of `len`, returned sorted. All indices
/// when `n ≥ len`.
pub fn select_subset(len: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= len {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, len, n).into_vec();
    idx.sort_unstable();
    idx
}

/// Scores a seeded subset of `items` for every system and metric.
pub fn evaluate_systems(
    items: &[EvalItem],
    systems: &[String],
    metrics: &[MetricSpec],
    sample_n: usize,
    seed: u64,
) -> Result<MetricReport> {
    if items.is_empty() || systems.is_empty() || metrics.is_empty() {
        return Err(Error::InvalidArgument("nothing to evaluate".into()));
    }
    let mut sorted: Vec<&EvalItem> = items.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let chosen: Vec<&EvalItem> = select_subset(sorted.len(), sample_n, seed)
        .into_iter()
        .map(|i| sorted[i])
        .collect();
    let missing: Vec<String> = chosen
        .iter()
        .flat_map(|it| {
            systems.iter().filter_map(move |s| match it.outputs.get(s) {
                Some(p) if p.is_file() => None,
                _ => Some(format!("{s}/{}", it.id)),
            })
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Dependency(format!(
            "missing system outputs: {}",
            missing.join(", ")
        )));
    }
    let scored: Vec<Result<Vec<ScoreRow>>> = chosen
        .par_iter()
        .map(|it| {
            let clean = load_wav(&it.clean)?;
            let mut rows = Vec::new();
            for s in systems {
                let path = &it.outputs[s];
                let est = load_wav(path)?;
                for m in metrics {
                    let value = match m {
                        MetricSpec::Lsd => lsd(&clean, &est)?,
                        MetricSpec::SiSdr => si_sdr(&clean, &est)?,
                        MetricSpec::Mcd => mcd(&clean, &est)?,
                        MetricSpec::External { command, pattern, .. } => {
                            external_metric(&it.clean, path, command, pattern.as_deref())?
                        }
                    };
                    rows.push(ScoreRow {
                        id: it.id.clone(),
                        system: s.clone(),
                        metric: m.name(),
                        value,
                    });
                }
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in scored {
        rows.extend(r?);
    }
    MetricReport::from_rows(
        rows,
        systems.to_vec(),
        metrics.iter().map(MetricSpec::name).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{save_wav, Waveform};
    use rand::Rng;

    fn fixture(dir: &Path, n: usize) -> Vec<EvalItem> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|i| {
                let clean: Vec<f64> = (0..3000).map(|_| rng.random_range(-0.3..0.3)).collect();
                let noisy: Vec<f64> = clean.iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
                let better: Vec<f64> = clean.iter().map(|v| v + rng.random_range(-0.02..0.02)).collect();
                let id = format!("utt{i:02}");
                let mut outputs = BTreeMap::new();
                let c = dir.join(format!("{id}_clean.wav"));
                save_wav(&Waveform::new(clean, 16000), &c).unwrap();
                for (name, v) in [("degraded", noisy), ("moddw", better)] {
                    let p = dir.join(format!("{id}_{name}.wav"));
                    save_wav(&Waveform::new(v, 16000), &p).unwrap();
                    outputs.insert(name.to_string(), p);
                }
                EvalItem { id, clean: c, outputs }
            })
            .collect()
    }

    #[test]
    fn subset_is_seeded() {
        assert_eq!(select_subset(100, 10, 3), select_subset(100, 10, 3));
        assert_ne!(select_subset(100, 10, 3), select_subset(100, 10, 4));
        assert_eq!(select_subset(5, 10, 3), vec![0, 1, 2, 3, 4]);
        let s = select_subset(128, 20, 9);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn report_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let items = fixture(dir.path(), 6);
        let systems = vec!["degraded".to_string(), "moddw".to_string()];
        let metrics = vec![MetricSpec::Lsd, MetricSpec::SiSdr, MetricSpec::Mcd];
        let r = evaluate_systems(&items, &systems, &metrics, 5, 1).unwrap();
        assert_eq!(r.rows.len(), 5 * 2 * 3);
        for a in &r.aggregates {
            let v = r.values(&a.system, &a.metric);
            let (m, s) = mean_std(&v);
            let direct = v.iter().sum::<f64>() / v.len() as f64;
            assert!((a.mean - direct).abs() < 1e-9 && (a.std - s).abs() < 1e-9 && (m - a.mean).abs() < 1e-9);
        }
        assert!(r.aggregate("moddw", "lsd").unwrap().mean < r.aggregate("degraded", "lsd").unwrap().mean);
        assert_eq!(r.comparisons.len(), 3);
        let same = r.compare("lsd", "degraded", "degraded").unwrap();
        assert!(same.degenerate && same.p.is_none());
        for m in ["lsd", "si_sdr", "mcd"] {
            assert!(r.compare(m, "degraded", "degraded").unwrap().degenerate);
        }
        let again = evaluate_systems(&items, &systems, &metrics, 5, 1).unwrap();
        assert_eq!(r.to_csv(), again.to_csv());
        assert_eq!(r.summary_table(), again.summary_table());
        let out = dir.path().join("reports");
        r.write(&out).unwrap();
        assert!(out.join("metrics.csv").is_file() && out.join("summary.txt").is_file());
        assert!(r.summary_table().contains("paired t-tests"));
    }

    #[test]
    fn missing_outputs_are_a_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let items = fixture(dir.path(), 2);
        let systems = vec!["degraded".to_string(), "dw".to_string()];
        match evaluate_systems(&items, &systems, &[MetricSpec::Lsd], 10, 0) {
            Err(Error::Dependency(m)) => assert!(m.contains("dw/utt00")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn external_metric_in_report() {
        let dir = tempfile::tempdir().unwrap();
        let items = fixture(dir.path(), 3);
        let spec = MetricSpec::External {
            name: "stub".into(),
            command: "echo 4.5 #{ref} {est}".into(),
            pattern: None,
        };
        let r = evaluate_systems(&items, &["moddw".to_string()], &[spec], 3, 0).unwrap();
        assert!(r.rows.iter().all(|row| row.value == 4.5 && row.metric == "stub"));
        assert_eq!(MetricSpec::parse("si-sdr").unwrap(), MetricSpec::SiSdr);
        assert!(MetricSpec::parse("pesq").is_err());
    }
}
