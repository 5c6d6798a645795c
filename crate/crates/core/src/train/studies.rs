//! Sweep and noise-study drivers. Cells are independent seeded runs that
//! execute in parallel (bounded by a jobs count) and are assembled into
//! deterministic tables by cell index, never by completion order.

use super::{train, train_noisy, RunRecord};
use crate::config::{ExperimentConfig, LossKind};
use crate::error::{Error, Result};
use crate::eval::MetricPair;
use crate::par;

/// One hyperparameter cell of the binary-classification loss ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub lambda: f64,
    pub t: f64,
    pub s: f64,
    pub m: f64,
}

/// A cell either finishes with metrics or is recorded as failed (a
/// divergent cell must not abort the sweep).
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub outcome: std::result::Result<Vec<(String, MetricPair)>, String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    fn trial_sets(&self) -> Vec<String> {
        self.rows
            .iter()
            .find_map(|r| {
                r.outcome
                    .as_ref()
                    .ok()
                    .map(|m| m.iter().map(|(s, _)| s.clone()).collect())
            })
            .unwrap_or_default()
    }

    pub fn render_text(&self) -> String {
        let sets = self.trial_sets();
        let mut header = vec![
            "lambda".to_string(),
            "t".to_string(),
            "s".to_string(),
            "m".to_string(),
        ];
        for s in &sets {
            header.push(format!("{s}_eer%"));
            header.push(format!("{s}_dcf"));
        }
        header.push("status".to_string());
        let mut table = vec![header];
        for row in &self.rows {
            let c = row.cell;
            let mut line = vec![
                format!("{}", c.lambda),
                format!("{}", c.t),
                format!("{}", c.s),
                format!("{}", c.m),
            ];
            match &row.outcome {
                Ok(metrics) => {
                    for (_, m) in metrics {
                        line.push(format!("{:.3}", m.eer * 100.0));
                        line.push(format!("{:.4}", m.min_dcf));
                    }
                    line.push("ok".to_string());
                }
                Err(reason) => {
                    for _ in &sets {
                        line.push("-".to_string());
                        line.push("-".to_string());
                    }
                    line.push(reason.clone());
                }
            }
            table.push(line);
        }
        render_aligned(&table)
    }

    pub fn render_csv(&self) -> String {
        let sets = self.trial_sets();
        let mut out = String::from("lambda,t,s,m");
        for s in &sets {
            out.push_str(&format!(",{s}_eer,{s}_min_dcf"));
        }
        out.push_str(",status\n");
        for row in &self.rows {
            let c = row.cell;
            out.push_str(&format!("{},{},{},{}", c.lambda, c.t, c.s, c.m));
            match &row.outcome {
                Ok(metrics) => {
                    for (_, m) in metrics {
                        out.push_str(&format!(",{},{}", m.eer, m.min_dcf));
                    }
                    out.push_str(",ok\n");
                }
                Err(reason) => {
                    for _ in &sets {
                        out.push_str(",,");
                    }
                    out.push_str(&format!(",{reason}\n"));
                }
            }
        }
        out
    }
}

fn render_aligned(table: &[Vec<String>]) -> String {
    let cols = table.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            table
                .iter()
                .filter_map(|r| r.get(c))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in table {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[c]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// Parses a grid file: one `lambda t s m` row per line, `#` comments.
pub fn parse_sweep_grid(text: &str) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                path: "<grid>".into(),
                line: lineno + 1,
                byte_offset: 0,
                message: format!("expected 'lambda t s m', got {} fields", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                path: "<grid>".into(),
                line: lineno + 1,
                byte_offset: 0,
                message: format!("'{s}' is not a number"),
            })
        };
        cells.push(SweepCell {
            lambda: parse(fields[0])?,
            t: parse(fields[1])?,
            s: parse(fields[2])?,
            m: parse(fields[3])?,
        });
    }
    if cells.is_empty() {
        return Err(Error::InvalidConfig("empty sweep grid".into()));
    }
    Ok(cells)
}

/// Runs one seeded training per cell over identical data; divergent cells
/// are recorded and the sweep continues.
pub fn run_ablation(
    base: &ExperimentConfig,
    cells: &[SweepCell],
    seed: u64,
    jobs: usize,
) -> Result<SweepTable> {
    if cells.is_empty() {
        return Err(Error::InvalidConfig("empty sweep grid".into()));
    }
    if base.loss.kind != LossKind::SphereFace2 {
        return Err(Error::InvalidConfig(format!(
            "the ablation sweeps binary-classification hyperparameters; base loss is '{}'",
            base.loss.kind.as_str()
        )));
    }
    let rows = par::with_jobs(jobs, || {
        par::map_slice(cells, |cell| {
            let mut config = base.clone();
            config.loss.lambda = cell.lambda;
            config.loss.t = cell.t;
            config.loss.s = cell.s;
            config.loss.m = cell.m;
            let name = format!(
                "sphereface2(lambda={},t={},s={},m={})",
                cell.lambda, cell.t, cell.s, cell.m
            );
            let outcome = match train(&config, seed, &name) {
                Ok(record) => Ok(record.metrics),
                Err(e) => Err(format!("{}: {e}", e.category())),
            };
            SweepRow {
                cell: *cell,
                outcome,
            }
        })
    });
    Ok(SweepTable { rows })
}

/// One completed noise-study cell.
#[derive(Debug, Clone)]
pub struct NoiseRow {
    pub loss: LossKind,
    pub proportion: f64,
    pub seed: u64,
    pub outcome: std::result::Result<NoiseMetrics, String>,
}

#[derive(Debug, Clone, Copy)]
pub struct NoiseMetrics {
    pub eer: f64,
    /// `(eer - clean_eer) / clean_eer` against the 0%-noise run of the
    /// same loss and seed.
    pub relative_degradation: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseTable {
    pub rows: Vec<NoiseRow>,
}

impl NoiseTable {
    pub fn render_text(&self) -> String {
        let mut table = vec![vec![
            "loss".to_string(),
            "noise%".to_string(),
            "seed".to_string(),
            "eer%".to_string(),
            "degradation%".to_string(),
            "status".to_string(),
        ]];
        for r in &self.rows {
            let mut line = vec![
                r.loss.as_str().to_string(),
                format!("{}", r.proportion * 100.0),
                format!("{}", r.seed),
            ];
            match &r.outcome {
                Ok(m) => {
                    line.push(format!("{:.3}", m.eer * 100.0));
                    line.push(format!("{:+.1}", m.relative_degradation * 100.0));
                    line.push("ok".to_string());
                }
                Err(reason) => {
                    line.push("-".to_string());
                    line.push("-".to_string());
                    line.push(reason.clone());
                }
            }
            table.push(line);
        }
        render_aligned(&table)
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("loss,proportion,seed,eer,relative_degradation,status\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}", r.loss.as_str(), r.proportion, r.seed));
            match &r.outcome {
                Ok(m) => out.push_str(&format!(",{},{},ok\n", m.eer, m.relative_degradation)),
                Err(reason) => out.push_str(&format!(",,,{reason}\n")),
            }
        }
        out
    }

    /// Mean relative degradation of one loss at one noise level across all
    /// seeds that completed.
    pub fn mean_degradation(&self, loss: LossKind, proportion: f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.loss == loss && (r.proportion - proportion).abs() < 1e-12)
            .filter_map(|r| r.outcome.as_ref().ok().map(|m| m.relative_degradation))
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }
}

/// Trains every (loss, proportion, seed) cell on noisily-labeled data and
/// evaluates on clean unseen trials. Score normalization is forced off;
/// a 0%-noise baseline per (loss, seed) anchors the degradation column.
pub fn run_noise_study(
    base: &ExperimentConfig,
    losses: &[LossKind],
    proportions: &[f64],
    seeds: &[u64],
    jobs: usize,
) -> Result<NoiseTable> {
    if losses.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "noise study needs at least one loss and one seed".into(),
        ));
    }
    for kind in losses {
        if kind.is_prototypical() {
            return Err(Error::InvalidConfig(format!(
                "label-noise study applies to classification losses, not '{}'",
                kind.as_str()
            )));
        }
    }
    for p in proportions {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::InvalidConfig(format!(
                "noise proportion {p} outside [0, 1]"
            )));
        }
    }
    // The 0% baseline anchors relative degradation; prepend if absent.
    let mut props: Vec<f64> = Vec::new();
    if !proportions.contains(&0.0) {
        props.push(0.0);
    }
    props.extend_from_slice(proportions);

    let mut cells = Vec::new();
    for loss in losses {
        for &p in &props {
            for &seed in seeds {
                cells.push((*loss, p, seed));
            }
        }
    }
    let results: Vec<std::result::Result<f64, String>> = par::with_jobs(jobs, || {
        par::map_slice(&cells, |(loss, p, seed)| {
            let mut config = base.clone();
            config.loss.kind = *loss;
            config.evaluation.asnorm = false;
            let name = format!("{}@noise{}", loss.as_str(), p);
            match train_noisy(&config, *seed, &name, *p) {
                Ok(record) => Ok(record.metrics[0].1.eer),
                Err(e) => Err(format!("{}: {e}", e.category())),
            }
        })
    });

    let mut rows = Vec::with_capacity(cells.len());
    for ((loss, p, seed), outcome) in cells.iter().zip(results.iter()) {
        let outcome = match outcome {
            Ok(eer) => {
                let clean = cells
                    .iter()
                    .zip(results.iter())
                    .find(|((l2, p2, s2), r)| l2 == loss && *p2 == 0.0 && s2 == seed && r.is_ok())
                    .map(|(_, r)| *r.as_ref().unwrap());
                match clean {
                    Some(clean_eer) if clean_eer > 0.0 => Ok(NoiseMetrics {
                        eer: *eer,
                        relative_degradation: (*eer - clean_eer) / clean_eer,
                    }),
                    Some(clean_eer) => Ok(NoiseMetrics {
                        eer: *eer,
                        relative_degradation: if *eer > clean_eer { f64::INFINITY } else { 0.0 },
                    }),
                    None => Err("missing clean baseline".to_string()),
                }
            }
            Err(e) => Err(e.clone()),
        };
        rows.push(NoiseRow {
            loss: *loss,
            proportion: *p,
            seed: *seed,
            outcome,
        });
    }
    Ok(NoiseTable { rows })
}

/// Table-style multi-system comparison rows from completed runs.
pub fn comparison_rows(records: &[RunRecord]) -> Vec<crate::eval::ReportRow> {
    records
        .iter()
        .map(|r| crate::eval::ReportRow {
            system: r.name.clone(),
            metrics: r.metrics.clone(),
        })
        .collect()
}
