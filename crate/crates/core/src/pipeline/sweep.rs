//! Grid runs over `k` and `beta` on one dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{BackendConfig, BackendKind, FileConfig, LlmConfig, LlmKind, ReviewMode, ScriptMode, SchemaConfig, SelectionConfig};
use crate::consensus::{LabelId, LabelSchema, Sample};
use crate::error::{Error, Result};
use crate::pipeline::report::{gold_map, Report};
use crate::pipeline::reviewer::{LlmReviewer, Reviewer};
use crate::pipeline::run::run_to_end;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub beta: usize,
    pub accuracy: Option<f64>,
    pub llm_calls: u64,
    pub reduction_pct: String,
    pub cycles: usize,
    pub cost_usd: String,
}

impl SweepRow {
    pub fn from_report(k: usize, beta: usize, r: &Report) -> Self {
        Self {
            k,
            beta,
            accuracy: r.accuracy,
            llm_calls: r.llm_calls,
            reduction_pct: r.reduction_pct.clone(),
            cycles: r.cycles,
            cost_usd: r.cost_usd.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub ks: Vec<usize>,
    pub betas: Vec<usize>,
    pub rows: Vec<SweepRow>,
}

/// Runs every `(k, beta)` cell, k-major, through `run_cell`.
pub fn sweep(ks: &[usize], betas: &[usize], mut run_cell: impl FnMut(usize, usize) -> Result<Report>) -> Result<SweepTable> {
    if ks.is_empty() || betas.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    let mut rows = Vec::with_capacity(ks.len() * betas.len());
    for &k in ks {
        for &beta in betas {
            tracing::info!(k, beta, "sweep cell");
            let report = run_cell(k, beta)?;
            rows.push(SweepRow::from_report(k, beta, &report));
        }
    }
    Ok(SweepTable {
        ks: ks.to_vec(),
        betas: betas.to_vec(),
        rows,
    })
}

/// Runs one cell from a config document: `run.k` and `run.beta` are replaced
/// and everything else (backends, reviewer, prices) is rebuilt fresh.
pub fn run_cell_from_config(base: &FileConfig, samples: &[Sample], k: usize, beta: usize) -> Result<Report> {
    let mut cfg = base.clone();
    cfg.run.k = k;
    cfg.run.beta = beta;
    cfg.run.validate()?;
    if cfg.run.review_mode != ReviewMode::Llm {
        return Err(Error::Config("sweeps need review_mode = \"llm\"".into()));
    }
    let schema = cfg.schema()?;
    let registry = cfg.build_registry(&schema, &cfg.run)?;
    let ledger = cfg.ledger()?.shared();
    let session = cfg
        .build_llm(samples, &schema, ledger.clone())?
        .ok_or_else(|| Error::Config("sweeps need an [llm] section".into()))?;
    let reviewer: Arc<dyn Reviewer> = Arc::new(LlmReviewer::new(session, cfg.run.review_attempts));
    let (records, state) = run_to_end(cfg.run.clone(), registry, reviewer, ledger, samples)?;
    Ok(Report::build(&state, &records, &gold_map(samples, &schema)))
}

fn pct(a: Option<f64>) -> String {
    a.map_or("n/a".to_string(), |a| format!("{:.2}%", a * 100.0))
}

impl SweepTable {
    fn cell(&self, k: usize, beta: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k && r.beta == beta)
    }

    /// One row per cell.
    pub fn render_long(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>3} {:>6} {:>9} {:>10} {:>10} {:>7} {:>12}",
            "k", "beta", "accuracy", "llm_calls", "reduction", "cycles", "cost_usd"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:>3} {:>6} {:>9} {:>10} {:>9}% {:>7} {:>12}",
                r.k,
                r.beta,
                pct(r.accuracy),
                r.llm_calls,
                r.reduction_pct,
                r.cycles,
                r.cost_usd
            );
        }
        out
    }

    /// Horizontal tables: accuracy across `k` at each `beta`, then across
    /// `beta` at each `k`.
    pub fn render_ablation(&self) -> String {
        let mut out = String::new();
        let line = |out: &mut String, head: &str, cells: Vec<String>| {
            let _ = write!(out, "{head:<10}");
            for c in cells {
                let _ = write!(out, "{c:>10}");
            }
            out.push('\n');
        };
        for &beta in &self.betas {
            let _ = writeln!(out, "Number of specialists k (beta = {beta})");
            line(&mut out, "k", self.ks.iter().map(|k| k.to_string()).collect());
            line(
                &mut out,
                "Acc",
                self.ks.iter().map(|&k| pct(self.cell(k, beta).and_then(|r| r.accuracy))).collect(),
            );
            line(
                &mut out,
                "LLM calls",
                self.ks
                    .iter()
                    .map(|&k| self.cell(k, beta).map_or("-".into(), |r| r.llm_calls.to_string()))
                    .collect(),
            );
            out.push('\n');
        }
        for &k in &self.ks {
            let _ = writeln!(out, "Hard-sample pool size beta (k = {k})");
            line(&mut out, "beta", self.betas.iter().map(|b| b.to_string()).collect());
            line(
                &mut out,
                "Acc",
                self.betas.iter().map(|&b| pct(self.cell(k, b).and_then(|r| r.accuracy))).collect(),
            );
            line(
                &mut out,
                "LLM calls",
                self.betas
                    .iter()
                    .map(|&b| self.cell(k, b).map_or("-".into(), |r| r.llm_calls.to_string()))
                    .collect(),
            );
            out.push('\n');
        }
        out
    }

    pub fn render_text(&self) -> String {
        format!("{}\n{}", self.render_long(), self.render_ablation().trim_end())
    }
}

/// Parameters of the built-in synthetic sweep scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub samples: usize,
    pub seed: u64,
    pub backends: usize,
    pub accuracy: f64,
    pub gain: f64,
}

impl Default for SyntheticScenario {
    fn default() -> Self {
        Self {
            samples: 4000,
            seed: 7,
            backends: 5,
            accuracy: 0.7,
            gain: 0.02,
        }
    }
}

impl SyntheticScenario {
    /// Seeded sentiment samples with gold labels, noisy backends that improve
    /// with each refinement, and a reviewer that answers with the gold label.
    pub fn build(&self) -> (FileConfig, Vec<Sample>) {
        let schema = LabelSchema::sentiment();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let samples = (0..self.samples)
            .map(|i| {
                Sample::new(format!("syn-{i:05}"), format!("synthetic review number {i}"))
                    .expect("non-empty")
                    .with_gold(LabelId(rng.gen_range(0..schema.len())))
            })
            .collect();
        let backends = (1..=self.backends)
            .map(|i| BackendConfig {
                id: format!("slm-{i}"),
                kind: BackendKind::Noisy,
                label_map: BTreeMap::new(),
                url: None,
                timeout_ms: None,
                table: None,
                labels: BTreeMap::new(),
                default: None,
                confidence: None,
                declared_labels: None,
                accuracy: Some(self.accuracy),
                gain: Some(self.gain),
                seed: Some(self.seed.wrapping_add(i as u64)),
            })
            .collect();
        let mut run = crate::config::RunConfig {
            seed: self.seed,
            llm_backoff_ms: 0,
            ..Default::default()
        };
        run.parallelism = self.backends.max(1);
        let config = FileConfig {
            run,
            schema: SchemaConfig {
                task: schema.task_name().to_string(),
                labels: None,
            },
            backends,
            llm: Some(LlmConfig {
                kind: LlmKind::Scripted,
                provider: "scripted".into(),
                model: "scripted".into(),
                base_url: None,
                api_key_env: None,
                timeout_ms: None,
                script: ScriptMode::Gold,
                reply: None,
                replies: Vec::new(),
            }),
            prices: BTreeMap::new(),
            selection: SelectionConfig::default(),
            base_dir: Default::default(),
        };
        (config, samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_shape_and_layout() {
        let scenario = SyntheticScenario {
            samples: 300,
            ..Default::default()
        };
        let (cfg, samples) = scenario.build();
        let table = sweep(&[2, 3], &[50, 100], |k, b| run_cell_from_config(&cfg, &samples, k, b)).unwrap();
        assert_eq!(table.rows.len(), 4);
        let again = sweep(&[2, 3], &[50, 100], |k, b| run_cell_from_config(&cfg, &samples, k, b)).unwrap();
        assert_eq!(table, again);
        let text = table.render_ablation();
        assert!(text.contains("k                  2         3"));
        assert!(text.contains("beta              50       100"));
        assert!(sweep(&[], &[1], |_, _| unreachable!()).is_err());
    }
}
