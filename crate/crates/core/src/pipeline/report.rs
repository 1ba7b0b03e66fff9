//! Run metrics: accuracy against gold, label sources, LLM calls, tokens,
//! cost and call reduction against labeling every sample with the LLM.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::consensus::{LabelSchema, Sample};
use crate::gateway::BackendVersion;
use crate::ledger::{LedgerSummary, Purpose};
use crate::pipeline::record::{OutputRecord, Source};
use crate::pipeline::run::RunState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub samples: usize,
    pub processed: usize,
    pub complete: bool,
    pub by_source: BTreeMap<String, usize>,
    pub ties: usize,
    pub disagreements: usize,
    pub backend_failures: usize,
    pub gold_count: usize,
    pub accuracy: Option<f64>,
    pub accuracy_by_source: BTreeMap<String, f64>,
    pub llm_calls: u64,
    pub selection_calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cost_usd: String,
    /// One LLM call per processed sample.
    pub baseline_calls: u64,
    /// `1 - llm_calls / baseline_calls` as a percentage with two decimals.
    pub reduction_pct: String,
    pub cycles: usize,
    pub residual_pool: usize,
    pub versions: Vec<BackendVersion>,
    pub ledger: LedgerSummary,
}

/// Percentage `100 * (1 - part / whole)` rounded half away from zero to two
/// decimals, computed in integers.
pub fn reduction_percent(part: u64, whole: u64) -> String {
    if whole == 0 {
        return "0.00".to_string();
    }
    let num = (whole as i128 - part as i128) * 10_000;
    let den = whole as i128;
    let bp = if num >= 0 { (2 * num + den) / (2 * den) } else { -((-2 * num + den) / (2 * den)) };
    let sign = if bp < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", bp.abs() / 100, bp.abs() % 100)
}

/// `sample_id -> gold label name` for the samples that carry one.
pub fn gold_map(samples: &[Sample], schema: &LabelSchema) -> HashMap<String, String> {
    samples
        .iter()
        .filter_map(|s| s.gold_label.map(|g| (s.id.clone(), schema.name_of(g).to_string())))
        .collect()
}

impl Report {
    pub fn build(state: &RunState, records: &[OutputRecord], gold: &HashMap<String, String>) -> Self {
        let mut by_source: BTreeMap<String, usize> = Source::ALL.iter().map(|s| (s.name().to_string(), 0)).collect();
        let mut per_source_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
        let (mut hits, mut graded) = (0usize, 0usize);
        for r in records {
            *by_source.entry(r.source.name().to_string()).or_default() += 1;
            if let Some(g) = gold.get(&r.sample_id) {
                let ok = *g == r.final_label;
                graded += 1;
                hits += ok as usize;
                let slot = per_source_hits.entry(r.source.name().to_string()).or_default();
                slot.0 += ok as usize;
                slot.1 += 1;
            }
        }
        let ledger = &state.ledger;
        let usage = ledger.usage(None);
        let llm_calls = ledger.calls(Purpose::Review);
        let baseline_calls = records.len() as u64;
        Report {
            run_id: state.run_id.clone(),
            samples: state.dataset_len,
            processed: records.len(),
            complete: state.is_complete(),
            by_source,
            ties: state.counters.ties,
            disagreements: state.counters.disagreements,
            backend_failures: state.counters.backend_failures,
            gold_count: graded,
            accuracy: (graded > 0).then(|| hits as f64 / graded as f64),
            accuracy_by_source: per_source_hits
                .into_iter()
                .map(|(k, (h, n))| (k, h as f64 / n as f64))
                .collect(),
            llm_calls,
            selection_calls: ledger.calls(Purpose::Selection),
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
            cost_usd: ledger.total_cost().display_micros(),
            baseline_calls,
            reduction_pct: reduction_percent(llm_calls, baseline_calls),
            cycles: state.pool.cycles().len(),
            residual_pool: state.pool.len(),
            versions: state.versions.clone(),
            ledger: ledger.summary(),
        }
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut row = |k: &str, v: String| {
            let _ = writeln!(out, "{k:<22}{v}");
        };
        row("run", self.run_id.clone());
        row(
            "samples",
            format!(
                "{} of {}{}",
                self.processed,
                self.samples,
                if self.complete { "" } else { " (incomplete)" }
            ),
        );
        for (source, n) in &self.by_source {
            row(&format!("  {source}"), n.to_string());
        }
        row(
            "review reasons",
            format!(
                "tie {} / disagreement {} / backend failure {}",
                self.ties, self.disagreements, self.backend_failures
            ),
        );
        match self.accuracy {
            Some(a) => row("accuracy", format!("{:.2}% ({} graded)", a * 100.0, self.gold_count)),
            None => row("accuracy", "n/a (no gold labels)".into()),
        }
        for (source, a) in &self.accuracy_by_source {
            row(&format!("  {source}"), format!("{:.2}%", a * 100.0));
        }
        row("# LLM calls", self.llm_calls.to_string());
        row("direct baseline calls", self.baseline_calls.to_string());
        row("call reduction", format!("{}%", self.reduction_pct));
        row("selection calls", self.selection_calls.to_string());
        row("tokens in / out", format!("{} / {}", self.input_tokens, self.output_tokens));
        row("cost (USD)", self.cost_usd.clone());
        row("refinement cycles", self.cycles.to_string());
        row("residual pool", self.residual_pool.to_string());
        let versions = self
            .versions
            .iter()
            .map(|v| format!("{}@v{}", v.backend_id, v.model_version))
            .collect::<Vec<_>>()
            .join(" ");
        row("backend versions", versions);
        out
    }
}
