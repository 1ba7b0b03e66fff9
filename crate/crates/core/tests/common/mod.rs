#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use annotator_core::config::RunConfig;
use annotator_core::consensus::{LabelId, LabelSchema, Sample};
use annotator_core::gateway::{BackendSpec, FanoutOptions, Registry, ScriptedBackend};
use annotator_core::ledger::{CostLedger, Price, SharedLedger};
use annotator_core::meta::llm::{LlmSession, ScriptedChat};
use annotator_core::pipeline::reviewer::{LlmReviewer, Reviewer};

pub const LABELS: [&str; 3] = ["positive", "negative", "neutral"];

/// `n` sentiment samples `s00000..` whose gold label cycles through the schema.
pub fn samples(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            Sample::new(format!("s{i:05}"), format!("review text {i}"))
                .unwrap()
                .with_gold(LabelId(i % 3))
        })
        .collect()
}

/// One scripted backend per entry of `tables`, `tables[b][i]` being backend
/// `b`'s label for sample `i`.
pub fn stubs(samples: &[Sample], tables: &[Vec<LabelId>]) -> Vec<Arc<ScriptedBackend>> {
    let schema = LabelSchema::sentiment();
    tables
        .iter()
        .enumerate()
        .map(|(b, table)| {
            let entries = samples
                .iter()
                .zip(table)
                .map(|(s, l)| (s.id.clone(), schema.name_of(*l).to_string()));
            Arc::new(ScriptedBackend::new(format!("slm-{}", b + 1), LABELS.map(String::from).to_vec()).with_table(entries))
        })
        .collect()
}

pub fn registry(stubs: &[Arc<ScriptedBackend>]) -> Registry {
    let mut r = Registry::new(LabelSchema::sentiment(), FanoutOptions::default());
    for s in stubs {
        r.register(BackendSpec::new(s.id()), s.clone()).unwrap();
    }
    r
}

/// Tables where every backend votes gold, except that the samples in
/// `disagree` get a 2-1 split (third backend wrong).
pub fn tables_with_disagreements(samples: &[Sample], disagree: &dyn Fn(usize) -> bool) -> Vec<Vec<LabelId>> {
    let gold: Vec<LabelId> = samples.iter().map(|s| s.gold_label.unwrap()).collect();
    let wrong = |l: LabelId| LabelId((l.0 + 1) % 3);
    vec![
        gold.clone(),
        gold.clone(),
        gold.iter()
            .enumerate()
            .map(|(i, &g)| if disagree(i) { wrong(g) } else { g })
            .collect(),
    ]
}

pub fn ledger() -> SharedLedger {
    let mut l = CostLedger::new();
    l.set_price("openai", Price::usd(15, 60));
    l.shared()
}

/// Chat model answering with the gold label of the sample whose text it is
/// shown.
pub fn gold_chat(samples: &[Sample]) -> Arc<ScriptedChat> {
    let schema = LabelSchema::sentiment();
    let by_text: HashMap<String, String> = samples
        .iter()
        .map(|s| (s.text.clone(), schema.name_of(s.gold_label.unwrap()).to_string()))
        .collect();
    Arc::new(ScriptedChat::from_fn(move |req| {
        Ok(by_text.get(req.user_text()).cloned().unwrap_or_else(|| "neutral".into()))
    }))
}

pub fn llm_reviewer(chat: Arc<ScriptedChat>, ledger: SharedLedger) -> Arc<dyn Reviewer> {
    Arc::new(LlmReviewer::new(LlmSession::new(chat, "gpt-4", "openai", ledger), 3))
}

pub fn config(beta: usize) -> RunConfig {
    RunConfig {
        beta,
        llm_backoff_ms: 0,
        ..Default::default()
    }
}
