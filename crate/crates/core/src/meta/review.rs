//! Expert review of hard samples by a chat model.

use serde::{Deserialize, Serialize};

use crate::consensus::{LabelId, LabelSchema, Sample};
use crate::error::{Error, Result};
use crate::ledger::Purpose;
use crate::meta::llm::{ChatMessage, LlmSession};
use crate::meta::prompts::{review_prompt, REVIEW_STRICTNESS};

/// Default number of review attempts: one request plus two strictness retries.
pub const DEFAULT_REVIEW_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolver {
    Llm,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertLabel {
    pub sample_id: String,
    pub label: LabelId,
    pub resolver: Resolver,
    pub raw_response: String,
    pub attempts: u32,
}

/// Lowercases, trims, and strips surrounding quotes and trailing punctuation
/// until nothing changes, so the result is a fixed point.
pub fn normalize_response(raw: &str) -> String {
    let mut current = raw.to_lowercase();
    loop {
        let next = current
            .trim()
            .trim_matches(|c| matches!(c, '"' | '\'' | '`' | '*'))
            .trim_end_matches(['.', ',', '!', '?', ';', ':'])
            .to_string();
        if next == current {
            return next;
        }
        current = next;
    }
}

/// Sends the task's review prompt with the sample text and maps the reply
/// onto the schema, retrying with a strictness reminder on unparseable replies.
pub fn review_sample(sample: &Sample, schema: &LabelSchema, llm: &LlmSession, max_attempts: u32) -> Result<ExpertLabel> {
    let max_attempts = max_attempts.max(1);
    let base_prompt = review_prompt(schema);
    let mut last = None;
    for attempt in 1..=max_attempts {
        let system = if attempt == 1 {
            base_prompt.clone()
        } else {
            format!("{base_prompt}\n{REVIEW_STRICTNESS}")
        };
        let reply = llm.chat(
            Purpose::Review,
            vec![ChatMessage::system(system), ChatMessage::user(sample.text.clone())],
        )?;
        let normalized = normalize_response(&reply.content);
        if let Some(label) = schema.labels().iter().position(|l| *l == normalized) {
            return Ok(ExpertLabel {
                sample_id: sample.id.clone(),
                label: LabelId(label),
                resolver: Resolver::Llm,
                raw_response: reply.content,
                attempts: attempt,
            });
        }
        tracing::debug!(sample = %sample.id, attempt, reply = %reply.content, "review reply did not match a label");
        last = Some(reply.content);
    }
    Err(Error::UnresolvedSample {
        sample_id: sample.id.clone(),
        attempts: max_attempts,
        last_response: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::CostLedger;
    use crate::meta::llm::ScriptedChat;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn session(chat: ScriptedChat) -> (LlmSession, Arc<ScriptedChat>) {
        let chat = Arc::new(chat);
        (LlmSession::new(chat.clone(), "m", "p", CostLedger::new().shared()), chat)
    }

    fn sample() -> Sample {
        Sample::new("s1", "what a lovely day").unwrap()
    }

    #[test]
    fn plain_label() {
        let (s, chat) = session(ScriptedChat::fixed("positive"));
        let e = review_sample(&sample(), &LabelSchema::sentiment(), &s, 3).unwrap();
        assert_eq!((e.label, e.attempts, e.resolver), (LabelId(0), 1, Resolver::Llm));
        let req = &chat.requests()[0];
        assert!(req.system_text().contains("positive, negative, neutral"));
        assert_eq!(req.user_text(), "what a lovely day");
        assert_eq!(req.temperature, 0.0);
    }

    #[test]
    fn normalizes_case_and_punctuation() {
        let (s, _) = session(ScriptedChat::fixed("Positive."));
        let e = review_sample(&sample(), &LabelSchema::sentiment(), &s, 3).unwrap();
        assert_eq!(e.label, LabelId(0));
        assert_eq!(e.raw_response, "Positive.");
        assert_eq!(normalize_response("  \"Non-Toxic!\" "), "non-toxic");
    }

    #[test]
    fn unparseable_replies_exhaust_attempts() {
        let (s, chat) = session(ScriptedChat::fixed("it seems fine"));
        let err = review_sample(&sample(), &LabelSchema::sentiment(), &s, 3).unwrap_err();
        assert!(matches!(err, Error::UnresolvedSample { attempts: 3, .. }));
        let reqs = chat.requests();
        assert_eq!(reqs.len(), 3);
        assert!(!reqs[0].system_text().contains(REVIEW_STRICTNESS));
        assert!(reqs[1].system_text().contains(REVIEW_STRICTNESS));
        assert_eq!(s.ledger().lock().unwrap().calls(Purpose::Review), 3);
    }

    #[test]
    fn second_attempt_success_counts_attempts() {
        let (s, _) = session(ScriptedChat::sequence(["maybe", "toxic"]));
        let e = review_sample(&sample(), &LabelSchema::toxicity(), &s, 3).unwrap();
        assert_eq!((e.label, e.attempts), (LabelId(0), 2));
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,24}") {
            let once = normalize_response(&s);
            prop_assert_eq!(normalize_response(&once), once.clone());
        }

        #[test]
        fn review_never_leaves_schema(reply in "[a-zA-Z .!-]{0,16}") {
            let (s, _) = session(ScriptedChat::fixed(reply));
            let schema = LabelSchema::toxicity();
            if let Ok(e) = review_sample(&sample(), &schema, &s, 2) {
                prop_assert!(schema.contains(e.label));
            }
        }
    }
}
