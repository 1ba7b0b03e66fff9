//! Prompt templates with `{name}` placeholders.
//!
//! Placeholder names may contain spaces and dots (`{Local File}`,
//! `{config.path}`). `{{` and `}}` render as literal braces.

use std::collections::{BTreeMap, BTreeSet};

use crate::consensus::LabelSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Text(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    name: String,
    text: String,
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Result<Self> {
        let name = name.into();
        let text = text.into();
        let pieces = parse(&text).map_err(|reason| Error::invalid(format!("template `{name}`: {reason}")))?;
        let required = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.clone()),
                Piece::Text(_) => None,
            })
            .collect();
        Ok(Self {
            name,
            text,
            pieces,
            required,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn required(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes every placeholder. Fails listing all missing names.
    pub fn render(&self, vars: &BTreeMap<String, String>) -> Result<String> {
        let missing: Vec<String> = self.required.iter().filter(|r| !vars.contains_key(*r)).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Template {
                template: self.name.clone(),
                missing,
            });
        }
        let mut out = String::with_capacity(self.text.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(s) => out.push_str(&vars[s]),
            }
        }
        Ok(out)
    }

    /// Convenience for `&[("name", "value")]` pairs.
    pub fn render_with(&self, vars: &[(&str, &str)]) -> Result<String> {
        let map = vars.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        self.render(&map)
    }

    /// Looks up one of the built-in templates by name.
    pub fn builtin(name: &str) -> Option<Self> {
        BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Self::new(*n, *text).expect("built-in templates parse"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTINS.iter().map(|(n, _)| *n)
    }
}

fn parse(text: &str) -> std::result::Result<Vec<Piece>, String> {
    let mut pieces = Vec::new();
    let mut buf = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                buf.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                buf.push('}');
            }
            '{' => {
                let mut name = String::new();
                loop {
                    match chars.next() {
                        Some('}') => break,
                        Some('{') | None => return Err("unterminated placeholder".into()),
                        Some(ch) => name.push(ch),
                    }
                }
                let name = name.trim().to_string();
                if name.is_empty() {
                    return Err("empty placeholder".into());
                }
                if !buf.is_empty() {
                    pieces.push(Piece::Text(std::mem::take(&mut buf)));
                }
                pieces.push(Piece::Slot(name));
            }
            '}' => return Err("unmatched `}`".into()),
            other => buf.push(other),
        }
    }
    if !buf.is_empty() {
        pieces.push(Piece::Text(buf));
    }
    Ok(pieces)
}

pub const MODEL_SELECTION: &str = "model-selection";
pub const MODEL_DEPLOYMENT: &str = "model-deployment";
pub const DATA_ANNOTATION: &str = "data-annotation";
pub const MODEL_FINE_TUNING: &str = "model-fine-tuning";
pub const SENTIMENT_REVIEW: &str = "sentiment-review";
pub const TOXICITY_REVIEW: &str = "toxicity-review";
pub const LABEL_REVIEW: &str = "label-review";
pub const MODEL_RANKING: &str = "model-ranking";

/// Appended to the review system prompt when a reply did not parse.
pub const REVIEW_STRICTNESS: &str =
    "Your previous answer was not one of the allowed labels. Reply with exactly one label from the list above and nothing else.";

const BUILTINS: &[(&str, &str)] = &[
    (
        MODEL_SELECTION,
        "Now I need you to help me write a code. Note that you need to strictly follow my requirements and the content you generate should be directly runnable code.
Requirements:
1. Model search: Find text annotation models similar to BERT on Hugging Face according to the text annotation requirements of sentiment classification (only supporting positive, negative, neutral and their respective confidence scores) and toxic content detection (only supporting toxic and its confidence score). Note that models with multiple labels like unitary/toxic-bert do not meet the requirements.
2. Quantity requirements: 3 sentiment classification models and 3 toxic content detection models.
3. After selection, set up a UI interface for me to view the information of the selected models (using tkinter).
4. Save the table in the UI interface to the local path {config.path}.
Note:
1. The table is for reference only. The number of models, model parameters, and HF downloads are inaccurate and need to be investigated by you.
2. You need to search for models that meet the conditions and remember them. Your code only includes the UI part (including models that meet the conditions).
3. Please strictly follow the above requirements when writing the code.
4. Your answer should only contain the code and nothing else.",
    ),
    (
        MODEL_DEPLOYMENT,
        "Now I need you to help me write a code. Note that you need to strictly follow my requirements and the content you generate should be directly runnable code. I need to deploy a Hugging Face model locally. The model address is https://hf-mirror.com/models. Please help me complete the following tasks:
1. Model ID acquisition: Get the model IDs I want to download from the 'Model ID' column in the file {Local File}.
2. Save path: I want to save the models to the local directory {Local Path}. For example, save 'cardiffnlp_twitter-roberta-base-sentiment-latest' to {Local Path}.
3. Code generation: Please generate a complete and directly runnable Python code to download the models locally.
Please generate the code according to the above requirements to complete the deployment.
Note: Your answer should only contain the code and nothing else.",
    ),
    (
        DATA_ANNOTATION,
        "Now I need you to help me write a code. Note that you need to strictly follow my requirements and the content you generate should be directly runnable code. Your task is to help me call a pre-trained BERT model (or similar models) from the local and use this model to label text data. The following are the specific requirements of the task:
Task description:
1. Model type: Use a pre-trained model like BERT or similar ones (e.g., RoBERTa, DistilBERT, etc.).
2. Model ID: {Model ID}.
3. Local model address: {Local Path}.
4. Task type: {Task Type}.
5. Input data: The address of the data file in the first column of the local xlsx file is {Local File}.
6. Output result: The labeled result. If there is a confidence score, it is also required. Save it to {Local File}.
7. Requirements for the result file: Change the column name of the label column in the saved file to {label_col_name}, and change the column name of the confidence score column to {confidence_col_name}'.",
    ),
    (
        MODEL_FINE_TUNING,
        "Now I need you to help me write a code. Note that you must strictly follow my requirements, and the content you generate should be directly runnable code. Your task is to write code to perform full-parameter fine-tuning on the {Model ID} model. The following are the specific requirements of the task:
Task description:
1. Model type: Use a pre-trained model like BERT or similar ones (e.g., RoBERTa, DistilBERT, etc.).
2. Model ID: {Model ID}.
3. Local model address: {Local Path}.
4. Fine-tuning data: The 'text' column in the {Local File} is the text column of the fine-tuning data, and the 'label' column is the label column of the fine-tuning data.
5. Save address for the fine-tuned model: {Local Path}.
Note: Your answer should only contain the code and nothing else.",
    ),
    (
        SENTIMENT_REVIEW,
        "You are an autoclassifier that's responsible for labeling input text. You must respond with only one of these labels: positive, negative, neutral.",
    ),
    (
        TOXICITY_REVIEW,
        "You are an autoclassifier that's responsible for labeling input text. You must respond with only one of these labels: toxic, non-toxic.",
    ),
    (
        LABEL_REVIEW,
        "You are an autoclassifier that's responsible for labeling input text. You must respond with only one of these labels: {labels}.",
    ),
    (
        MODEL_RANKING,
        "You are selecting specialist text-classification models for an annotation task.
Task: {task}
Allowed labels: {labels}
Candidate models (one per line, `model_id: description`):
{candidates}

Rank the candidates by how well they fit the task and label set. Reply with exactly {k} model ids from the candidate list, best first, one per line, and nothing else.",
    ),
];

/// System prompt for reviewing samples of `schema`'s task.
pub fn review_prompt(schema: &LabelSchema) -> String {
    PromptTemplate::builtin(LABEL_REVIEW)
        .expect("label-review template")
        .render_with(&[("labels", &schema.labels().join(", "))])
        .expect("labels placeholder supplied")
}
