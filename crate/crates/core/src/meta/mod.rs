//! The LLM-driven layer: picking specialist models, rendering prompts, and
//! reviewing samples the specialists could not agree on.

pub mod llm;
pub mod prompts;
pub mod review;
pub mod selection;

pub use llm::{ChatClient, ChatMessage, ChatRequest, ChatResponse, HttpChatClient, LlmEndpointConfig, LlmSession, ScriptedChat, TokenUsage};
pub use prompts::PromptTemplate;
pub use review::{normalize_response, review_sample, ExpertLabel, Resolver};
pub use selection::{search_candidates, select_models, CandidateSources, HubIndex, LocalCatalog, ModelCandidate, ModelIndex};
