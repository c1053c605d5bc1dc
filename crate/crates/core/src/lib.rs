//! Analysis engine for hallucinations produced despite model knowledge.
//!
//! The pipeline reads JSONL generation logs ([`record`]), decides whether the
//! model knows each answer ([`knowledge`]), labels setting-time answers as
//! factual or hallucination ([`curation`]), scores certainty
//! ([`certainty`]), fits a certainty threshold and flags high-certainty
//! hallucinations ([`threshold`]), tests their consistency across prompt
//! settings ([`consistency`]) and measures how many survive certainty-based
//! abstention ([`mitigation`]). [`pipeline`] wires the stages together behind
//! file artifacts for the `choke` binary.

pub mod certainty;
pub mod config;
pub mod consistency;
pub mod curation;
pub mod error;
pub mod knowledge;
pub mod mitigation;
pub mod pipeline;
pub mod record;
pub mod threshold;

pub use error::{ChokeError, Result};
