//! MBR decoding as an instrument for finding blind spots of machine
//! translation metrics.
//!
//! - [`corpus`]: JSONL corpus model with number / named-entity / noun spans
//! - [`metrics`]: chrF++, sentence BLEU and the [`metrics::Utility`] trait
//! - [`mbr`]: pooled, deduplicated MBR decoding over a utility matrix
//! - [`perturb`]: targeted span edits and reference-point candidates
//! - [`sensitivity`]: mean absolute MBR-score change per perturbation kind
//! - [`accuracy`]: number and named-entity error rates of system outputs
//! - [`synthgen`]: perturbed synthetic training examples for metric retraining
//! - [`rpc`]: JSON-lines protocol for external (neural) scorers

pub mod accuracy;
pub mod corpus;
pub mod mbr;
pub mod metrics;
pub mod perturb;
pub mod rpc;
pub mod sensitivity;
pub mod synthgen;
pub mod tsv;
