//! Dataset-level metrics built on the spectral kernel: Diff-eRank under both
//! aggregation algorithms, cross-entropy and reduced loss, and the two
//! multimodal alignment scores.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelRole, Result};
use crate::spectral::{covariance_spectrum, RepresentationSet, SpectrumRoute};
use crate::sum::{pairwise_mean, pairwise_sum};

/// Entropy and effective rank of one sentence under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceEntropyRecord {
    pub sentence_id: String,
    pub token_count: usize,
    pub entropy: f64,
    pub erank: f64,
    pub dropped_rows: usize,
}

impl SentenceEntropyRecord {
    pub fn compute(sentence_id: impl Into<String>, reps: &RepresentationSet, route: SpectrumRoute) -> Result<Self> {
        let cs = covariance_spectrum(reps, route)?;
        let entropy = cs.spectrum.entropy();
        Ok(SentenceEntropyRecord {
            sentence_id: sentence_id.into(),
            token_count: reps.rows(),
            entropy,
            erank: entropy.exp(),
            dropped_rows: cs.dropped_rows,
        })
    }
}

/// Per-sentence records of one model on one dataset with both aggregations.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDatasetSummary {
    pub model_id: String,
    pub layer: i64,
    pub records: Vec<SentenceEntropyRecord>,
    pub mean_entropy: f64,
    /// `exp(mean entropy)`, algorithm (a).
    pub erank_a: f64,
    /// Mean of per-sentence effective ranks, algorithm (b).
    pub erank_b: f64,
}

impl ModelDatasetSummary {
    /// Aggregates records in the given order. An empty record list yields
    /// `NaN` aggregates.
    pub fn from_records(model_id: impl Into<String>, layer: i64, records: Vec<SentenceEntropyRecord>) -> Self {
        let entropies: Vec<f64> = records.iter().map(|r| r.entropy).collect();
        let eranks: Vec<f64> = records.iter().map(|r| r.erank).collect();
        let mean_entropy = pairwise_mean(&entropies);
        ModelDatasetSummary {
            model_id: model_id.into(),
            layer,
            records,
            mean_entropy,
            erank_a: mean_entropy.exp(),
            erank_b: pairwise_mean(&eranks),
        }
    }

    pub fn sentence_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.sentence_id.as_str()).collect()
    }

    pub fn erank(&self, algorithm: Aggregation) -> f64 {
        match algorithm {
            Aggregation::A => self.erank_a,
            Aggregation::B => self.erank_b,
        }
    }
}

/// Dataset aggregation of per-sentence entropies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Exponential of the mean entropy.
    #[default]
    A,
    /// Mean of the per-sentence effective ranks.
    B,
}

/// Sentence ids present in exactly one of the two sets, split by side.
pub fn check_same_sentences<'a>(
    untrained: impl IntoIterator<Item = &'a str>,
    trained: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let u: BTreeSet<&str> = untrained.into_iter().collect();
    let t: BTreeSet<&str> = trained.into_iter().collect();
    if u == t {
        return Ok(());
    }
    Err(Error::SentenceSetMismatch {
        only_in_untrained: u.difference(&t).map(|s| s.to_string()).collect(),
        only_in_trained: t.difference(&u).map(|s| s.to_string()).collect(),
    })
}

/// `eRank(untrained) - eRank(trained)` on one sentence.
pub fn diff_erank_sentence(untrained: &RepresentationSet, trained: &RepresentationSet) -> Result<f64> {
    let e0 = covariance_spectrum(untrained, SpectrumRoute::Auto)
        .map_err(|e| Error::in_model(ModelRole::Untrained, e))?
        .spectrum
        .erank();
    let e1 = covariance_spectrum(trained, SpectrumRoute::Auto)
        .map_err(|e| Error::in_model(ModelRole::Trained, e))?
        .spectrum
        .erank();
    Ok(e0 - e1)
}

pub fn dataset_diff_erank(untrained: &ModelDatasetSummary, trained: &ModelDatasetSummary, algorithm: Aggregation) -> Result<f64> {
    check_same_sentences(untrained.sentence_ids(), trained.sentence_ids())?;
    Ok(untrained.erank(algorithm) - trained.erank(algorithm))
}

/// Diff-eRank of a dataset using algorithm (a), the default.
pub fn dataset_diff_erank_a(untrained: &ModelDatasetSummary, trained: &ModelDatasetSummary) -> Result<f64> {
    dataset_diff_erank(untrained, trained, Aggregation::A)
}

/// Diff-eRank of a dataset using algorithm (b).
pub fn dataset_diff_erank_b(untrained: &ModelDatasetSummary, trained: &ModelDatasetSummary) -> Result<f64> {
    dataset_diff_erank(untrained, trained, Aggregation::B)
}

/// Per-token natural-log probabilities of one sentence under teacher forcing.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogProbs {
    sentence_id: String,
    logprobs: Vec<f64>,
}

impl SequenceLogProbs {
    pub fn new(sentence_id: impl Into<String>, logprobs: Vec<f64>) -> Result<Self> {
        if logprobs.is_empty() {
            return Err(Error::EmptySequence);
        }
        if let Some(index) = logprobs.iter().position(|v| !v.is_finite() || *v > 0.0) {
            return Err(Error::InvalidLogProb {
                index,
                value: logprobs[index],
            });
        }
        Ok(SequenceLogProbs {
            sentence_id: sentence_id.into(),
            logprobs,
        })
    }

    pub fn sentence_id(&self) -> &str {
        &self.sentence_id
    }

    pub fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    pub fn len(&self) -> usize {
        self.logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logprobs.is_empty()
    }
}

/// Mean negative log-likelihood per token, in nats.
pub fn cross_entropy_loss(seq: &SequenceLogProbs) -> f64 {
    let loss = -pairwise_sum(&seq.logprobs) / seq.logprobs.len() as f64;
    // all log-probs are <= 0, so only a -0.0 can appear below zero
    loss.max(0.0)
}

pub fn reduced_loss(untrained_loss: f64, trained_loss: f64) -> f64 {
    untrained_loss - trained_loss
}

/// Relative eRank drop across the vision-language connector.
pub fn image_reduction_ratio(erank1: f64, erank2: f64) -> f64 {
    (erank1 - erank2) / erank1
}

/// Mean over max of the LLM-side eRanks for image, text and pair inputs.
pub fn image_text_alignment(erank3: f64, erank4: f64, erank5: f64) -> f64 {
    let mean = pairwise_sum(&[erank3, erank4, erank5]) / 3.0;
    mean / erank3.max(erank4).max(erank5)
}

/// The five eRank measurement points of a multimodal pipeline: vision encoder
/// output, connector output, then the LLM on image-only, text-only and
/// image-text inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultimodalERanks {
    pub erank1: f64,
    pub erank2: f64,
    pub erank3: f64,
    pub erank4: f64,
    pub erank5: f64,
}

impl MultimodalERanks {
    pub fn new(values: [f64; 5]) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 1.0) {
            return Err(Error::InvalidShape(format!(
                "eRank{} is {}, expected a finite value >= 1",
                pos + 1,
                values[pos]
            )));
        }
        let [erank1, erank2, erank3, erank4, erank5] = values;
        Ok(MultimodalERanks {
            erank1,
            erank2,
            erank3,
            erank4,
            erank5,
        })
    }

    pub fn image_reduction_ratio(&self) -> f64 {
        image_reduction_ratio(self.erank1, self.erank2)
    }

    pub fn image_text_alignment(&self) -> f64 {
        image_text_alignment(self.erank3, self.erank4, self.erank5)
    }
}
