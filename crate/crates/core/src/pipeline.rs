//! Manifest-driven evaluation.
//!
//! Sentences are processed in parallel on the current rayon pool, but results
//! are collected and aggregated in manifest order, so reports are identical
//! for any thread count.

use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, ModelRole, Result};
use crate::manifest::{LoadedManifest, ManifestEntry};
use crate::metrics::{
    check_same_sentences, cross_entropy_loss, dataset_diff_erank, reduced_loss, Aggregation, ModelDatasetSummary,
    MultimodalERanks, SentenceEntropyRecord, SequenceLogProbs,
};
use crate::npy::read_tensor;
use crate::report::{Aggregates, Comparison, InputDigest, MetricsReport, ModelSection, SentenceLoss, SkippedSentence};
use crate::spectral::SpectrumRoute;

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Fail on the first per-sentence error instead of skipping the sentence.
    pub strict: bool,
    pub route: SpectrumRoute,
}

/// Which dataset aggregations a comparison reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AlgorithmChoice {
    #[default]
    A,
    B,
    Both,
}

impl AlgorithmChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmChoice::A => "a",
            AlgorithmChoice::B => "b",
            AlgorithmChoice::Both => "both",
        }
    }

    fn includes(self, agg: Aggregation) -> bool {
        matches!(
            (self, agg),
            (AlgorithmChoice::Both, _) | (AlgorithmChoice::A, Aggregation::A) | (AlgorithmChoice::B, Aggregation::B)
        )
    }
}

/// Per-sentence results of one manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEvaluation {
    pub model_id: String,
    pub dataset_id: String,
    pub layer: i64,
    pub records: Vec<SentenceEntropyRecord>,
    pub losses: Vec<SentenceLoss>,
    pub skipped: Vec<SkippedSentence>,
}

impl ModelEvaluation {
    pub fn summary(&self) -> ModelDatasetSummary {
        ModelDatasetSummary::from_records(self.model_id.clone(), self.layer, self.records.clone())
    }

    pub fn into_section(self, role: &str) -> ModelSection {
        let aggregates = Aggregates::compute(&self.records, &self.losses);
        ModelSection {
            role: role.to_string(),
            model_id: self.model_id,
            dataset_id: self.dataset_id,
            layer: self.layer,
            records: self.records,
            losses: self.losses,
            skipped: self.skipped,
            aggregates,
        }
    }

    fn entropy_ids(&self) -> HashSet<&str> {
        self.records.iter().map(|r| r.sentence_id.as_str()).collect()
    }

    fn loss_ids(&self) -> HashSet<&str> {
        self.losses.iter().map(|l| l.sentence_id.as_str()).collect()
    }
}

fn entry_record(m: &LoadedManifest, entry: &ManifestEntry, route: SpectrumRoute) -> Result<SentenceEntropyRecord> {
    let path = m.reps_path(entry);
    let reps = read_tensor(&path)?.to_representation_set().map_err(|e| Error::AtPath {
        path: path.clone(),
        source: Box::new(e),
    })?;
    SentenceEntropyRecord::compute(entry.sentence_id.clone(), &reps, route).map_err(|e| Error::AtPath {
        path,
        source: Box::new(e),
    })
}

fn entry_loss(m: &LoadedManifest, entry: &ManifestEntry) -> Result<SentenceLoss> {
    let Some(path) = m.logprobs_path(entry) else {
        return Err(Error::MissingLogProbs {
            model_id: m.manifest.model_id.clone(),
            sentence_id: entry.sentence_id.clone(),
        });
    };
    let values = read_tensor(&path)?.to_vector().map_err(|e| Error::AtPath {
        path: path.clone(),
        source: Box::new(e),
    })?;
    let seq = SequenceLogProbs::new(entry.sentence_id.clone(), values).map_err(|e| Error::AtPath {
        path,
        source: Box::new(e),
    })?;
    Ok(SentenceLoss {
        sentence_id: entry.sentence_id.clone(),
        token_count: seq.len(),
        loss: cross_entropy_loss(&seq),
    })
}

/// Splits ordered per-sentence results into successes and skips. In strict
/// mode, or for errors that are not per-sentence, the first error in manifest
/// order is returned.
fn partition<T>(
    results: Vec<(&ManifestEntry, Result<T>)>,
    stage: &str,
    strict: bool,
    skipped: &mut Vec<SkippedSentence>,
) -> Result<Vec<T>> {
    let mut ok = Vec::with_capacity(results.len());
    for (entry, res) in results {
        match res {
            Ok(v) => ok.push(v),
            Err(e) if !strict && e.is_per_sentence() => {
                log::debug!("skipping {} ({stage}): {e}", entry.sentence_id);
                skipped.push(SkippedSentence {
                    sentence_id: entry.sentence_id.clone(),
                    stage: stage.to_string(),
                    reason: e.to_string(),
                })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(ok)
}

/// Computes per-sentence entropy records, and losses when `with_losses` is set.
pub fn evaluate_manifest(m: &LoadedManifest, opts: EvalOptions, with_losses: bool) -> Result<ModelEvaluation> {
    let entries = &m.manifest.entries;
    let mut skipped = Vec::new();

    let results: Vec<_> = entries
        .par_iter()
        .map(|e| (e, entry_record(m, e, opts.route)))
        .collect();
    let records = partition(results, "erank", opts.strict, &mut skipped)?;

    let losses = if with_losses {
        let results: Vec<_> = entries.par_iter().map(|e| (e, entry_loss(m, e))).collect();
        partition(results, "loss", opts.strict, &mut skipped)?
    } else {
        Vec::new()
    };
    if !skipped.is_empty() {
        log::info!("{}: skipped {} sentence evaluations", m.manifest.model_id, skipped.len());
    }
    Ok(ModelEvaluation {
        model_id: m.manifest.model_id.clone(),
        dataset_id: m.manifest.dataset_id.clone(),
        layer: m.manifest.layer,
        records,
        losses,
        skipped,
    })
}

/// Computes per-sentence losses only.
pub fn evaluate_losses(m: &LoadedManifest, opts: EvalOptions) -> Result<ModelEvaluation> {
    let mut skipped = Vec::new();
    let results: Vec<_> = m.manifest.entries.par_iter().map(|e| (e, entry_loss(m, e))).collect();
    let losses = partition(results, "loss", opts.strict, &mut skipped)?;
    Ok(ModelEvaluation {
        model_id: m.manifest.model_id.clone(),
        dataset_id: m.manifest.dataset_id.clone(),
        layer: m.manifest.layer,
        records: Vec::new(),
        losses,
        skipped,
    })
}

fn digest(role: &str, m: &LoadedManifest) -> InputDigest {
    InputDigest {
        role: role.to_string(),
        path: m.path.display().to_string(),
        sha256: m.digest.clone(),
    }
}

/// Per-sentence entropy and eRank for one manifest.
pub fn erank_report(m: &LoadedManifest, opts: EvalOptions) -> Result<MetricsReport> {
    let eval = evaluate_manifest(m, opts, m.manifest.has_logprobs())?;
    Ok(MetricsReport {
        inputs: vec![digest("single", m)],
        models: vec![eval.into_section("single")],
        ..Default::default()
    })
}

/// Drops from both sides every sentence missing on either side, recording
/// the exclusion on the side that still had it.
fn align_sides(u: &mut ModelEvaluation, t: &mut ModelEvaluation) {
    fn exclude(e: &mut ModelEvaluation, keep_h: &HashSet<String>, keep_l: &HashSet<String>, other: ModelRole) {
        let mut newly = Vec::new();
        e.records.retain(|r| {
            let keep = keep_h.contains(&r.sentence_id);
            if !keep {
                newly.push((r.sentence_id.clone(), "erank"));
            }
            keep
        });
        e.losses.retain(|l| {
            let keep = keep_l.contains(&l.sentence_id);
            if !keep {
                newly.push((l.sentence_id.clone(), "loss"));
            }
            keep
        });
        e.skipped.extend(newly.into_iter().map(|(id, stage)| SkippedSentence {
            sentence_id: id,
            stage: stage.to_string(),
            reason: format!("excluded: skipped by the {other} model"),
        }));
    }

    let own = |a: HashSet<&str>, b: HashSet<&str>| -> HashSet<String> { a.intersection(&b).map(|s| s.to_string()).collect() };
    let keep_h = own(u.entropy_ids(), t.entropy_ids());
    let keep_l = own(u.loss_ids(), t.loss_ids());
    exclude(u, &keep_h, &keep_l, ModelRole::Trained);
    exclude(t, &keep_h, &keep_l, ModelRole::Untrained);
}

/// Dataset Diff-eRank of two manifests over the same sentences, plus the
/// reduced loss when both carry log-probs.
pub fn diff_erank_report(
    untrained: &LoadedManifest,
    trained: &LoadedManifest,
    algorithm: AlgorithmChoice,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    check_same_sentences(
        untrained.manifest.entries.iter().map(|e| e.sentence_id.as_str()),
        trained.manifest.entries.iter().map(|e| e.sentence_id.as_str()),
    )?;
    let with_losses = untrained.manifest.has_logprobs() && trained.manifest.has_logprobs();
    let mut u = evaluate_manifest(untrained, opts, with_losses).map_err(|e| Error::in_model(ModelRole::Untrained, e))?;
    let mut t = evaluate_manifest(trained, opts, with_losses).map_err(|e| Error::in_model(ModelRole::Trained, e))?;
    align_sides(&mut u, &mut t);
    if u.records.is_empty() {
        return Err(Error::NoUsableSentences);
    }

    let (su, st) = (u.summary(), t.summary());
    let diff = |agg| -> Result<Option<f64>> {
        if algorithm.includes(agg) {
            dataset_diff_erank(&su, &st, agg).map(Some)
        } else {
            Ok(None)
        }
    };
    let reduced = if with_losses && !u.losses.is_empty() {
        let lu = Aggregates::compute(&[], &u.losses).mean_loss;
        let lt = Aggregates::compute(&[], &t.losses).mean_loss;
        lu.zip(lt).map(|(a, b)| reduced_loss(a, b))
    } else {
        None
    };
    let comparison = Comparison {
        algorithm: algorithm.as_str().to_string(),
        sentence_count: u.records.len(),
        diff_erank_a: diff(Aggregation::A)?,
        diff_erank_b: diff(Aggregation::B)?,
        reduced_loss: reduced,
        loss_sentence_count: u.losses.len(),
    };
    Ok(MetricsReport {
        label: Some(trained.manifest.model_id.clone()),
        inputs: vec![digest("untrained", untrained), digest("trained", trained)],
        models: vec![u.into_section("untrained"), t.into_section("trained")],
        comparison: Some(comparison),
        ..Default::default()
    })
}

/// Reduced cross-entropy loss of two manifests over the same sentences.
pub fn reduced_loss_report(untrained: &LoadedManifest, trained: &LoadedManifest, opts: EvalOptions) -> Result<MetricsReport> {
    check_same_sentences(
        untrained.manifest.entries.iter().map(|e| e.sentence_id.as_str()),
        trained.manifest.entries.iter().map(|e| e.sentence_id.as_str()),
    )?;
    let mut u = evaluate_losses(untrained, opts).map_err(|e| Error::in_model(ModelRole::Untrained, e))?;
    let mut t = evaluate_losses(trained, opts).map_err(|e| Error::in_model(ModelRole::Trained, e))?;
    align_sides(&mut u, &mut t);
    if u.losses.is_empty() {
        return Err(Error::NoUsableSentences);
    }
    let lu = Aggregates::compute(&[], &u.losses).mean_loss.expect("non-empty");
    let lt = Aggregates::compute(&[], &t.losses).mean_loss.expect("non-empty");
    let comparison = Comparison {
        algorithm: AlgorithmChoice::A.as_str().to_string(),
        sentence_count: 0,
        diff_erank_a: None,
        diff_erank_b: None,
        reduced_loss: Some(reduced_loss(lu, lt)),
        loss_sentence_count: u.losses.len(),
    };
    Ok(MetricsReport {
        label: Some(trained.manifest.model_id.clone()),
        inputs: vec![digest("untrained", untrained), digest("trained", trained)],
        models: vec![u.into_section("untrained"), t.into_section("trained")],
        comparison: Some(comparison),
        ..Default::default()
    })
}

/// Alignment scores from five given eRanks.
pub fn mm_report_from_values(eranks: [f64; 5]) -> Result<MetricsReport> {
    Ok(MetricsReport {
        multimodal: Some(MultimodalERanks::new(eranks)?.into()),
        ..Default::default()
    })
}

/// Alignment scores from the five stage manifests, each reduced to a dataset
/// eRank with `aggregation`.
pub fn mm_report_from_manifests(stages: &[LoadedManifest; 5], aggregation: Aggregation, opts: EvalOptions) -> Result<MetricsReport> {
    let mut eranks = [0.0; 5];
    let mut models = Vec::with_capacity(5);
    let mut inputs = Vec::with_capacity(5);
    for (i, m) in stages.iter().enumerate() {
        let role = format!("stage{}", i + 1);
        let eval = evaluate_manifest(m, opts, false)?;
        if eval.records.is_empty() {
            return Err(Error::at_path(&m.path, Error::NoUsableSentences));
        }
        eranks[i] = eval.summary().erank(aggregation);
        inputs.push(digest(&role, m));
        models.push(eval.into_section(&role));
    }
    Ok(MetricsReport {
        inputs,
        models,
        multimodal: Some(MultimodalERanks::new(eranks)?.into()),
        ..Default::default()
    })
}
