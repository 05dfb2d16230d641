//! The whole vocabulary → teacher → mixture → student → evaluation chain,
//! in memory, and the k-fold experiment built on it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{evaluate, train_student, train_teacher, EpochRecord, MetricsReport};
use crate::config::RunConfig;
use crate::corpus::{self, Corpus};
use crate::distill::{self, SignalContext, TeacherFeatureStore};
use crate::error::Result;
use crate::gmm::GmmModel;
use crate::neuralnet::{Checkpoint, CheckpointMeta};
use crate::vectorize::{encode, TokenSequence, Vocabulary};

/// Padded sequences and class indices of a corpus, in sample order.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub seqs: Vec<TokenSequence>,
    pub labels: Vec<usize>,
}

pub fn encode_corpus(corpus: &Corpus, vocab: &Vocabulary, max_len: usize) -> Encoded {
    Encoded {
        seqs: corpus
            .samples()
            .iter()
            .map(|s| encode(s.id, corpus.text_of(s), vocab, max_len))
            .collect(),
        labels: corpus.label_indices(),
    }
}

pub fn checkpoint_meta(cfg: &RunConfig, corpus: &Corpus, vocab: &Vocabulary) -> CheckpointMeta {
    CheckpointMeta {
        config_digest: cfg.digest(),
        labels: corpus.labels().names().to_vec(),
        vocab_digest: vocab.digest(),
    }
}

pub struct PipelineOutput {
    pub vocab: Vocabulary,
    pub teacher: Checkpoint,
    pub teacher_log: Vec<EpochRecord>,
    pub store: TeacherFeatureStore,
    pub gmm: GmmModel,
    pub student: Checkpoint,
    pub student_log: Vec<EpochRecord>,
    pub teacher_metrics: MetricsReport,
    pub student_metrics: MetricsReport,
}

/// Trains on `train` only and evaluates both networks on `eval`.
pub fn run_pipeline(train: &Corpus, eval: &Corpus, cfg: &RunConfig) -> Result<PipelineOutput> {
    let train = if train.is_cleaned() { train.clone() } else { train.cleaned(None) };
    let eval = if eval.is_cleaned() { eval.clone() } else { eval.cleaned(None) };
    let vocab = Vocabulary::build(&train, cfg.vocab.min_freq)?;
    let tr = encode_corpus(&train, &vocab, cfg.vocab.max_len);
    let ev = encode_corpus(&eval, &vocab, cfg.vocab.max_len);
    let names = train.labels().names().to_vec();
    let net_cfg = cfg.network_config(vocab.len(), names.len());
    let meta = checkpoint_meta(cfg, &train, &vocab);

    let teacher_run = train_teacher(&tr.seqs, &tr.labels, net_cfg.clone(), &cfg.loss, &cfg.teacher, cfg.seed)?;
    let teacher = Checkpoint::new(&teacher_run.network, meta.clone());
    let digest = crate::sha256_hex(&teacher.to_bytes()?);
    let dcfg = cfg.distill_config();
    let (store, gmm) = distill::run_algorithm1(&teacher, &digest, &tr.seqs, &tr.labels, &dcfg)?;
    let ctx = SignalContext {
        store: &store,
        gmm: &gmm,
        config: &dcfg,
    };
    let student_run = train_student(&tr.seqs, &tr.labels, net_cfg, &cfg.loss, &cfg.student, ctx, cfg.seed)?;
    let teacher_metrics = evaluate(&teacher_run.network, &ev.seqs, &ev.labels, &names)?.with_digest(&meta.config_digest);
    let student_metrics = evaluate(&student_run.network, &ev.seqs, &ev.labels, &names)?.with_digest(&meta.config_digest);
    Ok(PipelineOutput {
        student: Checkpoint::new(&student_run.network, meta),
        vocab,
        teacher,
        teacher_log: teacher_run.log,
        store,
        gmm,
        student_log: student_run.log,
        teacher_metrics,
        student_metrics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub vocab_digest: String,
    pub teacher: MetricsReport,
    pub student: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfoldSummary {
    pub config_digest: String,
    pub k: usize,
    pub folds: Vec<FoldResult>,
    pub teacher: BTreeMap<String, MeanStd>,
    pub student: BTreeMap<String, MeanStd>,
}

impl KfoldSummary {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        super::metrics::write_json(path, self)
    }
}

pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> BTreeMap<String, MeanStd> {
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (name, v) in r.scalars() {
            columns.entry(name.to_string()).or_default().push(v);
        }
    }
    columns
        .into_iter()
        .map(|(name, vs)| {
            let n = vs.len() as f64;
            let mean = vs.iter().sum::<f64>() / n;
            let var = vs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (name, MeanStd { mean, std: var.sqrt() })
        })
        .collect()
}

/// Runs the whole chain once per stratified fold, each on its fold-train
/// part only, and aggregates validation metrics.
pub fn run_kfold(corpus: &Corpus, k: usize, cfg: &RunConfig) -> Result<KfoldSummary> {
    let folds = corpus::kfold(corpus, k, cfg.seed)?;
    let mut results = Vec::with_capacity(k);
    for (fold, (train, val)) in folds.iter().enumerate() {
        let out = run_pipeline(train, val, cfg)?;
        results.push(FoldResult {
            fold,
            train_size: train.len(),
            validation_size: val.len(),
            vocab_digest: out.vocab.digest(),
            teacher: out.teacher_metrics,
            student: out.student_metrics,
        });
    }
    Ok(KfoldSummary {
        config_digest: cfg.digest(),
        k,
        teacher: aggregate(results.iter().map(|r| &r.teacher)),
        student: aggregate(results.iter().map(|r| &r.student)),
        folds: results,
    })
}
