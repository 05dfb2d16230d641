//! One function per subcommand.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use anyhow::Context;

use latentg::config::RunConfig;
use latentg::corpus::{self, Corpus};
use latentg::distill::{self, SignalContext, TeacherFeatureStore};
use latentg::gmm::GmmModel;
use latentg::neuralnet::{Checkpoint, Network};
use latentg::trainer::pipeline::{checkpoint_meta, encode_corpus, run_kfold, Encoded};
use latentg::trainer::{self, write_training_log, TrainRun, Trainer};
use latentg::vectorize::{IdfTable, Vocabulary};

use crate::workspace::{self as w, Workspace};
use crate::Invalid;

fn create(path: &PathBuf) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_part(ws: &Workspace, cfg: &RunConfig, rel: &str) -> anyhow::Result<Corpus> {
    let path = ws.require(rel, "prep")?;
    let labels = cfg.corpus.label_set()?;
    let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Corpus::read_cleaned(BufReader::new(f), &labels).with_context(|| format!("reading {}", path.display()))
}

fn read_vocab(ws: &Workspace) -> anyhow::Result<Vocabulary> {
    let path = ws.require(w::VOCAB, "train-teacher")?;
    let f = File::open(&path)?;
    Ok(Vocabulary::read(BufReader::new(f))?)
}

fn read_checkpoint(ws: &Workspace, role: &str) -> anyhow::Result<(Checkpoint, String)> {
    let path = ws.require(&w::model_path(role), &format!("train-{role}"))?;
    let bytes = fs::read(&path)?;
    let ck = Checkpoint::from_bytes(&bytes).with_context(|| format!("reading {}", path.display()))?;
    Ok((ck, latentg::sha256_hex(&bytes)))
}

/// Fails unless the checkpoint was trained over `vocab` and `labels`.
fn check_compatible(ck: &Checkpoint, role: &str, vocab: &Vocabulary, labels: &[String]) -> anyhow::Result<()> {
    if ck.meta.labels != labels {
        return Err(Invalid(format!(
            "the {role} checkpoint was trained on labels {:?} but the corpus has {:?}",
            ck.meta.labels, labels
        ))
        .into());
    }
    if ck.meta.vocab_digest != vocab.digest() {
        return Err(Invalid(format!(
            "{} was rebuilt after the {role} was trained; rerun `latentg train-{role}`",
            w::VOCAB
        ))
        .into());
    }
    ck.ensure_vocab_size(vocab.len())?;
    Ok(())
}

/// Runs the remaining epochs, reporting each on stderr. `after_epoch` sees
/// the network once each epoch completes.
fn train_loop(
    mut t: Trainer,
    role: &str,
    mut after_epoch: impl FnMut(usize, &Network<f32>) -> anyhow::Result<()>,
) -> anyhow::Result<TrainRun> {
    while !t.is_done() {
        let r = t.run_epoch()?;
        eprintln!(
            "{role} epoch {}: total {:.4} base {:.4} latentg {:.4} mse {:.5} train acc {:.3}",
            r.epoch, r.total, r.base, r.latentg_mean, r.mse, r.train_accuracy
        );
        after_epoch(r.epoch, t.network())?;
    }
    Ok(t.finish())
}

pub fn synth(ws: &mut Workspace, cfg: &RunConfig, n: Option<usize>) -> anyhow::Result<()> {
    let n = n.unwrap_or(cfg.synth.n);
    let corpus = latentg::synth::generate(n, cfg.seed, &cfg.corpus.label_set()?)?;
    let path = ws.output(w::CORPUS, "synth")?;
    corpus.write_csv(create(&path)?, &cfg.corpus.schema())?;
    println!("wrote {} documents to {}", corpus.len(), path.display());
    Ok(())
}

pub fn prep(ws: &mut Workspace, cfg: &RunConfig, input: Option<PathBuf>) -> anyhow::Result<()> {
    let input = match input {
        Some(p) if p.is_file() => p,
        Some(p) => return Err(Invalid(format!("input file {} does not exist", p.display())).into()),
        None => ws.require(w::CORPUS, "synth")?,
    };
    let raw = Corpus::load_csv(&input, &cfg.corpus.schema(), &cfg.corpus.label_set()?)?;
    let cleaned = raw.cleaned(None);
    let (train, test) = corpus::stratified_split(&cleaned, &cfg.split_spec())?;
    for (rel, part) in [(w::CLEANED, &cleaned), (w::TRAIN, &train), (w::TEST, &test)] {
        part.write_cleaned(create(&ws.output(rel, "prep")?)?)?;
    }
    write_stats(ws, &cleaned, "prep")?;
    println!("{} documents: {} train, {} test", cleaned.len(), train.len(), test.len());
    Ok(())
}

fn write_stats(ws: &mut Workspace, corpus: &Corpus, producer: &str) -> anyhow::Result<corpus::CorpusStats> {
    let s = corpus::stats(corpus)?;
    s.write_class_counts(create(&ws.output("class_counts.csv", producer)?)?)?;
    s.write_length_hist(create(&ws.output("length_hist.csv", producer)?)?)?;
    Ok(s)
}

pub fn stats(ws: &mut Workspace, cfg: &RunConfig) -> anyhow::Result<()> {
    let cleaned = read_part(ws, cfg, w::CLEANED)?;
    let s = write_stats(ws, &cleaned, "stats")?;
    for (label, count) in &s.class_counts {
        println!("{label}\t{count}");
    }
    let words: usize = s.length_hist.iter().map(|(len, n)| len * n).sum();
    println!("mean words per document: {:.2}", words as f64 / cleaned.len() as f64);
    Ok(())
}

pub fn tfidf(ws: &mut Workspace, cfg: &RunConfig) -> anyhow::Result<()> {
    let train = read_part(ws, cfg, w::TRAIN)?;
    let test = read_part(ws, cfg, w::TEST)?;
    let idf = IdfTable::fit(&train)?;
    idf.write_terms(create(&ws.output("tfidf_terms.txt", "tfidf")?)?)?;
    for (rel, part) in [("tfidf_train.csv", &train), ("tfidf_test.csv", &test)] {
        let docs: Vec<_> = part.samples().iter().map(|s| (s.id, idf.transform(part.text_of(s)))).collect();
        IdfTable::write_matrix(&docs, create(&ws.output(rel, "tfidf")?)?)?;
    }
    println!("{} terms over {} training documents", idf.num_terms(), idf.num_docs());
    Ok(())
}

pub fn train_teacher(ws: &mut Workspace, cfg: &RunConfig) -> anyhow::Result<()> {
    let train = read_part(ws, cfg, w::TRAIN)?;
    let vocab = Vocabulary::build(&train, cfg.vocab.min_freq)?;
    let enc = encode_corpus(&train, &vocab, cfg.vocab.max_len);
    let net_cfg = cfg.network_config(vocab.len(), train.num_classes());
    let net = Network::init(net_cfg, cfg.seed)?;
    let t = Trainer::new(net, &cfg.teacher, &cfg.loss, None, &enc.seqs, &enc.labels, cfg.seed)?;
    let run = train_loop(t, "teacher", |_, _| Ok(()))?;

    vocab.write(create(&ws.output(w::VOCAB, "train-teacher")?)?)?;
    let ck = Checkpoint::new(&run.network, checkpoint_meta(cfg, &train, &vocab));
    ck.save(&ws.output(&w::model_path("teacher"), "train-teacher")?)?;
    write_training_log(&ws.output("teacher/training_log.csv", "train-teacher")?, &run.log)?;
    println!("teacher trained for {} epochs on {} documents", run.log.len(), train.len());
    Ok(())
}

struct TeacherSide {
    train: Corpus,
    vocab: Vocabulary,
    enc: Encoded,
    teacher: Checkpoint,
    teacher_digest: String,
}

fn teacher_side(ws: &Workspace, cfg: &RunConfig) -> anyhow::Result<TeacherSide> {
    let (teacher, teacher_digest) = read_checkpoint(ws, "teacher")?;
    let train = read_part(ws, cfg, w::TRAIN)?;
    let vocab = read_vocab(ws)?;
    check_compatible(&teacher, "teacher", &vocab, train.labels().names())?;
    let enc = encode_corpus(&train, &vocab, cfg.vocab.max_len);
    Ok(TeacherSide {
        train,
        vocab,
        enc,
        teacher,
        teacher_digest,
    })
}

pub fn algorithm1(ws: &mut Workspace, cfg: &RunConfig) -> anyhow::Result<()> {
    let t = teacher_side(ws, cfg)?;
    let dcfg = cfg.distill_config();
    let (store, gmm) = distill::run_algorithm1(&t.teacher, &t.teacher_digest, &t.enc.seqs, &t.enc.labels, &dcfg)?;
    store.save(&ws.output(w::TEACHER_FEATURES, "algorithm1")?)?;
    gmm.save(&ws.output(w::GMM, "algorithm1")?)?;
    let report = gmm.report();
    report.write(&ws.output("gmm_report.json", "algorithm1")?)?;
    println!(
        "{} teacher vectors of dimension {}; mixture of {} components, log-likelihood {:.4} after {} iterations",
        store.len(),
        store.dim,
        report.components,
        report.final_log_likelihood,
        report.iterations
    );
    Ok(())
}

pub fn train_student(ws: &mut Workspace, cfg: &RunConfig) -> anyhow::Result<()> {
    let store_path = ws.require(w::TEACHER_FEATURES, "algorithm1")?;
    let gmm_path = ws.require(w::GMM, "algorithm1")?;
    let t = teacher_side(ws, cfg)?;
    let store = TeacherFeatureStore::load(&store_path)?;
    if store.teacher_digest != t.teacher_digest {
        return Err(Invalid(format!(
            "{} was extracted from a different teacher checkpoint; rerun `latentg algorithm1`",
            w::TEACHER_FEATURES
        ))
        .into());
    }
    let gmm = GmmModel::load(&gmm_path)?;
    let dcfg = cfg.distill_config();
    let ctx = SignalContext {
        store: &store,
        gmm: &gmm,
        config: &dcfg,
    };
    let net_cfg = cfg.network_config(t.vocab.len(), t.train.num_classes());
    let net = Network::init(net_cfg, cfg.seed)?;
    let trainer = Trainer::new(net, &cfg.student, &cfg.loss, Some(ctx), &t.enc.seqs, &t.enc.labels, cfg.seed)?;

    let every = cfg.distill.dump_signals_every;
    let mut dumps = Vec::new();
    let run = train_loop(trainer, "student", |epoch, net| {
        if every > 0 && epoch % every == 0 {
            let audit = SignalContext {
                store: &store,
                gmm: &gmm,
                config: &dcfg,
            };
            dumps.push((epoch, distill::corpus_signals(net, &t.enc.seqs, &t.enc.labels, &audit)?));
        }
        Ok(())
    })?;

    let ck = Checkpoint::new(&run.network, checkpoint_meta(cfg, &t.train, &t.vocab));
    ck.save(&ws.output(&w::model_path("student"), "train-student")?)?;
    write_training_log(&ws.output("student/training_log.csv", "train-student")?, &run.log)?;
    for (epoch, signals) in &dumps {
        distill::write_signals(&ws.output(&format!("student/signals_epoch{epoch}.csv"), "train-student")?, signals)?;
    }
    println!("student trained for {} epochs on {} documents", run.log.len(), t.train.len());
    Ok(())
}

pub fn evaluate(ws: &mut Workspace, cfg: &RunConfig, role: &str) -> anyhow::Result<()> {
    let (ck, _) = read_checkpoint(ws, role)?;
    let test = read_part(ws, cfg, w::TEST)?;
    let vocab = read_vocab(ws)?;
    let names = test.labels().names().to_vec();
    check_compatible(&ck, role, &vocab, &names)?;
    let enc = encode_corpus(&test, &vocab, ck.config.max_len);
    let report = trainer::evaluate(&ck.network(), &enc.seqs, &enc.labels, &names)?.with_digest(&ck.meta.config_digest);
    let producer = "evaluate";
    report.write_json(&ws.output(&format!("{role}/metrics.json"), producer)?)?;
    report.write_confusion(&ws.output(&format!("{role}/confusion.csv"), producer)?)?;
    println!(
        "{role}: accuracy {:.4}, weighted F1 {:.4}, macro F1 {:.4} on {} documents",
        report.accuracy, report.weighted_avg.f1, report.macro_avg.f1, report.total
    );
    Ok(())
}

pub fn kfold(ws: &mut Workspace, cfg: &RunConfig, k: Option<usize>) -> anyhow::Result<()> {
    let k = k.unwrap_or(cfg.split.k_folds);
    if k < 2 {
        return Err(Invalid(format!("k must be at least 2, got {k}")).into());
    }
    let cleaned = read_part(ws, cfg, w::CLEANED)?;
    let summary = run_kfold(&cleaned, k, cfg)?;
    summary.write_json(&ws.output("kfold_summary.json", "kfold")?)?;
    for (role, agg) in [("teacher", &summary.teacher), ("student", &summary.student)] {
        let acc = &agg["accuracy"];
        println!("{role}: accuracy {:.4} ± {:.4} over {k} folds", acc.mean, acc.std);
    }
    Ok(())
}

pub fn baseline(ws: &mut Workspace, cfg: &RunConfig) -> anyhow::Result<()> {
    let train = read_part(ws, cfg, w::TRAIN)?;
    let test = read_part(ws, cfg, w::TEST)?;
    let report = latentg::baselines::run_baselines(&train, &test, cfg)?;
    report.write_json(&ws.output("baseline_metrics.json", "baseline")?)?;
    println!(
        "logistic regression accuracy {:.4} (lr {}, l2 {}); naive Bayes accuracy {:.4}",
        report.logistic_regression.accuracy,
        report.logreg_selected.lr,
        report.logreg_selected.l2,
        report.naive_bayes.accuracy
    );
    Ok(())
}
