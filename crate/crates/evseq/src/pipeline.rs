//! The stages behind each subcommand, as in-memory functions plus thin
//! wrappers that read and write a run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use evseq_core::concept::{self, ConceptVocab, CptModel, CptTargets};
use evseq_core::corpus::{self, EncodedVideo, VideoRecord};
use evseq_core::generation::{self, DecodeConfig};
use evseq_core::metrics::{self, CaptionScores, DetectionReport, SodaMode, SodaReport};
use evseq_core::model::{Model, ModelConfig};
use evseq_core::numerics::Tensor;
use evseq_core::pretraining;
use evseq_core::robustness::{self, AuditMetrics, AuditReport, Operation};
use evseq_core::submission::{Prediction, Submission};
use evseq_core::text::Vocabulary;
use evseq_core::train::{LossRecord, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{EvalSection, RunConfig};
use crate::formats::{self, AnnotationFile, CptCheckpoint, FeatureMap, ModelCheckpoint, FORMAT_VERSION};
use crate::provenance::Provenance;
use crate::synthetic;
use crate::{Error, Result};

pub const TRAIN_FILE: &str = "train.json";
pub const VAL_FILE: &str = "val.json";
pub const VAL_ALT_FILE: &str = "val_alt.json";
pub const FEATURES_FILE: &str = "features.bin";
pub const MODEL_FILE: &str = "model.json";
pub const CPT_FILE: &str = "cpt.json";
pub const LOSS_FILE: &str = "losses.csv";
pub const SUBMISSION_FILE: &str = "submission.json";
pub const REPORT_FILE: &str = "eval_report.json";
pub const AUDIT_CSV: &str = "audit.csv";
pub const AUDIT_JSON: &str = "audit.json";

/// Training and validation records with the validation reference sets.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<VideoRecord>,
    pub val: Vec<VideoRecord>,
    pub references: Vec<Submission>,
}

impl Dataset {
    pub fn from_files(train: &AnnotationFile, val: &AnnotationFile, alt: Option<&AnnotationFile>, features: &FeatureMap, dir: &Path) -> Result<Self> {
        let fpath = dir.join(FEATURES_FILE);
        let mut references = vec![val.to_references()];
        references.extend(alt.map(AnnotationFile::to_references));
        Ok(Self {
            train: formats::join(train, features, &dir.join(TRAIN_FILE), &fpath)?,
            val: formats::join(val, features, &dir.join(VAL_FILE), &fpath)?,
            references,
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let train = AnnotationFile::load(&dir.join(TRAIN_FILE))?;
        let val = AnnotationFile::load(&dir.join(VAL_FILE))?;
        let alt_path = dir.join(VAL_ALT_FILE);
        let alt = alt_path.exists().then(|| AnnotationFile::load(&alt_path)).transpose()?;
        let features = formats::read_features(&dir.join(FEATURES_FILE))?;
        Self::from_files(&train, &val, alt.as_ref(), &features, dir)
    }

    pub fn input_files(dir: &Path) -> Vec<PathBuf> {
        [TRAIN_FILE, VAL_FILE, VAL_ALT_FILE, FEATURES_FILE].iter().map(|f| dir.join(f)).filter(|p| p.exists()).collect()
    }
}

/// Vocabulary from training captions and the model dimensions that follow
/// from the data: feature width and vocabulary size.
pub fn resolve(config: &ModelConfig, train: &[VideoRecord], min_freq: usize) -> Result<(ModelConfig, Vocabulary)> {
    let vocab = Vocabulary::build(train.iter().flat_map(|r| r.sentences.iter().map(String::as_str)), min_freq);
    let dim = train.first().ok_or(evseq_core::Error::EmptyCorpus)?.features.cols();
    let resolved = ModelConfig { feature_dim: dim, vocab_size: vocab.len(), ..config.clone() };
    resolved.validate()?;
    Ok((resolved, vocab))
}

pub fn encode(records: &[VideoRecord], vocab: &Vocabulary) -> Result<Vec<EncodedVideo>> {
    Ok(corpus::encode_corpus(records, vocab)?)
}

fn start_model(config: &ModelConfig, init: Option<&ModelCheckpoint>, seed: u64) -> Result<Model> {
    match init {
        Some(ck) => {
            if &ck.config != config {
                return Err(Error::Config("initial checkpoint was trained with a different model config".into()));
            }
            ck.model()
        }
        None => Ok(Model::new(config.clone(), seed)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    FinetuneEd,
    FinetuneEc,
}

/// Trains one stage in memory, saving periodic checkpoints through `save`.
pub fn train_stage(
    stage: Stage,
    config: &ModelConfig,
    corpus: &[EncodedVideo],
    train: &TrainConfig,
    seed: u64,
    init: Option<&ModelCheckpoint>,
    mut save: impl FnMut(usize, &Model) -> Result<()>,
) -> Result<(Model, Vec<LossRecord>)> {
    let mut model = start_model(config, init, seed)?;
    let mut io_error = None;
    let mut cb = |step: usize, m: &Model| {
        save(step, m).map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            evseq_core::Error::Config(msg)
        })
    };
    let result = match stage {
        Stage::Pretrain => pretraining::pretrain(&mut model, corpus, train, seed, &mut cb),
        Stage::FinetuneEd => generation::finetune_ed(&mut model, corpus, train, seed, &mut cb),
        Stage::FinetuneEc => generation::finetune_ec(&mut model, corpus, train, seed, &mut cb),
    };
    match (result, io_error) {
        (Ok(records), _) => Ok((model, records)),
        (Err(_), Some(e)) => Err(e),
        (Err(e), None) => Err(e.into()),
    }
}

/// Detect-then-describe over `records`, as a submission.
pub fn infer(ed: &Model, ec: &Model, vocab: &Vocabulary, records: &[VideoRecord], decode: &DecodeConfig) -> Result<Submission> {
    let mut sub = Submission::new();
    for r in records {
        let found = generation::detect_then_describe(ed, ec, vocab, &r.features, r.duration, decode)?;
        let preds = found.into_iter().map(|d| Prediction::new(d.interval.start, d.interval.end, d.sentence)).collect();
        sub.insert(r.video_id.clone(), preds);
    }
    Ok(sub)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub videos: usize,
    pub predictions: usize,
    pub detection: DetectionReport,
    pub captioning: CaptionScores,
    pub soda_old: SodaReport,
    pub soda_mr: SodaReport,
}

pub fn evaluate(sub: &Submission, refs: &[Submission], eval: &EvalSection) -> Result<EvalReport> {
    Ok(EvalReport {
        format_version: FORMAT_VERSION,
        videos: sub.results.len(),
        predictions: sub.num_predictions(),
        detection: metrics::detection_pr(sub, refs, &eval.tiou_thresholds)?,
        captioning: metrics::captioning_at_tiou(sub, refs, eval.caption_tiou)?,
        soda_old: metrics::soda(sub, refs, eval.inner, SodaMode::Old)?,
        soda_mr: metrics::soda(sub, refs, eval.inner, SodaMode::Mr)?,
    })
}

// ---- concept features ----

pub fn cpt_data(records: &[VideoRecord], vocab: &ConceptVocab) -> Result<Vec<(Tensor, CptTargets)>> {
    records.iter().map(|r| Ok((r.features.clone(), concept::cpt_targets(r, vocab)?))).collect()
}

/// Builds the concept vocabulary from training captions and fits the
/// recurrent concept classifier.
pub fn train_cpt(config: &RunConfig, train: &[VideoRecord], seed: u64) -> Result<(CptCheckpoint, Vec<LossRecord>)> {
    let cfg = &config.data.cpt;
    let vocab = concept::build_concept_vocab(train.iter().flat_map(|r| r.sentences.iter().map(String::as_str)), cfg.concepts)?;
    let dim = train.first().ok_or(evseq_core::Error::EmptyCorpus)?.features.cols();
    let mut model = CptModel::new(cfg.clone(), dim, seed)?;
    let data = cpt_data(train, &vocab)?;
    let losses = concept::train_cpt(&mut model, &data, &config.train.cpt, seed)?;
    Ok((CptCheckpoint { config: cfg.clone(), input_dim: dim, concepts: vocab, params: model.params }, losses))
}

/// Appearance features with the concept features appended.
pub fn augment(features: &FeatureMap, cpt: &CptModel) -> Result<FeatureMap> {
    features
        .iter()
        .map(|(id, f)| Ok((id.clone(), corpus::concat_features(f, &cpt.extract(f)?)?)))
        .collect()
}

// ---- audit ----

pub fn audit(sub: &Submission, refs: &[Submission], ops: &[Operation], eval: &EvalSection) -> Result<AuditReport> {
    Ok(robustness::audit(sub, refs, ops, &eval.perturb, eval.inner)?)
}

/// One row per operation with the seed-mean of every column, in percent.
pub fn audit_csv(report: &AuditReport) -> String {
    let mut out = String::from("operation");
    for c in AuditMetrics::COLUMNS {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(row.operation.name());
        for v in row.mean.values() {
            write!(out, ",{v:.2}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn loss_csv(records: &[LossRecord]) -> String {
    let mut out = String::from("step,task,loss\n");
    for r in records {
        writeln!(out, "{},{},{}", r.step, r.task.name(), r.loss).expect("string write");
    }
    out
}

// ---- run directories ----

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

pub fn run_gen_data(config: &RunConfig, out: &Path) -> Result<Provenance> {
    create_out(out)?;
    let corpus = synthetic::generate(&config.data.synthetic)?;
    let mut prov = Provenance::new("gen-data", config, config.data.synthetic.seed);
    for (name, file) in [(TRAIN_FILE, &corpus.train), (VAL_FILE, &corpus.val), (VAL_ALT_FILE, &corpus.val_alt)] {
        formats::write_json(&out.join(name), file)?;
    }
    formats::write_features(&out.join(FEATURES_FILE), &corpus.features)?;
    for f in [TRAIN_FILE, VAL_FILE, VAL_ALT_FILE, FEATURES_FILE] {
        prov.output(&out.join(f))?;
    }
    prov.write(out, config)?;
    Ok(prov)
}

/// Fits the concept classifier and writes a new data directory whose
/// features carry the concept features.
pub fn run_train_cpt(config: &RunConfig, data: &Path, out: &Path) -> Result<Provenance> {
    create_out(out)?;
    let ds = Dataset::load(data)?;
    let seed = config.train.seed;
    let mut prov = Provenance::new("train-cpt", config, seed);
    prov.inputs(&Dataset::input_files(data))?;
    let (ck, losses) = train_cpt(config, &ds.train, seed)?;
    ck.save(&out.join(CPT_FILE))?;
    write_text(&out.join(LOSS_FILE), &loss_csv(&losses))?;
    let features = augment(&formats::read_features(&data.join(FEATURES_FILE))?, &ck.model()?)?;
    formats::write_features(&out.join(FEATURES_FILE), &features)?;
    for f in [TRAIN_FILE, VAL_FILE, VAL_ALT_FILE] {
        let src = data.join(f);
        if src.exists() {
            fs::copy(&src, out.join(f)).map_err(|e| Error::io(&src, e))?;
        }
    }
    for f in [CPT_FILE, LOSS_FILE, FEATURES_FILE, TRAIN_FILE, VAL_FILE, VAL_ALT_FILE] {
        if out.join(f).exists() {
            prov.output(&out.join(f))?;
        }
    }
    prov.write(out, config)?;
    Ok(prov)
}

pub fn run_train_stage(stage: Stage, config: &RunConfig, data: &Path, init: Option<&Path>, out: &Path) -> Result<Provenance> {
    create_out(out)?;
    let (name, train) = match stage {
        Stage::Pretrain => ("pretrain", &config.train.pretrain),
        Stage::FinetuneEd => ("finetune-ed", &config.train.ed),
        Stage::FinetuneEc => ("finetune-ec", &config.train.ec),
    };
    let seed = config.train.seed;
    let mut prov = Provenance::new(name, config, seed);
    prov.inputs(&Dataset::input_files(data))?;
    let ds = Dataset::load(data)?;
    let (model_config, vocab) = resolve(&config.model, &ds.train, config.data.min_freq)?;
    let init = match init {
        Some(p) => {
            prov.inputs(&[p.to_path_buf()])?;
            let ck = ModelCheckpoint::load(p)?;
            if ck.vocab != vocab {
                return Err(Error::Config(format!("{}: vocabulary differs from the training data", p.display())));
            }
            Some(ck)
        }
        None => None,
    };
    let corpus = encode(&ds.train, &vocab)?;
    let save = |step: usize, m: &Model| {
        if step == train.steps {
            return Ok(());
        }
        let ck = ModelCheckpoint { config: model_config.clone(), vocab: vocab.clone(), params: m.params.clone() };
        ck.save(&out.join(format!("model_step{step}.json")))
    };
    let (model, losses) = train_stage(stage, &model_config, &corpus, train, seed, init.as_ref(), save)?;
    let ck = ModelCheckpoint { config: model_config.clone(), vocab, params: model.params };
    ck.save(&out.join(MODEL_FILE))?;
    write_text(&out.join(LOSS_FILE), &loss_csv(&losses))?;
    prov.output(&out.join(MODEL_FILE))?;
    prov.output(&out.join(LOSS_FILE))?;
    let mut resolved = config.clone();
    resolved.model = model_config;
    prov.write(out, &resolved)?;
    Ok(prov)
}

pub fn run_infer(config: &RunConfig, data: &Path, ed: &Path, ec: &Path, out: &Path) -> Result<Provenance> {
    create_out(out)?;
    let mut prov = Provenance::new("infer", config, config.train.seed);
    prov.inputs(&Dataset::input_files(data))?;
    prov.inputs(&[ed.to_path_buf(), ec.to_path_buf()])?;
    let ds = Dataset::load(data)?;
    let (ed_ck, ec_ck) = (ModelCheckpoint::load(ed)?, ModelCheckpoint::load(ec)?);
    if ed_ck.vocab != ec_ck.vocab {
        return Err(Error::Config("detector and captioner checkpoints use different vocabularies".into()));
    }
    let sub = infer(&ed_ck.model()?, &ec_ck.model()?, &ec_ck.vocab, &ds.val, &config.decode)?;
    formats::write_submission(&out.join(SUBMISSION_FILE), &sub)?;
    prov.output(&out.join(SUBMISSION_FILE))?;
    prov.write(out, config)?;
    Ok(prov)
}

/// References: explicit files if given, otherwise the data directory's
/// validation sets.
pub fn load_references(data: Option<&Path>, refs: &[PathBuf]) -> Result<(Vec<Submission>, Vec<PathBuf>)> {
    let files: Vec<PathBuf> = if refs.is_empty() {
        let dir = data.ok_or_else(|| Error::Config("need --data or at least one --refs file".into()))?;
        [VAL_FILE, VAL_ALT_FILE].iter().map(|f| dir.join(f)).filter(|p| p.exists()).collect()
    } else {
        refs.to_vec()
    };
    let sets = files.iter().map(|p| AnnotationFile::load(p).map(|a| a.to_references())).collect::<Result<Vec<_>>>()?;
    if sets.is_empty() {
        return Err(Error::Config("no reference annotations found".into()));
    }
    Ok((sets, files))
}

pub fn run_evaluate(config: &RunConfig, submission: &Path, refs: &[Submission], ref_files: &[PathBuf], out: &Path) -> Result<EvalReport> {
    create_out(out)?;
    let mut prov = Provenance::new("evaluate", config, config.train.seed);
    prov.inputs(&[submission.to_path_buf()])?;
    prov.inputs(ref_files)?;
    let sub = formats::read_submission(submission)?;
    let report = evaluate(&sub, refs, &config.eval)?;
    formats::write_json(&out.join(REPORT_FILE), &report)?;
    prov.output(&out.join(REPORT_FILE))?;
    prov.write(out, config)?;
    Ok(report)
}

pub fn run_audit(
    config: &RunConfig,
    submission: &Path,
    refs: &[Submission],
    ref_files: &[PathBuf],
    ops: &[Operation],
    out: &Path,
) -> Result<AuditReport> {
    create_out(out)?;
    let mut prov = Provenance::new("audit", config, config.train.seed);
    prov.inputs(&[submission.to_path_buf()])?;
    prov.inputs(ref_files)?;
    let sub = formats::read_submission(submission)?;
    let report = audit(&sub, refs, ops, &config.eval)?;
    write_text(&out.join(AUDIT_CSV), &audit_csv(&report))?;
    formats::write_json(&out.join(AUDIT_JSON), &report)?;
    prov.output(&out.join(AUDIT_CSV))?;
    prov.output(&out.join(AUDIT_JSON))?;
    prov.write(out, config)?;
    Ok(report)
}
