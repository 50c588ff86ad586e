//! On-disk formats: annotation JSON, clip-caption JSON, the binary feature
//! container, submissions, and parameter checkpoints. Every JSON file carries
//! a `format_version`; loaders reject anything they cannot read exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use evseq_core::concept::{CptConfig, ConceptVocab};
use evseq_core::corpus::VideoRecord;
use evseq_core::event_codec::TimeInterval;
use evseq_core::model::ModelConfig;
use evseq_core::numerics::{ParamStore, Tensor};
use evseq_core::submission::Submission;
use evseq_core::text::Vocabulary;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const FEATURE_MAGIC: &[u8; 8] = b"EVSQFEAT";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
}

/// Pretty JSON with a trailing newline. Map keys come out sorted because
/// every map in these formats is a `BTreeMap`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_version(path: &Path, found: u32) -> Result<()> {
    if found == FORMAT_VERSION {
        Ok(())
    } else {
        Err(Error::schema(path, "format_version", format!("unsupported version {found}, expected {FORMAT_VERSION}")))
    }
}

// ---- annotations ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationEntry {
    pub duration: f64,
    pub timestamps: Vec<[f64; 2]>,
    pub sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub format_version: u32,
    pub videos: BTreeMap<String, AnnotationEntry>,
}

impl AnnotationFile {
    pub fn new() -> Self {
        Self { format_version: FORMAT_VERSION, videos: BTreeMap::new() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: Self = read_json(path)?;
        check_version(path, file.format_version)?;
        for (id, v) in &file.videos {
            let field = |f: &str| format!("videos.{id}.{f}");
            if !(v.duration.is_finite() && v.duration > 0.0) {
                return Err(Error::schema(path, field("duration"), format!("{} is not a positive duration", v.duration)));
            }
            if v.timestamps.is_empty() {
                return Err(Error::schema(path, field("timestamps"), "no events"));
            }
            if v.timestamps.len() != v.sentences.len() {
                return Err(Error::schema(
                    path,
                    field("sentences"),
                    format!("{} sentences for {} timestamps", v.sentences.len(), v.timestamps.len()),
                ));
            }
            for (i, t) in v.timestamps.iter().enumerate() {
                if TimeInterval::new(t[0], t[1], v.duration).is_err() {
                    return Err(Error::schema(
                        path,
                        field(&format!("timestamps[{i}]")),
                        format!("[{}, {}] is not inside [0, {}]", t[0], t[1], v.duration),
                    ));
                }
            }
        }
        Ok(file)
    }

    /// The annotations as a reference set for the metrics.
    pub fn to_references(&self) -> Submission {
        let mut s = Submission::new();
        for (id, v) in &self.videos {
            let preds = v
                .timestamps
                .iter()
                .zip(&v.sentences)
                .map(|(t, sent)| evseq_core::submission::Prediction::new(t[0], t[1], sent.clone()))
                .collect();
            s.insert(id.clone(), preds);
        }
        s
    }

    pub fn captions(&self) -> impl Iterator<Item = &str> {
        self.videos.values().flat_map(|v| v.sentences.iter().map(String::as_str))
    }
}

impl Default for AnnotationFile {
    fn default() -> Self {
        Self::new()
    }
}

// ---- features ----

/// Frame features by video id, in the binary container: the magic, a
/// little-endian u32 version and record count, then per record the id
/// (u32 length + UTF-8), N and D as u32, and N·D little-endian f64 values
/// in row-major order.
pub type FeatureMap = BTreeMap<String, Tensor>;

pub fn write_features(path: &Path, features: &FeatureMap) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(FEATURE_MAGIC)?;
    put(&FORMAT_VERSION.to_le_bytes())?;
    put(&u32::try_from(features.len()).expect("record count fits u32").to_le_bytes())?;
    for (id, t) in features {
        put(&(id.len() as u32).to_le_bytes())?;
        put(id.as_bytes())?;
        put(&(t.rows() as u32).to_le_bytes())?;
        put(&(t.cols() as u32).to_le_bytes())?;
        for v in t.data() {
            put(&v.to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureMap> {
    let mut bytes = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= bytes.len());
        match end {
            Some(e) => {
                let s = &bytes[pos..e];
                pos = e;
                Ok(s)
            }
            None => Err(Error::schema(path, what, format!("truncated at byte {pos}"))),
        }
    };
    if take(8, "magic")? != FEATURE_MAGIC {
        return Err(Error::schema(path, "magic", "not an EVSQFEAT container"));
    }
    let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
    let version = u32_at(take(4, "format_version")?);
    check_version(path, version)?;
    let count = u32_at(take(4, "count")?) as usize;
    let mut out = FeatureMap::new();
    for r in 0..count {
        let len = u32_at(take(4, &format!("records[{r}].id"))?) as usize;
        let id = std::str::from_utf8(take(len, &format!("records[{r}].id"))?)
            .map_err(|_| Error::schema(path, format!("records[{r}].id"), "not UTF-8"))?
            .to_string();
        let n = u32_at(take(4, &format!("records[{r}].frames"))?) as usize;
        let d = u32_at(take(4, &format!("records[{r}].dim"))?) as usize;
        let raw = take(n * d * 8, &format!("records[{r}].data"))?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema(path, format!("records[{r}].data"), "non-finite value"));
        }
        let t = Tensor::matrix(n, d, data)?;
        if out.insert(id.clone(), t).is_some() {
            return Err(Error::schema(path, format!("records[{r}].id"), format!("duplicate id {id}")));
        }
    }
    if pos != bytes.len() {
        return Err(Error::schema(path, "trailer", format!("{} unexpected bytes", bytes.len() - pos)));
    }
    Ok(out)
}

/// Joins annotations with their features. Every annotated video needs a
/// feature record with at least one frame and the corpus-wide dimension.
pub fn load_dense_dataset(annotations: &Path, features: &Path) -> Result<Vec<VideoRecord>> {
    let ann = AnnotationFile::load(annotations)?;
    let feats = read_features(features)?;
    join(&ann, &feats, annotations, features)
}

pub fn join(ann: &AnnotationFile, feats: &FeatureMap, ann_path: &Path, feat_path: &Path) -> Result<Vec<VideoRecord>> {
    let mut dim = None;
    let mut out = Vec::with_capacity(ann.videos.len());
    for (id, v) in &ann.videos {
        let f = feats
            .get(id)
            .ok_or_else(|| Error::schema(feat_path, format!("records.{id}"), "no features for annotated video"))?;
        if f.rows() == 0 {
            return Err(Error::schema(feat_path, format!("records.{id}"), "zero frames"));
        }
        if *dim.get_or_insert(f.cols()) != f.cols() {
            return Err(Error::schema(feat_path, format!("records.{id}"), format!("dimension {} differs from {}", f.cols(), dim.unwrap())));
        }
        let record = VideoRecord {
            video_id: id.clone(),
            duration: v.duration,
            events: v.timestamps.iter().map(|t| TimeInterval { start: t[0], end: t[1] }).collect(),
            sentences: v.sentences.clone(),
            features: f.clone(),
            mefm_allowed: true,
        };
        record.validate().map_err(|e| Error::schema(ann_path, format!("videos.{id}"), e.to_string()))?;
        out.push(record);
    }
    Ok(out)
}

// ---- clip-caption corpora ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipEntry {
    pub duration: f64,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipFile {
    pub format_version: u32,
    pub clips: BTreeMap<String, ClipEntry>,
}

/// Each clip becomes one record whose only event spans the whole clip. Such
/// records are excluded from event-modeling batches.
pub fn ingest_clip_corpus(clips: &Path, features: &Path) -> Result<Vec<VideoRecord>> {
    let file: ClipFile = read_json(clips)?;
    check_version(clips, file.format_version)?;
    let mut ann = AnnotationFile::new();
    for (id, c) in &file.clips {
        if c.caption.trim().is_empty() {
            return Err(Error::schema(clips, format!("clips.{id}.caption"), "empty caption"));
        }
        ann.videos.insert(
            id.clone(),
            AnnotationEntry { duration: c.duration, timestamps: vec![[0.0, c.duration]], sentences: vec![c.caption.clone()] },
        );
    }
    let feats = read_features(features)?;
    let mut records = join(&ann, &feats, clips, features)?;
    records.iter_mut().for_each(|r| r.mefm_allowed = false);
    Ok(records)
}

// ---- submissions ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmissionFile {
    format_version: u32,
    results: BTreeMap<String, Vec<evseq_core::submission::Prediction>>,
}

pub fn write_submission(path: &Path, sub: &Submission) -> Result<()> {
    write_json(path, &SubmissionFile { format_version: FORMAT_VERSION, results: sub.results.clone() })
}

pub fn read_submission(path: &Path) -> Result<Submission> {
    let file: SubmissionFile = read_json(path)?;
    check_version(path, file.format_version)?;
    let sub = Submission { results: file.results };
    sub.validate().map_err(|e| Error::schema(path, "results", e.to_string()))?;
    Ok(sub)
}

// ---- checkpoints ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn params_out(store: &ParamStore) -> Vec<ParamEntry> {
    store
        .iter()
        .map(|(name, t)| ParamEntry { name: name.to_string(), shape: t.shape().to_vec(), data: t.data().to_vec() })
        .collect()
}

fn params_in(path: &Path, entries: Vec<ParamEntry>) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for (i, p) in entries.into_iter().enumerate() {
        if store.id(&p.name).is_some() {
            return Err(Error::schema(path, format!("params[{i}].name"), format!("duplicate {}", p.name)));
        }
        let t = Tensor::new(p.shape, p.data).map_err(|e| Error::schema(path, format!("params[{i}]"), e.to_string()))?;
        store.add(&p.name, t);
    }
    Ok(store)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CheckpointKind {
    Model,
    Cpt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    kind: CheckpointKind,
    config: ModelConfig,
    vocab: Vocabulary,
    params: Vec<ParamEntry>,
}

/// Transformer weights together with the configuration and vocabulary
/// needed to rebuild and drive them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            kind: CheckpointKind::Model,
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: params_out(&self.params),
        };
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ModelFile = read_json(path)?;
        check_version(path, file.format_version)?;
        if file.kind != CheckpointKind::Model {
            return Err(Error::schema(path, "kind", "expected a model checkpoint"));
        }
        let mut vocab = file.vocab;
        vocab.reindex();
        Ok(Self { config: file.config, vocab, params: params_in(path, file.params)? })
    }

    pub fn model(&self) -> Result<evseq_core::model::Model> {
        Ok(evseq_core::model::Model::from_params(self.config.clone(), &self.params)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CptFile {
    format_version: u32,
    kind: CheckpointKind,
    config: CptConfig,
    input_dim: usize,
    concepts: ConceptVocab,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CptCheckpoint {
    pub config: CptConfig,
    pub input_dim: usize,
    pub concepts: ConceptVocab,
    pub params: ParamStore,
}

impl CptCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CptFile {
            format_version: FORMAT_VERSION,
            kind: CheckpointKind::Cpt,
            config: self.config.clone(),
            input_dim: self.input_dim,
            concepts: self.concepts.clone(),
            params: params_out(&self.params),
        };
        write_json(path, &file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CptFile = read_json(path)?;
        check_version(path, file.format_version)?;
        if file.kind != CheckpointKind::Cpt {
            return Err(Error::schema(path, "kind", "expected a concept-feature checkpoint"));
        }
        Ok(Self { config: file.config, input_dim: file.input_dim, concepts: file.concepts, params: params_in(path, file.params)? })
    }

    pub fn model(&self) -> Result<evseq_core::concept::CptModel> {
        Ok(evseq_core::concept::CptModel::from_params(self.config.clone(), self.input_dim, &self.params)?)
    }
}
