//! Project layout and the stage runner.
//!
//! A project is a directory holding `chatscope.toml`, `sessions/*.json` and
//! the outputs of each stage. Every stage writes a `run_manifest.json` into
//! its output directory with digests of its inputs, the configuration and
//! every file it produced. Manifests carry no timestamps, so two runs over
//! the same inputs produce identical manifests.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::config::{EngineKind, ProjectConfig, CONFIG_FILE};
use crate::convo::{self, CategoryVocabulary, Conversation, Label};
use crate::evalkit::{self, EvalReport};
use crate::fsutil::{self, sha256_file, sha256_hex};
use crate::glyph::{self, GlyphEngine};
use crate::imgproc::{self, GameThreshold, GroundTruthFrame, RgbThreshold, VariantSet, VariantTag};
use crate::ingest::{self, RecordingSession};
use crate::llmfilter::{self, Binary, ClassifierVerdict, LlmClient};
use crate::modevents::{self, SpanDetector, SpanRecord, Stratum, UserProfile};
use crate::ocr::{self, CascadeOutcome, CommandEngine, OcrEngine};
use crate::review::{Pools, POOLS_FILE};
use crate::sampler::EVASION_TRACK;
use crate::transcript::{self, ChatLine, MappingEntry, PiiRedactor, PseudonymRegistry, RawLine};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageName {
    Ingest,
    Variants,
    Ocr,
    Transcribe,
    Anonymize,
    Modevents,
    Chunk,
    Classify,
    Eval,
    Sample,
}

impl StageName {
    pub const ALL: [StageName; 10] = [
        StageName::Ingest,
        StageName::Variants,
        StageName::Ocr,
        StageName::Transcribe,
        StageName::Anonymize,
        StageName::Modevents,
        StageName::Chunk,
        StageName::Classify,
        StageName::Eval,
        StageName::Sample,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Variants => "variants",
            StageName::Ocr => "ocr",
            StageName::Transcribe => "transcribe",
            StageName::Anonymize => "anonymize",
            StageName::Modevents => "modevents",
            StageName::Chunk => "chunk",
            StageName::Classify => "classify",
            StageName::Eval => "eval",
            StageName::Sample => "sample",
        }
    }

    pub fn prerequisites(self) -> &'static [StageName] {
        use StageName::*;
        match self {
            Ingest => &[],
            Variants => &[Ingest],
            Ocr => &[Variants],
            Transcribe => &[Ocr],
            Anonymize => &[Transcribe],
            Modevents => &[Anonymize],
            Chunk => &[Modevents, Anonymize],
            Classify => &[Chunk],
            Eval => &[Ocr],
            Sample => &[Classify, Modevents],
        }
    }

    /// Directory, relative to the project root, holding the stage's manifest.
    pub fn dir(self) -> &'static str {
        match self {
            StageName::Ingest => "frames",
            StageName::Variants => "variants",
            StageName::Ocr => "ocr",
            StageName::Transcribe => "private/transcripts",
            StageName::Anonymize => "corpus",
            StageName::Modevents => "modevents",
            StageName::Chunk => "conversations",
            StageName::Classify => "verdicts",
            StageName::Eval => "eval",
            StageName::Sample => "annotations",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: StageName,
    pub inputs_digest: String,
    pub config_digest: String,
    /// Project-relative path to SHA-256 of every file the stage wrote.
    pub outputs: BTreeMap<String, String>,
}

/// Per-invocation switches that are not part of the project config.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageOptions {
    /// Run the suppression-threshold search during `variants`.
    pub search_thresholds: bool,
}

/// Body of a remote stage run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageRequest {
    #[serde(flatten)]
    pub options: StageOptions,
    /// Overrides `sampling.seed` for this run.
    pub seed: Option<u64>,
}

/// One frame kept by ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub session_id: String,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_offset_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    Searched,
    Configured,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub threshold: RgbThreshold,
    pub source: ThresholdSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<GameThreshold>,
}

/// Conversation-level truth for classifier evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub conv_id: String,
    #[serde(rename = "unsafe")]
    pub is_unsafe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrEvaluation {
    pub frames: usize,
    pub stage_counts: BTreeMap<String, usize>,
    pub report: EvalReport,
    pub ablation: ocr::AblationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEvaluation {
    pub sessions: BTreeMap<String, EvalReport>,
    pub pooled: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEvaluation {
    pub metrics: llmfilter::Metrics,
    pub unparseable: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeventsSummary {
    pub users: usize,
    pub masked_lines: u64,
    pub strata: BTreeMap<String, usize>,
    /// Share of masked lines held by the top tenth of ranked users.
    pub top_decile_share: f64,
}

pub struct Project {
    root: PathBuf,
    config: ProjectConfig,
    pool: rayon::ThreadPool,
}

fn relpath(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn frame_file(seq: u64) -> String {
    format!("frame_{seq:06}.png")
}

fn open_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path).map_err(|e| map_image_err(path, e))?.to_luma8())
}

fn open_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| map_image_err(path, e))?.to_rgb8())
}

fn map_image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    }
}

fn save_png<P>(path: &Path, img: &image::ImageBuffer<P, Vec<u8>>) -> Result<()>
where
    P: image::PixelWithColorType<Subpixel = u8>,
{
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| map_image_err(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fsutil::read_to_string(path)?
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Runs a future to completion on a private runtime in its own thread, so
/// callers may be inside or outside an async context.
fn block_on<M, F>(make: M) -> Result<F::Output>
where
    M: FnOnce() -> F + Send,
    F: std::future::Future,
    F::Output: Send,
{
    std::thread::scope(|s| {
        s.spawn(|| {
            let rt = tokio::runtime::Builder::new_current_thread()
                .enable_all()
                .build()
                .map_err(|e| Error::Transport(e.to_string()))?;
            Ok(rt.block_on(make()))
        })
        .join()
        .map_err(|_| Error::Transport("classifier runtime panicked".into()))?
    })
}

pub fn build_engine(cfg: &crate::config::OcrConfig) -> Result<Box<dyn OcrEngine>> {
    Ok(match cfg.engine {
        EngineKind::Glyph => Box::new(GlyphEngine::new(glyph::Metrics::new(cfg.glyph_scale))),
        EngineKind::Command => Box::new(CommandEngine::new(cfg.command.clone())?),
    })
}

impl Project {
    /// Opens a project, reading `chatscope.toml` from the root unless
    /// `config_path` points elsewhere. `jobs == 0` uses every core.
    pub fn open(root: &Path, config_path: Option<&Path>, jobs: usize) -> Result<Self> {
        let path = config_path.map(Path::to_path_buf).unwrap_or_else(|| root.join(CONFIG_FILE));
        let config = ProjectConfig::load(&path)?;
        Self::with_config(root, config, jobs)
    }

    pub fn with_config(root: &Path, config: ProjectConfig, jobs: usize) -> Result<Self> {
        config.validate()?;
        if !root.is_dir() {
            return Err(Error::input(format!("project root {} is not a directory", root.display())));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Project {
            root: root.to_path_buf(),
            config,
            pool,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ProjectConfig {
        &self.config
    }

    pub fn config_mut(&mut self) -> &mut ProjectConfig {
        &mut self.config
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn config_digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.config).expect("config serializes"))
    }

    pub fn manifest_path(&self, stage: StageName) -> PathBuf {
        self.path(stage.dir()).join(MANIFEST_FILE)
    }

    pub fn manifest(&self, stage: StageName) -> Result<Option<RunManifest>> {
        let p = self.manifest_path(stage);
        if p.exists() {
            fsutil::read_json(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn require_stage(&self, stage: StageName) -> Result<RunManifest> {
        self.manifest(stage)?.ok_or_else(|| Error::MissingStage {
            stage: stage.as_str().to_string(),
            path: self.manifest_path(stage),
        })
    }

    /// Fails with `MissingStage` naming the first absent prerequisite.
    pub fn check_prerequisites(&self, stage: StageName) -> Result<Vec<RunManifest>> {
        stage.prerequisites().iter().map(|&p| self.require_stage(p)).collect()
    }

    pub fn sessions(&self) -> Result<Vec<RecordingSession>> {
        let dir = self.path("sessions");
        if !dir.is_dir() {
            return Err(Error::input(format!("no session manifests under {}", dir.display())));
        }
        let mut sessions = Vec::new();
        for p in fsutil::walk_files(&dir)? {
            if p.extension().is_some_and(|e| e == "json") {
                sessions.push(fsutil::read_json::<RecordingSession>(&p)?);
            }
        }
        sessions.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        if let Some(w) = sessions.windows(2).find(|w| w[0].session_id == w[1].session_id) {
            return Err(Error::input(format!("duplicate session id {}", w[0].session_id)));
        }
        if sessions.is_empty() {
            return Err(Error::input("project has no sessions"));
        }
        Ok(sessions)
    }

    /// Runs one stage and writes its manifest.
    pub fn run(&self, stage: StageName, opts: StageOptions) -> Result<RunManifest> {
        let prereqs = self.check_prerequisites(stage)?;
        let mut inputs: BTreeMap<String, String> = BTreeMap::new();
        for m in &prereqs {
            inputs.extend(m.outputs.clone());
        }
        info!(stage = %stage, "running stage");
        let outputs = self.pool.install(|| match stage {
            StageName::Ingest => self.ingest(&mut inputs),
            StageName::Variants => self.variants(&mut inputs, opts),
            StageName::Ocr => self.ocr(),
            StageName::Transcribe => self.transcribe(),
            StageName::Anonymize => self.anonymize(),
            StageName::Modevents => self.modevents(&mut inputs),
            StageName::Chunk => self.chunk(),
            StageName::Classify => self.classify(),
            StageName::Eval => self.eval(&mut inputs),
            StageName::Sample => self.sample(),
        })?;
        let mut digests = BTreeMap::new();
        for p in outputs {
            digests.insert(relpath(&self.root, &p), sha256_file(&p)?);
        }
        let manifest = RunManifest {
            stage,
            inputs_digest: sha256_hex(&serde_json::to_vec(&inputs)?),
            config_digest: self.config_digest(),
            outputs: digests,
        };
        fsutil::write_json(&self.manifest_path(stage), &manifest)?;
        info!(stage = %stage, files = manifest.outputs.len(), "stage complete");
        Ok(manifest)
    }

    /// Runs every stage in dependency order.
    pub fn run_all(&self, opts: StageOptions) -> Result<Vec<RunManifest>> {
        StageName::ALL.iter().map(|&s| self.run(s, opts)).collect()
    }

    fn add_input(&self, inputs: &mut BTreeMap<String, String>, path: &Path) -> Result<()> {
        inputs.insert(relpath(&self.root, path), sha256_file(path)?);
        Ok(())
    }

    fn add_session_inputs(&self, inputs: &mut BTreeMap<String, String>) -> Result<()> {
        for p in fsutil::walk_files(&self.path("sessions"))? {
            self.add_input(inputs, &p)?;
        }
        Ok(())
    }

    fn frames_index(&self, sid: &str) -> Result<Vec<FrameRecord>> {
        fsutil::read_jsonl(&self.path("frames").join(sid).join("index.jsonl"))
    }

    fn ingest(&self, inputs: &mut BTreeMap<String, String>) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        self.add_session_inputs(inputs)?;
        for s in &sessions {
            let src = self.root.join(&s.source);
            if src.is_dir() {
                for f in ingest::list_frame_files(&src)? {
                    self.add_input(inputs, &f)?;
                }
            } else if src.exists() {
                self.add_input(inputs, &src)?;
            }
        }
        let out_dir = self.path("frames");
        fsutil::reset_dir(&out_dir)?;
        let per_session: Vec<Vec<PathBuf>> = sessions
            .par_iter()
            .map(|s| self.ingest_session(s, &out_dir))
            .collect::<Result<_>>()?;
        Ok(per_session.into_iter().flatten().collect())
    }

    fn ingest_session(&self, s: &RecordingSession, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let crop = s.crop_rect.or(self.config.game(s.game.as_str()).crop);
        let src = self.root.join(&s.source);
        let frames = ingest::extract_frames(s, &src, crop, &self.config.ingest.extractor)?;
        let total = frames.len();
        let dir = out_dir.join(&s.session_id);
        fsutil::create_dir_all(&dir)?;
        let mut outputs = Vec::new();
        let mut index = Vec::new();
        for frame in ingest::dedup_frames(frames, self.config.ingest.ssim_threshold) {
            let frame = frame?;
            let p = dir.join(frame_file(frame.seq));
            save_png(&p, &frame.image)?;
            outputs.push(p);
            index.push(FrameRecord {
                session_id: s.session_id.clone(),
                seq: frame.seq,
                wall_offset_ms: frame.wall_offset_ms,
            });
        }
        info!(session = %s.session_id, total, kept = index.len(), "ingested");
        let idx = dir.join("index.jsonl");
        fsutil::write_jsonl(&idx, &index)?;
        outputs.push(idx);
        Ok(outputs)
    }

    /// Ground-truth frames available for kept frames, in session order.
    fn ground_truth_frames(&self, sessions: &[RecordingSession]) -> Result<Vec<(String, u64, GroundTruthFrame)>> {
        let mut out = Vec::new();
        for s in sessions {
            let gt_dir = self.path("ground_truth/frames").join(&s.session_id);
            if !gt_dir.is_dir() {
                continue;
            }
            for rec in self.frames_index(&s.session_id)? {
                let txt = gt_dir.join(format!("frame_{:06}.txt", rec.seq));
                if !txt.exists() {
                    continue;
                }
                let image = open_rgb(&self.path("frames").join(&s.session_id).join(frame_file(rec.seq)))?;
                out.push((
                    s.session_id.clone(),
                    rec.seq,
                    GroundTruthFrame {
                        game: s.game.clone(),
                        image,
                        lines: read_lines(&txt)?,
                    },
                ));
            }
        }
        Ok(out)
    }

    fn variants(&self, inputs: &mut BTreeMap<String, String>, opts: StageOptions) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        let mut searched: BTreeMap<String, GameThreshold> = BTreeMap::new();
        if opts.search_thresholds {
            let gt = self.ground_truth_frames(&sessions)?;
            for (sid, seq, _) in &gt {
                self.add_input(inputs, &self.path("ground_truth/frames").join(sid).join(format!("frame_{seq:06}.txt")))?;
            }
            let frames: Vec<GroundTruthFrame> = gt.into_iter().map(|(_, _, f)| f).collect();
            let engine = build_engine(&self.config.ocr)?;
            let candidates = RgbThreshold::candidates_from(&self.config.variants.threshold_candidates);
            for (game, t) in imgproc::search_thresholds(&frames, engine.as_ref(), &candidates, self.config.eval.tau)? {
                info!(game = %game, threshold = ?t.best.threshold, recall = t.best.recall, "threshold selected");
                searched.insert(game.to_string(), t);
            }
        }
        let mut choices: BTreeMap<String, ThresholdChoice> = BTreeMap::new();
        for s in &sessions {
            let game = s.game.as_str().to_string();
            let choice = if let Some(t) = searched.get(&game) {
                ThresholdChoice {
                    threshold: t.best.threshold,
                    source: ThresholdSource::Searched,
                    search: Some(t.clone()),
                }
            } else if let Some(t) = self.config.game(&game).threshold {
                ThresholdChoice {
                    threshold: t,
                    source: ThresholdSource::Configured,
                    search: None,
                }
            } else {
                ThresholdChoice {
                    threshold: self.config.variants.default_threshold,
                    source: ThresholdSource::Default,
                    search: None,
                }
            };
            choices.insert(game, choice);
        }

        let out_dir = self.path("variants");
        fsutil::reset_dir(&out_dir)?;
        let thr_path = out_dir.join("thresholds.json");
        fsutil::write_json(&thr_path, &choices)?;
        let mut jobs = Vec::new();
        for s in &sessions {
            let thr = choices[s.game.as_str()].threshold;
            for rec in self.frames_index(&s.session_id)? {
                jobs.push((s.session_id.clone(), rec.seq, thr));
            }
        }
        let polarity = self.config.variants.polarity;
        let per_frame: Vec<Vec<PathBuf>> = jobs
            .par_iter()
            .map(|(sid, seq, thr)| {
                let img = open_rgb(&self.path("frames").join(sid).join(frame_file(*seq)))?;
                let dir = out_dir.join(sid).join(format!("{seq:06}"));
                fsutil::create_dir_all(&dir)?;
                let set = imgproc::make_variants(&img);
                let mut written = Vec::with_capacity(7);
                for v in &set.variants {
                    let p = dir.join(format!("{}.png", v.tag.file_stem()));
                    save_png(&p, &v.image)?;
                    written.push(p);
                }
                let p = dir.join("suppressed.png");
                save_png(&p, &imgproc::suppress_background_with(&img, *thr, polarity))?;
                written.push(p);
                Ok(written)
            })
            .collect::<Result<_>>()?;
        let mut outputs = vec![thr_path];
        outputs.extend(per_frame.into_iter().flatten());
        Ok(outputs)
    }

    fn load_variant_set(&self, sid: &str, seq: u64) -> Result<(RgbImage, VariantSet)> {
        let original = open_rgb(&self.path("frames").join(sid).join(frame_file(seq)))?;
        let dir = self.path("variants").join(sid).join(format!("{seq:06}"));
        let variants = VariantTag::ALL
            .iter()
            .map(|&tag| {
                Ok(imgproc::Variant {
                    tag,
                    image: open_gray(&dir.join(format!("{}.png", tag.file_stem())))?,
                })
            })
            .collect::<Result<_>>()?;
        let suppressed = open_rgb(&dir.join("suppressed.png"))?;
        Ok((
            original,
            VariantSet {
                variants,
                suppressed_origin: Some(suppressed),
            },
        ))
    }

    fn ocr(&self) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        let engine = build_engine(&self.config.ocr)?;
        let out_dir = self.path("ocr");
        fsutil::reset_dir(&out_dir)?;
        let mut outputs = Vec::new();
        for s in &sessions {
            let index = self.frames_index(&s.session_id)?;
            let outcomes: Vec<CascadeOutcome> = index
                .par_iter()
                .map(|rec| {
                    let (original, set) = self.load_variant_set(&s.session_id, rec.seq)?;
                    ocr::cascade(&s.session_id, rec.seq, &original, &set, engine.as_ref(), &self.config.ocr.cascade)
                })
                .collect::<Result<_>>()?;
            let rejected = outcomes.iter().filter(|o| o.stage == ocr::Stage::Rejected).count();
            info!(session = %s.session_id, frames = outcomes.len(), rejected, "ocr done");
            let p = out_dir.join(format!("{}.jsonl", s.session_id));
            fsutil::write_jsonl(&p, &outcomes)?;
            outputs.push(p);
        }
        Ok(outputs)
    }

    fn transcribe(&self) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        let cfg = &self.config.transcript;
        let tags: Vec<&str> = cfg.role_tags.iter().map(String::as_str).collect();
        fsutil::create_private_dir(&self.path("private"))?;
        let out_dir = self.path(StageName::Transcribe.dir());
        fsutil::reset_dir(&out_dir)?;
        let mut outputs = Vec::new();
        for s in &sessions {
            let outcomes: Vec<CascadeOutcome> =
                fsutil::read_jsonl(&self.path("ocr").join(format!("{}.jsonl", s.session_id)))?;
            let raw: Vec<(u64, String)> = outcomes
                .iter()
                .flat_map(|o| {
                    o.lines
                        .iter()
                        .map(|l| l.trim().to_string())
                        .filter(|l| !l.is_empty())
                        .map(move |l| (o.seq, l))
                })
                .collect();
            let kept = transcript::dedup_by(raw, |(_, l)| l.as_str(), cfg.text_dedup_threshold, cfg.dedup_window);
            let lines: Vec<RawLine> = kept
                .into_iter()
                .enumerate()
                .map(|(i, (frame_seq, raw))| {
                    let parsed = transcript::parse_line_with(&raw, &tags);
                    RawLine {
                        session: s.session_id.clone(),
                        seq: i as u64,
                        frame_seq,
                        raw,
                        speaker: parsed.speaker,
                        text: parsed.text,
                    }
                })
                .collect();
            let p = out_dir.join(format!("{}.jsonl", s.session_id));
            fsutil::write_jsonl(&p, &lines)?;
            outputs.push(p);
        }
        Ok(outputs)
    }

    fn transcript_lines(&self, sid: &str) -> Result<Vec<RawLine>> {
        fsutil::read_jsonl(&self.path(StageName::Transcribe.dir()).join(format!("{sid}.jsonl")))
    }

    fn anonymize(&self) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        let cfg = &self.config.transcript;
        let mapping_path = self.path("private/mapping.jsonl");
        let existing: Vec<MappingEntry> = fsutil::read_jsonl_or_empty(&mapping_path)?;
        let mut registry = PseudonymRegistry::replay(&existing, cfg.name_merge_threshold);

        let transcripts: Vec<(String, Vec<RawLine>)> = sessions
            .iter()
            .map(|s| Ok((s.session_id.clone(), self.transcript_lines(&s.session_id)?)))
            .collect::<Result<_>>()?;
        registry.register_all(
            transcripts
                .iter()
                .flat_map(|(_, lines)| lines.iter().filter_map(|l| l.speaker.as_deref())),
        );

        let out_dir = self.path("corpus");
        fsutil::reset_dir(&out_dir)?;
        let mut outputs = Vec::new();
        for (sid, lines) in transcripts {
            let mut redactor = PiiRedactor::new(&cfg.handle_rules);
            let chat: Vec<ChatLine> = lines
                .into_iter()
                .map(|l| transcript::anonymize_line(&mut registry, &mut redactor, l))
                .collect();
            let p = out_dir.join(format!("{sid}.jsonl"));
            fsutil::write_jsonl(&p, &chat)?;
            outputs.push(p);
        }
        fsutil::create_private_dir(&self.path("private"))?;
        fsutil::write_jsonl(&mapping_path, registry.entries())?;
        info!(pseudonyms = registry.len(), "anonymized");
        outputs.push(mapping_path);
        Ok(outputs)
    }

    fn corpus(&self, sessions: &[RecordingSession]) -> Result<Vec<ChatLine>> {
        let mut out = Vec::new();
        for s in sessions {
            out.extend(fsutil::read_jsonl::<ChatLine>(
                &self.path("corpus").join(format!("{}.jsonl", s.session_id)),
            )?);
        }
        Ok(out)
    }

    fn modevents(&self, inputs: &mut BTreeMap<String, String>) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        self.add_session_inputs(inputs)?;
        let mut lines = self.corpus(&sessions)?;
        let detector = SpanDetector::new(self.config.modevents.lexicon.clone())?;
        let spans = modevents::annotate(&mut lines, &detector);
        let games: HashMap<&str, String> = sessions
            .iter()
            .map(|s| (s.session_id.as_str(), s.game.as_str().to_string()))
            .collect();
        let game_of = |sid: &str| games.get(sid).cloned();
        let profiles = modevents::profile_users(&lines, &game_of, &self.config.modevents.strata);
        let ranked = modevents::rank_frequency(&profiles);

        let mut strata: BTreeMap<String, usize> = BTreeMap::new();
        for p in &profiles {
            *strata.entry(p.stratum.to_string()).or_default() += 1;
        }
        let summary = ModeventsSummary {
            users: profiles.len(),
            masked_lines: profiles.iter().map(|p| p.masked_lines).sum(),
            strata,
            top_decile_share: modevents::top_share(&ranked, 0.1),
        };

        let out_dir = self.path("modevents");
        fsutil::reset_dir(&out_dir)?;
        let files = [
            out_dir.join("spans.jsonl"),
            out_dir.join("profiles.jsonl"),
            out_dir.join("rank.jsonl"),
            out_dir.join("summary.json"),
        ];
        fsutil::write_jsonl(&files[0], &spans)?;
        fsutil::write_jsonl(&files[1], &profiles)?;
        fsutil::write_jsonl(&files[2], &ranked)?;
        fsutil::write_json(&files[3], &summary)?;
        Ok(files.to_vec())
    }

    fn chunk(&self) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        let spans: Vec<SpanRecord> = fsutil::read_jsonl(&self.path("modevents/spans.jsonl"))?;
        let mut by_line: HashMap<(String, u64), Vec<modevents::MaskedSpan>> = HashMap::new();
        for r in spans {
            by_line.entry((r.session, r.seq)).or_default().push(r.span);
        }
        let mut convs = Vec::new();
        for s in &sessions {
            let mut lines: Vec<ChatLine> =
                fsutil::read_jsonl(&self.path("corpus").join(format!("{}.jsonl", s.session_id)))?;
            for l in &mut lines {
                if let Some(v) = by_line.remove(&(l.session.clone(), l.seq)) {
                    l.masked_spans = v;
                }
            }
            convs.extend(convo::chunk_session(&s.session_id, &s.game, s.age_band, lines, &self.config.chunk));
        }
        let out_dir = self.path("conversations");
        fsutil::reset_dir(&out_dir)?;
        let p = out_dir.join("conversations.jsonl");
        fsutil::write_jsonl(&p, &convs)?;
        info!(conversations = convs.len(), "chunked");
        Ok(vec![p])
    }

    pub fn vocabulary(&self) -> Result<CategoryVocabulary> {
        match &self.config.vocabulary {
            Some(rel) => CategoryVocabulary::from_toml(&fsutil::read_to_string(&self.root.join(rel))?),
            None => Ok(CategoryVocabulary::default()),
        }
    }

    fn prompt_template(&self) -> Result<String> {
        match &self.config.llm.prompt_path {
            Some(rel) => fsutil::read_to_string(&self.root.join(rel)),
            None => Ok(llmfilter::PROMPT_TEMPLATE.to_string()),
        }
    }

    fn classify(&self) -> Result<Vec<PathBuf>> {
        let convs: Vec<Conversation> = fsutil::read_jsonl(&self.path("conversations/conversations.jsonl"))?;
        let vocab = self.vocabulary()?;
        let client = LlmClient::new(self.config.llm.clone(), self.prompt_template()?)?;
        let requests: Vec<(String, String)> = convs.iter().map(|c| (c.conv_id.clone(), c.render())).collect();
        let verdicts = block_on(|| client.classify_all(&requests))??;
        let labeled: Vec<Conversation> = convs
            .into_iter()
            .zip(&verdicts)
            .map(|(mut c, v)| {
                if let Some(label) = v.label {
                    c.label = Label::from(label);
                    c.explanation = v.reason.clone();
                    c.categories = vocab.categorize(&v.reason);
                }
                c
            })
            .collect();
        let failed = verdicts.iter().filter(|v| v.error.is_some()).count();
        if failed > 0 {
            warn!(failed, "conversations left unlabeled after malformed classifier output");
        }
        let out_dir = self.path("verdicts");
        fsutil::reset_dir(&out_dir)?;
        let files = [out_dir.join("verdicts.jsonl"), out_dir.join("labeled.jsonl")];
        fsutil::write_jsonl(&files[0], &verdicts)?;
        fsutil::write_jsonl(&files[1], &labeled)?;
        Ok(files.to_vec())
    }

    fn eval(&self, inputs: &mut BTreeMap<String, String>) -> Result<Vec<PathBuf>> {
        let sessions = self.sessions()?;
        let tau = self.config.eval.tau;
        let out_dir = self.path("eval");
        fsutil::reset_dir(&out_dir)?;
        let mut outputs = Vec::new();

        let gt = self.ground_truth_frames(&sessions)?;
        if !gt.is_empty() {
            let thresholds: BTreeMap<String, ThresholdChoice> =
                fsutil::read_json(&self.path("variants/thresholds.json"))?;
            let mut outcomes: HashMap<(String, u64), Vec<String>> = HashMap::new();
            let mut stage_counts: BTreeMap<String, usize> = BTreeMap::new();
            for s in &sessions {
                for o in fsutil::read_jsonl::<CascadeOutcome>(&self.path("ocr").join(format!("{}.jsonl", s.session_id)))? {
                    *stage_counts.entry(format!("{:?}", o.stage)).or_default() += 1;
                    outcomes.insert((o.session_id.clone(), o.seq), o.lines);
                }
            }
            let mut reports = Vec::new();
            let mut bench = Vec::new();
            for (sid, seq, f) in &gt {
                self.add_input(inputs, &self.path("ground_truth/frames").join(sid).join(format!("frame_{seq:06}.txt")))?;
                let got = outcomes.get(&(sid.clone(), *seq)).cloned().unwrap_or_default();
                reports.push(evalkit::report(&f.lines, &got, tau)?);
                let threshold = thresholds
                    .get(f.game.as_str())
                    .map(|c| c.threshold)
                    .unwrap_or(self.config.variants.default_threshold);
                bench.push(ocr::BenchFrame {
                    image: f.image.clone(),
                    threshold,
                    lines: f.lines.clone(),
                });
            }
            let engine = build_engine(&self.config.ocr)?;
            let ev = OcrEvaluation {
                frames: gt.len(),
                stage_counts,
                report: evalkit::merge_reports(&reports)?,
                ablation: ocr::ablation(&bench, engine.as_ref(), &self.config.ocr.cascade, tau)?,
            };
            info!(recall = ev.report.recall, ams = ev.report.ams, "ocr evaluated");
            let p = out_dir.join("ocr.json");
            fsutil::write_json(&p, &ev)?;
            outputs.push(p);
        }

        if self.manifest(StageName::Transcribe)?.is_some() {
            let mut per = BTreeMap::new();
            let mut reports = Vec::new();
            for s in &sessions {
                let gt_path = self.path("ground_truth").join(format!("{}.txt", s.session_id));
                if !gt_path.exists() {
                    continue;
                }
                self.add_input(inputs, &gt_path)?;
                let truth = read_lines(&gt_path)?;
                let got: Vec<String> = self.transcript_lines(&s.session_id)?.into_iter().map(|l| l.raw).collect();
                let r = evalkit::report(&truth, &got, tau)?;
                reports.push(r.clone());
                per.insert(s.session_id.clone(), r);
            }
            if !reports.is_empty() {
                let ev = TranscriptEvaluation {
                    sessions: per,
                    pooled: evalkit::merge_reports(&reports)?,
                };
                let p = out_dir.join("transcript.json");
                fsutil::write_json(&p, &ev)?;
                outputs.push(p);
            }
        }

        let labels_path = self.path("ground_truth/labels.jsonl");
        if let (Some(m), true) = (self.manifest(StageName::Classify)?, labels_path.exists()) {
            inputs.extend(m.outputs);
            self.add_input(inputs, &labels_path)?;
            let labels: Vec<LabelRecord> = fsutil::read_jsonl(&labels_path)?;
            let verdicts: HashMap<String, ClassifierVerdict> = fsutil::read_jsonl::<ClassifierVerdict>(
                &self.path("verdicts/verdicts.jsonl"),
            )?
            .into_iter()
            .map(|v| (v.conv_id.clone(), v))
            .collect();
            let mut pairs = Vec::new();
            let (mut unparseable, mut unlabeled) = (0, 0);
            for l in &labels {
                let truth = if l.is_unsafe { Binary::Unsafe } else { Binary::Safe };
                match verdicts.get(&l.conv_id).map(|v| v.binary) {
                    Some(Some(pred)) => pairs.push((pred, truth)),
                    Some(None) => unparseable += 1,
                    None => unlabeled += 1,
                }
            }
            if !pairs.is_empty() {
                let ev = ClassifierEvaluation {
                    metrics: llmfilter::score(&pairs)?,
                    unparseable,
                    unlabeled,
                };
                let p = out_dir.join("classifier.json");
                fsutil::write_json(&p, &ev)?;
                outputs.push(p);
            }
        }
        if outputs.is_empty() {
            warn!("no ground truth found; eval wrote nothing");
        }
        Ok(outputs)
    }

    fn sample(&self) -> Result<Vec<PathBuf>> {
        let labeled: Vec<Conversation> = fsutil::read_jsonl(&self.path("verdicts/labeled.jsonl"))?;
        let profiles: Vec<UserProfile> = fsutil::read_jsonl(&self.path("modevents/profiles.jsonl"))?;
        let vocab = self.vocabulary()?;
        let mut tracks: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
        for category in vocab.categories.keys() {
            let mut pools: BTreeMap<String, Vec<String>> = BTreeMap::new();
            for c in labeled
                .iter()
                .filter(|c| c.label == Label::AbsolutelyUnsafe && c.categories.contains(category))
            {
                pools
                    .entry(format!("{}/{}", c.game, c.age_band))
                    .or_default()
                    .push(c.conv_id.clone());
            }
            if !pools.is_empty() {
                tracks.insert(category.clone(), pools);
            }
        }
        let mut evasion: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for p in profiles.iter().filter(|p| p.stratum != Stratum::Unassigned) {
            let game = p.game.as_deref().unwrap_or(transcript::UNKNOWN);
            evasion
                .entry(format!("{game}/{}", p.stratum))
                .or_default()
                .push(p.pseudonym.clone());
        }
        if !evasion.is_empty() {
            tracks.insert(EVASION_TRACK.to_string(), evasion);
        }
        let sizes: BTreeSet<(String, usize)> = tracks
            .iter()
            .map(|(t, p)| (t.clone(), p.values().map(Vec::len).sum()))
            .collect();
        info!(?sizes, "sampling pools built");
        let pools = Pools {
            sampling: self.config.sampling,
            tracks,
        };
        let dir = self.path("annotations");
        fsutil::create_dir_all(&dir)?;
        let p = dir.join(POOLS_FILE);
        fsutil::write_json(&p, &pools)?;
        Ok(vec![p])
    }
}
