//! OCR adapter contract and the three-stage confidence cascade.
//!
//! Engines are external commands that take an image path and print
//! word-level TSV on stdout (a header row naming at least `line_num`,
//! `left`, `top`, `width`, `height`, `conf` and `text`; confidence on a
//! 0–100 scale, `-1` for layout rows). Tesseract's `tsv` output satisfies
//! the contract as-is.

use std::collections::BTreeMap;

use image::{GrayImage, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::command;
use crate::error::{Error, Result};
use crate::evalkit;
use crate::imgproc::{self, VariantSet, VariantTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrWord {
    pub text: String,
    /// 0–100, or -1 for layout tokens that carry no recognition.
    pub confidence: f64,
    pub line_num: u32,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_tag: Option<VariantTag>,
    pub words: Vec<OcrWord>,
    /// Mean over words with confidence >= 0; 0 when there are none.
    pub mean_conf: f64,
    pub median_conf: f64,
}

impl OcrResult {
    pub fn from_words(words: Vec<OcrWord>) -> Self {
        let mut confs: Vec<f64> = words
            .iter()
            .filter(|w| w.confidence >= 0.0)
            .map(|w| w.confidence)
            .collect();
        let (mean_conf, median_conf) = if confs.is_empty() {
            (0.0, 0.0)
        } else {
            confs.sort_by(f64::total_cmp);
            let n = confs.len();
            let median = if n % 2 == 1 {
                confs[n / 2]
            } else {
                (confs[n / 2 - 1] + confs[n / 2]) / 2.0
            };
            (confs.iter().sum::<f64>() / n as f64, median)
        };
        OcrResult {
            variant_tag: None,
            words,
            mean_conf,
            median_conf,
        }
    }

    /// Recognized words grouped into lines, in line order.
    pub fn lines(&self) -> Vec<String> {
        let mut lines: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
        for w in &self.words {
            if w.confidence >= 0.0 && !w.text.trim().is_empty() {
                lines.entry(w.line_num).or_default().push(w.text.trim());
            }
        }
        lines.into_values().map(|ws| ws.join(" ")).collect()
    }

    pub fn text(&self) -> String {
        self.lines().join("\n")
    }
}

/// Parses engine TSV. Columns are located by header name, so extra columns
/// are ignored; when `block_num`/`par_num` are present they are folded into
/// the line number so lines from different blocks stay apart.
pub fn parse_tsv(tsv: &str) -> Result<Vec<OcrWord>> {
    let malformed = |msg: String| Error::ExternalTool {
        tool: "ocr engine".into(),
        status: "malformed TSV".into(),
        output: msg,
    };
    let mut rows = tsv.lines().filter(|l| !l.trim().is_empty());
    let Some(header) = rows.next() else {
        return Ok(Vec::new());
    };
    let cols: Vec<&str> = header.split('\t').map(str::trim).collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let need = |name: &str| find(name).ok_or_else(|| malformed(format!("missing column `{name}`")));
    let (c_line, c_left, c_top, c_w, c_h, c_conf, c_text) = (
        need("line_num")?,
        need("left")?,
        need("top")?,
        need("width")?,
        need("height")?,
        need("conf")?,
        need("text")?,
    );
    let c_block = find("block_num");
    let c_par = find("par_num");

    let mut line_keys: BTreeMap<(u32, u32, u32), u32> = BTreeMap::new();
    let mut words = Vec::new();
    for (i, row) in rows.enumerate() {
        let f: Vec<&str> = row.split('\t').collect();
        let get_u32 = |c: usize| -> Result<u32> {
            f.get(c)
                .ok_or_else(|| malformed(format!("row {}: too few fields", i + 1)))?
                .trim()
                .parse::<u32>()
                .map_err(|e| malformed(format!("row {}: {e}", i + 1)))
        };
        let conf: f64 = f
            .get(c_conf)
            .ok_or_else(|| malformed(format!("row {}: missing conf", i + 1)))?
            .trim()
            .parse()
            .map_err(|e| malformed(format!("row {}: conf {e}", i + 1)))?;
        if conf != -1.0 && !(0.0..=100.0).contains(&conf) {
            return Err(malformed(format!("row {}: confidence {conf} out of range", i + 1)));
        }
        let line = get_u32(c_line)?;
        let block = c_block.map(get_u32).transpose()?.unwrap_or(0);
        let par = c_par.map(get_u32).transpose()?.unwrap_or(0);
        let bbox = BBox {
            left: get_u32(c_left)?,
            top: get_u32(c_top)?,
            width: get_u32(c_w)?,
            height: get_u32(c_h)?,
        };
        let next = line_keys.len() as u32;
        let key = if c_block.is_some() || c_par.is_some() {
            *line_keys.entry((block, par, line)).or_insert(next)
        } else {
            line
        };
        words.push(OcrWord {
            text: f.get(c_text).copied().unwrap_or("").to_string(),
            confidence: conf,
            line_num: key,
            bbox,
        });
    }
    Ok(words)
}

pub fn format_tsv(words: &[OcrWord]) -> String {
    let mut out = String::from("line_num\tleft\ttop\twidth\theight\tconf\ttext\n");
    for w in words {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            w.line_num, w.bbox.left, w.bbox.top, w.bbox.width, w.bbox.height, w.confidence, w.text
        ));
    }
    out
}

pub trait OcrEngine: Send + Sync {
    fn recognize(&self, image: &GrayImage) -> Result<OcrResult>;
}

/// Runs an external engine from a command template containing `{image}`.
#[derive(Debug, Clone)]
pub struct CommandEngine {
    template: String,
}

impl CommandEngine {
    pub fn new(template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if !template.contains("{image}") {
            return Err(Error::Config(format!("OCR command `{template}` lacks an {{image}} placeholder")));
        }
        command::render(&template, &[])?;
        Ok(CommandEngine { template })
    }
}

impl OcrEngine for CommandEngine {
    fn recognize(&self, image: &GrayImage) -> Result<OcrResult> {
        let file = tempfile::Builder::new()
            .prefix("ocr-")
            .suffix(".png")
            .tempfile()
            .map_err(|e| Error::io(std::env::temp_dir(), e))?;
        image.save_with_format(file.path(), image::ImageFormat::Png)?;
        let argv = command::render(&self.template, &[("image", &file.path().to_string_lossy())])?;
        let stdout = command::run("ocr engine", &argv)?;
        let words = parse_tsv(&String::from_utf8_lossy(&stdout))?;
        Ok(OcrResult::from_words(words))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    OriginalVariants,
    SuppressedVariants,
    LineSegmented,
    Rejected,
}

/// How the whole-frame confidence gate is applied to the six variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceGate {
    /// The most confident variant must clear the threshold.
    #[default]
    BestVariant,
    /// The average of the six variants' mean confidences must clear it.
    VariantAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageSet {
    pub original: bool,
    pub suppressed: bool,
    pub line_segmented: bool,
}

impl StageSet {
    pub const ALL: StageSet = StageSet {
        original: true,
        suppressed: true,
        line_segmented: true,
    };
    pub const ORIGINAL_ONLY: StageSet = StageSet {
        original: true,
        suppressed: false,
        line_segmented: false,
    };
    pub const SUPPRESSED_ONLY: StageSet = StageSet {
        original: false,
        suppressed: true,
        line_segmented: false,
    };
}

impl Default for StageSet {
    fn default() -> Self {
        StageSet::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    /// Whole-frame stages accept only when mean confidence exceeds this.
    pub frame_min_mean: f64,
    pub consistency_min: f64,
    pub line_min_median: f64,
    pub line_min_mean: f64,
    /// Minimum run of empty rows separating two text lines.
    pub line_gap: u32,
    pub gate: ConfidenceGate,
    pub stages: StageSet,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            frame_min_mean: 95.0,
            consistency_min: 0.8,
            line_min_median: 74.0,
            line_min_mean: 70.0,
            line_gap: 2,
            gate: ConfidenceGate::BestVariant,
            stages: StageSet::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDiagnostic {
    pub stage: Stage,
    pub best_variant: Option<VariantTag>,
    pub best_mean_conf: f64,
    pub gate_conf: f64,
    pub consistency: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineDiagnostic {
    pub top: u32,
    pub height: u32,
    pub median_conf: f64,
    pub mean_conf: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub stages: Vec<StageDiagnostic>,
    pub lines: Vec<LineDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeOutcome {
    pub session_id: String,
    pub seq: u64,
    pub stage: Stage,
    pub lines: Vec<String>,
    pub diagnostics: Diagnostics,
}

/// Mean pairwise similarity of the variants' full-text outputs.
pub fn consistency(results: &[OcrResult]) -> f64 {
    let texts: Vec<Vec<char>> = results.iter().map(|r| r.text().chars().collect()).collect();
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..texts.len() {
        for j in i + 1..texts.len() {
            total += evalkit::sim_chars(&texts[i], &texts[j]);
            n += 1;
        }
    }
    if n == 0 {
        1.0
    } else {
        total / n as f64
    }
}

fn recognize_all(engine: &dyn OcrEngine, set: &VariantSet) -> Result<Vec<OcrResult>> {
    set.variants
        .par_iter()
        .map(|v| {
            let mut r = engine.recognize(&v.image)?;
            r.variant_tag = Some(v.tag);
            Ok(r)
        })
        .collect()
}

fn most_confident(results: &[OcrResult]) -> Option<&OcrResult> {
    results
        .iter()
        .reduce(|best, r| if r.mean_conf > best.mean_conf { r } else { best })
}

/// Runs one whole-frame stage. Returns the accepted lines, if any.
fn frame_stage(
    stage: Stage,
    engine: &dyn OcrEngine,
    set: &VariantSet,
    cfg: &CascadeConfig,
    diag: &mut Diagnostics,
) -> Result<Option<Vec<String>>> {
    let results = recognize_all(engine, set)?;
    let best = most_confident(&results);
    let best_mean = best.map_or(0.0, |b| b.mean_conf);
    let gate_conf = match cfg.gate {
        ConfidenceGate::BestVariant => best_mean,
        ConfidenceGate::VariantAverage => {
            results.iter().map(|r| r.mean_conf).sum::<f64>() / results.len().max(1) as f64
        }
    };
    let cons = consistency(&results);
    let lines = best.map(|b| b.lines()).unwrap_or_default();
    let accepted = gate_conf > cfg.frame_min_mean && cons >= cfg.consistency_min && !lines.is_empty();
    diag.stages.push(StageDiagnostic {
        stage,
        best_variant: best.and_then(|b| b.variant_tag),
        best_mean_conf: best_mean,
        gate_conf,
        consistency: cons,
        accepted,
    });
    Ok(accepted.then_some(lines))
}

/// Row bands of a binarized image (ink = dark) separated by at least
/// `min_gap` empty rows. Returns `(top, height)` pairs.
pub fn segment_lines(binary: &GrayImage, min_gap: u32) -> Vec<(u32, u32)> {
    let (w, h) = binary.dimensions();
    let ink: Vec<bool> = (0..h)
        .map(|y| (0..w).any(|x| binary.get_pixel(x, y)[0] < 128))
        .collect();
    let mut bands: Vec<(u32, u32)> = Vec::new();
    let mut y = 0;
    while y < h {
        if !ink[y as usize] {
            y += 1;
            continue;
        }
        let top = y;
        let mut last_ink = y;
        let mut gap = 0;
        y += 1;
        while y < h {
            if ink[y as usize] {
                last_ink = y;
                gap = 0;
            } else {
                gap += 1;
                if gap >= min_gap.max(1) {
                    break;
                }
            }
            y += 1;
        }
        bands.push((top, last_ink - top + 1));
    }
    bands
}

/// Minimum band height considered a text line rather than speckle.
const MIN_LINE_HEIGHT: u32 = 4;
const LINE_PAD: u32 = 2;

fn line_stage(
    engine: &dyn OcrEngine,
    original: &RgbImage,
    suppressed: &RgbImage,
    cfg: &CascadeConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<String>> {
    let (w, h) = original.dimensions();
    let bands = segment_lines(&imgproc::grayscale(suppressed), cfg.line_gap);
    let mut accepted = Vec::new();
    for (top, height) in bands.into_iter().filter(|&(_, bh)| bh >= MIN_LINE_HEIGHT) {
        let y0 = top.saturating_sub(LINE_PAD);
        let y1 = (top + height + LINE_PAD).min(h);
        let rect = |img: &RgbImage| image::imageops::crop_imm(img, 0, y0, w, y1 - y0).to_image();
        let mut variants = imgproc::make_variants(&rect(original)).variants;
        variants.extend(imgproc::make_variants(&rect(suppressed)).variants);
        let results: Vec<OcrResult> = variants
            .par_iter()
            .map(|v| {
                let mut r = engine.recognize(&v.image)?;
                r.variant_tag = Some(v.tag);
                Ok(r)
            })
            .collect::<Result<_>>()?;
        let Some(best) = most_confident(&results) else { continue };
        let text = best.lines().join(" ");
        let ok = !text.is_empty()
            && best.median_conf >= cfg.line_min_median
            && best.mean_conf >= cfg.line_min_mean;
        diag.lines.push(LineDiagnostic {
            top,
            height,
            median_conf: best.median_conf,
            mean_conf: best.mean_conf,
            accepted: ok,
        });
        if ok {
            accepted.push(text);
        }
    }
    Ok(accepted)
}

/// Runs the cascade on one frame. Each stage is consulted only when every
/// earlier enabled stage rejected, and accepted text always comes from a
/// single stage.
pub fn cascade(
    session_id: &str,
    seq: u64,
    original: &RgbImage,
    variants: &VariantSet,
    engine: &dyn OcrEngine,
    cfg: &CascadeConfig,
) -> Result<CascadeOutcome> {
    let mut diag = Diagnostics::default();
    let done = |stage, lines, diag| CascadeOutcome {
        session_id: session_id.to_string(),
        seq,
        stage,
        lines,
        diagnostics: diag,
    };

    if cfg.stages.original {
        if let Some(lines) = frame_stage(Stage::OriginalVariants, engine, variants, cfg, &mut diag)
            .map_err(|e| e.in_stage("ocr stage 1 (original variants)"))?
        {
            return Ok(done(Stage::OriginalVariants, lines, diag));
        }
    }
    let Some(suppressed) = variants.suppressed_origin.as_ref() else {
        return Ok(done(Stage::Rejected, Vec::new(), diag));
    };
    if cfg.stages.suppressed {
        let set = imgproc::make_variants(suppressed);
        if let Some(lines) = frame_stage(Stage::SuppressedVariants, engine, &set, cfg, &mut diag)
            .map_err(|e| e.in_stage("ocr stage 2 (suppressed variants)"))?
        {
            return Ok(done(Stage::SuppressedVariants, lines, diag));
        }
    }
    if cfg.stages.line_segmented {
        let lines = line_stage(engine, original, suppressed, cfg, &mut diag)
            .map_err(|e| e.in_stage("ocr stage 3 (line segmentation)"))?;
        if !lines.is_empty() {
            return Ok(done(Stage::LineSegmented, lines, diag));
        }
    }
    Ok(done(Stage::Rejected, Vec::new(), diag))
}

/// A cropped frame, its suppression threshold and its true lines.
#[derive(Debug, Clone)]
pub struct BenchFrame {
    pub image: RgbImage,
    pub threshold: imgproc::RgbThreshold,
    pub lines: Vec<String>,
}

/// Recall/AMS of the full cascade and the two single-stage ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub framework: evalkit::EvalReport,
    pub suppressed_only: evalkit::EvalReport,
    pub original_only: evalkit::EvalReport,
}

pub fn evaluate_stages(
    frames: &[BenchFrame],
    engine: &dyn OcrEngine,
    cfg: &CascadeConfig,
    stages: StageSet,
    tau: f64,
) -> Result<evalkit::EvalReport> {
    let cfg = CascadeConfig { stages, ..cfg.clone() };
    let reports = frames
        .par_iter()
        .map(|f| {
            let mut set = imgproc::make_variants(&f.image);
            set.suppressed_origin = Some(imgproc::suppress_background(&f.image, f.threshold));
            let out = cascade("bench", 0, &f.image, &set, engine, &cfg)?;
            evalkit::report(&f.lines, &out.lines, tau)
        })
        .collect::<Result<Vec<_>>>()?;
    evalkit::merge_reports(&reports)
}

pub fn ablation(frames: &[BenchFrame], engine: &dyn OcrEngine, cfg: &CascadeConfig, tau: f64) -> Result<AblationReport> {
    Ok(AblationReport {
        framework: evaluate_stages(frames, engine, cfg, StageSet::ALL, tau)?,
        suppressed_only: evaluate_stages(frames, engine, cfg, StageSet::SUPPRESSED_ONLY, tau)?,
        original_only: evaluate_stages(frames, engine, cfg, StageSet::ORIGINAL_ONLY, tau)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb};

    fn word(text: &str, conf: f64, line: u32) -> OcrWord {
        OcrWord {
            text: text.into(),
            confidence: conf,
            line_num: line,
            bbox: BBox {
                left: 0,
                top: 0,
                width: 1,
                height: 1,
            },
        }
    }

    #[test]
    fn stats_arithmetic() {
        let r = OcrResult::from_words(vec![word("hi", 99.0, 1), word("yo", 97.0, 1)]);
        assert_eq!(r.mean_conf, 98.0);
        assert_eq!(r.median_conf, 98.0);
        assert_eq!(r.lines(), vec!["hi yo"]);
        let empty = OcrResult::from_words(Vec::new());
        assert_eq!(empty.mean_conf, 0.0);
    }

    #[test]
    fn sentinel_rows_excluded() {
        let tsv = "level\tpage_num\tblock_num\tpar_num\tline_num\tword_num\tleft\ttop\twidth\theight\tconf\ttext\n\
                   1\t1\t0\t0\t0\t0\t0\t0\t100\t40\t-1\t\n\
                   5\t1\t1\t1\t1\t1\t2\t2\t10\t10\t90\thello\n\
                   5\t1\t1\t1\t1\t2\t14\t2\t10\t10\t80\tthere\n\
                   5\t1\t2\t1\t1\t1\t2\t20\t10\t10\t70\tbye\n";
        let words = parse_tsv(tsv).unwrap();
        let r = OcrResult::from_words(words);
        assert_eq!(r.mean_conf, 80.0);
        assert_eq!(r.median_conf, 80.0);
        assert_eq!(r.lines(), vec!["hello there", "bye"]);
    }

    #[test]
    fn malformed_tsv() {
        assert!(matches!(parse_tsv("a\tb\n1\t2\n"), Err(Error::ExternalTool { .. })));
        let bad_conf = "line_num\tleft\ttop\twidth\theight\tconf\ttext\n1\t0\t0\t1\t1\t130\tx\n";
        assert!(parse_tsv(bad_conf).is_err());
        let body_less = "line_num\tleft\ttop\twidth\theight\tconf\ttext\n";
        assert!(parse_tsv(body_less).unwrap().is_empty());
        assert!(parse_tsv("").unwrap().is_empty());
    }

    #[test]
    fn tsv_roundtrip() {
        let words = vec![word("a", 99.5, 0), word("b", -1.0, 1)];
        let back = parse_tsv(&format_tsv(&words)).unwrap();
        assert_eq!(back, words);
    }

    #[test]
    fn segments_rows() {
        let img = GrayImage::from_fn(10, 20, |_, y| {
            if (2..5).contains(&y) || y == 6 || (10..14).contains(&y) {
                Luma([0])
            } else {
                Luma([255])
            }
        });
        // row 5 is a one-row gap, too small to split
        assert_eq!(segment_lines(&img, 2), vec![(2, 5), (10, 4)]);
    }

    #[test]
    fn command_engine_requires_placeholder() {
        assert!(CommandEngine::new("tesseract stdout tsv").is_err());
        assert!(CommandEngine::new("tesseract {image} stdout tsv").is_ok());
    }

    /// Answers by image geometry: 40x30 is an original-frame variant,
    /// 41x30 a suppressed-frame variant and anything shorter a line crop.
    struct StubEngine {
        original: Vec<f64>,
        suppressed: Vec<f64>,
        line: Vec<f64>,
    }

    impl StubEngine {
        fn result(confs: &[f64], text: &str) -> OcrResult {
            OcrResult::from_words(
                confs
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| word(&format!("{text}{i}"), c, 0))
                    .collect(),
            )
        }
    }

    impl OcrEngine for StubEngine {
        fn recognize(&self, image: &GrayImage) -> Result<OcrResult> {
            Ok(match image.dimensions() {
                (40, 30) => Self::result(&self.original, "orig"),
                (41, 30) => Self::result(&self.suppressed, "supp"),
                _ => Self::result(&self.line, "line"),
            })
        }
    }

    fn run_stub(engine: &StubEngine) -> CascadeOutcome {
        let original = RgbImage::from_pixel(40, 30, Rgb([90, 90, 90]));
        let suppressed = RgbImage::from_fn(41, 30, |_, y| {
            if (10..16).contains(&y) {
                Rgb([0, 0, 0])
            } else {
                Rgb([255, 255, 255])
            }
        });
        let mut set = imgproc::make_variants(&original);
        set.suppressed_origin = Some(suppressed);
        cascade("s", 0, &original, &set, engine, &CascadeConfig::default()).unwrap()
    }

    #[test]
    fn confident_agreeing_originals_stop_at_stage_one() {
        let out = run_stub(&StubEngine {
            original: vec![99.0, 99.0],
            suppressed: vec![99.0],
            line: vec![99.0],
        });
        assert_eq!(out.stage, Stage::OriginalVariants);
        assert_eq!(out.lines, vec!["orig0 orig1"]);
        assert_eq!(out.diagnostics.stages.len(), 1);
    }

    #[test]
    fn weak_originals_fall_through_to_suppressed() {
        let out = run_stub(&StubEngine {
            original: vec![60.0],
            suppressed: vec![99.0],
            line: vec![99.0],
        });
        assert_eq!(out.stage, Stage::SuppressedVariants);
        assert_eq!(out.lines, vec!["supp0"]);
        assert!(!out.diagnostics.stages[0].accepted);
    }

    #[test]
    fn line_regions_rescue_weak_frames() {
        let out = run_stub(&StubEngine {
            original: vec![60.0],
            suppressed: vec![60.0],
            line: vec![65.0, 80.0, 80.0],
        });
        assert_eq!(out.stage, Stage::LineSegmented);
        assert_eq!(out.lines, vec!["line0 line1 line2"]);
        let d = &out.diagnostics.lines;
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].median_conf, d[0].mean_conf), (80.0, 75.0));
    }

    #[test]
    fn everything_weak_is_rejected() {
        let out = run_stub(&StubEngine {
            original: vec![60.0],
            suppressed: vec![60.0],
            line: vec![50.0],
        });
        assert_eq!(out.stage, Stage::Rejected);
        assert!(out.lines.is_empty());
    }

    proptest::proptest! {
        #[test]
        fn accepted_text_comes_from_first_passing_stage(
            o in 0.0f64..100.0,
            s in 0.0f64..100.0,
            l in proptest::collection::vec(0.0f64..100.0, 1..5),
        ) {
            let out = run_stub(&StubEngine { original: vec![o], suppressed: vec![s], line: l.clone() });
            let line = OcrResult::from_words(l.iter().map(|&c| word("x", c, 0)).collect());
            let expected = if o > 95.0 {
                Stage::OriginalVariants
            } else if s > 95.0 {
                Stage::SuppressedVariants
            } else if line.median_conf >= 74.0 && line.mean_conf >= 70.0 {
                Stage::LineSegmented
            } else {
                Stage::Rejected
            };
            proptest::prop_assert_eq!(out.stage, expected);
            let prefix = match expected {
                Stage::OriginalVariants => "orig",
                Stage::SuppressedVariants => "supp",
                Stage::LineSegmented => "line",
                Stage::Rejected => "",
            };
            proptest::prop_assert!(out.lines.iter().all(|t| t.split(' ').all(|w| w.starts_with(prefix))));
        }
    }

    #[test]
    fn command_engine_propagates_failures() {
        let engine = CommandEngine::new("sh -c 'exit 2' {image}").unwrap();
        let img = GrayImage::from_pixel(2, 2, Luma([0]));
        assert!(matches!(engine.recognize(&img), Err(Error::ExternalTool { .. })));
        let _ = Rgb([0u8, 0, 0]);
    }
}
