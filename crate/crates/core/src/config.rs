//! Project configuration (`chatscope.toml`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::convo::ChunkConfig;
use crate::imgproc::{RgbThreshold, SuppressPolarity, THRESHOLD_CANDIDATES};
use crate::ingest::CropRect;
use crate::llmfilter::LlmConfig;
use crate::modevents::{MaskLexicon, StrataConfig};
use crate::ocr::CascadeConfig;
use crate::sampler::SamplingConfig;
use crate::transcript::{HandleRule, DEFAULT_ROLE_TAGS};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "chatscope.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// A frame at least this similar to the last kept frame is dropped.
    pub ssim_threshold: f64,
    /// Video decoder template with `{input}` and `{outdir}` placeholders.
    pub extractor: String,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            ssim_threshold: 0.9,
            extractor: "ffmpeg -loglevel error -i {input} -vf fps=1 {outdir}/frame_%06d.png".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub crop: Option<CropRect>,
    pub threshold: Option<RgbThreshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariantsConfig {
    /// Per-channel values combined into the threshold search grid.
    pub threshold_candidates: Vec<u8>,
    /// Used for games with neither a searched nor a configured threshold.
    pub default_threshold: RgbThreshold,
    pub polarity: SuppressPolarity,
}

impl Default for VariantsConfig {
    fn default() -> Self {
        VariantsConfig {
            threshold_candidates: THRESHOLD_CANDIDATES.to_vec(),
            default_threshold: RgbThreshold::default(),
            polarity: SuppressPolarity::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    /// External program speaking the TSV contract.
    Command,
    /// Built-in bitmap-font recognizer.
    Glyph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcrConfig {
    pub engine: EngineKind,
    /// Template with an `{image}` placeholder; must print TSV on stdout.
    pub command: String,
    pub glyph_scale: u32,
    pub cascade: CascadeConfig,
}

impl Default for OcrConfig {
    fn default() -> Self {
        OcrConfig {
            engine: EngineKind::Command,
            command: "tesseract {image} stdout --psm 6 tsv".into(),
            glyph_scale: 2,
            cascade: CascadeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscriptConfig {
    /// Lines more similar than this to a recent kept line are dropped.
    pub text_dedup_threshold: f64,
    pub dedup_window: usize,
    /// Names more similar than this share a pseudonym.
    pub name_merge_threshold: f64,
    pub role_tags: Vec<String>,
    pub handle_rules: Vec<HandleRule>,
    /// Salt for internal speaker digests.
    pub salt: String,
}

impl Default for TranscriptConfig {
    fn default() -> Self {
        TranscriptConfig {
            text_dedup_threshold: 0.85,
            dedup_window: 8,
            name_merge_threshold: 0.9,
            role_tags: DEFAULT_ROLE_TAGS.iter().map(|s| s.to_string()).collect(),
            handle_rules: vec![HandleRule::default()],
            salt: "chatscope".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeventsConfig {
    pub lexicon: MaskLexicon,
    pub strata: StrataConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub tau: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { tau: 0.8 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectConfig {
    /// Category vocabulary file, relative to the project root; bundled when unset.
    pub vocabulary: Option<String>,
    pub ingest: IngestConfig,
    pub games: BTreeMap<String, GameConfig>,
    pub variants: VariantsConfig,
    pub ocr: OcrConfig,
    pub transcript: TranscriptConfig,
    pub modevents: ModeventsConfig,
    pub chunk: ChunkConfig,
    pub llm: LlmConfig,
    pub eval: EvalConfig,
    pub sampling: SamplingConfig,
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be within [0, 1], got {v}")))
    }
}

fn percent(name: &str, v: f64) -> Result<()> {
    if (0.0..=100.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be within [0, 100], got {v}")))
    }
}

impl ProjectConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: ProjectConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path`, or returns defaults when it does not exist.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(s) => Self::from_toml(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(ProjectConfig::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        unit("ingest.ssim_threshold", self.ingest.ssim_threshold)?;
        let c = &self.ocr.cascade;
        percent("ocr.cascade.frame_min_mean", c.frame_min_mean)?;
        percent("ocr.cascade.line_min_median", c.line_min_median)?;
        percent("ocr.cascade.line_min_mean", c.line_min_mean)?;
        unit("ocr.cascade.consistency_min", c.consistency_min)?;
        if self.ocr.engine == EngineKind::Command && !self.ocr.command.contains("{image}") {
            return Err(Error::Config("ocr.command needs an {image} placeholder".into()));
        }
        if self.ocr.glyph_scale == 0 {
            return Err(Error::Config("ocr.glyph_scale must be positive".into()));
        }
        unit("transcript.text_dedup_threshold", self.transcript.text_dedup_threshold)?;
        unit("transcript.name_merge_threshold", self.transcript.name_merge_threshold)?;
        unit("modevents.lexicon.purity_min", self.modevents.lexicon.purity_min)?;
        let s = &self.modevents.strata;
        unit("modevents.strata.high_above", s.high_above)?;
        unit("modevents.strata.low_at_or_below", s.low_at_or_below)?;
        if s.low_at_or_below > s.high_above {
            return Err(Error::Config("modevents.strata: low bound exceeds high bound".into()));
        }
        if self.chunk.size == 0 {
            return Err(Error::Config("chunk.size must be positive".into()));
        }
        unit("eval.tau", self.eval.tau)?;
        if self.variants.threshold_candidates.is_empty() {
            return Err(Error::Config("variants.threshold_candidates is empty".into()));
        }
        Ok(())
    }

    pub fn game(&self, name: &str) -> GameConfig {
        self.games.get(name).cloned().unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_reference_constants() {
        let c = ProjectConfig::default();
        assert_eq!(c.ingest.ssim_threshold, 0.9);
        assert_eq!(c.ocr.cascade.frame_min_mean, 95.0);
        assert_eq!(c.ocr.cascade.line_min_median, 74.0);
        assert_eq!(c.ocr.cascade.line_min_mean, 70.0);
        assert_eq!(c.transcript.text_dedup_threshold, 0.85);
        assert_eq!(c.transcript.name_merge_threshold, 0.9);
        assert_eq!(c.eval.tau, 0.8);
        assert_eq!(c.chunk.size, 50);
        assert_eq!(c.modevents.strata.min_masked_lines, 7);
        assert_eq!((c.sampling.category_window, c.sampling.evasion_window), (5, 3));
        assert_eq!(c.variants.threshold_candidates, vec![50, 100, 150, 200]);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ProjectConfig::default();
        c.games.insert(
            "AdoptMe".into(),
            GameConfig {
                crop: Some(CropRect { x: 1, y: 2, w: 3, h: 4 }),
                threshold: Some(RgbThreshold::new(100, 150, 200)),
            },
        );
        let back = ProjectConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(ProjectConfig::from_toml("").unwrap(), ProjectConfig::default());
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(ProjectConfig::from_toml("[eval]\ntau = 1.5").is_err());
        assert!(ProjectConfig::from_toml("[ocr]\ncommand = \"tesseract\"").is_err());
        assert!(ProjectConfig::from_toml("[ocr]\nengine = \"glyph\"\ncommand = \"x\"").is_ok());
    }
}
