//! Writes a self-contained demo project rendered by [`crate::synth`].
//!
//! Each session becomes a directory of full-size frames plus manually
//! "transcribed" ground truth, so every stage including `eval` has real
//! inputs. The project config selects the built-in glyph engine.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EngineKind, GameConfig, ProjectConfig, CONFIG_FILE};
use crate::convo::{chunk_sizes, ChunkConfig};
use crate::fsutil;
use crate::ingest::{AgeBand, Game, RecordingSession};
use crate::pipeline::LabelRecord;
use crate::synth::{self, SceneMix, SessionSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    pub sessions: usize,
    pub messages: usize,
    /// Chat-completion endpoint written into the project config.
    pub llm_url: String,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 7,
            sessions: 4,
            messages: 60,
            llm_url: "http://127.0.0.1:8089/v1/chat/completions".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub sessions: usize,
    pub frames: usize,
    pub messages: usize,
    pub offenders: usize,
}

/// Populates `root`, which must be empty or absent.
pub fn write_fixture(root: &Path, spec: &FixtureSpec) -> Result<FixtureSummary> {
    if root.exists() && root.read_dir().map_err(|e| Error::io(root, e))?.next().is_some() {
        return Err(Error::input(format!("{} is not empty", root.display())));
    }
    fsutil::create_dir_all(root)?;

    let mut config = ProjectConfig::default();
    config.ocr.engine = EngineKind::Glyph;
    config.llm.url = spec.llm_url.clone();
    config.llm.timeout_secs = 30;
    config.sampling.seed = spec.seed;
    for g in Game::KNOWN {
        config.games.insert(
            g.as_str().to_string(),
            GameConfig {
                crop: Some(synth::PANEL),
                threshold: None,
            },
        );
    }
    fsutil::write_bytes(&root.join(CONFIG_FILE), config.to_toml().as_bytes())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = synth::user_names(&mut rng, 14);
    let users = synth::chat_users(&mut rng, &names);
    let offenders: BTreeSet<String> = names.iter().take(2).cloned().collect();

    let mut labels = Vec::new();
    let mut frames = 0;
    for i in 0..spec.sessions {
        let sid = format!("s{:02}", i + 1);
        let game = Game::KNOWN[i % Game::KNOWN.len()].clone();
        let age_band = if i % 2 == 0 { AgeBand::NinePlus } else { AgeBand::ThirteenPlus };
        let mut cast: Vec<_> = users[2..].to_vec();
        cast.shuffle(&mut rng);
        cast.truncate(4);
        cast.extend(users[..2].iter().cloned());
        let msgs = synth::script(&mut rng, &cast, &offenders, spec.messages);
        let sspec = SessionSpec {
            session_id: sid.clone(),
            game: game.clone(),
            age_band,
            messages: spec.messages,
            mix: SceneMix::default(),
            duplicate_rate: 0.15,
        };
        let session = synth::render_session(&mut rng, &sspec, &cast, msgs);

        let rec_dir = root.join("recordings").join(&sid);
        let gt_dir = root.join("ground_truth/frames").join(&sid);
        fsutil::create_dir_all(&rec_dir)?;
        fsutil::create_dir_all(&gt_dir)?;
        for (seq, f) in session.frames.iter().enumerate() {
            let p = rec_dir.join(format!("frame_{seq:06}.png"));
            f.image
                .save_with_format(&p, image::ImageFormat::Png)
                .map_err(Error::Image)?;
            let mut txt = f.lines.join("\n");
            txt.push('\n');
            fsutil::write_bytes(&gt_dir.join(format!("frame_{seq:06}.txt")), txt.as_bytes())?;
        }
        frames += session.frames.len();

        let mut transcript: String = session.messages.iter().map(|m| m.line() + "\n").collect();
        if transcript.is_empty() {
            transcript.push('\n');
        }
        fsutil::write_bytes(&root.join("ground_truth").join(format!("{sid}.txt")), transcript.as_bytes())?;

        let mut start = 0;
        for (k, n) in chunk_sizes(session.messages.len(), &ChunkConfig::default()).into_iter().enumerate() {
            labels.push(LabelRecord {
                conv_id: format!("{sid}-c{:04}", k + 1),
                is_unsafe: session.messages[start..start + n].iter().any(|m| m.unsafe_cue),
            });
            start += n;
        }

        let manifest = RecordingSession {
            session_id: sid.clone(),
            game,
            age_band,
            source: format!("recordings/{sid}").into(),
            crop_rect: None,
            fps: Some(1.0),
        };
        fsutil::write_json(&root.join("sessions").join(format!("{sid}.json")), &manifest)?;
    }
    fsutil::write_jsonl(&root.join("ground_truth/labels.jsonl"), &labels)?;
    Ok(FixtureSummary {
        sessions: spec.sessions,
        frames,
        messages: spec.sessions * spec.messages,
        offenders: offenders.len(),
    })
}
