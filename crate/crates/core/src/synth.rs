//! Seeded synthetic fixtures: rendered chat recordings with known text,
//! masked-span and anonymization corpora, and skewed user populations.

use std::collections::{BTreeMap, BTreeSet};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evalkit;
use crate::glyph::{self, Metrics};
use crate::ingest::{AgeBand, CropRect, Game};
use crate::transcript::normalize_name;

pub const FRAME_W: u32 = 640;
pub const FRAME_H: u32 = 360;
pub const VISIBLE_LINES: usize = 8;
pub const LINE_PITCH: u32 = 20;
const PANEL_PAD: u32 = 6;

/// Chat panel position inside a synthetic frame.
pub const PANEL: CropRect = CropRect {
    x: 16,
    y: 16,
    w: 600,
    h: PANEL_PAD * 2 + LINE_PITCH * VISIBLE_LINES as u32 - (LINE_PITCH - 14),
};

/// Longest message line that fits the panel.
pub const MAX_LINE_CHARS: usize = 40;

const PANEL_TINT: [f64; 3] = [15.0, 15.0, 25.0];
const PANEL_ALPHA: f64 = 0.55;
const TEXT: Rgb<u8> = Rgb([255, 255, 255]);

/// Name colors whose channels all clear 150.
const BRIGHT_NAME_COLORS: &[[u8; 3]] = &[
    [255, 220, 160],
    [170, 230, 255],
    [255, 190, 230],
    [200, 255, 180],
    [255, 240, 150],
];
/// Name colors with a channel below 150; background suppression drops them.
const DIM_NAME_COLORS: &[[u8; 3]] = &[[255, 110, 90], [90, 200, 255]];

/// Bright overlay colors with one weak channel.
const BLOB_COLORS: &[[u8; 3]] = &[[255, 255, 120], [120, 255, 255], [255, 130, 255]];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Clean,
    /// Bright translucent light blobs over the panel.
    Blobs,
    /// A burst of white particles on top of the text.
    Sparkles,
}

#[derive(Debug, Clone)]
pub struct ChatUser {
    pub name: String,
    pub color: Rgb<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    /// `None` for system lines drawn without a speaker prefix.
    pub speaker: Option<String>,
    pub text: String,
    pub unsafe_cue: bool,
}

impl ChatMessage {
    /// The line as it appears on screen.
    pub fn line(&self) -> String {
        match &self.speaker {
            Some(s) => format!("{s}: {}", self.text),
            None => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub image: RgbImage,
    pub scene: SceneKind,
    /// Visible lines, top to bottom.
    pub lines: Vec<String>,
    /// True for a near-copy of the previous frame.
    pub duplicate: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticSession {
    pub session_id: String,
    pub game: Game,
    pub age_band: AgeBand,
    pub messages: Vec<ChatMessage>,
    pub frames: Vec<SyntheticFrame>,
}

#[derive(Debug, Clone, Copy)]
pub struct SceneMix {
    pub clean: f64,
    pub blobs: f64,
    pub sparkles: f64,
}

impl Default for SceneMix {
    fn default() -> Self {
        SceneMix {
            clean: 0.6,
            blobs: 0.2,
            sparkles: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub session_id: String,
    pub game: Game,
    pub age_band: AgeBand,
    pub messages: usize,
    pub mix: SceneMix,
    /// Probability of emitting a near-duplicate after each frame.
    pub duplicate_rate: f64,
}

const SYLLABLES: &[&str] = &[
    "ko", "ra", "zu", "mi", "ta", "lex", "vo", "ny", "sky", "bun", "pix", "zen", "mo", "ka", "ri", "dex", "fa",
    "lu", "qui", "jo", "wen", "tor", "bel", "cy", "dra", "gon", "ix", "pa", "so", "vel",
];

/// Roblox-style usernames, pairwise dissimilar (Sim ≤ 0.75 after
/// normalization).
pub fn user_names(rng: &mut impl Rng, n: usize) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(n);
    let mut norms: Vec<String> = Vec::new();
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        assert!(tries < n * 2000, "could not generate {n} distinct names");
        let k = rng.gen_range(2..=3);
        let mut name = String::new();
        for i in 0..k {
            let s = SYLLABLES.choose(rng).unwrap();
            if i == 0 || rng.gen_bool(0.5) {
                let mut c = s.chars();
                name.extend(c.next().map(|c| c.to_ascii_uppercase()));
                name.extend(c);
            } else {
                name.push_str(s);
            }
        }
        match rng.gen_range(0..4) {
            0 => name.push_str(&rng.gen_range(1..100).to_string()),
            1 => {
                name.push('_');
                name.push_str(&rng.gen_range(100..1000).to_string());
            }
            2 => name = format!("xX{name}Xx"),
            _ => name.push_str(&rng.gen_range(2000..2020).to_string()),
        }
        let norm = normalize_name(&name);
        if norm.len() < 6 || norms.iter().any(|o| evalkit::sim(o, &norm) > 0.75) {
            continue;
        }
        norms.push(norm);
        out.push(name);
    }
    out
}

const BENIGN: &[&str] = &[
    "where is the pet shop",
    "follow me to the school",
    "can you be my dad!",
    "lol",
    "brb",
    "nice house",
    "trade?",
    "anyone want to play tag",
    "i love this game",
    "whats your fav pet",
    "ok",
    "omg yes",
    "wait for me",
    "lets go to the beach",
    "who wants to be the mom",
    "my pet is so cute",
    "i need 2 more coins",
    "gg",
    "come to my house",
    "how do i get the car",
    "this server is laggy",
    "anyone have a unicorn",
    "im gonna be the teacher",
    "the bus is here",
    "yes pls",
    "no thanks",
    "bye guys",
    "can i join your team",
];

const UNSAFE: &[&str] = &[
    "how old are you",
    "add me on snap",
    "do you have discord",
    "whats your address",
    "you are such a loser",
    "i will kill you",
    "damn it",
    "you are stupid",
];

const MASKED: &[&str] = &[
    "you are #### lol",
    "shut up ######",
    "what the ####",
    "####",
    "i #### ### ake",
    "go #### yourself",
    "ur so ####",
    "HHHH ####",
];

const INTERJECTIONS: &[&str] = &["AHHHH", "HAHAHA", "hmmm", "AHHH!!"];

fn message_text(rng: &mut impl Rng, offender: bool, others: &[String]) -> (String, bool) {
    let r: f64 = rng.gen();
    let (text, cue) = if offender && r < 0.6 {
        (MASKED.choose(rng).unwrap().to_string(), false)
    } else if r < 0.07 {
        (UNSAFE.choose(rng).unwrap().to_string(), true)
    } else if r < 0.10 && !others.is_empty() {
        (format!("hi {}", others.choose(rng).unwrap()), false)
    } else if r < 0.12 {
        (format!("call me {}", rng.gen_range(2_000_000u64..9_999_999)), true)
    } else if r < 0.14 {
        (INTERJECTIONS.choose(rng).unwrap().to_string(), false)
    } else if r < 0.17 {
        (MASKED.choose(rng).unwrap().to_string(), false)
    } else {
        (BENIGN.choose(rng).unwrap().to_string(), false)
    };
    (text, cue)
}

/// A scripted conversation among `users`; offenders post mostly masked lines.
pub fn script(rng: &mut impl Rng, users: &[ChatUser], offenders: &BTreeSet<String>, n: usize) -> Vec<ChatMessage> {
    let names: Vec<String> = users.iter().map(|u| u.name.clone()).collect();
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.02) {
                return ChatMessage {
                    speaker: None,
                    text: "[Server]: a new round begins".into(),
                    unsafe_cue: false,
                };
            }
            let u = users.choose(rng).unwrap();
            let others: Vec<String> = names.iter().filter(|n| **n != u.name).cloned().collect();
            let (mut text, cue) = message_text(rng, offenders.contains(&u.name), &others);
            let budget = MAX_LINE_CHARS.saturating_sub(u.name.len() + 2);
            text.truncate(budget);
            let text = text.trim_end().to_string();
            ChatMessage {
                speaker: Some(u.name.clone()),
                text: if text.is_empty() { "ok".into() } else { text },
                unsafe_cue: cue,
            }
        })
        .collect()
}

fn game_base(game: &Game) -> [f64; 3] {
    match game {
        Game::AdoptMe => [90.0, 140.0, 80.0],
        Game::BerryAve => [140.0, 110.0, 150.0],
        Game::Brookhaven => [100.0, 120.0, 140.0],
        Game::RoyaleHigh => [150.0, 100.0, 130.0],
        Game::Other(_) => [110.0, 110.0, 110.0],
    }
}

struct Scene {
    kind: SceneKind,
    background: RgbImage,
    blobs: Vec<(f64, f64, f64, f64, [u8; 3])>,
}

fn make_scene(rng: &mut impl Rng, game: &Game, kind: SceneKind) -> Scene {
    let base = game_base(game);
    let (fx, fy) = (rng.gen_range(0.01..0.05), rng.gen_range(0.01..0.05));
    let mut background = RgbImage::new(FRAME_W, FRAME_H);
    for (x, y, p) in background.enumerate_pixels_mut() {
        let wave = 20.0 * ((x as f64 * fx).sin() + (y as f64 * fy).cos());
        for c in 0..3 {
            let v = base[c] + wave + rng.gen_range(-30.0..30.0);
            p[c] = v.clamp(0.0, 255.0) as u8;
        }
    }
    let blobs = if kind == SceneKind::Blobs {
        (0..rng.gen_range(2..=3))
            .map(|_| {
                (
                    rng.gen_range(PANEL.x as f64 + 60.0..(PANEL.x + PANEL.w) as f64 - 60.0),
                    rng.gen_range(PANEL.y as f64 + 30.0..(PANEL.y + PANEL.h) as f64 - 30.0),
                    rng.gen_range(70.0..140.0),
                    rng.gen_range(25.0..50.0),
                    *BLOB_COLORS.choose(rng).unwrap(),
                )
            })
            .collect()
    } else {
        Vec::new()
    };
    Scene {
        kind,
        background,
        blobs,
    }
}

fn render(scene: &Scene, lines: &[(&ChatMessage, Rgb<u8>)], rng: &mut impl Rng) -> RgbImage {
    let mut img = scene.background.clone();
    for y in PANEL.y..PANEL.y + PANEL.h {
        for x in PANEL.x..PANEL.x + PANEL.w {
            let p = img.get_pixel_mut(x, y);
            for c in 0..3 {
                p[c] = (PANEL_ALPHA * PANEL_TINT[c] + (1.0 - PANEL_ALPHA) * p[c] as f64).round() as u8;
            }
        }
    }
    for &(cx, cy, rx, ry, col) in &scene.blobs {
        for y in PANEL.y..PANEL.y + PANEL.h {
            for x in PANEL.x..PANEL.x + PANEL.w {
                let d = ((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2);
                if d <= 1.0 {
                    let p = img.get_pixel_mut(x, y);
                    for c in 0..3 {
                        p[c] = (0.9 * col[c] as f64 + 0.1 * p[c] as f64).round() as u8;
                    }
                }
            }
        }
    }
    let m = Metrics::default();
    for (i, (msg, color)) in lines.iter().enumerate() {
        let y = (PANEL.y + PANEL_PAD + LINE_PITCH * i as u32) as i64;
        let x = (PANEL.x + PANEL_PAD) as i64;
        match &msg.speaker {
            Some(s) => {
                let prefix = format!("{s}:");
                glyph::draw_text(&mut img, x, y, &prefix, *color, m);
                let off = m.text_width(&format!("{prefix} ")) as i64;
                glyph::draw_text(&mut img, x + off, y, &msg.text, TEXT, m);
            }
            None => glyph::draw_text(&mut img, x, y, &msg.text, TEXT, m),
        }
    }
    if scene.kind == SceneKind::Sparkles {
        let cx = rng.gen_range(PANEL.x as f64 + 80.0..PANEL.x as f64 + 320.0);
        let cy = rng.gen_range(PANEL.y as f64 + 30.0..(PANEL.y + PANEL.h) as f64 - 30.0);
        for _ in 0..rng.gen_range(90..130) {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.0..1.0f64).sqrt();
            let x = (cx + 80.0 * r * a.cos()) as u32;
            let y = (cy + 28.0 * r * a.sin()) as u32;
            for dy in 0..2 {
                for dx in 0..2 {
                    if x + dx < FRAME_W && y + dy < FRAME_H {
                        img.put_pixel(x + dx, y + dy, TEXT);
                    }
                }
            }
        }
    }
    img
}

fn jitter(img: &RgbImage, rng: &mut impl Rng) -> RgbImage {
    let mut out = img.clone();
    for _ in 0..(FRAME_W * FRAME_H / 200) {
        let x = rng.gen_range(0..FRAME_W);
        let y = rng.gen_range(0..FRAME_H);
        let p = out.get_pixel_mut(x, y);
        for c in 0..3 {
            p[c] = p[c].saturating_add(rng.gen_range(0..3));
        }
    }
    out
}

fn pick_scene(rng: &mut impl Rng, mix: &SceneMix) -> SceneKind {
    let total = mix.clean + mix.blobs + mix.sparkles;
    let r = rng.gen_range(0.0..total);
    if r < mix.clean {
        SceneKind::Clean
    } else if r < mix.clean + mix.blobs {
        SceneKind::Blobs
    } else {
        SceneKind::Sparkles
    }
}

/// Assigns display colors; roughly one user in five gets a dim color.
pub fn chat_users(rng: &mut impl Rng, names: &[String]) -> Vec<ChatUser> {
    names
        .iter()
        .map(|n| {
            let c = if rng.gen_bool(0.2) {
                *DIM_NAME_COLORS.choose(rng).unwrap()
            } else {
                *BRIGHT_NAME_COLORS.choose(rng).unwrap()
            };
            ChatUser {
                name: n.clone(),
                color: Rgb(c),
            }
        })
        .collect()
}

/// Renders a scrolling chat recording of `messages`. The panel starts full;
/// each new frame scrolls one or two lines. Scenes last three to six frames.
pub fn render_session(
    rng: &mut impl Rng,
    spec: &SessionSpec,
    users: &[ChatUser],
    messages: Vec<ChatMessage>,
) -> SyntheticSession {
    let color_of: BTreeMap<&str, Rgb<u8>> = users.iter().map(|u| (u.name.as_str(), u.color)).collect();
    let mut frames = Vec::new();
    let mut end = VISIBLE_LINES.min(messages.len());
    let kind = pick_scene(rng, &spec.mix);
    let mut scene = make_scene(rng, &spec.game, kind);
    let mut scene_left = rng.gen_range(3..=6);
    loop {
        if scene_left == 0 {
            let kind = pick_scene(rng, &spec.mix);
            scene = make_scene(rng, &spec.game, kind);
            scene_left = rng.gen_range(3..=6);
        }
        scene_left -= 1;
        let start = end.saturating_sub(VISIBLE_LINES);
        let visible: Vec<(&ChatMessage, Rgb<u8>)> = messages[start..end]
            .iter()
            .map(|m| {
                let c = m
                    .speaker
                    .as_deref()
                    .and_then(|s| color_of.get(s).copied())
                    .unwrap_or(TEXT);
                (m, c)
            })
            .collect();
        let image = render(&scene, &visible, rng);
        let lines: Vec<String> = messages[start..end].iter().map(ChatMessage::line).collect();
        if rng.gen_bool(spec.duplicate_rate) {
            frames.push(SyntheticFrame {
                image: image.clone(),
                scene: scene.kind,
                lines: lines.clone(),
                duplicate: false,
            });
            let dup = jitter(&image, rng);
            frames.push(SyntheticFrame {
                image: dup,
                scene: scene.kind,
                lines,
                duplicate: true,
            });
        } else {
            frames.push(SyntheticFrame {
                image,
                scene: scene.kind,
                lines,
                duplicate: false,
            });
        }
        if end >= messages.len() {
            break;
        }
        end = (end + rng.gen_range(1..=2)).min(messages.len());
    }
    SyntheticSession {
        session_id: spec.session_id.clone(),
        game: spec.game.clone(),
        age_band: spec.age_band,
        messages,
        frames,
    }
}

/// A standalone OCR benchmark: sessions rendered with the default scene mix.
pub fn ocr_corpus(seed: u64, sessions: usize, messages: usize) -> Vec<SyntheticSession> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = user_names(&mut rng, 24);
    let users = chat_users(&mut rng, &names);
    (0..sessions)
        .map(|i| {
            let game = Game::KNOWN[i % 4].clone();
            let spec = SessionSpec {
                session_id: format!("bench{i:02}"),
                game,
                age_band: if i % 2 == 0 { AgeBand::NinePlus } else { AgeBand::ThirteenPlus },
                messages,
                mix: SceneMix::default(),
                duplicate_rate: 0.0,
            };
            let mut cast: Vec<ChatUser> = users.clone();
            cast.shuffle(&mut rng);
            cast.truncate(6);
            let msgs = script(&mut rng, &cast, &BTreeSet::new(), messages);
            render_session(&mut rng, &spec, &cast, msgs)
        })
        .collect()
}

/// Lines with injected masked spans and look-alike decoys.
#[derive(Debug, Clone)]
pub struct InjectionCorpus {
    pub lines: Vec<String>,
    /// `(line index, start char, length)` of every injected span.
    pub spans: Vec<(usize, usize, usize)>,
    /// `(line index, token)` of every decoy.
    pub decoys: Vec<(usize, String)>,
    /// `(line index, token)` of every one- or two-character hash run.
    pub short_runs: Vec<(usize, String)>,
}

fn masked_token(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(3..=10);
    let confuse = rng.gen_bool(0.4);
    (0..len)
        .map(|_| {
            if confuse && rng.gen_bool(0.35) {
                *['H', 'h', '4'].choose(rng).unwrap()
            } else {
                '#'
            }
        })
        .collect()
}

const DECOYS: &[&str] = &["AHHHH", "HAHAHA", "AHHH!!", "hmmm", "HAHAH", "ahhhhh", "HMMMM", "hahaha"];

/// `n_lines` chat lines carrying `n_spans` masked tokens, `n_decoys`
/// interjections and a sprinkling of one- and two-character hash runs.
pub fn injection_corpus(seed: u64, n_lines: usize, n_spans: usize, n_decoys: usize) -> InjectionCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens: Vec<Vec<(String, u8)>> = (0..n_lines)
        .map(|_| {
            BENIGN
                .choose(&mut rng)
                .unwrap()
                .split(' ')
                .map(|w| (w.to_string(), 0u8))
                .collect()
        })
        .collect();
    let mut place = |rng: &mut ChaCha8Rng, tok: String, kind: u8| {
        let l = rng.gen_range(0..n_lines);
        let at = rng.gen_range(0..=tokens[l].len());
        tokens[l].insert(at, (tok, kind));
    };
    for _ in 0..n_spans {
        let t = masked_token(&mut rng);
        place(&mut rng, t, 1);
    }
    for i in 0..n_decoys {
        place(&mut rng, DECOYS[i % DECOYS.len()].to_string(), 2);
    }
    for _ in 0..n_lines / 20 {
        let t = "#".repeat(rng.gen_range(1..=2));
        place(&mut rng, t, 3);
    }
    let mut out = InjectionCorpus {
        lines: Vec::with_capacity(n_lines),
        spans: Vec::new(),
        decoys: Vec::new(),
        short_runs: Vec::new(),
    };
    for (li, toks) in tokens.into_iter().enumerate() {
        let mut line = String::new();
        for (tok, kind) in toks {
            if !line.is_empty() {
                line.push(' ');
            }
            let start = line.chars().count();
            match kind {
                1 => out.spans.push((li, start, tok.chars().count())),
                2 => out.decoys.push((li, tok.clone())),
                3 => out.short_runs.push((li, tok.clone())),
                _ => {}
            }
            line.push_str(&tok);
        }
        out.lines.push(line);
    }
    out
}

/// Raw chat lines whose speakers include near-miss spellings of other names.
#[derive(Debug, Clone)]
pub struct AnonymizationCorpus {
    pub lines: Vec<String>,
    pub names: Vec<String>,
    /// `(variant, canonical name)`.
    pub variants: Vec<(String, String)>,
}

fn fuzz_name(rng: &mut impl Rng, name: &str) -> String {
    let chars: Vec<char> = name.chars().collect();
    match rng.gen_range(0..3) {
        0 => {
            let i = rng.gen_range(0..chars.len());
            chars.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, c)| *c).collect()
        }
        1 => {
            let i = rng.gen_range(0..=chars.len());
            let mut v = chars.clone();
            v.insert(i, *['x', '1', '_', 'o'].choose(rng).unwrap());
            v.into_iter().collect()
        }
        _ => {
            // case and punctuation changes normalize away
            let mut s: String = chars
                .iter()
                .map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
                .collect();
            s.push('!');
            s
        }
    }
}

pub fn anonymization_corpus(seed: u64, n_lines: usize, n_names: usize, n_variants: usize) -> AnonymizationCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names = user_names(&mut rng, n_names);
    let mut variants = Vec::new();
    let mut seen: BTreeSet<String> = names.iter().cloned().collect();
    while variants.len() < n_variants {
        let base = names.choose(&mut rng).unwrap().clone();
        let v = fuzz_name(&mut rng, &base);
        let (nv, nb) = (normalize_name(&v), normalize_name(&base));
        if evalkit::sim(&nv, &nb) <= 0.9 || !seen.insert(v.clone()) {
            continue;
        }
        variants.push((v, base));
    }
    let speakers: Vec<String> = names.iter().cloned().chain(variants.iter().map(|(v, _)| v.clone())).collect();
    let mut lines = Vec::with_capacity(n_lines);
    // every speaker appears at least once
    let mut order: Vec<usize> = (0..speakers.len()).collect();
    order.shuffle(&mut rng);
    for i in 0..n_lines {
        let s = if i < order.len() {
            &speakers[order[i]]
        } else {
            speakers.choose(&mut rng).unwrap()
        };
        let r: f64 = rng.gen();
        let text = if r < 0.15 {
            format!("hi {} !", names.choose(&mut rng).unwrap())
        } else if r < 0.2 {
            format!("@{} come here", names.choose(&mut rng).unwrap())
        } else if r < 0.25 {
            format!("my yt is {}", names.choose(&mut rng).unwrap().to_lowercase())
        } else if r < 0.28 {
            format!("call me {}", rng.gen_range(2_000_000u64..9_999_999))
        } else {
            BENIGN.choose(&mut rng).unwrap().to_string()
        };
        let line = match rng.gen_range(0..3) {
            0 => format!("{s}: {text}"),
            1 => format!("[{s}]: {text}"),
            _ => format!("[VIP] {s}: {text}"),
        };
        lines.push(line);
    }
    AnonymizationCorpus {
        lines,
        names,
        variants,
    }
}

/// Masked-line counts for `users` pseudonyms following a Zipf law with
/// exponent `s`, scaled so the top user has `top` masked lines.
pub fn zipf_masked_counts(users: usize, s: f64, top: u64) -> Vec<(String, u64)> {
    (1..=users)
        .map(|k| {
            let c = (top as f64 / (k as f64).powf(s)).round().max(1.0) as u64;
            (format!("user_{k:05}"), c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_dissimilar_and_renderable() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let names = user_names(&mut rng, 50);
        for n in &names {
            assert!(n.chars().all(glyph::supports), "{n}");
        }
    }

    #[test]
    fn messages_fit_panel() {
        let s = &ocr_corpus(1, 1, 30)[0];
        for m in &s.messages {
            assert!(m.line().chars().count() <= MAX_LINE_CHARS, "{}", m.line());
            assert!(m.line().chars().all(glyph::supports), "{}", m.line());
        }
        assert!(s.frames.iter().all(|f| f.lines.len() == VISIBLE_LINES));
        assert_eq!(s.frames.last().unwrap().lines.last(), Some(&s.messages.last().unwrap().line()));
    }

    #[test]
    fn injection_truth_points_at_tokens() {
        let c = injection_corpus(5, 200, 40, 10);
        assert_eq!(c.spans.len(), 40);
        for &(l, start, len) in &c.spans {
            let tok: String = c.lines[l].chars().skip(start).take(len).collect();
            assert!(tok.chars().all(|ch| "#Hh4".contains(ch)), "{tok}");
        }
    }

    #[test]
    fn anonymization_variants_are_close() {
        let c = anonymization_corpus(9, 500, 40, 10);
        assert_eq!(c.variants.len(), 10);
        for (v, b) in &c.variants {
            assert!(evalkit::sim(&normalize_name(v), &normalize_name(b)) > 0.9);
        }
    }

    #[test]
    fn zipf_is_skewed() {
        let counts = zipf_masked_counts(100, 1.2, 400);
        assert_eq!(counts[0].1, 400);
        assert!(counts.windows(2).all(|w| w[0].1 >= w[1].1));
    }
}
