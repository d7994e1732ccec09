//! Recording ingestion: frame extraction, cropping to the chat window and
//! SSIM-based removal of visually redundant consecutive frames.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::command;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Game {
    AdoptMe,
    BerryAve,
    Brookhaven,
    RoyaleHigh,
    Other(String),
}

impl Game {
    pub const KNOWN: [Game; 4] = [Game::AdoptMe, Game::BerryAve, Game::Brookhaven, Game::RoyaleHigh];

    pub fn as_str(&self) -> &str {
        match self {
            Game::AdoptMe => "AdoptMe",
            Game::BerryAve => "BerryAve",
            Game::Brookhaven => "Brookhaven",
            Game::RoyaleHigh => "RoyaleHigh",
            Game::Other(name) => name,
        }
    }
}

impl fmt::Display for Game {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Game {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "AdoptMe" => Game::AdoptMe,
            "BerryAve" => Game::BerryAve,
            "Brookhaven" => Game::Brookhaven,
            "RoyaleHigh" => Game::RoyaleHigh,
            other => Game::Other(other.to_string()),
        })
    }
}

impl Serialize for Game {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Game {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBand {
    NinePlus,
    ThirteenPlus,
}

impl fmt::Display for AgeBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeBand::NinePlus => "9+",
            AgeBand::ThirteenPlus => "13+",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CropRect {
    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && self.x.checked_add(self.w).is_some_and(|r| r <= width)
            && self.y.checked_add(self.h).is_some_and(|b| b <= height)
    }
}

/// One recording of one game/age combination. Serialized as the per-session
/// manifest under `sessions/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSession {
    pub session_id: String,
    pub game: Game,
    pub age_band: AgeBand,
    /// Video file or directory of `frame_%06d.png` images, relative to the
    /// project root unless absolute.
    pub source: PathBuf,
    /// Falls back to the per-game crop in the project config when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop_rect: Option<CropRect>,
    /// Frame rate of the source, used to fill `wall_offset_ms`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fps: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub session_id: String,
    pub seq: u64,
    pub image: RgbImage,
    pub wall_offset_ms: Option<u64>,
}

/// Frame sequence produced by [`extract_frames`]. Holds the temporary
/// directory of a decoded video alive until the iterator is dropped.
pub struct FrameSource {
    session_id: String,
    files: std::vec::IntoIter<PathBuf>,
    crop: Option<CropRect>,
    fps: Option<f64>,
    next_seq: u64,
    _scratch: Option<tempfile::TempDir>,
}

impl FrameSource {
    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.len() == 0
    }
}

impl Iterator for FrameSource {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = self.files.next()?;
        let seq = self.next_seq;
        self.next_seq += 1;
        let load = || -> Result<Frame> {
            let img = image::open(&path)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(&path, io),
                    other => Error::Image(other),
                })?
                .to_rgb8();
            let image = match self.crop {
                Some(rect) => crop(&img, rect)?,
                None => img,
            };
            Ok(Frame {
                session_id: self.session_id.clone(),
                seq,
                image,
                wall_offset_ms: self.fps.map(|fps| (seq as f64 * 1000.0 / fps).round() as u64),
            })
        };
        Some(load())
    }
}

pub fn crop(img: &RgbImage, rect: CropRect) -> Result<RgbImage> {
    if !rect.fits(img.width(), img.height()) {
        return Err(Error::input(format!(
            "crop {rect:?} outside {}x{} frame",
            img.width(),
            img.height()
        )));
    }
    Ok(image::imageops::crop_imm(img, rect.x, rect.y, rect.w, rect.h).to_image())
}

/// Lists `frame_*.png` files of a directory in name order.
pub fn list_frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Opens a recording as a frame sequence.
///
/// A directory source is read directly. Any other path is treated as a video
/// and decoded by `extractor_cmd`, a template with `{input}` and `{outdir}`
/// placeholders that must write `frame_%06d.png` files into `{outdir}`.
pub fn extract_frames(
    session: &RecordingSession,
    source: &Path,
    crop: Option<CropRect>,
    extractor_cmd: &str,
) -> Result<FrameSource> {
    if !source.exists() {
        return Err(Error::input(format!("recording source {} does not exist", source.display())));
    }
    let (files, scratch) = if source.is_dir() {
        (list_frame_files(source)?, None)
    } else {
        let tmp = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let argv = command::render(
            extractor_cmd,
            &[
                ("input", &source.to_string_lossy()),
                ("outdir", &tmp.path().to_string_lossy()),
            ],
        )?;
        command::run("frame extractor", &argv)?;
        (list_frame_files(tmp.path())?, Some(tmp))
    };
    Ok(FrameSource {
        session_id: session.session_id.clone(),
        files: files.into_iter(),
        crop,
        fps: session.fps,
        next_seq: 0,
        _scratch: scratch,
    })
}

// SSIM reference parameters.
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable "valid" filtering: output is `(w-k+1) x (h-k+1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + i) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Mean structural similarity of two equally sized images on BT.601 luma.
///
/// Uses an 11×11 Gaussian window (σ = 1.5) over valid positions only. For
/// images narrower or shorter than the window, the window shrinks to the
/// smaller image dimension.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::input(format!(
            "ssim dimension mismatch: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::input("ssim of an empty image"));
    }
    if a.as_raw() == b.as_raw() {
        return Ok(1.0);
    }
    let size = SSIM_WINDOW.min(w).min(h);
    let kernel = gaussian_kernel(size, SSIM_SIGMA);

    let la = luma(a);
    let lb = luma(b);
    let aa: Vec<f64> = la.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = lb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = la.iter().zip(&lb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(&la, w, h, &kernel);
    let mu_b = filter_valid(&lb, w, h, &kernel);
    let e_aa = filter_valid(&aa, w, h, &kernel);
    let e_bb = filter_valid(&bb, w, h, &kernel);
    let e_ab = filter_valid(&ab, w, h, &kernel);

    let c1 = (SSIM_K1 * SSIM_L).powi(2);
    let c2 = (SSIM_K2 * SSIM_L).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

/// Drops each frame whose SSIM against the most recently retained frame
/// reaches `threshold`, keeping the first appearance of every visual state.
pub fn dedup_frames<I>(frames: I, threshold: f64) -> DedupFrames<I::IntoIter>
where
    I: IntoIterator<Item = Result<Frame>>,
{
    DedupFrames {
        inner: frames.into_iter(),
        threshold,
        last: None,
    }
}

pub struct DedupFrames<I> {
    inner: I,
    threshold: f64,
    last: Option<RgbImage>,
}

impl<I: Iterator<Item = Result<Frame>>> Iterator for DedupFrames<I> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let frame = match self.inner.next()? {
                Ok(f) => f,
                Err(e) => return Some(Err(e)),
            };
            if let Some(last) = &self.last {
                match ssim(last, &frame.image) {
                    Ok(s) if s >= self.threshold => continue,
                    Ok(_) => {}
                    Err(e) => return Some(Err(e)),
                }
            }
            self.last = Some(frame.image.clone());
            return Some(Ok(frame));
        }
    }
}
