//! Metamorphic image variants and RGB background suppression.
//!
//! Every frame is OCR'd as six variants: {grayscale, Gaussian blur, Otsu
//! binarization} × {normal, inverted}. When the dynamic game background
//! drowns the chat text, a background-suppressed rendition of the frame is
//! produced by per-channel thresholding and put through the same six
//! variants.

use std::collections::BTreeMap;

use image::{GrayImage, Luma, Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit;
use crate::ingest::Game;
use crate::ocr::OcrEngine;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Grayscale,
    Blur,
    Otsu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Normal,
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariantTag {
    pub transform: Transform,
    pub polarity: Polarity,
}

impl VariantTag {
    pub const ALL: [VariantTag; 6] = [
        VariantTag::new(Transform::Grayscale, Polarity::Normal),
        VariantTag::new(Transform::Grayscale, Polarity::Inverted),
        VariantTag::new(Transform::Blur, Polarity::Normal),
        VariantTag::new(Transform::Blur, Polarity::Inverted),
        VariantTag::new(Transform::Otsu, Polarity::Normal),
        VariantTag::new(Transform::Otsu, Polarity::Inverted),
    ];

    pub const fn new(transform: Transform, polarity: Polarity) -> Self {
        VariantTag {
            transform,
            polarity,
        }
    }

    /// File stem used when variants are written to disk.
    pub fn file_stem(&self) -> &'static str {
        match (self.transform, self.polarity) {
            (Transform::Grayscale, Polarity::Normal) => "gray",
            (Transform::Grayscale, Polarity::Inverted) => "gray_inv",
            (Transform::Blur, Polarity::Normal) => "blur",
            (Transform::Blur, Polarity::Inverted) => "blur_inv",
            (Transform::Otsu, Polarity::Normal) => "otsu",
            (Transform::Otsu, Polarity::Inverted) => "otsu_inv",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Variant {
    pub tag: VariantTag,
    pub image: GrayImage,
}

#[derive(Debug, Clone)]
pub struct VariantSet {
    /// Always six entries, in [`VariantTag::ALL`] order.
    pub variants: Vec<Variant>,
    pub suppressed_origin: Option<RgbImage>,
}

/// BT.601 luma, rounded to the nearest integer.
pub fn grayscale(img: &RgbImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let p = img.get_pixel(x, y);
        let v = (299 * p[0] as u32 + 587 * p[1] as u32 + 114 * p[2] as u32 + 500) / 1000;
        Luma([v as u8])
    })
}

pub fn invert(img: &GrayImage) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| Luma([255 - img.get_pixel(x, y)[0]]))
}

const BLUR_SIZE: usize = 5;
const BLUR_SIGMA: f64 = 1.0;

/// 5×5 Gaussian blur (σ = 1.0) with edge-clamped borders.
pub fn gaussian_blur(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w == 0 || h == 0 {
        return img.clone();
    }
    let r = (BLUR_SIZE / 2) as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);

    let px = |x: i64, y: i64| img.get_pixel(x.clamp(0, w - 1) as u32, y.clamp(0, h - 1) as u32)[0] as f64;
    let mut tmp = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = (-r..=r).map(|i| k[(i + r) as usize] * px(x + i, y)).sum();
        }
    }
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as i64, y as i64);
        let v: f64 = (-r..=r)
            .map(|i| k[(i + r) as usize] * tmp[((y + i).clamp(0, h - 1) * w + x) as usize])
            .sum();
        Luma([v.round().clamp(0.0, 255.0) as u8])
    })
}

pub fn histogram(img: &GrayImage) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for p in img.pixels() {
        hist[p[0] as usize] += 1;
    }
    hist
}

/// Otsu's threshold: the `t` maximizing between-class variance when pixels
/// `<= t` form one class. Ties resolve to the smallest `t`; a constant
/// image returns its value.
pub fn otsu_threshold(img: &GrayImage) -> u8 {
    otsu_from_histogram(&histogram(img))
}

pub fn otsu_from_histogram(hist: &[u64; 256]) -> u8 {
    let total: u64 = hist.iter().sum();
    let occupied: Vec<usize> = (0..256).filter(|&v| hist[v] > 0).collect();
    match occupied.as_slice() {
        [] => return 0,
        [only] => return *only as u8,
        _ => {}
    }
    let sum_all: u64 = hist.iter().enumerate().map(|(v, &c)| v as u64 * c).sum();
    let n = total as f64;
    let mut n0 = 0u64;
    let mut s0 = 0u64;
    let mut best_t = 0u8;
    let mut best = f64::NEG_INFINITY;
    for t in 0..256usize {
        n0 += hist[t];
        s0 += t as u64 * hist[t];
        let n1 = total - n0;
        let var = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            let mu0 = s0 as f64 / n0 as f64;
            let mu1 = (sum_all - s0) as f64 / n1 as f64;
            (n0 as f64 / n) * (n1 as f64 / n) * (mu0 - mu1).powi(2)
        };
        if var > best {
            best = var;
            best_t = t as u8;
        }
    }
    best_t
}

/// Pixels above `t` become white, the rest black.
pub fn binarize(img: &GrayImage, t: u8) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        Luma([if img.get_pixel(x, y)[0] > t { 255 } else { 0 }])
    })
}

pub fn make_variants(img: &RgbImage) -> VariantSet {
    let gray = grayscale(img);
    let blur = gaussian_blur(&gray);
    let otsu = binarize(&gray, otsu_threshold(&gray));
    let variants = VariantTag::ALL
        .iter()
        .map(|&tag| {
            let base = match tag.transform {
                Transform::Grayscale => &gray,
                Transform::Blur => &blur,
                Transform::Otsu => &otsu,
            };
            let image = match tag.polarity {
                Polarity::Normal => base.clone(),
                Polarity::Inverted => invert(base),
            };
            Variant { tag, image }
        })
        .collect();
    VariantSet {
        variants,
        suppressed_origin: None,
    }
}

pub const THRESHOLD_CANDIDATES: [u8; 4] = [50, 100, 150, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RgbThreshold {
    pub t_r: u8,
    pub t_g: u8,
    pub t_b: u8,
}

impl RgbThreshold {
    pub fn new(t_r: u8, t_g: u8, t_b: u8) -> Self {
        RgbThreshold { t_r, t_g, t_b }
    }

    /// All 64 combinations of [`THRESHOLD_CANDIDATES`], lexicographic order.
    pub fn candidates() -> Vec<RgbThreshold> {
        Self::candidates_from(&THRESHOLD_CANDIDATES)
    }

    pub fn candidates_from(values: &[u8]) -> Vec<RgbThreshold> {
        let mut out = Vec::with_capacity(values.len().pow(3));
        for &r in values {
            for &g in values {
                for &b in values {
                    out.push(RgbThreshold::new(r, g, b));
                }
            }
        }
        out
    }

    fn passes(&self, p: &Rgb<u8>) -> bool {
        p[0] >= self.t_r && p[1] >= self.t_g && p[2] >= self.t_b
    }
}

impl Default for RgbThreshold {
    fn default() -> Self {
        RgbThreshold::new(150, 150, 150)
    }
}

/// Which side of the channel thresholds is treated as text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressPolarity {
    /// Pixels passing every channel threshold are text (light-on-dark chat).
    #[default]
    LightText,
    DarkText,
}

/// Renders text pixels black and everything else white.
pub fn suppress_background(img: &RgbImage, thr: RgbThreshold) -> RgbImage {
    suppress_background_with(img, thr, SuppressPolarity::LightText)
}

pub fn suppress_background_with(img: &RgbImage, thr: RgbThreshold, polarity: SuppressPolarity) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let pass = thr.passes(img.get_pixel(x, y));
        let text = match polarity {
            SuppressPolarity::LightText => pass,
            SuppressPolarity::DarkText => !pass,
        };
        if text {
            Rgb([0, 0, 0])
        } else {
            Rgb([255, 255, 255])
        }
    })
}

/// A cropped frame with its manually transcribed chat lines.
#[derive(Debug, Clone)]
pub struct GroundTruthFrame {
    pub game: Game,
    pub image: RgbImage,
    pub lines: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub threshold: RgbThreshold,
    pub recall: f64,
    pub ams: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameThreshold {
    pub best: CandidateScore,
    pub evaluated: Vec<CandidateScore>,
}

/// Picks, per game, the suppression threshold whose OCR output best recovers
/// the ground truth: highest recall, then highest AMS, then the
/// lexicographically smallest `(t_r, t_g, t_b)`.
pub fn search_thresholds(
    ground_truth: &[GroundTruthFrame],
    engine: &dyn OcrEngine,
    candidates: &[RgbThreshold],
    tau: f64,
) -> Result<BTreeMap<Game, GameThreshold>> {
    if ground_truth.iter().all(|f| f.lines.is_empty()) {
        return Err(Error::input("threshold search needs ground-truth lines"));
    }
    if candidates.is_empty() {
        return Err(Error::input("threshold search needs at least one candidate"));
    }
    let mut by_game: BTreeMap<Game, Vec<&GroundTruthFrame>> = BTreeMap::new();
    for f in ground_truth.iter().filter(|f| !f.lines.is_empty()) {
        by_game.entry(f.game.clone()).or_default().push(f);
    }

    let mut out = BTreeMap::new();
    for (game, frames) in by_game {
        let evaluated: Vec<CandidateScore> = candidates
            .par_iter()
            .map(|&thr| score_candidate(&frames, engine, thr, tau))
            .collect::<Result<_>>()?;
        let best = evaluated
            .iter()
            .min_by(|a, b| {
                b.recall
                    .total_cmp(&a.recall)
                    .then(b.ams.total_cmp(&a.ams))
                    .then(a.threshold.cmp(&b.threshold))
            })
            .cloned()
            .expect("non-empty candidates");
        out.insert(game, GameThreshold { best, evaluated });
    }
    Ok(out)
}

fn score_candidate(
    frames: &[&GroundTruthFrame],
    engine: &dyn OcrEngine,
    thr: RgbThreshold,
    tau: f64,
) -> Result<CandidateScore> {
    let mut reports = Vec::with_capacity(frames.len());
    for f in frames {
        let suppressed = suppress_background(&f.image, thr);
        let result = engine.recognize(&grayscale(&suppressed))?;
        reports.push(evalkit::report(&f.lines, &result.lines(), tau)?);
    }
    let pooled = evalkit::merge_reports(&reports)?;
    Ok(CandidateScore {
        threshold: thr,
        recall: pooled.recall,
        ams: pooled.ams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive sweep straight over the pixel list.
    fn sweep_otsu(img: &GrayImage) -> u8 {
        let px: Vec<f64> = img.pixels().map(|p| p[0] as f64).collect();
        let n = px.len() as f64;
        let mut best = (f64::NEG_INFINITY, 0u8);
        for t in 0..=255u8 {
            let lo: Vec<f64> = px.iter().copied().filter(|&v| v <= t as f64).collect();
            let hi: Vec<f64> = px.iter().copied().filter(|&v| v > t as f64).collect();
            let var = if lo.is_empty() || hi.is_empty() {
                0.0
            } else {
                let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
                let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
                (lo.len() as f64 / n) * (hi.len() as f64 / n) * (m0 - m1).powi(2)
            };
            if var > best.0 {
                best = (var, t);
            }
        }
        best.1
    }

    fn gray_from(values: &[u8], w: u32) -> GrayImage {
        GrayImage::from_raw(w, values.len() as u32 / w, values.to_vec()).unwrap()
    }

    #[test]
    fn constant_white_variants() {
        let img = RgbImage::from_pixel(8, 4, Rgb([255, 255, 255]));
        let set = make_variants(&img);
        assert_eq!(set.variants.len(), 6);
        let gray = &set.variants[0].image;
        assert!(gray.pixels().all(|p| p[0] == 255));
        assert!(set.variants[1].image.pixels().all(|p| p[0] == 0));
        for v in &set.variants {
            assert_eq!(v.image.dimensions(), (8, 4));
        }
    }

    #[test]
    fn binary_image_is_otsu_fixed_point() {
        let img = RgbImage::from_fn(10, 10, |x, y| {
            if (x + y) % 3 == 0 {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            }
        });
        let set = make_variants(&img);
        assert_eq!(set.variants[4].image, set.variants[0].image);
    }

    #[test]
    fn otsu_examples() {
        assert_eq!(otsu_threshold(&GrayImage::from_pixel(5, 5, Luma([42]))), 42);
        let mut v = vec![50u8; 100];
        v.extend(vec![200u8; 100]);
        let bimodal = gray_from(&v, 20);
        assert_eq!(sweep_otsu(&bimodal), 50);
        assert_eq!(otsu_threshold(&bimodal), 50);

        let mut three = vec![10u8; 30];
        three.extend(vec![120u8; 50]);
        three.extend(vec![240u8; 20]);
        let img = gray_from(&three, 10);
        assert_eq!(otsu_threshold(&img), sweep_otsu(&img));
    }

    #[test]
    fn suppression_examples() {
        let light = RgbImage::from_pixel(3, 3, Rgb([200, 200, 200]));
        let out = suppress_background(&light, RgbThreshold::new(50, 50, 50));
        assert!(out.pixels().all(|p| *p == Rgb([0, 0, 0])));
        let dark = RgbImage::from_pixel(3, 3, Rgb([100, 100, 100]));
        let out = suppress_background(&dark, RgbThreshold::new(200, 200, 200));
        assert!(out.pixels().all(|p| *p == Rgb([255, 255, 255])));
    }

    #[test]
    fn suppression_matches_per_pixel_predicate() {
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 16) as u8, (y * 16) as u8, ((x + y) * 8) as u8]));
        let thr = RgbThreshold::new(100, 50, 150);
        let out = suppress_background(&img, thr);
        for (x, y, p) in img.enumerate_pixels() {
            let fg = p[0] >= 100 && p[1] >= 50 && p[2] >= 150;
            assert_eq!(*out.get_pixel(x, y) == Rgb([0, 0, 0]), fg);
        }
        let dark = suppress_background_with(&img, thr, SuppressPolarity::DarkText);
        for (x, y, p) in out.enumerate_pixels() {
            assert_ne!(p, dark.get_pixel(x, y));
        }
    }

    #[test]
    fn candidate_set_has_64_entries() {
        let c = RgbThreshold::candidates();
        assert_eq!(c.len(), 64);
        assert_eq!(c[0], RgbThreshold::new(50, 50, 50));
        assert_eq!(c[1], RgbThreshold::new(50, 50, 100));
        assert_eq!(c[63], RgbThreshold::new(200, 200, 200));
    }

    /// Answers with a scripted transcript chosen by how many pixels the
    /// suppression kept as text.
    struct InkCountEngine(BTreeMap<usize, Vec<&'static str>>);

    impl OcrEngine for InkCountEngine {
        fn recognize(&self, image: &GrayImage) -> Result<crate::ocr::OcrResult> {
            let ink = image.pixels().filter(|p| p[0] == 0).count();
            let lines = self.0.get(&ink).cloned().unwrap_or_default();
            let words = lines
                .iter()
                .enumerate()
                .flat_map(|(i, l)| {
                    l.split_whitespace().map(move |t| crate::ocr::OcrWord {
                        text: t.to_string(),
                        confidence: 90.0,
                        line_num: i as u32,
                        bbox: crate::ocr::BBox {
                            left: 0,
                            top: 0,
                            width: 1,
                            height: 1,
                        },
                    })
                })
                .collect();
            Ok(crate::ocr::OcrResult::from_words(words))
        }
    }

    /// Red ramp so the ink count depends only on `t_r`: 50→4, 100→3, 150→2, 200→1.
    fn ramp_frame() -> GroundTruthFrame {
        let reds = [60u8, 120, 160, 220];
        GroundTruthFrame {
            game: Game::Brookhaven,
            image: RgbImage::from_fn(4, 1, |x, _| Rgb([reds[x as usize], 255, 255])),
            lines: vec!["alpha: one two".into(), "bravo: three four".into()],
        }
    }

    fn search_with(script: &[(usize, Vec<&'static str>)]) -> CandidateScore {
        let engine = InkCountEngine(script.iter().cloned().collect());
        let out = search_thresholds(&[ramp_frame()], &engine, &RgbThreshold::candidates(), 0.8).unwrap();
        assert_eq!(out.len(), 1);
        let g = &out[&Game::Brookhaven];
        assert_eq!(g.evaluated.len(), 64);
        g.best.clone()
    }

    #[test]
    fn search_prefers_higher_recall() {
        let best = search_with(&[
            (4, vec!["alpha: one two"]),
            (3, vec!["alpha: one two"]),
            (2, vec!["alpha: one two", "bravo: three four"]),
            (1, vec!["bravo: three four"]),
        ]);
        assert_eq!(best.threshold, RgbThreshold::new(150, 50, 50));
        assert_eq!(best.recall, 1.0);
    }

    #[test]
    fn search_breaks_recall_ties_by_ams() {
        let best = search_with(&[
            (3, vec!["alpha: one tw0", "bravo: three four"]),
            (2, vec!["alpha: one two", "bravo: three four"]),
        ]);
        assert_eq!(best.threshold, RgbThreshold::new(150, 50, 50));
        assert_eq!(best.ams, 1.0);
    }

    #[test]
    fn search_breaks_full_ties_lexicographically() {
        let best = search_with(&[
            (3, vec!["alpha: one two", "bravo: three four"]),
            (2, vec!["alpha: one two", "bravo: three four"]),
        ]);
        assert_eq!(best.threshold, RgbThreshold::new(100, 50, 50));
    }

    #[test]
    fn search_rejects_empty_inputs() {
        let engine = InkCountEngine(BTreeMap::new());
        let mut f = ramp_frame();
        assert!(search_thresholds(&[f.clone()], &engine, &[], 0.8).is_err());
        f.lines.clear();
        assert!(search_thresholds(&[f], &engine, &RgbThreshold::candidates(), 0.8).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn otsu_equals_sweep(px in prop::collection::vec(any::<u8>(), 256)) {
            let img = gray_from(&px, 16);
            prop_assert_eq!(otsu_threshold(&img), sweep_otsu(&img));
        }

        #[test]
        fn inversion_is_involution(px in prop::collection::vec(any::<u8>(), 64)) {
            let img = gray_from(&px, 8);
            prop_assert_eq!(invert(&invert(&img)), img);
        }

        #[test]
        fn variants_are_deterministic(px in prop::collection::vec(any::<u8>(), 3 * 48)) {
            let img = RgbImage::from_raw(8, 6, px).unwrap();
            let a = make_variants(&img);
            let b = make_variants(&img);
            for (x, y) in a.variants.iter().zip(&b.variants) {
                prop_assert_eq!(&x.image, &y.image);
            }
        }

        #[test]
        fn suppression_is_two_tone(px in prop::collection::vec(any::<u8>(), 3 * 36),
                                   r in 0usize..4, g in 0usize..4, b in 0usize..4) {
            let img = RgbImage::from_raw(6, 6, px).unwrap();
            let thr = RgbThreshold::new(THRESHOLD_CANDIDATES[r], THRESHOLD_CANDIDATES[g], THRESHOLD_CANDIDATES[b]);
            let out = suppress_background(&img, thr);
            prop_assert!(out.pixels().all(|p| *p == Rgb([0, 0, 0]) || *p == Rgb([255, 255, 255])));
        }
    }
}
