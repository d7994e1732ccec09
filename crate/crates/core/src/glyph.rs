//! Fixed-pitch bitmap font: a renderer for synthetic chat frames and a
//! template-matching recognizer that speaks the OCR adapter contract.
//!
//! Glyphs are 5×7 cells drawn at an integer scale inside a cell with one
//! blank column on each side. Recognition binarizes with Otsu (ink is the
//! minority class, so either polarity works), splits rows into text bands,
//! locks onto the cell grid and scores each cell against every template by
//! Dice overlap. Confidence is the Dice score scaled to 0–100, so clean
//! renderings read back at 100 and background clutter lowers it.

use image::{GrayImage, Rgb, RgbImage};

use crate::error::Result;
use crate::imgproc;
use crate::ocr::{BBox, OcrEngine, OcrResult, OcrWord};

pub const GLYPH_W: u32 = 5;
pub const GLYPH_H: u32 = 7;

#[rustfmt::skip]
const FONT: &[(char, [&str; 7])] = &[
    ('A', [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('B', ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."]),
    ('C', [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."]),
    ('D', ["####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."]),
    ('E', ["#####", "#....", "#....", "####.", "#....", "#....", "#####"]),
    ('F', ["#####", "#....", "#....", "####.", "#....", "#....", "#...."]),
    ('G', [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"]),
    ('H', ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"]),
    ('I', [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('J', ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."]),
    ('K', ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"]),
    ('L', ["#....", "#....", "#....", "#....", "#....", "#....", "#####"]),
    ('M', ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"]),
    ('N', ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"]),
    ('O', [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('P', ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('Q', [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"]),
    ('R', ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"]),
    ('S', [".####", "#....", "#....", ".###.", "....#", "....#", "####."]),
    ('T', ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('U', ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."]),
    ('V', ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('W', ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."]),
    ('X', ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"]),
    ('Y', ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."]),
    ('Z', ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"]),
    ('a', [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"]),
    ('b', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."]),
    ('c', [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."]),
    ('d', ["....#", "....#", ".##.#", "#..##", "#...#", "#...#", ".####"]),
    ('e', [".....", ".....", ".###.", "#...#", "#####", "#....", ".###."]),
    ('f', ["..##.", ".#..#", ".#...", "###..", ".#...", ".#...", ".#..."]),
    ('g', [".....", ".####", "#...#", "#...#", ".####", "....#", ".###."]),
    ('h', ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "#...#"]),
    ('i', ["..#..", ".....", ".##..", "..#..", "..#..", "..#..", ".###."]),
    ('j', ["...#.", ".....", "..##.", "...#.", "...#.", "#..#.", ".##.."]),
    ('k', ["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#."]),
    ('l', [".##..", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('m', [".....", ".....", "##.#.", "#.#.#", "#.#.#", "#...#", "#...#"]),
    ('n', [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"]),
    ('o', [".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###."]),
    ('p', [".....", ".....", "####.", "#...#", "####.", "#....", "#...."]),
    ('q', [".....", ".....", ".##.#", "#..##", ".####", "....#", "....#"]),
    ('r', [".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."]),
    ('s', [".....", ".....", ".###.", "#....", ".###.", "....#", "####."]),
    ('t', [".#...", ".#...", "###..", ".#...", ".#...", ".#..#", "..##."]),
    ('u', [".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#"]),
    ('v', [".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#.."]),
    ('w', [".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#."]),
    ('x', [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"]),
    ('y', [".....", ".....", "#...#", "#...#", ".####", "....#", ".###."]),
    ('z', [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"]),
    ('0', [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."]),
    ('1', ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."]),
    ('2', [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"]),
    ('3', ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."]),
    ('4', ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."]),
    ('5', ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."]),
    ('6', ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."]),
    ('7', ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."]),
    ('8', [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."]),
    ('9', [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."]),
    ('.', [".....", ".....", ".....", ".....", ".....", ".##..", ".##.."]),
    (',', [".....", ".....", ".....", ".....", ".##..", "..#..", ".#..."]),
    ('!', ["..#..", "..#..", "..#..", "..#..", "..#..", ".....", "..#.."]),
    ('?', [".###.", "#...#", "....#", "...#.", "..#..", ".....", "..#.."]),
    (':', [".....", ".##..", ".##..", ".....", ".##..", ".##..", "....."]),
    (';', [".....", ".##..", ".##..", ".....", ".##..", "..#..", ".#..."]),
    ('\'', ["..#..", "..#..", ".#...", ".....", ".....", ".....", "....."]),
    ('"', [".#.#.", ".#.#.", ".#.#.", ".....", ".....", ".....", "....."]),
    ('-', [".....", ".....", ".....", "#####", ".....", ".....", "....."]),
    ('_', [".....", ".....", ".....", ".....", ".....", ".....", "#####"]),
    ('[', [".###.", ".#...", ".#...", ".#...", ".#...", ".#...", ".###."]),
    (']', [".###.", "...#.", "...#.", "...#.", "...#.", "...#.", ".###."]),
    ('(', ["...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."]),
    (')', [".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."]),
    ('|', ["..#..", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."]),
    ('#', [".#.#.", ".#.#.", "#####", ".#.#.", "#####", ".#.#.", ".#.#."]),
    ('@', [".###.", "#...#", "#.###", "#.#.#", "#.###", "#....", ".####"]),
    ('/', ["....#", "...#.", "...#.", "..#..", ".#...", ".#...", "#...."]),
    ('&', [".##..", "#..#.", "#.#..", ".#...", "#.#.#", "#..#.", ".##.#"]),
    ('+', [".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."]),
    ('=', [".....", ".....", "#####", ".....", "#####", ".....", "....."]),
    ('*', [".....", "..#..", "#.#.#", ".###.", "#.#.#", "..#..", "....."]),
    ('$', ["..#..", ".####", "#.#..", ".###.", "..#.#", "####.", "..#.."]),
    ('%', ["##...", "##..#", "...#.", "..#..", ".#...", "#..##", "...##"]),
    ('<', ["...#.", "..#..", ".#...", "#....", ".#...", "..#..", "...#."]),
    ('>', [".#...", "..#..", "...#.", "....#", "...#.", "..#..", ".#..."]),
];

fn glyph(c: char) -> Option<&'static [&'static str; 7]> {
    FONT.iter().find(|(g, _)| *g == c).map(|(_, rows)| rows)
}

/// Characters the font can draw (besides space).
pub fn charset() -> impl Iterator<Item = char> {
    FONT.iter().map(|(c, _)| *c)
}

pub fn supports(c: char) -> bool {
    c == ' ' || glyph(c).is_some()
}

/// Cell geometry at a given integer scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metrics {
    pub scale: u32,
}

impl Metrics {
    pub const fn new(scale: u32) -> Self {
        Metrics { scale }
    }

    pub fn cell_w(&self) -> u32 {
        (GLYPH_W + 2) * self.scale
    }

    pub fn cell_h(&self) -> u32 {
        GLYPH_H * self.scale
    }

    pub fn text_width(&self, text: &str) -> u32 {
        text.chars().count() as u32 * self.cell_w()
    }
}

impl Default for Metrics {
    fn default() -> Self {
        Metrics::new(2)
    }
}

/// Draws `text` with its first cell's top-left corner at `(x, y)`. Pixels
/// falling outside the image are clipped; unsupported characters render as
/// blank cells.
pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>, m: Metrics) {
    let s = m.scale as i64;
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        let gx = x + i as i64 * m.cell_w() as i64 + s;
        for (ry, row) in rows.iter().enumerate() {
            for (rx, b) in row.bytes().enumerate() {
                if b != b'#' {
                    continue;
                }
                for dy in 0..s {
                    for dx in 0..s {
                        let px = gx + rx as i64 * s + dx;
                        let py = y + ry as i64 * s + dy;
                        if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                            img.put_pixel(px as u32, py as u32, color);
                        }
                    }
                }
            }
        }
    }
}

/// Cell-sized ink mask, row-major, `cell_w * cell_h` bits.
#[derive(Clone)]
struct Mask {
    bits: Vec<u64>,
    ones: u32,
}

impl Mask {
    fn zeros(n: usize) -> Self {
        Mask {
            bits: vec![0; n.div_ceil(64)],
            ones: 0,
        }
    }

    fn set(&mut self, i: usize) {
        let (w, b) = (i / 64, i % 64);
        if self.bits[w] & (1 << b) == 0 {
            self.bits[w] |= 1 << b;
            self.ones += 1;
        }
    }

    fn overlap(&self, other: &Mask) -> u32 {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }
}

/// Template-matching recognizer for the bitmap font.
pub struct GlyphEngine {
    metrics: Metrics,
    templates: Vec<(char, Mask)>,
    /// Cells with fewer ink pixels read as spaces.
    min_cell_ink: u32,
}

impl GlyphEngine {
    pub fn new(metrics: Metrics) -> Self {
        let (cw, ch) = (metrics.cell_w(), metrics.cell_h());
        let s = metrics.scale;
        let templates = FONT
            .iter()
            .map(|(c, rows)| {
                let mut m = Mask::zeros((cw * ch) as usize);
                for (ry, row) in rows.iter().enumerate() {
                    for (rx, b) in row.bytes().enumerate() {
                        if b != b'#' {
                            continue;
                        }
                        for dy in 0..s {
                            for dx in 0..s {
                                let x = s + rx as u32 * s + dx;
                                let y = ry as u32 * s + dy;
                                m.set((y * cw + x) as usize);
                            }
                        }
                    }
                }
                (*c, m)
            })
            .collect();
        GlyphEngine {
            metrics,
            templates,
            min_cell_ink: metrics.scale * metrics.scale,
        }
    }

    /// Words with TSV-style fields; `line_num` counts text bands from 1.
    pub fn recognize_words(&self, img: &GrayImage) -> Vec<OcrWord> {
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Vec::new();
        }
        let t = imgproc::otsu_threshold(img);
        let bright = img.pixels().filter(|p| p[0] > t).count();
        let dark = img.pixels().count() - bright;
        if bright == 0 || dark == 0 {
            return Vec::new();
        }
        let ink_is_bright = bright < dark;
        let ink: Vec<bool> = img.pixels().map(|p| (p[0] > t) == ink_is_bright).collect();
        let at = |x: u32, y: u32| ink[(y * w + x) as usize];

        let cw = self.metrics.cell_w();
        let ch = self.metrics.cell_h();
        let s = self.metrics.scale;
        let mut words = Vec::new();
        // Every glyph sits on the bottom cell row, so a band's last ink row
        // fixes the vertical origin. Bands taller than one cell are read as
        // stacked cell rows from the bottom up.
        let mut rows: Vec<(u32, u32, i64)> = Vec::new();
        for (top, bottom) in row_bands(&ink, w, h, 2) {
            if bottom + 1 - top < 2 * s {
                continue;
            }
            let n = ((bottom + 1 - top + ch / 2) / ch).max(1) as i64;
            for k in (0..n).rev() {
                let y0 = bottom as i64 + 1 - ch as i64 * (k + 1);
                let sub_top = y0.max(top as i64) as u32;
                let sub_bottom = (y0 + ch as i64 - 1) as u32;
                rows.push((sub_top, sub_bottom, y0));
            }
        }
        let mut line_num = 0;
        for (top, bottom, y0) in rows {
            line_num += 1;
            let cols: Vec<u32> = (0..w)
                .map(|x| (top..=bottom).filter(|&y| at(x, y)).count() as u32)
                .collect();
            let Some(first) = cols.iter().position(|&c| c > 0) else { continue };
            let last = cols.iter().rposition(|&c| c > 0).unwrap_or(first);

            // Grid phase: margins (first and last `scale` columns of each
            // cell) should carry as little ink as possible.
            let phase = (0..cw)
                .min_by_key(|&p| {
                    let mut margin_ink = 0;
                    for (x, &c) in cols.iter().enumerate() {
                        let off = (x as u32 + cw - p) % cw;
                        if off < s || off >= cw - s {
                            margin_ink += c;
                        }
                    }
                    margin_ink
                })
                .unwrap_or(0) as i64;
            let first_cell = (first as i64 - phase).div_euclid(cw as i64);
            let last_cell = (last as i64 - phase).div_euclid(cw as i64);

            let mut cur: Option<(String, Vec<f64>, i64, i64)> = None;
            let flush = |cur: &mut Option<(String, Vec<f64>, i64, i64)>, words: &mut Vec<OcrWord>| {
                if let Some((text, confs, x0, x1)) = cur.take() {
                    let conf = confs.iter().sum::<f64>() / confs.len() as f64;
                    words.push(OcrWord {
                        text,
                        confidence: (conf * 100.0).round() / 100.0,
                        line_num,
                        bbox: BBox {
                            left: x0.max(0) as u32,
                            top: y0.max(0) as u32,
                            width: (x1 - x0).max(0) as u32,
                            height: ch,
                        },
                    });
                }
            };
            for cell in first_cell..=last_cell {
                let cx = phase + cell * cw as i64;
                let mut m = Mask::zeros((cw * ch) as usize);
                for yy in 0..ch as i64 {
                    let y = y0 + yy;
                    if y < 0 || y >= h as i64 {
                        continue;
                    }
                    for xx in 0..cw as i64 {
                        let x = cx + xx;
                        if x >= 0 && x < w as i64 && at(x as u32, y as u32) {
                            m.set((yy * cw as i64 + xx) as usize);
                        }
                    }
                }
                if m.ones < self.min_cell_ink {
                    flush(&mut cur, &mut words);
                    continue;
                }
                let (c, dice) = self
                    .templates
                    .iter()
                    .map(|(c, t)| (*c, 2.0 * t.overlap(&m) as f64 / (t.ones + m.ones) as f64))
                    .fold((' ', -1.0), |best, x| if x.1 > best.1 { x } else { best });
                let entry = cur.get_or_insert_with(|| (String::new(), Vec::new(), cx, cx));
                entry.0.push(c);
                entry.1.push(100.0 * dice);
                entry.3 = cx + cw as i64;
            }
            flush(&mut cur, &mut words);
        }
        words
    }
}

impl Default for GlyphEngine {
    fn default() -> Self {
        GlyphEngine::new(Metrics::default())
    }
}

impl OcrEngine for GlyphEngine {
    fn recognize(&self, image: &GrayImage) -> Result<OcrResult> {
        Ok(OcrResult::from_words(self.recognize_words(image)))
    }
}

/// Inclusive `(top, bottom)` row ranges of ink separated by at least
/// `min_gap` empty rows.
fn row_bands(ink: &[bool], w: u32, h: u32, min_gap: u32) -> Vec<(u32, u32)> {
    let row_ink: Vec<bool> = (0..h)
        .map(|y| ink[(y * w) as usize..((y + 1) * w) as usize].iter().any(|&b| b))
        .collect();
    let mut bands = Vec::new();
    let mut y = 0;
    while y < h {
        if !row_ink[y as usize] {
            y += 1;
            continue;
        }
        let top = y;
        let mut last = y;
        let mut gap = 0;
        y += 1;
        while y < h {
            if row_ink[y as usize] {
                last = y;
                gap = 0;
            } else {
                gap += 1;
                if gap >= min_gap {
                    break;
                }
            }
            y += 1;
        }
        bands.push((top, last));
    }
    bands
}
