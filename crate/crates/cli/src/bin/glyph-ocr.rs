//! Recognizes bitmap-font text in an image and prints word-level TSV, so the
//! built-in recognizer can stand in wherever an external OCR command is
//! configured.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use chatscope_core::glyph::{GlyphEngine, Metrics};
use chatscope_core::ocr::format_tsv;

#[derive(Parser)]
#[command(name = "glyph-ocr", version)]
struct Args {
    image: PathBuf,
    /// Glyph scale the text was rendered at.
    #[arg(long, default_value_t = 2)]
    scale: u32,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let img = match image::open(&args.image) {
        Ok(i) => i.to_luma8(),
        Err(e) => {
            eprintln!("glyph-ocr: {}: {e}", args.image.display());
            return ExitCode::FAILURE;
        }
    };
    let words = GlyphEngine::new(Metrics::new(args.scale.max(1))).recognize_words(&img);
    print!("{}", format_tsv(&words));
    ExitCode::SUCCESS
}
