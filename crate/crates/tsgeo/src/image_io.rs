//! 8-bit grayscale PGM (P5) and PNG export of rendered channels.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use tsgeo_core::image::{ChannelImage, SeriesImage};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Pgm => "pgm",
            Self::Png => "png",
        }
    }
}

impl FromStr for ImageFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pgm" => Ok(Self::Pgm),
            "png" => Ok(Self::Png),
            _ => Err(format!("unknown image format `{s}` (expected pgm or png)")),
        }
    }
}

/// Intensity in `[0,1]` to a byte, rounding to nearest.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(img: &ChannelImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels().iter().map(|&v| to_byte(v)));
    out
}

pub fn write_image(path: &Path, img: &ChannelImage, format: ImageFormat) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        ImageFormat::Pgm => w.write_all(&encode_pgm(img)).map_err(io_err(path))?,
        ImageFormat::Png => {
            let fail = |e: png::EncodingError| Error::Format { path: path.to_path_buf(), msg: e.to_string() };
            let mut enc = png::Encoder::new(&mut w, img.width() as u32, img.height() as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let bytes: Vec<u8> = img.pixels().iter().map(|&v| to_byte(v)).collect();
            enc.write_header().map_err(fail)?.write_image_data(&bytes).map_err(fail)?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Writes `<dir>/<stem>_ch<k>.<ext>` for every channel and returns the paths.
pub fn export_series_image(dir: &Path, stem: &str, img: &SeriesImage, format: ImageFormat) -> Result<Vec<PathBuf>> {
    img.channels
        .iter()
        .enumerate()
        .map(|(k, ch)| {
            let path = dir.join(format!("{stem}_ch{k}.{}", format.extension()));
            write_image(&path, ch, format).map(|()| path)
        })
        .collect()
}
