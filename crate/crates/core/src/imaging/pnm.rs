//! Binary PGM (`P5`) / PPM (`P6`) reading and writing, and PNG reading.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::{Error, Result};

/// Encodes as `P5` (grey) or `P6` (RGB) with 8-bit samples.
pub fn encode(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported netpbm magic '{other}'"))),
    };
    let width = parse_num(&next_token(bytes, &mut pos)?)?;
    let height = parse_num(&next_token(bytes, &mut pos)?)?;
    let maxval = parse_num(&next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * channels;
    let bytes_per = if maxval < 256 { 1 } else { 2 };
    let raster = bytes
        .get(pos..pos + n * bytes_per)
        .ok_or_else(|| Error::Format("truncated raster".into()))?;
    let scale = maxval as f64;
    let data = if bytes_per == 1 {
        raster.iter().map(|&b| (b as f64 / scale).min(1.0)).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f64 / scale).min(1.0))
            .collect()
    };
    Image::from_data(width, height, channels, data)
}

pub fn write(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(img))?;
    w.flush()?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Image> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Reads a PNG as grey or RGB (alpha dropped, 16-bit reduced to 8-bit).
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let keep = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => 1,
        _ => 3,
    };
    let mut data = Vec::with_capacity(w * h * keep);
    for px in buf[..w * h * src_channels].chunks_exact(src_channels) {
        data.extend(px[..keep].iter().map(|&b| b as f64 / 255.0));
    }
    Image::from_data(w, h, keep, data)
}

/// Dispatches on extension: `.png` via [`read_png`], anything else as netpbm.
pub fn read_any(path: impl AsRef<Path>) -> Result<Image> {
    let p = path.as_ref();
    match p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "png" => read_png(p),
        _ => read(p),
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated netpbm header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num(tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::Format(format!("bad netpbm header field '{tok}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_on_8bit_grid() {
        let img = Image::from_fn(5, 3, |x, y| ((x * 37 + y * 11) % 256) as f64 / 255.0);
        let back = decode(&encode(&img)).unwrap();
        assert!(img.max_abs_diff(&back) < 1e-12);
        assert_eq!(&encode(&img)[..2], b"P5");
    }

    #[test]
    fn ppm_with_comment() {
        let mut bytes = b"P6\n# comment\n1 1\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.channels(), 3);
        assert!((img.get(0, 0, 2) - 0.2).abs() < 1e-12);
    }

    #[test]
    fn truncated_raster_is_an_error() {
        assert!(decode(b"P5 4 4 255\n\x00\x01").is_err());
        assert!(decode(b"P3 1 1 255\n0").is_err());
    }
}
