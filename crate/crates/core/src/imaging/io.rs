//! Binary PGM (P5) / PPM (P6) and 8-bit PNG.

use std::fs;
use std::path::Path;

use super::{to_grayscale, GrayImage, RgbImage};
use crate::error::{Error, Result};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Parses the `P5`/`P6` header and returns `(magic, width, height, payload offset)`.
fn parse_pnm_header(bytes: &[u8]) -> Result<(&[u8], usize, usize, usize)> {
    let magic = bytes
        .get(..2)
        .ok_or_else(|| Error::Image("file too short for a PNM header".into()))?;
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Image("truncated PNM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("malformed PNM header field".into()))?;
    }
    // Exactly one whitespace byte separates maxval from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Image("missing whitespace after PNM maxval".into()));
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Image(format!(
            "unsupported PNM maxval {maxval}, need 255"
        )));
    }
    Ok((magic, w, h, pos + 1))
}

fn decode_pnm_gray(bytes: &[u8]) -> Result<GrayImage> {
    let (_, w, h, off) = parse_pnm_header(bytes)?;
    let raster = bytes
        .get(off..off + w * h)
        .ok_or_else(|| Error::Image(format!("PGM raster shorter than {w}x{h}")))?;
    GrayImage::new(w, h, raster.to_vec())
}

fn decode_pnm_rgb(bytes: &[u8]) -> Result<RgbImage> {
    let (_, w, h, off) = parse_pnm_header(bytes)?;
    let raster = bytes
        .get(off..off + 3 * w * h)
        .ok_or_else(|| Error::Image(format!("PPM raster shorter than {w}x{h}")))?;
    RgbImage::new(w, h, raster.to_vec())
}

enum Decoded {
    Gray(GrayImage),
    Rgb(RgbImage),
}

fn decode_png(bytes: &[u8]) -> Result<Decoded> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Image(format!("PNG: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Image(format!("PNG: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    use png::ColorType::*;
    Ok(match info.color_type {
        Grayscale => Decoded::Gray(GrayImage::new(w, h, px.to_vec())?),
        GrayscaleAlpha => Decoded::Gray(GrayImage::new(
            w,
            h,
            px.chunks_exact(2).map(|c| c[0]).collect(),
        )?),
        Rgb => Decoded::Rgb(RgbImage::new(w, h, px.to_vec())?),
        Rgba => Decoded::Rgb(RgbImage::new(
            w,
            h,
            px.chunks_exact(4)
                .flat_map(|c| [c[0], c[1], c[2]])
                .collect(),
        )?),
        Indexed => return Err(Error::Image("PNG palette not expanded".into())),
    })
}

fn decode_any(bytes: &[u8]) -> Result<Decoded> {
    match bytes.get(..2) {
        Some(b"P5") => decode_pnm_gray(bytes).map(Decoded::Gray),
        Some(b"P6") => decode_pnm_rgb(bytes).map(Decoded::Rgb),
        _ if bytes.starts_with(PNG_SIGNATURE) => decode_png(bytes),
        _ => Err(Error::Image(
            "unrecognised image format (need binary PGM/PPM or PNG)".into(),
        )),
    }
}

/// Decodes PGM, PPM or PNG; colour input goes through BT.601 luma.
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    Ok(match decode_any(bytes)? {
        Decoded::Gray(g) => g,
        Decoded::Rgb(rgb) => to_grayscale(&rgb),
    })
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    decode_gray(&read(path)?).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    match decode_any(&read(path)?)? {
        Decoded::Rgb(rgb) => Ok(rgb),
        Decoded::Gray(g) => Ok(RgbImage::from_gray(&g)),
    }
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Image(format!("PNG: {e}")))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Image(format!("PNG: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::Image(format!("PNG: {e}")))?;
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes PNG for a `.png` extension, binary PGM otherwise.
pub fn save_gray(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_png(path) {
        encode_png(
            img.width(),
            img.height(),
            png::ColorType::Grayscale,
            img.pixels(),
        )?
    } else {
        encode_pgm(img)
    };
    write(path, &bytes)
}

/// Writes PNG for a `.png` extension, binary PPM otherwise.
pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_png(path) {
        encode_png(img.width(), img.height(), png::ColorType::Rgb, img.data())?
    } else {
        encode_ppm(img)
    };
    write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comments() {
        let img = GrayImage::from_fn(5, 3, |x, y| (x * 40 + y) as u8);
        let bytes = encode_pgm(&img);
        assert_eq!(decode_gray(&bytes).unwrap(), img);

        let mut commented = b"P5\n# scanner export\n5 3\n# depth\n255\n".to_vec();
        commented.extend_from_slice(img.pixels());
        assert_eq!(decode_gray(&commented).unwrap(), img);
    }

    #[test]
    fn pnm_errors() {
        assert!(decode_gray(b"P5\n4 4\n65535\n").is_err());
        assert!(decode_gray(b"P5\n4 4\n255\n\x00\x01").is_err());
        assert!(decode_gray(b"GIF89a").is_err());
        assert!(decode_gray(b"P5\n4").is_err());
    }

    #[test]
    fn ppm_decodes_to_luma() {
        let rgb = RgbImage::new(2, 1, vec![255, 0, 0, 10, 10, 10]).unwrap();
        assert_eq!(decode_gray(&encode_ppm(&rgb)).unwrap().pixels(), &[76, 10]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(6, 4, |x, y| (x * 30 + y * 3) as u8);
        let p = dir.path().join("a.png");
        save_gray(&p, &img).unwrap();
        assert_eq!(load_gray(&p).unwrap(), img);

        let rgb = RgbImage::new(1, 2, vec![1, 2, 3, 250, 128, 0]).unwrap();
        let p = dir.path().join("c.png");
        save_rgb(&p, &rgb).unwrap();
        assert_eq!(load_rgb(&p).unwrap(), rgb);
        let p = dir.path().join("c.ppm");
        save_rgb(&p, &rgb).unwrap();
        assert_eq!(load_rgb(&p).unwrap(), rgb);
    }
}
