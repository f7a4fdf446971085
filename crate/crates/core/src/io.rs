//! PNG and binary PGM/PPM readers and writers.
//!
//! Samples are scaled to `[0, 1]` by the format's maximum value on load.
//! Images are saved as 8-bit with `round(v * 255)` quantization; depth maps
//! additionally have a 16-bit grayscale PNG writer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{BokehError, Result};
use crate::image::{DepthMap, Image};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads an 8/16-bit PNG or a binary PGM (`P5`) / PPM (`P6`).
///
/// Grayscale loads as one channel, color as three; alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| BokehError::io(path, e))?;
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes, path)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(&bytes, path)
    } else {
        Err(BokehError::UnsupportedFormat(format!(
            "{} is neither PNG nor binary PGM/PPM",
            path.display()
        )))
    }
}

/// Loads a single-channel depth map (8- or 16-bit).
pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    DepthMap::from_image(&load_image(path)?)
}

#[inline]
pub fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[inline]
pub fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16
}

/// Writes `img` as 8-bit data. `.pgm`/`.ppm` extensions select binary PNM,
/// anything else PNG.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let channels = img.channels();
    if channels != 1 && channels != 3 {
        return Err(BokehError::UnsupportedFormat(format!(
            "cannot save {channels}-channel image"
        )));
    }
    let interleaved = interleave8(img);
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pgm") | Some("ppm") => {
            let magic = if channels == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
            out.extend_from_slice(&interleaved);
            std::fs::write(path, out).map_err(|e| BokehError::io(path, e))
        }
        _ => {
            let color = if channels == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            };
            write_png(
                path,
                img.width(),
                img.height(),
                color,
                png::BitDepth::Eight,
                &interleaved,
            )
        }
    }
}

/// Writes a depth map as 16-bit grayscale PNG.
pub fn save_depth16(depth: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = depth
        .values()
        .iter()
        .flat_map(|&v| quantize16(v).to_be_bytes())
        .collect();
    write_png(
        path.as_ref(),
        depth.width(),
        depth.height(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

fn interleave8(img: &Image) -> Vec<u8> {
    let n = img.pixels();
    let c = img.channels();
    let mut out = vec![0u8; n * c];
    for ch in 0..c {
        for (i, &v) in img.plane(ch).iter().enumerate() {
            out[i * c + ch] = quantize8(v);
        }
    }
    out
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).map_err(|e| BokehError::io(path, e))?;
    let encode_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => BokehError::io(path, io),
        other => BokehError::UnsupportedFormat(other.to_string()),
    };
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(depth);
    let mut writer = encoder.write_header().map_err(encode_err)?;
    writer.write_image_data(data).map_err(encode_err)?;
    writer.finish().map_err(encode_err)
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let malformed = |e: png::DecodingError| BokehError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let (color, depth) = {
        let info = decoder.read_header_info().map_err(malformed)?;
        (info.color_type, info.bit_depth)
    };
    let bits = match depth {
        png::BitDepth::Eight => 8,
        png::BitDepth::Sixteen => 16,
        other => return Err(BokehError::UnsupportedBitDepth(other as u32)),
    };
    if color == png::ColorType::Indexed {
        decoder.set_transformations(png::Transformations::EXPAND);
    }
    let mut reader = decoder.read_info().map_err(malformed)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| BokehError::UnsupportedFormat("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(malformed)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let (stored, keep) = match frame.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(BokehError::UnsupportedFormat("unexpanded palette".into())),
    };
    let bits = if frame.bit_depth == png::BitDepth::Sixteen {
        16
    } else {
        bits
    };
    let samples = &buf[..frame.buffer_size()];
    Ok(deinterleave(samples, width, height, stored, keep, bits))
}

fn deinterleave(samples: &[u8], width: usize, height: usize, stored: usize, keep: usize, bits: u32) -> Image {
    let n = width * height;
    let mut data = vec![0.0f32; n * keep];
    if bits == 16 {
        for i in 0..n {
            for c in 0..keep {
                let o = 2 * (i * stored + c);
                let v = u16::from_be_bytes([samples[o], samples[o + 1]]);
                data[c * n + i] = v as f32 / 65535.0;
            }
        }
    } else {
        for i in 0..n {
            for c in 0..keep {
                data[c * n + i] = samples[i * stored + c] as f32 / 255.0;
            }
        }
    }
    Image::from_raw(width, height, keep, data)
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<Image> {
    let malformed = |reason: &str| BokehError::Decode {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut header = [0usize; 3];
    for field in header.iter_mut() {
        // whitespace and '#' comments between fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("bad header field"))?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing raster separator"));
    }
    pos += 1;
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(BokehError::ZeroDimension);
    }
    let bits = match maxval {
        1..=255 => 8,
        256..=65535 => 16,
        _ => return Err(malformed("maxval out of range")),
    };
    let bytes_per = if bits == 16 { 2 } else { 1 };
    let need = width * height * channels * bytes_per;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| malformed("truncated raster"))?;
    let n = width * height;
    let mut data = vec![0.0f32; n * channels];
    let scale = maxval as f32;
    for i in 0..n {
        for c in 0..channels {
            let o = (i * channels + c) * bytes_per;
            let v = if bits == 16 {
                u16::from_be_bytes([raster[o], raster[o + 1]]) as f32
            } else {
                raster[o] as f32
            };
            if v > scale {
                return Err(malformed("sample exceeds maxval"));
            }
            data[c * n + i] = v / scale;
        }
    }
    Ok(Image::from_raw(width, height, channels, data))
}

/// Reads a whole file; small helper for formats parsed elsewhere.
pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut out))
        .map_err(|e| BokehError::io(path, e))?;
    Ok(out)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    File::create(path)
        .and_then(|f| {
            let mut w = BufWriter::new(f);
            w.write_all(bytes)?;
            w.flush()
        })
        .map_err(|e| BokehError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, c, |_, _, _| rng.random::<f32>())
    }

    #[test]
    fn quantization_convention() {
        assert_eq!(quantize8(1.0), 255);
        assert_eq!(quantize8(0.0), 0);
        assert_eq!(quantize8(0.5), 128);
    }

    #[test]
    fn png_extremes_map_to_unit_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = Image::from_planar(2, 1, 1, vec![0.0, 1.0]).unwrap();
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn quantized_image_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        for (i, name) in ["a.png", "a.ppm"].iter().enumerate() {
            let raw = random_image(i as u64, 9, 7, 3);
            let q = Image::from_fn(9, 7, 3, |c, x, y| quantize8(raw.get(c, x, y)) as f32 / 255.0);
            let p = dir.path().join(name);
            save_image(&q, &p).unwrap();
            assert_eq!(load_image(&p).unwrap(), q);
        }
    }

    #[test]
    fn round_trip_error_is_half_a_step() {
        let dir = tempfile::tempdir().unwrap();
        for (c, name) in [(1, "g.png"), (3, "c.png"), (1, "g.pgm")] {
            let img = random_image(42, 16, 11, c);
            let p = dir.path().join(name);
            save_image(&img, &p).unwrap();
            let back = load_image(&p).unwrap();
            assert!(img.max_abs_diff(&back) <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn depth_round_trips_at_16_bits() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let vals: Vec<f32> = (0..30).map(|i| i as f32 / 29.0).collect();
        let d = DepthMap::new(6, 5, vals).unwrap();
        save_depth16(&d, &p).unwrap();
        let back = load_depth(&p).unwrap();
        for (a, b) in d.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }

    #[test]
    fn sixteen_bit_pgm_with_comment() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.pgm");
        let mut bytes = b"P5\n# depth\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0xff, 0xff]);
        std::fs::write(&p, bytes).unwrap();
        assert_eq!(load_image(&p).unwrap().data(), &[0.0, 1.0]);
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_image(dir.path().join("missing.png")),
            Err(BokehError::Io { .. })
        ));

        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"GIF89a....").unwrap();
        assert!(matches!(load_image(&junk), Err(BokehError::UnsupportedFormat(_))));

        // 1-bit grayscale PNG
        let low = dir.path().join("low.png");
        {
            let f = File::create(&low).unwrap();
            let mut enc = png::Encoder::new(BufWriter::new(f), 8, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::One);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0b1010_1010]).unwrap();
        }
        assert!(matches!(load_image(&low), Err(BokehError::UnsupportedBitDepth(1))));

        let trunc = dir.path().join("t.ppm");
        std::fs::write(&trunc, b"P6\n4 4\n255\n\x00\x01").unwrap();
        assert!(matches!(load_image(&trunc), Err(BokehError::Decode { .. })));

        let unwritable = dir.path().join("no/such/dir/x.png");
        assert!(matches!(
            save_image(&Image::new(1, 1, 1), unwritable),
            Err(BokehError::Io { .. })
        ));
    }

    #[test]
    fn rgba_drops_alpha() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgba.png");
        {
            let f = File::create(&p).unwrap();
            let mut enc = png::Encoder::new(BufWriter::new(f), 1, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[255, 0, 51, 7]).unwrap();
        }
        let img = load_image(&p).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[1.0, 0.0, 0.2]);
    }
}
