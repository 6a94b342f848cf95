//! Datasets: IDX and PGM files, degradation synthesis, patches and splits.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{check_dim, io_err, Error, Result};
use crate::image::{Image, Measurement};
use crate::operators::{DegradationOperator, LinearMap};
use crate::rng::SeededRng;

/// IDX element type for unsigned bytes.
pub const IDX_U8: u8 = 0x08;
/// IDX element type for big-endian 64-bit floats.
pub const IDX_F64: u8 = 0x0E;

/// A clean image and its measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub clean: Image,
    pub degraded: Measurement,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
    pub degradation: DegradationOperator,
    pub noise_alpha: f64,
    pub seed: u64,
}

impl Dataset {
    /// Degrades every image with its own stream `(seed, index)`.
    pub fn synthesize(
        clean: Vec<Image>,
        degradation: DegradationOperator,
        noise_alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let pairs = clean
            .into_par_iter()
            .enumerate()
            .map(|(i, img)| {
                let degraded = degrade(&img, &degradation, noise_alpha, SeededRng::stream(seed, i as u64))?;
                Ok(Pair { clean: img, degraded })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pairs,
            degradation,
            noise_alpha,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `z = A x + alpha * eta` with `eta` standard normal; no clipping.
pub fn degrade(clean: &Image, a: &DegradationOperator, alpha: f64, mut rng: SeededRng) -> Result<Measurement> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise level must be >= 0, got {alpha}")));
    }
    let mut z = a.apply(clean.pixels())?;
    if alpha > 0.0 {
        for v in &mut z {
            *v += alpha * rng.standard_normal();
        }
    }
    Measurement::new(z)
}

/// Seeded permutation, then contiguous train/validation/test slices.
pub fn split<T>(items: Vec<T>, train_frac: f64, val_frac: f64, seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let valid = |f: f64| (0.0..=1.0).contains(&f);
    if !valid(train_frac) || !valid(val_frac) || train_frac + val_frac > 1.0 + 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be in [0, 1] and sum to at most 1 (got {train_frac}, {val_frac})"
        )));
    }
    let n = items.len();
    let n_train = ((n as f64 * train_frac) + 1e-9).floor() as usize;
    let n_val = (((n as f64 * val_frac) + 1e-9).floor() as usize).min(n - n_train);
    let order = SeededRng::new(seed).permutation(n);
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| slots[i].take().expect("permutation visits each index once")).collect()
    };
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    Ok((train, val, test))
}

/// `count` random `q x q` crops.
pub fn extract_patches(image: &Image, q: usize, count: usize, seed: u64) -> Result<Vec<Image>> {
    let side = image.side();
    if q == 0 || q > side {
        return Err(Error::InvalidArgument(format!("patch size {q} must be in 1..={side}")));
    }
    let mut rng = SeededRng::new(seed);
    let positions = side - q + 1;
    (0..count)
        .map(|_| {
            let r = rng.below(positions);
            let c = rng.below(positions);
            let pixels = (0..q)
                .flat_map(|i| (0..q).map(move |j| (r + i, c + j)))
                .map(|(i, j)| image.get(i, j))
                .collect();
            Image::new(q, pixels)
        })
        .collect()
}

struct IdxHeader {
    kind: u8,
    dims: Vec<usize>,
    payload: usize,
}

fn parse_err(what: &'static str, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        what,
        offset,
        message: message.into(),
    }
}

fn idx_header(bytes: &[u8]) -> Result<IdxHeader> {
    if bytes.len() < 4 {
        return Err(parse_err("IDX", 0, format!("file has {} bytes, header needs 4", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(parse_err("IDX", 0, format!("bad magic {:02x}{:02x}{:02x}{:02x}", bytes[0], bytes[1], bytes[2], bytes[3])));
    }
    let kind = bytes[2];
    let rank = bytes[3] as usize;
    let header_len = 4 + 4 * rank;
    if bytes.len() < header_len {
        return Err(parse_err(
            "IDX",
            bytes.len(),
            format!("header needs {header_len} bytes for {rank} dimensions, file has {}", bytes.len()),
        ));
    }
    let dims: Vec<usize> = (0..rank)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    Ok(IdxHeader {
        kind,
        dims,
        payload: header_len,
    })
}

fn idx_payload<'a>(bytes: &'a [u8], header: &IdxHeader, elem: usize) -> Result<&'a [u8]> {
    let count = header
        .dims
        .iter()
        .try_fold(elem, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err("IDX", 4, "dimensions overflow"))?;
    let available = bytes.len() - header.payload;
    if available != count {
        return Err(parse_err(
            "IDX",
            header.payload + available.min(count),
            format!("payload: expected {count} bytes, found {available}"),
        ));
    }
    Ok(&bytes[header.payload..])
}

fn square_images(header: &IdxHeader, values: Vec<f64>) -> Result<Vec<Image>> {
    let (count, h, w) = match header.dims[..] {
        [count, h, w] => (count, h, w),
        _ => return Err(parse_err("IDX", 3, format!("expected 3 dimensions, found {}", header.dims.len()))),
    };
    if h != w {
        return Err(parse_err("IDX", 8, format!("images must be square, found {h}x{w}")));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if h == 0 {
        return Err(parse_err("IDX", 8, "zero image side"));
    }
    values
        .chunks(h * w)
        .map(|c| Image::new(h, c.to_vec()))
        .collect()
}

/// Parses an unsigned-byte image file (magic `0x00000803`).
pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    let header = idx_header(bytes)?;
    if header.kind != IDX_U8 || header.dims.len() != 3 {
        return Err(parse_err(
            "IDX",
            0,
            format!("expected magic 0x00000803, found type 0x{:02x} rank {}", header.kind, header.dims.len()),
        ));
    }
    let payload = idx_payload(bytes, &header, 1)?;
    square_images(&header, payload.iter().map(|&b| b as f64).collect())
}

/// Parses a label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let header = idx_header(bytes)?;
    if header.kind != IDX_U8 || header.dims.len() != 1 {
        return Err(parse_err(
            "IDX",
            0,
            format!("expected magic 0x00000801, found type 0x{:02x} rank {}", header.kind, header.dims.len()),
        ));
    }
    Ok(idx_payload(bytes, &header, 1)?.to_vec())
}

/// Parses a rank-3 file of 64-bit floats.
pub fn parse_idx_f64(bytes: &[u8]) -> Result<Vec<Image>> {
    let header = idx_header(bytes)?;
    if header.kind != IDX_F64 || header.dims.len() != 3 {
        return Err(parse_err(
            "IDX",
            0,
            format!("expected magic 0x00000e03, found type 0x{:02x} rank {}", header.kind, header.dims.len()),
        ));
    }
    let payload = idx_payload(bytes, &header, 8)?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(parse_err("IDX", header.payload + 8 * i, "non-finite value"));
    }
    square_images(&header, values)
}

fn idx_bytes(kind: u8, side: usize, count: usize, elem: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + count * side * side * elem);
    out.extend([0, 0, kind, 3]);
    for d in [count, side, side] {
        out.extend((d as u32).to_be_bytes());
    }
    out
}

fn common_side(images: &[&[f64]]) -> Result<usize> {
    let side = images.first().map_or(0, |p| (p.len() as f64).sqrt().round() as usize);
    for p in images {
        check_dim("IDX image size", side * side, p.len())?;
    }
    Ok(side)
}

/// Encodes images as unsigned bytes, rounding and clipping to `[0, 255]`.
pub fn encode_idx_u8(images: &[Image]) -> Result<Vec<u8>> {
    let views: Vec<&[f64]> = images.iter().map(Image::pixels).collect();
    let side = common_side(&views)?;
    let mut out = idx_bytes(IDX_U8, side, images.len(), 1);
    for img in images {
        out.extend(img.to_u8());
    }
    Ok(out)
}

/// Encodes square arrays (images or measurements) as 64-bit floats.
pub fn encode_idx_f64(arrays: &[&[f64]]) -> Result<Vec<u8>> {
    let side = common_side(arrays)?;
    let mut out = idx_bytes(IDX_F64, side, arrays.len(), 8);
    for a in arrays {
        for v in a.iter() {
            out.extend(v.to_be_bytes());
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

pub fn load_idx(path: &Path) -> Result<Vec<Image>> {
    parse_idx_images(&read(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    parse_idx_labels(&read(path)?)
}

pub fn load_idx_f64(path: &Path) -> Result<Vec<Image>> {
    parse_idx_f64(&read(path)?)
}

/// Parses a binary `P5` graymap with maxval 255.
pub fn parse_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<(usize, String)> {
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
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err(parse_err("PGM", start, "unexpected end of header"));
        }
        Ok((start, String::from_utf8_lossy(&bytes[start..*pos]).into_owned()))
    };
    let (_, magic) = token(&mut pos)?;
    if magic != "P5" {
        return Err(parse_err("PGM", 0, format!("expected magic P5, found {magic:?}")));
    }
    let number = |pos: &mut usize, name: &str| -> Result<usize> {
        let (at, t) = token(pos)?;
        t.parse::<usize>()
            .map_err(|_| parse_err("PGM", at, format!("bad {name} {t:?}")))
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if maxval != 255 {
        return Err(parse_err("PGM", pos, format!("maxval must be 255, found {maxval}")));
    }
    if width == 0 || width != height {
        return Err(parse_err("PGM", pos, format!("expected a nonempty square image, found {width}x{height}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(parse_err("PGM", pos, "missing whitespace after maxval"));
    }
    pos += 1;
    let expected = width.checked_mul(height).ok_or_else(|| parse_err("PGM", pos, "size overflow"))?;
    let available = bytes.len() - pos;
    if available < expected {
        return Err(parse_err(
            "PGM",
            bytes.len(),
            format!("raster: expected {expected} bytes, found {available}"),
        ));
    }
    Image::new(width, bytes[pos..pos + expected].iter().map(|&b| b as f64).collect())
}

/// Encodes a `width x height` raster of bytes as `P5`.
pub fn encode_pgm(width: usize, height: usize, raster: &[u8]) -> Result<Vec<u8>> {
    check_dim("PGM raster", width * height, raster.len())?;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(raster);
    Ok(out)
}

pub fn load_pgm(path: &Path) -> Result<Image> {
    parse_pgm(&read(path)?)
}

pub fn save_pgm(image: &Image, path: &Path) -> Result<()> {
    let bytes = encode_pgm(image.side(), image.side(), &image.to_u8())?;
    std::fs::write(path, bytes).map_err(io_err(path))
}
