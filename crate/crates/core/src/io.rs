//! Raster and field serialization: binary PGM (8/16-bit), grayscale PNG
//! input, the `CTF1` float raster, label-map PGMs and contour CSVs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{LabelMap, ScalarField, VectorField};
use crate::levelset::Contour;

const CTF_MAGIC: &[u8; 4] = b"CTF1";

/// Sample depth for PGM output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

struct Pgm {
    width: usize,
    height: usize,
    maxval: u32,
    samples: Vec<u32>,
}

fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let err = |msg: &str| Error::decode(path, msg);
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err("not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut header = [0u32; 3];
    for slot in header.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err("truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err("malformed header field"));
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err("header value out of range"))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|c| c.is_ascii_whitespace()) {
        return Err(err("missing separator after header"));
    }
    pos += 1;
    let [width, height, maxval] = header;
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 {
        return Err(err("zero-sized image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(err("maxval must be in 1..=65535"));
    }
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = width * height * bps;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(err("truncated raster"));
    }
    let samples = if bps == 1 {
        raster[..need].iter().map(|&b| u32::from(b)).collect()
    } else {
        raster[..need].chunks_exact(2).map(|c| u32::from(u16::from_be_bytes([c[0], c[1]]))).collect()
    };
    Ok(Pgm { width, height, maxval, samples })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a grayscale raster (binary PGM or PNG), normalized to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"P5") {
        let pgm = parse_pgm(&bytes, path)?;
        let scale = f64::from(pgm.maxval);
        let data = pgm.samples.iter().map(|&s| (f64::from(s) / scale).min(1.0)).collect();
        return ScalarField::from_vec(pgm.width, pgm.height, data)
            .map_err(|e| Error::decode(path, e.to_string()));
    }
    if bytes.starts_with(b"\x89PNG") {
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::decode(path, e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::decode(path, "zero-sized image"));
        }
        let gray = img.into_luma16();
        let data = gray.as_raw().iter().map(|&s| f64::from(s) / 65535.0).collect();
        return ScalarField::from_vec(w, h, data).map_err(|e| Error::decode(path, e.to_string()));
    }
    Err(Error::decode(path, "unsupported raster format (expected binary PGM or PNG)"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_pgm(width: usize, height: usize, maxval: u32, samples: impl Iterator<Item = u32>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    if maxval < 256 {
        out.extend(samples.map(|s| s as u8));
    } else {
        for s in samples {
            out.extend_from_slice(&(s as u16).to_be_bytes());
        }
    }
    out
}

/// Writes a field as a binary PGM; values are clamped to `[0, 1]`.
pub fn save_pgm(field: &ScalarField, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let maxval: u32 = match depth {
        BitDepth::Eight => 255,
        BitDepth::Sixteen => 65535,
    };
    let m = f64::from(maxval);
    let samples = field.values().iter().map(|v| (v.clamp(0.0, 1.0) * m).round() as u32);
    write_bytes(path.as_ref(), &encode_pgm(field.width(), field.height(), maxval, samples))
}

/// Label maps are stored as 8-bit PGMs whose pixel value is the class.
pub fn save_labels(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let samples = labels.labels().iter().map(|&l| u32::from(l));
    write_bytes(path.as_ref(), &encode_pgm(labels.width(), labels.height(), 255, samples))
}

/// Reads a label PGM. The class count is one more than the largest label
/// unless `num_classes` is given.
pub fn load_labels(path: impl AsRef<Path>, num_classes: Option<u8>) -> Result<LabelMap> {
    let path = path.as_ref();
    let pgm = parse_pgm(&read_bytes(path)?, path)?;
    if pgm.maxval > 255 {
        return Err(Error::decode(path, "label maps must be 8-bit"));
    }
    let labels: Vec<u8> = pgm.samples.iter().map(|&s| s as u8).collect();
    let k = match num_classes {
        Some(k) => k,
        None => labels.iter().copied().max().unwrap_or(0).saturating_add(1),
    };
    LabelMap::new(pgm.width, pgm.height, k, labels).map_err(|e| Error::decode(path, e.to_string()))
}

fn encode_ctf(width: usize, height: usize, components: &[&ScalarField]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * width * height * components.len());
    out.extend_from_slice(CTF_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(components.len() as u32).to_le_bytes());
    // planar: all of component 0, then component 1, ...
    for c in components {
        for &v in c.values() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn decode_ctf(bytes: &[u8], path: &Path) -> Result<Vec<ScalarField>> {
    if bytes.len() < 16 || &bytes[..4] != CTF_MAGIC {
        return Err(Error::decode(path, "missing CTF1 magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h, n) = (word(4), word(8), word(12));
    if w == 0 || h == 0 || n == 0 {
        return Err(Error::decode(path, "zero-sized CTF1 raster"));
    }
    let plane = w * h;
    if bytes.len() != 16 + 4 * plane * n {
        return Err(Error::decode(path, "CTF1 payload length does not match header"));
    }
    (0..n)
        .map(|c| {
            let start = 16 + 4 * plane * c;
            let data = bytes[start..start + 4 * plane]
                .chunks_exact(4)
                .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
                .collect();
            ScalarField::from_vec(w, h, data).map_err(|e| Error::decode(path, e.to_string()))
        })
        .collect()
}

pub fn save_scalar_ctf(field: &ScalarField, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ctf(field.width(), field.height(), &[field]))
}

pub fn save_vector_ctf(field: &VectorField, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ctf(field.width(), field.height(), &[&field.u, &field.v]))
}

pub fn load_scalar_ctf(path: impl AsRef<Path>) -> Result<ScalarField> {
    let path = path.as_ref();
    let mut comps = decode_ctf(&read_bytes(path)?, path)?;
    if comps.len() != 1 {
        return Err(Error::decode(path, format!("expected 1 component, found {}", comps.len())));
    }
    Ok(comps.remove(0))
}

pub fn load_vector_ctf(path: impl AsRef<Path>) -> Result<VectorField> {
    let path = path.as_ref();
    let mut comps = decode_ctf(&read_bytes(path)?, path)?;
    if comps.len() != 2 {
        return Err(Error::decode(path, format!("expected 2 components, found {}", comps.len())));
    }
    let v = comps.pop().unwrap();
    let u = comps.pop().unwrap();
    VectorField::new(u, v)
}

/// CSV with columns `point,x,y,contour`.
pub fn save_contours_csv(contours: &[Contour], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("point,x,y,contour\n");
    for (cid, c) in contours.iter().enumerate() {
        for (i, p) in c.points.iter().enumerate() {
            out.push_str(&format!("{i},{:.6},{:.6},{cid}\n", p[0], p[1]));
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Reads contours written by [`save_contours_csv`]. Contours are treated as
/// closed when their endpoints are within 2 px.
pub fn load_contours_csv(path: impl AsRef<Path>) -> Result<Vec<Contour>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut contours: Vec<Vec<[f64; 2]>> = Vec::new();
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse().map_err(|_| Error::decode(path, format!("bad number on line {}", lineno + 1)))
        };
        if cols.len() != 4 {
            return Err(Error::decode(path, format!("expected 4 columns on line {}", lineno + 1)));
        }
        let id = parse(cols[3])? as usize;
        if id >= contours.len() {
            contours.resize(id + 1, Vec::new());
        }
        contours[id].push([parse(cols[1])?, parse(cols[2])?]);
    }
    Ok(contours
        .into_iter()
        .filter(|p| !p.is_empty())
        .map(|points| {
            let closed = points.len() > 2 && {
                let (a, b) = (points[0], points[points.len() - 1]);
                (a[0] - b[0]).hypot(a[1] - b[1]) <= 2.0
            };
            Contour { points, closed }
        })
        .collect())
}
