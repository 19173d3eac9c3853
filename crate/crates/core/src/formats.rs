//! On-disk formats: binary netpbm images, CFFL flow stacks and COCO-style
//! run-length mask encoding.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Grid, LabelMap, Mask, RgbImage};

/// Per-pixel displacement `(dx, dy)` in px/frame.
pub type FlowField = Grid<[f32; 2]>;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    for p in &img.data {
        out.extend_from_slice(p);
    }
    out
}

/// 8-bit PGM for masks (0/255) or 16-bit big-endian PGM for label maps.
pub fn encode_pgm_mask(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn encode_pgm_labels(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", labels.width, labels.height).into_bytes();
    for &l in &labels.data {
        out.extend_from_slice(&l.to_be_bytes());
    }
    out
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let bad = |m: &str| Error::Format(format!("netpbm: {m}"));
    if bytes.len() < 2 {
        return Err(bad("truncated header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator after header"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("degenerate header"));
    }
    Ok(Header { magic, width, height, maxval, offset: pos + 1 })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" || h.maxval != 255 {
        return Err(Error::Format("expected an 8-bit P6 image".into()));
    }
    let body = &bytes[h.offset..];
    if body.len() != h.width * h.height * 3 {
        return Err(Error::Format(format!("P6 payload has {} bytes, expected {}", body.len(), h.width * h.height * 3)));
    }
    Grid::from_vec(h.width, h.height, body.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Reads an 8- or 16-bit P5 image as integer levels.
pub fn decode_pgm(bytes: &[u8]) -> Result<Grid<u16>> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Format("expected a P5 image".into()));
    }
    let body = &bytes[h.offset..];
    let n = h.width * h.height;
    let data: Vec<u16> = if h.maxval < 256 {
        if body.len() != n {
            return Err(Error::Format(format!("P5 payload has {} bytes, expected {n}", body.len())));
        }
        body.iter().map(|&b| u16::from(b)).collect()
    } else {
        if body.len() != 2 * n {
            return Err(Error::Format(format!("P5 payload has {} bytes, expected {}", body.len(), 2 * n)));
        }
        body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Grid::from_vec(h.width, h.height, data)
}

pub fn save_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    write_file(path, &encode_ppm(img))
}

pub fn load_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&read_file(path)?).map_err(|e| in_file(path, e))
}

pub fn load_pgm(path: &Path) -> Result<Grid<u16>> {
    decode_pgm(&read_file(path)?).map_err(|e| in_file(path, e))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

const FLOW_MAGIC: &[u8; 4] = b"CFFL";

/// Header `CFFL`, width, height and field count as little-endian u32,
/// then `count·H·W·2` little-endian f32 values.
pub fn encode_flow(fields: &[FlowField]) -> Result<Vec<u8>> {
    let (w, h) = fields.first().map_or((0, 0), |f| (f.width, f.height));
    if fields.iter().any(|f| f.width != w || f.height != h) {
        return Err(Error::Shape("flow fields differ in size".into()));
    }
    let mut out = Vec::with_capacity(16 + fields.len() * w * h * 8);
    out.extend_from_slice(FLOW_MAGIC);
    for v in [w, h, fields.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for f in fields {
        for [dx, dy] in &f.data {
            out.extend_from_slice(&dx.to_le_bytes());
            out.extend_from_slice(&dy.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_flow(bytes: &[u8]) -> Result<Vec<FlowField>> {
    if bytes.len() < 16 || &bytes[..4] != FLOW_MAGIC {
        return Err(Error::Format("not a CFFL flow file".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, t) = (u(4), u(8), u(12));
    let n = w * h;
    if bytes.len() != 16 + t * n * 8 {
        return Err(Error::Format(format!("CFFL payload size {} does not match {w}x{h}x{t}", bytes.len() - 16)));
    }
    let vals: Vec<f32> = bytes[16..].chunks(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    vals.chunks(n * 2)
        .map(|f| Grid::from_vec(w, h, f.chunks(2).map(|p| [p[0], p[1]]).collect()))
        .collect()
}

pub fn save_flow(path: &Path, fields: &[FlowField]) -> Result<()> {
    write_file(path, &encode_flow(fields)?)
}

pub fn load_flow(path: &Path) -> Result<Vec<FlowField>> {
    decode_flow(&read_file(path)?).map_err(|e| in_file(path, e))
}

/// Column-major run lengths, starting with a (possibly empty) run of zeros.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    /// `[H, W]`.
    pub size: [usize; 2],
    pub counts: Vec<u32>,
}

pub fn rle_encode(mask: &Mask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for x in 0..mask.width {
        for y in 0..mask.height {
            let v = *mask.get(x, y);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    RleMask { size: [mask.height, mask.width], counts }
}

pub fn rle_decode(rle: &RleMask) -> Result<Mask> {
    let [h, w] = rle.size;
    let total: u64 = rle.counts.iter().map(|&c| u64::from(c)).sum();
    if total != (h * w) as u64 {
        return Err(Error::Format(format!("RLE counts sum to {total}, mask has {} pixels", h * w)));
    }
    let mut mask = Grid::filled(w, h, false);
    let mut i = 0usize;
    for (k, &c) in rle.counts.iter().enumerate() {
        let on = k % 2 == 1;
        for _ in 0..c {
            if on {
                mask.set(i / h, i % h, true);
            }
            i += 1;
        }
    }
    Ok(mask)
}
