//! Netpbm image I/O (P2, P5, P6) and attribution-map output.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::digest;
use crate::error::{Error, Result};
use crate::path::AttributionMap;
use crate::tensor::TensorF;

fn image_err(msg: impl Into<String>) -> Error {
    Error::Image(msg.into())
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(image_err("not a netpbm file"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(image_err("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(image_err("malformed header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| image_err("header number out of range"))?;
    }
    // exactly one whitespace byte separates the header from binary data
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(image_err("malformed header"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(image_err("zero image dimension"));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(image_err(format!("unsupported maxval {maxval} (use 255 or 65535)")));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes a P2, P5 or P6 image into `[0, 1]` values. Grayscale images
/// have shape `[h, w]`, color images `[h, w, 3]`.
pub fn decode_image(bytes: &[u8]) -> Result<TensorF> {
    let h = parse_header(bytes)?;
    let channels = match &h.magic {
        b"P2" | b"P5" => 1,
        b"P6" => 3,
        m => {
            return Err(image_err(format!(
                "unsupported netpbm type {}",
                String::from_utf8_lossy(m)
            )))
        }
    };
    let count = h.width * h.height * channels;
    let maxval = h.maxval as f64;
    let raw: Vec<usize> = if &h.magic == b"P2" {
        let text = std::str::from_utf8(&bytes[h.data_start..]).map_err(|_| image_err("non-text P2 payload"))?;
        let vals = text
            .split_ascii_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| image_err(format!("bad sample {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() < count {
            return Err(image_err(format!("truncated payload: {} of {count} samples", vals.len())));
        }
        vals[..count].to_vec()
    } else {
        let width = if h.maxval > 255 { 2 } else { 1 };
        let data = &bytes[h.data_start..];
        if data.len() < count * width {
            return Err(image_err(format!(
                "truncated payload: {} of {} bytes",
                data.len(),
                count * width
            )));
        }
        if width == 1 {
            data[..count].iter().map(|&b| b as usize).collect()
        } else {
            data[..2 * count]
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]) as usize)
                .collect()
        }
    };
    if let Some(v) = raw.iter().find(|&&v| v > h.maxval) {
        return Err(image_err(format!("sample {v} exceeds maxval {}", h.maxval)));
    }
    let shape = if channels == 1 {
        vec![h.height, h.width]
    } else {
        vec![h.height, h.width, 3]
    };
    TensorF::new(shape, raw.into_iter().map(|v| v as f64 / maxval).collect())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<TensorF> {
    decode_image(&fs::read(path)?)
}

/// Binary P5 for `[h, w]`, P6 for `[h, w, 3]`. Values are clipped to
/// `[0, 1]` and rounded to the nearest level.
pub fn encode_image(t: &TensorF, maxval: u16) -> Result<Vec<u8>> {
    if maxval != 255 && maxval != 65535 {
        return Err(image_err(format!("unsupported maxval {maxval}")));
    }
    let (h, w, magic) = match *t.shape() {
        [h, w] => (h, w, "P5"),
        [h, w, 3] => (h, w, "P6"),
        _ => {
            return Err(image_err(format!(
                "cannot encode tensor of shape {:?} as an image",
                t.shape()
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n{maxval}\n").into_bytes();
    let m = maxval as f64;
    for &v in t.as_slice() {
        let level = (v.clamp(0.0, 1.0) * m).round() as u16;
        if maxval > 255 {
            out.extend_from_slice(&level.to_be_bytes());
        } else {
            out.push(level as u8);
        }
    }
    Ok(out)
}

pub fn write_image(t: &TensorF, path: impl AsRef<Path>, maxval: u16) -> Result<()> {
    write_atomic(path.as_ref(), &encode_image(t, maxval)?)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Full-precision text dump: a `# shape` header, then one value per line.
pub fn format_scores(t: &TensorF) -> String {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let mut s = format!("# shape {}\n", dims.join(" "));
    for v in t.as_slice() {
        s.push_str(&format!("{v:?}\n"));
    }
    s
}

pub fn parse_scores(text: &str) -> Result<TensorF> {
    let mut lines = text.lines();
    let shape: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("# shape"))
        .ok_or_else(|| Error::Parse("missing `# shape` header".into()))?
        .split_ascii_whitespace()
        .map(|d| d.parse().map_err(|_| Error::Parse(format!("bad dimension {d:?}"))))
        .collect::<Result<_>>()?;
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse().map_err(|_| Error::Parse(format!("bad value {l:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    TensorF::new(shape, values)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<TensorF> {
    parse_scores(&fs::read_to_string(path)?)
}

/// Per-pixel map for display: `[h, w, c]` maps are summed over channels,
/// 1-D maps become a single row. Min-max normalized to `[0, 1]`; a
/// constant map renders as 0.5 everywhere.
pub fn render_map(scores: &TensorF) -> Result<TensorF> {
    let (h, w, c) = match *scores.shape() {
        [n] => (1, n, 1),
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => return Err(image_err(format!("cannot render shape {:?}", scores.shape()))),
    };
    let px: Vec<f64> = scores
        .as_slice()
        .chunks_exact(c)
        .map(|ch| ch.iter().sum())
        .collect();
    let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi > lo {
        px.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; px.len()]
    };
    TensorF::new(vec![h, w], values)
}

pub const SCORES_FILE: &str = "scores.txt";
pub const RENDER_FILE: &str = "render.pgm";
pub const META_FILE: &str = "meta.json";

#[derive(Serialize)]
struct MetaRecord<'a, E: Serialize> {
    scores_digest: String,
    shape: &'a [usize],
    render_reduction: &'static str,
    map: &'a crate::path::MapMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<&'a E>,
}

/// Writes `scores.txt`, `render.pgm` and `meta.json` into `dir`, creating
/// it if needed. `run` is embedded in the meta record when given.
pub fn write_attribution<E: Serialize>(
    map: &AttributionMap,
    dir: impl AsRef<Path>,
    run: Option<&E>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let scores_path = dir.join(SCORES_FILE);
    write_atomic(&scores_path, format_scores(&map.scores).as_bytes())?;
    let render_path = dir.join(RENDER_FILE);
    write_image(&render_map(&map.scores)?, &render_path, 255)?;
    let meta = MetaRecord {
        scores_digest: digest::tensor(&map.scores),
        shape: map.scores.shape(),
        render_reduction: "sum over channels, then min-max to [0, 1]",
        map: &map.meta,
        run,
    };
    let meta_path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(&meta_path, text.as_bytes())?;
    Ok(vec![scores_path, render_path, meta_path])
}
