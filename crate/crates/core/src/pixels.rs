//! Luma frames, fixed-size patch partitioning and binary PGM I/O.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single 8-bit luma plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    luma: Vec<u8>,
    index: u32,
}

impl Frame {
    pub fn new(width: usize, height: usize, luma: Vec<u8>, index: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame dimensions must be positive"));
        }
        if luma.len() != width * height {
            return Err(Error::invalid(format!(
                "luma length {} does not match {}x{}",
                luma.len(),
                width,
                height
            )));
        }
        Ok(Frame {
            width,
            height,
            luma,
            index,
        })
    }

    /// A frame filled with one intensity.
    pub fn filled(width: usize, height: usize, value: u8, index: u32) -> Result<Self> {
        Frame::new(width, height, vec![value; width * height], index)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn with_index(mut self, index: u32) -> Self {
        self.index = index;
        self
    }

    pub fn luma(&self) -> &[u8] {
        &self.luma
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.luma[y * self.width + x]
    }
}

/// A `size`×`size` window of a frame at grid position (`grid_row`, `grid_col`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchView {
    pub frame_index: u32,
    pub grid_row: u16,
    pub grid_col: u16,
    pub size: usize,
    pub pixels: Vec<u8>,
}

impl PatchView {
    /// Builds a free-standing patch, mostly useful in tests.
    pub fn from_pixels(size: usize, pixels: Vec<u8>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(Error::invalid(format!(
                "patch of side {size} needs {} pixels, got {}",
                size * size,
                pixels.len()
            )));
        }
        Ok(PatchView {
            frame_index: 0,
            grid_row: 0,
            grid_col: 0,
            size,
            pixels,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.size + x]
    }
}

/// Identifies one video segment of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentId {
    pub stream: String,
    pub segment_ordinal: u32,
    pub duration_frames: u32,
}

impl SegmentId {
    pub fn new(stream: impl Into<String>, segment_ordinal: u32, duration_frames: u32) -> Result<Self> {
        if duration_frames == 0 {
            return Err(Error::invalid("segment duration must be positive"));
        }
        Ok(SegmentId {
            stream: stream.into(),
            segment_ordinal,
            duration_frames,
        })
    }
}

/// Number of whole patches along each axis: `(cols, rows)`.
pub fn grid_shape(width: usize, height: usize, patch_size: usize) -> (usize, usize) {
    if patch_size == 0 {
        return (0, 0);
    }
    (width / patch_size, height / patch_size)
}

/// Splits a frame into whole `patch_size` windows in row-major order.
///
/// Remainder columns and rows at the right and bottom border are dropped.
pub fn partition(frame: &Frame, patch_size: usize) -> Result<Vec<PatchView>> {
    if patch_size == 0 {
        return Err(Error::invalid("patch_size must be at least 1"));
    }
    let (cols, rows) = grid_shape(frame.width, frame.height, patch_size);
    let mut out = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            let mut pixels = Vec::with_capacity(patch_size * patch_size);
            let x0 = c * patch_size;
            for y in r * patch_size..(r + 1) * patch_size {
                let start = y * frame.width + x0;
                pixels.extend_from_slice(&frame.luma[start..start + patch_size]);
            }
            out.push(PatchView {
                frame_index: frame.index,
                grid_row: r as u16,
                grid_col: c as u16,
                size: patch_size,
                pixels,
            });
        }
    }
    Ok(out)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, field: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return Err(Error::format(format!("unexpected EOF in PGM header ({field})")));
            }
            return Err(Error::format(format!("invalid {field} in PGM header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(format!("invalid {field} in PGM header")))
    }
}

/// Parses a binary (P5) PGM image with maxval 255.
pub fn decode_pgm(bytes: &[u8], index: u32) -> Result<Frame> {
    if bytes.len() < 2 {
        return Err(Error::format("unexpected EOF in PGM magic"));
    }
    if &bytes[..2] != b"P5" {
        return Err(Error::format("invalid magic: expected P5"));
    }
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    let maxval = rd.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format("invalid width/height: must be positive"));
    }
    if maxval != 255 {
        return Err(Error::format(format!("unsupported maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(rd.pos) {
        Some(b) if b.is_ascii_whitespace() => rd.pos += 1,
        Some(_) => return Err(Error::format("invalid maxval terminator")),
        None => return Err(Error::format("unexpected EOF after header")),
    }
    let need = width * height;
    let payload = &bytes[rd.pos..];
    if payload.len() < need {
        return Err(Error::format(format!(
            "unexpected EOF in pixel payload: need {need} bytes, have {}",
            payload.len()
        )));
    }
    Frame::new(width, height, payload[..need].to_vec(), index)
}

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.luma);
    out
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let index = frame_index_from_name(path).unwrap_or(0);
    decode_pgm(&bytes, index)
}

pub fn save_pgm(frame: &Frame, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pgm(frame))?;
    Ok(())
}

/// File name used for frame `index` in a frame-sequence directory.
pub fn frame_file_name(index: u32) -> String {
    format!("frame_{index:06}.pgm")
}

fn frame_index_from_name(path: &Path) -> Option<u32> {
    let name = path.file_name()?.to_str()?;
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Lists `frame_NNNNNN.pgm` files in `dir`, ordered by index.
pub fn list_frame_files(dir: impl AsRef<Path>) -> Result<Vec<(u32, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if let Some(idx) = frame_index_from_name(&path) {
            files.push((idx, path));
        }
    }
    files.sort_by_key(|(i, _)| *i);
    Ok(files)
}

/// Loads every frame of a frame-sequence directory, ordered by index.
pub fn load_frame_dir(dir: impl AsRef<Path>) -> Result<Vec<Frame>> {
    list_frame_files(dir)?
        .into_iter()
        .map(|(_, p)| load_pgm(p))
        .collect()
}
