//! Frames, masks, flow fields and score maps, plus their on-disk formats.
//!
//! * frames: 8-bit grayscale or 24-bit color PNG (color converted with BT.601 luma)
//! * masks: 8-bit grayscale PNG, written as {0, 255}, read with `> 127`
//! * flow: Middlebury `.flo`
//! * score maps: grayscale PFM (`Pf`), bottom row first on disk

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};
use image::{DynamicImage, GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn ensure(&self, other: Dims) -> Result<()> {
        if *self == other {
            Ok(())
        } else {
            Err(Error::dims(*self, other))
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    if dims.width == 0 || dims.height == 0 {
        return Err(Error::InvalidParam(format!("empty grid {dims}")));
    }
    if dims.len() != len {
        return Err(Error::InvalidParam(format!(
            "grid {dims} needs {} cells, got {len}",
            dims.len()
        )));
    }
    Ok(())
}

/// One grayscale video frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    dims: Dims,
    pixels: Vec<u8>,
}

impl Frame {
    pub fn new(dims: Dims, pixels: Vec<u8>) -> Result<Self> {
        check_len(dims, pixels.len())?;
        Ok(Self { dims, pixels })
    }

    pub fn filled(dims: Dims, value: u8) -> Self {
        Self {
            dims,
            pixels: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                pixels.push(f(x, y));
            }
        }
        Self { dims, pixels }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[self.dims.index(x, y)]
    }

    /// Pixel at signed coordinates, clamped to the border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let cx = x.clamp(0, self.dims.width as isize - 1) as usize;
        let cy = y.clamp(0, self.dims.height as isize - 1) as usize;
        self.get(cx, cy)
    }
}

/// Row-major grid of {0,1}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(dims: Dims, bits: Vec<u8>) -> Result<Self> {
        check_len(dims, bits.len())?;
        if let Some(i) = bits.iter().position(|&b| b > 1) {
            return Err(Error::InvalidParam(format!(
                "mask value {} at index {i} is not 0/1",
                bits[i]
            )));
        }
        Ok(Self { dims, bits })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            bits: vec![0; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                bits.push(f(x, y) as u8);
            }
        }
        Self { dims, bits }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[self.dims.index(x, y)] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        let i = self.dims.index(x, y);
        self.bits[i] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b != 0).count()
    }
}

/// Dense per-pixel displacement `(u, v)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    dims: Dims,
    vectors: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn new(dims: Dims, vectors: Vec<[f32; 2]>) -> Result<Self> {
        check_len(dims, vectors.len())?;
        if let Some(i) = vectors
            .iter()
            .position(|v| !v[0].is_finite() || !v[1].is_finite())
        {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { dims, vectors })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            vectors: vec![[0.0; 2]; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[[f32; 2]] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        self.vectors[self.dims.index(x, y)]
    }
}

/// Per-pixel real-valued confidence. Raw maps only need to be finite;
/// normalized maps live in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    dims: Dims,
    values: Vec<f32>,
}

impl ScoreMap {
    pub fn new(dims: Dims, values: Vec<f32>) -> Result<Self> {
        check_len(dims, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { dims, values })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f32) -> Self {
        Self {
            dims,
            values: vec![value; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(dims.len());
        for y in 0..dims.height {
            for x in 0..dims.width {
                values.push(f(x, y));
            }
        }
        Self { dims, values }
    }

    pub(crate) fn from_vec_unchecked(dims: Dims, values: Vec<f32>) -> Self {
        debug_assert_eq!(dims.len(), values.len());
        Self { dims, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[self.dims.index(x, y)]
    }

    /// Checks the normalized-map contract: every value in [0, 1].
    pub fn check_unit_range(&self) -> Result<()> {
        match self
            .values
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            Some(index) => Err(Error::OutOfRange {
                index,
                value: self.values[index],
            }),
            None => Ok(()),
        }
    }
}

/// BT.601 luma, rounded and clamped to [0, 255].
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64;
    y.round().clamp(0.0, 255.0) as u8
}

/// Matches `name` against a template with `*` (any run) and `?` (one char).
pub fn wildcard_match(pattern: &str, name: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let s: Vec<char> = name.chars().collect();
    let (mut pi, mut si) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while si < s.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == s[si]) {
            pi += 1;
            si += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, si));
            pi += 1;
        } else if let Some((sp, ss)) = star {
            pi = sp + 1;
            si = ss + 1;
            star = Some((sp, ss + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Index from the last run of ASCII digits in a file name.
pub fn frame_index(name: &str) -> Option<u64> {
    let stem = name.rsplit_once('.').map_or(name, |(s, _)| s);
    let bytes = stem.as_bytes();
    let end = bytes.iter().rposition(|b| b.is_ascii_digit())? + 1;
    let start = bytes[..end]
        .iter()
        .rposition(|b| !b.is_ascii_digit())
        .map_or(0, |p| p + 1);
    stem[start..end].parse().ok()
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

fn to_gray(img: DynamicImage) -> (Dims, Vec<u8>) {
    let dims = Dims::new(img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| luma(p[0], p[1], p[2]))
            .collect(),
    };
    (dims, pixels)
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (dims, pixels) = to_gray(img);
    Frame::new(dims, pixels)
}

fn write_gray_png(path: &Path, dims: Dims, pixels: Vec<u8>) -> Result<()> {
    let img = GrayImage::from_raw(dims.width as u32, dims.height as u32, pixels)
        .expect("buffer length matches dims");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn write_frame(frame: &Frame, path: &Path) -> Result<()> {
    write_gray_png(path, frame.dims, frame.pixels.clone())
}

/// Loads every file in `dir` whose name matches `pattern`, ordered by the
/// trailing frame index in the file name.
pub fn load_frame_sequence(dir: &Path, pattern: &str) -> Result<Vec<Frame>> {
    let paths = list_sequence(dir, pattern)?;
    let frames = crate::par::map_slice(&paths, |p| read_frame(p));
    let frames: Vec<Frame> = frames.into_iter().collect::<Result<_>>()?;
    let dims = frames[0].dims();
    for (i, f) in frames.iter().enumerate() {
        if f.dims() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                actual: f.dims(),
                context: Some(paths[i].display().to_string()),
            });
        }
    }
    Ok(frames)
}

/// Sorted list of the files `load_frame_sequence` would read.
pub fn list_sequence(dir: &Path, pattern: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<(u64, String, PathBuf)> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if !wildcard_match(pattern, &name) {
            continue;
        }
        let Some(idx) = frame_index(&name) else {
            log::warn!("skipping {name}: no frame index");
            continue;
        };
        found.push((idx, name, entry.path()));
    }
    if found.is_empty() {
        return Err(Error::NoFrames {
            dir: dir.to_path_buf(),
            pattern: pattern.to_string(),
        });
    }
    found.sort();
    Ok(found.into_iter().map(|(_, _, p)| p).collect())
}

pub fn read_mask(path: &Path, expected: Option<Dims>) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let (dims, pixels) = to_gray(img);
    if let Some(exp) = expected {
        if exp != dims {
            return Err(Error::DimensionMismatch {
                expected: exp,
                actual: dims,
                context: Some(path.display().to_string()),
            });
        }
    }
    BinaryMask::new(dims, pixels.into_iter().map(|p| (p > 127) as u8).collect())
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let pixels = mask.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    write_gray_png(path, mask.dims, pixels)
}

/// PNG bytes of a mask, as `write_mask` would store them.
pub fn encode_mask_png(mask: &BinaryMask) -> Vec<u8> {
    let pixels: Vec<u8> = mask.bits.iter().map(|&b| if b != 0 { 255 } else { 0 }).collect();
    encode_gray_png(mask.dims, pixels)
}

pub fn encode_gray_png(dims: Dims, pixels: Vec<u8>) -> Vec<u8> {
    let img = GrayImage::from_raw(dims.width as u32, dims.height as u32, pixels)
        .expect("buffer length matches dims");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn encode_flow(field: &FlowField) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * field.vectors.len());
    buf.write_f32::<LittleEndian>(FLO_MAGIC).unwrap();
    buf.write_i32::<LittleEndian>(field.dims.width as i32).unwrap();
    buf.write_i32::<LittleEndian>(field.dims.height as i32).unwrap();
    for [u, v] in &field.vectors {
        buf.write_f32::<LittleEndian>(*u).unwrap();
        buf.write_f32::<LittleEndian>(*v).unwrap();
    }
    buf
}

pub fn decode_flow(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let mut rdr = bytes;
    let magic = rdr.read_f32::<LittleEndian>().unwrap();
    if magic != FLO_MAGIC {
        return Err(Error::BadFlowMagic(magic));
    }
    let w = rdr.read_i32::<LittleEndian>().unwrap();
    let h = rdr.read_i32::<LittleEndian>().unwrap();
    if w <= 0 || h <= 0 {
        return Err(Error::BadHeader(format!("flow dimensions {w}x{h}")));
    }
    let dims = Dims::new(w as usize, h as usize);
    let expected = 12 + 8 * dims.len();
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let vectors = rdr[..8 * dims.len()]
        .chunks_exact(8)
        .map(|c| [LittleEndian::read_f32(&c[..4]), LittleEndian::read_f32(&c[4..])])
        .collect();
    FlowField::new(dims, vectors)
}

pub fn read_flow(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flow(&bytes)
}

pub fn write_flow(field: &FlowField, path: &Path) -> Result<()> {
    fs::write(path, encode_flow(field)).map_err(|e| Error::io(path, e))
}

/// Grayscale little-endian PFM, bottom row first.
pub fn encode_pfm(map: &ScoreMap) -> Vec<u8> {
    let Dims { width, height } = map.dims;
    let mut buf = Vec::with_capacity(32 + 4 * map.values.len());
    write!(buf, "Pf\n{width} {height}\n-1.0\n").unwrap();
    for row in map.values.chunks_exact(width).rev() {
        for v in row {
            buf.write_f32::<LittleEndian>(*v).unwrap();
        }
    }
    debug_assert_eq!(map.values.len(), width * height);
    buf
}

fn take_line(bytes: &[u8], pos: &mut usize) -> Result<String> {
    let rest = &bytes[*pos..];
    let end = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::BadHeader("unterminated PFM header line".into()))?;
    *pos += end + 1;
    Ok(String::from_utf8_lossy(&rest[..end]).trim().to_string())
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ScoreMap> {
    let mut pos = 0;
    let magic = take_line(bytes, &mut pos)?;
    if magic != "Pf" {
        return Err(Error::NotGrayscalePfm(magic));
    }
    let size = take_line(bytes, &mut pos)?;
    let mut it = size.split_whitespace().map(str::parse::<usize>);
    let (w, h) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(Error::BadHeader(format!("PFM size line {size:?}"))),
    };
    let scale_line = take_line(bytes, &mut pos)?;
    let scale: f32 = scale_line
        .parse()
        .map_err(|_| Error::BadHeader(format!("PFM scale {scale_line:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::BadHeader(format!("PFM scale {scale_line:?}")));
    }
    let dims = Dims::new(w, h);
    let payload = &bytes[pos..];
    let expected = 4 * dims.len();
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected: pos + expected,
            actual: bytes.len(),
        });
    }
    let read: fn(&[u8]) -> f32 = if scale < 0.0 {
        LittleEndian::read_f32
    } else {
        BigEndian::read_f32
    };
    let mut values = vec![0f32; dims.len()];
    for (row_on_disk, chunk) in payload[..expected].chunks_exact(4 * w).enumerate() {
        let y = h - 1 - row_on_disk;
        for (x, c) in chunk.chunks_exact(4).enumerate() {
            values[y * w + x] = read(c);
        }
    }
    ScoreMap::new(dims, values)
}

pub fn read_score_map(path: &Path) -> Result<ScoreMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|e| match e {
        Error::BadHeader(m) => Error::BadHeader(format!("{m} in {}", path.display())),
        other => other,
    })
}

pub fn write_score_map(map: &ScoreMap, path: &Path) -> Result<()> {
    fs::write(path, encode_pfm(map)).map_err(|e| Error::io(path, e))
}

/// Creates `dir` (and parents) if missing.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
