//! Motion cues: a coarse-to-fine block-matching flow estimator, flow
//! magnitude, percentile normalization, and skip-frame pair selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameio::{Dims, FlowField, Frame, ScoreMap};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub pyramid_levels: usize,
    pub block: usize,
    pub search_radius: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            pyramid_levels: 3,
            block: 8,
            search_radius: 4,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidParam("pyramid_levels must be >= 1".into()));
        }
        if self.block < 2 {
            return Err(Error::InvalidParam("block must be >= 2".into()));
        }
        if self.search_radius < 1 {
            return Err(Error::InvalidParam("search_radius must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest displacement reachable by the whole pyramid, in full-res pixels.
    pub fn total_range(&self) -> usize {
        (0..self.pyramid_levels).map(|l| self.search_radius << l).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkipConfig {
    pub k: usize,
}

impl Default for SkipConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

impl SkipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidParam("skip interval k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConfig {
    pub percentile: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { percentile: 99.0 }
    }
}

impl NormConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::InvalidParam(format!(
                "percentile {} outside (0, 100]",
                self.percentile
            )));
        }
        Ok(())
    }
}

/// One pyramid level. Each cell holds the *sum* of the `4^level` full-res
/// pixels it covers, so SAD comparisons within a level stay exact.
struct Plane {
    w: usize,
    h: usize,
    data: Vec<u32>,
}

impl Plane {
    fn from_frame(f: &Frame) -> Self {
        Self {
            w: f.width(),
            h: f.height(),
            data: f.pixels().iter().map(|&p| p as u32).collect(),
        }
    }

    fn downsample(&self) -> Self {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let r0 = &self.data[2 * y * self.w..];
            let r1 = &self.data[(2 * y + 1) * self.w..];
            for x in 0..w {
                data.push(r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
        Self { w, h, data }
    }

    #[inline]
    fn clamped(&self, x: isize, y: isize) -> u32 {
        let cx = x.clamp(0, self.w as isize - 1) as usize;
        let cy = y.clamp(0, self.h as isize - 1) as usize;
        self.data[cy * self.w + cx]
    }
}

fn pyramid(f: &Frame, levels: usize) -> Vec<Plane> {
    let mut out = vec![Plane::from_frame(f)];
    for _ in 1..levels {
        let next = out.last().unwrap().downsample();
        out.push(next);
    }
    out
}

/// Integer flow per block at one pyramid level.
struct BlockFlow {
    nbx: usize,
    nby: usize,
    flow: Vec<(i32, i32)>,
}

impl BlockFlow {
    fn at(&self, bx: usize, by: usize) -> (i32, i32) {
        self.flow[by * self.nbx + bx]
    }
}

/// (SAD, u²+v², v, u): lexicographic candidate order.
type Ranking = (u64, i64, i32, i32);

#[allow(clippy::too_many_arguments)]
fn block_sad(a: &Plane, b: &Plane, x0: usize, y0: usize, x1: usize, y1: usize, u: i32, v: i32) -> u64 {
    let mut sad = 0u64;
    for y in y0..y1 {
        let row = &a.data[y * a.w..];
        let by = y as isize + v as isize;
        for (x, &av) in row.iter().enumerate().take(x1).skip(x0) {
            let bv = b.clamped(x as isize + u as isize, by);
            sad += av.abs_diff(bv) as u64;
        }
    }
    sad
}

/// Ordering key for candidates: SAD, then squared magnitude, then (v, u).
#[inline]
fn candidate_key(sad: u64, u: i32, v: i32) -> (u64, i64, i32, i32) {
    (sad, (u as i64).pow(2) + (v as i64).pow(2), v, u)
}

fn match_level(a: &Plane, b: &Plane, block: usize, radius: i32, coarser: Option<&BlockFlow>) -> BlockFlow {
    let nbx = a.w.div_ceil(block);
    let nby = a.h.div_ceil(block);
    let flow = par::map_range(nbx * nby, |i| {
        let (bx, by) = (i % nbx, i / nbx);
        let (x0, y0) = (bx * block, by * block);
        let (x1, y1) = ((x0 + block).min(a.w), (y0 + block).min(a.h));
        let (gu, gv) = match coarser {
            None => (0, 0),
            Some(c) => {
                let cbx = ((x0 + block / 2) / 2 / block).min(c.nbx - 1);
                let cby = ((y0 + block / 2) / 2 / block).min(c.nby - 1);
                let (u, v) = c.at(cbx, cby);
                (2 * u, 2 * v)
            }
        };
        let mut best: Option<(Ranking, (i32, i32))> = None;
        for dv in -radius..=radius {
            for du in -radius..=radius {
                let (u, v) = (gu + du, gv + dv);
                let key = candidate_key(block_sad(a, b, x0, y0, x1, y1, u, v), u, v);
                if best.is_none_or(|(k, _)| key < k) {
                    best = Some((key, (u, v)));
                }
            }
        }
        best.expect("search window is non-empty").1
    });
    BlockFlow { nbx, nby, flow }
}

/// Interpolation weights between block centers along one axis.
#[inline]
fn axis_weights(p: usize, block: usize, n: usize) -> (usize, usize, f32) {
    let f = (p as f32 - (block as f32 - 1.0) / 2.0) / block as f32;
    if f <= 0.0 {
        return (0, 0, 0.0);
    }
    let i0 = (f.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    let t = if i1 == i0 { 0.0 } else { f - i0 as f32 };
    (i0, i1, t)
}

fn upsample(blocks: &BlockFlow, dims: Dims, block: usize) -> FlowField {
    let mut vectors = vec![[0f32; 2]; dims.len()];
    par::fill_indexed(&mut vectors, |i| {
        let (x, y) = (i % dims.width, i / dims.width);
        let (x0, x1, tx) = axis_weights(x, block, blocks.nbx);
        let (y0, y1, ty) = axis_weights(y, block, blocks.nby);
        let lerp = |a: (i32, i32), b: (i32, i32), t: f32| {
            (
                a.0 as f32 * (1.0 - t) + b.0 as f32 * t,
                a.1 as f32 * (1.0 - t) + b.1 as f32 * t,
            )
        };
        let top = lerp(blocks.at(x0, y0), blocks.at(x1, y0), tx);
        let bot = lerp(blocks.at(x0, y1), blocks.at(x1, y1), tx);
        [top.0 * (1.0 - ty) + bot.0 * ty, top.1 * (1.0 - ty) + bot.1 * ty]
    });
    FlowField::new(dims, vectors).expect("finite interpolated flow")
}

/// Dense flow from `a` to `b`: `a(x, y) ≈ b(x + u, y + v)`.
pub fn estimate_flow(a: &Frame, b: &Frame, cfg: &FlowConfig) -> Result<FlowField> {
    cfg.validate()?;
    a.dims().ensure(b.dims())?;
    let scale = 1usize << (cfg.pyramid_levels - 1);
    let (cw, ch) = (a.width() / scale, a.height() / scale);
    if cw < cfg.block || ch < cfg.block {
        return Err(Error::InvalidParam(format!(
            "frame {} too small: coarsest level {cw}x{ch} is under one {}px block",
            a.dims(),
            cfg.block
        )));
    }
    let pa = pyramid(a, cfg.pyramid_levels);
    let pb = pyramid(b, cfg.pyramid_levels);
    let mut current: Option<BlockFlow> = None;
    for level in (0..cfg.pyramid_levels).rev() {
        let next = match_level(
            &pa[level],
            &pb[level],
            cfg.block,
            cfg.search_radius as i32,
            current.as_ref(),
        );
        current = Some(next);
    }
    Ok(upsample(&current.unwrap(), a.dims(), cfg.block))
}

/// Per-pixel `sqrt(u² + v²)`.
pub fn flow_magnitude(field: &FlowField) -> ScoreMap {
    let values = field.vectors().iter().map(|[u, v]| u.hypot(*v)).collect();
    ScoreMap::from_vec_unchecked(field.dims(), values)
}

/// `(src, dst)` frame indices for the gap-`k` flow serving frame `t`.
///
/// Forward `(t, t+k)` when it fits, else backward `(max(0, t-k), t)`. The
/// one degenerate case, `t = 0` with `k > T-1`, clamps forward to `(0, T-1)`.
pub fn skip_pair(t: usize, k: usize, len: usize) -> Result<(usize, usize)> {
    if len < 2 {
        return Err(Error::SequenceTooShort(len));
    }
    if k < 1 {
        return Err(Error::InvalidParam("skip interval k must be >= 1".into()));
    }
    if t >= len {
        return Err(Error::InvalidParam(format!("frame {t} outside sequence of {len}")));
    }
    if t + k < len {
        return Ok((t, t + k));
    }
    if t == 0 {
        return Ok((0, len - 1));
    }
    Ok((t.saturating_sub(k), t))
}

/// Nearest-rank percentile (`ceil(p/100 · n)`-th smallest value).
pub fn percentile(values: &[f32], p: f64) -> f32 {
    assert!(!values.is_empty());
    let n = values.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    let idx = rank.clamp(1, n) - 1;
    let mut scratch = values.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *v
}

/// Divides by the configured percentile and clamps to [0, 1].
pub fn normalize_score(raw: &ScoreMap, cfg: &NormConfig) -> ScoreMap {
    let p = percentile(raw.values(), cfg.percentile);
    if p <= 0.0 {
        return ScoreMap::zeros(raw.dims());
    }
    let values = raw
        .values()
        .iter()
        .map(|v| (v / p).clamp(0.0, 1.0))
        .collect();
    ScoreMap::from_vec_unchecked(raw.dims(), values)
}

/// Normalized motion confidence for the pair `(a, b)`.
pub fn motion_score(a: &Frame, b: &Frame, flow: &FlowConfig, norm: &NormConfig) -> Result<ScoreMap> {
    let field = estimate_flow(a, b, flow)?;
    Ok(normalize_score(&flow_magnitude(&field), norm))
}

pub fn flow_file_name(src: usize, dst: usize) -> String {
    format!("flow_{src:06}_{dst:06}.flo")
}
