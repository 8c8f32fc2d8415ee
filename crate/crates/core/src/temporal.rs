//! Temporal cleanup of per-frame box prompts: drop boxes without support in
//! either neighboring frame, then refill short empty gaps and tails.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::proposal::{BoxProposal, BoxRect};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemporalConfig {
    pub iou_min: f64,
    pub gap_max: usize,
    pub tail_propagate: bool,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.1,
            gap_max: 5,
            tail_propagate: true,
        }
    }
}

impl TemporalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.iou_min) {
            return Err(Error::InvalidParam(format!("iou_min {} outside [0, 1]", self.iou_min)));
        }
        Ok(())
    }
}

pub fn box_iou(a: &BoxRect, b: &BoxRect) -> f64 {
    let iw = a.x1.min(b.x1).saturating_sub(a.x0.max(b.x0)) as u64;
    let ih = a.y1.min(b.y1).saturating_sub(a.y0.max(b.y0)) as u64;
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn best_iou(b: &BoxRect, others: &[BoxProposal]) -> f64 {
    others.iter().map(|o| box_iou(b, &o.rect)).fold(0.0, f64::max)
}

/// Removes boxes whose best IoU is below `iou_min` against every existing
/// neighboring frame. Decisions read only the unfiltered input, so the
/// filter is idempotent. A single-frame sequence is returned unchanged.
pub fn isolated_box_filter(frames: &[Vec<BoxProposal>], cfg: &TemporalConfig) -> Vec<Vec<BoxProposal>> {
    let n = frames.len();
    if n < 2 {
        return frames.to_vec();
    }
    par::map_range(n, |t| {
        frames[t]
            .iter()
            .filter(|b| {
                let prev = (t > 0).then(|| best_iou(&b.rect, &frames[t - 1]));
                let next = (t + 1 < n).then(|| best_iou(&b.rect, &frames[t + 1]));
                let isolated = [prev, next].into_iter().flatten().all(|iou| iou < cfg.iou_min);
                !isolated
            })
            .copied()
            .collect()
    })
}

/// Greedy one-to-one pairing by descending IoU (ties: lower indices first).
fn match_pairs(a: &[BoxProposal], b: &[BoxProposal], iou_min: f64) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let iou = box_iou(&x.rect, &y.rect);
            if iou >= iou_min {
                cands.push((iou, i, j));
            }
        }
    }
    cands.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let mut out = Vec::new();
    for (_, i, j) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out
}

#[inline]
fn lerp_coord(a: u32, b: u32, f: f64) -> u32 {
    // f64::round is half-away-from-zero
    (a as f64 + (b as f64 - a as f64) * f).round() as u32
}

/// Linear interpolation between `a` and `b` at fraction `f`.
pub fn interpolate_rect(a: &BoxRect, b: &BoxRect, f: f64) -> BoxRect {
    BoxRect {
        x0: lerp_coord(a.x0, b.x0, f),
        y0: lerp_coord(a.y0, b.y0, f),
        x1: lerp_coord(a.x1, b.x1, f),
        y1: lerp_coord(a.y1, b.y1, f),
    }
}

/// Fills short empty gaps between supported detections and, optionally, a
/// short empty tail. Existing boxes are never touched.
pub fn temporal_recovery(frames: &[Vec<BoxProposal>], cfg: &TemporalConfig) -> Vec<Vec<BoxProposal>> {
    let mut out = frames.to_vec();
    let n = frames.len();

    let mut t = 0;
    while t < n {
        if !frames[t].is_empty() {
            t += 1;
            continue;
        }
        let start = t;
        while t < n && frames[t].is_empty() {
            t += 1;
        }
        let (end, len) = (t, t - start);
        if start == 0 || end == n || len > cfg.gap_max {
            continue;
        }
        let (before, after) = (&frames[start - 1], &frames[end]);
        let pairs = match_pairs(before, after, cfg.iou_min);
        for step in 1..=len {
            let f = step as f64 / (len + 1) as f64;
            let frame = start - 1 + step;
            out[frame] = pairs
                .iter()
                .enumerate()
                .map(|(id, &(i, j))| BoxProposal {
                    frame,
                    rect: interpolate_rect(&before[i].rect, &after[j].rect, f),
                    score: before[i].score.min(after[j].score),
                    id: id as u32,
                })
                .collect();
        }
    }

    if cfg.tail_propagate {
        if let Some(last) = frames.iter().rposition(|f| !f.is_empty()) {
            let tail = n - 1 - last;
            if (1..=cfg.gap_max).contains(&tail) {
                for (frame, slot) in out.iter_mut().enumerate().skip(last + 1) {
                    *slot = frames[last].iter().map(|b| BoxProposal { frame, ..*b }).collect();
                }
            }
        }
    }
    out
}
