//! Per-frame IoU/Dice and the two-level (frames, then videos) mean.

use serde::{Deserialize, Serialize};
use std::fmt::Write;

use crate::error::{Error, Result};
use crate::frameio::BinaryMask;
use crate::par;

/// How a frame where prediction and ground truth are both empty is scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    #[default]
    One,
    Zero,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub iou: f64,
    pub dice: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub name: String,
    pub miou: f64,
    pub mdice: f64,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub videos: Vec<VideoScore>,
    pub final_miou: f64,
    pub final_mdice: f64,
    pub empty_policy: EmptyPolicy,
}

fn counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<(u64, u64, u64)> {
    pred.dims().ensure(gt.dims())?;
    let (mut p, mut g, mut i) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.bits().iter().zip(gt.bits()) {
        p += a as u64;
        g += b as u64;
        i += (a & b) as u64;
    }
    Ok((p, g, i))
}

/// Scores one frame; `None` only under [`EmptyPolicy::Skip`] for an
/// empty/empty pair.
pub fn score_frame(pred: &BinaryMask, gt: &BinaryMask, policy: EmptyPolicy) -> Result<Option<FrameScore>> {
    let (p, g, i) = counts(pred, gt)?;
    if p == 0 && g == 0 {
        return Ok(match policy {
            EmptyPolicy::One => Some(FrameScore { iou: 1.0, dice: 1.0 }),
            EmptyPolicy::Zero => Some(FrameScore { iou: 0.0, dice: 0.0 }),
            EmptyPolicy::Skip => None,
        });
    }
    let union = p + g - i;
    Ok(Some(FrameScore {
        iou: i as f64 / union as f64,
        dice: 2.0 * i as f64 / (p + g) as f64,
    }))
}

pub fn frame_iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(score_frame(pred, gt, EmptyPolicy::One)?.unwrap().iou)
}

pub fn frame_dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    Ok(score_frame(pred, gt, EmptyPolicy::One)?.unwrap().dice)
}

/// Frame scores for one video, in frame order (skipped frames dropped).
pub fn score_video(preds: &[BinaryMask], gts: &[BinaryMask], policy: EmptyPolicy) -> Result<Vec<FrameScore>> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidParam(format!(
            "{} predicted frames vs {} ground-truth frames",
            preds.len(),
            gts.len()
        )));
    }
    let scored = par::map_range(preds.len(), |t| score_frame(&preds[t], &gts[t], policy));
    Ok(scored.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

fn mean(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len() as f64;
    it.sum::<f64>() / n
}

/// Unweighted mean over frames per video, then unweighted mean over videos.
pub fn aggregate(videos: &[(String, Vec<FrameScore>)]) -> Result<EvalReport> {
    aggregate_with(videos, EmptyPolicy::default())
}

pub fn aggregate_with(videos: &[(String, Vec<FrameScore>)], policy: EmptyPolicy) -> Result<EvalReport> {
    if videos.is_empty() {
        return Err(Error::InvalidParam("no videos to aggregate".into()));
    }
    let mut scores = Vec::with_capacity(videos.len());
    for (name, frames) in videos {
        if frames.is_empty() {
            return Err(Error::InvalidParam(format!("video {name:?} has no scored frames")));
        }
        scores.push(VideoScore {
            name: name.clone(),
            miou: mean(frames.iter().map(|f| f.iou)),
            mdice: mean(frames.iter().map(|f| f.dice)),
            frames: frames.len(),
        });
    }
    Ok(EvalReport {
        final_miou: mean(scores.iter().map(|v| v.miou)),
        final_mdice: mean(scores.iter().map(|v| v.mdice)),
        videos: scores,
        empty_policy: policy,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text table: one row per video plus the final row.
    pub fn to_table(&self) -> String {
        let width = self
            .videos
            .iter()
            .map(|v| v.name.len())
            .chain(["Final evaluation".len(), "Video".len()])
            .max()
            .unwrap();
        let mut s = String::new();
        writeln!(s, "{:<width$}  {:>8}  {:>8}", "Video", "mIoU", "mDice").unwrap();
        writeln!(s, "{}", "-".repeat(width + 20)).unwrap();
        for v in &self.videos {
            writeln!(s, "{:<width$}  {:>8.4}  {:>8.4}", v.name, v.miou, v.mdice).unwrap();
        }
        writeln!(s, "{}", "-".repeat(width + 20)).unwrap();
        writeln!(
            s,
            "{:<width$}  {:>8.6}  {:>8.6}",
            "Final evaluation", self.final_miou, self.final_mdice
        )
        .unwrap();
        writeln!(s, "(empty/empty frames: {:?})", self.empty_policy).unwrap();
        s
    }
}
