//! Box-prompt exchange with an external mask refiner, and the built-in
//! box-constrained fallback.
//!
//! Adapter contract:
//! * prompts: JSON lines, one object per frame,
//!   `{"frame":t,"boxes":[{"id":i,"x0":..,"y0":..,"x1":..,"y1":..,"score":s}]}`
//! * refined masks: `refined_{t:06}.png`, 8-bit grayscale, one per frame

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameio::{self, BinaryMask, Dims, ScoreMap};
use crate::proposal::{BoxProposal, BoxRect};

/// Share of refined-mask pixels that must fall inside the prompt boxes
/// before an import is flagged.
pub const CONTAINMENT_AUDIT_MIN: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBox {
    id: u32,
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
    score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptRecord {
    frame: usize,
    boxes: Vec<PromptBox>,
}

fn validate_box(b: &BoxProposal, dims: Dims) -> Result<()> {
    b.rect.validate(dims)?;
    if !(0.0..=1.0).contains(&b.score) {
        return Err(Error::InvalidParam(format!(
            "box {} in frame {} has score {} outside [0,1]",
            b.id, b.frame, b.score
        )));
    }
    Ok(())
}

/// One JSON line per frame; frames with no boxes get an empty list.
pub fn prompts_to_jsonl(per_frame: &[Vec<BoxProposal>], dims: Dims) -> Result<String> {
    let mut out = String::new();
    for (t, boxes) in per_frame.iter().enumerate() {
        for b in boxes {
            validate_box(b, dims)?;
        }
        let rec = PromptRecord {
            frame: t,
            boxes: boxes
                .iter()
                .map(|b| PromptBox {
                    id: b.id,
                    x0: b.rect.x0,
                    y0: b.rect.y0,
                    x1: b.rect.x1,
                    y1: b.rect.y1,
                    score: b.score,
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("prompt record serializes"));
        out.push('\n');
    }
    Ok(out)
}

pub fn export_prompts(per_frame: &[Vec<BoxProposal>], dims: Dims, path: &Path) -> Result<()> {
    let text = prompts_to_jsonl(per_frame, dims)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Parses a prompt file. Frames must be strictly ascending; gaps are filled
/// with empty lists. With `dims`, boxes are checked against the bounds.
pub fn parse_prompts(reader: impl BufRead, path: &Path, dims: Option<Dims>) -> Result<Vec<Vec<BoxProposal>>> {
    let mut out: Vec<Vec<BoxProposal>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", lineno + 1),
        };
        let rec: PromptRecord = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        if rec.frame < out.len() {
            return Err(perr(format!("frame {} out of order", rec.frame)));
        }
        out.resize_with(rec.frame, Vec::new);
        let boxes: Vec<BoxProposal> = rec
            .boxes
            .iter()
            .map(|b| BoxProposal {
                frame: rec.frame,
                rect: BoxRect::new(b.x0, b.y0, b.x1, b.y1),
                score: b.score,
                id: b.id,
            })
            .collect();
        for b in &boxes {
            match dims {
                Some(d) => validate_box(b, d),
                None if b.rect.x0 < b.rect.x1 && b.rect.y0 < b.rect.y1 => Ok(()),
                None => Err(Error::InvalidParam(format!("degenerate box {:?}", b.rect))),
            }
            .map_err(|e| perr(e.to_string()))?;
        }
        out.push(boxes);
    }
    Ok(out)
}

pub fn read_prompts(path: &Path, dims: Option<Dims>) -> Result<Vec<Vec<BoxProposal>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_prompts(BufReader::new(file), path, dims)
}

pub fn refined_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(format!("refined_{t:06}.png"))
}

/// Loads `refined_{t:06}.png` for every frame. Missing frames are an error
/// unless `allow_missing`, in which case they come back as `None`.
pub fn import_refined(dir: &Path, dims: Dims, len: usize, allow_missing: bool) -> Result<Vec<Option<BinaryMask>>> {
    (0..len)
        .map(|t| {
            let path = refined_path(dir, t);
            if !path.exists() {
                return if allow_missing {
                    Ok(None)
                } else {
                    Err(Error::MissingFrameFile {
                        what: "refined mask",
                        frame: t,
                        path,
                    })
                };
            }
            frameio::read_mask(&path, Some(dims)).map(Some)
        })
        .collect()
}

/// Union over boxes of the in-box pixels with `s >= tau_box`. A box that
/// selects nothing is filled completely.
pub fn fallback_refine(s: &ScoreMap, boxes: &[BoxProposal], tau_box: f32) -> BinaryMask {
    let mut mask = BinaryMask::zeros(s.dims());
    for b in boxes {
        let r = b.rect;
        let (xs, ys) = (r.x0 as usize..r.x1 as usize, r.y0 as usize..r.y1 as usize);
        let mut any = false;
        for y in ys.clone() {
            for x in xs.clone() {
                if s.get(x, y) >= tau_box {
                    mask.set(x, y, true);
                    any = true;
                }
            }
        }
        if !any {
            for y in ys.clone() {
                for x in xs.clone() {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Fraction of set pixels lying inside at least one box (1.0 for an empty mask).
pub fn containment_fraction(mask: &BinaryMask, boxes: &[BoxProposal]) -> f64 {
    let d = mask.dims();
    let (mut set, mut inside) = (0usize, 0usize);
    for y in 0..d.height {
        for x in 0..d.width {
            if mask.get(x, y) {
                set += 1;
                if boxes.iter().any(|b| b.rect.contains(x, y)) {
                    inside += 1;
                }
            }
        }
    }
    if set == 0 {
        1.0
    } else {
        inside as f64 / set as f64
    }
}

/// Logs imported masks that bleed too far outside their prompts. Returns
/// the frames that failed the audit.
pub fn audit_containment(masks: &[BinaryMask], prompts: &[Vec<BoxProposal>]) -> Vec<usize> {
    let empty = Vec::new();
    masks
        .iter()
        .enumerate()
        .filter_map(|(t, m)| {
            let frac = containment_fraction(m, prompts.get(t).unwrap_or(&empty));
            (frac < CONTAINMENT_AUDIT_MIN).then(|| {
                log::warn!("refined mask {t}: only {:.1}% of pixels inside prompt boxes", frac * 100.0);
                t
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn bp(frame: usize, r: (u32, u32, u32, u32), score: f32, id: u32) -> BoxProposal {
        BoxProposal {
            frame,
            rect: BoxRect::new(r.0, r.1, r.2, r.3),
            score,
            id,
        }
    }

    #[test]
    fn empty_prompts_have_one_line_per_frame() {
        let text = prompts_to_jsonl(&vec![Vec::new(); 4], Dims::new(10, 10)).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap(), r#"{"frame":0,"boxes":[]}"#);
    }

    #[test]
    fn one_box_per_frame_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let frames: Vec<Vec<BoxProposal>> = (0..5).map(|t| vec![bp(t, (1, 2, 5 + t as u32, 9), 0.125 * t as f32, 0)]).collect();
        export_prompts(&frames, Dims::new(16, 16), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(read_prompts(&path, Some(Dims::new(16, 16))).unwrap(), frames);
    }

    #[test]
    fn invalid_boxes_rejected() {
        let out_of_bounds = vec![vec![bp(0, (0, 0, 20, 5), 0.5, 0)]];
        assert!(prompts_to_jsonl(&out_of_bounds, Dims::new(10, 10)).is_err());
        let bad_score = vec![vec![bp(0, (0, 0, 2, 2), 1.5, 0)]];
        assert!(prompts_to_jsonl(&bad_score, Dims::new(10, 10)).is_err());
        let p = Path::new("inline");
        let frac = r#"{"frame":0,"boxes":[{"id":0,"x0":1.5,"y0":0,"x1":3,"y1":3,"score":0.5}]}"#;
        assert!(matches!(parse_prompts(frac.as_bytes(), p, None), Err(Error::Parse { .. })));
        let unordered = "{\"frame\":1,\"boxes\":[]}\n{\"frame\":0,\"boxes\":[]}\n";
        assert!(parse_prompts(unordered.as_bytes(), p, None).is_err());
    }

    #[test]
    fn import_examples() {
        let dir = tempdir().unwrap();
        let dims = Dims::new(6, 4);
        for t in 0..3 {
            let m = BinaryMask::from_fn(dims, |x, _| x == t);
            frameio::write_mask(&m, &refined_path(dir.path(), t)).unwrap();
        }
        let all = import_refined(dir.path(), dims, 3, false).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all[2].as_ref().unwrap().get(2, 0));

        let err = import_refined(dir.path(), dims, 4, false).unwrap_err();
        assert!(err.to_string().contains("frame 3"), "{err}");
        let partial = import_refined(dir.path(), dims, 4, true).unwrap();
        assert!(partial[3].is_none());

        frameio::write_mask(&BinaryMask::zeros(Dims::new(5, 4)), &refined_path(dir.path(), 1)).unwrap();
        assert!(matches!(
            import_refined(dir.path(), dims, 3, false),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fallback_examples() {
        let dims = Dims::new(12, 10);
        let s = ScoreMap::from_fn(dims, |x, _| if x < 6 { 0.9 } else { 0.1 });
        assert_eq!(fallback_refine(&s, &[], 0.5).count(), 0);

        let hot = bp(0, (1, 1, 4, 5), 0.9, 0);
        let m = fallback_refine(&s, &[hot], 0.5);
        assert_eq!(m, BinaryMask::from_fn(dims, |x, y| hot.rect.contains(x, y)));

        let cold = bp(0, (7, 2, 10, 6), 0.1, 1);
        let m = fallback_refine(&s, &[cold], 0.5);
        assert_eq!(m, BinaryMask::from_fn(dims, |x, y| cold.rect.contains(x, y)));

        // partial: only the hot half of a straddling box
        let straddle = bp(0, (4, 0, 8, 2), 0.5, 2);
        let m = fallback_refine(&s, &[straddle], 0.5);
        assert_eq!(m.count(), 4);
    }

    #[test]
    fn containment_audit() {
        let dims = Dims::new(10, 10);
        let b = bp(0, (0, 0, 5, 5), 0.5, 0);
        let inside = BinaryMask::from_fn(dims, |x, y| x < 5 && y < 5);
        assert_eq!(containment_fraction(&inside, &[b]), 1.0);
        let bleed = BinaryMask::from_fn(dims, |x, y| x < 6 && y < 5);
        assert!(containment_fraction(&bleed, &[b]) < CONTAINMENT_AUDIT_MIN);
        assert_eq!(audit_containment(&[inside, bleed], &[vec![b], vec![b]]), vec![1]);
    }

    proptest! {
        #[test]
        fn fallback_stays_in_boxes(vals in proptest::collection::vec(0f32..=1.0, 100), raw in proptest::collection::vec((0u32..9, 0u32..9, 1u32..5, 1u32..5), 0..4), tau in 0.01f32..=1.0) {
            let dims = Dims::new(10, 10);
            let s = ScoreMap::new(dims, vals).unwrap();
            let boxes: Vec<BoxProposal> = raw.iter().enumerate().map(|(i, &(x, y, w, h))| bp(0, (x, y, (x + w).min(10), (y + h).min(10)), 0.5, i as u32)).collect();
            let m = fallback_refine(&s, &boxes, tau);
            prop_assert_eq!(containment_fraction(&m, &boxes), 1.0);
        }

        #[test]
        fn prompt_round_trip(raw in proptest::collection::vec(proptest::collection::vec((0u32..30, 0u32..30, 1u32..10, 1u32..10, 0f32..=1.0), 0..4), 1..8)) {
            let frames: Vec<Vec<BoxProposal>> = raw.iter().enumerate().map(|(t, bs)| {
                bs.iter().enumerate().map(|(i, &(x, y, w, h, s))| bp(t, (x, y, x + w, y + h), s, i as u32)).collect()
            }).collect();
            let dims = Dims::new(40, 40);
            let text = prompts_to_jsonl(&frames, dims).unwrap();
            prop_assert_eq!(parse_prompts(text.as_bytes(), Path::new("mem"), Some(dims)).unwrap(), frames);
        }
    }
}
