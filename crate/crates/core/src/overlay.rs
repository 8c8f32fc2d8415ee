//! Deterministic PNG renderings for inspection: mask overlays and heatmaps.

use image::{ImageFormat, RgbImage};

use crate::frameio::{self, BinaryMask, Frame, ScoreMap};
use crate::proposal::BoxProposal;

/// Mask tint, blended 50% over the gray frame.
pub const HIGHLIGHT: [u8; 3] = [255, 0, 0];
/// Box outline color.
pub const OUTLINE: [u8; 3] = [0, 255, 0];

/// Frame in gray, mask pixels blended 50% with [`HIGHLIGHT`], boxes drawn
/// as 1-px [`OUTLINE`] rectangles on top.
pub fn render_overlay(frame: &Frame, mask: &BinaryMask, boxes: &[BoxProposal]) -> RgbImage {
    let d = frame.dims();
    let mut img = RgbImage::from_fn(d.width as u32, d.height as u32, |x, y| {
        let g = frame.get(x as usize, y as usize);
        if mask.get(x as usize, y as usize) {
            image::Rgb(HIGHLIGHT.map(|h| ((g as u16 + h as u16) / 2) as u8))
        } else {
            image::Rgb([g, g, g])
        }
    });
    for b in boxes {
        let r = b.rect;
        if r.x1 <= r.x0 || r.y1 <= r.y0 {
            continue;
        }
        for x in r.x0..r.x1 {
            img.put_pixel(x, r.y0, image::Rgb(OUTLINE));
            img.put_pixel(x, r.y1 - 1, image::Rgb(OUTLINE));
        }
        for y in r.y0..r.y1 {
            img.put_pixel(r.x0, y, image::Rgb(OUTLINE));
            img.put_pixel(r.x1 - 1, y, image::Rgb(OUTLINE));
        }
    }
    img
}

pub fn overlay_png(frame: &Frame, mask: &BinaryMask, boxes: &[BoxProposal]) -> Vec<u8> {
    let img = render_overlay(frame, mask, boxes);
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

/// Score map as 8-bit grayscale, `round(255 · clamp(v, 0, 1))`.
pub fn heatmap_png(map: &ScoreMap) -> Vec<u8> {
    let px = map
        .values()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    frameio::encode_gray_png(map.dims(), px)
}

pub fn frame_png(frame: &Frame) -> Vec<u8> {
    frameio::encode_gray_png(frame.dims(), frame.pixels().to_vec())
}
