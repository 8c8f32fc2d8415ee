//! Connected components of the binarized proposal and their box prompts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameio::{BinaryMask, Dims, ScoreMap};
use crate::fusion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Axis-aligned box, half-open pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl BoxRect {
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> u32 {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> u32 {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0 as usize..self.x1 as usize).contains(&x) && (self.y0 as usize..self.y1 as usize).contains(&y)
    }

    pub fn validate(&self, bounds: Dims) -> Result<()> {
        if self.x0 < self.x1
            && self.y0 < self.y1
            && self.x1 as usize <= bounds.width
            && self.y1 as usize <= bounds.height
        {
            Ok(())
        } else {
            Err(Error::InvalidParam(format!("box {self:?} invalid for bounds {bounds}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub label: u32,
    /// `(x, y)` in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub extent: BoxRect,
}

impl Component {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxProposal {
    pub frame: usize,
    #[serde(flatten)]
    pub rect: BoxRect,
    pub score: f32,
    pub id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalParams {
    pub min_area: usize,
    pub margin: u32,
    pub connectivity: Connectivity,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            min_area: 9,
            margin: 4,
            connectivity: Connectivity::Eight,
        }
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Two-pass union-find labeling. Components are numbered from 1 in order of
/// their first pixel in row-major scan.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Component> {
    let Dims { width, height } = mask.dims();
    const NONE: u32 = u32::MAX;
    let mut provisional = vec![NONE; width * height];
    let mut sets = DisjointSet::new();

    for y in 0..height {
        for x in 0..width {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbors = [NONE; 4];
            if x > 0 {
                neighbors[0] = provisional[y * width + x - 1];
            }
            if y > 0 {
                let up = (y - 1) * width;
                neighbors[1] = provisional[up + x];
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        neighbors[2] = provisional[up + x - 1];
                    }
                    if x + 1 < width {
                        neighbors[3] = provisional[up + x + 1];
                    }
                }
            }
            let mut label = NONE;
            for &n in neighbors.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    sets.union(label, n);
                }
            }
            if label == NONE {
                label = sets.make();
            }
            provisional[y * width + x] = label;
        }
    }

    let mut root_to_comp = vec![NONE; sets.parent.len()];
    let mut comps: Vec<Component> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let p = provisional[y * width + x];
            if p == NONE {
                continue;
            }
            let root = sets.find(p) as usize;
            if root_to_comp[root] == NONE {
                root_to_comp[root] = comps.len() as u32;
                comps.push(Component {
                    label: comps.len() as u32 + 1,
                    pixels: Vec::new(),
                    extent: BoxRect::new(x as u32, y as u32, x as u32 + 1, y as u32 + 1),
                });
            }
            let c = &mut comps[root_to_comp[root] as usize];
            c.pixels.push((x, y));
            let e = &mut c.extent;
            e.x0 = e.x0.min(x as u32);
            e.x1 = e.x1.max(x as u32 + 1);
            e.y1 = e.y1.max(y as u32 + 1);
        }
    }
    comps
}

/// Drops small components and turns the rest into margin-expanded boxes
/// scored by the mean proposal score over the component.
pub fn components_to_boxes(
    comps: &[Component],
    s: &ScoreMap,
    frame: usize,
    min_area: usize,
    margin: u32,
) -> Vec<BoxProposal> {
    let Dims { width, height } = s.dims();
    comps
        .iter()
        .filter(|c| c.area() >= min_area.max(1))
        .enumerate()
        .map(|(id, c)| {
            let sum: f64 = c.pixels.iter().map(|&(x, y)| s.get(x, y) as f64).sum();
            let e = c.extent;
            BoxProposal {
                frame,
                rect: BoxRect {
                    x0: e.x0.saturating_sub(margin),
                    y0: e.y0.saturating_sub(margin),
                    x1: (e.x1 + margin).min(width as u32),
                    y1: (e.y1 + margin).min(height as u32),
                },
                score: (sum / c.area() as f64) as f32,
                id: id as u32,
            }
        })
        .collect()
}

/// Threshold, label and box one frame's proposal score.
pub fn propose_frame(s: &ScoreMap, tau: f32, params: &ProposalParams, frame: usize) -> Vec<BoxProposal> {
    let mask = fusion::binarize(s, tau);
    let comps = connected_components(&mask, params.connectivity);
    components_to_boxes(&comps, s, frame, params.min_area, params.margin)
}
