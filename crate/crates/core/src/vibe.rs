//! Sample-based background model (ViBe) producing a binary anomaly map.
//!
//! Each pixel keeps a reservoir of past intensities. A pixel is background
//! when enough samples lie within `radius_r` of the observation. Background
//! pixels occasionally overwrite one of their own samples and, independently,
//! one sample of a random 8-neighbor (spatial diffusion).
//!
//! A step is two-phase: every pixel is classified against the reservoir as it
//! stood before the step, then updates are applied in row-major order. The rng
//! stream is consumed only in that second phase, so the result does not depend
//! on how classification is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameio::{Dims, Frame, ScoreMap};
use crate::par;

const NEIGHBORS_8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VibeParams {
    pub samples_n: usize,
    pub radius_r: u8,
    pub min_matches: usize,
    pub subsample_phi: u32,
    #[serde(skip)]
    pub rng_seed: u64,
}

impl Default for VibeParams {
    fn default() -> Self {
        Self {
            samples_n: 20,
            radius_r: 20,
            min_matches: 2,
            subsample_phi: 16,
            rng_seed: 42,
        }
    }
}

impl VibeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_matches < 1 || self.samples_n < self.min_matches {
            return Err(Error::InvalidParam(format!(
                "need samples_n ({}) >= min_matches ({}) >= 1",
                self.samples_n, self.min_matches
            )));
        }
        if self.subsample_phi < 1 {
            return Err(Error::InvalidParam("subsample_phi must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VibeModel {
    dims: Dims,
    params: VibeParams,
    /// `samples_n` consecutive entries per pixel, row-major pixel order.
    reservoir: Vec<u8>,
    rng: ChaCha8Rng,
}

#[inline]
fn clamp_xy(dims: Dims, x: usize, y: usize, dx: isize, dy: isize) -> usize {
    let nx = (x as isize + dx).clamp(0, dims.width as isize - 1) as usize;
    let ny = (y as isize + dy).clamp(0, dims.height as isize - 1) as usize;
    dims.index(nx, ny)
}

impl VibeModel {
    /// Seeds every reservoir from the 3x3 neighborhood (self included) of
    /// each pixel in `first`, with clamped borders.
    pub fn init(first: &Frame, params: VibeParams) -> Result<Self> {
        params.validate()?;
        let dims = first.dims();
        let n = params.samples_n;
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        let mut reservoir = Vec::with_capacity(dims.len() * n);
        for y in 0..dims.height {
            for x in 0..dims.width {
                for _ in 0..n {
                    let k = rng.random_range(0..9usize);
                    let (dx, dy) = ((k % 3) as isize - 1, (k / 3) as isize - 1);
                    reservoir.push(first.pixels()[clamp_xy(dims, x, y, dx, dy)]);
                }
            }
        }
        Ok(Self {
            dims,
            params,
            reservoir,
            rng,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &VibeParams {
        &self.params
    }

    pub fn samples(&self, x: usize, y: usize) -> &[u8] {
        let n = self.params.samples_n;
        let i = self.dims.index(x, y) * n;
        &self.reservoir[i..i + n]
    }

    pub fn reservoir(&self) -> &[u8] {
        &self.reservoir
    }

    fn is_background(&self, pixel: usize, value: u8) -> bool {
        let n = self.params.samples_n;
        let r = self.params.radius_r;
        let mut matches = 0;
        for &s in &self.reservoir[pixel * n..(pixel + 1) * n] {
            if s.abs_diff(value) <= r {
                matches += 1;
                if matches >= self.params.min_matches {
                    return true;
                }
            }
        }
        false
    }

    /// Classifies `frame` (1.0 = foreground) and updates the model.
    pub fn step(&mut self, frame: &Frame) -> Result<ScoreMap> {
        self.dims.ensure(frame.dims())?;
        let px = frame.pixels();
        let foreground: Vec<bool> = {
            let this = &*self;
            par::map_range(px.len(), |i| !this.is_background(i, px[i]))
        };

        let n = self.params.samples_n;
        let phi = self.params.subsample_phi;
        for y in 0..self.dims.height {
            for x in 0..self.dims.width {
                let i = self.dims.index(x, y);
                if foreground[i] {
                    continue;
                }
                let value = px[i];
                if self.rng.random_range(0..phi) == 0 {
                    let s = self.rng.random_range(0..n);
                    self.reservoir[i * n + s] = value;
                }
                if self.rng.random_range(0..phi) == 0 {
                    let (dx, dy) = NEIGHBORS_8[self.rng.random_range(0..8usize)];
                    let j = clamp_xy(self.dims, x, y, dx, dy);
                    let s = self.rng.random_range(0..n);
                    self.reservoir[j * n + s] = value;
                }
            }
        }

        let values = foreground.iter().map(|&f| if f { 1.0 } else { 0.0 }).collect();
        Ok(ScoreMap::from_vec_unchecked(self.dims, values))
    }
}

/// Runs a fresh model over the whole sequence, initialized on frame 0.
pub fn run_sequence(frames: &[Frame], params: VibeParams) -> Result<Vec<ScoreMap>> {
    let Some(first) = frames.first() else {
        return Ok(Vec::new());
    };
    let mut model = VibeModel::init(first, params)?;
    frames.iter().map(|f| model.step(f)).collect()
}
