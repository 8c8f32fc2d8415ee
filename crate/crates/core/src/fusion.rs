//! Weighted fusion of the four cue maps into a proposal score, and
//! thresholding of that score into a binary proposal mask.

use serde::{Deserialize, Serialize};

use crate::cues::CueBundle;
use crate::error::{Error, Result};
use crate::frameio::{BinaryMask, ScoreMap};
use crate::par;

/// Coefficients of the motion, skip-motion, semantic and background terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    #[serde(alias = "a")]
    pub alpha: f32,
    #[serde(alias = "b")]
    pub beta: f32,
    #[serde(alias = "g")]
    pub gamma: f32,
    #[serde(alias = "d")]
    pub delta: f32,
}

impl Default for FusionWeights {
    /// Uncalibrated starting point; real values come from calibration.
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.3,
            gamma: 0.2,
            delta: 0.1,
        }
    }
}

impl FusionWeights {
    pub fn new(alpha: f32, beta: f32, gamma: f32, delta: f32) -> Result<Self> {
        let w = Self {
            alpha,
            beta,
            gamma,
            delta,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParam(format!(
                "fusion weights must be finite and >= 0, got {all:?}"
            )));
        }
        if all.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidParam("fusion weights are all zero".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, c: f32) -> Self {
        Self {
            alpha: self.alpha * c,
            beta: self.beta * c,
            gamma: self.gamma * c,
            delta: self.delta * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    #[serde(flatten)]
    pub weights: FusionWeights,
    pub tau: f32,
    /// Multiply the motion map by `epsilon + (1 - epsilon) * semantic` before
    /// the weighted sum.
    pub semantic_pregate: bool,
    pub pregate_epsilon: f32,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            weights: FusionWeights::default(),
            tau: 0.35,
            semantic_pregate: false,
            pregate_epsilon: 0.3,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        validate_tau(self.tau)?;
        if !(0.0..=1.0).contains(&self.pregate_epsilon) {
            return Err(Error::InvalidParam(format!(
                "pregate_epsilon {} outside [0, 1]",
                self.pregate_epsilon
            )));
        }
        Ok(())
    }
}

pub fn validate_tau(tau: f32) -> Result<()> {
    if tau > 0.0 && tau <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParam(format!("threshold {tau} outside (0, 1]")))
    }
}

/// `clamp(α·m + β·m_skip + γ·p_sem + δ·b, 0, 1)` per pixel.
pub fn fuse(bundle: &CueBundle, w: &FusionWeights) -> ScoreMap {
    let dims = bundle.dims();
    let (m, ms, p, b) = (
        bundle.m.values(),
        bundle.m_skip.values(),
        bundle.p_sem.values(),
        bundle.b.values(),
    );
    let mut out = vec![0f32; dims.len()];
    par::fill_indexed(&mut out, |i| {
        let s = w.alpha * m[i] + w.beta * ms[i] + w.gamma * p[i] + w.delta * b[i];
        s.clamp(0.0, 1.0)
    });
    ScoreMap::from_vec_unchecked(dims, out)
}

/// Motion map reweighted by the semantic prior.
pub fn semantic_pregate(m: &ScoreMap, p_sem: &ScoreMap, epsilon: f32) -> ScoreMap {
    let values = m
        .values()
        .iter()
        .zip(p_sem.values())
        .map(|(m, p)| m * (epsilon + (1.0 - epsilon) * p))
        .collect();
    ScoreMap::from_vec_unchecked(m.dims(), values)
}

/// Proposal score for one frame under a full fusion config.
pub fn score(bundle: &CueBundle, cfg: &FusionConfig) -> ScoreMap {
    if cfg.semantic_pregate {
        let gated = CueBundle {
            m: semantic_pregate(&bundle.m, &bundle.p_sem, cfg.pregate_epsilon),
            ..bundle.clone()
        };
        fuse(&gated, &cfg.weights)
    } else {
        fuse(bundle, &cfg.weights)
    }
}

/// Bit set iff `s >= tau`.
pub fn binarize(s: &ScoreMap, tau: f32) -> BinaryMask {
    let bits = s.values().iter().map(|&v| (v >= tau) as u8).collect();
    BinaryMask::new(s.dims(), bits).expect("bits are 0/1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frameio::Dims;
    use proptest::prelude::*;

    fn bundle(m: f32, ms: f32, p: f32, b: f32) -> CueBundle {
        let d = Dims::new(4, 3);
        CueBundle {
            t: 0,
            m: ScoreMap::filled(d, m),
            m_skip: ScoreMap::filled(d, ms),
            p_sem: ScoreMap::filled(d, p),
            b: ScoreMap::filled(d, b),
        }
    }

    #[test]
    fn unit_weight_is_identity() {
        let d = Dims::new(5, 4);
        let m = ScoreMap::from_fn(d, |x, y| (x * 4 + y) as f32 / 20.0);
        let bun = CueBundle {
            t: 0,
            m: m.clone(),
            m_skip: ScoreMap::filled(d, 0.9),
            p_sem: ScoreMap::filled(d, 0.4),
            b: ScoreMap::filled(d, 1.0),
        };
        assert_eq!(fuse(&bun, &FusionWeights::new(1.0, 0.0, 0.0, 0.0).unwrap()), m);
    }

    #[test]
    fn arithmetic_and_clamp() {
        let s = fuse(&bundle(0.5, 1.0, 0.0, 0.0), &FusionWeights::new(0.5, 0.5, 0.0, 0.0).unwrap());
        assert!(s.values().iter().all(|&v| v == 0.75));
        let s = fuse(&bundle(1.0, 1.0, 1.0, 1.0), &FusionWeights::new(1.0, 1.0, 1.0, 1.0).unwrap());
        assert!(s.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn threshold_boundaries() {
        let d = Dims::new(3, 3);
        assert_eq!(binarize(&ScoreMap::filled(d, 0.5), 0.5).count(), 9);
        assert_eq!(binarize(&ScoreMap::filled(d, 0.99), 1.0).count(), 0);
    }

    #[test]
    fn invalid_weights() {
        assert!(FusionWeights::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(FusionWeights::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(validate_tau(0.0).is_err());
        assert!(validate_tau(1.0).is_ok());
    }

    #[test]
    fn pregate_formula() {
        let b = bundle(0.8, 0.0, 0.5, 0.0);
        let cfg = FusionConfig {
            weights: FusionWeights::new(1.0, 0.0, 0.0, 0.0).unwrap(),
            semantic_pregate: true,
            pregate_epsilon: 0.3,
            ..Default::default()
        };
        let expect = 0.8f32 * (0.3 + 0.7 * 0.5);
        assert!(score(&b, &cfg).values().iter().all(|&v| v == expect));
    }

    proptest! {
        #[test]
        fn binarize_is_antitone(vals in proptest::collection::vec(0f32..=1.0, 64), lo in 0.01f32..=1.0, hi in 0.01f32..=1.0) {
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            let s = ScoreMap::new(Dims::new(8, 8), vals).unwrap();
            let a = binarize(&s, lo);
            let b = binarize(&s, hi);
            prop_assert!(a.bits().iter().zip(b.bits()).all(|(x, y)| x >= y));
        }

        #[test]
        fn fuse_in_unit_range(v in proptest::collection::vec(0f32..=1.0, 4), w in proptest::collection::vec(0f32..5.0, 4)) {
            prop_assume!(w.iter().any(|&x| x > 0.0));
            let s = fuse(&bundle(v[0], v[1], v[2], v[3]), &FusionWeights::new(w[0], w[1], w[2], w[3]).unwrap());
            prop_assert!(s.values().iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
