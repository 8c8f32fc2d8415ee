//! Assembles the per-frame cue bundle from built-in estimators or files.
//!
//! File layout for score maps is `{dir}/{role}/frame_{t:06}.pfm`; external
//! flow lives in `{dir}/flow_{src:06}_{dst:06}.flo` with the pair chosen by
//! [`motion::skip_pair`].
//!
//! A missing optional cue becomes an all-zero map. Weights are not
//! renormalized, so that is the same as zeroing the role's weight.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frameio::{self, Dims, Frame, ScoreMap};
use crate::motion::{self, FlowConfig, NormConfig, SkipConfig};
use crate::par;
use crate::vibe::{self, VibeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueRole {
    Motion,
    SkipMotion,
    Semantic,
    Background,
}

impl CueRole {
    pub const ALL: [CueRole; 4] = [
        CueRole::Motion,
        CueRole::SkipMotion,
        CueRole::Semantic,
        CueRole::Background,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CueRole::Motion => "motion",
            CueRole::SkipMotion => "skip_motion",
            CueRole::Semantic => "semantic",
            CueRole::Background => "background",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name() == s)
    }
}

impl fmt::Display for CueRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum CueOrigin {
    /// Computed in-process (motion roles and background only).
    Builtin,
    /// Per-frame PFM maps under `{dir}/{role}/`.
    Files { dir: PathBuf },
    /// Per-pair `.flo` files in `dir` (motion roles only).
    Flow { dir: PathBuf },
    /// Always the all-zero map.
    Absent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueSource {
    #[serde(flatten)]
    pub origin: CueOrigin,
    #[serde(default)]
    pub optional: bool,
    /// Percentile normalization for file maps. Built-in and flow motion
    /// always normalize (with the global percentile when this is unset);
    /// file maps without it must already be in [0, 1].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percentile: Option<f64>,
}

impl CueSource {
    pub fn builtin() -> Self {
        Self {
            origin: CueOrigin::Builtin,
            optional: false,
            percentile: None,
        }
    }

    pub fn files(dir: impl Into<PathBuf>) -> Self {
        Self {
            origin: CueOrigin::Files { dir: dir.into() },
            optional: false,
            percentile: None,
        }
    }

    pub fn flow(dir: impl Into<PathBuf>) -> Self {
        Self {
            origin: CueOrigin::Flow { dir: dir.into() },
            optional: false,
            percentile: None,
        }
    }

    pub fn absent() -> Self {
        Self {
            origin: CueOrigin::Absent,
            optional: true,
            percentile: None,
        }
    }

    pub fn optional(mut self) -> Self {
        self.optional = true;
        self
    }
}

/// One source per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CueSources {
    pub motion: CueSource,
    pub skip_motion: CueSource,
    pub semantic: CueSource,
    pub background: CueSource,
}

impl Default for CueSources {
    fn default() -> Self {
        Self {
            motion: CueSource::builtin(),
            skip_motion: CueSource::builtin(),
            semantic: CueSource::absent(),
            background: CueSource::builtin(),
        }
    }
}

impl CueSources {
    /// Every role read from PFM files under `dir` (the dump layout).
    pub fn all_files(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        Self {
            motion: CueSource::files(&dir),
            skip_motion: CueSource::files(&dir),
            semantic: CueSource::files(&dir),
            background: CueSource::files(&dir),
        }
    }

    pub fn get(&self, role: CueRole) -> &CueSource {
        match role {
            CueRole::Motion => &self.motion,
            CueRole::SkipMotion => &self.skip_motion,
            CueRole::Semantic => &self.semantic,
            CueRole::Background => &self.background,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for role in CueRole::ALL {
            let src = self.get(role);
            match (&src.origin, role) {
                (CueOrigin::Builtin, CueRole::Semantic) => {
                    return Err(Error::InvalidParam(
                        "semantic cue has no built-in source; use files or absent".into(),
                    ))
                }
                (CueOrigin::Flow { .. }, CueRole::Semantic | CueRole::Background) => {
                    return Err(Error::InvalidParam(format!("{role} cue cannot come from flow files")))
                }
                _ => {}
            }
            if let Some(p) = src.percentile {
                NormConfig { percentile: p }.validate()?;
            }
        }
        Ok(())
    }
}

/// Background-model parameters plus the warmup window during which the
/// background cue is forced to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackgroundConfig {
    #[serde(flatten)]
    pub params: VibeParams,
    pub warmup: usize,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            params: VibeParams::default(),
            warmup: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CueBundle {
    pub t: usize,
    pub m: ScoreMap,
    pub m_skip: ScoreMap,
    pub p_sem: ScoreMap,
    pub b: ScoreMap,
}

impl CueBundle {
    pub fn dims(&self) -> Dims {
        self.m.dims()
    }

    pub fn get(&self, role: CueRole) -> &ScoreMap {
        match role {
            CueRole::Motion => &self.m,
            CueRole::SkipMotion => &self.m_skip,
            CueRole::Semantic => &self.p_sem,
            CueRole::Background => &self.b,
        }
    }

    pub fn get_mut(&mut self, role: CueRole) -> &mut ScoreMap {
        match role {
            CueRole::Motion => &mut self.m,
            CueRole::SkipMotion => &mut self.m_skip,
            CueRole::Semantic => &mut self.p_sem,
            CueRole::Background => &mut self.b,
        }
    }
}

/// Everything `assemble_bundle` needs about the sequence.
pub struct CueContext<'a> {
    frames: &'a [Frame],
    flow: FlowConfig,
    skip: SkipConfig,
    norm: NormConfig,
    background: Option<Vec<ScoreMap>>,
    warmup: usize,
}

impl<'a> CueContext<'a> {
    /// Runs the background model up front when any role needs it, since it
    /// is a sequential scan over the whole sequence.
    pub fn new(
        frames: &'a [Frame],
        sources: &CueSources,
        flow: FlowConfig,
        skip: SkipConfig,
        norm: NormConfig,
        background: BackgroundConfig,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::SequenceTooShort(0));
        }
        sources.validate()?;
        flow.validate()?;
        skip.validate()?;
        norm.validate()?;
        let needs_bg = sources.background.origin == CueOrigin::Builtin;
        let bg = if needs_bg {
            Some(vibe::run_sequence(frames, background.params)?)
        } else {
            None
        };
        Ok(Self {
            frames,
            flow,
            skip,
            norm,
            background: bg,
            warmup: background.warmup,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dims(&self) -> Dims {
        self.frames[0].dims()
    }

    fn gap(&self, role: CueRole) -> usize {
        if role == CueRole::SkipMotion {
            self.skip.k
        } else {
            1
        }
    }

    fn norm_for(&self, src: &CueSource) -> NormConfig {
        src.percentile
            .map(|percentile| NormConfig { percentile })
            .unwrap_or(self.norm)
    }

    fn builtin_motion(&self, t: usize, role: CueRole, src: &CueSource) -> Result<ScoreMap> {
        if self.frames.len() < 2 {
            return Ok(ScoreMap::zeros(self.dims()));
        }
        let (a, b) = motion::skip_pair(t, self.gap(role), self.frames.len())?;
        // anchor the flow on frame t so the map lives on t's pixel grid
        let other = if a == t { b } else { a };
        motion::motion_score(&self.frames[t], &self.frames[other], &self.flow, &self.norm_for(src))
    }

    fn flow_motion(&self, t: usize, role: CueRole, src: &CueSource, dir: &Path) -> Result<Option<ScoreMap>> {
        let (a, b) = motion::skip_pair(t, self.gap(role), self.frames.len())?;
        let path = dir.join(motion::flow_file_name(a, b));
        if !path.exists() {
            return missing(src, "flow file", t, path);
        }
        let field = frameio::read_flow(&path)?;
        check_dims(self.dims(), field.dims(), &path)?;
        let raw = motion::flow_magnitude(&field);
        Ok(Some(motion::normalize_score(&raw, &self.norm_for(src))))
    }

    fn file_map(&self, t: usize, role: CueRole, src: &CueSource, dir: &Path) -> Result<Option<ScoreMap>> {
        let path = cue_path(dir, role, t);
        if !path.exists() {
            return missing(src, "cue map", t, path);
        }
        let map = frameio::read_score_map(&path)?;
        check_dims(self.dims(), map.dims(), &path)?;
        let map = match src.percentile {
            Some(percentile) => motion::normalize_score(&map, &NormConfig { percentile }),
            None => map,
        };
        map.check_unit_range()?;
        Ok(Some(map))
    }

    fn resolve(&self, t: usize, role: CueRole, src: &CueSource) -> Result<ScoreMap> {
        let dims = self.dims();
        let map = match (&src.origin, role) {
            (CueOrigin::Absent, _) => None,
            (CueOrigin::Builtin, CueRole::Motion | CueRole::SkipMotion) => {
                Some(self.builtin_motion(t, role, src)?)
            }
            (CueOrigin::Builtin, CueRole::Background) => {
                let maps = self.background.as_ref().expect("background precomputed");
                if t < self.warmup {
                    None
                } else {
                    Some(maps[t].clone())
                }
            }
            (CueOrigin::Builtin, CueRole::Semantic) => unreachable!("rejected by validate"),
            (CueOrigin::Flow { dir }, _) => self.flow_motion(t, role, src, dir)?,
            (CueOrigin::Files { dir }, _) => self.file_map(t, role, src, dir)?,
        };
        Ok(map.unwrap_or_else(|| ScoreMap::zeros(dims)))
    }
}

fn missing(src: &CueSource, what: &'static str, frame: usize, path: PathBuf) -> Result<Option<ScoreMap>> {
    if src.optional {
        Ok(None)
    } else {
        Err(Error::MissingFrameFile { what, frame, path })
    }
}

fn check_dims(expected: Dims, actual: Dims, path: &Path) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            expected,
            actual,
            context: Some(path.display().to_string()),
        });
    }
    Ok(())
}

pub fn cue_path(dir: &Path, role: CueRole, t: usize) -> PathBuf {
    dir.join(role.name()).join(format!("frame_{t:06}.pfm"))
}

/// The four cue maps for frame `t`.
pub fn assemble_bundle(t: usize, sources: &CueSources, ctx: &CueContext<'_>) -> Result<CueBundle> {
    if t >= ctx.len() {
        return Err(Error::InvalidParam(format!("frame {t} outside sequence of {}", ctx.len())));
    }
    Ok(CueBundle {
        t,
        m: ctx.resolve(t, CueRole::Motion, &sources.motion)?,
        m_skip: ctx.resolve(t, CueRole::SkipMotion, &sources.skip_motion)?,
        p_sem: ctx.resolve(t, CueRole::Semantic, &sources.semantic)?,
        b: ctx.resolve(t, CueRole::Background, &sources.background)?,
    })
}

/// Bundles for every frame, computed in parallel.
pub fn assemble_all(sources: &CueSources, ctx: &CueContext<'_>) -> Result<Vec<CueBundle>> {
    par::map_range(ctx.len(), |t| {
        assemble_bundle(t, sources, ctx).map_err(|e| (t, e))
    })
    .into_iter()
    .collect::<std::result::Result<Vec<_>, _>>()
    .map_err(|(_, e)| e)
}

/// Writes every role of `bundle` under the dump layout.
pub fn write_bundle(dir: &Path, bundle: &CueBundle) -> Result<()> {
    for role in CueRole::ALL {
        let path = cue_path(dir, role, bundle.t);
        frameio::ensure_dir(path.parent().unwrap())?;
        frameio::write_score_map(bundle.get(role), &path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{fuse, FusionWeights};
    use tempfile::tempdir;

    fn frames(n: usize, dims: Dims) -> Vec<Frame> {
        (0..n)
            .map(|t| Frame::from_fn(dims, |x, y| ((x * 7 + y * 13 + t * 3) % 251) as u8))
            .collect()
    }

    fn ctx<'a>(frames: &'a [Frame], sources: &CueSources) -> Result<CueContext<'a>> {
        CueContext::new(
            frames,
            sources,
            FlowConfig::default(),
            SkipConfig::default(),
            NormConfig::default(),
            BackgroundConfig::default(),
        )
    }

    #[test]
    fn file_backed_bundle() {
        let dir = tempdir().unwrap();
        let dims = Dims::new(32, 32);
        let fr = frames(3, dims);
        let mut expect = Vec::new();
        for (i, role) in CueRole::ALL.into_iter().enumerate() {
            let m = ScoreMap::from_fn(dims, |x, y| ((x + y + i) % 10) as f32 / 10.0);
            let p = cue_path(dir.path(), role, 1);
            frameio::ensure_dir(p.parent().unwrap()).unwrap();
            frameio::write_score_map(&m, &p).unwrap();
            expect.push(m);
        }
        let sources = CueSources::all_files(dir.path());
        let c = ctx(&fr, &sources).unwrap();
        let b = assemble_bundle(1, &sources, &c).unwrap();
        for (role, m) in CueRole::ALL.into_iter().zip(&expect) {
            assert_eq!(b.get(role), m);
        }
        // frame 0 has no files and nothing is optional
        assert!(matches!(
            assemble_bundle(0, &sources, &c),
            Err(Error::MissingFrameFile { frame: 0, .. })
        ));
    }

    #[test]
    fn optional_semantic_becomes_zero() {
        let dir = tempdir().unwrap();
        let dims = Dims::new(32, 32);
        let fr = frames(4, dims);
        let sources = CueSources {
            semantic: CueSource::files(dir.path()).optional(),
            ..Default::default()
        };
        let c = ctx(&fr, &sources).unwrap();
        let b = assemble_bundle(2, &sources, &c).unwrap();
        assert!(b.p_sem.values().iter().all(|&v| v == 0.0));
        assert_eq!(b.m.dims(), dims);
    }

    #[test]
    fn out_of_range_file_rejected() {
        let dir = tempdir().unwrap();
        let dims = Dims::new(32, 32);
        let fr = frames(2, dims);
        let mut m = ScoreMap::filled(dims, 0.5);
        m.values_mut()[5] = 1.5;
        let p = cue_path(dir.path(), CueRole::Semantic, 0);
        frameio::ensure_dir(p.parent().unwrap()).unwrap();
        frameio::write_score_map(&m, &p).unwrap();
        let sources = CueSources {
            semantic: CueSource::files(dir.path()),
            ..Default::default()
        };
        let c = ctx(&fr, &sources).unwrap();
        assert!(matches!(
            assemble_bundle(0, &sources, &c),
            Err(Error::OutOfRange { index: 5, .. })
        ));
        // wrong size
        frameio::write_score_map(&ScoreMap::zeros(Dims::new(8, 8)), &p).unwrap();
        assert!(matches!(
            assemble_bundle(0, &sources, &c),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn semantic_builtin_rejected() {
        let fr = frames(2, Dims::new(32, 32));
        let sources = CueSources {
            semantic: CueSource::builtin(),
            ..Default::default()
        };
        assert!(ctx(&fr, &sources).is_err());
    }

    #[test]
    fn flow_files_are_ingested() {
        let dir = tempdir().unwrap();
        let dims = Dims::new(32, 32);
        let fr = frames(8, dims);
        let field = crate::FlowField::new(dims, (0..dims.len()).map(|i| [(i % 5) as f32, 0.0]).collect()).unwrap();
        let (a, b) = motion::skip_pair(0, 5, 8).unwrap();
        frameio::write_flow(&field, &dir.path().join(motion::flow_file_name(a, b))).unwrap();
        let sources = CueSources {
            skip_motion: CueSource::flow(dir.path()),
            ..Default::default()
        };
        let c = ctx(&fr, &sources).unwrap();
        let bundle = assemble_bundle(0, &sources, &c).unwrap();
        let expect = motion::normalize_score(&motion::flow_magnitude(&field), &NormConfig::default());
        assert_eq!(bundle.m_skip, expect);
        assert!(matches!(
            assemble_bundle(1, &sources, &c),
            Err(Error::MissingFrameFile { what: "flow file", .. })
        ));
    }

    #[test]
    fn background_warmup_zeroes_early_frames() {
        let dims = Dims::new(32, 32);
        let mut fr = vec![Frame::filled(dims, 30); 14];
        for f in fr.iter_mut().skip(3) {
            *f = Frame::from_fn(dims, |x, y| if x < 8 && y < 8 { 220 } else { 30 });
        }
        let sources = CueSources::default();
        let c = ctx(&fr, &sources).unwrap();
        let early = assemble_bundle(5, &sources, &c).unwrap();
        assert!(early.b.values().iter().all(|&v| v == 0.0));
        let late = assemble_bundle(12, &sources, &c).unwrap();
        assert!(late.b.values().contains(&1.0));
    }

    #[test]
    fn zero_substitution_matches_zero_weight() {
        let dims = Dims::new(32, 32);
        let fr = frames(12, dims);
        let with = CueSources::default();
        let c = ctx(&fr, &with).unwrap();
        let full = assemble_bundle(11, &with, &c).unwrap();
        let without = CueSources {
            background: CueSource::absent(),
            ..Default::default()
        };
        let c2 = ctx(&fr, &without).unwrap();
        let zeroed = assemble_bundle(11, &without, &c2).unwrap();
        let w = FusionWeights::new(0.4, 0.3, 0.2, 0.1).unwrap();
        let w0 = FusionWeights { delta: 0.0, ..w };
        assert_eq!(fuse(&zeroed, &w), fuse(&full, &w0));
    }

    #[test]
    fn deterministic_and_parallel_equals_single() {
        let dims = Dims::new(32, 32);
        let fr = frames(6, dims);
        let s = CueSources::default();
        let c = ctx(&fr, &s).unwrap();
        let all = assemble_all(&s, &c).unwrap();
        for (t, b) in all.iter().enumerate() {
            assert_eq!(b, &assemble_bundle(t, &s, &c).unwrap());
        }
    }
}
