//! End-to-end orchestration behind a TOML config.
//!
//! Stage order: cues → fusion → binarize → components → boxes → isolated-box
//! filter → temporal recovery → refine (external import or built-in
//! fallback) → masks → optional evaluation.
//!
//! Intermediates layout (under the dump directory):
//!
//! ```text
//! cues/{role}/frame_{t:06}.pfm   normalized cue maps
//! scores/frame_{t:06}.pfm        fused proposal score
//! boxes_raw.jsonl                boxes straight from components
//! boxes_filtered.jsonl           after the isolated-box filter
//! boxes_final.jsonl              after temporal recovery
//! overlays/frame_{t:06}.png      proposal mask + raw boxes over the frame
//! ```
//!
//! Each stage run on its own reads the previous stage's dump, which is
//! enough to reproduce the final masks byte for byte.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cues::{self, BackgroundConfig, CueBundle, CueContext, CueRole, CueSources};
use crate::error::{Error, Result};
use crate::frameio::{self, BinaryMask, Dims, Frame, ScoreMap};
use crate::fusion::{self, FusionConfig};
use crate::metrics::{self, EmptyPolicy, EvalReport};
use crate::motion::{FlowConfig, NormConfig, SkipConfig};
use crate::overlay;
use crate::par;
use crate::proposal::{self, BoxProposal, ProposalParams};
use crate::refine;
use crate::temporal::{self, TemporalConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    pub dir: PathBuf,
    pub pattern: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("frames"),
            pattern: "*.png".into(),
            name: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineMode {
    External,
    #[default]
    Fallback,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub mode: RefineMode,
    /// Where the external refiner leaves `refined_{t:06}.png`
    /// (default: the output directory).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Defaults to the fusion threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_box: Option<f32>,
    /// Use the fallback for frames the external refiner did not produce.
    pub allow_missing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Setting this enables intermediate dumps on full runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intermediates: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            intermediates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub gt_dir: PathBuf,
    pub pattern: String,
    pub empty_policy: EmptyPolicy,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            gt_dir: PathBuf::from("gt"),
            pattern: "*.png".into(),
            empty_policy: EmptyPolicy::One,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Worker threads for data-parallel loops (0 = all cores).
    pub threads: usize,
    pub input: InputConfig,
    pub cues: CueSources,
    pub flow: FlowConfig,
    pub skip: SkipConfig,
    pub norm: NormConfig,
    pub vibe: BackgroundConfig,
    pub fusion: FusionConfig,
    pub proposal: ProposalParams,
    pub temporal: TemporalConfig,
    pub refine: RefineConfig,
    pub output: OutputConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: 0,
            input: InputConfig::default(),
            cues: CueSources::default(),
            flow: FlowConfig::default(),
            skip: SkipConfig::default(),
            norm: NormConfig::default(),
            vibe: BackgroundConfig::default(),
            fusion: FusionConfig::default(),
            proposal: ProposalParams::default(),
            temporal: TemporalConfig::default(),
            refine: RefineConfig::default(),
            output: OutputConfig::default(),
            eval: None,
            base_dir: PathBuf::from("."),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: base_dir.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Self::from_toml(&text, &base).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    /// Checks every sub-config invariant (not the file system).
    pub fn validate(&self) -> Result<()> {
        self.cues.validate()?;
        self.flow.validate()?;
        self.skip.validate()?;
        self.norm.validate()?;
        self.vibe.params.validate()?;
        self.fusion.validate()?;
        self.temporal.validate()?;
        if let Some(t) = self.refine.tau_box {
            fusion::validate_tau(t)?;
        }
        Ok(())
    }

    fn abs(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Copy with every path made absolute against `base_dir`.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.input.dir = self.abs(&self.input.dir);
        for role in CueRole::ALL {
            let src = match role {
                CueRole::Motion => &mut c.cues.motion,
                CueRole::SkipMotion => &mut c.cues.skip_motion,
                CueRole::Semantic => &mut c.cues.semantic,
                CueRole::Background => &mut c.cues.background,
            };
            match &mut src.origin {
                cues::CueOrigin::Files { dir } | cues::CueOrigin::Flow { dir } => *dir = self.abs(dir),
                _ => {}
            }
        }
        c.refine.dir = self.refine.dir.as_deref().map(|d| self.abs(d));
        c.output.dir = self.abs(&self.output.dir);
        c.output.intermediates = self.output.intermediates.as_deref().map(|d| self.abs(d));
        if let Some(e) = &mut c.eval {
            e.gt_dir = self.abs(&e.gt_dir);
        }
        c
    }

    pub fn video_name(&self) -> String {
        self.input.name.clone().unwrap_or_else(|| {
            self.input
                .dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "video".into())
        })
    }

    pub fn tau_box(&self) -> f32 {
        self.refine.tau_box.unwrap_or(self.fusion.tau)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Load,
    Cues,
    Propose,
    Refine,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Cues => "cues",
            Stage::Propose => "propose",
            Stage::Refine => "refine",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub struct PipelineError {
    pub stage: Stage,
    pub frame: Option<usize>,
    #[source]
    pub source: Error,
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed", self.stage)?;
        if let Some(t) = self.frame {
            write!(f, " at frame {t}")?;
        }
        write!(f, ": {}", self.source)
    }
}

trait StageExt<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, PipelineError>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, PipelineError> {
        self.map_err(|source| {
            let frame = match &source {
                Error::MissingFrameFile { frame, .. } => Some(*frame),
                _ => None,
            };
            PipelineError { stage, frame, source }
        })
    }
}

pub type StageResult<T> = std::result::Result<T, PipelineError>;

/// Paths of the intermediate dump.
#[derive(Debug, Clone)]
pub struct DumpLayout {
    pub root: PathBuf,
}

impl DumpLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn cues_dir(&self) -> PathBuf {
        self.root.join("cues")
    }

    pub fn score_path(&self, t: usize) -> PathBuf {
        self.root.join("scores").join(format!("frame_{t:06}.pfm"))
    }

    pub fn overlay_path(&self, t: usize) -> PathBuf {
        self.root.join("overlays").join(format!("frame_{t:06}.png"))
    }

    pub fn boxes_raw(&self) -> PathBuf {
        self.root.join("boxes_raw.jsonl")
    }

    pub fn boxes_filtered(&self) -> PathBuf {
        self.root.join("boxes_filtered.jsonl")
    }

    pub fn boxes_final(&self) -> PathBuf {
        self.root.join("boxes_final.jsonl")
    }
}

pub fn mask_path(out_dir: &Path, t: usize) -> PathBuf {
    out_dir.join(format!("mask_{t:06}.png"))
}

pub fn prompts_path(out_dir: &Path) -> PathBuf {
    out_dir.join("prompts.jsonl")
}

/// Everything the proposal stage produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposals {
    pub scores: Vec<ScoreMap>,
    pub raw: Vec<Vec<BoxProposal>>,
    pub filtered: Vec<Vec<BoxProposal>>,
    pub boxes: Vec<Vec<BoxProposal>>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub masks: Vec<BinaryMask>,
    pub report: Option<EvalReport>,
}

/// Per-frame proposal view shared with the calibration service: the
/// binarized score and the frame's own boxes (before temporal filtering).
pub fn frame_proposal(
    score: &ScoreMap,
    fusion: &FusionConfig,
    params: &ProposalParams,
    t: usize,
) -> (BinaryMask, Vec<BoxProposal>) {
    let mask = fusion::binarize(score, fusion.tau);
    let comps = proposal::connected_components(&mask, params.connectivity);
    let boxes = proposal::components_to_boxes(&comps, score, t, params.min_area, params.margin);
    (mask, boxes)
}

/// Overlay PNG for one frame, identical to what the pipeline dumps.
pub fn frame_overlay_png(
    frame: &Frame,
    score: &ScoreMap,
    fusion: &FusionConfig,
    params: &ProposalParams,
    t: usize,
) -> (Vec<u8>, Vec<BoxProposal>) {
    let (mask, boxes) = frame_proposal(score, fusion, params, t);
    (overlay::overlay_png(frame, &mask, &boxes), boxes)
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub dump_intermediates: Option<PathBuf>,
}

pub struct Runner {
    cfg: PipelineConfig,
    dump: DumpLayout,
    dump_enabled: bool,
}

fn write_all<T>(items: &[T], f: impl Fn(usize, &T) -> Result<()> + Sync + Send) -> StageResult<()>
where
    T: Sync,
{
    let results = par::map_range(items.len(), |t| f(t, &items[t]).map_err(|e| (t, e)));
    for r in results {
        if let Err((t, e)) = r {
            return Err(PipelineError {
                stage: Stage::Propose,
                frame: Some(t),
                source: e,
            });
        }
    }
    Ok(())
}

fn retag<T>(r: StageResult<T>, stage: Stage) -> StageResult<T> {
    r.map_err(|e| PipelineError { stage, ..e })
}

impl Runner {
    pub fn new(cfg: &PipelineConfig, opts: &RunOptions) -> StageResult<Self> {
        let mut cfg = cfg.resolved();
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        cfg.vibe.params.rng_seed = cfg.seed;
        cfg.validate().stage(Stage::Config)?;
        let explicit = opts
            .dump_intermediates
            .clone()
            .or_else(|| cfg.output.intermediates.clone());
        let dump_enabled = explicit.is_some();
        let root = explicit.unwrap_or_else(|| cfg.output.dir.join("intermediates"));
        Ok(Self {
            cfg,
            dump: DumpLayout::new(root),
            dump_enabled,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn dump_layout(&self) -> &DumpLayout {
        &self.dump
    }

    pub fn load_frames(&self) -> StageResult<Vec<Frame>> {
        let dir = &self.cfg.input.dir;
        if !dir.is_dir() {
            return Err(PipelineError {
                stage: Stage::Load,
                frame: None,
                source: Error::io(dir, std::io::Error::new(std::io::ErrorKind::NotFound, "input directory missing")),
            });
        }
        frameio::load_frame_sequence(dir, &self.cfg.input.pattern).stage(Stage::Load)
    }

    pub fn compute_cues(&self, frames: &[Frame], dump: bool) -> StageResult<Vec<CueBundle>> {
        let c = &self.cfg;
        let ctx = CueContext::new(frames, &c.cues, c.flow, c.skip, c.norm, c.vibe).stage(Stage::Cues)?;
        let bundles = par::map_range(frames.len(), |t| cues::assemble_bundle(t, &c.cues, &ctx).map_err(|e| (t, e)))
            .into_iter()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|(t, e)| PipelineError {
                stage: Stage::Cues,
                frame: Some(t),
                source: e,
            })?;
        if dump {
            let dir = self.dump.cues_dir();
            retag(write_all(&bundles, |_, b| cues::write_bundle(&dir, b)), Stage::Cues)?;
        }
        Ok(bundles)
    }

    /// Reads cue bundles back from the dump.
    pub fn load_cues(&self, frames: &[Frame]) -> StageResult<Vec<CueBundle>> {
        let sources = CueSources::all_files(self.dump.cues_dir());
        let ctx = CueContext::new(frames, &sources, self.cfg.flow, self.cfg.skip, self.cfg.norm, self.cfg.vibe)
            .stage(Stage::Propose)?;
        cues::assemble_all(&sources, &ctx).stage(Stage::Propose)
    }

    pub fn propose(&self, frames: &[Frame], bundles: &[CueBundle], dump: bool) -> StageResult<Proposals> {
        let c = &self.cfg;
        let scores: Vec<ScoreMap> = par::map_slice(bundles, |b| fusion::score(b, &c.fusion));
        let raw: Vec<Vec<BoxProposal>> =
            par::map_range(scores.len(), |t| frame_proposal(&scores[t], &c.fusion, &c.proposal, t).1);
        let filtered = temporal::isolated_box_filter(&raw, &c.temporal);
        let boxes = temporal::temporal_recovery(&filtered, &c.temporal);
        let dims = frames[0].dims();

        if dump {
            for dir in ["scores", "overlays"] {
                frameio::ensure_dir(&self.dump.root.join(dir)).stage(Stage::Propose)?;
            }
            write_all(&scores, |t, s| frameio::write_score_map(s, &self.dump.score_path(t)))?;
            write_all(&scores, |t, s| {
                let (png, _) = frame_overlay_png(&frames[t], s, &c.fusion, &c.proposal, t);
                let path = self.dump.overlay_path(t);
                fs::write(&path, png).map_err(|e| Error::io(&path, e))
            })?;
            refine::export_prompts(&raw, dims, &self.dump.boxes_raw()).stage(Stage::Propose)?;
            refine::export_prompts(&filtered, dims, &self.dump.boxes_filtered()).stage(Stage::Propose)?;
            refine::export_prompts(&boxes, dims, &self.dump.boxes_final()).stage(Stage::Propose)?;
        }
        frameio::ensure_dir(&c.output.dir).stage(Stage::Propose)?;
        refine::export_prompts(&boxes, dims, &prompts_path(&c.output.dir)).stage(Stage::Propose)?;
        Ok(Proposals {
            scores,
            raw,
            filtered,
            boxes,
        })
    }

    /// Reads proposal scores and final boxes back from the dump.
    pub fn load_proposals(&self, dims: Dims, len: usize) -> StageResult<(Vec<ScoreMap>, Vec<Vec<BoxProposal>>)> {
        let scores = (0..len)
            .map(|t| {
                let path = self.dump.score_path(t);
                if !path.exists() {
                    return Err(Error::MissingFrameFile {
                        what: "proposal score",
                        frame: t,
                        path,
                    });
                }
                let s = frameio::read_score_map(&path)?;
                dims.ensure(s.dims())?;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()
            .stage(Stage::Refine)?;
        let mut boxes = refine::read_prompts(&self.dump.boxes_final(), Some(dims)).stage(Stage::Refine)?;
        if boxes.len() > len {
            return Err(Error::InvalidParam(format!("prompt file has {} frames, sequence has {len}", boxes.len())))
                .stage(Stage::Refine);
        }
        boxes.resize_with(len, Vec::new);
        Ok((scores, boxes))
    }

    pub fn refine(&self, scores: &[ScoreMap], boxes: &[Vec<BoxProposal>]) -> StageResult<Vec<BinaryMask>> {
        let c = &self.cfg;
        let dims = scores[0].dims();
        let tau_box = c.tau_box();
        let fallback = |t: usize| refine::fallback_refine(&scores[t], &boxes[t], tau_box);
        let masks: Vec<BinaryMask> = match c.refine.mode {
            RefineMode::Fallback => par::map_range(scores.len(), fallback),
            RefineMode::External => {
                let dir = c.refine.dir.clone().unwrap_or_else(|| c.output.dir.clone());
                let imported =
                    refine::import_refined(&dir, dims, scores.len(), c.refine.allow_missing).stage(Stage::Refine)?;
                let present: Vec<BinaryMask> = imported.iter().flatten().cloned().collect();
                let present_boxes: Vec<Vec<BoxProposal>> = imported
                    .iter()
                    .zip(boxes)
                    .filter(|(m, _)| m.is_some())
                    .map(|(_, b)| b.clone())
                    .collect();
                refine::audit_containment(&present, &present_boxes);
                imported
                    .into_iter()
                    .enumerate()
                    .map(|(t, m)| m.unwrap_or_else(|| fallback(t)))
                    .collect()
            }
        };
        frameio::ensure_dir(&c.output.dir).stage(Stage::Refine)?;
        retag(
            write_all(&masks, |t, m| frameio::write_mask(m, &mask_path(&c.output.dir, t))),
            Stage::Refine,
        )?;
        Ok(masks)
    }

    /// Scores masks against ground truth when an `[eval]` section exists.
    pub fn evaluate(&self, masks: &[BinaryMask]) -> StageResult<Option<EvalReport>> {
        let Some(ev) = &self.cfg.eval else {
            return Ok(None);
        };
        let dims = masks[0].dims();
        let paths = frameio::list_sequence(&ev.gt_dir, &ev.pattern).stage(Stage::Eval)?;
        if paths.len() != masks.len() {
            return Err(Error::InvalidParam(format!(
                "{} ground-truth masks for {} frames",
                paths.len(),
                masks.len()
            )))
            .stage(Stage::Eval);
        }
        let gts = paths
            .iter()
            .map(|p| frameio::read_mask(p, Some(dims)))
            .collect::<Result<Vec<_>>>()
            .stage(Stage::Eval)?;
        let frames = metrics::score_video(masks, &gts, ev.empty_policy).stage(Stage::Eval)?;
        let report = metrics::aggregate_with(&[(self.cfg.video_name(), frames)], ev.empty_policy).stage(Stage::Eval)?;
        let out = &self.cfg.output.dir;
        frameio::ensure_dir(out).stage(Stage::Eval)?;
        let write = |name: &str, text: String| {
            let path = out.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write("report.json", report.to_json()).stage(Stage::Eval)?;
        write("report.txt", report.to_table()).stage(Stage::Eval)?;
        Ok(Some(report))
    }

    /// Reads the masks a previous `refine` stage wrote.
    pub fn load_masks(&self, dims: Dims, len: usize) -> StageResult<Vec<BinaryMask>> {
        (0..len)
            .map(|t| {
                let path = mask_path(&self.cfg.output.dir, t);
                if !path.exists() {
                    return Err(Error::MissingFrameFile {
                        what: "output mask",
                        frame: t,
                        path,
                    });
                }
                frameio::read_mask(&path, Some(dims))
            })
            .collect::<Result<Vec<_>>>()
            .stage(Stage::Eval)
    }

    /// The whole pipeline in one pass.
    pub fn run(&self) -> StageResult<RunOutput> {
        par::with_threads(self.cfg.threads, || {
            let frames = self.load_frames()?;
            let bundles = self.compute_cues(&frames, self.dump_enabled)?;
            let props = self.propose(&frames, &bundles, self.dump_enabled)?;
            let masks = self.refine(&props.scores, &props.boxes)?;
            let report = self.evaluate(&masks)?;
            Ok(RunOutput { masks, report })
        })
    }

    /// Computes and dumps cue maps only.
    pub fn run_cues(&self) -> StageResult<Vec<CueBundle>> {
        par::with_threads(self.cfg.threads, || {
            let frames = self.load_frames()?;
            self.compute_cues(&frames, true)
        })
    }

    /// From dumped cues through final boxes (dumped).
    pub fn run_propose(&self) -> StageResult<Proposals> {
        par::with_threads(self.cfg.threads, || {
            let frames = self.load_frames()?;
            let bundles = self.load_cues(&frames)?;
            self.propose(&frames, &bundles, true)
        })
    }

    /// From dumped scores and final boxes to masks.
    pub fn run_refine(&self) -> StageResult<Vec<BinaryMask>> {
        par::with_threads(self.cfg.threads, || {
            let frames = self.load_frames()?;
            let (scores, boxes) = self.load_proposals(frames[0].dims(), frames.len())?;
            self.refine(&scores, &boxes)
        })
    }

    /// Scores previously written masks.
    pub fn run_eval(&self) -> StageResult<Option<EvalReport>> {
        let frames = self.load_frames()?;
        let masks = self.load_masks(frames[0].dims(), frames.len())?;
        if self.cfg.eval.is_none() {
            return Err(Error::InvalidParam("config has no [eval] section".into())).stage(Stage::Eval);
        }
        self.evaluate(&masks)
    }
}

/// Loads the config and runs it end to end.
pub fn run(cfg: &PipelineConfig, opts: &RunOptions) -> StageResult<RunOutput> {
    Runner::new(cfg, opts)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cues::CueSource;
    use crate::synth::{self, SynthConfig};
    use tempfile::tempdir;

    fn small_setup(dir: &Path) -> PipelineConfig {
        let seq = synth::generate(&SynthConfig { frames: 16, width: 64, height: 48, object_start: (4.0, 18.0), ..Default::default() });
        seq.write(dir).unwrap();
        PipelineConfig {
            input: InputConfig { dir: "frames".into(), pattern: "frame_*.png".into(), name: Some("tiny".into()) },
            output: OutputConfig { dir: "out".into(), intermediates: None },
            eval: Some(EvalConfig { gt_dir: "gt".into(), ..Default::default() }),
            vibe: BackgroundConfig { warmup: 2, ..Default::default() },
            base_dir: dir.to_path_buf(),
            ..Default::default()
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.cues.semantic = CueSource::files("cues").optional();
        cfg.eval = Some(EvalConfig::default());
        cfg.refine.tau_box = Some(0.4);
        let text = cfg.to_toml();
        let back = PipelineConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(back, cfg);
        let partial = PipelineConfig::from_toml("seed = 7\n[fusion]\nalpha = 1.0\ntau = 0.5\n", Path::new(".")).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.fusion.weights.alpha, 1.0);
        assert_eq!(partial.fusion.weights.beta, 0.3);
        assert_eq!(partial.proposal, ProposalParams::default());
    }

    #[test]
    fn bad_config_is_tagged() {
        let mut cfg = PipelineConfig::default();
        cfg.fusion.weights.gamma = -1.0;
        let err = Runner::new(&cfg, &RunOptions::default()).err().unwrap();
        assert_eq!(err.stage, Stage::Config);
    }

    #[test]
    fn full_run_is_deterministic() {
        let dir = tempdir().unwrap();
        let cfg = small_setup(dir.path());
        let a = run(&cfg, &RunOptions::default()).unwrap();
        let bytes_a: Vec<Vec<u8>> = (0..16).map(|t| fs::read(mask_path(&dir.path().join("out"), t)).unwrap()).collect();
        let b = run(&cfg, &RunOptions::default()).unwrap();
        let bytes_b: Vec<Vec<u8>> = (0..16).map(|t| fs::read(mask_path(&dir.path().join("out"), t)).unwrap()).collect();
        assert_eq!(a.masks, b.masks);
        assert_eq!(bytes_a, bytes_b);
        let report = a.report.unwrap();
        assert_eq!(report.videos[0].name, "tiny");
        assert!(dir.path().join("out/report.txt").exists());
        assert!(prompts_path(&dir.path().join("out")).exists());
    }

    #[test]
    fn external_refine_missing_masks_aborts_in_refine() {
        let dir = tempdir().unwrap();
        let mut cfg = small_setup(dir.path());
        cfg.refine.mode = RefineMode::External;
        cfg.refine.dir = Some("refined".into());
        fs::create_dir_all(dir.path().join("refined")).unwrap();
        let err = run(&cfg, &RunOptions::default()).unwrap_err();
        assert_eq!(err.stage, Stage::Refine);
        assert_eq!(err.frame, Some(0));
        assert!(err.to_string().starts_with("stage `refine` failed at frame 0"), "{err}");
    }
}
