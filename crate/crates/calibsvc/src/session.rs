use std::path::{Path, PathBuf};
use std::sync::RwLock;

use turbseg::cues::{CueBundle, CueRole};
use turbseg::frameio::{self, BinaryMask, Dims, Frame};
use turbseg::pipeline::{PipelineConfig, RunOptions, Runner};

use crate::ServeError;

/// Loaded sequence, cue bundles and the candidate config being calibrated.
///
/// Frames, bundles and ground truth never change after [`Session::open`];
/// only the config is mutable, and only through [`Session::replace_config`].
pub struct Session {
    config_path: Option<PathBuf>,
    config: RwLock<PipelineConfig>,
    name: String,
    frames: Vec<Frame>,
    bundles: Vec<CueBundle>,
    ground_truth: Option<Vec<BinaryMask>>,
}

impl Session {
    /// Loads frames and the cue maps dumped by the `cues` stage.
    ///
    /// `cue_root` overrides the intermediates directory from the config.
    pub fn open(config_path: &Path, cue_root: Option<&Path>) -> Result<Self, ServeError> {
        let cfg = PipelineConfig::load(config_path).map_err(ServeError::Config)?;
        let mut session = Self::from_config(cfg, cue_root)?;
        session.config_path = Some(config_path.to_path_buf());
        Ok(session)
    }

    /// Same as [`Session::open`] without a backing file; `PUT /config`
    /// then only updates memory.
    pub fn from_config(cfg: PipelineConfig, cue_root: Option<&Path>) -> Result<Self, ServeError> {
        let opts = RunOptions {
            dump_intermediates: cue_root.map(Path::to_path_buf),
            ..Default::default()
        };
        let runner = Runner::new(&cfg, &opts)?;
        let frames = runner.load_frames()?;
        let cue_dir = runner.dump_layout().cues_dir();
        if !cue_dir.is_dir() {
            return Err(ServeError::CuesMissing(cue_dir));
        }
        let bundles = runner.load_cues(&frames).map_err(|e| match e.source {
            turbseg::Error::MissingFrameFile { .. } => ServeError::CuesMissing(cue_dir.clone()),
            _ => ServeError::Pipeline(e),
        })?;
        let ground_truth = load_ground_truth(runner.config(), frames[0].dims(), frames.len());
        Ok(Self {
            config_path: None,
            name: runner.config().video_name(),
            config: RwLock::new(cfg),
            frames,
            bundles,
            ground_truth,
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

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn frame(&self, t: usize) -> Option<&Frame> {
        self.frames.get(t)
    }

    pub fn bundle(&self, t: usize) -> Option<&CueBundle> {
        self.bundles.get(t)
    }

    pub fn ground_truth(&self, t: usize) -> Option<&BinaryMask> {
        self.ground_truth.as_ref().and_then(|g| g.get(t))
    }

    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth.is_some()
    }

    pub fn roles(&self) -> Vec<&'static str> {
        CueRole::ALL.iter().map(|r| r.name()).collect()
    }

    /// Snapshot of the current config.
    pub fn config(&self) -> PipelineConfig {
        self.config.read().expect("config lock").clone()
    }

    /// Validates, persists (when file-backed) and installs `cfg`.
    pub fn replace_config(&self, mut cfg: PipelineConfig) -> Result<PipelineConfig, ServeError> {
        let mut guard = self.config.write().expect("config lock");
        cfg.base_dir = guard.base_dir.clone();
        cfg.validate().map_err(ServeError::Invalid)?;
        if let Some(path) = &self.config_path {
            cfg.save(path).map_err(ServeError::Config)?;
        }
        *guard = cfg.clone();
        Ok(cfg)
    }
}

fn load_ground_truth(cfg: &PipelineConfig, dims: Dims, len: usize) -> Option<Vec<BinaryMask>> {
    let ev = cfg.eval.as_ref()?;
    let paths = frameio::list_sequence(&ev.gt_dir, &ev.pattern).ok()?;
    if paths.len() != len {
        log::warn!("ignoring ground truth: {} masks for {len} frames", paths.len());
        return None;
    }
    paths
        .iter()
        .map(|p| frameio::read_mask(p, Some(dims)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| log::warn!("ignoring ground truth: {e}"))
        .ok()
}
