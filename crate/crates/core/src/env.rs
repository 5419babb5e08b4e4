//! The click-annotation decision process.
//!
//! A state is the current mask plus the click history; an action is a signed
//! click (or a box); the transition re-runs the segmenter on the full history
//! and the reward is the IoU of the new mask against the target.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{self, BitMask, GrayImage, NormBox, NormPoint};
use crate::pnm;
use crate::seed::rng_for;
use crate::segment::{Click, Segmenter};

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: String,
    pub image: GrayImage,
    pub target: BitMask,
    pub prompt: String,
}

impl Task {
    pub fn new(id: impl Into<String>, image: GrayImage, target: BitMask, prompt: impl Into<String>) -> Result<Self> {
        let task = Task {
            id: id.into(),
            image,
            target,
            prompt: prompt.into(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: String| Error::InvalidTask {
            id: self.id.clone(),
            reason,
        };
        if self.image.dims() != self.target.dims() {
            return Err(invalid(format!(
                "image {:?} and target {:?} differ in size",
                self.image.dims(),
                self.target.dims()
            )));
        }
        if self.target.is_empty() {
            return Err(invalid("target mask is empty".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Action {
    PositiveClick(NormPoint),
    NegativeClick(NormPoint),
    Box(NormBox),
}

impl Action {
    pub fn positive(x: f64, y: f64) -> Self {
        Action::PositiveClick(NormPoint { x, y })
    }

    pub fn negative(x: f64, y: f64) -> Self {
        Action::NegativeClick(NormPoint { x, y })
    }

    pub fn click(&self) -> Option<Click> {
        match *self {
            Action::PositiveClick(point) => Some(Click { positive: true, point }),
            Action::NegativeClick(point) => Some(Click { positive: false, point }),
            Action::Box(_) => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Action::PositiveClick(p) | Action::NegativeClick(p) => p.is_valid(),
            Action::Box(b) => b.is_valid(),
        }
    }
}

impl From<Click> for Action {
    fn from(c: Click) -> Self {
        if c.positive {
            Action::PositiveClick(c.point)
        } else {
            Action::NegativeClick(c.point)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Running,
    ReachedTauStop,
    MaxSteps,
    /// The expert found no remaining error region.
    Converged,
    /// An action gained less than `tau_diff` and was discarded.
    LowImpact,
    /// The policy produced no usable action.
    PolicyExhausted,
    /// A remote component failed mid-episode.
    Failed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub max_steps: usize,
    pub tau_stop: f64,
    pub tau_diff: f64,
}

impl EnvConfig {
    pub const DEFAULT_TAU_STOP: f64 = 0.95;
    pub const DEFAULT_TAU_DIFF: f64 = 0.01;

    /// Profile for short referring-expression style tasks (T = 7).
    pub fn simple() -> Self {
        Self {
            max_steps: 7,
            tau_stop: Self::DEFAULT_TAU_STOP,
            tau_diff: Self::DEFAULT_TAU_DIFF,
        }
    }

    /// Profile for fine-structure tasks (T = 11).
    pub fn complex() -> Self {
        Self {
            max_steps: 11,
            ..Self::simple()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(Error::InvalidArgument("max_steps must be >= 1".into()));
        }
        for (name, v) in [("tau_stop", self.tau_stop), ("tau_diff", self.tau_diff)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self::simple()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum InitSpec {
    #[default]
    Empty,
    FromBox { bbox: NormBox },
    FromRandomClicks { n_pos: usize, n_neg: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub step: usize,
    pub mask: BitMask,
    pub history: Vec<Action>,
    pub init_box: Option<NormBox>,
    pub reward: f64,
    pub finished: bool,
    pub stop_reason: StopReason,
}

impl EpisodeState {
    /// Clicks and the active box, as the segmenter sees them. The most
    /// recent box action overrides the initial box.
    pub fn segmenter_inputs(&self) -> (Vec<Click>, Option<NormBox>) {
        let clicks = self.history.iter().filter_map(Action::click).collect();
        let last_box = self.history.iter().rev().find_map(|a| match a {
            Action::Box(b) => Some(*b),
            _ => None,
        });
        (clicks, last_box.or(self.init_box))
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub state: EpisodeState,
    pub reward: f64,
    pub done: bool,
    pub stop_reason: StopReason,
}

pub fn reward(mask: &BitMask, target: &BitMask) -> Result<f64> {
    mask::iou(mask, target)
}

/// One task bound to a segmenter and a configuration.
pub struct Env<'a> {
    pub task: &'a Task,
    pub segmenter: &'a dyn Segmenter,
    pub config: EnvConfig,
}

impl<'a> Env<'a> {
    pub fn new(task: &'a Task, segmenter: &'a dyn Segmenter, config: EnvConfig) -> Self {
        Self {
            task,
            segmenter,
            config,
        }
    }

    pub fn reset(&self, init: &InitSpec) -> Result<EpisodeState> {
        self.task.validate()?;
        let (w, h) = self.task.dims();
        let (mask, history, init_box) = match *init {
            InitSpec::Empty => (BitMask::new(w, h), Vec::new(), None),
            InitSpec::FromBox { bbox } => {
                if !bbox.is_valid() {
                    return Err(Error::InvalidArgument(format!("invalid init box {bbox:?}")));
                }
                (bbox.to_raster(w, h), Vec::new(), Some(bbox))
            }
            InitSpec::FromRandomClicks { n_pos, n_neg, seed } => {
                let (x0, y0, x1, y1) =
                    mask::pixel_bounds(&self.task.target).ok_or(Error::EmptyMask)?;
                let mut rng = rng_for(seed, "init-clicks", &self.task.id, &[]);
                let mut history = Vec::with_capacity(n_pos + n_neg);
                for i in 0..n_pos + n_neg {
                    let px = rng.gen_range(x0..=x1);
                    let py = rng.gen_range(y0..=y1);
                    let point = NormPoint::from_pixel(px, py, w, h);
                    history.push(if i < n_pos {
                        Action::PositiveClick(point)
                    } else {
                        Action::NegativeClick(point)
                    });
                }
                let clicks: Vec<Click> = history.iter().filter_map(Action::click).collect();
                let mask = self.segment(&clicks, None)?;
                (mask, history, None)
            }
        };
        let reward = reward(&mask, &self.task.target)?;
        Ok(EpisodeState {
            step: 0,
            mask,
            history,
            init_box,
            reward,
            finished: false,
            stop_reason: StopReason::Running,
        })
    }

    /// Applies `action` without any termination bookkeeping: the history
    /// grows, the segmenter runs and the reward is recomputed.
    pub fn apply(&self, state: &EpisodeState, action: Action) -> Result<EpisodeState> {
        if state.mask.dims() != self.task.dims() {
            return Err(Error::dims(state.mask.dims(), self.task.dims()));
        }
        if !action.is_valid() {
            return Err(Error::InvalidArgument(format!("invalid action {action:?}")));
        }
        let mut next = state.clone();
        next.history.push(action);
        let (clicks, bbox) = next.segmenter_inputs();
        next.mask = self.segment(&clicks, bbox)?;
        next.step += 1;
        next.reward = reward(&next.mask, &self.task.target)?;
        Ok(next)
    }

    pub fn step(&self, state: &EpisodeState, action: Action) -> Result<Transition> {
        if state.finished || state.step >= self.config.max_steps {
            return Err(Error::EpisodeFinished);
        }
        let mut next = self.apply(state, action)?;
        let stop_reason = if next.reward >= self.config.tau_stop {
            StopReason::ReachedTauStop
        } else if next.step >= self.config.max_steps {
            StopReason::MaxSteps
        } else {
            StopReason::Running
        };
        let done = stop_reason != StopReason::Running;
        next.finished = done;
        next.stop_reason = stop_reason;
        Ok(Transition {
            reward: next.reward,
            done,
            stop_reason,
            state: next,
        })
    }

    fn segment(&self, clicks: &[Click], bbox: Option<NormBox>) -> Result<BitMask> {
        let bbox = bbox.filter(|_| self.segmenter.supports_box());
        let mask = self.segmenter.segment(self.task, clicks, bbox)?;
        if mask.dims() != self.task.dims() {
            return Err(Error::dims(mask.dims(), self.task.dims()));
        }
        Ok(mask)
    }
}

/// One row of a task manifest; paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: String,
    pub image_path: PathBuf,
    pub target_path: PathBuf,
    pub prompt: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Bare(Vec<TaskEntry>),
    Wrapped { tasks: Vec<TaskEntry> },
}

pub fn read_manifest_entries(path: impl AsRef<Path>) -> Result<Vec<TaskEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text)?;
    Ok(match file {
        ManifestFile::Bare(v) => v,
        ManifestFile::Wrapped { tasks } => tasks,
    })
}

/// Loads and validates every task listed in a manifest.
pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<Task>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest_entries(path)?;
    let mut seen = std::collections::HashSet::new();
    entries
        .into_iter()
        .map(|e| {
            if !seen.insert(e.id.clone()) {
                return Err(Error::InvalidTask {
                    id: e.id,
                    reason: "duplicate id".into(),
                });
            }
            let image = pnm::read_pgm(base.join(&e.image_path))?;
            let target = pnm::read_mask(base.join(&e.target_path))?;
            Task::new(e.id, image, target, e.prompt)
        })
        .collect()
}
