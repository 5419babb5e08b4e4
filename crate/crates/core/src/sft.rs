//! Supervised samples from trajectories: composite image, prompt, target text.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, Task};
use crate::error::{Error, Result};
use crate::grammar::{format_action, format_reward, CoordFormat};
use crate::mask::{render_overlay, BitMask, Rgb, RgbImage, DEFAULT_ALPHA};
use crate::pnm;
use crate::rle::rle_decode;
use crate::segment::Segmenter;
use crate::trajectory::Trajectory;

pub const DEFAULT_TEMPLATE: &str = "annotator";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    #[serde(default)]
    pub coord_format: CoordFormat,
    #[serde(default)]
    pub mask_color: Rgb,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_template")]
    pub template_id: String,
    /// Prefix each target with the current-IoU line.
    #[serde(default = "default_true")]
    pub prm_supervision: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_template() -> String {
    DEFAULT_TEMPLATE.to_string()
}
fn default_true() -> bool {
    true
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            coord_format: CoordFormat::default(),
            mask_color: Rgb::GREEN,
            alpha: DEFAULT_ALPHA,
            template_id: default_template(),
            prm_supervision: true,
        }
    }
}

pub fn color_name(color: Rgb) -> String {
    match color.0 {
        [0, 255, 0] => "green".into(),
        [255, 0, 0] => "red".into(),
        [0, 0, 255] => "blue".into(),
        [255, 255, 0] => "yellow".into(),
        [255, 0, 255] => "magenta".into(),
        [0, 255, 255] => "cyan".into(),
        [r, g, b] => format!("rgb({r}, {g}, {b})"),
    }
}

fn coord_hint(format: CoordFormat) -> &'static str {
    match format {
        CoordFormat::Decimal01 => "Coordinates are fractions of the image width and height in [0, 1) with three decimals.",
        CoordFormat::Integer1000 => "Coordinates are integers in [0, 1000) measured in thousandths of the image width and height.",
    }
}

/// Builds the instruction text for a template id.
pub fn build_prompt(config: &PromptConfig, description: &str) -> Result<String> {
    let color = color_name(config.mask_color);
    let hint = coord_hint(config.coord_format);
    match config.template_id.as_str() {
        "annotator" => Ok(format!(
            "You are annotating a segmentation mask. The image shows the current mask as a translucent {color} overlay. \
Improve the mask with one action at a time.\n\
Positive point (x, y): mark a part of the object that the mask misses, so the mask grows to cover it.\n\
Negative point (x, y): mark a region the mask covers that is not part of the object, so the mask shrinks away from it.\n\
{hint}\n\
Object: {description}"
        )),
        "compact" => Ok(format!(
            "Refine the {color} mask for: {description}. Reply with one line, `Positive point: (x, y)` or `Negative point: (x, y)`. {hint}"
        )),
        other => Err(Error::InvalidArgument(format!("unknown template id `{other}`"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SftSample {
    pub step: usize,
    pub composite: RgbImage,
    pub prompt: String,
    pub target: String,
}

/// One sample per recorded step, showing the mask before that step.
pub fn render_sft(
    trajectory: &Trajectory,
    task: &Task,
    segmenter: &dyn Segmenter,
    config: &PromptConfig,
) -> Result<Vec<SftSample>> {
    if trajectory.task_id != task.id {
        return Err(Error::InvalidArgument(format!(
            "trajectory for `{}` rendered against task `{}`",
            trajectory.task_id, task.id
        )));
    }
    let prompt = build_prompt(config, &task.prompt)?;
    let env = Env::new(task, segmenter, EnvConfig::default());
    let mut mask: BitMask = env.reset(&trajectory.init)?.mask;
    let mut samples = Vec::with_capacity(trajectory.steps.len());
    for (t, step) in trajectory.steps.iter().enumerate() {
        let composite = render_overlay(&task.image, &mask, config.mask_color, config.alpha)?;
        let action = format_action(&step.action, config.coord_format);
        let target = if config.prm_supervision {
            format!("{}\n{action}", format_reward(step.reward_before))
        } else {
            action
        };
        samples.push(SftSample {
            step: t,
            composite,
            prompt: prompt.clone(),
            target,
        });
        mask = rle_decode(&step.mask_after)?;
    }
    Ok(samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub image_path: PathBuf,
    pub prompt: String,
    pub target: String,
}

/// Writes `{out}/{task_id}/step_{t}.ppm` and returns the records for
/// `samples.jsonl`, with image paths relative to `out`.
pub fn write_sft_images(out: &Path, task_id: &str, samples: &[SftSample]) -> Result<Vec<SftRecord>> {
    let dir = out.join(task_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    samples
        .iter()
        .map(|s| {
            let rel = PathBuf::from(task_id).join(format!("step_{}.ppm", s.step));
            pnm::write_ppm(out.join(&rel), &s.composite)?;
            Ok(SftRecord {
                image_path: rel,
                prompt: s.prompt.clone(),
                target: s.target.clone(),
            })
        })
        .collect()
}

pub fn write_sft_records(path: &Path, records: &[SftRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
