//! Run configuration: JSON file, then flag overrides, then a hash of the
//! merged result for the output manifests.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use clickseg_core::env::{EnvConfig, InitSpec, Task};
use clickseg_core::grammar::CoordFormat;
use clickseg_core::improve::{RetainRule, StarMode};
use clickseg_core::mask::{bbox, Rgb, DEFAULT_ALPHA};
use clickseg_core::policy::{NoiseConfig, PolicySpec, PrmSpec};
use clickseg_core::remote::RemoteEndpoint;
use clickseg_core::search::SearchConfig;
use clickseg_core::segment::{SegmenterKind, SegmenterSpec};
use clickseg_core::sft::{PromptConfig, DEFAULT_TEMPLATE};
use clickseg_core::trajectory::InitMix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Empty,
    Box,
    Random,
    /// Per task, drawn from `init_mix`.
    Mixed,
}

impl FromStr for InitChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "empty" => Ok(Self::Empty),
            "box" => Ok(Self::Box),
            "random" | "random_clicks" | "random-clicks" => Ok(Self::Random),
            "mixed" => Ok(Self::Mixed),
            o => Err(format!("unknown init `{o}` (empty, box, random, mixed)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub jobs: usize,
    pub max_steps: usize,
    pub tau_stop: f64,
    pub tau_diff: f64,
    pub k: usize,
    pub coord_format: CoordFormat,
    pub mask_color: Rgb,
    pub alpha: f64,
    pub template_id: String,
    pub prm_supervision: bool,
    pub segmenter: SegmenterSpec,
    pub init: InitChoice,
    pub init_mix: InitMix,
    pub policy: PolicySpec,
    pub prm: PrmSpec,
    pub convergence_eps: f64,
    pub convergence_patience: usize,
    /// Search runs exactly `max_steps` steps with no early stop.
    pub fixed_steps: bool,
    pub star_mode: StarMode,
    pub iterations: usize,
    pub tau_star: f64,
    pub retain: RetainRule,
    pub target_iou: f64,
    pub noc_cap: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let env = EnvConfig::simple();
        Self {
            seed: 0,
            jobs: 1,
            max_steps: env.max_steps,
            tau_stop: env.tau_stop,
            tau_diff: env.tau_diff,
            k: 3,
            coord_format: CoordFormat::default(),
            mask_color: Rgb::GREEN,
            alpha: DEFAULT_ALPHA,
            template_id: DEFAULT_TEMPLATE.into(),
            prm_supervision: true,
            segmenter: SegmenterSpec::oracle(),
            init: InitChoice::Empty,
            init_mix: InitMix::default(),
            policy: PolicySpec::Expert,
            prm: PrmSpec::Oracle,
            convergence_eps: SearchConfig::DEFAULT_EPS,
            convergence_patience: SearchConfig::DEFAULT_PATIENCE,
            fixed_steps: false,
            star_mode: StarMode::StarPlus,
            iterations: 1,
            tau_star: env.tau_stop,
            retain: RetainRule::default(),
            target_iou: 0.9,
            noc_cap: clickseg_core::eval::DEFAULT_NOC_CAP,
        }
    }
}

impl RunConfig {
    pub fn env(&self) -> Result<EnvConfig> {
        let env = EnvConfig {
            max_steps: self.max_steps,
            tau_stop: self.tau_stop,
            tau_diff: self.tau_diff,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn prompt(&self) -> PromptConfig {
        PromptConfig {
            coord_format: self.coord_format,
            mask_color: self.mask_color,
            alpha: self.alpha,
            template_id: self.template_id.clone(),
            prm_supervision: self.prm_supervision,
        }
    }

    pub fn search(&self) -> SearchConfig {
        let base = if self.fixed_steps {
            SearchConfig::fixed_steps(self.k, self.max_steps)
        } else {
            SearchConfig {
                convergence_eps: self.convergence_eps,
                convergence_patience: self.convergence_patience,
                stop_reward: Some(self.tau_stop),
                ..SearchConfig::new(self.k, self.max_steps)
            }
        };
        SearchConfig { seed: self.seed, ..base }
    }

    pub fn init_for(&self, task: &Task) -> Result<InitSpec> {
        Ok(match self.init {
            InitChoice::Empty => InitSpec::Empty,
            InitChoice::Box => InitSpec::FromBox {
                bbox: bbox(&task.target)?,
            },
            InitChoice::Random => InitSpec::FromRandomClicks {
                n_pos: self.init_mix.n_pos,
                n_neg: self.init_mix.n_neg,
                seed: self.seed,
            },
            InitChoice::Mixed => self.init_mix.pick(task, self.seed)?,
        })
    }

    pub fn inits(&self, tasks: &[Task]) -> Result<Vec<InitSpec>> {
        tasks.iter().map(|t| self.init_for(t)).collect()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }

    fn validate(&self) -> Result<()> {
        self.env()?;
        if self.k < 1 {
            bail!("k must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            bail!("alpha {} outside [0,1]", self.alpha);
        }
        if self.jobs < 1 {
            bail!("jobs must be >= 1");
        }
        self.init_mix.validate()?;
        Ok(())
    }
}

/// Reproducibility header stored in every output manifest.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunHeader {
    pub command: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunHeader {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config.hash(),
            seed: config.seed,
            config: config.clone(),
        }
    }
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

pub fn parse_segmenter(s: &str) -> Result<SegmenterSpec, String> {
    match s {
        "oracle" => Ok(SegmenterSpec::oracle()),
        "region-grow" | "region_grow" => Ok(SegmenterSpec::region_grow()),
        url if is_url(url) => Ok(SegmenterSpec {
            kind: SegmenterKind::Remote {
                endpoint: RemoteEndpoint::new(url),
            },
            supports_box: false,
        }),
        o => Err(format!("unknown segmenter `{o}` (oracle, region-grow or an http URL)")),
    }
}

pub fn parse_color(s: &str) -> Result<Rgb, String> {
    let named = match s {
        "green" => Some([0, 255, 0]),
        "red" => Some([255, 0, 0]),
        "blue" => Some([0, 0, 255]),
        "yellow" => Some([255, 255, 0]),
        "cyan" => Some([0, 255, 255]),
        "magenta" => Some([255, 0, 255]),
        "white" => Some([255, 255, 255]),
        "black" => Some([0, 0, 0]),
        _ => None,
    };
    if let Some(c) = named {
        return Ok(Rgb(c));
    }
    if let Some(hex) = s.strip_prefix('#') {
        if hex.len() == 6 {
            let ch = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).map_err(|e| e.to_string());
            return Ok(Rgb([ch(0)?, ch(2)?, ch(4)?]));
        }
    }
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() == 3 {
        let mut c = [0u8; 3];
        for (slot, p) in c.iter_mut().zip(parts) {
            *slot = p.parse().map_err(|_| format!("bad color channel `{p}`"))?;
        }
        return Ok(Rgb(c));
    }
    Err(format!("unknown color `{s}` (name, #rrggbb or r,g,b)"))
}

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tau_stop: Option<f64>,
    #[arg(long, global = true)]
    pub tau_diff: Option<f64>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Candidates per search step.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// decimal or integer.
    #[arg(long, global = true)]
    pub coord_format: Option<CoordFormat>,
    /// Name, #rrggbb or r,g,b.
    #[arg(long, global = true, value_parser = parse_color)]
    pub mask_color: Option<Rgb>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// oracle, region-grow or an http URL.
    #[arg(long, global = true, value_parser = parse_segmenter)]
    pub segmenter: Option<SegmenterSpec>,
    /// empty, box, random or mixed.
    #[arg(long, global = true)]
    pub init: Option<InitChoice>,
    /// Worker threads for per-task parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

/// Policy and reward-model selection.
#[derive(Args, Clone, Debug, Default)]
pub struct Agents {
    /// expert, noisy or an http URL.
    #[arg(long)]
    pub policy: Option<String>,
    /// Coordinate noise for the noisy policy.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Attribute flip probability for the noisy policy.
    #[arg(long)]
    pub flip_prob: Option<f64>,
    /// oracle, noisy:<sigma> or an http URL.
    #[arg(long)]
    pub prm: Option<String>,
}

impl Common {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$( if let Some(v) = &self.$f { cfg.$f = v.clone(); } )*};
        }
        set!(tau_stop, tau_diff, max_steps, k, coord_format, mask_color, alpha, seed, segmenter, init, jobs);
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Agents {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let noise = |cfg: &RunConfig| match &cfg.policy {
            PolicySpec::NoisyExpert(n) => *n,
            _ => NoiseConfig {
                sigma: 0.1,
                flip_prob: 0.2,
                seed: cfg.seed,
            },
        };
        if let Some(p) = &self.policy {
            cfg.policy = match p.as_str() {
                "expert" => PolicySpec::Expert,
                "noisy" | "noisy-expert" | "noisy_expert" => PolicySpec::NoisyExpert(noise(cfg)),
                url if is_url(url) => PolicySpec::Remote {
                    endpoint: RemoteEndpoint::new(url),
                },
                o => bail!("unknown policy `{o}` (expert, noisy or an http URL)"),
            };
        }
        if self.sigma.is_some() || self.flip_prob.is_some() {
            let PolicySpec::NoisyExpert(n) = &mut cfg.policy else {
                bail!("--sigma/--flip-prob need the noisy policy");
            };
            n.sigma = self.sigma.unwrap_or(n.sigma);
            n.flip_prob = self.flip_prob.unwrap_or(n.flip_prob);
            n.validate()?;
        }
        if let Some(p) = &self.prm {
            cfg.prm = match p.as_str() {
                "oracle" => PrmSpec::Oracle,
                url if is_url(url) => PrmSpec::Remote {
                    endpoint: RemoteEndpoint::new(url),
                },
                other => match other.strip_prefix("noisy:") {
                    Some(sigma) => PrmSpec::Noisy {
                        sigma: sigma.parse().with_context(|| format!("bad PRM sigma `{sigma}`"))?,
                        seed: cfg.seed,
                    },
                    None => bail!("unknown PRM `{other}` (oracle, noisy:<sigma> or an http URL)"),
                },
            };
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}
