//! Policies propose the next action; process reward models score masks.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, EpisodeState, Task};
use crate::error::{Error, Result};
use crate::expert::next_click;
use crate::grammar::{action_key, parse_action};
use crate::mask::{iou, render_overlay, BitMask, NormPoint};
use crate::remote::{call_policy, call_prm, RemoteEndpoint};
use crate::seed::rng_for;
use crate::sft::{build_prompt, PromptConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyProposal {
    pub action: Action,
    /// Reward the policy claims for the current state, if it said one.
    pub stated_reward: Option<f64>,
}

pub trait Policy: Send + Sync {
    /// Up to `k` distinct candidate actions for `state`, best guess first.
    /// An empty list means the policy has nothing left to do.
    fn propose(&self, task: &Task, state: &EpisodeState, k: usize, seed: u64) -> Result<Vec<PolicyProposal>>;
}

/// The deterministic expert; needs the task's ground truth.
#[derive(Clone, Copy, Debug, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn propose(&self, task: &Task, state: &EpisodeState, k: usize, _seed: u64) -> Result<Vec<PolicyProposal>> {
        check_k(k)?;
        let Some(action) = next_click(&state.mask, &task.target)? else {
            return Ok(Vec::new());
        };
        Ok(vec![PolicyProposal {
            action,
            stated_reward: Some(iou(&state.mask, &task.target)?),
        }])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Std dev of the coordinate jitter, in normalized units.
    pub sigma: f64,
    pub flip_prob: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma {} / flip_prob {} out of range",
                self.sigma, self.flip_prob
            )));
        }
        Ok(())
    }
}

/// Expert clicks with seeded Gaussian jitter and attribute flips.
///
/// The RNG is derived from the noise seed, the call seed, the task id, the
/// step index and the current mask, so the same state always yields the same
/// candidates and the first of `k` samples equals the single sample at `k = 1`.
#[derive(Clone, Copy, Debug)]
pub struct NoisyExpertPolicy {
    pub noise: NoiseConfig,
}

impl NoisyExpertPolicy {
    pub fn new(noise: NoiseConfig) -> Result<Self> {
        noise.validate()?;
        Ok(Self { noise })
    }
}

impl Policy for NoisyExpertPolicy {
    fn propose(&self, task: &Task, state: &EpisodeState, k: usize, seed: u64) -> Result<Vec<PolicyProposal>> {
        check_k(k)?;
        let Some(base) = next_click(&state.mask, &task.target)? else {
            return Ok(Vec::new());
        };
        let stated = Some(iou(&state.mask, &task.target)?);
        let Some(click) = base.click() else {
            unreachable!("expert only emits clicks")
        };
        let mut rng = rng_for(
            self.noise.seed,
            "noisy-expert",
            &task.id,
            &[seed, state.step as u64, state.mask.digest()],
        );
        let normal = Normal::new(0.0, self.noise.sigma.max(0.0))
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let dx = normal.sample(&mut rng);
            let dy = normal.sample(&mut rng);
            let flip = rng.gen_bool(self.noise.flip_prob);
            let point = NormPoint::clamped(click.point.x + dx, click.point.y + dy);
            let positive = click.positive != flip;
            let action = if positive {
                Action::PositiveClick(point)
            } else {
                Action::NegativeClick(point)
            };
            if seen.insert(action_key(&action)) {
                out.push(PolicyProposal {
                    action,
                    stated_reward: stated,
                });
            }
        }
        Ok(out)
    }
}

/// Policy served over HTTP; unparseable replies are dropped and counted.
pub struct RemotePolicy {
    pub endpoint: RemoteEndpoint,
    pub prompt: PromptConfig,
    rejected: AtomicUsize,
    agent: ureq::Agent,
}

impl RemotePolicy {
    pub fn new(endpoint: RemoteEndpoint, prompt: PromptConfig) -> Result<Self> {
        let agent = endpoint.agent()?;
        Ok(Self {
            endpoint,
            prompt,
            rejected: AtomicUsize::new(0),
            agent,
        })
    }

    pub fn rejected(&self) -> usize {
        self.rejected.load(Ordering::Relaxed)
    }
}

impl Policy for RemotePolicy {
    fn propose(&self, task: &Task, state: &EpisodeState, k: usize, _seed: u64) -> Result<Vec<PolicyProposal>> {
        check_k(k)?;
        let composite = render_overlay(&task.image, &state.mask, self.prompt.mask_color, self.prompt.alpha)?;
        let prompt = build_prompt(&self.prompt, &task.prompt)?;
        let texts = call_policy(&self.agent, &self.endpoint, &composite, &prompt, k)?;
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for text in texts {
            match parse_action(&text, self.prompt.coord_format) {
                Ok((stated_reward, action)) => {
                    if seen.insert(action_key(&action)) {
                        out.push(PolicyProposal {
                            action,
                            stated_reward,
                        });
                    }
                }
                Err(_) => {
                    self.rejected.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        Ok(out)
    }
}

fn check_k(k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::InvalidArgument("candidate count k must be >= 1".into()));
    }
    Ok(())
}

pub trait Prm: Send + Sync {
    fn score(&self, task: &Task, mask: &BitMask) -> Result<f64>;
}

/// Scores with the true IoU.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePrm;

impl Prm for OraclePrm {
    fn score(&self, task: &Task, mask: &BitMask) -> Result<f64> {
        iou(mask, &task.target)
    }
}

/// True IoU plus clamped Gaussian noise, a pure function of `(task, mask)`.
#[derive(Clone, Copy, Debug)]
pub struct NoisyPrm {
    pub sigma: f64,
    pub seed: u64,
}

impl Prm for NoisyPrm {
    fn score(&self, task: &Task, mask: &BitMask) -> Result<f64> {
        let truth = iou(mask, &task.target)?;
        if self.sigma == 0.0 {
            return Ok(truth);
        }
        let normal = Normal::new(0.0, self.sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = rng_for(self.seed, "noisy-prm", &task.id, &[mask.digest()]);
        Ok((truth + normal.sample(&mut rng)).clamp(0.0, 1.0))
    }
}

pub struct RemotePrm {
    pub endpoint: RemoteEndpoint,
    pub prompt: PromptConfig,
    agent: ureq::Agent,
}

impl RemotePrm {
    pub fn new(endpoint: RemoteEndpoint, prompt: PromptConfig) -> Result<Self> {
        let agent = endpoint.agent()?;
        Ok(Self {
            endpoint,
            prompt,
            agent,
        })
    }
}

impl Prm for RemotePrm {
    fn score(&self, task: &Task, mask: &BitMask) -> Result<f64> {
        let composite = render_overlay(&task.image, mask, self.prompt.mask_color, self.prompt.alpha)?;
        let prompt = build_prompt(&self.prompt, &task.prompt)?;
        call_prm(&self.agent, &self.endpoint, &composite, &prompt)
    }
}

pub fn prm_score(prm: &dyn Prm, task: &Task, mask: &BitMask) -> Result<f64> {
    if mask.dims() != task.dims() {
        return Err(Error::dims(mask.dims(), task.dims()));
    }
    prm.score(task, mask)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Expert,
    NoisyExpert(NoiseConfig),
    Remote { endpoint: RemoteEndpoint },
}

impl PolicySpec {
    pub fn build(&self, prompt: &PromptConfig) -> Result<Box<dyn Policy>> {
        Ok(match self {
            PolicySpec::Expert => Box::new(ExpertPolicy),
            PolicySpec::NoisyExpert(noise) => Box::new(NoisyExpertPolicy::new(*noise)?),
            PolicySpec::Remote { endpoint } => Box::new(RemotePolicy::new(endpoint.clone(), prompt.clone())?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrmSpec {
    Oracle,
    Noisy { sigma: f64, seed: u64 },
    Remote { endpoint: RemoteEndpoint },
}

impl PrmSpec {
    pub fn build(&self, prompt: &PromptConfig) -> Result<Box<dyn Prm>> {
        Ok(match self {
            PrmSpec::Oracle => Box::new(OraclePrm),
            PrmSpec::Noisy { sigma, seed } => {
                if !(*sigma >= 0.0) {
                    return Err(Error::InvalidArgument(format!("prm sigma {sigma} < 0")));
                }
                Box::new(NoisyPrm {
                    sigma: *sigma,
                    seed: *seed,
                })
            }
            PrmSpec::Remote { endpoint } => Box::new(RemotePrm::new(endpoint.clone(), prompt.clone())?),
        })
    }
}
