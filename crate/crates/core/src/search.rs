//! Greedy tree search guided by a process reward model: at each step the
//! policy offers up to K candidates, the PRM scores the mask each one
//! produces, the best is adopted, and the best-scoring state over the whole
//! episode is returned.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvConfig, EpisodeState, InitSpec, StopReason, Task};
use crate::error::{Error, Result};
use crate::grammar::action_key;
use crate::mask::BitMask;
use crate::policy::{prm_score, Policy, Prm};
use crate::segment::Segmenter;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k: usize,
    pub max_steps: usize,
    pub convergence_eps: f64,
    pub convergence_patience: usize,
    /// Stop once the adopted state's PRM score reaches this value.
    pub stop_reward: Option<f64>,
    pub seed: u64,
}

impl SearchConfig {
    pub const DEFAULT_EPS: f64 = 1e-3;
    pub const DEFAULT_PATIENCE: usize = 2;

    pub fn new(k: usize, max_steps: usize) -> Self {
        Self {
            k,
            max_steps,
            convergence_eps: Self::DEFAULT_EPS,
            convergence_patience: Self::DEFAULT_PATIENCE,
            stop_reward: Some(EnvConfig::DEFAULT_TAU_STOP),
            seed: 0,
        }
    }

    /// Exactly `max_steps` steps unless the policy runs dry: no convergence
    /// or reward stop.
    pub fn fixed_steps(k: usize, max_steps: usize) -> Self {
        Self {
            convergence_patience: max_steps + 1,
            stop_reward: None,
            ..Self::new(k, max_steps)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || self.max_steps < 1 || self.convergence_patience < 1 {
            return Err(Error::InvalidArgument(format!(
                "search needs k, max_steps and patience >= 1 (got {}, {}, {})",
                self.k, self.max_steps, self.convergence_patience
            )));
        }
        if !(self.convergence_eps >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "convergence_eps {} must be >= 0",
                self.convergence_eps
            )));
        }
        if let Some(s) = self.stop_reward {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidArgument(format!("stop_reward {s} outside [0,1]")));
            }
        }
        Ok(())
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self::new(3, 11)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: Action,
    pub score: f64,
    pub stated_reward: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub step: usize,
    pub candidates: Vec<Candidate>,
    /// Index into `candidates`.
    pub chosen: usize,
    /// Best PRM score seen so far, including this step.
    pub running_best: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best_mask: BitMask,
    pub best_reward: f64,
    /// 0 means the initial mask won.
    pub best_step: usize,
    pub initial_reward: f64,
    pub final_mask: BitMask,
    pub final_reward: f64,
    /// Adopted actions in order.
    pub actions: Vec<Action>,
    pub trace: Vec<SearchStep>,
    pub stop_reason: StopReason,
}

/// Serializable summary of a search, as the CLI writes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub task_id: String,
    pub initial_reward: f64,
    pub best_reward: f64,
    pub best_step: usize,
    pub final_reward: f64,
    pub stop_reason: StopReason,
    pub trace: Vec<SearchStep>,
}

impl SearchResult {
    pub fn report(&self, task_id: &str) -> SearchReport {
        SearchReport {
            task_id: task_id.to_string(),
            initial_reward: self.initial_reward,
            best_reward: self.best_reward,
            best_step: self.best_step,
            final_reward: self.final_reward,
            stop_reason: self.stop_reason,
            trace: self.trace.clone(),
        }
    }
}

pub fn prm_greedy(
    task: &Task,
    policy: &dyn Policy,
    prm: &dyn Prm,
    segmenter: &dyn Segmenter,
    config: &SearchConfig,
    init: &InitSpec,
) -> Result<SearchResult> {
    config.validate()?;
    // Termination lives here, so the env only needs to transition.
    let env = Env::new(
        task,
        segmenter,
        EnvConfig {
            max_steps: config.max_steps,
            tau_stop: 1.0,
            tau_diff: 0.0,
        },
    );
    let mut state = env.reset(init)?;
    let r0 = prm_score(prm, task, &state.mask)?;
    let mut current = r0;
    let mut best = (r0, state.mask.clone(), 0usize);
    let mut running_best = r0;
    let mut stale = 0usize;
    let mut trace = Vec::new();
    let mut actions = Vec::new();

    let stop_reason = loop {
        if config.stop_reward.is_some_and(|s| current >= s) {
            break StopReason::ReachedTauStop;
        }
        if state.step >= config.max_steps {
            break StopReason::MaxSteps;
        }
        let mut seen = HashSet::new();
        let proposals: Vec<_> = policy
            .propose(task, &state, config.k, config.seed)?
            .into_iter()
            .filter(|p| p.action.is_valid() && seen.insert(action_key(&p.action)))
            .take(config.k)
            .collect();
        if proposals.is_empty() {
            break StopReason::PolicyExhausted;
        }
        let evaluate = |p: &crate::policy::PolicyProposal| -> Result<(EpisodeState, f64)> {
            let next = env.apply(&state, p.action)?;
            let score = prm_score(prm, task, &next.mask)?;
            Ok((next, score))
        };
        let evaluated: Vec<(EpisodeState, f64)> = if proposals.len() > 1 {
            proposals.par_iter().map(evaluate).collect::<Result<_>>()?
        } else {
            proposals.iter().map(evaluate).collect::<Result<_>>()?
        };
        // First maximum wins ties.
        let mut chosen = 0;
        for (i, (_, s)) in evaluated.iter().enumerate() {
            if *s > evaluated[chosen].1 {
                chosen = i;
            }
        }
        let candidates = proposals
            .iter()
            .zip(&evaluated)
            .map(|(p, (_, s))| Candidate {
                action: p.action,
                score: *s,
                stated_reward: p.stated_reward,
            })
            .collect();
        let (next, score) = evaluated.into_iter().nth(chosen).expect("chosen index in range");
        actions.push(proposals[chosen].action);
        state = next;
        current = score;
        if score > running_best + config.convergence_eps {
            stale = 0;
        } else {
            stale += 1;
        }
        running_best = running_best.max(score);
        if score > best.0 {
            best = (score, state.mask.clone(), state.step);
        }
        trace.push(SearchStep {
            step: state.step,
            candidates,
            chosen,
            running_best,
        });
        if stale >= config.convergence_patience {
            break StopReason::Converged;
        }
    };

    Ok(SearchResult {
        best_mask: best.1,
        best_reward: best.0,
        best_step: best.2,
        initial_reward: r0,
        final_mask: state.mask,
        final_reward: current,
        actions,
        trace,
        stop_reason,
    })
}

/// [`prm_greedy`] over many tasks on `jobs` threads, in task order.
pub fn search_all(
    tasks: &[Task],
    inits: &[InitSpec],
    policy: &dyn Policy,
    prm: &dyn Prm,
    segmenter: &dyn Segmenter,
    config: &SearchConfig,
    jobs: usize,
) -> Result<Vec<SearchResult>> {
    if inits.len() != tasks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} init specs for {} tasks",
            inits.len(),
            tasks.len()
        )));
    }
    crate::improve::with_jobs(jobs, || {
        tasks
            .par_iter()
            .zip(inits.par_iter())
            .map(|(t, i)| prm_greedy(t, policy, prm, segmenter, config, i))
            .collect()
    })?
}
