//! Policy improvement as dataset refinement: greedy rollouts, StaR filtering,
//! StaR+ correction with the expert, and the iteration driver that hands each
//! training set to an external command.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, EpisodeState, InitSpec, StopReason, Task};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::segment::Segmenter;
use crate::trajectory::{expert_continue, read_jsonl, record, replay, write_jsonl, Trajectory, TrajectoryStep};

/// Placeholder replaced by the training-set path in hook commands.
pub const DATASET_PLACEHOLDER: &str = "{dataset}";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutFailure {
    pub task_id: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutOutcome {
    /// One per task, in task order. Failed episodes keep the steps taken
    /// before the failure and stop with [`StopReason::Failed`].
    pub trajectories: Vec<Trajectory>,
    pub failures: Vec<RolloutFailure>,
}

/// Greedy episode: take the policy's first proposal until the env says done
/// or the policy has nothing to offer. No low-impact discard here; every
/// step is recorded.
pub fn rollout_one(
    policy: &dyn Policy,
    task: &Task,
    segmenter: &dyn Segmenter,
    config: EnvConfig,
    init: &InitSpec,
    seed: u64,
) -> (Trajectory, Option<Error>) {
    let mut steps = Vec::new();
    let mut final_reward = 0.0;
    let result = (|| -> Result<StopReason> {
        config.validate()?;
        let env = Env::new(task, segmenter, config);
        let mut state = env.reset(init)?;
        final_reward = state.reward;
        if state.reward >= config.tau_stop {
            return Ok(StopReason::ReachedTauStop);
        }
        loop {
            let proposals = policy.propose(task, &state, 1, seed)?;
            let Some(first) = proposals.first() else {
                return Ok(StopReason::PolicyExhausted);
            };
            let t = env.step(&state, first.action)?;
            steps.push(record(&state, &t.state, first.action));
            final_reward = t.reward;
            state = t.state;
            if t.done {
                return Ok(t.stop_reason);
            }
        }
    })();
    let (stop_reason, err) = match result {
        Ok(r) => (r, None),
        Err(e) => (StopReason::Failed, Some(e)),
    };
    let trajectory = Trajectory {
        task_id: task.id.clone(),
        init: *init,
        steps,
        final_reward,
        stop_reason,
    };
    (trajectory, err)
}

/// Rolls out every task, `jobs` at a time. Output order follows `tasks`
/// regardless of `jobs`, and each episode's randomness depends only on
/// `(seed, task)`, so results do not depend on scheduling.
pub fn rollout(
    policy: &dyn Policy,
    tasks: &[Task],
    inits: &[InitSpec],
    segmenter: &dyn Segmenter,
    config: EnvConfig,
    seed: u64,
    jobs: usize,
) -> Result<RolloutOutcome> {
    if inits.len() != tasks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} init specs for {} tasks",
            inits.len(),
            tasks.len()
        )));
    }
    config.validate()?;
    let run = || -> Vec<(Trajectory, Option<Error>)> {
        tasks
            .par_iter()
            .zip(inits.par_iter())
            .map(|(task, init)| rollout_one(policy, task, segmenter, config, init, seed))
            .collect()
    };
    let results = with_jobs(jobs, run)?;
    let mut out = RolloutOutcome::default();
    for (traj, err) in results {
        if let Some(e) = err {
            out.failures.push(RolloutFailure {
                task_id: traj.task_id.clone(),
                message: e.to_string(),
            });
        }
        out.trajectories.push(traj);
    }
    Ok(out)
}

/// Runs `f` on a dedicated pool of `jobs` threads (1 means sequential).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Which rollout steps survive refinement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetainRule {
    /// Keep a step when it strictly increases the reward.
    #[default]
    StrictPositive,
    /// Keep a step only when it gains at least `tau_diff`.
    TauDiff,
}

impl RetainRule {
    fn keeps(self, gain: f64, config: &EnvConfig) -> bool {
        match self {
            RetainRule::StrictPositive => gain > 0.0,
            RetainRule::TauDiff => gain >= config.tau_diff,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub trajectory: Trajectory,
    /// Index of the first expert-generated step, when a correction happened
    /// or the rollout ended short and the expert finished the job.
    pub expert_from: Option<usize>,
    /// True when a rollout step was rejected and replaced.
    pub corrected: bool,
}

/// Keeps the rollout's prefix of improving steps. At the first step that
/// fails [`RetainRule`], that action and everything after it are dropped and
/// the expert takes over under the trajectory stop rules. A rollout whose
/// steps are all kept is still handed to the expert, which stops at once if
/// the episode had already ended.
pub fn refine_star_plus(
    rollout: &Trajectory,
    task: &Task,
    segmenter: &dyn Segmenter,
    config: EnvConfig,
    rule: RetainRule,
) -> Result<Refined> {
    if rollout.task_id != task.id {
        return Err(Error::InvalidArgument(format!(
            "trajectory for {} refined against task {}",
            rollout.task_id, task.id
        )));
    }
    config.validate()?;
    let states = replay(rollout, task, segmenter, config)?;
    let env = Env::new(task, segmenter, config);
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut state: EpisodeState = states[0].clone();
    let mut corrected = false;
    for (step, next) in rollout.steps.iter().zip(&states[1..]) {
        if state.reward >= config.tau_stop || state.step >= config.max_steps {
            break;
        }
        if !rule.keeps(next.reward - state.reward, &config) {
            corrected = true;
            break;
        }
        steps.push(step.clone());
        state = next.clone();
    }
    let kept = steps.len();
    let (last, stop_reason) = expert_continue(&env, state, &mut steps)?;
    let expert_from = (steps.len() > kept).then_some(kept);
    Ok(Refined {
        trajectory: Trajectory {
            task_id: task.id.clone(),
            init: rollout.init,
            steps,
            final_reward: last.reward,
            stop_reason,
        },
        expert_from,
        corrected,
    })
}

/// Keeps trajectories whose final reward reaches `tau_star`.
pub fn star_filter(trajectories: &[Trajectory], tau_star: f64) -> Vec<Trajectory> {
    trajectories
        .iter()
        .filter(|t| t.final_reward >= tau_star)
        .cloned()
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StarMode {
    /// Filter rollouts by final reward; train on the survivors only.
    Star,
    /// Correct rollouts with the expert; train on the seed set plus the corrections.
    StarPlus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrainHook {
    /// Shell command run once per iteration; `{dataset}` becomes the
    /// training-set path.
    ExternalCommand { template: String },
    /// Only write the dataset.
    EmitOnly,
}

impl TrainHook {
    pub fn validate(&self) -> Result<()> {
        match self {
            TrainHook::ExternalCommand { template } if !template.contains(DATASET_PLACEHOLDER) => {
                Err(Error::Hook(format!(
                    "hook command must contain {DATASET_PLACEHOLDER}: {template:?}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn run(&self, dataset: &Path) -> Result<()> {
        self.validate()?;
        let TrainHook::ExternalCommand { template } = self else {
            return Ok(());
        };
        let command = template.replace(DATASET_PLACEHOLDER, &shell_quote(&dataset.to_string_lossy()));
        let status = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .status()
            .map_err(|e| Error::Hook(format!("spawning `{command}`: {e}")))?;
        if !status.success() {
            return Err(Error::Hook(format!("`{command}` exited with {status}")));
        }
        Ok(())
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Expert trajectories from the generator.
    Generated,
    /// Policy rollouts, possibly filtered.
    Rollout,
    /// Rollouts after expert correction.
    Refined,
    /// A union of the seed set and a refined set.
    Merged,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub trajectories: usize,
    pub steps: usize,
}

impl DatasetCounts {
    pub fn of(trajectories: &[Trajectory]) -> Self {
        Self {
            trajectories: trajectories.len(),
            steps: trajectories.iter().map(|t| t.steps.len()).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub provenance: Provenance,
    pub counts: DatasetCounts,
}

impl DatasetManifest {
    /// Re-reads every file and checks the recorded counts.
    pub fn verify(&self) -> Result<Vec<Trajectory>> {
        let mut all = Vec::new();
        for f in &self.files {
            all.extend(read_jsonl(f)?);
        }
        let actual = DatasetCounts::of(&all);
        if actual != self.counts {
            return Err(Error::InvalidArgument(format!(
                "dataset {} declares {:?} but files hold {:?}",
                self.name, self.counts, actual
            )));
        }
        Ok(all)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub n_rollouts: usize,
    pub n_corrections: usize,
    pub mean_reward_raw: f64,
    pub mean_reward_refined: f64,
    pub n_failures: usize,
    pub n_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarConfig {
    pub mode: StarMode,
    pub iterations: usize,
    pub env: EnvConfig,
    /// Final-reward threshold for [`StarMode::Star`].
    pub tau_star: f64,
    pub retain: RetainRule,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for StarConfig {
    fn default() -> Self {
        Self {
            mode: StarMode::StarPlus,
            iterations: 1,
            env: EnvConfig::default(),
            tau_star: EnvConfig::DEFAULT_TAU_STOP,
            retain: RetainRule::default(),
            seed: 0,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StarOutcome {
    pub dataset: DatasetManifest,
    pub reports: Vec<IterationReport>,
}

fn mean_final(ts: &[Trajectory]) -> f64 {
    if ts.is_empty() {
        return 0.0;
    }
    ts.iter().map(|t| t.final_reward).sum::<f64>() / ts.len() as f64
}

/// Runs `config.iterations` rounds. Each round rolls out `policy` from the
/// empty mask on every task, builds D_n, writes
/// `out/iter_{n}/{rollouts,d_n,train}.jsonl` plus `report.json` and
/// `manifest.json`, then calls the hook on `train.jsonl`.
///
/// The same `policy` object serves every round; a remote policy is expected
/// to pick up new weights behind its endpoint after each hook call.
pub fn star_iteration(
    config: &StarConfig,
    policy: &dyn Policy,
    d0_path: &Path,
    tasks: &[Task],
    segmenter: &dyn Segmenter,
    hook: &TrainHook,
    out: &Path,
) -> Result<StarOutcome> {
    config.env.validate()?;
    hook.validate()?;
    if !(0.0..=1.0).contains(&config.tau_star) {
        return Err(Error::InvalidArgument(format!("tau_star {} outside [0,1]", config.tau_star)));
    }
    let d0 = read_jsonl(d0_path)?;
    let mut dataset = DatasetManifest {
        name: "d_0".into(),
        files: vec![d0_path.to_path_buf()],
        provenance: Provenance::Generated,
        counts: DatasetCounts::of(&d0),
    };
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let inits = vec![InitSpec::Empty; tasks.len()];
    let mut reports = Vec::new();

    for n in 1..=config.iterations {
        let dir = out.join(format!("iter_{n}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let seed = config.seed.wrapping_add(n as u64);
        let outcome = rollout(policy, tasks, &inits, segmenter, config.env, seed, config.jobs)?;
        let usable: Vec<Trajectory> = outcome
            .trajectories
            .iter()
            .filter(|t| t.stop_reason != StopReason::Failed)
            .cloned()
            .collect();

        let (d_n, n_corrections, d_n_provenance) = match config.mode {
            StarMode::Star => (star_filter(&usable, config.tau_star), 0, Provenance::Rollout),
            StarMode::StarPlus => {
                let refined = with_jobs(config.jobs, || {
                    usable
                        .par_iter()
                        .map(|t| {
                            let task = by_id.get(t.task_id.as_str()).ok_or_else(|| {
                                Error::InvalidArgument(format!("rollout for unknown task {}", t.task_id))
                            })?;
                            refine_star_plus(t, task, segmenter, config.env, config.retain)
                        })
                        .collect::<Result<Vec<_>>>()
                })??;
                let corrections = refined.iter().filter(|r| r.corrected).count();
                let trajs = refined.into_iter().map(|r| r.trajectory).collect();
                (trajs, corrections, Provenance::Refined)
            }
        };

        let rollouts_path = dir.join("rollouts.jsonl");
        let d_n_path = dir.join("d_n.jsonl");
        write_jsonl(&outcome.trajectories, &rollouts_path)?;
        write_jsonl(&d_n, &d_n_path)?;
        let (train, provenance, files) = match config.mode {
            StarMode::Star => (d_n.clone(), d_n_provenance, vec![d_n_path.clone()]),
            StarMode::StarPlus => {
                let mut merged = d0.clone();
                merged.extend(d_n.iter().cloned());
                (merged, Provenance::Merged, vec![d0_path.to_path_buf(), d_n_path.clone()])
            }
        };
        let train_path = dir.join("train.jsonl");
        write_jsonl(&train, &train_path)?;

        let report = IterationReport {
            iteration: n,
            n_rollouts: outcome.trajectories.len(),
            n_corrections,
            mean_reward_raw: mean_final(&usable),
            mean_reward_refined: mean_final(&d_n),
            n_failures: outcome.failures.len(),
            n_train: train.len(),
        };
        dataset = DatasetManifest {
            name: format!("train_{n}"),
            files,
            provenance,
            counts: DatasetCounts::of(&train),
        };
        write_json(&dir.join("report.json"), &report)?;
        write_json(&dir.join("manifest.json"), &dataset)?;
        hook.run(&train_path)?;
        reports.push(report);
    }
    Ok(StarOutcome { dataset, reports })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
