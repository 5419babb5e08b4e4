//! Expert trajectory generation, replay and JSONL storage.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Env, EnvConfig, EpisodeState, InitSpec, StopReason, Task};
use crate::error::{Error, Result};
use crate::expert::next_click;
use crate::improve::with_jobs;
use crate::mask::bbox;
use crate::rle::{rle_decode, rle_encode, RleMask};
use crate::seed::rng_for;
use crate::segment::Segmenter;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub action: Action,
    pub mask_after: RleMask,
    pub reward_before: f64,
    pub reward_after: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub init: InitSpec,
    pub steps: Vec<TrajectoryStep>,
    pub final_reward: f64,
    pub stop_reason: StopReason,
}

impl Trajectory {
    pub fn actions(&self) -> impl Iterator<Item = &Action> {
        self.steps.iter().map(|s| &s.action)
    }
}

pub(crate) fn record(before: &EpisodeState, after: &EpisodeState, action: Action) -> TrajectoryStep {
    TrajectoryStep {
        action,
        mask_after: rle_encode(&after.mask),
        reward_before: before.reward,
        reward_after: after.reward,
    }
}

/// Runs the expert from `state` under the trajectory stop rules, appending
/// to `steps`. Returns the final state and why the loop stopped.
pub fn expert_continue(
    env: &Env<'_>,
    mut state: EpisodeState,
    steps: &mut Vec<TrajectoryStep>,
) -> Result<(EpisodeState, StopReason)> {
    let cfg = env.config;
    loop {
        if state.reward >= cfg.tau_stop {
            return Ok((state, StopReason::ReachedTauStop));
        }
        if state.step >= cfg.max_steps {
            return Ok((state, StopReason::MaxSteps));
        }
        let Some(action) = next_click(&state.mask, &env.task.target)? else {
            return Ok((state, StopReason::Converged));
        };
        let t = env.step(&state, action)?;
        if t.reward - state.reward < cfg.tau_diff {
            // Low-impact action: discard it and keep M_t.
            return Ok((state, StopReason::LowImpact));
        }
        steps.push(record(&state, &t.state, action));
        state = t.state;
    }
}

pub fn generate_trajectory(
    task: &Task,
    segmenter: &dyn Segmenter,
    config: EnvConfig,
    init: &InitSpec,
) -> Result<Trajectory> {
    config.validate()?;
    task.validate()?;
    let env = Env::new(task, segmenter, config);
    let state = env.reset(init)?;
    let mut steps = Vec::new();
    let (last, stop_reason) = expert_continue(&env, state, &mut steps)?;
    Ok(Trajectory {
        task_id: task.id.clone(),
        init: *init,
        steps,
        final_reward: last.reward,
        stop_reason,
    })
}

/// Share of each init kind when building a mixed dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitMix {
    pub empty: f64,
    pub from_box: f64,
    pub random_clicks: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl Default for InitMix {
    fn default() -> Self {
        Self {
            empty: 0.8,
            from_box: 0.1,
            random_clicks: 0.1,
            n_pos: 2,
            n_neg: 1,
        }
    }
}

impl InitMix {
    pub fn validate(&self) -> Result<()> {
        let w = [self.empty, self.from_box, self.random_clicks];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidArgument(format!("bad init mix weights {w:?}")));
        }
        Ok(())
    }

    /// Deterministic per `(seed, task)`. Box inits use the target's
    /// bounding box.
    pub fn pick(&self, task: &Task, seed: u64) -> Result<InitSpec> {
        use rand::Rng;
        self.validate()?;
        let total = self.empty + self.from_box + self.random_clicks;
        let u = rng_for(seed, "init-mix", &task.id, &[]).gen_range(0.0..total);
        Ok(if u < self.empty {
            InitSpec::Empty
        } else if u < self.empty + self.from_box {
            InitSpec::FromBox {
                bbox: bbox(&task.target)?,
            }
        } else {
            InitSpec::FromRandomClicks {
                n_pos: self.n_pos,
                n_neg: self.n_neg,
                seed,
            }
        })
    }
}

/// [`generate_trajectory`] over many tasks on `jobs` threads; output
/// follows task order.
pub fn generate_all(
    tasks: &[Task],
    inits: &[InitSpec],
    segmenter: &dyn Segmenter,
    config: EnvConfig,
    jobs: usize,
) -> Result<Vec<Trajectory>> {
    use rayon::prelude::*;
    if inits.len() != tasks.len() {
        return Err(Error::InvalidArgument(format!(
            "{} init specs for {} tasks",
            inits.len(),
            tasks.len()
        )));
    }
    with_jobs(jobs, || {
        tasks
            .par_iter()
            .zip(inits.par_iter())
            .map(|(t, i)| generate_trajectory(t, segmenter, config, i))
            .collect()
    })?
}

/// Re-applies the stored actions and checks every stored mask and reward.
/// Returns the visited states, initial state first.
pub fn replay(
    trajectory: &Trajectory,
    task: &Task,
    segmenter: &dyn Segmenter,
    config: EnvConfig,
) -> Result<Vec<EpisodeState>> {
    let config = EnvConfig {
        max_steps: config.max_steps.max(trajectory.steps.len()),
        // Termination is the trajectory's business; replay only checks states.
        tau_stop: 1.0,
        ..config
    };
    let env = Env::new(task, segmenter, config);
    let mut state = env.reset(&trajectory.init)?;
    let mut states = vec![state.clone()];
    for (i, step) in trajectory.steps.iter().enumerate() {
        if state.reward != step.reward_before {
            return Err(Error::ReplayDivergence {
                step: i,
                reason: format!("reward_before {} != replayed {}", step.reward_before, state.reward),
            });
        }
        let next = env.apply(&state, step.action)?;
        let stored = rle_decode(&step.mask_after)?;
        if stored != next.mask {
            return Err(Error::ReplayDivergence {
                step: i,
                reason: "mask_after differs from replayed mask".into(),
            });
        }
        if next.reward != step.reward_after {
            return Err(Error::ReplayDivergence {
                step: i,
                reason: format!("reward_after {} != replayed {}", step.reward_after, next.reward),
            });
        }
        state = next;
        states.push(state.clone());
    }
    Ok(states)
}

pub fn write_jsonl_to<W: Write>(trajectories: &[Trajectory], mut out: W) -> Result<()> {
    for t in trajectories {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn write_jsonl(trajectories: &[Trajectory], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl_to(trajectories, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl_from<R: BufRead>(reader: R, label: &Path) -> Result<Vec<Trajectory>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(label, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line).map_err(|e| Error::JsonLine {
            path: label.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl_from(BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{BitMask, GrayImage};
    use crate::segment::OracleSegmenter;

    struct Blank;
    impl Segmenter for Blank {
        fn segment(&self, task: &Task, _: &[crate::segment::Click], _: Option<crate::mask::NormBox>) -> Result<BitMask> {
            Ok(BitMask::new(task.target.width(), task.target.height()))
        }
    }

    fn blobs(n: usize) -> Task {
        let target = BitMask::from_fn(24, 8, |x, y| (1..7).contains(&y) && x % 8 >= 1 && x % 8 < 7 && x / 8 < n);
        Task::new(format!("blobs{n}"), GrayImage::filled(24, 8, 0), target, "blobs").unwrap()
    }

    #[test]
    fn single_component_one_step() {
        let t = generate_trajectory(&blobs(1), &OracleSegmenter::default(), EnvConfig::default(), &InitSpec::Empty).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert_eq!(t.final_reward, 1.0);
        assert_eq!(t.stop_reason, StopReason::ReachedTauStop);
    }

    #[test]
    fn three_components_three_steps() {
        let t = generate_trajectory(&blobs(3), &OracleSegmenter::default(), EnvConfig::default(), &InitSpec::Empty).unwrap();
        assert_eq!(t.steps.len(), 3);
        assert_eq!(t.final_reward, 1.0);
        for s in &t.steps {
            assert!(s.reward_after - s.reward_before >= 0.01);
        }
    }

    #[test]
    fn blank_segmenter_is_low_impact() {
        let t = generate_trajectory(&blobs(1), &Blank, EnvConfig::default(), &InitSpec::Empty).unwrap();
        assert!(t.steps.is_empty());
        assert_eq!(t.stop_reason, StopReason::LowImpact);
        assert_eq!(t.final_reward, 0.0);
    }

    #[test]
    fn replay_detects_tampering() {
        let task = blobs(2);
        let seg = OracleSegmenter::default();
        let mut t = generate_trajectory(&task, &seg, EnvConfig::default(), &InitSpec::Empty).unwrap();
        assert_eq!(replay(&t, &task, &seg, EnvConfig::default()).unwrap().len(), 3);
        t.steps[1].mask_after = rle_encode(&BitMask::new(24, 8));
        assert!(matches!(
            replay(&t, &task, &seg, EnvConfig::default()),
            Err(Error::ReplayDivergence { step: 1, .. })
        ));
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let task = blobs(2);
        let t = generate_trajectory(&task, &OracleSegmenter::default(), EnvConfig::default(), &InitSpec::Empty).unwrap();
        let mut buf = Vec::new();
        write_jsonl_to(&[t.clone(), t.clone()], &mut buf).unwrap();
        let back = read_jsonl_from(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, vec![t.clone(), t]);

        let mut empty = Vec::new();
        write_jsonl_to(&[], &mut empty).unwrap();
        assert!(empty.is_empty());
        assert!(read_jsonl_from(&empty[..], Path::new("mem")).unwrap().is_empty());

        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        let broken = format!("{first}\n{}\n", &first[..first.len() / 2]);
        match read_jsonl_from(broken.as_bytes(), Path::new("mem")) {
            Err(Error::JsonLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
    }

    #[test]
    fn init_mix_is_deterministic_and_covers_kinds() {
        let tasks = crate::synth::synth_tasks(200, 32, 1).unwrap();
        let mix = InitMix::default();
        let picks: Vec<InitSpec> = tasks.iter().map(|t| mix.pick(t, 9).unwrap()).collect();
        let again: Vec<InitSpec> = tasks.iter().map(|t| mix.pick(t, 9).unwrap()).collect();
        assert_eq!(picks, again);
        let empty = picks.iter().filter(|i| **i == InitSpec::Empty).count();
        assert!((120..=180).contains(&empty), "{empty}");
        assert!(picks.iter().any(|i| matches!(i, InitSpec::FromBox { .. })));
        assert!(picks.iter().any(|i| matches!(i, InitSpec::FromRandomClicks { .. })));
        let only_box = InitMix { empty: 0.0, from_box: 1.0, random_clicks: 0.0, ..mix };
        assert!(matches!(only_box.pick(&tasks[0], 0).unwrap(), InitSpec::FromBox { .. }));
    }

    #[test]
    fn parallel_generation_matches_sequential() {
        let tasks = crate::synth::synth_tasks(12, 32, 2).unwrap();
        let inits = vec![InitSpec::Empty; tasks.len()];
        let seg = OracleSegmenter::default();
        let a = generate_all(&tasks, &inits, &seg, EnvConfig::default(), 1).unwrap();
        let b = generate_all(&tasks, &inits, &seg, EnvConfig::default(), 4).unwrap();
        assert_eq!(a, b);
    }
}
