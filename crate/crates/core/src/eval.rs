//! Metrics: cumulative and mean IoU, clicks-to-target complexity, PRM
//! regression quality, and PRM-based mask filtering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, InitSpec, Task};
use crate::error::{Error, Result};
use crate::expert::next_click;
use crate::mask::{iou, overlap_counts, BitMask};
use crate::policy::{prm_score, Prm};
use crate::segment::Segmenter;

pub const DEFAULT_NOC_CAP: usize = 20;

/// Σ|pred ∩ gt| / Σ|pred ∪ gt| over all pairs.
pub fn ciou(pairs: &[(BitMask, BitMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("ciou of an empty list".into()));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (pred, gt) in pairs {
        let (i, u) = overlap_counts(pred, gt)?;
        inter += i;
        union += u;
    }
    if union == 0 {
        return Err(Error::InvalidArgument("ciou undefined: every pair is empty".into()));
    }
    Ok(inter as f64 / union as f64)
}

/// Mean of per-pair IoU.
pub fn miou(pairs: &[(BitMask, BitMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("miou of an empty list".into()));
    }
    let mut sum = 0.0;
    for (pred, gt) in pairs {
        sum += iou(pred, gt)?;
    }
    Ok(sum / pairs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NocResult {
    pub clicks: usize,
    pub reached: bool,
}

/// Clicks the expert needs before IoU reaches `target_iou`, up to `cap`.
/// Every click counts, even ones that do not help.
pub fn noc(task: &Task, segmenter: &dyn Segmenter, target_iou: f64, cap: usize) -> Result<NocResult> {
    if !(target_iou > 0.0 && target_iou <= 1.0) {
        return Err(Error::InvalidArgument(format!("target IoU {target_iou} outside (0,1]")));
    }
    if cap < 1 {
        return Err(Error::InvalidArgument("noc cap must be >= 1".into()));
    }
    task.validate()?;
    let env = Env::new(
        task,
        segmenter,
        EnvConfig {
            max_steps: cap,
            tau_stop: target_iou,
            tau_diff: 0.0,
        },
    );
    let mut state = env.reset(&InitSpec::Empty)?;
    for clicks in 1..=cap {
        let Some(action) = next_click(&state.mask, &task.target)? else {
            break;
        };
        state = env.apply(&state, action)?;
        if state.reward >= target_iou {
            return Ok(NocResult { clicks, reached: true });
        }
    }
    Ok(NocResult {
        clicks: cap,
        reached: false,
    })
}

/// `(click_count, frequency)` rows, ascending by click count.
pub fn noc_histogram(results: &[NocResult]) -> Vec<(usize, usize)> {
    let mut h = BTreeMap::new();
    for r in results {
        *h.entry(r.clicks).or_insert(0usize) += 1;
    }
    h.into_iter().collect()
}

pub fn histogram_csv(rows: &[(usize, usize)]) -> String {
    let mut s = String::from("click_count,frequency\n");
    for (c, f) in rows {
        s.push_str(&format!("{c},{f}\n"));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub mse: f64,
    pub pearson: f64,
    pub spearman: f64,
}

/// Error and correlation of `pred` against `truth`, in whatever units the
/// inputs use. Use [`regression_metrics_percent`] for IoU ratios.
pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::InvalidArgument("regression metrics need at least 2 points".into()));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("regression inputs must be finite".into()));
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    Ok(RegressionMetrics {
        mae,
        mse,
        pearson: pearson(pred, truth)?,
        spearman: pearson(&ranks(pred), &ranks(truth))?,
    })
}

/// [`regression_metrics`] on ratios rescaled to IoU percentage points.
pub fn regression_metrics_percent(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics> {
    let pct = |v: &[f64]| v.iter().map(|x| x * 100.0).collect::<Vec<_>>();
    regression_metrics(&pct(pred), &pct(truth))
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidArgument("correlation undefined for zero-variance input".into()));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share their average rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    /// Indices into the input, in input order.
    pub kept: Vec<usize>,
    pub rejected: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Splits masks by PRM score against `threshold` (scores equal to the
/// threshold are kept).
pub fn filter_masks(prm: &dyn Prm, pairs: &[(&Task, &BitMask)], threshold: f64) -> Result<FilterOutcome> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0,1]")));
    }
    let mut out = FilterOutcome {
        kept: Vec::new(),
        rejected: Vec::new(),
        scores: Vec::with_capacity(pairs.len()),
    };
    for (i, (task, mask)) in pairs.iter().enumerate() {
        let s = prm_score(prm, task, mask)?;
        out.scores.push(s);
        if s >= threshold {
            out.kept.push(i);
        } else {
            out.rejected.push(i);
        }
    }
    Ok(out)
}

/// Masks of mixed quality for filter experiments: for each task,
/// `per_task` segmenter outputs from 1..=`max_pos` positive and
/// 0..=`max_neg` negative clicks drawn inside the target's bounding box.
pub fn filter_fixture(
    tasks: &[Task],
    segmenter: &dyn Segmenter,
    per_task: usize,
    max_pos: usize,
    max_neg: usize,
    seed: u64,
) -> Result<Vec<(usize, BitMask)>> {
    use rand::Rng;
    if max_pos < 1 {
        return Err(Error::InvalidArgument("max_pos must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(tasks.len() * per_task);
    for (ti, task) in tasks.iter().enumerate() {
        let env = Env::new(task, segmenter, EnvConfig::default());
        for j in 0..per_task {
            let mut rng = crate::seed::rng_for(seed, "filter-fixture", &task.id, &[j as u64]);
            let init = InitSpec::FromRandomClicks {
                n_pos: rng.gen_range(1..=max_pos),
                n_neg: rng.gen_range(0..=max_neg),
                seed: seed ^ ((j as u64) << 32),
            };
            out.push((ti, env.reset(&init)?.mask));
        }
    }
    Ok(out)
}
