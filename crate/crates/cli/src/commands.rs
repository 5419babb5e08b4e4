use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use clickseg_core::env::{load_tasks, Task};
use clickseg_core::eval::{
    ciou, filter_fixture, filter_masks, histogram_csv, noc, noc_histogram, regression_metrics,
    regression_metrics_percent,
};
use clickseg_core::improve::{
    rollout, star_iteration, DatasetCounts, DatasetManifest, Provenance, RetainRule, StarConfig, StarMode,
    TrainHook,
};
use clickseg_core::mask::{iou, BitMask};
use clickseg_core::pnm;
use clickseg_core::remote::{MockConfig, MockServer};
use clickseg_core::search::search_all;
use clickseg_core::sft::{render_sft, write_sft_images, write_sft_records};
use clickseg_core::synth::{synth_tasks, write_task_set};
use clickseg_core::trajectory::{generate_all, read_jsonl, write_jsonl, Trajectory};

use crate::config::{RunConfig, RunHeader};
use crate::{Cli, Command, EvalCommand};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.common.resolve()?;
    match cli.command {
        Command::Synth { n, side, out } => synth(&cfg, n, side, &out),
        Command::GenTraj { tasks, out } => gen_traj(&cfg, &tasks, &out),
        Command::RenderSft {
            tasks,
            trajectories,
            out,
            template,
            no_prm_supervision,
        } => {
            if let Some(t) = template {
                cfg.template_id = t;
            }
            if no_prm_supervision {
                cfg.prm_supervision = false;
            }
            render(&cfg, &tasks, &trajectories, &out)
        }
        Command::Rollout { tasks, out, agents } => {
            agents.apply(&mut cfg)?;
            rollout_cmd(&cfg, &tasks, &out)
        }
        Command::Star {
            tasks,
            d0,
            out,
            mode,
            iterations,
            tau_star,
            hook,
            retain,
            agents,
        } => {
            agents.apply(&mut cfg)?;
            if let Some(m) = mode {
                cfg.star_mode = match m.as_str() {
                    "star" => StarMode::Star,
                    "star-plus" | "star_plus" | "starplus" => StarMode::StarPlus,
                    o => bail!("unknown mode `{o}` (star, star-plus)"),
                };
            }
            if let Some(r) = retain {
                cfg.retain = match r.as_str() {
                    "strict" | "strict_positive" => RetainRule::StrictPositive,
                    "tau-diff" | "tau_diff" => RetainRule::TauDiff,
                    o => bail!("unknown retain rule `{o}` (strict, tau-diff)"),
                };
            }
            cfg.iterations = iterations.unwrap_or(cfg.iterations);
            cfg.tau_star = tau_star.unwrap_or(cfg.tau_star);
            let hook = match hook {
                Some(template) => TrainHook::ExternalCommand { template },
                None => TrainHook::EmitOnly,
            };
            star(&cfg, &tasks, &d0, &out, &hook)
        }
        Command::Search {
            tasks,
            out,
            masks_out,
            fixed_steps,
            agents,
        } => {
            agents.apply(&mut cfg)?;
            cfg.fixed_steps |= fixed_steps;
            search(&cfg, &tasks, &out, masks_out.as_deref())
        }
        Command::Eval(e) => eval(cfg, e),
        Command::ServeMock {
            tasks,
            port,
            host,
            workers,
        } => serve_mock(&cfg, &tasks, &host, port, workers),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn tasks(path: &Path) -> Result<Vec<Task>> {
    let t = load_tasks(path).with_context(|| format!("loading tasks from {}", path.display()))?;
    if t.is_empty() {
        bail!("{} lists no tasks", path.display());
    }
    Ok(t)
}

/// `runs/t.jsonl` -> `runs/t.manifest.json`.
fn sidecar(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

fn mean_final(ts: &[Trajectory]) -> f64 {
    if ts.is_empty() {
        return 0.0;
    }
    ts.iter().map(|t| t.final_reward).sum::<f64>() / ts.len() as f64
}

fn dataset(name: &Path, provenance: Provenance, trajectories: &[Trajectory]) -> DatasetManifest {
    DatasetManifest {
        name: name
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        files: vec![name.to_path_buf()],
        provenance,
        counts: DatasetCounts::of(trajectories),
    }
}

fn synth(cfg: &RunConfig, n: usize, side: usize, out: &Path) -> Result<()> {
    let tasks = synth_tasks(n, side, cfg.seed)?;
    let manifest = write_task_set(out, &tasks, RunHeader::new("synth", cfg))?;
    print_json(&json!({"tasks": tasks.len(), "manifest": manifest}))
}

fn gen_traj(cfg: &RunConfig, tasks_path: &Path, out: &Path) -> Result<()> {
    let tasks = tasks(tasks_path)?;
    let seg = cfg.segmenter.build()?;
    let inits = cfg.inits(&tasks)?;
    let trajs = generate_all(&tasks, &inits, seg.as_ref(), cfg.env()?, cfg.jobs)?;
    write_jsonl(&trajs, out)?;
    let ds = dataset(out, Provenance::Generated, &trajs);
    write_json(&sidecar(out), &json!({"run": RunHeader::new("gen-traj", cfg), "dataset": ds}))?;
    print_json(&json!({
        "trajectories": ds.counts.trajectories,
        "steps": ds.counts.steps,
        "mean_final_reward": mean_final(&trajs),
    }))
}

fn render(cfg: &RunConfig, tasks_path: &Path, traj_path: &Path, out: &Path) -> Result<()> {
    let tasks = tasks(tasks_path)?;
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let trajs = read_jsonl(traj_path)?;
    let seg = cfg.segmenter.build()?;
    let prompt = cfg.prompt();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut records = Vec::new();
    for t in &trajs {
        let task = by_id
            .get(t.task_id.as_str())
            .ok_or_else(|| anyhow!("trajectory for unknown task `{}`", t.task_id))?;
        let samples = render_sft(t, task, seg.as_ref(), &prompt)?;
        records.extend(write_sft_images(out, &task.id, &samples)?);
    }
    write_sft_records(&out.join("samples.jsonl"), &records)?;
    write_json(
        &out.join("manifest.json"),
        &json!({"run": RunHeader::new("render-sft", cfg), "trajectories": trajs.len(), "samples": records.len()}),
    )?;
    print_json(&json!({"samples": records.len()}))
}

fn rollout_cmd(cfg: &RunConfig, tasks_path: &Path, out: &Path) -> Result<()> {
    let tasks = tasks(tasks_path)?;
    let seg = cfg.segmenter.build()?;
    let policy = cfg.policy.build(&cfg.prompt())?;
    let inits = cfg.inits(&tasks)?;
    let outcome = rollout(policy.as_ref(), &tasks, &inits, seg.as_ref(), cfg.env()?, cfg.seed, cfg.jobs)?;
    write_jsonl(&outcome.trajectories, out)?;
    let ds = dataset(out, Provenance::Rollout, &outcome.trajectories);
    write_json(
        &sidecar(out),
        &json!({"run": RunHeader::new("rollout", cfg), "dataset": ds, "failures": outcome.failures}),
    )?;
    for f in &outcome.failures {
        eprintln!("warning: task {} failed: {}", f.task_id, f.message);
    }
    print_json(&json!({
        "trajectories": ds.counts.trajectories,
        "failures": outcome.failures.len(),
        "mean_final_reward": mean_final(&outcome.trajectories),
    }))
}

fn star(cfg: &RunConfig, tasks_path: &Path, d0: &Path, out: &Path, hook: &TrainHook) -> Result<()> {
    let tasks = tasks(tasks_path)?;
    let seg = cfg.segmenter.build()?;
    let policy = cfg.policy.build(&cfg.prompt())?;
    let star_cfg = StarConfig {
        mode: cfg.star_mode,
        iterations: cfg.iterations,
        env: cfg.env()?,
        tau_star: cfg.tau_star,
        retain: cfg.retain,
        seed: cfg.seed,
        jobs: cfg.jobs,
    };
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let outcome = star_iteration(&star_cfg, policy.as_ref(), d0, &tasks, seg.as_ref(), hook, out)?;
    write_json(
        &out.join("manifest.json"),
        &json!({"run": RunHeader::new("star", cfg), "dataset": outcome.dataset, "reports": outcome.reports}),
    )?;
    print_json(&json!({"dataset": outcome.dataset, "reports": outcome.reports}))
}

fn search(cfg: &RunConfig, tasks_path: &Path, out: &Path, masks_out: Option<&Path>) -> Result<()> {
    let tasks = tasks(tasks_path)?;
    let seg = cfg.segmenter.build()?;
    let prompt = cfg.prompt();
    let policy = cfg.policy.build(&prompt)?;
    let prm = cfg.prm.build(&prompt)?;
    let inits = cfg.inits(&tasks)?;
    let results = search_all(
        &tasks,
        &inits,
        policy.as_ref(),
        prm.as_ref(),
        seg.as_ref(),
        &cfg.search(),
        cfg.jobs,
    )?;
    let mut reports = Vec::with_capacity(results.len());
    let (mut best_sum, mut iou_sum) = (0.0, 0.0);
    for (r, t) in results.iter().zip(&tasks) {
        let true_iou = iou(&r.best_mask, &t.target)?;
        best_sum += r.best_reward;
        iou_sum += true_iou;
        let mut v = serde_json::to_value(r.report(&t.id))?;
        v["true_iou"] = json!(true_iou);
        reports.push(v);
        if let Some(dir) = masks_out {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            pnm::write_mask(dir.join(format!("{}.pgm", t.id)), &r.best_mask)?;
        }
    }
    let n = tasks.len() as f64;
    let summary = json!({"tasks": tasks.len(), "mean_best_reward": best_sum / n, "mean_true_iou": iou_sum / n});
    write_json(out, &json!({"run": RunHeader::new("search", cfg), "summary": summary, "results": reports}))?;
    print_json(&summary)
}

/// Sorted `*.pgm` file names in `dir`.
fn pgm_names(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".pgm") {
            names.push(name);
        }
    }
    names.sort();
    Ok(names)
}

fn eval(mut cfg: RunConfig, cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Ciou { pred, gt } => {
            let names = pgm_names(&gt)?;
            if names.is_empty() {
                bail!("no .pgm masks in {}", gt.display());
            }
            let pairs = names
                .iter()
                .map(|n| Ok((pnm::read_mask(pred.join(n))?, pnm::read_mask(gt.join(n))?)))
                .collect::<Result<Vec<(BitMask, BitMask)>>>()?;
            print_json(&json!({"ciou": ciou(&pairs)?}))
        }
        EvalCommand::Noc {
            tasks: tasks_path,
            target_iou,
            cap,
            csv,
        } => {
            cfg.target_iou = target_iou.unwrap_or(cfg.target_iou);
            cfg.noc_cap = cap.unwrap_or(cfg.noc_cap);
            let tasks = tasks(&tasks_path)?;
            let seg = cfg.segmenter.build()?;
            let results = tasks
                .iter()
                .map(|t| noc(t, seg.as_ref(), cfg.target_iou, cfg.noc_cap))
                .collect::<clickseg_core::Result<Vec<_>>>()?;
            let hist = noc_histogram(&results);
            if let Some(path) = csv {
                std::fs::write(&path, histogram_csv(&hist)).with_context(|| format!("writing {}", path.display()))?;
            }
            let reached = results.iter().filter(|r| r.reached).count();
            let mean = results.iter().map(|r| r.clicks as f64).sum::<f64>() / results.len() as f64;
            let per_task: Vec<_> = tasks
                .iter()
                .zip(&results)
                .map(|(t, r)| json!({"task_id": t.id, "clicks": r.clicks, "reached": r.reached}))
                .collect();
            let histogram: Vec<_> = hist
                .iter()
                .map(|(c, f)| json!({"click_count": c, "frequency": f}))
                .collect();
            print_json(&json!({
                "tasks": tasks.len(),
                "target_iou": cfg.target_iou,
                "cap": cfg.noc_cap,
                "mean_clicks": mean,
                "reached": reached,
                "histogram": histogram,
                "per_task": per_task,
            }))
        }
        EvalCommand::Regression { input, scale } => {
            #[derive(serde::Deserialize)]
            struct Input {
                pred: Vec<f64>,
                truth: Vec<f64>,
            }
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let data: Input = serde_json::from_str(&text).with_context(|| format!("parsing {}", input.display()))?;
            let s = |v: &[f64]| v.iter().map(|x| x * scale).collect::<Vec<_>>();
            print_json(&regression_metrics(&s(&data.pred), &s(&data.truth))?)
        }
        EvalCommand::Filter {
            tasks: tasks_path,
            masks,
            fixture,
            max_pos,
            max_neg,
            threshold,
            agents,
        } => {
            agents.apply(&mut cfg)?;
            let tasks = tasks(&tasks_path)?;
            let prm = cfg.prm.build(&cfg.prompt())?;
            let items: Vec<(String, usize, BitMask)> = match (masks, fixture) {
                (Some(dir), None) => {
                    let mut v = Vec::new();
                    for (i, t) in tasks.iter().enumerate() {
                        let p = dir.join(format!("{}.pgm", t.id));
                        if p.exists() {
                            v.push((t.id.clone(), i, pnm::read_mask(&p)?));
                        }
                    }
                    v
                }
                (None, Some(per_task)) => {
                    let seg = cfg.segmenter.build()?;
                    let mut seen = vec![0usize; tasks.len()];
                    filter_fixture(&tasks, seg.as_ref(), per_task, max_pos, max_neg, cfg.seed)?
                        .into_iter()
                        .map(|(i, m)| {
                            seen[i] += 1;
                            (format!("{}#{}", tasks[i].id, seen[i] - 1), i, m)
                        })
                        .collect()
                }
                _ => bail!("give exactly one of --masks or --fixture"),
            };
            if items.is_empty() {
                bail!("no masks to filter");
            }
            let pairs: Vec<(&Task, &BitMask)> = items.iter().map(|(_, i, m)| (&tasks[*i], m)).collect();
            let out = filter_masks(prm.as_ref(), &pairs, threshold)?;
            let truth = pairs
                .iter()
                .map(|(t, m)| iou(m, &t.target))
                .collect::<clickseg_core::Result<Vec<f64>>>()?;
            let ids = |ix: &[usize]| ix.iter().map(|&i| items[i].0.clone()).collect::<Vec<_>>();
            // Correlations are undefined on constant inputs; report null then.
            let regression = regression_metrics_percent(&out.scores, &truth).ok();
            print_json(&json!({
                "threshold": threshold,
                "kept": ids(&out.kept),
                "rejected": ids(&out.rejected),
                "scores": items.iter().zip(&out.scores).map(|((id, _, _), s)| json!({"id": id, "score": s})).collect::<Vec<_>>(),
                "prm_vs_truth": regression,
            }))
        }
    }
}

fn serve_mock(cfg: &RunConfig, tasks_path: &Path, host: &str, port: u16, workers: usize) -> Result<()> {
    let tasks = tasks(tasks_path)?;
    let config = MockConfig {
        mask_color: cfg.mask_color,
        alpha: cfg.alpha,
        coord_format: cfg.coord_format,
        workers,
        ..MockConfig::default()
    };
    let n = tasks.len();
    let server = MockServer::start(tasks, config, &format!("{host}:{port}"))?;
    print_json(&json!({"listening": server.base_url(), "tasks": n}))?;
    server.join();
    Ok(())
}
