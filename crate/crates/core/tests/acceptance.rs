//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process fails if any criterion does.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use clickseg_core::edt::edt_sq;
use clickseg_core::env::{Action, Env, EnvConfig, EpisodeState, InitSpec, Task};
use clickseg_core::eval::{ciou, noc, regression_metrics};
use clickseg_core::expert::next_click;
use clickseg_core::grammar::{format_action, parse_action, CoordFormat};
use clickseg_core::improve::{refine_star_plus, rollout, rollout_one, RetainRule};
use clickseg_core::mask::{bbox, components, iou, BitMask, NormBox, NormPoint, Rgb, ONE_BELOW};
use clickseg_core::pnm;
use clickseg_core::policy::{
    ExpertPolicy, NoiseConfig, NoisyExpertPolicy, OraclePrm, Policy, Prm, RemotePolicy, RemotePrm,
};
use clickseg_core::remote::{MockConfig, MockServer, RemoteEndpoint, RemoteSegmenter};
use clickseg_core::rle::{rle_decode, rle_encode};
use clickseg_core::search::{prm_greedy, SearchConfig, SearchResult};
use clickseg_core::segment::{OracleSegmenter, RegionGrowSegmenter, Segmenter};
use clickseg_core::sft::PromptConfig;
use clickseg_core::synth::synth_tasks;
use clickseg_core::trajectory::{generate_trajectory, read_jsonl_from, replay, write_jsonl_to};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Squared distance from each in-region pixel to the nearest out-of-region
/// position, scanning every pixel plus the out-of-bounds border.
fn brute_depth(m: &BitMask) -> Vec<u64> {
    let (w, h) = m.dims();
    let (wi, hi) = (w as i64, h as i64);
    let mut out = vec![0u64; w * h];
    for y in 0..hi {
        for x in 0..wi {
            if !m.get(x as usize, y as usize) {
                continue;
            }
            // Nearest out-of-bounds cell is straight across the nearest edge.
            let edge = [x + 1, wi - x, y + 1, hi - y].into_iter().min().unwrap();
            let mut best = (edge * edge) as u64;
            for qy in 0..hi {
                for qx in 0..wi {
                    if !m.get(qx as usize, qy as usize) {
                        let d = ((qx - x).pow(2) + (qy - y).pow(2)) as u64;
                        best = best.min(d);
                    }
                }
            }
            out[(y * wi + x) as usize] = best;
        }
    }
    out
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BitMask {
    let p: f64 = rng.gen_range(0.05..0.95);
    BitMask::from_fn(w, h, |_, _| rng.gen_bool(p))
}

fn c1_edt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    for (n, side) in [(500, 16), (100, 32)] {
        for _ in 0..n {
            let m = random_mask(&mut rng, side, side);
            let field = edt_sq(&m);
            ensure(field.values() == brute_depth(&m).as_slice(), || format!("mismatch on {m:?}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} masks exact"))
}

fn c2_fsim() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut ties, mut pos, mut neg) = (0, 0, 0);
    for i in 0..500 {
        let (w, h) = (rng.gen_range(1..=32), rng.gen_range(1..=32));
        let gt = random_mask(&mut rng, w, h);
        let pred = if i % 5 == 0 {
            // Mostly-correct predictions give small, often tied, error regions.
            BitMask::from_fn(w, h, |x, y| gt.get(x, y) != rng.gen_bool(0.05))
        } else {
            random_mask(&mut rng, w, h)
        };
        let fn_r = gt.and_not(&pred).map_err(e2s)?;
        let fp_r = pred.and_not(&gt).map_err(e2s)?;
        let (dfn, dfp) = (brute_depth(&fn_r), brute_depth(&fp_r));
        let (mfn, mfp) = (*dfn.iter().max().unwrap(), *dfp.iter().max().unwrap());
        let got = next_click(&pred, &gt).map_err(e2s)?;
        if fn_r.is_empty() && fp_r.is_empty() {
            ensure(got.is_none(), || format!("pair {i}: click on a perfect mask"))?;
            continue;
        }
        let action = got.ok_or_else(|| format!("pair {i}: no click despite errors"))?;
        let click = action.click().ok_or("expert produced a box")?;
        let (px, py) = click.point.to_pixel(w, h);
        let expect_positive = mfn > mfp;
        if mfn == mfp {
            ties += 1;
        }
        ensure(click.positive == expect_positive, || {
            format!("pair {i}: attribute {} but max fn {mfn} vs fp {mfp}", click.positive)
        })?;
        let (region, depth, max) = if click.positive { (&fn_r, &dfn, mfn) } else { (&fp_r, &dfp, mfp) };
        ensure(region.get(px, py), || format!("pair {i}: click outside its error region"))?;
        ensure(depth[py * w + px] == max, || format!("pair {i}: depth {} < max {max}", depth[py * w + px]))?;
        if click.positive {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    ensure(ties > 0, || "no tie cases exercised".into())?;
    Ok(format!("500 pairs: {pos} positive, {neg} negative, {ties} ties resolved negative"))
}

fn c3_convergence() -> Outcome {
    let tasks = synth_tasks(100, 64, 3).map_err(e2s)?;
    let seg = OracleSegmenter::default();
    let mut worst = 1.0f64;
    for t in &tasks {
        let k = components(&t.target).len();
        ensure((1..=3).contains(&k), || format!("{} has {k} components", t.id))?;
        let traj = generate_trajectory(t, &seg, EnvConfig::simple(), &InitSpec::Empty).map_err(e2s)?;
        ensure(traj.final_reward >= 0.95 && traj.steps.len() <= k, || {
            format!("{}: reward {} in {} steps for {k} components", t.id, traj.final_reward, traj.steps.len())
        })?;
        worst = worst.min(traj.final_reward);
    }
    Ok(format!("100/100 tasks converged, worst final reward {worst:.3}"))
}

fn c4_filtering() -> Outcome {
    let tasks = synth_tasks(60, 64, 4).map_err(e2s)?;
    let segs: [(&str, Box<dyn Segmenter>); 2] = [
        ("oracle", Box::new(OracleSegmenter::default())),
        ("region_grow", Box::new(RegionGrowSegmenter::default())),
    ];
    let cfg = EnvConfig::simple();
    let mut n_traj = 0;
    let mut n_steps = 0;
    for (name, seg) in &segs {
        let mut all = Vec::new();
        for (i, t) in tasks.iter().enumerate() {
            let init = match i % 3 {
                0 => InitSpec::Empty,
                1 => InitSpec::FromBox { bbox: bbox(&t.target).map_err(e2s)? },
                _ => InitSpec::FromRandomClicks { n_pos: 2, n_neg: 1, seed: i as u64 },
            };
            let traj = generate_trajectory(t, seg.as_ref(), cfg, &init).map_err(e2s)?;
            for s in &traj.steps {
                ensure(s.reward_after - s.reward_before >= cfg.tau_diff, || {
                    format!("{name}/{}: step gained {}", t.id, s.reward_after - s.reward_before)
                })?;
                ensure(rle_encode(&rle_decode(&s.mask_after).map_err(e2s)?) == s.mask_after, || {
                    "RLE round trip changed a mask".into()
                })?;
            }
            replay(&traj, t, seg.as_ref(), cfg).map_err(|e| format!("{name}/{}: {e}", t.id))?;
            n_steps += traj.steps.len();
            all.push(traj);
        }
        let mut buf = Vec::new();
        write_jsonl_to(&all, &mut buf).map_err(e2s)?;
        let back = read_jsonl_from(&buf[..], std::path::Path::new("mem")).map_err(e2s)?;
        ensure(back == all, || format!("{name}: JSONL round trip differs"))?;
        n_traj += all.len();
    }
    for t in &tasks {
        let img = pnm::decode_pgm(&pnm::encode_pgm(&t.image)).map_err(e2s)?;
        ensure(img == t.image, || "PGM image round trip".into())?;
        let m = pnm::gray_to_mask(&pnm::decode_pgm(&pnm::encode_pgm(&pnm::mask_to_gray(&t.target))).map_err(e2s)?);
        ensure(m == t.target, || "PGM mask round trip".into())?;
        ensure(rle_decode(&rle_encode(&t.target)).map_err(e2s)? == t.target, || "RLE round trip".into())?;
    }
    Ok(format!("{n_traj} trajectories / {n_steps} steps replayed bit-exactly; JSONL, RLE, PGM exact"))
}

fn noisy_policy() -> NoisyExpertPolicy {
    NoisyExpertPolicy::new(NoiseConfig { sigma: 0.1, flip_prob: 0.2, seed: 2024 }).expect("valid noise")
}

fn c5_star_plus() -> Outcome {
    let tasks = synth_tasks(200, 64, 5).map_err(e2s)?;
    let seg = RegionGrowSegmenter::default();
    let cfg = EnvConfig::simple();
    let policy = noisy_policy();
    let inits = vec![InitSpec::Empty; tasks.len()];
    let out = rollout(&policy, &tasks, &inits, &seg, cfg, 11, 4).map_err(e2s)?;
    ensure(out.failures.is_empty(), || format!("{} rollout failures", out.failures.len()))?;
    let (mut raw, mut refined, mut corrections, mut substituted) = (0.0, 0.0, 0, 0);
    for (traj, task) in out.trajectories.iter().zip(&tasks) {
        let r = refine_star_plus(traj, task, &seg, cfg, RetainRule::StrictPositive).map_err(e2s)?;
        let states = replay(&r.trajectory, task, &seg, cfg).map_err(e2s)?;
        for (i, s) in r.trajectory.steps.iter().enumerate() {
            ensure(s.reward_after > s.reward_before, || format!("{}: step {i} has ΔR <= 0", task.id))?;
            if r.expert_from.is_some_and(|from| i >= from) {
                let expert = next_click(&states[i].mask, &task.target).map_err(e2s)?;
                ensure(expert == Some(s.action), || format!("{}: step {i} is not the expert click", task.id))?;
                substituted += 1;
            }
        }
        corrections += r.corrected as usize;
        raw += traj.final_reward;
        refined += r.trajectory.final_reward;
    }
    let n = tasks.len() as f64;
    let (raw, refined) = (raw / n, refined / n);
    ensure(refined >= raw, || format!("refined mean {refined:.4} < raw mean {raw:.4}"))?;
    Ok(format!(
        "mean final reward raw {raw:.4} -> refined {refined:.4}; {corrections} corrected, {substituted} expert steps"
    ))
}

fn run_search(tasks: &[Task], policy: &dyn Policy, seg: &dyn Segmenter, cfg: &SearchConfig) -> Result<Vec<SearchResult>, String> {
    tasks
        .iter()
        .map(|t| prm_greedy(t, policy, &OraclePrm, seg, cfg, &InitSpec::Empty).map_err(e2s))
        .collect()
}

fn c6_search() -> Outcome {
    let tasks = synth_tasks(200, 64, 6).map_err(e2s)?;
    let seg = RegionGrowSegmenter::default();
    let policy = noisy_policy();
    let iou_of = |rs: &[SearchResult], best: bool| -> Result<f64, String> {
        let mut s = 0.0;
        for (r, t) in rs.iter().zip(&tasks) {
            s += iou(if best { &r.best_mask } else { &r.final_mask }, &t.target).map_err(e2s)?;
        }
        Ok(s / tasks.len() as f64)
    };
    let fixed = run_search(&tasks, &policy, &seg, &SearchConfig::fixed_steps(1, 7))?;
    let k3 = run_search(&tasks, &policy, &seg, &SearchConfig::new(3, 7))?;
    let k1 = run_search(&tasks, &policy, &seg, &SearchConfig::new(1, 7))?;
    let fixed_final = iou_of(&fixed, false)?;
    let k3_best = iou_of(&k3, true)?;
    let k1_best = iou_of(&fixed, true)?;
    let k1_conv = iou_of(&k1, true)?;
    let gain = 100.0 * (k3_best - fixed_final);
    ensure(gain >= 2.0, || format!("K=3 gain {gain:.2} IoU points < 2 ({k3_best:.4} vs {fixed_final:.4})"))?;
    ensure(k1_best >= fixed_final, || format!("best-step {k1_best:.4} < fixed-7 {fixed_final:.4}"))?;
    Ok(format!(
        "fixed-7 K=1 {:.2} | K=1 best-step {:.2} (with convergence stop {:.2}) | K=3 PRM greedy {:.2} (+{gain:.2} pts)",
        100.0 * fixed_final,
        100.0 * k1_best,
        100.0 * k1_conv,
        100.0 * k3_best
    ))
}

fn c7_structure() -> Outcome {
    let tasks = synth_tasks(50, 64, 7).map_err(e2s)?;
    let seg = OracleSegmenter::default();
    // Initial mask already optimal: rectangle targets equal their box raster.
    let mut optimal = 0;
    for t in &tasks {
        let b = bbox(&t.target).map_err(e2s)?;
        let init = InitSpec::FromBox { bbox: b };
        if b.to_raster(t.image.width(), t.image.height()) != t.target {
            continue;
        }
        let r = prm_greedy(t, &ExpertPolicy, &OraclePrm, &seg, &SearchConfig::new(3, 7), &init).map_err(e2s)?;
        ensure(r.best_step == 0 && r.best_mask == t.target && r.best_reward == 1.0, || {
            format!("{}: optimal init not returned", t.id)
        })?;
        optimal += 1;
    }
    ensure(optimal > 0, || "no optimal-init case exercised".into())?;

    // K=1 with a deterministic policy reduces to the greedy rollout.
    let cfg = EnvConfig::simple();
    for t in &tasks {
        let (roll, err) = rollout_one(&ExpertPolicy, t, &seg, cfg, &InitSpec::Empty, 0);
        ensure(err.is_none(), || format!("{}: rollout error", t.id))?;
        let sc = SearchConfig { stop_reward: Some(cfg.tau_stop), ..SearchConfig::new(1, cfg.max_steps) };
        let r = prm_greedy(t, &ExpertPolicy, &OraclePrm, &seg, &sc, &InitSpec::Empty).map_err(e2s)?;
        let roll_actions: Vec<Action> = roll.actions().copied().collect();
        ensure(r.actions == roll_actions, || format!("{}: K=1 actions differ from rollout", t.id))?;
        for (s, st) in roll.steps.iter().zip(&r.trace) {
            ensure(st.candidates[st.chosen].score == s.reward_after, || format!("{}: step reward differs", t.id))?;
        }
        let last = roll.steps.last().map(|s| rle_decode(&s.mask_after).unwrap());
        ensure(last.as_ref().is_none_or(|m| *m == r.final_mask), || format!("{}: final mask differs", t.id))?;
    }

    // Running best is nondecreasing and the returned mask reproduces its score.
    let policy = noisy_policy();
    let rg = RegionGrowSegmenter::default();
    for t in &tasks {
        let r = prm_greedy(t, &policy, &OraclePrm, &rg, &SearchConfig::new(3, 11), &InitSpec::Empty).map_err(e2s)?;
        let bests: Vec<f64> = r.trace.iter().map(|s| s.running_best).collect();
        ensure(bests.windows(2).all(|w| w[0] <= w[1]), || format!("{}: running best decreased", t.id))?;
        let max = r
            .trace
            .iter()
            .map(|s| s.candidates[s.chosen].score)
            .fold(r.initial_reward, f64::max);
        ensure(r.best_reward == max, || format!("{}: best {} != max {max}", t.id, r.best_reward))?;
        ensure(OraclePrm.score(t, &r.best_mask).map_err(e2s)? == r.best_reward, || {
            format!("{}: best mask does not reproduce its score", t.id)
        })?;
    }
    Ok(format!("{optimal} optimal-init cases, 50 K=1 reductions, 50 monotone traces"))
}

fn c8_metrics() -> Outcome {
    let t = [0.12, 0.5, 0.33, 0.91, 0.05];
    let m = regression_metrics(&t, &t).map_err(e2s)?;
    ensure((m.mae, m.mse, m.pearson, m.spearman) == (0.0, 0.0, 1.0, 1.0), || format!("perfect: {m:?}"))?;
    let anti = regression_metrics(&[5.0, 4.0, 3.0, 2.0, 1.0], &[0.1, 0.2, 0.3, 0.4, 0.5]).map_err(e2s)?;
    ensure(anti.spearman == -1.0, || format!("anti-monotone spearman {}", anti.spearman))?;
    let d = regression_metrics(&[10.0, 20.0, 30.0], &[20.0, 40.0, 60.0]).map_err(e2s)?;
    ensure(
        (d.pearson - 1.0).abs() <= 1e-9 && (d.mae - 20.0).abs() <= 1e-9 && (d.mse - 1400.0 / 3.0).abs() <= 1e-9,
        || format!("closed form: {d:?}"),
    )?;

    let a = BitMask::from_fn(4, 4, |x, _| x < 2);
    let e = BitMask::new(4, 4);
    ensure(ciou(&[(a.clone(), a.clone())]).map_err(e2s)? == 1.0, || "ciou identical".into())?;
    ensure(ciou(&[(a.clone(), a.clone()), (e, a.clone())]).map_err(e2s)? == 0.5, || "ciou half".into())?;
    ensure(ciou(&[(BitMask::new(3, 3), a)]).is_err(), || "ciou dims".into())?;

    let tasks = synth_tasks(50, 64, 8).map_err(e2s)?;
    let seg = OracleSegmenter::default();
    for t in &tasks {
        let k = components(&t.target).len();
        let r = noc(t, &seg, 1.0, 20).map_err(e2s)?;
        ensure(r.reached && r.clicks == k, || format!("{}: noc {:?} for {k} components", t.id, r))?;
    }
    Ok("regression fixtures, ciou cases and noc on 50 oracle tasks exact".into())
}

fn c9_grammar() -> Outcome {
    let (_, lit) = parse_action("Positive point: (175,483)", CoordFormat::Integer1000).map_err(e2s)?;
    ensure(lit == Action::positive(0.175, 0.483), || format!("literal parsed to {lit:?}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Coordinates at or above 0.9995 round up to 1000 and are clamped to 999,
    // so their quantization error can reach 0.001; they are tallied apart.
    let clamp_band = 0.9995;
    let (mut max_err, mut max_band_err, mut band) = (0.0f64, 0.0f64, 0);
    let edges = [
        Action::positive(0.0, 0.9995),
        Action::negative(ONE_BELOW, 0.99949),
        Action::Box(NormBox::new(0.0, 0.0, ONE_BELOW, ONE_BELOW).map_err(e2s)?),
    ];
    for fmt in [CoordFormat::Decimal01, CoordFormat::Integer1000] {
        let mut actions = Vec::with_capacity(1000 + edges.len());
        for i in 0..1000 {
            let mut c = || rng.gen_range(0.0..1.0f64);
            actions.push(match i % 3 {
                0 => Action::PositiveClick(NormPoint::clamped(c(), c())),
                1 => Action::NegativeClick(NormPoint::clamped(c(), c())),
                _ => {
                    let (x1, x2, y1, y2) = (c(), c(), c(), c());
                    Action::Box(NormBox::new(x1.min(x2), y1.min(y2), x1.max(x2), y1.max(y2)).map_err(e2s)?)
                }
            });
        }
        actions.extend(edges);
        for action in actions {
            let text = format_action(&action, fmt);
            let (_, back) = parse_action(&text, fmt).map_err(|e| format!("{text:?}: {e}"))?;
            let pairs: Vec<(f64, f64)> = match (action, back) {
                (Action::PositiveClick(a), Action::PositiveClick(b)) | (Action::NegativeClick(a), Action::NegativeClick(b)) => {
                    vec![(a.x, b.x), (a.y, b.y)]
                }
                (Action::Box(a), Action::Box(b)) => vec![(a.x1, b.x1), (a.y1, b.y1), (a.x2, b.x2), (a.y2, b.y2)],
                _ => return Err(format!("{text:?} changed kind or attribute")),
            };
            for (a, b) in pairs {
                let err = (a - b).abs();
                if a >= clamp_band {
                    band += 1;
                    max_band_err = max_band_err.max(err);
                } else {
                    max_err = max_err.max(err);
                }
            }
        }
    }
    ensure(max_err <= 0.0005 + 1e-12, || format!("max quantization error {max_err}"))?;
    ensure(max_band_err <= 0.001 + 1e-12, || format!("clamp band error {max_band_err}"))?;
    Ok(format!(
        "2 x 1000 random actions plus edge cases round-trip; max error {max_err:.6} below {clamp_band}, {band} clamp-band coordinates (max error {max_band_err:.6}); literal ok"
    ))
}

fn mock(tasks: &[Task], config: MockConfig) -> Result<MockServer, String> {
    MockServer::start(tasks.to_vec(), config, "127.0.0.1:0").map_err(e2s)
}

fn c10_ablation() -> Outcome {
    let tasks = synth_tasks(20, 64, 10).map_err(e2s)?;
    let seg = RegionGrowSegmenter::default();
    let colors = [Rgb([0, 255, 0]), Rgb([255, 0, 0]), Rgb([0, 0, 255]), Rgb([255, 255, 0])];
    let mut reference: Option<Vec<(BitMask, f64, Vec<Action>)>> = None;
    for color in colors {
        let server = mock(&tasks, MockConfig { mask_color: color, ..MockConfig::default() })?;
        let ep = RemoteEndpoint::new(server.base_url());
        let prompt = PromptConfig { mask_color: color, ..PromptConfig::default() };
        let policy = RemotePolicy::new(ep.clone(), prompt.clone()).map_err(e2s)?;
        let prm = RemotePrm::new(ep, prompt).map_err(e2s)?;
        let mut outs = Vec::new();
        for t in &tasks {
            let r = prm_greedy(t, &policy, &prm, &seg, &SearchConfig::new(3, 7), &InitSpec::Empty).map_err(e2s)?;
            outs.push((r.best_mask, r.best_reward, r.actions));
        }
        match &reference {
            None => reference = Some(outs),
            Some(r) => ensure(*r == outs, || format!("search output changed under color {color:?}"))?,
        }
    }

    // Coordinate formats: same pipeline, policy text in each format.
    let mut finals = Vec::new();
    for fmt in [CoordFormat::Decimal01, CoordFormat::Integer1000] {
        let server = mock(&tasks, MockConfig { coord_format: fmt, ..MockConfig::default() })?;
        let ep = RemoteEndpoint::new(server.base_url());
        let policy = RemotePolicy::new(ep, PromptConfig { coord_format: fmt, ..PromptConfig::default() }).map_err(e2s)?;
        ensure(policy.rejected() == 0, || "unexpected rejects".into())?;
        let out = rollout(&policy, &tasks, &vec![InitSpec::Empty; tasks.len()], &seg, EnvConfig::simple(), 0, 2)
            .map_err(e2s)?;
        ensure(out.failures.is_empty(), || format!("{:?}", out.failures))?;
        ensure(policy.rejected() == 0, || format!("{} unparseable replies", policy.rejected()))?;
        finals.push(out.trajectories);
    }
    let mut worst: f64 = 0.0;
    for ((a, b), t) in finals[0].iter().zip(&finals[1]).zip(&tasks) {
        let clicks = a.steps.len().max(b.steps.len()).max(1) as f64;
        let bound = clicks / t.target.count() as f64;
        let diff = (a.final_reward - b.final_reward).abs();
        ensure(diff <= bound, || format!("{}: formats differ by {diff} > {bound}", t.id))?;
        worst = worst.max(diff);
    }
    Ok(format!("search bit-identical under 4 mask colors; max cross-format IoU gap {worst:.4}"))
}

fn c11_remote() -> Outcome {
    let tasks = synth_tasks(50, 64, 11).map_err(e2s)?;
    let server = mock(&tasks, MockConfig::default())?;
    let ep = RemoteEndpoint::new(server.base_url());
    let remote_seg = RemoteSegmenter::new(ep.clone(), false).map_err(e2s)?;
    let remote_prm = RemotePrm::new(ep.clone(), PromptConfig::default()).map_err(e2s)?;
    let remote_policy = RemotePolicy::new(ep, PromptConfig::default()).map_err(e2s)?;
    let local = OracleSegmenter::default();
    let cfg = EnvConfig::simple();
    let (mut segments, mut scores, mut worst_prm) = (0, 0, 0.0f64);
    for (i, t) in tasks.iter().enumerate() {
        let init = if i % 2 == 0 {
            InitSpec::Empty
        } else {
            InitSpec::FromRandomClicks { n_pos: 1, n_neg: 1, seed: i as u64 }
        };
        let lt = generate_trajectory(t, &local, cfg, &init).map_err(e2s)?;
        let rt = generate_trajectory(t, &remote_seg, cfg, &init).map_err(e2s)?;
        ensure(lt == rt, || format!("{}: remote trajectory differs from local", t.id))?;
        let env = Env::new(t, &remote_seg, cfg);
        let mut state: EpisodeState = env.reset(&init).map_err(e2s)?;
        segments += 1;
        loop {
            let (clicks, b) = state.segmenter_inputs();
            let want = local.segment(t, &clicks, b).map_err(e2s)?;
            ensure(want == state.mask, || format!("{}: segment differs at step {}", t.id, state.step))?;
            let remote = remote_prm.score(t, &state.mask).map_err(e2s)?;
            let d = (remote - OraclePrm.score(t, &state.mask).map_err(e2s)?).abs();
            worst_prm = worst_prm.max(d);
            scores += 1;
            ensure(d <= 0.005 + 1e-12, || format!("{}: PRM off by {d}", t.id))?;
            if state.step >= cfg.max_steps {
                break;
            }
            let props = remote_policy.propose(t, &state, 2, 0).map_err(e2s)?;
            let expert = ExpertPolicy.propose(t, &state, 1, 0).map_err(e2s)?;
            ensure(props.len() == expert.len(), || format!("{}: remote policy arity", t.id))?;
            let Some(p) = props.first() else { break };
            let (Some(a), Some(b)) = (p.action.click(), expert[0].action.click()) else {
                return Err("non-click expert action".into());
            };
            ensure(a.positive == b.positive && (a.point.x - b.point.x).abs() <= 0.0005 + 1e-12, || {
                format!("{}: remote policy click {a:?} vs expert {b:?}", t.id)
            })?;
            state = env.apply(&state, p.action).map_err(e2s)?;
            segments += 1;
        }
    }
    Ok(format!("50 episodes: {segments} remote segments bit-exact, {scores} PRM scores (max gap {worst_prm:.4})"))
}

type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "EDT exactness", c1_edt, Some(Duration::from_secs(10))),
        (2, "expert click correctness", c2_fsim, Some(Duration::from_secs(10))),
        (3, "expert convergence", c3_convergence, Some(Duration::from_secs(5))),
        (4, "filtering and round-trip invariants", c4_filtering, None),
        (5, "StaR+ refinement", c5_star_plus, Some(Duration::from_secs(60))),
        (6, "search direction", c6_search, Some(Duration::from_secs(120))),
        (7, "search structure", c7_structure, None),
        (8, "metrics", c8_metrics, None),
        (9, "action grammar", c9_grammar, None),
        (10, "ablation harness", c10_ablation, None),
        (11, "remote/mock integration", c11_remote, Some(Duration::from_secs(30))),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {:.1}s, limit {}s", took.as_secs_f64(), l.as_secs())),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let budget = limit.map(|l| format!(" / {}s", l.as_secs())).unwrap_or_default();
        println!("criterion {id:>2} {tag} [{name}] {detail} ({:.2}s{budget})", took.as_secs_f64());
        failed += outcome.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
