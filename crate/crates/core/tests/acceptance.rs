//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 7 to 11 train agents for millions of environment steps and only
//! run with `--include-ignored` (or `--ignored`); otherwise they print SKIP.
//! Criterion 12 aligns to the trained image-goal encoder of those runs;
//! without them it reports a proxy measurement against an untrained anchor
//! as SKIP.
//! `ZSEL_ACCEPTANCE_BUDGET=<factor>` scales their budgets for smoke
//! runs, and such lines are marked as reduced. `ZSEL_ACCEPTANCE_DIR` keeps
//! run artifacts in the given directory instead of a temporary one. Bare
//! numbers after `--` select criteria, for example `-- 4 12`.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zsel_core::agents::{goal_input, images_to_tensor, init_parameters, AgentNet, Assembly, HIDDEN_DIM};
use zsel_core::episodes::{build_pair_dataset, build_retrieval_probes, Difficulty, LabelVocab, PairSpec, Task, PROBE_CANDIDATES};
use zsel_core::eval::{
    build_episode_sets, build_worlds, evaluate, run_alignment, run_finetune, run_source_training, run_task_expert, run_zsel, steps_to_reference,
    success_and_spl, two_proportion_z, EvalOptions, EvalReport, ExperimentConfig, PolicyAgent, RandomAgent, TeacherAgent, TransferSet, Z_99,
};
use zsel_core::goalspace::{embed_images, embedding_loss, retrieval_eval, train_goal_encoder, AlignmentConfig};
use zsel_core::render::{GoalDescriptor, Modality, Observation, RenderConfig};
use zsel_core::rltrain::{compute_step_reward, compute_success_reward, EnvConfig, EpisodeResult, RewardConfig};
use zsel_core::worldgen::{generate_floorplan, Cell, DistanceField, FloorPlan, GeneratorParams, GridPos, Pose};
use zsel_nn::gradcheck::{check_params, FdConfig};
use zsel_nn::layers::{ConvNorm, GruCell, Linear, ResidualBlock};
use zsel_nn::{Graph, ParameterSet, Tensor};

type Outcome = Result<(bool, String), String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ------------------------------------------------------------ criterion 1

/// `(d_t, d_prev, alpha_t, alpha_prev, dtg_only, hand value)` with d_s = 1 m,
/// slack 0.01.
const STEP_CASES: [(f64, f64, f64, f64, bool, f64); 12] = [
    (0.5, 0.6, 0.3491, 0.5236, false, 0.2645),
    (2.5, 3.0, 0.1, 2.0, false, 0.49),
    (2.0, 2.0, 1.0, 1.0, false, -0.01),
    (1.0, 1.0, 0.2, 0.7, false, 0.49),
    (1.0000001, 1.2, 0.2, 0.7, false, 0.1899999),
    (0.0, 0.25, 0.0, 0.2617993877991494, false, 0.5017993877991494),
    (0.75, 0.5, 0.5, 0.25, false, -0.51),
    (0.5, 0.6, 0.3491, 0.5236, true, 0.09),
    (1.0, 1.0, 0.2, 0.7, true, -0.01),
    (3.0, 2.75, 0.0, 3.0, false, -0.26),
    (0.9, 1.1, PI, 0.0, false, -2.951592653589793),
    (1.1, 0.9, PI, 0.0, false, -0.21),
];

/// Angle placeholder replaced by the configured alpha_s.
const AT_ALPHA_S: f64 = -1.0;
/// Angle placeholder replaced by the next double above alpha_s.
const ABOVE_ALPHA_S: f64 = -2.0;

/// `(d_t, alpha_t, stopped, dtg_only, hand value)` with base 5.
const SUCCESS_CASES: [(f64, f64, bool, bool, f64); 8] = [
    (0.8, 0.3, true, false, 10.0),
    (0.8, 0.6, true, false, 5.0),
    (1.5, 0.0, true, false, 0.0),
    (0.8, 0.3, false, false, 0.0),
    (1.0, AT_ALPHA_S, true, false, 10.0),
    (1.0, ABOVE_ALPHA_S, true, false, 5.0),
    (1.000000001, 0.0, true, false, 0.0),
    (0.8, 0.6, true, true, 10.0),
];

fn criterion_1() -> Outcome {
    let base = RewardConfig::default();
    if (base.success_angle - 25.0 * PI / 180.0).abs() > 1e-15 || base.success_distance != 1.0 || base.slack != 0.01 || base.success_base != 5.0 {
        return Ok((false, format!("unexpected reward defaults {base:?}")));
    }
    let mut worst: f64 = 0.0;
    for &(d, dp, a, ap, dtg, want) in &STEP_CASES {
        let cfg = RewardConfig { dtg_only: dtg, ..base };
        worst = worst.max((compute_step_reward(d, dp, a, ap, &cfg) - want).abs());
    }
    for &(d, a, stopped, dtg, want) in &SUCCESS_CASES {
        let cfg = RewardConfig { dtg_only: dtg, ..base };
        let a = match a {
            AT_ALPHA_S => base.success_angle,
            ABOVE_ALPHA_S => f64::from_bits(base.success_angle.to_bits() + 1),
            _ => a,
        };
        worst = worst.max((compute_success_reward(d, a, stopped, &cfg) - want).abs());
    }
    Ok((worst <= 1e-9, format!("20 cases, max abs error {worst:.1e} (tol 1e-9)")))
}

// ------------------------------------------------------------ criterion 2

/// Exact (straight, diagonal) move counts from `src` by array-scan Dijkstra.
/// Diagonal moves need both orthogonal neighbours free.
fn dijkstra_counts(plan: &FloorPlan, src: GridPos) -> Vec<Option<(u32, u32)>> {
    let (w, h) = (plan.width(), plan.height());
    let free = |r: i64, c: i64| r >= 0 && c >= 0 && r < h as i64 && c < w as i64 && plan.cell(GridPos::new(r as usize, c as usize)) == Cell::Free;
    let val = |d: (u32, u32)| d.0 as f64 + d.1 as f64 * SQRT_2;
    let mut dist = vec![None; w * h];
    let mut done = vec![false; w * h];
    dist[src.row * w + src.col] = Some((0u32, 0u32));
    loop {
        let mut best: Option<usize> = None;
        for i in 0..w * h {
            if let (false, Some(d)) = (done[i], dist[i]) {
                if best.map_or(true, |b: usize| val(d) < val(dist[b].unwrap())) {
                    best = Some(i);
                }
            }
        }
        let Some(u) = best else { break };
        done[u] = true;
        let (r, c) = ((u / w) as i64, (u % w) as i64);
        let du = dist[u].unwrap();
        for dr in -1..=1i64 {
            for dc in -1..=1i64 {
                if (dr, dc) == (0, 0) || !free(r + dr, c + dc) {
                    continue;
                }
                let diag = dr != 0 && dc != 0;
                if diag && !(free(r + dr, c) && free(r, c + dc)) {
                    continue;
                }
                let nd = if diag { (du.0, du.1 + 1) } else { (du.0 + 1, du.1) };
                let v = (r + dr) as usize * w + (c + dc) as usize;
                if dist[v].map_or(true, |old| val(nd) < val(old) - 1e-9) {
                    dist[v] = Some(nd);
                }
            }
        }
    }
    dist
}

fn center(plan: &FloorPlan, p: GridPos) -> Pose {
    Pose::new((p.col as f64 + 0.5) * plan.cell_size(), (p.row as f64 + 0.5) * plan.cell_size(), 0.0)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut pairs, mut paths) = (0usize, 0usize);
    for i in 0..200u64 {
        let side = rng.gen_range(16..=24);
        let params = GeneratorParams { width: side, height: rng.gen_range(16..=24), room_count: (2, 4), object_count: (1, 3), ..Default::default() };
        let plan = generate_floorplan(50_000 + i, &params).map_err(err)?;
        let free: Vec<GridPos> = plan.free_cells().collect();
        for _ in 0..3 {
            let src = free[rng.gen_range(0..free.len())];
            let truth = dijkstra_counts(&plan, src);
            let field = DistanceField::from_sources(&plan, &[src]).map_err(err)?;
            for &p in &free {
                let got = field.cost(p).map(|c| (c.straight, c.diagonal));
                if got != truth[plan.index(p)] {
                    return Ok((false, format!("plan {i} {src:?} -> {p:?}: {got:?} vs {:?}", truth[plan.index(p)])));
                }
                pairs += 1;
            }
            for _ in 0..5 {
                let dst = free[rng.gen_range(0..free.len())];
                let (a, b) = (center(&plan, dst), center(&plan, src));
                let (s, d) = truth[plan.index(dst)].expect("connected plan");
                let want = (s as f64 + d as f64 * SQRT_2) * plan.cell_size();
                let got = zsel_core::worldgen::geodesic_distance(&plan, &a, &b).map_err(err)?;
                if got != Some(want) {
                    return Ok((false, format!("plan {i}: geodesic {got:?} vs {want}")));
                }
                let path = zsel_core::worldgen::shortest_path(&plan, &a, &b).map_err(err)?;
                let (mut ps, mut pd) = (0u32, 0u32);
                for w in path.windows(2) {
                    match w[0].row.abs_diff(w[1].row) + w[0].col.abs_diff(w[1].col) {
                        1 => ps += 1,
                        2 if w[0].row != w[1].row => pd += 1,
                        _ => return Ok((false, format!("plan {i}: path step {:?} -> {:?}", w[0], w[1]))),
                    }
                }
                if (ps, pd) != (s, d) || path.first() != Some(&dst) || path.last() != Some(&src) {
                    return Ok((false, format!("plan {i}: path counts {:?} vs {:?}", (ps, pd), (s, d))));
                }
                paths += 1;
            }
        }
    }
    Ok((true, format!("200 plans, {pairs} distances and {paths} paths exact")))
}

// ------------------------------------------------------------ criterion 3

const FD_TRIALS: u64 = 50;
const FD_TOL: f64 = 1e-4;

fn perturb(ps: &mut ParameterSet<f64>, rng: &mut ChaCha8Rng, amount: f64) {
    let names: Vec<String> = ps.names().map(str::to_string).collect();
    for n in names {
        for x in ps.value_mut(&n).unwrap().data_mut() {
            *x += rng.gen_range(-amount..amount);
        }
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Worst relative error over `FD_TRIALS` trials of one parameterized function.
fn fd_worst<B, F>(seed: u64, cfg: FdConfig, build: B, f: F) -> Result<f64, String>
where
    B: Fn(&mut ParameterSet<f64>, &mut ChaCha8Rng) -> Tensor<f64>,
    F: Fn(&mut Graph<f64>, &ParameterSet<f64>, &Tensor<f64>) -> zsel_nn::Result<zsel_nn::Var>,
{
    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    for trial in 0..FD_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + trial);
        let mut ps = ParameterSet::new();
        let x = build(&mut ps, &mut rng);
        perturb(&mut ps, &mut rng, 0.1);
        for rep in check_params(&ps, FdConfig { seed: trial, ..cfg }, |g, p| f(g, p, &x)).map_err(err)? {
            worst = worst.max(rep.rel_error);
            checked += rep.checked;
            skipped += rep.skipped;
        }
    }
    if skipped * 10 >= checked {
        return Err(format!("{skipped} of {} coordinates straddle a kink", checked + skipped));
    }
    Ok(worst)
}

fn random_obs(rng: &mut ChaCha8Rng, size: usize) -> Observation {
    Observation { height: size, width: size, fov: PI / 2.0, pixels: (0..size * size * 3).map(|_| rng.gen_range(0.0..1.0)).collect() }
}

/// Both encoders and the policy unrolled for three steps with an episode
/// reset on one row.
fn agent_unroll_worst() -> Result<f64, String> {
    let net = AgentNet::new(Modality::Image);
    let mut worst: f64 = 0.0;
    for trial in 0..FD_TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + trial);
        let mut ps: ParameterSet<f64> = init_parameters(&net, trial).map_err(err)?;
        perturb(&mut ps, &mut rng, 0.05);
        let obs: Vec<Vec<Observation>> = (0..3).map(|_| (0..2).map(|_| random_obs(&mut rng, 16)).collect()).collect();
        let goals: Vec<GoalDescriptor> = (0..2).map(|_| GoalDescriptor::Image(random_obs(&mut rng, 16))).collect();
        let goal_x: Tensor<f64> = goal_input(Modality::Image, &goals.iter().collect::<Vec<_>>()).map_err(err)?;
        let obs_x: Vec<Tensor<f64>> = obs.iter().map(|s| images_to_tensor(&s.iter().collect::<Vec<_>>())).collect::<Result<_, _>>().map_err(err)?;
        let masks = [[1.0, 1.0], [0.0, 1.0], [1.0, 1.0]];
        let cfg = FdConfig { eps: 1e-5, seed: trial, max_coords: 2 };
        let reps = check_params(&ps, cfg, |g, p| {
            let run = |g: &mut Graph<f64>| -> zsel_core::Result<zsel_nn::Var> {
                let gx = g.constant(goal_x.clone());
                let eg = net.goal.forward(g, p, gx)?;
                let policy = net.policy.bind(g, p)?;
                let mut h = vec![g.constant(Tensor::zeros(&[2, HIDDEN_DIM])), g.constant(Tensor::zeros(&[2, HIDDEN_DIM]))];
                let mut outs = Vec::new();
                for (x, m) in obs_x.iter().zip(&masks) {
                    let x = g.constant(x.clone());
                    let eo = net.obs.forward(g, p, x)?;
                    let mask = g.constant(Tensor::new(&[2], m.to_vec())?);
                    let out = policy.step(g, eo, eg, &h, Some(mask))?;
                    let v = g.reshape(out.value, &[2, 1])?;
                    outs.push(g.concat(&[out.logits, v], 1)?);
                    h = out.hidden;
                }
                Ok(g.concat(&outs, 1)?)
            };
            run(g).map_err(|e| zsel_nn::NnError::InvalidArgument { op: "agent", msg: e.to_string() })
        })
        .map_err(err)?;
        for r in reps {
            worst = worst.max(r.rel_error);
        }
    }
    Ok(worst)
}

fn criterion_3() -> Outcome {
    let cfg = FdConfig { max_coords: 16, ..FdConfig::default() };
    let image = |ps: &mut ParameterSet<f64>, r: &mut ChaCha8Rng, init: &dyn Fn(&mut ParameterSet<f64>, &mut ChaCha8Rng)| {
        init(ps, r);
        rand_tensor(r, &[2, 4, 6, 6])
    };
    let conv = ConvNorm::new("c", 4, 3, 2);
    let res = ResidualBlock::new("r", 4);
    let lin = Linear::new("l", 6, 3);
    let gru = GruCell::new("g", 5, 4);
    let mut worst = BTreeMap::new();
    worst.insert(
        "conv_norm",
        fd_worst(100, cfg, |ps, r| image(ps, r, &|ps, r| conv.init(ps, r).unwrap()), |g, ps, x| {
            let b = conv.bind(g, ps)?;
            let x = g.constant(x.clone());
            b.forward(g, x)
        })?,
    );
    worst.insert(
        "residual",
        fd_worst(200, cfg, |ps, r| image(ps, r, &|ps, r| res.init(ps, r).unwrap()), |g, ps, x| {
            let b = res.bind(g, ps)?;
            let x = g.constant(x.clone());
            b.forward(g, x)
        })?,
    );
    worst.insert(
        "linear",
        fd_worst(
            300,
            cfg,
            |ps, r| {
                lin.init(ps, r).unwrap();
                rand_tensor(r, &[4, 6])
            },
            |g, ps, x| {
                let b = lin.bind(g, ps)?;
                let x = g.constant(x.clone());
                b.forward(g, x)
            },
        )?,
    );
    worst.insert(
        "gru_unroll",
        fd_worst(
            400,
            cfg,
            |ps, r| {
                gru.init(ps, r).unwrap();
                // Three 5-wide inputs followed by the initial hidden state.
                rand_tensor(r, &[2, 19])
            },
            |g, ps, x| {
                let b = gru.bind(g, ps)?;
                let all = g.constant(x.clone());
                let mut h = g.slice(all, 1, 15, 4)?;
                let mut outs = Vec::new();
                for t in 0..3 {
                    let xt = g.slice(all, 1, 5 * t, 5)?;
                    h = b.step(g, xt, h)?;
                    outs.push(h);
                }
                g.concat(&outs, 1)
            },
        )?,
    );
    worst.insert("agent_unroll", agent_unroll_worst()?);
    let max = worst.values().cloned().fold(0.0, f64::max);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    Ok((max < FD_TOL, format!("{FD_TRIALS} trials each; {detail} (tol 1e-4)")))
}

// ------------------------------------------------------------ criterion 4

fn criterion_4() -> Outcome {
    let loss = |a: &[f32], b: &[f32], y: i8| embedding_loss(a, b, y).map_err(err);
    let s = (1.0f32 - 0.09).sqrt();
    let fixtures = [
        (loss(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 1)?, 0.0),
        (loss(&[1.0, 0.0], &[0.0, 1.0], -1)?, 0.0),
        (loss(&[1.0, 0.0], &[0.3, s], 1)?, 0.7),
        (loss(&[1.0, -2.0], &[-1.0, 2.0], 1)?, 2.0),
    ];
    let fixture_err = fixtures.iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut scale_err: f64 = 0.0;
    for _ in 0..200 {
        let a: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = if rng.gen_bool(0.5) { 1 } else { -1 };
        let l0 = loss(&a, &b, y)?;
        for c in [0.5f32, 2.0, 10.0] {
            let ac: Vec<f32> = a.iter().map(|v| v * c).collect();
            let bc: Vec<f32> = b.iter().map(|v| v * c).collect();
            scale_err = scale_err.max((loss(&ac, &b, y)? - l0).abs()).max((loss(&a, &bc, y)? - l0).abs());
        }
    }
    // Anchor freeze over a complete alignment run.
    let plans: Vec<FloorPlan> = (0..2).map(|s| generate_floorplan(400 + s, &GeneratorParams { width: 64, height: 64, ..Default::default() })).collect::<Result<_, _>>().map_err(err)?;
    let spec = PairSpec { render: RenderConfig::default().with_resolution(16), ..PairSpec::new(Modality::Edgemap, 96) };
    let ds = build_pair_dataset(&plans, &spec, &mut ChaCha8Rng::seed_from_u64(4)).map_err(err)?;
    let anchor = init_parameters::<f32>(&AgentNet::new(Modality::Image), 4).map_err(err)?;
    let before = anchor.checksum("fg.image.");
    let cfg = AlignmentConfig { max_epochs: 3, patience: 10, batch_size: 16, ..Default::default() };
    let out = train_goal_encoder(&anchor, &ds, None, &cfg).map_err(err)?;
    let frozen = anchor.checksum("fg.image.") == before && out.report.anchor_checksum == before && out.encoder.count("fg.image.") == 0;
    let pass = fixture_err <= 1e-6 && scale_err <= 1e-6 && frozen && out.report.epochs.len() == 3;
    Ok((pass, format!("fixtures err {fixture_err:.1e}, scale err {scale_err:.1e} (tol 1e-6), anchor checksum unchanged over {} epochs: {frozen}", out.report.epochs.len())))
}

// ------------------------------------------------------------ criterion 5

fn fixture_result(id: u64, success: bool, p: f64, l: f64) -> EpisodeResult {
    EpisodeResult {
        episode_id: id,
        task: Task::ImageNav,
        difficulty: Difficulty::Medium,
        success,
        path_length: p,
        shortest_length: l,
        steps: 1,
        stopped: success,
        final_distance: 0.0,
        final_angle: 0.0,
    }
}

fn criterion_5() -> Outcome {
    // Hand values: succ 4/6; spl (1 + 0.5 + 0.25 + 2/2.5) / 6.
    let fixture = [
        fixture_result(0, true, 3.0, 3.0),
        fixture_result(1, true, 4.0, 2.0),
        fixture_result(2, true, 8.0, 2.0),
        fixture_result(3, false, 2.0, 2.0),
        fixture_result(4, true, 2.5, 2.0),
        fixture_result(5, false, 9.0, 1.0),
    ];
    let m = success_and_spl(&fixture).map_err(err)?;
    let fixture_err = (m.succ - 4.0 / 6.0).abs().max((m.spl - 2.55 / 6.0).abs());

    let mut cfg = ExperimentConfig::default();
    cfg.eval_episodes = 200;
    let worlds = build_worlds(&cfg).map_err(err)?;
    let sets = build_episode_sets(&cfg, &worlds).map_err(err)?;
    let opts = EvalOptions { seeds: vec![0], env: EnvConfig { render: RenderConfig::default().with_resolution(16), ..Default::default() }, ..Default::default() };
    let teacher = evaluate(&mut TeacherAgent::new(), &worlds.eval, &sets.eval, &opts).map_err(err)?;
    let policy = Assembly::fresh(Modality::Image, 0).map_err(err)?;
    let sampled = EvalOptions { greedy: false, ..opts.clone() };
    let runs = [
        evaluate(&mut PolicyAgent::new(&policy, false), &worlds.eval, &sets.eval, &sampled).map_err(err)?,
        evaluate(&mut RandomAgent, &worlds.eval, &sets.eval, &opts).map_err(err)?,
        teacher.clone(),
    ];
    let spl_le_succ = runs.iter().flat_map(|r| &r.per_seed).all(|s| s.overall.spl <= s.overall.succ && s.tiers.values().all(|t| t.spl <= t.succ));
    let t = teacher.summary;
    let pass = fixture_err <= 1e-9 && spl_le_succ && t.succ.mean == 1.0 && t.spl.mean == 1.0 && teacher.episodes.len() == 200;
    Ok((
        pass,
        format!(
            "fixture err {fixture_err:.1e} (tol 1e-9); SPL <= Succ on {} runs: {spl_le_succ}; teacher on {} ImageNav episodes: Succ {:.1}% SPL {:.1}%",
            runs.len(),
            teacher.episodes.len(),
            100.0 * t.succ.mean,
            100.0 * t.spl.mean
        ),
    ))
}

// ------------------------------------------------------------ criterion 6

fn criterion_6(root: &Path) -> Outcome {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [("workers", "1"), ("horizon", "16"), ("resolution", "16"), ("train_steps", "800"), ("checkpoint_every", "160"), ("eval_episodes", "12"), ("eval_seeds", "1")] {
        cfg.set(k, v).map_err(err)?;
    }
    let a = root.join("c6_a");
    let b = root.join("c6_b");
    let ra = run_source_training(&cfg, &a).map_err(err)?;
    run_source_training(&cfg, &b).map_err(err)?;
    let mut files = vec![PathBuf::from("final.bin"), PathBuf::from("metrics.jsonl"), PathBuf::from("curve.csv")];
    files.extend(ra.checkpoints.iter().map(|(_, p)| p.strip_prefix(&a).unwrap().to_path_buf()));
    let differing: Vec<String> = files.iter().filter(|f| std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok()).map(|f| f.display().to_string()).collect();
    let pass = ra.logs.len() == 50 && differing.is_empty();
    Ok((pass, format!("{} updates, W=1; {} files compared, differing: {differing:?}", ra.logs.len(), files.len())))
}

// ------------------------------------------------------------ criterion 12

/// Image-goal encoder at its seed initialization with the head bias shifted
/// so the mean embedding over `images` is zero.
fn centered_anchor(seed: u64, images: &[&Observation]) -> Result<ParameterSet<f32>, String> {
    let mut anchor = init_parameters::<f32>(&AgentNet::new(Modality::Image), seed).map_err(err)?;
    let e = embed_images(&anchor, images).map_err(err)?;
    let mut b = anchor.get("fg.image.head.b").expect("image head").clone();
    for (k, v) in b.data_mut().iter_mut().enumerate() {
        *v -= e.iter().map(|r| r[k]).sum::<f32>() / e.len() as f32;
    }
    anchor.set("fg.image.head.b", b);
    Ok(anchor)
}

const EDGEMAP_PAIRS: usize = 16_000;
const LABEL_PAIRS: usize = 2000;
const PROBES: usize = 1000;

/// Aligns edgemap and label encoders to the image-goal encoder of
/// `source`, or to an untrained centered one when `source` is `None`.
/// `scale` shrinks the pair and probe counts for smoke runs.
fn criterion_12(source: Option<&Path>, scale: f64) -> Outcome {
    let count = |n: usize| ((n as f64 * scale) as usize).clamp(8, n);
    let cfg = ExperimentConfig::default();
    let worlds = build_worlds(&cfg).map_err(err)?;
    let train: Vec<FloorPlan> = worlds.train.iter().map(|p| (**p).clone()).collect();
    let held_out: Vec<FloorPlan> = worlds.eval.iter().map(|p| (**p).clone()).collect();
    let render = RenderConfig::default().with_resolution(cfg.resolution);
    let mut rng = ChaCha8Rng::seed_from_u64(12);

    let edge_spec = PairSpec { render: render.clone(), ..PairSpec::new(Modality::Edgemap, count(EDGEMAP_PAIRS)) };
    let edge_ds = build_pair_dataset(&train, &edge_spec, &mut rng).map_err(err)?;
    let edge_probes = build_retrieval_probes(&held_out, &edge_spec, count(PROBES), &mut rng).map_err(err)?;
    let anchor = match source {
        Some(p) => zsel_nn::checkpoint::load_checkpoint::<f32>(p).map_err(err)?,
        None => centered_anchor(12, &edge_ds.entries.iter().take(512).map(|e| &e.image).collect::<Vec<_>>())?,
    };
    let acfg = AlignmentConfig { max_epochs: 12, patience: 5, ..Default::default() };
    let edge = train_goal_encoder(&anchor, &edge_ds, None, &acfg).map_err(err)?;
    let edge_acc = retrieval_eval(&edge.encoder, Modality::Edgemap, &anchor, &edge_probes).map_err(err)?;

    let split = zsel_core::episodes::train_test_instance_split(Modality::Label, &mut rng).ok();
    let label_spec = PairSpec { render, vocab: LabelVocab::Objects, split, ..PairSpec::new(Modality::Label, count(LABEL_PAIRS)) };
    let label_ds = build_pair_dataset(&train, &label_spec, &mut rng).map_err(err)?;
    let label_probes = build_retrieval_probes(&held_out, &label_spec, count(PROBES), &mut rng).map_err(err)?;
    let label = train_goal_encoder(&anchor, &label_ds, None, &AlignmentConfig { max_epochs: 30, ..acfg }).map_err(err)?;
    let label_acc = retrieval_eval(&label.encoder, Modality::Label, &anchor, &label_probes).map_err(err)?;
    let chance = 1.0 / PROBE_CANDIDATES as f64;
    let n = label_probes.len() as f64;
    let z = (label_acc - chance) / (chance * (1.0 - chance) / n).sqrt();

    let pass = edge_acc >= 0.90 && edge_probes.len() >= 1000 && z > Z_99 && label_probes.len() >= 1000;
    Ok((
        pass,
        format!(
            "{} anchor; edgemap top-1 {:.1}% on {} held-out probes (need >= 90%); label {:.1}% on {} probes, z = {z:.2} vs chance {:.1}% (need > {Z_99:.3})",
            if source.is_some() { "trained" } else { "untrained centered" },
            100.0 * edge_acc,
            edge_probes.len(),
            100.0 * label_acc,
            label_probes.len(),
            100.0 * chance
        ),
    ))
}

// ------------------------------------------------------------ criteria 7-11

const SEEDS: [u64; 3] = [0, 1, 2];
const SOURCE_STEPS: u64 = 3_000_000;
const TARGET_STEPS: u64 = 3_000_000;
const ABLATION_STEPS: u64 = 500_000;
const ALIGNMENT_RATE_ANGLE: f64 = 25.0 * PI / 180.0;

/// Shared artifacts of the full-budget criteria.
struct Full {
    root: PathBuf,
    scale: f64,
    sources: BTreeMap<u64, PathBuf>,
    source_reports: BTreeMap<u64, EvalReport>,
    encoders: BTreeMap<(u64, &'static str), PathBuf>,
}

impl Full {
    fn steps(&self, n: u64) -> u64 {
        ((n as f64 * self.scale) as u64).max(512)
    }

    /// Episode and pair counts, scaled with the budget.
    fn count(&self, n: usize) -> usize {
        ((n as f64 * self.scale) as usize).clamp(8, n)
    }

    fn base(&self, seed: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.seed = seed;
        c.eval_episodes = self.count(c.eval_episodes);
        c.pairs = self.count(c.pairs);
        c.probes = self.count(c.probes);
        c
    }

    fn source_config(&self, seed: u64, arm: &str) -> ExperimentConfig {
        let mut c = self.base(seed);
        c.set("arm", arm).unwrap();
        c.train_steps = self.steps(SOURCE_STEPS);
        c.checkpoint_every = c.train_steps / 10;
        c.eval_difficulty = Some(Difficulty::Easy);
        c.eval_episodes = self.count(200);
        c
    }

    /// Full-arm source run of `seed`, trained once and shared.
    fn source(&mut self, seed: u64) -> Result<PathBuf, String> {
        if let Some(p) = self.sources.get(&seed) {
            return Ok(p.clone());
        }
        let out = self.root.join(format!("source_full_{seed}"));
        let run = run_source_training(&self.source_config(seed, "full"), &out).map_err(err)?;
        self.source_reports.insert(seed, run.results.final_eval.expect("final evaluation"));
        let p = out.join("final.bin");
        self.sources.insert(seed, p.clone());
        Ok(p)
    }

    fn target(&self, seed: u64, task: &str, modality: &str) -> ExperimentConfig {
        let mut c = self.base(seed);
        c.set("task", task).unwrap();
        c.set("modality", modality).unwrap();
        c
    }

    /// Goal encoder aligned to the image-goal encoder in `source`.
    fn align(&self, cfg: &ExperimentConfig, source: &Path, tag: &str) -> Result<PathBuf, String> {
        let mut c = cfg.clone();
        c.source = Some(source.to_path_buf());
        c.pairs = self.count(if c.modality == Modality::Edgemap { EDGEMAP_PAIRS } else { LABEL_PAIRS });
        let out = self.root.join(format!("align_{tag}_{}_{}", c.modality.name(), c.seed));
        Ok(run_alignment(&c, &out).map_err(err)?.encoder_path)
    }

    fn encoder(&mut self, seed: u64, task: &'static str, modality: &'static str) -> Result<PathBuf, String> {
        if let Some(p) = self.encoders.get(&(seed, modality)) {
            return Ok(p.clone());
        }
        let source = self.source(seed)?;
        let p = self.align(&self.target(seed, task, modality), &source, "final")?;
        self.encoders.insert((seed, modality), p.clone());
        Ok(p)
    }
}

fn alignment_rate(report: &EvalReport) -> f64 {
    let ok: Vec<&EpisodeResult> = report.episodes.iter().map(|e| &e.result).filter(|r| r.success).collect();
    if ok.is_empty() {
        return 0.0;
    }
    ok.iter().filter(|r| r.final_angle <= ALIGNMENT_RATE_ANGLE).count() as f64 / ok.len() as f64
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn successes(report: &EvalReport) -> (usize, usize) {
    (report.episodes.iter().filter(|e| e.result.success).count(), report.episodes.len())
}

fn criterion_7(f: &mut Full) -> Outcome {
    let (mut succ, mut full_rate, mut dtg_rate) = (Vec::new(), Vec::new(), Vec::new());
    for seed in SEEDS {
        f.source(seed)?;
        let full = &f.source_reports[&seed];
        succ.push(full.summary.succ.mean);
        full_rate.push(alignment_rate(full));
        let dtg = run_source_training(&f.source_config(seed, "dtg"), &f.root.join(format!("source_dtg_{seed}"))).map_err(err)?;
        dtg_rate.push(alignment_rate(dtg.results.final_eval.as_ref().expect("final evaluation")));
    }
    let (s, fr, dr) = (mean(&succ), mean(&full_rate), mean(&dtg_rate));
    Ok((
        s >= 0.60 && dr < fr,
        format!("full-arm Succ {:.1}% (need >= 60%) per seed {succ:.3?}; view alignment rate full {fr:.3} vs dtg {dr:.3} (need dtg < full)", 100.0 * s),
    ))
}

fn criterion_8(f: &mut Full) -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    for (task, modality) in [("objectnav", "label"), ("viewnav", "edgemap")] {
        let (mut zs, mut rs, mut fs) = ((0, 0), (0, 0), (0, 0));
        for seed in SEEDS {
            let mut cfg = f.target(seed, task, modality);
            cfg.eval_episodes = f.count(500);
            cfg.eval_seeds = 1;
            cfg.source = Some(f.source(seed)?);
            cfg.goal_encoder = Some(f.encoder(seed, task, modality)?);
            let z = run_zsel(&cfg, &f.root.join(format!("zsel_{modality}_{seed}"))).map_err(err)?;
            if z.update_count != 0 {
                return Ok((false, format!("ZSEL arm performed {} updates", z.update_count)));
            }
            let fresh_cfg = ExperimentConfig { transfer: TransferSet::NONE, source: None, goal_encoder: None, ..cfg.clone() };
            let fresh = run_zsel(&fresh_cfg, &f.root.join(format!("fresh_{modality}_{seed}"))).map_err(err)?;
            let worlds = build_worlds(&cfg).map_err(err)?;
            let sets = build_episode_sets(&cfg, &worlds).map_err(err)?;
            let opts = zsel_core::eval::eval_options(&cfg);
            let random = evaluate(&mut RandomAgent, &worlds.eval, &sets.eval, &opts).map_err(err)?;
            for (acc, r) in [(&mut zs, z.final_eval.as_ref().unwrap()), (&mut fs, fresh.final_eval.as_ref().unwrap()), (&mut rs, &random)] {
                let (s, n) = successes(r);
                acc.0 += s;
                acc.1 += n;
            }
        }
        let z_random = two_proportion_z(zs.0, zs.1, rs.0, rs.1).map_err(err)?;
        let z_fresh = two_proportion_z(zs.0, zs.1, fs.0, fs.1).map_err(err)?;
        pass &= z_random > Z_99 && z_fresh > Z_99;
        let pct = |x: (usize, usize)| 100.0 * x.0 as f64 / x.1 as f64;
        lines.push(format!(
            "{task}-{modality}: ZSEL {:.1}% vs random {:.1}% (z {z_random:.2}) vs fresh {:.1}% (z {z_fresh:.2})",
            pct(zs),
            pct(rs),
            pct(fs)
        ));
    }
    Ok((pass, format!("{}; update counter 0; need z > {Z_99:.3}", lines.join("; "))))
}

fn criterion_9(f: &mut Full) -> Outcome {
    let mut ratios = Vec::new();
    for seed in SEEDS {
        let mut cfg = f.target(seed, "objectnav", "label");
        cfg.train_steps = f.steps(TARGET_STEPS);
        cfg.eval_every = cfg.train_steps / 20;
        cfg.source = Some(f.source(seed)?);
        cfg.goal_encoder = Some(f.encoder(seed, "objectnav", "label")?);
        let expert = run_task_expert(&cfg, &f.root.join(format!("expert_{seed}"))).map_err(err)?;
        let curve = |c: &[zsel_core::eval::CurvePoint]| c.iter().map(|p| (p.env_steps, p.report.summary.succ.mean)).collect::<Vec<_>>();
        let ec = curve(&expert.curve);
        let best = ec.iter().map(|p| p.1).fold(0.0, f64::max);
        let expert_steps = steps_to_reference(&ec, best).expect("best is reached");
        let tuned = run_finetune(&cfg, &f.root.join(format!("finetune_{seed}"))).map_err(err)?;
        let ratio = match steps_to_reference(&curve(&tuned.curve), best) {
            Some(s) if expert_steps > 0.0 => s / expert_steps,
            Some(_) => 1.0,
            None => f64::INFINITY,
        };
        ratios.push(ratio);
    }
    let mut sorted = ratios.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[1];
    Ok((median <= 0.5, format!("fine-tune/expert steps to the expert's best Succ per seed {ratios:.3?}, median {median:.3} (need <= 0.5)")))
}

fn criterion_10(f: &mut Full) -> Outcome {
    let mut by_arm: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        for (arm, transfer) in [("full", TransferSet::ALL), ("fo_only", TransferSet { fo: true, fg: false, pi: false }), ("none", TransferSet::NONE)] {
            let mut cfg = f.target(seed, "objectnav", "label");
            cfg.train_steps = f.steps(ABLATION_STEPS);
            cfg.transfer = transfer;
            if transfer.fo || transfer.pi {
                cfg.source = Some(f.source(seed)?);
            }
            if transfer.fg {
                cfg.goal_encoder = Some(f.encoder(seed, "objectnav", "label")?);
            }
            let run = run_finetune(&cfg, &f.root.join(format!("ablation_{arm}_{seed}"))).map_err(err)?;
            by_arm.entry(arm).or_default().push(run.results.final_eval.unwrap().summary.succ.mean);
        }
    }
    let (full, fo, none) = (mean(&by_arm["full"]), mean(&by_arm["fo_only"]), mean(&by_arm["none"]));
    Ok((full >= fo && fo >= none && full > none, format!("mean Succ full {full:.3} >= f_O-only {fo:.3} >= none {none:.3}, strict full > none")))
}

fn criterion_11(f: &mut Full) -> Outcome {
    let mut per_ckpt: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for seed in SEEDS {
        f.source(seed)?;
        let dir = f.root.join(format!("source_full_{seed}")).join("checkpoints");
        let mut ckpts: Vec<PathBuf> = std::fs::read_dir(&dir).map_err(err)?.map(|e| e.unwrap().path()).collect();
        ckpts.sort();
        let picked: Vec<&PathBuf> = ckpts.iter().skip(1).step_by(2).collect();
        for (k, ckpt) in picked.into_iter().enumerate() {
            let mut cfg = f.target(seed, "objectnav", "label");
            cfg.source = Some(ckpt.clone());
            cfg.goal_encoder = Some(f.align(&cfg, ckpt, &format!("ckpt{k}"))?);
            let z = run_zsel(&cfg, &f.root.join(format!("scal_{seed}_{k}"))).map_err(err)?;
            per_ckpt.entry(k).or_default().push(z.final_eval.unwrap().summary.succ.mean);
        }
    }
    let curve: Vec<f64> = per_ckpt.values().map(|v| mean(v)).collect();
    let drops: Vec<f64> = curve.windows(2).map(|w| w[0] - w[1]).filter(|d| *d > 0.0).collect();
    let pass = curve.len() >= 4 && (drops.is_empty() || (drops.len() == 1 && drops[0] <= 0.02));
    Ok((pass, format!("ZSEL Succ over {} checkpoints {curve:.3?}; inversions {drops:.3?} (allow one <= 0.02)", curve.len())))
}

// ------------------------------------------------------------ runner

fn report(n: usize, name: &str, outcome: std::thread::Result<Outcome>, secs: f64) -> bool {
    let (tag, detail) = match outcome {
        Ok(Ok((true, d))) => ("PASS", d),
        Ok(Ok((false, d))) => ("FAIL", d),
        Ok(Err(e)) => ("FAIL", format!("error: {e}")),
        Err(p) => ("FAIL", format!("panic: {}", p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())),
    };
    println!("criterion {n:>2} {tag} [{name}] {detail} ({secs:.1} s)");
    tag == "PASS"
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let full = args.iter().any(|a| a == "--include-ignored" || a == "--ignored");
    let scale: f64 = std::env::var("ZSEL_ACCEPTANCE_BUDGET").ok().and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let keep = std::env::var_os("ZSEL_ACCEPTANCE_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let root = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&root).expect("artifact directory");

    // Bare numbers select criteria; no numbers runs all of them.
    let only: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| only.is_empty() || only.contains(&n);
    let mut failed = 0;
    let mut run = |n: usize, name: &str, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(n) {
            return;
        }
        let t = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(&mut *f));
        if !report(n, name, out, t.elapsed().as_secs_f64()) {
            failed += 1;
        }
    };
    run(1, "reward exactness", &mut criterion_1);
    run(2, "geometry oracle", &mut criterion_2);
    run(3, "gradient correctness", &mut criterion_3);
    run(4, "embedding loss", &mut criterion_4);
    run(5, "metric exactness", &mut criterion_5);
    run(6, "determinism", &mut || criterion_6(&root));

    let full_names = ["source-training efficacy", "ZSEL mechanism", "transfer speed", "modular ablation", "scalability"];
    if full {
        let mut f = Full { root: root.join("full"), scale, sources: BTreeMap::new(), source_reports: BTreeMap::new(), encoders: BTreeMap::new() };
        let suffix = if scale < 1.0 { format!(" at reduced budget x{scale}") } else { String::new() };
        let crits: [fn(&mut Full) -> Outcome; 5] = [criterion_7, criterion_8, criterion_9, criterion_10, criterion_11];
        for (i, c) in crits.iter().enumerate() {
            let name = format!("{}{suffix}", full_names[i]);
            run(7 + i, &name, &mut || c(&mut f));
        }
        run(12, &format!("alignment retrieval{suffix}"), &mut || {
            let source = f.source(0)?;
            criterion_12(Some(&source), scale)
        });
    } else {
        for (i, name) in full_names.iter().enumerate().filter(|(i, _)| wanted(7 + i)) {
            println!("criterion {:>2} SKIP [{name}] full training budget; run with --include-ignored", 7 + i);
        }
        // The bar refers to the trained image-goal encoder; without one the
        // proxy measurement is reported but not judged.
        if wanted(12) {
            let t = Instant::now();
            let detail = match catch_unwind(|| criterion_12(None, 1.0)) {
                Ok(Ok((met, d))) => format!("{d}; bar {} by the proxy", if met { "met" } else { "not met" }),
                Ok(Err(e)) => format!("proxy error: {e}"),
                Err(_) => "proxy panicked".to_string(),
            };
            println!(
                "criterion 12 SKIP [alignment retrieval] needs the trained source anchor, run with --include-ignored; {detail} ({:.1} s)",
                t.elapsed().as_secs_f64()
            );
        }
    }

    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: ok");
}
