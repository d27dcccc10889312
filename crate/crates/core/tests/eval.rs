use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use zsel_core::agents::{assemble, Assembly, ModuleSources};
use zsel_core::episodes::{Difficulty, Task};
use zsel_core::eval::{
    aggregate, build_episode_sets, build_worlds, evaluate, mean_std, render_trajectory_plot, run_alignment, run_finetune, run_source_training,
    run_task_expert, run_zsel, sample_episode_set, spl_term, steps_to_reference, success_and_spl, trajectory_svg, two_proportion_z, EvalOptions,
    ExperimentConfig, PolicyAgent, RandomAgent, TeacherAgent, TrajectoryOverlay, TransferSet, CURVE_HEADER, SUCCESS_COLOR, Z_99,
};
use zsel_core::render::Modality;
use zsel_core::rltrain::{EnvConfig, EpisodeResult};
use zsel_core::worldgen::Pose;
use zsel_core::Error;

fn result(id: u64, success: bool, p: f64, l: f64) -> EpisodeResult {
    EpisodeResult {
        episode_id: id,
        task: Task::ImageNav,
        difficulty: Difficulty::Easy,
        success,
        path_length: p,
        shortest_length: l,
        steps: 10,
        stopped: success,
        final_distance: if success { 0.1 } else { 3.0 },
        final_angle: 0.0,
    }
}

/// Small worlds and short runs for driver tests.
fn small_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    for (k, v) in [
        ("plan_size", "48"),
        ("train_plans", "2"),
        ("eval_plans", "2"),
        ("resolution", "16"),
        ("train_episodes", "8"),
        ("eval_episodes", "6"),
        ("eval_seeds", "1"),
        ("workers", "1"),
        ("horizon", "16"),
        ("train_steps", "64"),
        ("chunk_len", "8"),
        ("ppo_epochs", "1"),
        ("minibatches", "1"),
        ("pairs", "64"),
        ("probes", "12"),
        ("align_epochs", "2"),
        ("align_batch", "16"),
    ] {
        c.set(k, v).unwrap();
    }
    c
}

fn env16() -> EnvConfig {
    EnvConfig { render: zsel_core::render::RenderConfig::default().with_resolution(16), ..Default::default() }
}

// ---------------------------------------------------------------- metrics

#[test]
fn succ_spl_fixture_matches_hand_values() {
    let rs = vec![
        result(0, true, 4.0, 4.0),  // 1.0
        result(1, true, 6.0, 3.0),  // 0.5
        result(2, false, 1.0, 2.0), // 0
        result(3, true, 2.0, 2.5),  // p < l clips to 1.0
        result(4, true, 10.0, 2.0), // 0.2
    ];
    let m = success_and_spl(&rs).unwrap();
    assert_eq!(m.episodes, 5);
    assert!((m.succ - 0.8).abs() < 1e-9);
    assert!((m.spl - (1.0 + 0.5 + 0.0 + 1.0 + 0.2) / 5.0).abs() < 1e-9);
}

#[test]
fn spl_terms_match_single_cases() {
    assert_eq!(spl_term(&result(0, true, 3.0, 3.0)), 1.0);
    assert!((spl_term(&result(0, true, 8.0, 4.0)) - 0.5).abs() < 1e-12);
    assert_eq!(spl_term(&result(0, false, 3.0, 3.0)), 0.0);
    assert_eq!(spl_term(&result(0, false, 100.0, 3.0)), 0.0);
}

#[test]
fn succ_spl_rejects_bad_input() {
    assert!(matches!(success_and_spl(&[]), Err(Error::Empty(_))));
    assert!(matches!(success_and_spl(&[result(0, true, 1.0, 0.0)]), Err(Error::Config(_))));
    assert!(matches!(success_and_spl(&[result(0, true, f64::NAN, 1.0)]), Err(Error::Config(_))));
    assert!(matches!(success_and_spl(&[result(0, true, -1.0, 1.0)]), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn spl_never_exceeds_succ(cases in prop::collection::vec((any::<bool>(), 0.0f64..50.0, 0.01f64..50.0), 1..60)) {
        let rs: Vec<EpisodeResult> = cases.iter().enumerate().map(|(i, &(s, p, l))| result(i as u64, s, p, l)).collect();
        let m = success_and_spl(&rs).unwrap();
        prop_assert!(m.spl <= m.succ + 1e-12);
        prop_assert!((0.0..=1.0).contains(&m.spl));
    }

    #[test]
    fn succ_spl_is_order_independent(cases in prop::collection::vec((any::<bool>(), 0.0f64..50.0, 0.01f64..50.0), 1..40), rot in 0usize..40) {
        let rs: Vec<EpisodeResult> = cases.iter().enumerate().map(|(i, &(s, p, l))| result(i as u64, s, p, l)).collect();
        let mut shuffled = rs.clone();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        prop_assert_eq!(success_and_spl(&rs).unwrap(), success_and_spl(&shuffled).unwrap());
    }
}

#[test]
fn mean_std_uses_sample_deviation() {
    let m = mean_std(&[0.2, 0.4, 0.6]).unwrap();
    assert!((m.mean - 0.4).abs() < 1e-12);
    assert!((m.std - 0.2).abs() < 1e-12);
    assert_eq!(mean_std(&[0.7]).unwrap().std, 0.0);
    assert!(mean_std(&[]).is_err());
}

#[test]
fn steps_to_reference_interpolates() {
    let curve = [(0u64, 0.0), (100, 0.2), (200, 0.6), (300, 0.9)];
    assert!((steps_to_reference(&curve, 0.4).unwrap() - 150.0).abs() < 1e-9);
    assert_eq!(steps_to_reference(&curve, 0.6), Some(200.0));
    assert_eq!(steps_to_reference(&curve, 0.0), Some(0.0));
    assert_eq!(steps_to_reference(&curve, 0.95), None);
    // First crossing counts even if the curve dips later.
    let bumpy = [(0u64, 0.1), (10, 0.5), (20, 0.3), (30, 0.8)];
    assert!((steps_to_reference(&bumpy, 0.3).unwrap() - 5.0).abs() < 1e-9);
}

#[test]
fn two_proportion_z_matches_hand_value() {
    // pa = 0.6, pb = 0.4, pooled 0.5, se = sqrt(0.25 * 2 / 100) = 0.0707107.
    let z = two_proportion_z(60, 100, 40, 100).unwrap();
    assert!((z - 0.2 / (0.005f64).sqrt()).abs() < 1e-9);
    assert!(z > Z_99);
    assert!(two_proportion_z(50, 100, 45, 100).unwrap() < Z_99);
    assert!(two_proportion_z(1, 0, 0, 10).is_err());
}

#[test]
fn aggregate_recomputes_from_logs() {
    let cfg = small_config();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    let opts = EvalOptions { seeds: vec![3, 4], env: env16(), lanes: 4, ..Default::default() };
    let report = evaluate(&mut RandomAgent, &worlds.eval, &sets.eval, &opts).unwrap();
    assert_eq!(report.episodes.len(), 2 * sets.eval.len());
    for s in &report.per_seed {
        let rs: Vec<EpisodeResult> = report.episodes.iter().filter(|e| e.seed == s.seed).map(|e| e.result.clone()).collect();
        let n = rs.len() as f64;
        let succ = rs.iter().filter(|r| r.success).count() as f64 / n;
        let spl = rs.iter().map(|r| if r.success { r.shortest_length / r.path_length.max(r.shortest_length) } else { 0.0 }).sum::<f64>() / n;
        assert!((s.overall.succ - succ).abs() < 1e-9);
        assert!((s.overall.spl - spl).abs() < 1e-9);
        assert!(s.overall.spl <= s.overall.succ);
    }
    let again = aggregate(report.greedy, &opts.seeds, report.episodes.iter().rev().cloned().collect()).unwrap();
    assert_eq!(again, report);
}

// ---------------------------------------------------------------- evaluation

#[test]
fn teacher_scores_perfectly_on_imagenav() {
    let mut cfg = small_config();
    cfg.set("eval_episodes", "60").unwrap();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    let opts = EvalOptions { seeds: vec![0, 1], env: env16(), ..Default::default() };
    let report = evaluate(&mut TeacherAgent::new(), &worlds.eval, &sets.eval, &opts).unwrap();
    assert_eq!(report.summary.succ.mean, 1.0);
    assert_eq!(report.summary.spl.mean, 1.0);
    assert_eq!(report.summary.succ.std, 0.0);
    assert_eq!(report.summary.spl.std, 0.0);
    assert_eq!(report.tiers.len(), 3);
}

#[test]
fn random_agent_rarely_succeeds_on_hard_tier() {
    let mut cfg = small_config();
    cfg.set("plan_size", "128").unwrap();
    cfg.set("eval_plans", "4").unwrap();
    cfg.set("eval_episodes", "500").unwrap();
    cfg.set("eval_difficulty", "hard").unwrap();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    assert!(sets.eval.iter().all(|e| e.difficulty == Difficulty::Hard));
    let opts = EvalOptions { seeds: vec![0], env: env16(), ..Default::default() };
    let report = evaluate(&mut RandomAgent, &worlds.eval, &sets.eval, &opts).unwrap();
    assert!(report.summary.succ.mean < 0.05, "random succ {}", report.summary.succ.mean);
}

#[test]
fn evaluation_is_deterministic_and_lane_independent() {
    let cfg = small_config();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    let assembly = Assembly::fresh(Modality::Image, 5).unwrap();
    let run = |lanes: usize, greedy: bool| {
        let opts = EvalOptions { seeds: vec![0, 1], greedy, env: env16(), lanes, keep_trajectories: true };
        evaluate(&mut PolicyAgent::new(&assembly, greedy), &worlds.eval, &sets.eval, &opts).unwrap()
    };
    assert_eq!(run(4, true), run(4, true));
    assert_eq!(run(4, false), run(4, false));
    assert_eq!(run(1, false), run(5, false));
}

#[test]
fn evaluation_rejects_mismatched_inputs() {
    let cfg = small_config();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    let opts = EvalOptions { env: env16(), ..Default::default() };
    let label = Assembly::fresh(Modality::Label, 0).unwrap();
    assert!(matches!(evaluate(&mut PolicyAgent::new(&label, true), &worlds.eval, &sets.eval, &opts), Err(Error::ModalityMismatch { .. })));
    assert!(matches!(evaluate(&mut RandomAgent, &worlds.train, &sets.eval, &opts), Err(Error::MissingArtifact(_))));
    let mut dup = sets.eval.clone();
    dup.push(dup[0].clone());
    assert!(matches!(evaluate(&mut RandomAgent, &worlds.eval, &dup, &opts), Err(Error::Config(_))));
    assert!(matches!(evaluate(&mut RandomAgent, &worlds.eval, &[], &opts), Err(Error::Empty(_))));
}

#[test]
fn episode_sets_follow_configuration() {
    let mut cfg = small_config();
    cfg.set("task", "objectnav").unwrap();
    cfg.set("modality", "sketch").unwrap();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    assert_eq!(sets.train.len(), cfg.train_episodes * cfg.train_plans);
    assert_eq!(sets.eval.len(), cfg.eval_episodes);
    let ids: BTreeSet<u64> = sets.train.iter().chain(&sets.eval).map(|e| e.id).collect();
    assert_eq!(ids.len(), sets.train.len() + sets.eval.len());
    let train_plans: BTreeSet<u64> = worlds.train.iter().map(|p| p.seed()).collect();
    let eval_plans: BTreeSet<u64> = worlds.eval.iter().map(|p| p.seed()).collect();
    assert!(train_plans.is_disjoint(&eval_plans));
    assert!(sets.train.iter().all(|e| train_plans.contains(&e.plan_id) && e.modality() == Modality::Sketch));
    assert!(sets.eval.iter().all(|e| eval_plans.contains(&e.plan_id)));
    // Sketch variants used for evaluation never appear in training.
    let train_seeds: BTreeSet<u64> = sets.train.iter().filter_map(|e| e.goal_seed).collect();
    assert!(sets.eval.iter().filter_map(|e| e.goal_seed).all(|s| !train_seeds.contains(&s)));
    // The run seed does not change the sets.
    let mut other = cfg.clone();
    other.seed = 99;
    let again = build_episode_sets(&other, &build_worlds(&other).unwrap()).unwrap();
    assert_eq!(again.eval, sets.eval);
    assert!(matches!(sample_episode_set(&[], &cfg, 1, None, 0, None, &mut ChaCha8Rng::seed_from_u64(0)), Err(Error::Empty(_))));
}

// ---------------------------------------------------------------- config

#[test]
fn config_echo_roundtrips() {
    let mut cfg = small_config();
    cfg.set("task", "viewnav").unwrap();
    cfg.set("modality", "edgemap").unwrap();
    cfg.set("transfer", "fo,pi").unwrap();
    cfg.set("freeze", "fg").unwrap();
    cfg.set("reference_succ", "0.4").unwrap();
    cfg.set("source", "/tmp/src.bin").unwrap();
    cfg.set("eval_difficulty", "easy").unwrap();
    cfg.set("arm", "dtg").unwrap();
    let echo = cfg.echo();
    assert_eq!(echo.lines().count(), ExperimentConfig::KEYS.len());
    assert_eq!(ExperimentConfig::parse_text(&echo).unwrap(), cfg);
    for k in ExperimentConfig::KEYS {
        let v = cfg.get(k).unwrap();
        let mut c = ExperimentConfig::default();
        c.apply_text(&echo).unwrap();
        c.set(k, &v).unwrap();
        assert_eq!(c, cfg, "key {k}");
    }
}

#[test]
fn config_text_parses_comments_and_reports_lines() {
    let text = "# header\nseed = 7 # trailing\n\n  task = objectnav\nmodality=label\n";
    let cfg = ExperimentConfig::parse_text(text).unwrap();
    assert_eq!((cfg.seed, cfg.task, cfg.modality), (7, Task::ObjectNav, Modality::Label));
    assert!(matches!(ExperimentConfig::parse_text("seed = 1\nbogus = 2\n"), Err(Error::Parse { line: 2, .. })));
    assert!(matches!(ExperimentConfig::parse_text("seed 1\n"), Err(Error::Parse { line: 1, .. })));
    assert!(matches!(ExperimentConfig::parse_text("seed = x\n"), Err(Error::Parse { line: 1, .. })));
}

#[test]
fn config_validation_catches_bad_values() {
    let mut cfg = ExperimentConfig::default();
    cfg.validate().unwrap();
    cfg.task = Task::RoomNav;
    cfg.modality = Modality::Edgemap;
    assert!(matches!(cfg.validate(), Err(Error::ModalityMismatch { .. })));
    let mut cfg = ExperimentConfig::default();
    cfg.resolution = 8;
    assert!(cfg.validate().is_err());
    let mut cfg = ExperimentConfig::default();
    cfg.reference_succ = Some(1.5);
    assert!(cfg.validate().is_err());
    let mut cfg = ExperimentConfig::default();
    cfg.set("task", "roomnav").unwrap();
    assert_eq!(cfg.modality, Modality::Label);
    cfg.validate().unwrap();
}

#[test]
fn transfer_sets_parse() {
    assert_eq!("all".parse::<TransferSet>().unwrap(), TransferSet::ALL);
    assert_eq!("none".parse::<TransferSet>().unwrap(), TransferSet::NONE);
    let t: TransferSet = "pi,fo".parse().unwrap();
    assert!(t.fo && t.pi && !t.fg);
    assert_eq!(t.to_string().parse::<TransferSet>().unwrap(), t);
    assert!("fo,xx".parse::<TransferSet>().is_err());
}

// ---------------------------------------------------------------- plots

fn svg_elements(svg: &str) -> BTreeSet<String> {
    svg.split('<')
        .skip(1)
        .filter(|t| !t.starts_with('/'))
        .map(|t| t.split(|c: char| c.is_whitespace() || c == '>' || c == '/').next().unwrap().to_string())
        .collect()
}

#[test]
fn svg_uses_declared_elements_only() {
    let cfg = small_config();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    let opts = EvalOptions { seeds: vec![0], env: env16(), keep_trajectories: true, ..Default::default() };
    let report = evaluate(&mut TeacherAgent::new(), &worlds.eval, &sets.eval, &opts).unwrap();
    let log = &report.episodes[0];
    let ep = sets.eval.iter().find(|e| e.id == log.result.episode_id).unwrap();
    let plan = worlds.eval.iter().find(|p| p.seed() == ep.plan_id).unwrap();
    let traj = log.trajectory.as_ref().unwrap();
    let overlay = TrajectoryOverlay { episode: Some(ep), trajectory: traj, success: log.result.success, success_radius: ep.success_radius };
    let svg = trajectory_svg(plan, &overlay).unwrap();
    let allowed: BTreeSet<String> = ["svg", "rect", "line", "polyline", "circle", "path"].iter().map(|s| s.to_string()).collect();
    let found = svg_elements(&svg);
    assert!(found.is_subset(&allowed), "{found:?}");
    assert!(found.contains("polyline") && found.contains("path"));
    assert_eq!(svg.matches("<svg").count(), 1);
    assert!(svg.trim_end().ends_with("</svg>"));
}

#[test]
fn empty_trajectory_draws_plan_only() {
    let cfg = small_config();
    let worlds = build_worlds(&cfg).unwrap();
    let plan = &worlds.eval[0];
    let svg = trajectory_svg(plan, &TrajectoryOverlay { episode: None, trajectory: &[], success: false, success_radius: 1.0 }).unwrap();
    assert!(!svg.contains("<polyline"));
    assert!(!svg.contains(SUCCESS_COLOR));
    assert_eq!(svg.matches("<circle").count(), plan.objects().len());
    let bad = [Pose::new(-5.0, -5.0, 0.0)];
    assert!(trajectory_svg(plan, &TrajectoryOverlay { episode: None, trajectory: &bad, success: false, success_radius: 1.0 }).is_err());
}

/// Parses `cx`, `cy` of the circle filled with `color`.
fn marker_center(svg: &str, color: &str) -> (f64, f64) {
    let line = svg.lines().find(|l| l.starts_with("<circle") && l.contains(&format!("fill=\"{color}\""))).expect("marker");
    let attr = |name: &str| -> f64 {
        let s = line.split(&format!(" {name}=\"")).nth(1).unwrap();
        s[..s.find('"').unwrap()].parse().unwrap()
    };
    (attr("cx"), attr("cy"))
}

#[test]
fn success_marker_is_green_and_inside_success_circle() {
    let cfg = small_config();
    let worlds = build_worlds(&cfg).unwrap();
    let sets = build_episode_sets(&cfg, &worlds).unwrap();
    let opts = EvalOptions { seeds: vec![0], env: env16(), keep_trajectories: true, ..Default::default() };
    let report = evaluate(&mut TeacherAgent::new(), &worlds.eval, &sets.eval, &opts).unwrap();
    let log = report.episodes.iter().find(|e| e.result.success).unwrap();
    let ep = sets.eval.iter().find(|e| e.id == log.result.episode_id).unwrap();
    let plan = worlds.eval.iter().find(|p| p.seed() == ep.plan_id).unwrap();
    let radius = ep.success_radius;
    let overlay = TrajectoryOverlay { episode: Some(ep), trajectory: log.trajectory.as_ref().unwrap(), success: true, success_radius: radius };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plot.svg");
    render_trajectory_plot(plan, &overlay, &path).unwrap();
    let svg = std::fs::read_to_string(&path).unwrap();
    let (sx, sy) = marker_center(&svg, SUCCESS_COLOR);
    let (gx, gy) = marker_center(&svg, "#2b83ba");
    let dist_m = ((sx - gx).powi(2) + (sy - gy).powi(2)).sqrt() / zsel_core::eval::PLOT_SCALE;
    assert!(dist_m <= radius + 0.01, "stop {dist_m} m from goal");
}

// ---------------------------------------------------------------- drivers

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn source_training_writes_checkpoints_at_cadence() {
    let mut cfg = small_config();
    cfg.set("train_steps", "160").unwrap();
    cfg.set("checkpoint_every", "16").unwrap();
    cfg.set("eval_every", "80").unwrap();
    cfg.set("reference_succ", "0.0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let out = run_source_training(&cfg, dir.path()).unwrap();
    assert_eq!(out.checkpoints.len(), 10);
    let ckpts: Vec<_> = std::fs::read_dir(dir.path().join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 10);
    for (steps, path) in &out.checkpoints {
        let ps = zsel_nn::checkpoint::decode::<f32>(&read(path)).unwrap();
        assert_eq!(ps.step(), steps / 16);
        assert_eq!(assemble(&ModuleSources::all(path), Modality::Image, None).unwrap().update_count(), 0);
    }
    assert_eq!(out.logs.len(), 10);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 10);
    assert_eq!(std::fs::read_to_string(dir.path().join("timing.jsonl")).unwrap().lines().count(), 10);
    let curve = std::fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let rows: Vec<&str> = curve.lines().collect();
    assert_eq!(rows[0], CURVE_HEADER);
    assert_eq!(rows.len(), 1 + 3, "evaluations at 0, 80 and 160 steps");
    assert!(rows[1..].iter().all(|r| r.split(',').count() == CURVE_HEADER.split(',').count()));
    let echo = std::fs::read_to_string(dir.path().join("config.echo")).unwrap();
    assert_eq!(ExperimentConfig::parse_text(&echo).unwrap(), cfg);
    let results: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("results.json"))).unwrap();
    assert_eq!(results["config"]["seed"], 0);
    assert_eq!(results["outputs"].as_array().unwrap().len(), 11);
    assert_eq!(results["steps_to_reference"], 0.0);
    assert_eq!(out.results.env_steps, 160);
}

#[test]
fn source_training_is_deterministic() {
    let cfg = small_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_source_training(&cfg, a.path()).unwrap();
    run_source_training(&cfg, b.path()).unwrap();
    for f in ["final.bin", "metrics.jsonl", "curve.csv", "config.echo"] {
        assert_eq!(read(&a.path().join(f)), read(&b.path().join(f)), "{f}");
    }
    let mut other = cfg.clone();
    other.seed = 1;
    let c = tempfile::tempdir().unwrap();
    run_source_training(&other, c.path()).unwrap();
    assert_ne!(read(&a.path().join("final.bin")), read(&c.path().join("final.bin")));
}

#[test]
fn source_training_requires_imagenav() {
    let mut cfg = small_config();
    cfg.set("task", "objectnav").unwrap();
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_source_training(&cfg, dir.path()), Err(Error::Config(_))));
}

#[test]
fn transfer_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let src_dir = dir.path().join("source");
    run_source_training(&small_config(), &src_dir).unwrap();
    let source = src_dir.join("final.bin");

    let mut cfg = small_config();
    cfg.set("task", "objectnav").unwrap();
    cfg.set("modality", "label").unwrap();

    // Missing artifacts name the missing key.
    let err = run_zsel(&cfg, &dir.path().join("zsel0")).unwrap_err();
    assert!(matches!(&err, Error::MissingArtifact(m) if m.contains("source")), "{err}");
    cfg.source = Some(source.clone());
    let err = run_zsel(&cfg, &dir.path().join("zsel1")).unwrap_err();
    assert!(matches!(&err, Error::MissingArtifact(m) if m.contains("goal_encoder")), "{err}");

    let align = run_alignment(&cfg, &dir.path().join("align")).unwrap();
    assert!(dir.path().join("align/alignment.json").exists());
    assert_eq!(align.results.inputs[0].sha1, zsel_core::util::git_blob_hash(&read(&source)));
    cfg.goal_encoder = Some(align.encoder_path.clone());

    let zsel = run_zsel(&cfg, &dir.path().join("zsel")).unwrap();
    assert_eq!(zsel.update_count, 0);
    assert_eq!(zsel.inputs.len(), 2);
    assert!(zsel.final_eval.as_ref().unwrap().summary.spl.mean <= zsel.final_eval.as_ref().unwrap().summary.succ.mean);
    let eps = std::fs::read_to_string(dir.path().join("zsel/episodes.jsonl")).unwrap();
    assert_eq!(eps.lines().count(), cfg.eval_episodes * cfg.eval_seeds);

    let mut ft = cfg.clone();
    ft.set("freeze", "fg").unwrap();
    let tuned = run_finetune(&ft, &dir.path().join("ft")).unwrap();
    let enc = zsel_nn::checkpoint::decode::<f32>(&read(&align.encoder_path)).unwrap();
    let prefix = zsel_core::agents::goal_prefix(Modality::Label);
    assert_eq!(tuned.assembly.params.checksum(&prefix), enc.checksum(&prefix));
    assert!(tuned.assembly.update_count() > 0);

    let expert = run_task_expert(&cfg, &dir.path().join("expert")).unwrap();
    assert!(expert.results.inputs.is_empty());
    assert_eq!(expert.results.config.transfer, TransferSet::NONE);

    // Ablation arm: observation encoder only; the goal encoder is fresh.
    let mut fo_only = cfg.clone();
    fo_only.set("transfer", "fo").unwrap();
    fo_only.goal_encoder = None;
    let fo = run_zsel(&fo_only, &dir.path().join("fo")).unwrap();
    assert_eq!(fo.inputs.len(), 1);
}

#[test]
fn alignment_rejects_image_modality() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_alignment(&small_config(), dir.path()), Err(Error::Config(_))));
}

#[test]
fn worlds_depend_on_world_seed_only() {
    let cfg = small_config();
    let a = build_worlds(&cfg).unwrap();
    let mut other = cfg.clone();
    other.seed = 17;
    let b = build_worlds(&other).unwrap();
    let text = |v: &[Arc<zsel_core::worldgen::FloorPlan>]| v.iter().map(|p| p.to_text().unwrap()).collect::<Vec<_>>();
    assert_eq!(text(&a.train), text(&b.train));
    other.world_seed += 1;
    assert_ne!(text(&a.train), text(&build_worlds(&other).unwrap().train));
}
