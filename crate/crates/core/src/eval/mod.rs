//! Metrics, evaluation, experiment configuration and drivers, and
//! trajectory plots.

mod config;
mod drivers;
mod evaluate;
mod metrics;
mod plot;

pub use config::{ExperimentConfig, TransferSet};
pub use drivers::{
    build_alignment_data, build_episode_sets, build_worlds, curve_row, env_config, eval_options, hash_file, instance_split, render_config,
    run_alignment, run_eval, run_finetune, run_source_training, run_task_expert, run_zsel, sample_episode_set, trainer_config, transfer_assembly,
    write_episode_logs, AlignmentRunOutcome, CurvePoint, EpisodeSets, HashedFile, RunResults, TrainingOutcome, Worlds, CURVE_HEADER,
    EVAL_EPISODE_OFFSET, EVAL_PLAN_OFFSET,
};
pub use evaluate::{aggregate, evaluate, Agent, EpisodeLog, EvalOptions, EvalReport, PolicyAgent, RandomAgent, SeedMetrics, Summary, TeacherAgent};
pub use metrics::{mean_std, spl_term, steps_to_reference, success_and_spl, two_proportion_z, MeanStd, SuccSpl, Z_99};
pub use plot::{render_trajectory_plot, trajectory_svg, TrajectoryOverlay, FAILURE_COLOR, PLOT_SCALE, SUCCESS_COLOR};
