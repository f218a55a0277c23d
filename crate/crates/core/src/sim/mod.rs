//! Deterministic 2D arena: kinematics, laser, camera rendering with ground
//! truth labels, DVS synthesis, the closed loop and dataset generation.

mod dataset;
mod dvs;
mod episode;
mod laser;
mod render;
mod world;

pub use dataset::{
    calibrate_thresholds, decoded_bearing, evaluate_frames, load_dataset, make_dataset, ClassBalance, Dataset, DatasetConfig, DatasetError,
    EvalReport, LabeledFrame, Manifest, ManifestEntry,
};
pub use dvs::{synthesize_dvs, DvsModel, DvsSensor};
pub use episode::{
    alpha_from_bearing, bearing_from_alpha, calibrate_kappa, kappa_pairs, oracle_outputs, run_episode,
    start_poses, Detector, DetectorKind, Episode, EpisodeConfig, EpisodeTrace, FrameSource, InferenceRecord,
    LoopConfig, PreyBehavior, RateHistogram, SimError, Snapshot, Summary, TraceRow,
};
pub use laser::{simulate_laser, LaserConfig};
pub use render::{
    apparent_width_px, ground_truth, render_aps, CameraModel, GroundTruth, RenderConfig, Renderer,
    SizeThresholds, PREY_HALF_WIDTH,
};
pub use world::{
    step, wrap_angle, Arena, Pose, RobotState, Role, Segment, World, ARENA_HEIGHT, ARENA_WIDTH,
    MAX_SPEED, MAX_TURN_RATE, ROBOT_HEIGHT, ROBOT_LENGTH, ROBOT_WIDTH,
};
