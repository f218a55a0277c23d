use std::collections::VecDeque;
use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dvs::{DvsModel, DvsSensor};
use super::laser::{simulate_laser, LaserConfig};
use super::render::{GroundTruth, RenderConfig, Renderer};
use super::world::{step, wrap_angle, Arena, Pose, Role, World};
use crate::classes::{ClassOutputs, Label, NUM_CLASSES};
use crate::control::{fsm_step, ApfParams, FsmState, LaserScan, Mode, VelocityCommand};
use crate::events::{
    normalize_histogram, subsample_aps, BackgroundFilter, FilterConfig, HistAccumulator,
    HistConfig,
};
use crate::net::Network;
use crate::steering::{
    analog_position, encode_position, PositionVector, SteeringOutput, SteeringParams, SteeringState, FOV_SCALE,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PreyBehavior {
    Static,
    /// Constant speed on a circle of the given radius (counter-clockwise).
    Circling { radius: f64, speed: f64 },
    /// Runs away from the predator while steering clear of walls.
    Evading { speed: f64 },
    /// Driven by external commands.
    Teleop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    /// Ground-truth softmax plus Gaussian noise.
    Oracle,
    /// A trained network.
    Net,
}

/// Rate and latency semantics of the data-driven loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    /// Events per DVS histogram frame.
    pub n_target: usize,
    /// Minimum spacing of inference invocations, microseconds.
    pub min_interval_us: u64,
    /// Modeled inference latency, microseconds.
    pub latency_us: u64,
    pub aps_rate_hz: f64,
    /// Skip APS frames while the event rate is below this (keps); None
    /// keeps APS on.
    pub aps_off_keps: Option<f64>,
    /// Window for the event rate used by the APS-off policy, microseconds.
    pub event_rate_window_us: u64,
    /// Window for reported frame rates, microseconds.
    pub rate_window_us: u64,
    pub dt_us: u64,
    /// Camera render and DVS integration period, microseconds.
    pub render_period_us: u64,
    pub use_dvs: bool,
    pub use_aps: bool,
    /// Background-activity filter on the synthesized stream.
    pub filter: Option<FilterConfig>,
    /// Record every n-th tick in the trace.
    pub trace_every: u32,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            n_target: 5000,
            min_interval_us: 2000,
            latency_us: 2000,
            aps_rate_hz: 15.0,
            aps_off_keps: None,
            event_rate_window_us: 100_000,
            rate_window_us: 1_000_000,
            dt_us: 1000,
            render_period_us: 5000,
            use_dvs: true,
            use_aps: true,
            filter: Some(FilterConfig::default()),
            trace_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub seed: u64,
    pub duration_s: f64,
    pub arena: Arena,
    pub predator_start: Option<Pose>,
    pub prey_start: Option<Pose>,
    pub prey: PreyBehavior,
    pub detector: DetectorKind,
    /// Noise on the oracle's outputs.
    pub oracle_sigma: f64,
    /// Drive the predator with the controller; otherwise it stays put.
    pub predator_active: bool,
    pub stop_on_capture: bool,
    #[serde(rename = "loop")]
    pub loop_config: LoopConfig,
    pub render: RenderConfig,
    pub dvs: DvsModel,
    pub laser: LaserConfig,
    pub steering: SteeringParams,
    pub control: ApfParams,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration_s: 60.0,
            arena: Arena::default(),
            predator_start: None,
            prey_start: None,
            prey: PreyBehavior::Evading { speed: 0.7 },
            detector: DetectorKind::Oracle,
            oracle_sigma: 0.05,
            predator_active: true,
            stop_on_capture: true,
            loop_config: LoopConfig::default(),
            render: RenderConfig::default(),
            dvs: DvsModel::default(),
            laser: LaserConfig::default(),
            steering: SteeringParams::default(),
            control: ApfParams::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        let l = &self.loop_config;
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration_s));
        }
        if l.dt_us == 0 || l.dt_us > 50_000 {
            return bad(format!("dt {} us outside (0, 50 ms]", l.dt_us));
        }
        if l.min_interval_us == 0 {
            return bad("min inference interval must be positive".into());
        }
        if l.render_period_us < l.dt_us || l.render_period_us % l.dt_us != 0 {
            return bad("render period must be a multiple of dt".into());
        }
        if l.n_target == 0 || l.trace_every == 0 {
            return bad("n_target and trace_every must be positive".into());
        }
        if !(l.aps_rate_hz > 0.0) {
            return bad("APS rate must be positive".into());
        }
        if !(self.oracle_sigma >= 0.0) {
            return bad("oracle sigma must be non-negative".into());
        }
        if !(self.dvs.c_thr > 0.0) {
            return bad("contrast threshold must be positive".into());
        }
        if self.render.width == 0 || self.render.width % 3 != 0 {
            return bad(format!("frame width {} must be a positive multiple of 3", self.render.width));
        }
        if self.control.r_soft > self.laser.max_range {
            return bad("soft zone exceeds laser range".into());
        }
        self.control.validate().map_err(SimError::Config)
    }
}

/// Produces class outputs for a dispatched frame.
#[derive(Debug, Clone)]
pub enum Detector {
    Oracle { sigma: f64 },
    Net(Box<Network>),
}

impl Detector {
    pub fn from_config(config: &EpisodeConfig, net: Option<Network>) -> Result<Self, SimError> {
        match (config.detector, net) {
            (DetectorKind::Oracle, _) => Ok(Detector::Oracle {
                sigma: config.oracle_sigma,
            }),
            (DetectorKind::Net, Some(n)) => Ok(Detector::Net(Box::new(n))),
            (DetectorKind::Net, None) => Err(SimError::Config("net detector needs weights".into())),
        }
    }

    fn needs_pixels(&self) -> bool {
        matches!(self, Detector::Net(_))
    }
}

/// Ground-truth outputs with additive Gaussian noise, clipped and
/// renormalized.
pub fn oracle_outputs<R: Rng>(gt: &GroundTruth, sigma: f64, rng: &mut R) -> ClassOutputs {
    let clean = encode_position(gt.label, gt.bearing);
    if sigma == 0.0 {
        return clean;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut v = clean.0;
    for x in v.iter_mut() {
        *x = (*x + normal.sample(rng)).clamp(0.0, 1.0);
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return ClassOutputs::uniform();
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    ClassOutputs::new(v).expect("normalized")
}

/// FOV-linear bearing of an analog angle, degrees positive right. Angles
/// behind the robot land outside +-40.5.
pub fn bearing_from_alpha(alpha: f64) -> f64 {
    let a = if alpha > 270.0 { alpha - 360.0 } else { alpha };
    (90.0 - a) * FOV_SCALE
}

pub fn alpha_from_bearing(beta: f64) -> f64 {
    (90.0 - beta / FOV_SCALE).rem_euclid(360.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    Dvs,
    Aps,
}

/// One inference invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub t_us: u64,
    pub source: FrameSource,
    pub outputs: ClassOutputs,
    pub raw: PositionVector,
    pub truth: GroundTruth,
}

impl InferenceRecord {
    /// |beta - beta_gt| in FOV degrees.
    pub fn bearing_error(&self) -> f64 {
        (bearing_from_alpha(self.raw.alpha) - self.truth.bearing).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub pred_x: f64,
    pub pred_y: f64,
    pub pred_theta: f64,
    pub prey_x: f64,
    pub prey_y: f64,
    pub prey_theta: f64,
    pub mode: &'static str,
    pub decision: String,
    pub alpha: f64,
    pub alpha_gt: f64,
    pub p_mag: f64,
    pub distance_gt: f64,
    pub v: f64,
    pub w: f64,
    pub event_rate_keps: f64,
    pub dvs_rate_hz: f64,
    pub aps_rate_hz: f64,
    pub inferences: u64,
    pub dropped: u64,
}

/// Log-spaced frame-rate histogram, 0.01 Hz to 10 kHz in quarter decades.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateHistogram {
    pub bin_edges_hz: Vec<f64>,
    pub dvs_counts: Vec<u64>,
    pub aps_counts: Vec<u64>,
}

impl RateHistogram {
    fn new() -> Self {
        Self {
            bin_edges_hz: (0..=24).map(|i| 10f64.powf(-2.0 + i as f64 * 0.25)).collect(),
            dvs_counts: vec![0; 24],
            aps_counts: vec![0; 24],
        }
    }

    fn bin(&self, rate: f64) -> Option<usize> {
        let x = (rate.log10() + 2.0) / 0.25;
        (x >= 0.0 && x < 24.0).then(|| x as usize)
    }

    fn add(&mut self, source: FrameSource, interval_us: u64) {
        if interval_us == 0 {
            return;
        }
        if let Some(b) = self.bin(1e6 / interval_us as f64) {
            match source {
                FrameSource::Dvs => self.dvs_counts[b] += 1,
                FrameSource::Aps => self.aps_counts[b] += 1,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub duration_s: f64,
    pub captured: bool,
    pub capture_time_s: Option<f64>,
    /// Center-to-center distance when the goal was declared.
    pub capture_distance: Option<f64>,
    pub dvs_frames: u64,
    pub aps_frames: u64,
    pub aps_skipped: u64,
    pub dropped: u64,
    pub inferences: u64,
    pub min_inference_interval_us: Option<u64>,
    /// Mean |beta - beta_gt| in FOV degrees over inferences on frames where
    /// the prey is visible.
    pub mean_abs_bearing_error_deg: Option<f64>,
    pub visible_inferences: u64,
    /// Entries of the predator center into the hard zone of a wall.
    pub wall_contacts: u64,
    pub min_wall_clearance: f64,
    pub mean_dvs_rate_hz: f64,
    pub rate_histogram: RateHistogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub rows: Vec<TraceRow>,
    pub inferences: Vec<InferenceRecord>,
    pub summary: Summary,
}

impl EpisodeTrace {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Everything a live client needs at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub predator: Pose,
    pub prey: Pose,
    pub mode: Mode,
    pub outputs: [f64; NUM_CLASSES],
    pub decision: String,
    pub alpha: f64,
    pub p_mag: f64,
    pub valid: bool,
    pub dvs_rate_hz: f64,
    pub aps_rate_hz: f64,
    pub dropped_frames: u64,
}

fn random_pose<R: Rng>(rng: &mut R, arena: &Arena, margin: f64) -> Pose {
    Pose::new(
        rng.random_range(margin..arena.width - margin),
        rng.random_range(margin..arena.height - margin),
        rng.random_range(-PI..PI),
    )
}

/// Start poses: explicit ones are kept; otherwise both robots are placed
/// at least 1 m from the walls and 3 m apart.
pub fn start_poses(config: &EpisodeConfig) -> (Pose, Pose) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5157_4152_5453);
    let predator = config.predator_start.unwrap_or_else(|| random_pose(&mut rng, &config.arena, 1.0));
    let prey = config.prey_start.unwrap_or_else(|| loop {
        let p = random_pose(&mut rng, &config.arena, 1.0);
        if p.distance_to(&predator) >= 3.0 {
            break p;
        }
    });
    (predator, prey)
}

fn evade(world: &World, speed: f64) -> VelocityCommand {
    let me = world.prey.pose;
    let them = world.predator.pose;
    let d = me.distance_to(&them).max(0.1);
    let mut f = ((me.x - them.x) / (d * d), (me.y - them.y) / (d * d));
    let a = &world.arena;
    let push = |s: f64| if s < 1.5 { 1.0 / s.max(0.05) - 1.0 / 1.5 } else { 0.0 };
    f.0 += push(me.x) - push(a.width - me.x);
    f.1 += push(me.y) - push(a.height - me.y);
    let desired = f.1.atan2(f.0);
    let err = wrap_angle(desired - me.theta);
    VelocityCommand {
        v: speed * err.cos().max(0.2),
        w: (3.0 * err).clamp(-PI, PI),
    }
}

/// Closed-loop simulation advanced one fixed tick at a time.
pub struct Episode {
    config: EpisodeConfig,
    world: World,
    renderer: Renderer,
    dvs: DvsSensor,
    filter: Option<BackgroundFilter>,
    accumulator: HistAccumulator,
    detector: Detector,
    noise_rng: ChaCha8Rng,
    oracle_rng: ChaCha8Rng,
    steering: SteeringState,
    fsm: FsmState,
    scan: LaserScan,
    command: VelocityCommand,
    prey_command: VelocityCommand,
    latest: Option<SteeringOutput>,
    latest_outputs: ClassOutputs,
    pending: VecDeque<(u64, ClassOutputs)>,
    next_laser_us: u64,
    next_render_us: u64,
    last_render_us: u64,
    next_aps_us: u64,
    last_inference_us: Option<u64>,
    last_frame_us: [Option<u64>; 2],
    recent_events: VecDeque<(u64, usize)>,
    recent_dvs: VecDeque<u64>,
    recent_aps: VecDeque<u64>,
    in_contact: bool,
    ticks: u64,
    rows: Vec<TraceRow>,
    inferences: Vec<InferenceRecord>,
    summary: Summary,
    record: bool,
    keep_inferences: bool,
    error_sum: f64,
}

impl Episode {
    pub fn new(config: EpisodeConfig, detector: Detector) -> Result<Self, SimError> {
        config.validate()?;
        if let Detector::Net(net) = &detector {
            if net.input_width() != config.render.width {
                return Err(SimError::Config(format!(
                    "network expects {}x{} frames but the camera produces {}x{}",
                    net.input_width(),
                    net.input_width(),
                    config.render.width,
                    config.render.width
                )));
            }
        }
        let (predator, prey) = start_poses(&config);
        let world = World::new(config.arena.clone(), predator, prey);
        let scan = simulate_laser(&world, Role::Predator, &config.laser);
        let summary = Summary {
            seed: config.seed,
            duration_s: 0.0,
            captured: false,
            capture_time_s: None,
            capture_distance: None,
            dvs_frames: 0,
            aps_frames: 0,
            aps_skipped: 0,
            dropped: 0,
            inferences: 0,
            min_inference_interval_us: None,
            mean_abs_bearing_error_deg: None,
            visible_inferences: 0,
            wall_contacts: 0,
            min_wall_clearance: world.arena.clearance(predator.position()),
            mean_dvs_rate_hz: 0.0,
            rate_histogram: RateHistogram::new(),
        };
        let mut ep = Self {
            renderer: Renderer::new(config.render),
            dvs: DvsSensor::new(config.dvs),
            filter: config.loop_config.filter.map(BackgroundFilter::new),
            accumulator: HistAccumulator::new(HistConfig {
                width: config.render.width,
                n_target: config.loop_config.n_target,
                ..Default::default()
            }),
            detector,
            noise_rng: ChaCha8Rng::seed_from_u64(config.seed),
            oracle_rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x0AC1E)),
            steering: SteeringState::new(config.steering),
            fsm: FsmState::new(config.seed),
            scan,
            command: VelocityCommand::STOP,
            prey_command: VelocityCommand::STOP,
            latest: None,
            latest_outputs: ClassOutputs::one_hot(Label::ABSENT),
            pending: VecDeque::new(),
            next_laser_us: 0,
            next_render_us: 0,
            last_render_us: 0,
            next_aps_us: 0,
            last_inference_us: None,
            last_frame_us: [None; 2],
            recent_events: VecDeque::new(),
            recent_dvs: VecDeque::new(),
            recent_aps: VecDeque::new(),
            in_contact: false,
            ticks: 0,
            rows: vec![],
            inferences: vec![],
            summary,
            record: true,
            keep_inferences: true,
            error_sum: 0.0,
            world,
            config,
        };
        // Prime the sensor on the initial view.
        let img = ep.renderer.render_sensor(&ep.world);
        ep.dvs.prime(&img);
        ep.next_render_us = ep.config.loop_config.render_period_us;
        Ok(ep)
    }

    /// Keep only the summary and inference log (no per-tick rows).
    pub fn without_rows(mut self) -> Self {
        self.record = false;
        self
    }

    /// Keep neither rows nor inference records; for unbounded live runs.
    pub fn live(mut self) -> Self {
        self.record = false;
        self.keep_inferences = false;
        self
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn mode(&self) -> Mode {
        self.fsm.mode
    }

    pub fn summary(&self) -> &Summary {
        &self.summary
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn inferences(&self) -> &[InferenceRecord] {
        &self.inferences
    }

    /// Teleop input, clamped to |v| <= 2 m/s and |w| <= pi rad/s.
    pub fn set_prey_command(&mut self, v: f64, w: f64) {
        let f = |x: f64| if x.is_finite() { x } else { 0.0 };
        self.prey_command = VelocityCommand {
            v: f(v).clamp(-2.0, 2.0),
            w: f(w).clamp(-PI, PI),
        };
    }

    pub fn prey_command(&self) -> VelocityCommand {
        self.prey_command
    }

    pub fn finished(&self) -> bool {
        (self.config.stop_on_capture && self.summary.captured)
            || self.world.t_us as f64 >= self.config.duration_s * 1e6
    }

    fn window_count(q: &mut VecDeque<u64>, now: u64, window: u64) -> usize {
        while q.front().is_some_and(|&t| t + window <= now) {
            q.pop_front();
        }
        q.len()
    }

    fn rate_hz(&mut self, source: FrameSource) -> f64 {
        let now = self.world.t_us;
        let window = self.config.loop_config.rate_window_us;
        let q = match source {
            FrameSource::Dvs => &mut self.recent_dvs,
            FrameSource::Aps => &mut self.recent_aps,
        };
        Self::window_count(q, now, window) as f64 / (window as f64 * 1e-6)
    }

    fn event_rate_keps(&mut self) -> f64 {
        let now = self.world.t_us;
        let window = self.config.loop_config.event_rate_window_us;
        while self.recent_events.front().is_some_and(|&(t, _)| t + window <= now) {
            self.recent_events.pop_front();
        }
        let n: usize = self.recent_events.iter().map(|&(_, n)| n).sum();
        n as f64 / (window as f64 * 1e-6) / 1000.0
    }

    pub fn snapshot(&mut self) -> Snapshot {
        let (alpha, p_mag, valid, decision) = match &self.latest {
            Some(s) => (s.alpha, s.p_mag, s.raw.valid, s.decision.to_string()),
            None => (270.0, 0.0, false, "N".into()),
        };
        Snapshot {
            t: self.world.t(),
            predator: self.world.predator.pose,
            prey: self.world.prey.pose,
            mode: self.fsm.mode,
            outputs: self.latest_outputs.0,
            decision,
            alpha,
            p_mag,
            valid,
            dvs_rate_hz: self.rate_hz(FrameSource::Dvs),
            aps_rate_hz: self.rate_hz(FrameSource::Aps),
            dropped_frames: self.summary.dropped,
        }
    }

    /// Offer a frame to the detector at `t_us`; dropped if too soon after
    /// the previous inference.
    fn dispatch(&mut self, source: FrameSource, t_us: u64, truth: GroundTruth, frame: Option<&crate::events::Frame>) {
        let slot = source as usize;
        if let Some(prev) = self.last_frame_us[slot] {
            self.summary.rate_histogram.add(source, t_us.saturating_sub(prev));
        }
        self.last_frame_us[slot] = Some(t_us);
        match source {
            FrameSource::Dvs => {
                self.summary.dvs_frames += 1;
                self.recent_dvs.push_back(t_us);
            }
            FrameSource::Aps => {
                self.summary.aps_frames += 1;
                self.recent_aps.push_back(t_us);
            }
        }
        if let Some(last) = self.last_inference_us {
            if t_us < last + self.config.loop_config.min_interval_us {
                self.summary.dropped += 1;
                return;
            }
            let gap = t_us - last;
            self.summary.min_inference_interval_us =
                Some(self.summary.min_inference_interval_us.map_or(gap, |m| m.min(gap)));
        }
        self.last_inference_us = Some(t_us);
        self.summary.inferences += 1;
        let outputs = match &self.detector {
            Detector::Oracle { sigma } => oracle_outputs(&truth, *sigma, &mut self.oracle_rng),
            Detector::Net(net) => net
                .forward(frame.expect("pixels rendered for the network"))
                .expect("width checked at construction"),
        };
        let raw = analog_position(&outputs, &self.config.steering);
        let record = InferenceRecord {
            t_us,
            source,
            outputs,
            raw,
            truth,
        };
        if truth.visible() {
            self.summary.visible_inferences += 1;
            self.error_sum += record.bearing_error();
        }
        if self.keep_inferences {
            self.inferences.push(record);
        }
        self.pending
            .push_back((t_us + self.config.loop_config.latency_us, outputs));
    }

    fn render_tick(&mut self) {
        let now = self.world.t_us;
        let lc = self.config.loop_config;
        let aps_due = lc.use_aps && now >= self.next_aps_us;
        let dvs_due = now >= self.next_render_us;
        if !aps_due && !dvs_due {
            return;
        }
        let img = self.renderer.render_sensor(&self.world);
        let truth = self.renderer.ground_truth(&self.world);
        if dvs_due {
            let t0 = self.last_render_us;
            self.last_render_us = now;
            self.next_render_us += lc.render_period_us;
            let events = self.dvs.observe(&img, t0, now, &mut self.noise_rng);
            self.recent_events.push_back((now, events.len()));
            if lc.use_dvs {
                let needs_pixels = self.detector.needs_pixels();
                for e in &events {
                    let passed = match &mut self.filter {
                        Some(f) => f.step(e).is_some(),
                        None => true,
                    };
                    if !passed {
                        continue;
                    }
                    if let Some(grid) = self.accumulator.accumulate(e) {
                        let frame = needs_pixels.then(|| normalize_histogram(&grid, e.t));
                        self.dispatch(FrameSource::Dvs, e.t, truth, frame.as_ref());
                    }
                }
            }
        }
        if aps_due {
            self.next_aps_us += (1e6 / lc.aps_rate_hz).round() as u64;
            let quiet = lc.aps_off_keps.is_some_and(|thr| self.event_rate_keps() < thr);
            if quiet {
                self.summary.aps_skipped += 1;
            } else {
                let frame = self
                    .detector
                    .needs_pixels()
                    .then(|| subsample_aps(&img, self.config.render.width, now).expect("valid width"));
                self.dispatch(FrameSource::Aps, now, truth, frame.as_ref());
            }
        }
    }

    /// Advance one tick.
    pub fn step(&mut self) {
        let lc = self.config.loop_config;
        let now = self.world.t_us;
        while self.pending.front().is_some_and(|&(t, _)| t <= now) {
            let (t, outputs) = self.pending.pop_front().unwrap();
            self.latest = Some(self.steering.update(&outputs, t as f64 * 1e-6));
            self.latest_outputs = outputs;
        }
        if now >= self.next_laser_us {
            self.scan = simulate_laser(&self.world, Role::Predator, &self.config.laser);
            self.next_laser_us += (1e6 / self.config.laser.rate_hz).round() as u64;
        }
        let dt = lc.dt_us as f64 * 1e-6;
        if self.config.predator_active {
            let (decision, position) = match &self.latest {
                Some(s) => (
                    s.decision,
                    PositionVector {
                        alpha: s.alpha,
                        p_mag: s.p_mag,
                        ..s.raw
                    },
                ),
                None => (
                    Label::ABSENT,
                    analog_position(&ClassOutputs::one_hot(Label::ABSENT), &self.config.steering),
                ),
            };
            let was_goal = self.fsm.mode == Mode::GoalAchieved;
            let (fsm, cmd) = fsm_step(&self.fsm, decision, &position, &self.scan, dt, &self.config.control);
            self.fsm = fsm;
            self.command = cmd;
            if !was_goal && self.fsm.mode == Mode::GoalAchieved && !self.summary.captured {
                self.summary.captured = true;
                self.summary.capture_time_s = Some(now as f64 * 1e-6);
                self.summary.capture_distance = Some(self.world.predator.pose.distance_to(&self.world.prey.pose));
            }
        }
        let prey_cmd = match self.config.prey {
            PreyBehavior::Static => VelocityCommand::STOP,
            PreyBehavior::Circling { radius, speed } => VelocityCommand {
                v: speed,
                w: speed / radius,
            },
            PreyBehavior::Evading { speed } => evade(&self.world, speed),
            PreyBehavior::Teleop => self.prey_command,
        };
        self.world.predator.command(self.command.v, self.command.w);
        self.world.prey.command(prey_cmd.v, prey_cmd.w);
        self.world = step(&self.world, dt);
        self.ticks += 1;

        let clearance = self.world.arena.clearance(self.world.predator.pose.position());
        self.summary.min_wall_clearance = self.summary.min_wall_clearance.min(clearance);
        let contact = clearance < self.config.control.r_hard;
        if contact && !self.in_contact {
            self.summary.wall_contacts += 1;
        }
        self.in_contact = contact;

        self.render_tick();
        self.summary.duration_s = self.world.t();

        if self.record && self.ticks % lc.trace_every as u64 == 0 {
            let row = self.trace_row();
            self.rows.push(row);
        }
    }

    fn trace_row(&mut self) -> TraceRow {
        let truth = self.renderer.ground_truth(&self.world);
        let (alpha, p_mag, decision) = match &self.latest {
            Some(s) => (s.alpha, s.p_mag, s.decision.to_string()),
            None => (270.0, 0.0, "N".to_string()),
        };
        let w = &self.world;
        TraceRow {
            t: w.t(),
            pred_x: w.predator.pose.x,
            pred_y: w.predator.pose.y,
            pred_theta: w.predator.pose.theta,
            prey_x: w.prey.pose.x,
            prey_y: w.prey.pose.y,
            prey_theta: w.prey.pose.theta,
            mode: self.fsm.mode.as_str(),
            decision,
            alpha,
            alpha_gt: alpha_from_bearing(truth.bearing),
            p_mag,
            distance_gt: truth.distance,
            v: w.predator.v,
            w: w.predator.w,
            event_rate_keps: self.event_rate_keps(),
            dvs_rate_hz: self.rate_hz(FrameSource::Dvs),
            aps_rate_hz: self.rate_hz(FrameSource::Aps),
            inferences: self.summary.inferences,
            dropped: self.summary.dropped,
        }
    }

    fn finalize(&mut self) {
        let n = self.summary.visible_inferences;
        self.summary.mean_abs_bearing_error_deg = (n > 0).then(|| self.error_sum / n as f64);
        let t = self.world.t();
        self.summary.mean_dvs_rate_hz = if t > 0.0 {
            self.summary.dvs_frames as f64 / t
        } else {
            0.0
        };
    }

    /// Run to the configured end and return the trace.
    pub fn run(mut self) -> EpisodeTrace {
        while !self.finished() {
            self.step();
        }
        self.into_trace()
    }

    pub fn into_trace(mut self) -> EpisodeTrace {
        self.finalize();
        EpisodeTrace {
            rows: self.rows,
            inferences: self.inferences,
            summary: self.summary,
        }
    }
}

pub fn run_episode(config: EpisodeConfig, detector: Detector) -> Result<EpisodeTrace, SimError> {
    Ok(Episode::new(config, detector)?.run())
}

/// Least-squares scale mapping raw size evidence to meters: the kappa that
/// minimizes sum (raw / kappa - distance)^2.
pub fn calibrate_kappa(pairs: &[(f64, f64)]) -> Option<f64> {
    let (num, den) = pairs
        .iter()
        .fold((0.0, 0.0), |(n, d), &(raw, dist)| (n + raw * dist, d + raw * raw));
    (num > 0.0 && den > 0.0).then(|| den / num)
}

/// Raw |p| evidence (before dividing by kappa) against true distance for
/// every visible inference of a trace.
pub fn kappa_pairs(trace: &EpisodeTrace, params: &SteeringParams) -> Vec<(f64, f64)> {
    trace
        .inferences
        .iter()
        .filter(|r| r.truth.visible() && r.raw.valid)
        .map(|r| (r.raw.p_mag * params.kappa, r.truth.distance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_config() -> EpisodeConfig {
        EpisodeConfig {
            duration_s: 0.5,
            prey: PreyBehavior::Static,
            predator_active: false,
            ..Default::default()
        }
    }

    #[test]
    fn bearing_alpha_round_trip() {
        for b in [-40.5, -10.0, 0.0, 22.0, 40.5] {
            assert!((bearing_from_alpha(alpha_from_bearing(b)) - b).abs() < 1e-9);
        }
        assert!(bearing_from_alpha(270.0).abs() > 40.5);
    }

    #[test]
    fn static_world_has_no_dvs_frames() {
        let trace = run_episode(quiet_config(), Detector::Oracle { sigma: 0.05 }).unwrap();
        assert_eq!(trace.summary.dvs_frames, 0);
        // APS at 15 Hz over 0.5 s.
        assert_eq!(trace.summary.aps_frames, 8);
        assert_eq!(trace.rows.len(), 500);
    }

    #[test]
    fn config_errors() {
        let mut c = quiet_config();
        c.loop_config.dt_us = 0;
        assert!(Episode::new(c, Detector::Oracle { sigma: 0.0 }).is_err());
        let c = EpisodeConfig {
            detector: DetectorKind::Net,
            ..quiet_config()
        };
        assert!(Detector::from_config(&c, None).is_err());
        let net = Network::zeros(crate::net::Architecture::standard(54));
        assert!(Episode::new(quiet_config(), Detector::Net(Box::new(net))).is_err());
    }

    #[test]
    fn kappa_regression() {
        let pairs: Vec<(f64, f64)> = (1..10).map(|i| (i as f64 * 0.02, i as f64 * 0.3)).collect();
        assert!((calibrate_kappa(&pairs).unwrap() - 0.02 / 0.3).abs() < 1e-12);
        assert!(calibrate_kappa(&[]).is_none());
    }

    #[test]
    fn oracle_noise_keeps_a_distribution() {
        let gt = GroundTruth {
            label: Label::ABSENT,
            bearing: 0.0,
            distance: 3.0,
            width_px: 5.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let o = oracle_outputs(&gt, 0.05, &mut rng);
            assert!((o.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
