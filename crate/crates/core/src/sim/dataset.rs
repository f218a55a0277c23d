//! Synthetic labeled frames: random predator/prey placements rendered as
//! subsampled APS frames and as DVS histograms under random ego-motion.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dvs::{DvsModel, DvsSensor};
use super::render::{GroundTruth, RenderConfig, Renderer, SizeThresholds};
use super::world::{step, Arena, Pose, World};
use crate::classes::{ClassOutputs, Label, NUM_CLASSES};
use crate::events::{
    augment_exposure, mirror, normalize_histogram, subsample_aps, BackgroundFilter, FilterConfig, Frame,
    FrameError, FrameKind, HistAccumulator, HistConfig, EXPOSURE_DELTAS,
};
use crate::net::{NetError, Network, Sample};
use crate::steering::{analog_position, encode_position, SteeringParams, FOV_DEG, FOV_SCALE};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Frame { path: PathBuf, source: FrameError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub arena: Arena,
    /// Camera and labeler; the size thresholds are recomputed per dataset.
    pub render: RenderConfig,
    pub dvs: DvsModel,
    pub filter: Option<FilterConfig>,
    pub n_target: usize,
    /// Share of base samples placed with the prey outside the field of view.
    pub absent_fraction: f64,
    /// Share of base samples rendered as APS frames; the rest are DVS.
    pub aps_fraction: f64,
    /// Add a mirrored copy of every base sample.
    pub mirror: bool,
    /// Share of APS frames shifted by one of the exposure deltas.
    pub exposure_fraction: f64,
    /// Ego-motion bounds for DVS samples, m/s and rad/s.
    pub max_speed: f64,
    pub max_turn: f64,
    /// Prey placements drawn to fix the size thresholds.
    pub calibration_poses: usize,
    /// Simulated time allowed for one histogram to fill, microseconds.
    pub max_fill_us: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            arena: Arena::default(),
            render: RenderConfig::default(),
            dvs: DvsModel {
                noise_rate: 2000.0,
                ..DvsModel::default()
            },
            filter: Some(FilterConfig::default()),
            n_target: 5000,
            absent_fraction: 0.5,
            aps_fraction: 0.45,
            mirror: true,
            exposure_fraction: 0.5,
            max_speed: 1.5,
            max_turn: PI / 2.0,
            calibration_poses: 4000,
            max_fill_us: 400_000,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: &str| Err(DatasetError::Config(m.into()));
        for (name, f) in [
            ("absent_fraction", self.absent_fraction),
            ("aps_fraction", self.aps_fraction),
            ("exposure_fraction", self.exposure_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(&format!("{name} must be in [0, 1]"));
            }
        }
        if self.n_target == 0 {
            return bad("n_target must be positive");
        }
        if self.calibration_poses < 2 {
            return bad("need at least two calibration poses");
        }
        if !(self.max_speed >= 0.0 && self.max_turn >= 0.0) {
            return bad("motion bounds must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: Frame,
    pub label: Label,
    /// Degrees, positive right; present when the label is visible.
    pub bearing: Option<f64>,
    pub distance: f64,
    pub width_px: f64,
    pub mirrored: bool,
    /// Gray-level shift applied (APS only).
    pub exposure: f64,
}

impl LabeledFrame {
    fn new(frame: Frame, truth: &GroundTruth) -> Self {
        Self {
            frame,
            label: truth.label,
            bearing: truth.visible().then_some(truth.bearing),
            distance: truth.distance,
            width_px: truth.width_px,
            mirrored: false,
            exposure: 0.0,
        }
    }

    fn mirrored(&self) -> Self {
        let (frame, label) = mirror(&self.frame, Some(self.label));
        Self {
            frame,
            label: label.expect("label given"),
            bearing: self.bearing.map(|b| -b),
            mirrored: !self.mirrored,
            ..*self
        }
    }

    /// Training target: the position-encoding softmax for visible frames,
    /// one-hot N otherwise.
    pub fn target(&self) -> [f64; NUM_CLASSES] {
        let outputs = match self.bearing {
            Some(b) => encode_position(self.label, b),
            None => encode_position(Label::ABSENT, 0.0),
        };
        outputs.0
    }

    pub fn sample(&self) -> Sample {
        Sample::soft(&self.frame, self.label.index(), self.target())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub thresholds: SizeThresholds,
    pub frames: Vec<LabeledFrame>,
}

/// Per-class counts plus APS/DVS split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBalance {
    pub counts: Vec<(String, usize)>,
    pub aps: usize,
    pub dvs: usize,
    pub absent_share: f64,
}

impl std::fmt::Display for ClassBalance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let total = self.aps + self.dvs;
        for (name, n) in &self.counts {
            let pct = if total > 0 { 100.0 * *n as f64 / total as f64 } else { 0.0 };
            writeln!(f, "{name:>5} {n:>7} {pct:5.1}%")?;
        }
        write!(f, "  aps {} dvs {}", self.aps, self.dvs)
    }
}

impl Dataset {
    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for f in &self.frames {
            c[f.label.index()] += 1;
        }
        c
    }

    pub fn balance(&self) -> ClassBalance {
        let counts = self.counts();
        let aps = self.frames.iter().filter(|f| f.frame.kind() == FrameKind::Aps).count();
        ClassBalance {
            counts: (0..NUM_CLASSES)
                .map(|i| (Label::from_index(i).expect("index").to_string(), counts[i]))
                .collect(),
            aps,
            dvs: self.frames.len() - aps,
            absent_share: counts[Label::ABSENT.index()] as f64 / self.frames.len().max(1) as f64,
        }
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.frames.iter().map(LabeledFrame::sample).collect()
    }

    /// Write `frames/NNNNNN.pgm` and `manifest.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<Manifest, DatasetError> {
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| DatasetError::Io { path, source }
        };
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
        let mut entries = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let rel = format!("frames/{i:06}.pgm");
            let path = dir.join(&rel);
            fs::write(&path, f.frame.to_pgm()).map_err(io_err(&path))?;
            entries.push(ManifestEntry {
                path: rel,
                label: f.label.to_string(),
                kind: f.frame.kind(),
                bearing: f.bearing,
                distance: f.distance,
                width_px: f.width_px,
                mirrored: f.mirrored,
                exposure: f.exposure,
            });
        }
        let manifest = Manifest {
            seed: self.config.seed,
            width: self.config.render.width,
            thresholds: self.thresholds,
            balance: self.balance(),
            frames: entries,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(io_err(&path))?;
        Ok(manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub label: String,
    pub kind: FrameKind,
    pub bearing: Option<f64>,
    pub distance: f64,
    pub width_px: f64,
    pub mirrored: bool,
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub width: usize,
    pub thresholds: SizeThresholds,
    pub balance: ClassBalance,
    pub frames: Vec<ManifestEntry>,
}

/// Read a manifest and every frame it lists.
pub fn load_dataset(manifest_path: &Path) -> Result<(Manifest, Vec<LabeledFrame>), DatasetError> {
    let text = fs::read_to_string(manifest_path).map_err(|source| DatasetError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for e in &manifest.frames {
        let path = base.join(&e.path);
        let bytes = fs::read(&path).map_err(|source| DatasetError::Io {
            path: path.clone(),
            source,
        })?;
        let frame = Frame::from_pgm(&bytes, e.kind).map_err(|source| DatasetError::Frame {
            path: path.clone(),
            source,
        })?;
        let label: Label = e
            .label
            .parse()
            .map_err(|_| DatasetError::Config(format!("{}: bad label {:?}", e.path, e.label)))?;
        frames.push(LabeledFrame {
            frame,
            label,
            bearing: e.bearing,
            distance: e.distance,
            width_px: e.width_px,
            mirrored: e.mirrored,
            exposure: e.exposure,
        });
    }
    Ok((manifest, frames))
}

/// Held-out scores of a network on labeled frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    /// Argmax over the ten classes equals the label.
    pub accuracy: f64,
    pub visible_frames: usize,
    /// Mean |decoded bearing - true bearing| over visible frames, degrees.
    /// Decoded bearings are clamped to the field of view.
    pub mean_abs_bearing_error_deg: f64,
}

impl EvalReport {
    /// Bearing error as a fraction of the field of view.
    pub fn bearing_error_fraction(&self, fov_deg: f64) -> f64 {
        self.mean_abs_bearing_error_deg / fov_deg
    }
}

/// Bearing read from network outputs, clamped to the field of view.
pub fn decoded_bearing(outputs: &ClassOutputs, params: &SteeringParams) -> f64 {
    let half = FOV_DEG / 2.0;
    let p = analog_position(outputs, params);
    if p.dx == 0.0 && p.dy == 0.0 {
        return 0.0;
    }
    let a = if p.alpha > 270.0 { p.alpha - 360.0 } else { p.alpha };
    ((90.0 - a) * FOV_SCALE).clamp(-half, half)
}

pub fn evaluate_frames(net: &Network, frames: &[LabeledFrame]) -> Result<EvalReport, NetError> {
    let params = SteeringParams::default();
    let (mut correct, mut visible, mut err) = (0usize, 0usize, 0.0);
    for f in frames {
        let out = net.forward(&f.frame)?;
        correct += usize::from(out.argmax() == f.label.index());
        if let Some(b) = f.bearing {
            visible += 1;
            err += (decoded_bearing(&out, &params) - b).abs();
        }
    }
    Ok(EvalReport {
        frames: frames.len(),
        accuracy: correct as f64 / frames.len().max(1) as f64,
        visible_frames: visible,
        mean_abs_bearing_error_deg: if visible > 0 { err / visible as f64 } else { 0.0 },
    })
}

const PREDATOR_MARGIN: f64 = 0.5;
const PREY_MARGIN: f64 = 0.45;
const MIN_SEPARATION: f64 = 0.9;
/// Absent placements stay this far outside the field of view, degrees.
const ABSENT_MARGIN: f64 = 4.5;

fn uniform_pose(rng: &mut impl Rng, arena: &Arena, margin: f64) -> Pose {
    Pose::new(
        rng.random_range(margin..arena.width - margin),
        rng.random_range(margin..arena.height - margin),
        rng.random_range(-PI..PI),
    )
}

/// Predator and prey placement; the prey is inside the field of view when
/// `present`, well outside it otherwise.
fn place(rng: &mut impl Rng, config: &DatasetConfig, present: bool) -> World {
    let half = config.render.camera.fov_deg / 2.0;
    loop {
        let predator = uniform_pose(rng, &config.arena, PREDATOR_MARGIN);
        for _ in 0..64 {
            let prey = uniform_pose(rng, &config.arena, PREY_MARGIN);
            if predator.distance_to(&prey) < MIN_SEPARATION {
                continue;
            }
            let bearing = predator.bearing_to(&prey).to_degrees().abs();
            if (present && bearing <= half) || (!present && bearing > half + ABSENT_MARGIN) {
                return World::new(config.arena.clone(), predator, prey);
            }
        }
    }
}

/// Mean +- 1 sd of the apparent widths of unoccluded, in-view prey over
/// the placement sampler.
pub fn calibrate_thresholds(config: &DatasetConfig) -> SizeThresholds {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7468_7265_7368);
    let widths: Vec<f64> = (0..config.calibration_poses)
        .filter_map(|_| {
            let world = place(&mut rng, config, true);
            let truth = super::render::ground_truth(&world, &config.render);
            truth.visible().then_some(truth.width_px)
        })
        .collect();
    SizeThresholds::from_sizes(config.render.width, &widths).unwrap_or(config.render.thresholds)
}

/// Run random ego-motion until one histogram fills; `None` if it does not
/// within the time budget.
fn dvs_sample(
    rng: &mut ChaCha8Rng,
    config: &DatasetConfig,
    renderer: &Renderer,
    mut world: World,
) -> Option<(Frame, GroundTruth)> {
    const DT_US: u64 = 1000;
    const RENDER_US: u64 = 5000;
    let v = rng.random_range(0.0..=config.max_speed);
    let w = rng.random_range(-config.max_turn..=config.max_turn);
    world.predator.command(v, w);
    world.prey.command(rng.random_range(0.0..=1.0), rng.random_range(-1.0..=1.0));
    let mut sensor = DvsSensor::new(config.dvs);
    sensor.prime(&renderer.render_sensor(&world));
    let mut filter = config.filter.map(BackgroundFilter::new);
    let mut acc = HistAccumulator::new(HistConfig {
        n_target: config.n_target,
        width: config.render.width,
        ..HistConfig::default()
    });
    let start = world.t_us;
    while world.t_us - start < config.max_fill_us {
        let t0 = world.t_us;
        for _ in 0..RENDER_US / DT_US {
            world = step(&world, DT_US as f64 * 1e-6);
        }
        let img = renderer.render_sensor(&world);
        for e in sensor.observe(&img, t0, world.t_us, rng) {
            if let Some(f) = &mut filter {
                if f.step(&e).is_none() {
                    continue;
                }
            }
            if let Some(grid) = acc.accumulate(&e) {
                return Some((normalize_histogram(&grid, e.t), renderer.ground_truth(&world)));
            }
        }
    }
    None
}

/// `n` labeled frames (mirrored pairs included) from a seeded sampler.
/// Size thresholds are fixed first from the placement distribution, then
/// every frame is labeled with them.
pub fn make_dataset(config: &DatasetConfig, n: usize) -> Result<Dataset, DatasetError> {
    config.validate()?;
    if n == 0 {
        return Err(DatasetError::Config("n must be at least 1".into()));
    }
    let thresholds = calibrate_thresholds(config);
    let renderer = Renderer::new(RenderConfig {
        thresholds,
        ..config.render
    });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames = Vec::with_capacity(n);
    while frames.len() < n {
        let present = !rng.random_bool(config.absent_fraction);
        let aps = rng.random_bool(config.aps_fraction);
        let world = place(&mut rng, config, present);
        let mut item = if aps {
            let raw = renderer.render_sensor(&world);
            let frame = subsample_aps(&raw, config.render.width, world.t_us).expect("valid width");
            let mut item = LabeledFrame::new(frame, &renderer.ground_truth(&world));
            if rng.random_bool(config.exposure_fraction) {
                let delta = *EXPOSURE_DELTAS.choose(&mut rng).expect("non-empty");
                item.frame = augment_exposure(&item.frame, delta).expect("APS frame");
                item.exposure = delta;
            }
            item
        } else {
            match dvs_sample(&mut rng, config, &renderer, world) {
                Some((frame, truth)) => LabeledFrame::new(frame, &truth),
                None => continue,
            }
        };
        item.frame = item.frame.with_time(0);
        if config.mirror && frames.len() + 1 < n {
            let m = item.mirrored();
            frames.push(item);
            frames.push(m);
        } else {
            frames.push(item);
        }
    }
    Ok(Dataset {
        config: config.clone(),
        thresholds,
        frames,
    })
}
