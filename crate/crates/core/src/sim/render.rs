use serde::{Deserialize, Serialize};

use super::world::{World, ROBOT_HEIGHT};
use crate::classes::{Label, Region, SizeClass};
use crate::events::{subsample_aps, Frame, GrayImage, SENSOR_HEIGHT, SENSOR_WIDTH};
use crate::steering::FOV_DEG;

/// Half of the prey's apparent extent used by the projection, meters.
pub const PREY_HALF_WIDTH: f64 = 0.375;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fov_deg: f64,
    /// Lens height above the floor, meters.
    pub height: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            fov_deg: FOV_DEG,
            height: 0.45,
        }
    }
}

impl CameraModel {
    /// Sensor pixels per radian; the same in both axes (equidistant).
    pub fn focal(&self) -> f64 {
        SENSOR_WIDTH as f64 / self.fov_deg.to_radians()
    }

    /// Bearing of a sensor column center, degrees, positive right.
    pub fn column_bearing(&self, col: usize) -> f64 {
        ((col as f64 + 0.5) / SENSOR_WIDTH as f64 - 0.5) * self.fov_deg
    }
}

/// Apparent-width class boundaries, in pixels at `width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeThresholds {
    pub width: usize,
    pub thr_l: f64,
    pub thr_h: f64,
}

impl SizeThresholds {
    /// Mean plus and minus one standard deviation of the observed sizes.
    pub fn from_sizes(width: usize, sizes: &[f64]) -> Option<Self> {
        if sizes.len() < 2 {
            return None;
        }
        let n = sizes.len() as f64;
        let mean = sizes.iter().sum::<f64>() / n;
        let var = sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Some(Self {
            width,
            thr_l: mean - sd,
            thr_h: mean + sd,
        })
    }

    pub fn classify(&self, width_px: f64) -> SizeClass {
        if width_px < self.thr_l {
            SizeClass::S
        } else if width_px > self.thr_h {
            SizeClass::XL
        } else {
            SizeClass::M
        }
    }

    /// Rescale to another frame width.
    pub fn at_width(&self, width: usize) -> Self {
        let k = width as f64 / self.width as f64;
        Self {
            width,
            thr_l: self.thr_l * k,
            thr_h: self.thr_h * k,
        }
    }
}

impl Default for SizeThresholds {
    /// Mean +- 1 sd of prey widths over the default dataset pose sampler.
    fn default() -> Self {
        Self {
            width: 36,
            thr_l: 3.68,
            thr_h: 12.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub camera: CameraModel,
    /// Network input width of the produced APS frames.
    pub width: usize,
    pub wall_height: f64,
    /// Prey narrower than this many pixels (at `width`) is labeled N.
    pub visibility_px: f64,
    pub thresholds: SizeThresholds,
    pub texture_seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            camera: CameraModel::default(),
            width: 36,
            wall_height: 1.0,
            visibility_px: 2.0,
            thresholds: SizeThresholds::default(),
            texture_seed: 7,
        }
    }
}

/// Labeler output for the predator's view of the prey.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: Label,
    /// Prey bearing, degrees, positive right.
    pub bearing: f64,
    /// Center-to-center distance, meters.
    pub distance: f64,
    /// Apparent prey width in pixels at the configured frame width.
    pub width_px: f64,
}

impl GroundTruth {
    /// The prey is labeled visible.
    pub fn visible(&self) -> bool {
        self.label.is_visible()
    }

    /// Column of the prey center at frame width `w`.
    pub fn center_column(&self, w: usize, fov_deg: f64) -> f64 {
        w as f64 / 2.0 + self.bearing * w as f64 / fov_deg
    }
}

pub fn apparent_width_px(distance: f64, width: usize, fov_deg: f64) -> f64 {
    width as f64 * (2.0 * (PREY_HALF_WIDTH / distance).atan()).to_degrees() / fov_deg
}

/// Closest wall or clutter hit along a world-frame direction.
fn wall_hit(world: &World, origin: (f64, f64), phi: f64) -> (f64, f64) {
    let dir = (phi.cos(), phi.sin());
    let mut best = (f64::INFINITY, 0.0);
    for s in world.arena.segments() {
        if let Some((d, u)) = s.ray_hit(origin, dir) {
            if d < best.0 {
                best = (d, u * s.length() + s.a.0 + s.a.1);
            }
        }
    }
    best
}

pub fn ground_truth(world: &World, config: &RenderConfig) -> GroundTruth {
    let cam = &world.predator.pose;
    let prey = &world.prey.pose;
    let distance = cam.distance_to(prey);
    let bearing = -cam.bearing_to(prey).to_degrees();
    let width_px = apparent_width_px(distance, config.width, config.camera.fov_deg);
    let half = config.camera.fov_deg / 2.0;
    let occluded = || {
        let phi = cam.theta - bearing.to_radians();
        wall_hit(world, cam.position(), phi).0 < distance
    };
    let label = match Region::for_bearing(bearing * FOV_DEG / config.camera.fov_deg) {
        Some(region) if bearing.abs() <= half && width_px >= config.visibility_px && !occluded() => {
            Label::visible(region, config.thresholds.at_width(config.width).classify(width_px))
        }
        _ => Label::ABSENT,
    };
    GroundTruth {
        label,
        bearing,
        distance,
        width_px,
    }
}

/// Floor without a libm call on baseline x86-64.
fn ifloor(x: f64) -> i64 {
    let i = x as i64;
    if (i as f64) > x {
        i - 1
    } else {
        i
    }
}

fn hash(i: i64, j: i64, seed: u64) -> f64 {
    let mut h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (j as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn value_noise(x: f64, y: f64, seed: u64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (i, j) = (xf as i64, yf as i64);
    let (fx, fy) = (x - xf, y - yf);
    let (sx, sy) = (fx * fx * (3.0 - 2.0 * fx), fy * fy * (3.0 - 2.0 * fy));
    let a = hash(i, j, seed) + sx * (hash(i + 1, j, seed) - hash(i, j, seed));
    let b = hash(i, j + 1, seed) + sx * (hash(i + 1, j + 1, seed) - hash(i, j + 1, seed));
    a + sy * (b - a)
}

fn floor_shade(x: f64, y: f64, seed: u64) -> f64 {
    let (i, j) = (ifloor(x * 2.0), ifloor(y * 2.0));
    let stripe = if i >> 1 & 1 == 0 { 0.55 } else { 0.38 };
    stripe + 0.06 * (hash(i, j, seed) - 0.5)
}

/// Wall shade without its height-dependent skirting.
fn wall_column_shade(u: f64, seed: u64) -> f64 {
    let stripe = if ifloor(u / 0.4) & 1 == 0 { 0.8 } else { 0.62 };
    stripe + 0.08 * (value_noise(u * 3.0, 0.5, seed ^ 1) - 0.5)
}

/// Room above the walls: per-column noise and bright windows.
fn background_column(phi: f64, seed: u64) -> (f64, bool) {
    let a = phi.rem_euclid(std::f64::consts::TAU);
    (0.35 + 0.2 * value_noise(a * 6.0, 0.5, seed ^ 2), (3.0 * a).sin() > 0.75)
}

fn prey_shade(rel_height: f64) -> f64 {
    if rel_height < 0.25 {
        0.05
    } else if rel_height > 0.85 {
        0.2
    } else {
        0.1
    }
}

/// Renders the predator camera's view at sensor resolution.
#[derive(Debug, Clone)]
pub struct Renderer {
    config: RenderConfig,
    column_bearing: Vec<f64>,
    row_elevation: Vec<f64>,
    /// cot of the depression angle per row; used below the horizon only.
    row_cot: Vec<f64>,
}

impl Renderer {
    pub fn new(config: RenderConfig) -> Self {
        let focal = config.camera.focal();
        let h = SENSOR_HEIGHT as f64;
        Self {
            column_bearing: (0..SENSOR_WIDTH as usize)
                .map(|c| config.camera.column_bearing(c).to_radians())
                .collect(),
            row_elevation: (0..SENSOR_HEIGHT as usize)
                .map(|r| (h / 2.0 - (r as f64 + 0.5)) / focal)
                .collect(),
            row_cot: (0..SENSOR_HEIGHT as usize)
                .map(|r| 1.0 / ((r as f64 + 0.5 - h / 2.0) / focal).tan())
                .collect(),
            config,
        }
    }

    pub fn config(&self) -> &RenderConfig {
        &self.config
    }

    pub fn ground_truth(&self, world: &World) -> GroundTruth {
        ground_truth(world, &self.config)
    }

    /// Full 240x180 intensity image in [0, 1].
    pub fn render_sensor(&self, world: &World) -> GrayImage {
        let (sw, sh) = (SENSOR_WIDTH as usize, SENSOR_HEIGHT as usize);
        let mut pixels = vec![0.0; sw * sh];
        let cam = world.predator.pose;
        let origin = cam.position();
        let hc = self.config.camera.height;
        let seed = self.config.texture_seed;
        let prey_d = cam.distance_to(&world.prey.pose);
        let prey_b = -cam.bearing_to(&world.prey.pose);
        let prey_half = (PREY_HALF_WIDTH / prey_d).atan();
        let prey_top = ((ROBOT_HEIGHT - hc) / prey_d).atan();
        let prey_bottom = (-hc / prey_d).atan();

        let skirting_z = 0.12;
        for (c, &beta) in self.column_bearing.iter().enumerate() {
            let phi = cam.theta - beta;
            let (dir_x, dir_y) = (phi.cos(), phi.sin());
            let (d_wall, u) = wall_hit(world, origin, phi);
            let wall_top = ((self.config.wall_height - hc) / d_wall).atan();
            let wall_bottom = (-hc / d_wall).atan();
            let skirting_top = ((skirting_z - hc) / d_wall).atan();
            let wall = wall_column_shade(u, seed);
            let (room, window) = background_column(phi, seed);
            let prey_here = (beta - prey_b).abs() <= prey_half && prey_d < d_wall;
            for (r, &e) in self.row_elevation.iter().enumerate() {
                let v = if prey_here && e <= prey_top && e >= prey_bottom {
                    prey_shade((e - prey_bottom) / (prey_top - prey_bottom))
                } else if e > wall_top {
                    if window && e > 0.12 {
                        0.95
                    } else {
                        room - 0.1 * e
                    }
                } else if e >= skirting_top {
                    wall
                } else if e >= wall_bottom {
                    0.3
                } else {
                    let g = hc * self.row_cot[r];
                    floor_shade(origin.0 + g * dir_x, origin.1 + g * dir_y, seed)
                };
                pixels[r * sw + c] = v.clamp(0.0, 1.0);
            }
        }
        GrayImage::new(sw, sh, pixels)
    }

    pub fn render_aps(&self, world: &World) -> (Frame, GroundTruth) {
        let raw = self.render_sensor(world);
        let frame = subsample_aps(&raw, self.config.width, world.t_us).expect("configured width is valid");
        (frame, self.ground_truth(world))
    }
}

pub fn render_aps(world: &World, config: &RenderConfig) -> (Frame, GroundTruth) {
    Renderer::new(*config).render_aps(world)
}
