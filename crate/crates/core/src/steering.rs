//! From softmax outputs to steering: analog position vector, digital
//! decisions with transition constraints, low-pass filtering, and
//! quantized command emission.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classes::{ClassOutputs, Label, Region, SizeClass, NUM_CLASSES};

/// Horizontal field of view of the camera, degrees.
pub const FOV_DEG: f64 = 81.0;
/// Degrees of FOV per degree of analog angle: 81 / 180.
pub const FOV_SCALE: f64 = FOV_DEG / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringParams {
    /// Divisor on o(N) in the vertical component.
    pub r: f64,
    /// Distance scale; |p| = raw / kappa.
    pub kappa: f64,
    /// Low-pass time constant, seconds.
    pub tau: f64,
    /// Quantization step of the emitted angle, degrees.
    pub dq_alpha: f64,
    /// Quantization step of the emitted distance, meters.
    pub dq_p: f64,
}

impl Default for SteeringParams {
    fn default() -> Self {
        Self {
            r: 3.0,
            kappa: 1.0 / 15.0,
            tau: 0.1,
            dq_alpha: 20.0,
            dq_p: 1.0,
        }
    }
}

/// Prey position relative to the predator. `alpha` is in [0, 360) degrees:
/// 0 right, 90 ahead, 180 left, 270 behind. `p_mag` is meaningful only when
/// `valid`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionVector {
    pub alpha: f64,
    pub p_mag: f64,
    pub valid: bool,
    pub dx: f64,
    pub dy: f64,
}

pub fn region_mean(o: &ClassOutputs, region: Region) -> f64 {
    o.region_sum(region) / 3.0
}

pub fn size_mean(o: &ClassOutputs, size: SizeClass) -> f64 {
    o.size_sum(size) / 3.0
}

/// Horizontal and vertical projections of the prey direction.
pub fn projections(o: &ClassOutputs, r: f64) -> (f64, f64) {
    let dx = region_mean(o, Region::R) - region_mean(o, Region::L);
    let dy = region_mean(o, Region::C) - o.n() / r;
    (dx, dy)
}

/// Angle of (dx, dy) in degrees, [0, 360); `None` at the origin.
pub fn alpha_deg(dx: f64, dy: f64) -> Option<f64> {
    if dx == 0.0 && dy == 0.0 {
        return None;
    }
    Some(dy.atan2(dx).to_degrees().rem_euclid(360.0))
}

/// Distance estimate before scaling: (s(S) + s(M)) / 2 + s(XL) / 3.
pub fn raw_distance(o: &ClassOutputs) -> f64 {
    (size_mean(o, SizeClass::S) + size_mean(o, SizeClass::M)) / 2.0 + size_mean(o, SizeClass::XL) / 3.0
}

pub fn analog_position(o: &ClassOutputs, params: &SteeringParams) -> PositionVector {
    let (dx, dy) = projections(o, params.r);
    match alpha_deg(dx, dy) {
        Some(alpha) => {
            let valid = o.argmax() != Label::ABSENT.index();
            PositionVector {
                alpha,
                p_mag: if valid { raw_distance(o) / params.kappa } else { 0.0 },
                valid,
                dx,
                dy,
            }
        }
        None => PositionVector {
            alpha: 0.0,
            p_mag: 0.0,
            valid: false,
            dx,
            dy,
        },
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("angle {0} deg is outside the frontal half-plane (0, 180)")]
pub struct OutOfFov(pub f64);

/// Map the analog angle onto the camera's field of view: positive bearings
/// are to the right, 0 is straight ahead.
pub fn rescale_to_fov(alpha: f64) -> Result<f64, OutOfFov> {
    if !(0.0..=180.0).contains(&alpha) {
        return Err(OutOfFov(alpha));
    }
    Ok((90.0 - alpha) * FOV_SCALE)
}

/// Inverse of `rescale_to_fov`.
pub fn fov_to_alpha(beta: f64) -> f64 {
    90.0 - beta / FOV_SCALE
}

/// Region and size decisions by argmax of the summed outputs. Ties go to
/// the earlier entry in L, C, R, N and S, M, XL order.
pub fn digitize(o: &ClassOutputs) -> Label {
    let candidates = [
        (Region::L, o.region_sum(Region::L)),
        (Region::C, o.region_sum(Region::C)),
        (Region::R, o.region_sum(Region::R)),
        (Region::N, o.n()),
    ];
    let region = first_max(&candidates);
    if region == Region::N {
        return Label::ABSENT;
    }
    let sizes = [
        (SizeClass::S, o.size_sum(SizeClass::S)),
        (SizeClass::M, o.size_sum(SizeClass::M)),
        (SizeClass::XL, o.size_sum(SizeClass::XL)),
    ];
    Label::visible(region, first_max(&sizes))
}

fn first_max<T: Copy>(items: &[(T, f64)]) -> T {
    let mut best = items[0];
    for &item in &items[1..] {
        if item.1 > best.1 {
            best = item;
        }
    }
    best.0
}

pub fn region_transition_allowed(from: Region, to: Region) -> bool {
    !matches!(
        (from, to),
        (Region::L, Region::R) | (Region::R, Region::L) | (Region::C, Region::N) | (Region::N, Region::C)
    )
}

pub fn size_transition_allowed(from: SizeClass, to: SizeClass) -> bool {
    !matches!(
        (from, to),
        (SizeClass::S, SizeClass::XL) | (SizeClass::XL, SizeClass::S)
    )
}

/// Temporal logic on digital decisions. Region and size are filtered
/// independently; a forbidden jump keeps the previous value of that field.
/// A size is only tracked while the prey is visible; on reappearance any
/// size is accepted again.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintFilter {
    region: Option<Region>,
    size: Option<SizeClass>,
}

impl ConstraintFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Option<Label> {
        self.region.map(|region| match (region, self.size) {
            (Region::N, _) => Label::ABSENT,
            (r, size) => Label::visible(r, size.unwrap_or(SizeClass::M)),
        })
    }

    pub fn accept(&mut self, new: Label) -> Label {
        let region = match self.region {
            Some(prev) if !region_transition_allowed(prev, new.region()) => prev,
            _ => new.region(),
        };
        let size = match (self.size, new.size()) {
            _ if region == Region::N => None,
            (Some(prev), Some(s)) if !size_transition_allowed(prev, s) => Some(prev),
            (prev, None) => prev,
            (_, s) => s,
        };
        self.region = Some(region);
        self.size = size;
        if region == Region::N {
            Label::ABSENT
        } else {
            // A retained visible region may meet a decision without a size
            // (N rejected from C); fall back to M until a size arrives.
            Label::visible(region, size.unwrap_or(SizeClass::M))
        }
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

/// First-order low-pass step: y + dt / (tau + dt) * (x - y).
pub fn lowpass_update(prev: f64, new: f64, dt: f64, tau: f64) -> f64 {
    let k = if dt.is_infinite() { 1.0 } else { dt / (tau + dt) };
    prev + k * (new - prev)
}

/// Shortest signed angular difference b - a, in (-180, 180].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Low-pass on the circle, result in [0, 360).
pub fn lowpass_angle(prev: f64, new: f64, dt: f64, tau: f64) -> f64 {
    lowpass_update(prev, prev + angle_diff(prev, new), dt, tau).rem_euclid(360.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringCommand {
    pub alpha_q: f64,
    pub p_q: f64,
}

/// Emits a command only when the 20 deg / 1 m bin of the filtered value
/// changes. Bins are anchored at zero: [80, 100) is one angle bin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    last: Option<(i64, i64)>,
}

impl Quantizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, alpha: f64, p_mag: f64, params: &SteeringParams) -> Option<SteeringCommand> {
        let bins = (
            (alpha.rem_euclid(360.0) / params.dq_alpha).floor() as i64,
            (p_mag.max(0.0) / params.dq_p).floor() as i64,
        );
        if self.last == Some(bins) {
            return None;
        }
        self.last = Some(bins);
        Some(SteeringCommand {
            alpha_q: bins.0 as f64 * params.dq_alpha,
            p_q: bins.1 as f64 * params.dq_p,
        })
    }
}

/// Everything the controller needs from one network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringOutput {
    pub raw: PositionVector,
    pub decision: Label,
    pub alpha: f64,
    pub p_mag: f64,
    pub command: Option<SteeringCommand>,
}

/// Stateful chain: digitize, constrain, filter, quantize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringState {
    pub params: SteeringParams,
    filter: ConstraintFilter,
    alpha: Option<f64>,
    p_mag: Option<f64>,
    last_t: Option<f64>,
    quantizer: Quantizer,
}

impl SteeringState {
    pub fn new(params: SteeringParams) -> Self {
        Self {
            params,
            filter: ConstraintFilter::new(),
            alpha: None,
            p_mag: None,
            last_t: None,
            quantizer: Quantizer::new(),
        }
    }

    /// Process one output at time `t` seconds.
    pub fn update(&mut self, o: &ClassOutputs, t: f64) -> SteeringOutput {
        let raw = analog_position(o, &self.params);
        let decision = self.filter.accept(digitize(o));
        let dt = self.last_t.map_or(f64::INFINITY, |lt| (t - lt).max(0.0));
        self.last_t = Some(t);
        let alpha = match self.alpha {
            Some(prev) => lowpass_angle(prev, raw.alpha, dt, self.params.tau),
            None => raw.alpha,
        };
        self.alpha = Some(alpha);
        let mut command = None;
        let mut p_mag = self.p_mag.unwrap_or(0.0);
        if raw.valid {
            p_mag = match self.p_mag {
                Some(prev) => lowpass_update(prev, raw.p_mag, dt, self.params.tau),
                None => raw.p_mag,
            };
            self.p_mag = Some(p_mag);
            command = self.quantizer.update(alpha, p_mag, &self.params);
        }
        SteeringOutput {
            raw,
            decision,
            alpha,
            p_mag,
            command,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.params);
    }
}

/// Outputs that decode to a given visible label and bearing (degrees,
/// positive right). Mass stays on the label's size; the labelled region keeps
/// the largest share and the angle is met exactly, pulling the opposite side
/// region in when C and the labelled side alone cannot reach it. N gives a
/// one-hot N vector.
///
/// Used as the noiseless ground-truth softmax and as a soft training target.
pub fn encode_position(label: Label, beta: f64) -> ClassOutputs {
    let Some(size) = label.size() else {
        return ClassOutputs::one_hot(Label::ABSENT);
    };
    // Relative lead of a side label over C near the region border.
    const LEAD: f64 = 0.1;
    let third = FOV_DEG / 6.0;
    let half = FOV_DEG / 2.0;
    let beta = match label.region() {
        Region::L => beta.clamp(-half, -third),
        Region::R => beta.clamp(third, half),
        _ => beta.clamp(-third, third),
    };
    // Work on the right half; the left is its mirror.
    let (near, far) = if beta >= 0.0 { (Region::R, Region::L) } else { (Region::L, Region::R) };
    let from_near = fov_to_alpha(beta.abs()).to_radians();
    // (near - far) / C must equal k.
    let (sin, cos) = from_near.sin_cos();
    let k = cos / sin;
    let (p_c, p_near, p_far) = if label.region() == Region::C || cos >= (1.0 + LEAD) * sin {
        (sin / (sin + cos), cos / (sin + cos), 0.0)
    } else {
        let c = 1.0 / (3.0 + 2.0 * LEAD - k);
        (c, (1.0 + LEAD) * c, (1.0 + LEAD - k) * c)
    };
    let mut v = [0.0; NUM_CLASSES];
    v[Label::visible(Region::C, size).index()] = p_c;
    v[Label::visible(near, size).index()] = p_near;
    v[Label::visible(far, size).index()] = p_far;
    ClassOutputs::new(v).expect("valid distribution")
}
