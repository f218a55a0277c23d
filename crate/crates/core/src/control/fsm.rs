use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::apf::{least_repulsive_direction, repulsive_field, soft_scale, LaserScan};
use crate::classes::{Label, Region};
use crate::steering::{rescale_to_fov, PositionVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Avoid,
    Wander,
    Approach,
    GoalAchieved,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Avoid, Mode::Wander, Mode::Approach, Mode::GoalAchieved];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Avoid => "Avoid",
            Mode::Wander => "Wander",
            Mode::Approach => "Approach",
            Mode::GoalAchieved => "GoalAchieved",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Sign of the angular velocity that turns toward this side.
    pub fn turn_sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

/// How the Approach state turns toward the prey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteerMode {
    /// Fixed rate with the sign of the L/C/R decision.
    Digital,
    /// Rate proportional to the analog bearing, saturating at the C border.
    Analog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfParams {
    pub r_hard: f64,
    pub r_soft: f64,
    pub eta: f64,
    pub v_max: f64,
    pub w_approach: f64,
    pub w_spin: f64,
    /// Half-width of the least-repulsive window, radians.
    pub window: f64,
    /// Extra clearance beyond r_hard before Avoid releases.
    pub avoid_hysteresis: f64,
    pub d_goal: f64,
    /// Half-width of the laser cone around the prey bearing used for the
    /// goal test, radians.
    pub goal_cone: f64,
    pub goal_timeout: f64,
    /// How long to spin after losing the prey before wandering, seconds.
    pub lost_timeout: f64,
    pub wander_v: f64,
    pub wander_turn: f64,
    pub wander_period: f64,
    /// |p| at and above which Approach runs at full speed.
    pub p_slow: f64,
    pub steer: SteerMode,
}

impl Default for ApfParams {
    fn default() -> Self {
        Self {
            r_hard: 0.7,
            r_soft: 1.5,
            eta: 0.05,
            v_max: 1.5,
            w_approach: PI / 3.0,
            w_spin: PI / 2.0,
            window: 30f64.to_radians(),
            avoid_hysteresis: 0.05,
            d_goal: 1.0,
            goal_cone: 6.75f64.to_radians(),
            goal_timeout: 5.0,
            lost_timeout: 4.0,
            wander_v: 1.0,
            wander_turn: PI / 6.0,
            wander_period: 3.0,
            p_slow: 2.5,
            steer: SteerMode::Digital,
        }
    }
}

impl ApfParams {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("r_hard", self.r_hard),
            ("eta", self.eta),
            ("v_max", self.v_max),
            ("w_approach", self.w_approach),
            ("w_spin", self.w_spin),
            ("d_goal", self.d_goal),
            ("p_slow", self.p_slow),
            ("wander_period", self.wander_period),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.r_soft <= self.r_hard {
            return Err(format!("r_soft {} must exceed r_hard {}", self.r_soft, self.r_hard));
        }
        if self.v_max > 2.0 {
            return Err(format!("v_max {} exceeds the 2 m/s robot limit", self.v_max));
        }
        if self.wander_v < 0.0 || self.wander_v > self.v_max {
            return Err(format!("wander_v {} outside [0, v_max]", self.wander_v));
        }
        if self.w_approach > PI / 2.0 || self.w_spin > PI / 2.0 || self.wander_turn > PI / 2.0 {
            return Err("angular rates are limited to pi/2 rad/s".into());
        }
        for (name, v) in [
            ("window", self.window),
            ("avoid_hysteresis", self.avoid_hysteresis),
            ("goal_cone", self.goal_cone),
            ("goal_timeout", self.goal_timeout),
            ("lost_timeout", self.lost_timeout),
            ("wander_turn", self.wander_turn),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub v: f64,
    pub w: f64,
}

impl VelocityCommand {
    pub const STOP: Self = Self { v: 0.0, w: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsmState {
    pub mode: Mode,
    pub last_seen_side: Option<Side>,
    /// Remaining hold time in GoalAchieved.
    pub goal_timer: f64,
    /// Time spent spinning since the prey was lost.
    pub lost_timer: f64,
    pub wander_w: f64,
    /// Time until the wander heading rate is resampled.
    pub wander_timer: f64,
    rng_state: u64,
}

impl FsmState {
    pub fn new(seed: u64) -> Self {
        Self {
            mode: Mode::Wander,
            last_seen_side: None,
            goal_timer: 0.0,
            lost_timer: 0.0,
            wander_w: 0.0,
            wander_timer: 0.0,
            rng_state: seed,
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }
}

/// Prey bearing in the robot frame (radians, positive left), if the analog
/// estimate points into the field of view.
fn prey_bearing(position: &PositionVector) -> Option<f64> {
    if !position.valid {
        return None;
    }
    rescale_to_fov(position.alpha).ok().map(|beta| -beta.to_radians())
}

/// One control tick. Pure: the same inputs always give the same outputs.
pub fn fsm_step(
    state: &FsmState,
    decision: Label,
    position: &PositionVector,
    scan: &LaserScan,
    dt: f64,
    params: &ApfParams,
) -> (FsmState, VelocityCommand) {
    let mut s = state.clone();
    match decision.region() {
        Region::L => s.last_seen_side = Some(Side::Left),
        Region::R => s.last_seen_side = Some(Side::Right),
        Region::C | Region::N => {}
    }
    let rho_min = scan.min_range();
    let field = repulsive_field(scan, params);

    let release = params.r_hard + params.avoid_hysteresis;
    if rho_min < params.r_hard || (state.mode == Mode::Avoid && rho_min < release) {
        s.mode = Mode::Avoid;
        let b = least_repulsive_direction(&field.magnitudes, scan.angles(), params.window);
        // Once facing the open direction, keep turning away from the push.
        let align = scan.angles().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let sign = if b.abs() > align {
            b.signum()
        } else if field.force.1 != 0.0 {
            field.force.1.signum()
        } else {
            1.0
        };
        return (s, VelocityCommand { v: 0.0, w: sign * params.w_spin });
    }

    let scale = soft_scale(scan, params);

    if state.mode == Mode::GoalAchieved {
        s.goal_timer -= dt;
        if s.goal_timer > 0.0 {
            return (s, VelocityCommand::STOP);
        }
        s.mode = Mode::Wander;
        s.goal_timer = 0.0;
        s.last_seen_side = None;
        return wander(s, &field, scan, scale, dt, params);
    }

    if decision.region() == Region::C {
        let center = prey_bearing(position).unwrap_or(0.0);
        if let Some(r) = scan.min_range_in(center, params.goal_cone) {
            if r < params.d_goal {
                s.mode = Mode::GoalAchieved;
                s.goal_timer = params.goal_timeout;
                s.lost_timer = 0.0;
                return (s, VelocityCommand::STOP);
            }
        }
    }

    if decision.is_visible() {
        s.mode = Mode::Approach;
        s.lost_timer = 0.0;
        let digital = match decision.region() {
            Region::L => params.w_approach,
            Region::R => -params.w_approach,
            _ => 0.0,
        };
        let w = match (params.steer, prey_bearing(position)) {
            (SteerMode::Analog, Some(b)) => {
                params.w_approach * (b / 13.5f64.to_radians()).clamp(-1.0, 1.0)
            }
            _ => digital,
        };
        let distance = if position.valid {
            (position.p_mag / params.p_slow).min(1.0)
        } else {
            1.0
        };
        let v = scale * params.v_max * distance;
        return (s, VelocityCommand { v, w });
    }

    if state.mode == Mode::Approach {
        if let Some(side) = s.last_seen_side {
            if s.lost_timer < params.lost_timeout {
                s.lost_timer += dt;
                let w = side.turn_sign() * params.w_spin;
                return (s, VelocityCommand { v: 0.0, w });
            }
        }
    }
    s.mode = Mode::Wander;
    s.lost_timer = 0.0;
    wander(s, &field, scan, scale, dt, params)
}

fn wander(
    mut s: FsmState,
    field: &super::RepulsiveField,
    scan: &LaserScan,
    scale: f64,
    dt: f64,
    params: &ApfParams,
) -> (FsmState, VelocityCommand) {
    s.wander_timer -= dt;
    if s.wander_timer <= 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(s.rng_state);
        s.wander_w = if params.wander_turn > 0.0 {
            rng.random_range(-params.wander_turn..=params.wander_turn)
        } else {
            0.0
        };
        s.rng_state = rng.next_u64();
        s.wander_timer = params.wander_period;
    }
    let w = if scale < 1.0 {
        // Follow the push; when it points backwards pick the open side.
        let push = field.force.1.atan2(field.force.0);
        let target = if push.abs() <= FRAC_PI_2 {
            push
        } else {
            let b = least_repulsive_direction(&field.magnitudes, scan.angles(), params.window);
            let side = if b != 0.0 { b.signum() } else { push.signum() };
            side * FRAC_PI_2
        };
        params.w_approach * (target / FRAC_PI_6).clamp(-1.0, 1.0)
    } else {
        s.wander_w
    };
    (s, VelocityCommand { v: scale * params.wander_v, w })
}
