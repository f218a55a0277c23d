use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Robot body length along the heading, meters.
pub const ROBOT_LENGTH: f64 = 0.75;
/// Robot body width across the heading, meters.
pub const ROBOT_WIDTH: f64 = 0.54;
pub const ROBOT_HEIGHT: f64 = 0.37;
pub const MAX_SPEED: f64 = 2.0;
pub const MAX_TURN_RATE: f64 = PI;

pub const ARENA_WIDTH: f64 = 9.5;
pub const ARENA_HEIGHT: f64 = 6.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: (f64, f64),
    pub b: (f64, f64),
}

impl Segment {
    pub fn new(a: (f64, f64), b: (f64, f64)) -> Self {
        Self { a, b }
    }

    /// Distance along the ray `origin + s * dir` (|dir| = 1) to this
    /// segment, if it is hit at s > 0. Also returns the hit parameter along
    /// the segment in [0, 1].
    pub fn ray_hit(&self, origin: (f64, f64), dir: (f64, f64)) -> Option<(f64, f64)> {
        let e = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let denom = dir.0 * e.1 - dir.1 * e.0;
        if denom.abs() < 1e-15 {
            return None;
        }
        let w = (self.a.0 - origin.0, self.a.1 - origin.1);
        let s = (w.0 * e.1 - w.1 * e.0) / denom;
        let u = (w.0 * dir.1 - w.1 * dir.0) / denom;
        (s > 1e-12 && (0.0..=1.0).contains(&u)).then_some((s, u))
    }

    pub fn distance_to(&self, p: (f64, f64)) -> f64 {
        let e = (self.b.0 - self.a.0, self.b.1 - self.a.1);
        let len2 = e.0 * e.0 + e.1 * e.1;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.0 - self.a.0) * e.0 + (p.1 - self.a.1) * e.1) / len2).clamp(0.0, 1.0)
        };
        let q = (self.a.0 + t * e.0, self.a.1 + t * e.1);
        ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
    }

    pub fn length(&self) -> f64 {
        ((self.b.0 - self.a.0).powi(2) + (self.b.1 - self.a.1).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
    /// Extra obstacles; seen by the laser and the camera.
    #[serde(default)]
    pub clutter: Vec<Segment>,
}

impl Default for Arena {
    fn default() -> Self {
        Self {
            width: ARENA_WIDTH,
            height: ARENA_HEIGHT,
            clutter: vec![],
        }
    }
}

impl Arena {
    pub fn walls(&self) -> [Segment; 4] {
        let (w, h) = (self.width, self.height);
        [
            Segment::new((0.0, 0.0), (w, 0.0)),
            Segment::new((w, 0.0), (w, h)),
            Segment::new((w, h), (0.0, h)),
            Segment::new((0.0, h), (0.0, 0.0)),
        ]
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.walls().into_iter().chain(self.clutter.iter().copied())
    }

    /// Smallest distance from a point to any wall or clutter segment.
    pub fn clearance(&self, p: (f64, f64)) -> f64 {
        self.segments().map(|s| s.distance_to(p)).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Predator,
    Prey,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading, radians counter-clockwise from +x, in (-pi, pi].
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    pub fn distance_to(&self, other: &Pose) -> f64 {
        ((other.x - self.x).powi(2) + (other.y - self.y).powi(2)).sqrt()
    }

    /// Bearing of `other` in this pose's frame, radians, positive left.
    pub fn bearing_to(&self, other: &Pose) -> f64 {
        wrap_angle((other.y - self.y).atan2(other.x - self.x) - self.theta)
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose,
    /// Commanded forward speed, m/s.
    pub v: f64,
    /// Commanded turn rate, rad/s.
    pub w: f64,
    pub role: Role,
}

impl RobotState {
    pub fn new(pose: Pose, role: Role) -> Self {
        Self {
            pose,
            v: 0.0,
            w: 0.0,
            role,
        }
    }

    /// Set the command, clamped to the platform limits.
    pub fn command(&mut self, v: f64, w: f64) {
        let finite = |x: f64| if x.is_finite() { x } else { 0.0 };
        self.v = finite(v).clamp(-MAX_SPEED, MAX_SPEED);
        self.w = finite(w).clamp(-MAX_TURN_RATE, MAX_TURN_RATE);
    }

    /// Footprint corners, counter-clockwise from front-left.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.pose.theta.cos(), self.pose.theta.sin());
        let (hl, hw) = (ROBOT_LENGTH / 2.0, ROBOT_WIDTH / 2.0);
        let at = |a: f64, b: f64| (self.pose.x + a * c - b * s, self.pose.y + a * s + b * c);
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    pub fn footprint(&self) -> [Segment; 4] {
        let k = self.corners();
        [
            Segment::new(k[0], k[1]),
            Segment::new(k[1], k[2]),
            Segment::new(k[2], k[3]),
            Segment::new(k[3], k[0]),
        ]
    }

    /// Half extents of the footprint's axis-aligned bounding box.
    fn half_extents(&self) -> (f64, f64) {
        let (c, s) = (self.pose.theta.cos().abs(), self.pose.theta.sin().abs());
        let (hl, hw) = (ROBOT_LENGTH / 2.0, ROBOT_WIDTH / 2.0);
        (hl * c + hw * s, hl * s + hw * c)
    }

    /// Unicycle Euler step, then clamp the footprint inside the arena.
    pub fn integrate(&mut self, dt: f64, arena: &Arena) {
        let p = &mut self.pose;
        p.x += self.v * p.theta.cos() * dt;
        p.y += self.v * p.theta.sin() * dt;
        p.theta = wrap_angle(p.theta + self.w * dt);
        self.contain(arena);
    }

    /// Project the footprint back inside the walls. Returns whether it moved.
    pub fn contain(&mut self, arena: &Arena) -> bool {
        let (hx, hy) = self.half_extents();
        let x = self.pose.x.clamp(hx, arena.width - hx);
        let y = self.pose.y.clamp(hy, arena.height - hy);
        let moved = x != self.pose.x || y != self.pose.y;
        self.pose.x = x;
        self.pose.y = y;
        moved
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub arena: Arena,
    pub predator: RobotState,
    pub prey: RobotState,
    /// Simulated time, microseconds.
    pub t_us: u64,
}

impl World {
    pub fn new(arena: Arena, predator: Pose, prey: Pose) -> Self {
        let mut w = Self {
            arena,
            predator: RobotState::new(predator, Role::Predator),
            prey: RobotState::new(prey, Role::Prey),
            t_us: 0,
        };
        w.predator.contain(&w.arena);
        w.prey.contain(&w.arena);
        w
    }

    pub fn robot(&self, role: Role) -> &RobotState {
        match role {
            Role::Predator => &self.predator,
            Role::Prey => &self.prey,
        }
    }

    pub fn other(&self, role: Role) -> &RobotState {
        match role {
            Role::Predator => &self.prey,
            Role::Prey => &self.predator,
        }
    }

    pub fn t(&self) -> f64 {
        self.t_us as f64 * 1e-6
    }
}

/// Advance both robots by `dt` seconds, dt in (0, 0.05].
pub fn step(world: &World, dt: f64) -> World {
    assert!(dt > 0.0 && dt <= 0.05, "dt {dt} outside (0, 50 ms]");
    let mut next = world.clone();
    next.predator.integrate(dt, &world.arena);
    next.prey.integrate(dt, &world.arena);
    next.t_us += (dt * 1e6).round() as u64;
    next
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centered() -> World {
        World::new(Arena::default(), Pose::new(4.75, 3.35, 0.0), Pose::new(1.0, 1.0, 0.0))
    }

    #[test]
    fn straight_and_turn() {
        let mut w = centered();
        w.predator.command(1.0, 0.0);
        let mut n = w.clone();
        for _ in 0..20 {
            n = step(&n, 0.05);
        }
        assert!((n.predator.pose.x - 5.75).abs() < 1e-12);
        assert_eq!(n.t_us, 1_000_000);

        let mut w = centered();
        w.predator.command(0.0, PI);
        let mut n = w.clone();
        for _ in 0..20 {
            n = step(&n, 0.05);
        }
        assert!((n.predator.pose.theta.abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn zero_command_is_fixed_point() {
        let w = centered();
        let n = step(&w, 0.01);
        assert_eq!(n.predator.pose, w.predator.pose);
        assert_eq!(n.prey.pose, w.prey.pose);
    }

    #[test]
    fn wall_clamps() {
        let mut w = centered();
        w.predator.command(2.0, 0.0);
        let mut n = w;
        for _ in 0..200 {
            n = step(&n, 0.05);
        }
        assert!((n.predator.pose.x - (ARENA_WIDTH - ROBOT_LENGTH / 2.0)).abs() < 1e-12);
        assert!(n.predator.corners().iter().all(|c| c.0 <= ARENA_WIDTH + 1e-12));
    }

    #[test]
    fn command_limits() {
        let mut r = RobotState::new(Pose::default(), Role::Prey);
        r.command(5.0, -10.0);
        assert_eq!((r.v, r.w), (2.0, -PI));
        r.command(f64::NAN, 0.5);
        assert_eq!(r.v, 0.0);
    }

    #[test]
    fn ray_segment_hit() {
        let s = Segment::new((3.0, -1.0), (3.0, 1.0));
        let (d, u) = s.ray_hit((0.0, 0.0), (1.0, 0.0)).unwrap();
        assert!((d - 3.0).abs() < 1e-12 && (u - 0.5).abs() < 1e-12);
        assert!(s.ray_hit((0.0, 0.0), (-1.0, 0.0)).is_none());
        assert!(s.ray_hit((0.0, 0.0), (0.0, 1.0)).is_none());
    }

    #[test]
    fn bearing_convention() {
        let p = Pose::new(0.0, 0.0, 0.0);
        assert!((p.bearing_to(&Pose::new(0.0, 1.0, 0.0)) - PI / 2.0).abs() < 1e-12);
        assert!((p.bearing_to(&Pose::new(1.0, -1.0, 0.0)) + PI / 4.0).abs() < 1e-12);
        assert_eq!(wrap_angle(-PI), PI);
    }
}
