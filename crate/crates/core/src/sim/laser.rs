use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::world::{Role, World};
use crate::control::LaserScan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserConfig {
    pub rays: usize,
    /// Total frontal arc, radians.
    pub arc: f64,
    pub max_range: f64,
    pub rate_hz: f64,
}

impl Default for LaserConfig {
    fn default() -> Self {
        Self {
            rays: 181,
            arc: PI,
            max_range: 10.0,
            rate_hz: 20.0,
        }
    }
}

/// Cast every ray from the robot center against walls, clutter and the
/// other robot's footprint.
pub fn simulate_laser(world: &World, role: Role, config: &LaserConfig) -> LaserScan {
    let me = world.robot(role);
    let other = world.other(role).footprint();
    let origin = me.pose.position();
    let angles = crate::control::ray_angles(config.rays, config.arc);
    let ranges = angles
        .iter()
        .map(|&a| {
            let phi = me.pose.theta + a;
            let dir = (phi.cos(), phi.sin());
            world
                .arena
                .segments()
                .chain(other)
                .filter_map(|s| s.ray_hit(origin, dir).map(|h| h.0))
                .fold(config.max_range, f64::min)
        })
        .collect();
    LaserScan::new(ranges, angles, config.max_range).expect("ray casts are positive")
}
