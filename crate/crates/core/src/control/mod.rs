//! Pursuit behaviour: potential-field obstacle avoidance with hard and soft
//! safety zones, and the predator's finite state machine.

mod apf;
mod fsm;

pub use apf::{least_repulsive_direction, ray_angles, repulsive_field, soft_scale, LaserScan, RepulsiveField, ScanError};
pub use fsm::{fsm_step, ApfParams, FsmState, Mode, Side, SteerMode, VelocityCommand};
