//! Predator-robot vision and control pipeline.
//!
//! DVS events are denoised and integrated into fixed-count histogram frames,
//! classified by a tiny CNN into ten region/size classes, turned into an
//! analog bearing and distance, and finally into velocity commands by a
//! finite-state machine with potential-field obstacle avoidance. The `sim`
//! module closes the loop in a 2D arena.

pub mod classes;
pub mod control;
pub mod events;
pub mod net;
pub mod sim;
pub mod steering;

pub use classes::{ClassOutputs, Label, Region, SizeClass, NUM_CLASSES};
pub use events::{Event, Frame, FrameKind, Polarity};
