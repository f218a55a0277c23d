//! DVS event ingestion and preprocessing: background-activity filtering,
//! fixed-event-count histograms, normalization, and APS frame handling.

mod filter;
mod frame;
mod hist;
mod io;

pub use filter::{BackgroundFilter, FilterConfig};
pub use frame::{augment_exposure, mirror, subsample_aps, Frame, FrameError, FrameKind, GrayImage};
pub use frame::{EXPOSURE_DELTAS, FRAME_WIDTHS};
pub use hist::{
    histogram_sigma, normalize_histogram, normalize_with_sigma, target_pixel, CountGrid,
    HistAccumulator, HistConfig,
};
pub use io::{parse_events, write_csv, write_evt1, EventError, EventFormat, EVT1_MAGIC, EVT1_RECORD_LEN};

use serde::{Deserialize, Serialize};

/// Sensor array width in pixels.
pub const SENSOR_WIDTH: u16 = 240;
/// Sensor array height in pixels.
pub const SENSOR_HEIGHT: u16 = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Off,
    On,
}

impl Polarity {
    pub fn sign(self) -> i32 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Polarity::Off),
            1 => Some(Polarity::On),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarity::Off => 0,
            Polarity::On => 1,
        }
    }
}

/// One address event. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, polarity: Polarity) -> Self {
        Self { t, x, y, polarity }
    }

    pub fn in_bounds(&self) -> bool {
        self.x < SENSOR_WIDTH && self.y < SENSOR_HEIGHT
    }

    /// Reflect about the vertical axis of the sensor.
    pub fn mirrored(&self) -> Self {
        Self {
            x: SENSOR_WIDTH - 1 - self.x,
            ..*self
        }
    }
}
