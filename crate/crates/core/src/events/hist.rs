use serde::{Deserialize, Serialize};

use super::{Event, Frame, FrameKind, SENSOR_HEIGHT, SENSOR_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistConfig {
    pub width: usize,
    /// Events per histogram.
    pub n_target: usize,
    /// Per-pixel saturation of the signed count (hot pixels).
    pub clip: i32,
}

impl Default for HistConfig {
    fn default() -> Self {
        Self {
            width: 36,
            n_target: 5000,
            clip: 16,
        }
    }
}

/// Signed ON-minus-OFF event counts on the network's input grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    pub width: usize,
    pub counts: Vec<i32>,
}

impl CountGrid {
    pub fn zeros(width: usize) -> Self {
        Self {
            width,
            counts: vec![0; width * width],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> i32 {
        self.counts[y * self.width + x]
    }

    pub fn negated(&self) -> Self {
        Self {
            width: self.width,
            counts: self.counts.iter().map(|c| -c).collect(),
        }
    }
}

/// Sensor pixel to grid cell by truncated division of the pixel-center
/// coordinate, per axis. Using the center keeps the mapping symmetric under
/// horizontal mirroring (x -> 239 - x lands in cell width - 1 - cell).
pub fn target_pixel(x: u16, y: u16, width: usize) -> (usize, usize) {
    (
        grid_cell(x as usize, SENSOR_WIDTH as usize, width),
        grid_cell(y as usize, SENSOR_HEIGHT as usize, width),
    )
}

pub(crate) fn grid_cell(coord: usize, source_len: usize, width: usize) -> usize {
    (2 * coord + 1) * width / (2 * source_len)
}

#[derive(Debug, Clone)]
pub struct HistAccumulator {
    config: HistConfig,
    grid: CountGrid,
    n_collected: usize,
}

impl HistAccumulator {
    pub fn new(config: HistConfig) -> Self {
        assert!(config.n_target > 0, "n_target must be positive");
        assert!(config.clip > 0, "clip must be positive");
        Self {
            config,
            grid: CountGrid::zeros(config.width),
            n_collected: 0,
        }
    }

    pub fn config(&self) -> HistConfig {
        self.config
    }

    pub fn n_collected(&self) -> usize {
        self.n_collected
    }

    /// Add one event; returns the finished grid every `n_target` events.
    pub fn accumulate(&mut self, e: &Event) -> Option<CountGrid> {
        let (tx, ty) = target_pixel(e.x, e.y, self.config.width);
        let cell = &mut self.grid.counts[ty * self.config.width + tx];
        *cell = (*cell + e.polarity.sign()).clamp(-self.config.clip, self.config.clip);
        self.n_collected += 1;
        if self.n_collected == self.config.n_target {
            self.n_collected = 0;
            Some(std::mem::replace(
                &mut self.grid,
                CountGrid::zeros(self.config.width),
            ))
        } else {
            None
        }
    }

    pub fn reset(&mut self) {
        self.grid = CountGrid::zeros(self.config.width);
        self.n_collected = 0;
    }
}

/// Spread of the nonzero counts about the zero-event level (their RMS).
pub fn histogram_sigma(grid: &CountGrid) -> f64 {
    let (sum_sq, n) = grid
        .counts
        .iter()
        .filter(|&&c| c != 0)
        .fold((0.0, 0usize), |(s, n), &c| (s + (c as f64).powi(2), n + 1));
    if n == 0 {
        0.0
    } else {
        (sum_sq / n as f64).sqrt()
    }
}

/// Map counts to gray levels: `0.5 + count / (6 sigma)`, clamped to [0, 1].
/// Zero counts land exactly on 0.5; sigma = 0 gives a uniform 0.5 frame.
pub fn normalize_with_sigma(grid: &CountGrid, sigma: f64, t: u64) -> Frame {
    let pixels = if sigma > 0.0 {
        let scale = 1.0 / (6.0 * sigma);
        grid.counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.5
                } else {
                    (0.5 + c as f64 * scale).clamp(0.0, 1.0)
                }
            })
            .collect()
    } else {
        vec![0.5; grid.counts.len()]
    };
    Frame::new(grid.width, pixels, FrameKind::Dvs, t).expect("normalized pixels are in range")
}

pub fn normalize_histogram(grid: &CountGrid, t: u64) -> Frame {
    normalize_with_sigma(grid, histogram_sigma(grid), t)
}
