use serde::{Deserialize, Serialize};

use super::{Event, SENSOR_HEIGHT, SENSOR_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Correlation window in microseconds.
    pub dt_max_us: u64,
    /// Neighborhood radius in pixels; the pixel itself is part of its neighborhood.
    pub radius: u16,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            dt_max_us: 10_000,
            radius: 1,
        }
    }
}

const NEVER: u64 = u64::MAX;

/// Background-activity filter: an event passes only if some pixel in its
/// (2r+1)^2 neighborhood fired within `dt_max_us` before it.
///
/// Every event, passed or not, stamps its own pixel, so two coincident noise
/// events can support each other. A fresh filter rejects until it has history.
#[derive(Debug, Clone)]
pub struct BackgroundFilter {
    config: FilterConfig,
    last_ts: Vec<u64>,
    passed: u64,
    rejected: u64,
}

impl BackgroundFilter {
    pub fn new(config: FilterConfig) -> Self {
        assert!(config.dt_max_us > 0, "dt_max must be positive");
        assert!(config.radius >= 1, "radius must be at least 1");
        Self {
            config,
            last_ts: vec![NEVER; SENSOR_WIDTH as usize * SENSOR_HEIGHT as usize],
            passed: 0,
            rejected: 0,
        }
    }

    pub fn config(&self) -> FilterConfig {
        self.config
    }

    pub fn step(&mut self, e: &Event) -> Option<Event> {
        if !e.in_bounds() {
            debug_assert!(false, "event outside sensor: {e:?}");
            return None;
        }
        let w = SENSOR_WIDTH as usize;
        let r = self.config.radius as usize;
        let (x, y) = (e.x as usize, e.y as usize);
        let x0 = x.saturating_sub(r);
        let x1 = (x + r).min(w - 1);
        let y0 = y.saturating_sub(r);
        let y1 = (y + r).min(SENSOR_HEIGHT as usize - 1);

        let mut supported = false;
        'scan: for ny in y0..=y1 {
            for &last in &self.last_ts[ny * w + x0..=ny * w + x1] {
                if last != NEVER && e.t >= last && e.t - last <= self.config.dt_max_us {
                    supported = true;
                    break 'scan;
                }
            }
        }
        self.last_ts[y * w + x] = e.t;

        if supported {
            self.passed += 1;
            Some(*e)
        } else {
            self.rejected += 1;
            None
        }
    }

    pub fn filter_stream<'a>(&mut self, events: impl IntoIterator<Item = &'a Event>) -> Vec<Event> {
        events.into_iter().filter_map(|e| self.step(e)).collect()
    }

    pub fn passed(&self) -> u64 {
        self.passed
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn reset(&mut self) {
        self.last_ts.fill(NEVER);
        self.passed = 0;
        self.rejected = 0;
    }
}

impl Default for BackgroundFilter {
    fn default() -> Self {
        Self::new(FilterConfig::default())
    }
}
