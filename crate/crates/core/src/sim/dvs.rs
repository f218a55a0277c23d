use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::events::{Event, GrayImage, Polarity, SENSOR_HEIGHT, SENSOR_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DvsModel {
    /// Contrast threshold in natural-log intensity units.
    pub c_thr: f64,
    /// Offset added to intensity before the log.
    pub eps: f64,
    /// Background noise, events per second over the whole array.
    pub noise_rate: f64,
}

impl Default for DvsModel {
    fn default() -> Self {
        Self {
            c_thr: 0.15,
            eps: 0.01,
            noise_rate: 0.0,
        }
    }
}

/// Idealized threshold integrator: every pixel keeps a reference log
/// intensity and fires one event per threshold crossed.
#[derive(Debug, Clone)]
pub struct DvsSensor {
    model: DvsModel,
    reference: Option<Vec<f64>>,
    /// Intensity last seen per pixel. An unchanged pixel cannot fire, since
    /// its residual is below threshold after every update.
    last: Vec<f64>,
}

impl DvsSensor {
    pub fn new(model: DvsModel) -> Self {
        assert!(model.c_thr > 0.0, "contrast threshold must be positive");
        assert!(model.eps > 0.0 && model.noise_rate >= 0.0);
        Self {
            model,
            reference: None,
            last: vec![],
        }
    }

    pub fn model(&self) -> DvsModel {
        self.model
    }

    /// Set every reference to the given image without emitting events.
    pub fn prime(&mut self, image: &GrayImage) {
        self.reference = Some(image.pixels.iter().map(|&p| (p + self.model.eps).ln()).collect());
        self.last = image.pixels.clone();
    }

    pub fn reset(&mut self) {
        self.reference = None;
        self.last.clear();
    }

    /// Events for the interval (t0, t1] ending on `image`, sorted by time.
    /// The first call only primes the references (plus noise).
    pub fn observe<R: Rng>(&mut self, image: &GrayImage, t0: u64, t1: u64, rng: &mut R) -> Vec<Event> {
        assert!(t1 > t0, "empty interval");
        assert_eq!((image.width, image.height), (SENSOR_WIDTH as usize, SENSOR_HEIGHT as usize));
        let mut events = Vec::new();
        let span = (t1 - t0) as f64;
        match &mut self.reference {
            None => self.prime(image),
            Some(reference) => {
                let c = self.model.c_thr;
                for (i, ((&p, r), last)) in image
                    .pixels
                    .iter()
                    .zip(reference.iter_mut())
                    .zip(self.last.iter_mut())
                    .enumerate()
                {
                    if p == *last {
                        continue;
                    }
                    *last = p;
                    let delta = (p + self.model.eps).ln() - *r;
                    let k = (delta.abs() / c).floor() as u64;
                    if k == 0 {
                        continue;
                    }
                    let polarity = if delta > 0.0 { Polarity::On } else { Polarity::Off };
                    *r += k as f64 * c * delta.signum();
                    let (x, y) = ((i % SENSOR_WIDTH as usize) as u16, (i / SENSOR_WIDTH as usize) as u16);
                    for j in 1..=k {
                        let t = t0 + (span * j as f64 / k as f64).round() as u64;
                        events.push(Event::new(t.max(t0 + 1), x, y, polarity));
                    }
                }
            }
        }
        if self.model.noise_rate > 0.0 {
            let mean = self.model.noise_rate * span * 1e-6;
            let n = Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0);
            for _ in 0..n {
                let t = rng.random_range(t0 + 1..=t1);
                let x = rng.random_range(0..SENSOR_WIDTH);
                let y = rng.random_range(0..SENSOR_HEIGHT);
                let polarity = if rng.random_bool(0.5) { Polarity::On } else { Polarity::Off };
                events.push(Event::new(t, x, y, polarity));
            }
        }
        events.sort_by_key(|e| (e.t, e.y, e.x));
        events
    }
}

/// Events between two renders, with references initialized from `prev`.
pub fn synthesize_dvs<R: Rng>(
    prev: &GrayImage,
    cur: &GrayImage,
    t0: u64,
    t1: u64,
    model: &DvsModel,
    rng: &mut R,
) -> Vec<Event> {
    let mut sensor = DvsSensor::new(*model);
    sensor.prime(prev);
    sensor.observe(cur, t0, t1, rng)
}
