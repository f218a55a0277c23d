use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ApfParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScanError {
    #[error("scan has no rays")]
    Empty,
    #[error("{ranges} ranges but {angles} angles")]
    Length { ranges: usize, angles: usize },
    #[error("range {value} at ray {index} is not positive")]
    Range { index: usize, value: f64 },
    #[error("angles not strictly increasing at ray {0}")]
    Angles(usize),
    #[error("max range {0} is not positive")]
    MaxRange(f64),
}

/// One planar laser sweep. Angles are radians in the robot frame, positive
/// counter-clockwise (left), 0 straight ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaserScan {
    ranges: Vec<f64>,
    angles: Vec<f64>,
    max_range: f64,
}

impl LaserScan {
    /// Ranges beyond `max_range` (including infinity) are clamped to it.
    pub fn new(ranges: Vec<f64>, angles: Vec<f64>, max_range: f64) -> Result<Self, ScanError> {
        if !(max_range > 0.0 && max_range.is_finite()) {
            return Err(ScanError::MaxRange(max_range));
        }
        if ranges.is_empty() {
            return Err(ScanError::Empty);
        }
        if ranges.len() != angles.len() {
            return Err(ScanError::Length {
                ranges: ranges.len(),
                angles: angles.len(),
            });
        }
        if let Some(i) = (1..angles.len()).find(|&i| !(angles[i] > angles[i - 1])) {
            return Err(ScanError::Angles(i));
        }
        let mut ranges = ranges;
        for (index, r) in ranges.iter_mut().enumerate() {
            if !(*r > 0.0) {
                return Err(ScanError::Range { index, value: *r });
            }
            *r = r.min(max_range);
        }
        Ok(Self {
            ranges,
            angles,
            max_range,
        })
    }

    /// `n` rays spread evenly over `[-arc/2, arc/2]`, all at max range.
    pub fn empty(n: usize, arc: f64, max_range: f64) -> Self {
        let angles = ray_angles(n, arc);
        Self::new(vec![max_range; n], angles, max_range).expect("valid empty scan")
    }

    pub fn ranges(&self) -> &[f64] {
        &self.ranges
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn min_range(&self) -> f64 {
        self.ranges.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Smallest range among rays with |angle - center| <= half_width.
    pub fn min_range_in(&self, center: f64, half_width: f64) -> Option<f64> {
        self.angles
            .iter()
            .zip(&self.ranges)
            .filter(|(a, _)| (**a - center).abs() <= half_width)
            .map(|(_, &r)| r)
            .reduce(f64::min)
    }
}

/// `n` bearings spread evenly over `[-arc/2, arc/2]`.
pub fn ray_angles(n: usize, arc: f64) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| -arc / 2.0 + arc * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepulsiveField {
    pub magnitudes: Vec<f64>,
    /// Net force in the robot frame (x ahead, y left).
    pub force: (f64, f64),
}

/// Khatib-style repulsion: each ray closer than the soft radius pushes away
/// from its hit point with magnitude eta * (1/rho - 1/r_soft)^2.
pub fn repulsive_field(scan: &LaserScan, params: &ApfParams) -> RepulsiveField {
    let mut force = (0.0, 0.0);
    let magnitudes = scan
        .ranges
        .iter()
        .zip(&scan.angles)
        .map(|(&rho, &a)| {
            if rho >= params.r_soft {
                return 0.0;
            }
            let m = params.eta * (1.0 / rho - 1.0 / params.r_soft).powi(2);
            force.0 -= m * a.cos();
            force.1 -= m * a.sin();
            m
        })
        .collect();
    RepulsiveField { magnitudes, force }
}

/// Bearing whose +-`window` neighbourhood carries the least total
/// repulsion. Ties go to the smallest |bearing|, then to the right.
pub fn least_repulsive_direction(magnitudes: &[f64], angles: &[f64], window: f64) -> f64 {
    assert!(!magnitudes.is_empty() && magnitudes.len() == angles.len());
    let mut best = (f64::INFINITY, f64::INFINITY, 0.0);
    for &a in angles {
        let sum: f64 = angles
            .iter()
            .zip(magnitudes)
            .filter(|(b, _)| (**b - a).abs() <= window)
            .map(|(_, m)| m)
            .sum();
        let key = (sum, a.abs(), a);
        if key.partial_cmp(&best) == Some(std::cmp::Ordering::Less) {
            best = key;
        }
    }
    best.2
}

/// Speed factor from the nearest return: 0 inside the hard zone, 1 outside
/// the soft zone, linear in between.
pub fn soft_scale(scan: &LaserScan, params: &ApfParams) -> f64 {
    ((scan.min_range() - params.r_hard) / (params.r_soft - params.r_hard)).clamp(0.0, 1.0)
}
