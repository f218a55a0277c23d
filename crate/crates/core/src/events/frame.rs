use std::io::Cursor;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::hist::grid_cell;
use super::{SENSOR_HEIGHT, SENSOR_WIDTH};
use crate::classes::Label;

/// Supported network input widths.
pub const FRAME_WIDTHS: [usize; 3] = [36, 54, 72];

/// Gray-level shifts used for over/under-exposure augmentation.
pub const EXPOSURE_DELTAS: [f64; 4] = [-0.3, -0.15, 0.15, 0.3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    Aps,
    Dvs,
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame width {0} is not a positive multiple of 3")]
    Width(usize),
    #[error("expected {expected} pixels, got {actual}")]
    PixelCount { expected: usize, actual: usize },
    #[error("pixel {index} = {value} outside [0, 1]")]
    Range { index: usize, value: f64 },
    #[error("expected a {expected_w}x{expected_h} image, got {w}x{h}")]
    Dimensions {
        expected_w: usize,
        expected_h: usize,
        w: usize,
        h: usize,
    },
    #[error("exposure augmentation applies to APS frames only")]
    NotAps,
    #[error("pgm: {0}")]
    Pgm(String),
}

/// Square gray image fed to the network. Pixels are row-major in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    width: usize,
    pixels: Vec<f64>,
    kind: FrameKind,
    t: u64,
}

impl Frame {
    pub fn new(width: usize, pixels: Vec<f64>, kind: FrameKind, t: u64) -> Result<Self, FrameError> {
        if width == 0 || width % 3 != 0 {
            return Err(FrameError::Width(width));
        }
        if pixels.len() != width * width {
            return Err(FrameError::PixelCount {
                expected: width * width,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(FrameError::Range { index, value });
        }
        Ok(Self {
            width,
            pixels,
            kind,
            t,
        })
    }

    pub fn uniform(width: usize, value: f64, kind: FrameKind) -> Result<Self, FrameError> {
        Self::new(width, vec![value; width * width], kind, 0)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn kind(&self) -> FrameKind {
        self.kind
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn with_time(mut self, t: u64) -> Self {
        self.t = t;
        self
    }

    /// Binary PGM (P5, maxval 255), gray = round(pixel * 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let gray: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| (p * 255.0).round() as u8)
            .collect();
        encode_pgm(self.width, self.width, &gray)
    }

    pub fn from_pgm(bytes: &[u8], kind: FrameKind) -> Result<Self, FrameError> {
        let (w, h, gray) = decode_pgm(bytes)?;
        if w != h {
            return Err(FrameError::Dimensions {
                expected_w: h,
                expected_h: h,
                w,
                h,
            });
        }
        let pixels = gray.iter().map(|&g| g as f64 / 255.0).collect();
        Self::new(w, pixels, kind, 0)
    }
}

pub(crate) fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(gray.len() + 16);
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(gray, width as u32, height as u32, ExtendedColorType::L8)
        .expect("in-memory pgm encoding");
    out
}

pub(crate) fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), FrameError> {
    let img = ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Pnm)
        .decode()
        .map_err(|e| FrameError::Pgm(e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw()))
}

/// Full-resolution sensor image (APS readout or a simulator render).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count mismatch");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn sensor(value: f64) -> Self {
        Self::filled(SENSOR_WIDTH as usize, SENSOR_HEIGHT as usize, value)
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let gray: Vec<u8> = self
            .pixels
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        encode_pgm(self.width, self.height, &gray)
    }
}

/// Block-average a 240x180 sensor image down to `width` x `width`.
///
/// Columns and rows map independently by truncated division, so the full
/// horizontal field of view is kept and each image third spans the same
/// angle.
pub fn subsample_aps(raw: &GrayImage, width: usize, t: u64) -> Result<Frame, FrameError> {
    let (sw, sh) = (SENSOR_WIDTH as usize, SENSOR_HEIGHT as usize);
    if raw.width != sw || raw.height != sh {
        return Err(FrameError::Dimensions {
            expected_w: sw,
            expected_h: sh,
            w: raw.width,
            h: raw.height,
        });
    }
    if width == 0 || width % 3 != 0 {
        return Err(FrameError::Width(width));
    }
    let mut sums = vec![0.0; width * width];
    let mut counts = vec![0u32; width * width];
    for y in 0..sh {
        let ty = grid_cell(y, sh, width);
        for x in 0..sw {
            let tx = grid_cell(x, sw, width);
            sums[ty * width + tx] += raw.pixels[y * sw + x];
            counts[ty * width + tx] += 1;
        }
    }
    let pixels = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (s / c as f64).clamp(0.0, 1.0))
        .collect();
    Frame::new(width, pixels, FrameKind::Aps, t)
}

pub fn augment_exposure(f: &Frame, delta: f64) -> Result<Frame, FrameError> {
    if f.kind != FrameKind::Aps {
        return Err(FrameError::NotAps);
    }
    Ok(Frame {
        pixels: f.pixels.iter().map(|&p| (p + delta).clamp(0.0, 1.0)).collect(),
        ..f.clone()
    })
}

/// Reflect the frame about its vertical axis, swapping L and R in the label.
pub fn mirror(f: &Frame, label: Option<Label>) -> (Frame, Option<Label>) {
    let w = f.width;
    let mut pixels = f.pixels.clone();
    for row in pixels.chunks_mut(w) {
        row.reverse();
    }
    (Frame { pixels, ..f.clone() }, label.map(|l| l.mirrored()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classes::{Region, SizeClass};

    #[test]
    fn frame_invariants() {
        assert!(matches!(
            Frame::new(35, vec![0.0; 35 * 35], FrameKind::Aps, 0),
            Err(FrameError::Width(35))
        ));
        assert!(Frame::new(36, vec![1.2; 36 * 36], FrameKind::Aps, 0).is_err());
        assert!(Frame::new(36, vec![0.0; 10], FrameKind::Aps, 0).is_err());
    }

    #[test]
    fn constant_raw_stays_constant() {
        for width in FRAME_WIDTHS {
            let f = subsample_aps(&GrayImage::sensor(0.37), width, 0).unwrap();
            assert_eq!(f.width(), width);
            assert!(f.pixels().iter().all(|&p| (p - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn half_split_maps_to_column_18() {
        let mut raw = GrayImage::sensor(0.0);
        for y in 0..180 {
            for x in 120..240 {
                raw.pixels[y * 240 + x] = 1.0;
            }
        }
        let f = subsample_aps(&raw, 36, 0).unwrap();
        for y in 0..36 {
            for x in 0..36 {
                let expected = if x < 18 { 0.0 } else { 1.0 };
                assert_eq!(f.pixel(x, y), expected, "({x},{y})");
            }
        }
    }

    #[test]
    fn subsample_rejects_wrong_size() {
        assert!(matches!(
            subsample_aps(&GrayImage::filled(100, 100, 0.0), 36, 0),
            Err(FrameError::Dimensions { .. })
        ));
    }

    #[test]
    fn exposure_shift_and_clip() {
        let f = Frame::uniform(36, 0.9, FrameKind::Aps).unwrap();
        assert_eq!(augment_exposure(&f, 0.0).unwrap(), f);
        assert!(augment_exposure(&f, 0.3).unwrap().pixels().iter().all(|&p| p == 1.0));
        let g = Frame::uniform(36, 0.5, FrameKind::Aps).unwrap();
        let shifted = augment_exposure(&g, -0.2).unwrap();
        assert!(shifted.pixels().iter().all(|&p| (p - 0.3).abs() < 1e-12));
        let d = Frame::uniform(36, 0.5, FrameKind::Dvs).unwrap();
        assert!(matches!(augment_exposure(&d, 0.1), Err(FrameError::NotAps)));
    }

    #[test]
    fn mirror_moves_column_zero_to_last() {
        let mut pixels = vec![0.0; 36 * 36];
        pixels[5 * 36] = 1.0;
        let f = Frame::new(36, pixels, FrameKind::Dvs, 3).unwrap();
        let (m, label) = mirror(&f, Some(Label::visible(Region::L, SizeClass::S)));
        assert_eq!(m.pixel(35, 5), 1.0);
        assert_eq!(m.pixel(0, 5), 0.0);
        assert_eq!(label, Some(Label::visible(Region::R, SizeClass::S)));
        assert_eq!(mirror(&m, None).0, f);
    }

    #[test]
    fn pgm_round_trip_quantizes_to_255_levels() {
        let pixels: Vec<f64> = (0..36 * 36).map(|i| (i % 256) as f64 / 255.0).collect();
        let f = Frame::new(36, pixels, FrameKind::Aps, 0).unwrap();
        let bytes = f.to_pgm();
        assert!(bytes.starts_with(b"P5"));
        let back = Frame::from_pgm(&bytes, FrameKind::Aps).unwrap();
        for (a, b) in f.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
