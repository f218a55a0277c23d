//! The ten detector classes: three image regions times three prey sizes,
//! plus the non-visible class.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_CLASSES: usize = 10;
/// Index of the non-visible class in [`ClassOutputs`].
pub const N_INDEX: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    L,
    C,
    R,
    N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SizeClass {
    S,
    M,
    XL,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::L, Region::C, Region::R, Region::N];
    pub const VISIBLE: [Region; 3] = [Region::L, Region::C, Region::R];

    pub fn mirrored(self) -> Region {
        match self {
            Region::L => Region::R,
            Region::R => Region::L,
            other => other,
        }
    }

    /// Image third containing a bearing (degrees, positive right) in the
    /// 81 degree field of view; `None` outside it. The middle third is closed.
    pub fn for_bearing(beta: f64) -> Option<Region> {
        const HALF: f64 = 40.5;
        const THIRD: f64 = 13.5;
        if !beta.is_finite() || beta.abs() > HALF {
            None
        } else if beta < -THIRD {
            Some(Region::L)
        } else if beta > THIRD {
            Some(Region::R)
        } else {
            Some(Region::C)
        }
    }

    fn offset(self) -> Option<usize> {
        match self {
            Region::L => Some(0),
            Region::C => Some(3),
            Region::R => Some(6),
            Region::N => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::L => "L",
            Region::C => "C",
            Region::R => "R",
            Region::N => "N",
        }
    }
}

impl SizeClass {
    pub const ALL: [SizeClass; 3] = [SizeClass::S, SizeClass::M, SizeClass::XL];

    fn offset(self) -> usize {
        match self {
            SizeClass::S => 0,
            SizeClass::M => 1,
            SizeClass::XL => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SizeClass::S => "S",
            SizeClass::M => "M",
            SizeClass::XL => "XL",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LabelError {
    #[error("class index {0} out of range 0..10")]
    Index(usize),
    #[error("region N carries no size, region {0:?} needs one")]
    SizeMismatch(Region),
    #[error("cannot parse label {0:?}")]
    Parse(String),
}

/// A ground-truth or decided class: region plus size, size absent iff N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Label {
    region: Region,
    size: Option<SizeClass>,
}

impl Label {
    pub const ABSENT: Label = Label {
        region: Region::N,
        size: None,
    };

    pub fn new(region: Region, size: Option<SizeClass>) -> Result<Self, LabelError> {
        match (region, size) {
            (Region::N, None) => Ok(Self::ABSENT),
            (Region::N, Some(_)) | (_, None) => Err(LabelError::SizeMismatch(region)),
            (region, Some(size)) => Ok(Self {
                region,
                size: Some(size),
            }),
        }
    }

    pub fn visible(region: Region, size: SizeClass) -> Self {
        Self::new(region, Some(size)).expect("visible label needs L, C or R")
    }

    pub fn region(&self) -> Region {
        self.region
    }

    pub fn size(&self) -> Option<SizeClass> {
        self.size
    }

    pub fn is_visible(&self) -> bool {
        self.region != Region::N
    }

    /// Position in the output vector: L:S, L:M, L:XL, C:S, ..., R:XL, N.
    pub fn index(&self) -> usize {
        match (self.region.offset(), self.size) {
            (Some(base), Some(size)) => base + size.offset(),
            _ => N_INDEX,
        }
    }

    pub fn from_index(index: usize) -> Result<Self, LabelError> {
        if index == N_INDEX {
            return Ok(Self::ABSENT);
        }
        if index > N_INDEX {
            return Err(LabelError::Index(index));
        }
        let region = Region::VISIBLE[index / 3];
        let size = SizeClass::ALL[index % 3];
        Ok(Self::visible(region, size))
    }

    /// Horizontal mirror: L and R swap, everything else is unchanged.
    pub fn mirrored(&self) -> Self {
        Self {
            region: self.region.mirrored(),
            size: self.size,
        }
    }
}

impl TryFrom<usize> for Label {
    type Error = LabelError;
    fn try_from(index: usize) -> Result<Self, Self::Error> {
        Label::from_index(index)
    }
}

impl From<Label> for usize {
    fn from(label: Label) -> usize {
        label.index()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.size {
            Some(size) => write!(f, "{}:{}", self.region.as_str(), size.as_str()),
            None => f.write_str("N"),
        }
    }
}

impl FromStr for Label {
    type Err = LabelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || LabelError::Parse(s.to_string());
        if s == "N" {
            return Ok(Self::ABSENT);
        }
        let (region, size) = s.split_once(':').ok_or_else(bad)?;
        let region = match region {
            "L" => Region::L,
            "C" => Region::C,
            "R" => Region::R,
            _ => return Err(bad()),
        };
        let size = match size {
            "S" => SizeClass::S,
            "M" => SizeClass::M,
            "XL" => SizeClass::XL,
            _ => return Err(bad()),
        };
        Ok(Self::visible(region, size))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OutputsError {
    #[error("output {index} = {value} outside [0, 1]")]
    Range { index: usize, value: f64 },
    #[error("outputs sum to {0}, expected 1")]
    Sum(f64),
}

/// The ten softmax probabilities in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassOutputs(pub [f64; NUM_CLASSES]);

impl ClassOutputs {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(values: [f64; NUM_CLASSES]) -> Result<Self, OutputsError> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(OutputsError::Range { index, value });
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(OutputsError::Sum(sum));
        }
        Ok(Self(values))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn one_hot(label: Label) -> Self {
        let mut values = [0.0; NUM_CLASSES];
        values[label.index()] = 1.0;
        Self(values)
    }

    pub fn get(&self, region: Region, size: SizeClass) -> f64 {
        match region.offset() {
            Some(base) => self.0[base + size.offset()],
            None => self.0[N_INDEX],
        }
    }

    pub fn n(&self) -> f64 {
        self.0[N_INDEX]
    }

    /// Summed probability of one visible region over the three sizes.
    pub fn region_sum(&self, region: Region) -> f64 {
        match region {
            Region::N => self.n(),
            r => SizeClass::ALL.iter().map(|&s| self.get(r, s)).sum(),
        }
    }

    pub fn size_sum(&self, size: SizeClass) -> f64 {
        Region::VISIBLE.iter().map(|&r| self.get(r, size)).sum()
    }

    /// Index of the largest output; the first one wins on exact ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Swap every L output with its R counterpart.
    pub fn mirrored(&self) -> Self {
        let mut values = self.0;
        for k in 0..3 {
            values.swap(k, 6 + k);
        }
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip_covers_all_classes() {
        for i in 0..NUM_CLASSES {
            let label = Label::from_index(i).unwrap();
            assert_eq!(label.index(), i);
            assert_eq!(label.to_string().parse::<Label>().unwrap(), label);
        }
        assert!(Label::from_index(10).is_err());
    }

    #[test]
    fn class_order_matches_output_layout() {
        let names: Vec<String> = (0..NUM_CLASSES)
            .map(|i| Label::from_index(i).unwrap().to_string())
            .collect();
        assert_eq!(
            names,
            ["L:S", "L:M", "L:XL", "C:S", "C:M", "C:XL", "R:S", "R:M", "R:XL", "N"]
        );
    }

    #[test]
    fn n_has_no_size() {
        assert!(Label::new(Region::N, Some(SizeClass::S)).is_err());
        assert!(Label::new(Region::C, None).is_err());
    }

    #[test]
    fn mirror_swaps_sides_only() {
        assert_eq!(
            Label::visible(Region::L, SizeClass::S).mirrored(),
            Label::visible(Region::R, SizeClass::S)
        );
        assert_eq!(
            Label::visible(Region::C, SizeClass::XL).mirrored(),
            Label::visible(Region::C, SizeClass::XL)
        );
        assert_eq!(Label::ABSENT.mirrored(), Label::ABSENT);
    }

    #[test]
    fn outputs_validation() {
        assert!(ClassOutputs::new([0.1; 10]).is_ok());
        assert!(ClassOutputs::new([0.2; 10]).is_err());
        let mut v = [0.0; 10];
        v[0] = 1.5;
        v[1] = -0.5;
        assert!(matches!(
            ClassOutputs::new(v),
            Err(OutputsError::Range { index: 0, .. })
        ));
    }
}
