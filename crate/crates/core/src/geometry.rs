//! Axis-aligned box arithmetic.
//!
//! Boxes use integer pixel coordinates with an exclusive maximum: a single
//! pixel at `(x, y)` is the box `(x, y, x + 1, y + 1)`. Empty boxes cannot be
//! constructed, so every [`BoundingBox`] has a strictly positive area.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Width and height of an image in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!("image size {width}x{height} must be positive")));
        }
        Ok(Self { width, height })
    }

    /// The box covering every pixel of the image.
    pub fn whole(&self) -> BoundingBox {
        BoundingBox {
            x_min: 0,
            y_min: 0,
            x_max: self.width,
            y_max: self.height,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    x_min: u32,
    y_min: u32,
    x_max: u32,
    y_max: u32,
}

impl BoundingBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self> {
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox {
                x_min: x_min.into(),
                y_min: y_min.into(),
                x_max: x_max.into(),
                y_max: y_max.into(),
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Clips possibly out-of-range coordinates to `size`. Returns `None` when
    /// nothing of the box is left inside the image.
    pub fn clamped(x_min: i64, y_min: i64, x_max: i64, y_max: i64, size: ImageSize) -> Option<Self> {
        let clip = |v: i64, hi: u32| v.clamp(0, i64::from(hi)) as u32;
        Self::new(
            clip(x_min, size.width),
            clip(y_min, size.height),
            clip(x_max, size.width),
            clip(y_max, size.height),
        )
        .ok()
    }

    pub fn x_min(&self) -> u32 {
        self.x_min
    }

    pub fn y_min(&self) -> u32 {
        self.y_min
    }

    pub fn x_max(&self) -> u32 {
        self.x_max
    }

    pub fn y_max(&self) -> u32 {
        self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn intersection(&self, other: &BoundingBox) -> Option<BoundingBox> {
        BoundingBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        )
        .ok()
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min && self.y_min <= other.y_min && self.x_max >= other.x_max && self.y_max >= other.y_max
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn fits(&self, size: ImageSize) -> bool {
        self.x_max <= size.width && self.y_max <= size.height
    }

    /// Smallest box covering both.
    pub fn hull(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn to_array(self) -> [u32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

impl std::str::FromStr for BoundingBox {
    type Err = Error;

    /// Parses `x_min,y_min,x_max,y_max`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::Invalid(format!("box `{s}` needs 4 coordinates")));
        }
        let mut v = [0u32; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::Invalid(format!("box `{s}`: bad coordinate `{part}`")))?;
        }
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl TryFrom<[i64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [i64; 4]) -> Result<Self> {
        let err = || Error::InvalidBox {
            x_min: v[0],
            y_min: v[1],
            x_max: v[2],
            y_max: v[3],
        };
        let conv = |c: i64| u32::try_from(c).map_err(|_| err());
        BoundingBox::new(conv(v[0])?, conv(v[1])?, conv(v[2])?, conv(v[3])?)
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union, computed on exact integer areas with a single
/// final division.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Minimal box enclosing every input box.
pub fn union_box(boxes: &[BoundingBox]) -> Result<BoundingBox> {
    let (first, rest) = boxes.split_first().ok_or(Error::NoCandidates)?;
    Ok(rest.iter().fold(*first, |acc, b| acc.hull(b)))
}
