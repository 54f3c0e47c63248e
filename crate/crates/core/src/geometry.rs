//! Axis-aligned rectangles and UAV positions, all in meters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
///
/// Grid cells, sensor footprints and the map extent are all `Rect`s. A valid
/// rectangle has strictly positive area; operations that need an area check
/// it with [`Rect::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rect {
    /// Builds a rectangle and checks that it has positive area.
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let r = Rect {
            x_min,
            x_max,
            y_min,
            y_max,
        };
        r.validate()?;
        Ok(r)
    }

    /// Square of side `side` centered at `(cx, cy)`.
    pub fn centered(cx: f64, cy: f64, side: f64) -> Result<Self> {
        let h = 0.5 * side;
        Rect::new(cx - h, cx + h, cy - h, cy + h)
    }

    /// `[0, width] x [0, height]`.
    pub fn from_size(width: f64, height: f64) -> Result<Self> {
        Rect::new(0.0, width, 0.0, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_min.is_finite()
            && self.x_max.is_finite()
            && self.y_min.is_finite()
            && self.y_max.is_finite()
            && self.x_min < self.x_max
            && self.y_min < self.y_max;
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateRect {
                x_min: self.x_min,
                x_max: self.x_max,
                y_min: self.y_min,
                y_max: self.y_max,
            })
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Intersection with positive area, or `None` when the rectangles are
    /// disjoint or only touch along an edge.
    pub fn intersection(&self, other: &Rect) -> Option<Rect> {
        let r = Rect {
            x_min: self.x_min.max(other.x_min),
            x_max: self.x_max.min(other.x_max),
            y_min: self.y_min.max(other.y_min),
            y_max: self.y_max.min(other.y_max),
        };
        (r.x_min < r.x_max && r.y_min < r.y_max).then_some(r)
    }

    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x_min.max(other.x_min) < self.x_max.min(other.x_max)
            && self.y_min.max(other.y_min) < self.y_max.min(other.y_max)
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.x_min <= other.x_min
            && other.x_max <= self.x_max
            && self.y_min <= other.y_min
            && other.y_max <= self.y_max
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        self.x_min <= x && x <= self.x_max && self.y_min <= y && y <= self.y_max
    }
}

/// UAV position `(x, y, z)`; `z` is the altitude above the terrain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Pose {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Pose { x, y, z }
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }
}

impl From<[f64; 3]> for Pose {
    fn from(p: [f64; 3]) -> Self {
        Pose::new(p[0], p[1], p[2])
    }
}
