//! Reference-point layout and ground-truth distances.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A position on the field, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        let p = Point2D { x, y };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_finite() && self.y.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "point ({}, {}) has a non-finite coordinate",
                self.x, self.y
            )))
        }
    }

    pub fn distance_to(&self, other: &Point2D) -> f64 {
        ground_truth_distance(self, other)
    }
}

/// Euclidean distance between two points.
pub fn ground_truth_distance(a: &Point2D, b: &Point2D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Reference points plus the base station they range against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLayout", into = "RawLayout")]
pub struct Layout {
    reference_points: Vec<Point2D>,
    base_station: Point2D,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayout {
    reference_points: Vec<Point2D>,
    base_station: Point2D,
}

impl TryFrom<RawLayout> for Layout {
    type Error = Error;

    fn try_from(raw: RawLayout) -> Result<Self> {
        Layout::new(raw.reference_points, raw.base_station)
    }
}

impl From<Layout> for RawLayout {
    fn from(layout: Layout) -> Self {
        RawLayout {
            reference_points: layout.reference_points,
            base_station: layout.base_station,
        }
    }
}

impl Layout {
    pub fn new(reference_points: Vec<Point2D>, base_station: Point2D) -> Result<Self> {
        if reference_points.is_empty() {
            return Err(Error::invalid("layout needs at least one reference point"));
        }
        base_station.validate()?;
        for (i, p) in reference_points.iter().enumerate() {
            p.validate()?;
            if *p == base_station {
                return Err(Error::invalid(format!(
                    "reference point ({}, {}) coincides with the base station",
                    p.x, p.y
                )));
            }
            if reference_points[..i].contains(p) {
                return Err(Error::invalid(format!(
                    "duplicate reference point ({}, {})",
                    p.x, p.y
                )));
            }
        }
        Ok(Layout {
            reference_points,
            base_station,
        })
    }

    pub fn reference_points(&self) -> &[Point2D] {
        &self.reference_points
    }

    pub fn base_station(&self) -> Point2D {
        self.base_station
    }

    /// Index of `rp` in the layout, by exact coordinate match.
    pub fn index_of(&self, rp: &Point2D) -> Option<usize> {
        self.reference_points.iter().position(|p| p == rp)
    }

    pub fn contains(&self, rp: &Point2D) -> bool {
        self.index_of(rp).is_some()
    }

    /// Ground-truth distance from `rp` to the base station.
    ///
    /// Fails if `rp` is not one of the layout's reference points.
    pub fn distance_to_base(&self, rp: &Point2D) -> Result<f64> {
        if !self.contains(rp) {
            return Err(Error::UnknownReferencePoint { x: rp.x, y: rp.y });
        }
        Ok(ground_truth_distance(rp, &self.base_station))
    }
}

impl Default for Layout {
    /// 3×3 grid with 10 m spacing from (0,0) to (20,20), base station at (−10,−10).
    fn default() -> Self {
        make_grid_layout(
            Point2D { x: 0.0, y: 0.0 },
            10.0,
            3,
            3,
            Point2D { x: -10.0, y: -10.0 },
        )
        .expect("default grid is valid")
    }
}

/// Builds a `rows × cols` grid of reference points, row-major from `origin`.
///
/// Point `(i, j)` (column `i`, row `j`) sits at `origin + (i·spacing, j·spacing)`.
pub fn make_grid_layout(
    origin: Point2D,
    spacing: f64,
    rows: usize,
    cols: usize,
    base: Point2D,
) -> Result<Layout> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::invalid(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!(
            "grid must have at least one row and column, got {rows}x{cols}"
        )));
    }
    origin.validate()?;
    let points = (0..rows)
        .flat_map(|j| {
            (0..cols).map(move |i| Point2D {
                x: origin.x + i as f64 * spacing,
                y: origin.y + j as f64 * spacing,
            })
        })
        .collect();
    Layout::new(points, base)
}
