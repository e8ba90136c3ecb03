//! Reference paths as densely sampled polylines with headings.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Point spacing used when sampling path primitives, m.
pub const SAMPLE_SPACING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub arclength: f64,
}

/// Wrap an angle to `(-π, π]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// A geometric primitive used to build paths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    Straight {
        length: f64,
    },
    /// Constant-radius arc; positive sweep turns left.
    Arc {
        radius: f64,
        sweep: f64,
    },
}

/// Result of projecting a pose onto a path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Signed lateral offset, positive to the left of the path.
    pub lateral: f64,
    /// Heading error wrapped to `(-π, π]`.
    pub heading_error: f64,
    pub arclength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    points: Vec<PathPoint>,
}

impl ReferencePath {
    /// Build from explicit points. Arclength must be strictly increasing.
    pub fn from_points(points: Vec<PathPoint>) -> Option<Self> {
        if points.is_empty() || points.windows(2).any(|w| w[1].arclength <= w[0].arclength) {
            return None;
        }
        Some(Self { points })
    }

    /// Sample a chain of primitives starting at `(x, y)` with `heading`.
    pub fn from_pieces(x: f64, y: f64, heading: f64, pieces: &[Piece]) -> Self {
        let mut points = vec![PathPoint {
            x,
            y,
            heading,
            arclength: 0.0,
        }];
        for piece in pieces {
            let start = *points.last().unwrap();
            match *piece {
                Piece::Straight { length } => {
                    let n = (length / SAMPLE_SPACING).ceil().max(1.0) as usize;
                    let (sin_h, cos_h) = start.heading.sin_cos();
                    for i in 1..=n {
                        let d = length * i as f64 / n as f64;
                        points.push(PathPoint {
                            x: start.x + d * cos_h,
                            y: start.y + d * sin_h,
                            heading: start.heading,
                            arclength: start.arclength + d,
                        });
                    }
                }
                Piece::Arc { radius, sweep } => {
                    let length = radius * sweep.abs();
                    let n = (length / SAMPLE_SPACING).ceil().max(1.0) as usize;
                    let side = sweep.signum();
                    // Center sits to the left for a left turn.
                    let cx = start.x - side * radius * start.heading.sin();
                    let cy = start.y + side * radius * start.heading.cos();
                    for i in 1..=n {
                        let turned = sweep * i as f64 / n as f64;
                        let heading = start.heading + turned;
                        points.push(PathPoint {
                            x: cx + side * radius * heading.sin(),
                            y: cy - side * radius * heading.cos(),
                            heading,
                            arclength: start.arclength + length * i as f64 / n as f64,
                        });
                    }
                }
            }
        }
        Self { points }
    }

    pub fn points(&self) -> &[PathPoint] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.arclength)
    }

    /// Position and heading at `arclength`, clamped to the path ends.
    pub fn point_at(&self, arclength: f64) -> PathPoint {
        let pts = &self.points;
        if pts.len() == 1 || arclength <= pts[0].arclength {
            return PathPoint {
                arclength: arclength.max(pts[0].arclength),
                ..pts[0]
            };
        }
        let last = pts[pts.len() - 1];
        if arclength >= last.arclength {
            return last;
        }
        let i = pts.partition_point(|p| p.arclength <= arclength) - 1;
        let (p0, p1) = (pts[i], pts[i + 1]);
        let u = (arclength - p0.arclength) / (p1.arclength - p0.arclength);
        PathPoint {
            x: p0.x + u * (p1.x - p0.x),
            y: p0.y + u * (p1.y - p0.y),
            heading: p0.heading + u * wrap_angle(p1.heading - p0.heading),
            arclength,
        }
    }

    /// World position at `arclength` shifted `offset` metres to the left.
    pub fn offset_point(&self, arclength: f64, offset: f64) -> (f64, f64, f64) {
        let p = self.point_at(arclength);
        (
            p.x - offset * p.heading.sin(),
            p.y + offset * p.heading.cos(),
            p.heading,
        )
    }

    /// Project a pose onto the path.
    pub fn project(&self, x: f64, y: f64, psi: f64) -> Projection {
        project_to_path(x, y, psi, self)
    }
}

/// Project `(x, y, psi)` onto the nearest point of `path`.
///
/// The projection is clamped to the path ends; the heading is interpolated
/// linearly along the matched segment.
pub fn project_to_path(x: f64, y: f64, psi: f64, path: &ReferencePath) -> Projection {
    let pts = &path.points;
    if pts.len() == 1 {
        let p = pts[0];
        let (sin_h, cos_h) = p.heading.sin_cos();
        return Projection {
            lateral: cos_h * (y - p.y) - sin_h * (x - p.x),
            heading_error: wrap_angle(psi - p.heading),
            arclength: p.arclength,
        };
    }
    let mut best = (f64::INFINITY, 0usize, 0.0);
    for (i, w) in pts.windows(2).enumerate() {
        let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
        let len2 = dx * dx + dy * dy;
        let u = (((x - w[0].x) * dx + (y - w[0].y) * dy) / len2).clamp(0.0, 1.0);
        let (px, py) = (w[0].x + u * dx, w[0].y + u * dy);
        let dist2 = (x - px).powi(2) + (y - py).powi(2);
        if dist2 < best.0 {
            best = (dist2, i, u);
        }
    }
    let (_, i, u) = best;
    let (p0, p1) = (pts[i], pts[i + 1]);
    let (dx, dy) = (p1.x - p0.x, p1.y - p0.y);
    let len = (dx * dx + dy * dy).sqrt();
    let (px, py) = (p0.x + u * dx, p0.y + u * dy);
    let lateral = (dx * (y - py) - dy * (x - px)) / len;
    let heading = p0.heading + u * wrap_angle(p1.heading - p0.heading);
    Projection {
        lateral,
        heading_error: wrap_angle(psi - heading),
        arclength: p0.arclength + u * (p1.arclength - p0.arclength),
    }
}
