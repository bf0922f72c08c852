//! Simulated 2D environment: obstacle segments and ray casting.
//!
//! Angles are in degrees, measured clockwise from world north (+y). A ray at
//! world angle `theta` travels along `(sin theta, cos theta)`.

use serde::Deserialize;
use thiserror::Error;

/// Intersections closer than this (cm) to the ray origin are ignored.
const MIN_HIT: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("scene parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("segment {index} has zero length")]
    EmptySegment { index: usize },
    #[error("segment {index} lies outside the scene bounds")]
    OutOfBounds { index: usize },
    #[error("scene bounds are degenerate")]
    DegenerateBounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
}

impl Segment {
    pub const fn new(ax: f64, ay: f64, bx: f64, by: f64) -> Self {
        Self {
            a: Point::new(ax, ay),
            b: Point::new(bx, by),
        }
    }

    pub fn length(&self) -> f64 {
        (self.b.x - self.a.x).hypot(self.b.y - self.a.y)
    }
}

/// Axis-aligned rectangle, `min` corner inclusive to `max` corner inclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub min: Point,
    pub max: Point,
}

impl Bounds {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self {
            min: Point::new(x0.min(x1), y0.min(y1)),
            max: Point::new(x0.max(x1), y0.max(y1)),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn diagonal(&self) -> f64 {
        (self.max.x - self.min.x).hypot(self.max.y - self.min.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    bounds: Bounds,
    segments: Vec<Segment>,
}

impl Scene {
    pub fn new(bounds: Bounds, segments: Vec<Segment>) -> Result<Self, SceneError> {
        if !(bounds.max.x > bounds.min.x && bounds.max.y > bounds.min.y) {
            return Err(SceneError::DegenerateBounds);
        }
        for (index, s) in segments.iter().enumerate() {
            if s.length() == 0.0 {
                return Err(SceneError::EmptySegment { index });
            }
            if !bounds.contains(s.a) || !bounds.contains(s.b) {
                return Err(SceneError::OutOfBounds { index });
            }
        }
        Ok(Self { bounds, segments })
    }

    /// A scene with no obstacles.
    pub fn empty(bounds: Bounds) -> Result<Self, SceneError> {
        Self::new(bounds, Vec::new())
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Distance (cm) from `pose` along world angle `pose.heading + azimuth`
    /// to the nearest segment, or `None` for a miss.
    pub fn ray_cast(&self, pose: &Pose, azimuth: f64) -> Option<f64> {
        ray_cast(self, pose, azimuth)
    }
}

/// Robot or sensor pose. Heading is kept in (-180, 180].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading: normalize_deg(heading),
        }
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Wraps an angle in degrees into (-180, 180].
pub fn normalize_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Unit direction of a world angle (degrees clockwise from north).
pub fn direction(world_deg: f64) -> (f64, f64) {
    let r = world_deg.to_radians();
    (r.sin(), r.cos())
}

pub fn ray_cast(scene: &Scene, pose: &Pose, azimuth: f64) -> Option<f64> {
    let (dx, dy) = direction(pose.heading + azimuth);
    let origin = pose.position();
    scene
        .segments
        .iter()
        .filter_map(|s| ray_segment(origin, dx, dy, s))
        .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))))
}

/// Ray parameter `t` (distance, since the direction is unit) of the
/// intersection with `seg`, if any.
fn ray_segment(o: Point, dx: f64, dy: f64, seg: &Segment) -> Option<f64> {
    let ex = seg.b.x - seg.a.x;
    let ey = seg.b.y - seg.a.y;
    let denom = dx * ey - dy * ex;
    let wx = seg.a.x - o.x;
    let wy = seg.a.y - o.y;
    if denom.abs() < 1e-12 {
        // Parallel. A collinear segment is hit at its nearest endpoint ahead.
        let cross = wx * dy - wy * dx;
        if cross.abs() > 1e-9 {
            return None;
        }
        let ta = wx * dx + wy * dy;
        let tb = (seg.b.x - o.x) * dx + (seg.b.y - o.y) * dy;
        return [ta, tb]
            .into_iter()
            .filter(|t| *t > MIN_HIT)
            .fold(None, |best: Option<f64>, t| Some(best.map_or(t, |b| b.min(t))));
    }
    let t = (wx * ey - wy * ex) / denom;
    let u = (wx * dy - wy * dx) / denom;
    const EDGE: f64 = 1e-12;
    if t > MIN_HIT && (-EDGE..=1.0 + EDGE).contains(&u) {
        Some(t)
    } else {
        None
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneDoc {
    bounds: [f64; 4],
    segments: Vec<[f64; 4]>,
}

/// Parses a scene document:
/// `{"bounds":[x0,y0,x1,y1],"segments":[[ax,ay,bx,by],...]}`.
pub fn load_scene(text: &str) -> Result<Scene, SceneError> {
    let doc: SceneDoc = serde_json::from_str(text).map_err(|e| SceneError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let [x0, y0, x1, y1] = doc.bounds;
    let segments = doc
        .segments
        .iter()
        .map(|&[ax, ay, bx, by]| Segment::new(ax, ay, bx, by))
        .collect();
    Scene::new(Bounds::new(x0, y0, x1, y1), segments)
}

/// The bundled 200 x 200 cm square room.
pub const SQUARE_ROOM: &str = include_str!("../fixtures/square_room.json");
