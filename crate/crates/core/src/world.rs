//! Planar terrain world: labeled patches over a grass background, the
//! reference path and scenario files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Point, Pose};

/// Scenario file format version.
pub const SCENARIO_FORMAT: u32 = 1;

/// Terrain class. Codes 1..=4 are the terrain-utility columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum TerrainLabel {
    Background = 0,
    NonTraversable = 1,
    Water = 2,
    Rock = 3,
    Mud = 4,
}

impl TerrainLabel {
    pub const ALL: [TerrainLabel; 5] = [
        TerrainLabel::Background,
        TerrainLabel::NonTraversable,
        TerrainLabel::Water,
        TerrainLabel::Rock,
        TerrainLabel::Mud,
    ];

    /// The four labels that carry a terrain utility, in column order.
    pub const TERRAINS: [TerrainLabel; 4] = [
        TerrainLabel::NonTraversable,
        TerrainLabel::Water,
        TerrainLabel::Rock,
        TerrainLabel::Mud,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainLabel::Background => "background",
            TerrainLabel::NonTraversable => "non_traversable",
            TerrainLabel::Water => "water",
            TerrainLabel::Rock => "rock",
            TerrainLabel::Mud => "mud",
        }
    }

    /// Utility column (0..4) for terrain labels, `None` for background.
    pub fn column(self) -> Option<usize> {
        match self {
            TerrainLabel::Background => None,
            other => Some(other as usize - 1),
        }
    }
}

impl std::fmt::Display for TerrainLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle { center: Point, radius: f64 },
    Rect { min: Point, max: Point },
    /// Convex polygon; either winding is accepted.
    Polygon { vertices: Vec<Point> },
}

impl Shape {
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Shape::Circle { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy <= radius * radius
            }
            Shape::Rect { min, max } => {
                p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1]
            }
            Shape::Polygon { vertices } => {
                let mut sign = 0.0f64;
                for (i, a) in vertices.iter().enumerate() {
                    let b = vertices[(i + 1) % vertices.len()];
                    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                    if cross != 0.0 {
                        if sign == 0.0 {
                            sign = cross.signum();
                        } else if cross.signum() != sign {
                            return false;
                        }
                    }
                }
                true
            }
        }
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        match self {
            Shape::Circle { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            Shape::Rect { min, max } => (*min, *max),
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    lo = [lo[0].min(v[0]), lo[1].min(v[1])];
                    hi = [hi[0].max(v[0]), hi[1].max(v[1])];
                }
                (lo, hi)
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self {
            Shape::Circle { radius, .. } => std::f64::consts::PI * radius * radius,
            Shape::Rect { min, max } => (max[0] - min[0]) * (max[1] - min[1]),
            Shape::Polygon { vertices } => {
                let twice: f64 = vertices
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let b = vertices[(i + 1) % vertices.len()];
                        a[0] * b[1] - b[0] * a[1]
                    })
                    .sum();
                0.5 * twice.abs()
            }
        }
    }

    /// Applies a rigid transform: rotate by `pose.theta`, then translate.
    pub fn transformed(&self, pose: &Pose) -> Shape {
        match self {
            Shape::Circle { center, radius } => Shape::Circle {
                center: pose.to_world(*center),
                radius: *radius,
            },
            Shape::Rect { min, max } => {
                let corners = [*min, [max[0], min[1]], *max, [min[0], max[1]]];
                if pose.theta == 0.0 {
                    let lo = pose.to_world(*min);
                    let hi = pose.to_world(*max);
                    Shape::Rect { min: lo, max: hi }
                } else {
                    Shape::Polygon {
                        vertices: corners.iter().map(|c| pose.to_world(*c)).collect(),
                    }
                }
            }
            Shape::Polygon { vertices } => Shape::Polygon {
                vertices: vertices.iter().map(|v| pose.to_world(*v)).collect(),
            },
        }
    }

    /// Reflection across the x axis.
    pub fn mirrored(&self) -> Shape {
        let flip = |p: &Point| [p[0], -p[1]];
        match self {
            Shape::Circle { center, radius } => Shape::Circle {
                center: flip(center),
                radius: *radius,
            },
            Shape::Rect { min, max } => Shape::Rect {
                min: [min[0], -max[1]],
                max: [max[0], -min[1]],
            },
            Shape::Polygon { vertices } => Shape::Polygon {
                vertices: vertices.iter().map(flip).collect(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let finite = |p: &Point| p[0].is_finite() && p[1].is_finite();
        match self {
            Shape::Circle { center, radius } => {
                if !finite(center) || !(*radius > 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidScenario(format!(
                        "circle needs a positive radius, got {radius}"
                    )));
                }
            }
            Shape::Rect { min, max } => {
                if !finite(min) || !finite(max) || !(max[0] > min[0] && max[1] > min[1]) {
                    return Err(Error::InvalidScenario(format!(
                        "rect needs min < max, got {min:?}..{max:?}"
                    )));
                }
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 || !vertices.iter().all(finite) {
                    return Err(Error::InvalidScenario(
                        "polygon needs at least three finite vertices".into(),
                    ));
                }
                let mut sign = 0.0f64;
                let n = vertices.len();
                for i in 0..n {
                    let (a, b, c) = (vertices[i], vertices[(i + 1) % n], vertices[(i + 2) % n]);
                    let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
                    if cross != 0.0 {
                        if sign != 0.0 && cross.signum() != sign {
                            return Err(Error::InvalidScenario("polygon is not convex".into()));
                        }
                        sign = cross.signum();
                    }
                }
                if !(self.area() > 0.0) {
                    return Err(Error::InvalidScenario("polygon has zero area".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainPatch {
    pub label: TerrainLabel,
    pub shape: Shape,
}

impl TerrainPatch {
    pub fn new(label: TerrainLabel, shape: Shape) -> Self {
        Self { label, shape }
    }

    pub fn circle(label: TerrainLabel, center: Point, radius: f64) -> Self {
        Self::new(label, Shape::Circle { center, radius })
    }

    pub fn rect(label: TerrainLabel, min: Point, max: Point) -> Self {
        Self::new(label, Shape::Rect { min, max })
    }

    pub fn polygon(label: TerrainLabel, vertices: Vec<Point>) -> Self {
        Self::new(label, Shape::Polygon { vertices })
    }
}

/// Ordered waypoints in world meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReferencePath {
    pub waypoints: Vec<Point>,
}

impl ReferencePath {
    pub fn new(waypoints: Vec<Point>) -> Result<Self> {
        let path = Self { waypoints };
        path.validate()?;
        Ok(path)
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn last(&self) -> Point {
        *self.waypoints.last().expect("validated paths are non-empty")
    }

    /// Total polyline length in meters.
    pub fn length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    /// Distance from `p` to the polyline (segments, not just vertices).
    pub fn cross_track_distance(&self, p: Point) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::InvalidScenario(
                "reference path needs at least two waypoints".into(),
            ));
        }
        for (i, pair) in self.waypoints.windows(2).enumerate() {
            if !pair[0].iter().chain(&pair[1]).all(|c| c.is_finite()) {
                return Err(Error::InvalidScenario(format!("waypoint {i} is not finite")));
            }
            if pair[0] == pair[1] {
                return Err(Error::InvalidScenario(format!(
                    "waypoints {i} and {} coincide",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (abx, aby) = (b[0] - a[0], b[1] - a[1]);
    let len2 = abx * abx + aby * aby;
    let t = (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0);
    (p[0] - (a[0] + t * abx)).hypot(p[1] - (a[1] + t * aby))
}

/// Minimum Euclidean distance from `point` to the waypoints in `window`
/// and the index achieving it. Ties go to the smaller index.
pub fn nearest_waypoint_distance(
    path: &ReferencePath,
    point: Point,
    window: std::ops::Range<usize>,
) -> Result<(f64, usize)> {
    if window.is_empty() || window.end > path.len() {
        return Err(Error::invalid(format!(
            "waypoint window {window:?} is empty or exceeds path of {} waypoints",
            path.len()
        )));
    }
    let mut best = (f64::INFINITY, window.start);
    for i in window {
        let w = path.waypoints[i];
        let d = (w[0] - point[0]).hypot(w[1] - point[1]);
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub patches: Vec<TerrainPatch>,
    pub reference_path: ReferencePath,
    pub start_pose: Pose,
    pub goal_radius: f64,
    /// Terrain the demonstrator is expected to drive over; `background`
    /// means every patch should be avoided.
    #[serde(default)]
    pub expected_preference: Option<TerrainLabel>,
}

#[derive(Serialize)]
struct ScenarioDocRef<'a> {
    format: u32,
    #[serde(flatten)]
    scenario: &'a Scenario,
}

#[derive(Deserialize)]
struct ScenarioDoc {
    format: u32,
    #[serde(flatten)]
    scenario: serde_json::Value,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.reference_path.validate()?;
        for (i, patch) in self.patches.iter().enumerate() {
            if patch.label == TerrainLabel::Background {
                return Err(Error::InvalidScenario(format!(
                    "patch {i} uses the background label"
                )));
            }
            patch
                .shape
                .validate()
                .map_err(|e| Error::InvalidScenario(format!("patch {i}: {e}")))?;
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::InvalidScenario("goal_radius must be positive".into()));
        }
        let first = self.reference_path.waypoints[0];
        let gap = (first[0] - self.start_pose.x).hypot(first[1] - self.start_pose.y);
        if gap > 1.0 {
            return Err(Error::InvalidScenario(format!(
                "start pose is {gap:.2} m from the first waypoint (limit 1 m)"
            )));
        }
        Ok(())
    }

    /// Ground-truth terrain at `point`: the last patch in declaration order
    /// that contains it, else background.
    pub fn label_at(&self, point: Point) -> TerrainLabel {
        label_at(self, point)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioDocRef {
            format: SCENARIO_FORMAT,
            scenario: self,
        })
        .expect("scenario serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ScenarioDoc =
            serde_json::from_str(text).map_err(|e| Error::format("scenario", e))?;
        if doc.format != SCENARIO_FORMAT {
            return Err(Error::format(
                "scenario",
                format!("unsupported format {} (expected {SCENARIO_FORMAT})", doc.format),
            ));
        }
        let scenario: Scenario =
            serde_json::from_value(doc.scenario).map_err(|e| Error::format("scenario", e))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

pub fn label_at(world: &Scenario, point: Point) -> TerrainLabel {
    world
        .patches
        .iter()
        .rev()
        .find(|patch| patch.shape.contains(point))
        .map_or(TerrainLabel::Background, |patch| patch.label)
}
