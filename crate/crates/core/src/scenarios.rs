//! Bundled scenario library: the ten training layouts, the seven test
//! layouts, an unseen-pair generalization layout, and the stitched training
//! course driven during demonstrations.
//!
//! Every layout is authored in a local frame with the reference path along
//! +x from the origin. Obstacles start at x = 10 m. The side that the
//! preferred terrain (or free grass) lies on alternates between layouts.
//!
//! Barrier depth follows the most preferred terrain in a layout (mud 1 m,
//! rock and water 0.15 m). A demonstrator that weighs terrain against path
//! distance only crosses a barrier that is shallow relative to how much it
//! dislikes the terrain; deeper barriers make turning around look better.

use crate::kinematics::{Point, Pose};
use crate::world::{ReferencePath, Scenario, Shape, TerrainLabel, TerrainPatch};

use TerrainLabel::{Background, Mud, NonTraversable, Rock, Water};

pub const WAYPOINT_SPACING: f64 = 0.25;
/// Length of each single-layout path.
pub const LAYOUT_LENGTH: f64 = 24.0;
/// Where obstacles begin along each layout.
pub const OBSTACLE_START: f64 = 10.0;
/// Half-width of crossing barriers; far beyond what a 3 s trajectory reaches.
pub const BARRIER_HALF_WIDTH: f64 = 7.0;
/// How far past the path the terrain to be avoided extends.
pub const PATH_COVER: f64 = 0.5;
/// Corner radius of single-terrain patches.
pub const CORNER_RADIUS: f64 = 0.5;
/// In a two-terrain choice the less preferred terrain covers the path and
/// ends this far past it; the preferred terrain takes over from there.
pub const CHOICE_SPLIT: f64 = 0.15;
/// Non-traversable terrain in a choice layout stays this far from the path.
pub const NON_TRAVERSABLE_CLEARANCE: f64 = 1.0;
/// The goal counts as reached once it is within a trajectory's reach.
pub const GOAL_RADIUS: f64 = 3.0;

/// Depth of a barrier whose most preferred terrain is `label`.
pub fn barrier_depth(label: TerrainLabel) -> f64 {
    match label {
        Mud => 1.0,
        Rock | Water => 0.15,
        _ => 1.0,
    }
}

/// A scenario in its local frame before placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub name: String,
    pub patches: Vec<TerrainPatch>,
    pub expected_preference: Option<TerrainLabel>,
}

impl Layout {
    fn new(name: &str, patches: Vec<TerrainPatch>, expected: TerrainLabel) -> Self {
        Self {
            name: name.into(),
            patches,
            expected_preference: Some(expected),
        }
    }

    /// The layout as a stand-alone scenario on a straight path.
    pub fn scenario(&self) -> Scenario {
        let mut course = CourseBuilder::new();
        course.place(&self.patches);
        course.straight(LAYOUT_LENGTH);
        course.finish(&self.name, self.expected_preference)
    }
}

/// Side of the path: +1 left, -1 right.
fn side_band(side: f64, from: f64, to: f64) -> (f64, f64) {
    let (a, b) = (side * from, side * to);
    (a.min(b), a.max(b))
}

fn band(label: TerrainLabel, x0: f64, depth: f64, y: (f64, f64)) -> TerrainPatch {
    TerrainPatch::rect(label, [x0, y.0], [x0 + depth, y.1])
}

/// Rectangle with its corners rounded off by arcs of `radius`, as a convex
/// polygon.
fn rounded_rect(min: Point, max: Point, radius: f64) -> Shape {
    const STEPS: usize = 6;
    let r = radius.min((max[0] - min[0]) / 2.0).min((max[1] - min[1]) / 2.0);
    let corners = [
        ([max[0] - r, min[1] + r], -std::f64::consts::FRAC_PI_2),
        ([max[0] - r, max[1] - r], 0.0),
        ([min[0] + r, max[1] - r], std::f64::consts::FRAC_PI_2),
        ([min[0] + r, min[1] + r], std::f64::consts::PI),
    ];
    let mut vertices = Vec::with_capacity(4 * (STEPS + 1));
    for (c, start) in corners {
        for i in 0..=STEPS {
            let a = start + std::f64::consts::FRAC_PI_2 * i as f64 / STEPS as f64;
            vertices.push([c[0] + r * a.cos(), c[1] + r * a.sin()]);
        }
    }
    Shape::Polygon { vertices }
}

/// Single patch covering the path, with free grass on `free_side`.
fn single_avoid(label: TerrainLabel, free_side: f64) -> Vec<TerrainPatch> {
    let (y0, y1) = side_band(-free_side, -PATH_COVER, 2.5);
    let shape = rounded_rect([OBSTACLE_START, y0], [OBSTACLE_START + 3.0, y1], CORNER_RADIUS);
    vec![TerrainPatch::new(label, shape)]
}

/// Two terrains side by side across the whole approach. The less preferred
/// one covers the path; the preferred one starts just beside it.
fn pair_barrier(preferred: TerrainLabel, other: TerrainLabel, preferred_side: f64) -> Vec<TerrainPatch> {
    let depth = barrier_depth(preferred);
    let split = if other == NonTraversable {
        -NON_TRAVERSABLE_CLEARANCE
    } else {
        CHOICE_SPLIT
    };
    vec![
        band(preferred, OBSTACLE_START, depth, side_band(preferred_side, split, BARRIER_HALF_WIDTH)),
        band(other, OBSTACLE_START, depth, side_band(-preferred_side, -split, BARRIER_HALF_WIDTH)),
    ]
}

/// The ten training layouts: four single-terrain avoidances followed by six
/// choices between terrains adjacent in the preference order.
pub fn training_layouts() -> Vec<Layout> {
    vec![
        Layout::new("train-01-water", single_avoid(Water, 1.0), Background),
        Layout::new("train-02-rock", single_avoid(Rock, -1.0), Background),
        Layout::new("train-03-mud", single_avoid(Mud, 1.0), Background),
        Layout::new("train-04-non-traversable", single_avoid(NonTraversable, -1.0), Background),
        Layout::new("train-05-mud-vs-rock", pair_barrier(Mud, Rock, 1.0), Mud),
        Layout::new("train-06-rock-vs-water", pair_barrier(Rock, Water, -1.0), Rock),
        Layout::new("train-07-water-vs-non-traversable", pair_barrier(Water, NonTraversable, 1.0), Water),
        Layout::new("train-08-non-traversable-vs-water", pair_barrier(Water, NonTraversable, -1.0), Water),
        Layout::new("train-09-water-vs-rock", pair_barrier(Rock, Water, 1.0), Rock),
        Layout::new("train-10-rock-vs-mud", pair_barrier(Mud, Rock, -1.0), Mud),
    ]
}

/// Regular polygon with circumradius `radius` whose corners are rounded by
/// arcs of `corner`; the edges stay where the sharp polygon's edges are.
fn rounded_regular_polygon(center: Point, radius: f64, sides: usize, phase: f64, corner: f64) -> Shape {
    const STEPS: usize = 6;
    let step = std::f64::consts::TAU / sides as f64;
    let half = step / 2.0;
    let inset = radius - corner / half.cos();
    let mut vertices = Vec::with_capacity(sides * (STEPS + 1));
    for i in 0..sides {
        let a = phase + i as f64 * step;
        let c = [center[0] + inset * a.cos(), center[1] + inset * a.sin()];
        for j in 0..=STEPS {
            let n = a - half + step * j as f64 / STEPS as f64;
            vertices.push([c[0] + corner * n.cos(), c[1] + corner * n.sin()]);
        }
    }
    Shape::Polygon { vertices }
}

/// Band of `depth` along x spanning `y`, sheared by `skew` metres per metre of y.
fn slanted_band(label: TerrainLabel, x0: f64, depth: f64, y: (f64, f64), skew: f64) -> TerrainPatch {
    let (y0, y1) = y;
    TerrainPatch::polygon(label, vec![
        [x0 + skew * y0, y0], [x0 + depth + skew * y0, y0],
        [x0 + depth + skew * y1, y1], [x0 + skew * y1, y1],
    ])
}

/// The seven test layouts. Shapes differ from training: circles, polygons,
/// slanted bands, three-way choices and a patch nested in another.
pub fn test_layouts() -> Vec<Layout> {
    let x0 = OBSTACLE_START;
    let w = BARRIER_HALF_WIDTH;
    let c = PATH_COVER;
    let split = CHOICE_SPLIT;
    let nt = NON_TRAVERSABLE_CLEARANCE;
    let skew = 0.15;
    let mud = barrier_depth(Mud);
    let rock = barrier_depth(Rock);
    vec![
        Layout::new(
            "test-1-water",
            vec![TerrainPatch::circle(Water, [x0 + 1.8, -1.8 + c], 1.8)],
            Background,
        ),
        Layout::new(
            "test-2-rock",
            vec![TerrainPatch::new(Rock, rounded_regular_polygon([x0 + 2.0, 2.0 - c], 2.0, 6, 0.0, CORNER_RADIUS))],
            Background,
        ),
        Layout::new(
            "test-3-mud-non-traversable",
            vec![
                slanted_band(Mud, x0, mud, (-nt, w), skew),
                slanted_band(NonTraversable, x0, mud, (-w, -nt), skew),
            ],
            Mud,
        ),
        Layout::new(
            "test-4-water-non-traversable-mud",
            vec![
                band(NonTraversable, x0, mud, (-w, -nt)),
                band(Water, x0, mud, (-nt, split)),
                band(Mud, x0, mud, (split, w)),
            ],
            Mud,
        ),
        Layout::new(
            "test-5-mud-rock-water",
            vec![
                slanted_band(Mud, x0, mud, (-w, -split), -skew),
                slanted_band(Rock, x0, mud, (-split, 2.0), -skew),
                slanted_band(Water, x0, mud, (2.0, w), -skew),
            ],
            Mud,
        ),
        Layout::new(
            "test-6-mud-water-inside",
            vec![
                band(Mud, x0, 3.0, (-w, w)),
                TerrainPatch::circle(Water, [x0 + 1.5, -0.5], 1.0),
            ],
            Mud,
        ),
        Layout::new(
            "test-7-rock-non-traversable",
            vec![
                slanted_band(Rock, x0, rock, (-w, nt), skew),
                slanted_band(NonTraversable, x0, rock, (nt, w), skew),
            ],
            Rock,
        ),
    ]
}

/// Mud next to water: a pair that never appears together in training.
pub fn generalization_layout() -> Layout {
    Layout::new("generalization-mud-vs-water", pair_barrier(Mud, Water, 1.0), Mud)
}

pub fn training_scenarios() -> Vec<Scenario> {
    training_layouts().iter().map(Layout::scenario).collect()
}

pub fn test_scenarios() -> Vec<Scenario> {
    test_layouts().iter().map(Layout::scenario).collect()
}

pub fn generalization_scenario() -> Scenario {
    generalization_layout().scenario()
}

/// All bundled layouts as scenarios, training first.
pub fn all_scenarios() -> Vec<Scenario> {
    let mut all = training_scenarios();
    all.extend(test_scenarios());
    all.push(generalization_scenario());
    all
}

pub fn by_name(name: &str) -> Option<Scenario> {
    if name == TRAINING_COURSE {
        return Some(training_course());
    }
    all_scenarios().into_iter().find(|s| s.name == name)
}

pub const TRAINING_COURSE: &str = "training-course";

/// The ten training layouts one after another on a single winding path,
/// joined by gentle alternating bends, driven twice: the second pass is the
/// mirror image of the first. About 570 m long.
pub fn training_course() -> Scenario {
    let mut course = CourseBuilder::new();
    course.straight(6.0);
    for mirrored in [false, true] {
        let mut bend = if mirrored { -0.5 } else { 0.5 };
        for layout in training_layouts() {
            let patches: Vec<TerrainPatch> = layout
                .patches
                .iter()
                .map(|p| match mirrored {
                    true => TerrainPatch::new(p.label, p.shape.mirrored()),
                    false => p.clone(),
                })
                .collect();
            course.place(&patches);
            course.straight(LAYOUT_LENGTH);
            course.arc(bend, 8.0);
            bend = -bend;
        }
    }
    course.straight(6.0);
    course.finish(TRAINING_COURSE, None)
}

/// Incrementally lays out a reference path and places local-frame patches
/// relative to the current end of the path.
#[derive(Debug, Clone)]
pub struct CourseBuilder {
    waypoints: Vec<Point>,
    patches: Vec<TerrainPatch>,
    end: Pose,
}

impl Default for CourseBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl CourseBuilder {
    pub fn new() -> Self {
        Self {
            waypoints: vec![[0.0, 0.0]],
            patches: Vec::new(),
            end: Pose::ORIGIN,
        }
    }

    pub fn end(&self) -> Pose {
        self.end
    }

    /// Adds patches given in the frame of the current path end.
    pub fn place(&mut self, patches: &[TerrainPatch]) {
        for p in patches {
            self.patches
                .push(TerrainPatch::new(p.label, p.shape.transformed(&self.end)));
        }
    }

    pub fn straight(&mut self, length: f64) {
        let steps = (length / WAYPOINT_SPACING).round() as usize;
        let start = self.end;
        for i in 1..=steps {
            let p = start.to_world([i as f64 * WAYPOINT_SPACING, 0.0]);
            self.waypoints.push(p);
        }
        let end = start.to_world([steps as f64 * WAYPOINT_SPACING, 0.0]);
        self.end = Pose::new(end[0], end[1], start.theta);
    }

    /// Circular bend turning by `angle` radians (positive is left).
    pub fn arc(&mut self, angle: f64, radius: f64) {
        let steps = ((angle.abs() * radius) / WAYPOINT_SPACING).round().max(1.0) as usize;
        let start = self.end;
        let side = angle.signum();
        let point_at = |a: f64| start.to_world([radius * a.sin(), side * radius * (1.0 - a.cos())]);
        for i in 1..=steps {
            let a = angle.abs() * i as f64 / steps as f64;
            self.waypoints.push(point_at(a));
        }
        let end = point_at(angle.abs());
        self.end = Pose::new(end[0], end[1], start.theta + angle);
    }

    pub fn finish(self, name: &str, expected: Option<TerrainLabel>) -> Scenario {
        Scenario {
            name: name.into(),
            patches: self.patches,
            reference_path: ReferencePath::new(self.waypoints).expect("builder paths are valid"),
            start_pose: Pose::ORIGIN,
            goal_radius: GOAL_RADIUS,
            expected_preference: expected,
        }
    }
}
