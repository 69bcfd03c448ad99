//! Terrain and distance utilities, assembled into the m x 5 utility feature
//! that the classifier consumes.

use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, SegmentationImage};
use crate::error::{Error, Result};
use crate::kinematics::{Point, PreferenceSet, Trajectory};
use crate::world::TerrainLabel;

/// Number of utility columns.
pub const NUM_UTILITIES: usize = 5;

/// Column names in storage order. Columns 0..4 follow the terrain label codes 1..=4.
pub const COLUMN_NAMES: [&str; NUM_UTILITIES] = ["non_traversable", "water", "rock", "mud", "distance"];

/// Index of the distance column.
pub const DISTANCE_COLUMN: usize = 4;

/// One row per trajectory of the preference set, ordered by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UtilityFeature {
    rows: Vec<[f64; NUM_UTILITIES]>,
}

impl UtilityFeature {
    pub fn from_rows(rows: Vec<[f64; NUM_UTILITIES]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("utility feature needs at least one row"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("utility feature entries must be finite"));
        }
        Ok(Self { rows })
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[[f64; NUM_UTILITIES]] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[f64; NUM_UTILITIES] {
        &self.rows[i]
    }

    /// Reorders rows so that row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            rows: perm.iter().map(|&i| self.rows[i]).collect(),
        }
    }
}

/// Fraction of the trajectory's points whose projected pixel carries each
/// terrain label, in column order. Points outside the image count toward
/// no terrain but still toward `n`.
pub fn terrain_utilities(
    traj: &Trajectory,
    seg: &SegmentationImage,
    cam: &CameraModel,
) -> [f64; 4] {
    let mut counts = [0usize; 4];
    for pose in &traj.poses {
        if let Some((col, row)) = cam.project_to_pixel(pose.position()) {
            if let Some(k) = seg.get(col, row).column() {
                counts[k] += 1;
            }
        }
    }
    let n = traj.len() as f64;
    counts.map(|c| c as f64 / n)
}

/// Min-max normalized closeness of each trajectory's final point to the
/// nearest waypoint of `path_local`: 1 for the closest trajectory, 0 for the
/// farthest, all ones when every trajectory is equally close.
pub fn distance_utility(prefset: &PreferenceSet, path_local: &[Point]) -> Result<Vec<f64>> {
    if path_local.is_empty() {
        return Err(Error::invalid("distance utility needs at least one waypoint"));
    }
    let distances: Vec<f64> = prefset
        .trajectories()
        .iter()
        .map(|t| {
            let end = t.final_pose().position();
            path_local
                .iter()
                .map(|w| (w[0] - end[0]).hypot(w[1] - end[1]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let d_min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let d_max = distances.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = d_max - d_min;
    Ok(distances
        .iter()
        .map(|d| if span > 0.0 { 1.0 - (d - d_min) / span } else { 1.0 })
        .collect())
}

/// Assembles the utility feature for the current segmentation and the
/// reference path already windowed and expressed in the vehicle frame.
pub fn build_utility_feature(
    prefset: &PreferenceSet,
    seg: &SegmentationImage,
    cam: &CameraModel,
    path_local: &[Point],
) -> Result<UtilityFeature> {
    let distance = distance_utility(prefset, path_local)?;
    let rows = prefset
        .trajectories()
        .iter()
        .zip(distance)
        .map(|(traj, u5)| {
            let [u1, u2, u3, u4] = terrain_utilities(traj, seg, cam);
            [u1, u2, u3, u4, u5]
        })
        .collect();
    Ok(UtilityFeature { rows })
}

/// Label of the terrain column with the largest value in `row`, or
/// background when the row has no terrain coverage. Ties go to the lower code.
pub fn dominant_terrain(row: &[f64; NUM_UTILITIES]) -> TerrainLabel {
    let mut best = (0.0, TerrainLabel::Background);
    for (k, label) in TerrainLabel::TERRAINS.iter().enumerate() {
        if row[k] > best.0 {
            best = (row[k], *label);
        }
    }
    best.1
}
