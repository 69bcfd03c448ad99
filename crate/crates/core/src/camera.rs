//! Synthetic pinhole segmentation camera rigidly mounted on the vehicle.
//!
//! Vehicle frame: x forward, y left, z up. The camera sits at
//! `(mount_forward_offset, 0, mount_height)` looking forward, pitched down by
//! `pitch_down`. Image coordinates put the center of pixel `(col, row)` at
//! `(u, v) = (col, row)`, with `v` growing downward and the principal point at
//! `(width / 2, height / 2)`. Square pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{Point, Pose, Trajectory};
use crate::world::{Scenario, TerrainLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    /// Radians.
    pub horizontal_fov: f64,
    pub mount_height: f64,
    /// Radians below the horizontal.
    pub pitch_down: f64,
    /// Mounting the camera behind the axle keeps the ground right in front
    /// of the vehicle in view.
    pub mount_forward_offset: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            horizontal_fov: 90f64.to_radians(),
            mount_height: 1.0,
            pitch_down: 30f64.to_radians(),
            mount_forward_offset: -0.35,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        use std::f64::consts::{FRAC_PI_2, PI};
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image must be non-empty"));
        }
        if !(self.horizontal_fov > 0.0 && self.horizontal_fov < PI) {
            return Err(Error::invalid(format!(
                "horizontal_fov must lie in (0, pi), got {}",
                self.horizontal_fov
            )));
        }
        if !(self.pitch_down > 0.0 && self.pitch_down < FRAC_PI_2) {
            return Err(Error::invalid(format!(
                "pitch_down must lie in (0, pi/2), got {}",
                self.pitch_down
            )));
        }
        if !(self.mount_height > 0.0) {
            return Err(Error::invalid("mount_height must be positive"));
        }
        if !self.mount_forward_offset.is_finite() {
            return Err(Error::invalid("mount_forward_offset must be finite"));
        }
        Ok(())
    }

    /// Focal length in pixels (same on both axes).
    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.horizontal_fov / 2.0).tan()
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Image row coordinate of the horizon line.
    pub fn horizon_v(&self) -> f64 {
        self.principal_point().1 - self.focal() * self.pitch_down.tan()
    }

    /// Sub-pixel image coordinates of the ground point `(x, y, 0)` given in
    /// the vehicle frame, or `None` when it is at or behind the image plane.
    pub fn project_ground(&self, local: Point) -> Option<(f64, f64)> {
        let (sin_p, cos_p) = self.pitch_down.sin_cos();
        let dx = local[0] - self.mount_forward_offset;
        let h = self.mount_height;
        let depth = dx * cos_p + h * sin_p;
        if !(depth > 1e-9) {
            return None;
        }
        let right = -local[1];
        let down = h * cos_p - dx * sin_p;
        let f = self.focal();
        let (cx, cy) = self.principal_point();
        Some((cx + f * right / depth, cy + f * down / depth))
    }

    /// Pixel holding sub-pixel coordinates `(u, v)`, if inside the image.
    pub fn pixel_at(&self, u: f64, v: f64) -> Option<(u32, u32)> {
        let col = (u + 0.5).floor();
        let row = (v + 0.5).floor();
        if col >= 0.0 && row >= 0.0 && col < self.width as f64 && row < self.height as f64 {
            Some((col as u32, row as u32))
        } else {
            None
        }
    }

    /// Pixel that images the ground point, when visible.
    pub fn project_to_pixel(&self, local: Point) -> Option<(u32, u32)> {
        self.project_ground(local)
            .and_then(|(u, v)| self.pixel_at(u, v))
    }

    /// Ground intersection (vehicle frame) of the ray through sub-pixel
    /// `(u, v)`; `None` for rays at or above the horizon.
    pub fn cast_ray(&self, u: f64, v: f64) -> Option<Point> {
        let (sin_p, cos_p) = self.pitch_down.sin_cos();
        let f = self.focal();
        let (cx, cy) = self.principal_point();
        let a = (u - cx) / f;
        let b = (v - cy) / f;
        let descent = b * cos_p + sin_p;
        if !(descent > 1e-9) {
            return None;
        }
        let t = self.mount_height / descent;
        Some([
            self.mount_forward_offset + t * (cos_p - b * sin_p),
            -t * a,
        ])
    }
}

/// Per-pixel terrain labels in row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationImage {
    width: u32,
    height: u32,
    labels: Vec<TerrainLabel>,
}

impl SegmentationImage {
    pub fn filled(width: u32, height: u32, label: TerrainLabel) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width as usize * height as usize],
        }
    }

    pub fn from_labels(width: u32, height: u32, labels: Vec<TerrainLabel>) -> Result<Self> {
        if labels.len() != width as usize * height as usize {
            return Err(Error::invalid(format!(
                "{} labels do not fill a {width}x{height} image",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, col: u32, row: u32) -> TerrainLabel {
        self.labels[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, col: u32, row: u32, label: TerrainLabel) {
        self.labels[row as usize * self.width as usize + col as usize] = label;
    }

    pub fn labels(&self) -> &[TerrainLabel] {
        &self.labels
    }

    pub fn row(&self, row: u32) -> &[TerrainLabel] {
        let w = self.width as usize;
        &self.labels[row as usize * w..(row as usize + 1) * w]
    }

    /// Label codes as raw bytes, one per pixel.
    pub fn to_codes(&self) -> Vec<u8> {
        self.labels.iter().map(|l| l.code()).collect()
    }
}

/// Ray-casting renderer with the per-pixel ground intersections cached.
#[derive(Debug, Clone)]
pub struct SegmentationRenderer {
    cam: CameraModel,
    /// Ground points in the vehicle frame per row; rows above the horizon are empty.
    rows: Vec<Vec<Point>>,
}

impl SegmentationRenderer {
    pub fn new(cam: &CameraModel) -> Self {
        let rows = (0..cam.height)
            .map(|row| {
                let hits: Vec<Point> = (0..cam.width)
                    .filter_map(|col| cam.cast_ray(col as f64, row as f64))
                    .collect();
                // Visibility depends only on the row, so rows are all or nothing.
                debug_assert!(hits.is_empty() || hits.len() == cam.width as usize);
                hits
            })
            .collect();
        Self {
            cam: cam.clone(),
            rows,
        }
    }

    pub fn camera(&self) -> &CameraModel {
        &self.cam
    }

    pub fn render(&self, world: &Scenario, vehicle: &Pose) -> SegmentationImage {
        let width = self.cam.width as usize;
        let mut image =
            SegmentationImage::filled(self.cam.width, self.cam.height, TerrainLabel::Background);
        if world.patches.is_empty() {
            return image;
        }
        let bounds: Vec<(Point, Point)> = world.patches.iter().map(|p| p.shape.bounds()).collect();
        let mut points = vec![[0.0; 2]; width];
        let mut candidates: Vec<usize> = Vec::with_capacity(world.patches.len());
        for (row, hits) in self.rows.iter().enumerate() {
            if hits.is_empty() {
                continue;
            }
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for (dst, local) in points.iter_mut().zip(hits) {
                let p = vehicle.to_world(*local);
                lo = [lo[0].min(p[0]), lo[1].min(p[1])];
                hi = [hi[0].max(p[0]), hi[1].max(p[1])];
                *dst = p;
            }
            candidates.clear();
            candidates.extend((0..world.patches.len()).rev().filter(|&i| {
                let (a, b) = bounds[i];
                a[0] <= hi[0] && b[0] >= lo[0] && a[1] <= hi[1] && b[1] >= lo[1]
            }));
            if candidates.is_empty() {
                continue;
            }
            let out = &mut image.labels[row * width..(row + 1) * width];
            for (label, p) in out.iter_mut().zip(&points) {
                if let Some(&i) = candidates
                    .iter()
                    .find(|&&i| world.patches[i].shape.contains(*p))
                {
                    *label = world.patches[i].label;
                }
            }
        }
        image
    }
}

/// Renders the ground-truth segmentation seen from `vehicle`.
pub fn render_segmentation(world: &Scenario, vehicle: &Pose, cam: &CameraModel) -> SegmentationImage {
    SegmentationRenderer::new(cam).render(world, vehicle)
}

/// Image coordinates of each trajectory pose (vehicle frame), `None` when
/// behind the camera or outside the image.
pub fn project_trajectory(traj: &Trajectory, cam: &CameraModel) -> Vec<Option<(f64, f64)>> {
    traj.poses
        .iter()
        .map(|p| {
            cam.project_ground(p.position())
                .filter(|&(u, v)| cam.pixel_at(u, v).is_some())
        })
        .collect()
}
