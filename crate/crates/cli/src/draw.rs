//! Raster output: camera dumps, top-down episode tracks and loss curves.

use std::path::Path;

use anyhow::Context;
use image::{GrayImage, Rgb, RgbImage};

use terrapref::camera::SegmentationImage;
use terrapref::kinematics::{Point, Pose};
use terrapref::learner::EpochStats;
use terrapref::world::{Scenario, TerrainLabel};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const PATH: Rgb<u8> = Rgb([230, 200, 40]);
const TRACK: Rgb<u8> = Rgb([220, 30, 30]);
const TRAIN: Rgb<u8> = Rgb([40, 90, 200]);
const VALIDATION: Rgb<u8> = Rgb([230, 120, 20]);
const AXES: Rgb<u8> = Rgb([60, 60, 60]);

pub fn label_color(label: TerrainLabel) -> Rgb<u8> {
    match label {
        TerrainLabel::Background => Rgb([150, 175, 120]),
        TerrainLabel::NonTraversable => Rgb([35, 35, 35]),
        TerrainLabel::Water => Rgb([50, 110, 210]),
        TerrainLabel::Rock => Rgb([160, 160, 160]),
        TerrainLabel::Mud => Rgb([125, 85, 45]),
    }
}

/// Writes `<stem>-labels.png` (raw label codes as gray levels) and
/// `<stem>-color.png`.
pub fn dump_segmentation(seg: &SegmentationImage, dir: &Path, stem: &str) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let gray = GrayImage::from_raw(seg.width(), seg.height(), seg.to_codes()).expect("one code per pixel");
    let mut color = RgbImage::new(seg.width(), seg.height());
    for (col, row, px) in color.enumerate_pixels_mut() {
        *px = label_color(seg.get(col, row));
    }
    save(&gray, &dir.join(format!("{stem}-labels.png")))?;
    save(&color, &dir.join(format!("{stem}-color.png")))
}

fn save<P: image::PixelWithColorType>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>, path: &Path) -> anyhow::Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    img.save(path).with_context(|| format!("writing {}", path.display()))
}

/// Maps world coordinates to pixels of a top-down view.
struct TopDown {
    min: Point,
    scale: f64,
    height: u32,
}

impl TopDown {
    fn pixel(&self, p: Point) -> (f64, f64) {
        (
            (p[0] - self.min[0]) * self.scale,
            self.height as f64 - 1.0 - (p[1] - self.min[1]) * self.scale,
        )
    }

    fn world(&self, col: u32, row: u32) -> Point {
        [
            self.min[0] + (col as f64 + 0.5) / self.scale,
            self.min[1] + (self.height as f64 - 1.0 - row as f64 + 0.5) / self.scale,
        ]
    }
}

/// Top-down image of `world` with its reference path and the driven track.
pub fn render_track(world: &Scenario, track: &[Pose], pixels_per_metre: f64) -> RgbImage {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut grow = |p: Point| {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    };
    world.reference_path.waypoints.iter().for_each(|p| grow(*p));
    track.iter().for_each(|p| grow(p.position()));
    for patch in &world.patches {
        let (a, b) = patch.shape.bounds();
        grow(a);
        grow(b);
    }
    let margin = 2.0;
    let min = [lo[0] - margin, lo[1] - margin];
    let size = [hi[0] - lo[0] + 2.0 * margin, hi[1] - lo[1] + 2.0 * margin];
    // Keep long courses to a sensible image size.
    let scale = pixels_per_metre.min(4000.0 / size[0].max(size[1]));
    let width = (size[0] * scale).ceil().max(1.0) as u32;
    let height = (size[1] * scale).ceil().max(1.0) as u32;
    let view = TopDown { min, scale, height };

    let mut img = RgbImage::from_fn(width, height, |col, row| label_color(world.label_at(view.world(col, row))));
    polyline(&mut img, world.reference_path.waypoints.iter().map(|p| view.pixel(*p)), 1.0, PATH);
    polyline(&mut img, track.iter().map(|p| view.pixel(p.position())), 1.5, TRACK);
    if let Some(last) = track.last() {
        let (x, y) = view.pixel(last.position());
        disc(&mut img, x, y, 4.0, TRACK);
    }
    img
}

/// Training and validation loss per epoch; epoch 0 is the untrained model.
pub fn render_loss(history: &[EpochStats], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, WHITE);
    if history.is_empty() {
        return img;
    }
    let pad = 30.0;
    let max_epoch = history.iter().map(|s| s.epoch).max().unwrap_or(1).max(1) as f64;
    let max_loss = history
        .iter()
        .flat_map(|s| [s.train.loss, s.validation.loss])
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let (w, h) = (width as f64 - 2.0 * pad, height as f64 - 2.0 * pad);
    let at = |epoch: usize, loss: f64| (pad + epoch as f64 / max_epoch * w, pad + (1.0 - loss / max_loss) * h);
    polyline(&mut img, [(pad, pad), (pad, pad + h), (pad + w, pad + h)].into_iter(), 0.5, AXES);
    polyline(&mut img, history.iter().map(|s| at(s.epoch, s.train.loss)), 1.0, TRAIN);
    polyline(&mut img, history.iter().map(|s| at(s.epoch, s.validation.loss)), 1.0, VALIDATION);
    for s in history {
        let (x, y) = at(s.epoch, s.train.loss);
        disc(&mut img, x, y, 3.0, TRAIN);
        let (x, y) = at(s.epoch, s.validation.loss);
        disc(&mut img, x, y, 3.0, VALIDATION);
    }
    img
}

/// Polyline of the given half-width in pixels.
fn polyline(img: &mut RgbImage, points: impl Iterator<Item = (f64, f64)>, half_width: f64, color: Rgb<u8>) {
    let mut prev: Option<(f64, f64)> = None;
    for p in points {
        if let Some(a) = prev {
            let steps = (p.0 - a.0).abs().max((p.1 - a.1).abs()).ceil().max(1.0) as usize;
            for i in 0..=steps {
                let t = i as f64 / steps as f64;
                disc(img, a.0 + t * (p.0 - a.0), a.1 + t * (p.1 - a.1), half_width, color);
            }
        }
        prev = Some(p);
    }
}

fn disc(img: &mut RgbImage, x: f64, y: f64, r: f64, color: Rgb<u8>) {
    let r_i = r.ceil() as i64;
    for dy in -r_i..=r_i {
        for dx in -r_i..=r_i {
            if ((dx * dx + dy * dy) as f64) <= r * r {
                put(img, x + dx as f64, y + dy as f64, color);
            }
        }
    }
}

fn put(img: &mut RgbImage, x: f64, y: f64, color: Rgb<u8>) {
    let (x, y) = (x.round(), y.round());
    if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> anyhow::Result<()> {
    save(img, path)
}
