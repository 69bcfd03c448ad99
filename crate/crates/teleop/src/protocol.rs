//! Websocket message schema, version [`PROTOCOL_VERSION`].
//!
//! Every message is one JSON text frame with a `type` tag.
//!
//! Server to client:
//!
//! ```json
//! {"type":"hello","protocol":1,"session":"s1","role":"driver","state":"idle","bin":10,
//!  "bins":[-1.0,-0.9,...],"image":{"width":640,"height":480},
//!  "overlay":[[[320.5,470.1],...],...],"scenario":{...}}
//! {"type":"frame","tick":12,"time":1.2,"state":"driving","bin":11,"w":0.1,"records":13,
//!  "recorded":true,"pose":{"x":1.2,"y":0.0,"theta":0.0},"path":[[1.25,0.0],...],
//!  "segmentation":{"width":640,"height":480,"rows":[[[0,640]],...]}}
//! {"type":"state","state":"paused","records":13,"reason":"driver disconnected"}
//! {"type":"finished","records":100,"reason":"finished by driver","dataset":"demo.jsonl"}
//! {"type":"error","message":"bin 30 is outside 0..21"}
//! ```
//!
//! Client to server:
//!
//! ```json
//! {"type":"input","w_raw":-0.48}
//! {"type":"input","bin":11}
//! {"type":"control","action":"start"}
//! ```
//!
//! Segmentation rows are run-length encoded as `[label_code, run_length]`
//! pairs, left to right.

use serde::{Deserialize, Serialize};

use terrapref::camera::SegmentationImage;
use terrapref::kinematics::{ControlSet, Point, Pose};
use terrapref::world::{Scenario, TerrainLabel};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Idle,
    Driving,
    Paused,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Driver,
    Spectator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    Start,
    Pause,
    Finish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub protocol: u32,
    pub session: String,
    pub role: Role,
    pub state: SessionState,
    pub bin: usize,
    /// Angular velocity of each bin.
    pub bins: Vec<f64>,
    pub image: ImageSize,
    /// The preference-set trajectories in image coordinates, one polyline
    /// per bin, visible points only. Fixed for the session.
    pub overlay: Vec<Vec<[f64; 2]>>,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    /// Perception tick index since the session started driving.
    pub tick: u64,
    pub time: f64,
    pub state: SessionState,
    /// The bin executed from this tick on, and stored as its label.
    pub bin: usize,
    pub w: f64,
    pub records: usize,
    /// Whether this tick produced a dataset record.
    pub recorded: bool,
    pub pose: Pose,
    /// Waypoints of the windowed reference path, world frame.
    pub path: Vec<Point>,
    pub segmentation: RleImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    Frame(Frame),
    State {
        state: SessionState,
        records: usize,
        reason: String,
    },
    Finished {
        records: usize,
        reason: String,
        dataset: Option<String>,
    },
    Error {
        message: String,
    },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    /// Exactly one of `w_raw` (snapped server-side) or `bin`.
    Input {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        w_raw: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bin: Option<usize>,
    },
    Control {
        action: ControlAction,
    },
}

impl ClientMessage {
    pub fn parse(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("client messages always serialize")
    }
}

/// Nearest bin to `raw_w` by absolute difference. Values beyond the range
/// clamp to the end bins; an exact midpoint goes to the bin nearer zero.
/// `raw_w` must be finite.
pub fn snap_to_bin(raw_w: f64, control_set: &ControlSet) -> usize {
    const TIE: f64 = 1e-9;
    let w = raw_w.clamp(control_set.w_min(), control_set.w_max());
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, cmd) in control_set.commands().iter().enumerate() {
        let dist = (cmd.w - w).abs();
        let closer_to_zero = cmd.w.abs() < control_set.commands()[best].w.abs();
        if dist < best_dist - TIE || (dist <= best_dist + TIE && closer_to_zero) {
            best = i;
            best_dist = dist;
        }
    }
    best
}

/// Run-length encoded label image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleImage {
    pub width: u32,
    pub height: u32,
    /// Per row, `[label_code, run_length]` pairs.
    pub rows: Vec<Vec<[u32; 2]>>,
}

impl RleImage {
    pub fn encode(image: &SegmentationImage) -> Self {
        let rows = (0..image.height())
            .map(|r| {
                let mut runs: Vec<[u32; 2]> = Vec::new();
                for label in image.row(r) {
                    let code = label.code() as u32;
                    match runs.last_mut() {
                        Some(run) if run[0] == code => run[1] += 1,
                        _ => runs.push([code, 1]),
                    }
                }
                runs
            })
            .collect();
        Self {
            width: image.width(),
            height: image.height(),
            rows,
        }
    }

    pub fn decode(&self) -> Result<SegmentationImage, String> {
        if self.rows.len() != self.height as usize {
            return Err(format!("expected {} rows, found {}", self.height, self.rows.len()));
        }
        let mut labels = Vec::with_capacity((self.width * self.height) as usize);
        for (r, runs) in self.rows.iter().enumerate() {
            let start = labels.len();
            for &[code, len] in runs {
                let label = u8::try_from(code)
                    .ok()
                    .and_then(TerrainLabel::from_code)
                    .ok_or_else(|| format!("row {r}: unknown label code {code}"))?;
                if labels.len() - start + len as usize > self.width as usize {
                    return Err(format!("row {r} is wider than {}", self.width));
                }
                labels.extend(std::iter::repeat(label).take(len as usize));
            }
            if labels.len() - start != self.width as usize {
                return Err(format!("row {r} is narrower than {}", self.width));
            }
        }
        SegmentationImage::from_labels(self.width, self.height, labels).map_err(|e| e.to_string())
    }
}
