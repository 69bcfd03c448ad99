//! Closed-loop planning: feature construction shared with the recorder, the
//! per-tick policy, full episodes and their logs.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, SegmentationImage, SegmentationRenderer};
use crate::error::{Error, Result};
use crate::kinematics::{to_local_frame, ControlCommand, Pose, PreferenceConfig, PreferenceSet};
use crate::learner::{Architecture, Classifier, Prediction};
use crate::sim::{step, ScriptedOracle, SimClock};
use crate::utility::{build_utility_feature, UtilityFeature};
use crate::world::{nearest_waypoint_distance, ReferencePath, Scenario, TerrainLabel};

/// Waypoints considered ahead of the current progress index.
pub const DEFAULT_PATH_WINDOW: usize = 50;

/// Monotone progress along the reference path. Nearest-waypoint matching
/// only looks forward from the current index so loops and switchbacks do
/// not make the vehicle jump ahead or back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathTracker {
    progress: usize,
    window: usize,
}

impl PathTracker {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("path window must hold at least one waypoint"));
        }
        Ok(Self { progress: 0, window })
    }

    pub fn progress(&self) -> usize {
        self.progress
    }

    pub fn window_len(&self) -> usize {
        self.window
    }

    pub fn window(&self, path: &ReferencePath) -> Range<usize> {
        let start = self.progress.min(path.len() - 1);
        start..(start + self.window).min(path.len())
    }

    /// Moves progress to the nearest waypoint in the forward window.
    pub fn update(&mut self, path: &ReferencePath, position: [f64; 2]) -> Result<usize> {
        let (_, index) = nearest_waypoint_distance(path, position, self.window(path))?;
        self.progress = self.progress.max(index);
        Ok(self.progress)
    }
}

/// Builds the utility feature for `vehicle` from the segmentation and the
/// windowed reference path. Recorder, planner and teleop all go through this.
pub fn tick_feature(
    prefset: &PreferenceSet,
    cam: &CameraModel,
    seg: &SegmentationImage,
    path: &ReferencePath,
    window: Range<usize>,
    vehicle: &Pose,
) -> Result<UtilityFeature> {
    let local = to_local_frame(&path.waypoints[window], vehicle);
    build_utility_feature(prefset, seg, cam, &local)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub feature: UtilityFeature,
    pub progress: usize,
    pub goal_reached: bool,
}

/// Advances `tracker`, checks the goal condition and builds the feature.
pub fn observe(
    tracker: &mut PathTracker,
    prefset: &PreferenceSet,
    cam: &CameraModel,
    seg: &SegmentationImage,
    path: &ReferencePath,
    goal_radius: f64,
    vehicle: &Pose,
) -> Result<Observation> {
    let progress = tracker.update(path, vehicle.position())?;
    let goal_reached = goal_reached(path, progress, goal_radius, vehicle);
    let feature = tick_feature(prefset, cam, seg, path, tracker.window(path), vehicle)?;
    Ok(Observation {
        feature,
        progress,
        goal_reached,
    })
}

/// Within `goal_radius` of the final waypoint, or matched to it with the
/// waypoint already behind the vehicle.
pub fn goal_reached(path: &ReferencePath, progress: usize, goal_radius: f64, vehicle: &Pose) -> bool {
    let last = path.last();
    let local = vehicle.to_local(last);
    local[0].hypot(local[1]) <= goal_radius || (progress + 1 == path.len() && local[0] < 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub index: usize,
    pub command: ControlCommand,
    pub prediction: Prediction,
    pub feature: UtilityFeature,
    pub progress: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    Drive(PlanStep),
    GoalReached { progress: usize },
}

impl PlanOutcome {
    pub fn command(&self) -> ControlCommand {
        match self {
            PlanOutcome::Drive(step) => step.command,
            PlanOutcome::GoalReached { .. } => ControlCommand::STOP,
        }
    }
}

/// Maps a utility feature to trajectory probabilities.
pub trait Policy {
    /// Number of trajectories the policy scores, if fixed.
    fn m(&self) -> Option<usize>;
    fn predict(&self, feature: &UtilityFeature) -> Result<Prediction>;
    fn info(&self) -> PolicyInfo;
}

/// What drove an episode; stored in episode logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyInfo {
    Classifier { architecture: Architecture },
    ScriptedOracle { penalties: [f64; 4] },
}

impl Policy for Classifier {
    fn m(&self) -> Option<usize> {
        Some(Classifier::m(self))
    }

    fn predict(&self, feature: &UtilityFeature) -> Result<Prediction> {
        self.forward(feature)
    }

    fn info(&self) -> PolicyInfo {
        PolicyInfo::Classifier {
            architecture: self.architecture().clone(),
        }
    }
}

/// The oracle as a policy puts all probability on its choice.
impl Policy for ScriptedOracle {
    fn m(&self) -> Option<usize> {
        None
    }

    fn predict(&self, feature: &UtilityFeature) -> Result<Prediction> {
        let argmax_index = self.choose_index(feature);
        let mut probabilities = vec![0.0; feature.m()];
        probabilities[argmax_index] = 1.0;
        Ok(Prediction {
            probabilities,
            argmax_index,
        })
    }

    fn info(&self) -> PolicyInfo {
        PolicyInfo::ScriptedOracle {
            penalties: self.penalties,
        }
    }
}

/// A policy plus its path-tracking state.
#[derive(Debug, Clone)]
pub struct PlannerState<P = Classifier> {
    policy: P,
    prefset: PreferenceSet,
    cam: CameraModel,
    tracker: PathTracker,
    last_command: ControlCommand,
}

impl<P: Policy> PlannerState<P> {
    pub fn new(policy: P, prefset: PreferenceSet, cam: CameraModel, path_window: usize) -> Result<Self> {
        if let Some(m) = policy.m() {
            if m != prefset.m() {
                return Err(Error::invalid(format!(
                    "model predicts {m} trajectories but the preference set has {}",
                    prefset.m()
                )));
            }
        }
        Ok(Self {
            policy,
            prefset,
            cam,
            tracker: PathTracker::new(path_window)?,
            last_command: ControlCommand::STOP,
        })
    }

    pub fn progress(&self) -> usize {
        self.tracker.progress()
    }

    pub fn last_command(&self) -> ControlCommand {
        self.last_command
    }

    pub fn prefset(&self) -> &PreferenceSet {
        &self.prefset
    }

    pub fn camera(&self) -> &CameraModel {
        &self.cam
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    /// One planning tick: track progress, build the feature, pick the most
    /// probable trajectory's command.
    pub fn plan_tick(
        &mut self,
        vehicle: &Pose,
        seg: &SegmentationImage,
        path: &ReferencePath,
        goal_radius: f64,
    ) -> Result<PlanOutcome> {
        let obs = observe(&mut self.tracker, &self.prefset, &self.cam, seg, path, goal_radius, vehicle)?;
        if obs.goal_reached {
            self.last_command = ControlCommand::STOP;
            return Ok(PlanOutcome::GoalReached {
                progress: obs.progress,
            });
        }
        let prediction = self.policy.predict(&obs.feature)?;
        let index = prediction.argmax_index;
        let command = self.prefset.control_set().commands()[index];
        self.last_command = command;
        Ok(PlanOutcome::Drive(PlanStep {
            index,
            command,
            prediction,
            feature: obs.feature,
            progress: obs.progress,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Timeout as a multiple of the time needed to drive the path length.
    pub timeout_factor: f64,
    pub path_window: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            timeout_factor: 3.0,
            path_window: DEFAULT_PATH_WINDOW,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    GoalReached,
    Collision,
    Timeout,
}

/// Per-planning-tick log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub pose: Pose,
    pub progress: usize,
    pub terrain: TerrainLabel,
    /// `None` on the goal tick.
    pub command_index: Option<usize>,
    pub command: ControlCommand,
    pub probabilities: Vec<f64>,
    pub feature: Option<UtilityFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub status: EpisodeStatus,
    pub reason: String,
    pub duration: f64,
    pub control_ticks: u64,
    /// Control ticks spent over each label, indexed by label code.
    pub terrain_ticks: [u64; 5],
    /// Terrain utilities of every selected trajectory, summed over the
    /// episode, in feature column order.
    pub chosen_terrain: [f64; 4],
    pub max_cross_track: f64,
    pub mean_cross_track: f64,
    pub final_pose: Pose,
}

impl EpisodeOutcome {
    pub fn succeeded(&self) -> bool {
        self.status == EpisodeStatus::GoalReached
    }

    pub fn ticks_on(&self, label: TerrainLabel) -> u64 {
        self.terrain_ticks[label.code() as usize]
    }

    /// The terrain the selected trajectories ran over most, or background
    /// when no selected trajectory touched terrain. This reads the choice
    /// itself, so a vehicle that straddles a boundary while crossing does
    /// not blur it. Ties go to the lower code.
    pub fn planner_preference(&self) -> TerrainLabel {
        let mut best = TerrainLabel::Background;
        let mut most = 0.0;
        for (k, label) in TerrainLabel::TERRAINS.iter().enumerate() {
            if self.chosen_terrain[k] > most {
                most = self.chosen_terrain[k];
                best = *label;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub format: u32,
    pub scenario: Scenario,
    pub camera: CameraModel,
    pub preference: PreferenceConfig,
    pub config: EpisodeConfig,
    pub policy: PolicyInfo,
}

pub const EPISODE_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub header: EpisodeHeader,
    pub ticks: Vec<TickRecord>,
    pub outcome: EpisodeOutcome,
}

/// The readable part of a possibly truncated [`EpisodeLog`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartialEpisodeLog {
    pub header: EpisodeHeader,
    pub ticks: Vec<TickRecord>,
    pub outcome: Option<EpisodeOutcome>,
    /// Why reading stopped before a complete log, if it did.
    pub truncated: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Header(EpisodeHeader),
    Tick(TickRecord),
    Outcome(EpisodeOutcome),
}

impl EpisodeLog {
    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut out = BufWriter::new(out);
        let err = |e: &dyn std::fmt::Display| Error::format("episode log", e);
        let mut line = |l: &LogLine| -> Result<()> {
            serde_json::to_writer(&mut out, l).map_err(|e| err(&e))?;
            out.write_all(b"\n").map_err(|e| err(&e))
        };
        line(&LogLine::Header(self.header.clone()))?;
        for t in &self.ticks {
            line(&LogLine::Tick(t.clone()))?;
        }
        line(&LogLine::Outcome(self.outcome.clone()))?;
        out.flush().map_err(|e| err(&e))
    }

    pub fn read_from(input: impl std::io::Read) -> Result<Self> {
        let partial = Self::read_partial(input)?;
        if let Some(why) = partial.truncated {
            return Err(Error::format("episode log", why));
        }
        Ok(Self {
            header: partial.header,
            ticks: partial.ticks,
            outcome: partial.outcome.expect("complete logs have an outcome"),
        })
    }

    /// Reads as much of a log as is intact. Only a missing or unreadable
    /// header is an error; anything after it that does not parse ends the
    /// read and is reported in `truncated`.
    pub fn read_partial(input: impl std::io::Read) -> Result<PartialEpisodeLog> {
        let mut header: Option<EpisodeHeader> = None;
        let mut ticks = Vec::new();
        let mut outcome = None;
        let mut truncated = None;
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = match line {
                Ok(line) => line,
                Err(e) if header.is_some() => {
                    truncated = Some(format!("line {}: {e}", i + 1));
                    break;
                }
                Err(e) => return Err(Error::format("episode log", e)),
            };
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<LogLine>(&line).map_err(|e| format!("line {}: {e}", i + 1));
            match parsed {
                Ok(LogLine::Header(h)) if header.is_none() && i == 0 => header = Some(h),
                _ if header.is_none() => {
                    return Err(Error::format("episode log", "missing header"));
                }
                Ok(LogLine::Tick(t)) if outcome.is_none() => ticks.push(t),
                Ok(LogLine::Outcome(o)) if outcome.is_none() => outcome = Some(o),
                Ok(_) => {
                    truncated = Some(format!("line {} is out of order", i + 1));
                    break;
                }
                Err(e) => {
                    truncated = Some(e);
                    break;
                }
            }
        }
        let header = header.ok_or_else(|| Error::format("episode log", "missing header"))?;
        if header.format != EPISODE_FORMAT {
            return Err(Error::format(
                "episode log",
                format!("unsupported format {}", header.format),
            ));
        }
        if outcome.is_none() && truncated.is_none() {
            truncated = Some("missing outcome line".into());
        }
        Ok(PartialEpisodeLog {
            header,
            ticks,
            outcome,
            truncated,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file)
    }
}

/// Runs the learned planner on `world` until the goal, a collision with
/// non-traversable terrain, or the timeout.
pub fn run_episode<P: Policy + Clone>(
    world: &Scenario,
    policy: &P,
    prefset: &PreferenceSet,
    cam: &CameraModel,
    config: &EpisodeConfig,
) -> Result<EpisodeLog> {
    world.validate()?;
    let renderer = SegmentationRenderer::new(cam);
    let mut planner = PlannerState::new(policy.clone(), prefset.clone(), cam.clone(), config.path_window)?;
    let speed = prefset.control_set().commands()[0].v;
    let timeout = config.timeout_factor * world.reference_path.length() / speed;
    let control_dt = SimClock::control_period();
    let path = &world.reference_path;

    let mut clock = SimClock::new();
    let mut pose = world.start_pose;
    let mut cmd = ControlCommand::STOP;
    let mut ticks = Vec::new();
    let mut terrain_ticks = [0u64; 5];
    let mut chosen_terrain = [0.0; 4];
    let mut max_cross_track = 0.0f64;
    let mut sum_cross_track = 0.0;
    let mut control_ticks = 0u64;

    let (status, reason) = loop {
        if clock.is_perception_tick() {
            let seg = renderer.render(world, &pose);
            let outcome = planner.plan_tick(&pose, &seg, path, world.goal_radius)?;
            let mut record = TickRecord {
                tick: clock.perception_index(),
                time: clock.time(),
                pose,
                progress: planner.progress(),
                terrain: world.label_at(pose.position()),
                command_index: None,
                command: ControlCommand::STOP,
                probabilities: Vec::new(),
                feature: None,
            };
            match outcome {
                PlanOutcome::GoalReached { .. } => {
                    ticks.push(record);
                    break (EpisodeStatus::GoalReached, "reached the final waypoint".to_string());
                }
                PlanOutcome::Drive(plan) => {
                    cmd = plan.command;
                    let row = plan.feature.row(plan.index);
                    for (sum, u) in chosen_terrain.iter_mut().zip(row) {
                        *sum += u;
                    }
                    record.command_index = Some(plan.index);
                    record.command = plan.command;
                    record.probabilities = plan.prediction.probabilities;
                    record.feature = Some(plan.feature);
                    ticks.push(record);
                }
            }
        }
        pose = step(pose, cmd, control_dt);
        clock.advance();
        control_ticks += 1;

        let label = world.label_at(pose.position());
        terrain_ticks[label.code() as usize] += 1;
        let cte = path.cross_track_distance(pose.position());
        max_cross_track = max_cross_track.max(cte);
        sum_cross_track += cte;

        if label == TerrainLabel::NonTraversable {
            break (
                EpisodeStatus::Collision,
                format!("entered non-traversable terrain at ({:.2}, {:.2})", pose.x, pose.y),
            );
        }
        if clock.time() >= timeout {
            break (
                EpisodeStatus::Timeout,
                format!("no goal after {timeout:.1} s (progress {}/{})", planner.progress(), path.len()),
            );
        }
    };

    Ok(EpisodeLog {
        header: EpisodeHeader {
            format: EPISODE_FORMAT,
            scenario: world.clone(),
            camera: cam.clone(),
            preference: prefset.config().clone(),
            config: config.clone(),
            policy: policy.info(),
        },
        ticks,
        outcome: EpisodeOutcome {
            status,
            reason,
            duration: clock.time(),
            control_ticks,
            terrain_ticks,
            chosen_terrain,
            max_cross_track,
            mean_cross_track: if control_ticks > 0 {
                sum_cross_track / control_ticks as f64
            } else {
                0.0
            },
            final_pose: pose,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub ticks: usize,
    /// Tick numbers whose replayed decision differs from the log.
    pub mismatches: Vec<u64>,
}

impl ReplayReport {
    pub fn is_exact(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// How an episode measures up against its scenario's expected preference.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub expected: Option<TerrainLabel>,
    /// `Background` when the vehicle never touched terrain, otherwise the
    /// terrain its chosen trajectories ran over most.
    pub shown: TerrainLabel,
    /// `None` when the scenario states no expectation.
    pub preference_matches: Option<bool>,
    /// Safety and completion failures, independent of preference.
    pub problems: Vec<String>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.problems.is_empty() && self.preference_matches != Some(false)
    }
}

/// The episode must reach the goal without touching non-traversable
/// terrain. An expected `Background` means every patch is to be avoided, so
/// any tick on terrain is a mismatch.
pub fn judge_episode(world: &Scenario, outcome: &EpisodeOutcome) -> Verdict {
    let touched = TerrainLabel::TERRAINS.iter().any(|&l| outcome.ticks_on(l) > 0);
    let shown = if touched {
        outcome.planner_preference()
    } else {
        TerrainLabel::Background
    };
    let mut problems = Vec::new();
    if !outcome.succeeded() {
        problems.push(format!("{:?}: {}", outcome.status, outcome.reason));
    }
    let nt = outcome.ticks_on(TerrainLabel::NonTraversable);
    if nt > 0 {
        problems.push(format!("{nt} ticks on non_traversable"));
    }
    Verdict {
        expected: world.expected_preference,
        shown,
        preference_matches: world.expected_preference.map(|e| e == shown),
        problems,
    }
}

/// Re-renders each logged pose, feeds it through a fresh planner and
/// compares the decisions bit for bit.
pub fn replay<P: Policy + Clone>(log: &EpisodeLog, policy: &P) -> Result<ReplayReport> {
    let header = &log.header;
    if policy.info() != header.policy {
        return Err(Error::invalid("policy differs from the one recorded in the log"));
    }
    let prefset = PreferenceSet::build(&header.preference)?;
    let renderer = SegmentationRenderer::new(&header.camera);
    let mut planner = PlannerState::new(policy.clone(), prefset, header.camera.clone(), header.config.path_window)?;
    let world = &header.scenario;
    let mut mismatches = Vec::new();
    for record in &log.ticks {
        let seg = renderer.render(world, &record.pose);
        let outcome = planner.plan_tick(&record.pose, &seg, &world.reference_path, world.goal_radius)?;
        let same = match (&outcome, record.command_index) {
            (PlanOutcome::GoalReached { progress }, None) => *progress == record.progress,
            (PlanOutcome::Drive(plan), Some(index)) => {
                plan.index == index
                    && plan.progress == record.progress
                    && plan.command.v.to_bits() == record.command.v.to_bits()
                    && plan.command.w.to_bits() == record.command.w.to_bits()
                    && same_bits(&plan.prediction.probabilities, &record.probabilities)
                    && record.feature.as_ref() == Some(&plan.feature)
            }
            _ => false,
        };
        if !same {
            mismatches.push(record.tick);
        }
    }
    Ok(ReplayReport {
        ticks: log.ticks.len(),
        mismatches,
    })
}
