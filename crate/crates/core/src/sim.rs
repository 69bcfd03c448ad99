//! Fixed-step vehicle simulation and the demonstration recorder.

use crate::camera::{CameraModel, SegmentationImage, SegmentationRenderer};
use crate::error::{Error, Result};
use crate::kinematics::{ControlCommand, Pose, PreferenceSet};
use crate::learner::{argmax, Dataset, DatasetMeta, DemoRecord};
use crate::planner::{observe, PathTracker, DEFAULT_PATH_WINDOW};
use crate::utility::{UtilityFeature, DISTANCE_COLUMN};
use crate::world::Scenario;

pub const CONTROL_HZ: u32 = 30;
pub const PERCEPTION_HZ: u32 = 10;
/// Control ticks per perception tick.
pub const PERCEPTION_DIVISOR: u64 = (CONTROL_HZ / PERCEPTION_HZ) as u64;

/// Counts control ticks; every third one is also a perception tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimClock {
    tick: u64,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn control_period() -> f64 {
        1.0 / CONTROL_HZ as f64
    }

    pub fn perception_period() -> f64 {
        1.0 / PERCEPTION_HZ as f64
    }

    /// Elapsed simulated time in seconds.
    pub fn time(&self) -> f64 {
        self.tick as f64 / CONTROL_HZ as f64
    }

    pub fn is_perception_tick(&self) -> bool {
        self.tick % PERCEPTION_DIVISOR == 0
    }

    pub fn perception_index(&self) -> u64 {
        self.tick / PERCEPTION_DIVISOR
    }

    pub fn advance(&mut self) {
        self.tick += 1;
    }
}

/// Advances the world-frame vehicle by one step of the unicycle model.
pub fn step(vehicle: Pose, cmd: ControlCommand, dt: f64) -> Pose {
    vehicle.step(cmd, dt)
}

/// Everything a demonstrator sees at a perception tick.
#[derive(Debug, Clone, Copy)]
pub struct TickContext<'a> {
    pub tick: u64,
    pub time: f64,
    pub pose: Pose,
    pub progress: usize,
    pub feature: &'a UtilityFeature,
    pub segmentation: &'a SegmentationImage,
    pub prefset: &'a PreferenceSet,
}

/// Chooses a control-bin index each perception tick.
pub trait Demonstrator {
    fn choose(&mut self, ctx: &TickContext<'_>) -> usize;
}

impl<F: FnMut(&TickContext<'_>) -> usize> Demonstrator for F {
    fn choose(&mut self, ctx: &TickContext<'_>) -> usize {
        self(ctx)
    }
}

/// Deterministic stand-in for a human driver: keeps close to the path while
/// penalizing terrain in the order non-traversable > water > rock > mud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedOracle {
    /// Penalties for (non-traversable, water, rock, mud).
    pub penalties: [f64; 4],
}

impl Default for ScriptedOracle {
    fn default() -> Self {
        Self {
            penalties: [30.0, 12.0, 6.0, 0.5],
        }
    }
}

impl ScriptedOracle {
    pub fn new(penalties: [f64; 4]) -> Result<Self> {
        let ordered = penalties.windows(2).all(|w| w[0] > w[1]);
        if !ordered || penalties[3] <= 0.0 {
            return Err(Error::invalid(
                "oracle penalties must be strictly decreasing and positive",
            ));
        }
        Ok(Self { penalties })
    }

    pub fn scores(&self, feature: &UtilityFeature) -> Vec<f64> {
        feature
            .rows()
            .iter()
            .map(|row| {
                let penalty: f64 = self.penalties.iter().zip(row).map(|(l, u)| l * u).sum();
                row[DISTANCE_COLUMN] - penalty
            })
            .collect()
    }

    pub fn choose_index(&self, feature: &UtilityFeature) -> usize {
        argmax(&self.scores(feature))
    }
}

impl Demonstrator for ScriptedOracle {
    fn choose(&mut self, ctx: &TickContext<'_>) -> usize {
        self.choose_index(ctx.feature)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordingConfig {
    pub duration: f64,
    pub path_window: usize,
}

impl RecordingConfig {
    pub fn new(duration: f64) -> Self {
        Self {
            duration,
            path_window: DEFAULT_PATH_WINDOW,
        }
    }
}

/// Drives `world` with `demonstrator` and records one (feature, label) pair
/// per perception tick. Stops after `duration` seconds or at the goal.
pub fn record_demonstration(
    world: &Scenario,
    prefset: &PreferenceSet,
    cam: &CameraModel,
    demonstrator: &mut dyn Demonstrator,
    config: &RecordingConfig,
) -> Result<Dataset> {
    if !(config.duration > 0.0) {
        return Err(Error::invalid("recording duration must be positive"));
    }
    let renderer = SegmentationRenderer::new(cam);
    let meta = DatasetMeta::new(
        prefset.m(),
        prefset.dt(),
        prefset.horizon(),
        vec![world.name.clone()],
        PERCEPTION_HZ as f64,
    );
    let mut dataset = Dataset::new(meta);
    let mut tracker = PathTracker::new(config.path_window)?;
    let mut clock = SimClock::new();
    let mut pose = world.start_pose;
    let mut cmd = ControlCommand::STOP;
    let control_dt = SimClock::control_period();
    let max_records = (config.duration * PERCEPTION_HZ as f64).round() as usize;

    while dataset.len() < max_records {
        if clock.is_perception_tick() {
            let seg = renderer.render(world, &pose);
            let obs = observe(&mut tracker, prefset, cam, &seg, &world.reference_path, world.goal_radius, &pose)?;
            if obs.goal_reached {
                break;
            }
            let ctx = TickContext {
                tick: clock.tick(),
                time: clock.time(),
                pose,
                progress: obs.progress,
                feature: &obs.feature,
                segmentation: &seg,
                prefset,
            };
            let label = demonstrator.choose(&ctx);
            cmd = prefset.control_set().get(label).ok_or_else(|| {
                Error::Recording(format!(
                    "demonstrator chose bin {label} at t={:.1}s; valid bins are 0..{}",
                    clock.time(),
                    prefset.m()
                ))
            })?;
            dataset.push(DemoRecord {
                utility_feature: obs.feature,
                label_index: label,
                timestamp: clock.time(),
                pose,
            })?;
        }
        pose = step(pose, cmd, control_dt);
        clock.advance();
    }
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::PreferenceConfig;
    use crate::world::{ReferencePath, TerrainLabel, TerrainPatch};

    fn straight_world(length: f64) -> Scenario {
        let n = (length / 0.25) as usize;
        let waypoints = (0..=n).map(|i| [i as f64 * 0.25, 0.0]).collect();
        Scenario {
            name: "straight".into(),
            patches: vec![],
            reference_path: ReferencePath::new(waypoints).unwrap(),
            start_pose: Pose::ORIGIN,
            goal_radius: 1.0,
            expected_preference: None,
        }
    }

    #[test]
    fn clock_rates() {
        let mut clock = SimClock::new();
        let mut perception = 0;
        for _ in 0..300 {
            if clock.is_perception_tick() {
                perception += 1;
            }
            clock.advance();
        }
        assert_eq!(perception, 100);
        assert!((clock.time() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn step_matches_rollout() {
        let cmd = ControlCommand::new(1.0, 0.5);
        let traj = crate::kinematics::rollout(Pose::ORIGIN, cmd, 0.1, 1).unwrap();
        assert_eq!(step(Pose::ORIGIN, cmd, 0.1), traj.poses[0]);
    }

    #[test]
    fn constant_demonstrator_drives_straight() {
        let world = straight_world(40.0);
        let prefset = PreferenceSet::build(&PreferenceConfig::default()).unwrap();
        let cam = CameraModel::default();
        let mut always_ten = |_: &TickContext<'_>| 10;
        let ds = record_demonstration(&world, &prefset, &cam, &mut always_ten, &RecordingConfig::new(5.0))
            .unwrap();
        assert_eq!(ds.len(), 50);
        assert!(ds.records.iter().all(|r| r.label_index == 10 && r.pose.y == 0.0));
        assert!((ds.records[49].timestamp - 4.9).abs() < 1e-9);
        assert!((ds.records[49].pose.x - 4.9).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_choice_is_an_error() {
        let world = straight_world(10.0);
        let prefset = PreferenceSet::build(&PreferenceConfig::default()).unwrap();
        let mut bad = |_: &TickContext<'_>| 21;
        let err = record_demonstration(&world, &prefset, &CameraModel::default(), &mut bad, &RecordingConfig::new(1.0))
            .unwrap_err();
        assert!(matches!(err, Error::Recording(_)));
    }

    #[test]
    fn oracle_follows_path_and_ranks_terrain() {
        let oracle = ScriptedOracle::default();
        let mut rows = vec![[0.0; 5]; 5];
        rows[3][4] = 1.0;
        let u = UtilityFeature::from_rows(rows.clone()).unwrap();
        assert_eq!(oracle.choose_index(&u), 3);

        rows[1] = [0.0, 0.0, 0.0, 0.4, 0.9];
        rows[2] = [0.0, 0.0, 0.4, 0.0, 0.9];
        rows[3] = [0.4, 0.0, 0.0, 0.0, 1.0];
        let u = UtilityFeature::from_rows(rows).unwrap();
        assert_eq!(oracle.choose_index(&u), 1);
        assert!(ScriptedOracle::new([1.0, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn oracle_avoids_a_wall_on_the_path() {
        let mut world = straight_world(30.0);
        world.patches.push(TerrainPatch::rect(TerrainLabel::Water, [6.0, -1.5], [8.0, 0.6]));
        let prefset = PreferenceSet::build(&PreferenceConfig::default()).unwrap();
        let mut oracle = ScriptedOracle::default();
        let ds = record_demonstration(&world, &prefset, &CameraModel::default(), &mut oracle, &RecordingConfig::new(60.0))
            .unwrap();
        assert!(ds.records.iter().all(|r| world.label_at(r.pose.position()) == TerrainLabel::Background));
        assert!(ds.len() < 600, "goal should end the recording early");
    }
}
