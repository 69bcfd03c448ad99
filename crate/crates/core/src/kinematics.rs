//! Differential-drive kinematics: poses, velocity commands, fixed-horizon
//! rollouts and the indexed control/preference sets built from them.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar point in meters.
pub type Point = [f64; 2];

/// Wraps an angle into (-pi, pi].
pub fn normalize_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let wrapped = theta.rem_euclid(TAU);
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Vehicle position and heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawPose")]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    theta: f64,
}

impl From<RawPose> for Pose {
    fn from(raw: RawPose) -> Self {
        Pose::new(raw.x, raw.y, raw.theta)
    }
}

impl Pose {
    pub const ORIGIN: Pose = Pose {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
    };

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Point {
        [self.x, self.y]
    }

    /// One explicit Euler step of the unicycle model. Position advances
    /// along the current heading before the heading is updated.
    pub fn step(&self, cmd: ControlCommand, dt: f64) -> Pose {
        let (sin, cos) = self.theta.sin_cos();
        Pose::new(
            self.x + cmd.v * dt * cos,
            self.y + cmd.v * dt * sin,
            self.theta + cmd.w * dt,
        )
    }

    /// Expresses a world point in this pose's frame (x forward, y left).
    pub fn to_local(&self, point: Point) -> Point {
        let (sin, cos) = self.theta.sin_cos();
        let dx = point[0] - self.x;
        let dy = point[1] - self.y;
        [cos * dx + sin * dy, -sin * dx + cos * dy]
    }

    /// Inverse of [`Pose::to_local`].
    pub fn to_world(&self, point: Point) -> Point {
        let (sin, cos) = self.theta.sin_cos();
        [
            self.x + cos * point[0] - sin * point[1],
            self.y + sin * point[0] + cos * point[1],
        ]
    }
}

/// Rigidly transforms world points into the vehicle frame.
pub fn to_local_frame(world_points: &[Point], vehicle: &Pose) -> Vec<Point> {
    world_points.iter().map(|p| vehicle.to_local(*p)).collect()
}

/// Linear (m/s) and angular (rad/s) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub v: f64,
    pub w: f64,
}

impl ControlCommand {
    pub const STOP: ControlCommand = ControlCommand { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }
}

/// Ordered, discretized commands. Index `i` identifies both the command and
/// the trajectory it generates in the matching [`PreferenceSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    commands: Vec<ControlCommand>,
}

impl ControlSet {
    /// `m` commands at constant `v` with `w` evenly spaced over `[w_min, w_max]`.
    pub fn evenly_spaced(m: usize, v: f64, w_min: f64, w_max: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::invalid(format!("control set needs m >= 2, got {m}")));
        }
        if !(w_min < w_max) {
            return Err(Error::invalid(format!(
                "w_min must be below w_max, got [{w_min}, {w_max}]"
            )));
        }
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("v must be positive, got {v}")));
        }
        let span = w_max - w_min;
        let last = (m - 1) as f64;
        let commands = (0..m)
            .map(|i| {
                let w = if i == m - 1 {
                    w_max
                } else {
                    w_min + span * (i as f64 / last)
                };
                ControlCommand::new(v, w)
            })
            .collect();
        Ok(Self { commands })
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<ControlCommand> {
        self.commands.get(index).copied()
    }

    pub fn commands(&self) -> &[ControlCommand] {
        &self.commands
    }

    pub fn w_min(&self) -> f64 {
        self.commands[0].w
    }

    pub fn w_max(&self) -> f64 {
        self.commands[self.commands.len() - 1].w
    }
}

/// Poses `t = 1..n` produced by holding one command; the start pose is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
    pub index: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn final_pose(&self) -> &Pose {
        self.poses.last().expect("trajectories are never empty")
    }
}

/// Forward-simulates `cmd` for `n` steps of `dt` starting at `start`.
pub fn rollout(start: Pose, cmd: ControlCommand, dt: f64, n: usize) -> Result<Trajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if n == 0 {
        return Err(Error::invalid("rollout horizon must be at least one step"));
    }
    let mut poses = Vec::with_capacity(n);
    let mut pose = start;
    for _ in 0..n {
        pose = pose.step(cmd, dt);
        poses.push(pose);
    }
    Ok(Trajectory { poses, index: 0 })
}

/// Parameters of the control and preference sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreferenceConfig {
    pub m: usize,
    pub w_min: f64,
    pub w_max: f64,
    pub v: f64,
    pub dt: f64,
    pub horizon: usize,
}

impl Default for PreferenceConfig {
    fn default() -> Self {
        Self {
            m: 21,
            w_min: -1.0,
            w_max: 1.0,
            v: 1.0,
            dt: 0.1,
            horizon: 30,
        }
    }
}

/// The `m` trajectories rolled out from the origin, one per control command.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceSet {
    trajectories: Vec<Trajectory>,
    control_set: ControlSet,
    config: PreferenceConfig,
}

impl PreferenceSet {
    pub fn build(config: &PreferenceConfig) -> Result<Self> {
        let control_set = ControlSet::evenly_spaced(config.m, config.v, config.w_min, config.w_max)?;
        let trajectories = control_set
            .commands()
            .iter()
            .enumerate()
            .map(|(index, cmd)| {
                rollout(Pose::ORIGIN, *cmd, config.dt, config.horizon)
                    .map(|traj| Trajectory { index, ..traj })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            trajectories,
            control_set,
            config: config.clone(),
        })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control_set
    }

    pub fn m(&self) -> usize {
        self.trajectories.len()
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn config(&self) -> &PreferenceConfig {
        &self.config
    }
}

/// Convenience wrapper matching the config-driven construction path.
pub fn build_preference_set(config: &PreferenceConfig) -> Result<PreferenceSet> {
    PreferenceSet::build(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn straight_rollout() {
        let traj = rollout(Pose::ORIGIN, ControlCommand::new(1.0, 0.0), 0.1, 3).unwrap();
        let xs: Vec<f64> = traj.poses.iter().map(|p| p.x).collect();
        assert_eq!(traj.len(), 3);
        for (x, want) in xs.iter().zip([0.1, 0.2, 0.3]) {
            assert!(close(*x, want, 1e-15));
        }
        assert!(traj.poses.iter().all(|p| p.y == 0.0 && p.theta == 0.0));
    }

    #[test]
    fn single_curved_step_moves_before_turning() {
        let traj = rollout(Pose::ORIGIN, ControlCommand::new(1.0, 1.0), 0.1, 1).unwrap();
        let p = traj.poses[0];
        assert!(close(p.x, 0.1, 1e-15));
        assert_eq!(p.y, 0.0);
        assert!(close(p.theta, 0.1, 1e-15));
    }

    #[test]
    fn long_rollout_matches_scalar_recurrence() {
        let (v, w, dt) = (1.0, 0.5, 0.1);
        let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..30 {
            let (nx, ny) = (x + v * dt * th.cos(), y + v * dt * th.sin());
            th += w * dt;
            x = nx;
            y = ny;
        }
        let traj = rollout(Pose::ORIGIN, ControlCommand::new(v, w), dt, 30).unwrap();
        let last = traj.final_pose();
        assert!(close(last.x, x, 1e-12));
        assert!(close(last.y, y, 1e-12));
        assert!(close(last.theta, th, 1e-12));
    }

    #[test]
    fn rollout_rejects_bad_arguments() {
        let cmd = ControlCommand::new(1.0, 0.0);
        assert!(matches!(rollout(Pose::ORIGIN, cmd, 0.0, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(rollout(Pose::ORIGIN, cmd, -0.1, 3), Err(Error::InvalidArgument(_))));
        assert!(matches!(rollout(Pose::ORIGIN, cmd, 0.1, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn angle_normalization_range() {
        assert_eq!(normalize_angle(PI), PI);
        assert!(close(normalize_angle(-PI), PI, 1e-15));
        assert!(close(normalize_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-15));
        assert!(close(normalize_angle(7.0), 7.0 - TAU, 1e-15));
    }

    #[test]
    fn default_preference_set() {
        let set = build_preference_set(&PreferenceConfig::default()).unwrap();
        assert_eq!(set.m(), 21);
        assert!(set.trajectories().iter().all(|t| t.len() == 30));
        let straight = &set.trajectories()[10];
        assert_eq!(set.control_set().get(10).unwrap().w, 0.0);
        assert!(straight.poses.iter().all(|p| p.y == 0.0 && p.theta == 0.0));
        assert!(close(straight.final_pose().x, 3.0, 1e-12));
        for (i, t) in set.trajectories().iter().enumerate() {
            assert_eq!(t.index, i);
        }
    }

    #[test]
    fn three_bins_are_evenly_spaced() {
        let cfg = PreferenceConfig {
            m: 3,
            ..Default::default()
        };
        let set = build_preference_set(&cfg).unwrap();
        let ws: Vec<f64> = set.control_set().commands().iter().map(|c| c.w).collect();
        assert_eq!(ws, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn preference_set_rejects_single_bin() {
        let cfg = PreferenceConfig {
            m: 1,
            ..Default::default()
        };
        assert!(matches!(build_preference_set(&cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn control_set_is_strictly_increasing() {
        let set = ControlSet::evenly_spaced(21, 1.0, -1.0, 1.0).unwrap();
        for pair in set.commands().windows(2) {
            assert!(pair[1].w > pair[0].w);
            assert_eq!(pair[0].v, 1.0);
        }
        assert_eq!(set.w_min(), -1.0);
        assert_eq!(set.w_max(), 1.0);
    }

    #[test]
    fn default_set_is_mirror_symmetric() {
        let set = build_preference_set(&PreferenceConfig::default()).unwrap();
        let m = set.m();
        for i in 0..m {
            let a = &set.trajectories()[i];
            let b = &set.trajectories()[m - 1 - i];
            for (p, q) in a.poses.iter().zip(&b.poses) {
                assert!(close(p.x, q.x, 1e-12));
                assert!(close(p.y, -q.y, 1e-12));
            }
        }
    }

    #[test]
    fn final_poses_are_pairwise_distinct() {
        let set = build_preference_set(&PreferenceConfig::default()).unwrap();
        let finals: Vec<Pose> = set.trajectories().iter().map(|t| *t.final_pose()).collect();
        for i in 0..finals.len() {
            for j in (i + 1)..finals.len() {
                let d = (finals[i].x - finals[j].x).hypot(finals[i].y - finals[j].y);
                assert!(d > 1e-3, "trajectories {i} and {j} end at the same point");
            }
        }
    }

    #[test]
    fn local_frame_examples() {
        assert_eq!(to_local_frame(&[[1.0, 0.0]], &Pose::ORIGIN), vec![[1.0, 0.0]]);
        let local = to_local_frame(&[[1.0, 0.0]], &Pose::new(1.0, 0.0, PI / 2.0));
        assert!(local[0][0].abs() < 1e-15 && local[0][1].abs() < 1e-15);
        // A point straight ahead of a vehicle facing +y lands on the local +x axis.
        let local = to_local_frame(&[[1.0, 2.0]], &Pose::new(1.0, 0.0, PI / 2.0));
        assert!(close(local[0][0], 2.0, 1e-15) && local[0][1].abs() < 1e-15);
    }

    /// Error of the Euler rollout against the closed-form arc at fixed total time.
    fn arc_error(w: f64, total: f64, steps: usize) -> f64 {
        let dt = total / steps as f64;
        let traj = rollout(Pose::ORIGIN, ControlCommand::new(1.0, w), dt, steps).unwrap();
        let p = traj.final_pose();
        let r = 1.0 / w;
        let (ex, ey) = (r * (w * total).sin(), r * (1.0 - (w * total).cos()));
        (p.x - ex).hypot(p.y - ey)
    }

    #[test]
    fn rollout_converges_to_analytic_arc() {
        let errors: Vec<f64> = (0..5).map(|k| arc_error(0.7, 3.0, 30 << k)).collect();
        for pair in errors.windows(2) {
            assert!(pair[1] < pair[0]);
            // First-order scheme: halving dt roughly halves the error.
            let ratio = pair[0] / pair[1];
            assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
        }
        // Richardson extrapolation removes the leading error term.
        let extrapolated = 2.0 * errors[4] - errors[3];
        assert!(extrapolated.abs() < errors[4] * 0.1);
    }

    proptest! {
        #[test]
        fn local_frame_round_trip(
            x in -50.0..50.0f64, y in -50.0..50.0f64, th in -10.0..10.0f64,
            px in -50.0..50.0f64, py in -50.0..50.0f64,
        ) {
            let pose = Pose::new(x, y, th);
            let local = pose.to_local([px, py]);
            let back = pose.to_world(local);
            prop_assert!((back[0] - px).abs() < 1e-12 && (back[1] - py).abs() < 1e-12);
        }

        #[test]
        fn rollout_is_deterministic_and_normalized(
            w in -1.0..1.0f64, th in -10.0..10.0f64, n in 1usize..60,
        ) {
            let start = Pose::new(0.3, -0.2, th);
            let cmd = ControlCommand::new(1.0, w);
            let a = rollout(start, cmd, 0.1, n).unwrap();
            let b = rollout(start, cmd, 0.1, n).unwrap();
            prop_assert_eq!(&a, &b);
            for p in &a.poses {
                prop_assert!(p.theta > -PI && p.theta <= PI);
            }
        }
    }
}
