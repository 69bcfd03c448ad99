//! The simulation side of a teleoperation session. Owned by a single loop;
//! the network layer only talks to it through messages.

use terrapref::camera::{project_trajectory, CameraModel, SegmentationRenderer};
use terrapref::kinematics::{Pose, PreferenceSet};
use terrapref::learner::{Dataset, DatasetMeta, DemoRecord};
use terrapref::planner::{observe, PathTracker, DEFAULT_PATH_WINDOW};
use terrapref::sim::{step, SimClock, PERCEPTION_HZ};
use terrapref::world::Scenario;

use crate::protocol::{
    snap_to_bin, ControlAction, Frame, Hello, ImageSize, RleImage, Role, ServerMessage, SessionState,
    PROTOCOL_VERSION,
};

/// Rejected client request. `fatal` ones are protocol violations that end
/// the client's connection.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub message: String,
    pub fatal: bool,
}

impl Rejection {
    fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            fatal: true,
        }
    }

    fn refused(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            fatal: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeleopSession {
    id: String,
    world: Scenario,
    prefset: PreferenceSet,
    cam: CameraModel,
    renderer: SegmentationRenderer,
    overlay: Vec<Vec<[f64; 2]>>,
    tracker: PathTracker,
    clock: SimClock,
    pose: Pose,
    /// Latest bin requested by the driver.
    requested: usize,
    /// Bin latched at the last perception tick and executed until the next.
    executing: usize,
    state: SessionState,
    reason: String,
    dataset: Dataset,
}

impl TeleopSession {
    pub fn new(id: impl Into<String>, world: Scenario, prefset: PreferenceSet, cam: CameraModel) -> terrapref::Result<Self> {
        world.validate()?;
        cam.validate()?;
        let overlay = prefset
            .trajectories()
            .iter()
            .map(|t| project_trajectory(t, &cam).into_iter().flatten().map(|(u, v)| [u, v]).collect())
            .collect();
        let meta = DatasetMeta::new(
            prefset.m(),
            prefset.dt(),
            prefset.horizon(),
            vec![world.name.clone()],
            PERCEPTION_HZ as f64,
        );
        let straight = prefset.m() / 2;
        Ok(Self {
            id: id.into(),
            pose: world.start_pose,
            renderer: SegmentationRenderer::new(&cam),
            world,
            overlay,
            tracker: PathTracker::new(DEFAULT_PATH_WINDOW)?,
            clock: SimClock::new(),
            requested: straight,
            executing: straight,
            prefset,
            cam,
            state: SessionState::Idle,
            reason: String::new(),
            dataset: Dataset::new(meta),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    /// Why the session last changed state.
    pub fn reason(&self) -> &str {
        &self.reason
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn requested_bin(&self) -> usize {
        self.requested
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn into_dataset(self) -> Dataset {
        self.dataset
    }

    pub fn hello(&self, role: Role) -> ServerMessage {
        ServerMessage::Hello(Hello {
            protocol: PROTOCOL_VERSION,
            session: self.id.clone(),
            role,
            state: self.state,
            bin: self.requested,
            bins: self.prefset.control_set().commands().iter().map(|c| c.w).collect(),
            image: ImageSize {
                width: self.cam.width,
                height: self.cam.height,
            },
            overlay: self.overlay.clone(),
            scenario: self.world.clone(),
        })
    }

    pub fn state_message(&self) -> ServerMessage {
        ServerMessage::State {
            state: self.state,
            records: self.dataset.len(),
            reason: self.reason.clone(),
        }
    }

    /// Applies a steering input; returns the bin it snapped to.
    pub fn input(&mut self, w_raw: Option<f64>, bin: Option<usize>) -> Result<usize, Rejection> {
        let m = self.prefset.m();
        let snapped = match (w_raw, bin) {
            (Some(w), None) if w.is_finite() => snap_to_bin(w, self.prefset.control_set()),
            (Some(w), None) => return Err(Rejection::fatal(format!("w_raw must be finite, got {w}"))),
            (None, Some(b)) if b < m => b,
            (None, Some(b)) => return Err(Rejection::fatal(format!("bin {b} is outside 0..{m}"))),
            _ => return Err(Rejection::fatal("input needs exactly one of w_raw or bin")),
        };
        if self.state == SessionState::Finished {
            return Err(Rejection::refused("session has finished"));
        }
        self.requested = snapped;
        Ok(snapped)
    }

    pub fn control(&mut self, action: ControlAction) -> Result<(), Rejection> {
        use SessionState::*;
        match (self.state, action) {
            (Finished, _) => return Err(Rejection::refused("session has finished")),
            (Idle | Paused, ControlAction::Start) => self.set_state(Driving, "started by driver"),
            (Driving, ControlAction::Pause) => self.set_state(Paused, "paused by driver"),
            (_, ControlAction::Finish) => self.set_state(Finished, "finished by driver"),
            (state, action) => {
                return Err(Rejection::refused(format!("cannot {action:?} while {state:?}").to_lowercase()))
            }
        }
        Ok(())
    }

    /// Pauses a driving session, e.g. when the driver leaves or stalls.
    pub fn pause(&mut self, reason: &str) -> bool {
        if self.state == SessionState::Driving {
            self.set_state(SessionState::Paused, reason);
            true
        } else {
            false
        }
    }

    pub fn finish(&mut self, reason: &str) {
        if self.state != SessionState::Finished {
            self.set_state(SessionState::Finished, reason);
        }
    }

    fn set_state(&mut self, state: SessionState, reason: &str) {
        self.state = state;
        self.reason = reason.to_string();
    }

    /// Advances one control tick while driving. On perception ticks the
    /// driver's latest bin is latched, recorded with the feature seen at
    /// this pose and returned in the frame; reaching the goal finishes the
    /// session instead.
    pub fn tick(&mut self) -> terrapref::Result<Option<Frame>> {
        if self.state != SessionState::Driving {
            return Ok(None);
        }
        let mut frame = None;
        if self.clock.is_perception_tick() {
            let seg = self.renderer.render(&self.world, &self.pose);
            let obs = observe(
                &mut self.tracker,
                &self.prefset,
                &self.cam,
                &seg,
                &self.world.reference_path,
                self.world.goal_radius,
                &self.pose,
            )?;
            if obs.goal_reached {
                self.finish("reached the goal");
                return Ok(None);
            }
            self.executing = self.requested;
            self.dataset.push(DemoRecord {
                utility_feature: obs.feature,
                label_index: self.executing,
                timestamp: self.clock.time(),
                pose: self.pose,
            })?;
            frame = Some(self.frame(RleImage::encode(&seg), true));
        }
        let cmd = self.prefset.control_set().commands()[self.executing];
        self.pose = step(self.pose, cmd, SimClock::control_period());
        self.clock.advance();
        Ok(frame)
    }

    /// The current view without advancing the simulation.
    pub fn snapshot(&self) -> Frame {
        let seg = self.renderer.render(&self.world, &self.pose);
        self.frame(RleImage::encode(&seg), false)
    }

    fn frame(&self, segmentation: RleImage, recorded: bool) -> Frame {
        let path = &self.world.reference_path;
        Frame {
            tick: self.clock.perception_index(),
            time: self.clock.time(),
            state: self.state,
            bin: self.executing,
            w: self.prefset.control_set().commands()[self.executing].w,
            records: self.dataset.len(),
            recorded,
            pose: self.pose,
            path: path.waypoints[self.tracker.window(path)].to_vec(),
            segmentation,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use terrapref::kinematics::PreferenceConfig;
    use terrapref::scenarios;

    fn session() -> TeleopSession {
        let world = scenarios::by_name("train-01-water").unwrap();
        let prefset = PreferenceSet::build(&PreferenceConfig::default()).unwrap();
        TeleopSession::new("t", world, prefset, CameraModel::default()).unwrap()
    }

    fn run(s: &mut TeleopSession, control_ticks: usize) -> Vec<Frame> {
        (0..control_ticks).filter_map(|_| s.tick().unwrap()).collect()
    }

    #[test]
    fn idle_session_records_nothing() {
        let mut s = session();
        assert!(run(&mut s, 90).is_empty());
        assert_eq!(s.dataset().len(), 0);
        assert_eq!(s.pose(), s.world.start_pose);
    }

    #[test]
    fn records_only_while_driving() {
        let mut s = session();
        s.control(ControlAction::Start).unwrap();
        assert_eq!(run(&mut s, 30).len(), 10);
        s.control(ControlAction::Pause).unwrap();
        run(&mut s, 30);
        s.control(ControlAction::Start).unwrap();
        run(&mut s, 30);
        assert_eq!(s.dataset().len(), 20);
        let times: Vec<f64> = s.dataset().records.iter().map(|r| r.timestamp).collect();
        assert!(times.windows(2).all(|w| (w[1] - w[0] - 0.1).abs() < 1e-9));
    }

    #[test]
    fn label_is_the_bin_executed_after_the_tick() {
        let mut s = session();
        s.control(ControlAction::Start).unwrap();
        s.input(Some(0.26), None).unwrap();
        let frames = run(&mut s, 3);
        assert_eq!(frames[0].bin, 13);
        assert_eq!(s.dataset().records[0].label_index, 13);
        // The turn starts right after the recorded tick.
        assert!(s.pose().theta > 0.0);
        // Input between perception ticks waits for the next one.
        s.input(None, Some(4)).unwrap();
        assert_eq!(run(&mut s, 1)[0].bin, 4);
        assert_eq!(s.dataset().records[1].label_index, 4);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let mut s = session();
        assert!(s.input(None, Some(21)).unwrap_err().fatal);
        assert!(s.input(Some(0.1), Some(3)).unwrap_err().fatal);
        assert!(s.input(None, None).unwrap_err().fatal);
        assert!(s.input(Some(f64::NAN), None).unwrap_err().fatal);
        assert!(!s.control(ControlAction::Pause).unwrap_err().fatal);
        s.control(ControlAction::Finish).unwrap();
        assert!(!s.control(ControlAction::Start).unwrap_err().fatal);
        assert_eq!(s.state(), SessionState::Finished);
    }

    #[test]
    fn goal_finishes_the_session() {
        let mut s = session();
        s.control(ControlAction::Start).unwrap();
        for _ in 0..30 * 60 {
            s.tick().unwrap();
            if s.state() == SessionState::Finished {
                break;
            }
        }
        assert_eq!(s.state(), SessionState::Finished);
        assert_eq!(s.reason(), "reached the goal");
        assert!(s.dataset().len() > 150);
    }
}
