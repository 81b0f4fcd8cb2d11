//! Fixed-step simulation of the whole robot: regulator, eversion body,
//! continuum tip and spray.
//!
//! Commands are applied between ticks, never during one. A run is fully
//! determined by the scene, the config, the seed and the tick at which each
//! command was applied.

use std::sync::Arc;

use nalgebra::{Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::eversion::{
    growth_step, pressure_step, retract, BlockReason, EversionState, RobotPath, Status,
};
use crate::kinematics::{
    aim_bend, bend_to_joystick, forward_tip_frame, joystick_to_bend, BendCommand, ContinuumState,
    TipPose,
};
use crate::scene::Scene;
use crate::spray::{pov_view, round1, spray_hits, PovView, TargetGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Water,
    AerosolPaint,
    Foam,
    Camera,
}

impl Payload {
    pub fn parse(id: &str) -> Option<Payload> {
        match id {
            "water" => Some(Payload::Water),
            "aerosol_paint" | "paint" => Some(Payload::AerosolPaint),
            "foam" => Some(Payload::Foam),
            "camera" => Some(Payload::Camera),
            _ => None,
        }
    }

    pub fn sprays(&self) -> bool {
        !matches!(self, Payload::Camera)
    }
}

impl From<crate::spray::Flow> for Payload {
    fn from(flow: crate::spray::Flow) -> Self {
        match flow {
            crate::spray::Flow::Water => Payload::Water,
            crate::spray::Flow::AerosolPaint => Payload::AerosolPaint,
            crate::spray::Flow::Foam => Payload::Foam,
        }
    }
}

/// Operator command as seen by the simulation loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    Joystick { x: f64, y: f64 },
    SetPressure { kpa: f64 },
    Spray { on: bool },
    Retract { meters: f64 },
    Estop,
    Resume,
    SelectPayload { id: String },
}

impl Command {
    pub const KINDS: [&'static str; 7] = [
        "joystick",
        "set_pressure",
        "spray",
        "retract",
        "estop",
        "resume",
        "select_payload",
    ];

    /// Field-level checks that do not depend on simulation state.
    pub fn validate(&self) -> std::result::Result<(), CommandError> {
        let range = |field: &str, v: f64| {
            if (-1.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(CommandError::field(field, format!("{v} outside [-1, 1]")))
            }
        };
        match self {
            Command::Joystick { x, y } => {
                range("x", *x)?;
                range("y", *y)
            }
            Command::SetPressure { kpa } if !(*kpa >= 0.0 && kpa.is_finite()) => {
                Err(CommandError::field("kpa", "must be a non-negative number"))
            }
            Command::Retract { meters } if !(*meters >= 0.0 && meters.is_finite()) => Err(
                CommandError::field("meters", "must be a non-negative number"),
            ),
            Command::SelectPayload { id } if Payload::parse(id).is_none() => {
                Err(CommandError::field("id", format!("unknown payload `{id}`")))
            }
            _ => Ok(()),
        }
    }
}

/// Why a command was refused. The simulation state is untouched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{}{message}", field.as_ref().map(|f| format!("field `{f}`: ")).unwrap_or_default())]
pub struct CommandError {
    pub field: Option<String>,
    pub message: String,
}

impl CommandError {
    pub fn field(field: &str, message: impl Into<String>) -> Self {
        CommandError {
            field: Some(field.to_string()),
            message: message.into(),
        }
    }

    pub fn state(message: impl Into<String>) -> Self {
        CommandError {
            field: None,
            message: message.into(),
        }
    }
}

/// What a run is trying to achieve; checked after every tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Goal {
    /// Hit every listed `[row, col]` cell of a grid.
    Target {
        grid: String,
        cells: Vec<[usize; 2]>,
    },
    /// Cover a whole grid.
    Grid { grid: String },
    /// Bring every sprayable wall panel of a vessel to `fraction` coverage.
    Walls { terminal: String, fraction: f64 },
}

impl Goal {
    pub fn grid(&self) -> Option<&str> {
        match self {
            Goal::Target { grid, .. } | Goal::Grid { grid } => Some(grid),
            Goal::Walls { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    EnteredSegment {
        segment: String,
    },
    Blocked {
        reason: BlockReason,
        residual: f64,
    },
    CellHit {
        grid: String,
        row: usize,
        col: usize,
    },
    EstopEngaged,
    Resumed,
    Retracted {
        meters: f64,
    },
    PayloadSelected {
        payload: Payload,
    },
    GoalReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCoverage {
    pub grid: String,
    pub hits: usize,
    pub cells: usize,
    pub percent: f64,
}

/// Immutable view of the simulation after a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub sim_time: f64,
    pub everted_length: f64,
    pub pressure: f64,
    pub target_pressure: f64,
    pub status: Status,
    pub estopped: bool,
    pub spraying: bool,
    pub payload: Payload,
    pub segment: String,
    pub tip: TipPose,
    /// Commanded bend, degrees.
    pub bend_magnitude_deg: f64,
    pub bend_direction_deg: f64,
    /// Degrees.
    pub servo_angles: [f64; 4],
    pub coverage: Vec<GridCoverage>,
    pub pov: Option<PovView>,
    pub goal_reached: bool,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    scene: Arc<Scene>,
    config: SimConfig,
    seed: u64,
    rng: ChaCha8Rng,
    tick: u64,
    eversion: EversionState,
    path: RobotPath,
    bend: BendCommand,
    actual_bend: BendCommand,
    /// Heading error (about the tip x and y axes), radians.
    aim_error: (f64, f64),
    continuum: ContinuumState,
    spraying: bool,
    payload: Payload,
    estopped: bool,
    grids: Vec<TargetGrid>,
    goal: Option<Goal>,
    goal_reached: bool,
    events: Vec<Event>,
}

impl Simulation {
    pub fn new(scene: Arc<Scene>, config: SimConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let path = RobotPath::start(&scene.network);
        let grids = scene.all_grids();
        let continuum = ContinuumState::new(
            BendCommand::STRAIGHT,
            &config.geometry,
            &config.spool,
            &config.servo,
        );
        Ok(Simulation {
            eversion: EversionState::new(config.max_length),
            payload: config.spray.flow.into(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            scene,
            seed,
            tick: 0,
            path,
            bend: BendCommand::STRAIGHT,
            actual_bend: BendCommand::STRAIGHT,
            aim_error: (0.0, 0.0),
            continuum,
            spraying: false,
            estopped: false,
            grids,
            goal: None,
            goal_reached: false,
            events: Vec::new(),
            config,
        })
    }

    pub fn with_goal(mut self, goal: Option<Goal>) -> Result<Self> {
        if let Some(g) = &goal {
            match g {
                Goal::Target { grid, cells } => {
                    let grid = self.grid_index(grid)?;
                    let g = &self.grids[grid];
                    if cells.is_empty() || cells.iter().any(|[r, c]| *r >= g.rows || *c >= g.cols) {
                        return Err(Error::input(
                            "target cells must be non-empty and on the grid",
                        ));
                    }
                }
                Goal::Grid { grid } => {
                    self.grid_index(grid)?;
                }
                Goal::Walls { terminal, fraction } => {
                    if self.scene.network.terminal(terminal).is_none() {
                        return Err(Error::input(format!("unknown terminal `{terminal}`")));
                    }
                    if !(0.0..=1.0).contains(fraction) {
                        return Err(Error::input("wall fraction must lie in [0, 1]"));
                    }
                }
            }
        }
        self.goal = goal;
        Ok(self)
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn sim_time(&self) -> f64 {
        self.tick as f64 * self.config.dt
    }

    pub fn eversion(&self) -> &EversionState {
        &self.eversion
    }

    pub fn path(&self) -> &RobotPath {
        &self.path
    }

    pub fn continuum(&self) -> &ContinuumState {
        &self.continuum
    }

    pub fn estopped(&self) -> bool {
        self.estopped
    }

    pub fn grids(&self) -> &[TargetGrid] {
        &self.grids
    }

    pub fn grid(&self, id: &str) -> Option<&TargetGrid> {
        self.grids.iter().find(|g| g.id == id)
    }

    pub fn goal(&self) -> Option<&Goal> {
        self.goal.as_ref()
    }

    pub fn goal_reached(&self) -> bool {
        self.goal_reached
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    fn grid_index(&self, id: &str) -> Result<usize> {
        self.grids
            .iter()
            .position(|g| g.id == id)
            .ok_or_else(|| Error::input(format!("unknown grid `{id}`")))
    }

    fn push(&mut self, kind: EventKind) {
        self.events.push(Event {
            tick: self.tick,
            kind,
        });
    }

    /// Applies a command between ticks. A refused command leaves the state
    /// untouched.
    pub fn apply(&mut self, cmd: &Command) -> std::result::Result<(), CommandError> {
        cmd.validate()?;
        match cmd {
            Command::Joystick { x, y } => {
                let bend = joystick_to_bend(*x, *y, &self.config.geometry);
                self.set_bend(bend);
            }
            Command::SetPressure { kpa } => {
                if self.estopped {
                    return Err(CommandError::state("estop engaged; send resume first"));
                }
                self.eversion.target_pressure = *kpa;
            }
            Command::Spray { on } => {
                if *on && !self.payload.sprays() {
                    return Err(CommandError::state("camera payload cannot spray"));
                }
                self.spraying = *on;
            }
            Command::Retract { meters } => {
                let (path, state) =
                    retract(&self.path, &self.eversion, &self.scene.network, *meters)
                        .map_err(|e| CommandError::field("meters", e.to_string()))?;
                self.path = path;
                self.eversion = state;
                self.push(EventKind::Retracted { meters: *meters });
            }
            Command::Estop => {
                self.estopped = true;
                self.spraying = false;
                self.eversion.target_pressure = 0.0;
                self.eversion.status = Status::Holding;
                self.push(EventKind::EstopEngaged);
            }
            Command::Resume => {
                if self.estopped {
                    self.estopped = false;
                    self.push(EventKind::Resumed);
                }
            }
            Command::SelectPayload { id } => {
                let payload = Payload::parse(id).expect("validated");
                self.payload = payload;
                if !payload.sprays() {
                    self.spraying = false;
                }
                self.push(EventKind::PayloadSelected { payload });
            }
        }
        Ok(())
    }

    fn set_bend(&mut self, bend: BendCommand) {
        let g = &self.config.geometry;
        // draw every sample regardless of sigma so the stream layout is fixed
        let mut normal = || -> f64 { StandardNormal.sample(&mut self.rng) };
        let (ax, ay, px, py) = (normal(), normal(), normal(), normal());
        let aim_sigma = self.config.noise.aim_sigma_deg.to_radians();
        let pull_sigma = self.config.noise.actuation_sigma_mm * 1e-3;

        let pull = g.tendon_pitch_radius * bend.magnitude;
        let x = pull * bend.direction.cos() + pull_sigma * px;
        let y = pull * bend.direction.sin() + pull_sigma * py;
        let magnitude = (x.hypot(y) / g.tendon_pitch_radius).min(g.max_bend);
        self.actual_bend = if magnitude == 0.0 {
            BendCommand::STRAIGHT
        } else {
            BendCommand::new(magnitude, y.atan2(x))
        };
        self.aim_error = (aim_sigma * ax, aim_sigma * ay);
        self.bend = bend;
        self.continuum = ContinuumState::new(bend, g, &self.config.spool, &self.config.servo);
    }

    /// Joystick deflection that points the nominal heading at a world point
    /// from where the tip base is now.
    pub fn joystick_toward(&self, target: &Vector3<f64>) -> (f64, f64) {
        let base = self.path.base_frame(&self.scene.network);
        let local = base.inverse_transform_point(&(*target).into()).coords;
        let bend = aim_bend(&local, &self.config.geometry);
        bend_to_joystick(&bend, &self.config.geometry)
    }

    /// World pose of the tip including actuation and aim error.
    pub fn tip_pose(&self) -> TipPose {
        let base = self.path.base_frame(&self.scene.network);
        let tip = base * forward_tip_frame(&self.actual_bend, &self.config.geometry);
        let (about_x, about_y) = self.aim_error;
        let local_heading = Rotation3::from_euler_angles(about_x, about_y, 0.0) * Vector3::z();
        TipPose::new(tip.translation.vector, tip.rotation * local_heading)
    }

    /// Advances one fixed step.
    pub fn step(&mut self) {
        let cfg = &self.config;
        self.eversion = pressure_step(&self.eversion, cfg.dt, cfg.regulator_tau);

        if !self.estopped {
            let was_blocked = self.eversion.status == Status::Blocked;
            let (state, path, outcome) = growth_step(
                &self.eversion,
                &self.path,
                &self.scene.network,
                &self.bend,
                cfg.dt,
                &cfg.growth,
            );
            self.eversion = state;
            self.path = path;
            for seg in outcome.entered {
                let segment = self.scene.network.segment_id(seg).to_string();
                self.push(EventKind::EnteredSegment { segment });
            }
            if let (Some(reason), false) = (outcome.blocked, was_blocked) {
                self.push(EventKind::Blocked {
                    reason,
                    residual: outcome.residual,
                });
            }
        } else {
            self.eversion.status = Status::Holding;
        }

        self.tick += 1;

        if self.spraying {
            let pose = self.tip_pose();
            let spec = self.config.spray;
            let mut fresh_hits = Vec::new();
            for grid in &mut self.grids {
                let hits = spray_hits(&pose, &spec, grid);
                for cell in grid.mark(&hits) {
                    let (row, col) = grid.row_col(cell);
                    fresh_hits.push(EventKind::CellHit {
                        grid: grid.id.clone(),
                        row,
                        col,
                    });
                }
            }
            for e in fresh_hits {
                self.push(e);
            }
        }

        if !self.goal_reached && self.check_goal() {
            self.goal_reached = true;
            self.push(EventKind::GoalReached);
        }
    }

    /// Steps once and returns a snapshot when a telemetry frame is due.
    pub fn tick(&mut self) -> Option<Snapshot> {
        self.step();
        self.tick
            .is_multiple_of(self.config.telemetry_every())
            .then(|| self.snapshot())
    }

    fn check_goal(&self) -> bool {
        match &self.goal {
            None => false,
            Some(Goal::Target { grid, cells }) => self
                .grid(grid)
                .is_some_and(|g| cells.iter().all(|[r, c]| g.is_hit(g.index(*r, *c)))),
            Some(Goal::Grid { grid }) => self.grid(grid).is_some_and(|g| g.hit_count() == g.len()),
            Some(Goal::Walls { terminal, fraction }) => {
                let prefix = format!("{terminal}/");
                self.grids
                    .iter()
                    .filter(|g| g.id.starts_with(&prefix))
                    .all(|g| g.hit_fraction() >= *fraction)
            }
        }
    }

    /// Grid shown in the tip-camera view: the goal's grid, else the first
    /// declared in the scene.
    fn view_grid(&self) -> Option<&TargetGrid> {
        match self.goal.as_ref().and_then(|g| g.grid()) {
            Some(id) => self.grid(id),
            None => self.scene.grids.first().and_then(|g| self.grid(&g.id)),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        let tip = self.tip_pose();
        Snapshot {
            tick: self.tick,
            sim_time: self.sim_time(),
            everted_length: self.eversion.everted_length,
            pressure: self.eversion.pressure,
            target_pressure: self.eversion.target_pressure,
            status: self.eversion.status,
            estopped: self.estopped,
            spraying: self.spraying,
            payload: self.payload,
            segment: self
                .scene
                .network
                .segment_id(self.path.current().segment)
                .to_string(),
            tip,
            bend_magnitude_deg: self.bend.magnitude.to_degrees(),
            bend_direction_deg: self.bend.direction.to_degrees(),
            servo_angles: self.continuum.servo_angles.angles,
            coverage: self
                .grids
                .iter()
                .map(|g| GridCoverage {
                    grid: g.id.clone(),
                    hits: g.hit_count(),
                    cells: g.len(),
                    percent: round1(100.0 * g.hit_fraction()),
                })
                .collect(),
            pov: self.view_grid().map(|g| pov_view(&tip, g)),
            goal_reached: self.goal_reached,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{servo_angles_for, tendon_displacements, TipGeometry};

    const SCENE: &str = r#"
version = 1
entry = "inlet"

[[nodes]]
id = "inlet"
position = [0.0, 0.0, 0.2]

[[nodes]]
id = "outlet"
position = [0.5, 0.0, 0.2]

[[segments]]
id = "main"
from = "inlet"
to = "outlet"
diameter = 0.0508

[[terminals]]
id = "box"
node = "outlet"
min = [0.5, -0.3, 0.0]
max = [0.9, 0.3, 0.4]
entry_wall = "x-"

[[grids]]
id = "paper"
terminal = "box"
wall = "x+"
rows = 6
cols = 10
cell_size = 0.042
"#;

    fn sim() -> Simulation {
        let scene = Arc::new(Scene::from_toml(SCENE).unwrap());
        Simulation::new(scene, SimConfig::default(), 7).unwrap()
    }

    fn run_until_blocked(sim: &mut Simulation) {
        sim.apply(&Command::SetPressure { kpa: 40.0 }).unwrap();
        for _ in 0..2000 {
            sim.step();
            if sim.eversion().status == Status::Blocked {
                return;
            }
        }
        panic!("never reached the vessel");
    }

    #[test]
    fn grows_to_the_vessel_and_stops() {
        let mut s = sim();
        run_until_blocked(&mut s);
        assert!((s.eversion().everted_length - 0.5).abs() < 1e-9);
        let blocked: Vec<_> = s
            .events()
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Blocked { .. }))
            .collect();
        assert_eq!(blocked.len(), 1);
    }

    #[test]
    fn estop_holds_within_one_tick() {
        let mut s = sim();
        s.apply(&Command::SetPressure { kpa: 40.0 }).unwrap();
        for _ in 0..50 {
            s.step();
        }
        assert_eq!(s.eversion().status, Status::Growing);
        s.apply(&Command::Estop).unwrap();
        assert_eq!(s.eversion().target_pressure, 0.0);
        s.step();
        assert_eq!(s.eversion().status, Status::Holding);
        let length = s.eversion().everted_length;
        for _ in 0..100 {
            s.step();
        }
        assert_eq!(s.eversion().everted_length, length);
        assert!(s.apply(&Command::SetPressure { kpa: 40.0 }).is_err());
        s.apply(&Command::Resume).unwrap();
        s.apply(&Command::SetPressure { kpa: 40.0 }).unwrap();
        for _ in 0..100 {
            s.step();
        }
        assert!(s.eversion().everted_length > length);
    }

    #[test]
    fn last_pressure_command_wins() {
        let mut s = sim();
        s.apply(&Command::SetPressure { kpa: 30.0 }).unwrap();
        s.apply(&Command::SetPressure { kpa: 55.0 }).unwrap();
        s.step();
        assert_eq!(s.eversion().target_pressure, 55.0);
    }

    #[test]
    fn joystick_sets_servo_angles() {
        let mut s = sim();
        s.apply(&Command::Joystick { x: 1.0, y: 0.0 }).unwrap();
        let snap = s.tick().or_else(|| (0..4).find_map(|_| s.tick()));
        let snap = snap.unwrap();
        let g = TipGeometry::default();
        let expected = servo_angles_for(
            &tendon_displacements(&BendCommand::from_degrees(90.0, 0.0), &g),
            &SimConfig::default().spool,
            &SimConfig::default().servo,
        );
        assert_eq!(snap.servo_angles, expected.angles);
        assert!((snap.bend_magnitude_deg - 90.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_commands_are_refused_without_effect() {
        let mut s = sim();
        let before = s.snapshot();
        let err = s.apply(&Command::Joystick { x: 1.5, y: 0.0 }).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("x"));
        let err = s.apply(&Command::Retract { meters: 1.0 }).unwrap_err();
        assert_eq!(err.field.as_deref(), Some("meters"));
        assert!(s
            .apply(&Command::SelectPayload {
                id: "glitter".into()
            })
            .is_err());
        assert_eq!(s.snapshot(), before);
    }

    #[test]
    fn aiming_and_spraying_marks_the_cell() {
        let mut s = sim();
        run_until_blocked(&mut s);
        let target = s.grid("paper").unwrap().cell_center(1, 8);
        let (x, y) = s.joystick_toward(&target);
        s.apply(&Command::Joystick { x, y }).unwrap();
        s.apply(&Command::Spray { on: true }).unwrap();
        s.step();
        let g = s.grid("paper").unwrap();
        assert!(g.is_hit(g.index(1, 8)));
        assert!(s.events().iter().any(|e| e.kind
            == EventKind::CellHit {
                grid: "paper".into(),
                row: 1,
                col: 8
            }));
    }

    #[test]
    fn camera_payload_cannot_spray() {
        let mut s = sim();
        s.apply(&Command::SelectPayload {
            id: "camera".into(),
        })
        .unwrap();
        assert!(s.apply(&Command::Spray { on: true }).is_err());
    }

    #[test]
    fn identical_inputs_identical_trajectories() {
        let run = || {
            let scene = Arc::new(Scene::from_toml(SCENE).unwrap());
            let mut config = SimConfig::default();
            config.noise.aim_sigma_deg = 3.0;
            config.noise.actuation_sigma_mm = 0.5;
            let mut s = Simulation::new(scene, config, 99).unwrap();
            s.apply(&Command::SetPressure { kpa: 40.0 }).unwrap();
            let mut frames = Vec::new();
            for i in 0..400 {
                if i % 37 == 0 {
                    s.apply(&Command::Joystick { x: 0.3, y: -0.2 }).unwrap();
                    s.apply(&Command::Spray { on: true }).unwrap();
                }
                frames.extend(s.tick());
            }
            (frames, s.events().to_vec())
        };
        assert_eq!(run(), run());
    }
}
