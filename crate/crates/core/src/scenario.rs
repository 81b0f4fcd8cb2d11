//! Scripted runs: a scene, a goal and a timed list of operator actions.
//!
//! ```toml
//! version = 1
//! name = "precision grid"
//! scene = "../scenes/glovebox.toml"   # relative to this file
//! seed = 1
//! goal = { kind = "grid", grid = "paper" }
//!
//! [noise]
//! aim_sigma_deg = 3.0
//!
//! [config.spray]                      # any simulation setting
//! cone_half_angle_deg = 8.0
//!
//! [stop]
//! max_time_s = 120.0
//!
//! [[commands]]
//! at = 0.0
//! kind = "set_pressure"
//! kpa = 40.0
//!
//! [[commands]]
//! at = 30.0
//! kind = "raster"
//! grid = "paper"
//! dwell_s = 0.2
//! ```
//!
//! Besides the operator commands, a script may use `aim` (point the tip at a
//! grid cell) and `raster` (aim and pulse the spray at every cell of a grid).
//! Aiming is resolved to a joystick deflection when it is applied, from the
//! robot's pose at that moment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::config::{NoiseModel, SimConfig};
use crate::error::{describe_toml_error, Error, Result};
use crate::scene::Scene;
use crate::sim::{Command, CommandError, Event, Goal, Simulation, Snapshot};
use crate::spray::{coverage_stats, CoverageReport};

pub const SCRIPT_VERSION: u32 = 1;

/// Scripted action that expands to one or more operator commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Macro {
    Aim {
        grid: String,
        row: usize,
        col: usize,
    },
    Raster {
        grid: String,
        /// Time spent on each cell, s.
        dwell_s: f64,
        /// Spray-on time per cell, s. Half the dwell when omitted.
        #[serde(default)]
        pulse_s: Option<f64>,
        /// Reverse every other row.
        #[serde(default)]
        serpentine: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Command(Command),
    Macro(Macro),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// Seconds from the start of the run.
    pub at: f64,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopCondition {
    pub max_time_s: f64,
    /// End as soon as the goal is met.
    pub on_success: bool,
    /// End one tick after the last scripted command.
    pub on_script_end: bool,
}

impl Default for StopCondition {
    fn default() -> Self {
        StopCondition {
            max_time_s: 300.0,
            on_success: true,
            on_script_end: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScript {
    pub name: String,
    pub scene_path: PathBuf,
    pub scene: Arc<Scene>,
    pub config: SimConfig,
    pub seed: u64,
    pub goal: Option<Goal>,
    pub stop: StopCondition,
    pub steps: Vec<Step>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    version: u32,
    #[serde(default)]
    name: String,
    scene: PathBuf,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    goal: Option<Goal>,
    #[serde(default)]
    config: Option<toml::Table>,
    #[serde(default)]
    noise: Option<NoiseModel>,
    #[serde(default)]
    stop: StopCondition,
    #[serde(default)]
    commands: Vec<toml::Table>,
}

fn parse_step(index: usize, mut table: toml::Table) -> Result<Step> {
    let name = format!("commands[{index}]");
    let at = match table.remove("at") {
        Some(toml::Value::Float(t)) => t,
        Some(toml::Value::Integer(t)) => t as f64,
        Some(_) => return Err(Error::input(format!("{name}: field `at` must be a number"))),
        None => return Err(Error::input(format!("{name}: missing field `at`"))),
    };
    if !(at >= 0.0 && at.is_finite()) {
        return Err(Error::input(format!(
            "{name}: `at` must be a non-negative time"
        )));
    }
    let kind = match table.get("kind") {
        Some(toml::Value::String(k)) => k.clone(),
        _ => return Err(Error::input(format!("{name}: missing string field `kind`"))),
    };
    let value = toml::Value::Table(table);
    let action = if matches!(kind.as_str(), "aim" | "raster") {
        Action::Macro(
            value
                .try_into()
                .map_err(|e: toml::de::Error| Error::input(format!("{name}: {}", e.message())))?,
        )
    } else if Command::KINDS.contains(&kind.as_str()) {
        let cmd: Command = value
            .try_into()
            .map_err(|e: toml::de::Error| Error::input(format!("{name}: {}", e.message())))?;
        cmd.validate()
            .map_err(|e| Error::input(format!("{name}: {e}")))?;
        Action::Command(cmd)
    } else {
        return Err(Error::input(format!("{name}: unknown kind `{kind}`")));
    };
    Ok(Step { at, action })
}

impl ScenarioScript {
    /// Parses a script; the scene path is resolved against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let file: ScriptFile =
            toml::from_str(text).map_err(|e| Error::input(describe_toml_error(text, &e)))?;
        if file.version != SCRIPT_VERSION {
            return Err(Error::input(format!(
                "unsupported script version {} (expected {SCRIPT_VERSION})",
                file.version
            )));
        }
        let mut config: SimConfig = match file.config {
            Some(table) => toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| Error::input(format!("config: {}", e.message())))?,
            None => SimConfig::default(),
        };
        if let Some(noise) = file.noise {
            config.noise = noise;
        }
        config.validate()?;
        if !(file.stop.max_time_s > 0.0) {
            return Err(Error::input("stop.max_time_s must be positive"));
        }

        let steps = file
            .commands
            .into_iter()
            .enumerate()
            .map(|(i, t)| parse_step(i, t))
            .collect::<Result<Vec<_>>>()?;

        let scene_path = base_dir.join(&file.scene);
        let scene = Arc::new(Scene::load(&scene_path)?);
        let script = ScenarioScript {
            name: file.name,
            scene_path,
            scene,
            config,
            seed: file.seed,
            goal: file.goal,
            stop: file.stop,
            steps,
        };
        script.check_steps()?;
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| Error::load(path, e.to_string()))
    }

    /// Time at which a step's last command fires, s.
    fn step_end(&self, step: &Step) -> f64 {
        match &step.action {
            Action::Macro(Macro::Raster { grid, dwell_s, .. }) => {
                let cells = self.scene_grid_len(grid).unwrap_or(0);
                step.at + cells as f64 * dwell_s
            }
            _ => step.at,
        }
    }

    fn scene_grid_len(&self, id: &str) -> Option<usize> {
        self.scene
            .all_grids()
            .iter()
            .find(|g| g.id == id)
            .map(|g| g.len())
    }

    fn check_steps(&self) -> Result<()> {
        let mut busy_until = 0.0_f64;
        for (i, step) in self.steps.iter().enumerate() {
            let name = format!("commands[{i}]");
            if step.at < busy_until - 1e-9 {
                return Err(Error::input(format!(
                    "{name}: starts at {} s, before the previous command ends at {busy_until} s",
                    step.at
                )));
            }
            match &step.action {
                Action::Macro(Macro::Aim { grid, row, col }) => {
                    let g = self.scene.all_grids().into_iter().find(|g| &g.id == grid);
                    match g {
                        None => return Err(Error::input(format!("{name}: unknown grid `{grid}`"))),
                        Some(g) if *row >= g.rows || *col >= g.cols => {
                            return Err(Error::input(format!(
                                "{name}: cell ({row}, {col}) is off the {}x{} grid",
                                g.rows, g.cols
                            )))
                        }
                        Some(_) => {}
                    }
                }
                Action::Macro(Macro::Raster {
                    grid,
                    dwell_s,
                    pulse_s,
                    ..
                }) => {
                    if self.scene_grid_len(grid).is_none() {
                        return Err(Error::input(format!("{name}: unknown grid `{grid}`")));
                    }
                    let pulse = pulse_s.unwrap_or(dwell_s / 2.0);
                    if !(*dwell_s > 0.0 && pulse > 0.0 && pulse < *dwell_s) {
                        return Err(Error::input(format!("{name}: need 0 < pulse_s < dwell_s")));
                    }
                }
                Action::Command(_) => {}
            }
            busy_until = self.step_end(step);
        }
        Ok(())
    }

    /// Expands macros into timed primitive actions, in firing order.
    fn timeline(&self) -> Vec<(f64, Timed)> {
        let mut out = Vec::new();
        for step in &self.steps {
            match &step.action {
                Action::Command(cmd) => out.push((step.at, Timed::Command(cmd.clone()))),
                Action::Macro(Macro::Aim { grid, row, col }) => {
                    out.push((step.at, Timed::Aim(grid.clone(), *row, *col)))
                }
                Action::Macro(Macro::Raster {
                    grid,
                    dwell_s,
                    pulse_s,
                    serpentine,
                }) => {
                    let g = self
                        .scene
                        .all_grids()
                        .into_iter()
                        .find(|g| &g.id == grid)
                        .expect("checked");
                    let pulse = pulse_s.unwrap_or(dwell_s / 2.0);
                    let mut k = 0;
                    for row in 0..g.rows {
                        for c in 0..g.cols {
                            let col = if *serpentine && row % 2 == 1 {
                                g.cols - 1 - c
                            } else {
                                c
                            };
                            let t = step.at + k as f64 * dwell_s;
                            out.push((t, Timed::Aim(grid.clone(), row, col)));
                            out.push((t, Timed::Command(Command::Spray { on: true })));
                            out.push((t + pulse, Timed::Command(Command::Spray { on: false })));
                            k += 1;
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
enum Timed {
    Command(Command),
    Aim(String, usize, usize),
}

/// Tick before which a command scheduled at `t` seconds is applied.
pub fn tick_for_time(t: f64, dt: f64) -> u64 {
    (t / dt - 1e-9).ceil().max(0.0) as u64
}

/// A command as it was applied to the simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedCommand {
    /// Number of ticks completed when the command was applied.
    pub tick: u64,
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<CommandError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub seed: u64,
    pub commands: Vec<AppliedCommand>,
    pub frames: Vec<Snapshot>,
    pub events: Vec<Event>,
    pub success: bool,
    /// Grid the coverage report refers to: the goal's grid, else the first
    /// scene grid.
    pub coverage_grid: Option<String>,
    pub coverage: Option<CoverageReport>,
    pub final_snapshot: Snapshot,
    pub end_tick: u64,
}

fn coverage_of(sim: &Simulation) -> Option<(String, CoverageReport)> {
    let id = match sim.goal().and_then(|g| g.grid()) {
        Some(id) => id.to_string(),
        None => sim.scene().grids.first()?.id.clone(),
    };
    let grid = sim.grid(&id)?;
    let report = coverage_stats(&[grid.hit_count()], grid.len()).ok()?;
    Some((id, report))
}

fn finish(
    sim: Simulation,
    name: &str,
    commands: Vec<AppliedCommand>,
    frames: Vec<Snapshot>,
) -> RunRecord {
    let (coverage_grid, coverage) = coverage_of(&sim).unzip();
    RunRecord {
        name: name.to_string(),
        seed: sim.seed(),
        commands,
        frames,
        events: sim.events().to_vec(),
        success: sim.goal_reached(),
        coverage_grid,
        coverage,
        final_snapshot: sim.snapshot(),
        end_tick: sim.tick_count(),
    }
}

/// Runs a script. `seed` overrides the script's own seed.
pub fn run_scenario(script: &ScenarioScript, seed: Option<u64>) -> Result<RunRecord> {
    let seed = seed.unwrap_or(script.seed);
    let mut sim = Simulation::new(script.scene.clone(), script.config.clone(), seed)?
        .with_goal(script.goal.clone())?;
    let dt = script.config.dt;
    let timeline: Vec<(u64, Timed)> = script
        .timeline()
        .into_iter()
        .map(|(t, a)| (tick_for_time(t, dt), a))
        .collect();
    let max_ticks = tick_for_time(script.stop.max_time_s, dt);
    let last_tick = timeline.last().map(|(t, _)| *t);

    let mut commands = Vec::new();
    let mut frames = Vec::new();
    let mut next = 0;
    while sim.tick_count() < max_ticks {
        while next < timeline.len() && timeline[next].0 <= sim.tick_count() {
            let cmd = match &timeline[next].1 {
                Timed::Command(c) => c.clone(),
                Timed::Aim(grid, row, col) => {
                    let target = sim.grid(grid).expect("checked").cell_center(*row, *col);
                    let (x, y) = sim.joystick_toward(&target);
                    Command::Joystick { x, y }
                }
            };
            let error = sim.apply(&cmd).err();
            commands.push(AppliedCommand {
                tick: sim.tick_count(),
                command: cmd,
                error,
            });
            next += 1;
        }
        frames.extend(sim.tick());
        if script.stop.on_success && sim.goal_reached() {
            break;
        }
        if script.stop.on_script_end
            && next == timeline.len()
            && last_tick.is_some_and(|t| sim.tick_count() > t)
        {
            break;
        }
    }
    Ok(finish(sim, &script.name, commands, frames))
}

/// Re-runs recorded commands against a fresh simulation for `end_tick`
/// ticks.
pub fn replay_commands(
    scene: Arc<Scene>,
    config: SimConfig,
    seed: u64,
    goal: Option<Goal>,
    commands: &[AppliedCommand],
    end_tick: u64,
    name: &str,
) -> Result<RunRecord> {
    if commands.windows(2).any(|w| w[1].tick < w[0].tick) {
        return Err(Error::input("recorded commands are not in tick order"));
    }
    let mut sim = Simulation::new(scene, config, seed)?.with_goal(goal)?;
    let mut applied = Vec::with_capacity(commands.len());
    let mut frames = Vec::new();
    let mut next = 0;
    loop {
        while next < commands.len() && commands[next].tick <= sim.tick_count() {
            let cmd = commands[next].command.clone();
            let error = sim.apply(&cmd).err();
            applied.push(AppliedCommand {
                tick: sim.tick_count(),
                command: cmd,
                error,
            });
            next += 1;
        }
        if sim.tick_count() >= end_tick {
            break;
        }
        frames.extend(sim.tick());
    }
    Ok(finish(sim, name, applied, frames))
}
