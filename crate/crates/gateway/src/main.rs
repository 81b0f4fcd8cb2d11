use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use evertip_core::config::SimConfig;
use evertip_core::mech::{design_check, load_catalog, DesignInputs, DesignReport};
use evertip_core::scenario::{run_scenario, ScenarioScript};
use evertip_core::scene::Scene;
use evertip_core::spray::coverage_stats;
use evertip_gateway::server::{serve, ServeOptions};
use evertip_gateway::session::{replay, write_run, SessionHeader, SessionLog};
use evertip_gateway::GatewayError;

#[derive(Parser)]
#[command(
    name = "evertip",
    version,
    about = "Eversion robot simulator gateway and tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the operator gateway.
    Serve {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Tick against the wall clock instead of waiting for `step` requests.
        #[arg(long)]
        realtime: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write a session log.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Run a scenario script and write its session log.
    Run {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-simulate a session log and compare telemetry.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
    /// Coverage table over one or more session logs.
    Report {
        #[arg(long, required = true)]
        log: Vec<PathBuf>,
    },
    /// Spring and servo sizing report.
    DesignCheck {
        #[arg(long)]
        springs: PathBuf,
        #[arg(long)]
        servos: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode, GatewayError> {
    match cmd {
        Cmd::Serve {
            scene,
            config,
            port,
            bind,
            realtime,
            seed,
            record,
        } => {
            let loaded = Arc::new(Scene::load(&scene)?);
            let config = match config {
                Some(path) => SimConfig::load(&path)?,
                None => SimConfig::default(),
            };
            let listener = TcpListener::bind((bind.as_str(), port)).map_err(GatewayError::Net)?;
            let options = ServeOptions {
                realtime,
                seed,
                goal: None,
                record,
            };
            let gateway = serve(listener, &scene, loaded, config, options)?;
            println!(
                "listening on {} ({})",
                gateway.local_addr(),
                if realtime { "realtime" } else { "lockstep" }
            );
            let stats = gateway.wait()?;
            println!("stopped after {} ticks", stats.end_tick);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { script, seed, out } => {
            let script = ScenarioScript::load(&script)?;
            let seed = seed.unwrap_or(script.seed);
            let record = run_scenario(&script, Some(seed))?;
            let header = SessionHeader::new(
                &script.scene_path,
                &script.name,
                &script.config,
                seed,
                script.goal.as_ref(),
            )?;
            write_run(&out, &header, &record)?;
            println!(
                "{}: seed {seed}, {} ticks, {} frames, goal {}",
                script.name,
                record.end_tick,
                record.frames.len(),
                if record.success {
                    "reached"
                } else {
                    "not reached"
                }
            );
            if let (Some(grid), Some(c)) = (&record.coverage_grid, &record.coverage) {
                let row = &c.tests[0];
                println!(
                    "{grid}: {}/{} cells, {}%",
                    row.count, c.total_cells, row.percent
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Replay { log } => {
            let session = SessionLog::read(&log)?;
            let outcome = replay(&session)?;
            match outcome.first_mismatch {
                None => {
                    println!(
                        "{}: {} frames identical",
                        log.display(),
                        outcome.frames.len()
                    );
                    if let Some(c) = &outcome.run.coverage {
                        print!("{}", c.render_table());
                    }
                    Ok(ExitCode::SUCCESS)
                }
                Some(i) => {
                    println!(
                        "{}: telemetry diverges at frame {} ({} recorded, {} replayed)",
                        log.display(),
                        i + 1,
                        session.frames.len(),
                        outcome.frames.len()
                    );
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Cmd::Report { log } => {
            let mut counts = Vec::new();
            let mut total = None;
            for path in &log {
                let (count, cells) = final_coverage(path)?;
                if total.is_some_and(|t| t != cells) {
                    return Err(GatewayError::Log {
                        path: path.clone(),
                        line: 0,
                        message: format!(
                            "grid has {cells} cells, earlier logs had {}",
                            total.unwrap_or(0)
                        ),
                    });
                }
                total = Some(cells);
                counts.push(count);
            }
            let report = coverage_stats(&counts, total.unwrap_or(0))?;
            print!("{}", report.render_table());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::DesignCheck {
            springs,
            servos,
            json,
        } => {
            let inputs = DesignInputs::load(&springs)?;
            let catalog = load_catalog(&servos)?;
            let report = design_check(&inputs, &catalog)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&report).expect("report serializes")
                );
            } else {
                print_design(&report);
            }
            Ok(if report.feasibility.selected.is_some() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

/// Sprayed cells and grid size at the end of a logged session.
fn final_coverage(path: &Path) -> Result<(usize, usize), GatewayError> {
    let log = SessionLog::read(path)?;
    if let Some(c) = log.summary.as_ref().and_then(|s| s.coverage.as_ref()) {
        return Ok((c.tests[0].count, c.total_cells));
    }
    log.frames
        .last()
        .and_then(|f| f.snapshot.coverage.first())
        .map(|c| (c.hits, c.cells))
        .ok_or_else(|| GatewayError::Log {
            path: path.to_path_buf(),
            line: 0,
            message: "no coverage recorded".into(),
        })
}

fn print_design(r: &DesignReport) {
    let f = &r.feasibility;
    println!("shear modulus      {:.2} GPa", r.shear_modulus / 1e9);
    println!("spring constant    {:.1} N/m", r.spring_constant);
    println!("force per spring   {:.3} N", r.per_spring_force);
    println!("tendon force       {:.3} N", f.requirement.total_force);
    println!(
        "required torque    {:.4} N·m at {:.1} mm spool radius",
        f.required_torque,
        f.spool.radius * 1e3
    );
    println!(
        "required travel    {:.1} mm",
        f.requirement.required_displacement * 1e3
    );
    println!();
    println!(
        "{:<12} {:>6} {:>9} {:>9} {:>10} {:>9}",
        "servo", "angle", "kg·cm", "N·m", "travel mm", "feasible"
    );
    for s in &f.servos {
        println!(
            "{:<12} {:>6.0} {:>9.1} {:>9.4} {:>10.1} {:>9}",
            s.name,
            s.operating_angle,
            s.torque_kg_cm,
            s.stall_torque_si,
            s.spool_travel * 1e3,
            if s.feasible() { "yes" } else { "no" }
        );
    }
    println!();
    match &f.selected {
        Some(name) => println!("selected: {name}"),
        None => println!("no servo in the catalog meets the requirement"),
    }
}
