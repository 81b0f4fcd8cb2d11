//! Session logs: a header followed by interleaved command, telemetry and
//! event records, one JSON object per line, closed by a summary.
//!
//! The header's `config_hash` covers the scene file contents, the simulation
//! config, the seed, the goal and the protocol version. Replay recomputes it
//! and refuses to run on any difference.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use evertip_core::config::SimConfig;
use evertip_core::scenario::{replay_commands, AppliedCommand, RunRecord};
use evertip_core::scene::Scene;
use evertip_core::sim::{Event, Goal};
use evertip_core::spray::CoverageReport;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::protocol::{TelemetryFrame, PROTOCOL_VERSION};
use crate::GatewayError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub protocol_version: u32,
    /// Absolute path of the scene file.
    pub scene_ref: PathBuf,
    pub name: String,
    pub config: SimConfig,
    pub seed: u64,
    #[serde(default)]
    pub goal: Option<Goal>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub end_tick: u64,
    pub success: bool,
    /// Grid the coverage figures refer to.
    #[serde(default)]
    pub grid: Option<String>,
    #[serde(default)]
    pub coverage: Option<CoverageReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum Record {
    Header(SessionHeader),
    Command(AppliedCommand),
    Telemetry(TelemetryFrame),
    Event(Event),
    Summary(Summary),
}

pub fn config_hash(
    scene_text: &str,
    config: &SimConfig,
    seed: u64,
    goal: Option<&Goal>,
    protocol_version: u32,
) -> String {
    let mut h = Sha256::new();
    h.update(format!("evertip-session v{protocol_version}\n"));
    h.update(scene_text.as_bytes());
    h.update(b"\n--\n");
    h.update(serde_json::to_string(config).expect("config serializes"));
    h.update(b"\n--\n");
    h.update(seed.to_le_bytes());
    h.update(b"\n--\n");
    h.update(serde_json::to_string(&goal).expect("goal serializes"));
    hex::encode(h.finalize())
}

fn read_text(path: &Path) -> Result<String, GatewayError> {
    std::fs::read_to_string(path).map_err(|source| GatewayError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl SessionHeader {
    pub fn new(
        scene_path: &Path,
        name: &str,
        config: &SimConfig,
        seed: u64,
        goal: Option<&Goal>,
    ) -> Result<Self, GatewayError> {
        let scene_ref = std::fs::canonicalize(scene_path).map_err(|source| GatewayError::Io {
            path: scene_path.to_path_buf(),
            source,
        })?;
        let text = read_text(&scene_ref)?;
        Ok(SessionHeader {
            protocol_version: PROTOCOL_VERSION,
            config_hash: config_hash(&text, config, seed, goal, PROTOCOL_VERSION),
            scene_ref,
            name: name.to_string(),
            config: config.clone(),
            seed,
            goal: goal.cloned(),
        })
    }
}

/// Streams records to a file.
pub struct SessionWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl SessionWriter {
    pub fn create(path: &Path, header: &SessionHeader) -> Result<Self, GatewayError> {
        let file = File::create(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut w = SessionWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.write(&Record::Header(header.clone()))?;
        Ok(w)
    }

    pub fn write(&mut self, record: &Record) -> Result<(), GatewayError> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.out, "{line}").map_err(|source| GatewayError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn flush(&mut self) -> Result<(), GatewayError> {
        self.out.flush().map_err(|source| GatewayError::Io {
            path: self.path.clone(),
            source,
        })
    }

    pub fn finish(mut self) -> Result<(), GatewayError> {
        self.flush()
    }
}

/// Frames of a run numbered from 1 in emission order.
pub fn number_frames(run: &RunRecord) -> Vec<TelemetryFrame> {
    run.frames
        .iter()
        .enumerate()
        .map(|(i, s)| TelemetryFrame {
            seq: i as u64 + 1,
            snapshot: s.clone(),
        })
        .collect()
}

pub fn summarize(run: &RunRecord) -> Summary {
    Summary {
        end_tick: run.end_tick,
        success: run.success,
        grid: run.coverage_grid.clone(),
        coverage: run.coverage.clone(),
    }
}

/// Writes a finished run with records interleaved in tick order.
pub fn write_run(path: &Path, header: &SessionHeader, run: &RunRecord) -> Result<(), GatewayError> {
    let mut records: Vec<((u64, u8), Record)> = Vec::new();
    for f in number_frames(run) {
        records.push(((f.snapshot.tick, 0), Record::Telemetry(f)));
    }
    for e in &run.events {
        records.push(((e.tick, 1), Record::Event(e.clone())));
    }
    for c in &run.commands {
        records.push(((c.tick, 2), Record::Command(c.clone())));
    }
    records.sort_by_key(|(k, _)| *k);
    let mut w = SessionWriter::create(path, header)?;
    for (_, r) in &records {
        w.write(r)?;
    }
    w.write(&Record::Summary(summarize(run)))?;
    w.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: SessionHeader,
    pub commands: Vec<AppliedCommand>,
    pub frames: Vec<TelemetryFrame>,
    pub events: Vec<Event>,
    pub summary: Option<Summary>,
}

impl SessionLog {
    pub fn read(path: &Path) -> Result<Self, GatewayError> {
        let file = File::open(path).map_err(|source| GatewayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |line: usize, message: String| GatewayError::Log {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut header = None;
        let mut log_commands = Vec::new();
        let mut frames = Vec::new();
        let mut events = Vec::new();
        let mut summary = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| bad(n, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line).map_err(|e| bad(n, e.to_string()))?;
            match (record, header.is_some()) {
                (Record::Header(h), false) => header = Some(h),
                (Record::Header(_), true) => return Err(bad(n, "second header".into())),
                (_, false) => return Err(bad(n, "log must start with a header".into())),
                (Record::Command(c), true) => log_commands.push(c),
                (Record::Telemetry(f), true) => frames.push(f),
                (Record::Event(e), true) => events.push(e),
                (Record::Summary(s), true) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| bad(0, "empty log".into()))?;
        Ok(SessionLog {
            header,
            commands: log_commands,
            frames,
            events,
            summary,
        })
    }

    /// Tick count at which the session ended.
    pub fn end_tick(&self) -> u64 {
        match &self.summary {
            Some(s) => s.end_tick,
            None => {
                let frame = self.frames.last().map_or(0, |f| f.snapshot.tick);
                let cmd = self.commands.last().map_or(0, |c| c.tick);
                frame.max(cmd)
            }
        }
    }

    /// Checks the header hash against the scene on disk and this build.
    pub fn verify(&self) -> Result<Arc<Scene>, GatewayError> {
        let h = &self.header;
        let text = read_text(&h.scene_ref)?;
        let computed = config_hash(&text, &h.config, h.seed, h.goal.as_ref(), PROTOCOL_VERSION);
        if computed != h.config_hash {
            return Err(GatewayError::HashMismatch {
                recorded: h.config_hash.clone(),
                computed,
            });
        }
        let scene = Scene::from_toml(&text).map_err(|e| evertip_core::Error::Load {
            path: h.scene_ref.clone(),
            message: e.to_string(),
        })?;
        Ok(Arc::new(scene))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub run: RunRecord,
    pub frames: Vec<TelemetryFrame>,
    /// Index of the first frame that differs from the log, if any.
    pub first_mismatch: Option<usize>,
}

impl ReplayOutcome {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Regenerates the telemetry of a recorded session.
pub fn replay(log: &SessionLog) -> Result<ReplayOutcome, GatewayError> {
    let scene = log.verify()?;
    let h = &log.header;
    let run = replay_commands(
        scene,
        h.config.clone(),
        h.seed,
        h.goal.clone(),
        &log.commands,
        log.end_tick(),
        &h.name,
    )?;
    let frames = number_frames(&run);
    let line = |f: &TelemetryFrame| serde_json::to_string(f).expect("frame serializes");
    let first_mismatch = if frames.len() != log.frames.len() {
        Some(frames.len().min(log.frames.len()))
    } else {
        frames
            .iter()
            .zip(&log.frames)
            .position(|(a, b)| line(a) != line(b))
    };
    Ok(ReplayOutcome {
        run,
        frames,
        first_mismatch,
    })
}
