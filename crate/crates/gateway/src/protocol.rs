//! Line-delimited JSON wire protocol.
//!
//! Every message is one UTF-8 JSON object on its own line. Client messages
//! carry `seq` (strictly increasing per connection), `timestamp_ms` and a
//! `kind`:
//!
//! ```text
//! {"seq":1,"timestamp_ms":0,"kind":"hello","protocol_version":1}
//! {"seq":2,"timestamp_ms":5,"kind":"joystick","x":1.0,"y":0.0}
//! {"seq":3,"timestamp_ms":9,"kind":"set_pressure","kpa":40.0}
//! {"seq":4,"timestamp_ms":9,"kind":"step","ticks":100}
//! ```
//!
//! Server messages are tagged by `type`: `hello`, `telemetry`, `event`,
//! `ack`, `error`, `warning` and `role`.

use evertip_core::sim::{Command, Event, Snapshot};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Hello {
        protocol_version: u32,
    },
    /// Advance a lockstep session by `ticks` simulation steps.
    Step {
        ticks: u64,
    },
    Command(Command),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientMessage {
    pub seq: u64,
    pub timestamp_ms: u64,
    pub request: Request,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("empty line")]
    Empty,
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("unknown kind `{0}`")]
    UnknownKind(String),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

impl DecodeError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        DecodeError::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Name of the offending field, when there is one.
    pub fn field_name(&self) -> Option<&str> {
        match self {
            DecodeError::Field { field, .. } => Some(field),
            DecodeError::UnknownKind(_) => Some("kind"),
            _ => None,
        }
    }
}

struct Fields {
    obj: Map<String, Value>,
}

impl Fields {
    fn take(&mut self, name: &str) -> Result<Value, DecodeError> {
        self.obj
            .remove(name)
            .ok_or_else(|| DecodeError::field(name, "missing"))
    }

    fn u64(&mut self, name: &str) -> Result<u64, DecodeError> {
        self.take(name)?
            .as_u64()
            .ok_or_else(|| DecodeError::field(name, "expected a non-negative integer"))
    }

    fn f64(&mut self, name: &str) -> Result<f64, DecodeError> {
        self.take(name)?
            .as_f64()
            .ok_or_else(|| DecodeError::field(name, "expected a number"))
    }

    fn bool(&mut self, name: &str) -> Result<bool, DecodeError> {
        self.take(name)?
            .as_bool()
            .ok_or_else(|| DecodeError::field(name, "expected true or false"))
    }

    fn string(&mut self, name: &str) -> Result<String, DecodeError> {
        match self.take(name)? {
            Value::String(s) => Ok(s),
            _ => Err(DecodeError::field(name, "expected a string")),
        }
    }

    fn finish(self) -> Result<(), DecodeError> {
        match self.obj.keys().next() {
            Some(extra) => Err(DecodeError::field(extra, "unknown field")),
            None => Ok(()),
        }
    }
}

/// Parses one line. No state is touched on error.
pub fn decode(line: &str) -> Result<ClientMessage, DecodeError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(DecodeError::Empty);
    }
    let obj = match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(obj)) => obj,
        Ok(_) => return Err(DecodeError::Malformed("expected a JSON object".into())),
        Err(e) => return Err(DecodeError::Malformed(e.to_string())),
    };
    let mut f = Fields { obj };
    let kind = f.string("kind")?;
    let seq = f.u64("seq")?;
    let timestamp_ms = f.u64("timestamp_ms")?;
    let request = match kind.as_str() {
        "hello" => Request::Hello {
            protocol_version: u32::try_from(f.u64("protocol_version")?)
                .map_err(|_| DecodeError::field("protocol_version", "out of range"))?,
        },
        "step" => Request::Step {
            ticks: f.u64("ticks")?,
        },
        "joystick" => Request::Command(Command::Joystick {
            x: f.f64("x")?,
            y: f.f64("y")?,
        }),
        "set_pressure" => Request::Command(Command::SetPressure { kpa: f.f64("kpa")? }),
        "spray" => Request::Command(Command::Spray { on: f.bool("on")? }),
        "retract" => Request::Command(Command::Retract {
            meters: f.f64("meters")?,
        }),
        "estop" => Request::Command(Command::Estop),
        "resume" => Request::Command(Command::Resume),
        "select_payload" => Request::Command(Command::SelectPayload {
            id: f.string("id")?,
        }),
        other => return Err(DecodeError::UnknownKind(other.to_string())),
    };
    f.finish()?;
    if let Request::Command(cmd) = &request {
        cmd.validate().map_err(|e| match e.field {
            Some(field) => DecodeError::Field {
                field,
                message: e.message,
            },
            None => DecodeError::Malformed(e.message),
        })?;
    }
    Ok(ClientMessage {
        seq,
        timestamp_ms,
        request,
    })
}

/// Serializes a client message as one line, without the trailing newline.
pub fn encode(msg: &ClientMessage) -> String {
    let mut obj = Map::new();
    obj.insert("seq".into(), msg.seq.into());
    obj.insert("timestamp_ms".into(), msg.timestamp_ms.into());
    match &msg.request {
        Request::Hello { protocol_version } => {
            obj.insert("kind".into(), "hello".into());
            obj.insert("protocol_version".into(), (*protocol_version).into());
        }
        Request::Step { ticks } => {
            obj.insert("kind".into(), "step".into());
            obj.insert("ticks".into(), (*ticks).into());
        }
        Request::Command(cmd) => {
            if let Value::Object(fields) = serde_json::to_value(cmd).expect("command serializes") {
                obj.extend(fields);
            }
        }
    }
    Value::Object(obj).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Operator,
    Observer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    /// Frame counter for the session.
    pub seq: u64,
    #[serde(flatten)]
    pub snapshot: Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        protocol_version: u32,
        role: Role,
        scene: String,
        dt: f64,
        telemetry_hz: f64,
        lockstep: bool,
    },
    Telemetry(TelemetryFrame),
    Event(Event),
    /// The message with this seq was processed; `tick` is the simulation
    /// tick count afterwards.
    Ack {
        seq: u64,
        tick: u64,
    },
    Error {
        #[serde(default)]
        seq: Option<u64>,
        #[serde(default)]
        field: Option<String>,
        message: String,
    },
    Warning {
        #[serde(default)]
        seq: Option<u64>,
        message: String,
    },
    Role {
        role: Role,
    },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }

    pub fn from_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}
