//! Scene files: the pipe network, its vessels and the target grids mounted
//! inside them.
//!
//! A scene is TOML with a `version` header:
//!
//! ```toml
//! version = 1
//! name = "straight run into a glove box"
//! entry = "inlet"
//!
//! [[nodes]]
//! id = "inlet"
//! position = [0.0, 0.0, 0.2]
//!
//! [[segments]]
//! id = "main"
//! from = "inlet"
//! to = "outlet"
//! diameter = 0.0508
//! # arc_center = [x, y, z]    # circular-arc centreline
//!
//! [[junctions]]              # optional exit tables
//! node = "tee"
//! from = "main"
//! exits = [{ segment = "left", azimuth_deg = 90.0 }, { segment = "on", straight = true }]
//!
//! [[terminals]]
//! id = "box"
//! node = "outlet"
//! min = [1.0, -0.3, 0.0]
//! max = [1.5, 0.3, 0.4]
//! entry_wall = "x-"
//! panel_rows = 3
//! panel_cols = 3
//!
//! [[grids]]
//! id = "paper"
//! terminal = "box"
//! wall = "x+"
//! rows = 6
//! cols = 10
//! cell_size = 0.042
//! offset = [0.0, 0.0]        # grid centre relative to the wall centre (right, up)
//! ```

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{describe_toml_error, Error, Result};
use crate::network::{JunctionDef, Node, PipeNetwork, SegmentDef, TerminalDef, Wall};
use crate::spray::TargetGrid;

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    version: u32,
    #[serde(default)]
    name: String,
    entry: String,
    nodes: Vec<NodeRecord>,
    segments: Vec<SegmentRecord>,
    #[serde(default)]
    junctions: Vec<JunctionRecord>,
    #[serde(default)]
    terminals: Vec<TerminalRecord>,
    #[serde(default)]
    grids: Vec<GridRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRecord {
    id: String,
    position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentRecord {
    id: String,
    from: String,
    to: String,
    diameter: f64,
    #[serde(default)]
    arc_center: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JunctionRecord {
    node: String,
    from: String,
    exits: Vec<ExitRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExitRecord {
    segment: String,
    #[serde(default)]
    azimuth_deg: Option<f64>,
    #[serde(default)]
    straight: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TerminalRecord {
    id: String,
    node: String,
    min: [f64; 3],
    max: [f64; 3],
    #[serde(default)]
    entry_wall: Option<Wall>,
    #[serde(default = "default_panels")]
    panel_rows: usize,
    #[serde(default = "default_panels")]
    panel_cols: usize,
}

fn default_panels() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridRecord {
    id: String,
    terminal: String,
    wall: Wall,
    rows: usize,
    cols: usize,
    cell_size: f64,
    #[serde(default)]
    offset: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    pub network: PipeNetwork,
    /// Target grids declared in the scene, in file order.
    pub grids: Vec<TargetGrid>,
}

impl Scene {
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SceneFile =
            toml::from_str(text).map_err(|e| Error::input(describe_toml_error(text, &e)))?;
        if file.version != SCENE_VERSION {
            return Err(Error::input(format!(
                "unsupported scene version {} (expected {SCENE_VERSION})",
                file.version
            )));
        }

        let nodes = file
            .nodes
            .into_iter()
            .map(|n| Node {
                id: n.id,
                position: Vector3::from(n.position),
            })
            .collect();
        let segments = file
            .segments
            .into_iter()
            .map(|s| SegmentDef {
                id: s.id,
                from: s.from,
                to: s.to,
                diameter: s.diameter,
                arc_center: s.arc_center.map(Vector3::from),
            })
            .collect();
        let mut junctions = Vec::new();
        for j in file.junctions {
            let mut exits = Vec::new();
            for e in j.exits {
                match (e.azimuth_deg, e.straight) {
                    (Some(a), false) => exits.push((e.segment, Some(a))),
                    (None, true) => exits.push((e.segment, None)),
                    _ => {
                        return Err(Error::input(format!(
                            "junction `{}` exit `{}`: give exactly one of azimuth_deg or straight",
                            j.node, e.segment
                        )))
                    }
                }
            }
            junctions.push(JunctionDef {
                node: j.node,
                arriving: j.from,
                exits,
            });
        }
        let terminals = file
            .terminals
            .into_iter()
            .map(|t| TerminalDef {
                id: t.id,
                node: t.node,
                min: Vector3::from(t.min),
                max: Vector3::from(t.max),
                entry_wall: t.entry_wall,
                panel_rows: t.panel_rows,
                panel_cols: t.panel_cols,
            })
            .collect();
        let network = PipeNetwork::build(nodes, segments, junctions, terminals, &file.entry)?;

        let mut grids: Vec<TargetGrid> = Vec::new();
        for g in file.grids {
            let terminal = network.terminal(&g.terminal).ok_or_else(|| {
                Error::input(format!(
                    "grid `{}`: unknown terminal `{}`",
                    g.id, g.terminal
                ))
            })?;
            if grids.iter().any(|other| other.id == g.id) {
                return Err(Error::input(format!("duplicate grid id `{}`", g.id)));
            }
            let plane = terminal.wall_plane(g.wall);
            let width = g.cols as f64 * g.cell_size;
            let height = g.rows as f64 * g.cell_size;
            if g.offset[0].abs() + width / 2.0 > plane.width / 2.0 + 1e-9
                || g.offset[1].abs() + height / 2.0 > plane.height / 2.0 + 1e-9
            {
                return Err(Error::input(format!(
                    "grid `{}` does not fit on wall {} of `{}`",
                    g.id,
                    g.wall.label(),
                    g.terminal
                )));
            }
            let center = plane.center + plane.right * g.offset[0] + plane.up * g.offset[1];
            grids.push(TargetGrid::new(
                &g.id,
                g.rows,
                g.cols,
                g.cell_size,
                g.cell_size,
                &plane,
                center,
            )?);
        }

        Ok(Scene {
            name: file.name,
            network,
            grids,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| Error::load(path, e.to_string()))
    }

    /// Scene grids plus one panel grid per sprayable wall of every terminal,
    /// named `<terminal>/<wall>`.
    pub fn all_grids(&self) -> Vec<TargetGrid> {
        let mut out = self.grids.clone();
        for t in &self.network.terminals {
            for wall in t.sprayable_walls() {
                let plane = t.wall_plane(wall);
                let id = format!("{}/{}", t.id, wall.label());
                out.push(
                    TargetGrid::covering(&id, &plane, t.panel_rows, t.panel_cols)
                        .expect("terminal panels validated"),
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const GLOVEBOX: &str = r#"
version = 1
name = "inlet into a glove box"
entry = "inlet"

[[nodes]]
id = "inlet"
position = [0.0, 0.0, 0.2]

[[nodes]]
id = "outlet"
position = [1.0, 0.0, 0.2]

[[segments]]
id = "main"
from = "inlet"
to = "outlet"
diameter = 0.0508

[[terminals]]
id = "box"
node = "outlet"
min = [1.0, -0.3, 0.0]
max = [1.4, 0.3, 0.4]
entry_wall = "x-"

[[grids]]
id = "paper"
terminal = "box"
wall = "x+"
rows = 6
cols = 10
cell_size = 0.042
"#;

    #[test]
    fn loads_glovebox() {
        let scene = Scene::from_toml(GLOVEBOX).unwrap();
        assert_eq!(scene.grids.len(), 1);
        let g = &scene.grids[0];
        assert_eq!(g.len(), 60);
        assert_eq!(g.normal, -Vector3::x());
        assert_eq!(g.center, Vector3::new(1.4, 0.0, 0.2));
        // five sprayable walls, one excluded as the entry
        assert_eq!(scene.all_grids().len(), 6);
    }

    #[test]
    fn version_is_checked() {
        let text = GLOVEBOX.replace("version = 1", "version = 2");
        let err = Scene::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("version 2"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = GLOVEBOX.replace("diameter = 0.0508", "diameter = \"wide\"");
        let err = Scene::from_toml(&text).unwrap_err().to_string();
        // the fixture opens with a blank line
        assert!(err.contains("line 18"), "{err}");
        let text = GLOVEBOX.replace("cell_size = 0.042", "cell_size = 0.042\ncolour = 1");
        let err = Scene::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn oversize_grid_rejected() {
        let text = GLOVEBOX.replace("cell_size = 0.042", "cell_size = 0.1");
        let err = Scene::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("does not fit"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_item() {
        let text = GLOVEBOX.replace("to = \"outlet\"", "to = \"nowhere\"");
        let err = Scene::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("main") && err.contains("nowhere"), "{err}");
    }
}
