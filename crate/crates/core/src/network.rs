//! Pipe network the eversion body grows through.
//!
//! Nodes are points in the world, segments are straight or circular-arc
//! centrelines between two nodes. A node with three or more segments is a
//! junction; leaving a junction is decided by exit azimuths measured in the
//! pipe frame of the arriving segment (see [`pipe_frame`]). Terminals are
//! box-shaped vessels attached to a node where the pipe opens.

use std::collections::HashMap;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use petgraph::graph::UnGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::wrap_tau;

/// Exits closer than this to the arrival direction count as straight-through
/// when azimuths are derived from geometry.
const STRAIGHT_THROUGH_TOLERANCE: f64 = 0.35; // ~20 deg

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Centerline {
    Straight,
    /// Circular arc about `center`, sweeping `sweep` radians from the
    /// start node around `axis`.
    Arc {
        center: Vector3<f64>,
        axis: Unit<Vector3<f64>>,
        radius: f64,
        sweep: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub from: usize,
    pub to: usize,
    /// Inner diameter, m.
    pub diameter: f64,
    pub centerline: Centerline,
    start: Vector3<f64>,
    end: Vector3<f64>,
}

impl Segment {
    pub fn length(&self) -> f64 {
        match &self.centerline {
            Centerline::Straight => (self.end - self.start).norm(),
            Centerline::Arc { radius, sweep, .. } => radius * sweep,
        }
    }

    /// Point at arc length `s` measured from the `from` node.
    pub fn point_at(&self, s: f64) -> Vector3<f64> {
        match &self.centerline {
            Centerline::Straight => {
                let len = self.length();
                if s <= 0.0 {
                    self.start
                } else if s >= len {
                    self.end
                } else {
                    self.start + (self.end - self.start) * (s / len)
                }
            }
            Centerline::Arc {
                center,
                axis,
                radius,
                sweep,
            } => {
                let angle = (s / radius).clamp(0.0, *sweep);
                center + UnitQuaternion::from_axis_angle(axis, angle) * (self.start - center)
            }
        }
    }

    /// Unit tangent at `s`, pointing from `from` towards `to`.
    pub fn tangent_at(&self, s: f64) -> Vector3<f64> {
        match &self.centerline {
            Centerline::Straight => (self.end - self.start).normalize(),
            Centerline::Arc { center, axis, .. } => {
                let radial = self.point_at(s) - center;
                axis.cross(&radial).normalize()
            }
        }
    }

    /// Distance from `p` to the centreline, used for consistency checks.
    pub fn distance_to_centerline(&self, p: &Vector3<f64>) -> f64 {
        match &self.centerline {
            Centerline::Straight => {
                let d = self.end - self.start;
                let t = ((p - self.start).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
                (self.start + d * t - p).norm()
            }
            Centerline::Arc {
                center,
                axis,
                radius,
                sweep,
            } => {
                let rel = p - center;
                let along = rel.dot(axis);
                let planar = rel - axis.into_inner() * along;
                let r0 = self.start - center;
                let mut angle = r0.angle(&planar);
                if r0.cross(&planar).dot(axis) < 0.0 {
                    angle = std::f64::consts::TAU - angle;
                }
                if angle <= *sweep && planar.norm() > 0.0 {
                    ((planar.norm() - radius).powi(2) + along * along).sqrt()
                } else {
                    (p - self.start).norm().min((p - self.end).norm())
                }
            }
        }
    }

    pub fn other_end(&self, node: usize) -> usize {
        if node == self.from {
            self.to
        } else {
            self.from
        }
    }
}

/// Frame of the pipe at a point with travel direction `tangent`: z along
/// the tangent, y towards world up (+z, or +y when travelling vertically),
/// x completing a right-handed frame. Bend azimuth 0 is +x.
pub fn pipe_frame(tangent: &Vector3<f64>) -> Rotation3<f64> {
    let z = tangent.normalize();
    let up = if z.z.abs() > 0.999 {
        Vector3::y()
    } else {
        Vector3::z()
    };
    let y = (up - z * up.dot(&z)).normalize();
    let x = y.cross(&z);
    Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Wall {
    #[serde(rename = "x-")]
    XMin,
    #[serde(rename = "x+")]
    XMax,
    #[serde(rename = "y-")]
    YMin,
    #[serde(rename = "y+")]
    YMax,
    #[serde(rename = "z-")]
    ZMin,
    #[serde(rename = "z+")]
    ZMax,
}

impl Wall {
    pub const ALL: [Wall; 6] = [
        Wall::XMin,
        Wall::XMax,
        Wall::YMin,
        Wall::YMax,
        Wall::ZMin,
        Wall::ZMax,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Wall::XMin => "x-",
            Wall::XMax => "x+",
            Wall::YMin => "y-",
            Wall::YMax => "y+",
            Wall::ZMin => "z-",
            Wall::ZMax => "z+",
        }
    }

    fn axis(&self) -> usize {
        match self {
            Wall::XMin | Wall::XMax => 0,
            Wall::YMin | Wall::YMax => 1,
            Wall::ZMin | Wall::ZMax => 2,
        }
    }

    fn is_max(&self) -> bool {
        matches!(self, Wall::XMax | Wall::YMax | Wall::ZMax)
    }
}

/// Geometry of one box wall as seen from inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallPlane {
    pub center: Vector3<f64>,
    /// Unit normal pointing into the box.
    pub inward: Vector3<f64>,
    /// In-plane unit axis to the viewer's right.
    pub right: Vector3<f64>,
    /// In-plane unit axis upwards.
    pub up: Vector3<f64>,
    pub width: f64,
    pub height: f64,
}

/// Sealed vessel (glove box) at the end of a pipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Terminal {
    pub id: String,
    pub node: usize,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    /// Wall the pipe enters through; not a spray target.
    pub entry_wall: Option<Wall>,
    pub panel_rows: usize,
    pub panel_cols: usize,
}

impl Terminal {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] - 1e-9 && p[i] <= self.max[i] + 1e-9)
    }

    pub fn wall_plane(&self, wall: Wall) -> WallPlane {
        let axis = wall.axis();
        let mut center = (self.min + self.max) / 2.0;
        center[axis] = if wall.is_max() {
            self.max[axis]
        } else {
            self.min[axis]
        };
        let mut outward = Vector3::zeros();
        outward[axis] = if wall.is_max() { 1.0 } else { -1.0 };
        let up = if axis == 2 {
            Vector3::y()
        } else {
            Vector3::z()
        };
        let right = outward.cross(&up);
        let extent = self.max - self.min;
        WallPlane {
            center,
            inward: -outward,
            right,
            up,
            width: right.abs().dot(&extent),
            height: up.abs().dot(&extent),
        }
    }

    pub fn sprayable_walls(&self) -> impl Iterator<Item = Wall> + '_ {
        Wall::ALL
            .into_iter()
            .filter(move |w| Some(*w) != self.entry_wall)
    }
}

/// How a junction exit is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitDirection {
    /// Azimuth in the arrival pipe frame, radians in [0, 2π).
    Azimuth(f64),
    StraightThrough,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JunctionExit {
    pub segment: usize,
    pub direction: ExitDirection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipeNetwork {
    pub nodes: Vec<Node>,
    pub segments: Vec<Segment>,
    pub terminals: Vec<Terminal>,
    /// Node the robot base is anchored at.
    pub entry: usize,
    incident: Vec<Vec<usize>>,
    /// Explicit exit tables keyed by (junction node, arriving segment).
    exit_tables: HashMap<(usize, usize), Vec<JunctionExit>>,
}

/// Segment description used to assemble a network.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDef {
    pub id: String,
    pub from: String,
    pub to: String,
    pub diameter: f64,
    pub arc_center: Option<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JunctionDef {
    pub node: String,
    pub arriving: String,
    /// (segment id, azimuth in degrees or None for straight-through)
    pub exits: Vec<(String, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TerminalDef {
    pub id: String,
    pub node: String,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    pub entry_wall: Option<Wall>,
    pub panel_rows: usize,
    pub panel_cols: usize,
}

impl PipeNetwork {
    pub fn build(
        nodes: Vec<Node>,
        segments: Vec<SegmentDef>,
        junctions: Vec<JunctionDef>,
        terminals: Vec<TerminalDef>,
        entry: &str,
    ) -> Result<Self> {
        let mut node_index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate node id `{}`", n.id)));
            }
        }
        let lookup = |id: &str, what: &str| {
            node_index
                .get(id)
                .copied()
                .ok_or_else(|| Error::input(format!("{what} references unknown node `{id}`")))
        };

        let mut built = Vec::with_capacity(segments.len());
        let mut segment_index = HashMap::new();
        for def in segments {
            let from = lookup(&def.from, &format!("segment `{}`", def.id))?;
            let to = lookup(&def.to, &format!("segment `{}`", def.id))?;
            if from == to {
                return Err(Error::input(format!("segment `{}` is a loop", def.id)));
            }
            if !(def.diameter > 0.0) {
                return Err(Error::input(format!(
                    "segment `{}`: diameter must be positive",
                    def.id
                )));
            }
            let start = nodes[from].position;
            let end = nodes[to].position;
            let centerline = match def.arc_center {
                None => Centerline::Straight,
                Some(center) => arc_between(&def.id, center, start, end)?,
            };
            if segment_index.insert(def.id.clone(), built.len()).is_some() {
                return Err(Error::input(format!("duplicate segment id `{}`", def.id)));
            }
            built.push(Segment {
                id: def.id,
                from,
                to,
                diameter: def.diameter,
                centerline,
                start,
                end,
            });
        }

        let mut incident = vec![Vec::new(); nodes.len()];
        let mut graph = UnGraph::<(), ()>::new_undirected();
        let handles: Vec<_> = nodes.iter().map(|_| graph.add_node(())).collect();
        for (i, s) in built.iter().enumerate() {
            incident[s.from].push(i);
            incident[s.to].push(i);
            graph.add_edge(handles[s.from], handles[s.to], ());
        }
        if !nodes.is_empty() && petgraph::algo::connected_components(&graph) != 1 {
            return Err(Error::input("pipe network is not connected"));
        }
        let entry = lookup(entry, "entry")?;
        if incident[entry].is_empty() {
            return Err(Error::input("entry node has no segment"));
        }

        let seg_lookup = |id: &str| {
            segment_index
                .get(id)
                .copied()
                .ok_or_else(|| Error::input(format!("unknown segment `{id}`")))
        };
        let mut exit_tables = HashMap::new();
        for j in junctions {
            let node = lookup(&j.node, "junction")?;
            if incident[node].len() < 3 {
                return Err(Error::input(format!(
                    "junction `{}` has fewer than three segments",
                    j.node
                )));
            }
            let arriving = seg_lookup(&j.arriving)?;
            if !incident[node].contains(&arriving) {
                return Err(Error::input(format!(
                    "junction `{}`: segment `{}` does not touch it",
                    j.node, j.arriving
                )));
            }
            let mut exits = Vec::new();
            let mut straight = false;
            for (seg_id, azimuth) in j.exits {
                let segment = seg_lookup(&seg_id)?;
                if segment == arriving || !incident[node].contains(&segment) {
                    return Err(Error::input(format!(
                        "junction `{}`: `{seg_id}` is not an exit",
                        j.node
                    )));
                }
                let direction = match azimuth {
                    Some(deg) => {
                        let a = wrap_tau(deg.to_radians());
                        let clash = exits.iter().any(|e: &JunctionExit| {
                            matches!(e.direction, ExitDirection::Azimuth(b) if angular_distance(a, b) < 1e-9)
                        });
                        if clash {
                            return Err(Error::input(format!(
                                "junction `{}`: duplicate exit azimuth {deg}",
                                j.node
                            )));
                        }
                        ExitDirection::Azimuth(a)
                    }
                    None => {
                        if straight {
                            return Err(Error::input(format!(
                                "junction `{}`: more than one straight-through exit",
                                j.node
                            )));
                        }
                        straight = true;
                        ExitDirection::StraightThrough
                    }
                };
                exits.push(JunctionExit { segment, direction });
            }
            if exit_tables.insert((node, arriving), exits).is_some() {
                return Err(Error::input(format!(
                    "junction `{}` has two tables for `{}`",
                    j.node, j.arriving
                )));
            }
        }

        let mut built_terminals = Vec::new();
        for t in terminals {
            let node = lookup(&t.node, &format!("terminal `{}`", t.id))?;
            if !(0..3).all(|i| t.max[i] > t.min[i]) {
                return Err(Error::input(format!("terminal `{}`: empty box", t.id)));
            }
            if t.panel_rows == 0 || t.panel_cols == 0 {
                return Err(Error::input(format!(
                    "terminal `{}`: zero panel cells",
                    t.id
                )));
            }
            built_terminals.push(Terminal {
                id: t.id,
                node,
                min: t.min,
                max: t.max,
                entry_wall: t.entry_wall,
                panel_rows: t.panel_rows,
                panel_cols: t.panel_cols,
            });
        }

        Ok(PipeNetwork {
            nodes,
            segments: built,
            terminals: built_terminals,
            entry,
            incident,
            exit_tables,
        })
    }

    pub fn incident(&self, node: usize) -> &[usize] {
        &self.incident[node]
    }

    pub fn is_junction(&self, node: usize) -> bool {
        self.incident[node].len() >= 3
    }

    pub fn terminal_at(&self, node: usize) -> Option<&Terminal> {
        self.terminals.iter().find(|t| t.node == node)
    }

    pub fn terminal(&self, id: &str) -> Option<&Terminal> {
        self.terminals.iter().find(|t| t.id == id)
    }

    pub fn segment_id(&self, idx: usize) -> &str {
        &self.segments[idx].id
    }

    pub fn segment_by_id(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    /// Exits from `node` when arriving along `arriving`. Uses the scene's
    /// table when present, otherwise derives azimuths from the exit
    /// tangents.
    pub fn junction_exits(&self, node: usize, arriving: usize) -> Vec<JunctionExit> {
        if let Some(table) = self.exit_tables.get(&(node, arriving)) {
            return table.clone();
        }
        let seg = &self.segments[arriving];
        let arrive_tangent = if seg.to == node {
            seg.tangent_at(seg.length())
        } else {
            -seg.tangent_at(0.0)
        };
        let frame = pipe_frame(&arrive_tangent);
        self.incident[node]
            .iter()
            .filter(|&&s| s != arriving)
            .map(|&s| {
                let exit = &self.segments[s];
                let t = if exit.from == node {
                    exit.tangent_at(0.0)
                } else {
                    -exit.tangent_at(exit.length())
                };
                let local = frame.inverse() * t;
                let direction = if local.z.acos() < STRAIGHT_THROUGH_TOLERANCE {
                    ExitDirection::StraightThrough
                } else {
                    ExitDirection::Azimuth(wrap_tau(local.y.atan2(local.x)))
                };
                JunctionExit {
                    segment: s,
                    direction,
                }
            })
            .collect()
    }
}

/// Smallest absolute difference between two azimuths, radians.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_tau(a - b);
    d.min(std::f64::consts::TAU - d)
}

fn arc_between(
    id: &str,
    center: Vector3<f64>,
    start: Vector3<f64>,
    end: Vector3<f64>,
) -> Result<Centerline> {
    let r0 = start - center;
    let r1 = end - center;
    let radius = r0.norm();
    if radius <= 0.0 || (r1.norm() - radius).abs() > 1e-6 * radius.max(1.0) {
        return Err(Error::input(format!(
            "segment `{id}`: arc end points are not equidistant from the centre"
        )));
    }
    let normal = r0.cross(&r1);
    if normal.norm() < 1e-12 * radius * radius {
        return Err(Error::input(format!(
            "segment `{id}`: arc end points are collinear with the centre"
        )));
    }
    Ok(Centerline::Arc {
        center,
        axis: Unit::new_normalize(normal),
        radius,
        sweep: r0.angle(&r1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn node(id: &str, x: f64, y: f64) -> Node {
        Node {
            id: id.into(),
            position: Vector3::new(x, y, 0.0),
        }
    }

    fn seg(id: &str, from: &str, to: &str) -> SegmentDef {
        SegmentDef {
            id: id.into(),
            from: from.into(),
            to: to.into(),
            diameter: 0.05,
            arc_center: None,
        }
    }

    fn tee() -> Vec<Node> {
        vec![
            node("a", 0.0, 0.0),
            node("j", 1.0, 0.0),
            node("l", 1.0, 1.0),
            node("r", 1.0, -1.0),
        ]
    }

    #[test]
    fn derived_tee_azimuths() {
        let net = PipeNetwork::build(
            tee(),
            vec![
                seg("in", "a", "j"),
                seg("left", "j", "l"),
                seg("right", "j", "r"),
            ],
            vec![],
            vec![],
            "a",
        )
        .unwrap();
        let exits = net.junction_exits(1, 0);
        // travelling +x with z up: frame x axis is +y
        assert_eq!(exits.len(), 2);
        let left = exits.iter().find(|e| e.segment == 1).unwrap();
        let right = exits.iter().find(|e| e.segment == 2).unwrap();
        match (left.direction, right.direction) {
            (ExitDirection::Azimuth(l), ExitDirection::Azimuth(r)) => {
                assert!(angular_distance(l, 0.0) < 1e-9, "{l}");
                assert!(angular_distance(r, std::f64::consts::PI) < 1e-9, "{r}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_disconnected_and_duplicate_azimuths() {
        let mut nodes = tee();
        nodes.push(node("island", 5.0, 5.0));
        let err = PipeNetwork::build(nodes, vec![seg("in", "a", "j")], vec![], vec![], "a");
        assert!(err.is_err());

        let err = PipeNetwork::build(
            tee(),
            vec![
                seg("in", "a", "j"),
                seg("left", "j", "l"),
                seg("right", "j", "r"),
            ],
            vec![JunctionDef {
                node: "j".into(),
                arriving: "in".into(),
                exits: vec![("left".into(), Some(90.0)), ("right".into(), Some(450.0))],
            }],
            vec![],
            "a",
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate exit azimuth"), "{err}");
    }

    #[test]
    fn arc_geometry() {
        let nodes = vec![node("a", 1.0, 0.0), node("b", 0.0, 1.0)];
        let net = PipeNetwork::build(
            nodes,
            vec![SegmentDef {
                arc_center: Some(Vector3::zeros()),
                ..seg("bend", "a", "b")
            }],
            vec![],
            vec![],
            "a",
        )
        .unwrap();
        let s = &net.segments[0];
        assert_relative_eq!(s.length(), FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(
            s.point_at(s.length()),
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            s.tangent_at(0.0),
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
        let mid = s.point_at(s.length() / 2.0);
        assert!(s.distance_to_centerline(&mid) < 1e-12);
        assert_relative_eq!(
            s.distance_to_centerline(&Vector3::new(2.0f64.sqrt(), 2.0f64.sqrt(), 0.0)),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn frame_is_right_handed() {
        for t in [
            Vector3::x(),
            Vector3::new(1.0, 2.0, 0.3),
            Vector3::z(),
            -Vector3::z(),
        ] {
            let f = pipe_frame(&t);
            let m = f.matrix();
            assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
            assert_relative_eq!(f * Vector3::z(), t.normalize(), epsilon = 1e-12);
        }
    }

    #[test]
    fn wall_planes_face_inwards() {
        let t = Terminal {
            id: "box".into(),
            node: 0,
            min: Vector3::new(0.0, -0.3, 0.0),
            max: Vector3::new(0.6, 0.3, 0.4),
            entry_wall: Some(Wall::XMin),
            panel_rows: 2,
            panel_cols: 2,
        };
        let inside = Vector3::new(0.3, 0.0, 0.2);
        for wall in Wall::ALL {
            let p = t.wall_plane(wall);
            assert!((inside - p.center).dot(&p.inward) > 0.0, "{wall:?}");
            assert_relative_eq!(p.right.cross(&p.up), p.inward, epsilon = 1e-12);
        }
        let far = t.wall_plane(Wall::XMax);
        assert_relative_eq!(far.width, 0.6);
        assert_relative_eq!(far.height, 0.4);
        assert_eq!(t.sprayable_walls().count(), 5);
    }
}
