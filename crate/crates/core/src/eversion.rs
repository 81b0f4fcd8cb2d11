//! Pressure-driven growth of the everting body along a pipe network.
//!
//! The body grows at its tip only. Wall material that has already everted
//! stays where it was laid down; the wall ledger records that position once,
//! when the material leaves the tip, and the entry is only ever removed again
//! by retraction.

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::BendCommand;
use crate::network::{angular_distance, pipe_frame, ExitDirection, PipeNetwork};

/// Slack used when comparing accumulated arc lengths.
const LENGTH_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Growing,
    Holding,
    Retracting,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Arc length from the base at which this wall material sits, m.
    pub material: f64,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EversionState {
    /// kPa.
    pub pressure: f64,
    /// kPa.
    pub target_pressure: f64,
    /// m.
    pub everted_length: f64,
    /// m.
    pub max_length: f64,
    pub wall_ledger: Vec<LedgerEntry>,
    pub status: Status,
}

impl EversionState {
    pub fn new(max_length: f64) -> Self {
        EversionState {
            pressure: 0.0,
            target_pressure: 0.0,
            everted_length: 0.0,
            max_length,
            wall_ledger: Vec::new(),
            status: Status::Holding,
        }
    }
}

/// First-order regulator response towards the target pressure.
pub fn pressure_step(state: &EversionState, dt: f64, regulator_tau: f64) -> EversionState {
    debug_assert!(dt > 0.0 && regulator_tau > 0.0);
    let gain = 1.0 - (-dt / regulator_tau).exp();
    let mut next = state.clone();
    next.pressure = (state.pressure + (state.target_pressure - state.pressure) * gain).max(0.0);
    next
}

/// One traversed segment of the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub segment: usize,
    /// Travelling from the segment's `to` node towards `from`.
    pub reversed: bool,
}

/// The body's route through the network and the tip's place on it.
///
/// `offset` is the distance travelled along the last leg. Apart from the
/// very first leg, a leg is only kept while the tip is strictly past its
/// start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPath {
    pub legs: Vec<Leg>,
    pub offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum BlockReason {
    /// Pipe ends with no way on.
    DeadEnd {
        node: usize,
    },
    /// Pipe opens into a vessel; the tip stops at the opening.
    Terminal {
        node: usize,
    },
    /// Junction without a straight-through branch and no steer given.
    NeedsSteer {
        node: usize,
    },
    MaxLength,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advance {
    pub path: RobotPath,
    pub advanced: f64,
    /// Requested growth that could not be placed.
    pub residual: f64,
    pub blocked: Option<BlockReason>,
    /// Segments entered at junctions or bends, in order.
    pub entered: Vec<usize>,
}

impl RobotPath {
    /// Path of zero length at the network entry, heading into its first
    /// segment.
    pub fn start(net: &PipeNetwork) -> Self {
        let segment = net.incident(net.entry)[0];
        RobotPath {
            legs: vec![Leg {
                segment,
                reversed: net.segments[segment].to == net.entry,
            }],
            offset: 0.0,
        }
    }

    fn leg_length(net: &PipeNetwork, leg: &Leg) -> f64 {
        net.segments[leg.segment].length()
    }

    pub fn length(&self, net: &PipeNetwork) -> f64 {
        let done = &self.legs[..self.legs.len() - 1];
        done.iter().map(|l| Self::leg_length(net, l)).sum::<f64>() + self.offset
    }

    pub fn current(&self) -> Leg {
        *self.legs.last().expect("path has a leg")
    }

    pub fn contains_segment(&self, segment: usize) -> bool {
        self.legs.iter().any(|l| l.segment == segment)
    }

    /// Node the current leg leads to.
    pub fn next_node(&self, net: &PipeNetwork) -> usize {
        let leg = self.current();
        let seg = &net.segments[leg.segment];
        if leg.reversed {
            seg.from
        } else {
            seg.to
        }
    }

    fn leg_point(net: &PipeNetwork, leg: &Leg, along: f64) -> Vector3<f64> {
        let seg = &net.segments[leg.segment];
        if leg.reversed {
            seg.point_at(seg.length() - along)
        } else {
            seg.point_at(along)
        }
    }

    fn leg_tangent(net: &PipeNetwork, leg: &Leg, along: f64) -> Vector3<f64> {
        let seg = &net.segments[leg.segment];
        if leg.reversed {
            -seg.tangent_at(seg.length() - along)
        } else {
            seg.tangent_at(along)
        }
    }

    pub fn tip_position(&self, net: &PipeNetwork) -> Vector3<f64> {
        Self::leg_point(net, &self.current(), self.offset)
    }

    pub fn tip_tangent(&self, net: &PipeNetwork) -> Vector3<f64> {
        Self::leg_tangent(net, &self.current(), self.offset)
    }

    /// Pipe frame at the tip; the continuum section is mounted here.
    pub fn base_frame(&self, net: &PipeNetwork) -> Isometry3<f64> {
        let p = self.tip_position(net);
        let r = pipe_frame(&self.tip_tangent(net));
        Isometry3::from_parts(
            Translation3::from(p),
            UnitQuaternion::from_rotation_matrix(&r),
        )
    }

    /// Centreline point at arc length `s` from the base.
    pub fn point_at(&self, net: &PipeNetwork, s: f64) -> Vector3<f64> {
        let mut remaining = s.max(0.0);
        let last = self.legs.len() - 1;
        for (i, leg) in self.legs.iter().enumerate() {
            let len = Self::leg_length(net, leg);
            if i == last || remaining <= len {
                return Self::leg_point(net, leg, remaining.min(len));
            }
            remaining -= len;
        }
        unreachable!("path has at least one leg")
    }
}

/// Moves the tip `delta` metres along the network, choosing branches at
/// junctions from the steering command.
pub fn advance_along_network(
    path: &RobotPath,
    net: &PipeNetwork,
    delta: f64,
    steer: &BendCommand,
    deadband: f64,
) -> Result<Advance> {
    if !(delta >= 0.0) {
        return Err(Error::input("advance distance must be non-negative"));
    }
    let mut next = path.clone();
    let mut remaining = delta;
    let mut entered = Vec::new();
    let mut blocked = None;

    loop {
        let leg = next.current();
        let len = RobotPath::leg_length(net, &leg);
        let room = len - next.offset;
        if remaining <= room {
            next.offset += remaining;
            remaining = 0.0;
            break;
        }
        remaining -= room;
        next.offset = len;

        let node = next.next_node(net);
        if net.terminal_at(node).is_some() {
            blocked = Some(BlockReason::Terminal { node });
            break;
        }
        match choose_exit(net, node, leg.segment, steer, deadband) {
            Ok(segment) => {
                entered.push(segment);
                next.legs.push(Leg {
                    segment,
                    reversed: net.segments[segment].to == node,
                });
                next.offset = 0.0;
            }
            Err(reason) => {
                blocked = Some(reason);
                break;
            }
        }
    }

    Ok(Advance {
        path: next,
        advanced: delta - remaining,
        residual: remaining,
        blocked,
        entered,
    })
}

fn choose_exit(
    net: &PipeNetwork,
    node: usize,
    arriving: usize,
    steer: &BendCommand,
    deadband: f64,
) -> std::result::Result<usize, BlockReason> {
    let others: Vec<usize> = net
        .incident(node)
        .iter()
        .copied()
        .filter(|&s| s != arriving)
        .collect();
    match others.len() {
        0 => return Err(BlockReason::DeadEnd { node }),
        1 => return Ok(others[0]),
        _ => {}
    }
    let exits = net.junction_exits(node, arriving);
    if steer.magnitude < deadband {
        return exits
            .iter()
            .find(|e| e.direction == ExitDirection::StraightThrough)
            .map(|e| e.segment)
            .ok_or(BlockReason::NeedsSteer { node });
    }
    exits
        .iter()
        .filter_map(|e| match e.direction {
            ExitDirection::Azimuth(a) => Some((angular_distance(a, steer.direction), e.segment)),
            ExitDirection::StraightThrough => None,
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, s)| s)
        .ok_or(BlockReason::NeedsSteer { node })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrowthParams {
    /// Growth speed per kPa above threshold, m/(s·kPa).
    pub rate_coeff: f64,
    /// kPa.
    pub threshold: f64,
    /// Steering magnitude below which junctions go straight on, degrees.
    pub junction_deadband_deg: f64,
    /// Distance between wall ledger samples, m.
    pub ledger_spacing: f64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            rate_coeff: 0.02,
            threshold: 10.0,
            junction_deadband_deg: 15.0,
            ledger_spacing: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrowthOutcome {
    /// Growth the pressure asked for this step.
    pub demanded: f64,
    pub advanced: f64,
    pub residual: f64,
    pub blocked: Option<BlockReason>,
    pub entered: Vec<usize>,
}

/// Linear growth law above a pressure threshold, limited by the body's
/// length and by the network.
pub fn growth_step(
    state: &EversionState,
    path: &RobotPath,
    net: &PipeNetwork,
    steer: &BendCommand,
    dt: f64,
    params: &GrowthParams,
) -> (EversionState, RobotPath, GrowthOutcome) {
    let demanded = params.rate_coeff * (state.pressure - params.threshold).max(0.0) * dt;
    let mut next = state.clone();
    if demanded <= 0.0 {
        next.status = Status::Holding;
        let outcome = GrowthOutcome {
            demanded: 0.0,
            advanced: 0.0,
            residual: 0.0,
            blocked: None,
            entered: Vec::new(),
        };
        return (next, path.clone(), outcome);
    }

    let room = (state.max_length - state.everted_length).max(0.0);
    let capped = demanded.min(room);
    let advance = advance_along_network(
        path,
        net,
        capped,
        steer,
        params.junction_deadband_deg.to_radians(),
    )
    .expect("growth is non-negative");

    let blocked = advance
        .blocked
        .or((capped < demanded).then_some(BlockReason::MaxLength));
    next.everted_length = (state.everted_length + advance.advanced).min(state.max_length);
    next.status = if blocked.is_some() {
        Status::Blocked
    } else {
        Status::Growing
    };

    if params.ledger_spacing > 0.0 {
        // entries are the contiguous samples 1..=n
        let mut k = next.wall_ledger.len() as u64 + 1;
        loop {
            let material = k as f64 * params.ledger_spacing;
            if material > next.everted_length + LENGTH_EPS {
                break;
            }
            next.wall_ledger.push(LedgerEntry {
                material,
                position: advance.path.point_at(net, material),
            });
            k += 1;
        }
    }

    let outcome = GrowthOutcome {
        demanded,
        advanced: advance.advanced,
        residual: demanded - advance.advanced,
        blocked,
        entered: advance.entered,
    };
    (next, advance.path, outcome)
}

/// Pulls the body back by `delta` metres, unwinding the path through any
/// junctions it passed.
pub fn retract(
    path: &RobotPath,
    state: &EversionState,
    net: &PipeNetwork,
    delta: f64,
) -> Result<(RobotPath, EversionState)> {
    if !(delta >= 0.0) {
        return Err(Error::input("retract distance must be non-negative"));
    }
    if delta > state.everted_length + LENGTH_EPS {
        return Err(Error::input(format!(
            "cannot retract {delta:.4} m with only {:.4} m everted",
            state.everted_length
        )));
    }
    if delta == 0.0 {
        return Ok((path.clone(), state.clone()));
    }

    let mut next_state = state.clone();
    next_state.status = Status::Retracting;
    next_state.everted_length = state.everted_length - delta;
    if next_state.everted_length <= LENGTH_EPS {
        next_state.everted_length = 0.0;
        next_state.wall_ledger.clear();
        return Ok((RobotPath::start(net), next_state));
    }
    let keep = next_state.everted_length + LENGTH_EPS;
    while next_state
        .wall_ledger
        .last()
        .is_some_and(|e| e.material > keep)
    {
        next_state.wall_ledger.pop();
    }

    let mut next = path.clone();
    let mut remaining = delta;
    loop {
        if remaining < next.offset - LENGTH_EPS || next.legs.len() == 1 {
            next.offset = (next.offset - remaining).max(0.0);
            break;
        }
        remaining = (remaining - next.offset).max(0.0);
        next.legs.pop();
        next.offset = RobotPath::leg_length(net, &next.current());
        if remaining <= LENGTH_EPS {
            break;
        }
    }
    Ok((next, next_state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{JunctionDef, Node, SegmentDef};
    use approx::assert_relative_eq;

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

    fn straight() -> PipeNetwork {
        PipeNetwork::build(
            vec![node("a", 0.0, 0.0), node("b", 3.0, 0.0)],
            vec![seg("s", "a", "b")],
            vec![],
            vec![],
            "a",
        )
        .unwrap()
    }

    /// Inlet along +x to a tee with branches at 90 and 270 degrees.
    fn tee() -> PipeNetwork {
        PipeNetwork::build(
            vec![
                node("a", 0.0, 0.0),
                node("j", 1.0, 0.0),
                node("up", 1.0, 1.0),
                node("down", 1.0, -1.0),
            ],
            vec![
                seg("in", "a", "j"),
                seg("b90", "j", "up"),
                seg("b270", "j", "down"),
            ],
            vec![JunctionDef {
                node: "j".into(),
                arriving: "in".into(),
                exits: vec![("b90".into(), Some(90.0)), ("b270".into(), Some(270.0))],
            }],
            vec![],
            "a",
        )
        .unwrap()
    }

    fn pressurised(p: f64) -> EversionState {
        EversionState {
            pressure: p,
            target_pressure: p,
            ..EversionState::new(10.0)
        }
    }

    #[test]
    fn regulator_response() {
        let mut s = EversionState::new(1.0);
        s.target_pressure = 100.0;
        let one_tau = pressure_step(&s, 0.5, 0.5);
        assert!((one_tau.pressure - 63.21).abs() < 0.01);
        let settled = pressure_step(&s, 1e6, 0.5);
        assert_eq!(settled.pressure, 100.0);
        s.pressure = 100.0;
        assert_eq!(pressure_step(&s, 0.01, 0.5).pressure, 100.0);
    }

    #[test]
    fn straight_advance_is_exact() {
        let net = straight();
        let a = advance_along_network(
            &RobotPath::start(&net),
            &net,
            0.1,
            &BendCommand::STRAIGHT,
            0.26,
        )
        .unwrap();
        assert_eq!(a.path.offset, 0.1);
        assert_eq!(a.advanced, 0.1);
        assert_eq!(a.residual, 0.0);
        assert!(a.blocked.is_none());
        assert!(advance_along_network(&a.path, &net, -0.1, &BendCommand::STRAIGHT, 0.26).is_err());
    }

    #[test]
    fn nearest_azimuth_branch() {
        let net = tee();
        let steer = BendCommand::from_degrees(45.0, 80.0);
        let a = advance_along_network(
            &RobotPath::start(&net),
            &net,
            1.5,
            &steer,
            15f64.to_radians(),
        )
        .unwrap();
        assert_eq!(a.entered, vec![net.segment_by_id("b90").unwrap()]);
        assert_relative_eq!(a.path.offset, 0.5, epsilon = 1e-12);
        assert_relative_eq!(
            a.path.tip_position(&net),
            Vector3::new(1.0, 0.5, 0.0),
            epsilon = 1e-12
        );

        let steer = BendCommand::from_degrees(45.0, 260.0);
        let a = advance_along_network(
            &RobotPath::start(&net),
            &net,
            1.5,
            &steer,
            15f64.to_radians(),
        )
        .unwrap();
        assert_eq!(a.entered, vec![net.segment_by_id("b270").unwrap()]);
    }

    #[test]
    fn equidistant_branches_pick_lowest_id() {
        let net = tee();
        let steer = BendCommand::from_degrees(45.0, 0.0);
        let a = advance_along_network(
            &RobotPath::start(&net),
            &net,
            1.5,
            &steer,
            15f64.to_radians(),
        )
        .unwrap();
        assert_eq!(a.entered, vec![1]);
    }

    #[test]
    fn tee_without_steer_blocks() {
        let net = tee();
        let steer = BendCommand::from_degrees(10.0, 90.0);
        let a = advance_along_network(
            &RobotPath::start(&net),
            &net,
            1.5,
            &steer,
            15f64.to_radians(),
        )
        .unwrap();
        assert_eq!(a.blocked, Some(BlockReason::NeedsSteer { node: 1 }));
        assert_relative_eq!(a.residual, 0.5, epsilon = 1e-12);
        assert_eq!(a.path.offset, 1.0);
    }

    #[test]
    fn dead_end_reports_residual() {
        let net = straight();
        let a = advance_along_network(
            &RobotPath::start(&net),
            &net,
            3.25,
            &BendCommand::STRAIGHT,
            0.26,
        )
        .unwrap();
        assert_eq!(a.blocked, Some(BlockReason::DeadEnd { node: 1 }));
        assert_relative_eq!(a.residual, 0.25, epsilon = 1e-12);
        assert_relative_eq!(a.advanced, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn growth_law() {
        let net = straight();
        let params = GrowthParams {
            rate_coeff: 0.01,
            threshold: 10.0,
            ..GrowthParams::default()
        };
        let path = RobotPath::start(&net);

        let (s, _, out) = growth_step(
            &pressurised(8.0),
            &path,
            &net,
            &BendCommand::STRAIGHT,
            0.1,
            &params,
        );
        assert_eq!(out.advanced, 0.0);
        assert_eq!(s.status, Status::Holding);

        let (s, p, out) = growth_step(
            &pressurised(60.0),
            &path,
            &net,
            &BendCommand::STRAIGHT,
            0.1,
            &params,
        );
        assert_relative_eq!(out.advanced, 0.05, epsilon = 1e-15);
        assert_relative_eq!(s.everted_length, 0.05, epsilon = 1e-15);
        assert_eq!(s.status, Status::Growing);
        assert_eq!(s.wall_ledger.len(), 5);
        assert_relative_eq!(p.tip_position(&net).x, 0.05, epsilon = 1e-15);

        let mut full = pressurised(60.0);
        full.max_length = 0.0;
        let (s, _, out) = growth_step(&full, &path, &net, &BendCommand::STRAIGHT, 0.1, &params);
        assert_eq!(out.advanced, 0.0);
        assert_eq!(s.status, Status::Blocked);
        assert_eq!(out.blocked, Some(BlockReason::MaxLength));
    }

    #[test]
    fn ledger_samples_lie_on_centerline() {
        let net = tee();
        let params = GrowthParams::default();
        let steer = BendCommand::from_degrees(45.0, 90.0);
        let mut state = pressurised(60.0);
        let mut path = RobotPath::start(&net);
        for _ in 0..150 {
            let (s, p, _) = growth_step(&state, &path, &net, &steer, 0.01, &params);
            state = s;
            path = p;
        }
        assert_relative_eq!(state.everted_length, 1.5, epsilon = 1e-9);
        for e in &state.wall_ledger {
            let on_line = if e.material <= 1.0 {
                (e.position - Vector3::new(e.material, 0.0, 0.0)).norm()
            } else {
                (e.position - Vector3::new(1.0, e.material - 1.0, 0.0)).norm()
            };
            assert!(on_line < 1e-9, "{e:?}");
        }
    }

    #[test]
    fn retract_identity_and_inverse() {
        let net = straight();
        let params = GrowthParams::default();
        let start = RobotPath::start(&net);
        let initial = pressurised(60.0);
        let (p, s) = retract(&start, &initial, &net, 0.0).unwrap();
        assert_eq!((p, s), (start.clone(), initial.clone()));

        let (mut state, mut path) = (initial.clone(), start.clone());
        for _ in 0..200 {
            let (s, p, _) = growth_step(&state, &path, &net, &BendCommand::STRAIGHT, 0.01, &params);
            state = s;
            path = p;
        }
        assert_relative_eq!(state.everted_length, 2.0, epsilon = 1e-9);
        let (p, s) = retract(&path, &state, &net, state.everted_length).unwrap();
        assert_eq!(p, start);
        assert!(s.wall_ledger.is_empty());
        assert_eq!(s.everted_length, 0.0);

        assert!(retract(&path, &state, &net, state.everted_length + 0.1).is_err());
    }

    #[test]
    fn retract_through_junction_drops_branch() {
        let net = tee();
        let steer = BendCommand::from_degrees(45.0, 90.0);
        let a = advance_along_network(&RobotPath::start(&net), &net, 1.4, &steer, 0.26).unwrap();
        let branch = net.segment_by_id("b90").unwrap();
        assert!(a.path.contains_segment(branch));
        let state = EversionState {
            everted_length: 1.4,
            ..EversionState::new(5.0)
        };
        let (p, s) = retract(&a.path, &state, &net, 0.6).unwrap();
        assert!(!p.contains_segment(branch));
        assert_relative_eq!(p.offset, 0.8, epsilon = 1e-12);
        assert_relative_eq!(p.length(&net), s.everted_length, epsilon = 1e-12);
        assert_eq!(s.status, Status::Retracting);

        // stopping exactly at the junction also drops the branch
        let (p, _) = retract(&a.path, &state, &net, 0.4).unwrap();
        assert!(!p.contains_segment(branch));
        assert_relative_eq!(p.offset, 1.0, epsilon = 1e-12);
    }
}
