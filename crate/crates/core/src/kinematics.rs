//! Four-tendon disc chain at the robot tip.
//!
//! The tip is a stack of discs joined by a central universal joint. A bend
//! is a single plane rotation: magnitude θ shared equally by every joint,
//! direction φ measured from tendon 0 around the backbone axis. In the base
//! frame the backbone runs along +z and tendon `i` sits at azimuth `i·90°`.
//!
//! Angles are radians inside this module; the serialized forms of
//! [`TipGeometry`] and [`BendCommand`] use degrees.

use nalgebra::{Isometry3, Rotation3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::mech::{ServoSpec, SpoolSpec};

pub const TENDON_COUNT: usize = 4;

/// Tendon azimuths around the backbone.
pub const TENDON_AZIMUTHS: [f64; TENDON_COUNT] = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];

mod degrees {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(rad: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(rad.to_degrees())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(f64::deserialize(d)?.to_radians())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TipGeometry {
    pub disc_count: usize,
    /// Backbone distance between consecutive discs, m.
    pub disc_spacing: f64,
    pub disc_diameter: f64,
    /// Radial offset of the tendon guide holes from the backbone, m.
    pub tendon_pitch_radius: f64,
    #[serde(with = "degrees", rename = "max_bend_deg")]
    pub max_bend: f64,
}

impl Default for TipGeometry {
    /// Six 45 mm discs on 20 mm spacing. The 9.23 mm tendon radius makes a
    /// quarter-turn bend pull 14.5 mm of tendon.
    fn default() -> Self {
        TipGeometry {
            disc_count: 6,
            disc_spacing: 20e-3,
            disc_diameter: 45e-3,
            tendon_pitch_radius: 9.23e-3,
            max_bend: FRAC_PI_2,
        }
    }
}

impl TipGeometry {
    pub fn joint_count(&self) -> usize {
        self.disc_count - 1
    }

    pub fn backbone_length(&self) -> f64 {
        self.joint_count() as f64 * self.disc_spacing
    }

    /// Same backbone length split into `joints` equal segments.
    pub fn subdivided(&self, joints: usize) -> Self {
        TipGeometry {
            disc_count: joints + 1,
            disc_spacing: self.backbone_length() / joints as f64,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.disc_count < 2 {
            return Err(Error::input("tip needs at least two discs"));
        }
        if !(self.disc_spacing > 0.0 && self.disc_diameter > 0.0) {
            return Err(Error::input("disc spacing and diameter must be positive"));
        }
        if !(self.tendon_pitch_radius > 0.0 && self.tendon_pitch_radius < self.disc_diameter / 2.0)
        {
            return Err(Error::input("tendon pitch radius must lie inside the disc"));
        }
        if !(self.max_bend > 0.0 && self.max_bend <= PI) {
            return Err(Error::input("max bend must lie in (0, 180] degrees"));
        }
        Ok(())
    }
}

/// Wraps an angle into [0, 2π).
pub fn wrap_tau(angle: f64) -> f64 {
    let a = angle.rem_euclid(TAU);
    // rem_euclid can round up to TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BendCommand {
    #[serde(with = "degrees", rename = "magnitude_deg")]
    pub magnitude: f64,
    #[serde(with = "degrees", rename = "direction_deg")]
    pub direction: f64,
}

impl BendCommand {
    pub const STRAIGHT: BendCommand = BendCommand {
        magnitude: 0.0,
        direction: 0.0,
    };

    pub fn new(magnitude: f64, direction: f64) -> Self {
        BendCommand {
            magnitude,
            direction: wrap_tau(direction),
        }
    }

    pub fn from_degrees(magnitude: f64, direction: f64) -> Self {
        Self::new(magnitude.to_radians(), direction.to_radians())
    }

    pub fn validate(&self, geometry: &TipGeometry) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude <= geometry.max_bend + 1e-12) {
            return Err(Error::input(format!(
                "bend magnitude {:.3} deg outside [0, {:.3}]",
                self.magnitude.to_degrees(),
                geometry.max_bend.to_degrees()
            )));
        }
        if !(0.0..TAU).contains(&self.direction) {
            return Err(Error::input("bend direction outside [0, 360) deg"));
        }
        Ok(())
    }

    /// Bending axis in the base frame: orthogonal to both the backbone and
    /// the bend direction.
    pub fn axis(&self) -> Unit<Vector3<f64>> {
        Unit::new_unchecked(Vector3::new(
            -self.direction.sin(),
            self.direction.cos(),
            0.0,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointAngle {
    pub angle: f64,
    pub clamped: bool,
}

/// Equal share of the total bend per joint. Out-of-range totals are clamped
/// to `[0, max_bend]` and flagged.
pub fn per_joint_angle(total: f64, geometry: &TipGeometry) -> JointAngle {
    let bounded = total.clamp(0.0, geometry.max_bend);
    JointAngle {
        angle: bounded / geometry.joint_count() as f64,
        clamped: bounded != total,
    }
}

/// Tendon pulls for a bend. Each tendon only shortens; the far side goes
/// slack rather than pushing.
pub fn tendon_displacements(cmd: &BendCommand, geometry: &TipGeometry) -> [f64; TENDON_COUNT] {
    TENDON_AZIMUTHS.map(|psi| {
        let pull = geometry.tendon_pitch_radius * cmd.magnitude * (cmd.direction - psi).cos();
        // cos of a quarter turn is ~6e-17, not zero
        if pull > 1e-12 {
            pull
        } else {
            0.0
        }
    })
}

/// Recovers the bend from tendon pulls by differencing opposite pairs.
pub fn bend_from_displacements(
    displacements: &[f64; TENDON_COUNT],
    geometry: &TipGeometry,
) -> BendCommand {
    let x = displacements[0] - displacements[2];
    let y = displacements[1] - displacements[3];
    let magnitude = x.hypot(y) / geometry.tendon_pitch_radius;
    if magnitude == 0.0 {
        return BendCommand::STRAIGHT;
    }
    BendCommand::new(magnitude, y.atan2(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoAngles {
    /// Degrees.
    pub angles: [f64; TENDON_COUNT],
    pub clamped: [bool; TENDON_COUNT],
}

impl ServoAngles {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }
}

/// Spool rotation for each tendon pull, limited to the servo's range.
pub fn servo_angles_for(
    displacements: &[f64; TENDON_COUNT],
    spool: &SpoolSpec,
    servo: &ServoSpec,
) -> ServoAngles {
    let mut angles = [0.0; TENDON_COUNT];
    let mut clamped = [false; TENDON_COUNT];
    for (i, &d) in displacements.iter().enumerate() {
        let raw = (d / spool.radius).to_degrees();
        angles[i] = raw.clamp(0.0, servo.operating_angle);
        clamped[i] = angles[i] != raw;
    }
    ServoAngles { angles, clamped }
}

/// Tendon pulls implied by servo rotations (degrees).
pub fn displacements_from_servo_angles(
    angles: &[f64; TENDON_COUNT],
    spool: &SpoolSpec,
) -> [f64; TENDON_COUNT] {
    angles.map(|deg| deg.to_radians() * spool.radius)
}

/// Immutable snapshot of the tip for one command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuumState {
    pub command: BendCommand,
    /// Per-joint angle, radians.
    pub joint_angle: f64,
    /// m.
    pub tendon_displacements: [f64; TENDON_COUNT],
    pub servo_angles: ServoAngles,
}

impl ContinuumState {
    pub fn new(
        cmd: BendCommand,
        geometry: &TipGeometry,
        spool: &SpoolSpec,
        servo: &ServoSpec,
    ) -> Self {
        let tendon_displacements = tendon_displacements(&cmd, geometry);
        ContinuumState {
            command: cmd,
            joint_angle: per_joint_angle(cmd.magnitude, geometry).angle,
            tendon_displacements,
            servo_angles: servo_angles_for(&tendon_displacements, spool, servo),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipPose {
    pub position: Vector3<f64>,
    /// Unit vector along the last disc's axis.
    pub heading: Vector3<f64>,
}

impl TipPose {
    pub fn new(position: Vector3<f64>, heading: Vector3<f64>) -> Self {
        TipPose {
            position,
            heading: heading.normalize(),
        }
    }

    pub fn transformed(&self, frame: &Isometry3<f64>) -> TipPose {
        TipPose {
            position: frame.transform_point(&self.position.into()).coords,
            heading: frame.rotation * self.heading,
        }
    }
}

/// Pose of every disc, base disc first. Each joint moves one spacing along
/// the current axis and then turns by the per-joint angle.
pub fn disc_frames(cmd: &BendCommand, geometry: &TipGeometry) -> Vec<Isometry3<f64>> {
    let joint = per_joint_angle(cmd.magnitude, geometry).angle;
    let step = Isometry3::from_parts(
        Translation3::new(0.0, 0.0, geometry.disc_spacing),
        UnitQuaternion::from_axis_angle(&cmd.axis(), joint),
    );
    let mut frames = Vec::with_capacity(geometry.disc_count);
    let mut frame = Isometry3::identity();
    frames.push(frame);
    for _ in 0..geometry.joint_count() {
        frame *= step;
        frames.push(frame);
    }
    frames
}

/// Full frame of the last disc relative to the base disc.
pub fn forward_tip_frame(cmd: &BendCommand, geometry: &TipGeometry) -> Isometry3<f64> {
    *disc_frames(cmd, geometry)
        .last()
        .expect("at least one disc")
}

pub fn forward_tip_pose(cmd: &BendCommand, geometry: &TipGeometry) -> TipPose {
    let frame = forward_tip_frame(cmd, geometry);
    TipPose {
        position: frame.translation.vector,
        heading: frame.rotation * Vector3::z(),
    }
}

/// Tendon path length through the guide holes of every disc.
pub fn tendon_polyline_length(cmd: &BendCommand, geometry: &TipGeometry, tendon: usize) -> f64 {
    let psi = TENDON_AZIMUTHS[tendon % TENDON_COUNT];
    let hole = nalgebra::Point3::new(
        geometry.tendon_pitch_radius * psi.cos(),
        geometry.tendon_pitch_radius * psi.sin(),
        0.0,
    );
    let points: Vec<_> = disc_frames(cmd, geometry)
        .iter()
        .map(|f| f.transform_point(&hole))
        .collect();
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Stick deflection to a bend. Radius saturates at 1; a centred stick
/// reports direction 0.
pub fn joystick_to_bend(x: f64, y: f64, geometry: &TipGeometry) -> BendCommand {
    if !(x.is_finite() && y.is_finite()) {
        return BendCommand::STRAIGHT;
    }
    let radius = x.hypot(y).min(1.0);
    let magnitude = geometry.max_bend * radius;
    if magnitude == 0.0 {
        return BendCommand::STRAIGHT;
    }
    BendCommand::new(magnitude, y.atan2(x))
}

/// Inverse of [`joystick_to_bend`] for an unclamped bend.
pub fn bend_to_joystick(cmd: &BendCommand, geometry: &TipGeometry) -> (f64, f64) {
    let r = (cmd.magnitude / geometry.max_bend).min(1.0);
    (r * cmd.direction.cos(), r * cmd.direction.sin())
}

/// Rotation that carries the base backbone axis onto the tip heading.
pub fn bend_rotation(cmd: &BendCommand) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&cmd.axis(), cmd.magnitude)
}

/// Bend that points the tip heading at `target` (base frame). The bend
/// plane contains the target, so only the magnitude needs solving; it is
/// found by bisection on the angle between heading and line of sight.
/// Targets needing more than `max_bend` get `max_bend`.
pub fn aim_bend(target: &Vector3<f64>, geometry: &TipGeometry) -> BendCommand {
    let radial = target.x.hypot(target.y);
    if radial < 1e-12 {
        return BendCommand::STRAIGHT;
    }
    let direction = wrap_tau(target.y.atan2(target.x));
    let miss = |magnitude: f64| {
        let pose = forward_tip_pose(&BendCommand::new(magnitude, direction), geometry);
        let in_plane = pose.position.x.hypot(pose.position.y);
        let sight = (radial - in_plane).atan2(target.z - pose.position.z);
        magnitude - sight
    };
    let (mut lo, mut hi) = (0.0, geometry.max_bend);
    if miss(hi) <= 0.0 {
        return BendCommand::new(hi, direction);
    }
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if miss(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    BendCommand::new(0.5 * (lo + hi), direction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mech::reference_catalog;
    use approx::assert_relative_eq;

    const MM: f64 = 1e-3;

    fn servo_270() -> ServoSpec {
        reference_catalog()
            .into_iter()
            .find(|s| s.name == "DM-S0090MD")
            .unwrap()
    }

    #[test]
    fn joint_angle_is_equal_share() {
        let g = TipGeometry::default();
        let j = per_joint_angle(90f64.to_radians(), &g);
        assert_relative_eq!(j.angle.to_degrees(), 18.0, epsilon = 1e-12);
        assert!(!j.clamped);
        assert_eq!(per_joint_angle(0.0, &g).angle, 0.0);
        assert_relative_eq!(
            per_joint_angle(45f64.to_radians(), &g).angle.to_degrees(),
            9.0
        );
    }

    #[test]
    fn joint_angle_clamps_out_of_range() {
        let g = TipGeometry::default();
        let j = per_joint_angle(120f64.to_radians(), &g);
        assert!(j.clamped);
        assert_relative_eq!(j.angle.to_degrees(), 18.0, epsilon = 1e-12);
        let j = per_joint_angle(-0.1, &g);
        assert!(j.clamped);
        assert_eq!(j.angle, 0.0);
    }

    #[test]
    fn quarter_bend_pulls_one_tendon() {
        let g = TipGeometry::default();
        let d = tendon_displacements(&BendCommand::from_degrees(90.0, 0.0), &g);
        assert!((d[0] - 14.5 * MM).abs() < 0.1 * MM, "{d:?}");
        assert_eq!(&d[1..], &[0.0, 0.0, 0.0]);

        let d = tendon_displacements(&BendCommand::from_degrees(0.0, 123.0), &g);
        assert_eq!(d, [0.0; 4]);

        let d = tendon_displacements(&BendCommand::from_degrees(90.0, 45.0), &g);
        assert_relative_eq!(d[0], d[1], max_relative = 1e-12);
        assert_relative_eq!(
            d[0],
            g.tendon_pitch_radius * FRAC_PI_2 * 45f64.to_radians().cos(),
            max_relative = 1e-12
        );
        assert_eq!(&d[2..], &[0.0, 0.0]);
    }

    #[test]
    fn servo_angles_from_pulls() {
        let spool = SpoolSpec::default();
        let a = servo_angles_for(&[14.5 * MM, 0.0, 0.0, 0.0], &spool, &servo_270());
        assert!((a.angles[0] - 66.46).abs() < 0.05, "{:?}", a.angles);
        assert_eq!(a.angles[1], 0.0);
        assert!(!a.any_clamped());

        let a = servo_angles_for(&[58.9 * MM, 0.0, 0.0, 0.0], &spool, &servo_270());
        assert!((a.angles[0] - 270.0).abs() < 0.05);
        let a = servo_angles_for(&[59.0 * MM, 0.0, 0.0, 0.0], &spool, &servo_270());
        assert_eq!(a.angles[0], 270.0);
        assert!(a.clamped[0]);
    }

    #[test]
    fn straight_chain_pose() {
        let g = TipGeometry::default();
        let pose = forward_tip_pose(&BendCommand::STRAIGHT, &g);
        assert_relative_eq!(pose.position, Vector3::new(0.0, 0.0, 0.1), epsilon = 1e-15);
        assert_relative_eq!(pose.heading, Vector3::z(), epsilon = 1e-15);
    }

    #[test]
    fn quarter_bend_heading_is_orthogonal() {
        let g = TipGeometry::default();
        for phi in [0.0, 30.0, 90.0, 200.0] {
            let pose = forward_tip_pose(&BendCommand::from_degrees(90.0, phi), &g);
            assert!(pose.heading.dot(&Vector3::z()).abs() < 1e-9);
            assert!((pose.heading.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tendon_lengths_match_cad() {
        let g = TipGeometry::default();
        for t in 0..4 {
            let l = tendon_polyline_length(&BendCommand::STRAIGHT, &g, t);
            assert!((l - 100.0 * MM).abs() < 1e-12);
        }
        let l = tendon_polyline_length(&BendCommand::from_degrees(90.0, 0.0), &g, 0);
        assert!((l - 85.5 * MM).abs() < 0.5 * MM, "{l}");
        // the opposite tendon lengthens
        let far = tendon_polyline_length(&BendCommand::from_degrees(90.0, 0.0), &g, 2);
        assert!(far > 100.0 * MM);
    }

    #[test]
    fn joystick_mapping() {
        let g = TipGeometry::default();
        assert_eq!(joystick_to_bend(0.0, 0.0, &g), BendCommand::STRAIGHT);
        let b = joystick_to_bend(1.0, 0.0, &g);
        assert_relative_eq!(b.magnitude, FRAC_PI_2);
        assert_eq!(b.direction, 0.0);
        let b = joystick_to_bend(0.5, 0.5, &g);
        assert_relative_eq!(b.direction.to_degrees(), 45.0, epsilon = 1e-12);
        assert_relative_eq!(b.magnitude, FRAC_PI_2 * 0.5f64.sqrt(), epsilon = 1e-12);
        let b = joystick_to_bend(0.0, -3.0, &g);
        assert_relative_eq!(b.magnitude, FRAC_PI_2);
        assert_relative_eq!(b.direction.to_degrees(), 270.0, epsilon = 1e-12);
        let b = joystick_to_bend(f64::NAN, 0.0, &g);
        assert_eq!(b, BendCommand::STRAIGHT);
    }

    #[test]
    fn geometry_validation() {
        assert!(TipGeometry::default().validate().is_ok());
        let bad = TipGeometry {
            disc_count: 1,
            ..TipGeometry::default()
        };
        assert!(bad.validate().is_err());
        let bad = TipGeometry {
            tendon_pitch_radius: 30e-3,
            ..TipGeometry::default()
        };
        assert!(bad.validate().is_err());
        assert!(BendCommand::from_degrees(95.0, 0.0)
            .validate(&TipGeometry::default())
            .is_err());
    }

    #[test]
    fn geometry_serializes_in_degrees() {
        let text = toml::to_string(&TipGeometry::default()).unwrap();
        assert!(text.contains("max_bend_deg = 90.0"), "{text}");
        let back: TipGeometry = toml::from_str(&text).unwrap();
        assert_relative_eq!(back.max_bend, FRAC_PI_2, epsilon = 1e-15);
    }

    #[test]
    fn wrap_handles_negative_zero_crossing() {
        assert_eq!(wrap_tau(-1e-20), 0.0);
        assert_relative_eq!(wrap_tau(-FRAC_PI_2), 3.0 * FRAC_PI_2);
    }

    #[test]
    fn aim_points_heading_at_target() {
        let g = TipGeometry::default();
        for target in [
            Vector3::new(0.1, 0.05, 0.3),
            Vector3::new(-0.2, 0.1, 0.25),
            Vector3::new(0.0, -0.15, 0.4),
        ] {
            let cmd = aim_bend(&target, &g);
            let pose = forward_tip_pose(&cmd, &g);
            let sight = (target - pose.position).normalize();
            assert!(sight.dot(&pose.heading) > 1.0 - 1e-12, "{target:?}");
        }
        assert_eq!(
            aim_bend(&Vector3::new(0.0, 0.0, 0.5), &g),
            BendCommand::STRAIGHT
        );
        // behind the tip: saturates
        let cmd = aim_bend(&Vector3::new(0.3, 0.0, -0.2), &g);
        assert_eq!(cmd.magnitude, g.max_bend);
    }
}
