//! Spring, torque and servo sizing arithmetic for the tendon-pulled tip.
//!
//! Everything here is a pure function of its inputs. Values are SI
//! (metres, newtons, N·m) except the servo catalog, which keeps the
//! datasheet units: degrees of rotation and kg·cm of stall torque.
//! No rounding is applied.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard gravity used to convert kg·cm datasheet torques.
pub const GRAVITY: f64 = 9.81;

/// Helical compression spring built from round wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringSpec {
    /// Young's modulus, Pa.
    pub young_modulus: f64,
    pub poisson_ratio: f64,
    /// Wire diameter, m.
    pub wire_diameter: f64,
    /// Outer coil diameter, m.
    pub outer_diameter: f64,
    pub active_coils: u32,
    /// Free length, m.
    pub free_length: f64,
}

impl SpringSpec {
    /// 304 stainless spring used between the tip discs: 20 mm long,
    /// 6 mm outer diameter, six active coils, 0.5 mm wire.
    pub fn stainless_304() -> Self {
        SpringSpec {
            young_modulus: 190e9,
            poisson_ratio: 0.27,
            wire_diameter: 0.5e-3,
            outer_diameter: 6e-3,
            active_coils: 6,
            free_length: 20e-3,
        }
    }

    /// Mean coil diameter (outer minus one wire diameter).
    pub fn mean_diameter(&self) -> f64 {
        self.outer_diameter - self.wire_diameter
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.young_modulus > 0.0) {
            return Err(Error::domain("young_modulus must be positive"));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::domain("poisson_ratio must lie in [0, 0.5)"));
        }
        for (name, v) in [
            ("wire_diameter", self.wire_diameter),
            ("outer_diameter", self.outer_diameter),
            ("free_length", self.free_length),
        ] {
            if !(v > 0.0) {
                return Err(Error::domain(format!("{name} must be positive")));
            }
        }
        if self.active_coils < 1 {
            return Err(Error::domain("active_coils must be at least 1"));
        }
        if self.wire_diameter >= self.outer_diameter {
            return Err(Error::domain("wire_diameter must be below outer_diameter"));
        }
        Ok(())
    }
}

/// Supply rail the servo is driven from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Supply {
    #[serde(rename = "4.8V")]
    V4_8,
    #[serde(rename = "6V")]
    V6,
}

impl std::str::FromStr for Supply {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "4.8V" | "4.8" | "4V8" => Ok(Supply::V4_8),
            "6V" | "6" | "6.0" | "6.0V" => Ok(Supply::V6),
            other => Err(Error::input(format!("unknown supply voltage `{other}`"))),
        }
    }
}

/// One row of a servo datasheet comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoSpec {
    pub name: String,
    /// Operating angle, degrees.
    pub operating_angle: f64,
    /// Stall torque at 4.8 V, kg·cm.
    pub torque_4v8: f64,
    /// Stall torque at 6 V, kg·cm.
    pub torque_6v: f64,
}

impl ServoSpec {
    pub fn new(name: &str, operating_angle: f64, torque_4v8: f64, torque_6v: f64) -> Self {
        ServoSpec {
            name: name.to_string(),
            operating_angle,
            torque_4v8,
            torque_6v,
        }
    }

    pub fn torque_at(&self, supply: Supply) -> f64 {
        match supply {
            Supply::V4_8 => self.torque_4v8,
            Supply::V6 => self.torque_6v,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.operating_angle > 0.0 && self.operating_angle <= 360.0) {
            return Err(Error::domain(format!(
                "{}: operating_angle must lie in (0, 360]",
                self.name
            )));
        }
        if !(self.torque_4v8 >= 0.0 && self.torque_6v >= 0.0) {
            return Err(Error::domain(format!(
                "{}: torques must be non-negative",
                self.name
            )));
        }
        Ok(())
    }
}

/// The five micro servos compared for the tip actuators.
pub fn reference_catalog() -> Vec<ServoSpec> {
    vec![
        ServoSpec::new("SG90", 180.0, 1.2, 1.6),
        ServoSpec::new("MG90s", 180.0, 1.8, 2.2),
        ServoSpec::new("DMS-MG90-A", 270.0, 1.3, 1.5),
        ServoSpec::new("DS-S006L", 300.0, 1.0, 1.2),
        ServoSpec::new("DM-S0090MD", 270.0, 1.8, 2.0),
    ]
}

/// Reads a servo catalog in CSV form with the header
/// `name,operating_angle,torque_4v8,torque_6v`.
pub fn read_catalog<R: Read>(reader: R) -> Result<Vec<ServoSpec>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ServoSpec>().enumerate() {
        // header occupies line 1
        let servo = row.map_err(|e| Error::input(format!("catalog row {}: {e}", i + 2)))?;
        servo.validate()?;
        out.push(servo);
    }
    Ok(out)
}

pub fn load_catalog(path: &Path) -> Result<Vec<ServoSpec>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_catalog(file).map_err(|e| Error::load(path, e.to_string()))
}

pub fn write_catalog<W: std::io::Write>(writer: W, catalog: &[ServoSpec]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for servo in catalog {
        wtr.serialize(servo)
            .map_err(|e| Error::input(format!("catalog write: {e}")))?;
    }
    wtr.flush()
        .map_err(|e| Error::input(format!("catalog write: {e}")))?;
    Ok(())
}

/// Servo horn spool the tendon winds onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpoolSpec {
    /// Radius, m.
    pub radius: f64,
}

impl SpoolSpec {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0) {
            return Err(Error::domain("spool radius must be positive"));
        }
        Ok(SpoolSpec { radius })
    }
}

impl Default for SpoolSpec {
    fn default() -> Self {
        SpoolSpec { radius: 12.5e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationRequirement {
    /// Axial force the tendon must hold, N.
    pub total_force: f64,
    /// Tendon travel needed for full deflection, m.
    pub required_displacement: f64,
}

impl ActuationRequirement {
    pub fn new(total_force: f64, required_displacement: f64) -> Result<Self> {
        if !(total_force >= 0.0 && required_displacement >= 0.0) {
            return Err(Error::input("actuation requirement must be non-negative"));
        }
        Ok(ActuationRequirement {
            total_force,
            required_displacement,
        })
    }

    /// Per-spring force multiplied by the number of spring stages in the
    /// tendon's path.
    pub fn from_springs(
        per_spring_force: f64,
        spring_stages: u32,
        required_displacement: f64,
    ) -> Result<Self> {
        Self::new(
            per_spring_force * spring_stages as f64,
            required_displacement,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServoAssessment {
    pub name: String,
    pub operating_angle: f64,
    /// Stall torque at the chosen supply, kg·cm.
    pub torque_kg_cm: f64,
    /// Stall torque at the chosen supply, N·m.
    pub stall_torque_si: f64,
    /// Tendon travel at full rotation, m.
    pub spool_travel: f64,
    pub torque_ok: bool,
    pub travel_ok: bool,
}

impl ServoAssessment {
    pub fn feasible(&self) -> bool {
        self.torque_ok && self.travel_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub supply: Supply,
    /// N·m.
    pub required_torque: f64,
    pub requirement: ActuationRequirement,
    pub spool: SpoolSpec,
    pub servos: Vec<ServoAssessment>,
    pub selected: Option<String>,
}

impl FeasibilityReport {
    pub fn entry(&self, name: &str) -> Option<&ServoAssessment> {
        self.servos.iter().find(|s| s.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// G = E / (2(1 + v)).
pub fn shear_modulus(young_modulus: f64, poisson_ratio: f64) -> Result<f64> {
    if !(young_modulus > 0.0) {
        return Err(Error::domain("Young's modulus must be positive"));
    }
    if !(0.0..0.5).contains(&poisson_ratio) {
        return Err(Error::domain("Poisson's ratio must lie in [0, 0.5)"));
    }
    Ok(young_modulus / (2.0 * (1.0 + poisson_ratio)))
}

/// Helical spring rate k = G·d⁴ / (8·N·D³), N/m.
pub fn spring_constant(spec: &SpringSpec) -> Result<f64> {
    spec.validate()?;
    let g = shear_modulus(spec.young_modulus, spec.poisson_ratio)?;
    Ok(spring_constant_with_modulus(
        g,
        spec.wire_diameter,
        spec.mean_diameter(),
        spec.active_coils,
    ))
}

/// Spring rate from an explicit shear modulus and mean coil diameter.
pub fn spring_constant_with_modulus(
    shear_modulus: f64,
    wire_diameter: f64,
    mean_diameter: f64,
    active_coils: u32,
) -> f64 {
    shear_modulus * wire_diameter.powi(4) / (8.0 * active_coils as f64 * mean_diameter.powi(3))
}

/// Hooke's law force magnitude, N.
pub fn spring_force(stiffness: f64, compression: f64) -> f64 {
    (stiffness * compression).abs()
}

/// Torque the servo must hold to keep the tendon loaded, N·m.
pub fn required_torque(req: &ActuationRequirement, spool: &SpoolSpec) -> f64 {
    req.total_force * spool.radius
}

/// Datasheet kg·cm to N·m.
pub fn stall_torque_si(torque_kg_cm: f64) -> f64 {
    torque_kg_cm * 0.01 * GRAVITY
}

/// Tendon wound onto the spool over `operating_angle` degrees, m.
pub fn spool_travel(spool: &SpoolSpec, operating_angle: f64) -> f64 {
    operating_angle / 360.0 * 2.0 * std::f64::consts::PI * spool.radius
}

/// Checks every catalog servo against the requirement and picks the
/// feasible one with the widest operating angle (ties: more torque).
pub fn servo_feasibility(
    catalog: &[ServoSpec],
    req: &ActuationRequirement,
    spool: &SpoolSpec,
    supply: Supply,
) -> Result<FeasibilityReport> {
    if catalog.is_empty() {
        return Err(Error::input("servo catalog is empty"));
    }
    let needed = required_torque(req, spool);
    let servos: Vec<ServoAssessment> = catalog
        .iter()
        .map(|servo| {
            let torque_kg_cm = servo.torque_at(supply);
            let stall = stall_torque_si(torque_kg_cm);
            let travel = spool_travel(spool, servo.operating_angle);
            ServoAssessment {
                name: servo.name.clone(),
                operating_angle: servo.operating_angle,
                torque_kg_cm,
                stall_torque_si: stall,
                spool_travel: travel,
                torque_ok: stall >= needed,
                travel_ok: travel >= req.required_displacement,
            }
        })
        .collect();

    // first maximum wins, so equal rows keep catalog order
    let selected = servos
        .iter()
        .filter(|s| s.feasible())
        .fold(None::<&ServoAssessment>, |best, s| match best {
            Some(b)
                if (b.operating_angle, b.torque_kg_cm) >= (s.operating_angle, s.torque_kg_cm) =>
            {
                Some(b)
            }
            _ => Some(s),
        })
        .map(|s| s.name.clone());

    Ok(FeasibilityReport {
        supply,
        required_torque: needed,
        requirement: *req,
        spool: *spool,
        servos,
        selected,
    })
}

/// Spring-side design inputs bundled for a full sizing pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignInputs {
    pub spring: SpringSpec,
    /// Design compression per spring, m.
    #[serde(default = "default_design_compression")]
    pub design_compression: f64,
    /// Spring stages a tendon passes through.
    #[serde(default = "default_spring_stages")]
    pub spring_stages: u32,
    /// Tendon travel needed for a full bend, m.
    #[serde(default = "default_required_displacement")]
    pub required_displacement: f64,
    #[serde(default)]
    pub spool: SpoolSpec,
    #[serde(default = "default_supply")]
    pub supply: Supply,
}

fn default_design_compression() -> f64 {
    5e-3
}
fn default_spring_stages() -> u32 {
    5
}
fn default_required_displacement() -> f64 {
    14.5e-3
}
fn default_supply() -> Supply {
    Supply::V6
}

impl Default for DesignInputs {
    fn default() -> Self {
        DesignInputs {
            spring: SpringSpec::stainless_304(),
            design_compression: default_design_compression(),
            spring_stages: default_spring_stages(),
            required_displacement: default_required_displacement(),
            spool: SpoolSpec::default(),
            supply: default_supply(),
        }
    }
}

impl DesignInputs {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::input(crate::error::describe_toml_error(text, &e)))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| Error::load(path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub shear_modulus: f64,
    pub spring_constant: f64,
    pub per_spring_force: f64,
    pub feasibility: FeasibilityReport,
}

/// Runs the whole chain: spring rate, per-spring force, total force,
/// torque and servo selection.
pub fn design_check(inputs: &DesignInputs, catalog: &[ServoSpec]) -> Result<DesignReport> {
    let g = shear_modulus(inputs.spring.young_modulus, inputs.spring.poisson_ratio)?;
    let k = spring_constant(&inputs.spring)?;
    let force = spring_force(k, inputs.design_compression);
    let req = ActuationRequirement::from_springs(
        force,
        inputs.spring_stages,
        inputs.required_displacement,
    )?;
    let feasibility = servo_feasibility(catalog, &req, &inputs.spool, inputs.supply)?;
    Ok(DesignReport {
        shear_modulus: g,
        spring_constant: k,
        per_spring_force: force,
        feasibility,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MM: f64 = 1e-3;

    #[test]
    fn shear_modulus_of_304_stainless() {
        let g = shear_modulus(190e9, 0.27).unwrap();
        assert!((g - 74.80e9).abs() <= 0.01e9, "{g}");
        assert_eq!(shear_modulus(8.0, 0.0).unwrap(), 4.0);
        assert_relative_eq!(shear_modulus(2.6, 0.3).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn shear_modulus_domain() {
        assert!(matches!(shear_modulus(190e9, 0.5), Err(Error::Domain(_))));
        assert!(matches!(shear_modulus(0.0, 0.2), Err(Error::Domain(_))));
        assert!(matches!(shear_modulus(-1.0, 0.2), Err(Error::Domain(_))));
        assert!(shear_modulus(1.0, -0.1).is_err());
    }

    #[test]
    fn spring_constant_reference_spring() {
        let k = spring_constant(&SpringSpec::stainless_304()).unwrap();
        assert!((k - 586.0).abs() <= 3.0, "{k}");
    }

    #[test]
    fn spring_constant_with_rounded_modulus() {
        // 4.6875e-3 / 7.986e-6 = 586.965
        let k = spring_constant_with_modulus(75e9, 0.5 * MM, 5.5 * MM, 6);
        assert!((k - 586.965).abs() < 1e-3, "{k}");
    }

    #[test]
    fn thin_wire_reading_is_far_softer() {
        let mut spec = SpringSpec::stainless_304();
        spec.wire_diameter = 0.05 * MM;
        let k = spring_constant(&spec).unwrap();
        assert!(k < 0.1, "{k}");
    }

    #[test]
    fn doubling_coils_halves_rate() {
        let spec = SpringSpec::stainless_304();
        let doubled = SpringSpec {
            active_coils: spec.active_coils * 2,
            ..spec
        };
        assert_relative_eq!(
            spring_constant(&doubled).unwrap() * 2.0,
            spring_constant(&spec).unwrap(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn spring_constant_rejects_bad_geometry() {
        let base = SpringSpec::stainless_304();
        let cases = [
            SpringSpec {
                wire_diameter: 0.0,
                ..base
            },
            SpringSpec {
                outer_diameter: -1.0,
                ..base
            },
            SpringSpec {
                active_coils: 0,
                ..base
            },
            SpringSpec {
                wire_diameter: 7.0 * MM,
                ..base
            },
            SpringSpec {
                poisson_ratio: 0.6,
                ..base
            },
            SpringSpec {
                free_length: 0.0,
                ..base
            },
        ];
        for spec in cases {
            assert!(
                matches!(spring_constant(&spec), Err(Error::Domain(_))),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn hooke_force() {
        assert!((spring_force(587.0, 5.0 * MM) - 2.935).abs() < 1e-3);
        assert_eq!(spring_force(587.0, 0.0), 0.0);
        assert!((spring_force(586.0, 2.9 * MM) - 1.699).abs() < 1e-3);
        // sign convention collapses to magnitude
        assert_eq!(
            spring_force(587.0, -5.0 * MM),
            spring_force(587.0, 5.0 * MM)
        );
    }

    #[test]
    fn torque_and_travel() {
        let spool = SpoolSpec::default();
        let req = ActuationRequirement::new(14.75, 14.5 * MM).unwrap();
        assert!((required_torque(&req, &spool) - 0.184).abs() < 1e-3);
        let zero = ActuationRequirement::new(0.0, 0.0).unwrap();
        assert_eq!(required_torque(&zero, &spool), 0.0);
        let unrounded = ActuationRequirement::new(2.935 * 5.0, 0.0).unwrap();
        assert!((required_torque(&unrounded, &spool) - 0.1834).abs() < 1e-4);

        assert!((stall_torque_si(1.2) - 0.1177).abs() < 1e-4);
        assert!((stall_torque_si(2.0) - 0.1962).abs() < 1e-4);
        assert_eq!(stall_torque_si(0.0), 0.0);

        assert!((spool_travel(&spool, 270.0) - 58.9 * MM).abs() < 0.1 * MM);
        assert_relative_eq!(
            spool_travel(&spool, 360.0),
            2.0 * std::f64::consts::PI * spool.radius
        );
        assert!((spool_travel(&spool, 180.0) - 39.27 * MM).abs() < 0.01 * MM);
    }

    #[test]
    fn requirement_rejects_negative() {
        assert!(ActuationRequirement::new(-1.0, 0.0).is_err());
        assert!(ActuationRequirement::new(1.0, -0.1).is_err());
        assert!(SpoolSpec::new(0.0).is_err());
    }

    #[test]
    fn reference_selection_at_6v() {
        let req = ActuationRequirement::new(14.75, 14.5 * MM).unwrap();
        let report = servo_feasibility(
            &reference_catalog(),
            &req,
            &SpoolSpec::default(),
            Supply::V6,
        )
        .unwrap();
        assert!(!report.entry("DS-S006L").unwrap().torque_ok);
        assert!(report.entry("DM-S0090MD").unwrap().torque_ok);
        assert_eq!(report.selected.as_deref(), Some("DM-S0090MD"));

        let mg90s = report.entry("MG90s").unwrap();
        assert!(mg90s.torque_ok && mg90s.travel_ok);
        assert!((mg90s.spool_travel - 39.27 * MM).abs() < 0.01 * MM);
    }

    #[test]
    fn selection_absent_without_feasible_servo() {
        let req = ActuationRequirement::new(14.75, 14.5 * MM).unwrap();
        let catalog = [ServoSpec::new("dead", 270.0, 0.0, 0.0)];
        let report = servo_feasibility(&catalog, &req, &SpoolSpec::default(), Supply::V6).unwrap();
        assert_eq!(report.selected, None);
    }

    #[test]
    fn empty_catalog_is_an_input_error() {
        let req = ActuationRequirement::new(1.0, 0.0).unwrap();
        assert!(matches!(
            servo_feasibility(&[], &req, &SpoolSpec::default(), Supply::V6),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn ties_on_angle_break_by_torque() {
        let req = ActuationRequirement::new(1.0, 0.0).unwrap();
        let catalog = [
            ServoSpec::new("a", 270.0, 3.0, 3.0),
            ServoSpec::new("b", 270.0, 3.0, 4.0),
            ServoSpec::new("c", 180.0, 9.0, 9.0),
        ];
        let report = servo_feasibility(&catalog, &req, &SpoolSpec::default(), Supply::V6).unwrap();
        assert_eq!(report.selected.as_deref(), Some("b"));
        let report =
            servo_feasibility(&catalog, &req, &SpoolSpec::default(), Supply::V4_8).unwrap();
        assert_eq!(report.selected.as_deref(), Some("a"));
    }

    #[test]
    fn catalog_csv_round_trip() {
        let mut buf = Vec::new();
        write_catalog(&mut buf, &reference_catalog()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("name,operating_angle,torque_4v8,torque_6v"));
        assert_eq!(read_catalog(text.as_bytes()).unwrap(), reference_catalog());
    }

    #[test]
    fn catalog_reports_bad_row() {
        let text = "name,operating_angle,torque_4v8,torque_6v\nSG90,180,1.2,1.6\nbad,abc,1,1\n";
        let err = read_catalog(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        let text = "name,operating_angle,torque_4v8,torque_6v\nwide,400,1,1\n";
        assert!(read_catalog(text.as_bytes()).is_err());
    }

    #[test]
    fn design_chain_with_defaults() {
        let report = design_check(&DesignInputs::default(), &reference_catalog()).unwrap();
        assert!((report.per_spring_force - 2.93).abs() < 0.02);
        assert_eq!(report.feasibility.selected.as_deref(), Some("DM-S0090MD"));
    }

    #[test]
    fn design_inputs_from_toml() {
        let text = r#"
design_compression = 0.005
spring_stages = 5
supply = "6V"

[spring]
young_modulus = 190e9
poisson_ratio = 0.27
wire_diameter = 0.0005
outer_diameter = 0.006
active_coils = 6
free_length = 0.02

[spool]
radius = 0.0125
"#;
        let inputs = DesignInputs::from_toml(text).unwrap();
        assert_eq!(inputs, DesignInputs::default());
        let err = DesignInputs::from_toml("[spring]\nyoung_modulus = 1").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
    }
}
