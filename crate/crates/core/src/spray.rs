//! Geometric spray model and grid coverage bookkeeping.
//!
//! A spray is a cone from the tip along its heading. A target cell counts
//! as hit when its centre lies inside the cone, within range, on the front
//! face of the target plane. Paint, foam and water only differ in labels.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::TipPose;
use crate::network::WallPlane;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    Water,
    AerosolPaint,
    Foam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpraySpec {
    #[serde(default = "default_half_angle")]
    pub cone_half_angle_deg: f64,
    /// m.
    #[serde(default = "default_range")]
    pub range: f64,
    #[serde(default = "default_flow")]
    pub flow: Flow,
}

fn default_half_angle() -> f64 {
    10.0
}
fn default_range() -> f64 {
    0.6
}
fn default_flow() -> Flow {
    Flow::AerosolPaint
}

impl Default for SpraySpec {
    fn default() -> Self {
        SpraySpec {
            cone_half_angle_deg: default_half_angle(),
            range: default_range(),
            flow: default_flow(),
        }
    }
}

impl SpraySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cone_half_angle_deg > 0.0 && self.cone_half_angle_deg < 90.0) {
            return Err(Error::input("cone half angle must lie in (0, 90) degrees"));
        }
        if !(self.range > 0.0) {
            return Err(Error::input("spray range must be positive"));
        }
        Ok(())
    }
}

/// Rectangular grid of target cells on a plane, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGrid {
    pub id: String,
    pub rows: usize,
    pub cols: usize,
    pub cell_width: f64,
    pub cell_height: f64,
    pub center: Vector3<f64>,
    /// Unit axis along increasing column.
    pub right: Vector3<f64>,
    /// Unit axis towards row 0.
    pub up: Vector3<f64>,
    /// Unit normal of the sprayable face, pointing towards the sprayer.
    pub normal: Vector3<f64>,
    hits: Vec<bool>,
}

impl TargetGrid {
    pub fn new(
        id: &str,
        rows: usize,
        cols: usize,
        cell_width: f64,
        cell_height: f64,
        plane: &WallPlane,
        center: Vector3<f64>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::input(format!("grid `{id}` has no cells")));
        }
        if !(cell_width > 0.0 && cell_height > 0.0) {
            return Err(Error::input(format!(
                "grid `{id}`: cell size must be positive"
            )));
        }
        Ok(TargetGrid {
            id: id.to_string(),
            rows,
            cols,
            cell_width,
            cell_height,
            center,
            right: plane.right,
            up: plane.up,
            normal: plane.inward,
            hits: vec![false; rows * cols],
        })
    }

    /// Grid covering a whole wall.
    pub fn covering(id: &str, plane: &WallPlane, rows: usize, cols: usize) -> Result<Self> {
        Self::new(
            id,
            rows,
            cols,
            plane.width / cols as f64,
            plane.height / rows as f64,
            plane,
            plane.center,
        )
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vector3<f64> {
        let dx = (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.cell_width;
        let dy = ((self.rows as f64 - 1.0) / 2.0 - row as f64) * self.cell_height;
        self.center + self.right * dx + self.up * dy
    }

    pub fn cell_centers(&self) -> impl Iterator<Item = Vector3<f64>> + '_ {
        (0..self.len()).map(|i| {
            let (r, c) = self.row_col(i);
            self.cell_center(r, c)
        })
    }

    pub fn is_hit(&self, index: usize) -> bool {
        self.hits[index]
    }

    pub fn hit_flags(&self) -> &[bool] {
        &self.hits
    }

    pub fn hit_count(&self) -> usize {
        self.hits.iter().filter(|&&h| h).count()
    }

    pub fn hit_fraction(&self) -> f64 {
        self.hit_count() as f64 / self.len() as f64
    }

    /// Sets the given cells; returns those that were newly hit. Flags are
    /// never cleared within a run.
    pub fn mark(&mut self, cells: &BTreeSet<usize>) -> Vec<usize> {
        let mut fresh = Vec::new();
        for &i in cells {
            if !self.hits[i] {
                self.hits[i] = true;
                fresh.push(i);
            }
        }
        fresh
    }

    /// Where the ray from `pose` along its heading meets the grid face,
    /// as (row, col), if it lands on a cell.
    pub fn aimed_cell(&self, pose: &TipPose) -> Option<(usize, usize)> {
        let denom = pose.heading.dot(&self.normal);
        if denom >= 0.0 {
            return None;
        }
        let t = (self.center - pose.position).dot(&self.normal) / denom;
        if t <= 0.0 {
            return None;
        }
        let p = pose.position + pose.heading * t - self.center;
        let u = p.dot(&self.right) / self.cell_width + self.cols as f64 / 2.0;
        let v = self.rows as f64 / 2.0 - p.dot(&self.up) / self.cell_height;
        if u < 0.0 || v < 0.0 || u >= self.cols as f64 || v >= self.rows as f64 {
            return None;
        }
        Some((v as usize, u as usize))
    }
}

/// Cells whose centres fall inside the spray cone.
pub fn spray_hits(tip: &TipPose, spec: &SpraySpec, grid: &TargetGrid) -> BTreeSet<usize> {
    let cos_half = spec.cone_half_angle_deg.to_radians().cos();
    let heading = tip.heading.normalize();
    let range_sq = spec.range * spec.range;
    grid.cell_centers()
        .enumerate()
        .filter(|(_, center)| {
            let d = center - tip.position;
            let dist_sq = d.norm_squared();
            if dist_sq == 0.0 || dist_sq > range_sq {
                return false;
            }
            // the ray must meet the sprayable face from the front
            if d.dot(&grid.normal) >= 0.0 {
                return false;
            }
            let along = d.dot(&heading);
            along > 0.0 && along * along >= cos_half * cos_half * dist_sq
        })
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub count: usize,
    /// Percent of cells, rounded to one decimal.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub total_cells: usize,
    pub tests: Vec<CoverageRow>,
    pub average_count: f64,
    /// Mean of the rounded per-test percentages.
    pub average_percent: f64,
}

pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

pub fn coverage_stats(counts: &[usize], total_cells: usize) -> Result<CoverageReport> {
    if total_cells == 0 {
        return Err(Error::input("grid has no cells"));
    }
    if counts.is_empty() {
        return Err(Error::input("no tests to summarise"));
    }
    if let Some(bad) = counts.iter().find(|&&c| c > total_cells) {
        return Err(Error::input(format!(
            "sprayed count {bad} exceeds the {total_cells} cells"
        )));
    }
    let tests: Vec<CoverageRow> = counts
        .iter()
        .map(|&count| CoverageRow {
            count,
            percent: round1(100.0 * count as f64 / total_cells as f64),
        })
        .collect();
    let n = tests.len() as f64;
    Ok(CoverageReport {
        total_cells,
        average_count: counts.iter().sum::<usize>() as f64 / n,
        average_percent: tests.iter().map(|t| t.percent).sum::<f64>() / n,
        tests,
    })
}

fn trim_percent(p: f64) -> String {
    if p.fract() == 0.0 {
        format!("{p:.0}")
    } else {
        format!("{p:.1}")
    }
}

impl CoverageReport {
    /// Plain-text table: test number, squares sprayed, percent sprayed.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>17} {:>27}\n",
            "Test number", "Number of squares", "Percentage of grid sprayed"
        ));
        for (i, row) in self.tests.iter().enumerate() {
            out.push_str(&format!(
                "{:<12} {:>17} {:>27}\n",
                i + 1,
                row.count,
                trim_percent(row.percent)
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>17.1} {:>27.2}\n",
            "Average", self.average_count, self.average_percent
        ));
        out
    }
}

/// Tip-camera view of a grid: one string per row, `#` for sprayed cells,
/// `.` for clean ones; the aimed cell shows as `@` (sprayed) or `+`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PovView {
    pub grid: String,
    pub rows: Vec<String>,
    pub aim: Option<(usize, usize)>,
}

pub fn pov_view(tip: &TipPose, grid: &TargetGrid) -> PovView {
    let aim = grid.aimed_cell(tip);
    let rows = (0..grid.rows)
        .map(|r| {
            (0..grid.cols)
                .map(|c| {
                    let hit = grid.is_hit(grid.index(r, c));
                    match (aim == Some((r, c)), hit) {
                        (true, true) => '@',
                        (true, false) => '+',
                        (false, true) => '#',
                        (false, false) => '.',
                    }
                })
                .collect()
        })
        .collect();
    PovView {
        grid: grid.id.clone(),
        rows,
        aim,
    }
}
