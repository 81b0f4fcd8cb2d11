use std::collections::BTreeSet;

use evertip_core::kinematics::TipPose;
use evertip_core::scene::Scene;
use evertip_core::spray::{spray_hits, Flow, SpraySpec, TargetGrid};
use nalgebra::Vector3;
use proptest::prelude::*;

const SCENE: &str = include_str!("../../../data/scenes/glovebox.toml");

fn paper() -> TargetGrid {
    Scene::from_toml(SCENE).unwrap().grids[0].clone()
}

/// Per-cell test written from the definition: within range, reached from
/// the sprayable side and inside the cone by angle.
fn oracle(tip: &TipPose, spec: &SpraySpec, grid: &TargetGrid) -> BTreeSet<usize> {
    let half = spec.cone_half_angle_deg.to_radians();
    (0..grid.rows)
        .flat_map(|r| (0..grid.cols).map(move |c| (r, c)))
        .filter(|&(r, c)| {
            let d = grid.cell_center(r, c) - tip.position;
            let dist = d.norm();
            if dist == 0.0 || dist > spec.range || d.dot(&grid.normal) >= 0.0 {
                return false;
            }
            let cos = (d.dot(&tip.heading) / (dist * tip.heading.norm())).clamp(-1.0, 1.0);
            cos.acos() <= half
        })
        .map(|(r, c)| grid.index(r, c))
        .collect()
}

fn unit_vector() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, 0.0..std::f64::consts::TAU).prop_map(|(z, a)| {
        let s = (1.0 - z * z).sqrt();
        Vector3::new(s * a.cos(), s * a.sin(), z)
    })
}

fn pose() -> impl Strategy<Value = TipPose> {
    // anywhere in and around the box, biased towards facing the paper
    (
        0.9..1.5f64,
        -0.4..0.4f64,
        -0.1..0.5f64,
        unit_vector(),
        any::<bool>(),
    )
        .prop_map(|(x, y, z, h, toward)| {
            let heading = if toward {
                (h + Vector3::x() * 1.5).normalize()
            } else {
                h
            };
            TipPose::new(Vector3::new(x, y, z), heading)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn hits_equal_exhaustive_oracle(tip in pose(), half in 1.0..60.0f64, range in 0.05..1.0f64) {
        let spec = SpraySpec { cone_half_angle_deg: half, range, flow: Flow::Water };
        let grid = paper();
        prop_assert_eq!(spray_hits(&tip, &spec, &grid), oracle(&tip, &spec, &grid));
    }

    #[test]
    fn coverage_never_decreases(poses in prop::collection::vec(pose(), 1..30)) {
        let spec = SpraySpec::default();
        let mut grid = paper();
        let mut last = 0;
        for tip in poses {
            let hits = spray_hits(&tip, &spec, &grid);
            let fresh = grid.mark(&hits);
            prop_assert_eq!(grid.hit_count(), last + fresh.len());
            prop_assert!(hits.iter().all(|&i| grid.is_hit(i)));
            last = grid.hit_count();
        }
    }
}

#[test]
fn centred_cone_at_thirty_cm_matches_oracle() {
    // 30 mm cells, tip 0.3 m in front of a cell centre, 10° cone
    let text = SCENE.replace("cell_size = 0.042", "cell_size = 0.03");
    let grid = Scene::from_toml(&text).unwrap().grids[0].clone();
    let spec = SpraySpec::default();
    for (r, c) in [(0, 0), (2, 4), (3, 5), (5, 9)] {
        let centre = grid.cell_center(r, c);
        let tip = TipPose::new(centre + grid.normal * 0.3, -grid.normal);
        let hits = spray_hits(&tip, &spec, &grid);
        assert!(hits.contains(&grid.index(r, c)));
        assert_eq!(hits, oracle(&tip, &spec, &grid));
        // tan 10° × 0.3 m = 52.9 mm reaches one neighbour each way, not two diagonals out
        assert!(hits.len() <= 9, "{hits:?}");
    }
}
