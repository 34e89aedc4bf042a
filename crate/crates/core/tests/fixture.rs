use std::path::Path;

use fieldforge::synthgen::{generate_volume, MorphologyModel, ShapeSpec};
use fieldforge::voxvol::{digital_weight, read_vgrid, GridKind, GridMeta, WeightParams};

fn fixture() -> fieldforge::voxvol::VoxelGrid {
    read_vgrid(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sphere_r8_phi100.vgrid"))
        .unwrap()
}

/// Voxel centers of a 32³ grid of 1 mm voxels within 8 mm of the box center.
fn brute_force_count() -> usize {
    let mut n = 0;
    for k in 0..32 {
        for j in 0..32 {
            for i in 0..32 {
                let d = |a: usize| a as f64 + 0.5 - 16.0;
                if d(i).powi(2) + d(j).powi(2) + d(k).powi(2) <= 64.0 {
                    n += 1;
                }
            }
        }
    }
    n
}

#[test]
fn shipped_fixture_matches_generator() {
    let g = fixture();
    assert_eq!(g.dims(), [32, 32, 32]);
    assert_eq!(g.kind(), GridKind::Occupancy);
    assert_eq!(g.meta().flow_rate_percent, Some(100.0));
    assert_eq!(g.meta().voxel_size, [1.0; 3]);

    let meta = GridMeta::new([32; 3], [1.0; 3], GridKind::Occupancy).unwrap();
    let fresh = generate_volume(
        &ShapeSpec::Sphere { r_mm: 8.0 },
        &MorphologyModel::default(),
        &meta,
        100.0,
    )
    .unwrap();
    assert_eq!(fresh.to_vgrid_bytes().unwrap(), g.to_vgrid_bytes().unwrap());
}

#[test]
fn shipped_fixture_weight() {
    let g = fixture();
    let count = brute_force_count();
    assert_eq!(g.occupied_count(), count);
    let w = digital_weight(&g, WeightParams::new(1.25).unwrap()).unwrap();
    assert!((w - 1.25 * count as f64 / 1000.0).abs() < 1e-12, "{w}");
}
