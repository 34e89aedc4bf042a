use fieldforge::neuralfield::{gdir_penalty, FinalActivation, SirenConfig};
use fieldforge::sampler::{flatten, lhs_proxies, DomainBounds, PointSet5D, DEFAULT_PHI_RANGE};
use fieldforge::synthgen::{generate_volume, MorphologyModel, ShapeSpec};
use fieldforge::trainer::{omega_grid_search, train, CosineSchedule, TrainConfig};
use fieldforge::voxvol::{GridKind, GridMeta};

/// Single 8³ sphere volume.
fn tiny() -> PointSet5D {
    let meta = GridMeta::new([8; 3], [1.0; 3], GridKind::Occupancy).unwrap();
    let v = generate_volume(
        &ShapeSpec::Sphere { r_mm: 2.0 },
        &MorphologyModel::default(),
        &meta,
        100.0,
    )
    .unwrap();
    flatten(
        &[v],
        &DomainBounds::from_meta(&meta, DEFAULT_PHI_RANGE).unwrap(),
    )
    .unwrap()
}

fn tiny_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: 200,
        batch_size: 512,
        proxies_per_step: 256,
        lambda,
        lr: 1e-3,
        schedule: CosineSchedule {
            step_max_initial: 3e-2,
            final_divisor: 10.0,
        },
        seed: 5,
        ..TrainConfig::default()
    }
}

fn tiny_net() -> SirenConfig {
    SirenConfig::new(2, 16, 30.0, FinalActivation::Sigmoid)
}

#[test]
fn tiny_fixture_overfits() {
    let data = tiny();
    let (_, report) = train(&data, &tiny_config(0.0), &tiny_net()).unwrap();
    assert_eq!(report.history.len(), 200);
    let last = report.final_loss().unwrap();
    assert!(last.mse < 0.05, "final mse {}", last.mse);
    assert!(report.history.iter().all(|h| h.gdir == 0.0));
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let data = tiny();
    let mut cfg = tiny_config(1e-2);
    cfg.epochs = 20;
    let (a, _) = train(&data, &cfg, &tiny_net()).unwrap();
    let (b, _) = train(&data, &cfg, &tiny_net()).unwrap();
    assert_eq!(
        a.to_checkpoint_bytes().unwrap(),
        b.to_checkpoint_bytes().unwrap()
    );
    cfg.seed += 1;
    let (c, _) = train(&data, &cfg, &tiny_net()).unwrap();
    assert_ne!(
        a.to_checkpoint_bytes().unwrap(),
        c.to_checkpoint_bytes().unwrap()
    );
}

/// SIREN initialization starts with ∂F/∂φ close to zero, so the penalty first
/// grows while the fit sharpens; what it must do is keep the field flatter in φ
/// than an unpenalized twin.
#[test]
fn gdir_flattens_phi_response() {
    let data = tiny();
    let (with, report) = train(&data, &tiny_config(1e-2), &tiny_net()).unwrap();
    let (without, _) = train(&data, &tiny_config(0.0), &tiny_net()).unwrap();
    let probes = lhs_proxies::<f32>(4096, 99).unwrap();
    let g_with = gdir_penalty(&with, probes.view()).unwrap();
    let g_without = gdir_penalty(&without, probes.view()).unwrap();
    assert!(
        g_with < g_without,
        "gdir {g_with} (lambda 1e-2) vs {g_without} (lambda 0)"
    );
    assert!(report
        .history
        .iter()
        .all(|h| h.gdir.is_finite() && h.gdir >= 0.0));
}

#[test]
fn omega_search_prefers_low_frequency_for_smooth_content() {
    let meta = GridMeta::new([16; 3], [1.0; 3], GridKind::Occupancy).unwrap();
    let model = MorphologyModel::default();
    let shape = ShapeSpec::Sphere { r_mm: 5.0 };
    let vols: Vec<_> = [80.0, 100.0, 130.0]
        .iter()
        .map(|&p| generate_volume(&shape, &model, &meta, p).unwrap())
        .collect();
    let data = flatten(
        &vols,
        &DomainBounds::from_meta(&meta, DEFAULT_PHI_RANGE).unwrap(),
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 2048,
        proxies_per_step: 256,
        lambda: 0.0,
        ..tiny_config(0.0)
    };
    let net = SirenConfig::new(2, 32, 30.0, FinalActivation::Sigmoid);
    let (best, scores) =
        omega_grid_search(&data, &[(10.0, 10.0), (30.0, 30.0)], 0.1, &cfg, &net).unwrap();
    assert_eq!(best, (10.0, 10.0), "{scores:?}");
}

#[test]
fn penalized_field_changes_less_across_phi() {
    let meta = GridMeta::new([16; 3], [1.0; 3], GridKind::Occupancy).unwrap();
    let model = MorphologyModel {
        alpha_mm: 4.0,
        ..MorphologyModel::default()
    };
    let shape = ShapeSpec::Sphere { r_mm: 2.5 };
    let vols: Vec<_> = [80.0, 100.0, 140.0]
        .iter()
        .map(|&p| generate_volume(&shape, &model, &meta, p).unwrap())
        .collect();
    let data = flatten(
        &vols,
        &DomainBounds::from_meta(&meta, DEFAULT_PHI_RANGE).unwrap(),
    )
    .unwrap();
    let cfg = |lambda| TrainConfig {
        epochs: 60,
        batch_size: 2048,
        ..tiny_config(lambda)
    };
    let net = SirenConfig::new(2, 32, 30.0, FinalActivation::Sigmoid);
    let (with, _) = train(&data, &cfg(1e-2), &net).unwrap();
    let (without, _) = train(&data, &cfg(0.0), &net).unwrap();

    let probes = lhs_proxies::<f32>(4096, 7).unwrap();
    let mut shifted = probes.clone();
    shifted.column_mut(3).mapv_inplace(|v| v + 0.01);
    let change = |n: &fieldforge::neuralfield::SirenNet<f32>| {
        let a = n.forward(probes.view()).unwrap();
        let b = n.forward(shifted.view()).unwrap();
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs() as f64)
            .sum::<f64>()
            / a.len() as f64
    };
    let (cw, co) = (change(&with), change(&without));
    assert!(cw < co, "mean |dF| {cw} (lambda 1e-2) vs {co} (lambda 0)");
}
