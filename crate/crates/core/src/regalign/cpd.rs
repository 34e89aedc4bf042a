use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RigidTransform2p5D;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CpdConfig {
    pub max_iter: usize,
    /// Relative log-likelihood change below which EM stops.
    pub tol: f64,
    /// Weight of the uniform outlier component, in [0, 1).
    pub outlier_w: f64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-6,
            outlier_w: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpdResult {
    /// Transform mapping source points onto the target.
    pub transform: RigidTransform2p5D,
    pub sigma2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood evaluated at the start of every EM iteration.
    pub log_likelihood: Vec<f64>,
}

const SIGMA2_FLOOR: f64 = 1e-12;

/// Rigid coherent point drift with rotation about z and translation in xy.
///
/// Non-convergence within `max_iter` is not an error: the best transform seen
/// is returned with `converged = false`.
pub fn cpd_rigid_z(
    source: &[[f64; 3]],
    target: &[[f64; 3]],
    config: &CpdConfig,
) -> Result<CpdResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidInput("cpd needs non-empty point sets".into()));
    }
    if !(0.0..1.0).contains(&config.outlier_w) {
        return Err(Error::InvalidInput(format!(
            "outlier weight must lie in [0, 1), got {}",
            config.outlier_w
        )));
    }
    let x = target;
    let y = source;
    let (n, m) = (x.len() as f64, y.len() as f64);
    const D: f64 = 3.0;

    let mut sigma2 = pairwise_sigma2(x, y).max(SIGMA2_FLOOR);
    let mut transform = RigidTransform2p5D::identity();
    let mut history = Vec::new();
    let mut best = (f64::NEG_INFINITY, transform, sigma2);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iter {
        iterations += 1;
        let ty: Vec<[f64; 3]> = y.iter().map(|&p| transform.apply(p)).collect();
        let w = config.outlier_w;
        let c = if w > 0.0 {
            (2.0 * PI * sigma2).powf(D / 2.0) * w / (1.0 - w) * m / n
        } else {
            0.0
        };
        let inv2s = 1.0 / (2.0 * sigma2);

        // log of Σ_m exp(−d²/2σ²) + c for every target point
        let log_den: Vec<f64> = x
            .par_iter()
            .map(|xn| {
                let mut mx = f64::NEG_INFINITY;
                for t in &ty {
                    mx = mx.max(-dist2(*xn, *t) * inv2s);
                }
                if c > 0.0 {
                    mx = mx.max(c.ln());
                }
                let mut s: f64 = ty
                    .iter()
                    .map(|t| (-dist2(*xn, *t) * inv2s - mx).exp())
                    .sum();
                if c > 0.0 {
                    s += (c.ln() - mx).exp();
                }
                mx + s.ln()
            })
            .collect();

        let ll = log_den.iter().sum::<f64>()
            + n * (((1.0 - w) / m).ln() - D / 2.0 * (2.0 * PI * sigma2).ln());
        if ll > best.0 {
            best = (ll, transform, sigma2);
        }
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            history.push(ll);
            if (ll - prev).abs() <= config.tol * prev.abs().max(1.0) {
                converged = true;
                break;
            }
        } else {
            history.push(ll);
        }

        // per source point: Σ_n P_mn and Σ_n P_mn x_n
        let stats: Vec<(f64, [f64; 3])> = ty
            .par_iter()
            .map(|t| {
                let mut p1 = 0.0;
                let mut px = [0.0; 3];
                for (xn, ld) in x.iter().zip(&log_den) {
                    let p = (-dist2(*xn, *t) * inv2s - ld).exp();
                    p1 += p;
                    px[0] += p * xn[0];
                    px[1] += p * xn[1];
                    px[2] += p * xn[2];
                }
                (p1, px)
            })
            .collect();
        let np: f64 = stats.iter().map(|s| s.0).sum();
        if np <= f64::MIN_POSITIVE {
            break;
        }
        let mut mu_x = [0.0; 3];
        let mut mu_y = [0.0; 3];
        for ((p1, px), yy) in stats.iter().zip(y) {
            for a in 0..3 {
                mu_x[a] += px[a];
                mu_y[a] += p1 * yy[a];
            }
        }
        mu_x = mu_x.map(|v| v / np);
        mu_y = mu_y.map(|v| v / np);

        // A = Σ P (x − μx)(y − μy)ᵀ restricted to the xy block
        let (mut axx, mut axy, mut ayx, mut ayy) = (0.0, 0.0, 0.0, 0.0);
        for ((_, px), yy) in stats.iter().zip(y) {
            axx += px[0] * yy[0];
            axy += px[0] * yy[1];
            ayx += px[1] * yy[0];
            ayy += px[1] * yy[1];
        }
        axx -= np * mu_x[0] * mu_y[0];
        axy -= np * mu_x[0] * mu_y[1];
        ayx -= np * mu_x[1] * mu_y[0];
        ayy -= np * mu_x[1] * mu_y[1];
        let theta = (ayx - axy).atan2(axx + ayy);
        let (s, co) = theta.sin_cos();
        let tx = mu_x[0] - (co * mu_y[0] - s * mu_y[1]);
        let ty_ = mu_x[1] - (s * mu_y[0] + co * mu_y[1]);
        transform = RigidTransform2p5D::new(tx, ty_, theta);

        // σ² = Σ P ‖x − T(y)‖² / (Np·D), expanded over the sufficient statistics
        let mut acc: f64 = x
            .iter()
            .zip(&log_den)
            .map(|(xn, ld)| {
                // Σ_m P_mn = 1 − c / denominator
                let pt1 = 1.0 - c * (-ld).exp();
                pt1 * (xn[0] * xn[0] + xn[1] * xn[1] + xn[2] * xn[2])
            })
            .sum();
        for ((p1, px), yy) in stats.iter().zip(y) {
            let q = transform.apply(*yy);
            acc += p1 * (q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
                - 2.0 * (px[0] * q[0] + px[1] * q[1] + px[2] * q[2]);
        }
        sigma2 = (acc / (np * D)).max(SIGMA2_FLOOR);
    }

    if !converged {
        log::warn!("cpd did not converge within {} iterations", config.max_iter);
    }
    Ok(CpdResult {
        transform: best.1,
        sigma2: best.2,
        iterations,
        converged,
        log_likelihood: history,
    })
}

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn pairwise_sigma2(x: &[[f64; 3]], y: &[[f64; 3]]) -> f64 {
    // collected before summing so the reduction order is fixed
    let rows: Vec<f64> = x
        .par_iter()
        .map(|xn| y.iter().map(|ym| dist2(*xn, *ym)).sum::<f64>())
        .collect();
    let total: f64 = rows.iter().sum();
    total / (3.0 * x.len() as f64 * y.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Asymmetric cloud: an L-shaped slab with a bump, in mm.
    fn cloud(n: usize, seed: u64) -> Vec<[f64; 3]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| match i % 3 {
                0 => [
                    rng.random_range(0.0..20.0),
                    rng.random_range(0.0..4.0),
                    rng.random_range(0.0..3.0),
                ],
                1 => [
                    rng.random_range(0.0..4.0),
                    rng.random_range(0.0..12.0),
                    rng.random_range(0.0..3.0),
                ],
                _ => [
                    rng.random_range(12.0..16.0),
                    rng.random_range(4.0..7.0),
                    rng.random_range(3.0..6.0),
                ],
            })
            .collect()
    }

    fn assert_monotone(ll: &[f64]) {
        for w in ll.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "log-likelihood fell: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn identical_sets_give_identity() {
        let src = cloud(300, 1);
        let r = cpd_rigid_z(&src, &src, &CpdConfig::default()).unwrap();
        assert!(
            r.transform.tx.abs() < 1e-6
                && r.transform.ty.abs() < 1e-6
                && r.transform.theta_z.abs() < 1e-6
        );
        assert_monotone(&r.log_likelihood);
    }

    #[test]
    fn recovers_known_transform() {
        let src = cloud(500, 2);
        let truth = RigidTransform2p5D::new(2.0, -1.5, 7f64.to_radians());
        let dst: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let r = cpd_rigid_z(&src, &dst, &CpdConfig::default()).unwrap();
        assert!((r.transform.tx - 2.0).abs() < 0.05, "{:?}", r.transform);
        assert!((r.transform.ty + 1.5).abs() < 0.05, "{:?}", r.transform);
        assert!(
            (r.transform.theta_z.to_degrees() - 7.0).abs() < 0.1,
            "{:?}",
            r.transform
        );
        assert_monotone(&r.log_likelihood);
    }

    #[test]
    fn rejects_empty_and_bad_weight() {
        let p = cloud(10, 3);
        assert!(cpd_rigid_z(&[], &p, &CpdConfig::default()).is_err());
        let bad = CpdConfig {
            outlier_w: 1.0,
            ..CpdConfig::default()
        };
        assert!(cpd_rigid_z(&p, &p, &bad).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let src = cloud(100, 4);
        let truth = RigidTransform2p5D::new(3.0, 1.0, 0.2);
        let dst: Vec<_> = src.iter().map(|&p| truth.apply(p)).collect();
        let cfg = CpdConfig {
            max_iter: 2,
            ..CpdConfig::default()
        };
        let r = cpd_rigid_z(&src, &dst, &cfg).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iterations, 2);
    }
}
