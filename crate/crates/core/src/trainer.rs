//! Training loop: Rprop⁻ with a cosine-annealed step ceiling, shuffled
//! mini-batches and freshly drawn Latin hypercube proxies every step.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralfield::{
    loss_mse, write_checkpoint, FinalActivation, Gradients, LossBreakdown, Real, SirenConfig,
    SirenNet,
};
use crate::sampler::{batch_indices, lhs_proxies, mix_seed, named_seed, PointSet5D};
use crate::voxvol::GridKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[default]
    Occupancy,
    Sdf,
}

impl TrainMode {
    pub fn final_activation(self) -> FinalActivation {
        match self {
            TrainMode::Occupancy => FinalActivation::Sigmoid,
            TrainMode::Sdf => FinalActivation::Linear,
        }
    }

    pub fn grid_kind(self) -> GridKind {
        match self {
            TrainMode::Occupancy => GridKind::Occupancy,
            TrainMode::Sdf => GridKind::Sdf,
        }
    }
}

/// Cosine decay of the Rprop step ceiling from `step_max_initial` to
/// `step_max_initial / final_divisor` over the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CosineSchedule {
    pub step_max_initial: f64,
    pub final_divisor: f64,
}

impl Default for CosineSchedule {
    fn default() -> Self {
        Self {
            step_max_initial: 1e-2,
            final_divisor: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub proxies_per_step: usize,
    pub lambda: f64,
    /// Initial per-parameter Rprop step size.
    pub lr: f64,
    pub schedule: CosineSchedule,
    pub seed: u64,
    pub mode: TrainMode,
    /// Draw new proxies every step (otherwise one fixed set for the run).
    pub resample_proxies: bool,
    /// Time GDIR against a λ = 0 gradient pass after training.
    pub measure_overhead: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 50_000,
            proxies_per_step: 50_000,
            lambda: 1e-2,
            lr: 1e-4,
            schedule: CosineSchedule::default(),
            seed: 0,
            mode: TrainMode::Occupancy,
            resample_proxies: true,
            measure_overhead: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.proxies_per_step == 0 {
            return Err(Error::InvalidInput(
                "epochs, batch_size and proxies_per_step must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        let s = &self.schedule;
        if !(s.step_max_initial >= RPROP_STEP_MIN
            && s.step_max_initial.is_finite()
            && s.final_divisor >= 1.0)
        {
            return Err(Error::InvalidInput(format!(
                "invalid annealing schedule {s:?}"
            )));
        }
        Ok(())
    }
}

pub const RPROP_ETA_PLUS: f64 = 1.2;
pub const RPROP_ETA_MINUS: f64 = 0.5;
pub const RPROP_STEP_MIN: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct RpropState<T> {
    pub steps: Vec<T>,
    /// Gradient from the previous step, zeroed after a sign flip.
    pub prev_grad: Vec<T>,
    pub eta_plus: f64,
    pub eta_minus: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl<T: Real> RpropState<T> {
    pub fn new(param_count: usize, initial_step: f64, step_max: f64) -> Self {
        let s = T::from_f64(initial_step.clamp(RPROP_STEP_MIN, step_max)).unwrap();
        Self {
            steps: vec![s; param_count],
            prev_grad: vec![T::zero(); param_count],
            eta_plus: RPROP_ETA_PLUS,
            eta_minus: RPROP_ETA_MINUS,
            step_min: RPROP_STEP_MIN,
            step_max,
        }
    }
}

/// One Rprop⁻ update. Gradients are checked for finiteness before anything is
/// modified.
pub fn rprop_step<T: Real>(
    net: &mut SirenNet<T>,
    grads: &Gradients<T>,
    state: &mut RpropState<T>,
) -> Result<()> {
    let flat_grads: Vec<T> = grads
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect();
    if flat_grads.len() != state.steps.len() || flat_grads.len() != net.param_count() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            flat_grads.len(),
            net.param_count()
        )));
    }
    if let Some(index) = flat_grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let up = T::from_f64(state.eta_plus).unwrap();
    let down = T::from_f64(state.eta_minus).unwrap();
    let lo = T::from_f64(state.step_min).unwrap();
    let hi = T::from_f64(state.step_max).unwrap();
    let mut idx = 0;
    for layer in net.layers_mut() {
        let params = layer
            .weight
            .as_slice_mut()
            .unwrap()
            .iter_mut()
            .chain(layer.bias.as_slice_mut().unwrap().iter_mut());
        for p in params {
            let g = flat_grads[idx];
            let prev = state.prev_grad[idx];
            let step = &mut state.steps[idx];
            let agreement = prev * g;
            if agreement > T::zero() {
                *step = (*step * up).min(hi).max(lo);
                *p -= g.signum() * *step;
                state.prev_grad[idx] = g;
            } else if agreement < T::zero() {
                *step = (*step * down).max(lo).min(hi);
                state.prev_grad[idx] = T::zero();
            } else {
                if *step > hi {
                    *step = hi;
                }
                if g != T::zero() {
                    *p -= g.signum() * *step;
                }
                state.prev_grad[idx] = g;
            }
            idx += 1;
        }
    }
    Ok(())
}

/// `final + (initial − final)·(1 + cos(π·t/T))/2` with `final = initial/10`.
pub fn cosine_anneal(step_max_initial: f64, step: usize, total_steps: usize) -> Result<f64> {
    cosine_anneal_to(step_max_initial, step_max_initial / 10.0, step, total_steps)
}

pub fn cosine_anneal_to(
    initial: f64,
    final_value: f64,
    step: usize,
    total_steps: usize,
) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidInput(
            "annealing needs total_steps >= 1".into(),
        ));
    }
    if step > total_steps {
        return Err(Error::InvalidInput(format!(
            "step {step} beyond total {total_steps}"
        )));
    }
    let c = (PI * step as f64 / total_steps as f64).cos();
    Ok(final_value + (initial - final_value) * (1.0 + c) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LossBreakdown>,
    pub epoch_seconds: Vec<f64>,
    pub checkpoint: Option<PathBuf>,
    pub gdir_overhead_fraction: Option<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.history.last().copied()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    /// `step,mse,gdir,total,lambda` per optimizer step.
    pub fn write_loss_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "mse", "gdir", "total", "lambda"])?;
        for (i, h) in self.history.iter().enumerate() {
            w.write_record([
                i.to_string(),
                h.mse.to_string(),
                h.gdir.to_string(),
                h.total.to_string(),
                h.lambda.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Where a diverging run leaves its last finite-loss network.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    pub checkpoint_path: Option<PathBuf>,
    pub divergence_path: Option<PathBuf>,
}

pub fn train(
    dataset: &PointSet5D,
    config: &TrainConfig,
    net_config: &SirenConfig,
) -> Result<(SirenNet<f32>, TrainReport)> {
    train_with_output(dataset, config, net_config, &TrainOutput::default())
}

pub fn train_with_output(
    dataset: &PointSet5D,
    config: &TrainConfig,
    net_config: &SirenConfig,
    output: &TrainOutput,
) -> Result<(SirenNet<f32>, TrainReport)> {
    config.validate()?;
    net_config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    if net_config.final_activation != config.mode.final_activation() {
        return Err(Error::InvalidInput(format!(
            "{:?} mode requires {:?} output activation",
            config.mode,
            config.mode.final_activation()
        )));
    }
    let mut net = SirenNet::<f32>::new(net_config.clone(), named_seed(config.seed, "init"))?;
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * steps_per_epoch;
    let sched = config.schedule;
    let mut state = RpropState::<f32>::new(net.param_count(), config.lr, sched.step_max_initial);
    let batch_seed = named_seed(config.seed, "batches");
    let proxy_seed = named_seed(config.seed, "proxies");
    let fixed_proxies = if config.resample_proxies {
        None
    } else {
        Some(lhs_proxies::<f32>(config.proxies_per_step, proxy_seed)?)
    };

    let mut history = Vec::with_capacity(total_steps);
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        let started = Instant::now();
        for idx in batch_indices(
            dataset.len(),
            config.batch_size,
            mix_seed(batch_seed, epoch as u64),
        )? {
            let batch = dataset.gather(&idx);
            let fresh;
            let proxies = match &fixed_proxies {
                Some(p) => p,
                None => {
                    fresh = lhs_proxies::<f32>(
                        config.proxies_per_step,
                        mix_seed(proxy_seed, step as u64),
                    )?;
                    &fresh
                }
            };
            state.step_max = cosine_anneal_to(
                sched.step_max_initial,
                sched.step_max_initial / sched.final_divisor,
                step,
                total_steps,
            )?;
            let (grads, loss) = net.grad_total_loss(
                batch.coords.view(),
                batch.targets.view(),
                proxies.view(),
                config.lambda,
            )?;
            let diverged = |net: &SirenNet<f32>| -> Result<Error> {
                let checkpoint = match &output.divergence_path {
                    Some(path) => {
                        write_checkpoint(net, path)?;
                        Some(path.clone())
                    }
                    None => None,
                };
                Ok(Error::Diverged { step, checkpoint })
            };
            if !loss.total.is_finite() {
                log::error!("loss became non-finite at step {step}");
                return Err(diverged(&net)?);
            }
            let before = net.clone();
            match rprop_step(&mut net, &grads, &mut state) {
                Ok(()) => {}
                Err(Error::NonFiniteGradient { index }) => {
                    log::error!("non-finite gradient at parameter {index}, step {step}");
                    return Err(diverged(&before)?);
                }
                Err(e) => return Err(e),
            }
            debug_assert!(state
                .steps
                .iter()
                .all(|&s| (s as f64) >= state.step_min * 0.999
                    && (s as f64) <= state.step_max * 1.001));
            log::debug!(
                "step {step}: mse {:.6} gdir {:.6} total {:.6}",
                loss.mse,
                loss.gdir,
                loss.total
            );
            history.push(loss);
            step += 1;
        }
        epoch_seconds.push(started.elapsed().as_secs_f64());
        if let Some(last) = history.last() {
            log::info!(
                "epoch {}/{}: mse {:.6} gdir {:.6}",
                epoch + 1,
                config.epochs,
                last.mse,
                last.gdir
            );
        }
    }

    let gdir_overhead_fraction = if config.measure_overhead {
        Some(measure_gdir_overhead(&net, dataset, config)?)
    } else {
        None
    };
    let checkpoint = match &output.checkpoint_path {
        Some(path) => {
            write_checkpoint(&net, path)?;
            Some(path.clone())
        }
        None => None,
    };
    Ok((
        net,
        TrainReport {
            history,
            epoch_seconds,
            checkpoint,
            gdir_overhead_fraction,
        },
    ))
}

/// Relative extra time of a gradient evaluation with the penalty, compared to
/// the same batch with λ = 0.
fn measure_gdir_overhead(
    net: &SirenNet<f32>,
    dataset: &PointSet5D,
    config: &TrainConfig,
) -> Result<f64> {
    const REPEATS: usize = 3;
    let idx: Vec<usize> = (0..config.batch_size.min(dataset.len())).collect();
    let batch = dataset.gather(&idx);
    let proxies = lhs_proxies::<f32>(config.proxies_per_step, 0)?;
    let lambda = if config.lambda > 0.0 {
        config.lambda
    } else {
        1e-2
    };
    let time = |lam: f64| -> Result<f64> {
        let t = Instant::now();
        for _ in 0..REPEATS {
            net.grad_total_loss(
                batch.coords.view(),
                batch.targets.view(),
                proxies.view(),
                lam,
            )?;
        }
        Ok(t.elapsed().as_secs_f64())
    };
    let base = time(0.0)?;
    let with = time(lambda)?;
    Ok((with - base) / base)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaScore {
    pub omega_first: f64,
    pub omega_hidden: f64,
    pub validation_mse: f64,
}

/// Trains one short run per `(ω_first, ω_hidden)` candidate on a seeded
/// `subsample` fraction of the data and scores it on a disjoint 1% split.
/// Returns the best pair (ties go to the smaller ω_first, then ω_hidden) and
/// every score in candidate order.
pub fn omega_grid_search(
    dataset: &PointSet5D,
    candidates: &[(f64, f64)],
    subsample: f64,
    config: &TrainConfig,
    net_config: &SirenConfig,
) -> Result<((f64, f64), Vec<OmegaScore>)> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput(
            "omega grid search needs candidates".into(),
        ));
    }
    if !(subsample > 0.0 && subsample <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "subsample fraction must lie in (0, 1], got {subsample}"
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(named_seed(
        config.seed,
        "omega-split",
    )));
    let n_val = ((n as f64 * 0.01).round() as usize).max(1);
    let n_train =
        ((n as f64 * subsample).round() as usize).clamp(1, n.saturating_sub(n_val).max(1));
    let mut val_idx = order[..n_val.min(n)].to_vec();
    let mut train_idx = order[n_val.min(n)..(n_val + n_train).min(n)].to_vec();
    if train_idx.is_empty() {
        train_idx = val_idx.clone();
    }
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let train_part = dataset.gather(&train_idx);
    let train_set = PointSet5D {
        coords: train_part.coords,
        targets: train_part.targets,
        bounds: dataset.bounds,
        kind: dataset.kind,
    };
    let val = dataset.gather(&val_idx);

    let scores: Vec<OmegaScore> = candidates
        .par_iter()
        .map(|&(wf, wh)| {
            let cfg = SirenConfig {
                omega_first: wf,
                omega_hidden: wh,
                ..net_config.clone()
            };
            let (net, _) = train(&train_set, config, &cfg)?;
            let validation_mse = loss_mse(&net, val.coords.view(), val.targets.view())?;
            Ok(OmegaScore {
                omega_first: wf,
                omega_hidden: wh,
                validation_mse,
            })
        })
        .collect::<Result<_>>()?;
    let best = scores
        .iter()
        .min_by(|a, b| {
            a.validation_mse
                .total_cmp(&b.validation_mse)
                .then(a.omega_first.total_cmp(&b.omega_first))
                .then(a.omega_hidden.total_cmp(&b.omega_hidden))
        })
        .unwrap();
    Ok(((best.omega_first, best.omega_hidden), scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralfield::Layer;
    use ndarray::{array, Array2};

    fn tiny_net(w: f64) -> SirenNet<f64> {
        let cfg = SirenConfig::new(1, 1, 1.0, FinalActivation::Linear);
        SirenNet::from_layers(
            cfg,
            vec![
                Layer {
                    weight: Array2::from_elem((1, 4), w),
                    bias: array![w],
                },
                Layer {
                    weight: array![[w]],
                    bias: array![w],
                },
            ],
        )
        .unwrap()
    }

    fn grads_of(net: &SirenNet<f64>, g: f64) -> Gradients<f64> {
        let mut out = net.zero_gradients();
        for l in &mut out {
            l.weight.fill(g);
            l.bias.fill(g);
        }
        out
    }

    #[test]
    fn constant_sign_grows_step() {
        let mut net = tiny_net(0.0);
        let mut st = RpropState::new(net.param_count(), 0.1, 1.0);
        let g = grads_of(&net, 2.0);
        let mut seen = Vec::new();
        for _ in 0..3 {
            let before = net.layers()[0].weight[[0, 0]];
            rprop_step(&mut net, &g, &mut st).unwrap();
            seen.push(before - net.layers()[0].weight[[0, 0]]);
        }
        let want = [0.1, 0.12, 0.144];
        for (s, w) in seen.iter().zip(want) {
            assert!((s - w).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_flip_halves_and_skips() {
        let mut net = tiny_net(0.0);
        let mut st = RpropState::new(net.param_count(), 0.1, 1.0);
        {
            let g = grads_of(&net, 1.0);
            rprop_step(&mut net, &g, &mut st)
        }
        .unwrap();
        let before = net.clone();
        {
            let g = grads_of(&net, -1.0);
            rprop_step(&mut net, &g, &mut st)
        }
        .unwrap();
        assert_eq!(net, before);
        assert!(st.steps.iter().all(|&s| (s - 0.05).abs() < 1e-15));
        assert!(st.prev_grad.iter().all(|&g| g == 0.0));
        // after the flip the next update moves with the halved step
        {
            let g = grads_of(&net, -1.0);
            rprop_step(&mut net, &g, &mut st)
        }
        .unwrap();
        assert!((net.layers()[0].weight[[0, 0]] - (-0.1 + 0.05)).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_inert() {
        let mut net = tiny_net(0.3);
        let mut st = RpropState::new(net.param_count(), 0.1, 1.0);
        {
            let g = grads_of(&net, 0.0);
            rprop_step(&mut net, &g, &mut st)
        }
        .unwrap();
        assert_eq!(net, tiny_net(0.3));
        assert!(st.steps.iter().all(|&s| s == 0.1));
    }

    #[test]
    fn steps_respect_bounds() {
        let mut net = tiny_net(0.0);
        let mut st = RpropState::new(net.param_count(), 0.1, 0.15);
        let g = grads_of(&net, 1.0);
        for _ in 0..5 {
            rprop_step(&mut net, &g, &mut st).unwrap();
            assert!(st
                .steps
                .iter()
                .all(|&s| (RPROP_STEP_MIN..=0.15).contains(&s)));
        }
        st.step_max = 0.01;
        rprop_step(&mut net, &g, &mut st).unwrap();
        assert!(st.steps.iter().all(|&s| s <= 0.01));
    }

    #[test]
    fn non_finite_gradient_reports_index() {
        let mut net = tiny_net(0.0);
        let mut st = RpropState::new(net.param_count(), 0.1, 1.0);
        let mut g = grads_of(&net, 1.0);
        g[0].bias[0] = f64::NAN;
        let before = net.clone();
        assert!(matches!(
            rprop_step(&mut net, &g, &mut st),
            Err(Error::NonFiniteGradient { index: 4 })
        ));
        assert_eq!(net, before);
    }

    #[test]
    fn annealing_endpoints() {
        assert_eq!(cosine_anneal(1.0, 0, 100).unwrap(), 1.0);
        assert!((cosine_anneal(1.0, 100, 100).unwrap() - 0.1).abs() < 1e-15);
        assert!((cosine_anneal(1.0, 50, 100).unwrap() - 0.55).abs() < 1e-15);
        assert!(cosine_anneal(1.0, 0, 0).is_err());
        assert!(cosine_anneal(1.0, 101, 100).is_err());
        let mut prev = f64::INFINITY;
        for t in 0..=37 {
            let v = cosine_anneal(0.3, t, 37).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        let cfg: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, TrainConfig::default());
    }
}
