//! SIREN field `F(x, y, z, φ)` with exact parameter gradients of the data loss
//! plus the flow-rate gradient penalty.
//!
//! Layer `l` computes `h_l = sin(ω_l · W_l h_{l-1} + b_l)`; the last layer is
//! linear and followed by the configured output activation. The derivative with
//! respect to the fourth input (normalized φ) is carried alongside the primal
//! pass as a tangent, and the penalty gradient is obtained by reverse-mode
//! differentiation through both.

mod checkpoint;
mod real;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use real::Real;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input coordinates per point: x, y, z, φ.
pub const IN_DIM: usize = 4;
/// Column of φ in the input.
pub const PHI_INPUT: usize = 3;

/// Rows evaluated together; gradient partials are reduced per chunk in order.
const CHUNK_ROWS: usize = 256;
/// Chunks evaluated in parallel before their gradients are folded in.
const CHUNK_GROUP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalActivation {
    Linear,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SirenConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub omega_first: f64,
    pub omega_hidden: f64,
    pub final_activation: FinalActivation,
}

impl Default for SirenConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 8,
            hidden_width: 1024,
            omega_first: 30.0,
            omega_hidden: 30.0,
            final_activation: FinalActivation::Sigmoid,
        }
    }
}

impl SirenConfig {
    pub fn new(
        hidden_layers: usize,
        hidden_width: usize,
        omega: f64,
        final_activation: FinalActivation,
    ) -> Self {
        Self {
            hidden_layers,
            hidden_width,
            omega_first: omega,
            omega_hidden: omega,
            final_activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return Err(Error::InvalidInput(
                "hidden_layers and hidden_width must be at least 1".into(),
            ));
        }
        if !(self.omega_first > 0.0
            && self.omega_hidden > 0.0
            && self.omega_first.is_finite()
            && self.omega_hidden.is_finite())
        {
            return Err(Error::InvalidInput(
                "omega values must be finite and positive".into(),
            ));
        }
        Ok(())
    }

    /// `(out, in)` shape of every layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<[usize; 2]> {
        let mut shapes = vec![[self.hidden_width, IN_DIM]];
        shapes.extend((1..self.hidden_layers).map(|_| [self.hidden_width, self.hidden_width]));
        shapes.push([1, self.hidden_width]);
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|[o, i]| o * i + o).sum()
    }

    fn omega(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.omega_first
        } else {
            self.omega_hidden
        }
    }
}

/// Weights are `(out, in)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Layer<T> {
    fn zeros(shape: [usize; 2]) -> Self {
        Self {
            weight: Array2::zeros((shape[0], shape[1])),
            bias: Array1::zeros(shape[0]),
        }
    }

    fn add_assign(&mut self, other: &Self) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }
}

/// Parameter-shaped buffers, used for gradients.
pub type Gradients<T> = Vec<Layer<T>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub gdir: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(mse: f64, gdir: f64, lambda: f64) -> Self {
        Self {
            mse,
            gdir,
            total: mse + lambda * gdir,
            lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SirenNet<T> {
    config: SirenConfig,
    layers: Vec<Layer<T>>,
}

/// Per-chunk activations kept for the backward pass.
struct Tape<T> {
    /// `h[0]` is the input, `h[l + 1] = sin(z_l)`.
    h: Vec<Array2<T>>,
    /// `cos(z_l)`.
    c: Vec<Array2<T>>,
    /// Tangent of `z_l` with respect to φ.
    s: Vec<Array2<T>>,
    /// Tangent of `h[l + 1]`.
    t: Vec<Array2<T>>,
    y: Array1<T>,
    u: Option<Array1<T>>,
}

impl<T: Real> SirenNet<T> {
    /// SIREN initialization: first-layer weights `U(±1/in)`, later weights
    /// `U(±√(6/fan_in)/ω)`. Sine-layer biases are drawn from `U(±ω/√fan_in)`,
    /// the distribution of `ω·b` under the usual `b ~ U(±1/√fan_in)`; the output
    /// bias from `U(±1/√fan_in)`.
    pub fn new(config: SirenConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let mut layers = Vec::with_capacity(shapes.len());
        for (l, &[out, fan_in]) in shapes.iter().enumerate() {
            let w_lim = if l == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / config.omega_hidden
            };
            let b_lim = if l == last {
                1.0 / (fan_in as f64).sqrt()
            } else {
                config.omega(l) / (fan_in as f64).sqrt()
            };
            let weight = Array2::from_shape_simple_fn((out, fan_in), || {
                T::from_f64(rng.random_range(-w_lim..=w_lim)).unwrap()
            });
            let bias = Array1::from_shape_simple_fn(out, || {
                T::from_f64(rng.random_range(-b_lim..=b_lim)).unwrap()
            });
            layers.push(Layer { weight, bias });
        }
        Ok(Self { config, layers })
    }

    pub fn zeros(config: SirenConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(Layer::zeros)
            .collect();
        Ok(Self { config, layers })
    }

    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(config: SirenConfig, layers: Vec<Layer<T>>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, got {}",
                shapes.len(),
                layers.len()
            )));
        }
        for (l, (layer, shape)) in layers.iter().zip(&shapes).enumerate() {
            if layer.weight.dim() != (shape[0], shape[1]) || layer.bias.len() != shape[0] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l}: expected weight {:?}, got {:?} with bias {}",
                    shape,
                    layer.weight.dim(),
                    layer.bias.len()
                )));
            }
        }
        let layers = layers
            .into_iter()
            .map(|l| Layer {
                weight: l.weight.as_standard_layout().into_owned(),
                bias: l.bias.as_standard_layout().into_owned(),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &SirenConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    pub fn zero_gradients(&self) -> Gradients<T> {
        self.config
            .layer_shapes()
            .into_iter()
            .map(Layer::zeros)
            .collect()
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> SirenNet<U> {
        let conv = |v: &T| U::from_f64(v.to_f64().unwrap()).unwrap();
        SirenNet {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.map(conv),
                    bias: l.bias.map(conv),
                })
                .collect(),
        }
    }

    /// Parameters in checkpoint order: each layer's weights row-major, then its bias.
    pub fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn scale_output(&mut self, c: T) {
        let last = self.layers.last_mut().unwrap();
        last.weight.mapv_inplace(|w| w * c);
        last.bias.mapv_inplace(|b| b * c);
    }

    fn check_points(points: &ArrayView2<T>) -> Result<()> {
        if points.ncols() != IN_DIM {
            return Err(Error::ShapeMismatch(format!(
                "points need {IN_DIM} columns, got {}",
                points.ncols()
            )));
        }
        Ok(())
    }

    fn tape(&self, x: ArrayView2<T>, tangent: bool) -> Tape<T> {
        let nl = self.config.hidden_layers;
        let rows = x.nrows();
        let mut tape = Tape {
            h: Vec::with_capacity(nl + 1),
            c: Vec::with_capacity(nl),
            s: Vec::with_capacity(if tangent { nl } else { 0 }),
            t: Vec::with_capacity(if tangent { nl } else { 0 }),
            y: Array1::zeros(rows),
            u: None,
        };
        tape.h.push(x.to_owned());
        for l in 0..nl {
            let layer = &self.layers[l];
            let omega = T::from_f64(self.config.omega(l)).unwrap();
            let mut h = tape.h[l].dot(&layer.weight.t());
            let mut c = Array2::zeros(h.raw_dim());
            Zip::from(h.rows_mut())
                .and(c.rows_mut())
                .for_each(|mut hr, mut cr| {
                    Zip::from(&mut hr)
                        .and(&mut cr)
                        .and(&layer.bias)
                        .for_each(|h, c, &b| {
                            let (sn, cs) = (omega * *h + b).sin_cos();
                            *h = sn;
                            *c = cs;
                        });
                });
            if tangent {
                let mut s = if l == 0 {
                    let col = layer.weight.column(PHI_INPUT).mapv(|w| w * omega);
                    let width = col.len();
                    col.insert_axis(Axis(0))
                        .broadcast((rows, width))
                        .unwrap()
                        .to_owned()
                } else {
                    tape.t[l - 1].dot(&layer.weight.t())
                };
                if l > 0 {
                    s.mapv_inplace(|v| v * omega);
                }
                let t = &c * &s;
                tape.s.push(s);
                tape.t.push(t);
            }
            tape.h.push(h);
            tape.c.push(c);
        }
        let out = &self.layers[nl];
        let wo = out.weight.row(0);
        let bo = out.bias[0];
        tape.y = tape.h[nl].dot(&wo).mapv(|v| v + bo);
        if tangent {
            tape.u = Some(tape.t[nl - 1].dot(&wo));
        }
        tape
    }

    /// Accumulates parameter gradients given adjoints of the pre-activation
    /// output `y` and of its φ-tangent `u`.
    fn backward(
        &self,
        tape: &Tape<T>,
        ybar: &Array1<T>,
        ubar: Option<&Array1<T>>,
        grads: &mut Gradients<T>,
    ) {
        let nl = self.config.hidden_layers;
        let out = &self.layers[nl];
        let wo = out.weight.row(0);
        {
            let g = &mut grads[nl];
            let mut gw = g.weight.row_mut(0);
            gw += &tape.h[nl].t().dot(ybar);
            if let Some(ub) = ubar {
                gw += &tape.t[nl - 1].t().dot(ub);
            }
            g.bias[0] += ybar.sum();
        }
        let outer = |a: &Array1<T>| a.view().insert_axis(Axis(1)).dot(&wo.insert_axis(Axis(0)));
        let mut hbar = outer(ybar);
        let mut tbar = ubar.map(outer);

        for l in (0..nl).rev() {
            let layer = &self.layers[l];
            let omega = T::from_f64(self.config.omega(l)).unwrap();
            let mut zbar = &hbar * &tape.c[l];
            let sbar = tbar.as_ref().map(|tb| {
                Zip::from(&mut zbar)
                    .and(tb)
                    .and(&tape.h[l + 1])
                    .and(&tape.s[l])
                    .for_each(|z, &tb, &sn, &s| *z -= tb * sn * s);
                tb * &tape.c[l]
            });
            let g = &mut grads[l];
            general_mat_mul(omega, &zbar.t(), &tape.h[l], T::one(), &mut g.weight);
            g.bias += &zbar.sum_axis(Axis(0));
            if let Some(sbar) = &sbar {
                if l == 0 {
                    let mut col = g.weight.column_mut(PHI_INPUT);
                    col.scaled_add(omega, &sbar.sum_axis(Axis(0)));
                } else {
                    general_mat_mul(omega, &sbar.t(), &tape.t[l - 1], T::one(), &mut g.weight);
                }
            }
            if l > 0 {
                hbar = zbar.dot(&layer.weight);
                hbar.mapv_inplace(|v| v * omega);
                if let Some(sbar) = sbar {
                    let mut tb = sbar.dot(&layer.weight);
                    tb.mapv_inplace(|v| v * omega);
                    tbar = Some(tb);
                }
            }
        }
    }

    fn activate(&self, y: T) -> (T, T, T) {
        // (output, first derivative, second derivative)
        match self.config.final_activation {
            FinalActivation::Linear => (y, T::one(), T::zero()),
            FinalActivation::Sigmoid => {
                let o = T::one() / (T::one() + (-y).exp());
                let d1 = o * (T::one() - o);
                let two = T::one() + T::one();
                (o, d1, d1 * (T::one() - two * o))
            }
        }
    }

    fn map_chunks<R: Send>(
        &self,
        points: ArrayView2<T>,
        f: impl Fn(ArrayView2<T>) -> R + Sync,
    ) -> Vec<R> {
        let n = points.nrows();
        let chunks = n.div_ceil(CHUNK_ROWS);
        (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c * CHUNK_ROWS;
                let hi = (lo + CHUNK_ROWS).min(n);
                f(points.slice(s![lo..hi, ..]))
            })
            .collect()
    }

    /// Field values for a batch of `B × 4` points.
    pub fn forward(&self, points: ArrayView2<T>) -> Result<Array1<T>> {
        Self::check_points(&points)?;
        let parts = self.map_chunks(points, |x| {
            let tape = self.tape(x, false);
            tape.y.mapv(|y| self.activate(y).0)
        });
        Ok(concat(parts))
    }

    /// Exact ∂F/∂φ with respect to the normalized φ input.
    pub fn df_dphi(&self, points: ArrayView2<T>) -> Result<Array1<T>> {
        Ok(self.forward_with_dphi(points)?.1)
    }

    pub fn forward_with_dphi(&self, points: ArrayView2<T>) -> Result<(Array1<T>, Array1<T>)> {
        Self::check_points(&points)?;
        let parts = self.map_chunks(points, |x| {
            let tape = self.tape(x, true);
            let u = tape.u.as_ref().unwrap();
            let mut f = Array1::zeros(u.len());
            let mut g = Array1::zeros(u.len());
            for i in 0..u.len() {
                let (o, d1, _) = self.activate(tape.y[i]);
                f[i] = o;
                g[i] = d1 * u[i];
            }
            (f, g)
        });
        let (f, g): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
        Ok((concat(f), concat(g)))
    }

    /// Runs `f` on chunk groups in parallel and folds the per-chunk gradients
    /// in chunk order, independent of the thread count.
    fn fold_gradients(
        &self,
        points: ArrayView2<T>,
        grads: &mut Gradients<T>,
        f: impl Fn(usize, ArrayView2<T>, &mut Gradients<T>) -> f64 + Sync,
    ) -> f64 {
        let n = points.nrows();
        let chunks = n.div_ceil(CHUNK_ROWS);
        let mut total = 0.0;
        let mut start = 0;
        while start < chunks {
            let end = (start + CHUNK_GROUP).min(chunks);
            let partials: Vec<(f64, Gradients<T>)> = (start..end)
                .into_par_iter()
                .map(|c| {
                    let lo = c * CHUNK_ROWS;
                    let hi = (lo + CHUNK_ROWS).min(n);
                    let mut g = self.zero_gradients();
                    let v = f(lo, points.slice(s![lo..hi, ..]), &mut g);
                    (v, g)
                })
                .collect();
            for (v, g) in partials {
                total += v;
                for (acc, part) in grads.iter_mut().zip(&g) {
                    acc.add_assign(part);
                }
            }
            start = end;
        }
        total
    }

    /// Gradient of `mse + λ·gdir` over `points`/`targets` and `proxies`.
    pub fn grad_total_loss(
        &self,
        points: ArrayView2<T>,
        targets: ArrayView1<T>,
        proxies: ArrayView2<T>,
        lambda: f64,
    ) -> Result<(Gradients<T>, LossBreakdown)> {
        Self::check_points(&points)?;
        Self::check_points(&proxies)?;
        if points.nrows() == 0 || proxies.nrows() == 0 {
            return Err(Error::InvalidInput(
                "batch and proxies must be non-empty".into(),
            ));
        }
        if targets.len() != points.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} targets",
                points.nrows(),
                targets.len()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda must be finite and non-negative, got {lambda}"
            )));
        }
        let mut grads = self.zero_gradients();
        let n = T::from_usize(points.nrows()).unwrap();
        let two = T::one() + T::one();
        let sse = self.fold_gradients(points, &mut grads, |lo, x, g| {
            let tape = self.tape(x, false);
            let mut ybar = Array1::zeros(x.nrows());
            let mut sse = 0.0;
            for i in 0..x.nrows() {
                let (o, d1, _) = self.activate(tape.y[i]);
                let r = o - targets[lo + i];
                sse += r.to_f64().unwrap().powi(2);
                ybar[i] = two * r / n * d1;
            }
            self.backward(&tape, &ybar, None, g);
            sse
        });
        let mse = sse / points.nrows() as f64;

        let mut gdir = 0.0;
        if lambda > 0.0 {
            let m = T::from_usize(proxies.nrows()).unwrap();
            let lam = T::from_f64(lambda).unwrap();
            let ssq = self.fold_gradients(proxies, &mut grads, |_, x, g| {
                let tape = self.tape(x, true);
                let u = tape.u.as_ref().unwrap();
                let mut ybar = Array1::zeros(x.nrows());
                let mut ubar = Array1::zeros(x.nrows());
                let mut ssq = 0.0;
                for i in 0..x.nrows() {
                    let (_, d1, d2) = self.activate(tape.y[i]);
                    let d = d1 * u[i];
                    ssq += d.to_f64().unwrap().powi(2);
                    let gbar = two * lam * d / m;
                    ybar[i] = gbar * d2 * u[i];
                    ubar[i] = gbar * d1;
                }
                self.backward(&tape, &ybar, Some(&ubar), g);
                ssq
            });
            gdir = ssq / proxies.nrows() as f64;
        }
        Ok((grads, LossBreakdown::new(mse, gdir, lambda)))
    }
}

fn concat<T: Real>(parts: Vec<Array1<T>>) -> Array1<T> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        out.extend(p.iter().copied());
    }
    Array1::from(out)
}

/// Mean squared error between network outputs and targets.
pub fn loss_mse<T: Real>(
    net: &SirenNet<T>,
    points: ArrayView2<T>,
    targets: ArrayView1<T>,
) -> Result<f64> {
    if points.nrows() == 0 {
        return Err(Error::InvalidInput("loss over an empty batch".into()));
    }
    if targets.len() != points.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} points but {} targets",
            points.nrows(),
            targets.len()
        )));
    }
    let out = net.forward(points)?;
    let sse: f64 = out
        .iter()
        .zip(targets)
        .map(|(o, t)| (*o - *t).to_f64().unwrap().powi(2))
        .sum();
    Ok(sse / points.nrows() as f64)
}

/// Mean of `(∂F/∂φ)²` over the proxy points.
pub fn gdir_penalty<T: Real>(net: &SirenNet<T>, proxies: ArrayView2<T>) -> Result<f64> {
    if proxies.nrows() == 0 {
        return Err(Error::InvalidInput(
            "penalty over an empty proxy set".into(),
        ));
    }
    let d = net.df_dphi(proxies)?;
    Ok(d.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>() / proxies.nrows() as f64)
}

pub fn df_dphi<T: Real>(net: &SirenNet<T>, points: ArrayView2<T>) -> Result<Array1<T>> {
    net.df_dphi(points)
}

pub fn grad_total_loss<T: Real>(
    net: &SirenNet<T>,
    points: ArrayView2<T>,
    targets: ArrayView1<T>,
    proxies: ArrayView2<T>,
    lambda: f64,
) -> Result<(Gradients<T>, LossBreakdown)> {
    net.grad_total_loss(points, targets, proxies, lambda)
}
