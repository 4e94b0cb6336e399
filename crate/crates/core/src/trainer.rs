//! Multi-layer L2 loss, exact reverse-mode gradients through the unrolled
//! models, Adam, and the training loops (per channel, offline over i.i.d.
//! channels, and the online grid sweep that warm-starts each subcarrier
//! from its neighbour).
//!
//! Complex quantities are differentiated as real/imaginary pairs: the
//! gradient of the real loss with respect to a complex `v` is stored as
//! `∂L/∂Re v + i·∂L/∂Im v`.

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{apply_channel, iid_matrix, sigma2_from_snr, ChannelGrid};
use crate::constellation::Constellation;
use crate::denoiser::{denoise_with_grad, SIGMA2_FLOOR};
use crate::error::{contract, Error, Result};
use crate::models::{init_full_params, BoundModel, ForwardTrace, ModelParams};
use crate::numerics::{CMat, CVec, RngStream, StreamRng, C64};

const ZERO: C64 = C64::new(0.0, 0.0);
/// Stream namespace for held-out evaluation batches; training iterations
/// never reach it.
pub const HELD_OUT_STREAM: u64 = u64::MAX;
/// Samples per parallel work unit; fixed so reductions are ordered the same
/// way for any thread count.
const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], st: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || st.m.len() != params.len() {
        return Err(contract(format!(
            "adam: {} params, {} grads, state of {}",
            params.len(),
            grads.len(),
            st.m.len()
        )));
    }
    st.step += 1;
    let c1 = 1.0 - st.beta1.powi(st.step as i32);
    let c2 = 1.0 - st.beta2.powi(st.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        let mh = st.m[i] / c1;
        let vh = st.v[i] / c2;
        params[i] -= st.lr * mh / (vh.sqrt() + st.eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub snr_db_range: (f64, f64),
    pub rng: RngStream,
    pub lr: f64,
    /// Record the held-out loss every this many iterations (0 disables).
    pub history_every: usize,
}

impl TrainConfig {
    pub fn new(iterations: usize, snr_db_range: (f64, f64), rng: RngStream) -> Self {
        Self {
            batch_size: 500,
            iterations,
            snr_db_range,
            rng,
            lr: 1e-3,
            history_every: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(contract("batch_size must be >= 1"));
        }
        let (lo, hi) = self.snr_db_range;
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(contract(format!("invalid SNR range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// Default training SNR interval per modulation order.
pub fn default_snr_range(order: usize) -> (f64, f64) {
    match order {
        4 => (4.0, 9.0),
        16 => (11.0, 16.0),
        _ => (18.0, 23.0),
    }
}

/// One channel with a batch of `(x, y)` pairs at a common noise level.
#[derive(Clone, Debug)]
pub struct Batch {
    pub h: CMat,
    pub sigma2: f64,
    pub x: Vec<CVec>,
    pub y: Vec<CVec>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

fn draw_samples(h: &CMat, c: &Constellation, snr_db: f64, n: usize, rng: &mut StreamRng) -> Batch {
    let sigma2 = sigma2_from_snr(h, snr_db);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = c.to_points(&c.sample_symbols(h.cols(), rng));
        let yi = apply_channel(h, &xi, sigma2, rng).expect("dimensions agree");
        x.push(xi);
        y.push(yi);
    }
    Batch {
        h: h.clone(),
        sigma2,
        x,
        y,
    }
}

fn draw_snr(range: (f64, f64), rng: &mut StreamRng) -> f64 {
    if range.1 > range.0 {
        rng.gen_range(range.0..range.1)
    } else {
        range.0
    }
}

/// Batch on a fixed channel: SNR uniform in `range`, fresh symbols and noise.
pub fn sample_batch(h: &CMat, c: &Constellation, range: (f64, f64), n: usize, stream: RngStream) -> Batch {
    let mut rng = stream.rng();
    let snr = draw_snr(range, &mut rng);
    draw_samples(h, c, snr, n, &mut rng)
}

/// Batch on a fresh i.i.d. Gaussian channel.
pub fn sample_iid_batch(
    n_r: usize,
    n_t: usize,
    c: &Constellation,
    range: (f64, f64),
    n: usize,
    stream: RngStream,
) -> Batch {
    let mut rng = stream.rng();
    let h = iid_matrix(n_r, n_t, &mut rng);
    let snr = draw_snr(range, &mut rng);
    draw_samples(&h, c, snr, n, &mut rng)
}

/// `(1/T) Σ_t ‖x̂_t − x‖²` averaged over the batch.
pub fn loss(traces: &[ForwardTrace], x: &[CVec]) -> Result<f64> {
    if traces.len() != x.len() || traces.is_empty() {
        return Err(contract(format!(
            "{} traces for {} symbol vectors",
            traces.len(),
            x.len()
        )));
    }
    let mut total = 0.0;
    for (tr, xi) in traces.iter().zip(x) {
        let t = tr.xhat.len();
        if t == 0 {
            return Err(contract("trace without layers"));
        }
        let mut s = 0.0;
        for xh in &tr.xhat {
            if xh.len() != xi.len() {
                return Err(contract("estimate and truth lengths differ"));
            }
            s += xh.iter().zip(xi).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        total += s / t as f64;
    }
    Ok(total / traces.len() as f64)
}

/// Gradient of the batch loss, shaped like the parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub values: ModelParams,
}

impl GradientSet {
    pub fn flat(&self) -> Vec<f64> {
        self.values.to_flat()
    }
}

/// Per-sample contributions that are combined once per batch.
struct Partial {
    loss: f64,
    grad: Vec<f64>,
    /// Per-layer sums of `∂L/∂a_t` and `∂L/∂c_t` (MMNet variants only).
    ga: Vec<f64>,
    gc: Vec<f64>,
}

impl Partial {
    fn zeros(len: usize, layers: usize) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; len],
            ga: vec![0.0; layers],
            gc: vec![0.0; layers],
        }
    }

    fn add(&mut self, o: &Partial) {
        self.loss += o.loss;
        for (a, b) in self.grad.iter_mut().zip(&o.grad) {
            *a += b;
        }
        for (a, b) in self.ga.iter_mut().zip(&o.ga) {
            *a += b;
        }
        for (a, b) in self.gc.iter_mut().zip(&o.gc) {
            *a += b;
        }
    }
}

fn numerical(layer: usize) -> Error {
    Error::Numerical {
        layer,
        iteration: None,
    }
}

fn finite_c(v: &[C64]) -> bool {
    v.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Reverse pass for one sample; `scale = 1/(T·B)`.
fn backward_sample(m: &BoundModel, x: &[C64], tr: &ForwardTrace, scale: f64, out: &mut Partial) -> Result<()> {
    let h = &m.h;
    let (nr, nt) = (h.rows(), h.cols());
    let layers = tr.layers();
    let ntf = nt as f64;
    let sigma2 = m.sigma2;
    let full_offset = layers * 2 * nt * nr;
    let mut gx = vec![ZERO; nt];
    for t in (0..layers).rev() {
        let xh = &tr.xhat[t];
        let mut sq = 0.0;
        for k in 0..nt {
            let e = xh[k] - x[k];
            sq += e.norm_sqr();
            gx[k] += e * (2.0 * scale);
        }
        out.loss += sq * scale;

        let cache = &tr.layers[t];
        let z = &tr.z[t];
        let tau = &tr.sigma2[t];
        let mut gz = vec![ZERO; nt];
        let mut gtau = vec![0.0; nt];
        for k in 0..nt {
            let (_, d) = denoise_with_grad(&m.c, z[k], tau[k]);
            gz[k] = C64::new(d.jac[0][0] * gx[k].re, d.jac[1][1] * gx[k].im);
            if cache.sigma2_raw[k] > SIGMA2_FLOOR {
                gtau[k] = gx[k].re * d.d_sigma2.re + gx[k].im * d.d_sigma2.im;
            }
        }

        let s = cache.a * cache.excess + cache.c * sigma2;
        let mut g_s = 0.0;
        match &m.params {
            ModelParams::Iid(p) => {
                let g: f64 = gtau.iter().sum();
                out.grad[layers + t] += g * s / ntf;
                g_s = g * p.theta2[t] / ntf;
            }
            ModelParams::OampNet(p) => {
                let g: f64 = gtau.iter().sum();
                out.grad[layers + t] += g * s / ntf;
                g_s = g * p.theta2[t] / ntf;
            }
            ModelParams::Full(p) => {
                for k in 0..nt {
                    out.grad[full_offset + t * nt + k] += gtau[k] * s / ntf;
                    g_s += gtau[k] * p.theta2[t][k] / ntf;
                }
            }
        }
        let g_a = g_s * cache.excess;
        let g_c = g_s * sigma2;
        let g_rn2 = if cache.excess > 0.0 { g_s * cache.a } else { 0.0 };

        let r = &tr.residual[t];
        let mut g_r: CVec = r.iter().map(|v| v * (2.0 * g_rn2)).collect();
        match &m.params {
            ModelParams::Iid(p) => {
                let q = h.adjoint_mul_vec(r);
                out.grad[t] += gz.iter().zip(&q).map(|(g, v)| (g.conj() * v).re).sum::<f64>();
                let hg = h.mul_vec(&gz);
                for i in 0..nr {
                    g_r[i] += hg[i] * p.theta1[t];
                }
                out.ga[t] += g_a;
                out.gc[t] += g_c;
            }
            ModelParams::Full(p) => {
                let th = &p.theta1[t];
                let base = t * 2 * nt * nr;
                for i in 0..nt {
                    let gi = gz[i];
                    let row = base + 2 * i * nr;
                    for j in 0..nr {
                        let g = gi * r[j].conj();
                        out.grad[row + 2 * j] += g.re;
                        out.grad[row + 2 * j + 1] += g.im;
                    }
                }
                let tg = th.adjoint_mul_vec(&gz);
                for i in 0..nr {
                    g_r[i] += tg[i];
                }
                out.ga[t] += g_a;
                out.gc[t] += g_c;
            }
            ModelParams::OampNet(p) => {
                let op = m.oamp.as_ref().expect("bound OAMPNet has its operator");
                let st = cache.stage.as_ref().expect("OAMPNet trace keeps its stage");
                let th = p.theta1[t];
                let lam = op.lambda();
                let tg = op.trace_g();
                let sum_e = st.sum_e;
                let sv: Vec<f64> = st.d.iter().map(|d| ntf * st.v2 * d / sum_e).collect();
                let kv: Vec<f64> = sv.iter().zip(lam).map(|(s, l)| s * l).collect();
                // θ₁ enters through the step and both variance coefficients
                let mut g_th = gz.iter().zip(&st.direction).map(|(g, v)| (g.conj() * v).re).sum::<f64>();
                let mut da = 0.0;
                let mut dc = 0.0;
                for i in 0..nt {
                    da += -2.0 * kv[i] * (1.0 - th * kv[i]);
                    dc += 2.0 * th * sv[i] * sv[i] * lam[i];
                }
                g_th += g_a * da / tg + g_c * dc / tg;
                out.grad[t] += g_th;

                let gdir: CVec = gz.iter().map(|g| g * th).collect();
                let gw = op.u().adjoint_mul_vec(&gdir);
                let mut gq = vec![ZERO; nt];
                let mut g_v2 = 0.0;
                let mut ld2 = 0.0;
                for i in 0..nt {
                    ld2 += lam[i] * st.d[i] * st.d[i];
                }
                for i in 0..nt {
                    let g_si = (gw[i].conj() * st.q[i]).re
                        + g_a * (-2.0 * th * (1.0 - th * kv[i]) * lam[i]) / tg
                        + g_c * (2.0 * th * th * sv[i] * lam[i]) / tg;
                    gq[i] = gw[i] * sv[i];
                    let ds = ntf
                        * (sigma2 * st.d[i] * st.d[i] / sum_e
                            - st.v2 * st.d[i] * sigma2 * ld2 / (sum_e * sum_e));
                    g_v2 += g_si * ds;
                }
                let back = op.uh_hh().adjoint_mul_vec(&gq);
                for i in 0..nr {
                    g_r[i] += back[i];
                }
                if !st.v2_clipped {
                    let k = 2.0 * g_v2 / tg;
                    for i in 0..nr {
                        g_r[i] += r[i] * k;
                    }
                }
            }
        }
        if t == 0 {
            break;
        }
        let hg = h.adjoint_mul_vec(&g_r);
        for k in 0..nt {
            gx[k] = gz[k] - hg[k];
        }
        if !finite_c(&gx) {
            return Err(numerical(t));
        }
    }
    if !out.grad.iter().all(|v| v.is_finite()) {
        return Err(numerical(0));
    }
    Ok(())
}

/// Loss and flat gradient of `params` on one batch.
pub fn loss_and_gradient(params: &ModelParams, batch: &Batch, c: &Constellation) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() || batch.x.len() != batch.y.len() {
        return Err(contract("empty or ragged batch"));
    }
    let model = BoundModel::new(params, &batch.h, batch.sigma2, c)?;
    let layers = params.layers();
    let len = params.len();
    let scale = 1.0 / (layers as f64 * batch.len() as f64);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let parts: Vec<Result<Partial>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Partial::zeros(len, layers);
            for &i in chunk {
                let tr = model.forward(&batch.y[i], true)?;
                backward_sample(&model, &batch.x[i], &tr, scale, &mut acc)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = Partial::zeros(len, layers);
    for p in parts {
        total.add(&p?);
    }
    let tg = model.trace_g;
    match params {
        ModelParams::Iid(p) => {
            for t in 0..layers {
                let th = p.theta1[t];
                let da = (-2.0 * tg + 2.0 * th * model.gram_norm2) / tg;
                let dc = 2.0 * th;
                total.grad[t] += total.ga[t] * da + total.gc[t] * dc;
            }
        }
        ModelParams::Full(p) => {
            let (nr, nt) = (batch.h.rows(), batch.h.cols());
            let hh = batch.h.conj_transpose();
            for t in 0..layers {
                let th = &p.theta1[t];
                // ∂‖I−ΘH‖² = −2(I−ΘH)H^H, ∂‖Θ‖² = 2Θ
                let mut b = th.matmul(&batch.h)?;
                for i in 0..nt {
                    let d = b.get(i, i);
                    b.set(i, i, d - 1.0);
                }
                // b = ΘH − I, so −2(I−ΘH)H^H = 2 b H^H
                let bh = b.matmul(&hh)?;
                let base = t * 2 * nt * nr;
                let ka = 2.0 * total.ga[t] / tg;
                let kc = 2.0 * total.gc[t] / tg;
                for i in 0..nt {
                    for j in 0..nr {
                        let g = bh.get(i, j) * ka + th.get(i, j) * kc;
                        let k = base + 2 * (i * nr + j);
                        total.grad[k] += g.re;
                        total.grad[k + 1] += g.im;
                    }
                }
            }
        }
        ModelParams::OampNet(_) => {}
    }
    Ok((total.loss, total.grad))
}

/// Exact gradient of the batch loss.
pub fn backward(params: &ModelParams, batch: &Batch, c: &Constellation) -> Result<GradientSet> {
    let (_, g) = loss_and_gradient(params, batch, c)?;
    let mut values = params.clone();
    values.set_flat(&g)?;
    Ok(GradientSet { values })
}

/// Loss of `params` on a batch without gradients.
pub fn batch_loss(params: &ModelParams, batch: &Batch, c: &Constellation) -> Result<f64> {
    let model = BoundModel::new(params, &batch.h, batch.sigma2, c)?;
    let traces = batch
        .y
        .iter()
        .map(|y| model.forward(y, true))
        .collect::<Result<Vec<_>>>()?;
    loss(&traces, &batch.x)
}

/// Analytic versus finite-difference gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradAudit {
    pub max_rel_error: f64,
    /// Coordinates large enough to be compared.
    pub checked: usize,
    pub total: usize,
}

/// Compares the analytic gradient with five-point central differences on
/// every coordinate whose gradient exceeds 1e-6 in magnitude.
pub fn gradient_audit(params: &ModelParams, batch: &Batch, c: &Constellation) -> Result<GradAudit> {
    let (_, g) = loss_and_gradient(params, batch, c)?;
    let base = params.to_flat();
    let mut q = params.clone();
    let mut at = |k: usize, v: f64| -> Result<f64> {
        let mut f = base.clone();
        f[k] = v;
        q.set_flat(&f)?;
        batch_loss(&q, batch, c)
    };
    let mut audit = GradAudit {
        max_rel_error: 0.0,
        checked: 0,
        total: base.len(),
    };
    for k in 0..base.len() {
        let h = 1e-4 * base[k].abs().max(1e-1);
        let x = base[k];
        let fd = (8.0 * (at(k, x + h)? - at(k, x - h)?) - (at(k, x + 2.0 * h)? - at(k, x - 2.0 * h)?)) / (12.0 * h);
        let scale = fd.abs().max(g[k].abs());
        if scale > 1e-6 {
            audit.checked += 1;
            audit.max_rel_error = audit.max_rel_error.max((fd - g[k]).abs() / scale);
        }
    }
    Ok(audit)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Held-out loss strictly decreased.
    pub improved: bool,
    /// `(iteration, held-out loss)` samples when requested.
    pub history: Vec<(usize, f64)>,
    pub iterations: usize,
}

fn with_iteration(e: Error, iteration: usize) -> Error {
    match e {
        Error::Numerical { layer, .. } => Error::Numerical {
            layer,
            iteration: Some(iteration),
        },
        other => other,
    }
}

/// Shared loop: `draw(i)` supplies the batch for iteration `i`.
fn train_loop(
    init: &ModelParams,
    c: &Constellation,
    cfg: &TrainConfig,
    held_out: &Batch,
    draw: impl Fn(usize) -> Batch,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len(), cfg.lr);
    let initial_loss = batch_loss(&params, held_out, c)?;
    let mut history = Vec::new();
    if cfg.history_every > 0 {
        history.push((0, initial_loss));
    }
    for i in 0..cfg.iterations {
        let batch = draw(i);
        let (_, g) = loss_and_gradient(&params, &batch, c).map_err(|e| with_iteration(e, i))?;
        adam_step(&mut flat, &g, &mut adam)?;
        params.set_flat(&flat)?;
        if cfg.history_every > 0 && (i + 1) % cfg.history_every == 0 {
            history.push((i + 1, batch_loss(&params, held_out, c).map_err(|e| with_iteration(e, i))?));
        }
    }
    let final_loss = batch_loss(&params, held_out, c)?;
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
        improved: final_loss < initial_loss,
        history,
        iterations: cfg.iterations,
    })
}

/// Trains any model kind on one fixed channel.
pub fn train_on_channel(h: &CMat, c: &Constellation, cfg: &TrainConfig, init: &ModelParams) -> Result<TrainOutcome> {
    cfg.validate()?;
    let held = sample_batch(h, c, cfg.snr_db_range, cfg.batch_size, cfg.rng.derive(&[HELD_OUT_STREAM]));
    train_loop(init, c, cfg, &held, |i| {
        sample_batch(h, c, cfg.snr_db_range, cfg.batch_size, cfg.rng.derive(&[i as u64]))
    })
}

/// Trains a channel-agnostic model (MMNet-iid or OAMPNet) with a fresh
/// i.i.d. Gaussian channel in every batch.
pub fn train_offline(n_r: usize, n_t: usize, c: &Constellation, cfg: &TrainConfig, init: &ModelParams) -> Result<TrainOutcome> {
    if matches!(init, ModelParams::Full(_)) {
        return Err(contract("offline training needs channel-agnostic parameters"));
    }
    if n_t == 0 || n_r < n_t {
        return Err(contract(format!("need N_r >= N_t >= 1, got {n_r}x{n_t}")));
    }
    cfg.validate()?;
    let held = sample_iid_batch(n_r, n_t, c, cfg.snr_db_range, cfg.batch_size, cfg.rng.derive(&[HELD_OUT_STREAM]));
    train_loop(init, c, cfg, &held, |i| {
        sample_iid_batch(n_r, n_t, c, cfg.snr_db_range, cfg.batch_size, cfg.rng.derive(&[i as u64]))
    })
}

pub fn train_offline_iid(n_r: usize, n_t: usize, c: &Constellation, cfg: &TrainConfig, layers: usize) -> Result<TrainOutcome> {
    train_offline(n_r, n_t, c, cfg, &ModelParams::Iid(crate::models::IidParams::new(layers)))
}

pub fn train_offline_oampnet(n_r: usize, n_t: usize, c: &Constellation, cfg: &TrainConfig, layers: usize) -> Result<TrainOutcome> {
    train_offline(n_r, n_t, c, cfg, &ModelParams::OampNet(crate::models::OampNetParams::new(layers)))
}

/// Parameters for every grid cell (index `t * F + f`) and the number of
/// gradient iterations spent on each time slice.
#[derive(Clone, Debug)]
pub struct OnlineOutcome {
    pub params: Vec<ModelParams>,
    pub iterations_per_slice: Vec<usize>,
}

impl OnlineOutcome {
    /// Mean gradient iterations per channel realization.
    pub fn iterations_per_channel(&self, f_count: usize) -> f64 {
        let total: usize = self.iterations_per_slice.iter().sum();
        total as f64 / (f_count * self.iterations_per_slice.len()) as f64
    }
}

/// Iterations the online loop spends on one time slice of `f_count` subcarriers.
pub fn online_iterations(f_count: usize, first_iters: usize, rest_iters: usize) -> usize {
    first_iters + f_count.saturating_sub(1) * rest_iters
}

/// Online MMNet training over a grid: for each time slice, `first_iters`
/// on the first subcarrier starting from the most recent state, then
/// `rest_iters` on each following subcarrier warm-started from its
/// predecessor. `cfg.iterations` is ignored.
pub fn online_train_grid(
    grid: &ChannelGrid,
    c: &Constellation,
    first_iters: usize,
    rest_iters: usize,
    cfg: &TrainConfig,
    layers: usize,
) -> Result<OnlineOutcome> {
    if grid.cells.is_empty() {
        return Err(contract("empty grid"));
    }
    let (fc, tc) = (grid.f_count, grid.t_count);
    let mut state = ModelParams::Full(init_full_params(&grid.cell(0, 0).h, layers));
    let mut params = vec![state.clone(); fc * tc];
    let mut per_slice = Vec::with_capacity(tc);
    for t in 0..tc {
        let mut spent = 0;
        for f in 0..fc {
            let iters = if f == 0 { first_iters } else { rest_iters };
            let mut sub = cfg.clone();
            sub.iterations = iters;
            sub.rng = cfg.rng.derive(&[t as u64, f as u64]);
            let out = train_on_channel(&grid.cell(f, t).h, c, &sub, &state)?;
            spent += out.iterations;
            state = out.params;
            params[t * fc + f] = state.clone();
        }
        per_slice.push(spent);
    }
    Ok(OnlineOutcome {
        params,
        iterations_per_slice: per_slice,
    })
}
