//! Error dynamics of unrolled detectors, Anderson–Darling normality tests,
//! condition numbers and per-signal multiplication counts.

use std::fmt::Write as _;

use statrs::function::erf::erfc;

use crate::channel::apply_channel;
use crate::constellation::Constellation;
use crate::detectors::DetectorKind;
use crate::error::{contract, Error, Result};
use crate::models::{BoundModel, ModelParams};
use crate::numerics::{svd_values, CMat, RngStream, C64};

/// 5% critical value of the composite-normality Anderson–Darling test.
pub const ANDERSON_THRESHOLD: f64 = 0.786;

/// Per-layer error norms averaged over samples, with the linear-stage
/// errors kept per transmitter for normality testing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerTrace {
    /// Mean `‖z_t − x‖` per layer.
    pub e_lin_norm: Vec<f64>,
    /// Mean `‖x̂_{t+1} − x‖` per layer.
    pub e_den_norm: Vec<f64>,
    /// `e_lin[t][k]` holds the real parts then the imaginary parts of
    /// transmitter `k`'s linear-stage error at layer `t`.
    pub e_lin: Vec<Vec<Vec<f64>>>,
}

impl LayerTrace {
    pub fn layers(&self) -> usize {
        self.e_lin_norm.len()
    }

    /// `layer,stage,metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,stage,metric,value\n");
        for t in 0..self.layers() {
            let _ = writeln!(s, "{t},lin,mean_error_norm,{}", self.e_lin_norm[t]);
            let _ = writeln!(s, "{t},den,mean_error_norm,{}", self.e_den_norm[t]);
        }
        s
    }
}

/// Runs the bound model on `n_samples` fresh `(x, n)` draws and records the
/// error after each linear and denoising stage.
pub fn layer_error_trace(
    params: &ModelParams,
    h: &CMat,
    sigma2: f64,
    c: &Constellation,
    n_samples: usize,
    stream: RngStream,
) -> Result<LayerTrace> {
    if n_samples == 0 {
        return Err(contract("n_samples must be >= 1"));
    }
    let model = BoundModel::new(params, h, sigma2, c)?;
    let layers = params.layers();
    let nt = h.cols();
    let mut out = LayerTrace {
        e_lin_norm: vec![0.0; layers],
        e_den_norm: vec![0.0; layers],
        e_lin: vec![vec![Vec::with_capacity(2 * n_samples); nt]; layers],
    };
    let mut ims = vec![vec![Vec::with_capacity(n_samples); nt]; layers];
    let mut rng = stream.rng();
    for _ in 0..n_samples {
        let x = c.to_points(&c.sample_symbols(nt, &mut rng));
        let y = apply_channel(h, &x, sigma2, &mut rng)?;
        let tr = model.forward(&y, true)?;
        for t in 0..layers {
            let mut lin = 0.0;
            let mut den = 0.0;
            for k in 0..nt {
                let e: C64 = tr.z[t][k] - x[k];
                lin += e.norm_sqr();
                den += (tr.xhat[t][k] - x[k]).norm_sqr();
                out.e_lin[t][k].push(e.re);
                ims[t][k].push(e.im);
            }
            out.e_lin_norm[t] += lin.sqrt();
            out.e_den_norm[t] += den.sqrt();
        }
    }
    let n = n_samples as f64;
    for t in 0..layers {
        out.e_lin_norm[t] /= n;
        out.e_den_norm[t] /= n;
        for k in 0..nt {
            let im = std::mem::take(&mut ims[t][k]);
            out.e_lin[t][k].extend(im);
        }
    }
    Ok(out)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn ln_phi(w: f64) -> f64 {
    (0.5 * erfc(-w / std::f64::consts::SQRT_2)).max(f64::MIN_POSITIVE).ln()
}

/// Anderson–Darling statistic with estimated mean and variance, including
/// the small-sample factor `1 + 4/n − 25/n²`.
pub fn anderson_statistic(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 8 {
        return Err(contract(format!("anderson test needs >= 8 samples, got {n}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(contract("non-finite sample"));
    }
    let (m, sd) = mean_std(samples);
    if !(sd > 0.0) || sd <= 1e-14 * m.abs() {
        return Err(Error::Degenerate("zero sample variance".into()));
    }
    let mut w: Vec<f64> = samples.iter().map(|v| (v - m) / sd).collect();
    w.sort_by(|a, b| a.total_cmp(b));
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        // 1 − Φ(w) = Φ(−w) keeps the upper tail accurate
        s += (2 * i + 1) as f64 * (ln_phi(w[i]) + ln_phi(-w[n - 1 - i]));
    }
    let a2 = -nf - s / nf;
    Ok((a2 * (1.0 + 4.0 / nf - 25.0 / (nf * nf))).max(0.0))
}

/// Standardizes the real and imaginary halves separately, then pools them.
fn pooled_standardized(e: &[f64]) -> Vec<f64> {
    let half = e.len() / 2;
    let mut out = Vec::with_capacity(e.len());
    for part in [&e[..half], &e[half..]] {
        let (m, sd) = mean_std(part);
        let sd = if sd > 0.0 { sd } else { 1.0 };
        out.extend(part.iter().map(|v| (v - m) / sd));
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AndersonReport {
    /// `statistic[t][k]` for layer `t`, transmitter `k`.
    pub statistic: Vec<Vec<f64>>,
    pub pass_5pct: Vec<Vec<bool>>,
}

impl AndersonReport {
    pub fn from_trace(trace: &LayerTrace) -> Result<Self> {
        let mut rep = Self::default();
        for layer in &trace.e_lin {
            let mut stats = Vec::with_capacity(layer.len());
            for e in layer {
                stats.push(anderson_statistic(&pooled_standardized(e))?);
            }
            rep.pass_5pct.push(stats.iter().map(|s| *s < ANDERSON_THRESHOLD).collect());
            rep.statistic.push(stats);
        }
        Ok(rep)
    }

    /// Fraction of transmitters passing, per layer.
    pub fn pass_fraction(&self) -> Vec<f64> {
        self.pass_5pct
            .iter()
            .map(|l| l.iter().filter(|p| **p).count() as f64 / l.len().max(1) as f64)
            .collect()
    }

    /// `layer,tx,anderson,pass` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,tx,anderson,pass\n");
        for (t, layer) in self.statistic.iter().enumerate() {
            for (k, v) in layer.iter().enumerate() {
                let _ = writeln!(s, "{t},{k},{v},{}", self.pass_5pct[t][k] as u8);
            }
        }
        s
    }
}

/// Per-layer fraction of transmitters whose linear-stage error passes the
/// 5% Anderson–Darling test.
pub fn gaussian_fraction(
    params: &ModelParams,
    h: &CMat,
    sigma2: f64,
    c: &Constellation,
    n_samples: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if n_samples < 100 {
        return Err(contract(format!("gaussian_fraction needs >= 100 samples, got {n_samples}")));
    }
    let tr = layer_error_trace(params, h, sigma2, c, n_samples, stream)?;
    Ok(AndersonReport::from_trace(&tr)?.pass_fraction())
}

/// Ratio of the largest to the smallest singular value.
pub fn condition_number(h: &CMat) -> Result<f64> {
    let s = svd_values(h);
    let (Some(&hi), Some(&lo)) = (s.first(), s.last()) else {
        return Err(contract("empty matrix"));
    };
    let tol = hi * f64::EPSILON * h.rows().max(h.cols()) as f64;
    if !(lo > tol) {
        return Err(Error::Singular { pivot: lo });
    }
    Ok(hi / lo)
}

/// Assumptions behind [`multiplication_count`]. Counts are complex
/// multiplications; one-time work per coherence interval is divided by
/// `amortization`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountModel {
    /// Signals detected per channel coherence interval.
    pub amortization: f64,
    /// Online training iterations per channel realization.
    pub train_iters: f64,
    pub batch_size: f64,
    /// Cost of one training sample per iteration, in forward passes.
    pub train_pass_factor: f64,
    pub order: usize,
}

impl Default for CountModel {
    fn default() -> Self {
        Self {
            amortization: 100.0,
            train_iters: (1000.0 + 1023.0 * 3.0) / 1024.0,
            batch_size: 500.0,
            train_pass_factor: 1.0,
            order: 4,
        }
    }
}

impl CountModel {
    /// Per-transmitter denoiser cost: weights and weighted sums on both axes.
    fn denoiser(&self) -> f64 {
        4.0 * (self.order as f64).sqrt()
    }
}

/// Complex multiplications per detected signal.
///
/// Linear detectors pay Gram (`N_t²N_r`), inversion (`N_t³`) and operator
/// (`N_t²N_r`) once per channel plus one `N_tN_r` product per signal.
/// V-BLAST repeats the one-time work for each shrinking stage. AMP and the
/// MMNet variants pay two matrix-vector products and the denoiser per
/// layer; OAMP/OAMPNet additionally form and invert an `N_r × N_r` LMMSE
/// matrix per layer because `v_t²` depends on the signal. MMNet adds its
/// online training, `train_iters · batch_size` forward-pass equivalents
/// scaled by `train_pass_factor`, divided over the coherence interval.
/// ML enumerates `M^{N_t}` candidates.
pub fn multiplication_count(kind: DetectorKind, n_r: usize, n_t: usize, layers: usize, m: &CountModel) -> f64 {
    let (r, t, l) = (n_r as f64, n_t as f64, layers as f64);
    let k = m.amortization.max(1.0);
    let linear_setup = 2.0 * t * t * r + t * t * t;
    let layer = 2.0 * r * t + m.denoiser() * t;
    match kind {
        DetectorKind::Mf => r * t,
        DetectorKind::Zf | DetectorKind::Mmse => linear_setup / k + r * t,
        DetectorKind::Vblast => {
            let setup: f64 = (1..=n_t)
                .map(|s| {
                    let s = s as f64;
                    2.0 * s * s * r + s * s * s
                })
                .sum();
            setup / k + 2.0 * r * t
        }
        DetectorKind::Amp | DetectorKind::MmnetIid => l * layer,
        DetectorKind::Oamp | DetectorKind::OampNet => l * (r * r * r + t * r * r + layer),
        DetectorKind::Mmnet => {
            let forward = l * layer;
            forward * (1.0 + m.train_pass_factor * m.train_iters * m.batch_size / k)
        }
        DetectorKind::Ml => (m.order as f64).powf(t) * r * t,
    }
}
