//! Learned detectors built on the iterative framework
//! `z_t = x̂_t + A_t(y − Hx̂_t)`, `x̂_{t+1} = η(z_t; σ_t²)`:
//!
//! * MMNet-iid: `A_t = θ₁[t]·H^H`, scalar variance scale `θ₂[t]`.
//! * MMNet: `A_t = Θ₁[t]` trained per channel, per-transmitter `θ₂[t]`.
//! * OAMPNet: `A_t = θ₁[t]·W_t` with `W_t` the de-biased OAMP estimator,
//!   scalar `θ₂[t]`.
//!
//! All three share the variance estimate
//! `σ_t²[i] = θ₂[i]/N_t · (‖I−A_tH‖²/‖H‖² · [‖r_t‖² − N_rσ²]₊ + ‖A_t‖²/‖H‖² · σ²)`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::channel::Reader;
use crate::constellation::Constellation;
use crate::denoiser::{denoise, SIGMA2_FLOOR};
use crate::detectors::{check_y_len, Detect, DetectionResult, OampLinear, OampStage};
use crate::error::{contract, Error, Result};
use crate::numerics::{norm2, CMat, CVec, C64};

pub const DEFAULT_LAYERS: usize = 10;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    MmnetIid,
    Mmnet,
    OampNet,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::MmnetIid => "mmnet-iid",
            ModelKind::Mmnet => "mmnet",
            ModelKind::OampNet => "oampnet",
        }
    }

    fn tag(&self) -> u8 {
        match self {
            ModelKind::MmnetIid => 0,
            ModelKind::Mmnet => 1,
            ModelKind::OampNet => 2,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmnet-iid" => Ok(ModelKind::MmnetIid),
            "mmnet" => Ok(ModelKind::Mmnet),
            "oampnet" => Ok(ModelKind::OampNet),
            _ => Err(contract(format!("unknown model '{s}'"))),
        }
    }
}

/// Two scalars per layer: step `θ₁[t]` and variance scale `θ₂[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct IidParams {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl IidParams {
    pub fn new(layers: usize) -> Self {
        Self {
            theta1: vec![1.0; layers],
            theta2: vec![1.0; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.theta1.len()
    }
}

/// Scalar OAMPNet parameters; `(1, 1)` in every layer is plain OAMP.
#[derive(Clone, Debug, PartialEq)]
pub struct OampNetParams {
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

impl OampNetParams {
    pub fn new(layers: usize) -> Self {
        Self {
            theta1: vec![1.0; layers],
            theta2: vec![1.0; layers],
        }
    }

    pub fn layers(&self) -> usize {
        self.theta1.len()
    }
}

/// Per-layer `N_t × N_r` complex matrix `Θ₁[t]` and length-`N_t` `θ₂[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FullParams {
    pub theta1: Vec<CMat>,
    pub theta2: Vec<Vec<f64>>,
}

impl FullParams {
    pub fn layers(&self) -> usize {
        self.theta1.len()
    }

    pub fn n_t(&self) -> usize {
        self.theta1[0].rows()
    }

    pub fn n_r(&self) -> usize {
        self.theta1[0].cols()
    }
}

/// `Θ₁[t] = (N_t / tr(H^H H)) · H^H`, `θ₂[t] = 1`.
pub fn init_full_params(h: &CMat, layers: usize) -> FullParams {
    let k = h.cols() as f64 / h.frobenius_norm2();
    let a = h.conj_transpose().scale(C64::new(k, 0.0));
    FullParams {
        theta1: vec![a; layers],
        theta2: vec![vec![1.0; h.cols()]; layers],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelParams {
    Iid(IidParams),
    Full(FullParams),
    OampNet(OampNetParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Iid(_) => ModelKind::MmnetIid,
            ModelParams::Full(_) => ModelKind::Mmnet,
            ModelParams::OampNet(_) => ModelKind::OampNet,
        }
    }

    pub fn layers(&self) -> usize {
        match self {
            ModelParams::Iid(p) => p.layers(),
            ModelParams::Full(p) => p.layers(),
            ModelParams::OampNet(p) => p.layers(),
        }
    }

    /// `(N_r, N_t)` for channel-specific parameters, `(0, 0)` otherwise.
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ModelParams::Full(p) => (p.n_r(), p.n_t()),
            _ => (0, 0),
        }
    }

    /// Number of real trainable values.
    pub fn len(&self) -> usize {
        match self {
            ModelParams::Full(p) => p.layers() * (2 * p.n_t() * p.n_r() + p.n_t()),
            other => 2 * other.layers(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real values in declaration order: every layer of the first field,
    /// then every layer of the second; complex entries as `(re, im)`
    /// row-major.
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ModelParams::Iid(IidParams { theta1, theta2 })
            | ModelParams::OampNet(OampNetParams { theta1, theta2 }) => {
                theta1.iter().chain(theta2).copied().collect()
            }
            ModelParams::Full(p) => {
                let mut out = Vec::with_capacity(self.len());
                for m in &p.theta1 {
                    for z in m.as_slice() {
                        out.push(z.re);
                        out.push(z.im);
                    }
                }
                for v in &p.theta2 {
                    out.extend_from_slice(v);
                }
                out
            }
        }
    }

    /// Overwrites the values from a vector laid out as in [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(contract(format!(
                "{} values for a parameter set of {}",
                flat.len(),
                self.len()
            )));
        }
        match self {
            ModelParams::Iid(IidParams { theta1, theta2 })
            | ModelParams::OampNet(OampNetParams { theta1, theta2 }) => {
                let t = theta1.len();
                theta1.copy_from_slice(&flat[..t]);
                theta2.copy_from_slice(&flat[t..]);
            }
            ModelParams::Full(p) => {
                let mut k = 0;
                for m in &mut p.theta1 {
                    for z in m.as_mut_slice() {
                        *z = C64::new(flat[k], flat[k + 1]);
                        k += 2;
                    }
                }
                for v in &mut p.theta2 {
                    let n = v.len();
                    v.copy_from_slice(&flat[k..k + n]);
                    k += n;
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

/// Per-layer intermediate quantities of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    /// Denoiser inputs `z_t`.
    pub z: Vec<CVec>,
    /// Denoiser outputs `x̂_{t+1}`.
    pub xhat: Vec<CVec>,
    /// Floored denoiser variances `σ_t²`.
    pub sigma2: Vec<Vec<f64>>,
    /// Residuals `r_t = y − Hx̂_t`.
    pub residual: Vec<CVec>,
    pub(crate) layers: Vec<LayerCache>,
}

impl ForwardTrace {
    pub fn layers(&self) -> usize {
        self.z.len()
    }

    /// Final estimate `x̂_T`.
    pub fn output(&self) -> &[C64] {
        self.xhat.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    /// `‖I − A H‖²/‖H‖²` and `‖A‖²/‖H‖²`.
    pub a: f64,
    pub c: f64,
    /// `[‖r‖² − N_rσ²]₊`.
    pub excess: f64,
    /// Variance before the floor.
    pub sigma2_raw: Vec<f64>,
    pub stage: Option<OampStage>,
}

/// Direct evaluation of the variance estimate for an explicit `A_t`.
/// A single `θ₂` value is broadcast over all transmitters.
pub fn noise_var_estimate(
    a_t: &CMat,
    h: &CMat,
    residual_norm2: f64,
    sigma2: f64,
    theta2: &[f64],
) -> Result<Vec<f64>> {
    let (nr, nt) = (h.rows(), h.cols());
    if a_t.rows() != nt || a_t.cols() != nr {
        return Err(contract(format!(
            "A_t is {}x{}, expected {nt}x{nr}",
            a_t.rows(),
            a_t.cols()
        )));
    }
    if theta2.len() != 1 && theta2.len() != nt {
        return Err(contract(format!("theta2 of length {} for N_t = {nt}", theta2.len())));
    }
    if !(sigma2 >= 0.0) {
        return Err(contract("noise variance must be >= 0"));
    }
    let hn = h.frobenius_norm2();
    if !(hn > 0.0) {
        return Err(contract("channel with zero Frobenius norm"));
    }
    let mut b = a_t.matmul(h)?;
    for i in 0..nt {
        let d = b.get(i, i);
        b.set(i, i, d - 1.0);
    }
    let s = (b.frobenius_norm2() / hn) * (residual_norm2 - nr as f64 * sigma2).max(0.0)
        + (a_t.frobenius_norm2() / hn) * sigma2;
    Ok((0..nt)
        .map(|i| theta2[if theta2.len() == 1 { 0 } else { i }] / nt as f64 * s)
        .collect())
}

/// `‖I − Θ H‖²` for `Θ` of shape `N_t × N_r`.
pub(crate) fn identity_gap_norm2(theta: &CMat, h: &CMat) -> f64 {
    let nt = h.cols();
    let mut acc = 0.0;
    for i in 0..nt {
        let row = theta.row(i);
        for j in 0..nt {
            let mut s = ZERO;
            for (k, a) in row.iter().enumerate() {
                s += a * h.get(k, j);
            }
            if i == j {
                s -= 1.0;
            }
            acc += s.norm_sqr();
        }
    }
    acc
}

/// A parameter set bound to one channel and noise level.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub(crate) params: ModelParams,
    pub(crate) h: CMat,
    pub(crate) sigma2: f64,
    pub(crate) c: Constellation,
    pub(crate) trace_g: f64,
    /// `‖H^H H‖_F²`, used by MMNet-iid.
    pub(crate) gram_norm2: f64,
    /// Per-layer `(a, c)` when they do not depend on the residual.
    pub(crate) coeffs: Vec<(f64, f64)>,
    pub(crate) oamp: Option<OampLinear>,
}

impl BoundModel {
    pub fn new(params: &ModelParams, h: &CMat, sigma2: f64, c: &Constellation) -> Result<Self> {
        let (nr, nt) = (h.rows(), h.cols());
        if params.layers() == 0 {
            return Err(contract("model needs at least one layer"));
        }
        if !params.is_finite() {
            return Err(contract("non-finite parameters"));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(contract(format!("noise variance {sigma2} must be finite and >= 0")));
        }
        let trace_g = h.frobenius_norm2();
        if !(trace_g > 0.0) {
            return Err(contract("channel with zero Frobenius norm"));
        }
        let mut gram_norm2 = 0.0;
        let mut oamp = None;
        let coeffs = match params {
            ModelParams::Iid(p) => {
                gram_norm2 = h.gram().frobenius_norm2();
                p.theta1
                    .iter()
                    .map(|&th| {
                        let a = (nt as f64 - 2.0 * th * trace_g + th * th * gram_norm2) / trace_g;
                        (a, th * th)
                    })
                    .collect()
            }
            ModelParams::Full(p) => {
                if p.n_t() != nt || p.n_r() != nr {
                    return Err(contract(format!(
                        "parameters for {}x{} applied to a {nr}x{nt} channel",
                        p.n_r(),
                        p.n_t()
                    )));
                }
                if p.theta2.iter().any(|v| v.len() != nt) {
                    return Err(contract("theta2 length differs from N_t"));
                }
                p.theta1
                    .iter()
                    .map(|m| {
                        (
                            identity_gap_norm2(m, h) / trace_g,
                            m.frobenius_norm2() / trace_g,
                        )
                    })
                    .collect()
            }
            ModelParams::OampNet(_) => {
                if !(sigma2 > 0.0) {
                    return Err(contract("OAMPNet needs a positive noise variance"));
                }
                oamp = Some(OampLinear::new(h)?);
                Vec::new()
            }
        };
        Ok(Self {
            params: params.clone(),
            h: h.clone(),
            sigma2,
            c: c.clone(),
            trace_g,
            gram_norm2,
            coeffs,
            oamp,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn h(&self) -> &CMat {
        &self.h
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// Runs every layer on `y`. With `keep` false only the final estimate
    /// is retained in the trace.
    pub fn forward(&self, y: &[C64], keep: bool) -> Result<ForwardTrace> {
        check_y_len(&self.h, y)?;
        let (nr, nt) = (self.h.rows(), self.h.cols());
        let layers = self.params.layers();
        let mut xhat = vec![ZERO; nt];
        let mut r = y.to_vec();
        let mut hx = vec![ZERO; nr];
        let mut lin = vec![ZERO; nt];
        let mut trace = ForwardTrace::default();
        for t in 0..layers {
            let mut stage = None;
            let (a, c) = match &self.params {
                ModelParams::Iid(p) => {
                    self.h.adjoint_mul_vec_into(&r, &mut lin);
                    let th = p.theta1[t];
                    lin.iter_mut().for_each(|v| *v *= th);
                    self.coeffs[t]
                }
                ModelParams::Full(p) => {
                    p.theta1[t].mul_vec_into(&r, &mut lin);
                    self.coeffs[t]
                }
                ModelParams::OampNet(p) => {
                    let op = self.oamp.as_ref().expect("bound OAMPNet has its operator");
                    let st = op.stage(&r, self.sigma2)?;
                    let th = p.theta1[t];
                    for (l, d) in lin.iter_mut().zip(&st.direction) {
                        *l = d * th;
                    }
                    let ac = op.variance_coefficients(&st, th);
                    stage = Some(st);
                    ac
                }
            };
            let z: CVec = xhat.iter().zip(&lin).map(|(x, l)| x + l).collect();
            let r_norm2 = norm2(&r);
            let excess = (r_norm2 - nr as f64 * self.sigma2).max(0.0);
            let s = a * excess + c * self.sigma2;
            let raw: Vec<f64> = match &self.params {
                ModelParams::Iid(p) => vec![p.theta2[t] / nt as f64 * s; nt],
                ModelParams::OampNet(p) => vec![p.theta2[t] / nt as f64 * s; nt],
                ModelParams::Full(p) => p.theta2[t].iter().map(|th| th / nt as f64 * s).collect(),
            };
            if !z.iter().all(|v| v.re.is_finite() && v.im.is_finite())
                || !raw.iter().all(|v| v.is_finite())
            {
                return Err(Error::Numerical {
                    layer: t,
                    iteration: None,
                });
            }
            let tau: Vec<f64> = raw.iter().map(|v| v.max(SIGMA2_FLOOR)).collect();
            for k in 0..nt {
                xhat[k] = denoise(&self.c, z[k], tau[k]);
            }
            if keep {
                trace.residual.push(r.clone());
            }
            self.h.mul_vec_into(&xhat, &mut hx);
            for i in 0..nr {
                r[i] = y[i] - hx[i];
            }
            if keep {
                trace.z.push(z);
                trace.xhat.push(xhat.clone());
                trace.sigma2.push(tau);
                trace.layers.push(LayerCache {
                    a,
                    c,
                    excess,
                    sigma2_raw: raw,
                    stage,
                });
            } else if t + 1 == layers {
                trace.xhat.push(xhat.clone());
            }
        }
        Ok(trace)
    }
}

impl Detect for BoundModel {
    fn detect(&self, y: &[C64]) -> Result<DetectionResult> {
        let tr = self.forward(y, false)?;
        Ok(DetectionResult::from_soft(&self.h, y, &self.c, tr.output().to_vec()))
    }
}

fn forward_with(params: ModelParams, h: &CMat, y: &[C64], sigma2: f64, c: &Constellation) -> Result<ForwardTrace> {
    BoundModel::new(&params, h, sigma2, c)?.forward(y, true)
}

pub fn mmnet_iid_forward(h: &CMat, y: &[C64], sigma2: f64, c: &Constellation, params: &IidParams) -> Result<ForwardTrace> {
    forward_with(ModelParams::Iid(params.clone()), h, y, sigma2, c)
}

pub fn mmnet_forward(h: &CMat, y: &[C64], sigma2: f64, c: &Constellation, params: &FullParams) -> Result<ForwardTrace> {
    forward_with(ModelParams::Full(params.clone()), h, y, sigma2, c)
}

pub fn oampnet_forward(h: &CMat, y: &[C64], sigma2: f64, c: &Constellation, params: &OampNetParams) -> Result<ForwardTrace> {
    forward_with(ModelParams::OampNet(params.clone()), h, y, sigma2, c)
}

pub const PARAM_MAGIC: &[u8; 6] = b"MPARM1";
pub const PARAM_VERSION: u16 = 1;

/// `MPARM1` blob: magic, u16 version, u8 kind, u32 T, u32 N_r, u32 N_t,
/// then the values of [`ModelParams::to_flat`] as little-endian f64.
pub fn encode_params(p: &ModelParams) -> Vec<u8> {
    let (nr, nt) = p.dims();
    let flat = p.to_flat();
    let mut out = Vec::with_capacity(6 + 2 + 1 + 12 + 8 * flat.len());
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    out.push(p.kind().tag());
    for v in [p.layers(), nr, nt] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes);
    if r.take(6, "magic")? != PARAM_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected MPARM1".into(),
        });
    }
    let at = r.offset();
    let version = r.u16("version")?;
    if version != PARAM_VERSION {
        return Err(Error::Format {
            offset: at,
            reason: format!("unsupported version {version}"),
        });
    }
    let at = r.offset();
    let kind = r.u8("kind")?;
    let t_at = r.offset();
    let layers = r.u32("T")? as usize;
    let nr = r.u32("N_r")? as usize;
    let nt = r.u32("N_t")? as usize;
    if layers == 0 {
        return Err(Error::Format {
            offset: t_at,
            reason: "zero layers".into(),
        });
    }
    let mut p = match kind {
        0 => ModelParams::Iid(IidParams::new(layers)),
        2 => ModelParams::OampNet(OampNetParams::new(layers)),
        1 => {
            if nt == 0 || nr < nt {
                return Err(Error::Format {
                    offset: t_at + 4,
                    reason: format!("invalid dimensions {nr}x{nt}"),
                });
            }
            ModelParams::Full(FullParams {
                theta1: vec![CMat::zeros(nt, nr); layers],
                theta2: vec![vec![0.0; nt]; layers],
            })
        }
        k => {
            return Err(Error::Format {
                offset: at,
                reason: format!("unknown model kind {k}"),
            })
        }
    };
    let n = p.len();
    if (bytes.len() - r.offset() as usize) < 8 * n {
        let have = (bytes.len() - r.offset() as usize) / 8 * 8;
        return Err(Error::Format {
            offset: r.offset() + have as u64,
            reason: format!("truncated: {n} values expected"),
        });
    }
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        flat.push(r.f64("value")?);
    }
    r.finish()?;
    p.set_flat(&flat)?;
    Ok(p)
}

pub fn save_params(p: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_params(p))?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_params(&fs::read(path)?)
}
