//! Non-learned detectors: linear (ZF, matched filter, MMSE), V-BLAST
//! successive cancellation, AMP, OAMP and exhaustive ML.
//!
//! Every detector has a one-shot function (`zf_detect`, ...) and a prepared
//! form implementing [`Detect`] that factors the channel once and is then
//! applied to many observations.

use std::fmt;
use std::str::FromStr;

use crate::constellation::{Constellation, SymbolVector};
use crate::denoiser::{denoise, denoise_with_grad, SIGMA2_FLOOR};
use crate::error::{contract, Error, Result};
use crate::numerics::{hermitian_eigen, norm2, pseudo_inverse, CMat, CVec, Cholesky, C64};

pub const AMP_ITERS: usize = 50;
pub const OAMP_ITERS: usize = 10;
/// Largest search space `M^N_t` the exhaustive detector accepts by default.
pub const ML_BUDGET: u64 = 1 << 20;
/// Iterates are abandoned once `‖z_t‖` exceeds this multiple of `√N_t`.
pub const DIVERGENCE_FACTOR: f64 = 1e3;
/// Floor on the OAMP signal-variance estimate `v_t²`.
pub const V2_FLOOR: f64 = 1e-9;

const ZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug)]
pub struct DetectorProblem<'a> {
    pub y: &'a [C64],
    pub h: &'a CMat,
    pub sigma2: f64,
}

impl<'a> DetectorProblem<'a> {
    pub fn new(y: &'a [C64], h: &'a CMat, sigma2: f64) -> Result<Self> {
        if y.len() != h.rows() {
            return Err(contract(format!(
                "observation of length {} for {} receive antennas",
                y.len(),
                h.rows()
            )));
        }
        if !(sigma2 >= 0.0) || !sigma2.is_finite() {
            return Err(contract(format!("noise variance {sigma2} must be finite and >= 0")));
        }
        Ok(Self { y, h, sigma2 })
    }

    pub fn n_r(&self) -> usize {
        self.h.rows()
    }

    pub fn n_t(&self) -> usize {
        self.h.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectionResult {
    pub symbols: SymbolVector,
    /// Estimate before the hard decision.
    pub soft: CVec,
    /// `‖y − H·x(symbols)‖²`.
    pub residual_norm2: f64,
}

impl DetectionResult {
    pub fn from_symbols(h: &CMat, y: &[C64], c: &Constellation, symbols: SymbolVector, soft: CVec) -> Self {
        let residual_norm2 = residual_norm2(h, y, &c.to_points(&symbols));
        Self {
            symbols,
            soft,
            residual_norm2,
        }
    }

    pub fn from_soft(h: &CMat, y: &[C64], c: &Constellation, soft: CVec) -> Self {
        let symbols = c.hard_decision(&soft);
        Self::from_symbols(h, y, c, symbols, soft)
    }
}

/// `‖y − Hx‖²`.
pub fn residual_norm2(h: &CMat, y: &[C64], x: &[C64]) -> f64 {
    let hx = h.mul_vec(x);
    y.iter().zip(&hx).map(|(a, b)| (a - b).norm_sqr()).sum()
}

/// Per-iteration quantities of an iterative detector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationTrace {
    /// Denoiser inputs `z_t`.
    pub z: Vec<CVec>,
    /// Denoiser outputs `x̂_{t+1}`.
    pub xhat: Vec<CVec>,
    /// Denoiser input variances `σ_t²`.
    pub sigma2: Vec<f64>,
    /// `‖y − H x̂_{t+1}‖²` after each iteration.
    pub residual_norm2: Vec<f64>,
}

/// A detector bound to one channel and noise level.
pub trait Detect: Send + Sync {
    fn detect(&self, y: &[C64]) -> Result<DetectionResult>;
}

pub(crate) fn check_y_len(h: &CMat, y: &[C64]) -> Result<()> {
    if y.len() != h.rows() {
        return Err(contract(format!(
            "observation of length {} for {} receive antennas",
            y.len(),
            h.rows()
        )));
    }
    Ok(())
}

/// `soft = A y` followed by a hard decision.
#[derive(Clone, Debug)]
pub struct LinearDetector {
    a: CMat,
    h: CMat,
    c: Constellation,
}

impl LinearDetector {
    pub fn zf(h: &CMat, c: &Constellation) -> Result<Self> {
        Ok(Self {
            a: pseudo_inverse(h)?,
            h: h.clone(),
            c: c.clone(),
        })
    }

    pub fn matched_filter(h: &CMat, c: &Constellation) -> Self {
        Self {
            a: h.conj_transpose(),
            h: h.clone(),
            c: c.clone(),
        }
    }

    pub fn mmse(h: &CMat, sigma2: f64, c: &Constellation) -> Result<Self> {
        let mut g = h.gram();
        for i in 0..g.rows() {
            let d = g.get(i, i);
            g.set(i, i, d + sigma2);
        }
        let ch = Cholesky::new(&g)?;
        Ok(Self {
            a: ch.solve_mat(&h.conj_transpose()),
            h: h.clone(),
            c: c.clone(),
        })
    }

    pub fn operator(&self) -> &CMat {
        &self.a
    }
}

impl Detect for LinearDetector {
    fn detect(&self, y: &[C64]) -> Result<DetectionResult> {
        check_y_len(&self.h, y)?;
        Ok(DetectionResult::from_soft(&self.h, y, &self.c, self.a.mul_vec(y)))
    }
}

pub fn zf_detect(p: &DetectorProblem, c: &Constellation) -> Result<DetectionResult> {
    LinearDetector::zf(p.h, c)?.detect(p.y)
}

pub fn matched_filter_detect(p: &DetectorProblem, c: &Constellation) -> Result<DetectionResult> {
    LinearDetector::matched_filter(p.h, c).detect(p.y)
}

pub fn mmse_detect(p: &DetectorProblem, c: &Constellation) -> Result<DetectionResult> {
    LinearDetector::mmse(p.h, p.sigma2, c)?.detect(p.y)
}

#[derive(Clone, Debug)]
struct BlastStage {
    tx: usize,
    /// Row of the pseudo-inverse of the remaining columns.
    filter: CVec,
    column: CVec,
}

/// Ordered successive interference cancellation. The detection order and
/// nulling vectors depend only on `H` and are computed up front.
#[derive(Clone, Debug)]
pub struct VblastDetector {
    stages: Vec<BlastStage>,
    h: CMat,
    c: Constellation,
}

impl VblastDetector {
    pub fn new(h: &CMat, c: &Constellation) -> Result<Self> {
        let mut remaining: Vec<usize> = (0..h.cols()).collect();
        let mut sub = h.clone();
        let mut stages = Vec::with_capacity(h.cols());
        while !remaining.is_empty() {
            let pinv = pseudo_inverse(&sub)?;
            let mut best = 0;
            let mut best_norm = f64::INFINITY;
            for k in 0..remaining.len() {
                let n = norm2(pinv.row(k));
                if n < best_norm {
                    best = k;
                    best_norm = n;
                }
            }
            let tx = remaining[best];
            stages.push(BlastStage {
                tx,
                filter: pinv.row(best).to_vec(),
                column: h.column(tx),
            });
            remaining.remove(best);
            sub = sub.without_column(best);
        }
        Ok(Self {
            stages,
            h: h.clone(),
            c: c.clone(),
        })
    }

    /// Transmitter indices in detection order.
    pub fn order(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.tx).collect()
    }
}

impl Detect for VblastDetector {
    fn detect(&self, y: &[C64]) -> Result<DetectionResult> {
        check_y_len(&self.h, y)?;
        let mut y = y.to_vec();
        let y0 = y.clone();
        let mut soft = vec![ZERO; self.h.cols()];
        let mut sym = vec![0usize; self.h.cols()];
        for st in &self.stages {
            let s: C64 = st.filter.iter().zip(&y).map(|(a, b)| a * b).sum();
            let k = self.c.nearest(s);
            soft[st.tx] = s;
            sym[st.tx] = k;
            let x = self.c.point(k);
            for (v, hc) in y.iter_mut().zip(&st.column) {
                *v -= hc * x;
            }
        }
        Ok(DetectionResult::from_symbols(&self.h, &y0, &self.c, SymbolVector(sym), soft))
    }
}

pub fn vblast_detect(p: &DetectorProblem, c: &Constellation) -> Result<DetectionResult> {
    VblastDetector::new(p.h, c)?.detect(p.y)
}

fn guard(z: &[C64], iteration: usize) -> Result<()> {
    let limit = DIVERGENCE_FACTOR * DIVERGENCE_FACTOR * z.len() as f64;
    let n = norm2(z);
    if !n.is_finite() || n > limit {
        return Err(Error::Divergence { iteration });
    }
    Ok(())
}

/// Approximate message passing with the empirical scalar schedule
/// `σ_t² = ‖y − Hx̂_t‖²/N_r` and Onsager coefficient
/// `α_t = (N_t/N_r)·⟨η'⟩_{t−1}`.
#[derive(Clone, Debug)]
pub struct AmpDetector {
    h: CMat,
    c: Constellation,
    iters: usize,
}

impl AmpDetector {
    pub fn new(h: &CMat, c: &Constellation, iters: usize) -> Self {
        Self {
            h: h.clone(),
            c: c.clone(),
            iters,
        }
    }

    pub fn run(&self, y: &[C64], keep_trace: bool) -> Result<(DetectionResult, IterationTrace)> {
        check_y_len(&self.h, y)?;
        let (nr, nt) = (self.h.rows(), self.h.cols());
        let ratio = nt as f64 / nr as f64;
        let mut xhat = vec![ZERO; nt];
        let mut b = vec![ZERO; nt];
        let mut g_prev = vec![ZERO; nt];
        let mut g = vec![ZERO; nt];
        let mut r = y.to_vec();
        let mut hx = vec![ZERO; nr];
        let mut z = vec![ZERO; nt];
        let mut div_prev = 0.0;
        let mut trace = IterationTrace::default();
        for t in 0..self.iters {
            self.h.adjoint_mul_vec_into(&r, &mut g);
            if t > 0 {
                let alpha = ratio * div_prev;
                for k in 0..nt {
                    b[k] = (g_prev[k] + b[k]) * alpha;
                }
            }
            for k in 0..nt {
                z[k] = xhat[k] + g[k] + b[k];
            }
            guard(&z, t)?;
            let s2 = (norm2(&r) / nr as f64).max(SIGMA2_FLOOR);
            let mut div = 0.0;
            for k in 0..nt {
                let (v, d) = denoise_with_grad(&self.c, z[k], s2);
                xhat[k] = v;
                div += d.half_trace();
            }
            div_prev = div / nt as f64;
            std::mem::swap(&mut g, &mut g_prev);
            self.h.mul_vec_into(&xhat, &mut hx);
            for i in 0..nr {
                r[i] = y[i] - hx[i];
            }
            if keep_trace {
                trace.z.push(z.clone());
                trace.xhat.push(xhat.clone());
                trace.sigma2.push(s2);
                trace.residual_norm2.push(norm2(&r));
            }
        }
        Ok((DetectionResult::from_soft(&self.h, y, &self.c, xhat), trace))
    }
}

impl Detect for AmpDetector {
    fn detect(&self, y: &[C64]) -> Result<DetectionResult> {
        Ok(self.run(y, false)?.0)
    }
}

pub fn amp_detect(
    p: &DetectorProblem,
    c: &Constellation,
    iters: usize,
) -> Result<(DetectionResult, IterationTrace)> {
    AmpDetector::new(p.h, c, iters).run(p.y, true)
}

/// The de-biased OAMP linear estimator for one channel, evaluated through
/// the eigendecomposition `H^H H = U Λ U^H`:
///
/// `W r = γ v² U diag(d) U^H H^H r`, `d_i = 1/(v²λ_i + σ²)`,
/// `γ = N_t / Σ v²λ_i d_i`, so that `tr(W H) = N_t`.
#[derive(Clone, Debug)]
pub struct OampLinear {
    h: CMat,
    /// `U^H H^H`, mapping a residual to eigen-coordinates.
    uh_hh: CMat,
    u: CMat,
    lambda: Vec<f64>,
    trace_g: f64,
}

/// One evaluation of the OAMP linear stage.
#[derive(Clone, Debug)]
pub struct OampStage {
    /// `‖r‖²`.
    pub r_norm2: f64,
    pub v2: f64,
    /// Whether `v²` sits at its floor (its derivative is then zero).
    pub v2_clipped: bool,
    /// `e_i = v²λ_i d_i`.
    pub e: Vec<f64>,
    pub d: Vec<f64>,
    /// `U^H H^H r`.
    pub q: CVec,
    /// `W r`.
    pub direction: CVec,
    /// `‖I − θ W H‖² / ‖H‖²` and `‖θ W‖² / ‖H‖²` at θ = 1 are obtained from
    /// `e` directly; these are the sums used by the variance estimate.
    pub sum_e: f64,
}

impl OampLinear {
    pub fn new(h: &CMat) -> Result<Self> {
        let eig = hermitian_eigen(&h.gram())?;
        let lambda: Vec<f64> = eig.values.iter().map(|l| l.max(0.0)).collect();
        let uh = eig.vectors.conj_transpose();
        let uh_hh = uh.matmul(&h.conj_transpose())?;
        Ok(Self {
            h: h.clone(),
            uh_hh,
            u: eig.vectors,
            lambda,
            trace_g: h.frobenius_norm2(),
        })
    }

    pub fn h(&self) -> &CMat {
        &self.h
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn u(&self) -> &CMat {
        &self.u
    }

    pub fn uh_hh(&self) -> &CMat {
        &self.uh_hh
    }

    pub fn trace_g(&self) -> f64 {
        self.trace_g
    }

    /// Evaluates the linear stage for residual `r = y − Hx̂`.
    pub fn stage(&self, r: &[C64], sigma2: f64) -> Result<OampStage> {
        let nr = self.h.rows();
        let nt = self.h.cols();
        let r_norm2 = norm2(r);
        let raw = (r_norm2 - nr as f64 * sigma2) / self.trace_g;
        let v2_clipped = !(raw > V2_FLOOR);
        let v2 = if v2_clipped { V2_FLOOR } else { raw };
        let mut d = Vec::with_capacity(nt);
        let mut e = Vec::with_capacity(nt);
        for &l in &self.lambda {
            let den = v2 * l + sigma2;
            if !(den > 0.0) {
                return Err(Error::Singular { pivot: den });
            }
            d.push(1.0 / den);
            e.push(v2 * l / den);
        }
        let sum_e: f64 = e.iter().sum();
        if !(sum_e > 0.0) {
            return Err(Error::Singular { pivot: sum_e });
        }
        let q = self.uh_hh.mul_vec(r);
        let gamma = nt as f64 / sum_e;
        let scaled: CVec = q.iter().zip(&d).map(|(qi, di)| qi * (gamma * v2 * di)).collect();
        let direction = self.u.mul_vec(&scaled);
        Ok(OampStage {
            r_norm2,
            v2,
            v2_clipped,
            e,
            d,
            q,
            direction,
            sum_e,
        })
    }

    /// Coefficients `(a, c)` of the variance estimate for `A = θ W`:
    /// `a = ‖I − θWH‖²/‖H‖²`, `c = ‖θW‖²/‖H‖²`.
    pub fn variance_coefficients(&self, st: &OampStage, theta: f64) -> (f64, f64) {
        let nt = self.h.cols() as f64;
        let mut a = 0.0;
        let mut c = 0.0;
        for ((&e, &d), &l) in st.e.iter().zip(&st.d).zip(&self.lambda) {
            let k = nt * e / st.sum_e;
            a += (1.0 - theta * k) * (1.0 - theta * k);
            // ‖W‖² = γ²v⁴ Σ λ d² = Σ k_i² / λ_i, written without dividing by λ
            let w = nt * st.v2 * d / st.sum_e;
            c += theta * theta * w * w * l;
        }
        (a / self.trace_g, c / self.trace_g)
    }
}

/// Variance estimate `θ₂/N_t · (a[‖r‖² − N_rσ²]₊ + cσ²)` with the floor.
pub fn variance_from_coefficients(a: f64, c: f64, r_norm2: f64, n_r: usize, n_t: usize, sigma2: f64, theta2: f64) -> f64 {
    let excess = (r_norm2 - n_r as f64 * sigma2).max(0.0);
    theta2 / n_t as f64 * (a * excess + c * sigma2)
}

/// OAMP with `v_t² = max((‖r‖² − N_rσ²)/tr(H^H H), 1e-9)` and the
/// denoiser variance given by the shared estimator at unit scale.
#[derive(Clone, Debug)]
pub struct OampDetector {
    lin: OampLinear,
    sigma2: f64,
    c: Constellation,
    iters: usize,
}

impl OampDetector {
    pub fn new(h: &CMat, sigma2: f64, c: &Constellation, iters: usize) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(contract("OAMP needs a positive noise variance"));
        }
        Ok(Self {
            lin: OampLinear::new(h)?,
            sigma2,
            c: c.clone(),
            iters,
        })
    }

    pub fn run(&self, y: &[C64], keep_trace: bool) -> Result<(DetectionResult, IterationTrace)> {
        let h = self.lin.h();
        check_y_len(h, y)?;
        let (nr, nt) = (h.rows(), h.cols());
        let mut xhat = vec![ZERO; nt];
        let mut r = y.to_vec();
        let mut hx = vec![ZERO; nr];
        let mut trace = IterationTrace::default();
        for t in 0..self.iters {
            let st = self.lin.stage(&r, self.sigma2)?;
            let z: CVec = xhat.iter().zip(&st.direction).map(|(x, w)| x + w).collect();
            guard(&z, t)?;
            let (a, c) = self.lin.variance_coefficients(&st, 1.0);
            let s2 = variance_from_coefficients(a, c, st.r_norm2, nr, nt, self.sigma2, 1.0)
                .max(SIGMA2_FLOOR);
            for k in 0..nt {
                xhat[k] = denoise(&self.c, z[k], s2);
            }
            h.mul_vec_into(&xhat, &mut hx);
            for i in 0..nr {
                r[i] = y[i] - hx[i];
            }
            if keep_trace {
                trace.z.push(z);
                trace.xhat.push(xhat.clone());
                trace.sigma2.push(s2);
                trace.residual_norm2.push(norm2(&r));
            }
        }
        Ok((DetectionResult::from_soft(h, y, &self.c, xhat), trace))
    }
}

impl Detect for OampDetector {
    fn detect(&self, y: &[C64]) -> Result<DetectionResult> {
        Ok(self.run(y, false)?.0)
    }
}

pub fn oamp_detect(
    p: &DetectorProblem,
    c: &Constellation,
    iters: usize,
) -> Result<(DetectionResult, IterationTrace)> {
    OampDetector::new(p.h, p.sigma2, c, iters)?.run(p.y, true)
}

/// Exhaustive minimization of `‖y − Hx‖²` over `X^{N_t}`.
///
/// Candidates are visited in lexicographic order of the index vector with
/// the residual updated one column at a time. Any candidate whose running
/// metric comes within a relative `1e-9` of the incumbent is re-scored
/// exactly and only replaces it on a strict improvement, so the returned
/// vector is the lexicographically first exact minimizer.
#[derive(Clone, Debug)]
pub struct MlDetector {
    h: CMat,
    c: Constellation,
}

impl MlDetector {
    pub fn new(h: &CMat, c: &Constellation, budget: u64) -> Result<Self> {
        let (m, nt) = (c.order(), h.cols());
        let size = (m as u64).checked_pow(nt as u32);
        if size.map_or(true, |s| s > budget) {
            return Err(Error::Capacity {
                order: m,
                n_t: nt,
                budget,
            });
        }
        Ok(Self {
            h: h.clone(),
            c: c.clone(),
        })
    }
}

impl Detect for MlDetector {
    fn detect(&self, y: &[C64]) -> Result<DetectionResult> {
        check_y_len(&self.h, y)?;
        let (nr, nt, m) = (self.h.rows(), self.h.cols(), self.c.order());
        let cols: Vec<CVec> = (0..nt).map(|j| self.h.column(j)).collect();
        let pts = self.c.points();
        let mut digits = vec![0usize; nt];
        let fresh = |digits: &[usize]| -> CVec {
            let x: CVec = digits.iter().map(|&k| pts[k]).collect();
            let hx = self.h.mul_vec(&x);
            y.iter().zip(&hx).map(|(a, b)| a - b).collect()
        };
        let exact = |digits: &[usize]| residual_norm2(&self.h, y, &digits.iter().map(|&k| pts[k]).collect::<CVec>());
        let mut r = fresh(&digits);
        let mut best = digits.clone();
        let mut best_exact = exact(&digits);
        loop {
            // advance the odometer, last digit fastest
            let mut pos = nt;
            loop {
                if pos == 0 {
                    let soft = self.c.to_points(&SymbolVector(best.clone()));
                    return Ok(DetectionResult::from_symbols(&self.h, y, &self.c, SymbolVector(best), soft));
                }
                pos -= 1;
                let old = digits[pos];
                if old + 1 < m {
                    digits[pos] = old + 1;
                    break;
                }
                digits[pos] = 0;
            }
            if pos + 1 < nt {
                r = fresh(&digits);
            } else {
                let delta = pts[digits[pos]] - pts[digits[pos] - 1];
                for i in 0..nr {
                    r[i] -= cols[pos][i] * delta;
                }
            }
            let metric = norm2(&r);
            if metric <= best_exact * (1.0 + 1e-9) + 1e-300 {
                let e = exact(&digits);
                if e < best_exact {
                    best_exact = e;
                    best.copy_from_slice(&digits);
                }
            }
        }
    }
}

pub fn ml_bruteforce(p: &DetectorProblem, c: &Constellation, budget: u64) -> Result<DetectionResult> {
    MlDetector::new(p.h, c, budget)?.detect(p.y)
}

/// Detector names accepted on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DetectorKind {
    Zf,
    Mf,
    Mmse,
    Vblast,
    Amp,
    Oamp,
    OampNet,
    MmnetIid,
    Mmnet,
    Ml,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 10] = [
        DetectorKind::Zf,
        DetectorKind::Mf,
        DetectorKind::Mmse,
        DetectorKind::Vblast,
        DetectorKind::Amp,
        DetectorKind::Oamp,
        DetectorKind::OampNet,
        DetectorKind::MmnetIid,
        DetectorKind::Mmnet,
        DetectorKind::Ml,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DetectorKind::Zf => "zf",
            DetectorKind::Mf => "mf",
            DetectorKind::Mmse => "mmse",
            DetectorKind::Vblast => "vblast",
            DetectorKind::Amp => "amp",
            DetectorKind::Oamp => "oamp",
            DetectorKind::OampNet => "oampnet",
            DetectorKind::MmnetIid => "mmnet-iid",
            DetectorKind::Mmnet => "mmnet",
            DetectorKind::Ml => "ml",
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, DetectorKind::OampNet | DetectorKind::MmnetIid | DetectorKind::Mmnet)
    }

    /// Builds a prepared non-learned detector.
    pub fn prepare_classical(
        &self,
        h: &CMat,
        sigma2: f64,
        c: &Constellation,
    ) -> Result<Box<dyn Detect>> {
        Ok(match self {
            DetectorKind::Zf => Box::new(LinearDetector::zf(h, c)?),
            DetectorKind::Mf => Box::new(LinearDetector::matched_filter(h, c)),
            DetectorKind::Mmse => Box::new(LinearDetector::mmse(h, sigma2, c)?),
            DetectorKind::Vblast => Box::new(VblastDetector::new(h, c)?),
            DetectorKind::Amp => Box::new(AmpDetector::new(h, c, AMP_ITERS)),
            DetectorKind::Oamp => Box::new(OampDetector::new(h, sigma2, c, OAMP_ITERS)?),
            DetectorKind::Ml => Box::new(MlDetector::new(h, c, ML_BUDGET)?),
            learned => {
                return Err(contract(format!("{} needs trained parameters", learned.name())))
            }
        })
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectorKind::ALL
            .iter()
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| contract(format!("unknown detector '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{gen_iid_gaussian, gen_kronecker, sigma2_from_snr, apply_channel};
    use crate::numerics::RngStream;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn instance(nr: usize, nt: usize, m: usize, snr: f64, seed: u64) -> (CMat, SymbolVector, CVec, f64) {
        let c = Constellation::new(m).unwrap();
        let h = gen_iid_gaussian(nr, nt, RngStream::new(seed, 0)).unwrap().h;
        let mut rng = RngStream::new(seed, 1).rng();
        let s = c.sample_symbols(nt, &mut rng);
        let s2 = if snr.is_infinite() { 0.0 } else { sigma2_from_snr(&h, snr) };
        let y = apply_channel(&h, &c.to_points(&s), s2, &mut rng).unwrap();
        (h, s, y, s2)
    }

    fn na(h: &CMat) -> DMatrix<C64> {
        h.to_nalgebra()
    }

    #[test]
    fn noiseless_recovery() {
        let c = Constellation::new(16).unwrap();
        let (h, s, y, _) = instance(8, 4, 16, f64::INFINITY, 1);
        let p = DetectorProblem::new(&y, &h, 0.0).unwrap();
        assert_eq!(zf_detect(&p, &c).unwrap().symbols, s);
        assert_eq!(vblast_detect(&p, &c).unwrap().symbols, s);
        let ml = ml_bruteforce(&DetectorProblem::new(&y[..], &h, 0.0).unwrap(), &Constellation::new(4).unwrap(), ML_BUDGET);
        assert!(ml.is_ok());
        let p = DetectorProblem::new(&y, &h, 1e-12).unwrap();
        assert_eq!(mmse_detect(&p, &c).unwrap().symbols, s);
        assert_eq!(oamp_detect(&p, &c, OAMP_ITERS).unwrap().0.symbols, s);
    }

    #[test]
    fn zf_identity_and_oracle() {
        let c = Constellation::new(4).unwrap();
        let y = vec![C64::new(0.3, -0.9), C64::new(-0.2, 0.1)];
        let h = CMat::identity(2);
        let p = DetectorProblem::new(&y, &h, 0.0).unwrap();
        assert_eq!(zf_detect(&p, &c).unwrap().symbols, c.hard_decision(&y));

        let (h, _, y, _) = instance(8, 4, 4, 20.0, 2);
        let soft = zf_detect(&DetectorProblem::new(&y, &h, 0.01).unwrap(), &c).unwrap().soft;
        let ls = na(&h).svd(true, true).solve(&DVector::from_vec(y.clone()), 1e-14).unwrap();
        for (a, b) in soft.iter().zip(ls.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn matched_filter_cases() {
        let c = Constellation::new(4).unwrap();
        let h = CMat::identity(3).scale(C64::new(2.0, 0.0));
        let y = vec![C64::new(0.1, 0.2), C64::new(-0.4, 0.3), C64::new(0.5, -0.5)];
        let r = matched_filter_detect(&DetectorProblem::new(&y, &h, 0.0).unwrap(), &c).unwrap();
        for (s, v) in r.soft.iter().zip(&y) {
            assert_eq!(*s, v * 2.0);
        }
    }

    #[test]
    fn mmse_cases() {
        let c = Constellation::new(4).unwrap();
        let y = vec![C64::new(0.6, -0.2), C64::new(1.0, 0.4)];
        let h = CMat::identity(2);
        let r = mmse_detect(&DetectorProblem::new(&y, &h, 1.0).unwrap(), &c).unwrap();
        for (s, v) in r.soft.iter().zip(&y) {
            assert!((s - v / 2.0).norm() < 1e-15);
        }

        let (h, _, y, s2) = instance(16, 8, 4, 5.0, 3);
        let soft = mmse_detect(&DetectorProblem::new(&y, &h, s2).unwrap(), &c).unwrap().soft;
        let g = na(&h).adjoint() * na(&h) + DMatrix::identity(8, 8) * C64::new(s2, 0.0);
        let rhs = na(&h).adjoint() * DVector::from_vec(y.clone());
        let oracle = g.lu().solve(&rhs).unwrap();
        for (a, b) in soft.iter().zip(oracle.iter()) {
            assert!((a - b).norm() < 1e-10);
        }

        let zf = zf_detect(&DetectorProblem::new(&y, &h, 0.0).unwrap(), &c).unwrap().soft;
        let mm = mmse_detect(&DetectorProblem::new(&y, &h, 1e-12).unwrap(), &c).unwrap().soft;
        for (a, b) in zf.iter().zip(&mm) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn vblast_orthogonal_matches_zf() {
        let c = Constellation::new(16).unwrap();
        let mut h = CMat::zeros(4, 3);
        h.set(0, 0, C64::new(1.0, 0.0));
        h.set(1, 1, C64::new(0.0, 2.0));
        h.set(2, 2, C64::new(0.5, 0.5));
        h.set(3, 2, C64::new(0.5, -0.5));
        let y = vec![C64::new(0.2, -0.7), C64::new(0.4, 0.1), C64::new(-0.3, 0.9), C64::new(0.8, 0.2)];
        let p = DetectorProblem::new(&y, &h, 0.1).unwrap();
        assert_eq!(vblast_detect(&p, &c).unwrap().symbols, zf_detect(&p, &c).unwrap().symbols);
    }

    #[test]
    fn vblast_hand_stepped() {
        let c = Constellation::new(4).unwrap();
        let h = CMat::from_vec(
            4,
            2,
            vec![
                C64::new(1.0, 0.0), C64::new(0.2, 0.1),
                C64::new(0.0, 0.5), C64::new(0.3, 0.0),
                C64::new(0.4, -0.2), C64::new(0.1, 0.1),
                C64::new(0.1, 0.0), C64::new(0.0, -0.2),
            ],
        )
        .unwrap();
        let y = vec![C64::new(0.9, 0.2), C64::new(-0.3, 0.6), C64::new(0.1, -0.4), C64::new(0.2, 0.3)];
        // stage 1: min-norm row of pinv(H); stage 2: LS on the other column
        let hn = na(&h);
        let pinv = hn.clone().pseudo_inverse(1e-14).unwrap();
        let norms: Vec<f64> = (0..2).map(|k| pinv.row(k).norm_squared()).collect();
        let first = if norms[0] <= norms[1] { 0 } else { 1 };
        let second = 1 - first;
        let yv = DVector::from_vec(y.clone());
        let s1 = (pinv.row(first) * &yv)[(0, 0)];
        let x1 = c.point(c.nearest(s1));
        let y2 = &yv - hn.column(first) * x1;
        let col = hn.column(second);
        let s2 = (col.adjoint() * &y2)[(0, 0)] / col.norm_squared();
        let mut expect = vec![0; 2];
        expect[first] = c.nearest(s1);
        expect[second] = c.nearest(s2);
        let v = VblastDetector::new(&h, &c).unwrap();
        assert_eq!(v.order(), vec![first, second]);
        let r = v.detect(&y).unwrap();
        assert_eq!(r.symbols.0, expect);
        assert!((r.soft[first] - s1).norm() < 1e-12 && (r.soft[second] - s2).norm() < 1e-12);
    }

    #[test]
    fn amp_orthonormal_one_iteration() {
        let c = Constellation::new(4).unwrap();
        // columns of a scaled DFT are orthonormal
        let n = 4;
        let h = CMat::from_fn(n, n, |i, j| {
            C64::from_polar(0.5, 2.0 * std::f64::consts::PI * (i * j) as f64 / n as f64)
        });
        let s = SymbolVector(vec![0, 3, 1, 2]);
        let x = c.to_points(&s);
        let y = h.mul_vec(&x);
        let (r, tr) = amp_detect(&DetectorProblem::new(&y, &h, 0.0).unwrap(), &c, 1).unwrap();
        assert_eq!(r.symbols, s);
        assert_eq!(tr.z.len(), 1);
        for (a, b) in tr.z[0].iter().zip(&x) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn amp_residual_settles() {
        // residual after x̂_4, x̂_5, ... non-increasing up to a 1e-3 relative
        // wobble, in at least 95% of instances
        let c = Constellation::new(4).unwrap();
        let n = 400;
        let mut ok = 0;
        for seed in 0..n {
            let (h, _, y, s2) = instance(64, 32, 4, 9.0, 100 + seed);
            let (_, tr) = amp_detect(&DetectorProblem::new(&y, &h, s2).unwrap(), &c, AMP_ITERS).unwrap();
            if tr.residual_norm2[3..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-3)) {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.95 * n as f64, "{ok}/{n}");
    }

    #[test]
    fn amp_divergence_guard() {
        let c = Constellation::new(4).unwrap();
        let h = CMat::from_fn(4, 4, |_, _| C64::new(1e4, 0.0));
        let y = vec![C64::new(1e4, 0.0); 4];
        assert!(matches!(
            amp_detect(&DetectorProblem::new(&y, &h, 0.1).unwrap(), &c, 5),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn oamp_operator_identities() {
        let (h, _, y, s2) = instance(12, 6, 4, 6.0, 4);
        let lin = OampLinear::new(&h).unwrap();
        let st = lin.stage(&y, s2).unwrap();
        // direct: W = γ v² H^H (v² H H^H + σ² I)^{-1}
        let hn = na(&h);
        let inner = &hn * hn.adjoint() * C64::new(st.v2, 0.0) + DMatrix::identity(12, 12) * C64::new(s2, 0.0);
        let inv = inner.try_inverse().unwrap();
        let tr = (hn.adjoint() * &inv * &hn).trace().re * st.v2;
        let gamma = 6.0 / tr;
        assert!((gamma * tr - 6.0).abs() < 1e-9);
        let w = hn.adjoint() * &inv * C64::new(gamma * st.v2, 0.0);
        let dir = &w * DVector::from_vec(y.clone());
        for (a, b) in st.direction.iter().zip(dir.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
        let hf = hn.norm_squared();
        let ia = (DMatrix::identity(6, 6) - &w * &hn).norm_squared() / hf;
        let ic = w.norm_squared() / hf;
        let (a, c) = lin.variance_coefficients(&st, 1.0);
        assert!((a - ia).abs() < 1e-10 && (c - ic).abs() < 1e-10);
        let v2 = ((norm2(&y) - 12.0 * s2) / hf).max(V2_FLOOR);
        assert!((st.v2 - v2).abs() < 1e-15);
    }

    #[test]
    fn oamp_small_v2_limit_is_finite() {
        let (h, _, _, _) = instance(8, 4, 4, 10.0, 5);
        let lin = OampLinear::new(&h).unwrap();
        let r = vec![C64::new(1e-9, 0.0); 8];
        let st = lin.stage(&r, 1.0).unwrap();
        assert!(st.v2_clipped);
        // W → (N_t / tr G) H^H
        let mf = h.adjoint_mul_vec(&r);
        let k = 4.0 / h.frobenius_norm2();
        for (a, b) in st.direction.iter().zip(&mf) {
            assert!((a - b * k).norm() < 1e-6 * (b * k).norm());
        }
    }

    #[test]
    fn ml_enumeration_and_minimality() {
        let c = Constellation::new(4).unwrap();
        let (h, _, y, s2) = instance(2, 2, 4, 3.0, 6);
        let p = DetectorProblem::new(&y, &h, s2).unwrap();
        let ml = ml_bruteforce(&p, &c, ML_BUDGET).unwrap();
        // second enumeration order: first digit fastest
        let mut best = (f64::INFINITY, vec![]);
        for a in 0..4 {
            for b in 0..4 {
                let idx = vec![b, a];
                let r = residual_norm2(&h, &y, &c.to_points(&SymbolVector(idx.clone())));
                if r < best.0 || (r == best.0 && idx < best.1) {
                    best = (r, idx);
                }
            }
        }
        assert_eq!(ml.symbols.0, best.1);
        assert_eq!(ml.residual_norm2, best.0);

        let (h, s, y, _) = instance(4, 3, 16, f64::INFINITY, 7);
        let c16 = Constellation::new(16).unwrap();
        let r = ml_bruteforce(&DetectorProblem::new(&y, &h, 0.0).unwrap(), &c16, ML_BUDGET).unwrap();
        assert_eq!(r.symbols, s);
        assert!(r.residual_norm2 < 1e-24);
    }

    #[test]
    fn ml_capacity() {
        let c = Constellation::new(64).unwrap();
        let h = CMat::identity(4);
        let y = vec![ZERO; 4];
        match ml_bruteforce(&DetectorProblem::new(&y, &h, 0.0).unwrap(), &c, ML_BUDGET) {
            Err(Error::Capacity { order: 64, n_t: 4, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ml_tie_break() {
        let c = Constellation::new(4).unwrap();
        // a zero column makes its symbol irrelevant: lowest index wins
        let mut h = CMat::zeros(2, 2);
        h.set(0, 0, C64::new(1.0, 0.0));
        let y = vec![c.point(3), ZERO];
        let r = ml_bruteforce(&DetectorProblem::new(&y, &h, 0.0).unwrap(), &c, ML_BUDGET).unwrap();
        assert_eq!(r.symbols.0, vec![3, 0]);
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in DetectorKind::ALL {
            assert_eq!(k.name().parse::<DetectorKind>().unwrap(), k);
        }
        assert!("sdr".parse::<DetectorKind>().is_err());
    }

    #[test]
    fn amp_worse_than_mmse_on_correlated() {
        let c = Constellation::new(4).unwrap();
        let (mut amp, mut mmse) = (0usize, 0usize);
        for k in 0..30 {
            let h = gen_kronecker(16, 8, 0.9, 0.9, RngStream::new(40, k)).unwrap().h;
            let s2 = sigma2_from_snr(&h, 15.0);
            let mut rng = RngStream::new(41, k).rng();
            for _ in 0..20 {
                let s = c.sample_symbols(8, &mut rng);
                let y = apply_channel(&h, &c.to_points(&s), s2, &mut rng).unwrap();
                let p = DetectorProblem::new(&y, &h, s2).unwrap();
                mmse += c.dimension_errors(&mmse_detect(&p, &c).unwrap().symbols, &s).unwrap();
                amp += match amp_detect(&p, &c, AMP_ITERS) {
                    Ok((r, _)) => c.dimension_errors(&r.symbols, &s).unwrap(),
                    Err(_) => 16,
                };
            }
        }
        assert!(amp > mmse, "amp {amp} mmse {mmse}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn ml_residual_is_minimal(seed in 0u64..10_000, snr in 0.0f64..20.0) {
            let c = Constellation::new(4).unwrap();
            let (h, _, y, s2) = instance(4, 3, 4, snr, seed);
            let p = DetectorProblem::new(&y, &h, s2).unwrap();
            let ml = ml_bruteforce(&p, &c, ML_BUDGET).unwrap().residual_norm2;
            prop_assert!(ml <= zf_detect(&p, &c).unwrap().residual_norm2);
            prop_assert!(ml <= mmse_detect(&p, &c).unwrap().residual_norm2);
            prop_assert!(ml <= vblast_detect(&p, &c).unwrap().residual_norm2);
            prop_assert!(ml <= amp_detect(&p, &c, AMP_ITERS).unwrap().0.residual_norm2);
            prop_assert!(ml <= oamp_detect(&p, &c, OAMP_ITERS).unwrap().0.residual_norm2);
        }

        #[test]
        fn residual_matches_symbols(seed in 0u64..10_000) {
            let c = Constellation::new(16).unwrap();
            let (h, _, y, s2) = instance(6, 3, 16, 10.0, seed);
            let p = DetectorProblem::new(&y, &h, s2).unwrap();
            for r in [mmse_detect(&p, &c).unwrap(), amp_detect(&p, &c, 10).unwrap().0] {
                let direct = residual_norm2(&h, &y, &c.to_points(&r.symbols));
                prop_assert!((r.residual_norm2 - direct).abs() < 1e-9);
            }
        }
    }
}
