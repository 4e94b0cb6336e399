//! Channel generation, noise, and the `MCHAN1` dataset format.
//!
//! Complex Gaussian convention: `CN(0, v)` has independent real and
//! imaginary parts of variance `v / 2` each.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{contract, Error, Result};
use crate::numerics::rng::complex_gaussian;
use crate::numerics::{CMat, RngStream, StreamRng, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h: CMat,
    pub freq_index: usize,
    pub time_index: usize,
}

impl ChannelRealization {
    pub fn new(h: CMat) -> Self {
        Self {
            h,
            freq_index: 0,
            time_index: 0,
        }
    }

    pub fn n_r(&self) -> usize {
        self.h.rows()
    }

    pub fn n_t(&self) -> usize {
        self.h.cols()
    }
}

/// `F × T` channels sharing dimensions. Cells are stored time-major:
/// the cell at `(f, t)` sits at index `t * F + f`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelGrid {
    pub f_count: usize,
    pub t_count: usize,
    pub cells: Vec<ChannelRealization>,
}

impl ChannelGrid {
    pub fn n_r(&self) -> usize {
        self.cells[0].n_r()
    }

    pub fn n_t(&self) -> usize {
        self.cells[0].n_t()
    }

    pub fn cell(&self, f: usize, t: usize) -> &ChannelRealization {
        &self.cells[t * self.f_count + f]
    }

    /// Grid average of `‖H‖_F² / (N_r N_t)`.
    pub fn mean_power(&self) -> f64 {
        let per = (self.n_r() * self.n_t()) as f64;
        self.cells.iter().map(|c| c.h.frobenius_norm2() / per).sum::<f64>() / self.cells.len() as f64
    }

    fn normalize(&mut self) {
        let p = self.mean_power();
        if p > 0.0 {
            let s = C64::new(1.0 / p.sqrt(), 0.0);
            for c in &mut self.cells {
                c.h = c.h.scale(s);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Time,
    Freq,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" | "t" => Ok(Axis::Time),
            "freq" | "f" => Ok(Axis::Freq),
            _ => Err(contract(format!("unknown axis '{s}'"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Time => "time",
            Axis::Freq => "freq",
        })
    }
}

fn check_dims(n_r: usize, n_t: usize) -> Result<()> {
    if n_t == 0 || n_r < n_t {
        return Err(contract(format!(
            "channel dimensions need N_r >= N_t >= 1, got {n_r}x{n_t}"
        )));
    }
    Ok(())
}

fn check_rho(name: &str, rho: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho) {
        return Err(contract(format!("{name} = {rho} outside [0, 1)")));
    }
    Ok(())
}

/// `N_r × N_t` matrix of i.i.d. `CN(0, 1/N_r)` entries, drawn row-major.
pub fn iid_matrix(n_r: usize, n_t: usize, rng: &mut StreamRng) -> CMat {
    let v = 1.0 / n_r as f64;
    CMat::from_fn(n_r, n_t, |_, _| complex_gaussian(rng, v))
}

pub fn gen_iid_gaussian(n_r: usize, n_t: usize, stream: RngStream) -> Result<ChannelRealization> {
    check_dims(n_r, n_t)?;
    Ok(ChannelRealization::new(iid_matrix(n_r, n_t, &mut stream.rng())))
}

/// Exponential correlation matrix `R[i,j] = ρ^|i−j|`.
pub fn exponential_correlation(n: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| rho.powi((i as i32 - j as i32).abs()))
}

fn sym_sqrt(r: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(r.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Applies `R_r^{1/2} · W · R_t^{1/2}`; `None` stands for the identity.
#[derive(Clone, Debug)]
pub struct KroneckerShaper {
    rx_half: Option<DMatrix<f64>>,
    tx_half: Option<DMatrix<f64>>,
}

impl KroneckerShaper {
    pub fn new(n_r: usize, n_t: usize, rho_r: f64, rho_t: f64) -> Result<Self> {
        check_rho("rho_r", rho_r)?;
        check_rho("rho_t", rho_t)?;
        let half = |n, rho| (rho > 0.0).then(|| sym_sqrt(&exponential_correlation(n, rho)));
        Ok(Self {
            rx_half: half(n_r, rho_r),
            tx_half: half(n_t, rho_t),
        })
    }

    pub fn shape(&self, w: CMat) -> CMat {
        let (nr, nt) = (w.rows(), w.cols());
        let mut h = w;
        if let Some(r) = &self.rx_half {
            let src = h.clone();
            h = CMat::from_fn(nr, nt, |i, j| {
                (0..nr).map(|k| src.get(k, j) * r[(i, k)]).sum()
            });
        }
        if let Some(t) = &self.tx_half {
            let src = h.clone();
            h = CMat::from_fn(nr, nt, |i, j| {
                src.row(i).iter().enumerate().map(|(k, z)| z * t[(k, j)]).sum()
            });
        }
        h
    }
}

pub fn gen_kronecker(
    n_r: usize,
    n_t: usize,
    rho_r: f64,
    rho_t: f64,
    stream: RngStream,
) -> Result<ChannelRealization> {
    check_dims(n_r, n_t)?;
    let shaper = KroneckerShaper::new(n_r, n_t, rho_r, rho_t)?;
    let w = iid_matrix(n_r, n_t, &mut stream.rng());
    Ok(ChannelRealization::new(shaper.shape(w)))
}

/// Parameters of a time/frequency-correlated channel grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n_r: usize,
    pub n_t: usize,
    pub f_count: usize,
    pub t_count: usize,
    pub rho_r: f64,
    pub rho_t: f64,
    pub corr_f: f64,
    pub corr_t: f64,
}

/// Grid whose underlying white matrices follow a separable first-order
/// Gauss–Markov process along frequency and time, so entry correlation
/// between cells `(f, t)` and `(f', t')` is `corr_f^|f−f'| · corr_t^|t−t'|`.
/// Each cell is then Kronecker-shaped and the grid is scaled so that the
/// average of `‖H‖_F² / (N_r N_t)` is one.
pub fn gen_correlated_grid(spec: &GridSpec, stream: RngStream) -> Result<ChannelGrid> {
    let GridSpec {
        n_r,
        n_t,
        f_count,
        t_count,
        ..
    } = *spec;
    check_dims(n_r, n_t)?;
    check_rho("corr_f", spec.corr_f)?;
    check_rho("corr_t", spec.corr_t)?;
    if f_count == 0 || t_count == 0 {
        return Err(contract("grid needs at least one cell on each axis"));
    }
    let shaper = KroneckerShaper::new(n_r, n_t, spec.rho_r, spec.rho_t)?;
    let (a, b) = (spec.corr_f, spec.corr_t);
    let (ia, ib) = ((1.0 - a * a).sqrt(), (1.0 - b * b).sqrt());
    let mut rng = stream.rng();
    let mut w: Vec<CMat> = Vec::with_capacity(f_count * t_count);
    for t in 0..t_count {
        for f in 0..f_count {
            let e = iid_matrix(n_r, n_t, &mut rng);
            let left = (f > 0).then(|| &w[t * f_count + f - 1]);
            let up = (t > 0).then(|| &w[(t - 1) * f_count + f]);
            let diag = (f > 0 && t > 0).then(|| &w[(t - 1) * f_count + f - 1]);
            let cell = CMat::from_fn(n_r, n_t, |i, j| {
                let mut z = e.get(i, j);
                match (left, up, diag) {
                    (Some(l), Some(u), Some(d)) => {
                        z = z * (ia * ib) + l.get(i, j) * a + u.get(i, j) * b
                            - d.get(i, j) * (a * b)
                    }
                    (Some(l), None, _) => z = z * ia + l.get(i, j) * a,
                    (None, Some(u), _) => z = z * ib + u.get(i, j) * b,
                    _ => {}
                }
                z
            });
            w.push(cell);
        }
    }
    let cells = w
        .into_iter()
        .enumerate()
        .map(|(k, m)| ChannelRealization {
            h: shaper.shape(m),
            freq_index: k % f_count,
            time_index: k / f_count,
        })
        .collect();
    let mut grid = ChannelGrid {
        f_count,
        t_count,
        cells,
    };
    grid.normalize();
    Ok(grid)
}

/// `σ² = ‖H‖_F² / (N_r · 10^{snr/10})`, using the realized channel.
pub fn sigma2_from_snr(h: &CMat, snr_db: f64) -> f64 {
    h.frobenius_norm2() / (h.rows() as f64 * 10f64.powf(snr_db / 10.0))
}

/// `y = Hx + n` into `out`, with `n ~ CN(0, σ²I)`. Noise is drawn after
/// the product so `σ² = 0` consumes no randomness.
pub fn apply_channel_into(h: &CMat, x: &[C64], sigma2: f64, rng: &mut StreamRng, out: &mut [C64]) {
    h.mul_vec_into(x, out);
    if sigma2 > 0.0 {
        for v in out.iter_mut() {
            *v += complex_gaussian(rng, sigma2);
        }
    }
}

pub fn apply_channel(h: &CMat, x: &[C64], sigma2: f64, rng: &mut StreamRng) -> Result<Vec<C64>> {
    if x.len() != h.cols() {
        return Err(contract(format!(
            "symbol vector of length {} for {} transmitters",
            x.len(),
            h.cols()
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(contract(format!("noise variance {sigma2} is negative")));
    }
    let mut y = vec![C64::new(0.0, 0.0); h.rows()];
    apply_channel_into(h, x, sigma2, rng, &mut y);
    Ok(y)
}

/// Mean over cell pairs `step` apart of `|⟨H_a, H_b⟩_F| / (‖H_a‖ ‖H_b‖)`.
pub fn grid_correlation(grid: &ChannelGrid, axis: Axis, step: usize) -> Result<f64> {
    let len = match axis {
        Axis::Time => grid.t_count,
        Axis::Freq => grid.f_count,
    };
    if step >= len {
        return Err(contract(format!("step {step} not below axis length {len}")));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in 0..grid.t_count {
        for f in 0..grid.f_count {
            let (f2, t2) = match axis {
                Axis::Time => (f, t + step),
                Axis::Freq => (f + step, t),
            };
            if f2 >= grid.f_count || t2 >= grid.t_count {
                continue;
            }
            let a = &grid.cell(f, t).h;
            let b = &grid.cell(f2, t2).h;
            let inner: C64 = a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p.conj() * q).sum();
            let den = (a.frobenius_norm2() * b.frobenius_norm2()).sqrt();
            if den > 0.0 {
                sum += inner.norm() / den;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Degenerate("grid has no nonzero cell pairs".into()));
    }
    Ok(sum / n as f64)
}

pub const GRID_MAGIC: &[u8; 6] = b"MCHAN1";
pub const GRID_VERSION: u16 = 1;
const GRID_HEADER: usize = 6 + 2 + 4 * 4;

pub fn encode_grid(grid: &ChannelGrid) -> Vec<u8> {
    let (nr, nt) = (grid.n_r(), grid.n_t());
    let mut out = Vec::with_capacity(GRID_HEADER + grid.cells.len() * nr * nt * 16);
    out.extend_from_slice(GRID_MAGIC);
    out.extend_from_slice(&GRID_VERSION.to_le_bytes());
    for v in [nr, nt, grid.f_count, grid.t_count] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for c in &grid.cells {
        for z in c.h.as_slice() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

/// Little-endian cursor that reports the offset of the first bad read.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

pub fn decode_grid(bytes: &[u8]) -> Result<ChannelGrid> {
    let mut r = Reader::new(bytes);
    if r.take(6, "magic")? != GRID_MAGIC {
        return Err(Error::Format {
            offset: 0,
            reason: "bad magic, expected MCHAN1".into(),
        });
    }
    let at = r.offset();
    let version = r.u16("version")?;
    if version != GRID_VERSION {
        return Err(Error::Format {
            offset: at,
            reason: format!("unsupported version {version}"),
        });
    }
    let at = r.offset();
    let nr = r.u32("N_r")? as usize;
    let nt = r.u32("N_t")? as usize;
    if nt == 0 || nr < nt {
        return Err(Error::Format {
            offset: at,
            reason: format!("invalid dimensions {nr}x{nt}"),
        });
    }
    let at = r.offset();
    let f_count = r.u32("F")? as usize;
    let t_count = r.u32("T")? as usize;
    if f_count == 0 || t_count == 0 {
        return Err(Error::Format {
            offset: at,
            reason: format!("empty grid {f_count}x{t_count}"),
        });
    }
    let need = (f_count as u128) * (t_count as u128) * (nr as u128) * (nt as u128) * 16;
    if need > (bytes.len() - r.offset() as usize) as u128 {
        // point at the first entry that is missing
        let have = (bytes.len() - r.offset() as usize) / 16 * 16;
        return Err(Error::Format {
            offset: r.offset() + have as u64,
            reason: format!("truncated: {need} bytes of entries expected"),
        });
    }
    let mut cells = Vec::with_capacity(f_count * t_count);
    for k in 0..f_count * t_count {
        let mut data = Vec::with_capacity(nr * nt);
        for _ in 0..nr * nt {
            let re = r.f64("entry")?;
            let im = r.f64("entry")?;
            data.push(C64::new(re, im));
        }
        cells.push(ChannelRealization {
            h: CMat::from_vec(nr, nt, data)?,
            freq_index: k % f_count,
            time_index: k / f_count,
        });
    }
    r.finish()?;
    Ok(ChannelGrid {
        f_count,
        t_count,
        cells,
    })
}

pub fn save_grid(grid: &ChannelGrid, path: impl AsRef<Path>) -> Result<()> {
    if grid.cells.len() != grid.f_count * grid.t_count || grid.cells.is_empty() {
        return Err(contract("grid cell count does not match F·T"));
    }
    fs::write(path, encode_grid(grid))?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<ChannelGrid> {
    decode_grid(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constellation::Constellation;
    use crate::numerics::svd_values;

    #[test]
    fn iid_column_power_and_total() {
        let (nr, nt) = (8, 4);
        let n = 10_000;
        let mut col = 0.0;
        let mut tot = 0.0;
        for k in 0..n {
            let h = gen_iid_gaussian(nr, nt, RngStream::new(5, k)).unwrap().h;
            col += h.column(0).iter().map(|z| z.norm_sqr()).sum::<f64>();
            tot += h.frobenius_norm2();
        }
        assert!((col / n as f64 - 1.0).abs() < 0.01);
        assert!((tot / n as f64 / nt as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn iid_deterministic_and_checked() {
        let s = RngStream::new(1, 2);
        assert_eq!(gen_iid_gaussian(4, 2, s).unwrap(), gen_iid_gaussian(4, 2, s).unwrap());
        assert!(gen_iid_gaussian(2, 4, s).is_err());
        assert!(gen_iid_gaussian(2, 0, s).is_err());
    }

    #[test]
    fn kronecker_zero_rho_matches_iid() {
        let s = RngStream::new(11, 3);
        assert_eq!(
            gen_kronecker(6, 3, 0.0, 0.0, s).unwrap().h,
            gen_iid_gaussian(6, 3, s).unwrap().h
        );
        assert!(gen_kronecker(6, 3, 1.0, 0.0, s).is_err());
        assert!(gen_kronecker(6, 3, 0.0, -0.1, s).is_err());
    }

    #[test]
    fn correlation_matrix_example() {
        let r = exponential_correlation(3, 0.5);
        let e = [[1.0, 0.5, 0.25], [0.5, 1.0, 0.5], [0.25, 0.5, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r[(i, j)], e[i][j]);
            }
        }
        let h = sym_sqrt(&r);
        assert!((&h * &h - r).abs().max() < 1e-12);
    }

    #[test]
    fn kronecker_raises_condition_number() {
        let cond = |h: &CMat| {
            let s = svd_values(h);
            s[0] / s[s.len() - 1]
        };
        let (mut a, mut b) = (0.0, 0.0);
        for k in 0..100 {
            let s = RngStream::new(21, k);
            a += cond(&gen_kronecker(16, 8, 0.0, 0.0, s).unwrap().h);
            b += cond(&gen_kronecker(16, 8, 0.9, 0.0, s).unwrap().h);
        }
        assert!(b > a);
    }

    fn spec(f: usize, t: usize, cf: f64, ct: f64) -> GridSpec {
        GridSpec {
            n_r: 16,
            n_t: 8,
            f_count: f,
            t_count: t,
            rho_r: 0.3,
            rho_t: 0.2,
            corr_f: cf,
            corr_t: ct,
        }
    }

    #[test]
    fn grid_normalized_and_indexed() {
        let g = gen_correlated_grid(&spec(5, 3, 0.9, 0.5), RngStream::new(2, 0)).unwrap();
        assert!((g.mean_power() - 1.0).abs() < 1e-9);
        assert_eq!(g.cells.len(), 15);
        let c = g.cell(4, 2);
        assert_eq!((c.freq_index, c.time_index), (4, 2));
    }

    #[test]
    fn grid_correlation_behaviour() {
        let g = gen_correlated_grid(&spec(32, 2, 0.99, 0.0), RngStream::new(3, 0)).unwrap();
        assert!((grid_correlation(&g, Axis::Freq, 0).unwrap() - 1.0).abs() < 1e-12);
        assert!(grid_correlation(&g, Axis::Freq, 1).unwrap() >= 0.95);
        assert!(grid_correlation(&g, Axis::Time, 1).unwrap() < 0.5);
        let c: Vec<f64> = (0..16).map(|s| grid_correlation(&g, Axis::Freq, s).unwrap()).collect();
        assert!(c[15] < c[1]);
        assert!(grid_correlation(&g, Axis::Time, 2).is_err());

        let ind = gen_correlated_grid(&spec(16, 1, 0.0, 0.0), RngStream::new(4, 0)).unwrap();
        assert!(grid_correlation(&ind, Axis::Freq, 1).unwrap() < 0.5);
    }

    #[test]
    fn sigma2_examples() {
        let h = CMat::from_fn(64, 1, |_, _| C64::new(1.0, 0.0));
        assert!((sigma2_from_snr(&h, 0.0) - 1.0).abs() < 1e-15);
        let h = CMat::from_fn(64, 1, |_, _| C64::new(0.5, 0.5));
        assert!((sigma2_from_snr(&h, 10.0) - 0.05).abs() < 1e-15);
        assert!(sigma2_from_snr(&h, 3.0) < sigma2_from_snr(&h, 2.0));
    }

    #[test]
    fn snr_realized_by_forward_model() {
        let c = Constellation::new(16).unwrap();
        let h = gen_iid_gaussian(8, 4, RngStream::new(6, 0)).unwrap().h;
        let s2 = sigma2_from_snr(&h, 7.0);
        let mut rng = RngStream::new(6, 1).rng();
        let (mut sig, mut noi) = (0.0, 0.0);
        for _ in 0..100_000 {
            let x = c.to_points(&c.sample_symbols(4, &mut rng));
            let hx = h.mul_vec(&x);
            let y = apply_channel(&h, &x, s2, &mut rng).unwrap();
            sig += hx.iter().map(|z| z.norm_sqr()).sum::<f64>();
            noi += y.iter().zip(&hx).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        assert!((sig / noi / 10f64.powf(0.7) - 1.0).abs() < 0.01);
        assert!((noi / 100_000.0 / (8.0 * s2) - 1.0).abs() < 0.01);
    }

    #[test]
    fn apply_channel_cases() {
        let h = gen_iid_gaussian(4, 2, RngStream::new(7, 0)).unwrap().h;
        let x = vec![C64::new(1.0, -1.0), C64::new(0.5, 0.0)];
        let mut rng = RngStream::new(7, 1).rng();
        assert_eq!(apply_channel(&h, &x, 0.0, &mut rng).unwrap(), h.mul_vec(&x));
        assert!(apply_channel(&h, &x[..1], 0.0, &mut rng).is_err());

        let z = CMat::zeros(1_000_000, 1);
        let y = apply_channel(&z, &[C64::new(1.0, 0.0)], 0.3, &mut rng).unwrap();
        let v = y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
        assert!((v / 0.3 - 1.0).abs() < 0.02);
    }

    #[test]
    fn grid_file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let g = gen_correlated_grid(&spec(3, 2, 0.5, 0.5), RngStream::new(8, 0)).unwrap();
        let p = dir.path().join("g.bin");
        save_grid(&g, &p).unwrap();
        let back = load_grid(&p).unwrap();
        assert_eq!(back, g);
        assert_eq!(encode_grid(&back), fs::read(&p).unwrap());

        let bytes = fs::read(&p).unwrap();
        match decode_grid(&bytes[..bytes.len() - 5]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, bytes.len() - 16),
            other => panic!("{other:?}"),
        }
        match decode_grid(&bytes[..10]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_grid(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[6] = 2;
        assert!(matches!(decode_grid(&bad), Err(Error::Format { offset: 6, .. })));

        let one = gen_correlated_grid(&spec(1, 1, 0.0, 0.0), RngStream::new(9, 0)).unwrap();
        let b = encode_grid(&one);
        assert_eq!(b.len(), GRID_HEADER + 16 * 8 * 16);
        assert_eq!(decode_grid(&b).unwrap(), one);
    }
}
