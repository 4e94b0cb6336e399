//! Monte-Carlo SER sweeps with deterministic per-block random streams,
//! training of learned detectors on demand (with an on-disk parameter
//! cache), and CSV reporting.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use crate::channel::{gen_iid_gaussian, gen_kronecker, sigma2_from_snr, ChannelGrid};
use crate::constellation::Constellation;
use crate::detectors::{Detect, DetectorKind};
use crate::error::{contract, Error, Result};
use crate::models::{init_full_params, load_params, save_params, BoundModel, IidParams, ModelParams, OampNetParams};
use crate::numerics::rng::complex_gaussian;
use crate::numerics::{stream_id, CMat, RngStream, C64};
use crate::trainer::{default_snr_range, train_offline, train_on_channel, TrainConfig};

pub const CSV_HEADER: &str = "detector,snr_db,errors,symbols,ser,wall_seconds";

// stream namespaces
const NS_CHANNEL: u64 = 1;
const NS_DATA: u64 = 2;
const NS_TRAIN: u64 = 3;

/// Blocks evaluated concurrently per detector/SNR pair. Results are folded
/// in block order, so this only affects speed.
const WAVE: usize = 4;

#[derive(Clone, Debug)]
pub enum ChannelSource {
    /// Fresh i.i.d. Gaussian channel per block.
    Iid { n_r: usize, n_t: usize },
    /// Fresh Kronecker-correlated channel per block.
    Kron { n_r: usize, n_t: usize, rho_r: f64, rho_t: f64 },
    /// Block `b` uses grid cell `b mod cells`.
    Grid(ChannelGrid),
}

impl ChannelSource {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            ChannelSource::Iid { n_r, n_t } | ChannelSource::Kron { n_r, n_t, .. } => (*n_r, *n_t),
            ChannelSource::Grid(g) => (g.n_r(), g.n_t()),
        }
    }

    /// Channel used by block `b`.
    pub fn channel(&self, seed: u64, block: u64) -> Result<CMat> {
        let stream = RngStream::new(seed, stream_id(&[NS_CHANNEL, block]));
        Ok(match self {
            ChannelSource::Iid { n_r, n_t } => gen_iid_gaussian(*n_r, *n_t, stream)?.h,
            ChannelSource::Kron { n_r, n_t, rho_r, rho_t } => gen_kronecker(*n_r, *n_t, *rho_r, *rho_t, stream)?.h,
            ChannelSource::Grid(g) => g.cells[(block % g.cells.len() as u64) as usize].h.clone(),
        })
    }

    fn describe(&self) -> String {
        match self {
            ChannelSource::Iid { n_r, n_t } => format!("iid:{n_r}x{n_t}"),
            ChannelSource::Kron { n_r, n_t, rho_r, rho_t } => format!("kron:{n_r}x{n_t}:{rho_r}:{rho_t}"),
            ChannelSource::Grid(g) => format!("grid:{:016x}", grid_hash(g)),
        }
    }
}

/// How symbol decisions are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SerCount {
    /// One decision per transmitter per channel use.
    Symbol,
    /// One decision per real dimension (two per transmitter).
    Dimension,
}

impl std::str::FromStr for SerCount {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symbol" => Ok(SerCount::Symbol),
            "dimension" => Ok(SerCount::Dimension),
            other => Err(contract(format!("unknown SER counting mode '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub iterations: usize,
    pub batch_size: usize,
    pub layers: usize,
    /// Train MMNet-iid and OAMPNet on each channel instead of offline.
    pub per_channel: bool,
    /// Defaults to the modulation's standard interval.
    pub snr_db_range: Option<(f64, f64)>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            iterations: 1000,
            batch_size: 500,
            layers: crate::models::DEFAULT_LAYERS,
            per_channel: false,
            snr_db_range: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub detectors: Vec<DetectorKind>,
    pub order: usize,
    pub channel: ChannelSource,
    pub snr_db: Vec<f64>,
    pub min_errors: u64,
    pub max_symbols: u64,
    pub seed: u64,
    /// `None` uses all cores; `MIMO_THREADS` overrides either way.
    pub threads: Option<usize>,
    /// Channel uses per block (one channel realization per block).
    pub block_uses: usize,
    pub count: SerCount,
    pub train: TrainSettings,
    pub cache_dir: Option<PathBuf>,
    /// Measure wall time; otherwise the column is written as 0 so reports
    /// stay byte-identical.
    pub timing: bool,
    /// Pre-trained channel-agnostic parameters by detector.
    pub params: HashMap<DetectorKind, ModelParams>,
}

impl SweepConfig {
    pub fn new(detectors: Vec<DetectorKind>, order: usize, channel: ChannelSource, snr_db: Vec<f64>, seed: u64) -> Self {
        Self {
            detectors,
            order,
            channel,
            snr_db,
            min_errors: 100,
            max_symbols: 10_000_000,
            seed,
            threads: None,
            block_uses: 1000,
            count: SerCount::Symbol,
            train: TrainSettings::default(),
            cache_dir: None,
            timing: false,
            params: HashMap::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.detectors.is_empty() {
            return Err(contract("no detectors"));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(contract("SNR list must be nonempty and finite"));
        }
        if self.min_errors == 0 || self.max_symbols == 0 || self.block_uses == 0 {
            return Err(contract("min_errors, max_symbols and block_uses must be >= 1"));
        }
        let (n_r, n_t) = self.channel.dims();
        if n_t == 0 || n_r < n_t {
            return Err(contract(format!("need N_r >= N_t >= 1, got {n_r}x{n_t}")));
        }
        if let ChannelSource::Grid(g) = &self.channel {
            if g.cells.is_empty() {
                return Err(contract("empty grid"));
            }
        }
        Ok(())
    }

    fn train_range(&self) -> (f64, f64) {
        self.train.snr_db_range.unwrap_or_else(|| default_snr_range(self.order))
    }

    fn train_key(&self, kind: DetectorKind) -> u64 {
        let (lo, hi) = self.train_range();
        fnv1a(
            format!(
                "{}|{}|{}|{}|{}|{lo}|{hi}|{}",
                kind.name(),
                self.order,
                self.train.layers,
                self.train.iterations,
                self.train.batch_size,
                self.seed
            )
            .as_bytes(),
        )
    }
}

/// Outcome of one block of channel uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockStats {
    pub errors: u64,
    pub symbols: u64,
    /// Channel uses where the detector failed; all their decisions count
    /// as errors.
    pub failed_uses: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SerRow {
    pub detector: DetectorKind,
    pub snr_db: f64,
    pub errors: u64,
    pub symbols: u64,
    pub ser: f64,
    pub wall_seconds: f64,
    pub failed_uses: u64,
    /// Set when the detector could not be prepared; counts stop there.
    pub failure: Option<String>,
    pub blocks: Vec<BlockStats>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SerReport {
    pub rows: Vec<SerRow>,
}

impl SerReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.detector.name(),
                r.snr_db,
                r.errors,
                r.symbols,
                r.ser,
                r.wall_seconds
            );
        }
        s
    }

    pub fn row(&self, detector: DetectorKind, snr_db: f64) -> Option<&SerRow> {
        self.rows.iter().find(|r| r.detector == detector && r.snr_db == snr_db)
    }
}

/// SNR at which `detector`'s SER crosses `target`, by log-linear
/// interpolation between the bracketing points.
pub fn snr_at_target(report: &SerReport, detector: DetectorKind, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(contract("target SER must be > 0"));
    }
    let mut pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.detector == detector && r.failure.is_none() && r.symbols > 0)
        .map(|r| (r.snr_db, r.ser))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pts.windows(2) {
        let ((s0, e0), (s1, e1)) = (w[0], w[1]);
        if e0 >= target && e1 <= target && e0 > 0.0 {
            if e0 == e1 {
                return Ok(s0);
            }
            if e1 <= 0.0 {
                break;
            }
            let f = (e0.ln() - target.ln()) / (e0.ln() - e1.ln());
            return Ok(s0 + f * (s1 - s0));
        }
    }
    Err(Error::Range(format!("{} never crosses SER {target:e}", detector.name())))
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn channel_hash(h: &CMat) -> u64 {
    let mut bytes = Vec::with_capacity(16 + h.as_slice().len() * 16);
    bytes.extend_from_slice(&(h.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(h.cols() as u64).to_le_bytes());
    for z in h.as_slice() {
        bytes.extend_from_slice(&z.re.to_bits().to_le_bytes());
        bytes.extend_from_slice(&z.im.to_bits().to_le_bytes());
    }
    fnv1a(&bytes)
}

fn grid_hash(g: &ChannelGrid) -> u64 {
    fnv1a(&crate::channel::encode_grid(g))
}

/// MPARM1 files keyed by (channel hash, config hash).
#[derive(Debug, Default)]
pub struct ParamCache {
    dir: Option<PathBuf>,
    memo: Mutex<HashMap<(u64, u64), ModelParams>>,
}

impl ParamCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn path(&self, channel: u64, config: u64) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{channel:016x}-{config:016x}.mparm")))
    }

    pub fn get_or_train(&self, channel: u64, config: u64, train: impl FnOnce() -> Result<ModelParams>) -> Result<ModelParams> {
        let key = (channel, config);
        if let Some(p) = self.memo.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        let path = self.path(channel, config);
        let params = match &path {
            Some(p) if p.exists() => load_params(p)?,
            _ => {
                let params = train()?;
                if let Some(p) = &path {
                    if let Some(d) = p.parent() {
                        std::fs::create_dir_all(d)?;
                    }
                    save_params(&params, p)?;
                }
                params
            }
        };
        self.memo.lock().expect("cache lock").insert(key, params.clone());
        Ok(params)
    }
}

/// Thread budget: `MIMO_THREADS` wins over the configured value.
pub fn resolve_threads(configured: Option<usize>) -> usize {
    std::env::var("MIMO_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .or(configured)
        .unwrap_or(0)
}

struct Sweep<'a> {
    cfg: &'a SweepConfig,
    c: Constellation,
    offline: HashMap<DetectorKind, ModelParams>,
    cache: ParamCache,
}

fn init_params(kind: DetectorKind, h: &CMat, layers: usize) -> ModelParams {
    match kind {
        DetectorKind::MmnetIid => ModelParams::Iid(IidParams::new(layers)),
        DetectorKind::OampNet => ModelParams::OampNet(OampNetParams::new(layers)),
        _ => ModelParams::Full(init_full_params(h, layers)),
    }
}

impl<'a> Sweep<'a> {
    fn train_config(&self, stream: RngStream, iterations: usize) -> TrainConfig {
        TrainConfig {
            batch_size: self.cfg.train.batch_size,
            ..TrainConfig::new(iterations, self.cfg.train_range(), stream)
        }
    }

    fn prepare_offline(&mut self) -> Result<()> {
        let (n_r, n_t) = self.cfg.channel.dims();
        for &kind in &self.cfg.detectors {
            let offline = matches!(kind, DetectorKind::MmnetIid | DetectorKind::OampNet) && !self.cfg.train.per_channel;
            if !offline || self.offline.contains_key(&kind) {
                continue;
            }
            if let Some(p) = self.cfg.params.get(&kind) {
                self.offline.insert(kind, p.clone());
                continue;
            }
            let src = fnv1a(self.cfg.channel.describe().as_bytes());
            let stream = RngStream::new(self.cfg.seed, stream_id(&[NS_TRAIN, src, kind as u64]));
            let tc = self.train_config(stream, self.cfg.train.iterations);
            let layers = self.cfg.train.layers;
            let c = &self.c;
            let p = self.cache.get_or_train(src, self.cfg.train_key(kind), || {
                let init = init_params(kind, &CMat::zeros(n_r, n_t), layers);
                Ok(train_offline(n_r, n_t, c, &tc, &init)?.params)
            })?;
            self.offline.insert(kind, p);
        }
        Ok(())
    }

    fn detector(&self, kind: DetectorKind, h: &CMat, sigma2: f64) -> Result<Box<dyn Detect>> {
        if !kind.is_learned() {
            return kind.prepare_classical(h, sigma2, &self.c);
        }
        let params = match self.offline.get(&kind) {
            Some(p) => p.clone(),
            None => {
                let ch = channel_hash(h);
                let stream = RngStream::new(self.cfg.seed, stream_id(&[NS_TRAIN, ch, kind as u64]));
                let tc = self.train_config(stream, self.cfg.train.iterations);
                let init = init_params(kind, h, self.cfg.train.layers);
                self.cache.get_or_train(ch, self.cfg.train_key(kind), || {
                    Ok(train_on_channel(h, &self.c, &tc, &init)?.params)
                })?
            }
        };
        Ok(Box::new(BoundModel::new(&params, h, sigma2, &self.c)?))
    }

    fn run_block(&self, kind: DetectorKind, snr: f64, block: u64) -> Result<BlockStats> {
        let h = self.cfg.channel.channel(self.cfg.seed, block)?;
        let (n_r, n_t) = (h.rows(), h.cols());
        let sigma2 = sigma2_from_snr(&h, snr);
        let det = self.detector(kind, &h, sigma2)?;
        let noise_sd = sigma2.sqrt();
        // same symbols and unit noise for every detector and SNR
        let mut rng = RngStream::new(self.cfg.seed, stream_id(&[NS_DATA, block])).rng();
        let per_use = match self.cfg.count {
            SerCount::Symbol => n_t as u64,
            SerCount::Dimension => 2 * n_t as u64,
        };
        let mut st = BlockStats::default();
        let mut y = vec![C64::new(0.0, 0.0); n_r];
        for _ in 0..self.cfg.block_uses {
            let s = self.c.sample_symbols(n_t, &mut rng);
            let x = self.c.to_points(&s);
            h.mul_vec_into(&x, &mut y);
            for v in &mut y {
                *v += complex_gaussian(&mut rng, 1.0) * noise_sd;
            }
            st.symbols += per_use;
            match det.detect(&y) {
                Ok(r) => {
                    st.errors += match self.cfg.count {
                        SerCount::Symbol => crate::constellation::symbol_errors(&r.symbols, &s)?,
                        SerCount::Dimension => self.c.dimension_errors(&r.symbols, &s)?,
                    } as u64;
                }
                Err(Error::Divergence { .. } | Error::Numerical { .. } | Error::Singular { .. }) => {
                    st.errors += per_use;
                    st.failed_uses += 1;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(st)
    }

    fn run_pair(&self, kind: DetectorKind, snr: f64) -> SerRow {
        let start = Instant::now();
        let mut row = SerRow {
            detector: kind,
            snr_db: snr,
            errors: 0,
            symbols: 0,
            ser: 0.0,
            wall_seconds: 0.0,
            failed_uses: 0,
            failure: None,
            blocks: Vec::new(),
        };
        let mut next = 0u64;
        'outer: while row.errors < self.cfg.min_errors && row.symbols < self.cfg.max_symbols {
            let wave: Vec<Result<BlockStats>> = (next..next + WAVE as u64)
                .into_par_iter()
                .map(|b| self.run_block(kind, snr, b))
                .collect();
            next += WAVE as u64;
            for st in wave {
                match st {
                    Ok(st) => {
                        row.errors += st.errors;
                        row.symbols += st.symbols;
                        row.failed_uses += st.failed_uses;
                        row.blocks.push(st);
                    }
                    Err(e) => {
                        row.failure = Some(e.to_string());
                        break 'outer;
                    }
                }
                if row.errors >= self.cfg.min_errors || row.symbols >= self.cfg.max_symbols {
                    break 'outer;
                }
            }
        }
        row.ser = if row.symbols > 0 { row.errors as f64 / row.symbols as f64 } else { f64::NAN };
        if self.cfg.timing {
            row.wall_seconds = start.elapsed().as_secs_f64();
        }
        row
    }
}

/// Runs every (detector, SNR) pair. Only configuration and training
/// failures abort; detector failures are recorded on their row.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SerReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolve_threads(cfg.threads))
        .build()
        .map_err(|e| contract(format!("thread pool: {e}")))?;
    let mut sweep = Sweep {
        cfg,
        c: Constellation::new(cfg.order)?,
        offline: HashMap::new(),
        cache: ParamCache::new(cfg.cache_dir.clone()),
    };
    pool.install(|| sweep.prepare_offline())?;
    let pairs: Vec<(DetectorKind, f64)> = cfg
        .detectors
        .iter()
        .flat_map(|&d| cfg.snr_db.iter().map(move |&s| (d, s)))
        .collect();
    let sweep = &sweep;
    let rows = pool.install(|| pairs.par_iter().map(|&(d, s)| sweep.run_pair(d, s)).collect());
    Ok(SerReport { rows })
}

/// Parses `a:b:c` (start, stop inclusive, step) or a comma list.
pub fn parse_snr_list(s: &str) -> Result<Vec<f64>> {
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| contract(format!("bad SNR value '{v}'")));
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(contract(format!("SNR range '{s}' must be start:stop:step")));
        }
        let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(contract(format!("empty SNR range '{s}'")));
        }
        let n = ((b - a) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| a + i as f64 * step).collect())
    } else {
        s.split(',').map(num).collect()
    }
}
