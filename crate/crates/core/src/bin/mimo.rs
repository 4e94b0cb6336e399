use std::collections::HashMap;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use mimo_detect::channel::{gen_correlated_grid, load_grid, save_grid, ChannelGrid, ChannelRealization, GridSpec};
use mimo_detect::detectors::DetectorKind;
use mimo_detect::diagnostics::{condition_number, layer_error_trace, multiplication_count, AndersonReport, CountModel};
use mimo_detect::harness::{parse_snr_list, resolve_threads, run_sweep, ChannelSource, SerCount, SweepConfig, TrainSettings};
use mimo_detect::models::{init_full_params, load_params, save_params, IidParams, ModelParams, OampNetParams};
use mimo_detect::numerics::RngStream;
use mimo_detect::trainer::{
    default_snr_range, gradient_audit, online_train_grid, sample_batch, train_offline, train_on_channel, TrainConfig,
};
use mimo_detect::{Constellation, Error};

#[derive(Parser)]
#[command(name = "mimo", version, about = "Massive-MIMO detection benchmarks, training and diagnostics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a channel dataset (MCHAN1)
    Gen(GenArgs),
    /// Monte-Carlo SER sweep to CSV
    Bench(BenchArgs),
    /// Train a learned detector
    Train(TrainArgs),
    /// Error dynamics, normality tests, condition numbers, operation counts
    Diagnose(DiagnoseArgs),
    /// Compare analytic and finite-difference gradients
    Gradcheck(GradcheckArgs),
}

fn parse_constellation(s: &str) -> Result<Constellation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_detector(s: &str) -> Result<DetectorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_ser_count(s: &str) -> Result<SerCount, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Args, Clone)]
struct ChannelArgs {
    #[arg(long, default_value_t = 16)]
    nr: usize,
    #[arg(long, default_value_t = 8)]
    nt: usize,
    /// `iid`, `kron`, or the path of an MCHAN1 file
    #[arg(long, default_value = "iid")]
    channel: String,
    #[arg(long = "rho-r", default_value_t = 0.7)]
    rho_r: f64,
    #[arg(long = "rho-t", default_value_t = 0.7)]
    rho_t: f64,
}

impl ChannelArgs {
    fn source(&self) -> Result<ChannelSource, Error> {
        Ok(match self.channel.as_str() {
            "iid" => ChannelSource::Iid { n_r: self.nr, n_t: self.nt },
            "kron" => ChannelSource::Kron {
                n_r: self.nr,
                n_t: self.nt,
                rho_r: self.rho_r,
                rho_t: self.rho_t,
            },
            path => ChannelSource::Grid(load_grid(path)?),
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum GenModel {
    Iid,
    Kron,
    Grid,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 16)]
    nr: usize,
    #[arg(long, default_value_t = 8)]
    nt: usize,
    #[arg(long = "f", default_value_t = 1)]
    f_count: usize,
    #[arg(long = "t", default_value_t = 1)]
    t_count: usize,
    #[arg(long, value_enum, default_value = "grid")]
    model: GenModel,
    #[arg(long = "corr-f", default_value_t = 0.99)]
    corr_f: f64,
    #[arg(long = "corr-t", default_value_t = 0.9)]
    corr_t: f64,
    #[arg(long = "rho-r", default_value_t = 0.0)]
    rho_r: f64,
    #[arg(long = "rho-t", default_value_t = 0.0)]
    rho_t: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long = "train-iters", default_value_t = 1000)]
    train_iters: usize,
    #[arg(long = "train-batch", default_value_t = 500)]
    train_batch: usize,
    #[arg(long, default_value_t = 10)]
    layers: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    ch: ChannelArgs,
    #[arg(long = "mod", default_value = "qam4", value_parser = parse_constellation)]
    modulation: Constellation,
    #[arg(long, value_parser = parse_detector, value_delimiter = ',', default_value = "mmse")]
    detectors: Vec<DetectorKind>,
    /// `start:stop:step` or a comma list, in dB
    #[arg(long, default_value = "4:9:1")]
    snr: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "min-errors", default_value_t = 100)]
    min_errors: u64,
    #[arg(long = "max-symbols", default_value_t = 10_000_000)]
    max_symbols: u64,
    #[arg(long = "block-uses", default_value_t = 1000)]
    block_uses: usize,
    #[command(flatten)]
    train: TrainFlags,
    /// Train MMNet-iid and OAMPNet per channel instead of offline
    #[arg(long = "per-channel")]
    per_channel: bool,
    /// `symbol` or `dimension`
    #[arg(long = "ser-count", default_value = "symbol", value_parser = parse_ser_count)]
    ser_count: SerCount,
    /// Record wall time (makes the CSV run-dependent)
    #[arg(long)]
    timing: bool,
    #[arg(long = "cache-dir")]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Offline-trained parameters, as `detector=path`
    #[arg(long = "params")]
    params: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum TrainMode {
    Offline,
    Channel,
    Online,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    ch: ChannelArgs,
    #[arg(long, value_enum, default_value = "offline")]
    mode: TrainMode,
    #[arg(long, value_parser = parse_detector, default_value = "mmnet-iid")]
    model: DetectorKind,
    #[arg(long = "mod", default_value = "qam4", value_parser = parse_constellation)]
    modulation: Constellation,
    #[command(flatten)]
    train: TrainFlags,
    /// Iteration budgets for the online mode
    #[arg(long = "first-iters", default_value_t = 1000)]
    first_iters: usize,
    #[arg(long = "rest-iters", default_value_t = 3)]
    rest_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// MPARM1 file, or a directory for the online mode
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(subcommand)]
    what: Diagnose,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    ch: ChannelArgs,
    /// MPARM1 file of the model to analyse
    #[arg(long)]
    params: PathBuf,
    #[arg(long = "mod", default_value = "qam4", value_parser = parse_constellation)]
    modulation: Constellation,
    #[arg(long, default_value_t = 10.0)]
    snr: f64,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Diagnose {
    /// Per-layer linear and denoiser error norms
    Trace(TraceArgs),
    /// Anderson–Darling statistic per layer and transmitter
    Anderson(TraceArgs),
    /// Condition numbers of sampled channels
    Cond {
        #[command(flatten)]
        ch: ChannelArgs,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multiplications per detected signal
    Ops {
        #[arg(long, default_value_t = 64)]
        nr: usize,
        #[arg(long, default_value_t = 16)]
        nt: usize,
        #[arg(long, default_value_t = 10)]
        layers: usize,
        #[arg(long, default_value_t = 100.0)]
        amortization: f64,
        #[arg(long = "mod", default_value = "qam4", value_parser = parse_constellation)]
        modulation: Constellation,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_parser = parse_detector, default_value = "mmnet")]
    model: DetectorKind,
    #[arg(long, default_value_t = 4)]
    nr: usize,
    #[arg(long, default_value_t = 2)]
    nt: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long = "mod", default_value = "qam4", value_parser = parse_constellation)]
    modulation: Constellation,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 5.0)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn install_threads(threads: Option<usize>) {
    let n = resolve_threads(threads);
    // only fails if a global pool already exists
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn learned_init(kind: DetectorKind, h: Option<&mimo_detect::CMat>, layers: usize) -> Result<ModelParams, Failure> {
    Ok(match (kind, h) {
        (DetectorKind::MmnetIid, _) => ModelParams::Iid(IidParams::new(layers)),
        (DetectorKind::OampNet, _) => ModelParams::OampNet(OampNetParams::new(layers)),
        (DetectorKind::Mmnet, Some(h)) => ModelParams::Full(init_full_params(h, layers)),
        (DetectorKind::Mmnet, None) => {
            return Err(Failure::Usage("mmnet is trained per channel, not offline".into()))
        }
        (other, _) => return Err(Failure::Usage(format!("{} is not a learned detector", other.name()))),
    })
}

fn cmd_gen(a: GenArgs) -> Result<(), Failure> {
    let stream = RngStream::new(a.seed, 0);
    let grid = match a.model {
        GenModel::Grid => gen_correlated_grid(
            &GridSpec {
                n_r: a.nr,
                n_t: a.nt,
                f_count: a.f_count,
                t_count: a.t_count,
                rho_r: a.rho_r,
                rho_t: a.rho_t,
                corr_f: a.corr_f,
                corr_t: a.corr_t,
            },
            stream,
        )?,
        GenModel::Iid | GenModel::Kron => {
            let src = match a.model {
                GenModel::Iid => ChannelSource::Iid { n_r: a.nr, n_t: a.nt },
                _ => ChannelSource::Kron {
                    n_r: a.nr,
                    n_t: a.nt,
                    rho_r: a.rho_r,
                    rho_t: a.rho_t,
                },
            };
            let n = a.f_count * a.t_count;
            if n == 0 {
                return Err(Failure::Usage("--f and --t must be >= 1".into()));
            }
            let mut cells = Vec::with_capacity(n);
            for i in 0..n {
                let mut cell = ChannelRealization::new(src.channel(a.seed, i as u64)?);
                cell.freq_index = i % a.f_count;
                cell.time_index = i / a.f_count;
                cells.push(cell);
            }
            ChannelGrid {
                f_count: a.f_count,
                t_count: a.t_count,
                cells,
            }
        }
    };
    save_grid(&grid, &a.out)?;
    eprintln!("wrote {} channels to {}", grid.cells.len(), a.out.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    let snr = parse_snr_list(&a.snr).map_err(|e| Failure::Usage(e.to_string()))?;
    let mut cfg = SweepConfig::new(a.detectors, a.modulation.order(), a.ch.source()?, snr, a.seed);
    cfg.min_errors = a.min_errors;
    cfg.max_symbols = a.max_symbols;
    cfg.block_uses = a.block_uses;
    cfg.count = a.ser_count;
    cfg.timing = a.timing;
    cfg.cache_dir = a.cache_dir;
    cfg.threads = a.threads;
    cfg.train = TrainSettings {
        iterations: a.train.train_iters,
        batch_size: a.train.train_batch,
        layers: a.train.layers,
        per_channel: a.per_channel,
        snr_db_range: None,
    };
    let mut params = HashMap::new();
    for spec in &a.params {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--params expects detector=path, got '{spec}'")))?;
        let kind = parse_detector(name).map_err(Failure::Usage)?;
        params.insert(kind, load_params(path)?);
    }
    cfg.params = params;
    let report = run_sweep(&cfg)?;
    for r in &report.rows {
        if let Some(f) = &r.failure {
            eprintln!("{} at {} dB failed: {f}", r.detector.name(), r.snr_db);
        }
        if r.failed_uses > 0 {
            eprintln!("{} at {} dB: {} channel uses failed", r.detector.name(), r.snr_db, r.failed_uses);
        }
    }
    emit(&a.out, &report.to_csv())
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    install_threads(a.threads);
    let c = a.modulation;
    let mut cfg = TrainConfig::new(a.train.train_iters, default_snr_range(c.order()), RngStream::new(a.seed, 0));
    cfg.batch_size = a.train.train_batch;
    match a.mode {
        TrainMode::Offline => {
            let init = learned_init(a.model, None, a.train.layers)?;
            let out = train_offline(a.ch.nr, a.ch.nt, &c, &cfg, &init)?;
            save_params(&out.params, &a.out)?;
            println!("initial_loss,final_loss\n{},{}", out.initial_loss, out.final_loss);
        }
        TrainMode::Channel => {
            let h = a.ch.source()?.channel(a.seed, 0)?;
            let init = learned_init(a.model, Some(&h), a.train.layers)?;
            let out = train_on_channel(&h, &c, &cfg, &init)?;
            save_params(&out.params, &a.out)?;
            println!("initial_loss,final_loss\n{},{}", out.initial_loss, out.final_loss);
        }
        TrainMode::Online => {
            if a.model != DetectorKind::Mmnet {
                return Err(Failure::Usage("online training applies to mmnet".into()));
            }
            let ChannelSource::Grid(grid) = a.ch.source()? else {
                return Err(Failure::Usage("online training needs --channel <grid file>".into()));
            };
            let out = online_train_grid(&grid, &c, a.first_iters, a.rest_iters, &cfg, a.train.layers)?;
            std::fs::create_dir_all(&a.out)?;
            for (i, p) in out.params.iter().enumerate() {
                let (f, t) = (i % grid.f_count, i / grid.f_count);
                save_params(p, a.out.join(format!("f{f}_t{t}.mparm")))?;
            }
            println!("iterations_per_channel\n{}", out.iterations_per_channel(grid.f_count));
        }
    }
    Ok(())
}

fn trace_for(a: &TraceArgs) -> Result<mimo_detect::diagnostics::LayerTrace, Failure> {
    let params = load_params(&a.params)?;
    let h = a.ch.source()?.channel(a.seed, 0)?;
    let s2 = mimo_detect::channel::sigma2_from_snr(&h, a.snr);
    Ok(layer_error_trace(&params, &h, s2, &a.modulation, a.samples, RngStream::new(a.seed, 1))?)
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<(), Failure> {
    match a.what {
        Diagnose::Trace(t) => emit(&t.out, &trace_for(&t)?.to_csv()),
        Diagnose::Anderson(t) => emit(&t.out, &AndersonReport::from_trace(&trace_for(&t)?)?.to_csv()),
        Diagnose::Cond { ch, count, seed, out } => {
            let src = ch.source()?;
            let mut s = String::from("draw,condition\n");
            for i in 0..count {
                let k = condition_number(&src.channel(seed, i)?)?;
                s.push_str(&format!("{i},{k}\n"));
            }
            emit(&out, &s)
        }
        Diagnose::Ops { nr, nt, layers, amortization, modulation, out } => {
            let m = CountModel {
                amortization,
                order: modulation.order(),
                ..CountModel::default()
            };
            let mut s = String::from("detector,multiplications\n");
            for kind in DetectorKind::ALL {
                s.push_str(&format!("{},{}\n", kind.name(), multiplication_count(kind, nr, nt, layers, &m)));
            }
            emit(&out, &s)
        }
    }
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let src = ChannelSource::Iid { n_r: a.nr, n_t: a.nt };
    let h = src.channel(a.seed, 0)?;
    let mut params = learned_init(a.model, Some(&h), a.layers)?;
    // move off the symmetric initial point
    let mut rng = RngStream::new(a.seed, 2).rng();
    let mut flat = params.to_flat();
    for v in &mut flat {
        *v += 0.2 * rng.gen_range(-1.0..1.0);
    }
    params.set_flat(&flat)?;
    let batch = sample_batch(&h, &a.modulation, (a.snr, a.snr), a.batch, RngStream::new(a.seed, 1));
    let audit = gradient_audit(&params, &batch, &a.modulation)?;
    println!("max_rel_error={:e} checked={} total={}", audit.max_rel_error, audit.checked, audit.total);
    if audit.max_rel_error < 1e-5 {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("gradient mismatch {:e}", audit.max_rel_error)))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Diagnose(a) => cmd_diagnose(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
