use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lgm_core::bench::bench_run;
use lgm_core::infer::{infer, read_image};
use lgm_core::model::{load_weights, save_weights, Model, ModelConfig, WeightStore};
use lgm_core::selftest::{run_selftest, SelftestOptions};
use lgm_core::train::{train_toy, TrainOptions};
use lgm_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "lgm-pose", version, about = "Pose network cost counting, benchmarking, training and inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time forward passes on a random input.
    Bench(BenchArgs),
    /// Report parameter and MAC counts.
    Count(CountArgs),
    /// Decode keypoints from one image.
    Infer(InferArgs),
    /// Train on procedurally rendered blob images.
    TrainToy(TrainArgs),
    /// Run the built-in consistency suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: PathBuf,
    /// Input as WIDTHxHEIGHT; defaults to the configured size.
    #[arg(long, value_parser = parse_size)]
    input_size: Option<[usize; 2]>,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    iters: u64,
    /// Worker threads; LGM_THREADS takes precedence.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    threads: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    per_layer: bool,
    /// Count at WIDTHxHEIGHT instead of the configured size.
    #[arg(long, value_parser = parse_size)]
    input_size: Option<[usize; 2]>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    /// Binary PPM or raw tensor file.
    #[arg(long)]
    image: PathBuf,
    /// Write the raw heatmaps as a tensor file.
    #[arg(long)]
    dump_heatmaps: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Save the trained weights.
    #[arg(long)]
    save_weights: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Write the summary as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, hide = true)]
    corrupt_npt: bool,
}

fn parse_size(s: &str) -> Result<[usize; 2], String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|n| *n > 0);
    match (parse(w), parse(h)) {
        (Some(w), Some(h)) => Ok([w, h]),
        _ => Err(format!("expected positive WIDTHxHEIGHT, got {s:?}")),
    }
}

enum Failure {
    Usage(String),
    Check(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Check(_) => EXIT_FAILURE,
            Failure::Lib(e) => match e {
                Error::InvalidArgument(_) => EXIT_USAGE,
                Error::Io(_) | Error::Format(_) | Error::Json(_) | Error::Config(_) | Error::Weights(_) => EXIT_IO,
                Error::Shape(_) | Error::Diverged(_) => EXIT_FAILURE,
            },
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    std::fs::write(path, text + "\n").map_err(Error::from)?;
    Ok(())
}

fn threads(flag: u64) -> Result<usize, Failure> {
    match std::env::var("LGM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Usage(format!("LGM_THREADS must be a positive integer, got {v:?}"))),
        Err(_) => Ok(flag as usize),
    }
}

fn bench(a: BenchArgs) -> Result<(), Failure> {
    let threads = threads(a.threads)?;
    let cfg = ModelConfig::load(&a.config)?;
    let size = a.input_size.unwrap_or([cfg.input_size[1], cfg.input_size[0]]);
    let report = bench_run(&cfg, size, a.warmup, a.iters as usize, threads, a.seed)?;
    print!("{}", report.table());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn count(a: CountArgs) -> Result<(), Failure> {
    let mut cfg = ModelConfig::load(&a.config)?;
    if let Some([w, h]) = a.input_size {
        cfg = cfg.with_input_size(h, w);
    }
    let model = Model::<f32>::build(&cfg)?;
    let report = model.cost_report();
    if a.per_layer {
        print!("{}", report.table());
    }
    println!("input      {}x{}", cfg.input_size[1], cfg.input_size[0]);
    println!("params     {}", report.params());
    println!("MACs       {}", report.macs());
    println!("conv MACs  {}", report.conv_macs());
    println!("FLOPs(2x)  {}", report.flops_2x());
    Ok(())
}

fn run_infer(a: InferArgs) -> Result<(), Failure> {
    let cfg = ModelConfig::load(&a.config)?;
    let mut model = Model::<f32>::build(&cfg)?;
    load_weights(&mut model, &a.weights)?;
    let image = read_image(&a.image)?;
    let out = infer(&model, &image)?;
    if let Some(path) = &a.dump_heatmaps {
        let mut store = WeightStore::new();
        store.insert("heatmaps", out.heatmaps.clone()).map_err(Error::from)?;
        store.save(path)?;
    }
    let text = serde_json::to_string_pretty(&out).map_err(Error::from)?;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::from(e).into()),
        _ => Ok(()),
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = ModelConfig::load(&a.config)?;
    let mut opts = TrainOptions::new(a.steps, a.seed);
    opts.samples = a.samples as usize;
    let (model, report) = train_toy(&cfg, &opts)?;
    println!(
        "steps {}  loss {:.6} -> {:.6}  eval {:.6}  pckh {}  within-2 {:.3}",
        report.steps,
        report.initial_loss,
        report.final_loss,
        report.final_eval_loss,
        report.final_pckh.map_or("n/a".to_string(), |v| format!("{v:.3}")),
        report.within_two_cells
    );
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if let Some(path) = &a.save_weights {
        save_weights(&model, path)?;
    }
    Ok(())
}

fn selftest(a: SelftestArgs) -> Result<(), Failure> {
    let report = run_selftest(SelftestOptions { corrupt_npt: a.corrupt_npt });
    print!("{}", report.table());
    if let Some(out) = &a.out {
        write_json(out, &report.without_timing())?;
    }
    if report.ok() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} check(s) failed", report.failed)))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Bench(a) => bench(a),
        Command::Count(a) => count(a),
        Command::Infer(a) => run_infer(a),
        Command::TrainToy(a) => train(a),
        Command::Selftest(a) => selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) | Failure::Check(m) => eprintln!("error: {m}"),
                Failure::Lib(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(f.code())
        }
    }
}
