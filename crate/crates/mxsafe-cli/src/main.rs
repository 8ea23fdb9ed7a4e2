//! Command line frontend: generate matrices, quantize them into block
//! files, report quantization error, multiply quantized tensors and
//! count the quantization work of a training step.
//!
//! Output meant for scripts is printed as `#!key=value` lines with
//! floats in scientific notation; everything else is human prose on
//! stdout. Exit code 0 means success, 1 a usage problem and 2 a data
//! problem (unreadable file, non-finite input, shape mismatch).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mxsafe::{
    count_quantization_events, datapath_error_bound, gemm, load_dense, load_mxb, quantize_tensor,
    reference_gemm, save_dense, save_mxb, tensor_error_report, Format, MacConfig, Mapping,
    TileShape, TrainingPass,
};

#[derive(Parser)]
#[command(name = "mxsafe", version, about = "Block quantization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic matrix and write it as a dense file.
    Gen(GenArgs),
    /// Quantize a dense file into a block file.
    Quantize(QuantizeArgs),
    /// Report quantization error of a dense file under one format.
    Stats(StatsArgs),
    /// Report quantization error under several formats side by side.
    Compare(CompareArgs),
    /// Multiply two block files on the reproducible datapath.
    Matmul(MatmulArgs),
    /// Count quantization events for one linear layer's training step.
    Trainstep(TrainstepArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, value_enum, default_value_t = Distribution::Gaussian)]
    dist: Distribution,
    /// Scale parameter for gaussian and log2normal.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Lower bound for uniform.
    #[arg(long, default_value_t = -1.0)]
    lo: f64,
    /// Upper bound for uniform.
    #[arg(long, default_value_t = 1.0)]
    hi: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Distribution {
    Gaussian,
    Log2normal,
    Uniform,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Format,
    #[arg(long, value_parser = parse_tile, default_value = "1x32")]
    tile: TileShape,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = parse_format)]
    format: Format,
    #[arg(long, value_parser = parse_tile, default_value = "1x32")]
    tile: TileShape,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    input: PathBuf,
    /// Comma separated format names; defaults to every storable format.
    #[arg(long, value_parser = parse_format, value_delimiter = ',')]
    formats: Option<Vec<Format>>,
    #[arg(long, value_parser = parse_tile, default_value = "1x32")]
    tile: TileShape,
}

#[derive(Args)]
struct MatmulArgs {
    /// Left operand block file.
    #[arg(long)]
    a: PathBuf,
    /// Right operand block file.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = MappingArg::OneD)]
    mapping: MappingArg,
    #[arg(long, value_enum, default_value_t = CfgArg::Default)]
    cfg: CfgArg,
    #[arg(long)]
    out: PathBuf,
    /// Also compute a binary64 reference product and report the
    /// relative error of the result, plus the worst ratio of observed
    /// error to the per-element datapath error bound.
    #[arg(long)]
    check: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MappingArg {
    #[value(name = "1d")]
    OneD,
    Tiled,
}

#[derive(Clone, Copy, ValueEnum)]
enum CfgArg {
    Default,
    Exact,
}

#[derive(Args)]
struct TrainstepArgs {
    /// Layer dimensions as MxKxN.
    #[arg(long, value_parser = parse_dims)]
    dims: (usize, usize, usize),
    #[arg(long, value_parser = parse_tile, default_value = "8x8")]
    tile: TileShape,
    #[arg(long, value_enum, default_value_t = PassArg::Both)]
    pass: PassArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PassArg {
    Forward,
    Both,
}

fn parse_format(s: &str) -> Result<Format, String> {
    match Format::from_name(s) {
        Some(Format::Fp5E3M2) | None => Err(format!(
            "unknown format {s:?}; expected one of {}",
            mxsafe::storable_formats()
                .map(|f| f.name())
                .collect::<Vec<_>>()
                .join(", ")
        )),
        Some(f) => Ok(f),
    }
}

fn parse_tile(s: &str) -> Result<TileShape, String> {
    let (r, c) = s
        .split_once('x')
        .ok_or_else(|| format!("tile must look like 8x8, got {s:?}"))?;
    let rows: usize = r.parse().map_err(|_| format!("bad tile rows {r:?}"))?;
    let cols: usize = c.parse().map_err(|_| format!("bad tile cols {c:?}"))?;
    if rows == 0 || cols == 0 {
        return Err("tile dimensions must be positive".into());
    }
    Ok(TileShape::new(rows, cols))
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(format!("dims must look like 128x256x64, got {s:?}"));
    }
    let mut out = [0usize; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part.parse().map_err(|_| format!("bad dimension {part:?}"))?;
        if *slot == 0 {
            return Err("dimensions must be positive".into());
        }
    }
    Ok((out[0], out[1], out[2]))
}

fn emit(key: &str, value: f64) {
    println!("#!{key}={value:.8e}");
}

fn emit_count(key: &str, value: usize) {
    println!("#!{key}={value}");
}

/// Honors MXSAFE_THREADS before any parallel work; 0 or unset picks
/// the number of cores.
fn init_threads() -> Result<(), String> {
    let raw = match std::env::var("MXSAFE_THREADS") {
        Err(std::env::VarError::NotPresent) => return Ok(()),
        Err(_) => return Err("MXSAFE_THREADS is not valid unicode".into()),
        Ok(raw) => raw,
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| format!("MXSAFE_THREADS must be a non-negative integer, got {raw:?}"))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("failed to size the thread pool: {e}"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> mxsafe::Result<()> {
    match command {
        Command::Gen(args) => gen(args),
        Command::Quantize(args) => quantize(args),
        Command::Stats(args) => stats(args),
        Command::Compare(args) => compare(args),
        Command::Matmul(args) => matmul(args),
        Command::Trainstep(args) => trainstep(args),
    }
}

fn gen(args: GenArgs) -> mxsafe::Result<()> {
    let m = match args.dist {
        Distribution::Gaussian => {
            mxsafe::gaussian_matrix(args.rows, args.cols, args.sigma, args.seed)
        }
        Distribution::Log2normal => {
            mxsafe::log2_normal_matrix(args.rows, args.cols, args.sigma, args.seed)
        }
        Distribution::Uniform => {
            mxsafe::uniform_matrix(args.rows, args.cols, args.lo, args.hi, args.seed)
        }
    };
    save_dense(&args.out, &m)?;
    println!("wrote {}x{} matrix to {}", args.rows, args.cols, args.out.display());
    emit_count("elements", args.rows * args.cols);
    Ok(())
}

fn quantize(args: QuantizeArgs) -> mxsafe::Result<()> {
    let m = load_dense(&args.input)?;
    let q = quantize_tensor(&m, args.tile, args.format)?;
    let report = tensor_error_report(&m, args.format, args.tile)?;
    save_mxb(&args.out, &q)?;
    println!(
        "quantized {}x{} to {} with {} tiles, wrote {}",
        m.rows(),
        m.cols(),
        args.format,
        args.tile,
        args.out.display()
    );
    emit_count("blocks", q.block_count());
    emit("underflow_ratio", report.underflow_ratio);
    emit("mean_distance", report.mean_distance);
    Ok(())
}

fn stats(args: StatsArgs) -> mxsafe::Result<()> {
    let m = load_dense(&args.input)?;
    let report = tensor_error_report(&m, args.format, args.tile)?;
    println!(
        "{} with {} tiles over {}x{}:",
        args.format,
        args.tile,
        m.rows(),
        m.cols()
    );
    emit("mse", report.mse);
    emit("underflow_ratio", report.underflow_ratio);
    emit("max_err", report.max_abs_err);
    Ok(())
}

fn compare(args: CompareArgs) -> mxsafe::Result<()> {
    let m = load_dense(&args.input)?;
    let formats = args
        .formats
        .unwrap_or_else(|| mxsafe::storable_formats().collect());
    println!(
        "comparing {} formats with {} tiles over {}x{}:",
        formats.len(),
        args.tile,
        m.rows(),
        m.cols()
    );
    for format in formats {
        let report = tensor_error_report(&m, format, args.tile)?;
        emit(&format!("mse_{format}"), report.mse);
        emit(&format!("underflow_ratio_{format}"), report.underflow_ratio);
        emit(&format!("max_err_{format}"), report.max_abs_err);
    }
    Ok(())
}

fn matmul(args: MatmulArgs) -> mxsafe::Result<()> {
    let a = load_mxb(&args.a)?;
    let b = load_mxb(&args.b)?;
    let mapping = match args.mapping {
        MappingArg::OneD => Mapping::OneD,
        MappingArg::Tiled => Mapping::Tiled,
    };
    let cfg = match args.cfg {
        CfgArg::Default => MacConfig::default(),
        CfgArg::Exact => MacConfig::exact(),
    };
    let out = gemm(&a, &b, mapping, cfg)?;
    save_dense(&args.out, &out)?;
    println!(
        "multiplied {}x{} by {}x{}, wrote {}",
        a.dims().0,
        a.dims().1,
        b.dims().0,
        b.dims().1,
        args.out.display()
    );
    if args.check {
        let reference = reference_gemm(&a.dequantize()?, &b.dequantize()?)?;
        let mut err_inf = 0.0f64;
        let mut ref_inf = 0.0f64;
        for (y, r) in out.data().iter().zip(reference.data()) {
            err_inf = err_inf.max((y - r).abs());
            ref_inf = ref_inf.max(r.abs());
        }
        let rel = if ref_inf > 0.0 { err_inf / ref_inf } else { err_inf };
        emit("max_rel_err", rel);
        let bound = datapath_error_bound(&a, &b)?;
        let mut worst_ratio = 0.0f64;
        let mut violations = 0usize;
        for (idx, (y, r)) in out.data().iter().zip(reference.data()).enumerate() {
            let err = (y - r).abs();
            let budget = bound.data()[idx];
            if err > budget {
                violations += 1;
            }
            if budget > 0.0 {
                worst_ratio = worst_ratio.max(err / budget);
            }
        }
        emit("bound_worst_ratio", worst_ratio);
        emit_count("bound_violations", violations);
    }
    Ok(())
}

fn trainstep(args: TrainstepArgs) -> mxsafe::Result<()> {
    let pass = match args.pass {
        PassArg::Forward => TrainingPass::ForwardOnly,
        PassArg::Both => TrainingPass::ForwardBackward,
    };
    let events = count_quantization_events(args.dims, args.tile, pass);
    let (m, k, n) = args.dims;
    println!(
        "layer {m}x{k}x{n} with {} tiles quantizes {events} operand views",
        args.tile
    );
    emit_count("quant_events", events);
    Ok(())
}
