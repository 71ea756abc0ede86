mod input;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use segspmm::codegen::emit_cuda;
use segspmm::pipeline::{build_kernel, PipelineError};
use segspmm::sim::{run_with, SimMetrics, SimOptions};
use segspmm::space::{enumerate_with_rules, AtomicParallelismPoint, KernelConfig, TemplateError};
use segspmm::sparse::{dense_spmm_oracle, DenseMatrix};

use input::{parse_list, MatrixSource};

#[derive(Parser)]
#[command(name = "segspmm", version, about = "SpMM kernel compiler and SIMT simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one point on one matrix and compare against the oracle.
    Verify(VerifyArgs),
    /// Simulate many points on many matrices and tabulate the metrics.
    Sweep(sweep::SweepArgs),
    /// List every point of the space with the rule that rejects it, if any.
    Enumerate(EnumerateArgs),
    /// Write the CUDA text of one point.
    Emit(EmitArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Args)]
struct KernelArgs {
    /// Point as kind:amount,col:amount,r:N, e.g. "nnz:1,col:4,r:32".
    #[arg(long)]
    point: String,
    /// Dense column count.
    #[arg(long = "N", default_value_t = 4)]
    n: u32,
    /// Threads per block.
    #[arg(long, default_value_t = 256)]
    p: u32,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Matrix Market file.
    #[arg(long, conflicts_with = "random")]
    matrix: Option<PathBuf>,
    /// Random matrix as RxC:density[:seed].
    #[arg(long)]
    random: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Round kernel arithmetic to single precision.
    #[arg(long)]
    single_precision: bool,
    /// Write the simulated C as a text grid.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Comma-separated data amounts g.
    #[arg(long, default_value = "2,4,8,16,32")]
    g: String,
    /// Comma-separated column amounts c.
    #[arg(long, default_value = "1,2,4")]
    c: String,
    /// Comma-separated reduction parallelism values r.
    #[arg(long, default_value = "1,2,4,8,16,32")]
    r: String,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmitArgs {
    #[command(flatten)]
    kernel: KernelArgs,
    /// Matrix Market file the kernel is specialised for.
    #[arg(long, conflicts_with = "random")]
    matrix: Option<PathBuf>,
    /// Random matrix as RxC:density[:seed]; defaults to 64x64:0.1.
    #[arg(long)]
    random: Option<String>,
    /// Output .cu path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors reported with exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn kernel_config(args: &KernelArgs) -> Result<KernelConfig> {
    let point: AtomicParallelismPoint = args.point.parse().map_err(|e| usage(format!("bad --point: {e}")))?;
    if args.n == 0 || args.p == 0 || !args.p.is_multiple_of(32) {
        return Err(usage("--N must be positive and --p a positive multiple of 32"));
    }
    Ok(KernelConfig { point, n: args.n, p: args.p })
}

/// Template failures are usage errors; the rest are runtime failures.
fn pipeline_error(e: PipelineError) -> anyhow::Error {
    match e {
        PipelineError::Template(TemplateError::Illegal(rule)) => {
            usage(format!("illegal point (rule {})", rule.number()))
        }
        PipelineError::Template(t) => usage(t.to_string()),
        e => e.into(),
    }
}

fn write_output(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct VerifyReport {
    matrix: String,
    point: String,
    n: u32,
    p: u32,
    max_rel_error: f64,
    tolerance: f64,
    passed: bool,
    metrics: SimMetrics,
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let config = kernel_config(&args.kernel)?;
    let source = MatrixSource::from_flags(args.matrix.as_deref(), args.random.as_deref())?
        .ok_or_else(|| usage("one of --matrix or --random is required"))?;
    let a = source.load()?;
    let b = source.dense_operand(a.num_cols, config.n as usize);
    let kernel = build_kernel(&config, &a).map_err(pipeline_error)?;
    let opts = SimOptions { single_precision: args.single_precision, parallel_blocks: false };
    let (c, metrics) = run_with(&kernel, &a, &b, &DenseMatrix::zeros(a.num_rows, b.num_cols), opts)?;
    let max_rel_error = c.max_rel_error(&dense_spmm_oracle(&a, &b)?);
    let passed = max_rel_error <= args.tolerance;
    if let Some(out) = &args.out {
        write_output(Some(out), &c.to_text())?;
    }
    let report = VerifyReport {
        matrix: source.label(),
        point: config.point.to_spec(),
        n: config.n,
        p: config.p,
        max_rel_error,
        tolerance: args.tolerance,
        passed,
        metrics,
    };
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!(
            "{} {} on {} (N={}, p={})",
            if passed { "PASS" } else { "FAIL" },
            report.point,
            report.matrix,
            config.n,
            config.p
        );
        println!("max relative error: {:e} (tolerance {:e})", max_rel_error, args.tolerance);
        let m = &report.metrics;
        println!(
            "max_warp_steps={} total_steps={} atomic_ops={} idle_lane_steps={}",
            m.max_warp_steps, m.total_steps, m.atomic_ops, m.idle_lane_steps
        );
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct EnumerateRow {
    point: String,
    legal: bool,
    rule: Option<String>,
}

fn cmd_enumerate(args: EnumerateArgs) -> Result<ExitCode> {
    let (g, c, r) = (parse_list(&args.g, "--g")?, parse_list(&args.c, "--c")?, parse_list(&args.r, "--r")?);
    let rows: Vec<EnumerateRow> = enumerate_with_rules(&g, &c, &r)
        .into_iter()
        .map(|(p, rule)| EnumerateRow { point: p.to_spec(), legal: rule.is_none(), rule: rule.map(|r| r.to_string()) })
        .collect();
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&rows)? + "\n",
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["point", "legal", "rule"])?;
            for row in &rows {
                w.write_record([
                    row.point.as_str(),
                    if row.legal { "true" } else { "false" },
                    row.rule.as_deref().unwrap_or(""),
                ])?;
            }
            String::from_utf8(w.into_inner()?)?
        }
    };
    write_output(args.out.as_ref(), &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_emit(args: EmitArgs) -> Result<ExitCode> {
    let config = kernel_config(&args.kernel)?;
    let source = MatrixSource::from_flags(args.matrix.as_deref(), args.random.as_deref())?
        .unwrap_or_else(MatrixSource::default_random);
    let a = source.load()?;
    let kernel = build_kernel(&config, &a).map_err(pipeline_error)?;
    write_output(args.out.as_ref(), &emit_cuda(&kernel))?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => sweep::cmd_sweep(a),
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::Emit(a) => cmd_emit(a),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
