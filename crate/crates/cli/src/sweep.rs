use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;

use segspmm::pipeline::{corpus, verify, PipelineError};
use segspmm::sim::SimOptions;
use segspmm::space::{da_spmm_points, enumerate_space, AtomicParallelismPoint, KernelConfig, TemplateError};
use segspmm::sparse::{random_dense, CsrMatrix};

use crate::input::{default_seed, parse_list, parse_random, MatrixSource};
use crate::{usage, write_output, Format};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Args)]
pub struct SweepArgs {
    /// Matrix Market file; repeatable.
    #[arg(long)]
    matrix: Vec<PathBuf>,
    /// Random matrix as RxC:density[:seed]; repeatable.
    #[arg(long)]
    random: Vec<String>,
    /// Include the built-in 20-matrix test corpus.
    #[arg(long)]
    corpus: bool,
    #[arg(long, default_value = "2,4,8,16,32")]
    g: String,
    #[arg(long, default_value = "1,2,4")]
    c: String,
    #[arg(long, default_value = "1,2,4,8,16,32")]
    r: String,
    /// Sweep only the four DA-SpMM points for each c.
    #[arg(long)]
    da_spmm: bool,
    #[arg(long = "N", default_value_t = 4)]
    n: u32,
    #[arg(long, default_value_t = 256)]
    p: u32,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, value_enum, default_value_t)]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SweepRow {
    pub schema_version: u32,
    pub matrix: String,
    pub point: String,
    pub n: u32,
    pub p: u32,
    /// verified, mismatch, no-template, not-instantiable, error or unreadable
    pub status: &'static str,
    pub max_rel_error: Option<f64>,
    pub max_warp_steps: Option<u64>,
    pub total_steps: Option<u64>,
    pub atomic_ops: Option<u64>,
    pub idle_lane_steps: Option<u64>,
    pub message: String,
}

#[derive(Serialize)]
struct Best<'a> {
    matrix: &'a str,
    point: &'a str,
    max_warp_steps: u64,
}

#[derive(Serialize)]
struct SweepTable<'a> {
    schema_version: u32,
    rows: &'a [SweepRow],
    best: Vec<Best<'a>>,
}

enum Loaded {
    Ok(String, CsrMatrix, u64),
    Unreadable(String, String),
}

fn points(args: &SweepArgs) -> Result<Vec<AtomicParallelismPoint>> {
    let (g, c, r) = (parse_list(&args.g, "--g")?, parse_list(&args.c, "--c")?, parse_list(&args.r, "--r")?);
    if !args.da_spmm {
        return Ok(enumerate_space(&g, &c, &r));
    }
    let mut out = Vec::new();
    for c in c {
        for (_, p) in da_spmm_points(c) {
            if r.contains(&p.r) && !out.contains(&p) {
                out.push(p);
            }
        }
    }
    Ok(out)
}

fn empty_row(matrix: &str, point: &str, args: &SweepArgs, status: &'static str, message: String) -> SweepRow {
    SweepRow {
        schema_version: SCHEMA_VERSION,
        matrix: matrix.to_string(),
        point: point.to_string(),
        n: args.n,
        p: args.p,
        status,
        max_rel_error: None,
        max_warp_steps: None,
        total_steps: None,
        atomic_ops: None,
        idle_lane_steps: None,
        message,
    }
}

fn cell(name: &str, a: &CsrMatrix, seed: u64, point: &AtomicParallelismPoint, args: &SweepArgs) -> SweepRow {
    let config = KernelConfig { point: *point, n: args.n, p: args.p };
    let b = random_dense(a.num_cols, args.n as usize, seed.wrapping_add(1));
    let spec = point.to_spec();
    match verify(&config, a, &b, args.tolerance, SimOptions::default()) {
        Ok(v) => {
            let m = v.metrics;
            SweepRow {
                status: if v.passed { "verified" } else { "mismatch" },
                max_rel_error: Some(v.max_rel_error),
                max_warp_steps: Some(m.max_warp_steps),
                total_steps: Some(m.total_steps),
                atomic_ops: Some(m.atomic_ops),
                idle_lane_steps: Some(m.idle_lane_steps),
                ..empty_row(name, &spec, args, "", String::new())
            }
        }
        Err(PipelineError::Template(TemplateError::NoTemplate(_))) => {
            empty_row(name, &spec, args, "no-template", String::new())
        }
        Err(PipelineError::Template(e)) => empty_row(name, &spec, args, "not-instantiable", e.to_string()),
        Err(e) => empty_row(name, &spec, args, "error", e.to_string()),
    }
}

/// Runs every (matrix, point) cell. Rows follow matrix order, then point
/// order, regardless of scheduling.
pub fn sweep_rows(args: &SweepArgs) -> Result<Vec<SweepRow>> {
    if args.n == 0 || args.p == 0 || !args.p.is_multiple_of(32) {
        return Err(usage("--N must be positive and --p a positive multiple of 32"));
    }
    let points = points(args)?;
    let seed = default_seed()?;
    let mut loaded = Vec::new();
    for path in &args.matrix {
        let src = MatrixSource::File(path.clone());
        loaded.push(match src.load() {
            Ok(a) => Loaded::Ok(src.label(), a, seed),
            Err(e) => Loaded::Unreadable(src.label(), format!("{e:#}")),
        });
    }
    for spec in &args.random {
        let src = parse_random(spec)?;
        let s = match src {
            MatrixSource::Random { seed, .. } => seed,
            MatrixSource::File(_) => seed,
        };
        loaded.push(Loaded::Ok(src.label(), src.load()?, s));
    }
    if args.corpus {
        for (name, a) in corpus(seed) {
            loaded.push(Loaded::Ok(format!("corpus:{name}"), a, seed));
        }
    }
    if loaded.is_empty() {
        return Err(usage("no matrices: pass --matrix, --random or --corpus"));
    }

    let cells: Vec<(usize, usize)> = (0..loaded.len()).flat_map(|m| (0..points.len()).map(move |p| (m, p))).collect();
    let mut rows: Vec<SweepRow> = Vec::new();
    let computed: Vec<Option<SweepRow>> = cells
        .par_iter()
        .map(|&(m, p)| match &loaded[m] {
            Loaded::Ok(name, a, s) => Some(cell(name, a, *s, &points[p], args)),
            Loaded::Unreadable(..) => None,
        })
        .collect();
    let mut computed = computed.into_iter();
    for l in &loaded {
        match l {
            Loaded::Ok(..) => rows.extend(computed.by_ref().take(points.len()).flatten()),
            Loaded::Unreadable(name, msg) => {
                computed.by_ref().take(points.len()).for_each(drop);
                rows.push(empty_row(name, "", args, "unreadable", format!("warning: skipped: {msg}")));
            }
        }
    }
    Ok(rows)
}

/// Verified row with the fewest max_warp_steps per matrix; ties keep the
/// earlier row.
pub fn best_per_matrix(rows: &[SweepRow]) -> Vec<(&str, &str, u64)> {
    let mut out: Vec<(&str, &str, u64)> = Vec::new();
    for r in rows.iter().filter(|r| r.status == "verified") {
        let steps = r.max_warp_steps.unwrap_or(u64::MAX);
        match out.iter_mut().find(|(m, _, _)| *m == r.matrix) {
            Some(b) if steps < b.2 => *b = (&r.matrix, &r.point, steps),
            Some(_) => {}
            None => out.push((&r.matrix, &r.point, steps)),
        }
    }
    out
}

pub fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let rows = sweep_rows(&args)?;
    let best = best_per_matrix(&rows);
    let text = match args.format {
        Format::Json => {
            let best =
                best.iter().map(|&(matrix, point, max_warp_steps)| Best { matrix, point, max_warp_steps }).collect();
            serde_json::to_string_pretty(&SweepTable { schema_version: SCHEMA_VERSION, rows: &rows, best })? + "\n"
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            if rows.is_empty() {
                w.write_record([
                    "schema_version",
                    "matrix",
                    "point",
                    "n",
                    "p",
                    "status",
                    "max_rel_error",
                    "max_warp_steps",
                    "total_steps",
                    "atomic_ops",
                    "idle_lane_steps",
                    "message",
                ])?;
            }
            for r in &rows {
                w.serialize(r)?;
            }
            String::from_utf8(w.into_inner()?)?
        }
    };
    write_output(args.out.as_ref(), &text)?;
    for (m, p, s) in &best {
        eprintln!("best {m}: {p} (max_warp_steps {s})");
    }
    for r in rows.iter().filter(|r| r.status == "unreadable") {
        eprintln!("{}: {}", r.matrix, r.message);
    }
    let failed = rows.iter().any(|r| matches!(r.status, "mismatch" | "error"));
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
