//! `forelem` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad input, 3 internal failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use forelem::concretize::{blocked_concretize, build_variant, derive_variant, BlockGeometry, ConcreteVariant};
use forelem::exec::{bind_kernel, max_rel_err, reference_oracle, run_variant, SparseOperand};
use forelem::ingest::{
    read_matrix_market, synth_matrix, triangle, unit_diagonal, write_matrix_market, Distribution,
    MmHeader, ReadOptions, SynthSpec, Triangle,
};
use forelem::ir::{builtin_kernel, parse_program, print_program, KernelKind, KernelSpec};
use forelem::search::{
    bench, coverage, coverage_csv, coverage_curve, curve_csv, enumerate_variants, results_csv,
    select_kernel, timing_table, BenchMatrix, EnumerateOptions, TimingTable,
};
use forelem::transform::{apply_pipeline, canonical_pipelines, Pipeline};

#[derive(Parser)]
#[command(name = "forelem", version, about = "Derive, run and rank sparse kernel variants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a kernel file and print it back.
    Parse {
        file: PathBuf,
        /// Print the syntax tree instead of source text.
        #[arg(long)]
        ast: bool,
    },
    /// Apply a pipeline and print the program, lowered nest and storage descriptor.
    Transform {
        #[command(flatten)]
        kernel: KernelArg,
        /// Comma-separated passes, e.g. "orth(row),encap,matdep".
        #[arg(long)]
        passes: String,
    },
    /// Enumerate the transformation tree.
    Enumerate {
        #[command(flatten)]
        kernel: KernelArg,
        #[command(flatten)]
        tree: TreeArgs,
        /// Output as csv, json or tree.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Build a variant's physical storage for a matrix.
    Build {
        #[command(flatten)]
        variant: VariantArgs,
        #[command(flatten)]
        matrix: MatrixArgs,
    },
    /// Run a variant on a matrix.
    Run {
        #[command(flatten)]
        variant: VariantArgs,
        #[command(flatten)]
        matrix: MatrixArgs,
        /// Compare against the dense oracle; fails when the error exceeds tolerance.
        #[arg(long)]
        check: bool,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Time every enumerated variant on every matrix of a directory.
    Bench {
        #[command(flatten)]
        kernel: KernelArg,
        #[command(flatten)]
        tree: TreeArgs,
        /// Directory of .mtx files.
        #[arg(long)]
        matrices: Option<PathBuf>,
        /// Synthetic matrices, `DIST:N:NNZ:SEED` with DIST uniform, banded(W) or skewed(S).
        #[arg(long = "synth")]
        synth: Vec<String>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        /// Only these variants (ids, format names or pipelines).
        #[arg(long, value_delimiter = ';')]
        variants: Vec<String>,
        /// Also write the `routine,matrix,seconds` table here.
        #[arg(long)]
        timings: Option<PathBuf>,
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Coverage of a timing table at one t or over a grid.
    Coverage {
        #[arg(long)]
        timings: PathBuf,
        /// Percent slack allowed over the best routine.
        #[arg(long, conflicts_with = "curve")]
        t: Option<f64>,
        /// Comma-separated ascending t values.
        #[arg(long, value_delimiter = ',')]
        curve: Vec<f64>,
    },
    /// Pick routines within t% of the best on k sampled matrices.
    Select {
        #[arg(long)]
        timings: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 2.0)]
        t: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic matrix in Matrix Market format.
    Synth {
        /// `DIST:N:NNZ:SEED` as for bench.
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct KernelArg {
    /// spmv, spmm(K) or trsv.
    #[arg(long, default_value = "spmv")]
    kernel: String,
}

#[derive(Args)]
struct TreeArgs {
    #[arg(long, default_value_t = 8)]
    depth: usize,
    /// Comma-separated loop block sizes.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2u32, 4, 8])]
    blocks: Vec<u32>,
}

#[derive(Args)]
struct VariantArgs {
    #[command(flatten)]
    kernel: KernelArg,
    /// Variant id, format name (COO, CSR, CCS, ITPACK, JDS), pipeline, or
    /// `hybrid(X[,Y];P1|P2...)`.
    #[arg(long)]
    variant: String,
    #[command(flatten)]
    tree: TreeArgs,
}

#[derive(Args)]
struct ShapeArgs {
    /// Keep the lower triangle.
    #[arg(long, conflicts_with = "triu")]
    tril: bool,
    /// Keep the upper triangle.
    #[arg(long)]
    triu: bool,
    /// Set the diagonal to ones.
    #[arg(long)]
    unit_diag: bool,
    /// Add repeated coordinates instead of rejecting the file.
    #[arg(long)]
    sum_duplicates: bool,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[command(flatten)]
    shape: ShapeArgs,
}

/// Failure classes, mapped to exit codes.
enum Failure {
    Input(anyhow::Error),
    Internal(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn internal(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Internal(e.into())
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn default_seed() -> anyhow::Result<u64> {
    match std::env::var("FORELEM_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .with_context(|| format!("FORELEM_SEED=`{s}` is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn seed_or_default(seed: Option<u64>) -> anyhow::Result<u64> {
    seed.map_or_else(default_seed, Ok)
}

fn kernel(arg: &KernelArg) -> anyhow::Result<KernelSpec> {
    let kind: KernelKind = arg.kernel.parse().map_err(|e: String| anyhow!(e))?;
    Ok(builtin_kernel(kind))
}

fn tree_options(t: &TreeArgs) -> anyhow::Result<EnumerateOptions> {
    if t.depth == 0 {
        bail!("--depth must be at least 1");
    }
    if t.blocks.contains(&0) {
        bail!("block sizes must be positive");
    }
    Ok(EnumerateOptions {
        depth: t.depth,
        block_sizes: t.blocks.clone(),
    })
}

fn parse_pipeline(text: &str) -> anyhow::Result<Pipeline> {
    text.parse().map_err(|e| anyhow!("{e}"))
}

fn is_variant_id(s: &str) -> bool {
    s.len() == 12 && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Resolves a variant by format name, id, hybrid spec or pipeline text.
fn resolve_variant(spec: &KernelSpec, text: &str, tree: &TreeArgs) -> anyhow::Result<ConcreteVariant> {
    let text = text.trim();
    let upper = text.to_ascii_uppercase();
    let named = match upper.as_str() {
        "ELLPACK" | "ELL" | "ELLPACK_ITPACK" => Some("ITPACK"),
        other => canonical_pipelines()
            .into_iter()
            .find(|(n, _)| *n == other)
            .map(|(n, _)| n),
    };
    if let Some(name) = named {
        let (_, pl) = canonical_pipelines()
            .into_iter()
            .find(|(n, _)| *n == name)
            .expect("name taken from the list");
        return derive_variant(&spec.program, &parse_pipeline(pl)?)
            .map_err(|e| anyhow!("{name} does not apply to {}: {e}", spec.kind));
    }
    if let Some(inner) = text.strip_prefix("hybrid(").and_then(|r| r.strip_suffix(')')) {
        let (dims, parts) = inner
            .split_once(';')
            .ok_or_else(|| anyhow!("expected hybrid(X[,Y];P1|P2...)"))?;
        let dims: Vec<u32> = dims
            .split(',')
            .map(|d| d.trim().parse().map_err(|_| anyhow!("bad block size `{d}`")))
            .collect::<anyhow::Result<_>>()?;
        let geometry = match dims.as_slice() {
            [x] => BlockGeometry { x: *x, y: None },
            [x, y] => BlockGeometry { x: *x, y: Some(*y) },
            _ => bail!("hybrid takes one or two block sizes"),
        };
        let pipelines = parts
            .split('|')
            .map(|p| resolve_variant(spec, p, tree).map(|v| v.pipeline))
            .collect::<anyhow::Result<Vec<_>>>()?;
        return Ok(blocked_concretize(spec, geometry, &pipelines)?);
    }
    if is_variant_id(text) {
        let found = canonical_pipelines()
            .into_iter()
            .filter_map(|(_, pl)| derive_variant(&spec.program, &parse_pipeline(pl).ok()?).ok())
            .find(|v| v.id == text);
        if let Some(v) = found {
            return Ok(v);
        }
        let t = enumerate_variants(spec, &tree_options(tree)?);
        return t.variant(text).cloned().ok_or_else(|| {
            anyhow!(
                "no variant `{text}` among {} {} variants at depth {}",
                t.variants.len(),
                spec.kind,
                tree.depth
            )
        });
    }
    let pl = parse_pipeline(text)?;
    Ok(derive_variant(&spec.program, &pl)?)
}

fn shape_matrix(m: SparseOperand, s: &ShapeArgs) -> SparseOperand {
    let m = if s.tril {
        triangle(&m, Triangle::Lower)
    } else if s.triu {
        triangle(&m, Triangle::Upper)
    } else {
        m
    };
    if s.unit_diag {
        unit_diagonal(&m)
    } else {
        m
    }
}

fn load_matrix(path: &Path, s: &ShapeArgs) -> anyhow::Result<SparseOperand> {
    let m = read_matrix_market(
        path,
        &ReadOptions {
            sum_duplicates: s.sum_duplicates,
        },
    )?;
    Ok(shape_matrix(m, s))
}

fn parse_synth(text: &str) -> anyhow::Result<SynthSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let [dist, n, nnz, seed] = parts.as_slice() else {
        bail!("synthetic spec `{text}` is not DIST:N:NNZ:SEED");
    };
    let num = |s: &str, what: &str| -> anyhow::Result<u64> {
        s.trim().parse().map_err(|_| anyhow!("bad {what} `{s}` in `{text}`"))
    };
    let arg = |d: &str, name: &str| -> Option<String> {
        d.strip_prefix(name)
            .and_then(|r| r.strip_prefix('('))
            .and_then(|r| r.strip_suffix(')'))
            .map(str::to_string)
    };
    let distribution = match dist.trim() {
        "uniform" => Distribution::Uniform,
        d => {
            if let Some(w) = arg(d, "banded") {
                Distribution::Banded(num(&w, "band width")? as usize)
            } else if let Some(s) = arg(d, "skewed") {
                Distribution::SkewedRows(s.trim().parse().map_err(|_| anyhow!("bad skew `{s}`"))?)
            } else {
                bail!("unknown distribution `{d}` (uniform, banded(W), skewed(S))");
            }
        }
    };
    Ok(SynthSpec {
        n: num(n, "order")? as usize,
        nnz: num(nnz, "entry count")? as usize,
        distribution,
        seed: num(seed, "seed")?,
    })
}

fn cmd_parse(file: &Path, ast: bool) -> Outcome {
    let src = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let p = parse_program(&src).map_err(|e| anyhow!("{}: {e}", file.display()))?;
    if ast {
        emit(&format!("{p:#?}\n"));
    } else {
        emit(&print_program(&p));
    }
    Ok(())
}

fn cmd_transform(k: &KernelArg, passes: &str) -> Outcome {
    let spec = kernel(k)?;
    let pl = parse_pipeline(passes)?;
    let program = apply_pipeline(&spec.program, &pl).map_err(|e| anyhow!("{e}"))?;
    emit(&format!("# program\n{}\n", print_program(&program)));
    match forelem::concretize::concretize(&program, &pl) {
        Ok(v) => {
            emit(&format!("# lowered\n{}\n", v.lowered));
            emit(&format!("# descriptor\n{}\n", v.descriptor_json()));
        }
        Err(e) => emit(&format!("# not executable: {e}\n")),
    }
    Ok(())
}

fn cmd_enumerate(k: &KernelArg, t: &TreeArgs, format: &str) -> Outcome {
    let spec = kernel(k)?;
    let tree = enumerate_variants(&spec, &tree_options(t)?);
    match format {
        "csv" => emit(&tree.to_csv()),
        "json" => emit(&format!("{}\n", tree.to_json())),
        "tree" => emit(&tree.dump()),
        other => return Err(anyhow!("unknown format `{other}` (csv, json, tree)").into()),
    }
    eprintln!(
        "{} nodes, {} executable variants, {} storage shapes",
        tree.nodes.len(),
        tree.variants.len(),
        tree.shape_count()
    );
    Ok(())
}

fn cmd_build(v: &VariantArgs, m: &MatrixArgs) -> Outcome {
    let spec = kernel(&v.kernel)?;
    let variant = resolve_variant(&spec, &v.variant, &v.tree)?;
    let matrix = load_matrix(&m.matrix, &m.shape)?;
    let input = forelem::search::bench_input(spec.kind, &matrix, 0);
    let bindings = bind_kernel(&spec, &matrix, &[input])?;
    let instance = build_variant(&variant, &bindings).map_err(internal)?;
    let out = serde_json::json!({
        "descriptor": variant.descriptor,
        "instance": instance,
    });
    emit(&format!("{}\n", serde_json::to_string_pretty(&out).map_err(internal)?));
    Ok(())
}

fn tolerance(kind: KernelKind) -> f64 {
    match kind {
        KernelKind::TrSv => 1e-8,
        _ => 1e-10,
    }
}

fn cmd_run(v: &VariantArgs, m: &MatrixArgs, check: bool, repeats: usize, seed: Option<u64>) -> Outcome {
    let spec = kernel(&v.kernel)?;
    let variant = resolve_variant(&spec, &v.variant, &v.tree)?;
    let matrix = load_matrix(&m.matrix, &m.shape)?;
    let seed = seed_or_default(seed)?;
    let input = forelem::search::bench_input(spec.kind, &matrix, seed);
    let result = run_variant(&spec, &variant, &matrix, std::slice::from_ref(&input), repeats)
        .map_err(|e| anyhow!("{e}"))?;
    let output = &result.outputs[&spec.outputs[0]];
    let mut out = serde_json::json!({
        "variant_id": variant.id,
        "format": variant.format.to_string(),
        "input": input.values,
        "output": output.values,
        "repeats": result.repeats,
        "median_seconds": result.wall_time,
        "checksum": result.checksum,
    });
    let mut failed = None;
    if check {
        let want = reference_oracle(spec.kind, &matrix, std::slice::from_ref(&input)).map_err(|e| anyhow!("{e}"))?;
        let err = max_rel_err(&output.values, &want.values);
        out["max_rel_err"] = serde_json::json!(err);
        if !(err <= tolerance(spec.kind)) {
            failed = Some(err);
        }
    }
    emit(&format!("{}\n", serde_json::to_string_pretty(&out).map_err(internal)?));
    match failed {
        Some(err) => Err(internal(anyhow!(
            "variant {} disagrees with the oracle: max_rel_err {err:e}",
            variant.id
        ))),
        None => Ok(()),
    }
}

fn bench_matrices(dir: Option<&Path>, synth: &[String], shape: &ShapeArgs) -> anyhow::Result<Vec<BenchMatrix>> {
    let mut out = Vec::new();
    if let Some(dir) = dir {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "mtx"))
            .collect();
        files.sort();
        for f in files {
            let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let matrix = load_matrix(&f, shape).with_context(|| format!("loading {}", f.display()))?;
            out.push(BenchMatrix { name, matrix });
        }
    }
    for s in synth {
        let m = synth_matrix(&parse_synth(s)?)?;
        out.push(BenchMatrix {
            name: s.clone(),
            matrix: shape_matrix(m, shape),
        });
    }
    if out.is_empty() {
        bail!("no matrices: pass --matrices DIR with .mtx files or --synth");
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    k: &KernelArg,
    t: &TreeArgs,
    dir: Option<&Path>,
    synth: &[String],
    repeats: usize,
    only: &[String],
    timings: Option<&Path>,
    shape: &ShapeArgs,
    seed: Option<u64>,
) -> Outcome {
    let spec = kernel(k)?;
    let seed = seed_or_default(seed)?;
    let matrices = bench_matrices(dir, synth, shape)?;
    let variants = if only.is_empty() {
        enumerate_variants(&spec, &tree_options(t)?).variants
    } else {
        only.iter()
            .map(|v| resolve_variant(&spec, v, t))
            .collect::<anyhow::Result<Vec<_>>>()?
    };
    let records = bench(&spec, &variants, &matrices, repeats, seed).map_err(|e| anyhow!("{e}"))?;
    emit(&results_csv(&records));
    if let Some(path) = timings {
        let table = timing_table(&records).map_err(internal)?;
        std::fs::write(path, table.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    let bad: Vec<_> = records
        .iter()
        .filter(|r| !(r.max_rel_err <= tolerance(spec.kind)))
        .collect();
    if let Some(r) = bad.first() {
        return Err(internal(anyhow!(
            "{} result(s) disagree with the oracle, first: variant {} on {} (max_rel_err {:e})",
            bad.len(),
            r.variant_id,
            r.matrix,
            r.max_rel_err
        )));
    }
    Ok(())
}

fn load_table(path: &Path) -> anyhow::Result<TimingTable> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TimingTable::from_csv(&text).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn cmd_coverage(timings: &Path, t: Option<f64>, curve: &[f64]) -> Outcome {
    let table = load_table(timings)?;
    match (t, curve.is_empty()) {
        (Some(t), _) => emit(&coverage_csv(&coverage(&table, t))),
        (None, false) => {
            let points = coverage_curve(&table, curve).map_err(|e| anyhow!("{e}"))?;
            emit(&curve_csv(&points));
        }
        (None, true) => return Err(anyhow!("pass --t T or --curve T1,T2,...").into()),
    }
    Ok(())
}

fn cmd_select(timings: &Path, k: usize, t: f64, seed: Option<u64>) -> Outcome {
    let table = load_table(timings)?;
    let seed = seed_or_default(seed)?;
    let s = select_kernel(&table, k, t, seed).map_err(|e| anyhow!("{e}"))?;
    emit(&format!("sample: {}\n", s.sample.join(",")));
    if s.routines.is_empty() {
        emit(&format!("no single routine within {t}% on all {k} matrices\n"));
    } else {
        for r in &s.routines {
            emit(&format!("{r}\n"));
        }
    }
    Ok(())
}

fn cmd_synth(spec: &str, out: &Path) -> Outcome {
    let m = synth_matrix(&parse_synth(spec)?)?;
    write_matrix_market(out, &m, MmHeader::GENERAL_REAL)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Parse { file, ast } => cmd_parse(&file, ast),
        Command::Transform { kernel, passes } => cmd_transform(&kernel, &passes),
        Command::Enumerate { kernel, tree, format } => cmd_enumerate(&kernel, &tree, &format),
        Command::Build { variant, matrix } => cmd_build(&variant, &matrix),
        Command::Run {
            variant,
            matrix,
            check,
            repeats,
            seed,
        } => cmd_run(&variant, &matrix, check, repeats, seed),
        Command::Bench {
            kernel,
            tree,
            matrices,
            synth,
            repeats,
            variants,
            timings,
            shape,
            seed,
        } => cmd_bench(
            &kernel,
            &tree,
            matrices.as_deref(),
            &synth,
            repeats,
            &variants,
            timings.as_deref(),
            &shape,
            seed,
        ),
        Command::Coverage { timings, t, curve } => cmd_coverage(&timings, t, &curve),
        Command::Select { timings, k, t, seed } => cmd_select(&timings, k, t, seed),
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("internal error: {e:#}");
            ExitCode::from(3)
        }
    }
}
