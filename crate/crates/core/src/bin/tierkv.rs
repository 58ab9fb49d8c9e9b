//! `tierkv`: run, sweep and inspect decode pipeline simulations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tierkv::experiment::{
    apply_param, check_output_dir, emit_report, run_experiment, ExperimentSpec, ParamValue,
};
use tierkv::pipeline::{selections_csv, Architecture};
use tierkv::workload::{gen_synthetic, load_trace, save_trace};
use tierkv::Error;

#[derive(Parser)]
#[command(name = "tierkv", version, about = "Two-tier KV cache decode pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the base configuration once per architecture.
    Run(RunArgs),
    /// Simulate every cell of the configured sweep.
    Sweep(SweepArgs),
    /// Write a synthetic trace file.
    TraceGen(TraceGenArgs),
    /// Print the header and leading records of a trace file.
    TraceDump(TraceDumpArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Architecture to run; repeat for several.
    #[arg(long = "arch", value_name = "ARCH")]
    archs: Vec<Architecture>,
    /// Run every architecture.
    #[arg(long)]
    ablation: bool,
    /// Speedup denominator.
    #[arg(long)]
    baseline: Option<Architecture>,
    /// Use this trace file instead of a synthetic trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short, env = "TIERKV_OUT_DIR", default_value = "tierkv-out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

/// Per-field overrides; each wins over the experiment file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    n_prompt: Option<ParamValue>,
    #[arg(long)]
    output_len: Option<ParamValue>,
    #[arg(long)]
    layers: Option<ParamValue>,
    #[arg(long)]
    heads: Option<ParamValue>,
    #[arg(long)]
    dims: Option<ParamValue>,
    #[arg(long)]
    alpha: Option<ParamValue>,
    #[arg(long)]
    block_size: Option<ParamValue>,
    /// A ratio or "auto".
    #[arg(long)]
    beta: Option<ParamValue>,
    #[arg(long)]
    batch: Option<ParamValue>,
    #[arg(long)]
    seed: Option<ParamValue>,
    #[arg(long)]
    hot_fraction: Option<ParamValue>,
    #[arg(long)]
    temperature: Option<ParamValue>,
    /// A factor in (0, 1] or "none".
    #[arg(long)]
    hit_decay: Option<ParamValue>,
    #[arg(long)]
    f_c: Option<ParamValue>,
    #[arg(long)]
    f_s: Option<ParamValue>,
    #[arg(long)]
    bw_ssd_host: Option<ParamValue>,
    #[arg(long)]
    bw_host_gpu: Option<ParamValue>,
    #[arg(long)]
    m0: Option<ParamValue>,
    #[arg(long)]
    headroom: Option<ParamValue>,
    #[arg(long)]
    gpu_layer_time: Option<ParamValue>,
    #[arg(long)]
    gpu_token_time: Option<ParamValue>,
    #[arg(long)]
    fixed_latency: Option<ParamValue>,
    /// Fetch SSD-resident KV straight to the GPU.
    #[arg(long)]
    p2p_fetch: bool,
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) -> Result<(), Error> {
        let fields = [
            ("n_prompt", &self.n_prompt),
            ("output_len", &self.output_len),
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("dims", &self.dims),
            ("alpha", &self.alpha),
            ("block_size", &self.block_size),
            ("beta", &self.beta),
            ("batch", &self.batch),
            ("seed", &self.seed),
            ("hot_fraction", &self.hot_fraction),
            ("temperature", &self.temperature),
            ("hit_decay", &self.hit_decay),
            ("f_c", &self.f_c),
            ("f_s", &self.f_s),
            ("bw_ssd_host", &self.bw_ssd_host),
            ("bw_host_gpu", &self.bw_host_gpu),
            ("m0", &self.m0),
            ("headroom", &self.headroom),
            ("gpu_layer_time", &self.gpu_layer_time),
            ("gpu_token_time", &self.gpu_token_time),
            ("fixed_latency", &self.fixed_latency),
        ];
        for (name, value) in fields {
            if let Some(v) = value {
                apply_param(name, v, &mut spec.config, &mut spec.profile)?;
            }
        }
        if self.p2p_fetch {
            spec.profile.p2p_fetch = true;
        }
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Also write each architecture's event timeline as JSON lines.
    #[arg(long)]
    events: bool,
    /// Also write each architecture's per-step selected sets as CSV.
    #[arg(long)]
    selections: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Sweep axis as name=v1,v2,...; repeat for several. Replaces an axis of
    /// the same name from the experiment file.
    #[arg(long = "axis", value_name = "NAME=VALUES")]
    axes: Vec<String>,
}

#[derive(Args)]
struct TraceGenArgs {
    /// Experiment file whose [config] section describes the trace.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Trace file to write.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct TraceDumpArgs {
    trace: PathBuf,
    /// Decode steps to print.
    #[arg(long, default_value_t = 3)]
    steps: usize,
}

fn load_spec(config: Option<&Path>) -> Result<ExperimentSpec, Error> {
    match config {
        Some(path) => ExperimentSpec::load(path),
        None => Ok(ExperimentSpec::default()),
    }
}

fn build_spec(common: &Common) -> Result<ExperimentSpec, Error> {
    let mut spec = load_spec(common.config.as_deref())?;
    common.overrides.apply(&mut spec)?;
    if !common.archs.is_empty() {
        spec.architectures = common.archs.clone();
    }
    if common.ablation {
        spec.ablation = true;
    }
    if common.baseline.is_some() {
        spec.baseline = common.baseline;
    }
    if common.trace.is_some() {
        spec.trace = common.trace.clone();
    }
    spec.output_dir = common.out.clone();
    Ok(spec)
}

/// Runs `spec` and writes its report; `Ok(false)` if any cell failed.
fn execute(spec: &ExperimentSpec) -> Result<(bool, tierkv::experiment::ExperimentResults), Error> {
    spec.validate()?;
    check_output_dir(&spec.output_dir)?;
    let results = run_experiment(spec)?;
    let written = emit_report(&results, &spec.output_dir)?;
    let summary = written.iter().find(|p| p.extension().is_some_and(|e| e == "txt"));
    if let Some(path) = summary {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        print!("{text}");
    }
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    Ok((results.all_succeeded(), results))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(args: RunArgs) -> Result<bool, Error> {
    let mut spec = build_spec(&args.common)?;
    spec.sweep.clear();
    spec.keep_details = args.events || args.selections;
    let (ok, results) = execute(&spec)?;
    if let Some(Ok(runs)) = results.cells.first().map(|c| &c.outcome) {
        for run in runs {
            let arch = run.metrics.arch;
            let stem = format!("{}-{arch}", results.spec_hash);
            if let (true, Some(timeline)) = (args.events, &run.timeline) {
                let mut out = Vec::new();
                timeline.write_jsonl(&mut out).map_err(|e| Error::Io {
                    path: spec.output_dir.clone(),
                    source: e,
                })?;
                write_file(&spec.output_dir.join(format!("{stem}-events.jsonl")), &out)?;
            }
            if let (true, Some(sel)) = (args.selections, &run.selections) {
                let csv = selections_csv(sel);
                write_file(&spec.output_dir.join(format!("{stem}-selections.csv")), csv.as_bytes())?;
            }
            let steps = run.metrics.step_csv();
            write_file(&spec.output_dir.join(format!("{stem}-steps.csv")), steps.as_bytes())?;
        }
    }
    Ok(ok)
}

fn sweep(args: SweepArgs) -> Result<bool, Error> {
    let mut spec = build_spec(&args.common)?;
    for axis in &args.axes {
        let (name, values) = axis
            .split_once('=')
            .ok_or_else(|| Error::Argument(format!("axis {axis:?} is not NAME=VALUES")))?;
        let values = values
            .split(',')
            .filter(|v| !v.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<ParamValue>, Error>>()?;
        spec.sweep.insert(name.trim().to_owned(), values);
    }
    if spec.sweep.is_empty() {
        return Err(Error::Argument(
            "sweep needs at least one axis (--axis NAME=VALUES or a [sweep] table)".into(),
        ));
    }
    Ok(execute(&spec)?.0)
}

fn trace_gen(args: TraceGenArgs) -> Result<bool, Error> {
    let mut spec = load_spec(args.config.as_deref())?;
    args.overrides.apply(&mut spec)?;
    let trace = gen_synthetic(&spec.config)?;
    save_trace(&trace, &args.out)?;
    eprintln!(
        "wrote {} ({} prompt tokens, {} steps, {} hot positions)",
        args.out.display(),
        trace.header.n_prompt,
        trace.steps.len(),
        trace.hot.len()
    );
    Ok(true)
}

fn norm(values: &[f32]) -> f64 {
    values.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt()
}

fn trace_dump(args: TraceDumpArgs) -> Result<bool, Error> {
    let trace = load_trace(&args.trace)?;
    let h = &trace.header;
    println!("n_prompt={}", h.n_prompt);
    println!("output_len={}", h.output_len);
    println!("layers={}", h.layers);
    println!("heads={}", h.heads);
    println!("dims={}", h.dims);
    println!("seed={}", h.seed);
    println!("hot_fraction={}", h.hot_fraction);
    println!("temperature={}", h.temperature);
    for step in trace.steps.iter().take(args.steps) {
        let parts: Vec<String> = step
            .queries
            .iter()
            .zip(&step.new_keys)
            .enumerate()
            .map(|(l, (q, k))| format!("L{l} |q|={:.4} |k|={:.4}", norm(q.values()), norm(k.values())))
            .collect();
        println!("step {} pos {}: {}", step.step, step.token_pos(), parts.join(", "));
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::TraceGen(a) => trace_gen(a),
        Command::TraceDump(a) => trace_dump(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: some cells failed, see the cells report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Argument(_) | Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
