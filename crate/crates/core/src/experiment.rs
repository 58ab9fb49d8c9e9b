//! Parameter sweeps over simulated runs and their CSV reports.
//!
//! An [`ExperimentSpec`] names a base [`SimConfig`] and [`DeviceProfile`],
//! sweep axes (parameter name to value list) and the architectures to run.
//! Every cell of the cartesian product of the axes runs every architecture
//! on one synthetic trace (or on a given trace file). Axes are expanded in
//! parameter-name order, the last name varying fastest.
//!
//! # Report files
//!
//! All files are written to the output directory, prefixed with the first 12
//! hex digits of the SHA-256 of the experiment (output directory excluded). Every
//! table starts with `cell`, then one column per sweep axis, then:
//!
//! | file | columns |
//! |------|---------|
//! | `latency.csv` | `arch,makespan_s,decode_makespan_s,mean_step_latency_s` |
//! | `speedup.csv` | `baseline,arch,baseline_makespan_s,makespan_s,speedup` |
//! | `idle.csv` | `arch,gpu_busy_s,gpu_idle_s,gpu_idle_fraction` |
//! | `bytes.csv` | `arch,bytes_ssd_host,bytes_host_gpu,score_bytes,spill_bytes,migration_bytes,migrations_up,migrations_down` |
//! | `beta.csv` | `arch,target_beta,realized_beta,capped,makespan_s` (planning architectures only) |
//! | `runs.csv` | every [`MetricsReport`] column |
//! | `cells.csv` | `status,message` |
//!
//! plus `summary.txt`. Failed cells only appear in `cells.csv` and the
//! summary.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::pipeline::{
    run_simulation_with, Architecture, DeviceProfile, EventTimeline, MetricsReport,
};
use crate::vector::TokenPos;
use crate::workload::{gen_synthetic, load_trace, BetaSetting, SimConfig, Trace};

/// A sweep value: a number, or text such as `"auto"` for `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Num(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Num(v) => write!(f, "{v}"),
            ParamValue::Text(t) => f.write_str(t),
        }
    }
}

impl std::str::FromStr for ParamValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::Argument("empty parameter value".into()));
        }
        Ok(s.parse::<f64>()
            .map(ParamValue::Num)
            .unwrap_or_else(|_| ParamValue::Text(s.to_owned())))
    }
}

/// Every parameter a sweep axis or command-line override can set.
pub const PARAMETERS: [&str; 22] = [
    "n_prompt",
    "output_len",
    "layers",
    "heads",
    "dims",
    "alpha",
    "block_size",
    "beta",
    "batch",
    "seed",
    "hot_fraction",
    "temperature",
    "hit_decay",
    "f_c",
    "f_s",
    "bw_ssd_host",
    "bw_host_gpu",
    "m0",
    "headroom",
    "gpu_layer_time",
    "gpu_token_time",
    "fixed_latency",
];

fn number(name: &str, value: &ParamValue) -> Result<f64> {
    match value {
        ParamValue::Num(v) => Ok(*v),
        ParamValue::Text(t) => Err(Error::Argument(format!("{name} needs a number, got {t:?}"))),
    }
}

fn integer(name: &str, value: &ParamValue) -> Result<u64> {
    let v = number(name, value)?;
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(Error::Argument(format!("{name} needs a non-negative integer, got {v}")));
    }
    Ok(v as u64)
}

/// Sets parameter `name` on `config` or `profile`. Type errors are argument
/// errors; range checks happen when the configuration is validated.
pub fn apply_param(
    name: &str,
    value: &ParamValue,
    config: &mut SimConfig,
    profile: &mut DeviceProfile,
) -> Result<()> {
    let int = || integer(name, value);
    let usize_ = || int().map(|v| v as usize);
    let num = || number(name, value);
    match name {
        "n_prompt" => config.n_prompt = usize_()?,
        "output_len" => config.output_len = usize_()?,
        "layers" => config.layers = usize_()?,
        "heads" => config.heads = usize_()?,
        "dims" => config.dims = usize_()?,
        "alpha" => config.alpha = num()?,
        "block_size" => config.block_size = usize_()?,
        "beta" => {
            config.beta = match value {
                ParamValue::Num(b) => BetaSetting::Fixed(*b),
                ParamValue::Text(t) => t.parse()?,
            }
        }
        "batch" => config.batch = usize_()?,
        "seed" => config.seed = int()?,
        "hot_fraction" => config.skew.hot_fraction = num()?,
        "temperature" => config.skew.temperature = num()?,
        "hit_decay" => {
            config.hit_decay = match value {
                ParamValue::Text(t) if t == "none" => None,
                _ => Some(num()?),
            }
        }
        "f_c" => profile.f_c = num()?,
        "f_s" => profile.f_s = num()?,
        "bw_ssd_host" => profile.bw_ssd_host = num()?,
        "bw_host_gpu" => profile.bw_host_gpu = num()?,
        "m0" => profile.m0 = int()?,
        "headroom" => profile.headroom = int()?,
        "gpu_layer_time" => profile.gpu_layer_time = num()?,
        "gpu_token_time" => profile.gpu_token_time = num()?,
        "fixed_latency" => profile.fixed_latency = num()?,
        _ => {
            return Err(Error::Argument(format!(
                "unknown parameter {name:?}, expected one of {}",
                PARAMETERS.join(", ")
            )))
        }
    }
    Ok(())
}

/// What to run and where to write it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: SimConfig,
    pub profile: DeviceProfile,
    pub sweep: BTreeMap<String, Vec<ParamValue>>,
    pub architectures: Vec<Architecture>,
    /// Denominator of the speedup table; defaults to `ssd-baseline` when
    /// present, else the first architecture.
    pub baseline: Option<Architecture>,
    /// Runs every architecture, so the table separates the contribution of
    /// in-storage evaluation from that of the pipeline.
    pub ablation: bool,
    /// Trace file to use instead of synthetic traces.
    pub trace: Option<PathBuf>,
    /// Keep per-run timelines and selections in the results.
    pub keep_details: bool,
    #[serde(skip)]
    pub output_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            config: SimConfig::default(),
            profile: DeviceProfile::default(),
            sweep: BTreeMap::new(),
            architectures: vec![Architecture::SsdBaseline, Architecture::CsdPipelined],
            baseline: None,
            ablation: false,
            trace: None,
            keep_details: false,
            output_dir: PathBuf::from("."),
        }
    }
}

/// One point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub params: Vec<(String, ParamValue)>,
}

impl Cell {
    fn label(&self) -> String {
        if self.params.is_empty() {
            return "base".into();
        }
        let parts: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        parts.join(" ")
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let location = e
                .span()
                .map(|s| {
                    let line = text[..s.start].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "config".into());
            Error::parse(location, e.message())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { location, message } => {
                Error::parse(format!("{}: {location}", path.display()), message)
            }
            other => other,
        })
    }

    /// Architectures in run order, without duplicates.
    pub fn effective_architectures(&self) -> Vec<Architecture> {
        let mut archs: Vec<Architecture> = if self.ablation {
            Architecture::ALL.to_vec()
        } else {
            self.architectures.clone()
        };
        let mut seen = Vec::new();
        archs.retain(|a| {
            let fresh = !seen.contains(a);
            seen.push(*a);
            fresh
        });
        archs
    }

    pub fn baseline_arch(&self) -> Architecture {
        let archs = self.effective_architectures();
        self.baseline.unwrap_or_else(|| {
            if archs.contains(&Architecture::SsdBaseline) || archs.is_empty() {
                Architecture::SsdBaseline
            } else {
                archs[0]
            }
        })
    }

    /// Structural checks; per-cell value ranges are checked per cell.
    pub fn validate(&self) -> Result<()> {
        let archs = self.effective_architectures();
        if archs.is_empty() {
            return Err(Error::Argument("at least one architecture is required".into()));
        }
        let baseline = self.baseline_arch();
        if !archs.contains(&baseline) {
            return Err(Error::Argument(format!("baseline {baseline} is not among the architectures")));
        }
        for (name, values) in &self.sweep {
            if values.is_empty() {
                return Err(Error::Argument(format!("sweep axis {name} has no values")));
            }
            let (mut c, mut p) = (self.config.clone(), self.profile.clone());
            for v in values {
                apply_param(name, v, &mut c, &mut p)?;
            }
        }
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the experiment without its output
    /// directory.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    /// Cartesian product of the sweep axes; one empty cell without axes.
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells: Vec<Vec<(String, ParamValue)>> = vec![Vec::new()];
        for (name, values) in &self.sweep {
            cells = cells
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut params = prefix.clone();
                        params.push((name.clone(), v.clone()));
                        params
                    })
                })
                .collect();
        }
        cells
            .into_iter()
            .enumerate()
            .map(|(index, params)| Cell { index, params })
            .collect()
    }

    fn cell_inputs(&self, cell: &Cell) -> Result<(SimConfig, DeviceProfile)> {
        let (mut config, mut profile) = (self.config.clone(), self.profile.clone());
        for (name, value) in &cell.params {
            apply_param(name, value, &mut config, &mut profile)?;
        }
        config.validate()?;
        profile.validate()?;
        Ok((config, profile))
    }
}

/// One architecture's run in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchRun {
    pub metrics: MetricsReport,
    /// Ratio the planner aimed for, for planning architectures.
    pub target_beta: Option<f64>,
    pub timeline: Option<EventTimeline>,
    pub selections: Option<Vec<Vec<Vec<TokenPos>>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    /// Runs in architecture order, or why the cell failed.
    pub outcome: std::result::Result<Vec<ArchRun>, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResults {
    pub spec_hash: String,
    pub axes: Vec<String>,
    pub architectures: Vec<Architecture>,
    pub baseline: Architecture,
    pub cells: Vec<CellResult>,
}

impl ExperimentResults {
    pub fn failed(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }

    pub fn all_succeeded(&self) -> bool {
        self.failed() == 0
    }
}

fn run_cell(
    spec: &ExperimentSpec,
    cell: &Cell,
    archs: &[Architecture],
    loaded: Option<&Trace>,
) -> std::result::Result<Vec<ArchRun>, String> {
    let (config, profile) = spec.cell_inputs(cell).map_err(|e| e.to_string())?;
    let generated;
    let trace = match loaded {
        Some(t) => t,
        None => {
            generated = gen_synthetic(&config).map_err(|e| e.to_string())?;
            &generated
        }
    };
    archs
        .iter()
        .map(|&arch| {
            let run = run_simulation_with(arch, &profile, &config, trace, spec.keep_details)
                .map_err(|e| format!("{arch}: {e}"))?;
            let target_beta = arch.plans_capacity().then(|| match config.beta {
                BetaSetting::Auto => profile.balanced_beta(),
                BetaSetting::Fixed(b) => b,
            });
            Ok(ArchRun {
                metrics: run.metrics,
                target_beta,
                timeline: spec.keep_details.then_some(run.timeline),
                selections: run.selections,
            })
        })
        .collect()
}

/// Runs every cell of `spec`. Cells run in parallel; failures are recorded
/// per cell. Errors only for an invalid spec or an unreadable trace file.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResults> {
    spec.validate()?;
    let archs = spec.effective_architectures();
    let loaded = spec.trace.as_deref().map(load_trace).transpose()?;
    let cells = spec.cells();
    let results: Vec<CellResult> = cells
        .into_par_iter()
        .map(|cell| {
            let outcome = run_cell(spec, &cell, &archs, loaded.as_ref());
            CellResult { cell, outcome }
        })
        .collect();
    Ok(ExperimentResults {
        spec_hash: spec.hash(),
        axes: spec.sweep.keys().cloned().collect(),
        architectures: archs,
        baseline: spec.baseline_arch(),
        cells: results,
    })
}

/// Fails unless `dir` exists (or can be created) and accepts new files.
pub fn check_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".tierkv-write-probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

/// The report tables as `(file suffix, contents)`, in write order.
pub fn report_tables(results: &ExperimentResults) -> Vec<(&'static str, String)> {
    let axes = results.axes.join(",");
    let head = |cols: &str| {
        if axes.is_empty() {
            format!("cell,{cols}\n")
        } else {
            format!("cell,{axes},{cols}\n")
        }
    };
    let prefix = |c: &Cell| {
        let mut s = c.index.to_string();
        for (_, v) in &c.params {
            s.push(',');
            s.push_str(&v.to_string());
        }
        s
    };

    let mut latency = head("arch,makespan_s,decode_makespan_s,mean_step_latency_s");
    let mut speedup = head("baseline,arch,baseline_makespan_s,makespan_s,speedup");
    let mut idle = head("arch,gpu_busy_s,gpu_idle_s,gpu_idle_fraction");
    let mut bytes = head(
        "arch,bytes_ssd_host,bytes_host_gpu,score_bytes,spill_bytes,migration_bytes,migrations_up,migrations_down",
    );
    let mut beta = head("arch,target_beta,realized_beta,capped,makespan_s");
    let mut runs = head(MetricsReport::CSV_HEADER);
    let mut cells = head("status,message");

    for result in &results.cells {
        let pre = prefix(&result.cell);
        let runs_ok = match &result.outcome {
            Ok(r) => {
                cells.push_str(&format!("{pre},ok,\n"));
                r
            }
            Err(message) => {
                let clean = message.replace([',', '\n'], ";");
                cells.push_str(&format!("{pre},failed,{clean}\n"));
                continue;
            }
        };
        let base = runs_ok
            .iter()
            .find(|r| r.metrics.arch == results.baseline)
            .map(|r| r.metrics.makespan);
        for run in runs_ok {
            let m = &run.metrics;
            latency.push_str(&format!(
                "{pre},{},{},{},{}\n",
                m.arch, m.makespan, m.decode_makespan, m.mean_step_latency
            ));
            if let Some(b) = base.filter(|_| m.arch != results.baseline) {
                speedup.push_str(&format!(
                    "{pre},{},{},{b},{},{}\n",
                    results.baseline,
                    m.arch,
                    m.makespan,
                    b / m.makespan
                ));
            }
            idle.push_str(&format!(
                "{pre},{},{},{},{}\n",
                m.arch, m.gpu_busy, m.gpu_idle, m.gpu_idle_fraction
            ));
            bytes.push_str(&format!(
                "{pre},{},{},{},{},{},{},{},{}\n",
                m.arch,
                m.bytes_ssd_host,
                m.bytes_host_gpu,
                m.score_bytes,
                m.spill_bytes,
                m.migration_bytes,
                m.migrations_up,
                m.migrations_down
            ));
            if let Some(target) = run.target_beta {
                beta.push_str(&format!(
                    "{pre},{},{target},{},{},{}\n",
                    m.arch, m.realized_beta, m.capped, m.makespan
                ));
            }
            runs.push_str(&format!("{pre},{}\n", m.csv_row()));
        }
    }

    vec![
        ("latency.csv", latency),
        ("speedup.csv", speedup),
        ("idle.csv", idle),
        ("bytes.csv", bytes),
        ("beta.csv", beta),
        ("runs.csv", runs),
        ("cells.csv", cells),
        ("summary.txt", summary(results)),
    ]
}

fn summary(results: &ExperimentResults) -> String {
    let total = results.cells.len();
    let failed = results.failed();
    let archs: Vec<&str> = results.architectures.iter().map(|a| a.name()).collect();
    let mut out = format!(
        "spec {}\ncells: {} ok, {failed} failed\narchitectures: {}\nbaseline: {}\n\n",
        results.spec_hash,
        total - failed,
        archs.join(", "),
        results.baseline
    );
    for result in &results.cells {
        out.push_str(&format!("cell {} [{}]: ", result.cell.index, result.cell.label()));
        match &result.outcome {
            Err(message) => out.push_str(&format!("FAILED: {message}\n")),
            Ok(runs) => {
                let base = runs
                    .iter()
                    .find(|r| r.metrics.arch == results.baseline)
                    .map(|r| r.metrics.makespan);
                let parts: Vec<String> = runs
                    .iter()
                    .map(|r| {
                        let m = &r.metrics;
                        match base.filter(|_| m.arch != results.baseline) {
                            Some(b) => format!(
                                "{} {:.6} s ({:.2}x)",
                                m.arch,
                                m.makespan,
                                b / m.makespan
                            ),
                            None => format!("{} {:.6} s", m.arch, m.makespan),
                        }
                    })
                    .collect();
                out.push_str(&parts.join(", "));
                out.push('\n');
            }
        }
    }
    out
}

/// Writes the report tables into `dir` and returns the written paths.
pub fn emit_report(results: &ExperimentResults, dir: &Path) -> Result<Vec<PathBuf>> {
    if results.cells.is_empty() {
        return Err(Error::Argument("no results to report".into()));
    }
    check_output_dir(dir)?;
    let mut written = Vec::new();
    for (suffix, contents) in report_tables(results) {
        let path = dir.join(format!("{}-{suffix}", results.spec_hash));
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::Skew;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec {
            config: SimConfig {
                n_prompt: 200,
                output_len: 3,
                layers: 2,
                heads: 2,
                dims: 8,
                skew: Skew::default(),
                ..SimConfig::default()
            },
            profile: DeviceProfile {
                m0: 100_000,
                ..DeviceProfile::default()
            },
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn cartesian_cells_in_name_order() {
        let mut spec = small_spec();
        spec.sweep.insert("n_prompt".into(), vec![ParamValue::Num(100.0), ParamValue::Num(200.0)]);
        spec.sweep.insert("alpha".into(), vec![ParamValue::Num(0.1), ParamValue::Num(0.2), ParamValue::Num(0.3)]);
        let cells = spec.cells();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].label(), "alpha=0.1 n_prompt=100");
        assert_eq!(cells[1].label(), "alpha=0.1 n_prompt=200");
        assert_eq!(cells[5].label(), "alpha=0.3 n_prompt=200");
    }

    #[test]
    fn single_cell_two_archs_gives_one_speedup_row() {
        let results = run_experiment(&small_spec()).unwrap();
        let tables = report_tables(&results);
        let table = |name: &str| tables.iter().find(|t| t.0 == name).unwrap().1.clone();
        assert_eq!(table("speedup.csv").lines().count(), 2);
        assert_eq!(table("latency.csv").lines().count(), 3);
        assert!(table("speedup.csv").starts_with("cell,baseline,arch,"));
    }

    #[test]
    fn single_arch_single_cell_gives_one_row() {
        let spec = ExperimentSpec {
            architectures: vec![Architecture::CsdPipelined],
            ..small_spec()
        };
        let results = run_experiment(&spec).unwrap();
        let tables = report_tables(&results);
        let latency = &tables[0].1;
        assert_eq!(latency.lines().count(), 2);
        // No baseline run, so no speedup rows.
        assert_eq!(tables[1].1.lines().count(), 1);
    }

    #[test]
    fn invalid_cell_fails_alone() {
        let mut spec = small_spec();
        spec.sweep.insert("alpha".into(), vec![ParamValue::Num(0.2), ParamValue::Num(1.5)]);
        let results = run_experiment(&spec).unwrap();
        assert_eq!(results.failed(), 1);
        assert!(results.cells[0].outcome.is_ok());
        let cells = &report_tables(&results)[6].1;
        assert!(cells.contains("1,1.5,failed,"));
    }

    #[test]
    fn structural_errors_are_rejected_upfront() {
        let mut spec = small_spec();
        spec.sweep.insert("alpha".into(), vec![]);
        assert!(matches!(run_experiment(&spec), Err(Error::Argument(_))));

        let mut spec = small_spec();
        spec.sweep.insert("warp".into(), vec![ParamValue::Num(1.0)]);
        assert!(matches!(run_experiment(&spec), Err(Error::Argument(_))));

        let mut spec = small_spec();
        spec.sweep.insert("n_prompt".into(), vec![ParamValue::Num(1.5)]);
        assert!(matches!(run_experiment(&spec), Err(Error::Argument(_))));

        let spec = ExperimentSpec {
            architectures: vec![],
            ..small_spec()
        };
        assert!(matches!(run_experiment(&spec), Err(Error::Argument(_))));
    }

    #[test]
    fn ablation_runs_every_architecture() {
        let spec = ExperimentSpec {
            ablation: true,
            ..small_spec()
        };
        let results = run_experiment(&spec).unwrap();
        assert_eq!(results.architectures, Architecture::ALL.to_vec());
        let speedup = &report_tables(&results)[1].1;
        assert_eq!(speedup.lines().count(), 4);
    }

    #[test]
    fn hash_ignores_output_dir_and_tracks_content() {
        let a = small_spec();
        let b = ExperimentSpec {
            output_dir: "/elsewhere".into(),
            ..small_spec()
        };
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 12);
        let c = ExperimentSpec {
            name: "other".into(),
            ..small_spec()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn toml_spec_parses() {
        let text = r#"
name = "ctx"
architectures = ["ssd-baseline", "csd-app"]

[config]
n_prompt = 512
beta = "auto"

[config.skew]
hot_fraction = 0.1
temperature = 4.0

[profile]
f_c = 16e9
m0 = 1000000

[sweep]
n_prompt = [256, 512]
beta = [1.0, "auto"]
"#;
        let spec = ExperimentSpec::from_toml_str(text).unwrap();
        assert_eq!(spec.config.n_prompt, 512);
        assert_eq!(spec.profile.m0, 1_000_000);
        assert_eq!(spec.cells().len(), 4);
        spec.validate().unwrap();

        let err = ExperimentSpec::from_toml_str("name = \"x\"\nspeed = 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { ref location, .. } if location == "line 2"), "{err}");
    }

    #[test]
    fn apply_param_covers_every_name() {
        for name in PARAMETERS {
            let (mut c, mut p) = (SimConfig::default(), DeviceProfile::default());
            apply_param(name, &ParamValue::Num(1.0), &mut c, &mut p).unwrap();
        }
        let (mut c, mut p) = (SimConfig::default(), DeviceProfile::default());
        apply_param("beta", &ParamValue::Text("auto".into()), &mut c, &mut p).unwrap();
        assert_eq!(c.beta, BetaSetting::Auto);
        assert!(apply_param("m0", &ParamValue::Num(-1.0), &mut c, &mut p).is_err());
    }

    #[test]
    fn reports_are_byte_identical_across_runs() {
        let mut spec = small_spec();
        spec.sweep.insert("n_prompt".into(), vec![ParamValue::Num(150.0), ParamValue::Num(250.0)]);
        let a = report_tables(&run_experiment(&spec).unwrap());
        let b = report_tables(&run_experiment(&spec).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn emit_writes_hash_prefixed_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec();
        let results = run_experiment(&spec).unwrap();
        let written = emit_report(&results, dir.path()).unwrap();
        assert_eq!(written.len(), 8);
        for path in &written {
            let name = path.file_name().unwrap().to_str().unwrap();
            assert!(name.starts_with(&format!("{}-", spec.hash())), "{name}");
        }
    }

    #[test]
    fn unwritable_output_dir_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        fs::write(&file, b"x").unwrap();
        assert!(matches!(check_output_dir(&file.join("sub")), Err(Error::Io { .. })));
    }
}
