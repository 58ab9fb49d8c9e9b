//! C ABI for `tierkv`.
//!
//! Every fallible function returns a [`KvtStatus`]; on failure the message
//! is kept per thread and read with [`kvt_last_error_message`]. Handles
//! ([`KvtReport`], [`KvtPool`]) are opaque and must be released with their
//! `_free` function. Panics never cross the boundary; they surface as
//! [`KvtStatus::Panic`].
//!
//! Entry points are safe `extern "C"` functions: null pointers are rejected,
//! and any other pointer is trusted to be valid for the documented length.

#![allow(clippy::not_unsafe_ptr_arg_deref)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use tierkv::pipeline::{run_simulation, solve_beta, Architecture, DeviceProfile, SimulationRun};
use tierkv::pools::{KvEntry, MigrationReport, PoolConfig, PoolState, Tier};
use tierkv::vector::{oracle_top_k, score_token, KeyVec, QueryVec, Shape};
use tierkv::workload::{gen_synthetic, BetaSetting, SimConfig, Skew};
use tierkv::{run_hie, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Capacity = 4,
    Consistency = 5,
    State = 6,
    Parse = 7,
    Validation = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

/// Architecture codes accepted by [`kvt_simulate`].
#[repr(u32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KvtArchitecture {
    SsdBaseline = 0,
    Prefetch = 1,
    Csd = 2,
    CsdApp = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(message: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = message);
}

fn status_of(err: &Error) -> KvtStatus {
    match err {
        Error::Config(_) => KvtStatus::Config,
        Error::Argument(_) => KvtStatus::InvalidArgument,
        Error::Capacity(_) => KvtStatus::Capacity,
        Error::Consistency(_) => KvtStatus::Consistency,
        Error::State(_) => KvtStatus::State,
        Error::Parse { .. } => KvtStatus::Parse,
        Error::Validation(_) => KvtStatus::Validation,
        Error::Io { .. } => KvtStatus::Io,
        Error::Internal(_) => KvtStatus::Internal,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> KvtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error(String::new());
            KvtStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            KvtStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(panic) => {
            let text = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {text}"));
            KvtStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass pointers that are null or valid for reads.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: callers pass pointers that are null or valid for writes.
    unsafe { p.as_mut() }.ok_or(Failure::Null(what))
}

fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and, per the API contract, valid for `len` reads.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and, per the API contract, valid for `len` writes.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `capacity` bytes, into `buffer`. Returns the full message
/// length without the terminator. `buffer` may be null to query the length.
#[no_mangle]
pub extern "C" fn kvt_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let message = e.borrow();
        let bytes = message.as_bytes();
        if !buffer.is_null() && capacity > 0 {
            let n = bytes.len().min(capacity - 1);
            // SAFETY: the caller guarantees `capacity` writable bytes.
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buffer.cast::<u8>(), n);
                *buffer.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kvt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Run configuration. `beta <= 0` selects the throughput ratio;
/// `hit_decay <= 0` disables decay.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KvtSimConfig {
    pub n_prompt: u64,
    pub output_len: u64,
    pub layers: u64,
    pub heads: u64,
    pub dims: u64,
    pub alpha: f64,
    pub block_size: u64,
    pub beta: f64,
    pub batch: u64,
    pub seed: u64,
    pub hot_fraction: f64,
    pub temperature: f64,
    pub hit_decay: f64,
}

impl From<&SimConfig> for KvtSimConfig {
    fn from(c: &SimConfig) -> Self {
        Self {
            n_prompt: c.n_prompt as u64,
            output_len: c.output_len as u64,
            layers: c.layers as u64,
            heads: c.heads as u64,
            dims: c.dims as u64,
            alpha: c.alpha,
            block_size: c.block_size as u64,
            beta: match c.beta {
                BetaSetting::Auto => 0.0,
                BetaSetting::Fixed(b) => b,
            },
            batch: c.batch as u64,
            seed: c.seed,
            hot_fraction: c.skew.hot_fraction,
            temperature: c.skew.temperature,
            hit_decay: c.hit_decay.unwrap_or(0.0),
        }
    }
}

fn to_usize(v: u64, name: &str) -> Result<usize, Error> {
    usize::try_from(v).map_err(|_| Error::Argument(format!("{name} {v} does not fit in usize")))
}

impl TryFrom<&KvtSimConfig> for SimConfig {
    type Error = Error;

    fn try_from(c: &KvtSimConfig) -> Result<Self, Error> {
        Ok(SimConfig {
            n_prompt: to_usize(c.n_prompt, "n_prompt")?,
            output_len: to_usize(c.output_len, "output_len")?,
            layers: to_usize(c.layers, "layers")?,
            heads: to_usize(c.heads, "heads")?,
            dims: to_usize(c.dims, "dims")?,
            alpha: c.alpha,
            block_size: to_usize(c.block_size, "block_size")?,
            beta: if c.beta > 0.0 {
                BetaSetting::Fixed(c.beta)
            } else {
                BetaSetting::Auto
            },
            batch: to_usize(c.batch, "batch")?,
            seed: c.seed,
            skew: Skew {
                hot_fraction: c.hot_fraction,
                temperature: c.temperature,
            },
            hit_decay: (c.hit_decay > 0.0).then_some(c.hit_decay),
        })
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct KvtDeviceProfile {
    pub f_c: f64,
    pub f_s: f64,
    pub bw_ssd_host: f64,
    pub bw_host_gpu: f64,
    pub m0: u64,
    pub headroom: u64,
    pub gpu_layer_time: f64,
    pub gpu_token_time: f64,
    pub fixed_latency: f64,
    /// Nonzero to fetch SSD-resident KV straight to the GPU.
    pub p2p_fetch: u8,
}

impl From<&DeviceProfile> for KvtDeviceProfile {
    fn from(p: &DeviceProfile) -> Self {
        Self {
            f_c: p.f_c,
            f_s: p.f_s,
            bw_ssd_host: p.bw_ssd_host,
            bw_host_gpu: p.bw_host_gpu,
            m0: p.m0,
            headroom: p.headroom,
            gpu_layer_time: p.gpu_layer_time,
            gpu_token_time: p.gpu_token_time,
            fixed_latency: p.fixed_latency,
            p2p_fetch: u8::from(p.p2p_fetch),
        }
    }
}

impl From<&KvtDeviceProfile> for DeviceProfile {
    fn from(p: &KvtDeviceProfile) -> Self {
        DeviceProfile {
            f_c: p.f_c,
            f_s: p.f_s,
            bw_ssd_host: p.bw_ssd_host,
            bw_host_gpu: p.bw_host_gpu,
            m0: p.m0,
            headroom: p.headroom,
            gpu_layer_time: p.gpu_layer_time,
            gpu_token_time: p.gpu_token_time,
            fixed_latency: p.fixed_latency,
            p2p_fetch: p.p2p_fetch != 0,
        }
    }
}

/// Fills `out` with the library's default run configuration.
#[no_mangle]
pub extern "C" fn kvt_sim_config_default(out: *mut KvtSimConfig) -> KvtStatus {
    guard(|| {
        *non_null_mut(out, "out")? = KvtSimConfig::from(&SimConfig::default());
        Ok(())
    })
}

/// Fills `out` with the library's default device profile.
#[no_mangle]
pub extern "C" fn kvt_device_profile_default(out: *mut KvtDeviceProfile) -> KvtStatus {
    guard(|| {
        *non_null_mut(out, "out")? = KvtDeviceProfile::from(&DeviceProfile::default());
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvtCapacityPlan {
    pub target_beta: f64,
    pub beta: f64,
    pub m_c: f64,
    pub m_s: f64,
    pub total: f64,
    pub capped: u8,
}

/// Splits `total_bytes` between CPU and SSD in the throughput ratio.
#[no_mangle]
pub extern "C" fn kvt_solve_beta(
    profile: *const KvtDeviceProfile,
    total_bytes: f64,
    out: *mut KvtCapacityPlan,
) -> KvtStatus {
    guard(|| {
        let profile = DeviceProfile::from(non_null(profile, "profile")?);
        let out = non_null_mut(out, "out")?;
        let plan = solve_beta(&profile, total_bytes)?;
        *out = KvtCapacityPlan {
            target_beta: plan.target_beta,
            beta: plan.beta,
            m_c: plan.m_c,
            m_s: plan.m_s,
            total: plan.total,
            capped: u8::from(plan.capped),
        };
        Ok(())
    })
}

fn shape(heads: usize, dims: usize) -> Result<Shape, Error> {
    Shape::new(heads, dims)
}

/// Importance of one key (`heads * dims` floats) for one query.
#[no_mangle]
pub extern "C" fn kvt_score_token(
    query: *const f32,
    key: *const f32,
    heads: usize,
    dims: usize,
    out: *mut f64,
) -> KvtStatus {
    guard(|| {
        let s = shape(heads, dims)?;
        let q = QueryVec::new(0, s, slice(query, s.len(), "query")?.to_vec())?;
        let k = KeyVec::new(0, s, slice(key, s.len(), "key")?.to_vec())?;
        *non_null_mut(out, "out")? = score_token(&q, &k)?.score;
        Ok(())
    })
}

/// Exhaustive top-`k` over `n_tokens` keys stored back to back; key `i` has
/// position `i`. Writes `k` positions in rank order to `out`.
#[no_mangle]
pub extern "C" fn kvt_top_k(
    query: *const f32,
    keys: *const f32,
    n_tokens: usize,
    heads: usize,
    dims: usize,
    k: usize,
    out: *mut u32,
) -> KvtStatus {
    guard(|| {
        let s = shape(heads, dims)?;
        let q = QueryVec::new(0, s, slice(query, s.len(), "query")?.to_vec())?;
        let total = n_tokens
            .checked_mul(s.len())
            .ok_or_else(|| Error::Argument("key buffer size overflows".into()))?;
        let flat = slice(keys, total, "keys")?;
        let keys = flat
            .chunks_exact(s.len())
            .enumerate()
            .map(|(i, v)| KeyVec::new(i as u32, s, v.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let top = oracle_top_k(&q, &keys, k)?;
        slice_mut(out, k, "out")?.copy_from_slice(&top);
        Ok(())
    })
}

/// Result of one simulated run.
pub struct KvtReport {
    run: SimulationRun,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvtMetrics {
    pub steps: u64,
    pub makespan: f64,
    pub decode_start: f64,
    pub decode_makespan: f64,
    pub mean_step_latency: f64,
    pub gpu_busy: f64,
    pub gpu_idle: f64,
    pub gpu_idle_fraction: f64,
    pub serialized_makespan: f64,
    pub bytes_ssd_host: u64,
    pub bytes_host_gpu: u64,
    pub score_bytes: u64,
    pub spill_bytes: u64,
    pub migration_bytes: u64,
    pub migrations_up: u64,
    pub migrations_down: u64,
    pub realized_beta: f64,
}

fn architecture(code: u32) -> Result<Architecture, Error> {
    match code {
        c if c == KvtArchitecture::SsdBaseline as u32 => Ok(Architecture::SsdBaseline),
        c if c == KvtArchitecture::Prefetch as u32 => Ok(Architecture::PrefetchNoCsd),
        c if c == KvtArchitecture::Csd as u32 => Ok(Architecture::CsdNoPipeline),
        c if c == KvtArchitecture::CsdApp as u32 => Ok(Architecture::CsdPipelined),
        other => Err(Error::Argument(format!("unknown architecture code {other}"))),
    }
}

/// Simulates `arch` (a [`KvtArchitecture`] code) on a synthetic trace built
/// from `config`. On success `*out` owns a report for [`kvt_report_free`].
#[no_mangle]
pub extern "C" fn kvt_simulate(
    arch: u32,
    config: *const KvtSimConfig,
    profile: *const KvtDeviceProfile,
    out: *mut *mut KvtReport,
) -> KvtStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let arch = architecture(arch)?;
        let config = SimConfig::try_from(non_null(config, "config")?)?;
        let profile = DeviceProfile::from(non_null(profile, "profile")?);
        let trace = gen_synthetic(&config)?;
        let run = run_simulation(arch, &profile, &config, &trace)?;
        *out = Box::into_raw(Box::new(KvtReport { run }));
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn kvt_report_metrics(report: *const KvtReport, out: *mut KvtMetrics) -> KvtStatus {
    guard(|| {
        let m = &non_null(report, "report")?.run.metrics;
        *non_null_mut(out, "out")? = KvtMetrics {
            steps: m.steps as u64,
            makespan: m.makespan,
            decode_start: m.decode_start,
            decode_makespan: m.decode_makespan,
            mean_step_latency: m.mean_step_latency,
            gpu_busy: m.gpu_busy,
            gpu_idle: m.gpu_idle,
            gpu_idle_fraction: m.gpu_idle_fraction,
            serialized_makespan: m.serialized_makespan,
            bytes_ssd_host: m.bytes_ssd_host,
            bytes_host_gpu: m.bytes_host_gpu,
            score_bytes: m.score_bytes,
            spill_bytes: m.spill_bytes,
            migration_bytes: m.migration_bytes,
            migrations_up: m.migrations_up,
            migrations_down: m.migrations_down,
            realized_beta: m.realized_beta,
        };
        Ok(())
    })
}

/// Latency of decode step `step`.
#[no_mangle]
pub extern "C" fn kvt_report_step_latency(
    report: *const KvtReport,
    step: usize,
    out: *mut f64,
) -> KvtStatus {
    guard(|| {
        let m = &non_null(report, "report")?.run.metrics;
        let latency = m.step_latency.get(step).copied().ok_or_else(|| {
            Error::Argument(format!("step {step} out of range, run has {}", m.steps))
        })?;
        *non_null_mut(out, "out")? = latency;
        Ok(())
    })
}

fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(Failure::Null("path"));
    }
    // SAFETY: non-null and, per the API contract, NUL-terminated.
    let text = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| Error::Argument("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(text))
}

/// Writes the run's events as JSON lines to `path`.
#[no_mangle]
pub extern "C" fn kvt_report_write_events(report: *const KvtReport, path: *const c_char) -> KvtStatus {
    guard(|| {
        let report = non_null(report, "report")?;
        let path = path_arg(path)?;
        let io = |e| Error::Io {
            path: path.clone(),
            source: e,
        };
        let file = std::fs::File::create(&path).map_err(io)?;
        report
            .run
            .timeline
            .write_jsonl(std::io::BufWriter::new(file))
            .map_err(io)?;
        Ok(())
    })
}

/// Writes the run's metrics as a CSV header plus one row to `path`.
#[no_mangle]
pub extern "C" fn kvt_report_write_csv(report: *const KvtReport, path: *const c_char) -> KvtStatus {
    guard(|| {
        let m = &non_null(report, "report")?.run.metrics;
        let path = path_arg(path)?;
        let text = format!("{}\n{}\n", tierkv::pipeline::MetricsReport::CSV_HEADER, m.csv_row());
        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
        Ok(())
    })
}

/// Releases a report; null is ignored.
#[no_mangle]
pub extern "C" fn kvt_report_free(report: *mut KvtReport) {
    if !report.is_null() {
        // SAFETY: `report` came from `kvt_simulate` and is freed once.
        drop(unsafe { Box::from_raw(report) });
    }
}

/// One layer's CPU/SSD pools.
pub struct KvtPool {
    pool: PoolState,
    shape: Shape,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvtMigrationCounts {
    pub up: u64,
    pub down: u64,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub insufficient_evictable: u8,
}

impl From<&MigrationReport> for KvtMigrationCounts {
    fn from(r: &MigrationReport) -> Self {
        Self {
            up: r.up.len() as u64,
            down: r.down.len() as u64,
            bytes_up: r.bytes_up() as u64,
            bytes_down: r.bytes_down() as u64,
            insufficient_evictable: u8::from(r.insufficient_evictable),
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct KvtPoolStats {
    pub tokens: u64,
    pub cpu_tokens: u64,
    pub ssd_tokens: u64,
    pub cpu_bytes: u64,
    pub ssd_bytes: u64,
    pub hit_table_bytes: u64,
}

/// Creates an empty pool pair for one layer. `*out` is freed with
/// [`kvt_pool_free`].
#[no_mangle]
pub extern "C" fn kvt_pool_new(
    layer: usize,
    alpha: f64,
    capacity_bytes: usize,
    heads: usize,
    dims: usize,
    out: *mut *mut KvtPool,
) -> KvtStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let shape = shape(heads, dims)?;
        let pool = PoolState::new(layer, PoolConfig::new(alpha, capacity_bytes))?;
        *out = Box::into_raw(Box::new(KvtPool { pool, shape }));
        Ok(())
    })
}

/// Appends the key (`heads * dims` floats) of token `pos`; spills are
/// reported in `out` (may be null).
#[no_mangle]
pub extern "C" fn kvt_pool_append(
    pool: *mut KvtPool,
    pos: u32,
    key: *const f32,
    out: *mut KvtMigrationCounts,
) -> KvtStatus {
    guard(|| {
        let pool = non_null_mut(pool, "pool")?;
        let values = slice(key, pool.shape.len(), "key")?.to_vec();
        let key = KeyVec::new(pos, pool.shape, values)?;
        let layer = pool.pool.layer();
        let report = pool.pool.append_kv(KvEntry::new(layer, key))?;
        // SAFETY: null or valid for writes.
        if let Some(out) = unsafe { out.as_mut() } {
            *out = KvtMigrationCounts::from(&report);
        }
        Ok(())
    })
}

/// Counts one hit for each of `count` positions.
#[no_mangle]
pub extern "C" fn kvt_pool_record_hits(pool: *mut KvtPool, positions: *const u32, count: usize) -> KvtStatus {
    guard(|| {
        let pool = non_null_mut(pool, "pool")?;
        pool.pool.record_hits(slice(positions, count, "positions")?)?;
        Ok(())
    })
}

/// Promotes pinned SSD tokens and demotes as many CPU tokens.
#[no_mangle]
pub extern "C" fn kvt_pool_rebalance(pool: *mut KvtPool, alpha: f64, out: *mut KvtMigrationCounts) -> KvtStatus {
    guard(|| {
        let pool = non_null_mut(pool, "pool")?;
        let report = pool.pool.rebalance(alpha)?;
        // SAFETY: null or valid for writes.
        if let Some(out) = unsafe { out.as_mut() } {
            *out = KvtMigrationCounts::from(&report);
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn kvt_pool_stats(pool: *const KvtPool, out: *mut KvtPoolStats) -> KvtStatus {
    guard(|| {
        let p = &non_null(pool, "pool")?.pool;
        *non_null_mut(out, "out")? = KvtPoolStats {
            tokens: p.len() as u64,
            cpu_tokens: p.count_on(Tier::Cpu) as u64,
            ssd_tokens: p.count_on(Tier::Ssd) as u64,
            cpu_bytes: p.cpu_bytes() as u64,
            ssd_bytes: p.ssd_bytes() as u64,
            hit_table_bytes: p.hit_table().footprint_bytes() as u64,
        };
        Ok(())
    })
}

/// Selects the important tokens of the pool for `query` with score blocks of
/// `block_size`. Writes up to `capacity` positions in rank order to `out`
/// and the selection size to `written`; `score_bytes` (may be null) receives
/// the SSD-to-CPU score traffic.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub extern "C" fn kvt_pool_select(
    pool: *const KvtPool,
    query: *const f32,
    block_size: usize,
    alpha: f64,
    out: *mut u32,
    capacity: usize,
    written: *mut usize,
    score_bytes: *mut u64,
) -> KvtStatus {
    guard(|| {
        let pool = non_null(pool, "pool")?;
        let values = slice(query, pool.shape.len(), "query")?.to_vec();
        let q = QueryVec::new(pool.pool.layer(), pool.shape, values)?;
        let written = non_null_mut(written, "written")?;
        let (selection, cost) = run_hie(&q, &pool.pool, block_size, alpha)?;
        if selection.important.len() > capacity {
            return Err(Error::Argument(format!(
                "selection of {} positions exceeds buffer of {capacity}",
                selection.important.len()
            ))
            .into());
        }
        slice_mut(out, selection.important.len(), "out")?.copy_from_slice(&selection.important);
        *written = selection.important.len();
        // SAFETY: null or valid for writes.
        if let Some(sb) = unsafe { score_bytes.as_mut() } {
            *sb = cost.score_bytes as u64;
        }
        Ok(())
    })
}

/// Releases a pool; null is ignored.
#[no_mangle]
pub extern "C" fn kvt_pool_free(pool: *mut KvtPool) {
    if !pool.is_null() {
        // SAFETY: `pool` came from `kvt_pool_new` and is freed once.
        drop(unsafe { Box::from_raw(pool) });
    }
}
