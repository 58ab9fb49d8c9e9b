//! Discrete-event simulation of prefill and layer-wise decode.
//!
//! Every device and link is a lane that runs one event at a time. An event
//! is placed at the earliest gap of its lane that starts no sooner than its
//! dependencies allow, in the order the simulator issues events, so a run is
//! a pure function of its inputs.
//!
//! Per decode step and layer the simulator appends the new token's KV,
//! evaluates importance, and schedules:
//!
//! * in-storage architectures: `CpuEval` and `SsdEval` in parallel,
//!   `ScoreXfer` after `SsdEval`, then `KvPrefetch` of the selected KV (SSD
//!   hop, then host hop unless `p2p_fetch`);
//! * the others: `KvLoad` of all SSD-resident KV, `CpuEval` of everything,
//!   then `KvPrefetch` over the host link;
//! * `GpuCompute` once the layer's KV is on the GPU and the previous layer is
//!   done;
//! * `PoolUpdate` on the SSD link for spills and (in-storage architectures)
//!   hit recording plus rebalancing. The next step's preparation of that
//!   layer waits for it.
//!
//! Overlapping architectures start preparing layer `i+1` when the GPU starts
//! layer `i`; the others wait until it ends. All billed bytes are multiplied
//! by the batch size.

use serde::{Deserialize, Serialize};

use super::device::{plan_capacity, Architecture, CapacityPlan, DeviceProfile};
use super::timeline::{gpu_idle_fraction, EventKind, EventTimeline, Resource, SimEvent};
use crate::error::{Error, Result};
use crate::hie::run_hie;
use crate::pools::{bytes_moved, KvEntry, MigrationReport, PoolConfig, PoolState};
use crate::vector::{fraction_count, TokenPos};
use crate::workload::{BetaSetting, SimConfig, Trace, TraceStep};

/// Busy intervals of one resource, sorted and disjoint.
#[derive(Debug, Clone, Default)]
struct Lane {
    busy: Vec<(f64, f64)>,
}

impl Lane {
    fn place(&mut self, earliest: f64, duration: f64) -> f64 {
        let mut start = earliest;
        let mut idx = self.busy.partition_point(|iv| iv.1 <= earliest);
        while idx < self.busy.len() {
            let (s, e) = self.busy[idx];
            if start + duration <= s {
                break;
            }
            start = start.max(e);
            idx += 1;
        }
        self.busy.insert(idx, (start, start + duration));
        start
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Totals {
    score_bytes: u64,
    spill_bytes: u64,
    migration_bytes: u64,
    migrations_up: u64,
    migrations_down: u64,
    cpu_eval_bytes: u64,
    ssd_eval_bytes: u64,
}

/// What one decode step produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub step: usize,
    /// From the step's start to the end of its last GPU layer.
    pub latency: f64,
    /// Important positions per layer, in rank order.
    pub selections: Vec<Vec<TokenPos>>,
}

/// Incremental scheduler for one run.
#[derive(Debug, Clone)]
pub struct Simulator {
    arch: Architecture,
    profile: DeviceProfile,
    layers: usize,
    alpha: f64,
    block_size: usize,
    batch: u64,
    entry_bytes: usize,
    lanes: [Lane; 5],
    events: Vec<SimEvent>,
    pool_ready: Vec<f64>,
    pending: Vec<usize>,
    clock: f64,
    decode_start: f64,
    totals: Totals,
    step_latency: Vec<f64>,
}

impl Simulator {
    pub fn new(arch: Architecture, profile: DeviceProfile, config: &SimConfig) -> Result<Self> {
        config.validate()?;
        profile.validate()?;
        Ok(Self {
            arch,
            profile,
            layers: config.layers,
            alpha: config.alpha,
            block_size: config.block_size,
            batch: config.batch as u64,
            entry_bytes: config.entry_bytes(),
            lanes: Default::default(),
            events: Vec::new(),
            pool_ready: vec![0.0; config.layers],
            pending: vec![0; config.layers],
            clock: 0.0,
            decode_start: 0.0,
            totals: Totals::default(),
            step_latency: Vec::new(),
        })
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    /// End of the last scheduled step (or of prefill).
    pub fn clock(&self) -> f64 {
        self.clock
    }

    fn billed(&self, bytes: usize) -> u64 {
        bytes as u64 * self.batch
    }

    #[allow(clippy::too_many_arguments)]
    fn schedule(
        &mut self,
        kind: EventKind,
        resource: Resource,
        layer: usize,
        step: Option<usize>,
        earliest: f64,
        duration: f64,
        bytes: u64,
    ) -> (f64, f64) {
        let start = self.lanes[resource.index()].place(earliest, duration);
        let end = start + duration;
        self.events.push(SimEvent {
            kind,
            resource,
            layer,
            step,
            t_start: start,
            t_end: end,
            bytes,
        });
        (start, end)
    }

    /// Schedules a transfer and returns its end; nothing for zero bytes.
    #[allow(clippy::too_many_arguments)]
    fn transfer(
        &mut self,
        kind: EventKind,
        resource: Resource,
        layer: usize,
        step: Option<usize>,
        earliest: f64,
        bytes: u64,
        bandwidth: f64,
    ) -> f64 {
        if bytes == 0 {
            return earliest;
        }
        let duration = self.profile.transfer_time(bytes, bandwidth);
        self.schedule(kind, resource, layer, step, earliest, duration, bytes).1
    }

    /// Schedules a scan of `bytes` at `rate` and returns its end.
    #[allow(clippy::too_many_arguments)]
    fn scan(
        &mut self,
        kind: EventKind,
        resource: Resource,
        layer: usize,
        step: usize,
        earliest: f64,
        bytes: u64,
        rate: f64,
    ) -> f64 {
        if bytes == 0 {
            return earliest;
        }
        let duration = bytes as f64 / rate;
        self.schedule(kind, resource, layer, Some(step), earliest, duration, bytes).1
    }

    /// Schedules prompt processing and the initial placement of its KV:
    /// everything to host memory, then `spilled_bytes` (per sequence) on to
    /// the SSD.
    pub fn record_prefill(&mut self, prompt_tokens: usize, spilled_bytes: usize) {
        let p = &self.profile;
        let per_layer =
            p.gpu_layer_time + p.gpu_token_time * prompt_tokens as f64 * self.batch as f64;
        let duration = per_layer * self.layers as f64;
        let (_, gpu_end) =
            self.schedule(EventKind::Prefill, Resource::Gpu, 0, None, 0.0, duration, 0);
        let host_bytes = self.billed(prompt_tokens * self.entry_bytes * self.layers);
        let host_end = self.transfer(
            EventKind::Placement,
            Resource::GpuLink,
            0,
            None,
            gpu_end,
            host_bytes,
            self.profile.bw_host_gpu,
        );
        let spill = self.billed(spilled_bytes);
        let end = self.transfer(
            EventKind::Placement,
            Resource::SsdLink,
            0,
            None,
            host_end,
            spill,
            self.profile.bw_ssd_host,
        );
        self.totals.spill_bytes += spill;
        self.clock = end;
        self.decode_start = end;
        self.pool_ready.iter_mut().for_each(|t| *t = end);
    }

    /// Adds the bytes of an out-of-band pool change (e.g. a capacity update)
    /// to the layer's next `PoolUpdate`.
    pub fn note_migration(&mut self, layer: usize, report: &MigrationReport) {
        if let Some(p) = self.pending.get_mut(layer) {
            *p += bytes_moved(report);
        }
    }

    /// Schedules one decode step over all layers and updates `pools`.
    pub fn simulate_step(&mut self, pools: &mut [PoolState], step: &TraceStep) -> Result<StepOutcome> {
        if pools.len() != self.layers
            || step.queries.len() != self.layers
            || step.new_keys.len() != self.layers
        {
            return Err(Error::Argument(format!(
                "step {} has {} queries and {} keys for {} pools, simulator expects {} layers",
                step.step,
                step.queries.len(),
                step.new_keys.len(),
                pools.len(),
                self.layers
            )));
        }
        let s = step.step;
        let p = self.profile.clone();
        let step_start = self.clock;
        let mut prev_gpu: Option<(f64, f64)> = None;
        let mut selections = Vec::with_capacity(self.layers);

        for (layer, pool) in pools.iter_mut().enumerate() {
            if pool.layer() != layer {
                return Err(Error::Consistency(format!(
                    "pool {layer} holds layer {}",
                    pool.layer()
                )));
            }
            let appended = pool.append_kv(KvEntry::new(layer, step.new_keys[layer].clone()))?;
            let (selection, cost) = run_hie(&step.queries[layer], pool, self.block_size, self.alpha)?;

            let ready = match prev_gpu {
                None => step_start,
                Some((start, end)) => {
                    if self.arch.overlaps_layers() {
                        start
                    } else {
                        end
                    }
                }
            }
            .max(self.pool_ready[layer]);

            let cpu_bytes = self.billed(cost.cpu_eval_bytes);
            let ssd_bytes = self.billed(cost.ssd_eval_bytes);
            let selected_bytes = self.billed(cost.selected_bytes);
            self.totals.cpu_eval_bytes += cpu_bytes;
            self.totals.ssd_eval_bytes += ssd_bytes;

            let (selected_at, on_gpu) = if self.arch.in_storage_eval() {
                let cpu_end = self.scan(EventKind::CpuEval, Resource::Cpu, layer, s, ready, cpu_bytes, p.f_c);
                let ssd_end =
                    self.scan(EventKind::SsdEval, Resource::SsdCompute, layer, s, ready, ssd_bytes, p.f_s);
                let score_bytes = self.billed(cost.score_bytes);
                self.totals.score_bytes += score_bytes;
                let scores_end = self.transfer(
                    EventKind::ScoreXfer,
                    Resource::SsdLink,
                    layer,
                    Some(s),
                    ssd_end,
                    score_bytes,
                    p.bw_ssd_host,
                );
                let selected_at = cpu_end.max(scores_end);
                let from_ssd = self.billed(cost.fetch_bytes);
                let on_gpu = if p.p2p_fetch {
                    let direct = self.transfer(
                        EventKind::KvPrefetch,
                        Resource::SsdLink,
                        layer,
                        Some(s),
                        selected_at,
                        from_ssd,
                        p.bw_ssd_host,
                    );
                    let hosted = self.transfer(
                        EventKind::KvPrefetch,
                        Resource::GpuLink,
                        layer,
                        Some(s),
                        selected_at,
                        selected_bytes - from_ssd,
                        p.bw_host_gpu,
                    );
                    direct.max(hosted)
                } else {
                    let staged = self.transfer(
                        EventKind::KvPrefetch,
                        Resource::SsdLink,
                        layer,
                        Some(s),
                        selected_at,
                        from_ssd,
                        p.bw_ssd_host,
                    );
                    self.transfer(
                        EventKind::KvPrefetch,
                        Resource::GpuLink,
                        layer,
                        Some(s),
                        staged,
                        selected_bytes,
                        p.bw_host_gpu,
                    )
                };
                (selected_at, on_gpu)
            } else {
                let loaded = self.transfer(
                    EventKind::KvLoad,
                    Resource::SsdLink,
                    layer,
                    Some(s),
                    ready,
                    ssd_bytes,
                    p.bw_ssd_host,
                );
                let selected_at = self.scan(
                    EventKind::CpuEval,
                    Resource::Cpu,
                    layer,
                    s,
                    loaded,
                    cpu_bytes + ssd_bytes,
                    p.f_c,
                );
                let on_gpu = self.transfer(
                    EventKind::KvPrefetch,
                    Resource::GpuLink,
                    layer,
                    Some(s),
                    selected_at,
                    selected_bytes,
                    p.bw_host_gpu,
                );
                (selected_at, on_gpu)
            };

            let gpu_earliest = on_gpu.max(prev_gpu.map_or(step_start, |g| g.1));
            let gpu_time = p.gpu_layer_time
                + p.gpu_token_time * cost.selected as f64 * self.batch as f64;
            let gpu = self.schedule(
                EventKind::GpuCompute,
                Resource::Gpu,
                layer,
                Some(s),
                gpu_earliest,
                gpu_time,
                0,
            );
            prev_gpu = Some(gpu);

            let spilled = bytes_moved(&appended) + std::mem::take(&mut self.pending[layer]);
            self.totals.spill_bytes += self.billed(spilled);
            let mut moved = spilled;
            if self.arch.in_storage_eval() {
                pool.record_hits(&selection.important)?;
                let rebalance = pool.rebalance(self.alpha)?;
                let bytes = bytes_moved(&rebalance);
                self.totals.migration_bytes += self.billed(bytes);
                self.totals.migrations_up += rebalance.up.len() as u64;
                self.totals.migrations_down += rebalance.down.len() as u64;
                moved += bytes;
            }
            self.pool_ready[layer] = self.transfer(
                EventKind::PoolUpdate,
                Resource::SsdLink,
                layer,
                Some(s),
                selected_at,
                self.billed(moved),
                p.bw_ssd_host,
            );
            selections.push(selection.important);
        }

        let end = prev_gpu.map_or(step_start, |g| g.1);
        let latency = end - step_start;
        self.clock = end;
        self.step_latency.push(latency);
        Ok(StepOutcome {
            step: s,
            latency,
            selections,
        })
    }

    /// Closes the run; `pools` supply the final residency.
    pub fn finish(self, pools: &[PoolState], plan: Option<CapacityPlan>) -> (EventTimeline, MetricsReport) {
        let timeline = EventTimeline::new(self.events, self.decode_start);
        let cpu: usize = pools.iter().map(PoolState::cpu_bytes).sum();
        let ssd: usize = pools.iter().map(PoolState::ssd_bytes).sum();
        let t = self.totals;
        let steps = self.step_latency.len();
        let metrics = MetricsReport {
            arch: self.arch,
            steps,
            makespan: timeline.makespan(),
            decode_start: timeline.decode_start(),
            decode_makespan: timeline.decode_makespan(),
            mean_step_latency: if steps == 0 {
                0.0
            } else {
                self.step_latency.iter().sum::<f64>() / steps as f64
            },
            gpu_busy: timeline.gpu_busy(),
            gpu_idle: timeline.gpu_idle(),
            gpu_idle_fraction: gpu_idle_fraction(&timeline),
            serialized_makespan: timeline.serialized_makespan(),
            bytes_ssd_host: timeline.bytes_ssd_host(),
            bytes_host_gpu: timeline.bytes_host_gpu(),
            score_bytes: t.score_bytes,
            spill_bytes: t.spill_bytes,
            migration_bytes: t.migration_bytes,
            migrations_up: t.migrations_up,
            migrations_down: t.migrations_down,
            cpu_eval_bytes: t.cpu_eval_bytes,
            ssd_eval_bytes: t.ssd_eval_bytes,
            realized_beta: if ssd > 0 {
                cpu as f64 / ssd as f64
            } else {
                f64::INFINITY
            },
            capped: plan.is_some_and(|p| p.capped),
            step_latency: self.step_latency,
        };
        (timeline, metrics)
    }
}

/// Summary of a run. Byte counts are billed bytes (batch included);
/// migration counts are per sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub arch: Architecture,
    pub steps: usize,
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
    pub cpu_eval_bytes: u64,
    pub ssd_eval_bytes: u64,
    /// CPU over SSD bytes at the end of the run.
    pub realized_beta: f64,
    pub capped: bool,
    pub step_latency: Vec<f64>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "arch,steps,makespan_s,decode_start_s,decode_makespan_s,\
mean_step_latency_s,gpu_busy_s,gpu_idle_s,gpu_idle_fraction,serialized_s,bytes_ssd_host,\
bytes_host_gpu,score_bytes,spill_bytes,migration_bytes,migrations_up,migrations_down,\
cpu_eval_bytes,ssd_eval_bytes,realized_beta,capped";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.arch,
            self.steps,
            self.makespan,
            self.decode_start,
            self.decode_makespan,
            self.mean_step_latency,
            self.gpu_busy,
            self.gpu_idle,
            self.gpu_idle_fraction,
            self.serialized_makespan,
            self.bytes_ssd_host,
            self.bytes_host_gpu,
            self.score_bytes,
            self.spill_bytes,
            self.migration_bytes,
            self.migrations_up,
            self.migrations_down,
            self.cpu_eval_bytes,
            self.ssd_eval_bytes,
            self.realized_beta,
            self.capped
        )
    }

    /// `step,latency_s` rows.
    pub fn step_csv(&self) -> String {
        let mut out = String::from("step,latency_s\n");
        for (i, l) in self.step_latency.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        out
    }
}

/// Timeline, metrics and optionally the per-step selections of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub timeline: EventTimeline,
    pub metrics: MetricsReport,
    /// `selections[step][layer]`, when recorded.
    pub selections: Option<Vec<Vec<Vec<TokenPos>>>>,
}

/// `step,layer,positions` rows with space-separated positions in rank order.
pub fn selections_csv(selections: &[Vec<Vec<TokenPos>>]) -> String {
    let mut out = String::from("step,layer,positions\n");
    for (step, layers) in selections.iter().enumerate() {
        for (layer, positions) in layers.iter().enumerate() {
            let list: Vec<String> = positions.iter().map(|p| p.to_string()).collect();
            out.push_str(&format!("{step},{layer},{}\n", list.join(" ")));
        }
    }
    out
}

fn resolve_beta(config: &SimConfig, profile: &DeviceProfile) -> f64 {
    match config.beta {
        BetaSetting::Auto => profile.balanced_beta(),
        BetaSetting::Fixed(b) => b,
    }
}

/// Per-layer CPU pool capacity (bytes per sequence) for a context of
/// `tokens`, and the plan behind it if the architecture plans.
pub fn layer_capacity(
    arch: Architecture,
    profile: &DeviceProfile,
    config: &SimConfig,
    tokens: usize,
) -> Result<(usize, Option<CapacityPlan>)> {
    let e = config.entry_bytes();
    let copies = (config.layers * config.batch) as f64;
    let reserve_layer = (2 * fraction_count(config.alpha, tokens)).min(tokens) * e;
    let reserve = reserve_layer as f64 * copies;
    if arch.plans_capacity() {
        let total = (tokens * e) as f64 * copies;
        let plan = plan_capacity(profile, resolve_beta(config, profile), total, reserve)?;
        let per_layer = ((plan.m_c / copies).floor() as usize).max(reserve_layer);
        Ok((per_layer, Some(plan)))
    } else {
        let ceiling = profile.cpu_ceiling() as f64;
        if ceiling < reserve {
            return Err(Error::Capacity(format!(
                "CPU memory {ceiling} bytes is below the {reserve} bytes that must stay resident"
            )));
        }
        Ok(((ceiling / copies).floor() as usize, None))
    }
}

/// Runs prefill and every decode step of `trace`.
pub fn run_simulation(
    arch: Architecture,
    profile: &DeviceProfile,
    config: &SimConfig,
    trace: &Trace,
) -> Result<SimulationRun> {
    run_simulation_with(arch, profile, config, trace, false)
}

/// [`run_simulation`], optionally keeping every step's selections.
pub fn run_simulation_with(
    arch: Architecture,
    profile: &DeviceProfile,
    config: &SimConfig,
    trace: &Trace,
    record_selections: bool,
) -> Result<SimulationRun> {
    trace.check_matches(config)?;
    let mut sim = Simulator::new(arch, profile.clone(), config)?;
    let (capacity, mut plan) = layer_capacity(arch, profile, config, config.n_prompt)?;

    let mut pools = Vec::with_capacity(config.layers);
    let mut spilled = 0;
    for layer in 0..config.layers {
        let pool_config = PoolConfig {
            hit_decay: config.hit_decay,
            ..PoolConfig::new(config.alpha, capacity)
        };
        let mut pool = PoolState::new(layer, pool_config)?;
        spilled += bytes_moved(&pool.extend(trace.prompt_entries(layer))?);
        pools.push(pool);
    }
    sim.record_prefill(config.n_prompt, spilled);

    let mut selections = record_selections.then(Vec::new);
    for step in &trace.steps {
        if arch.plans_capacity() {
            let (capacity, next) = layer_capacity(arch, profile, config, pools[0].len() + 1)?;
            plan = next;
            for pool in pools.iter_mut() {
                let report = pool.set_capacity(capacity)?;
                sim.note_migration(pool.layer(), &report);
            }
        }
        let outcome = sim.simulate_step(&mut pools, step)?;
        if let Some(all) = selections.as_mut() {
            all.push(outcome.selections);
        }
    }
    let (timeline, metrics) = sim.finish(&pools, plan);
    Ok(SimulationRun {
        timeline,
        metrics,
        selections,
    })
}
