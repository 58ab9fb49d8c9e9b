//! Scheduled events, timelines and the metrics derived from them.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    /// Prompt processing on the GPU.
    Prefill,
    /// One-time movement of prompt KV into host memory and onto the SSD.
    Placement,
    /// SSD-resident KV staged in host memory for CPU evaluation.
    KvLoad,
    CpuEval,
    SsdEval,
    ScoreXfer,
    KvPrefetch,
    GpuCompute,
    /// Spills and tier migrations after selection.
    PoolUpdate,
}

/// Devices and links; each runs one event at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Gpu,
    Cpu,
    SsdCompute,
    SsdLink,
    GpuLink,
}

impl Resource {
    pub const ALL: [Resource; 5] = [
        Resource::Gpu,
        Resource::Cpu,
        Resource::SsdCompute,
        Resource::SsdLink,
        Resource::GpuLink,
    ];

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub kind: EventKind,
    pub resource: Resource,
    pub layer: usize,
    /// `None` during prefill.
    pub step: Option<usize>,
    pub t_start: f64,
    pub t_end: f64,
    pub bytes: u64,
}

impl SimEvent {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Events of a run ordered by `(t_start, kind, layer, step)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTimeline {
    events: Vec<SimEvent>,
    decode_start: f64,
}

impl EventTimeline {
    pub fn new(mut events: Vec<SimEvent>, decode_start: f64) -> Self {
        events.sort_by(|a, b| {
            a.t_start
                .total_cmp(&b.t_start)
                .then(a.kind.cmp(&b.kind))
                .then(a.layer.cmp(&b.layer))
                .then(a.step.cmp(&b.step))
                .then(a.t_end.total_cmp(&b.t_end))
        });
        Self {
            events,
            decode_start,
        }
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn decode_start(&self) -> f64 {
        self.decode_start
    }

    pub fn makespan(&self) -> f64 {
        self.events.iter().map(|e| e.t_end).fold(0.0, f64::max)
    }

    pub fn decode_makespan(&self) -> f64 {
        (self.makespan() - self.decode_start).max(0.0)
    }

    fn decode_events(&self) -> impl Iterator<Item = &SimEvent> {
        self.events.iter().filter(|e| e.step.is_some())
    }

    /// GPU busy time during decode.
    pub fn gpu_busy(&self) -> f64 {
        self.decode_events()
            .filter(|e| e.kind == EventKind::GpuCompute)
            .map(SimEvent::duration)
            .sum()
    }

    /// Decode makespan minus GPU busy time.
    pub fn gpu_idle(&self) -> f64 {
        (self.decode_makespan() - self.gpu_busy()).max(0.0)
    }

    pub fn bytes_on(&self, resource: Resource) -> u64 {
        self.events
            .iter()
            .filter(|e| e.resource == resource)
            .map(|e| e.bytes)
            .sum()
    }

    pub fn bytes_ssd_host(&self) -> u64 {
        self.bytes_on(Resource::SsdLink)
    }

    pub fn bytes_host_gpu(&self) -> u64 {
        self.bytes_on(Resource::GpuLink)
    }

    /// Length of a schedule that ran every event back to back.
    pub fn serialized_makespan(&self) -> f64 {
        self.events.iter().map(SimEvent::duration).sum()
    }

    /// Fails if two events overlap on one resource.
    pub fn check_exclusive(&self) -> Result<()> {
        for resource in Resource::ALL {
            let mut spans: Vec<&SimEvent> =
                self.events.iter().filter(|e| e.resource == resource).collect();
            spans.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
            for pair in spans.windows(2) {
                let slack = 1e-12 * pair[0].t_end.abs().max(1.0);
                if pair[1].t_start + slack < pair[0].t_end {
                    return Err(Error::Consistency(format!(
                        "{resource:?} runs {:?} and {:?} at once around t={}",
                        pair[0].kind, pair[1].kind, pair[1].t_start
                    )));
                }
            }
        }
        Ok(())
    }

    /// One JSON object per event and line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `(decode makespan − GPU busy) / decode makespan`, or 0 without decode.
pub fn gpu_idle_fraction(timeline: &EventTimeline) -> f64 {
    let span = timeline.decode_makespan();
    if span <= 0.0 {
        return 0.0;
    }
    timeline.gpu_idle() / span
}
