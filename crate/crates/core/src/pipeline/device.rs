//! Device models, architectures and the CPU/SSD capacity planner.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Throughputs, bandwidths and capacities of the modeled machine.
///
/// Rates are bytes per second, times are seconds, capacities are bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceProfile {
    /// CPU importance-evaluation throughput.
    pub f_c: f64,
    /// In-storage importance-evaluation throughput.
    pub f_s: f64,
    pub bw_ssd_host: f64,
    pub bw_host_gpu: f64,
    /// CPU memory available to the KV cache.
    pub m0: u64,
    /// CPU memory kept free of the planned split.
    pub headroom: u64,
    pub gpu_layer_time: f64,
    /// Extra GPU time per selected token per sequence.
    pub gpu_token_time: f64,
    /// Setup time added to every transfer.
    pub fixed_latency: f64,
    /// Send SSD-resident prefetches straight to the GPU instead of staging
    /// them in host memory.
    pub p2p_fetch: bool,
}

impl Default for DeviceProfile {
    fn default() -> Self {
        Self {
            f_c: 16e9,
            f_s: 8e9,
            bw_ssd_host: 4e9,
            bw_host_gpu: 25e9,
            m0: 8 << 20,
            headroom: 0,
            gpu_layer_time: 2e-4,
            gpu_token_time: 0.0,
            fixed_latency: 0.0,
            p2p_fetch: false,
        }
    }
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("f_c", self.f_c),
            ("f_s", self.f_s),
            ("bw_ssd_host", self.bw_ssd_host),
            ("bw_host_gpu", self.bw_host_gpu),
            ("gpu_layer_time", self.gpu_layer_time),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("gpu_token_time", self.gpu_token_time),
            ("fixed_latency", self.fixed_latency),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.m0 == 0 {
            return Err(Error::Config("m0 must be positive".into()));
        }
        if self.headroom >= self.m0 {
            return Err(Error::Config(format!(
                "headroom {} leaves no CPU memory out of m0 {}",
                self.headroom, self.m0
            )));
        }
        Ok(())
    }

    /// `f_c / f_s`.
    pub fn balanced_beta(&self) -> f64 {
        self.f_c / self.f_s
    }

    /// CPU bytes usable for KV.
    pub fn cpu_ceiling(&self) -> u64 {
        self.m0.saturating_sub(self.headroom)
    }

    pub fn transfer_time(&self, bytes: u64, bandwidth: f64) -> f64 {
        bytes as f64 / bandwidth + self.fixed_latency
    }
}

/// The decode architectures the simulator can schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Architecture {
    /// Loads every SSD-resident entry to the host before each layer; no
    /// layer overlap.
    #[serde(rename = "ssd-baseline")]
    SsdBaseline,
    /// Loads SSD-resident entries to the host and evaluates on the CPU, but
    /// prepares layer `i+1` while the GPU runs layer `i`.
    #[serde(rename = "prefetch")]
    PrefetchNoCsd,
    /// Split evaluation with pinned pools; no layer overlap, CPU filled
    /// before spilling.
    #[serde(rename = "csd")]
    CsdNoPipeline,
    /// Split evaluation with pinned pools, layer overlap and a throughput-
    /// balanced capacity split.
    #[serde(rename = "csd-app")]
    CsdPipelined,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::SsdBaseline,
        Architecture::PrefetchNoCsd,
        Architecture::CsdNoPipeline,
        Architecture::CsdPipelined,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::SsdBaseline => "ssd-baseline",
            Architecture::PrefetchNoCsd => "prefetch",
            Architecture::CsdNoPipeline => "csd",
            Architecture::CsdPipelined => "csd-app",
        }
    }

    /// Evaluates SSD-resident entries inside the device.
    pub fn in_storage_eval(self) -> bool {
        matches!(self, Architecture::CsdNoPipeline | Architecture::CsdPipelined)
    }

    /// Prepares layer `i+1` while the GPU computes layer `i`.
    pub fn overlaps_layers(self) -> bool {
        matches!(self, Architecture::PrefetchNoCsd | Architecture::CsdPipelined)
    }

    /// Sizes the CPU pool from the throughput ratio instead of filling it.
    pub fn plans_capacity(self) -> bool {
        self == Architecture::CsdPipelined
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Architecture::ALL.iter().map(|a| a.name()).collect();
                Error::Argument(format!(
                    "unknown architecture {s:?}, expected one of {}",
                    known.join(", ")
                ))
            })
    }
}

/// How total KV bytes `total` are split between CPU and SSD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityPlan {
    /// The ratio the plan aimed for.
    pub target_beta: f64,
    /// Realized `m_c / m_s`; infinite when nothing goes to the SSD.
    pub beta: f64,
    pub m_c: f64,
    pub m_s: f64,
    pub total: f64,
    /// The CPU ceiling, not the ratio, decided `m_c`.
    pub capped: bool,
}

/// Splits `total` bytes so that `m_c / m_s = target_beta`, limited by the
/// CPU ceiling and never below `reserve` (bytes that must stay on the CPU).
pub fn plan_capacity(
    profile: &DeviceProfile,
    target_beta: f64,
    total: f64,
    reserve: f64,
) -> Result<CapacityPlan> {
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::Argument(format!("total KV bytes must be positive, got {total}")));
    }
    if !(target_beta.is_finite() && target_beta > 0.0) {
        return Err(Error::Argument(format!("beta must be positive, got {target_beta}")));
    }
    let ceiling = profile.cpu_ceiling() as f64;
    if ceiling < reserve {
        return Err(Error::Capacity(format!(
            "CPU memory {ceiling} bytes is below the {reserve} bytes that must stay resident"
        )));
    }
    let want = total * target_beta / (1.0 + target_beta);
    let capped = want > ceiling;
    let m_c = want.min(ceiling).max(reserve).min(total);
    let m_s = total - m_c;
    Ok(CapacityPlan {
        target_beta,
        beta: if m_s > 0.0 { m_c / m_s } else { f64::INFINITY },
        m_c,
        m_s,
        total,
        capped,
    })
}

/// Plan with `beta = f_c / f_s` and no residency reserve.
pub fn solve_beta(profile: &DeviceProfile, total: f64) -> Result<CapacityPlan> {
    plan_capacity(profile, profile.balanced_beta(), total, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GB: f64 = 1e9;

    fn profile(f_c: f64, f_s: f64, m0: u64) -> DeviceProfile {
        DeviceProfile {
            f_c,
            f_s,
            m0,
            ..DeviceProfile::default()
        }
    }

    #[test]
    fn ratio_of_throughputs() {
        let plan = solve_beta(&profile(8.0 * GB, 4.0 * GB, u64::MAX), 1e6).unwrap();
        assert_eq!(plan.target_beta, 2.0);
        assert!((plan.beta - 2.0).abs() < 1e-12);
        assert!(!plan.capped);
    }

    #[test]
    fn equal_throughputs_split_evenly() {
        let plan = solve_beta(&profile(4.0 * GB, 4.0 * GB, u64::MAX), 2.0 * GB).unwrap();
        assert_eq!(plan.m_c, 1.0 * GB);
        assert_eq!(plan.m_s, 1.0 * GB);
    }

    #[test]
    fn split_balances_eval_times() {
        let p = profile(8.0 * GB, 4.0 * GB, u64::MAX);
        let plan = solve_beta(&p, 3.0 * GB).unwrap();
        assert_eq!(plan.m_c, 2.0 * GB);
        assert_eq!(plan.m_s, 1.0 * GB);
        assert_eq!(plan.m_c / p.f_c, 0.25);
        assert_eq!(plan.m_s / p.f_s, 0.25);
    }

    #[test]
    fn ceiling_binds() {
        let p = DeviceProfile {
            headroom: 100,
            ..profile(8.0, 4.0, 1100)
        };
        let plan = solve_beta(&p, 3000.0).unwrap();
        assert!(plan.capped);
        assert_eq!(plan.m_c, 1000.0);
        assert_eq!(plan.m_s, 2000.0);
        assert_eq!(plan.beta, 0.5);
    }

    #[test]
    fn reserve_floor_and_error() {
        let p = profile(1.0, 4.0, 1000);
        let plan = plan_capacity(&p, 0.25, 1000.0, 400.0).unwrap();
        assert_eq!(plan.m_c, 400.0);
        let err = plan_capacity(&p, 2.0, 5000.0, 1001.0).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        assert!(matches!(plan_capacity(&p, 2.0, 0.0, 0.0), Err(Error::Argument(_))));
    }

    #[test]
    fn architecture_names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!(matches!("gpu-only".parse::<Architecture>(), Err(Error::Argument(_))));
    }

    #[test]
    fn profile_validation() {
        assert!(DeviceProfile::default().validate().is_ok());
        let bad = DeviceProfile {
            f_s: 0.0,
            ..DeviceProfile::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = DeviceProfile {
            headroom: 8 << 20,
            ..DeviceProfile::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn plan_invariants(
            f_c in 0.1f64..100.0,
            f_s in 0.1f64..100.0,
            m0 in 1u64..1_000_000,
            total in 1.0f64..2_000_000.0,
            reserve_frac in 0.0f64..1.0,
        ) {
            let p = profile(f_c, f_s, m0);
            let reserve = (reserve_frac * m0 as f64).min(total);
            let plan = plan_capacity(&p, p.balanced_beta(), total, reserve).unwrap();
            prop_assert!((plan.m_c + plan.m_s - total).abs() <= 1e-9 * total);
            prop_assert!(plan.m_c <= m0 as f64);
            prop_assert!(plan.m_c >= reserve);
            if plan.m_s > 0.0 {
                prop_assert!((plan.beta - plan.m_c / plan.m_s).abs() <= 1e-12 * plan.beta.max(1.0));
            }
            if !plan.capped && plan.m_c > reserve {
                let (tc, ts) = (plan.m_c / f_c, plan.m_s / f_s);
                prop_assert!((tc - ts).abs() <= 1e-9 * tc.max(ts));
            }
        }
    }
}
