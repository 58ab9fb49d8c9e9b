//! Device models, the capacity planner and the decode pipeline simulator.

mod device;
mod sim;
mod timeline;

pub use device::{plan_capacity, solve_beta, Architecture, CapacityPlan, DeviceProfile};
pub use sim::{
    layer_capacity, run_simulation, run_simulation_with, selections_csv, MetricsReport,
    SimulationRun, Simulator, StepOutcome,
};
pub use timeline::{gpu_idle_fraction, EventKind, EventTimeline, Resource, SimEvent};
