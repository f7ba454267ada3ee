//! Gradient flow: the RK4 integrator, its invariant monitors, and the Mexican-hat
//! example on which the direction never converges.

pub mod flow;
pub mod hat;
pub mod monitor;

pub use flow::{FlowConfig, FlowState, GradientFlow, StepInfo};
pub use hat::{hat_step, run_hat, HatConfig, HatProfile, HatState};
pub use monitor::{FlowMonitor, FlowSummary, MonitorTolerances, StepCheck};
