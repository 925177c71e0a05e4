//! Mode-aware dataflow: model adaptive streaming applications as
//! parameterized dataflow graphs, derive a strictly periodic schedule for
//! each mode, bound the delay of switching between modes, and check every
//! bound against a discrete-event simulation.

pub mod csdf;
pub mod error;
pub mod fixtures;
pub mod generate;
pub mod graph;
pub mod rational;
pub mod report;
pub mod sim;
pub mod transition;

/// Time in clock cycles.
pub type Time = u64;

pub use csdf::{
    analyze_graph, check_liveness, cumulative_consumed, cumulative_produced, earliest_start_times,
    repetition_vector, sps_periods, steady_state, GraphAnalysis, Liveness, ModeAnalysis,
    ModeTiming, RepetitionVector, SteadyStateSchedule,
};
pub use error::{AnalysisError, GraphError, SimError, TransitionError};
pub use graph::{instantiate_mode, validate_graph, CsdfInstance, Diagnostic, MadfGraph};
pub use rational::Rational;
pub use sim::{simulate, verify_trace, Scenario, SimTrace};
pub use transition::{
    allocation_delta, analyze_all, analyze_transition, delay_bounds, moo_offset, source_completion,
    start_lower_bound, start_upper_bound, utilization_at, Allocation, SchedulerPolicy,
    TransitionAnalysis,
};
