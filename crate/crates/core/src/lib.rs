//! Grounded reasoning with images and text: trace parsing, the GRPO-GR reward
//! stack, tabular group-relative policy optimisation, and grounding metrics.

pub mod grpo;
pub mod judge;
pub mod metrics;
pub mod prompts;
pub mod records;
pub mod reward;
pub mod toy;
pub mod trace;

pub use grpo::{GrpoConfig, TabularPolicy};
pub use reward::{RewardBreakdown, RewardConfig};
pub use trace::{parse_trace, BoundingBox, GroundedTrace};
