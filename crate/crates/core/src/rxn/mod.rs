//! Bond-split reaction rules, the forward simulation oracle and benchmark
//! generation.

mod benchmark;
mod forward;
mod rule;

pub use benchmark::{
    extract_reference_routes, generate_benchmark, min_depths, parse_all, read_jsonl, Benchmark,
    BenchmarkConfig, ReactionRecord, RouteExtractor, Splits,
};
pub use forward::{forward_oracle, ForwardOutcome, ForwardSearch};
pub(crate) use rule::retro_with_graphs;
pub use rule::{apply_forward_rule, apply_retro_rule, ReactantSet, ReactionRule, RxnError};
