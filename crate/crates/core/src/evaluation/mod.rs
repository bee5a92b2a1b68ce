//! Heatmap quality by most-relevant-first feature replacement, and the
//! outside-inside relevance ratio.

mod context;
mod morf;

pub use context::{context_ratio, context_table, ContextMode, ContextRatio, ContextRow, ContextSample};
pub use morf::{
    area_above, compare_orderings, format_curve, morf_order, morf_replace, morf_replace_ordered, sign_switch_fraction,
    MorfParams, MorfReport, MorfTrace, OrderingStats, QualityStats, Replacement,
};
