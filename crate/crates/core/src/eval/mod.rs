//! IoU, AP@0.5 and the scenario-matrix evaluation protocol.

mod ap;
mod iou;
mod report;
mod scenarios;

pub use ap::{average_precision, pr_curve, PRPoint};
pub use iou::iou;
pub use report::{EvalReport, ReportCell, Threshold, ThresholdOutcome};
pub use scenarios::{
    dataset_ap, evaluate_cell, evaluate_scenarios, with_clean, EvalOptions, ModelEntry, Scenario,
    CLEAN_SCENARIO,
};
