//! Verification metrics and the kinship reporting protocol.

mod metrics;
mod report;

pub use metrics::{
    auc_counts, average_precision_ratio, best_threshold, cv_threshold_accuracy, cv_with_folds, eer, pr_ap, roc_auc,
    roc_curve, stratified_folds, triplet_score, AucCounts, CvAccuracy, Eer, PrPoint, RocPoint, Scored,
};
pub use report::{
    breakdown_csv, evaluate_scores, pr_csv, relation_breakdown, roc_csv, AuditItem, Column, EvalReport, Protocol,
    ScoredPair, ScoredTriplet,
};
