//! Per-relation accuracy breakdowns and the serialized evaluation report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{cv_threshold_accuracy, cv_with_folds, eer, pr_ap, roc_auc, roc_curve, PrPoint, RocPoint, Scored};
use crate::dataset::{ChildGender, PairExample, Relation, TripletExample};
use crate::error::{Error, Result};

/// Report columns, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    MD,
    MS,
    FD,
    FS,
    FMD,
    FMS,
    All,
}

impl Column {
    pub const TABLE: [Column; 7] = [
        Column::MD,
        Column::MS,
        Column::FD,
        Column::FS,
        Column::FMD,
        Column::FMS,
        Column::All,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::MD => "MD",
            Column::MS => "MS",
            Column::FD => "FD",
            Column::FS => "FS",
            Column::FMD => "FMD",
            Column::FMS => "FMS",
            Column::All => "All",
        }
    }
}

/// A scored test item that may belong to a relation column and may carry a
/// published fold number.
pub trait AuditItem: Scored {
    fn column(&self) -> Option<Column>;
    fn fold(&self) -> Option<u32> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: PairExample,
    pub score: f64,
}

impl Scored for ScoredPair {
    fn score(&self) -> f64 {
        self.score
    }
    fn is_positive(&self) -> bool {
        self.pair.label.is_positive()
    }
}

impl AuditItem for ScoredPair {
    fn column(&self) -> Option<Column> {
        match self.pair.relation? {
            Relation::MD => Some(Column::MD),
            Relation::MS => Some(Column::MS),
            Relation::FD => Some(Column::FD),
            Relation::FS => Some(Column::FS),
            Relation::Sibling | Relation::None => None,
        }
    }

    fn fold(&self) -> Option<u32> {
        self.pair.fold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriplet {
    pub triplet: TripletExample,
    pub score: f64,
}

impl Scored for ScoredTriplet {
    fn score(&self) -> f64 {
        self.score
    }
    fn is_positive(&self) -> bool {
        self.triplet.label.is_positive()
    }
}

impl AuditItem for ScoredTriplet {
    fn column(&self) -> Option<Column> {
        Some(match self.triplet.child_gender {
            ChildGender::Son => Column::FMS,
            ChildGender::Daughter => Column::FMD,
        })
    }
}

impl AuditItem for (f64, bool) {
    fn column(&self) -> Option<Column> {
        None
    }
}

/// Threshold cross-validation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub folds: usize,
    pub seed: u64,
    /// Use each item's published fold (1-based) instead of random folds when
    /// every item has one.
    pub published_folds: bool,
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol {
            folds: 5,
            seed: 0,
            published_folds: false,
        }
    }
}

impl Protocol {
    fn accuracy<T: AuditItem>(&self, items: &[&T]) -> Result<f64> {
        if self.published_folds && !items.is_empty() && items.iter().all(|it| it.fold().is_some()) {
            let mut folds: Vec<u32> = items.iter().filter_map(|it| it.fold()).collect();
            folds.sort_unstable();
            folds.dedup();
            let assignment: Vec<usize> = items
                .iter()
                .map(|it| folds.binary_search(&it.fold().unwrap_or_default()).unwrap_or_default())
                .collect();
            return Ok(cv_with_folds(items, &assignment, folds.len())?.mean);
        }
        Ok(cv_threshold_accuracy(items, self.folds, self.seed)?.mean)
    }
}

/// Curves, scalar metrics and threshold-protocol accuracies for one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_positive: usize,
    pub n_negative: usize,
    pub auc: f64,
    pub eer: f64,
    #[serde(with = "super::metrics::extended_f64")]
    pub eer_threshold: f64,
    pub ap: f64,
    /// Accuracy per column, averaged over negative-set versions. Columns
    /// without items are absent.
    pub accuracy: BTreeMap<Column, f64>,
    /// Accuracy per column for each negative-set version.
    pub version_accuracy: Vec<BTreeMap<Column, f64>>,
    pub roc: Vec<RocPoint>,
    pub pr: Vec<PrPoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Runs the threshold protocol on every relation column and on the whole set,
/// for each version of the test set, and averages per column across
/// versions. Curves come from the first version; AUC, EER and AP are
/// averaged across versions.
pub fn relation_breakdown<T: AuditItem>(versions: &[Vec<T>], protocol: &Protocol) -> Result<EvalReport> {
    let first = versions
        .first()
        .ok_or_else(|| Error::validation("relation breakdown needs at least one test set version"))?;
    let mut warnings = Vec::new();
    let mut version_accuracy = Vec::with_capacity(versions.len());
    let (mut auc, mut eer_rate, mut ap) = (0.0, 0.0, 0.0);

    for (v, items) in versions.iter().enumerate() {
        let mut row = BTreeMap::new();
        for col in Column::TABLE.into_iter().filter(|c| *c != Column::All) {
            let subset: Vec<&T> = items.iter().filter(|it| it.column() == Some(col)).collect();
            if subset.is_empty() {
                continue;
            }
            match protocol.accuracy(&subset) {
                Ok(acc) => {
                    row.insert(col, acc);
                }
                Err(e) => warnings.push(format!("version {v}: skipped {}: {e}", col.name())),
            }
        }
        let all: Vec<&T> = items.iter().collect();
        row.insert(Column::All, protocol.accuracy(&all)?);
        version_accuracy.push(row);

        auc += roc_auc(items)?;
        eer_rate += eer(items)?.rate;
        ap += pr_ap(items)?.1;
    }

    let n = versions.len() as f64;
    let mut accuracy = BTreeMap::new();
    for col in Column::TABLE {
        let vals: Vec<f64> = version_accuracy.iter().filter_map(|r| r.get(&col).copied()).collect();
        if vals.len() == versions.len() {
            accuracy.insert(col, vals.iter().sum::<f64>() / n);
        }
    }

    let eer_first = eer(first)?;
    Ok(EvalReport {
        n_positive: first.iter().filter(|it| it.is_positive()).count(),
        n_negative: first.iter().filter(|it| !it.is_positive()).count(),
        auc: auc / n,
        eer: eer_rate / n,
        eer_threshold: eer_first.threshold,
        ap: ap / n,
        accuracy,
        version_accuracy,
        roc: roc_curve(first)?,
        pr: pr_ap(first)?.0,
        warnings,
    })
}

/// Report for a plain scored test set with a single version.
pub fn evaluate_scores<T: AuditItem + Clone>(items: &[T], protocol: &Protocol) -> Result<EvalReport> {
    relation_breakdown(&[items.to_vec()], protocol)
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut out = String::from("fpr,tpr\n");
    for p in points {
        writeln!(out, "{},{}", p.fpr, p.tpr).expect("writing to a String cannot fail");
    }
    out
}

pub fn pr_csv(points: &[PrPoint]) -> String {
    let mut out = String::from("recall,precision\n");
    for p in points {
        writeln!(out, "{},{}", p.recall, p.precision).expect("writing to a String cannot fail");
    }
    out
}

/// One table row per named report: accuracy percentages to one decimal, in
/// column order, using only the columns present in at least one report.
pub fn breakdown_csv(rows: &[(String, &EvalReport)]) -> String {
    let columns: Vec<Column> = Column::TABLE
        .into_iter()
        .filter(|c| rows.iter().any(|(_, r)| r.accuracy.contains_key(c)))
        .collect();
    let mut out = String::from("dataset");
    for c in &columns {
        out.push(',');
        out.push_str(c.name());
    }
    out.push('\n');
    for (name, report) in rows {
        out.push_str(name);
        for c in &columns {
            out.push(',');
            if let Some(acc) = report.accuracy.get(c) {
                write!(out, "{:.1}", acc * 100.0).expect("writing to a String cannot fail");
            }
        }
        out.push('\n');
    }
    out
}
