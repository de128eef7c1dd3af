use serde::{Deserialize, Serialize};

use super::PairedExam;

pub const MAX_FIXATION_LOSS_PCT: f64 = 33.0;
pub const MAX_FALSE_POSITIVE_PCT: f64 = 15.0;
pub const MIN_QUALITY_SCORE: f64 = 15.0;
pub const MAX_PAIRING_GAP_DAYS: i64 = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    FixationLoss,
    FalsePositive,
    Quality,
    PairingWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejected {
    pub exam: PairedExam,
    /// Every rule the exam broke, in a fixed order.
    pub reasons: Vec<RejectReason>,
}

pub fn rejection_reasons(e: &PairedExam) -> Vec<RejectReason> {
    let mut reasons = Vec::new();
    if e.fixation_loss_pct > MAX_FIXATION_LOSS_PCT {
        reasons.push(RejectReason::FixationLoss);
    }
    if e.false_positive_pct > MAX_FALSE_POSITIVE_PCT {
        reasons.push(RejectReason::FalsePositive);
    }
    if e.quality_score < MIN_QUALITY_SCORE {
        reasons.push(RejectReason::Quality);
    }
    if e.date_gap_days() > MAX_PAIRING_GAP_DAYS {
        reasons.push(RejectReason::PairingWindow);
    }
    reasons
}

/// Splits exams into those passing every reliability rule and those
/// rejected, preserving input order in both.
pub fn reliability_filter(exams: Vec<PairedExam>) -> (Vec<PairedExam>, Vec<Rejected>) {
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for exam in exams {
        let reasons = rejection_reasons(&exam);
        if reasons.is_empty() {
            kept.push(exam);
        } else {
            rejected.push(Rejected { exam, reasons });
        }
    }
    (kept, rejected)
}
