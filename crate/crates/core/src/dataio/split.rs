use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assign_group, assign_interval, PairedExam};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    /// Exams per split (train, val, test).
    pub exams: [usize; 3],
    pub patients: [usize; 3],
    /// Exams per MD training interval, per split.
    pub intervals: [[usize; 4]; 3],
    /// Exams per evaluation group, per split.
    pub groups: [[usize; 3]; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<PairedExam>,
    pub val: Vec<PairedExam>,
    pub test: Vec<PairedExam>,
    pub stats: SplitStats,
    pub assignment: BTreeMap<String, SplitName>,
}

impl Split {
    pub fn part(&self, name: SplitName) -> &[PairedExam] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }
}

/// Shuffles patients with a seeded generator and hands each, with all of
/// its exams, to the split furthest below its exam-count target. Every
/// split receives at least one patient.
pub fn split_by_patient(exams: &[PairedExam], fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(*f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in exams.iter().enumerate() {
        by_patient.entry(e.patient_id.as_str()).or_default().push(i);
    }
    if by_patient.len() < 3 {
        return Err(Error::config(format!(
            "need at least 3 patients to split, found {}",
            by_patient.len()
        )));
    }
    let mut patients: Vec<(&str, Vec<usize>)> = by_patient.into_iter().collect();
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let total = exams.len() as f64;
    let mut counts = [0usize; 3];
    let mut members = [0usize; 3];
    let mut assignment = BTreeMap::new();
    let mut parts: [Vec<usize>; 3] = Default::default();
    let n_patients = patients.len();
    for (k, (pid, idx)) in patients.into_iter().enumerate() {
        let remaining = n_patients - k;
        let empty: Vec<usize> = (0..3).filter(|&s| members[s] == 0).collect();
        let deficit = |s: usize| fractions[s] * total - counts[s] as f64;
        let candidates: Vec<usize> = if remaining <= empty.len() { empty } else { (0..3).collect() };
        let mut best = candidates[0];
        for &s in &candidates[1..] {
            if deficit(s) > deficit(best) {
                best = s;
            }
        }
        counts[best] += idx.len();
        members[best] += 1;
        parts[best].extend(idx);
        assignment.insert(pid.to_string(), SplitName::ALL[best]);
    }

    let mut stats = SplitStats {
        exams: counts,
        patients: members,
        ..Default::default()
    };
    let mut out: [Vec<PairedExam>; 3] = Default::default();
    for s in 0..3 {
        parts[s].sort_unstable();
        for &i in &parts[s] {
            let e = &exams[i];
            stats.intervals[s][assign_interval(e.md)?.index()] += 1;
            stats.groups[s][assign_group(e.md)?.index()] += 1;
            out[s].push(e.clone());
        }
    }
    let [train, val, test] = out;
    Ok(Split {
        train,
        val,
        test,
        stats,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::tests::sample_exam;

    fn exams_for(patients: &[(&str, usize)]) -> Vec<PairedExam> {
        patients
            .iter()
            .flat_map(|&(p, n)| {
                (0..n).map(move |_| PairedExam {
                    patient_id: p.to_string(),
                    ..sample_exam()
                })
            })
            .collect()
    }

    #[test]
    fn ten_singletons_split_six_two_two() {
        let ids: Vec<String> = (0..10).map(|i| format!("P{i}")).collect();
        let spec: Vec<(&str, usize)> = ids.iter().map(|s| (s.as_str(), 1)).collect();
        let split = split_by_patient(&exams_for(&spec), [0.6, 0.2, 0.2], 3).unwrap();
        assert_eq!(split.stats.exams, [6, 2, 2]);
    }

    #[test]
    fn large_patient_stays_together() {
        let ids: Vec<String> = (0..9).map(|i| format!("S{i}")).collect();
        let mut spec: Vec<(&str, usize)> = ids.iter().map(|s| (s.as_str(), 1)).collect();
        spec.push(("BIG", 100));
        let split = split_by_patient(&exams_for(&spec), [0.6, 0.2, 0.2], 11).unwrap();
        let holders = SplitName::ALL
            .iter()
            .filter(|&&s| split.part(s).iter().any(|e| e.patient_id == "BIG"))
            .count();
        assert_eq!(holders, 1);
        assert!(split.stats.exams.iter().all(|&n| n > 0));
    }

    #[test]
    fn too_few_patients() {
        let err = split_by_patient(&exams_for(&[("A", 3), ("B", 2)]), [0.6, 0.2, 0.2], 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn fractions_must_sum_to_one() {
        assert!(split_by_patient(&exams_for(&[("A", 1), ("B", 1), ("C", 1)]), [0.5, 0.2, 0.2], 0).is_err());
    }
}
