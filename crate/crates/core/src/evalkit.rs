//! Accuracy metrics, reports and plot data.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{assign_group, DiseaseGroup, PairedExam};
use crate::error::{Error, Result};
use crate::grid::{LocationTable, Sector, NUM_LOCATIONS};
use crate::models::{ModelVariant, Prediction};
use crate::trainer::RegistryEntry;

/// Anything that maps raw RNFL thickness to a field estimate.
pub trait Estimator {
    fn estimate(&self, rnfl: &[f64]) -> Result<Prediction>;
}

impl Estimator for ModelVariant {
    fn estimate(&self, rnfl: &[f64]) -> Result<Prediction> {
        self.predict(rnfl)
    }
}

/// Sector of every location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorMap {
    pub assignment: Vec<Sector>,
}

impl SectorMap {
    pub fn from_table(table: &LocationTable) -> Result<Self> {
        let map = Self {
            assignment: table.locations.iter().map(|l| l.sector).collect(),
        };
        map.validate()?;
        Ok(map)
    }

    pub fn standard() -> Self {
        Self::from_table(&LocationTable::standard()).expect("bundled sector map is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.assignment.len() != NUM_LOCATIONS {
            return Err(Error::config(format!(
                "sector map covers {} locations, expected {NUM_LOCATIONS}",
                self.assignment.len()
            )));
        }
        for s in Sector::ALL {
            if !self.assignment.contains(&s) {
                return Err(Error::config(format!("sector {} is empty", s.as_str())));
            }
        }
        Ok(())
    }

    pub fn members(&self, s: Sector) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == s).collect()
    }
}

/// Mean with standard error (sample sd / √n; absent for n < 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: Option<f64>,
    pub count: usize,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = (n > 1).then(|| {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Some(Self { mean, se, count: n })
    }
}

/// Statistics per evaluation group; absent groups had no exams.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByGroup {
    pub early: Option<MeanSe>,
    pub moderate: Option<MeanSe>,
    pub advanced: Option<MeanSe>,
}

impl ByGroup {
    pub fn get(&self, g: DiseaseGroup) -> Option<MeanSe> {
        match g {
            DiseaseGroup::Early => self.early,
            DiseaseGroup::Moderate => self.moderate,
            DiseaseGroup::Advanced => self.advanced,
        }
    }

    fn from_values(values: &[f64], groups: &[DiseaseGroup]) -> Self {
        let pick = |g| {
            let v: Vec<f64> = values
                .iter()
                .zip(groups)
                .filter(|(_, &h)| h == g)
                .map(|(v, _)| *v)
                .collect();
            MeanSe::of(&v)
        };
        Self {
            early: pick(DiseaseGroup::Early),
            moderate: pick(DiseaseGroup::Moderate),
            advanced: pick(DiseaseGroup::Advanced),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedMae {
    pub overall: MeanSe,
    pub groups: ByGroup,
}

fn check_rows(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!("{} predictions for {} targets", preds.len(), targets.len()),
        });
    }
    if let Some(i) = (0..preds.len()).find(|&i| preds[i].len() != targets[i].len()) {
        return Err(Error::Shape {
            op: "metrics",
            detail: format!("row {i}: {} predictions for {} targets", preds[i].len(), targets[i].len()),
        });
    }
    Ok(())
}

/// Mean absolute error of each test over its locations.
pub fn per_test_mae(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_rows(preds, targets)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / p.len() as f64)
        .collect())
}

/// Per-test MAE summarized overall and per group.
pub fn pointwise_mae(preds: &[Vec<f64>], targets: &[Vec<f64>], groups: &[DiseaseGroup]) -> Result<GroupedMae> {
    let per_test = per_test_mae(preds, targets)?;
    if groups.len() != per_test.len() {
        return Err(Error::Shape {
            op: "pointwise_mae",
            detail: format!("{} groups for {} tests", groups.len(), per_test.len()),
        });
    }
    let overall = MeanSe::of(&per_test).ok_or_else(|| Error::data("no tests to evaluate"))?;
    Ok(GroupedMae {
        overall,
        groups: ByGroup::from_values(&per_test, groups),
    })
}

/// Mean value within each sector, in [`Sector::ALL`] order.
pub fn sectoral_averages(vf: &[f64], map: &SectorMap) -> Result<[f64; 6]> {
    if vf.len() != map.assignment.len() {
        return Err(Error::Shape {
            op: "sectoral_averages",
            detail: format!("{} values for {} mapped locations", vf.len(), map.assignment.len()),
        });
    }
    let mut sums = [0.0; 6];
    let mut counts = [0usize; 6];
    for (v, s) in vf.iter().zip(&map.assignment) {
        let k = Sector::ALL.iter().position(|x| x == s).expect("known sector");
        sums[k] += v;
        counts[k] += 1;
    }
    let mut out = [0.0; 6];
    for k in 0..6 {
        out[k] = sums[k] / counts[k] as f64;
    }
    Ok(out)
}

/// Coefficient of determination; `None` when the targets do not vary.
pub fn r2(preds: &[f64], targets: &[f64]) -> Result<Option<f64>> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape {
            op: "r2",
            detail: format!("{} predictions for {} targets", preds.len(), targets.len()),
        });
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Ok(None);
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum();
    Ok(Some(1.0 - ss_res / ss_tot))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorResult {
    pub sector: Sector,
    /// Absolute error of the sectoral mean total deviation.
    pub mae: MeanSe,
    /// R² of sectoral mean total deviation across exams.
    pub r2_total_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub exams: usize,
    pub pointwise: GroupedMae,
    pub md: GroupedMae,
    pub sectors: Vec<SectorResult>,
}

/// Metrics from precomputed predictions; groups come from the true MD.
pub fn report_from_predictions(preds: &[Prediction], exams: &[PairedExam], map: &SectorMap) -> Result<EvalReport> {
    if exams.is_empty() {
        return Err(Error::data("cannot evaluate an empty test set"));
    }
    if preds.len() != exams.len() {
        return Err(Error::Shape {
            op: "evaluate",
            detail: format!("{} predictions for {} exams", preds.len(), exams.len()),
        });
    }
    let groups: Vec<DiseaseGroup> = exams.iter().map(|e| assign_group(e.md)).collect::<Result<_>>()?;
    let pv: Vec<Vec<f64>> = preds.iter().map(|p| p.vf.clone()).collect();
    let tv: Vec<Vec<f64>> = exams.iter().map(|e| e.td.clone()).collect();
    let pointwise = pointwise_mae(&pv, &tv, &groups)?;
    let md_err: Vec<f64> = preds.iter().zip(exams).map(|(p, e)| (p.md - e.md).abs()).collect();
    let md = GroupedMae {
        overall: MeanSe::of(&md_err).expect("non-empty"),
        groups: ByGroup::from_values(&md_err, &groups),
    };
    let pred_sectors: Vec<[f64; 6]> = pv.iter().map(|v| sectoral_averages(v, map)).collect::<Result<_>>()?;
    let true_sectors: Vec<[f64; 6]> = tv.iter().map(|v| sectoral_averages(v, map)).collect::<Result<_>>()?;
    let mut sectors = Vec::with_capacity(6);
    for (k, &sector) in Sector::ALL.iter().enumerate() {
        let p: Vec<f64> = pred_sectors.iter().map(|s| s[k]).collect();
        let t: Vec<f64> = true_sectors.iter().map(|s| s[k]).collect();
        let err: Vec<f64> = p.iter().zip(&t).map(|(a, b)| (a - b).abs()).collect();
        sectors.push(SectorResult {
            sector,
            mae: MeanSe::of(&err).expect("non-empty"),
            r2_total_deviation: r2(&p, &t)?,
        });
    }
    Ok(EvalReport {
        exams: exams.len(),
        pointwise,
        md,
        sectors,
    })
}

/// Runs `model` on every exam and summarizes the errors.
pub fn evaluate(model: &dyn Estimator, exams: &[PairedExam], map: &SectorMap) -> Result<EvalReport> {
    if exams.is_empty() {
        return Err(Error::data("cannot evaluate an empty test set"));
    }
    let preds: Vec<Prediction> = exams.iter().map(|e| model.estimate(&e.rnfl)).collect::<Result<_>>()?;
    report_from_predictions(&preds, exams, map)
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

impl EvalReport {
    /// `metric,scope,value,se,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,scope,value,se,count\n");
        let mut row = |metric: &str, scope: &str, m: Option<MeanSe>| {
            if let Some(m) = m {
                let _ = writeln!(out, "{metric},{scope},{},{},{}", m.mean, opt(m.se), m.count);
            }
        };
        for (metric, g) in [("pointwise_mae", &self.pointwise), ("md_mae", &self.md)] {
            row(metric, "overall", Some(g.overall));
            for grp in DiseaseGroup::ALL {
                row(metric, grp.as_str(), g.groups.get(grp));
            }
        }
        for s in &self.sectors {
            row("sector_mae", s.sector.as_str(), Some(s.mae));
        }
        for s in &self.sectors {
            let _ = writeln!(
                out,
                "sector_r2_total_deviation,{},{},,{}",
                s.sector.as_str(),
                opt(s.r2_total_deviation),
                s.mae.count
            );
        }
        out
    }
}

/// Histogram of MD in `bin_width` dB bins, as `bin_low,bin_high,count`.
pub fn md_histogram_csv(exams: &[PairedExam], bin_width: f64) -> Result<String> {
    if !(bin_width > 0.0) {
        return Err(Error::config("histogram bin width must be positive"));
    }
    let mut out = String::from("bin_low,bin_high,count\n");
    if exams.is_empty() {
        return Ok(out);
    }
    let lo = exams.iter().map(|e| e.md).fold(f64::INFINITY, f64::min);
    let hi = exams.iter().map(|e| e.md).fold(f64::NEG_INFINITY, f64::max);
    let first = (lo / bin_width).floor() as i64;
    let last = (hi / bin_width).floor() as i64;
    let mut counts = vec![0usize; (last - first + 1) as usize];
    for e in exams {
        counts[((e.md / bin_width).floor() as i64 - first) as usize] += 1;
    }
    for (k, c) in counts.iter().enumerate() {
        let b = (first + k as i64) as f64 * bin_width;
        let _ = writeln!(out, "{b},{},{c}", b + bin_width);
    }
    Ok(out)
}

/// Validation MAE per group for every registry variant.
pub fn tradeoff_csv(entries: &[RegistryEntry]) -> String {
    let mut out = String::from("variant,alpha,beta,gamma,early_mae,moderate_mae,advanced_mae,overall_mae,md_mae_group_mean\n");
    for e in entries {
        let m = &e.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.id,
            e.hyper.alpha,
            e.hyper.beta,
            e.hyper.gamma,
            opt(m.mae.early),
            opt(m.mae.moderate),
            opt(m.mae.advanced),
            m.overall_mae,
            opt(m.md_mae.mean_present())
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let t = vec![vec![-1.0; 52], vec![-20.0; 52]];
        let g = [DiseaseGroup::Early, DiseaseGroup::Advanced];
        let m = pointwise_mae(&t, &t, &g).unwrap();
        assert_eq!(m.overall.mean, 0.0);
        assert!(m.groups.moderate.is_none());
    }

    #[test]
    fn mean_two_pattern() {
        let errs: Vec<f64> = (0..52).map(|j| [1.0, 2.0, 3.0][j % 3]).collect();
        let p: Vec<f64> = errs.iter().map(|e| e - 5.0).collect();
        let mut e2 = errs.clone();
        e2.truncate(51);
        let t = vec![-5.0; 52];
        let got = per_test_mae(&[p], &[t]).unwrap()[0];
        let want = errs.iter().sum::<f64>() / 52.0;
        assert!((got - want).abs() < 1e-12);
        let p3 = vec![1.0, 2.0, 3.0];
        assert!((per_test_mae(&[p3], &[vec![0.0; 3]]).unwrap()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_field_sectors() {
        let avg = sectoral_averages(&[-3.5; 52], &SectorMap::standard()).unwrap();
        assert!(avg.iter().all(|&v| v == -3.5));
    }

    #[test]
    fn one_hot_field_sectors() {
        let map = SectorMap::standard();
        let mut vf = vec![0.0; 52];
        vf[20] = 1.0;
        let owner = map.assignment[20];
        let size = map.members(owner).len() as f64;
        let avg = sectoral_averages(&vf, &map).unwrap();
        for (k, s) in Sector::ALL.iter().enumerate() {
            let want = if *s == owner { 1.0 / size } else { 0.0 };
            assert!((avg[k] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn r2_cases() {
        let t = [1.0, 2.0, 3.0];
        assert_eq!(r2(&t, &t).unwrap(), Some(1.0));
        assert_eq!(r2(&[2.0; 3], &t).unwrap(), Some(0.0));
        let c = 0.5;
        let p: Vec<f64> = t.iter().map(|v| v + c).collect();
        assert!((r2(&p, &t).unwrap().unwrap() - (1.0 - 3.0 * c * c / 2.0)).abs() < 1e-12);
        assert_eq!(r2(&[1.0, 2.0], &[4.0, 4.0]).unwrap(), None);
    }

    #[test]
    fn standard_error_needs_two() {
        assert!(MeanSe::of(&[3.0]).unwrap().se.is_none());
        let m = MeanSe::of(&[1.0, 3.0]).unwrap();
        assert!((m.se.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn histogram_counts_every_exam() {
        let mut exams = Vec::new();
        for md in [-0.5, -0.2, -7.3, -30.0] {
            let mut e = crate::dataio::tests::sample_exam();
            e.md = md;
            exams.push(e);
        }
        let csv = md_histogram_csv(&exams, 1.0).unwrap();
        let total: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 4);
    }
}
