//! Synthetic paired exams with a known structure-function mapping.
//!
//! Each eye gets a double-hump TSNIT thickness profile and a damage
//! profile D(θ) ∈ [0, 1] over disc angle θ (0° temporal, 90° superior,
//! 180° nasal, 270° inferior). Damage is a diffuse floor plus up to three
//! raised-cosine wedges, scaled by a factor k that is solved for so the
//! noiseless MD hits a target drawn from the requested interval.
//!
//! Every visual-field location is tied to one disc angle; its loss L_j is
//! the mean damage within ±12° of that angle, and its total deviation is
//! −36·L_j dB plus noise that grows with L_j. Thickness thins by
//! min(0.65, 0.85·D), so it floors out in advanced damage while the field
//! keeps falling.

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{assign_interval, Eye, MdInterval, PairedExam, RNFL_LENGTH};
use crate::error::{Error, Result};
use crate::grid::{Hemifield, LocationTable, NUM_LOCATIONS};

/// dB lost at a fully damaged location.
pub const FULL_LOSS_DB: f64 = 36.0;
/// Half-width of the disc arc feeding one location, in degrees.
pub const LOSS_WINDOW_DEG: f64 = 12.0;
pub const MAX_THINNING: f64 = 0.65;
pub const THINNING_PER_DAMAGE: f64 = 0.85;
const TD_CLAMP: (f64, f64) = (-39.0, 9.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    /// Target share of exams per MD interval.
    pub mix: [f64; 4],
    /// Off gives noiseless thickness and fields.
    pub noise: bool,
    /// Share of exams made to fail one reliability rule.
    pub unreliable_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            seed: 0,
            mix: [0.70, 0.15, 0.10, 0.05],
            noise: true,
            unreliable_fraction: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mix.iter().any(|p| !(*p >= 0.0)) || (self.mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "interval mix {:?} must be non-negative and sum to 1",
                self.mix
            )));
        }
        if !(0.0..=1.0).contains(&self.unreliable_fraction) {
            return Err(Error::config("unreliable_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// A raised-cosine arc of damage on the disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wedge {
    pub center_deg: f64,
    pub half_width_deg: f64,
    pub depth: f64,
}

impl Wedge {
    pub fn at(&self, theta: f64) -> f64 {
        let d = angular_distance(theta, self.center_deg);
        if d >= self.half_width_deg {
            0.0
        } else {
            self.depth * 0.5 * (1.0 + (std::f64::consts::PI * d / self.half_width_deg).cos())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DamagePattern {
    pub diffuse: f64,
    pub wedges: Vec<Wedge>,
}

impl DamagePattern {
    /// D(θ) at every RNFL sample for scale `k`.
    pub fn damage(&self, k: f64) -> Vec<f64> {
        (0..RNFL_LENGTH)
            .map(|i| {
                let theta = rnfl_angle(i);
                let raw = self.diffuse + self.wedges.iter().map(|w| w.at(theta)).sum::<f64>();
                (k * raw).min(1.0)
            })
            .collect()
    }
}

/// Disc angle of RNFL sample `i`, degrees in [0, 360).
pub fn rnfl_angle(i: usize) -> f64 {
    i as f64 * 360.0 / RNFL_LENGTH as f64
}

pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Disc angle feeding each visual-field location. Superior-field
/// locations draw on the inferior disc (180°–360°), inferior-field ones on
/// the superior disc.
pub fn location_disc_angles(table: &LocationTable) -> Vec<f64> {
    let bs = 2.5; // blind-spot column, grid units
    table
        .locations
        .iter()
        .map(|l| {
            let x = l.x_deg / table.unit_deg;
            let y = l.y_deg / table.unit_deg;
            let a = (y.abs() + (-x).max(0.0)).atan2(bs - x).to_degrees();
            match l.hemifield {
                Hemifield::Inferior => a,
                Hemifield::Superior => 360.0 - a,
            }
        })
        .collect()
}

/// Healthy thickness profile parameters of one eye.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HealthyProfile {
    pub scale: f64,
    pub superior_peak_deg: f64,
    pub inferior_peak_deg: f64,
}

impl Default for HealthyProfile {
    fn default() -> Self {
        Self {
            scale: 1.0,
            superior_peak_deg: 75.0,
            inferior_peak_deg: 285.0,
        }
    }
}

impl HealthyProfile {
    pub fn thickness(&self) -> Vec<f64> {
        let bump = |theta: f64, c: f64| {
            let d = angular_distance(theta, c);
            (-d * d / (2.0 * 30.0 * 30.0)).exp()
        };
        (0..RNFL_LENGTH)
            .map(|i| {
                let t = rnfl_angle(i);
                self.scale * (45.0 + 85.0 * bump(t, self.superior_peak_deg) + 80.0 * bump(t, self.inferior_peak_deg))
            })
            .collect()
    }
}

/// The generator's ground-truth mapping from damage to field loss.
#[derive(Debug, Clone)]
pub struct Generator {
    angles: Vec<f64>,
    windows: Vec<Vec<usize>>,
}

impl Generator {
    pub fn new(table: &LocationTable) -> Self {
        let angles = location_disc_angles(table);
        let windows = angles
            .iter()
            .map(|&a| {
                (0..RNFL_LENGTH)
                    .filter(|&i| angular_distance(rnfl_angle(i), a) <= LOSS_WINDOW_DEG)
                    .collect()
            })
            .collect();
        Self { angles, windows }
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    /// RNFL sample indices feeding each location.
    pub fn windows(&self) -> &[Vec<usize>] {
        &self.windows
    }

    /// Loss L_j ∈ [0, 1] per location.
    pub fn location_loss(&self, damage: &[f64]) -> Vec<f64> {
        self.windows
            .iter()
            .map(|w| w.iter().map(|&i| damage[i]).sum::<f64>() / w.len() as f64)
            .collect()
    }

    pub fn noiseless_md(&self, pattern: &DamagePattern, k: f64) -> f64 {
        let loss = self.location_loss(&pattern.damage(k));
        -FULL_LOSS_DB * loss.iter().sum::<f64>() / NUM_LOCATIONS as f64
    }

    /// Scale k giving noiseless MD `target`, or `None` if the pattern
    /// cannot reach it.
    pub fn calibrate(&self, pattern: &DamagePattern, target: f64) -> Option<f64> {
        if target >= 0.0 {
            return Some(0.0);
        }
        let mut hi = 1.0;
        while self.noiseless_md(pattern, hi) > target {
            hi *= 2.0;
            if hi > 1e6 {
                return None;
            }
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.noiseless_md(pattern, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    /// Thickness and total-deviation values for one exam. Without `rng`
    /// the result is noiseless.
    pub fn render(
        &self,
        pattern: &DamagePattern,
        k: f64,
        healthy: &HealthyProfile,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, Vec<f64>) {
        let damage = pattern.damage(k);
        let loss = self.location_loss(&damage);
        let base = healthy.thickness();
        let mut rnfl: Vec<f64> = base
            .iter()
            .zip(&damage)
            .map(|(h, d)| h * (1.0 - (THINNING_PER_DAMAGE * d).min(MAX_THINNING)))
            .collect();
        let mut td: Vec<f64> = loss.iter().map(|l| -FULL_LOSS_DB * l).collect();
        if let Some(rng) = rng {
            let unit = Normal::new(0.0, 1.0).expect("unit normal");
            for r in rnfl.iter_mut() {
                *r += 3.0 * unit.sample(rng);
            }
            let shift = 0.5 * unit.sample(rng);
            for (t, l) in td.iter_mut().zip(&loss) {
                *t += shift + (0.8 + 2.5 * l) * unit.sample(rng);
            }
        }
        for r in rnfl.iter_mut() {
            *r = r.max(0.0);
        }
        for t in td.iter_mut() {
            *t = t.clamp(TD_CLAMP.0, TD_CLAMP.1);
        }
        (rnfl, td)
    }
}

fn target_range(interval: MdInterval) -> (f64, f64) {
    match interval {
        MdInterval::I1 => (-5.8, -0.5),
        MdInterval::I2 => (-15.8, -6.2),
        MdInterval::I3 => (-25.8, -16.2),
        MdInterval::I4 => (-33.0, -26.3),
    }
}

fn sample_pattern(interval: MdInterval, rng: &mut ChaCha8Rng) -> DamagePattern {
    let (wedges, diffuse) = match interval {
        MdInterval::I1 => (rng.random_range(0..=2), rng.random_range(0.02..0.3)),
        MdInterval::I2 => (rng.random_range(1..=3), rng.random_range(0.05..0.3)),
        _ => (rng.random_range(2..=3), rng.random_range(0.1..0.5)),
    };
    let wedges = (0..wedges)
        .map(|_| {
            let superior = rng.random_bool(0.5);
            let center_deg = if superior {
                rng.random_range(40.0..150.0)
            } else {
                rng.random_range(210.0..320.0)
            };
            Wedge {
                center_deg,
                half_width_deg: rng.random_range(15.0..45.0),
                depth: rng.random_range(0.5..1.5),
            }
        })
        .collect();
    DamagePattern { diffuse, wedges }
}

fn pick_interval(mix: &[f64; 4], rng: &mut ChaCha8Rng) -> MdInterval {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return MdInterval::ALL[i];
        }
    }
    *MdInterval::ALL
        .iter()
        .rev()
        .find(|i| mix[i.index()] > 0.0)
        .unwrap_or(&MdInterval::I1)
}

fn summary(td: &[f64]) -> (f64, f64) {
    let n = td.len() as f64;
    let md = td.iter().sum::<f64>() / n;
    let psd = (td.iter().map(|t| (t - md) * (t - md)).sum::<f64>() / (n - 1.0)).sqrt();
    (md, psd)
}

/// Draws one exam's fields for an eye, retrying noise and targets until
/// the MD lands in `interval`.
fn draw_fields(
    gen: &Generator,
    pattern: &mut DamagePattern,
    interval: MdInterval,
    healthy: &HealthyProfile,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let (lo, hi) = target_range(interval);
    loop {
        let undamaged = interval == MdInterval::I1 && pattern.wedges.is_empty() && pattern.diffuse == 0.0;
        let k = if undamaged {
            Some(0.0)
        } else {
            gen.calibrate(pattern, rng.random_range(lo..hi))
        };
        let Some(k) = k else {
            *pattern = sample_pattern(interval, rng);
            continue;
        };
        for _ in 0..50 {
            let (rnfl, td) = if cfg.noise {
                gen.render(pattern, k, healthy, Some(rng))
            } else {
                gen.render(pattern, k, healthy, None)
            };
            let (md, psd) = summary(&td);
            if assign_interval(md).ok() == Some(interval) {
                return (rnfl, td, md, psd);
            }
        }
        *pattern = sample_pattern(interval, rng);
    }
}

fn make_unreliable(exam: &mut PairedExam, rng: &mut ChaCha8Rng) {
    match rng.random_range(0..4) {
        0 => exam.fixation_loss_pct = rng.random_range(34.0..60.0),
        1 => exam.false_positive_pct = rng.random_range(16.0..30.0),
        2 => exam.quality_score = rng.random_range(5.0..14.9),
        _ => exam.sap_date = exam.sdoct_date + Duration::days(rng.random_range(181..400)),
    }
}

/// Generates `cfg.n` exams. Patients have one or two eyes with one to
/// three visits each; each eye's MD interval is drawn from `cfg.mix`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<PairedExam>> {
    cfg.validate()?;
    synth_generate_with(cfg, &LocationTable::standard())
}

pub fn synth_generate_with(cfg: &SynthConfig, table: &LocationTable) -> Result<Vec<PairedExam>> {
    cfg.validate()?;
    let gen = Generator::new(table);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let epoch = NaiveDate::from_ymd_opt(2008, 1, 1).expect("valid date");
    let mut exams = Vec::with_capacity(cfg.n);
    let mut patient = 0usize;
    while exams.len() < cfg.n {
        patient += 1;
        let patient_id = format!("P{patient:06}");
        let age0: f64 = rng.random_range(35.0..85.0);
        let eyes: &[Eye] = if rng.random_bool(0.6) {
            &[Eye::Right, Eye::Left]
        } else if rng.random_bool(0.5) {
            &[Eye::Right]
        } else {
            &[Eye::Left]
        };
        for &eye in eyes {
            let interval = pick_interval(&cfg.mix, &mut rng);
            let mut pattern = if interval == MdInterval::I1 && rng.random_bool(0.4) {
                DamagePattern::default()
            } else {
                sample_pattern(interval, &mut rng)
            };
            let healthy = HealthyProfile {
                scale: 1.0 + 0.09 * Normal::new(0.0, 1.0).expect("unit normal").sample(&mut rng),
                superior_peak_deg: 75.0 + rng.random_range(-8.0..8.0),
                inferior_peak_deg: 285.0 + rng.random_range(-8.0..8.0),
            };
            let visits = rng.random_range(1..=3);
            let mut date = epoch + Duration::days(rng.random_range(0..2500));
            for _ in 0..visits {
                if exams.len() >= cfg.n {
                    break;
                }
                let (rnfl, td, md, psd) = draw_fields(&gen, &mut pattern, interval, &healthy, cfg, &mut rng);
                let gap = rng.random_range(-90..=90);
                let mut exam = PairedExam {
                    patient_id: patient_id.clone(),
                    eye,
                    age: age0 + (date - epoch).num_days() as f64 / 365.25,
                    sdoct_date: date,
                    sap_date: date + Duration::days(gap),
                    quality_score: rng.random_range(16.0..40.0),
                    fixation_loss_pct: rng.random_range(0.0..25.0),
                    false_positive_pct: rng.random_range(0.0..12.0),
                    rnfl,
                    td,
                    md,
                    psd,
                };
                if cfg.unreliable_fraction > 0.0 && rng.random_bool(cfg.unreliable_fraction) {
                    make_unreliable(&mut exam, &mut rng);
                }
                exams.push(exam);
                date += Duration::days(rng.random_range(150..500));
            }
        }
    }
    Ok(exams)
}
