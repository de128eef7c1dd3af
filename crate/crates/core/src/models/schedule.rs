//! Which recursive pass, and which output slot of that pass, produces each
//! visual-field location.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Hemifield, LocationTable, HEMIFIELD_LOCATIONS, NUM_LOCATIONS};

pub const PASSES: usize = 7;
pub const SLOTS: usize = 5;
/// Slots kept from each pass; the rest are discarded.
pub const KEPT_PER_PASS: [usize; PASSES] = [5, 4, 4, 4, 4, 4, 1];

/// (pass, slot), both 0-based.
pub type SlotRef = (usize, usize);

/// Mapping for one hemifield: `positions[k]` produces the k-th location of
/// the hemifield in canonical index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HemifieldSchedule {
    pub positions: Vec<SlotRef>,
}

impl HemifieldSchedule {
    /// Location k ↔ k-th kept slot in pass-major order.
    pub fn identity() -> Self {
        Self {
            positions: kept_slots().collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != HEMIFIELD_LOCATIONS {
            return Err(Error::config(format!(
                "hemifield schedule maps {} locations, expected {HEMIFIELD_LOCATIONS}",
                self.positions.len()
            )));
        }
        let mut seen = [[false; SLOTS]; PASSES];
        for &(p, s) in &self.positions {
            if p >= PASSES || s >= KEPT_PER_PASS[p] {
                return Err(Error::config(format!(
                    "pass {} slot {s} is not a kept output slot",
                    p + 1
                )));
            }
            if seen[p][s] {
                return Err(Error::config(format!(
                    "pass {} slot {s} is assigned to two locations",
                    p + 1
                )));
            }
            seen[p][s] = true;
        }
        Ok(())
    }
}

/// Kept (pass, slot) pairs in pass-major order.
pub fn kept_slots() -> impl Iterator<Item = SlotRef> {
    KEPT_PER_PASS
        .iter()
        .enumerate()
        .flat_map(|(p, &k)| (0..k).map(move |s| (p, s)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassSchedule {
    /// Canonical location indices of the superior visual hemifield.
    pub superior_locations: Vec<usize>,
    pub superior: HemifieldSchedule,
    pub inferior_locations: Vec<usize>,
    pub inferior: HemifieldSchedule,
}

impl PassSchedule {
    pub fn from_table(table: &LocationTable) -> Result<Self> {
        let side = |h: Hemifield| -> (Vec<usize>, HemifieldSchedule) {
            let locs: Vec<_> = table.locations.iter().filter(|l| l.hemifield == h).collect();
            let indices = locs.iter().map(|l| l.index).collect();
            let positions = locs
                .iter()
                .map(|l| (l.pass.wrapping_sub(1), l.slot))
                .collect();
            (indices, HemifieldSchedule { positions })
        };
        let (superior_locations, superior) = side(Hemifield::Superior);
        let (inferior_locations, inferior) = side(Hemifield::Inferior);
        let schedule = Self {
            superior_locations,
            superior,
            inferior_locations,
            inferior,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn standard() -> Self {
        Self::from_table(&LocationTable::standard()).expect("bundled table has a valid schedule")
    }

    pub fn validate(&self) -> Result<()> {
        self.superior.validate()?;
        self.inferior.validate()?;
        let mut seen = [false; NUM_LOCATIONS];
        for &i in self.superior_locations.iter().chain(&self.inferior_locations) {
            if i >= NUM_LOCATIONS || seen[i] {
                return Err(Error::config(format!(
                    "location {i} is out of range or listed in both hemifields"
                )));
            }
            seen[i] = true;
        }
        if self.superior_locations.len() != HEMIFIELD_LOCATIONS
            || self.inferior_locations.len() != HEMIFIELD_LOCATIONS
        {
            return Err(Error::config("each hemifield must list 26 locations"));
        }
        Ok(())
    }
}

/// Picks the kept slots of seven 5-slot pass outputs and orders them by the
/// schedule's location mapping.
pub fn collect_outputs(per_pass: &[[f64; SLOTS]; PASSES], schedule: &HemifieldSchedule) -> Vec<f64> {
    schedule
        .positions
        .iter()
        .map(|&(p, s)| per_pass[p][s])
        .collect()
}
