//! The 52-location 24-2 visual-field table.
//!
//! One JSON table drives the pass/slot schedule, the location coordinates
//! used for loss weighting and the sector map used in reports. Locations
//! are in right-eye orientation (blind spot at +15°), indexed row by row
//! from the top, left to right, with the two blind-spot points removed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LOCATIONS: usize = 52;
pub const HEMIFIELD_LOCATIONS: usize = 26;

const DEFAULT_TABLE: &str = include_str!("../data/locations.json");

/// Visual-field hemifield (not hemiretina).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hemifield {
    Superior,
    Inferior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sector {
    Central,
    Temporal,
    Inferior,
    InferiorNasal,
    Superior,
    SuperiorNasal,
}

impl Sector {
    pub const ALL: [Sector; 6] = [
        Sector::Central,
        Sector::Temporal,
        Sector::Inferior,
        Sector::InferiorNasal,
        Sector::Superior,
        Sector::SuperiorNasal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Sector::Central => "central",
            Sector::Temporal => "temporal",
            Sector::Inferior => "inferior",
            Sector::InferiorNasal => "inferior_nasal",
            Sector::Superior => "superior",
            Sector::SuperiorNasal => "superior_nasal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub index: usize,
    pub x_deg: f64,
    pub y_deg: f64,
    pub hemifield: Hemifield,
    /// Recursive pass that produces this location, 1-based.
    pub pass: usize,
    /// Output slot within that pass, 0-based.
    pub slot: usize,
    pub sector: Sector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationTable {
    pub schema_version: u32,
    #[serde(default)]
    pub pattern: String,
    #[serde(default)]
    pub orientation: String,
    /// Degrees between adjacent test locations.
    pub unit_deg: f64,
    pub locations: Vec<Location>,
}

impl LocationTable {
    /// The table shipped with the crate.
    pub fn standard() -> Self {
        Self::from_json(DEFAULT_TABLE).expect("bundled location table is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let table: LocationTable = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("location table: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(Error::config(format!(
                "location table schema_version {} is not supported",
                self.schema_version
            )));
        }
        if !(self.unit_deg > 0.0) {
            return Err(Error::config("location table unit_deg must be positive"));
        }
        if self.locations.len() != NUM_LOCATIONS {
            return Err(Error::config(format!(
                "location table has {} entries, expected {NUM_LOCATIONS}",
                self.locations.len()
            )));
        }
        for (i, loc) in self.locations.iter().enumerate() {
            if loc.index != i {
                return Err(Error::config(format!(
                    "location entry {i} carries index {}; entries must be in index order",
                    loc.index
                )));
            }
            if !loc.x_deg.is_finite() || !loc.y_deg.is_finite() {
                return Err(Error::config(format!("location {i} has non-finite coordinates")));
            }
        }
        for h in [Hemifield::Superior, Hemifield::Inferior] {
            let n = self.locations.iter().filter(|l| l.hemifield == h).count();
            if n != HEMIFIELD_LOCATIONS {
                return Err(Error::config(format!(
                    "{h:?} hemifield has {n} locations, expected {HEMIFIELD_LOCATIONS}"
                )));
            }
        }
        for s in Sector::ALL {
            if !self.locations.iter().any(|l| l.sector == s) {
                return Err(Error::config(format!("sector {} is empty", s.as_str())));
            }
        }
        Ok(())
    }

    pub fn hemifield_indices(&self, h: Hemifield) -> Vec<usize> {
        self.locations
            .iter()
            .filter(|l| l.hemifield == h)
            .map(|l| l.index)
            .collect()
    }

    /// Coordinates in grid units (adjacent locations one apart).
    pub fn unit_coordinates(&self) -> Vec<(f64, f64)> {
        self.locations
            .iter()
            .map(|l| (l.x_deg / self.unit_deg, l.y_deg / self.unit_deg))
            .collect()
    }
}
