//! Instantaneous emission model.
//!
//! For a vehicle at speed `v` (m/s) and acceleration `a` (m/s²) the emission
//! rate in g/s is
//!
//! ```text
//! E = max(0, c1 + c2·v + c3·v² + c4·a + c5·a² + c6·v·a)
//! ```
//!
//! with coefficients depending on vehicle category, pollutant and, for some
//! pollutants, on whether the vehicle is accelerating (`a >= threshold`) or
//! decelerating (`a < threshold`). Trip totals integrate the rate with the
//! rectangle rule over the same samples used for trip distance.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{column_indices, csv_reader, parse_f64};
use crate::trajectory::{Trajectory, TrajectoryPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleCategory {
    PetrolCar,
    DieselCar,
    LpgCar,
    HeavyDuty,
    Bus,
}

impl VehicleCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PetrolCar => "petrol_car",
            Self::DieselCar => "diesel_car",
            Self::LpgCar => "lpg_car",
            Self::HeavyDuty => "heavy_duty",
            Self::Bus => "bus",
        }
    }
}

impl fmt::Display for VehicleCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "petrol_car" | "petrol" => Self::PetrolCar,
            "diesel_car" | "diesel" => Self::DieselCar,
            "lpg_car" | "lpg" => Self::LpgCar,
            "heavy_duty" | "hdv" => Self::HeavyDuty,
            "bus" => Self::Bus,
            _ => return Err(Error::invalid(format!("unknown vehicle category `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pollutant {
    #[serde(rename = "CO2")]
    Co2,
    #[serde(rename = "NOx")]
    Nox,
    #[serde(rename = "VOC")]
    Voc,
    #[serde(rename = "PM")]
    Pm,
}

impl Pollutant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Co2 => "CO2",
            Self::Nox => "NOx",
            Self::Voc => "VOC",
            Self::Pm => "PM",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pollutant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "CO2" => Self::Co2,
            "NOX" => Self::Nox,
            "VOC" => Self::Voc,
            "PM" => Self::Pm,
            _ => return Err(Error::invalid(format!("unknown pollutant `{s}`"))),
        })
    }
}

/// Acceleration regime a coefficient set applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    All,
    /// `a >= threshold`
    Above,
    /// `a < threshold`
    Below,
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "all" => Self::All,
            "above" => Self::Above,
            "below" => Self::Below,
            _ => return Err(Error::invalid(format!("unknown regime `{s}` (all|above|below)"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub category: VehicleCategory,
    pub pollutant: Pollutant,
    pub regime: Regime,
    /// Regime boundary in m/s²; unused for `Regime::All`.
    pub threshold: f64,
    pub c: [f64; 6],
}

impl CoefficientSet {
    /// Petrol-car CO2 set with a single regime; handy for tests and defaults.
    pub fn single(category: VehicleCategory, pollutant: Pollutant, c: [f64; 6]) -> Self {
        Self {
            category,
            pollutant,
            regime: Regime::All,
            threshold: 0.0,
            c,
        }
    }

    /// Emission rate in g/s.
    #[inline]
    pub fn rate(&self, v: f64, a: f64) -> f64 {
        let c = &self.c;
        (c[0] + c[1] * v + c[2] * v * v + c[3] * a + c[4] * a * a + c[5] * v * a).max(0.0)
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        let mut s = *self;
        s.c.iter_mut().for_each(|c| *c *= lambda);
        s
    }
}

/// Coefficients for one (category, pollutant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RegimeEntry {
    Single(CoefficientSet),
    Split {
        threshold: f64,
        above: CoefficientSet,
        below: CoefficientSet,
    },
}

impl RegimeEntry {
    #[inline]
    pub fn select(&self, a: f64) -> &CoefficientSet {
        match self {
            RegimeEntry::Single(s) => s,
            RegimeEntry::Split {
                threshold,
                above,
                below,
            } => {
                if a >= *threshold {
                    above
                } else {
                    below
                }
            }
        }
    }

    #[inline]
    pub fn rate(&self, v: f64, a: f64) -> f64 {
        self.select(a).rate(v, a)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CoefficientTable {
    entries: BTreeMap<(VehicleCategory, Pollutant), RegimeEntry>,
}

impl CoefficientTable {
    /// Build a table, rejecting overlapping keys and incomplete regime splits.
    pub fn from_sets<I: IntoIterator<Item = CoefficientSet>>(sets: I) -> Result<Self> {
        let mut grouped: BTreeMap<(VehicleCategory, Pollutant), BTreeMap<Regime, CoefficientSet>> =
            BTreeMap::new();
        for s in sets {
            if s.c.iter().any(|c| !c.is_finite()) || !s.threshold.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite coefficient for {}/{}",
                    s.category, s.pollutant
                )));
            }
            let slot = grouped.entry((s.category, s.pollutant)).or_default();
            if slot.insert(s.regime, s).is_some() {
                return Err(Error::invalid(format!(
                    "duplicate coefficients for {}/{}/{:?}",
                    s.category, s.pollutant, s.regime
                )));
            }
        }
        let mut entries = BTreeMap::new();
        for (key, regimes) in grouped {
            let entry = match (
                regimes.get(&Regime::All),
                regimes.get(&Regime::Above),
                regimes.get(&Regime::Below),
            ) {
                (Some(all), None, None) => RegimeEntry::Single(*all),
                (None, Some(above), Some(below)) => {
                    if above.threshold != below.threshold {
                        return Err(Error::invalid(format!(
                            "{}/{}: above/below thresholds differ",
                            key.0, key.1
                        )));
                    }
                    RegimeEntry::Split {
                        threshold: above.threshold,
                        above: *above,
                        below: *below,
                    }
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "{}/{}: regimes must be either `all` or both `above` and `below`",
                        key.0, key.1
                    )))
                }
            };
            entries.insert(key, entry);
        }
        Ok(Self { entries })
    }

    /// Read `category,pollutant,regime,threshold,c1,c2,c3,c4,c5,c6`.
    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let mut r = csv_reader(rdr);
        let cols = [
            "category", "pollutant", "regime", "threshold", "c1", "c2", "c3", "c4", "c5", "c6",
        ];
        let idx = column_indices(r.headers()?, &cols)?;
        let mut sets = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line());
            let bad = |e: Error| Error::MalformedRow {
                row,
                message: e.to_string(),
            };
            let regime: Regime = rec[idx[2]].parse().map_err(bad)?;
            let threshold = match (&rec[idx[3]], regime) {
                ("", Regime::All) => 0.0,
                (s, _) => parse_f64(s, "threshold", row)?,
            };
            let mut c = [0.0; 6];
            for (j, slot) in c.iter_mut().enumerate() {
                *slot = parse_f64(&rec[idx[4 + j]], cols[4 + j], row)?;
            }
            sets.push(CoefficientSet {
                category: rec[idx[0]].parse().map_err(bad)?,
                pollutant: rec[idx[1]].parse().map_err(bad)?,
                regime,
                threshold,
                c,
            });
        }
        Self::from_sets(sets)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::read_csv(crate::io::open(path)?)
    }

    pub fn entry(&self, category: VehicleCategory, pollutant: Pollutant) -> Result<&RegimeEntry> {
        self.entries
            .get(&(category, pollutant))
            .ok_or_else(|| Error::MissingCoefficients {
                category: category.to_string(),
                pollutant: pollutant.to_string(),
            })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The unique coefficient set for `(category, pollutant)` at acceleration `a`.
pub fn select_coefficients(
    table: &CoefficientTable,
    category: VehicleCategory,
    pollutant: Pollutant,
    a: f64,
) -> Result<&CoefficientSet> {
    Ok(table.entry(category, pollutant)?.select(a))
}

/// Emission rate (g/s) at one sample.
pub fn instantaneous_emission(point: &TrajectoryPoint, c: &CoefficientSet) -> f64 {
    c.rate(point.v, point.a.unwrap_or(0.0))
}

/// Grams emitted over a trajectory with per-sample regime selection.
pub fn trajectory_emission_with(traj: &Trajectory, entry: &RegimeEntry) -> f64 {
    traj.kinematics().map(|(v, a)| entry.rate(v, a)).sum::<f64>() * traj.step()
}

pub fn trajectory_emission(
    traj: &Trajectory,
    table: &CoefficientTable,
    category: VehicleCategory,
    pollutant: Pollutant,
) -> Result<f64> {
    Ok(trajectory_emission_with(traj, table.entry(category, pollutant)?))
}
