//! Month profiles and monthly demand factors.
//!
//! Each month carries its day count `N_m` and a temperature factor `T_m`.
//! Demand factors `phi_m` are fitted per OD pair so that base-case flows
//! through counting stations, scaled by `phi`, reproduce the observed monthly
//! mean daily volumes. The fit is a multiplicative proportional update using
//! the geometric mean of the observed/modeled ratios over each OD's stations.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{OdPair, StationId};
use crate::io::{column_indices, csv_reader, parse_f64};

pub const MONTH_LABELS: [&str; 12] = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
];

const DAYS: [u32; 12] = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];

pub const DEFAULT_COLD_FACTOR: f64 = 1.11;

/// Dec through Mar.
pub const DEFAULT_TEMP_FACTORS: [f64; 12] = [
    DEFAULT_COLD_FACTOR,
    DEFAULT_COLD_FACTOR,
    DEFAULT_COLD_FACTOR,
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    1.0,
    DEFAULT_COLD_FACTOR,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthProfile {
    /// 1-based.
    pub month: u8,
    pub n_days: u32,
    pub temp_factor: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalendarConfig {
    pub leap_year: bool,
    /// Jan..Dec.
    pub temp_factors: [f64; 12],
}

impl Default for CalendarConfig {
    fn default() -> Self {
        Self {
            leap_year: false,
            temp_factors: DEFAULT_TEMP_FACTORS,
        }
    }
}

pub fn month_profile(config: &CalendarConfig) -> Result<[MonthProfile; 12]> {
    if let Some((i, t)) = config
        .temp_factors
        .iter()
        .enumerate()
        .find(|(_, t)| !(t.is_finite() && **t > 0.0))
    {
        return Err(Error::Config(format!(
            "temperature factor for {} must be > 0, got {t}",
            MONTH_LABELS[i]
        )));
    }
    Ok(std::array::from_fn(|i| MonthProfile {
        month: i as u8 + 1,
        n_days: if i == 1 && config.leap_year { 29 } else { DAYS[i] },
        temp_factor: config.temp_factors[i],
        label: MONTH_LABELS[i].to_owned(),
    }))
}

fn month_index(month: u8) -> Result<usize> {
    if (1..=12).contains(&month) {
        Ok(usize::from(month) - 1)
    } else {
        Err(Error::invalid(format!("month must be 1..=12, got {month}")))
    }
}

fn parse_month(s: &str, row: u64) -> Result<u8> {
    match s.parse::<u8>() {
        Ok(m) if (1..=12).contains(&m) => Ok(m),
        _ => Err(Error::MalformedRow {
            row,
            message: format!("month `{s}` is not in 1..=12"),
        }),
    }
}

/// Base-case daily contribution of each OD pair's flow to each station.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OdStationIncidence {
    by_od: BTreeMap<OdPair, BTreeMap<StationId, f64>>,
}

impl OdStationIncidence {
    pub fn from_rows<I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (OdPair, StationId, f64)>,
    {
        let mut by_od: BTreeMap<OdPair, BTreeMap<StationId, f64>> = BTreeMap::new();
        for (od, station, c) in rows {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::invalid(format!(
                    "contribution of {od} at {station} must be finite and >= 0, got {c}"
                )));
            }
            if by_od.entry(od.clone()).or_default().insert(station.clone(), c).is_some() {
                return Err(Error::invalid(format!("duplicate incidence entry {od} at {station}")));
            }
        }
        Ok(Self { by_od })
    }

    /// Read `od_id,station_id,contribution`.
    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let mut r = csv_reader(rdr);
        let idx = column_indices(r.headers()?, &["od_id", "station_id", "contribution"])?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line());
            let od: OdPair = rec[idx[0]].parse().map_err(|e: Error| Error::MalformedRow {
                row,
                message: e.to_string(),
            })?;
            let c = parse_f64(&rec[idx[2]], "contribution", row)?;
            rows.push((od, StationId::new(&rec[idx[1]]), c));
        }
        Self::from_rows(rows)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::read_csv(crate::io::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["od_id", "station_id", "contribution"])?;
        for (od, stations) in &self.by_od {
            for (s, c) in stations {
                w.write_record([od.to_string(), s.to_string(), c.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn ods(&self) -> impl Iterator<Item = &OdPair> {
        self.by_od.keys()
    }

    pub fn stations_of(&self, od: &OdPair) -> impl Iterator<Item = (&StationId, f64)> {
        self.by_od.get(od).into_iter().flatten().map(|(s, c)| (s, *c))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OdPair, &StationId, f64)> {
        self.by_od
            .iter()
            .flat_map(|(od, m)| m.iter().map(move |(s, c)| (od, s, *c)))
    }

    /// Modeled base volume at each station (all `phi = 1`).
    pub fn base_volumes(&self) -> BTreeMap<StationId, f64> {
        let mut out = BTreeMap::new();
        for (_, s, c) in self.iter() {
            *out.entry(s.clone()).or_insert(0.0) += c;
        }
        out
    }

    /// Modeled volume at each station under per-OD factors (missing ODs count as 1).
    pub fn modeled_volumes(&self, phi: &BTreeMap<OdPair, f64>) -> BTreeMap<StationId, f64> {
        let mut out = BTreeMap::new();
        for (od, s, c) in self.iter() {
            *out.entry(s.clone()).or_insert(0.0) += phi.get(od).copied().unwrap_or(1.0) * c;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationObservation {
    pub station_id: StationId,
    pub month: u8,
    /// Mean daily volume, vehicles/day.
    pub volume: f64,
}

/// Read `station_id,month,mean_daily_volume`.
pub fn read_observations_csv<R: Read>(rdr: R) -> Result<Vec<StationObservation>> {
    let mut r = csv_reader(rdr);
    let idx = column_indices(r.headers()?, &["station_id", "month", "mean_daily_volume"])?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let month = parse_month(&rec[idx[1]], row)?;
        let volume = parse_f64(&rec[idx[2]], "mean_daily_volume", row)?;
        if volume < 0.0 {
            return Err(Error::MalformedRow {
                row,
                message: format!("volume must be >= 0, got {volume}"),
            });
        }
        let station_id = StationId::new(&rec[idx[0]]);
        if !seen.insert((station_id.clone(), month)) {
            return Err(Error::MalformedRow {
                row,
                message: format!("duplicate observation for {station_id} month {month}"),
            });
        }
        out.push(StationObservation {
            station_id,
            month,
            volume,
        });
    }
    Ok(out)
}

pub fn read_observations_path(path: &Path) -> Result<Vec<StationObservation>> {
    read_observations_csv(crate::io::open(path)?)
}

pub fn write_observations_csv<W: Write>(obs: &[StationObservation], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["station_id", "month", "mean_daily_volume"])?;
    for o in obs {
        w.write_record([o.station_id.to_string(), o.month.to_string(), o.volume.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IpfOptions {
    /// Stop when every used station's relative residual is below this.
    pub epsilon: f64,
    pub max_iter: usize,
}

impl Default for IpfOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub month: u8,
    /// Update sweeps performed.
    pub iterations: usize,
    pub max_rel_residual: f64,
    pub converged: bool,
    pub stations_used: usize,
    /// ODs without an observed station; they receive the network mean ratio.
    pub uncovered: Vec<OdPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonthlyFit {
    pub phi: BTreeMap<OdPair, f64>,
    /// Network-wide observed/base ratio over the used stations.
    pub network_ratio: f64,
    pub report: ConvergenceReport,
}

/// Fit `phi` for one month. Stations without an observation for `month`, or
/// with zero modeled base volume, are ignored.
pub fn estimate_monthly_factors(
    incidence: &OdStationIncidence,
    observations: &[StationObservation],
    month: u8,
    options: &IpfOptions,
) -> Result<MonthlyFit> {
    month_index(month)?;
    if !(options.epsilon > 0.0) {
        return Err(Error::Config(format!("IPF epsilon must be > 0, got {}", options.epsilon)));
    }
    let base = incidence.base_volumes();
    let observed: BTreeMap<&StationId, f64> = observations
        .iter()
        .filter(|o| o.month == month)
        .filter(|o| base.get(&o.station_id).is_some_and(|b| *b > 0.0))
        .map(|o| (&o.station_id, o.volume))
        .collect();
    if observed.is_empty() {
        return Err(Error::Validation(format!(
            "no counting station with an observation and positive base volume in month {month}"
        )));
    }
    if let Some((s, v)) = observed.iter().find(|(_, v)| **v <= 0.0) {
        return Err(Error::Validation(format!(
            "observed volume at used station {s} in month {month} must be > 0, got {v}"
        )));
    }

    let stations: Vec<&StationId> = observed.keys().copied().collect();
    let station_pos: BTreeMap<&StationId, usize> =
        stations.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let obs: Vec<f64> = stations.iter().map(|s| observed[s]).collect();

    // Covered ODs with their (station index, contribution) lists.
    let mut covered: Vec<(&OdPair, Vec<(usize, f64)>)> = Vec::new();
    let mut uncovered = Vec::new();
    for od in incidence.ods() {
        let links: Vec<(usize, f64)> = incidence
            .stations_of(od)
            .filter(|(_, c)| *c > 0.0)
            .filter_map(|(s, c)| station_pos.get(s).map(|i| (*i, c)))
            .collect();
        if links.is_empty() {
            uncovered.push(od.clone());
        } else {
            covered.push((od, links));
        }
    }

    let network_ratio =
        obs.iter().sum::<f64>() / stations.iter().map(|s| base[*s]).sum::<f64>();
    // ODs that only cross ignored stations still load the used ones at their
    // fallback factor.
    let fixed_load: Vec<f64> = {
        let mut load = vec![0.0; stations.len()];
        for od in &uncovered {
            for (s, c) in incidence.stations_of(od) {
                if let Some(i) = station_pos.get(s) {
                    load[*i] += network_ratio * c;
                }
            }
        }
        load
    };

    let modeled = |phi: &[f64]| -> Vec<f64> {
        let mut m = fixed_load.clone();
        for ((_, links), p) in covered.iter().zip(phi) {
            for (i, c) in links {
                m[*i] += p * c;
            }
        }
        m
    };
    let residual = |m: &[f64]| -> f64 {
        obs.iter()
            .zip(m)
            .map(|(o, m)| (o - m).abs() / o)
            .fold(0.0, f64::max)
    };

    let mut phi = vec![1.0; covered.len()];
    let mut m = modeled(&phi);
    let mut r = residual(&m);
    let mut best = (r, phi.clone());
    let mut iterations = 0;
    while r >= options.epsilon && iterations < options.max_iter {
        for ((_, links), p) in covered.iter().zip(phi.iter_mut()) {
            let log_mean =
                links.iter().map(|(i, _)| (obs[*i] / m[*i]).ln()).sum::<f64>() / links.len() as f64;
            *p *= log_mean.exp();
        }
        iterations += 1;
        m = modeled(&phi);
        r = residual(&m);
        if r < best.0 {
            best = (r, phi.clone());
        }
    }
    let converged = best.0 < options.epsilon;
    if !converged {
        warn!(
            "demand factors for {} did not converge in {} iterations (residual {:.3e})",
            MONTH_LABELS[usize::from(month) - 1],
            iterations,
            best.0
        );
    }
    if !uncovered.is_empty() {
        warn!(
            "{} OD pairs have no observed station in month {month}; using network ratio {network_ratio:.4}",
            uncovered.len()
        );
    }

    let mut out: BTreeMap<OdPair, f64> = covered
        .iter()
        .zip(best.1)
        .map(|((od, _), p)| ((*od).clone(), p))
        .collect();
    for od in &uncovered {
        out.insert(od.clone(), network_ratio);
    }
    Ok(MonthlyFit {
        phi: out,
        network_ratio,
        report: ConvergenceReport {
            month,
            iterations,
            max_rel_residual: best.0,
            converged,
            stations_used: stations.len(),
            uncovered,
        },
    })
}

/// Per-OD monthly demand factors with a global per-month fallback.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemandFactors {
    per_od: BTreeMap<OdPair, [f64; 12]>,
    global: [f64; 12],
}

impl DemandFactors {
    pub fn uniform(global: [f64; 12]) -> Result<Self> {
        Self::new(BTreeMap::new(), global)
    }

    pub fn ones() -> Self {
        Self {
            per_od: BTreeMap::new(),
            global: [1.0; 12],
        }
    }

    pub fn new(per_od: BTreeMap<OdPair, [f64; 12]>, global: [f64; 12]) -> Result<Self> {
        let bad = |x: &f64| !(x.is_finite() && *x > 0.0);
        if global.iter().any(bad) || per_od.values().flatten().any(bad) {
            return Err(Error::Validation("demand factors must be finite and > 0".into()));
        }
        Ok(Self { per_od, global })
    }

    /// `phi` for `od` in 1-based `month`.
    pub fn phi(&self, od: &OdPair, month: u8) -> f64 {
        let m = usize::from(month) - 1;
        self.per_od.get(od).map_or(self.global[m], |p| p[m])
    }

    pub fn global(&self) -> &[f64; 12] {
        &self.global
    }

    pub fn per_od(&self) -> &BTreeMap<OdPair, [f64; 12]> {
        &self.per_od
    }

    /// Multiply every factor of month `m` (1-based) by `lambda[m-1]`.
    pub fn rescaled(&self, lambda: &[f64; 12]) -> Result<Self> {
        let per_od = self
            .per_od
            .iter()
            .map(|(od, p)| (od.clone(), std::array::from_fn(|m| p[m] * lambda[m])))
            .collect();
        Self::new(per_od, std::array::from_fn(|m| self.global[m] * lambda[m]))
    }

    /// Read `od_id,month,phi`; `*` as od_id sets the global fallback.
    /// Months absent for an OD take the global value.
    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let mut r = csv_reader(rdr);
        let idx = column_indices(r.headers()?, &["od_id", "month", "phi"])?;
        let mut global = [1.0; 12];
        let mut partial: BTreeMap<OdPair, [Option<f64>; 12]> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line());
            let m = usize::from(parse_month(&rec[idx[1]], row)?) - 1;
            let phi = parse_f64(&rec[idx[2]], "phi", row)?;
            if &rec[idx[0]] == "*" {
                global[m] = phi;
            } else {
                let od: OdPair = rec[idx[0]].parse().map_err(|e: Error| Error::MalformedRow {
                    row,
                    message: e.to_string(),
                })?;
                partial.entry(od).or_insert([None; 12])[m] = Some(phi);
            }
        }
        let per_od = partial
            .into_iter()
            .map(|(od, p)| (od, std::array::from_fn(|m| p[m].unwrap_or(global[m]))))
            .collect();
        Self::new(per_od, global)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["od_id", "month", "phi"])?;
        for (m, g) in self.global.iter().enumerate() {
            w.write_record(["*".to_owned(), (m + 1).to_string(), g.to_string()])?;
        }
        for (od, p) in &self.per_od {
            for (m, v) in p.iter().enumerate() {
                w.write_record([od.to_string(), (m + 1).to_string(), v.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Fit all twelve months concurrently. The global fallback of each month is
/// its network-wide observed/base ratio.
pub fn estimate_demand_factors(
    incidence: &OdStationIncidence,
    observations: &[StationObservation],
    options: &IpfOptions,
) -> Result<(DemandFactors, Vec<ConvergenceReport>)> {
    let fits: Vec<MonthlyFit> = (1..=12u8)
        .into_par_iter()
        .map(|m| estimate_monthly_factors(incidence, observations, m, options))
        .collect::<Result<_>>()?;
    let mut per_od: BTreeMap<OdPair, [f64; 12]> = BTreeMap::new();
    for (m, fit) in fits.iter().enumerate() {
        for (od, p) in &fit.phi {
            per_od.entry(od.clone()).or_insert([1.0; 12])[m] = *p;
        }
    }
    let global = std::array::from_fn(|m| fits[m].network_ratio);
    let reports = fits.into_iter().map(|f| f.report).collect();
    Ok((DemandFactors::new(per_od, global)?, reports))
}
