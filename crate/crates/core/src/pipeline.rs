//! The eight-variant monthly CO2 estimator matrix.
//!
//! Per-trip quantities (distance, base micro grams, assigned type and its
//! factor) are computed once into a [`TripLedger`]. Every variant is a pure
//! function of that ledger, the month profile and the demand factors:
//!
//! - macro: `gamma * D` per trip, or the fleet mean rate in place of `gamma`
//!   when type-adjusted;
//! - micro: `k * grams`, times `mu_t` when type-adjusted;
//!
//! and month `m` multiplies the daily value by `N_m * T_m * phi_m^od`
//! (`T_m` only when temperature-adjusted).

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{DemandFactors, MonthProfile, MONTH_LABELS};
use crate::error::{Error, Result};
use crate::fleet::{FleetRegistry, TypeAssignment};
use crate::ids::{OdPair, TripId};
use crate::micro::{trajectory_emission_with, RegimeEntry};
use crate::trajectory::{trip_distance, TrajectoryStore};
use crate::units::{grams_to_megatonnes, MILLION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EstimatorVariant {
    pub basis: Basis,
    pub temp_adjusted: bool,
    pub type_adjusted: bool,
}

impl EstimatorVariant {
    pub const fn new(basis: Basis, temp_adjusted: bool, type_adjusted: bool) -> Self {
        Self {
            basis,
            temp_adjusted,
            type_adjusted,
        }
    }

    /// Report column order: per basis, base, temperature, type, type+temperature.
    pub const ALL: [EstimatorVariant; 8] = [
        Self::new(Basis::Macro, false, false),
        Self::new(Basis::Macro, true, false),
        Self::new(Basis::Macro, false, true),
        Self::new(Basis::Macro, true, true),
        Self::new(Basis::Micro, false, false),
        Self::new(Basis::Micro, true, false),
        Self::new(Basis::Micro, false, true),
        Self::new(Basis::Micro, true, true),
    ];

    pub const ADJUSTED_MACRO: EstimatorVariant = Self::new(Basis::Macro, true, true);
    pub const ADJUSTED_MICRO: EstimatorVariant = Self::new(Basis::Micro, true, true);

    pub fn index(self) -> usize {
        usize::from(self.basis == Basis::Micro) * 4
            + usize::from(self.type_adjusted) * 2
            + usize::from(self.temp_adjusted)
    }

    pub fn name(self) -> &'static str {
        [
            "macro_base",
            "macro_temp",
            "macro_type",
            "macro_type_temp",
            "micro_base",
            "micro_temp",
            "micro_type",
            "micro_type_temp",
        ][self.index()]
    }
}

impl fmt::Display for EstimatorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "adjusted_macro" | "adjusted_epa" => Ok(Self::ADJUSTED_MACRO),
            "adjusted_micro" => Ok(Self::ADJUSTED_MICRO),
            _ => Self::ALL
                .into_iter()
                .find(|v| v.name() == key)
                .ok_or_else(|| Error::invalid(format!("unknown estimator variant `{s}`"))),
        }
    }
}

impl Serialize for EstimatorVariant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EstimatorVariant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-trip inputs shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TripRecord {
    pub trip_id: TripId,
    pub od: OdPair,
    pub distance_miles: f64,
    /// Unscaled micro-model grams for one traversal.
    pub micro_grams: f64,
    pub type_index: usize,
    pub epa_rate: f64,
    pub mu: f64,
    pub age: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripLedger {
    records: Vec<TripRecord>,
    index: BTreeMap<TripId, usize>,
    fleet_mean_rate: f64,
    baseline_rate: f64,
    /// Distance-weighted mean assigned rate per OD.
    od_rate: BTreeMap<OdPair, f64>,
}

impl TripLedger {
    pub fn build(
        store: &TrajectoryStore,
        assignment: &TypeAssignment,
        registry: &FleetRegistry,
        coefficients: &RegimeEntry,
    ) -> Result<Self> {
        let trips: Vec<_> = store.trips().collect();
        let records = trips
            .par_iter()
            .map(|traj| {
                let type_index = assignment
                    .get(traj.trip_id())
                    .ok_or_else(|| Error::MissingAssignment(traj.trip_id().to_string()))?;
                Ok(TripRecord {
                    trip_id: traj.trip_id().clone(),
                    od: traj.od().clone(),
                    distance_miles: trip_distance(traj),
                    micro_grams: trajectory_emission_with(traj, coefficients),
                    type_index,
                    epa_rate: registry.get(type_index).epa_rate,
                    mu: registry.factor(type_index),
                    age: registry.age(type_index),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = crate::fleet::fleet_weighted_stats(registry);
        Ok(Self::from_records(records, stats.mean_rate, registry.baseline_rate()))
    }

    /// `records` must be in trip_id order with unique ids.
    pub fn from_records(records: Vec<TripRecord>, fleet_mean_rate: f64, baseline_rate: f64) -> Self {
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.trip_id.clone(), i))
            .collect();
        let mut acc: BTreeMap<OdPair, (f64, f64)> = BTreeMap::new();
        for r in &records {
            let e = acc.entry(r.od.clone()).or_insert((0.0, 0.0));
            e.0 += r.distance_miles * r.epa_rate;
            e.1 += r.distance_miles;
        }
        let od_rate = acc
            .into_iter()
            .map(|(od, (rd, d))| (od, if d > 0.0 { rd / d } else { fleet_mean_rate }))
            .collect();
        Self {
            records,
            index,
            fleet_mean_rate,
            baseline_rate,
            od_rate,
        }
    }

    pub fn records(&self) -> &[TripRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, trip: &TripId) -> Option<usize> {
        self.index.get(trip).copied()
    }

    pub fn fleet_mean_rate(&self) -> f64 {
        self.fleet_mean_rate
    }

    pub fn baseline_rate(&self) -> f64 {
        self.baseline_rate
    }

    /// Mean `mu` weighted by base micro grams: the realized micro type ratio.
    pub fn realized_mu(&self) -> f64 {
        let g: f64 = self.records.iter().map(|r| r.micro_grams).sum();
        self.records.iter().map(|r| r.micro_grams * r.mu).sum::<f64>() / g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionParams {
    /// Macro benchmark rate, g/mile.
    pub gamma: f64,
    /// Multiplier on micro-model grams.
    pub micro_scale: f64,
    /// Real trips represented by each stored trajectory.
    pub trip_expansion: f64,
}

impl Default for EmissionParams {
    fn default() -> Self {
        Self {
            gamma: 368.0,
            micro_scale: 1.0,
            trip_expansion: 1.0,
        }
    }
}

impl EmissionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        for (name, v) in [("micro_scale", self.micro_scale), ("trip_expansion", self.trip_expansion)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Daily grams per OD and their network total.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DailyEmission {
    pub per_od: BTreeMap<OdPair, f64>,
    pub total: f64,
}

impl DailyEmission {
    fn from_per_od(per_od: BTreeMap<OdPair, f64>) -> Self {
        let total = per_od.values().sum();
        Self { per_od, total }
    }
}

/// Monthly grams per OD and per-month network totals.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonthlyEmission {
    pub per_od: BTreeMap<OdPair, [f64; 12]>,
    pub total: [f64; 12],
}

/// `e^i = gamma * sum of D_n^i` over one day's trajectories, grams.
pub fn macro_daily(store: &TrajectoryStore, gamma: f64) -> DailyEmission {
    DailyEmission::from_per_od(
        store
            .groups()
            .keys()
            .map(|od| {
                let d: f64 = store.od_distances(od).iter().sum();
                (od.clone(), gamma * d)
            })
            .collect(),
    )
}

/// `N_m * T_m * phi_m^od` with `T_m` applied only when `temp_adjusted`.
pub fn month_multiplier(
    profile: &[MonthProfile; 12],
    factors: &DemandFactors,
    od: &OdPair,
    month: usize,
    temp_adjusted: bool,
) -> f64 {
    let p = &profile[month];
    let t = if temp_adjusted { p.temp_factor } else { 1.0 };
    f64::from(p.n_days) * t * factors.phi(od, p.month)
}

/// Spread daily per-OD grams over the months.
pub fn scale_monthly(
    daily: &DailyEmission,
    profile: &[MonthProfile; 12],
    factors: &DemandFactors,
    temp_adjusted: bool,
) -> MonthlyEmission {
    let mut total = [0.0; 12];
    let per_od = daily
        .per_od
        .iter()
        .map(|(od, e)| {
            let row: [f64; 12] =
                std::array::from_fn(|m| e * month_multiplier(profile, factors, od, m, temp_adjusted));
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
            }
            (od.clone(), row)
        })
        .collect();
    MonthlyEmission { per_od, total }
}

/// Monthly macro emission; type adjustment swaps `gamma` for `fleet_mean_rate`.
pub fn macro_monthly(
    daily: &DailyEmission,
    profile: &[MonthProfile; 12],
    factors: &DemandFactors,
    temp_adjusted: bool,
    type_adjusted: Option<(f64, f64)>,
) -> MonthlyEmission {
    match type_adjusted {
        Some((gamma, mean_rate)) if gamma > 0.0 => {
            let r = mean_rate / gamma;
            let scaled = DailyEmission::from_per_od(daily.per_od.iter().map(|(od, e)| (od.clone(), e * r)).collect());
            scale_monthly(&scaled, profile, factors, temp_adjusted)
        }
        _ => scale_monthly(daily, profile, factors, temp_adjusted),
    }
}

/// Daily micro grams per OD, summed in trip_id order.
pub fn micro_daily(ledger: &TripLedger, micro_scale: f64, type_adjusted: bool) -> DailyEmission {
    let mut per_od: BTreeMap<OdPair, f64> = BTreeMap::new();
    for r in ledger.records() {
        let mu = if type_adjusted { r.mu } else { 1.0 };
        *per_od.entry(r.od.clone()).or_insert(0.0) += micro_scale * r.micro_grams * mu;
    }
    DailyEmission::from_per_od(per_od)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub vmt_million_miles: f64,
    /// Mt, in [`EstimatorVariant::ALL`] order.
    pub co2_mt: [f64; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportMetadata {
    pub seed: u64,
    pub config_digest: Option<String>,
    pub n_trips: usize,
    pub gamma: f64,
    pub fleet_mean_rate: f64,
    pub baseline_rate: f64,
    pub micro_scale: f64,
    pub trip_expansion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmissionReport {
    pub variants: Vec<EstimatorVariant>,
    pub months: Vec<ReportRow>,
    pub annual: ReportRow,
    pub metadata: ReportMetadata,
}

impl EmissionReport {
    pub fn value(&self, variant: EstimatorVariant, month: u8) -> f64 {
        self.months[usize::from(month) - 1].co2_mt[variant.index()]
    }

    pub fn annual_value(&self, variant: EstimatorVariant) -> f64 {
        self.annual.co2_mt[variant.index()]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["month".to_owned(), "vmt_million_miles".to_owned()];
        header.extend(EstimatorVariant::ALL.iter().map(|v| v.name().to_owned()));
        w.write_record(&header)?;
        for row in self.months.iter().chain(std::iter::once(&self.annual)) {
            let mut rec = vec![row.label.clone(), row.vmt_million_miles.to_string()];
            rec.extend(row.co2_mt.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Two-decimal text table for terminals.
    pub fn render(&self) -> String {
        let mut s = format!("{:<7}{:>10}", "month", "vmt");
        for v in EstimatorVariant::ALL {
            s.push_str(&format!("{:>17}", v.name()));
        }
        s.push('\n');
        for row in self.months.iter().chain(std::iter::once(&self.annual)) {
            s.push_str(&format!("{:<7}{:>10.0}", row.label, row.vmt_million_miles));
            for v in row.co2_mt {
                s.push_str(&format!("{v:>17.2}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Ledger plus everything needed to turn it into monthly totals.
#[derive(Debug, Clone)]
pub struct Estimator {
    ledger: TripLedger,
    profile: [MonthProfile; 12],
    factors: DemandFactors,
    params: EmissionParams,
}

impl Estimator {
    pub fn new(
        ledger: TripLedger,
        profile: [MonthProfile; 12],
        factors: DemandFactors,
        params: EmissionParams,
    ) -> Result<Self> {
        params.validate()?;
        if ledger.is_empty() {
            return Err(Error::Validation("no trips to estimate".into()));
        }
        Ok(Self {
            ledger,
            profile,
            factors,
            params,
        })
    }

    pub fn ledger(&self) -> &TripLedger {
        &self.ledger
    }

    pub fn params(&self) -> &EmissionParams {
        &self.params
    }

    pub fn factors(&self) -> &DemandFactors {
        &self.factors
    }

    pub fn profile(&self) -> &[MonthProfile; 12] {
        &self.profile
    }

    /// Expanded daily grams of record `i` under `variant`.
    pub fn trip_daily(&self, i: usize, variant: EstimatorVariant) -> f64 {
        let r = &self.ledger.records[i];
        let g = match (variant.basis, variant.type_adjusted) {
            (Basis::Macro, false) => self.params.gamma * r.distance_miles,
            // Split the OD's mean-rate total across its trips by assigned rate.
            (Basis::Macro, true) => {
                self.ledger.fleet_mean_rate * r.distance_miles * r.epa_rate / self.ledger.od_rate[&r.od]
            }
            (Basis::Micro, false) => self.params.micro_scale * r.micro_grams,
            (Basis::Micro, true) => self.params.micro_scale * r.micro_grams * r.mu,
        };
        g * self.params.trip_expansion
    }

    fn annual_multiplier(&self, od: &OdPair, temp_adjusted: bool) -> f64 {
        (0..12)
            .map(|m| month_multiplier(&self.profile, &self.factors, od, m, temp_adjusted))
            .sum()
    }

    /// Annual grams of every record under `variant`, in trip_id order.
    pub fn trip_annual(&self, variant: EstimatorVariant) -> Vec<f64> {
        let mut cache: BTreeMap<&OdPair, f64> = BTreeMap::new();
        self.ledger
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let a = *cache
                    .entry(&r.od)
                    .or_insert_with(|| self.annual_multiplier(&r.od, variant.temp_adjusted));
                self.trip_daily(i, variant) * a
            })
            .collect()
    }

    fn daily_per_od(&self, f: impl Fn(usize, &TripRecord) -> f64) -> DailyEmission {
        let mut per_od: BTreeMap<OdPair, f64> = BTreeMap::new();
        for (i, r) in self.ledger.records.iter().enumerate() {
            *per_od.entry(r.od.clone()).or_insert(0.0) += f(i, r);
        }
        DailyEmission::from_per_od(per_od)
    }

    pub fn monthly(&self, variant: EstimatorVariant) -> MonthlyEmission {
        let daily = self.daily_per_od(|i, _| self.trip_daily(i, variant));
        scale_monthly(&daily, &self.profile, &self.factors, variant.temp_adjusted)
    }

    /// Expanded monthly VMT, million miles.
    pub fn monthly_vmt(&self) -> [f64; 12] {
        let daily = self.daily_per_od(|_, r| r.distance_miles * self.params.trip_expansion);
        scale_monthly(&daily, &self.profile, &self.factors, false)
            .total
            .map(|v| v / MILLION)
    }

    /// Rescale each month's demand factors so the expanded VMT matches `target`
    /// (million miles, Jan..Dec).
    pub fn anchor_to_vmt(&mut self, target: &[f64; 12]) -> Result<()> {
        let current = self.monthly_vmt();
        if current.iter().any(|v| *v <= 0.0) {
            return Err(Error::Validation("cannot anchor: a month has zero modeled VMT".into()));
        }
        let lambda = std::array::from_fn(|m| target[m] / current[m]);
        self.factors = self.factors.rescaled(&lambda)?;
        Ok(())
    }

    /// Choose `micro_scale` so the annual unadjusted micro total equals `target_mt`.
    pub fn calibrate_micro_scale(&mut self, target_mt: f64) -> Result<f64> {
        let current = grams_to_megatonnes(
            self.monthly(EstimatorVariant::new(Basis::Micro, false, false)).total.iter().sum(),
        );
        if !(current > 0.0 && target_mt > 0.0) {
            return Err(Error::Validation(format!(
                "cannot calibrate micro scale: current {current} Mt, target {target_mt} Mt"
            )));
        }
        self.params.micro_scale *= target_mt / current;
        Ok(self.params.micro_scale)
    }

    pub fn report(&self, seed: u64, config_digest: Option<String>) -> EmissionReport {
        let columns: Vec<[f64; 12]> = EstimatorVariant::ALL
            .par_iter()
            .map(|v| self.monthly(*v).total.map(grams_to_megatonnes))
            .collect();
        let vmt = self.monthly_vmt();
        let months: Vec<ReportRow> = (0..12)
            .map(|m| ReportRow {
                label: MONTH_LABELS[m].to_owned(),
                vmt_million_miles: vmt[m],
                co2_mt: std::array::from_fn(|v| columns[v][m]),
            })
            .collect();
        let annual = ReportRow {
            label: "Annual".to_owned(),
            vmt_million_miles: months.iter().map(|r| r.vmt_million_miles).sum(),
            co2_mt: std::array::from_fn(|v| months.iter().map(|r| r.co2_mt[v]).sum()),
        };
        EmissionReport {
            variants: EstimatorVariant::ALL.to_vec(),
            months,
            annual,
            metadata: ReportMetadata {
                seed,
                config_digest,
                n_trips: self.ledger.len(),
                gamma: self.params.gamma,
                fleet_mean_rate: self.ledger.fleet_mean_rate,
                baseline_rate: self.ledger.baseline_rate,
                micro_scale: self.params.micro_scale,
                trip_expansion: self.params.trip_expansion,
            },
        }
    }
}
