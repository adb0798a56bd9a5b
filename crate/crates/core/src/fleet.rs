//! Weighted vehicle-type catalog.
//!
//! Fleet counts (make/model/year with an expansion weight) are joined with
//! EPA CO2 rates in g/mile. The micro model's own baseline rate `E_b` is the
//! plain mean of the EPA rates of its calibration vehicles, and each type's
//! adjustment factor is `mu_t = epa_rate / E_b`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::TripId;
use crate::io::{column_indices, csv_reader, parse_f64};
use crate::seed::keyed_unit;
use crate::trajectory::TrajectoryStore;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleKey {
    pub make: String,
    pub model: String,
    pub model_year: i32,
}

impl VehicleKey {
    pub fn new(make: &str, model: &str, model_year: i32) -> Self {
        Self {
            make: make.to_owned(),
            model: model.to_owned(),
            model_year,
        }
    }
}

impl fmt::Display for VehicleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.make, self.model, self.model_year)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleType {
    pub make: String,
    pub model: String,
    pub model_year: i32,
    /// Vehicles represented by this type.
    pub weight: f64,
    /// CO2 g/mile.
    pub epa_rate: f64,
}

impl VehicleType {
    pub fn key(&self) -> VehicleKey {
        VehicleKey::new(&self.make, &self.model, self.model_year)
    }
}

/// One EPA test result for an engine/test variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpaRow {
    pub make: String,
    pub model: String,
    pub model_year: i32,
    pub variant: String,
    pub co2_g_per_mile: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetRow {
    pub make: String,
    pub model: String,
    pub model_year: i32,
    pub weight: f64,
}

fn parse_year(s: &str, row: u64) -> Result<i32> {
    s.parse().map_err(|_| Error::MalformedRow {
        row,
        message: format!("model_year `{s}` is not an integer"),
    })
}

/// Read `make,model,model_year,variant,co2_g_per_mile`.
pub fn read_epa_csv<R: Read>(rdr: R) -> Result<Vec<EpaRow>> {
    let mut r = csv_reader(rdr);
    let idx = column_indices(
        r.headers()?,
        &["make", "model", "model_year", "variant", "co2_g_per_mile"],
    )?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let rate = parse_f64(&rec[idx[4]], "co2_g_per_mile", row)?;
        if rate <= 0.0 {
            return Err(Error::MalformedRow {
                row,
                message: format!("CO2 rate must be positive, got {rate}"),
            });
        }
        rows.push(EpaRow {
            make: rec[idx[0]].to_owned(),
            model: rec[idx[1]].to_owned(),
            model_year: parse_year(&rec[idx[2]], row)?,
            variant: rec[idx[3]].to_owned(),
            co2_g_per_mile: rate,
        });
    }
    Ok(rows)
}

/// Read `make,model,model_year,weight`.
pub fn read_fleet_csv<R: Read>(rdr: R) -> Result<Vec<FleetRow>> {
    let mut r = csv_reader(rdr);
    let idx = column_indices(r.headers()?, &["make", "model", "model_year", "weight"])?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let weight = parse_f64(&rec[idx[3]], "weight", row)?;
        if weight <= 0.0 {
            return Err(Error::MalformedRow {
                row,
                message: format!("weight must be positive, got {weight}"),
            });
        }
        rows.push(FleetRow {
            make: rec[idx[0]].to_owned(),
            model: rec[idx[1]].to_owned(),
            model_year: parse_year(&rec[idx[2]], row)?,
            weight,
        });
    }
    Ok(rows)
}

pub fn read_epa_path(path: &Path) -> Result<Vec<EpaRow>> {
    read_epa_csv(crate::io::open(path)?)
}

pub fn read_fleet_path(path: &Path) -> Result<Vec<FleetRow>> {
    read_fleet_csv(crate::io::open(path)?)
}

/// Unweighted mean over test/engine variants per (make, model, model_year).
pub fn aggregate_epa_rates(rows: &[EpaRow]) -> BTreeMap<VehicleKey, f64> {
    let mut acc: BTreeMap<VehicleKey, (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc
            .entry(VehicleKey::new(&r.make, &r.model, r.model_year))
            .or_insert((0.0, 0));
        e.0 += r.co2_g_per_mile;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, sum / n as f64))
        .collect()
}

/// `E_b`: unweighted mean of the aggregated rates of the calibration vehicles.
pub fn baseline_rate(rates: &BTreeMap<VehicleKey, f64>, calibration: &[VehicleKey]) -> Result<f64> {
    if calibration.is_empty() {
        return Err(Error::Config("no calibration vehicles configured".into()));
    }
    let mut sum = 0.0;
    for key in calibration {
        sum += rates
            .get(key)
            .ok_or_else(|| Error::MissingCalibrationVehicle(key.to_string()))?;
    }
    Ok(sum / calibration.len() as f64)
}

pub fn vehicle_type_factor(vt: &VehicleType, baseline_rate: f64) -> f64 {
    vt.epa_rate / baseline_rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetConfig {
    pub analysis_year: i32,
    pub min_model_year: i32,
    pub max_model_year: i32,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            analysis_year: 2020,
            min_model_year: 2000,
            max_model_year: 2017,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FleetLoadReport {
    pub types: usize,
    pub dropped_unmatched: usize,
    pub dropped_out_of_range: usize,
    pub merged_duplicates: usize,
}

/// Immutable vehicle-type catalog with its micro-model baseline rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FleetRegistry {
    types: Vec<VehicleType>,
    analysis_year: i32,
    baseline_rate: f64,
    cumulative: Vec<f64>,
}

impl FleetRegistry {
    pub fn new(types: Vec<VehicleType>, analysis_year: i32, baseline_rate: f64) -> Result<Self> {
        if types.is_empty() {
            return Err(Error::EmptyJoin);
        }
        if !(baseline_rate.is_finite() && baseline_rate > 0.0) {
            return Err(Error::invalid(format!("baseline rate must be > 0, got {baseline_rate}")));
        }
        if let Some(t) = types
            .iter()
            .find(|t| !(t.weight > 0.0 && t.epa_rate > 0.0 && t.weight.is_finite()))
        {
            return Err(Error::invalid(format!(
                "vehicle type {} needs positive weight and rate",
                t.key()
            )));
        }
        let mut acc = 0.0;
        let cumulative = types
            .iter()
            .map(|t| {
                acc += t.weight;
                acc
            })
            .collect();
        Ok(Self {
            types,
            analysis_year,
            baseline_rate,
            cumulative,
        })
    }

    pub fn types(&self) -> &[VehicleType] {
        &self.types
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn get(&self, index: usize) -> &VehicleType {
        &self.types[index]
    }

    pub fn analysis_year(&self) -> i32 {
        self.analysis_year
    }

    pub fn baseline_rate(&self) -> f64 {
        self.baseline_rate
    }

    pub fn age(&self, index: usize) -> i32 {
        self.analysis_year - self.types[index].model_year
    }

    pub fn factor(&self, index: usize) -> f64 {
        vehicle_type_factor(&self.types[index], self.baseline_rate)
    }

    pub fn total_weight(&self) -> f64 {
        *self.cumulative.last().expect("non-empty registry")
    }

    /// Index of the type whose cumulative-weight interval contains `u * total`.
    pub fn sample(&self, u: f64) -> usize {
        let target = u * self.total_weight();
        self.cumulative
            .partition_point(|c| *c <= target)
            .min(self.types.len() - 1)
    }
}

/// Inner join of fleet rows with aggregated EPA rates on (make, model, model_year).
/// Duplicate fleet keys merge by summing weights.
pub fn load_fleet(
    fleet: &[FleetRow],
    rates: &BTreeMap<VehicleKey, f64>,
    baseline_rate: f64,
    config: &FleetConfig,
) -> Result<(FleetRegistry, FleetLoadReport)> {
    let mut report = FleetLoadReport::default();
    let mut merged: BTreeMap<VehicleKey, f64> = BTreeMap::new();
    for row in fleet {
        if row.model_year < config.min_model_year || row.model_year > config.max_model_year {
            report.dropped_out_of_range += 1;
            continue;
        }
        let key = VehicleKey::new(&row.make, &row.model, row.model_year);
        if !rates.contains_key(&key) {
            report.dropped_unmatched += 1;
            continue;
        }
        let w = merged.entry(key).or_insert(0.0);
        if *w > 0.0 {
            report.merged_duplicates += 1;
        }
        *w += row.weight;
    }
    if merged.is_empty() {
        return Err(Error::EmptyJoin);
    }
    let types: Vec<VehicleType> = merged
        .into_iter()
        .map(|(k, weight)| VehicleType {
            epa_rate: rates[&k],
            make: k.make,
            model: k.model,
            model_year: k.model_year,
            weight,
        })
        .collect();
    report.types = types.len();
    info!(
        "fleet join: {} types, {} unmatched rows dropped, {} outside model years",
        report.types, report.dropped_unmatched, report.dropped_out_of_range
    );
    Ok((FleetRegistry::new(types, config.analysis_year, baseline_rate)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FleetStats {
    pub mean_rate: f64,
    pub std_rate: f64,
    pub mean_age: f64,
    pub std_age: f64,
}

/// Weighted mean and population standard deviation of `values` under `weights`.
pub fn weighted_moments(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let w: f64 = weights.iter().sum();
    let mean = values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / w;
    let var = values
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / w;
    (mean, var.sqrt())
}

pub fn fleet_weighted_stats(registry: &FleetRegistry) -> FleetStats {
    let weights: Vec<f64> = registry.types().iter().map(|t| t.weight).collect();
    let rates: Vec<f64> = registry.types().iter().map(|t| t.epa_rate).collect();
    let ages: Vec<f64> = (0..registry.len()).map(|i| f64::from(registry.age(i))).collect();
    let (mean_rate, std_rate) = weighted_moments(&rates, &weights);
    let (mean_age, std_age) = weighted_moments(&ages, &weights);
    FleetStats {
        mean_rate,
        std_rate,
        mean_age,
        std_age,
    }
}

/// Vehicle type per trip, drawn proportionally to fleet weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeAssignment {
    by_trip: BTreeMap<TripId, usize>,
    seed: u64,
}

impl TypeAssignment {
    pub fn from_map(by_trip: BTreeMap<TripId, usize>, seed: u64) -> Self {
        Self { by_trip, seed }
    }

    pub fn get(&self, trip: &TripId) -> Option<usize> {
        self.by_trip.get(trip).copied()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.by_trip.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_trip.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&TripId, usize)> {
        self.by_trip.iter().map(|(t, i)| (t, *i))
    }
}

/// Assign a vehicle type to every trip. Each draw is a pure function of
/// `(seed, trip_id)`.
pub fn assign_vehicle_types(store: &TrajectoryStore, registry: &FleetRegistry, seed: u64) -> TypeAssignment {
    let by_trip = store
        .trip_ids()
        .map(|id| {
            let u = keyed_unit(seed, "vehicle-type", id.as_str());
            (id.clone(), registry.sample(u))
        })
        .collect();
    TypeAssignment { by_trip, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::OdPair;
    use crate::trajectory::Trajectory;
    use proptest::prelude::*;

    fn vt(make: &str, year: i32, weight: f64, rate: f64) -> VehicleType {
        VehicleType {
            make: make.into(),
            model: "M".into(),
            model_year: year,
            weight,
            epa_rate: rate,
        }
    }

    fn epa(make: &str, year: i32, variant: &str, rate: f64) -> EpaRow {
        EpaRow {
            make: make.into(),
            model: "M".into(),
            model_year: year,
            variant: variant.into(),
            co2_g_per_mile: rate,
        }
    }

    fn store(n: usize) -> TrajectoryStore {
        TrajectoryStore::from_trajectories((0..n).map(|i| {
            Trajectory::from_speeds(
                TripId(format!("t{i:06}")),
                OdPair::new("A", "B"),
                1.0,
                vec![1.0],
                10.0,
            )
            .unwrap()
        }))
        .unwrap()
    }

    #[test]
    fn epa_aggregation() {
        let rates = aggregate_epa_rates(&[
            epa("X", 2010, "auto", 300.0),
            epa("X", 2010, "manual", 320.0),
            epa("Y", 2010, "auto", 250.0),
        ]);
        assert_eq!(rates[&VehicleKey::new("X", "M", 2010)], 310.0);
        assert_eq!(rates[&VehicleKey::new("Y", "M", 2010)], 250.0);

        let five = [212.0, 237.5, 251.0, 268.25, 301.0];
        let rows: Vec<EpaRow> = five.iter().map(|r| epa("Z", 2012, "v", *r)).collect();
        // 212 + 237.5 + 251 + 268.25 + 301 = 1269.75
        assert_eq!(aggregate_epa_rates(&rows)[&VehicleKey::new("Z", "M", 2012)], 1269.75 / 5.0);
    }

    #[test]
    fn join_drops_and_merges() {
        let rates = aggregate_epa_rates(&[epa("X", 2010, "a", 300.0), epa("Y", 2011, "a", 200.0)]);
        let fleet = vec![
            FleetRow { make: "X".into(), model: "M".into(), model_year: 2010, weight: 2.0 },
            FleetRow { make: "Y".into(), model: "M".into(), model_year: 2011, weight: 1.0 },
            FleetRow { make: "Q".into(), model: "M".into(), model_year: 2011, weight: 1.0 },
        ];
        let (reg, rep) = load_fleet(&fleet, &rates, 200.0, &FleetConfig::default()).unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(rep.dropped_unmatched, 1);

        let mut dup = fleet.clone();
        dup.push(FleetRow { make: "X".into(), model: "M".into(), model_year: 2010, weight: 3.0 });
        let (reg, rep) = load_fleet(&dup, &rates, 200.0, &FleetConfig::default()).unwrap();
        assert_eq!(reg.types()[0].weight, 5.0);
        assert_eq!(rep.merged_duplicates, 1);

        let none = vec![FleetRow { make: "Q".into(), model: "M".into(), model_year: 2011, weight: 1.0 }];
        assert!(matches!(
            load_fleet(&none, &rates, 200.0, &FleetConfig::default()),
            Err(Error::EmptyJoin)
        ));
    }

    #[test]
    fn csv_readers() {
        let f = read_fleet_csv("make,model,model_year,weight\nX,M,2010,2.5\n".as_bytes()).unwrap();
        assert_eq!(f[0].weight, 2.5);
        assert!(read_fleet_csv("make,model,model_year,weight\nX,M,2010,0\n".as_bytes()).is_err());
        let e = read_epa_csv("make,model,model_year,variant,co2_g_per_mile\nX,M,2010,a,300\n".as_bytes()).unwrap();
        assert_eq!(e[0].co2_g_per_mile, 300.0);
        assert!(matches!(
            read_epa_csv("make,model,model_year,variant,co2_g_per_mile\nX,M,twenty,a,300\n".as_bytes()),
            Err(Error::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn stats_examples() {
        let reg = FleetRegistry::new(vec![vt("A", 2010, 5.0, 250.0)], 2020, 200.0).unwrap();
        let s = fleet_weighted_stats(&reg);
        assert_eq!((s.mean_rate, s.std_rate, s.mean_age, s.std_age), (250.0, 0.0, 10.0, 0.0));

        let reg = FleetRegistry::new(
            vec![vt("A", 2010, 1.0, 200.0), vt("B", 2014, 1.0, 300.0)],
            2020,
            200.0,
        )
        .unwrap();
        let s = fleet_weighted_stats(&reg);
        assert_eq!((s.mean_rate, s.std_rate), (250.0, 50.0));
        assert_eq!((s.mean_age, s.std_age), (8.0, 2.0));
    }

    #[test]
    fn baseline_examples() {
        let rates = aggregate_epa_rates(&[
            epa("Toyota", 2005, "a", 190.0),
            epa("Celica", 2005, "a", 194.0),
            epa("Golf", 2005, "a", 197.0),
        ]);
        let keys: Vec<VehicleKey> = rates.keys().cloned().collect();
        let eb = baseline_rate(&rates, &keys).unwrap();
        assert!((eb - 193.666_666_666_666_7).abs() < 1e-9);
        assert_eq!(baseline_rate(&rates, &keys[..1]).unwrap(), rates[&keys[0]]);
        assert!(matches!(
            baseline_rate(&rates, &[VehicleKey::new("VW", "Golf", 1999)]),
            Err(Error::MissingCalibrationVehicle(_))
        ));
        let same = aggregate_epa_rates(&[epa("A", 2005, "a", 201.0), epa("B", 2005, "a", 201.0)]);
        let keys: Vec<VehicleKey> = same.keys().cloned().collect();
        assert_eq!(baseline_rate(&same, &keys).unwrap(), 201.0);
    }

    #[test]
    fn factor_examples() {
        assert_eq!(vehicle_type_factor(&vt("A", 2010, 1.0, 193.6), 193.6), 1.0);
        assert_eq!(vehicle_type_factor(&vt("A", 2010, 1.0, 387.2), 193.6), 2.0);
    }

    #[test]
    fn assignment_single_type_and_determinism() {
        let s = store(100);
        let one = FleetRegistry::new(vec![vt("A", 2010, 3.0, 250.0)], 2020, 200.0).unwrap();
        let a = assign_vehicle_types(&s, &one, 9);
        assert!(a.iter().all(|(_, i)| i == 0));
        let two = FleetRegistry::new(
            vec![vt("A", 2010, 3.0, 250.0), vt("B", 2012, 1.0, 200.0)],
            2020,
            200.0,
        )
        .unwrap();
        assert_eq!(assign_vehicle_types(&s, &two, 4), assign_vehicle_types(&s, &two, 4));
        assert_ne!(assign_vehicle_types(&s, &two, 4), assign_vehicle_types(&s, &two, 5));
    }

    #[test]
    fn assignment_three_to_one() {
        let s = store(10_000);
        let reg = FleetRegistry::new(
            vec![vt("A", 2010, 3.0, 250.0), vt("B", 2012, 1.0, 200.0)],
            2020,
            200.0,
        )
        .unwrap();
        let a = assign_vehicle_types(&s, &reg, 11);
        let first = a.iter().filter(|(_, i)| *i == 0).count() as f64;
        // binomial 3-sigma: sqrt(1e4 * 0.75 * 0.25) = 43.3
        assert!((first - 7500.0).abs() <= 3.0 * 43.3, "{first}");
    }

    #[test]
    fn assignment_chi_square() {
        let s = store(100_000);
        let weights = [5.0, 1.0, 2.5, 0.5, 1.0];
        let types: Vec<VehicleType> =
            weights.iter().enumerate().map(|(i, w)| vt(&format!("T{i}"), 2010, *w, 200.0)).collect();
        let reg = FleetRegistry::new(types, 2020, 200.0).unwrap();
        let a = assign_vehicle_types(&s, &reg, 2024);
        let mut counts = [0.0; 5];
        for (_, i) in a.iter() {
            counts[i] += 1.0;
        }
        let total: f64 = weights.iter().sum();
        let chi2: f64 = weights
            .iter()
            .zip(counts)
            .map(|(w, c)| {
                let e = 1e5 * w / total;
                (c - e).powi(2) / e
            })
            .sum();
        // chi-square, 4 degrees of freedom, 99.9th percentile
        assert!(chi2 < 18.47, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn factors_scale_invariant(
            rates in prop::collection::vec(50.0f64..600.0, 1..20),
            eb in 100.0f64..300.0,
            lambda in 0.1f64..10.0,
        ) {
            for r in &rates {
                let a = vehicle_type_factor(&vt("A", 2010, 1.0, *r), eb);
                let b = vehicle_type_factor(&vt("A", 2010, 1.0, r * lambda), eb * lambda);
                prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
            }
        }

        #[test]
        fn weighted_mean_of_mu_times_eb_is_mean_rate(
            entries in prop::collection::vec((0.1f64..100.0, 50.0f64..600.0), 1..30),
            eb in 100.0f64..300.0,
        ) {
            let types: Vec<VehicleType> = entries
                .iter()
                .enumerate()
                .map(|(i, (w, r))| vt(&format!("T{i}"), 2010, *w, *r))
                .collect();
            let reg = FleetRegistry::new(types, 2020, eb).unwrap();
            let w: f64 = reg.types().iter().map(|t| t.weight).sum();
            let m: f64 = (0..reg.len()).map(|i| reg.types()[i].weight * reg.factor(i) * eb).sum::<f64>() / w;
            let s = fleet_weighted_stats(&reg);
            prop_assert!((m - s.mean_rate).abs() <= 1e-9 * s.mean_rate);
        }
    }
}
