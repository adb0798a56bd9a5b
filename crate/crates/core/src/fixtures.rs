//! Generators for the data files shipped under `data/`.
//!
//! Everything here is deterministic. `examples/gen_fixtures.rs` writes the
//! files and a test checks that the shipped copies match the generators.
//!
//! The statewide fixture stands in for data that is not redistributable:
//! a 570-type fleet whose weighted CO2 rate has mean 246 and standard
//! deviation 55 g/mile with ages 3 to 20 years (mean about 10.2), an
//! intercity OD table between twenty cities, 66 counting stations on the
//! corridors, and the published monthly VMT used as an anchor.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::calendar::MONTH_LABELS;
use crate::error::Result;
use crate::fleet::{EpaRow, FleetRow};
use crate::ids::OdPair;
use crate::seed::keyed_rng;
use crate::synth::{generate_fleet_of_trips, OdDemand, ProfileSpec, TripTemplate};

const FIXTURE_SEED: u64 = 0x4d49_2030;

/// Monthly intercity VMT, million miles, Jan..Dec.
pub const STATEWIDE_MONTHLY_VMT: [f64; 12] = [
    2407.0, 2317.0, 2727.0, 2721.0, 3019.0, 3115.0, 3357.0, 3348.0, 3047.0, 3092.0, 2783.0, 2557.0,
];

/// `(share, tech, stations, chargers, 10-year cost M$, station MWh/day)`.
pub const TECH_SCENARIOS: [(f64, &str, u32, u32, f64, f64); 9] = [
    (0.03, "Low-Tech", 34, 250, 14.30, 69.73),
    (0.03, "Mixed-Tech", 29, 90, 12.54, 70.48),
    (0.03, "High-Tech", 18, 47, 7.10, 30.80),
    (0.06, "Low-Tech", 38, 478, 23.07, 140.04),
    (0.06, "Mixed-Tech", 33, 160, 18.78, 141.36),
    (0.06, "High-Tech", 21, 101, 11.82, 61.51),
    (0.10, "Low-Tech", 41, 748, 33.10, 235.22),
    (0.10, "Mixed-Tech", 34, 269, 27.50, 237.99),
    (0.10, "High-Tech", 29, 152, 17.48, 102.58),
];

/// Calibration vehicles of the micro model and their EPA rates, g/mile.
pub const CALIBRATION_VEHICLES: [(&str, &str, i32, f64); 3] = [
    ("Toyota", "Corolla", 2005, 190.0),
    ("Toyota", "Celica", 2005, 194.0),
    ("Volkswagen", "Golf", 2005, 197.0),
];

pub const FLEET_MEAN_RATE: f64 = 246.0;
pub const FLEET_STD_RATE: f64 = 55.0;
const TARGET_MEAN_AGE: f64 = 10.2;
const TARGET_STD_AGE: f64 = 4.2;
const ANALYSIS_YEAR: i32 = 2020;
const FIRST_MODEL_YEAR: i32 = 2000;
const LAST_MODEL_YEAR: i32 = 2017;
const AGE_SLOPE: f64 = 6.3;
const FLEET_SIZE: f64 = 4.5e6;

/// Coefficients of the instantaneous emission polynomial, g/s.
pub const COEFFICIENTS_CSV: &str = "\
category,pollutant,regime,threshold,c1,c2,c3,c4,c5,c6
petrol_car,CO2,all,,0.553,0.161,-0.00289,0.266,0.511,0.183
diesel_car,CO2,all,,0.324,0.0859,0.00496,-0.0586,0.448,0.230
lpg_car,CO2,all,,0.600,0.219,-0.00774,0.357,0.514,0.170
heavy_duty,CO2,all,,1.52,1.88,-0.0695,4.71,5.88,2.09
bus,CO2,all,,0.904,1.13,-0.0427,2.81,3.45,1.22
petrol_car,NOx,above,-0.5,6.19e-4,8.00e-5,-4.03e-6,-4.13e-4,3.80e-4,1.77e-4
petrol_car,NOx,below,-0.5,2.17e-4,0,0,0,0,0
";

/// `(make, model, rate offset g/mile, relative popularity)`.
const MODELS: [(&str, &str, f64, f64); 32] = [
    ("Toyota", "Corolla", -38.0, 1.3),
    ("Toyota", "Celica", -22.0, 0.25),
    ("Volkswagen", "Golf", -30.0, 0.45),
    ("Toyota", "Camry", -12.0, 1.4),
    ("Honda", "Civic", -40.0, 1.2),
    ("Honda", "Accord", -15.0, 1.1),
    ("Ford", "Focus", -35.0, 1.1),
    ("Ford", "Fusion", -10.0, 1.2),
    ("Ford", "F-150", 95.0, 2.0),
    ("Ford", "Escape", 10.0, 1.4),
    ("Ford", "Explorer", 55.0, 1.2),
    ("Ford", "Edge", 35.0, 0.8),
    ("Chevrolet", "Malibu", -8.0, 1.3),
    ("Chevrolet", "Impala", 5.0, 1.0),
    ("Chevrolet", "Silverado", 100.0, 1.8),
    ("Chevrolet", "Equinox", 15.0, 1.4),
    ("Chevrolet", "Cruze", -30.0, 1.0),
    ("Dodge", "Grand Caravan", 45.0, 1.1),
    ("Ram", "1500", 105.0, 1.2),
    ("Jeep", "Grand Cherokee", 70.0, 1.1),
    ("Jeep", "Wrangler", 60.0, 0.7),
    ("Nissan", "Altima", -18.0, 0.9),
    ("Nissan", "Rogue", 5.0, 0.8),
    ("Nissan", "Sentra", -36.0, 0.6),
    ("Hyundai", "Elantra", -34.0, 0.7),
    ("Hyundai", "Sonata", -14.0, 0.6),
    ("Kia", "Optima", -14.0, 0.5),
    ("Subaru", "Outback", 8.0, 0.6),
    ("GMC", "Sierra", 100.0, 0.9),
    ("Buick", "LaCrosse", 12.0, 0.6),
    ("Chrysler", "200", -2.0, 0.6),
    ("Mazda", "3", -33.0, 0.5),
];

/// The Celica was discontinued after model year 2006; six late years are absent.
fn model_year_exists(make: &str, model: &str, year: i32) -> bool {
    !(make == "Toyota" && model == "Celica" && year >= 2012)
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Truncated-normal age weights over `ages` fitted to the target moments.
fn age_weights(ages: &[f64]) -> Vec<f64> {
    let (mut mu, mut sigma) = (TARGET_MEAN_AGE, TARGET_STD_AGE);
    let weights = |mu: f64, sigma: f64| -> Vec<f64> {
        ages.iter().map(|a| (-(a - mu).powi(2) / (2.0 * sigma * sigma)).exp()).collect()
    };
    for _ in 0..200 {
        let w = weights(mu, sigma);
        let (m, s) = crate::fleet::weighted_moments(ages, &w);
        mu += TARGET_MEAN_AGE - m;
        sigma *= TARGET_STD_AGE / s;
    }
    weights(mu, sigma)
}

fn round_to(x: f64, digits: i32) -> f64 {
    let k = 10f64.powi(digits);
    (x * k).round() / k
}

/// Statewide fleet counts and EPA test rows.
pub fn statewide_fleet() -> (Vec<FleetRow>, Vec<EpaRow>) {
    let years: Vec<i32> = (FIRST_MODEL_YEAR..=LAST_MODEL_YEAR).collect();
    let ages: Vec<f64> = years.iter().map(|y| f64::from(ANALYSIS_YEAR - y)).collect();
    let year_w = age_weights(&ages);

    struct Draft {
        make: &'static str,
        model: &'static str,
        year: i32,
        weight: f64,
        rate: f64,
        pinned: bool,
    }
    let mut drafts = Vec::new();
    for (yi, year) in years.iter().enumerate() {
        for (make, model, offset, pop) in MODELS {
            if !model_year_exists(make, model, *year) {
                continue;
            }
            let mut rng = keyed_rng(FIXTURE_SEED, "fleet-type", &format!("{make}|{model}|{year}"));
            let weight = year_w[yi] * pop * (0.5 * normal(&mut rng)).exp();
            let age = ages[yi];
            let rate = 230.0 + offset + AGE_SLOPE * (age - TARGET_MEAN_AGE) + 18.0 * normal(&mut rng);
            let pinned = CALIBRATION_VEHICLES
                .iter()
                .find(|(mk, md, y, _)| *mk == make && *md == model && y == year);
            drafts.push(Draft {
                make,
                model,
                year: *year,
                weight,
                rate: pinned.map_or(rate, |p| p.3),
                pinned: pinned.is_some(),
            });
        }
    }
    // per-type noise must not move the age distribution
    let mut year_total = vec![0.0; years.len()];
    for d in &drafts {
        year_total[(d.year - FIRST_MODEL_YEAR) as usize] += d.weight;
    }
    let w_sum: f64 = year_w.iter().sum();
    for d in &mut drafts {
        let yi = (d.year - FIRST_MODEL_YEAR) as usize;
        d.weight = (d.weight * year_w[yi] / year_total[yi] * FLEET_SIZE / w_sum).round().max(1.0);
    }

    // Affine map on the free types so the whole fleet hits the target moments.
    let total_w: f64 = drafts.iter().map(|d| d.weight).sum();
    let (pinned_w, pinned_sum, pinned_sq) = drafts.iter().filter(|d| d.pinned).fold((0.0, 0.0, 0.0), |acc, d| {
        (acc.0 + d.weight, acc.1 + d.weight * d.rate, acc.2 + d.weight * d.rate * d.rate)
    });
    let free: Vec<&Draft> = drafts.iter().filter(|d| !d.pinned).collect();
    let (free_mean, free_std) = crate::fleet::weighted_moments(
        &free.iter().map(|d| d.rate).collect::<Vec<_>>(),
        &free.iter().map(|d| d.weight).collect::<Vec<_>>(),
    );
    let free_w = total_w - pinned_w;
    let alpha = (total_w * FLEET_MEAN_RATE - pinned_sum) / free_w;
    let second = total_w * (FLEET_STD_RATE.powi(2) + FLEET_MEAN_RATE.powi(2));
    let beta = ((second - pinned_sq) / free_w - alpha * alpha).sqrt();
    for d in drafts.iter_mut().filter(|d| !d.pinned) {
        d.rate = round_to(alpha + beta * (d.rate - free_mean) / free_std, 2);
    }

    let mut fleet = Vec::with_capacity(drafts.len());
    let mut epa = Vec::new();
    for d in &drafts {
        fleet.push(FleetRow {
            make: d.make.into(),
            model: d.model.into(),
            model_year: d.year,
            weight: d.weight,
        });
        let mut rng = keyed_rng(FIXTURE_SEED, "epa-variant", &format!("{}|{}|{}", d.make, d.model, d.year));
        let n = rng.random_range(1..=3usize);
        let spread = round_to(rng.random_range(2.0..15.0), 2);
        let offsets: &[f64] = match n {
            1 => &[0.0],
            2 => &[-1.0, 1.0],
            _ => &[-1.0, 0.0, 1.0],
        };
        let labels = ["auto", "manual", "awd"];
        for (k, o) in offsets.iter().enumerate() {
            epa.push(EpaRow {
                make: d.make.into(),
                model: d.model.into(),
                model_year: d.year,
                variant: labels[k].into(),
                co2_g_per_mile: round_to(d.rate + o * spread, 2),
            });
        }
    }
    (fleet, epa)
}

/// `(name, latitude, longitude, population in thousands)`.
pub const CITIES: [(&str, f64, f64, f64); 20] = [
    ("Detroit", 42.33, -83.05, 670.0),
    ("GrandRapids", 42.96, -85.67, 200.0),
    ("Lansing", 42.73, -84.56, 115.0),
    ("Flint", 43.01, -83.69, 95.0),
    ("AnnArbor", 42.28, -83.74, 120.0),
    ("Kalamazoo", 42.29, -85.59, 75.0),
    ("Saginaw", 43.42, -83.95, 45.0),
    ("TraverseCity", 44.76, -85.62, 16.0),
    ("Muskegon", 43.23, -86.25, 38.0),
    ("Jackson", 42.25, -84.40, 33.0),
    ("BattleCreek", 42.32, -85.18, 51.0),
    ("BayCity", 43.59, -83.89, 33.0),
    ("PortHuron", 42.97, -82.42, 29.0),
    ("Midland", 43.62, -84.25, 42.0),
    ("Holland", 42.79, -86.11, 33.0),
    ("MountPleasant", 43.60, -84.77, 21.0),
    ("Cadillac", 44.25, -85.40, 10.0),
    ("Monroe", 41.92, -83.40, 20.0),
    ("Alpena", 45.06, -83.43, 10.0),
    ("BentonHarbor", 42.12, -86.45, 10.0),
];

const CIRCUITY: f64 = 1.2;
const MIN_OD_MILES: f64 = 20.0;
const MAX_OD_MILES: f64 = 120.0;
const N_STATIONS: usize = 66;
const STATION_BUFFER_MILES: f64 = 4.0;

/// Trips simulated for the statewide fixture and the real trips each represents.
pub const STATEWIDE_TRIPS: usize = 4000;
pub const STATEWIDE_EXPANSION: f64 = 420.0;

fn xy(lat: f64, lon: f64) -> (f64, f64) {
    // local equirectangular projection, miles
    (lon * 69.0 * (43.5f64).to_radians().cos(), lat * 69.0)
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    (((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt(), t)
}

struct Corridor {
    a: usize,
    b: usize,
    miles: f64,
    weight: f64,
}

fn corridors() -> Vec<Corridor> {
    let mut out = Vec::new();
    for (a, ca) in CITIES.iter().enumerate() {
        for (b, cb) in CITIES.iter().enumerate().skip(a + 1) {
            let (pa, pb) = (xy(ca.1, ca.2), xy(cb.1, cb.2));
            let miles = CIRCUITY * ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt();
            if (MIN_OD_MILES..=MAX_OD_MILES).contains(&miles) {
                out.push(Corridor {
                    a,
                    b,
                    miles,
                    weight: ca.3 * cb.3 / (miles * miles),
                });
            }
        }
    }
    out
}

/// Stations on the corridors and the corridors each one sees.
fn stations(cs: &[Corridor]) -> (Vec<(f64, f64)>, Vec<Vec<usize>>) {
    let mut order: Vec<usize> = (0..cs.len()).collect();
    order.sort_by(|i, j| cs[*j].weight.total_cmp(&cs[*i].weight).then(i.cmp(j)));
    let mut rng = keyed_rng(FIXTURE_SEED, "stations", "placement");
    let pts: Vec<(f64, f64)> = (0..N_STATIONS)
        .map(|k| {
            let c = &cs[order[k % order.len()]];
            let (pa, pb) = (xy(CITIES[c.a].1, CITIES[c.a].2), xy(CITIES[c.b].1, CITIES[c.b].2));
            let t = rng.random_range(0.2..0.8);
            (pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1))
        })
        .collect();
    let seen = cs
        .iter()
        .map(|c| {
            let (pa, pb) = (xy(CITIES[c.a].1, CITIES[c.a].2), xy(CITIES[c.b].1, CITIES[c.b].2));
            (0..pts.len())
                .filter(|s| {
                    let (d, t) = segment_distance(pts[*s], pa, pb);
                    d <= STATION_BUFFER_MILES && t > 0.0 && t < 1.0
                })
                .collect()
        })
        .collect();
    (pts, seen)
}

fn station_id(s: usize) -> String {
    format!("S{:02}", s + 1)
}

/// Directed OD demand on corridors crossed by at least one station.
pub fn statewide_demand() -> Vec<OdDemand> {
    let cs = corridors();
    let (_, seen) = stations(&cs);
    let mut out = Vec::new();
    for (c, s) in cs.iter().zip(&seen) {
        if s.is_empty() {
            continue;
        }
        for (o, d) in [(c.a, c.b), (c.b, c.a)] {
            out.push(OdDemand {
                od: OdPair::new(CITIES[o].0, CITIES[d].0),
                weight: round_to(c.weight, 6),
                distance_miles: Some(round_to(c.miles, 2)),
            });
        }
    }
    out.sort_by(|a, b| a.od.cmp(&b.od));
    out
}

/// Relative daily demand per month implied by the VMT anchor, mean 1.
fn seasonal_shape() -> [f64; 12] {
    let days = [31.0, 28.0, 31.0, 30.0, 31.0, 30.0, 31.0, 31.0, 30.0, 31.0, 30.0, 31.0];
    let daily: Vec<f64> = STATEWIDE_MONTHLY_VMT.iter().zip(days).map(|(v, d)| v / d).collect();
    let mean = daily.iter().sum::<f64>() / 12.0;
    std::array::from_fn(|m| daily[m] / mean)
}

/// Incidence (`od_id,station_id,contribution`) and observations with planted
/// per-OD seasonal factors.
fn statewide_stations(demand: &[OdDemand]) -> (String, String) {
    let cs = corridors();
    let (_, seen) = stations(&cs);
    let total_w: f64 = demand.iter().map(|d| d.weight).sum();
    let daily_trips = STATEWIDE_TRIPS as f64 * STATEWIDE_EXPANSION;
    let mut incidence: BTreeMap<OdPair, Vec<(usize, f64)>> = BTreeMap::new();
    for (c, s) in cs.iter().zip(&seen) {
        for (o, d) in [(c.a, c.b), (c.b, c.a)] {
            let od = OdPair::new(CITIES[o].0, CITIES[d].0);
            let Some(dem) = demand.iter().find(|x| x.od == od) else {
                continue;
            };
            let base = round_to(dem.weight / total_w * daily_trips, 1);
            incidence.insert(od, s.iter().map(|st| (*st, base)).collect());
        }
    }
    let shape = seasonal_shape();
    let mut volumes = vec![[0.0; 12]; N_STATIONS];
    for (od, links) in &incidence {
        let mut rng = keyed_rng(FIXTURE_SEED, "planted-phi", &od.to_string());
        let level = 1.0 + 0.06 * normal(&mut rng);
        for m in 0..12 {
            let phi = 1.04 * shape[m] * level * (1.0 + 0.03 * normal(&mut rng));
            for (s, c) in links {
                volumes[*s][m] += phi * c;
            }
        }
    }
    let mut inc = String::from("od_id,station_id,contribution\n");
    for (od, links) in &incidence {
        for (s, c) in links {
            writeln!(inc, "{od},{},{c}", station_id(*s)).unwrap();
        }
    }
    let mut obs = String::from("station_id,month,mean_daily_volume\n");
    for (s, vols) in volumes.iter().enumerate() {
        if vols[0] == 0.0 {
            continue;
        }
        for (m, v) in vols.iter().enumerate() {
            writeln!(obs, "{},{},{}", station_id(s), m + 1, round_to(*v, 1)).unwrap();
        }
    }
    (inc, obs)
}

fn demand_csv(demand: &[OdDemand]) -> String {
    let mut s = String::from("origin,destination,weight,distance_miles\n");
    for d in demand {
        let dist = d.distance_miles.map(|x| x.to_string()).unwrap_or_default();
        writeln!(s, "{},{},{},{dist}", d.od.origin, d.od.destination, d.weight).unwrap();
    }
    s
}

fn fleet_csv(rows: &[FleetRow]) -> String {
    let mut s = String::from("make,model,model_year,weight\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.make, r.model, r.model_year, r.weight).unwrap();
    }
    s
}

fn epa_csv(rows: &[EpaRow]) -> String {
    let mut s = String::from("make,model,model_year,variant,co2_g_per_mile\n");
    for r in rows {
        writeln!(s, "{},{},{},{},{}", r.make, r.model, r.model_year, r.variant, r.co2_g_per_mile).unwrap();
    }
    s
}

fn vmt_csv() -> String {
    let mut s = String::from("month,vmt_million_miles\n");
    for (m, v) in STATEWIDE_MONTHLY_VMT.iter().enumerate() {
        writeln!(s, "{},{v}", m + 1).unwrap();
    }
    s
}

fn tech_csv() -> String {
    let mut s = String::from("share,tech,n_stations,n_chargers,infra_cost_musd,daily_station_mwh\n");
    for (share, tech, st, ch, cost, mwh) in TECH_SCENARIOS {
        writeln!(s, "{share},{tech},{st},{ch},{cost:.2},{mwh:.2}").unwrap();
    }
    s
}

/// Per-trip template of the statewide synthetic trips.
pub fn statewide_template() -> TripTemplate {
    TripTemplate {
        profile: ProfileSpec {
            noise_amp: 1.5,
            step: 2.0,
            ..ProfileSpec::default()
        },
        cruise_jitter: 0.1,
        distance_jitter: 0.15,
        stops_per_100_miles: 1.0,
    }
}

const DESK_CITIES: [&str; 4] = ["Lansing", "Jackson", "AnnArbor", "BattleCreek"];
const DESK_TRIPS: usize = 30;

fn desk_demand() -> Vec<OdDemand> {
    let mut out = Vec::new();
    for (i, o) in DESK_CITIES.iter().enumerate() {
        for (j, d) in DESK_CITIES.iter().enumerate() {
            if i != j {
                out.push(OdDemand {
                    od: OdPair::new(*o, *d),
                    weight: 1.0 + ((i + 2 * j) % 3) as f64,
                    distance_miles: Some(2.0 + ((i * 3 + j) % 4) as f64),
                });
            }
        }
    }
    out
}

fn desk_template() -> TripTemplate {
    TripTemplate {
        profile: ProfileSpec {
            cruise_speed: 20.0,
            noise_amp: 1.0,
            ..ProfileSpec::default()
        },
        cruise_jitter: 0.1,
        distance_jitter: 0.2,
        stops_per_100_miles: 20.0,
    }
}

/// Desk-scale trajectories CSV (zones, not nodes) plus its zone table.
fn desk_trajectories() -> Result<(String, String)> {
    let store = generate_fleet_of_trips(DESK_TRIPS, &desk_demand(), &desk_template(), FIXTURE_SEED)?;
    let zone = |node: &str, k: usize| format!("{node}-{}", k % 2 + 1);
    let mut s = String::from("trip_id,origin_zone,dest_zone,t,v\n");
    for (i, traj) in store.trips().enumerate() {
        let (o, d) = (zone(traj.od().origin.as_str(), i), zone(traj.od().destination.as_str(), i + 1));
        for p in traj.points() {
            writeln!(s, "{},{o},{d},{},{}", traj.trip_id(), p.t, round_to(p.v, 3)).unwrap();
        }
    }
    // two local trips inside an urban zone
    for (id, zone_o, zone_d) in [("U0000001", "Lansing-DT", "Lansing-DT"), ("U0000002", "Lansing-DT", "Lansing-1")] {
        for k in 0..30 {
            let v = 8.0 * (std::f64::consts::PI * f64::from(k) / 29.0).sin();
            writeln!(s, "{id},{zone_o},{zone_d},{k},{}", round_to(v.max(0.0), 3)).unwrap();
        }
    }
    let mut z = String::from("zone_id,node_id\n");
    for c in DESK_CITIES {
        for k in 1..=2 {
            writeln!(z, "{c}-{k},{c}").unwrap();
        }
    }
    z.push_str("Lansing-DT,URBAN\n");
    Ok((s, z))
}

fn desk_stations() -> (String, String) {
    // stations on the Lansing-Jackson, Jackson-AnnArbor and BattleCreek-Lansing links
    let links: [(&str, &[&str]); 3] = [
        ("D1", &["Lansing->Jackson", "Jackson->Lansing", "Lansing->AnnArbor", "AnnArbor->Lansing"]),
        ("D2", &["Jackson->AnnArbor", "AnnArbor->Jackson", "Lansing->AnnArbor", "AnnArbor->Lansing", "BattleCreek->AnnArbor", "AnnArbor->BattleCreek"]),
        ("D3", &["BattleCreek->Lansing", "Lansing->BattleCreek", "BattleCreek->Jackson", "Jackson->BattleCreek", "BattleCreek->AnnArbor", "AnnArbor->BattleCreek"]),
    ];
    let shape = seasonal_shape();
    let mut inc = String::from("od_id,station_id,contribution\n");
    let mut vols = [[0.0; 12]; 3];
    let mut rows: Vec<(String, &str, f64)> = Vec::new();
    for (si, (st, ods)) in links.iter().enumerate() {
        for od in *ods {
            let base = 400.0;
            rows.push((od.to_string(), st, base));
            for (vol, sh) in vols[si].iter_mut().zip(shape) {
                *vol += sh * base;
            }
        }
    }
    rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    for (od, st, c) in rows {
        writeln!(inc, "{od},{st},{c}").unwrap();
    }
    let mut obs = String::from("station_id,month,mean_daily_volume\n");
    for (si, v) in vols.iter().enumerate() {
        for (m, vol) in v.iter().enumerate() {
            writeln!(obs, "D{},{},{}", si + 1, m + 1, round_to(*vol, 1)).unwrap();
        }
    }
    (inc, obs)
}

/// Every generated file as `(path relative to data/, contents)`.
pub fn generate_all() -> Result<Vec<(PathBuf, String)>> {
    let (fleet, epa) = statewide_fleet();
    let demand = statewide_demand();
    let (inc, obs) = statewide_stations(&demand);
    let (desk_traj, desk_zones) = desk_trajectories()?;
    let (desk_inc, desk_obs) = desk_stations();
    let files = [
        ("coefficients.csv", COEFFICIENTS_CSV.to_owned()),
        ("statewide/fleet.csv", fleet_csv(&fleet)),
        ("statewide/epa.csv", epa_csv(&epa)),
        ("statewide/od_demand.csv", demand_csv(&demand)),
        ("statewide/incidence.csv", inc),
        ("statewide/observations.csv", obs),
        ("statewide/monthly_vmt.csv", vmt_csv()),
        ("statewide/tech_scenarios.csv", tech_csv()),
        ("desk/trajectories.csv", desk_traj),
        ("desk/zones.csv", desk_zones),
        ("desk/incidence.csv", desk_inc),
        ("desk/observations.csv", desk_obs),
    ];
    Ok(files.into_iter().map(|(p, c)| (PathBuf::from(p), c)).collect())
}

pub fn write_all(data_dir: &Path) -> Result<()> {
    for (rel, contents) in generate_all()? {
        crate::io::write_atomic(&data_dir.join(rel), contents.as_bytes())?;
    }
    Ok(())
}

/// Read `month,vmt_million_miles` into Jan..Dec.
pub fn read_monthly_vmt(path: &Path) -> Result<[f64; 12]> {
    let mut r = crate::io::csv_reader(crate::io::open(path)?);
    let idx = crate::io::column_indices(r.headers()?, &["month", "vmt_million_miles"])?;
    let mut out = [None; 12];
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let m: usize = rec[idx[0]].parse().ok().filter(|m| (1..=12).contains(m)).ok_or_else(|| {
            crate::Error::MalformedRow {
                row,
                message: format!("month `{}` is not in 1..=12", &rec[idx[0]]),
            }
        })?;
        out[m - 1] = Some(crate::io::parse_f64(&rec[idx[1]], "vmt_million_miles", row)?);
    }
    let mut vmt = [0.0; 12];
    for (m, v) in out.iter().enumerate() {
        vmt[m] = v.ok_or_else(|| crate::Error::Validation(format!("monthly VMT missing for {}", MONTH_LABELS[m])))?;
    }
    Ok(vmt)
}

/// Read `origin,destination,weight[,distance_miles]`.
pub fn read_od_demand(path: &Path) -> Result<Vec<OdDemand>> {
    let mut r = crate::io::csv_reader(crate::io::open(path)?);
    let headers = r.headers()?.clone();
    let idx = crate::io::column_indices(&headers, &["origin", "destination", "weight"])?;
    let dist = crate::io::optional_index(&headers, "distance_miles");
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        out.push(OdDemand {
            od: OdPair::new(&rec[idx[0]], &rec[idx[1]]),
            weight: crate::io::parse_f64(&rec[idx[2]], "weight", row)?,
            distance_miles: match dist.map(|i| &rec[i]) {
                Some(s) if !s.is_empty() => Some(crate::io::parse_f64(s, "distance_miles", row)?),
                _ => None,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::{aggregate_epa_rates, baseline_rate, fleet_weighted_stats, load_fleet, FleetConfig, VehicleKey};

    #[test]
    fn fleet_hits_target_moments() {
        let (fleet, epa) = statewide_fleet();
        assert_eq!(fleet.len(), 570);
        let rates = aggregate_epa_rates(&epa);
        let keys: Vec<VehicleKey> =
            CALIBRATION_VEHICLES.iter().map(|(mk, md, y, _)| VehicleKey::new(mk, md, *y)).collect();
        let eb = baseline_rate(&rates, &keys).unwrap();
        assert!((eb - 581.0 / 3.0).abs() < 1e-9);
        let (reg, rep) = load_fleet(&fleet, &rates, eb, &FleetConfig::default()).unwrap();
        assert_eq!(rep.dropped_unmatched, 0);
        let s = fleet_weighted_stats(&reg);
        assert!((s.mean_rate - 246.0).abs() < 0.05, "{s:?}");
        assert!((s.std_rate - 55.0).abs() < 0.05, "{s:?}");
        assert!((s.mean_age - 10.2).abs() < 0.1, "{s:?}");
        assert!((s.std_age - 4.2).abs() < 0.1, "{s:?}");
    }

    #[test]
    fn demand_is_covered_by_stations() {
        let d = statewide_demand();
        assert!(d.len() >= 40, "{}", d.len());
        let (inc, _) = statewide_stations(&d);
        for x in &d {
            assert!(inc.contains(&format!("\n{},", x.od)), "{} has no station", x.od);
        }
    }

    #[test]
    fn shipped_files_match_generators() {
        let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
        for (rel, contents) in generate_all().unwrap() {
            let shipped = std::fs::read_to_string(data.join(&rel))
                .unwrap_or_else(|e| panic!("{}: {e}; run `cargo run --example gen_fixtures`", rel.display()));
            assert!(shipped == contents, "{} differs from its generator", rel.display());
        }
    }
}
