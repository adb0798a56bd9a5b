//! Deterministic synthetic trajectories.
//!
//! Profiles are built from ramp-up / cruise / ramp-down legs separated by
//! full stops, with optional smooth zero-mean speed noise. Every random draw
//! comes from a stream keyed by `(seed, trip_id)`, so a trip's samples do not
//! depend on which other trips are generated or in which order.

use std::f64::consts::TAU;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{OdPair, TripId};
use crate::seed::keyed_rng;
use crate::trajectory::{Trajectory, TrajectoryStore, DEFAULT_A_MAX};
use crate::units::METERS_PER_MILE;

const NOISE_HARMONICS: usize = 4;
const NOISE_PERIOD_RANGE: (f64, f64) = (30.0, 240.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileSpec {
    /// m/s
    pub cruise_speed: f64,
    /// m/s²
    pub accel_rate: f64,
    /// m/s², positive magnitude
    pub decel_rate: f64,
    /// miles
    pub target_distance: f64,
    pub n_stops: u32,
    /// m/s
    pub noise_amp: f64,
    pub seed: u64,
    /// Seconds spent at standstill for each mid-trip stop.
    pub stop_dwell: f64,
    /// Sampling step in seconds.
    pub step: f64,
    pub a_max: f64,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        Self {
            cruise_speed: 26.8224,
            accel_rate: 1.5,
            decel_rate: 2.0,
            target_distance: 30.0,
            n_stops: 0,
            noise_amp: 0.0,
            seed: 0,
            stop_dwell: 20.0,
            step: 1.0,
            a_max: DEFAULT_A_MAX,
        }
    }
}

impl ProfileSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cruise_speed", self.cruise_speed),
            ("accel_rate", self.accel_rate),
            ("decel_rate", self.decel_rate),
            ("target_distance", self.target_distance),
            ("step", self.step),
            ("a_max", self.a_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("profile {name} must be > 0, got {v}")));
            }
        }
        if !(self.noise_amp.is_finite() && self.noise_amp >= 0.0) {
            return Err(Error::invalid("profile noise_amp must be >= 0"));
        }
        if !(self.stop_dwell.is_finite() && self.stop_dwell >= 0.0) {
            return Err(Error::invalid("profile stop_dwell must be >= 0"));
        }
        if self.accel_rate > self.a_max || self.decel_rate > self.a_max {
            return Err(Error::invalid(format!(
                "ramp rates ({}, {}) exceed a_max {}",
                self.accel_rate, self.decel_rate, self.a_max
            )));
        }
        Ok(())
    }
}

fn ramp(speed: f64, rate: f64, step: f64) -> Vec<f64> {
    let n = (speed / (rate * step)).ceil() as usize;
    (0..=n).map(|k| (rate * step * k as f64).min(speed)).collect()
}

/// Noise-free speed profile for `spec`.
fn base_profile(spec: &ProfileSpec) -> Result<Vec<f64>> {
    let legs = spec.n_stops as usize + 1;
    let leg_m = spec.target_distance * METERS_PER_MILE / legs as f64;
    let up = ramp(spec.cruise_speed, spec.accel_rate, spec.step);
    // descending, starting one step below cruise and ending at 0
    let down: Vec<f64> = ramp(spec.cruise_speed, spec.decel_rate, spec.step)
        .into_iter()
        .rev()
        .skip(1)
        .collect();
    let ramp_m = (up.iter().sum::<f64>() + down.iter().sum::<f64>()) * spec.step;
    if ramp_m > leg_m {
        return Err(Error::invalid(format!(
            "target distance {:.3} mi too short: each of {legs} legs needs at least {:.3} mi to ramp",
            spec.target_distance,
            ramp_m / METERS_PER_MILE
        )));
    }
    let n_cruise = ((leg_m - ramp_m) / (spec.cruise_speed * spec.step)).round() as usize;
    let dwell = (spec.stop_dwell / spec.step).round() as usize;

    let mut v = Vec::with_capacity(legs * (up.len() + n_cruise + down.len() + dwell));
    for leg in 0..legs {
        if leg > 0 {
            v.extend(std::iter::repeat_n(0.0, dwell));
        }
        v.extend_from_slice(&up);
        v.extend(std::iter::repeat_n(spec.cruise_speed, n_cruise));
        v.extend_from_slice(&down);
    }
    Ok(v)
}

/// Smooth zero-sum perturbation, scaled by the local fraction of cruise speed
/// so that standstills stay at zero.
fn add_noise<R: Rng>(speeds: &mut [f64], spec: &ProfileSpec, rng: &mut R) {
    let mut weights = [0.0; NOISE_HARMONICS];
    let mut periods = [0.0; NOISE_HARMONICS];
    let mut phases = [0.0; NOISE_HARMONICS];
    for j in 0..NOISE_HARMONICS {
        weights[j] = rng.random_range(0.2..1.0);
        periods[j] = rng.random_range(NOISE_PERIOD_RANGE.0..NOISE_PERIOD_RANGE.1);
        phases[j] = rng.random_range(0.0..TAU);
    }
    let wsum: f64 = weights.iter().sum();

    let gains: Vec<f64> = speeds.iter().map(|v| v / spec.cruise_speed).collect();
    let mut noise: Vec<f64> = gains
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let t = k as f64 * spec.step;
            let s: f64 = (0..NOISE_HARMONICS)
                .map(|j| weights[j] * (TAU * t / periods[j] + phases[j]).sin())
                .sum();
            spec.noise_amp * s / wsum * g
        })
        .collect();
    let gsum: f64 = gains.iter().sum();
    if gsum > 0.0 {
        let m = noise.iter().sum::<f64>() / gsum;
        for (n, g) in noise.iter_mut().zip(&gains) {
            *n -= m * g;
        }
    }
    for (v, n) in speeds.iter_mut().zip(&noise) {
        *v = (*v + n).max(0.0);
    }
}

/// Limit consecutive speed changes so derived accelerations stay within `a_max`.
fn limit_slew(speeds: &mut [f64], a_max: f64, step: f64) {
    let dv = a_max * step;
    for k in 1..speeds.len() {
        let prev = speeds[k - 1];
        speeds[k] = speeds[k].clamp((prev - dv).max(0.0), prev + dv);
    }
}

/// Generate one trajectory. The same `(spec, trip_id)` always yields the same samples.
pub fn generate_trajectory(spec: &ProfileSpec, trip_id: TripId, od: OdPair) -> Result<Trajectory> {
    spec.validate()?;
    let mut speeds = base_profile(spec)?;
    if spec.noise_amp > 0.0 {
        let mut rng = keyed_rng(spec.seed, "synth-noise", trip_id.as_str());
        add_noise(&mut speeds, spec, &mut rng);
        limit_slew(&mut speeds, spec.a_max, spec.step);
    }
    Trajectory::from_speeds(trip_id, od, spec.step, speeds, spec.a_max)
        .map_err(|e| Error::invalid(format!("generated trajectory invalid: {e}")))
}

/// Demand on one OD relation for fleet generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdDemand {
    pub od: OdPair,
    pub weight: f64,
    /// Trip length on this relation; the template distance when absent.
    pub distance_miles: Option<f64>,
}

/// Per-trip variation applied around a base profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripTemplate {
    pub profile: ProfileSpec,
    /// Relative half-width of the uniform cruise speed jitter.
    pub cruise_jitter: f64,
    /// Relative half-width of the uniform trip length jitter.
    pub distance_jitter: f64,
    /// Expected extra mid-trip stops per 100 miles.
    pub stops_per_100_miles: f64,
}

impl Default for TripTemplate {
    fn default() -> Self {
        Self {
            profile: ProfileSpec::default(),
            cruise_jitter: 0.0,
            distance_jitter: 0.0,
            stops_per_100_miles: 0.0,
        }
    }
}

pub fn trip_id_for(index: usize) -> TripId {
    TripId(format!("T{index:07}"))
}

fn pick_od(demand: &[OdDemand], total: f64, u: f64) -> &OdDemand {
    let mut acc = 0.0;
    let target = u * total;
    for d in demand {
        acc += d.weight;
        if target < acc {
            return d;
        }
    }
    demand.iter().rev().find(|d| d.weight > 0.0).expect("positive total weight")
}

fn trip_spec(template: &TripTemplate, demand: &[OdDemand], total: f64, master_seed: u64, id: &TripId) -> (ProfileSpec, OdPair) {
    let mut rng = keyed_rng(master_seed, "synth-trip", id.as_str());
    let d = pick_od(demand, total, rng.random::<f64>());
    let mut spec = template.profile.clone();
    let base_dist = d.distance_miles.unwrap_or(spec.target_distance);
    spec.target_distance = base_dist * (1.0 + template.distance_jitter * rng.random_range(-1.0..=1.0));
    spec.cruise_speed *= 1.0 + template.cruise_jitter * rng.random_range(-1.0..=1.0);
    let expected_stops = spec.target_distance / 100.0 * template.stops_per_100_miles;
    spec.n_stops += (expected_stops + rng.random::<f64>()).floor() as u32;
    spec.seed = rng.next_u64();
    (spec, d.od.clone())
}

/// Generate `n_trips` trajectories with OD relations drawn proportionally to
/// `demand` weights. Trip `i` is `T{i:07}` and depends only on
/// `(master_seed, trip_id)`.
pub fn generate_fleet_of_trips(
    n_trips: usize,
    demand: &[OdDemand],
    template: &TripTemplate,
    master_seed: u64,
) -> Result<TrajectoryStore> {
    if n_trips == 0 {
        return Err(Error::invalid("n_trips must be positive"));
    }
    if demand.iter().any(|d| !(d.weight.is_finite() && d.weight >= 0.0)) {
        return Err(Error::invalid("OD weights must be finite and >= 0"));
    }
    let total: f64 = demand.iter().map(|d| d.weight).sum();
    if !(total > 0.0) {
        return Err(Error::invalid("OD weights are all zero"));
    }
    template.profile.validate()?;

    let trajs: Vec<Trajectory> = (0..n_trips)
        .into_par_iter()
        .map(|i| {
            let id = trip_id_for(i);
            let (spec, od) = trip_spec(template, demand, total, master_seed, &id);
            generate_trajectory(&spec, id, od)
        })
        .collect::<Result<_>>()?;
    TrajectoryStore::from_trajectories(trajs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::trip_distance;

    fn od() -> OdPair {
        OdPair::new("A", "B")
    }

    #[test]
    fn free_flow_sixty_miles() {
        let spec = ProfileSpec {
            target_distance: 60.0,
            ..Default::default()
        };
        let t = generate_trajectory(&spec, "T".into(), od()).unwrap();
        let d = trip_distance(&t);
        assert!((d - 60.0).abs() <= 0.6, "{d}");
        let cruise = t.speeds().iter().filter(|v| **v == spec.cruise_speed).count();
        assert!((cruise as f64 - 3600.0).abs() < 60.0, "{cruise}");
        assert_eq!(t.speeds()[0], 0.0);
        assert_eq!(*t.speeds().last().unwrap(), 0.0);
    }

    #[test]
    fn deterministic_with_noise() {
        let spec = ProfileSpec {
            noise_amp: 1.5,
            n_stops: 2,
            seed: 42,
            ..Default::default()
        };
        let a = generate_trajectory(&spec, "T9".into(), od()).unwrap();
        let b = generate_trajectory(&spec, "T9".into(), od()).unwrap();
        assert_eq!(a, b);
        let c = generate_trajectory(&spec, "T10".into(), od()).unwrap();
        assert_ne!(a.speeds(), c.speeds());
    }

    #[test]
    fn noisy_distance_within_one_percent() {
        for (i, stops) in [0u32, 1, 3, 5].into_iter().enumerate() {
            let spec = ProfileSpec {
                noise_amp: 2.0,
                n_stops: stops,
                seed: i as u64,
                target_distance: 12.0,
                ..Default::default()
            };
            let t = generate_trajectory(&spec, "x".into(), od()).unwrap();
            let d = trip_distance(&t);
            assert!((d - 12.0).abs() <= 0.12, "stops {stops}: {d}");
            t.validate(DEFAULT_A_MAX).unwrap();
            assert!(t.speeds().iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn stops_insert_standstills() {
        let spec = ProfileSpec {
            n_stops: 2,
            stop_dwell: 10.0,
            ..Default::default()
        };
        let t = generate_trajectory(&spec, "x".into(), od()).unwrap();
        let s = t.speeds();
        let interior_zeros = s[1..s.len() - 1].iter().filter(|v| **v == 0.0).count();
        // two stops, each: end-of-leg zero + dwell + start-of-leg zero
        assert_eq!(interior_zeros, 2 * 12);
    }

    #[test]
    fn too_short_is_error() {
        let spec = ProfileSpec {
            target_distance: 0.1,
            n_stops: 3,
            ..Default::default()
        };
        assert!(generate_trajectory(&spec, "x".into(), od()).is_err());
    }

    #[test]
    fn invalid_specs() {
        for spec in [
            ProfileSpec { cruise_speed: 0.0, ..Default::default() },
            ProfileSpec { accel_rate: -1.0, ..Default::default() },
            ProfileSpec { noise_amp: -0.1, ..Default::default() },
            ProfileSpec { decel_rate: 12.0, ..Default::default() },
        ] {
            assert!(spec.validate().is_err());
        }
    }

    fn two_way() -> Vec<OdDemand> {
        vec![
            OdDemand { od: OdPair::new("A", "B"), weight: 1.0, distance_miles: Some(5.0) },
            OdDemand { od: OdPair::new("B", "A"), weight: 1.0, distance_miles: Some(5.0) },
        ]
    }

    #[test]
    fn fleet_split_is_binomial() {
        let store = generate_fleet_of_trips(1000, &two_way(), &TripTemplate::default(), 7).unwrap();
        let ab = store.trip_count(&OdPair::new("A", "B"));
        assert_eq!(store.len(), 1000);
        assert!((440..=560).contains(&ab), "{ab}");
    }

    #[test]
    fn single_od_gets_everything() {
        let demand = vec![
            OdDemand { od: OdPair::new("A", "B"), weight: 0.0, distance_miles: Some(5.0) },
            OdDemand { od: OdPair::new("C", "D"), weight: 3.0, distance_miles: Some(5.0) },
        ];
        let store = generate_fleet_of_trips(50, &demand, &TripTemplate::default(), 1).unwrap();
        assert_eq!(store.trip_count(&OdPair::new("C", "D")), 50);
    }

    #[test]
    fn fleet_is_order_independent() {
        let template = TripTemplate {
            profile: ProfileSpec { noise_amp: 1.0, ..Default::default() },
            cruise_jitter: 0.1,
            distance_jitter: 0.2,
            stops_per_100_miles: 20.0,
        };
        let big = generate_fleet_of_trips(40, &two_way(), &template, 3).unwrap();
        let small = generate_fleet_of_trips(10, &two_way(), &template, 3).unwrap();
        for t in small.trips() {
            assert_eq!(big.get(t.trip_id()).unwrap(), t);
        }
        assert_eq!(big, generate_fleet_of_trips(40, &two_way(), &template, 3).unwrap());
    }

    #[test]
    fn fleet_errors() {
        assert!(generate_fleet_of_trips(0, &two_way(), &TripTemplate::default(), 1).is_err());
        let zero = vec![OdDemand { od: od(), weight: 0.0, distance_miles: None }];
        assert!(generate_fleet_of_trips(5, &zero, &TripTemplate::default(), 1).is_err());
        let neg = vec![OdDemand { od: od(), weight: -1.0, distance_miles: None }];
        assert!(generate_fleet_of_trips(5, &neg, &TripTemplate::default(), 1).is_err());
    }
}
