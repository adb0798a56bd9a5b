//! Per-second trajectories: ingestion, validation, OD grouping, distance and VMT.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::ids::{NodeId, OdPair, TripId, ZoneId};
use crate::io::{column_indices, csv_reader, optional_index, parse_f64};
use crate::units::METERS_PER_MILE;

/// Default sanity bound on |acceleration| in m/s².
pub const DEFAULT_A_MAX: f64 = 10.0;

/// Sentinel node id in zone clustering files for zones outside every intercity node.
pub const URBAN_SENTINEL: &str = "URBAN";

const STEP_TOLERANCE: f64 = 1e-6;

/// One sample of a trajectory. Speed in m/s, acceleration in m/s².
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub v: f64,
    pub a: Option<f64>,
    pub link_id: Option<String>,
}

impl TrajectoryPoint {
    pub fn new(t: f64, v: f64) -> Self {
        Self {
            t,
            v,
            a: None,
            link_id: None,
        }
    }
}

/// Why a trajectory failed validation.
#[derive(Debug, Clone, PartialEq, Error, Serialize)]
pub enum TrajectoryIssue {
    #[error("trajectory has no samples")]
    Empty,
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("negative or non-finite speed {v} at sample {index}")]
    InvalidSpeed { index: usize, v: f64 },
    #[error("acceleration {a} at sample {index} exceeds bound {a_max}")]
    AccelerationBound { index: usize, a: f64, a_max: f64 },
    #[error("time step {dt} at sample {index} differs from {expected}")]
    NonUniformStep { index: usize, dt: f64, expected: f64 },
    #[error("samples not strictly time-ordered at sample {index}")]
    NotTimeOrdered { index: usize },
    #[error("origin/destination zones change within the trip")]
    InconsistentZones,
}

/// Fill missing accelerations by forward difference: `a_k = (v_{k+1} - v_k) / step`
/// and 0 on the last sample. Samples that already carry an acceleration are
/// left untouched. Returns `false` when the trajectory has a single sample.
pub fn fill_accelerations(points: &mut [TrajectoryPoint], step: f64) -> bool {
    let n = points.len();
    for k in 0..n {
        if points[k].a.is_none() {
            points[k].a = Some(if k + 1 < n {
                (points[k + 1].v - points[k].v) / step
            } else {
                0.0
            });
        }
    }
    n > 1
}

/// A validated trip. Samples are stored column-wise; time is implied by
/// `t0 + k * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    trip_id: TripId,
    od: OdPair,
    t0: f64,
    step: f64,
    speeds: Vec<f64>,
    accels: Vec<f64>,
    links: Option<Vec<Option<String>>>,
}

impl Trajectory {
    /// Build from raw samples, filling absent accelerations and checking the
    /// kinematic invariants.
    pub fn from_points(
        trip_id: TripId,
        od: OdPair,
        step: f64,
        mut points: Vec<TrajectoryPoint>,
        a_max: f64,
    ) -> Result<Self, TrajectoryIssue> {
        if !(step.is_finite() && step > 0.0) {
            return Err(TrajectoryIssue::BadStep(step));
        }
        if points.is_empty() {
            return Err(TrajectoryIssue::Empty);
        }
        for k in 1..points.len() {
            let dt = points[k].t - points[k - 1].t;
            if !(dt > 0.0) {
                return Err(TrajectoryIssue::NotTimeOrdered { index: k });
            }
            if (dt - step).abs() > STEP_TOLERANCE * step.max(1.0) {
                return Err(TrajectoryIssue::NonUniformStep {
                    index: k,
                    dt,
                    expected: step,
                });
            }
        }
        if let Some((index, p)) = points
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.v.is_finite() && p.v >= 0.0))
        {
            return Err(TrajectoryIssue::InvalidSpeed { index, v: p.v });
        }
        if !fill_accelerations(&mut points, step) {
            warn!("trip {trip_id} has a single sample; acceleration set to 0");
        }
        let t0 = points[0].t;
        let has_links = points.iter().any(|p| p.link_id.is_some());
        let mut speeds = Vec::with_capacity(points.len());
        let mut accels = Vec::with_capacity(points.len());
        let mut links = has_links.then(|| Vec::with_capacity(points.len()));
        for p in points {
            speeds.push(p.v);
            accels.push(p.a.unwrap_or(0.0));
            if let Some(l) = links.as_mut() {
                l.push(p.link_id);
            }
        }
        let traj = Self {
            trip_id,
            od,
            t0,
            step,
            speeds,
            accels,
            links,
        };
        traj.check_accelerations(a_max)?;
        Ok(traj)
    }

    /// Build from a speed profile starting at t = 0; accelerations are derived.
    pub fn from_speeds(
        trip_id: TripId,
        od: OdPair,
        step: f64,
        speeds: Vec<f64>,
        a_max: f64,
    ) -> Result<Self, TrajectoryIssue> {
        let points = speeds
            .into_iter()
            .enumerate()
            .map(|(k, v)| TrajectoryPoint::new(k as f64 * step, v))
            .collect();
        Self::from_points(trip_id, od, step, points, a_max)
    }

    fn check_accelerations(&self, a_max: f64) -> Result<(), TrajectoryIssue> {
        match self
            .accels
            .iter()
            .enumerate()
            .find(|(_, a)| !(a.is_finite() && a.abs() <= a_max))
        {
            Some((index, &a)) => Err(TrajectoryIssue::AccelerationBound { index, a, a_max }),
            None => Ok(()),
        }
    }

    /// Re-check every invariant (used on trajectories built elsewhere).
    pub fn validate(&self, a_max: f64) -> Result<(), TrajectoryIssue> {
        if self.speeds.is_empty() {
            return Err(TrajectoryIssue::Empty);
        }
        if let Some((index, &v)) = self
            .speeds
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(TrajectoryIssue::InvalidSpeed { index, v });
        }
        self.check_accelerations(a_max)
    }

    /// Recompute every acceleration from the speeds by forward difference.
    pub fn rederive_accelerations(&mut self) {
        let n = self.speeds.len();
        for k in 0..n {
            self.accels[k] = if k + 1 < n {
                (self.speeds[k + 1] - self.speeds[k]) / self.step
            } else {
                0.0
            };
        }
    }

    pub fn trip_id(&self) -> &TripId {
        &self.trip_id
    }

    pub fn od(&self) -> &OdPair {
        &self.od
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.speeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speeds.is_empty()
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn accels(&self) -> &[f64] {
        &self.accels
    }

    pub fn point(&self, k: usize) -> TrajectoryPoint {
        TrajectoryPoint {
            t: self.t0 + k as f64 * self.step,
            v: self.speeds[k],
            a: Some(self.accels[k]),
            link_id: self.links.as_ref().and_then(|l| l[k].clone()),
        }
    }

    pub fn points(&self) -> impl Iterator<Item = TrajectoryPoint> + '_ {
        (0..self.len()).map(move |k| self.point(k))
    }

    /// `(speed, acceleration)` pairs, the only inputs the emission kernel needs.
    pub fn kinematics(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.speeds.iter().copied().zip(self.accels.iter().copied())
    }

    /// Split into `[0, k)` and `[k, n)`, keeping every stored acceleration.
    pub fn split_at(&self, k: usize) -> (Trajectory, Trajectory) {
        assert!(k > 0 && k < self.len(), "split index must leave both halves non-empty");
        let part = |range: std::ops::Range<usize>, suffix: &str| Trajectory {
            trip_id: TripId(format!("{}{}", self.trip_id, suffix)),
            od: self.od.clone(),
            t0: self.t0 + range.start as f64 * self.step,
            step: self.step,
            speeds: self.speeds[range.clone()].to_vec(),
            accels: self.accels[range.clone()].to_vec(),
            links: self.links.as_ref().map(|l| l[range].to_vec()),
        };
        (part(0..k, "/a"), part(k..self.len(), "/b"))
    }

    /// Append `other` after `self`, keeping both sets of stored accelerations.
    pub fn concat(&self, other: &Trajectory) -> Trajectory {
        assert_eq!(self.step, other.step, "cannot concatenate different steps");
        let mut speeds = self.speeds.clone();
        speeds.extend_from_slice(&other.speeds);
        let mut accels = self.accels.clone();
        accels.extend_from_slice(&other.accels);
        let links = match (&self.links, &other.links) {
            (None, None) => None,
            (a, b) => {
                let mut l = a.clone().unwrap_or_else(|| vec![None; self.len()]);
                l.extend(b.clone().unwrap_or_else(|| vec![None; other.len()]));
                Some(l)
            }
        };
        Trajectory {
            trip_id: self.trip_id.clone(),
            od: self.od.clone(),
            t0: self.t0,
            step: self.step,
            speeds,
            accels,
            links,
        }
    }

    pub fn with_trip_id(mut self, trip_id: TripId) -> Self {
        self.trip_id = trip_id;
        self
    }
}

/// Trip distance in miles by the rectangle rule over speed samples.
pub fn trip_distance(traj: &Trajectory) -> f64 {
    let meters: f64 = traj.speeds().iter().sum::<f64>() * traj.step();
    meters / METERS_PER_MILE
}

/// Mapping from traffic-analysis zone to intercity node (`None` = urban).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ZoneClustering {
    zone_to_node: BTreeMap<ZoneId, Option<NodeId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoneLookup<'a> {
    Node(&'a NodeId),
    Urban,
    Unmapped,
}

impl ZoneClustering {
    pub fn from_pairs<I, Z, N>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Z, Option<N>)>,
        Z: Into<String>,
        N: Into<String>,
    {
        let mut zone_to_node = BTreeMap::new();
        for (z, n) in pairs {
            let z = ZoneId(z.into());
            if zone_to_node.contains_key(&z) {
                return Err(Error::invalid(format!("zone {z} listed more than once")));
            }
            zone_to_node.insert(z, n.map(|n| NodeId(n.into())));
        }
        Ok(Self { zone_to_node })
    }

    /// Read `zone_id,node_id`; a node id of `URBAN` marks an excluded zone.
    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let mut r = csv_reader(rdr);
        let idx = column_indices(r.headers()?, &["zone_id", "node_id"])?;
        let mut pairs = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let zone = rec[idx[0]].to_owned();
            let node = &rec[idx[1]];
            let node = (node != URBAN_SENTINEL && !node.is_empty()).then(|| node.to_owned());
            pairs.push((zone, node));
        }
        Self::from_pairs(pairs)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::read_csv(crate::io::open(path)?)
    }

    pub fn lookup(&self, zone: &str) -> ZoneLookup<'_> {
        match self.zone_to_node.get(&ZoneId(zone.to_owned())) {
            Some(Some(n)) => ZoneLookup::Node(n),
            Some(None) => ZoneLookup::Urban,
            None => ZoneLookup::Unmapped,
        }
    }

    pub fn len(&self) -> usize {
        self.zone_to_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zone_to_node.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ZoneId, Option<&NodeId>)> {
        self.zone_to_node.iter().map(|(z, n)| (z, n.as_ref()))
    }
}

/// Immutable set of intercity trajectories, indexed by trip id and grouped by OD pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryStore {
    trips: BTreeMap<TripId, Trajectory>,
    groups: BTreeMap<OdPair, Vec<TripId>>,
}

impl TrajectoryStore {
    pub fn from_trajectories<I: IntoIterator<Item = Trajectory>>(trajs: I) -> Result<Self> {
        let mut store = Self::default();
        for t in trajs {
            if store.trips.contains_key(t.trip_id()) {
                return Err(Error::invalid(format!("duplicate trip id {}", t.trip_id())));
            }
            store
                .groups
                .entry(t.od().clone())
                .or_default()
                .push(t.trip_id().clone());
            store.trips.insert(t.trip_id().clone(), t);
        }
        for ids in store.groups.values_mut() {
            ids.sort();
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn get(&self, id: &TripId) -> Option<&Trajectory> {
        self.trips.get(id)
    }

    /// Trajectories in trip-id order.
    pub fn trips(&self) -> impl Iterator<Item = &Trajectory> {
        self.trips.values()
    }

    pub fn trip_ids(&self) -> impl Iterator<Item = &TripId> {
        self.trips.keys()
    }

    /// OD groups in OD order, each with trip ids sorted.
    pub fn groups(&self) -> &BTreeMap<OdPair, Vec<TripId>> {
        &self.groups
    }

    pub fn trip_count(&self, od: &OdPair) -> usize {
        self.groups.get(od).map_or(0, Vec::len)
    }

    /// Per-OD trip distances `D_n^i` in miles, in trip-id order.
    pub fn od_distances(&self, od: &OdPair) -> Vec<f64> {
        self.groups
            .get(od)
            .map(|ids| ids.iter().map(|id| trip_distance(&self.trips[id])).collect())
            .unwrap_or_default()
    }

    /// Store with every trajectory duplicated under a suffixed trip id.
    pub fn duplicated(&self) -> Result<Self> {
        Self::from_trajectories(self.trips().flat_map(|t| {
            [
                t.clone(),
                t.clone().with_trip_id(TripId(format!("{}#dup", t.trip_id()))),
            ]
        }))
    }
}

/// Vehicle miles traveled, per OD pair and in total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VmtSummary {
    pub per_od: BTreeMap<OdPair, f64>,
    pub total: f64,
}

pub fn store_vmt(store: &TrajectoryStore) -> VmtSummary {
    let per_od: BTreeMap<OdPair, f64> = store
        .groups()
        .iter()
        .filter(|(_, ids)| !ids.is_empty())
        .map(|(od, _)| (od.clone(), store.od_distances(od).iter().sum()))
        .collect();
    let total = per_od.values().sum();
    VmtSummary { per_od, total }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub clustering: ZoneClustering,
    pub a_max: f64,
    /// Expected sampling step in seconds; `None` infers it per trip.
    pub step: Option<f64>,
}

impl IngestConfig {
    pub fn new(clustering: ZoneClustering) -> Self {
        Self {
            clustering,
            a_max: DEFAULT_A_MAX,
            step: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rejection {
    pub trip_id: TripId,
    pub reason: TrajectoryIssue,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub total_trips: usize,
    pub accepted: usize,
    pub urban_dropped: usize,
    /// Subset of `urban_dropped` whose zones had no clustering entry.
    pub unmapped_zone_trips: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub store: TrajectoryStore,
    pub report: IngestReport,
}

struct RawTrip {
    origin_zone: String,
    dest_zone: String,
    zones_consistent: bool,
    points: Vec<TrajectoryPoint>,
}

/// Read a trajectory CSV (`trip_id,origin_zone,dest_zone,t,v[,a][,link_id]`),
/// keep intercity trips and validate them.
///
/// Malformed rows abort ingestion with their row number. Kinematic problems
/// reject only the offending trip and are listed in the report.
pub fn ingest_trajectories<R: Read>(source: R, config: &IngestConfig) -> Result<IngestOutcome> {
    let mut r = csv_reader(source);
    let headers = r.headers()?.clone();
    let idx = column_indices(&headers, &["trip_id", "origin_zone", "dest_zone", "t", "v"])?;
    let a_idx = optional_index(&headers, "a");
    let link_idx = optional_index(&headers, "link_id");

    let mut raw: BTreeMap<String, RawTrip> = BTreeMap::new();
    let mut rec = csv::StringRecord::new();
    loop {
        let more = r.read_record(&mut rec).map_err(|e| match e.position() {
            Some(p) => Error::MalformedRow {
                row: p.line(),
                message: e.to_string(),
            },
            None => Error::Csv(e),
        })?;
        if !more {
            break;
        }
        let row = rec.position().map_or(0, |p| p.line());
        let trip_id = &rec[idx[0]];
        if trip_id.is_empty() {
            return Err(Error::MalformedRow {
                row,
                message: "empty trip_id".into(),
            });
        }
        let t = parse_f64(&rec[idx[3]], "t", row)?;
        let v = parse_f64(&rec[idx[4]], "v", row)?;
        let a = match a_idx.map(|i| &rec[i]) {
            Some(s) if !s.is_empty() => Some(parse_f64(s, "a", row)?),
            _ => None,
        };
        let link_id = link_idx
            .map(|i| &rec[i])
            .filter(|s| !s.is_empty())
            .map(str::to_owned);
        let (oz, dz) = (&rec[idx[1]], &rec[idx[2]]);
        let entry = raw.entry(trip_id.to_owned()).or_insert_with(|| RawTrip {
            origin_zone: oz.to_owned(),
            dest_zone: dz.to_owned(),
            zones_consistent: true,
            points: Vec::new(),
        });
        if entry.origin_zone != oz || entry.dest_zone != dz {
            entry.zones_consistent = false;
        }
        entry.points.push(TrajectoryPoint { t, v, a, link_id });
    }

    let mut report = IngestReport {
        total_trips: raw.len(),
        ..Default::default()
    };
    let mut accepted = Vec::new();
    for (trip_id, trip) in raw {
        let trip_id = TripId(trip_id);
        let o = config.clustering.lookup(&trip.origin_zone);
        let d = config.clustering.lookup(&trip.dest_zone);
        let od = match (o, d) {
            (ZoneLookup::Node(o), ZoneLookup::Node(d)) if o != d => OdPair {
                origin: o.clone(),
                destination: d.clone(),
            },
            _ => {
                if matches!(o, ZoneLookup::Unmapped) || matches!(d, ZoneLookup::Unmapped) {
                    warn!(
                        "trip {trip_id}: zone {} or {} has no clustering entry; treated as urban",
                        trip.origin_zone, trip.dest_zone
                    );
                    report.unmapped_zone_trips += 1;
                }
                report.urban_dropped += 1;
                continue;
            }
        };
        if !trip.zones_consistent {
            report.rejected.push(Rejection {
                trip_id,
                reason: TrajectoryIssue::InconsistentZones,
            });
            continue;
        }
        let step = match config.step {
            Some(s) => s,
            None if trip.points.len() > 1 => trip.points[1].t - trip.points[0].t,
            None => 1.0,
        };
        match Trajectory::from_points(trip_id.clone(), od, step, trip.points, config.a_max) {
            Ok(t) => accepted.push(t),
            Err(reason) => report.rejected.push(Rejection { trip_id, reason }),
        }
    }
    report.accepted = accepted.len();
    let store = TrajectoryStore::from_trajectories(accepted)?;
    Ok(IngestOutcome { store, report })
}

pub fn ingest_path(path: &Path, config: &IngestConfig) -> Result<IngestOutcome> {
    ingest_trajectories(crate::io::open(path)?, config)
}

/// Serialize a store in the ingestion schema (`trip_id,origin_zone,dest_zone,t,v,a`),
/// using node ids as zone ids.
pub fn write_trajectories_csv<W: std::io::Write>(store: &TrajectoryStore, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trip_id", "origin_zone", "dest_zone", "t", "v", "a"])?;
    for traj in store.trips() {
        let (o, d) = (traj.od().origin.as_str(), traj.od().destination.as_str());
        for p in traj.points() {
            w.write_record([
                traj.trip_id().as_str(),
                o,
                d,
                &p.t.to_string(),
                &p.v.to_string(),
                &p.a.unwrap_or(0.0).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn od() -> OdPair {
        OdPair::new("A", "B")
    }

    fn traj(speeds: &[f64]) -> Trajectory {
        Trajectory::from_speeds("T".into(), od(), 1.0, speeds.to_vec(), DEFAULT_A_MAX).unwrap()
    }

    fn clustering() -> ZoneClustering {
        ZoneClustering::from_pairs([
            ("z1", Some("A")),
            ("z2", Some("A")),
            ("z3", Some("B")),
            ("z4", Some("C")),
            ("z9", None::<&str>),
        ])
        .unwrap()
    }

    #[test]
    fn derive_constant_slope() {
        assert_eq!(traj(&[0.0, 2.0, 4.0]).accels(), &[2.0, 2.0, 0.0]);
        assert_eq!(traj(&[10.0, 10.0, 10.0]).accels(), &[0.0, 0.0, 0.0]);
        assert_eq!(traj(&[5.0, 3.0]).accels(), &[-2.0, 0.0]);
    }

    #[test]
    fn derive_respects_step() {
        let t = Trajectory::from_speeds("T".into(), od(), 0.5, vec![0.0, 1.0, 2.0], 10.0).unwrap();
        assert_eq!(t.accels(), &[2.0, 2.0, 0.0]);
    }

    #[test]
    fn single_point_gets_zero_acceleration() {
        assert_eq!(traj(&[7.0]).accels(), &[0.0]);
    }

    #[test]
    fn existing_accelerations_untouched() {
        let mut pts = vec![TrajectoryPoint::new(0.0, 0.0), TrajectoryPoint::new(1.0, 2.0)];
        pts[0].a = Some(1.5);
        fill_accelerations(&mut pts, 1.0);
        assert_eq!(pts[0].a, Some(1.5));
        assert_eq!(pts[1].a, Some(0.0));
    }

    #[test]
    fn distance_examples() {
        let cruise = traj(&vec![26.8224; 3600]);
        assert!((trip_distance(&cruise) - 60.0).abs() < 1e-9);
        assert_eq!(trip_distance(&traj(&[0.0; 5])), 0.0);
        let trap = traj(&[0.0, 10.0, 20.0, 20.0, 10.0, 0.0]);
        assert!((trip_distance(&trap) - 60.0 / METERS_PER_MILE).abs() < 1e-15);
        assert!((trip_distance(&trap) - 0.037282).abs() < 1e-6);
    }

    #[test]
    fn validation_rejects_bad_kinematics() {
        let bad = Trajectory::from_speeds("T".into(), od(), 1.0, vec![0.0, 20.0], 10.0);
        assert!(matches!(bad, Err(TrajectoryIssue::AccelerationBound { index: 0, .. })));
        let neg = Trajectory::from_speeds("T".into(), od(), 1.0, vec![1.0, -1.0], 10.0);
        assert!(matches!(neg, Err(TrajectoryIssue::InvalidSpeed { index: 1, .. })));
        let pts = vec![TrajectoryPoint::new(0.0, 1.0), TrajectoryPoint::new(2.0, 1.0)];
        assert!(matches!(
            Trajectory::from_points("T".into(), od(), 1.0, pts, 10.0),
            Err(TrajectoryIssue::NonUniformStep { .. })
        ));
        assert_eq!(
            Trajectory::from_points("T".into(), od(), 1.0, vec![], 10.0),
            Err(TrajectoryIssue::Empty)
        );
    }

    #[test]
    fn ingest_drops_intra_node_trip() {
        let csv = "trip_id,origin_zone,dest_zone,t,v\n\
                   t1,z1,z2,0,10\nt1,z1,z2,1,10\n\
                   t2,z1,z3,0,10\nt2,z1,z3,1,12\n";
        let out = ingest_trajectories(csv.as_bytes(), &IngestConfig::new(clustering())).unwrap();
        assert_eq!(out.store.len(), 1);
        assert_eq!(out.report.urban_dropped, 1);
        assert!(out.store.get(&"t2".into()).is_some());
    }

    #[test]
    fn ingest_rejects_negative_speed() {
        let csv = "trip_id,origin_zone,dest_zone,t,v\n\
                   bad,z1,z3,0,5\nbad,z1,z3,1,-1\n\
                   ok,z1,z3,0,5\n";
        let out = ingest_trajectories(csv.as_bytes(), &IngestConfig::new(clustering())).unwrap();
        assert_eq!(out.store.len(), 1);
        assert_eq!(out.report.rejected.len(), 1);
        assert_eq!(out.report.rejected[0].trip_id, TripId::from("bad"));
    }

    #[test]
    fn ingest_groups_by_od() {
        let csv = "trip_id,origin_zone,dest_zone,t,v,a,link_id\n\
                   a,z1,z3,0,5,,L1\na,z1,z3,1,5,,L2\n\
                   b,z2,z3,0,7,0.5,\n\
                   c,z3,z4,0,9,,\n";
        let out = ingest_trajectories(csv.as_bytes(), &IngestConfig::new(clustering())).unwrap();
        let counts: Vec<usize> = out.store.groups().values().map(Vec::len).collect();
        assert_eq!(counts, vec![2, 1]);
        assert_eq!(out.store.trip_count(&OdPair::new("A", "B")), 2);
        let b = out.store.get(&"b".into()).unwrap();
        assert_eq!(b.accels(), &[0.5]);
        let a = out.store.get(&"a".into()).unwrap();
        assert_eq!(a.point(1).link_id.as_deref(), Some("L2"));
    }

    #[test]
    fn ingest_unmapped_zone_is_urban() {
        let csv = "trip_id,origin_zone,dest_zone,t,v\nx,z1,nowhere,0,1\ny,z9,z3,0,1\n";
        let out = ingest_trajectories(csv.as_bytes(), &IngestConfig::new(clustering())).unwrap();
        assert!(out.store.is_empty());
        assert_eq!(out.report.urban_dropped, 2);
        assert_eq!(out.report.unmapped_zone_trips, 1);
    }

    #[test]
    fn ingest_reports_malformed_row_number() {
        let csv = "trip_id,origin_zone,dest_zone,t,v\na,z1,z3,0,5\na,z1,z3,1,fast\n";
        let err = ingest_trajectories(csv.as_bytes(), &IngestConfig::new(clustering())).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 3, .. }), "{err}");
    }

    #[test]
    fn ingest_rejects_irregular_step_and_changing_zones() {
        let csv = "trip_id,origin_zone,dest_zone,t,v\n\
                   gap,z1,z3,0,5\ngap,z1,z3,1,5\ngap,z1,z3,3,5\n\
                   hop,z1,z3,0,5\nhop,z1,z4,1,5\n";
        let out = ingest_trajectories(csv.as_bytes(), &IngestConfig::new(clustering())).unwrap();
        assert_eq!(out.report.rejected.len(), 2);
    }

    #[test]
    fn inferred_step() {
        let csv = "trip_id,origin_zone,dest_zone,t,v\nh,z1,z3,0,0\nh,z1,z3,2,4\n";
        let mut cfg = IngestConfig::new(clustering());
        cfg.step = None;
        let out = ingest_trajectories(csv.as_bytes(), &cfg).unwrap();
        let h = out.store.get(&"h".into()).unwrap();
        assert_eq!(h.step(), 2.0);
        assert_eq!(h.accels(), &[2.0, 0.0]);
    }

    #[test]
    fn duplicate_zone_rejected() {
        assert!(ZoneClustering::read_csv("zone_id,node_id\n1,A\n1,B\n".as_bytes()).is_err());
        let z = ZoneClustering::read_csv("zone_id,node_id\n1,A\n2,URBAN\n".as_bytes()).unwrap();
        assert_eq!(z.lookup("2"), ZoneLookup::Urban);
    }

    #[test]
    fn vmt_sums() {
        let per_mile = METERS_PER_MILE;
        let t1 = Trajectory::from_speeds("a".into(), od(), 1.0, vec![per_mile; 10], 1e9).unwrap();
        let t2 = Trajectory::from_speeds("b".into(), od(), 1.0, vec![per_mile; 20], 1e9).unwrap();
        let store = TrajectoryStore::from_trajectories([t1, t2]).unwrap();
        let vmt = store_vmt(&store);
        assert!((vmt.per_od[&od()] - 30.0).abs() < 1e-9);
        assert!((vmt.total - 30.0).abs() < 1e-9);
        assert_eq!(vmt.per_od.len(), 1);
    }

    #[test]
    fn csv_round_trip_through_ingest() {
        let t = traj(&[0.0, 1.0, 3.0, 3.0, 1.0]);
        let store = TrajectoryStore::from_trajectories([t.clone()]).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&store, &mut buf).unwrap();
        let clus = ZoneClustering::from_pairs([("A", Some("A")), ("B", Some("B"))]).unwrap();
        let back = ingest_trajectories(buf.as_slice(), &IngestConfig::new(clus)).unwrap();
        assert_eq!(back.store.get(t.trip_id()).unwrap(), &t);
    }

    proptest! {
        #[test]
        fn distance_additive_under_split(
            speeds in prop::collection::vec(0.0f64..40.0, 2..200),
            cut in 1usize..199,
        ) {
            let t = Trajectory::from_speeds("T".into(), od(), 1.0, speeds.clone(), 1e9).unwrap();
            let k = 1 + cut % (speeds.len() - 1);
            let (a, b) = t.split_at(k);
            let whole = trip_distance(&t);
            prop_assert!((trip_distance(&a) + trip_distance(&b) - whole).abs() <= 1e-12 * whole.max(1.0));
        }

        #[test]
        fn rederive_is_idempotent(speeds in prop::collection::vec(0.0f64..40.0, 1..100)) {
            let t = Trajectory::from_speeds("T".into(), od(), 1.0, speeds, 1e9).unwrap();
            let mut again = t.clone();
            again.rederive_accelerations();
            prop_assert_eq!(&again, &t);
            let mut pts: Vec<TrajectoryPoint> = t.points().collect();
            fill_accelerations(&mut pts, 1.0);
            let rebuilt = Trajectory::from_points("T".into(), od(), 1.0, pts, 1e9).unwrap();
            prop_assert_eq!(rebuilt, t);
        }

        #[test]
        fn ingest_accounting_balances(
            trips in prop::collection::vec((0usize..5, 0usize..5, prop::bool::ANY), 1..30)
        ) {
            let zones = ["z1", "z2", "z3", "z4", "zz"];
            let mut csv = String::from("trip_id,origin_zone,dest_zone,t,v\n");
            for (i, (o, d, bad)) in trips.iter().enumerate() {
                let v = if *bad { -1.0 } else { 3.0 };
                csv += &format!("t{i},{},{},0,3\nt{i},{},{},1,{v}\n", zones[*o], zones[*d], zones[*o], zones[*d]);
            }
            let out = ingest_trajectories(csv.as_bytes(), &IngestConfig::new(clustering())).unwrap();
            let r = &out.report;
            prop_assert_eq!(r.accepted + r.rejected.len() + r.urban_dropped, r.total_trips);
            prop_assert_eq!(r.total_trips, trips.len());
            let grouped: usize = out.store.groups().values().map(Vec::len).sum();
            prop_assert_eq!(grouped, out.store.len());
        }
    }
}
