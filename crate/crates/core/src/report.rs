//! Config-driven orchestration behind the command-line tool.
//!
//! [`prepare`] runs ingestion (or synthesis), fleet loading, vehicle
//! assignment, demand-factor fitting and calibration once; the `run_*`
//! functions turn a prepared [`Pipeline`] into artifacts under the output
//! directory. Every CSV starts with a `# config_digest` line and every file is
//! written atomically.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;

use crate::calendar::{
    estimate_demand_factors, month_profile, read_observations_path, ConvergenceReport, DemandFactors,
    OdStationIncidence, MONTH_LABELS,
};
use crate::config::RunConfig;
use crate::econ::{econ_grid, energy_table, read_tech_scenarios_path, societal_cost, write_econ_csv, write_energy_csv, EconRow, EnergyRow};
use crate::error::{Error, Result};
use crate::fleet::{
    aggregate_epa_rates, assign_vehicle_types, baseline_rate, fleet_weighted_stats, load_fleet, read_epa_path,
    read_fleet_path, FleetLoadReport, FleetStats,
};
use crate::fixtures::{read_monthly_vmt, read_od_demand};
use crate::micro::CoefficientTable;
use crate::pipeline::{EmissionReport, Estimator, EstimatorVariant, TripLedger};
use crate::scenarios::{run_scenario_suite, SavingsGrid, SuiteSpec};
use crate::seed::derive_seed;
use crate::synth::generate_fleet_of_trips;
use crate::trajectory::{
    ingest_trajectories, store_vmt, write_trajectories_csv, IngestConfig, IngestReport, TrajectoryStore, VmtSummary,
    ZoneClustering,
};

pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const FACTORS_FILE: &str = "factors.csv";
pub const CONVERGENCE_FILE: &str = "convergence.json";
pub const EMISSIONS_CSV: &str = "table1_emissions.csv";
pub const EMISSIONS_JSON: &str = "table1_emissions.json";
pub const ENERGY_FILE: &str = "table2_energy.csv";
pub const SAVINGS_FILE: &str = "table3_savings.csv";
pub const ECON_FILE: &str = "table4_economics.csv";
pub const MONTHLY_FIGURE_FILE: &str = "fig6_monthly.csv";
pub const SCENARIO_FIGURE_FILE: &str = "fig7_scenarios.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Trips loaded from a trajectory file or synthesized from OD demand.
pub fn load_store(cfg: &RunConfig) -> Result<(TrajectoryStore, Option<IngestReport>)> {
    if let (Some(t), Some(z)) = (&cfg.inputs.trajectories, &cfg.inputs.zones) {
        let clustering = ZoneClustering::from_path(&cfg.resolve(z))?;
        let mut ingest = IngestConfig::new(clustering);
        ingest.a_max = cfg.emission.a_max;
        let outcome = ingest_trajectories(crate::io::open(&cfg.resolve(t))?, &ingest)?;
        return Ok((outcome.store, Some(outcome.report)));
    }
    let (Some(synth), Some(od)) = (&cfg.synth, &cfg.inputs.od_demand) else {
        return Err(Error::Config("no trajectory source configured".into()));
    };
    let demand = read_od_demand(&cfg.resolve(od))?;
    let store = generate_fleet_of_trips(synth.n_trips, &demand, &synth.template, derive_seed(cfg.seed, "synth", 0))?;
    Ok((store, None))
}

/// Fitted or loaded demand factors and the per-month fit diagnostics.
pub fn load_factors(cfg: &RunConfig) -> Result<(DemandFactors, Vec<ConvergenceReport>)> {
    let i = &cfg.inputs;
    if let (Some(inc), Some(obs)) = (&i.incidence, &i.observations) {
        let incidence = OdStationIncidence::from_path(&cfg.resolve(inc))?;
        let observations = read_observations_path(&cfg.resolve(obs))?;
        let (factors, reports) = estimate_demand_factors(&incidence, &observations, &cfg.ipf)?;
        // non-converged months are logged by the fit itself
        for r in reports.iter().filter(|r| !r.uncovered.is_empty()) {
            warn!(
                "{}: {} OD pairs cross no observed station and use the network ratio",
                MONTH_LABELS[usize::from(r.month) - 1],
                r.uncovered.len()
            );
        }
        return Ok((factors, reports));
    }
    if let Some(p) = &i.demand_factors {
        return Ok((DemandFactors::read_csv(crate::io::open(&cfg.resolve(p))?)?, Vec::new()));
    }
    Ok((DemandFactors::ones(), Vec::new()))
}

/// Everything derived from the inputs before any artifact is written.
#[derive(Debug)]
pub struct Pipeline {
    pub config: RunConfig,
    pub digest: String,
    pub vmt: VmtSummary,
    pub ingest: Option<IngestReport>,
    pub fleet_report: FleetLoadReport,
    pub fleet_stats: FleetStats,
    pub convergence: Vec<ConvergenceReport>,
    pub estimator: Estimator,
}

/// Build the estimator for `cfg`.
pub fn prepare(cfg: &RunConfig) -> Result<Pipeline> {
    cfg.check_inputs()?;
    let digest = cfg.digest()?;
    let (store, ingest) = load_store(cfg)?;
    if store.is_empty() {
        return Err(Error::Validation("no intercity trips survived ingestion".into()));
    }
    info!("{} trips over {} OD pairs", store.len(), store.groups().len());

    let table = CoefficientTable::from_path(&cfg.resolve(&cfg.inputs.coefficients))?;
    let entry = table.entry(cfg.emission.category, cfg.emission.pollutant)?;

    let rates = aggregate_epa_rates(&read_epa_path(&cfg.resolve(&cfg.inputs.epa))?);
    let eb = baseline_rate(&rates, &cfg.fleet.calibration)?;
    let rows = read_fleet_path(&cfg.resolve(&cfg.inputs.fleet))?;
    let (registry, fleet_report) = load_fleet(&rows, &rates, eb, &cfg.fleet.fleet_config())?;
    let fleet_stats = fleet_weighted_stats(&registry);
    info!(
        "{} vehicle types, mean rate {:.1} g/mile, baseline {:.3} g/mile",
        registry.len(),
        fleet_stats.mean_rate,
        eb
    );

    let assignment = assign_vehicle_types(&store, &registry, derive_seed(cfg.seed, "assign", 0));
    let ledger = TripLedger::build(&store, &assignment, &registry, entry)?;
    let (factors, convergence) = load_factors(cfg)?;
    let mut estimator = Estimator::new(ledger, month_profile(&cfg.calendar)?, factors, cfg.emission.params())?;
    if let Some(p) = &cfg.inputs.monthly_vmt {
        estimator.anchor_to_vmt(&read_monthly_vmt(&cfg.resolve(p))?)?;
    }
    if let Some(t) = cfg.emission.micro_target_mt {
        let s = estimator.calibrate_micro_scale(t)?;
        info!("micro scale calibrated to {s:.6}");
    }
    Ok(Pipeline {
        config: cfg.clone(),
        digest,
        vmt: store_vmt(&store),
        ingest,
        fleet_report,
        fleet_stats,
        convergence,
        estimator,
    })
}

fn artifact<F>(out_dir: &Path, name: &str, digest: Option<&str>, fill: F) -> Result<PathBuf>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    if let Some(d) = digest {
        writeln!(buf, "# config_digest: {d}").expect("write to Vec");
    }
    fill(&mut buf)?;
    let path = out_dir.join(name);
    crate::io::write_atomic(&path, &buf)?;
    Ok(path)
}

fn json_artifact<T: Serialize>(out_dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    let path = out_dir.join(name);
    crate::io::write_atomic(&path, &bytes)?;
    Ok(path)
}

/// Write the trip set (ingested or synthesized) as a trajectory CSV.
pub fn run_simulate(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.check_inputs()?;
    let digest = cfg.digest()?;
    let (store, _) = load_store(cfg)?;
    artifact(&cfg.out_dir(), TRAJECTORIES_FILE, Some(&digest), |b| write_trajectories_csv(&store, b))
}

/// Validation result of the configured trajectory source.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationSummary {
    pub config_digest: String,
    pub trips: usize,
    pub od_pairs: usize,
    pub vmt: VmtSummary,
    pub ingest: Option<IngestReport>,
}

impl ValidationSummary {
    pub fn rejected(&self) -> usize {
        self.ingest.as_ref().map_or(0, |r| r.rejected.len())
    }
}

pub fn run_validate(cfg: &RunConfig) -> Result<ValidationSummary> {
    cfg.check_inputs()?;
    let (store, ingest) = load_store(cfg)?;
    Ok(ValidationSummary {
        config_digest: cfg.digest()?,
        trips: store.len(),
        od_pairs: store.groups().len(),
        vmt: store_vmt(&store),
        ingest,
    })
}

/// Write fitted demand factors and per-month convergence diagnostics.
pub fn run_factors(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.check_inputs()?;
    let digest = cfg.digest()?;
    let (factors, reports) = load_factors(cfg)?;
    let out = cfg.out_dir();
    Ok(vec![
        artifact(&out, FACTORS_FILE, Some(&digest), |b| factors.write_csv(b))?,
        json_artifact(
            &out,
            CONVERGENCE_FILE,
            &serde_json::json!({ "config_digest": digest, "months": reports }),
        )?,
    ])
}

impl Pipeline {
    pub fn out_dir(&self) -> PathBuf {
        self.config.out_dir()
    }

    pub fn emission_report(&self) -> EmissionReport {
        self.estimator.report(self.config.seed, Some(self.digest.clone()))
    }

    pub fn annual_vmt(&self) -> f64 {
        self.estimator.monthly_vmt().iter().sum()
    }

    pub fn write_emissions(&self, report: &EmissionReport) -> Result<Vec<PathBuf>> {
        let out = self.out_dir();
        Ok(vec![
            artifact(&out, EMISSIONS_CSV, Some(&self.digest), |b| report.write_csv(b))?,
            json_artifact(&out, EMISSIONS_JSON, report)?,
        ])
    }

    pub fn savings(&self) -> Result<SavingsGrid> {
        run_scenario_suite(&self.estimator, &self.config.scenarios, self.config.seed)
    }

    pub fn write_savings(&self, grid: &SavingsGrid) -> Result<PathBuf> {
        artifact(&self.out_dir(), SAVINGS_FILE, Some(&self.digest), |b| grid.write_csv(b))
    }

    fn tech_path(&self) -> Result<PathBuf> {
        self.config
            .inputs
            .tech_scenarios
            .as_ref()
            .map(|p| self.config.resolve(p))
            .ok_or_else(|| Error::Config("inputs.tech_scenarios is required for energy and economics".into()))
    }

    pub fn energy(&self) -> Result<Vec<EnergyRow>> {
        energy_table(&read_tech_scenarios_path(&self.tech_path()?)?, self.annual_vmt(), &self.config.econ)
    }

    pub fn write_energy(&self, rows: &[EnergyRow]) -> Result<PathBuf> {
        artifact(&self.out_dir(), ENERGY_FILE, Some(&self.digest), |b| write_energy_csv(rows, b))
    }

    /// Economics from the configured scenario and variant, reusing `grid`
    /// when it already holds those cells.
    pub fn econ(&self, grid: Option<&SavingsGrid>) -> Result<Vec<EconRow>> {
        let techs = read_tech_scenarios_path(&self.tech_path()?)?;
        let mut shares: Vec<f64> = techs.iter().map(|t| t.share).collect();
        shares.sort_by(f64::total_cmp);
        shares.dedup();
        let (kind, variant) = (self.config.report.econ_scenario, self.config.report.econ_variant);
        let lookup = |g: &SavingsGrid| -> Option<Vec<(f64, f64)>> {
            shares.iter().map(|s| g.cell(*s, kind, variant).map(|c| (*s, c.mean()))).collect()
        };
        let savings = match grid.and_then(lookup) {
            Some(s) => s,
            None => {
                let spec = SuiteSpec {
                    shares: shares.clone(),
                    scenarios: vec![kind],
                    variants: vec![variant],
                    ..self.config.scenarios.clone()
                };
                let g = run_scenario_suite(&self.estimator, &spec, self.config.seed)?;
                lookup(&g).expect("suite covers every requested cell")
            }
        };
        econ_grid(&techs, &savings, &self.config.econ)
    }

    pub fn write_econ(&self, rows: &[EconRow]) -> Result<PathBuf> {
        artifact(&self.out_dir(), ECON_FILE, Some(&self.digest), |b| write_econ_csv(rows, b))
    }

    /// `month,series,value`: monthly VMT and every estimator column.
    pub fn write_monthly_figure(&self, report: &EmissionReport) -> Result<PathBuf> {
        artifact(&self.out_dir(), MONTHLY_FIGURE_FILE, Some(&self.digest), |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["month", "series", "value"])?;
            for (m, row) in report.months.iter().enumerate() {
                let month = (m + 1).to_string();
                w.write_record([month.as_str(), "vmt_million_miles", &row.vmt_million_miles.to_string()])?;
                for v in EstimatorVariant::ALL {
                    w.write_record([month.as_str(), v.name(), &row.co2_mt[v.index()].to_string()])?;
                }
            }
            w.flush().map_err(|e| Error::io("<csv>", e))
        })
    }

    /// `share,scenario,variant,draw,savings_mt,societal_musd` at the figure share.
    pub fn write_scenario_figure(&self, grid: &SavingsGrid) -> Result<PathBuf> {
        let share = self.config.report.figure_share;
        artifact(&self.out_dir(), SCENARIO_FIGURE_FILE, Some(&self.digest), |b| {
            let mut w = csv::Writer::from_writer(b);
            w.write_record(["share", "scenario", "variant", "draw", "savings_mt", "societal_musd"])?;
            for c in grid.cells.iter().filter(|c| (c.share - share).abs() < 1e-12) {
                for (d, s) in c.draws.iter().enumerate() {
                    w.write_record([
                        c.share.to_string(),
                        c.scenario.name().to_owned(),
                        c.variant.name().to_owned(),
                        d.to_string(),
                        s.to_string(),
                        societal_cost(*s, &self.config.econ).to_string(),
                    ])?;
                }
            }
            w.flush().map_err(|e| Error::io("<csv>", e))
        })
    }
}

/// Top-level record of a full `report` run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub config_digest: String,
    pub trips: usize,
    pub vmt: VmtSummary,
    pub ingest: Option<IngestReport>,
    pub fleet: FleetLoadReport,
    pub fleet_stats: FleetStats,
    pub baseline_rate: f64,
    pub micro_scale: f64,
    pub months_converged: usize,
    pub months_fitted: usize,
    pub annual_mt: BTreeMap<String, f64>,
    pub artifacts: Vec<String>,
}

/// Run every stage and write all artifacts plus `summary.json`.
pub fn run_report(p: &Pipeline) -> Result<Vec<PathBuf>> {
    let report = p.emission_report();
    let mut written = p.write_emissions(&report)?;
    written.push(p.write_monthly_figure(&report)?);
    let grid = p.savings()?;
    written.push(p.write_savings(&grid)?);
    written.push(p.write_scenario_figure(&grid)?);
    if p.config.inputs.tech_scenarios.is_some() {
        written.push(p.write_energy(&p.energy()?)?);
        written.push(p.write_econ(&p.econ(Some(&grid))?)?);
    }
    let summary = RunSummary {
        seed: p.config.seed,
        config_digest: p.digest.clone(),
        trips: p.estimator.ledger().len(),
        vmt: p.vmt.clone(),
        ingest: p.ingest.clone(),
        fleet: p.fleet_report.clone(),
        fleet_stats: p.fleet_stats,
        baseline_rate: p.estimator.ledger().baseline_rate(),
        micro_scale: p.estimator.params().micro_scale,
        months_converged: p.convergence.iter().filter(|r| r.converged).count(),
        months_fitted: p.convergence.len(),
        annual_mt: EstimatorVariant::ALL
            .iter()
            .map(|v| (v.name().to_owned(), report.annual_value(*v)))
            .collect(),
        artifacts: written
            .iter()
            .filter_map(|w| w.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    written.push(json_artifact(&p.out_dir(), SUMMARY_FILE, &summary)?);
    Ok(written)
}
