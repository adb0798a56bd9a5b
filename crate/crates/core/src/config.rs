//! Run configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config file.
//! Command-line flags override file values, which override defaults.
//!
//! ```toml
//! seed = 2030
//! out_dir = "out"
//!
//! [inputs]
//! od_demand = "od_demand.csv"        # or: trajectories + zones
//! coefficients = "../coefficients.csv"
//! fleet = "fleet.csv"
//! epa = "epa.csv"
//! incidence = "incidence.csv"        # optional, with observations
//! observations = "observations.csv"
//! tech_scenarios = "tech_scenarios.csv"
//! monthly_vmt = "table1_vmt.csv"     # optional VMT anchor
//!
//! [synth]
//! n_trips = 6000
//!
//! [fleet]
//! calibration = [{ make = "Toyota", model = "Corolla", model_year = 2005 }]
//!
//! [emission]
//! gamma = 368.0
//! micro_target_mt = 8.32             # optional
//! ```

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::{CalendarConfig, IpfOptions};
use crate::econ::EconConfig;
use crate::error::{Error, Result};
use crate::fleet::{FleetConfig, VehicleKey};
use crate::micro::{Pollutant, VehicleCategory};
use crate::pipeline::{EmissionParams, EstimatorVariant};
use crate::scenarios::{ScenarioKind, SuiteSpec};
use crate::synth::TripTemplate;
use crate::trajectory::DEFAULT_A_MAX;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub od_demand: Option<PathBuf>,
    pub coefficients: PathBuf,
    pub fleet: PathBuf,
    pub epa: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incidence: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<PathBuf>,
    /// Precomputed `od_id,month,phi`; used when no incidence is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_factors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tech_scenarios: Option<PathBuf>,
    /// `month,vmt_million_miles`; demand factors are rescaled to match it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monthly_vmt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_trips: usize,
    pub template: TripTemplate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_trips: 1000,
            template: TripTemplate::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSection {
    pub analysis_year: i32,
    pub min_model_year: i32,
    pub max_model_year: i32,
    /// Vehicles whose mean EPA rate defines the micro model's baseline.
    pub calibration: Vec<VehicleKey>,
}

impl Default for FleetSection {
    fn default() -> Self {
        let f = FleetConfig::default();
        Self {
            analysis_year: f.analysis_year,
            min_model_year: f.min_model_year,
            max_model_year: f.max_model_year,
            calibration: Vec::new(),
        }
    }
}

impl FleetSection {
    pub fn fleet_config(&self) -> FleetConfig {
        FleetConfig {
            analysis_year: self.analysis_year,
            min_model_year: self.min_model_year,
            max_model_year: self.max_model_year,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmissionSection {
    pub gamma: f64,
    pub category: VehicleCategory,
    pub pollutant: Pollutant,
    pub micro_scale: f64,
    /// Calibrate `micro_scale` so the unadjusted micro annual total hits this.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub micro_target_mt: Option<f64>,
    pub trip_expansion: f64,
    pub a_max: f64,
}

impl Default for EmissionSection {
    fn default() -> Self {
        let p = EmissionParams::default();
        Self {
            gamma: p.gamma,
            category: VehicleCategory::PetrolCar,
            pollutant: Pollutant::Co2,
            micro_scale: p.micro_scale,
            micro_target_mt: None,
            trip_expansion: p.trip_expansion,
            a_max: DEFAULT_A_MAX,
        }
    }
}

impl EmissionSection {
    pub fn params(&self) -> EmissionParams {
        EmissionParams {
            gamma: self.gamma,
            micro_scale: self.micro_scale,
            trip_expansion: self.trip_expansion,
        }
    }
}

/// Which scenario cells feed the economics table and the scenario figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub econ_scenario: ScenarioKind,
    pub econ_variant: EstimatorVariant,
    pub figure_share: f64,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            econ_scenario: ScenarioKind::OldRandom,
            econ_variant: EstimatorVariant::ADJUSTED_MICRO,
            figure_share: 0.06,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub inputs: InputPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub fleet: FleetSection,
    #[serde(default)]
    pub emission: EmissionSection,
    #[serde(default)]
    pub calendar: CalendarConfig,
    #[serde(default)]
    pub ipf: IpfOptions,
    #[serde(default)]
    pub scenarios: SuiteSpec,
    #[serde(default)]
    pub econ: EconConfig,
    #[serde(default)]
    pub report: ReportSection,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub shares: Option<Vec<f64>>,
    pub scenarios: Option<Vec<ScenarioKind>>,
    pub variants: Option<Vec<EstimatorVariant>>,
    pub n_draws: Option<usize>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut text = String::new();
        crate::io::open(path)?
            .read_to_string(&mut text)
            .map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.inputs.trajectories, &self.inputs.zones, &self.synth) {
            (Some(_), Some(_), _) => {}
            (Some(_), None, _) => return Err(Error::Config("inputs.trajectories requires inputs.zones".into())),
            (None, _, Some(_)) if self.inputs.od_demand.is_some() => {}
            (None, _, _) => {
                return Err(Error::Config(
                    "either inputs.trajectories or a [synth] section with inputs.od_demand is required".into(),
                ))
            }
        }
        if self.inputs.incidence.is_some() != self.inputs.observations.is_some() {
            return Err(Error::Config(
                "inputs.incidence and inputs.observations must be given together".into(),
            ));
        }
        if self.fleet.calibration.is_empty() {
            return Err(Error::Config("fleet.calibration lists no vehicles".into()));
        }
        self.emission.params().validate()?;
        if let Some(t) = self.emission.micro_target_mt {
            if !(t > 0.0) {
                return Err(Error::Config(format!("emission.micro_target_mt must be > 0, got {t}")));
            }
        }
        self.scenarios.validate()?;
        self.econ.validate()?;
        if !(self.report.figure_share > 0.0 && self.report.figure_share <= 1.0) {
            return Err(Error::Config("report.figure_share must be in (0, 1]".into()));
        }
        crate::calendar::month_profile(&self.calendar)?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            // relative to the working directory, not the config file
            self.out_dir = std::env::current_dir()
                .map_err(|e| Error::io(".", e))?
                .join(d);
        }
        if let Some(s) = &o.shares {
            self.scenarios.shares = s.clone();
        }
        if let Some(s) = &o.scenarios {
            self.scenarios.scenarios = s.clone();
        }
        if let Some(v) = &o.variants {
            self.scenarios.variants = v.clone();
        }
        if let Some(n) = o.n_draws {
            self.scenarios.n_draws = n;
        }
        self.validate()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    /// Every configured input as `(name, resolved path)`, in a fixed order.
    pub fn input_files(&self) -> Vec<(&'static str, PathBuf)> {
        let i = &self.inputs;
        let entries: [(&'static str, Option<&PathBuf>); 11] = [
            ("trajectories", i.trajectories.as_ref()),
            ("zones", i.zones.as_ref()),
            ("od_demand", i.od_demand.as_ref()),
            ("coefficients", Some(&i.coefficients)),
            ("fleet", Some(&i.fleet)),
            ("epa", Some(&i.epa)),
            ("incidence", i.incidence.as_ref()),
            ("observations", i.observations.as_ref()),
            ("demand_factors", i.demand_factors.as_ref()),
            ("tech_scenarios", i.tech_scenarios.as_ref()),
            ("monthly_vmt", i.monthly_vmt.as_ref()),
        ];
        entries
            .into_iter()
            .filter_map(|(n, p)| p.map(|p| (n, self.resolve(p))))
            .collect()
    }

    /// Fail with [`Error::MissingInput`] on the first absent input file.
    pub fn check_inputs(&self) -> Result<()> {
        for (_, p) in self.input_files() {
            if !p.is_file() {
                return Err(Error::MissingInput(p));
            }
        }
        Ok(())
    }

    /// SHA-256 over the effective configuration and the bytes of every input.
    /// The output directory does not enter the digest.
    pub fn digest(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let mut h = Sha256::new();
        h.update(canonical.to_toml_string()?.as_bytes());
        for (name, p) in self.input_files() {
            let bytes = std::fs::read(&p).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => Error::MissingInput(p.clone()),
                _ => Error::io(&p, e),
            })?;
            h.update(name.as_bytes());
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(hex::encode(h.finalize()))
    }
}
