//! EV energy demand, fast-charger share and benefit/cost of CO2 savings.
//!
//! Units: VMT in million miles; energy in "BWh", which here means 1e9 Wh
//! (= GWh), so `million miles / (miles/kWh) = million kWh = BWh`. Station
//! energy is MWh/day, annualized over 365 days. Money is million dollars.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{column_indices, csv_reader, parse_f64};

pub const DAYS_PER_YEAR: f64 = 365.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tech {
    Low,
    Mixed,
    High,
}

impl Tech {
    pub const ALL: [Tech; 3] = [Tech::Low, Tech::Mixed, Tech::High];

    pub fn label(self) -> &'static str {
        match self {
            Tech::Low => "Low-Tech",
            Tech::Mixed => "Mixed-Tech",
            Tech::High => "High-Tech",
        }
    }
}

impl fmt::Display for Tech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Tech {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_end_matches("-tech").trim_end_matches("_tech") {
            "low" => Ok(Tech::Low),
            "mixed" => Ok(Tech::Mixed),
            "high" => Ok(Tech::High),
            _ => Err(Error::invalid(format!("unknown technology scenario `{s}`"))),
        }
    }
}

impl Serialize for Tech {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.label())
    }
}

/// Charging network sized for one market share and technology level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TechScenario {
    /// Fraction, e.g. 0.06.
    pub share: f64,
    pub tech: Tech,
    pub n_stations: u32,
    pub n_chargers: u32,
    /// Investment over the infrastructure lifetime, million $.
    pub infra_cost: f64,
    /// MWh/day delivered by the stations.
    pub station_daily_mwh: f64,
}

/// Read `share,tech,n_stations,n_chargers,infra_cost_musd,daily_station_mwh`.
pub fn read_tech_scenarios_csv<R: Read>(rdr: R) -> Result<Vec<TechScenario>> {
    let mut r = csv_reader(rdr);
    let idx = column_indices(
        r.headers()?,
        &["share", "tech", "n_stations", "n_chargers", "infra_cost_musd", "daily_station_mwh"],
    )?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::MalformedRow { row, message };
        let count = |col: usize, name: &str| {
            rec[idx[col]]
                .parse::<u32>()
                .map_err(|_| bad(format!("{name} `{}` is not a count", &rec[idx[col]])))
        };
        let t = TechScenario {
            share: parse_f64(&rec[idx[0]], "share", row)?,
            tech: rec[idx[1]].parse().map_err(|e: Error| bad(e.to_string()))?,
            n_stations: count(2, "n_stations")?,
            n_chargers: count(3, "n_chargers")?,
            infra_cost: parse_f64(&rec[idx[4]], "infra_cost_musd", row)?,
            station_daily_mwh: parse_f64(&rec[idx[5]], "daily_station_mwh", row)?,
        };
        if !(t.share > 0.0 && t.share <= 1.0) || t.infra_cost < 0.0 || t.station_daily_mwh < 0.0 {
            return Err(bad("share must be in (0, 1]; cost and energy must be >= 0".into()));
        }
        out.push(t);
    }
    Ok(out)
}

pub fn read_tech_scenarios_path(path: &Path) -> Result<Vec<TechScenario>> {
    read_tech_scenarios_csv(crate::io::open(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconConfig {
    /// miles/kWh
    pub battery_perf: f64,
    /// $/ton CO2
    pub co2_cost: f64,
    /// years
    pub infra_lifetime: f64,
    /// Annual discount rate for the infrastructure annuity.
    pub inflation: f64,
}

impl Default for EconConfig {
    fn default() -> Self {
        Self {
            battery_perf: 3.5,
            co2_cost: 50.0,
            infra_lifetime: 10.0,
            inflation: 0.0,
        }
    }
}

impl EconConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("battery_perf", self.battery_perf),
            ("co2_cost", self.co2_cost),
            ("infra_lifetime", self.infra_lifetime),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.inflation.is_finite() && self.inflation >= 0.0) {
            return Err(Error::Config(format!("inflation must be >= 0, got {}", self.inflation)));
        }
        Ok(())
    }
}

/// Annual EV energy, BWh.
pub fn total_energy_demand(annual_vmt_million_miles: f64, share: f64, cfg: &EconConfig) -> f64 {
    annual_vmt_million_miles * share / cfg.battery_perf
}

/// Annual station energy, BWh, from MWh/day.
pub fn annual_station_energy(daily_mwh: f64) -> f64 {
    daily_mwh * DAYS_PER_YEAR / 1000.0
}

/// Percent of the total EV energy delivered by the stations.
pub fn charger_share(daily_mwh: f64, total_bwh: f64) -> Result<f64> {
    if !(total_bwh > 0.0) {
        return Err(Error::invalid(format!("total energy demand must be > 0, got {total_bwh}")));
    }
    Ok(100.0 * annual_station_energy(daily_mwh) / total_bwh)
}

/// Million $/year for `savings_mt` million tons at `co2_cost` $/ton.
pub fn societal_cost(savings_mt: f64, cfg: &EconConfig) -> f64 {
    savings_mt * cfg.co2_cost
}

/// Capital recovery factor; straight-line `1/n` at zero rate.
pub fn capital_recovery_factor(rate: f64, years: f64) -> f64 {
    if rate == 0.0 {
        1.0 / years
    } else {
        rate / (1.0 - (1.0 + rate).powf(-years))
    }
}

pub fn annual_infra_cost(infra_cost: f64, cfg: &EconConfig) -> f64 {
    infra_cost * capital_recovery_factor(cfg.inflation, cfg.infra_lifetime)
}

pub fn benefit_cost(annual_societal: f64, tech: &TechScenario, cfg: &EconConfig) -> Result<f64> {
    if !(tech.infra_cost > 0.0) {
        return Err(Error::invalid(format!(
            "{} at share {} has no infrastructure cost",
            tech.tech, tech.share
        )));
    }
    Ok(annual_societal / annual_infra_cost(tech.infra_cost, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRow {
    pub scenario: TechScenario,
    pub annual_station_bwh: f64,
    pub total_bwh: f64,
    pub charger_pct: f64,
}

pub fn energy_table(techs: &[TechScenario], annual_vmt: f64, cfg: &EconConfig) -> Result<Vec<EnergyRow>> {
    cfg.validate()?;
    techs
        .iter()
        .map(|t| {
            let total = total_energy_demand(annual_vmt, t.share, cfg);
            Ok(EnergyRow {
                scenario: t.clone(),
                annual_station_bwh: annual_station_energy(t.station_daily_mwh),
                total_bwh: total,
                charger_pct: charger_share(t.station_daily_mwh, total)?,
            })
        })
        .collect()
}

pub fn write_energy_csv<W: Write>(rows: &[EnergyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "share",
        "tech",
        "n_stations",
        "n_chargers",
        "infra_cost_musd",
        "daily_station_mwh",
        "annual_station_bwh",
        "total_bwh",
        "charger_pct",
    ])?;
    for r in rows {
        let s = &r.scenario;
        w.write_record([
            s.share.to_string(),
            s.tech.label().to_owned(),
            s.n_stations.to_string(),
            s.n_chargers.to_string(),
            s.infra_cost.to_string(),
            s.station_daily_mwh.to_string(),
            r.annual_station_bwh.to_string(),
            r.total_bwh.to_string(),
            r.charger_pct.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EconRow {
    pub share: f64,
    pub tech: Tech,
    pub savings_mt: f64,
    pub annual_societal: f64,
    pub annual_infra: f64,
    pub bc_ratio: f64,
}

/// Benefit/cost grid. `savings` maps each share to annual Mt saved; tech rows
/// whose share has no savings entry are an error.
pub fn econ_grid(techs: &[TechScenario], savings: &[(f64, f64)], cfg: &EconConfig) -> Result<Vec<EconRow>> {
    cfg.validate()?;
    techs
        .iter()
        .map(|t| {
            let mt = savings
                .iter()
                .find(|(s, _)| (s - t.share).abs() < 1e-9)
                .map(|(_, m)| *m)
                .ok_or_else(|| Error::invalid(format!("no savings for market share {}", t.share)))?;
            let societal = societal_cost(mt, cfg);
            Ok(EconRow {
                share: t.share,
                tech: t.tech,
                savings_mt: mt,
                annual_societal: societal,
                annual_infra: annual_infra_cost(t.infra_cost, cfg),
                bc_ratio: benefit_cost(societal, t, cfg)?,
            })
        })
        .collect()
}

/// `share,tech,annual_societal_m$,annual_infra_m$,bc_ratio`.
pub fn write_econ_csv<W: Write>(rows: &[EconRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["share", "tech", "annual_societal_m$", "annual_infra_m$", "bc_ratio"])?;
    for r in rows {
        w.write_record([
            r.share.to_string(),
            r.tech.label().to_owned(),
            r.annual_societal.to_string(),
            r.annual_infra.to_string(),
            r.bc_ratio.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tech(share: f64, tech: Tech, cost: f64, daily: f64) -> TechScenario {
        TechScenario {
            share,
            tech,
            n_stations: 1,
            n_chargers: 1,
            infra_cost: cost,
            station_daily_mwh: daily,
        }
    }

    #[test]
    fn energy_examples() {
        let c = EconConfig::default();
        assert!((total_energy_demand(34_490.0, 0.06, &c) - 591.257).abs() < 1e-3);
        assert!((total_energy_demand(34_490.0, 0.10, &c) - 985.43).abs() < 1e-2);
        assert_eq!(total_energy_demand(34_490.0, 0.0, &c), 0.0);
    }

    #[test]
    fn charger_share_examples() {
        assert!((annual_station_energy(61.51) - 22.451).abs() < 1e-3);
        assert!((charger_share(61.51, 591.24).unwrap() - 3.80).abs() < 0.005);
        assert!((annual_station_energy(140.04) - 51.115).abs() < 1e-3);
        assert!((charger_share(140.04, 591.24).unwrap() - 8.65).abs() < 0.005);
        assert_eq!(charger_share(0.0, 591.24).unwrap(), 0.0);
        assert!(charger_share(1.0, 0.0).is_err());
    }

    #[test]
    fn societal_and_ratio_examples() {
        let c = EconConfig::default();
        assert!((societal_cost(0.7158, &c) - 35.79).abs() < 1e-9);
        assert_eq!(societal_cost(0.0, &c), 0.0);
        assert_eq!(societal_cost(1.0, &c), 50.0);
        let r = benefit_cost(35.79, &tech(0.06, Tech::High, 11.82, 61.51), &c).unwrap();
        assert!((r - 30.28).abs() < 0.2);
        let r = benefit_cost(17.85, &tech(0.03, Tech::Low, 14.30, 69.73), &c).unwrap();
        assert!((r - 12.48).abs() < 0.01);
        assert_eq!(benefit_cost(1.0, &tech(0.03, Tech::Low, 10.0, 0.0), &c).unwrap(), 1.0);
        assert!(benefit_cost(1.0, &tech(0.03, Tech::Low, 0.0, 0.0), &c).is_err());
    }

    #[test]
    fn discounting() {
        assert_eq!(capital_recovery_factor(0.0, 10.0), 0.1);
        // 5%, 10 years
        assert!((capital_recovery_factor(0.05, 10.0) - 0.129_504_574_6).abs() < 1e-9);
    }

    #[test]
    fn csv_parsing() {
        let text = "share,tech,n_stations,n_chargers,infra_cost_musd,daily_station_mwh\n0.06,High-Tech,21,101,11.82,61.51\n";
        let t = read_tech_scenarios_csv(text.as_bytes()).unwrap();
        assert_eq!(t[0].tech, Tech::High);
        assert_eq!(t[0].n_chargers, 101);
        let bad = "share,tech,n_stations,n_chargers,infra_cost_musd,daily_station_mwh\n0.06,Ultra,21,101,11.82,61.51\n";
        assert!(read_tech_scenarios_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn grid_requires_savings_for_each_share() {
        let techs = [tech(0.03, Tech::Low, 14.3, 69.73), tech(0.06, Tech::High, 11.82, 61.51)];
        let c = EconConfig::default();
        assert!(econ_grid(&techs, &[(0.03, 0.357)], &c).is_err());
        let g = econ_grid(&techs, &[(0.03, 0.357), (0.06, 0.7158)], &c).unwrap();
        assert_eq!(g.len(), 2);
        let mut buf = Vec::new();
        write_econ_csv(&g, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("share,tech,annual_societal_m$"));
    }

    proptest! {
        #[test]
        fn energy_is_linear(vmt in 1.0f64..1e5, share in 0.001f64..1.0, perf in 1.0f64..6.0, k in 0.1f64..10.0) {
            let c = EconConfig { battery_perf: perf, ..Default::default() };
            let e = total_energy_demand(vmt, share, &c);
            prop_assert!((total_energy_demand(vmt * k, share, &c) - k * e).abs() <= 1e-9 * k * e);
            prop_assert!((total_energy_demand(vmt, share * k.min(1.0 / share), &c) - k.min(1.0 / share) * e).abs() <= 1e-9 * e.max(1.0));
            let c2 = EconConfig { battery_perf: perf * k, ..Default::default() };
            prop_assert!((total_energy_demand(vmt, share, &c2) - e / k).abs() <= 1e-9 * e);
        }

        #[test]
        fn charger_share_scale_invariant(daily in 0.0f64..500.0, total in 1.0f64..2000.0, k in 0.01f64..100.0) {
            let a = charger_share(daily, total).unwrap();
            let b = charger_share(daily * k, total * k).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }

        #[test]
        fn ratio_falls_with_cost(societal in 0.1f64..100.0, cost in 1.0f64..50.0, cut in 0.01f64..0.99) {
            let c = EconConfig::default();
            let hi = benefit_cost(societal, &tech(0.06, Tech::Low, cost, 0.0), &c).unwrap();
            let lo = benefit_cost(societal, &tech(0.06, Tech::Low, cost * cut, 0.0), &c).unwrap();
            prop_assert!(lo > hi);
        }
    }
}
