//! Experiment configuration: TOML schema, default presets and
//! validation.
//!
//! ```toml
//! scenario_id = 1                        # required: 1, 2 or 3
//! schemes = ["JT-NOMA", "JT-OMA"]
//! trials = 50000
//! seed = 1
//! workers = 0                            # 0: one per core
//! interference_mode = "negligible"       # or "full"
//! jt_split = "equal-received"            # or "equal-power"
//! decode_case = "case1"                  # scenario 3 only; omit for both
//! output_path = "fig4.csv"
//!
//! [sweep]                                # metres
//! start = 50.0
//! stop = 400.0
//! step = 50.0
//!
//! [radio]
//! tx_power_dbm = 43.0
//! noise_density_dbm_hz = -139.0
//! bandwidth_hz = 8640000.0
//! pathloss_exponent = 4.0
//! sic_tolerance_db = 20.0
//! sic_reference = "hertz"                # or "band"
//!
//! [placement]                            # metres
//! inter_bs_distance = 1000.0
//! noncomp_radius = 400.0
//! second_user_distance = 300.0
//! noncomp_distance = 250.0
//! comp_coverage = 200.0
//! law = "disc"                           # or "annulus"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, dbm_to_mw, RadioParams, SicReference};
use crate::error::{Error, Result};
use crate::noma::InterferenceMode;
use crate::power::JtSplit;
use crate::scenario::{sweep_range, DecodeCase, Geometry, PlacementLaw, ScenarioId, Scheme};

pub const DEFAULT_TRIALS: usize = 50_000;
pub const DEFAULT_SEED: u64 = 1;

/// Radio parameters in configuration units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub noise_density_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub pathloss_exponent: f64,
    pub sic_tolerance_db: f64,
    pub sic_reference: SicReference,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            tx_power_dbm: 43.0,
            noise_density_dbm_hz: -139.0,
            bandwidth_hz: 8.64e6,
            pathloss_exponent: 4.0,
            sic_tolerance_db: 20.0,
            sic_reference: SicReference::default(),
        }
    }
}

impl RadioConfig {
    pub fn params(&self) -> Result<RadioParams> {
        RadioParams::new(
            dbm_to_mw(self.tx_power_dbm),
            dbm_to_mw(self.noise_density_dbm_hz),
            self.bandwidth_hz,
            self.pathloss_exponent,
            db_to_linear(self.sic_tolerance_db),
        )
        .map(|p| p.with_sic_reference(self.sic_reference))
    }
}

/// Inclusive sweep grid in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SweepRange {
    /// `start + k step` for every k that does not pass `stop`.
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0 && self.stop >= self.start) {
            return vec![];
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| self.start + k as f64 * self.step)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioId,
    pub schemes: Vec<Scheme>,
    pub sweep: SweepRange,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses one per core. Never affects results.
    pub workers: usize,
    pub radio: RadioConfig,
    pub placement: Geometry,
    pub interference_mode: InterferenceMode,
    pub jt_split: JtSplit,
    /// Scenario 3 only; `None` runs both cases.
    pub decode_case: Option<DecodeCase>,
    pub output_path: PathBuf,
}

/// Built-in experiments, one per scenario, at full scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Fig4,
    Fig5,
    Fig6,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Fig4, Preset::Fig5, Preset::Fig6];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Fig4 => "fig4",
            Preset::Fig5 => "fig5",
            Preset::Fig6 => "fig6",
        }
    }

    pub fn config(&self) -> ExperimentConfig {
        let scenario = match self {
            Preset::Fig4 => ScenarioId::One,
            Preset::Fig5 => ScenarioId::Two,
            Preset::Fig6 => ScenarioId::Three,
        };
        ExperimentConfig {
            output_path: PathBuf::from(format!("{}.csv", self.name())),
            ..ExperimentConfig::defaults_for(scenario)
        }
    }
}

impl ExperimentConfig {
    /// Default radio parameters with the scenario's sweep and schemes.
    pub fn defaults_for(scenario: ScenarioId) -> Self {
        let (sweep, schemes) = match scenario {
            ScenarioId::One => (
                SweepRange {
                    start: 50.0,
                    stop: 400.0,
                    step: 50.0,
                },
                vec![Scheme::JtNoma, Scheme::JtOma],
            ),
            ScenarioId::Two => (
                SweepRange {
                    start: 50.0,
                    stop: 300.0,
                    step: 50.0,
                },
                vec![Scheme::JtNoma, Scheme::CsNoma, Scheme::JtOma],
            ),
            ScenarioId::Three => (
                SweepRange {
                    start: 50.0,
                    stop: 300.0,
                    step: 50.0,
                },
                vec![Scheme::JtNoma, Scheme::JtOma],
            ),
        };
        ExperimentConfig {
            scenario,
            schemes,
            sweep,
            trials: DEFAULT_TRIALS,
            seed: DEFAULT_SEED,
            workers: 0,
            radio: RadioConfig::default(),
            placement: Geometry::default(),
            interference_mode: InterferenceMode::Full,
            jt_split: JtSplit::default(),
            decode_case: None,
            output_path: PathBuf::from(format!("scenario{}.csv", scenario as u8)),
        }
    }

    /// Decode cases to evaluate; `[None]` outside scenario 3.
    pub fn cases(&self) -> Vec<Option<DecodeCase>> {
        match (self.scenario, self.decode_case) {
            (ScenarioId::Three, Some(case)) => vec![Some(case)],
            (ScenarioId::Three, None) => vec![Some(DecodeCase::Case1), Some(DecodeCase::Case2)],
            _ => vec![None],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::validation("schemes", "must not be empty"));
        }
        for (i, scheme) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(scheme) {
                return Err(Error::validation(
                    "schemes",
                    format!("{scheme} listed twice"),
                ));
            }
            scheme.check_applicable(self.scenario)?;
        }
        if self.trials == 0 {
            return Err(Error::validation("trials", "must be at least 1"));
        }
        let SweepRange { start, stop, step } = self.sweep;
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::validation(
                "sweep.step",
                format!("must be positive, got {step}"),
            ));
        }
        if !(start.is_finite() && stop.is_finite() && stop >= start) {
            return Err(Error::validation(
                "sweep",
                format!("need start <= stop, got {start}..{stop}"),
            ));
        }
        let g = &self.placement;
        for (name, v) in [
            ("placement.inter_bs_distance", g.inter_bs_distance),
            ("placement.noncomp_radius", g.noncomp_radius),
            ("placement.second_user_distance", g.second_user_distance),
            ("placement.noncomp_distance", g.noncomp_distance),
            ("placement.comp_coverage", g.comp_coverage),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(
                    name,
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if g.noncomp_radius >= g.inter_bs_distance / 2.0 {
            return Err(Error::validation(
                "placement.noncomp_radius",
                "centre discs must not reach the midpoint between base stations",
            ));
        }
        for (name, v) in [
            ("placement.second_user_distance", g.second_user_distance),
            ("placement.noncomp_distance", g.noncomp_distance),
        ] {
            if v > g.noncomp_radius {
                return Err(Error::validation(name, "must lie inside the centre disc"));
            }
        }
        let (lo, hi) = sweep_range(self.scenario, g);
        if !(start > lo && stop <= hi) {
            return Err(Error::validation(
                "sweep",
                format!(
                    "values must lie in ({lo}, {hi}] m for scenario {}",
                    self.scenario as u8
                ),
            ));
        }
        self.radio.params().map_err(|e| match e {
            Error::Validation { field, reason } => {
                Error::validation(format!("radio.{field}"), reason)
            }
            other => other,
        })?;
        if self.decode_case.is_some() && self.scenario != ScenarioId::Three {
            return Err(Error::validation(
                "decode_case",
                "only scenario 3 has decode cases",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepFile {
    start: Option<f64>,
    stop: Option<f64>,
    step: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RadioFile {
    tx_power_dbm: Option<f64>,
    noise_density_dbm_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    pathloss_exponent: Option<f64>,
    sic_tolerance_db: Option<f64>,
    sic_reference: Option<SicReference>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlacementFile {
    inter_bs_distance: Option<f64>,
    noncomp_radius: Option<f64>,
    second_user_distance: Option<f64>,
    noncomp_distance: Option<f64>,
    comp_coverage: Option<f64>,
    law: Option<PlacementLaw>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    scenario_id: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schemes: Option<Vec<String>>,
    trials: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<toml::Value>,
    workers: Option<i64>,
    interference_mode: Option<InterferenceMode>,
    jt_split: Option<JtSplit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decode_case: Option<DecodeCase>,
    output_path: Option<PathBuf>,
    sweep: Option<SweepFile>,
    radio: Option<RadioFile>,
    placement: Option<PlacementFile>,
}

fn non_negative(field: &str, v: i64) -> Result<usize> {
    usize::try_from(v)
        .map_err(|_| Error::validation(field, format!("must be non-negative, got {v}")))
}

fn parse_seed(v: &toml::Value) -> Result<u64> {
    match v {
        toml::Value::Integer(i) => {
            u64::try_from(*i).map_err(|_| Error::validation("seed", "must be non-negative"))
        }
        toml::Value::String(s) => s.trim().parse().map_err(|_| {
            Error::validation("seed", format!("`{s}` is not a 64-bit unsigned integer"))
        }),
        other => Err(Error::validation(
            "seed",
            format!("expected an integer, got {other}"),
        )),
    }
}

/// Parses and validates a TOML config. Keys left out take the
/// defaults of the chosen scenario.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let id = file
        .scenario_id
        .ok_or_else(|| Error::validation("scenario_id", "required"))?;
    let scenario = u8::try_from(id)
        .map_err(|_| Error::validation("scenario_id", format!("must be 1, 2 or 3, got {id}")))
        .and_then(ScenarioId::try_from)?;
    let mut c = ExperimentConfig::defaults_for(scenario);
    if let Some(schemes) = file.schemes {
        c.schemes = schemes.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    }
    if let Some(t) = file.trials {
        c.trials = non_negative("trials", t)?;
    }
    if let Some(s) = &file.seed {
        c.seed = parse_seed(s)?;
    }
    if let Some(w) = file.workers {
        c.workers = non_negative("workers", w)?;
    }
    if let Some(m) = file.interference_mode {
        c.interference_mode = m;
    }
    if let Some(split) = file.jt_split {
        c.jt_split = split;
    }
    c.decode_case = file.decode_case;
    if let Some(p) = file.output_path {
        c.output_path = p;
    }
    if let Some(s) = file.sweep {
        c.sweep.start = s.start.unwrap_or(c.sweep.start);
        c.sweep.stop = s.stop.unwrap_or(c.sweep.stop);
        c.sweep.step = s.step.unwrap_or(c.sweep.step);
    }
    if let Some(r) = file.radio {
        let d = &mut c.radio;
        d.tx_power_dbm = r.tx_power_dbm.unwrap_or(d.tx_power_dbm);
        d.noise_density_dbm_hz = r.noise_density_dbm_hz.unwrap_or(d.noise_density_dbm_hz);
        d.bandwidth_hz = r.bandwidth_hz.unwrap_or(d.bandwidth_hz);
        d.pathloss_exponent = r.pathloss_exponent.unwrap_or(d.pathloss_exponent);
        d.sic_tolerance_db = r.sic_tolerance_db.unwrap_or(d.sic_tolerance_db);
        d.sic_reference = r.sic_reference.unwrap_or(d.sic_reference);
    }
    if let Some(p) = file.placement {
        let g = &mut c.placement;
        g.inter_bs_distance = p.inter_bs_distance.unwrap_or(g.inter_bs_distance);
        g.noncomp_radius = p.noncomp_radius.unwrap_or(g.noncomp_radius);
        g.second_user_distance = p.second_user_distance.unwrap_or(g.second_user_distance);
        g.noncomp_distance = p.noncomp_distance.unwrap_or(g.noncomp_distance);
        g.comp_coverage = p.comp_coverage.unwrap_or(g.comp_coverage);
        g.law = p.law.unwrap_or(g.law);
    }
    c.validate()?;
    Ok(c)
}

pub fn parse_config_file(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Renders a config with every key spelled out.
pub fn emit_config(c: &ExperimentConfig) -> String {
    let seed = match i64::try_from(c.seed) {
        Ok(i) => toml::Value::Integer(i),
        Err(_) => toml::Value::String(c.seed.to_string()),
    };
    let file = ConfigFile {
        scenario_id: Some(c.scenario as i64),
        schemes: Some(c.schemes.iter().map(|s| s.label().to_string()).collect()),
        trials: Some(c.trials as i64),
        seed: Some(seed),
        workers: Some(c.workers as i64),
        interference_mode: Some(c.interference_mode),
        jt_split: Some(c.jt_split),
        decode_case: c.decode_case,
        output_path: Some(c.output_path.clone()),
        sweep: Some(SweepFile {
            start: Some(c.sweep.start),
            stop: Some(c.sweep.stop),
            step: Some(c.sweep.step),
        }),
        radio: Some(RadioFile {
            tx_power_dbm: Some(c.radio.tx_power_dbm),
            noise_density_dbm_hz: Some(c.radio.noise_density_dbm_hz),
            bandwidth_hz: Some(c.radio.bandwidth_hz),
            pathloss_exponent: Some(c.radio.pathloss_exponent),
            sic_tolerance_db: Some(c.radio.sic_tolerance_db),
            sic_reference: Some(c.radio.sic_reference),
        }),
        placement: Some(PlacementFile {
            inter_bs_distance: Some(c.placement.inter_bs_distance),
            noncomp_radius: Some(c.placement.noncomp_radius),
            second_user_distance: Some(c.placement.second_user_distance),
            noncomp_distance: Some(c.placement.noncomp_distance),
            comp_coverage: Some(c.placement.comp_coverage),
            law: Some(c.placement.law),
        }),
    };
    toml::to_string(&file).expect("config fields are all representable in TOML")
}

/// The default experiment (scenario 1 preset) as TOML.
pub fn emit_defaults() -> String {
    emit_config(&Preset::Fig4.config())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_needs_scenario() {
        assert!(
            matches!(parse_config(""), Err(Error::Validation { field, .. }) if field == "scenario_id")
        );
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let c = parse_config("scenario_id = 2").unwrap();
        assert_eq!(c, ExperimentConfig::defaults_for(ScenarioId::Two));
        let p = c.radio.params().unwrap();
        assert!((p.tx_power - 19_952.623_149_688_8).abs() < 1e-6);
        assert_eq!(p.sic_tolerance, 100.0);
        assert_eq!(p.sic_reference, SicReference::Hertz);
        assert_eq!(c.trials, 50_000);
        assert_eq!(c.placement.inter_bs_distance, 1000.0);
        assert_eq!(c.placement.noncomp_radius, 400.0);
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(matches!(
            parse_config("scenario_id = 1\ntrials = 0"),
            Err(Error::Validation { field, .. }) if field == "trials"
        ));
    }

    #[test]
    fn cb_rejected_with_rationale() {
        let err = parse_config("scenario_id = 1\nschemes = [\"CB\"]").unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("CB-CoMP")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_config("scenario_id = 1\ntrails = 5").unwrap_err();
        assert!(
            matches!(&err, Error::Parse(m) if m.contains("trails")),
            "{err}"
        );
        let err = parse_config("scenario_id = 1\n[radio]\npower = 3").unwrap_err();
        assert!(
            matches!(&err, Error::Parse(m) if m.contains("power")),
            "{err}"
        );
    }

    #[test]
    fn parse_errors_carry_location() {
        let err = parse_config("scenario_id = 1\ntrials = \"many\"").unwrap_err();
        assert!(
            matches!(&err, Error::Parse(m) if m.contains("line 2")),
            "{err}"
        );
    }

    #[test]
    fn defaults_round_trip() {
        assert_eq!(
            parse_config(&emit_defaults()).unwrap(),
            Preset::Fig4.config()
        );
        for preset in Preset::ALL {
            let mut c = preset.config();
            c.seed = u64::MAX;
            assert_eq!(parse_config(&emit_config(&c)).unwrap(), c);
        }
    }

    #[test]
    fn validation_names_fields() {
        let field_of = |text: &str| match parse_config(text) {
            Err(Error::Validation { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field_of("scenario_id = 4"), "scenario_id");
        assert_eq!(
            field_of("scenario_id = 1\n[sweep]\nstep = 0.0"),
            "sweep.step"
        );
        assert_eq!(field_of("scenario_id = 1\n[sweep]\nstop = 450.0"), "sweep");
        assert_eq!(
            field_of("scenario_id = 1\ndecode_case = \"case1\""),
            "decode_case"
        );
        assert_eq!(field_of("scenario_id = 1\nschemes = []"), "schemes");
        assert_eq!(
            field_of("scenario_id = 1\n[radio]\nbandwidth_hz = -1.0"),
            "radio.bandwidth"
        );
        assert_eq!(field_of("scenario_id = 1\nseed = -3"), "seed");
    }

    #[test]
    fn cs_outside_scenario_two_is_config_error() {
        assert!(matches!(
            parse_config("scenario_id = 1\nschemes = [\"CS-NOMA\"]"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn sweep_grid_is_inclusive() {
        let s = SweepRange {
            start: 50.0,
            stop: 400.0,
            step: 50.0,
        };
        assert_eq!(
            s.values(),
            vec![50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0]
        );
        let s = SweepRange {
            start: 0.1,
            stop: 0.3,
            step: 0.1,
        };
        assert_eq!(s.values().len(), 3);
    }
}
