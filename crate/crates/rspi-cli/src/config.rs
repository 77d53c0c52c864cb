//! Experiment configuration: a JSON document with a top-level `experiment`
//! discriminator, strict about unknown keys, validated against the
//! noise-cost compatibility condition at load time.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use nalgebra::DMatrix;
use rspi_core::{check_noise_cost_compatibility, EndCost, Region, RiskParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config error: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    LeqgSweep,
    ValidateMc,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::Fig1 => "fig1",
            ExperimentKind::Fig2 => "fig2",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Fig4 => "fig4",
            ExperimentKind::LeqgSweep => "leqg-sweep",
            ExperimentKind::ValidateMc => "validate-mc",
        }
    }
}

/// One risk-sensitivity entry: exactly one of `theta`, `lambda_theta` or
/// `special: true`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskEntry {
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub lambda_theta: Option<f64>,
    #[serde(default)]
    pub special: Option<bool>,
}

impl RiskEntry {
    pub fn theta(theta: f64) -> Self {
        RiskEntry {
            theta: Some(theta),
            lambda_theta: None,
            special: None,
        }
    }

    pub fn lambda_theta(lambda_theta: f64) -> Self {
        RiskEntry {
            theta: None,
            lambda_theta: Some(lambda_theta),
            special: None,
        }
    }

    pub fn special() -> Self {
        RiskEntry {
            theta: None,
            lambda_theta: None,
            special: Some(true),
        }
    }

    pub fn resolve(&self, lambda0: f64) -> Result<ResolvedRisk, ConfigError> {
        let set = usize::from(self.theta.is_some())
            + usize::from(self.lambda_theta.is_some())
            + usize::from(self.special == Some(true));
        if set != 1 {
            return Err(invalid(
                "risk entry must set exactly one of \"theta\", \"lambda_theta\", \"special\": true",
            ));
        }
        let params = if let Some(theta) = self.theta {
            RiskParams::new(lambda0, theta)
        } else if let Some(lt) = self.lambda_theta {
            RiskParams::from_lambda_theta(lambda0, lt)
        } else {
            RiskParams::special(lambda0)
        }
        .map_err(|e| invalid(e.to_string()))?;
        let lambda_label = params.finite_lambda_theta().unwrap_or(f64::INFINITY);
        Ok(ResolvedRisk {
            params,
            lambda_label,
        })
    }
}

/// A risk entry resolved against the ambient `lambda0`.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedRisk {
    pub params: RiskParams,
    /// `lambda_theta`, or `inf` in the special regime (the CSV label).
    pub lambda_label: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lower: f64,
    pub upper: f64,
    pub cost: f64,
}

impl RegionConfig {
    fn to_region(self) -> Result<Region, ConfigError> {
        Region::new(self.lower, self.upper, self.cost).map_err(|e| invalid(e.to_string()))
    }
}

fn regions_from(configs: &[RegionConfig]) -> Result<EndCost, ConfigError> {
    let regions = configs
        .iter()
        .map(|r| r.to_region())
        .collect::<Result<Vec<_>, _>>()?;
    EndCost::targets_threats(regions).map_err(|e| invalid(e.to_string()))
}

fn check_compatibility(sigma: f64, control_penalty: f64, lambda0: f64) -> Result<(), ConfigError> {
    let s = DMatrix::from_element(1, 1, sigma);
    let r = DMatrix::from_element(1, 1, control_penalty);
    if !check_noise_cost_compatibility(&s, &r, lambda0) {
        return Err(invalid(format!(
            "noise-cost compatibility violated: sigma^2 = {} but lambda0 / R^2 = {}",
            sigma * sigma,
            lambda0 / (control_penalty * control_penalty)
        )));
    }
    Ok(())
}

fn uniform_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, ConfigError> {
    if !(min < max) || !(step > 0.0) {
        return Err(invalid(format!(
            "grid requires min < max and step > 0, got [{min}, {max}] step {step}"
        )));
    }
    let n = ((max - min) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| min + i as f64 * step).collect())
}

fn d_one() -> f64 {
    1.0
}

fn d_dt() -> f64 {
    1e-3
}

fn d_seed() -> u64 {
    42
}

// --- fig1 / fig2 / fig3 ------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigCurvesConfig {
    #[serde(default = "d_one")]
    pub sigma: f64,
    #[serde(default = "d_one")]
    pub control_penalty: f64,
    #[serde(default = "d_one")]
    pub lambda0: f64,
    #[serde(default = "d_one")]
    pub horizon: f64,
    /// Evaluation times; defaults to `[0]` for fig1 and `[0, 0.5]` for
    /// fig2/fig3.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// Risk entries; default per figure caption.
    #[serde(default)]
    pub lambdas: Option<Vec<RiskEntry>>,
    /// Explicit regions override the per-figure defaults.
    #[serde(default)]
    pub regions: Option<Vec<RegionConfig>>,
    /// Region width when the default layout is used.
    #[serde(default)]
    pub region_width: Option<f64>,
    /// Region cost level when the default layout is used.
    #[serde(default)]
    pub cost: Option<f64>,
    #[serde(default = "FigCurvesConfig::d_x_min")]
    pub x_min: f64,
    #[serde(default = "FigCurvesConfig::d_x_max")]
    pub x_max: f64,
    #[serde(default = "FigCurvesConfig::d_x_step")]
    pub x_step: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl FigCurvesConfig {
    fn d_x_min() -> f64 {
        -3.0
    }
    fn d_x_max() -> f64 {
        3.0
    }
    fn d_x_step() -> f64 {
        0.01
    }
}

#[derive(Debug, Clone)]
pub struct FigCurvesPlan {
    pub kind: ExperimentKind,
    pub sigma: f64,
    pub control_penalty: f64,
    pub lambda0: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub entries: Vec<ResolvedRisk>,
    pub end_cost: EndCost,
    pub xs: Vec<f64>,
    pub out: PathBuf,
    /// Region parameters were artifact defaults rather than user input.
    pub default_layout: bool,
}

fn resolve_fig_curves(
    kind: ExperimentKind,
    cfg: FigCurvesConfig,
    out_override: Option<PathBuf>,
) -> Result<FigCurvesPlan, ConfigError> {
    check_compatibility(cfg.sigma, cfg.control_penalty, cfg.lambda0)?;
    let third = 1.0 / 3.0;
    let default_lambdas = match kind {
        ExperimentKind::Fig1 => vec![
            RiskEntry::lambda_theta(-third),
            RiskEntry::lambda_theta(-0.5),
            RiskEntry::lambda_theta(-1.0),
            RiskEntry::special(),
            RiskEntry::lambda_theta(1.0),
            RiskEntry::lambda_theta(0.5),
            RiskEntry::lambda_theta(third),
        ],
        _ => vec![
            RiskEntry::lambda_theta(-0.5),
            RiskEntry::special(),
            RiskEntry::lambda_theta(1.0),
            RiskEntry::lambda_theta(0.5),
        ],
    };
    let entries = cfg
        .lambdas
        .clone()
        .unwrap_or(default_lambdas)
        .iter()
        .map(|e| e.resolve(cfg.lambda0))
        .collect::<Result<Vec<_>, _>>()?;
    if entries.is_empty() {
        return Err(invalid("at least one risk entry required"));
    }

    let default_layout = cfg.regions.is_none();
    let end_cost = match &cfg.regions {
        Some(regions) => regions_from(regions)?,
        None => {
            let (width, cost, centers): (f64, f64, &[f64]) = match kind {
                ExperimentKind::Fig1 => (cfg.region_width.unwrap_or(0.1), cfg.cost.unwrap_or(-10.0), &[0.0]),
                ExperimentKind::Fig2 => (
                    cfg.region_width.unwrap_or(0.02),
                    cfg.cost.unwrap_or(-10.0),
                    &[-1.0, 1.0],
                ),
                ExperimentKind::Fig3 => (
                    cfg.region_width.unwrap_or(0.02),
                    cfg.cost.unwrap_or(10.0),
                    &[-1.0, 1.0],
                ),
                _ => unreachable!("fig kinds only"),
            };
            let regions = centers
                .iter()
                .map(|&c| Region::centered(c, width, cost))
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| invalid(e.to_string()))?;
            EndCost::targets_threats(regions).map_err(|e| invalid(e.to_string()))?
        }
    };

    let times = cfg.times.clone().unwrap_or(match kind {
        ExperimentKind::Fig1 => vec![0.0],
        _ => vec![0.0, 0.5],
    });
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && *t < cfg.horizon)) {
        return Err(invalid("times must lie in [0, horizon)"));
    }
    let xs = uniform_grid(cfg.x_min, cfg.x_max, cfg.x_step)?;
    let out = out_override
        .or(cfg.out)
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", kind.tag())));
    Ok(FigCurvesPlan {
        kind,
        sigma: cfg.sigma,
        control_penalty: cfg.control_penalty,
        lambda0: cfg.lambda0,
        horizon: cfg.horizon,
        times,
        entries,
        end_cost,
        xs,
        out,
        default_layout,
    })
}

// --- fig4 ---------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fig4Config {
    #[serde(default = "d_one")]
    pub sigma: f64,
    #[serde(default = "d_one")]
    pub control_penalty: f64,
    #[serde(default = "d_one")]
    pub lambda0: f64,
    #[serde(default = "d_one")]
    pub horizon: f64,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "Fig4Config::d_n_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub thetas: Option<Vec<RiskEntry>>,
    #[serde(default)]
    pub regions: Option<Vec<RegionConfig>>,
    #[serde(default = "Fig4Config::d_n_bins")]
    pub n_bins: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Dump the first N trajectories per theta as `t, x_1.., u_1..` CSV
    /// files next to the runs file.
    #[serde(default)]
    pub dump_runs: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl Fig4Config {
    fn d_n_runs() -> usize {
        1000
    }
    fn d_n_bins() -> usize {
        30
    }
}

#[derive(Debug, Clone)]
pub struct Fig4Plan {
    pub sigma: f64,
    pub control_penalty: f64,
    pub lambda0: f64,
    pub horizon: f64,
    pub t0: f64,
    pub x0: f64,
    pub dt: f64,
    pub n_runs: usize,
    pub entries: Vec<ResolvedRisk>,
    pub end_cost: EndCost,
    pub n_bins: usize,
    pub seed: u64,
    pub dump_runs: usize,
    pub out: PathBuf,
}

fn resolve_fig4(
    cfg: Fig4Config,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<Fig4Plan, ConfigError> {
    check_compatibility(cfg.sigma, cfg.control_penalty, cfg.lambda0)?;
    let entries = cfg
        .thetas
        .clone()
        .unwrap_or_else(|| {
            [-1.0, 0.0, 1.0, 3.0].into_iter().map(RiskEntry::theta).collect()
        })
        .iter()
        .map(|e| e.resolve(cfg.lambda0))
        .collect::<Result<Vec<_>, _>>()?;
    if entries.is_empty() {
        return Err(invalid("at least one theta entry required"));
    }
    let end_cost = match &cfg.regions {
        Some(regions) => regions_from(regions)?,
        None => regions_from(&[
            RegionConfig {
                lower: -0.1,
                upper: 0.0,
                cost: -10.0,
            },
            RegionConfig {
                lower: 0.0,
                upper: 0.1,
                cost: 10.0,
            },
        ])?,
    };
    if !(cfg.dt > 0.0) || cfg.dt > cfg.horizon - cfg.t0 {
        return Err(invalid("dt must satisfy 0 < dt <= horizon - t0"));
    }
    if cfg.n_runs == 0 {
        return Err(invalid("n_runs must be positive"));
    }
    Ok(Fig4Plan {
        sigma: cfg.sigma,
        control_penalty: cfg.control_penalty,
        lambda0: cfg.lambda0,
        horizon: cfg.horizon,
        t0: cfg.t0,
        x0: cfg.x0,
        dt: cfg.dt,
        n_runs: cfg.n_runs,
        entries,
        end_cost,
        n_bins: cfg.n_bins,
        seed: seed_override.unwrap_or(cfg.seed),
        dump_runs: cfg.dump_runs,
        out: out_override
            .or(cfg.out)
            .unwrap_or_else(|| PathBuf::from("fig4_runs.csv")),
    })
}

// --- leqg-sweep ----------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeqgSweepConfig {
    #[serde(default = "d_one")]
    pub alpha: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "d_one")]
    pub control_penalty: f64,
    #[serde(default = "d_one")]
    pub sigma: f64,
    #[serde(default = "d_one")]
    pub horizon: f64,
    #[serde(default)]
    pub thetas: Option<Vec<f64>>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub xs: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct LeqgSweepPlan {
    pub alpha: f64,
    pub mu: f64,
    pub control_penalty: f64,
    pub sigma: f64,
    pub horizon: f64,
    pub thetas: Vec<f64>,
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub out: PathBuf,
}

fn resolve_leqg_sweep(
    cfg: LeqgSweepConfig,
    out_override: Option<PathBuf>,
) -> Result<LeqgSweepPlan, ConfigError> {
    let thetas = cfg
        .thetas
        .clone()
        .unwrap_or_else(|| vec![-1.0, 0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
    let times = cfg.times.clone().unwrap_or_else(|| vec![0.0, 0.25, 0.5, 0.75]);
    let xs = cfg
        .xs
        .clone()
        .unwrap_or_else(|| vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    if times.iter().any(|t| !(*t >= 0.0 && *t < cfg.horizon)) {
        return Err(invalid("times must lie in [0, horizon)"));
    }
    if thetas.is_empty() || xs.is_empty() {
        return Err(invalid("thetas and xs must be nonempty"));
    }
    Ok(LeqgSweepPlan {
        alpha: cfg.alpha,
        mu: cfg.mu,
        control_penalty: cfg.control_penalty,
        sigma: cfg.sigma,
        horizon: cfg.horizon,
        thetas,
        times,
        xs,
        out: out_override
            .or(cfg.out)
            .unwrap_or_else(|| PathBuf::from("leqg_sweep.csv")),
    })
}

// --- validate-mc ----------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeqgSuiteConfig {
    #[serde(default = "d_one")]
    pub alpha: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub xs: Option<Vec<f64>>,
    #[serde(default)]
    pub thetas: Option<Vec<f64>>,
    #[serde(default = "LeqgSuiteConfig::d_h")]
    pub h: f64,
}

impl LeqgSuiteConfig {
    fn d_h() -> f64 {
        1e-2
    }
}

impl Default for LeqgSuiteConfig {
    fn default() -> Self {
        LeqgSuiteConfig {
            alpha: 1.0,
            mu: 0.0,
            t: 0.0,
            xs: None,
            thetas: None,
            h: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSuiteConfig {
    #[serde(default)]
    pub regions: Option<Vec<RegionConfig>>,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub xs: Option<Vec<f64>>,
    #[serde(default)]
    pub thetas: Option<Vec<f64>>,
}

impl Default for PartitionSuiteConfig {
    fn default() -> Self {
        PartitionSuiteConfig {
            regions: None,
            t: 0.0,
            xs: None,
            thetas: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupConfig {
    #[serde(default = "BlowupConfig::d_theta")]
    pub theta: f64,
    #[serde(default = "d_one")]
    pub alpha: f64,
    #[serde(default)]
    pub t: f64,
    #[serde(default = "BlowupConfig::d_n_samples")]
    pub n_samples: usize,
}

impl BlowupConfig {
    fn d_theta() -> f64 {
        3.0
    }
    fn d_n_samples() -> usize {
        20_000
    }
}

impl Default for BlowupConfig {
    fn default() -> Self {
        BlowupConfig {
            theta: 3.0,
            alpha: 1.0,
            t: 0.0,
            n_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateMcConfig {
    #[serde(default = "d_one")]
    pub sigma: f64,
    #[serde(default = "d_one")]
    pub control_penalty: f64,
    #[serde(default = "d_one")]
    pub lambda0: f64,
    #[serde(default = "d_one")]
    pub horizon: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "ValidateMcConfig::d_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub leqg: Option<LeqgSuiteConfig>,
    #[serde(default)]
    pub partition: Option<PartitionSuiteConfig>,
    #[serde(default)]
    pub blowup: Option<BlowupConfig>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ValidateMcConfig {
    fn d_n_samples() -> usize {
        100_000
    }
}

#[derive(Debug, Clone)]
pub struct ValidateMcPlan {
    pub sigma: f64,
    pub control_penalty: f64,
    pub lambda0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub leqg: LeqgSuiteConfig,
    pub partition_suite: PartitionSuiteConfig,
    pub partition_end_cost: EndCost,
    pub blowup: BlowupConfig,
    pub out: PathBuf,
}

fn resolve_validate_mc(
    cfg: ValidateMcConfig,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<ValidateMcPlan, ConfigError> {
    check_compatibility(cfg.sigma, cfg.control_penalty, cfg.lambda0)?;
    if cfg.n_samples < 2 {
        return Err(invalid("n_samples must be at least 2"));
    }
    let partition_suite = cfg.partition.clone().unwrap_or_default();
    let partition_end_cost = match &partition_suite.regions {
        Some(regions) => regions_from(regions)?,
        None => regions_from(&[
            RegionConfig {
                lower: -0.1,
                upper: 0.0,
                cost: -10.0,
            },
            RegionConfig {
                lower: 0.0,
                upper: 0.1,
                cost: 10.0,
            },
        ])?,
    };
    Ok(ValidateMcPlan {
        sigma: cfg.sigma,
        control_penalty: cfg.control_penalty,
        lambda0: cfg.lambda0,
        horizon: cfg.horizon,
        dt: cfg.dt,
        seed: seed_override.unwrap_or(cfg.seed),
        n_samples: cfg.n_samples,
        leqg: cfg.leqg.clone().unwrap_or_default(),
        partition_suite,
        partition_end_cost,
        blowup: cfg.blowup.clone().unwrap_or_default(),
        out: out_override
            .or(cfg.out)
            .unwrap_or_else(|| PathBuf::from("validate_mc.csv")),
    })
}

// --- top-level loader ------------------------------------------------------

#[derive(Debug, Clone)]
pub enum ExperimentConfig {
    FigCurves(FigCurvesPlan),
    Fig4(Fig4Plan),
    LeqgSweep(LeqgSweepPlan),
    ValidateMc(ValidateMcPlan),
}

/// Loads and validates a config file for the given experiment kind.
/// The file's `experiment` tag must match; `--seed` and `--out` overrides
/// are applied here.
pub fn load_config(
    path: &Path,
    kind: ExperimentKind,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| invalid("config must be a JSON object"))?;
    let tag = obj
        .remove("experiment")
        .ok_or_else(|| invalid("missing \"experiment\" discriminator"))?;
    let tag = tag
        .as_str()
        .ok_or_else(|| invalid("\"experiment\" must be a string"))?
        .to_string();
    if tag != kind.tag() {
        return Err(invalid(format!(
            "config is for experiment \"{tag}\" but the \"{}\" subcommand was invoked",
            kind.tag()
        )));
    }
    match kind {
        ExperimentKind::Fig1 | ExperimentKind::Fig2 | ExperimentKind::Fig3 => {
            let cfg: FigCurvesConfig = serde_json::from_value(value)?;
            Ok(ExperimentConfig::FigCurves(resolve_fig_curves(
                kind,
                cfg,
                out_override,
            )?))
        }
        ExperimentKind::Fig4 => {
            let cfg: Fig4Config = serde_json::from_value(value)?;
            Ok(ExperimentConfig::Fig4(resolve_fig4(
                cfg,
                seed_override,
                out_override,
            )?))
        }
        ExperimentKind::LeqgSweep => {
            let cfg: LeqgSweepConfig = serde_json::from_value(value)?;
            Ok(ExperimentConfig::LeqgSweep(resolve_leqg_sweep(
                cfg,
                out_override,
            )?))
        }
        ExperimentKind::ValidateMc => {
            let cfg: ValidateMcConfig = serde_json::from_value(value)?;
            Ok(ExperimentConfig::ValidateMc(resolve_validate_mc(
                cfg,
                seed_override,
                out_override,
            )?))
        }
    }
}
