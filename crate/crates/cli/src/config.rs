//! Flat run configuration: one key set shared by TOML files, JSON sidecars and
//! command-line flags.

use std::path::{Path, PathBuf};

use catprobe::params::{mhz, PhysicalParams, TotalSpin};
use clap::ValueEnum;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    AlphaCircle,
    State,
    #[serde(rename = "purity-vs-Y")]
    PurityVsY,
    #[serde(rename = "p-of-Y")]
    POfY,
    #[serde(rename = "np-vs-Y")]
    NpVsY,
    SqueezedScatter,
    OracleValidate,
    SymmetryCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::AlphaCircle => "alpha-circle",
            Mode::State => "state",
            Mode::PurityVsY => "purity-vs-Y",
            Mode::POfY => "p-of-Y",
            Mode::NpVsY => "np-vs-Y",
            Mode::SqueezedScatter => "squeezed-scatter",
            Mode::OracleValidate => "oracle-validate",
            Mode::SymmetryCheck => "symmetry-check",
        }
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            Mode::AlphaCircle | Mode::OracleValidate | Mode::SymmetryCheck => &[],
            Mode::State => &["t", "y"],
            Mode::PurityVsY | Mode::NpVsY => &["t", "y_min", "y_max"],
            Mode::POfY => &["t"],
            Mode::SqueezedScatter => &["t", "trajectories"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Strong-coupling cavity: g = 2pi x 215 MHz, Delta = 2pi x 10 GHz,
    /// kappa1 = 2pi x 106 MHz, Gamma = 2pi x 6 MHz, probe strength 0.01, J = 50.
    Reichel,
    /// Same cavity plus a 2pi x 106 MHz squeezing cavity, eta = 0.9, no coherent drive.
    #[serde(alias = "reichel_squeezed")]
    #[value(alias = "reichel_squeezed")]
    ReichelSqueezed,
}

/// Probe used by `squeezed-scatter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Probe {
    Squeezed,
    Coherent,
}

/// Every key is optional; later layers override earlier ones. Rates ending in
/// `_mhz` are cyclic frequencies: `x` means `2 pi x 10^6 s^-1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Parameter preset the other keys modify.
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Total spin J (N = 2J atoms).
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g_mhz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_mhz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa1_mhz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_loss1_mhz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa2_mhz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa_loss2_mhz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_mhz: Option<f64>,
    /// 4 kappa1 beta^2 / kappa^2; alternative to `beta`.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_strength: Option<f64>,
    /// Real coherent-probe amplitude in s^-1/2; alternative to `probe_strength`.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Real part of epsilon in units of kappa2.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_re: Option<f64>,
    /// Imaginary part of epsilon in units of kappa2.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_im: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Local-oscillator phase in radians.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,

    /// Probing time in seconds.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Time step in seconds; defaults to the largest stable step.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<usize>,
    /// Base seed; trajectory k uses seed + k.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Integrated current in s^1/2.
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_max: Option<f64>,
    /// Number of sweep points.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Integration steps (symmetry-check).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Fock cutoffs of the two cavities (oracle-validate).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff1: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff2: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<Probe>,
    /// Keep the cavity field in the reported state (state mode).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe_off: Option<bool>,
    /// Q-function grid size in theta and phi.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_theta: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_phi: Option<usize>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Settings {
    /// `other` wins wherever it is set. Setting one of `beta`,
    /// `probe_strength` clears the other from lower layers.
    pub fn overlay(self, other: Settings) -> Settings {
        let mut base = match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("settings serialise to an object"),
        };
        let top = match serde_json::to_value(other) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("settings serialise to an object"),
        };
        if top.contains_key("beta") {
            base.remove("probe_strength");
        }
        if top.contains_key("probe_strength") {
            base.remove("beta");
        }
        base.extend(top);
        serde_json::from_value(serde_json::Value::Object(base)).expect("merged settings stay valid")
    }

    fn preset_values(preset: Preset) -> Settings {
        let reichel = Settings {
            preset: Some(preset),
            j: Some(50.0),
            g_mhz: Some(215.0),
            delta_mhz: Some(10_000.0),
            kappa1_mhz: Some(106.0),
            kappa_loss1_mhz: Some(0.0),
            kappa2_mhz: Some(0.0),
            kappa_loss2_mhz: Some(0.0),
            gamma_mhz: Some(6.0),
            probe_strength: Some(0.01),
            epsilon_re: Some(0.0),
            epsilon_im: Some(0.0),
            eta: Some(1.0),
            phi: Some(std::f64::consts::PI),
            ..Settings::default()
        };
        match preset {
            Preset::Reichel => reichel,
            Preset::ReichelSqueezed => Settings {
                kappa2_mhz: Some(106.0),
                eta: Some(0.9),
                probe_strength: Some(0.0),
                ..reichel
            },
        }
    }

    fn mode_defaults(mode: Mode) -> Settings {
        let mut s = Settings {
            seed: Some(0),
            out: Some(PathBuf::from("out")),
            ..Settings::default()
        };
        match mode {
            Mode::POfY => s.points = Some(401),
            Mode::PurityVsY | Mode::NpVsY => {
                s.points = Some(201);
                s.probe_off = Some(false);
            }
            Mode::State => {
                s.q_theta = Some(100);
                s.q_phi = Some(200);
                s.probe_off = Some(false);
            }
            Mode::SqueezedScatter => s.probe = Some(Probe::Squeezed),
            Mode::OracleValidate => {
                s.j = Some(1.0);
                s.cutoff1 = Some(12);
            }
            Mode::SymmetryCheck => {
                s.j = Some(5.0);
                s.probe_strength = Some(0.01);
                s.epsilon_im = Some(0.05);
                s.steps = Some(10_000);
                s.trajectories = Some(10);
            }
            Mode::AlphaCircle => {}
        }
        s
    }

    fn key_set(&self) -> serde_json::Map<String, serde_json::Value> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m,
            _ => unreachable!("settings serialise to an object"),
        }
    }

    fn need<T: Copy>(value: Option<T>, key: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::Usage(format!("missing required setting `{key}`")))
    }

    pub fn t(&self) -> Result<f64, CliError> {
        Self::need(self.t, "t")
    }

    pub fn y(&self) -> Result<f64, CliError> {
        Self::need(self.y, "y")
    }

    pub fn y_range(&self) -> Result<(f64, f64), CliError> {
        Ok((Self::need(self.y_min, "y_min")?, Self::need(self.y_max, "y_max")?))
    }

    pub fn points(&self) -> Result<usize, CliError> {
        Self::need(self.points, "points")
    }

    pub fn trajectories(&self) -> Result<usize, CliError> {
        Self::need(self.trajectories, "trajectories")
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub params: PhysicalParams,
    /// Every key that went into the run; re-running from it repeats the run.
    pub settings: Settings,
    pub out: PathBuf,
}

/// Reads a flat TOML file, a flat JSON object or a JSON sidecar written by
/// this tool (its `config` entry is used).
pub fn read_settings(path: &Path) -> Result<Settings, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let config_err = |message: String| CliError::Config {
        path: path.to_path_buf(),
        message,
    };
    if path.extension().is_some_and(|e| e == "json") {
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| config_err(e.to_string()))?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        serde_json::from_value(value).map_err(|e| config_err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| config_err(e.to_string()))
    }
}

/// Layers mode defaults, the preset, the config file and the flags (last wins).
pub fn load_spec(mode: Mode, config: Option<&Path>, overrides: Settings) -> Result<ExperimentSpec, CliError> {
    let file = match config {
        Some(p) => read_settings(p)?,
        None => Settings::default(),
    };
    let user = file.overlay(overrides);
    let default_preset = match mode {
        Mode::SqueezedScatter if user.probe != Some(Probe::Coherent) => Preset::ReichelSqueezed,
        Mode::SymmetryCheck => Preset::ReichelSqueezed,
        _ => Preset::Reichel,
    };
    let preset = user.preset.unwrap_or(default_preset);
    let settings = Settings::preset_values(preset)
        .overlay(Settings::mode_defaults(mode))
        .overlay(user);

    let keys = settings.key_set();
    for key in mode.required() {
        if !keys.contains_key(*key) {
            return Err(CliError::Usage(format!(
                "mode {} needs `{key}` (set it in the config file or with --{})",
                mode.name(),
                key.replace('_', "-")
            )));
        }
    }
    let params = build_params(&settings)?;
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    Ok(ExperimentSpec {
        mode,
        params,
        settings,
        out,
    })
}

fn build_params(s: &Settings) -> Result<PhysicalParams, CliError> {
    let get = |v: Option<f64>, key: &str| v.ok_or_else(|| CliError::Usage(format!("missing `{key}`")));
    let j = get(s.j, "j")?;
    let big_j = TotalSpin::from_f64(j)
        .ok_or_else(|| CliError::Usage(format!("`j` must be a non-negative multiple of 1/2, got {j}")))?;
    let mut p = PhysicalParams {
        g: mhz(get(s.g_mhz, "g_mhz")?),
        delta: mhz(get(s.delta_mhz, "delta_mhz")?),
        kappa1: mhz(get(s.kappa1_mhz, "kappa1_mhz")?),
        kappa_loss1: mhz(get(s.kappa_loss1_mhz, "kappa_loss1_mhz")?),
        kappa2: mhz(get(s.kappa2_mhz, "kappa2_mhz")?),
        kappa_loss2: mhz(get(s.kappa_loss2_mhz, "kappa_loss2_mhz")?),
        beta: Complex64::new(0.0, 0.0),
        epsilon: Complex64::new(0.0, 0.0),
        eta: get(s.eta, "eta")?,
        phi: get(s.phi, "phi")?,
        gamma_sp: mhz(get(s.gamma_mhz, "gamma_mhz")?),
        big_j,
    };
    let beta = match (s.beta, s.probe_strength) {
        (Some(b), _) => b,
        (None, Some(strength)) => {
            if strength < 0.0 {
                return Err(CliError::Usage(format!("`probe_strength` must be >= 0, got {strength}")));
            }
            p.beta_for_probe_strength(strength)
        }
        (None, None) => return Err(CliError::Usage("set `beta` or `probe_strength`".into())),
    };
    p.beta = Complex64::new(beta, 0.0);
    let (er, ei) = (s.epsilon_re.unwrap_or(0.0), s.epsilon_im.unwrap_or(0.0));
    if (er != 0.0 || ei != 0.0) && p.kappa2 == 0.0 {
        return Err(CliError::Usage("`epsilon_re`/`epsilon_im` need a squeezing cavity (`kappa2_mhz` > 0)".into()));
    }
    p.epsilon = Complex64::new(er, ei) * p.kappa2;
    let report = p.validate();
    if !report.violations.is_empty() {
        return Err(CliError::Usage(format!("invalid parameters: {}", report.violations.join("; "))));
    }
    Ok(p)
}
