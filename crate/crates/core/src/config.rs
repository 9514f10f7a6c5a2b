//! Run configuration: a TOML document with one table per concern.
//!
//! ```toml
//! [grid]
//! nx = 32
//! ny = 1
//! nz = 33
//! Lx = 6.283185307179586
//! Ly = 1.0
//! Lz = 6.283185307179586
//!
//! [physics]
//! mu = 0.2
//! lambda = 0.0
//! c2 = 1.0
//! alpha = 1.0
//! pressure = "linear"        # or "gamma:<γ>"
//! background = "constant:1"  # or "boltzmann"
//! charge_sign = "-"
//!
//! [bc]
//! bottom = "dirichlet"
//! top = "dirichlet"
//!
//! [model]
//! formulation = "full"       # full | reduced | both
//! bipolar = false
//!
//! [time]
//! t_end = 5.0
//!
//! [init]
//! amplitude = 0.01
//! seed = 1
//! profile = "mode(1,0)"      # or "bump"
//!
//! [output]
//! diag_every = 10
//! snapshot_every = 0
//! out_dir = "out"
//! ```
//!
//! Every table and key is optional and falls back to the defaults shown.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundarySpec, Grid, WallCondition};
use crate::init::{InitParams, Profile, AMPLITUDE_WARN};
use crate::model_full::{Background, BipolarParams, ChargeSign, PhysParams, PressureLaw};
use crate::poisson::PoissonTolerances;
use crate::timestep::CflParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Full,
    Reduced,
    /// Full and reduced co-evolved from the same data.
    Both,
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Formulation::Full => "full",
            Formulation::Reduced => "reduced",
            Formulation::Both => "both",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
    #[serde(rename = "Lz")]
    pub lz: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let tau = std::f64::consts::TAU;
        GridSection { nx: 32, ny: 1, nz: 33, lx: tau, ly: 1.0, lz: tau }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysicsSection {
    pub mu: f64,
    pub lambda: f64,
    pub c2: f64,
    pub alpha: f64,
    pub pressure: String,
    pub background: String,
    pub charge_sign: String,
}

impl Default for PhysicsSection {
    fn default() -> Self {
        let p = PhysParams::default();
        PhysicsSection {
            mu: p.mu,
            lambda: p.lambda,
            c2: p.c2,
            alpha: p.alpha,
            pressure: p.pressure.to_string(),
            background: p.background.to_string(),
            charge_sign: "-".into(),
        }
    }
}

impl PhysicsSection {
    fn params(&self) -> Result<PhysParams> {
        let p = PhysParams {
            mu: self.mu,
            lambda: self.lambda,
            c2: self.c2,
            alpha: self.alpha,
            pressure: PressureLaw::parse(&self.pressure)?,
            background: Background::parse(&self.background)?,
            charge_sign: ChargeSign::parse(&self.charge_sign)?,
        };
        p.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcSection {
    pub bottom: WallCondition,
    pub top: WallCondition,
}

impl Default for BcSection {
    fn default() -> Self {
        BcSection { bottom: WallCondition::Dirichlet, top: WallCondition::Dirichlet }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub formulation: Formulation,
    pub bipolar: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { formulation: Formulation::Full, bipolar: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub cfl_advective: f64,
    pub cfl_diffusive: f64,
    pub dt_max: f64,
    /// Stops after this many steps even if `t_end` is not reached.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

impl Default for TimeSection {
    fn default() -> Self {
        let c = CflParams::default();
        TimeSection { t_end: 5.0, cfl_advective: c.advective, cfl_diffusive: c.diffusive, dt_max: c.dt_max, max_steps: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    pub amplitude: f64,
    pub seed: u64,
    pub profile: String,
}

impl Default for InitSection {
    fn default() -> Self {
        let i = InitParams::default();
        InitSection { amplitude: i.amplitude, seed: i.seed, profile: i.profile.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Steps between diagnostics rows; the first and last states are always recorded.
    pub diag_every: u64,
    /// Steps between snapshots; `0` writes only the final state.
    pub snapshot_every: u64,
    pub out_dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { diag_every: 10, snapshot_every: 0, out_dir: PathBuf::from("out") }
    }
}

/// The document as written, before validation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub grid: GridSection,
    pub physics: PhysicsSection,
    /// Overrides for the positive species in bipolar runs; unset keys
    /// follow `[physics]` and the sign defaults to `+`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub physics_positive: Option<toml::Table>,
    pub bc: BcSection,
    pub model: ModelSection,
    pub time: TimeSection,
    pub init: InitSection,
    pub output: OutputSection,
    pub poisson: PoissonTolerances,
}

/// A validated configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub raw: RawConfig,
    pub grid: Grid<f64>,
    pub physics: PhysParams,
    /// Positive-species parameters; used only in bipolar runs.
    pub physics_positive: PhysParams,
    pub bc: BoundarySpec,
    pub formulation: Formulation,
    pub bipolar: bool,
    pub t_end: f64,
    pub cfl: CflParams,
    pub max_steps: Option<u64>,
    pub init: InitParams,
    pub diag_every: u64,
    pub snapshot_every: u64,
    pub out_dir: PathBuf,
    pub poisson: PoissonTolerances,
    /// Non-fatal findings, e.g. an amplitude outside the small-data regime.
    pub warnings: Vec<String>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} must be positive")))
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let g = &raw.grid;
        let grid = Grid::new(g.nx, g.ny, g.nz, g.lx, g.ly, g.lz).map_err(|e| Error::Config(e.to_string()))?;
        let physics = raw.physics.params()?;
        let physics_positive = match &raw.physics_positive {
            None => PhysParams { charge_sign: ChargeSign::Plus, ..physics },
            Some(over) => {
                let mut base = toml::Table::try_from(&raw.physics).map_err(|e| Error::Config(e.to_string()))?;
                base.insert("charge_sign".into(), "+".into());
                for (k, v) in over {
                    base.insert(k.clone(), v.clone());
                }
                let sec: PhysicsSection = toml::Value::Table(base)
                    .try_into()
                    .map_err(|e: toml::de::Error| Error::Config(format!("[physics_positive]: {e}")))?;
                sec.params()?
            }
        };
        let bc = BoundarySpec::new(raw.bc.bottom, raw.bc.top);

        let t = &raw.time;
        positive("t_end", t.t_end)?;
        positive("cfl_advective", t.cfl_advective)?;
        positive("cfl_diffusive", t.cfl_diffusive)?;
        positive("dt_max", t.dt_max)?;
        if t.max_steps == Some(0) {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }

        let i = &raw.init;
        if !(i.amplitude >= 0.0 && i.amplitude.is_finite()) {
            return Err(Error::Config(format!("amplitude = {} must be nonnegative", i.amplitude)));
        }
        let init = InitParams { amplitude: i.amplitude, seed: i.seed, profile: Profile::parse(&i.profile)? };

        let o = &raw.output;
        if o.diag_every == 0 {
            return Err(Error::Config("diag_every must be at least 1".into()));
        }

        if raw.model.bipolar && raw.model.formulation != Formulation::Full {
            return Err(Error::Config("bipolar runs support only formulation = \"full\"".into()));
        }
        if raw.model.bipolar && physics.background == Background::Boltzmann {
            return Err(Error::Config("bipolar runs take their background from the second species".into()));
        }
        let mut warnings = vec![];
        if init.amplitude > AMPLITUDE_WARN {
            warnings.push(format!(
                "amplitude {} exceeds {AMPLITUDE_WARN}; outside the small-data regime",
                init.amplitude
            ));
        }
        if physics.undamped() || (raw.model.bipolar && physics_positive.undamped()) {
            warnings.push("alpha = 0: friction damping disabled".into());
        }

        Ok(RunConfig {
            grid,
            physics,
            physics_positive,
            bc,
            formulation: raw.model.formulation,
            bipolar: raw.model.bipolar,
            t_end: t.t_end,
            cfl: CflParams { advective: t.cfl_advective, diffusive: t.cfl_diffusive, dt_max: t.dt_max },
            max_steps: t.max_steps,
            init,
            diag_every: o.diag_every,
            snapshot_every: o.snapshot_every,
            out_dir: o.out_dir.clone(),
            poisson: raw.poisson,
            warnings,
            raw,
        })
    }

    pub fn bipolar_params(&self) -> BipolarParams {
        BipolarParams { negative: self.physics, positive: self.physics_positive }
    }

    /// The configuration as TOML, defaults filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.raw).expect("config serializes")
    }
}
