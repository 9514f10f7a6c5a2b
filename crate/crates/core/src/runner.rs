//! Experiment orchestration: initial data, the time loop and all output
//! files of a run.
//!
//! A run directory holds
//! - `diag.csv`: one diagnostics row every `diag_every` steps, plus the
//!   first and last states;
//! - `snap_<step>.evnsp` every `snapshot_every` steps and `final.evnsp`,
//!   each with its `.meta` sidecar;
//! - `run_manifest.toml`: the echoed configuration, code version, grid
//!   and final status;
//! - `formulation_divergence.csv` in `both` mode.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::{Formulation, RunConfig};
use crate::diagnostics::{self, BipolarDiagnostics, DiagnosticsRecord, UnipolarDiagnostics};
use crate::error::{Error, Result};
use crate::field::norm_linf;
use crate::init::{well_prepared_bipolar, well_prepared_init};
use crate::model_full::{Background, BipolarModel, BipolarState, FullState, PhysParams, UnipolarModel};
use crate::model_reduced::{reconstruct_full, ReducedModel, ReducedState};
use crate::snapshot::{self, SnapshotMeta, StateSnapshot};
use crate::timestep::{cfl_dt, cfl_dt_reduced, step_ssprk3, CoEvolution};

pub const DIAG_FILE: &str = "diag.csv";
pub const MANIFEST_FILE: &str = "run_manifest.toml";
pub const DIVERGENCE_FILE: &str = "formulation_divergence.csv";
pub const FINAL_SNAPSHOT: &str = "final.evnsp";

/// File name of the periodic snapshot taken after `step` steps.
pub fn snapshot_name(step: u64) -> String {
    format!("snap_{step:08}.evnsp")
}

/// Unipolar parameters with the background fixed by the initial data when
/// required.
fn effective_physics(cfg: &RunConfig, meta: &SnapshotMeta) -> PhysParams {
    match (cfg.physics.background, meta.rho_bar) {
        (Background::Constant(_), Some(bar)) => PhysParams { background: Background::Constant(bar), ..cfg.physics },
        _ => cfg.physics,
    }
}

/// Well-prepared initial state for `cfg` with its potential filled in.
///
/// Under pure-Neumann walls with a constant background, `ρ̄` becomes the
/// conserved mean of `ρ₀` so the electrostatic problem is solvable.
pub fn initial_state(cfg: &RunConfig) -> Result<(StateSnapshot, SnapshotMeta)> {
    let g = &cfg.grid;
    let kind = match (cfg.bipolar, cfg.formulation) {
        (true, _) => snapshot::SnapshotKind::Bipolar,
        (false, Formulation::Full) => snapshot::SnapshotKind::Full,
        (false, Formulation::Reduced) => snapshot::SnapshotKind::Reduced,
        (false, Formulation::Both) => snapshot::SnapshotKind::Both,
    };
    let mut meta = SnapshotMeta { kind, components: kind.manifest(), time: 0.0, step: 0, mass_ref: vec![], rho_bar: None };
    if cfg.bipolar {
        let mut s = well_prepared_bipolar(g, &cfg.init)?;
        let model = BipolarModel::new(g, cfg.bipolar_params(), cfg.bc, cfg.poisson)?;
        let psi = model.potential(&s)?;
        s.positive.psi.clone_from(&psi);
        s.negative.psi = psi;
        meta.mass_ref = vec![s.negative.rho.mean_conservative(), s.positive.rho.mean_conservative()];
        return Ok((StateSnapshot::Bipolar(s), meta));
    }
    let (mut full, mut red) = well_prepared_init(g, &cfg.init)?;
    let mass = full.rho.mean_conservative();
    meta.mass_ref = vec![mass];
    if cfg.bc.is_pure_neumann() && matches!(cfg.physics.background, Background::Constant(_)) {
        meta.rho_bar = Some(mass);
    }
    let model = UnipolarModel::new(g, effective_physics(cfg, &meta), cfg.bc, cfg.poisson)?;
    full.psi = model.potential(&full.rho)?;
    red.psi.clone_from(&full.psi);
    let state = match cfg.formulation {
        Formulation::Full => StateSnapshot::Full(full),
        Formulation::Reduced => StateSnapshot::Reduced(red),
        Formulation::Both => StateSnapshot::Both(full, red),
    };
    Ok((state, meta))
}

/// Models and state of a run in one formulation.
enum Engine {
    Full {
        model: UnipolarModel<f64>,
        diag: UnipolarDiagnostics<f64>,
        state: FullState<f64>,
    },
    Reduced {
        model: ReducedModel<f64>,
        diag: UnipolarDiagnostics<f64>,
        state: ReducedState<f64>,
    },
    Both {
        full: UnipolarModel<f64>,
        reduced: ReducedModel<f64>,
        diag: UnipolarDiagnostics<f64>,
        state: (FullState<f64>, ReducedState<f64>),
    },
    Bipolar {
        model: BipolarModel<f64>,
        diag: BipolarDiagnostics<f64>,
        state: BipolarState<f64>,
    },
}

impl Engine {
    fn new(cfg: &RunConfig, state: StateSnapshot, meta: &SnapshotMeta) -> Result<Self> {
        let g = &state.grid().clone();
        if !g.same_shape(&cfg.grid) || g.lx != cfg.grid.lx || g.ly != cfg.grid.ly || g.lz != cfg.grid.lz {
            return Err(Error::Config("snapshot grid differs from the configured grid".into()));
        }
        let p = effective_physics(cfg, meta);
        let unipolar_diag = || -> Result<UnipolarDiagnostics<f64>> {
            let mut d = UnipolarDiagnostics::new(&cfg.grid, p, cfg.bc, cfg.poisson)?;
            d.mass_ref = meta.mass_ref.first().copied().unwrap_or(1.0);
            Ok(d)
        };
        Ok(match state {
            StateSnapshot::Full(state) => {
                Engine::Full { model: UnipolarModel::new(g, p, cfg.bc, cfg.poisson)?, diag: unipolar_diag()?, state }
            }
            StateSnapshot::Reduced(state) => {
                Engine::Reduced { model: ReducedModel::new(g, p, cfg.bc, cfg.poisson)?, diag: unipolar_diag()?, state }
            }
            StateSnapshot::Both(f, r) => Engine::Both {
                full: UnipolarModel::new(g, p, cfg.bc, cfg.poisson)?,
                reduced: ReducedModel::new(g, p, cfg.bc, cfg.poisson)?,
                diag: unipolar_diag()?,
                state: (f, r),
            },
            StateSnapshot::Bipolar(state) => {
                let mut diag = BipolarDiagnostics::new(g, cfg.bipolar_params(), cfg.bc, cfg.poisson)?;
                if let [a, b] = meta.mass_ref[..] {
                    diag.mass_ref = [a, b];
                }
                Engine::Bipolar { model: BipolarModel::new(g, cfg.bipolar_params(), cfg.bc, cfg.poisson)?, diag, state }
            }
        })
    }

    fn dt(&self, cfg: &RunConfig) -> Result<f64> {
        let c = &cfg.cfl;
        Ok(match self {
            Engine::Full { model, state, .. } => cfl_dt(&state.rho, &state.u, &model.params, state.grid(), c),
            Engine::Reduced { model, state, .. } => cfl_dt_reduced(state, model.params(), c)?,
            Engine::Both { full, reduced, state, .. } => {
                let a = cfl_dt(&state.0.rho, &state.0.u, &full.params, state.0.grid(), c);
                a.min(cfl_dt_reduced(&state.1, reduced.params(), c)?)
            }
            Engine::Bipolar { model, state, .. } => {
                let (n, p) = (&state.negative, &state.positive);
                let a = cfl_dt(&n.rho, &n.u, &model.params.negative, n.grid(), c);
                a.min(cfl_dt(&p.rho, &p.u, &model.params.positive, p.grid(), c))
            }
        })
    }

    fn step(&mut self, dt: f64) -> Result<()> {
        match self {
            Engine::Full { model, state, .. } => *state = step_ssprk3(model, state, dt)?,
            Engine::Reduced { model, state, .. } => *state = step_ssprk3(model, state, dt)?,
            Engine::Both { full, reduced, state, .. } => {
                *state = step_ssprk3(&CoEvolution { full, reduced }, state, dt)?
            }
            Engine::Bipolar { model, state, .. } => *state = step_ssprk3(model, state, dt)?,
        }
        Ok(())
    }

    fn record(&self, time: f64) -> Result<DiagnosticsRecord> {
        let rec = match self {
            Engine::Full { diag, state, .. } => diag.record(time, state, None)?,
            Engine::Reduced { diag, state, .. } => diag.record(time, &reconstruct_full(state)?, Some(&state.phi))?,
            Engine::Both { diag, state, .. } => diag.record(time, &state.0, Some(&state.1.phi))?,
            Engine::Bipolar { diag, state, .. } => diag.record(time, state)?,
        };
        if !rec.is_finite() {
            return Err(Error::NonFinite(format!("diagnostics at t = {time}")));
        }
        Ok(rec)
    }

    /// `(‖ρ_full − det(I + ∇φ)‖∞, ‖u_full − u_red‖∞)` in `both` mode.
    fn divergence(&self) -> Result<Option<(f64, f64)>> {
        match self {
            Engine::Both { state: (f, r), .. } => {
                let rec = reconstruct_full(r)?;
                Ok(Some(((&f.rho - &rec.rho).max_abs(), norm_linf(&(&f.u - &r.u)))))
            }
            _ => Ok(None),
        }
    }

    fn snapshot(&self) -> StateSnapshot {
        match self {
            Engine::Full { state, .. } => StateSnapshot::Full(state.clone()),
            Engine::Reduced { state, .. } => StateSnapshot::Reduced(state.clone()),
            Engine::Both { state, .. } => StateSnapshot::Both(state.0.clone(), state.1.clone()),
            Engine::Bipolar { state, .. } => StateSnapshot::Bipolar(state.clone()),
        }
    }
}

/// Outcome of a completed run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub time: f64,
    pub out_dir: PathBuf,
    pub first: DiagnosticsRecord,
    pub last: DiagnosticsRecord,
}

/// A run stopped by an error, with where it happened.
#[derive(Debug)]
pub struct RunAbort {
    pub error: Error,
    /// Completed steps when the error occurred.
    pub step: u64,
    pub time: f64,
}

impl std::fmt::Display for RunAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after step {}, t = {})", self.error, self.step, self.time)
    }
}

impl std::error::Error for RunAbort {}

impl From<Error> for RunAbort {
    fn from(error: Error) -> Self {
        RunAbort { error, step: 0, time: 0.0 }
    }
}

/// Writes the well-prepared initial state to `path`.
pub fn write_initial(cfg: &RunConfig, path: &Path) -> Result<()> {
    let (state, meta) = initial_state(cfg)?;
    snapshot::write_snapshot(path, &state, &meta)
}

/// Diagnostics of a stored state under `cfg`.
pub fn diagnose(cfg: &RunConfig, path: &Path) -> Result<DiagnosticsRecord> {
    let expected = initial_kind(cfg);
    let (state, meta) = snapshot::read_snapshot(path, Some(expected))?;
    let engine = Engine::new(cfg, state, &meta)?;
    engine.record(meta.time)
}

fn initial_kind(cfg: &RunConfig) -> snapshot::SnapshotKind {
    use snapshot::SnapshotKind as K;
    match (cfg.bipolar, cfg.formulation) {
        (true, _) => K::Bipolar,
        (false, Formulation::Full) => K::Full,
        (false, Formulation::Reduced) => K::Reduced,
        (false, Formulation::Both) => K::Both,
    }
}

struct Outputs {
    dir: PathBuf,
    diag: BufWriter<File>,
    divergence: Option<BufWriter<File>>,
}

impl Outputs {
    /// Opens the output files; a resumed run appends to existing series.
    fn open(cfg: &RunConfig, resumed: bool) -> Result<Self> {
        let dir = cfg.out_dir.clone();
        std::fs::create_dir_all(&dir)?;
        let open = |name: &str, header: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| -> Result<BufWriter<File>> {
            let path = dir.join(name);
            let append = resumed && path.exists();
            let file = if append { OpenOptions::new().append(true).open(&path)? } else { File::create(&path)? };
            let mut w = BufWriter::new(file);
            if !append {
                header(&mut w)?;
            }
            Ok(w)
        };
        let diag = open(DIAG_FILE, &|w| diagnostics::write_csv_header(w, cfg.bipolar))?;
        let divergence = if cfg.formulation == Formulation::Both && !cfg.bipolar {
            Some(open(DIVERGENCE_FILE, &|w| writeln!(w, "time,rho_full_minus_rec_linf,u_full_minus_red_linf"))?)
        } else {
            None
        };
        Ok(Outputs { dir, diag, divergence })
    }

    fn row(&mut self, engine: &Engine, time: f64) -> Result<DiagnosticsRecord> {
        let rec = engine.record(time)?;
        diagnostics::write_csv_row(&mut self.diag, &rec)?;
        self.diag.flush()?;
        if let (Some(w), Some((dr, du))) = (self.divergence.as_mut(), engine.divergence()?) {
            writeln!(w, "{},{},{}", diagnostics::fmt17(time), diagnostics::fmt17(dr), diagnostics::fmt17(du))?;
            w.flush()?;
        }
        Ok(rec)
    }
}

fn write_manifest(
    cfg: &RunConfig,
    meta: &SnapshotMeta,
    resumed_from: Option<&Path>,
    status: &str,
    end: Option<(u64, f64)>,
) -> Result<()> {
    let g = &cfg.grid;
    let mut run = toml::Table::new();
    run.insert("code".into(), env!("CARGO_PKG_NAME").into());
    run.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    run.insert("threads".into(), (rayon::current_num_threads() as i64).into());
    run.insert("status".into(), status.into());
    run.insert("start_step".into(), (meta.step as i64).into());
    run.insert("start_time".into(), meta.time.into());
    if let Some((step, time)) = end {
        run.insert("end_step".into(), (step as i64).into());
        run.insert("end_time".into(), time.into());
    }
    if let Some(p) = resumed_from {
        run.insert("resumed_from".into(), p.display().to_string().into());
    }
    for w in &cfg.warnings {
        run.entry("warnings")
            .or_insert_with(|| toml::Value::Array(vec![]))
            .as_array_mut()
            .expect("array")
            .push(w.clone().into());
    }
    let mut grid = toml::Table::new();
    for (k, v) in [("nx", g.nx), ("ny", g.ny), ("nz", g.nz), ("dim", g.dim())] {
        grid.insert(k.into(), (v as i64).into());
    }
    for (k, v) in [("Lx", g.lx), ("Ly", g.ly), ("Lz", g.lz), ("hx", g.hx), ("hy", g.hy), ("hz", g.hz)] {
        grid.insert(k.into(), v.into());
    }
    let mut derived = toml::Table::new();
    derived.insert("mass_ref".into(), meta.mass_ref.iter().map(|&v| toml::Value::from(v)).collect::<Vec<_>>().into());
    if let Some(bar) = meta.rho_bar {
        derived.insert("rho_bar".into(), bar.into());
    }
    let config = toml::Table::try_from(&cfg.raw).map_err(|e| Error::Config(e.to_string()))?;
    let mut doc = toml::Table::new();
    doc.insert("run".into(), run.into());
    doc.insert("grid".into(), grid.into());
    doc.insert("derived".into(), derived.into());
    doc.insert("config".into(), config.into());
    std::fs::write(cfg.out_dir.join(MANIFEST_FILE), toml::to_string(&doc).expect("manifest serializes"))?;
    Ok(())
}

/// Runs `cfg` from well-prepared data, or from the snapshot `resume`.
pub fn run(cfg: &RunConfig, resume: Option<&Path>) -> std::result::Result<RunSummary, RunAbort> {
    let (state, meta) = match resume {
        Some(p) => snapshot::read_snapshot(p, Some(initial_kind(cfg)))?,
        None => initial_state(cfg)?,
    };
    let mut engine = Engine::new(cfg, state, &meta)?;
    let mut out = Outputs::open(cfg, resume.is_some())?;
    write_manifest(cfg, &meta, resume, "running", None)?;

    let (mut step, mut t) = (meta.step, meta.time);
    let first = out.row(&engine, t)?;
    let mut last = first.clone();
    let mut last_row_step = step;
    let dir = out.dir.clone();
    let snap = |engine: &Engine, name: &str, step: u64, t: f64| -> Result<()> {
        let m = SnapshotMeta { time: t, step, ..meta.clone() };
        snapshot::write_snapshot(&dir.join(name), &engine.snapshot(), &m)
    };
    let tol = 1e-12 * cfg.t_end;
    let mut taken = 0u64;
    let result: Result<()> = (|| {
        while cfg.t_end - t > tol && cfg.max_steps.is_none_or(|m| taken < m) {
            let remaining = cfg.t_end - t;
            let dt = engine.dt(cfg)?;
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::NonFinite(format!("time step {dt}")));
            }
            let (dt, finishing) = if dt >= remaining { (remaining, true) } else { (dt, false) };
            engine.step(dt)?;
            step += 1;
            taken += 1;
            t = if finishing { cfg.t_end } else { t + dt };
            if step % cfg.diag_every == 0 {
                last = out.row(&engine, t)?;
                last_row_step = step;
            }
            if cfg.snapshot_every > 0 && step % cfg.snapshot_every == 0 {
                snap(&engine, &snapshot_name(step), step, t)?;
            }
        }
        if last_row_step != step {
            last = out.row(&engine, t)?;
        }
        snap(&engine, FINAL_SNAPSHOT, step, t)
    })();
    match result {
        Ok(()) => {
            write_manifest(cfg, &meta, resume, "completed", Some((step, t)))?;
            Ok(RunSummary { steps: step, time: t, out_dir: dir, first, last })
        }
        Err(error) => {
            // best effort: the abort itself is what gets reported
            let _ = write_manifest(cfg, &meta, resume, "aborted", Some((step, t)));
            Err(RunAbort { error, step, time: t })
        }
    }
}
