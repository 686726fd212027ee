//! Experiment configuration and the model it describes.

use std::path::{Path, PathBuf};

use ares_core::filter::{
    ConstraintProvider, FilterOptions, StateConstraintPoint, TimeUpdateAttack,
};
use ares_core::scenario::SpeedBound;
use ares_core::{
    AttackSchedule, ConstantModel, ConstraintSet, Inequalities, Matrix, ModelProvider, Scenario,
    SystemStep, Vector,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Everything needed to reproduce one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Builtin scenario: `two-agent`, `single-agent` or `agents-N`.
    pub scenario: String,
    /// Model document; overrides `scenario` when set.
    pub model_file: Option<PathBuf>,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub alpha: f64,
    /// Initial covariance `P₀ = p0_scale · I`.
    pub p0_scale: f64,
    pub time_update_attack: TimeUpdateAttack,
    /// Where estimate-dependent state constraints are built.
    pub state_constraint_point: StateConstraintPoint,
    pub attack_constraints: bool,
    pub state_constraints: bool,
    pub speed_bound: SpeedBound,
    /// Inject the square-wave attack.
    pub attack: bool,
    /// Multiplier on every simulated process noise sample.
    pub process_noise_scale: f64,
    /// Multiplier on every simulated measurement noise sample.
    pub measurement_noise_scale: f64,
    /// Steps from which the Monte-Carlo report treats the error as settled.
    pub steady_state_from: usize,
    /// Window length of the observability-Gramian diagnostic.
    pub gramian_window: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: "two-agent".into(),
            model_file: None,
            horizon: 1000,
            seeds: vec![0],
            alpha: ares_core::detector::DEFAULT_ALPHA,
            p0_scale: 1.0,
            time_update_attack: TimeUpdateAttack::default(),
            state_constraint_point: StateConstraintPoint::default(),
            attack_constraints: true,
            state_constraints: true,
            speed_bound: SpeedBound::default(),
            attack: true,
            process_noise_scale: 1.0,
            measurement_noise_scale: 1.0,
            steady_state_from: 200,
            gramian_window: 10,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative `model_file` paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(file), Some(dir)) = (cfg.model_file.as_mut(), path.parent()) {
            if file.is_relative() {
                *file = dir.join(&*file);
            }
        }
        Ok(cfg)
    }

    pub fn filter_options(&self) -> FilterOptions {
        FilterOptions {
            time_update_attack: self.time_update_attack,
            state_constraint_point: self.state_constraint_point,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.horizon == 0 {
            return Err(CliError::Config("horizon must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.p0_scale.is_finite() && self.p0_scale > 0.0) {
            return Err(CliError::Config(format!(
                "p0_scale must be positive, got {}",
                self.p0_scale
            )));
        }
        for (name, v) in [
            ("process_noise_scale", self.process_noise_scale),
            ("measurement_noise_scale", self.measurement_noise_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.gramian_window == 0 {
            return Err(CliError::Config("gramian_window must be at least 1".into()));
        }
        Ok(())
    }

    /// Builds the system, constraints, initial state and attack schedule.
    pub fn setup(&self) -> CliResult<Setup> {
        let mut setup = match &self.model_file {
            Some(path) => ModelFile::load(path)?.into_setup()?,
            None => Setup::builtin(&self.scenario, self.speed_bound)?,
        };
        if !self.attack {
            setup.schedule = AttackSchedule::none(setup.schedule.dim);
        }
        setup.attack_constraints = self.attack_constraints;
        setup.state_constraints = self.state_constraints;
        Ok(setup)
    }
}

fn builtin_agents(name: &str) -> Option<usize> {
    match name {
        "single-agent" => Some(1),
        "two-agent" => Some(2),
        _ => name
            .strip_prefix("agents-")?
            .parse()
            .ok()
            .filter(|&n| n > 0),
    }
}

#[derive(Debug, Clone)]
enum Source {
    Scenario(Scenario),
    Fixed {
        model: ConstantModel,
        constraints: ConstraintSet,
    },
}

/// A ready-to-run experiment: model, constraints, initial state, attack.
#[derive(Debug, Clone)]
pub struct Setup {
    source: Source,
    pub x0: Vector,
    pub schedule: AttackSchedule,
    pub attack_constraints: bool,
    pub state_constraints: bool,
}

impl Setup {
    pub fn builtin(name: &str, speed_bound: SpeedBound) -> CliResult<Self> {
        let n_agents = builtin_agents(name)
            .ok_or_else(|| CliError::Config(format!("unknown builtin scenario `{name}`")))?;
        let mut scenario = Scenario::new(n_agents)?;
        scenario.speed_bound = speed_bound;
        Ok(Setup {
            x0: scenario.initial_state(),
            schedule: AttackSchedule::square_wave(n_agents),
            source: Source::Scenario(scenario),
            attack_constraints: true,
            state_constraints: true,
        })
    }

    pub fn model(&self) -> &dyn ModelProvider {
        match &self.source {
            Source::Scenario(s) => s.model(),
            Source::Fixed { model, .. } => model,
        }
    }

    /// Constraint provider honouring the block toggles.
    pub fn constraints(&self) -> Toggled<'_> {
        Toggled {
            setup: self,
            attack: self.attack_constraints,
            state: self.state_constraints,
        }
    }

    /// Constraint provider with both blocks disabled.
    pub fn unconstrained(&self) -> Toggled<'_> {
        Toggled {
            setup: self,
            attack: false,
            state: false,
        }
    }
}

/// A [`Setup`]'s constraints with either block switched off.
pub struct Toggled<'a> {
    setup: &'a Setup,
    attack: bool,
    state: bool,
}

impl ConstraintProvider for Toggled<'_> {
    fn constraints(&self, k: usize, x_pred: &Vector, u_prev: &Vector) -> ConstraintSet {
        let mut cs = match &self.setup.source {
            Source::Scenario(s) => s.build_constraints(x_pred, u_prev),
            Source::Fixed { constraints, .. } => constraints.constraints(k, x_pred, u_prev),
        };
        if !self.attack {
            cs = cs.without_attack();
        }
        if !self.state {
            cs = cs.without_state();
        }
        cs
    }
}

/// Rows of a matrix, as written in a model document.
type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockFile {
    matrix: Rows,
    bound: Vec<f64>,
}

/// A time-invariant model given as a document of row-major matrices.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    a: Rows,
    b: Rows,
    c: Rows,
    g: Rows,
    q: Rows,
    r: Rows,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    attack_constraints: Option<BlockFile>,
    #[serde(default)]
    state_constraints: Option<BlockFile>,
    /// Attack channels driven by the square wave.
    #[serde(default)]
    attack_channels: Option<Vec<usize>>,
    #[serde(default)]
    attack_amplitude: Option<f64>,
}

fn matrix(name: &str, rows: &Rows, ncols_if_empty: usize) -> CliResult<Matrix> {
    let ncols = rows.first().map_or(ncols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!(
            "matrix `{name}` has rows of different lengths"
        )));
    }
    Ok(Matrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

fn block(name: &str, file: &Option<BlockFile>, dim: usize) -> CliResult<Inequalities> {
    match file {
        None => Ok(Inequalities::none(dim)),
        Some(f) => {
            let m = matrix(name, &f.matrix, dim)?;
            Ok(Inequalities::new(m, Vector::from_vec(f.bound.clone()))?)
        }
    }
}

impl ModelFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn into_setup(self) -> CliResult<Setup> {
        let step = SystemStep::new(
            matrix("a", &self.a, 0)?,
            matrix("b", &self.b, 0)?,
            matrix("c", &self.c, 0)?,
            matrix("g", &self.g, 0)?,
            matrix("q", &self.q, 0)?,
            matrix("r", &self.r, 0)?,
        )?;
        let dims = step.dims();
        let x0 = match self.x0 {
            Some(v) if v.len() == dims.n => Vector::from_vec(v),
            Some(v) => {
                return Err(CliError::Config(format!(
                    "x0 has length {}, expected {}",
                    v.len(),
                    dims.n
                )))
            }
            None => Vector::zeros(dims.n),
        };
        let constraints = ConstraintSet::new(
            block("attack_constraints", &self.attack_constraints, dims.p)?,
            block("state_constraints", &self.state_constraints, dims.n)?,
        );
        if constraints.attack.dim() != dims.p || constraints.state.dim() != dims.n {
            return Err(CliError::Config(
                "constraint blocks do not match the model dimensions".into(),
            ));
        }
        let channels = self.attack_channels.unwrap_or_else(|| vec![0]);
        if channels.iter().any(|&c| c >= dims.p) {
            return Err(CliError::Config(format!(
                "attack channel out of range for p = {}",
                dims.p
            )));
        }
        let schedule = AttackSchedule {
            amplitude: self
                .attack_amplitude
                .unwrap_or(ares_core::scenario::ATTACK_AMPLITUDE),
            channels,
            ..AttackSchedule::square_wave(1)
        };
        let schedule = AttackSchedule {
            dim: dims.p,
            ..schedule
        };
        Ok(Setup {
            source: Source::Fixed {
                model: ConstantModel(step),
                constraints,
            },
            x0,
            schedule,
            attack_constraints: true,
            state_constraints: true,
        })
    }
}
