//! Run configuration: a flat TOML file merged with command-line flags.
//! Flags win over the file; anything left unset takes the experiment default.

use std::path::{Path, PathBuf};

use clap::Args;
use mimadv::operators::OperatorKind;
use mimadv::plane2d::TestKind;
use mimadv::timestep::Scheme;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ConvergeFlux,
    ConvergeMaterial,
    Advect1d,
    Dispersion,
    Stability,
    Advect2d,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::ConvergeFlux => "converge-flux",
            Experiment::ConvergeMaterial => "converge-material",
            Experiment::Advect1d => "advect1d",
            Experiment::Dispersion => "dispersion",
            Experiment::Stability => "stability",
            Experiment::Advect2d => "advect2d",
        }
    }

    fn is_convergence(self) -> bool {
        matches!(
            self,
            Experiment::ConvergeFlux | Experiment::ConvergeMaterial
        )
    }
}

/// `ne = 20` and `ne = [8, 16]` are both accepted in files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

fn one_or_many<'de, D>(d: D) -> Result<Option<Vec<usize>>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    Ok(Option::<OneOrMany>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(n) => vec![n],
        OneOrMany::Many(v) => v,
    }))
}

/// Every tunable, all optional. Used both as the file schema and as the
/// flag set, so the two merge field by field.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Must match the subcommand when present in a file.
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,

    /// Polynomial degree of the nodal space.
    #[arg(long)]
    pub p: Option<usize>,

    /// Element counts, comma separated (one value except for convergence runs).
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    pub ne: Option<Vec<usize>>,

    /// Domain length.
    #[arg(long = "L", alias = "length")]
    #[serde(alias = "L")]
    pub length: Option<f64>,

    /// Constant advection speed.
    #[arg(long, allow_negative_numbers = true)]
    pub u: Option<f64>,

    /// Time step.
    #[arg(long)]
    pub dt: Option<f64>,

    /// Convergence runs use dt = dt_over_ne / ne.
    #[arg(long)]
    pub dt_over_ne: Option<f64>,

    /// Final time.
    #[arg(long = "T", alias = "t-final")]
    #[serde(alias = "T")]
    pub t_final: Option<f64>,

    /// A, B, A_PG, B_PG, S or S_PG.
    #[arg(long)]
    pub operator: Option<OperatorKind>,

    /// centered or rk3.
    #[arg(long)]
    pub scheme: Option<Scheme>,

    /// Output directory.
    #[arg(long, short = 'o')]
    pub output: Option<PathBuf>,

    /// Gauss points per element for assembly.
    #[arg(long)]
    pub quadrature: Option<usize>,

    /// Scales the upwind displacement.
    #[arg(long)]
    pub upwind_factor: Option<f64>,

    /// Diagnostics interval in steps.
    #[arg(long)]
    pub record_every: Option<usize>,

    /// Largest CFL number of the stability scan.
    #[arg(long)]
    pub cfl_max: Option<f64>,

    /// Number of CFL values in the stability scan.
    #[arg(long)]
    pub cfl_steps: Option<usize>,

    /// 2D test: translation or deformational.
    #[arg(long)]
    pub test: Option<TestKind>,

    /// Velocity period of the 2D tests.
    #[arg(long)]
    pub period: Option<f64>,

    /// Petrov-Galerkin upwinding in 2D.
    #[arg(long)]
    pub upwind: Option<bool>,

    /// 2D snapshot interval in steps (0: first and last only).
    #[arg(long)]
    pub snapshot_every: Option<usize>,

    /// Sample points per cell line for 2D snapshots and diagnostics.
    #[arg(long)]
    pub samples_per_line: Option<usize>,
}

macro_rules! prefer {
    ($a:ident, $b:ident; $($f:ident),*) => {
        Params { $($f: $a.$f.or($b.$f)),* }
    };
}

impl Params {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Fields of `self` override those of `base`.
    pub fn over(self, base: Params) -> Params {
        let (a, b) = (self, base);
        prefer!(a, b; experiment, p, ne, length, u, dt, dt_over_ne, t_final, operator, scheme,
            output, quadrature, upwind_factor, record_every, cfl_max, cfl_steps, test, period,
            upwind, snapshot_every, samples_per_line)
    }
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub p: usize,
    pub ne: Vec<usize>,
    pub length: f64,
    pub u: f64,
    pub dt: f64,
    pub dt_over_ne: f64,
    pub t_final: f64,
    pub operator: OperatorKind,
    pub scheme: Scheme,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<usize>,
    pub upwind_factor: f64,
    pub record_every: usize,
    pub cfl_max: f64,
    pub cfl_steps: usize,
    pub test: TestKind,
    pub period: f64,
    pub upwind: bool,
    pub snapshot_every: usize,
    pub samples_per_line: usize,
}

impl RunConfig {
    /// Fills defaults for `experiment` and validates everything the run uses.
    pub fn resolve(experiment: Experiment, params: Params) -> Result<Self, CliError> {
        if let Some(e) = params.experiment {
            if e != experiment {
                return Err(CliError::Config(format!(
                    "config is for `{}` but the subcommand is `{}`",
                    e.name(),
                    experiment.name()
                )));
            }
        }
        use Experiment::*;
        let test = params.test.unwrap_or(TestKind::Deformational);
        let translation = experiment == Advect2d && test == TestKind::Translation;
        let ne = params.ne.unwrap_or_else(|| match experiment {
            ConvergeFlux | ConvergeMaterial => vec![8, 16, 32, 64, 128],
            Advect1d | Stability => vec![20],
            Dispersion => vec![40],
            Advect2d if translation => vec![16],
            Advect2d => vec![12],
        });
        let period = params.period.unwrap_or(if translation { 1.0 } else { 5.0 });
        let dt = params.dt.unwrap_or(if translation {
            0.05 / ne.first().copied().unwrap_or(1).max(1) as f64
        } else {
            0.005
        });
        let cfg = RunConfig {
            experiment,
            p: params.p.unwrap_or(match experiment {
                Advect1d => 5,
                _ => 3,
            }),
            ne,
            length: params.length.unwrap_or(1.0),
            u: params.u.unwrap_or(0.4),
            dt,
            dt_over_ne: params.dt_over_ne.unwrap_or(0.1),
            t_final: params.t_final.unwrap_or(match experiment {
                Advect2d => period,
                _ => 2.5,
            }),
            operator: params.operator.unwrap_or(OperatorKind::APg),
            scheme: params.scheme.unwrap_or(match experiment {
                Advect2d => Scheme::Rk3,
                _ => Scheme::Centered,
            }),
            output: params.output.unwrap_or_else(|| PathBuf::from("out")),
            quadrature: params.quadrature,
            upwind_factor: params.upwind_factor.unwrap_or(1.0),
            record_every: params.record_every.unwrap_or(1),
            cfl_max: params.cfl_max.unwrap_or(2.0),
            cfl_steps: params.cfl_steps.unwrap_or(40),
            test,
            period,
            upwind: params.upwind.unwrap_or(true),
            snapshot_every: params.snapshot_every.unwrap_or(0),
            samples_per_line: params.samples_per_line.unwrap_or(8),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                bad(format!("{name} must be positive and finite, got {v}"))
            }
        };
        use Experiment::*;
        let e = self.experiment;
        if !(1..=24).contains(&self.p) {
            return bad(format!("p must be between 1 and 24, got {}", self.p));
        }
        let min_ne = if e == Advect2d { 1 } else { 2 };
        if let Some(&n) = self.ne.iter().find(|&&n| n < min_ne) {
            return bad(format!("ne must be at least {min_ne}, got {n}"));
        }
        if e.is_convergence() {
            let mut distinct = self.ne.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 3 {
                return bad("convergence runs need at least 3 distinct ne values".into());
            }
            positive("dt_over_ne", self.dt_over_ne)?;
        } else if self.ne.len() != 1 {
            return bad(format!("{} takes a single ne, got {:?}", e.name(), self.ne));
        }
        positive("L", self.length)?;
        if matches!(e, Advect1d | Dispersion | Stability) && !(self.u.is_finite() && self.u != 0.0)
        {
            return bad(format!("u must be finite and non-zero, got {}", self.u));
        }
        if matches!(e, Advect1d | Dispersion | Stability | Advect2d) {
            positive("dt", self.dt)?;
        }
        if matches!(e, Advect1d | Advect2d) {
            positive("T", self.t_final)?;
        }
        if let Some(q) = self.quadrature {
            if q == 0 {
                return bad("quadrature must be at least 1".into());
            }
        }
        if !(self.upwind_factor.is_finite() && self.upwind_factor >= 0.0) {
            return bad(format!(
                "upwind_factor must be finite and non-negative, got {}",
                self.upwind_factor
            ));
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if e == Stability {
            positive("cfl_max", self.cfl_max)?;
            if self.cfl_steps == 0 {
                return bad("cfl_steps must be at least 1".into());
            }
        }
        if e == Advect2d {
            positive("period", self.period)?;
            if self.scheme != Scheme::Rk3 {
                return bad("advect2d runs with rk3 only".into());
            }
            if self.length != 1.0 {
                return bad("advect2d runs on the unit square; L must be 1".into());
            }
            if self.quadrature.is_some() {
                return bad("advect2d does not take a quadrature override".into());
            }
            if self.samples_per_line == 0 {
                return bad("samples_per_line must be at least 1".into());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
