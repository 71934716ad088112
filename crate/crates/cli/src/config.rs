//! Run configuration: a single TOML file with flat keys.
//!
//! ```toml
//! model = "minkowski"          # minkowski | euclidean
//!
//! omega = "ellipse"            # ball | ellipse
//! omega_center = [0.0, 0.0]
//! omega_semi_axes = [1.0, 0.8] # ellipse only
//!
//! omega_tilde = "ball"
//! omega_tilde_center = [0.0, 0.0]
//! omega_tilde_radius = 0.4     # ball only
//!
//! n_rho = 32
//! n_phi = 64
//! homotopy = true
//! homotopy_steps = 12
//! seed = "radial"              # radial | quadratic | file
//! output_dir = "out"
//! ```
//!
//! Every other key has a default; unknown keys are rejected. Relative paths
//! are taken relative to the directory holding the configuration file.

use serde::Deserialize;
use std::path::{Path, PathBuf};

use cmcgrad::homotopy::{DEFAULT_BISECTIONS, DEFAULT_STEPS};
use cmcgrad::{ConvexDomain, HomotopySchedule, ModelKind, ProblemSpec, ReportTolerances, SolveOptions};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Ball,
    Ellipse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedStrategy {
    /// Closed-form radial profile on the anchor ball pair.
    Radial,
    Quadratic,
    /// A stored `field.json`, resampled onto the run's grid.
    File,
}

fn d_n_rho() -> usize {
    32
}
fn d_n_phi() -> usize {
    64
}
fn d_true() -> bool {
    true
}
fn d_steps() -> usize {
    DEFAULT_STEPS
}
fn d_bisections() -> usize {
    DEFAULT_BISECTIONS
}
fn d_seed() -> SeedStrategy {
    SeedStrategy::Radial
}
fn d_output() -> PathBuf {
    PathBuf::from("cmcgrad-out")
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,

    pub omega: DomainKind,
    #[serde(default)]
    pub omega_center: [f64; 2],
    pub omega_radius: Option<f64>,
    pub omega_semi_axes: Option<[f64; 2]>,

    pub omega_tilde: DomainKind,
    #[serde(default)]
    pub omega_tilde_center: [f64; 2],
    pub omega_tilde_radius: Option<f64>,
    pub omega_tilde_semi_axes: Option<[f64; 2]>,

    #[serde(default = "d_n_rho")]
    pub n_rho: usize,
    #[serde(default = "d_n_phi")]
    pub n_phi: usize,

    pub tol_residual: Option<f64>,
    pub max_newton: Option<usize>,
    pub armijo_factor: Option<f64>,
    pub armijo_c: Option<f64>,
    pub eps_convexity: Option<f64>,
    pub eps_space: Option<f64>,

    #[serde(default = "d_true")]
    pub homotopy: bool,
    #[serde(default = "d_steps")]
    pub homotopy_steps: usize,
    #[serde(default = "d_bisections")]
    pub homotopy_bisections: usize,

    #[serde(default = "d_seed")]
    pub seed: SeedStrategy,
    pub seed_file: Option<PathBuf>,

    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    /// Also transform the solution onto the target and record dual consistency.
    #[serde(default)]
    pub dual: bool,

    pub lambda_slack_factor: Option<f64>,
    pub obliqueness_floor: Option<f64>,
    pub min_eigenvalue: Option<f64>,
    pub mass_balance_tol: Option<f64>,
    pub flux_identity_tol: Option<f64>,
    pub dual_consistency_tol: Option<f64>,

    #[serde(skip)]
    base_dir: PathBuf,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn build_domain(
    name: &str,
    kind: DomainKind,
    center: [f64; 2],
    radius: Option<f64>,
    semi_axes: Option<[f64; 2]>,
) -> Result<ConvexDomain, CliError> {
    let made = match (kind, radius, semi_axes) {
        (DomainKind::Ball, Some(r), None) => ConvexDomain::ball(center, r),
        (DomainKind::Ellipse, None, Some(ab)) => ConvexDomain::ellipse(center, ab),
        (DomainKind::Ball, _, _) => return Err(config_err(format!("{name}: a ball needs {name}_radius and no {name}_semi_axes"))),
        (DomainKind::Ellipse, _, _) => {
            return Err(config_err(format!("{name}: an ellipse needs {name}_semi_axes and no {name}_radius")))
        }
    };
    made.map_err(|e| config_err(format!("{name}: {e}")))
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn seed_file(&self) -> Option<PathBuf> {
        self.seed_file.as_deref().map(|p| self.resolve(p))
    }

    pub fn omega_domain(&self) -> Result<ConvexDomain, CliError> {
        build_domain("omega", self.omega, self.omega_center, self.omega_radius, self.omega_semi_axes)
    }

    pub fn omega_tilde_domain(&self) -> Result<ConvexDomain, CliError> {
        build_domain(
            "omega_tilde",
            self.omega_tilde,
            self.omega_tilde_center,
            self.omega_tilde_radius,
            self.omega_tilde_semi_axes,
        )
    }

    pub fn solve_options(&self) -> SolveOptions {
        let d = SolveOptions::default();
        SolveOptions {
            tol_residual: self.tol_residual.unwrap_or(d.tol_residual),
            max_newton: self.max_newton.unwrap_or(d.max_newton),
            armijo_factor: self.armijo_factor.unwrap_or(d.armijo_factor),
            armijo_c: self.armijo_c.unwrap_or(d.armijo_c),
            eps_convexity: self.eps_convexity.unwrap_or(d.eps_convexity),
            eps_space: self.eps_space.unwrap_or(d.eps_space),
        }
    }

    pub fn schedule(&self) -> HomotopySchedule {
        HomotopySchedule { max_bisections: self.homotopy_bisections, ..HomotopySchedule::uniform(self.homotopy_steps) }
    }

    pub fn tolerances(&self) -> ReportTolerances {
        let d = ReportTolerances::default();
        ReportTolerances {
            lambda_slack_factor: self.lambda_slack_factor.unwrap_or(d.lambda_slack_factor),
            obliqueness_floor: self.obliqueness_floor.unwrap_or(d.obliqueness_floor),
            min_eigenvalue: self.min_eigenvalue.unwrap_or(d.min_eigenvalue),
            mass_balance: self.mass_balance_tol.unwrap_or(d.mass_balance),
            flux_identity: self.flux_identity_tol.unwrap_or(d.flux_identity),
            dual_consistency: self.dual_consistency_tol.unwrap_or(d.dual_consistency),
        }
    }

    /// The primal problem on the configured grid; fails on every hypothesis
    /// violation (including a Minkowski target reaching the unit circle).
    pub fn spec(&self) -> Result<ProblemSpec, CliError> {
        let opts = self.solve_options();
        opts.validate().map_err(|e| config_err(e.to_string()))?;
        let omega = self.omega_domain()?;
        let omega_tilde = self.omega_tilde_domain()?;
        let grid = cmcgrad::MappedGrid::new(&omega, self.n_rho, self.n_phi).map_err(|e| config_err(e.to_string()))?;
        ProblemSpec::with_grid(
            self.model,
            omega,
            omega_tilde,
            std::sync::Arc::new(grid),
            cmcgrad::OperatorKind::Primal,
            opts.eps_space,
        )
        .map_err(|e| config_err(e.to_string()))
    }

    fn validate(&self) -> Result<(), CliError> {
        self.spec()?;
        if self.homotopy {
            if self.homotopy_steps == 0 {
                return Err(config_err("homotopy_steps must be at least 1"));
            }
            if self.seed != SeedStrategy::Radial {
                return Err(config_err("homotopy starts from the radial seed; set seed = \"radial\" or homotopy = false"));
            }
        } else if self.seed == SeedStrategy::Radial {
            let balls = self.omega == DomainKind::Ball && self.omega_tilde == DomainKind::Ball;
            if !balls {
                return Err(config_err("seed = \"radial\" without homotopy needs two balls"));
            }
        }
        match (self.seed, &self.seed_file) {
            (SeedStrategy::File, None) => return Err(config_err("seed = \"file\" needs seed_file")),
            (SeedStrategy::File, Some(_)) | (_, None) => {}
            (_, Some(_)) => return Err(config_err("seed_file is only read with seed = \"file\"")),
        }
        let t = self.tolerances();
        let positive = [
            ("lambda_slack_factor", t.lambda_slack_factor),
            ("min_eigenvalue", t.min_eigenvalue),
            ("mass_balance_tol", t.mass_balance),
            ("flux_identity_tol", t.flux_identity),
            ("dual_consistency_tol", t.dual_consistency),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v >= 0.0) {
                return Err(config_err(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if !t.obliqueness_floor.is_finite() {
            return Err(config_err("obliqueness_floor must be finite"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BALLS: &str = r#"
model = "minkowski"
omega = "ball"
omega_radius = 1.0
omega_tilde = "ball"
omega_tilde_radius = 0.5
"#;

    fn parse(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::parse(text, Path::new("/base"))
    }

    #[test]
    fn defaults_and_paths() {
        let c = parse(BALLS).unwrap();
        assert_eq!((c.n_rho, c.n_phi), (32, 64));
        assert_eq!(c.solve_options(), SolveOptions::default());
        assert_eq!(c.tolerances(), ReportTolerances::default());
        assert_eq!(c.schedule(), HomotopySchedule::default());
        assert_eq!(c.output_dir(), PathBuf::from("/base/cmcgrad-out"));
        assert!(c.homotopy && !c.dual);
    }

    #[test]
    fn overrides() {
        let text = format!("{BALLS}\nmax_newton = 7\nobliqueness_floor = 0.2\nhomotopy_steps = 5\noutput_dir = \"/tmp/x\"\n");
        let c = parse(&text).unwrap();
        assert_eq!(c.solve_options().max_newton, 7);
        assert_eq!(c.tolerances().obliqueness_floor, 0.2);
        assert_eq!(c.schedule().ts.len(), 5);
        assert_eq!(c.output_dir(), PathBuf::from("/tmp/x"));
    }

    #[test]
    fn rejections() {
        let bad = [
            BALLS.replace("0.5", "1.01"),
            BALLS.replace("omega_radius = 1.0", "omega_semi_axes = [1.0, 0.5]"),
            BALLS.replace("minkowski", "hyperbolic"),
            format!("{BALLS}\nunknown_key = 1\n"),
            format!("{BALLS}\nn_phi = 31\n"),
            format!("{BALLS}\nseed = \"file\"\n"),
            format!("{BALLS}\nseed = \"quadratic\"\n"),
            format!("{BALLS}\narmijo_factor = 1.5\n"),
            format!("{BALLS}\nmass_balance_tol = -1\n"),
            BALLS.replace("omega_radius = 1.0", "omega_radius = -1.0"),
        ];
        for text in bad {
            assert!(matches!(parse(&text), Err(CliError::Config(_))), "accepted:\n{text}");
        }
        // A target reaching the unit circle is fine for the Euclidean model.
        assert!(parse(&BALLS.replace("0.5", "1.01").replace("minkowski", "euclidean")).is_ok());
    }

    #[test]
    fn seed_rules() {
        let direct = format!("{BALLS}\nhomotopy = false\n");
        assert_eq!(parse(&direct).unwrap().seed, SeedStrategy::Radial);
        assert!(parse(&format!("{direct}seed = \"quadratic\"\n")).is_ok());
        let file = parse(&format!("{direct}seed = \"file\"\nseed_file = \"f.json\"\n")).unwrap();
        assert_eq!(file.seed_file(), Some(PathBuf::from("/base/f.json")));
        let ellipse = "model = \"euclidean\"\nomega = \"ellipse\"\nomega_semi_axes = [1.0, 0.8]\nomega_tilde = \"ball\"\nomega_tilde_radius = 0.5\nhomotopy = false\n";
        assert!(parse(ellipse).is_err());
        assert!(parse(&format!("{ellipse}seed = \"quadratic\"\n")).is_ok());
    }
}
