//! Local objectives and the penalized network objective
//! `F(x) = 1/2 x'(I - W)x + alpha * sum_i f_i(x_i)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::topology::ConsensusNetwork;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("curvature parameter a = {0} must be positive")]
    NonPositiveCurvature(f64),
    #[error("invalid local constants: {0}")]
    InvalidConstants(String),
    #[error("alpha = {0} must be positive")]
    NonPositiveAlpha(f64),
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty audit interval [{0}, {1}]")]
    EmptyInterval(f64, f64),
    #[error("an audit needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type BregmanFn<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// A scalar local function `f_i` with analytic first and second derivatives
/// and declared constants `m <= f'' <= M`, `|f''(x) - f''(y)| <= lip |x - y|`.
#[derive(Clone)]
pub struct LocalFunction<T> {
    value: ScalarFn<T>,
    grad: ScalarFn<T>,
    hess: ScalarFn<T>,
    bregman: Option<BregmanFn<T>>,
    m: f64,
    big_m: f64,
    lip: f64,
    label: String,
}

impl<T> fmt::Debug for LocalFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LocalFunction")
            .field("label", &self.label)
            .field("m", &self.m)
            .field("M", &self.big_m)
            .field("lip", &self.lip)
            .finish()
    }
}

impl<T: Real> LocalFunction<T> {
    /// Wraps arbitrary callables. The constants are trusted; see
    /// [`PenalizedObjective::audit_assumptions`] for a sampled check.
    pub fn new(
        label: impl Into<String>,
        value: impl Fn(T) -> T + Send + Sync + 'static,
        grad: impl Fn(T) -> T + Send + Sync + 'static,
        hess: impl Fn(T) -> T + Send + Sync + 'static,
        m: f64,
        big_m: f64,
        lip: f64,
    ) -> Result<Self, ObjectiveError> {
        if !(m > 0.0 && big_m >= m && big_m.is_finite() && lip >= 0.0 && lip.is_finite()) {
            return Err(ObjectiveError::InvalidConstants(format!(
                "m = {m}, M = {big_m}, L = {lip}"
            )));
        }
        Ok(Self {
            value: Arc::new(value),
            grad: Arc::new(grad),
            hess: Arc::new(hess),
            bregman: None,
            m,
            big_m,
            lip,
            label: label.into(),
        })
    }

    /// Supplies a cancellation-free Bregman divergence
    /// `f(x) - f(y) - f'(y)(x - y)`.
    pub fn with_bregman(mut self, bregman: impl Fn(T, T) -> T + Send + Sync + 'static) -> Self {
        self.bregman = Some(Arc::new(bregman));
        self
    }

    /// `a (x - b)^2`.
    pub fn quadratic(a: f64, b: f64) -> Result<Self, ObjectiveError> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(ObjectiveError::NonPositiveCurvature(a));
        }
        let (ta, tb) = (T::of(a), T::of(b));
        let two = T::of(2.0);
        Ok(Self::new(
            format!("quadratic(a={a}, b={b})"),
            move |x| ta * (x - tb) * (x - tb),
            move |x| two * ta * (x - tb),
            move |_| two * ta,
            2.0 * a,
            2.0 * a,
            0.0,
        )?
        .with_bregman(move |x, y| ta * (x - y) * (x - y)))
    }

    /// `a (x - b)^2 + c ln cosh(x - b)`, a smooth robust loss with
    /// `f'' = 2a + c sech^2(x - b)` in `[2a, 2a + c]` and
    /// `|f'''| <= 4c / (3 sqrt 3)`.
    pub fn quadratic_log_cosh(a: f64, b: f64, c: f64) -> Result<Self, ObjectiveError> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(ObjectiveError::NonPositiveCurvature(a));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(ObjectiveError::InvalidConstants(format!(
                "c = {c} must be nonnegative"
            )));
        }
        let (ta, tb, tc) = (T::of(a), T::of(b), T::of(c));
        let two = T::of(2.0);
        let ln2 = T::of(2.0).ln();
        // ln cosh z = |z| + ln(1 + e^{-2|z|}) - ln 2, stable for large |z|.
        let log_cosh = move |z: T| {
            let az = z.abs();
            az + (-(two * az)).exp().ln_1p() - ln2
        };
        let lip = 4.0 * c / (3.0 * 3f64.sqrt());
        Self::new(
            format!("quadratic_log_cosh(a={a}, b={b}, c={c})"),
            move |x| ta * (x - tb) * (x - tb) + tc * log_cosh(x - tb),
            move |x| two * ta * (x - tb) + tc * (x - tb).tanh(),
            move |x| {
                let s = T::one() / (x - tb).cosh();
                two * ta + tc * s * s
            },
            2.0 * a,
            2.0 * a + c,
            lip,
        )
    }

    pub fn value(&self, x: T) -> T {
        (self.value)(x)
    }

    pub fn grad(&self, x: T) -> T {
        (self.grad)(x)
    }

    pub fn hess(&self, x: T) -> T {
        (self.hess)(x)
    }

    /// `f(x) - f(y) - f'(y)(x - y)`.
    pub fn bregman(&self, x: T, y: T) -> T {
        match &self.bregman {
            Some(b) => b(x, y),
            None => self.value(x) - self.value(y) - self.grad(y) * (x - y),
        }
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn big_m(&self) -> f64 {
        self.big_m
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// Serializable description of a local function, used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocalSpec {
    Quadratic { a: f64, b: f64 },
    QuadraticLogCosh { a: f64, b: f64, c: f64 },
}

impl LocalSpec {
    pub fn build<T: Real>(&self) -> Result<LocalFunction<T>, ObjectiveError> {
        match *self {
            LocalSpec::Quadratic { a, b } => LocalFunction::quadratic(a, b),
            LocalSpec::QuadraticLogCosh { a, b, c } => LocalFunction::quadratic_log_cosh(a, b, c),
        }
    }
}

/// The penalized objective over a validated network.
#[derive(Debug, Clone)]
pub struct PenalizedObjective<T = f64> {
    net: Arc<ConsensusNetwork>,
    alpha: f64,
    locals: Vec<LocalFunction<T>>,
    alpha_t: T,
    w_diag: Vec<T>,
    w_nbr: Vec<Vec<(usize, T)>>,
}

impl<T: Real> PenalizedObjective<T> {
    pub fn new(
        net: Arc<ConsensusNetwork>,
        alpha: f64,
        locals: Vec<LocalFunction<T>>,
    ) -> Result<Self, ObjectiveError> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(ObjectiveError::NonPositiveAlpha(alpha));
        }
        if locals.len() != net.n() {
            return Err(ObjectiveError::DimensionMismatch {
                expected: net.n(),
                got: locals.len(),
            });
        }
        let n = net.n();
        let w_diag = (0..n).map(|i| T::of(net.weight(i, i))).collect();
        let w_nbr = (0..n)
            .map(|i| {
                net.neighbors(i)
                    .iter()
                    .map(|&j| (j, T::of(net.weight(i, j))))
                    .collect()
            })
            .collect();
        Ok(Self {
            net,
            alpha,
            locals,
            alpha_t: T::of(alpha),
            w_diag,
            w_nbr,
        })
    }

    /// Builds the objective from serializable specs.
    pub fn from_specs(
        net: Arc<ConsensusNetwork>,
        alpha: f64,
        specs: &[LocalSpec],
    ) -> Result<Self, ObjectiveError> {
        let locals = specs
            .iter()
            .map(LocalSpec::build)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(net, alpha, locals)
    }

    pub fn n(&self) -> usize {
        self.locals.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_t(&self) -> T {
        self.alpha_t
    }

    pub fn net(&self) -> &ConsensusNetwork {
        &self.net
    }

    pub fn net_arc(&self) -> &Arc<ConsensusNetwork> {
        &self.net
    }

    pub fn local(&self, i: usize) -> &LocalFunction<T> {
        &self.locals[i]
    }

    pub fn locals(&self) -> &[LocalFunction<T>] {
        &self.locals
    }

    /// `W_ii` in working precision.
    pub fn w_diag(&self, i: usize) -> T {
        self.w_diag[i]
    }

    /// `(j, W_ij)` for each neighbor `j` of `i`, ascending in `j`.
    pub fn neighbor_weights(&self, i: usize) -> &[(usize, T)] {
        &self.w_nbr[i]
    }

    /// Smallest declared `m` across agents.
    pub fn m(&self) -> f64 {
        self.locals
            .iter()
            .map(LocalFunction::m)
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest declared `M` across agents.
    pub fn big_m(&self) -> f64 {
        self.locals
            .iter()
            .map(LocalFunction::big_m)
            .fold(0.0, f64::max)
    }

    /// Largest declared Hessian Lipschitz constant across agents.
    pub fn lip(&self) -> f64 {
        self.locals
            .iter()
            .map(LocalFunction::lip)
            .fold(0.0, f64::max)
    }

    fn check_len(&self, x: &[T]) -> Result<(), ObjectiveError> {
        if x.len() == self.n() {
            Ok(())
        } else {
            Err(ObjectiveError::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            })
        }
    }

    /// `[(I - W) x]_i` computed from the neighborhood of `i` only.
    pub fn penalty_row(&self, i: usize, x: &[T]) -> T {
        self.w_nbr[i]
            .iter()
            .fold((T::one() - self.w_diag[i]) * x[i], |acc, &(j, w)| {
                acc - w * x[j]
            })
    }

    /// `x'(I - W)x = sum over edges W_ij (x_i - x_j)^2`.
    fn penalty_quadratic(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for (i, nbrs) in self.w_nbr.iter().enumerate() {
            for &(j, w) in nbrs.iter().filter(|(j, _)| *j > i) {
                let d = x[i] - x[j];
                acc = acc + w * d * d;
            }
        }
        acc
    }

    /// `F(x)`.
    pub fn value(&self, x: &[T]) -> Result<T, ObjectiveError> {
        self.check_len(x)?;
        let locals = self
            .locals
            .iter()
            .zip(x)
            .fold(T::zero(), |acc, (f, &xi)| acc + f.value(xi));
        Ok(T::of(0.5) * self.penalty_quadratic(x) + self.alpha_t * locals)
    }

    /// `g_i = [(I - W)x]_i + alpha f_i'(x_i)`.
    pub fn gradient(&self, x: &[T]) -> Result<Vec<T>, ObjectiveError> {
        self.check_len(x)?;
        Ok((0..self.n())
            .map(|i| self.penalty_row(i, x) + self.alpha_t * self.locals[i].grad(x[i]))
            .collect())
    }

    /// Diagonal of `G`, scaled: `alpha f_i''(x_i)`.
    pub fn curvature(&self, x: &[T]) -> Result<Vec<T>, ObjectiveError> {
        self.check_len(x)?;
        Ok(self
            .locals
            .iter()
            .zip(x)
            .map(|(f, &xi)| self.alpha_t * f.hess(xi))
            .collect())
    }

    /// `F(x) - F(y)` for a stationary point `y`, evaluated without subtracting
    /// two nearly equal objective values:
    /// `1/2 e'(I - W)e + alpha sum_i Breg_i(x_i, y_i) + e'g(y)` with `e = x - y`.
    /// The last term vanishes at an exact optimum and absorbs the residual of a
    /// numerical one.
    pub fn gap_from(&self, x: &[T], y: &[T], grad_y: &[T]) -> Result<T, ObjectiveError> {
        self.check_len(x)?;
        self.check_len(y)?;
        let e: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
        let breg = self
            .locals
            .iter()
            .zip(x.iter().zip(y))
            .fold(T::zero(), |acc, (f, (&xi, &yi))| acc + f.bregman(xi, yi));
        let linear = e
            .iter()
            .zip(grad_y)
            .fold(T::zero(), |acc, (&ei, &gi)| acc + ei * gi);
        Ok(T::of(0.5) * self.penalty_quadratic(&e) + self.alpha_t * breg + linear)
    }

    /// Samples every `f_i''` on a uniform grid over `[lo, hi]` and checks the
    /// declared bounds and Lipschitz constant between adjacent grid points.
    pub fn audit_assumptions(
        &self,
        lo: f64,
        hi: f64,
        samples: usize,
    ) -> Result<AuditReport, ObjectiveError> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(ObjectiveError::EmptyInterval(lo, hi));
        }
        if samples < 2 {
            return Err(ObjectiveError::TooFewSamples(samples));
        }
        let grid: Vec<f64> = (0..samples)
            .map(|k| lo + (hi - lo) * k as f64 / (samples - 1) as f64)
            .collect();
        let agents = self
            .locals
            .iter()
            .enumerate()
            .map(|(agent, f)| {
                let mut violations = Vec::new();
                let h: Vec<f64> = grid.iter().map(|&x| f.hess(T::of(x)).as_f64()).collect();
                let slack = |v: f64| 1e-12 * v.abs().max(1.0);
                for (&x, &hx) in grid.iter().zip(&h) {
                    if hx < f.m() - slack(f.m()) {
                        violations.push(Violation::BelowM {
                            x,
                            hess: hx,
                            m: f.m(),
                        });
                    }
                    if hx > f.big_m() + slack(f.big_m()) {
                        violations.push(Violation::AboveM {
                            x,
                            hess: hx,
                            big_m: f.big_m(),
                        });
                    }
                }
                for k in 1..samples {
                    let (dx, dh) = (grid[k] - grid[k - 1], (h[k] - h[k - 1]).abs());
                    if dh > f.lip() * dx + slack(dh) {
                        violations.push(Violation::Lipschitz {
                            x: grid[k - 1],
                            y: grid[k],
                            ratio: dh / dx,
                            lip: f.lip(),
                        });
                    }
                }
                AgentAudit {
                    agent,
                    label: f.label().to_string(),
                    violations,
                }
            })
            .collect();
        Ok(AuditReport {
            lo,
            hi,
            samples,
            agents,
        })
    }
}

impl PenalizedObjective<f64> {
    /// Dense Hessian `I - W + alpha G(x)`.
    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>, ObjectiveError> {
        let curv = self.curvature(x)?;
        let mut h = self.net.penalty_matrix();
        for (i, c) in curv.into_iter().enumerate() {
            h[(i, i)] += c;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    BelowM {
        x: f64,
        hess: f64,
        m: f64,
    },
    AboveM {
        x: f64,
        hess: f64,
        big_m: f64,
    },
    Lipschitz {
        x: f64,
        y: f64,
        ratio: f64,
        lip: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BelowM { x, hess, m } => write!(f, "f''({x}) = {hess} < m = {m}"),
            Violation::AboveM { x, hess, big_m } => write!(f, "f''({x}) = {hess} > M = {big_m}"),
            Violation::Lipschitz { x, y, ratio, lip } => {
                write!(
                    f,
                    "|f''({y}) - f''({x})| / |{y} - {x}| = {ratio} > L = {lip}"
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentAudit {
    pub agent: usize,
    pub label: String,
    pub violations: Vec<Violation>,
}

impl AgentAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub lo: f64,
    pub hi: f64,
    pub samples: usize,
    pub agents: Vec<AgentAudit>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.agents.iter().all(AgentAudit::passed)
    }
}
