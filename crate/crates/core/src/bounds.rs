//! Closed-form convergence constants: the stepsize ceiling, the linear rate
//! `beta`, the quadratic-phase constants `Gamma_1`, `Gamma_2`, `C_1`, `C_2`,
//! `Gamma(t)`, and the onset bound `t_bar`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::PenalizedObjective;
use crate::real::Real;
use crate::splitting::RateSpectra;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("invalid problem constants: {0}")]
    InvalidConstants(String),
    #[error("stepsize {epsilon} is inadmissible under the {policy} policy (limit {limit}, eps_max = {eps_max})")]
    EpsilonTooLarge {
        epsilon: f64,
        limit: f64,
        eps_max: f64,
        policy: StepsizePolicy,
    },
}

/// Which stepsize rule gates a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizePolicy {
    /// `0 < epsilon <= 2 (lambda / Lambda)^2`.
    Limit,
    /// `0 < epsilon < min(1, 2 (lambda / Lambda)^2)`.
    #[default]
    Strict,
    /// Any positive stepsize.
    Unchecked,
}

impl fmt::Display for StepsizePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Limit => "limit",
            Self::Strict => "strict",
            Self::Unchecked => "unchecked",
        })
    }
}

impl StepsizePolicy {
    /// `Ok(())` if `epsilon` is admissible given `eps_max`.
    pub fn check(self, epsilon: f64, eps_max: f64) -> Result<(), BoundsError> {
        let (ok, limit) = match self {
            Self::Limit => (epsilon <= eps_max, eps_max),
            Self::Strict => {
                let limit = eps_max.min(1.0);
                (epsilon < limit, limit)
            }
            Self::Unchecked => (epsilon.is_finite(), f64::INFINITY),
        };
        if epsilon > 0.0 && ok {
            Ok(())
        } else {
            Err(BoundsError::EpsilonTooLarge {
                epsilon,
                limit,
                eps_max,
                policy: self,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub m: f64,
    pub big_m: f64,
    pub lip: f64,
    pub delta: f64,
    pub delta_max: f64,
    pub alpha: f64,
    pub n: usize,
    pub epsilon: f64,
    pub f_gap0: f64,
}

impl ProblemConstants {
    pub fn from_objective<T: Real>(obj: &PenalizedObjective<T>, epsilon: f64, f_gap0: f64) -> Self {
        Self {
            m: obj.m(),
            big_m: obj.big_m(),
            lip: obj.lip(),
            delta: obj.net().delta(),
            delta_max: obj.net().delta_max(),
            alpha: obj.alpha(),
            n: obj.n(),
            epsilon,
            f_gap0,
        }
    }

    pub fn validate(&self) -> Result<(), BoundsError> {
        let bad = |msg: String| Err(BoundsError::InvalidConstants(msg));
        let all = [
            self.m,
            self.big_m,
            self.lip,
            self.delta,
            self.delta_max,
            self.alpha,
            self.epsilon,
            self.f_gap0,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all constants must be finite".into());
        }
        if !(self.m > 0.0 && self.m <= self.big_m) {
            return bad(format!(
                "need 0 < m <= M, got m = {}, M = {}",
                self.m, self.big_m
            ));
        }
        if self.lip < 0.0 {
            return bad(format!("need L >= 0, got {}", self.lip));
        }
        if !(self.delta > 0.0 && self.delta <= self.delta_max && self.delta_max < 1.0) {
            return bad(format!(
                "need 0 < delta <= Delta < 1, got {} and {}",
                self.delta, self.delta_max
            ));
        }
        if self.alpha <= 0.0 {
            return bad(format!("need alpha > 0, got {}", self.alpha));
        }
        if self.n < 2 {
            return bad(format!("need n >= 2, got {}", self.n));
        }
        if self.epsilon <= 0.0 {
            return bad(format!("need epsilon > 0, got {}", self.epsilon));
        }
        if self.f_gap0 < 0.0 {
            return bad(format!("need F(x(0)) - F* >= 0, got {}", self.f_gap0));
        }
        Ok(())
    }
}

/// How the onset bound `t_bar` came out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnsetStatus {
    Finite,
    /// `C_2 = 0`: `Gamma(t) = Gamma_2` for all `t`, reported as `+inf`.
    Degenerate,
    /// `(1 - Gamma_2) / (C_2 Gamma_2) >= 1`: the formula is nonpositive and
    /// holds trivially; the signed value is kept.
    Vacuous,
    /// `Gamma_2 >= 1` or `beta` outside `(0, 1)`, so the bound says nothing.
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstantsFull {
    pub rho: f64,
    pub lambda: f64,
    pub big_lambda: f64,
    pub eps_max: f64,
    /// `epsilon lambda / n - epsilon^2 Lambda^2 / (2 n lambda)`, the per-step
    /// expected decrease per unit `||g||^2`.
    pub descent_coefficient: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub c1: f64,
    pub c2: f64,
    pub t_bar: f64,
    pub t_bar_status: OnsetStatus,
}

pub fn compute_constants(
    pc: &ProblemConstants,
    policy: StepsizePolicy,
) -> Result<RateConstantsFull, BoundsError> {
    pc.validate()?;
    let ProblemConstants {
        m,
        big_m,
        lip,
        delta,
        delta_max,
        alpha,
        n,
        epsilon: eps,
        f_gap0,
    } = *pc;
    let nf = n as f64;
    let RateSpectra {
        rho,
        lambda,
        big_lambda,
    } = RateSpectra::new(m, big_m, delta, delta_max, alpha);
    let eps_max = 2.0 * (lambda / big_lambda).powi(2);
    policy.check(eps, eps_max)?;

    let descent_coefficient =
        eps * lambda / nf - eps * eps * big_lambda * big_lambda / (2.0 * nf * lambda);
    let beta =
        alpha * m * eps * (2.0 * lambda * lambda - eps * big_lambda * big_lambda) / (nf * lambda);

    let lo_d = 2.0 * (1.0 - delta_max) + alpha * m;
    let hi_d = 2.0 * (1.0 - delta) + alpha * big_m;
    let contraction = 1.0 - eps + eps * rho * rho;
    let gamma2 = ((nf - 1.0 + contraction * contraction) / nf).sqrt();
    let c1 = (eps * alpha * lip * big_lambda / lo_d).sqrt();
    let gamma1 = nf * hi_d.sqrt() * alpha * lip * eps * big_lambda / (2.0 * lo_d);
    let c2 = c1 * (2.0 * nf * nf / lambda * f_gap0).powf(0.25);

    let (t_bar, t_bar_status) = if !(gamma2 < 1.0) || !(beta > 0.0 && beta < 1.0) {
        (f64::INFINITY, OnsetStatus::NotApplicable)
    } else if c2 == 0.0 {
        (f64::INFINITY, OnsetStatus::Degenerate)
    } else {
        let ratio = (1.0 - gamma2) / (c2 * gamma2);
        let value = 4.0 * ratio.ln() / (1.0 - beta).ln() + 2.0;
        (
            value,
            if ratio >= 1.0 {
                OnsetStatus::Vacuous
            } else {
                OnsetStatus::Finite
            },
        )
    };

    Ok(RateConstantsFull {
        rho,
        lambda,
        big_lambda,
        eps_max,
        descent_coefficient,
        beta,
        gamma1,
        gamma2,
        c1,
        c2,
        t_bar,
        t_bar_status,
    })
}

/// `Gamma(t) = Gamma_2 (1 + C_2 (1 - beta)^{(t - 2)/4})`, for `t >= 2`.
pub fn gamma_t(rc: &RateConstantsFull, t: u64) -> f64 {
    let exponent = (t.max(2) - 2) as f64 / 4.0;
    rc.gamma2 * (1.0 + rc.c2 * (1.0 - rc.beta).powf(exponent))
}

/// `(1 - beta)^t (F(x(0)) - F*)`.
pub fn linear_envelope(rc: &RateConstantsFull, pc: &ProblemConstants, t: u64) -> f64 {
    linear_envelope_value(rc.beta, pc.f_gap0, t)
}

pub fn linear_envelope_value(beta: f64, f_gap0: f64, t: u64) -> f64 {
    if t == 0 {
        return f_gap0;
    }
    (t as f64 * (-beta).ln_1p()).exp() * f_gap0
}

/// Admissible `theta` range `(0, (1 - Gamma(t)) / (Gamma_1 Gamma(t)))`;
/// unbounded above when `Gamma_1 = 0`, empty (upper `<= 0`) once `Gamma(t) >= 1`.
pub fn theta_window(rc: &RateConstantsFull, t: u64) -> (f64, f64) {
    let g = gamma_t(rc, t);
    let upper = if rc.gamma1 == 0.0 && g < 1.0 {
        f64::INFINITY
    } else {
        (1.0 - g) / (rc.gamma1 * g)
    };
    (0.0, upper)
}

impl RateConstantsFull {
    /// `key = value` lines, one per constant.
    pub fn to_key_values(&self, pc: &ProblemConstants) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        put("n", pc.n.to_string());
        put("alpha", fmt_num(pc.alpha));
        put("epsilon", fmt_num(pc.epsilon));
        put("m", fmt_num(pc.m));
        put("M", fmt_num(pc.big_m));
        put("L", fmt_num(pc.lip));
        put("delta", fmt_num(pc.delta));
        put("Delta", fmt_num(pc.delta_max));
        put("F_gap0", fmt_num(pc.f_gap0));
        put("rho", fmt_num(self.rho));
        put("lambda", fmt_num(self.lambda));
        put("Lambda", fmt_num(self.big_lambda));
        put("eps_max", fmt_num(self.eps_max));
        put("descent_coefficient", fmt_num(self.descent_coefficient));
        put("beta", fmt_num(self.beta));
        put("Gamma1", fmt_num(self.gamma1));
        put("Gamma2", fmt_num(self.gamma2));
        put("C1", fmt_num(self.c1));
        put("C2", fmt_num(self.c2));
        put("t_bar", fmt_num(self.t_bar));
        put(
            "t_bar_status",
            match self.t_bar_status {
                OnsetStatus::Finite => "finite",
                OnsetStatus::Degenerate => "degenerate",
                OnsetStatus::Vacuous => "vacuous",
                OnsetStatus::NotApplicable => "not_applicable",
            }
            .to_string(),
        );
        let t = self.theta_reference_iteration();
        put("theta_window_t", t.to_string());
        put("theta_upper", fmt_num(theta_window(self, t).1));
        out
    }

    /// `ceil(t_bar)` when the onset bound is finite, else the earliest
    /// iteration the quadratic-phase bound speaks about.
    pub fn theta_reference_iteration(&self) -> u64 {
        match self.t_bar_status {
            OnsetStatus::Finite => self.t_bar.ceil().max(2.0) as u64,
            _ => 2,
        }
    }

    /// Aligned two-column table for terminal output.
    pub fn table(&self, pc: &ProblemConstants) -> String {
        self.to_key_values(pc)
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| format!("{k:<20} {v}\n"))
            .collect()
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_agent_pc() -> ProblemConstants {
        ProblemConstants {
            m: 2.0,
            big_m: 2.0,
            lip: 0.0,
            delta: 0.5,
            delta_max: 0.5,
            alpha: 1.0,
            n: 5,
            epsilon: 0.8,
            f_gap0: 55.0 - 50.0 / 21.0,
        }
    }

    #[test]
    fn five_agent_constants() {
        let rc = compute_constants(&five_agent_pc(), StepsizePolicy::Strict).unwrap();
        assert!((rc.rho - 1.0 / 3.0).abs() < 1e-15);
        assert!((rc.lambda - 1.0 / 3.0).abs() < 1e-15);
        assert!((rc.big_lambda - 4.0 / 9.0).abs() < 1e-15);
        assert!((rc.eps_max - 1.125).abs() < 1e-14);
        // beta = 1.6 (2/9 - 12.8/81) / (5/3) = 24.96 / 405.
        assert!((rc.beta - 24.96 / 405.0).abs() < 1e-15);
        // Gamma_2^2 = (4 + (1 - 0.8 + 0.8/9)^2) / 5 = (4 + (2.6/9)^2) / 5.
        let g2sq = (4.0 + (2.6f64 / 9.0).powi(2)) / 5.0;
        assert!((rc.gamma2 - g2sq.sqrt()).abs() < 1e-15);
        assert_eq!((rc.c1, rc.c2, rc.gamma1), (0.0, 0.0, 0.0));
        assert_eq!(rc.t_bar_status, OnsetStatus::Degenerate);
        assert!(rc.t_bar.is_infinite());
        for t in [2, 3, 50, 10_000] {
            assert_eq!(gamma_t(&rc, t), rc.gamma2);
        }
        assert!((rc.beta - 2.0 * 2.0 * rc.descent_coefficient).abs() < 1e-15);
    }

    #[test]
    fn five_agent_stepsize_gates() {
        let mut pc = five_agent_pc();
        pc.epsilon = 1.2;
        let err = compute_constants(&pc, StepsizePolicy::Strict).unwrap_err();
        assert!(matches!(err, BoundsError::EpsilonTooLarge { limit, .. } if limit == 1.0));
        assert!(compute_constants(&pc, StepsizePolicy::Limit).is_err());
        pc.epsilon = 1.1;
        assert!(compute_constants(&pc, StepsizePolicy::Limit).is_ok());
        assert!(compute_constants(&pc, StepsizePolicy::Strict).is_err());
        pc.epsilon = 1.125;
        assert!(compute_constants(&pc, StepsizePolicy::Limit).is_ok());
        pc.epsilon = 3.0;
        let rc = compute_constants(&pc, StepsizePolicy::Unchecked).unwrap();
        assert!(rc.beta < 0.0);
        assert_eq!(rc.t_bar_status, OnsetStatus::NotApplicable);
    }

    #[test]
    fn invalid_constants_rejected() {
        let base = five_agent_pc();
        let cases = [
            ProblemConstants { m: 0.0, ..base },
            ProblemConstants { m: 3.0, ..base },
            ProblemConstants { lip: -1.0, ..base },
            ProblemConstants { delta: 0.0, ..base },
            ProblemConstants {
                delta_max: 1.0,
                ..base
            },
            ProblemConstants { delta: 0.6, ..base },
            ProblemConstants { alpha: 0.0, ..base },
            ProblemConstants { n: 1, ..base },
            ProblemConstants {
                f_gap0: -1.0,
                ..base
            },
            ProblemConstants {
                epsilon: f64::NAN,
                ..base
            },
        ];
        for pc in cases {
            assert!(
                matches!(
                    compute_constants(&pc, StepsizePolicy::Unchecked),
                    Err(BoundsError::InvalidConstants(_))
                ),
                "{pc:?}"
            );
        }
    }

    #[test]
    fn small_lipschitz_instance() {
        let pc = ProblemConstants {
            m: 1.0,
            big_m: 1.0,
            lip: 1.0,
            delta: 0.5,
            delta_max: 0.5,
            alpha: 1.0,
            n: 2,
            epsilon: 0.5,
            f_gap0: 1.0,
        };
        let rc = compute_constants(&pc, StepsizePolicy::Strict).unwrap();
        for v in [
            rc.rho,
            rc.lambda,
            rc.big_lambda,
            rc.eps_max,
            rc.beta,
            rc.gamma1,
            rc.gamma2,
            rc.c1,
            rc.c2,
        ] {
            assert!(v.is_finite() && v > 0.0);
        }
        assert!(rc.beta < 1.0);
        assert!(rc.t_bar.is_finite());
        assert!(gamma_t(&rc, 2) == rc.gamma2 * (1.0 + rc.c2));
    }

    #[test]
    fn envelope_endpoints() {
        let pc = five_agent_pc();
        let rc = compute_constants(&pc, StepsizePolicy::Strict).unwrap();
        assert_eq!(linear_envelope(&rc, &pc, 0), pc.f_gap0);
        let e100 = linear_envelope(&rc, &pc, 100);
        assert!((e100 / ((1.0 - rc.beta).powi(100) * pc.f_gap0) - 1.0).abs() < 1e-12);
        assert_eq!(linear_envelope_value(0.0, 7.0, 1000), 7.0);
    }

    #[test]
    fn theta_window_shapes() {
        let rc = compute_constants(&five_agent_pc(), StepsizePolicy::Strict).unwrap();
        assert_eq!(theta_window(&rc, 10), (0.0, f64::INFINITY));
        let rc = RateConstantsFull {
            gamma1: 2.0,
            c2: 0.0,
            ..rc
        };
        let (_, hi) = theta_window(&rc, 10);
        assert!((hi - (1.0 - rc.gamma2) / (2.0 * rc.gamma2)).abs() < 1e-15);
    }

    #[test]
    fn key_values_roundtrip() {
        let pc = five_agent_pc();
        let rc = compute_constants(&pc, StepsizePolicy::Strict).unwrap();
        let kv = rc.to_key_values(&pc);
        assert!(kv.contains("eps_max = 1.125"));
        assert!(kv.contains("theta_window_t = 2\ntheta_upper = inf\n"));
        assert!(kv.contains("t_bar = inf"));
        assert!(kv.contains("t_bar_status = degenerate"));
        assert!(rc.table(&pc).lines().count() == kv.lines().count());
    }
}
