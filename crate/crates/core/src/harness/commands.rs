//! The work behind each subcommand, returning values the CLI renders.

use std::path::PathBuf;

use super::config::{Mode, Precision, RunConfig};
use super::plot::{log_plot, Series};
use super::{write_file, HarnessError};
use crate::bounds::{compute_constants, ProblemConstants, RateConstantsFull};
use crate::gossip::gossip_run;
use crate::objective::AuditReport;
use crate::real::{DoubleDouble, Real};
use crate::simulator::{monte_carlo, run, Aggregate, Problem, SimConfig, Trace};
use crate::splitting::{spectral_certificate, SpectralCertificate};

pub const AUDIT_RANGE: (f64, f64) = (-50.0, 50.0);
pub const AUDIT_SAMPLES: usize = 1001;
const PLOT_POINTS: usize = 1500;

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub n: usize,
    pub delta: f64,
    pub delta_max: f64,
    pub audit: AuditReport,
    pub certificate: SpectralCertificate,
    pub reference_grad_norm: f64,
    pub f_star: f64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.audit.passed()
            && self.certificate.holds(1e-10)
            && self.certificate.split_residual <= 1e-12
            && self.certificate.identity_residual <= 1e-10
    }

    pub fn render(&self) -> String {
        let c = &self.certificate;
        let mut out = format!(
            "network: n = {}, delta = {}, Delta = {}\n",
            self.n, self.delta, self.delta_max
        );
        out += &format!(
            "assumption audit on [{}, {}] ({} samples): {}\n",
            self.audit.lo,
            self.audit.hi,
            self.audit.samples,
            if self.audit.passed() { "pass" } else { "FAIL" }
        );
        for a in self.audit.agents.iter().filter(|a| !a.passed()) {
            out += &format!("  agent {} ({}): {}\n", a.agent, a.label, a.violations[0]);
        }
        out += &format!(
            "eig(H) in [{:.6}, {:.6}], bound [{:.6}, {:.6}]\n",
            c.h_eig.0, c.h_eig.1, c.h_bounds.0, c.h_bounds.1
        );
        out += &format!(
            "D_ii in [{:.6}, {:.6}], bound [{:.6}, {:.6}]\n",
            c.d_range.0, c.d_range.1, c.d_bounds.0, c.d_bounds.1
        );
        out += &format!(
            "eig(B) in [{:.6}, {:.6}], bound [0, {:.6}]\n",
            c.b_eig.0, c.b_eig.1, c.b_upper
        );
        out += &format!(
            "eig(D^-1/2 B D^-1/2) in [{:.6}, {:.6}], bound [0, {:.6}]\n",
            c.normalized_b_eig.0, c.normalized_b_eig.1, c.spectra.rho
        );
        out += &format!(
            "eig(Hhat^-1) in [{:.6}, {:.6}], bound [{:.6}, {:.6}]\n",
            c.hat_inv_eig.0, c.hat_inv_eig.1, c.spectra.lambda, c.spectra.big_lambda
        );
        out += &format!(
            "|H - (D - B)| = {:e}, splitting identity residual = {:e}\n",
            c.split_residual, c.identity_residual
        );
        out += &format!(
            "F* = {}, ||g(x*)|| = {:e}\n",
            self.f_star, self.reference_grad_norm
        );
        out += if self.passed() {
            "validation: pass\n"
        } else {
            "validation: FAIL\n"
        };
        out
    }
}

pub fn validate(cfg: &RunConfig) -> Result<ValidationReport, HarnessError> {
    let problem = cfg.problem::<f64>()?;
    let obj = &problem.obj;
    let audit = obj.audit_assumptions(AUDIT_RANGE.0, AUDIT_RANGE.1, AUDIT_SAMPLES)?;
    let certificate = spectral_certificate(obj, &vec![0.0; obj.n()])?;
    Ok(ValidationReport {
        n: obj.n(),
        delta: obj.net().delta(),
        delta_max: obj.net().delta_max(),
        audit,
        certificate,
        reference_grad_norm: problem.reference.grad_norm,
        f_star: problem.f_star(),
    })
}

#[derive(Debug, Clone, Copy)]
pub struct BoundsReport {
    pub pc: ProblemConstants,
    pub rc: RateConstantsFull,
}

pub fn bounds(cfg: &RunConfig) -> Result<BoundsReport, HarnessError> {
    let problem = cfg.problem::<f64>()?;
    let f_gap0 = problem.gap(&vec![0.0; problem.n()])?;
    let pc = ProblemConstants::from_objective(&problem.obj, cfg.newton.epsilon, f_gap0);
    let rc = compute_constants(&pc, cfg.newton.policy)?;
    Ok(BoundsReport { pc, rc })
}

pub fn write_bounds(cfg: &RunConfig, report: &BoundsReport) -> Result<PathBuf, HarnessError> {
    let path = cfg.output_dir().join(&cfg.output.bounds);
    write_file(&path, &report.rc.to_key_values(&report.pc))?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    /// The run with the base seed.
    pub trace: Trace,
    pub aggregate: Option<Aggregate>,
}

fn newton_in<T: Real>(cfg: &RunConfig, sim: &SimConfig) -> Result<NewtonOutcome, HarnessError> {
    let problem: Problem<T> = cfg.problem()?;
    if cfg.run.trials == 1 {
        return Ok(NewtonOutcome {
            trace: run(&problem, sim)?,
            aggregate: None,
        });
    }
    let mut agg = monte_carlo(&problem, sim, cfg.run.trials)?;
    let trace = agg.traces[0].clone();
    agg.traces.clear();
    Ok(NewtonOutcome {
        trace,
        aggregate: Some(agg),
    })
}

pub fn run_newton(cfg: &RunConfig) -> Result<NewtonOutcome, HarnessError> {
    let sim = cfg.sim_config();
    match cfg.run.precision {
        Precision::F64 => newton_in::<f64>(cfg, &sim),
        Precision::DoubleDouble => newton_in::<DoubleDouble>(cfg, &sim),
    }
}

pub fn run_gossip(cfg: &RunConfig, seed: u64) -> Result<Trace, HarnessError> {
    let locals = cfg.locals::<f64>()?;
    let net = cfg.network()?;
    Ok(gossip_run(&locals, net.graph(), &cfg.gossip_config(seed))?)
}

fn thin(trace: &Trace) -> Vec<(f64, f64)> {
    let step = trace.rows.len().div_ceil(PLOT_POINTS).max(1);
    let mut pts: Vec<(f64, f64)> = trace
        .rows
        .iter()
        .step_by(step)
        .map(|r| (r.t as f64, r.rel_err.abs()))
        .collect();
    let last = trace.last();
    if pts.last().map(|p| p.0) != Some(last.t as f64) {
        pts.push((last.t as f64, last.rel_err.abs()));
    }
    pts
}

pub fn rel_err_plot(series: &[(&str, &Trace)]) -> String {
    let series: Vec<Series> = series
        .iter()
        .map(|(label, tr)| Series {
            label: label.to_string(),
            points: thin(tr),
        })
        .collect();
    log_plot(
        "relative error of the objective",
        "iteration",
        "relative error",
        &series,
    )
}

/// Settling iterations of each algorithm over `trials` consecutive seeds.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub threshold: f64,
    pub newton_horizon: u64,
    pub gossip_horizon: u64,
    pub newton: Vec<Option<u64>>,
    pub gossip: Vec<Option<u64>>,
    pub newton_trace: Trace,
    pub gossip_trace: Trace,
}

/// Mean with runs that never settle counted as `horizon + 1`.
pub fn censored_mean(v: &[Option<u64>], horizon: u64) -> f64 {
    v.iter()
        .map(|s| s.unwrap_or(horizon + 1) as f64)
        .sum::<f64>()
        / v.len().max(1) as f64
}

impl Comparison {
    pub fn newton_mean(&self) -> f64 {
        censored_mean(&self.newton, self.newton_horizon)
    }

    pub fn gossip_mean(&self) -> f64 {
        censored_mean(&self.gossip, self.gossip_horizon)
    }

    pub fn newton_faster(&self) -> bool {
        self.newton_mean() < self.gossip_mean()
    }

    pub fn render(&self) -> String {
        let unsettled = |v: &[Option<u64>]| v.iter().filter(|s| s.is_none()).count();
        format!(
            "iterations until rel_err stays <= {:e} ({} seeds)\n  network newton: mean {:.1} (horizon {}, {} unsettled)\n  gossip:         mean {:.1} (horizon {}, {} unsettled)\n",
            self.threshold,
            self.newton.len(),
            self.newton_mean(),
            self.newton_horizon,
            unsettled(&self.newton),
            self.gossip_mean(),
            self.gossip_horizon,
            unsettled(&self.gossip),
        )
    }
}

fn newton_settling<T: Real>(cfg: &RunConfig) -> Result<(Vec<Option<u64>>, Trace), HarnessError> {
    let problem: Problem<T> = cfg.problem()?;
    let base = cfg.sim_config();
    let mut first = None;
    let mut out = Vec::with_capacity(cfg.run.trials);
    for k in 0..cfg.run.trials as u64 {
        let tr = run(
            &problem,
            &SimConfig {
                seed: base.seed.wrapping_add(k),
                ..base.clone()
            },
        )?;
        out.push(tr.settling_iteration(cfg.run.threshold));
        first.get_or_insert(tr);
    }
    Ok((out, first.expect("trials >= 1")))
}

pub fn compare(cfg: &RunConfig) -> Result<Comparison, HarnessError> {
    let (newton, newton_trace) = match cfg.run.precision {
        Precision::F64 => newton_settling::<f64>(cfg)?,
        Precision::DoubleDouble => newton_settling::<DoubleDouble>(cfg)?,
    };
    let mut gossip = Vec::with_capacity(cfg.run.trials);
    let mut gossip_trace = None;
    for k in 0..cfg.run.trials as u64 {
        let tr = run_gossip(cfg, cfg.run.seed.wrapping_add(k))?;
        gossip.push(tr.settling_iteration(cfg.run.threshold));
        gossip_trace.get_or_insert(tr);
    }
    Ok(Comparison {
        threshold: cfg.run.threshold,
        newton_horizon: cfg.run.iters,
        gossip_horizon: cfg.gossip.iters,
        newton,
        gossip,
        newton_trace,
        gossip_trace: gossip_trace.expect("trials >= 1"),
    })
}

/// Runs the configured mode and writes its artifacts; returns a summary and
/// the written paths.
pub fn execute(cfg: &RunConfig, mode: Mode) -> Result<(String, Vec<PathBuf>), HarnessError> {
    let dir = cfg.output_dir();
    let mut written = Vec::new();
    let mut put = |name: &str, content: &str| -> Result<(), HarnessError> {
        let path = dir.join(name);
        write_file(&path, content)?;
        written.push(path);
        Ok(())
    };
    let summary = match mode {
        Mode::Newton => {
            let out = run_newton(cfg)?;
            put(&cfg.output.trace, &out.trace.to_csv())?;
            if let Some(agg) = &out.aggregate {
                put(&cfg.output.aggregate, &agg.to_csv())?;
            }
            if !cfg.output.plot.is_empty() {
                put(
                    &cfg.output.plot,
                    &rel_err_plot(&[("network newton", &out.trace)]),
                )?;
            }
            let last = out.trace.last();
            format!(
                "network newton ({}): t = {}, F = {}, rel_err = {:e}, messages = {}\n",
                out.trace.precision, last.t, last.f, last.rel_err, last.messages
            )
        }
        Mode::Gossip => {
            let tr = run_gossip(cfg, cfg.run.seed)?;
            put(&cfg.output.gossip_trace, &tr.to_csv())?;
            if !cfg.output.plot.is_empty() {
                put(&cfg.output.plot, &rel_err_plot(&[("gossip", &tr)]))?;
            }
            let last = tr.last();
            format!(
                "gossip: t = {}, sum f = {}, rel_err = {:e}\n",
                last.t, last.f, last.rel_err
            )
        }
        Mode::Compare => {
            let c = compare(cfg)?;
            put(&cfg.output.trace, &c.newton_trace.to_csv())?;
            put(&cfg.output.gossip_trace, &c.gossip_trace.to_csv())?;
            if !cfg.output.plot.is_empty() {
                put(
                    &cfg.output.plot,
                    &rel_err_plot(&[
                        ("network newton", &c.newton_trace),
                        ("gossip", &c.gossip_trace),
                    ]),
                )?;
            }
            c.render()
        }
    };
    Ok((summary, written))
}
