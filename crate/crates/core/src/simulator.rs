//! Random-activation driver for the asynchronous protocol.
//!
//! Each iteration one agent, drawn uniformly by a ChaCha8 generator seeded
//! with `seed_from_u64(seed)`, takes its local Newton step and the two-hop
//! reaction runs to completion. Optional wall-clock stamps are drawn from an
//! independent stream of the same generator and never affect the dynamics.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use thiserror::Error;

use crate::agents::{init_agents, AgentError, AgentState};
use crate::bounds::{BoundsError, StepsizePolicy};
use crate::objective::{ObjectiveError, PenalizedObjective};
use crate::real::{norm2, Real};
use crate::splitting::{
    newton_direction, reference_solution, RateSpectra, ReferenceSolution, SplittingError,
};

pub const TRACE_HEADER: &str = "t,active,F,grad_norm,rel_err,weighted_err,messages,clock";
pub const AGGREGATE_HEADER: &str =
    "t,mean_F_gap,std_F_gap,mean_rel_err,std_rel_err,mean_weighted_err,std_weighted_err";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("stepsize {epsilon} is inadmissible under the {policy} policy: need {requirement} (eps_max = {eps_max})")]
    StepsizeInadmissible {
        epsilon: f64,
        eps_max: f64,
        policy: StepsizePolicy,
        requirement: String,
    },
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Splitting(#[from] SplittingError),
    #[error("at least one trial is required")]
    NoTrials,
    #[error("stride must be at least 1")]
    InvalidStride,
}

impl From<BoundsError> for SimError {
    fn from(e: BoundsError) -> Self {
        match e {
            BoundsError::EpsilonTooLarge {
                epsilon,
                limit,
                eps_max,
                policy,
            } => {
                let requirement = match policy {
                    StepsizePolicy::Limit => format!("0 < epsilon <= {limit}"),
                    StepsizePolicy::Strict => format!("0 < epsilon < {limit}"),
                    StepsizePolicy::Unchecked => "a positive finite epsilon".to_string(),
                };
                SimError::StepsizeInadmissible {
                    epsilon,
                    eps_max,
                    policy,
                    requirement,
                }
            }
            BoundsError::InvalidConstants(msg) => {
                SimError::Objective(ObjectiveError::InvalidConstants(msg))
            }
        }
    }
}

/// Whether direct neighbors react to the active agent's broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProtocolMode {
    #[default]
    Full,
    /// Neighbors neither refresh nor forward; mailboxes go stale.
    SkipNeighborReaction,
}

/// A penalized objective together with its minimizer.
#[derive(Debug, Clone)]
pub struct Problem<T: Real> {
    pub obj: Arc<PenalizedObjective<T>>,
    pub reference: Arc<ReferenceSolution<T>>,
}

/// Gradient tolerance of the reference solve, relative to `max(1, ||g(0)||)`.
pub fn reference_tolerance<T: Real>() -> f64 {
    if T::LABEL == "f64" {
        1e-13
    } else {
        1e-28
    }
}

impl<T: Real> Problem<T> {
    pub fn new(obj: PenalizedObjective<T>) -> Result<Self, SimError> {
        let g0 = obj.gradient(&vec![T::zero(); obj.n()])?;
        let tol = reference_tolerance::<T>() * norm2(&g0).as_f64().max(1.0);
        let reference = reference_solution(&obj, tol)?;
        Ok(Self {
            obj: Arc::new(obj),
            reference: Arc::new(reference),
        })
    }

    pub fn n(&self) -> usize {
        self.obj.n()
    }

    pub fn f_star(&self) -> f64 {
        self.reference.f_star.as_f64()
    }

    pub fn spectra(&self) -> RateSpectra {
        RateSpectra::for_objective(&self.obj)
    }

    pub fn eps_max(&self) -> f64 {
        let s = self.spectra();
        2.0 * (s.lambda / s.big_lambda).powi(2)
    }

    /// `F(x) - F*` without cancellation.
    pub fn gap(&self, x: &[T]) -> Result<T, SimError> {
        Ok(self
            .obj
            .gap_from(x, &self.reference.x_star, &self.reference.grad)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub epsilon: f64,
    pub policy: StepsizePolicy,
    pub iters: u64,
    pub seed: u64,
    pub stride: u64,
    pub clock: bool,
    pub mode: ProtocolMode,
}

impl SimConfig {
    pub fn new(epsilon: f64, iters: u64, seed: u64) -> Self {
        Self {
            epsilon,
            policy: StepsizePolicy::default(),
            iters,
            seed,
            stride: 1,
            clock: false,
            mode: ProtocolMode::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub active: Option<usize>,
    pub f: f64,
    /// `F - F*`, computed in working precision.
    pub gap: f64,
    pub grad_norm: f64,
    pub rel_err: f64,
    /// `||D(t-1)^{1/2} (x(t) - x*)||`; NaN where it is undefined, written
    /// as an empty CSV field.
    pub weighted_err: f64,
    pub messages: u64,
    pub clock: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub precision: &'static str,
    pub rows: Vec<TraceRow>,
    pub final_x: Vec<f64>,
}

fn push_opt(out: &mut String, v: Option<impl std::fmt::Display>) {
    if let Some(v) = v {
        let _ = write!(out, "{v}");
    }
}

impl Trace {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},", r.t);
            push_opt(&mut out, r.active);
            let _ = write!(out, ",{},{},{},", r.f, r.grad_norm, r.rel_err);
            push_opt(
                &mut out,
                (!r.weighted_err.is_nan()).then_some(r.weighted_err),
            );
            let _ = write!(out, ",{},", r.messages);
            push_opt(&mut out, r.clock);
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> &TraceRow {
        self.rows
            .last()
            .expect("a trace always holds the initial row")
    }

    /// First recorded `t` from which `rel_err <= threshold` holds for the
    /// rest of the trace; `None` if the final row is still above it.
    pub fn settling_iteration(&self, threshold: f64) -> Option<u64> {
        let mut since = None;
        for r in &self.rows {
            if r.rel_err.abs() <= threshold {
                since.get_or_insert(r.t);
            } else {
                since = None;
            }
        }
        since
    }
}

/// Outcome of enumerating every possible next activation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentCheck {
    /// Mean of `F` over the `n` hypothetical next iterates.
    pub lhs: f64,
    /// `F(x) - c ||g(x)||^2` with the closed-form descent coefficient `c`.
    pub rhs: f64,
    pub ok: bool,
}

pub const DESCENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct World<T: Real> {
    problem: Problem<T>,
    agents: Vec<AgentState<T>>,
    epsilon: T,
    epsilon_f64: f64,
    iter: u64,
    rng: ChaCha8Rng,
    clock_rng: Option<(ChaCha8Rng, Exp<f64>)>,
    clock: f64,
    msg_count: u64,
    mode: ProtocolMode,
}

impl<T: Real> World<T> {
    pub fn new(problem: Problem<T>, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.policy.check(cfg.epsilon, problem.eps_max())?;
        let n = problem.n();
        let agents = init_agents(&problem.obj);
        let clock_rng = cfg.clock.then(|| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
            r.set_stream(1);
            (r, Exp::new(n as f64).expect("rate n is positive"))
        });
        Ok(Self {
            problem,
            agents,
            epsilon: T::of(cfg.epsilon),
            epsilon_f64: cfg.epsilon,
            iter: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            clock_rng,
            clock: 0.0,
            msg_count: 0,
            mode: cfg.mode,
        })
    }

    pub fn problem(&self) -> &Problem<T> {
        &self.problem
    }

    pub fn agents(&self) -> &[AgentState<T>] {
        &self.agents
    }

    pub fn iteration(&self) -> u64 {
        self.iter
    }

    pub fn messages(&self) -> u64 {
        self.msg_count
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon_f64
    }

    pub fn x(&self) -> Vec<T> {
        self.agents.iter().map(|a| a.x).collect()
    }

    fn d_vector(&self) -> Vec<T> {
        self.agents.iter().map(|a| a.d_loc).collect()
    }

    /// Trace row for the current state; `d_prev` is `D` before the last step.
    pub fn row(&self, active: Option<usize>, d_prev: &[T]) -> Result<TraceRow, SimError> {
        let x = self.x();
        let obj = &self.problem.obj;
        let gap = self.problem.gap(&x)?.as_f64();
        let f_star = self.problem.f_star();
        let weighted = x
            .iter()
            .zip(&self.problem.reference.x_star)
            .zip(d_prev)
            .fold(T::zero(), |acc, ((&xi, &si), &di)| {
                acc + di * (xi - si) * (xi - si)
            })
            .sqrt();
        Ok(TraceRow {
            t: self.iter,
            active,
            f: obj.value(&x)?.as_f64(),
            gap,
            grad_norm: norm2(&obj.gradient(&x)?).as_f64(),
            rel_err: if f_star != 0.0 {
                gap / f_star.abs()
            } else {
                gap
            },
            weighted_err: weighted.as_f64(),
            messages: self.msg_count,
            clock: self.clock_rng.as_ref().map(|_| self.clock),
        })
    }

    pub fn initial_row(&self) -> Result<TraceRow, SimError> {
        self.row(None, &self.d_vector())
    }

    /// One activation, chosen by the world's generator.
    pub fn step(&mut self) -> Result<TraceRow, SimError> {
        let i = self.rng.random_range(0..self.problem.n());
        self.step_agent(i)
    }

    /// One activation of agent `i`, followed by the neighbor reaction.
    pub fn step_agent(&mut self, i: usize) -> Result<TraceRow, SimError> {
        let d_prev = self.d_vector();
        let obj = Arc::clone(&self.problem.obj);
        self.iter += 1;
        let d = self.agents[i].compute_direction(&obj)?;
        self.agents[i].apply_step(self.epsilon, d, self.iter as i64)?;
        self.agents[i].refresh(&obj);
        if self.mode == ProtocolMode::Full {
            let primary = self.agents[i].primary();
            let nbrs = obj.net().neighbors(i).to_vec();
            self.msg_count += nbrs.len() as u64;
            for &j in &nbrs {
                let secondary = self.agents[j].react_neighbor(&primary, &obj)?;
                let second_hop = obj.net().neighbors(j);
                self.msg_count += second_hop.len() as u64;
                for &l in second_hop {
                    self.agents[l].store_secondary(&secondary)?;
                }
            }
        }
        if let Some((rng, exp)) = self.clock_rng.as_mut() {
            self.clock += exp.sample(rng);
        }
        self.row(Some(i), &d_prev)
    }

    /// Averages `F` over all `n` possible next activations and compares with
    /// the guaranteed expected decrease.
    pub fn expected_descent_check(&self) -> Result<DescentCheck, SimError> {
        let obj = &self.problem.obj;
        let x = self.x();
        let n = self.problem.n();
        let f = obj.value(&x)?;
        let mut total = T::zero();
        let mut probe = x.clone();
        for (i, agent) in self.agents.iter().enumerate() {
            let d = agent.compute_direction(obj)?;
            probe[i] = x[i] + self.epsilon * d;
            total = total + obj.value(&probe)?;
            probe[i] = x[i];
        }
        let lhs = total / T::of(n as f64);
        let s = self.problem.spectra();
        let (eps, nf) = (self.epsilon_f64, n as f64);
        let coef =
            eps * s.lambda / nf - eps * eps * s.big_lambda * s.big_lambda / (2.0 * nf * s.lambda);
        let g = obj.gradient(&x)?;
        let g2 = g.iter().fold(T::zero(), |acc, &v| acc + v * v);
        let rhs = f - T::of(coef) * g2;
        let ok = (lhs - rhs).as_f64() <= DESCENT_TOL;
        Ok(DescentCheck {
            lhs: lhs.as_f64(),
            rhs: rhs.as_f64(),
            ok,
        })
    }

    /// Largest deviations between the agents' local state and the
    /// centralized quantities at the current `x`.
    pub fn coherence(&self) -> Result<Coherence, SimError> {
        let obj = &self.problem.obj;
        let x = self.x();
        let g = obj.gradient(&x)?;
        let dir = newton_direction(obj, &x)?;
        let mut c = Coherence {
            caches_exact: true,
            ..Coherence::default()
        };
        for (i, a) in self.agents.iter().enumerate() {
            let d0 = -g[i] / a.d_loc;
            c.max_grad_dev = c.max_grad_dev.max((a.g_loc - g[i]).abs().as_f64());
            c.max_d0_dev = c.max_d0_dev.max((a.d0_loc - d0).abs().as_f64());
            c.max_direction_dev = c
                .max_direction_dev
                .max((a.compute_direction(obj)? - dir[i]).abs().as_f64());
            for (&j, &v) in &a.cache_x {
                c.caches_exact &= v == self.agents[j].x;
            }
            for (&j, &v) in &a.cache_d0 {
                c.caches_exact &= v == self.agents[j].d0_loc;
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coherence {
    pub max_grad_dev: f64,
    pub max_d0_dev: f64,
    pub max_direction_dev: f64,
    pub caches_exact: bool,
}

impl Coherence {
    pub fn holds(&self, tol: f64) -> bool {
        self.caches_exact
            && self.max_grad_dev <= tol
            && self.max_d0_dev <= tol
            && self.max_direction_dev <= tol
    }
}

/// `cfg.iters` activations from `x = 0`, keeping every `cfg.stride`-th row
/// plus the first and last.
pub fn run<T: Real>(problem: &Problem<T>, cfg: &SimConfig) -> Result<Trace, SimError> {
    if cfg.stride == 0 {
        return Err(SimError::InvalidStride);
    }
    let mut world = World::new(problem.clone(), cfg)?;
    let mut rows = vec![world.initial_row()?];
    for t in 1..=cfg.iters {
        let row = world.step()?;
        if t % cfg.stride == 0 || t == cfg.iters {
            rows.push(row);
        }
    }
    Ok(Trace {
        precision: T::LABEL,
        rows,
        final_x: world.x().into_iter().map(Real::as_f64).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub t: u64,
    pub mean_gap: f64,
    pub std_gap: f64,
    pub mean_rel_err: f64,
    pub std_rel_err: f64,
    pub mean_weighted_err: f64,
    pub std_weighted_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub trials: usize,
    pub rows: Vec<AggregateRow>,
    pub traces: Vec<Trace>,
}

impl Aggregate {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(AGGREGATE_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.t,
                r.mean_gap,
                r.std_gap,
                r.mean_rel_err,
                r.std_rel_err,
                r.mean_weighted_err,
                r.std_weighted_err
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    k: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, v: f64) {
        self.k += 1.0;
        let delta = v - self.mean;
        self.mean += delta / self.k;
        self.m2 += delta * (v - self.mean);
    }

    fn std(&self) -> f64 {
        if self.k > 1.0 {
            (self.m2.max(0.0) / (self.k - 1.0)).sqrt()
        } else {
            0.0
        }
    }
}

/// `trials` independent runs with seeds `cfg.seed + k`, executed in
/// parallel and aggregated in trial order.
pub fn monte_carlo<T: Real>(
    problem: &Problem<T>,
    cfg: &SimConfig,
    trials: usize,
) -> Result<Aggregate, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let traces = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            run(
                problem,
                &SimConfig {
                    seed: cfg.seed.wrapping_add(k),
                    ..cfg.clone()
                },
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let len = traces[0].rows.len();
    let rows = (0..len)
        .map(|idx| {
            let (mut gap, mut rel, mut wei) =
                (Welford::default(), Welford::default(), Welford::default());
            for tr in &traces {
                let r = &tr.rows[idx];
                gap.push(r.gap);
                rel.push(r.rel_err);
                wei.push(r.weighted_err);
            }
            AggregateRow {
                t: traces[0].rows[idx].t,
                mean_gap: gap.mean,
                std_gap: gap.std(),
                mean_rel_err: rel.mean,
                std_rel_err: rel.std(),
                mean_weighted_err: wei.mean,
                std_weighted_err: wei.std(),
            }
        })
        .collect();
    Ok(Aggregate {
        trials,
        rows,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::LocalFunction;
    use crate::real::DoubleDouble;
    use crate::topology::{laplacian_weights, Graph};

    fn five_agents<T: Real>() -> Problem<T> {
        let net = Arc::new(laplacian_weights(&Graph::complete(5).unwrap(), 0.125).unwrap());
        let locals = (1..=5)
            .map(|i| LocalFunction::quadratic(1.0, i as f64).unwrap())
            .collect();
        Problem::new(PenalizedObjective::new(net, 1.0, locals).unwrap()).unwrap()
    }

    #[test]
    fn first_step_of_agent_one() {
        let mut w = World::new(five_agents::<f64>(), &SimConfig::new(0.8, 10, 1)).unwrap();
        let row = w.step_agent(0).unwrap();
        let x = w.x();
        assert!((x[0] - 14.0 / 15.0).abs() < 1e-15);
        assert!(x[1..].iter().all(|&v| v == 0.0));
        assert_eq!(row.messages, 20);
        assert_eq!(row.t, 1);
        assert_eq!(row.active, Some(0));
        assert!(w.coherence().unwrap().holds(1e-12));
    }

    #[test]
    fn initial_row_values() {
        let w = World::new(five_agents::<f64>(), &SimConfig::new(0.8, 10, 1)).unwrap();
        let r = w.initial_row().unwrap();
        assert_eq!(r.f, 55.0);
        assert!((r.gap - (55.0 - 50.0 / 21.0)).abs() < 1e-12);
        assert!((r.grad_norm - 220f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.messages, 0);
        assert_eq!(r.clock, None);
    }

    #[test]
    fn fixed_point_at_optimum() {
        let mut w = World::new(five_agents::<f64>(), &SimConfig::new(0.8, 10, 1)).unwrap();
        let x_star = w.problem().reference.x_star.clone();
        let obj = Arc::clone(&w.problem().obj);
        for a in w.agents.iter_mut() {
            a.x = x_star[a.id];
            for (j, v) in a.cache_x.iter_mut() {
                *v = x_star[*j];
            }
            a.refresh(&obj);
        }
        let d0: Vec<f64> = w.agents.iter().map(|a| a.d0_loc).collect();
        for a in w.agents.iter_mut() {
            for (j, v) in a.cache_d0.iter_mut() {
                *v = d0[*j];
            }
        }
        for i in 0..5 {
            w.step_agent(i).unwrap();
        }
        for (a, b) in w.x().iter().zip(&x_star) {
            assert!((a - b).abs() < 1e-14);
        }
        let check = w.expected_descent_check().unwrap();
        assert!((check.lhs - check.rhs).abs() < 1e-13);
        assert!((check.lhs - 50.0 / 21.0).abs() < 1e-13);
    }

    #[test]
    fn descent_check_at_origin() {
        let w = World::new(five_agents::<f64>(), &SimConfig::new(0.8, 10, 1)).unwrap();
        let c = w.expected_descent_check().unwrap();
        let coef = 0.8 / 3.0 / 5.0 - 0.64 * (16.0 / 81.0) / (2.0 * 5.0 / 3.0);
        assert!((c.rhs - (55.0 - coef * 220.0)).abs() < 1e-12);
        // Brute force over the five possible activations.
        let mut total = 0.0;
        for i in 0..5 {
            let mut w2 = w.clone();
            w2.step_agent(i).unwrap();
            total += w2.problem().obj.value(&w2.x()).unwrap();
        }
        assert!((c.lhs - total / 5.0).abs() < 1e-12);
        assert!(c.ok);
    }

    #[test]
    fn stepsize_gate() {
        assert!(World::new(five_agents::<f64>(), &SimConfig::new(0.8, 1, 1)).is_ok());
        let err = World::new(five_agents::<f64>(), &SimConfig::new(1.2, 1, 1)).unwrap_err();
        match err {
            SimError::StepsizeInadmissible { eps_max, .. } => {
                assert!((eps_max - 1.125).abs() < 1e-12)
            }
            other => panic!("{other:?}"),
        }
        let unchecked = SimConfig {
            policy: StepsizePolicy::Unchecked,
            ..SimConfig::new(1.2, 1, 1)
        };
        assert!(World::new(five_agents::<f64>(), &unchecked).is_ok());
    }

    #[test]
    fn deterministic_traces() {
        let p = five_agents::<f64>();
        let cfg = SimConfig {
            clock: true,
            ..SimConfig::new(0.8, 300, 42)
        };
        let a = run(&p, &cfg).unwrap().to_csv();
        let b = run(&p, &cfg).unwrap().to_csv();
        assert_eq!(a, b);
        let c = run(
            &p,
            &SimConfig {
                seed: 43,
                ..cfg.clone()
            },
        )
        .unwrap()
        .to_csv();
        assert_ne!(a, c);
        assert!(a.starts_with(TRACE_HEADER));
    }

    #[test]
    fn clock_does_not_change_dynamics() {
        let p = five_agents::<f64>();
        let plain = run(&p, &SimConfig::new(0.8, 200, 9)).unwrap();
        let timed = run(
            &p,
            &SimConfig {
                clock: true,
                ..SimConfig::new(0.8, 200, 9)
            },
        )
        .unwrap();
        assert_eq!(plain.final_x, timed.final_x);
        let clocks: Vec<f64> = timed.rows.iter().map(|r| r.clock.unwrap()).collect();
        assert!(clocks.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn one_coordinate_changes_per_step() {
        let mut w = World::new(five_agents::<f64>(), &SimConfig::new(0.8, 1, 5)).unwrap();
        for _ in 0..200 {
            let before = w.x();
            let row = w.step().unwrap();
            let after = w.x();
            let changed: Vec<usize> = (0..5).filter(|&k| before[k] != after[k]).collect();
            assert!(changed.len() <= 1);
            if let Some(&k) = changed.first() {
                assert_eq!(Some(k), row.active);
            }
            assert!(w.coherence().unwrap().holds(1e-12));
        }
    }

    #[test]
    fn stale_mode_breaks_coherence() {
        let cfg = SimConfig {
            mode: ProtocolMode::SkipNeighborReaction,
            ..SimConfig::new(0.8, 1, 5)
        };
        let mut w = World::new(five_agents::<f64>(), &cfg).unwrap();
        w.step_agent(0).unwrap();
        assert_eq!(w.messages(), 0);
        assert!(!w.coherence().unwrap().caches_exact);
    }

    #[test]
    fn stride_keeps_first_and_last() {
        let p = five_agents::<f64>();
        let tr = run(
            &p,
            &SimConfig {
                stride: 7,
                ..SimConfig::new(0.8, 20, 1)
            },
        )
        .unwrap();
        let ts: Vec<u64> = tr.rows.iter().map(|r| r.t).collect();
        assert_eq!(ts, vec![0, 7, 14, 20]);
        assert_eq!(
            run(
                &p,
                &SimConfig {
                    stride: 0,
                    ..SimConfig::new(0.8, 20, 1)
                }
            ),
            Err(SimError::InvalidStride)
        );
        let zero = run(&p, &SimConfig::new(0.8, 0, 1)).unwrap();
        assert_eq!(zero.rows.len(), 1);
    }

    #[test]
    fn monte_carlo_single_trial_matches_run() {
        let p = five_agents::<f64>();
        let cfg = SimConfig::new(0.8, 50, 11);
        let agg = monte_carlo(&p, &cfg, 1).unwrap();
        let tr = run(&p, &cfg).unwrap();
        for (a, r) in agg.rows.iter().zip(&tr.rows) {
            assert_eq!(a.mean_gap, r.gap);
            assert_eq!(a.mean_rel_err, r.rel_err);
            assert_eq!(a.std_gap, 0.0);
        }
        assert!(matches!(monte_carlo(&p, &cfg, 0), Err(SimError::NoTrials)));
        let agg4 = monte_carlo(&p, &cfg, 4).unwrap();
        assert_eq!(agg4.to_csv(), monte_carlo(&p, &cfg, 4).unwrap().to_csv());
        assert!(agg4.to_csv().starts_with(AGGREGATE_HEADER));
    }

    #[test]
    fn double_double_run_resolves_tiny_gaps() {
        let p = five_agents::<DoubleDouble>();
        let tr = run(&p, &SimConfig::new(0.8, 1200, 3)).unwrap();
        let last = tr.last();
        // Below 1e-60 the gap is at the resolution of the reference solution itself.
        assert!(last.gap.abs() < 1e-40, "{}", last.gap);
        let pf = five_agents::<f64>();
        let trf = run(&pf, &SimConfig::new(0.8, 1200, 3)).unwrap();
        assert!(trf.last().rel_err < 1e-12);
    }
}
