//! Randomized pairwise gossip with local gradient steps, used as the baseline
//! for the consensus problem `min_x sum_i f_i(x)`.
//!
//! Per exchange: agent `i` is drawn uniformly, then a neighbor `j` of `i`
//! uniformly; both average, then each takes a gradient step on its own `f`.
//! Errors are measured against the consensus optimum `F_c*`, not the
//! penalized one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::objective::LocalFunction;
use crate::simulator::{Trace, TraceRow};
use crate::topology::Graph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GossipError {
    #[error("{locals} local functions for {n} agents")]
    DimensionMismatch { locals: usize, n: usize },
    #[error("gossip stepsize must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("stride must be at least 1")]
    InvalidStride,
    #[error("agent {0} has no neighbors")]
    IsolatedAgent(usize),
    #[error("consensus minimizer search did not converge (last |h'| = {0:e})")]
    NoConvergence(f64),
}

/// Gradient stepsize schedule; `k` counts the exchanges an agent has joined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GossipStep {
    Constant {
        gamma: f64,
    },
    /// `gamma0 / k`.
    Diminishing {
        gamma0: f64,
    },
}

impl Default for GossipStep {
    fn default() -> Self {
        Self::Diminishing { gamma0: 0.25 }
    }
}

impl GossipStep {
    fn validate(self) -> Result<(), GossipError> {
        let g = match self {
            Self::Constant { gamma } => gamma,
            Self::Diminishing { gamma0 } => gamma0,
        };
        if g > 0.0 && g.is_finite() {
            Ok(())
        } else {
            Err(GossipError::InvalidStep(g))
        }
    }

    fn at(self, k: u64) -> f64 {
        match self {
            Self::Constant { gamma } => gamma,
            Self::Diminishing { gamma0 } => gamma0 / k.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GossipState {
    pub x: Vec<f64>,
    pub step: GossipStep,
    pub participations: Vec<u64>,
    rng: ChaCha8Rng,
}

impl GossipState {
    pub fn new(n: usize, step: GossipStep, seed: u64) -> Self {
        Self {
            x: vec![0.0; n],
            step,
            participations: vec![0; n],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One exchange between a uniformly drawn agent and a uniformly drawn
    /// neighbor of it. Returns the pair.
    pub fn step(&mut self, locals: &[LocalFunction<f64>], graph: &Graph) -> (usize, usize) {
        let i = self.rng.random_range(0..graph.n());
        let nbrs = graph.neighbors(i);
        let j = nbrs[self.rng.random_range(0..nbrs.len())];
        self.exchange(i, j, locals);
        (i, j)
    }

    /// Averages `x_i` and `x_j`, then steps both along their local gradients.
    pub fn exchange(&mut self, i: usize, j: usize, locals: &[LocalFunction<f64>]) {
        let avg = 0.5 * (self.x[i] + self.x[j]);
        for k in [i, j] {
            self.participations[k] += 1;
            let gamma = self.step.at(self.participations[k]);
            self.x[k] = avg - gamma * locals[k].grad(avg);
        }
    }
}

/// `sum_i f_i(x_i)`.
pub fn local_sum(locals: &[LocalFunction<f64>], x: &[f64]) -> f64 {
    locals.iter().zip(x).map(|(f, &v)| f.value(v)).sum()
}

/// Minimizer and value of `h(c) = sum_i f_i(c)` by safeguarded Newton.
pub fn consensus_optimum(locals: &[LocalFunction<f64>]) -> Result<(f64, f64), GossipError> {
    let h = |c: f64| locals.iter().map(|f| f.value(c)).sum::<f64>();
    let dh = |c: f64| locals.iter().map(|f| f.grad(c)).sum::<f64>();
    let d2h = |c: f64| locals.iter().map(|f| f.hess(c)).sum::<f64>();
    let mut c = 0.0;
    for _ in 0..200 {
        let g = dh(c);
        let scale = locals.iter().map(|f| f.grad(c).abs()).fold(1.0, f64::max);
        if g.abs() <= 1e-14 * scale {
            return Ok((c, h(c)));
        }
        let step = g / d2h(c);
        let mut t = 1.0;
        while h(c - t * step) > h(c) && t > 1e-12 {
            t *= 0.5;
        }
        let next = c - t * step;
        if next == c {
            return Ok((c, h(c)));
        }
        c = next;
    }
    Err(GossipError::NoConvergence(dh(c).abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GossipConfig {
    pub step: GossipStep,
    pub iters: u64,
    pub seed: u64,
    pub stride: u64,
}

fn row(
    t: u64,
    active: Option<usize>,
    locals: &[LocalFunction<f64>],
    x: &[f64],
    f_c: f64,
    messages: u64,
) -> TraceRow {
    let f = local_sum(locals, x);
    let gap = f - f_c;
    let grad_norm = locals
        .iter()
        .zip(x)
        .map(|(l, &v)| l.grad(v).powi(2))
        .sum::<f64>()
        .sqrt();
    TraceRow {
        t,
        active,
        f,
        gap,
        grad_norm,
        rel_err: if f_c != 0.0 {
            gap.abs() / f_c.abs()
        } else {
            gap.abs()
        },
        weighted_err: f64::NAN,
        messages,
        clock: None,
    }
}

/// `cfg.iters` exchanges from `x = 0`. Each exchange costs two messages.
pub fn gossip_run(
    locals: &[LocalFunction<f64>],
    graph: &Graph,
    cfg: &GossipConfig,
) -> Result<Trace, GossipError> {
    if locals.len() != graph.n() {
        return Err(GossipError::DimensionMismatch {
            locals: locals.len(),
            n: graph.n(),
        });
    }
    if cfg.stride == 0 {
        return Err(GossipError::InvalidStride);
    }
    cfg.step.validate()?;
    if let Some(i) = (0..graph.n()).find(|&i| graph.degree(i) == 0) {
        return Err(GossipError::IsolatedAgent(i));
    }
    let (_, f_c) = consensus_optimum(locals)?;
    let mut state = GossipState::new(graph.n(), cfg.step, cfg.seed);
    let mut rows = vec![row(0, None, locals, &state.x, f_c, 0)];
    for t in 1..=cfg.iters {
        let (i, _) = state.step(locals, graph);
        if t % cfg.stride == 0 || t == cfg.iters {
            rows.push(row(t, Some(i), locals, &state.x, f_c, 2 * t));
        }
    }
    Ok(Trace {
        precision: "f64",
        rows,
        final_x: state.x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_locals() -> Vec<LocalFunction<f64>> {
        (1..=5)
            .map(|i| LocalFunction::quadratic(1.0, i as f64).unwrap())
            .collect()
    }

    fn flat(n: usize) -> Vec<LocalFunction<f64>> {
        (0..n)
            .map(|_| LocalFunction::new("flat", |_| 0.0, |_| 0.0, |_| 1.0, 1.0, 1.0, 0.0).unwrap())
            .collect()
    }

    #[test]
    fn consensus_optimum_of_five_agent_setup() {
        let (c, f) = consensus_optimum(&five_locals()).unwrap();
        assert!((c - 3.0).abs() < 1e-14);
        assert!((f - 10.0).abs() < 1e-12);
    }

    #[test]
    fn pure_averaging_pair() {
        let mut s = GossipState::new(2, GossipStep::Constant { gamma: 0.3 }, 0);
        s.x = vec![0.0, 2.0];
        s.exchange(0, 1, &flat(2));
        assert_eq!(s.x, vec![1.0, 1.0]);
    }

    #[test]
    fn fixed_point_when_equal_and_stationary() {
        let locals: Vec<_> = (0..2)
            .map(|_| LocalFunction::quadratic(1.0, 4.0).unwrap())
            .collect();
        let mut s = GossipState::new(2, GossipStep::Constant { gamma: 0.05 }, 0);
        s.x = vec![4.0, 4.0];
        s.exchange(1, 0, &locals);
        assert_eq!(s.x, vec![4.0, 4.0]);
    }

    #[test]
    fn averaging_preserves_sum_exactly() {
        let g = Graph::ring(6).unwrap();
        let mut s = GossipState::new(6, GossipStep::Constant { gamma: 1.0 }, 3);
        s.x = vec![0.5, -1.25, 3.0, 8.0, -2.0, 0.75];
        let total: f64 = s.x.iter().sum();
        for _ in 0..100 {
            s.step(&flat(6), &g);
            assert_eq!(s.x.iter().sum::<f64>(), total);
        }
    }

    #[test]
    fn exactly_two_coordinates_change() {
        let g = Graph::complete(5).unwrap();
        let mut s = GossipState::new(5, GossipStep::default(), 8);
        s.x = vec![0.1, 0.7, 1.9, 2.2, 4.4];
        for _ in 0..50 {
            let before = s.x.clone();
            let (i, j) = s.step(&five_locals(), &g);
            assert_ne!(i, j);
            assert!(g.has_edge(i, j));
            assert!((0..5)
                .filter(|&k| k != i && k != j)
                .all(|k| s.x[k] == before[k]));
        }
    }

    #[test]
    fn trace_shape_and_initial_error() {
        let g = Graph::complete(5).unwrap();
        let cfg = GossipConfig {
            step: GossipStep::default(),
            iters: 0,
            seed: 1,
            stride: 1,
        };
        let tr = gossip_run(&five_locals(), &g, &cfg).unwrap();
        assert_eq!(tr.rows.len(), 1);
        assert_eq!(tr.rows[0].f, 55.0);
        assert!((tr.rows[0].rel_err - 4.5).abs() < 1e-12);
        let csv = tr.to_csv();
        assert!(csv.lines().nth(1).unwrap().contains(",,0,"));
    }

    #[test]
    fn diminishing_schedule_converges_to_consensus_optimum() {
        let g = Graph::complete(5).unwrap();
        let cfg = GossipConfig {
            step: GossipStep::default(),
            iters: 100_000,
            seed: 2,
            stride: 1000,
        };
        let tr = gossip_run(&five_locals(), &g, &cfg).unwrap();
        assert!(
            tr.final_x.iter().all(|v| (v - 3.0).abs() < 0.05),
            "{:?}",
            tr.final_x
        );
        assert!(tr.last().rel_err < 1e-3);
        let again = gossip_run(&five_locals(), &g, &cfg).unwrap();
        assert_eq!(tr.to_csv(), again.to_csv());
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Graph::complete(5).unwrap();
        let base = GossipConfig {
            step: GossipStep::Constant { gamma: 0.0 },
            iters: 1,
            seed: 1,
            stride: 1,
        };
        assert_eq!(
            gossip_run(&five_locals(), &g, &base),
            Err(GossipError::InvalidStep(0.0))
        );
        let ok_step = GossipConfig {
            step: GossipStep::default(),
            ..base.clone()
        };
        assert!(matches!(
            gossip_run(&five_locals()[..3], &g, &ok_step),
            Err(GossipError::DimensionMismatch { .. })
        ));
        let bad_stride = GossipConfig {
            stride: 0,
            ..ok_step
        };
        assert_eq!(
            gossip_run(&five_locals(), &g, &bad_stride),
            Err(GossipError::InvalidStride)
        );
    }
}
