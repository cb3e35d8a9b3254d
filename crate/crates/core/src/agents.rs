//! Per-agent protocol state: initialization, the active update, the reaction of
//! direct neighbors, and passive storage of second-hop `d0` values.
//!
//! Each agent holds single-slot mailboxes keyed by neighbor, overwritten on
//! receipt. With the full reaction protocol every cached value equals its
//! owner's current value after each iteration, so the locally assembled
//! direction coincides with `-[Hhat(x)^{-1} g(x)]_i`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::objective::PenalizedObjective;
use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent {agent} received a broadcast from {from}, which is not a neighbor")]
    NotANeighbor { agent: usize, from: usize },
    #[error("agent {agent} has no cached value for neighbor {neighbor}")]
    MissingCacheEntry { agent: usize, neighbor: usize },
    #[error("agent {agent} expected a primary broadcast from {from}")]
    ExpectedPrimary { agent: usize, from: usize },
    #[error("stepsize must be positive")]
    NonPositiveStep,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BroadcastKind<T> {
    /// Sent by the active agent: its new iterate and `d0`.
    Primary { x: T, d0: T },
    /// Sent by a neighbor of the active agent after it refreshed its `d0`.
    Secondary { d0: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Broadcast<T> {
    pub origin: usize,
    pub kind: BroadcastKind<T>,
}

impl<T: Copy> Broadcast<T> {
    pub fn d0(&self) -> T {
        match self.kind {
            BroadcastKind::Primary { d0, .. } | BroadcastKind::Secondary { d0 } => d0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState<T> {
    pub id: usize,
    pub x: T,
    pub d_loc: T,
    pub g_loc: T,
    pub d0_loc: T,
    pub cache_x: BTreeMap<usize, T>,
    pub cache_d0: BTreeMap<usize, T>,
    /// Iteration of the most recent activation, `-1` before the first.
    pub last_active: i64,
}

impl<T: Real> AgentState<T> {
    /// Own state at `x = 0` with neighbor mailboxes primed to `x = 0`. The
    /// `d0` mailboxes stay zero until the init exchange fills them.
    pub fn init(id: usize, obj: &PenalizedObjective<T>) -> Self {
        let nbrs = obj.neighbor_weights(id);
        let mut s = Self {
            id,
            x: T::zero(),
            d_loc: T::one(),
            g_loc: T::zero(),
            d0_loc: T::zero(),
            cache_x: nbrs.iter().map(|&(j, _)| (j, T::zero())).collect(),
            cache_d0: nbrs.iter().map(|&(j, _)| (j, T::zero())).collect(),
            last_active: -1,
        };
        s.refresh(obj);
        s
    }

    fn cached(map: &BTreeMap<usize, T>, agent: usize, neighbor: usize) -> Result<T, AgentError> {
        map.get(&neighbor)
            .copied()
            .ok_or(AgentError::MissingCacheEntry { agent, neighbor })
    }

    /// `d_i = (B_ii d0_i - g_i + sum_j B_ij d0_j) / D_ii` from cached values.
    pub fn compute_direction(&self, obj: &PenalizedObjective<T>) -> Result<T, AgentError> {
        let b_ii = T::one() - obj.w_diag(self.id);
        let mut acc = b_ii * self.d0_loc - self.g_loc;
        for &(j, w) in obj.neighbor_weights(self.id) {
            acc = acc + w * Self::cached(&self.cache_d0, self.id, j)?;
        }
        Ok(acc / self.d_loc)
    }

    /// `x <- x + epsilon d`; stamps the activation time.
    pub fn apply_step(&mut self, epsilon: T, d: T, t: i64) -> Result<(), AgentError> {
        if !(epsilon > T::zero()) {
            return Err(AgentError::NonPositiveStep);
        }
        self.x = self.x + epsilon * d;
        self.last_active = t;
        Ok(())
    }

    fn local_gradient(&self, obj: &PenalizedObjective<T>) -> T {
        let own = (T::one() - obj.w_diag(self.id)) * self.x
            + obj.alpha_t() * obj.local(self.id).grad(self.x);
        obj.neighbor_weights(self.id)
            .iter()
            .fold(own, |acc, &(j, w)| {
                acc - w * self.cache_x.get(&j).copied().unwrap_or_else(T::zero)
            })
    }

    /// Recomputes `D_ii`, `g_i` and `d0_i` from the own iterate and cached
    /// neighbor iterates.
    pub fn refresh(&mut self, obj: &PenalizedObjective<T>) {
        let two = T::of(2.0);
        self.d_loc = obj.alpha_t() * obj.local(self.id).hess(self.x)
            + two * (T::one() - obj.w_diag(self.id));
        self.g_loc = self.local_gradient(obj);
        self.d0_loc = -self.g_loc / self.d_loc;
    }

    pub fn primary(&self) -> Broadcast<T> {
        Broadcast {
            origin: self.id,
            kind: BroadcastKind::Primary {
                x: self.x,
                d0: self.d0_loc,
            },
        }
    }

    pub fn secondary(&self) -> Broadcast<T> {
        Broadcast {
            origin: self.id,
            kind: BroadcastKind::Secondary { d0: self.d0_loc },
        }
    }

    fn check_neighbor(&self, from: usize) -> Result<(), AgentError> {
        if self.cache_x.contains_key(&from) {
            Ok(())
        } else {
            Err(AgentError::NotANeighbor {
                agent: self.id,
                from,
            })
        }
    }

    /// Stores a neighbor's new iterate and `d0`, refreshes `g` and `d0` (own
    /// `x` and `D` did not move), and returns the `d0` to pass on.
    pub fn react_neighbor(
        &mut self,
        b: &Broadcast<T>,
        obj: &PenalizedObjective<T>,
    ) -> Result<Broadcast<T>, AgentError> {
        self.check_neighbor(b.origin)?;
        let BroadcastKind::Primary { x, d0 } = b.kind else {
            return Err(AgentError::ExpectedPrimary {
                agent: self.id,
                from: b.origin,
            });
        };
        self.cache_x.insert(b.origin, x);
        self.cache_d0.insert(b.origin, d0);
        self.g_loc = self.local_gradient(obj);
        self.d0_loc = -self.g_loc / self.d_loc;
        Ok(self.secondary())
    }

    /// Overwrites the cached `d0` of the sender; nothing else changes.
    pub fn store_secondary(&mut self, b: &Broadcast<T>) -> Result<(), AgentError> {
        self.check_neighbor(b.origin)?;
        self.cache_d0.insert(b.origin, b.d0());
        Ok(())
    }
}

/// All agents at `x = 0` after the one-time exchange of `d0`, so every
/// mailbox starts coherent.
pub fn init_agents<T: Real>(obj: &PenalizedObjective<T>) -> Vec<AgentState<T>> {
    let mut agents: Vec<AgentState<T>> = (0..obj.n()).map(|i| AgentState::init(i, obj)).collect();
    let announcements: Vec<Broadcast<T>> = agents.iter().map(AgentState::secondary).collect();
    for b in &announcements {
        for &(j, _) in obj.neighbor_weights(b.origin) {
            agents[j]
                .store_secondary(b)
                .expect("neighbor lists are symmetric");
        }
    }
    agents
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::objective::LocalFunction;
    use crate::splitting::newton_direction;
    use crate::topology::{laplacian_weights, metropolis_weights, Graph};

    fn five_agents() -> PenalizedObjective<f64> {
        let net = Arc::new(laplacian_weights(&Graph::complete(5).unwrap(), 0.125).unwrap());
        let locals = (1..=5)
            .map(|i| LocalFunction::quadratic(1.0, i as f64).unwrap())
            .collect();
        PenalizedObjective::new(net, 1.0, locals).unwrap()
    }

    #[test]
    fn init_values_for_agent_three() {
        let obj = five_agents();
        let agents = init_agents(&obj);
        let a = &agents[2];
        assert_eq!(a.d_loc, 3.0);
        assert_eq!(a.g_loc, -6.0);
        assert_eq!(a.d0_loc, 2.0);
        assert_eq!(a.last_active, -1);
        assert_eq!(
            agents[0].cache_x.keys().copied().collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        for s in &agents {
            for (&j, &v) in &s.cache_d0 {
                assert_eq!(v, agents[j].d0_loc);
            }
        }
    }

    #[test]
    fn zero_gradient_agent_has_zero_d0() {
        let net = Arc::new(metropolis_weights(&Graph::path(3).unwrap()).unwrap());
        let locals: Vec<LocalFunction<f64>> = (0..3)
            .map(|_| LocalFunction::quadratic(1.0, 0.0).unwrap())
            .collect();
        let obj = PenalizedObjective::new(net, 1.0, locals).unwrap();
        let agents = init_agents(&obj);
        assert!(agents.iter().all(|a| a.d0_loc == 0.0 && a.g_loc == 0.0));
    }

    #[test]
    fn first_activation_of_agent_one() {
        let obj = five_agents();
        let mut agents = init_agents(&obj);
        let d = agents[0].compute_direction(&obj).unwrap();
        assert!((d - 7.0 / 6.0).abs() < 1e-15);
        assert!((d - newton_direction(&obj, &[0.0; 5]).unwrap()[0]).abs() < 1e-15);
        agents[0].apply_step(0.8, d, 1).unwrap();
        assert!((agents[0].x - 14.0 / 15.0).abs() < 1e-15);
        assert_eq!(agents[0].last_active, 1);
        agents[0].refresh(&obj);
        assert_eq!(agents[0].d_loc, 3.0);
        assert!((agents[0].g_loc - 1.0 / 3.0).abs() < 1e-15);
        assert!((agents[0].d0_loc + 1.0 / 9.0).abs() < 1e-15);

        let before = agents[1].g_loc;
        let b = agents[0].primary();
        let out = agents[1].react_neighbor(&b, &obj).unwrap();
        assert!((agents[1].g_loc - before + 7.0 / 60.0).abs() < 1e-15);
        assert!((agents[1].d0_loc + (before - 7.0 / 60.0) / 3.0).abs() < 1e-15);
        assert_eq!(out.origin, 1);
        assert_eq!(
            out.kind,
            BroadcastKind::Secondary {
                d0: agents[1].d0_loc
            }
        );
    }

    #[test]
    fn apply_step_edge_cases() {
        let obj = five_agents();
        let mut a = AgentState::init(0, &obj);
        let snapshot = a.clone();
        a.apply_step(0.8, 0.0, 4).unwrap();
        assert_eq!(a.x, snapshot.x);
        assert_eq!(a.last_active, 4);
        a.x = 2.5;
        a.apply_step(1.0, -2.5, 5).unwrap();
        assert_eq!(a.x, 0.0);
        assert_eq!(a.apply_step(0.0, 1.0, 6), Err(AgentError::NonPositiveStep));
    }

    #[test]
    fn refresh_is_idempotent() {
        let obj = five_agents();
        let mut a = AgentState::init(3, &obj);
        a.x = 1.7;
        a.refresh(&obj);
        let once = a.clone();
        a.refresh(&obj);
        assert_eq!(a, once);
    }

    #[test]
    fn pair_direction_hand_value() {
        let net = Arc::new(metropolis_weights(&Graph::path(2).unwrap()).unwrap());
        let locals: Vec<LocalFunction<f64>> = (0..2)
            .map(|_| LocalFunction::quadratic(1.0, 0.0).unwrap())
            .collect();
        let obj = PenalizedObjective::new(net, 1.0, locals).unwrap();
        let mut agents = init_agents(&obj);
        for a in agents.iter_mut() {
            a.x = 1.0;
            a.cache_x.values_mut().for_each(|v| *v = 1.0);
            a.refresh(&obj);
        }
        let d0s: Vec<f64> = agents.iter().map(|a| a.d0_loc).collect();
        agents[0].cache_d0.insert(1, d0s[1]);
        agents[1].cache_d0.insert(0, d0s[0]);
        assert_eq!(agents[0].g_loc, 2.0);
        assert!((agents[0].d0_loc + 2.0 / 3.0).abs() < 1e-15);
        for a in &agents {
            assert!((a.compute_direction(&obj).unwrap() + 8.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn direction_vanishes_at_optimum() {
        let obj = five_agents();
        let x_star: Vec<f64> = (1..=5).map(|i| (16.0 * i as f64 + 15.0) / 21.0).collect();
        let mut agents = init_agents(&obj);
        for a in agents.iter_mut() {
            a.x = x_star[a.id];
            for (j, v) in a.cache_x.iter_mut() {
                *v = x_star[*j];
            }
            a.refresh(&obj);
        }
        let d0s: Vec<f64> = agents.iter().map(|a| a.d0_loc).collect();
        for a in agents.iter_mut() {
            for (j, v) in a.cache_d0.iter_mut() {
                *v = d0s[*j];
            }
        }
        for a in &agents {
            assert!(a.compute_direction(&obj).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn guards_and_idempotent_overwrites() {
        let net = Arc::new(metropolis_weights(&Graph::path(3).unwrap()).unwrap());
        let locals: Vec<LocalFunction<f64>> = (0..3)
            .map(|i| LocalFunction::quadratic(1.0, i as f64).unwrap())
            .collect();
        let obj = PenalizedObjective::new(net, 1.0, locals).unwrap();
        let mut agents = init_agents(&obj);
        let far = agents[2].primary();
        assert_eq!(
            agents[0].react_neighbor(&far, &obj),
            Err(AgentError::NotANeighbor { agent: 0, from: 2 })
        );
        assert_eq!(
            agents[0].store_secondary(&far),
            Err(AgentError::NotANeighbor { agent: 0, from: 2 })
        );
        let sec = agents[1].secondary();
        assert_eq!(
            agents[0].react_neighbor(&sec, &obj),
            Err(AgentError::ExpectedPrimary { agent: 0, from: 1 })
        );

        let prim = agents[1].primary();
        agents[0].react_neighbor(&prim, &obj).unwrap();
        let once = agents[0].clone();
        agents[0].react_neighbor(&prim, &obj).unwrap();
        assert_eq!(agents[0], once);

        let mut a = agents[1].clone();
        let msg = Broadcast {
            origin: 0,
            kind: BroadcastKind::Secondary { d0: 9.0 },
        };
        a.store_secondary(&msg).unwrap();
        let changed: Vec<_> = a
            .cache_d0
            .iter()
            .filter(|(j, v)| agents[1].cache_d0[j] != **v)
            .collect();
        assert_eq!(changed, vec![(&0, &9.0)]);
        let after = a.clone();
        a.store_secondary(&msg).unwrap();
        assert_eq!(a, after);
    }

    #[test]
    fn missing_cache_entry_is_reported() {
        let obj = five_agents();
        let mut a = AgentState::init(0, &obj);
        a.cache_d0.remove(&3);
        assert_eq!(
            a.compute_direction(&obj),
            Err(AgentError::MissingCacheEntry {
                agent: 0,
                neighbor: 3
            })
        );
    }
}
