use crate::error::{contract, Result};
use crate::mdp::{grid_step, EnvKind, EnvSpec, State, GRID_ACTIONS};
use crate::scalar::Scalar;

use super::gumbel::argmax;

/// Action values for every `(cell, action, goal cell)` triple of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularQ<F> {
    size: usize,
    values: Vec<F>,
}

impl<F: Scalar> TabularQ<F> {
    pub fn zeros(size: usize) -> Self {
        TabularQ {
            size,
            values: vec![F::zero(); size.pow(4) * GRID_ACTIONS],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn index(&self, s: (usize, usize), a: usize, g: (usize, usize)) -> usize {
        let n = self.size;
        (((s.1 * n + s.0) * GRID_ACTIONS + a) * n + g.1) * n + g.0
    }

    pub fn get(&self, s: (usize, usize), a: usize, g: (usize, usize)) -> F {
        self.values[self.index(s, a, g)]
    }

    pub fn set(&mut self, s: (usize, usize), a: usize, g: (usize, usize), v: F) {
        let i = self.index(s, a, g);
        self.values[i] = v;
    }

    /// Lookup by coordinate vectors, as stored in trajectories.
    pub fn value_at(&self, s: &[F], a: usize, g: &[F]) -> Result<F> {
        if a >= GRID_ACTIONS {
            return contract(format!("grid action index {a} not in 0..{GRID_ACTIONS}"));
        }
        Ok(self.get(self.cell(s)?, a, self.cell(g)?))
    }

    /// Greedy action, lowest index on ties.
    pub fn greedy(&self, s: &[F], g: &[F]) -> Result<usize> {
        let q = self.row(s, g)?;
        Ok(argmax(&q))
    }

    /// `max_a Q(s, a, g)`.
    pub fn value(&self, s: &[F], g: &[F]) -> Result<F> {
        let q = self.row(s, g)?;
        Ok(q[argmax(&q)])
    }

    pub fn row(&self, s: &[F], g: &[F]) -> Result<Vec<F>> {
        let (s, g) = (self.cell(s)?, self.cell(g)?);
        Ok((0..GRID_ACTIONS).map(|a| self.get(s, a, g)).collect())
    }

    fn cell(&self, v: &[F]) -> Result<(usize, usize)> {
        let c = |x: F| x.to_usize().filter(|c| *c < self.size && F::from_usize(*c) == Some(x));
        match (v.len(), v.first().and_then(|&x| c(x)), v.get(1).and_then(|&y| c(y))) {
            (2, Some(x), Some(y)) => Ok((x, y)),
            _ => contract(format!("{v:?} is not a cell of a {0}x{0} grid", self.size)),
        }
    }
}

/// Value-iteration result with the sup-norm Bellman residual of every sweep.
#[derive(Clone, Debug)]
pub struct ValueIteration<F> {
    pub q: TabularQ<F>,
    pub residuals: Vec<F>,
}

/// Bellman optimality iteration for the sparse goal reward on a grid,
/// `Q(s, a, g) = r(s', g) + gamma * max_a' Q(s', a', g)`, run until the
/// residual is at most `1e-12`.
pub fn value_iteration<F: Scalar>(env: &EnvSpec<F>, gamma: F) -> Result<ValueIteration<F>> {
    let EnvKind::Grid { size } = env.kind else {
        return contract("value iteration needs a grid environment");
    };
    if !(gamma >= F::zero() && gamma < F::one()) {
        return contract(format!("value iteration needs gamma in [0, 1), got {gamma}"));
    }
    let cells = env.cells();
    // Successor cell and reward per (s, a, g) never change between sweeps.
    let mut next = Vec::with_capacity(cells.len() * GRID_ACTIONS);
    for &(x, y) in &cells {
        for a in 0..GRID_ACTIONS {
            let s2 = grid_step(&State::<F>::cell(x, y), a, size)?;
            let c = (s2[0].to_usize().unwrap_or(0), s2[1].to_usize().unwrap_or(0));
            next.push(c);
        }
    }
    let tol = F::lit(1e-12);
    let max_sweeps = 100_000;
    let mut q = TabularQ::zeros(size);
    let mut residuals = Vec::new();
    for _ in 0..max_sweeps {
        let mut fresh = q.clone();
        let mut residual = F::zero();
        for (si, &s) in cells.iter().enumerate() {
            for a in 0..GRID_ACTIONS {
                let s2 = next[si * GRID_ACTIONS + a];
                for &g in &cells {
                    let r = if s2 == g { F::zero() } else { -F::one() };
                    let best = (0..GRID_ACTIONS)
                        .map(|b| q.get(s2, b, g))
                        .fold(F::neg_infinity(), F::max);
                    let v = r + gamma * best;
                    residual = residual.max((v - q.get(s, a, g)).abs());
                    fresh.set(s, a, g, v);
                }
            }
        }
        q = fresh;
        residuals.push(residual);
        if residual <= tol {
            return Ok(ValueIteration { q, residuals });
        }
    }
    contract("value iteration did not converge")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{rollout, Action, Goal};

    fn closed_form(gamma: f64, d: usize) -> f64 {
        -(1.0 - gamma.powi(d as i32)) / (1.0 - gamma)
    }

    #[test]
    fn matches_closed_form_on_small_grid() {
        let env = EnvSpec::<f64>::grid(4);
        let vi = value_iteration(&env, 0.9).unwrap();
        for &(sx, sy) in &env.cells() {
            for a in 0..GRID_ACTIONS {
                let s2 = grid_step(&State::<f64>::cell(sx, sy), a, 4).unwrap();
                for &(gx, gy) in &env.cells() {
                    let d = (s2[0] - gx as f64).abs() + (s2[1] - gy as f64).abs();
                    let want = closed_form(0.9, d as usize);
                    assert!((vi.q.get((sx, sy), a, (gx, gy)) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn frozen_values() {
        let env = EnvSpec::<f64>::grid(5);
        let vi = value_iteration(&env, 0.9).unwrap();
        // Step onto the goal.
        assert_eq!(vi.q.get((1, 1), 3, (2, 1)), 0.0);
        // Right from (0,0) lands two moves from (3,0).
        assert!((vi.q.get((0, 0), 3, (3, 0)) + 1.9).abs() < 1e-12);
    }

    #[test]
    fn residuals_non_increasing() {
        let vi = value_iteration(&EnvSpec::<f64>::grid(5), 0.9).unwrap();
        assert!(vi.residuals.windows(2).all(|w| w[1] <= w[0]));
        assert!(*vi.residuals.last().unwrap() <= 1e-12);
    }

    #[test]
    fn greedy_reaches_every_goal() {
        let env = EnvSpec::<f64>::grid(5);
        let vi = value_iteration(&env, 0.9).unwrap();
        for &(sx, sy) in &env.cells() {
            for &(gx, gy) in &env.cells() {
                let traj = rollout(
                    &env,
                    |s: &State<f64>, g: &Goal<f64>| Action::Discrete(vi.q.greedy(s, g).unwrap()),
                    &Goal::cell(gx, gy),
                    &State::cell(sx, sy),
                )
                .unwrap();
                assert!(traj.is_success(&env).unwrap());
            }
        }
    }

    #[test]
    fn rejects_point_env_and_bad_gamma() {
        assert!(value_iteration(&EnvSpec::<f64>::point(), 0.9).is_err());
        assert!(value_iteration(&EnvSpec::<f64>::grid(3), 1.0).is_err());
    }
}
