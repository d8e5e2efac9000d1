#![allow(dead_code)]

use gcrl::mdp::{grid_step, Action, EnvSpec, Goal, State, Trajectory};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's chi-square statistic against `expected`.
pub fn chi_square_p(observed: &[usize], expected: &[f64]) -> f64 {
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dist = ChiSquared::new((observed.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

/// Random-action grid trajectory with behavior probability 1/5.
pub fn random_grid_trajectory<R: Rng>(env: &EnvSpec<f64>, rng: &mut R) -> Trajectory<f64> {
    let (s, g) = env.sample_start_goal(rng);
    random_grid_trajectory_from(env, s, g, rng)
}

pub fn random_grid_trajectory_from<R: Rng>(
    env: &EnvSpec<f64>,
    start: State<f64>,
    goal: Goal<f64>,
    rng: &mut R,
) -> Trajectory<f64> {
    let size = match env.kind {
        gcrl::mdp::EnvKind::Grid { size } => size,
        _ => panic!("grid only"),
    };
    let mut states = vec![start];
    let mut actions = Vec::new();
    for _ in 0..env.horizon {
        let a = rng.random_range(0..5);
        states.push(grid_step(states.last().unwrap(), a, size).unwrap());
        actions.push(Action::Discrete(a));
    }
    let mu = vec![0.2; env.horizon];
    Trajectory::new(env, states, actions, goal, Some(mu)).unwrap()
}

/// Dense critic on grid inputs `[s, g, one_hot(a)]`.
pub struct NetCritic(pub gcrl::approx::DenseNet<f64>);

impl NetCritic {
    pub fn random<R: Rng>(rng: &mut R, hidden: usize) -> Self {
        NetCritic(
            gcrl::approx::DenseNet::new(&[9, hidden, hidden, 1], gcrl::approx::OutputActivation::Linear, rng).unwrap(),
        )
    }

    pub fn q(&self, s: &State<f64>, a: &Action<f64>, g: &Goal<f64>) -> f64 {
        let mut x = vec![s[0], s[1], g[0], g[1]];
        x.extend(a.encode(5));
        self.0.forward(&x).unwrap()[0]
    }

    pub fn row(&self, s: &State<f64>, g: &Goal<f64>) -> Vec<f64> {
        (0..5).map(|a| self.q(s, &Action::Discrete(a), g)).collect()
    }

    pub fn greedy(&self, s: &State<f64>, g: &Goal<f64>) -> Action<f64> {
        Action::Discrete(gcrl::approx::argmax(&self.row(s, g)))
    }
}

/// `|a - b| / (|a| + |b|)`, zero when both vanish.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let den = a.abs() + b.abs();
    if den < 1e-10 {
        (a - b).abs()
    } else {
        (a - b).abs() / den
    }
}

/// Worst relative error between the analytic parameter gradient of
/// `L = Σ c ⊙ net(x)` and central differences with step `h`.
pub fn net_gradient_error(
    net: &gcrl::approx::DenseNet<f64>,
    x: &ndarray::Array2<f64>,
    c: &ndarray::Array2<f64>,
    h: f64,
) -> f64 {
    let loss = |n: &gcrl::approx::DenseNet<f64>| (n.forward_batch(x.view()).unwrap() * c).sum();
    let trace = net.forward_trace(x.view()).unwrap();
    let (grads, _) = net.backward(&trace, c.view()).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].weights.dim();
        for i in 0..rows {
            for j in 0..cols {
                let w0 = net.layers()[l].weights[[i, j]];
                probe.layers_mut()[l].weights[[i, j]] = w0 + h;
                let up = loss(&probe);
                probe.layers_mut()[l].weights[[i, j]] = w0 - h;
                let down = loss(&probe);
                probe.layers_mut()[l].weights[[i, j]] = w0;
                worst = worst.max(rel_err(grads.layers[l].weights[[i, j]], (up - down) / (2.0 * h)));
            }
        }
        for j in 0..cols {
            let b0 = net.layers()[l].bias[j];
            probe.layers_mut()[l].bias[j] = b0 + h;
            let up = loss(&probe);
            probe.layers_mut()[l].bias[j] = b0 - h;
            let down = loss(&probe);
            probe.layers_mut()[l].bias[j] = b0;
            worst = worst.max(rel_err(grads.layers[l].bias[j], (up - down) / (2.0 * h)));
        }
    }
    worst
}
