//! Multi-step target estimators.
//!
//! Every estimator is a pure function of a [`SampledSegment`], a
//! [`BootstrapOracle`] backed by the target networks, and the discount. Offsets
//! are relative to the segment start: offset `i` refers to `s_{t+i}` and the
//! reward `r_{t+i}` earned on entering it.

use crate::error::{contract, Error, Result};
use crate::mdp::{Goal, State};
use crate::replay::SampledSegment;
use crate::scalar::Scalar;

/// Which estimator produces the critic's regression target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TargetKind {
    /// One-step target.
    Her,
    /// Plain n-step target.
    Mher,
    /// λ-average of the 1..n step targets.
    MherLambda,
    /// Truncated n-step target that stops accumulating at the first zero reward.
    Tmher,
    /// λ-average of truncated targets; the bias-resilient target.
    TmherLambda,
    /// Retrace(λ) with logged behavior probabilities.
    Retrace,
}

impl TargetKind {
    pub fn name(self) -> &'static str {
        match self {
            TargetKind::Her => "her",
            TargetKind::Mher => "mher",
            TargetKind::MherLambda => "mher_lambda",
            TargetKind::Tmher => "tmher",
            TargetKind::TmherLambda => "tmher_lambda",
            TargetKind::Retrace => "retrace",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetSpec<F> {
    pub kind: TargetKind,
    pub n: usize,
    pub lambda: F,
}

impl<F: Scalar> TargetSpec<F> {
    pub fn new(kind: TargetKind, n: usize, lambda: F) -> Result<Self> {
        let spec = TargetSpec { kind, n, lambda };
        spec.validate()?;
        Ok(spec)
    }

    pub fn her() -> Self {
        TargetSpec {
            kind: TargetKind::Her,
            n: 1,
            lambda: F::lit(0.7),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return contract("target horizon n must be at least 1");
        }
        if !(self.lambda >= F::zero() && self.lambda <= F::one()) {
            return contract(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.kind == TargetKind::Her && self.n != 1 {
            return contract("the one-step target fixes n = 1");
        }
        Ok(())
    }

    pub fn requires_discrete(&self) -> bool {
        self.kind == TargetKind::Retrace
    }
}

/// Target-network values the estimators bootstrap from.
pub trait BootstrapOracle<F: Scalar> {
    /// `Q̄(s_{t+i}, π̄(s_{t+i}, g), g)` for `1 <= i <= seg.len()`.
    fn bootstrap(&mut self, seg: &SampledSegment<'_, F>, i: usize) -> Result<F>;

    /// `Q̄(s_{t+i}, a, g)` for every action and the policy probabilities
    /// `π(a | s_{t+i}, g)`. Needed by retrace only.
    fn action_values(&mut self, _seg: &SampledSegment<'_, F>, _i: usize) -> Result<(Vec<F>, Vec<F>)> {
        contract("this oracle has no per-action values")
    }
}

/// Oracle evaluating a closure `(state, goal) -> Q̄(state, π̄(state))` on demand.
pub struct StateFn<C>(pub C);

impl<F, C> BootstrapOracle<F> for StateFn<C>
where
    F: Scalar,
    C: FnMut(&State<F>, &Goal<F>) -> F,
{
    fn bootstrap(&mut self, seg: &SampledSegment<'_, F>, i: usize) -> Result<F> {
        check_offset(seg, i)?;
        Ok((self.0)(seg.state(i), seg.goal()))
    }
}

/// Oracle evaluating a closure `(state, goal) -> (Q̄(state, ·), π(· | state))`.
/// The bootstrap value is the policy expectation of the action values.
pub struct ActionValuesFn<C>(pub C);

impl<F, C> BootstrapOracle<F> for ActionValuesFn<C>
where
    F: Scalar,
    C: FnMut(&State<F>, &Goal<F>) -> (Vec<F>, Vec<F>),
{
    fn bootstrap(&mut self, seg: &SampledSegment<'_, F>, i: usize) -> Result<F> {
        let (q, p) = self.action_values(seg, i)?;
        Ok(expectation(&q, &p))
    }

    fn action_values(&mut self, seg: &SampledSegment<'_, F>, i: usize) -> Result<(Vec<F>, Vec<F>)> {
        check_offset(seg, i)?;
        let (q, p) = (self.0)(seg.state(i), seg.goal());
        if q.len() != p.len() {
            return Err(Error::Shape {
                expected: q.len(),
                got: p.len(),
            });
        }
        Ok((q, p))
    }
}

/// Values precomputed for one segment, indexed by offset `1..=len`.
/// Entries not needed by the estimator may be left as `None`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SegmentValues<F> {
    pub bootstrap: Vec<Option<F>>,
    pub action_values: Vec<Option<(Vec<F>, Vec<F>)>>,
}

impl<F: Scalar> SegmentValues<F> {
    pub fn new(len: usize) -> Self {
        SegmentValues {
            bootstrap: vec![None; len],
            action_values: vec![None; len],
        }
    }
}

impl<F: Scalar> BootstrapOracle<F> for SegmentValues<F> {
    fn bootstrap(&mut self, seg: &SampledSegment<'_, F>, i: usize) -> Result<F> {
        check_offset(seg, i)?;
        self.bootstrap
            .get(i - 1)
            .copied()
            .flatten()
            .ok_or_else(|| Error::Contract(format!("no bootstrap value at offset {i}")))
    }

    fn action_values(&mut self, seg: &SampledSegment<'_, F>, i: usize) -> Result<(Vec<F>, Vec<F>)> {
        check_offset(seg, i)?;
        self.action_values
            .get(i - 1)
            .cloned()
            .flatten()
            .ok_or_else(|| Error::Contract(format!("no action values at offset {i}")))
    }
}

fn check_offset<F: Scalar>(seg: &SampledSegment<'_, F>, i: usize) -> Result<()> {
    if i == 0 || i > seg.len() {
        return contract(format!("bootstrap offset {i} outside 1..={}", seg.len()));
    }
    Ok(())
}

fn expectation<F: Scalar>(q: &[F], p: &[F]) -> F {
    q.iter().zip(p).map(|(&q, &p)| q * p).sum()
}

/// Offsets at which `spec` reads a bootstrap value (or per-action values, for
/// retrace) on this segment.
pub fn bootstrap_offsets<F: Scalar>(spec: &TargetSpec<F>, seg: &SampledSegment<'_, F>) -> Vec<usize> {
    let n = spec.n.min(seg.len());
    match spec.kind {
        TargetKind::Her => vec![1],
        TargetKind::Mher => vec![n],
        TargetKind::MherLambda | TargetKind::TmherLambda | TargetKind::Retrace => (1..=n).collect(),
        TargetKind::Tmher => vec![truncation_point(seg.rewards(), n)],
    }
}

/// Offset at which the truncated n-step target bootstraps: the first zero
/// reward, or `n`.
fn truncation_point<F: Scalar>(rewards: &[F], n: usize) -> usize {
    rewards[..n].iter().position(|r| r.is_zero()).map_or(n, |k| k + 1)
}

/// `y^(i)` for `i = 1..=min(n, len)`.
pub fn n_step_targets<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
    n: usize,
) -> Result<Vec<F>> {
    let n = effective_n(seg, n)?;
    let mut out = Vec::with_capacity(n);
    let mut partial = F::zero();
    let mut disc = F::one();
    for i in 1..=n {
        partial += disc * seg.rewards()[i - 1];
        disc *= gamma;
        out.push(partial + disc * oracle.bootstrap(seg, i)?);
    }
    Ok(out)
}

/// `y^(n) = sum_{i<n} γ^i r_{t+i+1} + γ^n Q̄(s_{t+n}, π̄(s_{t+n}))`, with `n`
/// truncated to the segment length.
pub fn n_step_target<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
    n: usize,
) -> Result<F> {
    let n = effective_n(seg, n)?;
    let mut acc = F::zero();
    let mut disc = F::one();
    for &r in &seg.rewards()[..n] {
        acc += disc * r;
        disc *= gamma;
    }
    Ok(acc + disc * oracle.bootstrap(seg, n)?)
}

/// λ-weighted average of `y^(1) .. y^(n)` with weights `λ^i`.
pub fn lambda_target<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
    n: usize,
    lambda: F,
) -> Result<F> {
    if lambda.is_zero() {
        return n_step_target(seg, oracle, gamma, 1);
    }
    Ok(lambda_average(&n_step_targets(seg, oracle, gamma, n)?, lambda))
}

/// `ŷ^(i)` for `i = 1..=min(n, len)`.
///
/// `ŷ^(i)` accumulates rewards like `y^(i)` but bootstraps right after the
/// first transition whose reward is zero.
pub fn truncated_targets<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
    n: usize,
) -> Result<Vec<F>> {
    let n = effective_n(seg, n)?;
    let stop = truncation_point(seg.rewards(), n);
    let mut out = Vec::with_capacity(n);
    let mut partial = F::zero();
    let mut disc = F::one();
    for i in 1..=stop {
        partial += disc * seg.rewards()[i - 1];
        disc *= gamma;
        out.push(partial + disc * oracle.bootstrap(seg, i)?);
    }
    // Every longer horizon collapses onto the value at the truncation point.
    let last = *out.last().expect("stop >= 1");
    out.resize(n, last);
    Ok(out)
}

/// Truncated n-step target `ŷ^(n)`.
pub fn truncated_target<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
    n: usize,
) -> Result<F> {
    let n = effective_n(seg, n)?;
    let stop = truncation_point(seg.rewards(), n);
    let mut acc = F::zero();
    let mut disc = F::one();
    for &r in &seg.rewards()[..stop] {
        acc += disc * r;
        disc *= gamma;
    }
    Ok(acc + disc * oracle.bootstrap(seg, stop)?)
}

/// λ-weighted average of `ŷ^(1) .. ŷ^(n)`.
pub fn truncated_lambda_target<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
    n: usize,
    lambda: F,
) -> Result<F> {
    if lambda.is_zero() {
        return truncated_target(seg, oracle, gamma, 1);
    }
    Ok(lambda_average(&truncated_targets(seg, oracle, gamma, n)?, lambda))
}

/// Retrace(λ) target with traces `c_i = λ min(1, π(a_{t+i}) / μ(a_{t+i}))`
/// and `c_n = 0`:
///
/// `Σ_{i=1}^{n} γ^{i-1} (Π_{j<i} c_j) (r_{t+i} + γ E_π Q̄(s_{t+i}, ·) - γ c_i Q̄(s_{t+i}, a_{t+i}))`.
pub fn retrace_target<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
    n: usize,
    lambda: F,
) -> Result<F> {
    let n = effective_n(seg, n)?;
    let mut acc = F::zero();
    let mut weight = F::one();
    for i in 1..=n {
        let (q, pi) = oracle.action_values(seg, i)?;
        let expected = expectation(&q, &pi);
        let (c, q_logged) = if i < n {
            let a = seg
                .action(i)
                .index()
                .ok_or_else(|| Error::Contract("retrace needs discrete actions".into()))?;
            let mu = seg
                .behavior_prob(i)
                .ok_or_else(|| Error::Contract("retrace needs logged behavior probabilities".into()))?;
            if !(mu > F::zero()) {
                return contract(format!("behavior probability {mu} of a logged action must be positive"));
            }
            let (Some(&pa), Some(&qa)) = (pi.get(a), q.get(a)) else {
                return contract(format!("action {a} outside the oracle's action set"));
            };
            (lambda * (pa / mu).min(F::one()), qa)
        } else {
            (F::zero(), F::zero())
        };
        acc += weight * (seg.rewards()[i - 1] + gamma * expected - gamma * c * q_logged);
        weight = weight * gamma * c;
    }
    Ok(acc)
}

/// Dispatches to the estimator selected by `spec`.
pub fn compute_target<F: Scalar, O: BootstrapOracle<F> + ?Sized>(
    spec: &TargetSpec<F>,
    seg: &SampledSegment<'_, F>,
    oracle: &mut O,
    gamma: F,
) -> Result<F> {
    match spec.kind {
        TargetKind::Her => n_step_target(seg, oracle, gamma, 1),
        TargetKind::Mher => n_step_target(seg, oracle, gamma, spec.n),
        TargetKind::MherLambda => lambda_target(seg, oracle, gamma, spec.n, spec.lambda),
        TargetKind::Tmher => truncated_target(seg, oracle, gamma, spec.n),
        TargetKind::TmherLambda => truncated_lambda_target(seg, oracle, gamma, spec.n, spec.lambda),
        TargetKind::Retrace => retrace_target(seg, oracle, gamma, spec.n, spec.lambda),
    }
}

/// `Σ λ^i y_i / Σ λ^i` over `i = 1..=len`, computed with the weights
/// scaled by `1/λ` so a single term comes back unchanged.
pub fn lambda_average<F: Scalar>(values: &[F], lambda: F) -> F {
    let mut num = F::zero();
    let mut den = F::zero();
    let mut w = F::one();
    for &v in values {
        num += w * v;
        den += w;
        w *= lambda;
    }
    num / den
}

fn effective_n<F: Scalar>(seg: &SampledSegment<'_, F>, n: usize) -> Result<usize> {
    if n == 0 {
        return contract("target horizon n must be at least 1");
    }
    Ok(n.min(seg.len()))
}
