use crate::scalar::Scalar;

use super::State;

/// `pos + step_scale * action`, with the action and the result clipped to
/// `[-1, 1]` and `[0, 1]` respectively.
pub fn point_step<F: Scalar>(pos: &State<F>, action: &[F], step_scale: F) -> State<F> {
    let one = F::one();
    State(
        pos.iter()
            .zip(action)
            .map(|(&p, &a)| {
                let a = a.max(-one).min(one);
                (p + step_scale * a).max(F::zero()).min(one)
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_action() {
        let s = State(vec![0.5, 0.5]);
        assert_eq!(point_step(&s, &[0.0, 0.0], 0.05), s);
    }

    #[test]
    fn clipped_at_boundary() {
        let s = State(vec![1.0, 0.5]);
        assert_eq!(point_step(&s, &[1.0, 0.0], 0.05), State(vec![1.0, 0.5]));
    }

    #[test]
    fn diagonal_move() {
        let next = point_step(&State::<f64>(vec![0.5, 0.5]), &[1.0, -1.0], 0.05);
        assert!((next[0] - 0.55).abs() < 1e-15);
        assert!((next[1] - 0.45).abs() < 1e-15);
    }

    #[test]
    fn oversized_action_is_clipped() {
        let next = point_step(&State::<f64>(vec![0.5, 0.5]), &[3.0, -7.0], 0.05);
        assert!((next[0] - 0.55).abs() < 1e-15);
        assert!((next[1] - 0.45).abs() < 1e-15);
    }
}
