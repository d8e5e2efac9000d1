use crate::error::{contract, Result};
use crate::scalar::Scalar;

use super::State;

pub const GRID_ACTIONS: usize = 5;

/// Grid moves. `Up` increments `y`, `Right` increments `x`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(usize)]
pub enum GridAction {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

impl GridAction {
    pub fn from_index(i: usize) -> Option<Self> {
        use GridAction::*;
        [Up, Down, Left, Right, Stay].get(i).copied()
    }

    fn delta(self) -> (i64, i64) {
        match self {
            GridAction::Up => (0, 1),
            GridAction::Down => (0, -1),
            GridAction::Left => (-1, 0),
            GridAction::Right => (1, 0),
            GridAction::Stay => (0, 0),
        }
    }
}

fn coord<F: Scalar>(v: F, size: usize) -> Result<i64> {
    let c = v.to_i64().filter(|c| F::from_i64(*c) == Some(v));
    match c {
        Some(c) if c >= 0 && (c as usize) < size => Ok(c),
        _ => contract(format!("grid coordinate {v} outside [0, {}]", size - 1)),
    }
}

/// Moves one cell in the action's direction, clamped at the borders.
pub fn grid_step<F: Scalar>(pos: &State<F>, action: usize, size: usize) -> Result<State<F>> {
    let Some(a) = GridAction::from_index(action) else {
        return contract(format!("grid action index {action} not in 0..{GRID_ACTIONS}"));
    };
    if pos.len() != 2 {
        return contract("grid state must be 2-D");
    }
    let (x, y) = (coord(pos[0], size)?, coord(pos[1], size)?);
    let (dx, dy) = a.delta();
    let hi = size as i64 - 1;
    let nx = (x + dx).clamp(0, hi) as usize;
    let ny = (y + dy).clamp(0, hi) as usize;
    Ok(State::cell(nx, ny))
}

/// A shortest-path move toward `goal`: fix `x` first, then `y`, then stay.
pub fn shortest_path_action<F: Scalar>(pos: &[F], goal: &[F]) -> GridAction {
    if goal[0] > pos[0] {
        GridAction::Right
    } else if goal[0] < pos[0] {
        GridAction::Left
    } else if goal[1] > pos[1] {
        GridAction::Up
    } else if goal[1] < pos[1] {
        GridAction::Down
    } else {
        GridAction::Stay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stay_is_identity() {
        let s = State::<f64>::cell(3, 3);
        assert_eq!(grid_step(&s, GridAction::Stay as usize, 10).unwrap(), s);
    }

    #[test]
    fn interior_moves_are_unit_displacements() {
        let s = State::<f64>::cell(2, 5);
        let expect = [(2, 6), (2, 4), (1, 5), (3, 5), (2, 5)];
        for (a, (x, y)) in expect.into_iter().enumerate() {
            assert_eq!(grid_step(&s, a, 10).unwrap(), State::cell(x, y), "action {a}");
        }
    }

    #[test]
    fn border_cells_clamp() {
        let n = 6;
        for x in 0..n {
            for y in 0..n {
                if x != 0 && y != 0 && x != n - 1 && y != n - 1 {
                    continue;
                }
                for a in 0..GRID_ACTIONS {
                    let next = grid_step(&State::<f64>::cell(x, y), a, n).unwrap();
                    let (dx, dy) = GridAction::from_index(a).unwrap().delta();
                    let ex = (x as i64 + dx).clamp(0, n as i64 - 1);
                    let ey = (y as i64 + dy).clamp(0, n as i64 - 1);
                    assert_eq!(next, State::cell(ex as usize, ey as usize));
                }
            }
        }
        let corner = State::<f64>::cell(0, 0);
        assert_eq!(grid_step(&corner, GridAction::Left as usize, n).unwrap(), corner);
    }

    #[test]
    fn invalid_inputs() {
        let s = State::<f64>::cell(1, 1);
        assert!(grid_step(&s, 5, 4).is_err());
        assert!(grid_step(&State(vec![0.5, 1.0]), 0, 4).is_err());
        assert!(grid_step(&State(vec![4.0, 1.0]), 0, 4).is_err());
    }

    #[test]
    fn deterministic() {
        for a in 0..GRID_ACTIONS {
            let s = State::<f64>::cell(1, 2);
            let x = grid_step(&s, a, 5).unwrap();
            let y = grid_step(&s, a, 5).unwrap();
            assert_eq!(x.0[0].to_bits(), y.0[0].to_bits());
            assert_eq!(x.0[1].to_bits(), y.0[1].to_bits());
        }
    }
}
