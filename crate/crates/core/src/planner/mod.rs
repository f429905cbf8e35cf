//! Deterministic built-in planners: exhaustive grid, uniform random over the
//! grid, and epsilon-greedy local search around the best result so far.
//!
//! All three are pure functions of `(seed, space, history)`; their only
//! state is a grid cursor and a [`Rng64`], both journaled with every
//! experiment so a recovered campaign proposes exactly what it would have.

mod rng;
mod space;

use serde::{Deserialize, Serialize};

pub use rng::{rng_index, rng_next, Rng64};
pub use space::{grid_point, ParameterSpace, SpaceError, MAX_GRID_SIZE};

use crate::wire::Record;

/// Resolution of the epsilon draw.
pub const EPSILON_RESOLUTION: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    /// Whether `candidate` strictly beats `incumbent`.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Maximize => candidate > incumbent,
            Direction::Minimize => candidate < incumbent,
        }
    }

    /// Whether `value` meets or passes `target`.
    pub fn reaches(self, value: f64, target: f64) -> bool {
        match self {
            Direction::Maximize => value >= target,
            Direction::Minimize => value <= target,
        }
    }
}

/// One past experiment as a planner sees it. `objective` is set only for
/// experiments that finished DONE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub params: Record,
    pub objective: Option<f64>,
}

/// Index of the extremal objective; ties go to the lowest index.
pub fn best_so_far<I>(objectives: I, direction: Direction) -> Option<usize>
where
    I: IntoIterator<Item = Option<f64>>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, obj) in objectives.into_iter().enumerate() {
        let Some(v) = obj else { continue };
        match best {
            Some((_, b)) if !direction.improves(v, b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Position of the grid planner, as a flat row-major index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GridCursor {
    pub flat_index: u64,
}

/// Next grid point, or `None` once every point has been proposed.
pub fn grid_next(cursor: &mut GridCursor, space: &ParameterSpace) -> Result<Option<Record>, SpaceError> {
    if cursor.flat_index >= space.grid_size()? {
        return Ok(None);
    }
    let params = grid_point(space, cursor.flat_index)?;
    cursor.flat_index += 1;
    Ok(Some(params))
}

fn random_indices(rng: &mut Rng64, lens: &[u64]) -> Vec<u64> {
    lens.iter().map(|&n| rng.index(n)).collect()
}

/// One uniform draw per dimension, in declaration order.
pub fn random_next(rng: &mut Rng64, space: &ParameterSpace) -> Result<Record, SpaceError> {
    let lens = space.axis_lens()?;
    Ok(space.params_at(&random_indices(rng, &lens)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub params: Record,
    /// Set when the space admits no move away from the incumbent.
    pub degenerate: bool,
}

/// Epsilon-greedy proposal.
///
/// Without a DONE observation this is [`random_next`]. Otherwise it explores
/// with probability `epsilon` and else steps the best point one grid index
/// along one randomly chosen dimension. The epsilon draw is only taken when
/// `0 < epsilon < 1`; the end points are decided without consuming
/// randomness.
pub fn epsilon_greedy_next(
    rng: &mut Rng64,
    space: &ParameterSpace,
    history: &[Observation],
    direction: Direction,
    epsilon: f64,
) -> Result<Proposal, SpaceError> {
    let lens = space.axis_lens()?;
    let Some(best) = best_so_far(history.iter().map(|o| o.objective), direction) else {
        return Ok(Proposal { params: random_next(rng, space)?, degenerate: false });
    };
    let explore = if epsilon >= 1.0 {
        true
    } else if epsilon <= 0.0 {
        false
    } else {
        (rng.index(EPSILON_RESOLUTION) as f64 / EPSILON_RESOLUTION as f64) < epsilon
    };
    if explore {
        return Ok(Proposal { params: random_next(rng, space)?, degenerate: false });
    }
    let mut idx = space.indices_of(&history[best].params).unwrap_or_else(|| vec![0; lens.len()]);
    if lens.is_empty() {
        return Ok(Proposal { params: Record::new(), degenerate: true });
    }
    let dim = rng.index(lens.len() as u64) as usize;
    let up = rng.index(2) == 1;
    let here = idx[dim];
    let last = lens[dim] - 1;
    let step = |up: bool| if up { (here + 1).min(last) } else { here.saturating_sub(1) };
    let mut moved = step(up);
    if moved == here {
        moved = step(!up);
    }
    idx[dim] = moved;
    Ok(Proposal { params: space.params_at(&idx), degenerate: lens.iter().all(|&n| n == 1) })
}

/// Which built-in planner a campaign runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BuiltinPlanner {
    Grid,
    Random { seed: u64 },
    EpsilonGreedy { seed: u64, epsilon: f64 },
}

/// Everything a built-in planner carries between proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlannerState {
    pub cursor: GridCursor,
    pub rng: Rng64,
}

impl Default for Rng64 {
    fn default() -> Self {
        Rng64::new(0)
    }
}

impl BuiltinPlanner {
    pub fn name(&self) -> &'static str {
        match self {
            BuiltinPlanner::Grid => "grid",
            BuiltinPlanner::Random { .. } => "random",
            BuiltinPlanner::EpsilonGreedy { .. } => "epsilon_greedy",
        }
    }

    pub fn initial_state(&self) -> PlannerState {
        let seed = match self {
            BuiltinPlanner::Grid => 0,
            BuiltinPlanner::Random { seed } | BuiltinPlanner::EpsilonGreedy { seed, .. } => *seed,
        };
        PlannerState { cursor: GridCursor::default(), rng: Rng64::new(seed) }
    }

    /// Proposes the next parameters, or `None` when the planner is exhausted.
    pub fn propose(
        &self,
        state: &mut PlannerState,
        space: &ParameterSpace,
        history: &[Observation],
        direction: Direction,
    ) -> Result<Option<Proposal>, SpaceError> {
        Ok(match *self {
            BuiltinPlanner::Grid => {
                grid_next(&mut state.cursor, space)?.map(|params| Proposal { params, degenerate: false })
            }
            BuiltinPlanner::Random { .. } => {
                Some(Proposal { params: random_next(&mut state.rng, space)?, degenerate: false })
            }
            BuiltinPlanner::EpsilonGreedy { epsilon, .. } => {
                Some(epsilon_greedy_next(&mut state.rng, space, history, direction, epsilon)?)
            }
        })
    }

    /// True once no further proposals will come.
    pub fn is_exhausted(&self, state: &PlannerState, space: &ParameterSpace) -> bool {
        match self {
            BuiltinPlanner::Grid => space.grid_size().map_or(true, |n| state.cursor.flat_index >= n),
            _ => false,
        }
    }
}
