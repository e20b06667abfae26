//! Gridworld environments with hazards and conveyor belts.
//!
//! Cells are numbered row-major, `state = y * width + x`, with `y = 0` the
//! top row. Actions are `up`, `down`, `left`, `right` in that order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::formula::{Atom, LabelSet};
use crate::markov::{Dynamics, LabeledMdp, StateId};

pub const HAZARD_ATOM: &str = "hazard";
pub const DEFAULT_STEP_REWARD: f64 = -0.01;
pub const DEFAULT_GOAL_REWARD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::Up, Direction::Down, Direction::Left, Direction::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    fn perpendicular(self) -> [Direction; 2] {
        match self {
            Direction::Up | Direction::Down => [Direction::Left, Direction::Right],
            Direction::Left | Direction::Right => [Direction::Up, Direction::Down],
        }
    }

    fn delta(self) -> (i64, i64) {
        match self {
            Direction::Up => (0, -1),
            Direction::Down => (0, 1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(Direction::Up),
            "down" => Ok(Direction::Down),
            "left" => Ok(Direction::Left),
            "right" => Ok(Direction::Right),
            _ => Err(GridError::Direction(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid must be at least 1x1")]
    Empty,
    #[error("{what} cell {cell} is outside the {width}x{height} grid")]
    OutOfBounds {
        what: &'static str,
        cell: Cell,
        width: usize,
        height: usize,
    },
    #[error("start cell {0} is a hazard")]
    StartIsHazard(Cell),
    #[error("slip probability {0} outside [0, 1)")]
    Slip(f64),
    #[error("unknown direction `{0}`")]
    Direction(String),
    #[error("discount {0} outside (0, 1]")]
    Gamma(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridworldSpec {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    pub hazards: BTreeSet<Cell>,
    pub conveyors: BTreeMap<Cell, Direction>,
    pub slip_prob: f64,
    pub step_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl GridworldSpec {
    pub fn new(width: usize, height: usize, start: Cell, goal: Cell) -> Self {
        GridworldSpec {
            width,
            height,
            start,
            goal,
            hazards: BTreeSet::new(),
            conveyors: BTreeMap::new(),
            slip_prob: 0.0,
            step_reward: DEFAULT_STEP_REWARD,
            goal_reward: DEFAULT_GOAL_REWARD,
            gamma: 0.99,
        }
    }

    /// A 7x7 layout with one hazard in the open and a conveyor chain of
    /// length 3 that carries anything on it into a second hazard. The
    /// direct route runs along the middle row, clear of both. Steps are free
    /// so that hazards are never a shortcut out of a step penalty.
    ///
    /// ```text
    /// . . . X . . .
    /// . . . . . . .
    /// . . . . . . .
    /// S . . . . . G
    /// . . . . . . .
    /// . . . . . . .
    /// . > > > X . .
    /// ```
    pub fn conveyor_example() -> Self {
        let mut spec = GridworldSpec::new(7, 7, Cell::new(0, 3), Cell::new(6, 3));
        spec.hazards.insert(Cell::new(3, 0));
        spec.hazards.insert(Cell::new(4, 6));
        for x in 1..=3 {
            spec.conveyors.insert(Cell::new(x, 6), Direction::Right);
        }
        spec.slip_prob = 0.1;
        spec.step_reward = 0.0;
        spec
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn state(&self, cell: Cell) -> StateId {
        cell.y * self.width + cell.x
    }

    pub fn cell(&self, state: StateId) -> Cell {
        Cell::new(state % self.width, state / self.width)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.width == 0 || self.height == 0 {
            return Err(GridError::Empty);
        }
        let check = |what: &'static str, cell: Cell| {
            if cell.x >= self.width || cell.y >= self.height {
                Err(GridError::OutOfBounds {
                    what,
                    cell,
                    width: self.width,
                    height: self.height,
                })
            } else {
                Ok(())
            }
        };
        check("start", self.start)?;
        check("goal", self.goal)?;
        for &h in &self.hazards {
            check("hazard", h)?;
        }
        for &c in self.conveyors.keys() {
            check("conveyor", c)?;
        }
        if self.hazards.contains(&self.start) {
            return Err(GridError::StartIsHazard(self.start));
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(GridError::Slip(self.slip_prob));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(GridError::Gamma(self.gamma));
        }
        Ok(())
    }

    fn moved(&self, cell: Cell, dir: Direction) -> Cell {
        let (dx, dy) = dir.delta();
        let x = cell.x as i64 + dx;
        let y = cell.y as i64 + dy;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            cell
        } else {
            Cell::new(x as usize, y as usize)
        }
    }

    pub fn is_absorbing(&self, cell: Cell) -> bool {
        cell == self.goal || self.hazards.contains(&cell)
    }

    /// ASCII rendering, one row per line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|x| {
                    let c = Cell::new(x, y);
                    if self.hazards.contains(&c) {
                        "X".into()
                    } else if c == self.goal {
                        "G".into()
                    } else if c == self.start {
                        "S".into()
                    } else if let Some(d) = self.conveyors.get(&c) {
                        match d {
                            Direction::Up => "^",
                            Direction::Down => "v",
                            Direction::Left => "<",
                            Direction::Right => ">",
                        }
                        .into()
                    } else {
                        ".".into()
                    }
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Compiles a gridworld into a labeled MDP.
///
/// Off-grid moves stay in place. Conveyor cells ignore the chosen action and
/// move deterministically in their direction. Elsewhere a move slips to one
/// of the two perpendicular directions with total probability `slip_prob`.
/// Hazard and goal cells are absorbing. Rewards are expected entry rewards:
/// `goal_reward` for arriving at the goal, `step_reward` otherwise.
pub fn build_gridworld(spec: &GridworldSpec) -> Result<LabeledMdp, GridError> {
    spec.validate()?;
    let n = spec.num_cells();
    let m = Direction::ALL.len();
    let mut probs = vec![0.0; n * m * n];
    let mut reward = vec![0.0; n * m];
    for s in 0..n {
        let cell = spec.cell(s);
        for (a, &dir) in Direction::ALL.iter().enumerate() {
            let row = &mut probs[(s * m + a) * n..(s * m + a + 1) * n];
            if spec.is_absorbing(cell) {
                row[s] = 1.0;
                continue;
            }
            if let Some(&forced) = spec.conveyors.get(&cell) {
                row[spec.state(spec.moved(cell, forced))] += 1.0;
            } else {
                row[spec.state(spec.moved(cell, dir))] += 1.0 - spec.slip_prob;
                for side in dir.perpendicular() {
                    row[spec.state(spec.moved(cell, side))] += spec.slip_prob / 2.0;
                }
            }
            reward[s * m + a] = row
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(next, &p)| {
                    let r = if spec.cell(next) == spec.goal {
                        spec.goal_reward
                    } else {
                        spec.step_reward
                    };
                    p * r
                })
                .sum();
        }
    }
    let hazard = Atom::new(HAZARD_ATOM).expect("valid atom");
    let labels: Vec<LabelSet> = (0..n)
        .map(|s| {
            let mut set = LabelSet::new();
            if spec.hazards.contains(&spec.cell(s)) {
                set.insert(hazard.clone());
            }
            set
        })
        .collect();
    let mut initial = vec![0.0; n];
    initial[spec.state(spec.start)] = 1.0;
    let dynamics = Dynamics::new(n, m, probs).expect("gridworld rows are stochastic");
    Ok(
        LabeledMdp::new(dynamics, initial, reward, spec.gamma, vec![hazard], labels)
            .expect("gridworld MDP is well formed"),
    )
}
