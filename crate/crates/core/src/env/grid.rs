//! Grid worlds loaded from ASCII maps.
//!
//! Map format: a header line `width height slip_intended slip_perp`
//! followed by `height` rows of exactly `width` cells:
//!
//! | char | cell  |
//! |------|-------|
//! | `#`  | wall  |
//! | `.`  | free  |
//! | `S`  | start |
//! | `G`  | goal  |
//! | `L`  | lava  |
//! | `F`  | flag  |
//!
//! Positions outside the grid behave like walls.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::{check_action, DiscreteEnvironment, StepResult};
use crate::mdp::DiscreteMdp;
use crate::{Error, Result};

pub const LAVALAKE_5X7: &str = include_str!("../../maps/lavalake_5x7.map");
pub const LAVALAKE_10X10: &str = include_str!("../../maps/lavalake_10x10.map");
pub const MAZE: &str = include_str!("../../maps/maze.map");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Free,
    Wall,
    Lava,
    Goal,
    Start,
    Flag,
}

impl CellKind {
    fn from_char(c: char) -> Option<Self> {
        Some(match c {
            '.' => CellKind::Free,
            '#' => CellKind::Wall,
            'L' => CellKind::Lava,
            'G' => CellKind::Goal,
            'S' => CellKind::Start,
            'F' => CellKind::Flag,
            _ => return None,
        })
    }

    fn to_char(self) -> char {
        match self {
            CellKind::Free => '.',
            CellKind::Wall => '#',
            CellKind::Lava => 'L',
            CellKind::Goal => 'G',
            CellKind::Start => 'S',
            CellKind::Flag => 'F',
        }
    }

    /// Entering the cell ends the episode.
    pub fn is_terminal(self) -> bool {
        matches!(self, CellKind::Lava | CellKind::Goal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub width: usize,
    pub height: usize,
    pub slip_intended: f64,
    pub slip_perp: f64,
    cells: Vec<CellKind>,
}

impl GridMap {
    pub fn cell(&self, row: usize, col: usize) -> CellKind {
        self.cells[row * self.width + col]
    }

    pub fn start(&self) -> (usize, usize) {
        let i = self
            .cells
            .iter()
            .position(|&c| c == CellKind::Start)
            .expect("validated map has a start");
        (i / self.width, i % self.width)
    }

    fn parse_error(line: usize, column: usize, message: impl Into<String>) -> Error {
        Error::MapParse {
            line,
            column,
            message: message.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let starts = self.cells.iter().filter(|&&c| c == CellKind::Start).count();
        if starts != 1 {
            return Err(Self::parse_error(1, 1, format!("expected exactly one start, found {starts}")));
        }
        if !self.cells.contains(&CellKind::Goal) {
            return Err(Self::parse_error(1, 1, "map has no goal"));
        }
        if self.slip_intended < 0.0 || self.slip_perp < 0.0 || self.slip_intended + 2.0 * self.slip_perp > 1.0 + 1e-12 {
            return Err(Self::parse_error(1, 1, "slip probabilities exceed one"));
        }
        // Terminal cells are entered but never expanded.
        let (sr, sc) = self.start();
        let mut seen = vec![false; self.cells.len()];
        seen[sr * self.width + sc] = true;
        let mut queue = VecDeque::from([(sr, sc)]);
        while let Some((r, c)) = queue.pop_front() {
            if self.cell(r, c).is_terminal() {
                continue;
            }
            for dir in 0..4 {
                if let Some((nr, nc)) = self.neighbour(r, c, dir) {
                    let i = nr * self.width + nc;
                    if !seen[i] {
                        seen[i] = true;
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
        for (i, &kind) in self.cells.iter().enumerate() {
            if kind != CellKind::Wall && !seen[i] {
                return Err(Self::parse_error(
                    i / self.width + 2,
                    i % self.width + 1,
                    "cell is not reachable from the start",
                ));
            }
        }
        Ok(())
    }

    /// Adjacent non-wall cell in direction `dir` (0 up, 1 right, 2 down, 3 left).
    fn neighbour(&self, r: usize, c: usize, dir: usize) -> Option<(usize, usize)> {
        let (nr, nc) = match dir {
            0 => (r.checked_sub(1)?, c),
            1 => (r, c + 1),
            2 => (r + 1, c),
            _ => (r, c.checked_sub(1)?),
        };
        if nr >= self.height || nc >= self.width || self.cell(nr, nc) == CellKind::Wall {
            None
        } else {
            Some((nr, nc))
        }
    }
}

impl FromStr for GridMap {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Self::parse_error(1, 1, "empty map"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Self::parse_error(
                1,
                1,
                "header must be `width height slip_intended slip_perp`",
            ));
        }
        let mut column = 1;
        let mut parsed = [0.0f64; 4];
        for (k, field) in fields.iter().enumerate() {
            column = header.find(field).map_or(column, |i| i + 1);
            parsed[k] = field
                .parse::<f64>()
                .map_err(|_| Self::parse_error(1, column, format!("cannot parse '{field}'")))?;
        }
        let width = parsed[0] as usize;
        let height = parsed[1] as usize;
        if width == 0 || height == 0 || parsed[0].fract() != 0.0 || parsed[1].fract() != 0.0 {
            return Err(Self::parse_error(1, 1, "width and height must be positive integers"));
        }
        let mut cells = Vec::with_capacity(width * height);
        for row in 0..height {
            let line_no = row + 2;
            let line = lines
                .next()
                .ok_or_else(|| Self::parse_error(line_no, 1, "missing map row"))?;
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != width {
                return Err(Self::parse_error(
                    line_no,
                    chars.len().min(width) + 1,
                    format!("row has {} cells, expected {width}", chars.len()),
                ));
            }
            for (col, ch) in chars.into_iter().enumerate() {
                let kind = CellKind::from_char(ch).ok_or_else(|| {
                    Self::parse_error(line_no, col + 1, format!("unknown cell '{ch}'"))
                })?;
                cells.push(kind);
            }
        }
        if let Some((k, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
            return Err(Self::parse_error(height + 2 + k, 1, "trailing content after map rows"));
        }
        let map = GridMap {
            width,
            height,
            slip_intended: parsed[2],
            slip_perp: parsed[3],
            cells,
        };
        map.validate()?;
        Ok(map)
    }
}

impl fmt::Display for GridMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {} {} {}",
            self.width, self.height, self.slip_intended, self.slip_perp
        )?;
        for r in 0..self.height {
            let row: String = (0..self.width).map(|c| self.cell(r, c).to_char()).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GoalReward {
    Fixed(f64),
    /// Reward per collected flag.
    PerFlag(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridRewards {
    pub step: f64,
    pub goal: GoalReward,
    pub lava: f64,
}

impl GridRewards {
    pub const LAVALAKE: GridRewards = GridRewards {
        step: -1.0,
        goal: GoalReward::Fixed(50.0),
        lava: -50.0,
    };
    pub const MAZE: GridRewards = GridRewards {
        step: 0.0,
        goal: GoalReward::PerFlag(1.0),
        lava: 0.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LavaLakeVariant {
    /// 5 rows × 7 columns.
    Small,
    /// 10 × 10.
    Large,
}

/// A grid world whose state is `(location, collected-flag mask)`.
///
/// Every non-wall, non-lava cell is a location. Goal locations are
/// transient: entering the goal pays and resets to the start.
#[derive(Debug, Clone)]
pub struct GridWorld {
    name: String,
    map: GridMap,
    rewards: GridRewards,
    location_of_cell: Vec<Option<usize>>,
    cell_of_location: Vec<(usize, usize)>,
    flag_of_cell: Vec<Option<usize>>,
    n_flags: usize,
    start_state: usize,
    state: usize,
    last_direction: Option<usize>,
    rng: crate::Rng,
}

/// The flag-collecting maze (33 locations × 8 flag combinations).
pub struct Maze;

impl Maze {
    pub const N_STATES: usize = 264;

    pub fn new(seed: u64) -> Result<GridWorld> {
        let map: GridMap = MAZE.parse()?;
        let world = GridWorld::from_map("maze", map, GridRewards::MAZE, seed)?;
        if world.n_states() != Self::N_STATES {
            return Err(Error::InvalidInput(format!(
                "maze has {} states, expected {}",
                world.n_states(),
                Self::N_STATES
            )));
        }
        Ok(world)
    }
}

impl GridWorld {
    pub fn lavalake(variant: LavaLakeVariant, seed: u64) -> Result<Self> {
        let (name, text) = match variant {
            LavaLakeVariant::Small => ("lavalake-5x7", LAVALAKE_5X7),
            LavaLakeVariant::Large => ("lavalake-10x10", LAVALAKE_10X10),
        };
        Self::from_map(name, text.parse()?, GridRewards::LAVALAKE, seed)
    }

    pub fn from_map(name: &str, map: GridMap, rewards: GridRewards, seed: u64) -> Result<Self> {
        let mut location_of_cell = vec![None; map.cells.len()];
        let mut cell_of_location = Vec::new();
        let mut flag_of_cell = vec![None; map.cells.len()];
        let mut n_flags = 0;
        for r in 0..map.height {
            for c in 0..map.width {
                let i = r * map.width + c;
                match map.cells[i] {
                    CellKind::Wall | CellKind::Lava => {}
                    kind => {
                        location_of_cell[i] = Some(cell_of_location.len());
                        cell_of_location.push((r, c));
                        if kind == CellKind::Flag {
                            flag_of_cell[i] = Some(n_flags);
                            n_flags += 1;
                        }
                    }
                }
            }
        }
        if n_flags > 16 {
            return Err(Error::InvalidInput("at most 16 flags are supported".into()));
        }
        let (sr, sc) = map.start();
        let start_state = location_of_cell[sr * map.width + sc].expect("start is a location") << n_flags;
        Ok(Self {
            name: name.to_string(),
            map,
            rewards,
            location_of_cell,
            cell_of_location,
            flag_of_cell,
            n_flags,
            start_state,
            state: start_state,
            last_direction: None,
            rng: crate::seeded_rng(seed, 0),
        })
    }

    /// Overrides the slip model (e.g. `(1, 0)` for deterministic tests).
    pub fn with_slip(mut self, intended: f64, perpendicular: f64) -> Self {
        self.map.slip_intended = intended;
        self.map.slip_perp = perpendicular;
        self
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn n_flags(&self) -> usize {
        self.n_flags
    }

    pub fn n_locations(&self) -> usize {
        self.cell_of_location.len()
    }

    /// Direction actually moved on the last step.
    pub fn last_direction(&self) -> Option<usize> {
        self.last_direction
    }

    pub fn state_of(&self, row: usize, col: usize, mask: usize) -> Option<usize> {
        self.location_of_cell[row * self.map.width + col].map(|loc| (loc << self.n_flags) | mask)
    }

    pub fn set_state(&mut self, state: usize) {
        assert!(state < self.n_states());
        self.state = state;
    }

    fn decode(&self, state: usize) -> ((usize, usize), usize) {
        let loc = state >> self.n_flags;
        let mask = state & ((1 << self.n_flags) - 1);
        (self.cell_of_location[loc], mask)
    }

    /// `(next_state, reward, terminal)` for moving in `dir` from `state`;
    /// `None` stays put and re-enters the current cell.
    fn outcome(&self, state: usize, dir: Option<usize>) -> (usize, f64, bool) {
        let ((r, c), mask) = self.decode(state);
        let (nr, nc) = dir
            .and_then(|d| self.map.neighbour(r, c, d))
            .unwrap_or((r, c));
        let cell = nr * self.map.width + nc;
        match self.map.cells[cell] {
            CellKind::Lava => (self.start_state, self.rewards.lava, true),
            CellKind::Goal => {
                let reward = match self.rewards.goal {
                    GoalReward::Fixed(g) => g,
                    GoalReward::PerFlag(g) => g * mask.count_ones() as f64,
                };
                (self.start_state, reward, true)
            }
            _ => {
                let mask = match self.flag_of_cell[cell] {
                    Some(f) => mask | (1 << f),
                    None => mask,
                };
                let loc = self.location_of_cell[cell].expect("non-wall cell");
                ((loc << self.n_flags) | mask, self.rewards.step, false)
            }
        }
    }

    /// Movement outcomes for `action`: intended, the two perpendicular
    /// directions, and staying put with the leftover probability.
    fn direction_probs(&self, action: usize) -> [(Option<usize>, f64); 4] {
        let p = self.map.slip_intended;
        let q = self.map.slip_perp;
        [
            (Some(action), p),
            (Some((action + 1) % 4), q),
            (Some((action + 3) % 4), q),
            (None, (1.0 - p - 2.0 * q).max(0.0)),
        ]
    }
}

impl DiscreteEnvironment for GridWorld {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_states(&self) -> usize {
        self.cell_of_location.len() << self.n_flags
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn start_state(&self) -> usize {
        self.start_state
    }

    fn state(&self) -> usize {
        self.state
    }

    fn reset(&mut self) -> usize {
        self.state = self.start_state;
        self.state
    }

    fn step(&mut self, action: usize) -> Result<StepResult<usize>> {
        check_action(action, 4)?;
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut direction = None;
        for (dir, p) in self.direction_probs(action) {
            acc += p;
            if u < acc {
                direction = dir;
                break;
            }
        }
        self.last_direction = direction;
        let (next, reward, terminal) = self.outcome(self.state, direction);
        self.state = next;
        Ok(StepResult {
            next_state: next,
            reward,
            terminal,
        })
    }

    fn as_mdp(&self, discount: f64) -> DiscreteMdp {
        let n = self.n_states();
        let mut p = vec![0.0; n * 4 * n];
        let mut r = vec![0.0; n * 4];
        for s in 0..n {
            for a in 0..4 {
                for (dir, w) in self.direction_probs(a) {
                    if w == 0.0 {
                        continue;
                    }
                    let (next, reward, _) = self.outcome(s, dir);
                    p[(s * 4 + a) * n + next] += w;
                    r[s * 4 + a] += w * reward;
                }
            }
        }
        DiscreteMdp::from_tables(n, 4, &p, &r, discount).expect("valid grid model")
    }

    fn reward_bounds(&self) -> (f64, f64) {
        let goal_max = match self.rewards.goal {
            GoalReward::Fixed(g) => g,
            GoalReward::PerFlag(g) => g * self.n_flags as f64,
        };
        let lo = [self.rewards.step, self.rewards.lava, goal_max.min(0.0)]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        let hi = [self.rewards.step, goal_max, self.rewards.lava]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}
