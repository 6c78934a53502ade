//! Deterministic, fully observable key-and-door passageway gridworlds.
//!
//! Map files are ASCII grids, one character per cell:
//!
//! | char | cell |
//! |------|------|
//! | `#`  | wall |
//! | `.`  | floor |
//! | `S`  | start region (floor) |
//! | `K`  | key 1 |
//! | `P`  | key 2 |
//! | `D`  | door 1 |
//! | `E`  | door 2 |
//! | `G`  | goal |

use std::collections::VecDeque;

use rand::Rng;
use thiserror::Error;

use crate::error::{Error, Result};

pub const EASY_MAP: &str = include_str!("../maps/easy.map");
pub const HARD_MAP: &str = include_str!("../maps/hard.map");

/// Maximum number of key/door pairs the legend can express.
pub const MAX_PAIRS: usize = 2;
pub const DEFAULT_STEP_CAP: u32 = 200;
pub const KEY_REWARD: f64 = 1.0;
pub const GOAL_REWARD: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("map is empty")]
    Empty,
    #[error("row {row} has width {found}, expected {expected}")]
    NonRectangular {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown symbol {symbol:?} at row {row}, column {col}")]
    UnknownSymbol { symbol: char, row: usize, col: usize },
    #[error("boundary cell at row {row}, column {col} is not a wall")]
    OpenBoundary { row: usize, col: usize },
    #[error("map has no goal")]
    MissingGoal,
    #[error("map has {0} goals, expected exactly one")]
    MultipleGoals(usize),
    #[error("map has no start cell")]
    MissingStart,
    #[error("door {0} has no matching key")]
    DoorWithoutKey(usize),
    #[error("key {0} has no matching door")]
    KeyWithoutDoor(usize),
    #[error("key {0} appears more than once")]
    DuplicateKey(usize),
    #[error("key/door pair 2 requires pair 1")]
    MissingFirstPair,
    #[error("goal is reachable from the start region with every door closed")]
    GoalReachableWithDoorsClosed,
    #[error("cell at row {row}, column {col} is unreachable even with all doors open")]
    UnreachableCell { row: usize, col: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Wall,
    Floor,
    Start,
    Key(usize),
    Door(usize),
    Goal,
}

impl Cell {
    fn parse(c: char) -> Option<Self> {
        Some(match c {
            '#' => Cell::Wall,
            '.' => Cell::Floor,
            'S' => Cell::Start,
            'K' => Cell::Key(0),
            'P' => Cell::Key(1),
            'D' => Cell::Door(0),
            'E' => Cell::Door(1),
            'G' => Cell::Goal,
            _ => return None,
        })
    }

    pub fn symbol(self) -> char {
        match self {
            Cell::Wall => '#',
            Cell::Floor => '.',
            Cell::Start => 'S',
            Cell::Key(0) => 'K',
            Cell::Key(_) => 'P',
            Cell::Door(0) => 'D',
            Cell::Door(_) => 'E',
            Cell::Goal => 'G',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 4;

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("action index {i} out of range")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMap {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    starts: Vec<usize>,
    goal: usize,
    keys: Vec<usize>,
    num_pairs: usize,
}

impl GridMap {
    pub fn parse(text: &str) -> Result<Self, MapError> {
        let rows: Vec<&str> = text
            .lines()
            .map(|l| l.trim_end_matches('\r'))
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .skip_while(|l| l.is_empty())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        if rows.is_empty() || rows[0].is_empty() {
            return Err(MapError::Empty);
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        for (r, line) in rows.iter().enumerate() {
            let found = line.chars().count();
            if found != width {
                return Err(MapError::NonRectangular {
                    row: r,
                    expected: width,
                    found,
                });
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::parse(ch).ok_or(MapError::UnknownSymbol {
                    symbol: ch,
                    row: r,
                    col: c,
                })?;
                cells.push(cell);
            }
        }
        for r in 0..height {
            for c in 0..width {
                let boundary = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
                if boundary && cells[r * width + c] != Cell::Wall {
                    return Err(MapError::OpenBoundary { row: r, col: c });
                }
            }
        }
        let goals: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == Cell::Goal).collect();
        let goal = match goals.len() {
            0 => return Err(MapError::MissingGoal),
            1 => goals[0],
            n => return Err(MapError::MultipleGoals(n)),
        };
        let starts: Vec<usize> = (0..cells.len()).filter(|&i| cells[i] == Cell::Start).collect();
        if starts.is_empty() {
            return Err(MapError::MissingStart);
        }
        let mut keys = Vec::new();
        let mut num_pairs = 0;
        for p in 0..MAX_PAIRS {
            let key_cells: Vec<usize> =
                (0..cells.len()).filter(|&i| cells[i] == Cell::Key(p)).collect();
            let has_door = cells.contains(&Cell::Door(p));
            match (key_cells.len(), has_door) {
                (0, false) => continue,
                (0, true) => return Err(MapError::DoorWithoutKey(p + 1)),
                (1, false) => return Err(MapError::KeyWithoutDoor(p + 1)),
                (1, true) => {}
                _ => return Err(MapError::DuplicateKey(p + 1)),
            }
            if p != keys.len() {
                return Err(MapError::MissingFirstPair);
            }
            keys.push(key_cells[0]);
            num_pairs = p + 1;
        }
        let map = Self {
            width,
            height,
            cells,
            starts,
            goal,
            keys,
            num_pairs,
        };
        if map.flood_fill(false)[map.goal] {
            return Err(MapError::GoalReachableWithDoorsClosed);
        }
        let open = map.flood_fill(true);
        if let Some(i) = (0..map.cells.len()).find(|&i| map.cells[i] != Cell::Wall && !open[i]) {
            return Err(MapError::UnreachableCell {
                row: i / width,
                col: i % width,
            });
        }
        Ok(map)
    }

    /// `easy`, `hard`, or None.
    pub fn bundled(name: &str) -> Option<Self> {
        let text = match name {
            "easy" => EASY_MAP,
            "hard" => HARD_MAP,
            _ => return None,
        };
        Some(Self::parse(text).expect("bundled maps are valid"))
    }

    /// Cells reachable from the start region, treating doors as open or as walls.
    fn flood_fill(&self, doors_open: bool) -> Vec<bool> {
        let mut seen = vec![false; self.cells.len()];
        let mut queue: VecDeque<usize> = self.starts.iter().copied().collect();
        for &s in &self.starts {
            seen[s] = true;
        }
        while let Some(i) = queue.pop_front() {
            for a in Action::ALL {
                if let Some(j) = self.neighbor(i, a) {
                    let passable = match self.cells[j] {
                        Cell::Wall => false,
                        Cell::Door(_) => doors_open,
                        _ => true,
                    };
                    if passable && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        seen
    }

    fn neighbor(&self, i: usize, a: Action) -> Option<usize> {
        let (dr, dc) = a.delta();
        let r = (i / self.width).checked_add_signed(dr)?;
        let c = (i % self.width).checked_add_signed(dc)?;
        (r < self.height && c < self.width).then_some(r * self.width + c)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_keys(&self) -> usize {
        self.num_pairs
    }

    pub fn num_doors(&self) -> usize {
        self.num_pairs
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        self.cells[index]
    }

    pub fn start_cells(&self) -> &[usize] {
        &self.starts
    }

    pub fn goal_cell(&self) -> usize {
        self.goal
    }

    pub fn key_cell(&self, pair: usize) -> usize {
        self.keys[pair]
    }

    /// Length of the flat observation vector.
    pub fn observation_dim(&self) -> usize {
        self.cells.len() + 2 * self.num_pairs
    }

    pub fn render(&self) -> String {
        let mut s = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(self.cell(r, c).symbol());
            }
            s.push('\n');
        }
        s
    }
}

/// Compact observation: one-hot agent position plus key and door flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    num_cells: u32,
    position: u32,
    num_pairs: u8,
    keys: u8,
    doors: u8,
}

impl Observation {
    pub fn dim(&self) -> usize {
        self.num_cells as usize + 2 * self.num_pairs as usize
    }

    pub fn position(&self) -> usize {
        self.position as usize
    }

    pub fn has_key(&self, pair: usize) -> bool {
        self.keys >> pair & 1 == 1
    }

    pub fn door_open(&self, pair: usize) -> bool {
        self.doors >> pair & 1 == 1
    }

    /// Writes the flat real-valued vector into `out` (length [`Observation::dim`]).
    pub fn write_into(&self, out: &mut [f64]) {
        out.fill(0.0);
        out[self.position as usize] = 1.0;
        let n = self.num_cells as usize;
        let p = self.num_pairs as usize;
        for i in 0..p {
            out[n + i] = f64::from(self.keys >> i & 1);
            out[n + p + i] = f64::from(self.doors >> i & 1);
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.write_into(&mut v);
        v
    }

    pub(crate) fn pack(&self) -> u64 {
        u64::from(self.num_cells)
            | u64::from(self.position) << 24
            | u64::from(self.num_pairs) << 48
            | u64::from(self.keys) << 52
            | u64::from(self.doors) << 56
    }

    pub(crate) fn unpack(v: u64) -> Self {
        Self {
            num_cells: (v & 0xFF_FFFF) as u32,
            position: (v >> 24 & 0xFF_FFFF) as u32,
            num_pairs: (v >> 48 & 0xF) as u8,
            keys: (v >> 52 & 0xF) as u8,
            doors: (v >> 56 & 0xFF) as u8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridState {
    pub row: usize,
    pub col: usize,
    pub has_key: Vec<bool>,
    pub door_open: Vec<bool>,
    pub key_reward_paid: Vec<bool>,
    pub step_count: u32,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: GridState,
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
}

/// A map plus its episode cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridEnv {
    map: GridMap,
    step_cap: u32,
}

impl GridEnv {
    pub fn new(map: GridMap, step_cap: u32) -> Result<Self> {
        if step_cap == 0 {
            return Err(Error::InvalidArgument("step cap must be positive".into()));
        }
        Ok(Self { map, step_cap })
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn step_cap(&self) -> u32 {
        self.step_cap
    }

    pub fn observation_dim(&self) -> usize {
        self.map.observation_dim()
    }

    pub fn observe(&self, state: &GridState) -> Observation {
        let bits = |flags: &[bool]| {
            flags
                .iter()
                .enumerate()
                .fold(0u8, |acc, (i, &f)| acc | (f as u8) << i)
        };
        Observation {
            num_cells: self.map.num_cells() as u32,
            position: (state.row * self.map.width + state.col) as u32,
            num_pairs: self.map.num_pairs as u8,
            keys: bits(&state.has_key),
            doors: bits(&state.door_open),
        }
    }

    /// Places the agent uniformly at random in the start region.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> (GridState, Observation) {
        let starts = self.map.start_cells();
        let cell = starts[rng.random_range(0..starts.len())];
        let n = self.map.num_pairs;
        let state = GridState {
            row: cell / self.map.width,
            col: cell % self.map.width,
            has_key: vec![false; n],
            door_open: vec![false; n],
            key_reward_paid: vec![false; n],
            step_count: 0,
            done: false,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn step(&self, state: &GridState, action: Action) -> Result<StepOutcome> {
        if state.done {
            return Err(Error::TerminalStep);
        }
        let mut next = state.clone();
        next.step_count += 1;
        let here = state.row * self.map.width + state.col;
        let mut reward = 0.0;
        let mut reached_goal = false;
        if let Some(target) = self.map.neighbor(here, action) {
            let enter = match self.map.cells[target] {
                Cell::Wall => false,
                Cell::Door(p) => {
                    if next.door_open[p] {
                        true
                    } else if next.has_key[p] {
                        next.door_open[p] = true;
                        true
                    } else {
                        false
                    }
                }
                _ => true,
            };
            if enter {
                next.row = target / self.map.width;
                next.col = target % self.map.width;
                match self.map.cells[target] {
                    Cell::Key(p) => {
                        next.has_key[p] = true;
                        if !next.key_reward_paid[p] {
                            next.key_reward_paid[p] = true;
                            reward += KEY_REWARD;
                        }
                    }
                    Cell::Goal => {
                        reward += GOAL_REWARD;
                        reached_goal = true;
                    }
                    _ => {}
                }
            }
        }
        next.done = reached_goal || next.step_count >= self.step_cap;
        let observation = self.observe(&next);
        Ok(StepOutcome {
            done: next.done,
            state: next,
            observation,
            reward,
            reached_goal,
        })
    }
}

/// True iff the episode reached the goal before the step cap ran out.
pub fn success(trace: &[StepOutcome]) -> bool {
    trace.iter().any(|s| s.reached_goal)
}
