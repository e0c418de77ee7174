//! The gridsworld: scenes, movement dynamics with obstacles and traps, the
//! relational and trap queries answered by the simulated user, and the
//! trap-aware shortest-path oracle.
//!
//! Coordinates are `(x, y)` with `x` growing to the right and `y` growing
//! upwards, so `(0, 0)` is the bottom-left cell.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Movement commands owed as failures after the square enters a trap.
pub const TRAP_LOCK_TURNS: u8 = 2;

/// Cost of leaving a trap cell: two failed attempts plus the successful one.
pub const TRAP_EXIT_COST: u32 = TRAP_LOCK_TURNS as u32 + 1;

pub const DEFAULT_TURN_LIMIT: usize = 30;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("{entity} at {pos} lies outside the {width}x{height} grid")]
    OutOfBounds {
        entity: &'static str,
        pos: Position,
        width: usize,
        height: usize,
    },
    #[error("cell {pos} holds both {first} and {second}")]
    Overlap {
        pos: Position,
        first: &'static str,
        second: &'static str,
    },
    #[error("grid dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },
    #[error("no path from the square to the circle")]
    NoPath,
    #[error("episode already finished; no further moves are accepted")]
    EpisodeFinished,
}

/// A cell on the grid.
///
/// Ordering is row-major from the bottom: by `y`, then by `x`. This is the
/// canonical order used for serialized coordinate lists and trap tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: Position) -> usize {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    /// The neighbouring cell in `dir`, if it stays on a `width` x `height` grid.
    pub fn step(self, dir: Direction, width: usize, height: usize) -> Option<Position> {
        let (dx, dy) = dir.delta();
        let x = self.x as i64 + dx as i64;
        let y = self.y as i64 + dy as i64;
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            return None;
        }
        Some(Position::new(x as usize, y as usize))
    }
}

impl Ord for Position {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.y, self.x).cmp(&(other.y, other.x))
    }
}

impl PartialOrd for Position {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl From<[usize; 2]> for Position {
    fn from([x, y]: [usize; 2]) -> Self {
        Position::new(x, y)
    }
}

impl From<Position> for [usize; 2] {
    fn from(p: Position) -> Self {
        [p.x, p.y]
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 4] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
    ];

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::Up => (0, 1),
            Direction::Down => (0, -1),
            Direction::Left => (-1, 0),
            Direction::Right => (1, 0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    pub fn from_name(s: &str) -> Option<Direction> {
        Direction::ALL.into_iter().find(|d| d.name() == s)
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Direction::Left | Direction::Right)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where the square sits relative to the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Above,
    Below,
    Left,
    Right,
}

/// An immutable gridsworld layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Scene {
    width: usize,
    height: usize,
    square: Position,
    circle: Position,
    obstacles: BTreeSet<Position>,
    traps: BTreeSet<Position>,
}

impl Scene {
    /// Builds a scene, rejecting off-grid entities and cells holding two entities.
    pub fn new(
        width: usize,
        height: usize,
        square: Position,
        circle: Position,
        obstacles: impl IntoIterator<Item = Position>,
        traps: impl IntoIterator<Item = Position>,
    ) -> Result<Scene, GridError> {
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGrid { width, height });
        }
        let mut occupied: Vec<(Position, &'static str)> = vec![(square, "square")];
        let check = |entity: &'static str, pos: Position| {
            if pos.x >= width || pos.y >= height {
                Err(GridError::OutOfBounds {
                    entity,
                    pos,
                    width,
                    height,
                })
            } else {
                Ok(())
            }
        };
        check("square", square)?;

        let mut place = |entity: &'static str, pos: Position| -> Result<(), GridError> {
            check(entity, pos)?;
            if let Some(&(_, first)) = occupied.iter().find(|(p, _)| *p == pos) {
                return Err(GridError::Overlap {
                    pos,
                    first,
                    second: entity,
                });
            }
            occupied.push((pos, entity));
            Ok(())
        };
        place("circle", circle)?;
        let mut obstacle_set = BTreeSet::new();
        for pos in obstacles {
            place("obstacle", pos)?;
            obstacle_set.insert(pos);
        }
        let mut trap_set = BTreeSet::new();
        for pos in traps {
            place("trap", pos)?;
            trap_set.insert(pos);
        }
        Ok(Scene {
            width,
            height,
            square,
            circle,
            obstacles: obstacle_set,
            traps: trap_set,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn square(&self) -> Position {
        self.square
    }

    pub fn circle(&self) -> Position {
        self.circle
    }

    /// Obstacles in canonical `(y, x)` order.
    pub fn obstacles(&self) -> &BTreeSet<Position> {
        &self.obstacles
    }

    /// Traps in canonical `(y, x)` order.
    pub fn traps(&self) -> &BTreeSet<Position> {
        &self.traps
    }

    pub fn is_obstacle(&self, pos: Position) -> bool {
        self.obstacles.contains(&pos)
    }

    pub fn is_trap(&self, pos: Position) -> bool {
        self.traps.contains(&pos)
    }

    pub fn cell_count(&self) -> usize {
        self.width * self.height
    }

    fn index(&self, pos: Position) -> usize {
        pos.y * self.width + pos.x
    }

    fn position(&self, index: usize) -> Position {
        Position::new(index % self.width, index / self.width)
    }

    fn exit_cost(&self, pos: Position) -> u32 {
        if self.is_trap(pos) {
            TRAP_EXIT_COST
        } else {
            1
        }
    }

    /// Renders the scene as text, top row first.
    ///
    /// `S` square, `C` circle, `#` obstacle, `T` trap, `.` free.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                let p = Position::new(x, y);
                let c = if p == self.square {
                    'S'
                } else if p == self.circle {
                    'C'
                } else if self.is_obstacle(p) {
                    '#'
                } else if self.is_trap(p) {
                    'T'
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MoveOutcome {
    Moved,
    Blocked,
    StuckInTrap,
    Completed,
}

/// The simulated user's answer to "Where is the nearest trap?".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrapAnswer {
    NoTraps,
    InOne,
    /// Signed offset from the square to the trap.
    Offset {
        dx: i32,
        dy: i32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeStatus {
    Ongoing,
    Success,
    Failure,
}

impl EpisodeStatus {
    pub fn is_terminal(self) -> bool {
        self != EpisodeStatus::Ongoing
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeStatus::Ongoing => "ongoing",
            EpisodeStatus::Success => "success",
            EpisodeStatus::Failure => "failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub turn_limit: usize,
    /// Whether a move into a wall while trapped still pays off one owed failure.
    pub blocked_move_consumes_trap_lock: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            turn_limit: DEFAULT_TURN_LIMIT,
            blocked_move_consumes_trap_lock: true,
        }
    }
}

/// Mutable per-episode state over a shared, immutable scene.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    scene: Arc<Scene>,
    square: Position,
    trap_lock: u8,
    turn: usize,
    status: EpisodeStatus,
    config: EpisodeConfig,
}

impl EpisodeState {
    pub fn new(scene: Arc<Scene>, config: EpisodeConfig) -> Self {
        let square = scene.square();
        Self {
            scene,
            square,
            trap_lock: 0,
            turn: 0,
            status: EpisodeStatus::Ongoing,
            config,
        }
    }

    pub fn scene(&self) -> &Arc<Scene> {
        &self.scene
    }

    pub fn square(&self) -> Position {
        self.square
    }

    pub fn trap_lock(&self) -> u8 {
        self.trap_lock
    }

    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn status(&self) -> EpisodeStatus {
        self.status
    }

    pub fn is_done(&self) -> bool {
        self.status.is_terminal()
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    /// Attempts to move the square one cell.
    pub fn apply_move(&mut self, dir: Direction) -> Result<MoveOutcome, GridError> {
        if self.is_done() {
            return Err(GridError::EpisodeFinished);
        }
        let target = self
            .square
            .step(dir, self.scene.width(), self.scene.height())
            .filter(|p| !self.scene.is_obstacle(*p));

        let outcome = if self.trap_lock > 0
            && (target.is_some() || self.config.blocked_move_consumes_trap_lock)
        {
            self.trap_lock -= 1;
            MoveOutcome::StuckInTrap
        } else {
            match target {
                None => MoveOutcome::Blocked,
                Some(p) if p == self.scene.circle() => {
                    self.square = p;
                    self.status = EpisodeStatus::Success;
                    MoveOutcome::Completed
                }
                Some(p) => {
                    self.square = p;
                    if self.scene.is_trap(p) {
                        self.trap_lock = TRAP_LOCK_TURNS;
                    }
                    MoveOutcome::Moved
                }
            }
        };
        self.advance_turn();
        Ok(outcome)
    }

    /// Counts a non-movement utterance against the turn limit.
    pub fn record_question(&mut self) -> Result<(), GridError> {
        if self.is_done() {
            return Err(GridError::EpisodeFinished);
        }
        self.advance_turn();
        Ok(())
    }

    fn advance_turn(&mut self) {
        self.turn += 1;
        if self.status == EpisodeStatus::Ongoing && self.turn >= self.config.turn_limit {
            self.status = EpisodeStatus::Failure;
        }
    }

    pub fn relational_answer(&self, relation: Relation) -> bool {
        let (s, c) = (self.square, self.scene.circle());
        match relation {
            Relation::Above => s.y > c.y,
            Relation::Below => s.y < c.y,
            Relation::Left => s.x < c.x,
            Relation::Right => s.x > c.x,
        }
    }

    pub fn nearest_trap_answer(&self) -> TrapAnswer {
        if self.scene.traps().is_empty() {
            return TrapAnswer::NoTraps;
        }
        if self.scene.is_trap(self.square) {
            return TrapAnswer::InOne;
        }
        // Traps iterate in (y, x) order, so min_by_key keeps the first of equals.
        let nearest = self
            .scene
            .traps()
            .iter()
            .min_by_key(|t| t.manhattan(self.square))
            .expect("non-empty trap set");
        TrapAnswer::Offset {
            dx: nearest.x as i32 - self.square.x as i32,
            dy: nearest.y as i32 - self.square.y as i32,
        }
    }
}

/// Minimum number of movement commands from the square to the circle,
/// counting the failed attempts owed after entering a trap.
pub fn oracle_solve_length(scene: &Scene) -> Result<u32, GridError> {
    oracle_path(scene).map(|(len, _)| len)
}

/// Trap-aware Dijkstra from the square to the circle, returning the cost and
/// one optimal sequence of successful moves.
pub fn oracle_path(scene: &Scene) -> Result<(u32, Vec<Direction>), GridError> {
    let n = scene.cell_count();
    let mut dist = vec![u32::MAX; n];
    let mut prev: Vec<Option<(usize, Direction)>> = vec![None; n];
    let source = scene.index(scene.square());
    let sink = scene.index(scene.circle());
    dist[source] = 0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0u32, source)));

    while let Some(Reverse((cost, idx))) = heap.pop() {
        if idx == sink {
            let mut moves = Vec::new();
            let mut cur = sink;
            while let Some((from, dir)) = prev[cur] {
                moves.push(dir);
                cur = from;
            }
            moves.reverse();
            return Ok((cost, moves));
        }
        if cost > dist[idx] {
            continue;
        }
        let pos = scene.position(idx);
        let next_cost = cost + scene.exit_cost(pos);
        for dir in Direction::ALL {
            let Some(np) = pos.step(dir, scene.width(), scene.height()) else {
                continue;
            };
            if scene.is_obstacle(np) {
                continue;
            }
            let ni = scene.index(np);
            if next_cost < dist[ni] {
                dist[ni] = next_cost;
                prev[ni] = Some((idx, dir));
                heap.push(Reverse((next_cost, ni)));
            }
        }
    }
    Err(GridError::NoPath)
}

/// Trap-aware distance from every cell to the circle.
#[derive(Debug, Clone)]
pub struct DistanceMap {
    width: usize,
    dist: Vec<Option<u32>>,
}

impl DistanceMap {
    /// Reverse Dijkstra from the circle. Moving from `p` to a neighbour costs
    /// the exit cost of `p`, so relaxing towards `p` charges `p`'s own cost.
    pub fn to_circle(scene: &Scene) -> DistanceMap {
        let n = scene.cell_count();
        let mut dist = vec![u32::MAX; n];
        let sink = scene.index(scene.circle());
        dist[sink] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0u32, sink)));
        while let Some(Reverse((cost, idx))) = heap.pop() {
            if cost > dist[idx] {
                continue;
            }
            let pos = scene.position(idx);
            for dir in Direction::ALL {
                let Some(np) = pos.step(dir, scene.width(), scene.height()) else {
                    continue;
                };
                if scene.is_obstacle(np) {
                    continue;
                }
                let ni = scene.index(np);
                let c = cost + scene.exit_cost(np);
                if c < dist[ni] {
                    dist[ni] = c;
                    heap.push(Reverse((c, ni)));
                }
            }
        }
        DistanceMap {
            width: scene.width(),
            dist: dist
                .into_iter()
                .map(|d| (d != u32::MAX).then_some(d))
                .collect(),
        }
    }

    pub fn get(&self, pos: Position) -> Option<u32> {
        self.dist.get(pos.y * self.width + pos.x).copied().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashMap, VecDeque};

    fn p(x: usize, y: usize) -> Position {
        Position::new(x, y)
    }

    pub(crate) fn example_scene() -> Scene {
        Scene::new(
            6,
            6,
            p(4, 5),
            p(2, 3),
            [p(5, 4), p(3, 4), p(2, 5), p(1, 3), p(0, 0), p(0, 3)],
            [p(1, 0), p(5, 1), p(3, 2), p(2, 4), p(1, 5), p(3, 5)],
        )
        .unwrap()
    }

    fn episode(scene: Scene) -> EpisodeState {
        EpisodeState::new(
            Arc::new(scene),
            EpisodeConfig {
                turn_limit: 1000,
                ..EpisodeConfig::default()
            },
        )
    }

    /// Breadth-first search over (square, trap_lock) states reachable by
    /// `apply_move`; every command costs one turn.
    fn exhaustive_min_commands(scene: &Scene) -> Option<u32> {
        let start = episode(scene.clone());
        let mut seen = HashMap::new();
        seen.insert((start.square(), start.trap_lock()), 0u32);
        let mut queue = VecDeque::from([(start, 0u32)]);
        while let Some((state, depth)) = queue.pop_front() {
            for dir in Direction::ALL {
                let mut next = state.clone();
                if next.apply_move(dir).unwrap() == MoveOutcome::Completed {
                    return Some(depth + 1);
                }
                let key = (next.square(), next.trap_lock());
                if let std::collections::hash_map::Entry::Vacant(e) = seen.entry(key) {
                    e.insert(depth + 1);
                    queue.push_back((next, depth + 1));
                }
            }
        }
        None
    }

    #[test]
    fn move_down_from_example_start() {
        let mut st = episode(Scene::new(6, 6, p(4, 5), p(2, 3), [], []).unwrap());
        assert_eq!(st.apply_move(Direction::Down).unwrap(), MoveOutcome::Moved);
        assert_eq!(st.square(), p(4, 4));
        assert_eq!(st.turn(), 1);
    }

    #[test]
    fn boundary_blocks() {
        let mut st = episode(Scene::new(6, 6, p(0, 0), p(5, 5), [], []).unwrap());
        assert_eq!(
            st.apply_move(Direction::Left).unwrap(),
            MoveOutcome::Blocked
        );
        assert_eq!(
            st.apply_move(Direction::Down).unwrap(),
            MoveOutcome::Blocked
        );
        assert_eq!(st.square(), p(0, 0));
        assert_eq!(st.turn(), 2);
    }

    #[test]
    fn obstacle_blocks() {
        let mut st = episode(Scene::new(6, 6, p(0, 0), p(5, 5), [p(1, 0)], []).unwrap());
        assert_eq!(
            st.apply_move(Direction::Right).unwrap(),
            MoveOutcome::Blocked
        );
        assert_eq!(st.square(), p(0, 0));
    }

    #[test]
    fn trap_sequence() {
        let mut st = episode(Scene::new(6, 6, p(0, 0), p(5, 5), [], [p(0, 1)]).unwrap());
        let seq: Vec<_> = (0..4)
            .map(|_| {
                let o = st.apply_move(Direction::Up).unwrap();
                (o, st.square(), st.trap_lock())
            })
            .collect();
        assert_eq!(
            seq,
            vec![
                (MoveOutcome::Moved, p(0, 1), 2),
                (MoveOutcome::StuckInTrap, p(0, 1), 1),
                (MoveOutcome::StuckInTrap, p(0, 1), 0),
                (MoveOutcome::Moved, p(0, 2), 0),
            ]
        );
    }

    #[test]
    fn blocked_move_while_trapped_respects_flag() {
        let scene = Arc::new(Scene::new(6, 6, p(0, 0), p(5, 5), [], [p(0, 1)]).unwrap());
        let mut lenient = EpisodeState::new(
            scene.clone(),
            EpisodeConfig {
                blocked_move_consumes_trap_lock: false,
                ..EpisodeConfig::default()
            },
        );
        lenient.apply_move(Direction::Up).unwrap();
        assert_eq!(
            lenient.apply_move(Direction::Left).unwrap(),
            MoveOutcome::Blocked
        );
        assert_eq!(lenient.trap_lock(), 2);

        let mut strict = EpisodeState::new(scene, EpisodeConfig::default());
        strict.apply_move(Direction::Up).unwrap();
        assert_eq!(
            strict.apply_move(Direction::Left).unwrap(),
            MoveOutcome::StuckInTrap
        );
        assert_eq!(strict.trap_lock(), 1);
    }

    #[test]
    fn questions_do_not_consume_trap_lock() {
        let mut st = episode(Scene::new(6, 6, p(0, 0), p(5, 5), [], [p(0, 1)]).unwrap());
        st.apply_move(Direction::Up).unwrap();
        st.record_question().unwrap();
        assert_eq!(st.trap_lock(), 2);
        assert_eq!(st.turn(), 2);
    }

    #[test]
    fn completion_and_terminal_error() {
        let mut st = episode(Scene::new(6, 6, p(0, 0), p(0, 1), [], []).unwrap());
        assert_eq!(
            st.apply_move(Direction::Up).unwrap(),
            MoveOutcome::Completed
        );
        assert_eq!(st.square(), p(0, 1));
        assert_eq!(st.status(), EpisodeStatus::Success);
        assert_eq!(
            st.apply_move(Direction::Up),
            Err(GridError::EpisodeFinished)
        );
        assert_eq!(st.record_question(), Err(GridError::EpisodeFinished));
    }

    #[test]
    fn turn_limit_fails_episode() {
        let scene = Arc::new(Scene::new(6, 6, p(0, 0), p(5, 5), [], []).unwrap());
        let mut st = EpisodeState::new(scene, EpisodeConfig::default());
        for _ in 0..29 {
            st.record_question().unwrap();
        }
        assert!(!st.is_done());
        st.apply_move(Direction::Left).unwrap();
        assert_eq!(st.status(), EpisodeStatus::Failure);
        assert_eq!(st.turn(), 30);
    }

    #[test]
    fn relational_answers() {
        let st = episode(example_scene());
        assert!(st.relational_answer(Relation::Above));
        assert!(!st.relational_answer(Relation::Left));
        assert!(st.relational_answer(Relation::Right));
        assert!(!st.relational_answer(Relation::Below));

        let shared = episode(Scene::new(6, 6, p(3, 3), p(3, 0), [], []).unwrap());
        assert!(!shared.relational_answer(Relation::Left));
        assert!(!shared.relational_answer(Relation::Right));
    }

    #[test]
    fn nearest_trap_cases() {
        assert_eq!(
            episode(Scene::new(6, 6, p(0, 0), p(5, 5), [], []).unwrap()).nearest_trap_answer(),
            TrapAnswer::NoTraps
        );
        let mut st = episode(Scene::new(6, 6, p(0, 0), p(5, 5), [], [p(0, 1)]).unwrap());
        st.apply_move(Direction::Up).unwrap();
        assert_eq!(st.nearest_trap_answer(), TrapAnswer::InOne);

        // Brute force over the six example traps: (3,5) is the only one at distance 1.
        let st = episode(example_scene());
        let traps = [p(1, 0), p(5, 1), p(3, 2), p(2, 4), p(1, 5), p(3, 5)];
        let best = traps.iter().map(|t| t.manhattan(p(4, 5))).min().unwrap();
        let winners: Vec<_> = traps
            .iter()
            .filter(|t| t.manhattan(p(4, 5)) == best)
            .collect();
        assert_eq!(winners, vec![&p(3, 5)]);
        assert_eq!(
            st.nearest_trap_answer(),
            TrapAnswer::Offset { dx: -1, dy: 0 }
        );
    }

    #[test]
    fn nearest_trap_tie_breaks_on_row_then_column() {
        // From (2,2): traps (1,2), (3,2), (2,1), (2,3) all at distance 1.
        let st = episode(
            Scene::new(
                5,
                5,
                p(2, 2),
                p(4, 4),
                [],
                [p(1, 2), p(3, 2), p(2, 3), p(2, 1)],
            )
            .unwrap(),
        );
        assert_eq!(
            st.nearest_trap_answer(),
            TrapAnswer::Offset { dx: 0, dy: -1 }
        );
    }

    #[test]
    fn oracle_examples() {
        let empty = Scene::new(6, 6, p(0, 0), p(0, 3), [], []).unwrap();
        assert_eq!(oracle_solve_length(&empty), Ok(3));

        let corridor = Scene::new(
            6,
            6,
            p(0, 0),
            p(0, 2),
            [p(1, 0), p(1, 1), p(1, 2)],
            [p(0, 1)],
        )
        .unwrap();
        assert_eq!(exhaustive_min_commands(&corridor), Some(4));
        assert_eq!(oracle_solve_length(&corridor), Ok(4));

        let walled = Scene::new(3, 3, p(0, 0), p(2, 2), [p(1, 0), p(1, 1), p(1, 2)], []).unwrap();
        assert_eq!(oracle_solve_length(&walled), Err(GridError::NoPath));
    }

    #[test]
    fn oracle_path_replays_to_completion() {
        let scene = example_scene();
        let (len, moves) = oracle_path(&scene).unwrap();
        let mut st = episode(scene);
        let mut commands = 0;
        for dir in moves {
            loop {
                commands += 1;
                match st.apply_move(dir).unwrap() {
                    MoveOutcome::StuckInTrap => continue,
                    MoveOutcome::Blocked => panic!("oracle path blocked"),
                    _ => break,
                }
            }
        }
        assert_eq!(st.status(), EpisodeStatus::Success);
        assert_eq!(commands, len);
    }

    #[test]
    fn distance_map_agrees_with_oracle() {
        let scene = example_scene();
        let map = DistanceMap::to_circle(&scene);
        for y in 0..6 {
            for x in 0..6 {
                let pos = p(x, y);
                if scene.is_obstacle(pos) || pos == scene.circle() {
                    continue;
                }
                let moved = Scene::new(
                    6,
                    6,
                    pos,
                    scene.circle(),
                    scene.obstacles().iter().copied(),
                    scene.traps().iter().copied().filter(|t| *t != pos),
                )
                .unwrap();
                // A square starting on a trap is not locked, so compare only trap-free starts.
                if scene.is_trap(pos) {
                    continue;
                }
                assert_eq!(map.get(pos), oracle_solve_length(&moved).ok(), "at {pos}");
            }
        }
        assert_eq!(map.get(scene.circle()), Some(0));
    }

    #[test]
    fn scene_rejects_overlap_and_bounds() {
        assert!(matches!(
            Scene::new(6, 6, p(0, 0), p(0, 0), [], []),
            Err(GridError::Overlap { .. })
        ));
        assert!(matches!(
            Scene::new(6, 6, p(0, 0), p(1, 1), [p(2, 2)], [p(2, 2)]),
            Err(GridError::Overlap { .. })
        ));
        assert!(matches!(
            Scene::new(6, 6, p(6, 0), p(1, 1), [], []),
            Err(GridError::OutOfBounds { .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn small_scene() -> impl Strategy<Value = Scene> {
            (0usize..=3, 0usize..=3, Just(()))
                .prop_flat_map(|(no, nt, _)| {
                    proptest::sample::subsequence((0..16).collect::<Vec<_>>(), no + nt + 2)
                        .prop_shuffle()
                        .prop_map(move |cells| (cells, no))
                })
                .prop_map(|(cells, no)| {
                    let pos = |i: usize| p(i % 4, i / 4);
                    Scene::new(
                        4,
                        4,
                        pos(cells[0]),
                        pos(cells[1]),
                        cells[2..2 + no].iter().map(|&i| pos(i)),
                        cells[2 + no..].iter().map(|&i| pos(i)),
                    )
                    .unwrap()
                })
        }

        proptest! {
            #[test]
            fn oracle_matches_exhaustive_search(scene in small_scene()) {
                prop_assert_eq!(oracle_solve_length(&scene).ok(), exhaustive_min_commands(&scene));
            }

            #[test]
            fn random_walks_respect_invariants(
                scene in small_scene(),
                moves in proptest::collection::vec(0usize..4, 0..40),
            ) {
                let before = scene.clone();
                let mut st = episode(scene);
                for m in moves {
                    if st.is_done() { break; }
                    let lock_before = st.trap_lock();
                    let outcome = st.apply_move(Direction::ALL[m]).unwrap();
                    prop_assert!(!st.scene().is_obstacle(st.square()));
                    prop_assert!(st.trap_lock() <= TRAP_LOCK_TURNS);
                    if st.trap_lock() > 0 {
                        prop_assert!(st.scene().is_trap(st.square()));
                    }
                    match outcome {
                        MoveOutcome::StuckInTrap => prop_assert_eq!(st.trap_lock() + 1, lock_before),
                        MoveOutcome::Completed => prop_assert_eq!(st.square(), st.scene().circle()),
                        _ => {}
                    }
                    for rel in [(Relation::Above, Relation::Below), (Relation::Left, Relation::Right)] {
                        prop_assert!(!(st.relational_answer(rel.0) && st.relational_answer(rel.1)));
                    }
                }
                prop_assert_eq!(st.scene().as_ref(), &before);
            }
        }
    }
}
