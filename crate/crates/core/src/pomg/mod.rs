//! Partially observable gridworld engine shared by every game.
//!
//! A [`GridState`] is a value: [`step`] consumes a joint action and produces
//! the successor, rewards and a terminal flag. Movement and rotation are
//! resolved here; everything game-specific (settling, shells, shrubs) is
//! delegated to [`Game`]. All randomness after reset is drawn from the
//! state's own generator, so a logged seed plus the action stream replays an
//! episode exactly.

mod log;
mod render;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::allelopathy::{DigestivePayload, ShrubType};
use crate::games::clamity::ClamPayload;
use crate::games::Game;
use crate::population::IndividualId;
use crate::rng::SimRng;

pub use log::{replay, EpisodeLog, StepRecord};
pub use render::{observe, observe_all, render_full, species_color, Image, Observation, Rgb, VOID_COLOR, WINDOW_RADIUS, WINDOW_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: usize,
    pub col: usize,
}

impl Pos {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    /// The cell at `(row + dr, col + dc)` if it lies on a `height x width` map.
    pub fn offset(self, dr: isize, dc: isize, height: usize, width: usize) -> Option<Pos> {
        let r = self.row as isize + dr;
        let c = self.col as isize + dc;
        (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width).then(|| Pos::new(r as usize, c as usize))
    }

    pub fn chebyshev(self, other: Pos) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }

    pub fn manhattan(self, other: Pos) -> usize {
        self.row.abs_diff(other.row) + self.col.abs_diff(other.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Orientation::North, Orientation::East, Orientation::South, Orientation::West];

    pub fn rotate_left(self) -> Self {
        match self {
            Orientation::North => Orientation::West,
            Orientation::West => Orientation::South,
            Orientation::South => Orientation::East,
            Orientation::East => Orientation::North,
        }
    }

    pub fn rotate_right(self) -> Self {
        match self {
            Orientation::North => Orientation::East,
            Orientation::East => Orientation::South,
            Orientation::South => Orientation::West,
            Orientation::West => Orientation::North,
        }
    }

    /// World-frame (row, col) unit vector the agent is facing.
    pub fn forward(self) -> (isize, isize) {
        match self {
            Orientation::North => (-1, 0),
            Orientation::East => (0, 1),
            Orientation::South => (1, 0),
            Orientation::West => (0, -1),
        }
    }

    /// World-frame unit vector to the agent's right.
    pub fn right(self) -> (isize, isize) {
        let (r, c) = self.forward();
        (c, -r)
    }
}

/// Joint action vocabulary. Every game has the first six; Clamity appends
/// [`Action::Settle`]. Moves are absolute (world frame).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    RotateLeft,
    RotateRight,
    Settle,
}

impl Action {
    pub const UNIVERSAL: usize = 6;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Action> {
        Some(match code {
            0 => Action::MoveUp,
            1 => Action::MoveDown,
            2 => Action::MoveLeft,
            3 => Action::MoveRight,
            4 => Action::RotateLeft,
            5 => Action::RotateRight,
            6 => Action::Settle,
            _ => return None,
        })
    }

    pub fn displacement(self) -> Option<(isize, isize)> {
        match self {
            Action::MoveUp => Some((-1, 0)),
            Action::MoveDown => Some((1, 0)),
            Action::MoveLeft => Some((0, -1)),
            Action::MoveRight => Some((0, 1)),
            _ => None,
        }
    }
}

/// Terrain and object code of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Terrain {
    Empty,
    Nutrient,
    Seed(ShrubType),
    Shrub(ShrubType),
}

/// Game-specific per-agent record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    None,
    Clam(ClamPayload),
    Forager(DigestivePayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentBody {
    pub slot: usize,
    pub id: IndividualId,
    pub position: Pos,
    pub orientation: Orientation,
    pub color: Rgb,
    pub payload: Payload,
}

impl AgentBody {
    pub fn new(slot: usize, id: IndividualId, position: Pos, orientation: Orientation, payload: Payload) -> Self {
        Self {
            slot,
            id,
            position,
            orientation,
            color: species_color(id.species),
            payload,
        }
    }
}

/// Which environment instance an episode runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IslandId {
    Archipelago(usize),
    Solitary { species: usize, replica: usize },
}

impl IslandId {
    pub(crate) fn seed_path(self) -> [u64; 3] {
        match self {
            IslandId::Archipelago(i) => [0, i as u64, 0],
            IslandId::Solitary { species, replica } => [1, species as u64, replica as u64],
        }
    }
}

impl std::fmt::Display for IslandId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IslandId::Archipelago(i) => write!(f, "archipelago:{i}"),
            IslandId::Solitary { species, replica } => write!(f, "solitary:{species}:{replica}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Terrain>,
    pub agents: Vec<AgentBody>,
    pub step_index: u32,
    pub episode_length: u32,
    pub island: IslandId,
    /// Reward each agent received on the previous step.
    pub last_rewards: Vec<f64>,
    #[serde(skip, default = "detached_rng")]
    pub rng: SimRng,
}

fn detached_rng() -> SimRng {
    SimRng::seed_from_u64(0)
}

impl GridState {
    /// An empty map with no agents; games fill terrain and bodies in.
    pub fn blank(width: usize, height: usize, episode_length: u32, island: IslandId, seed: u64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::config("map", format!("map dimensions must be positive, got {width}x{height}")));
        }
        if episode_length == 0 {
            return Err(Error::config("episode_length", "episode length must be positive"));
        }
        Ok(Self {
            width,
            height,
            cells: vec![Terrain::Empty; width * height],
            agents: Vec::new(),
            step_index: 0,
            episode_length,
            island,
            last_rewards: Vec::new(),
            rng: SimRng::seed_from_u64(seed),
        })
    }

    pub fn index(&self, pos: Pos) -> usize {
        pos.row * self.width + pos.col
    }

    pub fn terrain(&self, pos: Pos) -> Terrain {
        self.cells[self.index(pos)]
    }

    pub fn set_terrain(&mut self, pos: Pos, terrain: Terrain) {
        let idx = self.index(pos);
        self.cells[idx] = terrain;
    }

    pub fn positions(&self) -> impl Iterator<Item = Pos> + '_ {
        (0..self.height).flat_map(move |r| (0..self.width).map(move |c| Pos::new(r, c)))
    }

    pub fn is_done(&self) -> bool {
        self.step_index >= self.episode_length
    }

    /// Number of 32-bit words drawn from the state's generator so far.
    pub fn rng_draws(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn agent_at(&self, pos: Pos) -> Option<&AgentBody> {
        self.agents.iter().find(|a| a.position == pos)
    }

    /// Adds bodies for `roster` at `spawns`, in roster order.
    pub fn place_agents(&mut self, roster: &[IndividualId], spawns: &[Pos], payload: impl Fn() -> Payload) -> Result<()> {
        if spawns.len() < roster.len() {
            return Err(Error::config(
                "agents",
                format!("{} agents but only {} spawn cells", roster.len(), spawns.len()),
            ));
        }
        for (slot, (&id, &pos)) in roster.iter().zip(spawns).enumerate() {
            let orientation = *Orientation::ALL.choose(&mut self.rng).expect("four orientations");
            self.agents.push(AgentBody::new(slot, id, pos, orientation, payload()));
        }
        self.last_rewards = vec![0.0; roster.len()];
        Ok(())
    }
}

/// Result of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: GridState,
    pub rewards: Vec<f64>,
    pub done: bool,
}

/// Builds the initial state of an episode for `roster` on `island`.
pub fn reset(game: &Game, island: IslandId, roster: &[IndividualId], seed: u64) -> Result<GridState> {
    game.reset(island, roster, seed)
}

/// Pure transition: returns the successor of `state` under `joint_action`.
pub fn step(game: &Game, state: &GridState, joint_action: &[Action]) -> Result<StepOutcome> {
    let mut next = state.clone();
    let (rewards, done) = step_in_place(game, &mut next, joint_action)?;
    Ok(StepOutcome {
        state: next,
        rewards,
        done,
    })
}

/// In-place variant of [`step`] used by the episode runner.
pub fn step_in_place(game: &Game, state: &mut GridState, joint_action: &[Action]) -> Result<(Vec<f64>, bool)> {
    if state.is_done() {
        return Err(Error::State(format!(
            "episode already finished at step {}",
            state.step_index
        )));
    }
    if joint_action.len() != state.agents.len() {
        return Err(Error::arg(format!(
            "{} actions for {} agents",
            joint_action.len(),
            state.agents.len()
        )));
    }
    let num_actions = game.num_actions();
    if let Some(bad) = joint_action.iter().find(|a| a.code() as usize >= num_actions) {
        return Err(Error::arg(format!("action {bad:?} not available in this game")));
    }

    for (agent, action) in state.agents.iter_mut().zip(joint_action) {
        if !game.is_mobile(agent) {
            continue;
        }
        match action {
            Action::RotateLeft => agent.orientation = agent.orientation.rotate_left(),
            Action::RotateRight => agent.orientation = agent.orientation.rotate_right(),
            _ => {}
        }
    }
    resolve_moves(game, state, joint_action);

    let rewards = game.resolve_phase(state, joint_action);
    state.step_index += 1;
    state.last_rewards.clone_from(&rewards);
    Ok((rewards, state.is_done()))
}

/// Moves agents in a random priority order; a move succeeds when the target
/// is on the map and not occupied at the moment the agent's turn comes.
fn resolve_moves(game: &Game, state: &mut GridState, joint_action: &[Action]) {
    let mut order: Vec<usize> = (0..state.agents.len()).collect();
    order.shuffle(&mut state.rng);
    let mut occupied = vec![false; state.width * state.height];
    for agent in &state.agents {
        occupied[agent.position.row * state.width + agent.position.col] = true;
    }
    for slot in order {
        let Some((dr, dc)) = joint_action[slot].displacement() else {
            continue;
        };
        let agent = &state.agents[slot];
        if !game.is_mobile(agent) {
            continue;
        }
        let Some(target) = agent.position.offset(dr, dc, state.height, state.width) else {
            continue;
        };
        let to = target.row * state.width + target.col;
        if occupied[to] {
            continue;
        }
        let from = agent.position.row * state.width + agent.position.col;
        occupied[from] = false;
        occupied[to] = true;
        state.agents[slot].position = target;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::bandit::BanditConfig;
    use crate::games::clamity::ClamityConfig;

    fn bandit(len: u32) -> Game {
        Game::Bandit(BanditConfig {
            payoffs: vec![1.0],
            episode_length: len,
            width: 9,
            height: 9,
        })
    }

    fn one_agent_state(game: &Game, pos: Pos) -> GridState {
        let mut state = reset(game, IslandId::Archipelago(0), &[IndividualId::new(0, 0)], 1).unwrap();
        state.agents[0].position = pos;
        state
    }

    #[test]
    fn rotations_cycle() {
        for o in Orientation::ALL {
            assert_eq!(o.rotate_left().rotate_right(), o);
            assert_eq!(o.rotate_right().rotate_right().rotate_right().rotate_right(), o);
        }
        assert_eq!(Orientation::North.right(), (0, 1));
        assert_eq!(Orientation::East.right(), (1, 0));
    }

    #[test]
    fn interior_move_right() {
        let game = bandit(10);
        let state = one_agent_state(&game, Pos::new(4, 4));
        let out = step(&game, &state, &[Action::MoveRight]).unwrap();
        assert_eq!(out.state.agents[0].position, Pos::new(4, 5));
        assert_eq!(state.agents[0].position, Pos::new(4, 4));
    }

    #[test]
    fn walls_block_silently() {
        let game = bandit(10);
        let state = one_agent_state(&game, Pos::new(0, 8));
        let out = step(&game, &state, &[Action::MoveUp]).unwrap();
        assert_eq!(out.state.agents[0].position, Pos::new(0, 8));
        let out = step(&game, &out.state, &[Action::MoveRight]).unwrap();
        assert_eq!(out.state.agents[0].position, Pos::new(0, 8));
    }

    #[test]
    fn simultaneous_moves_never_stack() {
        let game = bandit(50);
        let roster: Vec<_> = (0..2).map(|k| IndividualId::new(0, k)).collect();
        for seed in 0..50 {
            let mut state = reset(&game, IslandId::Archipelago(0), &roster, seed).unwrap();
            state.agents[0].position = Pos::new(4, 3);
            state.agents[1].position = Pos::new(4, 5);
            let out = step(&game, &state, &[Action::MoveRight, Action::MoveLeft]).unwrap();
            let a = out.state.agents[0].position;
            let b = out.state.agents[1].position;
            assert_ne!(a, b);
            assert!(a == Pos::new(4, 4) || b == Pos::new(4, 4));
        }
    }

    #[test]
    fn episode_ends_exactly_at_length() {
        let game = Game::Clamity(ClamityConfig::default());
        let mut state = reset(&game, IslandId::Archipelago(0), &[IndividualId::new(0, 0)], 3).unwrap();
        assert_eq!((state.height, state.width), (36, 60));
        for t in 0..250 {
            let (_, done) = step_in_place(&game, &mut state, &[Action::RotateLeft]).unwrap();
            assert_eq!(done, t == 249);
            assert_eq!(state.step_index, t + 1);
        }
        assert!(matches!(
            step_in_place(&game, &mut state, &[Action::RotateLeft]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn wrong_action_count_is_argument_error() {
        let game = bandit(5);
        let mut state = one_agent_state(&game, Pos::new(1, 1));
        assert!(matches!(step_in_place(&game, &mut state, &[]), Err(Error::Argument(_))));
        assert!(matches!(
            step_in_place(&game, &mut state, &[Action::Settle]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn reset_is_deterministic() {
        let game = Game::Clamity(ClamityConfig::default());
        let roster: Vec<_> = (0..6).map(|k| IndividualId::new(k % 2, k / 2)).collect();
        let a = reset(&game, IslandId::Archipelago(2), &roster, 99).unwrap();
        let b = reset(&game, IslandId::Archipelago(2), &roster, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rng_draws(), b.rng_draws());
    }

    #[test]
    fn too_many_agents_is_config_error() {
        let game = bandit(1);
        let roster: Vec<_> = (0..82).map(|k| IndividualId::new(0, k)).collect();
        assert!(matches!(
            reset(&game, IslandId::Archipelago(0), &roster, 0),
            Err(Error::Config { .. })
        ));
    }
}
