//! Plain-text episode logs.
//!
//! ```text
//! malthus-episode-log 1
//! game {"kind":"clamity",...}
//! island archipelago:3
//! seed 1234
//! roster 0:0 0:1 1:0
//! step 0 actions 6,0,3 rewards 0.04,0,0 rng 24
//! ...
//! ```
//!
//! `rng` is the number of 32-bit words the island generator had produced
//! after the step. The header is enough to rebuild the initial state, so a
//! log replays deterministically.

use std::fmt::Write as _;

use super::{reset, step_in_place, Action, GridState, IslandId};
use crate::error::{Error, Result};
use crate::games::Game;
use crate::population::IndividualId;

const MAGIC: &str = "malthus-episode-log 1";

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step_index: u32,
    pub actions: Vec<u8>,
    pub rewards: Vec<f64>,
    pub rng_draws: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub game: Game,
    pub island: IslandId,
    pub seed: u64,
    pub roster: Vec<IndividualId>,
    pub steps: Vec<StepRecord>,
}

impl EpisodeLog {
    pub fn new(game: Game, island: IslandId, seed: u64, roster: Vec<IndividualId>) -> Self {
        Self {
            game,
            island,
            seed,
            roster,
            steps: Vec::new(),
        }
    }

    pub fn record(&mut self, state_after: &GridState, actions: &[Action], rewards: &[f64]) {
        self.steps.push(StepRecord {
            step_index: state_after.step_index - 1,
            actions: actions.iter().map(|a| a.code()).collect(),
            rewards: rewards.to_vec(),
            rng_draws: state_after.rng_draws(),
        });
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let game = serde_json::to_string(&self.game).expect("game config serializes");
        let island = match self.island {
            IslandId::Archipelago(i) => format!("archipelago:{i}"),
            IslandId::Solitary { species, replica } => format!("solitary:{species}:{replica}"),
        };
        let roster: Vec<String> = self.roster.iter().map(|id| format!("{}:{}", id.species, id.label)).collect();
        let _ = writeln!(out, "{MAGIC}\ngame {game}\nisland {island}\nseed {}\nroster {}", self.seed, roster.join(" "));
        for s in &self.steps {
            let actions: Vec<String> = s.actions.iter().map(u8::to_string).collect();
            let rewards: Vec<String> = s.rewards.iter().map(f64::to_string).collect();
            let _ = writeln!(
                out,
                "step {} actions {} rewards {} rng {}",
                s.step_index,
                actions.join(","),
                rewards.join(","),
                s.rng_draws
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("episode log ends before `{what}` line")))
        };
        let (_, magic) = next("header")?;
        if magic.trim() != MAGIC {
            return Err(Error::Parse(format!("not an episode log: `{magic}`")));
        }
        let (n, line) = next("game")?;
        let game: Game = serde_json::from_str(field(line, "game", n)?).map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        let (n, line) = next("island")?;
        let island = parse_island(field(line, "island", n)?).ok_or_else(|| Error::Parse(format!("line {}: bad island", n + 1)))?;
        let (n, line) = next("seed")?;
        let seed = field(line, "seed", n)?
            .parse()
            .map_err(|e| Error::Parse(format!("line {}: {e}", n + 1)))?;
        let (n, line) = next("roster")?;
        let roster = field(line, "roster", n)?
            .split_whitespace()
            .map(|tok| {
                let (s, k) = tok.split_once(':')?;
                Some(IndividualId::new(s.parse().ok()?, k.parse().ok()?))
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Parse(format!("line {}: bad roster", n + 1)))?;

        let mut steps = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            steps.push(parse_step(line).ok_or_else(|| Error::Parse(format!("line {}: malformed step record", n + 1)))?);
        }
        Ok(Self {
            game,
            island,
            seed,
            roster,
            steps,
        })
    }
}

fn field<'a>(line: &'a str, key: &str, n: usize) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' ').or(Some(rest).filter(|r| r.is_empty())))
        .ok_or_else(|| Error::Parse(format!("line {}: expected `{key}`", n + 1)))
}

fn parse_island(s: &str) -> Option<IslandId> {
    let mut parts = s.split(':');
    match parts.next()? {
        "archipelago" => Some(IslandId::Archipelago(parts.next()?.parse().ok()?)),
        "solitary" => Some(IslandId::Solitary {
            species: parts.next()?.parse().ok()?,
            replica: parts.next()?.parse().ok()?,
        }),
        _ => None,
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',').map(|t| t.parse().ok()).collect()
}

fn parse_step(line: &str) -> Option<StepRecord> {
    let toks: Vec<&str> = line.split(' ').collect();
    match toks.as_slice() {
        ["step", t, "actions", a, "rewards", r, "rng", g] => Some(StepRecord {
            step_index: t.parse().ok()?,
            actions: parse_list(a)?,
            rewards: parse_list(r)?,
            rng_draws: g.parse().ok()?,
        }),
        _ => None,
    }
}

/// Re-simulates a log, checking rewards and generator positions step by
/// step. Returns every state from reset to the last logged step.
pub fn replay(log: &EpisodeLog) -> Result<Vec<GridState>> {
    let mut state = reset(&log.game, log.island, &log.roster, log.seed)?;
    let mut frames = vec![state.clone()];
    for rec in &log.steps {
        if rec.step_index != state.step_index {
            return Err(Error::integrity(format!(
                "log step {} does not follow state step {}",
                rec.step_index, state.step_index
            )));
        }
        let actions = rec
            .actions
            .iter()
            .map(|&c| Action::from_code(c).ok_or_else(|| Error::Parse(format!("unknown action code {c}"))))
            .collect::<Result<Vec<_>>>()?;
        let (rewards, _) = step_in_place(&log.game, &mut state, &actions)?;
        if rewards != rec.rewards {
            return Err(Error::integrity(format!(
                "replay diverged at step {}: rewards {:?} vs logged {:?}",
                rec.step_index, rewards, rec.rewards
            )));
        }
        if state.rng_draws() != rec.rng_draws {
            return Err(Error::integrity(format!(
                "replay diverged at step {}: rng position {} vs logged {}",
                rec.step_index,
                state.rng_draws(),
                rec.rng_draws
            )));
        }
        frames.push(state.clone());
    }
    Ok(frames)
}
