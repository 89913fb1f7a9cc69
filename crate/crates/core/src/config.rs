//! Experiment configuration: JSON files, built-in presets, validation.
//!
//! A config file may name a `"preset"`; its remaining keys are merged over
//! the preset (objects merge key by key, everything else replaces).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::games::allelopathy::AllelopathyConfig;
use crate::games::bandit::BanditConfig;
use crate::games::clamity::ClamityConfig;
use crate::games::Game;
use crate::learner::scripted::ScriptKind;
use crate::learner::{OptimizerConfig, PolicySpec, Profile};
use crate::population::PopulationConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Malthusian,
    FixedPopulation,
    SingleAgent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheduler {
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub mode: Mode,
    pub num_islands: usize,
    /// Agents per island in fixed-population mode; checked against K / N_I.
    pub fixed_population_size: Option<usize>,
    /// Run solitary islands next to the archipelago.
    pub solitary_islands: bool,
    /// Solitary islands per species; defaults to 32 in single-agent mode
    /// and 1 otherwise.
    pub solitary_replicas: Option<usize>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Malthusian,
            num_islands: 4,
            fixed_population_size: None,
            solitary_islands: false,
            solitary_replicas: None,
        }
    }
}

impl ProtocolConfig {
    /// Solitary islands per species actually run (0 when disabled).
    pub fn solitary_per_species(&self) -> usize {
        match self.mode {
            Mode::SingleAgent => self.solitary_replicas.unwrap_or(32),
            _ if self.solitary_islands => self.solitary_replicas.unwrap_or(1),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub profile: Profile,
    pub optimizer: OptimizerConfig,
    /// Ring-buffer capacity per species, in segments.
    pub queue_capacity: usize,
    /// Replace every species' network with a scripted policy (no learning).
    pub scripted: Option<ScriptKind>,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            profile: Profile::Desk,
            optimizer: OptimizerConfig::default(),
            queue_capacity: 1024,
            scripted: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub game: Game,
    pub protocol: ProtocolConfig,
    /// L.
    pub num_species: usize,
    /// M; give this or `total_individuals`.
    pub individuals_per_species: Option<usize>,
    /// K = M · L.
    pub total_individuals: Option<usize>,
    pub alpha: f64,
    pub eta: f64,
    pub learner: LearnerConfig,
    /// E.
    pub ecological_steps: u64,
    pub seed: u64,
    pub scheduler: Scheduler,
    /// Smoothing window used by plots.
    pub smoothing_window: usize,
    /// Checkpoint every this many steps; 0 checkpoints only at the end.
    pub checkpoint_interval: u64,
    pub episode_logs: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            game: Game::Bandit(BanditConfig::default()),
            protocol: ProtocolConfig::default(),
            num_species: 1,
            individuals_per_species: None,
            total_individuals: None,
            alpha: 0.01,
            eta: 0.1,
            learner: LearnerConfig::default(),
            ecological_steps: 100,
            seed: 0,
            scheduler: Scheduler::Sequential,
            smoothing_window: 25,
            checkpoint_interval: 0,
            episode_logs: false,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// M, derived from whichever of M and K is given.
    pub fn individuals_per_species(&self) -> Result<usize> {
        match (self.individuals_per_species, self.total_individuals) {
            (Some(m), Some(k)) if m * self.num_species != k => Err(Error::config(
                "total_individuals",
                format!("K = {k} is not M · L = {m} · {}", self.num_species),
            )),
            (Some(m), _) => Ok(m),
            (None, Some(k)) => {
                if self.num_species == 0 || k % self.num_species != 0 {
                    Err(Error::config(
                        "total_individuals",
                        format!("K = {k} is not divisible by L = {}", self.num_species),
                    ))
                } else {
                    Ok(k / self.num_species)
                }
            }
            (None, None) if self.protocol.mode == Mode::SingleAgent => Ok(0),
            (None, None) => Err(Error::config("individuals_per_species", "set individuals_per_species or total_individuals")),
        }
    }

    pub fn population(&self) -> Result<PopulationConfig> {
        let m = self.individuals_per_species()?;
        if self.protocol.mode == Mode::SingleAgent {
            // Unused, but keeps the data model uniform.
            return PopulationConfig::new(self.alpha, self.eta, m.max(1), self.num_species);
        }
        PopulationConfig::new(self.alpha, self.eta, m, self.num_species)
            .map_err(|e| Error::config("individuals_per_species", e.to_string()))
    }

    pub fn policy_spec(&self) -> PolicySpec {
        PolicySpec::new(self.learner.profile, self.game.num_actions())
    }

    pub fn validate(&self) -> Result<()> {
        self.game.validate()?;
        self.learner.optimizer.validate()?;
        self.policy_spec().validate()?;
        if self.num_species == 0 {
            return Err(Error::config("num_species", "need at least one species"));
        }
        if self.learner.queue_capacity < self.learner.optimizer.batch_size {
            return Err(Error::config("learner.queue_capacity", "must hold at least one batch"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::config("smoothing_window", "must be at least 1"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config("alpha", "must be finite and non-negative"));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(Error::config("eta", "must be finite and non-negative"));
        }
        if let Some(kind) = self.learner.scripted {
            crate::learner::scripted::scripted_policy(kind, &self.game, 0)?;
        }
        let m = self.individuals_per_species()?;
        let p = &self.protocol;
        match p.mode {
            Mode::SingleAgent => {
                if p.num_islands != 0 {
                    return Err(Error::config("protocol.num_islands", "single-agent mode runs no archipelago islands"));
                }
                if p.solitary_per_species() == 0 {
                    return Err(Error::config("protocol.solitary_replicas", "single-agent mode needs solitary replicas"));
                }
            }
            Mode::Malthusian | Mode::FixedPopulation => {
                if p.num_islands == 0 {
                    return Err(Error::config("protocol.num_islands", "need at least one island"));
                }
                if m == 0 {
                    return Err(Error::config("individuals_per_species", "must be positive"));
                }
                self.population()?;
            }
        }
        if p.mode == Mode::FixedPopulation {
            if m % p.num_islands != 0 {
                return Err(Error::config(
                    "protocol.num_islands",
                    format!("M = {m} individuals per species do not split evenly over {} islands", p.num_islands),
                ));
            }
            let per_island = m / p.num_islands * self.num_species;
            if let Some(size) = p.fixed_population_size {
                if size != per_island {
                    return Err(Error::config(
                        "protocol.fixed_population_size",
                        format!("{size} per island, but K / N_I = {per_island}"),
                    ));
                }
            }
        } else if p.fixed_population_size.is_some() {
            return Err(Error::config("protocol.fixed_population_size", "only meaningful in fixed-population mode"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // Switching game kinds replaces the whole game object.
                    Some(slot) if k != "game" || same_kind(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn same_kind(a: &Value, b: &Value) -> bool {
    match (a.get("kind"), b.get("kind")) {
        (_, None) => true,
        (Some(x), Some(y)) => x == y,
        _ => false,
    }
}

/// Parses a config document, resolving `"preset"` and reporting the key
/// path of any error.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", format!("{e}")))?;
    if let Some(name) = doc.as_object_mut().and_then(|o| o.remove("preset")) {
        let name = name
            .as_str()
            .ok_or_else(|| Error::config("preset", "must be a string"))?
            .to_string();
        let base = preset(&name).ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?;
        let mut merged = serde_json::to_value(&base).expect("config serializes");
        merge(&mut merged, doc);
        doc = merged;
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// `(name, long-running, one-line description)` of every built-in preset.
pub const PRESETS: &[(&str, bool, &str)] = &[
    ("bandit-desk", false, "4 bandit islands paying [1, 0, 0, 0]; μ should concentrate on island 0"),
    ("clamity-desk", false, "Clamity on a 12x24 map, 8 islands, 1 species of 32, solitary overlay"),
    ("clamity-single-agent-desk", false, "Clamity on a 12x24 map, 32 solitary replicas"),
    ("allelopathy-desk", false, "Unbiased Allelopathy on a 15x20 map, 4 islands, 2 species of 8"),
    ("clamity-malthusian-paper", true, "Clamity, 60 islands, 1 species of 960, α 1e-4, η 1.5"),
    ("clamity-fixed32-paper", true, "Clamity, one island of 32 fixed individuals, solitary overlay"),
    ("clamity-single-agent-paper", true, "Clamity, 32 solitary replicas, no archipelago"),
    ("allelopathy-unbiased-paper", true, "Unbiased Allelopathy, 60 islands, 4 species of 240, α 1e-7, η 0.3"),
    ("allelopathy-unbiased-homogeneous-paper", true, "Unbiased Allelopathy, 60 islands, 1 species of 960"),
    ("allelopathy-unbiased-fixed32-paper", true, "Unbiased Allelopathy, 30 islands of 32 fixed individuals"),
    ("allelopathy-biased-paper", true, "Biased Allelopathy, 60 islands, 4 species of 240, α 1e-4, η 0.01"),
    ("allelopathy-biased-homogeneous-paper", true, "Biased Allelopathy, 60 islands, 1 species of 960"),
    ("allelopathy-biased-fixed32-paper", true, "Biased Allelopathy, 30 islands of 32 fixed individuals"),
];

fn desk_clamity() -> ClamityConfig {
    ClamityConfig {
        width: 24,
        height: 12,
        nutrient_min_distance: 5,
        nutrient_max_distance: 8,
        ..ClamityConfig::default()
    }
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let base = ExperimentConfig {
        name: name.to_string(),
        ..ExperimentConfig::default()
    };
    let paper_learner = LearnerConfig {
        profile: Profile::Paper,
        ..LearnerConfig::default()
    };
    let clamity_paper = ExperimentConfig {
        game: Game::Clamity(ClamityConfig::default()),
        protocol: ProtocolConfig {
            mode: Mode::Malthusian,
            num_islands: 60,
            solitary_islands: true,
            ..ProtocolConfig::default()
        },
        num_species: 1,
        individuals_per_species: Some(960),
        alpha: 1e-4,
        eta: 1.5,
        learner: paper_learner.clone(),
        ecological_steps: 100_000,
        smoothing_window: 100,
        checkpoint_interval: 1000,
        ..base.clone()
    };
    let allelopathy_paper = |biased: bool, species: usize, fixed: bool| {
        let game = if biased { AllelopathyConfig::biased() } else { AllelopathyConfig::default() };
        ExperimentConfig {
            game: Game::Allelopathy(game),
            protocol: ProtocolConfig {
                mode: if fixed { Mode::FixedPopulation } else { Mode::Malthusian },
                num_islands: if fixed { 30 } else { 60 },
                fixed_population_size: fixed.then_some(32),
                ..ProtocolConfig::default()
            },
            num_species: species,
            total_individuals: Some(960),
            alpha: if biased { 1e-4 } else { 1e-7 },
            eta: if biased { 0.01 } else { 0.3 },
            learner: paper_learner.clone(),
            ecological_steps: 20_000,
            smoothing_window: 25,
            checkpoint_interval: 500,
            ..base.clone()
        }
    };
    Some(match name {
        "bandit-desk" => ExperimentConfig {
            game: Game::Bandit(BanditConfig {
                payoffs: vec![1.0, 0.0, 0.0, 0.0],
                ..BanditConfig::default()
            }),
            protocol: ProtocolConfig {
                num_islands: 4,
                ..ProtocolConfig::default()
            },
            num_species: 1,
            individuals_per_species: Some(16),
            alpha: 0.1,
            eta: 0.05,
            learner: LearnerConfig {
                profile: Profile::Tiny,
                ..LearnerConfig::default()
            },
            ecological_steps: 500,
            smoothing_window: 1,
            ..base
        },
        "clamity-desk" => ExperimentConfig {
            game: Game::Clamity(desk_clamity()),
            protocol: ProtocolConfig {
                num_islands: 8,
                solitary_islands: true,
                ..ProtocolConfig::default()
            },
            num_species: 1,
            individuals_per_species: Some(32),
            alpha: 1e-4,
            eta: 1.5,
            ecological_steps: 20_000,
            smoothing_window: 100,
            checkpoint_interval: 1000,
            ..base
        },
        "clamity-single-agent-desk" => ExperimentConfig {
            game: Game::Clamity(desk_clamity()),
            protocol: ProtocolConfig {
                mode: Mode::SingleAgent,
                num_islands: 0,
                ..ProtocolConfig::default()
            },
            num_species: 1,
            ecological_steps: 20_000,
            smoothing_window: 100,
            checkpoint_interval: 1000,
            ..base
        },
        "allelopathy-desk" => ExperimentConfig {
            game: Game::Allelopathy(AllelopathyConfig {
                width: 20,
                height: 15,
                episode_length: 200,
                ..AllelopathyConfig::default()
            }),
            protocol: ProtocolConfig {
                num_islands: 4,
                ..ProtocolConfig::default()
            },
            num_species: 2,
            individuals_per_species: Some(8),
            alpha: 1e-3,
            eta: 0.3,
            ecological_steps: 2000,
            smoothing_window: 25,
            checkpoint_interval: 500,
            ..base
        },
        "clamity-malthusian-paper" => ExperimentConfig {
            name: name.into(),
            ..clamity_paper
        },
        "clamity-fixed32-paper" => ExperimentConfig {
            name: name.into(),
            protocol: ProtocolConfig {
                mode: Mode::FixedPopulation,
                num_islands: 1,
                fixed_population_size: Some(32),
                solitary_islands: true,
                solitary_replicas: None,
            },
            individuals_per_species: Some(32),
            ..clamity_paper
        },
        "clamity-single-agent-paper" => ExperimentConfig {
            name: name.into(),
            protocol: ProtocolConfig {
                mode: Mode::SingleAgent,
                num_islands: 0,
                fixed_population_size: None,
                solitary_islands: true,
                solitary_replicas: Some(32),
            },
            individuals_per_species: None,
            ..clamity_paper
        },
        "allelopathy-unbiased-paper" => allelopathy_paper(false, 4, false),
        "allelopathy-unbiased-homogeneous-paper" => allelopathy_paper(false, 1, false),
        "allelopathy-unbiased-fixed32-paper" => allelopathy_paper(false, 4, true),
        "allelopathy-biased-paper" => allelopathy_paper(true, 4, false),
        "allelopathy-biased-homogeneous-paper" => allelopathy_paper(true, 1, false),
        "allelopathy-biased-fixed32-paper" => allelopathy_paper(true, 4, true),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_preset_resolves_and_validates() {
        for (name, _, _) in PRESETS {
            let cfg = preset(name).unwrap_or_else(|| panic!("{name}"));
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&cfg.name, name);
            let back = parse_config(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg);
        }
        assert!(preset("nope").is_none());
    }

    /// Constants stated for the published experiments.
    #[test]
    fn full_scale_presets_use_full_scale_constants() {
        // (preset, N_I, L, M, K, alpha, eta, T, window)
        let table: &[(&str, usize, usize, usize, usize, f64, f64, u32, usize)] = &[
            ("clamity-malthusian-paper", 60, 1, 960, 960, 1e-4, 1.5, 250, 100),
            ("allelopathy-unbiased-paper", 60, 4, 240, 960, 1e-7, 0.3, 1000, 25),
            ("allelopathy-unbiased-homogeneous-paper", 60, 1, 960, 960, 1e-7, 0.3, 1000, 25),
            ("allelopathy-unbiased-fixed32-paper", 30, 4, 240, 960, 1e-7, 0.3, 1000, 25),
            ("allelopathy-biased-paper", 60, 4, 240, 960, 1e-4, 0.01, 1000, 25),
            ("allelopathy-biased-homogeneous-paper", 60, 1, 960, 960, 1e-4, 0.01, 1000, 25),
            ("allelopathy-biased-fixed32-paper", 30, 4, 240, 960, 1e-4, 0.01, 1000, 25),
        ];
        for &(name, ni, l, m, k, alpha, eta, t, window) in table {
            let c = preset(name).unwrap();
            assert_eq!(c.protocol.num_islands, ni, "{name}");
            assert_eq!(c.num_species, l, "{name}");
            assert_eq!(c.individuals_per_species().unwrap(), m, "{name}");
            assert_eq!(c.individuals_per_species().unwrap() * c.num_species, k, "{name}");
            assert_eq!(c.alpha, alpha, "{name}");
            assert_eq!(c.eta, eta, "{name}");
            assert_eq!(c.game.episode_length(), t, "{name}");
            assert_eq!(c.smoothing_window, window, "{name}");
            assert_eq!(c.learner.profile, Profile::Paper, "{name}");
        }
        let fixed = preset("allelopathy-biased-fixed32-paper").unwrap();
        assert_eq!(fixed.protocol.fixed_population_size, Some(32));
        let Game::Allelopathy(g) = fixed.game else { panic!() };
        assert_eq!(g.caps(), (8, 250));
        let Game::Clamity(g) = preset("clamity-malthusian-paper").unwrap().game else { panic!() };
        assert_eq!((g.height, g.width), (36, 60));
        let single = preset("clamity-single-agent-paper").unwrap();
        assert_eq!((single.protocol.num_islands, single.protocol.solitary_per_species()), (0, 32));
        let opt = OptimizerConfig::default();
        assert_eq!((opt.rmsprop_epsilon, opt.batch_size, opt.unroll_length), (1e-4, 32, 20));
    }

    #[test]
    fn overrides_merge_over_presets() {
        let cfg = parse_config(r#"{"preset":"clamity-desk","alpha":0.5,"game":{"width":30},"protocol":{"num_islands":2}}"#).unwrap();
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.protocol.num_islands, 2);
        assert!(cfg.protocol.solitary_islands);
        let Game::Clamity(g) = cfg.game else { panic!() };
        assert_eq!((g.width, g.height), (30, 12));
        let cfg = parse_config(r#"{"preset":"clamity-desk","game":{"kind":"bandit"}}"#).unwrap();
        assert_eq!(cfg.game, Game::Bandit(BanditConfig::default()));
    }

    #[test]
    fn errors_name_the_key() {
        let err = parse_config(r#"{"learner":{"optimizer":{"learning_rat":0.1}},"individuals_per_species":4}"#).unwrap_err();
        let Error::Config { path, .. } = err else { panic!("{err}") };
        assert_eq!(path, "learner.optimizer.learning_rat");
        let err = parse_config(r#"{"protocol":{"num_islands":"four"},"individuals_per_species":4}"#).unwrap_err();
        let Error::Config { path, .. } = err else { panic!("{err}") };
        assert_eq!(path, "protocol.num_islands");
        assert!(parse_config("{not json").is_err());
        assert!(parse_config(r#"{"preset":"missing"}"#).is_err());
    }

    #[test]
    fn population_constraints() {
        let bad = parse_config(r#"{"num_species":4,"total_individuals":959}"#).unwrap_err();
        assert!(bad.to_string().contains("not divisible"), "{bad}");
        assert!(parse_config(r#"{"num_species":4,"total_individuals":960}"#).is_ok());
        assert!(parse_config(r#"{"num_species":4,"total_individuals":960,"individuals_per_species":200}"#).is_err());
        assert!(parse_config(r#"{"individuals_per_species":4,"protocol":{"mode":"single-agent"}}"#).is_err());
        assert!(parse_config(r#"{"protocol":{"mode":"single-agent","num_islands":0}}"#).is_ok());
        assert!(parse_config(
            r#"{"num_species":4,"total_individuals":960,"protocol":{"mode":"fixed-population","num_islands":30,"fixed_population_size":16}}"#
        )
        .is_err());
        assert!(parse_config(r#"{"individuals_per_species":4,"learner":{"scripted":{"kind":"seek-nutrient"}}}"#).is_err());
    }
}
