//! Latent variable evolution: CMA-ES over a generator's latent input,
//! the level objectives it optimises, and the scripted agent used by the
//! play-based objectives.

mod agent;
pub mod cmaes;
mod search;

pub use agent::{heuristic_play, AgentOutcome, BLAST_R};
pub use cmaes::CmaesState;
pub use search::{evaluate_dist, run_lve, HistoryRow, LevelGenerator, LveConfig, LveResult, SearchMode, Solution};

use std::fmt;
use std::str::FromStr;

use crate::catalog::{Category, Level, ObjectCatalog};
use crate::error::{Error, Result};

pub const PENALTY_W: f64 = 1e-2;

/// Number of blocks (regular blocks and TNT; pigs and platforms excluded).
pub fn count_blocks(catalog: &ObjectCatalog, level: &Level) -> usize {
    level.count(catalog, Category::Block) + level.count(catalog, Category::Tnt)
}

/// `clamp(1 + floor(pigs / 2) + floor(blocks / 30), 1, 10)`.
pub fn compute_n_birds(catalog: &ObjectCatalog, level: &Level) -> u32 {
    n_birds_for(level.count(catalog, Category::Pig), count_blocks(catalog, level))
}

pub fn n_birds_for(pigs: usize, blocks: usize) -> u32 {
    (1 + pigs / 2 + blocks / 30).clamp(1, 10) as u32
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config("search space needs lower < upper in every coordinate".into()));
        }
        Ok(SearchSpace { lower, upper })
    }

    /// `[-3, 3]^dim_z`.
    pub fn latent(dim_z: usize) -> Self {
        SearchSpace {
            lower: vec![-3.0; dim_z],
            upper: vec![3.0; dim_z],
        }
    }

    /// `[0, 2] x [-3, 3]^dim_z` over (spread, latent mean).
    pub fn distribution(dim_z: usize) -> Self {
        let mut s = Self::latent(dim_z + 1);
        s.lower[0] = 0.0;
        s.upper[0] = 2.0;
        s
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (l + u) / 2.0).collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

/// Clamps `x` into the box; the penalty is `PENALTY_W * |x - clamp(x)|^2`.
pub fn apply_bounds(space: &SearchSpace, x: &[f64]) -> Result<(Vec<f64>, f64)> {
    if x.len() != space.dim() {
        return Err(Error::DimensionMismatch { expected: space.dim(), got: x.len() });
    }
    let mut penalty = 0.0;
    let feasible = x
        .iter()
        .zip(space.lower.iter().zip(&space.upper))
        .map(|(v, (l, u))| {
            let c = v.clamp(*l, *u);
            penalty += (v - c) * (v - c);
            c
        })
        .collect();
    Ok((feasible, PENALTY_W * penalty))
}

pub fn objective_pigs(catalog: &ObjectCatalog, level: &Level) -> f64 {
    -(level.count(catalog, Category::Pig) as f64)
}

pub fn objective_tnt(catalog: &ObjectCatalog, level: &Level) -> f64 {
    -(level.count(catalog, Category::Tnt) as f64)
}

/// `max(5 - birds, remaining birds) * 10 + blocks`.
pub fn difficulty_value(outcome: &AgentOutcome) -> f64 {
    let first = (5 - outcome.n_birds as i64).max(outcome.n_rem_birds as i64);
    (first * 10 + outcome.n_blocks as i64) as f64
}

/// `max(60 - blocks, blocks - remaining blocks) * 10 - pigs`.
pub fn aesthetics_value(outcome: &AgentOutcome) -> f64 {
    let blocks = outcome.n_blocks as i64;
    let first = (60 - blocks).max(blocks - outcome.n_rem_blocks as i64);
    (first * 10 - outcome.n_pigs as i64) as f64
}

pub fn objective_difficulty(catalog: &ObjectCatalog, level: &Level) -> Result<f64> {
    Ok(difficulty_value(&heuristic_play(catalog, level)?))
}

pub fn objective_aesthetics(catalog: &ObjectCatalog, level: &Level) -> Result<f64> {
    Ok(aesthetics_value(&heuristic_play(catalog, level)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Pigs,
    Tnt,
    Difficulty,
    Aesthetics,
}

impl Objective {
    /// Value to minimise.
    pub fn evaluate(self, catalog: &ObjectCatalog, level: &Level) -> Result<f64> {
        match self {
            Objective::Pigs => Ok(objective_pigs(catalog, level)),
            Objective::Tnt => Ok(objective_tnt(catalog, level)),
            Objective::Difficulty => objective_difficulty(catalog, level),
            Objective::Aesthetics => objective_aesthetics(catalog, level),
        }
    }

    /// The human-facing feature: counts for pigs/TNT, the objective itself
    /// for the play-based ones.
    pub fn feature(self, catalog: &ObjectCatalog, level: &Level) -> Result<f64> {
        match self {
            Objective::Pigs | Objective::Tnt => Ok(-self.evaluate(catalog, level)?),
            _ => self.evaluate(catalog, level),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Pigs => "pigs",
            Objective::Tnt => "tnt",
            Objective::Difficulty => "difficulty",
            Objective::Aesthetics => "aesthetics",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pigs" => Ok(Objective::Pigs),
            "tnt" => Ok(Objective::Tnt),
            "difficulty" => Ok(Objective::Difficulty),
            "aesthetics" => Ok(Objective::Aesthetics),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, GameObject};
    use proptest::prelude::*;

    #[test]
    fn bird_formula() {
        assert_eq!(n_birds_for(0, 0), 1);
        assert_eq!(n_birds_for(4, 60), 5);
        assert_eq!(n_birds_for(40, 600), 10);
    }

    proptest! {
        #[test]
        fn bird_formula_is_monotone(p in 0usize..50, b in 0usize..400) {
            prop_assert!(n_birds_for(p + 1, b) >= n_birds_for(p, b));
            prop_assert!(n_birds_for(p, b + 1) >= n_birds_for(p, b));
        }
    }

    #[test]
    fn bounds_examples() {
        let space = SearchSpace::latent(3);
        let (x, pen) = apply_bounds(&space, &[0.5, -1.0, 2.9]).unwrap();
        assert_eq!((x, pen), (vec![0.5, -1.0, 2.9], 0.0));
        let (x, pen) = apply_bounds(&space, &[4.0, 0.0, 0.0]).unwrap();
        assert_eq!(x, vec![3.0, 0.0, 0.0]);
        assert!((pen - PENALTY_W).abs() < 1e-15);
        assert!(apply_bounds(&space, &[0.0]).is_err());
        assert!(SearchSpace::new(vec![1.0], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn bounds_property(x in proptest::collection::vec(-10.0f64..10.0, 4)) {
            let space = SearchSpace::distribution(3);
            let (f, pen) = apply_bounds(&space, &x).unwrap();
            prop_assert!(space.contains(&f));
            prop_assert_eq!(pen == 0.0, space.contains(&x));
        }
    }

    fn pig_level(cat: &ObjectCatalog, pigs: usize, tnts: usize) -> Level {
        let pig = cat.of_category(Category::Pig).next().unwrap().type_id;
        let tnt = cat.of_category(Category::Tnt).next().unwrap().type_id;
        let mut objs = Vec::new();
        for i in 0..pigs {
            objs.push(GameObject { type_id: pig, x: i as f64, y: -3.275, rotation: 0.0 });
        }
        for i in 0..tnts {
            objs.push(GameObject { type_id: tnt, x: -4.0 + i as f64, y: 1.0, rotation: 0.0 });
        }
        Level::new(objs, 0)
    }

    #[test]
    fn counting_objectives() {
        let cat = default_catalog();
        assert_eq!(objective_pigs(&cat, &Level::default()), 0.0);
        assert_eq!(objective_tnt(&cat, &Level::default()), 0.0);
        let level = pig_level(&cat, 3, 1);
        assert_eq!(objective_pigs(&cat, &level), -3.0);
        assert_eq!(objective_tnt(&cat, &level), -1.0);
        let mut moved = level.clone();
        for o in &mut moved.objects {
            o.x += 0.37;
            o.y -= 1.0;
        }
        assert_eq!(objective_pigs(&cat, &moved), -3.0);
        assert_eq!(Objective::Pigs.feature(&cat, &level).unwrap(), 3.0);
    }

    fn outcome(n_birds: u32, n_rem_birds: u32, n_blocks: u32, n_rem_blocks: u32, n_pigs: u32) -> AgentOutcome {
        AgentOutcome { n_birds, n_rem_birds, n_blocks, n_rem_blocks, n_pigs, pigs_destroyed: 0 }
    }

    #[test]
    fn play_objective_examples() {
        assert_eq!(difficulty_value(&outcome(5, 0, 20, 0, 0)), 20.0);
        assert_eq!(difficulty_value(&outcome(3, 1, 10, 0, 0)), 30.0);
        assert_eq!(difficulty_value(&outcome(3, 1, 11, 0, 0)), 31.0);
        assert_eq!(aesthetics_value(&outcome(1, 0, 60, 60, 2)), -2.0);
        assert_eq!(aesthetics_value(&outcome(1, 0, 40, 40, 0)), 200.0);
        assert_eq!(aesthetics_value(&outcome(1, 0, 40, 40, 1)), 199.0);
    }

    #[test]
    fn objective_names() {
        for o in [Objective::Pigs, Objective::Tnt, Objective::Difficulty, Objective::Aesthetics] {
            assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
        }
        assert!("speed".parse::<Objective>().is_err());
    }
}
