use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::catalog::{Level, ObjectCatalog};
use crate::error::{Error, Result};
use crate::seed::SeedTree;
use crate::tensor_io;

use super::cmaes::CmaesState;
use super::{apply_bounds, Objective, SearchSpace};

/// Anything that maps latent vectors to levels deterministically.
pub trait LevelGenerator {
    fn latent_dim(&self) -> usize;

    /// One level per latent vector, in order.
    fn generate_levels(&self, zs: &[Vec<f64>]) -> Result<Vec<Level>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode {
    /// Optimise the spread and mean of the latent sampling law.
    Dist,
    /// Optimise the latent vector itself.
    Direct,
}

impl std::str::FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dist" => Ok(SearchMode::Dist),
            "direct" => Ok(SearchMode::Direct),
            other => Err(Error::Config(format!("unknown search mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for SearchMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SearchMode::Dist => "dist",
            SearchMode::Direct => "direct",
        })
    }
}

#[derive(Debug, Clone)]
pub struct LveConfig {
    pub generations: usize,
    pub lambda: usize,
    /// Levels averaged per fitness evaluation in dist mode.
    pub samples: usize,
    /// Levels drawn from the generation-best distribution for the feature log.
    pub feature_samples: usize,
    /// Initial step size as a fraction of each coordinate's box width.
    pub sigma_fraction: f64,
    pub seed: u64,
}

impl Default for LveConfig {
    fn default() -> Self {
        LveConfig {
            generations: 100,
            lambda: 60,
            samples: 30,
            feature_samples: 10,
            sigma_fraction: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub generation: usize,
    /// Objective value of the best-so-far solution.
    pub best_fitness: f64,
    pub pop_mean: f64,
    pub pop_std: f64,
    pub feature_mean: f64,
    pub feature_std: f64,
}

impl HistoryRow {
    pub const HEADER: &'static str = "generation,best_fitness,pop_mean,pop_std,feature_mean,feature_std";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.generation, self.best_fitness, self.pop_mean, self.pop_std, self.feature_mean, self.feature_std
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(Error::format("history", format!("expected 6 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::format("history", e.to_string()));
        Ok(HistoryRow {
            generation: f[0].parse().map_err(|_| Error::format("history", "bad generation"))?,
            best_fitness: num(f[1])?,
            pop_mean: num(f[2])?,
            pop_std: num(f[3])?,
            feature_mean: num(f[4])?,
            feature_std: num(f[5])?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct LveResult {
    /// Best feasible solution: `z` in direct mode, `(alpha, mean...)` in dist mode.
    pub best: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<HistoryRow>,
    /// Generation-best feasible solution per generation.
    pub generation_best: Vec<Vec<f64>>,
}

/// A stored search result: `(alpha, mean...)` in dist mode, `z` in direct mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub mode: SearchMode,
    pub objective: Objective,
    pub fitness: f64,
    pub x: Vec<f64>,
}

impl Solution {
    pub fn write<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        tensor_io::write_header(
            w,
            &[
                ("mode", self.mode.to_string()),
                ("objective", self.objective.to_string()),
                ("fitness", self.fitness.to_string()),
                ("dim", self.x.len().to_string()),
            ],
        )?;
        tensor_io::write_f64s(w, self.x.iter().copied())
    }

    pub fn read<R: std::io::BufRead>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "solution file";
        let h = tensor_io::read_header(r, WHAT)?;
        let dim: usize = tensor_io::header_get(&h, "dim", WHAT)?;
        if dim > 1 << 20 {
            return Err(Error::format(WHAT, "implausible dimension"));
        }
        Ok(Solution {
            mode: tensor_io::header_get(&h, "mode", WHAT)?,
            objective: tensor_io::header_get(&h, "objective", WHAT)?,
            fitness: tensor_io::header_get(&h, "fitness", WHAT)?,
            x: tensor_io::read_f64s(r, dim, WHAT)?,
        })
    }

    /// Latent vectors this solution stands for: `count` draws in dist
    /// mode, the point itself in direct mode.
    pub fn latents<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
        match self.mode {
            SearchMode::Direct => vec![self.x.clone()],
            SearchMode::Dist => {
                let dim = self.x.len().saturating_sub(1);
                let noise = draw_noise(rng, count, dim);
                spread_latents(self.x[0], &self.x[1..], &noise)
            }
        }
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Latent draws `mean + sqrt(alpha) * eps_i` for the given noise vectors.
fn spread_latents(alpha: f64, mean: &[f64], noise: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let scale = alpha.max(0.0).sqrt();
    noise
        .iter()
        .map(|eps| mean.iter().zip(eps).map(|(m, e)| m + scale * e).collect())
        .collect()
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, count: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Mean objective over `m` levels generated from `N(lve_mean, alpha I)`.
pub fn evaluate_dist<G: LevelGenerator + ?Sized, R: Rng + ?Sized>(
    catalog: &ObjectCatalog,
    generator: &G,
    objective: Objective,
    alpha: f64,
    lve_mean: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::Config(format!("alpha must be non-negative, got {alpha}")));
    }
    if m == 0 {
        return Err(Error::Config("need at least one sample".into()));
    }
    let noise = draw_noise(rng, m, lve_mean.len());
    let levels = generator.generate_levels(&spread_latents(alpha, lve_mean, &noise))?;
    let mut total = 0.0;
    for l in &levels {
        total += objective.evaluate(catalog, l)?;
    }
    Ok(total / m as f64)
}

pub fn run_lve<G: LevelGenerator + ?Sized>(
    catalog: &ObjectCatalog,
    generator: &G,
    objective: Objective,
    mode: SearchMode,
    config: &LveConfig,
) -> Result<LveResult> {
    let dim_z = generator.latent_dim();
    let space = match mode {
        SearchMode::Dist => SearchSpace::distribution(dim_z),
        SearchMode::Direct => SearchSpace::latent(dim_z),
    };
    let widths = space.widths();
    let cov = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(widths.len(), widths.iter().map(|w| w * w)));
    let mut state = CmaesState::with_covariance(space.center(), config.sigma_fraction, cov, config.lambda)?;
    let seeds = SeedTree::new(config.seed);

    let mut best: Option<(f64, f64, Vec<f64>)> = None; // (penalised, raw, x)
    let mut history = Vec::with_capacity(config.generations);
    let mut generation_best = Vec::with_capacity(config.generations);

    for g in 0..config.generations {
        let candidates = state.ask(&mut seeds.rng("lve-ask", g as u64));
        let mut feasible = Vec::with_capacity(candidates.len());
        let mut penalties = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let (f, p) = apply_bounds(&space, c)?;
            feasible.push(f);
            penalties.push(p);
        }

        let raw = match mode {
            SearchMode::Direct => {
                let levels = generator.generate_levels(&feasible)?;
                levels
                    .iter()
                    .map(|l| objective.evaluate(catalog, l))
                    .collect::<Result<Vec<f64>>>()?
            }
            SearchMode::Dist => {
                // common random numbers within a generation
                let noise = draw_noise(&mut seeds.rng("lve-noise", g as u64), config.samples, dim_z);
                let mut zs = Vec::with_capacity(feasible.len() * config.samples);
                for f in &feasible {
                    zs.extend(spread_latents(f[0], &f[1..], &noise));
                }
                let levels = generator.generate_levels(&zs)?;
                let mut values = Vec::with_capacity(feasible.len());
                for chunk in levels.chunks(config.samples) {
                    let mut total = 0.0;
                    for l in chunk {
                        total += objective.evaluate(catalog, l)?;
                    }
                    values.push(total / config.samples as f64);
                }
                values
            }
        };
        if let Some(index) = raw.iter().position(|v| v.is_nan()) {
            return Err(Error::NanFitness { index });
        }
        let fitness: Vec<f64> = raw.iter().zip(&penalties).map(|(r, p)| r + p).collect();

        let gen_best = CmaesState::ranking(&fitness)?[0];
        if best.as_ref().map_or(true, |b| fitness[gen_best] < b.0) {
            best = Some((fitness[gen_best], raw[gen_best], feasible[gen_best].clone()));
        }

        let (feature_mean, feature_std) = match mode {
            SearchMode::Dist => {
                let sol = &feasible[gen_best];
                let noise = draw_noise(&mut seeds.rng("lve-feature", g as u64), config.feature_samples, dim_z);
                let levels = generator.generate_levels(&spread_latents(sol[0], &sol[1..], &noise))?;
                let feats = levels
                    .iter()
                    .map(|l| objective.feature(catalog, l))
                    .collect::<Result<Vec<f64>>>()?;
                mean_std(&feats)
            }
            SearchMode::Direct => {
                let level = generator.generate_levels(std::slice::from_ref(&feasible[gen_best]))?;
                (objective.feature(catalog, &level[0])?, 0.0)
            }
        };
        let (pop_mean, pop_std) = mean_std(&raw);
        history.push(HistoryRow {
            generation: g,
            best_fitness: best.as_ref().map(|b| b.1).unwrap_or(f64::NAN),
            pop_mean,
            pop_std,
            feature_mean,
            feature_std,
        });
        generation_best.push(feasible[gen_best].clone());
        log::info!(
            "generation {g}: best {:.4} mean {pop_mean:.4} feature {feature_mean:.3}",
            history[g].best_fitness
        );

        state.tell(&candidates, &fitness)?;
    }

    let (_, best_fitness, best) = best.ok_or_else(|| Error::Config("no generations were run".into()))?;
    Ok(LveResult {
        best,
        best_fitness,
        history,
        generation_best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, Category, GameObject};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Places `round(3 + z_0)` pigs (0..=6) on the ground.
    struct PigDial {
        pig: u16,
        dim: usize,
    }

    impl LevelGenerator for PigDial {
        fn latent_dim(&self) -> usize {
            self.dim
        }

        fn generate_levels(&self, zs: &[Vec<f64>]) -> Result<Vec<Level>> {
            Ok(zs
                .iter()
                .map(|z| {
                    let n = (3.0 + z[0]).round().clamp(0.0, 6.0) as usize;
                    let objs = (0..n)
                        .map(|i| GameObject { type_id: self.pig, x: -4.0 + 1.2 * i as f64, y: -3.275, rotation: 0.0 })
                        .collect();
                    Level::new(objs, 0)
                })
                .collect())
        }
    }

    fn dial() -> (ObjectCatalog, PigDial) {
        let cat = default_catalog();
        let pig = cat.of_category(Category::Pig).next().unwrap().type_id;
        (cat, PigDial { pig, dim: 3 })
    }

    #[test]
    fn zero_spread_equals_point_value() {
        let (cat, g) = dial();
        let mean = vec![1.2, 0.0, 0.0];
        let point = Objective::Pigs.evaluate(&cat, &g.generate_levels(&[mean.clone()]).unwrap()[0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(evaluate_dist(&cat, &g, Objective::Pigs, 0.0, &mean, 30, &mut rng).unwrap(), point);
    }

    #[test]
    fn single_sample_and_seeding() {
        let (cat, g) = dial();
        let mean = vec![0.0; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f1 = evaluate_dist(&cat, &g, Objective::Pigs, 1.0, &mean, 1, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
        let direct = Objective::Pigs.evaluate(&cat, &g.generate_levels(&[eps]).unwrap()[0]).unwrap();
        assert_eq!(f1, direct);

        let a = evaluate_dist(&cat, &g, Objective::Pigs, 1.5, &mean, 30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = evaluate_dist(&cat, &g, Objective::Pigs, 1.5, &mean, 30, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let c = evaluate_dist(&cat, &g, Objective::Pigs, 1.5, &mean, 30, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(evaluate_dist(&cat, &g, Objective::Pigs, -1.0, &mean, 30, &mut ChaCha8Rng::seed_from_u64(9)).is_err());
    }

    struct Constant;

    impl LevelGenerator for Constant {
        fn latent_dim(&self) -> usize {
            4
        }

        fn generate_levels(&self, zs: &[Vec<f64>]) -> Result<Vec<Level>> {
            Ok(vec![Level::default(); zs.len()])
        }
    }

    #[test]
    fn constant_objective_history() {
        let cat = default_catalog();
        let config = LveConfig { generations: 5, samples: 3, ..LveConfig::default() };
        for mode in [SearchMode::Dist, SearchMode::Direct] {
            let result = run_lve(&cat, &Constant, Objective::Pigs, mode, &config).unwrap();
            assert_eq!(result.history.len(), 5);
            assert!(result.history.iter().all(|h| h.best_fitness == 0.0));
        }
    }

    #[test]
    fn dist_mode_raises_pig_count() {
        let (cat, g) = dial();
        let config = LveConfig { generations: 25, seed: 3, ..LveConfig::default() };
        let result = run_lve(&cat, &g, Objective::Pigs, SearchMode::Dist, &config).unwrap();
        let first = result.history[0].feature_mean;
        let last = result.history.last().unwrap().feature_mean;
        assert!(last >= first, "{first} -> {last}");
        assert!(last > 5.5, "final pig count {last}");
        let again = run_lve(&cat, &g, Objective::Pigs, SearchMode::Dist, &config).unwrap();
        assert_eq!(result.history, again.history);
    }

    #[test]
    fn solution_file_round_trip() {
        let sol = Solution { mode: SearchMode::Dist, objective: Objective::Tnt, fitness: -2.5, x: vec![1.0, 0.5, -0.25] };
        let mut buf = Vec::new();
        sol.write(&mut buf).unwrap();
        assert_eq!(Solution::read(&mut std::io::Cursor::new(&buf)).unwrap(), sol);
        let zs = sol.latents(4, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(zs.len(), 4);
        assert!(zs.iter().all(|z| z.len() == 2));
    }

    #[test]
    fn history_csv_round_trip() {
        let row = HistoryRow { generation: 3, best_fitness: -4.5, pop_mean: -2.0, pop_std: 0.25, feature_mean: 4.5, feature_std: 1.0 };
        assert_eq!(HistoryRow::parse(&row.to_csv()).unwrap(), row);
        assert!(HistoryRow::parse("1,2,3").is_err());
    }
}
