//! Rule-based corpus of stable tower levels.
//!
//! Towers stand on a fixed lattice of anchor columns spaced wider than the
//! widest block used, so neighbouring towers never touch and every block is
//! centred on a grid column. Layers get narrower going up, with the odd
//! pair of pillars carrying a plank.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::catalog::{CatalogEntry, Category, GameObject, Level, Material, ObjectCatalog};
use crate::codec::{decode, encode, GridSpec};
use crate::error::{Error, Result};
use crate::lve::compute_n_birds;
use crate::physics::check_stability;
use crate::seed::{SeedTree, StageRng};
use crate::xml::{parse_level, write_level};

/// Anchor columns; adjacent anchors are 1.7 units apart.
pub const ANCHOR_COLS: [usize; 6] = [4, 21, 38, 55, 72, 89];

const MAX_BLOCK_WIDTH: f64 = 1.68;
const MAX_RETRIES: usize = 100;
const PILLAR_PROB: f64 = 0.2;
/// Chance that a wide enough support gets two pigs instead of one.
const PIG_PAIR_PROB: f64 = 0.5;
/// Pig pairs sit this many columns either side of the support centre.
const PAIR_OFFSET: usize = 3;
/// Narrowest support that carries a pig pair.
const PAIR_MIN_WIDTH: f64 = 0.85;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_levels: usize,
    pub seed: u64,
    /// Inclusive range of towers per level.
    pub towers: (usize, usize),
    /// Inclusive range of block layers per tower.
    pub tower_height: (usize, usize),
    pub pig_prob: f64,
    pub tnt_prob: f64,
    pub platform_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_levels: 200,
            seed: 0,
            towers: (1, 6),
            tower_height: (2, 8),
            pig_prob: 0.5,
            tnt_prob: 0.2,
            platform_prob: 0.3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (t0, t1) = self.towers;
        if t0 == 0 || t0 > t1 || t1 > ANCHOR_COLS.len() {
            return Err(Error::Config(format!("towers range must lie within 1..={}", ANCHOR_COLS.len())));
        }
        if self.tower_height.0 == 0 || self.tower_height.0 > self.tower_height.1 {
            return Err(Error::Config("tower_height range must be nonempty and start at 1 or more".into()));
        }
        for p in [self.pig_prob, self.tnt_prob, self.platform_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

struct Builder<'a> {
    catalog: &'a ObjectCatalog,
    spec: &'a GridSpec,
    objects: Vec<GameObject>,
}

impl Builder<'_> {
    /// One pig at column `col`, or a pair either side of it when the
    /// support is wide enough and the coin says so.
    fn put_pigs(&mut self, pig: &CatalogEntry, rng: &mut StageRng, col: usize, bottom: f64, support: f64) -> Result<()> {
        if support >= PAIR_MIN_WIDTH && rng.random::<f64>() < PIG_PAIR_PROB {
            self.put(pig, self.spec.ind2float(col - PAIR_OFFSET)?, bottom);
            self.put(pig, self.spec.ind2float(col + PAIR_OFFSET)?, bottom);
        } else {
            self.put(pig, self.spec.ind2float(col)?, bottom);
        }
        Ok(())
    }

    fn put(&mut self, e: &CatalogEntry, x: f64, bottom: f64) -> f64 {
        self.objects.push(GameObject { type_id: e.type_id, x, y: bottom + e.height / 2.0, rotation: e.rotation });
        bottom + e.height
    }

    fn max_top(&self) -> f64 {
        self.objects
            .iter()
            .map(|o| {
                let e = self.catalog.entry(o.type_id).expect("own catalog");
                o.y + e.height / 2.0
            })
            .fold(self.spec.ground_y, f64::max)
    }
}

fn is_tower_block(e: &CatalogEntry) -> bool {
    e.category == Category::Block
        && !e.rolls
        && (e.rotation == 0.0 || e.rotation == 90.0)
        && e.width <= MAX_BLOCK_WIDTH + 1e-9
}

/// Builds one tower at `x`; returns whether its top is flat.
fn build_tower(b: &mut Builder, rng: &mut StageRng, x: f64, layers: usize, material: Material) -> bool {
    let blocks: Vec<&CatalogEntry> = b
        .catalog
        .entries()
        .iter()
        .filter(|e| e.material == material && is_tower_block(e))
        .collect();
    let pillars: Vec<&CatalogEntry> = blocks
        .iter()
        .copied()
        .filter(|e| e.width <= 0.43 + 1e-9 && e.kind_name != "Triangle")
        .collect();
    let mut width_cap = MAX_BLOCK_WIDTH;
    let mut min_width = 0.0;
    let mut bottom = b.spec.ground_y;
    let mut flat = true;
    let mut k = 0;
    while k < layers {
        let last = k + 1 == layers;
        // a pillar pair needs a plank above it, so never as the last layer
        if !last && k > 0 && width_cap >= 0.85 && min_width == 0.0 && rng.random::<f64>() < PILLAR_PROB {
            let p = *pillars.choose(rng).expect("pillar shapes exist");
            // offset in whole columns, pillars apart and inside the layer below
            let lo = ((p.width + 0.1) / 2.0 / 0.1).ceil() as i64;
            let hi = ((width_cap - p.width) / 2.0 / 0.1 + 1e-9).floor() as i64;
            if lo <= hi {
                let d = rng.random_range(lo..=hi) as f64 * 0.1;
                b.put(p, x - d, bottom);
                bottom = b.put(p, x + d, bottom);
                min_width = 2.0 * d + p.width;
                k += 1;
                continue;
            }
        }
        let choices: Vec<&CatalogEntry> = blocks
            .iter()
            .copied()
            .filter(|e| {
                e.width <= width_cap + 1e-9
                    && e.width + 1e-9 >= min_width
                    && (last || e.kind_name != "Triangle")
                    && (min_width == 0.0 || e.height < 0.5)
            })
            .collect();
        let Some(&e) = choices.choose(rng) else { break };
        bottom = b.put(e, x, bottom);
        width_cap = e.width;
        min_width = 0.0;
        flat = e.kind_name != "Triangle";
        k += 1;
    }
    flat
}

fn candidate(catalog: &ObjectCatalog, spec: &GridSpec, config: &SynthConfig, rng: &mut StageRng) -> Result<Level> {
    let pig = catalog.of_category(Category::Pig).next().ok_or(Error::Config("catalog has no pig".into()))?;
    let tnt = catalog.of_category(Category::Tnt).next();
    let platforms: Vec<&CatalogEntry> = catalog.of_category(Category::Platform).collect();
    let mut b = Builder { catalog, spec, objects: Vec::new() };

    // each level draws its own pig rate, so pig counts spread well beyond the mean
    let pig_rate = rng.random_range(0.0..=(2.0 * config.pig_prob).min(1.0));
    let n_towers = rng.random_range(config.towers.0..=config.towers.1);
    let mut anchors: Vec<usize> = (0..ANCHOR_COLS.len()).collect();
    let towers: Vec<usize> = anchors.choose_multiple(rng, n_towers).copied().collect();
    anchors.retain(|a| !towers.contains(a));
    let mut tops = Vec::new();
    for &a in &towers {
        let x = spec.ind2float(ANCHOR_COLS[a])?;
        let material = *[Material::Wood, Material::Stone, Material::Ice].choose(rng).expect("nonempty");
        let layers = rng.random_range(config.tower_height.0..=config.tower_height.1);
        let flat = build_tower(&mut b, rng, x, layers, material);
        if let (true, Some(o)) = (flat, b.objects.last()) {
            let e = catalog.entry(o.type_id)?;
            tops.push((ANCHOR_COLS[a], o.y + e.height / 2.0, e.width));
        }
    }
    for (col, top, width) in tops {
        let r: f64 = rng.random();
        if r < pig_rate {
            b.put_pigs(pig, rng, col, top, width)?;
        } else if let Some(t) = tnt.filter(|_| r < pig_rate + config.tnt_prob) {
            b.put(t, spec.ind2float(col)?, top);
        }
    }
    let mut free = anchors;
    free.sort_unstable();
    let platform_at = if !platforms.is_empty() && !free.is_empty() && rng.random::<f64>() < config.platform_prob {
        Some(free.remove(rng.random_range(0..free.len())))
    } else {
        None
    };
    for &a in &free {
        if rng.random::<f64>() < pig_rate / 2.0 {
            b.put_pigs(pig, rng, ANCHOR_COLS[a], spec.ground_y, f64::INFINITY)?;
        }
    }
    if let Some(a) = platform_at {
        let p = *platforms.choose(rng).expect("nonempty");
        let x = spec.ind2float(ANCHOR_COLS[a])?;
        let top = b.put(p, x, b.max_top());
        if rng.random::<f64>() < pig_rate {
            b.put_pigs(pig, rng, ANCHOR_COLS[a], top, p.width)?;
        }
    }
    let mut level = Level::new(b.objects, 0);
    level.n_birds = compute_n_birds(catalog, &level);
    Ok(level)
}

/// True when the level has a pig, encodes, decodes back to the same
/// objects and stands still.
fn accept(catalog: &ObjectCatalog, spec: &GridSpec, level: &Level) -> Result<bool> {
    if level.count(catalog, Category::Pig) == 0 {
        return Ok(false);
    }
    let Ok(matrix) = encode(catalog, spec, level) else { return Ok(false) };
    let back = decode(catalog, spec, &matrix)?;
    let key = |o: &GameObject| (o.type_id, (o.x * 1e4).round() as i64, (o.y * 1e4).round() as i64);
    let mut a: Vec<_> = level.objects.iter().map(key).collect();
    let mut b: Vec<_> = back.objects.iter().map(key).collect();
    a.sort_unstable();
    b.sort_unstable();
    Ok(a == b && check_stability(catalog, level)?.stable)
}

pub fn synth_level(catalog: &ObjectCatalog, spec: &GridSpec, config: &SynthConfig, index: usize) -> Result<Level> {
    let mut rng = SeedTree::new(config.seed).rng("synth", index as u64);
    for _ in 0..MAX_RETRIES {
        let level = candidate(catalog, spec, config, &mut rng)?;
        if accept(catalog, spec, &level)? {
            return Ok(level);
        }
    }
    Err(Error::RejectionExhausted { level: index, retries: MAX_RETRIES })
}

pub fn synth_dataset(catalog: &ObjectCatalog, config: &SynthConfig) -> Result<Vec<Level>> {
    config.validate()?;
    let spec = GridSpec::default();
    (0..config.n_levels).map(|i| synth_level(catalog, &spec, config, i)).collect()
}

pub const MANIFEST: &str = "manifest.txt";

/// One XML file per level plus a manifest listing them in order.
pub fn write_dataset(dir: &Path, catalog: &ObjectCatalog, levels: &[Level]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(levels.len());
    let mut paths = Vec::with_capacity(levels.len());
    for (i, level) in levels.iter().enumerate() {
        let name = format!("level-{i:04}.xml");
        let path = dir.join(&name);
        fs::write(&path, write_level(catalog, level)?)?;
        names.push(name);
        paths.push(path);
    }
    let mut manifest = names.join("\n");
    manifest.push('\n');
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(paths)
}

/// Level files of a directory: the manifest order when present, else all
/// `.xml` files sorted by name.
pub fn dataset_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let manifest = dir.join(MANIFEST);
    if manifest.is_file() {
        return Ok(fs::read_to_string(manifest)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| dir.join(l))
            .collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "xml"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn read_dataset(dir: &Path, catalog: &ObjectCatalog) -> Result<Vec<Level>> {
    dataset_files(dir)?
        .iter()
        .map(|p| parse_level(catalog, &fs::read(p)?))
        .collect()
}
