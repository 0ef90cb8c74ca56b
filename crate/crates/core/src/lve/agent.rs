use crate::catalog::{Category, Level, ObjectCatalog};
use crate::error::Result;
use crate::physics::check_stability;

use super::{count_blocks, n_birds_for};

/// Everything whose center lies within this distance of the targeted pig
/// is destroyed by the shot.
pub const BLAST_R: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentOutcome {
    pub n_birds: u32,
    pub n_rem_birds: u32,
    pub n_blocks: u32,
    pub n_rem_blocks: u32,
    pub n_pigs: u32,
    pub pigs_destroyed: u32,
}

/// Deterministic scripted play.
///
/// Each bird hits the leftmost (then lowest) surviving pig, destroying it
/// and everything within [`BLAST_R`]; objects left unsupported collapse,
/// transitively. A level that is unstable before the first shot collapses
/// entirely without any bird being used.
pub fn heuristic_play(catalog: &ObjectCatalog, level: &Level) -> Result<AgentOutcome> {
    let n_pigs = level.count(catalog, Category::Pig);
    let n_blocks = count_blocks(catalog, level);
    let n_birds = n_birds_for(n_pigs, n_blocks);
    let mut categories = Vec::with_capacity(level.objects.len());
    for o in &level.objects {
        categories.push(catalog.entry(o.type_id)?.category);
    }
    let is_block = |c: Category| matches!(c, Category::Block | Category::Tnt);

    if !check_stability(catalog, level)?.stable {
        return Ok(AgentOutcome {
            n_birds,
            n_rem_birds: n_birds,
            n_blocks: n_blocks as u32,
            n_rem_blocks: 0,
            n_pigs: n_pigs as u32,
            pigs_destroyed: n_pigs as u32,
        });
    }

    let mut alive = vec![true; level.objects.len()];
    let mut birds = n_birds;
    loop {
        let target = (0..alive.len())
            .filter(|&i| alive[i] && categories[i] == Category::Pig)
            .min_by(|&a, &b| {
                let (oa, ob) = (&level.objects[a], &level.objects[b]);
                oa.x.total_cmp(&ob.x).then(oa.y.total_cmp(&ob.y)).then(a.cmp(&b))
            });
        let Some(target) = target else { break };
        if birds == 0 {
            break;
        }
        birds -= 1;
        let (tx, ty) = (level.objects[target].x, level.objects[target].y);
        for (i, o) in level.objects.iter().enumerate() {
            if alive[i] && categories[i] != Category::Platform && (o.x - tx).hypot(o.y - ty) <= BLAST_R {
                alive[i] = false;
            }
        }
        alive[target] = false;
        collapse(catalog, level, &categories, &mut alive)?;
    }

    let survivors = |pred: &dyn Fn(Category) -> bool| {
        alive.iter().zip(&categories).filter(|(a, c)| **a && pred(**c)).count() as u32
    };
    let pigs_left = survivors(&|c| c == Category::Pig);
    Ok(AgentOutcome {
        n_birds,
        n_rem_birds: birds,
        n_blocks: n_blocks as u32,
        n_rem_blocks: survivors(&|c| is_block(c)),
        n_pigs: n_pigs as u32,
        pigs_destroyed: n_pigs as u32 - pigs_left,
    })
}

fn collapse(catalog: &ObjectCatalog, level: &Level, categories: &[Category], alive: &mut [bool]) -> Result<()> {
    loop {
        let index: Vec<usize> = (0..alive.len()).filter(|&i| alive[i]).collect();
        let sub = Level::new(index.iter().map(|&i| level.objects[i]).collect(), 0);
        let report = check_stability(catalog, &sub)?;
        let mut removed = false;
        for off in report.offenders {
            let i = index[off.index];
            if categories[i] != Category::Platform {
                alive[i] = false;
                removed = true;
            }
        }
        if !removed {
            return Ok(());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, GameObject, Material};

    fn obj(type_id: u16, x: f64, y: f64) -> GameObject {
        GameObject { type_id, x, y, rotation: 0.0 }
    }

    #[test]
    fn no_pigs_no_shots() {
        let cat = default_catalog();
        let fat = cat.lookup("RectFat", Material::Wood, 0.0).unwrap();
        let level = Level::new(vec![obj(fat.type_id, 0.0, -3.5 + fat.height / 2.0)], 0);
        let out = heuristic_play(&cat, &level).unwrap();
        assert_eq!(out.n_rem_birds, out.n_birds);
        assert_eq!(out.n_rem_blocks, out.n_blocks);
        assert_eq!(out.n_blocks, 1);
    }

    #[test]
    fn isolated_pig_takes_one_bird() {
        let cat = default_catalog();
        let pig = cat.of_category(Category::Pig).next().unwrap();
        let fat = cat.lookup("RectFat", Material::Wood, 0.0).unwrap();
        let level = Level::new(
            vec![obj(pig.type_id, -2.0, -3.5 + pig.height / 2.0), obj(fat.type_id, 2.0, -3.5 + fat.height / 2.0)],
            0,
        );
        let out = heuristic_play(&cat, &level).unwrap();
        assert_eq!(out.pigs_destroyed, 1);
        assert_eq!(out.n_rem_birds, out.n_birds - 1);
        assert_eq!(out.n_rem_blocks, 1);
        assert_eq!(heuristic_play(&cat, &level).unwrap(), out);
    }

    #[test]
    fn shot_collapses_tower_above_pig() {
        let cat = default_catalog();
        let pig = cat.of_category(Category::Pig).next().unwrap();
        let plank = cat.lookup("RectBig", Material::Wood, 0.0).unwrap();
        let pig_y = -3.5 + pig.height / 2.0;
        let plank_y = -3.5 + pig.height + plank.height / 2.0;
        let top_y = plank_y + plank.height;
        // plank centred over the pig, a second plank on top of it
        let level = Level::new(
            vec![obj(pig.type_id, 0.0, pig_y), obj(plank.type_id, 0.0, plank_y), obj(plank.type_id, 0.0, top_y)],
            0,
        );
        assert!(check_stability(&cat, &level).unwrap().stable);
        let out = heuristic_play(&cat, &level).unwrap();
        assert_eq!(out.pigs_destroyed, 1);
        assert_eq!(out.n_rem_blocks, 0);
        assert_eq!(out.n_blocks, 2);
    }

    #[test]
    fn unstable_level_falls_apart() {
        let cat = default_catalog();
        let fat = cat.lookup("RectFat", Material::Wood, 0.0).unwrap();
        let pig = cat.of_category(Category::Pig).next().unwrap();
        let level = Level::new(vec![obj(fat.type_id, 0.0, 0.0), obj(pig.type_id, 2.0, -3.5 + pig.height / 2.0)], 0);
        let out = heuristic_play(&cat, &level).unwrap();
        assert_eq!(out.n_rem_blocks, 0);
        assert_eq!(out.pigs_destroyed, 1);
        assert_eq!(out.n_rem_birds, out.n_birds);
    }

    #[test]
    fn runs_out_of_birds() {
        let cat = default_catalog();
        let pig = cat.of_category(Category::Pig).next().unwrap();
        // 3 pigs far apart: 1 + 3/2 = 2 birds
        let level = Level::new((0..3).map(|i| obj(pig.type_id, -3.0 + 3.0 * i as f64, -3.5 + pig.height / 2.0)).collect(), 0);
        let out = heuristic_play(&cat, &level).unwrap();
        assert_eq!(out.n_birds, 2);
        assert_eq!(out.n_rem_birds, 0);
        assert_eq!(out.pigs_destroyed, 2);
    }
}
