//! Quasi-static stacking check.
//!
//! No dynamics: an object is stable when it rests on the ground or on
//! stable objects, its center of mass lies over the hull of its contact
//! intervals, and it does not interpenetrate another object. Platforms are
//! fixed in place.

use crate::catalog::{Category, Level, ObjectCatalog, OVERLAP_TOL};
use crate::codec::{drop_object, GridSpec};
use crate::error::Result;
use crate::lve::compute_n_birds;

pub const CONTACT_TOL: f64 = 0.02;

const TOUCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Reason {
    Interpenetration,
    Unsupported,
    ComOutsideSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offence {
    pub index: usize,
    pub reason: Reason,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilityReport {
    pub stable: bool,
    /// Sorted by object index, one entry per offending object.
    pub offenders: Vec<Offence>,
}

struct Body {
    x: f64,
    left: f64,
    right: f64,
    bottom: f64,
    top: f64,
    platform: bool,
    rolls: bool,
}

pub fn check_stability(catalog: &ObjectCatalog, level: &Level) -> Result<StabilityReport> {
    check_stability_on(catalog, level, GridSpec::default().ground_y)
}

pub fn check_stability_on(catalog: &ObjectCatalog, level: &Level, ground_y: f64) -> Result<StabilityReport> {
    let mut bodies = Vec::with_capacity(level.objects.len());
    for o in &level.objects {
        let e = catalog.entry(o.type_id)?;
        bodies.push(Body {
            x: o.x,
            left: o.x - e.width / 2.0,
            right: o.x + e.width / 2.0,
            bottom: o.y - e.height / 2.0,
            top: o.y + e.height / 2.0,
            platform: e.category == Category::Platform,
            rolls: e.rolls,
        });
    }
    let n = bodies.len();
    let mut reason: Vec<Option<Reason>> = vec![None; n];

    for i in 0..n {
        if bodies[i].platform {
            continue;
        }
        if bodies[i].bottom < ground_y - OVERLAP_TOL {
            reason[i] = Some(Reason::Interpenetration);
        }
        for j in i + 1..n {
            if bodies[j].platform {
                continue;
            }
            let (a, b) = (&bodies[i], &bodies[j]);
            let dx = a.right.min(b.right) - a.left.max(b.left);
            let dy = a.top.min(b.top) - a.bottom.max(b.bottom);
            if dx > OVERLAP_TOL && dy > OVERLAP_TOL {
                reason[i] = Some(Reason::Interpenetration);
                reason[j] = Some(Reason::Interpenetration);
            }
        }
    }

    // Supports sit strictly lower than what they carry, so visiting by
    // ascending bottom settles every support before its load.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| bodies[a].bottom.total_cmp(&bodies[b].bottom).then(a.cmp(&b)));
    let mut fallen = vec![false; n];
    for &i in &order {
        let body = &bodies[i];
        if body.platform {
            continue;
        }
        let mut contacts: Vec<(f64, f64)> = Vec::new();
        if (body.bottom - ground_y).abs() <= CONTACT_TOL {
            contacts.push((body.left, body.right));
        }
        let on_ground = !contacts.is_empty();
        for (j, s) in bodies.iter().enumerate() {
            if j == i || fallen[j] || (s.top - body.bottom).abs() > CONTACT_TOL {
                continue;
            }
            let lo = body.left.max(s.left);
            let hi = body.right.min(s.right);
            if hi - lo > TOUCH_TOL {
                contacts.push((lo, hi));
            }
        }
        let verdict = if contacts.is_empty() {
            Some(Reason::Unsupported)
        } else {
            let lo = contacts.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
            let hi = contacts.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            if body.x < lo - TOUCH_TOL || body.x > hi + TOUCH_TOL {
                Some(Reason::ComOutsideSupport)
            } else if body.rolls && !cradled(body.x, &contacts, on_ground) {
                Some(Reason::ComOutsideSupport)
            } else {
                None
            }
        };
        if let Some(r) = verdict {
            fallen[i] = true;
            reason[i] = Some(reason[i].map_or(r, |prev| prev.min(r)));
        }
    }

    let offenders: Vec<Offence> = reason
        .iter()
        .enumerate()
        .filter_map(|(index, r)| r.map(|reason| Offence { index, reason }))
        .collect();
    Ok(StabilityReport {
        stable: offenders.is_empty(),
        offenders,
    })
}

/// A round object stays put only between two supports, one on each side
/// of its center.
fn cradled(x: f64, contacts: &[(f64, f64)], on_ground: bool) -> bool {
    if on_ground {
        return false;
    }
    let left = contacts.iter().any(|c| (c.0 + c.1) / 2.0 < x - TOUCH_TOL);
    let right = contacts.iter().any(|c| (c.0 + c.1) / 2.0 > x + TOUCH_TOL);
    left && right
}

/// Drops each `(type_id, column)` in order using the decoder's placement rule.
pub fn settle(catalog: &ObjectCatalog, spec: &GridSpec, drops: &[(u16, usize)]) -> Result<Level> {
    let mut placed = Vec::with_capacity(drops.len());
    let mut order = Vec::with_capacity(drops.len());
    for &(type_id, col) in drops {
        let x = spec.ind2float(col)?;
        order.push(drop_object(catalog, spec, &mut placed, type_id, x)?);
    }
    let mut level = Level::new(order, 0);
    level.n_birds = compute_n_birds(catalog, &level);
    Ok(level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, CatalogEntry, GameObject, Material};

    fn tiny_catalog() -> ObjectCatalog {
        let mk = |id: u16, kind: &str, w: f64, h: f64, category, rolls| CatalogEntry {
            type_id: id,
            kind_name: kind.into(),
            material: Material::Wood,
            rotation: 0.0,
            width: w,
            height: h,
            category,
            rolls,
        };
        ObjectCatalog::new(vec![
            mk(1, "Narrow", 0.2, 0.2, Category::Block, false),
            mk(2, "Wide", 1.0, 0.2, Category::Block, false),
            mk(3, "Ball", 0.4, 0.4, Category::Block, true),
            mk(4, "Plat", 1.0, 0.2, Category::Platform, false),
        ])
        .unwrap()
    }

    fn at(type_id: u16, x: f64, y: f64) -> GameObject {
        GameObject { type_id, x, y, rotation: 0.0 }
    }

    const G: f64 = -3.5;

    #[test]
    fn empty_and_single() {
        let cat = tiny_catalog();
        assert!(check_stability(&cat, &Level::default()).unwrap().stable);
        let level = Level::new(vec![at(2, 0.0, G + 0.1)], 0);
        assert!(check_stability(&cat, &level).unwrap().stable);
    }

    #[test]
    fn floating_block_is_unsupported() {
        let cat = tiny_catalog();
        let level = Level::new(vec![at(2, 0.0, G + 0.1 + 0.5)], 0);
        let report = check_stability(&cat, &level).unwrap();
        assert!(!report.stable);
        assert_eq!(report.offenders, vec![Offence { index: 0, reason: Reason::Unsupported }]);
    }

    #[test]
    fn overhang_beyond_edge() {
        let cat = tiny_catalog();
        // support [-0.5, 0.5]; narrow block centred 0.3 past the right edge
        let level = Level::new(vec![at(2, 0.0, G + 0.1), at(1, 0.8, G + 0.3)], 0);
        let report = check_stability(&cat, &level).unwrap();
        // its footprint [0.7, 0.9] does not even touch the support
        assert_eq!(report.offenders[0].reason, Reason::Unsupported);

        // centre 0.55: footprint [0.45, 0.65] touches [0.45, 0.5], centre outside
        let level = Level::new(vec![at(2, 0.0, G + 0.1), at(1, 0.55, G + 0.3)], 0);
        let report = check_stability(&cat, &level).unwrap();
        assert_eq!(report.offenders, vec![Offence { index: 1, reason: Reason::ComOutsideSupport }]);

        // centre exactly on the edge is inside the closed hull
        let level = Level::new(vec![at(2, 0.0, G + 0.1), at(1, 0.5, G + 0.3)], 0);
        assert!(check_stability(&cat, &level).unwrap().stable);
    }

    #[test]
    fn bridge_uses_contact_hull() {
        let cat = tiny_catalog();
        let level = Level::new(vec![at(1, -0.4, G + 0.1), at(1, 0.4, G + 0.1), at(2, 0.0, G + 0.3)], 0);
        assert!(check_stability(&cat, &level).unwrap().stable);
    }

    #[test]
    fn interpenetration_flags_both() {
        let cat = tiny_catalog();
        let level = Level::new(vec![at(2, 0.0, G + 0.1), at(1, 0.1, G + 0.15)], 0);
        let report = check_stability(&cat, &level).unwrap();
        assert_eq!(report.offenders.len(), 2);
        assert!(report.offenders.iter().all(|o| o.reason == Reason::Interpenetration));
        // within tolerance is fine
        let level = Level::new(vec![at(2, 0.0, G + 0.1), at(1, 0.1, G + 0.295)], 0);
        assert!(check_stability(&cat, &level).unwrap().stable);
    }

    #[test]
    fn collapse_propagates_upward() {
        let cat = tiny_catalog();
        let level = Level::new(vec![at(1, 0.0, G + 0.5), at(1, 0.0, G + 0.7)], 0);
        let report = check_stability(&cat, &level).unwrap();
        assert_eq!(report.offenders.len(), 2);
    }

    #[test]
    fn platforms_are_fixed_and_carry_load() {
        let cat = tiny_catalog();
        let level = Level::new(vec![at(4, 0.0, 0.0), at(1, 0.2, 0.2)], 0);
        assert!(check_stability(&cat, &level).unwrap().stable);
    }

    #[test]
    fn balls_roll_unless_cradled() {
        let cat = tiny_catalog();
        let level = Level::new(vec![at(3, 0.0, G + 0.2)], 0);
        assert!(!check_stability(&cat, &level).unwrap().stable);
        let cradle = Level::new(vec![at(1, -0.15, G + 0.1), at(1, 0.15, G + 0.1), at(3, 0.0, G + 0.4)], 0);
        assert!(check_stability(&cat, &cradle).unwrap().stable);
    }

    #[test]
    fn permutation_does_not_change_verdict() {
        let cat = tiny_catalog();
        let objs = vec![at(2, 0.0, G + 0.1), at(1, 0.55, G + 0.3), at(1, -0.2, G + 0.3), at(1, 3.0, G + 1.0)];
        let base = check_stability(&cat, &Level::new(objs.clone(), 0)).unwrap();
        let mut rev = objs.clone();
        rev.reverse();
        let flipped = check_stability(&cat, &Level::new(rev, 0)).unwrap();
        let mut a: Vec<_> = base.offenders.iter().map(|o| (objs[o.index], o.reason)).map(|(g, r)| (g.x.to_bits(), r)).collect();
        let mut b: Vec<_> = flipped.offenders.iter().map(|o| (objs[objs.len() - 1 - o.index].x.to_bits(), o.reason)).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn settle_places_like_decode() {
        let cat = default_catalog();
        let s = GridSpec::default();
        let fat = cat.lookup("RectFat", Material::Wood, 0.0).unwrap();
        let small = cat.lookup("SquareSmall", Material::Stone, 0.0).unwrap();
        let one = settle(&cat, &s, &[(fat.type_id, 30)]).unwrap();
        assert!((one.objects[0].y - (s.ground_y + fat.height / 2.0)).abs() < 1e-12);
        let two = settle(&cat, &s, &[(fat.type_id, 30), (small.type_id, 30)]).unwrap();
        let gap = two.objects[1].y - two.objects[0].y;
        assert!((gap - (fat.height + small.height) / 2.0).abs() < 1e-12);
        assert!(check_stability(&cat, &two).unwrap().stable);
    }
}
