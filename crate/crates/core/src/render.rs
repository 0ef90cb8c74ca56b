//! SVG snapshot of a level: 100 px per world unit, y pointing up.

use std::fmt::Write as _;

use crate::catalog::{Category, Level, Material, ObjectCatalog};
use crate::codec::GridSpec;
use crate::error::Result;

pub const PX_PER_UNIT: f64 = 100.0;

const X_MIN: f64 = -5.0;
const X_MAX: f64 = 5.0;
const MIN_TOP: f64 = 4.0;
const MARGIN: f64 = 0.5;

fn fill(material: Material, category: Category) -> &'static str {
    match (category, material) {
        (Category::Pig, _) => "#6fbf3f",
        (Category::Tnt, _) => "#d33c2c",
        (Category::Platform, _) => "url(#hatch)",
        (_, Material::Wood) => "#c8924a",
        (_, Material::Stone) => "#8c8c8c",
        (_, Material::Ice) => "#9fd8f0",
        (_, Material::None) => "#cccccc",
    }
}

pub fn render_svg(catalog: &ObjectCatalog, spec: &GridSpec, level: &Level) -> Result<String> {
    let mut top = MIN_TOP;
    for o in &level.objects {
        let e = catalog.entry(o.type_id)?;
        top = top.max(o.y + e.height / 2.0 + MARGIN);
    }
    let bottom = spec.ground_y - MARGIN;
    let px = |x: f64| (x - X_MIN) * PX_PER_UNIT;
    let py = |y: f64| (top - y) * PX_PER_UNIT;
    let width = (X_MAX - X_MIN) * PX_PER_UNIT;
    let height = (top - bottom) * PX_PER_UNIT;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    out.push_str(concat!(
        r#"<defs><pattern id="hatch" width="8" height="8" patternUnits="userSpaceOnUse" patternTransform="rotate(45)">"#,
        r##"<rect width="8" height="8" fill="#555555"/><line x1="0" y1="0" x2="0" y2="8" stroke="#222222" stroke-width="3"/>"##,
        "</pattern></defs>\n"
    ));
    let _ = writeln!(out, r##"<rect width="{width:.0}" height="{height:.0}" fill="#f4f8ff"/>"##);
    let gy = py(spec.ground_y);
    let _ = writeln!(
        out,
        r##"<line class="ground" x1="0" y1="{gy:.1}" x2="{width:.0}" y2="{gy:.1}" stroke="#3b2a1a" stroke-width="3"/>"##
    );
    for o in &level.objects {
        let e = catalog.entry(o.type_id)?;
        let color = fill(e.material, e.category);
        if e.category == Category::Pig || e.rolls {
            let r = e.width.min(e.height) / 2.0 * PX_PER_UNIT;
            let _ = writeln!(
                out,
                r##"<circle cx="{:.1}" cy="{:.1}" r="{r:.1}" fill="{color}" stroke="#222222"><title>{}</title></circle>"##,
                px(o.x),
                py(o.y),
                e.kind_name
            );
        } else {
            let _ = writeln!(
                out,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{color}" stroke="#222222"><title>{} {}</title></rect>"##,
                px(o.x - e.width / 2.0),
                py(o.y + e.height / 2.0),
                e.width * PX_PER_UNIT,
                e.height * PX_PER_UNIT,
                e.kind_name,
                e.material
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{default_catalog, GameObject};

    #[test]
    fn empty_level_has_only_ground() {
        let svg = render_svg(&default_catalog(), &GridSpec::default(), &Level::default()).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("class=\"ground\"").count(), 1);
        assert_eq!(svg.matches("<circle").count(), 0);
        assert_eq!(svg.matches("<title>").count(), 0);
    }

    #[test]
    fn shapes_per_object() {
        let cat = default_catalog();
        let pig = cat.of_category(Category::Pig).next().unwrap();
        let plat = cat.of_category(Category::Platform).next().unwrap();
        let block = cat.lookup("RectFat", Material::Stone, 0.0).unwrap();
        let level = Level::new(
            vec![
                GameObject { type_id: block.type_id, x: 0.0, y: -3.5 + block.height / 2.0, rotation: 0.0 },
                GameObject { type_id: pig.type_id, x: 2.0, y: -3.5 + pig.height / 2.0, rotation: 0.0 },
                GameObject { type_id: plat.type_id, x: -2.0, y: 1.0, rotation: 0.0 },
            ],
            1,
        );
        let svg = render_svg(&cat, &GridSpec::default(), &level).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<rect x=").count(), 2);
        assert!(svg.contains("url(#hatch)"));
        assert!(svg.contains("#8c8c8c"));
        // 0.85 wide block at 100 px per unit
        assert!(svg.contains(r#"width="85.0""#));
    }
}
