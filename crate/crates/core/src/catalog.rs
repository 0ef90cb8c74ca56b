//! Object-type catalog and the in-memory level representation.
//!
//! Every object in a level refers to a catalog entry by `type_id`. Index 0 is
//! never a catalog entry: it is the "Space" symbol of the level matrix.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Matrix symbol for an empty cell.
pub const SPACE: u16 = 0;

/// Maximum tolerated interpenetration between two non-platform objects.
pub const OVERLAP_TOL: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Material {
    Wood,
    Stone,
    Ice,
    None,
}

impl Material {
    pub fn as_str(self) -> &'static str {
        match self {
            Material::Wood => "wood",
            Material::Stone => "stone",
            Material::Ice => "ice",
            Material::None => "none",
        }
    }
}

impl fmt::Display for Material {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Material {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wood" => Ok(Material::Wood),
            "stone" => Ok(Material::Stone),
            "ice" => Ok(Material::Ice),
            "none" | "" => Ok(Material::None),
            other => Err(format!("unknown material {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Block,
    Pig,
    Tnt,
    Platform,
}

impl Category {
    /// XML element name used for this category.
    pub fn element(self) -> &'static str {
        match self {
            Category::Block => "Block",
            Category::Pig => "Pig",
            Category::Tnt => "TNT",
            Category::Platform => "Platform",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.element())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "Block" | "block" => Ok(Category::Block),
            "Pig" | "pig" => Ok(Category::Pig),
            "TNT" | "Tnt" | "tnt" => Ok(Category::Tnt),
            "Platform" | "platform" => Ok(Category::Platform),
            other => Err(format!("unknown category {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub type_id: u16,
    pub kind_name: String,
    pub material: Material,
    /// Degrees.
    pub rotation: f64,
    /// Bounding-box extents after rotation.
    pub width: f64,
    pub height: f64,
    pub category: Category,
    /// Round objects roll off a single flat support.
    pub rolls: bool,
}

impl CatalogEntry {
    pub fn is_platform(&self) -> bool {
        self.category == Category::Platform
    }
}

/// Rotation lookup key: millidegrees, so that 45 and 45.0000001 collide.
fn rotation_key(rotation: f64) -> i64 {
    (rotation * 1000.0).round() as i64
}

#[derive(Debug, Clone)]
pub struct ObjectCatalog {
    entries: Vec<CatalogEntry>,
    by_key: HashMap<(String, Material, i64), u16>,
}

impl ObjectCatalog {
    /// Builds a catalog, checking that ids are unique and run 1..=n.
    pub fn new(mut entries: Vec<CatalogEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        entries.sort_by_key(|e| e.type_id);
        for pair in entries.windows(2) {
            if pair[0].type_id == pair[1].type_id {
                return Err(Error::DuplicateTypeId(pair[0].type_id));
            }
        }
        for (i, e) in entries.iter().enumerate() {
            let expected = (i + 1) as u16;
            if e.type_id != expected {
                return Err(Error::NonContiguousIds(expected));
            }
        }
        let mut by_key = HashMap::with_capacity(entries.len());
        for e in &entries {
            let key = (e.kind_name.clone(), e.material, rotation_key(e.rotation));
            if by_key.insert(key, e.type_id).is_some() {
                return Err(Error::Config(format!(
                    "catalog entries share (kind, material, rotation) = ({}, {}, {})",
                    e.kind_name, e.material, e.rotation
                )));
            }
        }
        Ok(ObjectCatalog { entries, by_key })
    }

    pub fn n_types(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn entry(&self, type_id: u16) -> Result<&CatalogEntry> {
        if type_id == SPACE {
            return Err(Error::UnknownTypeId(type_id));
        }
        self.entries
            .get(type_id as usize - 1)
            .ok_or(Error::UnknownTypeId(type_id))
    }

    pub fn lookup(&self, kind_name: &str, material: Material, rotation: f64) -> Option<&CatalogEntry> {
        self.by_key
            .get(&(kind_name.to_string(), material, rotation_key(rotation)))
            .map(|&id| &self.entries[id as usize - 1])
    }

    /// All entries sharing a kind and material, in id order.
    pub fn variants<'a>(
        &'a self,
        kind_name: &'a str,
        material: Material,
    ) -> impl Iterator<Item = &'a CatalogEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.kind_name == kind_name && e.material == material)
    }

    pub fn of_category(&self, category: Category) -> impl Iterator<Item = &CatalogEntry> + '_ {
        self.entries.iter().filter(move |e| e.category == category)
    }

    /// Parses the `;`-separated catalog text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            entries.push(parse_entry(line).map_err(|msg| Error::CatalogParse { line: line_no, msg })?);
        }
        Self::new(entries)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# type_id;kind_name;material;rotation;width;height;category[;rolls]\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{};{};{};{};{};{};{}",
                e.type_id, e.kind_name, e.material, e.rotation, e.width, e.height, e.category
            ));
            if e.rolls {
                out.push_str(";rolls");
            }
            out.push('\n');
        }
        out
    }
}

fn parse_entry(line: &str) -> std::result::Result<CatalogEntry, String> {
    let fields: Vec<&str> = line.split(';').map(str::trim).collect();
    if fields.len() != 7 && fields.len() != 8 {
        return Err(format!("expected 7 fields, found {}", fields.len()));
    }
    let type_id: u16 = fields[0]
        .parse()
        .map_err(|_| format!("bad type_id {:?}", fields[0]))?;
    if type_id == 0 {
        return Err("type_id 0 is reserved for Space".into());
    }
    let kind_name = fields[1].to_string();
    if kind_name.is_empty() {
        return Err("empty kind_name".into());
    }
    let material: Material = fields[2].parse()?;
    let number = |name: &str, s: &str| -> std::result::Result<f64, String> {
        let v: f64 = s.parse().map_err(|_| format!("bad {name} {s:?}"))?;
        if !v.is_finite() {
            return Err(format!("{name} must be finite"));
        }
        Ok(v)
    };
    let rotation = number("rotation", fields[3])?;
    let width = number("width", fields[4])?;
    let height = number("height", fields[5])?;
    if width <= 0.0 || height <= 0.0 {
        return Err("width and height must be positive".into());
    }
    let category: Category = fields[6].parse()?;
    let rolls = match fields.get(7) {
        None => kind_name.starts_with("Circle"),
        Some(&"rolls") | Some(&"true") => true,
        Some(&"") | Some(&"false") => false,
        Some(other) => return Err(format!("bad rolls flag {other:?}")),
    };
    Ok(CatalogEntry {
        type_id,
        kind_name,
        material,
        rotation,
        width,
        height,
        category,
        rolls,
    })
}

pub fn load_catalog(path: impl AsRef<Path>) -> Result<ObjectCatalog> {
    let text = std::fs::read_to_string(path)?;
    ObjectCatalog::parse(&text)
}

/// Block shapes with their unrotated (width, height) and the distinct
/// rotations kept for each.
const BLOCK_SHAPES: &[(&str, f64, f64, &[f64])] = &[
    ("SquareHole", 0.84, 0.84, &[0.0]),
    ("RectFat", 0.85, 0.43, &[0.0, 90.0]),
    ("SquareSmall", 0.43, 0.43, &[0.0]),
    ("SquareTiny", 0.22, 0.22, &[0.0]),
    ("RectTiny", 0.43, 0.22, &[0.0, 90.0]),
    ("RectSmall", 0.85, 0.22, &[0.0, 45.0, 90.0]),
    ("RectMedium", 1.68, 0.22, &[0.0, 45.0, 90.0]),
    ("RectBig", 2.06, 0.22, &[0.0, 90.0]),
    ("Triangle", 0.82, 0.82, &[0.0, 90.0]),
    ("Circle", 0.8, 0.8, &[0.0]),
    ("CircleSmall", 0.45, 0.45, &[0.0]),
];

fn rotated_extent(w: f64, h: f64, rotation: f64) -> (f64, f64) {
    let r = rotation.to_radians();
    let (s, c) = (r.sin().abs(), r.cos().abs());
    let rw = w * c + h * s;
    let rh = w * s + h * c;
    // snap away trig noise so 90-degree entries keep exact swapped extents
    let snap = |v: f64| (v * 1e9).round() / 1e9;
    (snap(rw), snap(rh))
}

/// The built-in 61-entry catalog: 57 block entries (19 shape/rotation
/// combinations in wood, stone and ice), one pig, one TNT and two platforms.
pub fn default_catalog() -> ObjectCatalog {
    let mut entries = Vec::with_capacity(61);
    let mut next_id = 1u16;
    let mut push = |entries: &mut Vec<CatalogEntry>,
                    kind: &str,
                    material: Material,
                    rotation: f64,
                    (width, height): (f64, f64),
                    category: Category,
                    rolls: bool| {
        entries.push(CatalogEntry {
            type_id: next_id,
            kind_name: kind.to_string(),
            material,
            rotation,
            width,
            height,
            category,
            rolls,
        });
        next_id += 1;
    };
    for material in [Material::Wood, Material::Stone, Material::Ice] {
        for &(kind, w, h, rotations) in BLOCK_SHAPES {
            for &rotation in rotations {
                push(
                    &mut entries,
                    kind,
                    material,
                    rotation,
                    rotated_extent(w, h, rotation),
                    Category::Block,
                    kind.starts_with("Circle"),
                );
            }
        }
    }
    push(&mut entries, "BasicSmall", Material::None, 0.0, (0.47, 0.45), Category::Pig, false);
    push(&mut entries, "TNT", Material::None, 0.0, (0.55, 0.55), Category::Tnt, false);
    push(&mut entries, "Platform", Material::None, 0.0, (0.62, 0.62), Category::Platform, false);
    push(&mut entries, "PlatformWide", Material::None, 0.0, (1.24, 0.62), Category::Platform, false);
    ObjectCatalog::new(entries).expect("built-in catalog is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GameObject {
    pub type_id: u16,
    /// Bounding-box center.
    pub x: f64,
    pub y: f64,
    /// Degrees.
    pub rotation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Level {
    pub objects: Vec<GameObject>,
    pub n_birds: u32,
    /// Unrecognised top-level XML elements (camera, slingshot, ...) kept
    /// verbatim for round-tripping.
    pub extras: Vec<String>,
}

impl Level {
    pub fn new(objects: Vec<GameObject>, n_birds: u32) -> Self {
        Level {
            objects,
            n_birds,
            extras: Vec::new(),
        }
    }

    pub fn count(&self, catalog: &ObjectCatalog, category: Category) -> usize {
        self.objects
            .iter()
            .filter(|o| catalog.entry(o.type_id).map(|e| e.category == category).unwrap_or(false))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub left: f64,
    pub right: f64,
    pub height: f64,
}

impl Footprint {
    /// Length of the horizontal overlap with `other` (0 when disjoint or touching).
    pub fn overlap(&self, other: &Footprint) -> f64 {
        (self.right.min(other.right) - self.left.max(other.left)).max(0.0)
    }
}

pub fn footprint(catalog: &ObjectCatalog, obj: &GameObject) -> Result<Footprint> {
    let e = catalog.entry(obj.type_id)?;
    Ok(Footprint {
        left: obj.x - e.width / 2.0,
        right: obj.x + e.width / 2.0,
        height: e.height,
    })
}
