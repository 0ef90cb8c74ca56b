//! Reading and writing level XML documents.
//!
//! Emitted documents are UTF-8:
//!
//! ```xml
//! <Level>
//!   <Birds><Bird type="BirdRed"/></Birds>
//!   <GameObjects>
//!     <Block type="RectFat" material="wood" x="0.0000" y="-3.2850" rotation="0.0000"/>
//!     <Pig type="BasicSmall" material="" x="0.0000" y="-2.8450" rotation="0.0000"/>
//!   </GameObjects>
//! </Level>
//! ```
//!
//! Any other child of `<Level>` (camera, slingshot, ...) is kept verbatim in
//! [`Level::extras`].

use quick_xml::escape::escape;
use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use crate::catalog::{Category, GameObject, Level, Material, ObjectCatalog};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLevel {
    pub level: Level,
    pub warnings: Vec<String>,
}

/// Parses a level, logging any rotation snaps as warnings.
pub fn parse_level(catalog: &ObjectCatalog, bytes: &[u8]) -> Result<Level> {
    let parsed = parse_level_with_warnings(catalog, bytes)?;
    for w in &parsed.warnings {
        log::warn!("{w}");
    }
    Ok(parsed.level)
}

pub fn parse_level_with_warnings(catalog: &ObjectCatalog, bytes: &[u8]) -> Result<ParsedLevel> {
    let mut parser = Parser {
        reader: Reader::from_reader(bytes),
        bytes,
        buf: Vec::new(),
    };
    parser.reader.config_mut().trim_text(true);
    parser.document(catalog)
}

struct Parser<'a> {
    reader: Reader<&'a [u8]>,
    bytes: &'a [u8],
    buf: Vec<u8>,
}

enum Node {
    Start(Vec<u8>, String),
    Empty(Vec<u8>, String),
    End,
    Eof,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Xml {
            position: self.reader.buffer_position() as u64,
            msg: msg.into(),
        }
    }

    /// Next structural event; text, comments and declarations are skipped.
    fn next(&mut self) -> Result<Node> {
        loop {
            self.buf.clear();
            let event = self
                .reader
                .read_event_into(&mut self.buf)
                .map_err(|e| Error::Xml {
                    position: self.reader.error_position() as u64,
                    msg: e.to_string(),
                })?;
            return Ok(match event {
                Event::Start(e) => Node::Start(e.name().as_ref().to_vec(), tag_source(&e)?),
                Event::Empty(e) => Node::Empty(e.name().as_ref().to_vec(), tag_source(&e)?),
                Event::End(_) => Node::End,
                Event::Eof => Node::Eof,
                Event::Text(t) => {
                    if t.iter().all(u8::is_ascii_whitespace) {
                        continue;
                    }
                    return Err(self.err("unexpected text content"));
                }
                Event::CData(_) => return Err(self.err("unexpected CDATA")),
                _ => continue,
            });
        }
    }

    fn document(&mut self, catalog: &ObjectCatalog) -> Result<ParsedLevel> {
        let root = loop {
            match self.next()? {
                Node::Start(name, _) => break name,
                Node::Empty(name, _) if name == b"Level" => {
                    return Err(self.err("<Level> has no <Birds> or <GameObjects>"));
                }
                Node::Empty(name, _) => return Err(self.err(format!("unexpected root <{}>", lossy(&name)))),
                Node::End => return Err(self.err("unexpected closing tag")),
                Node::Eof => return Err(self.err("document has no <Level> root")),
            }
        };
        if root != b"Level" {
            return Err(self.err(format!("expected <Level> root, found <{}>", lossy(&root))));
        }

        let mut level = Level::default();
        let mut warnings = Vec::new();
        let (mut saw_birds, mut saw_objects) = (false, false);
        loop {
            match self.next()? {
                Node::Start(name, src) => match name.as_slice() {
                    b"Birds" => {
                        saw_birds = true;
                        level.n_birds += self.birds()?;
                    }
                    b"GameObjects" => {
                        saw_objects = true;
                        self.game_objects(catalog, &mut level, &mut warnings)?;
                    }
                    _ => {
                        let raw = self.capture(&name, &src)?;
                        level.extras.push(raw);
                    }
                },
                Node::Empty(name, src) => match name.as_slice() {
                    b"Birds" => saw_birds = true,
                    b"GameObjects" => saw_objects = true,
                    _ => level.extras.push(format!("<{src}/>")),
                },
                Node::End => break,
                Node::Eof => return Err(self.err("unterminated <Level>")),
            }
        }
        if !saw_birds {
            return Err(self.err("missing <Birds>"));
        }
        if !saw_objects {
            return Err(self.err("missing <GameObjects>"));
        }
        // anything after the root must be whitespace / comments
        if !matches!(self.next()?, Node::Eof) {
            return Err(self.err("content after </Level>"));
        }
        Ok(ParsedLevel { level, warnings })
    }

    fn capture(&mut self, name: &[u8], src: &str) -> Result<String> {
        let span = self
            .reader
            .read_to_end_into(quick_xml::name::QName(name), &mut self.buf)
            .map_err(|e| Error::Xml {
                position: self.reader.error_position() as u64,
                msg: e.to_string(),
            })?;
        let inner = self
            .bytes
            .get(span.start as usize..span.end as usize)
            .ok_or_else(|| self.err("element span out of range"))?;
        let inner = std::str::from_utf8(inner).map_err(|_| self.err("element is not UTF-8"))?;
        Ok(format!("<{src}>{inner}</{}>", lossy(name)))
    }

    fn birds(&mut self) -> Result<u32> {
        let mut n = 0;
        loop {
            match self.next()? {
                Node::Empty(name, _) if name == b"Bird" => n += 1,
                Node::Start(name, src) if name == b"Bird" => {
                    n += 1;
                    self.capture(&name, &src)?;
                }
                Node::Start(name, _) | Node::Empty(name, _) => {
                    return Err(self.err(format!("unexpected <{}> inside <Birds>", lossy(&name))));
                }
                Node::End => return Ok(n),
                Node::Eof => return Err(self.err("unterminated <Birds>")),
            }
        }
    }

    fn game_objects(
        &mut self,
        catalog: &ObjectCatalog,
        level: &mut Level,
        warnings: &mut Vec<String>,
    ) -> Result<()> {
        loop {
            let (name, src, has_body) = match self.next()? {
                Node::Empty(name, src) => (name, src, false),
                Node::Start(name, src) => (name, src, true),
                Node::End => return Ok(()),
                Node::Eof => return Err(self.err("unterminated <GameObjects>")),
            };
            let category = match name.as_slice() {
                b"Block" => Some(Category::Block),
                b"Pig" => Some(Category::Pig),
                b"TNT" => Some(Category::Tnt),
                b"Platform" => Some(Category::Platform),
                _ => None,
            };
            let attrs = parse_attributes(&src).map_err(|m| self.err(m))?;
            if has_body {
                self.capture(&name, &src)?;
            }
            match category {
                Some(category) => {
                    let obj = object_from_attrs(catalog, category, &attrs, warnings)?;
                    level.objects.push(obj);
                }
                None => warnings.push(format!("ignored unknown game object <{}>", lossy(&name))),
            }
        }
    }
}

fn lossy(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn tag_source(e: &BytesStart<'_>) -> Result<String> {
    std::str::from_utf8(e.as_ref())
        .map(str::to_string)
        .map_err(|_| Error::Xml {
            position: 0,
            msg: "tag is not UTF-8".into(),
        })
}

/// Attributes of a tag given its source text (name followed by attributes).
fn parse_attributes(src: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let start = BytesStart::from_content(src, src.find(char::is_whitespace).unwrap_or(src.len()));
    let mut out = Vec::new();
    for attr in start.attributes() {
        let attr = attr.map_err(|e| e.to_string())?;
        let key = std::str::from_utf8(attr.key.as_ref())
            .map_err(|_| "attribute name is not UTF-8".to_string())?
            .to_string();
        let value = attr.unescape_value().map_err(|e| e.to_string())?.into_owned();
        out.push((key, value));
    }
    Ok(out)
}

fn attr<'a>(attrs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn number(attrs: &[(String, String)], key: &str, default: Option<f64>) -> Result<f64> {
    match attr(attrs, key) {
        None => default.ok_or_else(|| Error::Xml {
            position: 0,
            msg: format!("missing attribute {key}"),
        }),
        Some(raw) => {
            let v: f64 = raw.trim().parse().map_err(|_| Error::NonFinite {
                attribute: key.to_string(),
                value: raw.to_string(),
            })?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    attribute: key.to_string(),
                    value: raw.to_string(),
                })
            }
        }
    }
}

/// Angular distance between two rotations of a centrally symmetric box.
fn rotation_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn object_from_attrs(
    catalog: &ObjectCatalog,
    category: Category,
    attrs: &[(String, String)],
    warnings: &mut Vec<String>,
) -> Result<GameObject> {
    let kind = attr(attrs, "type").unwrap_or("").trim();
    let material_raw = attr(attrs, "material").unwrap_or("").trim();
    let x = number(attrs, "x", None)?;
    let y = number(attrs, "y", None)?;
    let rotation = number(attrs, "rotation", Some(0.0))?;

    let unknown = || Error::UnknownObject {
        element: category.element().to_string(),
        kind: kind.to_string(),
        material: material_raw.to_string(),
    };
    let candidates: Vec<_> = match category {
        Category::Block => {
            let material: Material = material_raw.parse().map_err(|_| unknown())?;
            catalog.variants(kind, material).filter(|e| e.category == category).collect()
        }
        _ => {
            let same: Vec<_> = catalog.of_category(category).collect();
            let named: Vec<_> = same.iter().copied().filter(|e| e.kind_name == kind).collect();
            if !named.is_empty() {
                named
            } else if kind.is_empty() || category == Category::Tnt {
                // untyped pig/TNT elements fall back to the first entry of the category
                same.into_iter().take(1).collect()
            } else {
                Vec::new()
            }
        }
    };
    let best = candidates
        .iter()
        .min_by(|a, b| {
            rotation_distance(rotation, a.rotation)
                .partial_cmp(&rotation_distance(rotation, b.rotation))
                .expect("finite rotations")
        })
        .ok_or_else(unknown)?;
    if rotation_distance(rotation, best.rotation) > 1e-6 {
        warnings.push(format!(
            "{} {kind}: rotation {rotation} snapped to {}",
            category.element(),
            best.rotation
        ));
    }
    Ok(GameObject {
        type_id: best.type_id,
        x,
        y,
        rotation: best.rotation,
    })
}

pub fn write_level(catalog: &ObjectCatalog, level: &Level) -> Result<Vec<u8>> {
    let mut out = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<Level>\n");
    for extra in &level.extras {
        out.push_str("  ");
        out.push_str(extra);
        out.push('\n');
    }
    if level.n_birds == 0 {
        out.push_str("  <Birds/>\n");
    } else {
        out.push_str("  <Birds>\n");
        for _ in 0..level.n_birds {
            out.push_str("    <Bird type=\"BirdRed\"/>\n");
        }
        out.push_str("  </Birds>\n");
    }
    out.push_str("  <GameObjects>\n");
    for obj in &level.objects {
        let e = catalog.entry(obj.type_id)?;
        let material = if e.category == Category::Block {
            e.material.as_str()
        } else {
            ""
        };
        out.push_str(&format!(
            "    <{} type=\"{}\" material=\"{}\" x=\"{:.4}\" y=\"{:.4}\" rotation=\"{:.4}\"/>\n",
            e.category.element(),
            escape(e.kind_name.as_str()),
            material,
            obj.x,
            obj.y,
            e.rotation
        ));
    }
    out.push_str("  </GameObjects>\n</Level>\n");
    Ok(out.into_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::default_catalog;

    #[test]
    fn empty_level_one_bird() {
        let cat = default_catalog();
        let doc = br#"<Level><Birds><Bird type="BirdRed"/></Birds><GameObjects></GameObjects></Level>"#;
        let level = parse_level(&cat, doc).unwrap();
        assert!(level.objects.is_empty());
        assert_eq!(level.n_birds, 1);
    }

    #[test]
    fn single_block() {
        let cat = default_catalog();
        let doc = br#"<?xml version="1.0" encoding="utf-8"?>
<Level width="2">
  <Camera x="0" y="2" minWidth="20" maxWidth="30"/>
  <Birds><Bird type="BirdRed"/><Bird type="BirdBlue"/></Birds>
  <Slingshot x="-8" y="-2.5"/>
  <GameObjects>
    <Block type="RectFat" material="wood" x="0" y="-3.25" rotation="0"/>
  </GameObjects>
</Level>"#;
        let level = parse_level(&cat, doc).unwrap();
        let expected = cat.lookup("RectFat", Material::Wood, 0.0).unwrap().type_id;
        assert_eq!(level.objects, vec![GameObject { type_id: expected, x: 0.0, y: -3.25, rotation: 0.0 }]);
        assert_eq!(level.n_birds, 2);
        assert_eq!(level.extras.len(), 2);
    }

    #[test]
    fn rotation_snaps_to_nearest() {
        let cat = default_catalog();
        let doc = br#"<Level><Birds/><GameObjects><Block type="RectSmall" material="ice" x="1" y="2" rotation="37"/></GameObjects></Level>"#;
        let parsed = parse_level_with_warnings(&cat, doc).unwrap();
        assert_eq!(parsed.level.objects[0].rotation, 45.0);
        assert_eq!(parsed.warnings.len(), 1);
        // hand-enumerated midpoints: below 22.5 -> 0, 22.5..67.5 -> 45, above -> 90
        for (given, want) in [(0.0, 0.0), (22.4, 0.0), (22.6, 45.0), (67.4, 45.0), (67.6, 90.0), (170.0, 0.0), (-90.0, 90.0)] {
            let doc = format!(
                r#"<Level><Birds/><GameObjects><Block type="RectSmall" material="ice" x="1" y="2" rotation="{given}"/></GameObjects></Level>"#
            );
            let level = parse_level(&cat, doc.as_bytes()).unwrap();
            assert_eq!(level.objects[0].rotation, want, "rotation {given}");
        }
    }

    #[test]
    fn unknown_kind_and_bad_numbers() {
        let cat = default_catalog();
        let doc = br#"<Level><Birds/><GameObjects><Block type="Banana" material="wood" x="1" y="2"/></GameObjects></Level>"#;
        assert!(matches!(parse_level(&cat, doc), Err(Error::UnknownObject { .. })));
        let doc = br#"<Level><Birds/><GameObjects><Block type="RectFat" material="wood" x="NaN" y="2"/></GameObjects></Level>"#;
        assert!(matches!(parse_level(&cat, doc), Err(Error::NonFinite { .. })));
        let doc = br#"<Level><Birds/><GameObjects><Block type="RectFat" material="wood" x="inf" y="2"/></GameObjects></Level>"#;
        assert!(matches!(parse_level(&cat, doc), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn malformed_documents() {
        let cat = default_catalog();
        for doc in [
            &b""[..],
            b"<Level>",
            b"<Level><Birds/></Level>",
            b"<Other/>",
            b"<Level><Birds/><GameObjects></Birds></Level>",
            b"\xff\xfe<\x00L\x00",
        ] {
            assert!(parse_level(&cat, doc).is_err(), "{:?}", String::from_utf8_lossy(doc));
        }
    }

    #[test]
    fn write_empty_and_platform() {
        let cat = default_catalog();
        let text = String::from_utf8(write_level(&cat, &Level::default()).unwrap()).unwrap();
        assert!(text.contains("<Birds/>"));
        assert!(text.contains("<GameObjects>\n  </GameObjects>"));

        let platform = cat.lookup("Platform", Material::None, 0.0).unwrap().type_id;
        let level = Level::new(vec![GameObject { type_id: platform, x: 1.0, y: 0.5, rotation: 0.0 }], 0);
        let text = String::from_utf8(write_level(&cat, &level).unwrap()).unwrap();
        assert!(text.contains(r#"<Platform type="Platform" material="" x="1.0000" y="0.5000""#));
        assert_eq!(parse_level(&cat, text.as_bytes()).unwrap(), level);
    }

    #[test]
    fn extras_survive_round_trip() {
        let cat = default_catalog();
        let doc = br#"<Level><Camera x="0"><Inner a="1"/></Camera><Birds/><GameObjects/></Level>"#;
        let level = parse_level(&cat, doc).unwrap();
        let again = parse_level(&cat, &write_level(&cat, &level).unwrap()).unwrap();
        assert_eq!(level, again);
        assert_eq!(again.extras, vec![r#"<Camera x="0"><Inner a="1"/></Camera>"#.to_string()]);
    }

    #[test]
    fn write_rejects_unknown_type() {
        let cat = default_catalog();
        let level = Level::new(vec![GameObject { type_id: 99, x: 0.0, y: 0.0, rotation: 0.0 }], 0);
        assert!(write_level(&cat, &level).is_err());
    }
}
