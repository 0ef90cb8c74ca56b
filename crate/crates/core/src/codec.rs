//! Sequential drop encoding of levels.
//!
//! A level becomes a `MAX_ROW x MAX_COL` matrix: each row is one "drop
//! stratum", each column a discretised horizontal position, and each cell
//! the type id of the object dropped there (0 for nothing). Decoding drops
//! the objects row by row, left to right, onto whatever is already placed.

use std::fmt;

use crate::catalog::{CatalogEntry, Category, GameObject, Level, ObjectCatalog, SPACE};
use crate::error::{Error, Result};
use crate::lve::compute_n_birds;

pub const MAX_ROW: usize = 30;
pub const MAX_COL: usize = 94;

/// Horizontal overlaps at or below this length count as touching.
const TOUCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub x_min: f64,
    pub cell_width: f64,
    pub ground_y: f64,
    pub eps: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            x_min: -4.7,
            cell_width: 0.1,
            ground_y: -3.5,
            eps: 0.1,
        }
    }
}

impl GridSpec {
    pub fn float2ind(&self, x: f64) -> usize {
        let idx = ((x - self.x_min) / self.cell_width).round_ties_even();
        if idx.is_nan() || idx < 0.0 {
            0
        } else {
            (idx as usize).min(MAX_COL - 1)
        }
    }

    pub fn ind2float(&self, col: usize) -> Result<f64> {
        if col >= MAX_COL {
            return Err(Error::ColumnOutOfRange { col, max_col: MAX_COL });
        }
        Ok(self.x_min + col as f64 * self.cell_width)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LevelMatrix {
    cells: Vec<u16>,
}

impl Default for LevelMatrix {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for LevelMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let used = self.used_rows();
        writeln!(f, "LevelMatrix ({used} rows used)")?;
        for r in (0..used).rev() {
            let line: String = self
                .row(r)
                .iter()
                .map(|&c| if c == SPACE { '.' } else { '#' })
                .collect();
            writeln!(f, "{r:2} {line}")?;
        }
        Ok(())
    }
}

impl LevelMatrix {
    pub fn new() -> Self {
        LevelMatrix {
            cells: vec![SPACE; MAX_ROW * MAX_COL],
        }
    }

    pub fn from_rows<R: AsRef<[u16]>>(rows: &[R]) -> Result<Self> {
        if rows.len() != MAX_ROW {
            return Err(Error::DimensionMismatch {
                expected: MAX_ROW,
                got: rows.len(),
            });
        }
        let mut cells = Vec::with_capacity(MAX_ROW * MAX_COL);
        for r in rows {
            let r = r.as_ref();
            if r.len() != MAX_COL {
                return Err(Error::DimensionMismatch {
                    expected: MAX_COL,
                    got: r.len(),
                });
            }
            cells.extend_from_slice(r);
        }
        Ok(LevelMatrix { cells })
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.cells[row * MAX_COL + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: u16) {
        self.cells[row * MAX_COL + col] = value;
    }

    pub fn row(&self, row: usize) -> &[u16] {
        &self.cells[row * MAX_COL..(row + 1) * MAX_COL]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, u16> {
        self.cells.chunks_exact(MAX_COL)
    }

    pub fn cells(&self) -> &[u16] {
        &self.cells
    }

    pub fn nonzero(&self) -> usize {
        self.cells.iter().filter(|&&c| c != SPACE).count()
    }

    /// One past the highest row holding an object.
    pub fn used_rows(&self) -> usize {
        self.rows()
            .rposition(|r| r.iter().any(|&c| c != SPACE))
            .map_or(0, |r| r + 1)
    }

    /// Text form: 30 lines of 94 comma-separated ids.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(MAX_ROW * MAX_COL * 3);
        for row in self.rows() {
            let line: Vec<String> = row.iter().map(u16::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() != MAX_ROW {
            return Err(Error::format(
                "level matrix",
                format!("expected {MAX_ROW} lines, found {}", lines.len()),
            ));
        }
        let mut rows = Vec::with_capacity(MAX_ROW);
        for (i, line) in lines.iter().enumerate() {
            let row: std::result::Result<Vec<u16>, _> =
                line.split(',').map(|v| v.trim().parse::<u16>()).collect();
            let row = row.map_err(|e| Error::format("level matrix", format!("line {}: {e}", i + 1)))?;
            if row.len() != MAX_COL {
                return Err(Error::format(
                    "level matrix",
                    format!("line {}: expected {MAX_COL} values, found {}", i + 1, row.len()),
                ));
            }
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EncodeOptions {
    /// Overwrite occupied cells instead of failing with `CellCollision`.
    pub overwrite: bool,
}

pub fn encode(catalog: &ObjectCatalog, spec: &GridSpec, level: &Level) -> Result<LevelMatrix> {
    encode_with(catalog, spec, level, EncodeOptions::default())
}

/// Objects are visited by ascending bottom edge; a new row starts whenever
/// an object's bottom sits at least `eps` above the previous object's.
pub fn encode_with(
    catalog: &ObjectCatalog,
    spec: &GridSpec,
    level: &Level,
    options: EncodeOptions,
) -> Result<LevelMatrix> {
    let mut keyed = Vec::with_capacity(level.objects.len());
    for (i, obj) in level.objects.iter().enumerate() {
        let e = catalog.entry(obj.type_id)?;
        keyed.push((obj.y - e.height / 2.0, i));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut matrix = LevelMatrix::new();
    let mut y = spec.ground_y;
    let mut row = 0usize;
    for (bottom, i) in keyed {
        if bottom - y >= spec.eps {
            row += 1;
        }
        y = bottom;
        if row >= MAX_ROW {
            return Err(Error::RowOverflow {
                max_rows: MAX_ROW,
                object: i,
            });
        }
        let col = spec.float2ind(level.objects[i].x);
        let existing = matrix.get(row, col);
        if existing != SPACE && !options.overwrite {
            return Err(Error::CellCollision { row, col, existing });
        }
        matrix.set(row, col, level.objects[i].type_id);
    }
    Ok(matrix)
}

/// True when `placed` would catch an object of `candidate` type dropped at `x`.
pub fn is_under(catalog: &ObjectCatalog, placed: &GameObject, candidate: &CatalogEntry, x: f64) -> Result<bool> {
    if candidate.category == Category::Platform {
        return Ok(true);
    }
    let p = catalog.entry(placed.type_id)?;
    let overlap = (placed.x + p.width / 2.0).min(x + candidate.width / 2.0)
        - (placed.x - p.width / 2.0).max(x - candidate.width / 2.0);
    Ok(overlap > TOUCH_TOL)
}

/// Center height of `candidate` resting on top of `placed`.
pub fn calc_y(catalog: &ObjectCatalog, placed: &GameObject, candidate: &CatalogEntry) -> Result<f64> {
    let p = catalog.entry(placed.type_id)?;
    Ok(placed.y + p.height / 2.0 + candidate.height / 2.0)
}

pub fn update_platform_y(platform_top: f64, current: f64) -> f64 {
    platform_top.max(current)
}

/// Drops one object at `x` onto `placed` (kept sorted by ascending y) and
/// returns the landed object.
pub fn drop_object(
    catalog: &ObjectCatalog,
    spec: &GridSpec,
    placed: &mut Vec<GameObject>,
    type_id: u16,
    x: f64,
) -> Result<GameObject> {
    let entry = catalog.entry(type_id)?;
    let mut y = spec.ground_y + entry.height / 2.0;
    for obj in placed.iter() {
        if is_under(catalog, obj, entry, x)? {
            y = y.max(calc_y(catalog, obj, entry)?);
        }
    }
    let landed = GameObject {
        type_id,
        x,
        y,
        rotation: entry.rotation,
    };
    let at = placed.partition_point(|o| o.y <= y);
    placed.insert(at, landed);
    Ok(landed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub level: Level,
    /// Center height of the highest platform, or ground when there is none.
    pub platform_y: f64,
}

pub fn decode(catalog: &ObjectCatalog, spec: &GridSpec, matrix: &LevelMatrix) -> Result<Level> {
    decode_traced(catalog, spec, matrix).map(|d| d.level)
}

/// Objects come out in drop order (row-major, bottom row first).
pub fn decode_traced(catalog: &ObjectCatalog, spec: &GridSpec, matrix: &LevelMatrix) -> Result<Decoded> {
    let mut placed: Vec<GameObject> = Vec::new();
    let mut order = Vec::new();
    let mut platform_y = spec.ground_y;
    for row in 0..MAX_ROW {
        for col in 0..MAX_COL {
            let t = matrix.get(row, col);
            if t == SPACE {
                continue;
            }
            let x = spec.ind2float(col)?;
            let landed = drop_object(catalog, spec, &mut placed, t, x)?;
            if catalog.entry(t)?.category == Category::Platform {
                platform_y = update_platform_y(landed.y, platform_y);
            }
            order.push(landed);
        }
    }
    let mut level = Level::new(order, 0);
    level.n_birds = compute_n_birds(catalog, &level);
    Ok(Decoded { level, platform_y })
}

/// Columns whose centers fall strictly inside an object's footprint.
fn covered_columns(spec: &GridSpec, x: f64, width: f64) -> (std::ops::RangeInclusive<i64>, bool) {
    let half = width / 2.0 / spec.cell_width;
    let center = (x - spec.x_min) / spec.cell_width;
    let lo = (center - half + 1e-9).ceil() as i64;
    let hi = (center + half - 1e-9).floor() as i64;
    let (lo, hi) = if lo > hi {
        let c = center.round() as i64;
        (c, c)
    } else {
        (lo, hi)
    };
    let clipped = lo < 0 || hi >= MAX_COL as i64;
    (lo.max(0)..=hi.min(MAX_COL as i64 - 1), clipped)
}

/// Character-level dense image: every cell under an object's footprint in
/// its drop row carries the object's type.
pub fn dense_matrix(catalog: &ObjectCatalog, spec: &GridSpec, matrix: &LevelMatrix) -> Result<LevelMatrix> {
    let mut out = LevelMatrix::new();
    let mut clipped = 0usize;
    for row in 0..MAX_ROW {
        for col in 0..MAX_COL {
            let t = matrix.get(row, col);
            if t == SPACE {
                continue;
            }
            let e = catalog.entry(t)?;
            let (cols, was_clipped) = covered_columns(spec, spec.ind2float(col)?, e.width);
            if was_clipped {
                clipped += 1;
            }
            for c in cols {
                out.set(row, c as usize, t);
            }
        }
    }
    if clipped > 0 {
        log::warn!("{clipped} object footprint(s) clipped at the grid edge");
    }
    Ok(out)
}

pub fn to_char_dense(catalog: &ObjectCatalog, spec: &GridSpec, matrix: &LevelMatrix) -> Result<Vec<u16>> {
    Ok(dense_matrix(catalog, spec, matrix)?.cells)
}

/// Character-level sparse image: only the drop cell of each object is set.
pub fn to_char_sparse(catalog: &ObjectCatalog, spec: &GridSpec, level: &Level) -> Result<Vec<u16>> {
    let m = encode_with(catalog, spec, level, EncodeOptions { overwrite: true })?;
    Ok(m.cells)
}
