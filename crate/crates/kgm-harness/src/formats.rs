//! On-disk formats: nodal field dumps and CSV tables.
//!
//! A field dump is a plain-text header (dimension, nodes per axis, extents,
//! space tag) followed by one value per line in lexicographic node order.
//! Values are written with the shortest representation that parses back to
//! the same bits, so a dump/read round trip is exact and identical runs
//! produce identical bytes.  CSV files carry a versioned schema name in a
//! leading comment line.

use anyhow::{anyhow, bail, Context, Result};
use kgm_core::grid::Grid;
use kgm_core::{ScalarField, Space};
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

const FIELD_MAGIC: &str = "# kgm-field v1";

fn space_tag(space: Space) -> &'static str {
    match space {
        Space::Dirichlet => "dirichlet",
        Space::Neumann => "neumann",
    }
}

fn render_header(grid: &Grid, tag: &str) -> String {
    let dim = grid.dim();
    let n = grid.n();
    let extent = grid.extent();
    let mut s = String::new();
    let _ = writeln!(s, "{FIELD_MAGIC}");
    let _ = writeln!(s, "dim {dim}");
    let _ = write!(s, "n");
    for nk in &n[..dim] {
        let _ = write!(s, " {nk}");
    }
    let _ = writeln!(s);
    let _ = write!(s, "extent");
    for ek in &extent[..dim] {
        let _ = write!(s, " {ek}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "space {tag}");
    s
}

/// Write a nodal field dump.
pub fn write_scalar(path: &Path, field: &ScalarField) -> Result<()> {
    let mut s = render_header(field.grid(), space_tag(field.space()));
    for v in field.values() {
        let _ = writeln!(s, "{v}");
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Write boundary data (one value per boundary node, in the grid's
/// boundary-node order).
pub fn write_boundary(path: &Path, grid: &Arc<Grid>, values: &[f64]) -> Result<()> {
    if values.len() != grid.boundary_nodes().len() {
        bail!("boundary dump: {} values for {} boundary nodes", values.len(), grid.boundary_nodes().len());
    }
    let mut s = render_header(grid, "boundary");
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

struct Parsed {
    grid: Arc<Grid>,
    tag: String,
    values: Vec<f64>,
}

fn parse_dump(path: &Path) -> Result<Parsed> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut dim: Option<usize> = None;
    let mut n: Vec<usize> = Vec::new();
    let mut extent: Vec<f64> = Vec::new();
    let mut tag: Option<String> = None;
    let mut values: Vec<f64> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |what: &str| anyhow!("{}:{}: {what}", path.display(), lineno + 1);
        let mut words = line.split_whitespace();
        let head = words.next().expect("nonempty line");
        match head {
            "dim" => {
                dim = Some(
                    words
                        .next()
                        .ok_or_else(|| err("dim needs a value"))?
                        .parse()
                        .map_err(|_| err("bad dim"))?,
                );
            }
            "n" => {
                for w in words {
                    n.push(w.parse().map_err(|_| err("bad node count"))?);
                }
            }
            "extent" => {
                for w in words {
                    extent.push(w.parse().map_err(|_| err("bad extent"))?);
                }
            }
            "space" => {
                tag = Some(words.next().ok_or_else(|| err("space needs a tag"))?.to_string());
            }
            _ => {
                values.push(head.parse().map_err(|_| err("expected a number"))?);
                if words.next().is_some() {
                    return Err(err("one value per line"));
                }
            }
        }
    }
    let dim = dim.ok_or_else(|| anyhow!("{}: missing dim", path.display()))?;
    let tag = tag.ok_or_else(|| anyhow!("{}: missing space tag", path.display()))?;
    if n.len() != dim || extent.len() != dim {
        bail!("{}: header wants {} axes", path.display(), dim);
    }
    let grid = Arc::new(Grid::new(dim, &n, &extent).map_err(anyhow::Error::from)?);
    Ok(Parsed { grid, tag, values })
}

/// Read a nodal field dump written by [`write_scalar`].
pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let p = parse_dump(path)?;
    let space = match p.tag.as_str() {
        "dirichlet" => Space::Dirichlet,
        "neumann" => Space::Neumann,
        other => bail!("{}: `{other}` is not a nodal field dump", path.display()),
    };
    if p.values.len() != p.grid.node_count() {
        bail!(
            "{}: {} values for {} nodes",
            path.display(),
            p.values.len(),
            p.grid.node_count()
        );
    }
    ScalarField::from_values(&p.grid, space, p.values).map_err(anyhow::Error::from)
}

/// Read a boundary dump written by [`write_boundary`].
pub fn read_boundary(path: &Path) -> Result<(Arc<Grid>, Vec<f64>)> {
    let p = parse_dump(path)?;
    if p.tag != "boundary" {
        bail!("{}: `{}` is not a boundary dump", path.display(), p.tag);
    }
    if p.values.len() != p.grid.boundary_nodes().len() {
        bail!(
            "{}: {} values for {} boundary nodes",
            path.display(),
            p.values.len(),
            p.grid.boundary_nodes().len()
        );
    }
    Ok((p.grid, p.values))
}

/// An in-memory CSV table with a versioned schema line.
pub struct Csv {
    schema: &'static str,
    seed: u64,
    columns: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(schema: &'static str, seed: u64, columns: &'static [&'static str]) -> Csv {
        Csv { schema, seed, columns, rows: Vec::new() }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.columns.len(), "csv row width");
        self.rows.push(cells);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# kgm-csv v1 schema={} seed={}", self.schema, self.seed);
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// Format a float cell: shortest round-trip representation.
pub fn cell(v: f64) -> String {
    format!("{v}")
}
