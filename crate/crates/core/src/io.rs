//! Versioned file formats.
//!
//! * Instances are JSON documents tagged `"format": "vecbeck/1"` holding a
//!   grid, the component count and one `m`-vector per cell.
//! * Fields are CSV files: a `#` metadata line, a header row, then one row
//!   per cell with its index, center coordinates and entries.
//! * Matrices are plain CSV rows of numbers; `#` lines are comments.
//!
//! Floats are written in their shortest round-trip form, so reading a file
//! back reproduces the values bit for bit.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldKind, GridSpec, MatrixField, VectorField, VectorMeasure};
use crate::lq::LqInstance;
use crate::schatten::{Exponent, Matrix};
use crate::FORMAT_VERSION;

/// What an instance file asks for.
#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    /// A balanced vector measure given by cell masses.
    Beckmann(VectorMeasure),
    /// A zero-mean density together with the exponent `p`.
    Lq(LqInstance),
}

impl Instance {
    pub fn measure(&self) -> &VectorMeasure {
        match self {
            Instance::Beckmann(mu) => mu,
            Instance::Lq(inst) => inst.measure(),
        }
    }
}

/// An instance together with free-form generator metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceFile {
    pub instance: Instance,
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRepr {
    format: String,
    grid: GridSpec,
    m: usize,
    kind: FieldKind,
    values: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    p: Option<f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    meta: BTreeMap<String, serde_json::Value>,
}

fn check_format(found: &str) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format tag {found:?}, expected {FORMAT_VERSION:?}"
        )));
    }
    Ok(())
}

impl InstanceFile {
    pub fn new(instance: Instance) -> Self {
        Self {
            instance,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let (mu, kind, p, flat) = match &self.instance {
            Instance::Beckmann(mu) => (mu, FieldKind::Mass, None, mu.masses()),
            Instance::Lq(inst) => (inst.measure(), FieldKind::Density, Some(inst.p().value()), inst.density()),
        };
        let m = mu.m();
        let values = flat.chunks_exact(m.max(1)).map(<[f64]>::to_vec).collect();
        let repr = InstanceRepr {
            format: FORMAT_VERSION.into(),
            grid: mu.grid().clone(),
            m,
            kind,
            values,
            p,
            meta: self.meta.clone(),
        };
        Ok(serde_json::to_string_pretty(&repr)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: InstanceRepr = serde_json::from_str(text)?;
        check_format(&repr.format)?;
        let cells = repr.grid.cell_count();
        if repr.values.len() != cells {
            return Err(Error::ShapeMismatch(format!(
                "instance has {} cells of values, the grid has {cells}",
                repr.values.len()
            )));
        }
        if let Some(bad) = repr.values.iter().position(|v| v.len() != repr.m) {
            return Err(Error::ShapeMismatch(format!(
                "cell {bad} has {} components, expected {}",
                repr.values[bad].len(),
                repr.m
            )));
        }
        let flat: Vec<f64> = repr.values.into_iter().flatten().collect();
        let instance = match (repr.kind, repr.p) {
            (FieldKind::Mass, None) => Instance::Beckmann(VectorMeasure::from_masses(repr.grid, repr.m, flat)?),
            (FieldKind::Density, Some(p)) => {
                Instance::Lq(LqInstance::from_density(repr.grid, repr.m, flat, Exponent::new(p)?)?)
            }
            (FieldKind::Mass, Some(_)) => {
                return Err(Error::Format("an exponent needs density values".into()));
            }
            (FieldKind::Density, None) => {
                return Err(Error::Format("density values need an exponent \"p\"".into()));
            }
        };
        Ok(Self {
            instance,
            meta: repr.meta,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// A per-cell field as stored in CSV: `width` entries per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldTable {
    pub grid: GridSpec,
    pub kind: FieldKind,
    /// Entry shape per cell, `(m, 1)` for vectors and `(m, n)` for matrices.
    pub shape: (usize, usize),
    pub values: Vec<f64>,
}

impl From<&VectorField> for FieldTable {
    fn from(f: &VectorField) -> Self {
        Self {
            grid: f.grid().clone(),
            kind: FieldKind::Mass,
            shape: (f.m(), 1),
            values: f.values().to_vec(),
        }
    }
}

impl From<&MatrixField> for FieldTable {
    fn from(f: &MatrixField) -> Self {
        Self {
            grid: f.grid().clone(),
            kind: f.kind(),
            shape: (f.m(), f.n()),
            values: f.values().to_vec(),
        }
    }
}

fn join<T: ToString>(xs: &[T], sep: &str) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(sep)
}

fn parse_list<T: std::str::FromStr>(s: &str, sep: char, what: &str) -> Result<Vec<T>> {
    s.split(sep)
        .map(|t| t.trim().parse().map_err(|_| Error::Format(format!("bad {what} entry {t:?}"))))
        .collect()
}

impl FieldTable {
    pub fn to_vector_field(&self) -> Result<VectorField> {
        if self.shape.1 != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected a vector field, found {}x{} entries",
                self.shape.0, self.shape.1
            )));
        }
        VectorField::from_values(self.grid.clone(), self.shape.0, self.values.clone())
    }

    pub fn to_matrix_field(&self) -> Result<MatrixField> {
        if self.shape.1 != self.grid.dim() {
            return Err(Error::ShapeMismatch(format!(
                "matrix fields need n = {} columns, found {}",
                self.grid.dim(),
                self.shape.1
            )));
        }
        MatrixField::from_values(self.grid.clone(), self.shape.0, self.kind, self.values.clone())
    }

    fn metadata(&self) -> String {
        format!(
            "# format={FORMAT_VERSION} kind={} dims={} spacing={} origin={} shape={}x{}",
            self.kind,
            join(self.grid.dims(), "x"),
            join(self.grid.spacing(), ","),
            join(self.grid.origin(), ","),
            self.shape.0,
            self.shape.1
        )
    }

    pub fn write_to(&self, out: impl Write) -> Result<()> {
        let mut out = std::io::BufWriter::new(out);
        writeln!(out, "{}", self.metadata())?;
        let n = self.grid.dim();
        let (rows, cols) = self.shape;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["cell".to_string()];
        header.extend((0..n).map(|k| format!("x{k}")));
        for r in 0..rows {
            for c in 0..cols {
                header.push(if cols == 1 { format!("v{r}") } else { format!("m{r}_{c}") });
            }
        }
        w.write_record(&header)?;
        let width = rows * cols;
        for (cell, entries) in self.values.chunks_exact(width).enumerate() {
            let mut rec = vec![cell.to_string()];
            rec.extend(self.grid.cell_center(cell).iter().map(f64::to_string));
            rec.extend(entries.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (first, body) = text.split_once('\n').unwrap_or((text, ""));
        let meta = first
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("field files start with a '#' metadata line".into()))?;
        let mut tags = BTreeMap::new();
        for tok in meta.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad metadata token {tok:?}")))?;
            tags.insert(k, v);
        }
        let tag = |k: &str| {
            tags.get(k)
                .copied()
                .ok_or_else(|| Error::Format(format!("metadata is missing {k:?}")))
        };
        check_format(tag("format")?)?;
        let kind = match tag("kind")? {
            "mass" => FieldKind::Mass,
            "density" => FieldKind::Density,
            other => return Err(Error::Format(format!("unknown field kind {other:?}"))),
        };
        let grid = GridSpec::new(
            parse_list(tag("dims")?, 'x', "dims")?,
            parse_list(tag("spacing")?, ',', "spacing")?,
            parse_list(tag("origin")?, ',', "origin")?,
        )?;
        let shape = parse_list::<usize>(tag("shape")?, 'x', "shape")?;
        let [rows, cols] = shape[..] else {
            return Err(Error::Format("shape must be RxC".into()));
        };
        let n = grid.dim();
        let width = rows * cols;
        let mut values = Vec::with_capacity(grid.cell_count() * width);
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        for (expected, rec) in reader.records().enumerate() {
            let rec = rec?;
            if rec.len() != 1 + n + width {
                return Err(Error::Format(format!(
                    "row {expected} has {} columns, expected {}",
                    rec.len(),
                    1 + n + width
                )));
            }
            let cell: usize = rec[0]
                .parse()
                .map_err(|_| Error::Format(format!("bad cell index {:?}", &rec[0])))?;
            if cell != expected {
                return Err(Error::Format(format!("row {expected} is labelled cell {cell}")));
            }
            for t in rec.iter().skip(1 + n) {
                values.push(t.parse().map_err(|_| Error::Format(format!("bad number {t:?}")))?);
            }
        }
        if values.len() != grid.cell_count() * width {
            return Err(Error::ShapeMismatch(format!(
                "field has {} rows, the grid has {} cells",
                values.len() / width.max(1),
                grid.cell_count()
            )));
        }
        Ok(Self {
            grid,
            kind,
            shape: (rows, cols),
            values,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(std::fs::File::create(path)?)
    }
}

/// Parses a matrix from CSV rows of numbers. Blank lines and `#` lines are
/// skipped.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for line in text.as_bytes().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rows.push(parse_list(line, ',', "matrix")?);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Format("matrix file holds no entries".into()));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("matrix rows have different lengths".into()));
    }
    let r = rows.len();
    Matrix::new(r, cols, rows.into_iter().flatten().collect())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

/// Writes a matrix as CSV rows.
pub fn format_matrix(a: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..a.rows() {
        let row: Vec<String> = (0..a.cols()).map(|j| a[(i, j)].to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
