//! Raw samples to histograms, zero imputation, and the CSV formats.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::clr::{cell_midpoints, HistogramGrid};
use crate::error::{Error, Result};
use crate::knots::KnotConfig;
use crate::smoother::TensorBasisSpec;

/// `[a, b] × [c, d]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Domain {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let dom = Self { a, b, c, d };
        dom.validate()?;
        Ok(dom)
    }

    pub fn unit() -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            c: 0.0,
            d: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.a, self.b, self.c, self.d]
            .iter()
            .all(|v| v.is_finite())
            && self.a < self.b
            && self.c < self.d;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "degenerate range [{}, {}] x [{}, {}]",
                self.a, self.b, self.c, self.d
            )));
        }
        Ok(())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.a && x <= self.b && y >= self.c && y <= self.d
    }
}

/// Bivariate observations with an optional declared range.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub points: Vec<(f64, f64)>,
    pub range: Option<Domain>,
    /// Rows dropped at read time because of `NA` entries.
    pub na_dropped: usize,
}

impl SampleSet {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Self {
            points,
            range: None,
            na_dropped: 0,
        }
    }

    pub fn with_range(mut self, range: Domain) -> Self {
        self.range = Some(range);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The declared range, or the bounding box of the points.
    pub fn resolve_range(&self) -> Result<Domain> {
        if let Some(r) = self.range {
            r.validate()?;
            return Ok(r);
        }
        if self.points.is_empty() {
            return Err(Error::Empty("sample set has no points".into()));
        }
        let mut dom = Domain {
            a: f64::INFINITY,
            b: f64::NEG_INFINITY,
            c: f64::INFINITY,
            d: f64::NEG_INFINITY,
        };
        for &(x, y) in &self.points {
            dom.a = dom.a.min(x);
            dom.b = dom.b.max(x);
            dom.c = dom.c.min(y);
            dom.d = dom.d.max(y);
        }
        dom.validate()?;
        Ok(dom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSample {
    pub histogram: HistogramGrid,
    pub domain: Domain,
    pub retained: usize,
    pub out_of_range: usize,
}

/// Equal-width classes, left-closed except the last one, which also takes
/// the upper domain end.
pub fn build_histogram(s: &SampleSet, m: usize, n: usize) -> Result<BinnedSample> {
    if m < 2 || n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes per axis, got {m} x {n}"
        )));
    }
    if s.points.is_empty() {
        return Err(Error::Empty("sample set has no points".into()));
    }
    let dom = s.resolve_range()?;
    let wx = (dom.b - dom.a) / m as f64;
    let wy = (dom.d - dom.c) / n as f64;
    let mut freq = DMatrix::zeros(m, n);
    let mut out_of_range = 0;
    for &(x, y) in &s.points {
        if !dom.contains(x, y) {
            out_of_range += 1;
            continue;
        }
        let i = (((x - dom.a) / wx).floor() as usize).min(m - 1);
        let j = (((y - dom.c) / wy).floor() as usize).min(n - 1);
        freq[(i, j)] += 1.0;
    }
    if out_of_range > 0 {
        log::warn!("{out_of_range} points outside the histogram range were skipped");
    }
    let histogram = HistogramGrid::new(
        cell_midpoints(dom.a, dom.b, m),
        cell_midpoints(dom.c, dom.d, n),
        freq,
        wx,
        wy,
    )?;
    Ok(BinnedSample {
        histogram,
        domain: dom,
        retained: s.points.len() - out_of_range,
        out_of_range,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Neighborhood {
    Four,
    #[default]
    Eight,
}

impl Neighborhood {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Neighborhood::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Neighborhood::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// Exact for equal values, `exp(mean(ln v))` otherwise.
fn geometric_mean(v: &[f64]) -> f64 {
    if v.iter().all(|&t| t == v[0]) {
        return v[0];
    }
    (v.iter().map(|t| t.ln()).sum::<f64>() / v.len() as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImputeStats {
    pub passes: usize,
    pub imputed_bins: usize,
    pub imputed_mass: f64,
}

/// Replaces every zero bin that has a positive neighbour by `2/3` of the
/// geometric mean of its positive neighbours. Each pass reads only the state
/// before the pass; passes repeat until no zero is left.
pub fn impute_zeros(h: &HistogramGrid, nb: Neighborhood) -> Result<(HistogramGrid, ImputeStats)> {
    let (m, n) = h.shape();
    if h.freq.iter().all(|&v| v == 0.0) {
        return Err(Error::Empty("histogram has no positive bin".into()));
    }
    let mut cur = h.freq.clone();
    let mut stats = ImputeStats {
        passes: 0,
        imputed_bins: 0,
        imputed_mass: 0.0,
    };
    while cur.iter().any(|&v| v == 0.0) {
        let prev = cur.clone();
        let mut changed = 0;
        for j in 0..n {
            for i in 0..m {
                if prev[(i, j)] != 0.0 {
                    continue;
                }
                let mut neighbours = Vec::with_capacity(8);
                for &(di, dj) in nb.offsets() {
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= m as isize || jj >= n as isize {
                        continue;
                    }
                    let v = prev[(ii as usize, jj as usize)];
                    if v > 0.0 {
                        neighbours.push(v);
                    }
                }
                if !neighbours.is_empty() {
                    let value = geometric_mean(&neighbours) * 2.0 / 3.0;
                    cur[(i, j)] = value;
                    stats.imputed_mass += value;
                    changed += 1;
                }
            }
        }
        stats.passes += 1;
        stats.imputed_bins += changed;
        if changed == 0 {
            return Err(Error::Empty(
                "zero bins without any positive neighbour".into(),
            ));
        }
    }
    let out = HistogramGrid {
        freq: cur,
        ..h.clone()
    };
    Ok((out, stats))
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn is_na(cell: &str) -> bool {
    matches!(cell, "NA" | "na" | "NaN" | "nan" | "")
}

fn parse_cell(path: &Path, line: usize, column: usize, cell: &str) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        line,
        column,
        message: format!("'{cell}' is not a number"),
    })
}

fn csv_records(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
}

/// Two-column `x,y` samples with an optional header. Rows containing `NA`
/// are dropped and counted.
pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let text = read_text(path)?;
    let mut rdr = csv_records(&text);
    let mut out = SampleSet::default();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if rec.len() != 2 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                column: rec.len().min(2) + 1,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let (cx, cy) = (&rec[0], &rec[1]);
        if is_na(cx) || is_na(cy) {
            out.na_dropped += 1;
            continue;
        }
        let numeric = cx.parse::<f64>().is_ok() && cy.parse::<f64>().is_ok();
        if idx == 0 && !numeric && cx.parse::<f64>().is_err() && cy.parse::<f64>().is_err() {
            // header row
            continue;
        }
        let x = parse_cell(path, line, 1, cx)?;
        let y = parse_cell(path, line, 2, cy)?;
        out.points.push((x, y));
    }
    if out.na_dropped > 0 {
        log::info!(
            "{}: dropped {} rows with NA values",
            path.display(),
            out.na_dropped
        );
    }
    Ok(out)
}

pub fn write_samples(path: &Path, s: &SampleSet) -> Result<()> {
    let mut text = String::from("x,y\n");
    for (x, y) in &s.points {
        text.push_str(&format!("{x},{y}\n"));
    }
    write_text(path, &text)
}

/// Matrix with a header row of x-nodes and a header column of y-nodes;
/// body row `j` holds `values[(·, j)]`.
pub fn write_grid(path: &Path, x: &[f64], y: &[f64], values: &DMatrix<f64>) -> Result<()> {
    if values.shape() != (x.len(), y.len()) {
        return Err(Error::DimensionMismatch(format!(
            "grid is {}x{} for {} x-nodes and {} y-nodes",
            values.nrows(),
            values.ncols(),
            x.len(),
            y.len()
        )));
    }
    let mut text = String::from("y\\x");
    for xi in x {
        text.push_str(&format!(",{xi}"));
    }
    text.push('\n');
    for (j, yj) in y.iter().enumerate() {
        text.push_str(&format!("{yj}"));
        for i in 0..x.len() {
            text.push_str(&format!(",{}", values[(i, j)]));
        }
        text.push('\n');
    }
    write_text(path, &text)
}

/// Inverse of [`write_grid`]: `(x, y, values)`.
pub fn read_grid(path: &Path) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>)> {
    let text = read_text(path)?;
    let mut rdr = csv_records(&text);
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut body: Vec<f64> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if idx == 0 {
            for (c, cell) in rec.iter().enumerate().skip(1) {
                x.push(parse_cell(path, line, c + 1, cell)?);
            }
            if x.is_empty() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    column: 2,
                    message: "header row has no x-nodes".into(),
                });
            }
            continue;
        }
        if rec.len() != x.len() + 1 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                column: rec.len().min(x.len() + 1) + 1,
                message: format!("expected {} columns, found {}", x.len() + 1, rec.len()),
            });
        }
        y.push(parse_cell(path, line, 1, &rec[0])?);
        for (c, cell) in rec.iter().enumerate().skip(1) {
            body.push(parse_cell(path, line, c + 1, cell)?);
        }
    }
    if y.is_empty() {
        return Err(Error::Empty(format!("{} has no data rows", path.display())));
    }
    // body is row-major over (y, x), i.e. column-major over (x, y)
    let values = DMatrix::from_column_slice(x.len(), y.len(), &body);
    Ok((x, y, values))
}

pub fn write_histogram(path: &Path, h: &HistogramGrid) -> Result<()> {
    write_grid(path, &h.x_mid, &h.y_mid, &h.freq)
}

pub fn read_histogram(path: &Path) -> Result<HistogramGrid> {
    let (x, y, f) = read_grid(path)?;
    HistogramGrid::from_midpoints(x, y, f)
}

/// What a coefficient file holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffKind {
    /// Packed `R = [[Z, v], [uᵀ, 0]]`.
    Zb,
    /// B-spline coefficient matrix.
    B,
    /// Interaction block `Z`.
    Interactive,
    /// Column vector `v`.
    MarginalX,
    /// Column vector `u`.
    MarginalY,
}

impl CoeffKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CoeffKind::Zb => "zb",
            CoeffKind::B => "b",
            CoeffKind::Interactive => "interactive",
            CoeffKind::MarginalX => "marginal_x",
            CoeffKind::MarginalY => "marginal_y",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "zb" => CoeffKind::Zb,
            "b" => CoeffKind::B,
            "interactive" => CoeffKind::Interactive,
            "marginal_x" => CoeffKind::MarginalX,
            "marginal_y" => CoeffKind::MarginalY,
            _ => return None,
        })
    }
}

/// Coefficient matrix together with the basis it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFile {
    pub kind: CoeffKind,
    pub spec: TensorBasisSpec,
    pub matrix: DMatrix<f64>,
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|t| format!("{t}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Writes `# key=value` header lines followed by the matrix rows. Values use
/// the shortest representation that reads back bit-identically.
pub fn write_coefficients(path: &Path, file: &CoefficientFile) -> Result<()> {
    let mut text = String::new();
    text.push_str(&format!("# kind={}\n", file.kind.as_str()));
    for (name, cfg) in [("x", &file.spec.x), ("y", &file.spec.y)] {
        text.push_str(&format!("# {name}_degree={}\n", cfg.degree));
        text.push_str(&format!("# {name}_knots={}\n", join(&cfg.breakpoints())));
    }
    for r in 0..file.matrix.nrows() {
        let row: Vec<String> = file.matrix.row(r).iter().map(|v| format!("{v}")).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_coefficients(path: &Path) -> Result<CoefficientFile> {
    let text = read_text(path)?;
    let bad = |line: usize, message: String| Error::Parse {
        path: path.display().to_string(),
        line,
        column: 1,
        message,
    };
    let mut kind = None;
    let mut degrees = [None, None];
    let mut knots: [Option<Vec<f64>>; 2] = [None, None];
    for (idx, raw) in text.lines().enumerate() {
        let Some(rest) = raw.trim().strip_prefix('#') else {
            continue;
        };
        let Some((key, value)) = rest.split_once('=') else {
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        let line = idx + 1;
        match key {
            "kind" => {
                kind = Some(
                    CoeffKind::parse(value)
                        .ok_or_else(|| bad(line, format!("unknown coefficient kind '{value}'")))?,
                )
            }
            "x_degree" | "y_degree" => {
                let d = value
                    .parse::<usize>()
                    .map_err(|_| bad(line, format!("bad degree '{value}'")))?;
                degrees[usize::from(key == "y_degree")] = Some(d);
            }
            "x_knots" | "y_knots" => {
                let v = value
                    .split(';')
                    .map(|t| t.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(line, format!("bad knot list '{value}'")))?;
                if v.len() < 2 {
                    return Err(bad(line, "knot list needs both domain ends".into()));
                }
                knots[usize::from(key == "y_knots")] = Some(v);
            }
            _ => {}
        }
    }
    let kind = kind.ok_or_else(|| bad(1, "missing '# kind=' header".into()))?;
    let mut cfgs = Vec::with_capacity(2);
    for (axis, (d, k)) in ["x", "y"].iter().zip(degrees.iter().zip(knots.iter())) {
        let d = d.ok_or_else(|| bad(1, format!("missing '# {axis}_degree=' header")))?;
        let k = k
            .as_ref()
            .ok_or_else(|| bad(1, format!("missing '# {axis}_knots=' header")))?;
        let cfg = KnotConfig::new(k[0], k[k.len() - 1], k[1..k.len() - 1].to_vec(), d)?;
        cfgs.push(cfg);
    }
    let spec = TensorBasisSpec {
        y: cfgs.pop().expect("two axes"),
        x: cfgs.pop().expect("two axes"),
    };

    let mut rdr = csv_records(&text);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| parse_cell(path, line, c + 1, cell))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line,
                    column: row.len().min(first.len()) + 1,
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Empty(format!(
            "{} has no coefficient rows",
            path.display()
        )));
    }
    let ncols = rows[0].len();
    let matrix = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    let expect = match kind {
        CoeffKind::Zb | CoeffKind::B => (spec.x.n_basis(), spec.y.n_basis()),
        CoeffKind::Interactive => (spec.x.n_basis() - 1, spec.y.n_basis() - 1),
        CoeffKind::MarginalX => (spec.x.n_basis() - 1, 1),
        CoeffKind::MarginalY => (spec.y.n_basis() - 1, 1),
    };
    if matrix.shape() != expect {
        return Err(Error::DimensionMismatch(format!(
            "{}: {} coefficients are {}x{}, the header basis needs {}x{}",
            path.display(),
            kind.as_str(),
            matrix.nrows(),
            matrix.ncols(),
            expect.0,
            expect.1
        )));
    }
    Ok(CoefficientFile { kind, spec, matrix })
}
