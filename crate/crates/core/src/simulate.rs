//! Bivariate beta samples by accept-reject, and the replicated ISE and GCV
//! experiments built on them.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::clr::{
    clr_of_density, discrete_clr, ise_clr, ClrField, DensityGrid, HistogramGrid, Mesh,
};
use crate::error::{Error, Result};
use crate::ingest::{build_histogram, impute_zeros, Domain, Neighborhood, SampleSet};
use crate::knots::KnotConfig;
use crate::smoother::{
    mean_of_curves, FitResult, GcvCurve, PenaltyConfig, TensorBasis, TensorBasisSpec,
};

/// Grid size for the numerical supremum.
const SUP_GRID: usize = 512;
/// Safety inflation applied to the numerical supremum.
const SUP_INFLATION: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl BetaParams {
    pub fn new(alpha0: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        let p = Self {
            alpha0,
            alpha1,
            alpha2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.alpha0, self.alpha1, self.alpha2]
            .iter()
            .any(|a| !(*a > 0.0 && a.is_finite()))
        {
            return Err(Error::InvalidParameter(format!(
                "beta parameters must be positive, got ({}, {}, {})",
                self.alpha0, self.alpha1, self.alpha2
            )));
        }
        Ok(())
    }

    /// `ln B(α₀, α₁, α₂) = Σ ln Γ(αᵢ) − ln Γ(Σ αᵢ)`.
    pub fn ln_beta(&self) -> f64 {
        ln_gamma(self.alpha0) + ln_gamma(self.alpha1) + ln_gamma(self.alpha2)
            - ln_gamma(self.alpha0 + self.alpha1 + self.alpha2)
    }

    /// Log-density at an interior point, unchecked.
    fn ln_density(&self, x: f64, y: f64) -> f64 {
        let (a0, a1, a2) = (self.alpha0, self.alpha1, self.alpha2);
        -self.ln_beta()
            + (a1 - 1.0) * x.ln()
            + (a0 + a2 - 1.0) * (-x).ln_1p()
            + (a2 - 1.0) * y.ln()
            + (a0 + a1 - 1.0) * (-y).ln_1p()
            - (a0 + a1 + a2) * (-x * y).ln_1p()
    }
}

/// Bivariate beta density on the open unit square.
pub fn beta_density(p: &BetaParams, x: f64, y: f64) -> Result<f64> {
    p.validate()?;
    for v in [x, y] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::OutOfDomain {
                value: v,
                lo: 0.0,
                hi: 1.0,
            });
        }
    }
    Ok(p.ln_density(x, y).exp())
}

/// Maximum over a 512×512 cell-centre grid, inflated by 1%.
pub fn estimate_sup(p: &BetaParams) -> Result<f64> {
    p.validate()?;
    let h = 1.0 / SUP_GRID as f64;
    let max = (0..SUP_GRID)
        .into_par_iter()
        .map(|i| {
            let x = (i as f64 + 0.5) * h;
            (0..SUP_GRID)
                .map(|j| p.ln_density(x, (j as f64 + 0.5) * h))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(max.exp() * SUP_INFLATION)
}

/// Stream `replicate` of the generator keyed by `master`.
pub fn replicate_rng(master: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replicate);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptStats {
    pub proposals: u64,
    pub accepted: u64,
    pub rate: f64,
    pub envelope: f64,
    /// Largest density value seen at a proposal.
    pub max_density: f64,
}

fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Draws exactly `count` points with uniform proposals on the unit square,
/// accepting when `U · M ≤ f`.
pub fn accept_reject<R: Rng>(
    p: &BetaParams,
    count: usize,
    envelope: f64,
    rng: &mut R,
) -> Result<(SampleSet, AcceptStats)> {
    p.validate()?;
    if !(envelope > 0.0 && envelope.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "envelope constant must be positive, got {envelope}"
        )));
    }
    let mut points = Vec::with_capacity(count);
    let mut proposals = 0u64;
    let mut max_density = 0.0f64;
    while points.len() < count {
        let x = open_unit(rng);
        let y = open_unit(rng);
        let u: f64 = rng.random();
        proposals += 1;
        let f = p.ln_density(x, y).exp();
        max_density = max_density.max(f);
        if f > envelope {
            return Err(Error::EnvelopeViolation {
                x,
                y,
                value: f,
                bound: envelope,
            });
        }
        if u * envelope <= f {
            points.push((x, y));
        }
    }
    let accepted = points.len() as u64;
    let stats = AcceptStats {
        proposals,
        accepted,
        rate: if proposals > 0 {
            accepted as f64 / proposals as f64
        } else {
            0.0
        },
        envelope,
        max_density,
    };
    Ok((SampleSet::new(points).with_range(Domain::unit()), stats))
}

/// Seeded convenience wrapper over stream 0.
pub fn accept_reject_seeded(
    p: &BetaParams,
    count: usize,
    envelope: f64,
    seed: u64,
) -> Result<(SampleSet, AcceptStats)> {
    accept_reject(p, count, envelope, &mut replicate_rng(seed, 0))
}

/// Settings shared by the replicated experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: BetaParams,
    pub sample_size: usize,
    /// Envelope `M`; estimated numerically when absent.
    pub envelope: Option<f64>,
    pub replicates: usize,
    pub seed: u64,
    pub degrees: (usize, usize),
    pub penalty: (usize, usize),
    pub rho: f64,
    /// Equispaced interior knots per axis (used by the bin sweep and GCV runs).
    pub knots: (usize, usize),
    /// Classes per axis (used by the knot sweep and GCV runs).
    pub bins: (usize, usize),
    pub neighborhood: Neighborhood,
    /// Cells per axis of the ISE evaluation mesh.
    pub ise_grid: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: BetaParams {
                alpha0: 3.0,
                alpha1: 3.0,
                alpha2: 3.0,
            },
            sample_size: 3000,
            envelope: Some(4.1),
            replicates: 100,
            seed: 1,
            degrees: (2, 2),
            penalty: (1, 1),
            rho: 1e-3,
            knots: (3, 3),
            bins: (10, 10),
            neighborhood: Neighborhood::Eight,
            ise_grid: 101,
        }
    }
}

impl ExperimentConfig {
    pub fn spec(&self, knots: (usize, usize)) -> Result<TensorBasisSpec> {
        Ok(TensorBasisSpec {
            x: KnotConfig::uniform(0.0, 1.0, knots.0, self.degrees.0)?,
            y: KnotConfig::uniform(0.0, 1.0, knots.1, self.degrees.1)?,
        })
    }

    pub fn penalty_config(&self) -> PenaltyConfig {
        PenaltyConfig::new(self.penalty.0, self.penalty.1, self.rho)
    }

    pub fn resolve_envelope(&self) -> Result<f64> {
        match self.envelope {
            Some(m) => Ok(m),
            None => estimate_sup(&self.params),
        }
    }

    fn sample(&self, replicate: usize, envelope: f64) -> Result<SampleSet> {
        let mut rng = replicate_rng(self.seed, replicate as u64);
        Ok(accept_reject(&self.params, self.sample_size, envelope, &mut rng)?.0)
    }
}

/// Positive histogram on the unit square after imputation.
pub fn histogram_of(
    sample: &SampleSet,
    m: usize,
    n: usize,
    nb: Neighborhood,
) -> Result<HistogramGrid> {
    let binned = build_histogram(sample, m, n)?;
    Ok(impute_zeros(&binned.histogram, nb)?.0)
}

/// Discrete clr of a histogram, smoothed at the class midpoints.
pub fn fit_histogram(
    basis: &TensorBasis,
    h: &HistogramGrid,
    pen: &PenaltyConfig,
) -> Result<FitResult> {
    let c = discrete_clr(h)?;
    basis.fit(&c.values, &h.x_mid, &h.y_mid, pen)
}

/// True clr of the beta density on the ISE mesh.
pub fn true_clr(p: &BetaParams, mesh: &Mesh) -> Result<ClrField> {
    let d = DensityGrid::from_fn(mesh.clone(), |x, y| p.ln_density(x, y).exp())?;
    clr_of_density(&d)
}

/// `∬ (clr f − s)²` on the mesh of `truth`.
pub fn ise_of_fit(basis: &TensorBasis, fit: &FitResult, truth: &ClrField) -> Result<f64> {
    let s = basis.eval_zb(&fit.coeffs, &truth.mesh.x, &truth.mesh.y)?;
    ise_clr(truth, &ClrField::centered(truth.mesh.clone(), s)?)
}

fn ise_mesh(cells: usize) -> Result<Mesh> {
    Mesh::cells(0.0, 1.0, cells, 0.0, 1.0, cells)
}

/// ISE values, one row per replicate and one column per swept value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IseTable {
    pub parameter: String,
    pub values: Vec<usize>,
    pub feasible: Vec<bool>,
    /// `NaN` in infeasible columns and for failed fits.
    pub ise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub value: usize,
    pub feasible: bool,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl IseTable {
    pub fn column(&self, c: usize) -> Vec<f64> {
        self.ise.iter().map(|row| row[c]).collect()
    }

    pub fn summary(&self) -> Vec<ColumnSummary> {
        (0..self.values.len())
            .map(|c| {
                let mut col: Vec<f64> = self
                    .column(c)
                    .into_iter()
                    .filter(|v| v.is_finite())
                    .collect();
                col.sort_by(f64::total_cmp);
                ColumnSummary {
                    value: self.values[c],
                    feasible: self.feasible[c],
                    count: col.len(),
                    min: col.first().copied().unwrap_or(f64::NAN),
                    q1: quantile(&col, 0.25),
                    median: quantile(&col, 0.5),
                    q3: quantile(&col, 0.75),
                    max: col.last().copied().unwrap_or(f64::NAN),
                }
            })
            .collect()
    }

    pub fn median(&self, value: usize) -> Option<f64> {
        let c = self.values.iter().position(|&v| v == value)?;
        Some(self.summary()[c].median)
    }

    /// CSV text: `replicate` then one column per swept value; `NA` marks
    /// infeasible columns and failed fits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replicate");
        for v in &self.values {
            out.push_str(&format!(",{}_{v}", self.parameter));
        }
        out.push('\n');
        for (r, row) in self.ise.iter().enumerate() {
            out.push_str(&r.to_string());
            for v in row {
                if v.is_finite() {
                    out.push_str(&format!(",{v}"));
                } else {
                    out.push_str(",NA");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Dimension of the ZB space for `(g, h)` interior knots.
fn dimension(cfg: &ExperimentConfig, knots: (usize, usize)) -> usize {
    (knots.0 + cfg.degrees.0 + 1) * (knots.1 + cfg.degrees.1 + 1) - 1
}

fn sweep<F>(
    cfg: &ExperimentConfig,
    parameter: &str,
    values: &[usize],
    setting: F,
) -> Result<IseTable>
where
    F: Fn(usize) -> ((usize, usize), (usize, usize)) + Sync,
{
    if values.is_empty() {
        return Err(Error::Empty(format!("no {parameter} values to sweep")));
    }
    if cfg.replicates == 0 {
        return Err(Error::InvalidParameter(
            "need at least one replicate".into(),
        ));
    }
    let envelope = cfg.resolve_envelope()?;
    let truth = true_clr(&cfg.params, &ise_mesh(cfg.ise_grid)?)?;
    let pen = cfg.penalty_config();
    let mut bases = Vec::with_capacity(values.len());
    let mut feasible = Vec::with_capacity(values.len());
    for &v in values {
        let (bins, knots) = setting(v);
        let ok = bins.0 * bins.1 > dimension(cfg, knots);
        if !ok {
            log::warn!(
                "{parameter} = {v} is infeasible: {}x{} classes for a space of dimension {}",
                bins.0,
                bins.1,
                dimension(cfg, knots)
            );
        }
        feasible.push(ok);
        bases.push(TensorBasis::new(cfg.spec(knots)?)?);
    }
    let ise = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let sample = cfg.sample(r, envelope)?;
            let mut row = Vec::with_capacity(values.len());
            for (c, &v) in values.iter().enumerate() {
                if !feasible[c] {
                    row.push(f64::NAN);
                    continue;
                }
                let (bins, _) = setting(v);
                let h = histogram_of(&sample, bins.0, bins.1, cfg.neighborhood)?;
                let value = fit_histogram(&bases[c], &h, &pen)
                    .and_then(|fit| ise_of_fit(&bases[c], &fit, &truth));
                row.push(match value {
                    Ok(v) => v,
                    Err(e) => {
                        log::warn!("replicate {r}, {parameter} = {v}: {e}");
                        f64::NAN
                    }
                });
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IseTable {
        parameter: parameter.to_string(),
        values: values.to_vec(),
        feasible,
        ise,
    })
}

/// ISE against the true density for `m = n = b` classes, `b` in `bin_counts`,
/// with `cfg.knots` interior knots. Each replicate draws one sample that is
/// shared by all bin counts.
pub fn run_bin_sweep(cfg: &ExperimentConfig, bin_counts: &[usize]) -> Result<IseTable> {
    sweep(cfg, "bins", bin_counts, |b| ((b, b), cfg.knots))
}

/// ISE for `g = h = c` equispaced interior knots with `cfg.bins` classes.
pub fn run_knot_sweep(cfg: &ExperimentConfig, knot_counts: &[usize]) -> Result<IseTable> {
    sweep(cfg, "knots", knot_counts, |c| (cfg.bins, (c, c)))
}

/// GCV curves of `cfg.replicates` simulated histograms and their pointwise
/// mean.
pub fn run_gcv_replicates(
    cfg: &ExperimentConfig,
    rho_grid: &[f64],
) -> Result<(Vec<GcvCurve>, GcvCurve)> {
    if cfg.replicates == 0 {
        return Err(Error::InvalidParameter(
            "need at least one replicate".into(),
        ));
    }
    let envelope = cfg.resolve_envelope()?;
    let basis = TensorBasis::new(cfg.spec(cfg.knots)?)?;
    let curves = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let sample = cfg.sample(r, envelope)?;
            let h = histogram_of(&sample, cfg.bins.0, cfg.bins.1, cfg.neighborhood)?;
            let c = discrete_clr(&h)?;
            basis
                .problem(
                    &c.values,
                    &h.x_mid,
                    &h.y_mid,
                    cfg.penalty.0,
                    cfg.penalty.1,
                    false,
                )?
                .gcv_scan(rho_grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_of_curves(&curves)?;
    Ok((curves, mean))
}

/// The beta density tabulated on an `m × n` cell mesh of the unit square.
pub fn beta_grid(p: &BetaParams, m: usize, n: usize) -> Result<DensityGrid> {
    let mesh = Mesh::cells(0.0, 1.0, m, 0.0, 1.0, n)?;
    let values = DMatrix::from_fn(m, n, |i, j| p.ln_density(mesh.x[i], mesh.y[j]).exp());
    DensityGrid::new(mesh, values)
}
