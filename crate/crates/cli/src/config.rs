//! Run configuration: a flat TOML document overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use zbspline::smoother::log_grid;
use zbspline::{
    BetaParams, Domain, ExperimentConfig, KnotConfig, Neighborhood, PenaltyConfig, TensorBasisSpec,
};

use crate::UsageError;

/// Every key is optional; missing keys fall back to the defaults below.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histograms: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<PathBuf>>,
    /// `[a, b, c, d]` for `[a, b] × [c, d]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain: Option<[f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degrees: Option<[usize; 2]>,
    /// Equispaced interior knot counts `[g, h]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knots: Option<[usize; 2]>,
    /// Explicit interior knots; these take precedence over `knots`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_knots: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_knots: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub penalty: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marginal_penalty: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    /// `[lo, hi, count]`, log-spaced.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho_grid: Option<(f64, f64, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighborhood: Option<Neighborhood>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Points per axis of the output grids.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Beta parameters `[α0, α1, α2]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub envelope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bin_sweep: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knot_sweep: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ise_grid: Option<usize>,
}

pub const DEFAULT_DEGREES: [usize; 2] = [2, 2];
pub const DEFAULT_KNOTS: [usize; 2] = [3, 3];
pub const DEFAULT_PENALTY: [usize; 2] = [1, 1];
pub const DEFAULT_BINS: [usize; 2] = [10, 10];
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_GRID: usize = 101;
pub const DEFAULT_RHO_GRID: (f64, f64, usize) = (1e-6, 1e1, 25);
pub const DEFAULT_BIN_SWEEP: [usize; 6] = [6, 8, 10, 13, 16, 20];
pub const DEFAULT_KNOT_SWEEP: [usize; 5] = [1, 2, 3, 4, 5];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))
    }

    /// Keys set in `over` replace those in `self`.
    pub fn merged(self, over: RunConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => {
                RunConfig { $($f: over.$f.or(self.$f)),* }
            };
        }
        pick!(
            samples,
            histograms,
            coefficients,
            domain,
            degrees,
            knots,
            x_knots,
            y_knots,
            penalty,
            marginal_penalty,
            rho,
            rho_grid,
            bins,
            neighborhood,
            seed,
            grid,
            out,
            alpha,
            sample_size,
            envelope,
            replicates,
            bin_sweep,
            knot_sweep,
            ise_grid
        )
    }

    /// The config with every default made explicit, as recorded in the
    /// manifest.
    pub fn effective(&self) -> RunConfig {
        let mut c = self.clone();
        c.degrees.get_or_insert(DEFAULT_DEGREES);
        if c.x_knots.is_none() || c.y_knots.is_none() {
            c.knots.get_or_insert(DEFAULT_KNOTS);
        }
        c.penalty.get_or_insert(DEFAULT_PENALTY);
        c.marginal_penalty.get_or_insert(false);
        c.bins.get_or_insert(DEFAULT_BINS);
        c.neighborhood.get_or_insert_with(Neighborhood::default);
        c.seed.get_or_insert(DEFAULT_SEED);
        c.grid.get_or_insert(DEFAULT_GRID);
        c.out.get_or_insert_with(|| self.out_dir());
        if c.rho.is_none() {
            c.rho_grid.get_or_insert(DEFAULT_RHO_GRID);
        }
        c
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn bins(&self) -> Result<(usize, usize), UsageError> {
        let [m, n] = self.bins.unwrap_or(DEFAULT_BINS);
        if m < 2 || n < 2 {
            return Err(UsageError(format!(
                "bins must be at least 2 per axis, got {m},{n}"
            )));
        }
        Ok((m, n))
    }

    pub fn grid(&self) -> Result<usize, UsageError> {
        match self.grid.unwrap_or(DEFAULT_GRID) {
            g if g >= 2 => Ok(g),
            g => Err(UsageError(format!("grid needs at least 2 points, got {g}"))),
        }
    }

    pub fn penalty(&self, rho: f64) -> Result<PenaltyConfig, UsageError> {
        let [p, q] = self.penalty.unwrap_or(DEFAULT_PENALTY);
        let [k, l] = self.degrees.unwrap_or(DEFAULT_DEGREES);
        if (p > 0 && p >= k) || (q > 0 && q >= l) {
            return Err(UsageError(format!(
                "penalty orders ({p},{q}) must be below the degrees ({k},{l})"
            )));
        }
        let mut pen = PenaltyConfig::new(p, q, rho);
        pen.marginal_penalty = self.marginal_penalty.unwrap_or(false);
        Ok(pen)
    }

    /// Explicit `rho` if set, otherwise `None` and the grid is scanned.
    pub fn rho(&self) -> Result<Option<f64>, UsageError> {
        match self.rho {
            Some(r) if !(r > 0.0 && r.is_finite()) => {
                Err(UsageError(format!("rho must be positive, got {r}")))
            }
            r => Ok(r),
        }
    }

    pub fn rho_grid(&self) -> Result<Vec<f64>, UsageError> {
        let (lo, hi, count) = self.rho_grid.unwrap_or(DEFAULT_RHO_GRID);
        log_grid(lo, hi, count).map_err(|e| UsageError(format!("rho_grid: {e}")))
    }

    pub fn neighborhood(&self) -> Neighborhood {
        self.neighborhood.unwrap_or_default()
    }

    pub fn domain(&self) -> Result<Option<Domain>, UsageError> {
        self.domain
            .map(|[a, b, c, d]| Domain::new(a, b, c, d).map_err(|e| UsageError(e.to_string())))
            .transpose()
    }

    /// Knot configuration for a data domain.
    pub fn spec(&self, dom: &Domain) -> Result<TensorBasisSpec, UsageError> {
        let [k, l] = self.degrees.unwrap_or(DEFAULT_DEGREES);
        let [g, h] = self.knots.unwrap_or(DEFAULT_KNOTS);
        let axis = |lo, hi, explicit: &Option<Vec<f64>>, count, deg, name: &str| {
            match explicit {
                Some(t) => KnotConfig::new(lo, hi, t.clone(), deg),
                None => KnotConfig::uniform(lo, hi, count, deg),
            }
            .map_err(|e| UsageError(format!("{name} knots: {e}")))
        };
        Ok(TensorBasisSpec {
            x: axis(dom.a, dom.b, &self.x_knots, g, k, "x")?,
            y: axis(dom.c, dom.d, &self.y_knots, h, l, "y")?,
        })
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, UsageError> {
        let base = ExperimentConfig::default();
        let params = match self.alpha {
            Some([a0, a1, a2]) => {
                BetaParams::new(a0, a1, a2).map_err(|e| UsageError(format!("alpha: {e}")))?
            }
            None => base.params,
        };
        let [k, l] = self.degrees.unwrap_or(DEFAULT_DEGREES);
        let [p, q] = self.penalty.unwrap_or(DEFAULT_PENALTY);
        let [g, h] = self.knots.unwrap_or(DEFAULT_KNOTS);
        let (m, n) = self.bins()?;
        self.penalty(1.0)?;
        let cfg = ExperimentConfig {
            params,
            sample_size: self.sample_size.unwrap_or(base.sample_size),
            envelope: self.envelope.or(base.envelope),
            replicates: self.replicates.unwrap_or(base.replicates),
            seed: self.seed(),
            degrees: (k, l),
            penalty: (p, q),
            rho: self.rho()?.unwrap_or(base.rho),
            knots: (g, h),
            bins: (m, n),
            neighborhood: self.neighborhood(),
            ise_grid: self.ise_grid.unwrap_or(base.ise_grid),
        };
        if cfg.sample_size == 0 || cfg.replicates == 0 || cfg.ise_grid == 0 {
            return Err(UsageError(
                "sample_size, replicates and ise_grid must be positive".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn bin_sweep(&self) -> Vec<usize> {
        self.bin_sweep
            .clone()
            .unwrap_or_else(|| DEFAULT_BIN_SWEEP.to_vec())
    }

    pub fn knot_sweep(&self) -> Vec<usize> {
        self.knot_sweep
            .clone()
            .unwrap_or_else(|| DEFAULT_KNOT_SWEEP.to_vec())
    }
}
