//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Map, Value};
use zbspline::clr::{inv_clr_values, linspace, Mesh};
use zbspline::decomposition::decompose;
use zbspline::ingest::{
    build_histogram, impute_zeros, read_coefficients, read_histogram, read_samples,
    write_coefficients, write_grid, write_histogram, write_samples, ImputeStats,
};
use zbspline::simulate::{accept_reject, replicate_rng, run_bin_sweep, run_knot_sweep};
use zbspline::smoother::{mean_of_curves, GcvCurve};
use zbspline::{
    CoeffKind, CoefficientFile, Domain, FitResult, HistogramGrid, TensorBasis, TensorBasisSpec,
    ZBCoeffs,
};

use crate::config::RunConfig;
use crate::stats::coefficient_stats;
use crate::UsageError;

/// Output directory, written files and resolved settings of one run.
pub struct Run {
    pub command: String,
    pub out: PathBuf,
    pub files: Vec<String>,
    pub resolved: Map<String, Value>,
}

impl Run {
    pub fn new(command: &str, out: PathBuf) -> Self {
        Self {
            command: command.to_string(),
            out,
            files: Vec::new(),
            resolved: Map::new(),
        }
    }

    fn path(&mut self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating output directory {}", self.out.display()))?;
        self.files.push(name.to_string());
        Ok(self.out.join(name))
    }

    fn resolve<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.resolved
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name)?;
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    fn grid(&mut self, name: &str, mesh: &Mesh, values: &DMatrix<f64>) -> Result<()> {
        let path = self.path(name)?;
        write_grid(&path, &mesh.x, &mesh.y, values)?;
        Ok(())
    }

    fn coeffs(
        &mut self,
        name: &str,
        kind: CoeffKind,
        spec: &TensorBasisSpec,
        m: DMatrix<f64>,
    ) -> Result<()> {
        let path = self.path(name)?;
        write_coefficients(
            &path,
            &CoefficientFile {
                kind,
                spec: spec.clone(),
                matrix: m,
            },
        )?;
        Ok(())
    }

    /// Writes `manifest.json` with the merged config, the resolved settings
    /// and the list of outputs.
    pub fn manifest(&mut self, cfg: &RunConfig, error: Option<&str>) -> Result<()> {
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "status": if error.is_some() { "failed" } else { "ok" },
            "error": error,
            "config": cfg.effective(),
            "resolved": self.resolved,
            "outputs": self.files,
        });
        std::fs::create_dir_all(&self.out)?;
        let path = self.out.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// One histogram ready for smoothing.
struct Dataset {
    name: String,
    histogram: HistogramGrid,
    domain: Domain,
    imputation: ImputeStats,
}

fn require_files(paths: &[PathBuf]) -> Result<(), UsageError> {
    for p in paths {
        if !p.is_file() {
            return Err(UsageError(format!("input file not found: {}", p.display())));
        }
    }
    Ok(())
}

fn dataset_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn load_datasets(cfg: &RunConfig) -> Result<Vec<Dataset>> {
    let samples = cfg.samples.clone().unwrap_or_default();
    let histograms = cfg.histograms.clone().unwrap_or_default();
    if samples.is_empty() && histograms.is_empty() {
        return Err(UsageError("no input: give --samples or --histograms".into()).into());
    }
    require_files(&samples)?;
    require_files(&histograms)?;
    let domain = cfg.domain()?;
    let (m, n) = cfg.bins()?;
    let mut out = Vec::new();
    for p in &samples {
        let mut s = read_samples(p).with_context(|| format!("reading samples {}", p.display()))?;
        if let Some(d) = domain {
            s = s.with_range(d);
        }
        let binned =
            build_histogram(&s, m, n).with_context(|| format!("binning {}", p.display()))?;
        let (h, stats) = impute_zeros(&binned.histogram, cfg.neighborhood())
            .with_context(|| format!("imputing zero classes of {}", p.display()))?;
        out.push(Dataset {
            name: dataset_name(p),
            histogram: h,
            domain: binned.domain,
            imputation: stats,
        });
    }
    for p in &histograms {
        let raw =
            read_histogram(p).with_context(|| format!("reading histogram {}", p.display()))?;
        let (h, stats) = impute_zeros(&raw, cfg.neighborhood())
            .with_context(|| format!("imputing zero classes of {}", p.display()))?;
        let (a, b, c, d) = h.domain();
        let dom = match domain {
            Some(d) => d,
            None => Domain::new(a, b, c, d)?,
        };
        out.push(Dataset {
            name: dataset_name(p),
            histogram: h,
            domain: dom,
            imputation: stats,
        });
    }
    // fall back to full paths when file stems collide
    let all: Vec<&PathBuf> = samples.iter().chain(histograms.iter()).collect();
    for i in 0..out.len() {
        if out.iter().filter(|d| d.name == out[i].name).count() > 1 {
            out[i].name = all[i].display().to_string();
        }
    }
    Ok(out)
}

fn output_mesh(spec: &TensorBasisSpec, points: usize) -> Result<Mesh> {
    Ok(Mesh::trapezoid(
        linspace(spec.x.lo, spec.x.hi, points),
        linspace(spec.y.lo, spec.y.hi, points),
    )?)
}

/// Spline values and the corresponding density on the output mesh.
fn surfaces(
    basis: &TensorBasis,
    c: &ZBCoeffs,
    mesh: &Mesh,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let clr = basis.eval_zb(c, &mesh.x, &mesh.y)?;
    let density = inv_clr_values(mesh, &clr)?.values;
    Ok((clr, density))
}

fn write_curve(run: &mut Run, name: &str, columns: &[(String, &GcvCurve)]) -> Result<()> {
    let mut text = String::from("rho");
    for (label, _) in columns {
        text.push_str(&format!(",{label}"));
    }
    text.push('\n');
    let len = columns.first().map(|c| c.1.points.len()).unwrap_or(0);
    for i in 0..len {
        text.push_str(&format!("{}", columns[0].1.points[i].rho));
        for (_, curve) in columns {
            let g = curve.points[i].gcv;
            if g.is_finite() {
                text.push_str(&format!(",{g}"));
            } else {
                text.push_str(",NA");
            }
        }
        text.push('\n');
    }
    run.text(name, &text)
}

struct Fitted {
    basis: TensorBasis,
    fit: FitResult,
    curve: Option<GcvCurve>,
}

fn fit_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<Fitted> {
    let spec = cfg.spec(&ds.domain)?;
    let basis = TensorBasis::new(spec).context("building the spline basis")?;
    let h = &ds.histogram;
    let clr = zbspline::clr::discrete_clr(h).context("clr of the histogram")?;
    let pen = cfg.penalty(1.0)?;
    let problem = basis
        .problem(
            &clr.values,
            &h.x_mid,
            &h.y_mid,
            pen.p,
            pen.q,
            pen.marginal_penalty,
        )
        .with_context(|| format!("setting up the smoothing problem for {}", ds.name))?;
    let (rho, curve) = match cfg.rho()? {
        Some(r) => (r, None),
        None => {
            let curve = problem
                .gcv_scan(&cfg.rho_grid()?)
                .with_context(|| format!("GCV scan for {}", ds.name))?;
            (curve.best_rho, Some(curve))
        }
    };
    let fit = problem
        .solve(rho)
        .with_context(|| format!("solving the smoothing system for {}", ds.name))?;
    Ok(Fitted { basis, fit, curve })
}

fn single_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let mut data = load_datasets(cfg)?;
    if data.len() != 1 {
        return Err(UsageError(format!("expected one input dataset, got {}", data.len())).into());
    }
    Ok(data.remove(0))
}

pub fn fit(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let ds = single_dataset(cfg)?;
    let points = cfg.grid()?;
    let Fitted { basis, fit, curve } = fit_dataset(cfg, &ds)?;
    run.resolve("spec", &basis.spec)?;
    run.resolve("rho", &fit.rho)?;

    let spec = basis.spec.clone();
    run.coeffs(
        "zb_coefficients.csv",
        CoeffKind::Zb,
        &spec,
        fit.coeffs.packed(),
    )?;
    run.coeffs(
        "b_coefficients.csv",
        CoeffKind::B,
        &spec,
        basis.zb_to_b(&fit.coeffs)?.b,
    )?;
    let path = run.path("histogram.csv")?;
    write_histogram(&path, &ds.histogram)?;

    let mesh = output_mesh(&spec, points)?;
    let (clr, density) = surfaces(&basis, &fit.coeffs, &mesh)?;
    run.grid("clr_grid.csv", &mesh, &clr)?;
    run.grid("density_grid.csv", &mesh, &density)?;
    if let Some(c) = &curve {
        write_curve(run, "gcv_curve.csv", &[("gcv".to_string(), c)])?;
    }
    let summary = json!({
        "dataset": ds.name,
        "fit": fit.summary(),
        "rho_source": if curve.is_some() { "gcv" } else { "fixed" },
        "dimension": basis.dimension(),
        "bins": ds.histogram.shape(),
        "imputation": {
            "passes": ds.imputation.passes,
            "imputed_bins": ds.imputation.imputed_bins,
            "imputed_mass": ds.imputation.imputed_mass,
        },
        "density_integral": mesh.integrate(&density),
    });
    run.json("summary.json", &summary)
}

pub fn decompose_cmd(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let points = cfg.grid()?;
    let (basis, coeffs) = match cfg.coefficients.as_deref() {
        Some([path]) => {
            require_files(std::slice::from_ref(path))?;
            let file = read_coefficients(path)
                .with_context(|| format!("reading coefficients {}", path.display()))?;
            if file.kind != CoeffKind::Zb {
                return Err(UsageError(format!(
                    "{} holds '{}' coefficients, decompose needs 'zb'",
                    path.display(),
                    file.kind.as_str()
                ))
                .into());
            }
            let basis = TensorBasis::new(file.spec).context("building the spline basis")?;
            let coeffs = ZBCoeffs::from_packed(&file.matrix).context("unpacking coefficients")?;
            (basis, coeffs)
        }
        Some(list) if list.len() > 1 => {
            return Err(UsageError("decompose takes a single coefficient file".into()).into())
        }
        _ => {
            let ds = single_dataset(cfg)?;
            let f = fit_dataset(cfg, &ds)?;
            run.resolve("rho", &f.fit.rho)?;
            (f.basis, f.fit.coeffs)
        }
    };
    run.resolve("spec", &basis.spec)?;
    let parts = decompose(&basis, &coeffs).context("decomposing the spline")?;
    let spec = basis.spec.clone();
    run.coeffs(
        "interactive.csv",
        CoeffKind::Interactive,
        &spec,
        parts.interactive.clone(),
    )?;
    let col = |v: &nalgebra::DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
    run.coeffs(
        "marginal_x.csv",
        CoeffKind::MarginalX,
        &spec,
        col(&parts.marginal_x),
    )?;
    run.coeffs(
        "marginal_y.csv",
        CoeffKind::MarginalY,
        &spec,
        col(&parts.marginal_y),
    )?;

    let mesh = output_mesh(&spec, points)?;
    for (name, c) in [
        ("interactive", parts.interactive_coeffs()),
        ("independent", parts.independent_coeffs()),
    ] {
        let (clr, density) = surfaces(&basis, &c, &mesh)?;
        run.grid(&format!("{name}_clr.csv"), &mesh, &clr)?;
        run.grid(&format!("{name}_density.csv"), &mesh, &density)?;
    }
    run.json("norms.json", &parts.summary())
}

pub fn gcv(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let data = load_datasets(cfg)?;
    let grid = cfg.rho_grid()?;
    let pen = cfg.penalty(1.0)?;
    run.resolve("rho_grid", &grid)?;
    let mut curves = Vec::new();
    for ds in &data {
        let spec = cfg.spec(&ds.domain)?;
        let basis = TensorBasis::new(spec).context("building the spline basis")?;
        let h = &ds.histogram;
        let clr = zbspline::clr::discrete_clr(h)?;
        let curve = basis
            .problem(
                &clr.values,
                &h.x_mid,
                &h.y_mid,
                pen.p,
                pen.q,
                pen.marginal_penalty,
            )
            .and_then(|p| p.gcv_scan(&grid))
            .with_context(|| format!("GCV scan for {}", ds.name))?;
        curves.push((ds.name.clone(), curve));
    }
    let mean = if curves.len() > 1 {
        Some(mean_of_curves(
            &curves.iter().map(|c| c.1.clone()).collect::<Vec<_>>(),
        )?)
    } else {
        None
    };
    let mut columns: Vec<(String, &GcvCurve)> =
        curves.iter().map(|(n, c)| (n.clone(), c)).collect();
    if let Some(m) = &mean {
        columns.push(("mean".to_string(), m));
    }
    write_curve(run, "gcv_curves.csv", &columns)?;
    let per: Vec<Value> = curves
        .iter()
        .map(|(n, c)| json!({"dataset": n, "best_rho": c.best_rho, "best_gcv": c.best_gcv()}))
        .collect();
    let summary = json!({
        "datasets": per,
        "mean": mean.as_ref().map(|m| json!({"best_rho": m.best_rho, "best_gcv": m.best_gcv()})),
    });
    run.json("gcv_summary.json", &summary)
}

pub fn simulate(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let exp = cfg.experiment()?;
    let bin_sweep = cfg.bin_sweep();
    let knot_sweep = cfg.knot_sweep();
    let envelope = exp
        .resolve_envelope()
        .context("estimating the envelope constant")?;
    run.resolve("experiment", &exp)?;
    run.resolve("envelope", &envelope)?;

    let (sample, stats) = accept_reject(
        &exp.params,
        exp.sample_size,
        envelope,
        &mut replicate_rng(exp.seed, 0),
    )
    .context("drawing replicate 0")?;
    let path = run.path("samples.csv")?;
    write_samples(&path, &sample)?;
    let binned = build_histogram(&sample, exp.bins.0, exp.bins.1)?;
    let path = run.path("histogram.csv")?;
    write_histogram(&path, &binned.histogram)?;

    let mut summary = json!({
        "replicate_0": {
            "proposals": stats.proposals,
            "accepted": stats.accepted,
            "accept_rate": stats.rate,
            "max_density_seen": stats.max_density,
        },
        "envelope": envelope,
    });
    if !bin_sweep.is_empty() {
        let table = run_bin_sweep(&exp, &bin_sweep).context("bin sweep")?;
        run.text("ise_bins.csv", &table.to_csv())?;
        summary["bin_sweep"] = serde_json::to_value(table.summary())?;
    }
    if !knot_sweep.is_empty() {
        let table = run_knot_sweep(&exp, &knot_sweep).context("knot sweep")?;
        run.text("ise_knots.csv", &table.to_csv())?;
        summary["knot_sweep"] = serde_json::to_value(table.summary())?;
    }
    run.json("simulation_summary.json", &summary)
}

pub fn group_stats(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    let paths = cfg.coefficients.clone().unwrap_or_default();
    if paths.len() < 2 {
        return Err(UsageError("group-stats needs at least two coefficient files".into()).into());
    }
    require_files(&paths)?;
    let points = cfg.grid()?;
    let mut files = Vec::with_capacity(paths.len());
    for p in &paths {
        let f = read_coefficients(p)
            .with_context(|| format!("reading coefficients {}", p.display()))?;
        if f.kind != CoeffKind::Zb {
            bail!(UsageError(format!(
                "{} holds '{}' coefficients, group-stats needs 'zb'",
                p.display(),
                f.kind.as_str()
            )));
        }
        files.push(f);
    }
    let spec = files[0].spec.clone();
    if let Some((p, _)) = paths.iter().zip(&files).find(|(_, f)| f.spec != spec) {
        bail!(UsageError(format!(
            "{} uses a different knot configuration than {}",
            p.display(),
            paths[0].display()
        )));
    }
    run.resolve("spec", &spec)?;
    let coeffs = files
        .iter()
        .map(|f| ZBCoeffs::from_packed(&f.matrix))
        .collect::<zbspline::Result<Vec<_>>>()?;
    let (mean, sd) = coefficient_stats(&coeffs)?;
    let basis = TensorBasis::new(spec.clone())?;
    run.coeffs("mean_zb.csv", CoeffKind::Zb, &spec, mean.packed())?;
    run.coeffs("sd_zb.csv", CoeffKind::Zb, &spec, sd.packed())?;
    let mesh = output_mesh(&spec, points)?;
    for (name, c) in [("mean", &mean), ("sd", &sd)] {
        let (clr, density) = surfaces(&basis, c, &mesh)?;
        run.grid(&format!("{name}_clr.csv"), &mesh, &clr)?;
        run.grid(&format!("{name}_density.csv"), &mesh, &density)?;
    }
    let names: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
    run.json(
        "group_summary.json",
        &json!({"files": names, "count": coeffs.len()}),
    )
}
