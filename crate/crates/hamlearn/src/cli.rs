//! Experiment runner: config parsing and validation, sweep orchestration with
//! bounded parallelism, CSV/manifest persistence, and table rendering.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmarks::{
    self, CellReport, DatasetOptions, ExperimentOptions, GridKind, Method, SystemId,
};
use crate::dynamics::IntegratorOptions;
use crate::kernels::KernelSpec;
use crate::one_step::GradientMode;
use crate::Ridges;

pub const ERRORS_FILE: &str = "errors.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ERRORS_HEADER: &str =
    "system,kernel,method,sparsity,variable,phase,mean,std,n_seeds,n_diverged";
pub const SEED_OFFSET_ENV: &str = "HAMLEARN_SEED_OFFSET";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("results error: {0}")]
    Results(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Seeds as an explicit list or a count expanding to `0..count`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(u64),
    List(Vec<u64>),
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Count(10)
    }
}

impl SeedSpec {
    pub fn resolve(&self, offset: u64) -> Vec<u64> {
        match self {
            SeedSpec::Count(n) => (0..*n).map(|s| s + offset).collect(),
            SeedSpec::List(list) => list.iter().map(|s| s + offset).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: Option<f64>,
    pub dense_output: bool,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        let opts = IntegratorOptions::default();
        IntegratorSettings {
            rtol: opts.rtol,
            atol: opts.atol,
            max_step: opts.max_step,
            dense_output: opts.dense_output,
        }
    }
}

impl From<IntegratorSettings> for IntegratorOptions {
    fn from(s: IntegratorSettings) -> Self {
        IntegratorOptions {
            rtol: s.rtol,
            atol: s.atol,
            max_step: s.max_step,
            dense_output: s.dense_output,
        }
    }
}

fn default_n_points() -> usize {
    200
}

fn default_t_final() -> f64 {
    40.0
}

fn default_true() -> bool {
    true
}

/// Sweep description parsed from a JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub systems: Vec<SystemId>,
    pub kernels: Vec<KernelSpec>,
    pub methods: Vec<Method>,
    pub sparsities: Vec<f64>,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub ridges: Ridges,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default = "default_t_final")]
    pub t_final: f64,
    #[serde(default)]
    pub random_time_grid: bool,
    #[serde(default)]
    pub gradient_mode: GradientMode,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub dump_trajectories: bool,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.systems.is_empty() {
            return fail("systems list is empty".into());
        }
        if self.kernels.is_empty() {
            return fail("kernels list is empty".into());
        }
        if self.methods.is_empty() {
            return fail("methods list is empty".into());
        }
        if self.sparsities.is_empty() {
            return fail("sparsities list is empty".into());
        }
        for &s in &self.sparsities {
            if !(0.0..1.0).contains(&s) {
                return fail(format!("sparsity {s} outside [0, 1)"));
            }
        }
        for kernel in &self.kernels {
            kernel
                .validate()
                .map_err(|e| CliError::Config(format!("kernel {}: {e}", kernel.family_name())))?;
            if !kernel.is_state_kernel() {
                return fail(format!(
                    "kernel {} cannot represent a Hamiltonian over states",
                    kernel.family_name()
                ));
            }
            for system in &self.systems {
                if !system
                    .admissible_state_kernels()
                    .contains(&kernel.family_name())
                {
                    return fail(format!(
                        "kernel {} is not admissible for system {}",
                        kernel.family_name(),
                        system.name()
                    ));
                }
            }
        }
        if self.seeds.resolve(0).is_empty() {
            return fail("seeds resolve to an empty list".into());
        }
        if self.n_points < 2 {
            return fail(format!(
                "n_points must be at least 2, got {}",
                self.n_points
            ));
        }
        if !(self.t_final > 0.0) {
            return fail(format!("t_final must be positive, got {}", self.t_final));
        }
        for (name, v) in [
            ("lambda_q", self.ridges.lambda_q),
            ("lambda_p", self.ridges.lambda_p),
            ("lambda1", self.ridges.lambda1),
            ("lambda2", self.ridges.lambda2),
            ("lambda", self.ridges.lambda),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!(
                    "ridge {name} must be a nonnegative finite real, got {v}"
                ));
            }
        }
        if !(self.integrator.rtol > 0.0) || !(self.integrator.atol > 0.0) {
            return fail("integrator tolerances must be positive".into());
        }
        Ok(())
    }

    fn experiment_options(&self) -> ExperimentOptions {
        ExperimentOptions {
            dataset: DatasetOptions {
                n_points: self.n_points,
                t_final: self.t_final,
                grid: if self.random_time_grid {
                    GridKind::RandomUniform
                } else {
                    GridKind::Equispaced
                },
                integrator: self.integrator.into(),
            },
            time_kernel: KernelSpec::GaussianTime { lengthscale: 1.0 },
            forecast_integrator: self.integrator.into(),
            gradient_mode: self.gradient_mode,
            minimize: crate::one_step::MinimizeOptions::default(),
            keep_trajectories: self.dump_trajectories,
        }
    }

    /// Sweep cells in deterministic config order.
    pub fn cells(&self) -> Vec<(SystemId, KernelSpec, Method, f64)> {
        let mut cells = Vec::new();
        for &system in &self.systems {
            for &kernel in &self.kernels {
                for &method in &self.methods {
                    for &sparsity in &self.sparsities {
                        cells.push((system, kernel, method, sparsity));
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub cells_ok: usize,
    pub cells_failed: usize,
    pub seed_failures: usize,
    pub exit_code: i32,
}

#[derive(Serialize)]
struct ManifestCell {
    system: &'static str,
    kernel: &'static str,
    method: &'static str,
    sparsity: f64,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    n_seeds: usize,
    n_diverged: usize,
    seed_failures: Vec<(u64, String)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    wall_time_seconds: f64,
    seed_offset: u64,
    config: &'a ExperimentConfig,
    cells: Vec<ManifestCell>,
}

/// Runs the sweep into `out_dir`, writing `errors.csv`, per-run trajectory
/// dumps, and a manifest. Every file lands inside `out_dir`. Cell order,
/// aggregation, and float formatting are deterministic, so identical configs
/// and seeds produce byte-identical errors files.
pub fn run_sweep(
    config: &ExperimentConfig,
    jobs: Option<usize>,
    out_dir: &Path,
    seed_offset: u64,
) -> Result<RunSummary, CliError> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let started = Instant::now();
    let seeds = config.seeds.resolve(seed_offset);
    let opts = config.experiment_options();
    let cells = config.cells();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    let ridges = config.ridges;
    let results: Vec<Result<CellReport, String>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(system, kernel, method, sparsity)| {
                benchmarks::run_experiment(
                    system, &kernel, method, sparsity, &seeds, &ridges, &opts,
                )
                .map_err(|e| e.to_string())
            })
            .collect()
    });

    // errors.csv, 4 rows per successful cell, in sweep order
    let mut csv = String::from(ERRORS_HEADER);
    csv.push('\n');
    for (idx, result) in results.iter().enumerate() {
        let (system, kernel, method, sparsity) = cells[idx];
        if let Ok(report) = result {
            for (variable, phase, stats) in [
                ("q", "interpolation", report.interp_q),
                ("q", "extrapolation", report.extrap_q),
                ("p", "interpolation", report.interp_p),
                ("p", "extrapolation", report.extrap_p),
            ] {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    system.name(),
                    kernel.family_name(),
                    method.name(),
                    sparsity,
                    variable,
                    phase,
                    stats.mean,
                    stats.std,
                    report.n_seeds,
                    report.n_diverged
                ));
            }
        }
    }
    std::fs::write(out_dir.join(ERRORS_FILE), csv)?;

    // per-run trajectory dumps
    if config.dump_trajectories {
        for (idx, result) in results.iter().enumerate() {
            let (system, kernel, method, sparsity) = cells[idx];
            if let Ok(report) = result {
                for traj in &report.trajectories {
                    let name = format!(
                        "traj_{}_{}_{}_{}_{}.csv",
                        system.name(),
                        kernel.family_name(),
                        method.name(),
                        sparsity,
                        traj.seed
                    );
                    let mut file =
                        std::io::BufWriter::new(std::fs::File::create(out_dir.join(name))?);
                    let dim = traj.truth_col.ncols();
                    write!(file, "t")?;
                    for c in 0..dim {
                        write!(file, ",truth_{}", c + 1)?;
                    }
                    for c in 0..dim {
                        write!(file, ",pred_{}", c + 1)?;
                    }
                    writeln!(file, ",observed_flag")?;
                    let mut observed_flags = vec![0u8; traj.t_col.len()];
                    for &i in &traj.observed {
                        observed_flags[i] = 1;
                    }
                    for (r, &t) in traj.t_col.iter().enumerate() {
                        write!(file, "{t}")?;
                        for c in 0..dim {
                            write!(file, ",{}", traj.truth_col[(r, c)])?;
                        }
                        for c in 0..dim {
                            write!(file, ",{}", traj.pred_col[(r, c)])?;
                        }
                        writeln!(file, ",{}", observed_flags[r])?;
                    }
                    for (r, &t) in traj.t_ext.iter().enumerate() {
                        write!(file, "{t}")?;
                        for c in 0..dim {
                            write!(file, ",{}", traj.truth_ext[(r, c)])?;
                        }
                        for c in 0..dim {
                            write!(file, ",{}", traj.pred_ext[(r, c)])?;
                        }
                        writeln!(file, ",0")?;
                    }
                }
            }
        }
    }

    // manifest with config echo and per-cell status
    let manifest_cells: Vec<ManifestCell> = results
        .iter()
        .enumerate()
        .map(|(idx, result)| {
            let (system, kernel, method, sparsity) = cells[idx];
            match result {
                Ok(report) => ManifestCell {
                    system: system.name(),
                    kernel: kernel.family_name(),
                    method: method.name(),
                    sparsity,
                    status: if report.failures.is_empty() {
                        "ok"
                    } else {
                        "partial"
                    },
                    error: None,
                    n_seeds: report.n_seeds,
                    n_diverged: report.n_diverged,
                    seed_failures: report.failures.clone(),
                },
                Err(e) => ManifestCell {
                    system: system.name(),
                    kernel: kernel.family_name(),
                    method: method.name(),
                    sparsity,
                    status: "failed",
                    error: Some(e.clone()),
                    n_seeds: 0,
                    n_diverged: 0,
                    seed_failures: Vec::new(),
                },
            }
        })
        .collect();
    let cells_failed = manifest_cells
        .iter()
        .filter(|c| c.status == "failed")
        .count();
    let seed_failures = manifest_cells.iter().map(|c| c.seed_failures.len()).sum();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        seed_offset,
        config,
        cells: manifest_cells,
    };
    std::fs::write(
        out_dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Results(e.to_string()))?,
    )?;

    let cells_ok = cells.len() - cells_failed;
    let exit_code = if cells_ok == 0 {
        3
    } else if cells_failed > 0 || seed_failures > 0 {
        2
    } else {
        0
    };
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        cells_ok,
        cells_failed,
        seed_failures,
        exit_code,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Pretty,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pretty" => Ok(TableFormat::Pretty),
            "csv" => Ok(TableFormat::Csv),
            other => Err(format!(
                "unknown table format {other:?} (expected pretty|csv)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub system: String,
    pub kernel: String,
    pub method: String,
    pub sparsity: f64,
    pub variable: String,
    pub phase: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
    pub n_diverged: usize,
}

/// Parses an errors file back into rows.
pub fn parse_errors_csv(text: &str) -> Result<Vec<ErrorRow>, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Results("errors file is empty".into()))?;
    if header != ERRORS_HEADER {
        return Err(CliError::Results(format!("unexpected header: {header}")));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(CliError::Results(format!(
                "line {}: expected 10 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str, what: &str| -> Result<f64, CliError> {
            s.parse()
                .map_err(|e| CliError::Results(format!("line {}: bad {what}: {e}", lineno + 2)))
        };
        let parse_u = |s: &str, what: &str| -> Result<usize, CliError> {
            s.parse()
                .map_err(|e| CliError::Results(format!("line {}: bad {what}: {e}", lineno + 2)))
        };
        rows.push(ErrorRow {
            system: fields[0].to_string(),
            kernel: fields[1].to_string(),
            method: fields[2].to_string(),
            sparsity: parse_f(fields[3], "sparsity")?,
            variable: fields[4].to_string(),
            phase: fields[5].to_string(),
            mean: parse_f(fields[6], "mean")?,
            std: parse_f(fields[7], "std")?,
            n_seeds: parse_u(fields[8], "n_seeds")?,
            n_diverged: parse_u(fields[9], "n_diverged")?,
        });
    }
    Ok(rows)
}

/// Rounds to 6 significant digits for table display.
fn format_sig(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Renders the per-sparsity grid of both methods and phases from a results
/// directory. `Csv` re-emits rows in the errors schema.
pub fn render_table(results_dir: &Path, format: TableFormat) -> Result<String, CliError> {
    let path = results_dir.join(ERRORS_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Results(format!("cannot read {}: {e}", path.display())))?;
    let rows = parse_errors_csv(&text)?;
    if format == TableFormat::Csv {
        let mut out = String::from(ERRORS_HEADER);
        out.push('\n');
        for r in &rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.system,
                r.kernel,
                r.method,
                r.sparsity,
                r.variable,
                r.phase,
                r.mean,
                r.std,
                r.n_seeds,
                r.n_diverged
            ));
        }
        return Ok(out);
    }

    // group by (system, kernel, variable), one grid per group
    let mut groups: Vec<(String, String, String)> = rows
        .iter()
        .map(|r| (r.system.clone(), r.kernel.clone(), r.variable.clone()))
        .collect();
    groups.sort();
    groups.dedup();

    let mut out = String::new();
    for (system, kernel, variable) in groups {
        let mut sparsities: Vec<f64> = rows
            .iter()
            .filter(|r| r.system == system && r.kernel == kernel && r.variable == variable)
            .map(|r| r.sparsity)
            .collect();
        sparsities.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sparsities.dedup();

        out.push_str(&format!(
            "# {} / {} / variable {}\n",
            system, kernel, variable
        ));
        out.push_str(&format!(
            "{:<10} {:<28} {:<28} {:<28} {:<28}\n",
            "sparsity",
            "two_step interpolation",
            "two_step extrapolation",
            "one_step interpolation",
            "one_step extrapolation"
        ));
        for &sparsity in &sparsities {
            let cell = |method: &str, phase: &str| -> String {
                rows.iter()
                    .find(|r| {
                        r.system == system
                            && r.kernel == kernel
                            && r.variable == variable
                            && r.method == method
                            && r.phase == phase
                            && r.sparsity == sparsity
                    })
                    .map(|r| format!("{} ± {}", format_sig(r.mean), format_sig(r.std)))
                    .unwrap_or_else(|| "—".into())
            };
            out.push_str(&format!(
                "{:<10} {:<28} {:<28} {:<28} {:<28}\n",
                sparsity,
                cell("two_step", "interpolation"),
                cell("two_step", "extrapolation"),
                cell("one_step", "interpolation"),
                cell("one_step", "extrapolation")
            ));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> ExperimentConfig {
        ExperimentConfig {
            systems: vec![SystemId::MassSpring],
            kernels: vec![KernelSpec::gaussian_state(1.0).unwrap()],
            methods: vec![Method::TwoStep],
            sparsities: vec![0.0],
            seeds: SeedSpec::List(vec![0]),
            ridges: Ridges::default(),
            integrator: IntegratorSettings::default(),
            n_points: 30,
            t_final: 8.0,
            random_time_grid: false,
            gradient_mode: GradientMode::Full,
            output_dir: None,
            dump_trajectories: false,
        }
    }

    #[test]
    fn validates_empty_lists_and_ranges() {
        let mut config = minimal_config();
        config.systems.clear();
        assert!(config.validate().is_err());

        let mut config = minimal_config();
        config.sparsities = vec![1.0];
        assert!(config.validate().is_err());

        let mut config = minimal_config();
        config.kernels = vec![KernelSpec::GaussianTime { lengthscale: 1.0 }];
        assert!(config.validate().is_err());

        let mut config = minimal_config();
        config.kernels = vec![KernelSpec::separable_polynomial(3, 1.0).unwrap()];
        config.systems = vec![SystemId::Pendulum];
        assert!(config.validate().is_err());

        assert!(minimal_config().validate().is_ok());
    }

    #[test]
    fn config_json_round_trip_with_defaults() {
        let text = r#"{
            "systems": ["mass_spring"],
            "kernels": [{"family": "gaussian_state", "lengthscale": 1.0}],
            "methods": ["two_step", "one_step"],
            "sparsities": [0.0, 0.5]
        }"#;
        let config: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert!(config.validate().is_ok());
        assert_eq!(config.n_points, 200);
        assert_eq!(config.t_final, 40.0);
        assert_eq!(config.seeds.resolve(0).len(), 10);
        assert_eq!(config.ridges, Ridges::default());
        let echoed = serde_json::to_string(&config).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&echoed).unwrap();
        assert_eq!(back.sparsities, config.sparsities);
    }

    #[test]
    fn seed_spec_resolution_and_offset() {
        assert_eq!(SeedSpec::Count(3).resolve(0), vec![0, 1, 2]);
        assert_eq!(SeedSpec::Count(3).resolve(100), vec![100, 101, 102]);
        assert_eq!(SeedSpec::List(vec![5, 9]).resolve(10), vec![15, 19]);
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(format_sig(0.222146), "0.222146");
        assert_eq!(format_sig(141.40723), "141.407");
        assert_eq!(format_sig(0.0), "0.00000");
        assert_eq!(format_sig(1.5), "1.50000");
        assert_eq!(format_sig(f64::INFINITY), "inf");
    }

    #[test]
    fn errors_csv_parse_rejects_bad_shapes() {
        assert!(parse_errors_csv("").is_err());
        assert!(parse_errors_csv("bad,header\n").is_err());
        let good = format!("{ERRORS_HEADER}\nmass_spring,gaussian_state,two_step,0.5,q,interpolation,0.1,0.01,10,0\n");
        let rows = parse_errors_csv(&good).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n_seeds, 10);
        let bad = format!("{ERRORS_HEADER}\nmass_spring,gaussian_state,two_step,0.5,q\n");
        assert!(parse_errors_csv(&bad).is_err());
    }
}
