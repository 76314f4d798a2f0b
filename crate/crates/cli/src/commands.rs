//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ganvert_core::analysis::{evaluate_interpolation, slerp_cycle};
use ganvert_core::inversion::IterationRecord;
use ganvert_core::{
    ensemble_stats, simulate, synthesize_observations, threshold_facies, well_connectivity, ConnectivityOptions,
    DecoderWeights, Grid2, Histogram, InversionProblem, InversionTrace, LatentVector, ModelGrid, ObservationSeries,
    Scenario, SimSetup, StopReason,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    ensure_dir, member_dir, read_ggrd, read_observations, series_csv, write_ggrd, write_json, write_text, Table,
};
use crate::config::AppConfig;
use crate::plot;

pub const OBSERVATIONS: &str = "observations.json";
pub const MEMBERS_CSV: &str = "members.csv";
pub const ENSEMBLE_FACIES: &str = "facies.ggrd";

/// Outcome of a batch command, written as `run_report.json`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub artifacts: Vec<PathBuf>,
    /// Members that did not produce complete artifacts.
    pub failed: Vec<FailedMember>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedMember {
    pub seed: u64,
    pub error: String,
}

impl RunReport {
    fn new(command: &str) -> Self {
        Self { command: command.into(), ..Self::default() }
    }

    fn finish(self, dir: &Path) -> Result<Self> {
        write_json(&dir.join("run_report.json"), &self)?;
        if !self.failed.is_empty() {
            bail!(
                "{} of the ensemble members failed (see {}): {}",
                self.failed.len(),
                dir.join("run_report.json").display(),
                self.failed.iter().map(|f| format!("seed {}: {}", f.seed, f.error)).collect::<Vec<_>>().join("; ")
            );
        }
        Ok(self)
    }
}

fn model_record(m: &ModelGrid) -> Vec<&Grid2> {
    vec![&m.facies, &m.permeability, &m.porosity]
}

/// Reference model and noisy observations defined by the configuration.
pub fn reference_case(cfg: &AppConfig, weights: &DecoderWeights) -> Result<(ModelGrid, ObservationSeries)> {
    let setup = cfg.setup();
    let z = weights.sample_latent(&mut ChaCha8Rng::seed_from_u64(cfg.reference.latent_seed));
    let reference = weights.forward(&z)?.model;
    let obs = synthesize_observations(
        &reference,
        &setup,
        Some(&cfg.noise_model()),
        &mut ChaCha8Rng::seed_from_u64(cfg.reference.noise_seed),
    )
    .context("simulating the reference model")?;
    Ok((reference, obs))
}

pub fn make_obs(cfg: &AppConfig) -> Result<RunReport> {
    let out = &cfg.output_dir;
    let weights = cfg.decoder()?;
    let (reference, obs) = reference_case(cfg, &weights)?;
    let mut report = RunReport::new("make-obs");
    let paths = [out.join("reference.ggrd"), out.join(OBSERVATIONS), out.join("observations.csv")];
    write_ggrd(&paths[0], &[model_record(&reference)])?;
    write_json(&paths[1], &obs)?;
    write_text(&paths[2], &series_csv(&obs))?;
    report.artifacts.extend(paths);
    report.finish(out)
}

fn problem(cfg: &AppConfig, obs_path: Option<&Path>) -> Result<InversionProblem> {
    let weights = cfg.decoder()?;
    let obs = match obs_path {
        Some(p) => read_observations(p)?,
        None => reference_case(cfg, &weights)?.1,
    };
    Ok(InversionProblem::new(weights, cfg.setup(), obs, cfg.noise_model())?)
}

fn loss_row(seed: u64, r: &IterationRecord) -> String {
    format!("{seed},{},{},{},{},{}", r.loss.flow, r.loss.well, r.loss.prior, r.loss.total, r.accuracy)
}

/// Unconditional ensemble: losses of each prior draw and its facies map.
pub fn sample_prior(cfg: &AppConfig, obs_path: Option<&Path>) -> Result<RunReport> {
    let out = cfg.output_dir.join("prior");
    ensure_dir(&out)?;
    let problem = problem(cfg, obs_path)?;
    let seeds = cfg.member_seeds();
    let results: Vec<Result<(IterationRecord, Grid2)>> = seeds
        .par_iter()
        .map(|&s| {
            let z = problem.initial_latent(s);
            let ev = problem.evaluate(&z, Scenario::Prior, false)?;
            Ok((IterationRecord { iter: 0, loss: ev.loss, accuracy: ev.accuracy, z: z.0 }, ev.decoded.facies_prob))
        })
        .collect();
    let mut report = RunReport::new("sample-prior");
    let mut csv = String::from("seed,flow,well,prior,total,accuracy\n");
    let mut grids = Vec::new();
    for (&seed, r) in seeds.iter().zip(results) {
        match r {
            Ok((rec, facies)) => {
                csv.push_str(&loss_row(seed, &rec));
                csv.push('\n');
                grids.push(facies);
            }
            Err(e) => report.failed.push(FailedMember { seed, error: format!("{e:#}") }),
        }
    }
    write_text(&out.join(MEMBERS_CSV), &csv)?;
    write_ggrd(&out.join(ENSEMBLE_FACIES), &grids.iter().map(|g| vec![g]).collect::<Vec<_>>())?;
    report.artifacts.extend([out.join(MEMBERS_CSV), out.join(ENSEMBLE_FACIES)]);
    report.finish(&out)
}

/// JSON-lines trace: one object per iteration and a closing summary.
pub fn trace_jsonl(trace: &InversionTrace) -> Result<String> {
    let mut s = String::new();
    for r in &trace.records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    s.push_str(&serde_json::to_string(&serde_json::json!({ "summary": trace.summary() }))?);
    s.push('\n');
    Ok(s)
}

fn stop_label(s: &StopReason) -> String {
    match s {
        StopReason::SingleEvaluation => "single_evaluation".into(),
        StopReason::WellAccuracyReached => "well_accuracy_reached".into(),
        StopReason::MaxIterations => "max_iterations".into(),
        StopReason::ForwardFailed { iteration, .. } => format!("forward_failed@{iteration}"),
        StopReason::NonFiniteGradient { iteration } => format!("non_finite_gradient@{iteration}"),
    }
}

pub fn scenario_dir(root: &Path, scenario: Scenario) -> PathBuf {
    root.join(format!("scenario{}", scenario.number()))
}

/// Scenario 2 to 4 ensemble: per-member traces, best latent and best model.
pub fn invert(cfg: &AppConfig, obs_path: Option<&Path>) -> Result<RunReport> {
    let scenario = cfg.scenario()?;
    if scenario == Scenario::Prior {
        return sample_prior(cfg, obs_path);
    }
    let out = scenario_dir(&cfg.output_dir, scenario);
    ensure_dir(&out)?;
    let problem = problem(cfg, obs_path)?;
    write_json(&out.join(OBSERVATIONS), &problem.obs)?;
    let seeds = cfg.member_seeds();
    let traces = problem.run_ensemble(scenario, &cfg.adam, &seeds);
    let mut report = RunReport::new("invert");
    let mut csv = String::from("seed,best_iteration,flow,well,prior,total,accuracy,iterations,stop_reason\n");
    let mut best_facies = Vec::new();
    for (&seed, trace) in seeds.iter().zip(traces) {
        let dir = member_dir(&out, seed);
        let trace = match trace {
            Ok(t) => t,
            Err(e) => {
                report.failed.push(FailedMember { seed, error: e.to_string() });
                continue;
            }
        };
        write_text(&dir.join("trace.jsonl"), &trace_jsonl(&trace)?)?;
        report.artifacts.push(dir.join("trace.jsonl"));
        let Some(best) = trace.best() else {
            report.failed.push(FailedMember { seed, error: format!("no iterations ({})", stop_label(&trace.stop_reason)) });
            continue;
        };
        let z = LatentVector(best.z.clone());
        let decoded = problem.weights.forward(&z)?;
        write_json(&dir.join("best_latent.json"), &z)?;
        write_ggrd(&dir.join("best.ggrd"), &[model_record(&decoded.model)])?;
        report.artifacts.extend([dir.join("best_latent.json"), dir.join("best.ggrd")]);
        csv.push_str(&format!(
            "{seed},{},{},{},{},{},{},{},{}\n",
            trace.best_iteration,
            best.loss.flow,
            best.loss.well,
            best.loss.prior,
            best.loss.total,
            best.accuracy,
            trace.records.len(),
            stop_label(&trace.stop_reason)
        ));
        best_facies.push(decoded.facies_prob);
        if let StopReason::ForwardFailed { iteration, message } = &trace.stop_reason {
            report.failed.push(FailedMember { seed, error: format!("forward run failed at iteration {iteration}: {message}") });
        }
    }
    write_text(&out.join(MEMBERS_CSV), &csv)?;
    write_ggrd(&out.join(ENSEMBLE_FACIES), &best_facies.iter().map(|g| vec![g]).collect::<Vec<_>>())?;
    report.artifacts.extend([out.join(MEMBERS_CSV), out.join(ENSEMBLE_FACIES)]);
    report.finish(&out)
}

/// Model to simulate: a GGRD facies record, a uniform facies value, or the reference.
pub enum ModelSource {
    File(PathBuf),
    Homogeneous(f64),
    Reference,
}

pub fn simulate_cmd(cfg: &AppConfig, source: ModelSource) -> Result<RunReport> {
    let setup: SimSetup = cfg.setup();
    let t = cfg.transform;
    let (nx, nz) = (setup.geometry.nx, setup.geometry.nz);
    let model = match source {
        ModelSource::Homogeneous(p) => {
            if !(0.0..=1.0).contains(&p) {
                bail!("facies value {p} outside [0, 1]");
            }
            ModelGrid::homogeneous(nx, nz, p, &t)
        }
        ModelSource::File(path) => {
            let recs = read_ggrd(&path)?;
            let rec = recs.first().with_context(|| format!("{} holds no records", path.display()))?;
            let f = &rec[0];
            if (f.nx(), f.nz()) != (nx, nz) {
                bail!("{} is {}×{}, the configured grid is {nx}×{nz}", path.display(), f.nx(), f.nz());
            }
            if rec.len() >= 3 {
                ModelGrid { facies: rec[0].clone(), permeability: rec[1].clone(), porosity: rec[2].clone() }
            } else {
                ModelGrid { permeability: f.map(|p| t.permeability(p)), porosity: f.map(|p| t.porosity(p)), facies: f.clone() }
            }
        }
        ModelSource::Reference => reference_case_model(cfg)?,
    };
    let sim = simulate(&model, &setup).context("forward simulation")?;
    let out = &cfg.output_dir;
    let mut report = RunReport::new("simulate");
    let last = sim.states.last().unwrap_or(&sim.initial);
    let paths = [out.join("simulation.csv"), out.join("final_state.ggrd")];
    write_text(&paths[0], &sim.to_csv())?;
    write_ggrd(&paths[1], &[vec![&last.pressure, &last.s_w]])?;
    report.artifacts.extend(paths);
    report.finish(out)
}

fn reference_case_model(cfg: &AppConfig) -> Result<ModelGrid> {
    let weights = cfg.decoder()?;
    let z = weights.sample_latent(&mut ChaCha8Rng::seed_from_u64(cfg.reference.latent_seed));
    Ok(weights.forward(&z)?.model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Fraction of cells with ensemble mean in `[0.35, 0.65]`.
    pub fraction_near_half: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub members: usize,
    pub mean_map: MapSummary,
    pub connected_raw: usize,
    pub connected_after_dilation: usize,
    pub largest_cluster_sizes: Vec<usize>,
    pub total_loss_median: Option<f64>,
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

/// Ensemble statistics, connectivity and loss histograms of a `sample-prior`
/// or `invert` output directory; optionally a SLERP probe between the two best members.
pub fn analyze(cfg: &AppConfig, input: &Path, slerp_points: Option<usize>, bins: usize) -> Result<AnalysisReport> {
    let recs = read_ggrd(&input.join(ENSEMBLE_FACIES))?;
    let facies: Vec<Grid2> = recs.into_iter().filter_map(|r| r.into_iter().next()).collect();
    let stats = ensemble_stats(&facies, 0.5)?;
    write_ggrd(&input.join("stats.ggrd"), &[vec![&stats.mean, &stats.std]])?;

    let wells = cfg.setup().wells;
    let opts = ConnectivityOptions::default();
    let conn: Vec<_> = facies.iter().map(|f| well_connectivity(&threshold_facies(f, 0.5), &wells, &opts)).collect();

    let table = Table::read(&input.join(MEMBERS_CSV))?;
    let totals = table.column("total")?;
    let accuracy = table.column("accuracy")?;
    for (name, values) in [("total", &totals), ("accuracy", &accuracy)] {
        if !values.is_empty() {
            let range = if name == "accuracy" { Some((0.0, 1.0)) } else { None };
            let h = Histogram::new(values, bins, range)?;
            write_text(&input.join(format!("histogram_{name}.csv")), &h.to_csv())?;
        }
    }

    let m = stats.mean.as_slice();
    let near = m.iter().filter(|v| (0.35..=0.65).contains(*v)).count();
    let (min, max) = stats.mean.min_max();
    let report = AnalysisReport {
        members: facies.len(),
        mean_map: MapSummary { min, max, mean: stats.mean.mean(), fraction_near_half: near as f64 / m.len() as f64 },
        connected_raw: conn.iter().filter(|c| c.connected_raw).count(),
        connected_after_dilation: conn.iter().filter(|c| c.connected_after_dilation).count(),
        largest_cluster_sizes: conn.iter().map(|c| c.largest_cluster_size).collect(),
        total_loss_median: median(&totals),
    };
    write_json(&input.join("analysis.json"), &report)?;

    if let Some(n) = slerp_points {
        slerp_probe(cfg, input, &table, n)?;
    }
    Ok(report)
}

fn slerp_probe(cfg: &AppConfig, input: &Path, table: &Table, n: usize) -> Result<()> {
    let seeds = table.column("seed")?;
    let totals = table.column("total")?;
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]));
    if order.len() < 2 {
        bail!("the SLERP probe needs at least two members");
    }
    let ends: Vec<LatentVector> = order[..2]
        .iter()
        .map(|&i| {
            let p = member_dir(input, seeds[i] as u64).join("best_latent.json");
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect::<Result<_>>()?;
    let obs = input.join(OBSERVATIONS);
    let problem = problem(cfg, obs.is_file().then_some(obs.as_path()))?;
    let path = slerp_cycle(&ends, n)?;
    let losses = evaluate_interpolation(&problem, &path, Scenario::Total)?;
    let mut csv = String::from("index,flow,well,prior,total,accuracy\n");
    for (i, (l, acc)) in losses.iter().enumerate() {
        csv.push_str(&format!("{i},{},{},{},{},{acc}\n", l.flow, l.well, l.prior, l.total));
    }
    write_text(&input.join("slerp.csv"), &csv)
}

/// Renders `input` as SVG: CSV series, histogram CSV, JSON-lines trace or GGRD grid.
pub fn plot_file(input: &Path, output: &Path, channel: usize, record: usize, log_y: bool) -> Result<()> {
    let title = input.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let svg = match ext {
        "ggrd" => {
            let recs = read_ggrd(input)?;
            let rec = recs.get(record).with_context(|| format!("{} has {} records", input.display(), recs.len()))?;
            let g = rec.get(channel).with_context(|| format!("record {record} has {} channels", rec.len()))?;
            plot::heatmap(&format!("{title} [{record}:{channel}]"), g, None)
        }
        "jsonl" => {
            let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
            let records: Vec<IterationRecord> = text
                .lines()
                .filter(|l| !l.contains("\"summary\""))
                .map(serde_json::from_str)
                .collect::<Result<_, _>>()
                .with_context(|| format!("parsing {}", input.display()))?;
            let xs: Vec<f64> = records.iter().map(|r| r.iter as f64).collect();
            let series = vec![
                ("total".to_string(), records.iter().map(|r| r.loss.total).collect()),
                ("flow".to_string(), records.iter().map(|r| r.loss.flow).collect()),
                ("well".to_string(), records.iter().map(|r| r.loss.well).collect()),
                ("prior".to_string(), records.iter().map(|r| r.loss.prior).collect()),
            ];
            plot::line_plot(&title, "iteration", &xs, &series, log_y)
        }
        "csv" => {
            let t = Table::read(input)?;
            if t.header == ["bin_lo", "bin_hi", "count"] {
                let edges: Vec<(f64, f64)> = t.column("bin_lo")?.into_iter().zip(t.column("bin_hi")?).collect();
                plot::bar_chart(&title, "value", &edges, &t.column("count")?)
            } else {
                let xs = t.column(&t.header[0])?;
                let series = t.header[1..]
                    .iter()
                    .filter_map(|h| t.column(h).ok().map(|c| (h.clone(), c)))
                    .collect::<Vec<_>>();
                plot::line_plot(&title, &t.header[0], &xs, &series, log_y)
            }
        }
        other => bail!("cannot plot {:?} files", other),
    };
    write_text(output, &svg)
}
