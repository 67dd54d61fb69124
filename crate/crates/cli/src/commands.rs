//! Subcommand implementations. Each writes its artifacts plus a results
//! document into the output directory and returns that document.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use overlap_reg::io::{
    read_ply, read_xyz, write_kitti_poses, write_ply, write_result, CellResult, DatasetManifest, FrameFormat,
    OuterStats, PairResult, ResultsDocument, TimingReport, TimingSample,
};
use overlap_reg::{
    eoe_register, linear_fit, make_sequence, overlap_fraction, pose_error_euler, synthetic_bunny,
    weight_timing_probe, BaseRegistrar, OuterIteration, PointCloud, PoseError, RigidTransform, SensorFov,
};
use rayon::prelude::*;

use crate::config::{DatasetSource, ExperimentConfig, InitPolicy};
use crate::CliError;

pub const RESULTS_FILE: &str = "results.json";

/// Frames in registration order with per-frame sensor frusta.
struct Frames {
    clouds: Vec<PointCloud>,
    /// Dataset frame number of each entry.
    ids: Vec<usize>,
    /// Ground truth mapping entry `k + 1` into entry `k`.
    ground_truth: Option<Vec<RigidTransform>>,
    fovs: Vec<Option<SensorFov>>,
}

fn load_world(path: &Path) -> Result<PointCloud, CliError> {
    let ply = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply"));
    Ok(if ply { read_ply(path)? } else { read_xyz(path)? })
}

fn load_frames(cfg: &ExperimentConfig) -> Result<Frames, CliError> {
    let (clouds, ids, ground_truth) = match &cfg.dataset {
        DatasetSource::Synthetic { preset, world } => {
            let world = match world {
                Some(p) => load_world(p)?,
                None => synthetic_bunny(preset.world_points, preset.seed),
            };
            let seq = make_sequence(&world, &preset.view_specs()?)?;
            let ids = (0..seq.views.len()).collect();
            let clouds = seq.views.into_iter().map(|v| v.cloud).collect();
            (clouds, ids, Some(seq.relative))
        }
        DatasetSource::Manifest(path) => {
            let mut manifest = DatasetManifest::load(path)?;
            if let Some(seed) = cfg.seed {
                manifest.rng_seed = seed;
            }
            let ids = manifest.frame_indices();
            let clouds = ids.iter().map(|&i| manifest.load_frame(i)).collect::<Result<Vec<_>, _>>()?;
            let pairs: Vec<(usize, usize)> = ids.windows(2).map(|w| (w[0], w[1])).collect();
            let gt = manifest.ground_truth(&pairs)?;
            (clouds, ids, gt)
        }
    };
    if clouds.len() < 2 {
        return Err(CliError::Config("dataset yields fewer than two frames".into()));
    }
    let shared = cfg.eoe.fov.map(|f| f.to_fov()).transpose()?;
    let fovs = ids
        .iter()
        .map(|&id| match cfg.eoe.frame_fovs.len() {
            0 => Ok(shared),
            n if id < n => cfg.eoe.frame_fovs[id].to_fov().map(Some),
            n => Err(CliError::Config(format!("frame_fovs lists {n} frusta but frame {id} is used"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Frames {
        clouds,
        ids,
        ground_truth,
        fovs,
    })
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn outer_stats(trace: &[OuterIteration]) -> Vec<OuterStats> {
    trace
        .iter()
        .map(|o| OuterStats {
            iteration: o.iteration,
            base_iterations: o.base_iterations,
            delta: o.delta,
            source_weights: o.source_weights,
            target_weights: o.target_weights,
        })
        .collect()
}

struct PairOutcome {
    transform: RigidTransform,
    converged: bool,
    base_iterations: usize,
    outer_iterations: usize,
    outer: Vec<OuterStats>,
}

fn register_pair(
    cfg: &ExperimentConfig,
    frames: &Frames,
    alg: &BaseRegistrar,
    eoe: bool,
    k: usize,
    init: &RigidTransform,
) -> Result<PairOutcome, CliError> {
    let (target, source) = (&frames.clouds[k], &frames.clouds[k + 1]);
    if !eoe {
        let r = alg.register(source, target, init)?;
        return Ok(PairOutcome {
            transform: r.transform,
            converged: r.converged,
            base_iterations: r.iterations,
            outer_iterations: 0,
            outer: Vec::new(),
        });
    }
    let fov = |i: usize| frames.fovs[i].ok_or_else(|| CliError::Config(format!("no fov for frame {}", frames.ids[i])));
    let r = eoe_register(source, target, alg, &fov(k + 1)?, &fov(k)?, &cfg.eoe.penalty, &cfg.eoe.schedule, init)?;
    Ok(PairOutcome {
        transform: r.registration.transform,
        converged: r.converged,
        base_iterations: r.outer_trace.iter().map(|o| o.base_iterations).sum(),
        outer_iterations: r.outer_iterations,
        outer: outer_stats(&r.outer_trace),
    })
}

fn run_cell(cfg: &ExperimentConfig, frames: &Frames, alg: &BaseRegistrar, eoe: bool) -> CellResult {
    let start = Instant::now();
    let mut pairs = Vec::new();
    let mut trajectory = vec![RigidTransform::identity()];
    let mut truth_trajectory = RigidTransform::identity();
    let mut previous = RigidTransform::identity();
    for k in 0..frames.clouds.len() - 1 {
        let pair_start = Instant::now();
        let init = match cfg.init {
            InitPolicy::Identity => RigidTransform::identity(),
            InitPolicy::PriorPoseChain => previous,
        };
        let gt = frames.ground_truth.as_ref().map(|g| g[k]);
        let outcome = register_pair(cfg, frames, alg, eoe, k, &init);
        let step = outcome.as_ref().map_or(RigidTransform::identity(), |o| o.transform);
        let last = *trajectory.last().expect("trajectory starts with identity");
        trajectory.push(last.compose(&step));
        if let Some(g) = gt {
            truth_trajectory = truth_trajectory.compose(&g);
        }
        let (target, source) = (frames.ids[k], frames.ids[k + 1]);
        pairs.push(match outcome {
            Ok(o) => {
                previous = o.transform;
                PairResult {
                    target,
                    source,
                    transform: Some(o.transform.to_row_major_3x4()),
                    ground_truth: gt.map(|g| g.to_row_major_3x4()),
                    error: gt.map(|g| pose_error_euler(&o.transform, &g)),
                    converged: o.converged,
                    base_iterations: o.base_iterations,
                    outer_iterations: o.outer_iterations,
                    outer: o.outer,
                    failure: None,
                    elapsed_ms: elapsed_ms(pair_start),
                }
            }
            Err(e) => {
                log::warn!("{} eoe={eoe} pair {target}->{source} failed: {e}", alg.name());
                PairResult {
                    target,
                    source,
                    transform: None,
                    ground_truth: gt.map(|g| g.to_row_major_3x4()),
                    error: None,
                    converged: false,
                    base_iterations: 0,
                    outer_iterations: 0,
                    outer: Vec::new(),
                    failure: Some(e.to_string()),
                    elapsed_ms: elapsed_ms(pair_start),
                }
            }
        });
    }
    let errors: Vec<PoseError> = pairs.iter().filter_map(|p| p.error).collect();
    let mut rot: Vec<f64> = errors.iter().map(|e| e.rotation_error).collect();
    let mut trans: Vec<f64> = errors.iter().map(|e| e.translation_error).collect();
    let failures = pairs.iter().filter(|p| p.failure.is_some()).count();
    let drift = frames
        .ground_truth
        .as_ref()
        .map(|_| pose_error_euler(trajectory.last().expect("non-empty"), &truth_trajectory));
    log::info!("{} eoe={eoe}: {} pairs, {failures} failed", alg.name(), pairs.len());
    CellResult {
        algorithm: alg.name().to_string(),
        eoe,
        pairs,
        trajectory: trajectory.iter().map(|t| t.to_row_major_3x4()).collect(),
        mean_rotation_error: mean(&rot),
        median_rotation_error: median(&mut rot),
        mean_translation_error: mean(&trans),
        median_translation_error: median(&mut trans),
        drift,
        failures,
        elapsed_ms: elapsed_ms(start),
    }
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write_text(out: &Path, name: &str, text: &str, doc: &mut ResultsDocument) -> Result<(), CliError> {
    let path = out.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    doc.artifacts.push(name.to_string());
    Ok(())
}

fn finish(out: &Path, mut doc: ResultsDocument, start: Instant) -> Result<ResultsDocument, CliError> {
    doc.total_ms = elapsed_ms(start);
    write_result(out.join(RESULTS_FILE), &doc)?;
    Ok(doc)
}

fn config_echo(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Runs every (algorithm, EOE mode) cell over all consecutive frame pairs.
/// Cells run in parallel unless `parallel` is false; results keep config order.
pub fn run_register(cfg: &ExperimentConfig, out: &Path, parallel: bool) -> Result<ResultsDocument, CliError> {
    let start = Instant::now();
    let frames = load_frames(cfg)?;
    let cells: Vec<(&BaseRegistrar, bool)> = cfg
        .algorithms
        .iter()
        .flat_map(|a| cfg.eoe.mode.cells().iter().map(move |&e| (a, e)))
        .collect();
    let run = |&(alg, eoe): &(&BaseRegistrar, bool)| run_cell(cfg, &frames, alg, eoe);
    let results: Vec<CellResult> = if parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };

    create_dir(out)?;
    let mut doc = ResultsDocument::new("register", config_echo(cfg));
    doc.cells = results;
    let mut csv = String::from(
        "algorithm,eoe,target,source,rotation_error_deg,translation_error_m,converged,base_iterations,outer_iterations,failed,elapsed_ms\n",
    );
    for cell in &doc.cells {
        for p in &cell.pairs {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{:.3}",
                cell.algorithm,
                cell.eoe,
                p.target,
                p.source,
                p.error.map_or(String::new(), |e| e.rotation_error.to_string()),
                p.error.map_or(String::new(), |e| e.translation_error.to_string()),
                p.converged,
                p.base_iterations,
                p.outer_iterations,
                p.failure.is_some(),
                p.elapsed_ms
            );
        }
    }
    write_text(out, "pairs.csv", &csv, &mut doc)?;
    let mut summary = String::from(
        "algorithm,eoe,mean_rotation_deg,median_rotation_deg,mean_translation_m,median_translation_m,drift_rotation_deg,drift_translation_m,failures\n",
    );
    for c in &doc.cells {
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{}",
            c.algorithm,
            c.eoe,
            c.mean_rotation_error.map_or(String::new(), |v| v.to_string()),
            c.median_rotation_error.map_or(String::new(), |v| v.to_string()),
            c.mean_translation_error.map_or(String::new(), |v| v.to_string()),
            c.median_translation_error.map_or(String::new(), |v| v.to_string()),
            c.drift.map_or(String::new(), |d| d.rotation_error.to_string()),
            c.drift.map_or(String::new(), |d| d.translation_error.to_string()),
            c.failures
        );
    }
    write_text(out, "summary.csv", &summary, &mut doc)?;
    let table = summary_table(&doc);
    write_text(out, "summary.txt", &table, &mut doc)?;
    finish(out, doc, start)
}

/// Aligned plain-text table of per-cell rotation and translation errors.
pub fn summary_table(doc: &ResultsDocument) -> String {
    let header = [
        "algorithm", "eoe", "rot_mean_deg", "rot_median_deg", "trans_mean_m", "trans_median_m", "drift_rot_deg",
        "drift_trans_m", "failures",
    ];
    let rows: Vec<Vec<String>> = doc
        .cells
        .iter()
        .map(|c| {
            vec![
                c.algorithm.clone(),
                if c.eoe { "on" } else { "off" }.to_string(),
                fmt_opt(c.mean_rotation_error),
                fmt_opt(c.median_rotation_error),
                fmt_opt(c.mean_translation_error),
                fmt_opt(c.median_translation_error),
                fmt_opt(c.drift.map(|d| d.rotation_error)),
                fmt_opt(c.drift.map(|d| d.translation_error)),
                c.failures.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cols: Vec<&str>| {
        let padded: Vec<String> = cols
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut text = line(header.to_vec());
    for r in &rows {
        text += &line(r.iter().map(String::as_str).collect());
    }
    text
}

/// Materializes a synthetic suite: PLY frames, sensor poses, a manifest,
/// pairwise overlap and a ready-to-run register config.
pub fn run_synth(cfg: &ExperimentConfig, out: &Path) -> Result<ResultsDocument, CliError> {
    let start = Instant::now();
    let DatasetSource::Synthetic { preset, world } = &cfg.dataset else {
        return Err(CliError::Config("synth needs a synthetic dataset".into()));
    };
    let world = match world {
        Some(p) => load_world(p)?,
        None => synthetic_bunny(preset.world_points, preset.seed),
    };
    let seq = make_sequence(&world, &preset.view_specs()?)?;
    create_dir(out)?;
    let mut doc = ResultsDocument::new("synth", config_echo(cfg));
    let mut names = Vec::new();
    for (i, view) in seq.views.iter().enumerate() {
        let name = format!("frame_{i:03}.ply");
        write_ply(out.join(&name), &view.cloud)?;
        doc.artifacts.push(name.clone());
        names.push(PathBuf::from(name));
    }
    let poses: Vec<RigidTransform> = seq.views.iter().map(|v| v.pose).collect();
    write_kitti_poses(out.join("poses.txt"), &poses)?;
    doc.artifacts.push("poses.txt".into());

    let manifest = DatasetManifest {
        frames: names,
        format: FrameFormat::Ply,
        poses: Some("poses.txt".into()),
        calib: None,
        stride: 1,
        downsample: None,
        rng_seed: preset.seed,
    };
    manifest.save(out.join("manifest.json"))?;
    doc.artifacts.push("manifest.json".into());

    let mut overlap = String::from("target,source,overlap\n");
    for (k, rel) in seq.relative.iter().enumerate() {
        let (a, b) = (&seq.views[k], &seq.views[k + 1]);
        let v = overlap_fraction(&a.cloud, &b.cloud, &a.fov, &b.fov, rel)?;
        let _ = writeln!(overlap, "{k},{},{v}", k + 1);
    }
    write_text(out, "overlap.csv", &overlap, &mut doc)?;

    let register = ExperimentConfig {
        dataset: DatasetSource::Manifest(PathBuf::from("manifest.json")),
        output: out.join("register"),
        ..cfg.clone()
    };
    let text = serde_json::to_string_pretty(&register).expect("config serializes") + "\n";
    write_text(out, "register.json", &text, &mut doc)?;
    finish(out, doc, start)
}

/// Times the weight computation over the configured cloud sizes.
pub fn run_timing(cfg: &ExperimentConfig, out: &Path) -> Result<ResultsDocument, CliError> {
    let start = Instant::now();
    let samples = weight_timing_probe(&cfg.timing.sizes, cfg.timing.trials, cfg.seed.unwrap_or(0))?;
    let fit: Vec<(f64, f64)> = samples.iter().map(|&(n, ms)| (n as f64, ms)).collect();
    let (slope, intercept, r2) = linear_fit(&fit);
    create_dir(out)?;
    let mut doc = ResultsDocument::new("timing", config_echo(cfg));
    let mut csv = String::from("n,median_ms\n");
    for &(n, ms) in &samples {
        let _ = writeln!(csv, "{n},{ms}");
    }
    write_text(out, "timing.csv", &csv, &mut doc)?;
    doc.timing = Some(TimingReport {
        samples: samples.iter().map(|&(points, median_ms)| TimingSample { points, median_ms }).collect(),
        slope_per_point_ms: slope,
        intercept_ms: intercept,
        r_squared: r2,
    });
    finish(out, doc, start)
}

/// Registers one frame pair with overlap estimation and dumps the final
/// per-point weights of both clouds.
pub fn run_weights(cfg: &ExperimentConfig, out: &Path) -> Result<ResultsDocument, CliError> {
    let start = Instant::now();
    let frames = load_frames(cfg)?;
    let [t, s] = cfg.weights.pair;
    if t.max(s) >= frames.clouds.len() {
        return Err(CliError::Config(format!("weights pair {t},{s} outside {} frames", frames.clouds.len())));
    }
    let alg = &cfg.algorithms[cfg.weights.algorithm];
    let fov = |i: usize| frames.fovs[i].ok_or_else(|| CliError::Config("weights needs a sensor fov".into()));
    let (target, source) = (&frames.clouds[t], &frames.clouds[s]);
    let r = eoe_register(
        source,
        target,
        alg,
        &fov(s)?,
        &fov(t)?,
        &cfg.eoe.penalty,
        &cfg.eoe.schedule,
        &RigidTransform::identity(),
    )?;
    create_dir(out)?;
    let mut doc = ResultsDocument::new("weights", config_echo(cfg));
    let mut csv = String::from("cloud,index,x,y,z,weight\n");
    for (name, cloud, w) in [("source", source, &r.source_weights), ("target", target, &r.target_weights)] {
        for (i, (p, w)) in cloud.points().iter().zip(&w.weights).enumerate() {
            let _ = writeln!(csv, "{name},{i},{},{},{},{w}", p.x, p.y, p.z);
        }
    }
    write_text(out, "weights.csv", &csv, &mut doc)?;
    // Ground truth is only defined for consecutive entries.
    let gt = frames.ground_truth.as_ref().filter(|_| s == t + 1).map(|g| g[t]);
    doc.cells.push(CellResult {
        algorithm: alg.name().to_string(),
        eoe: true,
        pairs: vec![PairResult {
            target: frames.ids[t],
            source: frames.ids[s],
            transform: Some(r.registration.transform.to_row_major_3x4()),
            ground_truth: gt.map(|g| g.to_row_major_3x4()),
            error: gt.map(|g| pose_error_euler(&r.registration.transform, &g)),
            converged: r.converged,
            base_iterations: r.outer_trace.iter().map(|o| o.base_iterations).sum(),
            outer_iterations: r.outer_iterations,
            outer: outer_stats(&r.outer_trace),
            failure: None,
            elapsed_ms: elapsed_ms(start),
        }],
        trajectory: Vec::new(),
        mean_rotation_error: None,
        median_rotation_error: None,
        mean_translation_error: None,
        median_translation_error: None,
        drift: None,
        failures: 0,
        elapsed_ms: elapsed_ms(start),
    });
    finish(out, doc, start)
}

/// Reports whether a results document contains failed cells.
pub fn has_failures(doc: &ResultsDocument) -> bool {
    doc.cells.iter().any(|c| c.failures > 0)
}
