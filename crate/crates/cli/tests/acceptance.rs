//! Acceptance criteria. Prints one PASS/FAIL/SKIP line per criterion and
//! exits nonzero if any criterion fails.

use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use overlap_reg::gmm::{default_components, fit_gmm_traced};
use overlap_reg::io::{DatasetManifest, FrameFormat, ResultsDocument};
use overlap_reg::*;
use overlap_reg_cli::config::{DatasetSource, EoeMode, FovConfig};
use overlap_reg_cli::{run_register, ExperimentConfig, RESULTS_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn within(limit: Duration, start: Instant, checks: Vec<(bool, String)>) -> Outcome {
    let elapsed = start.elapsed();
    let mut failed: Vec<String> = checks.iter().filter(|c| !c.0).map(|c| c.1.clone()).collect();
    if elapsed > limit {
        failed.push(format!("took {:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()));
    }
    let detail = checks.iter().map(|c| c.1.as_str()).collect::<Vec<_>>().join("; ");
    let detail = format!("{detail}; {:.2} s", elapsed.as_secs_f64());
    if failed.is_empty() {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(format!("{} | {detail}", failed.join("; ")))
    }
}

fn random_transform(rng: &mut ChaCha8Rng, translation: f64) -> RigidTransform {
    RigidTransform::from_euler_zyx(
        rng.random_range(-PI..PI),
        rng.random_range(-1.5..1.5),
        rng.random_range(-PI..PI),
        Vector3::new(
            rng.random_range(-translation..translation),
            rng.random_range(-translation..translation),
            rng.random_range(-translation..translation),
        ),
    )
}

fn partial_overlap() -> Outcome {
    let start = Instant::now();
    let cfg = match ExperimentConfig::load(&repo_path("configs/bunny.json")) {
        Ok(c) => c.resolve(),
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let out = tempfile::tempdir().unwrap();
    let doc = match run_register(&cfg, out.path(), true) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mean = |alg: &str, eoe: bool| {
        doc.cells
            .iter()
            .find(|c| c.algorithm == alg && c.eoe == eoe && c.failures == 0)
            .and_then(|c| c.mean_rotation_error)
            .unwrap_or(f64::NAN)
    };
    let mut checks = Vec::new();
    for alg in ["icp", "tricp", "ficp", "irls_icp", "gmm"] {
        let (off, on) = (mean(alg, false), mean(alg, true));
        checks.push((on < off, format!("{alg} {off:.3}->{on:.3} deg")));
    }
    checks.push((mean("icp", false) >= 5.0, "icp without >= 5 deg".into()));
    checks.push((mean("icp", true) <= 2.0, "icp with <= 2 deg".into()));
    within(Duration::from_secs(120), start, checks)
}

fn neutrality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bases = [
        BaseRegistrar::Icp(IcpParams::default()),
        BaseRegistrar::Icp(IcpParams::with_variant(IcpVariant::trimmed())),
        BaseRegistrar::Icp(IcpParams::with_variant(IcpVariant::fractional())),
        BaseRegistrar::Icp(IcpParams::with_variant(IcpVariant::irls())),
        BaseRegistrar::Gmm(GmmParams::default()),
    ];
    let fov = SensorFov::full_sphere();
    let mut identical = 0;
    let mut total = 0;
    for pair in 0..10 {
        let target = synthetic_bunny(1200, 100 + pair);
        let truth = RigidTransform::from_euler_zyx(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0),
        );
        let keep: Vec<usize> = (0..target.len()).filter(|_| rng.random_bool(0.8)).collect();
        let source = truth.inverse().apply(&target.select(&keep));
        for base in &bases {
            total += 1;
            let direct = base.register(&source, &target, &RigidTransform::identity());
            let wrapped = eoe_register(
                &source,
                &target,
                base,
                &fov,
                &fov,
                &PenaltyConstants::default(),
                &EoeSchedule::default(),
                &RigidTransform::identity(),
            );
            if let (Ok(d), Ok(w)) = (direct, wrapped) {
                if w.registration == d {
                    identical += 1;
                }
            }
        }
    }
    within(
        Duration::from_secs(30),
        start,
        vec![(identical == total, format!("{identical}/{total} runs bitwise identical"))],
    )
}

/// Frustum membership and penalty by elevation/azimuth geometry, independent
/// of the library's polar-angle formulation.
struct Oracle {
    inside: bool,
    corrected: f64,
    jumping: f64,
    near_top_edge: bool,
}

fn oracle(local: &Point, fov: &SensorFov, k0: f64) -> Oracle {
    let d = local.norm();
    if d == 0.0 {
        return Oracle {
            inside: false,
            corrected: k0,
            jumping: k0,
            near_top_edge: false,
        };
    }
    let azimuth = local.y.atan2(local.x);
    let elevation = local.z.atan2(local.x.hypot(local.y));
    let (hx, hy) = (fov.psi_x / 2.0, fov.psi_y / 2.0);
    let range = if d < fov.psi_min || d > fov.psi_max { k0 } else { 0.0 };
    let horizontal = (azimuth.abs() - hx).max(0.0);
    let below = (-elevation - hy).max(0.0);
    let above = elevation - hy;
    let base = range + horizontal + below;
    Oracle {
        inside: range == 0.0 && azimuth.abs() <= hx && elevation.abs() <= hy,
        corrected: base + above.max(0.0),
        jumping: base + if above > 0.0 { elevation + hy } else { 0.0 },
        near_top_edge: above.abs() < 1e-9,
    }
}

fn algorithm_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cloud = PointCloud::new(
        (0..10_000)
            .map(|_| Point::new(rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0)))
            .collect(),
    )
    .unwrap();
    let (mut membership_mismatch, mut weight_mismatch, mut checked, mut band_skipped) = (0usize, 0usize, 0usize, 0usize);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let pose = random_transform(&mut rng, 3.0);
        let psi_min = rng.random_range(0.0..2.0);
        let psi_max = if rng.random_bool(0.1) { f64::INFINITY } else { psi_min + rng.random_range(0.5..15.0) };
        let psi_x = if rng.random_bool(0.1) { TAU } else { rng.random_range(0.05..TAU) };
        let psi_y = if rng.random_bool(0.1) { PI } else { rng.random_range(0.05..PI) };
        let fov = SensorFov::new(psi_min, psi_max, psi_x, psi_y).unwrap();
        let (k0, k1, k2) = (rng.random_range(0.5..2.0), rng.random_range(0.1..=1.0), rng.random_range(0.5..10.0));
        let inverse = pose.inverse();
        for corrected in [true, false] {
            let k = PenaltyConstants {
                k0,
                k1,
                k2,
                corrected_vertical: corrected,
            };
            let w = calc_omega_weights(&cloud, &pose, &fov, &k).unwrap();
            for (i, z) in cloud.points().iter().enumerate() {
                let o = oracle(&inverse.apply_point(z), &fov, k0);
                if !corrected && o.near_top_edge {
                    band_skipped += 1;
                    continue;
                }
                checked += 1;
                if (w.penalties[i] == 0.0) != o.inside {
                    membership_mismatch += 1;
                }
                let xi = if corrected { o.corrected } else { o.jumping };
                let expect = if w.penalties[i] == 0.0 { 1.0 } else { k1 * (-k2 * w.penalties[i]).exp() };
                let from_oracle = if o.inside { 1.0 } else { k1 * (-k2 * xi).exp() };
                let err = (w.weights[i] - expect).abs().max((w.weights[i] - from_oracle).abs());
                worst = worst.max(err);
                if err > 1e-12 {
                    weight_mismatch += 1;
                }
            }
        }
    }
    within(
        Duration::from_secs(10),
        start,
        vec![
            (membership_mismatch == 0, format!("{membership_mismatch}/{checked} membership mismatches")),
            (weight_mismatch == 0, format!("max weight deviation {worst:.1e}")),
            (true, format!("{band_skipped} default-mode points skipped at the top edge discontinuity")),
        ],
    )
}

fn horn_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_rot, mut worst_trans) = (0.0f64, 0.0f64);
    let mut outliers_ignored = true;
    for _ in 0..100 {
        let truth = random_transform(&mut rng, 10.0);
        let pairs: Vec<(Point, Point, f64)> = (0..1000)
            .map(|_| {
                let p = Point::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
                (p, truth.apply_point(&p), rng.random_range(0.1..1.0))
            })
            .collect();
        let est = horn_from_pairs(&pairs).unwrap();
        let delta = transform_delta(&est, &truth);
        worst_rot = worst_rot.max(delta.rotation_error.to_radians());
        worst_trans = worst_trans.max(delta.translation_error);

        let mut polluted = pairs.clone();
        for i in 0..200 {
            let junk = Point::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
            polluted.insert(i * 5, (junk, -junk * 3.0, 0.0));
        }
        outliers_ignored &= horn_from_pairs(&polluted).unwrap() == est;
    }
    within(
        Duration::from_secs(5),
        start,
        vec![
            (worst_rot <= 1e-9, format!("max rotation error {worst_rot:.1e} rad")),
            (worst_trans <= 1e-9, format!("max translation error {worst_trans:.1e} m")),
            (outliers_ignored, "zero-weight outliers leave the result bitwise unchanged".into()),
        ],
    )
}

fn scaling() -> Outcome {
    let start = Instant::now();
    let samples = weight_timing_probe(&[10_000, 100_000, 1_000_000], 7, 0).unwrap();
    let fit: Vec<(f64, f64)> = samples.iter().map(|&(n, ms)| (n as f64, ms)).collect();
    let (_, _, r2) = linear_fit(&fit);
    let million = samples[2].1;
    let threads = rayon::current_num_threads();
    within(
        Duration::from_secs(60),
        start,
        vec![
            (r2 >= 0.95, format!("R^2 {r2:.4}")),
            (million < 200.0, format!("1e6 points in {million:.1} ms on {threads} thread(s)")),
        ],
    )
}

fn gmm_properties() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut decreases, mut row_err, mut simplex_err, mut reweighted) = (0usize, 0.0f64, 0.0f64, 0usize);
    let mut identity = true;
    for seed in 0..20u64 {
        let cloud = synthetic_bunny(1500, seed);
        let k = default_components(cloud.len());
        let (model, trace) = fit_gmm_traced(&cloud, k, seed).unwrap();
        decreases += trace.windows(2).filter(|w| w[1] < w[0]).count();
        let model = model.with_outlier_weight(0.05).unwrap();
        for row in responsibilities(&model, &cloud).unwrap().rows() {
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let pose = random_transform(&mut rng, 0.5);
        let fov = SensorFov::from_degrees(0.01, 1.0, 60.0, 60.0).unwrap();
        if let Ok(r) = reweight_model(&model, &fov, &pose, &PenaltyConstants::default()) {
            reweighted += 1;
            simplex_err = simplex_err.max((r.weights.iter().sum::<f64>() + r.outlier_weight - 1.0).abs());
        }
        let same = reweight_model(&model, &SensorFov::full_sphere(), &RigidTransform::identity(), &PenaltyConstants::default());
        identity &= same.is_ok_and(|m| m == model);
    }
    within(
        Duration::from_secs(120),
        start,
        vec![
            (decreases == 0, format!("{decreases} log-likelihood decreases over 20 fits")),
            (row_err <= 1e-9, format!("max responsibility row error {row_err:.1e}")),
            (simplex_err <= 1e-9 && reweighted > 0, format!("max simplex error {simplex_err:.1e} over {reweighted} reweighted models")),
            (identity, "full-sphere reweight is the identity".into()),
        ],
    )
}

/// Expects the standard odometry layout under `$KITTI_ODOMETRY_ROOT`:
/// `sequences/04/{velodyne/*.bin, calib.txt}` and `poses/04.txt`.
fn kitti() -> Outcome {
    let Some(root) = std::env::var_os("KITTI_ODOMETRY_ROOT").map(PathBuf::from) else {
        return Outcome::Skip("KITTI_ODOMETRY_ROOT not set".into());
    };
    let seq = root.join("sequences/04");
    let Ok(entries) = std::fs::read_dir(seq.join("velodyne")) else {
        return Outcome::Skip(format!("{} has no velodyne scans", seq.display()));
    };
    let start = Instant::now();
    let mut frames: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    frames.sort();
    let manifest = DatasetManifest {
        frames,
        format: FrameFormat::KittiBin,
        poses: Some(root.join("poses/04.txt")),
        calib: Some(seq.join("calib.txt")),
        stride: 5,
        downsample: Some(10_000),
        rng_seed: 0,
    };
    let dir = tempfile::tempdir().unwrap();
    let manifest_path = dir.path().join("manifest.json");
    manifest.save(&manifest_path).unwrap();
    let cfg = ExperimentConfig {
        dataset: DatasetSource::Manifest(manifest_path),
        algorithms: vec![BaseRegistrar::Icp(IcpParams::with_variant(IcpVariant::fractional()))],
        ..ExperimentConfig::default()
    };
    let mut cfg = cfg.resolve();
    cfg.eoe.mode = EoeMode::Both;
    cfg.eoe.fov = Some(FovConfig {
        range_min: 0.0,
        range_max: Some(80.0),
        horizontal_deg: 360.0,
        vertical_deg: 50.0,
    });
    let doc = match run_register(&cfg, dir.path(), true) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let median = |eoe: bool| {
        doc.cells.iter().find(|c| c.eoe == eoe).and_then(|c| c.median_translation_error).unwrap_or(f64::NAN)
    };
    let (off, on) = (median(false), median(true));
    within(
        Duration::from_secs(1200),
        start,
        vec![
            (on < off, format!("ficp median translation {off:.3} -> {on:.3} m")),
            (off > 0.5, "without-EOE median above 0.5 m".into()),
        ],
    )
}

fn strip_timings(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.ends_with("_ms"));
            map.values_mut().for_each(strip_timings);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let run = || -> std::result::Result<serde_json::Value, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_overlap-reg"))
            .arg("register")
            .arg("--config")
            .arg(repo_path("configs/bunny.json"))
            .arg("--output")
            .arg(&out)
            .arg("--single-thread-determinism")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("exit {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)));
        }
        let text = std::fs::read_to_string(out.join(RESULTS_FILE)).map_err(|e| e.to_string())?;
        serde_json::from_str::<ResultsDocument>(&text).map_err(|e| e.to_string())?;
        let mut v: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
        strip_timings(&mut v);
        Ok(v)
    };
    match (run(), run()) {
        (Ok(a), Ok(b)) => {
            let same = serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap();
            within(Duration::from_secs(600), start, vec![(same, "two runs byte-identical without timing fields".into())])
        }
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(e),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 partial-overlap improvement", partial_overlap),
        ("2 neutrality", neutrality),
        ("3 penalty fidelity", algorithm_fidelity),
        ("4 horn oracle", horn_oracle),
        ("5 weight scaling", scaling),
        ("6 gmm properties", gmm_properties),
        ("7 kitti protocol", kitti),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Outcome::Pass(d) => println!("PASS criterion {name}: {d}"),
            Outcome::Skip(d) => println!("SKIP criterion {name}: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
