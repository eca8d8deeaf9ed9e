//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances are pinned here, independent of the bundled configs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use kinlab::besov::{block_apply, build_block_system};
use kinlab::drift::{eval_vec, parse_drift, tame, verify_taming_growth, Constant, DriftField, MollifierSpec, TamingParams};
use kinlab::geometry::gamma_transport;
use kinlab::harness::Verdict;
use kinlab::kernels::kernel_battery;
use kinlab::noise::{sample_step_into, step_cholesky, step_covariance};
use kinlab::scheme::{simulate_tamed_em_with, SchemeConfig, StreamNoise};
use kinlab::{GridFunction, GridSpec, PhaseState, RngStream, StepNoise};
use kinlab_cli::{execute, Command, Format, Globals, Outcome};
use serde_json::Value;

const NOISE_SAMPLES: usize = 1_000_000;
const NOISE_STEP: f64 = 0.01;
const STDERR_MULTIPLE: f64 = 5.0;
const CHOLESKY_RELATIVE: f64 = 1e-14;
const DRIFTLESS_PATHS: usize = 1_000_000;
const OU_MAX_SLOPE: f64 = -0.45;
const OU_MAX_STDERR_SLOPE: f64 = 0.1;
const SINGULAR_MAX_SLOPE: f64 = -0.4;
const PROBES: usize = 100_000;
const GROWTH_TOLERANCE: f64 = 0.05;
const MOLLIFIED_CONSTANT: f64 = 1e-10;
const PARTITION_DEFECT: f64 = 1e-12;
const RECONSTRUCTION: f64 = 1e-9;
const BESOV_TARGET: f64 = -0.75;
const BESOV_TOLERANCE: f64 = 0.15;
const DENSITY_MAX_SLOPE: f64 = -0.4;
const FLOOR_RATIO: f64 = 3.0;

type Check = Result<String, String>;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn require(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn run_config(command: &str, config: &str, out: &Path, format: Format) -> Result<(Outcome, Value), String> {
    let path = configs().join(config);
    let cmd = match command {
        "sample" => Command::Sample { config: path },
        "weak-rate" => Command::WeakRate { config: path },
        "density" => Command::Density { config: path },
        "besov-rate" => Command::BesovRate { config: path },
        "taming-check" => Command::TamingCheck { config: path },
        _ => Command::KernelCheck,
    };
    let g = Globals {
        seed: None,
        out_dir: out.to_path_buf(),
        format,
    };
    let outcome = execute(&cmd, &g).map_err(|e| e.to_string())?;
    let summary = fs::read_to_string(outcome.dir.join("summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or(Value::Null);
    Ok((outcome, summary))
}

fn noise_exactness() -> Check {
    let mut rng = RngStream::new(2024, 0);
    let mut xi = StepNoise::zeros(NOISE_STEP, 1);
    let mut sum = [[0.0f64; 2]; 2];
    let mut sq = [[0.0f64; 2]; 2];
    for _ in 0..NOISE_SAMPLES {
        sample_step_into(&mut rng, NOISE_STEP, &mut xi).map_err(|e| e.to_string())?;
        let z = [xi.integral_part[0], xi.increment_part[0]];
        for i in 0..2 {
            for j in 0..2 {
                let p = z[i] * z[j];
                sum[i][j] += p;
                sq[i][j] += p * p;
            }
        }
    }
    let want = step_covariance(NOISE_STEP).map_err(|e| e.to_string())?;
    let m = NOISE_SAMPLES as f64;
    let mut worst = 0.0f64;
    for i in 0..2 {
        for j in 0..2 {
            let mean = sum[i][j] / m;
            let se = ((sq[i][j] / m - mean * mean) / m).sqrt();
            worst = worst.max((mean - want[i][j]).abs() / se);
        }
    }
    let mut chol = 0.0f64;
    for h in [1e-4, 1e-2, 1.0] {
        let l = step_cholesky(h).map_err(|e| e.to_string())?;
        let c = step_covariance(h).map_err(|e| e.to_string())?;
        for i in 0..2 {
            for j in 0..2 {
                let llt = l[i][0] * l[j][0] + l[i][1] * l[j][1];
                chol = chol.max((llt - c[i][j]).abs() / c[i][j].abs());
            }
        }
    }
    require(
        worst <= STDERR_MULTIPLE && chol <= CHOLESKY_RELATIVE,
        format!("covariance within {worst:.2} se, Cholesky relative error {chol:.1e}"),
    )
}

fn kernel_identities() -> Check {
    let checks = kernel_battery(0).map_err(|e| e.to_string())?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    require(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} identities hold", checks.len())
        } else {
            format!("failed: {}", failed.join("; "))
        },
    )
}

fn driftless_exactness() -> Check {
    let b = parse_drift("zero", 1).map_err(|e| e.to_string())?;
    let z0 = PhaseState::scalar(0.3, 1.2).map_err(|e| e.to_string())?;
    let mean = gamma_transport(1.0, &z0);
    let cov = step_covariance(1.0).map_err(|e| e.to_string())?;
    let m = DRIFTLESS_PATHS as f64;
    let mut worst = 0.0f64;
    for n in [1usize, 7, 64] {
        let cfg = SchemeConfig::new(n, 1.0);
        let mut rng = RngStream::new(31, n as u64);
        let mut s = [0.0f64; 2];
        let mut c = [[0.0f64; 2]; 2];
        let mut c2 = [[0.0f64; 2]; 2];
        for _ in 0..DRIFTLESS_PATHS {
            let path = simulate_tamed_em_with(&z0, &cfg, b.as_ref(), &mut StreamNoise(&mut rng)).map_err(|e| e.to_string())?;
            let dz = [path.endpoint.x()[0] - mean.x()[0], path.endpoint.v()[0] - mean.v()[0]];
            for i in 0..2 {
                s[i] += dz[i];
                for j in 0..2 {
                    c[i][j] += dz[i] * dz[j];
                    c2[i][j] += (dz[i] * dz[j]).powi(2);
                }
            }
        }
        for i in 0..2 {
            worst = worst.max((s[i] / m).abs() / (cov[i][i] / m).sqrt());
            for j in 0..2 {
                let e = c[i][j] / m;
                let se = ((c2[i][j] / m - e * e) / m).sqrt();
                worst = worst.max((e - cov[i][j]).abs() / se);
            }
        }
    }
    require(worst <= STDERR_MULTIPLE, format!("mean and covariance within {worst:.2} se for n = 1, 7, 64"))
}

fn judged_fit(summary: &Value, id: &str) -> Option<(f64, f64)> {
    summary["judged"]
        .as_array()?
        .iter()
        .find(|j| j["functional_id"] == id)
        .and_then(|j| Some((j["slope"].as_f64()?, j["stderr_slope"].as_f64()?)))
}

fn ou_weak_rate(out: &Path) -> Check {
    let (outcome, summary) = run_config("weak-rate", "weak_ou.toml", out, Format::Csv)?;
    let Some((slope, se)) = judged_fit(&summary, "cos:1,1") else {
        return Err(format!("no fit, verdict {:?}", outcome.verdict));
    };
    require(
        slope <= OU_MAX_SLOPE && se <= OU_MAX_STDERR_SLOPE,
        format!("slope {slope:.4} ± {se:.4}"),
    )
}

fn singular_weak_rate(out: &Path) -> Check {
    let (outcome, summary) = run_config("weak-rate", "weak_signv.toml", out, Format::Csv)?;
    let Some((slope, se)) = judged_fit(&summary, "cos:1,1") else {
        return Err(format!("no fit, verdict {:?}", outcome.verdict));
    };
    require(slope <= SINGULAR_MAX_SLOPE, format!("slope {slope:.4} ± {se:.4}"))
}

fn taming_bounds(out: &Path) -> Check {
    let b = parse_drift("powerlaw:A=1,beta=0.25", 1).map_err(|e| e.to_string())?;
    let params = TamingParams::cutoff(1.0, 0.25);
    let phi = MollifierSpec::default();
    let mut rng = RngStream::new(7, 0);
    let mut violations = 0usize;
    for n in [4usize, 64, 1024] {
        let at = params.at_level(n);
        let level = at.cutoff_level();
        let tamed = tame(b.clone(), &at, &phi).map_err(|e| e.to_string())?;
        for _ in 0..PROBES {
            let x = [1.5 * (2.0 * rng.uniform() - 1.0)];
            // Log-uniform speeds down to the singular point.
            let sign = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            let v = [sign * 10f64.powf(-14.0 * rng.uniform())];
            let t = rng.uniform() / n as f64;
            let val = eval_vec(tamed.as_ref(), t, &x, &v);
            if val.iter().map(|c| c * c).sum::<f64>().sqrt() > level {
                violations += 1;
            }
        }
    }

    let (outcome, summary) = run_config("taming-check", "taming_cutoff.toml", out, Format::Csv)?;
    let growth = summary["report"]["growth_exponent"].as_f64().unwrap_or(f64::NAN);
    let kappa = params.kappa;
    // The same exponent from the library call, with a different probe seed.
    let family: Vec<(usize, DriftField)> = [4usize, 16, 64, 256, 1024]
        .iter()
        .map(|&n| Ok((n, tame(b.clone(), &params.at_level(n), &phi)?)))
        .collect::<kinlab::Result<_>>()
        .map_err(|e| e.to_string())?;
    let direct = verify_taming_growth(&family, &params, PROBES, 99)
        .map_err(|e| e.to_string())?
        .growth_exponent
        .unwrap_or(f64::NAN);

    let mut worst = 0.0f64;
    let moll = TamingParams::mollify(0.5);
    for value in [vec![1.7], vec![-0.3, 2.5]] {
        let c: DriftField = Arc::new(Constant::new(value.clone()).map_err(|e| e.to_string())?);
        let d = value.len();
        let tamed = tame(c, &moll.at_level(64), &phi).map_err(|e| e.to_string())?;
        let mut rng = RngStream::new(8, d as u64);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
            let v: Vec<f64> = (0..d).map(|_| 3.0 * rng.standard_normal()).collect();
            let got = eval_vec(tamed.as_ref(), 0.0, &x, &v);
            for (g, w) in got.iter().zip(&value) {
                worst = worst.max((g - w).abs());
            }
        }
    }

    require(
        violations == 0
            && outcome.verdict == Some(Verdict::Pass)
            && (growth - kappa).abs() <= GROWTH_TOLERANCE
            && (direct - kappa).abs() <= GROWTH_TOLERANCE
            && worst <= MOLLIFIED_CONSTANT,
        format!(
            "{violations} cutoff violations in {} probes, growth {growth:.4} and {direct:.4} vs {kappa}, mollified constant off by {worst:.1e}",
            3 * PROBES
        ),
    )
}

fn besov_machinery(out: &Path) -> Check {
    let spec = GridSpec::square(1, std::f64::consts::PI, 64).map_err(|e| e.to_string())?;
    let sys = build_block_system(&spec, 3).map_err(|e| e.to_string())?;
    let f = GridFunction::from_fn(spec, |x, v| {
        0.7 * (8.0 * x[0]).cos() - 0.4 * (2.0 * v[0]).sin() + 0.9 * (x[0] + 3.0 * v[0]).cos() + 0.2
    })
    .map_err(|e| e.to_string())?;
    let mut sum = vec![0.0; f.values().len()];
    for j in 0..=sys.levels() {
        let block = block_apply(&f, &sys, j).map_err(|e| e.to_string())?;
        for (s, b) in sum.iter_mut().zip(block.values()) {
            *s += b;
        }
    }
    let recon = sum.iter().zip(f.values()).map(|(s, v)| (s - v).abs()).fold(0.0, f64::max);

    let (_, summary) = run_config("besov-rate", "besov_mollify.toml", out, Format::Csv)?;
    let defect = summary["partition_defect"].as_f64().unwrap_or(f64::NAN);
    let slope = summary["report"]["fit"]["slope"].as_f64().unwrap_or(f64::NAN);
    require(
        defect <= PARTITION_DEFECT && recon <= RECONSTRUCTION && (slope - BESOV_TARGET).abs() <= BESOV_TOLERANCE,
        format!("partition defect {defect:.1e}, reconstruction {recon:.1e}, slope {slope:.4} vs {BESOV_TARGET}"),
    )
}

fn density_rate(out: &Path) -> Check {
    let (_, summary) = run_config("density", "density_ou.toml", out, Format::Csv)?;
    let report = &summary["report"];
    let floor = report["noise_floor"].as_f64().unwrap_or(f64::NAN);
    let fit = &report["fit"];
    let Some(slope) = fit["slope"].as_f64() else {
        return Err(format!("no fit, noise floor {floor:.3e}"));
    };
    let smallest = fit["per_n_errors"]
        .as_array()
        .map(|pts| pts.iter().filter_map(|p| p["error"].as_f64()).fold(f64::INFINITY, f64::min))
        .unwrap_or(f64::NAN);
    require(
        slope <= DENSITY_MAX_SLOPE && smallest >= FLOOR_RATIO * floor,
        format!("slope {slope:.4}, smallest fitted distance {smallest:.3e}, floor {floor:.3e}"),
    )
}

/// Every output except the manifest, whose timestamps vary.
fn result_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        let name = e.file_name().to_string_lossy().into_owned();
        if name != "manifest.json" {
            files.push((name, fs::read(e.path()).map_err(|e| e.to_string())?));
        }
    }
    files.sort();
    Ok(files)
}

fn reproducibility(out: &Path) -> Check {
    let runs = [
        ("sample", "sample_zero.toml"),
        ("weak-rate", "weak_ou.toml"),
        ("taming-check", "taming_cutoff.toml"),
        ("kernel-check", ""),
    ];
    let mut compared = 0;
    for format in [Format::Csv, Format::Json] {
        for (command, config) in runs {
            let mut outputs = Vec::new();
            for threads in [1usize, 1, 4] {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| e.to_string())?;
                let dir = out.join(format!("repro-{}", outputs.len()));
                let (outcome, _) = pool.install(|| run_config(command, config, &dir, format))?;
                outputs.push(result_files(&outcome.dir)?);
            }
            if outputs.iter().any(|o| o != &outputs[0]) {
                return Err(format!("{command} ({format:?}) differs between runs"));
            }
            compared += outputs[0].len();
        }
    }
    require(true, format!("{compared} files identical across reruns and 1 or 4 threads"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let out = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Check + '_>)> = vec![
        ("noise exactness", Box::new(noise_exactness)),
        ("kernel battery", Box::new(kernel_identities)),
        ("driftless scheme exactness", Box::new(driftless_exactness)),
        ("OU weak rate", Box::new(|| ou_weak_rate(&out.join("ou")))),
        ("singular-drift weak rate", Box::new(|| singular_weak_rate(&out.join("signv")))),
        ("taming bounds", Box::new(|| taming_bounds(&out.join("taming")))),
        ("Besov machinery", Box::new(|| besov_machinery(&out.join("besov")))),
        ("density distance", Box::new(|| density_rate(&out.join("density")))),
        ("reproducibility", Box::new(|| reproducibility(&out.join("repro")))),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(msg) => println!("PASS {}. {name}: {msg} [{secs:.1} s]", i + 1),
            Err(msg) => {
                failures += 1;
                println!("FAIL {}. {name}: {msg} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
