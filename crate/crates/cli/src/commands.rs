use std::path::Path;

use kinlab::besov::{build_block_system, max_levels, taming_rate_fit, TamingRateReport};
use kinlab::drift::{parse_drift, tame, DriftField, TamingKind};
use kinlab::grid::GridSpec;
use kinlab::harness::{density_distance, stream_id, weak_error, DensityReport, Verdict, WeakErrorReport};
use kinlab::kernels::kernel_battery;
use kinlab::scheme::{simulate_standard_em_with, simulate_tamed_em_with, SchemeConfig, StreamNoise};
use kinlab::{PhaseState, RngStream};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, config_hash, DensityVerdict, SchemeKind, WeakVerdict};
use crate::output::{num, RunDir};
use crate::{CliError, Globals, Outcome};

/// Stream element of `sample` paths.
const SAMPLE_ELEMENT: u64 = 0;
const DEFAULT_KERNEL_SEED: u64 = 0;

fn finish<C: Serialize>(
    run: RunDir,
    cfg: &C,
    seed: Option<u64>,
    verdict: Option<Verdict>,
    lines: Vec<String>,
) -> Result<Outcome, CliError> {
    let dir = run.path().to_path_buf();
    let manifest = run.finish(config_hash(cfg)?, seed)?;
    Ok(Outcome {
        verdict,
        manifest,
        dir,
        lines,
    })
}

pub fn sample(path: &Path, g: &Globals) -> Result<Outcome, CliError> {
    let mut cfg: config::SampleConfig = config::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let b = parse_drift(&cfg.drift, cfg.dim)?;
    cfg.taming.validate()?;
    if cfg.z0.dim() != cfg.dim {
        return Err(CliError::Config(format!("z0 has dimension {} but dim = {}", cfg.z0.dim(), cfg.dim)));
    }
    if cfg.paths == 0 {
        return Err(CliError::Config("paths must be >= 1".into()));
    }
    let scheme = SchemeConfig {
        inner: cfg.inner,
        ..SchemeConfig::new(cfg.n, cfg.horizon)
    };
    scheme.validate()?;
    let drift: DriftField = match cfg.scheme {
        SchemeKind::Tamed => tame(b, &cfg.taming.at_level(cfg.n), &cfg.mollifier)?,
        SchemeKind::Standard => b,
    };
    let endpoints: Vec<PhaseState> = (0..cfg.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = RngStream::new(cfg.seed, stream_id(SAMPLE_ELEMENT, p));
            let mut noise = StreamNoise(&mut rng);
            let path = match cfg.scheme {
                SchemeKind::Tamed => simulate_tamed_em_with(&cfg.z0, &scheme, drift.as_ref(), &mut noise),
                SchemeKind::Standard => simulate_standard_em_with(&cfg.z0, &scheme, drift.as_ref(), &mut noise),
            }?;
            Ok(path.endpoint)
        })
        .collect::<kinlab::Result<_>>()?;
    let d = cfg.dim;
    let mut header = vec!["path_id".to_string()];
    header.extend((1..=d).map(|i| format!("x{i}")));
    header.extend((1..=d).map(|i| format!("v{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = endpoints
        .iter()
        .enumerate()
        .map(|(p, z)| {
            let mut r = vec![p.to_string()];
            r.extend(z.x().iter().chain(z.v()).map(|c| num(*c)));
            r
        })
        .collect();
    let mut run = RunDir::create(&g.out_dir, "sample")?;
    run.write_table("endpoints", g.format, &header, &rows)?;
    let lines = vec![format!("{} endpoints at T = {} with n = {}", cfg.paths, cfg.horizon, cfg.n)];
    finish(run, &cfg, Some(cfg.seed), None, lines)
}

#[derive(Serialize)]
struct FunctionalVerdict {
    functional_id: String,
    slope: Option<f64>,
    stderr_slope: Option<f64>,
    verdict: String,
}

#[derive(Serialize)]
struct WeakSummary<'a> {
    report: &'a WeakErrorReport,
    rule: &'a WeakVerdict,
    judged: Vec<FunctionalVerdict>,
    verdict: String,
}

/// Applies the pass rule: FAIL if any judged fit misses it, otherwise
/// INCONCLUSIVE if any judged functional has no fit.
pub fn judge_weak(report: &WeakErrorReport, rule: &WeakVerdict) -> Result<(Verdict, Vec<(String, Verdict)>), CliError> {
    for id in &rule.functionals {
        if !report.functionals.iter().any(|f| &f.functional_id == id) {
            return Err(CliError::Config(format!("verdict names unknown functional {id:?}")));
        }
    }
    let mut judged = Vec::new();
    for f in &report.functionals {
        if !rule.functionals.is_empty() && !rule.functionals.contains(&f.functional_id) {
            continue;
        }
        let v = match &f.fit {
            None => Verdict::Inconclusive,
            Some(fit) => {
                let steep = fit.slope <= rule.max_slope;
                let tight = rule.max_stderr_slope.is_none_or(|m| fit.stderr_slope <= m);
                if steep && tight {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                }
            }
        };
        judged.push((f.functional_id.clone(), v));
    }
    let overall = if judged.iter().any(|(_, v)| *v == Verdict::Fail) {
        Verdict::Fail
    } else if judged.iter().any(|(_, v)| *v == Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    Ok((overall, judged))
}

pub fn weak_rate(path: &Path, g: &Globals) -> Result<Outcome, CliError> {
    let mut cfg: config::WeakRateConfig = config::load(path)?;
    if let Some(s) = g.seed {
        cfg.experiment.seed = s;
    }
    let report = weak_error(&cfg.experiment)?;
    let (verdict, judged) = judge_weak(&report, &cfg.verdict)?;
    let mut rows = Vec::new();
    for f in &report.functionals {
        for ((p, resolved), mean) in f.points.iter().zip(&f.resolved).zip(&f.level_means) {
            rows.push(vec![
                f.functional_id.clone(),
                p.n.to_string(),
                num(p.error),
                num(p.stderr),
                resolved.to_string(),
                num(*mean),
                num(f.reference_mean),
            ]);
        }
    }
    let mut run = RunDir::create(&g.out_dir, "weak-rate")?;
    run.write_table(
        "rates",
        g.format,
        &["functional", "n", "error", "stderr", "resolved", "level_mean", "reference_mean"],
        &rows,
    )?;
    let mut lines = Vec::new();
    let judged: Vec<FunctionalVerdict> = judged
        .into_iter()
        .map(|(id, v)| {
            let fit = report
                .functionals
                .iter()
                .find(|f| f.functional_id == id)
                .and_then(|f| f.fit.as_ref());
            lines.push(match fit {
                Some(fit) => format!("{id}: slope {:.4} ± {:.4} -> {v}", fit.slope, fit.stderr_slope),
                None => format!("{id}: no fit -> {v}"),
            });
            FunctionalVerdict {
                functional_id: id,
                slope: fit.map(|f| f.slope),
                stderr_slope: fit.map(|f| f.stderr_slope),
                verdict: v.to_string(),
            }
        })
        .collect();
    for f in &report.functionals {
        let unresolved: Vec<String> = f
            .points
            .iter()
            .zip(&f.resolved)
            .filter(|(_, r)| !**r)
            .map(|(p, _)| p.n.to_string())
            .collect();
        if !unresolved.is_empty() {
            lines.push(format!("warning: {} unresolved at n = {}", f.functional_id, unresolved.join(", ")));
        }
    }
    run.write_json(
        "summary.json",
        &WeakSummary {
            report: &report,
            rule: &cfg.verdict,
            judged,
            verdict: verdict.to_string(),
        },
    )?;
    finish(run, &cfg, Some(cfg.experiment.seed), Some(verdict), lines)
}

pub fn judge_density(report: &DensityReport, rule: &DensityVerdict) -> Verdict {
    let Some(fit) = &report.fit else {
        return Verdict::Inconclusive;
    };
    let smallest = fit
        .per_n_errors
        .iter()
        .map(|p| p.error)
        .fold(f64::INFINITY, f64::min);
    if fit.slope <= rule.max_slope && smallest >= rule.min_floor_ratio * report.noise_floor {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

#[derive(Serialize)]
struct DensitySummary<'a> {
    report: &'a DensityReport,
    rule: &'a DensityVerdict,
    verdict: String,
}

pub fn density(path: &Path, g: &Globals) -> Result<Outcome, CliError> {
    let mut cfg: config::DensityConfig = config::load(path)?;
    if let Some(s) = g.seed {
        cfg.experiment.seed = s;
    }
    let report = density_distance(&cfg.experiment, &cfg.density)?;
    let verdict = judge_density(&report, &cfg.verdict);
    let rows: Vec<Vec<String>> = report
        .points
        .iter()
        .zip(&report.resolved)
        .map(|(p, r)| vec![p.n.to_string(), num(p.error), num(report.noise_floor), r.to_string()])
        .collect();
    let mut run = RunDir::create(&g.out_dir, "density")?;
    run.write_table("distances", g.format, &["n", "distance", "noise_floor", "resolved"], &rows)?;
    run.write_json(
        "summary.json",
        &DensitySummary {
            report: &report,
            rule: &cfg.verdict,
            verdict: verdict.to_string(),
        },
    )?;
    let mut lines = vec![format!("noise floor {:.3e}", report.noise_floor)];
    match &report.fit {
        Some(fit) => lines.push(format!("slope {:.4} ± {:.4}", fit.slope, fit.stderr_slope)),
        None => lines.push("fewer than three distances above the noise floor".into()),
    }
    finish(run, &cfg, Some(cfg.experiment.seed), Some(verdict), lines)
}

#[derive(Serialize)]
struct BesovSummary<'a> {
    report: &'a TamingRateReport,
    levels: usize,
    partition_defect: f64,
    slope_tolerance: f64,
    verdict: String,
}

pub fn judge_besov(report: &TamingRateReport, tolerance: f64) -> Verdict {
    if report.exact {
        return Verdict::Pass;
    }
    match (&report.fit, report.target_slope) {
        (Some(fit), Some(target)) if (fit.slope - target).abs() <= tolerance => Verdict::Pass,
        (Some(_), Some(_)) => Verdict::Fail,
        _ => Verdict::Inconclusive,
    }
}

pub fn besov_rate(path: &Path, g: &Globals) -> Result<Outcome, CliError> {
    let cfg: config::BesovConfig = config::load(path)?;
    let b = parse_drift(&cfg.drift, cfg.dim)?;
    let spec = GridSpec::square(cfg.dim, cfg.grid.extent, cfg.grid.resolution)?;
    let levels = cfg.grid.levels.unwrap_or_else(|| max_levels(&spec));
    let sys = build_block_system(&spec, levels)?;
    let report = taming_rate_fit(b, &cfg.taming, &cfg.mollifier, &cfg.n_set, &sys)?;
    let verdict = judge_besov(&report, cfg.slope_tolerance);
    let rows: Vec<Vec<String>> = report
        .distances
        .iter()
        .map(|(n, d)| vec![n.to_string(), num(*d)])
        .collect();
    let mut run = RunDir::create(&g.out_dir, "besov-rate")?;
    run.write_table("distances", g.format, &["n", "besov_distance"], &rows)?;
    run.write_json(
        "summary.json",
        &BesovSummary {
            report: &report,
            levels,
            partition_defect: sys.partition_defect(),
            slope_tolerance: cfg.slope_tolerance,
            verdict: verdict.to_string(),
        },
    )?;
    let mut lines = vec![format!("blocks 0..={levels}, partition defect {:.2e}", sys.partition_defect())];
    if let (Some(fit), Some(t)) = (&report.fit, report.target_slope) {
        lines.push(format!("slope {:.4} (target {t:.4})", fit.slope));
    } else if report.exact {
        lines.push("taming is exact on this grid".into());
    }
    finish(run, &cfg, None, Some(verdict), lines)
}

pub fn kernel_check(g: &Globals) -> Result<Outcome, CliError> {
    let seed = g.seed.unwrap_or(DEFAULT_KERNEL_SEED);
    let checks = kernel_battery(seed)?;
    let verdict = if checks.iter().all(|c| c.passed) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.name.clone(), c.passed.to_string(), c.detail.clone()])
        .collect();
    let mut run = RunDir::create(&g.out_dir, "kernel-check")?;
    run.write_table("checks", g.format, &["check", "passed", "detail"], &rows)?;
    run.write_json("summary.json", &checks)?;
    let lines = checks
        .iter()
        .map(|c| format!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail))
        .collect();
    finish(run, &seed, Some(seed), Some(verdict), lines)
}

#[derive(Serialize)]
struct TamingSummary<'a> {
    report: &'a kinlab::drift::TamingGrowthReport,
    cutoff_levels: Vec<f64>,
    growth_tolerance: f64,
    verdict: String,
}

pub fn taming_check(path: &Path, g: &Globals) -> Result<Outcome, CliError> {
    let mut cfg: config::TamingCheckConfig = config::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let b = parse_drift(&cfg.drift, cfg.dim)?;
    let family: Vec<(usize, DriftField)> = cfg
        .n_set
        .iter()
        .map(|&n| Ok((n, tame(b.clone(), &cfg.taming.at_level(n), &cfg.mollifier)?)))
        .collect::<kinlab::Result<_>>()?;
    let report = kinlab::drift::verify_taming_growth(&family, &cfg.taming, cfg.sample_budget, cfg.seed)?;
    let cutoff_levels: Vec<f64> = cfg.n_set.iter().map(|&n| cfg.taming.at_level(n).cutoff_level()).collect();
    let mut ok = report.passed;
    let mut lines = Vec::new();
    if cfg.taming.kind == TamingKind::Cutoff {
        for (row, level) in report.rows.iter().zip(&cutoff_levels) {
            if row.sup > *level {
                ok = false;
                lines.push(format!("n = {}: sup {} exceeds the cutoff {}", row.n, row.sup, level));
            }
        }
        if let Some(e) = report.growth_exponent {
            lines.push(format!("growth exponent {e:.4} (kappa {})", cfg.taming.kappa));
            if (e - cfg.taming.kappa).abs() > cfg.growth_tolerance {
                ok = false;
            }
        }
    }
    let verdict = if ok { Verdict::Pass } else { Verdict::Fail };
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![r.n.to_string(), num(r.sup), num(r.normalized)])
        .collect();
    let mut run = RunDir::create(&g.out_dir, "taming-check")?;
    run.write_table("growth", g.format, &["n", "sup", "normalized"], &rows)?;
    run.write_json(
        "summary.json",
        &TamingSummary {
            report: &report,
            cutoff_levels,
            growth_tolerance: cfg.growth_tolerance,
            verdict: verdict.to_string(),
        },
    )?;
    finish(run, &cfg, Some(cfg.seed), Some(verdict), lines)
}
