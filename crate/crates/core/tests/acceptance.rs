//! Acceptance run: one PASS/FAIL/SKIP line per criterion. Exits nonzero if
//! any criterion fails.
//!
//! The published-scene reproduction runs only when CSV exports are supplied:
//! `SVDD_BOTSWANA_CSV`, `SVDD_KSC_CSV` (raw, saturation is corrected here) and
//! `SVDD_INDIAN_PINES_CSV`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{gram, projected_gradient_oracle, rng, uniform_points};
use rand::Rng;
use svdd::dataprep::{correct_saturation, max_normalize, DEFAULT_SATURATION_THRESHOLD};
use svdd::experiment::{report_json, run_experiment, run_on_table};
use svdd::multiclass::{fuse, train_multiclass, FusionSpace};
use svdd::{
    gaussian_kernel, solve, BandwidthMethod, BandwidthOptions, ExperimentConfig, KernelParams, SampleTable,
    SolverSettings, SvddModel,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn(&mut Vec<SvddModel>) -> Outcome;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn settings_with_c(n: usize, c: f64) -> SolverSettings {
    SolverSettings {
        outlier_fraction: Some(1.0 / (n as f64 * c)),
        ..Default::default()
    }
}

/// Largest violation of the three KKT position rules.
fn kkt_violation(out: &svdd::solver::TrainingOutcome, data: &[svdd::Observation], tol: f64) -> f64 {
    let m = &out.model;
    let (c, r2) = (m.penalty(), m.r_squared());
    let any_free = out.alphas.iter().any(|&a| a > tol && a < c - tol);
    let mut worst: f64 = 0.0;
    for (x, &a) in data.iter().zip(&out.alphas) {
        let d2 = m.score_distance2(x).unwrap();
        let v = if a <= tol {
            d2 - r2
        } else if a >= c - tol {
            if any_free {
                r2 - d2
            } else {
                d2 - r2
            }
        } else {
            (d2 - r2).abs()
        };
        worst = worst.max(v);
    }
    worst
}

fn solver_correctness(models: &mut Vec<SvddModel>) -> Outcome {
    let start = Instant::now();
    let mut r = rng(20_260_101);
    let mut worst_obj: f64 = 0.0;
    let mut worst_kkt: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(2..=12);
        let p = r.random_range(1..=3);
        let s = [0.5, 1.0, 2.0][r.random_range(0..3)];
        let c = [1.0, 0.5][r.random_range(0..2)];
        let data = uniform_points(&mut r, n, p);
        let settings = settings_with_c(n, c);
        let out = solve(&data, &KernelParams::new(s).unwrap(), &settings).unwrap();
        let (_, oracle) = projected_gradient_oracle(&gram(&data, s), out.model.penalty(), 200_000);
        worst_obj = worst_obj.max((out.objective - oracle).abs());
        worst_kkt = worst_kkt.max(kkt_violation(&out, &data, settings.alpha_zero_tolerance));
        models.push(out.model);
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_obj <= 1e-6 && worst_kkt <= 1e-6 && secs < 60.0,
        format!("max |objective - oracle| = {worst_obj:.2e}, max KKT violation = {worst_kkt:.2e}, {secs:.1} s"),
    )
}

fn two_point(models: &mut Vec<SvddModel>) -> Outcome {
    let mut r = rng(77);
    let mut worst_alpha: f64 = 0.0;
    let mut worst_r2: f64 = 0.0;
    for _ in 0..100 {
        let p = r.random_range(1..=5);
        let data = uniform_points(&mut r, 2, p);
        let s = r.random_range(0.2..3.0);
        let params = KernelParams::new(s).unwrap();
        let out = solve(&data, &params, &SolverSettings::default()).unwrap();
        let k12 = gaussian_kernel(&data[0], &data[1], &params).unwrap();
        worst_alpha = worst_alpha.max((out.alphas[0] - 0.5).abs()).max((out.alphas[1] - 0.5).abs());
        worst_r2 = worst_r2.max((out.model.r_squared() - (1.0 - k12) / 2.0).abs());
        models.push(out.model);
    }
    check(
        worst_alpha <= 1e-8 && worst_r2 <= 1e-9,
        format!("100 pairs, max |alpha - 0.5| = {worst_alpha:.2e}, max R2 error = {worst_r2:.2e}"),
    )
}

fn more_models(models: &mut Vec<SvddModel>) {
    let ring = common::annulus(5, 200);
    for s in [0.05, 0.2, 0.5, 1.0, 3.0] {
        for c in [1.0, 0.1, 0.02] {
            let settings = settings_with_c(ring.len(), c);
            models.push(svdd::train_svdd(&ring, &KernelParams::new(s).unwrap(), &settings).unwrap());
        }
    }
    let table = common::two_blobs(9, 100, 5, 0.5, 3.0);
    for method in BandwidthMethod::ALL {
        let m = train_multiclass(&table, method, &BandwidthOptions::default(), &SolverSettings::default()).unwrap();
        models.extend(m.classes().iter().map(|c| c.model.clone()));
    }
}

fn boundary_identity(models: &mut Vec<SvddModel>) -> Outcome {
    more_models(models);
    let tol = SolverSettings::default().alpha_zero_tolerance;
    let mut worst: f64 = 0.0;
    let mut free = 0;
    for m in models.iter() {
        for (sv, &a) in m.support_vectors().iter().zip(m.alphas()) {
            if a > tol && a < m.penalty() - tol {
                free += 1;
                worst = worst.max((m.score_distance2(sv).unwrap() - m.r_squared()).abs());
            }
        }
    }
    check(
        worst <= 1e-6 && free > 0,
        format!("{} models, {free} free SVs, max |dist2 - R2| = {worst:.2e}", models.len()),
    )
}

fn modified_mean_delta(_: &mut Vec<SvddModel>) -> Outcome {
    use svdd::bandwidth::{delta_polynomial, solve_delta_fixed_point, FIXED_POINT_MAX_ITER, FIXED_POINT_TOLERANCE};
    let start = Instant::now();
    let fixed = |n: usize| solve_delta_fixed_point(n, FIXED_POINT_TOLERANCE, FIXED_POINT_MAX_ITER).unwrap().0;
    let mut worst_residual: f64 = 0.0;
    for k in 1..=6 {
        let n = 10usize.pow(k);
        let d = fixed(n);
        worst_residual = worst_residual.max((d - ((n as f64 - 1.0).ln() - 2.0 * d.ln()).powf(-1.5)).abs());
    }
    let count = 200;
    let mse = (0..count)
        .map(|k| {
            let n = 10f64.powf(1.0 + 5.0 * k as f64 / (count - 1) as f64).round() as usize;
            (delta_polynomial(n).unwrap() - fixed(n)).powi(2)
        })
        .sum::<f64>()
        / count as f64;
    check(
        worst_residual <= 1e-10 && mse <= 1e-9,
        format!(
            "max residual = {worst_residual:.2e}, polynomial MSE = {mse:.2e}, {:.3} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn fusion_rule(_: &mut Vec<SvddModel>) -> Outcome {
    // Class A (id 0) has the smaller sphere; the point is equally far from
    // both centres and outside both.
    let (a, inside, _) = fuse(&[2.0, 2.0], &[0.5, 1.5], FusionSpace::Squared);
    let (b, _, _) = fuse(&[2.0, 2.0], &[0.5, 1.5], FusionSpace::Unsquared);
    let larger_sphere_wins = a == 1 && b == 1 && inside.is_empty();

    let mut cases = 0;
    let mut disagreements = 0;
    let mut r = rng(31);
    for _ in 0..5000 {
        let k = r.random_range(1..6);
        let d2: Vec<f64> = (0..k).map(|_| r.random_range(0.0..2.0)).collect();
        let r2: Vec<f64> = (0..k).map(|_| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..1.0) }).collect();
        cases += 1;
        let x = fuse(&d2, &r2, FusionSpace::Squared);
        let y = fuse(&d2, &r2, FusionSpace::Unsquared);
        if x.0 != y.0 || x.1 != y.1 {
            disagreements += 1;
        }
    }
    let table = common::two_blobs(12, 80, 3, 0.8, 1.5);
    let model = train_multiclass(&table, BandwidthMethod::ModifiedMean, &BandwidthOptions::default(), &SolverSettings::default())
        .unwrap();
    let probes = uniform_points(&mut r, 2000, 3);
    for z in probes.iter().chain(table.features()) {
        cases += 1;
        let x = model.fuse_label_in(z, FusionSpace::Squared).unwrap();
        let y = model.fuse_label_in(z, FusionSpace::Unsquared).unwrap();
        if x.assigned != y.assigned {
            disagreements += 1;
        }
    }
    check(
        larger_sphere_wins && disagreements == 0,
        format!("equal distances with R_A < R_B -> class {}; squared vs unsquared disagree on {disagreements}/{cases}", ["A", "B"][a]),
    )
}

fn preprocessing(_: &mut Vec<SvddModel>) -> Outcome {
    let mut r = rng(4);
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            (0..6)
                .map(|_| if r.random_bool(0.05) { r.random_range(65_500.5..66_000.0) } else { r.random_range(0.0..1244.0) })
                .collect()
        })
        .collect();
    let labels: Vec<String> = (0..300).map(|i| format!("c{}", i % 3)).collect();
    let table = SampleTable::from_rows(rows, &labels).unwrap();
    let saturated = table.features().iter().flatten().filter(|&&v| v > 65_500.0).count();

    let corrected = correct_saturation(&table, DEFAULT_SATURATION_THRESHOLD).unwrap();
    let zeroed = table
        .features()
        .iter()
        .flatten()
        .zip(corrected.features().iter().flatten())
        .all(|(&before, &after)| if before > 65_500.0 { after == 0.0 } else { after == before });
    let normalized = max_normalize(&corrected).unwrap();
    let in_range = normalized.features().iter().flatten().all(|v| (0.0..=1.0).contains(v));
    let sat_idem = correct_saturation(&corrected, DEFAULT_SATURATION_THRESHOLD).unwrap().features() == corrected.features();
    let norm_idem = max_normalize(&normalized).unwrap().features() == normalized.features();
    check(
        saturated > 0 && zeroed && in_range && sat_idem && norm_idem,
        format!(
            "{saturated} saturated values zeroed: {zeroed}, range in [0,1]: {in_range}, idempotent: {sat_idem}/{norm_idem}"
        ),
    )
}

fn published_scenes(_: &mut Vec<SvddModel>) -> Outcome {
    // (env var, saturation correction, published modified-mean average)
    let scenes = [
        ("SVDD_BOTSWANA_CSV", false, 87.61),
        ("SVDD_KSC_CSV", true, 84.64),
        ("SVDD_INDIAN_PINES_CSV", false, 56.15),
    ];
    let mut lines = Vec::new();
    let mut ok = true;
    let mut ran = 0;
    for (var, saturation, target) in scenes {
        let Some(path) = std::env::var_os(var) else {
            lines.push(format!("{var} unset"));
            continue;
        };
        ran += 1;
        let mut config = ExperimentConfig::new(path);
        config.dataset.saturation_threshold = saturation.then_some(DEFAULT_SATURATION_THRESHOLD);
        let report = match run_experiment(&config) {
            Ok(r) => r,
            Err(e) => {
                ok = false;
                lines.push(format!("{var}: {e}"));
                continue;
            }
        };
        let avg = |m| report.method(m).and_then(|r| r.average_oa).unwrap_or(f64::NAN);
        let (mm, mean, var_oa) = (avg(BandwidthMethod::ModifiedMean), avg(BandwidthMethod::Mean), avg(BandwidthMethod::Var));
        let close = (mm - target).abs() <= 3.0;
        let ordered = mm > mean && mm > var_oa;
        ok &= close && ordered;
        lines.push(format!(
            "{var}: modified_mean {mm:.2} (published {target}), mean {mean:.2}, var {var_oa:.2}{}{}",
            if close { "" } else { " [off by more than 3]" },
            if ordered { "" } else { " [ordering broken]" }
        ));
    }
    let detail = lines.join("; ");
    if ran == 0 {
        Outcome::Skip(format!("no scene exports supplied ({detail})"))
    } else {
        check(ok, detail)
    }
}

fn determinism(_: &mut Vec<SvddModel>) -> Outcome {
    let table = common::two_blobs(13, 80, 4, 0.9, 2.0);
    let mut config = ExperimentConfig::new("synthetic.csv");
    config.methods = BandwidthMethod::ALL.to_vec();
    config.split.repetitions = 3;
    config.split.seed = 1234;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| report_json(&run_on_table(&table, &config).unwrap()).unwrap())
    };
    let one = run(1);
    let four = run(4);
    let again = run(1);
    check(
        one == four && one == again,
        format!("report.json of {} bytes, 1 vs 4 threads identical: {}", one.len(), one == four),
    )
}

fn synthetic_end_to_end(_: &mut Vec<SvddModel>) -> Outcome {
    let table = common::two_blobs(2026, 200, 4, 0.6, 3.0);
    let mut config = ExperimentConfig::new("synthetic.csv");
    config.methods = BandwidthMethod::ALL.to_vec();
    config.split.repetitions = 1;
    let start = Instant::now();
    let report = run_on_table(&table, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let oas: Vec<String> = report
        .methods
        .iter()
        .map(|m| format!("{} {}", m.method, m.average_oa.map_or("failed".into(), |v| format!("{v:.2}"))))
        .collect();
    let ok = report.methods.iter().all(|m| m.average_oa.is_some_and(|v| v >= 95.0));
    check(ok && secs < 10.0, format!("{}, {secs:.2} s", oas.join(", ")))
}

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("solver correctness vs oracle", solver_correctness),
        ("two-point analytic solution", two_point),
        ("boundary identity", boundary_identity),
        ("modified-mean delta", modified_mean_delta),
        ("fusion rule", fusion_rule),
        ("preprocessing", preprocessing),
        ("published scene accuracy", published_scenes),
        ("determinism across thread counts", determinism),
        ("synthetic end-to-end", synthetic_end_to_end),
    ];
    let mut models = Vec::new();
    let mut failures = 0;
    for (name, run) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut models)))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome::Fail(format!("panicked: {msg}"))
            });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::Fail(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name}: {detail}");
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
