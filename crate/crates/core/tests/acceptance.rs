//! End-to-end acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so the criteria execute in order and
//! report their own timings. Pass a substring to run only the criteria
//! whose name contains it. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use tunegen::corpus::{corpus_table, random_core_program, CorpusConfig};
use tunegen::inference::{
    compile_feature, compile_main, exact_distribution, push_forward, support, wmc_grad,
    DEFAULT_VALUE_BUDGET,
};
use tunegen::ir::{enumerate_semantics, CoreExpr};
use tunegen::objectives::{entropy_exact, Estimator, ExactEntropy, SpecEntropyReinforce, TargetKl};
use tunegen::sampler::{chi_square, empirical_report, sample, ReportRow};
use tunegen::surface::{parse_program, Program, SurfaceValue};
use tunegen::trainer::{train, Objective, TrainConfig};
use tunegen::weights::{WeightAssignment, WeightTable};
use tunegen::workloads::{app_count_target, chars_target, linear_target, uniform_target, workload};
use tunegen::Result;

const CORPUS_SEED: u64 = 2024;
const CORPUS_PROGRAMS: usize = 100;
const WEIGHT_SETS: usize = 10;
const ORACLE_TOL: f64 = 1e-12;
const FD_STEP: f64 = 1e-6;
const FD_REL_TOL: f64 = 1e-6;
const FD_ABS_TOL: f64 = 1e-9;
const REPORT_SAMPLES: usize = 100_000;
const REPORT_SEED: u64 = 7;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

struct Corpus {
    table: WeightTable,
    programs: Vec<CoreExpr>,
    weights: Vec<Vec<WeightAssignment>>,
}

fn corpus() -> Corpus {
    let cfg = CorpusConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED);
    let programs: Vec<CoreExpr> = (0..CORPUS_PROGRAMS)
        .map(|_| random_core_program(&mut rng, &cfg))
        .collect();
    // Kept away from 0 and 1 so finite differences stay inside the domain.
    let weights = programs
        .iter()
        .map(|_| {
            (0..WEIGHT_SETS)
                .map(|_| {
                    WeightAssignment(
                        (0..cfg.symbolic_weights)
                            .map(|_| rng.gen_range(0.01..0.99))
                            .collect(),
                    )
                })
                .collect()
        })
        .collect();
    Corpus {
        table: corpus_table(&cfg),
        programs,
        weights,
    }
}

fn oracle_equivalence(c: &Corpus) -> Result<Verdict> {
    let mut worst = 0.0f64;
    for (e, ws) in c.programs.iter().zip(&c.weights) {
        let mut compiled = tunegen::compile::compile(e)?;
        for w in ws {
            let got = exact_distribution(&mut compiled, w, DEFAULT_VALUE_BUDGET)?;
            let want: BTreeMap<SurfaceValue, f64> = enumerate_semantics(e, w, 20)?
                .iter()
                .map(|(v, p)| (SurfaceValue::from_core(v), *p))
                .collect();
            for v in got.keys().chain(want.keys()) {
                let d = (got.get(v).copied().unwrap_or(0.0) - want.get(v).copied().unwrap_or(0.0))
                    .abs();
                worst = worst.max(d);
            }
        }
    }
    let n = c.programs.len() * WEIGHT_SETS;
    let flips: usize = c.programs.iter().map(CoreExpr::flip_count).sum();
    let mean = flips as f64 / c.programs.len() as f64;
    verdict(
        worst <= ORACLE_TOL,
        format!("{n} program/weight pairs, {mean:.1} flips on average, max abs diff {worst:.2e}"),
    )
}

fn gradient_vs_finite_differences(c: &Corpus) -> Result<Verdict> {
    let mut checked = 0usize;
    let mut worst_rel = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut failures = 0usize;
    for (e, ws) in c.programs.iter().zip(&c.weights) {
        let mut compiled = tunegen::compile::compile(e)?;
        let values = support(&mut compiled, DEFAULT_VALUE_BUDGET)?;
        let m = &compiled.manager;
        for w in ws {
            for (_, root) in &values {
                let (_, grad) = wmc_grad(m, *root, w)?;
                for i in 0..w.len() {
                    let at = |delta: f64| {
                        let mut v = w.clone();
                        v.0[i] += delta;
                        tunegen::inference::wmc(m, *root, &v)
                    };
                    let fd = (at(FD_STEP)? - at(-FD_STEP)?) / (2.0 * FD_STEP);
                    let g = grad.get(i).copied().unwrap_or(0.0);
                    let abs = (g - fd).abs();
                    let rel = abs / fd.abs().max(f64::MIN_POSITIVE);
                    checked += 1;
                    worst_abs = worst_abs.max(abs);
                    if abs > FD_ABS_TOL {
                        worst_rel = worst_rel.max(rel);
                        if rel >= FD_REL_TOL {
                            failures += 1;
                        }
                    }
                }
            }
        }
    }
    verdict(
        failures == 0,
        format!(
            "{checked} coordinates, {failures} outside tolerance, worst abs {worst_abs:.1e}, worst rel above abs floor {worst_rel:.1e}"
        ),
    )
}

fn exact_objective(
    program: &Program,
    table: &mut WeightTable,
    feature: &str,
    target: &[(SurfaceValue, f64)],
) -> Result<TargetKl> {
    TargetKl::new(&compile_feature(program, feature, table)?, target)
}

fn chars_target_kl() -> Result<Verdict> {
    let wl = workload("chars")?;
    let mut table = WeightTable::new();
    let mut obj = Objective::TargetKl(exact_objective(
        &wl.program,
        &mut table,
        "id",
        &chars_target(),
    )?);
    let cfg = TrainConfig {
        clamp: false,
        ..wl.train.clone()
    };
    let init = table.initial();
    let r = train(&mut obj, &mut table, &init, &cfg)?;
    let Objective::TargetKl(o) = &obj else {
        unreachable!()
    };
    let kl = o.kl(&r.weights)?;
    let probs = o.feature_probs(&r.weights)?;
    let off = probs
        .iter()
        .map(|(_, p)| (p - 0.2).abs())
        .fold(0.0, f64::max);
    let shown: Vec<String> = probs.iter().map(|(v, p)| format!("{v}={p:.3}")).collect();
    verdict(
        kl < 1e-4 && off <= 0.02,
        format!("KL {kl:.2e}, {}", shown.join(" ")),
    )
}

fn chars_entropy() -> Result<Verdict> {
    let wl = workload("chars")?;
    let mut table = WeightTable::new();
    let mut obj = Objective::Entropy(ExactEntropy::new(compile_main(&wl.program, &mut table)?)?);
    let cfg = TrainConfig {
        clamp: false,
        ..wl.train.clone()
    };
    let init = table.initial();
    let r = train(&mut obj, &mut table, &init, &cfg)?;
    let h = entropy_exact(&wl.program, &mut table, &r.weights)?.value;
    let ln5 = 5f64.ln();
    verdict(
        (h - ln5).abs() <= 1e-3,
        format!("entropy {h:.6}, ln 5 = {ln5:.6}"),
    )
}

/// Untuned and tuned KL for each target over one compiled feature.
fn kl_pairs(
    name: &str,
    feature: &str,
    targets: &[(&str, Vec<(SurfaceValue, f64)>)],
    cfg: &TrainConfig,
) -> Result<Vec<(String, f64, f64)>> {
    let wl = workload(name)?;
    let mut table = WeightTable::new();
    let compiled = compile_feature(&wl.program, feature, &mut table)?;
    let mut out = Vec::new();
    for (label, target) in targets {
        let mut obj = Objective::TargetKl(TargetKl::new(&compiled, target)?);
        let init = table.initial();
        let r = train(&mut obj, &mut table, &init, cfg)?;
        let Objective::TargetKl(o) = &obj else {
            unreachable!()
        };
        out.push((label.to_string(), o.kl(&init)?, o.kl(&r.weights)?));
    }
    Ok(out)
}

fn describe(pairs: &[(String, f64, f64)]) -> String {
    pairs
        .iter()
        .map(|(l, u, t)| format!("{l} {u:.3} -> {t:.4}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn tree_heights() -> Result<Verdict> {
    // Height counts edges, so the lone leaf has height 0 and targets cover 1..=5.
    let targets = [
        ("uniform", uniform_target(1, 5)),
        ("linear", linear_target(1, 5)),
    ];
    let pairs = kl_pairs("tree", "height", &targets, &workload("tree")?.train)?;
    let pass = pairs[0].2 < 0.01 && pairs.iter().all(|(_, u, t)| t < u);
    verdict(pass, describe(&pairs))
}

fn bespoke_heights() -> Result<Verdict> {
    let targets = [
        ("uniform", uniform_target(0, 12)),
        ("linear", linear_target(0, 12)),
    ];
    let pairs = kl_pairs(
        "stlc-bespoke",
        "opt-height",
        &targets,
        &workload("stlc-bespoke")?.train,
    )?;
    let bands = [0.22, 0.27];
    let pass = pairs
        .iter()
        .zip(bands)
        .all(|((_, u, t), b)| t < u && (t - b).abs() <= 0.15);
    verdict(pass, describe(&pairs))
}

fn reinforce_unbiased() -> Result<Verdict> {
    const BATCHES: usize = 10_000;
    const SPB: usize = 10;
    let wl = workload("chars")?;
    let mut table = WeightTable::new();
    let mut obj =
        SpecEntropyReinforce::new(&wl.program, &mut table, None, None, Estimator::default())?;
    // A point away from the symmetric initial weights.
    let k = table.len() as f64;
    let w = WeightAssignment((0..table.len()).map(|i| 0.2 + 0.6 * i as f64 / k).collect());
    let exact = entropy_exact(&wl.program, &mut table, &w)?.grad;
    let k = exact.len();
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for b in 0..BATCHES {
        let ev = obj.evaluate(&mut table, &w, SPB, 11, (b * SPB) as u64)?;
        for i in 0..k {
            let g = ev.grad.get(i).copied().unwrap_or(0.0);
            sum[i] += g;
            sq[i] += g * g;
        }
    }
    let n = BATCHES as f64;
    let mut worst = 0.0f64;
    for i in 0..k {
        let mean = sum[i] / n;
        let var = (sq[i] / n - mean * mean).max(0.0) * n / (n - 1.0);
        let se = (var / n).sqrt();
        let z = if se > 0.0 {
            (mean - exact[i]).abs() / se
        } else if (mean - exact[i]).abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY
        };
        worst = worst.max(z);
    }
    verdict(
        worst <= 3.0,
        format!("{k} coordinates, {BATCHES} batches of {SPB}, worst |z| {worst:.2}"),
    )
}

fn rbt_report(
    wl: &tunegen::workloads::Workload,
    table: &mut WeightTable,
    w: &WeightAssignment,
) -> Result<ReportRow> {
    let rows = empirical_report(
        &wl.program,
        table,
        w,
        wl.validity,
        REPORT_SAMPLES,
        REPORT_SEED,
    )?;
    Ok(rows.last().cloned().expect("non-empty report"))
}

fn rbt_tuned(clamp: bool) -> Result<(ReportRow, ReportRow)> {
    let wl = workload("rbt")?;
    let mut table = WeightTable::new();
    let obj = SpecEntropyReinforce::new(
        &wl.program,
        &mut table,
        wl.validity,
        None,
        Estimator::default(),
    )?;
    let init = table.initial();
    let untuned = rbt_report(&wl, &mut table, &init)?;
    let cfg = TrainConfig {
        clamp,
        ..wl.train.clone()
    };
    let r = train(&mut Objective::Reinforce(obj), &mut table, &init, &cfg)?;
    Ok((untuned, rbt_report(&wl, &mut table, &r.weights)?))
}

fn row(r: &ReportRow) -> String {
    format!(
        "{} unique valid, {:.1}% valid",
        r.unique_valid,
        100.0 * r.validity_rate
    )
}

fn rbt_spec_entropy(clamped_run: &mut Option<ReportRow>) -> Result<Verdict> {
    let (untuned, clamped) = rbt_tuned(true)?;
    let pass = clamped.unique_valid >= 2 * untuned.unique_valid
        && clamped.validity_rate >= untuned.validity_rate + 0.05;
    let detail = format!("untuned {}; tuned {}", row(&untuned), row(&clamped));
    *clamped_run = Some(clamped);
    verdict(pass, detail)
}

/// Reuses the clamped run of the previous criterion when it ran.
fn rbt_clamp_helps(clamped_run: &Option<ReportRow>) -> Result<Verdict> {
    let clamped = match clamped_run {
        Some(r) => r.clone(),
        None => rbt_tuned(true)?.1,
    };
    let (_, unclamped) = rbt_tuned(false)?;
    verdict(
        clamped.unique_valid >= unclamped.unique_valid,
        format!("clamped {}; unclamped {}", row(&clamped), row(&unclamped)),
    )
}

fn stlc_type_diversity() -> Result<Verdict> {
    let wl = workload("stlc")?;
    let mut table = WeightTable::new();
    let obj = SpecEntropyReinforce::new(
        &wl.program,
        &mut table,
        wl.validity,
        Some("type-of"),
        Estimator::default(),
    )?;
    let init = table.initial();
    let r = train(&mut Objective::Reinforce(obj), &mut table, &init, &wl.train)?;
    let share = |w: &WeightAssignment, table: &mut WeightTable| -> Result<(f64, f64)> {
        let d = push_forward(&wl.program, "type-of", table, w)?;
        let none = SurfaceValue::ctor("None", vec![]);
        let ill = d.get(&none).copied().unwrap_or(0.0);
        let top = d
            .iter()
            .filter(|(v, _)| **v != none)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        Ok((ill, top))
    };
    let (u_ill, u_top) = share(&init, &mut table)?;
    let (ill, top) = share(&r.weights, &mut table)?;
    verdict(
        ill + top < 0.20,
        format!("ill-typed + top type: untuned {u_ill:.3} + {u_top:.3}, tuned {ill:.4} + {top:.4}"),
    )
}

fn bespoke_app_count() -> Result<Verdict> {
    let wl = workload("stlc-bespoke")?;
    let mut table = WeightTable::new();
    let mut obj = Objective::TargetKl(exact_objective(
        &wl.program,
        &mut table,
        "opt-app-count",
        &app_count_target(),
    )?);
    let init = table.initial();
    let r = train(&mut obj, &mut table, &init, &wl.train)?;
    let Objective::TargetKl(o) = &obj else {
        unreachable!()
    };
    let (before, kl) = (o.kl(&init)?, o.kl(&r.weights)?);
    let p0 = o
        .feature_probs(&r.weights)?
        .into_iter()
        .find(|(v, _)| *v == SurfaceValue::Nat(0))
        .map_or(0.0, |(_, p)| p);
    verdict(
        kl < 0.05 && (p0 - 0.4).abs() < 0.05,
        format!("KL {before:.3} -> {kl:.4}, p(0) = {p0:.3}"),
    )
}

fn sampler_chi_square(c: &Corpus) -> Result<Verdict> {
    const N: usize = 100_000;
    const ALPHA: f64 = 1e-4;
    let mut tested = 0usize;
    let mut min_p = 1.0f64;
    for (i, (e, ws)) in c.programs.iter().zip(&c.weights).enumerate() {
        if e.flip_count() > 8 {
            continue;
        }
        let mut table = c.table.clone();
        let program = parse_program(&format!("(main {})", e.to_surface(&table)))?;
        compile_main(&program, &mut table)?;
        let w = table.assignment_from_pairs(c.table.named(&ws[0]))?;
        let expected = exact_distribution(
            &mut tunegen::compile::compile(e)?,
            &ws[0],
            DEFAULT_VALUE_BUDGET,
        )?;
        let mut counts: BTreeMap<SurfaceValue, usize> = BTreeMap::new();
        for v in sample(&program, &mut table, &w, N, 100 + i as u64)? {
            *counts.entry(v).or_default() += 1;
        }
        let observed: Vec<(SurfaceValue, usize)> = counts.into_iter().collect();
        let (stat, df) = chi_square(&observed, &expected);
        let p = if df == 0 {
            if stat == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - ChiSquared::new(df as f64).expect("positive df").cdf(stat)
        };
        min_p = min_p.min(p);
        tested += 1;
    }
    verdict(
        min_p >= ALPHA && tested > 0,
        format!("{tested} programs of at most 8 flips, min p-value {min_p:.2e}"),
    )
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected =
        |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut failed = 0usize;
    let mut run =
        |n: usize, name: &str, limit_secs: u64, f: &mut dyn FnMut() -> Result<Verdict>| {
            if !selected(name) {
                return;
            }
            let t0 = Instant::now();
            let outcome = f();
            let secs = t0.elapsed();
            let limit = Duration::from_secs(limit_secs);
            let (pass, detail) = match outcome {
                Ok(v) if secs > limit => (false, format!("{} (over the time limit)", v.detail)),
                Ok(v) => (v.pass, v.detail),
                Err(e) => (false, format!("error: {e}")),
            };
            if !pass {
                failed += 1;
            }
            let tag = if pass { "PASS" } else { "FAIL" };
            println!(
                "{tag} {n:>2} {name}: {detail} [{:.1}s / {limit_secs}s]",
                secs.as_secs_f64()
            );
        };

    let c = corpus();
    let mut rbt: Option<ReportRow> = None;
    run(1, "oracle-equivalence", 30, &mut || oracle_equivalence(&c));
    run(2, "gradient-finite-differences", 60, &mut || {
        gradient_vs_finite_differences(&c)
    });
    run(3, "chars-target-kl", 10, &mut chars_target_kl);
    run(4, "chars-entropy", 60, &mut chars_entropy);
    run(5, "tree-height-targets", 300, &mut tree_heights);
    run(6, "bespoke-stlc-height-targets", 600, &mut bespoke_heights);
    run(7, "reinforce-unbiased", 120, &mut reinforce_unbiased);
    run(8, "rbt-spec-entropy", 900, &mut || {
        rbt_spec_entropy(&mut rbt)
    });
    run(9, "rbt-clamp-vs-unclamped", 1200, &mut || {
        rbt_clamp_helps(&rbt)
    });
    run(10, "stlc-type-diversity", 1200, &mut stlc_type_diversity);
    run(11, "bespoke-stlc-app-count", 600, &mut bespoke_app_count);
    run(12, "sampler-chi-square", 60, &mut || sampler_chi_square(&c));

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
