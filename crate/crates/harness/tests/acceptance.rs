//! End-to-end acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the verdict lines are never captured. Exits
//! non-zero when any criterion fails.

use std::io::Write;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use pfa_core::generator::{random_pfa, random_strings, GenConfig};
use pfa_core::learner::{extract_pfa, forward, HeadMode, LearnableModel, ModelOptions};
use pfa_core::oracle::{enumerate_paths_probability, forward_dp_marginals, PathEnumerationBudget};
use pfa_core::stochastic::{seeded_rng, AcceptIndicator};
use pfa_harness::experiment::{run_experiment, ConfigId, ExperimentKind, ExperimentReport, ExperimentSpec};
use pfa_harness::gradcheck::{gradcheck_suite, MAX_REL_ERROR};
use pfa_harness::report::{emit_report, ReportFormat};
use rand::Rng;

const ORACLE_TOL: f64 = 1e-9;
const ORACLE_INSTANCES: u64 = 200;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);

const EXACT_CONFIG1_BUDGET: Duration = Duration::from_secs(30);
const EXACT_CONFIG2_BUDGET: Duration = Duration::from_secs(600);
const CLOSURE_BUDGET: Duration = Duration::from_secs(120);

const ROUND_TRIP_TOL: f64 = 1e-9;
const ROUND_TRIP_STRINGS: usize = 100;

const LEARN_CONFIG1_TARGET: f64 = 0.99;
const LEARN_CONFIG1_BUDGET: Duration = Duration::from_secs(120);
const LEARN_CONFIG2_TARGET: f64 = 0.99;
const LEARN_CONFIG2_BUDGET: Duration = Duration::from_secs(45 * 60);
const LEARN_PROXY_TARGET: f64 = 0.97;
const LEARN_PROXY_BUDGET: Duration = Duration::from_secs(300);

const GRADCHECK_CASES: usize = 24;
const GRADCHECK_SEED: u64 = 0;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(30);

const PARAM_SHAPES: usize = 10;

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{tag} {name}: {detail}");
    Verdict { name, pass, detail }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn run(kind: ExperimentKind, config: ConfigId, scaled: bool) -> (ExperimentReport, Duration) {
    let mut spec = ExperimentSpec::new(kind, config);
    spec.scaled = scaled;
    let (report, elapsed) = timed(|| run_experiment(&spec));
    (report.expect("experiment runs"), elapsed)
}

fn exact(report: &ExperimentReport) -> bool {
    report.mean == 1.0 && report.std == 0.0 && report.failures == 0
}

fn summary(report: &ExperimentReport, elapsed: Duration) -> String {
    format!(
        "{} config {} mean {:.4} std {:.4} CI ({:.4}, {:.4}) seeds {} failures {} in {:.1}s",
        report.experiment,
        report.config,
        report.mean,
        report.std,
        report.ci_low,
        report.ci_high,
        report.seeds.len(),
        report.failures,
        elapsed.as_secs_f64()
    )
}

/// Report text with every timing field zeroed.
fn canonical(report: &ExperimentReport) -> String {
    let mut r = report.clone();
    r.runtime_seconds = 0.0;
    let csv = emit_report(std::slice::from_ref(&r), ReportFormat::Csv);
    format!("{csv}{}", serde_json::to_string(&r).expect("report serializes"))
}

fn oracle_exactness() -> Verdict {
    let budget = PathEnumerationBudget::default();
    let ((worst_prob, worst_marginal, checked), elapsed) = timed(|| {
        let (mut wp, mut wm, mut checked) = (0.0f64, 0.0f64, 0usize);
        for seed in 0..ORACLE_INSTANCES {
            let mut rng = seeded_rng(seed);
            let cfg = GenConfig {
                n: rng.random_range(1..=4),
                alphabet_size: rng.random_range(1..=3),
                num_strings: 10,
                len_min: 1,
                len_max: 6,
                ..GenConfig::config1(seed)
            };
            let pfa = random_pfa(&cfg, &mut rng).unwrap();
            let mut strings = random_strings(&cfg, &mut rng).unwrap();
            strings.push(String::new());
            for s in &strings {
                let engine = pfa.accept_probability(s).unwrap();
                let paths = enumerate_paths_probability(&pfa, s, budget).unwrap();
                wp = wp.max((engine - paths).abs());
                let marginal = forward_dp_marginals(&pfa, s).unwrap();
                wm = wm.max(pfa.state_trace(s).unwrap().last().max_abs_diff(marginal.as_slice()));
                checked += 1;
            }
        }
        (wp, wm, checked)
    });
    verdict(
        "oracle_exactness",
        worst_prob < ORACLE_TOL && worst_marginal < ORACLE_TOL && elapsed < ORACLE_BUDGET,
        format!(
            "{ORACLE_INSTANCES} automata, {checked} strings, max |Δp| {worst_prob:.2e}, \
             max |Δmarginal| {worst_marginal:.2e} in {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn exact_rows(kind: ExperimentKind, name: &'static str) -> Vec<Verdict> {
    [(ConfigId::One, EXACT_CONFIG1_BUDGET), (ConfigId::Two, EXACT_CONFIG2_BUDGET)]
        .into_iter()
        .map(|(config, budget)| {
            let (report, elapsed) = run(kind, config, false);
            verdict(name, exact(&report) && elapsed < budget, summary(&report, elapsed))
        })
        .collect()
}

fn epsilon_closure() -> Vec<Verdict> {
    let mut out = Vec::new();
    let mut fractions = Vec::new();
    for config in [ConfigId::One, ConfigId::Two] {
        let (report, elapsed) = run(ExperimentKind::EpsilonClosure, config, false);
        out.push(verdict(
            "epsilon_closure_matches_reference",
            exact(&report) && elapsed < CLOSURE_BUDGET,
            format!(
                "{} — {}/{} convergent instances compared",
                summary(&report, elapsed),
                report.accuracies.len(),
                report.seeds.len()
            ),
        ));
        fractions.push((report.config.clone(), report.excluded_fraction));
    }
    let all_zero = fractions.iter().all(|(_, f)| *f == 0.0);
    let detail = fractions
        .iter()
        .map(|(c, f)| format!("config {c}: {f:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    out.push(verdict(
        "epsilon_closure_all_converge",
        all_zero,
        format!("non-convergent fraction {detail} (expected 0)"),
    ));
    out
}

fn extraction_round_trip() -> Verdict {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, head) in [HeadMode::RawClipped, HeadMode::AffineSigmoid].into_iter().enumerate() {
        let mut rng = seeded_rng(100 + i as u64);
        let cfg = GenConfig {
            num_strings: ROUND_TRIP_STRINGS,
            ..GenConfig::config1(100 + i as u64)
        };
        let model = LearnableModel::random(
            cfg.alphabet(),
            AcceptIndicator::from_states(cfg.n, &[1, 4]).unwrap(),
            ModelOptions {
                head,
                init_std: 1.0,
                ..ModelOptions::default()
            },
            &mut rng,
        )
        .unwrap();
        let pfa = extract_pfa(&model).unwrap();
        for s in random_strings(&cfg, &mut rng).unwrap() {
            let (_, tape) = forward(&model, &s).unwrap();
            worst = worst.max((pfa.accept_probability(&s).unwrap() - tape.raw()).abs());
            checked += 1;
        }
    }
    verdict(
        "extracted_automaton_round_trip",
        worst < ROUND_TRIP_TOL,
        format!("{checked} strings over both heads, max |Δ| {worst:.2e}"),
    )
}

fn learnability(
    name: &'static str,
    config: ConfigId,
    scaled: bool,
    target: f64,
    budget: Duration,
) -> (Verdict, ExperimentReport) {
    let (report, elapsed) = run(ExperimentKind::Learnability, config, scaled);
    let per_seed = report
        .accuracies
        .iter()
        .map(|a| format!("{a:.2}"))
        .collect::<Vec<_>>()
        .join(" ");
    let v = verdict(
        name,
        report.failures == 0 && report.mean >= target && elapsed < budget,
        format!(
            "{}, per seed [{per_seed}], target ≥ {target} within {}s",
            summary(&report, elapsed),
            budget.as_secs()
        ),
    );
    (v, report)
}

fn loss_curves(report: &ExperimentReport) -> Verdict {
    let curves: Vec<_> = report
        .seeds
        .iter()
        .map(|s| (s.seed, s.learning.clone()))
        .collect();
    let pass = report.failures == 0
        && curves.iter().all(|(_, c)| c.as_ref().is_some_and(|c| c.decreased()));
    let detail = curves
        .iter()
        .map(|(seed, c)| match c {
            Some(c) => format!(
                "seed {seed}: train {:.3}→{:.3} test {:.3}→{:.3}",
                c.first_epoch_train, c.last_epoch_train, c.initial_test, c.final_test
            ),
            None => format!("seed {seed}: no curve"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    verdict("loss_curves_decrease", pass, detail)
}

fn gradient_fidelity() -> Verdict {
    let (cases, elapsed) = timed(|| gradcheck_suite(GRADCHECK_CASES, GRADCHECK_SEED).unwrap());
    let worst = cases.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    let with_eps = cases.iter().filter(|c| c.epsilon).count();
    let affine = cases.iter().filter(|c| c.head == HeadMode::AffineSigmoid).count();
    verdict(
        "gradient_fidelity",
        cases.len() >= 20
            && with_eps > 0
            && affine > 0
            && cases.iter().all(|c| c.passed())
            && elapsed < GRADCHECK_BUDGET,
        format!(
            "{} configurations ({with_eps} with ε, {affine} affine), max rel error {worst:.2e} \
             < {MAX_REL_ERROR:e} in {:.2}s",
            cases.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn parameter_count() -> Verdict {
    let mut rng = seeded_rng(7);
    let mut shapes = Vec::new();
    let mut pass = true;
    for _ in 0..PARAM_SHAPES {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=6);
        let epsilon = rng.random_bool(0.5);
        let head = if rng.random_bool(0.5) {
            HeadMode::AffineSigmoid
        } else {
            HeadMode::RawClipped
        };
        let alphabet: Vec<char> = ('a'..).take(k).collect();
        let model = LearnableModel::random(
            alphabet,
            AcceptIndicator::from_states(n, &[n - 1]).unwrap(),
            ModelOptions {
                head,
                epsilon,
                ..ModelOptions::default()
            },
            &mut rng,
        )
        .unwrap();
        let expected = (k + usize::from(epsilon)) * n * n
            + if head == HeadMode::AffineSigmoid { 2 } else { 0 };
        pass &= model.parameter_count() == expected && model.params().len() == expected;
        shapes.push(format!("({n},{k},{}){}", u8::from(epsilon), model.parameter_count()));
    }
    verdict("parameter_count", pass, format!("(n,k,ε)count: {}", shapes.join(" ")))
}

fn determinism(first_learning: &ExperimentReport) -> Verdict {
    let mut checked = Vec::new();
    let mut pass = true;
    for (kind, config) in [
        (ExperimentKind::StateValidity, ConfigId::One),
        (ExperimentKind::EpsilonClosure, ConfigId::One),
        (ExperimentKind::Equivalence, ConfigId::Two),
    ] {
        let (a, _) = run(kind, config, false);
        let (b, _) = run(kind, config, false);
        pass &= canonical(&a) == canonical(&b);
        checked.push(format!("{kind} {}", a.config));
    }
    let (again, _) = run(ExperimentKind::Learnability, ConfigId::One, false);
    pass &= canonical(first_learning) == canonical(&again);
    checked.push(format!("{} {}", again.experiment, again.config));
    verdict(
        "determinism",
        pass,
        format!("byte-identical reruns: {}", checked.join(", ")),
    )
}

fn main() -> ExitCode {
    let mut verdicts = vec![oracle_exactness()];
    verdicts.extend(exact_rows(ExperimentKind::StateValidity, "state_validity"));
    verdicts.extend(exact_rows(ExperimentKind::SubsetConstruction, "subset_construction"));
    verdicts.extend(epsilon_closure());
    verdicts.extend(exact_rows(ExperimentKind::Simulation, "simulation_matches_oracle"));
    verdicts.extend(exact_rows(ExperimentKind::Equivalence, "equivalence_matches_oracle"));
    verdicts.push(extraction_round_trip());
    verdicts.push(gradient_fidelity());
    verdicts.push(parameter_count());
    let (v, learn1) = learnability(
        "learnability_config1",
        ConfigId::One,
        false,
        LEARN_CONFIG1_TARGET,
        LEARN_CONFIG1_BUDGET,
    );
    verdicts.push(v);
    verdicts.push(loss_curves(&learn1));
    verdicts.push(determinism(&learn1));
    verdicts.push(
        learnability(
            "learnability_config2_scaled_proxy",
            ConfigId::Two,
            true,
            LEARN_PROXY_TARGET,
            LEARN_PROXY_BUDGET,
        )
        .0,
    );
    verdicts.push(
        learnability(
            "learnability_config2",
            ConfigId::Two,
            false,
            LEARN_CONFIG2_TARGET,
            LEARN_CONFIG2_BUDGET,
        )
        .0,
    );

    let failed: Vec<&Verdict> = verdicts.iter().filter(|v| !v.pass).collect();
    let mut err = std::io::stderr().lock();
    let _ = writeln!(
        err,
        "acceptance: {} passed, {} failed",
        verdicts.len() - failed.len(),
        failed.len()
    );
    for v in &failed {
        let _ = writeln!(err, "  failed {}: {}", v.name, v.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
