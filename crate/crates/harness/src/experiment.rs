use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use pfa_core::engine::{ClosureMode, FixedPointParams, Pfa, PfaParts};
use pfa_core::generator::{
    balanced_instance, label_dataset, random_epsilon_matrix, random_pfa, random_strings,
    with_self_rest, GenConfig, LabeledDataset, DEFAULT_MAX_RETRIES, DEFAULT_MIN_MINORITY,
};
use pfa_core::learner::{
    evaluate_accuracy, train, HeadMode, LearnableModel, LossLog, ModelOptions, Split, TrainConfig,
};
use pfa_core::oracle::{forward_dp_trace, power_iteration_reference};
use pfa_core::stochastic::{is_simplex_point, row_times, seeded_rng, ProbVector, StochasticMatrix};
use pfa_core::{closure_apply, PfaError};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::stats::{student_t_ci, Summary};
use crate::HarnessError;

/// Per-entry tolerance for trace and marginal comparisons.
pub const MATCH_TOL: f64 = 1e-9;
/// ε-injection rate for experiments with ε-transitions.
pub const EPSILON_RATE: f64 = 0.3;
pub const EPSILON_CLOSURE_SEEDS: u64 = 500;
pub const REFERENCE_STEPS: usize = 10_000;
pub const REFERENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExperimentKind {
    StateValidity,
    SubsetConstruction,
    EpsilonClosure,
    Simulation,
    Equivalence,
    Learnability,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::StateValidity,
        ExperimentKind::SubsetConstruction,
        ExperimentKind::EpsilonClosure,
        ExperimentKind::Simulation,
        ExperimentKind::Equivalence,
        ExperimentKind::Learnability,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::StateValidity => "STATE_VALIDITY",
            ExperimentKind::SubsetConstruction => "SUBSET_CONSTRUCTION",
            ExperimentKind::EpsilonClosure => "EPSILON_CLOSURE",
            ExperimentKind::Simulation => "SIMULATION",
            ExperimentKind::Equivalence => "EQUIVALENCE",
            ExperimentKind::Learnability => "LEARNABILITY",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.to_ascii_uppercase().replace('-', "_");
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| HarnessError::Usage(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigId {
    One,
    Two,
}

impl ConfigId {
    pub fn label(self) -> &'static str {
        match self {
            ConfigId::One => "1",
            ConfigId::Two => "2",
        }
    }
}

impl FromStr for ConfigId {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1" => Ok(ConfigId::One),
            "2" => Ok(ConfigId::Two),
            other => Err(HarnessError::Usage(format!("config must be 1 or 2, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub config: ConfigId,
    /// Shrinks config 2 to its reduced proxy.
    pub scaled: bool,
    pub seeds: Vec<u64>,
    pub test_strings_per_seed: usize,
    pub tau: f64,
    pub head: HeadMode,
}

impl ExperimentSpec {
    pub fn new(experiment: ExperimentKind, config: ConfigId) -> Self {
        let seeds = match experiment {
            ExperimentKind::EpsilonClosure => (0..EPSILON_CLOSURE_SEEDS).collect(),
            _ => (0..5).collect(),
        };
        Self {
            experiment,
            config,
            scaled: false,
            seeds,
            test_strings_per_seed: 100,
            tau: 0.5,
            head: HeadMode::RawClipped,
        }
    }

    pub fn config_label(&self) -> String {
        match (self.config, self.scaled) {
            (ConfigId::Two, true) => "2-scaled".into(),
            (c, _) => c.label().into(),
        }
    }

    pub fn gen_config(&self, seed: u64) -> GenConfig {
        let mut cfg = match (self.config, self.scaled) {
            (ConfigId::One, _) => GenConfig::config1(seed),
            (ConfigId::Two, false) => GenConfig::config2(seed),
            (ConfigId::Two, true) => GenConfig::config2_scaled(seed),
        };
        cfg.tau = self.tau;
        cfg
    }

    fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(HarnessError::Usage("seed list must not be empty".into()));
        }
        if self.test_strings_per_seed == 0 {
            return Err(HarnessError::Usage("test_strings_per_seed must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(HarnessError::Usage(format!("tau {} outside (0, 1)", self.tau)));
        }
        Ok(())
    }
}

/// Result of one seed. `accuracy` is `None` when the seed was excluded or failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// The instance was left out of the statistics (FIXED_POINT non-convergence).
    #[serde(default)]
    pub excluded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearningCurve>,
}

/// Loss summary of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub first_epoch_train: f64,
    pub last_epoch_train: f64,
    pub initial_test: f64,
    pub final_test: f64,
    pub balance_warning: bool,
}

impl LearningCurve {
    pub fn decreased(&self) -> bool {
        self.last_epoch_train < self.first_epoch_train && self.final_test < self.initial_test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub config: String,
    pub seeds: Vec<SeedOutcome>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub excluded_fraction: f64,
    pub failures: usize,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn summary(&self) -> Summary {
        Summary {
            mean: self.mean,
            std: self.std,
            ci_low: self.ci_low,
            ci_high: self.ci_high,
        }
    }
}

struct SeedResult {
    accuracy: f64,
    excluded: bool,
    learning: Option<LearningCurve>,
}

impl SeedResult {
    fn plain(accuracy: f64) -> Self {
        Self {
            accuracy,
            excluded: false,
            learning: None,
        }
    }
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport, HarnessError> {
    spec.validate()?;
    let start = Instant::now();
    let mut outcomes = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let result = match spec.experiment {
            ExperimentKind::StateValidity => state_validity(spec, seed),
            ExperimentKind::SubsetConstruction => subset_construction(spec, seed),
            ExperimentKind::EpsilonClosure => epsilon_closure(spec, seed),
            ExperimentKind::Simulation => simulation(spec, seed),
            ExperimentKind::Equivalence => equivalence(spec, seed),
            ExperimentKind::Learnability => learnability(spec, seed).map(|(r, _)| r),
        };
        outcomes.push(match result {
            Ok(r) => SeedOutcome {
                seed,
                accuracy: (!r.excluded).then_some(r.accuracy),
                error: None,
                excluded: r.excluded,
                learning: r.learning,
            },
            Err(e) => SeedOutcome {
                seed,
                accuracy: None,
                error: Some(e.to_string()),
                excluded: false,
                learning: None,
            },
        });
    }
    let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
    // A failed seed counts as accuracy 0 so it cannot hide.
    let accuracies: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.excluded)
        .map(|o| o.accuracy.unwrap_or(0.0))
        .collect();
    let excluded = outcomes.iter().filter(|o| o.excluded).count();
    let summary = match accuracies.len() {
        0 => Summary {
            mean: f64::NAN,
            std: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
        },
        1 => Summary {
            mean: accuracies[0],
            std: 0.0,
            ci_low: accuracies[0],
            ci_high: accuracies[0],
        },
        _ => student_t_ci(&accuracies, 0.95)?,
    };
    Ok(ExperimentReport {
        experiment: spec.experiment,
        config: spec.config_label(),
        seeds: outcomes,
        accuracies,
        mean: summary.mean,
        std: summary.std,
        ci_low: summary.ci_low,
        ci_high: summary.ci_high,
        excluded_fraction: excluded as f64 / spec.seeds.len() as f64,
        failures,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Fresh automaton plus `test_strings_per_seed` strings for one seed.
fn instance(spec: &ExperimentSpec, seed: u64, epsilon: f64) -> Result<(Pfa, Vec<String>), PfaError> {
    let mut cfg = spec.gen_config(seed).with_epsilon(epsilon);
    cfg.num_strings = spec.test_strings_per_seed;
    let mut rng = seeded_rng(seed);
    let pfa = random_pfa(&cfg, &mut rng)?;
    let strings = random_strings(&cfg, &mut rng)?;
    Ok((pfa, strings))
}

fn max_entry_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn fraction(passed: usize, total: usize) -> f64 {
    passed as f64 / total as f64
}

fn state_validity(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult, PfaError> {
    let (pfa, strings) = instance(spec, seed, 0.0)?;
    let mut passed = 0;
    for s in &strings {
        let trace = pfa.state_trace(s)?;
        let simplex = trace.states.iter().all(|v| is_simplex_point(v.as_slice()));
        let marginal = forward_dp_trace(&pfa, s)?.pop().expect("non-empty trace");
        let matches = max_entry_diff(trace.last().as_slice(), &marginal) < MATCH_TOL;
        if simplex && matches {
            passed += 1;
        }
    }
    Ok(SeedResult::plain(fraction(passed, strings.len())))
}

fn subset_construction(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult, PfaError> {
    let (pfa, strings) = instance(spec, seed, 0.0)?;
    let mut passed = 0;
    for s in &strings {
        let trace = pfa.state_trace(s)?;
        let reference = forward_dp_trace(&pfa, s)?;
        let every_step = trace.states.len() == reference.len()
            && trace
                .states
                .iter()
                .zip(&reference)
                .all(|(v, r)| max_entry_diff(v.as_slice(), r) < MATCH_TOL);
        if every_step {
            passed += 1;
        }
    }
    Ok(SeedResult::plain(fraction(passed, strings.len())))
}

/// Stochastic ε-only chain and a uniform start state; FIXED_POINT versus long power iteration.
fn epsilon_closure(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult, PfaError> {
    let n = spec.gen_config(seed).n;
    let mut rng = seeded_rng(seed);
    let e = with_self_rest(&random_epsilon_matrix(n, EPSILON_RATE, &mut rng));
    let q0 = rng.random_range(0..n);
    let start = ProbVector::one_hot(n, q0)?;
    let params = FixedPointParams::default_for(n);
    let outcome = closure_apply(&start, &e, ClosureMode::FixedPoint, params.max_iters, params.tol)?;
    let (reference, ref_converged) =
        power_iteration_reference(start.as_slice(), &e, REFERENCE_STEPS, REFERENCE_TOL);
    if !outcome.converged || !ref_converged {
        return Ok(SeedResult {
            accuracy: 0.0,
            excluded: true,
            learning: None,
        });
    }
    let ok = max_entry_diff(outcome.vector.as_slice(), &reference) < MATCH_TOL;
    Ok(SeedResult::plain(if ok { 1.0 } else { 0.0 }))
}

fn oracle_decision(pfa: &Pfa, s: &str, tau: f64) -> Result<bool, PfaError> {
    let marginal = forward_dp_trace(pfa, s)?.pop().expect("non-empty trace");
    Ok(pfa.accepting().weights().iter().zip(&marginal).map(|(f, m)| f * m).sum::<f64>() > tau)
}

fn simulation(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult, PfaError> {
    let (pfa, strings) = instance(spec, seed, EPSILON_RATE)?;
    let mut passed = 0;
    for s in &strings {
        if pfa.recognize(s, spec.tau)? == oracle_decision(&pfa, s, spec.tau)? {
            passed += 1;
        }
    }
    Ok(SeedResult::plain(fraction(passed, strings.len())))
}

/// Feedforward network with the closure folded into each symbol operator.
struct FoldedNetwork {
    operators: Vec<StochasticMatrix>,
    start: Vec<f64>,
    accept: Vec<f64>,
}

impl FoldedNetwork {
    fn from_pfa(pfa: &Pfa) -> Result<Self, PfaError> {
        let closure = pfa.closure_matrix().cloned();
        let operators = pfa
            .transitions()
            .iter()
            .map(|t| match &closure {
                Some(c) => StochasticMatrix::row_stochastic(&t.as_matrix().matmul(c)?.to_rows()),
                None => Ok(t.clone()),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let start = match &closure {
            Some(c) => row_times(pfa.initial().as_slice(), c),
            None => pfa.initial().as_slice().to_vec(),
        };
        Ok(Self {
            operators,
            start,
            accept: pfa.accepting().weights(),
        })
    }

    fn output(&self, symbols: &[usize]) -> f64 {
        let s = symbols
            .iter()
            .fold(self.start.clone(), |s, &x| row_times(&s, self.operators[x].as_matrix()));
        s.iter().zip(&self.accept).map(|(a, b)| a * b).sum()
    }

    /// The ε-free automaton this network computes.
    fn to_pfa(&self, like: &Pfa) -> Result<Pfa, PfaError> {
        Pfa::new(PfaParts {
            alphabet: like.alphabet().to_vec(),
            transitions: self.operators.clone(),
            epsilon: None,
            initial: ProbVector::new(self.start.clone())?,
            accepting: like.accepting().clone(),
            closure_mode: ClosureMode::None,
            fixed_point: None,
        })
    }
}

fn equivalence(spec: &ExperimentSpec, seed: u64) -> Result<SeedResult, PfaError> {
    let (pfa, strings) = instance(spec, seed, EPSILON_RATE)?;
    let network = FoldedNetwork::from_pfa(&pfa)?;
    let rebuilt = network.to_pfa(&pfa)?;
    let mut passed = 0;
    for s in &strings {
        let truth = oracle_decision(&pfa, s, spec.tau)?;
        let forward = network.output(&pfa.encode(s)?) > spec.tau;
        let reverse = rebuilt.recognize(s, spec.tau)?;
        if forward == truth && reverse == truth {
            passed += 1;
        }
    }
    Ok(SeedResult::plain(fraction(passed, strings.len())))
}

/// Everything one learnability run produces.
pub struct LearningRun {
    pub pfa: Pfa,
    pub model: LearnableModel,
    pub train_set: LabeledDataset,
    pub test_set: LabeledDataset,
    pub log: LossLog,
    pub accuracy: f64,
    pub balance_warning: bool,
}

pub fn learning_run(spec: &ExperimentSpec, seed: u64) -> Result<LearningRun, PfaError> {
    let cfg = spec.gen_config(seed).with_epsilon(EPSILON_RATE);
    let mut rng = seeded_rng(seed);
    let instance = balanced_instance(&cfg, &mut rng, DEFAULT_MIN_MINORITY, DEFAULT_MAX_RETRIES)?;
    let mut test_cfg = cfg.clone();
    test_cfg.num_strings = spec.test_strings_per_seed;
    let test_strings = random_strings(&test_cfg, &mut rng)?;
    let test_set = label_dataset(&instance.pfa, &test_strings, spec.tau)?;
    let model = LearnableModel::random(
        cfg.alphabet(),
        instance.pfa.accepting().clone(),
        ModelOptions {
            head: spec.head,
            ..ModelOptions::default()
        },
        &mut rng,
    )?;
    let train_cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (model, log) = train(&model, &instance.dataset, &test_set, &train_cfg)?;
    let accuracy = evaluate_accuracy(&model, &test_set, spec.tau)?;
    Ok(LearningRun {
        pfa: instance.pfa,
        model,
        train_set: instance.dataset,
        test_set,
        log,
        accuracy,
        balance_warning: instance.warning,
    })
}

fn learnability(spec: &ExperimentSpec, seed: u64) -> Result<(SeedResult, LearningRun), PfaError> {
    let run = learning_run(spec, seed)?;
    let last = run.log.last_epoch().unwrap_or(0);
    let curve = LearningCurve {
        first_epoch_train: run.log.epoch_mean(0, Split::Train).unwrap_or(f64::NAN),
        last_epoch_train: run.log.epoch_mean(last, Split::Train).unwrap_or(f64::NAN),
        initial_test: run.log.first(Split::Test).unwrap_or(f64::NAN),
        final_test: run.log.last(Split::Test).unwrap_or(f64::NAN),
        balance_warning: run.balance_warning,
    };
    Ok((
        SeedResult {
            accuracy: run.accuracy,
            excluded: false,
            learning: Some(curve),
        },
        run,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse_from_names() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert_eq!("state-validity".parse::<ExperimentKind>().unwrap(), ExperimentKind::StateValidity);
        assert!("nope".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn empty_seed_list_is_rejected() {
        let mut spec = ExperimentSpec::new(ExperimentKind::StateValidity, ConfigId::One);
        spec.seeds.clear();
        assert!(run_experiment(&spec).is_err());
    }

    #[test]
    fn epsilon_closure_defaults_to_500_seeds() {
        let spec = ExperimentSpec::new(ExperimentKind::EpsilonClosure, ConfigId::One);
        assert_eq!(spec.seeds, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn folded_network_matches_engine_probability() {
        let spec = ExperimentSpec::new(ExperimentKind::Equivalence, ConfigId::One);
        let (pfa, strings) = instance(&spec, 3, 0.9).unwrap();
        let net = FoldedNetwork::from_pfa(&pfa).unwrap();
        for s in &strings {
            let a = net.output(&pfa.encode(s).unwrap());
            assert!((a - pfa.accept_probability(s).unwrap()).abs() < 1e-12);
        }
    }
}
