use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pfa_core::engine::{ClosureMode, Pfa};
use pfa_core::generator::{
    balanced_instance, label_dataset, random_pfa, random_strings, LabeledDataset,
    DEFAULT_MAX_RETRIES, DEFAULT_MIN_MINORITY,
};
use pfa_core::learner::{
    evaluate_accuracy, train, HeadMode, LabelMode, LearnableModel, ModelOptions, TrainConfig,
};
use pfa_core::stochastic::{seeded_rng, ProbVector};
use pfa_core::{closure_apply, PfaError};
use pfa_harness::experiment::{run_experiment, ConfigId, ExperimentKind, ExperimentSpec};
use pfa_harness::gradcheck::{gradcheck_suite, MAX_REL_ERROR};
use pfa_harness::report::{emit_report, ReportFormat};
use pfa_harness::HarnessError;

#[derive(Parser)]
#[command(name = "pfa", version, about = "Simulate and learn probabilistic finite automata")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct InstanceArgs {
    /// Benchmark configuration (1 or 2).
    #[arg(long, default_value = "1", value_parser = parse_config)]
    config: ConfigId,
    /// Use the reduced variant of configuration 2.
    #[arg(long)]
    scale: bool,
    /// Acceptance threshold.
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random automaton and a labeled dataset.
    Generate {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-state ε-edge probability.
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Override the number of strings.
        #[arg(long)]
        strings: Option<usize>,
        /// Redraw until both classes are represented.
        #[arg(long)]
        balanced: bool,
        /// Output directory (receives pfa.json and dataset.tsv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Acceptance probability and decision for one string.
    Simulate {
        pfa: PathBuf,
        string: String,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, value_parser = parse_mode)]
        closure_mode: Option<ClosureMode>,
    },
    /// Belief state after every prefix.
    Trace {
        pfa: PathBuf,
        string: String,
        #[arg(long, value_parser = parse_mode)]
        closure_mode: Option<ClosureMode>,
    },
    /// One-shot ε-closure of a distribution.
    Closure {
        pfa: PathBuf,
        /// Comma-separated distribution over states.
        #[arg(long)]
        dist: String,
        #[arg(long, value_parser = parse_mode)]
        closure_mode: Option<ClosureMode>,
    },
    /// Fit a model to a dataset.
    Train {
        dataset: PathBuf,
        /// Automaton supplying the accepting set.
        #[arg(long)]
        pfa: PathBuf,
        /// Held-out dataset for test loss and accuracy.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "RAW_CLIPPED", value_parser = parse_head)]
        head: HeadMode,
        #[arg(long, default_value = "BINARY", value_parser = parse_label_mode)]
        label_mode: LabelMode,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Output directory (receives model.json and loss.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Run validation experiments and print a report.
    Experiment {
        /// Experiment name, or `all`.
        #[arg(long, default_value = "all")]
        experiment: String,
        #[command(flatten)]
        instance: InstanceArgs,
        /// Seeds as `0..5` (half-open) or `0,3,7`; defaults per experiment.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<SeedList>,
        #[arg(long, default_value_t = 100)]
        strings: usize,
        #[arg(long, default_value = "RAW_CLIPPED", value_parser = parse_head)]
        head: HeadMode,
        #[arg(long, default_value = "table")]
        format: String,
        /// Fail unless every mean accuracy reaches this value.
        #[arg(long)]
        expect: Option<f64>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_config(s: &str) -> Result<ConfigId, String> {
    s.parse().map_err(|e: HarnessError| e.to_string())
}

fn parse_mode(s: &str) -> Result<ClosureMode, String> {
    s.parse().map_err(|e: PfaError| e.to_string())
}

fn parse_head(s: &str) -> Result<HeadMode, String> {
    s.parse().map_err(|e: PfaError| e.to_string())
}

fn parse_label_mode(s: &str) -> Result<LabelMode, String> {
    s.parse().map_err(|e: PfaError| e.to_string())
}

/// Parsed `--seeds` value; a newtype so clap treats it as one argument.
#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("seed range start: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("seed range end: {e}"))?;
        (a..b).collect()
    } else {
        s.split(',')
            .map(|x| x.trim().parse::<u64>().map_err(|e| format!("seed '{x}': {e}")))
            .collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("seed list is empty".into());
    }
    Ok(SeedList(seeds))
}

/// Outcome of a command that ran to completion.
enum Verdict {
    Pass,
    Fail,
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path)
        .map_err(|e| HarnessError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn load_pfa(path: &Path, mode: Option<ClosureMode>) -> Result<Pfa, HarnessError> {
    let pfa = Pfa::from_json(&read(path)?)?;
    match mode {
        None => Ok(pfa),
        Some(mode) => {
            let mut doc = pfa.to_document();
            doc.closure_mode = mode;
            Ok(doc.into_pfa()?)
        }
    }
}

fn load_dataset(path: &Path) -> Result<LabeledDataset, HarnessError> {
    Ok(LabeledDataset::from_tsv(&read(path)?)?)
}

fn format_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.12}")).collect();
    format!("[{}]", parts.join(", "))
}

fn run(cli: Cli) -> Result<Verdict, HarnessError> {
    match cli.command {
        Command::Generate {
            instance,
            seed,
            epsilon,
            strings,
            balanced,
            out,
        } => {
            let spec = ExperimentSpec {
                scaled: instance.scale,
                tau: instance.tau,
                ..ExperimentSpec::new(ExperimentKind::Simulation, instance.config)
            };
            let mut cfg = spec.gen_config(seed).with_epsilon(epsilon);
            if let Some(count) = strings {
                cfg.num_strings = count;
            }
            cfg.validate()?;
            let mut rng = seeded_rng(seed);
            let (pfa, dataset) = if balanced {
                let inst =
                    balanced_instance(&cfg, &mut rng, DEFAULT_MIN_MINORITY, DEFAULT_MAX_RETRIES)?;
                if inst.warning {
                    eprintln!("warning: no draw reached the minority-class target");
                }
                (inst.pfa, inst.dataset)
            } else {
                let pfa = random_pfa(&cfg, &mut rng)?;
                let strings = random_strings(&cfg, &mut rng)?;
                let mut dataset = label_dataset(&pfa, &strings, cfg.tau)?;
                dataset.config = Some(cfg.clone());
                (pfa, dataset)
            };
            fs::create_dir_all(&out)?;
            fs::write(out.join("pfa.json"), pfa.to_json()?)?;
            fs::write(out.join("dataset.tsv"), dataset.to_tsv()?)?;
            println!(
                "wrote {} strings ({:.3} positive) to {}",
                dataset.len(),
                dataset.positive_fraction(),
                out.display()
            );
            Ok(Verdict::Pass)
        }
        Command::Simulate {
            pfa,
            string,
            tau,
            closure_mode,
        } => {
            let pfa = load_pfa(&pfa, closure_mode)?;
            let p = pfa.accept_probability(&string)?;
            let accepted = pfa.recognize(&string, tau)?;
            println!("probability {p}");
            println!("{}", if accepted { "accept" } else { "reject" });
            Ok(Verdict::Pass)
        }
        Command::Trace {
            pfa,
            string,
            closure_mode,
        } => {
            let pfa = load_pfa(&pfa, closure_mode)?;
            let trace = pfa.state_trace(&string)?;
            let prefixes = std::iter::once(String::new()).chain(
                string
                    .char_indices()
                    .map(|(i, c)| string[..i + c.len_utf8()].to_string()),
            );
            for (prefix, s) in prefixes.zip(&trace.states) {
                println!("{:<12} {}", format!("'{prefix}'"), format_vec(s.as_slice()));
            }
            if !trace.converged {
                eprintln!("warning: fixed-point closure did not converge at some step");
            }
            Ok(Verdict::Pass)
        }
        Command::Closure {
            pfa,
            dist,
            closure_mode,
        } => {
            let pfa = load_pfa(&pfa, closure_mode)?;
            let entries = dist
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| HarnessError::Usage(format!("distribution entry '{x}': {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let p = ProbVector::new(entries)?;
            let e = pfa
                .epsilon()
                .ok_or_else(|| HarnessError::Usage("automaton has no ε-matrix".into()))?;
            let fp = pfa.fixed_point_params();
            let outcome = closure_apply(&p, e, pfa.closure_mode(), fp.max_iters, fp.tol)?;
            println!("{}", format_vec(outcome.vector.as_slice()));
            println!(
                "iterations {} converged {} renormalized {}",
                outcome.iterations, outcome.converged, outcome.renormalized
            );
            Ok(Verdict::Pass)
        }
        Command::Train {
            dataset,
            pfa,
            test,
            head,
            label_mode,
            epochs,
            lr,
            batch_size,
            seed,
            tau,
            out,
        } => {
            let train_set = load_dataset(&dataset)?;
            let test_set = match &test {
                Some(p) => load_dataset(p)?,
                None => LabeledDataset {
                    items: Vec::new(),
                    ..train_set.clone()
                },
            };
            let truth = load_pfa(&pfa, None)?;
            let model = LearnableModel::random(
                truth.alphabet().to_vec(),
                truth.accepting().clone(),
                ModelOptions {
                    head,
                    ..ModelOptions::default()
                },
                &mut seeded_rng(seed),
            )?;
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size,
                seed,
                label_mode,
                ..TrainConfig::default()
            };
            let (model, log) = train(&model, &train_set, &test_set, &cfg)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("model.json"), model.to_json()?)?;
            fs::write(out.join("loss.csv"), log.to_csv())?;
            println!("train accuracy {:.4}", evaluate_accuracy(&model, &train_set, tau)?);
            if !test_set.is_empty() {
                println!("test accuracy {:.4}", evaluate_accuracy(&model, &test_set, tau)?);
            }
            Ok(Verdict::Pass)
        }
        Command::Experiment {
            experiment,
            instance,
            seeds,
            strings,
            head,
            format,
            expect,
            out,
        } => {
            let format = match format.as_str() {
                "table" => ReportFormat::Table,
                "csv" => ReportFormat::Csv,
                other => return Err(HarnessError::Usage(format!("unknown format '{other}'"))),
            };
            let kinds: Vec<ExperimentKind> = if experiment.eq_ignore_ascii_case("all") {
                ExperimentKind::ALL.to_vec()
            } else {
                vec![experiment.parse()?]
            };
            let mut reports = Vec::new();
            for kind in kinds {
                let mut spec = ExperimentSpec::new(kind, instance.config);
                spec.scaled = instance.scale;
                spec.tau = instance.tau;
                spec.head = head;
                spec.test_strings_per_seed = strings;
                if let Some(s) = &seeds {
                    spec.seeds = s.0.clone();
                }
                reports.push(run_experiment(&spec)?);
            }
            let text = emit_report(&reports, format);
            print!("{text}");
            if let Some(path) = out {
                fs::write(path, &text)?;
            }
            let failed = reports.iter().any(|r| {
                r.failures > 0 || expect.is_some_and(|m| r.mean.is_nan() || r.mean < m)
            });
            Ok(if failed { Verdict::Fail } else { Verdict::Pass })
        }
        Command::Gradcheck { cases, seed } => {
            let results = gradcheck_suite(cases, seed)?;
            for c in &results {
                println!(
                    "case {:>2} n={} k={} eps={} head={:?} len={} params={} rel_err={:.3e} {}",
                    c.index,
                    c.n,
                    c.symbols,
                    c.epsilon,
                    c.head,
                    c.string.len(),
                    c.parameters,
                    c.rel_error,
                    if c.passed() { "ok" } else { "FAIL" }
                );
            }
            let worst = results.iter().map(|c| c.rel_error).fold(0.0, f64::max);
            println!("max relative error {worst:.3e} (limit {MAX_REL_ERROR:e})");
            Ok(if results.iter().all(|c| c.passed()) {
                Verdict::Pass
            } else {
                Verdict::Fail
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            let usage = matches!(
                e,
                HarnessError::Usage(_)
                    | HarnessError::Json(_)
                    | HarnessError::Core(PfaError::Json(_) | PfaError::Format(_))
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_lists_parse() {
        assert_eq!(parse_seeds("0..5").unwrap().0, vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("0, 3,7").unwrap().0, vec![0, 3, 7]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
