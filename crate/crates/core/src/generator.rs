//! Reproducible random automata, string samples and labeled datasets.
//!
//! Random draws happen in a fixed order so that a seed pins the instance:
//! symbol matrices (alphabet order, then row order), the accepting set, then
//! the ε-edges state by state.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{check_threshold, ClosureMode, Pfa, PfaParts};
use crate::error::{PfaError, Result};
use crate::stochastic::{
    sample_dirichlet_row, AcceptIndicator, Matrix, ProbVector, StochasticKind, StochasticMatrix,
};

/// ε-edges drawn by [`random_pfa`] carry a weight uniform on this range.
pub const EPSILON_WEIGHT_RANGE: (f64, f64) = (0.2, 0.8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    pub alphabet_size: usize,
    pub num_strings: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub epsilon_prob: f64,
    pub dirichlet_alpha: f64,
    pub tau: f64,
    pub seed: u64,
}

impl GenConfig {
    pub const DEFAULT_ALPHA: f64 = 1.0;

    /// Six states over `{a, b}`, 1000 strings of length 2–10.
    pub fn config1(seed: u64) -> Self {
        Self {
            n: 6,
            alphabet_size: 2,
            num_strings: 1000,
            len_min: 2,
            len_max: 10,
            epsilon_prob: 0.0,
            dirichlet_alpha: Self::DEFAULT_ALPHA,
            tau: 0.5,
            seed,
        }
    }

    /// Fifty states over `{a … z}`, 10000 strings of length 2–100.
    pub fn config2(seed: u64) -> Self {
        Self {
            n: 50,
            alphabet_size: 26,
            num_strings: 10_000,
            len_min: 2,
            len_max: 100,
            ..Self::config1(seed)
        }
    }

    /// Reduced stand-in for config 2: 20 states, 10 symbols, 3000 strings up to length 40.
    pub fn config2_scaled(seed: u64) -> Self {
        Self {
            n: 20,
            alphabet_size: 10,
            num_strings: 3000,
            len_min: 2,
            len_max: 40,
            ..Self::config1(seed)
        }
    }

    pub fn with_epsilon(mut self, prob: f64) -> Self {
        self.epsilon_prob = prob;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(PfaError::InvalidArgument(msg));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if self.alphabet_size == 0 || self.alphabet_size > 26 {
            return bad(format!(
                "alphabet size must be in 1..=26, got {}",
                self.alphabet_size
            ));
        }
        if self.len_min < 1 || self.len_min > self.len_max {
            return bad(format!(
                "string lengths need 1 <= len_min <= len_max, got {}..{}",
                self.len_min, self.len_max
            ));
        }
        if !(0.0..=1.0).contains(&self.epsilon_prob) {
            return bad(format!("epsilon_prob {} outside [0, 1]", self.epsilon_prob));
        }
        if !(self.dirichlet_alpha > 0.0 && self.dirichlet_alpha.is_finite()) {
            return bad(format!("dirichlet_alpha {} must be positive", self.dirichlet_alpha));
        }
        check_threshold(self.tau)
    }

    pub fn alphabet(&self) -> Vec<char> {
        (0..self.alphabet_size).map(|i| (b'a' + i as u8) as char).collect()
    }
}

/// Draws a random automaton: Dirichlet rows, start state 0, a non-empty
/// accepting set, and (when `epsilon_prob > 0`) an acyclic rest-mass ε-matrix.
pub fn random_pfa<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Pfa> {
    cfg.validate()?;
    let n = cfg.n;
    let mut transitions = Vec::with_capacity(cfg.alphabet_size);
    for _ in 0..cfg.alphabet_size {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let row = sample_dirichlet_row(n, cfg.dirichlet_alpha, rng)?;
            m.row_mut(i).copy_from_slice(row.as_slice());
        }
        transitions.push(StochasticMatrix::from_raw(m, StochasticKind::RowStochastic));
    }
    let accepting = random_accepting_set(n, rng);
    let epsilon = if cfg.epsilon_prob > 0.0 {
        Some(random_epsilon_matrix(n, cfg.epsilon_prob, rng))
    } else {
        None
    };
    let closure_mode = if epsilon.is_some() {
        ClosureMode::RestMass
    } else {
        ClosureMode::None
    };
    Pfa::new(PfaParts {
        alphabet: cfg.alphabet(),
        transitions,
        epsilon,
        initial: ProbVector::one_hot(n, 0)?,
        accepting,
        closure_mode,
        fixed_point: None,
    })
}

/// Each state joins with probability 1/2; redrawn while the set is empty.
pub fn random_accepting_set<R: Rng + ?Sized>(n: usize, rng: &mut R) -> AcceptIndicator {
    loop {
        let bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if bits.iter().any(|&b| b) {
            return AcceptIndicator::from_bits(bits);
        }
    }
}

/// Row-substochastic ε-matrix: each state `i` gets, with probability `prob`,
/// one edge to a uniform target `j > i` with weight from [`EPSILON_WEIGHT_RANGE`].
/// The edge graph is acyclic; missing row mass is the state's rest mass.
pub fn random_epsilon_matrix<R: Rng + ?Sized>(n: usize, prob: f64, rng: &mut R) -> StochasticMatrix {
    let mut e = Matrix::zeros(n, n);
    for i in 0..n {
        let fire = rng.random::<f64>() < prob;
        if fire && i + 1 < n {
            let j = rng.random_range(i + 1..n);
            let w = rng.random_range(EPSILON_WEIGHT_RANGE.0..EPSILON_WEIGHT_RANGE.1);
            e.set(i, j, w);
        }
    }
    StochasticMatrix::from_raw(e, StochasticKind::RowSubstochastic)
}

/// Moves each row's rest mass onto the diagonal, giving a row-stochastic matrix.
pub fn with_self_rest(e: &StochasticMatrix) -> StochasticMatrix {
    let mut m = e.as_matrix().clone();
    for (i, r) in e.rest_mass().into_iter().enumerate() {
        let d = m.get(i, i);
        m.set(i, i, d + r);
    }
    StochasticMatrix::from_raw(m, StochasticKind::RowStochastic)
}

/// True when the nonzero pattern of `e` admits a topological order.
pub fn is_acyclic(e: &StochasticMatrix) -> bool {
    let n = e.n();
    let mut indegree = vec![0usize; n];
    for i in 0..n {
        for (j, d) in indegree.iter_mut().enumerate() {
            if e.get(i, j) != 0.0 {
                *d += 1;
            }
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&j| indegree[j] == 0).collect();
    let mut seen = 0;
    while let Some(i) = ready.pop() {
        seen += 1;
        for (j, d) in indegree.iter_mut().enumerate() {
            if e.get(i, j) != 0.0 {
                *d -= 1;
                if *d == 0 {
                    ready.push(j);
                }
            }
        }
    }
    seen == n
}

/// `num_strings` strings with uniform lengths in `[len_min, len_max]` and i.i.d. uniform symbols.
pub fn random_strings<R: Rng + ?Sized>(cfg: &GenConfig, rng: &mut R) -> Result<Vec<String>> {
    cfg.validate()?;
    let alphabet = cfg.alphabet();
    Ok((0..cfg.num_strings)
        .map(|_| {
            let len = rng.random_range(cfg.len_min..=cfg.len_max);
            (0..len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub string: String,
    pub soft_label: f64,
    pub hard_label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<LabeledItem>,
    pub tau: f64,
    pub config: Option<GenConfig>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    tau: f64,
    config: Option<GenConfig>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.items.is_empty() {
            return 0.0;
        }
        let pos = self.items.iter().filter(|it| it.hard_label == 1).count();
        pos as f64 / self.items.len() as f64
    }

    pub fn minority_fraction(&self) -> f64 {
        let p = self.positive_fraction();
        p.min(1.0 - p)
    }

    /// Tab-separated records `string, soft label (17 significant digits), hard label`
    /// after a `# {json}` header carrying the threshold and generator config.
    pub fn to_tsv(&self) -> Result<String> {
        let header = DatasetHeader {
            tau: self.tau,
            config: self.config.clone(),
        };
        let mut out = format!("# {}\n", serde_json::to_string(&header)?);
        for it in &self.items {
            out.push_str(&format!(
                "{}\t{:.16e}\t{}\n",
                it.string, it.soft_label, it.hard_label
            ));
        }
        Ok(out)
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .and_then(|l| l.strip_prefix("# "))
            .ok_or_else(|| PfaError::Format("dataset header line missing".into()))?;
        let header: DatasetHeader = serde_json::from_str(header_line)?;
        let mut items = Vec::new();
        for (no, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(PfaError::Format(format!(
                    "dataset line {} has {} fields",
                    no + 2,
                    fields.len()
                )));
            }
            let soft_label: f64 = fields[1]
                .parse()
                .map_err(|_| PfaError::Format(format!("bad soft label '{}'", fields[1])))?;
            let hard_label = match fields[2] {
                "0" => 0,
                "1" => 1,
                other => return Err(PfaError::Format(format!("bad hard label '{other}'"))),
            };
            items.push(LabeledItem {
                string: fields[0].to_string(),
                soft_label,
                hard_label,
            });
        }
        Ok(Self {
            items,
            tau: header.tau,
            config: header.config,
        })
    }
}

/// Labels each string with its acceptance probability and the strict-threshold decision.
pub fn label_dataset(pfa: &Pfa, strings: &[String], tau: f64) -> Result<LabeledDataset> {
    check_threshold(tau)?;
    let items = strings
        .iter()
        .map(|s| {
            let p = pfa.accept_probability(s)?;
            Ok(LabeledItem {
                string: s.clone(),
                soft_label: p,
                hard_label: u8::from(p > tau),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        items,
        tau,
        config: None,
    })
}

#[derive(Debug, Clone)]
pub struct BalancedInstance {
    pub pfa: Pfa,
    pub dataset: LabeledDataset,
    pub attempts: usize,
    /// Set when no attempt reached the requested minority fraction.
    pub warning: bool,
}

pub const DEFAULT_MIN_MINORITY: f64 = 0.05;
pub const DEFAULT_MAX_RETRIES: usize = 50;

/// Redraws automaton and strings until the minority class makes up at least
/// `min_minority` of the data, keeping the most balanced draw otherwise.
pub fn balanced_instance<R: Rng + ?Sized>(
    cfg: &GenConfig,
    rng: &mut R,
    min_minority: f64,
    max_retries: usize,
) -> Result<BalancedInstance> {
    if !(0.0..0.5).contains(&min_minority) {
        return Err(PfaError::InvalidArgument(format!(
            "min_minority {min_minority} outside [0, 0.5)"
        )));
    }
    let mut best: Option<(Pfa, LabeledDataset)> = None;
    for attempt in 1..=max_retries + 1 {
        let pfa = random_pfa(cfg, rng)?;
        let strings = random_strings(cfg, rng)?;
        let mut dataset = label_dataset(&pfa, &strings, cfg.tau)?;
        dataset.config = Some(cfg.clone());
        let minority = dataset.minority_fraction();
        if minority >= min_minority {
            return Ok(BalancedInstance {
                pfa,
                dataset,
                attempts: attempt,
                warning: false,
            });
        }
        let better = best
            .as_ref()
            .is_none_or(|(_, d)| minority > d.minority_fraction());
        if better {
            best = Some((pfa, dataset));
        }
    }
    let (pfa, dataset) = best.expect("at least one attempt");
    Ok(BalancedInstance {
        pfa,
        dataset,
        attempts: max_retries + 1,
        warning: true,
    })
}
