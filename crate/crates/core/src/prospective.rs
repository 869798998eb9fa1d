//! Prospective data-quality analysis: simulate a crowd from estimated
//! prevalence and error rates, recompute consensus at several redundancies
//! and report accuracy against the simulated truth.
//!
//! Randomness comes from [`RNG_ALGORITHM`]: a ChaCha8 generator seeded with
//! the sweep seed. Stream 0 draws the true labels (shared by every cell of
//! the sweep); stream `r` draws the annotations at redundancy `r`, which all
//! models at that redundancy then consume. Cells therefore run in parallel
//! without affecting the result.

use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::aggregation::{fit, fit_multinomial_from, Confusion, EmConfig, FitError, ModelKind, ModelParams};
use crate::model::{QuestionView, Triple};
use crate::scalar::Scalar;

pub const RNG_ALGORITHM: &str = "chacha8";

const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid community profile: {0}")]
    InvalidProfile(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConfusionSource<F> {
    /// Every synthetic annotation uses the same matrix.
    Pooled(Array2<F>),
    /// Each synthetic annotation picks one matrix uniformly at random.
    WorkerPool(Vec<Array2<F>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityProfile<F> {
    name: String,
    classes: Vec<String>,
    tau: Vec<F>,
    confusion: ConfusionSource<F>,
}

fn check_distribution<F: Scalar>(p: &[F], what: &str) -> Result<(), SimulationError> {
    if p.iter().any(|&x| !(x >= F::zero()) || !x.is_finite()) {
        return Err(SimulationError::InvalidDistribution(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let total: f64 = p.iter().map(|x| x.as_f64()).sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(SimulationError::InvalidDistribution(format!("{what} sums to {total}")));
    }
    Ok(())
}

impl<F: Scalar> CommunityProfile<F> {
    pub fn new(
        name: impl Into<String>,
        classes: Vec<String>,
        tau: Vec<F>,
        confusion: ConfusionSource<F>,
    ) -> Result<Self, SimulationError> {
        let k = classes.len();
        if k == 0 {
            return Err(SimulationError::InvalidProfile("no classes".into()));
        }
        if tau.len() != k {
            return Err(SimulationError::InvalidProfile(format!(
                "tau has {} entries for {k} classes",
                tau.len()
            )));
        }
        check_distribution(&tau, "tau")?;
        let matrices: Vec<&Array2<F>> = match &confusion {
            ConfusionSource::Pooled(m) => vec![m],
            ConfusionSource::WorkerPool(ms) if ms.is_empty() => {
                return Err(SimulationError::InvalidProfile("empty worker pool".into()))
            }
            ConfusionSource::WorkerPool(ms) => ms.iter().collect(),
        };
        for (i, m) in matrices.iter().enumerate() {
            if m.dim() != (k, k) {
                return Err(SimulationError::InvalidProfile(format!(
                    "matrix {i} has shape {:?}, expected {k}x{k}",
                    m.dim()
                )));
            }
            for (r, row) in m.rows().into_iter().enumerate() {
                check_distribution(&row.to_vec(), &format!("row {r} of matrix {i}"))?;
            }
        }
        Ok(Self {
            name: name.into(),
            classes,
            tau,
            confusion,
        })
    }

    /// Pooled parameters become a pooled profile, per-worker parameters a
    /// worker pool.
    pub fn from_params(
        name: impl Into<String>,
        params: &ModelParams<F>,
    ) -> Result<Self, SimulationError> {
        let confusion = match &params.confusion {
            Confusion::Pooled(m) => ConfusionSource::Pooled(m.clone()),
            Confusion::PerWorker(ws) => {
                ConfusionSource::WorkerPool(ws.iter().map(|w| w.matrix.clone()).collect())
            }
        };
        Self::new(name, params.classes.clone(), params.tau.clone(), confusion)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn tau(&self) -> &[F] {
        &self.tau
    }

    pub fn confusion(&self) -> &ConfusionSource<F> {
        &self.confusion
    }

    /// The matrix of a pooled profile, or the entrywise mean of the pool.
    pub fn mean_confusion(&self) -> Array2<F> {
        match &self.confusion {
            ConfusionSource::Pooled(m) => m.clone(),
            ConfusionSource::WorkerPool(ms) => {
                let mut sum = ms[0].clone();
                for m in &ms[1..] {
                    sum = sum + m;
                }
                sum.mapv(|x| x / F::from_count(ms.len()))
            }
        }
    }
}

fn weighted<F: Scalar>(p: &[F]) -> Result<WeightedIndex<f64>, SimulationError> {
    WeightedIndex::new(p.iter().map(|x| x.as_f64()))
        .map_err(|e| SimulationError::InvalidDistribution(e.to_string()))
}

/// I.i.d. class draws from `tau`.
pub fn sample_tasks<F: Scalar, R: Rng + ?Sized>(
    tau: &[F],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SimulationError> {
    check_distribution(tau, "tau")?;
    let dist = weighted(tau)?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// `redundancy` synthetic annotations per task, each answering from the row
/// of the task's true class. Worker ids are pool indices in worker-pool mode
/// and the annotation's position within its task otherwise.
pub fn sample_annotations<F: Scalar, R: Rng + ?Sized>(
    true_labels: &[usize],
    profile: &CommunityProfile<F>,
    redundancy: usize,
    rng: &mut R,
) -> Result<QuestionView, SimulationError> {
    if redundancy == 0 {
        return Err(SimulationError::InvalidSweep("redundancy must be >= 1".into()));
    }
    let k = profile.classes.len();
    if let Some(&bad) = true_labels.iter().find(|&&z| z >= k) {
        return Err(SimulationError::InvalidSweep(format!("true label {bad} out of range")));
    }
    let row_samplers = |m: &Array2<F>| -> Result<Vec<WeightedIndex<f64>>, SimulationError> {
        m.rows().into_iter().map(|row| weighted(&row.to_vec())).collect()
    };
    let samplers: Vec<Vec<WeightedIndex<f64>>> = match &profile.confusion {
        ConfusionSource::Pooled(m) => vec![row_samplers(m)?],
        ConfusionSource::WorkerPool(ms) => ms.iter().map(row_samplers).collect::<Result<_, _>>()?,
    };
    let pool = matches!(profile.confusion, ConfusionSource::WorkerPool(_));
    let mut triples = Vec::with_capacity(true_labels.len() * redundancy);
    for (task, &z) in true_labels.iter().enumerate() {
        for j in 0..redundancy {
            let (worker, matrix) = if pool {
                let m = rng.random_range(0..samplers.len());
                (m, m)
            } else {
                (j, 0)
            };
            let class = samplers[matrix][z].sample(rng);
            triples.push(Triple { task, worker, class });
        }
    }
    let n_workers = if pool { samplers.len() } else { redundancy };
    Ok(QuestionView::new(
        profile.name.clone(),
        profile.classes.clone(),
        (0..true_labels.len()).map(|i| format!("t{i}")).collect(),
        (0..n_workers).map(|w| format!("w{w}")).collect(),
        triples,
    )
    .expect("synthetic indices are in range"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveEntry {
    pub model: ModelKind,
    pub redundancy: usize,
    pub accuracy: f64,
    /// `sqrt(accuracy (1 - accuracy) / n_tasks)`.
    pub std_err: f64,
    pub n_tasks: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProspectiveCurve {
    pub profile: String,
    pub rng_algorithm: &'static str,
    /// Sorted by model name, then redundancy.
    pub entries: Vec<CurveEntry>,
}

impl ProspectiveCurve {
    pub fn entry(&self, model: ModelKind, redundancy: usize) -> Option<&CurveEntry> {
        self.entries
            .iter()
            .find(|e| e.model == model && e.redundancy == redundancy)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn accuracy(hard_labels: &[usize], truth: &[usize]) -> f64 {
    let hits = hard_labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}

pub fn run_sweep<F: Scalar>(
    profile: &CommunityProfile<F>,
    n_tasks: usize,
    redundancies: &[usize],
    models: &[ModelKind],
    em_config: &EmConfig<F>,
    seed: u64,
) -> Result<ProspectiveCurve, SimulationError> {
    if n_tasks == 0 {
        return Err(SimulationError::InvalidSweep("n_tasks must be >= 1".into()));
    }
    if redundancies.is_empty() || redundancies[0] == 0 {
        return Err(SimulationError::InvalidSweep(
            "redundancies must be nonempty and positive".into(),
        ));
    }
    if redundancies.windows(2).any(|w| w[0] >= w[1]) {
        return Err(SimulationError::InvalidSweep("redundancies must be ascending".into()));
    }
    if models.is_empty() {
        return Err(SimulationError::InvalidSweep("no models requested".into()));
    }
    if let Some(m) = models.iter().find(|m| **m == ModelKind::Ds) {
        return Err(SimulationError::InvalidSweep(format!("model {m} is not supported in sweeps")));
    }
    em_config.validate()?;

    let start = profile.mean_confusion();
    let truth = sample_tasks(&profile.tau, n_tasks, &mut stream_rng(seed, 0))?;
    let cells: Vec<Vec<CurveEntry>> = redundancies
        .par_iter()
        .map(|&r| {
            let view = sample_annotations(&truth, profile, r, &mut stream_rng(seed, r as u64))?;
            models
                .iter()
                .map(|&model| {
                    // The pooled refit starts from the profile's own posteriors.
                    let result = match model {
                        ModelKind::Mm => {
                            fit_multinomial_from(&view, em_config, &profile.tau, &start)?
                        }
                        _ => fit(&view, model, em_config)?,
                    };
                    let acc = accuracy(&result.hard_labels, &truth);
                    Ok(CurveEntry {
                        model,
                        redundancy: r,
                        accuracy: acc,
                        std_err: (acc * (1.0 - acc) / n_tasks as f64).sqrt(),
                        n_tasks,
                        seed,
                    })
                })
                .collect()
        })
        .collect::<Result<_, SimulationError>>()?;
    let mut entries: Vec<CurveEntry> = cells.into_iter().flatten().collect();
    entries.sort_by(|a, b| {
        (a.model.as_str(), a.redundancy).cmp(&(b.model.as_str(), b.redundancy))
    });
    entries.dedup_by(|a, b| a.model == b.model && a.redundancy == b.redundancy);
    Ok(ProspectiveCurve {
        profile: profile.name.clone(),
        rng_algorithm: RNG_ALGORITHM,
        entries,
    })
}
