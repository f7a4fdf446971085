use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::backprop::{check_sample, evaluate, Prepared};
use super::config::{LossKind, PhaseConfig, TrainConfig};
use super::SamplePair;
use crate::error::{BokehError, Result};
use crate::image::{flip, resize_bilinear, Axis};
use crate::weights::{head_init, WeightHead};

/// Augmented sets larger than this are re-prepared every iteration instead
/// of being cached.
const CACHE_BYTES: usize = 256 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReport {
    pub phase: u32,
    pub loss: LossKind,
    pub iterations: usize,
    /// Mean of the phase's objective over the resized, unaugmented set
    /// after the phase.
    pub final_loss: f64,
    /// Mean L1 over the same set.
    pub final_l1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: WeightHead,
    /// Optimizer state at the end of the last phase.
    pub adam: AdamState,
    pub phases: Vec<PhaseReport>,
}

/// Trains a freshly initialized head (`head_init(seed, ..)`) through every
/// phase of `config`.
pub fn train_phases(dataset: &[SamplePair], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    let head = head_init(seed, config.kernels.len() + 1)?;
    train_phases_from(dataset, config, seed, head)
}

/// Like [`train_phases`] but starting from `head`. Each phase draws its
/// sample order from `(seed, phase id)` and starts with a fresh optimizer
/// state, so running phases 1-2 and then phase 3 from the result gives the
/// same parameters as running all three at once.
pub fn train_phases_from(
    dataset: &[SamplePair],
    config: &TrainConfig,
    seed: u64,
    mut head: WeightHead,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(BokehError::EmptyDataset);
    }
    config.validate()?;
    let mut adam = AdamState::new(&head);
    let mut reports = Vec::with_capacity(config.phases.len());
    for phase in &config.phases {
        let (h, state, report) = run_phase(dataset, config, phase, seed, head)?;
        head = h;
        adam = state;
        reports.push(report);
    }
    Ok(TrainOutcome {
        head,
        adam,
        phases: reports,
    })
}

fn run_phase(
    dataset: &[SamplePair],
    config: &TrainConfig,
    phase: &PhaseConfig,
    seed: u64,
    mut head: WeightHead,
) -> Result<(WeightHead, AdamState, PhaseReport)> {
    let kernels = &config.kernels;
    let resized = dataset
        .iter()
        .map(|s| resize_pair(s, phase.width, phase.height))
        .collect::<Result<Vec<_>>>()?;
    for s in &resized {
        check_sample(s, &head, kernels, phase.loss)?;
    }
    let augmented: Vec<SamplePair> = resized
        .iter()
        .flat_map(|s| [s.clone(), flip_pair(s, Axis::Horizontal), flip_pair(s, Axis::Vertical)])
        .collect();

    let mut state = AdamState::new(&head);
    if phase.iterations > 0 {
        let per_sample = Prepared::<f32>::new(&augmented[0], kernels)?.bytes();
        let cache = if per_sample.saturating_mul(augmented.len()) <= CACHE_BYTES {
            Some(
                augmented
                    .iter()
                    .map(|s| Prepared::<f32>::new(s, kernels))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(phase.phase as u64);
        let mut order: Vec<usize> = Vec::new();
        let mut hyper = config.hyper;
        for t in 0..phase.iterations {
            if order.is_empty() {
                order = (0..augmented.len()).collect();
                order.shuffle(&mut rng);
                order.reverse();
            }
            let idx = order.pop().expect("refilled");
            let fresh;
            let prepared = match &cache {
                Some(c) => &c[idx],
                None => {
                    fresh = Prepared::<f32>::new(&augmented[idx], kernels)?;
                    &fresh
                }
            };
            let grads = evaluate(&head, prepared, phase.loss, true, false)
                .grads
                .expect("gradient requested");
            if !grads.is_finite() {
                return Err(BokehError::NonFinite("gradient"));
            }
            hyper.learning_rate = phase.lr_at(t);
            adam_step(&mut head, &grads, &mut state, &hyper)?;
        }
    }

    let final_loss = mean_loss(&head, &resized, kernels, phase.loss)?;
    let final_l1 = match phase.loss {
        LossKind::L1 => final_loss,
        _ => mean_loss(&head, &resized, kernels, LossKind::L1)?,
    };
    let report = PhaseReport {
        phase: phase.phase,
        loss: phase.loss,
        iterations: phase.iterations,
        final_loss,
        final_l1,
    };
    Ok((head, state, report))
}

fn resize_pair(s: &SamplePair, w: usize, h: usize) -> Result<SamplePair> {
    SamplePair::new(
        resize_bilinear(&s.input, w, h)?,
        s.depth.resize(w, h)?,
        resize_bilinear(&s.target, w, h)?,
    )
}

fn flip_pair(s: &SamplePair, axis: Axis) -> SamplePair {
    SamplePair {
        input: flip(&s.input, axis),
        depth: s.depth.flip(axis),
        target: flip(&s.target, axis),
    }
}

fn mean_loss(head: &WeightHead, samples: &[SamplePair], kernels: &[usize], loss: LossKind) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let prepared = Prepared::<f32>::new(s, kernels)?;
        total += evaluate(head, &prepared, loss, false, false).loss;
    }
    Ok(total / samples.len() as f64)
}

/// Mean loss of `head` over `dataset` at the samples' own resolution.
pub fn evaluate_head(head: &WeightHead, dataset: &[SamplePair], kernels: &[usize], loss: LossKind) -> Result<f64> {
    if dataset.is_empty() {
        return Err(BokehError::EmptyDataset);
    }
    for s in dataset {
        check_sample(s, head, kernels, loss)?;
    }
    mean_loss(head, dataset, kernels, loss)
}
