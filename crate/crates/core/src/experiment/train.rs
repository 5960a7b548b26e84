//! The training loop: batch assembly, forward through all heads, the loss
//! terms of the configured variant, backward, and an Adam step.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::batch::{assemble_batch, DomainSampler};
use super::config::{ExperimentConfig, Selection};
use crate::checkpoint::checkpoint_save;
use crate::data::{generate, inject_proportion_noise, label_proportions, load_dataset, normalize, Dataset, DomainDataset, LabeledWindow};
use crate::error::{Error, Result};
use crate::losses::{contrastive_objective, domain_loss, task_loss, total_loss, weak_supervision_loss, LabelProportions, LossBreakdown, one_hot};
use crate::model::{
    adam_step, backward_batch, forward_batch, heads, heads_backward, heads_cached, lambda_schedule, update_running_stats,
    GrlSchedule, HeadGrads, InputBatch, Mode, ModelParams, ParamSet,
};
use crate::ops::{log_softmax, log_softmax_backward};
use crate::pairing::{argmax, build_auxiliary, build_pair_sets};
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 256;

/// RNG streams derived from the model seed.
const STREAM_BATCH: u64 = 1;
const STREAM_PAIRS: u64 = 2;
const STREAM_NOISE: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Loads the dataset a config refers to.
pub fn load_config_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.dataset, &cfg.synthetic) {
        (Some(path), None) => load_dataset(path),
        (None, Some(spec)) => generate(spec),
        _ => Err(Error::invalid("set exactly one of dataset and synthetic")),
    }
}

/// `n` source domains drawn from `candidates` with a seeded shuffle, sorted.
pub fn choose_sources(candidates: &[usize], n: usize, seed: u64) -> Result<Vec<usize>> {
    if n > candidates.len() {
        return Err(Error::invalid(format!(
            "{n} sources requested but only {} other domains exist",
            candidates.len()
        )));
    }
    let mut pool = candidates.to_vec();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = pool[..n].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Normalized domains and target proportions for one trial.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub dataset_name: String,
    pub n_channels: usize,
    pub n_classes: usize,
    pub target: DomainDataset,
    pub sources: Vec<DomainDataset>,
    /// Possibly noisy proportions handed to weak supervision.
    pub target_proportions: LabelProportions,
    pub realized_ws_noise: f64,
}

pub fn prepare_trial(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<TrialData> {
    cfg.validate()?;
    let target = dataset.domain(cfg.target)?;
    let source_ids = match &cfg.sources {
        Some(s) => s.clone(),
        None => {
            let others: Vec<usize> = dataset.domain_ids().into_iter().filter(|&d| d != cfg.target).collect();
            choose_sources(&others, cfg.n_sources, cfg.source_set_seed)?
        }
    };
    let sources = source_ids
        .iter()
        .map(|&id| normalize(dataset.domain(id)?))
        .collect::<Result<Vec<_>>>()?;
    let target = normalize(target)?;
    let exact = label_proportions(&target.train, dataset.n_classes)?;
    let (target_proportions, realized_ws_noise) = if cfg.method.ws && cfg.ws_noise_budget > 0.0 {
        inject_proportion_noise(&exact, cfg.ws_noise_budget, &mut stream(cfg.model_seed, STREAM_NOISE))?
    } else {
        (exact, 0.0)
    };
    Ok(TrialData {
        dataset_name: dataset.name.clone(),
        n_channels: dataset.n_channels,
        n_classes: dataset.n_classes,
        target,
        sources,
        target_proportions,
        realized_ws_noise,
    })
}

/// Fraction of argmax task predictions equal to the labels.
pub fn evaluate(params: &ModelParams, split: &[LabeledWindow]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let mut correct = 0usize;
    for chunk in split.chunks(EVAL_CHUNK) {
        let labels = chunk
            .iter()
            .enumerate()
            .map(|(i, w)| w.label.ok_or_else(|| Error::invalid(format!("evaluation row {i} is unlabeled"))))
            .collect::<Result<Vec<_>>>()?;
        let batch = InputBatch::from_windows(chunk.iter().map(|w| (w.values.as_slice(), w.channels)))?;
        let (f, _) = forward_batch(params, &batch, Mode::Eval)?;
        let logits = heads(params, &f)?.task_logits;
        correct += labels.iter().enumerate().filter(|(r, y)| argmax(logits.row(*r)) == **y).count();
    }
    Ok(correct as f64 / split.len() as f64)
}

/// One assembled mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    pub input: InputBatch,
    /// Class labels; `None` for target rows.
    pub labels: Vec<Option<usize>>,
    /// 0 for the target, `i` for source `i` (1-based).
    pub slots: Vec<usize>,
}

/// Everything a single optimization step produced.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    pub grads: ParamSet,
    pub lambda_d: f64,
    /// ∂L/∂F contributed through the gradient reversal layer.
    pub domain_feature_grad: Option<Tensor>,
    pub contrastive_valid_queries: usize,
}

/// Mutable state of a running trial.
pub struct Trainer<'a> {
    pub cfg: &'a ExperimentConfig,
    pub data: &'a TrialData,
    pub params: ModelParams,
    samplers: Vec<DomainSampler>,
    batch_rng: ChaCha8Rng,
    pair_rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &'a ExperimentConfig, data: &'a TrialData) -> Result<Self> {
        cfg.validate()?;
        let model_cfg = cfg.model_config(data.n_channels, data.n_classes);
        let params = ModelParams::init(model_cfg, &mut ChaCha8Rng::seed_from_u64(cfg.model_seed))?;
        let mut samplers = vec![DomainSampler::new(data.target.train.len())?];
        for s in &data.sources {
            samplers.push(DomainSampler::new(s.train.len())?);
        }
        Ok(Self {
            cfg,
            data,
            params,
            samplers,
            batch_rng: stream(cfg.model_seed, STREAM_BATCH),
            pair_rng: stream(cfg.model_seed, STREAM_PAIRS),
        })
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let m = &self.cfg.method;
        let plan = assemble_batch(self.cfg.batch_size, self.data.sources.len(), m.ws, m.dg)?;
        let mut windows: Vec<&LabeledWindow> = Vec::with_capacity(self.cfg.batch_size);
        let mut labels = Vec::with_capacity(self.cfg.batch_size);
        let mut slots = Vec::with_capacity(self.cfg.batch_size);
        for idx in self.samplers[0].take(plan.target, &mut self.batch_rng) {
            windows.push(&self.data.target.train[idx]);
            labels.push(None);
            slots.push(0);
        }
        for (i, &count) in plan.sources.iter().enumerate() {
            for idx in self.samplers[i + 1].take(count, &mut self.batch_rng) {
                let w = &self.data.sources[i].train[idx];
                let y = w
                    .label
                    .ok_or_else(|| Error::invalid(format!("source {} row {idx} is unlabeled", self.data.sources[i].id)))?;
                windows.push(w);
                labels.push(Some(y));
                slots.push(i + 1);
            }
        }
        let input = InputBatch::from_windows(windows.iter().map(|w| (w.values.as_slice(), w.channels)))?;
        Ok(Batch { input, labels, slots })
    }

    /// Forward and backward for one batch without touching the parameters.
    pub fn compute_step(&mut self, batch: &Batch, iteration: usize) -> Result<StepOutput> {
        let cfg = self.cfg;
        let method = cfg.method;
        let params = &self.params;
        let rows = batch.slots.len();
        let (f, caches) = forward_batch(params, &batch.input, Mode::Train)?;
        let (out, head_cache) = heads_cached(params, &f)?;
        let task_lp = log_softmax(&out.task_logits)?;
        let n_classes = params.config.n_classes;

        // task loss on labeled source rows
        let source_rows: Vec<usize> = (0..rows).filter(|&r| batch.labels[r].is_some()).collect();
        let labels: Vec<usize> = source_rows.iter().map(|&r| batch.labels[r].expect("source rows")).collect();
        let (task, g_src) = task_loss(&one_hot(&labels, n_classes)?, &task_lp.select_rows(&source_rows)?)?;
        let mut g_task_lp = Tensor::zeros_like(&task_lp);
        for (i, &r) in source_rows.iter().enumerate() {
            g_task_lp.row_mut(r).copy_from_slice(g_src.row(i));
        }

        // weak supervision on target rows
        let target_rows: Vec<usize> = (0..rows).filter(|&r| batch.slots[r] == 0).collect();
        let mut ws_value = 0.0;
        if method.ws {
            if target_rows.is_empty() {
                return Err(Error::invalid("weak supervision needs target rows in the batch"));
            }
            let (v, g) = weak_supervision_loss(&self.data.target_proportions, &task_lp.select_rows(&target_rows)?)?;
            ws_value = v;
            for (i, &r) in target_rows.iter().enumerate() {
                g_task_lp.row_mut(r).copy_from_slice(g.row(i));
            }
        }
        let g_task_logits = log_softmax_backward(&out.task_logits, &g_task_lp)?.input_grads.remove(0);

        // adversary
        let lambda_d = if method.uses_adversary() && !method.no_adversary {
            lambda_schedule(&GrlSchedule::at(iteration, cfg.iterations))
        } else {
            0.0
        };
        let mut domain_value = 0.0;
        let mut g_domain_logits = None;
        if method.uses_adversary() {
            let dom_labels: Vec<usize> = batch.slots.iter().map(|&s| if method.dg { s - 1 } else { s }).collect();
            let dom_lp = log_softmax(&out.domain_logits)?;
            let (v, g) = domain_loss(&dom_labels, params.config.n_domains, &dom_lp)?;
            domain_value = v;
            g_domain_logits = Some(log_softmax_backward(&out.domain_logits, &g)?.input_grads.remove(0));
        }

        // contrastive
        let mut contrastive_value = 0.0;
        let mut g_z = None;
        let mut valid_queries = 0;
        if method.uses_contrastive() {
            let members = build_auxiliary(&out.z, &batch.labels, &batch.slots, &task_lp, method.pl)?;
            let pairs = build_pair_sets(&members, &cfg.sampling(), &mut self.pair_rng);
            let c = contrastive_objective(&members, &pairs, cfg.tau, method.pl)?;
            contrastive_value = c.loss;
            valid_queries = c.valid_queries;
            if let (Some(grad), true) = (c.grad, cfg.lambda_c > 0.0) {
                let mut full = Tensor::zeros_like(&out.z);
                for (k, m) in members.iter().enumerate() {
                    for (dst, src) in full.row_mut(m.index).iter_mut().zip(grad.row(k)) {
                        *dst += cfg.lambda_c * src;
                    }
                }
                g_z = Some(full);
            }
        }

        let breakdown = total_loss(task, domain_value, contrastive_value, ws_value, cfg.lambda_c, method.ws);
        if !breakdown.is_finite() {
            return Err(Error::Diverged { iteration, breakdown });
        }

        let mut grads = params.weights.zeros_like();
        let mut df = heads_backward(
            params,
            &f,
            &head_cache,
            HeadGrads {
                task_logits: Some(&g_task_logits),
                domain_logits: None,
                z: g_z.as_ref(),
            },
            lambda_d,
            &mut grads,
        )?;
        let mut domain_feature_grad = None;
        if let Some(g) = &g_domain_logits {
            let d = heads_backward(
                params,
                &f,
                &head_cache,
                HeadGrads {
                    domain_logits: Some(g),
                    ..HeadGrads::default()
                },
                lambda_d,
                &mut grads,
            )?;
            df.add_scaled(&d, 1.0)?;
            domain_feature_grad = Some(d);
        }
        backward_batch(params, &batch.input, &caches, &df, &mut grads)?;
        for cache in &caches {
            update_running_stats(&mut self.params, cache);
        }
        Ok(StepOutput {
            breakdown,
            grads,
            lambda_d,
            domain_feature_grad,
            contrastive_valid_queries: valid_queries,
        })
    }

    /// Assembles a batch, computes gradients and applies Adam.
    pub fn step(&mut self, iteration: usize) -> Result<StepOutput> {
        let batch = self.next_batch()?;
        let out = self.compute_step(&batch, iteration)?;
        adam_step(&mut self.params, &out.grads, &self.cfg.adam())?;
        Ok(out)
    }

    fn selection_split(&self) -> Vec<LabeledWindow> {
        match self.cfg.selection {
            Selection::SourceValid => self.data.sources.iter().flat_map(|s| s.valid.iter().cloned()).collect(),
            Selection::TargetValid => self.data.target.valid.clone(),
        }
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialResult {
    pub fingerprint: String,
    pub dataset: String,
    pub method: String,
    pub target: usize,
    pub sources: Vec<usize>,
    pub model_seed: u64,
    pub target_test_acc: f64,
    pub source_valid_acc: f64,
    pub best_iteration: usize,
    pub realized_ws_noise: f64,
    /// `(iteration, accuracy)` of every validation pass.
    pub valid_history: Vec<(usize, f64)>,
    pub trace: Vec<LossBreakdown>,
}

/// Trains one model on prepared data and scores its best checkpoint on the
/// target test split.
pub fn run_trial(cfg: &ExperimentConfig, data: &TrialData) -> Result<TrialResult> {
    let mut trainer = Trainer::new(cfg, data)?;
    let selection = trainer.selection_split();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut history = Vec::new();
    let mut trace = Vec::new();
    for it in 0..cfg.iterations {
        let out = trainer.step(it)?;
        if cfg.record_trace {
            trace.push(out.breakdown);
        }
        let done = it + 1;
        if done % cfg.eval_every == 0 || done == cfg.iterations {
            let acc = evaluate(&trainer.params, &selection)?;
            log::debug!("iteration {done}: validation accuracy {acc:.4}, loss {:.4}", out.breakdown.total);
            history.push((done, acc));
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, done, trainer.params.clone()));
            }
        }
    }
    let (valid_acc, best_iteration, best_params) = best.expect("at least one validation pass");
    if let Some(path) = &cfg.checkpoint {
        checkpoint_save(&best_params, path)?;
    }
    let source_valid: Vec<LabeledWindow> = data.sources.iter().flat_map(|s| s.valid.iter().cloned()).collect();
    let source_valid_acc = match cfg.selection {
        Selection::SourceValid => valid_acc,
        Selection::TargetValid => evaluate(&best_params, &source_valid)?,
    };
    let target_test_acc = evaluate(&best_params, &data.target.test)?;
    Ok(TrialResult {
        fingerprint: cfg.fingerprint(),
        dataset: data.dataset_name.clone(),
        method: cfg.method.to_string(),
        target: data.target.id,
        sources: data.sources.iter().map(|s| s.id).collect(),
        model_seed: cfg.model_seed,
        target_test_acc,
        source_valid_acc,
        best_iteration,
        realized_ws_noise: data.realized_ws_noise,
        valid_history: history,
        trace,
    })
}

/// Loads data, trains and evaluates.
pub fn train(cfg: &ExperimentConfig) -> Result<TrialResult> {
    let dataset = load_config_dataset(cfg)?;
    let data = prepare_trial(cfg, &dataset)?;
    run_trial(cfg, &data)
}
