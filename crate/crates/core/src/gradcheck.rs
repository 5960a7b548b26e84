//! Central finite-difference checks of every loss term's analytic gradient
//! with respect to all model parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{contrastive_objective, domain_loss, one_hot, task_loss, weak_supervision_loss, LabelProportions};
use crate::model::{backward_batch, forward_batch, heads_backward, heads_cached, HeadGrads, InputBatch, Mode, ModelConfig, ModelParams, ParamSet};
use crate::ops::{log_softmax, log_softmax_backward};
use crate::pairing::{build_auxiliary, build_pair_sets, BatchMember, PairSets, Sampling, SamplingConfig, Strategy};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that entries that are zero
/// analytically are compared in absolute terms.
pub const FLOOR: f64 = 1e-6;

const TIME: usize = 8;
const LAMBDA_D: f64 = 0.7;

/// 2 conv blocks of 3 filters with width 3 on 2 channels, 2 classes, 2
/// sources plus the target.
pub fn tiny_config(batch_norm: bool) -> ModelConfig {
    ModelConfig {
        in_channels: 2,
        filters: vec![3, 3],
        widths: vec![3, 3],
        n_classes: 2,
        n_domains: 3,
        domain_hidden: 4,
        proj_dim: 4,
        batch_norm,
    }
}

/// A fixed batch: 3 target rows, then 3 rows from each source.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub params: ModelParams,
    pub batch: InputBatch,
    pub labels: Vec<Option<usize>>,
    pub domains: Vec<usize>,
    pub proportions: LabelProportions,
}

impl Fixture {
    pub fn new(seed: u64, batch_norm: bool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::init(tiny_config(batch_norm), &mut rng)?;
        // zero biases leave pre-activations exactly on the ReLU kink
        for block in &mut params.weights.conv_blocks {
            for b in block.bias.data_mut() {
                *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let domains = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let labels: Vec<Option<usize>> = domains
            .iter()
            .enumerate()
            .map(|(i, &d)| (d != 0).then_some(i % 2))
            .collect();
        let windows: Vec<Vec<f64>> = domains
            .iter()
            .map(|_| {
                (0..2 * TIME)
                    .map(|_| {
                        let v: f64 = rng.sample(StandardNormal);
                        v
                    })
                    .collect()
            })
            .collect();
        let batch = InputBatch::from_windows(windows.iter().map(|w| (w.as_slice(), 2)))?;
        Ok(Self {
            params,
            batch,
            labels,
            domains,
            proportions: LabelProportions::new(vec![0.7, 0.3])?,
        })
    }

    fn source_rows(&self) -> Vec<usize> {
        (0..self.domains.len()).filter(|&r| self.domains[r] != 0).collect()
    }

    fn target_rows(&self) -> Vec<usize> {
        (0..self.domains.len()).filter(|&r| self.domains[r] == 0).collect()
    }
}

/// A contrastive configuration with its pair sets drawn once from the
/// fixture's initial embeddings, so the loss is smooth in the parameters.
#[derive(Debug, Clone)]
pub struct FrozenPlan {
    pub cfg: SamplingConfig,
    pub members: Vec<BatchMember>,
    pub pairs: Vec<PairSets>,
}

impl FrozenPlan {
    pub fn new(fx: &Fixture, cfg: SamplingConfig, seed: u64) -> Result<Self> {
        let (f, _) = forward_batch(&fx.params, &fx.batch, Mode::Train)?;
        let (out, _) = heads_cached(&fx.params, &f)?;
        let lp = log_softmax(&out.task_logits)?;
        let members = build_auxiliary(&out.z, &fx.labels, &fx.domains, &lp, cfg.pl)?;
        let pairs = build_pair_sets(&members, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self { cfg, members, pairs })
    }
}

#[derive(Debug, Clone)]
pub enum Term {
    Task,
    /// Domain loss; feature-extractor gradients pass the reversal layer.
    Domain,
    Contrastive(Box<FrozenPlan>),
    WeakSupervision,
}

impl Term {
    fn label(&self) -> String {
        match self {
            Term::Task => "task".into(),
            Term::Domain => "domain".into(),
            Term::WeakSupervision => "weak_supervision".into(),
            Term::Contrastive(p) => format!(
                "contrastive {}/{}{}",
                p.cfg.strategy,
                p.cfg.sampling,
                if p.cfg.pl { "/pl" } else { "" }
            ),
        }
    }
}

/// Loss of `terms` weighted and summed, plus the update direction the
/// trainer would backpropagate.
pub fn loss_and_grad(params: &ModelParams, fx: &Fixture, terms: &[(f64, Term)]) -> Result<(f64, ParamSet)> {
    let (f, caches) = forward_batch(params, &fx.batch, Mode::Train)?;
    let (out, hc) = heads_cached(params, &f)?;
    let rows = fx.domains.len();
    let task_lp = log_softmax(&out.task_logits)?;
    let mut g_task_lp = Tensor::zeros_like(&task_lp);
    let mut g_dom = None;
    let mut g_z = None;
    let mut loss = 0.0;
    for (w, term) in terms {
        match term {
            Term::Task => {
                let src = fx.source_rows();
                let y: Vec<usize> = src.iter().map(|&r| fx.labels[r].expect("source label")).collect();
                let (v, g) = task_loss(&one_hot(&y, params.config.n_classes)?, &task_lp.select_rows(&src)?)?;
                loss += w * v;
                for (i, &r) in src.iter().enumerate() {
                    for (d, s) in g_task_lp.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d += w * s;
                    }
                }
            }
            Term::WeakSupervision => {
                let tgt = fx.target_rows();
                let (v, g) = weak_supervision_loss(&fx.proportions, &task_lp.select_rows(&tgt)?)?;
                loss += w * v;
                for (i, &r) in tgt.iter().enumerate() {
                    for (d, s) in g_task_lp.row_mut(r).iter_mut().zip(g.row(i)) {
                        *d += w * s;
                    }
                }
            }
            Term::Domain => {
                let lp = log_softmax(&out.domain_logits)?;
                let (v, g) = domain_loss(&fx.domains, params.config.n_domains, &lp)?;
                loss += w * v;
                let mut g = log_softmax_backward(&out.domain_logits, &g)?.input_grads.remove(0);
                g.scale(*w);
                g_dom = Some(g);
            }
            Term::Contrastive(plan) => {
                let members: Vec<BatchMember> = plan
                    .members
                    .iter()
                    .map(|m| BatchMember {
                        z: out.z.row(m.index).to_vec(),
                        ..m.clone()
                    })
                    .collect();
                let c = contrastive_objective(&members, &plan.pairs, plan.cfg.tau, plan.cfg.pl)?;
                loss += w * c.loss;
                if let Some(grad) = c.grad {
                    let mut full = Tensor::zeros(&[rows, params.config.proj_dim]);
                    for (k, m) in members.iter().enumerate() {
                        for (d, s) in full.row_mut(m.index).iter_mut().zip(grad.row(k)) {
                            *d += w * s;
                        }
                    }
                    g_z = Some(full);
                }
            }
        }
    }
    let g_task = log_softmax_backward(&out.task_logits, &g_task_lp)?.input_grads.remove(0);
    let mut grads = params.weights.zeros_like();
    let df = heads_backward(
        params,
        &f,
        &hc,
        HeadGrads {
            task_logits: Some(&g_task),
            domain_logits: g_dom.as_ref(),
            z: g_z.as_ref(),
        },
        LAMBDA_D,
        &mut grads,
    )?;
    backward_batch(params, &fx.batch, &caches, &df, &mut grads)?;
    Ok((loss, grads))
}

fn loss_only(params: &ModelParams, fx: &Fixture, terms: &[(f64, Term)]) -> Result<f64> {
    loss_and_grad(params, fx, terms).map(|(l, _)| l)
}

/// Outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    /// Parameter holding the worst entry.
    pub worst: String,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

/// Compares analytic gradients with central differences of each term.
/// Feature-extractor entries of the domain term are expected to be the
/// finite difference scaled by `-λ_d`.
pub fn check(name: &str, fx: &Fixture, terms: &[(f64, Term)]) -> Result<CheckReport> {
    let (_, analytic) = loss_and_grad(&fx.params, fx, terms)?;
    let names: Vec<String> = analytic.named().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = analytic.named().into_iter().map(|(_, t)| t.data().to_vec()).collect();
    let mut report = CheckReport {
        name: name.to_string(),
        scalars: 0,
        max_rel_error: 0.0,
        worst: String::new(),
    };
    let mut probe = fx.params.clone();
    for (ti, tname) in names.iter().enumerate() {
        let extractor = tname.starts_with("conv");
        for e in 0..analytic[ti].len() {
            let mut expected = 0.0;
            for (w, term) in terms {
                let one = [(1.0, term.clone())];
                let orig = probe.weights.tensors_mut()[ti].data()[e];
                probe.weights.tensors_mut()[ti].data_mut()[e] = orig + STEP;
                let up = loss_only(&probe, fx, &one)?;
                probe.weights.tensors_mut()[ti].data_mut()[e] = orig - STEP;
                let down = loss_only(&probe, fx, &one)?;
                probe.weights.tensors_mut()[ti].data_mut()[e] = orig;
                let scale = if extractor && matches!(term, Term::Domain) { -LAMBDA_D } else { 1.0 };
                expected += w * scale * (up - down) / (2.0 * STEP);
            }
            let a = analytic[ti][e];
            let rel = (a - expected).abs() / a.abs().max(expected.abs()).max(FLOOR);
            report.scalars += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{tname}[{e}]");
            }
        }
    }
    Ok(report)
}

/// Every check: each term alone (all contrastive variants), the weighted
/// total, and the task loss with batch norm.
pub fn run_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let fx = Fixture::new(seed, false)?;
    let mut reports = vec![
        check("task", &fx, &[(1.0, Term::Task)])?,
        check("domain", &fx, &[(1.0, Term::Domain)])?,
        check("weak_supervision", &fx, &[(1.0, Term::WeakSupervision)])?,
    ];
    let mut plans = Vec::new();
    for strategy in [Strategy::Within, Strategy::Any, Strategy::Cross] {
        for sampling in [Sampling::Hard, Sampling::Random] {
            for pl in [false, true] {
                let cfg = SamplingConfig {
                    strategy,
                    sampling,
                    k1: 2,
                    k2: 3,
                    pl,
                    tau: 0.5,
                };
                let term = Term::Contrastive(Box::new(FrozenPlan::new(&fx, cfg, seed)?));
                reports.push(check(&term.label(), &fx, &[(1.0, term.clone())])?);
                plans.push(term);
            }
        }
    }
    let total = [
        (1.0, Term::Task),
        (1.0, Term::Domain),
        (10.0, plans[plans.len() - 1].clone()),
        (1.0, Term::WeakSupervision),
    ];
    reports.push(check("total", &fx, &total)?);
    let bn = Fixture::new(seed, true)?;
    reports.push(check("task with batch norm", &bn, &[(1.0, Term::Task)])?);
    Ok(reports)
}
