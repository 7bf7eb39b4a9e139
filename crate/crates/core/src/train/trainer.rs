//! Mini-batch training with interleaved unlabeled batches, KL annealing,
//! periodic prior refresh and early stopping on a development metric.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradStore, ParamSet, Tape};
use crate::data::{Sentence, Vocab};
use crate::error::{Error, Result};
use crate::model::{LossOptions, VslModel};
use crate::train::metrics::{evaluate, DevMetric, EvalReport};
use crate::train::optimizer::{Optimizer, OptimizerKind, OptimizerSettings};
use crate::variational::{refresh_priors, AnnealSchedule, PriorStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Sentences per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Fixed trade-off weight. When absent, supervised runs use 0 and
    /// semi-supervised runs pick the best value of `alpha_grid` on dev.
    pub alpha: Option<f64>,
    pub alpha_grid: Vec<f64>,
    /// Enables the two-phase warm start: priors are first learned with this
    /// smaller weight, then a fresh model trains against them.
    pub alpha_pretrain: Option<f64>,
    pub patience: usize,
    pub seed: u64,
    /// Epochs between prior refreshes.
    pub refresh_period: usize,
    /// Unlabeled batches after each labeled batch.
    pub unlabeled_per_labeled: usize,
    pub anneal_start: f64,
    /// Length of the KL-weight ramp; 0 disables annealing.
    pub anneal_ramp_epochs: usize,
    pub dev_metric: DevMetric,
    /// Stop as soon as the dev metric reaches this value.
    pub target_metric: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 10,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            alpha: None,
            alpha_grid: vec![0.01, 0.1, 1.0],
            alpha_pretrain: None,
            patience: 5,
            seed: 0,
            refresh_period: 1,
            unlabeled_per_labeled: 1,
            anneal_start: 0.1,
            anneal_ramp_epochs: 10,
            dev_metric: DevMetric::Accuracy,
            target_metric: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.epochs == 0 {
            return fail("train.epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("train.batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("train.learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.patience == 0 {
            return fail("train.patience must be at least 1".into());
        }
        if self.refresh_period == 0 {
            return fail("train.refresh_period must be at least 1".into());
        }
        if self.unlabeled_per_labeled == 0 {
            return fail("train.unlabeled_per_labeled must be at least 1".into());
        }
        if !(self.anneal_start > 0.0 && self.anneal_start <= 1.0) {
            return fail(format!("train.anneal_start must lie in (0, 1], got {}", self.anneal_start));
        }
        let valid_alpha = |a: f64| a >= 0.0 && a.is_finite();
        if let Some(a) = self.alpha.filter(|a| !valid_alpha(*a)) {
            return fail(format!("train.alpha must be finite and non-negative, got {a}"));
        }
        if self.alpha_grid.iter().any(|a| !(valid_alpha(*a) && *a > 0.0)) {
            return fail("train.alpha_grid entries must be positive".into());
        }
        if let Some(p) = self.alpha_pretrain {
            if !valid_alpha(p) || p == 0.0 {
                return fail(format!("train.alpha_pretrain must be positive, got {p}"));
            }
            if let Some(a) = self.alpha {
                if p > a {
                    return fail(format!("train.alpha_pretrain ({p}) must not exceed train.alpha ({a})"));
                }
            }
        }
        Ok(())
    }

    /// Candidate trade-off weights for a run.
    pub fn alpha_candidates(&self, has_unlabeled: bool) -> Vec<f64> {
        match self.alpha {
            Some(a) => vec![a],
            None if has_unlabeled => self.alpha_grid.clone(),
            None => vec![0.0],
        }
    }

    fn optimizer_settings(&self) -> OptimizerSettings {
        match self.optimizer {
            OptimizerKind::Adam => OptimizerSettings::adam(self.learning_rate),
            OptimizerKind::Sgd => OptimizerSettings::sgd(self.learning_rate),
        }
    }
}

/// Sentences a run trains and selects on. An empty `dev` set means model
/// selection uses the labeled training sentences.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub labeled: &'a [Sentence],
    pub unlabeled: &'a [Sentence],
    pub dev: &'a [Sentence],
    pub labels: &'a Vocab,
}

/// Position of a ChaCha8 generator, enough to resume it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub alpha: f64,
    /// KL weight at the last step of the epoch.
    pub kl_weight: f64,
    pub global_step: usize,
    pub labeled_batches: usize,
    pub unlabeled_batches: usize,
    /// Mean sentence objective over all batches.
    pub loss: f64,
    /// Mean classification loss per labeled sentence.
    pub classification: f64,
    /// Mean ELBO per sentence, when computed.
    pub elbo: Option<f64>,
    /// Mean total KL per sentence, when computed.
    pub kl: Option<f64>,
    pub prior_refreshed: bool,
    pub dev: EvalReport,
    pub dev_metric: f64,
    pub improved: bool,
}

/// State at the best development epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub alpha: f64,
    pub params: ParamSet,
    pub priors: PriorStore,
    pub optimizer: Optimizer,
    pub rng: RngState,
    pub stopped_early: bool,
}

/// Visits a pool in freshly shuffled passes.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(len: usize) -> Self {
        Cycler {
            order: (0..len).collect(),
            pos: len,
        }
    }

    /// Up to `size` indices; a batch never spans two passes.
    fn next(&mut self, size: usize, rng: &mut ChaCha8Rng) -> &[usize] {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        let start = self.pos;
        self.pos = (start + size).min(self.order.len());
        &self.order[start..self.pos]
    }
}

/// Labeled and unlabeled optimizer steps per epoch. An epoch covers the
/// larger pool once (at the configured ratio), cycling the smaller one.
pub fn batches_per_epoch(labeled: usize, unlabeled: usize, config: &TrainConfig) -> (usize, usize) {
    let bs = config.batch_size;
    let lab = labeled.div_ceil(bs);
    if unlabeled == 0 {
        return (lab, 0);
    }
    let r = config.unlabeled_per_labeled;
    let unl = unlabeled.div_ceil(bs);
    let per_epoch = lab.max(unl.div_ceil(r));
    (per_epoch, per_epoch * r)
}

#[derive(Default)]
struct EpochStats {
    loss: f64,
    sentences: usize,
    classification: f64,
    labeled_sentences: usize,
    elbo: f64,
    kl: f64,
    elbo_sentences: usize,
}

struct Step<'a> {
    model: &'a mut VslModel,
    priors: &'a PriorStore,
    grads: &'a mut GradStore,
    optimizer: &'a mut Optimizer,
    sample_rng: &'a mut ChaCha8Rng,
    data: &'a [Sentence],
}

impl Step<'_> {
    fn run(&mut self, batch: &[usize], opts: &LossOptions, stats: &mut EpochStats) -> Result<()> {
        self.grads.zero_grad();
        for &i in batch {
            let s = &self.data[i];
            let mut tape = Tape::with_params(&self.model.params);
            let out = self.model.sentence_loss(&mut tape, s, self.priors, opts, self.sample_rng)?;
            tape.backward(out.loss, self.grads)?;
            stats.loss += tape.scalar_value(out.loss)?;
            stats.sentences += 1;
            if s.is_labeled() {
                stats.classification += out.classification;
                stats.labeled_sentences += 1;
            }
            if !out.steps.is_empty() {
                stats.elbo += out.elbo();
                stats.kl += out.steps.iter().map(|st| st.kl_z + st.kl_y.unwrap_or(0.0)).sum::<f64>();
                stats.elbo_sentences += 1;
            }
        }
        self.grads.scale(1.0 / batch.len() as f64);
        self.optimizer.step(&mut self.model.params, &self.grads)
    }
}

/// Trains `model` in place with trade-off weight `alpha` and leaves it at the
/// best development epoch. `observe` sees every epoch record as it is made.
pub fn train_with(
    model: &mut VslModel,
    priors: PriorStore,
    data: TrainData<'_>,
    config: &TrainConfig,
    alpha: f64,
    phase: Phase,
    observe: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.labeled.is_empty() {
        return Err(Error::invalid("training needs at least one labeled sentence"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be finite and non-negative, got {alpha}")));
    }
    if !data.unlabeled.is_empty() && alpha == 0.0 {
        return Err(Error::invalid(
            "unlabeled sentences were given but alpha is 0, so they would be ignored",
        ));
    }
    if !data.unlabeled.is_empty() && !model.variant().has_decoder() {
        return Err(Error::invalid(format!("{} cannot use unlabeled sentences", model.variant())));
    }
    if let Some(s) = data.unlabeled.iter().find(|s| s.is_labeled()) {
        return Err(Error::invalid(format!("unlabeled pool holds labeled sentence {}", s.instance_index)));
    }
    if let Some(s) = data.labeled.iter().find(|s| !s.is_labeled()) {
        return Err(Error::invalid(format!("labeled pool holds unlabeled sentence {}", s.instance_index)));
    }
    let dev = if data.dev.is_empty() { data.labeled } else { data.dev };

    let (lab_batches, unl_batches) = batches_per_epoch(data.labeled.len(), data.unlabeled.len(), config);
    let steps_per_epoch = lab_batches + unl_batches;
    let anneal = if config.anneal_ramp_epochs == 0 {
        AnnealSchedule::constant()
    } else {
        AnnealSchedule::new(config.anneal_start, config.anneal_ramp_epochs * steps_per_epoch)?
    };

    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(1);
    let mut sample_rng = ChaCha8Rng::seed_from_u64(config.seed);
    sample_rng.set_stream(2);

    // labeled and unlabeled sentences share one index space for batching
    let pool: Vec<Sentence> = data.labeled.iter().chain(data.unlabeled).cloned().collect();
    let n_lab = data.labeled.len();
    let mut lab_cycle = Cycler::new(n_lab);
    let mut unl_cycle = Cycler::new(data.unlabeled.len());

    let mut priors = priors;
    let mut optimizer = Optimizer::new(config.optimizer_settings(), &model.params)?;
    let mut grads = GradStore::for_params(&model.params);
    let mut history = Vec::new();
    let mut best: Option<TrainOutcome> = None;
    let mut since_best = 0;
    let mut global_step = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.epochs {
        let mut stats = EpochStats::default();
        let mut kl_weight = anneal.weight(global_step);
        let mut lab_done = 0;
        let mut unl_done = 0;
        {
            let mut step = Step {
                model,
                priors: &priors,
                grads: &mut grads,
                optimizer: &mut optimizer,
                sample_rng: &mut sample_rng,
                data: &pool,
            };
            for _ in 0..lab_batches {
                kl_weight = anneal.weight(global_step);
                let batch = lab_cycle.next(config.batch_size, &mut data_rng).to_vec();
                step.run(&batch, &LossOptions::train(alpha, kl_weight), &mut stats)?;
                global_step += 1;
                lab_done += 1;
                for _ in 0..unl_batches / lab_batches {
                    kl_weight = anneal.weight(global_step);
                    let batch: Vec<usize> = unl_cycle
                        .next(config.batch_size, &mut data_rng)
                        .iter()
                        .map(|i| i + n_lab)
                        .collect();
                    step.run(&batch, &LossOptions::train(alpha, kl_weight), &mut stats)?;
                    global_step += 1;
                    unl_done += 1;
                }
            }
        }

        let refresh = alpha > 0.0 && model.variant().is_variational() && priors.due(epoch);
        if refresh {
            refresh_priors(&mut priors, model, data.labeled, epoch)?;
            refresh_priors(&mut priors, model, data.unlabeled, epoch)?;
        }

        let report = evaluate(model, dev, data.labels, config.dev_metric)?;
        let metric = report.metric(config.dev_metric);
        let improved = best.as_ref().is_none_or(|b| metric > b.best_metric);
        let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        let record = EpochRecord {
            phase,
            epoch,
            alpha,
            kl_weight,
            global_step,
            labeled_batches: lab_done,
            unlabeled_batches: unl_done,
            loss: per(stats.loss, stats.sentences),
            classification: per(stats.classification, stats.labeled_sentences),
            elbo: (stats.elbo_sentences > 0).then(|| per(stats.elbo, stats.elbo_sentences)),
            kl: (stats.elbo_sentences > 0 && model.variant().is_variational())
                .then(|| per(stats.kl, stats.elbo_sentences)),
            prior_refreshed: refresh,
            dev: report,
            dev_metric: metric,
            improved,
        };
        log::info!(
            "{:?} epoch {epoch}: loss {:.4} dev {:.4}{}",
            phase,
            record.loss,
            metric,
            if improved { " *" } else { "" }
        );
        observe(&record)?;
        history.push(record);

        if improved {
            since_best = 0;
            best = Some(TrainOutcome {
                history: Vec::new(),
                best_epoch: epoch,
                best_metric: metric,
                alpha,
                params: model.params.clone(),
                priors: priors.clone(),
                optimizer: optimizer.clone(),
                rng: RngState::of(&sample_rng),
                stopped_early: false,
            });
        } else {
            since_best += 1;
        }
        if config.target_metric.is_some_and(|t| metric >= t) {
            break;
        }
        if since_best >= config.patience {
            stopped_early = epoch < config.epochs;
            break;
        }
    }

    let mut outcome = best.expect("at least one epoch ran");
    model.params.copy_values_from(&outcome.params)?;
    outcome.history = history;
    outcome.stopped_early = stopped_early;
    Ok(outcome)
}

pub fn train(
    model: &mut VslModel,
    priors: PriorStore,
    data: TrainData<'_>,
    config: &TrainConfig,
    alpha: f64,
) -> Result<TrainOutcome> {
    train_with(model, priors, data, config, alpha, Phase::Main, &mut |_| Ok(()))
}

/// Seed of the prior-pretraining phase, distinct from the run seed so the
/// second phase starts exactly like a plain run.
pub fn pretrain_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartOutcome {
    pub pretrain: TrainOutcome,
    pub main: TrainOutcome,
    /// Snapshots carried into the second phase.
    pub inherited_priors: usize,
}

/// Learns priors with `alpha_pretrain`, then trains a freshly initialized
/// model (built from the run seed) with `alpha` against those priors.
pub fn warm_start_train(
    build: &dyn Fn(u64) -> Result<VslModel>,
    data: TrainData<'_>,
    config: &TrainConfig,
    alpha: f64,
    observe: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<(VslModel, WarmStartOutcome)> {
    let alpha_pretrain = config
        .alpha_pretrain
        .ok_or_else(|| Error::invalid("warm start needs train.alpha_pretrain"))?;
    if alpha_pretrain > alpha {
        return Err(Error::invalid(format!(
            "alpha_pretrain ({alpha_pretrain}) must not exceed alpha ({alpha})"
        )));
    }
    let pre_config = TrainConfig {
        seed: pretrain_seed(config.seed),
        ..config.clone()
    };
    let mut pre_model = build(pre_config.seed)?;
    let priors = pre_model.new_prior_store(config.refresh_period)?;
    let pretrain = train_with(&mut pre_model, priors, data, &pre_config, alpha_pretrain, Phase::Pretrain, observe)?;

    let mut model = build(config.seed)?;
    let inherited = pretrain.priors.clone();
    let inherited_priors = inherited.len();
    let main = train_with(&mut model, inherited, data, config, alpha, Phase::Main, observe)?;
    Ok((
        model,
        WarmStartOutcome {
            pretrain,
            main,
            inherited_priors,
        },
    ))
}
