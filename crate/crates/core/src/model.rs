//! The labeler family: a BiGRU baseline and the variational sequential
//! labelers with one Gaussian latent (G), two independent latents (GG-Flat)
//! or a latent `z` conditioned on a label latent `y` (GG-Hier), plus their
//! deterministic no-VR counterparts.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Var};
use crate::data::Sentence;
use crate::error::{Error, Result};
use crate::nn::{BiGruEncoder, EmbeddingTable, FeedForward, TokenEmbedder};
use crate::tensor::Tensor;
use crate::variational::{
    kl_diag_gaussians, sample_latent, GaussianParams, GaussianVar, LatentVar, PosteriorHead, PosteriorSnapshot,
    PriorStore, SampleMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Baseline,
    VslG,
    VslGgFlat,
    VslGgHier,
    VslGgHierClfOnZ,
    NoVrG,
    NoVrGgFlat,
    NoVrGgHier,
}

/// How the latent variables at one position relate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentLayout {
    /// A single `z`.
    Single,
    /// `y` and `z` both read `h`; the decoder reads `[z ; y]`.
    Flat,
    /// `y` reads `h`, `z` reads `[h ; y]`; the decoder reads `z`.
    Hierarchical,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::VslG,
        Variant::VslGgFlat,
        Variant::VslGgHier,
        Variant::VslGgHierClfOnZ,
        Variant::NoVrG,
        Variant::NoVrGgFlat,
        Variant::NoVrGgHier,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::VslG => "vsl-g",
            Variant::VslGgFlat => "vsl-gg-flat",
            Variant::VslGgHier => "vsl-gg-hier",
            Variant::VslGgHierClfOnZ => "vsl-gg-hier-clf-on-z",
            Variant::NoVrG => "no-vr-g",
            Variant::NoVrGgFlat => "no-vr-gg-flat",
            Variant::NoVrGgHier => "no-vr-gg-hier",
        }
    }

    pub fn layout(self) -> Option<LatentLayout> {
        match self {
            Variant::Baseline => None,
            Variant::VslG | Variant::NoVrG => Some(LatentLayout::Single),
            Variant::VslGgFlat | Variant::NoVrGgFlat => Some(LatentLayout::Flat),
            Variant::VslGgHier | Variant::VslGgHierClfOnZ | Variant::NoVrGgHier => Some(LatentLayout::Hierarchical),
        }
    }

    /// Stochastic latents with KL terms.
    pub fn is_variational(self) -> bool {
        matches!(
            self,
            Variant::VslG | Variant::VslGgFlat | Variant::VslGgHier | Variant::VslGgHierClfOnZ
        )
    }

    pub fn has_y(self) -> bool {
        matches!(self.layout(), Some(LatentLayout::Flat | LatentLayout::Hierarchical))
    }

    pub fn has_decoder(self) -> bool {
        self.layout().is_some()
    }

    /// Which latent the classifier reads (`None` for the baseline, which reads `h`).
    pub fn classifier_input(self) -> Option<LatentVar> {
        match self {
            Variant::Baseline => None,
            Variant::VslG | Variant::NoVrG | Variant::VslGgHierClfOnZ => Some(LatentVar::Z),
            _ => Some(LatentVar::Y),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::invalid(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// Architecture settings. Loss weights and schedules live with training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub word_dim: usize,
    pub char_dim: usize,
    /// Per direction.
    pub char_hidden: usize,
    /// Per direction.
    pub word_hidden: usize,
    pub z_dim: usize,
    pub y_dim: usize,
    pub decoder_hidden: usize,
    /// Defaults to frozen for variational labelers with pretrained vectors
    /// and trainable otherwise.
    pub freeze_word_embeddings: Option<bool>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::VslGgHier,
            word_dim: 100,
            char_dim: 25,
            char_hidden: 25,
            word_hidden: 100,
            z_dim: 50,
            y_dim: 25,
            decoder_hidden: 100,
            freeze_word_embeddings: None,
        }
    }
}

impl ModelConfig {
    /// A tiny configuration for tests and smoke runs.
    pub fn tiny(variant: Variant) -> Self {
        ModelConfig {
            variant,
            word_dim: 6,
            char_dim: 4,
            char_hidden: 3,
            word_hidden: 5,
            z_dim: 4,
            y_dim: 3,
            decoder_hidden: 6,
            freeze_word_embeddings: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_hidden", self.char_hidden),
            ("word_hidden", self.word_hidden),
            ("z_dim", self.z_dim),
            ("y_dim", self.y_dim),
            ("decoder_hidden", self.decoder_hidden),
        ];
        match dims.iter().find(|(_, d)| *d == 0) {
            Some((name, _)) => Err(Error::invalid(format!("model.{name} must be positive"))),
            None => Ok(()),
        }
    }

    fn word_embeddings_trainable(&self, pretrained: bool) -> bool {
        match self.freeze_word_embeddings {
            Some(freeze) => !freeze,
            None => !(pretrained && self.variant.is_variational()),
        }
    }
}

/// Vocabulary sizes a network is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub words: usize,
    pub chars: usize,
    pub labels: usize,
}

/// Layer layout of a model; parameter values live in a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VslNetwork {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub embedder: TokenEmbedder,
    pub encoder: BiGruEncoder,
    pub y_head: Option<PosteriorHead>,
    pub z_head: Option<PosteriorHead>,
    pub decoder: Option<FeedForward>,
    pub classifier: FeedForward,
}

/// Per-position loss terms, detached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    /// `-log f(l_t | .)`, present for labeled positions.
    pub classification: Option<f64>,
    /// `log p(x_t | .)` at the observed word.
    pub reconstruction: f64,
    pub kl_z: f64,
    pub kl_y: Option<f64>,
    /// Weight applied to the KL terms.
    pub kl_weight: f64,
    /// `reconstruction - kl_weight * (kl_z + kl_y)`.
    pub elbo: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub alpha: f64,
    pub kl_weight: f64,
    pub mode: SampleMode,
    /// Compute the reconstruction and KL terms even when `alpha` is zero.
    pub always_elbo: bool,
}

impl LossOptions {
    pub fn train(alpha: f64, kl_weight: f64) -> Self {
        LossOptions {
            alpha,
            kl_weight,
            mode: SampleMode::Train,
            always_elbo: false,
        }
    }

    fn needs_elbo(&self) -> bool {
        self.always_elbo || self.alpha > 0.0
    }
}

/// Sentence objective `sum_t [C_t - alpha * U_t]` on the tape, with its parts.
#[derive(Debug, Clone)]
pub struct SentenceLoss {
    pub loss: Var,
    /// Summed classification loss; zero for unlabeled sentences.
    pub classification: f64,
    /// Empty when the ELBO was not computed or the model has no latents.
    pub steps: Vec<StepLosses>,
}

impl SentenceLoss {
    pub fn elbo(&self) -> f64 {
        self.steps.iter().map(|s| s.elbo).sum()
    }
}

/// Latent means and predictions for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub hidden: Vec<Vec<f64>>,
    pub y: Option<Vec<Vec<f64>>>,
    pub z: Option<Vec<Vec<f64>>>,
    pub predicted: Vec<usize>,
}

struct PositionLatents {
    y: Option<Var>,
    z: Option<Var>,
    y_q: Option<GaussianVar>,
    z_q: Option<GaussianVar>,
}

impl VslNetwork {
    /// Registers all parameters in `params`. `word_init` replaces the random
    /// word table when given.
    pub fn build<R: Rng>(
        config: &ModelConfig,
        sizes: VocabSizes,
        params: &mut ParamSet,
        word_init: Option<Tensor>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if sizes.words < 2 || sizes.chars < 2 || sizes.labels == 0 {
            return Err(Error::invalid(format!("vocabularies too small: {sizes:?}")));
        }
        let variant = config.variant;
        let trainable = config.word_embeddings_trainable(word_init.is_some());
        let words = EmbeddingTable::new(params, "embed.words", sizes.words, config.word_dim, trainable, word_init, rng)?;
        let chars = EmbeddingTable::new(params, "embed.chars", sizes.chars, config.char_dim, true, None, rng)?;
        let char_encoder = BiGruEncoder::new(params, "embed.char_gru", config.char_dim, config.char_hidden, rng);
        let embedder = TokenEmbedder {
            words,
            chars,
            char_encoder,
        };
        let encoder = BiGruEncoder::new(params, "encoder", embedder.output_dim(), config.word_hidden, rng);
        let h_dim = encoder.output_dim();
        let stochastic = variant.is_variational();

        let (y_head, z_head, decoder_in) = match variant.layout() {
            None => (None, None, 0),
            Some(LatentLayout::Single) => (
                None,
                Some(PosteriorHead::new(params, "q_z", h_dim, config.z_dim, stochastic, rng)),
                config.z_dim,
            ),
            Some(LatentLayout::Flat) => (
                Some(PosteriorHead::new(params, "q_y", h_dim, config.y_dim, stochastic, rng)),
                Some(PosteriorHead::new(params, "q_z", h_dim, config.z_dim, stochastic, rng)),
                config.z_dim + config.y_dim,
            ),
            Some(LatentLayout::Hierarchical) => (
                Some(PosteriorHead::new(params, "q_y", h_dim, config.y_dim, stochastic, rng)),
                Some(PosteriorHead::new(params, "q_z", h_dim + config.y_dim, config.z_dim, stochastic, rng)),
                config.z_dim,
            ),
        };
        let decoder = variant.has_decoder().then(|| {
            FeedForward::new(
                params,
                "decoder",
                &[decoder_in, config.decoder_hidden, config.decoder_hidden, sizes.words],
                rng,
            )
        });
        let clf_in = match variant.classifier_input() {
            None => h_dim,
            Some(LatentVar::Y) => config.y_dim,
            Some(LatentVar::Z) => config.z_dim,
        };
        let classifier = FeedForward::new(params, "classifier", &[clf_in, sizes.labels], rng);
        Ok(VslNetwork {
            config: config.clone(),
            sizes,
            embedder,
            encoder,
            y_head,
            z_head,
            decoder,
            classifier,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Latent variables tracked by the learned prior, with their sizes.
    pub fn prior_variables(&self) -> Vec<(LatentVar, usize)> {
        if !self.variant().is_variational() {
            return Vec::new();
        }
        let mut vars = vec![(LatentVar::Z, self.config.z_dim)];
        if self.variant().has_y() {
            vars.push((LatentVar::Y, self.config.y_dim));
        }
        vars
    }

    /// `h_t` for every position.
    pub fn encode(&self, tape: &mut Tape<'_>, s: &Sentence) -> Result<Vec<Var>> {
        s.validate()?;
        let inputs = s
            .word_ids
            .iter()
            .zip(&s.char_ids)
            .map(|(&w, c)| self.embedder.embed_token(tape, w, c))
            .collect::<Result<Vec<_>>>()?;
        self.encoder.encode(tape, &inputs)
    }

    fn heads(&self) -> Result<(Option<&PosteriorHead>, &PosteriorHead)> {
        let z = self
            .z_head
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("{} has no latent variables", self.variant())))?;
        Ok((self.y_head.as_ref(), z))
    }

    /// Latents at one position. Stochastic variants sample in `mode`; the
    /// deterministic ones use point vectors.
    fn latents<R: Rng>(&self, tape: &mut Tape<'_>, h: Var, mode: SampleMode, rng: &mut R) -> Result<PositionLatents> {
        let (y_head, z_head) = self.heads()?;
        let hier = self.variant().layout() == Some(LatentLayout::Hierarchical);
        if !self.variant().is_variational() {
            let y = y_head.map(|head| head.point(tape, h)).transpose()?;
            let z_in = match y {
                Some(y) if hier => tape.concat(&[h, y])?,
                _ => h,
            };
            let z = z_head.point(tape, z_in)?;
            return Ok(PositionLatents {
                y,
                z: Some(z),
                y_q: None,
                z_q: None,
            });
        }
        let (y, y_q) = match y_head {
            Some(head) => {
                let q = head.posterior(tape, h)?;
                (Some(sample_latent(tape, &q, mode, rng)?), Some(q))
            }
            None => (None, None),
        };
        let z_in = match y {
            Some(y) if hier => tape.concat(&[h, y])?,
            _ => h,
        };
        let z_q = z_head.posterior(tape, z_in)?;
        let z = sample_latent(tape, &z_q, mode, rng)?;
        Ok(PositionLatents {
            y,
            z: Some(z),
            y_q,
            z_q: Some(z_q),
        })
    }

    fn classifier_input(&self, h: Var, lat: Option<&PositionLatents>) -> Result<Var> {
        match (self.variant().classifier_input(), lat) {
            (None, _) => Ok(h),
            (Some(LatentVar::Y), Some(l)) => l.y.ok_or_else(|| Error::invalid("missing y latent")),
            (Some(LatentVar::Z), Some(l)) => l.z.ok_or_else(|| Error::invalid("missing z latent")),
            (Some(_), None) => Err(Error::invalid("latents were not computed")),
        }
    }

    fn decoder_input(&self, tape: &mut Tape<'_>, lat: &PositionLatents) -> Result<Var> {
        let z = lat.z.ok_or_else(|| Error::invalid("missing z latent"))?;
        match (self.variant().layout(), lat.y) {
            (Some(LatentLayout::Flat), Some(y)) => tape.concat(&[z, y]),
            _ => Ok(z),
        }
    }

    /// Training objective of one sentence. Labeled sentences contribute
    /// `sum_t [C_t - alpha * U_t]`; unlabeled ones `-alpha * sum_t U_t`. For the
    /// no-VR variants `U_t` is the reconstruction log-likelihood alone.
    pub fn sentence_loss<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        s: &Sentence,
        priors: &PriorStore,
        opts: &LossOptions,
        rng: &mut R,
    ) -> Result<SentenceLoss> {
        let variant = self.variant();
        if !(opts.alpha >= 0.0 && opts.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be finite and non-negative, got {}", opts.alpha)));
        }
        if variant == Variant::Baseline && !s.is_labeled() {
            return Err(Error::invalid("the baseline cannot train on unlabeled sentences"));
        }
        let hs = self.encode(tape, s)?;
        let labels = s.label_ids.as_deref();
        let elbo = variant.has_decoder() && opts.needs_elbo();
        let mut totals = Vec::with_capacity(hs.len());
        let mut steps = Vec::new();
        let mut classification = 0.0;

        for (t, &h) in hs.iter().enumerate() {
            let lat = match variant.layout() {
                Some(_) => Some(self.latents(tape, h, opts.mode, rng)?),
                None => None,
            };
            let mut terms: Vec<Var> = Vec::with_capacity(2);
            let mut clf_value = None;
            if let Some(labels) = labels {
                let x = self.classifier_input(h, lat.as_ref())?;
                let c = self.classifier.nll(tape, x, labels[t])?;
                clf_value = Some(tape.scalar_value(c)?);
                classification += clf_value.unwrap_or(0.0);
                terms.push(c);
            }
            if let (true, Some(lat)) = (elbo, lat.as_ref()) {
                let decoder = self.decoder.as_ref().expect("latent variants have a decoder");
                let dec_in = self.decoder_input(tape, lat)?;
                let rec_nll = decoder.nll(tape, dec_in, s.word_ids[t])?;
                let mut neg_elbo = rec_nll;
                let mut kl_z = 0.0;
                let mut kl_y = None;
                if variant.is_variational() {
                    let z_q = lat.z_q.as_ref().expect("variational latents carry posteriors");
                    let prior_z = priors.lookup(s.instance_index, t, LatentVar::Z)?;
                    let kz = kl_diag_gaussians(tape, z_q, &prior_z)?;
                    kl_z = tape.scalar_value(kz)?;
                    let mut kl = kz;
                    if let Some(y_q) = lat.y_q.as_ref() {
                        let prior_y = priors.lookup(s.instance_index, t, LatentVar::Y)?;
                        let ky = kl_diag_gaussians(tape, y_q, &prior_y)?;
                        kl_y = Some(tape.scalar_value(ky)?);
                        kl = tape.add(kl, ky)?;
                    }
                    let weighted = tape.scale(kl, opts.kl_weight)?;
                    neg_elbo = tape.add(neg_elbo, weighted)?;
                }
                let reconstruction = -tape.scalar_value(rec_nll)?;
                let kl_sum = kl_z + kl_y.unwrap_or(0.0);
                steps.push(StepLosses {
                    classification: clf_value,
                    reconstruction,
                    kl_z,
                    kl_y,
                    kl_weight: if variant.is_variational() { opts.kl_weight } else { 0.0 },
                    elbo: reconstruction - if variant.is_variational() { opts.kl_weight * kl_sum } else { 0.0 },
                });
                if opts.alpha > 0.0 {
                    terms.push(tape.scale(neg_elbo, opts.alpha)?);
                }
            }
            let total = match terms.as_slice() {
                [] => None,
                [one] => Some(*one),
                [a, b] => Some(tape.add(*a, *b)?),
                _ => unreachable!("at most two terms per position"),
            };
            totals.extend(total);
        }
        let loss = if totals.is_empty() {
            tape.constant(Tensor::from_parts(vec![1], vec![0.0]))
        } else {
            let all = tape.concat(&totals)?;
            tape.sum(all)
        };
        Ok(SentenceLoss {
            loss,
            classification,
            steps,
        })
    }

    /// Classifier log-probabilities at every position, latents at their means.
    pub fn label_log_probs(&self, tape: &mut Tape<'_>, s: &Sentence) -> Result<Vec<Var>> {
        let hs = self.encode(tape, s)?;
        let mut rng = NoRandomness;
        hs.into_iter()
            .map(|h| {
                let lat = match self.variant().layout() {
                    Some(_) => Some(self.latents(tape, h, SampleMode::Eval, &mut rng)?),
                    None => None,
                };
                let x = self.classifier_input(h, lat.as_ref())?;
                self.classifier.log_probs(tape, x)
            })
            .collect()
    }
}

/// Evaluation-mode sampling never draws; this makes that explicit.
struct NoRandomness;

impl rand::RngCore for NoRandomness {
    fn next_u32(&mut self) -> u32 {
        unreachable!("evaluation mode does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("evaluation mode does not sample")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("evaluation mode does not sample")
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// A network together with its parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct VslModel {
    pub net: VslNetwork,
    pub params: ParamSet,
}

impl VslModel {
    pub fn new(config: &ModelConfig, sizes: VocabSizes, word_init: Option<Tensor>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let net = VslNetwork::build(config, sizes, &mut params, word_init, &mut rng)?;
        Ok(VslModel { net, params })
    }

    pub fn variant(&self) -> Variant {
        self.net.variant()
    }

    pub fn new_prior_store(&self, refresh_period: usize) -> Result<PriorStore> {
        PriorStore::new(&self.net.prior_variables(), refresh_period)
    }

    pub fn sentence_loss<R: Rng>(
        &self,
        tape: &mut Tape<'_>,
        s: &Sentence,
        priors: &PriorStore,
        opts: &LossOptions,
        rng: &mut R,
    ) -> Result<SentenceLoss> {
        self.net.sentence_loss(tape, s, priors, opts, rng)
    }

    /// Argmax label per position with latents at their means.
    pub fn predict_labels(&self, s: &Sentence) -> Result<Vec<usize>> {
        let mut tape = Tape::with_params(&self.params);
        let lps = self.net.label_log_probs(&mut tape, s)?;
        Ok(lps.into_iter().map(|v| argmax(tape.value(v).data())).collect())
    }

    /// Encoder states, latent means and predictions for export.
    pub fn latent_means(&self, s: &Sentence) -> Result<LatentRecord> {
        let mut tape = Tape::with_params(&self.params);
        let hs = self.net.encode(&mut tape, s)?;
        let vec_of = |tape: &Tape<'_>, v: Var| tape.value(v).data().to_vec();
        let mut hidden = Vec::new();
        let mut ys = Vec::new();
        let mut zs = Vec::new();
        let mut predicted = Vec::new();
        for h in hs {
            hidden.push(vec_of(&tape, h));
            let lat = match self.variant().layout() {
                Some(_) => Some(self.net.latents(&mut tape, h, SampleMode::Eval, &mut NoRandomness)?),
                None => None,
            };
            if let Some(l) = &lat {
                ys.extend(l.y.map(|y| vec_of(&tape, y)));
                zs.extend(l.z.map(|z| vec_of(&tape, z)));
            }
            let x = self.net.classifier_input(h, lat.as_ref())?;
            let lp = self.net.classifier.log_probs(&mut tape, x)?;
            predicted.push(argmax(tape.value(lp).data()));
        }
        Ok(LatentRecord {
            hidden,
            y: self.variant().has_y().then_some(ys),
            z: self.variant().has_decoder().then_some(zs),
            predicted,
        })
    }
}

impl PosteriorSnapshot for VslModel {
    /// Posteriors with every sample replaced by its mean, so the hierarchical
    /// `z` posterior is taken at the mean of `y`.
    fn snapshot_posteriors(&self, s: &Sentence) -> Result<Vec<(LatentVar, Vec<GaussianParams>)>> {
        if !self.variant().is_variational() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::with_params(&self.params);
        let hs = self.net.encode(&mut tape, s)?;
        let mut ys = Vec::new();
        let mut zs = Vec::new();
        for h in hs {
            let lat = self.net.latents(&mut tape, h, SampleMode::Eval, &mut NoRandomness)?;
            if let Some(q) = lat.y_q {
                ys.push(q.to_params(&tape));
            }
            zs.push(lat.z_q.expect("variational latents carry posteriors").to_params(&tape));
        }
        let mut out = vec![(LatentVar::Z, zs)];
        if self.variant().has_y() {
            out.push((LatentVar::Y, ys));
        }
        Ok(out)
    }
}
