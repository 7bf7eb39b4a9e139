//! Acceptance checks for the whole system, one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p vsl-cli --test acceptance`. Setting
//! `ACCEPTANCE_ONLY=3,4` restricts the run to those criteria.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;
use vsl_core::autodiff::{
    gradient_check, gradient_check_params, ParamSet, Tape, Var, DEFAULT_EPSILON,
};
use vsl_core::data::{
    write_conll, Corpus, RawSentence, Sentence, SplitManifest, SyntheticConfig, SyntheticGrammar,
    VocabOptions,
};
use vsl_core::model::LossOptions;
use vsl_core::nn::{FeedForward, Linear};
use vsl_core::train::{
    evaluate_tokens, span_scores, train_with, Checkpoint, EpochRecord, Phase, TrainConfig,
    TrainData,
};
use vsl_core::variational::{
    kl_closed_form, refresh_priors, GaussianParams, LatentVar, PosteriorHead, PriorStore,
    SampleMode,
};
use vsl_core::{ModelConfig, Tensor, Variant, VocabSizes, VslModel};

type Res<T> = Result<T, String>;

#[derive(Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    SoftFail,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Outcome {
    Outcome {
        status: if pass { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- shared data

struct Data {
    corpus: Corpus,
    dev: Vec<Sentence>,
}

impl Data {
    fn synthetic(config: SyntheticConfig, n_train: usize, n_dev: usize) -> Res<Self> {
        let grammar = SyntheticGrammar::new(config).map_err(err)?;
        let train = grammar.sample(n_train, 0);
        let dev = grammar.sample(n_dev, 1);
        let corpus = Corpus::build(
            &train,
            &[],
            &dev,
            &VocabOptions::default(),
            SplitManifest::supervised(n_train),
        )
        .map_err(err)?;
        let dev = corpus
            .vocabs
            .encode_all(&dev, corpus.num_instances())
            .map_err(err)?;
        Ok(Data { corpus, dev })
    }

    fn sizes(&self) -> VocabSizes {
        let v = &self.corpus.vocabs;
        VocabSizes {
            words: v.words.len(),
            chars: v.chars.len(),
            labels: v.labels.len(),
        }
    }
}

fn model_config(variant: Variant, dims: [usize; 7]) -> ModelConfig {
    let [word_dim, char_dim, char_hidden, word_hidden, z_dim, y_dim, decoder_hidden] = dims;
    ModelConfig {
        variant,
        word_dim,
        char_dim,
        char_hidden,
        word_hidden,
        z_dim,
        y_dim,
        decoder_hidden,
        freeze_word_embeddings: None,
    }
}

/// Trade-off weight used for every variant that has a decoder.
const LATENT_ALPHA: f64 = 0.1;

fn alpha_for(variant: Variant) -> f64 {
    if variant.has_decoder() {
        LATENT_ALPHA
    } else {
        0.0
    }
}

fn fit(
    model: &mut VslModel,
    labeled: &[Sentence],
    unlabeled: &[Sentence],
    dev: &[Sentence],
    data: &Data,
    config: &TrainConfig,
    alpha: f64,
) -> Res<(vsl_core::train::TrainOutcome, Vec<EpochRecord>)> {
    let priors = model.new_prior_store(config.refresh_period).map_err(err)?;
    let mut history = Vec::new();
    let outcome = train_with(
        model,
        priors,
        TrainData {
            labeled,
            unlabeled,
            dev,
            labels: &data.corpus.vocabs.labels,
        },
        config,
        alpha,
        Phase::Main,
        &mut |r| {
            history.push(r.clone());
            Ok(())
        },
    )
    .map_err(err)?;
    Ok((outcome, history))
}

// ------------------------------------------------------------ 1: gradients

#[derive(Clone, Copy)]
enum Domain {
    Wide,
    Positive,
    AwayFromZero,
}

fn draw(rng: &mut ChaCha8Rng, shape: &[usize], domain: Domain) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| match domain {
            Domain::Wide => rng.random_range(-3.0..3.0),
            Domain::Positive => rng.random_range(0.1..3.0),
            Domain::AwayFromZero => {
                let m = rng.random_range(0.05..2.0);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn weighted_sum(t: &mut Tape<'_>, y: Var, w: &Tensor) -> vsl_core::Result<Var> {
    let w = t.constant(w.clone());
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

type UnaryOp = fn(&mut Tape<'_>, Var) -> vsl_core::Result<Var>;

fn primitive_errors(worst: &mut (f64, String)) -> Res<()> {
    let mut note = |e: f64, name: &str| {
        if e > worst.0 {
            *worst = (e, name.to_string());
        }
    };
    let unary: [(&str, UnaryOp, Domain); 11] = [
        ("sigmoid", |t, x| t.sigmoid(x), Domain::Wide),
        ("tanh", |t, x| t.tanh(x), Domain::Wide),
        ("relu", |t, x| t.relu(x), Domain::AwayFromZero),
        ("exp", |t, x| t.exp(x), Domain::Wide),
        ("log", |t, x| t.log(x), Domain::Positive),
        ("softplus", |t, x| t.softplus(x), Domain::Wide),
        ("softmax", |t, x| t.softmax(x), Domain::Wide),
        ("log_softmax", |t, x| t.log_softmax(x), Domain::Wide),
        ("mul", |t, x| t.mul(x, x), Domain::Wide),
        ("sum", |t, x| Ok(t.sum(x)), Domain::Wide),
        ("mean", |t, x| Ok(t.mean(x)), Domain::Wide),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for (name, op, domain) in unary {
        for _ in 0..30 {
            let shape = vec![rng.random_range(1..7)];
            let point = draw(&mut rng, &shape, domain);
            let w = draw(&mut rng, &shape, Domain::Wide);
            let e = gradient_check(
                |t, x| {
                    let y = op(t, x)?;
                    if t.shape(y) == [1] {
                        let y = t.tanh(y)?;
                        return Ok(y);
                    }
                    weighted_sum(t, y, &w)
                },
                &point,
                DEFAULT_EPSILON,
            )
            .map_err(err)?;
            note(e, name);
        }
    }
    for _ in 0..30 {
        let (m, k, n) = (
            rng.random_range(1..4),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let a = draw(&mut rng, &[m, k], Domain::Wide);
        let b = draw(&mut rng, &[k, n], Domain::Wide);
        let w = draw(&mut rng, &[m, n], Domain::Wide);
        let e = gradient_check(
            |t, x| {
                let bv = t.constant(b.clone());
                let y = t.matmul(x, bv)?;
                weighted_sum(t, y, &w)
            },
            &a,
            DEFAULT_EPSILON,
        )
        .map_err(err)?;
        note(e, "matmul (left)");
        let e = gradient_check(
            |t, x| {
                let av = t.constant(a.clone());
                let y = t.matmul(av, x)?;
                weighted_sum(t, y, &w)
            },
            &b,
            DEFAULT_EPSILON,
        )
        .map_err(err)?;
        note(e, "matmul (right)");
        let other = draw(&mut rng, &[m, n], Domain::Wide);
        let e = gradient_check(
            |t, x| {
                let c = t.constant(other.clone());
                let d = t.sub(c, x)?;
                let y = t.add(d, c)?;
                let y = t.scale(y, 1.7)?;
                weighted_sum(t, y, &w)
            },
            &w,
            DEFAULT_EPSILON,
        )
        .map_err(err)?;
        note(e, "add/sub/scale");
        let left = draw(&mut rng, &[k], Domain::Wide);
        let right = draw(&mut rng, &[n], Domain::Wide);
        let wc = draw(&mut rng, &[k + n], Domain::Wide);
        let e = gradient_check(
            |t, x| {
                let r = t.constant(right.clone());
                let y = t.concat(&[r, x, r])?;
                let y = t.slice(y, n / 2, k + n)?;
                weighted_sum(t, y, &wc)
            },
            &left,
            DEFAULT_EPSILON,
        )
        .map_err(err)?;
        note(e, "concat/slice");
        let logits = draw(&mut rng, &[n + 1], Domain::Wide);
        let target = rng.random_range(0..n + 1);
        let e = gradient_check(|t, x| t.cross_entropy(x, target), &logits, DEFAULT_EPSILON)
            .map_err(err)?;
        note(e, "cross_entropy");
    }
    Ok(())
}

fn tiny_dims() -> [usize; 7] {
    [4, 3, 2, 4, 3, 2, 5]
}

fn tiny_sentence(labeled: bool) -> Sentence {
    Sentence {
        words: vec!["a".into(), "b".into(), "c".into()],
        word_ids: vec![5, 11, 17],
        char_ids: vec![vec![2, 3], vec![4], vec![5, 6, 2]],
        label_ids: labeled.then(|| vec![1, 0, 3]),
        instance_index: 2,
    }
}

fn model_errors(worst: &mut (f64, String)) -> Res<()> {
    let sizes = VocabSizes {
        words: 20,
        chars: 8,
        labels: 4,
    };
    for variant in Variant::ALL {
        for labeled in [true, false] {
            if variant == Variant::Baseline && !labeled {
                continue;
            }
            let mut model =
                VslModel::new(&model_config(variant, tiny_dims()), sizes, None, 7).map_err(err)?;
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            // off the ReLU kinks that zero-initialised biases can sit on
            let ids: Vec<_> = model.params.ids().collect();
            for id in ids {
                for w in model.params.get_mut(id).value.data_mut() {
                    *w += rng.random_range(-0.2..0.2);
                }
            }
            let mut priors = model.new_prior_store(1).map_err(err)?;
            for (var, dim) in model.net.prior_variables() {
                let snaps = (0..3)
                    .map(|_| random_gaussian(&mut rng, dim, 0.5, 0.5..1.5))
                    .collect();
                priors.set(2, var, snaps).map_err(err)?;
            }
            let s = tiny_sentence(labeled);
            let opts = LossOptions::train(0.7, 0.6);
            let net = model.net.clone();
            let report = gradient_check_params(
                &mut model.params,
                |tape| {
                    let mut rng = ChaCha8Rng::seed_from_u64(21);
                    Ok(net.sentence_loss(tape, &s, &priors, &opts, &mut rng)?.loss)
                },
                DEFAULT_EPSILON,
            )
            .map_err(err)?;
            for r in report {
                if r.max_error > worst.0 {
                    *worst = (
                        r.max_error,
                        format!("{variant} labeled={labeled} {}", r.name),
                    );
                }
            }
        }
    }
    Ok(())
}

fn criterion_1() -> Res<Outcome> {
    let start = Instant::now();
    let mut prim = (0.0, String::new());
    primitive_errors(&mut prim)?;
    let mut full = (0.0, String::new());
    model_errors(&mut full)?;
    let elapsed = start.elapsed();
    let pass = prim.0 <= 1e-4 && full.0 <= 1e-4 && elapsed < Duration::from_secs(60);
    Ok(verdict(
        pass,
        format!(
            "primitives max rel err {:.2e} ({}); full losses, 8 variants, max rel err {:.2e} ({}); {:.1}s",
            prim.0,
            prim.1,
            full.0,
            full.1,
            elapsed.as_secs_f64()
        ),
    ))
}

// ----------------------------------------------------------- 2: closed-form KL

fn log_normal(x: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    x.iter()
        .zip(mean)
        .zip(std)
        .map(|((x, m), s)| {
            let u = (x - m) / s;
            -0.5 * u * u - s.ln() - half_log_2pi
        })
        .sum()
}

fn random_gaussian(
    rng: &mut ChaCha8Rng,
    dim: usize,
    mean_range: f64,
    std: std::ops::Range<f64>,
) -> GaussianParams {
    GaussianParams::new(
        (0..dim)
            .map(|_| rng.random_range(-mean_range..mean_range))
            .collect(),
        (0..dim).map(|_| rng.random_range(std.clone())).collect(),
    )
    .expect("valid gaussian")
}

fn criterion_2() -> Res<Outcome> {
    const SAMPLES: usize = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut x = Vec::new();
    for _ in 0..20 {
        let dim = rng.random_range(1..=5);
        let q = random_gaussian(&mut rng, dim, 1.0, 0.5..2.0);
        let p = random_gaussian(&mut rng, dim, 1.0, 0.5..2.0);
        let closed = kl_closed_form(&q, &p).map_err(err)?;
        let mut total = 0.0;
        for _ in 0..SAMPLES {
            x.clear();
            for d in 0..dim {
                let eps: f64 = rng.sample(StandardNormal);
                x.push(q.mean[d] + q.std[d] * eps);
            }
            total += log_normal(&x, &q.mean, &q.std) - log_normal(&x, &p.mean, &p.std);
        }
        worst = worst.max((closed - total / SAMPLES as f64).abs());
    }
    let unit = kl_closed_form(
        &GaussianParams::new(vec![1.0], vec![1.0]).map_err(err)?,
        &GaussianParams::standard(1),
    )
    .map_err(err)?;
    let exact_err = (unit - 0.5).abs();
    Ok(verdict(
        worst <= 1e-2 && exact_err <= 1e-12,
        format!("20 random pairs vs 1e6-sample Monte Carlo: max |diff| {worst:.2e}; KL(N(1,1)||N(0,1)) error {exact_err:.1e}"),
    ))
}

// --------------------------------------------- 3: ELBO vs importance sampling

fn linear(params: &ParamSet, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = params.value(l.weight).data();
    let b = params.value(l.bias).data();
    (0..l.out_dim)
        .map(|j| {
            b[j] + (0..l.in_dim)
                .map(|i| x[i] * w[i * l.out_dim + j])
                .sum::<f64>()
        })
        .collect()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn posterior(params: &ParamSet, head: &PosteriorHead, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mean = linear(params, &head.mean, x);
    let std_layer = head.std.as_ref().expect("stochastic head");
    let std = linear(params, std_layer, x)
        .into_iter()
        .map(|a| softplus(a) + 1e-6)
        .collect();
    (mean, std)
}

fn decoder_log_prob(params: &ParamSet, ff: &FeedForward, x: &[f64], word: usize) -> f64 {
    let mut a = x.to_vec();
    for (i, layer) in ff.layers.iter().enumerate() {
        a = linear(params, layer, &a);
        if i + 1 < ff.layers.len() {
            a.iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
    let m = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    a[word] - lse
}

fn sample_from(rng: &mut ChaCha8Rng, mean: &[f64], std: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(std)
        .map(|(m, s)| {
            let e: f64 = rng.sample(StandardNormal);
            m + s * e
        })
        .collect()
}

/// `log p(x_t)` by importance sampling from the posterior, with the
/// delta-method standard error.
fn log_marginal(
    model: &VslModel,
    priors: &PriorStore,
    s: &Sentence,
    t: usize,
    h: &[f64],
    proposals: usize,
    rng: &mut ChaCha8Rng,
) -> Res<(f64, f64)> {
    let net = &model.net;
    let params = &model.params;
    let decoder = net.decoder.as_ref().ok_or("no decoder")?;
    let z_head = net.z_head.as_ref().ok_or("no z head")?;
    let p_z = priors
        .lookup(s.instance_index, t, LatentVar::Z)
        .map_err(err)?;
    let p_y = match net.y_head {
        Some(_) => Some(
            priors
                .lookup(s.instance_index, t, LatentVar::Y)
                .map_err(err)?,
        ),
        None => None,
    };
    let q_y = net.y_head.as_ref().map(|head| posterior(params, head, h));
    let mut log_w = Vec::with_capacity(proposals);
    for _ in 0..proposals {
        let mut lw = 0.0;
        let z_in = match (&q_y, &p_y) {
            (Some((m, sd)), Some(p)) => {
                let y = sample_from(rng, m, sd);
                lw += log_normal(&y, &p.mean, &p.std) - log_normal(&y, m, sd);
                [h, &y[..]].concat()
            }
            _ => h.to_vec(),
        };
        let (zm, zs) = posterior(params, z_head, &z_in);
        let z = sample_from(rng, &zm, &zs);
        lw += log_normal(&z, &p_z.mean, &p_z.std) - log_normal(&z, &zm, &zs);
        lw += decoder_log_prob(params, decoder, &z, s.word_ids[t]);
        log_w.push(lw);
    }
    let m = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let r: Vec<f64> = log_w.iter().map(|l| (l - m).exp()).collect();
    let k = proposals as f64;
    let mean = r.iter().sum::<f64>() / k;
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok((m + mean.ln(), var.sqrt() / (k.sqrt() * mean)))
}

fn criterion_3() -> Res<Outcome> {
    const PROPOSALS: usize = 100_000;
    const ELBO_SAMPLES: usize = 2_000;
    let data = Data::synthetic(
        SyntheticConfig {
            num_tags: 2,
            words_per_tag: 3,
            ambiguous_words: 2,
            min_len: 3,
            max_len: 6,
            ..SyntheticConfig::default()
        },
        10,
        10,
    )?;
    let mut details = Vec::new();
    let mut pass = true;
    for variant in [Variant::VslG, Variant::VslGgHier] {
        let mut model =
            VslModel::new(&model_config(variant, [4; 7]), data.sizes(), None, 3).map_err(err)?;
        let config = TrainConfig {
            epochs: 30,
            batch_size: 2,
            learning_rate: 0.01,
            patience: 30,
            ..TrainConfig::default()
        };
        let labeled = &data.corpus.labeled;
        let (outcome, _) = fit(&mut model, labeled, &[], labeled, &data, &config, 1.0)?;
        let priors = outcome.priors;
        let opts = LossOptions {
            alpha: 1.0,
            kl_weight: 1.0,
            mode: SampleMode::Train,
            always_elbo: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let (mut worst_slack, mut gap, mut positions, mut oracle_drift) =
            (f64::INFINITY, 0.0, 0usize, 0.0f64);
        // held-out sentences read N(0, I) priors, training ones their snapshots
        for s in data.dev.iter().chain(labeled) {
            let record = model.latent_means(s).map_err(err)?;
            // the oracle must reproduce the model's own posterior means
            for (t, h) in record.hidden.iter().enumerate() {
                let mut z_in = h.clone();
                if let (Some(head), Some(ys)) = (model.net.y_head.as_ref(), record.y.as_ref()) {
                    let (ym, _) = posterior(&model.params, head, h);
                    oracle_drift = ym
                        .iter()
                        .zip(&ys[t])
                        .map(|(a, b)| (a - b).abs())
                        .fold(oracle_drift, f64::max);
                    z_in.extend_from_slice(&ym);
                }
                let (zm, _) = posterior(
                    &model.params,
                    model.net.z_head.as_ref().ok_or("no z head")?,
                    &z_in,
                );
                let zs = record.z.as_ref().ok_or("no z means")?;
                oracle_drift = zm
                    .iter()
                    .zip(&zs[t])
                    .map(|(a, b)| (a - b).abs())
                    .fold(oracle_drift, f64::max);
            }
            let mut elbos = vec![Vec::with_capacity(ELBO_SAMPLES); s.len()];
            for _ in 0..ELBO_SAMPLES {
                let mut tape = Tape::with_params(&model.params);
                let out = model
                    .sentence_loss(&mut tape, s, &priors, &opts, &mut rng)
                    .map_err(err)?;
                for (t, step) in out.steps.iter().enumerate() {
                    elbos[t].push(step.elbo);
                }
            }
            for (t, h) in record.hidden.iter().enumerate() {
                let n = ELBO_SAMPLES as f64;
                let elbo = elbos[t].iter().sum::<f64>() / n;
                let elbo_var =
                    elbos[t].iter().map(|e| (e - elbo).powi(2)).sum::<f64>() / (n - 1.0) / n;
                let (is, is_se) = log_marginal(&model, &priors, s, t, h, PROPOSALS, &mut rng)?;
                let se = (is_se * is_se + elbo_var).sqrt();
                worst_slack = worst_slack.min(is + 3.0 * se - elbo);
                gap += is - elbo;
                positions += 1;
            }
        }
        let ok = worst_slack >= 0.0 && oracle_drift <= 1e-12;
        pass &= ok;
        details.push(format!(
            "{variant}: {positions} positions, mean log p - ELBO {:.4} nats, min slack {worst_slack:.4}, oracle drift {oracle_drift:.1e}",
            gap / positions as f64
        ));
    }
    Ok(verdict(pass, details.join("; ")))
}

// ------------------------------------------------------ 4: refresh identity

fn criterion_4() -> Res<Outcome> {
    let data = Data::synthetic(SyntheticConfig::default(), 20, 1)?;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for variant in Variant::ALL.into_iter().filter(|v| v.is_variational()) {
        let model = VslModel::new(
            &model_config(variant, [6, 3, 3, 6, 4, 3, 6]),
            data.sizes(),
            None,
            11,
        )
        .map_err(err)?;
        let mut store = model.new_prior_store(1).map_err(err)?;
        refresh_priors(&mut store, &model, &data.corpus.labeled, 1).map_err(err)?;
        let opts = LossOptions {
            alpha: 1.0,
            kl_weight: 1.0,
            mode: SampleMode::Eval,
            always_elbo: true,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in &data.corpus.labeled {
            let mut tape = Tape::with_params(&model.params);
            let out = model
                .sentence_loss(&mut tape, s, &store, &opts, &mut rng)
                .map_err(err)?;
            if out.steps.len() != s.len() {
                return Err(format!(
                    "{variant}: {} KL terms for {} positions",
                    out.steps.len(),
                    s.len()
                ));
            }
            for st in &out.steps {
                worst = worst.max(st.kl_z.abs()).max(st.kl_y.unwrap_or(0.0).abs());
                checked += 1;
            }
        }
    }
    Ok(verdict(
        worst <= 1e-12,
        format!("{checked} positions over 4 variational variants, max |KL| {worst:.1e}"),
    ))
}

// --------------------------------------------------------------- 5: overfit

fn criterion_5() -> Res<Outcome> {
    let data = Data::synthetic(SyntheticConfig::default(), 50, 1)?;
    let labeled = &data.corpus.labeled;
    let mut pass = true;
    let mut details = Vec::new();
    for variant in Variant::ALL {
        let start = Instant::now();
        let mut model = VslModel::new(
            &model_config(variant, [16, 8, 8, 16, 8, 8, 16]),
            data.sizes(),
            None,
            0,
        )
        .map_err(err)?;
        let config = TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            patience: 200,
            target_metric: Some(0.99),
            ..TrainConfig::default()
        };
        let (_, history) = fit(
            &mut model,
            labeled,
            &[],
            labeled,
            &data,
            &config,
            alpha_for(variant),
        )?;
        let acc = evaluate_tokens(&model, labeled).map_err(err)?;
        let secs = start.elapsed().as_secs_f64();
        let ok = acc >= 0.99 && secs < 300.0;
        pass &= ok;
        details.push(format!("{variant} {acc:.3}@{} {secs:.0}s", history.len()));
    }
    Ok(verdict(
        pass,
        format!("train accuracy@epochs: {}", details.join(", ")),
    ))
}

// ----------------------------------------------- 6, 7: desk-scale comparisons

const SEEDS: [u64; 3] = [0, 1, 2];

struct Comparison {
    results: Vec<(Variant, Vec<f64>)>,
}

impl Comparison {
    fn mean(&self, v: Variant) -> f64 {
        let xs = &self
            .results
            .iter()
            .find(|(w, _)| *w == v)
            .expect("variant was run")
            .1;
        xs.iter().sum::<f64>() / xs.len() as f64
    }

    fn describe(&self, vs: &[Variant]) -> String {
        vs.iter()
            .map(|&v| {
                let xs = &self
                    .results
                    .iter()
                    .find(|(w, _)| *w == v)
                    .expect("variant was run")
                    .1;
                let runs: Vec<String> = xs.iter().map(|x| format!("{:.2}", 100.0 * x)).collect();
                format!("{v} {:.2} [{}]", 100.0 * self.mean(v), runs.join(" "))
            })
            .collect::<Vec<_>>()
            .join(", ")
    }
}

fn run_comparison() -> Res<Comparison> {
    let data = Data::synthetic(
        SyntheticConfig {
            num_sentences: 2000,
            num_tags: 12,
            words_per_tag: 40,
            ambiguous_words: 40,
            ambiguity: 0.35,
            seed: 6,
            ..SyntheticConfig::default()
        },
        2000,
        500,
    )?;
    let mut results = Vec::new();
    for variant in [
        Variant::VslGgHier,
        Variant::NoVrGgHier,
        Variant::Baseline,
        Variant::VslGgHierClfOnZ,
    ] {
        let mut scores = Vec::new();
        for seed in SEEDS {
            let start = Instant::now();
            let mut model = VslModel::new(
                &model_config(variant, [16, 8, 8, 16, 8, 8, 16]),
                data.sizes(),
                None,
                seed,
            )
            .map_err(err)?;
            let config = TrainConfig {
                epochs: 12,
                learning_rate: 0.005,
                patience: 4,
                seed,
                ..TrainConfig::default()
            };
            let (outcome, _) = fit(
                &mut model,
                &data.corpus.labeled,
                &[],
                &data.dev,
                &data,
                &config,
                alpha_for(variant),
            )?;
            eprintln!(
                "  {variant} seed {seed}: dev {:.4} at epoch {} ({:.0}s)",
                outcome.best_metric,
                outcome.best_epoch,
                start.elapsed().as_secs_f64()
            );
            scores.push(outcome.best_metric);
        }
        results.push((variant, scores));
    }
    Ok(Comparison { results })
}

/// `a >= b` on 3-seed means; a deficit within 0.1 accuracy points is a tie.
fn ordering(c: &Comparison, a: Variant, b: Variant) -> Status {
    let diff = 100.0 * (c.mean(a) - c.mean(b));
    if diff >= 0.0 {
        Status::Pass
    } else if diff >= -0.1 {
        Status::SoftFail
    } else {
        Status::Fail
    }
}

fn combine(statuses: &[Status]) -> Status {
    if statuses.contains(&Status::Fail) {
        Status::Fail
    } else if statuses.contains(&Status::SoftFail) {
        Status::SoftFail
    } else {
        Status::Pass
    }
}

fn criterion_6(c: &Comparison) -> Outcome {
    let status = combine(&[
        ordering(c, Variant::VslGgHier, Variant::NoVrGgHier),
        ordering(c, Variant::VslGgHier, Variant::Baseline),
    ]);
    Outcome {
        status,
        detail: format!(
            "dev accuracy, 3-seed mean: {}",
            c.describe(&[Variant::VslGgHier, Variant::NoVrGgHier, Variant::Baseline])
        ),
    }
}

fn criterion_7(c: &Comparison) -> Outcome {
    Outcome {
        status: ordering(c, Variant::VslGgHier, Variant::VslGgHierClfOnZ),
        detail: format!(
            "dev accuracy, 3-seed mean: {}",
            c.describe(&[Variant::VslGgHier, Variant::VslGgHierClfOnZ])
        ),
    }
}

// ----------------------------------------------------------- 8: span scoring

fn criterion_8() -> Res<Outcome> {
    // (gold, predicted, true positives, predicted spans, gold spans)
    let cases: [(&[&str], &[&str], usize, usize, usize); 12] = [
        (&["S-PER"], &["S-PER"], 1, 1, 1),
        (&["B-LOC", "E-LOC"], &["B-LOC", "E-LOC"], 1, 1, 1),
        (&["B-LOC", "E-LOC"], &["S-LOC", "S-LOC"], 0, 2, 1),
        (
            &["B-ORG", "I-ORG", "E-ORG", "O"],
            &["B-ORG", "E-ORG", "O", "O"],
            0,
            1,
            1,
        ),
        (&["S-PER", "O", "S-LOC"], &["S-PER", "O", "S-PER"], 1, 2, 2),
        (&["O", "O", "O"], &["S-MISC", "O", "O"], 0, 1, 0),
        (&["S-MISC", "O"], &["O", "O"], 0, 0, 1),
        (&["O", "O"], &["O", "O"], 0, 0, 0),
        (
            &["B-PER", "E-PER", "S-PER"],
            &["B-PER", "E-PER", "S-PER"],
            2,
            2,
            2,
        ),
        (
            &["B-PER", "I-PER", "E-PER"],
            &["B-LOC", "I-LOC", "E-LOC"],
            0,
            1,
            1,
        ),
        // an ill-formed prediction: I- without B- opens a span ending at E-
        (
            &["B-LOC", "I-LOC", "E-LOC"],
            &["I-LOC", "I-LOC", "E-LOC"],
            1,
            1,
            1,
        ),
        (
            &["S-ORG", "B-LOC", "E-LOC", "O", "S-PER"],
            &["S-ORG", "B-LOC", "I-LOC", "E-LOC", "O"],
            1,
            2,
            3,
        ),
    ];
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let mut wrong = Vec::new();
    for (i, (gold, pred, tp, np, ng)) in cases.iter().enumerate() {
        let got = span_scores(&[gold.to_vec()], &[pred.to_vec()]).map_err(err)?;
        let (p, r) = (ratio(*tp, *np), ratio(*tp, *ng));
        let f1 = if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        };
        let same = (got.true_positives, got.predicted, got.gold) == (*tp, *np, *ng)
            && got.precision == p
            && got.recall == r
            && got.f1 == f1;
        if !same {
            wrong.push(format!("case {i}: {got:?}"));
        }
    }
    // the same cases pooled as one corpus: micro-averaged counts
    let gold: Vec<Vec<&str>> = cases.iter().map(|c| c.0.to_vec()).collect();
    let pred: Vec<Vec<&str>> = cases.iter().map(|c| c.1.to_vec()).collect();
    let pooled = span_scores(&gold, &pred).map_err(err)?;
    let (tp, np, ng) = cases
        .iter()
        .fold((0, 0, 0), |(a, b, c), x| (a + x.2, b + x.3, c + x.4));
    if (pooled.true_positives, pooled.predicted, pooled.gold) != (tp, np, ng) {
        wrong.push(format!("pooled: {pooled:?}"));
    }
    Ok(verdict(
        wrong.is_empty(),
        if wrong.is_empty() {
            format!(
                "12 cases exact; pooled P {:.4} R {:.4} F1 {:.4}",
                pooled.precision, pooled.recall, pooled.f1
            )
        } else {
            wrong.join("; ")
        },
    ))
}

// ------------------------------------------------------ 9, 10: CLI behaviour

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Res<Self> {
        let dir = TempDir::new().map_err(err)?;
        let grammar = SyntheticGrammar::new(SyntheticConfig {
            num_tags: 3,
            words_per_tag: 5,
            ambiguous_words: 2,
            max_len: 6,
            ..SyntheticConfig::default()
        })
        .map_err(err)?;
        let train: Vec<RawSentence> = grammar.sample(40, 0);
        write_conll(&dir.path().join("train.txt"), &train).map_err(err)?;
        write_conll(&dir.path().join("dev.txt"), &grammar.sample(15, 1)).map_err(err)?;
        Ok(Workspace { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn config(&self, name: &str, data: &str, extra: &str) -> Res<PathBuf> {
        let text = format!(
            "[data]\ntrain = \"train.txt\"\ndev = \"dev.txt\"\n{data}\n\n\
             [model]\nvariant = \"vsl-gg-hier\"\nword_dim = 6\nchar_dim = 3\nchar_hidden = 3\n\
             word_hidden = 6\nz_dim = 3\ny_dim = 3\ndecoder_hidden = 6\n\n\
             [train]\nepochs = 3\nbatch_size = 5\nlearning_rate = 0.01\npatience = 3\nalpha = 0.1\n\n{extra}"
        );
        let p = self.path(name);
        fs::write(&p, text).map_err(err)?;
        Ok(p)
    }
}

fn vsl(args: &[&str]) -> Res<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_vsl"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(err)?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "vsl {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn only_subdir(dir: &Path, prefix: &str) -> Res<PathBuf> {
    let found: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with(prefix))
        })
        .collect();
    match found.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(format!(
            "expected one {prefix}* directory in {}, found {}",
            dir.display(),
            found.len()
        )),
    }
}

fn criterion_9() -> Res<Outcome> {
    let ws = Workspace::new()?;
    let cfg = ws.config(
        "semi.toml",
        "labeled_fraction = 0.5\nunlabeled_fraction = 0.5",
        "",
    )?;
    let cfg = cfg.to_str().ok_or("path is not UTF-8")?;
    // the second run goes to the same directory name, so the recorded configs match
    let runs = ws.path("runs");
    vsl(&["train", "--config", cfg, "--set", "seed=5"])?;
    let first = ws.path("first");
    fs::rename(only_subdir(&runs, "run-")?, &first).map_err(err)?;
    vsl(&["train", "--config", cfg, "--set", "seed=5"])?;
    let dirs = [first, only_subdir(&runs, "run-")?];
    let mut differing = Vec::new();
    for name in ["model.ckpt", "metrics.csv"] {
        if fs::read(dirs[0].join(name)).map_err(err)?
            != fs::read(dirs[1].join(name)).map_err(err)?
        {
            differing.push(name);
        }
    }
    Ok(verdict(
        differing.is_empty(),
        if differing.is_empty() {
            "two semi-supervised CLI runs: model.ckpt and metrics.csv identical".to_string()
        } else {
            format!("differing: {}", differing.join(", "))
        },
    ))
}

fn batch_accounting() -> Res<Vec<String>> {
    let data = Data::synthetic(SyntheticConfig::default(), 1, 1)?;
    let grammar = SyntheticGrammar::new(SyntheticConfig::default()).map_err(err)?;
    let mut problems = Vec::new();
    // (labeled, unlabeled, batch size, unlabeled batches per labeled batch)
    for (l, u, bs, ratio) in [
        (20, 60, 5, 1),
        (20, 60, 5, 2),
        (17, 13, 4, 3),
        (6, 100, 5, 1),
        (30, 7, 5, 2),
    ] {
        let raws = grammar.sample(l + u, 7);
        let corpus = Corpus::build(
            &raws[..l],
            &raws[l..],
            &[],
            &VocabOptions::default(),
            SplitManifest::supervised(l),
        )
        .map_err(err)?;
        let local = Data {
            corpus,
            dev: data.dev.clone(),
        };
        let mut model = VslModel::new(
            &model_config(Variant::VslG, tiny_dims()),
            local.sizes(),
            None,
            0,
        )
        .map_err(err)?;
        let config = TrainConfig {
            epochs: 2,
            batch_size: bs,
            unlabeled_per_labeled: ratio,
            patience: 2,
            ..TrainConfig::default()
        };
        let labeled = &local.corpus.labeled;
        let (_, history) = fit(
            &mut model,
            labeled,
            &local.corpus.unlabeled,
            labeled,
            &local,
            &config,
            0.1,
        )?;
        for r in history {
            let (lb, ub) = (r.labeled_batches, r.unlabeled_batches);
            let covers = lb >= l.div_ceil(bs) && ub >= u.div_ceil(bs);
            if (ub as f64 - (ratio * lb) as f64).abs() > 1.0 || !covers {
                problems.push(format!(
                    "L={l} U={u} bs={bs} r={ratio}: {lb} labeled, {ub} unlabeled batches"
                ));
            }
        }
    }
    Ok(problems)
}

fn criterion_10() -> Res<Outcome> {
    let mut problems = batch_accounting()?;
    let ws = Workspace::new()?;
    let sweep = ws.config(
        "sweep.toml",
        "labeled_fraction = 0.5\nunlabeled_fraction = 0.5",
        "[sweep]\nsizes = [0, 20]",
    )?;
    vsl(&[
        "sweep-unlabeled",
        "--config",
        sweep.to_str().ok_or("path is not UTF-8")?,
    ])?;
    let sup = ws.config(
        "sup.toml",
        "labeled_fraction = 0.5\nunlabeled_fraction = 0.0",
        "",
    )?;
    let sup_out = format!("run.output_dir={}", ws.path("supervised").display());
    vsl(&[
        "train",
        "--config",
        sup.to_str().ok_or("path is not UTF-8")?,
        "--set",
        &sup_out,
    ])?;
    let sweep_dir = only_subdir(&ws.path("runs"), "sweep-")?;
    let mut reader = csv::Reader::from_path(sweep_dir.join("sweep.csv")).map_err(err)?;
    let rows: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>().map_err(err)?;
    let size0 = rows.iter().find(|r| &r[0] == "0").ok_or("no size-0 row")?;
    let size0_dir = ws.path("runs").join(&size0[5]);
    let supervised = only_subdir(&ws.path("supervised"), "run-")?;
    if fs::read(size0_dir.join("metrics.csv")).map_err(err)?
        != fs::read(supervised.join("metrics.csv")).map_err(err)?
    {
        problems.push("size-0 sweep metrics.csv differs from the supervised run".to_string());
    }
    // the checkpoint metadata records each run's own config, so compare contents
    let a = Checkpoint::load(&size0_dir.join("model.ckpt")).map_err(err)?;
    let b = Checkpoint::load(&supervised.join("model.ckpt")).map_err(err)?;
    if a.model != b.model || a.priors != b.priors || a.optimizer != b.optimizer {
        problems.push("size-0 sweep checkpoint differs from the supervised run".to_string());
    }
    Ok(verdict(
        problems.is_empty(),
        if problems.is_empty() {
            "batch counts within 1 of the ratio in 5 settings; size-0 sweep run identical to supervised".to_string()
        } else {
            problems.join("; ")
        },
    ))
}

// ------------------------------------------------------------------- driver

fn guarded<T>(f: impl FnOnce() -> Res<T>) -> Res<T> {
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".to_string())),
    }
}

fn main() -> ExitCode {
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    // cargo passes harness flags such as --nocapture; none apply here
    let mut failed = 0;
    let mut report = |n: usize, started: Instant, result: Res<Outcome>| {
        let (status, detail) = match result {
            Ok(o) => (o.status, o.detail),
            Err(e) => (Status::Fail, format!("error: {e}")),
        };
        let word = match status {
            Status::Pass => "PASS",
            Status::Fail => {
                failed += 1;
                "FAIL"
            }
            Status::SoftFail => "SOFT-FAIL",
        };
        println!(
            "criterion {n:2}: {word} ({:.0}s) {detail}",
            started.elapsed().as_secs_f64()
        );
    };
    let single: [(usize, fn() -> Res<Outcome>); 8] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    for (n, f) in single.iter().filter(|(n, _)| *n < 6) {
        if wanted(*n) {
            let t = Instant::now();
            report(*n, t, guarded(f));
        }
    }
    if wanted(6) || wanted(7) {
        let t = Instant::now();
        match guarded(run_comparison) {
            Ok(c) => {
                if wanted(6) {
                    report(6, t, Ok(criterion_6(&c)));
                }
                if wanted(7) {
                    report(7, t, Ok(criterion_7(&c)));
                }
            }
            Err(e) => {
                for n in [6, 7].into_iter().filter(|&n| wanted(n)) {
                    report(n, t, Err(e.clone()));
                }
            }
        }
    }
    for (n, f) in single.iter().filter(|(n, _)| *n > 7) {
        if wanted(*n) {
            let t = Instant::now();
            report(*n, t, guarded(f));
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
