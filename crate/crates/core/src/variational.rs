//! Diagonal-Gaussian latent machinery: posterior heads, reparametrized
//! sampling, closed-form KL, KL-weight annealing and the per-instance prior
//! store used as a learned prior.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::tensor::Tensor;

/// Added to the softplus output so a standard deviation never reaches zero.
pub const STD_FLOOR: f64 = 1e-6;

/// A diagonal Gaussian with explicit values (no gradient).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape {
                op: "gaussian",
                lhs: vec![mean.len()],
                rhs: vec![std.len()],
            });
        }
        if mean.iter().any(|m| !m.is_finite()) || std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("gaussian needs finite means and positive finite stds"));
        }
        Ok(GaussianParams { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianParams {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), x)| {
                let u = (x - m) / s;
                -0.5 * (u * u + ln_2pi) - s.ln()
            })
            .sum()
    }
}

/// Closed-form `KL(q || p)` for diagonal Gaussians.
pub fn kl_closed_form(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Shape {
            op: "kl",
            lhs: vec![q.dim()],
            rhs: vec![p.dim()],
        });
    }
    Ok((0..q.dim())
        .map(|d| {
            let dm = q.mean[d] - p.mean[d];
            (p.std[d] / q.std[d]).ln() + (q.std[d] * q.std[d] + dm * dm) / (2.0 * p.std[d] * p.std[d])
                - 0.5
        })
        .sum())
}

/// A Gaussian whose parameters are recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVar {
    pub mean: Var,
    pub std: Var,
}

impl GaussianVar {
    pub fn to_params(&self, tape: &Tape<'_>) -> GaussianParams {
        GaussianParams {
            mean: tape.value(self.mean).data().to_vec(),
            std: tape.value(self.std).data().to_vec(),
        }
    }
}

/// Single-layer posterior head: `mean = W_m h + b_m`,
/// `std = softplus(W_s h + b_s) + 1e-6`. Without a std layer the head is a
/// deterministic point estimate.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PosteriorHead {
    pub mean: Linear,
    pub std: Option<Linear>,
}

impl PosteriorHead {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        latent_dim: usize,
        stochastic: bool,
        rng: &mut R,
    ) -> Self {
        PosteriorHead {
            mean: Linear::new(params, &format!("{name}.mean"), in_dim, latent_dim, rng),
            std: stochastic
                .then(|| Linear::new(params, &format!("{name}.std"), in_dim, latent_dim, rng)),
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.out_dim
    }

    fn check(&self, tape: &Tape<'_>, h: Var) -> Result<()> {
        if tape.shape(h) != [self.mean.in_dim] {
            return Err(Error::Shape {
                op: "posterior",
                lhs: vec![self.mean.in_dim],
                rhs: tape.shape(h).to_vec(),
            });
        }
        Ok(())
    }

    pub fn posterior(&self, tape: &mut Tape<'_>, h: Var) -> Result<GaussianVar> {
        self.check(tape, h)?;
        let std_layer = self
            .std
            .as_ref()
            .ok_or_else(|| Error::invalid("deterministic head has no standard deviation"))?;
        let mean = self.mean.forward(tape, h)?;
        let pre = std_layer.forward(tape, h)?;
        let sp = tape.softplus(pre)?;
        let floor = tape.constant(Tensor::full(&[self.latent_dim()], STD_FLOOR));
        let std = tape.add(sp, floor)?;
        Ok(GaussianVar { mean, std })
    }

    /// Mean only; used by the deterministic (no variational regularization) variants.
    pub fn point(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var> {
        self.check(tape, h)?;
        self.mean.forward(tape, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Train,
    Eval,
}

/// `mean + std * eps` with `eps ~ N(0, I)` in training, the mean in evaluation.
pub fn sample_latent<R: Rng>(
    tape: &mut Tape<'_>,
    q: &GaussianVar,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Var> {
    match mode {
        SampleMode::Eval => Ok(q.mean),
        SampleMode::Train => {
            let dim = tape.value(q.mean).numel();
            let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let eps = tape.constant(Tensor::from_parts(vec![dim], eps));
            let noise = tape.mul(q.std, eps)?;
            tape.add(q.mean, noise)
        }
    }
}

/// `KL(q || p)` on the tape, differentiable in `q` only; `p` enters as constants.
pub fn kl_diag_gaussians(tape: &mut Tape<'_>, q: &GaussianVar, p: &GaussianParams) -> Result<Var> {
    let dim = tape.value(q.mean).numel();
    if dim != p.dim() || tape.value(q.std).numel() != dim {
        return Err(Error::Shape {
            op: "kl",
            lhs: tape.shape(q.mean).to_vec(),
            rhs: vec![p.dim()],
        });
    }
    let p_mean = tape.constant(Tensor::from_parts(vec![dim], p.mean.clone()));
    let inv_two_var = tape.constant(Tensor::from_parts(
        vec![dim],
        p.std.iter().map(|s| 1.0 / (2.0 * s * s)).collect(),
    ));
    let log_q_std = tape.log(q.std)?;
    let q_var = tape.mul(q.std, q.std)?;
    let diff = tape.sub(q.mean, p_mean)?;
    let diff_sq = tape.mul(diff, diff)?;
    let num = tape.add(q_var, diff_sq)?;
    let quad = tape.mul(num, inv_two_var)?;
    let per_dim = tape.sub(quad, log_q_std)?;
    let total = tape.sum(per_dim);
    let offset: f64 = p.std.iter().map(|s| s.ln()).sum::<f64>() - 0.5 * dim as f64;
    let offset = tape.constant(Tensor::from_parts(vec![1], vec![offset]));
    tape.add(total, offset)
}

/// Name of a per-position latent variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentVar {
    Y,
    Z,
}

impl LatentVar {
    pub fn name(self) -> &'static str {
        match self {
            LatentVar::Y => "y",
            LatentVar::Z => "z",
        }
    }
}

impl fmt::Display for LatentVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LatentVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "y" => Ok(LatentVar::Y),
            "z" => Ok(LatentVar::Z),
            other => Err(Error::UnknownVariable(other.to_string())),
        }
    }
}

/// Snapshots of past posteriors, indexed by training instance, position and
/// variable. Instances that were never refreshed read as `N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorStore {
    dims: BTreeMap<LatentVar, usize>,
    refresh_period: usize,
    snapshot_epoch: Option<usize>,
    entries: BTreeMap<(usize, LatentVar), Vec<GaussianParams>>,
}

impl PriorStore {
    pub fn new(variables: &[(LatentVar, usize)], refresh_period: usize) -> Result<Self> {
        if refresh_period == 0 {
            return Err(Error::invalid("prior refresh period must be positive"));
        }
        Ok(PriorStore {
            dims: variables.iter().copied().collect(),
            refresh_period,
            snapshot_epoch: None,
            entries: BTreeMap::new(),
        })
    }

    pub fn variables(&self) -> impl Iterator<Item = (LatentVar, usize)> + '_ {
        self.dims.iter().map(|(&v, &d)| (v, d))
    }

    pub fn refresh_period(&self) -> usize {
        self.refresh_period
    }

    pub fn snapshot_epoch(&self) -> Option<usize> {
        self.snapshot_epoch
    }

    /// Whether priors should be refreshed after `epoch` (1-based) completes.
    pub fn due(&self, epoch: usize) -> bool {
        epoch > 0 && epoch % self.refresh_period == 0
    }

    /// Number of stored `(instance, position, variable)` snapshots.
    pub fn len(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, instance: usize, position: usize, var: LatentVar) -> Result<Cow<'_, GaussianParams>> {
        let dim = *self
            .dims
            .get(&var)
            .ok_or_else(|| Error::UnknownVariable(var.name().to_string()))?;
        match self.entries.get(&(instance, var)) {
            None => Ok(Cow::Owned(GaussianParams::standard(dim))),
            Some(positions) => positions.get(position).map(Cow::Borrowed).ok_or(Error::Index {
                op: "lookup_prior",
                index: position,
                extent: positions.len(),
            }),
        }
    }

    pub fn lookup_by_name(&self, instance: usize, position: usize, var: &str) -> Result<Cow<'_, GaussianParams>> {
        self.lookup(instance, position, var.parse()?)
    }

    /// Replaces the snapshots of one instance and variable.
    pub fn set(&mut self, instance: usize, var: LatentVar, snapshots: Vec<GaussianParams>) -> Result<()> {
        let dim = *self
            .dims
            .get(&var)
            .ok_or_else(|| Error::UnknownVariable(var.name().to_string()))?;
        if let Some(bad) = snapshots.iter().find(|g| g.dim() != dim) {
            return Err(Error::Shape {
                op: "prior snapshot",
                lhs: vec![dim],
                rhs: vec![bad.dim()],
            });
        }
        self.entries.insert((instance, var), snapshots);
        Ok(())
    }

    pub fn mark_refreshed(&mut self, epoch: usize) {
        self.snapshot_epoch = Some(epoch);
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, LatentVar, &[GaussianParams])> {
        self.entries.iter().map(|(&(i, v), g)| (i, v, g.as_slice()))
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.snapshot_epoch = None;
    }
}

/// Anything able to produce detached per-position posteriors for a sentence.
pub trait PosteriorSnapshot {
    /// Posteriors of each latent variable at every position, computed
    /// deterministically from the current parameters.
    fn snapshot_posteriors(&self, sentence: &crate::data::Sentence) -> Result<Vec<(LatentVar, Vec<GaussianParams>)>>;
}

/// Replaces every stored snapshot with the current posterior of `model`.
pub fn refresh_priors<M: PosteriorSnapshot + ?Sized>(
    store: &mut PriorStore,
    model: &M,
    sentences: &[crate::data::Sentence],
    epoch: usize,
) -> Result<()> {
    for s in sentences {
        for (var, snaps) in model.snapshot_posteriors(s)? {
            store.set(s.instance_index, var, snaps)?;
        }
    }
    store.mark_refreshed(epoch);
    Ok(())
}

/// Linear ramp of the KL weight from `start_weight` to 1 over `ramp_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub start_weight: f64,
    pub ramp_steps: usize,
}

impl AnnealSchedule {
    pub fn new(start_weight: f64, ramp_steps: usize) -> Result<Self> {
        if !(start_weight > 0.0 && start_weight <= 1.0) {
            return Err(Error::invalid(format!(
                "anneal start weight must lie in (0, 1], got {start_weight}"
            )));
        }
        if ramp_steps == 0 {
            return Err(Error::invalid("anneal ramp must span at least one step"));
        }
        Ok(AnnealSchedule {
            start_weight,
            ramp_steps,
        })
    }

    /// A schedule that is 1 from the first step.
    pub fn constant() -> Self {
        AnnealSchedule {
            start_weight: 1.0,
            ramp_steps: 1,
        }
    }

    pub fn weight(&self, step: usize) -> f64 {
        let frac = (step as f64 / self.ramp_steps as f64).min(1.0);
        self.start_weight + (1.0 - self.start_weight) * frac
    }
}

pub fn anneal_weight(schedule: &AnnealSchedule, step: usize) -> f64 {
    schedule.weight(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::GradStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gvar(tape: &mut Tape<'_>, g: &GaussianParams, grad: bool) -> GaussianVar {
        GaussianVar {
            mean: tape.leaf(Tensor::vector(g.mean.clone()).unwrap(), grad),
            std: tape.leaf(Tensor::vector(g.std.clone()).unwrap(), grad),
        }
    }

    #[test]
    fn zero_head_gives_ln2_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::new();
        let head = PosteriorHead::new(&mut ps, "q", 3, 2, true, &mut rng);
        for id in ps.ids().collect::<Vec<_>>() {
            ps.get_mut(id).value.fill(0.0);
        }
        let mut t = Tape::with_params(&ps);
        let h = t.constant(Tensor::vector(vec![1.0, -4.0, 9.0]).unwrap());
        let q = head.posterior(&mut t, h).unwrap().to_params(&t);
        assert_eq!(q.mean, vec![0.0, 0.0]);
        for s in q.std {
            assert!((s - (std::f64::consts::LN_2 + STD_FLOOR)).abs() < 1e-15);
        }
        let bad = t.constant(Tensor::vector(vec![1.0]).unwrap());
        assert!(head.posterior(&mut t, bad).is_err());
    }

    #[test]
    fn std_positive_even_for_extreme_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        let head = PosteriorHead::new(&mut ps, "q", 2, 3, true, &mut rng);
        let mut t = Tape::with_params(&ps);
        let h = t.constant(Tensor::vector(vec![-500.0, 500.0]).unwrap());
        let q = head.posterior(&mut t, h).unwrap().to_params(&t);
        assert!(q.std.iter().all(|&s| s >= STD_FLOOR));
    }

    #[test]
    fn eval_sample_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = Tape::new();
        let q = gvar(&mut t, &GaussianParams::new(vec![0.5, -1.0], vec![2.0, 3.0]).unwrap(), false);
        let s = sample_latent(&mut t, &q, SampleMode::Eval, &mut rng).unwrap();
        assert_eq!(t.value(s).data(), &[0.5, -1.0]);
        let tiny = gvar(&mut t, &GaussianParams::new(vec![0.5], vec![1e-300]).unwrap(), false);
        let s = sample_latent(&mut t, &tiny, SampleMode::Train, &mut rng).unwrap();
        assert_eq!(t.value(s).data(), &[0.5]);
    }

    #[test]
    fn kl_identities() {
        let q = GaussianParams::new(vec![1.0], vec![1.0]).unwrap();
        let p = GaussianParams::standard(1);
        assert!((kl_closed_form(&q, &p).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(kl_closed_form(&p, &p).unwrap(), 0.0);
        let mut t = Tape::new();
        let qv = gvar(&mut t, &q, true);
        let kl = kl_diag_gaussians(&mut t, &qv, &p).unwrap();
        assert!((t.scalar_value(kl).unwrap() - 0.5).abs() < 1e-15);
        let wrong = GaussianParams::standard(2);
        assert!(kl_diag_gaussians(&mut t, &qv, &wrong).is_err());
    }

    #[test]
    fn kl_gradient_only_touches_q() {
        let mut t = Tape::new();
        let q = gvar(&mut t, &GaussianParams::new(vec![0.3, -0.2], vec![0.7, 1.4]).unwrap(), true);
        let p = GaussianParams::new(vec![1.0, 0.0], vec![2.0, 0.5]).unwrap();
        let kl = kl_diag_gaussians(&mut t, &q, &p).unwrap();
        t.backward(kl, &mut GradStore::empty()).unwrap();
        // d/dmu = (mu - m_p) / s_p^2, d/dsigma = sigma / s_p^2 - 1/sigma
        let gm = t.grad(q.mean).unwrap().data().to_vec();
        let gs = t.grad(q.std).unwrap().data().to_vec();
        assert!((gm[0] - (0.3 - 1.0) / 4.0).abs() < 1e-14);
        assert!((gm[1] - (-0.2) / 0.25).abs() < 1e-14);
        assert!((gs[0] - (0.7 / 4.0 - 1.0 / 0.7)).abs() < 1e-14);
        assert!((gs[1] - (1.4 / 0.25 - 1.0 / 1.4)).abs() < 1e-14);
    }

    #[test]
    fn fresh_store_is_standard_normal() {
        let store = PriorStore::new(&[(LatentVar::Z, 3), (LatentVar::Y, 2)], 1).unwrap();
        let g = store.lookup(17, 4, LatentVar::Z).unwrap();
        assert_eq!(*g, GaussianParams::standard(3));
        let g = store.lookup_by_name(0, 0, "y").unwrap();
        assert_eq!(*g, GaussianParams::standard(2));
        assert!(matches!(
            store.lookup_by_name(0, 0, "w"),
            Err(Error::UnknownVariable(_))
        ));
        let only_z = PriorStore::new(&[(LatentVar::Z, 3)], 1).unwrap();
        assert!(only_z.lookup(0, 0, LatentVar::Y).is_err());
    }

    #[test]
    fn store_set_and_bounds() {
        let mut store = PriorStore::new(&[(LatentVar::Z, 1)], 2).unwrap();
        let snap = GaussianParams::new(vec![0.2], vec![0.9]).unwrap();
        store.set(5, LatentVar::Z, vec![snap.clone(), snap.clone()]).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(*store.lookup(5, 1, LatentVar::Z).unwrap(), snap);
        assert!(store.lookup(5, 2, LatentVar::Z).is_err());
        assert!(store.set(5, LatentVar::Z, vec![GaussianParams::standard(2)]).is_err());
        assert!(!store.due(1) && store.due(2) && store.due(4));
    }

    #[test]
    fn anneal_boundaries_and_monotonicity() {
        let s = AnnealSchedule::new(0.1, 50).unwrap();
        assert_eq!(anneal_weight(&s, 0), 0.1);
        assert_eq!(s.weight(50), 1.0);
        assert_eq!(s.weight(75), 1.0);
        let ws: Vec<f64> = (0..=100).map(|k| s.weight(k)).collect();
        assert!(ws.windows(2).all(|w| w[0] <= w[1]));
        assert!(AnnealSchedule::new(0.0, 5).is_err());
        assert!(AnnealSchedule::new(0.5, 0).is_err());
    }
}
