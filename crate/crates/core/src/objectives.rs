//! Training objectives and their weighted sum.
//!
//! Pixel and feature terms are mean squared errors. The adversarial terms use
//! the non-saturating logistic form, with an R1 penalty on real images for
//! the discriminator.

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Trainable, Var};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Groups between which the shape regularizer applies.
pub const SHAPE_REG_PAIR: (usize, usize) = (4, 5);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub rec: f64,
    pub cyc: f64,
    pub id: f64,
    pub shape: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            adv: 1.0,
            rec: 10.0,
            cyc: 10.0,
            id: 1.0,
            shape: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.adv, self.rec, self.cyc, self.id, self.shape];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Unweighted loss components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub adv: f64,
    pub rec: f64,
    pub cyc: f64,
    pub id: f64,
    pub shape: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv: f64,
    pub rec: f64,
    pub cyc: f64,
    pub id: f64,
    pub shape: f64,
    pub total: f64,
}

pub fn total_loss(parts: LossParts, w: &LossWeights) -> Result<LossBreakdown> {
    let named = [
        ("adv", parts.adv),
        ("rec", parts.rec),
        ("cyc", parts.cyc),
        ("id", parts.id),
        ("shape", parts.shape),
    ];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLoss((*name).to_string()));
    }
    let total = w.adv * parts.adv
        + w.rec * parts.rec
        + w.cyc * parts.cyc
        + w.id * parts.id
        + w.shape * parts.shape;
    Ok(LossBreakdown {
        adv: parts.adv,
        rec: parts.rec,
        cyc: parts.cyc,
        id: parts.id,
        shape: parts.shape,
        total,
    })
}

/// `||ID(E_d(I_r)) - ID(E_d(I_t))||^2` (mean), with the reference side held
/// constant. `identity` maps an image to its identity feature.
pub fn loss_identity<T: Scalar>(
    g: &mut Graph<T>,
    reference: Var,
    generated: Var,
    mut identity: impl FnMut(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let target = identity(g, reference)?;
    let target = g.detach(target);
    let feat = identity(g, generated)?;
    g.mse(feat, target)
}

/// `||I_r - F(I_t, z_r)||^2` (mean); `back_to_reference` is `F(., z_r)`.
pub fn loss_cycle<T: Scalar>(
    g: &mut Graph<T>,
    reference: Var,
    generated: Var,
    back_to_reference: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let cycled = back_to_reference(g, generated)?;
    g.mse(cycled, reference)
}

/// `||I_r - G(f_s(z_r), f_t(z_r))||^2` (mean); `reconstruct` is `F(., z_r)`
/// with a noise-free code.
pub fn loss_reconstruction<T: Scalar>(
    g: &mut Graph<T>,
    reference: Var,
    reconstruct: impl FnOnce(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    let rec = reconstruct(g, reference)?;
    g.mse(rec, reference)
}

/// `||R_s(E_m(I_ref)) - R_s(E_m(I_gen))||^2` (mean) for an adult reference
/// and its generated older version, reference side held constant.
pub fn loss_shape_reg<T: Scalar>(
    g: &mut Graph<T>,
    reference: Var,
    generated: Var,
    groups: (usize, usize),
    mut shape_features: impl FnMut(&mut Graph<T>, Var) -> Result<Var>,
) -> Result<Var> {
    if groups != SHAPE_REG_PAIR {
        return Err(Error::InvalidGroupPair {
            reference: groups.0,
            target: groups.1,
        });
    }
    let target = shape_features(g, reference)?;
    let target = g.detach(target);
    let feat = shape_features(g, generated)?;
    g.mse(feat, target)
}

/// `softplus(-logit)`
pub fn loss_adversarial_g<T: Scalar>(g: &mut Graph<T>, logit_fake: Var) -> Var {
    let neg = g.scale(logit_fake, -T::one());
    let sp = g.softplus(neg);
    g.sum(sp)
}

/// `softplus(-real) + softplus(fake)`, without the R1 term.
pub fn loss_adversarial_d<T: Scalar>(
    g: &mut Graph<T>,
    logit_real: Var,
    logit_fake: Var,
) -> Result<Var> {
    let neg = g.scale(logit_real, -T::one());
    let a = g.softplus(neg);
    let b = g.softplus(logit_fake);
    let s = g.add(a, b)?;
    Ok(g.sum(s))
}

/// Scalar forms, averaged over the given logits.
pub fn adversarial_g_value(logits_fake: &[f64]) -> f64 {
    mean(logits_fake.iter().map(|&l| crate::autograd::softplus(-l)))
}

/// `mean softplus(-real) + mean softplus(fake) + r1`
pub fn adversarial_d_value(logits_real: &[f64], logits_fake: &[f64], r1: f64) -> f64 {
    mean(logits_real.iter().map(|&l| crate::autograd::softplus(-l)))
        + mean(logits_fake.iter().map(|&l| crate::autograd::softplus(l)))
        + r1
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// R1 penalty `gamma/2 * ||grad_x d(x, z)||^2` on one real image, with its
/// gradient with respect to the discriminator parameters.
pub struct R1Penalty<T> {
    pub value: T,
    pub grads: Vec<(ParamId, Tensor<T>)>,
}

/// Gradient of the squared input-gradient norm is the mixed second
/// derivative applied to the input gradient itself, evaluated as a central
/// difference of parameter gradients along that direction. The
/// discriminator is piecewise linear in its input, so the difference is exact
/// unless the probe crosses an activation kink.
pub fn r1_penalty<T: Scalar>(
    model: &Model<T>,
    p: &ParamStore<T>,
    image: &Tensor<T>,
    code: &Tensor<T>,
    gamma: T,
) -> Result<R1Penalty<T>> {
    let mut g = Graph::new(Trainable::None);
    let x = g.input_with_grad(image.clone());
    let z = g.input(code.clone());
    let logit = model.discriminate(&mut g, p, x, z)?;
    let grads = g.backward(logit)?;
    let v = grads
        .wrt(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(image.shape().to_vec()));
    let sq: T = v.data().iter().map(|&a| a * a).sum();
    let half = T::from_f64_lossy(0.5);
    let value = half * gamma * sq;
    let vmax = v.data().iter().fold(T::zero(), |m, a| m.max(a.abs()));
    if gamma == T::zero() || vmax == T::zero() {
        return Ok(R1Penalty {
            value,
            grads: Vec::new(),
        });
    }
    let step = T::epsilon().cbrt() / vmax;
    let param_grads_at = |sign: T| -> Result<Vec<(ParamId, Tensor<T>)>> {
        let mut probe = image.clone();
        probe.axpy(sign * step, &v);
        let mut g = Graph::new(Trainable::Only(crate::params::Side::Discriminator));
        let x = g.input(probe);
        let z = g.input(code.clone());
        let logit = model.discriminate(&mut g, p, x, z)?;
        Ok(g.backward(logit)?.params().to_vec())
    };
    let plus = param_grads_at(T::one())?;
    let minus = param_grads_at(-T::one())?;
    let k = gamma / (step + step);
    let grads = plus
        .into_iter()
        .zip(minus)
        .map(|((id, a), (id2, b))| {
            debug_assert_eq!(id, id2);
            let d = a.zip_map(&b, |x, y| (x - y) * k).expect("same shapes");
            (id, d)
        })
        .collect();
    Ok(R1Penalty { value, grads })
}
