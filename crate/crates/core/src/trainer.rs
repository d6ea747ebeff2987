//! Training loop: target sampling, discriminator and generator updates,
//! optimizer schedule and EMA of the generator-side weights.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::age::{clean_age_code, make_age_code, AgeCode, NUM_GROUPS};
use crate::autograd::{GradBuffer, Graph, Trainable};
use crate::checkpoint::{save_checkpoint, AdamState, CheckpointBundle};
use crate::config::{Architecture, TrainConfig};
use crate::data::{for_each_batch, SampleSource};
use crate::error::{Error, Result};
use crate::image_io::hflip;
use crate::model::Model;
use crate::objectives::{self, total_loss, LossBreakdown, LossParts, SHAPE_REG_PAIR};
use crate::params::{ParamStore, Side};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Piecewise-constant learning rate: the base rate times every decay factor
/// whose epoch has been reached.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    let mut decays = config.lr_decay.clone();
    decays.sort_by_key(|&(e, _)| e);
    decays
        .iter()
        .filter(|&&(e, _)| epoch >= e)
        .fold(config.lr, |lr, &(_, f)| lr * f)
}

/// Adam over the parameters of one side.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub side: Side,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(side: Side, beta1: f64, beta2: f64, params: usize) -> Self {
        Self {
            side,
            beta1,
            beta2,
            eps: 1e-8,
            state: AdamState::new(params),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &GradBuffer<T>, lr: f64) {
        self.state.t += 1;
        let t = self.state.t as i32;
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let c1 = T::from_f64_lossy(1.0 - self.beta1.powi(t));
        let c2 = T::from_f64_lossy(1.0 - self.beta2.powi(t));
        let lr = T::from_f64_lossy(lr);
        let eps = T::from_f64_lossy(self.eps);
        for (id, g) in grads.iter() {
            if store.param(id).side != self.side {
                continue;
            }
            let i = id.index();
            let m = self.state.m[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let v = self.state.v[i].get_or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
            let w = store.get_mut(id);
            for (((w, m), v), &g) in w
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Exponential moving average of the generator-side parameters.
#[derive(Clone, Debug)]
pub struct EmaState<T> {
    pub shadow: ParamStore<T>,
    pub decay: f64,
}

impl<T: Scalar> EmaState<T> {
    pub fn new(live: &ParamStore<T>, decay: f64) -> Self {
        Self {
            shadow: live.clone(),
            decay,
        }
    }

    pub fn update(&mut self, live: &ParamStore<T>) -> Result<()> {
        ema_update(self, live, self.decay)
    }
}

/// `shadow := decay * shadow + (1 - decay) * live` on generator-side tensors.
pub fn ema_update<T: Scalar>(
    ema: &mut EmaState<T>,
    live: &ParamStore<T>,
    decay: f64,
) -> Result<()> {
    if ema.shadow.len() != live.len() {
        return Err(Error::shape(format!(
            "EMA holds {} parameters, live model {}",
            ema.shadow.len(),
            live.len()
        )));
    }
    for (id, p) in live.iter() {
        if ema.shadow.get(id).shape() != p.value.shape() {
            return Err(Error::shape(format!("EMA shape mismatch for {}", p.name)));
        }
    }
    let d = T::from_f64_lossy(decay);
    let keep = T::one() - d;
    for (id, p) in live.iter() {
        if p.side != Side::Generator {
            continue;
        }
        for (s, &l) in ema
            .shadow
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .zip(p.value.data())
        {
            *s = d * *s + keep * l;
        }
    }
    Ok(())
}

/// Everything drawn at random for one sample of one step.
#[derive(Clone, Debug)]
pub struct SamplePlan<T> {
    pub image: Tensor<T>,
    pub reference_group: usize,
    pub target_group: usize,
    pub target_code: AgeCode<T>,
    pub reference_code: AgeCode<T>,
    pub reference_clean: AgeCode<T>,
    /// Code of the older adult group when the shape regularizer applies.
    pub older_code: Option<AgeCode<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub losses: LossBreakdown,
    /// Discriminator loss including the R1 term.
    pub disc: f64,
    pub r1: f64,
    pub lr: f64,
}

pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: Model<T>,
    pub ema: EmaState<T>,
    pub opt_g: Adam<T>,
    pub opt_d: Adam<T>,
    pub epoch: usize,
    pub step: u64,
}

fn check_finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss(name.to_string()))
    }
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model(), config.seed)?;
        let n = model.params.len();
        Ok(Self {
            ema: EmaState::new(&model.params, config.ema_decay),
            opt_g: Adam::new(Side::Generator, config.adam_beta1, config.adam_beta2, n),
            opt_d: Adam::new(Side::Discriminator, config.adam_beta1, config.adam_beta2, n),
            config,
            model,
            epoch: 0,
            step: 0,
        })
    }

    pub fn from_checkpoint(bundle: CheckpointBundle<T>) -> Result<Self> {
        let mut t = Self::new(bundle.config.clone())?;
        t.model.params.load_from(&bundle.live)?;
        t.ema.shadow.load_from(&bundle.ema)?;
        t.opt_g.state = bundle.adam_g;
        t.opt_d.state = bundle.adam_d;
        t.epoch = bundle.epoch;
        t.step = bundle.step;
        Ok(t)
    }

    pub fn to_checkpoint(&self) -> CheckpointBundle<T> {
        CheckpointBundle {
            config: self.config.clone(),
            live: self.model.params.clone(),
            ema: self.ema.shadow.clone(),
            adam_g: self.opt_g.state.clone(),
            adam_d: self.opt_d.state.clone(),
            epoch: self.epoch,
            step: self.step,
        }
    }

    /// Random stream for step `step`, independent of how steps are grouped
    /// into runs.
    fn step_rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.step.wrapping_add(1));
        rng
    }

    fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x0e90_c5ee_d000_0001);
        rng.set_stream(epoch as u64);
        rng
    }

    /// Draw targets, codes and flips for a batch.
    pub fn plan_batch<R: Rng + ?Sized>(
        &self,
        batch: &[(Tensor<T>, usize)],
        rng: &mut R,
    ) -> Result<Vec<SamplePlan<T>>> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = self.config.block;
        let noise = self.config.noise_scale;
        batch
            .iter()
            .map(|(image, r)| {
                let r = *r;
                if r >= NUM_GROUPS {
                    return Err(Error::InvalidGroup(r as i64));
                }
                self.model.check_image(image)?;
                let image = if self.config.hflip && rng.random_bool(0.5) {
                    hflip(image)?
                } else {
                    image.clone()
                };
                // uniform over the other five groups
                let mut t = rng.random_range(0..NUM_GROUPS - 1);
                if t >= r {
                    t += 1;
                }
                let target_code = make_age_code(t, n, noise, rng)?;
                let reference_code = make_age_code(r, n, noise, rng)?;
                let older_code = if r == SHAPE_REG_PAIR.0
                    && self.model.architecture() == Architecture::Disentangled
                {
                    Some(make_age_code(SHAPE_REG_PAIR.1, n, noise, rng)?)
                } else {
                    None
                };
                Ok(SamplePlan {
                    image,
                    reference_group: r,
                    target_group: t,
                    target_code,
                    reference_code,
                    reference_clean: clean_age_code(r, n)?,
                    older_code,
                })
            })
            .collect()
    }

    /// `F(I_r, z_t)` for every planned sample, without gradients.
    pub fn generate_fakes(&self, plans: &[SamplePlan<T>]) -> Result<Vec<Tensor<T>>> {
        plans
            .iter()
            .map(|s| self.model.synthesize(&s.image, &s.target_code))
            .collect()
    }

    /// Gradients of the discriminator loss (logistic terms plus R1) averaged
    /// over the batch; returns `(grads, loss, r1)`.
    pub fn discriminator_gradients(
        &self,
        plans: &[SamplePlan<T>],
        fakes: &[Tensor<T>],
    ) -> Result<(GradBuffer<T>, f64, f64)> {
        let p = &self.model.params;
        let inv_b = T::one() / T::from_usize(plans.len()).unwrap();
        let gamma = T::from_f64_lossy(self.config.r1_gamma);
        let mut buf = GradBuffer::new();
        let (mut loss, mut r1_total) = (0.0, 0.0);
        for (s, fake) in plans.iter().zip(fakes) {
            let mut g = Graph::new(Trainable::Only(Side::Discriminator));
            let real = g.input(s.image.clone());
            let fake = g.input(fake.clone());
            let zr = g.input(s.reference_code.to_tensor());
            let zt = g.input(s.target_code.to_tensor());
            let lr = self.model.discriminate(&mut g, p, real, zr)?;
            let lf = self.model.discriminate(&mut g, p, fake, zt)?;
            let l = objectives::loss_adversarial_d(&mut g, lr, lf)?;
            loss += check_finite("disc", g.value(l).item().as_f64())?;
            buf.accumulate(&g.backward(l)?, inv_b);
            if self.config.r1_gamma > 0.0 {
                let r1 = objectives::r1_penalty(
                    &self.model,
                    p,
                    &s.image,
                    &s.reference_code.to_tensor(),
                    gamma,
                )?;
                r1_total += check_finite("r1", r1.value.as_f64())?;
                for (id, gr) in &r1.grads {
                    buf.add(*id, gr, inv_b);
                }
            }
        }
        let b = plans.len() as f64;
        Ok((buf, (loss + r1_total) / b, r1_total / b))
    }

    /// Gradients of the weighted generator-side objective averaged over the
    /// batch, with the unweighted batch-mean components.
    pub fn generator_gradients(
        &self,
        plans: &[SamplePlan<T>],
    ) -> Result<(GradBuffer<T>, LossParts)> {
        let p = &self.model.params;
        let m = &self.model;
        let w = self.config.weights();
        let bsz = plans.len() as f64;
        let mut buf = GradBuffer::new();
        let mut parts = LossParts::default();
        for s in plans {
            let mut g = Graph::new(Trainable::Only(Side::Generator));
            let x = g.input(s.image.clone());
            let zt = g.input(s.target_code.to_tensor());
            let zr = g.input(s.reference_code.to_tensor());
            let zr0 = g.input(s.reference_clean.to_tensor());

            let fr = m.features(&mut g, p, x)?;
            let fake = m.translate(&mut g, p, &fr, zt)?;

            // identity: reference side is a constant target
            let id_ref = m.encoder.extract_identity(&mut g, p, fr.taps.deep)?;
            let id_ref = g.detach(id_ref);
            let ff = m.features(&mut g, p, fake)?;
            let id_fake = m.encoder.extract_identity(&mut g, p, ff.taps.deep)?;
            let id = g.mse(id_fake, id_ref)?;

            let cycled = m.translate(&mut g, p, &ff, zr)?;
            let cyc = g.mse(cycled, x)?;

            let recon = m.translate(&mut g, p, &fr, zr0)?;
            let rec = g.mse(recon, x)?;

            let shape = match &s.older_code {
                Some(code) => {
                    let z5 = g.input(code.to_tensor());
                    let older = m.translate(&mut g, p, &fr, z5)?;
                    let mid = m.encoder.encode_mid(&mut g, p, older)?;
                    let fs_older = m.encoder.extract_shape(&mut g, p, mid)?;
                    let target = g.detach(fr.shape);
                    Some(g.mse(fs_older, target)?)
                }
                None => None,
            };

            let logit = m.discriminate(&mut g, p, fake, zt)?;
            let adv = objectives::loss_adversarial_g(&mut g, logit);

            let val = |g: &Graph<T>, v| g.value(v).item().as_f64();
            parts.adv += check_finite("adv", val(&g, adv))? / bsz;
            parts.id += check_finite("id", val(&g, id))? / bsz;
            parts.cyc += check_finite("cyc", val(&g, cyc))? / bsz;
            parts.rec += check_finite("rec", val(&g, rec))? / bsz;
            if let Some(sv) = shape {
                parts.shape += check_finite("shape", val(&g, sv))? / bsz;
            }

            let mut terms = vec![(w.adv, adv), (w.id, id), (w.cyc, cyc), (w.rec, rec)];
            if let Some(sv) = shape {
                terms.push((w.shape, sv));
            }
            let mut total = None;
            for (weight, v) in terms.into_iter().filter(|(wt, _)| *wt != 0.0) {
                let scaled = g.scale(v, T::from_f64_lossy(weight / bsz));
                total = Some(match total {
                    None => scaled,
                    Some(acc) => g.add(acc, scaled)?,
                });
            }
            if let Some(total) = total {
                buf.accumulate(&g.backward(total)?, T::one());
            }
        }
        Ok((buf, parts))
    }

    /// One full update on `batch` (image, reference group) pairs.
    pub fn train_step(&mut self, batch: &[(Tensor<T>, usize)]) -> Result<StepReport> {
        let lr = lr_at(self.epoch, &self.config);
        let mut rng = self.step_rng();
        let plans = self.plan_batch(batch, &mut rng)?;

        let fakes = self.generate_fakes(&plans)?;
        let (dgrads, disc, r1) = self.discriminator_gradients(&plans, &fakes)?;
        self.opt_d.step(&mut self.model.params, &dgrads, lr);

        let (ggrads, parts) = self.generator_gradients(&plans)?;
        let losses = total_loss(parts, &self.config.weights())?;
        self.opt_g.step(&mut self.model.params, &ggrads, lr);

        self.ema.update(&self.model.params)?;
        self.step += 1;
        Ok(StepReport {
            losses,
            disc,
            r1,
            lr,
        })
    }

    /// One pass over `source` in a shuffled order. `on_step` may return
    /// `false` to stop early.
    pub fn train_epoch<S>(
        &mut self,
        source: &S,
        mut on_step: impl FnMut(&Self, &StepReport) -> bool,
    ) -> Result<bool>
    where
        S: SampleSource<T> + ?Sized,
    {
        if source.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..source.len()).collect();
        order.shuffle(&mut self.epoch_rng(self.epoch));
        let mut keep_going = true;
        let bs = self.config.batch_size;
        for_each_batch(source, &order, bs, 2, |batch| {
            let report = self.train_step(&batch)?;
            keep_going = on_step(self, &report) && !self.step_limit_reached();
            Ok(keep_going)
        })?;
        if keep_going {
            self.epoch += 1;
        }
        Ok(keep_going)
    }

    fn step_limit_reached(&self) -> bool {
        self.config.max_steps > 0 && self.step >= self.config.max_steps as u64
    }

    /// Run the remaining epochs, checkpointing into `out_dir`.
    pub fn fit<S>(
        &mut self,
        source: &S,
        out_dir: &Path,
        mut on_step: impl FnMut(&Self, &StepReport),
    ) -> Result<()>
    where
        S: SampleSource<T> + ?Sized,
    {
        std::fs::create_dir_all(out_dir)?;
        let ckpt = out_dir.join("checkpoint.lfs");
        while self.epoch < self.config.epochs && !self.step_limit_reached() {
            let finished = self.train_epoch(source, |t, r| {
                on_step(t, r);
                true
            })?;
            let every = self.config.checkpoint_every;
            if finished && every > 0 && self.epoch.is_multiple_of(every) {
                save_checkpoint(&self.to_checkpoint(), &ckpt)?;
            }
        }
        save_checkpoint(&self.to_checkpoint(), &ckpt)
    }
}
