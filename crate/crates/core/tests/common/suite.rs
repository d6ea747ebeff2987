//! Named gradient checks shared by the gradient tests and the acceptance run.

use lifespan::nn::{lrelu, Conv2d};
use lifespan::objectives::{self, r1_penalty, SHAPE_REG_PAIR};
use lifespan::params::Builder;
use lifespan::transforms::modulate_filters;
use lifespan::{
    clean_age_code, make_age_code, Architecture, Graph, Model, ParamStore, Side, Tensor, Trainable,
    Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gradcheck, jitter, randn, tiny_config};

/// Tiny model with every parameter moved off its structured initialization.
pub fn model() -> Model<f64> {
    let mut m = Model::<f64>::new(tiny_config(Architecture::Disentangled), 3).unwrap();
    jitter(&mut m.params, 0.1, 11);
    m
}

fn code(group: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    make_age_code::<f64, _>(group, 2, 0.2, &mut rng)
        .unwrap()
        .to_tensor()
}

/// `(name, worst relative error)` for every check.
pub type Outcome = Vec<(String, f64)>;

pub fn modulate() -> Outcome {
    [false, true]
        .into_iter()
        .map(|demod| {
            let w = randn(&[3, 3, 3, 3], 1.0, 1);
            let s = randn(&[3], 1.0, 2).map(|x| x + 1.5);
            let probe = randn(&[3, 3, 3, 3], 1.0, 3);
            let r = gradcheck(&ParamStore::new(), &[w, s, probe], |g, _, v| {
                let m = modulate_filters(g, v[0], v[1], demod)?;
                g.dot(m, v[2])
            });
            (format!("modulate_filters(demodulate={demod})"), r.worst)
        })
        .collect()
}

pub fn embed_age(m: &Model<f64>) -> Outcome {
    let probe = randn(&[4], 1.0, 4);
    let r = gradcheck(&m.params, &[code(1, 5), probe], |g, p, v| {
        let e = m.embed_age(g, p, v[0])?;
        g.dot(e, v[1])
    });
    vec![("embed_age".into(), r.worst)]
}

pub fn shape_transform(m: &Model<f64>) -> Outcome {
    let fs = randn(&[4, 4, 4], 1.0, 6);
    let probe = randn(&[4, 4, 4], 1.0, 7);
    let r = gradcheck(&m.params, &[fs, code(3, 8), probe], |g, p, v| {
        let e = m.embed_age(g, p, v[1])?;
        let y = m.shape_transform(g, p, v[0], e)?;
        g.dot(y, v[2])
    });
    vec![("shape_transform".into(), r.worst)]
}

pub fn texture_transform(m: &Model<f64>) -> Outcome {
    let ft = randn(&[4], 1.0, 9);
    let probe = randn(&[4], 1.0, 10);
    let r = gradcheck(&m.params, &[ft, code(4, 11), probe], |g, p, v| {
        let e = m.embed_age(g, p, v[1])?;
        let y = m.texture_transform(g, p, v[0], e)?;
        g.dot(y, v[2])
    });
    vec![("texture_transform".into(), r.worst)]
}

pub fn discriminate(m: &Model<f64>) -> Outcome {
    let r = gradcheck(
        &m.params,
        &[randn(&[3, 4, 4], 0.5, 12), code(2, 13)],
        |g, p, v| m.discriminate(g, p, v[0], v[1]),
    );
    vec![("discriminate".into(), r.worst)]
}

pub fn adversarial(m: &Model<f64>) -> Outcome {
    let inputs = [
        randn(&[3, 4, 4], 0.5, 14),
        randn(&[3, 4, 4], 0.5, 15),
        code(0, 16),
        code(5, 17),
    ];
    let d = gradcheck(&m.params, &inputs, |g, p, v| {
        let real = m.discriminate(g, p, v[0], v[2])?;
        let fake = m.discriminate(g, p, v[1], v[3])?;
        objectives::loss_adversarial_d(g, real, fake)
    });
    let gen = gradcheck(&m.params, &inputs[1..], |g, p, v| {
        let fake = m.discriminate(g, p, v[0], v[2])?;
        Ok(objectives::loss_adversarial_g(g, fake))
    });
    vec![
        ("loss_adversarial_d".into(), d.worst),
        ("loss_adversarial_g".into(), gen.worst),
    ]
}

/// Losses whose reference branch is a constant target: the gradient into the
/// reference must be exactly zero, and everything else must match central
/// differences of the objective with that target frozen. A leak or a
/// mismatch with the loss function itself is reported as error 1.
fn detached_loss(
    name: &str,
    m: &Model<f64>,
    loss: impl Fn(&mut Graph<f64>, &ParamStore<f64>, Var, Var) -> lifespan::Result<Var>,
    features: impl Fn(&mut Graph<f64>, &ParamStore<f64>, Var) -> lifespan::Result<Var>,
) -> (String, f64) {
    let a = randn(&[4, 4, 4], 1.0, 18);
    let b = randn(&[4, 4, 4], 1.0, 19);
    let mut g = Graph::new(Trainable::All);
    let (va, vb) = (g.input_with_grad(a.clone()), g.input_with_grad(b.clone()));
    let l = loss(&mut g, &m.params, va, vb).unwrap();
    let grads = g.backward(l).unwrap();
    let leak = grads
        .wrt(va)
        .is_some_and(|t| t.data().iter().any(|&x| x != 0.0));

    let mut gi = Graph::inference();
    let xa = gi.input(a);
    let fa = features(&mut gi, &m.params, xa).unwrap();
    let target = gi.value(fa).clone();
    let r = gradcheck(&m.params, &[b.clone(), target.clone()], |g, p, v| {
        let f = features(g, p, v[0])?;
        g.mse(f, v[1])
    });

    let mut g2 = Graph::new(Trainable::All);
    let vb2 = g2.input_with_grad(b);
    let t2 = g2.input(target);
    let f2 = features(&mut g2, &m.params, vb2).unwrap();
    let l2 = g2.mse(f2, t2).unwrap();
    let frozen = g2.backward(l2).unwrap();
    let same = g.value(l).item() == g2.value(l2).item()
        && grads.wrt(vb) == frozen.wrt(vb2)
        && frozen
            .params()
            .iter()
            .all(|(id, t)| grads.param(*id) == Some(t));
    let err = if leak || !same { 1.0 } else { r.worst };
    (name.to_string(), err)
}

pub fn feature_losses(m: &Model<f64>) -> Outcome {
    vec![
        detached_loss(
            "loss_identity",
            m,
            |g, p, a, b| {
                objectives::loss_identity(g, a, b, |g, x| m.encoder.extract_identity(g, p, x))
            },
            |g, p, x| m.encoder.extract_identity(g, p, x),
        ),
        detached_loss(
            "loss_shape_reg",
            m,
            |g, p, a, b| {
                objectives::loss_shape_reg(g, a, b, SHAPE_REG_PAIR, |g, x| {
                    m.encoder.extract_shape(g, p, x)
                })
            },
            |g, p, x| m.encoder.extract_shape(g, p, x),
        ),
    ]
}

/// Cycle and reconstruction through a small convolutional map on 4x4 images.
pub fn pixel_losses() -> Outcome {
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let conv = Conv2d::new(
        &mut Builder::new(&mut store, &mut rng, Side::Generator),
        3,
        3,
        3,
        1,
    );
    let map = |g: &mut Graph<f64>, p: &ParamStore<f64>, t: Var| {
        let h = conv.forward(g, p, t)?;
        Ok(lrelu(g, h))
    };
    let x = randn(&[3, 4, 4], 0.5, 21);
    let y = randn(&[3, 4, 4], 0.5, 22);
    let cyc = gradcheck(&store, &[x.clone(), y], |g, p, v| {
        objectives::loss_cycle(g, v[0], v[1], |g, t| map(g, p, t))
    });
    let rec = gradcheck(&store, &[x], |g, p, v| {
        objectives::loss_reconstruction(g, v[0], |g, t| map(g, p, t))
    });
    vec![
        ("loss_cycle".into(), cyc.worst),
        ("loss_reconstruction".into(), rec.worst),
    ]
}

/// Pixel losses through the whole translation network; the encoder needs 8x8
/// inputs.
pub fn model_pixel_losses(m: &Model<f64>) -> Outcome {
    let img = randn(&[3, 8, 8], 0.5, 23).map(f64::tanh);
    let zr = clean_age_code::<f64>(4, 2).unwrap().to_tensor();
    let zt = code(1, 24);
    let rec = gradcheck(&m.params, &[img.clone(), zr.clone()], |g, p, v| {
        objectives::loss_reconstruction(g, v[0], |g, x| m.forward(g, p, x, v[1]))
    });
    let cyc = gradcheck(&m.params, &[img, zt, zr], |g, p, v| {
        let fake = m.forward(g, p, v[0], v[1])?;
        objectives::loss_cycle(g, v[0], fake, |g, x| m.forward(g, p, x, v[2]))
    });
    vec![
        ("loss_reconstruction (model, 8x8)".into(), rec.worst),
        ("loss_cycle (model, 8x8)".into(), cyc.worst),
    ]
}

/// Parameter gradient of the R1 penalty against central differences of its
/// value.
pub fn r1(m: &Model<f64>) -> Outcome {
    let img = randn(&[3, 4, 4], 0.5, 25);
    let z = code(3, 26);
    let gamma = 10.0;
    let base = r1_penalty(m, &m.params, &img, &z, gamma).unwrap();
    let h = 1e-6;
    let mut a = Vec::new();
    let mut n = Vec::new();
    for (id, analytic) in &base.grads {
        let mut s = m.params.clone();
        let len = analytic.numel();
        for k in [0, len / 2, len - 1] {
            let orig = s.get(*id).data()[k];
            s.get_mut(*id).data_mut()[k] = orig + h;
            let up = r1_penalty(m, &s, &img, &z, gamma).unwrap().value;
            s.get_mut(*id).data_mut()[k] = orig - h;
            let down = r1_penalty(m, &s, &img, &z, gamma).unwrap().value;
            s.get_mut(*id).data_mut()[k] = orig;
            a.push(analytic.data()[k]);
            n.push((up - down) / (2.0 * h));
        }
    }
    let diff = a
        .iter()
        .zip(&n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let on_d = base
        .grads
        .iter()
        .all(|(id, _)| m.params.param(*id).side == Side::Discriminator);
    let err = if base.value > 0.0 && on_d && scale > 0.0 {
        diff / scale
    } else {
        1.0
    };
    vec![("r1_penalty".into(), err)]
}

pub fn all() -> Outcome {
    let m = model();
    let mut out = modulate();
    out.extend(embed_age(&m));
    out.extend(shape_transform(&m));
    out.extend(texture_transform(&m));
    out.extend(discriminate(&m));
    out.extend(adversarial(&m));
    out.extend(feature_losses(&m));
    out.extend(pixel_losses());
    out.extend(model_pixel_losses(&m));
    out.extend(r1(&m));
    out
}
