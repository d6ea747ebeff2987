#![allow(dead_code)]

pub mod suite;

use lifespan::{Architecture, Graph, ModelConfig, ParamStore, Tensor, Trainable, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Smallest configuration the encoder accepts: 8x8 images.
pub fn tiny_config(arch: Architecture) -> ModelConfig {
    ModelConfig {
        block: 2,
        channels: 4,
        image_size: 8,
        encoder_widths: [2, 4],
        generator_widths: [4, 3],
        demodulate: true,
        architecture: arch,
    }
}

pub fn randn(shape: &[usize], std: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape.to_vec(), std, &mut rng)
}

pub fn image64(size: usize, seed: u64) -> Tensor<f64> {
    randn(&[3, size, size], 0.5, seed).map(|v| v.tanh())
}

pub fn image32(size: usize, seed: u64) -> Tensor<f32> {
    image64(size, seed).cast()
}

const H: f64 = 1e-6;
const MAX_ENTRIES: usize = 16;

/// Entries to probe: all of a small tensor, an even spread of a large one.
fn probe_indices(n: usize) -> Vec<usize> {
    if n <= MAX_ENTRIES {
        (0..n).collect()
    } else {
        (0..MAX_ENTRIES)
            .map(|k| k * (n - 1) / (MAX_ENTRIES - 1))
            .collect()
    }
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale =
        a.iter().map(|x| x * x).sum::<f64>().sqrt() + n.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Debug)]
pub struct GradCheck {
    pub worst: f64,
    pub worst_at: String,
    pub tensors: usize,
}

/// Compare reverse-mode gradients of a scalar graph against central
/// differences, over every input and every parameter in `store`.
pub fn gradcheck<F>(store: &ParamStore<f64>, inputs: &[Tensor<f64>], build: F) -> GradCheck
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> lifespan::Result<Var>,
{
    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| {
        let mut g = Graph::inference();
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let y = build(&mut g, store, &vars).expect("graph builds");
        g.value(y).item()
    };
    let mut g = Graph::new(Trainable::All);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.input_with_grad(t.clone()))
        .collect();
    let y = build(&mut g, store, &vars).expect("graph builds");
    let grads = g.backward(y).expect("backward");

    let mut report = GradCheck {
        worst: 0.0,
        worst_at: String::new(),
        tensors: 0,
    };
    let mut record = |name: String, a: Vec<f64>, n: Vec<f64>| {
        let e = rel_err(&a, &n);
        report.tensors += 1;
        if e > report.worst {
            report.worst = e;
            report.worst_at = name;
        }
    };

    for (i, (v, t)) in vars.iter().zip(inputs).enumerate() {
        let full = grads
            .wrt(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
        let idx = probe_indices(t.numel());
        let mut a = Vec::new();
        let mut n = Vec::new();
        for &k in &idx {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[k] += H;
            let up = eval(store, &xs);
            xs[i].data_mut()[k] -= 2.0 * H;
            let down = eval(store, &xs);
            a.push(full.data()[k]);
            n.push((up - down) / (2.0 * H));
        }
        record(format!("input {i}"), a, n);
    }
    for (id, p) in store.iter() {
        let full = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec()));
        let mut s = store.clone();
        let mut a = Vec::new();
        let mut n = Vec::new();
        for k in probe_indices(p.value.numel()) {
            let orig = s.get(id).data()[k];
            s.get_mut(id).data_mut()[k] = orig + H;
            let up = eval(&s, inputs);
            s.get_mut(id).data_mut()[k] = orig - H;
            let down = eval(&s, inputs);
            s.get_mut(id).data_mut()[k] = orig;
            a.push(full.data()[k]);
            n.push((up - down) / (2.0 * H));
        }
        record(p.name.clone(), a, n);
    }
    report
}

/// Parameters of a model perturbed away from their structured
/// initialization so that gates and modulation scales are non-trivial.
pub fn jitter(store: &mut ParamStore<f64>, std: f64, seed: u64) {
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for (k, id) in ids.into_iter().enumerate() {
        let shape = store.get(id).shape().to_vec();
        let noise = randn(&shape, std, seed.wrapping_add(k as u64));
        store.get_mut(id).add_assign(&noise);
    }
}
