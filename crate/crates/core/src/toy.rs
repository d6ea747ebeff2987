//! Procedural masked "faces" for smoke tests and the overfit experiment.
//! Face proportions and skin texture follow the age group; tone, eye spacing,
//! mouth width and hair colour follow the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::age::NUM_GROUPS;
use crate::data::InMemory;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
struct Identity {
    skin: [f64; 3],
    hair: [f64; 3],
    eye_gap: f64,
    mouth: f64,
}

impl Identity {
    fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tone = rng.random_range(0.35..0.9);
        Self {
            skin: [
                tone,
                tone * rng.random_range(0.7..0.85),
                tone * rng.random_range(0.55..0.7),
            ],
            hair: [
                rng.random_range(0.05..0.5),
                rng.random_range(0.03..0.3),
                rng.random_range(0.0..0.2),
            ],
            eye_gap: rng.random_range(0.16..0.24),
            mouth: rng.random_range(0.1..0.2),
        }
    }
}

/// One `size`x`size` image of `identity` at age group `group`, in [-1, 1]
/// with a -1 background.
pub fn toy_face<T: Scalar>(identity: u64, group: usize, size: usize) -> Result<Tensor<T>> {
    if group >= NUM_GROUPS {
        return Err(Error::InvalidGroup(group as i64));
    }
    let id = Identity::draw(identity);
    let age = group as f64 / (NUM_GROUPS - 1) as f64;
    // children: round face, features low; elders: long face, wrinkles, grey hair
    let rx = 0.36 - 0.04 * age;
    let ry = 0.34 + 0.08 * age;
    let eye_y = 0.08 - 0.1 * age;
    let wrinkle = (age - 0.4).max(0.0) * 0.5;
    let grey = (age - 0.5).max(0.0) * 1.6;
    let hair: Vec<f64> = id
        .hair
        .iter()
        .map(|&h| h + (0.8 - h) * grey.min(1.0))
        .collect();

    let mut data = vec![T::zero(); 3 * size * size];
    for py in 0..size {
        for px in 0..size {
            let x = (px as f64 + 0.5) / size as f64 - 0.5;
            let y = (py as f64 + 0.5) / size as f64 - 0.5;
            let inside = (x / rx).powi(2) + (y / ry).powi(2);
            let mut rgb = [0.0; 3];
            if inside <= 1.0 {
                rgb = id.skin;
                let shade = 1.0 - 0.25 * inside;
                let lines = wrinkle * (0.5 + 0.5 * (y * 90.0).sin()) * (x.abs() * 3.0).min(1.0);
                for c in &mut rgb {
                    *c *= shade * (1.0 - lines);
                }
                let in_hair = y < -ry * (0.55 - 0.1 * age);
                let eye = ((x.abs() - id.eye_gap).powi(2) + (y - eye_y).powi(2)).sqrt() < 0.035;
                let mouth = (y - (eye_y + 0.2)).abs() < 0.015 && x.abs() < id.mouth;
                if in_hair {
                    rgb = [hair[0], hair[1], hair[2]];
                } else if eye {
                    rgb = [0.05, 0.05, 0.08];
                } else if mouth {
                    rgb = [0.55, 0.15, 0.15];
                }
            }
            for c in 0..3 {
                data[(c * size + py) * size + px] = T::from_f64_lossy(rgb[c] * 2.0 - 1.0);
            }
        }
    }
    Tensor::new(vec![3, size, size], data)
}

/// `per_group` distinct identities for every group in `groups`.
pub fn toy_dataset<T: Scalar>(
    groups: &[usize],
    per_group: usize,
    size: usize,
    seed: u64,
) -> Result<InMemory<T>> {
    let mut samples = Vec::with_capacity(groups.len() * per_group);
    for (gi, &g) in groups.iter().enumerate() {
        for k in 0..per_group {
            let identity = seed
                .wrapping_mul(1_000_003)
                .wrapping_add((gi * per_group + k) as u64);
            samples.push((toy_face(identity, g, size)?, g));
        }
    }
    Ok(InMemory { samples })
}
