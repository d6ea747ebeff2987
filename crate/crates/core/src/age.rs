//! Age groups and block-structured age codes.
//!
//! Group `i` owns the `N` code entries `[i*N, (i+1)*N)`. A code is the block
//! indicator of its group, optionally perturbed by Gaussian noise, or a convex
//! combination of two neighbouring indicators for fine-grained synthesis.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NUM_GROUPS: usize = 6;

/// Inclusive calendar-age range of one group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgeRange {
    pub index: usize,
    pub min_years: f64,
    pub max_years: f64,
}

impl AgeRange {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min_years + self.max_years)
    }

    pub fn contains(&self, age: f64) -> bool {
        age >= self.min_years && age <= self.max_years
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgeGroupTable {
    groups: [AgeRange; NUM_GROUPS],
}

impl Default for AgeGroupTable {
    fn default() -> Self {
        let r = [
            (0.0, 2.0),
            (3.0, 6.0),
            (7.0, 9.0),
            (15.0, 19.0),
            (30.0, 39.0),
            (50.0, 59.0),
        ];
        Self::new(r).expect("default table is valid")
    }
}

impl AgeGroupTable {
    /// Ranges must be increasing and non-overlapping.
    pub fn new(ranges: [(f64, f64); NUM_GROUPS]) -> Result<Self> {
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo <= hi) {
                return Err(Error::Config(format!("group {i}: empty range {lo}-{hi}")));
            }
            if i > 0 && lo <= ranges[i - 1].1 {
                return Err(Error::Config(format!("group {i} overlaps group {}", i - 1)));
            }
        }
        let groups = std::array::from_fn(|i| AgeRange {
            index: i,
            min_years: ranges[i].0,
            max_years: ranges[i].1,
        });
        Ok(Self { groups })
    }

    pub fn groups(&self) -> &[AgeRange; NUM_GROUPS] {
        &self.groups
    }

    /// Group containing `age`; ages falling between ranges go to the group
    /// with the nearest midpoint, ties to the lower group. Ages beyond the
    /// last range map to the last group.
    pub fn group_of_age(&self, age: f64) -> Result<usize> {
        if !age.is_finite() || age < 0.0 {
            return Err(Error::InvalidAge(age));
        }
        if let Some(g) = self.groups.iter().find(|g| g.contains(age)) {
            return Ok(g.index);
        }
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for g in &self.groups {
            let d = (age - g.midpoint()).abs();
            if d < best_d {
                best = g.index;
                best_d = d;
            }
        }
        Ok(best)
    }
}

pub fn group_of_age(age: f64) -> Result<usize> {
    AgeGroupTable::default().group_of_age(age)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgeCode<T> {
    values: Vec<T>,
    block: usize,
    group_lo: usize,
    group_hi: usize,
    alpha: f64,
}

impl<T: Scalar> AgeCode<T> {
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Block length `N`.
    pub fn block(&self) -> usize {
        self.block
    }

    pub fn group_lo(&self) -> usize {
        self.group_lo
    }

    pub fn group_hi(&self) -> usize {
        self.group_hi
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new([self.values.len()], self.values.clone()).expect("vector shape")
    }

    pub fn cast<U: Scalar>(&self) -> AgeCode<U> {
        AgeCode {
            values: self
                .values
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
            block: self.block,
            group_lo: self.group_lo,
            group_hi: self.group_hi,
            alpha: self.alpha,
        }
    }
}

fn check_group(i: usize) -> Result<()> {
    if i >= NUM_GROUPS {
        return Err(Error::InvalidGroup(i as i64));
    }
    Ok(())
}

fn indicator<T: Scalar>(i: usize, block: usize) -> Vec<T> {
    let mut v = vec![T::zero(); NUM_GROUPS * block];
    v[i * block..(i + 1) * block].fill(T::one());
    v
}

/// Indicator of group `i` plus i.i.d. `N(0, noise_scale^2)` noise.
pub fn make_age_code<T: Scalar, R: Rng + ?Sized>(
    i: usize,
    block: usize,
    noise_scale: f64,
    rng: &mut R,
) -> Result<AgeCode<T>> {
    check_group(i)?;
    if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
        return Err(Error::Config(format!(
            "noise scale must be >= 0, got {noise_scale}"
        )));
    }
    let mut values = indicator::<T>(i, block);
    if noise_scale > 0.0 {
        let normal = Normal::new(0.0, noise_scale).expect("valid std");
        for v in &mut values {
            *v += T::from_f64_lossy(normal.sample(rng));
        }
    }
    Ok(AgeCode {
        values,
        block,
        group_lo: i,
        group_hi: i,
        alpha: 0.0,
    })
}

/// Noise-free code of group `i`.
pub fn clean_age_code<T: Scalar>(i: usize, block: usize) -> Result<AgeCode<T>> {
    check_group(i)?;
    Ok(AgeCode {
        values: indicator(i, block),
        block,
        group_lo: i,
        group_hi: i,
        alpha: 0.0,
    })
}

/// `(1 - alpha) * 1_i + alpha * 1_{i+1}`, noise free.
pub fn interpolate_age_code<T: Scalar>(i: usize, alpha: f64, block: usize) -> Result<AgeCode<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    check_group(i)?;
    if alpha == 0.0 {
        return clean_age_code(i, block);
    }
    if i + 1 >= NUM_GROUPS {
        return Err(Error::InvalidGroup(i as i64 + 1));
    }
    let mut values = vec![T::zero(); NUM_GROUPS * block];
    let a = T::from_f64_lossy(alpha);
    values[i * block..(i + 1) * block].fill(T::one() - a);
    values[(i + 1) * block..(i + 2) * block].fill(a);
    Ok(AgeCode {
        values,
        block,
        group_lo: i,
        group_hi: i + 1,
        alpha,
    })
}
