//! Rotary position embeddings in one and two dimensions.
//!
//! A 1D rotary embedding rotates each 2-dimensional group `i` of a `d`-dim
//! vector by `m * theta_i`, with `theta_i = base^(-2i/d)`. The 2D variant
//! splits the vector into an X half and a Y half and applies a 1D rotary
//! embedding of dimension `d/2` to each, driven by the patch column and row.
//!
//! Two memory layouts are supported: [`RopeLayout::AdjacentPairs`] rotates
//! `(2i, 2i+1)` together, [`RopeLayout::RotateHalf`] rotates `(i, i + d/2)`.
//!
//! Frequencies may be rescaled by `g(i) = 1 + alpha * (2i/d)^p`, which leaves
//! group 0 untouched and lifts the slow, high-index groups.

use serde::{Deserialize, Serialize};

use crate::numerics::dot;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeScaling<T> {
    pub alpha: T,
    pub p: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencySchedule<T> {
    base: T,
    head_dim: usize,
    scaling: Option<RopeScaling<T>>,
}

impl<T: Scalar> FrequencySchedule<T> {
    pub fn new(base: T, head_dim: usize, scaling: Option<RopeScaling<T>>) -> Result<Self> {
        if !(base.is_finite() && base > T::zero()) {
            return Err(Error::invalid("base", "must be positive and finite"));
        }
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::invalid("head_dim", format!("{head_dim} is not a positive even count")));
        }
        if let Some(s) = scaling {
            if !(s.alpha.is_finite() && s.alpha >= T::zero()) {
                return Err(Error::invalid("scaling.alpha", "must be nonnegative"));
            }
            if !(s.p.is_finite() && s.p >= T::one()) {
                return Err(Error::invalid("scaling.p", "must be at least 1"));
            }
        }
        Ok(Self {
            base,
            head_dim,
            scaling,
        })
    }

    pub fn unscaled(base: T, head_dim: usize) -> Result<Self> {
        Self::new(base, head_dim, None)
    }

    pub fn base(&self) -> T {
        self.base
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn scaling(&self) -> Option<RopeScaling<T>> {
        self.scaling
    }

    /// `g(i)`; exactly one when scaling is off or `i == 0`.
    pub fn scale_factor(&self, i: usize) -> T {
        match self.scaling {
            None => T::one(),
            Some(_) if i == 0 => T::one(),
            Some(s) => {
                let ratio = T::from_count(2 * i) / T::from_count(self.head_dim);
                T::one() + s.alpha * ratio.powf(s.p)
            }
        }
    }

    /// `theta_i`, rescaled when scaling is set. `i` may reach `d/2`, the
    /// limiting frequency `1/base`.
    pub fn frequency(&self, i: usize) -> Result<T> {
        if 2 * i > self.head_dim {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.head_dim / 2 + 1,
            });
        }
        let exponent = -T::from_count(2 * i) / T::from_count(self.head_dim);
        Ok(self.base.powf(exponent) * self.scale_factor(i))
    }

    /// One frequency per rotation group, `i in 0..d/2`.
    pub fn frequencies(&self) -> Vec<T> {
        (0..self.head_dim / 2)
            .map(|i| self.frequency(i).expect("group index within range"))
            .collect()
    }

    /// Schedule for one axis of a 2D embedding: same base and scaling, half the dimension.
    pub fn axis_schedule(&self) -> Result<Self> {
        if self.head_dim % 4 != 0 {
            return Err(Error::invalid(
                "head_dim",
                format!("{} is not divisible by 4 as 2D RoPE requires", self.head_dim),
            ));
        }
        Self::new(self.base, self.head_dim / 2, self.scaling)
    }
}

pub fn frequency<T: Scalar>(s: &FrequencySchedule<T>, i: usize) -> Result<T> {
    s.frequency(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RopeLayout {
    /// GPT-J style: dimensions `(2i, 2i+1)` form group `i`.
    #[default]
    #[serde(rename = "adjacent")]
    AdjacentPairs,
    /// GPT-NeoX style: dimensions `(i, i + d/2)` form group `i`.
    #[serde(rename = "rotate_half")]
    RotateHalf,
}

impl RopeLayout {
    pub fn as_str(self) -> &'static str {
        match self {
            RopeLayout::AdjacentPairs => "adjacent",
            RopeLayout::RotateHalf => "rotate_half",
        }
    }

    fn pair(self, group: usize, dim: usize) -> (usize, usize) {
        match self {
            RopeLayout::AdjacentPairs => (2 * group, 2 * group + 1),
            RopeLayout::RotateHalf => (group, group + dim / 2),
        }
    }
}

/// Patch coordinates: `x` is the column (width axis), `y` the row (height axis).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PatchPosition {
    pub x: i64,
    pub y: i64,
}

impl PatchPosition {
    pub const ORIGIN: Self = Self { x: 0, y: 0 };

    pub fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn shifted(self, dx: i64, dy: i64) -> Self {
        Self::new(self.x + dx, self.y + dy)
    }
}

/// A frequency table bound to a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Rope<T> {
    freqs: Vec<T>,
    layout: RopeLayout,
}

impl<T: Scalar> Rope<T> {
    pub fn from_frequencies(freqs: Vec<T>, layout: RopeLayout) -> Result<Self> {
        if freqs.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(i) = freqs.iter().position(|f| !f.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { freqs, layout })
    }

    /// 1D embedding over the full head dimension.
    pub fn one_d(schedule: &FrequencySchedule<T>, layout: RopeLayout) -> Self {
        Self {
            freqs: schedule.frequencies(),
            layout,
        }
    }

    /// 2D embedding: each half uses the schedule at dimension `d/2`.
    pub fn two_d(schedule: &FrequencySchedule<T>, layout: RopeLayout) -> Result<Self> {
        Ok(Self {
            freqs: schedule.axis_schedule()?.frequencies(),
            layout,
        })
    }

    pub fn frequencies(&self) -> &[T] {
        &self.freqs
    }

    pub fn layout(&self) -> RopeLayout {
        self.layout
    }

    /// Vector dimension this table rotates in 1D.
    pub fn dim_1d(&self) -> usize {
        2 * self.freqs.len()
    }

    /// Vector dimension this table rotates in 2D.
    pub fn dim_2d(&self) -> usize {
        4 * self.freqs.len()
    }

    fn rotate(&self, v: &mut [T], position: i64) {
        let dim = v.len();
        let m = T::lit(position as f64);
        for (group, &theta) in self.freqs.iter().enumerate() {
            let (a, b) = self.layout.pair(group, dim);
            let (sin, cos) = (m * theta).sin_cos();
            let (xa, xb) = (v[a], v[b]);
            v[a] = xa * cos - xb * sin;
            v[b] = xb * cos + xa * sin;
        }
    }

    pub fn apply_1d(&self, v: &[T], m: i64) -> Result<Vec<T>> {
        if v.len() != self.dim_1d() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_1d(),
                got: v.len(),
            });
        }
        let mut out = v.to_vec();
        self.rotate(&mut out, m);
        Ok(out)
    }

    pub fn apply_2d(&self, v: &[T], pos: PatchPosition) -> Result<Vec<T>> {
        if v.len() != self.dim_2d() {
            return Err(Error::DimensionMismatch {
                expected: self.dim_2d(),
                got: v.len(),
            });
        }
        let mut out = v.to_vec();
        let (x_half, y_half) = out.split_at_mut(v.len() / 2);
        self.rotate(x_half, pos.x);
        self.rotate(y_half, pos.y);
        Ok(out)
    }

    pub fn dot_1d(&self, q: &[T], m: i64, k: &[T], n: i64) -> Result<T> {
        Ok(dot(&self.apply_1d(q, m)?, &self.apply_1d(k, n)?))
    }

    pub fn dot_2d(&self, q: &[T], qpos: PatchPosition, k: &[T], kpos: PatchPosition) -> Result<T> {
        Ok(dot(&self.apply_2d(q, qpos)?, &self.apply_2d(k, kpos)?))
    }
}

pub fn apply_rope_1d<T: Scalar>(
    v: &[T],
    m: i64,
    s: &FrequencySchedule<T>,
    layout: RopeLayout,
) -> Result<Vec<T>> {
    Rope::one_d(s, layout).apply_1d(v, m)
}

pub fn apply_rope_2d<T: Scalar>(
    v: &[T],
    pos: PatchPosition,
    s: &FrequencySchedule<T>,
    layout: RopeLayout,
) -> Result<Vec<T>> {
    Rope::two_d(s, layout)?.apply_2d(v, pos)
}

pub fn rope_dot_1d<T: Scalar>(
    q: &[T],
    m: i64,
    k: &[T],
    n: i64,
    s: &FrequencySchedule<T>,
    layout: RopeLayout,
) -> Result<T> {
    if q.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            got: k.len(),
        });
    }
    Rope::one_d(s, layout).dot_1d(q, m, k, n)
}

pub fn rope_dot_2d<T: Scalar>(
    q: &[T],
    qpos: PatchPosition,
    k: &[T],
    kpos: PatchPosition,
    s: &FrequencySchedule<T>,
    layout: RopeLayout,
) -> Result<T> {
    if q.len() != k.len() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            got: k.len(),
        });
    }
    Rope::two_d(s, layout)?.dot_2d(q, qpos, k, kpos)
}

/// Permutation `pi` with `RotateHalf(v[pi]) == AdjacentPairs(v)[pi]`: the
/// even dimensions go to the first half, the odd ones to the second.
pub fn layout_permutation(d: usize) -> Result<Vec<usize>> {
    if d % 2 != 0 {
        return Err(Error::invalid("d", format!("{d} is odd")));
    }
    let half = d / 2;
    Ok((0..d)
        .map(|j| if j < half { 2 * j } else { 2 * (j - half) + 1 })
        .collect())
}

/// `out[j] = v[perm[j]]`.
pub fn permute<T: Copy>(v: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| v[i]).collect()
}

/// Serialized schedule plus layout, as it appears in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RopeConfig {
    pub base: f64,
    pub head_dim: usize,
    #[serde(default)]
    pub scaling: Option<RopeScaling<f64>>,
    #[serde(default)]
    pub layout: RopeLayout,
}

impl Default for RopeConfig {
    fn default() -> Self {
        Self {
            base: 10_000.0,
            head_dim: 64,
            scaling: None,
            layout: RopeLayout::AdjacentPairs,
        }
    }
}

impl RopeConfig {
    pub fn schedule<T: Scalar>(&self) -> Result<FrequencySchedule<T>> {
        FrequencySchedule::new(
            T::lit(self.base),
            self.head_dim,
            self.scaling.map(|s| RopeScaling {
                alpha: T::lit(s.alpha),
                p: T::lit(s.p),
            }),
        )
    }
}
