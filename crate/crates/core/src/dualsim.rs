//! Idealized two-object attention with 2D rotary positions.
//!
//! Two single-patch objects A (satellite) and B (nucleus) sit on a patch
//! grid with B at the origin. The attention layer keeps only the
//! query-key dot products and the weighted sum over values: no scale,
//! softmax, or output projection. Each output is then a weighted sum of
//! `v_A` and `v_B` whose weights are available in closed form.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{dot, softmax_in_place, RandomSource};
use crate::rope::{PatchPosition, Rope, RopeLayout};
use crate::{Error, Result, Scalar};

/// Where the satellite A sits relative to the nucleus B.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Left,
    Right,
    Front,
    Behind,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Left, Relation::Right, Relation::Front, Relation::Behind];

    /// Satellite offset from the nucleus in patch units: Left/Right move
    /// along X, Front/Behind along Y.
    pub fn offset(self, m: u32, n: u32) -> PatchPosition {
        let (m, n) = (m as i64, n as i64);
        match self {
            Relation::Left => PatchPosition::new(-m, 0),
            Relation::Right => PatchPosition::new(m, 0),
            Relation::Front => PatchPosition::new(0, n),
            Relation::Behind => PatchPosition::new(0, -n),
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Relation::Left => Relation::Right,
            Relation::Right => Relation::Left,
            Relation::Front => Relation::Behind,
            Relation::Behind => Relation::Front,
        }
    }

    pub fn is_horizontal(self) -> bool {
        matches!(self, Relation::Left | Relation::Right)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Left => "left",
            Relation::Right => "right",
            Relation::Front => "front",
            Relation::Behind => "behind",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid("relation", format!("unknown relation {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneObject {
    A,
    B,
}

/// One token of the two-object input sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SceneToken {
    pub object: SceneObject,
    pub position: PatchPosition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoObjectScene<T> {
    pub q_a: [T; 4],
    pub k_a: [T; 4],
    pub v_a: [T; 4],
    pub q_b: [T; 4],
    pub k_b: [T; 4],
    pub v_b: [T; 4],
    pub relation: Relation,
    /// X-axis offset in patches (Left/Right).
    pub m: u32,
    /// Y-axis offset in patches (Front/Behind).
    pub n: u32,
    /// The single rotary frequency of the 4-dim model.
    pub theta: T,
}

impl<T: Scalar> TwoObjectScene<T> {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::invalid("m/n", "offsets must be at least 1"));
        }
        if !(self.theta.is_finite() && self.theta > T::zero()) {
            return Err(Error::invalid("theta", "must be positive and finite"));
        }
        let all = [self.q_a, self.k_a, self.v_a, self.q_b, self.k_b, self.v_b];
        if all.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::invalid("vectors", "entries must be finite"));
        }
        Ok(())
    }

    /// Standard-normal q/k/v, offsets in `1..=8`, `theta` in `[0.05, 2)`.
    pub fn random(rng: &mut RandomSource, relation: Relation) -> Self {
        let mut v4 = || -> [T; 4] { std::array::from_fn(|_| T::lit(rng.normal())) };
        let (q_a, k_a, v_a, q_b, k_b, v_b) = (v4(), v4(), v4(), v4(), v4(), v4());
        Self {
            q_a,
            k_a,
            v_a,
            q_b,
            k_b,
            v_b,
            relation,
            m: 1 + rng.index(8) as u32,
            n: 1 + rng.index(8) as u32,
            theta: T::lit(rng.uniform(0.05, 2.0)),
        }
    }

    pub fn with_relation(&self, relation: Relation) -> Self {
        Self { relation, ..*self }
    }

    pub fn satellite_position(&self) -> PatchPosition {
        self.relation.offset(self.m, self.n)
    }

    /// Tokens in raster-scan order (row by row, then column).
    pub fn tokens(&self) -> [SceneToken; 2] {
        let a = SceneToken {
            object: SceneObject::A,
            position: self.satellite_position(),
        };
        let b = SceneToken {
            object: SceneObject::B,
            position: PatchPosition::ORIGIN,
        };
        if (a.position.y, a.position.x) < (b.position.y, b.position.x) {
            [a, b]
        } else {
            [b, a]
        }
    }

    /// The single-frequency table this scene is rotated with.
    pub fn rope(&self) -> Rope<T> {
        Rope::from_frequencies(vec![self.theta], RopeLayout::AdjacentPairs)
            .expect("validated theta")
    }
}

/// Attention outputs at the positions of A and B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectOutputs<T> {
    pub h_a: [T; 4],
    pub h_b: [T; 4],
}

/// Weights of `v_A` and `v_B` inside each output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputCoefficients<T> {
    pub a_on_va: T,
    pub a_on_vb: T,
    pub b_on_va: T,
    pub b_on_vb: T,
}

fn half<T: Scalar>(v: &[T; 4], upper: bool) -> [T; 2] {
    if upper {
        [v[2], v[3]]
    } else {
        [v[0], v[1]]
    }
}

/// `Re[q conj(k) e^{i phi}]` for a 2-dim (complex) pair, expanded:
/// `(q0 k0 + q1 k1) cos phi + (q0 k1 - q1 k0) sin phi`.
fn rotated_product<T: Scalar>(q: [T; 2], k: [T; 2], phi: T) -> T {
    let (sin, cos) = phi.sin_cos();
    (q[0] * k[0] + q[1] * k[1]) * cos + (q[0] * k[1] - q[1] * k[0]) * sin
}

fn pair_product<T: Scalar>(q: &[T; 4], k: &[T; 4], phi_x: T, phi_y: T) -> T {
    rotated_product(half(q, false), half(k, false), phi_x) + rotated_product(half(q, true), half(k, true), phi_y)
}

pub fn closed_form_coefficients<T: Scalar>(scene: &TwoObjectScene<T>) -> OutputCoefficients<T> {
    let offset = scene.satellite_position();
    let phi_x = T::lit(offset.x as f64) * scene.theta;
    let phi_y = T::lit(offset.y as f64) * scene.theta;
    let zero = T::zero();
    OutputCoefficients {
        a_on_va: pair_product(&scene.q_a, &scene.k_a, zero, zero),
        a_on_vb: pair_product(&scene.q_a, &scene.k_b, phi_x, phi_y),
        b_on_va: pair_product(&scene.q_b, &scene.k_a, -phi_x, -phi_y),
        b_on_vb: pair_product(&scene.q_b, &scene.k_b, zero, zero),
    }
}

fn combine<T: Scalar>(ca: T, va: &[T; 4], cb: T, vb: &[T; 4]) -> [T; 4] {
    std::array::from_fn(|i| ca * va[i] + cb * vb[i])
}

/// `h_A` and `h_B` from the real-valued expansion of the rotated dot products.
pub fn closed_form_outputs<T: Scalar>(scene: &TwoObjectScene<T>) -> ObjectOutputs<T> {
    let c = closed_form_coefficients(scene);
    ObjectOutputs {
        h_a: combine(c.a_on_va, &scene.v_a, c.a_on_vb, &scene.v_b),
        h_b: combine(c.b_on_va, &scene.v_a, c.b_on_vb, &scene.v_b),
    }
}

fn check_lengths<T>(qs: &[Vec<T>], ks: &[Vec<T>], vs: &[Vec<T>], positions: &[PatchPosition]) -> Result<()> {
    for len in [ks.len(), vs.len(), positions.len()] {
        if len != qs.len() {
            return Err(Error::DimensionMismatch {
                expected: qs.len(),
                got: len,
            });
        }
    }
    if qs.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn rotated_scores<T: Scalar>(
    qs: &[Vec<T>],
    ks: &[Vec<T>],
    positions: &[PatchPosition],
    rope: &Rope<T>,
) -> Result<Vec<Vec<T>>> {
    let rq = qs
        .iter()
        .zip(positions)
        .map(|(q, &p)| rope.apply_2d(q, p))
        .collect::<Result<Vec<_>>>()?;
    let rk = ks
        .iter()
        .zip(positions)
        .map(|(k, &p)| rope.apply_2d(k, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(rq.iter().map(|q| rk.iter().map(|k| dot(q, k)).collect()).collect())
}

fn weighted_sum<T: Scalar>(weights: &[T], vs: &[Vec<T>]) -> Vec<T> {
    let mut out = vec![T::zero(); vs[0].len()];
    for (&w, v) in weights.iter().zip(vs) {
        for (o, &x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    out
}

/// Bidirectional, unnormalized attention: `out_i = sum_j <R q_i, R k_j> v_j`.
pub fn simplified_attention<T: Scalar>(
    qs: &[Vec<T>],
    ks: &[Vec<T>],
    vs: &[Vec<T>],
    positions: &[PatchPosition],
    rope: &Rope<T>,
) -> Result<Vec<Vec<T>>> {
    check_lengths(qs, ks, vs, positions)?;
    let scores = rotated_scores(qs, ks, positions, rope)?;
    Ok(scores.iter().map(|w| weighted_sum(w, vs)).collect())
}

/// Reference attention with softmax over `score / scale`.
pub fn full_attention<T: Scalar>(
    qs: &[Vec<T>],
    ks: &[Vec<T>],
    vs: &[Vec<T>],
    positions: &[PatchPosition],
    rope: &Rope<T>,
    scale: T,
) -> Result<Vec<Vec<T>>> {
    check_lengths(qs, ks, vs, positions)?;
    if !(scale > T::zero()) {
        return Err(Error::invalid("scale", "must be positive"));
    }
    let mut scores = rotated_scores(qs, ks, positions, rope)?;
    Ok(scores
        .iter_mut()
        .map(|w| {
            w.iter_mut().for_each(|x| *x = *x / scale);
            softmax_in_place(w);
            weighted_sum(w, vs)
        })
        .collect())
}

/// Runs the scene through [`simplified_attention`] in raster order and
/// returns the outputs at A and B.
pub fn attention_outputs<T: Scalar>(scene: &TwoObjectScene<T>) -> Result<ObjectOutputs<T>> {
    let tokens = scene.tokens();
    let pick = |obj: SceneObject, a: &[T; 4], b: &[T; 4]| match obj {
        SceneObject::A => a.to_vec(),
        SceneObject::B => b.to_vec(),
    };
    let qs: Vec<_> = tokens.iter().map(|t| pick(t.object, &scene.q_a, &scene.q_b)).collect();
    let ks: Vec<_> = tokens.iter().map(|t| pick(t.object, &scene.k_a, &scene.k_b)).collect();
    let vs: Vec<_> = tokens.iter().map(|t| pick(t.object, &scene.v_a, &scene.v_b)).collect();
    let positions: Vec<_> = tokens.iter().map(|t| t.position).collect();
    let out = simplified_attention(&qs, &ks, &vs, &positions, &scene.rope())?;
    let mut h_a = [T::zero(); 4];
    let mut h_b = [T::zero(); 4];
    for (t, o) in tokens.iter().zip(out) {
        let slot = match t.object {
            SceneObject::A => &mut h_a,
            SceneObject::B => &mut h_b,
        };
        slot.copy_from_slice(&o);
    }
    Ok(ObjectOutputs { h_a, h_b })
}

/// On-disk scene fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFixture {
    #[serde(rename = "qA")]
    pub q_a: [f64; 4],
    #[serde(rename = "kA")]
    pub k_a: [f64; 4],
    #[serde(rename = "vA")]
    pub v_a: [f64; 4],
    #[serde(rename = "qB")]
    pub q_b: [f64; 4],
    #[serde(rename = "kB")]
    pub k_b: [f64; 4],
    #[serde(rename = "vB")]
    pub v_b: [f64; 4],
    pub relation: Relation,
    pub m: u32,
    pub n: u32,
    pub theta: f64,
}

impl TryFrom<SceneFixture> for TwoObjectScene<f64> {
    type Error = Error;

    fn try_from(f: SceneFixture) -> Result<Self> {
        let scene = TwoObjectScene {
            q_a: f.q_a,
            k_a: f.k_a,
            v_a: f.v_a,
            q_b: f.q_b,
            k_b: f.k_b,
            v_b: f.v_b,
            relation: f.relation,
            m: f.m,
            n: f.n,
            theta: f.theta,
        };
        scene.validate()?;
        Ok(scene)
    }
}

impl From<&TwoObjectScene<f64>> for SceneFixture {
    fn from(s: &TwoObjectScene<f64>) -> Self {
        Self {
            q_a: s.q_a,
            k_a: s.k_a,
            v_a: s.v_a,
            q_b: s.q_b,
            k_b: s.k_b,
            v_b: s.v_b,
            relation: s.relation,
            m: s.m,
            n: s.n,
            theta: s.theta,
        }
    }
}
