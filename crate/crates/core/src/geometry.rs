//! Direction vectors between satellite and nucleus, their split into
//! relation-independent and relation-discriminating parts, embedding
//! interventions, object erasure, sampled direction clouds and the
//! per-axis attention split.

use crate::dualsim::{closed_form_outputs, Relation, TwoObjectScene};
use crate::numerics::{dot, mean_pool, norm, softmax_in_place, Matrix, Pca, RandomSource};
use crate::{Error, Result, Scalar};

/// `v^r = h_S - h_N` for relation `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionVector<T> {
    pub relation: Relation,
    pub v: Vec<T>,
}

pub fn direction_vector<T: Scalar>(h_s: &[T], h_n: &[T], relation: Relation) -> Result<DirectionVector<T>> {
    if h_s.len() != h_n.len() {
        return Err(Error::DimensionMismatch {
            expected: h_s.len(),
            got: h_n.len(),
        });
    }
    Ok(DirectionVector {
        relation,
        v: h_s.iter().zip(h_n).map(|(&a, &b)| a - b).collect(),
    })
}

/// `k1..k4` for one axis: `k1 = <q_B, k_A>`, `k2 = <q_A, k_B>`,
/// `k3 = cross(q_B, k_A)`, `k4 = cross(q_A, k_B)` on that axis' pair,
/// with `cross(q, k) = q0 k1 - q1 k0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyCoefficients<T> {
    pub k1: T,
    pub k2: T,
    pub k3: T,
    pub k4: T,
}

impl<T: Scalar> KeyCoefficients<T> {
    fn for_axis(scene: &TwoObjectScene<T>, offset: usize) -> Self {
        let pair = |v: &[T; 4]| [v[offset], v[offset + 1]];
        let (qa, ka, qb, kb) = (pair(&scene.q_a), pair(&scene.k_a), pair(&scene.q_b), pair(&scene.k_b));
        let inner = |q: [T; 2], k: [T; 2]| q[0] * k[0] + q[1] * k[1];
        let cross = |q: [T; 2], k: [T; 2]| q[0] * k[1] - q[1] * k[0];
        Self {
            k1: inner(qb, ka),
            k2: inner(qa, kb),
            k3: cross(qb, ka),
            k4: cross(qa, kb),
        }
    }
}

/// The same direction vector written as a relation-independent part plus
/// cosine and sine terms per axis. `phi` is `m * theta` on X and `n * theta`
/// on Y, signed by the satellite offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiveTermLayout<T> {
    pub v_common: [T; 4],
    pub x_cos: [T; 4],
    pub y_cos: [T; 4],
    pub x_sin: [T; 4],
    pub y_sin: [T; 4],
}

impl<T: Scalar> FiveTermLayout<T> {
    pub fn sum(&self) -> [T; 4] {
        std::array::from_fn(|i| self.v_common[i] + self.x_cos[i] + self.y_cos[i] + self.x_sin[i] + self.y_sin[i])
    }
}

/// Direction vector of a two-object scene split into a part shared with
/// the opposite relation and the key terms that tell the two apart.
///
/// For Left/Right: `v = common -/+ key_x` with `key_x = c3 v_A + c4 v_B`.
/// For Behind/Front: `v = common -/+ key_y` with
/// `key_y = (k3y v_A + k4y v_B) sin(n theta)`; here `c3 = c4 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionDecomposition<T> {
    pub relation: Relation,
    pub common: [T; 4],
    pub key_x: [T; 4],
    pub key_y: [T; 4],
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub c4: T,
    pub kx: KeyCoefficients<T>,
    pub ky: KeyCoefficients<T>,
    pub five_terms: FiveTermLayout<T>,
}

fn lin<T: Scalar>(a: T, va: &[T; 4], b: T, vb: &[T; 4]) -> [T; 4] {
    std::array::from_fn(|i| a * va[i] + b * vb[i])
}

impl<T: Scalar> DirectionDecomposition<T> {
    /// `-1` when the satellite sits at a negative offset (Left, Behind).
    pub fn key_sign(&self) -> T {
        match self.relation {
            Relation::Left | Relation::Behind => -T::one(),
            Relation::Right | Relation::Front => T::one(),
        }
    }

    /// Key X term as it enters the direction vector.
    pub fn signed_key_x(&self) -> [T; 4] {
        self.key_x.map(|x| self.key_sign() * x)
    }

    pub fn signed_key_y(&self) -> [T; 4] {
        self.key_y.map(|x| self.key_sign() * x)
    }

    pub fn reassemble(&self) -> [T; 4] {
        let s = self.key_sign();
        std::array::from_fn(|i| self.common[i] + s * (self.key_x[i] + self.key_y[i]))
    }
}

pub fn decompose<T: Scalar>(scene: &TwoObjectScene<T>) -> DirectionDecomposition<T> {
    let kx = KeyCoefficients::for_axis(scene, 0);
    let ky = KeyCoefficients::for_axis(scene, 2);
    let offset = scene.satellite_position();
    let phi_x = T::lit(offset.x as f64) * scene.theta;
    let phi_y = T::lit(offset.y as f64) * scene.theta;
    let self_a = dot(&scene.q_a, &scene.k_a);
    let self_b = dot(&scene.q_b, &scene.k_b);
    let (va, vb) = (&scene.v_a, &scene.v_b);

    let c1 = self_a - kx.k1 * phi_x.cos() - ky.k1 * phi_y.cos();
    let c2 = kx.k2 * phi_x.cos() + ky.k2 * phi_y.cos() - self_b;
    let zero = [T::zero(); 4];
    let (c3, c4, key_x, key_y) = if scene.relation.is_horizontal() {
        let s = phi_x.abs().sin();
        let (c3, c4) = (kx.k3 * s, kx.k4 * s);
        (c3, c4, lin(c3, va, c4, vb), zero)
    } else {
        let s = phi_y.abs().sin();
        (T::zero(), T::zero(), zero, lin(ky.k3 * s, va, ky.k4 * s, vb))
    };

    let five_terms = FiveTermLayout {
        v_common: lin(self_a, va, -self_b, vb),
        x_cos: lin(-kx.k1 * phi_x.cos(), va, kx.k2 * phi_x.cos(), vb),
        y_cos: lin(-ky.k1 * phi_y.cos(), va, ky.k2 * phi_y.cos(), vb),
        x_sin: lin(kx.k3 * phi_x.sin(), va, kx.k4 * phi_x.sin(), vb),
        y_sin: lin(ky.k3 * phi_y.sin(), va, ky.k4 * phi_y.sin(), vb),
    };

    DirectionDecomposition {
        relation: scene.relation,
        common: lin(c1, va, c2, vb),
        key_x,
        key_y,
        c1,
        c2,
        c3,
        c4,
        kx,
        ky,
        five_terms,
    }
}

/// Direction vector of a scene straight from its closed-form outputs.
pub fn scene_direction<T: Scalar>(scene: &TwoObjectScene<T>) -> DirectionVector<T> {
    let out = closed_form_outputs(scene);
    direction_vector(&out.h_a, &out.h_b, scene.relation).expect("both outputs are 4-dim")
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha >= T::zero() && alpha <= T::one() {
        Ok(())
    } else {
        Err(Error::invalid("alpha", "intervention intensity must lie in [0, 1]"))
    }
}

/// `(1 - alpha) V_r + alpha * mean(V_r')` row by row.
pub fn intervene<T: Scalar>(v_r: &Matrix<T>, v_rp: &Matrix<T>, alpha: T) -> Result<Matrix<T>> {
    check_alpha(alpha)?;
    if v_r.cols() != v_rp.cols() {
        return Err(Error::DimensionMismatch {
            expected: v_r.cols(),
            got: v_rp.cols(),
        });
    }
    let target = v_rp.column_means()?;
    let keep = T::one() - alpha;
    let mut out = v_r.clone();
    for r in 0..out.rows() {
        for (x, &t) in out.row_mut(r).iter_mut().zip(&target) {
            *x = keep * *x + alpha * t;
        }
    }
    Ok(out)
}

/// Replaces every row in `target` with the mean of the rows in `source`.
pub fn erase_object<T: Scalar>(v: &Matrix<T>, target: &[usize], source: &[usize]) -> Result<Matrix<T>> {
    if target.is_empty() {
        return Err(Error::EmptySelection);
    }
    let fill = mean_pool(v, source)?;
    let mut out = v.clone();
    for &i in target {
        if i >= v.rows() {
            return Err(Error::IndexOutOfRange { index: i, len: v.rows() });
        }
        out.row_mut(i).copy_from_slice(&fill);
    }
    Ok(out)
}

/// Patch index sets of satellite, nucleus and background.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ObjectMask {
    pub satellite: Vec<usize>,
    pub nucleus: Vec<usize>,
    pub background: Vec<usize>,
}

impl ObjectMask {
    pub fn validate(&self, len: usize) -> Result<()> {
        if self.satellite.is_empty() || self.nucleus.is_empty() {
            return Err(Error::EmptySelection);
        }
        let mut seen = vec![false; len];
        for &i in self.satellite.iter().chain(&self.nucleus).chain(&self.background) {
            if i >= len {
                return Err(Error::IndexOutOfRange { index: i, len });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::invalid("mask", format!("index {i} appears in more than one set")));
            }
        }
        Ok(())
    }
}

/// Patches drawn per object per trial: all of them below 20, half otherwise.
pub fn sample_size(patches: usize) -> usize {
    if patches < 20 {
        patches
    } else {
        patches / 2
    }
}

fn sampled_mean<T: Scalar>(v: &Matrix<T>, idx: &[usize], rng: &mut RandomSource) -> Result<Vec<T>> {
    let n = sample_size(idx.len());
    if n == idx.len() {
        return mean_pool(v, idx);
    }
    let picked: Vec<usize> = rng.sample_indices(idx.len(), n).into_iter().map(|j| idx[j]).collect();
    mean_pool(v, &picked)
}

/// `trials × D` matrix of sampled direction vectors. Trial `t` draws from
/// the sub-source `rng.derive(t)`, so rows do not depend on evaluation order.
pub fn sample_direction_vectors<T: Scalar>(
    v: &Matrix<T>,
    mask: &ObjectMask,
    trials: usize,
    rng: &RandomSource,
) -> Result<Matrix<T>> {
    mask.validate(v.rows())?;
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let mut data = Vec::with_capacity(trials * v.cols());
    for t in 0..trials {
        let mut sub = rng.derive(t as u64);
        let hs = sampled_mean(v, &mask.satellite, &mut sub)?;
        let hn = sampled_mean(v, &mask.nucleus, &mut sub)?;
        data.extend(hs.iter().zip(&hn).map(|(&a, &b)| a - b));
    }
    Matrix::new(trials, v.cols(), data)
}

/// Per-axis split of `Q K^T` and the softmax over the concatenated `[M_X | M_Y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisSplitResult<T> {
    pub m_x: Matrix<T>,
    pub m_y: Matrix<T>,
    pub a_x: Matrix<T>,
    pub a_y: Matrix<T>,
    /// Mean of `A_X[i, j]` over satellite rows `i` and nucleus columns `j`.
    pub a_sn_x: T,
    pub a_sn_y: T,
}

fn column_block<T: Scalar>(m: &Matrix<T>, start: usize, len: usize) -> Matrix<T> {
    let data = m.iter_rows().flat_map(|r| r[start..start + len].iter().copied()).collect();
    Matrix::from_parts_unchecked(m.rows(), len, data)
}

/// Single-head axis split. Columns `0..d/2` of `Q` and `K` carry the X axis.
pub fn axis_split<T: Scalar>(q: &Matrix<T>, k: &Matrix<T>, mask: &ObjectMask) -> Result<AxisSplitResult<T>> {
    if q.shape() != k.shape() {
        return Err(Error::DimensionMismatch {
            expected: q.rows() * q.cols(),
            got: k.rows() * k.cols(),
        });
    }
    let (n, d) = q.shape();
    if d == 0 || d % 2 != 0 {
        return Err(Error::invalid("d", format!("{d} is not a positive even width")));
    }
    mask.validate(n)?;
    let h = d / 2;
    let m_x = column_block(q, 0, h).matmul(&column_block(k, 0, h).transpose())?;
    let m_y = column_block(q, h, h).matmul(&column_block(k, h, h).transpose())?;

    let mut a_x = Matrix::zeros(n, n);
    let mut a_y = Matrix::zeros(n, n);
    let mut row = vec![T::zero(); 2 * n];
    for i in 0..n {
        row[..n].copy_from_slice(m_x.row(i));
        row[n..].copy_from_slice(m_y.row(i));
        softmax_in_place(&mut row);
        a_x.row_mut(i).copy_from_slice(&row[..n]);
        a_y.row_mut(i).copy_from_slice(&row[n..]);
    }

    let pairs = T::from_count(mask.satellite.len() * mask.nucleus.len());
    let block_mean = |a: &Matrix<T>| {
        let mut s = T::zero();
        for &i in &mask.satellite {
            for &j in &mask.nucleus {
                s += a.get(i, j);
            }
        }
        s / pairs
    };
    let a_sn_x = block_mean(&a_x);
    let a_sn_y = block_mean(&a_y);
    Ok(AxisSplitResult {
        m_x,
        m_y,
        a_x,
        a_y,
        a_sn_x,
        a_sn_y,
    })
}

/// Satellite-to-nucleus scores averaged over heads (and samples): one
/// `(Q, K)` pair per head.
pub fn axis_split_mean<T: Scalar>(heads: &[(Matrix<T>, Matrix<T>)], mask: &ObjectMask) -> Result<(T, T)> {
    if heads.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut ax = T::zero();
    let mut ay = T::zero();
    for (q, k) in heads {
        let r = axis_split(q, k, mask)?;
        ax += r.a_sn_x;
        ay += r.a_sn_y;
    }
    let n = T::from_count(heads.len());
    Ok((ax / n, ay / n))
}

/// One point of a per-layer axis curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerAxisScore<T> {
    pub layer: usize,
    pub ax: T,
    pub ay: T,
}

/// Rescales each layer's pair so that `ax + ay = 1`, keeping the X:Y ratio.
pub fn normalize_layer_scores<T: Scalar>(points: &mut [LayerAxisScore<T>]) {
    for p in points {
        let total = p.ax + p.ay;
        if total > T::zero() {
            p.ax = p.ax / total;
            p.ay = p.ay / total;
        }
    }
}

/// `|key| / |common|` summary over a set of decompositions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyTermStats<T> {
    pub count: usize,
    pub mean: T,
    pub min: T,
    pub max: T,
}

pub fn key_term_stats<T: Scalar>(decomps: &[DirectionDecomposition<T>]) -> Option<KeyTermStats<T>> {
    let ratios: Vec<T> = decomps
        .iter()
        .filter_map(|d| {
            let key: [T; 4] = std::array::from_fn(|i| d.key_x[i] + d.key_y[i]);
            let c = norm(&d.common);
            (c > T::zero()).then(|| norm(&key) / c)
        })
        .collect();
    if ratios.is_empty() {
        return None;
    }
    Some(KeyTermStats {
        count: ratios.len(),
        mean: ratios.iter().copied().sum::<T>() / T::from_count(ratios.len()),
        min: ratios.iter().copied().fold(T::infinity(), T::min),
        max: ratios.iter().copied().fold(T::neg_infinity(), T::max),
    })
}

/// A base scene whose vectors are jittered and offsets redrawn per sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneFamily<T> {
    pub base: TwoObjectScene<T>,
    /// Standard deviation of the Gaussian jitter added to every q/k/v entry.
    pub jitter: T,
    /// Offsets `m` and `n` are drawn uniformly from `1..=max_offset`.
    pub max_offset: u32,
}

impl<T: Scalar> SceneFamily<T> {
    pub fn sample(&self, relation: Relation, rng: &mut RandomSource) -> TwoObjectScene<T> {
        let mut jitter = |v: &[T; 4]| -> [T; 4] { std::array::from_fn(|i| v[i] + self.jitter * T::lit(rng.normal())) };
        let b = &self.base;
        let (q_a, k_a, v_a) = (jitter(&b.q_a), jitter(&b.k_a), jitter(&b.v_a));
        let (q_b, k_b, v_b) = (jitter(&b.q_b), jitter(&b.k_b), jitter(&b.v_b));
        let m = 1 + rng.index(self.max_offset.max(1) as usize) as u32;
        let n = 1 + rng.index(self.max_offset.max(1) as usize) as u32;
        TwoObjectScene {
            q_a,
            k_a,
            v_a,
            q_b,
            k_b,
            v_b,
            relation,
            m,
            n,
            theta: b.theta,
        }
    }

    /// `count` decompositions for one relation; sample `i` uses `rng.derive(i)`.
    pub fn cloud(&self, relation: Relation, count: usize, rng: &RandomSource) -> Vec<DirectionDecomposition<T>> {
        (0..count)
            .map(|i| decompose(&self.sample(relation, &mut rng.derive(i as u64))))
            .collect()
    }
}

/// PCA of stacked direction vectors; returns `(relation, pc1, pc2)` rows.
pub fn project_clouds<T: Scalar>(clouds: &[DirectionDecomposition<T>]) -> Result<Vec<(Relation, T, T)>> {
    let rows: Vec<[T; 4]> = clouds.iter().map(|d| d.reassemble()).collect();
    let m = Matrix::from_rows(&rows)?;
    let pca = Pca::fit(&m, 2)?;
    Ok(clouds
        .iter()
        .enumerate()
        .map(|(i, d)| (d.relation, pca.scores.get(i, 0), pca.scores.get(i, 1)))
        .collect())
}
