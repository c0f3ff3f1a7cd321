use super::matrix::{dot, Matrix};
use crate::{Error, Result, Scalar};

const MAX_ITERATIONS: usize = 1000;
const DIRECTION_TOLERANCE: f64 = 1e-10;

/// Principal components of column-centered data found by power iteration
/// with deflation.
#[derive(Debug, Clone)]
pub struct Pca<T> {
    pub mean: Vec<T>,
    /// `k × cols`, one unit loading vector per row.
    pub components: Matrix<T>,
    /// Sample variance along each component (covariance eigenvalue).
    pub variances: Vec<T>,
    /// Trace of the sample covariance.
    pub total_variance: T,
    /// `rows × k` projections of the centered data.
    pub scores: Matrix<T>,
}

impl<T: Scalar> Pca<T> {
    pub fn fit(m: &Matrix<T>, k: usize) -> Result<Self> {
        let (rows, cols) = m.shape();
        if k > cols {
            return Err(Error::invalid("k", format!("{k} exceeds {cols} columns")));
        }
        if rows < 2 {
            return Err(Error::invalid("rows", "PCA needs at least two rows"));
        }
        let mean = m.column_means()?;
        let mut centered = m.clone();
        for r in 0..rows {
            for (x, &mu) in centered.row_mut(r).iter_mut().zip(&mean) {
                *x -= mu;
            }
        }

        let denom = T::from_count(rows - 1);
        let mut cov = centered.transpose().matmul(&centered)?.map(|x| x / denom);
        let total_variance: T = (0..cols).map(|c| cov.get(c, c)).sum();
        let scale = m.data().iter().fold(T::zero(), |a, &x| a.max(x.abs()));
        let floor = (T::epsilon() * scale).powi(2) * T::from_count(cols.max(1));
        if total_variance <= floor {
            return Err(Error::DegenerateCovariance);
        }

        let mut components: Vec<Vec<T>> = Vec::with_capacity(k);
        let mut variances = Vec::with_capacity(k);
        for _ in 0..k {
            let v = leading_direction(&cov, &components, total_variance);
            let lambda = rayleigh(&cov, &v).max(T::zero());
            for r in 0..cols {
                for c in 0..cols {
                    let x = cov.get(r, c) - lambda * v[r] * v[c];
                    cov.set(r, c, x);
                }
            }
            variances.push(lambda);
            components.push(v);
        }

        let components = Matrix::from_rows(&components).unwrap_or_else(|_| Matrix::zeros(0, cols));
        let scores = if k == 0 {
            Matrix::zeros(rows, 0)
        } else {
            centered.matmul(&components.transpose())?
        };
        Ok(Self {
            mean,
            components,
            variances,
            total_variance,
            scores,
        })
    }

    /// Centered data rebuilt from scores and loadings.
    pub fn reconstruct_centered(&self) -> Result<Matrix<T>> {
        self.scores.matmul(&self.components)
    }
}

/// `rows × k` scores against the top-`k` principal directions.
pub fn pca_project<T: Scalar>(m: &Matrix<T>, k: usize) -> Result<Matrix<T>> {
    Ok(Pca::fit(m, k)?.scores)
}

fn mat_vec<T: Scalar>(m: &Matrix<T>, v: &[T]) -> Vec<T> {
    m.iter_rows().map(|row| dot(row, v)).collect()
}

fn rayleigh<T: Scalar>(m: &Matrix<T>, v: &[T]) -> T {
    dot(v, &mat_vec(m, v))
}

/// Removes the projections onto `basis` and normalizes. `None` when nothing is left.
fn orthonormalize<T: Scalar>(mut v: Vec<T>, basis: &[Vec<T>]) -> Option<Vec<T>> {
    // two passes of classical Gram-Schmidt keep the loss of orthogonality near epsilon
    for _ in 0..2 {
        for b in basis {
            let p = dot(&v, b);
            for (x, &y) in v.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
    }
    let n = dot(&v, &v).sqrt();
    if n <= T::lit(1e-12) {
        return None;
    }
    Some(v.into_iter().map(|x| x / n).collect())
}

fn leading_direction<T: Scalar>(cov: &Matrix<T>, found: &[Vec<T>], total: T) -> Vec<T> {
    let n = cov.rows();
    // unit-basis start: largest remaining diagonal first, falling back in order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        cov.get(b, b)
            .partial_cmp(&cov.get(a, a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut v = order
        .iter()
        .find_map(|&j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            orthonormalize(e, found)
        })
        .expect("fewer found directions than dimensions");

    let tol = T::lit(DIRECTION_TOLERANCE);
    let null = total * T::lit(1e-13);
    for _ in 0..MAX_ITERATIONS {
        let w = mat_vec(cov, &v);
        if dot(&w, &w).sqrt() <= null {
            break;
        }
        let Some(w) = orthonormalize(w, found) else {
            break;
        };
        let change = w
            .iter()
            .zip(&v)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt();
        v = w;
        if change < tol {
            break;
        }
    }

    let lead = v
        .iter()
        .enumerate()
        .fold((0, T::zero()), |best, (i, &x)| if x.abs() > best.1 { (i, x.abs()) } else { best })
        .0;
    if v[lead] < T::zero() {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}
