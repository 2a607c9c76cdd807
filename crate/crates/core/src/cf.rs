//! Implicit-feedback matrix factorization math.
//!
//! Item factors are stored item-major: column `j` of the K×M matrix is the
//! contiguous slice `data[j*K..(j+1)*K]`. Every operation here is a pure
//! function of its inputs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};

/// Hyper-parameters of the factorization and of the server optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Latent factor count.
    pub k: usize,
    /// L2 regularization.
    pub lambda: f64,
    /// Implicit confidence weight.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Learning rate.
    pub eta: f64,
    pub epsilon: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            k: 25,
            lambda: 1.0,
            alpha: 4.0,
            beta1: 0.1,
            beta2: 0.99,
            eta: 0.01,
            epsilon: 1e-8,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x > 0.0 && x < 1.0;
        if self.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be finite and > 0"));
        }
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::invalid("beta1 and beta2 must lie in (0, 1)"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("eta and epsilon must be positive"));
        }
        Ok(())
    }
}

/// Dense K×M item-factor matrix whose columns carry global item ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    k: usize,
    item_ids: Vec<u32>,
    data: Vec<f64>,
}

impl FactorMatrix {
    /// Builds a matrix from item-major data (`data.len() == k * item_ids.len()`).
    pub fn new(k: usize, item_ids: Vec<u32>, data: Vec<f64>) -> Result<Self> {
        if k == 0 || item_ids.is_empty() {
            return Err(Error::invalid("factor matrix needs K > 0 and M > 0"));
        }
        if data.len() != k * item_ids.len() {
            return Err(Error::invalid(format!(
                "expected {} values for a {}x{} matrix, got {}",
                k * item_ids.len(),
                k,
                item_ids.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("factor matrix entries must be finite"));
        }
        let mut seen = item_ids.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("item ids must be unique"));
        }
        Ok(Self { k, item_ids, data })
    }

    /// Builds a matrix from row-major K×M values (one inner vec per factor row).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("ragged rows"));
        }
        let mut data = vec![0.0; k * m];
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                data[c * k + r] = v;
            }
        }
        Self::new(k, (0..m as u32).collect(), data)
    }

    pub fn zeros(k: usize, m: usize) -> Self {
        assert!(k > 0 && m > 0, "zero-sized factor matrix");
        Self {
            k,
            item_ids: (0..m as u32).collect(),
            data: vec![0.0; k * m],
        }
    }

    /// Entries drawn i.i.d. from N(0, std²); columns are items `0..m`.
    pub fn random_normal<R: Rng + ?Sized>(k: usize, m: usize, std: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
        let data = (0..k * m).map(|_| normal.sample(rng)).collect();
        Self::new(k, (0..m as u32).collect(), data)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn item_ids(&self) -> &[u32] {
        &self.item_ids
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.k..(j + 1) * self.k]
    }

    pub(crate) fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.k..(j + 1) * self.k]
    }

    /// Entry at latent row `r`, column `j`.
    pub fn get(&self, r: usize, j: usize) -> f64 {
        self.data[j * self.k + r]
    }

    pub fn as_item_major(&self) -> &[f64] {
        &self.data
    }

    /// Column subset by position, keeping the given order.
    pub fn subset(&self, positions: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(positions.len() * self.k);
        let mut ids = Vec::with_capacity(positions.len());
        for &p in positions {
            if p >= self.n_items() {
                return Err(Error::invalid(format!("column {p} out of range")));
            }
            data.extend_from_slice(self.column(p));
            ids.push(self.item_ids[p]);
        }
        Self::new(self.k, ids, data)
    }

    /// Σ_j q_j q_jᵀ over all columns, as a row-major K×K matrix.
    pub fn gram(&self) -> Vec<f64> {
        let k = self.k;
        let mut g = vec![0.0; k * k];
        for q in self.data.chunks_exact(k) {
            add_outer(&mut g, q, 1.0);
        }
        g
    }
}

/// Per-user latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UserFactor(Vec<f64>);

impl UserFactor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("user factor must be non-empty and finite"));
        }
        Ok(Self(values))
    }

    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self(self.0.iter().map(|v| v * a).collect())
    }
}

/// Per-item gradient columns for a set of selected items, item-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlock {
    k: usize,
    item_ids: Vec<u32>,
    data: Vec<f64>,
}

impl GradientBlock {
    pub fn zeros(k: usize, item_ids: Vec<u32>) -> Self {
        let data = vec![0.0; k * item_ids.len()];
        Self { k, item_ids, data }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn item_ids(&self) -> &[u32] {
        &self.item_ids
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.k..(j + 1) * self.k]
    }

    pub fn as_item_major(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_item_major_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `g += w · q qᵀ` for a row-major K×K `g`.
#[inline]
fn add_outer(g: &mut [f64], q: &[f64], w: f64) {
    let k = q.len();
    for r in 0..k {
        let s = w * q[r];
        let row = &mut g[r * k..(r + 1) * k];
        for (c, qc) in q.iter().enumerate() {
            row[c] += s * qc;
        }
    }
}

/// Scores `pᵀQ`, one per column.
pub fn predict_scores(p: &UserFactor, q: &FactorMatrix) -> Result<Vec<f64>> {
    if p.k() != q.k() {
        return Err(Error::invalid(format!(
            "user factor has length {}, factor matrix has K = {}",
            p.k(),
            q.k()
        )));
    }
    Ok(q.data.chunks_exact(q.k).map(|col| dot(p.as_slice(), col)).collect())
}

/// Confidence weight `1 + α·x` of a binary observation.
#[inline]
pub fn confidence(observed: bool, alpha: f64) -> f64 {
    if observed {
        1.0 + alpha
    } else {
        1.0
    }
}

fn check_row(x_row: &[bool], q: &FactorMatrix) -> Result<()> {
    if x_row.len() != q.n_items() {
        return Err(Error::invalid(format!(
            "interaction row has {} entries, factor matrix has {} columns",
            x_row.len(),
            q.n_items()
        )));
    }
    Ok(())
}

/// Closed-form user factor `(Q C Qᵀ + λI)⁻¹ Q C x` over the columns of `q_sub`.
pub fn solve_user_factor(x_row: &[bool], q_sub: &FactorMatrix, hp: &HyperParams) -> Result<UserFactor> {
    check_row(x_row, q_sub)?;
    let gram = q_sub.gram();
    solve_user_factor_with_gram(x_row, q_sub, &gram, hp)
}

/// Same solve as [`solve_user_factor`], reusing a precomputed `Σ_j q_j q_jᵀ`.
///
/// The confidence matrix splits as `C = I + α·diag(x)`, so only observed
/// columns contribute beyond the shared Gram matrix.
pub fn solve_user_factor_with_gram(
    x_row: &[bool],
    q_sub: &FactorMatrix,
    gram: &[f64],
    hp: &HyperParams,
) -> Result<UserFactor> {
    check_row(x_row, q_sub)?;
    let k = q_sub.k();
    if gram.len() != k * k {
        return Err(Error::invalid("gram matrix has the wrong shape"));
    }
    let mut a = gram.to_vec();
    let mut b = vec![0.0; k];
    let c_pos = confidence(true, hp.alpha);
    for (j, _) in x_row.iter().enumerate().filter(|(_, &x)| x) {
        let q = q_sub.column(j);
        add_outer(&mut a, q, hp.alpha);
        for (bi, qi) in b.iter_mut().zip(q) {
            *bi += c_pos * qi;
        }
    }
    if b.iter().all(|&v| v == 0.0) {
        return Ok(UserFactor::zeros(k));
    }
    for d in 0..k {
        a[d * k + d] += hp.lambda;
    }
    cholesky_solve(&mut a, k, &mut b)?;
    Ok(UserFactor(b))
}

/// Solves `A x = b` in place for symmetric positive definite row-major `A`.
fn cholesky_solve(a: &mut [f64], k: usize, b: &mut [f64]) -> Result<()> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for s in 0..j {
            d -= a[j * k + s] * a[j * k + s];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Numerical(format!(
                "normal equations are not positive definite (pivot {j} = {d:e})"
            )));
        }
        let l = d.sqrt();
        a[j * k + j] = l;
        for i in j + 1..k {
            let mut v = a[i * k + j];
            for s in 0..j {
                v -= a[i * k + s] * a[j * k + s];
            }
            a[i * k + j] = v / l;
        }
    }
    // forward: L y = b
    for i in 0..k {
        let mut v = b[i];
        for s in 0..i {
            v -= a[i * k + s] * b[s];
        }
        b[i] = v / a[i * k + i];
    }
    // backward: Lᵀ x = y
    for i in (0..k).rev() {
        let mut v = b[i];
        for s in i + 1..k {
            v -= a[s * k + i] * b[s];
        }
        b[i] = v / a[i * k + i];
    }
    Ok(())
}

/// Per-item gradient `−2 c_ij (x_ij − pᵀq_j) p + 2λ q_j` for every column of `q_sub`.
pub fn item_gradients(
    p: &UserFactor,
    x_row: &[bool],
    q_sub: &FactorMatrix,
    hp: &HyperParams,
) -> Result<GradientBlock> {
    check_row(x_row, q_sub)?;
    if p.k() != q_sub.k() {
        return Err(Error::invalid("user factor and factor matrix disagree on K"));
    }
    let k = q_sub.k();
    let p = p.as_slice();
    let mut out = GradientBlock::zeros(k, q_sub.item_ids.clone());
    for ((g, q), &x) in out.data.chunks_exact_mut(k).zip(q_sub.data.chunks_exact(k)).zip(x_row) {
        let target = if x { 1.0 } else { 0.0 };
        let coef = -2.0 * confidence(x, hp.alpha) * (target - dot(p, q));
        for ((gi, &pi), &qi) in g.iter_mut().zip(p).zip(q) {
            *gi = coef * pi + 2.0 * hp.lambda * qi;
        }
    }
    Ok(out)
}

/// Full implicit-feedback cost over all users and the columns of `q`.
///
/// `users[i]` pairs with row `i` of `x`; column `j` of `q` is item `q.item_ids()[j]`.
/// Test oracle only.
pub fn cost(users: &[UserFactor], q: &FactorMatrix, x: &InteractionMatrix, hp: &HyperParams) -> Result<f64> {
    if users.len() != x.n_users() {
        return Err(Error::invalid("one user factor per interaction row is required"));
    }
    let mut total = 0.0;
    for (i, p) in users.iter().enumerate() {
        if p.k() != q.k() {
            return Err(Error::invalid("user factor and factor matrix disagree on K"));
        }
        for (j, &item) in q.item_ids.iter().enumerate() {
            let observed = x.contains(i, item);
            let target = if observed { 1.0 } else { 0.0 };
            let r = target - dot(p.as_slice(), q.column(j));
            total += confidence(observed, hp.alpha) * r * r;
        }
        total += hp.lambda * dot(p.as_slice(), p.as_slice());
    }
    total += hp.lambda * dot(&q.data, &q.data);
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hp(lambda: f64, alpha: f64) -> HyperParams {
        HyperParams {
            lambda,
            alpha,
            ..HyperParams::default()
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng, k: usize, m: usize) -> (UserFactor, Vec<bool>, FactorMatrix) {
        let q = FactorMatrix::random_normal(k, m, 0.7, rng).unwrap();
        let p = UserFactor::new((0..k).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let x: Vec<bool> = (0..m).map(|_| rng.random_bool(0.4)).collect();
        (p, x, q)
    }

    #[test]
    fn defaults_match_reference_settings() {
        let d = HyperParams::default();
        assert_eq!((d.k, d.lambda, d.alpha), (25, 1.0, 4.0));
        assert_eq!((d.beta1, d.beta2, d.eta, d.epsilon), (0.1, 0.99, 0.01, 1e-8));
        d.validate().unwrap();
    }

    #[test]
    fn predict_zero_user_gives_zero_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = FactorMatrix::random_normal(4, 7, 1.0, &mut rng).unwrap();
        let s = predict_scores(&UserFactor::zeros(4), &q).unwrap();
        assert_eq!(s, vec![0.0; 7]);
    }

    #[test]
    fn predict_scalar_product() {
        let q = FactorMatrix::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let s = predict_scores(&UserFactor::new(vec![2.0]).unwrap(), &q).unwrap();
        assert_eq!(s, vec![2.0, 6.0]);
    }

    #[test]
    fn predict_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = FactorMatrix::random_normal(3, 5, 1.0, &mut rng).unwrap();
        let p = UserFactor::new(vec![0.3, -1.2, 2.5]).unwrap();
        let s = predict_scores(&p, &q).unwrap();
        for (j, score) in s.iter().enumerate() {
            let mut naive = 0.0;
            for r in 0..3 {
                naive += p.as_slice()[r] * q.get(r, j);
            }
            assert!((score - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let q = FactorMatrix::zeros(3, 2);
        assert!(matches!(
            predict_scores(&UserFactor::zeros(2), &q),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn confidence_values() {
        assert_eq!(confidence(false, 4.0), 1.0);
        assert_eq!(confidence(true, 4.0), 5.0);
        assert_eq!(confidence(true, 0.5), 1.5);
    }

    #[test]
    fn solve_zero_row_gives_zero_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = FactorMatrix::random_normal(5, 9, 1.0, &mut rng).unwrap();
        let p = solve_user_factor(&[false; 9], &q, &hp(1.0, 4.0)).unwrap();
        assert_eq!(p, UserFactor::zeros(5));
    }

    #[test]
    fn solve_scalar_case() {
        let q = FactorMatrix::from_rows(&[vec![1.0]]).unwrap();
        let p = solve_user_factor(&[true], &q, &hp(1.0, 4.0)).unwrap();
        assert_relative_eq!(p.as_slice()[0], 5.0 / 6.0, epsilon = 1e-15);
    }

    /// ∂J/∂p restricted to one user: −2 Σ_j c_j (x_j − pᵀq_j) q_j + 2λp.
    fn user_gradient(p: &[f64], x: &[bool], q: &FactorMatrix, hp: &HyperParams) -> Vec<f64> {
        let mut g: Vec<f64> = p.iter().map(|v| 2.0 * hp.lambda * v).collect();
        for (j, &obs) in x.iter().enumerate() {
            let t = if obs { 1.0 } else { 0.0 };
            let r = t - dot(p, q.column(j));
            for (gi, qi) in g.iter_mut().zip(q.column(j)) {
                *gi -= 2.0 * confidence(obs, hp.alpha) * r * qi;
            }
        }
        g
    }

    #[test]
    fn solve_is_stationary_on_25_by_50() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (_, x, q) = random_instance(&mut rng, 25, 50);
        let h = hp(1.0, 4.0);
        let p = solve_user_factor(&x, &q, &h).unwrap();
        let g = user_gradient(p.as_slice(), &x, &q, &h);
        let norm = dot(&g, &g).sqrt();
        assert!(norm < 1e-6, "stationarity residual {norm}");
    }

    #[test]
    fn solve_fails_on_singular_system() {
        // λ = 0 and a rank-deficient Q.
        let q = FactorMatrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let r = solve_user_factor(&[true, false], &q, &hp(0.0, 4.0));
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn gradient_zero_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = FactorMatrix::random_normal(3, 4, 1.0, &mut rng).unwrap();
        let g = item_gradients(&UserFactor::zeros(3), &[false; 4], &q, &hp(0.0, 4.0)).unwrap();
        assert!(g.as_item_major().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_scalar_case() {
        let q = FactorMatrix::from_rows(&[vec![2.0]]).unwrap();
        let g = item_gradients(&UserFactor::new(vec![1.0]).unwrap(), &[true], &q, &hp(1.0, 4.0)).unwrap();
        assert_eq!(g.column(0), &[14.0]);
    }

    #[test]
    fn cost_small_cases() {
        let x0 = InteractionMatrix::from_rows(vec![vec![]], 1).unwrap();
        let q0 = FactorMatrix::zeros(1, 1);
        assert_eq!(cost(&[UserFactor::zeros(1)], &q0, &x0, &hp(1.0, 4.0)).unwrap(), 0.0);

        let x1 = InteractionMatrix::from_rows(vec![vec![0]], 1).unwrap();
        let q1 = FactorMatrix::from_rows(&[vec![1.0]]).unwrap();
        let p1 = UserFactor::new(vec![1.0]).unwrap();
        assert_eq!(cost(&[p1], &q1, &x1, &hp(1.0, 4.0)).unwrap(), 2.0);
    }

    #[test]
    fn gram_path_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, x, q) = random_instance(&mut rng, 6, 30);
        let h = hp(0.5, 4.0);
        let a = solve_user_factor(&x, &q, &h).unwrap();
        let b = solve_user_factor_with_gram(&x, &q, &q.gram(), &h).unwrap();
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn subset_keeps_ids_and_values() {
        let q = FactorMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        let s = q.subset(&[2, 0]).unwrap();
        assert_eq!(s.item_ids(), &[2, 0]);
        assert_eq!(s.column(0), &[3.0, 6.0]);
        assert!(q.subset(&[3]).is_err());
    }

    #[test]
    fn rejects_non_finite_and_duplicate_ids() {
        assert!(FactorMatrix::new(1, vec![0], vec![f64::NAN]).is_err());
        assert!(FactorMatrix::new(1, vec![3, 3], vec![0.0, 0.0]).is_err());
        assert!(UserFactor::new(vec![f64::INFINITY]).is_err());
    }
}
