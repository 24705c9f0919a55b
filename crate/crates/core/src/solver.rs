//! Matrix-free iterative least squares with priorconditioning, plus a dense
//! direct solver used as the test oracle.
//!
//! The α update of the hierarchical model solves
//!
//! ```text
//! min (1/2σ²)‖b − Mα‖² + ½‖D^{−1/2}α‖²
//! ```
//!
//! After the whitening change of variables w = D^{−1/2}α the quadratic
//! penalty becomes the identity and D^{1/2} acts as a right preconditioner
//! built from the current prior covariance. `priorconditioned_solve` offers
//! a direct exact mode, a CGLS solve of the identity-regularized stacked
//! system, and a truncated-iteration mode that regularizes by early
//! stopping alone.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::hypermodel::{HyperModelError, NoiseModel, VarianceGrouping};
use crate::leadfield::LeadField;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("rank-deficient system: |R[{index},{index}]| = {pivot:e} below tolerance")]
    RankDeficient { index: usize, pivot: f64 },
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error(transparent)]
    Model(#[from] HyperModelError),
}

/// Action of a linear map and its transpose; `apply` and `apply_transpose`
/// must be adjoint.
pub trait LinearOperator {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// y = A x
    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>);
    /// x = Aᵀ y
    fn apply_transpose(&self, y: &DVector<f64>, x: &mut DVector<f64>);
}

/// Dense matrix as a [`LinearOperator`].
pub struct DenseOperator<'a>(pub &'a DMatrix<f64>);

impl LinearOperator for DenseOperator<'_> {
    fn nrows(&self) -> usize {
        self.0.nrows()
    }

    fn ncols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.gemv(1.0, self.0, x, 0.0);
    }

    fn apply_transpose(&self, y: &DVector<f64>, x: &mut DVector<f64>) {
        x.gemv_tr(1.0, self.0, y, 0.0);
    }
}

/// The whitened lead field σ⁻¹ M D^{1/2}, applied matrix-free.
pub struct WhitenedLeadField<'a> {
    matrix: &'a DMatrix<f64>,
    inv_sigma: f64,
    sqrt_d: DVector<f64>,
}

impl<'a> WhitenedLeadField<'a> {
    pub fn new(m: &'a LeadField, noise: &NoiseModel, per_coef_variance: &DVector<f64>) -> Self {
        Self {
            matrix: &m.matrix,
            inv_sigma: 1.0 / noise.sigma(),
            sqrt_d: per_coef_variance.map(f64::sqrt),
        }
    }
}

impl LinearOperator for WhitenedLeadField<'_> {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        let scaled = x.component_mul(&self.sqrt_d);
        y.gemv(self.inv_sigma, self.matrix, &scaled, 0.0);
    }

    fn apply_transpose(&self, y: &DVector<f64>, x: &mut DVector<f64>) {
        x.gemv_tr(self.inv_sigma, self.matrix, y, 0.0);
        x.component_mul_assign(&self.sqrt_d);
    }
}

/// Stacked operator [A; I]: the identity-regularized least squares system.
pub struct IdentityStacked<A: LinearOperator>(pub A);

impl<A: LinearOperator> LinearOperator for IdentityStacked<A> {
    fn nrows(&self) -> usize {
        self.0.nrows() + self.0.ncols()
    }

    fn ncols(&self) -> usize {
        self.0.ncols()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        let (m, n) = (self.0.nrows(), self.0.ncols());
        let mut top = DVector::zeros(m);
        self.0.apply(x, &mut top);
        y.rows_mut(0, m).copy_from(&top);
        y.rows_mut(m, n).copy_from(x);
    }

    fn apply_transpose(&self, y: &DVector<f64>, x: &mut DVector<f64>) {
        let (m, n) = (self.0.nrows(), self.0.ncols());
        let top = DVector::from(y.rows(0, m));
        self.0.apply_transpose(&top, x);
        *x += DVector::from(y.rows(m, n));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Verbosity {
    #[default]
    Silent,
    Summary,
    PerIteration,
}

/// Stopping configuration for the iterative solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative residual-gradient tolerance ‖Aᵀ(b−Ax)‖/‖Aᵀb‖.
    pub rel_residual_tol: f64,
    pub verbosity: Verbosity,
}

impl SolverConfig {
    pub fn new(max_iters: usize, rel_residual_tol: f64) -> Self {
        assert!(max_iters >= 1, "max_iters must be at least 1");
        assert!(rel_residual_tol > 0.0, "tolerance must be positive");
        Self {
            max_iters,
            rel_residual_tol,
            verbosity: Verbosity::Silent,
        }
    }

    /// Inner-solve defaults for the MAP driver: tolerance 1e−6,
    /// max_iters = min(200, problem size).
    pub fn inner_default(n_coefficients: usize) -> Self {
        Self::new(200.min(n_coefficients.max(1)), 1e-6)
    }

    /// Tight configuration for exact-mode iterative solves.
    pub fn exact(n_coefficients: usize) -> Self {
        Self::new(10 * n_coefficients.max(1), 1e-14)
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::new(200, 1e-6)
    }
}

/// Outcome of a CGLS run.
#[derive(Debug, Clone)]
pub struct CglsResult {
    pub x: DVector<f64>,
    pub iters: usize,
    /// ‖b − Ax‖ after 0, 1, … iterations; non-increasing.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    /// Set when Aᵀb = 0 with b ≠ 0 (zero operator or b orthogonal to the
    /// range): x = 0 is returned unchanged.
    pub degenerate: bool,
}

/// Conjugate gradient on the normal equations (CGLS): approximately
/// minimizes ‖Ax − b‖ without forming AᵀA.
pub fn cgls<A: LinearOperator>(a: &A, b: &DVector<f64>, cfg: &SolverConfig) -> Result<CglsResult, SolverError> {
    cgls_with_callback(a, b, cfg, |_, _| {})
}

/// CGLS with a per-iteration callback on (iteration, current x); used by
/// the semiconvergence diagnostics.
pub fn cgls_with_callback<A, F>(
    a: &A,
    b: &DVector<f64>,
    cfg: &SolverConfig,
    mut on_iterate: F,
) -> Result<CglsResult, SolverError>
where
    A: LinearOperator,
    F: FnMut(usize, &DVector<f64>),
{
    if b.len() != a.nrows() {
        return Err(SolverError::DimensionMismatch(format!(
            "operator is {}x{}, b has {} entries",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    let mut r = b.clone();
    let mut s = DVector::zeros(n);
    a.apply_transpose(&r, &mut s);
    let gamma0 = s.norm_squared();
    let mut history = vec![r.norm()];

    if gamma0 == 0.0 {
        // b = 0, or b carries no component in the range of A.
        let degenerate = b.norm() > 0.0;
        return Ok(CglsResult {
            x,
            iters: 0,
            residual_history: history,
            converged: !degenerate,
            degenerate,
        });
    }

    let mut p = s.clone();
    let mut gamma = gamma0;
    let mut q = DVector::zeros(a.nrows());
    let mut converged = false;
    let mut iters = 0;
    for it in 1..=cfg.max_iters {
        a.apply(&p, &mut q);
        let qq = q.norm_squared();
        if qq == 0.0 {
            break;
        }
        let alpha = gamma / qq;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &q, 1.0);
        a.apply_transpose(&r, &mut s);
        let gamma_new = s.norm_squared();
        history.push(r.norm());
        iters = it;
        on_iterate(it, &x);
        if cfg.verbosity == Verbosity::PerIteration {
            log::debug!(
                "cgls iter {it}: |r| = {:.3e}, rel grad = {:.3e}",
                r.norm(),
                (gamma_new / gamma0).sqrt()
            );
        }
        if (gamma_new / gamma0).sqrt() < cfg.rel_residual_tol {
            converged = true;
            break;
        }
        p = &s + &p * (gamma_new / gamma);
        gamma = gamma_new;
    }
    if cfg.verbosity != Verbosity::Silent {
        log::debug!(
            "cgls finished after {iters} iterations, |r| = {:.3e}, converged = {converged}",
            history.last().unwrap()
        );
    }
    Ok(CglsResult {
        x,
        iters,
        residual_history: history,
        converged,
        degenerate: false,
    })
}

/// How the priorconditioned α update is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PriorconditionMode {
    /// Direct solve of the identity-regularized problem via its normal or
    /// dual equations; matches the dense stacked oracle to solver accuracy.
    Exact,
    /// CGLS on the identity-regularized stacked system [σ⁻¹MD^{1/2}; I].
    #[default]
    Regularized,
    /// CGLS on the whitened system σ⁻¹MD^{1/2}w = σ⁻¹b, regularization by
    /// truncated iteration only.
    Truncated,
}

/// Solves the variance-weighted α update and returns α = D^{1/2}w. The
/// variance applied to coefficient i is `theta[grouping.group_of(i)]`.
pub fn priorconditioned_solve(
    m: &LeadField,
    b: &DVector<f64>,
    noise: &NoiseModel,
    theta: &DVector<f64>,
    grouping: &VarianceGrouping,
    cfg: &SolverConfig,
    mode: PriorconditionMode,
) -> Result<DVector<f64>, SolverError> {
    if b.len() != m.n_sensors() {
        return Err(SolverError::DimensionMismatch(format!(
            "lead field has {} rows, b has {}",
            m.n_sensors(),
            b.len()
        )));
    }
    if grouping.n_coefficients() != m.n_coefficients() {
        return Err(SolverError::DimensionMismatch(format!(
            "lead field has {} columns, grouping has {} coefficients",
            m.n_coefficients(),
            grouping.n_coefficients()
        )));
    }
    let d = grouping.expand(theta)?;
    for (i, &di) in d.iter().enumerate() {
        if !(di > 0.0) || !di.is_finite() {
            return Err(SolverError::Model(HyperModelError::NonPositiveTheta {
                index: i,
                value: di,
            }));
        }
    }

    match mode {
        PriorconditionMode::Exact => exact_weighted_solve(&m.matrix, b, noise.sigma(), &d),
        PriorconditionMode::Regularized => {
            let op = IdentityStacked(WhitenedLeadField::new(m, noise, &d));
            let mut rhs = DVector::zeros(op.nrows());
            rhs.rows_mut(0, b.len())
                .copy_from(&(b / noise.sigma()));
            let w = cgls(&op, &rhs, cfg)?.x;
            Ok(w.component_mul(&d.map(f64::sqrt)))
        }
        PriorconditionMode::Truncated => {
            let op = WhitenedLeadField::new(m, noise, &d);
            let rhs = b / noise.sigma();
            let w = cgls(&op, &rhs, cfg)?.x;
            Ok(w.component_mul(&d.map(f64::sqrt)))
        }
    }
}

/// Direct minimizer of (1/2σ²)‖b − Mα‖² + ½‖D^{−1/2}α‖². Uses the dual
/// (L×L) form α = DMᵀ(MDMᵀ + σ²I)⁻¹b when the sensor count is smaller,
/// otherwise the primal (K×K) normal equations.
fn exact_weighted_solve(
    m: &DMatrix<f64>,
    b: &DVector<f64>,
    sigma: f64,
    d: &DVector<f64>,
) -> Result<DVector<f64>, SolverError> {
    let (l, k) = (m.nrows(), m.ncols());
    if l <= k {
        // M D Mᵀ + σ² I.
        let mut md = m.clone();
        for (j, mut col) in md.column_iter_mut().enumerate() {
            col *= d[j];
        }
        let mut gram = &md * m.transpose();
        for i in 0..l {
            gram[(i, i)] += sigma * sigma;
        }
        let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
            SolverError::Factorization("dual Gram matrix not positive definite".into())
        })?;
        let t = chol.solve(b);
        Ok(md.transpose() * t)
    } else {
        // (σ⁻²MᵀM + D⁻¹) α = σ⁻²Mᵀb.
        let inv_s2 = 1.0 / (sigma * sigma);
        let mut gram = m.transpose() * m * inv_s2;
        for i in 0..k {
            gram[(i, i)] += 1.0 / d[i];
        }
        let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
            SolverError::Factorization("primal Gram matrix not positive definite".into())
        })?;
        Ok(chol.solve(&(m.transpose() * b * inv_s2)))
    }
}

/// Exact least squares minimizer of ‖Ax − b‖ by Householder QR. Requires A
/// to have full column rank; a small R diagonal reports rank deficiency.
pub fn dense_lsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, SolverError> {
    if b.len() != a.nrows() {
        return Err(SolverError::DimensionMismatch(format!(
            "matrix is {}x{}, b has {} entries",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.nrows() < a.ncols() {
        return Err(SolverError::DimensionMismatch(format!(
            "underdetermined system {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.ncols();
    let qr = a.clone().qr();
    let r = qr.r();
    let pivot_scale = (0..n)
        .map(|i| r[(i, i)].abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    for i in 0..n {
        if r[(i, i)].abs() < 1e-13 * pivot_scale {
            return Err(SolverError::RankDeficient {
                index: i,
                pivot: r[(i, i)],
            });
        }
    }
    let mut qtb = b.clone();
    qr.q_tr_mul(&mut qtb);
    let rhs = DVector::from(qtb.rows(0, n));
    r.solve_upper_triangular(&rhs)
        .ok_or(SolverError::RankDeficient {
            index: 0,
            pivot: 0.0,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_matrix(rng: &mut StdRng, m: usize, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(m, n, |_, _| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn cgls_identity_converges_in_one_iteration() {
        let id = DMatrix::<f64>::identity(5, 5);
        let b = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5, 0.0]);
        let res = cgls(&DenseOperator(&id), &b, &SolverConfig::new(10, 1e-12)).unwrap();
        assert_eq!(res.iters, 1);
        assert!((res.x - b).norm() < 1e-12);
    }

    #[test]
    fn cgls_zero_rhs_returns_zero() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 6, 4);
        let res = cgls(&DenseOperator(&a), &DVector::zeros(6), &SolverConfig::default()).unwrap();
        assert_eq!(res.iters, 0);
        assert_eq!(res.x, DVector::zeros(4));
        assert!(res.converged);
        assert!(!res.degenerate);
    }

    #[test]
    fn cgls_zero_operator_flags_degenerate() {
        let a = DMatrix::<f64>::zeros(4, 3);
        let b = DVector::from_element(4, 1.0);
        let res = cgls(&DenseOperator(&a), &b, &SolverConfig::default()).unwrap();
        assert!(res.degenerate);
        assert_eq!(res.x, DVector::zeros(3));
    }

    #[test]
    fn cgls_matches_dense_oracle_and_residuals_decrease() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 30, 20);
        let b = DVector::from_fn(30, |_, _| rng.gen::<f64>() - 0.5);
        let res = cgls(&DenseOperator(&a), &b, &SolverConfig::new(200, 1e-12)).unwrap();
        let oracle = dense_lsq(&a, &b).unwrap();
        assert!((res.x - &oracle).norm() / oracle.norm() < 1e-8);
        for w in res.residual_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn operators_are_adjoint(seed in 0u64..1000, m in 2usize..12, n in 2usize..12) {
            let mut rng = StdRng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, m, n);
            let lead = LeadField::from_matrix(a.clone());
            let noise = NoiseModel::new(0.7).unwrap();
            let d = DVector::from_fn(n, |_, _| rng.gen::<f64>() + 0.1);
            let white = WhitenedLeadField::new(&lead, &noise, &d);
            let stacked = IdentityStacked(WhitenedLeadField::new(&lead, &noise, &d));

            // ⟨Ax, y⟩ = ⟨x, Aᵀy⟩ for random probes.
            fn adjoint_gap<O: LinearOperator>(op: &O, rng: &mut StdRng) -> f64 {
                let x = DVector::from_fn(op.ncols(), |_, _| rng.gen::<f64>() - 0.5);
                let y = DVector::from_fn(op.nrows(), |_, _| rng.gen::<f64>() - 0.5);
                let mut ax = DVector::zeros(op.nrows());
                op.apply(&x, &mut ax);
                let mut aty = DVector::zeros(op.ncols());
                op.apply_transpose(&y, &mut aty);
                let lhs = ax.dot(&y);
                let rhs = x.dot(&aty);
                let scale = lhs.abs().max(rhs.abs()).max(1e-30);
                ((lhs - rhs) / scale).abs()
            }
            prop_assert!(adjoint_gap(&DenseOperator(&a), &mut rng) < 1e-10);
            prop_assert!(adjoint_gap(&white, &mut rng) < 1e-10);
            prop_assert!(adjoint_gap(&stacked, &mut rng) < 1e-10);
        }
    }

    #[test]
    fn dense_lsq_identity_and_consistent_systems() {
        let id = DMatrix::<f64>::identity(4, 4);
        let b = DVector::from_vec(vec![0.2, -1.0, 3.0, 4.0]);
        assert!((dense_lsq(&id, &b).unwrap() - &b).norm() < 1e-14);

        // Overdetermined consistent system has zero residual.
        let mut rng = StdRng::seed_from_u64(9);
        let a = random_matrix(&mut rng, 7, 3);
        let x_true = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let b = &a * &x_true;
        let x = dense_lsq(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() < 1e-12);
    }

    #[test]
    fn dense_lsq_matches_analytic_ridge() {
        // Stacked Tikhonov system vs (AᵀA + λI)⁻¹Aᵀb on a 5×3 system.
        let mut rng = StdRng::seed_from_u64(13);
        let a = random_matrix(&mut rng, 5, 3);
        let b = DVector::from_fn(5, |_, _| rng.gen::<f64>() - 0.5);
        let lambda = 0.3f64;
        let mut stacked = DMatrix::zeros(8, 3);
        stacked.view_mut((0, 0), (5, 3)).copy_from(&a);
        for i in 0..3 {
            stacked[(5 + i, i)] = lambda.sqrt();
        }
        let mut rhs = DVector::zeros(8);
        rhs.rows_mut(0, 5).copy_from(&b);
        let x = dense_lsq(&stacked, &rhs).unwrap();
        let ridge = (a.transpose() * &a + DMatrix::identity(3, 3) * lambda)
            .try_inverse()
            .unwrap()
            * a.transpose()
            * &b;
        assert!((x - ridge).norm() < 1e-12);
    }

    #[test]
    fn dense_lsq_reports_rank_deficiency() {
        let mut a = DMatrix::<f64>::zeros(4, 2);
        a[(0, 0)] = 1.0;
        a[(1, 0)] = 2.0;
        // Second column identical to the first.
        a[(0, 1)] = 1.0;
        a[(1, 1)] = 2.0;
        let b = DVector::from_element(4, 1.0);
        assert!(matches!(
            dense_lsq(&a, &b),
            Err(SolverError::RankDeficient { .. })
        ));
    }

    #[test]
    fn priorconditioned_uniform_theta_equals_ridge() {
        let mut rng = StdRng::seed_from_u64(17);
        let a = random_matrix(&mut rng, 8, 5);
        let lead = LeadField::from_matrix(a.clone());
        let b = DVector::from_fn(8, |_, _| rng.gen::<f64>() - 0.5);
        let sigma = 0.4;
        let noise = NoiseModel::new(sigma).unwrap();
        let c = 0.25;
        let theta = DVector::from_element(5, c);
        let grouping = VarianceGrouping::identity(5);
        let alpha = priorconditioned_solve(
            &lead,
            &b,
            &noise,
            &theta,
            &grouping,
            &SolverConfig::exact(5),
            PriorconditionMode::Exact,
        )
        .unwrap();
        // Dense stacked oracle of the weighted problem.
        let mut stacked = DMatrix::zeros(13, 5);
        stacked.view_mut((0, 0), (8, 5)).copy_from(&(&a / sigma));
        for i in 0..5 {
            stacked[(8 + i, i)] = 1.0 / c.sqrt();
        }
        let mut rhs = DVector::zeros(13);
        rhs.rows_mut(0, 8).copy_from(&(&b / sigma));
        let oracle = dense_lsq(&stacked, &rhs).unwrap();
        assert!((&alpha - &oracle).norm() / oracle.norm() < 1e-8);

        // The CGLS-regularized path agrees in exact-tolerance mode.
        let alpha_it = priorconditioned_solve(
            &lead,
            &b,
            &noise,
            &theta,
            &grouping,
            &SolverConfig::exact(5),
            PriorconditionMode::Regularized,
        )
        .unwrap();
        assert!((&alpha_it - &oracle).norm() / oracle.norm() < 1e-8);
    }

    #[test]
    fn priorconditioned_huge_variance_concentrates_solution() {
        // 3-column toy: data generated by column 1; its variance is huge,
        // the others sit near the floor.
        let a = DMatrix::from_columns(&[
            DVector::from_vec(vec![1.0, 0.2, -0.3]),
            DVector::from_vec(vec![0.1, 1.1, 0.4]),
            DVector::from_vec(vec![-0.2, 0.3, 0.9]),
        ]);
        let lead = LeadField::from_matrix(a.clone());
        let b = a.column(1) * 2.0;
        let noise = NoiseModel::new(0.05).unwrap();
        let theta = DVector::from_vec(vec![1e-12, 1e3, 1e-12]);
        let grouping = VarianceGrouping::identity(3);
        let alpha = priorconditioned_solve(
            &lead,
            &b.clone_owned(),
            &noise,
            &theta,
            &grouping,
            &SolverConfig::exact(3),
            PriorconditionMode::Exact,
        )
        .unwrap();
        assert!(alpha[1].abs() > 1.9);
        assert!(alpha[0].abs() < 1e-6 && alpha[2].abs() < 1e-6);

        // Dense oracle agreement on the same weighted problem.
        let mut stacked = DMatrix::zeros(6, 3);
        stacked
            .view_mut((0, 0), (3, 3))
            .copy_from(&(&a / noise.sigma()));
        for i in 0..3 {
            stacked[(3 + i, i)] = 1.0 / theta[i].sqrt();
        }
        let mut rhs = DVector::zeros(6);
        rhs.rows_mut(0, 3).copy_from(&(b / noise.sigma()));
        let oracle = dense_lsq(&stacked, &rhs).unwrap();
        assert!((&alpha - &oracle).norm() / oracle.norm() < 1e-8);
    }

    #[test]
    fn priorconditioned_zero_data_gives_zero() {
        let mut rng = StdRng::seed_from_u64(21);
        let lead = LeadField::from_matrix(random_matrix(&mut rng, 4, 6));
        let noise = NoiseModel::new(1.0).unwrap();
        let theta = DVector::from_element(6, 0.5);
        let grouping = VarianceGrouping::identity(6);
        for mode in [
            PriorconditionMode::Exact,
            PriorconditionMode::Regularized,
            PriorconditionMode::Truncated,
        ] {
            let alpha = priorconditioned_solve(
                &lead,
                &DVector::zeros(4),
                &noise,
                &theta,
                &grouping,
                &SolverConfig::default(),
                mode,
            )
            .unwrap();
            assert_eq!(alpha, DVector::zeros(6));
        }
    }

    #[test]
    fn semiconvergence_has_interior_error_minimum() {
        // Ill-conditioned system with noisy data: the iterate error to the
        // noiseless truth dips before climbing again.
        let mut rng = StdRng::seed_from_u64(29);
        let n = 24;
        let q1 = random_orthogonal(&mut rng, n);
        let q2 = random_orthogonal(&mut rng, n);
        let sv = DVector::from_fn(n, |i, _| 10f64.powf(-8.0 * i as f64 / (n - 1) as f64));
        let a = &q1 * DMatrix::from_diagonal(&sv) * q2.transpose();
        let x_true = DVector::from_fn(n, |i, _| (i as f64 * 0.3).sin());
        let b_clean = &a * &x_true;
        let noise = DVector::from_fn(n, |_, _| rng.gen::<f64>() - 0.5).normalize() * 1e-3;
        let b = &b_clean + noise;

        let mut errors = Vec::new();
        let cfg = SolverConfig::new(3 * n, 1e-16);
        cgls_with_callback(&DenseOperator(&a), &b, &cfg, |_, x| {
            errors.push((x - &x_true).norm());
        })
        .unwrap();
        let (argmin, _) = errors
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert!(argmin > 0 && argmin < errors.len() - 1, "argmin={argmin}");
        assert!(errors[argmin] < errors[errors.len() - 1]);
    }

    fn random_orthogonal(rng: &mut StdRng, n: usize) -> DMatrix<f64> {
        random_matrix(rng, n, n).qr().q()
    }
}
