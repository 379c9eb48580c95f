//! Box-constrained convex QP solver and a dense equality-constrained KKT solve.
//!
//! `minimize ½ xᵀPx + qᵀx  subject to  lower ≤ x ≤ upper`
//!
//! The box solver is accelerated projected gradient with function-value restart.
//! Every accepted iterate does not increase the objective, and termination is on
//! the projected-gradient measure `‖x − Π(x − (Px + q))‖_∞`.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp<T: Real> {
    pub p: DMatrix<T>,
    pub q: DVector<T>,
    pub lower: DVector<T>,
    pub upper: DVector<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    InfeasibleBounds,
    /// Objective decreases without bound along a flat direction with open bounds.
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution<T: Real> {
    pub x: DVector<T>,
    pub status: QpStatus,
    pub kkt_residual: T,
    pub iterations: usize,
    pub objective: T,
    /// Objective after every accepted iterate, when requested in [`QpSettings`].
    pub objective_trace: Vec<T>,
}

impl<T: Real> QpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings<T> {
    pub tol: T,
    pub max_iter: usize,
    pub record_objective: bool,
}

impl<T: Real> Default for QpSettings<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-8),
            max_iter: 5000,
            record_objective: false,
        }
    }
}

impl<T: Real> QpSettings<T> {
    pub fn new(tol: T, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            record_objective: false,
        }
    }
}

impl<T: Real> BoxQp<T> {
    pub fn new(p: DMatrix<T>, q: DVector<T>, lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        let n = q.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::DimensionMismatch {
                what: "QP Hessian",
                expected: n,
                got: p.nrows().max(p.ncols()),
            });
        }
        for (what, v) in [("lower bound", &lower), ("upper bound", &upper)] {
            if v.len() != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    got: v.len(),
                });
            }
        }
        let scale = p.amax().max(T::one());
        if (&p - p.transpose()).amax() > T::lit(1e-12) * scale {
            return Err(Error::InvalidArgument("QP Hessian is not symmetric".into()));
        }
        Ok(Self { p, q, lower, upper })
    }

    /// Unconstrained-box QP (`[-inf, inf]` everywhere).
    pub fn unbounded(p: DMatrix<T>, q: DVector<T>) -> Result<Self> {
        let n = q.len();
        Self::new(
            p,
            q,
            DVector::from_element(n, -T::infinity()),
            DVector::from_element(n, T::infinity()),
        )
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<T>) -> T {
        (&self.p * x).dot(x) * T::lit(0.5) + self.q.dot(x)
    }

    pub fn project(&self, x: &mut DVector<T>) {
        for ((xi, &lo), &hi) in x.iter_mut().zip(self.lower.iter()).zip(self.upper.iter()) {
            *xi = xi.clamp(lo, hi);
        }
    }

    pub fn bounds_consistent(&self) -> bool {
        self.lower.iter().zip(self.upper.iter()).all(|(lo, hi)| lo <= hi)
    }

    /// `‖x − Π(x − (Px + q))‖_∞`; zero exactly at box-KKT points.
    pub fn kkt_measure(&self, x: &DVector<T>) -> T {
        let grad = &self.p * x + &self.q;
        self.kkt_measure_with_grad(x, &grad)
    }

    fn kkt_measure_with_grad(&self, x: &DVector<T>, grad: &DVector<T>) -> T {
        let mut worst = T::zero();
        for i in 0..x.len() {
            let moved = (x[i] - grad[i]).clamp(self.lower[i], self.upper[i]);
            worst = worst.max((x[i] - moved).abs());
        }
        worst
    }

    /// Smallest eigenvalue of `P` is at least `-tol`.
    pub fn is_psd(&self, tol: T) -> bool {
        if self.dim() == 0 {
            return true;
        }
        self.p.clone().symmetric_eigenvalues().min() >= -tol
    }

    /// Upper bound on the largest eigenvalue of `P`: power iteration estimate
    /// inflated slightly and capped by the Gershgorin bound.
    pub fn lipschitz_estimate(&self) -> T {
        let n = self.dim();
        if n == 0 {
            return T::zero();
        }
        let gershgorin = (0..n)
            .map(|i| self.p.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), |a, b| a.max(b));
        if gershgorin == T::zero() {
            return T::zero();
        }
        // Slightly non-uniform start so it is unlikely to be orthogonal to the top eigenvector.
        let mut v = DVector::from_fn(n, |i, _| T::one() + T::lit(0.01) * T::from_usize(i % 7).unwrap());
        v /= v.norm();
        let mut estimate = T::zero();
        let mut pv = DVector::zeros(n);
        for _ in 0..200 {
            pv.gemv(T::one(), &self.p, &v, T::zero());
            let next = pv.dot(&v);
            let norm = pv.norm();
            if norm == T::zero() {
                break;
            }
            v.copy_from(&pv);
            v /= norm;
            let converged = (next - estimate).abs() <= T::lit(1e-6) * next.abs();
            estimate = next;
            if converged {
                break;
            }
        }
        (estimate * T::lit(1.05)).min(gershgorin).max(T::zero())
    }
}

/// Solves a box QP from a zero (projected) start.
pub fn solve_box_qp<T: Real>(qp: &BoxQp<T>, tol: T, max_iter: usize) -> QpSolution<T> {
    BoxQpSolver::new(QpSettings::new(tol, max_iter)).solve(qp, None, None)
}

/// Accelerated projected gradient solver. Holds only settings, so one instance
/// may be shared across threads.
#[derive(Debug, Clone, Copy)]
pub struct BoxQpSolver<T: Real> {
    pub settings: QpSettings<T>,
}

impl<T: Real> BoxQpSolver<T> {
    pub fn new(settings: QpSettings<T>) -> Self {
        Self { settings }
    }

    /// `warm_start` seeds the iterate (projected first); `lipschitz` skips the
    /// power iteration when the caller already knows a bound on `λ_max(P)`.
    pub fn solve(&self, qp: &BoxQp<T>, warm_start: Option<&DVector<T>>, lipschitz: Option<T>) -> QpSolution<T> {
        let n = qp.dim();
        let tol = self.settings.tol;
        let record = self.settings.record_objective;
        let mut trace = Vec::new();

        if !qp.bounds_consistent() {
            return QpSolution {
                x: DVector::zeros(n),
                status: QpStatus::InfeasibleBounds,
                kkt_residual: T::infinity(),
                iterations: 0,
                objective: T::infinity(),
                objective_trace: trace,
            };
        }

        let mut x = match warm_start {
            Some(w) if w.len() == n => w.clone(),
            _ => DVector::zeros(n),
        };
        qp.project(&mut x);

        let mut step_bound = lipschitz.unwrap_or_else(|| qp.lipschitz_estimate());
        // Flat Hessian: any positive step works; keep it finite so infinite bounds still move.
        let floor = T::lit(1e-12) * (T::one() + qp.q.amax());
        if !(step_bound > floor) {
            step_bound = floor;
        }

        let mut grad = &qp.p * &x + &qp.q;
        let mut fx = T::lit(0.5) * (grad.dot(&x) + qp.q.dot(&x));
        if record {
            trace.push(fx);
        }
        let mut kkt = qp.kkt_measure_with_grad(&x, &grad);
        if kkt <= tol {
            return QpSolution {
                x,
                status: QpStatus::Optimal,
                kkt_residual: kkt,
                iterations: 0,
                objective: fx,
                objective_trace: trace,
            };
        }

        let blowup = T::lit(1e15) * (T::one() + qp.q.amax() + x.amax());
        let mut x_prev = x.clone();
        let mut y = DVector::zeros(n);
        let mut grad_y = DVector::zeros(n);
        let mut cand = DVector::zeros(n);
        let mut grad_c = DVector::zeros(n);
        let mut momentum = T::one();

        for iter in 1..=self.settings.max_iter {
            let next_momentum = (T::one() + (T::one() + T::lit(4.0) * momentum * momentum).sqrt()) * T::lit(0.5);
            let beta = (momentum - T::one()) / next_momentum;

            // y = x + beta (x - x_prev)
            y.copy_from(&x);
            y.axpy(beta, &x, T::one());
            y.axpy(-beta, &x_prev, T::one());
            grad_y.copy_from(&qp.q);
            grad_y.gemv(T::one(), &qp.p, &y, T::one());
            cand.copy_from(&y);
            cand.axpy(-T::one() / step_bound, &grad_y, T::one());
            qp.project(&mut cand);
            grad_c.copy_from(&qp.q);
            grad_c.gemv(T::one(), &qp.p, &cand, T::one());
            let mut f_cand = T::lit(0.5) * (grad_c.dot(&cand) + qp.q.dot(&cand));

            // Objective differences near the optimum are at rounding level.
            let slack = T::lit(1e-14) * (T::one() + fx.abs());
            if f_cand > fx {
                // Restart momentum and fall back to a plain projected gradient step from x.
                momentum = T::one();
                loop {
                    cand.copy_from(&x);
                    cand.axpy(-T::one() / step_bound, &grad, T::one());
                    qp.project(&mut cand);
                    grad_c.copy_from(&qp.q);
                    grad_c.gemv(T::one(), &qp.p, &cand, T::one());
                    f_cand = T::lit(0.5) * (grad_c.dot(&cand) + qp.q.dot(&cand));
                    if f_cand <= fx + slack {
                        break;
                    }
                    // Step bound too optimistic.
                    step_bound *= T::lit(2.0);
                    if !step_bound.is_finite_value() {
                        f_cand = fx;
                        cand.copy_from(&x);
                        grad_c.copy_from(&grad);
                        break;
                    }
                }
            } else {
                momentum = next_momentum;
            }

            std::mem::swap(&mut x_prev, &mut x);
            std::mem::swap(&mut x, &mut cand);
            std::mem::swap(&mut grad, &mut grad_c);
            fx = f_cand;
            if record {
                trace.push(fx);
            }

            kkt = qp.kkt_measure_with_grad(&x, &grad);
            if kkt <= tol {
                return QpSolution {
                    x,
                    status: QpStatus::Optimal,
                    kkt_residual: kkt,
                    iterations: iter,
                    objective: fx,
                    objective_trace: trace,
                };
            }
            if !fx.is_finite_value() || x.amax() > blowup {
                return QpSolution {
                    x,
                    status: QpStatus::Unbounded,
                    kkt_residual: kkt,
                    iterations: iter,
                    objective: fx,
                    objective_trace: trace,
                };
            }
        }

        QpSolution {
            x,
            status: QpStatus::MaxIterations,
            kkt_residual: kkt,
            iterations: self.settings.max_iter,
            objective: fx,
            objective_trace: trace,
        }
    }
}

/// Solves `min ½xᵀPx + qᵀx s.t. A_eq x = b_eq` through the KKT system
/// `[[P, A_eqᵀ], [A_eq, 0]] [x; ν] = [-q; b_eq]`.
pub fn solve_equality_qp<T: Real>(
    p: &DMatrix<T>,
    q: &DVector<T>,
    a_eq: &DMatrix<T>,
    b_eq: &DVector<T>,
) -> Result<DVector<T>> {
    Ok(solve_equality_qp_with_multipliers(p, q, a_eq, b_eq)?.0)
}

/// As [`solve_equality_qp`], also returning the multipliers `ν`.
pub fn solve_equality_qp_with_multipliers<T: Real>(
    p: &DMatrix<T>,
    q: &DVector<T>,
    a_eq: &DMatrix<T>,
    b_eq: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>)> {
    let n = q.len();
    let m = b_eq.len();
    if p.nrows() != n || p.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "KKT Hessian",
            expected: n,
            got: p.nrows(),
        });
    }
    if a_eq.nrows() != m || (m > 0 && a_eq.ncols() != n) {
        return Err(Error::DimensionMismatch {
            what: "equality constraint matrix",
            expected: m,
            got: a_eq.nrows(),
        });
    }
    let mut kkt = DMatrix::zeros(n + m, n + m);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    if m > 0 {
        kkt.view_mut((n, 0), (m, n)).copy_from(a_eq);
        kkt.view_mut((0, n), (n, m)).copy_from(&a_eq.transpose());
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(&(-q));
    rhs.rows_mut(n, m).copy_from(b_eq);

    let scale = kkt.amax().max(T::one());
    let lu = kkt.lu();
    let u = lu.u();
    let min_pivot = u
        .diagonal()
        .iter()
        .map(|v| v.abs())
        .fold(T::infinity(), |a, b| a.min(b));
    if !(min_pivot > T::lit(1e-13) * scale) {
        return Err(Error::SingularKkt {
            pivot: min_pivot.to_f64_lossy(),
        });
    }
    let sol = lu.solve(&rhs).ok_or(Error::SingularKkt { pivot: 0.0 })?;
    Ok((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn interior_minimum() {
        let qp = BoxQp::new(
            DMatrix::<f64>::identity(3, 3),
            DVector::zeros(3),
            DVector::from_element(3, -1.0),
            DVector::from_element(3, 1.0),
        )
        .unwrap();
        let sol = solve_box_qp(&qp, 1e-10, 100);
        assert!(sol.is_optimal());
        assert_eq!(sol.x, DVector::zeros(3));
    }

    #[test]
    fn scalar_clip() {
        let qp = BoxQp::new(dmatrix![1.0], dvector![-3.0], dvector![-1.0], dvector![1.0]).unwrap();
        let sol = solve_box_qp(&qp, 1e-10, 100);
        assert!(sol.is_optimal());
        assert_eq!(sol.x[0], 1.0);
    }

    #[test]
    fn infeasible_bounds() {
        let qp = BoxQp::new(dmatrix![1.0], dvector![0.0], dvector![1.0], dvector![-1.0]).unwrap();
        assert_eq!(solve_box_qp(&qp, 1e-8, 100).status, QpStatus::InfeasibleBounds);
    }

    #[test]
    fn detects_unbounded_flat_direction() {
        let qp = BoxQp::unbounded(dmatrix![1.0, 0.0; 0.0, 0.0], dvector![0.0, -1.0]).unwrap();
        let sol = solve_box_qp(&qp, 1e-8, 100_000);
        assert_ne!(sol.status, QpStatus::Optimal);
    }

    #[test]
    fn flat_direction_with_finite_box_is_fine() {
        let qp = BoxQp::new(
            dmatrix![1.0, 0.0; 0.0, 0.0],
            dvector![-0.5, -1.0],
            dvector![-2.0, -2.0],
            dvector![2.0, 2.0],
        )
        .unwrap();
        let sol = solve_box_qp(&qp, 1e-10, 1000);
        assert!(sol.is_optimal());
        assert!((sol.x - dvector![0.5, 2.0]).amax() < 1e-9);
    }

    #[test]
    fn rejects_asymmetric_hessian() {
        assert!(BoxQp::unbounded(dmatrix![1.0, 0.5; 0.0, 1.0], dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_dimensional() {
        let qp = BoxQp::<f64>::unbounded(DMatrix::zeros(0, 0), DVector::zeros(0)).unwrap();
        assert!(solve_box_qp(&qp, 1e-8, 10).is_optimal());
    }

    #[test]
    fn objective_trace_is_monotone() {
        let p = dmatrix![4.0, 1.0, 0.5; 1.0, 3.0, 0.2; 0.5, 0.2, 0.1];
        let qp = BoxQp::new(
            p,
            dvector![-8.0, 3.0, 1.0],
            DVector::from_element(3, -1.0),
            DVector::from_element(3, 1.0),
        )
        .unwrap();
        let mut settings = QpSettings::new(1e-12, 10_000);
        settings.record_objective = true;
        let sol = BoxQpSolver::new(settings).solve(&qp, None, None);
        assert!(sol.is_optimal());
        for w in sol.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn equality_qp_symmetric_projection() {
        let x = solve_equality_qp(
            &DMatrix::<f64>::identity(2, 2),
            &DVector::zeros(2),
            &dmatrix![1.0, 1.0],
            &dvector![2.0],
        )
        .unwrap();
        assert!((x - dvector![1.0, 1.0]).amax() < 1e-14);
    }

    #[test]
    fn equality_qp_without_constraints() {
        let p = dmatrix![2.0, 0.0; 0.0, 4.0];
        let x = solve_equality_qp(&p, &dvector![2.0, -4.0], &DMatrix::zeros(0, 2), &DVector::zeros(0)).unwrap();
        assert!((x - dvector![-1.0, 1.0]).amax() < 1e-14);
    }

    #[test]
    fn equality_qp_singular() {
        let err = solve_equality_qp(
            &DMatrix::<f64>::zeros(2, 2),
            &DVector::zeros(2),
            &dmatrix![1.0, 1.0],
            &dvector![1.0],
        );
        assert!(matches!(err, Err(Error::SingularKkt { .. })));
    }

    #[test]
    fn works_in_f32() {
        let qp = BoxQp::new(dmatrix![2.0f32], dvector![-1.0f32], dvector![-5.0f32], dvector![5.0f32]).unwrap();
        let sol = solve_box_qp(&qp, 1e-5, 100);
        assert!(sol.is_optimal());
        assert!((sol.x[0] - 0.5).abs() < 1e-5);
    }
}
