//! Brute-force reference solvers used to audit the iterative ones.
//!
//! These never call into [`crate::qp::BoxQpSolver`]; they exist so the CLI
//! `verify` command and the test suites can cross-check results.

use nalgebra::{DMatrix, DVector};

use crate::qp::BoxQp;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pin {
    Lower,
    Upper,
    Free,
}

/// Exhaustive active-set enumeration over all `3^n` lower/upper/free patterns.
///
/// Each pattern fixes the pinned coordinates, solves the reduced stationarity
/// system for the free ones, and is kept if the result lies in the box. Returns
/// the feasible candidate with the smallest objective, or `None` if no pattern
/// yields one (e.g. unbounded problems). Only sensible for `n` up to about 8.
pub fn enumerate_box_qp<T: Real>(qp: &BoxQp<T>) -> Option<(DVector<T>, T)> {
    let n = qp.dim();
    assert!(n <= 12, "active-set enumeration is exponential in n");
    let slack = T::lit(1e-11);
    let mut best: Option<(DVector<T>, T)> = None;
    let mut pattern = vec![Pin::Lower; n];
    let total = 3usize.pow(n as u32);

    for code in 0..total {
        let mut c = code;
        for pin in pattern.iter_mut() {
            *pin = match c % 3 {
                0 => Pin::Lower,
                1 => Pin::Upper,
                _ => Pin::Free,
            };
            c /= 3;
        }
        let Some(x) = candidate(qp, &pattern) else {
            continue;
        };
        let feasible = (0..n).all(|i| x[i] >= qp.lower[i] - slack && x[i] <= qp.upper[i] + slack);
        if !feasible {
            continue;
        }
        let mut x = x;
        qp.project(&mut x);
        let f = qp.objective(&x);
        if best.as_ref().is_none_or(|(_, fb)| f < *fb) {
            best = Some((x, f));
        }
    }
    best
}

fn candidate<T: Real>(qp: &BoxQp<T>, pattern: &[Pin]) -> Option<DVector<T>> {
    let n = qp.dim();
    let mut x = DVector::zeros(n);
    let mut free = Vec::new();
    for (i, pin) in pattern.iter().enumerate() {
        match pin {
            Pin::Lower => x[i] = qp.lower[i],
            Pin::Upper => x[i] = qp.upper[i],
            Pin::Free => free.push(i),
        }
        if !x[i].is_finite_value() {
            return None;
        }
    }
    if free.is_empty() {
        return Some(x);
    }
    let k = free.len();
    let reduced = DMatrix::from_fn(k, k, |r, c| qp.p[(free[r], free[c])]);
    let rhs = DVector::from_fn(k, |r, _| {
        let i = free[r];
        let fixed: T = (0..n)
            .filter(|j| pattern[*j] != Pin::Free)
            .map(|j| qp.p[(i, j)] * x[j])
            .sum();
        -(qp.q[i] + fixed)
    });
    let lu = reduced.lu();
    let min_pivot = lu
        .u()
        .diagonal()
        .iter()
        .map(|v| v.abs())
        .fold(T::infinity(), |a, b| a.min(b));
    if !(min_pivot > T::lit(1e-12) * qp.p.amax().max(T::one())) {
        return None;
    }
    let sol = lu.solve(&rhs)?;
    for (r, &i) in free.iter().enumerate() {
        x[i] = sol[r];
    }
    Some(x)
}
