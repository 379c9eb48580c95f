//! Discrete-time LTI agent models.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Real, Result};

/// `x(t+1) = A x(t) + B u(t) + B_w w(t)` with an infinity-norm input bound.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiAgent<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
    noise: DMatrix<T>,
    u_max: T,
}

impl<T: Real> LtiAgent<T> {
    /// General model. The disturbance enters through `B` unless overridden with
    /// [`LtiAgent::with_noise_channel`]. Pass `T::infinity()` for an unbounded input.
    pub fn new(a: DMatrix<T>, b: DMatrix<T>, u_max: T) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidArgument(format!(
                "state matrix is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch {
                what: "input matrix rows",
                expected: a.nrows(),
                got: b.nrows(),
            });
        }
        if !(u_max > T::zero()) {
            return Err(Error::InvalidArgument(format!("u_max must be positive, got {u_max}")));
        }
        let noise = b.clone();
        Ok(Self { a, b, noise, u_max })
    }

    /// Euler-discretized 3-D double integrator.
    ///
    /// State is `(p_x, v_x, p_y, v_y, p_z, v_z)`; input is a force in each axis.
    /// Acceleration noise enters as `T_s * w` on each velocity (unit mass channel).
    pub fn double_integrator_3d(ts: T, mass: T, u_max: T) -> Result<Self> {
        if !(ts > T::zero()) || !ts.is_finite_value() {
            return Err(Error::InvalidArgument(format!(
                "sample time must be positive, got {ts}"
            )));
        }
        if !(mass > T::zero()) || !mass.is_finite_value() {
            return Err(Error::InvalidArgument(format!("mass must be positive, got {mass}")));
        }
        let mut a = DMatrix::identity(6, 6);
        let mut b = DMatrix::zeros(6, 3);
        let mut noise = DMatrix::zeros(6, 3);
        for axis in 0..3 {
            a[(2 * axis, 2 * axis + 1)] = ts;
            b[(2 * axis + 1, axis)] = ts / mass;
            noise[(2 * axis + 1, axis)] = ts;
        }
        let mut agent = Self::new(a, b, u_max)?;
        agent.noise = noise;
        Ok(agent)
    }

    pub fn with_noise_channel(mut self, noise: DMatrix<T>) -> Result<Self> {
        if noise.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "noise channel rows",
                expected: self.n(),
                got: noise.nrows(),
            });
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn noise_dim(&self) -> usize {
        self.noise.ncols()
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn noise_channel(&self) -> &DMatrix<T> {
        &self.noise
    }

    pub fn u_max(&self) -> T {
        self.u_max
    }

    pub fn step(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> Result<DVector<T>> {
        self.check(x, u)?;
        if w.len() != self.noise_dim() {
            return Err(Error::DimensionMismatch {
                what: "noise vector",
                expected: self.noise_dim(),
                got: w.len(),
            });
        }
        Ok(&self.a * x + &self.b * u + &self.noise * w)
    }

    /// Noiseless prediction; returns `inputs.len() + 1` states starting at `x0`.
    pub fn rollout(&self, x0: &DVector<T>, inputs: &[DVector<T>]) -> Result<Vec<DVector<T>>> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0.clone());
        for u in inputs {
            let x = states.last().expect("non-empty");
            self.check(x, u)?;
            let next = &self.a * x + &self.b * u;
            states.push(next);
        }
        if inputs.is_empty() && x0.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: self.n(),
                got: x0.len(),
            });
        }
        Ok(states)
    }

    fn check(&self, x: &DVector<T>, u: &DVector<T>) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "state vector",
                expected: self.n(),
                got: x.len(),
            });
        }
        if u.len() != self.m() {
            return Err(Error::DimensionMismatch {
                what: "input vector",
                expected: self.m(),
                got: u.len(),
            });
        }
        Ok(())
    }
}
