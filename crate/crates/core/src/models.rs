//! Small reference systems and constraints used by the generic scenarios
//! and by the test suites.

use crate::model::{Rd2Constraint, SystemModel};
use crate::{Matrix, Result, Vector};

/// `r' = v`, `v' = u` in `dim` independent axes.
#[derive(Debug, Clone, Copy)]
pub struct DoubleIntegrator {
    dim: usize,
}

impl DoubleIntegrator {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl SystemModel for DoubleIntegrator {
    fn rd2_dim(&self) -> usize {
        self.dim
    }
    fn rd1_dim(&self) -> usize {
        self.dim
    }
    fn f_r(&self, x: &Vector) -> Result<Vector> {
        Ok(x.rows(self.dim, self.dim).into_owned())
    }
    fn f_v(&self, _x: &Vector) -> Result<Vector> {
        Ok(Vector::zeros(self.dim))
    }
    fn g_diag(&self, _x: &Vector) -> Result<Vector> {
        Ok(Vector::from_element(self.dim, 1.0))
    }
    fn f_r_jacobian(&self, _x: &Vector) -> Result<Matrix> {
        let d = self.dim;
        Ok(Matrix::from_fn(d, 2 * d, |i, j| if j == d + i { 1.0 } else { 0.0 }))
    }
    fn f_v_jacobian(&self, _x: &Vector) -> Result<Matrix> {
        Ok(Matrix::zeros(self.dim, 2 * self.dim))
    }
    fn g_diag_jacobian(&self, _x: &Vector) -> Result<Matrix> {
        Ok(Matrix::zeros(self.dim, 2 * self.dim))
    }
}

/// One-axis double integrator with constant drift and gain: `v' = a + b u`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarDrift {
    drift: f64,
    gain: f64,
}

impl ScalarDrift {
    pub fn new(drift: f64, gain: f64) -> Self {
        Self { drift, gain }
    }
}

impl SystemModel for ScalarDrift {
    fn rd2_dim(&self) -> usize {
        1
    }
    fn rd1_dim(&self) -> usize {
        1
    }
    fn f_r(&self, x: &Vector) -> Result<Vector> {
        Ok(Vector::from_element(1, x[1]))
    }
    fn f_v(&self, _x: &Vector) -> Result<Vector> {
        Ok(Vector::from_element(1, self.drift))
    }
    fn g_diag(&self, _x: &Vector) -> Result<Vector> {
        Ok(Vector::from_element(1, self.gain))
    }
}

/// Half-space constraint `h_r(r) = a . r - b`.
#[derive(Debug, Clone)]
pub struct LinearRd2 {
    normal: Vector,
    offset: f64,
}

impl LinearRd2 {
    pub fn new(normal: Vec<f64>, offset: f64) -> Self {
        Self {
            normal: Vector::from_vec(normal),
            offset,
        }
    }
}

impl Rd2Constraint for LinearRd2 {
    fn value(&self, r: &Vector) -> f64 {
        self.normal.dot(r) - self.offset
    }
    fn gradient(&self, _r: &Vector) -> Vector {
        self.normal.clone()
    }
    fn hessian(&self, r: &Vector) -> Matrix {
        Matrix::zeros(r.len(), r.len())
    }
}

/// Keep-out ball: `h_r(r) = radius^2 - |r - center|^2`.
#[derive(Debug, Clone)]
pub struct Ball {
    center: Vector,
    radius: f64,
}

impl Ball {
    pub fn new(center: Vector, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

impl Rd2Constraint for Ball {
    fn value(&self, r: &Vector) -> f64 {
        self.radius * self.radius - (r - &self.center).norm_squared()
    }
    fn gradient(&self, r: &Vector) -> Vector {
        (r - &self.center) * -2.0
    }
    fn hessian(&self, r: &Vector) -> Matrix {
        Matrix::identity(r.len(), r.len()) * -2.0
    }
}

type VecFn = Box<dyn Fn(&Vector) -> Vector + Send + Sync>;

/// Model assembled from closures; Jacobians fall back to finite differences.
pub struct FnModel {
    n: usize,
    m: usize,
    f_r: VecFn,
    f_v: VecFn,
    g: VecFn,
}

impl FnModel {
    pub fn new(
        n: usize,
        m: usize,
        f_r: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        f_v: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        g: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            f_r: Box::new(f_r),
            f_v: Box::new(f_v),
            g: Box::new(g),
        }
    }
}

impl SystemModel for FnModel {
    fn rd2_dim(&self) -> usize {
        self.n
    }
    fn rd1_dim(&self) -> usize {
        self.m
    }
    fn f_r(&self, x: &Vector) -> Result<Vector> {
        Ok((self.f_r)(x))
    }
    fn f_v(&self, x: &Vector) -> Result<Vector> {
        Ok((self.f_v)(x))
    }
    fn g_diag(&self, x: &Vector) -> Result<Vector> {
        Ok((self.g)(x))
    }
}

/// Constraint assembled from a closure.
pub struct FnRd2 {
    h: Box<dyn Fn(&Vector) -> f64 + Send + Sync>,
}

impl FnRd2 {
    pub fn new(h: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self { h: Box::new(h) }
    }
}

impl Rd2Constraint for FnRd2 {
    fn value(&self, r: &Vector) -> f64 {
        (self.h)(r)
    }
}
