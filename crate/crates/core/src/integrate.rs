//! Classic fixed-step fourth-order Runge-Kutta, plain and with the
//! variational (sensitivity) equation `Phi' = J(y) Phi` carried along.
//!
//! Both steppers produce bit-identical state sequences for the same field,
//! so a sensitivity pass can replay a stored trajectory exactly.

use crate::{Matrix, Result, Vector};

fn stage(y: &Vector, k: &Vector, h: f64) -> Vector {
    y + k * h
}

fn combine(y: &Vector, k1: &Vector, k2: &Vector, k3: &Vector, k4: &Vector, dt: f64) -> Vector {
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

pub fn rk4_step<F>(field: F, y: &Vector, dt: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    let k1 = field(y)?;
    let k2 = field(&stage(y, &k1, 0.5 * dt))?;
    let k3 = field(&stage(y, &k2, 0.5 * dt))?;
    let k4 = field(&stage(y, &k3, dt))?;
    Ok(combine(y, &k1, &k2, &k3, &k4, dt))
}

/// One step of `y' = F(y)` together with `Phi' = J(y) Phi`.
pub fn rk4_variational_step<F, J>(
    field: F,
    jacobian: J,
    y: &Vector,
    phi: &Matrix,
    dt: f64,
) -> Result<(Vector, Matrix)>
where
    F: Fn(&Vector) -> Result<Vector>,
    J: Fn(&Vector) -> Result<Matrix>,
{
    let y1 = y.clone();
    let k1 = field(&y1)?;
    let p1 = jacobian(&y1)? * phi;
    let y2 = stage(y, &k1, 0.5 * dt);
    let k2 = field(&y2)?;
    let p2 = jacobian(&y2)? * (phi + &p1 * (0.5 * dt));
    let y3 = stage(y, &k2, 0.5 * dt);
    let k3 = field(&y3)?;
    let p3 = jacobian(&y3)? * (phi + &p2 * (0.5 * dt));
    let y4 = stage(y, &k3, dt);
    let k4 = field(&y4)?;
    let p4 = jacobian(&y4)? * (phi + &p3 * dt);
    let y_next = combine(y, &k1, &k2, &k3, &k4, dt);
    let phi_next = phi + (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (dt / 6.0);
    Ok((y_next, phi_next))
}
