//! Exact solver for small strictly convex QPs with box bounds and at most
//! one extra affine inequality:
//!
//! ```text
//! minimize   1/2 u' Q u - c' u
//! subject to lower <= u <= upper,  a' u <= b
//! ```
//!
//! Every active set (each variable free, at its lower or at its upper
//! bound; the affine row active or not) is enumerated and its KKT system
//! solved. With `Q` positive definite the optimum is unique, and among the
//! candidates passing the KKT checks the one with the lowest objective is
//! returned. This is `2 * 3^m` small solves, fine for the handful of
//! inputs a safety filter sees.

use crate::{Matrix, Vector};

/// Largest input dimension accepted by the enumeration.
pub const MAX_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundState {
    Free,
    Lower,
    Upper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vector,
    pub bounds: Vec<BoundState>,
    pub affine_active: bool,
    /// Multiplier of the affine row.
    pub lambda: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QpError {
    #[error("problem is infeasible")]
    Infeasible,
    #[error("no KKT point found")]
    NoKktPoint,
    #[error("dimension {0} exceeds the enumeration limit")]
    TooLarge(usize),
}

#[derive(Debug, Clone)]
pub struct BoxAffineQp {
    pub q: Matrix,
    pub c: Vector,
    pub lower: Vector,
    pub upper: Vector,
    pub affine: Option<(Vector, f64)>,
    pub tol: f64,
}

impl BoxAffineQp {
    fn objective(&self, u: &Vector) -> f64 {
        0.5 * u.dot(&(&self.q * u)) - self.c.dot(u)
    }

    /// Smallest value of `a' u` over the box.
    pub fn min_affine_over_box(a: &Vector, lower: &Vector, upper: &Vector) -> f64 {
        (0..a.len()).map(|i| (a[i] * lower[i]).min(a[i] * upper[i])).sum()
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let m = self.c.len();
        if m > MAX_DIM {
            return Err(QpError::TooLarge(m));
        }
        let scale = 1.0 + self.c.amax() + self.q.amax();
        let tol = self.tol;
        if let Some((a, b)) = &self.affine {
            if Self::min_affine_over_box(a, &self.lower, &self.upper) > b + tol * (1.0 + b.abs()) {
                return Err(QpError::Infeasible);
            }
        }
        let mut states = vec![BoundState::Free; m];
        let mut best: Option<QpSolution> = None;
        let combos = 3usize.pow(m as u32);
        for code in 0..combos {
            let mut rest = code;
            let mut skip = false;
            for s in states.iter_mut() {
                *s = match rest % 3 {
                    0 => BoundState::Free,
                    1 => BoundState::Lower,
                    _ => BoundState::Upper,
                };
                rest /= 3;
            }
            for i in 0..m {
                if states[i] == BoundState::Upper && self.lower[i] == self.upper[i] {
                    skip = true;
                }
            }
            if skip {
                continue;
            }
            let actives: &[bool] = if self.affine.is_some() { &[false, true] } else { &[false] };
            for &active in actives {
                if let Some(sol) = self.try_active_set(&states, active, tol, scale) {
                    if best.as_ref().is_none_or(|b| sol.objective < b.objective) {
                        best = Some(sol);
                    }
                }
            }
        }
        best.ok_or(QpError::NoKktPoint)
    }

    fn try_active_set(
        &self,
        states: &[BoundState],
        affine_active: bool,
        tol: f64,
        scale: f64,
    ) -> Option<QpSolution> {
        let m = states.len();
        let free: Vec<usize> = (0..m).filter(|&i| states[i] == BoundState::Free).collect();
        let mut u = Vector::zeros(m);
        for i in 0..m {
            match states[i] {
                BoundState::Lower => u[i] = self.lower[i],
                BoundState::Upper => u[i] = self.upper[i],
                BoundState::Free => {}
            }
        }
        // right-hand side for the free block: c_F - Q_FB u_B
        let rhs = Vector::from_fn(free.len(), |k, _| {
            let i = free[k];
            self.c[i]
                - (0..m)
                    .filter(|j| states[*j] != BoundState::Free)
                    .map(|j| self.q[(i, j)] * u[j])
                    .sum::<f64>()
        });
        let q_ff = Matrix::from_fn(free.len(), free.len(), |r, c| self.q[(free[r], free[c])]);

        let mut lambda = 0.0;
        let mut lambda_range: Option<(f64, f64)> = None;
        if affine_active {
            let (a, b) = self.affine.as_ref()?;
            let a_f = Vector::from_fn(free.len(), |k, _| a[free[k]]);
            let fixed_part: f64 = (0..m)
                .filter(|j| states[*j] != BoundState::Free)
                .map(|j| a[j] * u[j])
                .sum();
            if a_f.amax() > 1e-12 * (1.0 + a.amax()) {
                let k = free.len();
                let mut kkt = Matrix::zeros(k + 1, k + 1);
                kkt.view_mut((0, 0), (k, k)).copy_from(&q_ff);
                for r in 0..k {
                    kkt[(r, k)] = a_f[r];
                    kkt[(k, r)] = a_f[r];
                }
                let mut full_rhs = Vector::zeros(k + 1);
                full_rhs.rows_mut(0, k).copy_from(&rhs);
                full_rhs[k] = b - fixed_part;
                let sol = kkt.lu().solve(&full_rhs)?;
                for r in 0..k {
                    u[free[r]] = sol[r];
                }
                lambda = sol[k];
            } else {
                // The affine row only touches fixed variables: its multiplier
                // is pinned down by the bound multipliers below.
                if !free.is_empty() {
                    let sol = q_ff.clone().cholesky()?.solve(&rhs);
                    for r in 0..free.len() {
                        u[free[r]] = sol[r];
                    }
                }
                if (a.dot(&u) - b).abs() > tol * (1.0 + b.abs()) {
                    return None;
                }
                lambda_range = Some((0.0, f64::INFINITY));
            }
        } else if !free.is_empty() {
            let sol = q_ff.clone().cholesky()?.solve(&rhs);
            for r in 0..free.len() {
                u[free[r]] = sol[r];
            }
        }

        // primal feasibility
        let ptol = |v: f64| tol * (1.0 + v.abs());
        for &i in &free {
            if u[i] < self.lower[i] - ptol(self.lower[i]) || u[i] > self.upper[i] + ptol(self.upper[i]) {
                return None;
            }
        }
        if let Some((a, b)) = &self.affine {
            if !affine_active && a.dot(&u) > b + ptol(*b) {
                return None;
            }
        }

        // dual feasibility: r = Q u - c, stationarity r + lambda a = mu_lo - mu_hi
        let r = &self.q * &u - &self.c;
        let dtol = tol * scale;
        let a = self.affine.as_ref().map(|(a, _)| a.clone()).unwrap_or_else(|| Vector::zeros(m));
        if let Some((mut lo, mut hi)) = lambda_range {
            for i in 0..m {
                if self.lower[i] == self.upper[i] {
                    continue;
                }
                // need (r_i + lambda a_i) >= 0 at lower, <= 0 at upper
                let (sign, ok) = match states[i] {
                    BoundState::Lower => (1.0, true),
                    BoundState::Upper => (-1.0, true),
                    BoundState::Free => (0.0, false),
                };
                if !ok {
                    continue;
                }
                let ri = sign * r[i];
                let ai = sign * a[i];
                // ri + lambda ai >= -dtol
                if ai.abs() < 1e-15 {
                    if ri < -dtol {
                        return None;
                    }
                } else if ai > 0.0 {
                    lo = lo.max((-dtol - ri) / ai);
                } else {
                    hi = hi.min((-dtol - ri) / ai);
                }
            }
            if lo > hi {
                return None;
            }
            lambda = lo;
        } else {
            if affine_active && lambda < -dtol {
                return None;
            }
            for i in 0..m {
                if self.lower[i] == self.upper[i] {
                    // pinned variable: its multiplier has either sign
                    continue;
                }
                let g = r[i] + lambda * a[i];
                match states[i] {
                    BoundState::Lower if g < -dtol => return None,
                    BoundState::Upper if g > dtol => return None,
                    _ => {}
                }
            }
        }
        let objective = self.objective(&u);
        Some(QpSolution {
            u,
            bounds: states.to_vec(),
            affine_active,
            lambda: lambda.max(0.0),
            objective,
        })
    }
}
