//! Damped Gauss-Newton (Levenberg-Marquardt) refinement of a superquadric
//! against weighted radial residuals.
//!
//! The step vector has one entry per degree of freedom: two exponents, three
//! scales, a rotation increment applied in the local frame and a translation.
//! Jacobians are analytic, evaluated in log space so that large exponents
//! never overflow; the tests check them against central differences.

use nalgebra::{Matrix3, Rotation3, SMatrix, SVector, Vector3};

use super::FitBounds;
use crate::superquadric::{Point3, Superquadric, PARAM_DIM};

type Mat = SMatrix<f64, PARAM_DIM, PARAM_DIM>;
type Vec11 = SVector<f64, PARAM_DIM>;

const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e12;

/// Signed radial residual, positive outside. The local origin maps to minus
/// the smallest semi-axis.
#[inline]
pub(crate) fn signed_residual(sq: &Superquadric, p: &Point3) -> f64 {
    let local = sq.pose().to_local(p);
    sq.signed_radial_local(&local).unwrap_or(-sq.scale().min())
}

/// `Σ w_i d_i²` over the points with positive weight.
pub(crate) fn weighted_cost(sq: &Superquadric, points: &[Point3], weights: &[f64]) -> f64 {
    points
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(p, &w)| {
            let d = signed_residual(sq, p);
            w * d * d
        })
        .sum()
}

/// Applies a step, optionally projecting exponents and scales into `bounds`.
fn apply_step(sq: &Superquadric, step: &Vec11, bounds: Option<&FitBounds>) -> Superquadric {
    let mut eps = [sq.shape().eps1() + step[0], sq.shape().eps2() + step[1]];
    let a = sq.scale().as_array();
    let mut scale = [a[0] + step[2], a[1] + step[3], a[2] + step[4]];
    if let Some(b) = bounds {
        for e in &mut eps {
            *e = e.clamp(b.eps_min, b.eps_max);
        }
        for s in &mut scale {
            *s = s.clamp(b.scale_min, b.scale_max);
        }
    }
    let rot = sq.pose().rotation() * Rotation3::new(Vector3::new(step[5], step[6], step[7]));
    let t = sq.pose().translation() + Vector3::new(step[8], step[9], step[10]);
    Superquadric::new_unchecked(eps[0], eps[1], scale, rot, t)
}

/// `ln(e^a + e^b)`, exact when either side is `-inf`.
#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

/// `e^(a - b)`, zero when `a` is `-inf`.
#[inline]
fn share(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        0.0
    } else {
        (a - b).exp()
    }
}

/// `x * y` with `0 * inf = 0`.
#[inline]
fn weighted(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y
    }
}

/// Residuals and their gradients for one parameter vector.
struct Linearization {
    rt: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
    e1: f64,
    e2: f64,
    a: [f64; 3],
    ln_a: [f64; 3],
    a_min: f64,
}

impl Linearization {
    fn new(sq: &Superquadric) -> Self {
        let r = *sq.pose().rotation().matrix();
        let a = sq.scale().as_array();
        Self {
            rt: r.transpose(),
            r,
            t: *sq.pose().translation(),
            e1: sq.shape().eps1(),
            e2: sq.shape().eps2(),
            a,
            ln_a: a.map(f64::ln),
            a_min: sq.scale().min(),
        }
    }

    /// Signed residual and its gradient with respect to the step vector.
    fn row(&self, p: &Point3) -> (f64, Vec11) {
        let mut grad = Vec11::zeros();
        let q = self.rt * (p.coords - self.t);
        let rad = q.norm();
        if rad == 0.0 {
            return (-self.a_min, grad);
        }
        let (e1, e2) = (self.e1, self.e2);
        let ln_u = [0, 1, 2].map(|k| q[k].abs().ln() - self.ln_a[k]);
        let lx = 2.0 / e2 * ln_u[0];
        let ly = 2.0 / e2 * ln_u[1];
        let ln_xy = log_add(lx, ly);
        let ln_b = e2 / e1 * ln_xy;
        let lc = 2.0 / e1 * ln_u[2];
        let big_f = log_add(ln_b, lc);
        let b = share(ln_b, big_f);
        let c = share(lc, big_f);
        let sx = share(lx, ln_xy);
        let sy = share(ly, ln_xy);
        let g = (-0.5 * e1 * big_f).exp();
        let d = rad * (1.0 - g);
        let k = 0.5 * rad * g * e1;

        // partials of ln f
        let df_e1 = -(weighted(b, ln_b) + weighted(c, lc)) / e1;
        let df_e2 = weighted(b, ln_xy / e1 - 2.0 / (e1 * e2) * (weighted(sx, ln_u[0]) + weighted(sy, ln_u[1])));
        let df_a = [
            -2.0 / e1 * b * sx / self.a[0],
            -2.0 / e1 * b * sy / self.a[1],
            -2.0 / e1 * c / self.a[2],
        ];
        let coord = |num: f64, x: f64| if x == 0.0 { 0.0 } else { 2.0 / e1 * num / x };
        let df_q = Vector3::new(coord(b * sx, q.x), coord(b * sy, q.y), coord(c, q.z));

        grad[0] = 0.5 * rad * g * big_f + k * df_e1;
        grad[1] = k * df_e2;
        for i in 0..3 {
            grad[2 + i] = k * df_a[i];
        }
        let v = q * ((1.0 - g) / rad) + df_q * k;
        let dw = v.cross(&q);
        let dt = -(self.r * v);
        for i in 0..3 {
            grad[5 + i] = dw[i];
            grad[8 + i] = dt[i];
        }
        (d, grad)
    }
}

/// Normal equations `JᵀWJ` and `JᵀWr` at `sq`.
fn normal_equations(sq: &Superquadric, points: &[Point3], weights: &[f64]) -> (Mat, Vec11) {
    let lin = Linearization::new(sq);
    let mut jtj = Mat::zeros();
    let mut jtr = Vec11::zeros();
    for (p, &w) in points.iter().zip(weights) {
        if w <= 0.0 {
            continue;
        }
        let (r, row) = lin.row(p);
        jtj.syger(w, &row, &row, 1.0);
        jtr.axpy(w * r, &row, 1.0);
    }
    jtj.fill_upper_triangle_with_lower_triangle();
    (jtj, jtr)
}

/// Shape and scale coordinates sitting on a bound whose descent direction
/// points outside it; these are held fixed for the step.
fn pinned_at_bounds(sq: &Superquadric, jtr: &Vec11, bounds: &FitBounds) -> [bool; PARAM_DIM] {
    let mut pinned = [false; PARAM_DIM];
    let v = sq.to_vector();
    let limits = [
        (bounds.eps_min, bounds.eps_max),
        (bounds.eps_min, bounds.eps_max),
        (bounds.scale_min, bounds.scale_max),
        (bounds.scale_min, bounds.scale_max),
        (bounds.scale_min, bounds.scale_max),
    ];
    for (k, (lo, hi)) in limits.into_iter().enumerate() {
        let tol = 1e-12 * hi;
        pinned[k] = (v[k] <= lo + tol && jtr[k] > 0.0) || (v[k] >= hi - tol && jtr[k] < 0.0);
    }
    pinned
}

pub(crate) struct LsqOutcome {
    pub theta: Superquadric,
}

/// Runs up to `max_iters` accepted damped steps from `start`. The returned
/// cost never exceeds the starting cost: trial steps that do not decrease it
/// are rejected and the damping increased.
pub(crate) fn refine(
    start: &Superquadric,
    points: &[Point3],
    weights: &[f64],
    bounds: &FitBounds,
    max_iters: usize,
) -> LsqOutcome {
    let mut theta = *start;
    let mut cost = weighted_cost(&theta, points, weights);
    let mut lambda = LAMBDA_INIT;
    'outer: for _ in 0..max_iters {
        if cost == 0.0 {
            break;
        }
        let (jtj, jtr) = normal_equations(&theta, points, weights);
        let diag_floor = jtj.diagonal().max() * 1e-12;
        let pinned = pinned_at_bounds(&theta, &jtr, bounds);
        loop {
            let mut damped = jtj;
            let mut rhs = jtr;
            for k in 0..PARAM_DIM {
                damped[(k, k)] += lambda * jtj[(k, k)].max(diag_floor).max(f64::MIN_POSITIVE);
            }
            for k in (0..PARAM_DIM).filter(|&k| pinned[k]) {
                damped.row_mut(k).fill(0.0);
                damped.column_mut(k).fill(0.0);
                damped[(k, k)] = 1.0;
                rhs[k] = 0.0;
            }
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&rhs),
                None => {
                    lambda *= 4.0;
                    if lambda > LAMBDA_MAX {
                        break 'outer;
                    }
                    continue;
                }
            };
            let trial = apply_step(&theta, &step, Some(bounds));
            let trial_cost = weighted_cost(&trial, points, weights);
            if trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                theta = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(LAMBDA_MIN);
                if rel < 1e-12 {
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > LAMBDA_MAX {
                break 'outer;
            }
        }
    }
    LsqOutcome { theta }
}
