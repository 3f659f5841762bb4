//! Parametric sampling and triangulation of superquadric surfaces.
//!
//! The surface is traced by latitude `eta` in `[-pi/2, pi/2]` and longitude
//! `omega` in `[-pi, pi)`:
//!
//! ```text
//! x = ax * C(eta, e1) * C(omega, e2)
//! y = ay * C(eta, e1) * S(omega, e2)
//! z = az * S(eta, e1)
//! ```
//!
//! with `C(t, e) = sgn(cos t) |cos t|^e` and `S(t, e) = sgn(sin t) |sin t|^e`.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PointCloud, TriangleMesh};
use crate::superquadric::Superquadric;

/// Grid used to bound the area element before rejection sampling.
const ENVELOPE_ETA_STEPS: usize = 64;
const ENVELOPE_OMEGA_STEPS: usize = 128;
const ENVELOPE_MARGIN: f64 = 1.25;

#[inline]
fn spow_cos(t: f64, e: f64) -> f64 {
    let c = t.cos();
    c.signum() * c.abs().powf(e)
}

#[inline]
fn spow_sin(t: f64, e: f64) -> f64 {
    let s = t.sin();
    s.signum() * s.abs().powf(e)
}

#[inline]
fn d_spow_cos(t: f64, e: f64) -> f64 {
    -e * t.cos().abs().powf(e - 1.0) * t.sin()
}

#[inline]
fn d_spow_sin(t: f64, e: f64) -> f64 {
    e * t.sin().abs().powf(e - 1.0) * t.cos()
}

struct Parametric {
    a: [f64; 3],
    e1: f64,
    e2: f64,
}

impl Parametric {
    fn new(sq: &Superquadric) -> Self {
        Self {
            a: sq.scale().as_array(),
            e1: sq.shape().eps1(),
            e2: sq.shape().eps2(),
        }
    }

    fn point(&self, eta: f64, omega: f64) -> Vector3<f64> {
        let ce = spow_cos(eta, self.e1);
        Vector3::new(
            self.a[0] * ce * spow_cos(omega, self.e2),
            self.a[1] * ce * spow_sin(omega, self.e2),
            self.a[2] * spow_sin(eta, self.e1),
        )
    }

    /// Surface area element `|dr/deta x dr/domega|`.
    fn area_element(&self, eta: f64, omega: f64) -> f64 {
        let (ce, dce) = (spow_cos(eta, self.e1), d_spow_cos(eta, self.e1));
        let (co, dco) = (spow_cos(omega, self.e2), d_spow_cos(omega, self.e2));
        let (so, dso) = (spow_sin(omega, self.e2), d_spow_sin(omega, self.e2));
        let r_eta = Vector3::new(
            self.a[0] * dce * co,
            self.a[1] * dce * so,
            self.a[2] * d_spow_sin(eta, self.e1),
        );
        let r_omega = Vector3::new(self.a[0] * ce * dco, self.a[1] * ce * dso, 0.0);
        r_eta.cross(&r_omega).norm()
    }

    fn envelope(&self) -> f64 {
        let mut max = 0.0f64;
        for i in 0..ENVELOPE_ETA_STEPS {
            let eta = -FRAC_PI_2 + (i as f64 + 0.5) * PI / ENVELOPE_ETA_STEPS as f64;
            for j in 0..ENVELOPE_OMEGA_STEPS {
                let omega = -PI + (j as f64 + 0.5) * 2.0 * PI / ENVELOPE_OMEGA_STEPS as f64;
                let j = self.area_element(eta, omega);
                if j.is_finite() {
                    max = max.max(j);
                }
            }
        }
        max * ENVELOPE_MARGIN
    }
}

/// Samples `n` surface points, approximately uniform by area.
///
/// Parameters are proposed uniformly and accepted with probability
/// proportional to the area element, capped by an envelope from a coarse
/// scan. Near the creases of very square shapes the area element is
/// unbounded, so those regions are slightly under-sampled.
pub fn sample_surface(sq: &Superquadric, n: usize, seed: u64) -> PointCloud {
    let param = Parametric::new(sq);
    let envelope = param.envelope();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let eta = rng.random_range(-FRAC_PI_2..FRAC_PI_2);
        let omega = rng.random_range(-PI..PI);
        let u: f64 = rng.random();
        if u * envelope <= param.area_element(eta, omega) {
            points.push(sq.pose().to_world(&param.point(eta, omega)));
        }
    }
    PointCloud::new(points)
}

/// Closed triangulation over a `resolution x 2*resolution` latitude/longitude
/// grid with a single apex vertex at each pole. Faces are wound
/// counter-clockwise seen from outside.
pub fn make_mesh(sq: &Superquadric, resolution: usize) -> TriangleMesh {
    let res = resolution.max(4);
    let cols = 2 * res;
    let param = Parametric::new(sq);
    let az = sq.scale().az();

    let mut vertices = Vec::with_capacity((res - 1) * cols + 2);
    vertices.push(sq.pose().to_world(&Vector3::new(0.0, 0.0, -az)));
    for i in 1..res {
        let eta = -FRAC_PI_2 + i as f64 * PI / res as f64;
        for j in 0..cols {
            let omega = -PI + j as f64 * 2.0 * PI / cols as f64;
            vertices.push(sq.pose().to_world(&param.point(eta, omega)));
        }
    }
    let north = vertices.len();
    vertices.push(sq.pose().to_world(&Vector3::new(0.0, 0.0, az)));

    let ring = |i: usize, j: usize| 1 + (i - 1) * cols + (j % cols);
    let mut faces = Vec::with_capacity(2 * (res - 1) * cols);
    for j in 0..cols {
        faces.push([0, ring(1, j + 1), ring(1, j)]);
    }
    for i in 1..res - 1 {
        for j in 0..cols {
            let (a, b) = (ring(i, j), ring(i, j + 1));
            let (c, d) = (ring(i + 1, j + 1), ring(i + 1, j));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    for j in 0..cols {
        faces.push([ring(res - 1, j), ring(res - 1, j + 1), north]);
    }
    TriangleMesh::new(vertices, faces).expect("grid triangulation is valid by construction")
}
