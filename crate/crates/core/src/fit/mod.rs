//! Robust recovery of a single superquadric from a point cloud by
//! expectation, maximization and switching (EMS).
//!
//! Points are modelled as a mixture of a surface component, Gaussian in the
//! radial distance `d` with scale `sigma`, and a uniform outlier component
//! over the cloud's (inflated) bounding box:
//!
//! ```text
//! p(x) = (1 - w0) N(d(x); 0, sigma²) + w0 / V
//! ```
//!
//! Each round infers per-point inlier responsibilities (E), refits the
//! parameters and `sigma` against the responsibility-weighted residuals (M),
//! and periodically tries the axis-relabeled candidates of the current
//! estimate, switching when one explains the data better (S).

mod lsq;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{make_mesh, PointCloud};
use crate::superquadric::{Point3, Pose, ScaleParams, ShapeParams, Superquadric, EPS_MAX, EPS_MIN, PARAM_DIM};

/// Minimum number of points: one per degree of freedom.
pub const MIN_POINTS: usize = PARAM_DIM;
/// Responsibility below which a point no longer counts as an inlier.
pub const INLIER_FLOOR: f64 = 1e-3;
/// Floor on `sigma²`, mm².
pub const SIGMA2_FLOOR: f64 = 1e-4;
/// Upper bound on `sigma` relative to the mean semi-axis.
pub const SIGMA_MAX_REL: f64 = 0.1;
/// Outlier volume is the bounding-box volume times this factor.
pub const OUTLIER_VOLUME_INFLATION: f64 = 1.1;

/// Box constraints on exponents and scales.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub eps_min: f64,
    pub eps_max: f64,
    /// mm
    pub scale_min: f64,
    /// mm
    pub scale_max: f64,
}

impl FitBounds {
    /// Exponents in the convex range, scales between 0.1 mm and twice the
    /// cloud's bounding-box diagonal.
    pub fn for_cloud(cloud: &PointCloud) -> Self {
        let diag = cloud.bounding_box().map(|b| b.diagonal()).unwrap_or(1.0);
        Self {
            eps_min: EPS_MIN,
            eps_max: EPS_MAX,
            scale_min: 0.1,
            scale_max: (2.0 * diag).max(0.2),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = EPS_MIN <= self.eps_min
            && self.eps_min <= self.eps_max
            && self.eps_max <= EPS_MAX
            && 0.0 < self.scale_min
            && self.scale_min <= self.scale_max
            && self.scale_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("empty or inadmissible bounds {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Upper bound on E/M rounds.
    pub max_iters: usize,
    /// Stop when the relative log-likelihood change falls below this.
    pub tol: f64,
    /// Prior probability that a point is an outlier.
    pub w0: f64,
    /// Re-estimate `w0` each round as the mean outlier responsibility.
    pub estimate_w0: bool,
    /// Initial noise scale in mm; defaults to 5% of the bounding-box diagonal.
    pub sigma_init: Option<f64>,
    /// Damped least-squares iterations per maximization step.
    pub lsq_iters: usize,
    /// Run the switching step every this many rounds (0 disables the
    /// periodic search; the search at convergence always runs).
    pub switch_every: usize,
    /// Only used when `max_points` triggers subsampling.
    pub seed: u64,
    /// Fit on a seeded random subset when the cloud is larger than this.
    pub max_points: Option<usize>,
    /// Defaults to [`FitBounds::for_cloud`].
    pub bounds: Option<FitBounds>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 60,
            tol: 1e-6,
            w0: 0.1,
            estimate_w0: false,
            sigma_init: None,
            lsq_iters: 5,
            switch_every: 5,
            seed: 0,
            max_points: None,
            bounds: None,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.w0) {
            return Err(Error::InvalidParameter(format!("w0 = {} outside [0, 1)", self.w0)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        if self.max_iters == 0 || self.lsq_iters == 0 {
            return Err(Error::InvalidParameter("iteration counts must be at least 1".into()));
        }
        if let Some(s) = self.sigma_init {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidParameter("sigma_init must be positive".into()));
            }
        }
        if let Some(b) = &self.bounds {
            b.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub theta: Superquadric,
    /// Surface noise scale, mm.
    pub sigma: f64,
    /// Outlier prior in effect at the end of the fit.
    pub w0: f64,
    /// Per-point inlier probability at the final estimate.
    pub responsibilities: Vec<f64>,
    /// Log-likelihood after initialization and after every accepted update.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// True if any switching step replaced the estimate.
    pub switched: bool,
}

/// Volume of the uniform outlier component: the cloud's bounding box,
/// inflated, and kept away from zero for flat boxes.
pub fn outlier_volume(cloud: &PointCloud) -> f64 {
    match cloud.bounding_box() {
        Some(b) => {
            let floor = (1e-3 * b.diagonal()).powi(3).max(f64::MIN_POSITIVE);
            (b.volume() * OUTLIER_VOLUME_INFLATION).max(floor)
        }
        None => 1.0,
    }
}

fn point_weights(cloud: &PointCloud) -> Vec<f64> {
    cloud
        .weights()
        .map(|w| w.to_vec())
        .unwrap_or_else(|| vec![1.0; cloud.len()])
}

/// Initial estimate from the cloud's first two moments.
///
/// Translation is the centroid and the axes are the covariance eigenvectors
/// in decreasing eigenvalue order (largest-magnitude component of the first
/// two made positive, the third their cross product). Scales are 1.2 times
/// the half-extents of the projected cloud. Both exponents start at 1.
pub fn initialize(cloud: &PointCloud) -> Result<Superquadric> {
    initialize_within(cloud, &FitBounds::for_cloud(cloud))
}

fn initialize_within(cloud: &PointCloud, bounds: &FitBounds) -> Result<Superquadric> {
    let n = cloud.len();
    if n < MIN_POINTS {
        return Err(Error::Underdetermined {
            required: MIN_POINTS,
            got: n,
        });
    }
    let weights = point_weights(cloud);
    let (centroid, rotation) = principal_frame(cloud.points(), &weights)?;
    let scales = half_extents(cloud.points(), &centroid, &rotation, bounds);
    build_start(scales, rotation, centroid)
}

/// Weighted centroid and right-handed principal axes, largest variance first.
fn principal_frame(points: &[Point3], weights: &[f64]) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    let wsum: f64 = weights.iter().sum();
    let centroid = points
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p.coords * *w)
        / wsum;
    let mut cov = Matrix3::zeros();
    for (p, w) in points.iter().zip(weights) {
        let d = p.coords - centroid;
        cov += d * d.transpose() * *w;
    }
    cov /= wsum;

    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    let smallest = eig.eigenvalues[order[2]];
    if !(largest > 0.0) || smallest <= 1e-10 * largest {
        return Err(Error::DegenerateCloud);
    }
    let axis = |k: usize| -> Vector3<f64> {
        let v: Vector3<f64> = eig.eigenvectors.column(order[k]).into_owned();
        if v[v.iamax()] < 0.0 {
            -v
        } else {
            v
        }
    };
    let ex = axis(0);
    let ez = ex.cross(&axis(1)).normalize();
    let ey = ez.cross(&ex);
    Ok((centroid, Matrix3::from_columns(&[ex, ey, ez])))
}

fn half_extents(points: &[Point3], centroid: &Vector3<f64>, rotation: &Matrix3<f64>, bounds: &FitBounds) -> [f64; 3] {
    let mut half = [0.0f64; 3];
    for (k, h) in half.iter_mut().enumerate() {
        let ax = rotation.column(k);
        let (lo, hi) = points
            .iter()
            .map(|p| (p.coords - centroid).dot(&ax))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        *h = (1.2 * 0.5 * (hi - lo)).clamp(bounds.scale_min, bounds.scale_max);
    }
    half
}

fn build_start(scales: [f64; 3], rotation: Matrix3<f64>, centroid: Vector3<f64>) -> Result<Superquadric> {
    Ok(Superquadric::new(
        ShapeParams::new(1.0, 1.0)?,
        ScaleParams::new(scales[0], scales[1], scales[2])?,
        Pose::new(rotation, centroid)?,
    ))
}

/// Rotates the cross-section a quarter of a right angle about the local
/// z-axis, mirroring `eps2` about 1 and stretching the in-plane scales to
/// reach the old diagonal radius. A rounded square and a rounded diamond
/// are close in shape but far apart in parameters.
fn twisted(theta: &Superquadric, bounds: &FitBounds) -> Option<Superquadric> {
    let s = theta.shape();
    let e2 = (2.0 - s.eps2()).clamp(bounds.eps_min, bounds.eps_max);
    let a = theta.scale().as_array();
    let radial = (0.5 * (a[0] + a[1]) * 2f64.powf(0.5 * (1.0 - s.eps2()))).clamp(bounds.scale_min, bounds.scale_max);
    let rot = theta.pose().rotation() * Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_4);
    Some(Superquadric::new(
        ShapeParams::new(s.eps1(), e2).ok()?,
        ScaleParams::new(radial, radial, a[2]).ok()?,
        Pose::new(*rot.matrix(), *theta.pose().translation()).ok()?,
    ))
}

/// Exponents tried from every start frame: round, then boxy.
const START_SHAPES: &[(f64, f64)] = &[(1.0, 1.0), (0.4, 0.4)];

/// Fraction of points kept by the trimmed start.
const TRIM_KEEP: f64 = 0.75;

/// Second start that ignores the points farthest from a robust center:
/// begins at the coordinate-wise median and repeatedly keeps the
/// [`TRIM_KEEP`] fraction closest in Mahalanobis distance.
fn trimmed_start(cloud: &PointCloud, bounds: &FitBounds) -> Option<Superquadric> {
    let points = cloud.points();
    let weights = point_weights(cloud);
    let keep = ((points.len() as f64 * TRIM_KEEP) as usize).max(MIN_POINTS);
    if keep >= points.len() {
        return None;
    }
    let median = |k: usize| {
        let mut v: Vec<f64> = points.iter().map(|p| p[k]).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let mut center = Vector3::new(median(0), median(1), median(2));
    let mut metric = Matrix3::identity();
    let mut kept: Vec<usize> = Vec::new();
    for _ in 0..4 {
        let mut ranked: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = p.coords - center;
                (d.dot(&(metric * d)), i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        kept = ranked[..keep].iter().map(|&(_, i)| i).collect();
        kept.sort_unstable();
        let sub: Vec<Point3> = kept.iter().map(|&i| points[i]).collect();
        let sw: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
        let (c, rot) = principal_frame(&sub, &sw).ok()?;
        center = c;
        let mut cov = Matrix3::zeros();
        let wsum: f64 = sw.iter().sum();
        for (p, w) in sub.iter().zip(&sw) {
            let d = p.coords - c;
            cov += d * d.transpose() * *w;
        }
        metric = (cov / wsum).try_inverse()?;
        let _ = rot;
    }
    let sub: Vec<Point3> = kept.iter().map(|&i| points[i]).collect();
    let sw: Vec<f64> = kept.iter().map(|&i| weights[i]).collect();
    let (c, rot) = principal_frame(&sub, &sw).ok()?;
    build_start(half_extents(&sub, &c, &rot, bounds), rot, c).ok()
}

#[inline]
fn log_gaussian(d: f64, sigma: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - 0.5 * (d / sigma).powi(2)
}

/// Log densities of the two mixture components for one residual.
#[inline]
fn component_logs(d: f64, sigma: f64, w0: f64, volume: f64) -> (f64, f64) {
    let inlier = (1.0 - w0).ln() + log_gaussian(d, sigma);
    let outlier = if w0 > 0.0 { w0.ln() - volume.ln() } else { f64::NEG_INFINITY };
    (inlier, outlier)
}

/// Inlier responsibilities
/// `γ_i = (1-w0) N(d_i) / ((1-w0) N(d_i) + w0 / V)`.
pub fn e_step(cloud: &PointCloud, theta: &Superquadric, sigma: f64, w0: f64, outlier_volume: f64) -> Vec<f64> {
    cloud
        .points()
        .iter()
        .map(|p| {
            let d = theta.radial_distance(p);
            let (li, lo) = component_logs(d, sigma, w0, outlier_volume);
            if lo == f64::NEG_INFINITY {
                1.0
            } else {
                // logistic of the log-odds, stable in both tails
                1.0 / (1.0 + (lo - li).exp())
            }
        })
        .collect()
}

/// Mixture log-likelihood `Σ w_i log((1-w0) N(d_i) + w0 / V)`.
pub fn log_likelihood(cloud: &PointCloud, theta: &Superquadric, sigma: f64, w0: f64, outlier_volume: f64) -> f64 {
    let weights = point_weights(cloud);
    cloud
        .points()
        .iter()
        .zip(&weights)
        .map(|(p, w)| {
            let d = theta.radial_distance(p);
            let (li, lo) = component_logs(d, sigma, w0, outlier_volume);
            let m = li.max(lo);
            let ll = if m == f64::NEG_INFINITY {
                m
            } else {
                m + ((li - m).exp() + (lo - m).exp()).ln()
            };
            w * ll
        })
        .sum()
}

/// Maximization step: refits `theta` to minimize `Σ γ_i d_i²` starting from
/// `theta_prev`, then sets `sigma² = Σ γ_i d_i² / Σ γ_i` (floored at
/// [`SIGMA2_FLOOR`]). The weighted objective never increases.
pub fn m_step(
    cloud: &PointCloud,
    responsibilities: &[f64],
    theta_prev: &Superquadric,
    bounds: &FitBounds,
) -> Result<(Superquadric, f64)> {
    m_step_with(cloud, responsibilities, theta_prev, bounds, FitConfig::default().lsq_iters)
}

fn m_step_with(
    cloud: &PointCloud,
    responsibilities: &[f64],
    theta_prev: &Superquadric,
    bounds: &FitBounds,
    lsq_iters: usize,
) -> Result<(Superquadric, f64)> {
    if responsibilities.len() != cloud.len() {
        return Err(Error::InvalidParameter(format!(
            "{} responsibilities for {} points",
            responsibilities.len(),
            cloud.len()
        )));
    }
    let effective = responsibilities.iter().filter(|&&g| g > INLIER_FLOOR).count();
    if effective < MIN_POINTS {
        return Err(Error::AllOutliers {
            effective,
            required: MIN_POINTS,
        });
    }
    let weights: Vec<f64> = point_weights(cloud)
        .iter()
        .zip(responsibilities)
        .map(|(w, g)| w * g)
        .collect();
    let out = lsq::refine(theta_prev, cloud.points(), &weights, bounds, lsq_iters);
    let theta = finalize(&out.theta, bounds);
    let wsum: f64 = weights.iter().sum();
    let sigma2 = (lsq::weighted_cost(&theta, cloud.points(), &weights) / wsum).max(SIGMA2_FLOOR);
    Ok((theta, sigma2.sqrt().min(sigma_cap(&theta))))
}

/// Largest admissible noise scale for `theta`.
fn sigma_cap(theta: &Superquadric) -> f64 {
    (SIGMA_MAX_REL * theta.scale().mean()).max(SIGMA2_FLOOR.sqrt())
}

/// Re-validates a solver iterate. The solver already projects into the
/// bounds, so this only re-orthonormalizes the rotation.
fn finalize(sq: &Superquadric, bounds: &FitBounds) -> Superquadric {
    let s = sq.shape();
    let a = sq.scale().as_array();
    let clamp = |v: f64| v.clamp(bounds.scale_min, bounds.scale_max);
    let rot = Rotation3::from_matrix(sq.pose().rotation().matrix());
    Superquadric::new(
        ShapeParams::clamped(s.eps1(), s.eps2()),
        ScaleParams::new(clamp(a[0]), clamp(a[1]), clamp(a[2])).expect("clamped scales are positive"),
        Pose::new(*rot.matrix(), *sq.pose().translation()).expect("re-orthonormalized rotation"),
    )
}

/// Result of a switching step.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchOutcome {
    pub theta: Superquadric,
    pub sigma: f64,
    pub loglik: f64,
    /// True iff a relabeled candidate beat the refined current estimate.
    pub switched: bool,
}

/// Relative likelihood margin a candidate must clear to replace the
/// current estimate.
const SWITCH_MARGIN: f64 = 1e-9;

/// Switching step: refines `theta` and each of its duality candidates with
/// one E/M round and keeps the one with the highest mixture log-likelihood.
/// The unrefined input competes too, so the result is never worse than
/// `(theta, sigma)`.
pub fn switch_step(
    cloud: &PointCloud,
    theta: &Superquadric,
    sigma: f64,
    w0: f64,
    outlier_volume: f64,
    bounds: &FitBounds,
) -> SwitchOutcome {
    switch_step_with(cloud, theta, sigma, w0, outlier_volume, bounds, FitConfig::default().lsq_iters)
}

fn switch_step_with(
    cloud: &PointCloud,
    theta: &Superquadric,
    sigma: f64,
    w0: f64,
    volume: f64,
    bounds: &FitBounds,
    lsq_iters: usize,
) -> SwitchOutcome {
    let input_ll = log_likelihood(cloud, theta, sigma, w0, volume);
    let mut best = SwitchOutcome {
        theta: *theta,
        sigma,
        loglik: input_ll,
        switched: false,
    };
    for (k, cand) in theta.duality_candidates().iter().enumerate() {
        let cand = finalize(cand, bounds);
        let gamma = e_step(cloud, &cand, sigma, w0, volume);
        let Ok((refined, s)) = m_step_with(cloud, &gamma, &cand, bounds, lsq_iters) else {
            continue;
        };
        let ll = log_likelihood(cloud, &refined, s, w0, volume);
        let margin = if k == 0 { 0.0 } else { SWITCH_MARGIN * best.loglik.abs().max(1.0) };
        if ll > best.loglik + margin {
            best = SwitchOutcome {
                theta: refined,
                sigma: s,
                loglik: ll,
                switched: k != 0,
            };
        }
    }
    best
}

fn subsample(cloud: &PointCloud, max_points: usize, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, cloud.len(), max_points).into_vec();
    idx.sort_unstable();
    let pts: Vec<Point3> = idx.iter().map(|&i| cloud.points()[i]).collect();
    match cloud.weights() {
        Some(w) => {
            let ws: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
            PointCloud::with_weights(pts.clone(), ws).unwrap_or_else(|_| PointCloud::new(pts))
        }
        None => PointCloud::new(pts),
    }
}

struct EmsRun {
    theta: Superquadric,
    sigma: f64,
    w0: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    switched: bool,
}

/// Fits one superquadric to `cloud`.
///
/// EMS runs from [`initialize`] and from a trimmed start that discounts the
/// most remote points, with round and boxy exponents, both directly and
/// after a noise-scale annealing warm-up. The best run is retried with its
/// cross-section turned by 45 degrees. Runs are ranked by the likelihood of
/// a mixture whose surface term is normalized by the surface area.
///
/// Each run alternates E and M steps, calls [`switch_step`] every
/// `switch_every` rounds and once more when the relative log-likelihood
/// change drops below `tol`; if that final search switches, iteration
/// resumes. The reported `theta` is canonicalized. Deterministic for a given
/// cloud and configuration.
pub fn fit(cloud: &PointCloud, config: &FitConfig) -> Result<FitReport> {
    config.validate()?;
    if cloud.len() < MIN_POINTS {
        return Err(Error::Underdetermined {
            required: MIN_POINTS,
            got: cloud.len(),
        });
    }
    let work = match config.max_points {
        Some(m) if cloud.len() > m.max(MIN_POINTS) => subsample(cloud, m.max(MIN_POINTS), config.seed),
        _ => cloud.clone(),
    };
    let bounds = config.bounds.unwrap_or_else(|| FitBounds::for_cloud(cloud));
    let volume = outlier_volume(cloud);
    let sigma0 = config
        .sigma_init
        .unwrap_or_else(|| 0.05 * work.bounding_box().map(|b| b.diagonal()).unwrap_or(1.0))
        .max(SIGMA2_FLOOR.sqrt());

    let moment = initialize_within(&work, &bounds)?;
    let frames: Vec<Superquadric> = std::iter::once(moment).chain(trimmed_start(&work, &bounds)).collect();
    let mut starts = Vec::new();
    for frame in &frames {
        for &(e1, e2) in START_SHAPES {
            let e1 = e1.clamp(bounds.eps_min, bounds.eps_max);
            let e2 = e2.clamp(bounds.eps_min, bounds.eps_max);
            starts.push(frame.with_shape(ShapeParams::new(e1, e2)?));
        }
    }
    let mut best: Option<(EmsRun, f64)> = None;
    let mut first_err = None;
    for (k, start) in starts.iter().enumerate() {
        let mut seeds = vec![(*start, sigma0)];
        if let Some(annealed) = anneal(&work, start, sigma0, config.w0, volume, &bounds, config.lsq_iters) {
            seeds.push(annealed);
        }
        for (theta, sigma) in seeds {
            match run_ems(&work, theta, sigma, volume, &bounds, config) {
                Ok(run) => {
                    let score = selection_score(&work, &run, volume);
                    if best.as_ref().is_none_or(|(_, b)| score > *b) {
                        best = Some((run, score));
                    }
                }
                Err(e) if k == 0 && first_err.is_none() => first_err = Some(e),
                Err(_) => {}
            }
        }
    }
    let (mut best, best_score) = match (best, first_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!("the moment start always yields a run or an error"),
    };
    if let Some(start) = twisted(&best.theta, &bounds) {
        if let Ok(run) = run_ems(&work, start, best.sigma, volume, &bounds, config) {
            if selection_score(&work, &run, volume) > best_score {
                best = run;
            }
        }
    }

    let responsibilities = e_step(cloud, &best.theta, best.sigma, best.w0, volume);
    Ok(FitReport {
        theta: best.theta.canonicalize(),
        sigma: best.sigma,
        w0: best.w0,
        responsibilities,
        loglik_trace: best.trace,
        iterations: best.iterations,
        converged: best.converged,
        switched: best.switched,
    })
}

/// Shrinks the noise scale geometrically from `sigma0`, refitting the shape
/// at each level, until the data support a tighter shell than the schedule
/// imposes. Returns `None` if the first level already does.
fn anneal(
    work: &PointCloud,
    start: &Superquadric,
    sigma0: f64,
    w0: f64,
    volume: f64,
    bounds: &FitBounds,
    lsq_iters: usize,
) -> Option<(Superquadric, f64)> {
    let mut theta = *start;
    let mut level = sigma0.min(sigma_cap(start));
    for k in 0..ANNEAL_LEVELS {
        let gamma = e_step(work, &theta, level, w0, volume);
        let Ok((next, sigma)) = m_step_with(work, &gamma, &theta, bounds, lsq_iters) else {
            break;
        };
        theta = next;
        if sigma < level {
            return (k > 0).then_some((theta, sigma));
        }
        level *= 0.5;
        if level < SIGMA2_FLOOR.sqrt() {
            break;
        }
    }
    (theta != *start).then_some((theta, level.max(SIGMA2_FLOOR.sqrt())))
}

const ANNEAL_LEVELS: usize = 12;

/// Resolution of the mesh used to measure surface area.
const AREA_MESH_RESOLUTION: usize = 48;

/// Compares runs from different starts. The mixture density above is per
/// unit length along the surface normal, so larger surfaces gain inlier
/// mass for free; dividing the surface term by the surface area makes
/// both components densities over space.
fn selection_score(work: &PointCloud, run: &EmsRun, volume: f64) -> f64 {
    let ln_area = make_mesh(&run.theta, AREA_MESH_RESOLUTION).area().ln();
    let weights = point_weights(work);
    work.points()
        .iter()
        .zip(&weights)
        .map(|(p, w)| {
            let d = run.theta.radial_distance(p);
            let (li, lo) = component_logs(d, run.sigma, run.w0, volume);
            w * log_add(li - ln_area, lo)
        })
        .sum()
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        hi
    } else {
        hi + (lo - hi).exp().ln_1p()
    }
}

fn run_ems(
    work: &PointCloud,
    start: Superquadric,
    sigma0: f64,
    volume: f64,
    bounds: &FitBounds,
    config: &FitConfig,
) -> Result<EmsRun> {
    let mut theta = start;
    let mut sigma = sigma0.min(sigma_cap(&start));
    let mut w0 = config.w0;
    let mut ll = log_likelihood(work, &theta, sigma, w0, volume);
    let mut trace = vec![ll];
    let mut switched_any = false;
    let mut converged = false;
    let mut iterations = 0;

    let switch = |theta: &Superquadric, sigma: f64, w0: f64| {
        switch_step_with(work, theta, sigma, w0, volume, bounds, config.lsq_iters)
    };

    while iterations < config.max_iters {
        iterations += 1;
        let gamma = e_step(work, &theta, sigma, w0, volume);
        if config.estimate_w0 && w0 > 0.0 {
            let weights = point_weights(work);
            let wsum: f64 = weights.iter().sum();
            let out: f64 = gamma.iter().zip(&weights).map(|(g, w)| w * (1.0 - g)).sum();
            let candidate = (out / wsum).clamp(1e-6, 0.99);
            let cand_ll = log_likelihood(work, &theta, sigma, candidate, volume);
            if cand_ll >= ll {
                w0 = candidate;
                ll = cand_ll;
            }
        }
        let (next_theta, next_sigma) = m_step_with(work, &gamma, &theta, bounds, config.lsq_iters)?;
        let next_ll = log_likelihood(work, &next_theta, next_sigma, w0, volume);
        let mut stalled = next_ll < ll;
        let mut rel = 0.0;
        if !stalled {
            rel = (next_ll - ll) / ll.abs().max(1.0);
            theta = next_theta;
            sigma = next_sigma;
            ll = next_ll;
            trace.push(ll);
        }

        if config.switch_every > 0 && iterations % config.switch_every == 0 && !stalled {
            let s = switch(&theta, sigma, w0);
            if s.loglik > ll {
                rel = rel.max((s.loglik - ll) / ll.abs().max(1.0));
                switched_any |= s.switched;
                theta = s.theta;
                sigma = s.sigma;
                ll = s.loglik;
                trace.push(ll);
            }
        }

        stalled |= rel < config.tol;
        if stalled {
            let s = switch(&theta, sigma, w0);
            if s.loglik > ll {
                theta = s.theta;
                sigma = s.sigma;
                ll = s.loglik;
                trace.push(ll);
            }
            if s.switched {
                switched_any = true;
                continue;
            }
            converged = true;
            break;
        }
    }
    Ok(EmsRun {
        theta,
        sigma,
        w0,
        trace,
        iterations,
        converged,
        switched: switched_any,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::sample_surface;

    fn ellipsoid() -> Superquadric {
        Superquadric::from_parts(1.0, 1.0, [30.0, 20.0, 10.0], [0.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn initialize_centers_on_sphere() {
        let s = Superquadric::sphere(1.0, Vector3::new(10.0, 0.0, 0.0));
        let cloud = sample_surface(&s, 2000, 3);
        let init = initialize(&cloud).unwrap();
        assert!((init.pose().translation() - Vector3::new(10.0, 0.0, 0.0)).norm() < 0.5);
        assert!(init.pose().rotation().matrix().determinant() > 0.999_999);
    }

    #[test]
    fn initialize_box_corners() {
        let mut pts = Vec::new();
        for _ in 0..2 {
            for &x in &[-3.0, 3.0] {
                for &y in &[-2.0, 2.0] {
                    for &z in &[-1.0, 1.0] {
                        pts.push(Point3::new(x, y, z));
                    }
                }
            }
        }
        let init = initialize(&PointCloud::new(pts)).unwrap();
        let mut a = init.scale().as_array();
        a.sort_by(f64::total_cmp);
        for (s, half) in a.iter().zip([1.0, 2.0, 3.0]) {
            assert!(*s >= half - 1e-12, "{a:?}");
        }
    }

    #[test]
    fn initialize_errors() {
        let pts: Vec<Point3> = (0..10).map(|i| Point3::new(i as f64, (i * i) as f64, 1.0 / (1.0 + i as f64))).collect();
        let err = initialize(&PointCloud::new(pts)).unwrap_err();
        assert!(err.to_string().starts_with("underdetermined"), "{err}");

        let planar: Vec<Point3> = (0..20).map(|i| Point3::new((i % 5) as f64, (i / 5) as f64, 0.0)).collect();
        let err = initialize(&PointCloud::new(planar)).unwrap_err();
        assert!(err.to_string().starts_with("degenerate cloud"), "{err}");
    }

    #[test]
    fn e_step_limits() {
        let sq = Superquadric::unit_sphere();
        let cloud = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0), Point3::new(1e6, 0.0, 0.0)]);
        let g = e_step(&cloud, &sq, 0.1, 0.1, 8.0);
        assert!(g[0] > 0.99);
        assert!(g[1] < 1e-12);
        let g = e_step(&cloud, &sq, 0.1, 0.0, 8.0);
        assert_eq!(g, vec![1.0, 1.0]);
        // hand-evaluated mixture for d = 0
        let n0 = 1.0 / (2.0 * std::f64::consts::PI * 0.01f64).sqrt();
        let expected = 0.9 * n0 / (0.9 * n0 + 0.1 / 8.0);
        assert!((e_step(&cloud, &sq, 0.1, 0.1, 8.0)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn m_step_fixed_point() {
        let truth = ellipsoid();
        let cloud = sample_surface(&truth, 800, 4);
        let gamma = vec![1.0; cloud.len()];
        let bounds = FitBounds::for_cloud(&cloud);
        let (theta, sigma) = m_step(&cloud, &gamma, &truth, &bounds).unwrap();
        for (a, b) in theta.to_vector().iter().zip(truth.to_vector()) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert!(sigma <= 1e-2);
    }

    #[test]
    fn m_step_descends() {
        let truth = ellipsoid();
        let cloud = sample_surface(&truth, 800, 5);
        let gamma = vec![1.0; cloud.len()];
        let start = truth.with_scale(ScaleParams::new(31.5, 21.0, 10.5).unwrap());
        let bounds = FitBounds::for_cloud(&cloud);
        let before = lsq::weighted_cost(&start, cloud.points(), &gamma);
        let (theta, _) = m_step(&cloud, &gamma, &start, &bounds).unwrap();
        let after = lsq::weighted_cost(&theta, cloud.points(), &gamma);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn m_step_rejects_all_outliers() {
        let cloud = sample_surface(&ellipsoid(), 100, 6);
        let gamma = vec![1e-4; cloud.len()];
        let err = m_step(&cloud, &gamma, &ellipsoid(), &FitBounds::for_cloud(&cloud)).unwrap_err();
        assert!(err.to_string().starts_with("all points rejected as outliers"));
    }

    #[test]
    fn fit_clean_ellipsoid() {
        let truth = ellipsoid();
        let cloud = sample_surface(&truth, 2000, 7);
        let report = fit(&cloud, &FitConfig::default()).unwrap();
        let mut a = report.theta.scale().as_array();
        a.sort_by(|x, y| y.total_cmp(x));
        for (s, t) in a.iter().zip([30.0, 20.0, 10.0]) {
            assert!((s - t).abs() < 0.01 * t, "{a:?}");
        }
        assert!((report.theta.shape().eps1() - 1.0).abs() < 0.05);
        assert!((report.theta.shape().eps2() - 1.0).abs() < 0.05);
        assert_eq!(report.responsibilities.len(), cloud.len());
        for w in report.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn fit_rejects_tiny_clouds() {
        let cloud = PointCloud::new(vec![Point3::origin(); 5]);
        let err = fit(&cloud, &FitConfig::default()).unwrap_err();
        assert!(err.to_string().starts_with("underdetermined"));
    }

    #[test]
    fn fit_is_deterministic() {
        let truth = Superquadric::from_parts(0.5, 1.4, [12.0, 18.0, 25.0], [0.4, -0.3, 0.9], [3.0, 2.0, 1.0]).unwrap();
        let cloud = sample_surface(&truth, 600, 8);
        let a = fit(&cloud, &FitConfig::default()).unwrap();
        let b = fit(&cloud, &FitConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sphere_fit_does_not_switch() {
        let cloud = sample_surface(&Superquadric::sphere(20.0, Vector3::new(1.0, 2.0, 3.0)), 1500, 9);
        let report = fit(&cloud, &FitConfig::default()).unwrap();
        assert!(!report.switched);
    }
}
