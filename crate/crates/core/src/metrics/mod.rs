//! Geometric evaluation metrics for hand-object reconstruction.

mod kdtree;

pub use kdtree::KdTree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{distance_to_mesh, is_watertight, point_in_mesh, PointCloud, TriangleMesh, VoxelGrid};
use crate::superquadric::{Point3, Superquadric};

/// Number of joints in one hand skeleton.
pub const JOINT_COUNT: usize = 21;

/// One hand's joints, mm.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    joints: Vec<Point3>,
}

impl JointSet {
    pub fn new(joints: Vec<Point3>) -> Result<Self> {
        if joints.len() != JOINT_COUNT {
            return Err(Error::InvalidParameter(format!(
                "a joint set has exactly {JOINT_COUNT} joints, got {}",
                joints.len()
            )));
        }
        if joints.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidParameter("non-finite joint coordinate".into()));
        }
        Ok(Self { joints })
    }

    pub fn joints(&self) -> &[Point3] {
        &self.joints
    }
}

/// A labelled scalar result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub units: String,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, units: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            units: units.into(),
        }
    }
}

/// Mean end-point error over the 21 joints, mm.
pub fn mepe(pred: &JointSet, gt: &JointSet) -> f64 {
    pred.joints
        .iter()
        .zip(&gt.joints)
        .map(|(p, g)| (p - g).norm())
        .sum::<f64>()
        / JOINT_COUNT as f64
}

fn mean_nearest(from: &[Point3], tree: &KdTree<'_>, root: bool) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            let (_, d2) = tree.nearest(p).expect("tree is nonempty");
            if root {
                d2.sqrt()
            } else {
                d2
            }
        })
        .sum();
    total / from.len() as f64
}

fn chamfer_impl(a: &PointCloud, b: &PointCloud, root: bool) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("chamfer distance needs two nonempty clouds".into()));
    }
    let ta = KdTree::new(a.points());
    let tb = KdTree::new(b.points());
    Ok(mean_nearest(a.points(), &tb, root) + mean_nearest(b.points(), &ta, root))
}

/// Symmetric Chamfer distance with squared nearest-neighbor distances, mm².
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_impl(a, b, false)
}

/// Chamfer distance with plain (non-squared) nearest-neighbor distances, mm.
pub fn chamfer_root(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    chamfer_impl(a, b, true)
}

/// A closed object that hand vertices can penetrate.
#[derive(Debug, Clone, Copy)]
pub enum Solid<'a> {
    Superquadric(&'a Superquadric),
    Mesh(&'a TriangleMesh),
}

/// Largest distance from a hand vertex inside `object` to the object's
/// surface, mm; zero when nothing penetrates.
pub fn penetration_depth(hand_vertices: &PointCloud, object: Solid<'_>) -> Result<f64> {
    match object {
        Solid::Superquadric(sq) => Ok(hand_vertices
            .points()
            .iter()
            .filter(|p| sq.inside_outside(p) < 1.0)
            .map(|p| sq.radial_distance(p))
            .fold(0.0, f64::max)),
        Solid::Mesh(mesh) => {
            if !is_watertight(mesh) {
                return Err(Error::NotWatertight);
            }
            Ok(hand_vertices
                .points()
                .iter()
                .filter(|p| point_in_mesh(mesh, p))
                .map(|p| distance_to_mesh(mesh, p))
                .fold(0.0, f64::max))
        }
    }
}

/// Volume occupied in both grids, cm³.
pub fn intersection_volume(g1: &VoxelGrid, g2: &VoxelGrid) -> Result<f64> {
    let vs = g1.voxel_size();
    if (vs - g2.voxel_size()).abs() > 1e-12 * vs.max(g2.voxel_size()) {
        return Err(Error::IncompatibleGrids(format!(
            "voxel sizes {} and {} differ",
            vs,
            g2.voxel_size()
        )));
    }
    let (o1, o2) = (g1.origin_index(), g2.origin_index());
    let (d1, d2) = (g1.dims(), g2.dims());
    let lo: [i64; 3] = std::array::from_fn(|k| o1[k].max(o2[k]));
    let hi: [i64; 3] = std::array::from_fn(|k| (o1[k] + d1[k] as i64).min(o2[k] + d2[k] as i64));
    if (0..3).any(|k| lo[k] >= hi[k]) {
        return Ok(0.0);
    }
    let mut count = 0usize;
    for z in lo[2]..hi[2] {
        for y in lo[1]..hi[1] {
            for x in lo[0]..hi[0] {
                let g = [x, y, z];
                if g1.is_occupied_global(g) && g2.is_occupied_global(g) {
                    count += 1;
                }
            }
        }
    }
    Ok(count as f64 * vs.powi(3) / 1000.0)
}

/// L1 distance between canonical parameter vectors.
pub fn theta_l1(a: &Superquadric, b: &Superquadric) -> f64 {
    let va = a.canonicalize().to_vector();
    let vb = b.canonicalize().to_vector();
    va.iter().zip(&vb).map(|(x, y)| (x - y).abs()).sum()
}
