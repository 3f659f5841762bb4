//! Solid voxelization and point-in-mesh queries.
//!
//! Grids are anchored on integer multiples of the voxel size, so any two grids
//! with the same voxel size line up cell for cell. Mesh interiors are found by
//! ray parity along `+x`; a ray that grazes an edge or vertex exactly is
//! nudged by a deterministic sub-voxel offset and cast again.

use super::{is_watertight, Aabb, TriangleMesh};
use crate::error::{Error, Result};
use crate::superquadric::{Point3, Superquadric};

const JITTER: [f64; 2] = [0.754_877_666_246_692_7, 0.569_840_290_998_053_3];
const JITTER_SCALE: f64 = 1e-7;
const MAX_JITTER_ATTEMPTS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    origin_index: [i64; 3],
    voxel_size: f64,
    dims: [usize; 3],
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    /// `origin_index` is the grid origin in units of `voxel_size`; occupancy
    /// is x-fastest.
    pub fn new(
        origin_index: [i64; 3],
        voxel_size: f64,
        dims: [usize; 3],
        occupancy: Vec<bool>,
    ) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::InvalidParameter(format!("voxel size {voxel_size} must be positive")));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidParameter("grid dimensions must be positive".into()));
        }
        if occupancy.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidParameter(format!(
                "occupancy has {} cells, dims {:?} need {}",
                occupancy.len(),
                dims,
                dims[0] * dims[1] * dims[2]
            )));
        }
        Ok(Self {
            origin_index,
            voxel_size,
            dims,
            occupancy,
        })
    }

    fn empty_over(bounds: &Aabb, voxel_size: f64) -> Result<Self> {
        if !(voxel_size.is_finite() && voxel_size > 0.0) {
            return Err(Error::InvalidParameter(format!("voxel size {voxel_size} must be positive")));
        }
        let mut origin_index = [0i64; 3];
        let mut dims = [0usize; 3];
        for k in 0..3 {
            let lo = (bounds.min[k] / voxel_size).floor();
            let hi = (bounds.max[k] / voxel_size).ceil();
            origin_index[k] = lo as i64;
            dims[k] = ((hi - lo) as usize).max(1);
        }
        let cells = dims[0] * dims[1] * dims[2];
        Self::new(origin_index, voxel_size, dims, vec![false; cells])
    }

    pub fn origin(&self) -> Point3 {
        Point3::new(
            self.origin_index[0] as f64 * self.voxel_size,
            self.origin_index[1] as f64 * self.voxel_size,
            self.origin_index[2] as f64 * self.voxel_size,
        )
    }

    pub fn origin_index(&self) -> [i64; 3] {
        self.origin_index
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn is_occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[self.linear_index(i, j, k)]
    }

    /// Occupancy at a global (origin-relative to world zero) voxel index.
    pub fn is_occupied_global(&self, g: [i64; 3]) -> bool {
        let mut local = [0usize; 3];
        for k in 0..3 {
            let d = g[k] - self.origin_index[k];
            if d < 0 || d >= self.dims[k] as i64 {
                return false;
            }
            local[k] = d as usize;
        }
        self.is_occupied(local[0], local[1], local[2])
    }

    /// Center of voxel `(i, j, k)` along one axis.
    #[inline]
    fn center_coord(&self, axis: usize, idx: usize) -> f64 {
        (self.origin_index[axis] as f64 + idx as f64 + 0.5) * self.voxel_size
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point3 {
        Point3::new(self.center_coord(0, i), self.center_coord(1, j), self.center_coord(2, k))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    /// Occupied volume in mm³.
    pub fn occupied_volume(&self) -> f64 {
        self.occupied_count() as f64 * self.voxel_size.powi(3)
    }
}

/// 2D orientation of `q` against the directed edge `a -> b` in the yz plane.
/// Evaluated with the lower vertex index first so the two faces sharing an
/// edge see exactly opposite values.
#[inline]
fn edge_function(mesh: &TriangleMesh, a: usize, b: usize, qy: f64, qz: f64) -> f64 {
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let p = &mesh.vertices()[lo];
    let r = &mesh.vertices()[hi];
    sign * ((r.y - p.y) * (qz - p.z) - (r.z - p.z) * (qy - p.y))
}

enum RayHit {
    Miss,
    Hit(f64),
    Grazing,
}

/// Intersection of the line `{(x, qy, qz)}` with a face.
fn intersect_x_line(mesh: &TriangleMesh, face: usize, qy: f64, qz: f64) -> RayHit {
    let [i0, i1, i2] = mesh.faces()[face];
    let w0 = edge_function(mesh, i1, i2, qy, qz);
    let w1 = edge_function(mesh, i2, i0, qy, qz);
    let w2 = edge_function(mesh, i0, i1, qy, qz);
    let pos = w0 > 0.0 || w1 > 0.0 || w2 > 0.0;
    let neg = w0 < 0.0 || w1 < 0.0 || w2 < 0.0;
    if pos && neg {
        return RayHit::Miss;
    }
    // On an edge or vertex of the projection, or inside an edge-on face.
    if w0 == 0.0 || w1 == 0.0 || w2 == 0.0 {
        return RayHit::Grazing;
    }
    let sum = w0 + w1 + w2;
    let v = mesh.vertices();
    let x = (w0 * v[i0].x + w1 * v[i1].x + w2 * v[i2].x) / sum;
    RayHit::Hit(x)
}

/// Sorted crossing abscissae of the line through `(qy, qz)`, or `None` when
/// the line grazes an edge or vertex.
fn crossings(mesh: &TriangleMesh, candidates: &[usize], qy: f64, qz: f64) -> Option<Vec<f64>> {
    let mut xs = Vec::new();
    for &f in candidates {
        match intersect_x_line(mesh, f, qy, qz) {
            RayHit::Miss => {}
            RayHit::Hit(x) => xs.push(x),
            RayHit::Grazing => return None,
        }
    }
    xs.sort_by(f64::total_cmp);
    Some(xs)
}

fn crossings_jittered(
    mesh: &TriangleMesh,
    candidates: &[usize],
    qy: f64,
    qz: f64,
    scale: f64,
) -> Vec<f64> {
    let mut last = Vec::new();
    for attempt in 0..MAX_JITTER_ATTEMPTS {
        let step = JITTER_SCALE * scale * attempt as f64;
        let (y, z) = (qy + step * JITTER[0], qz + step * JITTER[1]);
        match crossings(mesh, candidates, y, z) {
            Some(xs) => return xs,
            None => {
                // keep the non-grazing hits of the final attempt as a fallback
                last = candidates
                    .iter()
                    .filter_map(|&f| match intersect_x_line(mesh, f, y, z) {
                        RayHit::Hit(x) => Some(x),
                        _ => None,
                    })
                    .collect();
            }
        }
    }
    last.sort_by(f64::total_cmp);
    last
}

/// Ray-parity inside test for a closed mesh. Points exactly on the surface
/// may land on either side.
pub fn point_in_mesh(mesh: &TriangleMesh, p: &Point3) -> bool {
    let scale = mesh.bounding_box().map(|b| b.diagonal()).unwrap_or(1.0).max(f64::MIN_POSITIVE);
    let all: Vec<usize> = (0..mesh.faces().len()).collect();
    let xs = crossings_jittered(mesh, &all, p.y, p.z, scale);
    xs.iter().filter(|&&x| x > p.x).count() % 2 == 1
}

/// Marks voxels whose centers lie inside a closed mesh.
///
/// The grid covers `bounds` (default: the mesh bounding box), expanded
/// outward to voxel-size multiples.
pub fn voxelize_mesh(mesh: &TriangleMesh, voxel_size: f64, bounds: Option<Aabb>) -> Result<VoxelGrid> {
    if !is_watertight(mesh) {
        return Err(Error::NotWatertight);
    }
    let bounds = bounds
        .or_else(|| mesh.bounding_box())
        .expect("watertight mesh has vertices");
    let mut grid = VoxelGrid::empty_over(&bounds, voxel_size)?;
    let [nx, ny, nz] = grid.dims;

    // Bin faces by the rows whose (y, z) centers fall in their yz extent.
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); ny * nz];
    let row_range = |axis: usize, lo: f64, hi: f64, n: usize| -> Option<(usize, usize)> {
        let o = grid.origin_index[axis] as f64;
        let first = (lo / voxel_size - o - 0.5).ceil().max(0.0);
        let last = (hi / voxel_size - o - 0.5).floor().min(n as f64 - 1.0);
        (first <= last).then_some((first as usize, last as usize))
    };
    for f in 0..mesh.faces().len() {
        let tri = mesh.triangle(f);
        let (ylo, yhi) = minmax(tri.iter().map(|p| p.y));
        let (zlo, zhi) = minmax(tri.iter().map(|p| p.z));
        // A small pad keeps faces whose extent ends exactly on a row center
        // and faces that jittered rays may reach.
        let pad = voxel_size * 1e-5;
        let (Some((j0, j1)), Some((k0, k1))) = (
            row_range(1, ylo - pad, yhi + pad, ny),
            row_range(2, zlo - pad, zhi + pad, nz),
        ) else {
            continue;
        };
        for k in k0..=k1 {
            for j in j0..=j1 {
                rows[j + ny * k].push(f);
            }
        }
    }

    for k in 0..nz {
        let qz = grid.center_coord(2, k);
        for j in 0..ny {
            let candidates = &rows[j + ny * k];
            if candidates.is_empty() {
                continue;
            }
            let qy = grid.center_coord(1, j);
            let xs = crossings_jittered(mesh, candidates, qy, qz, voxel_size);
            let mut next = 0;
            for i in 0..nx {
                let qx = grid.center_coord(0, i);
                while next < xs.len() && xs[next] < qx {
                    next += 1;
                }
                if next % 2 == 1 {
                    let idx = grid.linear_index(i, j, k);
                    grid.occupancy[idx] = true;
                }
            }
        }
    }
    Ok(grid)
}

/// Marks voxels whose centers satisfy `inside_outside < 1`. The grid covers
/// `bounds` (default: the superquadric's bounding box).
pub fn voxelize_superquadric(sq: &Superquadric, voxel_size: f64, bounds: Option<Aabb>) -> Result<VoxelGrid> {
    let bounds = bounds.unwrap_or_else(|| {
        let (min, max) = sq.bounding_box();
        Aabb::new(min, max)
    });
    let mut grid = VoxelGrid::empty_over(&bounds, voxel_size)?;
    let [nx, ny, nz] = grid.dims;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if sq.inside_outside(&grid.center(i, j, k)) < 1.0 {
                    let idx = grid.linear_index(i, j, k);
                    grid.occupancy[idx] = true;
                }
            }
        }
    }
    Ok(grid)
}

fn minmax(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}
