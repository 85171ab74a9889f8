//! PCA surface normals over k-nearest-neighbour neighbourhoods.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use super::GeometryError;

pub const DEFAULT_NORMAL_K: usize = 16;

/// Neighbourhoods whose second-largest covariance eigenvalue falls below this
/// fraction of the largest are treated as collinear (no defined plane).
pub const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Normal {
    Valid(Vector3<f64>),
    #[default]
    Invalid,
}

impl Normal {
    pub fn get(&self) -> Option<&Vector3<f64>> {
        match self {
            Normal::Valid(n) => Some(n),
            Normal::Invalid => None,
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, Normal::Valid(_))
    }
}

/// Exact k-NN over a uniform hash grid.
///
/// Results are ordered by `(squared distance, index)`, so equal distances
/// resolve to the lowest point index.
pub struct NeighborGrid<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    origin: Vector3<f64>,
    cells: HashMap<[i64; 3], Vec<usize>>,
    max_ring: i64,
}

impl<'a> NeighborGrid<'a> {
    pub fn new(points: &'a [Vector3<f64>], k: usize) -> Self {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = if points.is_empty() { Vector3::zeros() } else { hi - lo };
        let cell = choose_cell_size(&extent, points.len(), k);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let origin = if points.is_empty() { Vector3::zeros() } else { lo };
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_key(p, &origin, cell)).or_default().push(i);
        }
        let span = extent.max() / cell;
        let max_ring = if span.is_finite() { span.ceil() as i64 + 1 } else { 1 };
        Self {
            points,
            cell,
            origin,
            cells,
            max_ring,
        }
    }

    /// Indices of the `k` nearest points to `points[query]`, including the
    /// query itself.
    pub fn knn(&self, query: usize, k: usize) -> Vec<usize> {
        let q = self.points[query];
        let center = cell_key(&q, &self.origin, self.cell);
        let mut found: Vec<(f64, usize)> = Vec::new();
        let mut ring = 0i64;
        loop {
            for_each_ring_cell(center, ring, |key| {
                if let Some(bucket) = self.cells.get(&key) {
                    for &j in bucket {
                        found.push(((self.points[j] - q).norm_squared(), j));
                    }
                }
            });
            // Anything not yet visited lies at least `ring * cell` away.
            let safe = ring as f64 * self.cell;
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if found[k - 1].0 <= safe * safe || ring >= self.max_ring {
                    break;
                }
            } else if ring >= self.max_ring {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                break;
            }
            ring += 1;
        }
        found.truncate(k);
        found.into_iter().map(|(_, j)| j).collect()
    }
}

fn choose_cell_size(extent: &Vector3<f64>, n: usize, k: usize) -> f64 {
    let max = extent.max();
    if !(max > 0.0) || n == 0 {
        return 1.0;
    }
    // Volume over the non-degenerate axes only, so planar clouds get a
    // 2D-density cell instead of a vanishing one.
    let (mut vol, mut dims) = (1.0, 0);
    for &e in extent.iter() {
        if e > max * 1e-6 {
            vol *= e;
            dims += 1;
        }
    }
    let per_point = vol * (k.max(1) as f64) / n as f64;
    let cell = per_point.powf(1.0 / dims as f64);
    cell.clamp(max * 1e-4, max)
}

fn cell_key(p: &Vector3<f64>, origin: &Vector3<f64>, cell: f64) -> [i64; 3] {
    let r = (p - origin) / cell;
    [r.x.floor() as i64, r.y.floor() as i64, r.z.floor() as i64]
}

fn for_each_ring_cell(c: [i64; 3], r: i64, mut f: impl FnMut([i64; 3])) {
    if r == 0 {
        f(c);
        return;
    }
    for dx in -r..=r {
        for dy in -r..=r {
            let on_face = dx.abs() == r || dy.abs() == r;
            if on_face {
                for dz in -r..=r {
                    f([c[0] + dx, c[1] + dy, c[2] + dz]);
                }
            } else {
                f([c[0] + dx, c[1] + dy, c[2] - r]);
                f([c[0] + dx, c[1] + dy, c[2] + r]);
            }
        }
    }
}

/// Normal from one neighbourhood; `None` if it does not span a plane.
pub fn pca_normal(neighborhood: &[Vector3<f64>]) -> Option<Vector3<f64>> {
    let mut distinct: Vec<&Vector3<f64>> = Vec::with_capacity(neighborhood.len());
    for p in neighborhood {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    if distinct.len() < 3 {
        return None;
    }
    let n = neighborhood.len() as f64;
    let mean = neighborhood.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in neighborhood {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (smallest, middle, largest) = (order[0], order[1], order[2]);
    let lmax = eig.eigenvalues[largest];
    if !(lmax > 0.0) || eig.eigenvalues[middle] < RANK_TOLERANCE * lmax {
        return None;
    }
    let v: Vector3<f64> = eig.eigenvectors.column(smallest).into_owned();
    let norm = v.norm();
    if !(norm > 0.0) {
        return None;
    }
    Some(v / norm)
}

/// Per-point PCA normals over the `k` nearest neighbours, each flipped to
/// face its own viewpoint. Runs in parallel; each point's computation is
/// independent and fixed-order, so the output does not depend on the pool.
pub fn estimate_normals(points: &[Vector3<f64>], k: usize, viewpoints: &[Vector3<f64>]) -> Result<Vec<Normal>, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    if k < 3 {
        return Err(GeometryError::InvalidNeighborCount(k));
    }
    if viewpoints.len() != points.len() {
        return Err(GeometryError::LengthMismatch {
            expected: points.len(),
            actual: viewpoints.len(),
        });
    }
    let grid = NeighborGrid::new(points, k);
    let normals = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nbrs: Vec<Vector3<f64>> = grid.knn(i, k).into_iter().map(|j| points[j]).collect();
            match pca_normal(&nbrs) {
                Some(n) => {
                    let to_view = viewpoints[i] - points[i];
                    Normal::Valid(if n.dot(&to_view) < 0.0 { -n } else { n })
                }
                None => Normal::Invalid,
            }
        })
        .collect();
    Ok(normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as Gaussian};

    fn brute_knn(points: &[Vector3<f64>], q: usize, k: usize) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(j, p)| ((p - points[q]).norm_squared(), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.into_iter().take(k).map(|(_, j)| j).collect()
    }

    #[test]
    fn grid_knn_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Vector3<f64>> = (0..400)
            .map(|_| Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.3)))
            .collect();
        let grid = NeighborGrid::new(&pts, 16);
        for q in (0..pts.len()).step_by(7) {
            assert_eq!(grid.knn(q, 16), brute_knn(&pts, q, 16));
        }
    }

    #[test]
    fn grid_knn_breaks_ties_by_index() {
        // lattice with many equal distances
        let pts: Vec<Vector3<f64>> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Vector3::new(i as f64, j as f64, 0.0)))
            .collect();
        let grid = NeighborGrid::new(&pts, 9);
        for q in 0..pts.len() {
            assert_eq!(grid.knn(q, 9), brute_knn(&pts, q, 9));
        }
    }

    #[test]
    fn planar_cloud_normals_face_viewpoint() {
        let pts: Vec<Vector3<f64>> = (0..10)
            .flat_map(|i| (0..10).map(move |j| Vector3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0)))
            .collect();
        let views = vec![Vector3::new(0.0, 0.0, 5.0); pts.len()];
        let normals = estimate_normals(&pts, DEFAULT_NORMAL_K, &views).unwrap();
        for n in normals {
            let n = n.get().copied().expect("valid normal");
            assert!((n - Vector3::z()).norm() < 1e-6);
        }
        let below = vec![Vector3::new(0.0, 0.0, -5.0); pts.len()];
        for n in estimate_normals(&pts, DEFAULT_NORMAL_K, &below).unwrap() {
            assert!((n.get().unwrap() + Vector3::z()).norm() < 1e-6);
        }
    }

    #[test]
    fn underdetermined_clouds_are_invalid() {
        let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)];
        let views = vec![Vector3::zeros(); 2];
        let normals = estimate_normals(&pts, 3, &views).unwrap();
        assert!(normals.iter().all(|n| !n.is_valid()));

        let line: Vec<Vector3<f64>> = (0..20).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        let views = vec![Vector3::zeros(); line.len()];
        assert!(estimate_normals(&line, 5, &views).unwrap().iter().all(|n| !n.is_valid()));

        let dup = vec![Vector3::new(1.0, 1.0, 1.0); 8];
        let views = vec![Vector3::zeros(); dup.len()];
        assert!(estimate_normals(&dup, 4, &views).unwrap().iter().all(|n| !n.is_valid()));
    }

    #[test]
    fn errors() {
        assert!(matches!(estimate_normals(&[], 16, &[]), Err(GeometryError::EmptyCloud)));
        let p = vec![Vector3::zeros()];
        assert!(matches!(estimate_normals(&p, 2, &p), Err(GeometryError::InvalidNeighborCount(2))));
    }

    #[test]
    fn noisy_plane_within_five_degrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let noise = Gaussian::new(0.0, 0.01).unwrap();
        let n = 40;
        let spacing = 0.1;
        let pts: Vec<Vector3<f64>> = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| Vector3::new(i as f64 * spacing, j as f64 * spacing, noise.sample(&mut rng)))
            .collect();
        let views = vec![Vector3::new(1.0, 1.0, 5.0); pts.len()];
        let normals = estimate_normals(&pts, 16, &views).unwrap();
        let mut interior = 0;
        let mut good = 0;
        for (idx, nrm) in normals.iter().enumerate() {
            let (i, j) = (idx / n, idx % n);
            if i < 2 || j < 2 || i >= n - 2 || j >= n - 2 {
                continue;
            }
            interior += 1;
            let c = nrm.get().unwrap().dot(&Vector3::z()).clamp(-1.0, 1.0);
            if c.acos().to_degrees() <= 5.0 {
                good += 1;
            }
        }
        assert!(good as f64 >= 0.95 * interior as f64, "{good}/{interior}");
    }

    #[test]
    fn orientation_invariant_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vector3<f64>> = (0..300)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let views: Vec<Vector3<f64>> = (0..300)
            .map(|_| Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
            .collect();
        for (i, n) in estimate_normals(&pts, 8, &views).unwrap().iter().enumerate() {
            if let Some(n) = n.get() {
                assert!(n.dot(&(views[i] - pts[i])) >= 0.0);
                assert!((n.norm() - 1.0).abs() < 1e-9);
            }
        }
    }
}
