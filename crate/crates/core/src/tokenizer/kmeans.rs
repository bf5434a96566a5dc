//! Seeded k-means with farthest-point initialization.
//!
//! Fixed 25 Lloyd iterations; nearest-centroid ties go to the lowest index;
//! clusters that empty out are reseeded to the point farthest from its
//! assigned centroid. Everything is f64 and deterministic given the seed.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub dim: usize,
    /// k rows of `dim` values.
    pub centroids: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeans {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j * self.dim..(j + 1) * self.dim]
    }

    /// Nearest centroid index; ties resolve to the lowest index.
    pub fn assign(&self, point: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for j in 0..self.k() {
            let d = sq_dist(point, self.centroid(j));
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        best
    }

    pub fn fit(points: &[f64], dim: usize, k: usize, seed: u64) -> KMeans {
        let n = points.len() / dim;
        assert!(n >= 1 && k >= 1);
        let row = |i: usize| &points[i * dim..(i + 1) * dim];

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = rng.random_range(0..n);
        let mut chosen = vec![first];
        let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
        while chosen.len() < k.min(n) {
            let mut far = 0;
            let mut far_d = -1.0;
            for (i, &d) in nearest.iter().enumerate() {
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
            chosen.push(far);
            for (i, near) in nearest.iter_mut().enumerate() {
                let d = sq_dist(row(i), row(far));
                if d < *near {
                    *near = d;
                }
            }
        }
        // Fewer distinct points than clusters: duplicate the first pick.
        while chosen.len() < k {
            chosen.push(first);
        }

        let mut model = KMeans {
            dim,
            centroids: chosen.iter().flat_map(|&i| row(i).iter().copied()).collect(),
        };

        let mut assignment = vec![0usize; n];
        for _ in 0..KMEANS_ITERS {
            for (i, a) in assignment.iter_mut().enumerate() {
                *a = model.assign(row(i));
            }
            let mut sums = vec![0.0; k * dim];
            let mut counts = vec![0usize; k];
            for (i, &a) in assignment.iter().enumerate() {
                counts[a] += 1;
                for (s, v) in sums[a * dim..(a + 1) * dim].iter_mut().zip(row(i)) {
                    *s += v;
                }
            }
            for j in 0..k {
                if counts[j] == 0 {
                    // Reseed to the point farthest from its assigned centroid.
                    let mut far = 0;
                    let mut far_d = -1.0;
                    for (i, &a) in assignment.iter().enumerate() {
                        let d = sq_dist(row(i), model.centroid(a));
                        if d > far_d {
                            far_d = d;
                            far = i;
                        }
                    }
                    model.centroids[j * dim..(j + 1) * dim].copy_from_slice(row(far));
                } else {
                    for (c, s) in model.centroids[j * dim..(j + 1) * dim]
                        .iter_mut()
                        .zip(&sums[j * dim..(j + 1) * dim])
                    {
                        *c = s / counts[j] as f64;
                    }
                }
            }
        }
        model
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distinct_points_fit_exactly_when_k_equals_n() {
        let points = vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0, 10.0, 10.0];
        let m = KMeans::fit(&points, 2, 4, 7);
        for i in 0..4 {
            let p = &points[i * 2..(i + 1) * 2];
            assert_eq!(m.centroid(m.assign(p)), p);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let points: Vec<f64> = (0..60).map(|i| ((i * 37) % 11) as f64).collect();
        let a = KMeans::fit(&points, 3, 4, 42);
        let b = KMeans::fit(&points, 3, 4, 42);
        assert_eq!(a, b);
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let m = KMeans {
            dim: 1,
            centroids: vec![0.0, 2.0],
        };
        assert_eq!(m.assign(&[1.0]), 0);
    }
}
