//! Multiresolution hash-grid encoding of Gaussian means.
//!
//! Twelve grids of geometrically increasing resolution (16 to 512 vertices per
//! axis) share fixed-size trainable feature tables of 2^14 entries x 2
//! features. A position is normalized into the scene bounding box, trilinearly
//! interpolated at every level, and the per-level features are concatenated
//! into a 24-dimensional vector. Vertices map into the tables through the
//! usual XOR spatial hash; no gradient flows back into the position itself,
//! only into the touched table rows.

use crate::error::{Error, Result};
use crate::math::{cst, Aabb, Real, Vec3};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const LEVELS: usize = 12;
pub const BASE_RESOLUTION: u32 = 16;
pub const MAX_RESOLUTION: u32 = 512;
pub const TABLE_SIZE: usize = 1 << 14;
pub const FEATURE_DIM: usize = 2;
/// Length of the concatenated feature vector.
pub const FEATURE_LEN: usize = LEVELS * FEATURE_DIM;

const HASH_PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

/// Spatial hash of an integer grid vertex into a table slot.
#[inline]
fn hash_vertex(v: [u32; 3]) -> usize {
    let h = v[0]
        .wrapping_mul(HASH_PRIMES[0])
        ^ v[1].wrapping_mul(HASH_PRIMES[1])
        ^ v[2].wrapping_mul(HASH_PRIMES[2]);
    (h as usize) % TABLE_SIZE
}

/// Per-level resolutions; geometric from `BASE_RESOLUTION` to `MAX_RESOLUTION`.
pub fn level_resolutions() -> [u32; LEVELS] {
    let ln_step = ((MAX_RESOLUTION as f64).ln() - (BASE_RESOLUTION as f64).ln())
        / (LEVELS as f64 - 1.0);
    let mut out = [0u32; LEVELS];
    for (l, slot) in out.iter_mut().enumerate() {
        // Small epsilon guards the top level against 511.999... from rounding.
        *slot = ((BASE_RESOLUTION as f64) * (ln_step * l as f64).exp() + 1e-6) as u32;
    }
    out
}

/// L-level trainable feature grid over a scene bounding box.
#[derive(Debug)]
pub struct HashGrid<T> {
    tables: Vec<T>,
    aabb: Aabb<T>,
    resolutions: [u32; LEVELS],
    evals: AtomicU64,
}

impl<T: Real> Clone for HashGrid<T> {
    fn clone(&self) -> Self {
        Self {
            tables: self.tables.clone(),
            aabb: self.aabb,
            resolutions: self.resolutions,
            evals: AtomicU64::new(self.evals.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Real> HashGrid<T> {
    /// Fresh grid with small uniform random features.
    pub fn new(aabb: Aabb<T>, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let tables = (0..LEVELS * TABLE_SIZE * FEATURE_DIM)
            .map(|_| cst::<T>(rng.random_range(-1e-4..1e-4)))
            .collect();
        Self {
            tables,
            aabb,
            resolutions: level_resolutions(),
            evals: AtomicU64::new(0),
        }
    }

    pub fn from_tables(aabb: Aabb<T>, tables: Vec<T>) -> Result<Self> {
        if tables.len() != LEVELS * TABLE_SIZE * FEATURE_DIM {
            return Err(Error::DimensionMismatch(format!(
                "hash table length {} != {}",
                tables.len(),
                LEVELS * TABLE_SIZE * FEATURE_DIM
            )));
        }
        Ok(Self {
            tables,
            aabb,
            resolutions: level_resolutions(),
            evals: AtomicU64::new(0),
        })
    }

    pub fn aabb(&self) -> Aabb<T> {
        self.aabb
    }

    pub fn tables(&self) -> &[T] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [T] {
        &mut self.tables
    }

    pub fn table_len(&self) -> usize {
        self.tables.len()
    }

    /// Number of `encode` calls since construction (or the last reset).
    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    pub fn cast<U: Real>(&self) -> HashGrid<U> {
        HashGrid {
            tables: self
                .tables
                .iter()
                .map(|&v| cst(v.to_f64().unwrap()))
                .collect(),
            aabb: self.aabb.cast(),
            resolutions: self.resolutions,
            evals: AtomicU64::new(0),
        }
    }

    /// The eight surrounding vertices of `p01` at `resolution`, with their
    /// trilinear weights and table slots.
    fn corners(&self, level: usize, p01: Vec3<T>) -> [(usize, T); 8] {
        let res = self.resolutions[level] as f64;
        let sx = p01.x * cst(res);
        let sy = p01.y * cst(res);
        let sz = p01.z * cst(res);
        // Anchor cell so positions at the far face still interpolate inside.
        let max_cell = cst::<T>(res - 1.0);
        let fx = sx.floor().min(max_cell).max(T::zero());
        let fy = sy.floor().min(max_cell).max(T::zero());
        let fz = sz.floor().min(max_cell).max(T::zero());
        let tx = sx - fx;
        let ty = sy - fy;
        let tz = sz - fz;
        let (ix, iy, iz) = (
            fx.to_f64().unwrap() as u32,
            fy.to_f64().unwrap() as u32,
            fz.to_f64().unwrap() as u32,
        );
        let one = T::one();
        let mut out = [(0usize, T::zero()); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (dx, dy, dz) = ((c & 1) as u32, ((c >> 1) & 1) as u32, ((c >> 2) & 1) as u32);
            let wx = if dx == 1 { tx } else { one - tx };
            let wy = if dy == 1 { ty } else { one - ty };
            let wz = if dz == 1 { tz } else { one - tz };
            let idx = hash_vertex([ix + dx, iy + dy, iz + dz]);
            *slot = (idx, wx * wy * wz);
        }
        out
    }

    /// Concatenated trilinear features for a world-space position. Positions
    /// outside the bounding box are clamped onto it.
    pub fn encode(&self, position: Vec3<T>) -> [T; FEATURE_LEN] {
        self.evals.fetch_add(1, Ordering::Relaxed);
        let p01 = self.aabb.normalize_clamped(position);
        let mut features = [T::zero(); FEATURE_LEN];
        for level in 0..LEVELS {
            let base = level * TABLE_SIZE * FEATURE_DIM;
            let mut acc = [T::zero(); FEATURE_DIM];
            for (idx, w) in self.corners(level, p01) {
                let row = base + idx * FEATURE_DIM;
                for f in 0..FEATURE_DIM {
                    acc[f] += self.tables[row + f] * w;
                }
            }
            features[level * FEATURE_DIM..(level + 1) * FEATURE_DIM].copy_from_slice(&acc);
        }
        features
    }

    /// Scatter feature adjoints into `(table index, gradient)` entries, eight
    /// rows per level. Entry order is deterministic so replaying a batch in a
    /// fixed order produces bit-identical table gradients.
    pub fn encode_backward_entries(
        &self,
        position: Vec3<T>,
        grad_features: &[T; FEATURE_LEN],
        out: &mut Vec<(u32, T)>,
    ) {
        let p01 = self.aabb.normalize_clamped(position);
        for level in 0..LEVELS {
            let base = level * TABLE_SIZE * FEATURE_DIM;
            let gf = &grad_features[level * FEATURE_DIM..(level + 1) * FEATURE_DIM];
            for (idx, w) in self.corners(level, p01) {
                let row = base + idx * FEATURE_DIM;
                for f in 0..FEATURE_DIM {
                    out.push(((row + f) as u32, gf[f] * w));
                }
            }
        }
    }

    /// Dense table gradient for a single position (verification paths).
    pub fn encode_backward(
        &self,
        position: Vec3<T>,
        grad_features: &[T; FEATURE_LEN],
    ) -> Vec<T> {
        let mut entries = Vec::with_capacity(LEVELS * 8 * FEATURE_DIM);
        self.encode_backward_entries(position, grad_features, &mut entries);
        let mut dense = vec![T::zero(); self.tables.len()];
        for (idx, g) in entries {
            dense[idx as usize] += g;
        }
        dense
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_grid(seed: u64) -> HashGrid<f64> {
        HashGrid::new(Aabb::new(Vec3::zero(), Vec3::splat(1.0)), seed)
    }

    #[test]
    fn resolutions_span_16_to_512_nondecreasing() {
        let res = level_resolutions();
        assert_eq!(res[0], 16);
        assert_eq!(res[LEVELS - 1], 512);
        for w in res.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert_eq!(FEATURE_LEN, 24);
    }

    #[test]
    fn vertex_position_returns_stored_feature_exactly() {
        let grid = unit_grid(1);
        // Origin and far corner are exact vertices at every level.
        for p in [Vec3::zero(), Vec3::splat(1.0)] {
            let feats = grid.encode(p);
            for level in 0..LEVELS {
                let res = level_resolutions()[level];
                let v = if p.x == 0.0 {
                    [0u32, 0, 0]
                } else {
                    [res, res, res]
                };
                let row = level * TABLE_SIZE * FEATURE_DIM + hash_vertex(v) * FEATURE_DIM;
                for f in 0..FEATURE_DIM {
                    assert_eq!(feats[level * FEATURE_DIM + f], grid.tables()[row + f]);
                }
            }
        }
    }

    #[test]
    fn cell_center_averages_the_eight_corners() {
        let grid = unit_grid(2);
        // At level 0 (resolution 16) the point (0.5+eps)/16-cell center:
        // scaled coordinate 8.5 in every axis -> cell [8,9], weights all 1/8.
        let p = Vec3::splat(8.5 / 16.0);
        let feats = grid.encode(p);
        let mut want = [0.0f64; FEATURE_DIM];
        for c in 0..8u32 {
            let v = [8 + (c & 1), 8 + ((c >> 1) & 1), 8 + ((c >> 2) & 1)];
            let row = hash_vertex(v) * FEATURE_DIM;
            for f in 0..FEATURE_DIM {
                want[f] += grid.tables()[row + f] / 8.0;
            }
        }
        for f in 0..FEATURE_DIM {
            assert_relative_eq!(feats[f], want[f], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_tables_encode_to_zero() {
        let mut grid = unit_grid(3);
        grid.tables_mut().fill(0.0);
        let feats = grid.encode(Vec3::new(0.3, 0.8, 0.11));
        assert_eq!(feats, [0.0; FEATURE_LEN]);
    }

    #[test]
    fn encode_is_affine_along_axes_within_a_cell() {
        // Three collinear points inside one cell: f(mid) == (f(lo)+f(hi))/2.
        let grid = unit_grid(4);
        // Level-11 cells have size 1/512; stay inside one cell of every level
        // by spanning [c, c + 1/2048] which lies in a single 512-cell.
        let c = 100.25 / 512.0;
        let span = 1.0 / 2048.0;
        for axis in 0..3 {
            let mk = |t: f64| {
                let mut p = Vec3::splat(c);
                match axis {
                    0 => p.x += t,
                    1 => p.y += t,
                    _ => p.z += t,
                }
                p
            };
            let lo = grid.encode(mk(0.0));
            let mid = grid.encode(mk(span / 2.0));
            let hi = grid.encode(mk(span));
            for f in 0..FEATURE_LEN {
                assert_relative_eq!(mid[f], (lo[f] + hi[f]) / 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_adjoint_is_zero() {
        let grid = unit_grid(5);
        let dense = grid.encode_backward(Vec3::splat(0.37), &[0.0; FEATURE_LEN]);
        assert!(dense.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_at_vertex_hits_single_row_per_level() {
        let grid = unit_grid(6);
        let mut grad = [0.0f64; FEATURE_LEN];
        grad.fill(1.0);
        let dense = grid.encode_backward(Vec3::zero(), &grad);
        for level in 0..LEVELS {
            let base = level * TABLE_SIZE * FEATURE_DIM;
            let nonzero: Vec<usize> = (0..TABLE_SIZE * FEATURE_DIM)
                .filter(|&i| dense[base + i] != 0.0)
                .collect();
            let row = hash_vertex([0, 0, 0]) * FEATURE_DIM;
            assert_eq!(nonzero, vec![row, row + 1]);
            assert_eq!(dense[base + row], 1.0);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        let grid = unit_grid(7);
        let p = Vec3::new(0.312, 0.77, 0.05);
        let mut adj = [0.0f64; FEATURE_LEN];
        for a in adj.iter_mut() {
            *a = rng.random_range(-1.0..1.0);
        }
        let dense = grid.encode_backward(p, &adj);
        let h = 1e-4;
        let touched: Vec<usize> = (0..dense.len()).filter(|&i| dense[i] != 0.0).collect();
        assert!(!touched.is_empty());
        for &i in &touched {
            let mut plus = grid.clone();
            plus.tables_mut()[i] += h;
            let mut minus = grid.clone();
            minus.tables_mut()[i] -= h;
            let phi = |g: &HashGrid<f64>| {
                let f = g.encode(p);
                f.iter().zip(adj.iter()).map(|(a, b)| a * b).sum::<f64>()
            };
            let fd = (phi(&plus) - phi(&minus)) / (2.0 * h);
            let a = dense[i];
            let denom = fd.abs().max(a.abs()).max(1e-6);
            assert!(((a - fd) / denom).abs() <= 1e-3, "table {i}: {a} vs {fd}");
        }
    }

    #[test]
    fn identity_variant_counter_starts_at_zero() {
        let grid = unit_grid(9);
        assert_eq!(grid.eval_count(), 0);
        let _ = grid.encode(Vec3::zero());
        assert_eq!(grid.eval_count(), 1);
        grid.reset_eval_count();
        assert_eq!(grid.eval_count(), 0);
    }

    proptest! {
        #[test]
        fn trilinear_weights_sum_to_one(
            x in 0.0f64..1.0, y in 0.0f64..1.0, z in 0.0f64..1.0, level in 0usize..LEVELS
        ) {
            let grid = unit_grid(10);
            let corners = grid.corners(level, Vec3::new(x, y, z));
            let total: f64 = corners.iter().map(|(_, w)| *w).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for (idx, w) in corners {
                prop_assert!(idx < TABLE_SIZE);
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&w));
            }
        }

        #[test]
        fn out_of_box_positions_clamp(
            x in -10.0f64..10.0, y in -10.0f64..10.0, z in -10.0f64..10.0
        ) {
            let grid = unit_grid(11);
            let clamped = Vec3::new(x.clamp(0.0, 1.0), y.clamp(0.0, 1.0), z.clamp(0.0, 1.0));
            prop_assert_eq!(grid.encode(Vec3::new(x, y, z)), grid.encode(clamped));
        }
    }
}
