//! Real spherical harmonics for view-dependent base color, degrees 0-3.
//!
//! Color convention matches the splatting ecosystem: per channel
//! `rgb = max(0, sum_k c_k * Y_k(dir) + 0.5)`, so all-zero coefficients give
//! mid-gray. The basis polynomials are hard-coded through degree 3.

use crate::error::{Error, Result};
use crate::math::{cst, Real, Vec3};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Coefficient count for a degree, per color channel.
pub const fn coeff_count(degree: u8) -> usize {
    ((degree as usize) + 1) * ((degree as usize) + 1)
}

/// Per-Gaussian SH coefficients: one rgb triple per basis function.
#[derive(Clone, Debug, PartialEq)]
pub struct ShCoeffs<T> {
    values: Vec<[T; 3]>,
    degree: u8,
}

impl<T: Real> ShCoeffs<T> {
    pub fn new(values: Vec<[T; 3]>, degree: u8) -> Result<Self> {
        if degree > 3 {
            return Err(Error::InvalidInput(format!(
                "sh degree {degree} out of range [0,3]"
            )));
        }
        if values.len() != coeff_count(degree) {
            return Err(Error::DimensionMismatch(format!(
                "degree {degree} needs {} coefficient triples, got {}",
                coeff_count(degree),
                values.len()
            )));
        }
        Ok(Self { values, degree })
    }

    pub fn zeros(degree: u8) -> Self {
        Self {
            values: vec![[T::zero(); 3]; coeff_count(degree)],
            degree,
        }
    }

    /// DC-only coefficients reproducing `rgb` from any direction.
    pub fn from_rgb(rgb: Vec3<T>, degree: u8) -> Self {
        let mut sh = Self::zeros(degree);
        let c0 = cst::<T>(SH_C0);
        let half = cst::<T>(0.5);
        sh.values[0] = [
            (rgb.x - half) / c0,
            (rgb.y - half) / c0,
            (rgb.z - half) / c0,
        ];
        sh
    }

    pub fn degree(&self) -> u8 {
        self.degree
    }

    pub fn values(&self) -> &[[T; 3]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> ShCoeffs<U> {
        ShCoeffs {
            values: self
                .values
                .iter()
                .map(|c| {
                    [
                        cst(c[0].to_f64().unwrap()),
                        cst(c[1].to_f64().unwrap()),
                        cst(c[2].to_f64().unwrap()),
                    ]
                })
                .collect(),
            degree: self.degree,
        }
    }
}

/// Basis values for the first `(degree+1)^2` functions at `dir`.
pub fn sh_basis<T: Real>(degree: u8, dir: Vec3<T>) -> [T; 16] {
    let mut b = [T::zero(); 16];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    b[0] = cst(SH_C0);
    if degree >= 1 {
        let c1 = cst::<T>(SH_C1);
        b[1] = -c1 * y;
        b[2] = c1 * z;
        b[3] = -c1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = cst::<T>(SH_C2[0]) * x * y;
        b[5] = cst::<T>(SH_C2[1]) * y * z;
        b[6] = cst::<T>(SH_C2[2]) * (cst::<T>(2.0) * zz - xx - yy);
        b[7] = cst::<T>(SH_C2[3]) * x * z;
        b[8] = cst::<T>(SH_C2[4]) * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let three = cst::<T>(3.0);
        let four = cst::<T>(4.0);
        b[9] = cst::<T>(SH_C3[0]) * y * (three * xx - yy);
        b[10] = cst::<T>(SH_C3[1]) * x * y * z;
        b[11] = cst::<T>(SH_C3[2]) * y * (four * zz - xx - yy);
        b[12] = cst::<T>(SH_C3[3]) * z * (cst::<T>(2.0) * zz - three * xx - three * yy);
        b[13] = cst::<T>(SH_C3[4]) * x * (four * zz - xx - yy);
        b[14] = cst::<T>(SH_C3[5]) * z * (xx - yy);
        b[15] = cst::<T>(SH_C3[6]) * x * (xx - three * yy);
    }
    b
}

/// Gradients of each basis function with respect to the direction.
pub fn sh_basis_grad<T: Real>(degree: u8, dir: Vec3<T>) -> [Vec3<T>; 16] {
    let mut g = [Vec3::zero(); 16];
    let (x, y, z) = (dir.x, dir.y, dir.z);
    if degree >= 1 {
        let c1 = cst::<T>(SH_C1);
        g[1] = Vec3::new(T::zero(), -c1, T::zero());
        g[2] = Vec3::new(T::zero(), T::zero(), c1);
        g[3] = Vec3::new(-c1, T::zero(), T::zero());
    }
    if degree >= 2 {
        let two = cst::<T>(2.0);
        let four = cst::<T>(4.0);
        g[4] = Vec3::new(y, x, T::zero()) * cst(SH_C2[0]);
        g[5] = Vec3::new(T::zero(), z, y) * cst(SH_C2[1]);
        g[6] = Vec3::new(-two * x, -two * y, four * z) * cst(SH_C2[2]);
        g[7] = Vec3::new(z, T::zero(), x) * cst(SH_C2[3]);
        g[8] = Vec3::new(two * x, -two * y, T::zero()) * cst(SH_C2[4]);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let two = cst::<T>(2.0);
        let three = cst::<T>(3.0);
        let six = cst::<T>(6.0);
        let four = cst::<T>(4.0);
        let eight = cst::<T>(8.0);
        g[9] = Vec3::new(six * x * y, three * xx - three * yy, T::zero()) * cst(SH_C3[0]);
        g[10] = Vec3::new(y * z, x * z, x * y) * cst(SH_C3[1]);
        g[11] = Vec3::new(
            -two * x * y,
            four * zz - xx - three * yy,
            eight * y * z,
        ) * cst(SH_C3[2]);
        g[12] = Vec3::new(
            -six * x * z,
            -six * y * z,
            six * zz - three * xx - three * yy,
        ) * cst(SH_C3[3]);
        g[13] = Vec3::new(
            four * zz - three * xx - yy,
            -two * x * y,
            eight * x * z,
        ) * cst(SH_C3[4]);
        g[14] = Vec3::new(two * x * z, -two * y * z, xx - yy) * cst(SH_C3[5]);
        g[15] = Vec3::new(three * xx - three * yy, -six * x * y, T::zero()) * cst(SH_C3[6]);
    }
    g
}

fn check_dims<T: Real>(coeffs: &ShCoeffs<T>, active_degree: u8) -> Result<u8> {
    if coeffs.values.len() != coeff_count(coeffs.degree) {
        return Err(Error::DimensionMismatch(format!(
            "sh coefficient count {} does not match degree {}",
            coeffs.values.len(),
            coeffs.degree
        )));
    }
    Ok(active_degree.min(coeffs.degree))
}

/// Pre-clamp color at `dir`, truncated to `active_degree` bands.
fn eval_raw<T: Real>(coeffs: &ShCoeffs<T>, active_degree: u8, dir: Vec3<T>) -> Vec3<T> {
    let basis = sh_basis(active_degree, dir);
    let mut rgb = Vec3::splat(cst(0.5));
    for (k, c) in coeffs.values[..coeff_count(active_degree)].iter().enumerate() {
        rgb.x += basis[k] * c[0];
        rgb.y += basis[k] * c[1];
        rgb.z += basis[k] * c[2];
    }
    rgb
}

/// View-dependent base color, clamped below at zero.
pub fn eval_sh<T: Real>(coeffs: &ShCoeffs<T>, dir: Vec3<T>) -> Result<Vec3<T>> {
    eval_sh_active(coeffs, coeffs.degree, dir)
}

/// Like [`eval_sh`] but only evaluating bands up to `active_degree`
/// (degree warm-up during training).
pub fn eval_sh_active<T: Real>(
    coeffs: &ShCoeffs<T>,
    active_degree: u8,
    dir: Vec3<T>,
) -> Result<Vec3<T>> {
    let active = check_dims(coeffs, active_degree)?;
    Ok(eval_raw(coeffs, active, dir).map(|v| v.max(T::zero())))
}

/// Adjoints of [`eval_sh_active`]: gradients with respect to the coefficients
/// and the direction. The floor clamp passes no gradient on its saturated side.
pub fn eval_sh_backward<T: Real>(
    coeffs: &ShCoeffs<T>,
    active_degree: u8,
    dir: Vec3<T>,
    grad_rgb: Vec3<T>,
) -> Result<(ShCoeffs<T>, Vec3<T>)> {
    let active = check_dims(coeffs, active_degree)?;
    let raw = eval_raw(coeffs, active, dir);
    let mask = Vec3::new(
        if raw.x > T::zero() { grad_rgb.x } else { T::zero() },
        if raw.y > T::zero() { grad_rgb.y } else { T::zero() },
        if raw.z > T::zero() { grad_rgb.z } else { T::zero() },
    );

    let basis = sh_basis(active, dir);
    let basis_grad = sh_basis_grad(active, dir);
    let mut grad_coeffs = ShCoeffs::zeros(coeffs.degree);
    let mut grad_dir = Vec3::zero();
    for k in 0..coeff_count(active) {
        grad_coeffs.values[k] = [mask.x * basis[k], mask.y * basis[k], mask.z * basis[k]];
        let c = coeffs.values[k];
        let w = mask.x * c[0] + mask.y * c[1] + mask.z * c[2];
        grad_dir += basis_grad[k] * w;
    }
    Ok((grad_coeffs, grad_dir))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dir(rng: &mut impl Rng) -> Vec3<f64> {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 && n <= 1.0 {
                return v * (1.0 / n);
            }
        }
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let sh = ShCoeffs::<f64>::zeros(3);
        let rgb = eval_sh(&sh, Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(rgb, Vec3::splat(0.5));
    }

    #[test]
    fn dc_coefficient_uses_y00() {
        // Y00 = 1 / (2 sqrt(pi))
        let y00 = 1.0 / (2.0 * std::f64::consts::PI.sqrt());
        assert_relative_eq!(SH_C0, y00, epsilon = 1e-15);
        let mut sh = ShCoeffs::<f64>::zeros(0);
        sh.values_mut()[0] = [1.0, 0.0, 0.0];
        let rgb = eval_sh(&sh, Vec3::new(0.3, -0.4, 0.866_025)).unwrap();
        assert_relative_eq!(rgb.x, 0.5 + y00, epsilon = 1e-9);
        assert_relative_eq!(rgb.x, 0.78209, epsilon = 1e-5);
        assert_eq!(rgb.y, 0.5);
        assert_eq!(rgb.z, 0.5);
    }

    #[test]
    fn even_bands_are_parity_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut sh = ShCoeffs::<f64>::zeros(3);
        // Only l = 0 and l = 2 coefficients (indices 0 and 4..9).
        sh.values_mut()[0] = [0.4, -0.2, 0.1];
        for k in 4..9 {
            sh.values_mut()[k] = [
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ];
        }
        for _ in 0..50 {
            let d = random_dir(&mut rng);
            let a = eval_sh(&sh, d).unwrap();
            let b = eval_sh(&sh, -d).unwrap();
            assert_relative_eq!(a.x, b.x, epsilon = 1e-12);
            assert_relative_eq!(a.y, b.y, epsilon = 1e-12);
            assert_relative_eq!(a.z, b.z, epsilon = 1e-12);
        }
    }

    // Reference evaluator built from the associated Legendre recurrence with
    // on-the-fly normalization; structurally independent of the hard-coded
    // polynomial table above.
    mod reference {
        pub fn assoc_legendre(l: usize, m: usize, z: f64) -> f64 {
            // P_m^m = (2m-1)!! (1 - z^2)^(m/2), no Condon-Shortley phase.
            let mut pmm = 1.0;
            if m > 0 {
                let s = (1.0 - z * z).max(0.0).sqrt();
                let mut fact = 1.0;
                for _ in 0..m {
                    pmm *= fact * s;
                    fact += 2.0;
                }
            }
            if l == m {
                return pmm;
            }
            let mut pmmp1 = z * (2.0 * m as f64 + 1.0) * pmm;
            if l == m + 1 {
                return pmmp1;
            }
            let mut pll = 0.0;
            for ll in (m + 2)..=l {
                pll = ((2.0 * ll as f64 - 1.0) * z * pmmp1 - (ll + m - 1) as f64 * pmm)
                    / (ll - m) as f64;
                pmm = pmmp1;
                pmmp1 = pll;
            }
            pll
        }

        fn factorial(n: usize) -> f64 {
            (1..=n).map(|v| v as f64).product::<f64>().max(1.0)
        }

        fn norm_k(l: usize, m: usize) -> f64 {
            ((2.0 * l as f64 + 1.0) / (4.0 * std::f64::consts::PI) * factorial(l - m)
                / factorial(l + m))
            .sqrt()
        }

        /// Real spherical harmonic in the splatting sign convention:
        /// standard real SH scaled by (-1)^|m|.
        pub fn y_lm(l: usize, m: i32, dir: [f64; 3]) -> f64 {
            let (x, y, z) = (dir[0], dir[1], dir[2]);
            let phi = y.atan2(x);
            let am = m.unsigned_abs() as usize;
            let base = if m == 0 {
                norm_k(l, 0) * assoc_legendre(l, 0, z)
            } else if m > 0 {
                std::f64::consts::SQRT_2
                    * norm_k(l, am)
                    * (am as f64 * phi).cos()
                    * assoc_legendre(l, am, z)
            } else {
                std::f64::consts::SQRT_2
                    * norm_k(l, am)
                    * (am as f64 * phi).sin()
                    * assoc_legendre(l, am, z)
            };
            if am % 2 == 1 {
                -base
            } else {
                base
            }
        }
    }

    #[test]
    fn hardcoded_basis_matches_recurrence_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let d = random_dir(&mut rng);
            let basis = sh_basis(3, d);
            let mut k = 0;
            for l in 0..=3usize {
                for m in -(l as i32)..=(l as i32) {
                    let want = reference::y_lm(l, m, [d.x, d.y, d.z]);
                    assert!(
                        (basis[k] - want).abs() < 1e-6,
                        "l={l} m={m}: hardcoded {} vs reference {want}",
                        basis[k]
                    );
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn backward_zero_adjoint_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut sh = ShCoeffs::<f64>::zeros(2);
        for c in sh.values_mut() {
            *c = [
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.4..0.4),
            ];
        }
        let (gc, gd) =
            eval_sh_backward(&sh, 2, Vec3::new(0.0, 0.0, 1.0), Vec3::zero()).unwrap();
        assert!(gc.values().iter().flatten().all(|&v| v == 0.0));
        assert_eq!(gd, Vec3::zero());
    }

    #[test]
    fn backward_dc_gradient_is_y00() {
        let sh = ShCoeffs::<f64>::zeros(0);
        let (gc, _) = eval_sh_backward(
            &sh,
            0,
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 0.0),
        )
        .unwrap();
        assert_relative_eq!(gc.values()[0][0], SH_C0, epsilon = 1e-12);
        assert_eq!(gc.values()[0][1], 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for degree in 0..=3u8 {
            let mut sh = ShCoeffs::<f64>::zeros(degree);
            for c in sh.values_mut() {
                *c = [
                    rng.random_range(0.0..0.4),
                    rng.random_range(0.0..0.4),
                    rng.random_range(0.0..0.4),
                ];
            }
            let dir = random_dir(&mut rng);
            let adj = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let (gc, gd) = eval_sh_backward(&sh, degree, dir, adj).unwrap();
            let h = 1e-4;
            let phi = |sh: &ShCoeffs<f64>, dir: Vec3<f64>| {
                let rgb = eval_sh_active(sh, degree, dir).unwrap();
                rgb.dot(adj)
            };
            for k in 0..coeff_count(degree) {
                for ch in 0..3 {
                    let mut plus = sh.clone();
                    plus.values_mut()[k][ch] += h;
                    let mut minus = sh.clone();
                    minus.values_mut()[k][ch] -= h;
                    let fd = (phi(&plus, dir) - phi(&minus, dir)) / (2.0 * h);
                    let a = gc.values()[k][ch];
                    let denom = fd.abs().max(a.abs()).max(1e-6);
                    assert!(
                        ((a - fd) / denom).abs() <= 1e-3,
                        "coeff k={k} ch={ch}: analytic {a} fd {fd}"
                    );
                }
            }
            for axis in 0..3 {
                let mut dp = dir;
                let mut dm = dir;
                match axis {
                    0 => {
                        dp.x += h;
                        dm.x -= h;
                    }
                    1 => {
                        dp.y += h;
                        dm.y -= h;
                    }
                    _ => {
                        dp.z += h;
                        dm.z -= h;
                    }
                }
                let fd = (phi(&sh, dp) - phi(&sh, dm)) / (2.0 * h);
                let a = [gd.x, gd.y, gd.z][axis];
                let denom = fd.abs().max(a.abs()).max(1e-6);
                assert!(
                    ((a - fd) / denom).abs() <= 1e-3,
                    "dir axis {axis}: analytic {a} fd {fd}"
                );
            }
        }
    }

    #[test]
    fn degree_mismatch_is_an_error() {
        assert!(ShCoeffs::<f64>::new(vec![[0.0; 3]; 5], 1).is_err());
        assert!(ShCoeffs::<f64>::new(vec![[0.0; 3]; 4], 1).is_ok());
    }
}
