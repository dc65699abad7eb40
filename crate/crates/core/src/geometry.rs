//! Core scene data types: anisotropic Gaussian primitives, the scene cloud,
//! and the pinhole camera.
//!
//! Covariance is kept factorized as log-scale + quaternion so it stays
//! symmetric positive definite no matter where unconstrained gradient steps
//! move the raw parameters. Opacity is likewise stored as a logit.

use crate::error::{Error, Result};
use crate::math::{cst, sigmoid, Mat3, Quat, Real, Vec3};
use crate::sh::ShCoeffs;

/// One anisotropic 3D Gaussian primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D<T> {
    pub mean: Vec3<T>,
    /// Log of the per-axis standard deviation.
    pub log_scale: Vec3<T>,
    /// Stored unnormalized; normalized on use.
    pub rotation: Quat<T>,
    /// Effective opacity is `sigmoid(opacity_logit)`.
    pub opacity_logit: T,
    pub sh: ShCoeffs<T>,
}

impl<T: Real> Gaussian3D<T> {
    /// World-space covariance `R * diag(exp(log_scale))^2 * R^T`.
    pub fn covariance(&self) -> Mat3<T> {
        let r = self.rotation.rotation_matrix();
        let two = cst::<T>(2.0);
        let d = Mat3::from_diagonal(Vec3::new(
            (two * self.log_scale.x).exp(),
            (two * self.log_scale.y).exp(),
            (two * self.log_scale.z).exp(),
        ));
        r.matmul(&d).matmul(&r.transpose())
    }

    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.is_finite()
            && self.log_scale.is_finite()
            && self.rotation.is_finite()
            && self.opacity_logit.is_finite()
            && self.sh.is_finite()
    }

    pub fn cast<U: Real>(&self) -> Gaussian3D<U> {
        Gaussian3D {
            mean: self.mean.cast(),
            log_scale: self.log_scale.cast(),
            rotation: self.rotation.cast(),
            opacity_logit: cst(self.opacity_logit.to_f64().unwrap()),
            sh: self.sh.cast(),
        }
    }
}

/// Ordered collection of Gaussians; the scene representation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T> {
    pub gaussians: Vec<Gaussian3D<T>>,
    pub sh_degree: u8,
}

impl<T: Real> GaussianCloud<T> {
    /// All members must carry coefficients for `sh_degree`.
    pub fn new(gaussians: Vec<Gaussian3D<T>>, sh_degree: u8) -> Result<Self> {
        if sh_degree > 3 {
            return Err(Error::InvalidInput(format!(
                "sh degree {sh_degree} out of range [0,3]"
            )));
        }
        for (i, g) in gaussians.iter().enumerate() {
            if g.sh.degree() != sh_degree {
                return Err(Error::InvalidInput(format!(
                    "gaussian {i} has sh degree {} but cloud is degree {sh_degree}",
                    g.sh.degree()
                )));
            }
        }
        Ok(Self {
            gaussians,
            sh_degree,
        })
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn means(&self) -> impl Iterator<Item = Vec3<T>> + '_ {
        self.gaussians.iter().map(|g| g.mean)
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        GaussianCloud {
            gaussians: self.gaussians.iter().map(|g| g.cast()).collect(),
            sh_degree: self.sh_degree,
        }
    }
}

/// Pinhole camera: intrinsics plus a rigid world-to-camera pose.
/// Camera space looks down +z; image y grows downward.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera<T> {
    pub width: u32,
    pub height: u32,
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    /// Rotation block of the world-to-camera transform.
    pub rot: Mat3<T>,
    /// Translation of the world-to-camera transform.
    pub trans: Vec3<T>,
    pub near: T,
    pub far: T,
}

impl<T: Real> Camera<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: u32,
        height: u32,
        fx: T,
        fy: T,
        cx: T,
        cy: T,
        rot: Mat3<T>,
        trans: Vec3<T>,
        near: T,
        far: T,
    ) -> Result<Self> {
        if !(fx > T::zero() && fy > T::zero()) {
            return Err(Error::InvalidInput("focal lengths must be positive".into()));
        }
        if !(T::zero() < near && near < far) {
            return Err(Error::InvalidInput(
                "clip distances must satisfy 0 < near < far".into(),
            ));
        }
        let rtr = rot.transpose().matmul(&rot);
        let mut err = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { T::one() } else { T::zero() };
                err = err.max((rtr.m[i][j] - want).abs());
            }
        }
        if err >= cst(1e-5) {
            return Err(Error::InvalidInput(
                "camera rotation block is not orthonormal".into(),
            ));
        }
        Ok(Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rot,
            trans,
            near,
            far,
        })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3<T> {
        -self.rot.transpose().mul_vec(self.trans)
    }

    /// Optical axis (+z of camera space) expressed in the world frame.
    pub fn forward(&self) -> Vec3<T> {
        self.rot.row(2)
    }

    /// World point into camera space.
    #[inline]
    pub fn to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        self.rot.mul_vec(p) + self.trans
    }

    /// Unit vector from the camera center toward `point`; falls back to the
    /// optical axis when the point coincides with the center.
    pub fn direction_to(&self, point: Vec3<T>) -> Vec3<T> {
        (point - self.center()).normalized_or(self.forward())
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        Camera {
            width: self.width,
            height: self.height,
            fx: cst(self.fx.to_f64().unwrap()),
            fy: cst(self.fy.to_f64().unwrap()),
            cx: cst(self.cx.to_f64().unwrap()),
            cy: cst(self.cy.to_f64().unwrap()),
            rot: self.rot.cast(),
            trans: self.trans.cast(),
            near: cst(self.near.to_f64().unwrap()),
            far: cst(self.far.to_f64().unwrap()),
        }
    }
}

/// Per-Gaussian viewing direction: unit vector from the camera center to the
/// Gaussian mean, in world coordinates.
pub fn viewing_direction<T: Real>(cam: &Camera<T>, g: &Gaussian3D<T>) -> Vec3<T> {
    cam.direction_to(g.mean)
}

/// Camera at `eye` looking toward `target` (world +y used as up hint).
pub fn look_at<T: Real>(
    width: u32,
    height: u32,
    fx: T,
    eye: Vec3<T>,
    target: Vec3<T>,
    near: T,
    far: T,
) -> Result<Camera<T>> {
    let fwd = (target - eye).normalized_or(Vec3::new(T::zero(), T::zero(), T::one()));
    let up_hint = if fwd.y.abs() > cst(0.99) {
        Vec3::new(T::zero(), T::zero(), T::one())
    } else {
        Vec3::new(T::zero(), T::one(), T::zero())
    };
    let right = fwd.cross(up_hint).normalized_or(Vec3::new(T::one(), T::zero(), T::zero()));
    let down = fwd.cross(right);
    // Rows of the world-to-camera rotation are the camera axes in world frame.
    let rot = Mat3 {
        m: [right.to_array(), down.to_array(), fwd.to_array()],
    };
    let trans = -rot.mul_vec(eye);
    Camera::new(
        width,
        height,
        fx,
        fx,
        cst::<T>(0.5) * cst(width as f64),
        cst::<T>(0.5) * cst(height as f64),
        rot,
        trans,
        near,
        far,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::logit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plain_gaussian(mean: Vec3<f64>, log_scale: Vec3<f64>, rotation: Quat<f64>) -> Gaussian3D<f64> {
        Gaussian3D {
            mean,
            log_scale,
            rotation,
            opacity_logit: logit(0.5),
            sh: ShCoeffs::zeros(0),
        }
    }

    fn random_unit_quat(rng: &mut impl Rng) -> Quat<f64> {
        loop {
            let q = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if q.norm() > 1e-3 {
                return q.normalized();
            }
        }
    }

    #[test]
    fn covariance_identity_case() {
        let g = plain_gaussian(Vec3::zero(), Vec3::zero(), Quat::identity());
        let cov = g.covariance();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(cov.m[i][j], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_axis_scaling() {
        let g = plain_gaussian(
            Vec3::zero(),
            Vec3::new(2.0f64.ln(), 0.0, 0.0),
            Quat::identity(),
        );
        let cov = g.covariance();
        assert_relative_eq!(cov.m[0][0], 4.0, epsilon = 1e-12);
        assert_relative_eq!(cov.m[1][1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(cov.m[2][2], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn covariance_quaternion_double_cover() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let q = random_unit_quat(&mut rng);
            let neg = Quat::new(-q.w, -q.x, -q.y, -q.z);
            let a = plain_gaussian(Vec3::zero(), Vec3::new(0.1, -0.4, 0.7), q).covariance();
            let b = plain_gaussian(Vec3::zero(), Vec3::new(0.1, -0.4, 0.7), neg).covariance();
            for i in 0..3 {
                for j in 0..3 {
                    assert_relative_eq!(a.m[i][j], b.m[i][j], epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn covariance_eigenpairs_match_scales() {
        // Columns of R are eigenvectors of Sigma with eigenvalues exp(2*log_scale).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = random_unit_quat(&mut rng);
            let ls = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let g = plain_gaussian(Vec3::zero(), ls, q);
            let cov = g.covariance();
            let r = q.rotation_matrix();
            let eigs = [(2.0 * ls.x).exp(), (2.0 * ls.y).exp(), (2.0 * ls.z).exp()];
            for k in 0..3 {
                let v = r.col(k);
                let got = cov.mul_vec(v);
                let want = v * eigs[k];
                assert_relative_eq!(got.x, want.x, epsilon = 1e-9);
                assert_relative_eq!(got.y, want.y, epsilon = 1e-9);
                assert_relative_eq!(got.z, want.z, epsilon = 1e-9);
                assert!(eigs[k] > 0.0);
            }
        }
    }

    fn identity_camera() -> Camera<f64> {
        Camera::new(
            64,
            64,
            50.0,
            50.0,
            32.0,
            32.0,
            Mat3::identity(),
            Vec3::zero(),
            0.01,
            100.0,
        )
        .unwrap()
    }

    #[test]
    fn viewing_direction_axis_aligned() {
        let cam = identity_camera();
        let g = plain_gaussian(Vec3::new(0.0, 0.0, 5.0), Vec3::zero(), Quat::identity());
        let d = viewing_direction(&cam, &g);
        assert_relative_eq!(d.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.z, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn viewing_direction_345_triangle() {
        let cam = identity_camera();
        let g = plain_gaussian(Vec3::new(3.0, 0.0, 4.0), Vec3::zero(), Quat::identity());
        let d = viewing_direction(&cam, &g);
        assert_relative_eq!(d.x, 0.6, epsilon = 1e-12);
        assert_relative_eq!(d.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(d.z, 0.8, epsilon = 1e-12);
    }

    #[test]
    fn viewing_direction_degenerate_falls_back_to_forward() {
        let cam = identity_camera();
        let g = plain_gaussian(Vec3::zero(), Vec3::zero(), Quat::identity());
        let d = viewing_direction(&cam, &g);
        assert_eq!(d, cam.forward());
    }

    #[test]
    fn viewing_direction_unit_norm_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let eye = Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let target = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if (target - eye).norm() < 1e-3 {
                continue;
            }
            let cam = look_at(32, 32, 40.0, eye, target, 0.01, 100.0).unwrap();
            let g = plain_gaussian(
                Vec3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ),
                Vec3::zero(),
                Quat::identity(),
            );
            let d = viewing_direction(&cam, &g);
            assert!((d.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn camera_rejects_bad_inputs() {
        let r = Camera::new(
            8,
            8,
            -1.0f64,
            1.0,
            4.0,
            4.0,
            Mat3::identity(),
            Vec3::zero(),
            0.1,
            10.0,
        );
        assert!(r.is_err());
        let mut skew = Mat3::identity();
        skew.m[0][1] = 0.1;
        let r = Camera::new(8, 8, 1.0f64, 1.0, 4.0, 4.0, skew, Vec3::zero(), 0.1, 10.0);
        assert!(r.is_err());
        let r = Camera::new(
            8,
            8,
            1.0f64,
            1.0,
            4.0,
            4.0,
            Mat3::identity(),
            Vec3::zero(),
            5.0,
            1.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn cloud_rejects_mixed_degrees() {
        let a = plain_gaussian(Vec3::zero(), Vec3::zero(), Quat::identity());
        let mut b = a.clone();
        b.sh = ShCoeffs::zeros(1);
        assert!(GaussianCloud::new(vec![a, b], 0).is_err());
    }
}
