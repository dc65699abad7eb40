//! Backward rasterization pass: exact adjoints of [`super::render`].
//!
//! Three phases. A: per-tile compositing adjoints (color, effective opacity,
//! projected mean, conic) accumulated per pixel and reduced over tiles in
//! fixed order. B: per-splat backpropagation through modulation, spherical
//! harmonics, the network, the encoding tables, and the covariance
//! projection. C: ordered accumulation into per-parameter-group buffers.

use super::{
    bin_splats, composite_pixel, prepare_splats, projection_jacobian, Prepared, TileGrid,
    ALPHA_CAP, TILE_SIZE,
};
use crate::encoding::FEATURE_LEN;
use crate::error::{Error, Result};
use crate::exec::{self, Parallelism};
use crate::geometry::Camera;
use crate::image_buf::Image;
use crate::math::{
    cst, mat23_mul_mat3, mat23_t_mul_vec2, mat2_mul_mat23, vt_g_v, Mat3, Quat, Real, Vec2, Vec3,
};
use crate::mlp::{apply_modulation_backward, mlp_backward, ModulationVariant};
use crate::model::Model;
use crate::sh::{eval_sh_backward, ShCoeffs};

/// Gradients for every trainable parameter group, plus the per-Gaussian
/// screen-space positional gradient magnitudes the densifier consumes.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub means: Vec<Vec3<T>>,
    pub log_scales: Vec<Vec3<T>>,
    pub rotations: Vec<[T; 4]>,
    pub opacity_logits: Vec<T>,
    pub sh: Vec<ShCoeffs<T>>,
    pub tables: Vec<T>,
    pub mlp_params: Vec<T>,
    /// L2 norm of each Gaussian's accumulated projected-mean gradient.
    pub pos2d_norm: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(model: &Model<T>) -> Self {
        let n = model.cloud.len();
        Self {
            means: vec![Vec3::zero(); n],
            log_scales: vec![Vec3::zero(); n],
            rotations: vec![[T::zero(); 4]; n],
            opacity_logits: vec![T::zero(); n],
            sh: vec![ShCoeffs::zeros(model.cloud.sh_degree); n],
            tables: vec![T::zero(); model.grid.table_len()],
            mlp_params: vec![T::zero(); model.mlp.params().len()],
            pos2d_norm: vec![T::zero(); n],
        }
    }
}

/// Per-splat adjoints of the compositing stage, indexed like the sorted
/// splat array.
struct Stage2D<T> {
    rgb: Vec<Vec3<T>>,
    opacity_eff: Vec<T>,
    mean2d: Vec<Vec2<T>>,
    conic: Vec<[[T; 2]; 2]>,
}

impl<T: Real> Stage2D<T> {
    fn zeros(n: usize) -> Self {
        Self {
            rgb: vec![Vec3::zero(); n],
            opacity_eff: vec![T::zero(); n],
            mean2d: vec![Vec2::zero(); n],
            conic: vec![[[T::zero(); 2]; 2]; n],
        }
    }
}

/// Phase A for one tile: walk every pixel forward, then in reverse to get
/// compositing adjoints. Entries are indexed by position in the tile list.
#[allow(clippy::too_many_arguments)]
fn tile_backward<T: Real>(
    splats: &[Prepared<T>],
    list: &[u32],
    tile_x: usize,
    tile_y: usize,
    width: usize,
    height: usize,
    grad_image: &Image<T>,
    background: Vec3<T>,
) -> Stage2D<T> {
    let mut grads = Stage2D::zeros(list.len());
    let half = cst::<T>(0.5);
    let alpha_cap = cst::<T>(ALPHA_CAP);
    let mut hits = Vec::with_capacity(list.len().min(64));

    let x0 = tile_x * TILE_SIZE;
    let x1 = (x0 + TILE_SIZE).min(width);
    let y0 = tile_y * TILE_SIZE;
    let y1 = (y0 + TILE_SIZE).min(height);
    for y in y0..y1 {
        let py = cst::<T>(y as f64) + half;
        for x in x0..x1 {
            let px = cst::<T>(x as f64) + half;
            hits.clear();
            let (_, t_end, _) = composite_pixel(splats, list, px, py, Some(&mut hits));
            if hits.is_empty() {
                continue;
            }
            let g = grad_image.pixel(x, y);
            // Everything composited after splat i, background included.
            let mut suffix = background * t_end;
            for hit in hits.iter().rev() {
                let s = &splats[list[hit.list_pos as usize] as usize];
                let one_minus = T::one() - hit.alpha;
                let dl_dalpha = g.x * (hit.t_before * s.rgb.x - suffix.x / one_minus)
                    + g.y * (hit.t_before * s.rgb.y - suffix.y / one_minus)
                    + g.z * (hit.t_before * s.rgb.z - suffix.z / one_minus);
                let weight = hit.alpha * hit.t_before;
                let e = &mut grads.rgb[hit.list_pos as usize];
                *e += g * weight;
                suffix += s.rgb * weight;

                // The alpha cap passes no gradient on its saturated side.
                if s.opacity_eff * hit.falloff >= alpha_cap {
                    continue;
                }
                grads.opacity_eff[hit.list_pos as usize] += dl_dalpha * hit.falloff;
                let dl_dq = -dl_dalpha * hit.alpha * half;
                let (dx, dy) = (hit.delta.x, hit.delta.y);
                let m = &mut grads.conic[hit.list_pos as usize];
                m[0][0] += dl_dq * dx * dx;
                m[0][1] += dl_dq * dx * dy;
                m[1][0] += dl_dq * dx * dy;
                m[1][1] += dl_dq * dy * dy;
                let c = s.geom.conic;
                let two = cst::<T>(2.0);
                let dl_ddx = dl_dq * (two * c.xx * dx + two * c.xy * dy);
                let dl_ddy = dl_dq * (two * c.xy * dx + two * c.yy * dy);
                let gm = &mut grads.mean2d[hit.list_pos as usize];
                gm.x -= dl_ddx;
                gm.y -= dl_ddy;
            }
        }
    }
    grads
}

/// Per-splat parameter gradients produced by phase B.
struct SplatGrads<T> {
    idx: usize,
    mean: Vec3<T>,
    log_scale: Vec3<T>,
    rotation: [T; 4],
    opacity_logit: T,
    sh: ShCoeffs<T>,
    mlp: Option<Vec<T>>,
    tables: Vec<(u32, T)>,
    pos2d_norm: T,
}

fn mul22<T: Real>(a: &[[T; 2]; 2], b: &[[T; 2]; 2]) -> [[T; 2]; 2] {
    let mut r = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            r[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    r
}

/// d(rotation matrix)/d(unit quaternion component), for (w, x, y, z).
fn rotation_derivatives<T: Real>(q: Quat<T>) -> [Mat3<T>; 4] {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let two = cst::<T>(2.0);
    let m = |rows: [[T; 3]; 3]| Mat3 { m: rows }.scale(two);
    [
        m([
            [T::zero(), -z, y],
            [z, T::zero(), -x],
            [-y, x, T::zero()],
        ]),
        m([
            [T::zero(), y, z],
            [y, -two * x, -w],
            [z, w, -two * x],
        ]),
        m([
            [-two * y, x, w],
            [x, T::zero(), z],
            [-w, z, -two * y],
        ]),
        m([
            [-two * z, -w, x],
            [w, -two * z, y],
            [x, y, T::zero()],
        ]),
    ]
}

#[allow(clippy::needless_range_loop)]
fn splat_backward<T: Real>(
    model: &Model<T>,
    cam: &Camera<T>,
    s: &Prepared<T>,
    grad_rgb: Vec3<T>,
    grad_opacity: T,
    grad_mean2d: Vec2<T>,
    grad_conic: &[[T; 2]; 2],
) -> Result<SplatGrads<T>> {
    let g = &model.cloud.gaussians[s.idx];
    let identity = model.variant == ModulationVariant::Identity;

    // Conic -> screen covariance: d(inv) = -inv * d * inv.
    let conic_full = s.geom.conic.to_full();
    let g2 = mul22(&mul22(&conic_full, grad_conic), &conic_full);
    let g2 = [
        [-g2[0][0], -g2[0][1]],
        [-g2[1][0], -g2[1][1]],
    ];

    // Screen covariance -> world covariance and projection Jacobian.
    let j = projection_jacobian(cam, s.geom.tcam);
    let v = mat23_mul_mat3(&j, &cam.rot);
    let cov3 = g.covariance();
    let g3 = vt_g_v(&v, &g2);
    let g2_sym = [
        [g2[0][0] + g2[0][0], g2[0][1] + g2[1][0]],
        [g2[1][0] + g2[0][1], g2[1][1] + g2[1][1]],
    ];
    let dv = mat23_mul_mat3(&mat2_mul_mat23(&g2_sym, &v), &cov3);
    let dj = mat23_mul_mat3(&dv, &cam.rot.transpose());

    // World covariance -> log-scales and rotation.
    let rot = g.rotation.rotation_matrix();
    let two = cst::<T>(2.0);
    let m3 = Mat3::from_diagonal(Vec3::new(
        (two * g.log_scale.x).exp(),
        (two * g.log_scale.y).exp(),
        (two * g.log_scale.z).exp(),
    ));
    let g3_sym = g3.add(&g3.transpose());
    let d_rot = g3_sym.matmul(&rot).matmul(&m3);
    let rt_g_r = rot.transpose().matmul(&g3).matmul(&rot);
    let log_scale = Vec3::new(
        rt_g_r.m[0][0] * two * (two * g.log_scale.x).exp(),
        rt_g_r.m[1][1] * two * (two * g.log_scale.y).exp(),
        rt_g_r.m[2][2] * two * (two * g.log_scale.z).exp(),
    );

    // Rotation matrix -> raw quaternion (through normalization).
    let q = g.rotation;
    let qn = q.normalized();
    let derivs = rotation_derivatives(qn);
    let mut d_qn = [T::zero(); 4];
    for k in 0..4 {
        d_qn[k] = d_rot.frob_dot(&derivs[k]);
    }
    let qn_arr = qn.to_array();
    let dot: T = (0..4).map(|k| d_qn[k] * qn_arr[k]).sum();
    let norm = q.norm().max(cst(1e-12));
    let mut rotation = [T::zero(); 4];
    for k in 0..4 {
        rotation[k] = (d_qn[k] - qn_arr[k] * dot) / norm;
    }

    // Camera-space mean adjoint: projected mean plus the Jacobian's own
    // dependence on the camera-space position.
    let t = s.geom.tcam;
    let inv_z = t.z.recip();
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut dt = mat23_t_mul_vec2(&j, grad_mean2d);
    dt.x += dj[0][2] * (-cam.fx * inv_z2);
    dt.y += dj[1][2] * (-cam.fy * inv_z2);
    dt.z += dj[0][0] * (-cam.fx * inv_z2)
        + dj[1][1] * (-cam.fy * inv_z2)
        + dj[0][2] * (two * cam.fx * t.x * inv_z3)
        + dj[1][2] * (two * cam.fy * t.y * inv_z3);
    let mut mean = cam.rot.transpose().mul_vec(dt);

    // Appearance: modulation -> base opacity, base color, network.
    let (g_sigma, g_rgb_base, g_mod) = apply_modulation_backward(
        model.variant,
        s.sigma,
        s.rgb_base,
        &s.modulation,
        grad_opacity,
        grad_rgb,
    );
    let opacity_logit = g_sigma * s.sigma * (T::one() - s.sigma);
    let (sh, mut g_dir) =
        eval_sh_backward(&g.sh, model.active_sh_degree, s.dir, g_rgb_base)?;

    let mut mlp = None;
    let mut tables = Vec::new();
    if !identity {
        let (g_mlp, g_features, g_dir_mlp) =
            mlp_backward(&model.mlp, model.variant, &s.features, s.dir, &g_mod)?;
        model
            .grid
            .encode_backward_entries(g.mean, &g_features, &mut tables);
        g_dir += g_dir_mlp;
        mlp = Some(g_mlp);
    }

    // Direction depends on the mean: d = (m - c)/|m - c|.
    let offset = g.mean - cam.center();
    let dist = offset.norm();
    if dist > T::zero() {
        mean += (g_dir - s.dir * s.dir.dot(g_dir)) * dist.recip();
    }

    Ok(SplatGrads {
        idx: s.idx,
        mean,
        log_scale,
        rotation,
        opacity_logit,
        sh,
        mlp,
        tables,
        pos2d_norm: grad_mean2d.norm(),
    })
}

/// Adjoint of [`super::render`]: given the image adjoint, return gradients
/// for every parameter group.
pub fn render_backward<T: Real>(
    model: &Model<T>,
    cam: &Camera<T>,
    background: Vec3<T>,
    grad_image: &Image<T>,
    par: Parallelism,
) -> Result<Gradients<T>> {
    let (width, height) = (cam.width as usize, cam.height as usize);
    if grad_image.width() != width || grad_image.height() != height {
        return Err(Error::DimensionMismatch(format!(
            "image adjoint is {}x{}, camera is {}x{}",
            grad_image.width(),
            grad_image.height(),
            width,
            height
        )));
    }

    let splats = prepare_splats(model, cam, par, None)?;
    let grid = TileGrid::new(width, height);
    let lists = bin_splats(&splats, &grid, width, height);

    // Phase A: per-tile compositing adjoints, reduced in tile order.
    let per_tile: Vec<Stage2D<T>> = exec::map_collect(par, grid.len(), |ti| {
        let (ty, tx) = (ti / grid.tiles_x, ti % grid.tiles_x);
        tile_backward(
            &splats,
            &lists[ti],
            tx,
            ty,
            width,
            height,
            grad_image,
            background,
        )
    });
    let mut stage = Stage2D::zeros(splats.len());
    for (ti, tg) in per_tile.iter().enumerate() {
        for (pos, &si) in lists[ti].iter().enumerate() {
            let si = si as usize;
            stage.rgb[si] += tg.rgb[pos];
            stage.opacity_eff[si] += tg.opacity_eff[pos];
            stage.mean2d[si] += tg.mean2d[pos];
            for a in 0..2 {
                for b in 0..2 {
                    stage.conic[si][a][b] += tg.conic[pos][a][b];
                }
            }
        }
    }

    // Phase B: per-splat parameter gradients (ordered collect).
    let per_splat: Vec<Option<Result<SplatGrads<T>>>> =
        exec::map_collect(par, splats.len(), |si| {
            let zero = stage.rgb[si] == Vec3::zero()
                && stage.opacity_eff[si] == T::zero()
                && stage.mean2d[si] == Vec2::zero();
            if zero {
                return None;
            }
            Some(splat_backward(
                model,
                cam,
                &splats[si],
                stage.rgb[si],
                stage.opacity_eff[si],
                stage.mean2d[si],
                &stage.conic[si],
            ))
        });

    // Phase C: fixed-order accumulation.
    let mut grads = Gradients::zeros(model);
    for entry in per_splat {
        let Some(entry) = entry else { continue };
        let sg = entry?;
        grads.means[sg.idx] += sg.mean;
        grads.log_scales[sg.idx] += sg.log_scale;
        for k in 0..4 {
            grads.rotations[sg.idx][k] += sg.rotation[k];
        }
        grads.opacity_logits[sg.idx] += sg.opacity_logit;
        for (dst, src) in grads.sh[sg.idx]
            .values_mut()
            .iter_mut()
            .zip(sg.sh.values().iter())
        {
            for ch in 0..3 {
                dst[ch] += src[ch];
            }
        }
        if let Some(mlp) = sg.mlp {
            for (dst, src) in grads.mlp_params.iter_mut().zip(mlp.iter()) {
                *dst += *src;
            }
        }
        for (i, v) in sg.tables {
            grads.tables[i as usize] += v;
        }
        grads.pos2d_norm[sg.idx] += sg.pos2d_norm;
    }
    Ok(grads)
}
