//! Forward rasterization pass.

use super::{bin_splats, composite_pixel, prepare_splats, Prepared, RenderOutput, TileGrid, TILE_SIZE};
use crate::encoding::FEATURE_LEN;
use crate::error::Result;
use crate::exec::{self, Parallelism};
use crate::geometry::Camera;
use crate::image_buf::Image;
use crate::math::{cst, Real, Vec3};
use crate::model::Model;

struct Band<'a, T> {
    y0: usize,
    rows: usize,
    img: &'a mut [T],
    trans: &'a mut [T],
    contrib: &'a mut [u32],
}

/// Split the output buffers into per-tile-row bands so each band is owned by
/// exactly one task.
fn split_bands<'a, T: Real>(
    img: &'a mut [T],
    trans: &'a mut [T],
    contrib: &'a mut [u32],
    width: usize,
    height: usize,
) -> Vec<Band<'a, T>> {
    let mut bands = Vec::with_capacity(height.div_ceil(TILE_SIZE));
    let mut img_rem = img;
    let mut trans_rem = trans;
    let mut contrib_rem = contrib;
    let mut y0 = 0;
    while y0 < height {
        let rows = TILE_SIZE.min(height - y0);
        let (ia, ib) = std::mem::take(&mut img_rem).split_at_mut(rows * width * 3);
        img_rem = ib;
        let (ta, tb) = std::mem::take(&mut trans_rem).split_at_mut(rows * width);
        trans_rem = tb;
        let (ca, cb) = std::mem::take(&mut contrib_rem).split_at_mut(rows * width);
        contrib_rem = cb;
        bands.push(Band {
            y0,
            rows,
            img: ia,
            trans: ta,
            contrib: ca,
        });
        y0 += rows;
    }
    bands
}

fn render_band<T: Real>(
    band: &mut Band<'_, T>,
    splats: &[Prepared<T>],
    lists: &[Vec<u32>],
    grid: &TileGrid,
    width: usize,
    background: Vec3<T>,
) {
    let ty = band.y0 / TILE_SIZE;
    let half = cst::<T>(0.5);
    for tx in 0..grid.tiles_x {
        let list = &lists[ty * grid.tiles_x + tx];
        let x0 = tx * TILE_SIZE;
        let x1 = (x0 + TILE_SIZE).min(width);
        for row in 0..band.rows {
            let py = cst::<T>((band.y0 + row) as f64) + half;
            for x in x0..x1 {
                let px = cst::<T>(x as f64) + half;
                let (color, trans, contributors) =
                    composite_pixel(splats, list, px, py, None);
                let out = color + background * trans;
                let base = (row * width + x) * 3;
                band.img[base] = out.x;
                band.img[base + 1] = out.y;
                band.img[base + 2] = out.z;
                band.trans[row * width + x] = trans;
                band.contrib[row * width + x] = contributors;
            }
        }
    }
}

/// Render the model from a camera over a constant background color.
///
/// An empty cloud yields the background image with unit transmittance.
pub fn render<T: Real>(
    model: &Model<T>,
    cam: &Camera<T>,
    background: Vec3<T>,
    par: Parallelism,
) -> Result<RenderOutput<T>> {
    render_with_features(model, cam, background, par, None)
}

pub(crate) fn render_with_features<T: Real>(
    model: &Model<T>,
    cam: &Camera<T>,
    background: Vec3<T>,
    par: Parallelism,
    features_override: Option<&[[T; FEATURE_LEN]]>,
) -> Result<RenderOutput<T>> {
    let (width, height) = (cam.width as usize, cam.height as usize);
    let splats = prepare_splats(model, cam, par, features_override)?;
    let grid = TileGrid::new(width, height);
    let lists = bin_splats(&splats, &grid, width, height);

    let mut image = Image::zeros(width, height);
    let mut trans = vec![T::one(); width * height];
    let mut contrib = vec![0u32; width * height];
    {
        let mut bands = split_bands(image.data_mut(), &mut trans, &mut contrib, width, height);
        exec::for_each_mut(par, &mut bands, |band| {
            render_band(band, &splats, &lists, &grid, width, background)
        });
    }

    Ok(RenderOutput {
        image,
        final_transmittance: trans,
        contributor_count: contrib,
    })
}
