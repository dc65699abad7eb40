//! The modulation network: encoded Gaussian mean + viewing direction in,
//! per-Gaussian opacity/color deltas out.
//!
//! Two hidden layers of 32 LeakyReLU units. Multiplicative output channels
//! map through `2 * sigmoid(x)` (identity value 1 reachable at x = 0),
//! additive channels through `tanh(x)`, so a network with a zeroed final
//! layer is exactly the identity modulation and rendering starts at the
//! plain splatting baseline.

use crate::encoding::FEATURE_LEN;
use crate::error::{Error, Result};
use crate::math::{cst, sigmoid, Real, Vec3};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const INPUT_DIM: usize = FEATURE_LEN + 3;
pub const HIDDEN: usize = 32;
const LEAKY_SLOPE: f64 = 0.01;

/// Which channels the network modulates and how they combine with the base.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModulationVariant {
    /// Plain splatting; the network is never evaluated.
    Identity,
    ColorAdd,
    ColorMul,
    OpacityAdd,
    OpacityMul,
    OpacityColorAdd,
    OpacityColorMul,
}

impl ModulationVariant {
    pub const ALL: [ModulationVariant; 7] = [
        ModulationVariant::Identity,
        ModulationVariant::ColorAdd,
        ModulationVariant::ColorMul,
        ModulationVariant::OpacityAdd,
        ModulationVariant::OpacityMul,
        ModulationVariant::OpacityColorAdd,
        ModulationVariant::OpacityColorMul,
    ];

    pub fn modulates_opacity(self) -> bool {
        matches!(
            self,
            ModulationVariant::OpacityAdd
                | ModulationVariant::OpacityMul
                | ModulationVariant::OpacityColorAdd
                | ModulationVariant::OpacityColorMul
        )
    }

    pub fn modulates_color(self) -> bool {
        matches!(
            self,
            ModulationVariant::ColorAdd
                | ModulationVariant::ColorMul
                | ModulationVariant::OpacityColorAdd
                | ModulationVariant::OpacityColorMul
        )
    }

    pub fn is_multiplicative(self) -> bool {
        matches!(
            self,
            ModulationVariant::ColorMul
                | ModulationVariant::OpacityMul
                | ModulationVariant::OpacityColorMul
        )
    }

    /// Network output width for this variant (0: network unused).
    pub fn output_dim(self) -> usize {
        match self {
            ModulationVariant::Identity => 0,
            ModulationVariant::OpacityAdd | ModulationVariant::OpacityMul => 1,
            ModulationVariant::ColorAdd | ModulationVariant::ColorMul => 3,
            ModulationVariant::OpacityColorAdd | ModulationVariant::OpacityColorMul => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModulationVariant::Identity => "identity",
            ModulationVariant::ColorAdd => "color-add",
            ModulationVariant::ColorMul => "color-mul",
            ModulationVariant::OpacityAdd => "opacity-add",
            ModulationVariant::OpacityMul => "opacity-mul",
            ModulationVariant::OpacityColorAdd => "opacity-color-add",
            ModulationVariant::OpacityColorMul => "opacity-color-mul",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown modulation variant '{s}'")))
    }

    pub(crate) fn tag(self) -> u8 {
        Self::ALL.iter().position(|&v| v == self).unwrap() as u8
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant tag {tag}")))
    }
}

/// Per-Gaussian, per-view modulation values (post-activation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Modulation<T> {
    pub dsigma: T,
    pub dcolor: Vec3<T>,
}

impl<T: Real> Modulation<T> {
    /// The values the identity variant reports: multiplicative-neutral opacity
    /// factor, zero color delta.
    pub fn identity() -> Self {
        Self {
            dsigma: T::one(),
            dcolor: Vec3::zero(),
        }
    }
}

/// Adjoints flowing into a [`Modulation`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModulationGrad<T> {
    pub dsigma: T,
    pub dcolor: Vec3<T>,
}

/// Flat parameter layout: w1 (32 x 27), b1, w2 (32 x 32), b2, w3 (out x 32), b3.
#[derive(Debug)]
pub struct TinyMlp<T> {
    params: Vec<T>,
    out_dim: usize,
    evals: AtomicU64,
}

impl<T: Real> Clone for TinyMlp<T> {
    fn clone(&self) -> Self {
        Self {
            params: self.params.clone(),
            out_dim: self.out_dim,
            evals: AtomicU64::new(self.evals.load(Ordering::Relaxed)),
        }
    }
}

pub fn param_count(out_dim: usize) -> usize {
    HIDDEN * INPUT_DIM + HIDDEN + HIDDEN * HIDDEN + HIDDEN + out_dim * HIDDEN + out_dim
}

const W1: usize = 0;
const B1: usize = W1 + HIDDEN * INPUT_DIM;
const W2: usize = B1 + HIDDEN;
const B2: usize = W2 + HIDDEN * HIDDEN;
const W3: usize = B2 + HIDDEN;

impl<T: Real> TinyMlp<T> {
    /// Training initialization: Xavier-uniform hidden layers, zeroed final
    /// layer so the network starts as the identity modulation.
    pub fn new(variant: ModulationVariant, seed: u64) -> Self {
        let out_dim = variant.output_dim().max(1);
        let mut mlp = Self::zeros(out_dim);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        mlp.init_layer(&mut rng, W1, HIDDEN, INPUT_DIM, 1.0);
        mlp.init_layer(&mut rng, W2, HIDDEN, HIDDEN, 1.0);
        mlp
    }

    /// All layers randomized (used by the gradient-check harness, where a
    /// zeroed final layer would hide adjoint errors).
    pub fn new_randomized(variant: ModulationVariant, seed: u64, scale: f64) -> Self {
        let out_dim = variant.output_dim().max(1);
        let mut mlp = Self::zeros(out_dim);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        mlp.init_layer(&mut rng, W1, HIDDEN, INPUT_DIM, scale);
        mlp.init_layer(&mut rng, W2, HIDDEN, HIDDEN, scale);
        mlp.init_layer(&mut rng, W3, out_dim, HIDDEN, scale);
        mlp
    }

    fn zeros(out_dim: usize) -> Self {
        Self {
            params: vec![T::zero(); param_count(out_dim)],
            out_dim,
            evals: AtomicU64::new(0),
        }
    }

    fn init_layer(&mut self, rng: &mut ChaCha20Rng, offset: usize, rows: usize, cols: usize, scale: f64) {
        let bound = (6.0 / (rows + cols) as f64).sqrt() * scale;
        for k in 0..rows * cols {
            self.params[offset + k] = cst(rng.random_range(-bound..bound));
        }
    }

    pub fn from_params(params: Vec<T>, out_dim: usize) -> Result<Self> {
        if params.len() != param_count(out_dim) {
            return Err(Error::DimensionMismatch(format!(
                "mlp parameter count {} != {}",
                params.len(),
                param_count(out_dim)
            )));
        }
        Ok(Self {
            params,
            out_dim,
            evals: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    pub fn reset_eval_count(&self) {
        self.evals.store(0, Ordering::Relaxed);
    }

    pub fn cast<U: Real>(&self) -> TinyMlp<U> {
        TinyMlp {
            params: self
                .params
                .iter()
                .map(|&v| cst(v.to_f64().unwrap()))
                .collect(),
            out_dim: self.out_dim,
            evals: AtomicU64::new(0),
        }
    }

    fn b3_offset(&self) -> usize {
        W3 + self.out_dim * HIDDEN
    }

    /// Smallest hidden-unit pre-activation magnitude for an input;
    /// finite-difference checks use this to pick operating points away from
    /// the LeakyReLU kinks.
    pub fn hidden_margin(&self, features: &[T; FEATURE_LEN], dir: Vec3<T>) -> T {
        let mut x = [T::zero(); INPUT_DIM];
        x[..FEATURE_LEN].copy_from_slice(features);
        x[FEATURE_LEN] = dir.x;
        x[FEATURE_LEN + 1] = dir.y;
        x[FEATURE_LEN + 2] = dir.z;
        let (h1, h2, _) = self.forward_raw(&x);
        let slope = cst::<T>(LEAKY_SLOPE);
        let mut margin = T::infinity();
        for &v in h1.iter().chain(h2.iter()) {
            let pre = if v >= T::zero() { v } else { v / slope };
            margin = margin.min(pre.abs());
        }
        margin
    }

    /// Raw forward pass; returns post-activation hidden states and the
    /// pre-activation output row.
    fn forward_raw(&self, x: &[T; INPUT_DIM]) -> ([T; HIDDEN], [T; HIDDEN], Vec<T>) {
        let slope = cst::<T>(LEAKY_SLOPE);
        let mut h1 = [T::zero(); HIDDEN];
        for i in 0..HIDDEN {
            let mut s = self.params[B1 + i];
            let row = W1 + i * INPUT_DIM;
            for (j, xj) in x.iter().enumerate() {
                s += self.params[row + j] * *xj;
            }
            h1[i] = if s >= T::zero() { s } else { s * slope };
        }
        let mut h2 = [T::zero(); HIDDEN];
        for i in 0..HIDDEN {
            let mut s = self.params[B2 + i];
            let row = W2 + i * HIDDEN;
            for (j, hj) in h1.iter().enumerate() {
                s += self.params[row + j] * *hj;
            }
            h2[i] = if s >= T::zero() { s } else { s * slope };
        }
        let b3 = self.b3_offset();
        let mut y = vec![T::zero(); self.out_dim];
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = self.params[b3 + i];
            let row = W3 + i * HIDDEN;
            for (j, hj) in h2.iter().enumerate() {
                s += self.params[row + j] * *hj;
            }
            *yi = s;
        }
        (h1, h2, y)
    }
}

fn check_variant<T: Real>(mlp: &TinyMlp<T>, variant: ModulationVariant) -> Result<()> {
    if variant != ModulationVariant::Identity && mlp.out_dim() != variant.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "mlp output dim {} does not match variant {} (needs {})",
            mlp.out_dim(),
            variant.as_str(),
            variant.output_dim()
        )));
    }
    Ok(())
}

#[inline]
fn activate<T: Real>(raw: T, multiplicative: bool) -> T {
    if multiplicative {
        cst::<T>(2.0) * sigmoid(raw)
    } else {
        raw.tanh()
    }
}

#[inline]
fn activate_grad<T: Real>(raw: T, multiplicative: bool) -> T {
    if multiplicative {
        let s = sigmoid(raw);
        cst::<T>(2.0) * s * (T::one() - s)
    } else {
        let t = raw.tanh();
        T::one() - t * t
    }
}

/// Run the network for one Gaussian. The identity variant short-circuits
/// without touching the network.
pub fn modulate<T: Real>(
    mlp: &TinyMlp<T>,
    variant: ModulationVariant,
    features: &[T; FEATURE_LEN],
    dir: Vec3<T>,
) -> Result<Modulation<T>> {
    check_variant(mlp, variant)?;
    if variant == ModulationVariant::Identity {
        return Ok(Modulation::identity());
    }
    mlp.evals.fetch_add(1, Ordering::Relaxed);

    let mut x = [T::zero(); INPUT_DIM];
    x[..FEATURE_LEN].copy_from_slice(features);
    x[FEATURE_LEN] = dir.x;
    x[FEATURE_LEN + 1] = dir.y;
    x[FEATURE_LEN + 2] = dir.z;
    let (_, _, y) = mlp.forward_raw(&x);

    let mul = variant.is_multiplicative();
    let mut m = Modulation::identity();
    let mut k = 0;
    if variant.modulates_opacity() {
        m.dsigma = activate(y[k], mul);
        k += 1;
    }
    if variant.modulates_color() {
        m.dcolor = Vec3::new(
            activate(y[k], mul),
            activate(y[k + 1], mul),
            activate(y[k + 2], mul),
        );
    }
    Ok(m)
}

/// Gradients of [`modulate`] with respect to the parameters, the input
/// features, and the direction. LeakyReLU takes the positive-side slope at 0.
pub fn mlp_backward<T: Real>(
    mlp: &TinyMlp<T>,
    variant: ModulationVariant,
    features: &[T; FEATURE_LEN],
    dir: Vec3<T>,
    grad: &ModulationGrad<T>,
) -> Result<(Vec<T>, [T; FEATURE_LEN], Vec3<T>)> {
    check_variant(mlp, variant)?;
    let mut grad_params = vec![T::zero(); mlp.params.len()];
    let mut grad_features = [T::zero(); FEATURE_LEN];
    if variant == ModulationVariant::Identity {
        return Ok((grad_params, grad_features, Vec3::zero()));
    }

    let mut x = [T::zero(); INPUT_DIM];
    x[..FEATURE_LEN].copy_from_slice(features);
    x[FEATURE_LEN] = dir.x;
    x[FEATURE_LEN + 1] = dir.y;
    x[FEATURE_LEN + 2] = dir.z;
    let (h1, h2, y) = mlp.forward_raw(&x);

    // Output activation adjoints.
    let mul = variant.is_multiplicative();
    let mut gy = vec![T::zero(); mlp.out_dim];
    let mut k = 0;
    if variant.modulates_opacity() {
        gy[k] = grad.dsigma * activate_grad(y[k], mul);
        k += 1;
    }
    if variant.modulates_color() {
        let gc = grad.dcolor.to_array();
        for ch in 0..3 {
            gy[k + ch] = gc[ch] * activate_grad(y[k + ch], mul);
        }
    }

    let slope = cst::<T>(LEAKY_SLOPE);
    let lrelu_grad = |post: T| if post >= T::zero() { T::one() } else { slope };

    // Output layer.
    let b3 = mlp.b3_offset();
    let mut gh2 = [T::zero(); HIDDEN];
    for i in 0..mlp.out_dim {
        let row = W3 + i * HIDDEN;
        grad_params[b3 + i] = gy[i];
        for j in 0..HIDDEN {
            grad_params[row + j] = gy[i] * h2[j];
            gh2[j] += mlp.params[row + j] * gy[i];
        }
    }

    // Second hidden layer.
    let mut gh1 = [T::zero(); HIDDEN];
    for i in 0..HIDDEN {
        let gpre = gh2[i] * lrelu_grad(h2[i]);
        let row = W2 + i * HIDDEN;
        grad_params[B2 + i] = gpre;
        for j in 0..HIDDEN {
            grad_params[row + j] = gpre * h1[j];
            gh1[j] += mlp.params[row + j] * gpre;
        }
    }

    // First hidden layer.
    let mut gx = [T::zero(); INPUT_DIM];
    for i in 0..HIDDEN {
        let gpre = gh1[i] * lrelu_grad(h1[i]);
        let row = W1 + i * INPUT_DIM;
        grad_params[B1 + i] = gpre;
        for j in 0..INPUT_DIM {
            grad_params[row + j] = gpre * x[j];
            gx[j] += mlp.params[row + j] * gpre;
        }
    }

    grad_features.copy_from_slice(&gx[..FEATURE_LEN]);
    let grad_dir = Vec3::new(gx[FEATURE_LEN], gx[FEATURE_LEN + 1], gx[FEATURE_LEN + 2]);
    Ok((grad_params, grad_features, grad_dir))
}

/// Combine base opacity and color with a modulation. Multiplicative opacity
/// and additive channels clamp into their valid ranges; untouched channels
/// pass through.
pub fn apply_modulation<T: Real>(
    variant: ModulationVariant,
    sigma: T,
    rgb: Vec3<T>,
    m: &Modulation<T>,
) -> (T, Vec3<T>) {
    let mut sigma_out = sigma;
    let mut rgb_out = rgb;
    if variant.modulates_opacity() {
        let raw = if variant.is_multiplicative() {
            sigma * m.dsigma
        } else {
            sigma + m.dsigma
        };
        sigma_out = raw.max(T::zero()).min(T::one());
    }
    if variant.modulates_color() {
        let raw = if variant.is_multiplicative() {
            rgb.comp_mul(m.dcolor)
        } else {
            rgb + m.dcolor
        };
        rgb_out = raw.map(|v| v.max(T::zero()));
    }
    (sigma_out, rgb_out)
}

/// Adjoints of [`apply_modulation`]; clamps pass no gradient on their
/// saturated side.
pub fn apply_modulation_backward<T: Real>(
    variant: ModulationVariant,
    sigma: T,
    rgb: Vec3<T>,
    m: &Modulation<T>,
    grad_sigma_out: T,
    grad_rgb_out: Vec3<T>,
) -> (T, Vec3<T>, ModulationGrad<T>) {
    let mut grad_sigma = grad_sigma_out;
    let mut grad_rgb = grad_rgb_out;
    let mut grad_mod = ModulationGrad {
        dsigma: T::zero(),
        dcolor: Vec3::zero(),
    };

    if variant.modulates_opacity() {
        let raw = if variant.is_multiplicative() {
            sigma * m.dsigma
        } else {
            sigma + m.dsigma
        };
        let pass = raw > T::zero() && raw < T::one();
        let g = if pass { grad_sigma_out } else { T::zero() };
        if variant.is_multiplicative() {
            grad_sigma = g * m.dsigma;
            grad_mod.dsigma = g * sigma;
        } else {
            grad_sigma = g;
            grad_mod.dsigma = g;
        }
    }
    if variant.modulates_color() {
        let raw = if variant.is_multiplicative() {
            rgb.comp_mul(m.dcolor)
        } else {
            rgb + m.dcolor
        };
        let rawa = raw.to_array();
        let go = grad_rgb_out.to_array();
        let rgba = rgb.to_array();
        let dca = m.dcolor.to_array();
        let mut gr = [T::zero(); 3];
        let mut gd = [T::zero(); 3];
        for ch in 0..3 {
            let g = if rawa[ch] > T::zero() { go[ch] } else { T::zero() };
            if variant.is_multiplicative() {
                gr[ch] = g * dca[ch];
                gd[ch] = g * rgba[ch];
            } else {
                gr[ch] = g;
                gd[ch] = g;
            }
        }
        grad_rgb = Vec3::from(gr);
        grad_mod.dcolor = Vec3::from(gd);
    }
    (grad_sigma, grad_rgb, grad_mod)
}
