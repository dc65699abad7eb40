//! The full renderable scene: Gaussian cloud plus the modulation network and
//! its hash encoding.

use crate::encoding::HashGrid;
use crate::error::{Error, Result};
use crate::geometry::GaussianCloud;
use crate::math::Real;
use crate::mlp::{ModulationVariant, TinyMlp};

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cloud: GaussianCloud<T>,
    pub grid: HashGrid<T>,
    pub mlp: TinyMlp<T>,
    pub variant: ModulationVariant,
    /// Highest SH band currently evaluated (degree warm-up during training).
    pub active_sh_degree: u8,
}

impl<T: Real> Model<T> {
    pub fn new(
        cloud: GaussianCloud<T>,
        grid: HashGrid<T>,
        mlp: TinyMlp<T>,
        variant: ModulationVariant,
    ) -> Result<Self> {
        if variant != ModulationVariant::Identity && mlp.out_dim() != variant.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "mlp output dim {} does not match variant {}",
                mlp.out_dim(),
                variant.as_str()
            )));
        }
        let active_sh_degree = cloud.sh_degree;
        Ok(Self {
            cloud,
            grid,
            mlp,
            variant,
            active_sh_degree,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cloud: self.cloud.cast(),
            grid: self.grid.cast(),
            mlp: self.mlp.cast(),
            variant: self.variant,
            active_sh_degree: self.active_sh_degree,
        }
    }
}
