//! The trainable pipeline: encoders, fusion, coarse-to-fine decoder and the
//! EdgeConv offset predictor, plus end-to-end inference with the view
//! calibrator.
//!
//! Parameter names are prefixed by block: `enc3d.`, `enc2d.`, `fuse.` and
//! `dec.` make up the coarse stage, `op.` the offset predictor.

mod config;
mod decoder;
mod encoder;
mod layers;
mod offset;

use serde::{Deserialize, Serialize};

pub use config::{ModelConfig, Widths};
pub use decoder::CsrOutputs;
pub use offset::EDGE_LAYERS;

use crate::autodiff::{BoundParams, ParameterStore, Tape, Tensor, Var};
use crate::calibrator::calibrate_multi;
use crate::error::Result;
use crate::geometry::{CameraTransform, PointCloud};
use crate::silhouette::{Image, SilhouetteImage};
use layers::{Fwd, Init};

/// Prefix of the offset-predictor parameters.
pub const OFFSET_PREFIX: &str = "op.";

/// Whether a parameter belongs to the coarse stage.
pub fn is_csr_param(name: &str) -> bool {
    !name.starts_with(OFFSET_PREFIX)
}

/// Deterministic initialization; the offset head starts at zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterStore> {
    config.validate()?;
    let mut init = Init::new(seed, config.leaky_slope);
    encoder::init(&mut init, config)?;
    decoder::init(&mut init, config)?;
    offset::init(&mut init, config)?;
    Ok(init.store)
}

/// Pipeline components that can be switched off for ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Image feature branch; when off the 2D code is all zeros.
    pub ifb: bool,
    pub first_vc: bool,
    pub offsets: bool,
    pub second_vc: bool,
}

impl Ablation {
    pub fn full() -> Self {
        Ablation { ifb: true, first_vc: true, offsets: true, second_vc: true }
    }

    /// Coarse stage only.
    pub fn csr_only() -> Self {
        Ablation { ifb: true, first_vc: false, offsets: false, second_vc: false }
    }
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation::full()
    }
}

/// Every intermediate cloud of one inference run.
#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub pc: PointCloud,
    pub p_cal: PointCloud,
    pub p_op: PointCloud,
    pub p_out: PointCloud,
}

fn fwd<'a>(config: &ModelConfig, tape: &'a mut Tape, params: &'a BoundParams) -> Fwd<'a> {
    Fwd { tape, params, slope: config.leaky_slope }
}

pub fn encode_3d(tape: &mut Tape, params: &BoundParams, config: &ModelConfig, p_in: &PointCloud) -> Result<(Var, Var)> {
    encoder::encode_3d(&mut fwd(config, tape, params), config, p_in)
}

pub fn encode_2d(tape: &mut Tape, params: &BoundParams, config: &ModelConfig, image: &Image) -> Result<Var> {
    encoder::encode_2d(&mut fwd(config, tape, params), config, image)
}

pub fn fuse(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    local: Var,
    code_3d: Var,
    code_2d: Var,
) -> Result<Var> {
    encoder::fuse(&mut fwd(config, tape, params), local, code_3d, code_2d)
}

pub fn decode(tape: &mut Tape, params: &BoundParams, config: &ModelConfig, v: Var, p_in: &PointCloud) -> Result<CsrOutputs> {
    decoder::decode(&mut fwd(config, tape, params), config, v, p_in)
}

pub fn predict_offsets(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    p_cal: &PointCloud,
) -> Result<(Var, Var)> {
    offset::predict_offsets(&mut fwd(config, tape, params), config, p_cal)
}

/// Coarse stage on the tape. With `use_image == false` the 2D code is
/// replaced by zeros.
pub fn csr_forward(
    tape: &mut Tape,
    params: &BoundParams,
    config: &ModelConfig,
    p_in: &PointCloud,
    image: &Image,
    use_image: bool,
) -> Result<CsrOutputs> {
    let mut f = fwd(config, tape, params);
    let (local, code_3d) = encoder::encode_3d(&mut f, config, p_in)?;
    let code_2d = if use_image {
        encoder::encode_2d(&mut f, config, image)?
    } else {
        encoder::image_tensor(config, image)?;
        f.tape.constant(Tensor::zeros(vec![1, config.widths.conv]))?
    };
    let v = encoder::fuse(&mut f, local, code_3d, code_2d)?;
    decoder::decode(&mut f, config, v, p_in)
}

/// A configuration and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Pairs loaded parameters with a configuration, checking that names and
    /// shapes match what the configuration builds.
    pub fn from_parts(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        init_params(&config, 0)?.check_compatible(&params)?;
        Ok(Model { config, params })
    }

    /// `Pc` without gradients.
    pub fn coarse(&self, p_in: &PointCloud, image: &Image, use_image: bool) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let bound = self.params.bind_only(&mut tape, is_csr_param)?;
        let out = csr_forward(&mut tape, &bound, &self.config, p_in, image, use_image)?;
        decoder::cloud_of(tape.value(out.pc))
    }

    /// `P_op` without gradients.
    pub fn refine(&self, p_cal: &PointCloud) -> Result<PointCloud> {
        let mut tape = Tape::new();
        let bound = self.params.bind_only(&mut tape, |n| !is_csr_param(n))?;
        let (_, p_op) = predict_offsets(&mut tape, &bound, &self.config, p_cal)?;
        decoder::cloud_of(tape.value(p_op))
    }

    /// Full inference. `calibration` lists the views the calibrator uses, in
    /// application order; an empty list disables calibration.
    pub fn complete(
        &self,
        p_in: &PointCloud,
        image: &Image,
        calibration: &[(CameraTransform, SilhouetteImage)],
        ablation: Ablation,
    ) -> Result<Completion> {
        let pc = self.coarse(p_in, image, ablation.ifb)?;
        let order: Vec<usize> = (0..calibration.len()).collect();
        let vc = |cloud: &PointCloud, on: bool| -> Result<PointCloud> {
            if on && !calibration.is_empty() {
                calibrate_multi(cloud, calibration, &order)
            } else {
                Ok(cloud.clone())
            }
        };
        let p_cal = vc(&pc, ablation.first_vc)?;
        let p_op = if ablation.offsets { self.refine(&p_cal)? } else { p_cal.clone() };
        let p_out = vc(&p_op, ablation.second_vc)?;
        Ok(Completion { pc, p_cal, p_op, p_out })
    }
}

#[cfg(test)]
mod tests;
