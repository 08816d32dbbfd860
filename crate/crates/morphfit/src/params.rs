//! The semantic parameter vector driving face synthesis, split into named
//! blocks: shape `alpha`, expression `delta`, albedo `gamma`, illumination
//! `phi` (9 spherical-harmonics coefficients per RGB channel, channel-major:
//! entries `9*ch + k`), and camera `cam` = (pitch, yaw, roll, tx, ty,
//! log_scale).
//!
//! With the default basis sizes (80, 64, 80) the flattened vector has
//! 80 + 64 + 80 + 27 + 6 = 257 entries, ordered alpha | delta | gamma |
//! phi | cam.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ThetaDims, N_CAM, N_PHI};

/// First spherical-harmonics band of a pure white light: with
/// `phi[9*ch] = 2*sqrt(pi)` the shaded color equals the albedo.
pub const WHITE_LIGHT_DC: f64 = 3.5449077018110318;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceParams {
    pub alpha: Vec<f64>,
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    pub cam: Vec<f64>,
}

/// Named parameter blocks, in flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamBlock {
    Alpha,
    Delta,
    Gamma,
    Phi,
    Cam,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 5] = [
        ParamBlock::Alpha,
        ParamBlock::Delta,
        ParamBlock::Gamma,
        ParamBlock::Phi,
        ParamBlock::Cam,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamBlock::Alpha => "alpha",
            ParamBlock::Delta => "delta",
            ParamBlock::Gamma => "gamma",
            ParamBlock::Phi => "phi",
            ParamBlock::Cam => "cam",
        }
    }

    pub fn parse(name: &str) -> Result<ParamBlock> {
        match name {
            "alpha" => Ok(ParamBlock::Alpha),
            "delta" => Ok(ParamBlock::Delta),
            "gamma" => Ok(ParamBlock::Gamma),
            "phi" => Ok(ParamBlock::Phi),
            "cam" => Ok(ParamBlock::Cam),
            other => Err(Error::validation(format!("unknown parameter block '{other}'"))),
        }
    }
}

impl FaceParams {
    pub fn zeros(dims: &ThetaDims) -> FaceParams {
        FaceParams {
            alpha: vec![0.0; dims.k_shape],
            delta: vec![0.0; dims.k_expr],
            gamma: vec![0.0; dims.k_albedo],
            phi: vec![0.0; N_PHI],
            cam: vec![0.0; N_CAM],
        }
    }

    /// Zero parameters lit by a white light, so the mean face renders with
    /// its own albedo.
    pub fn neutral_lit(dims: &ThetaDims) -> FaceParams {
        let mut p = FaceParams::zeros(dims);
        for ch in 0..3 {
            p.phi[9 * ch] = WHITE_LIGHT_DC;
        }
        p
    }

    pub fn dims(&self) -> ThetaDims {
        ThetaDims {
            k_shape: self.alpha.len(),
            k_expr: self.delta.len(),
            k_albedo: self.gamma.len(),
        }
    }

    pub fn theta_dim(&self) -> usize {
        self.alpha.len() + self.delta.len() + self.gamma.len() + self.phi.len() + self.cam.len()
    }

    pub fn pitch(&self) -> f64 {
        self.cam[0]
    }

    pub fn yaw(&self) -> f64 {
        self.cam[1]
    }

    pub fn roll(&self) -> f64 {
        self.cam[2]
    }

    pub fn tx(&self) -> f64 {
        self.cam[3]
    }

    pub fn ty(&self) -> f64 {
        self.cam[4]
    }

    pub fn log_scale(&self) -> f64 {
        self.cam[5]
    }

    /// Check block lengths against a model's dimensions and that every
    /// entry is finite.
    pub fn check(&self, dims: &ThetaDims) -> Result<()> {
        if self.alpha.len() != dims.k_shape
            || self.delta.len() != dims.k_expr
            || self.gamma.len() != dims.k_albedo
            || self.phi.len() != N_PHI
            || self.cam.len() != N_CAM
        {
            return Err(Error::dimension(format!(
                "params blocks ({}, {}, {}, {}, {}) do not match model ({}, {}, {}, {N_PHI}, {N_CAM})",
                self.alpha.len(),
                self.delta.len(),
                self.gamma.len(),
                self.phi.len(),
                self.cam.len(),
                dims.k_shape,
                dims.k_expr,
                dims.k_albedo,
            )));
        }
        let finite = self
            .alpha
            .iter()
            .chain(&self.delta)
            .chain(&self.gamma)
            .chain(&self.phi)
            .chain(&self.cam)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::numeric("params contain non-finite values".to_string()));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.theta_dim());
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.delta);
        out.extend_from_slice(&self.gamma);
        out.extend_from_slice(&self.phi);
        out.extend_from_slice(&self.cam);
        out
    }

    pub fn from_flat(flat: &[f64], dims: &ThetaDims) -> Result<FaceParams> {
        if flat.len() != dims.theta_dim() {
            return Err(Error::dimension(format!(
                "flat vector has {} entries, expected {}",
                flat.len(),
                dims.theta_dim()
            )));
        }
        let (a, rest) = flat.split_at(dims.k_shape);
        let (d, rest) = rest.split_at(dims.k_expr);
        let (g, rest) = rest.split_at(dims.k_albedo);
        let (p, c) = rest.split_at(N_PHI);
        Ok(FaceParams {
            alpha: a.to_vec(),
            delta: d.to_vec(),
            gamma: g.to_vec(),
            phi: p.to_vec(),
            cam: c.to_vec(),
        })
    }

    /// Flat index range of a block.
    pub fn block_range(&self, block: ParamBlock) -> std::ops::Range<usize> {
        let ks = self.alpha.len();
        let ke = self.delta.len();
        let ka = self.gamma.len();
        match block {
            ParamBlock::Alpha => 0..ks,
            ParamBlock::Delta => ks..ks + ke,
            ParamBlock::Gamma => ks + ke..ks + ke + ka,
            ParamBlock::Phi => ks + ke + ka..ks + ke + ka + N_PHI,
            ParamBlock::Cam => ks + ke + ka + N_PHI..ks + ke + ka + N_PHI + N_CAM,
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("cannot serialize params: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<FaceParams> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("cannot parse params: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> ThetaDims {
        ThetaDims { k_shape: 80, k_expr: 64, k_albedo: 80 }
    }

    #[test]
    fn default_layout_has_257_entries() {
        let p = FaceParams::zeros(&dims());
        assert_eq!(p.theta_dim(), 257);
        assert_eq!(dims().theta_dim(), 257);
    }

    #[test]
    fn flat_round_trip_preserves_blocks() {
        let mut p = FaceParams::zeros(&dims());
        p.alpha[3] = 1.5;
        p.delta[0] = -0.25;
        p.gamma[79] = 0.125;
        p.phi[26] = 2.0;
        p.cam[5] = -0.5;
        let flat = p.to_flat();
        let q = FaceParams::from_flat(&flat, &dims()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn block_ranges_tile_the_flat_vector() {
        let p = FaceParams::zeros(&dims());
        let mut covered = 0;
        for block in ParamBlock::ALL {
            let r = p.block_range(block);
            assert_eq!(r.start, covered);
            covered = r.end;
        }
        assert_eq!(covered, p.theta_dim());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let mut p = FaceParams::neutral_lit(&dims());
        p.cam[1] = 0.1;
        p.save_json(&path).unwrap();
        let q = FaceParams::load_json(&path).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn check_rejects_non_finite() {
        let mut p = FaceParams::zeros(&dims());
        p.alpha[0] = f64::NAN;
        assert!(p.check(&dims()).is_err());
    }
}
