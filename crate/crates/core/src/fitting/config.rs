use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss weights, optimizer schedule and robust-loss settings for the
/// three-stage fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub lambda_d: f64,
    pub lambda_lm: f64,
    pub lambda_p: f64,
    pub lambda_e: f64,
    pub lambda_lap: f64,
    pub lambda_op: f64,
    pub lr_first: f64,
    pub lr_seq: f64,
    /// Multiplier on the stage learning rate for the per-vertex offsets.
    pub lr_offset_scale: f64,
    pub iters_landmark: usize,
    pub iters_stage2: usize,
    pub iters_stage3: usize,
    pub iters_seq: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Per-pixel depth residuals are clamped at this many meters.
    pub depth_trunc_m: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda_d: 2.0,
            lambda_lm: 100.0,
            lambda_p: 0.001,
            lambda_e: 20.0,
            lambda_lap: 20.0,
            lambda_op: 0.01,
            lr_first: 0.01,
            lr_seq: 0.005,
            lr_offset_scale: 0.001,
            iters_landmark: 100,
            iters_stage2: 500,
            iters_stage3: 500,
            iters_seq: 200,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            depth_trunc_m: 0.05,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda_d", self.lambda_d),
            ("lambda_lm", self.lambda_lm),
            ("lambda_p", self.lambda_p),
            ("lambda_e", self.lambda_e),
            ("lambda_lap", self.lambda_lap),
            ("lambda_op", self.lambda_op),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be >= 0, got {w}")));
            }
        }
        for (name, lr) in [
            ("lr_first", self.lr_first),
            ("lr_seq", self.lr_seq),
            ("lr_offset_scale", self.lr_offset_scale),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {lr}")));
            }
        }
        let iters = [
            ("iters_landmark", self.iters_landmark),
            ("iters_stage2", self.iters_stage2),
            ("iters_stage3", self.iters_stage3),
            ("iters_seq", self.iters_seq),
        ];
        for (name, n) in iters {
            if n == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::InvalidArgument("Adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) || !(self.depth_trunc_m > 0.0) {
            return Err(Error::InvalidArgument(
                "adam_eps and depth_trunc_m must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Sets a field from its snake_case name; used by flag and config-file
    /// parsing.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| {
            Error::InvalidArgument(format!("bad value {value:?} for {key}: {e}"))
        };
        let float = || value.trim().parse::<f64>().map_err(|e| bad(&e));
        let int = || value.trim().parse::<usize>().map_err(|e| bad(&e));
        match key.replace('-', "_").as_str() {
            "lambda_d" => self.lambda_d = float()?,
            "lambda_lm" => self.lambda_lm = float()?,
            "lambda_p" => self.lambda_p = float()?,
            "lambda_e" => self.lambda_e = float()?,
            "lambda_lap" => self.lambda_lap = float()?,
            "lambda_op" => self.lambda_op = float()?,
            "lr_first" => self.lr_first = float()?,
            "lr_seq" => self.lr_seq = float()?,
            "lr_offset_scale" => self.lr_offset_scale = float()?,
            "iters_landmark" => self.iters_landmark = int()?,
            "iters_stage2" => self.iters_stage2 = int()?,
            "iters_stage3" => self.iters_stage3 = int()?,
            "iters_seq" => self.iters_seq = int()?,
            "iters" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 4 {
                    return Err(Error::InvalidArgument(format!(
                        "iters takes four comma-separated counts, got {value:?}"
                    )));
                }
                let mut n = [0usize; 4];
                for (slot, p) in n.iter_mut().zip(parts) {
                    *slot = p.trim().parse().map_err(|e| bad(&e))?;
                }
                [
                    self.iters_landmark,
                    self.iters_stage2,
                    self.iters_stage3,
                    self.iters_seq,
                ] = n;
            }
            "adam_beta1" => self.adam_beta1 = float()?,
            "adam_beta2" => self.adam_beta2 = float()?,
            "adam_eps" => self.adam_eps = float()?,
            "depth_trunc_m" => self.depth_trunc_m = float()?,
            _ => return Err(Error::InvalidArgument(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_reference_schedule() {
        let c = FitConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (c.iters_landmark, c.iters_stage2, c.iters_stage3, c.iters_seq),
            (100, 500, 500, 200)
        );
        assert_eq!((c.lr_first, c.lr_seq), (0.01, 0.005));
    }

    #[test]
    fn set_by_name() {
        let mut c = FitConfig::default();
        c.set("lambda-d", "3.5").unwrap();
        c.set("iters", "1,2,3,4").unwrap();
        assert_eq!(c.lambda_d, 3.5);
        assert_eq!(c.iters_stage3, 3);
        assert!(c.set("lambda_x", "1").is_err());
        assert!(c.set("iters", "1,2").is_err());
        c.set("lambda_p", "-1").unwrap();
        assert!(c.validate().is_err());
    }
}
