//! Flat `key = value` configuration with `#` comments.
//!
//! Every key has a default; unknown keys are an error. Dims-valued keys take
//! `XxYxZ` or a single number for all three axes.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::train::{PhantomSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    pub phantom: PhantomSpec,
    pub loc_arch: ArchSpec,
    pub seg_local: ArchSpec,
    pub seg_spatial: ArchSpec,
    pub model_loc: Option<PathBuf>,
    pub model_seg: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            phantom: PhantomSpec::default(),
            loc_arch: ArchSpec::localization(),
            seg_local: ArchSpec::scn_local(crate::arch::SCN_LABELS),
            seg_spatial: ArchSpec::scn_spatial(crate::arch::SCN_LABELS),
            model_loc: None,
            model_seg: None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "train.learning_rate",
    "train.beta1",
    "train.beta2",
    "train.epsilon",
    "train.iterations",
    "train.ema_decay",
    "train.seed",
    "train.lambda_local",
    "train.lambda_spatial",
    "aug.rotation_deg",
    "aug.translation_mm",
    "aug.scale_min",
    "aug.scale_max",
    "aug.elastic_grid",
    "aug.elastic_sigma_mm",
    "aug.intensity_shift",
    "aug.intensity_scale_min",
    "aug.intensity_scale_max",
    "phantom.size",
    "phantom.spacing_mm",
    "phantom.noise_hu",
    "phantom.distractors",
    "phantom.distractor_radius",
    "phantom.position_jitter",
    "phantom.radius_jitter",
    "grid.loc.spacing_mm",
    "grid.loc.min",
    "grid.loc.max",
    "grid.loc.multiple",
    "grid.seg.spacing_mm",
    "grid.seg.min",
    "grid.seg.max",
    "grid.seg.multiple",
    "grid.smoothing_sigma",
    "grid.max_pad",
    "arch.loc.levels",
    "arch.loc.filters",
    "arch.seg.local_levels",
    "arch.seg.local_filters",
    "arch.seg.spatial_levels",
    "arch.seg.spatial_filters",
    "arch.dropout_rate",
    "arch.leaky_alpha",
    "arch.head_kernel",
    "arch.bottleneck_block",
    "model.loc",
    "model.seg",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse `{v}`")))
}

fn dims(key: &str, v: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = v.split('x').map(str::trim).collect();
    match parts.as_slice() {
        [one] => Ok([num(key, one)?; 3]),
        [x, y, z] => Ok([num(key, x)?, num(key, y)?, num(key, z)?]),
        _ => Err(Error::Config(format!("{key}: expected N or XxYxZ, got `{v}`"))),
    }
}

impl Config {
    pub fn pipeline(&self) -> &PipelineConfig {
        &self.train.pipeline
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())?;
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let t = &mut self.train;
        let a = &mut t.augment;
        let p = &mut self.phantom;
        let g = &mut t.pipeline;
        match key {
            "train.learning_rate" => t.adam.learning_rate = num(key, v)?,
            "train.beta1" => t.adam.beta1 = num(key, v)?,
            "train.beta2" => t.adam.beta2 = num(key, v)?,
            "train.epsilon" => t.adam.epsilon = num(key, v)?,
            "train.iterations" => t.iterations = num(key, v)?,
            "train.ema_decay" => t.ema_decay = num(key, v)?,
            "train.seed" => t.seed = num(key, v)?,
            "train.lambda_local" => t.loss_weights.lambda_local = num(key, v)?,
            "train.lambda_spatial" => t.loss_weights.lambda_spatial = num(key, v)?,
            "aug.rotation_deg" => a.rotation_deg = num(key, v)?,
            "aug.translation_mm" => a.translation_mm = num(key, v)?,
            "aug.scale_min" => a.scale_range[0] = num(key, v)?,
            "aug.scale_max" => a.scale_range[1] = num(key, v)?,
            "aug.elastic_grid" => a.elastic_grid = num(key, v)?,
            "aug.elastic_sigma_mm" => a.elastic_sigma_mm = num(key, v)?,
            "aug.intensity_shift" => a.intensity_shift = num(key, v)?,
            "aug.intensity_scale_min" => a.intensity_scale_range[0] = num(key, v)?,
            "aug.intensity_scale_max" => a.intensity_scale_range[1] = num(key, v)?,
            "phantom.size" => p.dims = dims(key, v)?,
            "phantom.spacing_mm" => p.spacing = num(key, v)?,
            "phantom.noise_hu" => p.noise_sd = num(key, v)?,
            "phantom.distractors" => p.distractors = num(key, v)?,
            "phantom.distractor_radius" => p.distractor_radius = num(key, v)?,
            "phantom.position_jitter" => p.position_jitter = num(key, v)?,
            "phantom.radius_jitter" => p.radius_jitter = num(key, v)?,
            "grid.loc.spacing_mm" => g.loc_bounds.base_spacing = num(key, v)?,
            "grid.loc.min" => g.loc_bounds.min_dims = dims(key, v)?,
            "grid.loc.max" => g.loc_bounds.max_dims = dims(key, v)?,
            "grid.loc.multiple" => g.loc_bounds.multiple = num(key, v)?,
            "grid.seg.spacing_mm" => g.seg_bounds.base_spacing = num(key, v)?,
            "grid.seg.min" => g.seg_bounds.min_dims = dims(key, v)?,
            "grid.seg.max" => g.seg_bounds.max_dims = dims(key, v)?,
            "grid.seg.multiple" => g.seg_bounds.multiple = num(key, v)?,
            "grid.smoothing_sigma" => g.smoothing_sigma = num(key, v)?,
            "grid.max_pad" => g.max_pad = num(key, v)?,
            "arch.loc.levels" => self.loc_arch.levels = num(key, v)?,
            "arch.loc.filters" => self.loc_arch.filters = num(key, v)?,
            "arch.seg.local_levels" => self.seg_local.levels = num(key, v)?,
            "arch.seg.local_filters" => self.seg_local.filters = num(key, v)?,
            "arch.seg.spatial_levels" => self.seg_spatial.levels = num(key, v)?,
            "arch.seg.spatial_filters" => self.seg_spatial.filters = num(key, v)?,
            "arch.dropout_rate" | "arch.leaky_alpha" | "arch.head_kernel" | "arch.bottleneck_block" => {
                for s in [&mut self.loc_arch, &mut self.seg_local, &mut self.seg_spatial] {
                    match key {
                        "arch.dropout_rate" => s.dropout_rate = num(key, v)?,
                        "arch.leaky_alpha" => s.leaky_alpha = num(key, v)?,
                        "arch.head_kernel" => s.head_kernel = num(key, v)?,
                        _ => s.bottleneck_block = num(key, v)?,
                    }
                }
            }
            "model.loc" => self.model_loc = Some(PathBuf::from(v)),
            "model.seg" => self.model_seg = Some(PathBuf::from(v)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.phantom.validate()?;
        for s in [&self.loc_arch, &self.seg_local, &self.seg_spatial] {
            s.validate()?;
        }
        let a = &self.train.augment;
        let ordered = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1];
        if !ordered(a.scale_range) || !ordered(a.intensity_scale_range) {
            return Err(Error::Config("scale ranges need 0 < min <= max".into()));
        }
        for b in [&self.train.pipeline.loc_bounds, &self.train.pipeline.seg_bounds] {
            let ok = b.base_spacing > 0.0
                && b.multiple > 0
                && (0..3).all(|i| b.min_dims[i] <= b.max_dims[i] && b.max_dims[i] % b.multiple == 0);
            if !ok {
                return Err(Error::Config(format!("inconsistent grid bounds {b:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_values() {
        let c = Config::parse("# demo\ntrain.iterations = 12  # short\n\ngrid.seg.max = 64x64x96\narch.bottleneck_block=false\n").unwrap();
        assert_eq!(c.train.iterations, 12);
        assert_eq!(c.pipeline().seg_bounds.max_dims, [64, 64, 96]);
        assert!(!c.seg_spatial.bottleneck_block);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(Config::parse("train.iteration = 3").is_err());
        assert!(Config::parse("train.iterations").is_err());
        assert!(Config::parse("train.iterations = many").is_err());
        assert!(Config::parse("grid.loc.max = 81").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let mut c = Config::default();
        for k in KEYS {
            let v = match *k {
                "arch.bottleneck_block" => "true",
                k if k.ends_with(".min") || k.ends_with(".max") || k == "phantom.size" => continue,
                k if k.starts_with("model.") => "x.scnw",
                _ => "1",
            };
            c.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
