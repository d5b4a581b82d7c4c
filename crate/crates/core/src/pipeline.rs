//! Two-stage inference: localize a region of interest on a coarse grid, segment
//! it on a fine grid, and map the labels back onto the input image.

use std::time::Instant;

use crate::arch::{count_flops, forward_arena, plan_memory, Network, Outputs};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::volume::{
    gaussian_smooth, localization_grid_with, normalize_intensities, resample, segmentation_grid_with, GridBounds,
    GridSpec, Interpolation, LabelVolume, Volume,
};

/// Smoothing applied before localization, in voxels of the input image.
pub const LOCALIZATION_SIGMA: f64 = 3.0;
/// Maximum ROI padding per face, in segmentation-grid voxels.
pub const MAX_ROI_PAD: usize = 16;
/// Padding value for normalized images sampled outside the source.
pub const IMAGE_PAD: f32 = -1.0;

/// Grid bounds and preprocessing constants of both stages.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub loc_bounds: GridBounds,
    pub seg_bounds: GridBounds,
    pub smoothing_sigma: f64,
    pub max_pad: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            loc_bounds: GridBounds::localization(),
            seg_bounds: GridBounds::segmentation(),
            smoothing_sigma: LOCALIZATION_SIGMA,
            max_pad: MAX_ROI_PAD,
        }
    }
}

/// Inclusive `[x, y, z]` voxel box in the `reference` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Roi {
    pub min: [usize; 3],
    pub max: [usize; 3],
    pub reference: GridSpec,
}

impl Roi {
    pub fn full(reference: &GridSpec) -> Self {
        Self {
            min: [0; 3],
            max: reference.dims.map(|d| d - 1),
            reference: reference.clone(),
        }
    }

    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        let p = [x, y, z];
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }
}

/// Wall time, FLOPs and arena size of one network stage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageStats {
    pub seconds: f64,
    pub flops: u64,
    pub peak_arena_bytes: usize,
    /// `[z, y, x]` network input dims.
    pub dims: [usize; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunStats {
    pub localize: StageStats,
    pub segment: StageStats,
    pub total_seconds: f64,
    /// Maximum over both stages' memory plans.
    pub peak_arena_bytes: usize,
    pub flops: u64,
}

impl RunStats {
    /// Tab-separated `key\tvalue` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (name, st) in [("localize", &self.localize), ("segment", &self.segment)] {
            s += &format!("{name}_seconds\t{:.6}\n", st.seconds);
            s += &format!("{name}_flops\t{}\n", st.flops);
            s += &format!("{name}_peak_arena_bytes\t{}\n", st.peak_arena_bytes);
            s += &format!("{name}_dims\t{}x{}x{}\n", st.dims[0], st.dims[1], st.dims[2]);
        }
        s += &format!("total_seconds\t{:.6}\n", self.total_seconds);
        s += &format!("flops\t{}\n", self.flops);
        s += &format!("peak_arena_bytes\t{}\n", self.peak_arena_bytes);
        s
    }
}

/// Runs `net` through the arena executor and returns its scoring output:
/// `final` when present, else `logits`.
fn run(net: &Network, input: &Tensor) -> Result<(Tensor, StageStats)> {
    let t0 = Instant::now();
    let [_, z, y, x] = input.dims4()?;
    let plan = plan_memory(net, [z, y, x])?;
    let (out, peak): (Outputs, usize) = forward_arena(net, &plan, input)?;
    let scores = out
        .get("final")
        .or_else(|| out.get("logits"))
        .ok_or_else(|| Error::InvalidSpec("network has neither a final nor a logits output".into()))?
        .clone();
    let stats = StageStats {
        seconds: t0.elapsed().as_secs_f64(),
        flops: count_flops(net, [z, y, x])?,
        peak_arena_bytes: peak,
        dims: [z, y, x],
    };
    Ok((scores, stats))
}

/// Box of the foreground (label > 0) of a coarse prediction, expressed in
/// `reference` voxels: the foreground's outer physical extent, shrunk to the
/// reference voxels whose centres it encloses. Empty foreground gives the full
/// reference extent.
pub fn roi_from_prediction(coarse: &LabelVolume, reference: &GridSpec) -> Roi {
    let Some((lo, hi)) = bounding_box(coarse) else {
        return Roi::full(reference);
    };
    let mut c_lo = [f64::INFINITY; 3];
    let mut c_hi = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let idx = [0, 1, 2].map(|a| {
            if corner >> a & 1 == 0 {
                lo[a] as f64 - 0.5
            } else {
                hi[a] as f64 + 0.5
            }
        });
        let c = reference.physical_to_index(coarse.grid().index_to_physical(idx));
        for a in 0..3 {
            c_lo[a] = c_lo[a].min(c[a]);
            c_hi[a] = c_hi[a].max(c[a]);
        }
    }
    const TOL: f64 = 1e-6;
    let mut roi = Roi::full(reference);
    for a in 0..3 {
        let n = reference.dims[a] as f64;
        let mn = (c_lo[a] + 0.5 - TOL).ceil().clamp(0.0, n - 1.0);
        let mx = (c_hi[a] - 0.5 + TOL).floor().clamp(0.0, n - 1.0);
        if mn > mx {
            return Roi::full(reference);
        }
        roi.min[a] = mn as usize;
        roi.max[a] = mx as usize;
    }
    roi
}

fn bounding_box(labels: &LabelVolume) -> Option<([usize; 3], [usize; 3])> {
    let [nx, ny, _] = labels.dims();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0; 3];
    let mut any = false;
    for (i, &l) in labels.data().iter().enumerate() {
        if l == 0 {
            continue;
        }
        any = true;
        let p = [i % nx, (i / nx) % ny, i / (nx * ny)];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    any.then_some((lo, hi))
}

/// Normalized, smoothed image on the localization grid.
pub fn localization_input(vol: &Volume, cfg: &PipelineConfig) -> Volume {
    localization_input_normalized(&normalize_intensities(vol), cfg)
}

/// [`localization_input`] for an image that is already normalized.
pub fn localization_input_normalized(norm: &Volume, cfg: &PipelineConfig) -> Volume {
    let smoothed = gaussian_smooth(norm, cfg.smoothing_sigma);
    let grid = localization_grid_with(norm.grid(), &cfg.loc_bounds);
    resample(&smoothed, &grid, Interpolation::Linear, IMAGE_PAD)
}

fn localize_stats(vol: &Volume, net: &Network, cfg: &PipelineConfig) -> Result<(Roi, StageStats)> {
    let coarse = localization_input(vol, cfg);
    let (scores, stats) = run(net, &coarse.to_tensor())?;
    let pred = LabelVolume::from_argmax(&scores, coarse.grid().clone())?;
    Ok((roi_from_prediction(&pred, vol.grid()), stats))
}

/// Predicts the region of interest with the localization network.
pub fn localize(vol: &Volume, net: &Network) -> Result<Roi> {
    Ok(localize_stats(vol, net, &PipelineConfig::default())?.0)
}

/// Tight box around every labelled voxel.
pub fn roi_from_labels(gt: &LabelVolume) -> Result<Roi> {
    let (min, max) = bounding_box(gt).ok_or(Error::EmptyLabels)?;
    Ok(Roi { min, max, reference: gt.grid().clone() })
}

pub enum PadMode<'a> {
    /// Each face grows by an independent uniform draw from `0..=max`.
    Train(&'a mut Rng),
    /// Each face grows by the maximum.
    Inference,
}

/// Grows `roi` by up to 16 segmentation-grid (2 mm) voxels per face, converted
/// to reference voxels and clamped to the image.
pub fn pad_roi(roi: &Roi, mode: PadMode<'_>) -> Roi {
    pad_roi_with(roi, mode, GridBounds::segmentation().base_spacing, MAX_ROI_PAD)
}

/// [`pad_roi`] with an explicit pad unit (mm) and maximum.
pub fn pad_roi_with(roi: &Roi, mode: PadMode<'_>, seg_spacing: f64, max_pad: usize) -> Roi {
    let mut draw: Box<dyn FnMut() -> usize + '_> = match mode {
        PadMode::Train(rng) => Box::new(move || rng.int_inclusive(0, max_pad as i64) as usize),
        PadMode::Inference => Box::new(move || max_pad),
    };
    let r = &roi.reference;
    let mut out = roi.clone();
    for a in 0..3 {
        let to_ref = |pad: usize| (pad as f64 * seg_spacing / r.spacing[a] - 1e-9).ceil() as usize;
        let lo = to_ref(draw());
        let hi = to_ref(draw());
        out.min[a] = roi.min[a].saturating_sub(lo);
        out.max[a] = (roi.max[a] + hi).min(r.dims[a] - 1);
    }
    out
}

fn segment_stats(vol: &Volume, roi: &Roi, net: &Network, cfg: &PipelineConfig) -> Result<(LabelVolume, StageStats)> {
    if !roi.reference.congruent(vol.grid(), 1e-6) {
        return Err(Error::GridMismatch("ROI reference grid differs from the image grid".into()));
    }
    let grid = segmentation_grid_with(roi, &cfg.seg_bounds);
    let fine = resample(&normalize_intensities(vol), &grid, Interpolation::Linear, IMAGE_PAD);
    let (scores, stats) = run(net, &fine.to_tensor())?;
    let pred = LabelVolume::from_argmax(&scores, grid)?;
    let mut out = resample(&pred, vol.grid(), Interpolation::Nearest, 0);
    let [nx, ny, _] = out.dims();
    for (i, l) in out.data_mut().iter_mut().enumerate() {
        if !roi.contains(i % nx, (i / nx) % ny, i / (nx * ny)) {
            *l = 0;
        }
    }
    Ok((out.with_grid(vol.grid().clone())?, stats))
}

/// Segments the region `roi` of `vol` with the SCN and returns labels on the
/// input grid (background outside the region).
pub fn segment(vol: &Volume, roi: &Roi, net: &Network) -> Result<LabelVolume> {
    Ok(segment_stats(vol, roi, net, &PipelineConfig::default())?.0)
}

/// Localize → pad (inference) → segment.
pub fn infer(vol: &Volume, loc_net: &Network, seg_net: &Network) -> Result<(LabelVolume, RunStats)> {
    infer_with(vol, loc_net, seg_net, &PipelineConfig::default())
}

pub fn infer_with(vol: &Volume, loc_net: &Network, seg_net: &Network, cfg: &PipelineConfig) -> Result<(LabelVolume, RunStats)> {
    let t0 = Instant::now();
    let (roi, loc) = localize_stats(vol, loc_net, cfg)?;
    let roi = pad_roi_with(&roi, PadMode::Inference, cfg.seg_bounds.base_spacing, cfg.max_pad);
    let (labels, seg) = segment_stats(vol, &roi, seg_net, cfg)?;
    let stats = RunStats {
        total_seconds: t0.elapsed().as_secs_f64(),
        peak_arena_bytes: loc.peak_arena_bytes.max(seg.peak_arena_bytes),
        flops: loc.flops + seg.flops,
        localize: loc,
        segment: seg,
    };
    Ok((labels, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_unet, ArchSpec};

    #[test]
    fn single_coarse_voxel_maps_to_its_footprint() {
        let reference = GridSpec::new([192; 3], [1.0; 3]);
        let coarse_grid = crate::volume::localization_grid(&Volume::filled(reference.clone(), 0.0));
        assert_eq!((coarse_grid.dims, coarse_grid.spacing), ([32; 3], [6.0; 3]));
        let mut coarse = LabelVolume::filled(coarse_grid, 0);
        coarse.set(5, 5, 5, 1);
        let roi = roi_from_prediction(&coarse, &reference);
        assert_eq!((roi.min, roi.max), ([30; 3], [35; 3]));
    }

    #[test]
    fn degenerate_predictions_give_the_full_image() {
        let reference = GridSpec::new([20, 30, 40], [1.5, 1.0, 2.0]);
        let coarse_grid = crate::volume::localization_grid(&Volume::filled(reference.clone(), 0.0));
        let full = Roi::full(&reference);
        assert_eq!(roi_from_prediction(&LabelVolume::filled(coarse_grid.clone(), 0), &reference), full);
        assert_eq!(roi_from_prediction(&LabelVolume::filled(coarse_grid, 1), &reference), full);
    }

    #[test]
    fn label_boxes() {
        let g = GridSpec::new([10, 10, 10], [1.0; 3]);
        let mut l = LabelVolume::filled(g, 0);
        assert!(matches!(roi_from_labels(&l), Err(Error::EmptyLabels)));
        l.set(5, 5, 5, 2);
        let r = roi_from_labels(&l).unwrap();
        assert_eq!((r.min, r.max), ([5; 3], [5; 3]));
        l.set(1, 2, 3, 1);
        l.set(7, 5, 4, 4);
        let r = roi_from_labels(&l).unwrap();
        assert_eq!((r.min, r.max), ([1, 2, 3], [7, 5, 5]));
    }

    #[test]
    fn padding_converts_units_and_clamps() {
        let g = GridSpec::new([100, 100, 100], [1.0; 3]);
        let roi = Roi { min: [10, 40, 60], max: [20, 50, 80], reference: g.clone() };
        let p = pad_roi(&roi, PadMode::Inference);
        assert_eq!((p.min, p.max), ([0, 8, 28], [52, 82, 99]));
        let full = Roi::full(&g);
        assert_eq!(pad_roi(&full, PadMode::Inference), full);
        let a = pad_roi(&roi, PadMode::Train(&mut Rng::new(4)));
        let b = pad_roi(&roi, PadMode::Train(&mut Rng::new(4)));
        assert_eq!(a, b);
        assert!((0..3).all(|i| a.min[i] <= roi.min[i] && a.max[i] >= roi.max[i]));
    }

    #[test]
    fn constant_network_fills_the_roi() {
        let g = GridSpec::new([30, 24, 20], [2.0, 2.5, 3.0]).with_origin([5.0, -3.0, 1.0]);
        let vol = Volume::new(g.clone(), (0..g.len()).map(|i| (i % 97) as f32 * 10.0).collect()).unwrap();
        let mut net = build_unet(&ArchSpec::new(2, 2, 1, 5)).unwrap();
        net.param_mut("head.bias").unwrap().data_mut()[2] = 1.0;
        let roi = Roi { min: [3, 4, 5], max: [20, 15, 12], reference: g.clone() };
        let out = segment(&vol, &roi, &net).unwrap();
        assert_eq!(out.grid(), &g);
        let [nx, ny, _] = g.dims;
        for (i, &l) in out.data().iter().enumerate() {
            let inside = roi.contains(i % nx, (i / nx) % ny, i / (nx * ny));
            assert_eq!(l, if inside { 2 } else { 0 });
        }
    }
}
