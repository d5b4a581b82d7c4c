//! Training: Adam + EMA over augmented samples, one sample per step.

mod augment;
mod optim;
mod phantom;

use std::io::Write;
use std::path::Path;

use crate::arch::{backward, forward_naive, write_checkpoint, Network, EMA_PREFIX, SCN_LABELS};
use crate::error::{Error, Result};
use crate::losses::{generalized_dice_loss, scn_loss, LossWeights};
use crate::pipeline::{localization_input_normalized, pad_roi_with, roi_from_labels, PadMode, PipelineConfig, Roi, IMAGE_PAD};
use crate::rng::Rng;
use crate::tensor::{softmax_channels, softmax_channels_backward, Tensor};
use crate::volume::{
    normalize_intensities, resample, segmentation_grid_with, Interpolation, LabelVolume, Volume,
};

pub use augment::{apply_transform, augment, AugmentParams, ElasticField, SpatialTransform};
pub use optim::{adam_step, ema_update, AdamConfig, AdamState};
pub use phantom::{generate_phantom, Ellipsoid, OrganSpec, PhantomSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub iterations: usize,
    pub loss_weights: LossWeights,
    pub ema_decay: f64,
    pub seed: u64,
    pub augment: AugmentParams,
    pub pipeline: PipelineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            iterations: 1000,
            loss_weights: LossWeights::default(),
            ema_decay: 0.999,
            seed: 0,
            augment: AugmentParams::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(a.learning_rate >= 0.0 && a.learning_rate.is_finite()) || !unit(a.beta1) || !unit(a.beta2) {
            return Err(Error::InvalidSpec("need lr >= 0 and betas in [0, 1)".into()));
        }
        if self.iterations == 0 || !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidSpec("need iterations >= 1 and ema decay in [0, 1]".into()));
        }
        self.loss_weights.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    /// Binary foreground/background Dice on the coarse grid.
    Localization,
    /// Dice + two cross-entropy terms on the ROI crop.
    Segmentation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Volume,
    pub labels: LabelVolume,
}

/// One line of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub dice: f64,
    pub ce_local: f64,
    pub ce_spatial: f64,
}

impl LossRecord {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}",
            self.iteration, self.loss, self.dice, self.ce_local, self.ce_spatial
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// EMA weights in parameter order.
    pub ema: Vec<Tensor>,
    pub losses: Vec<LossRecord>,
}

/// Network input and target for one augmented sample.
pub fn prepare(sample: &Sample, objective: Objective, cfg: &TrainConfig, rng: &mut Rng) -> Result<(Tensor, LabelVolume)> {
    let norm = normalize_intensities(&sample.image);
    let (img, lab) = augment(&norm, &sample.labels, &cfg.augment, rng);
    match objective {
        Objective::Localization => {
            let coarse = localization_input_normalized(&img, &cfg.pipeline);
            let fg = lab.map(|l| (l > 0) as u8);
            let target = resample(&fg, coarse.grid(), Interpolation::Nearest, 0);
            Ok((coarse.to_tensor(), target))
        }
        Objective::Segmentation => {
            let roi = roi_from_labels(&lab).unwrap_or_else(|_| Roi::full(lab.grid()));
            let p = &cfg.pipeline;
            let roi = pad_roi_with(&roi, PadMode::Train(rng), p.seg_bounds.base_spacing, p.max_pad);
            let grid = segmentation_grid_with(&roi, &p.seg_bounds);
            let fine = resample(&img, &grid, Interpolation::Linear, IMAGE_PAD);
            let target = resample(&lab, &grid, Interpolation::Nearest, 0);
            Ok((fine.to_tensor(), target))
        }
    }
}

/// Loss value and output-node gradient seeds for one forward trace.
fn loss_and_seeds(
    net: &Network,
    outputs: &crate::arch::Trace,
    target: &LabelVolume,
    objective: Objective,
    w: LossWeights,
) -> Result<(LossRecord, Vec<(usize, Tensor)>)> {
    let value = |name: &str| -> Result<(usize, &Tensor)> {
        let id = net
            .output(name)
            .ok_or_else(|| Error::InvalidSpec(format!("network has no `{name}` output")))?;
        Ok((id, &outputs.values[id]))
    };
    match objective {
        Objective::Localization => {
            let (id, logits) = value("logits")?;
            let gt = target.one_hot(logits.shape()[0])?;
            let prob = softmax_channels(logits)?;
            let (dice, g) = generalized_dice_loss(&gt, &prob)?;
            let seed = softmax_channels_backward(&prob, &g)?;
            let rec = LossRecord { iteration: 0, loss: dice, dice, ce_local: 0.0, ce_spatial: 0.0 };
            Ok((rec, vec![(id, seed)]))
        }
        Objective::Segmentation => {
            let (fid, fin) = value("final")?;
            let (lid, local) = value("local")?;
            let (sid, spatial) = value("spatial")?;
            let gt = target.one_hot(fin.shape()[0])?;
            let l = scn_loss(&gt, fin, local, spatial, w)?;
            let rec = LossRecord { iteration: 0, loss: l.total, dice: l.dice, ce_local: l.ce_local, ce_spatial: l.ce_spatial };
            Ok((rec, vec![(fid, l.grad_final), (lid, l.grad_local), (sid, l.grad_spatial)]))
        }
    }
}

/// Trains `net` in place. Every iteration draws from its own forked stream, so
/// results depend only on the seed. Loss lines go to `log` as they happen.
pub fn train_model(
    dataset: &[Sample],
    net: &mut Network,
    cfg: &TrainConfig,
    objective: Objective,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if objective == Objective::Segmentation && net.output("final").map(|id| net.nodes()[id].channels) != Some(SCN_LABELS) {
        return Err(Error::InvalidSpec("segmentation training needs an SCN with 5 labels".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut params = net.param_tensors();
    let mut ema = params.clone();
    let mut state = AdamState::new(&params);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let mut rng = root.fork(it as u64);
        let sample = &dataset[rng.index(dataset.len())];
        let (input, target) = prepare(sample, objective, cfg, &mut rng)?;
        let trace = forward_naive(net, &params, &input, Some(&mut rng))?;
        let (mut rec, seeds) = loss_and_seeds(net, &trace, &target, objective, cfg.loss_weights)?;
        rec.iteration = it;
        if !rec.loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, detail: rec.to_line() });
        }
        let grads = backward(net, &params, &trace, seeds)?;
        adam_step(&mut params, &grads, &mut state, &cfg.adam)?;
        ema_update(&mut ema, &params, cfg.ema_decay)?;
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", rec.to_line()).map_err(|e| Error::io("loss log", e))?;
        }
        losses.push(rec);
    }
    net.set_param_tensors(params)?;
    Ok(TrainOutcome { ema, losses })
}

/// Raw weights under their own names followed by `ema.`-prefixed copies.
pub fn save_training_checkpoint(net: &Network, ema: &[Tensor], path: &Path) -> Result<()> {
    if ema.len() != net.params().len() {
        return Err(Error::Shape("EMA tensor count differs from the network".into()));
    }
    let mut t: Vec<(String, &Tensor)> = net.params().iter().map(|p| (p.name.clone(), &p.tensor)).collect();
    t.extend(net.params().iter().zip(ema).map(|(p, e)| (format!("{EMA_PREFIX}{}", p.name), e)));
    write_checkpoint(path, &t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_scn, build_unet, ArchSpec};

    fn data(n: usize) -> Vec<Sample> {
        let spec = PhantomSpec { dims: [16; 3], spacing: 4.0, ..PhantomSpec::default() };
        (0..n)
            .map(|i| {
                let (image, labels) = generate_phantom(&spec, &mut Rng::new(i as u64)).unwrap();
                Sample { image, labels }
            })
            .collect()
    }

    fn small_scn() -> Network {
        let mut net = build_scn(&ArchSpec::new(2, 2, 1, 5), &ArchSpec::new(2, 2, 5, 5), 5).unwrap();
        net.init_he(&mut Rng::new(1));
        net
    }

    fn cfg(iterations: usize) -> TrainConfig {
        TrainConfig { iterations, seed: 3, ..TrainConfig::default() }
    }

    #[test]
    fn zero_rate_keeps_weights() {
        let mut net = small_scn();
        let before = net.clone();
        let mut c = cfg(3);
        c.adam.learning_rate = 0.0;
        train_model(&data(2), &mut net, &c, Objective::Segmentation, None).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let d = data(2);
        let mut a = small_scn();
        let mut b = small_scn();
        let ra = train_model(&d, &mut a, &cfg(3), Objective::Segmentation, None).unwrap();
        let rb = train_model(&d, &mut b, &cfg(3), Objective::Segmentation, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.ema, rb.ema);
        assert_eq!(ra.losses, rb.losses);
    }

    #[test]
    fn localization_objective_logs_every_step() {
        let mut net = build_unet(&ArchSpec::new(2, 2, 1, 2)).unwrap();
        net.init_he(&mut Rng::new(2));
        let mut log = Vec::new();
        let out = train_model(&data(1), &mut net, &cfg(4), Objective::Localization, Some(&mut log)).unwrap();
        let text = String::from_utf8(log).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split('\t').count() == 5));
        assert!(out.losses.iter().all(|r| (0.0..=1.0).contains(&r.loss)));
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(train_model(&[], &mut small_scn(), &cfg(1), Objective::Segmentation, None).is_err());
    }
}
