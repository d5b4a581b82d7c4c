//! Layer graphs for the localization U-Net and the SpatialConfiguration-Net.
//!
//! A [`Network`] is a topologically ordered list of [`Node`]s plus the named
//! parameter tensors its convolutions reference. Each node records its channel
//! count and its resolution level (`log2` of the downsampling factor relative to
//! the network input), which is all the counters and the memory planner need.

mod checkpoint;
mod count;
mod exec;
mod memory;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{he_init, Tensor};

pub use checkpoint::{
    load_weights, load_weights_as, read_checkpoint, save_weights, write_checkpoint, WeightSet, EMA_PREFIX,
};
pub use count::{count_flops, count_parameters};
pub use exec::{backward, forward_arena, forward_naive, Outputs, Trace};
pub use memory::{plan_memory, replay_violations, Buffer, MemoryPlan};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    /// Zero-padded cubic convolution; `weight` and `bias` index [`Network::params`].
    Conv { weight: usize, bias: usize, kernel: usize },
    LeakyRelu { alpha: f32 },
    /// Identity at inference.
    Dropout { rate: f64 },
    /// 2×2×2 average pooling.
    AvgPool,
    /// ×2 trilinear upsampling.
    Upsample,
    Concat,
    Sigmoid,
    /// Softmax over channels.
    Softmax,
    Mul,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub channels: usize,
    pub level: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    params: Vec<Param>,
    outputs: Vec<(String, NodeId)>,
}

impl Network {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn set_param_tensors(&mut self, tensors: Vec<Tensor>) -> Result<()> {
        if tensors.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                tensors.len()
            )));
        }
        for (p, t) in self.params.iter_mut().zip(tensors) {
            if p.tensor.shape() != t.shape() {
                return Err(Error::Shape(format!("{}: {:?} vs {:?}", p.name, p.tensor.shape(), t.shape())));
            }
            p.tensor = t;
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.tensor)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.tensor)
    }

    pub fn outputs(&self) -> &[(String, NodeId)] {
        &self.outputs
    }

    pub fn output(&self, name: &str) -> Option<NodeId> {
        self.outputs.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn in_channels(&self) -> usize {
        self.nodes[0].channels
    }

    /// Spatial dims must be multiples of this.
    pub fn required_divisor(&self) -> usize {
        1 << self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Validates `[z, y, x]` input dims against the deepest pooling level.
    pub fn check_dims(&self, dims: [usize; 3]) -> Result<()> {
        let d = self.required_divisor();
        if dims.iter().any(|&n| n == 0 || n % d != 0) {
            return Err(Error::Divisibility { dims, divisor: d });
        }
        Ok(())
    }

    /// `[c, z, y, x]` shape of every node for a `[z, y, x]` input.
    pub fn shapes(&self, dims: [usize; 3]) -> Result<Vec<[usize; 4]>> {
        self.check_dims(dims)?;
        Ok(self
            .nodes
            .iter()
            .map(|n| {
                let s = 1usize << n.level;
                [n.channels, dims[0] / s, dims[1] / s, dims[2] / s]
            })
            .collect())
    }

    /// He-normal weights, zero biases, in parameter order.
    pub fn init_he(&mut self, rng: &mut Rng) {
        for p in &mut self.params {
            p.tensor = he_init(p.tensor.shape(), rng);
        }
    }
}

/// Hyperparameters of one U-Net.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub levels: usize,
    pub filters: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub dropout_rate: f64,
    pub leaky_alpha: f64,
    /// Kernel of the output convolution.
    pub head_kernel: usize,
    /// One extra two-convolution block at the deepest level.
    pub bottleneck_block: bool,
}

impl ArchSpec {
    pub fn new(levels: usize, filters: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            levels,
            filters,
            in_channels,
            out_channels,
            dropout_rate: 0.1,
            leaky_alpha: 0.1,
            head_kernel: 1,
            bottleneck_block: true,
        }
    }

    pub fn localization() -> Self {
        Self::new(5, 32, 1, 2)
    }

    pub fn scn_local(labels: usize) -> Self {
        Self::new(5, 32, 1, labels)
    }

    pub fn scn_spatial(labels: usize) -> Self {
        Self::new(4, 16, labels, labels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.levels == 0 || self.filters == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad("levels, filters and channel counts must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout rate must be in [0, 1)");
        }
        if !self.leaky_alpha.is_finite() || self.head_kernel % 2 == 0 {
            return bad("leaky alpha must be finite and the head kernel odd");
        }
        Ok(())
    }
}

/// Number of labels the SCN segments: background, liver, kidney, spleen, pancreas.
pub const SCN_LABELS: usize = 5;

#[derive(Default)]
struct Builder {
    nodes: Vec<Node>,
    params: Vec<Param>,
}

impl Builder {
    fn push(&mut self, op: Op, inputs: Vec<NodeId>, channels: usize, level: u32) -> NodeId {
        for &i in &inputs {
            assert!(i < self.nodes.len(), "inputs must precede their consumer");
        }
        self.nodes.push(Node { op, inputs, channels, level });
        self.nodes.len() - 1
    }

    fn unary(&mut self, op: Op, x: NodeId) -> NodeId {
        let (c, l) = (self.nodes[x].channels, self.nodes[x].level);
        self.push(op, vec![x], c, l)
    }

    fn conv(&mut self, name: &str, x: NodeId, out: usize, kernel: usize) -> NodeId {
        let (cin, level) = (self.nodes[x].channels, self.nodes[x].level);
        let weight = self.params.len();
        self.params.push(Param {
            name: format!("{name}.weight"),
            tensor: Tensor::zeros(&[out, cin, kernel, kernel, kernel]),
        });
        self.params.push(Param {
            name: format!("{name}.bias"),
            tensor: Tensor::zeros(&[out]),
        });
        self.push(Op::Conv { weight, bias: weight + 1, kernel }, vec![x], out, level)
    }

    /// conv 3³ → leaky ReLU → dropout, twice.
    fn block(&mut self, name: &str, mut x: NodeId, s: &ArchSpec) -> NodeId {
        for j in 0..2 {
            x = self.conv(&format!("{name}.conv{j}"), x, s.filters, 3);
            x = self.unary(Op::LeakyRelu { alpha: s.leaky_alpha as f32 }, x);
            x = self.unary(Op::Dropout { rate: s.dropout_rate }, x);
        }
        x
    }

    fn unet(&mut self, prefix: &str, x: NodeId, s: &ArchSpec) -> NodeId {
        let mut skips = Vec::with_capacity(s.levels);
        let mut h = x;
        for l in 0..s.levels {
            if l > 0 {
                h = self.unary(Op::AvgPool, h);
                self.nodes.last_mut().expect("just pushed").level += 1;
            }
            h = self.block(&format!("{prefix}down{l}"), h, s);
            skips.push(h);
        }
        if s.bottleneck_block {
            h = self.block(&format!("{prefix}bottom"), h, s);
        }
        for l in (0..s.levels - 1).rev() {
            h = self.unary(Op::Upsample, h);
            self.nodes.last_mut().expect("just pushed").level -= 1;
            let skip = skips[l];
            let c = self.nodes[skip].channels + self.nodes[h].channels;
            let level = self.nodes[skip].level;
            h = self.push(Op::Concat, vec![skip, h], c, level);
            h = self.block(&format!("{prefix}up{l}"), h, s);
        }
        self.conv(&format!("{prefix}head"), h, s.out_channels, s.head_kernel)
    }

    fn finish(self, outputs: Vec<(&str, NodeId)>) -> Network {
        Network {
            nodes: self.nodes,
            params: self.params,
            outputs: outputs.into_iter().map(|(n, id)| (n.to_string(), id)).collect(),
        }
    }
}

/// U-Net with constant width. The single output, `logits`, is the linear head.
///
/// Weights start at zero; call [`Network::init_he`] before training.
pub fn build_unet(spec: &ArchSpec) -> Result<Network> {
    spec.validate()?;
    let mut b = Builder::default();
    let x = b.push(Op::Input, vec![], spec.in_channels, 0);
    let out = b.unet("", x, spec);
    Ok(b.finish(vec![("logits", out)]))
}

/// SpatialConfiguration-Net with outputs `final` (probabilities), `local` and
/// `spatial` (logits at input resolution).
///
/// The spatial U-Net sees the sigmoid of the local logits pooled by 4; its
/// logits are upsampled back, and the two sigmoid responses are multiplied
/// before the channel softmax. Channel counts of both specs are forced to
/// `labels`.
pub fn build_scn(local: &ArchSpec, spatial: &ArchSpec, labels: usize) -> Result<Network> {
    if labels < 2 {
        return Err(Error::InvalidSpec("the SCN needs at least 2 labels".into()));
    }
    let local = ArchSpec { out_channels: labels, ..local.clone() };
    let spatial = ArchSpec { in_channels: labels, out_channels: labels, ..spatial.clone() };
    local.validate()?;
    spatial.validate()?;

    let mut b = Builder::default();
    let x = b.push(Op::Input, vec![], local.in_channels, 0);
    let local_logits = b.unet("local.", x, &local);
    let local_resp = b.unary(Op::Sigmoid, local_logits);
    let mut h = local_resp;
    for _ in 0..2 {
        h = b.unary(Op::AvgPool, h);
        b.nodes.last_mut().expect("just pushed").level += 1;
    }
    let coarse = b.unet("spatial.", h, &spatial);
    let mut up = coarse;
    for _ in 0..2 {
        up = b.unary(Op::Upsample, up);
        b.nodes.last_mut().expect("just pushed").level -= 1;
    }
    let spatial_resp = b.unary(Op::Sigmoid, up);
    let combined = b.push(Op::Mul, vec![local_resp, spatial_resp], labels, 0);
    let fin = b.unary(Op::Softmax, combined);
    Ok(b.finish(vec![("final", fin), ("local", local_logits), ("spatial", up)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_unet_emits_three_convolutions() {
        let spec = ArchSpec { head_kernel: 3, bottleneck_block: false, ..ArchSpec::new(1, 1, 1, 1) };
        let net = build_unet(&spec).unwrap();
        let convs = net.nodes().iter().filter(|n| matches!(n.op, Op::Conv { .. })).count();
        assert_eq!(convs, 3);
        assert_eq!(net.required_divisor(), 1);
    }

    #[test]
    fn graph_is_topological_and_params_used_once() {
        let net = build_scn(&ArchSpec::scn_local(5), &ArchSpec::scn_spatial(5), 5).unwrap();
        let mut uses = vec![0; net.params().len()];
        for (i, n) in net.nodes().iter().enumerate() {
            assert!(n.inputs.iter().all(|&j| j < i));
            if let Op::Conv { weight, bias, .. } = n.op {
                uses[weight] += 1;
                uses[bias] += 1;
            }
        }
        assert!(uses.iter().all(|&u| u == 1));
        let names: Vec<_> = net.outputs().iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["final", "local", "spatial"]);
        assert_eq!(net.required_divisor(), 32);
    }

    #[test]
    fn divisibility_is_enforced() {
        let net = build_unet(&ArchSpec::localization()).unwrap();
        assert!(net.check_dims([32, 32, 48]).is_ok());
        assert!(matches!(net.check_dims([33, 32, 32]), Err(Error::Divisibility { divisor: 16, .. })));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(build_unet(&ArchSpec::new(0, 4, 1, 1)).is_err());
        assert!(build_unet(&ArchSpec { head_kernel: 2, ..ArchSpec::new(2, 4, 1, 1) }).is_err());
    }
}
