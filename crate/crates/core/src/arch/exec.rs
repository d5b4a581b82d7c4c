//! Graph execution: a naive tensor-per-node path (training, gradients) and an
//! arena path driven by a [`MemoryPlan`] (inference).

use super::{MemoryPlan, Network, NodeId, Op};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{self, ConvGeometry, Real, Tensor};

/// Named network outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs<T = f32> {
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T> Outputs<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Every node's value from a naive forward pass, plus the dropout masks drawn.
#[derive(Clone, Debug)]
pub struct Trace<T = f32> {
    pub values: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
}

impl<T: Real> Trace<T> {
    pub fn outputs(&self, net: &Network) -> Outputs<T> {
        Outputs {
            tensors: net
                .outputs()
                .iter()
                .map(|(n, id)| (n.clone(), self.values[*id].clone()))
                .collect(),
        }
    }
}

fn input_dims<T: Real>(net: &Network, input: &Tensor<T>) -> Result<[usize; 3]> {
    let [c, z, y, x] = input.dims4()?;
    if c != net.in_channels() {
        return Err(Error::Shape(format!("network expects {} input channels, got {c}", net.in_channels())));
    }
    Ok([z, y, x])
}

fn geometry(net: &Network, node: usize, kernel: usize, dims: [usize; 4]) -> ConvGeometry {
    let n = &net.nodes()[node];
    ConvGeometry {
        in_channels: net.nodes()[n.inputs[0]].channels,
        out_channels: n.channels,
        kernel,
        dims: [dims[1], dims[2], dims[3]],
    }
}

/// Allocating forward pass. With `rng` the dropout layers draw training masks
/// in node order; without it they are the identity.
pub fn forward_naive<T: Real>(
    net: &Network,
    params: &[Tensor<T>],
    input: &Tensor<T>,
    mut rng: Option<&mut Rng>,
) -> Result<Trace<T>> {
    let shapes = net.shapes(input_dims(net, input)?)?;
    let mut values: Vec<Tensor<T>> = Vec::with_capacity(shapes.len());
    let mut masks = Vec::with_capacity(shapes.len());
    for (i, node) in net.nodes().iter().enumerate() {
        let x = |k: usize| &values[node.inputs[k]];
        let mut mask = None;
        let v = match node.op {
            Op::Input => input.clone(),
            Op::Conv { weight, bias, .. } => tensor::conv3d(x(0), &params[weight], &params[bias])?,
            Op::LeakyRelu { alpha } => tensor::leaky_relu(x(0), T::of(alpha as f64)),
            Op::Dropout { rate } => match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let m = tensor::dropout_mask::<T>(x(0).len(), rate, r);
                    let mut out = x(0).clone();
                    out.data_mut().iter_mut().zip(&m).for_each(|(v, &k)| *v *= k);
                    mask = Some(m);
                    out
                }
                _ => x(0).clone(),
            },
            Op::AvgPool => tensor::avg_pool3d(x(0))?,
            Op::Upsample => tensor::upsample_trilinear(x(0))?,
            Op::Concat => tensor::concat_channels(x(0), x(1))?,
            Op::Sigmoid => tensor::sigmoid(x(0)),
            Op::Softmax => tensor::softmax_channels(x(0))?,
            Op::Mul => tensor::elementwise_mul(x(0), x(1))?,
        };
        debug_assert_eq!(v.shape(), &shapes[i]);
        values.push(v);
        masks.push(mask);
    }
    Ok(Trace { values, masks })
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse pass over a [`Trace`]. `seeds` are gradients of the loss with
/// respect to output nodes; returns one gradient per parameter.
pub fn backward<T: Real>(
    net: &Network,
    params: &[Tensor<T>],
    trace: &Trace<T>,
    seeds: Vec<(NodeId, Tensor<T>)>,
) -> Result<Vec<Tensor<T>>> {
    let nodes = net.nodes();
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
    for (id, g) in seeds {
        if g.shape() != trace.values[id].shape() {
            return Err(Error::Shape(format!("seed gradient for node {id} has shape {:?}", g.shape())));
        }
        accumulate(&mut grads[id], g)?;
    }
    let mut pgrads: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    for i in (0..nodes.len()).rev() {
        let Some(g) = grads[i].take() else { continue };
        let node = &nodes[i];
        let x = |k: usize| &trace.values[node.inputs[k]];
        let needs = |k: usize| !matches!(nodes[node.inputs[k]].op, Op::Input);
        let out = &trace.values[i];
        let gin: Vec<Tensor<T>> = match node.op {
            Op::Input => vec![],
            Op::Conv { weight, bias, .. } => {
                let d = x(0).dims4()?;
                let geo = geometry(net, i, params[weight].shape()[2], d);
                let (gw, gb) = tensor::conv3d_backward_params(x(0).data(), g.data(), geo);
                pgrads[weight].add_assign(&Tensor::new(params[weight].shape().to_vec(), gw)?)?;
                pgrads[bias].add_assign(&Tensor::new(params[bias].shape().to_vec(), gb)?)?;
                if needs(0) {
                    let mut gi = Tensor::zeros(x(0).shape());
                    tensor::conv3d_backward_input_into(g.data(), params[weight].data(), geo, gi.data_mut());
                    vec![gi]
                } else {
                    vec![]
                }
            }
            Op::LeakyRelu { alpha } => vec![tensor::leaky_relu_backward(x(0), &g, T::of(alpha as f64))],
            Op::Dropout { .. } => match &trace.masks[i] {
                Some(m) => {
                    let mut gi = g;
                    gi.data_mut().iter_mut().zip(m).for_each(|(v, &k)| *v *= k);
                    vec![gi]
                }
                None => vec![g],
            },
            Op::AvgPool => vec![tensor::avg_pool3d_backward(&g, x(0).shape())?],
            Op::Upsample => vec![tensor::upsample_trilinear_backward(&g, x(0).shape())?],
            Op::Concat => {
                let (a, b) = tensor::concat_channels_backward(&g, x(0).shape()[0])?;
                vec![a, b]
            }
            Op::Sigmoid => vec![tensor::sigmoid_backward(out, &g)],
            Op::Softmax => vec![tensor::softmax_channels_backward(out, &g)?],
            Op::Mul => {
                let (a, b) = tensor::elementwise_mul_backward(x(0), x(1), &g)?;
                vec![a, b]
            }
        };
        for (k, gk) in gin.into_iter().enumerate() {
            accumulate(&mut grads[node.inputs[k]], gk)?;
        }
    }
    Ok(pgrads)
}

/// Splits `arena` into the mutable output range and shared views of the rest.
fn split(arena: &mut [f32], out: std::ops::Range<usize>) -> (&[f32], &mut [f32], &[f32], usize) {
    let (left, rest) = arena.split_at_mut(out.start);
    let (o, right) = rest.split_at_mut(out.end - out.start);
    (left, o, right, out.end)
}

fn view<'a>(left: &'a [f32], right: &'a [f32], right_start: usize, r: std::ops::Range<usize>) -> &'a [f32] {
    if r.end <= left.len() {
        &left[r]
    } else {
        assert!(r.start >= right_start, "planned input overlaps the output buffer");
        &right[r.start - right_start..r.end - right_start]
    }
}

/// Inference through a single arena laid out by `plan`; returns the outputs
/// and the arena size in bytes. Bit-identical to [`forward_naive`] without
/// dropout, since each node runs the same slice kernel.
pub fn forward_arena(net: &Network, plan: &MemoryPlan, input: &Tensor) -> Result<(Outputs, usize)> {
    let dims = input_dims(net, input)?;
    let shapes = net.shapes(dims)?;
    if plan.buffers.len() != shapes.len()
        || plan.buffers.iter().zip(&shapes).any(|(b, s)| b.size != s.iter().product::<usize>() * 4)
    {
        return Err(Error::Shape("memory plan does not match the input dims".into()));
    }
    let mut arena = vec![0f32; plan.peak_bytes / 4];
    let params = net.params();
    for (i, node) in net.nodes().iter().enumerate() {
        let (left, out, right, rs) = split(&mut arena, plan.range(i));
        let x = |k: usize| view(left, right, rs, plan.range(node.inputs[k]));
        let d = |k: usize| shapes[node.inputs[k]];
        match node.op {
            Op::Input => out.copy_from_slice(input.data()),
            Op::Conv { weight, bias, kernel } => {
                let geo = geometry(net, i, kernel, d(0));
                tensor::conv3d_forward_into(x(0), params[weight].tensor.data(), params[bias].tensor.data(), geo, out)
            }
            Op::LeakyRelu { alpha } => tensor::leaky_relu_into(x(0), alpha, out),
            Op::Dropout { .. } => out.copy_from_slice(x(0)),
            Op::AvgPool => tensor::avg_pool3d_into(x(0), d(0), out),
            Op::Upsample => tensor::upsample_trilinear_into(x(0), d(0), out),
            Op::Concat => tensor::concat_into(x(0), x(1), out),
            Op::Sigmoid => tensor::sigmoid_into(x(0), out),
            Op::Softmax => tensor::softmax_channels_into(x(0), d(0), out),
            Op::Mul => tensor::mul_into(x(0), x(1), out),
        }
    }
    let tensors = net
        .outputs()
        .iter()
        .map(|(n, id)| Ok((n.clone(), Tensor::new(shapes[*id].to_vec(), arena[plan.range(*id)].to_vec())?)))
        .collect::<Result<_>>()?;
    Ok((Outputs { tensors }, plan.peak_bytes))
}

impl Network {
    /// Inference with the arena executor.
    pub fn forward(&self, input: &Tensor) -> Result<Outputs> {
        let [_, z, y, x] = input.dims4()?;
        let plan = super::plan_memory(self, [z, y, x])?;
        Ok(forward_arena(self, &plan, input)?.0)
    }

    /// Inference with one allocation per node.
    pub fn forward_naive(&self, input: &Tensor) -> Result<Outputs> {
        Ok(forward_naive(self, &self.param_tensors(), input, None)?.outputs(self))
    }
}
