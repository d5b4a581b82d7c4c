use super::{Network, Op};
use crate::error::Result;

pub fn count_parameters(net: &Network) -> usize {
    net.params().iter().map(|p| p.tensor.len()).sum()
}

/// Forward-pass FLOPs for a `[z, y, x]` input.
///
/// A convolution costs `2·cin·k³ + 1` per output element (multiply-adds plus
/// the bias); activations, products, pooling and upsampling cost one per output
/// element; inference dropout and concatenation are free.
pub fn count_flops(net: &Network, dims: [usize; 3]) -> Result<u64> {
    let shapes = net.shapes(dims)?;
    let mut total = 0u64;
    for (node, s) in net.nodes().iter().zip(&shapes) {
        let elems = s.iter().product::<usize>() as u64;
        total += match node.op {
            Op::Input | Op::Dropout { .. } | Op::Concat => 0,
            Op::Conv { kernel, .. } => {
                let cin = net.nodes()[node.inputs[0]].channels as u64;
                elems * (2 * cin * (kernel as u64).pow(3) + 1)
            }
            Op::LeakyRelu { .. } | Op::Sigmoid | Op::Softmax | Op::Mul | Op::AvgPool | Op::Upsample => elems,
        };
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_scn, build_unet, ArchSpec};

    fn tiny() -> Network {
        build_unet(&ArchSpec { head_kernel: 3, bottleneck_block: false, ..ArchSpec::new(1, 1, 1, 1) }).unwrap()
    }

    #[test]
    fn tiny_unet_counts() {
        let net = tiny();
        assert_eq!(count_parameters(&net), 84);
        // Three 1→1 convs (55 each) and two leaky ReLUs on one voxel.
        assert_eq!(count_flops(&net, [1, 1, 1]).unwrap(), 3 * 55 + 2);
    }

    #[test]
    fn localization_reconstruction_matches_exactly() {
        assert_eq!(count_parameters(&build_unet(&ArchSpec::localization()).unwrap()), 637_474);
    }

    #[test]
    fn scn_count_is_pinned() {
        let net = build_scn(&ArchSpec::scn_local(5), &ArchSpec::scn_spatial(5), 5).unwrap();
        assert_eq!(count_parameters(&net), 764_490);
    }

    #[test]
    fn flops_scale_with_voxels() {
        let net = build_unet(&ArchSpec::new(3, 4, 1, 2)).unwrap();
        let a = count_flops(&net, [4, 4, 4]).unwrap();
        assert_eq!(count_flops(&net, [8, 8, 8]).unwrap(), 8 * a);
        assert!(count_flops(&net, [4, 4, 6]).is_err());
    }
}
