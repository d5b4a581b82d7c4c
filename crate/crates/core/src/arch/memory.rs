//! Liveness-based activation arena planning.

use super::Network;
use crate::error::Result;

const ELEM: usize = std::mem::size_of::<f32>();

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Buffer {
    /// Byte offset into the arena.
    pub offset: usize,
    pub size: usize,
    /// Node index that produces the buffer.
    pub first: usize,
    /// Last node index that reads it (end of graph for outputs).
    pub last: usize,
}

impl Buffer {
    fn live_with(&self, o: &Buffer) -> bool {
        self.first <= o.last && o.first <= self.last
    }

    fn overlaps(&self, o: &Buffer) -> bool {
        self.offset < o.offset + o.size && o.offset < self.offset + self.size
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryPlan {
    /// One buffer per node, indexed by node id.
    pub buffers: Vec<Buffer>,
    pub peak_bytes: usize,
    /// Sum of all activation sizes.
    pub naive_bytes: usize,
}

impl MemoryPlan {
    /// Element range of node `id` inside an `f32` arena.
    pub fn range(&self, id: usize) -> std::ops::Range<usize> {
        let b = self.buffers[id];
        b.offset / ELEM..(b.offset + b.size) / ELEM
    }
}

/// Greedy first-fit packing by decreasing size.
///
/// A node's buffer is live from its own index to its last consumer; network
/// outputs stay live to the end. Buffers whose live ranges intersect never
/// share bytes, which also keeps every node's inputs disjoint from its output.
pub fn plan_memory(net: &Network, dims: [usize; 3]) -> Result<MemoryPlan> {
    let shapes = net.shapes(dims)?;
    let n = shapes.len();
    let mut last: Vec<usize> = (0..n).collect();
    for (i, node) in net.nodes().iter().enumerate() {
        for &j in &node.inputs {
            last[j] = last[j].max(i);
        }
    }
    for &(_, id) in net.outputs() {
        last[id] = n - 1;
    }
    let mut buffers: Vec<Buffer> = (0..n)
        .map(|i| Buffer {
            offset: 0,
            size: shapes[i].iter().product::<usize>() * ELEM,
            first: i,
            last: last[i],
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| buffers[b].size.cmp(&buffers[a].size).then(a.cmp(&b)));
    let mut placed: Vec<usize> = Vec::with_capacity(n);
    for &i in &order {
        let mut conflicts: Vec<Buffer> = placed
            .iter()
            .map(|&j| buffers[j])
            .filter(|b| b.live_with(&buffers[i]))
            .collect();
        conflicts.sort_by_key(|b| b.offset);
        let mut offset = 0;
        for c in &conflicts {
            if offset + buffers[i].size <= c.offset {
                break;
            }
            offset = offset.max(c.offset + c.size);
        }
        buffers[i].offset = offset;
        placed.push(i);
    }
    Ok(MemoryPlan {
        peak_bytes: buffers.iter().map(|b| b.offset + b.size).max().unwrap_or(0),
        naive_bytes: buffers.iter().map(|b| b.size).sum(),
        buffers,
    })
}

/// Replays the graph against `plan` and counts reads of a buffer after another
/// node has written over any of its bytes (including outputs read at the end).
pub fn replay_violations(net: &Network, plan: &MemoryPlan) -> usize {
    let b = &plan.buffers;
    let clobbered = |j: usize, upto: usize| (j + 1..upto).any(|k| b[k].overlaps(&b[j]));
    let mut violations = 0;
    for (i, node) in net.nodes().iter().enumerate() {
        violations += node.inputs.iter().filter(|&&j| clobbered(j, i)).count();
        // A node must not write over its own inputs either.
        violations += node.inputs.iter().filter(|&&j| b[i].overlaps(&b[j])).count();
    }
    let end = net.nodes().len();
    violations + net.outputs().iter().filter(|&&(_, j)| clobbered(j, end)).count()
}
