//! Overlap and surface metrics, and the aggregated evaluation report.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::par;
use crate::volume::{GridSpec, LabelVolume};

/// Evaluated organs in report column order.
pub const ORGANS: [(u8, &str); 4] = [(1, "Liver"), (2, "Kidney"), (3, "Spleen"), (4, "Pancreas")];

/// Default surface tolerance in mm.
pub const NSD_TOLERANCE_MM: f64 = 1.0;

/// Relative slack on `d² ≤ τ²`, absorbing rounding in the distance transform.
const DIST_REL_TOL: f64 = 1e-12;

fn check_grids(gt: &LabelVolume, pred: &LabelVolume) -> Result<()> {
    if !gt.grid().congruent(pred.grid(), 1e-6) {
        return Err(Error::GridMismatch(format!(
            "ground truth {:?} vs prediction {:?}",
            gt.grid().dims,
            pred.grid().dims
        )));
    }
    Ok(())
}

fn mask(v: &LabelVolume, label: u8) -> Vec<bool> {
    v.data().iter().map(|&l| l == label).collect()
}

/// `2|G ∩ P| / (|G| + |P|)`; 1 when both are empty.
pub fn dsc(gt: &LabelVolume, pred: &LabelVolume, label: u8) -> Result<f64> {
    check_grids(gt, pred)?;
    let (mut g, mut p, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in gt.data().iter().zip(pred.data()) {
        let (a, b) = (a == label, b == label);
        g += a as usize;
        p += b as usize;
        both += (a && b) as usize;
    }
    if g + p == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (g + p) as f64)
}

/// Mask voxels with at least one face neighbour outside the mask or the volume.
pub fn boundary(m: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let mut out = vec![false; m.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = x + nx * (y + ny * z);
                if !m[i] {
                    continue;
                }
                out[i] = x == 0
                    || x + 1 == nx
                    || y == 0
                    || y + 1 == ny
                    || z == 0
                    || z + 1 == nz
                    || !m[i - 1]
                    || !m[i + 1]
                    || !m[i - nx]
                    || !m[i + nx]
                    || !m[i - nx * ny]
                    || !m[i + nx * ny];
            }
        }
    }
    out
}

/// One pass of the lower-envelope distance transform along a line.
fn edt_line(f: &[f64], s: f64, out: &mut [f64], v: &mut Vec<usize>, zb: &mut Vec<f64>) {
    v.clear();
    zb.clear();
    let pos = |q: usize| q as f64 * s;
    for q in 0..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + pos(q) * pos(q);
        loop {
            let Some(&k) = v.last() else {
                v.push(q);
                zb.push(f64::NEG_INFINITY);
                break;
            };
            let cross = (fq - (f[k] + pos(k) * pos(k))) / (2.0 * (pos(q) - pos(k)));
            if cross <= *zb.last().expect("paired with v") {
                v.pop();
                zb.pop();
            } else {
                v.push(q);
                zb.push(cross);
                break;
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && zb[k + 1] < pos(p) {
            k += 1;
        }
        let d = (p as f64 - v[k] as f64) * s;
        *o = f[v[k]] + d * d;
    }
}

/// Squared physical distance from every voxel to the nearest `seed` voxel
/// (infinite if there are none). Exact, separable x → y → z.
pub fn squared_distance_transform(seed: &[bool], grid: &GridSpec) -> Vec<f64> {
    let [nx, ny, nz] = grid.dims;
    let mut d: Vec<f64> = seed.iter().map(|&s| if s { 0.0 } else { f64::INFINITY }).collect();
    let (mut v, mut zb) = (Vec::new(), Vec::new());
    for (axis, (n, stride)) in [(nx, 1), (ny, nx), (nz, nx * ny)].into_iter().enumerate() {
        let mut f = vec![0.0; n];
        let mut o = vec![0.0; n];
        for start in 0..d.len() {
            // Line starts are the voxels whose coordinate along `axis` is 0.
            let c = (start / stride) % n;
            if c != 0 {
                continue;
            }
            for i in 0..n {
                f[i] = d[start + i * stride];
            }
            edt_line(&f, grid.spacing[axis], &mut o, &mut v, &mut zb);
            for i in 0..n {
                d[start + i * stride] = o[i];
            }
        }
    }
    d
}

fn within(d2: f64, tau: f64) -> bool {
    d2 <= tau * tau * (1.0 + DIST_REL_TOL)
}

/// Symmetric normalized surface Dice at tolerance `tau_mm`.
pub fn nsd(gt: &LabelVolume, pred: &LabelVolume, label: u8, tau_mm: f64) -> Result<f64> {
    check_grids(gt, pred)?;
    let grid = gt.grid();
    let sg = boundary(&mask(gt, label), grid.dims);
    let sp = boundary(&mask(pred, label), grid.dims);
    let (ng, np) = (sg.iter().filter(|&&b| b).count(), sp.iter().filter(|&&b| b).count());
    match (ng, np) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let to_p = squared_distance_transform(&sp, grid);
    let to_g = squared_distance_transform(&sg, grid);
    let hits = |s: &[bool], d: &[f64]| s.iter().zip(d).filter(|&(&b, &d)| b && within(d, tau_mm)).count();
    Ok((hits(&sg, &to_p) + hits(&sp, &to_g)) as f64 / (ng + np) as f64)
}

/// One flag per 26-connected component of `m`: whether it shares a voxel
/// with `other`.
fn components(m: &[bool], other: &[bool], dims: [usize; 3]) -> Vec<bool> {
    let [nx, ny, nz] = dims;
    let mut seen = vec![false; m.len()];
    let mut touched = Vec::new();
    let mut stack = Vec::new();
    for s in 0..m.len() {
        if !m[s] || seen[s] {
            continue;
        }
        seen[s] = true;
        stack.push(s);
        let mut touches = false;
        while let Some(i) = stack.pop() {
            touches |= other[i];
            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                            continue;
                        }
                        let j = xx as usize + nx * (yy as usize + ny * zz as usize);
                        if m[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        touched.push(touches);
    }
    touched
}

/// Predicted 26-connected components of each organ label that share no voxel
/// with that label in the ground truth, summed over [`ORGANS`].
pub fn spurious_components(gt: &LabelVolume, pred: &LabelVolume) -> Result<usize> {
    check_grids(gt, pred)?;
    Ok(ORGANS
        .iter()
        .map(|&(l, _)| {
            components(&mask(pred, l), &mask(gt, l), pred.grid().dims)
                .iter()
                .filter(|&&t| !t)
                .count()
        })
        .sum())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseScores {
    pub name: String,
    /// Fractions in [`ORGANS`] order.
    pub dsc: Vec<f64>,
    pub nsd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub cases: Vec<CaseScores>,
    /// Percent, population standard deviation.
    pub dsc_mean: Vec<f64>,
    pub dsc_std: Vec<f64>,
    pub nsd_mean: Vec<f64>,
    pub nsd_std: Vec<f64>,
    pub runtime_seconds: Option<f64>,
    pub peak_arena_bytes: Option<usize>,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Scores every `(name, gt, pred)` case on [`ORGANS`].
pub fn evaluate(cases: &[(String, LabelVolume, LabelVolume)]) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::Empty("no cases to evaluate".into()));
    }
    let scored = par::map_indices(cases.len(), |i| -> Result<CaseScores> {
        let (name, gt, pred) = &cases[i];
        let mut s = CaseScores { name: name.clone(), dsc: vec![], nsd: vec![] };
        for &(l, _) in &ORGANS {
            s.dsc.push(dsc(gt, pred, l)?);
            s.nsd.push(nsd(gt, pred, l, NSD_TOLERANCE_MM)?);
        }
        Ok(s)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    from_scores(scored)
}

/// Aggregates precomputed per-case scores.
pub fn from_scores(cases: Vec<CaseScores>) -> Result<EvalReport> {
    if cases.is_empty() {
        return Err(Error::Empty("no cases to evaluate".into()));
    }
    let k = ORGANS.len();
    let agg = |f: &dyn Fn(&CaseScores) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        (0..k)
            .map(|j| mean_std(cases.iter().map(|c| 100.0 * f(c)[j])))
            .unzip()
    };
    let (dsc_mean, dsc_std) = agg(&|c| &c.dsc);
    let (nsd_mean, nsd_std) = agg(&|c| &c.nsd);
    Ok(EvalReport {
        labels: ORGANS.iter().map(|(_, n)| n.to_string()).collect(),
        cases,
        dsc_mean,
        dsc_std,
        nsd_mean,
        nsd_std,
        runtime_seconds: None,
        peak_arena_bytes: None,
    })
}

impl EvalReport {
    /// Machine-readable: one row per case, then `mean` and `std` rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("case");
        for m in ["DSC", "NSD"] {
            for l in &self.labels {
                write!(s, "\t{m}_{l}").unwrap();
            }
        }
        s.push('\n');
        let row = |s: &mut String, name: &str, a: &[f64], b: &[f64]| {
            s.push_str(name);
            for v in a.iter().chain(b) {
                write!(s, "\t{v:.4}").unwrap();
            }
            s.push('\n');
        };
        for c in &self.cases {
            let pct = |v: &[f64]| v.iter().map(|x| 100.0 * x).collect::<Vec<_>>();
            row(&mut s, &c.name, &pct(&c.dsc), &pct(&c.nsd));
        }
        row(&mut s, "mean", &self.dsc_mean, &self.nsd_mean);
        row(&mut s, "std", &self.dsc_std, &self.nsd_std);
        s
    }

    /// Aligned `mean ± std` table.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<8}", "");
        for l in &self.labels {
            write!(s, "{l:>16}").unwrap();
        }
        s.push('\n');
        for (m, mean, std) in [("DSC", &self.dsc_mean, &self.dsc_std), ("NSD", &self.nsd_mean, &self.nsd_std)] {
            write!(s, "{m:<8}").unwrap();
            for (a, b) in mean.iter().zip(std.iter()) {
                write!(s, "{:>16}", format!("{a:.2} ± {b:.2}")).unwrap();
            }
            s.push('\n');
        }
        if let Some(t) = self.runtime_seconds {
            writeln!(s, "runtime_seconds {t:.3}").unwrap();
        }
        if let Some(b) = self.peak_arena_bytes {
            writeln!(s, "peak_arena_bytes {b}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(dims: [usize; 3], spacing: [f64; 3], on: &[[usize; 3]], label: u8) -> LabelVolume {
        let g = GridSpec::new(dims, spacing);
        let mut v = LabelVolume::filled(g, 0);
        for &[x, y, z] in on {
            v.set(x, y, z, label);
        }
        v
    }

    #[test]
    fn dsc_examples() {
        let a = lv([4, 4, 1], [1.0; 3], &[[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0], [0, 1, 0], [1, 1, 0], [2, 1, 0], [3, 1, 0]], 1);
        let b = lv([4, 4, 1], [1.0; 3], &[[0, 1, 0], [1, 1, 0], [2, 1, 0], [3, 1, 0], [0, 2, 0], [1, 2, 0], [2, 2, 0], [3, 2, 0]], 1);
        assert_eq!(dsc(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dsc(&a, &b, 1).unwrap(), 0.5);
        assert_eq!(dsc(&a, &b, 2).unwrap(), 1.0);
    }

    #[test]
    fn nsd_single_voxel_examples() {
        let a = lv([4, 4, 4], [1.0; 3], &[[1, 1, 1]], 1);
        let b = lv([4, 4, 4], [1.0; 3], &[[2, 1, 1]], 1);
        assert_eq!(nsd(&a, &b, 1, 1.0).unwrap(), 1.0);
        let a2 = lv([4, 4, 4], [2.0; 3], &[[1, 1, 1]], 1);
        let b2 = lv([4, 4, 4], [2.0; 3], &[[2, 1, 1]], 1);
        assert_eq!(nsd(&a2, &b2, 1, 1.0).unwrap(), 0.0);
        assert_eq!(nsd(&a2, &a2, 3, 1.0).unwrap(), 1.0);
        let empty = lv([4, 4, 4], [2.0; 3], &[], 1);
        assert_eq!(nsd(&a2, &empty, 1, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn distance_transform_on_a_line() {
        let g = GridSpec::new([5, 1, 1], [1.5, 1.0, 1.0]);
        let d = squared_distance_transform(&[false, true, false, false, true], &g);
        assert_eq!(d, vec![2.25, 0.0, 2.25, 2.25, 0.0]);
    }

    #[test]
    fn spurious_components_count_disjoint_blobs() {
        let gt = lv([8, 8, 8], [1.0; 3], &[[1, 1, 1], [1, 2, 1]], 3);
        let pred = lv([8, 8, 8], [1.0; 3], &[[1, 2, 1], [6, 6, 6], [4, 6, 1]], 3);
        assert_eq!(spurious_components(&gt, &pred).unwrap(), 2);
        // Diagonal neighbours belong to one component.
        let pred = lv([8, 8, 8], [1.0; 3], &[[5, 5, 5], [6, 6, 6]], 3);
        assert_eq!(spurious_components(&gt, &pred).unwrap(), 1);
    }

    #[test]
    fn aggregate_arithmetic() {
        let mk = |d: f64| CaseScores { name: "c".into(), dsc: vec![d; 4], nsd: vec![1.0; 4] };
        let r = from_scores(vec![mk(0.9), mk(0.7)]).unwrap();
        assert!((r.dsc_mean[0] - 80.0).abs() < 1e-9 && (r.dsc_std[0] - 10.0).abs() < 1e-9);
        assert_eq!(r.labels, ["Liver", "Kidney", "Spleen", "Pancreas"]);
        assert!(from_scores(vec![]).is_err());
        assert!(r.to_text().contains("80.00 ± 10.00"));
        assert_eq!(r.to_tsv().lines().count(), 5);
    }
}
