use std::collections::HashSet;

use crate::arch::{Architecture, Cell};
use crate::graph::{canonical_hash_unchecked, CellGraph, Digest, Label};
use crate::par::{self, Exec};

use super::{Regime, SpaceError, SpaceSpec};

/// Raw candidates (adjacency patterns times labelings) above which
/// [`enumerate`] refuses to run.
pub const DEFAULT_ENUMERATION_BOUND: f64 = 1e9;

#[derive(Debug, Clone, Copy)]
pub struct EnumerateOptions {
    pub bound: f64,
    pub exec: Exec,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        EnumerateOptions {
            bound: DEFAULT_ENUMERATION_BOUND,
            exec: Exec::Parallel,
        }
    }
}

/// Upper bound on graphs visited: `sum_n 2^(n(n-1)/2) * ops^(n-2)`.
pub fn estimated_candidates(spec: &SpaceSpec) -> f64 {
    let ops = spec.op_labels().len() as f64;
    (2..=spec.max_vertices())
        .map(|n| 2f64.powi((n * (n - 1) / 2) as i32) * ops.powi(n as i32 - 2))
        .sum()
}

/// Every valid architecture of a single-cell free-form space, once per
/// isomorphism class, in deterministic order.
pub fn enumerate(spec: &SpaceSpec) -> Result<Vec<Architecture>, SpaceError> {
    enumerate_with(spec, EnumerateOptions::default())
}

pub fn enumerate_with(spec: &SpaceSpec, opts: EnumerateOptions) -> Result<Vec<Architecture>, SpaceError> {
    if spec.regime() != &Regime::FreeForm || spec.cells_per_architecture() != 1 {
        return Err(SpaceError::NotEnumerable);
    }
    let estimate = estimated_candidates(spec);
    if estimate > opts.bound {
        return Err(SpaceError::TooLarge {
            estimate,
            bound: opts.bound,
        });
    }

    let ops = spec.op_labels().len();
    let mut seen: HashSet<Digest> = HashSet::new();
    let mut out = Vec::new();
    for n in 2..=spec.max_vertices() {
        let adjacencies = valid_adjacencies(n, spec.max_edges(), opts.exec);
        let labelings = ops.pow(n as u32 - 2);
        // Bounded chunks keep memory flat while the rayon pool stays busy.
        for chunk in adjacencies.chunks(512) {
            let hashed = par::map(opts.exec, chunk, |succ| {
                (0..labelings)
                    .map(|code| {
                        let g = CellGraph::from_masks(decode_labels(n, ops, code), succ.clone());
                        (canonical_hash_unchecked(&g), g)
                    })
                    .collect::<Vec<_>>()
            });
            for (digest, g) in hashed.into_iter().flatten() {
                if seen.insert(digest) {
                    out.push(Architecture::from_parts(vec![Cell::Nodes(g)], vec![digest]));
                }
            }
        }
    }
    Ok(out)
}

/// Upper-triangular adjacency patterns with `n` vertices that satisfy the
/// edge cap, degree and connectivity rules.
fn valid_adjacencies(n: usize, max_edges: usize, exec: Exec) -> Vec<Vec<u32>> {
    let pairs = n * (n - 1) / 2;
    let total = 1usize << pairs;
    let block = 1usize << 12;
    let blocks = total.div_ceil(block);
    let found = par::map_range(exec, blocks, |b| {
        let mut labels = vec![Label::op(0); n];
        labels[0] = Label::INPUT;
        labels[n - 1] = Label::OUTPUT;
        let mut keep = Vec::new();
        for bits in b * block..((b + 1) * block).min(total) {
            if bits.count_ones() as usize > max_edges {
                continue;
            }
            let succ = decode_adjacency(n, bits);
            let g = CellGraph::from_masks(labels.clone(), succ);
            if g.check_degrees().is_ok() && g.check_connected().is_ok() {
                keep.push(g.succ_masks());
            }
        }
        keep
    });
    found.into_iter().flatten().collect()
}

/// Bit `i` of `bits` is the `i`-th pair in row-major upper-triangular order.
fn decode_adjacency(n: usize, bits: usize) -> Vec<u32> {
    let mut succ = vec![0u32; n];
    let mut i = 0;
    for (s, row) in succ.iter_mut().enumerate() {
        for d in s + 1..n {
            if bits >> i & 1 == 1 {
                *row |= 1 << d;
            }
            i += 1;
        }
    }
    succ
}

fn decode_labels(n: usize, ops: usize, mut code: usize) -> Vec<Label> {
    let mut labels = Vec::with_capacity(n);
    labels.push(Label::INPUT);
    for _ in 1..n - 1 {
        labels.push(Label::op(code % ops));
        code /= ops;
    }
    labels.push(Label::OUTPUT);
    labels
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::validate;

    #[test]
    fn micro_space_has_seven_graphs() {
        let spec = SpaceSpec::free_form("micro", 3, 3, &["c1", "c3", "mp"], 1).unwrap();
        let all = enumerate(&spec).unwrap();
        assert_eq!(all.len(), 7);
        let sizes: Vec<usize> = all.iter().map(|a| a.cells()[0].graph().num_vertices()).collect();
        assert_eq!(sizes.iter().filter(|&&s| s == 2).count(), 1);
        assert_eq!(sizes.iter().filter(|&&s| s == 3).count(), 6);
    }

    #[test]
    fn two_vertex_space() {
        let spec = SpaceSpec::free_form("pair", 2, 1, &["c1"], 1).unwrap();
        assert_eq!(enumerate(&spec).unwrap().len(), 1);
    }

    #[test]
    fn outputs_are_valid_and_unique() {
        let spec = SpaceSpec::free_form("small", 5, 9, &["c1", "c3", "mp"], 1).unwrap();
        let all = enumerate(&spec).unwrap();
        let digests: HashSet<_> = all.iter().map(|a| a.digest()).collect();
        assert_eq!(digests.len(), all.len());
        for a in &all {
            assert_eq!(validate(a.cells()[0].graph(), &spec), Ok(()));
        }
    }

    #[test]
    fn sequential_matches_parallel() {
        let spec = SpaceSpec::free_form("small", 5, 6, &["c1", "c3"], 1).unwrap();
        let seq = enumerate_with(&spec, EnumerateOptions { exec: Exec::Sequential, ..Default::default() }).unwrap();
        let par = enumerate_with(&spec, EnumerateOptions::default()).unwrap();
        let a: Vec<_> = seq.iter().map(|x| x.digest()).collect();
        let b: Vec<_> = par.iter().map(|x| x.digest()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn refuses_oversized_and_templates() {
        let spec = SpaceSpec::nb101();
        let tight = EnumerateOptions { bound: 1e6, ..Default::default() };
        assert!(matches!(enumerate_with(&spec, tight), Err(SpaceError::TooLarge { .. })));
        assert!(matches!(enumerate(&SpaceSpec::nb301()), Err(SpaceError::NotEnumerable)));
    }

    #[test]
    fn nb101_estimate() {
        let est = estimated_candidates(&SpaceSpec::nb101());
        // 7-vertex term alone: 2^21 * 3^5
        assert!(est > 509_607_936.0 && est < 5.2e8);
    }
}
