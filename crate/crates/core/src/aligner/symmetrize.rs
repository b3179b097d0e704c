use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::Links;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Heuristic {
    Intersection,
    GrowDiagFinalAnd,
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

/// Combines two directional alignments of the same sentence pair. Both
/// inputs are `(src, tgt)` links.
pub fn symmetrize(forward: &Links, reverse: &Links, heuristic: Heuristic) -> Links {
    let mut result: Links = forward.intersection(reverse).copied().collect();
    if heuristic == Heuristic::Intersection {
        return result;
    }
    let union: Links = forward.union(reverse).copied().collect();
    let mut src_aligned: BTreeSet<usize> = result.iter().map(|l| l.0).collect();
    let mut tgt_aligned: BTreeSet<usize> = result.iter().map(|l| l.1).collect();

    // grow-diag: repeatedly extend accepted links into neighbouring union
    // links that cover a still-unaligned word on either side.
    loop {
        let mut added = false;
        let current: Vec<_> = result.iter().copied().collect();
        for (i, j) in current {
            for (di, dj) in NEIGHBORS {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 {
                    continue;
                }
                let cand = (ni as usize, nj as usize);
                if result.contains(&cand) || !union.contains(&cand) {
                    continue;
                }
                if !src_aligned.contains(&cand.0) || !tgt_aligned.contains(&cand.1) {
                    result.insert(cand);
                    src_aligned.insert(cand.0);
                    tgt_aligned.insert(cand.1);
                    added = true;
                }
            }
        }
        if !added {
            break;
        }
    }

    // final-and: add directional links whose words are both still unaligned.
    for directional in [forward, reverse] {
        for &(i, j) in directional {
            if !src_aligned.contains(&i) && !tgt_aligned.contains(&j) {
                result.insert((i, j));
                src_aligned.insert(i);
                tgt_aligned.insert(j);
            }
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn links(v: &[(usize, usize)]) -> Links {
        v.iter().copied().collect()
    }

    #[test]
    fn equal_inputs_are_fixed_points() {
        let s = links(&[(0, 0), (1, 2), (2, 1)]);
        assert_eq!(symmetrize(&s, &s, Heuristic::Intersection), s);
        assert_eq!(symmetrize(&s, &s, Heuristic::GrowDiagFinalAnd), s);
    }

    #[test]
    fn disjoint_intersection_is_empty() {
        let r = symmetrize(&links(&[(0, 0)]), &links(&[(1, 1)]), Heuristic::Intersection);
        assert!(r.is_empty());
    }

    #[test]
    fn diagonal_neighbour_is_grown() {
        let r = symmetrize(&links(&[(0, 0), (1, 1)]), &links(&[(0, 0)]), Heuristic::GrowDiagFinalAnd);
        assert_eq!(r, links(&[(0, 0), (1, 1)]));
    }

    #[test]
    fn final_and_requires_both_unaligned() {
        // (2,0) is not adjacent to (0,0) and its target is already aligned.
        let r = symmetrize(&links(&[(0, 0), (2, 0)]), &links(&[(0, 0)]), Heuristic::GrowDiagFinalAnd);
        assert_eq!(r, links(&[(0, 0)]));
        // (3,3) is isolated but both its words are free.
        let r = symmetrize(&links(&[(0, 0), (3, 3)]), &links(&[(0, 0)]), Heuristic::GrowDiagFinalAnd);
        assert_eq!(r, links(&[(0, 0), (3, 3)]));
    }

    proptest! {
        #[test]
        fn sandwich(f in proptest::collection::btree_set((0usize..5, 0usize..5), 0..10),
                    r in proptest::collection::btree_set((0usize..5, 0usize..5), 0..10)) {
            let inter: Links = f.intersection(&r).copied().collect();
            let union: Links = f.union(&r).copied().collect();
            let g = symmetrize(&f, &r, Heuristic::GrowDiagFinalAnd);
            prop_assert!(inter.is_subset(&g));
            prop_assert!(g.is_subset(&union));
            prop_assert_eq!(symmetrize(&f, &r, Heuristic::Intersection), inter);
        }
    }
}
