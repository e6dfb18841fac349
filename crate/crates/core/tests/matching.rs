mod common;

use anchordet::training::hungarian_match;
use anchordet::{Error, Matrix64};
use common::{brute_force_assignment, quantized_costs, rng};

#[test]
fn hungarian_equals_brute_force_on_small_matrices() {
    let mut r = rng(11);
    for g in 1..=5 {
        for m in g..=7 {
            for _ in 0..20 {
                let cost = quantized_costs(&mut r, g, m);
                let result = hungarian_match(&cost).unwrap();
                assert_eq!(result.total_cost(&cost), brute_force_assignment(&cost), "G={g} M={m}");
            }
        }
    }
}

#[test]
fn assignment_is_a_partial_permutation() {
    let mut r = rng(12);
    let cost = quantized_costs(&mut r, 4, 9);
    let result = hungarian_match(&cost).unwrap();
    let mut cols: Vec<usize> = result.pairs.iter().map(|&(_, q)| q).collect();
    let rows: Vec<usize> = result.pairs.iter().map(|&(g, _)| g).collect();
    assert_eq!(rows, vec![0, 1, 2, 3]);
    cols.sort_unstable();
    cols.dedup();
    assert_eq!(cols.len(), 4);
    assert_eq!(result.unmatched_queries.len(), 5);
    let targets = result.query_targets(9);
    assert_eq!(targets.iter().filter(|t| t.is_some()).count(), 4);
}

#[test]
fn degenerate_inputs() {
    assert!(matches!(hungarian_match(&Matrix64::zeros(3, 2)), Err(Error::Assignment { rows: 3, cols: 2 })));
    let mut bad = Matrix64::zeros(2, 2);
    bad.set(0, 1, f64::NAN);
    assert!(hungarian_match(&bad).is_err());
    let empty = hungarian_match(&Matrix64::zeros(0, 4)).unwrap();
    assert!(empty.pairs.is_empty());
    assert_eq!(empty.unmatched_queries, vec![0, 1, 2, 3]);
}

#[test]
fn ties_resolve_to_a_valid_optimum() {
    let cost = Matrix64::filled(3, 5, 1.0);
    let result = hungarian_match(&cost).unwrap();
    assert_eq!(result.total_cost(&cost), 3.0);
}
