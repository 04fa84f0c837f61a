//! Solver backends against independent oracles.

mod common;

use common::solver;

#[test]
fn convex_projection_matches_direction_grid_search() {
    eprintln!("{}", solver::convex_projection());
}

#[test]
fn quantile_matches_subset_enumeration() {
    eprintln!("{}", solver::quantile_enumeration());
}

#[test]
fn quantile_in_one_dimension_matches_interval_counting() {
    eprintln!("{}", solver::quantile_intervals());
}

#[test]
fn corridor_instances_match_the_structured_backend() {
    eprintln!("{}", solver::corridor_structured());
}

#[test]
fn structured_cantelli_matches_a_dense_scan() {
    eprintln!("{}", solver::structured_cantelli_scan());
}
