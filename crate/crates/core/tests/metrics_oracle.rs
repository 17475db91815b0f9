//! Localization and image-quality metrics against independent oracles.

mod common;

use common::oracle;

#[test]
fn localization_metrics_match_brute_force() {
    oracle::check_localization_oracles();
}

#[test]
fn quality_metrics_match_closed_forms() {
    oracle::check_quality_closed_forms();
}
