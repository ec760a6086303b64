mod common;

use common::{check_gradients, grad_case, Objective};
use salseg::net::{CeForm, DecoderMode};

fn run(decoder: DecoderMode, objective: Objective) {
    for seed in 0..5 {
        let case = grad_case(seed, decoder, objective);
        let r = check_gradients(&case, 1e-5);
        assert!(r.checked > r.skipped, "{decoder:?} {objective:?} seed {seed}: too many kinks");
        assert!(r.worst_rel < 1e-4, "{decoder:?} {objective:?} seed {seed}: rel {}", r.worst_rel);
    }
}

#[test]
fn categorical_unpool() {
    run(DecoderMode::Unpool, Objective::Ce(CeForm::Categorical));
}

#[test]
fn categorical_deconv() {
    run(DecoderMode::Deconv, Objective::Ce(CeForm::Categorical));
}

#[test]
fn per_level_binary_unpool() {
    run(DecoderMode::Unpool, Objective::Ce(CeForm::PerLevelBinary));
}

#[test]
fn per_level_binary_deconv() {
    run(DecoderMode::Deconv, Objective::Ce(CeForm::PerLevelBinary));
}

#[test]
fn euclidean_unpool() {
    run(DecoderMode::Unpool, Objective::Euclidean);
}

#[test]
fn euclidean_deconv() {
    run(DecoderMode::Deconv, Objective::Euclidean);
}
