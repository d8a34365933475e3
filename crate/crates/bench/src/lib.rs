//! Fixtures shared by the benchmarks.

use cprgcn::cohort::{generate_cohort, CohortSpec};
use cprgcn::harness::{desk_model, prepare_cohort, PipelineConfig};
use cprgcn::model::TreeInput;

/// Prepared network inputs for `n` synthetic trees at desk-model cube size.
pub fn sample_trees(n: usize) -> Vec<TreeInput> {
    let spec = CohortSpec {
        trees: n,
        seed: 7,
        ..CohortSpec::default()
    };
    let cohort = generate_cohort(&spec).expect("cohort");
    prepare_cohort(&cohort.trees, &PipelineConfig::default(), desk_model().condition.gamma)
        .expect("prepared trees")
}
