//! Fixtures shared by the benchmarks.

use wmlab_core::setups::{KgwSetup, KgwSetupParams, TheoremParams, TheoremSetup};
use wmlab_core::theory::{build_quality_graph, PerturbationGraph};

/// The KGW setup with a short calibration, so benchmarks start quickly.
pub fn kgw_setup() -> KgwSetup {
    KgwSetup::new(KgwSetupParams {
        calibration_samples: 200,
        ..KgwSetupParams::default()
    })
    .expect("default parameters are valid")
}

pub fn theorem_setup() -> TheoremSetup {
    TheoremSetup::new(TheoremParams::default()).expect("default parameters are valid")
}

/// The unconstrained (quality 0) graph of the enumerable setup: 81 vertices.
pub fn full_graph(setup: &TheoremSetup) -> PerturbationGraph {
    build_quality_graph(
        &setup.space,
        &setup.perturber,
        &setup.quality,
        &setup.prompt,
        0.0,
    )
    .expect("level 0 is never empty")
}
