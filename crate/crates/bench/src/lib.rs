//! Fixtures shared by the benchmarks.

use unroll_core::evalharness::{SuiteKind, SuiteSpec, TaskSuite};
use unroll_core::policy::{Engine, Pipeline, PolicyConfig, Unroll};

pub fn suite(kind: SuiteKind, size: usize) -> TaskSuite {
    SuiteSpec::new(kind, 7, size).build().expect("suite builds")
}

/// One finished unroll of `pipeline` on the first task of a `kind` suite.
pub fn unrolled(kind: SuiteKind, pipeline: &str) -> (TaskSuite, Unroll) {
    let s = suite(kind, 1);
    let t = &s.tasks[0];
    let p = Pipeline::preset(pipeline).expect("preset exists");
    let run = Engine::default()
        .run_unroll(&t.input(), &t.scene, &p, &PolicyConfig::default())
        .expect("unroll runs");
    (s, run)
}
