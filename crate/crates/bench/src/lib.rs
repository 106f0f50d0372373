//! Shared fixtures for the benchmarks: the default world and a randomly
//! initialized model sized to its vocabulary.

use romelab_core::dataset::{build_records, generate_world, CounterfactRecord, WorldModel, WorldSizes};
use romelab_core::model::{ModelConfig, Parameters};
use romelab_core::numerics::Matrix;

pub struct Fixture {
    pub world: WorldModel,
    pub config: ModelConfig,
    pub params: Parameters,
    pub records: Vec<CounterfactRecord>,
}

impl Fixture {
    pub fn new() -> Self {
        let world = generate_world(0, WorldSizes::default()).expect("default world");
        let config = ModelConfig {
            vocab_size: world.tokenizer.len(),
            ..ModelConfig::default()
        };
        let params = Parameters::random(&config, 0, 1.0).expect("parameters");
        let records = build_records(&world, 4, 7, config.max_context).expect("records");
        Self {
            world,
            config,
            params,
            records,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}

/// Deterministic well-conditioned `n × n` second-moment matrix.
pub fn spd(n: usize) -> Matrix {
    let k = Matrix::from_fn(n, 4 * n, |i, j| (((i * 31 + j * 17) % 23) as f64 - 11.0) / 11.0);
    let mut c = k.matmul(&k.transpose()).expect("shapes");
    for i in 0..n {
        c[(i, i)] += 1e-3;
    }
    c
}
