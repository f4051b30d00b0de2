//! Named parameter registry and seeded initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Result, Tensor};

/// Standard deviation of the truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

/// Hands out parameters in creation order and remembers each once.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    entries: Vec<(String, Tensor)>,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            entries: Vec::new(),
        }
    }

    fn push(&mut self, name: String, data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        debug_assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter {name}"
        );
        let t = Tensor::param(data, shape)?;
        self.entries.push((name, t.clone()));
        Ok(t)
    }

    /// Normal(0, 0.02) truncated at two standard deviations.
    pub fn weight(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| loop {
                let z: f64 = self.rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break z * INIT_STD;
                }
            })
            .collect();
        self.push(name.into(), data, shape)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        self.push(name.into(), vec![0.0; n], shape)
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> Result<Tensor> {
        let n = shape.iter().product();
        self.push(name.into(), vec![1.0; n], shape)
    }

    pub fn finish(self) -> Vec<(String, Tensor)> {
        self.entries
    }
}
