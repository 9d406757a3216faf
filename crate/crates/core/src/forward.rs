use std::cell::RefCell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::EmbeddingTable;
use crate::tensor::{ParamSet, Tape, Var};
use crate::Result;

/// Everything one forward pass reads: the tape it records on, parameters,
/// configuration, frozen embeddings, and the dropout stream when training.
pub struct Forward<'a> {
    pub tape: &'a Tape,
    pub params: &'a ParamSet,
    pub config: &'a ModelConfig,
    pub embeddings: &'a EmbeddingTable,
    rng: Option<RefCell<ChaCha8Rng>>,
}

impl<'a> Forward<'a> {
    /// Dropout disabled.
    pub fn eval(
        tape: &'a Tape,
        params: &'a ParamSet,
        config: &'a ModelConfig,
        embeddings: &'a EmbeddingTable,
    ) -> Self {
        Self {
            tape,
            params,
            config,
            embeddings,
            rng: None,
        }
    }

    /// Dropout enabled, masks drawn from `seed`.
    pub fn train(
        tape: &'a Tape,
        params: &'a ParamSet,
        config: &'a ModelConfig,
        embeddings: &'a EmbeddingTable,
        seed: u64,
    ) -> Self {
        Self {
            rng: Some(RefCell::new(ChaCha8Rng::seed_from_u64(seed))),
            ..Self::eval(tape, params, config, embeddings)
        }
    }

    pub fn training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn p(&self, name: &str) -> Result<Var> {
        Ok(self.tape.param(self.params, name)?)
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.contains(name)
    }

    pub fn dropout(&self, x: Var, p: f64) -> Result<Var> {
        match &self.rng {
            Some(rng) => Ok(self.tape.dropout(x, p, true, &mut *rng.borrow_mut())?),
            None => Ok(x),
        }
    }

    /// Runs `f` with the dropout stream (when training) for APIs that take
    /// an explicit generator.
    pub fn with_rng<T>(&self, f: impl FnOnce(Option<&mut ChaCha8Rng>) -> T) -> T {
        match &self.rng {
            Some(rng) => f(Some(&mut *rng.borrow_mut())),
            None => f(None),
        }
    }

    /// `x W + b` for a `rows x in` input.
    pub fn linear(&self, x: Var, w: &str, b: &str) -> Result<Var> {
        let xw = self.tape.matmul(x, self.p(w)?)?;
        Ok(self.tape.add_row(xw, self.p(b)?)?)
    }
}
