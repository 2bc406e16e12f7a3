//! Dense layers and parameter initialisation shared by the fusion stack and
//! the forecaster.

use rand::Rng as _;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Array, Binding, ParamId, ParamStore, Tape, Var};
use crate::error::Result;

/// Seeded generator used for every initialisation and shuffle.
pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform samples in `(-sqrt(1/fan_in), sqrt(1/fan_in))`.
pub fn uniform_init(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Array {
    let a = (1.0 / fan_in.max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-a..a)).collect();
    Array::new(shape.to_vec(), data).expect("shape matches length")
}

/// Affine map `x W + b` over the last axis of `x`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(format!("{name}.w"), uniform_init(rng, &[fan_in, fan_out], fan_in));
        let bias = bias.then(|| store.add(format!("{name}.b"), uniform_init(rng, &[fan_out], fan_in)));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    /// Applies the layer to `x` of shape `[..., fan_in]`.
    pub fn apply(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let rows: usize = shape[..shape.len().saturating_sub(1)].iter().product();
        let flat = tape.reshape(x, &[rows, *shape.last().unwrap_or(&1)])?;
        let mut y = tape.matmul(flat, bind.var(self.weight))?;
        if let Some(b) = self.bias {
            y = tape.add(y, bind.var(b))?;
        }
        let mut out_shape = shape;
        if let Some(last) = out_shape.last_mut() {
            *last = self.fan_out;
        }
        tape.reshape(y, &out_shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_respects_bound_and_seed() {
        let a = uniform_init(&mut rng(0), &[50, 4], 16);
        let b = uniform_init(&mut rng(0), &[50, 4], 16);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 0.25));
    }

    #[test]
    fn dense_maps_last_axis() {
        let mut store = ParamStore::new();
        let layer = Dense::new(&mut store, "l", 3, 2, true, &mut rng(1));
        store.get_mut(layer.weight).value =
            Array::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        store.get_mut(layer.bias.unwrap()).value = Array::from_vec(vec![0.5, -0.5]);
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let x = tape.constant(Array::new(vec![2, 1, 3], vec![1., 2., 3., 0., 0., 1.]).unwrap());
        let y = layer.apply(&mut tape, &bind, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 1, 2]);
        assert_eq!(tape.value(y).data(), &[4.5, 4.5, 1.5, 0.5]);
    }
}
