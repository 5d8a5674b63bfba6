use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Parameter groups, used to freeze parts of the network per training stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    /// b1–b3.
    Shared,
    /// r1–r4.
    RegressionTrunk,
    /// r5.
    RegressionHead,
    /// Deconvolution bridge from the coarse map.
    Bridge,
    /// c1–c4.
    ClassTrunk,
    /// c5.
    ClassHead,
    Refinement,
    Fusion,
}

impl Group {
    /// Groups trained jointly in the cascade stage.
    pub const CASCADE: [Group; 6] = [
        Group::Shared,
        Group::RegressionTrunk,
        Group::RegressionHead,
        Group::Bridge,
        Group::ClassTrunk,
        Group::ClassHead,
    ];

    /// Groups trained in the regression warm-up stage.
    pub const REGRESSION: [Group; 3] = [Group::Shared, Group::RegressionTrunk, Group::RegressionHead];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: Group,
    pub value: Tensor,
    pub momentum: Tensor,
    /// Weight decay applies (weights yes, biases no).
    pub decay: bool,
}

/// One gradient tensor per parameter, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &[Param]) -> Self {
        Gradients(params.iter().map(|p| Tensor::zeros(p.value.shape())).collect())
    }

    pub fn zero(&mut self) {
        self.0.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.0.iter_mut().for_each(|t| t.scale(s));
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b).expect("gradient shapes are fixed by the parameter list");
        }
    }

    pub(crate) fn add(&mut self, id: usize, g: &Tensor) {
        self.0[id]
            .add_assign(g)
            .expect("gradient shapes are fixed by the parameter list");
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(Tensor::is_finite)
    }
}

/// Rounds to the nearest 32-bit float so the value survives the model file.
pub(crate) fn to_f32_grid(v: f64) -> f64 {
    v as f32 as f64
}

/// `n` draws from U(−√(6/fan_in), +√(6/fan_in)).
pub fn init_uniform<R: Rng>(rng: &mut R, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| to_f32_grid(rng.gen_range(-bound..=bound))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn fan_in_six_stays_within_unit_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let w = init_uniform(&mut rng, 6, 1_000_000);
        let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max <= 1.0 && max > 0.999, "{max}");
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 5e-3);
    }
}
