use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::nn::{glorot_uniform, Parameter};
use crate::tensor::Tensor;

/// Kernel `w` of shape (window x c_in x c_out) and bias `b` of shape (c_out).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub w: Parameter,
    pub b: Parameter,
}

impl ConvParams {
    pub fn init<R: Rng + ?Sized>(prefix: &str, window: usize, c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self {
            w: Parameter::new(
                format!("{prefix}.W"),
                glorot_uniform(&[window, c_in, c_out], window * c_in, window * c_out, rng),
            ),
            b: Parameter::new(format!("{prefix}.b"), Tensor::zeros(&[c_out])),
        }
    }

    pub fn window(&self) -> usize {
        self.w.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.w.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.w.value.shape()[2]
    }
}

/// Same-length convolution. Position `t` sees inputs
/// `t - (k-1)/2 ..= t + k/2` (rounded as integers), zero outside the sequence;
/// for `k = 8` that is 3 positions to the left and 4 to the right.
pub fn conv1d_same(g: &mut Graph, x: Var, p: &ConvParams) -> Result<Var> {
    let w = p.w.bind(g);
    let b = p.b.bind(g);
    g.conv1d_same(x, w, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::same_padding_left;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(w: Tensor, b: Tensor) -> ConvParams {
        ConvParams {
            w: Parameter::new("c.W", w),
            b: Parameter::new("c.b", b),
        }
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.constant(Tensor::uniform(&[9, 3], -1.0, 1.0, &mut rng));
        let p = params(Tensor::zeros(&[8, 3, 2]), Tensor::full(&[2], 0.5));
        let y = conv1d_same(&mut g, x, &p).unwrap();
        assert_eq!(g.shape(y), &[9, 2]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn pointwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let xt = Tensor::uniform(&[2, 5, 3], -1.0, 1.0, &mut rng);
        let x = g.constant(xt.clone());
        let mut w = Tensor::zeros(&[1, 3, 3]);
        for i in 0..3 {
            w.data_mut()[i * 3 + i] = 1.0;
        }
        let y = conv1d_same(&mut g, x, &params(w, Tensor::zeros(&[3]))).unwrap();
        assert_eq!(g.value(y), &xt);
    }

    #[test]
    fn length_preserved_for_every_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 1..=9 {
            let mut g = Graph::new();
            let x = g.constant(Tensor::uniform(&[3, 2], -1.0, 1.0, &mut rng));
            let p = ConvParams::init("c", k, 2, 4, &mut rng);
            let y = conv1d_same(&mut g, x, &p).unwrap();
            assert_eq!(g.shape(y), &[3, 4]);
        }
        assert_eq!(same_padding_left(8), 3);
        assert_eq!(same_padding_left(4), 1);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[4, 3]));
        let p = ConvParams::init("c", 8, 2, 4, &mut rng);
        assert!(conv1d_same(&mut g, x, &p).is_err());
    }
}
