use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-channel affine map `v -> (v - offset) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Affine {
    pub fn identity(channels: usize) -> Self {
        Affine {
            offset: vec![0.0; channels],
            scale: vec![1.0; channels],
        }
    }

    /// Mean and standard deviation of each column of `data` (`[N, channels]`).
    /// Constant channels get unit scale.
    pub fn fit(data: &Tensor) -> Self {
        let channels = data.last_dim();
        let rows = data.leading();
        let mut offset = vec![0.0; channels];
        let mut scale = vec![1.0; channels];
        if rows == 0 {
            return Affine { offset, scale };
        }
        for (c, (o, s)) in offset.iter_mut().zip(scale.iter_mut()).enumerate() {
            let mut mean = 0.0;
            for r in 0..rows {
                mean += data.row(r)[c];
            }
            mean /= rows as f64;
            let mut var = 0.0;
            for r in 0..rows {
                let d = data.row(r)[c] - mean;
                var += d * d;
            }
            let std = (var / rows as f64).sqrt();
            *o = mean;
            *s = if std > 0.0 && std.is_finite() { std } else { 1.0 };
        }
        Affine { offset, scale }
    }

    pub fn channels(&self) -> usize {
        self.offset.len()
    }

    pub fn is_identity(&self) -> bool {
        self.offset.iter().all(|&o| o == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    fn check(&self, t: &Tensor) -> Result<()> {
        if t.last_dim() != self.channels() {
            return Err(Error::shape("scaler", t.shape(), &[self.channels()]));
        }
        Ok(())
    }

    pub fn normalize(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let mut out = t.clone();
        let c = self.channels();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            *v = (*v - self.offset[ch]) / self.scale[ch];
        }
        Ok(out)
    }

    pub fn denormalize(&self, t: &Tensor) -> Result<Tensor> {
        self.check(t)?;
        let mut out = t.clone();
        let c = self.channels();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            *v = *v * self.scale[ch] + self.offset[ch];
        }
        Ok(out)
    }
}

/// Boundary normalization of a model: data enter through `input` / `output`
/// and the state lives in `state` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub state: Affine,
    pub input: Affine,
    pub output: Affine,
}

impl Scaler {
    pub fn identity(n_x: usize, n_u: usize, n_y: usize) -> Self {
        Scaler {
            state: Affine::identity(n_x),
            input: Affine::identity(n_u),
            output: Affine::identity(n_y),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fit_standardizes_columns() {
        let t = Tensor::from_rows(&[vec![1.0, 10.0], vec![3.0, 10.0]]).unwrap();
        let a = Affine::fit(&t);
        assert_eq!(a.offset, vec![2.0, 10.0]);
        assert_eq!(a.scale, vec![1.0, 1.0]);
        let n = a.normalize(&t).unwrap();
        assert_eq!(n.data(), &[-1.0, 0.0, 1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            offset in prop::collection::vec(-1e3f64..1e3, 3),
            scale in prop::collection::vec(1e-3f64..1e3, 3),
            values in prop::collection::vec(-1e4f64..1e4, 12),
        ) {
            let a = Affine { offset, scale };
            let t = Tensor::new(vec![4, 3], values).unwrap();
            let back = a.denormalize(&a.normalize(&t).unwrap()).unwrap();
            for (x, y) in t.data().iter().zip(back.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}
