//! Feature similarity calibration: support features are re-weighted by a
//! support→query similarity attention and added back to themselves.
//!
//! With `U_s`, `U_q` the (H·W)×D pixel-row views of the two maps:
//!
//! ```text
//! A   = softmax_rows(U_s · U_qᵀ)
//! out = (A · U_s) / (‖U_s‖_F · ‖U_q‖_F) + U_s
//! ```

use crate::error::{BroError, Result};
use crate::tensor::{
    frobenius_norm, from_pixel_rows, matmul, matmul_nt, matmul_tn, softmax_rows,
    softmax_rows_backward, to_pixel_rows, Tensor,
};

/// Calibrated support feature map.
#[derive(Clone, Debug)]
pub struct CalibratedFeature {
    pub values: Tensor,
    pub source_shape: (usize, usize, usize),
}

/// Intermediates kept from the forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct FeacCache {
    u_s: Tensor,
    u_q: Tensor,
    attention: Tensor,
    attended: Tensor,
    norm_s: f64,
    norm_q: f64,
    shape: (usize, usize, usize),
}

impl FeacCache {
    /// Row-stochastic P×P attention matrix `A`.
    pub fn attention(&self) -> &Tensor {
        &self.attention
    }

    /// Gradients with respect to `(f_s, f_q)` given the gradient of the output map.
    pub fn backward(&self, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, h, w) = self.shape;
        let g_y = to_pixel_rows(grad_out)?;
        let c = 1.0 / (self.norm_s * self.norm_q);

        // residual path
        let mut g_us = g_y.clone();
        let g_m = g_y.scale(c);
        g_us.add_scaled(&matmul_tn(&self.attention, &g_m)?, 1.0)?;
        let g_a = matmul_nt(&g_m, &self.u_s)?;
        let g_s = softmax_rows_backward(&self.attention, &g_a)?;
        g_us.add_scaled(&matmul(&g_s, &self.u_q)?, 1.0)?;
        let mut g_uq = matmul_tn(&g_s, &self.u_s)?;

        // c = 1 / (n_s n_q)
        let g_c = g_y.dot(&self.attended)?;
        g_us.add_scaled(&self.u_s, -g_c * c / (self.norm_s * self.norm_s))?;
        g_uq.add_scaled(&self.u_q, -g_c * c / (self.norm_q * self.norm_q))?;

        Ok((from_pixel_rows(&g_us, h, w)?, from_pixel_rows(&g_uq, h, w)?))
    }
}

pub fn calibrate(f_s: &Tensor, f_q: &Tensor) -> Result<CalibratedFeature> {
    calibrate_with_cache(f_s, f_q).map(|(out, _)| out)
}

pub fn calibrate_with_cache(f_s: &Tensor, f_q: &Tensor) -> Result<(CalibratedFeature, FeacCache)> {
    let shape = f_s.dims3()?;
    if f_q.shape() != f_s.shape() {
        return Err(BroError::Dimension {
            op: "calibrate",
            left: f_s.shape().to_vec(),
            right: f_q.shape().to_vec(),
        });
    }
    let u_s = to_pixel_rows(f_s)?;
    let u_q = to_pixel_rows(f_q)?;
    let norm_s = frobenius_norm(&u_s);
    let norm_q = frobenius_norm(&u_q);
    if norm_s == 0.0 || norm_q == 0.0 {
        return Err(BroError::degenerate(
            "calibrate",
            format!("zero-norm feature map (‖U_s‖={norm_s}, ‖U_q‖={norm_q})"),
        ));
    }
    let attention = softmax_rows(&matmul_nt(&u_s, &u_q)?)?;
    let attended = matmul(&attention, &u_s)?;
    let mut out = u_s.clone();
    out.add_scaled(&attended, 1.0 / (norm_s * norm_q))?;
    let (_, h, w) = shape;
    let values = from_pixel_rows(&out, h, w)?;
    Ok((
        CalibratedFeature {
            values,
            source_shape: shape,
        },
        FeacCache {
            u_s,
            u_q,
            attention,
            attended,
            norm_s,
            norm_q,
            shape,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{fd_gradient, relative_error};
    use crate::testutil::random_tensor as t;

    #[test]
    fn scalar_case() {
        let f_s = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let f_q = Tensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        let out = calibrate(&f_s, &f_q).unwrap();
        assert!((out.values.data()[0] - (2.0 / 6.0 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn single_pixel_closed_form() {
        let f_s = Tensor::new(vec![3, 1, 1], vec![1.0, -2.0, 0.5]).unwrap();
        let f_q = Tensor::new(vec![3, 1, 1], vec![0.2, 0.1, 4.0]).unwrap();
        let k = 1.0 + 1.0 / (frobenius_norm(&f_s) * frobenius_norm(&f_q));
        let out = calibrate(&f_s, &f_q).unwrap();
        for (o, s) in out.values.data().iter().zip(f_s.data()) {
            assert!((o - s * k).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_contract_and_errors() {
        let out = calibrate(&t(&[4, 3, 3], 1), &t(&[4, 3, 3], 2)).unwrap();
        assert_eq!(out.values.shape(), &[4, 3, 3]);
        assert_eq!(out.source_shape, (4, 3, 3));
        assert!(matches!(
            calibrate(&Tensor::zeros(&[2, 2, 2]), &t(&[2, 2, 2], 3)),
            Err(BroError::Degenerate { .. })
        ));
        assert!(matches!(
            calibrate(&t(&[2, 2, 2], 1), &t(&[2, 2, 1], 3)),
            Err(BroError::Dimension { .. })
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let f_s = t(&[3, 2, 3], 11);
        let f_q = t(&[3, 2, 3], 12);
        let probe = t(&[3, 2, 3], 13);
        let (_, cache) = calibrate_with_cache(&f_s, &f_q).unwrap();
        let (g_s, g_q) = cache.backward(&probe).unwrap();
        let n_s = fd_gradient(|x| calibrate(x, &f_q)?.values.dot(&probe), &f_s, 1e-5).unwrap();
        let n_q = fd_gradient(|x| calibrate(&f_s, x)?.values.dot(&probe), &f_q, 1e-5).unwrap();
        assert!(relative_error(&g_s, &n_s) < 1e-7);
        assert!(relative_error(&g_q, &n_q) < 1e-7);
    }
}
