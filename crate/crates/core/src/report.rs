//! Residual bookkeeping: cell-weighted norms and convergence-order fits.

use serde::Serialize;

/// Grid parameters plus L2 and L-infinity norms of one residual field.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    /// Short identifier of the law being checked.
    pub equation: String,
    pub n: usize,
    pub dx: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Cell-weighted L2 norm, sqrt(sum |r|^2 * cell).
    pub l2: f64,
    pub linf: f64,
    /// Description of the cells excluded from the norms.
    pub mask: String,
}

impl ResidualReport {
    pub fn is_finite(&self) -> bool {
        self.l2.is_finite() && self.linf.is_finite() && self.l2 >= 0.0 && self.linf >= 0.0
    }
}

/// Cell-weighted L2 and L-infinity over the cells where `mask` is true.
pub fn masked_norms<'a, I>(residual: I, mask: &[bool], cell: f64) -> (f64, f64)
where
    I: IntoIterator<Item = &'a f64>,
{
    let mut sum = 0.0;
    let mut linf: f64 = 0.0;
    for (r, &m) in residual.into_iter().zip(mask) {
        if m {
            sum += r * r * cell;
            linf = linf.max(r.abs());
        }
    }
    (sum.sqrt(), linf)
}

/// Norms of a complex residual over the full grid.
pub fn complex_norms<'a, I>(residual: I, cell: f64) -> (f64, f64)
where
    I: IntoIterator<Item = &'a num_complex::Complex64>,
{
    let mut sum = 0.0;
    let mut linf: f64 = 0.0;
    for r in residual {
        let a = r.norm_sqr();
        sum += a * cell;
        linf = linf.max(a.sqrt());
    }
    (sum.sqrt(), linf)
}

/// Least-squares convergence order from norms on successively halved steps:
/// fits log2(e_i) against the level index and returns the negated slope.
/// Two levels reduce to the familiar log2(e0/e1).
pub fn fit_order(norms: &[f64]) -> f64 {
    let k = norms.len();
    assert!(k >= 2, "need at least two levels to fit an order");
    let xs: Vec<f64> = (0..k).map(|i| i as f64).collect();
    let ys: Vec<f64> = norms.iter().map(|e| e.log2()).collect();
    let xbar = xs.iter().sum::<f64>() / k as f64;
    let ybar = ys.iter().sum::<f64>() / k as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..k {
        num += (xs[i] - xbar) * (ys[i] - ybar);
        den += (xs[i] - xbar) * (xs[i] - xbar);
    }
    -num / den
}
