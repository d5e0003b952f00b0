//! Uniform periodic grids in position and momentum, the symmetric
//! position<->momentum transform pair, and spectral derivatives.
//!
//! Conventions (1D, symmetric normalization):
//!
//! ```text
//! phi(p) = (2*pi*hbar)^(-1/2) * Integral psi(x) exp(-i p x / hbar) dx
//! psi(x) = (2*pi*hbar)^(-1/2) * Integral phi(p) exp(+i p x / hbar) dp
//! ```
//!
//! Both integrals are evaluated by the rectangle rule, which is exact for
//! band-limited periodic samples, so the two directions invert each other to
//! rounding and Parseval holds on the grid: sum |phi|^2 dp = sum |psi|^2 dx.
//!
//! Momentum samples are stored in ascending order, p_j = (j - n/2) * dp with
//! dp = 2*pi*hbar / (n * dx). The j = 0 entry is the unpaired Nyquist mode.

use std::cell::RefCell;

use ndarray::Array1;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const TAU: f64 = std::f64::consts::TAU;

/// Uniform periodic discretization of the position axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialGrid {
    /// Point count; a power of two, at least 8.
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    /// Spacing (x_max - x_min) / n; sample i sits at x_min + i * dx.
    pub dx: f64,
}

impl SpatialGrid {
    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx
    }

    pub fn points(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n).map(|i| self.x(i)))
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    /// Index arithmetic wraps modulo n (periodic topology).
    pub fn wrap(&self, i: isize) -> usize {
        i.rem_euclid(self.n as isize) as usize
    }

    /// The conjugate momentum grid with dp * dx * n = 2*pi*hbar.
    pub fn conjugate(&self, hbar: f64) -> MomentumGrid {
        MomentumGrid {
            n: self.n,
            dp: TAU * hbar / (self.n as f64 * self.dx),
            hbar,
        }
    }
}

/// Uniform grid on the momentum axis conjugate to a [`SpatialGrid`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumGrid {
    pub n: usize,
    /// Spacing 2*pi*hbar / (n * dx).
    pub dp: f64,
    pub hbar: f64,
}

impl MomentumGrid {
    /// Sample j in ascending order: p_j = (j - n/2) * dp.
    pub fn p(&self, j: usize) -> f64 {
        (j as f64 - (self.n / 2) as f64) * self.dp
    }

    pub fn points(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n).map(|j| self.p(j)))
    }

    pub fn p_max(&self) -> f64 {
        (self.n / 2) as f64 * self.dp
    }

    /// FFT bin holding the ascending-order sample j (k = j - n/2 mod n).
    pub(crate) fn fft_bin(&self, j: usize) -> usize {
        (j + self.n / 2) % self.n
    }
}

/// Complex samples on a spatial grid.
#[derive(Clone, Debug)]
pub struct SpatialField {
    pub grid: SpatialGrid,
    pub values: Array1<Complex64>,
}

/// Complex samples on a momentum grid, ascending order.
#[derive(Clone, Debug)]
pub struct MomentumField {
    pub grid: MomentumGrid,
    pub values: Array1<Complex64>,
}

impl SpatialField {
    pub fn new(grid: SpatialGrid, values: Array1<Complex64>) -> Result<Self> {
        if values.len() != grid.n {
            return Err(Error::Invalid(format!(
                "field length {} does not match grid n={}",
                values.len(),
                grid.n
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// sum |psi|^2 dx
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx
    }
}

impl MomentumField {
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// sum |phi|^2 dp
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dp
    }
}

/// Builds a conjugate grid pair. The momentum spacing is forced by the
/// periodic box: dp = 2*pi*hbar / (n * dx).
pub fn make_grids(n: usize, x_min: f64, x_max: f64, hbar: f64) -> Result<(SpatialGrid, MomentumGrid)> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::InvalidGrid(format!(
            "n must be a power of two >= 8, got {n}"
        )));
    }
    if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
        return Err(Error::InvalidGrid(format!(
            "domain [{x_min}, {x_max}) is empty or not finite"
        )));
    }
    if !(hbar > 0.0) {
        return Err(Error::InvalidGrid(format!("hbar must be positive, got {hbar}")));
    }
    let dx = (x_max - x_min) / n as f64;
    let grid = SpatialGrid { n, x_min, x_max, dx };
    Ok((grid, grid.conjugate(hbar)))
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn fft_forward(buf: &mut [Complex64]) {
    let n = buf.len();
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n).process(buf));
}

pub(crate) fn fft_inverse(buf: &mut [Complex64]) {
    let n = buf.len();
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n).process(buf));
}

/// Signed mode number of FFT bin m: 0..n/2-1 positive, n/2..n-1 negative,
/// with the unpaired Nyquist bin mapped to -n/2.
#[inline]
pub(crate) fn mode_of_bin(m: usize, n: usize) -> i64 {
    if m < n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// phi(p_j) on the conjugate grid, rectangle-rule transform of `psi`.
pub fn to_momentum(psi: &SpatialField, hbar: f64) -> MomentumField {
    let g = psi.grid;
    let n = g.n;
    let pg = g.conjugate(hbar);
    let mut buf: Vec<Complex64> = psi.values.to_vec();
    fft_forward(&mut buf);
    let scale = g.dx / (TAU * hbar).sqrt();
    let values = Array1::from_iter((0..n).map(|j| {
        let p = pg.p(j);
        let phase = Complex64::from_polar(scale, -p * g.x_min / hbar);
        buf[pg.fft_bin(j)] * phase
    }));
    MomentumField { grid: pg, values }
}

/// Inverse transform back onto `x_grid`. Errors if the grids are not a
/// conjugate pair.
pub fn to_position(phi: &MomentumField, x_grid: &SpatialGrid) -> Result<SpatialField> {
    let pg = phi.grid;
    let n = pg.n;
    if x_grid.n != n {
        return Err(Error::InvalidGrid(format!(
            "momentum grid n={} does not match spatial grid n={}",
            n, x_grid.n
        )));
    }
    let product = pg.dp * x_grid.dx * n as f64;
    if ((product - TAU * pg.hbar) / (TAU * pg.hbar)).abs() > 1e-12 {
        return Err(Error::InvalidGrid(
            "grids are not conjugate: dp*dx*n != 2*pi*hbar".into(),
        ));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        let p = pg.p(j);
        let phase = Complex64::from_polar(1.0, p * x_grid.x_min / pg.hbar);
        buf[pg.fft_bin(j)] = phi.values[j] * phase;
    }
    fft_inverse(&mut buf);
    let scale = pg.dp / (TAU * pg.hbar).sqrt();
    let values = Array1::from_iter(buf.into_iter().map(|z| z * scale));
    Ok(SpatialField { grid: *x_grid, values })
}

/// n-th spectral derivative on a uniform periodic axis. Exact for fields
/// supported on the resolvable modes: D^n exp(ikx) = (ik)^n exp(ikx).
pub(crate) fn derivative_uniform(
    values: &Array1<Complex64>,
    spacing: f64,
    order: u32,
) -> Array1<Complex64> {
    let n = values.len();
    let mut buf: Vec<Complex64> = values.to_vec();
    fft_forward(&mut buf);
    let base = TAU / (n as f64 * spacing);
    for (m, v) in buf.iter_mut().enumerate() {
        let k = mode_of_bin(m, n) as f64 * base;
        *v *= Complex64::new(0.0, k).powu(order);
    }
    fft_inverse(&mut buf);
    let inv_n = 1.0 / n as f64;
    Array1::from_iter(buf.into_iter().map(|z| z * inv_n))
}

/// Spectral derivative of order 1..=4 on a spatial field.
pub fn spectral_derivative(field: &SpatialField, order: u32) -> Result<SpatialField> {
    if !(1..=4).contains(&order) {
        return Err(Error::OrderOutOfRange(order));
    }
    Ok(SpatialField {
        grid: field.grid,
        values: derivative_uniform(&field.values, field.grid.dx, order),
    })
}

/// Spectral derivative along the momentum axis (ascending-order samples).
pub fn spectral_derivative_p(field: &MomentumField, order: u32) -> Result<MomentumField> {
    if !(1..=4).contains(&order) {
        return Err(Error::OrderOutOfRange(order));
    }
    // Ascending order is a cyclic shift of FFT order, and a shift in sample
    // index is a pure phase on the transform side, so the same kernel applies.
    Ok(MomentumField {
        grid: field.grid,
        values: derivative_uniform(&field.values, field.grid.dp, order),
    })
}

/// Real-part derivative of a real field (complex embedding, real output).
pub(crate) fn derivative_real(values: &Array1<f64>, spacing: f64, order: u32) -> Array1<f64> {
    let complex = values.mapv(|v| Complex64::new(v, 0.0));
    derivative_uniform(&complex, spacing, order).mapv(|z| z.re)
}
