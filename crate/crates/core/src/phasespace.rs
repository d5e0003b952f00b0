//! The complex phase-space distribution Q(x, p) and its moments.
//!
//! Construction (1D, symmetric transform convention):
//!
//! ```text
//! Q(x, p) = (2 pi hbar)^(-1/2) psi(x) exp(-i p x / hbar) phi*(p)
//! f(x, p) = Re Q(x, p)
//! q(x, p) = (2 pi hbar)^(-1/2) psi(x) exp(-i p x / hbar)
//! ```
//!
//! On a conjugate grid pair the marginals are exact: integrating Q over p
//! returns |psi|^2, integrating over x returns |phi|^2, and the full real
//! integral is the norm. Momentum moments of Q reduce to bilinear forms of
//! psi, sum_j Q p^n dp = (i hbar)^n psi d^n(psi*), which is what ties the
//! phase-space picture back to the hydrodynamic one.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grids::{MomentumGrid, SpatialGrid, TAU};
use crate::schrodinger::WaveField;

/// Complex distribution samples Q[i, j] = Q(x_i, p_j).
#[derive(Clone, Debug)]
pub struct PhaseSpaceField {
    pub x_grid: SpatialGrid,
    pub p_grid: MomentumGrid,
    pub mass: f64,
    pub hbar: f64,
    pub values: Array2<Complex64>,
}

/// The local factor q(x, p); |q| = |psi| / sqrt(2 pi hbar) independent of p.
#[derive(Clone, Debug)]
pub struct LocalQField {
    pub x_grid: SpatialGrid,
    pub p_grid: MomentumGrid,
    pub hbar: f64,
    pub values: Array2<Complex64>,
}

/// Sign diagnostics of f = Re Q. Negative regions are expected for
/// superposition states and are reported, never treated as an error.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct NegativityReport {
    pub min_value: f64,
    /// Fraction of |f| mass carried by cells with f < 0.
    pub negative_mass_fraction: f64,
}

pub(crate) fn local_q_values(psi: &WaveField) -> Array2<Complex64> {
    let n = psi.grid.n;
    let p_grid = psi.grid.conjugate(psi.hbar);
    let scale = (TAU * psi.hbar).powf(-0.5);
    let mut q = Array2::zeros((n, n));
    for i in 0..n {
        let x = psi.grid.x(i);
        let base = psi.values[i] * scale;
        for j in 0..n {
            q[(i, j)] = base * Complex64::from_polar(1.0, -p_grid.p(j) * x / psi.hbar);
        }
    }
    q
}

/// q(x, p) sampled on the product grid.
pub fn local_q(psi: &WaveField) -> LocalQField {
    LocalQField {
        x_grid: psi.grid,
        p_grid: psi.grid.conjugate(psi.hbar),
        hbar: psi.hbar,
        values: local_q_values(psi),
    }
}

/// Builds Q from psi and its momentum transform.
pub fn build_q(psi: &WaveField) -> PhaseSpaceField {
    let n = psi.grid.n;
    let phi = psi.momentum_representation();
    let scale = (TAU * psi.hbar).powf(-0.5);
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        let x = psi.grid.x(i);
        let base = psi.values[i] * scale;
        for j in 0..n {
            let kernel = Complex64::from_polar(1.0, -phi.grid.p(j) * x / psi.hbar);
            values[(i, j)] = base * kernel * phi.values[j].conj();
        }
    }
    PhaseSpaceField {
        x_grid: psi.grid,
        p_grid: phi.grid,
        mass: psi.mass,
        hbar: psi.hbar,
        values,
    }
}

/// Builds Q through the local-factor route, Q = q(x,p) * sum_x' q*(x',p) dx,
/// with the inner sum evaluated by direct summation (no FFT). Agrees with
/// [`build_q`] to rounding; kept as the independent construction route.
pub fn build_q_via_local(psi: &WaveField) -> PhaseSpaceField {
    let n = psi.grid.n;
    let q = local_q_values(psi);
    let dx = psi.grid.dx;
    let mut column_sums = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += q[(i, j)].conj();
        }
        column_sums[j] = acc * dx;
    }
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            values[(i, j)] = q[(i, j)] * column_sums[j];
        }
    }
    PhaseSpaceField {
        x_grid: psi.grid,
        p_grid: psi.grid.conjugate(psi.hbar),
        mass: psi.mass,
        hbar: psi.hbar,
        values,
    }
}

impl PhaseSpaceField {
    pub fn n(&self) -> usize {
        self.x_grid.n
    }

    /// Phase-space cell measure dx * dp.
    pub fn cell(&self) -> f64 {
        self.x_grid.dx * self.p_grid.dp
    }

    /// f = Re Q.
    pub fn distribution(&self) -> Array2<f64> {
        self.values.mapv(|z| z.re)
    }

    pub fn imaginary_part(&self) -> Array2<f64> {
        self.values.mapv(|z| z.im)
    }

    pub fn negativity(&self) -> NegativityReport {
        let mut min_value = f64::INFINITY;
        let mut neg = 0.0;
        let mut tot = 0.0;
        for z in self.values.iter() {
            let f = z.re;
            min_value = min_value.min(f);
            tot += f.abs();
            if f < 0.0 {
                neg += -f;
            }
        }
        NegativityReport { min_value, negative_mass_fraction: neg / tot }
    }

    /// Momentum marginal sum_j Q dp per row: returns (real part, largest
    /// absolute imaginary residue). The real part equals rho(x).
    pub fn marginal_density(&self) -> (Array1<f64>, f64) {
        let n = self.n();
        let mut out = Array1::zeros(n);
        let mut imag: f64 = 0.0;
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += self.values[(i, j)];
            }
            acc *= self.p_grid.dp;
            out[i] = acc.re;
            imag = imag.max(acc.im.abs());
        }
        (out, imag)
    }

    /// Position marginal sum_i Q dx per column; the real part equals |phi|^2.
    pub fn marginal_momentum(&self) -> (Array1<f64>, f64) {
        let n = self.n();
        let mut out = Array1::zeros(n);
        let mut imag: f64 = 0.0;
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..n {
                acc += self.values[(i, j)];
            }
            acc *= self.x_grid.dx;
            out[j] = acc.re;
            imag = imag.max(acc.im.abs());
        }
        (out, imag)
    }

    /// sum_ij Re Q dx dp; 1 for a normalized state.
    pub fn total_mass(&self) -> f64 {
        self.values.iter().map(|z| z.re).sum::<f64>() * self.cell()
    }

    /// sum_j Im Q dp per row (vanishes: it is Im rho).
    pub fn im_integral_over_p(&self) -> Array1<f64> {
        let n = self.n();
        Array1::from_iter((0..n).map(|i| {
            (0..n).map(|j| self.values[(i, j)].im).sum::<f64>() * self.p_grid.dp
        }))
    }

    /// sum_i Im Q dx per column (vanishes: it is Im |phi|^2).
    pub fn im_integral_over_x(&self) -> Array1<f64> {
        let n = self.n();
        Array1::from_iter((0..n).map(|j| {
            (0..n).map(|i| self.values[(i, j)].im).sum::<f64>() * self.x_grid.dx
        }))
    }

    /// Complex momentum moment sum_j Q p^n dp per row; equals the bilinear
    /// form (i hbar)^n psi d^n(psi*) on the grid.
    pub fn momentum_power_integral(&self, order: u32) -> Array1<Complex64> {
        let n = self.n();
        let mut out = Array1::zeros(n);
        for i in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                acc += self.values[(i, j)] * self.p_grid.p(j).powi(order as i32);
            }
            out[i] = acc * self.p_grid.dp;
        }
        out
    }
}

/// Quadrature moments of f = Re Q: mean velocity, mean kinetic energy per
/// particle, and the raw second momentum moment (pressure, no 1/rho).
#[derive(Clone, Debug)]
pub struct PhaseSpaceMoments {
    pub u: Array1<f64>,
    pub k: Array1<f64>,
    /// P(x) = sum_j Re Q p^2 dp.
    pub pressure: Array1<f64>,
    pub mask: Vec<bool>,
}

/// Velocity-space moments of f by direct quadrature; masked where the
/// density marginal falls below `rho_min_frac` of its peak.
pub fn moments(q: &PhaseSpaceField, rho_min_frac: f64) -> PhaseSpaceMoments {
    let n = q.n();
    let f = q.distribution();
    let dp = q.p_grid.dp;
    let mass = q.mass;
    let mut m0 = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let p = q.p_grid.p(j);
            let fij = f[(i, j)];
            m0[i] += fij;
            m1[i] += fij * p;
            m2[i] += fij * p * p;
        }
        m0[i] *= dp;
        m1[i] *= dp;
        m2[i] *= dp;
    }
    let peak = m0.iter().copied().fold(0.0, f64::max);
    let floor = rho_min_frac * peak;
    let mut u = Array1::zeros(n);
    let mut k = Array1::zeros(n);
    let mut pressure = Array1::zeros(n);
    let mut mask = vec![false; n];
    for i in 0..n {
        pressure[i] = m2[i];
        if m0[i] < floor {
            u[i] = f64::NAN;
            k[i] = f64::NAN;
            continue;
        }
        mask[i] = true;
        u[i] = m1[i] / (mass * m0[i]);
        k[i] = m2[i] / (2.0 * mass * m0[i]);
    }
    PhaseSpaceMoments { u, k, pressure, mask }
}

/// Second central momentum moment of f, the classical internal energy
/// eps_c(x) = (m/2) sum f (p/m - u)^2 dp / sum f dp. Numerically this must
/// coincide with the curvature form of eps extracted from psi.
pub fn classical_internal_energy(
    q: &PhaseSpaceField,
    rho_min_frac: f64,
) -> (Array1<f64>, Vec<bool>) {
    let n = q.n();
    let f = q.distribution();
    let dp = q.p_grid.dp;
    let mass = q.mass;
    let mut m0 = vec![0.0; n];
    let mut m1 = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let p = q.p_grid.p(j);
            m0[i] += f[(i, j)];
            m1[i] += f[(i, j)] * p;
        }
        m0[i] *= dp;
        m1[i] *= dp;
    }
    let peak = m0.iter().copied().fold(0.0, f64::max);
    let floor = rho_min_frac * peak;
    let mut eps_c = Array1::zeros(n);
    let mut mask = vec![false; n];
    for i in 0..n {
        if m0[i] < floor {
            eps_c[i] = f64::NAN;
            continue;
        }
        mask[i] = true;
        let u = m1[i] / (mass * m0[i]);
        let mut acc = 0.0;
        for j in 0..n {
            let w = q.p_grid.p(j) / mass - u;
            acc += f[(i, j)] * w * w;
        }
        eps_c[i] = 0.5 * mass * acc * dp / m0[i];
    }
    (eps_c, mask)
}

/// Momentum-dependent statistical average of the potential,
/// <V>(p) = sum_x V(x) Q*(x, p) dx / |phi(p)|^2, complex in general.
#[derive(Clone, Debug)]
pub struct EffectivePotential {
    pub values: Array1<Complex64>,
    pub mask: Vec<bool>,
    /// Mask threshold applied to |phi(p)|^2.
    pub threshold: f64,
}

pub const PHI_SQ_MASK_THRESHOLD: f64 = 1e-12;

/// Evaluates <V>(p) with V sampled on the spatial grid. Masked (NaN) where
/// |phi(p)|^2 < 1e-12; for constant V the unmasked values equal that
/// constant exactly.
pub fn effective_potential_avg(q: &PhaseSpaceField, v: &Array1<f64>) -> Result<EffectivePotential> {
    let n = q.n();
    if v.len() != n {
        return Err(Error::Invalid(format!(
            "potential sample count {} does not match grid n={n}",
            v.len()
        )));
    }
    let (phi_sq, _) = q.marginal_momentum();
    let dx = q.x_grid.dx;
    let mut values = Array1::zeros(n);
    let mut mask = vec![false; n];
    for j in 0..n {
        if phi_sq[j] < PHI_SQ_MASK_THRESHOLD {
            values[j] = Complex64::new(f64::NAN, f64::NAN);
            continue;
        }
        mask[j] = true;
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += q.values[(i, j)].conj() * v[i];
        }
        values[j] = acc * dx / phi_sq[j];
    }
    Ok(EffectivePotential { values, mask, threshold: PHI_SQ_MASK_THRESHOLD })
}

/// Action-integral route to the distribution:
///
/// ```text
/// f_S(x, p) = C * Re sum_x' [rho(x) rho(x')]^(1/2) exp(i S / hbar) dx'
/// S = hbar (phase(x) - phase(x')) - p (x - x')
/// ```
///
/// The square-root-and-phase product is evaluated through the bilinear
/// psi(x) psi*(x'), never through an unwrapped phase. With
/// `include_prefactor` the constant C is (2 pi hbar)^(-1) and f_S equals
/// f = Re Q; without it C is (2 pi hbar)^(-1/2), the raw integral form,
/// which is (2 pi hbar)^(1/2) times larger.
pub fn action_form_f(psi: &WaveField, include_prefactor: bool) -> Array2<f64> {
    let n = psi.grid.n;
    let p_grid = psi.grid.conjugate(psi.hbar);
    let dx = psi.grid.dx;
    let hbar = psi.hbar;
    // inner sum over x' by direct summation, independent of the FFT path
    let mut inner = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        let p = p_grid.p(j);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += psi.values[i].conj() * Complex64::from_polar(1.0, p * psi.grid.x(i) / hbar);
        }
        inner[j] = acc * dx;
    }
    let prefactor = if include_prefactor {
        (TAU * hbar).recip()
    } else {
        (TAU * hbar).powf(-0.5)
    };
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let x = psi.grid.x(i);
        for j in 0..n {
            let p = p_grid.p(j);
            let outer = psi.values[i] * Complex64::from_polar(1.0, -p * x / hbar);
            out[(i, j)] = prefactor * (outer * inner[j]).re;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::make_grids;
    use crate::schrodinger::{analytic_state, bohm_decompose, AnalyticState, RHO_MIN_FRAC_DEFAULT};
    use approx::assert_abs_diff_eq;
    use ndarray::Array1;

    fn gaussian(p0: f64) -> WaveField {
        let (grid, _) = make_grids(256, -16.0, 16.0, 1.0).unwrap();
        analytic_state(
            &AnalyticState::FreeGaussian { sigma: 1.0, x0: 0.0, p0 },
            &grid,
            1.0,
            1.0,
            0.0,
        )
        .unwrap()
    }

    fn two_packet(separation: f64) -> WaveField {
        let (grid, _) = make_grids(256, -16.0, 16.0, 1.0).unwrap();
        let sigma = 1.0;
        let amp = (TAU * sigma * sigma).powf(-0.25);
        let values = Array1::from_iter((0..grid.n).map(|i| {
            let x = grid.x(i);
            let left = (-(x + separation).powi(2) / (4.0 * sigma * sigma)).exp();
            let right = (-(x - separation).powi(2) / (4.0 * sigma * sigma)).exp();
            Complex64::new(amp * (left + right), 0.0)
        }));
        WaveField::normalized(grid, values, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn distribution_peak_value() {
        // f(0, 0) = psi(0) phi(0) / sqrt(2 pi) = 1 / (sqrt(2) pi)
        let q = build_q(&gaussian(0.0));
        let i0 = q.x_grid.n / 2;
        let j0 = q.p_grid.n / 2;
        assert_abs_diff_eq!(
            q.values[(i0, j0)].re,
            std::f64::consts::FRAC_1_SQRT_2 / std::f64::consts::PI,
            epsilon = 1e-9
        );
    }

    #[test]
    fn construction_routes_agree() {
        let psi = gaussian(1.0);
        let a = build_q(&psi);
        let b = build_q_via_local(&psi);
        let mut max_diff: f64 = 0.0;
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            max_diff = max_diff.max((x - y).norm());
        }
        assert!(max_diff <= 1e-12, "route difference {max_diff:.3e}");
    }

    #[test]
    fn normalization_and_marginals() {
        let q = build_q(&gaussian(0.7));
        assert!((q.total_mass() - 1.0).abs() <= 1e-9);

        let psi = gaussian(0.7);
        let rho = psi.density();
        let (marg_rho, imag_rho) = q.marginal_density();
        assert!(imag_rho <= 1e-10);
        let scale = rho.iter().copied().fold(0.0, f64::max);
        for i in 0..q.n() {
            assert!((marg_rho[i] - rho[i]).abs() / scale <= 1e-10);
        }

        let phi = psi.momentum_representation();
        let (marg_phi, imag_phi) = q.marginal_momentum();
        assert!(imag_phi <= 1e-10);
        let pscale = phi.values.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
        for j in 0..q.n() {
            assert!((marg_phi[j] - phi.values[j].norm_sqr()).abs() / pscale <= 1e-10);
        }
    }

    #[test]
    fn real_even_state_is_even_in_p() {
        let q = build_q(&gaussian(0.0));
        let f = q.distribution();
        let n = q.n();
        for i in 0..n {
            for j in 1..n / 2 {
                // p_j and -p_j sit at indices n/2 + j and n/2 - j
                let plus = f[(i, n / 2 + j)];
                let minus = f[(i, n / 2 - j)];
                assert!((plus - minus).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn interference_produces_negative_f() {
        let q = build_q(&two_packet(3.0));
        let neg = q.negativity();
        assert!(neg.min_value < -1e-3, "min f = {}", neg.min_value);
        assert!(neg.negative_mass_fraction > 0.01);
    }

    #[test]
    fn im_q_null_integrals() {
        for psi in [gaussian(0.8), two_packet(3.0)] {
            let q = build_q(&psi);
            let over_p = q.im_integral_over_p();
            let over_x = q.im_integral_over_x();
            assert!(over_p.iter().all(|v| v.abs() <= 1e-9));
            assert!(over_x.iter().all(|v| v.abs() <= 1e-9));
        }
    }

    #[test]
    fn moment_quadratures_match_bilinear_forms() {
        let psi = gaussian(1.3);
        let q = build_q(&psi);
        let hbar = psi.hbar;
        for order in 0..=2u32 {
            let quad = q.momentum_power_integral(order);
            let dn = if order == 0 {
                psi.values.clone()
            } else {
                psi.derivative(order)
            };
            let factor = Complex64::new(0.0, hbar).powu(order);
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..q.n() {
                let bilinear = factor * psi.values[i] * dn[i].conj();
                num += (quad[i] - bilinear).norm_sqr();
                den += bilinear.norm_sqr();
            }
            let rel = (num / den).sqrt();
            assert!(rel <= 1e-10, "order {order}: relative L2 {rel:.3e}");
        }
    }

    #[test]
    fn boosted_gaussian_has_uniform_velocity() {
        let q = build_q(&gaussian(1.0));
        let m = moments(&q, RHO_MIN_FRAC_DEFAULT);
        for i in 0..q.n() {
            if m.mask[i] {
                assert!((m.u[i] - 1.0).abs() <= 1e-9, "u = {} at i = {i}", m.u[i]);
            }
        }
    }

    #[test]
    fn mean_kinetic_energy_of_gaussian() {
        let psi = gaussian(0.0);
        let q = build_q(&psi);
        let m = moments(&q, RHO_MIN_FRAC_DEFAULT);
        let rho = psi.density();
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..q.n() {
            if m.mask[i] {
                num += rho[i] * m.k[i];
                den += rho[i];
            }
        }
        assert_abs_diff_eq!(num / den, 0.125, epsilon = 1e-9);
    }

    #[test]
    fn velocity_routes_agree() {
        // quadrature u equals the bilinear-form u from the wavefunction
        let psi = gaussian(1.0);
        let q = build_q(&psi);
        let m = moments(&q, RHO_MIN_FRAC_DEFAULT);
        let bohm = bohm_decompose(&psi, RHO_MIN_FRAC_DEFAULT);
        for i in 0..q.n() {
            if m.mask[i] && bohm.mask[i] {
                assert!((m.u[i] - bohm.u[i]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn internal_energy_equals_bohm_form() {
        for psi in [gaussian(0.0), gaussian(1.0), two_packet(3.0)] {
            let q = build_q(&psi);
            let (eps_c, mask) = classical_internal_energy(&q, RHO_MIN_FRAC_DEFAULT);
            let bohm = bohm_decompose(&psi, RHO_MIN_FRAC_DEFAULT);
            for i in 0..q.n() {
                if mask[i] && bohm.mask[i] {
                    assert!(
                        (eps_c[i] - bohm.eps[i]).abs() <= 1e-8,
                        "eps_c {} vs eps {} at i={i}",
                        eps_c[i],
                        bohm.eps[i]
                    );
                }
            }
        }
    }

    #[test]
    fn internal_energy_is_boost_invariant() {
        let q0 = build_q(&gaussian(0.0));
        let q1 = build_q(&gaussian(1.0));
        let (e0, m0) = classical_internal_energy(&q0, RHO_MIN_FRAC_DEFAULT);
        let (e1, m1) = classical_internal_energy(&q1, RHO_MIN_FRAC_DEFAULT);
        for i in 0..q0.n() {
            if m0[i] && m1[i] {
                assert!((e0[i] - e1[i]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn internal_energy_center_value() {
        let q = build_q(&gaussian(0.0));
        let (eps_c, _) = classical_internal_energy(&q, RHO_MIN_FRAC_DEFAULT);
        // hbar^2/(4 m sigma^2) at the packet center
        assert_abs_diff_eq!(eps_c[q.n() / 2], 0.25, epsilon = 1e-8);
    }

    #[test]
    fn stationary_state_energy_profile() {
        let (grid, _) = make_grids(256, -16.0, 16.0, 1.0).unwrap();
        let psi = analytic_state(&AnalyticState::HoGround { omega: 1.0 }, &grid, 1.0, 1.0, 0.0)
            .unwrap();
        let q = build_q(&psi);
        let (eps_c, mask) = classical_internal_energy(&q, RHO_MIN_FRAC_DEFAULT);
        for i in 0..q.n() {
            if mask[i] {
                let x = grid.x(i);
                assert!((eps_c[i] + 0.5 * x * x - 0.5).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn effective_potential_constant() {
        let q = build_q(&gaussian(0.0));
        let v = Array1::from_elem(q.n(), 3.0);
        let avg = effective_potential_avg(&q, &v).unwrap();
        for j in 0..q.n() {
            if avg.mask[j] {
                assert!((avg.values[j] - Complex64::new(3.0, 0.0)).norm() <= 1e-10);
            }
        }
        assert!(avg.mask.iter().any(|&m| m));
        assert!(avg.mask.iter().any(|&m| !m));
    }

    #[test]
    fn effective_potential_linear_at_zero_momentum() {
        let (grid, pgrid) = make_grids(256, -16.0, 16.0, 1.0).unwrap();
        let psi = analytic_state(
            &AnalyticState::FreeGaussian { sigma: 1.0, x0: 2.0, p0: 0.0 },
            &grid,
            1.0,
            1.0,
            0.0,
        )
        .unwrap();
        let q = build_q(&psi);
        let v = grid.points();
        let avg = effective_potential_avg(&q, &v).unwrap();
        let j0 = pgrid.n / 2;
        assert!(avg.mask[j0]);
        assert!((avg.values[j0] - Complex64::new(2.0, 0.0)).norm() <= 1e-8);
    }

    #[test]
    fn effective_potential_harmonic_ground() {
        let (grid, pgrid) = make_grids(256, -16.0, 16.0, 1.0).unwrap();
        let psi = analytic_state(&AnalyticState::HoGround { omega: 1.0 }, &grid, 1.0, 1.0, 0.0)
            .unwrap();
        let q = build_q(&psi);
        let v = grid.points().mapv(|x| 0.5 * x * x);
        let avg = effective_potential_avg(&q, &v).unwrap();
        let j0 = pgrid.n / 2;
        // quadrature oracle at p = 0: <V> = sum V Q* dx / |phi|^2 evaluated directly
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for i in 0..grid.n {
            num += q.values[(i, j0)].conj() * v[i];
            den += q.values[(i, j0)].re;
        }
        let oracle = num * grid.dx / (den * grid.dx);
        assert!((avg.values[j0] - oracle).norm() <= 1e-8);
        assert!(avg.values[j0].re > 0.0);
    }

    #[test]
    fn action_route_reproduces_distribution() {
        let psi = gaussian(0.6);
        let q = build_q(&psi);
        let f = q.distribution();
        let fs = action_form_f(&psi, true);
        let mut max_diff: f64 = 0.0;
        for (a, b) in f.iter().zip(fs.iter()) {
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff <= 1e-10, "action route L-inf difference {max_diff:.3e}");
    }

    #[test]
    fn action_route_prefactor_scaling() {
        let psi = gaussian(0.0);
        let on = action_form_f(&psi, true);
        let off = action_form_f(&psi, false);
        let expected = (TAU * psi.hbar).sqrt();
        for (a, b) in on.iter().zip(off.iter()) {
            if a.abs() > 1e-12 {
                assert!((b / a - expected).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn action_route_reproduces_interference_ridges() {
        let psi = two_packet(3.0);
        let q = build_q(&psi);
        let f = q.distribution();
        let fs = action_form_f(&psi, true);
        let mut max_diff: f64 = 0.0;
        for (a, b) in f.iter().zip(fs.iter()) {
            max_diff = max_diff.max((a - b).abs());
        }
        assert!(max_diff <= 1e-9);
        let neg = q.negativity();
        assert!(fs.iter().copied().fold(f64::INFINITY, f64::min) < 0.0);
        assert!(neg.min_value < 0.0);
    }

    #[test]
    fn local_q_modulus_is_p_independent() {
        let psi = gaussian(0.9);
        let q = local_q(&psi);
        let scale = (TAU * psi.hbar).sqrt().recip();
        for i in 0..psi.grid.n {
            let expect = psi.values[i].norm() * scale;
            for j in 0..psi.grid.n {
                assert!((q.values[(i, j)].norm() - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn nonlocality_witness() {
        // A local phase twist near x0 = 1 leaves psi(x1) untouched at
        // x1 = -6 but still shifts Q(x1, .) through the momentum factor.
        let psi = gaussian(0.0);
        let grid = psi.grid;
        let twisted_values = Array1::from_iter((0..grid.n).map(|i| {
            let x = grid.x(i);
            let theta = 0.5 * (-(x - 1.0).powi(2) / 0.1).exp();
            psi.values[i] * Complex64::from_polar(1.0, theta)
        }));
        let twisted = WaveField::new(grid, twisted_values, 1.0, 1.0, 0.0).unwrap();
        let i1 = (0..grid.n).find(|&i| (grid.x(i) + 6.0).abs() < 1e-9).unwrap();
        assert_eq!(psi.values[i1], twisted.values[i1], "psi(x1) must be bit-identical");
        let q_before = build_q(&psi);
        let q_after = build_q(&twisted);
        let mut row_change: f64 = 0.0;
        for j in 0..grid.n {
            row_change = row_change.max((q_after.values[(i1, j)] - q_before.values[(i1, j)]).norm());
        }
        assert!(row_change > 1e-6, "row change {row_change:.3e}");
    }
}
