//! Wavefunction evolution and hydrodynamic decomposition.
//!
//! The integrator is a Strang split-step spectral scheme (half kinetic, full
//! potential, half kinetic), second order in dt and exactly norm preserving.
//! Closed-form reference states (spreading Gaussian, oscillator ground state,
//! displaced coherent state) serve as oracles for it.
//!
//! The hydrodynamic fields rho, u, eps, k are extracted through rho-weighted
//! bilinear forms of psi; the phase is never unwrapped, so nodes and branch
//! cuts of arg(psi) cannot contaminate the output. Division by rho only
//! happens where rho >= rho_min_frac * max(rho); everything below that
//! threshold is masked and reported as NaN.

use ndarray::Array1;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grids::{
    derivative_uniform, fft_forward, fft_inverse, mode_of_bin, to_momentum, MomentumField,
    SpatialField, SpatialGrid, TAU,
};

/// Default mask threshold for fields that divide by the density.
pub const RHO_MIN_FRAC_DEFAULT: f64 = 1e-6;

/// Tolerance on the construction-time normalization check.
pub const NORM_TOL: f64 = 1e-9;

/// Boundary amplitude above which a run is flagged as leaking.
pub const BOUNDARY_LEAK_THRESHOLD: f64 = 1e-8;

/// A normalized complex wavefunction sample set with its physical constants.
#[derive(Clone, Debug)]
pub struct WaveField {
    pub grid: SpatialGrid,
    pub values: Array1<Complex64>,
    pub mass: f64,
    pub hbar: f64,
    /// Evolution parameter of this snapshot.
    pub t: f64,
}

impl WaveField {
    /// Builds a wavefield, rejecting unnormalized input (`sum |psi|^2 dx`
    /// must be 1 within 1e-9).
    pub fn new(
        grid: SpatialGrid,
        values: Array1<Complex64>,
        mass: f64,
        hbar: f64,
        t: f64,
    ) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::NonpositiveInput("mass"));
        }
        if !(hbar > 0.0) {
            return Err(Error::NonpositiveInput("hbar"));
        }
        if values.len() != grid.n {
            return Err(Error::Invalid(format!(
                "value count {} does not match grid n={}",
                values.len(),
                grid.n
            )));
        }
        let field = Self { grid, values, mass, hbar, t };
        let norm = field.norm_sq();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm, tol: NORM_TOL });
        }
        Ok(field)
    }

    /// Builds a wavefield after rescaling the samples to unit norm.
    pub fn normalized(
        grid: SpatialGrid,
        values: Array1<Complex64>,
        mass: f64,
        hbar: f64,
        t: f64,
    ) -> Result<Self> {
        let norm_sq: f64 = values.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dx;
        if !(norm_sq > 0.0) {
            return Err(Error::Invalid("cannot normalize a zero field".into()));
        }
        let scale = norm_sq.sqrt().recip();
        Self::new(grid, values.mapv(|z| z * scale), mass, hbar, t)
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx
    }

    /// rho = |psi|^2
    pub fn density(&self) -> Array1<f64> {
        self.values.mapv(|z| z.norm_sqr())
    }

    /// sqrt(rho) = |psi|
    pub fn amplitude(&self) -> Array1<f64> {
        self.values.mapv(|z| z.norm())
    }

    pub fn as_spatial_field(&self) -> SpatialField {
        SpatialField { grid: self.grid, values: self.values.clone() }
    }

    pub fn momentum_representation(&self) -> MomentumField {
        to_momentum(&self.as_spatial_field(), self.hbar)
    }

    /// Spectral d^order psi / dx^order.
    pub fn derivative(&self, order: u32) -> Array1<Complex64> {
        derivative_uniform(&self.values, self.grid.dx, order)
    }

    /// Largest |p| carried by this state above `frac` of the spectral peak.
    pub fn occupied_momentum(&self, frac: f64) -> f64 {
        let phi = self.momentum_representation();
        let peak = phi.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut p_occ = 0.0f64;
        for j in 0..phi.grid.n {
            if phi.values[j].norm() > frac * peak {
                p_occ = p_occ.max(phi.grid.p(j).abs());
            }
        }
        p_occ
    }
}

/// V(x) = c0 + c1 x + c2 x^2 + c3 x^3 + c4 x^4, with all derivatives
/// available in closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolynomialPotential {
    coeffs: [f64; 5],
}

impl PolynomialPotential {
    pub fn new(coeffs: &[f64]) -> Result<Self> {
        if coeffs.len() > 5 {
            return Err(Error::DegreeTooHigh(coeffs.len() - 1));
        }
        let mut c = [0.0; 5];
        c[..coeffs.len()].copy_from_slice(coeffs);
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("potential coefficients must be finite".into()));
        }
        Ok(Self { coeffs: c })
    }

    pub fn free() -> Self {
        Self { coeffs: [0.0; 5] }
    }

    /// V = (1/2) m omega^2 x^2
    pub fn harmonic(mass: f64, omega: f64) -> Self {
        Self { coeffs: [0.0, 0.0, 0.5 * mass * omega * omega, 0.0, 0.0] }
    }

    pub fn constant(c: f64) -> Self {
        Self { coeffs: [c, 0.0, 0.0, 0.0, 0.0] }
    }

    pub fn coefficients(&self) -> &[f64; 5] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        (0..5).rev().find(|&k| self.coeffs[k] != 0.0).unwrap_or(0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        // Horner
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// d^order V / dx^order, order 0..=4; identically zero beyond the degree.
    pub fn derivative(&self, x: f64, order: usize) -> f64 {
        if order > 4 {
            return 0.0;
        }
        let mut acc = 0.0;
        for k in (order..5).rev() {
            let mut fac = 1.0;
            for j in 0..order {
                fac *= (k - j) as f64;
            }
            acc = acc * x + fac * self.coeffs[k];
        }
        acc
    }

    /// F = -dV/dx
    pub fn force(&self, x: f64) -> f64 {
        -self.derivative(x, 1)
    }

    pub fn values_on(&self, grid: &SpatialGrid) -> Array1<f64> {
        Array1::from_iter((0..grid.n).map(|i| self.eval(grid.x(i))))
    }

    pub fn force_on(&self, grid: &SpatialGrid) -> Array1<f64> {
        Array1::from_iter((0..grid.n).map(|i| self.force(grid.x(i))))
    }

    pub fn max_abs_on(&self, grid: &SpatialGrid) -> f64 {
        (0..grid.n).map(|i| self.eval(grid.x(i)).abs()).fold(0.0, f64::max)
    }
}

/// Closed-form reference states.
#[derive(Clone, Copy, Debug)]
pub enum AnalyticState {
    /// Free Gaussian packet with initial position spread sigma
    /// (variance sigma^2), centroid x0, mean momentum p0.
    FreeGaussian { sigma: f64, x0: f64, p0: f64 },
    /// Harmonic oscillator ground state of frequency omega.
    HoGround { omega: f64 },
    /// Coherent state: ground-state profile following the classical orbit
    /// started at (x0, p0), exact phase included.
    HoCoherent { omega: f64, x0: f64, p0: f64 },
}

/// Samples an analytic state on the grid at evolution parameter `t`.
pub fn analytic_state(
    kind: &AnalyticState,
    grid: &SpatialGrid,
    mass: f64,
    hbar: f64,
    t: f64,
) -> Result<WaveField> {
    let n = grid.n;
    let values: Array1<Complex64> = match *kind {
        AnalyticState::FreeGaussian { sigma, x0, p0 } => {
            if !(sigma > 0.0) {
                return Err(Error::InvalidState("sigma must be positive".into()));
            }
            // lambda = 1 + i hbar t / (2 m sigma^2) spreads the envelope;
            // the plane-wave factor carries the boost.
            let lambda = Complex64::new(1.0, hbar * t / (2.0 * mass * sigma * sigma));
            let amp = (TAU * sigma * sigma).powf(-0.25) / lambda.sqrt();
            let center = x0 + p0 * t / mass;
            let e0 = p0 * p0 / (2.0 * mass);
            Array1::from_iter((0..n).map(|i| {
                let x = grid.x(i);
                let dx = x - center;
                let envelope = (-dx * dx / (4.0 * sigma * sigma * lambda)).exp();
                let phase = Complex64::from_polar(1.0, (p0 * x - e0 * t) / hbar);
                amp * envelope * phase
            }))
        }
        AnalyticState::HoGround { omega } => {
            if !(omega > 0.0) {
                return Err(Error::InvalidState("omega must be positive".into()));
            }
            let amp = (mass * omega / (std::f64::consts::PI * hbar)).powf(0.25);
            let phase = Complex64::from_polar(1.0, -0.5 * omega * t);
            Array1::from_iter((0..n).map(|i| {
                let x = grid.x(i);
                amp * (-mass * omega * x * x / (2.0 * hbar)).exp() * phase
            }))
        }
        AnalyticState::HoCoherent { omega, x0, p0 } => {
            if !(omega > 0.0) {
                return Err(Error::InvalidState("omega must be positive".into()));
            }
            let (s, c) = (omega * t).sin_cos();
            let xc = x0 * c + p0 / (mass * omega) * s;
            let pc = p0 * c - mass * omega * x0 * s;
            // gamma = -omega t / 2 + S_c / hbar with the classical action
            // S_c = (pc xc - p0 x0) / 2 for the harmonic orbit.
            let gamma = -0.5 * omega * t + (pc * xc - p0 * x0) / (2.0 * hbar);
            let amp = (mass * omega / (std::f64::consts::PI * hbar)).powf(0.25);
            Array1::from_iter((0..n).map(|i| {
                let x = grid.x(i);
                let dx = x - xc;
                let envelope = (-mass * omega * dx * dx / (2.0 * hbar)).exp();
                let phase = Complex64::from_polar(1.0, pc * dx / hbar + gamma);
                amp * envelope * phase
            }))
        }
    };
    WaveField::new(*grid, values, mass, hbar, t)
}

/// Snapshot sequence produced by [`split_step_evolve`]. Snapshots are stored
/// every `stride` steps starting with the initial state, so consecutive
/// entries are `dt * stride` apart.
#[derive(Clone, Debug)]
pub struct Snapshots {
    pub states: Vec<WaveField>,
    pub dt: f64,
    pub stride: usize,
    /// Largest boundary amplitude |psi| seen during the run; values above
    /// [`BOUNDARY_LEAK_THRESHOLD`] mean the box is too small.
    pub boundary_leak: f64,
}

impl Snapshots {
    /// Interval between stored snapshots.
    pub fn snapshot_dt(&self) -> f64 {
        self.dt * self.stride as f64
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn leaks(&self) -> bool {
        self.boundary_leak > BOUNDARY_LEAK_THRESHOLD
    }

    /// Conjugated, order-reversed copy: psi_k' = conj(psi_{K-k}) at t' = -t.
    /// For a real potential this is again a solution of the wave equation.
    pub fn time_reversed(&self) -> Snapshots {
        let states = self
            .states
            .iter()
            .rev()
            .map(|w| WaveField {
                grid: w.grid,
                values: w.values.mapv(|z| z.conj()),
                mass: w.mass,
                hbar: w.hbar,
                t: -w.t,
            })
            .collect();
        Snapshots {
            states,
            dt: self.dt,
            stride: self.stride,
            boundary_leak: self.boundary_leak,
        }
    }
}

/// Strang split-step evolution under `V`. Second order in dt; unitary up to
/// rounding, so the norm is preserved to ~1e-15 per step.
///
/// Guards reject steps long enough that a single potential or kinetic phase
/// exceeds 0.5 rad (the kinetic phase is measured on the occupied momentum
/// band of the initial state, not at the grid Nyquist).
pub fn split_step_evolve(
    psi0: &WaveField,
    v: &PolynomialPotential,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Snapshots> {
    if !(dt > 0.0) {
        return Err(Error::Invalid("dt must be positive".into()));
    }
    if steps == 0 || stride == 0 {
        return Err(Error::Invalid("steps and stride must be at least 1".into()));
    }
    let grid = psi0.grid;
    let n = grid.n;
    let hbar = psi0.hbar;
    let mass = psi0.mass;

    let v_max = v.max_abs_on(&grid);
    if dt * v_max / hbar >= 0.5 {
        return Err(Error::StabilityGuard(format!(
            "potential phase per step dt*max|V|/hbar = {:.3e} >= 0.5",
            dt * v_max / hbar
        )));
    }
    let p_occ = psi0.occupied_momentum(1e-8);
    let kin_phase = dt * p_occ * p_occ / (2.0 * mass * hbar);
    if kin_phase >= 0.5 {
        return Err(Error::StabilityGuard(format!(
            "kinetic phase per step on the occupied band = {kin_phase:.3e} >= 0.5"
        )));
    }

    // Per-step phase factors in FFT bin order.
    let base = TAU * hbar / (n as f64 * grid.dx);
    let kin_half: Vec<Complex64> = (0..n)
        .map(|m| {
            let p = mode_of_bin(m, n) as f64 * base;
            Complex64::from_polar(1.0, -0.5 * dt * p * p / (2.0 * mass * hbar))
        })
        .collect();
    let pot_full: Vec<Complex64> = (0..n)
        .map(|i| Complex64::from_polar(1.0, -dt * v.eval(grid.x(i)) / hbar))
        .collect();

    let mut buf: Vec<Complex64> = psi0.values.to_vec();
    let inv_n = 1.0 / n as f64;
    let mut boundary_leak = buf[0].norm().max(buf[n - 1].norm());

    let mut states = Vec::with_capacity(steps / stride + 2);
    states.push(psi0.clone());

    for step in 1..=steps {
        fft_forward(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kin_half) {
            *b *= k;
        }
        fft_inverse(&mut buf);
        for (b, p) in buf.iter_mut().zip(&pot_full) {
            *b *= p * inv_n;
        }
        fft_forward(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kin_half) {
            *b *= k;
        }
        fft_inverse(&mut buf);
        for b in buf.iter_mut() {
            *b *= inv_n;
        }

        boundary_leak = boundary_leak.max(buf[0].norm()).max(buf[n - 1].norm());
        if step % stride == 0 {
            let t = psi0.t + step as f64 * dt;
            states.push(WaveField {
                grid,
                values: Array1::from_iter(buf.iter().copied()),
                mass,
                hbar,
                t,
            });
        }
    }

    Ok(Snapshots { states, dt, stride, boundary_leak })
}

/// Second-order time derivative of the snapshot sequence at index `idx`:
/// centered in the interior, one-sided three-point stencils at the ends.
pub fn time_derivative(snaps: &Snapshots, idx: usize) -> Result<Array1<Complex64>> {
    let k = snaps.len();
    if k < 3 {
        return Err(Error::InsufficientSnapshots { need: 3, got: k });
    }
    if idx >= k {
        return Err(Error::Invalid(format!("snapshot index {idx} out of range 0..{k}")));
    }
    let h = snaps.snapshot_dt();
    let s = &snaps.states;
    let n = s[idx].grid.n;
    let inv = 1.0 / (2.0 * h);
    let out = if idx == 0 {
        Array1::from_iter(
            (0..n).map(|i| (-3.0 * s[0].values[i] + 4.0 * s[1].values[i] - s[2].values[i]) * inv),
        )
    } else if idx == k - 1 {
        Array1::from_iter((0..n).map(|i| {
            (3.0 * s[k - 1].values[i] - 4.0 * s[k - 2].values[i] + s[k - 3].values[i]) * inv
        }))
    } else {
        Array1::from_iter((0..n).map(|i| (s[idx + 1].values[i] - s[idx - 1].values[i]) * inv))
    };
    Ok(out)
}

/// Hydrodynamic fields extracted from a wavefield. Entries failing the
/// density mask are NaN; `mask` is true where the fields are valid.
#[derive(Clone, Debug)]
pub struct BohmFields {
    pub grid: SpatialGrid,
    /// Probability density |psi|^2; valid everywhere.
    pub rho: Array1<f64>,
    /// Flow velocity from the bilinear form Re[psi (i hbar) d(psi*)]/(m rho).
    pub u: Array1<f64>,
    /// Internal kinetic energy per particle, eps = k_total - m u^2 / 2
    /// (equals the curvature form -(hbar^2/2m) (d^2 sqrt(rho)) / sqrt(rho)).
    pub eps: Array1<f64>,
    /// Total kinetic energy per particle from Re[(i hbar)^2 psi d^2(psi*)]/(2 m rho).
    pub k_total: Array1<f64>,
    /// Density-gradient expression -(hbar^2/2m rho)(d^2 rho - (d rho)^2/2rho).
    /// Retained as a diagnostic; it exceeds `eps` by a factor of two and does
    /// not balance the energy equation.
    pub eps_gradient_form: Array1<f64>,
    /// -hbar d(phase)/dt via Re[i hbar psi* dpsi/dt]/rho; present only when
    /// the decomposition was given a snapshot sequence.
    pub e_balance: Option<Array1<f64>>,
    pub mask: Vec<bool>,
}

impl BohmFields {
    /// rho-weighted average of a per-particle field over the unmasked region.
    pub fn rho_weighted_mean(&self, field: &Array1<f64>) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.grid.n {
            if self.mask[i] {
                num += self.rho[i] * field[i];
                den += self.rho[i];
            }
        }
        num / den
    }
}

fn bohm_from_parts(
    psi: &WaveField,
    dpsi_dt: Option<&Array1<Complex64>>,
    rho_min_frac: f64,
) -> BohmFields {
    let n = psi.grid.n;
    let hbar = psi.hbar;
    let mass = psi.mass;
    let rho = psi.density();
    let rho_max = rho.iter().copied().fold(0.0, f64::max);
    let floor = rho_min_frac * rho_max;

    let d1 = psi.derivative(1);
    let d2 = psi.derivative(2);
    let s = psi.amplitude();
    let s_complex = s.mapv(|v| Complex64::new(v, 0.0));
    let ds1 = derivative_uniform(&s_complex, psi.grid.dx, 1).mapv(|z| z.re);
    let ds2 = derivative_uniform(&s_complex, psi.grid.dx, 2).mapv(|z| z.re);

    let mut u = Array1::zeros(n);
    let mut k_total = Array1::zeros(n);
    let mut eps = Array1::zeros(n);
    let mut eps_gf = Array1::zeros(n);
    let mut e_bal = dpsi_dt.map(|_| Array1::zeros(n));
    let mut mask = vec![false; n];

    for i in 0..n {
        if rho[i] < floor {
            u[i] = f64::NAN;
            k_total[i] = f64::NAN;
            eps[i] = f64::NAN;
            eps_gf[i] = f64::NAN;
            if let Some(e) = e_bal.as_mut() {
                e[i] = f64::NAN;
            }
            continue;
        }
        mask[i] = true;
        // g = m rho u = Re[psi (i hbar) conj(d psi)]
        let g = hbar * (psi.values[i].conj() * d1[i]).im;
        u[i] = g / (mass * rho[i]);
        let knum = -hbar * hbar * (psi.values[i] * d2[i].conj()).re;
        k_total[i] = knum / (2.0 * mass * rho[i]);
        eps[i] = k_total[i] - 0.5 * mass * u[i] * u[i];
        // -(hbar^2 / 2 m rho)(rho'' - rho'^2 / 2 rho) with rho = s^2:
        // rho'' = 2 s'^2 + 2 s s'', rho'^2 / 2 rho = 2 s'^2.
        eps_gf[i] = -hbar * hbar / (2.0 * mass * rho[i])
            * (2.0 * ds1[i] * ds1[i] + 2.0 * s[i] * ds2[i] - 2.0 * ds1[i] * ds1[i]);
        if let (Some(e), Some(dt_vals)) = (e_bal.as_mut(), dpsi_dt) {
            // -hbar d(phase)/dt = Re[i hbar psi* dpsi/dt] / rho
            e[i] = (Complex64::i() * hbar * psi.values[i].conj() * dt_vals[i]).re / rho[i];
        }
    }

    BohmFields {
        grid: psi.grid,
        rho,
        u,
        eps,
        k_total,
        eps_gradient_form: eps_gf,
        e_balance: e_bal,
        mask,
    }
}

/// Decomposes a single wavefield; the energy-balance field is unavailable
/// without a time series.
pub fn bohm_decompose(psi: &WaveField, rho_min_frac: f64) -> BohmFields {
    bohm_from_parts(psi, None, rho_min_frac)
}

/// Decomposes snapshot `idx` of a sequence, including the energy-balance
/// field -hbar d(phase)/dt from second-order time differencing.
pub fn bohm_decompose_at(snaps: &Snapshots, idx: usize, rho_min_frac: f64) -> Result<BohmFields> {
    let dpsi_dt = time_derivative(snaps, idx)?;
    Ok(bohm_from_parts(&snaps.states[idx], Some(&dpsi_dt), rho_min_frac))
}
