//! Residual evaluators for the phase-space transport equations, the
//! classical advection solver they limit to, and the time-broadening
//! magnitude estimator.
//!
//! The evaluators do not integrate the phase-space equations directly.
//! They build Q from wavefunction snapshots produced by the spectral
//! integrator and measure how well the transport laws hold: time
//! derivatives by second-order differencing, space and momentum derivatives
//! spectrally, so the reported norms shrink at second order as dt and the
//! grids refine together.

use ndarray::{Array1, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grids::{fft_forward, fft_inverse, mode_of_bin, MomentumGrid, SpatialGrid, TAU};
use crate::phasespace::{build_q, local_q_values};
use crate::report::{complex_norms, ResidualReport};
use crate::schrodinger::{analytic_state, AnalyticState, PolynomialPotential, Snapshots};

/// CODATA reduced Planck constant, J s.
pub const HBAR_SI: f64 = 1.054571817e-34;

fn derivative_slice(buf: &mut [Complex64], spacing: f64, order: u32) {
    let n = buf.len();
    fft_forward(buf);
    let base = TAU / (n as f64 * spacing);
    for (m, v) in buf.iter_mut().enumerate() {
        let k = mode_of_bin(m, n) as f64 * base;
        *v *= Complex64::new(0.0, k).powu(order);
    }
    fft_inverse(buf);
    let inv_n = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= inv_n;
    }
}

/// Spectral derivative along the position axis (dimension 0).
pub(crate) fn derivative_along_x(
    values: &Array2<Complex64>,
    dx: f64,
    order: u32,
) -> Array2<Complex64> {
    let (nx, np) = values.dim();
    let mut out = values.clone();
    let mut scratch = vec![Complex64::new(0.0, 0.0); nx];
    for j in 0..np {
        for i in 0..nx {
            scratch[i] = values[(i, j)];
        }
        derivative_slice(&mut scratch, dx, order);
        for i in 0..nx {
            out[(i, j)] = scratch[i];
        }
    }
    out
}

/// Spectral derivative along the momentum axis (dimension 1, contiguous).
pub(crate) fn derivative_along_p(
    values: &Array2<Complex64>,
    dp: f64,
    order: u32,
) -> Array2<Complex64> {
    let mut out = values.clone();
    for mut row in out.rows_mut() {
        derivative_slice(row.as_slice_mut().expect("row-major layout"), dp, order);
    }
    out
}

fn derivative_along_x_real(values: &Array2<f64>, dx: f64, order: u32) -> Array2<f64> {
    derivative_along_x(&values.mapv(|v| Complex64::new(v, 0.0)), dx, order).mapv(|z| z.re)
}

fn derivative_along_p_real(values: &Array2<f64>, dp: f64, order: u32) -> Array2<f64> {
    derivative_along_p(&values.mapv(|v| Complex64::new(v, 0.0)), dp, order).mapv(|z| z.re)
}

fn center_of(snaps: &Snapshots) -> Result<usize> {
    if snaps.len() < 3 {
        return Err(Error::InsufficientSnapshots { need: 3, got: snaps.len() });
    }
    Ok(snaps.len() / 2)
}

/// Complex residual of the transport equation for Q with the nonlocal
/// effective potential.
#[derive(Clone, Debug)]
pub struct TransportResidual {
    pub report: ResidualReport,
    pub residual: Array2<Complex64>,
    /// Snapshot index the residual was evaluated at.
    pub center: usize,
}

/// Evaluates d_t Q + (p/m) d_x Q - (i hbar / 2m) d_xx Q
/// - (1/ i hbar) [V(x) - <V>(p)] Q at the middle snapshot.
///
/// The nonlocal product <V>(p) Q is assembled division-free as
/// q(x,p) * sum_x' V(x') q*(x',p) dx, which agrees with the masked
/// [`crate::phasespace::effective_potential_avg`] wherever |phi(p)|^2 is
/// above threshold and stays finite where it is not.
pub fn q_transport_residual(snaps: &Snapshots, v: &PolynomialPotential) -> Result<TransportResidual> {
    let c = center_of(snaps)?;
    let h = snaps.snapshot_dt();
    let psi = &snaps.states[c];
    let grid = psi.grid;
    let n = grid.n;
    let hbar = psi.hbar;
    let mass = psi.mass;

    let q_prev = build_q(&snaps.states[c - 1]);
    let q_mid = build_q(psi);
    let q_next = build_q(&snaps.states[c + 1]);
    let p_grid = q_mid.p_grid;

    let dq_dx = derivative_along_x(&q_mid.values, grid.dx, 1);
    let d2q_dx = derivative_along_x(&q_mid.values, grid.dx, 2);

    let v_samples = v.values_on(&grid);
    let local = local_q_values(psi);
    // w_j = sum_x' V(x') q*(x', p_j) dx
    let mut w = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += local[(i, j)].conj() * v_samples[i];
        }
        w[j] = acc * grid.dx;
    }

    let inv_2h = 1.0 / (2.0 * h);
    let i_hbar_half = Complex64::new(0.0, hbar / (2.0 * mass));
    let inv_i_hbar = Complex64::new(0.0, -1.0 / hbar); // 1 / (i hbar)
    let mut residual = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let dq_dt = (q_next.values[(i, j)] - q_prev.values[(i, j)]) * inv_2h;
            let advect = dq_dx[(i, j)] * (p_grid.p(j) / mass);
            let diffuse = i_hbar_half * d2q_dx[(i, j)];
            let nonlocal = inv_i_hbar * (q_mid.values[(i, j)] * v_samples[i] - local[(i, j)] * w[j]);
            residual[(i, j)] = dq_dt + advect - diffuse - nonlocal;
        }
    }

    let (l2, linf) = complex_norms(residual.iter(), grid.dx * p_grid.dp);
    Ok(TransportResidual {
        report: ResidualReport {
            equation: "q-transport".into(),
            n,
            dx: grid.dx,
            dp: Some(p_grid.dp),
            dt: Some(h),
            l2,
            linf,
            mask: "none (full grid)".into(),
        },
        residual,
        center: c,
    })
}

/// Real residual of the series (Boltzmann) form acting on f and Im Q.
#[derive(Clone, Debug)]
pub struct SeriesResidual {
    pub report: ResidualReport,
    pub residual: Array2<f64>,
    pub center: usize,
}

/// Evaluates the series form
///
/// ```text
/// d_t f + (p/m) d_x f + F d_p f + (hbar/2m) d_xx Im Q
///   - sum_{odd n >= 3} (-1)^((n-1)/2) hbar^(n-1)/n! V^(n) d_p^n f
///   - sum_{even n >= 2} (-1)^((n-2)/2) hbar^(n-1)/n! V^(n) d_p^n Im Q
/// ```
///
/// at the middle snapshot. The series terminates at the potential degree, so
/// for polynomial V of degree <= 4 this residual equals the real part of
/// [`q_transport_residual`] up to rounding; the comparison adjudicates the
/// sign pattern of the two sums.
pub fn boltzmann_series_residual(
    snaps: &Snapshots,
    v: &PolynomialPotential,
    n_max: usize,
) -> Result<SeriesResidual> {
    let degree = v.degree();
    if n_max < degree {
        return Err(Error::TruncationBelowDegree { n_max, degree });
    }
    let c = center_of(snaps)?;
    let h = snaps.snapshot_dt();
    let psi = &snaps.states[c];
    let grid = psi.grid;
    let n = grid.n;
    let hbar = psi.hbar;
    let mass = psi.mass;

    let q_prev = build_q(&snaps.states[c - 1]);
    let q_mid = build_q(psi);
    let q_next = build_q(&snaps.states[c + 1]);
    let p_grid = q_mid.p_grid;

    let f_prev = q_prev.distribution();
    let f_mid = q_mid.distribution();
    let f_next = q_next.distribution();
    let im_mid = q_mid.imaginary_part();

    let df_dx = derivative_along_x_real(&f_mid, grid.dx, 1);
    let d2im_dx = derivative_along_x_real(&im_mid, grid.dx, 2);
    let force = v.force_on(&grid);

    // momentum derivatives up to n_max of f (odd orders) and Im Q (even)
    let max_order = n_max.min(4) as u32;
    let mut dpn_f: Vec<Option<Array2<f64>>> = vec![None; max_order as usize + 1];
    let mut dpn_im: Vec<Option<Array2<f64>>> = vec![None; max_order as usize + 1];
    for order in 1..=max_order {
        let needed = (order as usize) <= degree;
        if !needed {
            continue;
        }
        if order >= 3 && order % 2 == 1 {
            dpn_f[order as usize] = Some(derivative_along_p_real(&f_mid, p_grid.dp, order));
        }
        if order >= 2 && order % 2 == 0 {
            dpn_im[order as usize] = Some(derivative_along_p_real(&im_mid, p_grid.dp, order));
        }
    }
    let df_dp = derivative_along_p_real(&f_mid, p_grid.dp, 1);

    let factorial = |k: usize| -> f64 { (1..=k).map(|v| v as f64).product::<f64>().max(1.0) };
    let inv_2h = 1.0 / (2.0 * h);
    let mut residual = Array2::zeros((n, n));
    for i in 0..n {
        let x = grid.x(i);
        for j in 0..n {
            let p = p_grid.p(j);
            let mut r = (f_next[(i, j)] - f_prev[(i, j)]) * inv_2h
                + (p / mass) * df_dx[(i, j)]
                + force[i] * df_dp[(i, j)]
                + hbar / (2.0 * mass) * d2im_dx[(i, j)];
            for order in 2..=max_order as usize {
                let vn = v.derivative(x, order);
                if vn == 0.0 {
                    continue;
                }
                let coef = hbar.powi(order as i32 - 1) / factorial(order);
                if order % 2 == 1 {
                    let sign = if ((order - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    if let Some(d) = &dpn_f[order] {
                        r -= sign * coef * vn * d[(i, j)];
                    }
                } else {
                    let sign = if ((order - 2) / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    if let Some(d) = &dpn_im[order] {
                        r -= sign * coef * vn * d[(i, j)];
                    }
                }
            }
            residual[(i, j)] = r;
        }
    }

    let cell = grid.dx * p_grid.dp;
    let mut sum = 0.0;
    let mut linf: f64 = 0.0;
    for r in residual.iter() {
        sum += r * r * cell;
        linf = linf.max(r.abs());
    }
    Ok(SeriesResidual {
        report: ResidualReport {
            equation: "boltzmann-series".into(),
            n,
            dx: grid.dx,
            dp: Some(p_grid.dp),
            dt: Some(h),
            l2: sum.sqrt(),
            linf,
            mask: "none (full grid)".into(),
        },
        residual,
        center: c,
    })
}

/// Residual of the local-factor wave equation at one momentum value:
/// i hbar (d_t + (p/m) d_x) q - [-(hbar^2/2m) d_xx + V + p^2/2m] q.
///
/// `p` is snapped to the nearest grid momentum so that the factor
/// exp(-i p x / hbar) is periodic over the box; the value used is recorded
/// in the returned report's `mask` note.
pub fn local_wave_residual(
    snaps: &Snapshots,
    v: &PolynomialPotential,
    p: f64,
) -> Result<(ResidualReport, Array1<Complex64>)> {
    let c = center_of(snaps)?;
    let h = snaps.snapshot_dt();
    let psi = &snaps.states[c];
    let grid = psi.grid;
    let n = grid.n;
    let hbar = psi.hbar;
    let mass = psi.mass;
    let p_grid = grid.conjugate(hbar);

    let j = ((p / p_grid.dp).round() + (n / 2) as f64) as isize;
    if j < 0 || j >= n as isize {
        return Err(Error::Invalid(format!("momentum {p} outside the grid band")));
    }
    let p_snap = p_grid.p(j as usize);

    let scale = (TAU * hbar).powf(-0.5);
    let q_of = |state: &crate::schrodinger::WaveField| -> Array1<Complex64> {
        Array1::from_iter((0..n).map(|i| {
            state.values[i] * Complex64::from_polar(scale, -p_snap * grid.x(i) / hbar)
        }))
    };
    let q_prev = q_of(&snaps.states[c - 1]);
    let q_mid = q_of(psi);
    let q_next = q_of(&snaps.states[c + 1]);

    let mut dq_dx: Vec<Complex64> = q_mid.to_vec();
    derivative_slice(&mut dq_dx, grid.dx, 1);
    let mut d2q_dx: Vec<Complex64> = q_mid.to_vec();
    derivative_slice(&mut d2q_dx, grid.dx, 2);

    let i_hbar = Complex64::new(0.0, hbar);
    let kin = -hbar * hbar / (2.0 * mass);
    let e_shift = p_snap * p_snap / (2.0 * mass);
    let inv_2h = 1.0 / (2.0 * h);
    let residual = Array1::from_iter((0..n).map(|i| {
        let dq_dt = (q_next[i] - q_prev[i]) * inv_2h;
        let lhs = i_hbar * (dq_dt + dq_dx[i] * (p_snap / mass));
        let rhs = d2q_dx[i] * kin + q_mid[i] * (v.eval(grid.x(i)) + e_shift);
        lhs - rhs
    }));

    let (l2, linf) = complex_norms(residual.iter(), grid.dx);
    Ok((
        ResidualReport {
            equation: "local-wave".into(),
            n,
            dx: grid.dx,
            dp: None,
            dt: Some(h),
            l2,
            linf,
            mask: format!("none; evaluated at p = {p_snap:.6e}"),
        },
        residual,
    ))
}

/// Real distribution on the product grid for the classical solver.
#[derive(Clone, Debug)]
pub struct ClassicalField {
    pub x_grid: SpatialGrid,
    pub p_grid: MomentumGrid,
    pub mass: f64,
    pub values: Array2<f64>,
    pub t: f64,
}

impl ClassicalField {
    /// Gaussian blob centered at (x0, p0) with spreads (sx, sp), unit mass.
    pub fn gaussian_blob(
        x_grid: SpatialGrid,
        p_grid: MomentumGrid,
        mass: f64,
        x0: f64,
        p0: f64,
        sx: f64,
        sp: f64,
    ) -> Self {
        let n = x_grid.n;
        let norm = 1.0 / (TAU * sx * sp);
        let mut values = Array2::zeros((n, n));
        for i in 0..n {
            let dx = x_grid.x(i) - x0;
            for j in 0..n {
                let dp = p_grid.p(j) - p0;
                values[(i, j)] =
                    norm * (-dx * dx / (2.0 * sx * sx) - dp * dp / (2.0 * sp * sp)).exp();
            }
        }
        Self { x_grid, p_grid, mass, values, t: 0.0 }
    }

    pub fn total_mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.x_grid.dx * self.p_grid.dp
    }

    /// sum f (p^2/2m + V) dx dp
    pub fn total_energy(&self, v: &PolynomialPotential) -> f64 {
        let n = self.x_grid.n;
        let mut acc = 0.0;
        for i in 0..n {
            let vx = v.eval(self.x_grid.x(i));
            for j in 0..n {
                let p = self.p_grid.p(j);
                acc += self.values[(i, j)] * (p * p / (2.0 * self.mass) + vx);
            }
        }
        acc * self.x_grid.dx * self.p_grid.dp
    }

    pub fn centroid(&self) -> (f64, f64) {
        let n = self.x_grid.n;
        let mut m0 = 0.0;
        let mut mx = 0.0;
        let mut mp = 0.0;
        for i in 0..n {
            for j in 0..n {
                let f = self.values[(i, j)];
                m0 += f;
                mx += f * self.x_grid.x(i);
                mp += f * self.p_grid.p(j);
            }
        }
        (mx / m0, mp / m0)
    }
}

fn shear_lines_x(values: &mut Array2<f64>, x_grid: &SpatialGrid, p_grid: &MomentumGrid, mass: f64, tau: f64) {
    // advect each momentum row in x by p * tau / m (exact spectral shift)
    let n = x_grid.n;
    let mut scratch = vec![Complex64::new(0.0, 0.0); n];
    let base = TAU / (n as f64 * x_grid.dx);
    for j in 0..n {
        let shift = p_grid.p(j) * tau / mass;
        for i in 0..n {
            scratch[i] = Complex64::new(values[(i, j)], 0.0);
        }
        fft_forward(&mut scratch);
        for (m, v) in scratch.iter_mut().enumerate() {
            let k = mode_of_bin(m, n) as f64 * base;
            *v *= Complex64::from_polar(1.0, -k * shift);
        }
        fft_inverse(&mut scratch);
        let inv_n = 1.0 / n as f64;
        for i in 0..n {
            values[(i, j)] = scratch[i].re * inv_n;
        }
    }
}

fn shear_lines_p(values: &mut Array2<f64>, x_grid: &SpatialGrid, p_grid: &MomentumGrid, v: &PolynomialPotential, tau: f64) {
    // kick each position column in p by F(x) * tau
    let n = x_grid.n;
    let base = TAU / (n as f64 * p_grid.dp);
    for i in 0..n {
        let shift = v.force(x_grid.x(i)) * tau;
        let row = values.row(i).to_vec();
        let mut scratch: Vec<Complex64> = row.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        fft_forward(&mut scratch);
        for (m, val) in scratch.iter_mut().enumerate() {
            let k = mode_of_bin(m, n) as f64 * base;
            *val *= Complex64::from_polar(1.0, -k * shift);
        }
        fft_inverse(&mut scratch);
        let inv_n = 1.0 / n as f64;
        for j in 0..n {
            values[(i, j)] = scratch[j].re * inv_n;
        }
    }
}

/// Advances d_t f + (p/m) d_x f + F d_p f = 0 by symplectic shear splitting
/// (half drift in x, full kick in p, half drift in x), with each shear
/// applied as an exact spectral shift. Mirrors the splitting order of the
/// wavefunction integrator so the two share a centroid map.
pub fn classical_liouville_evolve(
    f0: &ClassicalField,
    v: &PolynomialPotential,
    dt: f64,
    steps: usize,
    stride: usize,
) -> Result<Vec<ClassicalField>> {
    if !(dt > 0.0) || steps == 0 || stride == 0 {
        return Err(Error::Invalid("dt, steps, stride must be positive".into()));
    }
    let x_grid = f0.x_grid;
    let p_grid = f0.p_grid;
    let pmax = p_grid.p_max();
    let cfl_x = pmax / f0.mass * dt / x_grid.dx;
    if cfl_x >= 1.0 {
        return Err(Error::CflViolation(format!(
            "max|p|/m * dt/dx = {cfl_x:.3} >= 1"
        )));
    }
    let fmax = (0..x_grid.n).map(|i| v.force(x_grid.x(i)).abs()).fold(0.0, f64::max);
    let cfl_p = fmax * dt / p_grid.dp;
    if cfl_p >= 1.0 {
        return Err(Error::CflViolation(format!(
            "max|F| * dt/dp = {cfl_p:.3} >= 1"
        )));
    }

    let mut field = f0.clone();
    let mut out = Vec::with_capacity(steps / stride + 2);
    out.push(f0.clone());
    for step in 1..=steps {
        shear_lines_x(&mut field.values, &x_grid, &p_grid, field.mass, 0.5 * dt);
        shear_lines_p(&mut field.values, &x_grid, &p_grid, v, dt);
        shear_lines_x(&mut field.values, &x_grid, &p_grid, field.mass, 0.5 * dt);
        field.t = f0.t + step as f64 * dt;
        if step % stride == 0 {
            out.push(field.clone());
        }
    }
    Ok(out)
}

/// The characteristic (point) map of [`classical_liouville_evolve`]:
/// half drift, kick, half drift per step. Returns (t, x, p) per step.
pub fn classical_characteristic(
    x0: f64,
    p0: f64,
    v: &PolynomialPotential,
    mass: f64,
    dt: f64,
    steps: usize,
) -> Vec<(f64, f64, f64)> {
    let mut out = Vec::with_capacity(steps + 1);
    let (mut x, mut p) = (x0, p0);
    out.push((0.0, x, p));
    for step in 1..=steps {
        x += 0.5 * dt * p / mass;
        p += dt * v.force(x);
        x += 0.5 * dt * p / mass;
        out.push((step as f64 * dt, x, p));
    }
    out
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct EhrenfestRow {
    pub t: f64,
    pub x_quantum: f64,
    pub p_quantum: f64,
    pub x_classical: f64,
    pub p_classical: f64,
}

#[derive(Clone, Debug)]
pub struct EhrenfestTrace {
    pub rows: Vec<EhrenfestRow>,
    pub max_dev_x: f64,
    pub max_dev_p: f64,
}

/// Compares quantum centroids (moments of f through its marginals) against
/// the classical characteristic started from the same initial centroid.
/// Valid for free and harmonic potentials, where both follow the same orbit.
pub fn ehrenfest_compare(snaps: &Snapshots, v: &PolynomialPotential) -> Result<EhrenfestTrace> {
    if v.degree() > 2 {
        return Err(Error::Invalid(
            "centroid comparison requires a free or harmonic potential".into(),
        ));
    }
    if snaps.is_empty() {
        return Err(Error::InsufficientSnapshots { need: 1, got: 0 });
    }
    let grid = snaps.states[0].grid;
    let quantum: Vec<(f64, f64, f64)> = snaps
        .states
        .iter()
        .map(|w| {
            let rho = w.density();
            let x_mean = (0..grid.n).map(|i| grid.x(i) * rho[i]).sum::<f64>() * grid.dx;
            let phi = w.momentum_representation();
            let p_mean = (0..grid.n)
                .map(|j| phi.grid.p(j) * phi.values[j].norm_sqr())
                .sum::<f64>()
                * phi.grid.dp;
            (w.t, x_mean, p_mean)
        })
        .collect();

    let (t0, x0, p0) = quantum[0];
    let total_steps = (snaps.len() - 1) * snaps.stride;
    let mass = snaps.states[0].mass;
    let orbit = classical_characteristic(x0, p0, v, mass, snaps.dt, total_steps);

    let mut rows = Vec::with_capacity(snaps.len());
    let mut max_dev_x: f64 = 0.0;
    let mut max_dev_p: f64 = 0.0;
    for (k, &(t, xq, pq)) in quantum.iter().enumerate() {
        let (_, xc, pc) = orbit[k * snaps.stride];
        max_dev_x = max_dev_x.max((xq - xc).abs());
        max_dev_p = max_dev_p.max((pq - pc).abs());
        rows.push(EhrenfestRow {
            t: t - t0,
            x_quantum: xq,
            p_quantum: pq,
            x_classical: xc,
            p_classical: pc,
        });
    }
    Ok(EhrenfestTrace { rows, max_dev_x, max_dev_p })
}

/// Magnitude estimate of the time-broadening source term, hbar/(2 m d^5).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct BroadeningEstimate {
    pub mass_kg: f64,
    pub size_m: f64,
    /// s^-1 m^-3
    pub rate: f64,
}

pub fn broadening_estimate(mass_kg: f64, size_m: f64) -> Result<BroadeningEstimate> {
    if !(mass_kg > 0.0) {
        return Err(Error::NonpositiveInput("mass"));
    }
    if !(size_m > 0.0) {
        return Err(Error::NonpositiveInput("size"));
    }
    Ok(BroadeningEstimate {
        mass_kg,
        size_m,
        rate: HBAR_SI / (2.0 * mass_kg * size_m.powi(5)),
    })
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct HbarScalingPoint {
    pub hbar: f64,
    /// L2 of (hbar/2m) d_xx Im Q.
    pub quantum_l2: f64,
    /// L2 of the advection term (p/m) d_x f.
    pub advection_l2: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct HbarScaling {
    pub points: Vec<HbarScalingPoint>,
    /// Log-log slope of ratio against hbar.
    pub slope: f64,
}

/// Rebuilds a fixed classical state (Gaussian with given sigma and p0) at
/// each hbar and measures the quantum source term of the series equation
/// against the classical advection term. The ratio of L2 norms scales
/// linearly in hbar; the raw term alone does not, because the conjugate
/// momentum grid contracts with hbar.
pub fn hbar_scaling_study(
    n: usize,
    x_min: f64,
    x_max: f64,
    mass: f64,
    sigma: f64,
    p0: f64,
    hbars: &[f64],
) -> Result<HbarScaling> {
    if hbars.len() < 2 {
        return Err(Error::Invalid("need at least two hbar values".into()));
    }
    let mut points = Vec::with_capacity(hbars.len());
    for &hbar in hbars {
        let (grid, p_grid) = crate::grids::make_grids(n, x_min, x_max, hbar)?;
        let psi = analytic_state(
            &AnalyticState::FreeGaussian { sigma, x0: 0.0, p0 },
            &grid,
            mass,
            hbar,
            0.0,
        )?;
        let q = build_q(&psi);
        let f = q.distribution();
        let im = q.imaginary_part();
        let d2im = derivative_along_x_real(&im, grid.dx, 2);
        let df_dx = derivative_along_x_real(&f, grid.dx, 1);
        let cell = grid.dx * p_grid.dp;
        let mut quantum = 0.0;
        let mut advection = 0.0;
        for i in 0..n {
            for j in 0..n {
                let qterm = hbar / (2.0 * mass) * d2im[(i, j)];
                let aterm = p_grid.p(j) / mass * df_dx[(i, j)];
                quantum += qterm * qterm * cell;
                advection += aterm * aterm * cell;
            }
        }
        let quantum_l2 = quantum.sqrt();
        let advection_l2 = advection.sqrt();
        points.push(HbarScalingPoint {
            hbar,
            quantum_l2,
            advection_l2,
            ratio: quantum_l2 / advection_l2,
        });
    }
    // least-squares slope in log-log coordinates
    let xs: Vec<f64> = points.iter().map(|p| p.hbar.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.ratio.ln()).collect();
    let k = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / k;
    let ybar = ys.iter().sum::<f64>() / k;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..xs.len() {
        num += (xs[i] - xbar) * (ys[i] - ybar);
        den += (xs[i] - xbar) * (xs[i] - xbar);
    }
    Ok(HbarScaling { points, slope: num / den })
}
