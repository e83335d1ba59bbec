//! Nested fixed-point and bifurcation solver producing wave branches.
//!
//! The construction runs three nested loops. Innermost, the rotational
//! velocity correction is the fixed point of a Picard map: trace the time
//! functions of the current flow, form the vorticity they transport, and
//! invert the curl/mean-flux operator on it. Around that, the surface shape
//! splits into a fixed kernel mode of amplitude `t` and a complementary
//! correction, iterated through the inverse of the linearized boundary
//! operator. Outermost, a scalar Newton iteration tunes the wave speed until
//! the kernel component of the dynamic boundary residual vanishes, which
//! selects one point `(t, c(t))` on the bifurcation branch.
//!
//! All iterates are projected onto the symmetry class the problem is posed
//! in (even surface, reflection-symmetric velocity); the class is invariant
//! under every map involved, so the projection only removes roundoff drift
//! and keeps the crosswise mirror shortcut of the characteristic tracer
//! applicable. Diamond periodicity of the computed branch is never imposed
//! and remains an emergent property checked by diagnostics.

use std::sync::Arc;

use crate::dispersion::{c_star, depth_factor, ell};
use crate::divcurl::DivCurlOp;
use crate::error::{Error, Result};
use crate::field::{
    vector_plus, ScalarField, ScalarSym, SurfaceProfile, VectorField,
};
use crate::flattening::Flattening;
use crate::lattice::Grid;
use crate::transport::{TimeFunctions, Transport};

// ---------------------------------------------------------------------------
// the Bernoulli function
// ---------------------------------------------------------------------------

/// Polynomial Bernoulli function `h`, the prescribed dependence of the
/// vorticity-generating head on the orbital period. Its size is the
/// smallness parameter driving every contraction in the solver; its slope
/// at the trivial period is what makes the constructed waves rotational.
#[derive(Clone, Debug)]
pub struct BernoulliFunction {
    /// Coefficients in powers of `q - center`, constant term first.
    coeffs: Vec<f64>,
    center: f64,
    beta: f64,
}

impl BernoulliFunction {
    pub fn zero(center: f64) -> Self {
        BernoulliFunction { coeffs: Vec::new(), center, beta: 0.0 }
    }

    /// `h(q) = slope (q - center)`, the default one-parameter family.
    pub fn affine(slope: f64, center: f64) -> Self {
        BernoulliFunction { coeffs: vec![0.0, slope], center, beta: slope.abs() }
    }

    /// General polynomial in `q - center`; the reported size bounds `h` and
    /// `h'` on a unit-width interval around the center.
    pub fn from_coeffs(center: f64, coeffs: Vec<f64>) -> Self {
        let beta = coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| a.abs() * (1 + k) as f64)
            .sum();
        BernoulliFunction { coeffs, center, beta }
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Size bound used as the smallness parameter.
    pub fn strength(&self) -> f64 {
        self.beta
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&a| a == 0.0)
    }

    pub fn eval(&self, q: f64) -> f64 {
        let s = q - self.center;
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * s + a)
    }

    pub fn deriv(&self, q: f64) -> f64 {
        let s = q - self.center;
        let mut acc = 0.0;
        for (k, &a) in self.coeffs.iter().enumerate().skip(1).rev() {
            acc = acc * s + a * k as f64;
        }
        acc
    }

    /// The constant on the right-hand side of the dynamic boundary
    /// condition: `Q(c) = c^2/2 - h(lambda1/c)`, chosen so that the trivial
    /// stream at speed `c` is an exact solution.
    pub fn dynamic_constant(&self, c: f64, lambda1: f64) -> f64 {
        0.5 * c * c - self.eval(lambda1 / c)
    }

    /// `Q'(c) = c + (lambda1/c^2) h'(lambda1/c)`.
    pub fn dynamic_constant_deriv(&self, c: f64, lambda1: f64) -> f64 {
        c + lambda1 / (c * c) * self.deriv(lambda1 / c)
    }
}

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Tolerances and smallness margins of the nested iteration.
///
/// The loop tolerances are tied: the characteristic tracer runs at
/// `0.01 x` the Picard tolerance and the curl inversion at `0.01 x` the
/// tracer, so inner noise stays below the level each outer loop resolves.
/// The curl inversion additionally has an absolute floor, since its
/// monitored iteration cannot certify residuals below the conditioning of
/// the deformed operator.
#[derive(Clone, Copy, Debug)]
pub struct SolverConfig {
    /// Sup-norm tolerance on the rotational velocity update.
    pub picard_tol: f64,
    /// Sup-norm tolerance on the surface correction update.
    pub perp_tol: f64,
    /// Tolerance on the scalar bifurcation residual in the speed iteration.
    pub newton_tol: f64,
    /// Floor under the tied curl-inversion tolerance.
    pub divcurl_floor: f64,
    pub divcurl_max_iter: usize,
    /// Stagnation margin: the streamwise velocity must exceed
    /// `delta_frac x c*` everywhere.
    pub delta_frac: f64,
    /// Working surface bound: `sup |eta| <= eps_frac x depth`.
    pub eps_frac: f64,
    /// Amplitude step for the limit value of the bifurcation quotient.
    pub fd_step_t: f64,
    /// Speed step, relative to `c*`, for finite-difference slope refreshes.
    pub fd_step_c: f64,
    pub max_picard: usize,
    pub max_perp: usize,
    pub max_newton: usize,
    /// Let the characteristic tracer mirror the crosswise half-grid when
    /// velocity and data are in the symmetric class.
    pub exploit_symmetry: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            picard_tol: 1e-9,
            perp_tol: 1e-9,
            newton_tol: 1e-10,
            divcurl_floor: 1e-11,
            divcurl_max_iter: 200,
            delta_frac: 0.1,
            eps_frac: 0.05,
            fd_step_t: 1e-4,
            fd_step_c: 1e-6,
            max_picard: 30,
            max_perp: 40,
            max_newton: 12,
            exploit_symmetry: true,
        }
    }
}

impl SolverConfig {
    pub fn transport_tol(&self) -> f64 {
        0.01 * self.picard_tol
    }

    pub fn divcurl_tol(&self) -> f64 {
        (0.01 * self.transport_tol()).max(self.divcurl_floor)
    }
}

// ---------------------------------------------------------------------------
// kernel projections and the linearized boundary operator
// ---------------------------------------------------------------------------

/// The kernel mode `cos(kappa1 x1) cos(kappa2 x2)`, exact in coefficients.
pub fn kernel_profile(grid: &Arc<Grid>) -> SurfaceProfile {
    let mut out = SurfaceProfile::zeros(grid);
    for (m1, m2) in kernel_slots(grid) {
        out.coeffs[[m1, m2]] = num_complex::Complex64::new(0.25, 0.0);
    }
    out.sym = Some(ScalarSym::plus());
    out
}

fn kernel_slots(grid: &Grid) -> Vec<(usize, usize)> {
    let mut slots = Vec::with_capacity(4);
    for m1 in 0..grid.n1() {
        if grid.j1[m1].abs() != 1 {
            continue;
        }
        for m2 in 0..grid.n2() {
            if grid.j2[m2].abs() == 1 {
                slots.push((m1, m2));
            }
        }
    }
    slots
}

/// Orthogonal split of a surface function into its kernel-mode amplitude
/// and the complementary remainder. The amplitude is the coefficient of the
/// kernel profile; for symmetric input the four contributing modes agree
/// and the remainder has exact zeros there.
pub fn split_kernel(f: &SurfaceProfile) -> (f64, SurfaceProfile) {
    let slots = kernel_slots(&f.grid);
    let mut sum = num_complex::Complex64::new(0.0, 0.0);
    for &(m1, m2) in &slots {
        sum += f.coeffs[[m1, m2]];
    }
    let mut rest = f.clone();
    let share = sum / slots.len() as f64;
    for &(m1, m2) in &slots {
        rest.coeffs[[m1, m2]] -= share;
    }
    (sum.re, rest)
}

/// Kernel-mode amplitude alone.
pub fn kernel_amplitude(f: &SurfaceProfile) -> f64 {
    split_kernel(f).0
}

/// The linearization of the surface problem at the trivial stream:
/// diagonal over the lattice with symbol
/// `g + sigma |k|^2 - c^2 k1^2 fbar(|k|)`.
pub fn linearized_boundary(f: &SurfaceProfile, c: f64) -> SurfaceProfile {
    let grid = &f.grid;
    let mut out = f.clone();
    for m1 in 0..grid.n1() {
        for m2 in 0..grid.n2() {
            let l = ell(&grid.spec, grid.j1[m1], grid.j2[m2], c);
            out.coeffs[[m1, m2]] *= l;
        }
    }
    out.sym = f.sym;
    out
}

/// Inverse of the linearization on the complement of its kernel at the
/// bifurcation speed. The four kernel slots are zeroed: the operator is
/// only invertible away from them, and for symmetric input whatever
/// remains there after the orthogonal split is roundoff.
pub fn invert_linearized_complement(f: &SurfaceProfile, c: f64) -> Result<SurfaceProfile> {
    let grid = &f.grid;
    let spec = &grid.spec;
    let mut out = f.clone();
    for m1 in 0..grid.n1() {
        let j1 = grid.j1[m1];
        for m2 in 0..grid.n2() {
            let j2 = grid.j2[m2];
            if j1.abs() == 1 && j2.abs() == 1 {
                out.coeffs[[m1, m2]] = num_complex::Complex64::new(0.0, 0.0);
                continue;
            }
            let l = ell(spec, j1, j2, c);
            let k1 = j1 as f64 * spec.kappa1;
            let k2 = j2 as f64 * spec.kappa2;
            let scale = spec.gravity + spec.sigma * (k1 * k1 + k2 * k2);
            if l.abs() <= 1e-8 * scale {
                return Err(Error::regime(format!(
                    "near-resonant surface mode ({j1}, {j2}): the linearized boundary \
                     operator is not invertible on the complement at this speed"
                )));
            }
            out.coeffs[[m1, m2]] /= l;
        }
    }
    out.sym = f.sym;
    Ok(out)
}

/// Mean curvature of the surface graph in divergence form,
/// `-div(grad eta / sqrt(1 + |grad eta|^2))`; linearizes to `-Laplace eta`.
pub fn mean_curvature(eta: &SurfaceProfile) -> SurfaceProfile {
    let grid = &eta.grid;
    let e1 = eta.diff_x1().values();
    let e2 = eta.diff_x2().values();
    let mut n1 = e1.clone();
    let mut n2 = e2.clone();
    ndarray::Zip::from(&mut n1).and(&mut n2).for_each(|a, b| {
        let w = 1.0 / (1.0 + *a * *a + *b * *b).sqrt();
        *a *= -w;
        *b *= -w;
    });
    let mut f1 = SurfaceProfile::from_values(grid, &n1);
    let mut f2 = SurfaceProfile::from_values(grid, &n2);
    f1.dealias();
    f2.dealias();
    f1.diff_x1().add(&f2.diff_x2())
}

// ---------------------------------------------------------------------------
// per-surface assembly
// ---------------------------------------------------------------------------

/// Everything that depends on the surface alone: the flattening geometry,
/// the factored curl/mean-flux operator, and the unit background stream.
pub struct Assembly {
    pub eta: SurfaceProfile,
    pub op: DivCurlOp,
    pub background: VectorField,
    pub background_iterations: usize,
}

impl Assembly {
    pub fn grid(&self) -> &Arc<Grid> {
        self.op.grid()
    }
}

// ---------------------------------------------------------------------------
// solve results
// ---------------------------------------------------------------------------

/// Fixed point of the rotational velocity map at one surface and speed.
pub struct VelocitySolve {
    /// The rotational correction.
    pub u_ring: VectorField,
    /// The full flow `c x background + correction`.
    pub u: VectorField,
    /// Time functions of the full flow, consistent with `u_ring` exactly.
    pub tf: TimeFunctions,
    pub iterations: usize,
    /// Sup norm of the last fixed-point update.
    pub update: f64,
}

/// One fully resolved state at fixed amplitude and speed: the surface
/// correction complementary to the kernel mode, the flow on it, and the
/// dynamic boundary residual split into kernel and complement.
pub struct StateSolve {
    pub eta: SurfaceProfile,
    pub eta_perp: SurfaceProfile,
    pub u_ring: VectorField,
    pub u: VectorField,
    pub tf: TimeFunctions,
    pub assembly: Assembly,
    /// Full dynamic boundary residual at this state.
    pub dynamic: SurfaceProfile,
    /// Kernel amplitude of the dynamic residual; the branch equation wants
    /// this zero.
    pub amplitude: f64,
    pub perp_iterations: usize,
    pub picard_iterations: usize,
    /// Sup norm of the last surface-correction update.
    pub perp_update: f64,
}

/// Residuals of the full flattened system at an accepted state, each in
/// sup norm over the grid.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct ResidualReport {
    /// Deformed-curl equation against the transported vorticity.
    pub euler: f64,
    pub divergence: f64,
    /// Travel-time equation `u . grad tau - rho`.
    pub transport: f64,
    /// Invariance of the period along the flow, `u . grad q`.
    pub transport_jump: f64,
    /// Mean streamwise flux against the wave speed.
    pub integral: f64,
    /// Normal velocity on the two boundary planes.
    pub kinematic: f64,
    /// Dynamic boundary condition.
    pub dynamic: f64,
    /// Scalar bifurcation residual at the accepted speed.
    pub bifurcation: f64,
    /// Distance of surface and velocity coefficients from the symmetry
    /// class.
    pub symmetry: f64,
    /// Defect of half-cell translation invariance; small values certify
    /// periodicity on the finer diamond lattice without it being imposed.
    pub diamond: f64,
}

/// One accepted point on the bifurcation branch.
pub struct BranchPoint {
    /// Kernel-mode amplitude of the surface.
    pub t: f64,
    /// Wave speed selected by the branch equation.
    pub c: f64,
    pub eta: SurfaceProfile,
    pub eta_perp: SurfaceProfile,
    pub u: VectorField,
    pub u_ring: VectorField,
    /// Lattice-periodic orbital period of the flow.
    pub q: ScalarField,
    pub residuals: ResidualReport,
    pub newton_iterations: usize,
    pub perp_iterations: usize,
    pub picard_iterations: usize,
}

// ---------------------------------------------------------------------------
// the solver
// ---------------------------------------------------------------------------

/// The nonlinear problem at a fixed lattice and Bernoulli function.
pub struct WaveSystem {
    pub grid: Arc<Grid>,
    pub h: BernoulliFunction,
    pub cfg: SolverConfig,
    /// Bifurcation speed of the kernel mode.
    pub c_star: f64,
    eta1: SurfaceProfile,
}

impl WaveSystem {
    pub fn new(grid: &Arc<Grid>, h: BernoulliFunction, cfg: SolverConfig) -> Result<Self> {
        if kernel_slots(grid).len() != 4 {
            return Err(Error::invalid(
                "grid cannot represent the four kernel modes of the base wavevector",
            ));
        }
        if !grid.in_dealias_band(1, 1) {
            return Err(Error::invalid(
                "kernel modes fall outside the dealias band; increase the resolution",
            ));
        }
        let c = c_star(&grid.spec);
        Ok(WaveSystem {
            grid: grid.clone(),
            h,
            cfg,
            c_star: c,
            eta1: kernel_profile(grid),
        })
    }

    pub fn kernel_mode(&self) -> &SurfaceProfile {
        &self.eta1
    }

    /// Stagnation margin for the characteristic tracer.
    pub fn delta(&self) -> f64 {
        self.cfg.delta_frac * self.c_star
    }

    /// The closed-form speed derivative of the bifurcation quotient at the
    /// trivial state: `-2 c* kappa1^2 fbar(|kappa|)`.
    pub fn branch_slope(&self) -> f64 {
        let spec = &self.grid.spec;
        let k1 = spec.kappa1;
        -2.0 * self.c_star * k1 * k1 * depth_factor(spec.kappa_norm(), spec.d)
    }

    /// Geometry, factored curl operator, and background stream for one
    /// surface. Rejects surfaces outside the working amplitude bound.
    pub fn assemble(&self, eta: &SurfaceProfile) -> Result<Assembly> {
        let bound = self.cfg.eps_frac * self.grid.spec.d;
        let sup = eta.sup_norm();
        if sup > bound {
            return Err(Error::regime(format!(
                "surface amplitude {sup:.3e} exceeds the working bound {bound:.3e}"
            )));
        }
        let flat = Flattening::build(&self.grid, eta)?;
        let op = DivCurlOp::new(flat, self.cfg.divcurl_tol(), self.cfg.divcurl_max_iter)?;
        let background = op.background_flow()?;
        Ok(Assembly {
            eta: eta.clone(),
            op,
            background_iterations: background.iterations,
            background: background.field,
        })
    }

    /// The vorticity carried along the flow: the Bernoulli slope at the
    /// period times the cross product of the period gradient with the
    /// travel-time gradient. The travel time ramps linearly across one
    /// cell; the ramp contributes only through the period itself because
    /// the parallel part of the cross product cancels pointwise.
    pub fn vorticity_source(&self, tf: &TimeFunctions) -> VectorField {
        let grid = &self.grid;
        let q = &tf.q;
        let p = &tf.tau.form.periodic;
        let gq = q.grad();
        let shift = VectorField::from_components(
            q.scale(1.0 / grid.spec.lambda1),
            ScalarField::zeros(grid),
            ScalarField::zeros(grid),
        );
        let cross = gq.cross(&p.grad().add(&shift));
        let hp = q.map_values(|v| self.h.deriv(v));
        VectorField::from_components(
            cross.comp(0).product(&hp),
            cross.comp(1).product(&hp),
            cross.comp(2).product(&hp),
        )
    }

    /// One application of the rotational velocity map: trace the time
    /// functions of `c x background + u_ring`, transport the vorticity they
    /// induce, and solve the curl problem with zero mean flux. Returns the
    /// response together with the time functions of the input flow.
    pub fn rotational_response(
        &self,
        asm: &Assembly,
        u_ring: &VectorField,
        c: f64,
    ) -> Result<(VectorField, TimeFunctions)> {
        let u = asm.background.scale(c).add(u_ring);
        let mut tr = Transport::new(&u, self.delta(), self.cfg.transport_tol())?;
        tr.exploit_symmetry = self.cfg.exploit_symmetry;
        let tf = tr.time_functions(&asm.eta)?;
        let w = self.vorticity_source(&tf);
        // Anchor the inversion accuracy to the flow scale: near the trivial
        // state the source is at the tracer noise floor and carries no
        // meaningful relative precision of its own.
        let scale = w.sup_norm().max(self.c_star);
        let inv = asm.op.invert_at_scale(&w, 0.0, scale)?;
        Ok((inv.field.symmetrize(vector_plus()), tf))
    }

    /// Fixed point of the rotational velocity map by monitored Picard
    /// iteration. Converges at a rate proportional to the Bernoulli
    /// strength; a rising update is reported as the strength being outside
    /// the contraction regime.
    pub fn solve_rotational_velocity(
        &self,
        asm: &Assembly,
        c: f64,
        warm: Option<&VectorField>,
    ) -> Result<VelocitySolve> {
        let mut u_ring = match warm {
            Some(w) => w.clone(),
            None => VectorField::zeros(&self.grid).symmetrize(vector_plus()),
        };
        let mut last = f64::INFINITY;
        let mut rising = 0usize;
        for iter in 1..=self.cfg.max_picard {
            let (next, tf) = self.rotational_response(asm, &u_ring, c)?;
            let update = next.sub(&u_ring).sup_norm();
            if update < self.cfg.picard_tol {
                // Return the input iterate: the time functions belong to it
                // exactly, and it is within tolerance of the fixed point.
                let u = asm.background.scale(c).add(&u_ring);
                return Ok(VelocitySolve { u_ring, u, tf, iterations: iter, update });
            }
            rising = if update >= last { rising + 1 } else { 0 };
            if rising >= 2 && update > 10.0 * self.cfg.picard_tol {
                return Err(Error::regime(format!(
                    "rotational velocity iteration is not contracting \
                     (update {update:.3e} after {iter} steps): Bernoulli function too strong"
                )));
            }
            last = update;
            u_ring = next;
        }
        Err(Error::numerics(format!(
            "rotational velocity did not reach {:.1e} in {} iterations (last update {last:.3e})",
            self.cfg.picard_tol, self.cfg.max_picard
        )))
    }

    /// Dynamic boundary residual of the pure background stream: kinetic
    /// head of `c x background` along the surface, gravity, capillarity,
    /// and the dynamic constant.
    pub fn stream_boundary_residual(&self, asm: &Assembly, c: f64) -> SurfaceProfile {
        let grid = &self.grid;
        let d = grid.spec.d;
        let g = grid.spec.gravity;
        let sigma = grid.spec.sigma;
        let qc = self.h.dynamic_constant(c, grid.spec.lambda1);
        let b1 = asm.background.comp(0).restrict_top().values();
        let b2 = asm.background.comp(1).restrict_top().values();
        let e1 = asm.eta.diff_x1().values();
        let e2 = asm.eta.diff_x2().values();
        let ev = asm.eta.values();
        let curv = mean_curvature(&asm.eta).values();
        let mut out = ev.clone();
        ndarray::Zip::from(&mut out)
            .and(&b1)
            .and(&b2)
            .and(&e1)
            .and(&e2)
            .and(&curv)
            .for_each(|o, &u1, &u2, &s1, &s2, &k| {
                let rho = 1.0 + *o / d;
                let slope = s1 * u1 + s2 * u2;
                *o = 0.5 * c * c / (rho * rho) * (u1 * u1 + u2 * u2 + slope * slope)
                    + g * *o
                    + sigma * k
                    - qc;
            });
        SurfaceProfile::from_values(grid, &out)
    }

    /// Rotational remainder of the dynamic boundary residual: the terms
    /// quadratic and cross in the rotational correction, and the Bernoulli
    /// head of the period.
    pub fn rotational_boundary_residual(
        &self,
        asm: &Assembly,
        vel: &VelocitySolve,
        c: f64,
    ) -> SurfaceProfile {
        let grid = &self.grid;
        let d = grid.spec.d;
        let b1 = asm.background.comp(0).restrict_top().values();
        let b2 = asm.background.comp(1).restrict_top().values();
        let s1 = vel.u_ring.comp(0).restrict_top().values();
        let s2 = vel.u_ring.comp(1).restrict_top().values();
        let e1 = asm.eta.diff_x1().values();
        let e2 = asm.eta.diff_x2().values();
        let qv = vel.tf.q.restrict_top().values();
        let ev = asm.eta.values();
        let mut out = ev.clone();
        for idx in ndarray::indices(out.dim()) {
            let rho = 1.0 + ev[idx] / d;
            let slope_b = e1[idx] * b1[idx] + e2[idx] * b2[idx];
            let slope_s = e1[idx] * s1[idx] + e2[idx] * s2[idx];
            let quad = s1[idx] * s1[idx] + s2[idx] * s2[idx] + slope_s * slope_s;
            let cross = b1[idx] * s1[idx] + b2[idx] * s2[idx] + slope_b * slope_s;
            out[idx] = (0.5 * quad + c * cross) / (rho * rho) - self.h.eval(qv[idx]);
        }
        SurfaceProfile::from_values(grid, &out)
    }

    /// Resolve the state at one amplitude and speed: iterate the surface
    /// correction through the inverse linearization at the bifurcation
    /// speed, resolving the rotational flow at every step. The returned
    /// state is the last evaluated one, so its flow, residual, and
    /// amplitude are mutually consistent.
    pub fn solve_state(&self, t: f64, c: f64, warm: Option<&StateSolve>) -> Result<StateSolve> {
        let mut eta_perp = match warm {
            Some(s) => s.eta_perp.clone(),
            None => SurfaceProfile::zeros(&self.grid).symmetrize(ScalarSym::plus()),
        };
        let mut u_warm = warm.map(|s| s.u_ring.clone());
        let mut picard_total = 0usize;
        let mut last = f64::INFINITY;
        let mut rising = 0usize;
        for iter in 1..=self.cfg.max_perp {
            let eta = self.eta1.scale(t).add(&eta_perp);
            let asm = self.assemble(&eta)?;
            let vel = self.solve_rotational_velocity(&asm, c, u_warm.as_ref())?;
            picard_total += vel.iterations;
            let dynamic = self
                .stream_boundary_residual(&asm, c)
                .add(&self.rotational_boundary_residual(&asm, &vel, c));
            let (amplitude, range) = split_kernel(&dynamic);
            let corr = invert_linearized_complement(&range, self.c_star)?;
            let update = corr.sup_norm();
            if update < self.cfg.perp_tol {
                return Ok(StateSolve {
                    eta,
                    eta_perp,
                    u_ring: vel.u_ring,
                    u: vel.u,
                    tf: vel.tf,
                    assembly: asm,
                    dynamic,
                    amplitude,
                    perp_iterations: iter,
                    picard_iterations: picard_total,
                    perp_update: update,
                });
            }
            rising = if update >= last { rising + 1 } else { 0 };
            if rising >= 2 && update > 100.0 * self.cfg.perp_tol {
                return Err(Error::regime(format!(
                    "surface correction is not contracting \
                     (update {update:.3e} after {iter} steps): amplitude outside the \
                     contraction neighborhood"
                )));
            }
            last = update;
            u_warm = Some(vel.u_ring);
            let mut next = eta_perp.sub(&corr).symmetrize(ScalarSym::plus());
            next.dealias();
            eta_perp = next;
        }
        Err(Error::numerics(format!(
            "surface correction did not reach {:.1e} in {} iterations (last update {last:.3e})",
            self.cfg.perp_tol, self.cfg.max_perp
        )))
    }

    /// The scalar branch residual: kernel amplitude of the dynamic
    /// residual divided by the surface amplitude. At zero amplitude the
    /// quotient is evaluated as a centered difference of the amplitude map.
    pub fn bifurcation_value(&self, t: f64, c: f64) -> Result<f64> {
        if t == 0.0 {
            let step = self.cfg.fd_step_t;
            let hi = self.solve_state(step, c, None)?;
            let lo = self.solve_state(-step, c, None)?;
            Ok((hi.amplitude - lo.amplitude) / (2.0 * step))
        } else {
            Ok(self.solve_state(t, c, None)?.amplitude / t)
        }
    }

    /// Solve the branch equation for the speed at one amplitude. The first
    /// step uses the closed-form slope at the trivial state; afterwards the
    /// slope is refreshed from secants of the iterates, falling back to a
    /// finite-difference probe when the residual fails to halve.
    pub fn solve_branch_point(&self, t: f64) -> Result<BranchPoint> {
        if t == 0.0 {
            let state = self.solve_state(0.0, self.c_star, None)?;
            let residuals = self.residual_report(&state, self.c_star, state.amplitude.abs())?;
            return Ok(self.finish_point(0.0, self.c_star, state, 0, residuals));
        }
        let mut c = self.c_star;
        let mut state = self.solve_state(t, c, None)?;
        let mut n = state.amplitude / t;
        let mut slope = self.branch_slope();
        let hc = self.cfg.fd_step_c * self.c_star;
        let mut trail = vec![n];
        for iter in 0..self.cfg.max_newton {
            if n.abs() < self.cfg.newton_tol {
                let residuals = self.residual_report(&state, c, n.abs())?;
                return Ok(self.finish_point(t, c, state, iter, residuals));
            }
            if !(slope.is_finite() && slope != 0.0) {
                return Err(Error::numerics(
                    "branch equation slope degenerated during the speed iteration",
                ));
            }
            let c_next = c - n / slope;
            let next = self.solve_state(t, c_next, Some(&state))?;
            let n_next = next.amplitude / t;
            trail.push(n_next);
            if n_next.abs() >= 0.5 * n.abs() && n_next.abs() >= self.cfg.newton_tol {
                // Secant information is too shallow; probe the slope.
                let probe = self.solve_state(t, c_next + hc, Some(&next))?;
                slope = (probe.amplitude / t - n_next) / hc;
            } else if c_next != c && n_next != n {
                slope = (n_next - n) / (c_next - c);
            }
            c = c_next;
            state = next;
            n = n_next;
        }
        let shown: Vec<String> = trail.iter().map(|v| format!("{v:.3e}")).collect();
        Err(Error::numerics(format!(
            "speed iteration stalled at amplitude {t:.3e}: residual trail [{}]",
            shown.join(", ")
        )))
    }

    /// Solve every requested amplitude independently, each from the
    /// bifurcation speed.
    pub fn continue_branch(&self, t_list: &[f64]) -> Result<Vec<BranchPoint>> {
        t_list.iter().map(|&t| self.solve_branch_point(t)).collect()
    }

    /// Evaluate every equation of the flattened system at an accepted
    /// state.
    pub fn residual_report(
        &self,
        state: &StateSolve,
        c: f64,
        bifurcation: f64,
    ) -> Result<ResidualReport> {
        let grid = &self.grid;
        let (curl_w, mean) = state.assembly.op.apply(&state.u)?;
        let w = self.vorticity_source(&state.tf);
        let euler = curl_w.sub(&w).sup_norm();
        let divergence = state.u.div().sup_norm();
        let integral = (mean - c).abs();
        let kinematic = state.u.boundary_normal_sup();
        let dynamic = state.dynamic.sup_norm();

        // Transport residuals against the full ramped travel time,
        // assembled on the nodes because the ramp is not lattice-periodic.
        let gp: Vec<_> = (0..3).map(|k| state.tf.tau.form.periodic.grad().comp(k).values()).collect();
        let gq: Vec<_> = (0..3).map(|k| state.tf.q.grad().comp(k).values()).collect();
        let uv: Vec<_> = (0..3).map(|k| state.u.comp(k).values()).collect();
        let qv = state.tf.q.values();
        let ev = state.eta.values();
        let lambda1 = grid.spec.lambda1;
        let mut transport = 0.0f64;
        let mut transport_jump = 0.0f64;
        for m1 in 0..grid.n1() {
            let x1 = grid.x1[m1];
            for m2 in 0..grid.n2() {
                let rho = 1.0 + ev[[m1, m2]] / grid.spec.d;
                for iz in 0..grid.nz() {
                    let idx = [m1, m2, iz];
                    let mut dtau = 0.0;
                    let mut djump = 0.0;
                    for k in 0..3 {
                        dtau += uv[k][idx] * (gp[k][idx] + x1 / lambda1 * gq[k][idx]);
                        djump += uv[k][idx] * gq[k][idx];
                    }
                    dtau += uv[0][idx] * qv[idx] / lambda1;
                    transport = transport.max((dtau - rho).abs());
                    transport_jump = transport_jump.max(djump.abs());
                }
            }
        }

        let symmetry = state
            .eta
            .symmetry_defect(ScalarSym::plus())
            .max(state.u.symmetry_defect(vector_plus()));
        let diamond = state.eta.diamond_defect().max(state.u.diamond_defect());
        Ok(ResidualReport {
            euler,
            divergence,
            transport,
            transport_jump,
            integral,
            kinematic,
            dynamic,
            bifurcation,
            symmetry,
            diamond,
        })
    }

    fn finish_point(
        &self,
        t: f64,
        c: f64,
        state: StateSolve,
        newton_iterations: usize,
        residuals: ResidualReport,
    ) -> BranchPoint {
        BranchPoint {
            t,
            c,
            eta: state.eta,
            eta_perp: state.eta_perp,
            u: state.u,
            u_ring: state.u_ring,
            q: state.tf.q,
            residuals,
            newton_iterations,
            perp_iterations: state.perp_iterations,
            picard_iterations: state.picard_iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{make_grid, LatticeSpec};
    use crate::synth;

    fn grid_n(n1: usize, n2: usize, nz: usize) -> Arc<Grid> {
        let spec = LatticeSpec::from_wavenumbers(1.0, 1.0, 1.0, 1.0, 1.0, n1, n2, nz).unwrap();
        make_grid(&spec).unwrap()
    }

    fn system(grid: &Arc<Grid>, h: BernoulliFunction) -> WaveSystem {
        WaveSystem::new(grid, h, SolverConfig::default()).unwrap()
    }

    fn affine_h(grid: &Arc<Grid>, slope: f64) -> BernoulliFunction {
        let c = c_star(&grid.spec);
        BernoulliFunction::affine(slope, grid.spec.lambda1 / c)
    }

    #[test]
    fn bernoulli_polynomial_evaluates_and_differentiates() {
        let h = BernoulliFunction::from_coeffs(2.0, vec![1.0, -0.5, 0.25]);
        let s = 0.3;
        assert!((h.eval(2.0 + s) - (1.0 - 0.5 * s + 0.25 * s * s)).abs() < 1e-15);
        assert!((h.deriv(2.0 + s) - (-0.5 + 0.5 * s)).abs() < 1e-15);
        assert!((h.strength() - (1.0 + 1.0 + 0.75)).abs() < 1e-15);
        assert!(BernoulliFunction::zero(1.0).is_zero());
        assert!(!h.is_zero());

        let lam = 2.0 * std::f64::consts::PI;
        let c = 1.7;
        let q = BernoulliFunction::affine(0.1, 3.0);
        assert!((q.dynamic_constant(c, lam) - (0.5 * c * c - 0.1 * (lam / c - 3.0))).abs() < 1e-14);
        let step = 1e-6;
        let fd = (q.dynamic_constant(c + step, lam) - q.dynamic_constant(c - step, lam))
            / (2.0 * step);
        assert!((fd - q.dynamic_constant_deriv(c, lam)).abs() < 1e-8);
    }

    #[test]
    fn kernel_split_is_an_exact_complementary_pair() {
        let g = grid_n(8, 8, 9);
        let k = kernel_profile(&g);
        assert_eq!(kernel_amplitude(&k), 1.0);

        let mut rng = synth::Rng::new(11);
        let f = synth::random_elevation(&g, &mut rng, 1.0);
        let (amp, rest) = split_kernel(&f);
        assert_eq!(kernel_amplitude(&rest), 0.0);
        let back = rest.add(&kernel_profile(&g).scale(amp));
        assert!(back.sub(&f).coeff_sup() < 1e-14 * f.coeff_sup().max(1.0));

        let (tamp, trest) = split_kernel(&kernel_profile(&g).scale(0.37));
        assert!((tamp - 0.37).abs() < 1e-15);
        assert!(trest.coeff_sup() == 0.0);
    }

    #[test]
    fn linearized_boundary_annihilates_exactly_the_kernel_modes() {
        let g = grid_n(8, 8, 9);
        let sys = system(&g, BernoulliFunction::zero(1.0));
        let k = kernel_profile(&g);
        assert!(linearized_boundary(&k, sys.c_star).sup_norm() < 1e-12);

        // Zero mode carries the gravity constant.
        let flat = SurfaceProfile::zeros(&g).add_constant(2.0);
        let lf = linearized_boundary(&flat, sys.c_star);
        assert!((lf.values()[[0, 0]] - 2.0 * g.spec.gravity).abs() < 1e-12);

        // The speed derivative of the symbol on the kernel modes matches
        // the closed-form branch slope; the symbol is quadratic in the
        // speed, so the centered difference is exact.
        let step = 1e-6;
        let fd = (ell(&g.spec, 1, 1, sys.c_star + step) - ell(&g.spec, 1, 1, sys.c_star - step))
            / (2.0 * step);
        assert!((fd - sys.branch_slope()).abs() < 1e-7 * sys.branch_slope().abs());
    }

    #[test]
    fn complement_inverse_undoes_the_linearization() {
        let g = grid_n(8, 8, 9);
        let sys = system(&g, BernoulliFunction::zero(1.0));
        let mut rng = synth::Rng::new(7);
        let (_, rest) = split_kernel(&synth::random_elevation(&g, &mut rng, 1.0));
        let round = invert_linearized_complement(&linearized_boundary(&rest, sys.c_star), sys.c_star)
            .unwrap();
        assert!(round.sub(&rest).coeff_sup() < 1e-12 * rest.coeff_sup());
    }

    #[test]
    fn mean_curvature_linearizes_to_the_laplacian() {
        let g = grid_n(12, 12, 9);
        let mut rng = synth::Rng::new(3);
        let amp = 1e-4;
        let eta = synth::random_elevation(&g, &mut rng, amp);
        // The curvature operator is odd in the surface, so the gap to its
        // linearization is cubic: halving the amplitude divides it by
        // about eight.
        let gap = |e: &SurfaceProfile| mean_curvature(e).add(&e.laplacian()).sup_norm();
        let g1 = gap(&eta);
        let g2 = gap(&eta.scale(0.5));
        assert!(g1 < 1e-8, "gap {g1:.3e}");
        assert!(g1 > 1e-13);
        let ratio = g1 / g2;
        assert!((6.0..10.0).contains(&ratio), "ratio {ratio:.3}");
    }

    #[test]
    fn boundary_residuals_cancel_on_the_trivial_stream() {
        let g = grid_n(8, 8, 9);
        let sys = system(&g, affine_h(&g, 0.05));
        let flat = SurfaceProfile::zeros(&g);
        for c in [sys.c_star, 1.1 * sys.c_star] {
            let asm = sys.assemble(&flat).unwrap();
            let vel = sys.solve_rotational_velocity(&asm, c, None).unwrap();
            assert!(vel.u_ring.sup_norm() < 1e-10);

            let href = sys.h.eval(g.spec.lambda1 / c);
            let f = sys.stream_boundary_residual(&asm, c);
            assert!(f.sub(&SurfaceProfile::zeros(&g).add_constant(href)).sup_norm() < 1e-9);

            let r = sys.rotational_boundary_residual(&asm, &vel, c);
            assert!(r.add_constant(href).sup_norm() < 1e-8);
            assert!(f.add(&r).sup_norm() < 1e-8);
        }
    }

    #[test]
    fn zero_bernoulli_function_gives_zero_rotational_response() {
        let g = grid_n(12, 12, 13);
        let sys = system(&g, BernoulliFunction::zero(1.0));
        let mut rng = synth::Rng::new(5);
        let eta = kernel_profile(&g).scale(8e-3);
        let asm = sys.assemble(&eta).unwrap();
        let pert = synth::random_flow_perturbation(&g, &mut rng, 0.05);
        let (resp, _) = sys.rotational_response(&asm, &pert, sys.c_star).unwrap();
        assert!(resp.sup_norm() < 1e-12);
    }

    #[test]
    fn velocity_derivative_matches_the_transport_closed_form() {
        let g = grid_n(12, 12, 13);
        let beta = 0.01;
        let sys = system(&g, affine_h(&g, beta));
        let c = sys.c_star;
        let asm = sys.assemble(&SurfaceProfile::zeros(&g)).unwrap();

        let mut rng = synth::Rng::new(9);
        let v = synth::random_flow_perturbation(&g, &mut rng, 1.0);

        // Centered difference of the response map in the perturbation.
        let eps = 1e-3;
        let (hi, _) = sys.rotational_response(&asm, &v.scale(eps), c).unwrap();
        let (lo, _) = sys.rotational_response(&asm, &v.scale(-eps), c).unwrap();
        let fd = hi.sub(&lo).scale(1.0 / (2.0 * eps));

        // Closed form: streamwise vector whose profile is the Bernoulli
        // slope at the trivial period times the period derivative shifted
        // by the mean-flux compensator.
        let base = asm.background.scale(c);
        let mut tr = Transport::new(&base, sys.delta(), sys.cfg.transport_tol()).unwrap();
        tr.exploit_symmetry = true;
        let tf = tr.time_functions(&SurfaceProfile::zeros(&g)).unwrap();
        let qdot = tr.du_g(&tf.tau, &v).unwrap().form.ramp;
        let lam = g.spec.lambda1;
        let q0 = lam / c;
        let shift = lam / (c * c) * v.mean_x1();
        let profile = qdot.add_constant(shift).scale(sys.h.deriv(q0) / c);
        let closed = VectorField::from_components(
            profile,
            ScalarField::zeros(&g),
            ScalarField::zeros(&g),
        );

        let scale = closed.sup_norm();
        let gap = fd.sub(&closed).sup_norm();
        assert!(gap < 5e-4 * scale, "gap {gap:.3e} against scale {scale:.3e}");
    }

    #[test]
    fn state_at_zero_amplitude_is_trivial() {
        let g = grid_n(12, 12, 13);
        let sys = system(&g, affine_h(&g, 0.05));
        let state = sys.solve_state(0.0, sys.c_star, None).unwrap();
        assert_eq!(state.eta_perp.sup_norm(), 0.0);
        assert_eq!(state.perp_iterations, 1);
        assert!(state.amplitude.abs() < 1e-8);
        assert!(state.u_ring.sup_norm() < 1e-10);
    }

    #[test]
    fn surface_correction_scales_quadratically_in_the_amplitude() {
        let g = grid_n(12, 12, 13);
        let sys = system(&g, affine_h(&g, 0.01));
        let t1 = 2e-3;
        let s1 = sys.solve_state(t1, sys.c_star, None).unwrap();
        let s2 = sys.solve_state(2.0 * t1, sys.c_star, Some(&s1)).unwrap();
        let n1 = s1.eta_perp.sup_norm();
        let n2 = s2.eta_perp.sup_norm();
        assert!(n1 > 1e-12);
        let slope = (n2 / n1).ln() / 2f64.ln();
        assert!(slope >= 1.9, "slope {slope:.3}");
        assert!(kernel_amplitude(&s1.eta_perp).abs() < 1e-14);
        assert!(kernel_amplitude(&s2.eta_perp).abs() < 1e-14);
    }

    #[test]
    fn bifurcation_value_vanishes_at_the_critical_speed() {
        let g = grid_n(12, 12, 13);
        let sys = system(&g, affine_h(&g, 0.01));
        let n = sys.bifurcation_value(0.0, sys.c_star).unwrap();
        assert!(n.abs() < 1e-6, "value {n:.3e}");
    }

    #[test]
    fn trivial_branch_point_is_the_uniform_stream() {
        let g = grid_n(12, 12, 13);
        let sys = system(&g, affine_h(&g, 0.05));
        let bp = sys.solve_branch_point(0.0).unwrap();
        assert_eq!(bp.c, sys.c_star);
        assert_eq!(bp.eta.sup_norm(), 0.0);
        let stream = VectorField::uniform_x1(&g, sys.c_star);
        assert!(bp.u.sub(&stream).sup_norm() < 1e-8);
        assert!(bp.residuals.euler < 1e-8);
        assert!(bp.residuals.divergence < 1e-8);
        assert!(bp.residuals.transport < 1e-8);
        assert!(bp.residuals.transport_jump < 1e-8);
        assert!(bp.residuals.integral < 1e-10);
        assert!(bp.residuals.kinematic < 1e-10);
        assert!(bp.residuals.dynamic < 1e-8);
        assert!(bp.residuals.diamond < 1e-10);
        assert!(bp.residuals.symmetry < 1e-10);
    }

    #[test]
    fn branch_point_solves_every_flattened_equation() {
        let g = grid_n(12, 12, 13);
        let sys = system(&g, affine_h(&g, 0.01));
        let t = 5e-3;
        let bp = sys.solve_branch_point(t).unwrap();
        assert!((bp.c - sys.c_star).abs() < 0.05 * sys.c_star);
        assert!(bp.residuals.bifurcation < sys.cfg.newton_tol);
        assert!(bp.residuals.euler < 1e-5, "euler {:.3e}", bp.residuals.euler);
        assert!(bp.residuals.divergence < 1e-8);
        assert!(bp.residuals.transport < 1e-5, "transport {:.3e}", bp.residuals.transport);
        assert!(bp.residuals.integral < 1e-9);
        assert!(bp.residuals.kinematic < 1e-8);
        assert!(bp.residuals.dynamic < 1e-5, "dynamic {:.3e}", bp.residuals.dynamic);
        assert!(bp.residuals.symmetry < 1e-12);
        assert!(bp.residuals.diamond < 1e-6, "diamond {:.3e}", bp.residuals.diamond);
        assert!(bp.eta.sup_norm() > 0.5 * t);
    }

    #[test]
    fn oversized_surfaces_are_rejected() {
        let g = grid_n(8, 8, 9);
        let sys = system(&g, BernoulliFunction::zero(1.0));
        let eta = kernel_profile(&g).scale(0.2 * g.spec.d);
        match sys.assemble(&eta) {
            Err(Error::OutOfRegime(_)) => {}
            Err(e) => panic!("expected a regime rejection, got {e}"),
            Ok(_) => panic!("expected a regime rejection, got an assembly"),
        }
    }
}
