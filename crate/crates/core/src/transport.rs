//! Characteristic-flow solution of the steady transport problem
//! `u . grad g = f`, `g = 0` on the inflow plane `x1 = 0`.
//!
//! Writing the streamwise coordinate as time, the crosswise position obeys
//! the flow of `(u2/u1, u3/u1)`, and `g` is the integral of `f/u1` along a
//! characteristic. Each grid node is traced independently with an adaptive
//! Dormand-Prince 5(4) pair, accumulating the integral as a third state
//! component. Solutions are not lattice-periodic: they are stored as a
//! periodic part plus a linear streamwise ramp carrying the period jump,
//! a decomposition that is closed under differentiation and products with
//! periodic fields. The travel-time function `tau` and the orbital period
//! `q` are the transport solution and jump for the cell-height data `rho`.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{
    vector_plus, GridScalar, Parity, PlaneSampler, SamplerScratch, ScalarField, ScalarSampler,
    ScalarSym, SurfaceProfile, VectorField, VectorSampler,
};
use crate::lattice::Grid;

type C64 = Complex64;

/// Relative vertical overshoot beyond the slab that is treated as a broken
/// characteristic rather than integrator roundoff.
const SLAB_SLACK: f64 = 1e-6;

// ---------------------------------------------------------------------------
// adaptive Dormand-Prince 5(4) integration
// ---------------------------------------------------------------------------

const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Difference between the fifth- and fourth-order weights.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

#[derive(Debug)]
struct IntegStats {
    steps: usize,
    /// Sum of accepted local error estimates: a global error proxy.
    err_sum: f64,
}

/// Integrate `y' = rhs(t, y)` from `t0` to `t1` in either direction. Error
/// control is relative to `scales` (natural magnitudes of the components, so
/// components passing through zero are not over-resolved). `observe` is
/// called after each accepted step.
fn integrate<const N: usize, R, O>(
    y: &mut [f64; N],
    t0: f64,
    t1: f64,
    rel_tol: f64,
    scales: [f64; N],
    max_steps: usize,
    mut rhs: R,
    mut observe: O,
) -> Result<IntegStats>
where
    R: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    O: FnMut(f64, &[f64; N]),
{
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(IntegStats { steps: 0, err_sum: 0.0 });
    }
    let dir = span.signum();
    let hmax = span.abs() / 4.0;
    let mut t = t0;
    let mut h = span / 16.0;
    let mut k = [[0.0f64; N]; 7];
    k[0] = rhs(t, y)?;
    let mut stats = IntegStats { steps: 0, err_sum: 0.0 };
    let mut attempts = 0usize;
    loop {
        let remaining = t1 - t;
        if remaining * dir <= 0.0 {
            return Ok(stats);
        }
        let last = h.abs() >= remaining.abs();
        if last {
            h = remaining;
        }
        let mut ynew = *y;
        for s in 1..7 {
            let mut ys = *y;
            for (c, yc) in ys.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += DP_A[s][j] * k[j][c];
                }
                *yc += h * acc;
            }
            k[s] = rhs(t + DP_C[s] * h, &ys)?;
            if s == 6 {
                // The seventh stage sits at the fifth-order solution.
                ynew = ys;
            }
        }
        let mut err = 0.0f64;
        let mut raw = 0.0f64;
        for c in 0..N {
            let mut acc = 0.0;
            for j in 0..7 {
                acc += DP_E[j] * k[j][c];
            }
            let e = (h * acc).abs();
            raw = raw.max(e);
            let sc = rel_tol * scales[c].max(y[c].abs()).max(ynew[c].abs());
            err = err.max(e / sc);
        }
        attempts += 1;
        if attempts > max_steps {
            return Err(Error::numerics(format!(
                "characteristic integration exceeded {max_steps} steps at tolerance {rel_tol}"
            )));
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            *y = ynew;
            k[0] = k[6];
            stats.steps += 1;
            stats.err_sum += raw;
            observe(t, y);
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
            h = dir * (h.abs() * fac).min(hmax);
        } else {
            let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            h *= fac;
            if h.abs() < 1e-12 * span.abs() {
                return Err(Error::numerics(
                    "characteristic integration step size collapsed",
                ));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// periodic-plus-ramp scalars
// ---------------------------------------------------------------------------

/// A scalar of the form `p(x) + (x1/lambda1) r(x)` with `p` and `r`
/// lattice-periodic: the class containing every transport solution. The
/// period jump `g(. + lambda1 e1) - g` is exactly `r`.
#[derive(Clone)]
pub struct RampScalar {
    pub periodic: ScalarField,
    pub ramp: ScalarField,
}

impl RampScalar {
    pub fn from_periodic(f: &ScalarField) -> Self {
        RampScalar { periodic: f.clone(), ramp: ScalarField::zeros(&f.grid) }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.periodic.grid
    }

    /// Node values `p + (x1/lambda1) r`.
    pub fn values(&self) -> Array3<f64> {
        let grid = self.grid().clone();
        let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
        let pv = self.periodic.values();
        let rv = self.ramp.values();
        let mut out = Array3::<f64>::zeros((n1, n2, nz));
        for i1 in 0..n1 {
            let s = grid.x1[i1] / grid.spec.lambda1;
            for i2 in 0..n2 {
                for iz in 0..nz {
                    out[[i1, i2, iz]] = pv[[i1, i2, iz]] + s * rv[[i1, i2, iz]];
                }
            }
        }
        out
    }

    /// The period jump `g(. + lambda1 e1) - g`.
    pub fn jump(&self) -> &ScalarField {
        &self.ramp
    }

    /// Gradient split into its periodic part and its ramp part: the full
    /// gradient is the first plus `x1/lambda1` times the second, and the
    /// ramp part is the gradient of the jump.
    pub fn grad_vectors(&self) -> (VectorField, VectorField) {
        let lambda1 = self.grid().spec.lambda1;
        let periodic = VectorField::from_components(
            self.periodic.diff_x1().add(&self.ramp.scale(1.0 / lambda1)),
            self.periodic.diff_x2(),
            self.periodic.diff_z(),
        );
        let ramp = VectorField::from_components(
            self.ramp.diff_x1(),
            self.ramp.diff_x2(),
            self.ramp.diff_z(),
        );
        (periodic, ramp)
    }

    /// The advective derivative `v . grad g` for a periodic `v`, staying in
    /// the periodic-plus-ramp class.
    pub fn dot_grad(&self, v: &VectorField) -> RampScalar {
        let (p, r) = self.grad_vectors();
        RampScalar { periodic: v.dot(&p), ramp: v.dot(&r) }
    }

    pub fn scale(&self, a: f64) -> Self {
        RampScalar { periodic: self.periodic.scale(a), ramp: self.ramp.scale(a) }
    }

    pub fn add(&self, other: &RampScalar) -> Self {
        RampScalar {
            periodic: self.periodic.add(&other.periodic),
            ramp: self.ramp.add(&other.ramp),
        }
    }

    pub fn sub(&self, other: &RampScalar) -> Self {
        RampScalar {
            periodic: self.periodic.sub(&other.periodic),
            ramp: self.ramp.sub(&other.ramp),
        }
    }
}

/// Streamwise antiderivative of a periodic field, vanishing on the inflow
/// plane, exact per mode: the transport solution for straight characteristics
/// up to the factor `u1`.
pub fn cumulative_x1(f: &ScalarField) -> RampScalar {
    let grid = f.grid.clone();
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let lambda1 = grid.spec.lambda1;
    let mut p = Array3::<C64>::zeros((n1, n2, nz));
    let mut r = Array3::<C64>::zeros((n1, n2, nz));
    for m1 in 0..n1 {
        let (k1, _) = grid.wavenumber(m1, 0);
        for m2 in 0..n2 {
            for iz in 0..nz {
                let a = f.coeffs[[m1, m2, iz]];
                if grid.j1[m1] == 0 {
                    // x1 a = (x1/lambda1)(lambda1 a)
                    r[[m1, m2, iz]] += lambda1 * a;
                } else {
                    let b = a / C64::new(0.0, k1);
                    p[[m1, m2, iz]] += b;
                    // subtract the antiderivative's value on the inflow plane
                    p[[0, m2, iz]] -= b;
                }
            }
        }
    }
    RampScalar {
        periodic: ScalarField { grid: grid.clone(), coeffs: p, sym: None },
        ramp: ScalarField { grid, coeffs: r, sym: None },
    }
}

// ---------------------------------------------------------------------------
// solutions and traces
// ---------------------------------------------------------------------------

/// One transport solve: grid values, the periodic-plus-ramp decomposition,
/// and integration diagnostics.
pub struct TransportSolution {
    pub values: GridScalar,
    pub form: RampScalar,
    pub steps: usize,
    /// Largest per-node sum of accepted local error estimates.
    pub error_estimate: f64,
}

impl TransportSolution {
    pub fn negated(self) -> Self {
        TransportSolution {
            values: GridScalar {
                grid: self.values.grid.clone(),
                values: self.values.values.mapv(|v| -v),
            },
            form: self.form.scale(-1.0),
            steps: self.steps,
            error_estimate: self.error_estimate,
        }
    }
}

/// One integrated characteristic with its accepted-step path.
pub struct FlowTrace {
    /// Crosswise start position `(x2, x3)`.
    pub start: (f64, f64),
    /// Streamwise plane the trace starts from.
    pub base_t: f64,
    /// Accepted-step path samples `(t, x2, x3)`, beginning with the start.
    pub samples: Vec<(f64, f64, f64)>,
    pub steps: usize,
    pub error_estimate: f64,
}

impl FlowTrace {
    pub fn end(&self) -> (f64, f64) {
        let &(_, x2, x3) = self.samples.last().expect("trace has at least the start");
        (x2, x3)
    }

    /// Polyline form for plotting.
    pub fn csv(&self) -> String {
        let mut out = String::from("t,x2,x3\n");
        for &(t, x2, x3) in &self.samples {
            out.push_str(&format!("{t:.17e},{x2:.17e},{x3:.17e}\n"));
        }
        out
    }
}

/// Travel time `tau` and orbital period `q` of a velocity field over a
/// deformed cell.
pub struct TimeFunctions {
    /// Solves `u . grad tau = rho` with `tau = 0` on the inflow plane.
    pub tau: TransportSolution,
    /// The jump `tau(. + lambda1 e1) - tau`: lattice-periodic and constant
    /// along streamlines.
    pub q: ScalarField,
    /// The velocity the functions belong to.
    pub u: VectorField,
}

// ---------------------------------------------------------------------------
// the transport operator
// ---------------------------------------------------------------------------

/// Characteristic tracer for one velocity field with a stagnation margin:
/// every evaluation enforces `u1 > delta`.
pub struct Transport {
    pub u: VectorField,
    grid: Arc<Grid>,
    usamp: VectorSampler,
    pub delta: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
    /// Launch characteristics only from the `x2 <= lambda2/2` half of the
    /// grid and mirror the remaining rows, when both the velocity and the
    /// data are reflection-symmetric in `x2` (the crosswise velocity odd,
    /// everything else even). The mirrored sweep agrees with the full sweep
    /// to the integration tolerance; off by default so that generic runs and
    /// symmetry diagnostics never assume what they are checking.
    pub exploit_symmetry: bool,
}

struct RampSampler {
    p: ScalarSampler,
    r: Option<ScalarSampler>,
    inv_lambda1: f64,
}

impl RampSampler {
    fn new(f: &RampScalar) -> Self {
        let r = if f.ramp.coeff_sup() == 0.0 { None } else { Some(f.ramp.sampler()) };
        RampSampler {
            p: f.periodic.sampler(),
            r,
            inv_lambda1: 1.0 / f.grid().spec.lambda1,
        }
    }

    fn from_periodic(f: &ScalarField) -> Self {
        RampSampler { p: f.sampler(), r: None, inv_lambda1: 0.0 }
    }

    fn eval(&self, t: f64, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> f64 {
        let mut v = self.p.eval(t, x2, x3, scratch);
        if let Some(r) = &self.r {
            v += t * self.inv_lambda1 * r.eval(t, x2, x3, scratch);
        }
        v
    }

    /// The periodic jump field alone.
    fn ramp_eval(&self, t: f64, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> f64 {
        match &self.r {
            Some(r) => r.eval(t, x2, x3, scratch),
            None => 0.0,
        }
    }
}

impl Transport {
    pub fn new(u: &VectorField, delta: f64, rel_tol: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::invalid("stagnation margin delta must be positive"));
        }
        if !(rel_tol > 0.0) {
            return Err(Error::invalid("integration tolerance must be positive"));
        }
        let grid = u.grid.clone();
        let u1min = u
            .comp(0)
            .values()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if u1min <= delta {
            return Err(Error::regime(format!(
                "streamwise velocity reaches {u1min}, at or below the stagnation margin {delta}"
            )));
        }
        Ok(Transport {
            u: u.clone(),
            grid,
            usamp: VectorSampler::new(u),
            delta,
            rel_tol,
            max_steps: 100_000,
            exploit_symmetry: false,
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Slab check, stagnation check, and the crosswise slope of the
    /// characteristic: `(u2/u1, u3/u1)` together with `u1` itself.
    fn flow_step(
        &self,
        t: f64,
        x2: f64,
        x3: f64,
        scratch: &mut SamplerScratch,
    ) -> Result<([f64; 2], f64)> {
        let d = self.grid.spec.d;
        if x3 > SLAB_SLACK * d || x3 < -d * (1.0 + SLAB_SLACK) {
            return Err(Error::numerics(format!(
                "characteristic left the slab at x3 = {x3}"
            )));
        }
        let uv = self.usamp.eval(t, x2, x3, scratch);
        if uv[0] <= self.delta {
            return Err(Error::regime(format!(
                "stagnation on a characteristic: u1 = {} at t = {t}, below the margin {}",
                uv[0], self.delta
            )));
        }
        Ok(([uv[1] / uv[0], uv[2] / uv[0]], uv[0]))
    }

    /// The characteristic through `(base_t, y0)` integrated over `span`
    /// (negative for upstream).
    pub fn trace_flow(&self, y0: (f64, f64), base_t: f64, span: f64) -> Result<FlowTrace> {
        let mut scratch = SamplerScratch::new();
        let mut y = [y0.0, y0.1];
        let mut samples = vec![(base_t, y0.0, y0.1)];
        let scales = [self.grid.spec.lambda2, self.grid.spec.d];
        let stats = integrate(
            &mut y,
            base_t,
            base_t + span,
            self.rel_tol,
            scales,
            self.max_steps,
            |t, y| self.flow_step(t, y[0], y[1], &mut scratch).map(|(cw, _)| cw),
            |t, y| samples.push((t, y[0], y[1])),
        )?;
        Ok(FlowTrace {
            start: y0,
            base_t,
            samples,
            steps: stats.steps,
            error_estimate: stats.err_sum,
        })
    }

    /// Whether the half-grid mirror sweep applies: opted in, symmetric
    /// velocity, and data even in `x2`.
    fn mirrored(&self, x2_even: bool) -> bool {
        self.exploit_symmetry && x2_even && self.u.sym == Some(vector_plus())
    }

    fn solve_sampled(&self, fs: &RampSampler, x2_even: bool) -> Result<TransportSolution> {
        let grid = &self.grid;
        let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
        let lambda1 = grid.spec.lambda1;
        let scales = [grid.spec.lambda2, grid.spec.d, 1.0, 1.0];
        let mut gv = Array3::<f64>::zeros((n1, n2, nz));
        let mut qv = Array3::<f64>::zeros((n1, n2, nz));
        let mut scratch = SamplerScratch::new();
        let mut steps = 0usize;
        let mut err_max = 0.0f64;
        let half = self.mirrored(x2_even);
        let i2_top = if half { n2 / 2 } else { n2 - 1 };
        // State: crosswise position, the data integral, and the integral of
        // the data's own jump field along the same path.
        let rhs = |this: &Self, fs: &RampSampler, t: f64, y: &[f64; 4], scr: &mut SamplerScratch| {
            let (cw, u1) = this.flow_step(t, y[0], y[1], scr)?;
            Ok([
                cw[0],
                cw[1],
                fs.eval(t, y[0], y[1], scr) / u1,
                fs.ramp_eval(t, y[0], y[1], scr) / u1,
            ])
        };
        // The jump of the solution obeys the same transport equation with the
        // data's own jump as right-hand side, so it is determined by a table
        // over the inflow plane plus a per-node integral of the data jump.
        // Close the table first: one full period upstream of each plane node,
        // accumulating both the shifted-window value integral and the
        // data-jump integral, which run over the same leg there.
        let mut plane = Array2::<f64>::zeros((n2, nz));
        for i2 in 0..=i2_top {
            let x2 = grid.x2[i2];
            for iz in 0..nz {
                let mut y = [x2, grid.z[iz], 0.0, 0.0];
                let s = integrate(
                    &mut y,
                    0.0,
                    -lambda1,
                    self.rel_tol,
                    scales,
                    self.max_steps,
                    |t, y| rhs(self, fs, t, y, &mut scratch),
                    |_, _| {},
                )?;
                plane[[i2, iz]] = -y[2] - y[3];
                steps += s.steps;
                err_max = err_max.max(s.err_sum);
            }
        }
        if half {
            for i2 in 1..n2 - n2 / 2 {
                for iz in 0..nz {
                    plane[[n2 - i2, iz]] = plane[[i2, iz]];
                }
            }
        }
        let plane_s = PlaneSampler::from_plane_values(grid, &plane);
        // Per node: one upstream leg to the inflow plane. The value integral
        // gives the solution; the jump is the plane table at the foot of the
        // characteristic corrected by the data-jump integral along the leg.
        for i1 in 0..n1 {
            let x1 = grid.x1[i1];
            for i2 in 0..=i2_top {
                let x2 = grid.x2[i2];
                for iz in 0..nz {
                    let mut y = [x2, grid.z[iz], 0.0, 0.0];
                    let s1 = integrate(
                        &mut y,
                        x1,
                        0.0,
                        self.rel_tol,
                        scales,
                        self.max_steps,
                        |t, y| rhs(self, fs, t, y, &mut scratch),
                        |_, _| {},
                    )?;
                    gv[[i1, i2, iz]] = -y[2];
                    qv[[i1, i2, iz]] = plane_s.eval(y[0], y[1], &mut scratch) - y[3];
                    steps += s1.steps;
                    err_max = err_max.max(s1.err_sum);
                }
            }
        }
        if half {
            for i1 in 0..n1 {
                for i2 in 1..n2 - n2 / 2 {
                    for iz in 0..nz {
                        gv[[i1, n2 - i2, iz]] = gv[[i1, i2, iz]];
                        qv[[i1, n2 - i2, iz]] = qv[[i1, i2, iz]];
                    }
                }
            }
        }
        let qf = ScalarField::from_values(grid, &qv);
        let mut pv = gv.clone();
        for i1 in 0..n1 {
            let s = grid.x1[i1] / lambda1;
            for i2 in 0..n2 {
                for iz in 0..nz {
                    pv[[i1, i2, iz]] -= s * qv[[i1, i2, iz]];
                }
            }
        }
        let pf = ScalarField::from_values(grid, &pv);
        Ok(TransportSolution {
            values: GridScalar { grid: grid.clone(), values: gv },
            form: RampScalar { periodic: pf, ramp: qf },
            steps,
            error_estimate: err_max,
        })
    }

    /// Solve `u . grad g = f`, `g = 0` on the inflow plane, by tracing the
    /// characteristic through every grid node.
    pub fn solve_transport(&self, f: &ScalarField) -> Result<TransportSolution> {
        let even = f.sym.is_some_and(|s| s.p2 == Parity::Even);
        self.solve_sampled(&RampSampler::from_periodic(f), even)
    }

    fn solve_ramp(&self, f: &RampScalar) -> Result<TransportSolution> {
        let even = f.periodic.sym.is_some_and(|s| s.p2 == Parity::Even)
            && f.ramp.sym.is_some_and(|s| s.p2 == Parity::Even);
        self.solve_sampled(&RampSampler::new(f), even)
    }

    /// Travel time and orbital period over the cell of height `rho d`.
    pub fn time_functions(&self, eta: &SurfaceProfile) -> Result<TimeFunctions> {
        let grid = &self.grid;
        let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
        let ev = eta.values();
        let mut rv = Array3::<f64>::zeros((n1, n2, nz));
        for i1 in 0..n1 {
            for i2 in 0..n2 {
                let v = 1.0 + ev[[i1, i2]] / grid.spec.d;
                for iz in 0..nz {
                    rv[[i1, i2, iz]] = v;
                }
            }
        }
        let mut rho = ScalarField::from_values(grid, &rv);
        // The constant shift keeps only the all-even class.
        if eta.sym == Some(ScalarSym::plus()) {
            rho.sym = eta.sym;
        }
        let sol = self.solve_transport(&rho)?;
        let q = sol.form.ramp.clone();
        Ok(TimeFunctions { tau: sol, q, u: self.u.clone() })
    }

    /// Formal velocity derivative of the solution map:
    /// `-g[u, v . grad g[u, f]]` for the already-computed base solution.
    pub fn du_g(&self, base: &TransportSolution, v: &VectorField) -> Result<TransportSolution> {
        let rhs = base.form.dot_grad(v);
        Ok(self.solve_ramp(&rhs)?.negated())
    }

    /// Second formal velocity derivative, the symmetrized recursion of the
    /// first.
    pub fn du2_g(
        &self,
        f: &ScalarField,
        v1: &VectorField,
        v2: &VectorField,
    ) -> Result<TransportSolution> {
        let base = self.solve_transport(f)?;
        let d1 = self.du_g(&base, v1)?;
        let d2 = self.du_g(&base, v2)?;
        let rhs = d1.form.dot_grad(v2).add(&d2.form.dot_grad(v1));
        Ok(self.solve_ramp(&rhs)?.negated())
    }

    /// Compare the finite difference of the solution map against its formal
    /// derivative over the given steps, and split the smallest-step gap into
    /// low-mode and derivative-weighted seminorms. The seminorm ratio is the
    /// qualitative trace of the one-derivative loss of the formal derivative;
    /// it is reported, not thresholded.
    pub fn derivative_check(
        &self,
        f: &ScalarField,
        v: &VectorField,
        steps: &[f64],
    ) -> Result<DerivativeReport> {
        let base = self.solve_transport(f)?;
        let dg = self.du_g(&base, v)?;
        let mut gaps = Vec::with_capacity(steps.len());
        let mut last_form: Option<RampScalar> = None;
        for &t in steps {
            let ut = self.u.add(&v.scale(t));
            let mut tr = Transport::new(&ut, self.delta, self.rel_tol)?;
            tr.max_steps = self.max_steps;
            let gt = tr.solve_transport(f)?;
            let mut gap = 0.0f64;
            for (i, gv) in gt.values.values.iter().enumerate() {
                let b = base.values.values.as_slice().unwrap()[i];
                let d = dg.values.values.as_slice().unwrap()[i];
                gap = gap.max((gv - b - t * d).abs());
            }
            gaps.push((t, gap));
            last_form = Some(gt.form.sub(&base.form).sub(&dg.form.scale(t)));
        }
        let (low, weighted) = match &last_form {
            Some(form) => seminorms(form),
            None => (0.0, 0.0),
        };
        Ok(DerivativeReport {
            gaps,
            low_seminorm: low,
            weighted_seminorm: weighted,
            v_sup: v.sup_norm(),
        })
    }
}

/// Finite-difference-versus-derivative diagnostics for the solution map.
pub struct DerivativeReport {
    /// `(step, sup gap)` per requested step; quadratic in the step when the
    /// formal derivative is correct.
    pub gaps: Vec<(f64, f64)>,
    /// Gap measured over the low horizontal modes only.
    pub low_seminorm: f64,
    /// Gap with coefficients weighted up by `1 + |j|^2/4`.
    pub weighted_seminorm: f64,
    pub v_sup: f64,
}

/// Coefficient seminorms of a periodic-plus-ramp gap: sup over the modes
/// with `|j1|, |j2| <= 2`, and sup with quadratic mode weights.
fn seminorms(form: &RampScalar) -> (f64, f64) {
    let grid = form.grid().clone();
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let mut low = 0.0f64;
    let mut weighted = 0.0f64;
    for part in [&form.periodic, &form.ramp] {
        for m1 in 0..n1 {
            let j1 = grid.j1[m1];
            for m2 in 0..n2 {
                let j2 = grid.j2[m2];
                let mut mx = 0.0f64;
                for iz in 0..nz {
                    mx = mx.max(part.coeffs[[m1, m2, iz]].norm());
                }
                if j1.abs() <= 2 && j2.abs() <= 2 {
                    low = low.max(mx);
                }
                let w = 1.0 + ((j1 * j1 + j2 * j2) as f64) / 4.0;
                weighted = weighted.max(w * mx);
            }
        }
    }
    (low, weighted)
}

// ---------------------------------------------------------------------------
// closed forms at the uniform stream
// ---------------------------------------------------------------------------

/// Velocity derivative of the travel time at the uniform stream `c e1` over
/// the flat cell: `-(1/c^2)` times the streamwise antiderivative of the
/// first perturbation component.
pub fn tau_derivative_u(c: f64, u_dot: &VectorField) -> RampScalar {
    cumulative_x1(&u_dot.comp(0)).scale(-1.0 / (c * c))
}

/// Surface derivative of the travel time at the uniform stream: the cell
/// height change integrated streamwise.
pub fn tau_derivative_eta(c: f64, eta_dot: &SurfaceProfile) -> RampScalar {
    let grid = eta_dot.grid.clone();
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let mut coeffs = Array3::<C64>::zeros((n1, n2, nz));
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            for iz in 0..nz {
                coeffs[[m1, m2, iz]] = eta_dot.coeffs[[m1, m2]];
            }
        }
    }
    let d = grid.spec.d;
    let lifted = ScalarField { grid, coeffs, sym: eta_dot.sym };
    cumulative_x1(&lifted).scale(1.0 / (c * d))
}

/// Residual of the cancellation between the two period derivatives at the
/// uniform stream: the period is stationary along the trivial branch, so the
/// velocity route (through the linearized background stream) must cancel the
/// surface route exactly.
pub fn q_identity_residual(grid: &Arc<Grid>, c: f64, eta_dot: &SurfaceProfile) -> f64 {
    let u_dot = crate::divcurl::d_background_flow(grid, eta_dot);
    let velocity_route = tau_derivative_u(c, &u_dot).ramp.scale(c);
    let surface_route = tau_derivative_eta(c, eta_dot).ramp;
    velocity_route.add(&surface_route).sup_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{vector_plus, ScalarSym};
    use crate::lattice::{make_grid, LatticeSpec};

    fn grid(n: usize, nz: usize) -> Arc<Grid> {
        let spec = LatticeSpec::from_wavenumbers(1.0, 1.0, 1.0, 1.0, 1.0, n, n, nz).unwrap();
        make_grid(&spec).unwrap()
    }

    /// Smooth admissible perturbation in the velocity symmetry class,
    /// tangential at both boundary planes.
    fn perturbation(g: &Arc<Grid>, amp: f64) -> VectorField {
        let d = g.spec.d;
        VectorField::sample(g, |x1, x2, z| {
            let w = (std::f64::consts::PI * z / d).sin();
            [
                amp * x1.cos() * x2.cos() * (1.0 + 0.5 * (std::f64::consts::PI * z / d).cos()),
                amp * x1.sin() * x2.sin() * (1.0 - 0.3 * w),
                amp * x1.sin() * x2.cos() * w,
            ]
        })
    }

    fn stream(g: &Arc<Grid>, c: f64, amp: f64) -> VectorField {
        VectorField::uniform_x1(g, c).add(&perturbation(g, amp))
    }

    #[test]
    fn integrator_hits_reference_solutions() {
        // Scalar exponential growth in the third slot.
        let mut y = [0.0, 0.0, 1.0];
        let stats = integrate(
            &mut y,
            0.0,
            1.0,
            1e-11,
            [1.0, 1.0, 1.0],
            10_000,
            |_, y| Ok([0.0, 0.0, y[2]]),
            |_, _| {},
        )
        .unwrap();
        assert!((y[2] - std::f64::consts::E).abs() < 1e-10);
        assert!(stats.steps > 5);
        // Harmonic rotation in the first two slots, one full turn, backward.
        let mut y = [1.0, 0.0, 0.0];
        integrate(
            &mut y,
            0.0,
            -std::f64::consts::TAU,
            1e-11,
            [1.0, 1.0, 1.0],
            10_000,
            |_, y| Ok([-y[1], y[0], 0.0]),
            |_, _| {},
        )
        .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
        assert!(y[1].abs() < 1e-9);
    }

    #[test]
    fn integrator_rejects_impossible_tolerances() {
        let mut y = [0.0, 0.0, 1.0];
        let err = integrate(
            &mut y,
            0.0,
            1.0,
            1e-11,
            [1.0, 1.0, 1.0],
            3,
            |_, y| Ok([0.0, 0.0, 50.0 * y[2]]),
            |_, _| {},
        )
        .unwrap_err();
        assert!(err.to_string().contains("steps"));
    }

    #[test]
    fn uniform_stream_has_identity_flow() {
        let g = grid(8, 9);
        let u = VectorField::uniform_x1(&g, 2.0);
        let tr = Transport::new(&u, 0.2, 1e-10).unwrap();
        let trace = tr.trace_flow((1.3, -0.4), 0.0, g.spec.lambda1).unwrap();
        assert_eq!(trace.samples[0], (0.0, 1.3, -0.4));
        for &(_, x2, x3) in &trace.samples {
            assert!(x2 == 1.3 && x3 == -0.4);
        }
    }

    #[test]
    fn streamwise_only_velocity_has_constant_paths() {
        let g = grid(8, 9);
        // Positive, varying first component; no crosswise flow at all.
        let u = VectorField::sample(&g, |_, x2, z| [2.0 + 0.4 * x2.cos() + 0.2 * z, 0.0, 0.0]);
        let tr = Transport::new(&u, 0.5, 1e-10).unwrap();
        let trace = tr.trace_flow((0.7, -0.6), 0.3, -2.0).unwrap();
        for &(_, x2, x3) in &trace.samples {
            assert!(x2 == 0.7 && x3 == -0.6);
        }
    }

    #[test]
    fn flow_of_a_symmetric_velocity_is_periodic() {
        let g = grid(12, 13);
        let u = stream(&g, 2.0, 0.1);
        assert!(u.symmetry_defect(vector_plus()) < 1e-12);
        let tr = Transport::new(&u, 0.5, 1e-11).unwrap();
        let y0 = (1.1, -0.35);
        // One full period returns to the start.
        let ret = tr.trace_flow(y0, 0.0, g.spec.lambda1).unwrap();
        let (x2, x3) = ret.end();
        assert!((x2 - y0.0).abs() < 1e-8, "x2 drift {}", x2 - y0.0);
        assert!((x3 - y0.1).abs() < 1e-8);
        // Shifting the span start by a period does not move the path.
        let t_star = 0.7 * g.spec.lambda1;
        let a = tr.trace_flow(y0, 0.0, t_star).unwrap().end();
        let b = tr.trace_flow(y0, 0.0, t_star + g.spec.lambda1).unwrap().end();
        assert!((a.0 - b.0).abs() < 1e-8);
        assert!((a.1 - b.1).abs() < 1e-8);
    }

    #[test]
    fn paths_stay_inside_the_slab() {
        let g = grid(12, 13);
        let u = stream(&g, 2.0, 0.15);
        let tr = Transport::new(&u, 0.5, 1e-10).unwrap();
        for &(x2, x3) in &[(0.0, 0.0), (1.0, -1.0), (2.0, -0.5), (4.0, -0.93)] {
            let trace = tr.trace_flow((x2, x3), 0.0, 2.0 * g.spec.lambda1).unwrap();
            for &(_, _, z) in &trace.samples {
                assert!(z < 1e-9 && z > -g.spec.d - 1e-9, "escaped to {z}");
            }
        }
    }

    #[test]
    fn stagnation_is_reported() {
        let g = grid(8, 9);
        let u = VectorField::uniform_x1(&g, 0.05);
        assert!(Transport::new(&u, 0.1, 1e-10).is_err());
        // Dips below the margin away from the uniform part.
        let u = VectorField::sample(&g, |x1, _, _| [0.5 + 0.48 * x1.cos(), 0.0, 0.0]);
        assert!(Transport::new(&u, 0.1, 1e-10).is_err());
    }

    #[test]
    fn trivial_time_functions_are_linear_and_constant() {
        let g = grid(8, 9);
        let c = 2.0;
        let u = VectorField::uniform_x1(&g, c);
        let tr = Transport::new(&u, 0.2, 1e-10).unwrap();
        let tf = tr.time_functions(&SurfaceProfile::zeros(&g)).unwrap();
        // tau = x1/c on the nodes; exactly zero on the inflow plane.
        for i1 in 0..g.n1() {
            for i2 in 0..g.n2() {
                for iz in 0..g.nz() {
                    let want = g.x1[i1] / c;
                    let got = tf.tau.values.values[[i1, i2, iz]];
                    if i1 == 0 {
                        assert!(got == 0.0);
                    } else {
                        assert!((got - want).abs() < 1e-11, "tau {got} want {want}");
                    }
                }
            }
        }
        // q is identically lambda1/c = pi here.
        let qsup = tf.q.sub(&ScalarField::zeros(&g).add_constant(std::f64::consts::PI));
        assert!(qsup.sup_norm() < 1e-11);
    }

    #[test]
    fn straight_characteristic_quadrature_matches_the_antiderivative() {
        let g = grid(8, 9);
        let c = 2.0;
        let u = VectorField::uniform_x1(&g, c);
        let tr = Transport::new(&u, 0.2, 1e-10).unwrap();
        let f = ScalarField::sample(&g, |x1, _, _| x1.cos());
        let sol = tr.solve_transport(&f).unwrap();
        for i1 in 0..g.n1() {
            let want = g.x1[i1].sin() / c;
            for i2 in 0..g.n2() {
                for iz in 0..g.nz() {
                    let got = sol.values.values[[i1, i2, iz]];
                    assert!((got - want).abs() < 5e-10, "g {got} want {want}");
                }
            }
        }
        // The jump vanishes for a mean-free integrand on straight paths.
        assert!(sol.form.jump().sup_norm() < 1e-9);
        // And the closed-form antiderivative agrees everywhere.
        let closed = cumulative_x1(&f).scale(1.0 / c);
        let gap = sol
            .form
            .sub(&closed)
            .periodic
            .sup_norm()
            .max(sol.form.sub(&closed).ramp.sup_norm());
        assert!(gap < 1e-9);
    }

    #[test]
    fn zero_data_gives_the_zero_solution() {
        let g = grid(8, 9);
        let u = stream(&g, 2.0, 0.1);
        let tr = Transport::new(&u, 0.5, 1e-10).unwrap();
        let sol = tr.solve_transport(&ScalarField::zeros(&g)).unwrap();
        assert!(sol.values.sup_norm() == 0.0);
    }

    #[test]
    fn solution_is_linear_in_the_data() {
        let g = grid(8, 9);
        let u = stream(&g, 2.0, 0.08);
        let tr = Transport::new(&u, 0.5, 1e-10).unwrap();
        let f1 = ScalarField::sample(&g, |x1, x2, z| (x1 + x2).cos() * (1.0 + z));
        let f2 = ScalarField::sample(&g, |x1, x2, z| x1.cos() * x2.cos() - 0.5 * z);
        let a = tr.solve_transport(&f1).unwrap();
        let b = tr.solve_transport(&f2).unwrap();
        let ab = tr.solve_transport(&f1.add(&f2)).unwrap();
        let mut gap = 0.0f64;
        for i in 0..ab.values.values.len() {
            let s = ab.values.values.as_slice().unwrap();
            let sa = a.values.values.as_slice().unwrap();
            let sb = b.values.values.as_slice().unwrap();
            gap = gap.max((s[i] - sa[i] - sb[i]).abs());
        }
        assert!(gap < 1e-9, "linearity gap {gap}");
    }

    #[test]
    fn transport_equation_holds_at_interior_points() {
        let g = grid(12, 13);
        let u = stream(&g, 2.0, 0.1);
        let tr = Transport::new(&u, 0.5, 1e-11).unwrap();
        let f = ScalarField::sample(&g, |x1, x2, z| x1.cos() * x2.cos() * (1.0 + 0.5 * z));
        let sol = tr.solve_transport(&f).unwrap();
        // Central differences of the evaluable form against the data.
        let ps = sol.form.periodic.sampler();
        let rs = sol.form.ramp.sampler();
        let us = u.sampler();
        let fs = f.sampler();
        let mut scratch = SamplerScratch::new();
        let lambda1 = g.spec.lambda1;
        let geval = |x: [f64; 3], scr: &mut SamplerScratch| {
            ps.eval(x[0], x[1], x[2], scr) + x[0] / lambda1 * rs.eval(x[0], x[1], x[2], scr)
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        for &x in &[[1.0, 2.0, -0.5], [2.5, 0.7, -0.2], [4.0, 5.0, -0.8]] {
            let mut grad = [0.0f64; 3];
            for c in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += h;
                xm[c] -= h;
                grad[c] = (geval(xp, &mut scratch) - geval(xm, &mut scratch)) / (2.0 * h);
            }
            let uv = us.eval(x[0], x[1], x[2], &mut scratch);
            let fv = fs.eval(x[0], x[1], x[2], &mut scratch);
            let resid = (uv[0] * grad[0] + uv[1] * grad[1] + uv[2] * grad[2] - fv).abs();
            worst = worst.max(resid);
        }
        assert!(worst < 1e-6, "pde residual {worst}");
        // The same identity, spectrally, through the decomposition.
        let (pvec, rvec) = sol.form.grad_vectors();
        let adv_p = u.dot(&pvec);
        let adv_r = u.dot(&rvec);
        let mut worst = 0.0f64;
        let apv = adv_p.values();
        let arv = adv_r.values();
        let fv = f.values();
        for i1 in 0..g.n1() {
            let s = g.x1[i1] / lambda1;
            for i2 in 0..g.n2() {
                for iz in 0..g.nz() {
                    let r = apv[[i1, i2, iz]] + s * arv[[i1, i2, iz]] - fv[[i1, i2, iz]];
                    worst = worst.max(r.abs());
                }
            }
        }
        assert!(worst < 1e-7, "spectral residual {worst}");
    }

    #[test]
    fn symmetry_chain_of_the_time_functions() {
        let g = grid(12, 13);
        let u = stream(&g, 2.0, 0.1);
        let tr = Transport::new(&u, 0.5, 1e-11).unwrap();
        let eta = SurfaceProfile::sample(&g, |x1, x2| 0.05 * x1.cos() * x2.cos());
        let tf = tr.time_functions(&eta).unwrap();
        // tau decomposes into an odd periodic part and an even jump.
        let scale = tf.q.sup_norm();
        assert!(tf.tau.form.periodic.symmetry_defect(ScalarSym::minus()) < 1e-8 * scale);
        assert!(tf.q.symmetry_defect(ScalarSym::plus()) < 1e-8 * scale);
        // q is constant along streamlines.
        let qg = VectorField::from_components(
            tf.q.diff_x1(),
            tf.q.diff_x2(),
            tf.q.diff_z(),
        );
        let adv = u.dot(&qg);
        assert!(adv.sup_norm() < 1e-7 * scale, "u.grad q = {}", adv.sup_norm());
        // The vorticity-type cross field of the two gradients is divergence
        // free and in the expected class.
        let (pvec, _) = tf.tau.form.grad_vectors();
        let cross = qg.cross(&pvec);
        assert!(cross.div().sup_norm() < 1e-6 * scale.max(1.0));
        assert!(cross.symmetry_defect(crate::field::vector_minus()) < 1e-7 * scale);
    }

    #[test]
    fn velocity_derivative_of_the_solution_map_is_quadratically_accurate() {
        // Wide enough dealias band that the advective products in the
        // derivative recursion are exactly representable.
        let g = grid(12, 13);
        let u = stream(&g, 2.0, 0.05);
        let tr = Transport::new(&u, 0.4, 1e-10).unwrap();
        let f = ScalarField::sample(&g, |x1, x2, z| x1.cos() * x2.cos() + 0.3 * z);
        let v = perturbation(&g, 1.0);
        let report = tr.derivative_check(&f, &v, &[1e-2, 1e-3]).unwrap();
        let (t0, g0) = report.gaps[0];
        let (t1, g1) = report.gaps[1];
        let slope = (g0 / g1).log10() / (t0 / t1).log10();
        assert!(slope > 1.9, "gap slope {slope}, gaps {:?}", report.gaps);
        assert!(report.low_seminorm.is_finite() && report.weighted_seminorm.is_finite());
        assert!(report.weighted_seminorm >= report.low_seminorm);
        assert!(report.v_sup > 0.0);
    }

    #[test]
    fn zero_direction_gives_a_zero_finite_difference() {
        let g = grid(8, 9);
        let u = stream(&g, 2.0, 0.05);
        let tr = Transport::new(&u, 0.4, 1e-10).unwrap();
        let f = ScalarField::sample(&g, |x1, x2, _| x1.cos() * x2.cos());
        let base = tr.solve_transport(&f).unwrap();
        let dg = tr.du_g(&base, &VectorField::zeros(&g)).unwrap();
        assert!(dg.values.sup_norm() == 0.0);
    }

    #[test]
    fn second_derivative_matches_finite_differences_of_the_first() {
        let g = grid(12, 13);
        let u = stream(&g, 2.0, 0.04);
        let tr = Transport::new(&u, 0.4, 1e-10).unwrap();
        let f = ScalarField::sample(&g, |x1, x2, _| x1.cos() * x2.cos());
        let v1 = perturbation(&g, 1.0);
        let v2 = VectorField::sample(&g, |x1, x2, z| {
            let w = (std::f64::consts::PI * z / g.spec.d).sin();
            [0.5 * (x1 + x2).cos(), 0.3 * x1.sin() * x2.sin(), 0.4 * x1.sin() * x2.cos() * w]
        });
        let base = tr.solve_transport(&f).unwrap();
        let db = tr.du_g(&base, &v2).unwrap();
        let d2 = tr.du2_g(&f, &v1, &v2).unwrap();
        let mut errs = Vec::new();
        for &t in &[1e-2, 1e-3] {
            let ut = u.add(&v1.scale(t));
            let trt = Transport::new(&ut, 0.4, 1e-10).unwrap();
            let base_t = trt.solve_transport(&f).unwrap();
            let da = trt.du_g(&base_t, &v2).unwrap();
            let mut gap = 0.0f64;
            let sa = da.values.values.as_slice().unwrap();
            let sb = db.values.values.as_slice().unwrap();
            let sd = d2.values.values.as_slice().unwrap();
            for i in 0..sa.len() {
                gap = gap.max((sa[i] - sb[i] - t * sd[i]).abs());
            }
            errs.push(gap);
        }
        let slope = (errs[0] / errs[1]).log10();
        assert!(slope > 1.9, "second-derivative slope {slope}, errs {errs:?}");
    }

    #[test]
    fn travel_time_derivatives_match_their_closed_forms() {
        let g = grid(8, 9);
        let c = 2.0;
        let u0 = VectorField::uniform_x1(&g, c);
        let flat = SurfaceProfile::zeros(&g);
        let tr0 = Transport::new(&u0, 0.4, 1e-11).unwrap();
        let tau0 = tr0.time_functions(&flat).unwrap();
        // Velocity direction.
        let udot = perturbation(&g, 1.0);
        let closed_u = tau_derivative_u(c, &udot);
        let mut errs = Vec::new();
        for &t in &[1e-2, 1e-3] {
            let trt = Transport::new(&u0.add(&udot.scale(t)), 0.4, 1e-11).unwrap();
            let taut = trt.time_functions(&flat).unwrap();
            let fd_p = taut.tau.form.periodic.sub(&tau0.tau.form.periodic);
            let fd_r = taut.tau.form.ramp.sub(&tau0.tau.form.ramp);
            let gap = fd_p
                .sub(&closed_u.periodic.scale(t))
                .sup_norm()
                .max(fd_r.sub(&closed_u.ramp.scale(t)).sup_norm());
            errs.push(gap);
        }
        let slope = (errs[0] / errs[1]).log10();
        assert!(slope > 1.9, "velocity-route slope {slope}, errs {errs:?}");
        // Surface direction. Over a uniform stream the dependence on the
        // surface is exactly linear, so the finite difference must match the
        // closed form to integration accuracy at every step size.
        let eta_dot = SurfaceProfile::sample(&g, |x1, x2| x1.cos() * x2.cos());
        let closed_eta = tau_derivative_eta(c, &eta_dot);
        for &t in &[1e-1, 1e-2] {
            let taut = tr0.time_functions(&eta_dot.scale(t)).unwrap();
            let fd_p = taut.tau.form.periodic.sub(&tau0.tau.form.periodic);
            let fd_r = taut.tau.form.ramp.sub(&tau0.tau.form.ramp);
            let gap = fd_p
                .sub(&closed_eta.periodic.scale(t))
                .sup_norm()
                .max(fd_r.sub(&closed_eta.ramp.scale(t)).sup_norm());
            assert!(gap < 1e-9, "surface-route gap {gap} at step {t}");
        }
    }

    #[test]
    fn period_is_stationary_at_the_uniform_stream() {
        let g = grid(8, 9);
        let c = 2.0;
        let eta_dot = SurfaceProfile::sample(&g, |x1, x2| x1.cos() * x2.cos());
        // Closed route through the linearized background stream.
        let resid = q_identity_residual(&g, c, &eta_dot);
        assert!(resid < 1e-8, "identity residual {resid}");
        // End-to-end: perturbing surface and velocity together leaves the
        // period unchanged to second order.
        let udot = crate::divcurl::d_background_flow(&g, &eta_dot).scale(c);
        let q0 = g.spec.lambda1 / c;
        let mut errs = Vec::new();
        for &t in &[1e-2, 1e-3] {
            let ut = VectorField::uniform_x1(&g, c).add(&udot.scale(t));
            let tr = Transport::new(&ut, 0.4, 1e-11).unwrap();
            let tf = tr.time_functions(&eta_dot.scale(t)).unwrap();
            errs.push(tf.q.sub(&ScalarField::zeros(&g).add_constant(q0)).sup_norm());
        }
        let slope = (errs[0] / errs[1]).log10();
        assert!(slope > 1.9, "period slope {slope}, errs {errs:?}");
    }

    #[test]
    fn traces_export_as_csv_polylines() {
        let g = grid(8, 9);
        let u = stream(&g, 2.0, 0.1);
        let tr = Transport::new(&u, 0.5, 1e-9).unwrap();
        let trace = tr.trace_flow((0.5, -0.25), 0.0, 1.0).unwrap();
        let csv = trace.csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x2,x3"));
        assert_eq!(csv.lines().count(), trace.samples.len() + 1);
        let first = lines.next().unwrap();
        assert!(first.starts_with("0") || first.starts_with("-0"));
    }

    #[test]
    fn mirrored_sweep_matches_the_full_sweep() {
        let g = grid(10, 11);
        let u = stream(&g, 2.0, 0.1).symmetrize(vector_plus());
        let f = ScalarField::sample(&g, |x1, x2, z| {
            x1.cos() * (1.0 + 0.4 * x2.cos()) * (1.0 + 0.3 * z)
        })
        .symmetrize(ScalarSym::plus());
        let mut tr = Transport::new(&u, 0.5, 1e-11).unwrap();
        let full = tr.solve_transport(&f).unwrap();
        tr.exploit_symmetry = true;
        let half = tr.solve_transport(&f).unwrap();
        let dv = half.values.values.iter().zip(full.values.values.iter());
        let gap = dv.map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        assert!(gap < 1e-9, "value gap {gap}");
        let qgap = half.form.ramp.sub(&full.form.ramp).sup_norm();
        assert!(qgap < 1e-9, "jump gap {qgap}");
        assert!(half.steps < full.steps * 3 / 4, "{} vs {}", half.steps, full.steps);
        // The same halving applies through the travel-time wrapper.
        let eta = crate::synth::random_elevation(&g, &mut crate::synth::Rng::new(31), 2e-2);
        let base = Transport::new(&u, 0.5, 1e-11).unwrap().time_functions(&eta).unwrap();
        let fast = tr.time_functions(&eta).unwrap();
        assert!(fast.tau.steps < base.tau.steps);
        let tgap = fast
            .tau
            .form
            .periodic
            .sub(&base.tau.form.periodic)
            .sup_norm();
        assert!(tgap < 1e-9, "travel-time gap {tgap}");
        // Crosswise-odd data silently falls back to the full sweep.
        let odd = ScalarField::sample(&g, |x1, x2, _| x1.cos() * x2.sin())
            .symmetrize(ScalarSym::new(Parity::Even, Parity::Odd));
        let a = tr.solve_transport(&odd).unwrap();
        let b = Transport::new(&u, 0.5, 1e-11).unwrap().solve_transport(&odd).unwrap();
        assert_eq!(a.steps, b.steps);
    }
}
