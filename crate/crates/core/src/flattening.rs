//! Change of variables between the wavy fluid domain and the flat slab.
//!
//! A surface elevation eta deforms the slab `(-d, 0)` into the fluid domain
//! under the shear map `x3 -> x3 + pi` with `pi = eta(x') (1 + x3/d)`. The
//! Jacobian is `J = I + e3 (grad pi)^T` with determinant
//! `rho = 1 + eta/d`; vector fields push forward by `J fbar = rho f`, which
//! preserves the divergence-free property and turns the kinematic boundary
//! conditions into plain vanishing of the third component on flat planes.

use std::sync::Arc;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::field::{
    ProfileSampler, SamplerScratch, ScalarField, ScalarSampler, SurfaceProfile, VectorField,
    VectorSampler,
};
use crate::lattice::Grid;

/// Assembled transform data for one surface elevation.
pub struct Flattening {
    pub grid: Arc<Grid>,
    pub eta: SurfaceProfile,
    /// Shear displacement `eta (1 + x3/d)`.
    pub pi: ScalarField,
    pub grad_pi: VectorField,
    /// Jacobian determinant `1 + eta/d`, constant in x3.
    pub rho: ScalarField,
    pub rho_inv: ScalarField,
    min_rho: f64,
    /// Collocation values of `grad pi` and `1/rho`, cached for the pointwise
    /// metric applications on the solver hot path.
    gp_vals: [Array3<f64>; 3],
    rho_inv_vals: Array3<f64>,
}

impl Flattening {
    pub fn build(grid: &Arc<Grid>, eta: &SurfaceProfile) -> Result<Self> {
        let d = grid.spec.d;
        let eta_vals = eta.values();
        let min_rho = eta_vals.iter().map(|&e| 1.0 + e / d).fold(f64::INFINITY, f64::min);
        if !(min_rho > 0.0) {
            return Err(Error::regime(format!(
                "surface touches the bed: min(1 + eta/d) = {min_rho}"
            )));
        }
        let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
        let mut pi_vals = Array3::<f64>::zeros((n1, n2, nz));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                let e = eta_vals[[m1, m2]];
                for iz in 0..nz {
                    pi_vals[[m1, m2, iz]] = e * (1.0 + grid.z[iz] / d);
                }
            }
        }
        let pi = ScalarField::from_values(grid, &pi_vals);
        let d1 = eta.diff_x1();
        let d2 = eta.diff_x2();
        let d1_vals = d1.values();
        let d2_vals = d2.values();
        let mut g1 = Array3::<f64>::zeros((n1, n2, nz));
        let mut g2 = Array3::<f64>::zeros((n1, n2, nz));
        let mut g3 = Array3::<f64>::zeros((n1, n2, nz));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                for iz in 0..nz {
                    let taper = 1.0 + grid.z[iz] / d;
                    g1[[m1, m2, iz]] = d1_vals[[m1, m2]] * taper;
                    g2[[m1, m2, iz]] = d2_vals[[m1, m2]] * taper;
                    g3[[m1, m2, iz]] = eta_vals[[m1, m2]] / d;
                }
            }
        }
        let grad_pi = VectorField::from_components(
            ScalarField::from_values(grid, &g1),
            ScalarField::from_values(grid, &g2),
            ScalarField::from_values(grid, &g3),
        );
        let rho = eta.scale(1.0 / d).add_constant(1.0).extend_to_slab();
        let rho_inv = rho.map_values(|v| 1.0 / v);
        // Exact nodal values (before any dealias) for pointwise products.
        let mut rho_inv_vals = Array3::<f64>::zeros((n1, n2, nz));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                let v = 1.0 / (1.0 + eta_vals[[m1, m2]] / d);
                for iz in 0..nz {
                    rho_inv_vals[[m1, m2, iz]] = v;
                }
            }
        }
        Ok(Flattening {
            grid: grid.clone(),
            eta: eta.clone(),
            pi,
            grad_pi,
            rho,
            rho_inv,
            min_rho,
            gp_vals: [g1, g2, g3],
            rho_inv_vals,
        })
    }

    pub fn min_rho(&self) -> f64 {
        self.min_rho
    }

    /// Volume of the deformed fluid cell, as the integral of the determinant.
    pub fn cell_volume(&self) -> f64 {
        self.rho.cell_integral()
    }

    /// `J u = u + e3 (grad pi . u)`, pointwise on collocation values.
    pub fn j_apply(&self, u: &VectorField) -> VectorField {
        self.pointwise(u, |gp, _, v| {
            let dot = gp[0] * v[0] + gp[1] * v[1] + gp[2] * v[2];
            [v[0], v[1], v[2] + dot]
        })
    }

    /// `J^T u = u + (grad pi) u3`.
    pub fn j_transpose_apply(&self, u: &VectorField) -> VectorField {
        self.pointwise(u, |gp, _, v| {
            [v[0] + gp[0] * v[2], v[1] + gp[1] * v[2], v[2] + gp[2] * v[2]]
        })
    }

    /// `J^{-1} u = u - (1/rho) e3 (grad pi . u)`.
    pub fn j_inverse_apply(&self, u: &VectorField) -> VectorField {
        self.pointwise(u, |gp, rho_inv, v| {
            let dot = gp[0] * v[0] + gp[1] * v[1] + gp[2] * v[2];
            [v[0], v[1], v[2] - rho_inv * dot]
        })
    }

    /// The weighted metric `(1/rho) J^T J u` entering the deformed curl.
    pub fn weighted_metric(&self, u: &VectorField) -> VectorField {
        let mut out = self.pointwise(u, |gp, rho_inv, v| {
            let dot = gp[0] * v[0] + gp[1] * v[1] + gp[2] * v[2];
            let w3 = v[2] + dot;
            [
                rho_inv * (v[0] + gp[0] * w3),
                rho_inv * (v[1] + gp[1] * w3),
                rho_inv * (v[2] + gp[2] * w3 + dot),
            ]
        });
        // The metric preserves the velocity symmetry class.
        if u.sym == Some(crate::field::vector_plus()) {
            out.sym = Some(crate::field::vector_plus());
        }
        out
    }

    /// Curl of the physical velocity expressed in slab variables:
    /// `curl((1/rho) J^T J u)`.
    pub fn curl_weighted(&self, u: &VectorField) -> VectorField {
        self.weighted_metric(u).curl()
    }

    /// Jacobian determinant computed entrywise by cofactor expansion from the
    /// stored gradient, as an independent route to `rho`.
    pub fn det_j(&self) -> ScalarField {
        let gp = &self.gp_vals;
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        let mut det = Array3::<f64>::zeros((n1, n2, nz));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                for iz in 0..nz {
                    let a = [
                        [1.0, 0.0, 0.0],
                        [0.0, 1.0, 0.0],
                        [
                            gp[0][[m1, m2, iz]],
                            gp[1][[m1, m2, iz]],
                            1.0 + gp[2][[m1, m2, iz]],
                        ],
                    ];
                    det[[m1, m2, iz]] = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
                }
            }
        }
        ScalarField::from_values(&self.grid, &det)
    }

    fn pointwise(
        &self,
        u: &VectorField,
        f: impl Fn(&[f64; 3], f64, &[f64; 3]) -> [f64; 3],
    ) -> VectorField {
        let gp = &self.gp_vals;
        let ri = &self.rho_inv_vals;
        let uv = [u.comp(0).values(), u.comp(1).values(), u.comp(2).values()];
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        let mut out = [
            Array3::<f64>::zeros((n1, n2, nz)),
            Array3::<f64>::zeros((n1, n2, nz)),
            Array3::<f64>::zeros((n1, n2, nz)),
        ];
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                for iz in 0..nz {
                    let idx = [m1, m2, iz];
                    let g = [gp[0][idx], gp[1][idx], gp[2][idx]];
                    let v = [uv[0][idx], uv[1][idx], uv[2][idx]];
                    let w = f(&g, ri[idx], &v);
                    out[0][idx] = w[0];
                    out[1][idx] = w[1];
                    out[2][idx] = w[2];
                }
            }
        }
        let [a, b, c] = out;
        let mut res = VectorField::from_components(
            ScalarField::from_values(&self.grid, &a),
            ScalarField::from_values(&self.grid, &b),
            ScalarField::from_values(&self.grid, &c),
        );
        res.dealias();
        res
    }

    /// Image of a slab point under the shear map.
    pub fn push_point(&self, x1: f64, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> [f64; 3] {
        let eta = ProfileSampler::new(&self.eta).eval(x1, x2, scratch);
        [x1, x2, x3 + eta * (1.0 + x3 / self.grid.spec.d)]
    }
}

/// Sample a physical-domain scalar on the slab grid: `phibar = phi(Pi(.))`.
pub fn flatten_scalar(
    flat: &Flattening,
    phi: impl Fn(f64, f64, f64) -> f64,
) -> ScalarField {
    let grid = &flat.grid;
    let d = grid.spec.d;
    let eta_vals = flat.eta.values();
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let mut vals = Array3::<f64>::zeros((n1, n2, nz));
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            let e = eta_vals[[m1, m2]];
            for iz in 0..nz {
                let z = grid.z[iz];
                vals[[m1, m2, iz]] = phi(grid.x1[m1], grid.x2[m2], z + e * (1.0 + z / d));
            }
        }
    }
    ScalarField::from_values(grid, &vals)
}

/// Sample a physical-domain vector on the slab grid via the pushforward
/// `fbar = J^{-1} (rho f(Pi(.)))`, which preserves divergence freeness.
pub fn flatten_vector(
    flat: &Flattening,
    f: impl Fn(f64, f64, f64) -> [f64; 3],
) -> VectorField {
    let grid = &flat.grid;
    let d = grid.spec.d;
    let eta_vals = flat.eta.values();
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let mut vals = [
        Array3::<f64>::zeros((n1, n2, nz)),
        Array3::<f64>::zeros((n1, n2, nz)),
        Array3::<f64>::zeros((n1, n2, nz)),
    ];
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            let e = eta_vals[[m1, m2]];
            let rho = 1.0 + e / d;
            for iz in 0..nz {
                let z = grid.z[iz];
                let v = f(grid.x1[m1], grid.x2[m2], z + e * (1.0 + z / d));
                for c in 0..3 {
                    vals[c][[m1, m2, iz]] = rho * v[c];
                }
            }
        }
    }
    let [a, b, c] = vals;
    let scaled = VectorField::from_components(
        ScalarField::from_values(grid, &a),
        ScalarField::from_values(grid, &b),
        ScalarField::from_values(grid, &c),
    );
    flat.j_inverse_apply(&scaled)
}

/// A flattened scalar pulled back to the physical domain, evaluable anywhere
/// in the deformed fluid cell.
pub struct UnflattenedScalar {
    field: ScalarSampler,
    eta: ProfileSampler,
    d: f64,
}

impl UnflattenedScalar {
    pub fn new(flat: &Flattening, fbar: &ScalarField) -> Self {
        UnflattenedScalar {
            field: fbar.sampler(),
            eta: ProfileSampler::new(&flat.eta),
            d: flat.grid.spec.d,
        }
    }

    /// Value at a physical point `(x1, x2, x3)` with `-d <= x3 <= eta`.
    pub fn eval(&self, x1: f64, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> f64 {
        let e = self.eta.eval(x1, x2, scratch);
        let rho = 1.0 + e / self.d;
        let z = (x3 - e) / rho;
        self.field.eval(x1, x2, z, scratch)
    }
}

/// A flattened vector pulled back to the physical domain via
/// `f = ((1/rho) J fbar)(Pi^{-1}(.))`.
pub struct UnflattenedVector {
    field: VectorSampler,
    eta: ProfileSampler,
    eta_d1: ProfileSampler,
    eta_d2: ProfileSampler,
    d: f64,
}

impl UnflattenedVector {
    pub fn new(flat: &Flattening, fbar: &VectorField) -> Self {
        UnflattenedVector {
            field: fbar.sampler(),
            eta: ProfileSampler::new(&flat.eta),
            eta_d1: ProfileSampler::new(&flat.eta.diff_x1()),
            eta_d2: ProfileSampler::new(&flat.eta.diff_x2()),
            d: flat.grid.spec.d,
        }
    }

    pub fn eval(&self, x1: f64, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> [f64; 3] {
        let e = self.eta.eval(x1, x2, scratch);
        let e1 = self.eta_d1.eval(x1, x2, scratch);
        let e2 = self.eta_d2.eval(x1, x2, scratch);
        let rho = 1.0 + e / self.d;
        let z = (x3 - e) / rho;
        let taper = 1.0 + z / self.d;
        let gp = [e1 * taper, e2 * taper, e / self.d];
        let v = self.field.eval(x1, x2, z, scratch);
        let dot = gp[0] * v[0] + gp[1] * v[1] + gp[2] * v[2];
        [v[0] / rho, v[1] / rho, (v[2] + dot) / rho]
    }
}

/// Divergence form of the upward unit normal of the free surface
/// `x3 = eta(x')`: `div n = -div'(grad' eta / sqrt(1 + |grad' eta|^2))`.
/// Linearizes to `-lap eta`, matching the `sigma |k|^2` dispersion term.
pub fn surface_normal_divergence(eta: &SurfaceProfile) -> SurfaceProfile {
    let d1 = eta.diff_x1();
    let d2 = eta.diff_x2();
    let d1v = d1.values();
    let d2v = d2.values();
    let grid = &eta.grid;
    let (n1, n2) = (grid.n1(), grid.n2());
    let mut f1 = Array2::<f64>::zeros((n1, n2));
    let mut f2 = Array2::<f64>::zeros((n1, n2));
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            let g1 = d1v[[m1, m2]];
            let g2 = d2v[[m1, m2]];
            let den = (1.0 + g1 * g1 + g2 * g2).sqrt();
            f1[[m1, m2]] = g1 / den;
            f2[[m1, m2]] = g2 / den;
        }
    }
    let mut p1 = SurfaceProfile::from_values(grid, &f1);
    let mut p2 = SurfaceProfile::from_values(grid, &f2);
    p1.dealias();
    p2.dealias();
    p1.diff_x1().add(&p2.diff_x2()).scale(-1.0)
}
