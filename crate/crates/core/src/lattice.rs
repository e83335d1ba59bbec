//! Lattice description and the mixed collocation grid.
//!
//! Horizontal directions are periodic with periods `lambda1`, `lambda2` and
//! are discretized by equispaced nodes carrying a truncated Fourier basis.
//! The vertical direction spans the slab `[-d, 0]` on cosine-clustered
//! (Chebyshev-Lobatto) nodes with dense spectral differentiation and
//! integration matrices.

use std::sync::Arc;

use ndarray::Array2;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fundamental lattice, physical constants, and truncation sizes.
///
/// The periods and wavenumbers are stored redundantly with
/// `lambda_i * kappa_i = 2 pi` enforced at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub lambda1: f64,
    pub lambda2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Slab depth (> 0); the fluid occupies `-d < z < 0` after flattening.
    pub d: f64,
    /// Gravitational acceleration (> 0).
    pub gravity: f64,
    /// Coefficient of surface tension (> 0).
    pub sigma: f64,
    /// Fourier truncation: modes `|k1/kappa1| <= n1/2` are representable.
    pub n1: usize,
    pub n2: usize,
    /// Number of vertical collocation nodes.
    pub nz: usize,
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

impl LatticeSpec {
    pub fn from_wavenumbers(
        kappa1: f64,
        kappa2: f64,
        d: f64,
        gravity: f64,
        sigma: f64,
        n1: usize,
        n2: usize,
        nz: usize,
    ) -> Result<Self> {
        let spec = LatticeSpec {
            lambda1: TWO_PI / kappa1,
            lambda2: TWO_PI / kappa2,
            kappa1,
            kappa2,
            d,
            gravity,
            sigma,
            n1,
            n2,
            nz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_periods(
        lambda1: f64,
        lambda2: f64,
        d: f64,
        gravity: f64,
        sigma: f64,
        n1: usize,
        n2: usize,
        nz: usize,
    ) -> Result<Self> {
        let spec = LatticeSpec {
            lambda1,
            lambda2,
            kappa1: TWO_PI / lambda1,
            kappa2: TWO_PI / lambda2,
            d,
            gravity,
            sigma,
            n1,
            n2,
            nz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("kappa1", self.kappa1),
            ("kappa2", self.kappa2),
            ("d", self.d),
            ("sigma", self.sigma),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and positive, got {v}")));
            }
        }
        // Zero gravity is a legitimate pure-capillary limit of the closed
        // formulas; only the wave solver itself needs g > 0.
        if !self.gravity.is_finite() || self.gravity < 0.0 {
            return Err(Error::invalid(format!(
                "gravity must be finite and non-negative, got {}",
                self.gravity
            )));
        }
        for (name, prod) in [
            ("lambda1*kappa1", self.lambda1 * self.kappa1),
            ("lambda2*kappa2", self.lambda2 * self.kappa2),
        ] {
            if (prod - TWO_PI).abs() > 1e-12 * TWO_PI {
                return Err(Error::invalid(format!("{name} = {prod} != 2*pi")));
            }
        }
        if self.n1 < 8 || self.n2 < 8 {
            return Err(Error::invalid(format!(
                "horizontal truncations must be at least 8, got {} x {}",
                self.n1, self.n2
            )));
        }
        if self.n1 % 2 != 0 || self.n2 % 2 != 0 {
            return Err(Error::invalid("horizontal truncations must be even"));
        }
        if self.nz < 9 {
            return Err(Error::invalid(format!("nz must be at least 9, got {}", self.nz)));
        }
        Ok(())
    }

    /// Area of one horizontal period cell.
    pub fn cell_area(&self) -> f64 {
        self.lambda1 * self.lambda2
    }

    /// Volume of the undeformed flattened cell `Omega_0`.
    pub fn slab_volume(&self) -> f64 {
        self.cell_area() * self.d
    }

    pub fn kappa_norm(&self) -> f64 {
        self.kappa1.hypot(self.kappa2)
    }

    /// Same lattice at a different resolution.
    pub fn with_resolution(&self, n1: usize, n2: usize, nz: usize) -> Result<Self> {
        LatticeSpec::from_wavenumbers(
            self.kappa1,
            self.kappa2,
            self.d,
            self.gravity,
            self.sigma,
            n1,
            n2,
            nz,
        )
    }
}

/// Collocation grid plus every precomputed dense operator the field algebra
/// needs: vertical differentiation, cumulative integration, quadrature,
/// barycentric interpolation weights, and FFT plans for both horizontal axes.
pub struct Grid {
    pub spec: LatticeSpec,
    /// Horizontal nodes `x1[m] = m lambda1 / n1`.
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Vertical nodes, ascending from `-d` (index 0) to `0` (index nz-1).
    pub z: Vec<f64>,
    /// Barycentric weights attached to `z`.
    pub bary_w: Vec<f64>,
    /// Spectral differentiation in z (values -> values).
    pub dz: Array2<f64>,
    /// Cumulative integral from the bed: `(cumlo f)(z_i) = int_{-d}^{z_i} f`.
    pub cumlo: Array2<f64>,
    /// Chebyshev analysis: nodal values -> coefficients of `T_m(1 + 2z/d)`.
    pub cheb_c: Array2<f64>,
    /// Clenshaw-Curtis quadrature weights over `[-d, 0]` (last row of `cumlo`).
    pub quad_w: Vec<f64>,
    /// Signed mode index per storage slot (FFT ordering).
    pub j1: Vec<i32>,
    pub j2: Vec<i32>,
    /// Largest |j| kept when dealiasing products (2/3 rule).
    pub cut1: i32,
    pub cut2: i32,
    fft1_fwd: Arc<dyn Fft<f64>>,
    fft1_inv: Arc<dyn Fft<f64>>,
    fft2_fwd: Arc<dyn Fft<f64>>,
    fft2_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("n1", &self.spec.n1)
            .field("n2", &self.spec.n2)
            .field("nz", &self.spec.nz)
            .finish()
    }
}

/// Build the collocation grid for a lattice.
pub fn make_grid(spec: &LatticeSpec) -> Result<Arc<Grid>> {
    spec.validate()?;
    let (n1, n2, nz) = (spec.n1, spec.n2, spec.nz);

    let x1 = (0..n1).map(|m| spec.lambda1 * m as f64 / n1 as f64).collect();
    let x2 = (0..n2).map(|m| spec.lambda2 * m as f64 / n2 as f64).collect();

    // z_i = (s_i - 1) d/2 with s_i = -cos(i pi / (nz-1)) ascending in [-1, 1].
    let n = nz - 1;
    let theta: Vec<f64> = (0..nz).map(|i| std::f64::consts::PI * i as f64 / n as f64).collect();
    let s: Vec<f64> = theta.iter().map(|t| -t.cos()).collect();
    let z: Vec<f64> = s.iter().map(|si| (si - 1.0) * spec.d / 2.0).collect();

    let mut bary_w = vec![0.0; nz];
    for (i, w) in bary_w.iter_mut().enumerate() {
        let mut v = if i % 2 == 0 { 1.0 } else { -1.0 };
        if i == 0 || i == n {
            v *= 0.5;
        }
        *w = v;
    }

    // Differentiation matrix in barycentric form, built on the physical nodes.
    let mut dz = Array2::<f64>::zeros((nz, nz));
    for i in 0..nz {
        let mut diag = 0.0;
        for j in 0..nz {
            if i == j {
                continue;
            }
            let v = (bary_w[j] / bary_w[i]) / (z[i] - z[j]);
            dz[[i, j]] = v;
            diag -= v;
        }
        dz[[i, i]] = diag;
    }

    // Chebyshev synthesis V[i][m] = T_m(s_i) and analysis C with C V = I.
    let mut vmat = Array2::<f64>::zeros((nz, nz));
    let mut cmat = Array2::<f64>::zeros((nz, nz));
    for m in 0..nz {
        let sgn = if m % 2 == 0 { 1.0 } else { -1.0 };
        for i in 0..nz {
            let t = sgn * (m as f64 * theta[i]).cos();
            vmat[[i, m]] = t;
            let tw = if i == 0 || i == n { 0.5 } else { 1.0 };
            let cm = if m == 0 || m == n { 1.0 } else { 2.0 };
            cmat[[m, i]] = cm / n as f64 * tw * t;
        }
    }

    // Antiderivative in coefficient space (degree-(nz) tail dropped).
    let mut aint = Array2::<f64>::zeros((nz, nz));
    aint[[1, 0]] = 1.0;
    if nz > 2 {
        aint[[2, 1]] = 0.25;
    }
    for m in 2..nz {
        if m + 1 < nz {
            aint[[m + 1, m]] = 1.0 / (2.0 * (m as f64 + 1.0));
        }
        aint[[m - 1, m]] -= 1.0 / (2.0 * (m as f64 - 1.0));
    }

    let m0 = vmat.dot(&aint).dot(&cmat) * (spec.d / 2.0);
    let mut cumlo = Array2::<f64>::zeros((nz, nz));
    for i in 0..nz {
        for j in 0..nz {
            cumlo[[i, j]] = m0[[i, j]] - m0[[0, j]];
        }
    }
    let quad_w: Vec<f64> = (0..nz).map(|j| cumlo[[nz - 1, j]]).collect();

    let signed = |m: usize, nn: usize| -> i32 {
        if m <= nn / 2 {
            m as i32
        } else {
            m as i32 - nn as i32
        }
    };
    let j1: Vec<i32> = (0..n1).map(|m| signed(m, n1)).collect();
    let j2: Vec<i32> = (0..n2).map(|m| signed(m, n2)).collect();

    let mut planner = FftPlanner::<f64>::new();
    let grid = Grid {
        spec: spec.clone(),
        x1,
        x2,
        z,
        bary_w,
        dz,
        cumlo,
        cheb_c: cmat,
        quad_w,
        j1,
        j2,
        cut1: (n1 / 3) as i32,
        cut2: (n2 / 3) as i32,
        fft1_fwd: planner.plan_fft_forward(n1),
        fft1_inv: planner.plan_fft_inverse(n1),
        fft2_fwd: planner.plan_fft_forward(n2),
        fft2_inv: planner.plan_fft_inverse(n2),
    };
    Ok(Arc::new(grid))
}

impl Grid {
    pub fn n1(&self) -> usize {
        self.spec.n1
    }

    pub fn n2(&self) -> usize {
        self.spec.n2
    }

    pub fn nz(&self) -> usize {
        self.spec.nz
    }

    /// Physical wavenumber of storage slot `(m1, m2)`.
    pub fn wavenumber(&self, m1: usize, m2: usize) -> (f64, f64) {
        (
            self.j1[m1] as f64 * self.spec.kappa1,
            self.j2[m2] as f64 * self.spec.kappa2,
        )
    }

    pub fn wavenumber_norm(&self, m1: usize, m2: usize) -> f64 {
        let (k1, k2) = self.wavenumber(m1, m2);
        k1.hypot(k2)
    }

    /// Storage slot of the reflected mode `k1 -> -k1`.
    pub fn refl1(&self, m1: usize) -> usize {
        if m1 == 0 {
            0
        } else {
            self.spec.n1 - m1
        }
    }

    pub fn refl2(&self, m2: usize) -> usize {
        if m2 == 0 {
            0
        } else {
            self.spec.n2 - m2
        }
    }

    /// Whether a storage slot survives the 2/3-rule product dealiasing.
    pub fn in_dealias_band(&self, m1: usize, m2: usize) -> bool {
        self.j1[m1].abs() <= self.cut1 && self.j2[m2].abs() <= self.cut2
    }

    pub(crate) fn fft1(&self, forward: bool) -> &Arc<dyn Fft<f64>> {
        if forward {
            &self.fft1_fwd
        } else {
            &self.fft1_inv
        }
    }

    pub(crate) fn fft2(&self, forward: bool) -> &Arc<dyn Fft<f64>> {
        if forward {
            &self.fft2_fwd
        } else {
            &self.fft2_inv
        }
    }

    /// Integral over the slab cell of nodal values (exact trapezoid in the
    /// horizontal directions, Clenshaw-Curtis in z).
    pub fn cell_integral(&self, values: &ndarray::Array3<f64>) -> f64 {
        let (n1, n2, nz) = (self.n1(), self.n2(), self.nz());
        let ha = self.spec.cell_area() / (n1 * n2) as f64;
        let mut total = 0.0;
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                let mut col = 0.0;
                for iz in 0..nz {
                    col += self.quad_w[iz] * values[[m1, m2, iz]];
                }
                total += col;
            }
        }
        total * ha
    }

    /// Barycentric interpolation weights at height `x3`; returns either an
    /// exact-node hit or the normalized weight vector.
    pub fn bary_at(&self, x3: f64) -> BaryWeights {
        let nz = self.nz();
        for (i, &zi) in self.z.iter().enumerate() {
            if (x3 - zi).abs() < 1e-14 * self.spec.d {
                return BaryWeights::Node(i);
            }
        }
        let mut w = vec![0.0; nz];
        let mut total = 0.0;
        for i in 0..nz {
            let v = self.bary_w[i] / (x3 - self.z[i]);
            w[i] = v;
            total += v;
        }
        for v in w.iter_mut() {
            *v /= total;
        }
        BaryWeights::Weights(w)
    }
}

/// Result of preparing vertical interpolation at one height.
pub enum BaryWeights {
    /// The height coincides with collocation node `i`.
    Node(usize),
    /// Normalized barycentric weights over all nodes.
    Weights(Vec<f64>),
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> LatticeSpec {
        LatticeSpec::from_wavenumbers(0.7, 1.3, 2.0, 9.81, 1.0, 16, 16, 17).unwrap()
    }

    #[test]
    fn periods_and_wavenumbers_are_reciprocal() {
        let s = spec();
        assert!((s.lambda1 * s.kappa1 - std::f64::consts::TAU).abs() < 1e-14);
        assert!((s.lambda2 * s.kappa2 - std::f64::consts::TAU).abs() < 1e-14);
        let t = LatticeSpec::from_periods(s.lambda1, s.lambda2, 2.0, 9.81, 1.0, 16, 16, 17)
            .unwrap();
        assert!((t.kappa1 - 0.7).abs() < 1e-14);
        assert!((t.kappa2 - 1.3).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LatticeSpec::from_wavenumbers(0.0, 1.0, 2.0, 9.81, 1.0, 16, 16, 17).is_err());
        assert!(LatticeSpec::from_wavenumbers(0.7, 1.3, -2.0, 9.81, 1.0, 16, 16, 17).is_err());
        assert!(LatticeSpec::from_wavenumbers(0.7, 1.3, 2.0, 9.81, 1.0, 15, 16, 17).is_err());
        assert!(LatticeSpec::from_wavenumbers(0.7, 1.3, 2.0, 9.81, 1.0, 16, 16, 8).is_err());
    }

    #[test]
    fn vertical_nodes_span_the_slab() {
        let grid = make_grid(&spec()).unwrap();
        let nz = grid.nz();
        assert!((grid.z[0] + 2.0).abs() < 1e-14);
        assert!(grid.z[nz - 1].abs() < 1e-14);
        for i in 1..nz {
            assert!(grid.z[i] > grid.z[i - 1]);
        }
    }

    #[test]
    fn signed_mode_indices_cover_the_truncation() {
        let grid = make_grid(&spec()).unwrap();
        assert_eq!(grid.j1[0], 0);
        assert_eq!(grid.j1[1], 1);
        assert_eq!(grid.j1[8], 8);
        assert_eq!(grid.j1[9], -7);
        assert_eq!(grid.j1[15], -1);
        assert_eq!(grid.refl1(1), 15);
        assert_eq!(grid.refl1(0), 0);
        assert_eq!(grid.refl1(8), 8);
    }

    #[test]
    fn differentiation_matrix_is_spectrally_exact() {
        let grid = make_grid(&spec()).unwrap();
        let nz = grid.nz();
        // cosh(m(z+d)) has negligible Chebyshev tail at this resolution.
        let m = 1.7;
        let f: Vec<f64> = grid.z.iter().map(|&z| (m * (z + 2.0)).cosh()).collect();
        let mut err: f64 = 0.0;
        for i in 0..nz {
            let mut acc = 0.0;
            for j in 0..nz {
                acc += grid.dz[[i, j]] * f[j];
            }
            let exact = m * (m * (grid.z[i] + 2.0)).sinh();
            err = err.max((acc - exact).abs());
        }
        assert!(err < 1e-10, "dz error {err}");
    }

    #[test]
    fn cumulative_integration_matches_antiderivative() {
        let grid = make_grid(&spec()).unwrap();
        let nz = grid.nz();
        let m = 2.3;
        let f: Vec<f64> = grid.z.iter().map(|&z| (m * (z + 2.0)).cosh()).collect();
        let mut err: f64 = 0.0;
        for i in 0..nz {
            let mut acc = 0.0;
            for j in 0..nz {
                acc += grid.cumlo[[i, j]] * f[j];
            }
            let exact = (m * (grid.z[i] + 2.0)).sinh() / m;
            err = err.max((acc - exact).abs());
        }
        assert!(err < 1e-11, "cumulative error {err}");
        // Full-slab quadrature row agrees with the last cumulative row.
        let mut q = 0.0;
        for j in 0..nz {
            q += grid.quad_w[j] * f[j];
        }
        assert!((q - (m * 2.0).sinh() / m).abs() < 1e-11);
    }

    #[test]
    fn dealias_band_is_the_inner_third() {
        let grid = make_grid(&spec()).unwrap();
        assert!(grid.in_dealias_band(5, 0));
        assert!(!grid.in_dealias_band(6, 0));
        assert!(grid.in_dealias_band(16 - 5, 0));
        assert!(!grid.in_dealias_band(0, 6));
    }

    #[test]
    fn barycentric_weights_reproduce_nodes_and_midpoints() {
        let grid = make_grid(&spec()).unwrap();
        match grid.bary_at(grid.z[3]) {
            BaryWeights::Node(i) => assert_eq!(i, 3),
            BaryWeights::Weights(_) => panic!("node hit not detected"),
        }
        let x3 = -0.637;
        let f = |z: f64| (1.1 * (z + 2.0)).cosh();
        match grid.bary_at(x3) {
            BaryWeights::Node(_) => panic!("unexpected node hit"),
            BaryWeights::Weights(w) => {
                let mut acc = 0.0;
                for (i, &wi) in w.iter().enumerate() {
                    acc += wi * f(grid.z[i]);
                }
                assert!((acc - f(x3)).abs() < 1e-11);
            }
        }
    }
}
