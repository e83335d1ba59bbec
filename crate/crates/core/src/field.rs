//! Spectral fields on the flattened slab.
//!
//! Storage is hybrid: truncated Fourier coefficients in the two periodic
//! horizontal directions (FFT ordering) by collocation values on the vertical
//! Chebyshev nodes. Real fields keep conjugate symmetry in the horizontal
//! modes; reflection symmetries are tracked per component as parity tags and
//! can be enforced by projection.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::Grid;

type C64 = Complex64;

/// Parity of a scalar quantity under one of the two horizontal reflections.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }

    pub fn mul(a: Parity, b: Parity) -> Parity {
        if a == b {
            Parity::Even
        } else {
            Parity::Odd
        }
    }
}

/// Joint parity under the reflections `x1 -> -x1` and `x2 -> -x2`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ScalarSym {
    pub p1: Parity,
    pub p2: Parity,
}

impl ScalarSym {
    pub const fn new(p1: Parity, p2: Parity) -> Self {
        ScalarSym { p1, p2 }
    }

    /// The class containing constants and `cos k1 x1 cos k2 x2` modes.
    pub const fn plus() -> Self {
        ScalarSym::new(Parity::Even, Parity::Even)
    }

    /// The class of streamwise-odd scalars (`sin k1 x1 cos k2 x2` modes).
    pub const fn minus() -> Self {
        ScalarSym::new(Parity::Odd, Parity::Even)
    }

    pub fn mul(a: ScalarSym, b: ScalarSym) -> ScalarSym {
        ScalarSym::new(Parity::mul(a.p1, b.p1), Parity::mul(a.p2, b.p2))
    }

    pub fn flip1(self) -> Self {
        ScalarSym::new(self.p1.flip(), self.p2)
    }

    pub fn flip2(self) -> Self {
        ScalarSym::new(self.p1, self.p2.flip())
    }
}

pub type VectorSym = [ScalarSym; 3];

/// Velocity-type symmetry: reflections reverse the crosswise flow components.
pub const fn vector_plus() -> VectorSym {
    [
        ScalarSym::new(Parity::Even, Parity::Even),
        ScalarSym::new(Parity::Odd, Parity::Odd),
        ScalarSym::new(Parity::Odd, Parity::Even),
    ]
}

/// Vorticity-type symmetry, the image of the plus class under curl.
pub const fn vector_minus() -> VectorSym {
    [
        ScalarSym::new(Parity::Odd, Parity::Odd),
        ScalarSym::new(Parity::Even, Parity::Even),
        ScalarSym::new(Parity::Even, Parity::Odd),
    ]
}

fn sym_mul(a: Option<ScalarSym>, b: Option<ScalarSym>) -> Option<ScalarSym> {
    match (a, b) {
        (Some(a), Some(b)) => Some(ScalarSym::mul(a, b)),
        _ => None,
    }
}

/// Two tagged derivations agree or the result is untagged.
fn sym_join(a: Option<ScalarSym>, b: Option<ScalarSym>) -> Option<ScalarSym> {
    match (a, b) {
        (Some(a), Some(b)) if a == b => Some(a),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// transforms
// ---------------------------------------------------------------------------

fn fft_lane(
    fft: &Arc<dyn rustfft::Fft<f64>>,
    buf: &mut [C64],
    scratch: &mut [C64],
) {
    fft.process_with_scratch(buf, scratch);
}

/// In-place 2D FFT over the horizontal axes of a slab tensor.
fn fft2_slab(grid: &Grid, data: &mut Array3<C64>, forward: bool) {
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let fft1 = grid.fft1(forward).clone();
    let fft2 = grid.fft2(forward).clone();
    let mut buf = vec![C64::new(0.0, 0.0); n1.max(n2)];
    let mut scratch =
        vec![C64::new(0.0, 0.0); fft1.get_inplace_scratch_len().max(fft2.get_inplace_scratch_len())];
    for iz in 0..nz {
        for m2 in 0..n2 {
            for m1 in 0..n1 {
                buf[m1] = data[[m1, m2, iz]];
            }
            fft_lane(&fft1, &mut buf[..n1], &mut scratch);
            for m1 in 0..n1 {
                data[[m1, m2, iz]] = buf[m1];
            }
        }
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                buf[m2] = data[[m1, m2, iz]];
            }
            fft_lane(&fft2, &mut buf[..n2], &mut scratch);
            for m2 in 0..n2 {
                data[[m1, m2, iz]] = buf[m2];
            }
        }
    }
    if forward {
        let scale = 1.0 / (n1 * n2) as f64;
        data.mapv_inplace(|v| v * scale);
    }
}

fn fft2_plane(grid: &Grid, data: &mut Array2<C64>, forward: bool) {
    let (n1, n2) = (grid.n1(), grid.n2());
    let fft1 = grid.fft1(forward).clone();
    let fft2 = grid.fft2(forward).clone();
    let mut buf = vec![C64::new(0.0, 0.0); n1.max(n2)];
    let mut scratch =
        vec![C64::new(0.0, 0.0); fft1.get_inplace_scratch_len().max(fft2.get_inplace_scratch_len())];
    for m2 in 0..n2 {
        for m1 in 0..n1 {
            buf[m1] = data[[m1, m2]];
        }
        fft_lane(&fft1, &mut buf[..n1], &mut scratch);
        for m1 in 0..n1 {
            data[[m1, m2]] = buf[m1];
        }
    }
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            buf[m2] = data[[m1, m2]];
        }
        fft_lane(&fft2, &mut buf[..n2], &mut scratch);
        for m2 in 0..n2 {
            data[[m1, m2]] = buf[m2];
        }
    }
    if forward {
        let scale = 1.0 / (n1 * n2) as f64;
        data.mapv_inplace(|v| v * scale);
    }
}

/// Apply a dense vertical operator (values -> values) along the z axis.
pub fn apply_z_matrix(mat: &Array2<f64>, data: &Array3<C64>) -> Array3<C64> {
    let (n1, n2, nz) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    debug_assert_eq!(mat.shape(), [nz, nz]);
    let mut out = Array3::<C64>::zeros((n1, n2, nz));
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            for i in 0..nz {
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..nz {
                    acc += mat[[i, j]] * data[[m1, m2, j]];
                }
                out[[m1, m2, i]] = acc;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// scalar fields
// ---------------------------------------------------------------------------

/// Real scalar field on the slab: horizontal Fourier coefficients per
/// vertical collocation node.
#[derive(Clone)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub coeffs: Array3<C64>,
    pub sym: Option<ScalarSym>,
}

impl ScalarField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        ScalarField {
            grid: grid.clone(),
            coeffs: Array3::zeros((grid.n1(), grid.n2(), grid.nz())),
            sym: None,
        }
    }

    pub fn from_coeffs(grid: &Arc<Grid>, coeffs: Array3<C64>) -> Self {
        assert_eq!(coeffs.shape(), [grid.n1(), grid.n2(), grid.nz()]);
        ScalarField { grid: grid.clone(), coeffs, sym: None }
    }

    pub fn from_values(grid: &Arc<Grid>, values: &Array3<f64>) -> Self {
        let mut data = values.mapv(|v| C64::new(v, 0.0));
        fft2_slab(grid, &mut data, true);
        ScalarField { grid: grid.clone(), coeffs: data, sym: None }
    }

    pub fn sample(grid: &Arc<Grid>, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
        let mut values = Array3::<f64>::zeros((n1, n2, nz));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                for iz in 0..nz {
                    values[[m1, m2, iz]] = f(grid.x1[m1], grid.x2[m2], grid.z[iz]);
                }
            }
        }
        ScalarField::from_values(grid, &values)
    }

    pub fn values(&self) -> Array3<f64> {
        let mut data = self.coeffs.clone();
        fft2_slab(&self.grid, &mut data, false);
        data.mapv(|v| v.re)
    }

    /// Sup of the imaginary residue of the collocation values; a real field
    /// with intact conjugate symmetry keeps this at rounding level.
    pub fn imag_defect(&self) -> f64 {
        let mut data = self.coeffs.clone();
        fft2_slab(&self.grid, &mut data, false);
        data.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        let mut data = self.coeffs.clone();
        fft2_slab(&self.grid, &mut data, false);
        data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn coeff_sup(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, a: f64) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            coeffs: self.coeffs.mapv(|v| v * a),
            sym: self.sym,
        }
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            coeffs: &self.coeffs + &other.coeffs,
            sym: sym_join(self.sym, other.sym),
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            coeffs: &self.coeffs - &other.coeffs,
            sym: sym_join(self.sym, other.sym),
        }
    }

    pub fn add_constant(&self, a: f64) -> Self {
        let mut coeffs = self.coeffs.clone();
        let nz = self.grid.nz();
        for iz in 0..nz {
            coeffs[[0, 0, iz]] += C64::new(a, 0.0);
        }
        ScalarField { grid: self.grid.clone(), coeffs, sym: self.sym }
    }

    /// Dealiased pointwise product (2/3-rule truncation after the grid
    /// multiply).
    pub fn product(&self, other: &ScalarField) -> Self {
        let mut a = self.coeffs.clone();
        fft2_slab(&self.grid, &mut a, false);
        let mut b = other.coeffs.clone();
        fft2_slab(&self.grid, &mut b, false);
        ndarray::Zip::from(&mut a).and(&b).for_each(|x, &y| *x *= y);
        fft2_slab(&self.grid, &mut a, true);
        let mut out = ScalarField {
            grid: self.grid.clone(),
            coeffs: a,
            sym: sym_mul(self.sym, other.sym),
        };
        out.dealias();
        out
    }

    /// Pointwise map applied on the collocation grid, re-truncated to the
    /// dealias band (for smooth non-polynomial maps such as `1/rho`).
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self.values().mapv(f);
        let mut out = ScalarField::from_values(&self.grid, &values);
        out.dealias();
        out
    }

    pub fn dealias(&mut self) {
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                if !self.grid.in_dealias_band(m1, m2) {
                    for iz in 0..nz {
                        self.coeffs[[m1, m2, iz]] = C64::new(0.0, 0.0);
                    }
                }
            }
        }
    }

    pub fn diff_x1(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        for m1 in 0..n1 {
            let k1 = self.grid.j1[m1] as f64 * self.grid.spec.kappa1;
            let ik = C64::new(0.0, k1);
            for m2 in 0..n2 {
                for iz in 0..nz {
                    coeffs[[m1, m2, iz]] *= ik;
                }
            }
        }
        ScalarField {
            grid: self.grid.clone(),
            coeffs,
            sym: self.sym.map(ScalarSym::flip1),
        }
    }

    pub fn diff_x2(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        for m2 in 0..n2 {
            let k2 = self.grid.j2[m2] as f64 * self.grid.spec.kappa2;
            let ik = C64::new(0.0, k2);
            for m1 in 0..n1 {
                for iz in 0..nz {
                    coeffs[[m1, m2, iz]] *= ik;
                }
            }
        }
        ScalarField {
            grid: self.grid.clone(),
            coeffs,
            sym: self.sym.map(ScalarSym::flip2),
        }
    }

    pub fn diff_z(&self) -> Self {
        ScalarField {
            grid: self.grid.clone(),
            coeffs: apply_z_matrix(&self.grid.dz, &self.coeffs),
            sym: self.sym,
        }
    }

    pub fn grad(&self) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            comps: [
                self.diff_x1().coeffs,
                self.diff_x2().coeffs,
                self.diff_z().coeffs,
            ],
            sym: self.sym.map(|s| [s.flip1(), s.flip2(), s]),
            divergence_free: false,
        }
    }

    /// Project onto a joint parity class and restore conjugate symmetry.
    pub fn symmetrize(&self, sym: ScalarSym) -> Self {
        let coeffs = symmetrize_coeffs(&self.grid, &self.coeffs, sym);
        ScalarField { grid: self.grid.clone(), coeffs, sym: Some(sym) }
    }

    /// Sup distance (on coefficients) from the given parity class.
    pub fn symmetry_defect(&self, sym: ScalarSym) -> f64 {
        let p = self.symmetrize(sym);
        (&self.coeffs - &p.coeffs)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Sup mismatch of the half-cell translation that generates the diamond
    /// sublattice; identically zero for a diamond-periodic field.
    pub fn diamond_defect(&self) -> f64 {
        let mut shifted = self.coeffs.clone();
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                let par = (self.grid.j1[m1] + self.grid.j2[m2]).rem_euclid(2);
                if par == 1 {
                    for iz in 0..nz {
                        shifted[[m1, m2, iz]] = -shifted[[m1, m2, iz]];
                    }
                }
            }
        }
        let diff = ScalarField {
            grid: self.grid.clone(),
            coeffs: &shifted - &self.coeffs,
            sym: None,
        };
        diff.sup_norm()
    }

    /// Coefficients of the trace on the top plane `z = 0`.
    pub fn restrict_top(&self) -> SurfaceProfile {
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        let mut coeffs = Array2::<C64>::zeros((n1, n2));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                coeffs[[m1, m2]] = self.coeffs[[m1, m2, nz - 1]];
            }
        }
        SurfaceProfile { grid: self.grid.clone(), coeffs, sym: self.sym }
    }

    /// Horizontal mean as a function of z.
    pub fn horizontal_mean(&self) -> Vec<f64> {
        (0..self.grid.nz()).map(|iz| self.coeffs[[0, 0, iz]].re).collect()
    }

    pub fn cell_integral(&self) -> f64 {
        // Horizontal trapezoid is exact on the zero mode.
        let area = self.grid.spec.cell_area();
        let mut total = 0.0;
        for iz in 0..self.grid.nz() {
            total += self.grid.quad_w[iz] * self.coeffs[[0, 0, iz]].re;
        }
        total * area
    }

    pub fn sampler(&self) -> ScalarSampler {
        ScalarSampler::new(self)
    }
}

fn symmetrize_coeffs(grid: &Grid, coeffs: &Array3<C64>, sym: ScalarSym) -> Array3<C64> {
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let s1 = sym.p1.sign();
    let s2 = sym.p2.sign();
    let mut parity = Array3::<C64>::zeros((n1, n2, nz));
    for m1 in 0..n1 {
        let r1 = grid.refl1(m1);
        for m2 in 0..n2 {
            let r2 = grid.refl2(m2);
            for iz in 0..nz {
                let v = coeffs[[m1, m2, iz]]
                    + s1 * coeffs[[r1, m2, iz]]
                    + s2 * coeffs[[m1, r2, iz]]
                    + s1 * s2 * coeffs[[r1, r2, iz]];
                parity[[m1, m2, iz]] = 0.25 * v;
            }
        }
    }
    let mut out = Array3::<C64>::zeros((n1, n2, nz));
    for m1 in 0..n1 {
        let r1 = grid.refl1(m1);
        for m2 in 0..n2 {
            let r2 = grid.refl2(m2);
            for iz in 0..nz {
                out[[m1, m2, iz]] = 0.5 * (parity[[m1, m2, iz]] + parity[[r1, r2, iz]].conj());
            }
        }
    }
    out
}

fn symmetrize_coeffs_2d(grid: &Grid, coeffs: &Array2<C64>, sym: ScalarSym) -> Array2<C64> {
    let (n1, n2) = (grid.n1(), grid.n2());
    let s1 = sym.p1.sign();
    let s2 = sym.p2.sign();
    let mut parity = Array2::<C64>::zeros((n1, n2));
    for m1 in 0..n1 {
        let r1 = grid.refl1(m1);
        for m2 in 0..n2 {
            let r2 = grid.refl2(m2);
            let v = coeffs[[m1, m2]]
                + s1 * coeffs[[r1, m2]]
                + s2 * coeffs[[m1, r2]]
                + s1 * s2 * coeffs[[r1, r2]];
            parity[[m1, m2]] = 0.25 * v;
        }
    }
    let mut out = Array2::<C64>::zeros((n1, n2));
    for m1 in 0..n1 {
        let r1 = grid.refl1(m1);
        for m2 in 0..n2 {
            let r2 = grid.refl2(m2);
            out[[m1, m2]] = 0.5 * (parity[[m1, m2]] + parity[[r1, r2]].conj());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// vector fields
// ---------------------------------------------------------------------------

#[derive(Clone)]
pub struct VectorField {
    pub grid: Arc<Grid>,
    pub comps: [Array3<C64>; 3],
    pub sym: Option<VectorSym>,
    /// Set by constructions that are divergence-free by algebraic identity
    /// (curls, the flat inverse); informational.
    pub divergence_free: bool,
}

impl VectorField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let z = Array3::zeros((grid.n1(), grid.n2(), grid.nz()));
        VectorField {
            grid: grid.clone(),
            comps: [z.clone(), z.clone(), z],
            sym: None,
            divergence_free: true,
        }
    }

    pub fn from_components(c0: ScalarField, c1: ScalarField, c2: ScalarField) -> Self {
        let grid = c0.grid.clone();
        let sym = match (c0.sym, c1.sym, c2.sym) {
            (Some(a), Some(b), Some(c)) => Some([a, b, c]),
            _ => None,
        };
        VectorField {
            grid,
            comps: [c0.coeffs, c1.coeffs, c2.coeffs],
            sym,
            divergence_free: false,
        }
    }

    pub fn sample(
        grid: &Arc<Grid>,
        f: impl Fn(f64, f64, f64) -> [f64; 3],
    ) -> Self {
        let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
        let mut vals = [
            Array3::<f64>::zeros((n1, n2, nz)),
            Array3::<f64>::zeros((n1, n2, nz)),
            Array3::<f64>::zeros((n1, n2, nz)),
        ];
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                for iz in 0..nz {
                    let v = f(grid.x1[m1], grid.x2[m2], grid.z[iz]);
                    for c in 0..3 {
                        vals[c][[m1, m2, iz]] = v[c];
                    }
                }
            }
        }
        let [a, b, c] = vals;
        VectorField::from_components(
            ScalarField::from_values(grid, &a),
            ScalarField::from_values(grid, &b),
            ScalarField::from_values(grid, &c),
        )
    }

    /// Constant horizontal background `a e1`.
    pub fn uniform_x1(grid: &Arc<Grid>, a: f64) -> Self {
        let mut out = VectorField::zeros(grid);
        for iz in 0..grid.nz() {
            out.comps[0][[0, 0, iz]] = C64::new(a, 0.0);
        }
        out.sym = Some(vector_plus());
        out.divergence_free = true;
        out
    }

    pub fn comp(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            coeffs: self.comps[c].clone(),
            sym: self.sym.map(|s| s[c]),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        VectorField {
            grid: self.grid.clone(),
            comps: [
                self.comps[0].mapv(|v| v * a),
                self.comps[1].mapv(|v| v * a),
                self.comps[2].mapv(|v| v * a),
            ],
            sym: self.sym,
            divergence_free: self.divergence_free,
        }
    }

    pub fn add(&self, other: &VectorField) -> Self {
        let sym = match (self.sym, other.sym) {
            (Some(a), Some(b)) if a == b => Some(a),
            _ => None,
        };
        VectorField {
            grid: self.grid.clone(),
            comps: [
                &self.comps[0] + &other.comps[0],
                &self.comps[1] + &other.comps[1],
                &self.comps[2] + &other.comps[2],
            ],
            sym,
            divergence_free: self.divergence_free && other.divergence_free,
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn sup_norm(&self) -> f64 {
        (0..3).map(|c| self.comp(c).sup_norm()).fold(0.0, f64::max)
    }

    pub fn coeff_sup(&self) -> f64 {
        self.comps
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn div(&self) -> ScalarField {
        let d = self.comp(0).diff_x1().add(&self.comp(1).diff_x2()).add(&self.comp(2).diff_z());
        let sym = self.sym.and_then(|s| {
            sym_join(sym_join(Some(s[0].flip1()), Some(s[1].flip2())), Some(s[2]))
        });
        ScalarField { sym, ..d }
    }

    pub fn curl(&self) -> VectorField {
        let c0 = self.comp(2).diff_x2().sub(&self.comp(1).diff_z());
        let c1 = self.comp(0).diff_z().sub(&self.comp(2).diff_x1());
        let c2 = self.comp(1).diff_x1().sub(&self.comp(0).diff_x2());
        let sym = self.sym.and_then(|s| {
            let a = sym_join(Some(s[2].flip2()), Some(s[1]))?;
            let b = sym_join(Some(s[0]), Some(s[2].flip1()))?;
            let c = sym_join(Some(s[1].flip1()), Some(s[0].flip2()))?;
            Some([a, b, c])
        });
        VectorField {
            grid: self.grid.clone(),
            comps: [c0.coeffs, c1.coeffs, c2.coeffs],
            sym,
            divergence_free: true,
        }
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        let mut acc = self.comp(0).product(&other.comp(0));
        acc = acc.add(&self.comp(1).product(&other.comp(1)));
        acc.add(&self.comp(2).product(&other.comp(2)))
    }

    pub fn cross(&self, other: &VectorField) -> VectorField {
        let a = |c: usize| self.comp(c);
        let b = |c: usize| other.comp(c);
        let c0 = a(1).product(&b(2)).sub(&a(2).product(&b(1)));
        let c1 = a(2).product(&b(0)).sub(&a(0).product(&b(2)));
        let c2 = a(0).product(&b(1)).sub(&a(1).product(&b(0)));
        VectorField::from_components(c0, c1, c2)
    }

    pub fn symmetrize(&self, sym: VectorSym) -> Self {
        VectorField {
            grid: self.grid.clone(),
            comps: [
                symmetrize_coeffs(&self.grid, &self.comps[0], sym[0]),
                symmetrize_coeffs(&self.grid, &self.comps[1], sym[1]),
                symmetrize_coeffs(&self.grid, &self.comps[2], sym[2]),
            ],
            sym: Some(sym),
            divergence_free: self.divergence_free,
        }
    }

    pub fn symmetry_defect(&self, sym: VectorSym) -> f64 {
        (0..3)
            .map(|c| self.comp(c).symmetry_defect(sym[c]))
            .fold(0.0, f64::max)
    }

    pub fn diamond_defect(&self) -> f64 {
        (0..3).map(|c| self.comp(c).diamond_defect()).fold(0.0, f64::max)
    }

    /// Mean of the first component over the undeformed cell.
    pub fn mean_x1(&self) -> f64 {
        let mut total = 0.0;
        for iz in 0..self.grid.nz() {
            total += self.grid.quad_w[iz] * self.comps[0][[0, 0, iz]].re;
        }
        total / self.grid.spec.d
    }

    /// Sup of the third component on the two boundary planes.
    pub fn boundary_normal_sup(&self) -> f64 {
        let mut vals = self.comps[2].clone();
        fft2_slab(&self.grid, &mut vals, false);
        let nz = self.grid.nz();
        let mut sup: f64 = 0.0;
        for m1 in 0..self.grid.n1() {
            for m2 in 0..self.grid.n2() {
                sup = sup.max(vals[[m1, m2, 0]].norm());
                sup = sup.max(vals[[m1, m2, nz - 1]].norm());
            }
        }
        sup
    }

    pub fn sampler(&self) -> VectorSampler {
        VectorSampler::new(self)
    }

    pub fn dealias(&mut self) {
        for c in 0..3 {
            let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
            for m1 in 0..n1 {
                for m2 in 0..n2 {
                    if !self.grid.in_dealias_band(m1, m2) {
                        for iz in 0..nz {
                            self.comps[c][[m1, m2, iz]] = C64::new(0.0, 0.0);
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// surface profiles
// ---------------------------------------------------------------------------

/// Real scalar on the horizontal torus (free-surface elevations, boundary
/// residuals).
#[derive(Clone)]
pub struct SurfaceProfile {
    pub grid: Arc<Grid>,
    pub coeffs: Array2<C64>,
    pub sym: Option<ScalarSym>,
}

impl SurfaceProfile {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        SurfaceProfile {
            grid: grid.clone(),
            coeffs: Array2::zeros((grid.n1(), grid.n2())),
            sym: None,
        }
    }

    pub fn from_values(grid: &Arc<Grid>, values: &Array2<f64>) -> Self {
        let mut data = values.mapv(|v| C64::new(v, 0.0));
        fft2_plane(grid, &mut data, true);
        SurfaceProfile { grid: grid.clone(), coeffs: data, sym: None }
    }

    pub fn sample(grid: &Arc<Grid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let (n1, n2) = (grid.n1(), grid.n2());
        let mut values = Array2::<f64>::zeros((n1, n2));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                values[[m1, m2]] = f(grid.x1[m1], grid.x2[m2]);
            }
        }
        SurfaceProfile::from_values(grid, &values)
    }

    pub fn values(&self) -> Array2<f64> {
        let mut data = self.coeffs.clone();
        fft2_plane(&self.grid, &mut data, false);
        data.mapv(|v| v.re)
    }

    pub fn sup_norm(&self) -> f64 {
        let mut data = self.coeffs.clone();
        fft2_plane(&self.grid, &mut data, false);
        data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn coeff_sup(&self) -> f64 {
        self.coeffs.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[[0, 0]].re
    }

    pub fn scale(&self, a: f64) -> Self {
        SurfaceProfile {
            grid: self.grid.clone(),
            coeffs: self.coeffs.mapv(|v| v * a),
            sym: self.sym,
        }
    }

    pub fn add(&self, other: &SurfaceProfile) -> Self {
        SurfaceProfile {
            grid: self.grid.clone(),
            coeffs: &self.coeffs + &other.coeffs,
            sym: sym_join(self.sym, other.sym),
        }
    }

    pub fn sub(&self, other: &SurfaceProfile) -> Self {
        SurfaceProfile {
            grid: self.grid.clone(),
            coeffs: &self.coeffs - &other.coeffs,
            sym: sym_join(self.sym, other.sym),
        }
    }

    pub fn add_constant(&self, a: f64) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs[[0, 0]] += C64::new(a, 0.0);
        SurfaceProfile { grid: self.grid.clone(), coeffs, sym: self.sym }
    }

    pub fn product(&self, other: &SurfaceProfile) -> Self {
        let mut a = self.coeffs.clone();
        fft2_plane(&self.grid, &mut a, false);
        let mut b = other.coeffs.clone();
        fft2_plane(&self.grid, &mut b, false);
        ndarray::Zip::from(&mut a).and(&b).for_each(|x, &y| *x *= y);
        fft2_plane(&self.grid, &mut a, true);
        let mut out = SurfaceProfile {
            grid: self.grid.clone(),
            coeffs: a,
            sym: sym_mul(self.sym, other.sym),
        };
        out.dealias();
        out
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        let values = self.values().mapv(f);
        let mut out = SurfaceProfile::from_values(&self.grid, &values);
        out.dealias();
        out
    }

    pub fn dealias(&mut self) {
        for m1 in 0..self.grid.n1() {
            for m2 in 0..self.grid.n2() {
                if !self.grid.in_dealias_band(m1, m2) {
                    self.coeffs[[m1, m2]] = C64::new(0.0, 0.0);
                }
            }
        }
    }

    pub fn diff_x1(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        for m1 in 0..self.grid.n1() {
            let k1 = self.grid.j1[m1] as f64 * self.grid.spec.kappa1;
            let ik = C64::new(0.0, k1);
            for m2 in 0..self.grid.n2() {
                coeffs[[m1, m2]] *= ik;
            }
        }
        SurfaceProfile {
            grid: self.grid.clone(),
            coeffs,
            sym: self.sym.map(ScalarSym::flip1),
        }
    }

    pub fn diff_x2(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        for m2 in 0..self.grid.n2() {
            let k2 = self.grid.j2[m2] as f64 * self.grid.spec.kappa2;
            let ik = C64::new(0.0, k2);
            for m1 in 0..self.grid.n1() {
                coeffs[[m1, m2]] *= ik;
            }
        }
        SurfaceProfile {
            grid: self.grid.clone(),
            coeffs,
            sym: self.sym.map(ScalarSym::flip2),
        }
    }

    pub fn laplacian(&self) -> Self {
        let mut coeffs = self.coeffs.clone();
        for m1 in 0..self.grid.n1() {
            for m2 in 0..self.grid.n2() {
                let kk = self.grid.wavenumber_norm(m1, m2);
                coeffs[[m1, m2]] *= -kk * kk;
            }
        }
        SurfaceProfile { grid: self.grid.clone(), coeffs, sym: self.sym }
    }

    /// Extend to a z-independent slab field.
    pub fn extend_to_slab(&self) -> ScalarField {
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        let mut coeffs = Array3::<C64>::zeros((n1, n2, nz));
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                for iz in 0..nz {
                    coeffs[[m1, m2, iz]] = self.coeffs[[m1, m2]];
                }
            }
        }
        ScalarField { grid: self.grid.clone(), coeffs, sym: self.sym }
    }

    pub fn symmetrize(&self, sym: ScalarSym) -> Self {
        SurfaceProfile {
            grid: self.grid.clone(),
            coeffs: symmetrize_coeffs_2d(&self.grid, &self.coeffs, sym),
            sym: Some(sym),
        }
    }

    pub fn symmetry_defect(&self, sym: ScalarSym) -> f64 {
        let p = self.symmetrize(sym);
        (&self.coeffs - &p.coeffs)
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    pub fn diamond_defect(&self) -> f64 {
        let mut shifted = self.coeffs.clone();
        for m1 in 0..self.grid.n1() {
            for m2 in 0..self.grid.n2() {
                if (self.grid.j1[m1] + self.grid.j2[m2]).rem_euclid(2) == 1 {
                    shifted[[m1, m2]] = -shifted[[m1, m2]];
                }
            }
        }
        let diff = SurfaceProfile {
            grid: self.grid.clone(),
            coeffs: &shifted - &self.coeffs,
            sym: None,
        };
        diff.sup_norm()
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for m1 in 0..self.grid.n1() {
            for m2 in 0..self.grid.n2() {
                let (k1, k2) = self.grid.wavenumber(m1, m2);
                let ph = C64::from_polar(1.0, k1 * x1 + k2 * x2);
                acc += self.coeffs[[m1, m2]] * ph;
            }
        }
        acc.re
    }
}

// ---------------------------------------------------------------------------
// nodal scalars (non-periodic diagnostics such as tau)
// ---------------------------------------------------------------------------

/// Plain nodal values on the collocation grid, for quantities that are not
/// lattice-periodic and therefore have no coefficient representation.
#[derive(Clone)]
pub struct GridScalar {
    pub grid: Arc<Grid>,
    pub values: Array3<f64>,
}

impl GridScalar {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        GridScalar {
            grid: grid.clone(),
            values: Array3::zeros((grid.n1(), grid.n2(), grid.nz())),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// samplers: off-grid evaluation
// ---------------------------------------------------------------------------

/// Coefficients below this fraction of the field scale are dropped when a
/// sampler is built; the induced error is far below every tolerance in use.
const SAMPLER_DROP: f64 = 1e-17;

/// Reusable workspace for sampler evaluations.
pub struct SamplerScratch {
    ph1: Vec<C64>,
    ph2: Vec<C64>,
    w: Vec<f64>,
    c1: Vec<f64>,
    s1: Vec<f64>,
    c2: Vec<f64>,
    s2: Vec<f64>,
    a: Vec<f64>,
}

impl SamplerScratch {
    pub fn new() -> Self {
        SamplerScratch {
            ph1: Vec::new(),
            ph2: Vec::new(),
            w: Vec::new(),
            c1: Vec::new(),
            s1: Vec::new(),
            c2: Vec::new(),
            s2: Vec::new(),
            a: Vec::new(),
        }
    }
}

impl Default for SamplerScratch {
    fn default() -> Self {
        SamplerScratch::new()
    }
}

/// Phase table for `exp(i j kappa x)`, `j = 0..=h`, by recurrence.
fn fill_phases(ph: &mut Vec<C64>, h: usize, kappa: f64, x: f64) {
    ph.clear();
    ph.reserve(h + 1);
    ph.push(C64::new(1.0, 0.0));
    if h == 0 {
        return;
    }
    let base = C64::from_polar(1.0, kappa * x);
    let mut cur = C64::new(1.0, 0.0);
    for _ in 1..=h {
        cur *= base;
        ph.push(cur);
    }
}

fn phase_at(ph: &[C64], j: i32) -> C64 {
    if j >= 0 {
        ph[j as usize]
    } else {
        ph[(-j) as usize].conj()
    }
}

/// Barycentric weights for height `x3`, written into `w`; returns an exact
/// node index when `x3` coincides with a collocation node.
fn fill_bary(w: &mut Vec<f64>, z: &[f64], bw: &[f64], d: f64, x3: f64) -> Option<usize> {
    let nz = z.len();
    for (i, &zi) in z.iter().enumerate() {
        if (x3 - zi).abs() < 1e-14 * d {
            return Some(i);
        }
    }
    w.clear();
    w.resize(nz, 0.0);
    let mut total = 0.0;
    for i in 0..nz {
        let v = bw[i] / (x3 - z[i]);
        w[i] = v;
        total += v;
    }
    let inv = 1.0 / total;
    for v in w.iter_mut() {
        *v *= inv;
    }
    None
}

/// Chebyshev tail entries below this fraction of their own column are
/// snapped to zero, so constant and low-degree columns evaluate exactly and
/// smooth profiles truncate to their true polynomial degree.
const CHEB_SNAP: f64 = 1e-15;

/// cos/sin ladders `cos(j kappa x)`, `sin(j kappa x)` for `j = 0..=h`.
fn fill_trig(c: &mut Vec<f64>, s: &mut Vec<f64>, h: usize, kappa: f64, x: f64) {
    c.clear();
    s.clear();
    c.reserve(h + 1);
    s.reserve(h + 1);
    c.push(1.0);
    s.push(0.0);
    if h == 0 {
        return;
    }
    let (sb, cb) = (kappa * x).sin_cos();
    let (mut cj, mut sj) = (1.0, 0.0);
    for _ in 1..=h {
        let cn = cj * cb - sj * sb;
        let sn = sj * cb + cj * sb;
        c.push(cn);
        s.push(sn);
        cj = cn;
        sj = sn;
    }
}

/// `sum a_p T_p(s)` by the Clenshaw recurrence.
fn clenshaw(a: &[f64], s: f64) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let mut b1 = 0.0;
    let mut b2 = 0.0;
    let two_s = 2.0 * s;
    for &ak in a[1..].iter().rev() {
        let b = two_s * b1 - b2 + ak;
        b2 = b1;
        b1 = b;
    }
    s * b1 - b2 + a[0]
}

/// One horizontal bucket `(|j1|, |j2|)` of the real part of the Fourier sum:
/// trimmed Chebyshev coefficient columns multiplying the four products
/// cos*cos, cos*sin, sin*cos, sin*sin, one set of four per field component.
struct QuadBlock {
    j1: usize,
    j2: usize,
    tabs: Vec<[Vec<f64>; 4]>,
}

/// Fold complex horizontal modes into real quadrant blocks.
///
/// Evaluation always returns `Re` of the complex Fourier sum, which expands
/// exactly into the four real trigonometric products per `(|j1|, |j2|)`
/// bucket, so this representation matches the direct summation for any
/// coefficients; parity-symmetric fields populate a single product each,
/// quartering the work. Vertical columns are stored as Chebyshev
/// coefficients and trimmed, so smooth fields cost their true degree.
fn build_quads(grid: &Grid, comps: &[&Array3<C64>]) -> (Vec<QuadBlock>, usize, usize, Vec<usize>) {
    let (n1, n2, nz) = (grid.n1(), grid.n2(), grid.nz());
    let ncomp = comps.len();
    let scale = comps
        .iter()
        .map(|a| a.iter().map(|v| v.norm()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let drop = SAMPLER_DROP * scale;
    let q1 = n1 / 2 + 1;
    let q2 = n2 / 2 + 1;
    // Accumulator layout: [bucket][comp][table][iz].
    let mut acc = vec![0.0f64; q1 * q2 * ncomp * 4 * nz];
    let mut used = vec![false; q1 * q2];
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            let j1 = grid.j1[m1];
            let j2 = grid.j2[m2];
            let a1 = j1.unsigned_abs() as usize;
            let a2 = j2.unsigned_abs() as usize;
            let s1 = if j1 < 0 { -1.0 } else { 1.0 };
            let s2 = if j2 < 0 { -1.0 } else { 1.0 };
            let bucket = a1 * q2 + a2;
            for (k, comp) in comps.iter().enumerate() {
                let lane = comp.slice(ndarray::s![m1, m2, ..]);
                if lane.iter().map(|v| v.norm()).fold(0.0, f64::max) <= drop {
                    continue;
                }
                used[bucket] = true;
                let base = (bucket * ncomp + k) * 4 * nz;
                let t = &mut acc[base..base + 4 * nz];
                for (iz, c) in lane.iter().enumerate() {
                    t[iz] += c.re;
                    t[nz + iz] -= s2 * c.im;
                    t[2 * nz + iz] -= s1 * c.im;
                    t[3 * nz + iz] -= s1 * s2 * c.re;
                }
            }
        }
    }
    let mut blocks = Vec::new();
    let mut h1 = 0usize;
    let mut h2 = 0usize;
    let mut degs = vec![0usize; ncomp];
    let mut col = vec![0.0f64; nz];
    for a1 in 0..q1 {
        for a2 in 0..q2 {
            let bucket = a1 * q2 + a2;
            if !used[bucket] {
                continue;
            }
            let mut tabs: Vec<[Vec<f64>; 4]> = Vec::with_capacity(ncomp);
            let mut any = false;
            for k in 0..ncomp {
                let base = (bucket * ncomp + k) * 4 * nz;
                let mut four: [Vec<f64>; 4] = Default::default();
                for (t, slot) in four.iter_mut().enumerate() {
                    let vals = &acc[base + t * nz..base + (t + 1) * nz];
                    let colsup = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                    if colsup <= drop {
                        continue;
                    }
                    for (m, cm) in col.iter_mut().enumerate() {
                        let row = grid.cheb_c.row(m);
                        let mut sum = 0.0;
                        for (ci, vi) in row.iter().zip(vals.iter()) {
                            sum += ci * vi;
                        }
                        *cm = if sum.abs() <= CHEB_SNAP * colsup { 0.0 } else { sum };
                    }
                    let keep = col.iter().rposition(|v| *v != 0.0).map_or(0, |p| p + 1);
                    if keep > 0 {
                        *slot = col[..keep].to_vec();
                        degs[k] = degs[k].max(keep);
                        any = true;
                    }
                }
                tabs.push(four);
            }
            if !any {
                continue;
            }
            h1 = h1.max(a1);
            h2 = h2.max(a2);
            blocks.push(QuadBlock { j1: a1, j2: a2, tabs });
        }
    }
    (blocks, h1, h2, degs)
}

/// Evaluates the field anywhere in the slab: exact horizontal trigonometric
/// summation combined with Chebyshev evaluation in the vertical.
/// Accumulate the weighted Chebyshev columns of every block into per
/// component coefficient segments of length `deg`; the caller finishes with
/// one Clenshaw pass per component. Streaming the coefficients first keeps
/// the hot loop free of the Clenshaw recurrence's serial dependency.
fn gather_coeffs(
    blocks: &[QuadBlock],
    ncomp: usize,
    deg: usize,
    scratch: &mut SamplerScratch,
) {
    let SamplerScratch { c1, s1, c2, s2, a, .. } = scratch;
    a.clear();
    a.resize(ncomp * deg, 0.0);
    for b in blocks {
        let (bc1, bs1) = (c1[b.j1], s1[b.j1]);
        let (bc2, bs2) = (c2[b.j2], s2[b.j2]);
        let w = [bc1 * bc2, bc1 * bs2, bs1 * bc2, bs1 * bs2];
        for (k, tabs) in b.tabs.iter().enumerate() {
            let seg = &mut a[k * deg..(k + 1) * deg];
            for (tab, wt) in tabs.iter().zip(w) {
                for (ai, &ti) in seg.iter_mut().zip(tab.iter()) {
                    *ai += wt * ti;
                }
            }
        }
    }
}

pub struct ScalarSampler {
    kappa1: f64,
    kappa2: f64,
    h1: usize,
    h2: usize,
    deg: usize,
    d: f64,
    z: Vec<f64>,
    bw: Vec<f64>,
    blocks: Vec<QuadBlock>,
}

impl ScalarSampler {
    pub fn new(field: &ScalarField) -> Self {
        let grid = &field.grid;
        let (blocks, h1, h2, degs) = build_quads(grid, &[&field.coeffs]);
        ScalarSampler {
            kappa1: grid.spec.kappa1,
            kappa2: grid.spec.kappa2,
            h1,
            h2,
            deg: degs[0],
            d: grid.spec.d,
            z: grid.z.clone(),
            bw: grid.bary_w.clone(),
            blocks,
        }
    }

    pub fn eval(&self, x1: f64, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> f64 {
        fill_trig(&mut scratch.c1, &mut scratch.s1, self.h1, self.kappa1, x1);
        fill_trig(&mut scratch.c2, &mut scratch.s2, self.h2, self.kappa2, x2);
        gather_coeffs(&self.blocks, 1, self.deg, scratch);
        clenshaw(&scratch.a, 1.0 + 2.0 * x3 / self.d)
    }

    /// Vertical profile of the field over the collocation nodes at a fixed
    /// horizontal position.
    pub fn column(&self, x1: f64, x2: f64, scratch: &mut SamplerScratch) -> Vec<f64> {
        fill_trig(&mut scratch.c1, &mut scratch.s1, self.h1, self.kappa1, x1);
        fill_trig(&mut scratch.c2, &mut scratch.s2, self.h2, self.kappa2, x2);
        gather_coeffs(&self.blocks, 1, self.deg, scratch);
        self.z
            .iter()
            .map(|&zv| clenshaw(&scratch.a, 1.0 + 2.0 * zv / self.d))
            .collect()
    }

    pub fn z_nodes(&self) -> &[f64] {
        &self.z
    }

    pub fn bary_weights(&self) -> &[f64] {
        &self.bw
    }
}

pub struct VectorSampler {
    kappa1: f64,
    kappa2: f64,
    h1: usize,
    h2: usize,
    deg: usize,
    d: f64,
    blocks: Vec<QuadBlock>,
}

impl VectorSampler {
    pub fn new(field: &VectorField) -> Self {
        let grid = &field.grid;
        let (blocks, h1, h2, degs) =
            build_quads(grid, &[&field.comps[0], &field.comps[1], &field.comps[2]]);
        VectorSampler {
            kappa1: grid.spec.kappa1,
            kappa2: grid.spec.kappa2,
            h1,
            h2,
            deg: degs.into_iter().max().unwrap_or(0),
            d: grid.spec.d,
            blocks,
        }
    }

    pub fn eval(&self, x1: f64, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> [f64; 3] {
        fill_trig(&mut scratch.c1, &mut scratch.s1, self.h1, self.kappa1, x1);
        fill_trig(&mut scratch.c2, &mut scratch.s2, self.h2, self.kappa2, x2);
        gather_coeffs(&self.blocks, 3, self.deg, scratch);
        let s = 1.0 + 2.0 * x3 / self.d;
        let d = self.deg;
        [
            clenshaw(&scratch.a[..d], s),
            clenshaw(&scratch.a[d..2 * d], s),
            clenshaw(&scratch.a[2 * d..], s),
        ]
    }
}

struct ProfileBlock {
    j1: i32,
    j2: i32,
    coeff: C64,
}

/// Off-grid evaluation of a surface profile.
pub struct ProfileSampler {
    kappa1: f64,
    kappa2: f64,
    h1: usize,
    h2: usize,
    blocks: Vec<ProfileBlock>,
}

impl ProfileSampler {
    pub fn new(profile: &SurfaceProfile) -> Self {
        let grid = &profile.grid;
        let scale = profile.coeff_sup();
        let drop = SAMPLER_DROP * scale;
        let mut blocks = Vec::new();
        let mut h1 = 0usize;
        let mut h2 = 0usize;
        for m1 in 0..grid.n1() {
            for m2 in 0..grid.n2() {
                let v = profile.coeffs[[m1, m2]];
                if v.norm() <= drop {
                    continue;
                }
                let j1 = grid.j1[m1];
                let j2 = grid.j2[m2];
                h1 = h1.max(j1.unsigned_abs() as usize);
                h2 = h2.max(j2.unsigned_abs() as usize);
                blocks.push(ProfileBlock { j1, j2, coeff: v });
            }
        }
        ProfileSampler {
            kappa1: grid.spec.kappa1,
            kappa2: grid.spec.kappa2,
            h1,
            h2,
            blocks,
        }
    }

    pub fn eval(&self, x1: f64, x2: f64, scratch: &mut SamplerScratch) -> f64 {
        fill_phases(&mut scratch.ph1, self.h1, self.kappa1, x1);
        fill_phases(&mut scratch.ph2, self.h2, self.kappa2, x2);
        let mut acc = C64::new(0.0, 0.0);
        for b in &self.blocks {
            acc += phase_at(&scratch.ph1, b.j1) * phase_at(&scratch.ph2, b.j2) * b.coeff;
        }
        acc.re
    }
}

struct PlaneBlock {
    j2: i32,
    data: Vec<C64>,
}

/// Sampler over the inflow plane `x1 = 0`: Fourier in `x2`, barycentric in z.
pub struct PlaneSampler {
    kappa2: f64,
    h2: usize,
    d: f64,
    z: Vec<f64>,
    bw: Vec<f64>,
    blocks: Vec<PlaneBlock>,
}

impl PlaneSampler {
    /// Build from nodal values on the `(x2, z)` plane.
    pub fn from_plane_values(grid: &Arc<Grid>, values: &Array2<f64>) -> Self {
        let (n2, nz) = (grid.n2(), grid.nz());
        assert_eq!(values.shape(), [n2, nz]);
        // 1D analysis along x2 per vertical node.
        let fft = grid.fft2(true).clone();
        let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        let mut coeffs = Array2::<C64>::zeros((n2, nz));
        let mut buf = vec![C64::new(0.0, 0.0); n2];
        for iz in 0..nz {
            for m2 in 0..n2 {
                buf[m2] = C64::new(values[[m2, iz]], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for m2 in 0..n2 {
                coeffs[[m2, iz]] = buf[m2] / n2 as f64;
            }
        }
        let scale = coeffs.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let drop = SAMPLER_DROP * scale;
        let mut blocks = Vec::new();
        let mut h2 = 0usize;
        for m2 in 0..n2 {
            let lane = coeffs.slice(ndarray::s![m2, ..]);
            let mx = lane.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if mx <= drop {
                continue;
            }
            let j2 = grid.j2[m2];
            h2 = h2.max(j2.unsigned_abs() as usize);
            blocks.push(PlaneBlock { j2, data: lane.iter().copied().collect() });
        }
        PlaneSampler {
            kappa2: grid.spec.kappa2,
            h2,
            d: grid.spec.d,
            z: grid.z.clone(),
            bw: grid.bary_w.clone(),
            blocks,
        }
    }

    pub fn eval(&self, x2: f64, x3: f64, scratch: &mut SamplerScratch) -> f64 {
        fill_phases(&mut scratch.ph2, self.h2, self.kappa2, x2);
        let node = fill_bary(&mut scratch.w, &self.z, &self.bw, self.d, x3);
        let mut acc = C64::new(0.0, 0.0);
        match node {
            Some(i) => {
                for b in &self.blocks {
                    acc += phase_at(&scratch.ph2, b.j2) * b.data[i];
                }
            }
            None => {
                for b in &self.blocks {
                    let mut v = C64::new(0.0, 0.0);
                    for (wi, di) in scratch.w.iter().zip(b.data.iter()) {
                        v += *wi * *di;
                    }
                    acc += phase_at(&scratch.ph2, b.j2) * v;
                }
            }
        }
        acc.re
    }
}

// ---------------------------------------------------------------------------
// pointwise matrix fields
// ---------------------------------------------------------------------------

/// A 3x3 matrix of collocation values, applied to vectors pointwise on the
/// grid (position-dependent linear maps such as metric perturbations).
#[derive(Clone)]
pub struct MatrixField {
    pub grid: Arc<Grid>,
    /// Row-major entries as value arrays.
    pub entries: [[Array3<f64>; 3]; 3],
}

impl MatrixField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        let z = || Array3::<f64>::zeros((grid.n1(), grid.n2(), grid.nz()));
        MatrixField {
            grid: grid.clone(),
            entries: [
                [z(), z(), z()],
                [z(), z(), z()],
                [z(), z(), z()],
            ],
        }
    }

    /// Pointwise matrix-vector product; the result is re-expanded in
    /// coefficients and dealiased.
    pub fn apply(&self, u: &VectorField) -> VectorField {
        let vals = [
            u.comp(0).values(),
            u.comp(1).values(),
            u.comp(2).values(),
        ];
        let (n1, n2, nz) = (self.grid.n1(), self.grid.n2(), self.grid.nz());
        let mut out_vals = [
            Array3::<f64>::zeros((n1, n2, nz)),
            Array3::<f64>::zeros((n1, n2, nz)),
            Array3::<f64>::zeros((n1, n2, nz)),
        ];
        for r in 0..3 {
            for c in 0..3 {
                let m = &self.entries[r][c];
                ndarray::Zip::from(&mut out_vals[r]).and(m).and(&vals[c]).for_each(
                    |o, &a, &b| *o += a * b,
                );
            }
        }
        let [a, b, c] = out_vals;
        let mut out = VectorField::from_components(
            ScalarField::from_values(&self.grid, &a),
            ScalarField::from_values(&self.grid, &b),
            ScalarField::from_values(&self.grid, &c),
        );
        out.dealias();
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|row| row.iter())
            .flat_map(|e| e.iter())
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }

    /// Sup of the antisymmetric part, for symmetry assertions.
    pub fn asymmetry(&self) -> f64 {
        let mut sup: f64 = 0.0;
        for r in 0..3 {
            for c in (r + 1)..3 {
                let diff = &self.entries[r][c] - &self.entries[c][r];
                sup = sup.max(diff.iter().map(|v| v.abs()).fold(0.0, f64::max));
            }
        }
        sup
    }
}

// ---------------------------------------------------------------------------
// serialization-facing views
// ---------------------------------------------------------------------------

/// Flat record stream of a scalar coefficient tensor, for file export.
pub fn scalar_records(field: &ScalarField) -> Vec<(i32, i32, usize, f64, f64)> {
    let grid = &field.grid;
    let mut out = Vec::new();
    for m1 in 0..grid.n1() {
        for m2 in 0..grid.n2() {
            for iz in 0..grid.nz() {
                let v = field.coeffs[[m1, m2, iz]];
                out.push((grid.j1[m1], grid.j2[m2], iz, v.re, v.im));
            }
        }
    }
    out
}

/// Rebuild a scalar field from exported records.
pub fn scalar_from_records(
    grid: &Arc<Grid>,
    records: &[(i32, i32, usize, f64, f64)],
) -> Result<ScalarField> {
    let mut field = ScalarField::zeros(grid);
    let (n1, n2) = (grid.n1() as i32, grid.n2() as i32);
    for &(j1, j2, iz, re, im) in records {
        if j1 < -(n1 / 2) || j1 > n1 / 2 || j2 < -(n2 / 2) || j2 > n2 / 2 || iz >= grid.nz() {
            return Err(Error::invalid(format!("mode ({j1},{j2},{iz}) outside the truncation")));
        }
        let m1 = j1.rem_euclid(n1) as usize;
        let m2 = j2.rem_euclid(n2) as usize;
        field.coeffs[[m1, m2, iz]] = C64::new(re, im);
    }
    Ok(field)
}
