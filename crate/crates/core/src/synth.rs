//! Deterministic synthetic fields for validation runs.
//!
//! Random inputs used in self-checks must be band-limited twice over:
//! horizontally inside the dealias band, and vertically to low Chebyshev
//! degree so that collocation quadrature and differentiation act on them
//! exactly. The generator is a small splitmix mixer so that results are
//! reproducible across platforms without pulling an RNG dependency into the
//! library.

use std::sync::Arc;

use num_complex::Complex64;

use crate::field::{
    vector_plus, ScalarField, ScalarSym, SurfaceProfile, VectorField, VectorSym,
};
use crate::lattice::Grid;

/// Splitmix64: tiny, seedable, stable across platforms.
#[derive(Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    /// Uniform in [lo, hi).
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (self.uniform() + 1.0) * 0.5 * (hi - lo)
    }
}

/// Maximum vertical Chebyshev degree kept by the generators; half the node
/// count leaves ample headroom for spectrally exact quadrature of products.
fn vertical_band(grid: &Grid) -> usize {
    grid.nz() / 2
}

fn horizontal_band(grid: &Grid) -> (i32, i32) {
    (grid.cut1 as i32, grid.cut2 as i32)
}

/// Chebyshev polynomial values T_p(s) on the mapped nodes.
fn cheb_profile(grid: &Grid, degree: usize) -> Vec<f64> {
    grid.z
        .iter()
        .map(|&z| {
            let s = 2.0 * z / grid.spec.d + 1.0;
            let t = s.clamp(-1.0, 1.0).acos();
            (degree as f64 * t).cos()
        })
        .collect()
}

/// Random real scalar field, band-limited both ways, sup-normalized to `amp`.
pub fn random_scalar(grid: &Arc<Grid>, rng: &mut Rng, amp: f64) -> ScalarField {
    let (h1, h2) = horizontal_band(grid);
    let pmax = vertical_band(grid);
    let mut field = ScalarField::zeros(grid);
    for j1 in -h1..=h1 {
        for j2 in -h2..=h2 {
            if j1 < 0 || (j1 == 0 && j2 < 0) {
                continue; // conjugate partner fills these
            }
            let m1 = j1.rem_euclid(grid.n1() as i32) as usize;
            let m2 = j2.rem_euclid(grid.n2() as i32) as usize;
            let r1 = grid.refl1(m1);
            let r2 = grid.refl2(m2);
            for p in 0..=pmax {
                let profile = cheb_profile(grid, p);
                let re = rng.uniform();
                let im = if j1 == 0 && j2 == 0 { 0.0 } else { rng.uniform() };
                let c = Complex64::new(re, im);
                for (iz, &t) in profile.iter().enumerate() {
                    field.coeffs[[m1, m2, iz]] += c * t;
                    if (m1, m2) != (r1, r2) {
                        field.coeffs[[r1, r2, iz]] += c.conj() * t;
                    }
                }
            }
        }
    }
    let sup = field.sup_norm();
    if sup > 0.0 {
        field = field.scale(amp / sup);
    }
    field
}

/// Random scalar projected onto a parity class.
pub fn random_scalar_sym(
    grid: &Arc<Grid>,
    rng: &mut Rng,
    amp: f64,
    sym: ScalarSym,
) -> ScalarField {
    let raw = random_scalar(grid, rng, 1.0);
    let projected = raw.symmetrize(sym);
    let sup = projected.sup_norm();
    if sup > 0.0 {
        projected.scale(amp / sup)
    } else {
        projected
    }
}

/// Random vector field with independent components.
pub fn random_vector(grid: &Arc<Grid>, rng: &mut Rng, amp: f64) -> VectorField {
    VectorField::from_components(
        random_scalar(grid, rng, amp),
        random_scalar(grid, rng, amp),
        random_scalar(grid, rng, amp),
    )
}

/// Random vector projected onto a parity class.
pub fn random_vector_sym(
    grid: &Arc<Grid>,
    rng: &mut Rng,
    amp: f64,
    sym: VectorSym,
) -> VectorField {
    let raw = random_vector(grid, rng, 1.0);
    let projected = raw.symmetrize(sym);
    let sup = projected.sup_norm();
    if sup > 0.0 {
        projected.scale(amp / sup)
    } else {
        projected
    }
}

/// Random divergence-free field vanishing through the top and bottom planes:
/// curl of a potential whose horizontal components vanish at both planes.
/// Suitable as a solenoidal test current.
pub fn random_solenoidal(grid: &Arc<Grid>, rng: &mut Rng, amp: f64) -> VectorField {
    let d = grid.spec.d;
    // Window (z(z+d))^2 kills the potential and its first derivative at both
    // planes, so the curl has zero normal trace there.
    let window = ScalarField::sample(grid, |_, _, z| {
        let w = z * (z + d) / (d * d);
        w * w
    });
    let a1 = random_scalar(grid, rng, 1.0).product(&window);
    let a2 = random_scalar(grid, rng, 1.0).product(&window);
    let a3 = random_scalar(grid, rng, 1.0);
    let pot = VectorField::from_components(a1, a2, a3);
    let mut out = pot.curl();
    let sup = out.sup_norm();
    if sup > 0.0 {
        out = out.scale(amp / sup);
    }
    out
}

/// Random velocity-class perturbation that is tangential on both boundary
/// planes and divergence-free; the shape a flow correction must have.
pub fn random_flow_perturbation(grid: &Arc<Grid>, rng: &mut Rng, amp: f64) -> VectorField {
    let sol = random_solenoidal(grid, rng, 1.0);
    let projected = sol.symmetrize(vector_plus());
    // Parity projection commutes with curl structure: still solenoidal and
    // tangential.
    let sup = projected.sup_norm();
    let mut out = if sup > 0.0 { projected.scale(amp / sup) } else { projected };
    out.divergence_free = true;
    out
}

/// Random surface elevation in the even class with zero mean.
pub fn random_elevation(grid: &Arc<Grid>, rng: &mut Rng, amp: f64) -> SurfaceProfile {
    let (h1, h2) = horizontal_band(grid);
    let mut profile = SurfaceProfile::zeros(grid);
    for j1 in -h1..=h1 {
        for j2 in -h2..=h2 {
            if j1 < 0 || (j1 == 0 && j2 < 0) || (j1 == 0 && j2 == 0) {
                continue;
            }
            let m1 = j1.rem_euclid(grid.n1() as i32) as usize;
            let m2 = j2.rem_euclid(grid.n2() as i32) as usize;
            let r1 = grid.refl1(m1);
            let r2 = grid.refl2(m2);
            let c = Complex64::new(rng.uniform(), rng.uniform());
            profile.coeffs[[m1, m2]] += c;
            profile.coeffs[[r1, r2]] += c.conj();
        }
    }
    let projected = profile.symmetrize(ScalarSym::plus());
    let sup = projected.sup_norm();
    if sup > 0.0 {
        projected.scale(amp / sup)
    } else {
        projected
    }
}
