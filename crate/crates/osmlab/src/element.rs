//! Reference Raviart-Thomas and discontinuous Lagrange elements on the
//! triangle, plus the affine cell geometry used to push them forward.
//!
//! Degrees follow the convention where `RT_1` is the lowest-order
//! Raviart-Thomas element: `RT_k` has `k` normal moments per edge against
//! Legendre polynomials, `k(k-1)` interior moments, and `dim = k(k+2)`;
//! its divergence lies in `DG_{k-1}`.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::mesh::Mesh;
use crate::quadrature::{gauss_legendre_unit, TriangleRule};
use nalgebra::DMatrix;

pub const MAX_DEGREE: usize = 5;

/// Legendre polynomial `P_j` on `[-1, 1]`.
pub fn legendre(j: usize, t: f64) -> f64 {
    let mut p0 = 1.0;
    let mut p1 = t;
    match j {
        0 => 1.0,
        1 => t,
        _ => {
            for k in 2..=j {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            p1
        }
    }
}

/// Scalar monomial exponents `(a, b)` for all `x^a y^b` with
/// `a + b <= degree`, ordered by total degree.
fn monomial_exponents(degree: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for d in 0..=degree as u32 {
        for a in (0..=d).rev() {
            out.push((a, d - a));
        }
    }
    out
}

fn eval_monomial(a: u32, b: u32, p: Vec2) -> f64 {
    p.x.powi(a as i32) * p.y.powi(b as i32)
}

/// Reference triangle edges, traversed counterclockwise so the right-hand
/// normal of each traversal points outward. Edge `l` is opposite vertex `l`.
const REF_EDGES: [(Vec2, Vec2); 3] = [
    (Vec2 { x: 1.0, y: 0.0 }, Vec2 { x: 0.0, y: 1.0 }),
    (Vec2 { x: 0.0, y: 1.0 }, Vec2 { x: 0.0, y: 0.0 }),
    (Vec2 { x: 0.0, y: 0.0 }, Vec2 { x: 1.0, y: 0.0 }),
];

/// Tabulated vector-valued basis: `values[basis][point]`, with divergences.
#[derive(Debug, Clone)]
pub struct RtTabulation {
    pub values: Vec<Vec<Vec2>>,
    pub divs: Vec<Vec<f64>>,
}

/// Reference Raviart-Thomas element of degree `k` (lowest order at `k = 1`).
#[derive(Debug, Clone)]
pub struct RtElement {
    pub degree: usize,
    pub dim: usize,
    pub dofs_per_edge: usize,
    pub interior_dofs: usize,
    /// `coeffs[m][j]`: coefficient of primal basis function `m` in nodal
    /// basis function `j`.
    coeffs: DMatrix<f64>,
}

impl RtElement {
    pub fn new(degree: usize) -> Result<RtElement> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(Error::UnsupportedDegree(degree));
        }
        let k = degree;
        let dim = k * (k + 2);
        let n_dofs = 3 * k + k * (k - 1);
        debug_assert_eq!(dim, n_dofs);

        // Generalized Vandermonde: dual functionals applied to the primal
        // monomial basis.
        let mut v = DMatrix::zeros(dim, dim);
        let (qs, qw) = gauss_legendre_unit(k + 2);
        for edge in 0..3 {
            let (start, end) = REF_EDGES[edge];
            let tangent = end - start;
            let normal_ds = tangent.right_normal(); // |tangent| * unit normal
            for j in 0..k {
                let row = edge * k + j;
                for (m, basis) in PrimalBasis::new(k).enumerate() {
                    let mut acc = 0.0;
                    for (&s, &w) in qs.iter().zip(&qw) {
                        let p = start + tangent * s;
                        let val = basis.value(p);
                        acc += w * val.dot(normal_ds) * legendre(j, 2.0 * s - 1.0);
                    }
                    v[(row, m)] = acc;
                }
            }
        }
        if k >= 2 {
            let rule = TriangleRule::with_exactness(2 * k);
            let moments = monomial_exponents(k - 2);
            for (t, &(a, b)) in moments.iter().enumerate() {
                for comp in 0..2 {
                    let row = 3 * k + t * 2 + comp;
                    for (m, basis) in PrimalBasis::new(k).enumerate() {
                        let mut acc = 0.0;
                        for (p, &w) in rule.points.iter().zip(&rule.weights) {
                            let val = basis.value(*p);
                            let component = if comp == 0 { val.x } else { val.y };
                            acc += w * component * eval_monomial(a, b, *p);
                        }
                        v[(row, m)] = acc;
                    }
                }
            }
        }

        let coeffs = v
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::SingularMatrix("RT Vandermonde".into()))?;

        Ok(RtElement {
            degree: k,
            dim,
            dofs_per_edge: k,
            interior_dofs: k * (k - 1),
            coeffs,
        })
    }

    /// Nodal basis values and divergences at reference points.
    pub fn tabulate(&self, points: &[Vec2]) -> RtTabulation {
        let k = self.degree;
        let mut values = vec![vec![Vec2::ZERO; points.len()]; self.dim];
        let mut divs = vec![vec![0.0; points.len()]; self.dim];
        for (q, &p) in points.iter().enumerate() {
            for (m, basis) in PrimalBasis::new(k).enumerate() {
                let val = basis.value(p);
                let div = basis.divergence(p);
                for j in 0..self.dim {
                    let c = self.coeffs[(m, j)];
                    if c != 0.0 {
                        values[j][q] = values[j][q] + val * c;
                        divs[j][q] += div * c;
                    }
                }
            }
        }
        RtTabulation { values, divs }
    }

    /// Applies the reference dual functionals to an arbitrary vector field,
    /// returning its interpolation coefficients. `field` takes reference
    /// coordinates.
    pub fn interpolate(&self, field: impl Fn(Vec2) -> Vec2) -> Vec<f64> {
        let k = self.degree;
        let mut dofs = vec![0.0; self.dim];
        let (qs, qw) = gauss_legendre_unit(k + 2);
        for edge in 0..3 {
            let (start, end) = REF_EDGES[edge];
            let tangent = end - start;
            let normal_ds = tangent.right_normal();
            for j in 0..k {
                let mut acc = 0.0;
                for (&s, &w) in qs.iter().zip(&qw) {
                    let p = start + tangent * s;
                    acc += w * field(p).dot(normal_ds) * legendre(j, 2.0 * s - 1.0);
                }
                dofs[edge * k + j] = acc;
            }
        }
        if k >= 2 {
            let rule = TriangleRule::with_exactness(2 * k + 2);
            let moments = monomial_exponents(k - 2);
            for (t, &(a, b)) in moments.iter().enumerate() {
                for comp in 0..2 {
                    let mut acc = 0.0;
                    for (p, &w) in rule.points.iter().zip(&rule.weights) {
                        let val = field(*p);
                        let component = if comp == 0 { val.x } else { val.y };
                        acc += w * component * eval_monomial(a, b, *p);
                    }
                    dofs[3 * k + t * 2 + comp] = acc;
                }
            }
        }
        dofs
    }

    /// Applies the dual functionals to `n_fields` vector fields at once;
    /// `eval` returns all field values at one reference point. Returns
    /// `dofs[field][dof]`.
    pub fn interpolate_many(
        &self,
        n_fields: usize,
        eval: impl Fn(Vec2) -> Vec<Vec2>,
    ) -> Vec<Vec<f64>> {
        let k = self.degree;
        let mut dofs = vec![vec![0.0; self.dim]; n_fields];
        let (qs, qw) = gauss_legendre_unit(k + 2);
        for edge in 0..3 {
            let (start, end) = REF_EDGES[edge];
            let tangent = end - start;
            let normal_ds = tangent.right_normal();
            for (&s, &w) in qs.iter().zip(&qw) {
                let p = start + tangent * s;
                let values = eval(p);
                for j in 0..k {
                    let moment = w * legendre(j, 2.0 * s - 1.0);
                    for (f, v) in values.iter().enumerate() {
                        dofs[f][edge * k + j] += moment * v.dot(normal_ds);
                    }
                }
            }
        }
        if k >= 2 {
            let rule = TriangleRule::with_exactness(2 * k + 2);
            let moments = monomial_exponents(k - 2);
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let values = eval(*p);
                for (t, &(a, b)) in moments.iter().enumerate() {
                    let mono = w * eval_monomial(a, b, *p);
                    for (f, v) in values.iter().enumerate() {
                        dofs[f][3 * k + t * 2] += mono * v.x;
                        dofs[f][3 * k + t * 2 + 1] += mono * v.y;
                    }
                }
            }
        }
        dofs
    }
}

/// Iterator over the primal basis of `RT_k`:
/// `(P_{k-1})^2` followed by `x h` for homogeneous `h` of degree `k-1`.
struct PrimalBasis {
    k: usize,
    scalar: Vec<(u32, u32)>,
    index: usize,
}

#[derive(Debug, Clone, Copy)]
enum PrimalFn {
    /// `(x^a y^b, 0)` or `(0, x^a y^b)`.
    Component { a: u32, b: u32, comp: usize },
    /// `(x, y) * x^a y^b` with `a + b = k - 1`.
    Radial { a: u32, b: u32 },
}

impl PrimalFn {
    fn value(self, p: Vec2) -> Vec2 {
        match self {
            PrimalFn::Component { a, b, comp } => {
                let v = eval_monomial(a, b, p);
                if comp == 0 {
                    Vec2::new(v, 0.0)
                } else {
                    Vec2::new(0.0, v)
                }
            }
            PrimalFn::Radial { a, b } => {
                let h = eval_monomial(a, b, p);
                Vec2::new(p.x * h, p.y * h)
            }
        }
    }

    fn divergence(self, p: Vec2) -> f64 {
        match self {
            PrimalFn::Component { a, b, comp } => {
                if comp == 0 {
                    if a == 0 {
                        0.0
                    } else {
                        a as f64 * eval_monomial(a - 1, b, p)
                    }
                } else if b == 0 {
                    0.0
                } else {
                    b as f64 * eval_monomial(a, b - 1, p)
                }
            }
            // div(x h) = 2h + x . grad h = (2 + deg h) h for homogeneous h.
            PrimalFn::Radial { a, b } => (2 + a + b) as f64 * eval_monomial(a, b, p),
        }
    }
}

impl PrimalBasis {
    fn new(k: usize) -> PrimalBasis {
        PrimalBasis {
            k,
            scalar: monomial_exponents(k - 1),
            index: 0,
        }
    }
}

impl Iterator for PrimalBasis {
    type Item = PrimalFn;

    fn next(&mut self) -> Option<PrimalFn> {
        let ns = self.scalar.len();
        let item = if self.index < 2 * ns {
            let (a, b) = self.scalar[self.index % ns];
            Some(PrimalFn::Component {
                a,
                b,
                comp: self.index / ns,
            })
        } else if self.index < 2 * ns + self.k {
            let i = (self.index - 2 * ns) as u32;
            Some(PrimalFn::Radial {
                a: i,
                b: self.k as u32 - 1 - i,
            })
        } else {
            None
        };
        self.index += 1;
        item
    }
}

/// Discontinuous Lagrange element of polynomial degree `degree` with a
/// monomial modal basis; all dofs are cell-interior.
#[derive(Debug, Clone)]
pub struct DgElement {
    pub degree: usize,
    pub dim: usize,
    exponents: Vec<(u32, u32)>,
}

impl DgElement {
    pub fn new(degree: usize) -> Result<DgElement> {
        if degree >= MAX_DEGREE {
            return Err(Error::UnsupportedDegree(degree));
        }
        let exponents = monomial_exponents(degree);
        Ok(DgElement {
            degree,
            dim: exponents.len(),
            exponents,
        })
    }

    /// `values[basis][point]`.
    pub fn tabulate(&self, points: &[Vec2]) -> Vec<Vec<f64>> {
        self.exponents
            .iter()
            .map(|&(a, b)| points.iter().map(|&p| eval_monomial(a, b, p)).collect())
            .collect()
    }

    pub fn eval_basis(&self, j: usize, p: Vec2) -> f64 {
        let (a, b) = self.exponents[j];
        eval_monomial(a, b, p)
    }
}

/// Affine geometry of a physical cell: `F(xhat) = origin + J xhat`.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub origin: Vec2,
    pub jac: [[f64; 2]; 2],
    pub det: f64,
    inv: [[f64; 2]; 2],
}

impl CellGeometry {
    pub fn from_cell(mesh: &Mesh, cell: usize) -> CellGeometry {
        let [a, b, c] = mesh.cell_vertices(cell);
        let jac = [[b.x - a.x, c.x - a.x], [b.y - a.y, c.y - a.y]];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        debug_assert!(det > 0.0, "cells must be counterclockwise");
        let inv = [
            [jac[1][1] / det, -jac[0][1] / det],
            [-jac[1][0] / det, jac[0][0] / det],
        ];
        CellGeometry {
            origin: a,
            jac,
            det,
            inv,
        }
    }

    pub fn map(&self, xhat: Vec2) -> Vec2 {
        Vec2::new(
            self.origin.x + self.jac[0][0] * xhat.x + self.jac[0][1] * xhat.y,
            self.origin.y + self.jac[1][0] * xhat.x + self.jac[1][1] * xhat.y,
        )
    }

    pub fn pull(&self, x: Vec2) -> Vec2 {
        let d = x - self.origin;
        Vec2::new(
            self.inv[0][0] * d.x + self.inv[0][1] * d.y,
            self.inv[1][0] * d.x + self.inv[1][1] * d.y,
        )
    }

    /// Contravariant Piola push-forward `(1/det J) J vhat`.
    pub fn piola(&self, vhat: Vec2) -> Vec2 {
        Vec2::new(
            (self.jac[0][0] * vhat.x + self.jac[0][1] * vhat.y) / self.det,
            (self.jac[1][0] * vhat.x + self.jac[1][1] * vhat.y) / self.det,
        )
    }

    /// Inverse Piola map `det(J) J^{-1} v`.
    pub fn piola_pull(&self, v: Vec2) -> Vec2 {
        Vec2::new(
            (self.inv[0][0] * v.x + self.inv[0][1] * v.y) * self.det,
            (self.inv[1][0] * v.x + self.inv[1][1] * v.y) * self.det,
        )
    }

    /// Divergence transforms as `div v = (div vhat) / det J`.
    pub fn piola_div(&self, divhat: f64) -> f64 {
        divhat / self.det
    }
}
