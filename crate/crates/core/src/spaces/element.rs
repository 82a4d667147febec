use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;

use super::quadrature::Quadrature;
use crate::mesh::edge_reference_point;

/// Nodal Lagrange basis of degree `p` on the reference triangle.
///
/// Basis functions are stored as monomial coefficients obtained by
/// inverting the Vandermonde matrix at the nodes.
#[derive(Debug, Clone)]
pub struct LagrangeElement {
    pub degree: usize,
    pub nodes: Vec<[f64; 2]>,
    exps: Vec<(i32, i32)>,
    /// `coeffs[i * n + m]`: coefficient of monomial `m` in basis function `i`.
    coeffs: Vec<f64>,
}

pub fn dim_p(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

impl LagrangeElement {
    /// Discontinuous element: equispaced lattice nodes (centroid for `p = 0`).
    pub fn discontinuous(p: usize) -> Self {
        if p == 0 {
            return Self::from_nodes(0, vec![[1.0 / 3.0, 1.0 / 3.0]]);
        }
        let mut nodes = Vec::new();
        for j in 0..=p {
            for i in 0..=(p - j) {
                nodes.push([i as f64 / p as f64, j as f64 / p as f64]);
            }
        }
        Self::from_nodes(p, nodes)
    }

    /// Continuous element with nodes ordered vertices, then edges (local edge
    /// order, `p - 1` nodes each along the counter-clockwise direction), then
    /// interior.
    pub fn continuous(p: usize) -> Self {
        assert!(p >= 1, "continuous elements need degree >= 1");
        let mut nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        for local in 0..3 {
            for k in 1..p {
                nodes.push(edge_reference_point(local, k as f64 / p as f64));
            }
        }
        for j in 1..p {
            for i in 1..(p - j) {
                nodes.push([i as f64 / p as f64, j as f64 / p as f64]);
            }
        }
        Self::from_nodes(p, nodes)
    }

    fn from_nodes(degree: usize, nodes: Vec<[f64; 2]>) -> Self {
        let mut exps = Vec::new();
        for total in 0..=degree as i32 {
            for b in 0..=total {
                exps.push((total - b, b));
            }
        }
        let n = exps.len();
        assert_eq!(n, nodes.len());
        let v = Mat::<f64>::from_fn(n, n, |j, m| monomial(exps[m], nodes[j]));
        let inv = v.partial_piv_lu().inverse();
        // basis_i = Σ_m C[i][m] mono_m with C Vᵀ = I, so C = V⁻ᵀ
        let mut coeffs = vec![0.0; n * n];
        for i in 0..n {
            for m in 0..n {
                coeffs[i * n + m] = inv[(m, i)];
            }
        }
        LagrangeElement {
            degree,
            nodes,
            exps,
            coeffs,
        }
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn values(&self, xi: [f64; 2]) -> Vec<f64> {
        let n = self.n();
        let mono: Vec<f64> = self.exps.iter().map(|&e| monomial(e, xi)).collect();
        (0..n)
            .map(|i| (0..n).map(|m| self.coeffs[i * n + m] * mono[m]).sum())
            .collect()
    }

    pub fn grads(&self, xi: [f64; 2]) -> Vec<[f64; 2]> {
        let n = self.n();
        let dm: Vec<[f64; 2]> = self.exps.iter().map(|&e| monomial_grad(e, xi)).collect();
        (0..n)
            .map(|i| {
                let mut g = [0.0; 2];
                for m in 0..n {
                    g[0] += self.coeffs[i * n + m] * dm[m][0];
                    g[1] += self.coeffs[i * n + m] * dm[m][1];
                }
                g
            })
            .collect()
    }
}

fn monomial((a, b): (i32, i32), x: [f64; 2]) -> f64 {
    x[0].powi(a) * x[1].powi(b)
}

fn monomial_grad((a, b): (i32, i32), x: [f64; 2]) -> [f64; 2] {
    let dx = if a > 0 { a as f64 * x[0].powi(a - 1) * x[1].powi(b) } else { 0.0 };
    let dy = if b > 0 { b as f64 * x[0].powi(a) * x[1].powi(b - 1) } else { 0.0 };
    [dx, dy]
}

/// Basis values and reference gradients at every quadrature point.
///
/// Edge tables are indexed by local edge and a `rev` flag: with `rev` the
/// edge parameter is `1 - t`, which is how the second cell of an interior
/// edge sees the first cell's points.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub n: usize,
    pub vol_val: Vec<f64>,
    pub vol_grad: Vec<[f64; 2]>,
    pub edge_val: [[Vec<f64>; 2]; 3],
    pub edge_grad: [[Vec<[f64; 2]>; 2]; 3],
}

impl Tabulation {
    pub fn new(el: &LagrangeElement, quad: &Quadrature) -> Self {
        let n = el.n();
        let mut vol_val = Vec::with_capacity(n * quad.n_vol());
        let mut vol_grad = Vec::with_capacity(n * quad.n_vol());
        for &xi in &quad.vol_points {
            vol_val.extend(el.values(xi));
            vol_grad.extend(el.grads(xi));
        }
        let mut edge_val: [[Vec<f64>; 2]; 3] = Default::default();
        let mut edge_grad: [[Vec<[f64; 2]>; 2]; 3] = Default::default();
        for local in 0..3 {
            for rev in 0..2 {
                for &t in &quad.edge_points {
                    let tt = if rev == 1 { 1.0 - t } else { t };
                    let xi = edge_reference_point(local, tt);
                    edge_val[local][rev].extend(el.values(xi));
                    edge_grad[local][rev].extend(el.grads(xi));
                }
            }
        }
        Tabulation {
            n,
            vol_val,
            vol_grad,
            edge_val,
            edge_grad,
        }
    }

    #[inline]
    pub fn val(&self, at: super::At) -> &[f64] {
        let n = self.n;
        match at {
            super::At::Vol(q) => &self.vol_val[q * n..(q + 1) * n],
            super::At::Edge { local, rev, q } => &self.edge_val[local][rev as usize][q * n..(q + 1) * n],
        }
    }

    #[inline]
    pub fn grad(&self, at: super::At) -> &[[f64; 2]] {
        let n = self.n;
        match at {
            super::At::Vol(q) => &self.vol_grad[q * n..(q + 1) * n],
            super::At::Edge { local, rev, q } => &self.edge_grad[local][rev as usize][q * n..(q + 1) * n],
        }
    }
}
