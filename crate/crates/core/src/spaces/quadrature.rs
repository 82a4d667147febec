/// Gauss–Legendre rule on `[0, 1]` with `n` points.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess, then Newton on P_n
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, t);
            dp = d;
            let dt = p / d;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, t);
        dp = if d != 0.0 { d } else { dp };
        x[n - 1 - i] = 0.5 * (1.0 + t);
        w[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

fn legendre(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let dp = if n == 0 { 0.0 } else { n as f64 * (t * p - p0) / (t * t - 1.0) };
    (p, dp)
}

/// Volume and edge rules on the reference triangle `{ξ, η ≥ 0, ξ + η ≤ 1}`.
///
/// The volume rule is a collapsed tensor Gauss rule; its weights sum to the
/// reference area `1/2`. Edge points are parameters `t ∈ [0, 1]` with weights
/// summing to 1 (multiply by the edge length).
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub degree: usize,
    pub vol_points: Vec<[f64; 2]>,
    pub vol_weights: Vec<f64>,
    pub edge_points: Vec<f64>,
    pub edge_weights: Vec<f64>,
}

impl Quadrature {
    /// Rules exact for polynomials of total degree `degree`.
    pub fn new(degree: usize) -> Self {
        let n_edge = degree / 2 + 1;
        let (edge_points, edge_weights) = gauss_legendre_unit(n_edge);

        // (a, b) ∈ [0,1]² ↦ (a(1-b), b), Jacobian (1-b): one extra degree in b
        let na = degree / 2 + 1;
        let nb = (degree + 1) / 2 + 1;
        let (ta, wa) = gauss_legendre_unit(na);
        let (tb, wb) = gauss_legendre_unit(nb);
        let mut vol_points = Vec::with_capacity(na * nb);
        let mut vol_weights = Vec::with_capacity(na * nb);
        for (b, wbj) in tb.iter().zip(&wb) {
            for (a, wai) in ta.iter().zip(&wa) {
                vol_points.push([a * (1.0 - b), *b]);
                vol_weights.push(wai * wbj * (1.0 - b));
            }
        }
        Quadrature {
            degree,
            vol_points,
            vol_weights,
            edge_points,
            edge_weights,
        }
    }

    /// Default rule for `DG_q` / `CG_r`: exact to degree `2q + r + 1`.
    pub fn for_degrees(q: usize, r: usize) -> Self {
        Self::new(2 * q + r + 1)
    }

    pub fn n_vol(&self) -> usize {
        self.vol_points.len()
    }

    pub fn n_edge(&self) -> usize {
        self.edge_points.len()
    }
}
