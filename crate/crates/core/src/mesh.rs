//! Uniform triangulations of a rectangle `[0, Lx] × [0, Ly]`, optionally
//! periodic in `x`.
//!
//! Each grid rectangle is split along its lower-left to upper-right diagonal
//! into a lower triangle `(v00, v10, v11)` and an upper triangle
//! `(v00, v11, v01)`, both counter-clockwise.
//!
//! Local edge `i` of a cell is the edge opposite local vertex `i`, traversed
//! counter-clockwise: `e0 = v1→v2`, `e1 = v2→v0`, `e2 = v0→v1`. Two cells that
//! share an edge traverse it in opposite directions, so edge parameter `t` on
//! the first cell corresponds to `1 - t` on the second.
//!
//! Periodicity is realised by vertex identification: vertex `(nx, j)` is the
//! same topological vertex as `(0, j)`. Cells keep their true coordinates, so
//! cells along the seam see ordinary geometry.

use crate::error::{Error, Result};
use crate::spaces::Quadrature;

/// Tag of a non-periodic boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    /// `z = 0`
    Bottom,
    /// `z = Ly`
    Top,
    /// `x = 0` (non-periodic meshes only)
    Left,
    /// `x = Lx` (non-periodic meshes only)
    Right,
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Topological vertex ids (after periodic identification).
    pub vertices: [usize; 3],
    /// Physical coordinates of the three vertices.
    pub coords: [[f64; 2]; 3],
}

/// Affine map data for one cell: `x = x0 + J ξ`.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub origin: [f64; 2],
    pub jac: [[f64; 2]; 2],
    /// `J^{-T}`, maps reference gradients to physical gradients.
    pub inv_jac_t: [[f64; 2]; 2],
    pub det: f64,
    pub area: f64,
    pub diameter: f64,
    pub inradius: f64,
}

impl CellGeometry {
    fn new(c: &[[f64; 2]; 3]) -> Self {
        let jac = [
            [c[1][0] - c[0][0], c[2][0] - c[0][0]],
            [c[1][1] - c[0][1], c[2][1] - c[0][1]],
        ];
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        let inv_jac_t = [
            [jac[1][1] / det, -jac[1][0] / det],
            [-jac[0][1] / det, jac[0][0] / det],
        ];
        let len = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        let l = [len(c[1], c[2]), len(c[2], c[0]), len(c[0], c[1])];
        let area = 0.5 * det.abs();
        let perimeter = l[0] + l[1] + l[2];
        CellGeometry {
            origin: c[0],
            jac,
            inv_jac_t,
            det,
            area,
            diameter: l[0].max(l[1]).max(l[2]),
            inradius: 2.0 * area / perimeter,
        }
    }

    #[inline]
    pub fn map(&self, xi: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + self.jac[0][0] * xi[0] + self.jac[0][1] * xi[1],
            self.origin[1] + self.jac[1][0] * xi[0] + self.jac[1][1] * xi[1],
        ]
    }

    #[inline]
    pub fn grad_to_physical(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_jac_t[0][0] * g[0] + self.inv_jac_t[0][1] * g[1],
            self.inv_jac_t[1][0] * g[0] + self.inv_jac_t[1][1] * g[1],
        ]
    }
}

#[derive(Debug, Clone)]
pub struct InteriorEdge {
    pub cells: [usize; 2],
    /// Local edge index within each adjacent cell.
    pub local: [usize; 2],
    /// Unit normal pointing out of `cells[0]`.
    pub normal: [f64; 2],
    pub length: f64,
    /// Edge lies on the periodic seam `x = 0 ≡ x = Lx`.
    pub seam: bool,
}

#[derive(Debug, Clone)]
pub struct BoundaryEdge {
    pub cell: usize,
    pub local: usize,
    /// Outward unit normal.
    pub normal: [f64; 2],
    pub length: f64,
    pub tag: BoundaryTag,
}

/// Vertex rows identified across the periodic seam, and the seam edges.
#[derive(Debug, Clone, Default)]
pub struct PeriodicPairs {
    /// `(left point, right point)` of each identified vertex, indexed by row `j`.
    pub vertices: Vec<([f64; 2], [f64; 2])>,
    /// Indices into `interior_edges` of the seam edges.
    pub seam_edges: Vec<usize>,
}

/// Which edge a cell's local edge belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRef {
    Interior { edge: usize, side: usize },
    Boundary { edge: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeId {
    Interior(usize),
    Boundary(usize),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub periodic_x: bool,
    /// Representative coordinates of each topological vertex.
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<Cell>,
    pub geometry: Vec<CellGeometry>,
    pub interior_edges: Vec<InteriorEdge>,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub periodic_pairs: PeriodicPairs,
    pub cell_edges: Vec<[EdgeRef; 3]>,
}

/// Maximum `h_K / ρ_K` accepted at build time.
pub const DEFAULT_SHAPE_BOUND: f64 = 100.0;

/// Reference coordinates of edge parameter `t` on local edge `local`.
#[inline]
pub fn edge_reference_point(local: usize, t: f64) -> [f64; 2] {
    match local {
        0 => [1.0 - t, t],
        1 => [0.0, 1.0 - t],
        2 => [t, 0.0],
        _ => unreachable!("triangles have three edges"),
    }
}

/// Local vertex indices `(start, end)` of a local edge.
#[inline]
pub fn local_edge_vertices(local: usize) -> (usize, usize) {
    match local {
        0 => (1, 2),
        1 => (2, 0),
        2 => (0, 1),
        _ => unreachable!("triangles have three edges"),
    }
}

/// `⟦f⟧ = f₁ n₁ + f₂ n₂ = (f₁ − f₂) n₁`.
#[inline]
pub fn jump(f1: f64, f2: f64, n1: [f64; 2]) -> [f64; 2] {
    [(f1 - f2) * n1[0], (f1 - f2) * n1[1]]
}

/// `{f} = (f₁ + f₂)/2`.
#[inline]
pub fn average(f1: f64, f2: f64) -> f64 {
    0.5 * (f1 + f2)
}

/// Geometry needed to form jumps and averages on an interior edge.
#[derive(Debug, Clone)]
pub struct JumpAverageFrame {
    pub normal: [f64; 2],
    pub length: f64,
    pub cells: [usize; 2],
    pub local: [usize; 2],
    /// Physical quadrature points along the edge, as seen from `cells[0]`.
    pub points: Vec<[f64; 2]>,
    /// Matching reference points in each adjacent cell.
    pub reference_points: [Vec<[f64; 2]>; 2],
}

impl Mesh {
    /// Uniform triangulation of `[0, lx] × [0, ly]` with `nx × ny` rectangles.
    pub fn rectangle(nx: usize, ny: usize, lx: f64, ly: f64, periodic_x: bool) -> Result<Self> {
        Self::rectangle_with_bound(nx, ny, lx, ly, periodic_x, DEFAULT_SHAPE_BOUND)
    }

    pub fn rectangle_with_bound(
        nx: usize,
        ny: usize,
        lx: f64,
        ly: f64,
        periodic_x: bool,
        shape_bound: f64,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!(
                "cell counts must be positive (nx = {nx}, ny = {ny})"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "domain extents must be positive (Lx = {lx}, Ly = {ly})"
            )));
        }
        if periodic_x && nx < 2 {
            // With one column the seam identification collapses distinct
            // edges onto the same vertex pair.
            return Err(Error::InvalidArgument(
                "periodic meshes need nx >= 2".to_string(),
            ));
        }

        let dx = lx / nx as f64;
        let dz = ly / ny as f64;
        let nxv = if periodic_x { nx } else { nx + 1 };
        let vid = |i: usize, j: usize| -> usize {
            let ii = if periodic_x && i == nx { 0 } else { i };
            j * nxv + ii
        };
        let point = |i: usize, j: usize| [i as f64 * dx, j as f64 * dz];

        let mut vertices = vec![[0.0; 2]; nxv * (ny + 1)];
        for j in 0..=ny {
            for i in 0..nxv {
                vertices[vid(i, j)] = point(i, j);
            }
        }

        let lower = |i: usize, j: usize| 2 * (j * nx + i);
        let upper = |i: usize, j: usize| 2 * (j * nx + i) + 1;

        let mut cells = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (v00, v10, v11, v01) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                let (p00, p10, p11, p01) = (point(i, j), point(i + 1, j), point(i + 1, j + 1), point(i, j + 1));
                cells.push(Cell {
                    vertices: [v00, v10, v11],
                    coords: [p00, p10, p11],
                });
                cells.push(Cell {
                    vertices: [v00, v11, v01],
                    coords: [p00, p11, p01],
                });
            }
        }
        let geometry: Vec<CellGeometry> = cells.iter().map(|c| CellGeometry::new(&c.coords)).collect();

        let mut interior_edges = Vec::new();
        let mut boundary_edges = Vec::new();
        let placeholder = EdgeRef::Boundary { edge: usize::MAX };
        let mut cell_edges = vec![[placeholder; 3]; cells.len()];
        let mut periodic_pairs = PeriodicPairs::default();

        let normal_of = |cell: &Cell, local: usize| -> ([f64; 2], f64) {
            let (a, b) = local_edge_vertices(local);
            let t = [
                cell.coords[b][0] - cell.coords[a][0],
                cell.coords[b][1] - cell.coords[a][1],
            ];
            let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
            ([t[1] / len, -t[0] / len], len)
        };

        let mut add_interior = |c0: usize, l0: usize, c1: usize, l1: usize, seam: bool, cells: &[Cell]| {
            let (normal, length) = normal_of(&cells[c0], l0);
            let idx = interior_edges.len();
            interior_edges.push(InteriorEdge {
                cells: [c0, c1],
                local: [l0, l1],
                normal,
                length,
                seam,
            });
            cell_edges[c0][l0] = EdgeRef::Interior { edge: idx, side: 0 };
            cell_edges[c1][l1] = EdgeRef::Interior { edge: idx, side: 1 };
            idx
        };

        for j in 0..ny {
            for i in 0..nx {
                let lo = lower(i, j);
                let up = upper(i, j);
                // diagonal: lower e1 / upper e2
                add_interior(lo, 1, up, 2, false, &cells);
                // bottom of this rectangle: lower e2 / upper(i, j-1) e0
                if j > 0 {
                    add_interior(upper(i, j - 1), 0, lo, 2, false, &cells);
                }
                // left side: upper e1 / lower(i-1, j) e0
                if i > 0 {
                    add_interior(lower(i - 1, j), 0, up, 1, false, &cells);
                } else if periodic_x {
                    let idx = add_interior(lower(nx - 1, j), 0, up, 1, true, &cells);
                    periodic_pairs.seam_edges.push(idx);
                }
            }
        }

        let mut add_boundary = |cell: usize, local: usize, tag: BoundaryTag, cells: &[Cell]| {
            let (normal, length) = normal_of(&cells[cell], local);
            let idx = boundary_edges.len();
            boundary_edges.push(BoundaryEdge {
                cell,
                local,
                normal,
                length,
                tag,
            });
            cell_edges[cell][local] = EdgeRef::Boundary { edge: idx };
        };
        for i in 0..nx {
            add_boundary(lower(i, 0), 2, BoundaryTag::Bottom, &cells);
        }
        for i in 0..nx {
            add_boundary(upper(i, ny - 1), 0, BoundaryTag::Top, &cells);
        }
        if !periodic_x {
            for j in 0..ny {
                add_boundary(upper(0, j), 1, BoundaryTag::Left, &cells);
            }
            for j in 0..ny {
                add_boundary(lower(nx - 1, j), 0, BoundaryTag::Right, &cells);
            }
        } else {
            periodic_pairs.vertices = (0..=ny).map(|j| (point(0, j), point(nx, j))).collect();
        }

        let mesh = Mesh {
            lx,
            ly,
            nx,
            ny,
            periodic_x,
            vertices,
            cells,
            geometry,
            interior_edges,
            boundary_edges,
            periodic_pairs,
            cell_edges,
        };
        let ratio = mesh.shape_ratio();
        if ratio > shape_bound {
            return Err(Error::InvalidArgument(format!(
                "shape regularity bound violated: max h_K/ρ_K = {ratio:.3} > {shape_bound}"
            )));
        }
        Ok(mesh)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Maximum element diameter `h`.
    pub fn h(&self) -> f64 {
        self.geometry.iter().map(|g| g.diameter).fold(0.0, f64::max)
    }

    /// `max_K h_K / ρ_K`.
    pub fn shape_ratio(&self) -> f64 {
        self.geometry
            .iter()
            .map(|g| g.diameter / g.inradius)
            .fold(0.0, f64::max)
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Whether a cell has an edge on a non-periodic boundary.
    pub fn touches_boundary(&self, cell: usize) -> bool {
        self.cell_edges[cell]
            .iter()
            .any(|e| matches!(e, EdgeRef::Boundary { .. }))
    }

    /// Frame for evaluating `⟦f⟧` and `{f}` on an interior edge.
    pub fn jump_average_frame(&self, edge: EdgeId, quad: &Quadrature) -> Result<JumpAverageFrame> {
        let idx = match edge {
            EdgeId::Interior(i) if i < self.interior_edges.len() => i,
            EdgeId::Interior(i) => {
                return Err(Error::ContractViolation(format!(
                    "interior edge {i} does not exist"
                )))
            }
            EdgeId::Boundary(i) => {
                return Err(Error::ContractViolation(format!(
                    "jump/average requested on boundary edge {i}"
                )))
            }
        };
        let e = &self.interior_edges[idx];
        let ref0: Vec<[f64; 2]> = quad
            .edge_points
            .iter()
            .map(|&t| edge_reference_point(e.local[0], t))
            .collect();
        let ref1: Vec<[f64; 2]> = quad
            .edge_points
            .iter()
            .map(|&t| edge_reference_point(e.local[1], 1.0 - t))
            .collect();
        let g0 = &self.geometry[e.cells[0]];
        let points = ref0.iter().map(|&xi| g0.map(xi)).collect();
        Ok(JumpAverageFrame {
            normal: e.normal,
            length: e.length,
            cells: e.cells,
            local: e.local,
            points,
            reference_points: [ref0, ref1],
        })
    }
}
