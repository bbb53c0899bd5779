//! Bilinear rectangular elements on a tensor-product mesh, assembled into a
//! banded symmetric positive-definite system and factored by band Cholesky.
//!
//! The element space is variational: refining the mesh (nested bisection)
//! can only lower the discrete field energy for fixed Dirichlet data, which
//! is what makes the capacitance converge monotonically from above.

use super::mesh::Mesh;

/// Per-cell material description: diagonal permittivity tensor in units of
/// ε0, or a perfect conductor (excluded from the field region).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellMaterial {
    Dielectric { eps_x: f64, eps_y: f64 },
    Conductor,
}

/// Node boundary condition: fixed potential or free.
pub type NodeBc = Option<f64>;

/// Solved potential with bookkeeping for energy integrals.
pub struct Potential {
    pub values: Vec<f64>,
    /// max_i |K·φ − b|_i / (|K|·|φ| + |b|)_i over free nodes.
    pub max_relative_residual: f64,
    pub free_nodes: usize,
    pub half_bandwidth: usize,
}

const EPS0: f64 = crate::constants::VACUUM_PERMITTIVITY;

/// Energy contributions of one cell, split by field direction:
/// (½ε0εx∫Ex², ½ε0εy∫Ey²).
pub fn cell_energy_split(
    mesh: &Mesh,
    cells: &[CellMaterial],
    values: &[f64],
    ix: usize,
    iy: usize,
) -> (f64, f64) {
    let nx = mesh.xs.len();
    let ny = mesh.ys.len();
    debug_assert!(ix + 1 < nx && iy + 1 < ny);
    let cell = cells[ix * (ny - 1) + iy];
    let CellMaterial::Dielectric { eps_x, eps_y } = cell else {
        return (0.0, 0.0);
    };
    let hx = mesh.xs[ix + 1] - mesh.xs[ix];
    let hy = mesh.ys[iy + 1] - mesh.ys[iy];
    let v00 = values[ix * ny + iy];
    let v01 = values[ix * ny + iy + 1];
    let v10 = values[(ix + 1) * ny + iy];
    let v11 = values[(ix + 1) * ny + iy + 1];
    // ∫(∂xφ)² = hy/hx·(a² + ab + b²)/3 for bilinear φ.
    let (a, b) = (v10 - v00, v11 - v01);
    let (c, d) = (v01 - v00, v11 - v10);
    let qx = a * a + a * b + b * b;
    let qy = c * c + c * d + d * d;
    (
        0.5 * EPS0 * eps_x * hy / hx * qx / 3.0,
        0.5 * EPS0 * eps_y * hx / hy * qy / 3.0,
    )
}

/// Local 4×4 stiffness (node order v00, v10, v01, v11) for a rectangle.
fn local_stiffness(eps_x: f64, eps_y: f64, hx: f64, hy: f64) -> [[f64; 4]; 4] {
    // Quadratic forms from the exact bilinear energy integrals.
    let ax = [-1.0, 1.0, 0.0, 0.0];
    let bx = [0.0, 0.0, -1.0, 1.0];
    let ay = [-1.0, 0.0, 1.0, 0.0];
    let by = [0.0, -1.0, 0.0, 1.0];
    let cx = EPS0 * eps_x * hy / (3.0 * hx);
    let cy = EPS0 * eps_y * hx / (3.0 * hy);
    let mut k = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            k[i][j] = cx
                * (ax[i] * ax[j] + 0.5 * (ax[i] * bx[j] + bx[i] * ax[j]) + bx[i] * bx[j])
                + cy * (ay[i] * ay[j] + 0.5 * (ay[i] * by[j] + by[i] * ay[j]) + by[i] * by[j]);
        }
    }
    k
}

/// Symmetric banded matrix in lower-band storage; row i keeps columns
/// [i − hb, i].
struct BandMatrix {
    n: usize,
    hb: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn zeros(n: usize, hb: usize) -> Self {
        BandMatrix {
            n,
            hb,
            data: vec![0.0; n * (hb + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.hb);
        i * (self.hb + 1) + (j + self.hb - i)
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let at = self.idx(r, c);
        self.data[at] += v;
    }

    /// In-place Cholesky; fails on a non-positive pivot.
    fn factor(&mut self) -> Result<(), usize> {
        let hb = self.hb;
        for i in 0..self.n {
            let j_lo = i.saturating_sub(hb);
            for j in j_lo..=i {
                let mut sum = self.data[self.idx(i, j)];
                let k_lo = j_lo.max(j.saturating_sub(hb));
                for k in k_lo..j {
                    sum -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                if i == j {
                    if sum <= 0.0 {
                        return Err(i);
                    }
                    let at = self.idx(i, i);
                    self.data[at] = sum.sqrt();
                } else {
                    let at = self.idx(i, j);
                    self.data[at] = sum / self.data[self.idx(j, j)];
                }
            }
        }
        Ok(())
    }

    /// Solve L·Lᵀ·x = b in place (after `factor`).
    fn solve(&self, b: &mut [f64]) {
        let hb = self.hb;
        for i in 0..self.n {
            let mut sum = b[i];
            let k_lo = i.saturating_sub(hb);
            for k in k_lo..i {
                sum -= self.data[self.idx(i, k)] * b[k];
            }
            b[i] = sum / self.data[self.idx(i, i)];
        }
        for i in (0..self.n).rev() {
            let mut sum = b[i];
            let k_hi = (i + hb).min(self.n - 1);
            for k in i + 1..=k_hi {
                sum -= self.data[self.idx(k, i)] * b[k];
            }
            b[i] = sum / self.data[self.idx(i, i)];
        }
    }
}

/// Assemble and solve the electrostatic problem. `cells` is x-major over
/// (nx−1)(ny−1) cells; `bcs` is x-major over nodes.
pub fn solve_potential(mesh: &Mesh, cells: &[CellMaterial], bcs: &[NodeBc]) -> Potential {
    let nx = mesh.xs.len();
    let ny = mesh.ys.len();
    assert_eq!(cells.len(), (nx - 1) * (ny - 1));
    assert_eq!(bcs.len(), nx * ny);

    // Equation numbering: free nodes in raster order (x-major, y fastest).
    let mut eq = vec![usize::MAX; nx * ny];
    let mut free = 0usize;
    for (node, bc) in bcs.iter().enumerate() {
        if bc.is_none() {
            eq[node] = free;
            free += 1;
        }
    }
    // Raster numbering keeps couplings within one x-column of each other.
    let hb = ny + 1;
    let mut matrix = BandMatrix::zeros(free, hb.min(free.saturating_sub(1)).max(1));
    let mut rhs = vec![0.0; free];

    for ix in 0..nx - 1 {
        for iy in 0..ny - 1 {
            let CellMaterial::Dielectric { eps_x, eps_y } = cells[ix * (ny - 1) + iy] else {
                continue;
            };
            let hx = mesh.xs[ix + 1] - mesh.xs[ix];
            let hy = mesh.ys[iy + 1] - mesh.ys[iy];
            let k = local_stiffness(eps_x, eps_y, hx, hy);
            let nodes = [
                ix * ny + iy,
                (ix + 1) * ny + iy,
                ix * ny + iy + 1,
                (ix + 1) * ny + iy + 1,
            ];
            for (i, &ni) in nodes.iter().enumerate() {
                let Some(ei) = (eq[ni] != usize::MAX).then(|| eq[ni]) else {
                    continue;
                };
                for (j, &nj) in nodes.iter().enumerate() {
                    match bcs[nj] {
                        None => {
                            let ej = eq[nj];
                            if ej <= ei {
                                matrix.add(ei, ej, k[i][j]);
                            }
                        }
                        Some(phi) => rhs[ei] -= k[i][j] * phi,
                    }
                }
            }
        }
    }

    let mut solution = rhs.clone();
    matrix
        .factor()
        .unwrap_or_else(|i| panic!("electrostatic system not positive definite at row {i}"));
    matrix.solve(&mut solution);

    // Scatter to nodes and measure the discrete residual.
    let mut values = vec![0.0; nx * ny];
    for (node, bc) in bcs.iter().enumerate() {
        values[node] = match bc {
            Some(phi) => *phi,
            None => solution[eq[node]],
        };
    }
    let max_relative_residual = residual_check(mesh, cells, bcs, &values);

    Potential {
        values,
        max_relative_residual,
        free_nodes: free,
        half_bandwidth: matrix.hb,
    }
}

/// Verify K·φ = b at every free node, normalized by the row magnitude.
fn residual_check(mesh: &Mesh, cells: &[CellMaterial], bcs: &[NodeBc], values: &[f64]) -> f64 {
    let nx = mesh.xs.len();
    let ny = mesh.ys.len();
    let mut residual = vec![0.0; nx * ny];
    let mut row_scale = vec![0.0; nx * ny];
    for ix in 0..nx - 1 {
        for iy in 0..ny - 1 {
            let CellMaterial::Dielectric { eps_x, eps_y } = cells[ix * (ny - 1) + iy] else {
                continue;
            };
            let hx = mesh.xs[ix + 1] - mesh.xs[ix];
            let hy = mesh.ys[iy + 1] - mesh.ys[iy];
            let k = local_stiffness(eps_x, eps_y, hx, hy);
            let nodes = [
                ix * ny + iy,
                (ix + 1) * ny + iy,
                ix * ny + iy + 1,
                (ix + 1) * ny + iy + 1,
            ];
            for (i, &ni) in nodes.iter().enumerate() {
                if bcs[ni].is_some() {
                    continue;
                }
                for (j, &nj) in nodes.iter().enumerate() {
                    residual[ni] += k[i][j] * values[nj];
                    row_scale[ni] += (k[i][j] * values[nj]).abs();
                }
            }
        }
    }
    let mut worst = 0.0_f64;
    for node in 0..nx * ny {
        if bcs[node].is_none() && row_scale[node] > 0.0 {
            worst = worst.max(residual[node].abs() / row_scale[node]);
        }
    }
    worst
}
