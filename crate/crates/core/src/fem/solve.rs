use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mesh::Mesh2D;
use super::FemError;
use crate::parallel::Exec;

pub const RELATIVE_TOLERANCE: f64 = 1e-10;

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64], exec: Exec) {
        exec.fill(out, |i| self.row_dot(i, x));
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                let (c, v) = self.row(i);
                c.binary_search(&i).map(|k| v[k]).unwrap_or(0.0)
            })
            .collect()
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let (start, end) = (self.row_ptr[i], self.row_ptr[i + 1]);
        let k = self.cols[start..end]
            .binary_search(&j)
            .expect("sparsity pattern covers element couplings");
        self.vals[start + k] += v;
    }
}

/// Linear-basis gradients and area of one triangle.
pub(crate) fn gradients(mesh: &Mesh2D, t: usize) -> ([[f64; 2]; 3], f64) {
    let [a, b, c] = mesh.triangles[t];
    let (p1, p2, p3) = (mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]);
    let det = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p3[0] - p1[0]) * (p2[1] - p1[1]);
    let g = [
        [(p2[1] - p3[1]) / det, (p3[0] - p2[0]) / det],
        [(p3[1] - p1[1]) / det, (p1[0] - p3[0]) / det],
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
    ];
    (g, 0.5 * det)
}

fn element_conductivities(mesh: &Mesh2D, sigma: &BTreeMap<String, f64>) -> Result<Vec<f64>, FemError> {
    for (region, s) in sigma {
        if !(*s > 0.0) || !s.is_finite() {
            return Err(FemError::InvalidMaterial(format!(
                "conductivity of {region} must be positive, got {s}"
            )));
        }
    }
    mesh.regions
        .iter()
        .map(|r| {
            sigma
                .get(r)
                .copied()
                .ok_or_else(|| FemError::InvalidMaterial(format!("no conductivity for region {r}")))
        })
        .collect()
}

/// Global stiffness matrix of the P1 weak form of div(sigma grad u) = 0.
///
/// Element matrices are computed under `exec`; the scatter runs in element order so
/// the result is identical for every execution strategy.
pub fn assemble_stiffness(mesh: &Mesh2D, sigma_t: &[f64], exec: Exec) -> Csr {
    let n = mesh.nodes.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for tri in &mesh.triangles {
        for &a in tri {
            adj[a].extend_from_slice(tri);
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    row_ptr.push(0);
    for row in adj.iter_mut() {
        row.sort_unstable();
        row.dedup();
        cols.extend_from_slice(row);
        row_ptr.push(cols.len());
    }
    let mut k = Csr {
        row_ptr,
        vals: vec![0.0; cols.len()],
        cols,
    };
    let local = exec.map(mesh.triangles.len(), |t| {
        let (g, area) = gradients(mesh, t);
        let mut ke = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                ke[i][j] = sigma_t[t] * area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
        ke
    });
    for (t, ke) in local.iter().enumerate() {
        let tri = mesh.triangles[t];
        for i in 0..3 {
            for j in 0..3 {
                k.add(tri[i], tri[j], ke[i][j]);
            }
        }
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    /// Preconditioned residual norm relative to the preconditioned right-hand side.
    pub relative_residual: f64,
    pub unknowns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemSolution {
    pub mesh: Mesh2D,
    pub potential: Vec<f64>,
    /// Conductivity per triangle.
    pub sigma: Vec<f64>,
    pub stats: SolverStats,
}

/// Jacobi-preconditioned conjugate gradients; returns the solution and statistics.
pub fn pcg(a: &Csr, b: &[f64], tol: f64, max_iter: usize, exec: Exec) -> Result<(Vec<f64>, SolverStats), FemError> {
    let n = a.n();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = (0..n).map(|i| inv_diag[i] * r[i]).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = exec.dot(&r, &z);
    let norm_b = rz.max(0.0).sqrt();
    let stats = |iterations, rz: f64| SolverStats {
        iterations,
        relative_residual: if norm_b > 0.0 { rz.max(0.0).sqrt() / norm_b } else { 0.0 },
        unknowns: n,
    };
    if n == 0 || norm_b == 0.0 {
        return Ok((x, stats(0, 0.0)));
    }
    for it in 0..max_iter {
        if rz.max(0.0).sqrt() <= tol * norm_b {
            return Ok((x, stats(it, rz)));
        }
        a.matvec(&p, &mut ap, exec);
        let pap = exec.dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(FemError::NotConverged {
                iterations: it,
                residual: rz.sqrt() / norm_b,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
            z[i] = inv_diag[i] * r[i];
        }
        let rz_new = exec.dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rz.max(0.0).sqrt() <= tol * norm_b {
        return Ok((x, stats(max_iter, rz)));
    }
    Err(FemError::NotConverged {
        iterations: max_iter,
        residual: rz.sqrt() / norm_b,
    })
}

/// Solve with prescribed nodal values; free nodes follow from the reduced system.
pub fn solve_fixed(
    mesh: &Mesh2D,
    sigma_t: Vec<f64>,
    fixed: &BTreeMap<usize, f64>,
    exec: Exec,
) -> Result<FemSolution, FemError> {
    if fixed.is_empty() {
        return Err(FemError::Singular);
    }
    let k = assemble_stiffness(mesh, &sigma_t, exec);
    let n = mesh.nodes.len();
    // Solve for unit-scaled data so that scaled boundary values run the same CG iterations
    // and the solution scales with them instead of stopping at a different iterate.
    let scale = fixed.values().fold(0.0f64, |m, g| m.max(g.abs()));
    let unit = if scale > 0.0 { scale } else { 1.0 };
    let mut map = vec![usize::MAX; n];
    let mut free = Vec::new();
    for i in 0..n {
        if !fixed.contains_key(&i) {
            map[i] = free.len();
            free.push(i);
        }
    }
    let mut row_ptr = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut rhs = Vec::with_capacity(free.len());
    for &i in &free {
        let (c, v) = k.row(i);
        let mut b = 0.0;
        for (&j, &a) in c.iter().zip(v) {
            match fixed.get(&j) {
                Some(g) => b -= a * (g / unit),
                None => {
                    cols.push(map[j]);
                    vals.push(a);
                }
            }
        }
        rhs.push(b);
        row_ptr.push(cols.len());
    }
    let reduced = Csr { row_ptr, cols, vals };
    let (u, stats) = pcg(&reduced, &rhs, RELATIVE_TOLERANCE, 10 * free.len().max(1), exec)?;
    let mut potential = vec![0.0; n];
    for (&i, &g) in fixed {
        potential[i] = g;
    }
    for (k, &i) in free.iter().enumerate() {
        potential[i] = u[k] * unit;
    }
    Ok(FemSolution {
        mesh: mesh.clone(),
        potential,
        sigma: sigma_t,
        stats,
    })
}

/// Electro-quasistatic potential with Dirichlet values on tagged contacts; other edges insulated.
pub fn solve_potential(
    mesh: &Mesh2D,
    sigma: &BTreeMap<String, f64>,
    dirichlet: &BTreeMap<String, f64>,
) -> Result<FemSolution, FemError> {
    solve_potential_with(mesh, sigma, dirichlet, Exec::default())
}

pub fn solve_potential_with(
    mesh: &Mesh2D,
    sigma: &BTreeMap<String, f64>,
    dirichlet: &BTreeMap<String, f64>,
    exec: Exec,
) -> Result<FemSolution, FemError> {
    let sigma_t = element_conductivities(mesh, sigma)?;
    let tags = mesh.boundary_tags();
    let mut fixed = BTreeMap::new();
    for (tag, value) in dirichlet {
        if !tags.contains(tag) {
            return Err(FemError::UnknownTag(tag.clone()));
        }
        for n in mesh.tag_nodes(tag) {
            fixed.entry(n).or_insert(*value);
        }
    }
    solve_fixed(mesh, sigma_t, &fixed, exec)
}

/// Solve with every boundary node fixed to `g`, for manufactured-solution studies.
pub fn solve_boundary_fn(
    mesh: &Mesh2D,
    sigma: &BTreeMap<String, f64>,
    g: impl Fn(f64, f64) -> f64,
) -> Result<FemSolution, FemError> {
    let sigma_t = element_conductivities(mesh, sigma)?;
    let fixed = mesh
        .boundary_nodes()
        .into_iter()
        .map(|n| (n, g(mesh.nodes[n][0], mesh.nodes[n][1])))
        .collect();
    solve_fixed(mesh, sigma_t, &fixed, Exec::default())
}

impl FemSolution {
    /// Per-triangle E = -grad(phi).
    pub fn electric_field(&self) -> Vec<[f64; 2]> {
        (0..self.mesh.triangles.len())
            .map(|t| {
                let (g, _) = gradients(&self.mesh, t);
                let tri = self.mesh.triangles[t];
                let mut e = [0.0; 2];
                for k in 0..3 {
                    e[0] -= self.potential[tri[k]] * g[k][0];
                    e[1] -= self.potential[tri[k]] * g[k][1];
                }
                e
            })
            .collect()
    }

    /// Net current through the tagged boundary per unit depth, positive along the outward normal.
    ///
    /// Uses the residual of the assembled system at the tag's nodes, so contact
    /// currents balance to solver precision.
    pub fn compute_current(&self, tag: &str) -> Result<f64, FemError> {
        let nodes = self.mesh.tag_nodes(tag);
        if nodes.is_empty() {
            return Err(FemError::UnknownTag(tag.to_string()));
        }
        let k = assemble_stiffness(&self.mesh, &self.sigma, Exec::Sequential);
        Ok(nodes.iter().map(|&i| k.row_dot(i, &self.potential)).sum())
    }

    /// L2 norm of (phi_h - exact) by 3-point quadrature per triangle.
    pub fn l2_error(&self, exact: impl Fn(f64, f64) -> f64) -> f64 {
        const BARY: [[f64; 3]; 3] = [
            [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
            [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
        ];
        let mut sum = 0.0;
        for (t, tri) in self.mesh.triangles.iter().enumerate() {
            let area = self.mesh.area(t);
            for l in BARY {
                let mut x = 0.0;
                let mut y = 0.0;
                let mut uh = 0.0;
                for k in 0..3 {
                    x += l[k] * self.mesh.nodes[tri[k]][0];
                    y += l[k] * self.mesh.nodes[tri[k]][1];
                    uh += l[k] * self.potential[tri[k]];
                }
                let d = uh - exact(x, y);
                sum += area / 3.0 * d * d;
            }
        }
        sum.sqrt()
    }

    /// Interpolated potential at a point, if it lies in the mesh.
    pub fn potential_at(&self, p: [f64; 2]) -> Option<f64> {
        let t = self.mesh.locate(p)?;
        let tri = self.mesh.triangles[t];
        let (g, _) = gradients(&self.mesh, t);
        let base = self.mesh.nodes[tri[0]];
        let mut u = self.potential[tri[0]];
        for k in 0..3 {
            u += self.potential[tri[k]] * (g[k][0] * (p[0] - base[0]) + g[k][1] * (p[1] - base[1]));
        }
        Some(u)
    }

    /// Field magnitude of the triangle containing `p`.
    pub fn field_at(&self, p: [f64; 2]) -> Option<f64> {
        let t = self.mesh.locate(p)?;
        let e = self.electric_field()[t];
        Some(e[0].hypot(e[1]))
    }

    /// `(x, |E|)` samples along the horizontal line at height `y`.
    pub fn probe_line(&self, y: f64, samples: usize) -> Vec<(f64, f64)> {
        let field = self.electric_field();
        let (x0, x1) = self
            .mesh
            .nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[0]), hi.max(p[0]))
            });
        (0..samples)
            .filter_map(|k| {
                let x = x0 + (x1 - x0) * (k as f64 + 0.5) / samples as f64;
                let t = self.mesh.locate([x, y])?;
                Some((x, field[t][0].hypot(field[t][1])))
            })
            .collect()
    }

    pub fn probe_csv(&self, y: f64, samples: usize) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "field"]).expect("in-memory write");
        for (x, e) in self.probe_line(y, samples) {
            w.write_record([format!("{x}"), format!("{e}")])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

/// Uniform field between parallel plates at distance `d` held at potential difference `v`.
pub fn analytical_plate_field(v: f64, d: f64) -> f64 {
    assert!(d > 0.0, "plate distance must be positive");
    v / d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::mesh::{generate_rect_mesh, ContactSpec, Layer, RectCad, Side};

    fn sigma(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn plate(w: f64, h: f64, hmax: f64) -> Mesh2D {
        generate_rect_mesh(
            w,
            h,
            hmax,
            &[
                ContactSpec::full("Contact1", Side::Left, h),
                ContactSpec::full("Contact2", Side::Right, h),
            ],
        )
        .unwrap()
    }

    #[test]
    fn plate_potential_is_linear() {
        let m = plate(0.022, 0.01, 0.002);
        let sol = solve_potential(
            &m,
            &sigma(&[("domain", 1.0)]),
            &sigma(&[("Contact1", 1.0), ("Contact2", 0.0)]),
        )
        .unwrap();
        for (p, u) in m.nodes.iter().zip(&sol.potential) {
            assert!((u - (1.0 - p[0] / 0.022)).abs() <= 1e-9);
        }
    }

    #[test]
    fn equal_contacts_give_constant_potential() {
        let m = plate(1.0, 1.0, 0.25);
        let sol = solve_potential(
            &m,
            &sigma(&[("domain", 2.0)]),
            &sigma(&[("Contact1", 0.7), ("Contact2", 0.7)]),
        )
        .unwrap();
        assert!(sol.potential.iter().all(|u| (u - 0.7).abs() < 1e-12));
        assert!(sol
            .electric_field()
            .iter()
            .all(|e| e[0].abs() < 1e-9 && e[1].abs() < 1e-9));
    }

    #[test]
    fn no_dirichlet_is_singular() {
        let m = plate(1.0, 1.0, 0.5);
        let err = solve_potential(&m, &sigma(&[("domain", 1.0)]), &BTreeMap::new()).unwrap_err();
        assert_eq!(err, FemError::Singular);
    }

    #[test]
    fn unknown_tag_and_region_rejected() {
        let m = plate(1.0, 1.0, 0.5);
        assert!(matches!(
            solve_potential(&m, &sigma(&[("domain", 1.0)]), &sigma(&[("Contact9", 1.0)])),
            Err(FemError::UnknownTag(_))
        ));
        assert!(matches!(
            solve_potential(&m, &sigma(&[("other", 1.0)]), &sigma(&[("Contact1", 1.0)])),
            Err(FemError::InvalidMaterial(_))
        ));
    }

    /// Two layers in series between bottom and top contacts; the 1D drop splits by resistance.
    #[test]
    fn series_layers_follow_1d_conductance() {
        let (t1, t2) = (0.003, 0.007);
        let (s1, s2) = (1.0, 1e-14);
        let cad = RectCad {
            width: 0.01,
            height: t1 + t2,
            layers: vec![
                Layer {
                    material: "Medium".into(),
                    top: t1,
                },
                Layer {
                    material: "Air".into(),
                    top: t1 + t2,
                },
            ],
            contacts: vec![
                ContactSpec::full("Bottom", Side::Bottom, 0.01),
                ContactSpec::full("Top", Side::Top, 0.01),
            ],
        };
        let m = cad.mesh(0.002, 0.002).unwrap();
        let sol = solve_potential(
            &m,
            &sigma(&[("Medium", s1), ("Air", s2)]),
            &sigma(&[("Bottom", 1.0), ("Top", 0.0)]),
        )
        .unwrap();
        let r1 = t1 / s1;
        let r2 = t2 / s2;
        let interface = 1.0 * r2 / (r1 + r2);
        let exact = |y: f64| {
            if y <= t1 {
                1.0 - (1.0 - interface) * y / t1
            } else {
                interface * (t1 + t2 - y) / t2
            }
        };
        for (p, u) in m.nodes.iter().zip(&sol.potential) {
            assert!(
                (u - exact(p[1])).abs() <= 1e-9,
                "y={} u={} exact={}",
                p[1],
                u,
                exact(p[1])
            );
        }
    }

    #[test]
    fn current_scales_with_conductivity() {
        let m = plate(0.022, 0.01, 0.002);
        let bc = sigma(&[("Contact1", 1.0), ("Contact2", 0.0)]);
        let i1 = solve_potential(&m, &sigma(&[("domain", 1.0)]), &bc)
            .unwrap()
            .compute_current("Contact1")
            .unwrap();
        let i2 = solve_potential(&m, &sigma(&[("domain", 2.0)]), &bc)
            .unwrap()
            .compute_current("Contact1")
            .unwrap();
        assert!((i1 - 0.01 / 0.022).abs() < 1e-9);
        assert!((i2 - 2.0 * i1).abs() < 1e-9);
    }

    #[test]
    fn self_comparison_has_zero_l2_error() {
        let m = plate(0.022, 0.01, 0.002);
        let sol = solve_potential(
            &m,
            &sigma(&[("domain", 1.0)]),
            &sigma(&[("Contact1", 1.0), ("Contact2", 0.0)]),
        )
        .unwrap();
        let err = sol.l2_error(|x, y| sol.potential_at([x, y]).unwrap());
        assert!(err <= 1e-9);
    }

    #[test]
    fn sequential_and_parallel_solves_agree_bitwise() {
        let m = plate(1.0, 1.0, 0.05);
        let s = sigma(&[("domain", 1.0)]);
        let bc = sigma(&[("Contact1", 1.0), ("Contact2", 0.0)]);
        let a = solve_potential_with(&m, &s, &bc, Exec::Sequential).unwrap();
        let b = solve_potential_with(&m, &s, &bc, Exec::Parallel).unwrap();
        assert_eq!(a.potential, b.potential);
    }
}
