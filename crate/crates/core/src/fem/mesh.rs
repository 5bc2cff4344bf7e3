use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::FemError;

/// Boundary side of a rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Tagged segment `[from, to]` along one side, measured from the side's lower/left end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSpec {
    pub tag: String,
    pub side: Side,
    pub from: f64,
    pub to: f64,
}

impl ContactSpec {
    pub fn full(tag: &str, side: Side, len: f64) -> Self {
        ContactSpec {
            tag: tag.to_string(),
            side,
            from: 0.0,
            to: len,
        }
    }
}

/// Horizontal material band from the previous layer's top up to `top`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub material: String,
    pub top: f64,
}

/// Parametric rectangle used as the CAD description of a desk-scale domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectCad {
    pub width: f64,
    pub height: f64,
    pub layers: Vec<Layer>,
    pub contacts: Vec<ContactSpec>,
}

pub const INSULATED: &str = "insulated";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub nodes: [usize; 2],
    pub tag: String,
}

/// Conforming triangulation with material regions and tagged boundary edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh2D {
    pub nodes: Vec<[f64; 2]>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub regions: Vec<String>,
    pub materials: Vec<String>,
    pub boundary: Vec<BoundaryEdge>,
    pub hmax: f64,
    pub hmin: f64,
}

impl RectCad {
    pub fn validate(&self) -> Result<(), FemError> {
        let bad = |m: String| Err(FemError::InvalidGeometry(m));
        if !(self.width > 0.0 && self.height > 0.0) || !self.width.is_finite() || !self.height.is_finite() {
            return bad(format!("domain {}x{} must be positive", self.width, self.height));
        }
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        let mut prev = 0.0;
        for l in &self.layers {
            if !(l.top > prev) {
                return bad(format!("layer {} top {} does not increase", l.material, l.top));
            }
            prev = l.top;
        }
        if prev < self.height {
            return bad(format!("layers end at {prev}, below domain height {}", self.height));
        }
        for c in &self.contacts {
            let len = self.side_length(c.side);
            if !(c.from >= 0.0 && c.to <= len + 1e-12 && c.from < c.to) {
                return bad(format!(
                    "contact {} [{}, {}] lies off the {:?} boundary of length {len}",
                    c.tag, c.from, c.to, c.side
                ));
            }
        }
        Ok(())
    }

    pub fn side_length(&self, side: Side) -> f64 {
        match side {
            Side::Left | Side::Right => self.height,
            Side::Bottom | Side::Top => self.width,
        }
    }

    pub fn materials(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.layers {
            if !out.contains(&l.material) {
                out.push(l.material.clone());
            }
        }
        out
    }

    pub fn contact_tags(&self) -> BTreeSet<String> {
        self.contacts.iter().map(|c| c.tag.clone()).collect()
    }

    /// Structured crossed-triangle mesh with every element edge no longer than `hmax`.
    ///
    /// Grid lines are graded geometrically from `hmin` next to contact ends that lie
    /// inside a side; with `hmin == hmax` the grid is uniform per interval.
    pub fn mesh(&self, hmax: f64, hmin: f64) -> Result<Mesh2D, FemError> {
        self.validate()?;
        if !(hmax > 0.0) || !hmax.is_finite() {
            return Err(FemError::InvalidGeometry(format!("hmax {hmax} must be positive")));
        }
        if hmax > self.width.hypot(self.height) {
            return Err(FemError::InvalidGeometry(format!(
                "hmax {hmax} exceeds the domain diagonal {}",
                self.width.hypot(self.height)
            )));
        }
        if !(hmin > 0.0 && hmin <= hmax) {
            return Err(FemError::InvalidGeometry(format!(
                "hmin {hmin} must lie in (0, {hmax}]"
            )));
        }
        let mut xb = vec![0.0, self.width];
        let mut yb = vec![0.0, self.height];
        for l in &self.layers {
            if l.top < self.height {
                yb.push(l.top);
            }
        }
        for c in &self.contacts {
            let len = self.side_length(c.side);
            let (along, across, wall) = match c.side {
                Side::Left => (&mut yb, &mut xb, 0.0),
                Side::Right => (&mut yb, &mut xb, self.width),
                Side::Bottom => (&mut xb, &mut yb, 0.0),
                Side::Top => (&mut xb, &mut yb, self.height),
            };
            along.extend([c.from, c.to]);
            // Contact ends inside a side are field singularities: grade from hmin up to hmax.
            for tip in [c.from, c.to].into_iter().filter(|&t| t > 1e-12 && t < len - 1e-12) {
                let across_len = self.side_length(match c.side {
                    Side::Left | Side::Right => Side::Bottom,
                    Side::Bottom | Side::Top => Side::Left,
                });
                let mut d = hmin;
                while d < hmax {
                    along.extend([tip - d, tip + d].into_iter().filter(|&p| p > 0.0 && p < len));
                    let inward = if wall == 0.0 { d } else { wall - d };
                    if inward > 0.0 && inward < across_len {
                        across.push(inward);
                    }
                    d *= 2.0;
                }
            }
        }
        let xs = subdivide(xb, hmax);
        let ys = subdivide(yb, hmax);
        let (nx, ny) = (xs.len() - 1, ys.len() - 1);

        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
        for &y in &ys {
            for &x in &xs {
                nodes.push([x, y]);
            }
        }
        let grid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(4 * nx * ny);
        let mut regions = Vec::with_capacity(4 * nx * ny);
        for j in 0..ny {
            let yc = 0.5 * (ys[j] + ys[j + 1]);
            let material = &self
                .layers
                .iter()
                .find(|l| yc < l.top)
                .unwrap_or(self.layers.last().expect("validated"))
                .material;
            for i in 0..nx {
                let c = nodes.len();
                nodes.push([0.5 * (xs[i] + xs[i + 1]), yc]);
                let (a, b, d, e) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
                for tri in [[a, b, c], [b, d, c], [d, e, c], [e, a, c]] {
                    triangles.push(tri);
                    regions.push(material.clone());
                }
            }
        }

        let mut boundary = Vec::new();
        let mut push_side = |side: Side, pts: Vec<(usize, f64)>| {
            for w in pts.windows(2) {
                let mid = 0.5 * (w[0].1 + w[1].1);
                let tag = self
                    .contacts
                    .iter()
                    .find(|c| c.side == side && c.from <= mid && mid <= c.to)
                    .map(|c| c.tag.clone())
                    .unwrap_or_else(|| INSULATED.to_string());
                boundary.push(BoundaryEdge {
                    nodes: [w[0].0, w[1].0],
                    tag,
                });
            }
        };
        push_side(Side::Bottom, (0..=nx).map(|i| (grid(i, 0), xs[i])).collect());
        push_side(Side::Right, (0..=ny).map(|j| (grid(nx, j), ys[j])).collect());
        push_side(Side::Top, (0..=nx).rev().map(|i| (grid(i, ny), xs[i])).collect());
        push_side(Side::Left, (0..=ny).rev().map(|j| (grid(0, j), ys[j])).collect());

        Ok(Mesh2D {
            nodes,
            triangles,
            regions,
            materials: self.materials(),
            boundary,
            hmax,
            hmin,
        })
    }
}

/// Breakpoints sorted and deduplicated, each interval split into equal parts no longer than `h`.
fn subdivide(mut breaks: Vec<f64>, h: f64) -> Vec<f64> {
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let mut out = vec![breaks[0]];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        let parts = ((len / h) - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=parts {
            out.push(if k == parts {
                w[1]
            } else {
                w[0] + len * k as f64 / parts as f64
            });
        }
    }
    out
}

/// Single-material rectangle with the given contact segments.
pub fn generate_rect_mesh(width: f64, height: f64, hmax: f64, contacts: &[ContactSpec]) -> Result<Mesh2D, FemError> {
    RectCad {
        width,
        height,
        layers: vec![Layer {
            material: "domain".into(),
            top: height,
        }],
        contacts: contacts.to_vec(),
    }
    .mesh(hmax, hmax)
}

impl Mesh2D {
    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    pub fn boundary_tags(&self) -> BTreeSet<String> {
        self.boundary.iter().map(|e| e.tag.clone()).collect()
    }

    /// Nodes lying on edges with the given tag, ascending.
    pub fn tag_nodes(&self, tag: &str) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .boundary
            .iter()
            .filter(|e| e.tag == tag)
            .flat_map(|e| e.nodes)
            .collect();
        set.into_iter().collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.boundary.iter().flat_map(|e| e.nodes).collect();
        set.into_iter().collect()
    }

    /// Longest element edge.
    pub fn longest_edge(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| {
                let (p, q) = (self.nodes[a], self.nodes[b]);
                (q[0] - p[0]).hypot(q[1] - p[1])
            })
            .fold(0.0, f64::max)
    }

    /// Verify conformity, orientation, tagging and region invariants.
    pub fn check(&self) -> Result<(), FemError> {
        let bad = |m: String| Err(FemError::InvalidMesh(m));
        if self.triangles.len() != self.regions.len() {
            return bad("one region per triangle required".into());
        }
        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&n| n >= self.nodes.len()) {
                return bad(format!("triangle {t} references a missing node"));
            }
            if !(self.area(t) > 0.0) {
                return bad(format!("triangle {t} has non-positive area"));
            }
            if !self.materials.contains(&self.regions[t]) {
                return bad(format!("triangle {t} region {} is not declared", self.regions[t]));
            }
            for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut tagged: HashMap<(usize, usize), usize> = HashMap::new();
        for e in &self.boundary {
            let k = (e.nodes[0].min(e.nodes[1]), e.nodes[0].max(e.nodes[1]));
            *tagged.entry(k).or_default() += 1;
        }
        for (k, count) in &edges {
            match (*count, tagged.get(k).copied().unwrap_or(0)) {
                (1, 1) | (2, 0) => {}
                (1, 0) => return bad(format!("boundary edge {k:?} is untagged")),
                (c, t) => return bad(format!("edge {k:?} shared by {c} triangles and tagged {t} times")),
            }
        }
        if tagged.keys().any(|k| !edges.contains_key(k)) {
            return bad("tagged edge not in the triangulation".into());
        }
        Ok(())
    }

    /// Split every triangle into four through its edge midpoints.
    pub fn refine_uniform(&self) -> Mesh2D {
        let mut nodes = self.nodes.clone();
        let mut mids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *mids.entry(key).or_insert_with(|| {
                let (p, q) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                nodes.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut regions = Vec::with_capacity(4 * self.triangles.len());
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let ab = mid(a, b, &mut nodes);
            let bc = mid(b, c, &mut nodes);
            let ca = mid(c, a, &mut nodes);
            for tri in [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]] {
                triangles.push(tri);
                regions.push(self.regions[t].clone());
            }
        }
        let mut boundary = Vec::with_capacity(2 * self.boundary.len());
        for e in &self.boundary {
            let m = mid(e.nodes[0], e.nodes[1], &mut nodes);
            boundary.push(BoundaryEdge {
                nodes: [e.nodes[0], m],
                tag: e.tag.clone(),
            });
            boundary.push(BoundaryEdge {
                nodes: [m, e.nodes[1]],
                tag: e.tag.clone(),
            });
        }
        Mesh2D {
            nodes,
            triangles,
            regions,
            materials: self.materials.clone(),
            boundary,
            hmax: self.hmax / 2.0,
            hmin: self.hmin / 2.0,
        }
    }

    /// Triangle containing `p`, with a small tolerance for points on edges.
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        self.triangles.iter().position(|&[a, b, c]| {
            let (x1, x2, x3) = (self.nodes[a], self.nodes[b], self.nodes[c]);
            let det = (x2[0] - x1[0]) * (x3[1] - x1[1]) - (x3[0] - x1[0]) * (x2[1] - x1[1]);
            let l2 = ((p[0] - x1[0]) * (x3[1] - x1[1]) - (x3[0] - x1[0]) * (p[1] - x1[1])) / det;
            let l3 = ((x2[0] - x1[0]) * (p[1] - x1[1]) - (p[0] - x1[0]) * (x2[1] - x1[1])) / det;
            let tol = -1e-12;
            l2 >= tol && l3 >= tol && 1.0 - l2 - l3 >= tol
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn unit_square_half_spacing() {
        let m = plate(1.0, 1.0, 0.5);
        assert!(m.triangles.len() >= 8);
        assert_eq!(m.triangles.len(), 16);
        m.check().unwrap();
        assert!(m.longest_edge() <= 0.5 + 1e-15);
    }

    #[test]
    fn area_sums_to_domain() {
        let m = plate(0.022, 0.0137, 0.003);
        assert!((m.total_area() - 0.022 * 0.0137).abs() < 1e-12);
        let r = m.refine_uniform();
        assert!((r.total_area() - 0.022 * 0.0137).abs() < 1e-12);
    }

    #[test]
    fn refinement_quadruples_and_inherits_tags() {
        let m = plate(1.0, 1.0, 0.5);
        let r = m.refine_uniform();
        assert_eq!(r.triangles.len(), 4 * m.triangles.len());
        assert_eq!(r.boundary.len(), 2 * m.boundary.len());
        assert_eq!(r.boundary_tags(), m.boundary_tags());
        assert_eq!(r.hmax, 0.25);
        r.check().unwrap();
        let count = |mesh: &Mesh2D, tag: &str| mesh.boundary.iter().filter(|e| e.tag == tag).count();
        assert_eq!(count(&r, "Contact1"), 2 * count(&m, "Contact1"));
    }

    #[test]
    fn off_boundary_contact_rejected() {
        let err = generate_rect_mesh(
            1.0,
            1.0,
            0.5,
            &[ContactSpec {
                tag: "C".into(),
                side: Side::Left,
                from: 0.5,
                to: 1.5,
            }],
        );
        assert!(matches!(err, Err(FemError::InvalidGeometry(_))));
    }

    #[test]
    fn oversized_hmax_rejected() {
        assert!(generate_rect_mesh(1.0, 1.0, 2.0, &[]).is_err());
    }

    #[test]
    fn partial_contacts_align_with_nodes() {
        let cad = RectCad {
            width: 0.022,
            height: 0.023,
            layers: vec![
                Layer {
                    material: "Medium".into(),
                    top: 0.00315,
                },
                Layer {
                    material: "Air".into(),
                    top: 0.023,
                },
            ],
            contacts: vec![
                ContactSpec {
                    tag: "Contact1".into(),
                    side: Side::Left,
                    from: 0.001,
                    to: 0.023,
                },
                ContactSpec {
                    tag: "Contact2".into(),
                    side: Side::Right,
                    from: 0.001,
                    to: 0.023,
                },
            ],
        };
        let m = cad.mesh(0.004, 0.001).unwrap();
        m.check().unwrap();
        let tagged: f64 = m
            .boundary
            .iter()
            .filter(|e| e.tag == "Contact1")
            .map(|e| (m.nodes[e.nodes[1]][1] - m.nodes[e.nodes[0]][1]).abs())
            .sum();
        assert!((tagged - 0.022).abs() < 1e-12);
        assert!(m.regions.iter().any(|r| r == "Medium"));
    }
}
