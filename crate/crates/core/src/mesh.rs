//! Conforming triangulations of the unit square with full edge topology.
//!
//! Every edge carries one fixed unit normal. For an interior edge it is the
//! segment direction (lower vertex index to higher) rotated by +90 degrees;
//! for a boundary edge it is the outward normal. The `left` triangle is the
//! one whose outward normal coincides with the edge normal, so for each
//! element side the incidence sign `s` satisfies `s * n_edge = n_outward`.

use std::collections::HashMap;

use crate::error::{HdgError, Result};

/// Diagonal pattern used by [`build_structured_mesh`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum MeshPattern {
    /// Each cell split into two triangles along the (0,0)-(1,1) diagonal.
    RightSplit,
    /// Each cell split into four triangles through its center.
    CrissCross,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    /// Vertex indices, lower index first.
    pub vertices: [usize; 2],
    pub left: usize,
    /// `None` on the boundary.
    pub right: Option<usize>,
    pub normal: [f64; 2],
    pub length: f64,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }

    /// Triangles sharing this edge (one or two).
    pub fn elements(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.left).chain(self.right)
    }
}

/// Immutable triangulation with edge adjacency and orientation data.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    element_edges: Vec<[usize; 3]>,
    element_signs: Vec<[f64; 3]>,
}

/// Local edge `i` of a triangle is the side opposite local vertex `i`,
/// traversed counter-clockwise.
pub const LOCAL_EDGE_VERTICES: [[usize; 2]; 3] = [[1, 2], [2, 0], [0, 1]];

impl Mesh {
    /// Build topology from raw vertices and triangles. Clockwise triangles are
    /// reordered counter-clockwise; degenerate triangles and edges shared by
    /// more than two triangles are rejected.
    pub fn from_triangles(vertices: Vec<[f64; 2]>, mut triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= vertices.len() {
                    return Err(HdgError::Topology(format!(
                        "triangle {t} references vertex {v}, but only {} vertices exist",
                        vertices.len()
                    )));
                }
            }
            let area = signed_area(&vertices, tri);
            if area == 0.0 || !area.is_finite() {
                return Err(HdgError::Topology(format!("triangle {t} is degenerate")));
            }
            if area < 0.0 {
                tri.swap(1, 2);
            }
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut adjacency: Vec<Vec<usize>> = Vec::new();
        let mut element_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0usize; 3];
            for (i, lv) in LOCAL_EDGE_VERTICES.iter().enumerate() {
                let a = tri[lv[0]];
                let b = tri[lv[1]];
                let key = (a.min(b), a.max(b));
                let e = *lookup.entry(key).or_insert_with(|| {
                    adjacency.push(Vec::new());
                    adjacency.len() - 1
                });
                adjacency[e].push(t);
                local[i] = e;
            }
            element_edges.push(local);
        }

        let mut keys = vec![(0usize, 0usize); adjacency.len()];
        for (&key, &e) in &lookup {
            keys[e] = key;
        }

        let mut edges = Vec::with_capacity(adjacency.len());
        for (e, adj) in adjacency.iter().enumerate() {
            if adj.len() > 2 {
                let (a, b) = keys[e];
                return Err(HdgError::Topology(format!(
                    "non-manifold edge ({a}, {b}) shared by {} triangles",
                    adj.len()
                )));
            }
            let (lo, hi) = keys[e];
            let t = [vertices[hi][0] - vertices[lo][0], vertices[hi][1] - vertices[lo][1]];
            let length = t[0].hypot(t[1]);
            let mut normal = [-t[1] / length, t[0] / length];
            let first = adj[0];
            let first_outward = outward_normal(&vertices, &triangles[first], lo, hi);
            let first_agrees = dot(first_outward, normal) > 0.0;
            let (left, right) = match adj.get(1) {
                None => {
                    if !first_agrees {
                        normal = [-normal[0], -normal[1]];
                    }
                    (first, None)
                }
                Some(&second) if first_agrees => (first, Some(second)),
                Some(&second) => (second, Some(first)),
            };
            edges.push(Edge { vertices: [lo, hi], left, right, normal, length });
        }

        let element_signs = element_edges
            .iter()
            .enumerate()
            .map(|(t, local)| {
                let mut signs = [0.0; 3];
                for i in 0..3 {
                    signs[i] = if edges[local[i]].left == t { 1.0 } else { -1.0 };
                }
                signs
            })
            .collect();

        let mesh = Self { vertices, triangles, edges, element_edges, element_signs };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Global edge indices of the three local edges of `element`.
    pub fn element_edges(&self, element: usize) -> [usize; 3] {
        self.element_edges[element]
    }

    /// Orientation signs: `sign * edge.normal` is the outward normal of `element`.
    pub fn element_signs(&self, element: usize) -> [f64; 3] {
        self.element_signs[element]
    }

    pub fn triangle_coords(&self, element: usize) -> [[f64; 2]; 3] {
        let t = self.triangles[element];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    /// Whether local edge `local` of `element` is traversed counter-clockwise
    /// from the lower to the higher global vertex index.
    pub fn local_edge_is_ascending(&self, element: usize, local: usize) -> bool {
        let t = self.triangles[element];
        let [a, b] = LOCAL_EDGE_VERTICES[local];
        t[a] < t[b]
    }

    /// Checks every structural invariant; used after construction and in tests.
    pub fn validate(&self) -> Result<()> {
        for (t, tri) in self.triangles.iter().enumerate() {
            if signed_area(&self.vertices, tri) <= 0.0 {
                return Err(HdgError::Topology(format!("triangle {t} is not counter-clockwise")));
            }
        }
        for (e, edge) in self.edges.iter().enumerate() {
            if let Some(r) = edge.right {
                if r == edge.left {
                    return Err(HdgError::Topology(format!("edge {e} adjacent to one triangle twice")));
                }
            }
            let norm = edge.normal[0].hypot(edge.normal[1]);
            if (norm - 1.0).abs() > 1e-14 {
                return Err(HdgError::Topology(format!("edge {e} normal is not unit length")));
            }
        }
        for t in 0..self.triangles.len() {
            for i in 0..3 {
                let e = self.element_edges[t][i];
                let edge = &self.edges[e];
                if edge.left != t && edge.right != Some(t) {
                    return Err(HdgError::Topology(format!("incidence of triangle {t} is inconsistent")));
                }
                let [a, b] = LOCAL_EDGE_VERTICES[i];
                let tri = &self.triangles[t];
                let outward = outward_normal(&self.vertices, tri, tri[a], tri[b]);
                let s = self.element_signs[t][i];
                let err = (s * edge.normal[0] - outward[0]).abs().max((s * edge.normal[1] - outward[1]).abs());
                if err > 1e-14 {
                    return Err(HdgError::Topology(format!(
                        "sign of edge {e} on triangle {t} does not match the outward normal"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of connected components is assumed to be one (the unit square).
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64 + 1
    }
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn signed_area(vertices: &[[f64; 2]], tri: &[usize; 3]) -> f64 {
    let [a, b, c] = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Outward unit normal of the side (v, w) of a counter-clockwise triangle.
fn outward_normal(vertices: &[[f64; 2]], tri: &[usize; 3], v: usize, w: usize) -> [f64; 2] {
    // Orient (v, w) along the counter-clockwise traversal, then rotate by -90 degrees.
    let pos = |x: usize| tri.iter().position(|&y| y == x).unwrap();
    let (a, b) = if (pos(v) + 1) % 3 == pos(w) { (v, w) } else { (w, v) };
    let t = [vertices[b][0] - vertices[a][0], vertices[b][1] - vertices[a][1]];
    let len = t[0].hypot(t[1]);
    [t[1] / len, -t[0] / len]
}

/// Structured `n x n` triangulation of the unit square.
pub fn build_structured_mesh(n: usize, pattern: MeshPattern) -> Mesh {
    assert!(n >= 1, "mesh resolution must be positive");
    let h = 1.0 / n as f64;
    let mut vertices: Vec<[f64; 2]> = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            match pattern {
                MeshPattern::RightSplit => {
                    triangles.push([v00, v10, v11]);
                    triangles.push([v00, v11, v01]);
                }
                MeshPattern::CrissCross => {
                    let c = vertices.len();
                    vertices.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
                    triangles.push([v00, v10, c]);
                    triangles.push([v10, v11, c]);
                    triangles.push([v11, v01, c]);
                    triangles.push([v01, v00, c]);
                }
            }
        }
    }
    Mesh::from_triangles(vertices, triangles).expect("structured mesh is valid by construction")
}

/// Reads a mesh in Triangle's `.node` / `.ele` ASCII format.
///
/// Index base (0 or 1) is taken from the first node row.
pub fn import_mesh(node_text: &str, ele_text: &str) -> Result<Mesh> {
    let mut node_rows = data_rows(node_text);
    let header = node_rows
        .next()
        .ok_or_else(|| HdgError::Parse("empty .node file".into()))?;
    let n_nodes = parse_usize(header.1.first(), header.0, "node count")?;
    let mut vertices = vec![[f64::NAN; 2]; n_nodes];
    let mut base = None;
    let mut seen = 0;
    for (line, fields) in node_rows.by_ref().take(n_nodes) {
        if fields.len() < 3 {
            return Err(HdgError::Parse(format!("line {line}: expected index and two coordinates")));
        }
        let idx = parse_usize(fields.first(), line, "node index")?;
        let b = *base.get_or_insert(idx.min(1));
        let slot = idx
            .checked_sub(b)
            .filter(|&s| s < n_nodes)
            .ok_or_else(|| HdgError::Parse(format!("line {line}: node index {idx} out of range")))?;
        vertices[slot] = [parse_f64(fields[1], line)?, parse_f64(fields[2], line)?];
        seen += 1;
    }
    if seen != n_nodes || vertices.iter().any(|v| v[0].is_nan()) {
        return Err(HdgError::Parse(format!("expected {n_nodes} distinct node rows")));
    }
    let base = base.unwrap_or(0);

    let mut ele_rows = data_rows(ele_text);
    let header = ele_rows
        .next()
        .ok_or_else(|| HdgError::Parse("empty .ele file".into()))?;
    let n_tri = parse_usize(header.1.first(), header.0, "triangle count")?;
    let mut triangles = Vec::with_capacity(n_tri);
    for (line, fields) in ele_rows.take(n_tri) {
        if fields.len() < 4 {
            return Err(HdgError::Parse(format!("line {line}: expected index and three vertices")));
        }
        let mut tri = [0usize; 3];
        for c in 0..3 {
            let v = parse_usize(fields.get(c + 1), line, "vertex index")?;
            tri[c] = v
                .checked_sub(base)
                .ok_or_else(|| HdgError::Parse(format!("line {line}: vertex index {v} below base {base}")))?;
        }
        triangles.push(tri);
    }
    if triangles.len() != n_tri {
        return Err(HdgError::Parse(format!("expected {n_tri} triangle rows, found {}", triangles.len())));
    }
    Mesh::from_triangles(vertices, triangles)
}

fn data_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

fn parse_usize(field: Option<&&str>, line: usize, what: &str) -> Result<usize> {
    field
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| HdgError::Parse(format!("line {line}: invalid {what}")))
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| HdgError::Parse(format!("line {line}: invalid coordinate {field:?}")))
}

/// Mesh size and worst shape ratio (diameter over inradius).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeshStats {
    pub h: f64,
    pub shape_ratio: f64,
}

pub fn mesh_stats(mesh: &Mesh) -> MeshStats {
    let mut h: f64 = 0.0;
    let mut shape_ratio: f64 = 0.0;
    for t in 0..mesh.num_elements() {
        let lengths = mesh.element_edges(t).map(|e| mesh.edges[e].length);
        let diam = lengths.iter().copied().fold(0.0, f64::max);
        let perimeter: f64 = lengths.iter().sum();
        let area = signed_area(&mesh.vertices, &mesh.triangles[t]);
        let inradius = 2.0 * area / perimeter;
        h = h.max(diam);
        shape_ratio = shape_ratio.max(diam / inradius);
    }
    MeshStats { h, shape_ratio }
}
