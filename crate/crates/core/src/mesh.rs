//! Linear-triangle meshes of the notched tensile plate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

pub const BOTTOM: &str = "bottom";
pub const TOP: &str = "top";
pub const FREE_BOUNDARY: &str = "free_boundary";

/// Semicircular notch cut into a vertical edge of the plate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Notch {
    /// Height of the notch center on its edge [mm].
    pub center_y: f64,
    /// Notch radius [mm]; zero disables the notch.
    pub radius: f64,
}

/// Rectangle `[0, width] x [0, height]` with a notch on each vertical edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotchedPlateSpec {
    pub width: f64,
    pub height: f64,
    pub left: Notch,
    pub right: Notch,
    pub target_edge_length: f64,
}

impl Default for NotchedPlateSpec {
    fn default() -> Self {
        Self {
            width: 0.84,
            height: 1.0,
            left: Notch { center_y: 0.6, radius: 0.12 },
            right: Notch { center_y: 0.4, radius: 0.12 },
            target_edge_length: 0.02,
        }
    }
}

impl NotchedPlateSpec {
    pub fn with_edge_length(mut self, h: f64) -> Self {
        self.target_edge_length = h;
        self
    }

    /// Plain rectangle of the same size.
    pub fn rectangle(width: f64, height: f64, h: f64) -> Self {
        Self {
            width,
            height,
            left: Notch { center_y: 0.5 * height, radius: 0.0 },
            right: Notch { center_y: 0.5 * height, radius: 0.0 },
            target_edge_length: h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Geometry(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad(format!("plate size {}x{} must be positive", self.width, self.height));
        }
        if !(self.target_edge_length > 0.0) || self.target_edge_length > 0.5 * self.width.min(self.height) {
            return bad(format!("edge length {} out of range", self.target_edge_length));
        }
        for (name, n) in [("left", self.left), ("right", self.right)] {
            if n.radius < 0.0 {
                return bad(format!("{name} notch radius is negative"));
            }
            if n.radius > 0.0
                && (n.center_y - n.radius <= 0.0 || n.center_y + n.radius >= self.height || n.radius >= self.width)
            {
                return bad(format!("{name} notch reaches the top/bottom edge or spans the plate"));
            }
        }
        if self.left.radius > 0.0 && self.right.radius > 0.0 {
            let dx = self.width;
            let dy = self.left.center_y - self.right.center_y;
            if (dx * dx + dy * dy).sqrt() <= self.left.radius + self.right.radius {
                return bad("notches overlap".into());
            }
        }
        Ok(())
    }

    fn segments(len: f64, h: f64) -> usize {
        ((len / h).round() as usize).max(1)
    }

    /// Counterclockwise boundary polygon at the target resolution.
    pub fn boundary(&self) -> Vec<[f64; 2]> {
        let (w, hgt, h) = (self.width, self.height, self.target_edge_length);
        let mut pts = Vec::new();
        let line = |pts: &mut Vec<[f64; 2]>, a: [f64; 2], b: [f64; 2]| {
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let n = Self::segments(len, h);
            for i in 0..n {
                let t = i as f64 / n as f64;
                pts.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        };
        let arc = |pts: &mut Vec<[f64; 2]>, cx: f64, cy: f64, r: f64, left: bool| {
            let n = Self::segments(std::f64::consts::PI * r, h).max(4);
            for i in 0..n {
                let th = std::f64::consts::PI * i as f64 / n as f64;
                if left {
                    // from (0, cy + r) down through the plate to (0, cy - r)
                    pts.push([cx + r * th.sin(), cy + r * th.cos()]);
                } else {
                    pts.push([cx - r * th.sin(), cy - r * th.cos()]);
                }
            }
        };
        line(&mut pts, [0.0, 0.0], [w, 0.0]);
        let r = self.right;
        if r.radius > 0.0 {
            line(&mut pts, [w, 0.0], [w, r.center_y - r.radius]);
            arc(&mut pts, w, r.center_y, r.radius, false);
            line(&mut pts, [w, r.center_y + r.radius], [w, hgt]);
        } else {
            line(&mut pts, [w, 0.0], [w, hgt]);
        }
        line(&mut pts, [w, hgt], [0.0, hgt]);
        let l = self.left;
        if l.radius > 0.0 {
            line(&mut pts, [0.0, hgt], [0.0, l.center_y + l.radius]);
            arc(&mut pts, 0.0, l.center_y, l.radius, true);
            line(&mut pts, [0.0, l.center_y - l.radius], [0.0, 0.0]);
        } else {
            line(&mut pts, [0.0, hgt], [0.0, 0.0]);
        }
        pts
    }

    /// Area enclosed by the discretized boundary.
    pub fn domain_area(&self) -> f64 {
        polygon_area(&self.boundary())
    }

    /// Distance from an interior point to the nearest part of the boundary
    /// (negative outside the material).
    fn clearance(&self, x: f64, y: f64) -> f64 {
        let mut d = x.min(self.width - x).min(y).min(self.height - y);
        for (cx, n) in [(0.0, self.left), (self.width, self.right)] {
            if n.radius > 0.0 {
                let dc = ((x - cx).powi(2) + (y - n.center_y).powi(2)).sqrt() - n.radius;
                d = d.min(dc);
            }
        }
        d
    }
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut a = 0.0;
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        a += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * a
}

fn point_in_polygon(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (poly[i], poly[j]);
        if (pi[1] > y) != (pj[1] > y) && x < (pj[0] - pi[0]) * (y - pi[1]) / (pj[1] - pi[1]) + pi[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Unstructured mesh of 3-node triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<[usize; 3]>,
    pub node_sets: BTreeMap<String, Vec<usize>>,
    pub nominal_edge_length: f64,
}

impl Mesh {
    pub fn new(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 3]>,
        node_sets: BTreeMap<String, Vec<usize>>,
    ) -> Result<Self> {
        let mut mesh = Mesh { nodes, elements, node_sets, nominal_edge_length: 0.0 };
        mesh.nominal_edge_length = mesh.mean_edge_length();
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    /// Signed area (positive for counterclockwise connectivity).
    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.elements.len()).map(|e| self.element_area(e)).sum()
    }

    pub fn set(&self, name: &str) -> Result<&[usize]> {
        self.node_sets
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Mesh(format!("missing node set '{name}'")))
    }

    /// Reference-configuration shape-function gradients of element `e`, one
    /// `[dN/dx, dN/dy]` per vertex.
    pub fn shape_gradients(&self, e: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.elements[e];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let two_a = 2.0 * self.element_area(e);
        [
            [(q[1] - r[1]) / two_a, (r[0] - q[0]) / two_a],
            [(r[1] - p[1]) / two_a, (p[0] - r[0]) / two_a],
            [(p[1] - q[1]) / two_a, (q[0] - p[0]) / two_a],
        ]
    }

    pub fn centroid(&self, e: usize) -> [f64; 2] {
        let [a, b, c] = self.elements[e];
        let (p, q, r) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bounds(&self) -> [f64; 4] {
        self.nodes.iter().fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |b, p| [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])],
        )
    }

    fn mean_edge_length(&self) -> f64 {
        let mut edges: Vec<(usize, usize)> = self
            .elements
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        if edges.is_empty() {
            return 0.0;
        }
        let total: f64 = edges
            .iter()
            .map(|&(a, b)| {
                let (p, q) = (self.nodes[a], self.nodes[b]);
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
            })
            .sum();
        total / edges.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        for (e, t) in self.elements.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!("element {e} references a missing node")));
            }
            if !(self.element_area(e) > 0.0) {
                return Err(Error::Mesh(format!("element {e} is degenerate or clockwise")));
            }
        }
        for (name, set) in &self.node_sets {
            if set.iter().any(|&i| i >= n) {
                return Err(Error::Mesh(format!("node set '{name}' references a missing node")));
            }
        }
        let bottom = self.set(BOTTOM)?;
        let top = self.set(TOP)?;
        if bottom.is_empty() || top.is_empty() {
            return Err(Error::Mesh("top and bottom node sets must be non-empty".into()));
        }
        if bottom.iter().any(|b| top.contains(b)) {
            return Err(Error::Mesh("top and bottom node sets overlap".into()));
        }
        Ok(())
    }

    /// FNV-1a hash of the text form, used to tie data files to a mesh.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Writes the plain-text mesh format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "nodes {} elements {}", self.nodes.len(), self.elements.len()).unwrap();
        for p in &self.nodes {
            writeln!(s, "{:e} {:e}", p[0], p[1]).unwrap();
        }
        for t in &self.elements {
            writeln!(s, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        for (name, set) in &self.node_sets {
            writeln!(s, "set {} {}", name, set.len()).unwrap();
            for i in set {
                writeln!(s, "{i}").unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let perr = |m: &str| Error::Parse(format!("mesh file: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| perr("empty"))?.split_whitespace().collect();
        if header.len() != 4 || header[0] != "nodes" || header[2] != "elements" {
            return Err(perr("bad header"));
        }
        let nn: usize = header[1].parse().map_err(|_| perr("bad node count"))?;
        let ne: usize = header[3].parse().map_err(|_| perr("bad element count"))?;
        let mut nodes = Vec::with_capacity(nn);
        for _ in 0..nn {
            let v: Vec<f64> = lines
                .next()
                .ok_or_else(|| perr("truncated node list"))?
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr("bad coordinate"))?;
            if v.len() != 2 {
                return Err(perr("node line needs two coordinates"));
            }
            nodes.push([v[0], v[1]]);
        }
        let mut elements = Vec::with_capacity(ne);
        for _ in 0..ne {
            let v: Vec<usize> = lines
                .next()
                .ok_or_else(|| perr("truncated element list"))?
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr("bad connectivity"))?;
            if v.len() != 3 {
                return Err(perr("element line needs three indices"));
            }
            elements.push([v[0], v[1], v[2]]);
        }
        let mut node_sets = BTreeMap::new();
        while let Some(line) = lines.next() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "set" {
                return Err(perr("expected 'set <name> <count>'"));
            }
            let count: usize = parts[2].parse().map_err(|_| perr("bad set count"))?;
            let mut ids = Vec::with_capacity(count);
            for _ in 0..count {
                ids.push(
                    lines
                        .next()
                        .ok_or_else(|| perr("truncated node set"))?
                        .parse::<usize>()
                        .map_err(|_| perr("bad set index"))?,
                );
            }
            node_sets.insert(parts[1].to_string(), ids);
        }
        Mesh::new(nodes, elements, node_sets)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Triangulates the plate: boundary points at the target spacing, an
/// equilateral lattice in the interior, constrained Delaunay connectivity.
pub fn build_notched_plate(spec: &NotchedPlateSpec) -> Result<Mesh> {
    spec.validate()?;
    let h = spec.target_edge_length;
    let boundary = spec.boundary();

    let mut points: Vec<[f64; 2]> = boundary.clone();
    let rows = ((spec.height / (h * 0.75f64.sqrt())).round() as usize).max(2);
    let dy = spec.height / rows as f64;
    let cols = ((spec.width / h).round() as usize).max(2);
    let dx = spec.width / cols as f64;
    for j in 1..rows {
        let y = j as f64 * dy;
        let shift = if j % 2 == 1 { 0.5 * dx } else { 0.0 };
        for i in 0..=cols {
            let x = i as f64 * dx + shift;
            if spec.clearance(x, y) >= 0.45 * h {
                points.push([x, y]);
            }
        }
    }

    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> = ConstrainedDelaunayTriangulation::new();
    let mut handles = Vec::with_capacity(points.len());
    for p in &points {
        let v = cdt
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::Geometry(format!("triangulation insert: {e:?}")))?;
        handles.push(v);
    }
    let nb = boundary.len();
    for i in 0..nb {
        cdt.add_constraint(handles[i], handles[(i + 1) % nb]);
    }
    if cdt.num_vertices() != points.len() {
        return Err(Error::Geometry("duplicate points in triangulation input".into()));
    }
    let mut node_of = vec![usize::MAX; points.len()];
    for (k, v) in handles.iter().enumerate() {
        node_of[v.index()] = k;
    }

    let mut elements = Vec::new();
    for face in cdt.inner_faces() {
        let vs = face.vertices();
        let ids = [node_of[vs[0].fix().index()], node_of[vs[1].fix().index()], node_of[vs[2].fix().index()]];
        let c = [
            (points[ids[0]][0] + points[ids[1]][0] + points[ids[2]][0]) / 3.0,
            (points[ids[0]][1] + points[ids[1]][1] + points[ids[2]][1]) / 3.0,
        ];
        if !point_in_polygon(&boundary, c[0], c[1]) {
            continue;
        }
        let (p, q, r) = (points[ids[0]], points[ids[1]], points[ids[2]]);
        let area2 = (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]);
        if area2 > 0.0 {
            elements.push(ids);
        } else if area2 < 0.0 {
            elements.push([ids[0], ids[2], ids[1]]);
        }
    }
    // keep connectivity order independent of the triangulator's internals
    elements.sort_unstable_by_key(|t| {
        let mut s = *t;
        s.sort_unstable();
        s
    });

    let eps = 1e-12 * spec.height;
    let mut sets: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut bottom = Vec::new();
    let mut top = Vec::new();
    let mut free = Vec::new();
    for (i, p) in boundary.iter().enumerate() {
        if p[1].abs() <= eps {
            bottom.push(i);
        } else if (p[1] - spec.height).abs() <= eps {
            top.push(i);
        } else {
            free.push(i);
        }
    }
    sets.insert(BOTTOM.into(), bottom);
    sets.insert(TOP.into(), top);
    sets.insert(FREE_BOUNDARY.into(), free);
    Mesh::new(points, elements, sets)
}

/// Consistent mass matrix of the scalar linear basis (one entry per node).
pub fn assemble_mass_matrix(mesh: &Mesh) -> CscMatrix {
    let mut m = CscMatrix::from_pattern(
        mesh.num_nodes(),
        mesh.elements.iter().flat_map(|t| t.iter().flat_map(move |&a| t.iter().map(move |&b| (a, b)))),
    );
    for (e, t) in mesh.elements.iter().enumerate() {
        let a = mesh.element_area(e);
        for (i, &r) in t.iter().enumerate() {
            for (j, &c) in t.iter().enumerate() {
                let k = m.position(r, c).expect("pattern covers element");
                m.values[k] += if i == j { a / 6.0 } else { a / 12.0 };
            }
        }
    }
    m
}
