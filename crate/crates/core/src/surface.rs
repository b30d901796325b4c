//! Closed triangle surface of the boundary lattice, ASCII PLY I/O, and
//! parity-ray voxelization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::boundary::BoundaryGrid;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scalar::Real;
use crate::volume::{BinaryMask, GridGeometry};

/// Triangles smaller than this (mm²) are degenerate.
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// Triangle mesh; triangles are counterclockwise seen from outside.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh<T> {
    pub vertices: Vec<Vec3<T>>,
    pub triangles: Vec<[usize; 3]>,
}

impl<T: Real> SurfaceMesh<T> {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty() || self.triangles.is_empty()
    }

    fn corners(&self, t: &[usize; 3]) -> [Vec3<T>; 3] {
        t.map(|i| self.vertices[i])
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> T {
        let [a, b, c] = self.corners(t);
        (b - a).cross(&(c - a)).norm() * T::lit(0.5)
    }

    /// Undirected edges with the number of triangles using each.
    pub fn edge_use(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    pub fn edge_count(&self) -> usize {
        self.edge_use().len()
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// Every edge borders exactly two triangles, traversed in opposite directions.
    pub fn is_closed_manifold(&self) -> bool {
        let mut directed = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                *directed.entry((t[e], t[(e + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        self.edge_use().values().all(|&c| c == 2)
            && directed
                .iter()
                .all(|(&(a, b), &c)| c == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn surface_area(&self) -> T {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }

    /// Enclosed volume; positive for outward-facing triangles.
    pub fn signed_volume(&self) -> T {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c))
            })
            .sum::<T>()
            / T::lit(6.0)
    }

    pub fn bounds(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = *self.vertices.first()?;
        Some(self.vertices.iter().fold((first, first), |(lo, hi), v| (lo.inf(v), hi.sup(v))))
    }

    /// Checks index range, triangle areas, closure and `χ = 2`.
    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let nv = self.vertices.len();
        if let Some(t) = self.triangles.iter().find(|t| t.iter().any(|&i| i >= nv)) {
            return Err(Error::InvalidParameter(format!("triangle {t:?} indexes past {nv} vertices")));
        }
        let min_area = T::lit(MIN_TRIANGLE_AREA);
        if let Some(t) = self.triangles.iter().find(|t| !(self.triangle_area(t) > min_area)) {
            return Err(Error::InvalidParameter(format!("triangle {t:?} is degenerate")));
        }
        if !self.is_closed_manifold() {
            return Err(Error::InvalidParameter("mesh is not a closed oriented 2-manifold".into()));
        }
        let chi = self.euler_characteristic();
        if chi != 2 {
            return Err(Error::InvalidParameter(format!("Euler characteristic is {chi}, expected 2")));
        }
        Ok(())
    }

    /// Rounds vertices to single precision, as PLY export does.
    pub fn quantized(&self) -> Self {
        Self {
            vertices: self
                .vertices
                .iter()
                .map(|v| v.map(|c| T::lit(c.to_f32().unwrap_or(f32::NAN) as f64)))
                .collect(),
            triangles: self.triangles.clone(),
        }
    }
}

/// Closes the boundary lattice into a tube with flat fan caps.
///
/// Vertex `i·k + j` is boundary point `(layer i, ray j)`; the two apexes
/// `n·k` and `n·k + 1` are the first and last layer centers. Each lattice
/// quad is split along its `(i, j)–(i+1, j+1)` diagonal.
pub fn triangulate<T: Real>(g: &BoundaryGrid<T>) -> Result<SurfaceMesh<T>> {
    let (n, k) = (g.layers(), g.rays());
    if n < 2 || k < 3 || g.frames.len() != n {
        return Err(Error::InvalidParameter(format!(
            "triangulation needs n ≥ 2 layers and k ≥ 3 rays, got n={n}, k={k}"
        )));
    }
    let mut vertices: Vec<Vec3<T>> = g.entries.iter().flatten().map(|e| e.point).collect();
    vertices.push(g.frames[0].center);
    vertices.push(g.frames[n - 1].center);
    let (start, end) = (n * k, n * k + 1);
    let at = |i: usize, j: usize| i * k + (j % k);

    let mut triangles = Vec::with_capacity(2 * k * n);
    for i in 0..n - 1 {
        for j in 0..k {
            let (a, b, c, d) = (at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1));
            triangles.push([a, c, b]);
            triangles.push([a, d, c]);
        }
    }
    for j in 0..k {
        triangles.push([start, at(0, j + 1), at(0, j)]);
        triangles.push([end, at(n - 1, j), at(n - 1, j + 1)]);
    }
    let mesh = SurfaceMesh { vertices, triangles };

    let min_area = T::lit(MIN_TRIANGLE_AREA);
    let mut bad: Vec<(usize, usize)> = mesh
        .triangles
        .iter()
        .filter(|t| !(mesh.triangle_area(t) > min_area))
        .flat_map(|t| t.iter().filter(|&&v| v < n * k).map(|&v| (v / k, v % k)).collect::<Vec<_>>())
        .collect();
    if !bad.is_empty() {
        bad.sort_unstable();
        bad.dedup();
        return Err(Error::DegenerateTriangles(bad));
    }
    Ok(mesh)
}

/// Writes an ASCII PLY file with float vertices and triangle faces.
pub fn export_ply<T: Real>(m: &SurfaceMesh<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ply_string(m)?).map_err(|e| Error::io(path, e))
}

pub fn ply_string<T: Real>(m: &SurfaceMesh<T>) -> Result<String> {
    if m.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", m.vertices.len());
    s.push_str("property float x\nproperty float y\nproperty float z\n");
    let _ = writeln!(s, "element face {}", m.triangles.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    let f = |c: T| c.to_f32().unwrap_or(f32::NAN);
    for v in &m.vertices {
        let _ = writeln!(s, "{} {} {}", f(v.x), f(v.y), f(v.z));
    }
    for t in &m.triangles {
        let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
    }
    Ok(s)
}

pub fn import_ply<T: Real>(path: impl AsRef<Path>) -> Result<SurfaceMesh<T>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}

pub fn parse_ply<T: Real>(text: &str) -> Result<SurfaceMesh<T>> {
    let bad = |m: String| Error::MalformedPly(m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing `ply` magic".into()));
    }
    if lines.next().map(str::trim) != Some("format ascii 1.0") {
        return Err(bad("only `format ascii 1.0` is supported".into()));
    }
    let (mut nv, mut nf) = (None, None);
    for line in lines.by_ref() {
        let mut w = line.split_whitespace();
        match (w.next(), w.next(), w.next()) {
            (Some("end_header"), _, _) => break,
            (Some("element"), Some("vertex"), Some(c)) => nv = c.parse::<usize>().ok(),
            (Some("element"), Some("face"), Some(c)) => nf = c.parse::<usize>().ok(),
            _ => {}
        }
    }
    let nv = nv.ok_or_else(|| bad("no vertex element".into()))?;
    let nf = nf.ok_or_else(|| bad("no face element".into()))?;
    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let line = lines.next().ok_or_else(|| bad(format!("missing vertex {i}")))?;
        let c: Vec<f32> = line
            .split_whitespace()
            .take(3)
            .map(|x| x.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("vertex {i}: {e}")))?;
        if c.len() != 3 {
            return Err(bad(format!("vertex {i} has {} coordinates", c.len())));
        }
        vertices.push(Vec3::new(T::lit(c[0] as f64), T::lit(c[1] as f64), T::lit(c[2] as f64)));
    }
    let mut triangles = Vec::with_capacity(nf);
    for i in 0..nf {
        let line = lines.next().ok_or_else(|| bad(format!("missing face {i}")))?;
        let c: Vec<usize> = line
            .split_whitespace()
            .map(|x| x.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("face {i}: {e}")))?;
        if c.len() != 4 || c[0] != 3 {
            return Err(bad(format!("face {i} is not a triangle")));
        }
        triangles.push([c[1], c[2], c[3]]);
    }
    Ok(SurfaceMesh { vertices, triangles })
}

/// Number of ray directions tried per voxel before giving up.
pub const RAY_DIRECTIONS: usize = 16;
const SURFACE_EPS: f64 = 1e-9;

/// `+x̂` followed by a fixed sequence of slightly tilted directions.
pub fn ray_directions<T: Real>() -> Vec<Vec3<T>> {
    const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;
    (0..RAY_DIRECTIONS)
        .map(|t| {
            if t == 0 {
                return Vec3::x_axis();
            }
            let tilt = 0.05 + 0.02 * t as f64;
            let a = GOLDEN_ANGLE * t as f64;
            let d = Vec3::new(1.0, tilt * a.cos(), tilt * a.sin());
            (d * (1.0 / d.norm())).cast()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Hit {
    Miss,
    Crossing,
    /// Crossing within tolerance of an edge or vertex, or a ray in the triangle plane.
    Grazing,
    /// The ray origin lies on the triangle.
    OnSurface,
}

fn intersect<T: Real>(orig: &Vec3<T>, dir: &Vec3<T>, tri: &[Vec3<T>; 3]) -> Hit {
    let eps = T::lit(SURFACE_EPS);
    let [v0, v1, v2] = *tri;
    let e1 = v1 - v0;
    let e2 = v2 - v0;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    let tvec = *orig - v0;
    if det.abs() <= T::lit(1e-12) * e1.norm() * e2.norm() {
        let normal = e1.cross(&e2);
        let nn = normal.norm();
        if nn > T::zero() && (tvec.dot(&normal) / nn).abs() <= eps {
            return Hit::Grazing;
        }
        return Hit::Miss;
    }
    let inv = T::one() / det;
    let u = tvec.dot(&pvec) * inv;
    if u < -eps || u > T::one() + eps {
        return Hit::Miss;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < -eps || u + v > T::one() + eps {
        return Hit::Miss;
    }
    let t = e2.dot(&qvec) * inv;
    if t.abs() <= eps {
        return Hit::OnSurface;
    }
    if t < T::zero() {
        return Hit::Miss;
    }
    if u <= eps || v <= eps || T::one() - u - v <= eps {
        return Hit::Grazing;
    }
    Hit::Crossing
}

/// Parity of crossings along `dir`, or `None` if any hit grazes an edge.
/// Points on the surface count as inside.
fn parity<T: Real, I>(p: &Vec3<T>, dir: &Vec3<T>, tris: I) -> Option<bool>
where
    I: Iterator<Item = [Vec3<T>; 3]>,
{
    let mut inside = false;
    for tri in tris {
        match intersect(p, dir, &tri) {
            Hit::Miss => {}
            Hit::Crossing => inside = !inside,
            Hit::Grazing => return None,
            Hit::OnSurface => return Some(true),
        }
    }
    Some(inside)
}

/// Labels voxel centers enclosed by a closed mesh by ray-crossing parity.
///
/// Rays start along `+x̂`; whenever a crossing falls within 1e−9 of a
/// triangle edge the voxel is retried with the next tilted direction.
/// Centers outside the mesh bounding box are outside without a ray test.
pub fn voxelize<T: Real>(m: &SurfaceMesh<T>, g: &GridGeometry<T>) -> Result<BinaryMask<T>> {
    if m.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let eps = T::lit(SURFACE_EPS);
    let (lo, hi) = m.bounds().expect("non-empty");
    let tris: Vec<[Vec3<T>; 3]> = m.triangles.iter().map(|t| m.corners(t)).collect();
    let boxes: Vec<(Vec3<T>, Vec3<T>)> = tris
        .iter()
        .map(|t| (t[0].inf(&t[1]).inf(&t[2]), t[0].sup(&t[1]).sup(&t[2])))
        .collect();
    let dirs = ray_directions::<T>();
    let [nx, ny, nz] = g.dims;

    let rows: Vec<Result<Vec<u8>>> = (0..ny * nz)
        .into_par_iter()
        .map(|row| {
            let (j, k) = (row % ny, row / ny);
            let mut out = vec![0u8; nx];
            let y0 = g.voxel_to_world(&Vec3::new(T::zero(), T::from_usize_lossy(j), T::from_usize_lossy(k)));
            if y0.y < lo.y - eps || y0.y > hi.y + eps || y0.z < lo.z - eps || y0.z > hi.z + eps {
                return Ok(out);
            }
            // triangles whose y/z extent covers this row of centers: the only +x̂ candidates
            let row_tris: Vec<usize> = (0..tris.len())
                .filter(|&t| {
                    let (a, b) = &boxes[t];
                    y0.y >= a.y - eps && y0.y <= b.y + eps && y0.z >= a.z - eps && y0.z <= b.z + eps
                })
                .collect();
            for (i, cell) in out.iter_mut().enumerate() {
                let p = g.voxel_to_world(&Vec3::new(
                    T::from_usize_lossy(i),
                    T::from_usize_lossy(j),
                    T::from_usize_lossy(k),
                ));
                if p.x < lo.x - eps || p.x > hi.x + eps {
                    continue;
                }
                let along_x = row_tris.iter().filter(|&&t| boxes[t].1.x >= p.x - eps).map(|&t| tris[t]);
                let mut result = parity(&p, &dirs[0], along_x);
                for d in &dirs[1..] {
                    if result.is_some() {
                        break;
                    }
                    result = parity(&p, d, tris.iter().copied());
                }
                match result {
                    Some(inside) => *cell = inside as u8,
                    None => {
                        return Err(Error::NoCleanRay {
                            index: g.linear_index(i, j, k),
                            tries: RAY_DIRECTIONS,
                        })
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut data = Vec::with_capacity(g.voxel_count());
    for r in rows {
        data.extend(r?);
    }
    BinaryMask::new(*g, data)
}
