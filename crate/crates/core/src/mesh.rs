//! Polygonal meshes of planar domains.
//!
//! A [`Mesh`] is built from a vertex list and counter-clockwise cell loops.
//! Faces (edges) and the cell/face incidence are derived at construction,
//! and the whole structure is validated eagerly, so a `Mesh` value is always
//! consistent.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

/// Relative tolerance for the area-based validation checks.
const AREA_RTOL: f64 = 1e-12;

/// A mesh face (an edge in 2D).
#[derive(Clone, Debug)]
pub struct Face {
    /// End points; the face tangent points from `vertices[0]` to `vertices[1]`.
    pub vertices: [usize; 2],
    /// Adjacent cells: one for boundary faces, two for interior ones.
    pub cells: Vec<usize>,
}

impl Face {
    pub fn is_boundary(&self) -> bool {
        self.cells.len() == 1
    }
}

/// Face geometry that does not depend on the adjacent cell.
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    pub length: f64,
    pub midpoint: Point,
    /// Unit tangent from the first to the second vertex.
    pub tangent: Point,
    /// Unit normal obtained by rotating the tangent by -pi/2. For the cell
    /// that traverses the face along its tangent, this is the outward normal.
    pub normal: Point,
}

/// A face as seen from one of its cells.
#[derive(Clone, Debug)]
pub struct CellFace {
    pub face: usize,
    /// +1 if the cell loop traverses the face along its tangent, -1 otherwise.
    pub orientation: f64,
    pub length: f64,
    pub midpoint: Point,
    /// Unit normal pointing out of the cell.
    pub normal: Point,
    /// Signed distance from the cell centroid to the face line; positive for
    /// cells that are star-shaped with respect to their centroid.
    pub distance: f64,
    pub is_boundary: bool,
}

#[derive(Clone, Debug)]
pub struct CellGeometry {
    pub diameter: f64,
    pub area: f64,
    pub centroid: Point,
    pub vertices: Vec<Point>,
    /// Faces in loop order: face `i` joins vertex `i` to vertex `i + 1`.
    pub faces: Vec<CellFace>,
}

impl CellGeometry {
    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point>,
    cells: Vec<Vec<usize>>,
    faces: Vec<Face>,
    face_geometry: Vec<FaceGeometry>,
    cell_geometry: Vec<CellGeometry>,
    domain_area: f64,
}

/// On-disk representation of a polygonal mesh (`json-poly` format).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JsonPolyMesh {
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<Vec<usize>>,
}

impl Mesh {
    /// Builds a mesh from vertices and counter-clockwise cell loops, deriving
    /// faces and validating every structural invariant.
    pub fn new(vertices: Vec<Point>, cells: Vec<Vec<usize>>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidMesh("mesh has no cells".into()));
        }
        for (c, cell) in cells.iter().enumerate() {
            check_cell_loop(c, cell, &vertices)?;
        }

        let mut faces: Vec<Face> = Vec::new();
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut cell_faces: Vec<Vec<(usize, f64)>> = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let n = cell.len();
            let mut incident = Vec::with_capacity(n);
            for i in 0..n {
                let (a, b) = (cell[i], cell[(i + 1) % n]);
                let key = (a.min(b), a.max(b));
                let f = *lookup.entry(key).or_insert_with(|| {
                    faces.push(Face {
                        vertices: [a, b],
                        cells: Vec::with_capacity(2),
                    });
                    faces.len() - 1
                });
                let face = &mut faces[f];
                let orientation = if face.vertices == [a, b] { 1.0 } else { -1.0 };
                if face.cells.len() == 2 {
                    return Err(Error::InvalidCell {
                        cell: c,
                        reason: format!("face ({a}, {b}) is shared by more than two cells"),
                    });
                }
                if let Some(&other) = face.cells.first() {
                    if orientation > 0.0 {
                        return Err(Error::InvalidCell {
                            cell: c,
                            reason: format!(
                                "face ({a}, {b}) is traversed in the same direction as in cell {other}"
                            ),
                        });
                    }
                }
                face.cells.push(c);
                incident.push((f, orientation));
            }
            cell_faces.push(incident);
        }

        let face_geometry: Vec<FaceGeometry> = faces
            .iter()
            .map(|f| {
                let (a, b) = (vertices[f.vertices[0]], vertices[f.vertices[1]]);
                let d = b - a;
                let length = d.norm();
                let tangent = d / length;
                FaceGeometry {
                    length,
                    midpoint: (a + b) * 0.5,
                    tangent,
                    normal: Vector2::new(tangent.y, -tangent.x),
                }
            })
            .collect();

        let cell_geometry: Vec<CellGeometry> = cells
            .iter()
            .zip(&cell_faces)
            .map(|(cell, incident)| {
                let pts: Vec<Point> = cell.iter().map(|&v| vertices[v]).collect();
                let (area, centroid) = polygon_area_centroid(&pts);
                let mut diameter: f64 = 0.0;
                for i in 0..pts.len() {
                    for j in i + 1..pts.len() {
                        diameter = diameter.max((pts[i] - pts[j]).norm());
                    }
                }
                let faces = incident
                    .iter()
                    .map(|&(f, orientation)| {
                        let g = &face_geometry[f];
                        let normal = g.normal * orientation;
                        CellFace {
                            face: f,
                            orientation,
                            length: g.length,
                            midpoint: g.midpoint,
                            normal,
                            distance: normal.dot(&(g.midpoint - centroid)),
                            is_boundary: faces[f].is_boundary(),
                        }
                    })
                    .collect();
                CellGeometry {
                    diameter,
                    area,
                    centroid,
                    vertices: pts,
                    faces,
                }
            })
            .collect();

        // Area enclosed by the boundary, by the divergence theorem.
        let domain_area = cell_geometry
            .iter()
            .flat_map(|g| g.faces.iter())
            .filter(|cf| cf.is_boundary)
            .map(|cf| 0.5 * cf.midpoint.dot(&cf.normal) * cf.length)
            .sum::<f64>();

        let mesh = Mesh {
            vertices,
            cells,
            faces,
            face_geometry,
            cell_geometry,
            domain_area,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        let total: f64 = self.cell_geometry.iter().map(|g| g.area).sum();
        if (total - self.domain_area).abs()
            > AREA_RTOL * self.domain_area.abs().max(f64::MIN_POSITIVE)
        {
            return Err(Error::InvalidMesh(format!(
                "cell areas sum to {total} but the boundary encloses {}",
                self.domain_area
            )));
        }
        for (c, g) in self.cell_geometry.iter().enumerate() {
            let closure = g
                .faces
                .iter()
                .fold(Vector2::zeros(), |acc: Point, f| acc + f.normal * f.length);
            if closure.norm() > 1e-12 * g.diameter {
                return Err(Error::InvalidCell {
                    cell: c,
                    reason: format!(
                        "polygon is not closed (|sum |F| n_F| = {:e})",
                        closure.norm()
                    ),
                });
            }
            let star = g.faces.iter().map(|f| f.length * f.distance).sum::<f64>();
            if (star - 2.0 * g.area).abs() > AREA_RTOL * g.area {
                return Err(Error::InvalidCell {
                    cell: c,
                    reason: "sum of |F| d_TF differs from 2|T|".into(),
                });
            }
        }
        Ok(())
    }

    /// Reads a `json-poly` mesh file and validates it.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::MeshIo {
            path: path.to_owned(),
            source,
        })?;
        let raw: JsonPolyMesh = serde_json::from_str(&text).map_err(|e| Error::MeshParse {
            path: path.to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_json_poly(raw)
    }

    pub fn from_json_poly(raw: JsonPolyMesh) -> Result<Self> {
        let vertices = raw
            .vertices
            .iter()
            .map(|p| Vector2::new(p[0], p[1]))
            .collect();
        Self::new(vertices, raw.cells)
    }

    pub fn to_json_poly(&self) -> JsonPolyMesh {
        JsonPolyMesh {
            vertices: self.vertices.iter().map(|p| [p.x, p.y]).collect(),
            cells: self.cells.clone(),
        }
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn face(&self, f: usize) -> &Face {
        &self.faces[f]
    }

    pub fn face_geometry(&self, f: usize) -> &FaceGeometry {
        &self.face_geometry[f]
    }

    /// Geometry of cell `cell`.
    ///
    /// Panics if `cell` is out of bounds.
    pub fn cell_geometry(&self, cell: usize) -> &CellGeometry {
        &self.cell_geometry[cell]
    }

    pub fn try_cell_geometry(&self, cell: usize) -> Result<&CellGeometry> {
        self.cell_geometry.get(cell).ok_or_else(|| {
            Error::InvalidMesh(format!(
                "cell id {cell} out of range (mesh has {} cells)",
                self.cells.len()
            ))
        })
    }

    pub fn domain_area(&self) -> f64 {
        self.domain_area
    }

    /// Largest cell diameter.
    pub fn meshsize(&self) -> f64 {
        self.cell_geometry
            .iter()
            .map(|g| g.diameter)
            .fold(0.0, f64::max)
    }

    pub fn num_boundary_faces(&self) -> usize {
        self.faces.iter().filter(|f| f.is_boundary()).count()
    }
}

fn check_cell_loop(c: usize, cell: &[usize], vertices: &[Point]) -> Result<()> {
    let invalid = |reason: String| Error::InvalidCell { cell: c, reason };
    if cell.len() < 3 {
        return Err(invalid(format!("only {} vertices", cell.len())));
    }
    if let Some(&v) = cell.iter().find(|&&v| v >= vertices.len()) {
        return Err(invalid(format!("vertex index {v} out of range")));
    }
    for i in 0..cell.len() {
        if cell[i + 1..].contains(&cell[i]) {
            return Err(invalid(format!("vertex {} repeated", cell[i])));
        }
    }
    let pts: Vec<Point> = cell.iter().map(|&v| vertices[v]).collect();
    let (area, _) = polygon_area_centroid(&pts);
    if !(area > 0.0) {
        return Err(invalid(format!(
            "non-positive signed area {area:e} (loop must be counter-clockwise)"
        )));
    }
    // Non-adjacent edges must not intersect.
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                return Err(invalid(format!("edges {i} and {j} intersect")));
            }
        }
    }
    Ok(())
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q2 - q1, p1 - q1);
    let d2 = cross(q2 - q1, p2 - q1);
    let d3 = cross(p2 - p1, q1 - p1);
    let d4 = cross(p2 - p1, q2 - p1);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Signed area and centroid of a polygon given by its vertex loop.
pub fn polygon_area_centroid(pts: &[Point]) -> (f64, Point) {
    let n = pts.len();
    let mut area = 0.0;
    let mut c = Vector2::zeros();
    // Shift to the first vertex to limit cancellation.
    let o = pts[0];
    for i in 0..n {
        let a = pts[i] - o;
        let b = pts[(i + 1) % n] - o;
        let w = cross(a, b);
        area += w;
        c += (a + b) * w;
    }
    area *= 0.5;
    (area, o + c / (6.0 * area))
}

/// Unit square split into `n x n` squares, each cut into two triangles along
/// the diagonal joining its lower-left and upper-right corners.
pub fn generate_triangular(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidMesh(
            "subdivision count must be at least 1".into(),
        ));
    }
    let (vertices, idx) = grid_vertices(n);
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            cells.push(vec![v00, v10, v11]);
            cells.push(vec![v00, v11, v01]);
        }
    }
    Mesh::new(vertices, cells)
}

/// Unit square split into `n x n` squares.
pub fn generate_cartesian(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidMesh(
            "subdivision count must be at least 1".into(),
        ));
    }
    let (vertices, idx) = grid_vertices(n);
    let mut cells = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            cells.push(vec![
                idx(i, j),
                idx(i + 1, j),
                idx(i + 1, j + 1),
                idx(i, j + 1),
            ]);
        }
    }
    Mesh::new(vertices, cells)
}

/// Polygonal mesh of the unit square whose interior cells are hexagons: the
/// centroid dual of [`generate_triangular`]`(n)`.
pub fn generate_hexagonal(n: usize) -> Result<Mesh> {
    dual_mesh(&generate_triangular(n)?)
}

/// Centroid dual of a mesh.
///
/// Each primal vertex becomes a cell whose vertices are the centroids of the
/// surrounding cells and the midpoints of the adjacent boundary faces; corner
/// vertices of the boundary are kept as cell vertices.
pub fn dual_mesh(primal: &Mesh) -> Result<Mesh> {
    let nc = primal.num_cells();
    let mut vertices: Vec<Point> = (0..nc).map(|c| primal.cell_geometry(c).centroid).collect();
    let mut around: Vec<Vec<usize>> = vec![Vec::new(); primal.num_vertices()];
    for (c, cell) in primal.cells().iter().enumerate() {
        for &v in cell {
            around[v].push(c);
        }
    }
    let mut boundary: Vec<Vec<usize>> = vec![Vec::new(); primal.num_vertices()];
    for (f, face) in primal.faces().iter().enumerate() {
        if face.is_boundary() {
            let id = vertices.len();
            vertices.push(primal.face_geometry(f).midpoint);
            for &v in &face.vertices {
                boundary[v].push(id);
            }
        }
    }
    let mut cells = Vec::with_capacity(primal.num_vertices());
    for (v, x) in primal.vertices().iter().enumerate() {
        let mut loop_ids: Vec<usize> = around[v].iter().chain(&boundary[v]).copied().collect();
        let angle = |id: &usize| {
            let d = vertices[*id] - x;
            d.y.atan2(d.x)
        };
        loop_ids.sort_by(|a, b| angle(a).total_cmp(&angle(b)));
        if let [m0, m1] = boundary[v][..] {
            let (d0, d1) = (vertices[m0] - x, vertices[m1] - x);
            if cross(d0, d1).abs() > 1e-12 * d0.norm() * d1.norm() {
                // Corner: the loop runs from one midpoint to the other around
                // the interior and closes through the vertex itself.
                let m = loop_ids.len();
                let i = (0..m)
                    .find(|&i| {
                        let (a, b) = (loop_ids[i], loop_ids[(i + 1) % m]);
                        (a == m0 && b == m1) || (a == m1 && b == m0)
                    })
                    .ok_or_else(|| {
                        Error::InvalidMesh(format!("cannot close dual cell of vertex {v}"))
                    })?;
                loop_ids.rotate_left((i + 1) % m);
                loop_ids.push(vertices.len());
                vertices.push(*x);
            }
        }
        cells.push(loop_ids);
    }
    Mesh::new(vertices, cells)
}

fn grid_vertices(n: usize) -> (Vec<Point>, impl Fn(usize, usize) -> usize) {
    let h = 1.0 / n as f64;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vector2::new(i as f64 * h, j as f64 * h));
        }
    }
    (vertices, move |i: usize, j: usize| j * (n + 1) + i)
}
