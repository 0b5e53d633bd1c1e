//! Conforming simplicial meshes of the unit box and the backward-facing step,
//! uniform red refinement, and per-element geometry.
//!
//! Local facet `i` of an element is the facet opposite local vertex `i`.
//! Facets are identified by their sorted vertex tuple and numbered in
//! lexicographic order of that tuple, so numbering is deterministic.

use std::collections::HashMap;
use std::io::{self, Write};

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("unsupported dimension {0}, expected 2 or 3")]
    UnsupportedDimension(usize),
    #[error("target mesh size must be positive and finite, got {0}")]
    InvalidSize(f64),
    #[error("number of cells per unit length must be positive")]
    NoCells,
    #[error("element {0} has zero measure")]
    Degenerate(usize),
}

pub(crate) fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

fn centroid(points: &[Point]) -> Point {
    let mut c = [0.0; 3];
    for p in points {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    let n = points.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Measure of a simplex given by `dim + 1` vertices.
fn simplex_measure(dim: usize, v: &[Point]) -> f64 {
    let a = sub(&v[1], &v[0]);
    let b = sub(&v[2], &v[0]);
    if dim == 2 {
        0.5 * (a[0] * b[1] - a[1] * b[0]).abs()
    } else {
        let c = sub(&v[3], &v[0]);
        dot(&cross(&a, &b), &c).abs() / 6.0
    }
}

/// Geometry of one facet: its vertices, measure and barycenter.
#[derive(Clone, Debug)]
pub struct FacetGeometry {
    pub dim: usize,
    pub vertices: [Point; 3],
    pub measure: f64,
    pub barycenter: Point,
}

impl FacetGeometry {
    pub fn from_vertices(dim: usize, verts: &[Point]) -> FacetGeometry {
        let mut vertices = [[0.0; 3]; 3];
        vertices[..dim].copy_from_slice(&verts[..dim]);
        let measure = if dim == 2 {
            norm(&sub(&verts[1], &verts[0]))
        } else {
            0.5 * norm(&cross(&sub(&verts[1], &verts[0]), &sub(&verts[2], &verts[0])))
        };
        FacetGeometry {
            dim,
            vertices,
            measure,
            barycenter: centroid(&verts[..dim]),
        }
    }
}

/// Geometry of one simplex with outward unit normals on each local facet.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub dim: usize,
    pub vertices: [Point; 4],
    pub measure: f64,
    pub barycenter: Point,
    pub facet_barycenters: [Point; 4],
    pub facet_measures: [f64; 4],
    pub normals: [Point; 4],
}

impl ElementGeometry {
    pub fn from_vertices(dim: usize, verts: &[Point]) -> ElementGeometry {
        let nv = dim + 1;
        let mut vertices = [[0.0; 3]; 4];
        vertices[..nv].copy_from_slice(&verts[..nv]);
        let mut facet_barycenters = [[0.0; 3]; 4];
        let mut facet_measures = [0.0; 4];
        let mut normals = [[0.0; 3]; 4];
        for i in 0..nv {
            let others: Vec<Point> = (0..nv).filter(|&j| j != i).map(|j| vertices[j]).collect();
            let f = FacetGeometry::from_vertices(dim, &others);
            let mut n = if dim == 2 {
                let t = sub(&others[1], &others[0]);
                [t[1], -t[0], 0.0]
            } else {
                cross(&sub(&others[1], &others[0]), &sub(&others[2], &others[0]))
            };
            let len = norm(&n);
            if len > 0.0 {
                for c in n.iter_mut() {
                    *c /= len;
                }
            }
            if dot(&n, &sub(&f.barycenter, &vertices[i])) < 0.0 {
                for c in n.iter_mut() {
                    *c = -*c;
                }
            }
            facet_barycenters[i] = f.barycenter;
            facet_measures[i] = f.measure;
            normals[i] = n;
        }
        ElementGeometry {
            dim,
            vertices,
            measure: simplex_measure(dim, &vertices[..nv]),
            barycenter: centroid(&vertices[..nv]),
            facet_barycenters,
            facet_measures,
            normals,
        }
    }

    pub fn n_facets(&self) -> usize {
        self.dim + 1
    }

    /// Local length scale `|K| / |F_i|` attached to facet `i`.
    pub fn h_facet(&self, i: usize) -> f64 {
        self.measure / self.facet_measures[i]
    }

    /// Largest edge length.
    pub fn diameter(&self) -> f64 {
        let nv = self.dim + 1;
        let mut h: f64 = 0.0;
        for i in 0..nv {
            for j in i + 1..nv {
                h = h.max(norm(&sub(&self.vertices[i], &self.vertices[j])));
            }
        }
        h
    }

    /// Barycentric coordinates of `x`, entry `i` belonging to vertex `i`.
    pub fn barycentric(&self, x: &Point) -> [f64; 4] {
        let mut lam = [0.0; 4];
        let d = self.dim as f64;
        for i in 0..=self.dim {
            let height = d * self.measure / self.facet_measures[i];
            lam[i] = dot(&sub(&self.facet_barycenters[i], x), &self.normals[i]) / height;
        }
        lam
    }

    /// Values at `x` of the affine functions that equal one at facet barycenter
    /// `i` and vanish at the other facet barycenters.
    pub fn facet_basis(&self, x: &Point) -> [f64; 4] {
        let lam = self.barycentric(x);
        let d = self.dim as f64;
        let mut phi = [0.0; 4];
        for i in 0..=self.dim {
            phi[i] = 1.0 - d * lam[i];
        }
        phi
    }

    /// Gradient of the affine function taking `values[i]` at facet barycenter `i`.
    pub fn facet_gradient(&self, values: &[f64]) -> Point {
        let mut g = [0.0; 3];
        for i in 0..=self.dim {
            let s = values[i] * self.facet_measures[i] / self.measure;
            for k in 0..3 {
                g[k] += s * self.normals[i][k];
            }
        }
        g
    }

    /// Physical point with the given barycentric coordinates.
    pub fn point_at(&self, lam: &[f64]) -> Point {
        let mut x = [0.0; 3];
        for i in 0..=self.dim {
            for k in 0..3 {
                x[k] += lam[i] * self.vertices[i][k];
            }
        }
        x
    }
}

/// How a fine facet sits inside the next coarser mesh.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FacetParent {
    InteriorOfCoarseElement(usize),
    OnCoarseFacet(usize),
}

/// One conforming simplicial mesh.
#[derive(Clone, Debug)]
pub struct MeshLevel {
    dim: usize,
    vertices: Vec<Point>,
    elements: Vec<usize>,
    facets: Vec<usize>,
    elem_facets: Vec<usize>,
    facet_elems: Vec<[usize; 2]>,
}

const NONE: usize = usize::MAX;

impl MeshLevel {
    /// Builds facet connectivity for the given elements (`dim + 1` vertex
    /// indices each, flattened).
    pub fn from_elements(dim: usize, vertices: Vec<Point>, elements: Vec<usize>) -> Result<MeshLevel, MeshError> {
        if dim != 2 && dim != 3 {
            return Err(MeshError::UnsupportedDimension(dim));
        }
        let nv = dim + 1;
        let n_elem = elements.len() / nv;
        for e in 0..n_elem {
            let pts: Vec<Point> = elements[e * nv..(e + 1) * nv].iter().map(|&v| vertices[v]).collect();
            if simplex_measure(dim, &pts) <= 0.0 {
                return Err(MeshError::Degenerate(e));
            }
        }

        let mut keyed: Vec<([u32; 3], u32, u8)> = Vec::with_capacity(n_elem * nv);
        for e in 0..n_elem {
            let el = &elements[e * nv..(e + 1) * nv];
            for i in 0..nv {
                let mut key = [u32::MAX; 3];
                let mut k = 0;
                for (j, &v) in el.iter().enumerate() {
                    if j != i {
                        key[k] = v as u32;
                        k += 1;
                    }
                }
                key[..dim].sort_unstable();
                keyed.push((key, e as u32, i as u8));
            }
        }
        keyed.sort_unstable();

        let mut facets = Vec::new();
        let mut facet_elems: Vec<[usize; 2]> = Vec::new();
        let mut elem_facets = vec![NONE; n_elem * nv];
        let mut idx = 0;
        while idx < keyed.len() {
            let key = keyed[idx].0;
            let f = facet_elems.len();
            facets.extend(key[..dim].iter().map(|&v| v as usize));
            let mut pair = [NONE, NONE];
            let mut k = 0;
            while idx < keyed.len() && keyed[idx].0 == key {
                let (_, e, i) = keyed[idx];
                if k < 2 {
                    pair[k] = e as usize;
                }
                k += 1;
                elem_facets[e as usize * nv + i as usize] = f;
                idx += 1;
            }
            assert!(k <= 2, "facet shared by more than two elements");
            facet_elems.push(pair);
        }

        Ok(MeshLevel {
            dim,
            vertices,
            elements,
            facets,
            elem_facets,
            facet_elems,
        })
    }

    /// Unit square or cube split into `n` cells per direction, each square cut
    /// into two triangles along its lower-left to upper-right diagonal and each
    /// cube into six tetrahedra around its main diagonal.
    pub fn unit_box_cells(dim: usize, n: usize) -> Result<MeshLevel, MeshError> {
        if n == 0 {
            return Err(MeshError::NoCells);
        }
        let cells = box_cells(dim, n, n, n, |_| true)?;
        structured(dim, [n, n, n], 1.0 / n as f64, &cells)
    }

    /// Unit box with the coarsest structured mesh whose element diameters do
    /// not exceed `target_h`.
    pub fn unit_box(dim: usize, target_h: f64) -> Result<MeshLevel, MeshError> {
        let n = cells_for(dim, target_h, 1.0)?;
        Self::unit_box_cells(dim, n)
    }

    /// Backward-facing step `([0.5,5]x[0,0.5]) u ([0,5]x[0.5,1])`, extruded over
    /// `[0,1]` in 3D, with `k` cells per length 0.5.
    pub fn backward_step_cells(dim: usize, k: usize) -> Result<MeshLevel, MeshError> {
        if k == 0 {
            return Err(MeshError::NoCells);
        }
        let (nx, ny, nz) = (10 * k, 2 * k, 2 * k);
        let cells = box_cells(dim, nx, ny, nz, |c| !(c[0] < k && c[1] < k))?;
        structured(dim, [nx, ny, nz], 0.5 / k as f64, &cells)
    }

    pub fn backward_step(dim: usize, target_h: f64) -> Result<MeshLevel, MeshError> {
        let k = cells_for(dim, target_h, 0.5)?;
        Self::backward_step_cells(dim, k)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn n_facets(&self) -> usize {
        self.facet_elems.len()
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elements[e * nv..(e + 1) * nv]
    }

    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f * self.dim..(f + 1) * self.dim]
    }

    /// Global facet numbers of the local facets of element `e`.
    pub fn element_facets(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elem_facets[e * nv..(e + 1) * nv]
    }

    /// Elements sharing facet `f`; the second is `None` on the boundary.
    pub fn facet_elements(&self, f: usize) -> (usize, Option<usize>) {
        let [a, b] = self.facet_elems[f];
        (a, if b == NONE { None } else { Some(b) })
    }

    pub fn is_boundary_facet(&self, f: usize) -> bool {
        self.facet_elems[f][1] == NONE
    }

    /// `+1` if `e` is the first element listed for its local facet `i`, `-1`
    /// otherwise. Gives each facet a global orientation.
    pub fn facet_sign(&self, e: usize, i: usize) -> f64 {
        let f = self.element_facets(e)[i];
        if self.facet_elems[f][0] == e {
            1.0
        } else {
            -1.0
        }
    }

    pub fn element_geometry(&self, e: usize) -> ElementGeometry {
        let mut pts = [[0.0; 3]; 4];
        for (k, &v) in self.element(e).iter().enumerate() {
            pts[k] = self.vertices[v];
        }
        ElementGeometry::from_vertices(self.dim, &pts[..=self.dim])
    }

    pub fn facet_geometry(&self, f: usize) -> FacetGeometry {
        let mut pts = [[0.0; 3]; 3];
        for (k, &v) in self.facet(f).iter().enumerate() {
            pts[k] = self.vertices[v];
        }
        FacetGeometry::from_vertices(self.dim, &pts[..self.dim])
    }

    pub fn facet_barycenter(&self, f: usize) -> Point {
        let pts: Vec<Point> = self.facet(f).iter().map(|&v| self.vertices[v]).collect();
        centroid(&pts)
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        let pts: Vec<Point> = self.element(e).iter().map(|&v| self.vertices[v]).collect();
        simplex_measure(self.dim, &pts)
    }

    pub fn total_measure(&self) -> f64 {
        (0..self.n_elements()).map(|e| self.element_measure(e)).sum()
    }

    /// Largest element diameter.
    pub fn max_diameter(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| self.element_geometry(e).diameter())
            .fold(0.0, f64::max)
    }

    /// Plain-text dump: one `v x y [z]` line per vertex, then one
    /// `e i j k [l]` line per element.
    pub fn write_plain<W: Write>(&self, mut w: W) -> io::Result<()> {
        for p in &self.vertices {
            if self.dim == 2 {
                writeln!(w, "v {} {}", p[0], p[1])?;
            } else {
                writeln!(w, "v {} {} {}", p[0], p[1], p[2])?;
            }
        }
        for e in 0..self.n_elements() {
            let ids: Vec<String> = self.element(e).iter().map(|v| v.to_string()).collect();
            writeln!(w, "e {}", ids.join(" "))?;
        }
        Ok(())
    }

    /// Uniform red refinement. Children of coarse element `e` are the fine
    /// elements `e * c .. (e + 1) * c` with `c = 2^dim`. Returns the refined
    /// mesh and, per fine facet, its position relative to this mesh.
    pub fn refine(&self) -> (MeshLevel, Vec<FacetParent>) {
        let dim = self.dim;
        let nv = dim + 1;
        let mut vertices = self.vertices.clone();
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let (edges, children, masks) = red_pattern(dim);
        let n_children = children.len() / nv;
        let mut elements = Vec::with_capacity(self.elements.len() * n_children);
        let mut local = vec![0usize; nv + edges.len()];
        for e in 0..self.n_elements() {
            let el = self.element(e);
            local[..nv].copy_from_slice(el);
            for (k, &(a, b)) in edges.iter().enumerate() {
                let key = (el[a].min(el[b]), el[a].max(el[b]));
                let id = *midpoints.entry(key).or_insert_with(|| {
                    let (p, q) = (self.vertices[key.0], self.vertices[key.1]);
                    vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]);
                    vertices.len() - 1
                });
                local[nv + k] = id;
            }
            elements.extend(children.iter().map(|&c| local[c]));
        }
        let fine = MeshLevel::from_elements(dim, vertices, elements).expect("red refinement keeps elements non-degenerate");

        let full = (1u32 << nv) - 1;
        let mut parents = vec![FacetParent::InteriorOfCoarseElement(NONE); fine.n_facets()];
        for fe in 0..fine.n_elements() {
            let ce = fe / n_children;
            let c = fe % n_children;
            let child = &children[c * nv..(c + 1) * nv];
            for j in 0..nv {
                let union = (0..nv).filter(|&k| k != j).fold(0u32, |acc, k| acc | masks[child[k]]);
                let f = fine.element_facets(fe)[j];
                parents[f] = if union == full {
                    FacetParent::InteriorOfCoarseElement(ce)
                } else {
                    let i = (!union & full).trailing_zeros() as usize;
                    FacetParent::OnCoarseFacet(self.element_facets(ce)[i])
                };
            }
        }
        (fine, parents)
    }
}

/// Local edges, child connectivity in local point ids (vertices first, then
/// edge midpoints), and for each local point the set of coarse vertices it is
/// an average of.
fn red_pattern(dim: usize) -> (Vec<(usize, usize)>, Vec<usize>, Vec<u32>) {
    if dim == 2 {
        let edges = vec![(0, 1), (0, 2), (1, 2)];
        let children = vec![0, 3, 4, 3, 1, 5, 4, 5, 2, 3, 5, 4];
        let masks = vec![1, 2, 4, 3, 5, 6];
        (edges, children, masks)
    } else {
        let edges = vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        // Bey's subdivision; keeps the vertex ordering of Kuhn simplices.
        let children = vec![
            0, 4, 5, 6, //
            4, 1, 7, 8, //
            5, 7, 2, 9, //
            6, 8, 9, 3, //
            4, 5, 6, 8, //
            4, 5, 7, 8, //
            5, 6, 8, 9, //
            5, 7, 8, 9,
        ];
        let masks = vec![1, 2, 4, 8, 3, 5, 9, 6, 10, 12];
        (edges, children, masks)
    }
}

fn cells_for(dim: usize, target_h: f64, unit: f64) -> Result<usize, MeshError> {
    if dim != 2 && dim != 3 {
        return Err(MeshError::UnsupportedDimension(dim));
    }
    if !(target_h > 0.0 && target_h.is_finite()) {
        return Err(MeshError::InvalidSize(target_h));
    }
    let n = ((dim as f64).sqrt() * unit / target_h * (1.0 - 1e-12)).ceil();
    Ok((n as usize).max(1))
}

fn box_cells(dim: usize, nx: usize, ny: usize, nz: usize, keep: impl Fn([usize; 3]) -> bool) -> Result<Vec<[usize; 3]>, MeshError> {
    if dim != 2 && dim != 3 {
        return Err(MeshError::UnsupportedDimension(dim));
    }
    let nz = if dim == 2 { 1 } else { nz };
    let mut cells = Vec::new();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if keep([i, j, k]) {
                    cells.push([i, j, k]);
                }
            }
        }
    }
    Ok(cells)
}

fn structured(dim: usize, n: [usize; 3], spacing: f64, cells: &[[usize; 3]]) -> Result<MeshLevel, MeshError> {
    let (sx, sy) = (n[0] + 1, n[1] + 1);
    let sz = if dim == 2 { 1 } else { n[2] + 1 };
    let mut id = vec![NONE; sx * sy * sz];
    let mut vertices = Vec::new();
    let mut vid = |i: usize, j: usize, k: usize, vertices: &mut Vec<Point>| {
        let slot = &mut id[(k * sy + j) * sx + i];
        if *slot == NONE {
            *slot = vertices.len();
            vertices.push([i as f64 * spacing, j as f64 * spacing, k as f64 * spacing]);
        }
        *slot
    };
    let mut elements = Vec::new();
    for c in cells {
        let [i, j, k] = *c;
        if dim == 2 {
            let v00 = vid(i, j, 0, &mut vertices);
            let v10 = vid(i + 1, j, 0, &mut vertices);
            let v11 = vid(i + 1, j + 1, 0, &mut vertices);
            let v01 = vid(i, j + 1, 0, &mut vertices);
            elements.extend([v00, v10, v11, v00, v11, v01]);
        } else {
            const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            for p in PERMS {
                let mut pos = [i, j, k];
                elements.push(vid(pos[0], pos[1], pos[2], &mut vertices));
                for &axis in &p {
                    pos[axis] += 1;
                    elements.push(vid(pos[0], pos[1], pos[2], &mut vertices));
                }
            }
        }
    }
    MeshLevel::from_elements(dim, vertices, elements)
}

/// A coarse mesh and its successive red refinements.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    levels: Vec<MeshLevel>,
    parents: Vec<Vec<FacetParent>>,
}

impl MeshHierarchy {
    /// `n_levels` meshes, the first being `coarse`.
    pub fn new(coarse: MeshLevel, n_levels: usize) -> MeshHierarchy {
        let mut levels = vec![coarse];
        let mut parents = vec![Vec::new()];
        for _ in 1..n_levels.max(1) {
            let (fine, p) = levels.last().unwrap().refine();
            levels.push(fine);
            parents.push(p);
        }
        MeshHierarchy { levels, parents }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &MeshLevel {
        &self.levels[l]
    }

    pub fn finest(&self) -> &MeshLevel {
        self.levels.last().unwrap()
    }

    /// Position of the facets of level `l >= 1` relative to level `l - 1`.
    pub fn facet_parents(&self, l: usize) -> &[FacetParent] {
        &self.parents[l]
    }

    pub fn children_per_element(&self) -> usize {
        1 << self.levels[0].dim
    }

    /// Element of level `l - 1` containing element `e` of level `l`.
    pub fn parent_element(&self, e: usize) -> usize {
        e / self.children_per_element()
    }

    /// Elements of level `l + 1` refining element `e` of level `l`.
    pub fn child_elements(&self, e: usize) -> std::ops::Range<usize> {
        let c = self.children_per_element();
        e * c..(e + 1) * c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_triangle_square() {
        let m = MeshLevel::unit_box_cells(2, 1).unwrap();
        assert_eq!(m.n_elements(), 2);
        assert_eq!(m.n_facets(), 5);
        assert!((m.total_measure() - 1.0).abs() < 1e-15);
        let boundary = (0..m.n_facets()).filter(|&f| m.is_boundary_facet(f)).count();
        assert_eq!(boundary, 4);
    }

    #[test]
    fn target_size_respected() {
        let m = MeshLevel::unit_box(2, 0.25).unwrap();
        assert!(m.max_diameter() <= 0.25 + 1e-14);
        let m = MeshLevel::unit_box(3, 0.5).unwrap();
        assert_eq!(m.n_elements(), 6 * 4 * 4 * 4);
        assert!(m.max_diameter() <= 0.5 + 1e-14);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(MeshLevel::unit_box(4, 0.5).unwrap_err(), MeshError::UnsupportedDimension(4));
        assert_eq!(MeshLevel::unit_box(2, 0.0).unwrap_err(), MeshError::InvalidSize(0.0));
        assert_eq!(MeshLevel::unit_box(2, -1.0).unwrap_err(), MeshError::InvalidSize(-1.0));
    }

    #[test]
    fn normals_are_outward_units() {
        let m = MeshLevel::unit_box_cells(3, 2).unwrap();
        for e in 0..m.n_elements() {
            let g = m.element_geometry(e);
            for i in 0..4 {
                assert!((norm(&g.normals[i]) - 1.0).abs() < 1e-14);
                assert!(dot(&g.normals[i], &sub(&g.facet_barycenters[i], &g.barycenter)) > 0.0);
            }
        }
    }
}
