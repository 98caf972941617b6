//! Structured triangulations of axis-aligned rectangles, uniform red
//! refinement hierarchies, and the entity connectivity the assembly and
//! smoother modules rely on.
//!
//! Conventions:
//! - Cells are vertex triples in counterclockwise order.
//! - Edges are stored with their lower vertex index first; the global edge
//!   normal is the right-hand normal of the lower-to-higher traversal.
//! - Local edge `l` of cell `(a, b, c)` is the edge opposite local vertex
//!   `l`, traversed `b->c`, `c->a`, `a->b` respectively, so the right-hand
//!   normal of the local traversal always points out of the cell.

use crate::error::{Error, Result};
use crate::geom::{cross2, Vec2};
use std::collections::BTreeMap;
use std::io::Write;

/// Which side of the rectangle a boundary edge lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum BoundaryTag {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 4] = [
        BoundaryTag::Left,
        BoundaryTag::Right,
        BoundaryTag::Bottom,
        BoundaryTag::Top,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::Left => "left",
            BoundaryTag::Right => "right",
            BoundaryTag::Bottom => "bottom",
            BoundaryTag::Top => "top",
        }
    }
}

/// A conforming triangle mesh with full connectivity.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vec2>,
    /// Vertex pairs, lower index first.
    pub edges: Vec<[usize; 2]>,
    /// Vertex triples, counterclockwise.
    pub cells: Vec<[usize; 3]>,
    /// Edge indices per cell, local edge `l` opposite local vertex `l`.
    pub cell_edges: Vec<[usize; 3]>,
    /// True when the cell's local traversal of the edge runs against the
    /// global lower-to-higher direction. Equivalently the global edge normal
    /// points into the cell.
    pub cell_edge_reversed: Vec<[bool; 3]>,
    /// `Some(tag)` for boundary edges, `None` for interior ones.
    pub boundary_tag: Vec<Option<BoundaryTag>>,
    /// Adjacent cells per edge; boundary edges have a single one.
    pub edge_cells: Vec<(usize, Option<usize>)>,
    /// Edges incident to each vertex.
    pub vertex_edges: Vec<Vec<usize>>,
    /// Cells incident to each vertex.
    pub vertex_cells: Vec<Vec<usize>>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_vertices(&self, cell: usize) -> [Vec2; 3] {
        let [a, b, c] = self.cells[cell];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_vertices(cell);
        0.5 * cross2(a, b, c)
    }

    pub fn cell_diameter(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cell_vertices(cell);
        ((b - a).norm()).max((c - b).norm()).max((a - c).norm())
    }

    pub fn edge_length(&self, edge: usize) -> f64 {
        let [u, v] = self.edges[edge];
        (self.vertices[v] - self.vertices[u]).norm()
    }

    pub fn edge_midpoint(&self, edge: usize) -> Vec2 {
        let [u, v] = self.edges[edge];
        (self.vertices[u] + self.vertices[v]).scale(0.5)
    }

    /// Unit normal of the global lower-to-higher edge traversal.
    pub fn edge_unit_normal(&self, edge: usize) -> Vec2 {
        let [u, v] = self.edges[edge];
        let t = self.vertices[v] - self.vertices[u];
        t.right_normal().scale(1.0 / t.norm())
    }

    /// +1 when the global edge normal points out of the cell, -1 otherwise.
    pub fn orientation_sign(&self, cell: usize, local_edge: usize) -> f64 {
        if self.cell_edge_reversed[cell][local_edge] {
            -1.0
        } else {
            1.0
        }
    }

    /// Outward unit normal of a boundary edge.
    pub fn boundary_outward_normal(&self, edge: usize) -> Vec2 {
        let (cell, other) = self.edge_cells[edge];
        debug_assert!(other.is_none(), "outward normal requested for interior edge");
        let local = self.cell_edges[cell]
            .iter()
            .position(|&e| e == edge)
            .expect("edge_cells inconsistent with cell_edges");
        self.edge_unit_normal(edge)
            .scale(self.orientation_sign(cell, local))
    }

    /// Local index of `edge` within `cell`.
    pub fn local_edge_index(&self, cell: usize, edge: usize) -> usize {
        self.cell_edges[cell]
            .iter()
            .position(|&e| e == edge)
            .expect("edge not part of cell")
    }

    /// Checks the structural invariants; used by tests and the hierarchy
    /// builder.
    pub fn validate(&self) -> Result<()> {
        for cell in 0..self.n_cells() {
            if self.cell_area(cell) <= 0.0 {
                return Err(Error::invalid_state(format!(
                    "cell {cell} has nonpositive signed area"
                )));
            }
        }
        for (edge, &(_, second)) in self.edge_cells.iter().enumerate() {
            let boundary = self.boundary_tag[edge].is_some();
            if boundary == second.is_some() {
                return Err(Error::invalid_state(format!(
                    "edge {edge} has inconsistent boundary/interior adjacency"
                )));
            }
        }
        let euler =
            self.n_vertices() as i64 - self.n_edges() as i64 + self.n_cells() as i64;
        if euler != 1 {
            return Err(Error::invalid_state(format!(
                "Euler characteristic {euler} != 1"
            )));
        }
        Ok(())
    }

    /// Plain-text dump of vertices, cells and boundary tags for debugging.
    pub fn dump<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "vertices {}", self.n_vertices())?;
        for v in &self.vertices {
            writeln!(out, "{:.17e} {:.17e}", v.x, v.y)?;
        }
        writeln!(out, "cells {}", self.n_cells())?;
        for c in &self.cells {
            writeln!(out, "{} {} {}", c[0], c[1], c[2])?;
        }
        writeln!(out, "edges {}", self.n_edges())?;
        for (e, &[u, v]) in self.edges.iter().enumerate() {
            let tag = self.boundary_tag[e].map_or("interior", BoundaryTag::name);
            writeln!(out, "{u} {v} {tag}")?;
        }
        Ok(())
    }
}

/// Local edges of cell `(a, b, c)`: edge `l` is opposite vertex `l`.
fn local_edges(cell: [usize; 3]) -> [[usize; 2]; 3] {
    let [a, b, c] = cell;
    [[b, c], [c, a], [a, b]]
}

/// Builds connectivity (edge table, incidence, adjacency) from vertices plus
/// cells, tagging boundary edges with `tag_of`.
fn finish_mesh(
    vertices: Vec<Vec2>,
    cells: Vec<[usize; 3]>,
    mut tag_of: impl FnMut(usize, [usize; 2]) -> Option<BoundaryTag>,
) -> Mesh {
    let mut edge_index: BTreeMap<[usize; 2], usize> = BTreeMap::new();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    let mut cell_edges = Vec::with_capacity(cells.len());
    let mut cell_edge_reversed = Vec::with_capacity(cells.len());
    let mut edge_cells: Vec<(usize, Option<usize>)> = Vec::new();

    for (ci, &cell) in cells.iter().enumerate() {
        let mut ce = [0usize; 3];
        let mut rev = [false; 3];
        for (l, [p, q]) in local_edges(cell).into_iter().enumerate() {
            let key = [p.min(q), p.max(q)];
            let e = *edge_index.entry(key).or_insert_with(|| {
                edges.push(key);
                edge_cells.push((ci, None));
                edges.len() - 1
            });
            if edge_cells[e].0 != ci && edge_cells[e].1.is_none() {
                edge_cells[e].1 = Some(ci);
            }
            ce[l] = e;
            rev[l] = p > q;
        }
        cell_edges.push(ce);
        cell_edge_reversed.push(rev);
    }

    let boundary_tag: Vec<Option<BoundaryTag>> = edges
        .iter()
        .enumerate()
        .map(|(e, &pair)| {
            if edge_cells[e].1.is_none() {
                tag_of(e, pair)
            } else {
                None
            }
        })
        .collect();

    let mut vertex_edges = vec![Vec::new(); vertices.len()];
    for (e, &[u, v]) in edges.iter().enumerate() {
        vertex_edges[u].push(e);
        vertex_edges[v].push(e);
    }
    let mut vertex_cells = vec![Vec::new(); vertices.len()];
    for (ci, &[a, b, c]) in cells.iter().enumerate() {
        vertex_cells[a].push(ci);
        vertex_cells[b].push(ci);
        vertex_cells[c].push(ci);
    }

    Mesh {
        vertices,
        edges,
        cells,
        cell_edges,
        cell_edge_reversed,
        boundary_tag,
        edge_cells,
        vertex_edges,
        vertex_cells,
    }
}

/// Triangulates the rectangle `[0, width] x [0, height]` into `2*nx*ny`
/// right triangles, each grid quad split by its lower-left to upper-right
/// diagonal.
pub fn build_rectangle_mesh(nx: usize, ny: usize, width: f64, height: f64) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::invalid_argument(format!(
            "cell counts must be positive, got {nx}x{ny}"
        )));
    }
    if !(width > 0.0) || !(height > 0.0) {
        return Err(Error::invalid_argument(format!(
            "extent must be positive, got {width}x{height}"
        )));
    }

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec2::new(
                width * i as f64 / nx as f64,
                height * j as f64 / ny as f64,
            ));
        }
    }
    let vid = |i: usize, j: usize| j * (nx + 1) + i;

    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10) = (vid(i, j), vid(i + 1, j));
            let (v01, v11) = (vid(i, j + 1), vid(i + 1, j + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }

    let tol = 1e-12 * width.max(height);
    let verts = vertices.clone();
    let mesh = finish_mesh(vertices, cells, |_, [u, v]| {
        let (pu, pv) = (verts[u], verts[v]);
        if pu.x.abs() < tol && pv.x.abs() < tol {
            Some(BoundaryTag::Left)
        } else if (pu.x - width).abs() < tol && (pv.x - width).abs() < tol {
            Some(BoundaryTag::Right)
        } else if pu.y.abs() < tol && pv.y.abs() < tol {
            Some(BoundaryTag::Bottom)
        } else if (pu.y - height).abs() < tol && (pv.y - height).abs() < tol {
            Some(BoundaryTag::Top)
        } else {
            None
        }
    });
    debug_assert!(mesh.validate().is_ok());
    Ok(mesh)
}

/// Where a fine edge came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeParent {
    /// Half of a coarse edge.
    Edge(usize),
    /// Interior to a coarse cell.
    Cell(usize),
}

/// Fine-to-coarse provenance recorded by one refinement step.
#[derive(Debug, Clone)]
pub struct ParentMaps {
    pub cell_parent: Vec<usize>,
    pub edge_parent: Vec<EdgeParent>,
}

/// Uniform red refinement: every triangle is split into four congruent
/// children through its edge midpoints. Fine vertex `n_coarse + e` is the
/// midpoint of coarse edge `e`; boundary tags are inherited.
pub fn refine_uniform(mesh: &Mesh) -> (Mesh, ParentMaps) {
    let ncv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    for e in 0..mesh.n_edges() {
        vertices.push(mesh.edge_midpoint(e));
    }

    let mut cells = Vec::with_capacity(4 * mesh.n_cells());
    let mut cell_parent = Vec::with_capacity(4 * mesh.n_cells());
    for (p, &[a, b, c]) in mesh.cells.iter().enumerate() {
        let [e0, e1, e2] = mesh.cell_edges[p];
        let (m0, m1, m2) = (ncv + e0, ncv + e1, ncv + e2);
        // m0 = mid(b, c), m1 = mid(c, a), m2 = mid(a, b)
        for child in [[a, m2, m1], [m2, b, m0], [m1, m0, c], [m2, m0, m1]] {
            cells.push(child);
            cell_parent.push(p);
        }
    }

    let coarse_tags = mesh.boundary_tag.clone();
    let fine = finish_mesh(vertices, cells, |_, [u, v]| {
        // A fine boundary edge is half of a coarse boundary edge; its higher
        // endpoint is that edge's midpoint.
        debug_assert!(u < ncv && v >= ncv);
        coarse_tags[v - ncv]
    });

    let mut edge_parent = vec![EdgeParent::Cell(usize::MAX); fine.n_edges()];
    let fine_edge_ids: BTreeMap<[usize; 2], usize> = fine
        .edges
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, i))
        .collect();
    let fine_edge_of = |u: usize, v: usize| -> usize {
        fine_edge_ids[&[u.min(v), u.max(v)]]
    };
    for (e, &[u, v]) in fine.edges.iter().enumerate() {
        if u < ncv {
            // Half-edge: v is the midpoint vertex of the coarse parent edge.
            edge_parent[e] = EdgeParent::Edge(v - ncv);
        }
    }
    for (p, _) in mesh.cells.iter().enumerate() {
        let [e0, e1, e2] = mesh.cell_edges[p];
        let (m0, m1, m2) = (ncv + e0, ncv + e1, ncv + e2);
        for (u, v) in [(m1, m2), (m2, m0), (m0, m1)] {
            edge_parent[fine_edge_of(u, v)] = EdgeParent::Cell(p);
        }
    }
    debug_assert!(fine.validate().is_ok());

    (
        fine,
        ParentMaps {
            cell_parent,
            edge_parent,
        },
    )
}

/// A nested family of meshes produced by uniform refinement, coarsest first.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub levels: Vec<Mesh>,
    /// `parents[l]` maps level `l+1` entities to level `l` parents.
    pub parents: Vec<ParentMaps>,
    /// `children[l][c]` lists the four level `l+1` children of cell `c`.
    pub children: Vec<Vec<[usize; 4]>>,
}

impl MeshHierarchy {
    pub fn build(coarse: Mesh, refinements: usize) -> MeshHierarchy {
        let mut levels = vec![coarse];
        let mut parents = Vec::new();
        let mut children = Vec::new();
        for _ in 0..refinements {
            let (fine, maps) = refine_uniform(levels.last().unwrap());
            let mut ch = vec![[usize::MAX; 4]; levels.last().unwrap().n_cells()];
            let mut seen = vec![0usize; ch.len()];
            for (fc, &p) in maps.cell_parent.iter().enumerate() {
                ch[p][seen[p]] = fc;
                seen[p] += 1;
            }
            children.push(ch);
            parents.push(maps);
            levels.push(fine);
        }
        MeshHierarchy {
            levels,
            parents,
            children,
        }
    }

    /// The paper-style hierarchy on the unit square: a 2x2 coarse grid with
    /// `m` uniform refinements.
    pub fn unit_square(m: usize) -> MeshHierarchy {
        let coarse = build_rectangle_mesh(2, 2, 1.0, 1.0).expect("2x2 base grid");
        MeshHierarchy::build(coarse, m)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &Mesh {
        self.levels.last().unwrap()
    }

    /// Descends from a cell on `level` to the descendant cell on the finer
    /// `target` level that contains `point`. Levels are nested and affine, so
    /// the barycentric test is exact up to roundoff.
    pub fn locate_descendant(
        &self,
        level: usize,
        cell: usize,
        point: Vec2,
        target: usize,
    ) -> usize {
        debug_assert!(target >= level && target < self.n_levels());
        let mut cur = cell;
        for l in level..target {
            let mesh = &self.levels[l + 1];
            let mut best = usize::MAX;
            let mut best_min = f64::NEG_INFINITY;
            for &child in &self.children[l][cur] {
                let [a, b, c] = mesh.cell_vertices(child);
                let area = cross2(a, b, c);
                let l0 = cross2(point, b, c) / area;
                let l1 = cross2(a, point, c) / area;
                let l2 = cross2(a, b, point) / area;
                let min = l0.min(l1).min(l2);
                if min > best_min {
                    best_min = min;
                    best = child;
                }
            }
            cur = best;
        }
        cur
    }
}
