//! Conforming quadrilateral meshes of axis-aligned rectangles.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{real, Real};

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid mesh: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTag {
    Inlet,
    Wall,
    Outlet,
}

/// Element sides in local order: south (eta = -1), east (xi = +1),
/// north (eta = +1), west (xi = -1).
pub const SIDE_SOUTH: usize = 0;
pub const SIDE_EAST: usize = 1;
pub const SIDE_NORTH: usize = 2;
pub const SIDE_WEST: usize = 3;

/// Axis-aligned rectangular element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect<T: Real> {
    pub x0: T,
    pub y0: T,
    pub hx: T,
    pub hy: T,
}

impl<T: Real> Rect<T> {
    pub fn map(&self, xi: T, eta: T) -> (T, T) {
        let half = real::<T>(0.5);
        (self.x0 + self.hx * (xi + T::one()) * half, self.y0 + self.hy * (eta + T::one()) * half)
    }
}

#[derive(Debug, Clone)]
pub struct Mesh<T: Real> {
    pub elements: Vec<Rect<T>>,
    /// Per element, per side: boundary tag or `None` for interior sides.
    pub boundary: Vec<[Option<BoundaryTag>; 4]>,
    pub symmetry_axis: T,
}

impl<T: Real> Mesh<T> {
    /// Tensor-product mesh over the break points `xs x ys`. Boundary sides
    /// are tagged by `tag(side, x_mid, y_mid)` evaluated at the side
    /// midpoint.
    pub fn tensor(
        xs: &[T],
        ys: &[T],
        tag: impl Fn(usize, T, T) -> BoundaryTag,
    ) -> Result<Self, MeshError> {
        if xs.len() < 2 || ys.len() < 2 {
            return Err(MeshError::Invalid("need at least one element per direction".into()));
        }
        let ncols = xs.len() - 1;
        let nrows = ys.len() - 1;
        let half = real::<T>(0.5);
        let mut elements = Vec::with_capacity(ncols * nrows);
        let mut boundary = Vec::with_capacity(ncols * nrows);
        for row in 0..nrows {
            for col in 0..ncols {
                let r = Rect {
                    x0: xs[col],
                    y0: ys[row],
                    hx: xs[col + 1] - xs[col],
                    hy: ys[row + 1] - ys[row],
                };
                if r.hx <= T::zero() || r.hy <= T::zero() {
                    return Err(MeshError::Invalid("break points must increase".into()));
                }
                let xm = r.x0 + r.hx * half;
                let ym = r.y0 + r.hy * half;
                let mut tags = [None; 4];
                if row == 0 {
                    tags[SIDE_SOUTH] = Some(tag(SIDE_SOUTH, xm, r.y0));
                }
                if row == nrows - 1 {
                    tags[SIDE_NORTH] = Some(tag(SIDE_NORTH, xm, r.y0 + r.hy));
                }
                if col == 0 {
                    tags[SIDE_WEST] = Some(tag(SIDE_WEST, r.x0, ym));
                }
                if col == ncols - 1 {
                    tags[SIDE_EAST] = Some(tag(SIDE_EAST, r.x0 + r.hx, ym));
                }
                elements.push(r);
                boundary.push(tags);
            }
        }
        Ok(Self { elements, boundary, symmetry_axis: T::zero() })
    }

    /// The sudden-expansion channel: a narrow inlet duct `[0, 5] x [2.5, 5]`
    /// whose left wall carries the parabolic inlet profile, expanding into
    /// `[5, 40] x [0, 7.5]` with walls everywhere except the outlet at
    /// `x = 40`. 19 conforming elements (4 duct + 5x3 expansion), graded
    /// toward the expansion corner and mirror-symmetric about `y = 3.75`.
    pub fn channel() -> Result<Self, MeshError> {
        let duct_x = [0.0, 1.0, 2.5, 4.0, 5.0];
        let exp_x = [5.0, 8.0, 12.0, 18.0, 27.0, 40.0];
        let ys = [0.0, 2.5, 5.0, 7.5];
        let mut elements = Vec::with_capacity(19);
        let mut boundary: Vec<[Option<BoundaryTag>; 4]> = Vec::with_capacity(19);
        for w in duct_x.windows(2) {
            elements.push(Rect {
                x0: real(w[0]),
                y0: real(2.5),
                hx: real(w[1] - w[0]),
                hy: real(2.5),
            });
            let mut tags = [None; 4];
            tags[SIDE_SOUTH] = Some(BoundaryTag::Wall);
            tags[SIDE_NORTH] = Some(BoundaryTag::Wall);
            if w[0] == 0.0 {
                tags[SIDE_WEST] = Some(BoundaryTag::Inlet);
            }
            boundary.push(tags);
        }
        for (row, yw) in ys.windows(2).enumerate() {
            for w in exp_x.windows(2) {
                elements.push(Rect {
                    x0: real(w[0]),
                    y0: real(yw[0]),
                    hx: real(w[1] - w[0]),
                    hy: real(yw[1] - yw[0]),
                });
                let mut tags = [None; 4];
                if row == 0 {
                    tags[SIDE_SOUTH] = Some(BoundaryTag::Wall);
                }
                if row == 2 {
                    tags[SIDE_NORTH] = Some(BoundaryTag::Wall);
                }
                if w[0] == 5.0 && row != 1 {
                    tags[SIDE_WEST] = Some(BoundaryTag::Wall);
                }
                if w[1] == 40.0 {
                    tags[SIDE_EAST] = Some(BoundaryTag::Outlet);
                }
                boundary.push(tags);
            }
        }
        Ok(Self { elements, boundary, symmetry_axis: real(3.75) })
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    /// Index of the mirror element of `e` about the symmetry axis, if the
    /// mesh is reflection-symmetric there.
    pub fn mirror_element(&self, e: usize) -> Option<usize> {
        let r = self.elements[e];
        let target_y0 = (self.symmetry_axis + self.symmetry_axis) - r.y0 - r.hy;
        let tol = real::<T>(1e-10) * (T::one() + r.hx.abs() + r.hy.abs());
        self.elements.iter().position(|c| {
            (c.x0 - r.x0).abs() <= tol
                && (c.hx - r.hx).abs() <= tol
                && (c.hy - r.hy).abs() <= tol
                && (c.y0 - target_y0).abs() <= tol
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<(), MeshError> {
        let file = MeshFile::from_mesh(self);
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, &file)?;
        use std::io::Write;
        w.flush()?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, MeshError> {
        let file: MeshFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        file.into_mesh()
    }
}

/// JSON interchange form: vertices, quads (counter-clockwise vertex ids),
/// tagged boundary edges and the symmetry axis.
#[derive(Debug, Serialize, Deserialize)]
pub struct MeshFile {
    pub vertices: Vec<[f64; 2]>,
    pub quads: Vec<[usize; 4]>,
    pub boundary: Vec<BoundaryEdge>,
    pub symmetry_axis: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BoundaryEdge {
    pub edge: [usize; 2],
    pub tag: BoundaryTag,
}

impl MeshFile {
    pub fn from_mesh<T: Real>(mesh: &Mesh<T>) -> Self {
        let f = |v: T| num_traits::ToPrimitive::to_f64(&v).unwrap();
        let mut vertices: Vec<[f64; 2]> = Vec::new();
        let vid = |x: f64, y: f64, vertices: &mut Vec<[f64; 2]>| -> usize {
            match vertices.iter().position(|&[a, b]| a == x && b == y) {
                Some(i) => i,
                None => {
                    vertices.push([x, y]);
                    vertices.len() - 1
                }
            }
        };
        let mut quads = Vec::new();
        let mut boundary = Vec::new();
        for (e, r) in mesh.elements.iter().enumerate() {
            let (x0, y0, x1, y1) =
                (f(r.x0), f(r.y0), f(r.x0) + f(r.hx), f(r.y0) + f(r.hy));
            let q = [
                vid(x0, y0, &mut vertices),
                vid(x1, y0, &mut vertices),
                vid(x1, y1, &mut vertices),
                vid(x0, y1, &mut vertices),
            ];
            quads.push(q);
            let sides = [[q[0], q[1]], [q[1], q[2]], [q[3], q[2]], [q[0], q[3]]];
            for (s, verts) in sides.iter().enumerate() {
                if let Some(tag) = mesh.boundary[e][s] {
                    boundary.push(BoundaryEdge { edge: *verts, tag });
                }
            }
        }
        Self {
            vertices,
            quads,
            boundary,
            symmetry_axis: f(mesh.symmetry_axis),
        }
    }

    pub fn into_mesh<T: Real>(self) -> Result<Mesh<T>, MeshError> {
        let mut elements = Vec::with_capacity(self.quads.len());
        let mut boundary = vec![[None; 4]; self.quads.len()];
        for (e, q) in self.quads.iter().enumerate() {
            let vs: Vec<[f64; 2]> = q
                .iter()
                .map(|&i| {
                    self.vertices
                        .get(i)
                        .copied()
                        .ok_or_else(|| MeshError::Invalid(format!("vertex {i} out of range")))
                })
                .collect::<Result<_, _>>()?;
            let x0 = vs[0][0];
            let y0 = vs[0][1];
            let x1 = vs[1][0];
            let y1 = vs[2][1];
            let expect = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
            if vs != expect {
                return Err(MeshError::Invalid(format!(
                    "element {e} is not an axis-aligned rectangle in CCW order"
                )));
            }
            if x1 <= x0 || y1 <= y0 {
                return Err(MeshError::Invalid(format!("element {e} has non-positive size")));
            }
            elements.push(Rect {
                x0: real::<T>(x0),
                y0: real::<T>(y0),
                hx: real::<T>(x1 - x0),
                hy: real::<T>(y1 - y0),
            });
            let sides = [[q[0], q[1]], [q[1], q[2]], [q[3], q[2]], [q[0], q[3]]];
            for be in &self.boundary {
                for (s, verts) in sides.iter().enumerate() {
                    if (be.edge == *verts) || (be.edge == [verts[1], verts[0]]) {
                        boundary[e][s] = Some(be.tag);
                    }
                }
            }
        }
        Ok(Mesh { elements, boundary, symmetry_axis: real(self.symmetry_axis) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_mesh_shape() {
        let mesh = Mesh::<f64>::channel().unwrap();
        assert_eq!(mesh.n_elements(), 19);
        assert_eq!(mesh.symmetry_axis, 3.75);
        // every element has its mirror
        for e in 0..mesh.n_elements() {
            let m = mesh.mirror_element(e).expect("mirror element missing");
            let r = mesh.elements[e];
            let rm = mesh.elements[m];
            assert_eq!(r.x0, rm.x0);
            assert_eq!(r.y0 + r.hy, 7.5 - rm.y0);
        }
        // one inlet side, covering exactly y in [2.5, 5] on x = 0
        let mut inlet = 0;
        for (e, tags) in mesh.boundary.iter().enumerate() {
            if tags[SIDE_WEST] == Some(BoundaryTag::Inlet) {
                inlet += 1;
                assert_eq!(mesh.elements[e].x0, 0.0);
                assert_eq!(mesh.elements[e].y0, 2.5);
                assert_eq!(mesh.elements[e].hy, 2.5);
            }
        }
        assert_eq!(inlet, 1);
        // boundary sides: inlet 1, duct walls 8, expansion west 2,
        // bottom/top 5 + 5, outlet 3
        let tagged: usize = mesh
            .boundary
            .iter()
            .map(|t| t.iter().filter(|x| x.is_some()).count())
            .sum();
        assert_eq!(tagged, 1 + 8 + 2 + 10 + 3);
        let outlets: usize = mesh
            .boundary
            .iter()
            .map(|t| t.iter().filter(|x| **x == Some(BoundaryTag::Outlet)).count())
            .sum();
        assert_eq!(outlets, 3);
    }

    #[test]
    fn json_round_trip() {
        let mesh = Mesh::<f64>::channel().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.json");
        mesh.save_json(&path).unwrap();
        let back = Mesh::<f64>::load_json(&path).unwrap();
        assert_eq!(back.n_elements(), mesh.n_elements());
        for e in 0..mesh.n_elements() {
            assert_eq!(back.elements[e], mesh.elements[e]);
            assert_eq!(back.boundary[e], mesh.boundary[e]);
        }
        assert_eq!(back.symmetry_axis, mesh.symmetry_axis);
    }

    #[test]
    fn rejects_degenerate_quads() {
        let file = MeshFile {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.5, 1.2]],
            quads: vec![[0, 1, 2, 3]],
            boundary: vec![],
            symmetry_axis: 0.0,
        };
        assert!(file.into_mesh::<f64>().is_err());
    }
}
