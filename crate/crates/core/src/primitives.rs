//! Welded procedural meshes: cubes, spheres, prisms and planar grids.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::scene::{TriangleMesh, Vec3};

/// Axis-aligned box centered at the origin with `subdiv` x `subdiv` quads per
/// side, outward-facing counter-clockwise winding, shared vertices along
/// edges.
pub fn cuboid(size: Vec3, subdiv: usize, color: impl Fn(&Vec3) -> [f64; 3]) -> TriangleMesh {
    let n = subdiv.max(1);
    let half = size * 0.5;
    let mut builder = Welder::default();
    // (normal axis, sign): face spans the two other axes.
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (ua, va) = ((axis + 1) % 3, (axis + 2) % 3);
            let mut ids = vec![vec![0u32; n + 1]; n + 1];
            for (i, row) in ids.iter_mut().enumerate() {
                for (j, id) in row.iter_mut().enumerate() {
                    let mut p = Vec3::zeros();
                    p[axis] = sign * half[axis];
                    p[ua] = -half[ua] + size[ua] * i as f64 / n as f64;
                    p[va] = -half[va] + size[va] * j as f64 / n as f64;
                    *id = builder.vertex(p);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let (a, b, c, d) = (ids[i][j], ids[i + 1][j], ids[i + 1][j + 1], ids[i][j + 1]);
                    // (ua x va) = +axis, so (a,b,c) is counter-clockwise seen from +axis.
                    if sign > 0.0 {
                        builder.faces.push([a, b, c]);
                        builder.faces.push([a, c, d]);
                    } else {
                        builder.faces.push([a, c, b]);
                        builder.faces.push([a, d, c]);
                    }
                }
            }
        }
    }
    builder.finish(color)
}

/// Icosphere of the given radius after `levels` midpoint subdivisions.
pub fn icosphere(radius: f64, levels: usize, color: impl Fn(&Vec3) -> [f64; 3]) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                (verts.len() - 1) as u32
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices: Vec<Vec3> = verts.iter().map(|v| v * radius).collect();
    let colors = vertices.iter().map(&color).collect();
    TriangleMesh {
        vertices,
        colors,
        faces,
    }
}

/// Right prism over a regular `sides`-gon of circumradius `radius`, extruded
/// along y over `height`, centered at the origin.
pub fn prism(sides: usize, radius: f64, height: f64, color: impl Fn(&Vec3) -> [f64; 3]) -> TriangleMesh {
    let sides = sides.max(3);
    let mut b = Welder::default();
    let hy = height / 2.0;
    let ring = |y: f64, b: &mut Welder| -> Vec<u32> {
        (0..sides)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / sides as f64;
                b.vertex(Vec3::new(radius * a.cos(), y, radius * a.sin()))
            })
            .collect()
    };
    let bottom = ring(-hy, &mut b);
    let top = ring(hy, &mut b);
    let cb = b.vertex(Vec3::new(0.0, -hy, 0.0));
    let ct = b.vertex(Vec3::new(0.0, hy, 0.0));
    for k in 0..sides {
        let k1 = (k + 1) % sides;
        b.faces.push([bottom[k], top[k], top[k1]]);
        b.faces.push([bottom[k], top[k1], bottom[k1]]);
        b.faces.push([cb, bottom[k], bottom[k1]]);
        b.faces.push([ct, top[k1], top[k]]);
    }
    b.finish(color)
}

/// Planar grid of `nx` x `ny` quads spanning `corner + s*u + t*v` for
/// `s, t` in `[0, 1]`.
pub fn grid(corner: Vec3, u: Vec3, v: Vec3, nx: usize, ny: usize, color: impl Fn(f64, f64) -> [f64; 3]) -> TriangleMesh {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    let mut colors = Vec::with_capacity(vertices.capacity());
    for j in 0..=ny {
        for i in 0..=nx {
            let (s, t) = (i as f64 / nx as f64, j as f64 / ny as f64);
            vertices.push(corner + u * s + v * t);
            colors.push(color(s, t));
        }
    }
    let mut faces = Vec::with_capacity(nx * ny * 2);
    let id = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    for j in 0..ny {
        for i in 0..nx {
            faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    TriangleMesh {
        vertices,
        colors,
        faces,
    }
}

/// Assigns a shared index to every bit-identical position.
#[derive(Default)]
struct Welder {
    index: HashMap<[u64; 3], u32>,
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl Welder {
    fn vertex(&mut self, p: Vec3) -> u32 {
        // Normalize -0.0 so mirrored coordinates weld.
        let p = p.map(|v| if v == 0.0 { 0.0 } else { v });
        let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
        let next = self.vertices.len() as u32;
        *self.index.entry(key).or_insert_with(|| {
            self.vertices.push(p);
            next
        })
    }

    fn finish(self, color: impl Fn(&Vec3) -> [f64; 3]) -> TriangleMesh {
        let colors = self.vertices.iter().map(color).collect();
        TriangleMesh {
            vertices: self.vertices,
            colors,
            faces: self.faces,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::EdgeTopology;

    fn closed(mesh: &TriangleMesh) -> bool {
        EdgeTopology::new(&mesh.faces).edges.iter().all(|e| e.face_count == 2)
    }

    fn outward(mesh: &TriangleMesh) -> bool {
        mesh.faces.iter().all(|f| {
            let [a, b, c] = f.map(|i| mesh.vertices[i as usize]);
            (b - a).cross(&(c - a)).dot(&((a + b + c) / 3.0)) > 0.0
        })
    }

    #[test]
    fn cuboid_is_closed_and_outward() {
        let m = cuboid(Vec3::new(1.0, 2.0, 0.5), 3, |_| [0.5; 3]);
        assert!(m.validate().is_ok());
        assert_eq!(m.faces.len(), 6 * 9 * 2);
        assert_eq!(m.vertices.len(), 6 * 16 - 12 * 4 + 8);
        assert!(closed(&m));
        assert!(outward(&m));
    }

    #[test]
    fn icosphere_is_closed_and_outward() {
        let m = icosphere(0.7, 2, |_| [0.5; 3]);
        assert_eq!(m.faces.len(), 320);
        assert!(closed(&m));
        assert!(outward(&m));
        assert!(m.vertices.iter().all(|v| (v.norm() - 0.7).abs() < 1e-12));
    }

    #[test]
    fn prism_is_closed_and_outward() {
        let m = prism(5, 0.5, 1.0, |_| [0.5; 3]);
        assert!(closed(&m));
        assert!(outward(&m));
    }

    #[test]
    fn grid_counts() {
        let g = grid(Vec3::zeros(), Vec3::x(), Vec3::y(), 4, 3, |s, t| [s, t, 0.0]);
        assert_eq!(g.vertices.len(), 20);
        assert_eq!(g.faces.len(), 24);
    }
}
