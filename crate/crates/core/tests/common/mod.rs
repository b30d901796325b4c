#![allow(dead_code)]

use rand::Rng;
use raybundle::{DiffusionTensor, SurfaceMesh, Vec3};
use std::collections::HashMap;

/// Uniformly random rotation matrix from a normalized Gaussian quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    use rand_distr::{Distribution, StandardNormal};
    let mut q = [0.0f64; 4];
    for c in &mut q {
        *c = StandardNormal.sample(rng);
    }
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn columns(r: &[[f64; 3]; 3]) -> [Vec3<f64>; 3] {
    [0, 1, 2].map(|c| Vec3::new(r[0][c], r[1][c], r[2][c]))
}

/// Random symmetric tensor with largest eigenvalue in `[1e-4, 1e-2]` and
/// condition number up to `max_cond`, in a random orientation.
pub fn random_tensor<R: Rng>(rng: &mut R, max_cond: f64) -> DiffusionTensor<f64> {
    let l1 = 10f64.powf(rng.random_range(-4.0..-2.0));
    let l3 = l1 / 10f64.powf(rng.random_range(0.0..max_cond.log10()));
    let l2 = l3 + (l1 - l3) * rng.random::<f64>();
    DiffusionTensor::from_eigen([l1, l2, l3], columns(&random_rotation(rng)))
}

/// Subdivided icosahedron with vertices projected onto the sphere.
pub fn icosphere(center: Vec3<f64>, radius: f64, levels: usize) -> SurfaceMesh<f64> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut v: Vec<Vec3<f64>> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|p| {
        let p = Vec3::from(*p);
        p * (1.0 / p.norm())
    })
    .collect();
    let mut f: Vec<[usize; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut split = |a: usize, b: usize, v: &mut Vec<Vec3<f64>>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (v[a] + v[b]) * 0.5;
                v.push(m * (1.0 / m.norm()));
                v.len() - 1
            })
        };
        let mut next = Vec::with_capacity(f.len() * 4);
        for [a, b, c] in f {
            let ab = split(a, b, &mut v);
            let bc = split(b, c, &mut v);
            let ca = split(c, a, &mut v);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        f = next;
    }
    SurfaceMesh {
        vertices: v.into_iter().map(|p| center + p * radius).collect(),
        triangles: f,
    }
}
