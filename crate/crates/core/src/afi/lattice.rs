use serde::Serialize;

use crate::math::Vec3;

/// Unit directions of a spherical Fibonacci lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatticeBasis {
    pub normals: Vec<Vec3>,
}

impl LatticeBasis {
    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

/// `M` directions with `z_i = (2i+1)/M - 1` and azimuth `2π i φ`,
/// `φ = (√5 - 1)/2`.
pub fn fibonacci_lattice(m: usize) -> LatticeBasis {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let normals = (0..m)
        .map(|i| {
            let z = (2 * i + 1) as f64 / m as f64 - 1.0;
            let r = (1.0 - z * z).sqrt();
            let a = 2.0 * std::f64::consts::PI * i as f64 * phi;
            [r * a.cos(), r * a.sin(), z]
        })
        .collect();
    LatticeBasis { normals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points() {
        let b = fibonacci_lattice(2);
        assert_eq!(b.normals[0][2], -0.5);
        assert_eq!(b.normals[1][2], 0.5);
    }

    #[test]
    fn first_direction_lies_in_xz_plane() {
        let b = fibonacci_lattice(60);
        assert_eq!(b.normals[0][1], 0.0);
        assert!(b.normals[0][0] > 0.0);
    }
}
