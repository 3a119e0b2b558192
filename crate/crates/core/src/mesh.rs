//! Uniform tensor meshes in `ℝ^d`, row-major with the last axis fastest.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    start: Vec<f64>,
    stop: Vec<f64>,
    points: Vec<usize>,
}

impl Mesh {
    pub fn new(start: Vec<f64>, stop: Vec<f64>, points: Vec<usize>) -> Result<Self> {
        if start.is_empty() || start.len() != stop.len() || start.len() != points.len() {
            return Err(Error::DimensionMismatch("mesh start/stop/points lengths differ".into()));
        }
        for a in 0..start.len() {
            let ok = match points[a] {
                0 => false,
                1 => start[a] == stop[a],
                _ => stop[a] > start[a],
            };
            if !ok || !start[a].is_finite() || !stop[a].is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "mesh axis {a}: [{}, {}] with {} points",
                    start[a], stop[a], points[a]
                )));
            }
        }
        Ok(Self { start, stop, points })
    }

    /// `points` nodes on `[a, b]`.
    pub fn line(a: f64, b: f64, points: usize) -> Result<Self> {
        Self::new(vec![a], vec![b], vec![points])
    }

    /// The single point `x`.
    pub fn point(x: &[f64]) -> Self {
        Self { start: x.to_vec(), stop: x.to_vec(), points: vec![1; x.len()] }
    }

    /// `points` per axis, centred on `x` with half-width `w`.
    pub fn centred(x: &[f64], w: f64, points: usize) -> Result<Self> {
        Self::new(
            x.iter().map(|v| v - w).collect(),
            x.iter().map(|v| v + w).collect(),
            vec![points; x.len()],
        )
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn stop(&self) -> &[f64] {
        &self.stop
    }

    pub fn pitch(&self, axis: usize) -> f64 {
        if self.points[axis] < 2 {
            0.0
        } else {
            (self.stop[axis] - self.start[axis]) / (self.points[axis] - 1) as f64
        }
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.points[axis] {
            self.stop[axis]
        } else {
            self.start[axis] + i as f64 * self.pitch(axis)
        }
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = flat % self.points[a];
            flat /= self.points[a];
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.points).fold(0, |acc, (&i, &p)| acc * p + i)
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.coordinate(a, i))
            .collect()
    }

    pub fn nodes(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.node(i)).collect()
    }

    /// Piecewise-linear interpolation of nodal `values` on a 1-d mesh.
    /// Returns `None` outside the mesh.
    pub fn interpolate_1d(&self, values: &[f64], x: f64) -> Option<f64> {
        debug_assert_eq!(self.dim(), 1);
        let (a, b, n) = (self.start[0], self.stop[0], self.points[0]);
        if !(x >= a && x <= b) {
            return None;
        }
        if n == 1 {
            return Some(values[0]);
        }
        let h = self.pitch(0);
        let pos = ((x - a) / h).min((n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        Some((1.0 - w) * values[i] + w * values[i + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let m = Mesh::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 5]).unwrap();
        assert_eq!(m.len(), 15);
        for f in 0..15 {
            assert_eq!(m.flat_index(&m.multi_index(f)), f);
        }
        assert_eq!(m.node(7), vec![0.5, 0.0]);
        assert_eq!(m.coordinate(1, 4), 1.0);
    }

    #[test]
    fn interpolation_is_exact_for_affine_data() {
        let m = Mesh::line(-2.0, 2.0, 9).unwrap();
        let vals: Vec<f64> = m.nodes().iter().map(|x| 3.0 * x[0] - 1.0).collect();
        for x in [-2.0, -1.3, 0.0, 0.77, 2.0] {
            assert!((m.interpolate_1d(&vals, x).unwrap() - (3.0 * x - 1.0)).abs() < 1e-14);
        }
        assert!(m.interpolate_1d(&vals, 2.1).is_none());
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(Mesh::line(1.0, 0.0, 3).is_err());
        assert!(Mesh::line(0.0, 1.0, 0).is_err());
        assert!(Mesh::line(0.0, 1.0, 1).is_err());
        assert_eq!(Mesh::point(&[0.5]).len(), 1);
    }
}
