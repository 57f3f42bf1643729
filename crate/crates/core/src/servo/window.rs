use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Result};

/// The last `capacity` pairs of applied joint velocity and observed
/// feature velocity, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct VisuoMotorWindow {
    capacity: usize,
    samples: VecDeque<(DVector<f64>, DVector<f64>)>,
}

impl VisuoMotorWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(domain("window capacity must be > 0"));
        }
        Ok(Self {
            capacity,
            samples: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.capacity
    }

    pub fn samples(&self) -> impl Iterator<Item = &(DVector<f64>, DVector<f64>)> {
        self.samples.iter()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn push_sample(&mut self, q_dot: DVector<f64>, p_dot: DVector<f64>) -> Result<()> {
        if !q_dot.iter().chain(p_dot.iter()).all(|v| v.is_finite()) {
            return Err(domain("window samples must be finite"));
        }
        if let Some((q0, p0)) = self.samples.front() {
            if q0.len() != q_dot.len() || p0.len() != p_dot.len() {
                return Err(domain("window sample dimensions changed"));
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((q_dot, p_dot));
        Ok(())
    }

    /// `(Q̇, Ṗ)`: one row per sample, `n×J` and `n×2K`.
    pub fn stacks(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let (q0, p0) = self.samples.front()?;
        let n = self.samples.len();
        let q = DMatrix::from_fn(n, q0.len(), |r, c| self.samples[r].0[c]);
        let p = DMatrix::from_fn(n, p0.len(), |r, c| self.samples[r].1[c]);
        Some((q, p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn ring_semantics() {
        let mut w = VisuoMotorWindow::new(3).unwrap();
        w.push_sample(v(&[0.0]), v(&[0.0, 0.0])).unwrap();
        assert_eq!(w.len(), 1);
        for i in 1..4 {
            w.push_sample(v(&[f64::from(i)]), v(&[0.0, 0.0])).unwrap();
        }
        assert_eq!(w.len(), 3);
        let order: Vec<f64> = w.samples().map(|s| s.0[0]).collect();
        assert_eq!(order, vec![1.0, 2.0, 3.0]);
        let (q, p) = w.stacks().unwrap();
        assert_eq!((q.nrows(), q.ncols(), p.ncols()), (3, 1, 2));
        assert_eq!(q[(0, 0)], 1.0);
    }

    #[test]
    fn rejects_bad_samples() {
        let mut w = VisuoMotorWindow::new(2).unwrap();
        assert!(w.push_sample(v(&[f64::NAN]), v(&[0.0])).is_err());
        w.push_sample(v(&[1.0]), v(&[0.0])).unwrap();
        assert!(w.push_sample(v(&[1.0, 2.0]), v(&[0.0])).is_err());
        assert!(VisuoMotorWindow::new(0).is_err());
    }
}
