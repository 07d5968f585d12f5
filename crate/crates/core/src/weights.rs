use crate::{Error, Result};

/// Barycentric weights: strictly positive, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights(Vec<f64>);

const SUM_TOL: f64 = 1e-9;

impl Weights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidWeights(format!("weight {v} is not positive")));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {total}")));
        }
        Ok(Weights(values))
    }

    /// Rescales positive values to sum to one.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let total: f64 = values.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::InvalidWeights(format!("weights sum to {total}")));
        }
        Self::new(values.into_iter().map(|v| v / total).collect())
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::EmptyInput);
        }
        Ok(Weights(vec![1.0 / m as f64; m]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn check_len(&self, m: usize) -> Result<()> {
        if self.0.len() != m {
            return Err(Error::InvalidWeights(format!(
                "{} weights for {} measures",
                self.0.len(),
                m
            )));
        }
        Ok(())
    }
}

impl std::ops::Index<usize> for Weights {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_and_unnormalized() {
        assert!(Weights::new(vec![0.5, 0.5]).is_ok());
        assert!(Weights::new(vec![1.0, 0.0]).is_err());
        assert!(Weights::new(vec![0.7, 0.7]).is_err());
        assert!(Weights::new(vec![]).is_err());
    }

    #[test]
    fn normalizes_ratios() {
        let w = Weights::normalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
    }
}
