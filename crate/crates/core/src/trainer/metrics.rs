use crate::error::{Error, Result};

/// Lower-triangular accuracy table: `get(t, tau)` is the accuracy on task
/// `tau` after training through task `t` (both 0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            rows: (0..tasks).map(|t| vec![f64::NAN; t + 1]).collect(),
        }
    }

    /// Build from explicit rows; row `t` must hold `t + 1` entries in `[0, 1]`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (t, r) in rows.iter().enumerate() {
            if r.len() != t + 1 {
                return Err(Error::shape("accuracy matrix", format!("row {t} has {} entries", r.len())));
            }
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Contract(format!("row {t} has an accuracy outside [0, 1]")));
            }
        }
        Ok(Self { rows })
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn set_row(&mut self, t: usize, row: Vec<f64>) -> Result<()> {
        if t >= self.rows.len() || row.len() != t + 1 {
            return Err(Error::shape("accuracy matrix", format!("row {t} with {} entries", row.len())));
        }
        self.rows[t] = row;
        Ok(())
    }

    pub fn get(&self, t: usize, tau: usize) -> f64 {
        self.rows[t][tau]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.rows.len() {
            return Err(Error::Contract(format!("task {t} is out of range for {} tasks", self.rows.len())));
        }
        if self.rows[t].iter().any(|v| v.is_nan()) {
            return Err(Error::Contract(format!("row {t} is not populated")));
        }
        Ok(())
    }

    /// Mean accuracy over tasks `0..=t` after finishing task `t`.
    pub fn average_accuracy(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.rows[t].iter().sum::<f64>() / (t + 1) as f64)
    }

    /// Mean over earlier tasks of the drop from their best earlier accuracy.
    pub fn forgetting(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        if t == 0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for tau in 0..t {
            let best = (tau..t).map(|s| self.rows[s][tau]).fold(f64::NEG_INFINITY, f64::max);
            total += best - self.rows[t][tau];
        }
        Ok(total / t as f64)
    }

    /// `(after_task, eval_task, accuracy)` for every populated entry.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(t, r)| r.iter().enumerate().map(move |(tau, &a)| (t, tau, a)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_and_forgetting_by_hand() {
        let a = AccuracyMatrix::from_rows(vec![vec![0.9], vec![0.7, 0.8]]).unwrap();
        assert_eq!(a.average_accuracy(0).unwrap(), 0.9);
        assert_eq!(a.forgetting(0).unwrap(), 0.0);
        assert_eq!(a.average_accuracy(1).unwrap(), 0.75);
        assert!((a.forgetting(1).unwrap() - 0.2).abs() < 1e-15);
        assert!(a.average_accuracy(2).is_err());
    }

    #[test]
    fn unpopulated_rows_are_errors() {
        let a = AccuracyMatrix::new(2);
        assert!(a.average_accuracy(1).is_err());
        assert!(AccuracyMatrix::from_rows(vec![vec![1.5]]).is_err());
    }
}
