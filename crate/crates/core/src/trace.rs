//! Label traces: per-tag exponentially discounted counts of observed labels,
//! `T_t = γ·T_{t−1} + onehot(y_t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelTraceState {
    values: Vec<f64>,
    gamma: f64,
}

impl LabelTraceState {
    /// Empty trace over `k` labels.
    pub fn new(k: usize, gamma: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation(
                "label trace needs at least one label".into(),
            ));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Validation(format!(
                "trace discount must lie in [0, 1], got {gamma}"
            )));
        }
        Ok(LabelTraceState {
            values: vec![0.0; k],
            gamma,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn num_labels(&self) -> usize {
        self.values.len()
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Discounts the trace and records one observation of `label`.
    pub fn observe(&mut self, label: usize) -> Result<()> {
        if label >= self.values.len() {
            return Err(Error::Index {
                what: "label trace",
                index: label,
                bound: self.values.len(),
            });
        }
        for v in &mut self.values {
            *v *= self.gamma;
        }
        self.values[label] += 1.0;
        Ok(())
    }

    pub fn updated(&self, label: usize) -> Result<Self> {
        let mut next = self.clone();
        next.observe(label)?;
        Ok(next)
    }
}

/// The trace *before* each position: entry `t` summarizes `labels[..t]`, so
/// the first entry is all-zero and the label at `t` never appears in its own
/// entry.
pub fn trace_from_sequence(labels: &[usize], k: usize, gamma: f64) -> Result<Vec<LabelTraceState>> {
    let mut state = LabelTraceState::new(k, gamma)?;
    let mut out = Vec::with_capacity(labels.len());
    for &y in labels {
        out.push(state.clone());
        state.observe(y)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct summation of the discounted indicator counts.
    fn closed_form(labels: &[usize], k: usize, gamma: f64) -> Vec<f64> {
        let t = labels.len();
        let mut out = vec![0.0; k];
        for (idx, &y) in labels.iter().enumerate() {
            out[y] += gamma.powi((t - 1 - idx) as i32);
        }
        out
    }

    #[test]
    fn init_is_zero_and_validates_gamma() {
        let s = LabelTraceState::new(5, 0.9).unwrap();
        assert_eq!(s.values(), &[0.0; 5]);
        assert!(matches!(
            LabelTraceState::new(5, 1.2),
            Err(Error::Validation(_))
        ));
        assert!(LabelTraceState::new(5, -0.1).is_err());
        assert!(LabelTraceState::new(0, 0.5).is_err());
    }

    #[test]
    fn noun_verb_noun_at_half() {
        let (noun, verb) = (0, 1);
        let mut s = LabelTraceState::new(3, 0.5).unwrap();
        for y in [noun, verb, noun] {
            s.observe(y).unwrap();
        }
        assert_eq!(s.values(), &[1.25, 0.5, 0.0]);
    }

    #[test]
    fn gamma_zero_is_one_hot_of_last_label() {
        let mut s = LabelTraceState::new(4, 0.0).unwrap();
        for y in [3, 1, 1, 2, 0, 2] {
            s.observe(y).unwrap();
            let mut expect = vec![0.0; 4];
            expect[y] = 1.0;
            assert_eq!(s.values(), expect.as_slice());
        }
    }

    #[test]
    fn repeated_label_is_geometric_series() {
        for gamma in [0.5, 0.67, 0.9, 0.99] {
            let mut s = LabelTraceState::new(2, gamma).unwrap();
            for n in 1..=40 {
                s.observe(1).unwrap();
                let expect = (1.0 - f64::powi(gamma, n)) / (1.0 - gamma);
                assert!((s.values()[1] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_label() {
        let mut s = LabelTraceState::new(3, 0.5).unwrap();
        assert!(matches!(s.observe(3), Err(Error::Index { index: 3, .. })));
    }

    #[test]
    fn sequence_is_shifted_by_one() {
        let labels = [2, 0, 0, 1];
        let seq = trace_from_sequence(&labels, 3, 0.8).unwrap();
        assert_eq!(seq.len(), 4);
        assert_eq!(seq[0].values(), &[0.0; 3]);
        let mut s = LabelTraceState::new(3, 0.8).unwrap();
        for t in 1..labels.len() {
            s.observe(labels[t - 1]).unwrap();
            assert_eq!(seq[t], s);
        }
    }

    proptest! {
        #[test]
        fn recursive_matches_closed_form(
            labels in proptest::collection::vec(0usize..6, 1..300),
            gi in 0usize..6,
        ) {
            let gamma = [0.0, 0.5, 0.67, 0.8, 0.9, 0.99][gi];
            let mut s = LabelTraceState::new(6, gamma).unwrap();
            for (t, &y) in labels.iter().enumerate() {
                s.observe(y).unwrap();
                let cf = closed_form(&labels[..=t], 6, gamma);
                for (a, b) in s.values().iter().zip(&cf) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                let total: f64 = s.values().iter().sum();
                let geo: f64 = (0..=t).map(|i| gamma.powi(i as i32)).sum();
                prop_assert!((total - geo).abs() < 1e-12);
                let bound = if gamma < 1.0 { ((t + 1) as f64).min(1.0 / (1.0 - gamma)) } else { (t + 1) as f64 };
                prop_assert!(s.values().iter().all(|&v| v >= 0.0 && v <= bound + 1e-12));
            }
        }
    }
}
