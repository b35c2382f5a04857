use crate::error::{Error, Result};

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Logit of one entity's probabilities.
///
/// Exact 0s and 1s are replaced by the smallest and largest values the
/// entity has strictly inside (0, 1).
pub fn logit_transform(values: &[Option<f64>]) -> Result<Vec<Option<f64>>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &p in values.iter().flatten() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        if p > 0.0 && p < 1.0 {
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    values
        .iter()
        .map(|v| {
            v.map(|p| {
                if lo > hi {
                    return Err(Error::InvalidInput(
                        "no probability strictly inside (0, 1) to clamp 0 or 1 to".into(),
                    ));
                }
                Ok(logit(p.clamp(lo, hi)))
            })
            .transpose()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values() {
        assert_eq!(logit(0.5), 0.0);
        assert!((logit(0.9) - 2.197_224_577_336_219_6).abs() < 1e-12);
    }

    #[test]
    fn clamps_to_observed_extremes() {
        let out = logit_transform(&[Some(0.2), Some(1.0), None, Some(0.97), Some(0.0)]).unwrap();
        assert_eq!(out[1], Some(logit(0.97)));
        assert_eq!(out[2], None);
        assert_eq!(out[4], Some(logit(0.2)));
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(logit_transform(&[Some(1.2)]).is_err());
        assert!(logit_transform(&[Some(0.0), Some(1.0)]).is_err());
        assert_eq!(logit_transform(&[None]).unwrap(), vec![None]);
    }
}
