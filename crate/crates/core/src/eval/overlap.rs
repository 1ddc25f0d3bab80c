use crate::error::{invalid, Result};
use crate::volio::Mask;

/// Voxel counts behind every overlap metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub pred: usize,
    pub gt: usize,
    pub intersection: usize,
}

impl OverlapCounts {
    pub fn of(pred: &Mask, gt: &Mask) -> Result<Self> {
        pred.check_same_grid(gt)?;
        let mut c = Self::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            c.pred += p as usize;
            c.gt += g as usize;
            c.intersection += (p && g) as usize;
        }
        Ok(c)
    }

    pub fn union(&self) -> usize {
        self.pred + self.gt - self.intersection
    }

    /// `2|P∩G| / (|P| + |G|)`; 1 when both are empty.
    pub fn dice(&self) -> f64 {
        let total = self.pred + self.gt;
        if total == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / total as f64
        }
    }

    /// `|P∩G| / |P∪G|`; 1 when both are empty.
    pub fn jaccard(&self) -> f64 {
        let u = self.union();
        if u == 0 {
            1.0
        } else {
            self.intersection as f64 / u as f64
        }
    }

    /// Volumetric overlap error `1 − J`.
    pub fn voe(&self) -> f64 {
        1.0 - self.jaccard()
    }

    /// Signed `(|P| − |G|) / |G|`; `None` when the ground truth is empty.
    pub fn rvd(&self) -> Option<f64> {
        (self.gt > 0).then(|| (self.pred as f64 - self.gt as f64) / self.gt as f64)
    }
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    Ok(OverlapCounts::of(pred, gt)?.dice())
}

/// `(voe, rvd)`.
pub fn overlap_metrics(pred: &Mask, gt: &Mask) -> Result<(f64, Option<f64>)> {
    let c = OverlapCounts::of(pred, gt)?;
    Ok((c.voe(), c.rvd()))
}

/// Dice over voxel counts pooled across cases.
pub fn global_dice(cases: &[OverlapCounts]) -> Result<f64> {
    if cases.is_empty() {
        return Err(invalid!("global dice needs at least one case"));
    }
    let pooled = cases.iter().fold(OverlapCounts::default(), |a, c| OverlapCounts {
        pred: a.pred + c.pred,
        gt: a.gt + c.gt,
        intersection: a.intersection + c.intersection,
    });
    Ok(pooled.dice())
}

/// `(rmse, max_error)` over `(predicted, true)` burden pairs.
pub fn burden_stats(pairs: &[(f64, f64)]) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(invalid!("burden statistics need at least one case"));
    }
    let n = pairs.len() as f64;
    let mse = pairs.iter().map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
    let max = pairs.iter().map(|(p, t)| (p - t).abs()).fold(0.0, f64::max);
    Ok((mse.sqrt(), max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(bits: &[bool]) -> Mask {
        Mask::new([bits.len(), 1, 1], [1.0; 3], bits.to_vec()).unwrap()
    }

    #[test]
    fn overlap_examples() {
        let a = m(&[true, true, false, false]);
        let b = m(&[false, true, true, false]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&a, &m(&[false, false, true, true])).unwrap(), 0.0);
        assert_eq!(dice(&m(&[false; 4]), &m(&[false; 4])).unwrap(), 1.0);
        let (voe, rvd) = overlap_metrics(&a, &m(&[false, false, true, true])).unwrap();
        assert_eq!((voe, rvd), (1.0, Some(0.0)));
        let c = OverlapCounts { pred: 110, gt: 100, intersection: 100 };
        assert!((c.rvd().unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(OverlapCounts { pred: 3, gt: 0, intersection: 0 }.rvd(), None);
    }

    #[test]
    fn global_dice_pools_counts() {
        let perfect = OverlapCounts { pred: 10, gt: 10, intersection: 10 };
        let miss = OverlapCounts { pred: 10, gt: 10, intersection: 0 };
        assert_eq!(global_dice(&[perfect, miss]).unwrap(), 0.5);
        assert_eq!(global_dice(&[miss]).unwrap(), miss.dice());
        assert_eq!(global_dice(&[OverlapCounts::default(); 2]).unwrap(), 1.0);
    }

    #[test]
    fn burden_examples() {
        let (rmse, max) = burden_stats(&[(0.11, 0.1), (0.22, 0.2)]).unwrap();
        assert!((rmse - ((0.0001f64 + 0.0004) / 2.0).sqrt()).abs() < 1e-12);
        assert!((max - 0.02).abs() < 1e-12);
        assert_eq!(burden_stats(&[(0.3, 0.3)]).unwrap(), (0.0, 0.0));
        assert!(burden_stats(&[]).is_err());
    }
}
