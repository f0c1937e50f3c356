use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, Rng};

/// Per-frame visual embeddings, aligned one-to-one with STFT frames.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualSequence {
    pub values: RealMatrix,
    /// `true` where the frame was corrupted.
    pub occluded: Vec<bool>,
}

impl VisualSequence {
    pub fn new(values: RealMatrix) -> Result<Self> {
        if !values.all_finite() {
            return Err(Error::NonFinite("visual embedding".into()));
        }
        let t = values.rows();
        Ok(VisualSequence {
            values,
            occluded: vec![false; t],
        })
    }

    pub fn frames(&self) -> usize {
        self.values.rows()
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn occluded_count(&self) -> usize {
        self.occluded.iter().filter(|&&o| o).count()
    }
}

/// Replaces about `fraction` of the frames by standard-normal noise, in
/// non-overlapping bursts of `burst` consecutive frames.
pub fn occlude(vis: &VisualSequence, fraction: f64, burst: usize, rng: &mut Rng) -> Result<VisualSequence> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidInput(format!("occlusion fraction {fraction}")));
    }
    if burst == 0 {
        return Err(Error::InvalidInput("occlusion burst must be >= 1".into()));
    }
    let t_len = vis.frames();
    let mut out = vis.clone();
    let target = (fraction * t_len as f64).round() as usize;
    if target == 0 {
        return Ok(out);
    }
    let n_bursts = ((target as f64 / burst as f64).round() as usize).max(1);

    // Stars and bars: place n_bursts blocks with at least `gap` frames between
    // them, the free frames distributed uniformly at random.
    let gap = if n_bursts * burst + (n_bursts - 1) <= t_len { 1 } else { 0 };
    let used = (n_bursts * burst + (n_bursts - 1) * gap).min(t_len);
    let free = t_len - used;
    let mut offsets: Vec<usize> = (0..n_bursts).map(|_| rng.below(free + 1)).collect();
    offsets.sort_unstable();

    for (i, off) in offsets.into_iter().enumerate() {
        let start = off + i * (burst + gap);
        for t in start..(start + burst).min(t_len) {
            if !out.occluded[t] {
                out.occluded[t] = true;
                rng.fill_standard_normal(out.values.row_mut(t));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(t: usize, v: usize) -> VisualSequence {
        VisualSequence::new(RealMatrix::from_fn(t, v, |r, c| 0.01 * (r as f64) - 0.1 * c as f64)).unwrap()
    }

    fn runs(mask: &[bool]) -> Vec<usize> {
        let mut out = vec![];
        let mut cur = 0;
        for &m in mask {
            if m {
                cur += 1;
            } else if cur > 0 {
                out.push(cur);
                cur = 0;
            }
        }
        if cur > 0 {
            out.push(cur);
        }
        out
    }

    #[test]
    fn zero_fraction_is_identity() {
        let v = seq(50, 4);
        let o = occlude(&v, 0.0, 20, &mut Rng::new(1)).unwrap();
        assert_eq!(o, v);
        assert_eq!(o.occluded_count(), 0);
    }

    #[test]
    fn one_third_in_bursts_of_twenty() {
        for seed in 0..20 {
            let v = seq(600, 8);
            let o = occlude(&v, 1.0 / 3.0, 20, &mut Rng::new(seed)).unwrap();
            let n = o.occluded_count();
            assert!((160..=200).contains(&n), "{n}");
            let r = runs(&o.occluded);
            assert!(r.iter().all(|&len| len == 20), "{r:?}");
            // unmasked frames untouched
            for t in 0..600 {
                if !o.occluded[t] {
                    assert_eq!(o.frame(t), v.frame(t));
                }
            }
        }
    }

    #[test]
    fn occluded_frames_are_standard_normal() {
        let v = seq(600, 8);
        let o = occlude(&v, 1.0 / 3.0, 20, &mut Rng::new(77)).unwrap();
        let vals: Vec<f64> = (0..600)
            .filter(|&t| o.occluded[t])
            .flat_map(|t| o.frame(t).to_vec())
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        // sd of sample variance ~ sqrt(2/n)
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n).sqrt() + 0.02, "{var}");
    }

    #[test]
    fn full_occlusion_and_bad_args() {
        let v = seq(45, 2);
        let o = occlude(&v, 1.0, 20, &mut Rng::new(3)).unwrap();
        assert!(o.occluded_count() >= 40);
        assert!(occlude(&v, 1.5, 20, &mut Rng::new(3)).is_err());
        assert!(occlude(&v, 0.5, 0, &mut Rng::new(3)).is_err());
    }
}
