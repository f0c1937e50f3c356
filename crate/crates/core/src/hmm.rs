//! Scaled forward-backward smoothing over the switching variable and the
//! Baum-Welch re-estimation of its initial and transition distributions.

use crate::error::{Error, Result};
use crate::numerics::RealMatrix;

/// Floor applied to initial and transition probabilities after re-estimation.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    /// Initial distribution over the `M` states.
    pub lambda: Vec<f64>,
    /// Row-stochastic `M x M` transition matrix, `tau[(from, to)]`.
    pub tau: RealMatrix,
}

impl HmmParams {
    pub fn new(lambda: Vec<f64>, tau: RealMatrix) -> Result<Self> {
        let m = lambda.len();
        if m == 0 || tau.shape() != (m, m) {
            return Err(Error::shape("HmmParams::new", format!("{m}x{m} transitions"), format!("{:?}", tau.shape())));
        }
        check_distribution(&lambda, "initial distribution")?;
        for r in 0..m {
            check_distribution(tau.row(r), "transition row")?;
        }
        Ok(HmmParams { lambda, tau })
    }

    pub fn uniform(m: usize) -> Self {
        let p = 1.0 / m as f64;
        HmmParams {
            lambda: vec![p; m],
            tau: RealMatrix::filled(m, m, p),
        }
    }

    /// Uniform start, staying in the current state with probability `stay`.
    pub fn sticky(m: usize, stay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&stay) {
            return Err(Error::InvalidInput(format!("self-transition probability {stay}")));
        }
        if m == 1 {
            return Ok(Self::uniform(1));
        }
        let off = (1.0 - stay) / (m - 1) as f64;
        let tau = RealMatrix::from_fn(m, m, |i, j| if i == j { stay } else { off });
        Self::new(vec![1.0 / m as f64; m], tau)
    }

    pub fn states(&self) -> usize {
        self.lambda.len()
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Smoothed posterior of the switching chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPosterior {
    /// `T x M`, row `t` is `p(m_t | all frames)`.
    pub marginals: RealMatrix,
    /// `T - 1` slabs; slab `t - 1` holds `p(m_{t-1} = i, m_t = j)` at `(i, j)`.
    pub joints: Vec<RealMatrix>,
    /// Log of the total (unnormalized) probability of the emissions.
    pub log_normalizer: f64,
}

impl SwitchPosterior {
    /// The posterior of a chain with no information yet: uniform marginals and joints.
    pub fn uniform(frames: usize, states: usize) -> Self {
        let p = 1.0 / states as f64;
        SwitchPosterior {
            marginals: RealMatrix::filled(frames, states, p),
            joints: (1..frames).map(|_| RealMatrix::filled(states, states, p * p)).collect(),
            log_normalizer: 0.0,
        }
    }

    pub fn frames(&self) -> usize {
        self.marginals.rows()
    }

    pub fn states(&self) -> usize {
        self.marginals.cols()
    }

    /// Most probable state per frame.
    pub fn argmax(&self) -> Vec<usize> {
        self.marginals
            .rows_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::MIN), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
                    .0
            })
            .collect()
    }
}

/// Exact smoothing with emissions proportional to `exp(logits[(t, m)])`.
///
/// Each frame's logits are shifted by their maximum before exponentiation;
/// the shift is added back into the log-normalizer.
pub fn forward_backward(params: &HmmParams, logits: &RealMatrix) -> Result<SwitchPosterior> {
    let m = params.states();
    let t_len = logits.rows();
    if logits.cols() != m {
        return Err(Error::shape("forward_backward", format!("{m} states"), logits.cols()));
    }
    if t_len == 0 {
        return Err(Error::InvalidInput("forward_backward needs at least one frame".into()));
    }
    if !logits.all_finite() {
        return Err(Error::NonFinite("emission logits".into()));
    }

    let mut emis = RealMatrix::zeros(t_len, m);
    let mut log_norm = 0.0;
    for t in 0..t_len {
        let row = logits.row(t);
        let shift = row.iter().cloned().fold(f64::MIN, f64::max);
        log_norm += shift;
        for (e, &l) in emis.row_mut(t).iter_mut().zip(row) {
            *e = (l - shift).exp();
        }
    }

    let tau = &params.tau;
    let mut alpha = RealMatrix::zeros(t_len, m);
    let mut scale = vec![0.0; t_len];
    for t in 0..t_len {
        let mut c = 0.0;
        for j in 0..m {
            let prior = if t == 0 {
                params.lambda[j]
            } else {
                (0..m).map(|i| alpha[(t - 1, i)] * tau[(i, j)]).sum()
            };
            let a = prior * emis[(t, j)];
            alpha[(t, j)] = a;
            c += a;
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NonFinite(format!("forward normalizer at frame {t} = {c}")));
        }
        alpha.row_mut(t).iter_mut().for_each(|a| *a /= c);
        scale[t] = c;
        log_norm += c.ln();
    }

    let mut beta = RealMatrix::filled(t_len, m, 1.0);
    for t in (0..t_len.saturating_sub(1)).rev() {
        for i in 0..m {
            beta[(t, i)] = (0..m)
                .map(|j| tau[(i, j)] * emis[(t + 1, j)] * beta[(t + 1, j)])
                .sum::<f64>()
                / scale[t + 1];
        }
    }

    let mut marginals = RealMatrix::zeros(t_len, m);
    for t in 0..t_len {
        let row = marginals.row_mut(t);
        for i in 0..m {
            row[i] = alpha[(t, i)] * beta[(t, i)];
        }
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|r| *r /= s);
    }

    let joints = (1..t_len)
        .map(|t| {
            let mut z = RealMatrix::from_fn(m, m, |i, j| {
                alpha[(t - 1, i)] * tau[(i, j)] * emis[(t, j)] * beta[(t, j)] / scale[t]
            });
            let s = z.sum();
            z.as_mut_slice().iter_mut().for_each(|v| *v /= s);
            z
        })
        .collect();

    Ok(SwitchPosterior {
        marginals,
        joints,
        log_normalizer: log_norm,
    })
}

/// Re-estimates `lambda` and `tau` from a smoothed posterior.
///
/// Entries are floored at [`PROB_FLOOR`] and renormalized. With a single
/// frame there is no transition evidence and `tau` is uniform.
pub fn update_hmm(post: &SwitchPosterior) -> HmmParams {
    let m = post.states();
    let mut lambda = post.marginals.row(0).to_vec();
    floor_normalize(&mut lambda);

    let mut counts = RealMatrix::zeros(m, m);
    for z in &post.joints {
        for (c, &v) in counts.as_mut_slice().iter_mut().zip(z.as_slice()) {
            *c += v;
        }
    }
    let mut tau = RealMatrix::filled(m, m, 1.0 / m as f64);
    if !post.joints.is_empty() {
        for i in 0..m {
            let row = counts.row(i);
            let out = tau.row_mut(i);
            out.copy_from_slice(row);
            floor_normalize(out);
        }
    }
    HmmParams { lambda, tau }
}

fn floor_normalize(p: &mut [f64]) {
    p.iter_mut().for_each(|x| *x = x.max(PROB_FLOOR));
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
}
