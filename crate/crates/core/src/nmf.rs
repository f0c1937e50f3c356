//! Low-rank nonnegative model of the noise variance and its
//! Itakura-Saito multiplicative updates.

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, RealMatrix, Rng, VARIANCE_FLOOR};

/// Floor on `W`, `H` and on every `WH` entry that gets inverted.
pub const NMF_FLOOR: f64 = VARIANCE_FLOOR;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfState {
    /// `F x K` spectral patterns.
    pub w: RealMatrix,
    /// `K x T` activations.
    pub h: RealMatrix,
}

impl NmfState {
    pub fn new(w: RealMatrix, h: RealMatrix) -> Result<Self> {
        if w.cols() != h.rows() {
            return Err(Error::shape("NmfState::new", format!("rank {}", w.cols()), h.rows()));
        }
        if w.as_slice().iter().chain(h.as_slice()).any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("NMF factors must be finite and nonnegative".into()));
        }
        let mut s = NmfState { w, h };
        s.apply_floor();
        Ok(s)
    }

    /// Random factors whose product sits near `mean_power` everywhere:
    /// entries are `sqrt(mean_power / K) * U(0.5, 1.5)`.
    pub fn init(freqs: usize, frames: usize, rank: usize, mean_power: f64, rng: &mut Rng) -> Result<Self> {
        if rank == 0 || freqs == 0 || frames == 0 {
            return Err(Error::InvalidInput(format!("NMF shape {freqs}x{rank}x{frames}")));
        }
        if !(mean_power > 0.0) || !mean_power.is_finite() {
            return Err(Error::InvalidInput(format!("NMF init power {mean_power}")));
        }
        let scale = (mean_power / rank as f64).sqrt();
        let w = RealMatrix::from_fn(freqs, rank, |_, _| scale * rng.uniform(0.5, 1.5));
        let h = RealMatrix::from_fn(rank, frames, |_, _| scale * rng.uniform(0.5, 1.5));
        NmfState::new(w, h)
    }

    pub fn rank(&self) -> usize {
        self.w.cols()
    }

    /// `WH` with every entry floored, `F x T`.
    pub fn wh(&self) -> RealMatrix {
        let mut p = self.w.matmul(&self.h).expect("factor shapes checked at construction");
        p.as_mut_slice().iter_mut().for_each(|x| *x = x.max(NMF_FLOOR));
        p
    }

    fn apply_floor(&mut self) {
        for x in self.w.as_mut_slice().iter_mut().chain(self.h.as_mut_slice()) {
            *x = x.max(NMF_FLOOR);
        }
    }
}

/// Expected noise power under the posterior, `F x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPower(pub RealMatrix);

impl PosteriorPower {
    pub fn new(v: RealMatrix) -> Result<Self> {
        if v.as_slice().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput("posterior power must be finite and nonnegative".into()));
        }
        Ok(PosteriorPower(v))
    }

    pub fn matrix(&self) -> &RealMatrix {
        &self.0
    }
}

/// `V[f, t] = sum_m r[t, m] * (|x[t, f] - eta_m[t, f]|^2 + nu_m[t, f])`.
///
/// `x`, `eta_m` and `nu_m` are `T x F`; `marginals` is `T x M`; the result is
/// `F x T` to match the factorization.
pub fn posterior_power(
    x: &ComplexMatrix,
    marginals: &RealMatrix,
    eta: &[ComplexMatrix],
    nu: &[RealMatrix],
) -> Result<PosteriorPower> {
    let (t_len, f_len) = x.shape();
    let m = marginals.cols();
    if marginals.rows() != t_len || eta.len() != m || nu.len() != m {
        return Err(Error::shape(
            "posterior_power",
            format!("{t_len} frames, {m} models"),
            format!("{} frames, {} eta, {} nu", marginals.rows(), eta.len(), nu.len()),
        ));
    }
    for (e, n) in eta.iter().zip(nu) {
        x.ensure_same_shape(e, "posterior_power eta")?;
        x.ensure_same_shape(n, "posterior_power nu")?;
    }
    let mut v = RealMatrix::zeros(f_len, t_len);
    for t in 0..t_len {
        let xr = x.row(t);
        for k in 0..m {
            let r = marginals[(t, k)];
            if r == 0.0 {
                continue;
            }
            let er = eta[k].row(t);
            let nr = nu[k].row(t);
            for f in 0..f_len {
                v[(f, t)] += r * ((xr[f] - er[f]).norm_sqr() + nr[f]);
            }
        }
    }
    PosteriorPower::new(v)
}

/// Itakura-Saito divergence `sum (V/U - ln(V/U) - 1)`.
pub fn is_divergence(v: &RealMatrix, u: &RealMatrix) -> Result<f64> {
    v.ensure_same_shape(u, "is_divergence")?;
    let mut d = 0.0;
    for (&a, &b) in v.as_slice().iter().zip(u.as_slice()) {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::InvalidInput(format!(
                "Itakura-Saito divergence needs positive entries, got {a} / {b}"
            )));
        }
        let q = a / b;
        d += q - q.ln() - 1.0;
    }
    Ok(d)
}

/// Returns `(V ⊙ (WH)^-2, (WH)^-1)`.
fn ratio_terms(state: &NmfState, v: &PosteriorPower) -> Result<(RealMatrix, RealMatrix)> {
    let wh = state.wh();
    wh.ensure_same_shape(v.matrix(), "NMF update")?;
    let num = v.matrix().zip_map(&wh, |a, b| a / (b * b))?;
    let den = wh.map(|b| 1.0 / b);
    Ok((num, den))
}

/// `H <- H ⊙ [Wᵀ(V ⊙ (WH)^-2)] / [Wᵀ(WH)^-1]`, floored.
pub fn update_h(state: &NmfState, v: &PosteriorPower) -> Result<NmfState> {
    let (a, b) = ratio_terms(state, v)?;
    let num = state.w.t_matmul(&a)?;
    let den = state.w.t_matmul(&b)?;
    let mut h = state.h.clone();
    for ((x, n), d) in h.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        *x = (*x * n / d.max(NMF_FLOOR)).max(NMF_FLOOR);
    }
    Ok(NmfState {
        w: state.w.clone(),
        h,
    })
}

/// `W <- W ⊙ [(V ⊙ (WH)^-2)Hᵀ] / [(WH)^-1 Hᵀ]`, floored.
pub fn update_w(state: &NmfState, v: &PosteriorPower) -> Result<NmfState> {
    let (a, b) = ratio_terms(state, v)?;
    let num = a.matmul_t(&state.h)?;
    let den = b.matmul_t(&state.h)?;
    let mut w = state.w.clone();
    for ((x, n), d) in w.as_mut_slice().iter_mut().zip(num.as_slice()).zip(den.as_slice()) {
        *x = (*x * n / d.max(NMF_FLOOR)).max(NMF_FLOOR);
    }
    Ok(NmfState {
        w,
        h: state.h.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn random_state(f: usize, k: usize, t: usize, rng: &mut Rng) -> NmfState {
        NmfState::new(
            RealMatrix::from_fn(f, k, |_, _| rng.uniform(0.1, 2.0)),
            RealMatrix::from_fn(k, t, |_, _| rng.uniform(0.1, 2.0)),
        )
        .unwrap()
    }

    fn max_rel(a: &RealMatrix, b: &RealMatrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y).abs() / y.abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn exact_factorization_is_a_fixed_point() {
        let mut rng = Rng::new(1);
        let s = random_state(12, 3, 9, &mut rng);
        let v = PosteriorPower::new(s.wh()).unwrap();
        let h = update_h(&s, &v).unwrap();
        assert!(max_rel(&h.h, &s.h) < 1e-12);
        assert_eq!(h.w, s.w);
        let w = update_w(&s, &v).unwrap();
        assert!(max_rel(&w.w, &s.w) < 1e-12);
        assert_eq!(w.h, s.h);
    }

    #[test]
    fn rank_one_recovery() {
        let mut rng = Rng::new(2);
        let truth = random_state(20, 1, 15, &mut rng);
        let v = PosteriorPower::new(truth.wh()).unwrap();
        let mut s = random_state(20, 1, 15, &mut rng);
        for _ in 0..500 {
            s = update_h(&s, &v).unwrap();
            s = update_w(&s, &v).unwrap();
        }
        let d = is_divergence(v.matrix(), &s.wh()).unwrap();
        assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = Rng::new(3);
        let truth = random_state(16, 2, 12, &mut rng);
        let init = random_state(16, 2, 12, &mut rng);
        for c in [1e-3, 1.0, 1e3] {
            let v = PosteriorPower::new(truth.wh().map(|x| c * x)).unwrap();
            let mut s = NmfState::new(init.w.map(|x| x * c.sqrt()), init.h.map(|x| x * c.sqrt())).unwrap();
            for _ in 0..2000 {
                s = update_w(&update_h(&s, &v).unwrap(), &v).unwrap();
            }
            let ratio = s.wh().mean() / v.matrix().mean();
            assert!((ratio - 1.0).abs() < 1e-3, "c = {c}: {ratio}");
        }
    }

    #[test]
    fn divergence_monotone_and_floored() {
        let mut rng = Rng::new(4);
        for _ in 0..10 {
            let v = PosteriorPower::new(RealMatrix::from_fn(10, 8, |_, _| rng.uniform(0.01, 5.0))).unwrap();
            let mut s = random_state(10, 3, 8, &mut rng);
            let mut prev = is_divergence(v.matrix(), &s.wh()).unwrap();
            for i in 0..100 {
                s = if i % 2 == 0 { update_h(&s, &v) } else { update_w(&s, &v) }.unwrap();
                let d = is_divergence(v.matrix(), &s.wh()).unwrap();
                assert!(d <= prev + 1e-10, "{d} > {prev}");
                assert!(s.w.as_slice().iter().chain(s.h.as_slice()).all(|&x| x >= NMF_FLOOR));
                prev = d;
            }
        }
    }

    #[test]
    fn divergence_values() {
        let u = RealMatrix::from_fn(3, 4, |r, c| 0.5 + r as f64 + 0.1 * c as f64);
        assert_eq!(is_divergence(&u, &u).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let v = u.map(|x| e * x);
        let expected = 12.0 * (e - 2.0);
        assert!((is_divergence(&v, &u).unwrap() - expected).abs() < 1e-12);
        let w = u.map(|x| x * x);
        assert!((is_divergence(&w, &u).unwrap() - is_divergence(&u, &w).unwrap()).abs() > 1e-3);
        assert!(is_divergence(&RealMatrix::zeros(3, 4), &u).is_err());
    }

    fn rand_c(t: usize, f: usize, rng: &mut Rng) -> ComplexMatrix {
        ComplexMatrix::from_fn(t, f, |_, _| Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
    }

    #[test]
    fn posterior_power_cases() {
        let mut rng = Rng::new(6);
        let (t, f) = (5, 7);
        let x = rand_c(t, f, &mut rng);
        let one = RealMatrix::filled(t, 1, 1.0);

        let v = posterior_power(&x, &one, &[x.clone()], &[RealMatrix::zeros(t, f)]).unwrap();
        assert!(v.matrix().as_slice().iter().all(|&p| p == 0.0));

        let nu = RealMatrix::from_fn(t, f, |_, _| rng.uniform(0.0, 1.0));
        let v = posterior_power(&x, &one, &[ComplexMatrix::zeros(t, f)], &[nu.clone()]).unwrap();
        for tt in 0..t {
            for ff in 0..f {
                let want = x[(tt, ff)].norm_sqr() + nu[(tt, ff)];
                assert!((v.matrix()[(ff, tt)] - want).abs() < 1e-15);
            }
        }

        // two models against a naive loop
        let eta = [rand_c(t, f, &mut rng), rand_c(t, f, &mut rng)];
        let nus = [
            RealMatrix::from_fn(t, f, |_, _| rng.uniform(0.0, 1.0)),
            RealMatrix::from_fn(t, f, |_, _| rng.uniform(0.0, 1.0)),
        ];
        let r = RealMatrix::from_fn(t, 2, |tt, m| if m == 0 { 0.3 + 0.1 * tt as f64 } else { 0.7 - 0.1 * tt as f64 });
        let v = posterior_power(&x, &r, &eta, &nus).unwrap();
        for ff in 0..f {
            for tt in 0..t {
                let mut want = 0.0;
                for m in 0..2 {
                    let d = x[(tt, ff)] - eta[m][(tt, ff)];
                    want += r[(tt, m)] * (d.re * d.re + d.im * d.im + nus[m][(tt, ff)]);
                }
                assert!((v.matrix()[(ff, tt)] - want).abs() < 1e-12);
            }
        }
        assert!(posterior_power(&x, &r, &eta[..1], &nus[..1]).is_err());
    }
}
