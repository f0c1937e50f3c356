//! Smoothing a two-state switch from noisy per-frame evidence.
use swvae::hmm::{forward_backward, update_hmm, HmmParams};
use swvae::numerics::{RealMatrix, Rng};

fn main() -> swvae::Result<()> {
    let mut rng = Rng::new(11);
    let truth: Vec<usize> = (0..60).map(|t| (t / 15) % 2).collect();
    // weak evidence: correct state favoured by 0.8 nats, plus unit noise
    let logits = RealMatrix::from_fn(truth.len(), 2, |t, m| if m == truth[t] { 0.8 } else { 0.0 } + rng.standard_normal());

    let raw_hits = (0..truth.len()).filter(|&t| (logits[(t, 1)] > logits[(t, 0)]) as usize == truth[t]).count();
    let params = HmmParams::sticky(2, 0.9)?;
    let post = forward_backward(&params, &logits)?;
    let hits = post.argmax().iter().zip(&truth).filter(|(a, b)| a == b).count();
    println!("frame-wise argmax {raw_hits}/60, smoothed {hits}/60, log-normalizer {:.3}", post.log_normalizer);

    let learned = update_hmm(&post);
    println!("re-estimated stay probabilities {:.3} {:.3}", learned.tau[(0, 0)], learned.tau[(1, 1)]);
    Ok(())
}
