// Throwaway diagnostic: per-k denoiser loss on fresh draws.
use std::path::Path;
use trajstitch::formats;
use trajstitch_core::diffusion::{diffusion_loss, make_training_mask, NoiseSample, NoiseSchedule};
use trajstitch_core::nn::DenseMatrix;
use trajstitch_core::rng::substream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() {
    let out = Path::new("/tmp/run20k");
    let dataset = formats::load_dataset(&out.join("maze.jsonl")).unwrap();
    let stats = formats::load_stats(&out.join("maze.stats.json")).unwrap();
    let (den, k_steps) = formats::load_denoiser(&out.join("denoiser.json")).unwrap();
    let sched = NoiseSchedule::cosine(k_steps).unwrap();
    let h = den.horizon();
    let d = den.state_dim();
    let mut rng = substream(0, "diag", 0);

    let eligible: Vec<usize> = (0..dataset.len())
        .filter(|&i| dataset.trajectories()[i].len() >= h)
        .collect();
    for k in [1usize, 5, 25, 50, 75, 90, 95, 99, 100] {
        let mut batch = Vec::new();
        for _ in 0..256 {
            let ti = eligible[rng.random_range(0..eligible.len())];
            let t = &dataset.trajectories()[ti];
            let off = rng.random_range(0..=t.len() - h);
            let mut window = DenseMatrix::zeros(h, d);
            for (r, s) in t.states()[off..off + h].iter().enumerate() {
                window.row_mut(r).copy_from_slice(&stats.normalize(s));
            }
            let mut eps = DenseMatrix::zeros(h, d);
            for v in eps.data_mut() { *v = StandardNormal.sample(&mut rng); }
            batch.push(NoiseSample { window, observed: make_training_mask(h, &mut rng), k, epsilon: eps });
        }
        let loss = diffusion_loss(&den, &sched, &batch).unwrap();
        println!("k = {k:3}  loss = {loss:.5}  alpha = {:.5}  abar = {:.3e}", sched.alpha(k), sched.alpha_bar(k));
    }
}
