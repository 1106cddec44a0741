use mvlab_core::diffusion::{train_denoiser, DenoiserCfg, ToyDenoiser, TrainCfg};
use mvlab_core::scenes::{generate_dataset, DatasetCfg};
use mvlab_core::text::Vocabulary;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(600);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-4);
    let scenes: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(8);

    let vocab = Vocabulary::default();
    let data = generate_dataset(&DatasetCfg::new(scenes, 16, 21), &vocab).unwrap();
    let cfg = DenoiserCfg {
        image_size: 16,
        base_channels: 16,
        mid_channels: 32,
        emb_dim: 32,
        text_dim: 16,
        heads: 2,
        vocab_size: 19,
    };
    let model = ToyDenoiser::new(cfg, 11).unwrap();
    let train_cfg = TrainCfg {
        steps,
        lr,
        log_every: (steps / 12).max(1),
        ..Default::default()
    };
    let t0 = std::time::Instant::now();
    let report = train_denoiser(&model, &data, &train_cfg).unwrap();
    for (s, l) in &report.history {
        println!("step {s}: {l:.4}");
    }
    println!("elapsed {:?}", t0.elapsed());
}
