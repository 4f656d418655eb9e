// Temporary: time training steps for the acceptance-scale runs.
use syncx_core::datagen::{generate_dataset, SceneSpec};
use syncx_core::model::{build, BuildConfig, InitConfig};
use syncx_core::trainer::{train, TrainConfig};

fn main() {
    let mut spec = SceneSpec::tetrominoes(24, 3, 1);
    spec.palette = vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
    let data = generate_dataset(&spec, 64).unwrap();
    for bottleneck in [true, false] {
        let mut cfg = BuildConfig::new(24).with_channels([32, 64, 64]);
        if !bottleneck {
            cfg = cfg.without_bottleneck();
        }
        let mut net = build::<f32>(&cfg).unwrap();
        net.init_weights(&InitConfig { seed: 7 });
        let tcfg = TrainConfig { steps: 12, batch: 32, n_train: 3, seed: 3, ..TrainConfig::default() };
        let t0 = std::time::Instant::now();
        let m = train(&mut net, &data, None, &tcfg).unwrap();
        let dt = t0.elapsed().as_secs_f64();
        println!(
            "bottleneck={bottleneck}: {:.3} s/step (12 steps in {dt:.2}s), loss {:.5} -> {:.5}",
            dt / 12.0,
            m.records[0].loss,
            m.final_loss
        );
    }
}
