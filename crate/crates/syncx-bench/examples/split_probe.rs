// Temporary: forward vs backward split timing on the no-bottleneck net.
use syncx_core::autodiff::Graph;
use syncx_core::datagen::{generate_dataset, SceneSpec};
use syncx_core::model::{build, BuildConfig, InitConfig};
use syncx_core::rng::rng_for;
use syncx_core::tensor::Tensor;
use syncx_core::trainer::{init_phases, rollout_graph, PhaseInit};

fn main() {
    let spec = SceneSpec::tetrominoes(24, 3, 1);
    let data = generate_dataset(&spec, 32).unwrap();
    let mut images = Vec::new();
    for s in &data {
        images.extend(s.image.iter().copied());
    }
    let images = Tensor::from_vec(&[32, 24, 24, 3], images);
    let mut phases_data = Vec::new();
    for i in 0..32 {
        let mut rng = rng_for(5, i);
        phases_data.extend_from_slice(init_phases::<f32>(24, 24, 3, PhaseInit::default(), &mut rng).data());
    }
    let phases = Tensor::from_vec(&[32, 24, 24, 3], phases_data);

    let mut net = build::<f32>(&BuildConfig::new(24).with_channels([32, 64, 64]).without_bottleneck()).unwrap();
    net.init_weights(&InitConfig { seed: 7 });

    let mut scratch = syncx_core::autodiff::ScratchPool::new();
    // warmup
    for _ in 0..2 {
        let mut g = Graph::with_scratch(std::mem::take(&mut scratch));
        let ro = rollout_graph(&net, &mut g, &images, &phases, 3, false).unwrap();
        net.store.zero_grads();
        g.backward(ro.loss, &mut net.store).unwrap();
        scratch = g.into_scratch();
    }
    let iters = 5;
    let (mut fwd_t, mut bwd_t) = (0.0, 0.0);
    for _ in 0..iters {
        let t0 = std::time::Instant::now();
        let mut g = Graph::with_scratch(std::mem::take(&mut scratch));
        let ro = rollout_graph(&net, &mut g, &images, &phases, 3, false).unwrap();
        let t1 = std::time::Instant::now();
        net.store.zero_grads();
        g.backward(ro.loss, &mut net.store).unwrap();
        let t2 = std::time::Instant::now();
        scratch = g.into_scratch();
        fwd_t += (t1 - t0).as_secs_f64();
        bwd_t += (t2 - t1).as_secs_f64();
    }
    println!("forward {:.3} s/step, backward {:.3} s/step", fwd_t / iters as f64, bwd_t / iters as f64);
}
