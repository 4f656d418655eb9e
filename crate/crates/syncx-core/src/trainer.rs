//! The iterative-refinement recurrence and the optimization loop.
//!
//! One rollout runs the autoencoder N times on the same image. The input at
//! every iteration has its magnitudes clamped to the pixel values; only the
//! phases carry state, with iteration n+1 inheriting the output phases of
//! iteration n. The training loss is the plain average over iterations of the
//! mean-squared reconstruction error (mean over pixels and channels, so the
//! one learning rate transfers across image extents).
//!
//! Gradients flow through the whole unrolled recurrence by default; the
//! detach switch cuts the phase feedback between iterations for the ablation
//! where each iteration is trained as if its input phases were fresh.
//!
//! Determinism: a fixed seed fixes the batch order and every phase draw
//! (streams are keyed by step and batch slot, not by thread), so training
//! losses reproduce bit-identically run to run.

use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{adam_step, AdamConfig, Graph, NodeId, ScratchPool};
use crate::ctensor::ComplexMap;
use crate::datagen::SceneSample;
use crate::error::{Error, Result};
use crate::eval::{ari, extract_assignments};
use crate::model::{packed_node_to_map, save_checkpoint, SynCxNet};
use crate::real::Real;
use crate::rng::{rng_for, sample_von_mises, SeedStreams};
use crate::tensor::Tensor;

/// Initial-phase distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhaseInit {
    /// von Mises with mean 0; the default concentration is 1.
    VonMises { kappa: f64 },
    /// Uniform on [-pi, pi).
    Uniform,
    Zero,
}

impl Default for PhaseInit {
    fn default() -> Self {
        PhaseInit::VonMises { kappa: 1.0 }
    }
}

impl std::str::FromStr for PhaseInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "von_mises" | "von-mises" | "vonmises" => Ok(PhaseInit::VonMises { kappa: 1.0 }),
            "uniform" => Ok(PhaseInit::Uniform),
            "zero" => Ok(PhaseInit::Zero),
            other => Err(Error::config(format!("unknown phase init '{other}' (expected zero|uniform|von_mises)"))),
        }
    }
}

/// Training protocol settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Rollout iterations during training.
    pub n_train: usize,
    pub phase_init: PhaseInit,
    /// Cut gradient flow through the fed-back phases between iterations.
    pub detach_between_iterations: bool,
    pub seed: u64,
    /// Evaluate mean foreground ARI on the eval set every this many steps
    /// (0 disables).
    pub eval_every: usize,
    /// Cap on eval images per periodic evaluation.
    pub eval_images: usize,
    /// Checkpoint cadence in steps (a final checkpoint is always written
    /// when an output directory is set).
    pub checkpoint_every: usize,
    /// Where to write metrics.csv and checkpoints; in-memory only when None.
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 32,
            lr: 5e-4,
            clip_norm: 1.0,
            n_train: 3,
            phase_init: PhaseInit::default(),
            detach_between_iterations: false,
            seed: 0,
            eval_every: 0,
            eval_images: 32,
            checkpoint_every: 1000,
            out_dir: None,
        }
    }
}

/// Per-iteration record of one rollout.
///
/// The recurrence state is polar: the magnitude component fed at every
/// iteration is the image itself, and the phase component is carried over by
/// assignment. `clamp_magnitudes[n]` is the exact magnitude array used to
/// build iteration n's input, and `input_phases[n + 1]` is (by theecurrence
/// definition) the same array as `output_phases[n]`.
#[derive(Debug, Clone)]
pub struct RolloutTrace<T> {
    /// Phase component of the input at each iteration, `[H, W, C]`.
    pub input_phases: Vec<Tensor<T>>,
    /// Output phases per iteration.
    pub output_phases: Vec<Tensor<T>>,
    /// Reconstructions (output magnitudes) per iteration.
    pub reconstructions: Vec<Tensor<T>>,
    /// Magnitude array used to construct each iteration's input.
    pub clamp_magnitudes: Vec<Tensor<T>>,
    /// Penultimate decoder activation at the final iteration.
    pub penult: ComplexMap<T>,
    /// Penultimate activations for every iteration (for visualization).
    pub per_iter_penult: Vec<ComplexMap<T>>,
}

impl<T: Real> RolloutTrace<T> {
    pub fn iterations(&self) -> usize {
        self.reconstructions.len()
    }
}

/// Sample an `[H, W, C]` phase map from the configured distribution; values
/// lie in (-pi, pi].
pub fn init_phases<T: Real>(h: usize, w: usize, c: usize, kind: PhaseInit, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let n = h * w * c;
    let data: Vec<T> = match kind {
        PhaseInit::Zero => vec![T::zero(); n],
        PhaseInit::Uniform => (0..n)
            .map(|_| T::from_f64(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)))
            .collect(),
        PhaseInit::VonMises { kappa } => (0..n).map(|_| T::from_f64(sample_von_mises(rng, 0.0, kappa))).collect(),
    };
    Tensor::from_vec(&[h, w, c], data)
}

/// Handles into one batched rollout graph.
pub struct BatchRollout {
    pub loss: NodeId,
    pub iter_z: Vec<NodeId>,
    pub iter_mu: Vec<NodeId>,
    pub penult: Vec<NodeId>,
}

/// Pack per-image magnitudes and phases into the complex input
/// `[B, H, W, 2C]`.
fn packed_input<T: Real>(mags: &Tensor<T>, phases: &Tensor<T>, c: usize) -> Tensor<T> {
    debug_assert_eq!(mags.shape(), phases.shape());
    let px = mags.len() / c;
    let mut out = vec![T::zero(); 2 * mags.len()];
    let (m, p) = (mags.data(), phases.data());
    for i in 0..px {
        for ch in 0..c {
            let (mu, phi) = (m[i * c + ch], p[i * c + ch]);
            out[i * 2 * c + ch] = mu * phi.cos();
            out[i * 2 * c + c + ch] = mu * phi.sin();
        }
    }
    let mut shape = mags.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = 2 * c;
    Tensor::from_vec(&shape, out)
}

/// Build the N-iteration rollout graph over a batch.
///
/// `images` is `[B, H, W, C]` with values in [0, 1]; `phases` the matching
/// initial phase maps. The loss node averages the per-iteration mean squared
/// reconstruction errors.
pub fn rollout_graph<T: Real>(
    net: &SynCxNet<T>,
    g: &mut Graph<T>,
    images: &Tensor<T>,
    phases: &Tensor<T>,
    n_iters: usize,
    detach: bool,
) -> Result<BatchRollout> {
    if n_iters < 1 {
        return Err(Error::config("rollout needs at least one iteration"));
    }
    let shape = images.shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::shape(format!("expected [B, H, W, C] images, got {shape:?}")));
    }
    let c = shape[3];
    let batch = shape[0];

    let x1 = g.constant(packed_input(images, phases, c));
    let mut x = x1;
    let mut iter_z = Vec::with_capacity(n_iters);
    let mut iter_mu = Vec::with_capacity(n_iters);
    let mut penult = Vec::with_capacity(n_iters);
    let mut losses = Vec::with_capacity(n_iters);
    for n in 0..n_iters {
        let fwd = net.forward_graph(g, x, batch);
        let mu = g.magnitude(fwd.z, c);
        losses.push(g.mse_against(mu, images.clone()));
        iter_z.push(fwd.z);
        iter_mu.push(mu);
        penult.push(fwd.penult);
        if n + 1 < n_iters {
            // Phase feedback: next input is the clamped image magnitudes
            // carrying this iteration's output phases.
            let mut next = g.renorm(fwd.z, images.clone(), c);
            if detach {
                next = g.detach(next);
            }
            x = next;
        }
    }
    let sum = g.add_n(&losses);
    let loss = g.scale(sum, T::from_f64(1.0 / n_iters as f64));
    Ok(BatchRollout { loss, iter_z, iter_mu, penult })
}

fn phases_to_trace<T: Real>(z: &Tensor<T>, c: usize) -> (Tensor<T>, Tensor<T>) {
    // Split a packed [1, H, W, 2C] output into ([H,W,C] phases, [H,W,C] magnitudes).
    let (h, w) = (z.shape()[1], z.shape()[2]);
    let mut phases = vec![T::zero(); h * w * c];
    let mut mags = vec![T::zero(); h * w * c];
    let d = z.data();
    for px in 0..h * w {
        for ch in 0..c {
            let re = d[px * 2 * c + ch];
            let im = d[px * 2 * c + c + ch];
            let mu = (re * re + im * im).sqrt();
            mags[px * c + ch] = mu;
            phases[px * c + ch] = if mu > T::zero() { im.atan2(re) } else { T::zero() };
        }
    }
    (Tensor::from_vec(&[h, w, c], phases), Tensor::from_vec(&[h, w, c], mags))
}

/// Single-image rollout with explicit initial phases.
pub fn rollout_with_phases<T: Real>(
    net: &SynCxNet<T>,
    image: &Tensor<T>,
    phases: &Tensor<T>,
    n_iters: usize,
) -> Result<RolloutTrace<T>> {
    if image.shape().len() != 3 {
        return Err(Error::shape(format!("expected an [H, W, C] image, got {:?}", image.shape())));
    }
    if image.iter().any(|&v| v < T::zero() || v > T::one()) {
        return Err(Error::contract("image values must lie in [0, 1]"));
    }
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let batched = image.reshaped(&[1, h, w, c]);
    let batched_phases = phases.reshaped(&[1, h, w, c]);
    let mut g = Graph::inference();
    let ro = rollout_graph(net, &mut g, &batched, &batched_phases, n_iters, false)?;

    let mut trace = RolloutTrace {
        input_phases: vec![phases.clone()],
        output_phases: Vec::with_capacity(n_iters),
        reconstructions: Vec::with_capacity(n_iters),
        clamp_magnitudes: Vec::with_capacity(n_iters),
        penult: packed_node_to_map(&g, *ro.penult.last().expect("n >= 1"), net.penult_channels()),
        per_iter_penult: Vec::with_capacity(n_iters),
    };
    for n in 0..n_iters {
        let (phi_z, mu_z) = phases_to_trace(g.value(ro.iter_z[n]), c);
        // Eq. 4 is an assignment: the next input phases are this iteration's
        // output phases, recorded as the same array.
        if n + 1 < n_iters {
            trace.input_phases.push(phi_z.clone());
        }
        trace.output_phases.push(phi_z);
        trace.reconstructions.push(mu_z);
        // The clamp source at every iteration is the image itself.
        trace.clamp_magnitudes.push(image.clone());
        trace.per_iter_penult.push(packed_node_to_map(&g, ro.penult[n], net.penult_channels()));
    }
    debug_assert!(trace.reconstructions.iter().all(|m| m.iter().all(|&v| v >= T::zero())));
    Ok(trace)
}

/// Single-image rollout sampling fresh initial phases from `kind`.
pub fn rollout<T: Real>(
    net: &SynCxNet<T>,
    image: &Tensor<T>,
    n_iters: usize,
    kind: PhaseInit,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutTrace<T>> {
    let (h, w, c) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let phases = init_phases::<T>(h, w, c, kind, rng);
    rollout_with_phases(net, image, &phases, n_iters)
}

/// Average over iterations of the mean squared reconstruction error
/// (Computed directly from the trace; the graph loss must agree with this.)
pub fn loss<T: Real>(trace: &RolloutTrace<T>, image: &Tensor<T>) -> f64 {
    let n = trace.reconstructions.len();
    assert!(n > 0, "empty trace");
    let mut total = 0.0;
    for mu in &trace.reconstructions {
        let mut acc = 0.0;
        for (a, b) in mu.iter().zip(image.iter()) {
            let d = a.to_f64_lossy() - b.to_f64_lossy();
            acc += d * d;
        }
        total += acc / image.len() as f64;
    }
    total / n as f64
}

/// One row of the metrics log.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub wallclock_s: f64,
    pub ari: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainMetrics {
    pub records: Vec<StepRecord>,
    pub final_loss: f64,
}

fn stack_batch<T: Real>(samples: &[SceneSample], idxs: &[usize]) -> Tensor<T> {
    let (h, w) = (samples[idxs[0]].height, samples[idxs[0]].width);
    let mut data = Vec::with_capacity(idxs.len() * h * w * 3);
    for &i in idxs {
        data.extend(samples[i].image.iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::from_vec(&[idxs.len(), h, w, 3], data)
}

fn batch_phases<T: Real>(
    kind: PhaseInit,
    phase_seed: u64,
    step: usize,
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
) -> Tensor<T> {
    let mut data = Vec::with_capacity(batch * h * w * c);
    for slot in 0..batch {
        let mut rng = rng_for(phase_seed, (step * batch + slot) as u64);
        let t = init_phases::<T>(h, w, c, kind, &mut rng);
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&[batch, h, w, c], data)
}

/// Mean foreground ARI of the current net over (a prefix of) an eval set,
/// using ground-truth object counts for k.
pub fn mean_ari<T: Real>(net: &SynCxNet<T>, samples: &[SceneSample], n_iters: usize, eval_seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let image = Tensor::from_vec(&[s.height, s.width, 3], s.image.iter().map(|&v| T::from_f64(v as f64)).collect());
        let mut rng = rng_for(eval_seed, i as u64);
        let trace = rollout(net, &image, n_iters, PhaseInit::default(), &mut rng)?;
        let background: Vec<bool> = s.labels.iter().map(|&l| l == 0).collect();
        let k = s.k.max(1);
        let mut krng = rng_for(eval_seed ^ 0x9E3779B97F4A7C15, i as u64);
        let (assign, _) = extract_assignments(&trace.penult, &background, k, &mut krng)?;
        let fg: Vec<bool> = background.iter().map(|&b| !b).collect();
        total += ari(&assign.labels, &s.labels, &fg)?;
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyEval("no samples to evaluate".to_string()));
    }
    Ok(total / count as f64)
}

/// Run the optimization loop. Checkpoints and a metrics CSV land in
/// `cfg.out_dir` when set; metrics are returned either way.
pub fn train<T: Real>(
    net: &mut SynCxNet<T>,
    dataset: &[SceneSample],
    eval_set: Option<&[SceneSample]>,
    cfg: &TrainConfig,
) -> Result<TrainMetrics> {
    if dataset.is_empty() {
        return Err(Error::config("training dataset is empty"));
    }
    if cfg.n_train < 1 || cfg.batch < 1 || cfg.lr < 0.0 {
        return Err(Error::config("invalid training configuration"));
    }
    let (h, w) = (dataset[0].height, dataset[0].width);
    if (h, w) != net.input_extent() {
        return Err(Error::config(format!(
            "dataset extent {h}x{w} does not match the net build extent {}x{}",
            net.input_extent().0,
            net.input_extent().1
        )));
    }
    let streams = SeedStreams::new(cfg.seed);
    let mut data_rng = rng_for(streams.data, 0);
    let adam = AdamConfig {
        lr: T::from_f64(cfg.lr),
        clip_norm: Some(T::from_f64(cfg.clip_norm)),
        ..AdamConfig::default()
    };

    let mut csv = match &cfg.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.csv"))?);
            writeln!(f, "step,loss,wallclock_s,ari")?;
            Some(f)
        }
        None => None,
    };

    let started = Instant::now();
    let mut metrics = TrainMetrics::default();
    let mut scratch = ScratchPool::new();
    for step in 0..cfg.steps {
        let idxs: Vec<usize> = (0..cfg.batch).map(|_| data_rng.gen_range(0..dataset.len())).collect();
        let images = stack_batch::<T>(dataset, &idxs);
        let phases = batch_phases::<T>(cfg.phase_init, streams.phase, step, cfg.batch, h, w, 3);

        let mut g = Graph::with_scratch(std::mem::take(&mut scratch));
        let ro = rollout_graph(net, &mut g, &images, &phases, cfg.n_train, cfg.detach_between_iterations)?;
        let loss_val = g.value(ro.loss).item().to_f64_lossy();
        if !loss_val.is_finite() {
            return Err(Error::numeric(format!("non-finite loss at step {step}")));
        }
        net.store.zero_grads();
        g.backward(ro.loss, &mut net.store)?;
        scratch = g.into_scratch();
        adam_step(&mut net.store, &adam)
            .map_err(|e| Error::numeric(format!("optimizer aborted at step {step}: {e}")))?;

        let ari_val = match (eval_set, cfg.eval_every > 0) {
            (Some(es), true) if (step + 1) % cfg.eval_every == 0 => {
                let take = es.len().min(cfg.eval_images.max(1));
                Some(mean_ari(net, &es[..take], cfg.n_train, streams.eval)?)
            }
            _ => None,
        };
        let record = StepRecord { step, loss: loss_val, wallclock_s: started.elapsed().as_secs_f64(), ari: ari_val };
        if let Some(f) = csv.as_mut() {
            match record.ari {
                Some(a) => writeln!(f, "{},{:.8},{:.3},{:.6}", record.step, record.loss, record.wallclock_s, a)?,
                None => writeln!(f, "{},{:.8},{:.3},", record.step, record.loss, record.wallclock_s)?,
            }
        }
        metrics.final_loss = record.loss;
        metrics.records.push(record);

        if let Some(dir) = &cfg.out_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < cfg.steps {
                save_checkpoint(net, &dir.join(format!("checkpoint_{:06}.syncx", step + 1)))?;
            }
        }
    }
    if let Some(f) = csv.as_mut() {
        f.flush()?;
    }
    if let Some(dir) = &cfg.out_dir {
        save_checkpoint(net, &dir.join("checkpoint_final.syncx"))?;
    }
    Ok(metrics)
}
