//! The SynCx autoencoder: a fully convolutional encoder/decoder over complex
//! maps, built from strided complex convolutions with modReLU activations.
//!
//! The default architecture is three stride-2 encoder convs, three
//! (upsample, conv) decoder stages, an extra 1x1 decoder conv for inputs of
//! extent >= 64, and a linear 1x1 output conv back to image channels. The
//! decoder's last upsample can overshoot the input extent (35 -> 40); the map
//! is center-cropped back to the target before the next conv, so the
//! reconstruction stays aligned with the input and the penultimate features
//! sit at image extent.
//!
//! Weights follow the Trabelsi initialization criterion: magnitudes
//! ~ Rayleigh(sigma = 1/fan_in) with fan_in = kh*kw*cin, phases
//! ~ Uniform[0, 2pi), modReLU biases zero.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParameterStore};
use crate::ctensor::raw::{same_padding, ConvGeom};
use crate::ctensor::ComplexMap;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{rng_for, sample_rayleigh};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    ModRelu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    Upsample2x,
}

/// One architecture entry: a conv (kernel extent, channels, stride,
/// activation) or a parameter-free 2x upsample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub kernel: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn conv(kernel: usize, out_channels: usize, stride: usize, activation: Activation) -> Self {
        LayerSpec { kind: LayerKind::Conv, kernel, out_channels, stride, activation }
    }

    pub fn upsample() -> Self {
        LayerSpec { kind: LayerKind::Upsample2x, kernel: 0, out_channels: 0, stride: 1, activation: Activation::None }
    }
}

/// Weight initialization seed; the distributions themselves are fixed
/// (Rayleigh magnitudes with sigma = 1/fan_in, uniform phases, zero biases).
#[derive(Debug, Clone, Copy)]
pub struct InitConfig {
    pub seed: u64,
}

/// Build settings for the standard architecture family.
#[derive(Debug, Clone, Copy)]
pub struct BuildConfig {
    pub image_extent: (usize, usize),
    pub image_channels: usize,
    /// Encoder channel widths; the paper-scale builds use [64, 128, 128].
    pub enc_channels: [usize; 3],
    /// With the bottleneck disabled the encoder runs at stride 1 and the
    /// decoder drops its upsamples, so every map keeps the image extent while
    /// the parameter count stays identical (upsampling is parameter-free).
    pub bottleneck: bool,
}

impl BuildConfig {
    pub fn new(extent: usize) -> Self {
        BuildConfig {
            image_extent: (extent, extent),
            image_channels: 3,
            enc_channels: [64, 128, 128],
            bottleneck: true,
        }
    }

    pub fn with_channels(mut self, enc_channels: [usize; 3]) -> Self {
        self.enc_channels = enc_channels;
        self
    }

    pub fn without_bottleneck(mut self) -> Self {
        self.bottleneck = false;
        self
    }
}

#[derive(Debug, Clone)]
struct ConvStage {
    #[allow(dead_code)]
    name: String,
    kh: usize,
    kw: usize,
    in_c: usize,
    out_c: usize,
    stride: usize,
    in_h: usize,
    in_w: usize,
    pads: [usize; 4],
    kre: ParamId,
    kim: ParamId,
    bias: Option<ParamId>,
}

#[derive(Debug, Clone)]
enum Stage {
    Conv(usize),
    Upsample2x,
    CropTo(usize, usize),
}

/// The assembled network: an ordered stage pipeline plus its parameters.
#[derive(Debug, Clone)]
pub struct SynCxNet<T> {
    input_extent: (usize, usize),
    input_channels: usize,
    stages: Vec<Stage>,
    convs: Vec<ConvStage>,
    /// Index of the conv whose activation is the penultimate decoder feature
    /// map (the last modReLU conv before the output layer).
    penult_conv: usize,
    pub store: ParameterStore<T>,
    encoder_specs: Vec<LayerSpec>,
    decoder_specs: Vec<LayerSpec>,
    output_spec: LayerSpec,
}

/// Nodes of interest from one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// Output map, packed `[B, H, W, 2*image_channels]`.
    pub z: NodeId,
    /// Penultimate decoder activation, packed `[B, H, W, 2*C]`.
    pub penult: NodeId,
}

/// Build the standard architecture for an image extent.
pub fn build<T: Real>(cfg: &BuildConfig) -> Result<SynCxNet<T>> {
    let (h, w) = cfg.image_extent;
    if h < 4 || w < 4 {
        return Err(Error::config(format!("image extent {h}x{w} below the supported minimum of 4")));
    }
    let [c1, c2, c3] = cfg.enc_channels;
    let stride = if cfg.bottleneck { 2 } else { 1 };
    let encoder = vec![
        LayerSpec::conv(3, c1, stride, Activation::ModRelu),
        LayerSpec::conv(3, c2, stride, Activation::ModRelu),
        LayerSpec::conv(3, c3, stride, Activation::ModRelu),
    ];
    let mut decoder = Vec::new();
    for out_c in [c2, c1, c1] {
        if cfg.bottleneck {
            decoder.push(LayerSpec::upsample());
        }
        decoder.push(LayerSpec::conv(3, out_c, 1, Activation::ModRelu));
    }
    if h.max(w) >= 64 {
        decoder.push(LayerSpec::conv(1, c1, 1, Activation::ModRelu));
    }
    let output = LayerSpec::conv(1, cfg.image_channels, 1, Activation::None);
    build_from_specs(cfg.image_extent, cfg.image_channels, &encoder, &decoder, output)
}

fn add_conv<T: Real>(
    net: &mut SynCxNet<T>,
    spec: &LayerSpec,
    name: String,
    h: usize,
    w: usize,
    c: usize,
) -> Result<(usize, usize, usize)> {
    if spec.kind != LayerKind::Conv {
        return Err(Error::config(format!("{name} must be a conv layer")));
    }
    if spec.kernel == 0 || spec.stride == 0 || spec.out_channels == 0 {
        return Err(Error::config(format!("{name} has a zero kernel/stride/channel width")));
    }
    let k = spec.kernel;
    let (pt, pb) = same_padding(h, k, spec.stride);
    let (pl, pr) = same_padding(w, k, spec.stride);
    let kre = net.store.register(format!("{name}.kernel.re"), Tensor::zeros(&[k, k, c, spec.out_channels]));
    let kim = net.store.register(format!("{name}.kernel.im"), Tensor::zeros(&[k, k, c, spec.out_channels]));
    let bias = match spec.activation {
        Activation::ModRelu => Some(net.store.register(format!("{name}.bias"), Tensor::zeros(&[spec.out_channels]))),
        Activation::None => None,
    };
    net.convs.push(ConvStage {
        name,
        kh: k,
        kw: k,
        in_c: c,
        out_c: spec.out_channels,
        stride: spec.stride,
        in_h: h,
        in_w: w,
        pads: [pt, pb, pl, pr],
        kre,
        kim,
        bias,
    });
    net.stages.push(Stage::Conv(net.convs.len() - 1));
    Ok((h.div_ceil(spec.stride), w.div_ceil(spec.stride), spec.out_channels))
}

/// Build from explicit layer specs. Encoder/decoder convs must use modReLU
/// and the output layer must be linear.
pub fn build_from_specs<T: Real>(
    image_extent: (usize, usize),
    image_channels: usize,
    encoder: &[LayerSpec],
    decoder: &[LayerSpec],
    output: LayerSpec,
) -> Result<SynCxNet<T>> {
    if output.activation != Activation::None || output.kind != LayerKind::Conv {
        return Err(Error::config("output layer must be a linear conv"));
    }
    let mut net = SynCxNet {
        input_extent: image_extent,
        input_channels: image_channels,
        stages: Vec::new(),
        convs: Vec::new(),
        penult_conv: 0,
        store: ParameterStore::new(),
        encoder_specs: encoder.to_vec(),
        decoder_specs: decoder.to_vec(),
        output_spec: output,
    };

    let (mut cur_h, mut cur_w, mut cur_c) = (image_extent.0, image_extent.1, image_channels);
    for (i, spec) in encoder.iter().enumerate() {
        if spec.activation != Activation::ModRelu || spec.kind != LayerKind::Conv {
            return Err(Error::config("encoder layers must be modReLU convs"));
        }
        (cur_h, cur_w, cur_c) = add_conv(&mut net, spec, format!("enc{}", i + 1), cur_h, cur_w, cur_c)?;
    }

    let mut dec_count = 0usize;
    let mut last_modrelu_conv = None;
    for spec in decoder {
        match spec.kind {
            LayerKind::Upsample2x => {
                net.stages.push(Stage::Upsample2x);
                cur_h *= 2;
                cur_w *= 2;
                if cur_h > image_extent.0 || cur_w > image_extent.1 {
                    net.stages.push(Stage::CropTo(image_extent.0, image_extent.1));
                    cur_h = image_extent.0;
                    cur_w = image_extent.1;
                }
            }
            LayerKind::Conv => {
                if spec.activation != Activation::ModRelu {
                    return Err(Error::config("decoder convs must use modReLU"));
                }
                dec_count += 1;
                (cur_h, cur_w, cur_c) = add_conv(&mut net, spec, format!("dec{dec_count}"), cur_h, cur_w, cur_c)?;
                last_modrelu_conv = Some(net.convs.len() - 1);
            }
        }
    }
    if cur_h != image_extent.0 || cur_w != image_extent.1 {
        return Err(Error::config(format!(
            "decoder ends at {cur_h}x{cur_w}, expected the image extent {}x{}",
            image_extent.0, image_extent.1
        )));
    }
    let Some(penult) = last_modrelu_conv else {
        return Err(Error::config("decoder needs at least one modReLU conv"));
    };
    net.penult_conv = penult;
    add_conv(&mut net, &output, "out".to_string(), cur_h, cur_w, cur_c)?;
    Ok(net)
}

impl<T: Real> SynCxNet<T> {
    pub fn input_extent(&self) -> (usize, usize) {
        self.input_extent
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Channel count of the penultimate decoder activation.
    pub fn penult_channels(&self) -> usize {
        self.convs[self.penult_conv].out_c
    }

    /// Total real-valued parameter count.
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Spatial extent each conv layer sees, in declaration order.
    pub fn conv_input_extents(&self) -> Vec<(usize, usize)> {
        self.convs.iter().map(|c| (c.in_h, c.in_w)).collect()
    }

    /// Draw all kernels from the configured distributions; biases stay zero.
    pub fn init_weights(&mut self, cfg: &InitConfig) {
        let mut rng = rng_for(cfg.seed, 0);
        for ci in 0..self.convs.len() {
            let conv = self.convs[ci].clone();
            let fan_in = (conv.kh * conv.kw * conv.in_c) as f64;
            let sigma = 1.0 / fan_in;
            let n = conv.kh * conv.kw * conv.in_c * conv.out_c;
            let mut re = vec![T::zero(); n];
            let mut im = vec![T::zero(); n];
            for i in 0..n {
                let mag = sample_rayleigh(&mut rng, sigma);
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                re[i] = T::from_f64(mag * phase.cos());
                im[i] = T::from_f64(mag * phase.sin());
            }
            let shape = [conv.kh, conv.kw, conv.in_c, conv.out_c];
            *self.store.value_mut(conv.kre) = Tensor::from_vec(&shape, re);
            *self.store.value_mut(conv.kim) = Tensor::from_vec(&shape, im);
            if let Some(bias) = conv.bias {
                *self.store.value_mut(bias) = Tensor::zeros(&[conv.out_c]);
            }
        }
    }

    /// Run the network on a packed input node `[B, H, W, 2*Cin]`, returning
    /// the output and penultimate activation nodes.
    pub fn forward_graph(&self, g: &mut Graph<T>, x: NodeId, batch: usize) -> ForwardNodes {
        let mut cur = x;
        let mut penult = x;
        for stage in &self.stages {
            match stage {
                Stage::Upsample2x => cur = g.upsample2x(cur),
                Stage::CropTo(h, w) => cur = g.center_crop(cur, *h, *w),
                Stage::Conv(ci) => {
                    let conv = &self.convs[*ci];
                    let geom = ConvGeom::explicit(
                        batch,
                        conv.in_h,
                        conv.in_w,
                        conv.in_c,
                        conv.kh,
                        conv.kw,
                        conv.stride,
                        conv.pads,
                    );
                    cur = g.complex_conv(&self.store, cur, conv.kre, conv.kim, geom);
                    if let Some(bias) = conv.bias {
                        let b = g.param(&self.store, bias);
                        cur = g.mod_relu(cur, b, conv.out_c);
                    }
                    if *ci == self.penult_conv {
                        penult = cur;
                    }
                }
            }
        }
        ForwardNodes { z: cur, penult }
    }

    /// Single-map forward pass: returns the output map `z` and the
    /// penultimate decoder activation from the same pass.
    pub fn forward(&self, x: &ComplexMap<T>) -> Result<(ComplexMap<T>, ComplexMap<T>)> {
        if (x.height(), x.width()) != self.input_extent {
            return Err(Error::config(format!(
                "input extent {}x{} does not match the build extent {}x{}",
                x.height(),
                x.width(),
                self.input_extent.0,
                self.input_extent.1
            )));
        }
        if x.channels() != self.input_channels {
            return Err(Error::config(format!(
                "input has {} channels, build expects {}",
                x.channels(),
                self.input_channels
            )));
        }
        let mut g = Graph::inference();
        let packed = Tensor::from_vec(&[1, x.height(), x.width(), 2 * x.channels()], x.to_packed());
        let xn = g.constant(packed);
        let nodes = self.forward_graph(&mut g, xn, 1);
        let z = packed_node_to_map(&g, nodes.z, self.input_channels);
        let penult = packed_node_to_map(&g, nodes.penult, self.penult_channels());
        Ok((z, penult))
    }
}

/// Extract a `[1, H, W, 2C]` packed node value into a [`ComplexMap`].
pub fn packed_node_to_map<T: Real>(g: &Graph<T>, id: NodeId, channels: usize) -> ComplexMap<T> {
    let t = g.value(id);
    let shape = t.shape();
    debug_assert_eq!(shape[0], 1, "single-image extraction from a batched node");
    debug_assert_eq!(shape[3], 2 * channels);
    ComplexMap::from_packed(shape[1], shape[2], channels, t.data())
}

// --- Checkpoint format -----------------------------------------------------
//
// magic "SYNCX1" | u32 version | u32 h, w, image_channels
// | u32 record count | records (u32 length + payload) describing encoder,
//   decoder and output specs in order
// | u64 parameter byte count
// | per conv layer in declaration order: re then im as f32 LE row-major
//   [kh][kw][cin][cout], then the modReLU bias when present.

const MAGIC: &[u8; 6] = b"SYNCX1";
const VERSION: u32 = 1;

const REC_CONV: u8 = 0;
const REC_UPSAMPLE: u8 = 1;
const REC_OUTPUT_MARK: u8 = 2;
const REC_ENCODER_END: u8 = 3;

fn push_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn spec_record(spec: &LayerSpec) -> Vec<u8> {
    let mut rec = Vec::new();
    match spec.kind {
        LayerKind::Upsample2x => rec.push(REC_UPSAMPLE),
        LayerKind::Conv => {
            rec.push(REC_CONV);
            push_u32(&mut rec, spec.kernel as u32);
            push_u32(&mut rec, spec.out_channels as u32);
            push_u32(&mut rec, spec.stride as u32);
            rec.push(match spec.activation {
                Activation::ModRelu => 1,
                Activation::None => 0,
            });
        }
    }
    rec
}

struct RecordReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> RecordReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        RecordReader { buf, pos: 0 }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format("checkpoint truncated".to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
}

fn parse_spec_record(rec: &[u8]) -> Result<LayerSpec> {
    let mut r = RecordReader::new(rec);
    match r.u8()? {
        REC_UPSAMPLE => Ok(LayerSpec::upsample()),
        REC_CONV => {
            let kernel = r.u32()? as usize;
            let out_channels = r.u32()? as usize;
            let stride = r.u32()? as usize;
            let activation = match r.u8()? {
                0 => Activation::None,
                1 => Activation::ModRelu,
                other => return Err(Error::format(format!("unknown activation tag {other}"))),
            };
            Ok(LayerSpec { kind: LayerKind::Conv, kernel, out_channels, stride, activation })
        }
        other => Err(Error::format(format!("unknown record tag {other}"))),
    }
}

/// Serialize a network to the versioned checkpoint format.
pub fn save_checkpoint<T: Real>(net: &SynCxNet<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, net.input_extent.0 as u32);
    push_u32(&mut buf, net.input_extent.1 as u32);
    push_u32(&mut buf, net.input_channels as u32);

    let mut records: Vec<Vec<u8>> = Vec::new();
    for spec in &net.encoder_specs {
        records.push(spec_record(spec));
    }
    records.push(vec![REC_ENCODER_END]);
    for spec in &net.decoder_specs {
        records.push(spec_record(spec));
    }
    records.push(vec![REC_OUTPUT_MARK]);
    records.push(spec_record(&net.output_spec));
    push_u32(&mut buf, records.len() as u32);
    for rec in &records {
        push_u32(&mut buf, rec.len() as u32);
        buf.extend_from_slice(rec);
    }

    let param_bytes: usize = net
        .convs
        .iter()
        .map(|c| 4 * (2 * c.kh * c.kw * c.in_c * c.out_c + if c.bias.is_some() { c.out_c } else { 0 }))
        .sum();
    buf.extend_from_slice(&(param_bytes as u64).to_le_bytes());
    for conv in &net.convs {
        for part in [conv.kre, conv.kim] {
            for v in net.store.value(part).iter() {
                buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        if let Some(bias) = conv.bias {
            for v in net.store.value(bias).iter() {
                buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Load a checkpoint, validating magic, version and total byte length.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<SynCxNet<T>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = RecordReader::new(&buf);
    if r.bytes(6)? != MAGIC {
        return Err(Error::format("bad checkpoint magic".to_string()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let image_channels = r.u32()? as usize;
    let n_records = r.u32()? as usize;

    let mut encoder = Vec::new();
    let mut decoder = Vec::new();
    let mut output = None;
    let mut section = 0; // 0 = encoder, 1 = decoder, 2 = output
    for _ in 0..n_records {
        let len = r.u32()? as usize;
        let rec = r.bytes(len)?;
        match rec.first() {
            None => return Err(Error::format("empty checkpoint record".to_string())),
            Some(&REC_ENCODER_END) => section = 1,
            Some(&REC_OUTPUT_MARK) => section = 2,
            Some(_) => {
                let spec = parse_spec_record(rec)?;
                match section {
                    0 => encoder.push(spec),
                    1 => decoder.push(spec),
                    _ => output = Some(spec),
                }
            }
        }
    }
    let output = output.ok_or_else(|| Error::format("checkpoint missing output layer".to_string()))?;
    let mut net = build_from_specs::<T>((h, w), image_channels, &encoder, &decoder, output)?;

    let declared = r.u64()? as usize;
    let remaining = buf.len() - r.pos;
    if declared != remaining {
        return Err(Error::format(format!(
            "checkpoint length mismatch: header declares {declared} parameter bytes, file holds {remaining}"
        )));
    }
    let convs = net.convs.clone();
    for conv in &convs {
        for part in [conv.kre, conv.kim] {
            let n = conv.kh * conv.kw * conv.in_c * conv.out_c;
            let bytes = r.bytes(4 * n)?;
            let vals: Vec<T> = bytes
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
                .collect();
            *net.store.value_mut(part) = Tensor::from_vec(&[conv.kh, conv.kw, conv.in_c, conv.out_c], vals);
        }
        if let Some(bias) = conv.bias {
            let bytes = r.bytes(4 * conv.out_c)?;
            let vals: Vec<T> = bytes
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64))
                .collect();
            *net.store.value_mut(bias) = Tensor::from_vec(&[conv.out_c], vals);
        }
    }
    Ok(net)
}
