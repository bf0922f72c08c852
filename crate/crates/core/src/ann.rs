//! Multilayer perceptron converting 10-bit ADC codes into 8-bit distances.
//!
//! Layout follows the microcontroller's rectangular weight array
//! `W[layer][neuron][connection]`: every weight layer is padded to
//! `nmax` neurons by `wmax` connections, and padded slots stay exactly 0.
//! There are no bias terms. The deployed ("frozen") pass switches a neuron
//! on when its weighted input sum reaches 0.5; training uses a logistic
//! activation centred on that same threshold so trained outputs and frozen
//! outputs agree on which side of 0.5 they fall.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sensor::{code_voltage, OutputKind, SensorError, SensorSpec, VREF};

pub const INPUT_BITS: usize = 10;
pub const OUTPUT_BITS: usize = 8;
pub const PATTERN_COUNT: usize = 1 << INPUT_BITS;

/// Switching point of a neuron.
pub const THRESHOLD: f64 = 0.5;

/// Capacity of the 24C256 (256 kbit).
pub const EEPROM_CAPACITY: usize = 32_768;

pub const IMAGE_MAGIC: &[u8; 4] = b"EMRW";
pub const IMAGE_VERSION: u8 = 0x01;
pub const MODEL_NAME_LEN: usize = 11;
/// Trailer byte appended to images whose training did not converge.
pub const NOT_CONVERGED_MARKER: u8 = b'W';

const IMAGE_HEADER_LEN: usize = 4 + 1 + MODEL_NAME_LEN + 3;

#[derive(Debug, Error, PartialEq)]
pub enum AnnError {
    #[error("geometry needs at least two layers")]
    TooFewLayers,
    #[error("layer {0} has zero width")]
    EmptyLayer(usize),
    #[error("geometry {0:?} exceeds the one-byte layout limits")]
    TooLarge(Vec<usize>),
    #[error("nmax/wmax ({nmax}/{wmax}) too small for widths {widths:?}")]
    BadPadding {
        widths: Vec<usize>,
        nmax: usize,
        wmax: usize,
    },
    #[error("geometry mismatch: expected {expected}, got {actual}")]
    GeometryMismatch { expected: String, actual: String },
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("pattern {index} does not match the network's input/output widths")]
    PatternShape { index: usize },
    #[error("resolution must be a positive whole number of centimetres")]
    BadResolution,
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error("image of {size} bytes exceeds the {capacity}-byte EEPROM")]
    CapacityExceeded { size: usize, capacity: usize },
    #[error("bad image magic")]
    BadMagic,
    #[error("unsupported image version {0:#04x}")]
    BadVersion(u8),
    #[error("image truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("model name {0:?} is not 1-11 ASCII characters")]
    BadModelName(String),
    #[error("non-finite weight in image")]
    NonFinite,
    #[error("{0} unexpected trailing bytes after image")]
    TrailingBytes(usize),
}

/// Layer widths plus the padded array bounds `nmax` (neurons) and `wmax`
/// (connections).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetGeometry {
    widths: Vec<usize>,
    nmax: usize,
    wmax: usize,
}

impl NetGeometry {
    /// Geometry with `nmax = wmax =` the widest layer.
    pub fn new(widths: &[usize]) -> Result<Self, AnnError> {
        let widest = widths.iter().copied().max().unwrap_or(0);
        Self::with_padding(widths, widest, widest)
    }

    pub fn with_padding(widths: &[usize], nmax: usize, wmax: usize) -> Result<Self, AnnError> {
        if widths.len() < 2 {
            return Err(AnnError::TooFewLayers);
        }
        if let Some(i) = widths.iter().position(|w| *w == 0) {
            return Err(AnnError::EmptyLayer(i));
        }
        if widths.len() > 255 || nmax > 255 || wmax > 255 {
            return Err(AnnError::TooLarge(widths.to_vec()));
        }
        let widest = widths.iter().copied().max().unwrap_or(0);
        if nmax < widest || wmax < nmax {
            return Err(AnnError::BadPadding {
                widths: widths.to_vec(),
                nmax,
                wmax,
            });
        }
        Ok(Self {
            widths: widths.to_vec(),
            nmax,
            wmax,
        })
    }

    /// The ADC converter default: 10 inputs, 16 hidden, 8 outputs.
    pub fn converter_default() -> Self {
        Self::new(&[INPUT_BITS, 16, OUTPUT_BITS]).expect("valid default geometry")
    }

    /// Parses `"10-16-8"`.
    pub fn parse(text: &str) -> Result<Self, AnnError> {
        let widths = text
            .split('-')
            .map(|p| p.trim().parse::<usize>().map_err(|_| AnnError::EmptyLayer(0)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(&widths)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of neuron layers, input layer included.
    pub fn layer_count(&self) -> usize {
        self.widths.len()
    }

    pub fn nmax(&self) -> usize {
        self.nmax
    }

    pub fn wmax(&self) -> usize {
        self.wmax
    }

    pub fn inputs(&self) -> usize {
        self.widths[0]
    }

    pub fn outputs(&self) -> usize {
        *self.widths.last().expect("at least two layers")
    }

    pub fn is_converter(&self) -> bool {
        self.inputs() == INPUT_BITS && self.outputs() == OUTPUT_BITS
    }

    /// Size of the padded weight array.
    pub fn slot_count(&self) -> usize {
        (self.layer_count() - 1) * self.nmax * self.wmax
    }

    pub fn image_len(&self) -> usize {
        IMAGE_HEADER_LEN + self.layer_count() + 4 * self.slot_count()
    }

    fn label(&self) -> String {
        self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("-")
    }
}

impl std::fmt::Display for NetGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    geometry: NetGeometry,
    w: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(geometry: NetGeometry) -> Self {
        let w = vec![0.0; geometry.slot_count()];
        Self { geometry, w }
    }

    /// Uniform in [-0.5, 0.5] on every live slot.
    pub fn random(geometry: NetGeometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(geometry);
        for layer in 0..m.geometry.layer_count() - 1 {
            for n in 0..m.geometry.widths[layer + 1] {
                for c in 0..m.geometry.widths[layer] {
                    let v = rng.random_range(-0.5..=0.5);
                    m.set(layer, n, c, v);
                }
            }
        }
        m
    }

    pub fn geometry(&self) -> &NetGeometry {
        &self.geometry
    }

    #[inline]
    fn index(&self, layer: usize, neuron: usize, connection: usize) -> usize {
        (layer * self.geometry.nmax + neuron) * self.geometry.wmax + connection
    }

    /// Weight from neuron `connection` of layer `layer` into neuron `neuron`
    /// of layer `layer + 1` (all zero-based).
    pub fn get(&self, layer: usize, neuron: usize, connection: usize) -> f64 {
        self.w[self.index(layer, neuron, connection)]
    }

    /// Panics when the slot is padding: padded slots must stay 0.
    pub fn set(&mut self, layer: usize, neuron: usize, connection: usize, value: f64) {
        assert!(
            neuron < self.geometry.widths[layer + 1] && connection < self.geometry.widths[layer],
            "slot ({layer}, {neuron}, {connection}) is padding"
        );
        let i = self.index(layer, neuron, connection);
        self.w[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    /// Rounds every weight to the nearest `f32`, the precision of the image.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.w {
            *v = f64::from(*v as f32);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Logistic activation `1 / (1 + e^-(x - 0.5))`.
    TrainSigmoid,
    /// Hard switch at 0.5, as on the microcontroller.
    FrozenThreshold,
}

/// Neuron outputs and error terms of one pass, padded to `nmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub o: Vec<Vec<f64>>,
    pub err: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

impl Activations {
    pub fn new(geometry: &NetGeometry) -> Self {
        let layers = geometry.layer_count();
        Self {
            o: vec![vec![0.0; geometry.nmax]; layers],
            err: vec![vec![0.0; geometry.nmax]; layers],
            target: vec![0.0; geometry.outputs()],
        }
    }

    fn fits(&self, geometry: &NetGeometry) -> bool {
        self.o.len() == geometry.layer_count()
            && self.err.len() == geometry.layer_count()
            && self.o.iter().all(|l| l.len() == geometry.nmax)
            && self.err.iter().all(|l| l.len() == geometry.nmax)
    }

    pub fn output(&self) -> &[f64] {
        let last = self.o.last().expect("at least two layers");
        &last[..self.target.len()]
    }
}

#[inline]
fn logistic(sum: f64) -> f64 {
    1.0 / (1.0 + (-(sum - THRESHOLD)).exp())
}

/// Forward pass into a reusable buffer.
pub fn forward_into(w: &WeightMatrix, input: &[f64], mode: Mode, acts: &mut Activations) {
    let g = &w.geometry;
    assert_eq!(input.len(), g.inputs(), "input width");
    debug_assert!(acts.fits(g));
    for layer in acts.o.iter_mut() {
        layer.fill(0.0);
    }
    acts.o[0][..input.len()].copy_from_slice(input);
    for layer in 0..g.layer_count() - 1 {
        let (lower, upper) = acts.o.split_at_mut(layer + 1);
        let prev = &lower[layer][..g.widths[layer]];
        let next = &mut upper[0];
        for (n, out) in next.iter_mut().enumerate().take(g.widths[layer + 1]) {
            let base = w.index(layer, n, 0);
            let row = &w.w[base..base + prev.len()];
            let sum: f64 = prev.iter().zip(row).map(|(a, b)| a * b).sum();
            *out = match mode {
                Mode::TrainSigmoid => logistic(sum),
                Mode::FrozenThreshold => {
                    if sum < THRESHOLD {
                        0.0
                    } else {
                        1.0
                    }
                }
            };
        }
    }
}

pub fn forward_pass(w: &WeightMatrix, input: &[f64], mode: Mode) -> (Vec<f64>, Activations) {
    let mut acts = Activations::new(&w.geometry);
    forward_into(w, input, mode, &mut acts);
    (acts.output().to_vec(), acts)
}

/// One back-propagation step for `target`.
///
/// Output error is `o(1-o)(target-o)`. Walking down from the top weight
/// layer, each layer's weights are updated first and the layer's error terms
/// are then propagated through the already-updated weights.
pub fn backward_pass(w: &mut WeightMatrix, acts: &mut Activations, target: &[f64], eta: f64) -> Result<(), AnnError> {
    let g = w.geometry.clone();
    if !acts.fits(&g) || target.len() != g.outputs() {
        return Err(AnnError::GeometryMismatch {
            expected: g.label(),
            actual: format!("{} layers / {} targets", acts.o.len(), target.len()),
        });
    }
    acts.target.clear();
    acts.target.extend_from_slice(target);
    for layer in acts.err.iter_mut() {
        layer.fill(0.0);
    }
    let top = g.layer_count() - 1;
    for (x, t) in target.iter().enumerate() {
        let o = acts.o[top][x];
        acts.err[top][x] = o * (1.0 - o) * (t - o);
    }
    for layer in (0..top).rev() {
        let fan_in = g.widths[layer];
        let fan_out = g.widths[layer + 1];
        for n in 0..fan_out {
            let delta = eta * acts.err[layer + 1][n];
            let base = w.index(layer, n, 0);
            for (wc, o) in w.w[base..base + fan_in].iter_mut().zip(&acts.o[layer][..fan_in]) {
                *wc += delta * o;
            }
        }
        if layer == 0 {
            break;
        }
        for n in 0..fan_in {
            let mut e = 0.0;
            for c in 0..fan_out {
                e += acts.err[layer + 1][c] * w.get(layer, c, n);
            }
            let o = acts.o[layer][n];
            acts.err[layer][n] = e * o * (1.0 - o);
        }
    }
    Ok(())
}

/// MSB-first bit vector of `value`.
pub fn to_bits(value: u32, width: usize) -> Vec<f64> {
    (0..width).map(|i| f64::from((value >> (width - 1 - i)) & 1)).collect()
}

/// MSB-first; any output of at least 0.5 counts as a set bit.
pub fn from_bits(bits: &[f64]) -> u32 {
    bits.iter().fold(0, |acc, b| (acc << 1) | u32::from(*b >= THRESHOLD))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub patterns: Vec<Pattern>,
    /// Target class of each pattern, as an integer.
    pub classes: Vec<u32>,
    pub class_counts: BTreeMap<u32, usize>,
}

impl TrainingSet {
    /// Arbitrary patterns, e.g. toy problems.
    pub fn from_patterns(patterns: Vec<Pattern>) -> Self {
        let classes: Vec<u32> = patterns.iter().map(|p| from_bits(&p.target)).collect();
        let mut class_counts = BTreeMap::new();
        for c in &classes {
            *class_counts.entry(*c).or_insert(0) += 1;
        }
        Self {
            patterns,
            classes,
            class_counts,
        }
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }
}

/// Distance class (cm) of every ADC code; 0 marks codes outside the
/// measuring branch.
pub fn code_classes(spec: &SensorSpec, resolution: u32) -> Result<Vec<u32>, AnnError> {
    if spec.output_kind == OutputKind::Digital1Bit {
        return Err(SensorError::OneBitOutput {
            model: spec.model_name.clone(),
        }
        .into());
    }
    if resolution == 0 {
        return Err(AnnError::BadResolution);
    }
    let curve = spec.transfer_curve()?;
    let res = f64::from(resolution);
    Ok((0..PATTERN_COUNT as u16)
        .map(|code| match curve.distance(code_voltage(code, VREF)) {
            Some(d) => ((d / res).round() * res).clamp(0.0, 255.0) as u32,
            None => 0,
        })
        .collect())
}

/// One pattern per ADC code, targets from the noise-free inverse curve.
pub fn generate_training_data(spec: &SensorSpec, resolution: u32) -> Result<TrainingSet, AnnError> {
    let classes = code_classes(spec, resolution)?;
    let patterns = classes
        .iter()
        .enumerate()
        .map(|(code, class)| Pattern {
            input: to_bits(code as u32, INPUT_BITS),
            target: to_bits(*class, OUTPUT_BITS),
        })
        .collect();
    Ok(TrainingSet::from_patterns(patterns))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            eta: 1.0,
            epochs: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub weights: WeightMatrix,
    /// Output bits on the wrong side of 0.5, per epoch, counted during the
    /// epoch's forward passes.
    pub bit_errors: Vec<usize>,
    pub converged: bool,
}

/// Online back-propagation in pattern order; stops after the first epoch
/// without bit errors. The returned weights are rounded to `f32`.
pub fn train(ts: &TrainingSet, geometry: &NetGeometry, params: TrainParams) -> Result<TrainOutcome, AnnError> {
    train_with(ts, geometry, params, |_, _| {})
}

/// [`train`] with a per-epoch callback `(epoch, bit_errors)`.
pub fn train_with<F: FnMut(usize, usize)>(
    ts: &TrainingSet,
    geometry: &NetGeometry,
    params: TrainParams,
    mut on_epoch: F,
) -> Result<TrainOutcome, AnnError> {
    if params.epochs == 0 {
        return Err(AnnError::ZeroEpochs);
    }
    for (index, p) in ts.patterns.iter().enumerate() {
        if p.input.len() != geometry.inputs() || p.target.len() != geometry.outputs() {
            return Err(AnnError::PatternShape { index });
        }
    }
    let mut w = WeightMatrix::random(geometry.clone(), params.seed);
    let mut acts = Activations::new(geometry);
    let mut history = Vec::new();
    let mut converged = false;
    for epoch in 0..params.epochs {
        let mut errors = 0;
        for p in &ts.patterns {
            forward_into(&w, &p.input, Mode::TrainSigmoid, &mut acts);
            errors += acts
                .output()
                .iter()
                .zip(&p.target)
                .filter(|(o, t)| (**o >= THRESHOLD) != (**t >= THRESHOLD))
                .count();
            backward_pass(&mut w, &mut acts, &p.target, params.eta)?;
        }
        history.push(errors);
        on_epoch(epoch, errors);
        if errors == 0 {
            converged = true;
            break;
        }
    }
    w.round_to_f32();
    Ok(TrainOutcome {
        weights: w,
        bit_errors: history,
        converged,
    })
}

/// Code -> distance (cm) through the frozen pass; 0 means "no valid
/// distance".
pub fn infer_distance(w: &WeightMatrix, adc: u16) -> u8 {
    debug_assert!(w.geometry.is_converter());
    let input = to_bits(u32::from(adc) & 0x3ff, INPUT_BITS);
    let (out, _) = forward_pass(w, &input, Mode::FrozenThreshold);
    from_bits(&out) as u8
}

/// Fraction of patterns whose frozen output decodes to the target class.
pub fn frozen_accuracy(w: &WeightMatrix, ts: &TrainingSet) -> f64 {
    let mut acts = Activations::new(&w.geometry);
    let hits = ts
        .patterns
        .iter()
        .zip(&ts.classes)
        .filter(|(p, class)| {
            forward_into(w, &p.input, Mode::FrozenThreshold, &mut acts);
            from_bits(acts.output()) == **class
        })
        .count();
    hits as f64 / ts.len().max(1) as f64
}

/// A weight matrix as stored in EEPROM, tagged with its sensor model.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightImage {
    pub model: String,
    pub weights: WeightMatrix,
    pub converged: bool,
}

impl WeightImage {
    pub fn new(model: impl Into<String>, weights: WeightMatrix) -> Self {
        Self {
            model: model.into(),
            weights,
            converged: true,
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.weights.geometry.image_len() + usize::from(!self.converged)
    }

    /// `"EMRW"`, version, zero-padded model name, Lmax/nmax/wmax, layer
    /// widths, then every slot as little-endian `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>, AnnError> {
        let name = self.model.as_bytes();
        if name.is_empty() || name.len() > MODEL_NAME_LEN || !self.model.is_ascii() || name.contains(&0) {
            return Err(AnnError::BadModelName(self.model.clone()));
        }
        let size = self.encoded_len();
        if size > EEPROM_CAPACITY {
            return Err(AnnError::CapacityExceeded {
                size,
                capacity: EEPROM_CAPACITY,
            });
        }
        let g = &self.weights.geometry;
        let mut out = Vec::with_capacity(size);
        out.extend_from_slice(IMAGE_MAGIC);
        out.push(IMAGE_VERSION);
        out.extend_from_slice(name);
        out.resize(4 + 1 + MODEL_NAME_LEN, 0);
        out.push(g.layer_count() as u8);
        out.push(g.nmax as u8);
        out.push(g.wmax as u8);
        out.extend(g.widths.iter().map(|w| *w as u8));
        for v in &self.weights.w {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        if !self.converged {
            out.push(NOT_CONVERGED_MARKER);
        }
        Ok(out)
    }

    /// Decodes one image from the front of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), AnnError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(AnnError::Truncated {
                    needed,
                    have: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        if &bytes[..4] != IMAGE_MAGIC {
            return Err(AnnError::BadMagic);
        }
        need(IMAGE_HEADER_LEN)?;
        if bytes[4] != IMAGE_VERSION {
            return Err(AnnError::BadVersion(bytes[4]));
        }
        let name_bytes = &bytes[5..5 + MODEL_NAME_LEN];
        let name_len = name_bytes.iter().position(|b| *b == 0).unwrap_or(MODEL_NAME_LEN);
        let model = String::from_utf8(name_bytes[..name_len].to_vec())
            .ok()
            .filter(|m| m.is_ascii() && !m.is_empty())
            .ok_or_else(|| AnnError::BadModelName(String::from_utf8_lossy(name_bytes).into_owned()))?;
        let lmax = usize::from(bytes[16]);
        let nmax = usize::from(bytes[17]);
        let wmax = usize::from(bytes[18]);
        need(IMAGE_HEADER_LEN + lmax)?;
        let widths: Vec<usize> = bytes[IMAGE_HEADER_LEN..IMAGE_HEADER_LEN + lmax]
            .iter()
            .map(|b| usize::from(*b))
            .collect();
        let geometry = NetGeometry::with_padding(&widths, nmax, wmax)?;
        let total = geometry.image_len();
        need(total)?;
        let mut weights = WeightMatrix::zeros(geometry);
        let body = &bytes[IMAGE_HEADER_LEN + lmax..total];
        for (slot, chunk) in weights.w.iter_mut().zip(body.chunks_exact(4)) {
            let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if !v.is_finite() {
                return Err(AnnError::NonFinite);
            }
            *slot = f64::from(v);
        }
        let converged = bytes.get(total) != Some(&NOT_CONVERGED_MARKER);
        let used = total + usize::from(!converged);
        Ok((
            Self {
                model,
                weights,
                converged,
            },
            used,
        ))
    }

    /// Decodes exactly one image.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AnnError> {
        let (image, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(AnnError::TrailingBytes(bytes.len() - used));
        }
        Ok(image)
    }
}

pub fn serialize_weights(w: &WeightMatrix, model: &str) -> Result<Vec<u8>, AnnError> {
    WeightImage::new(model, w.clone()).to_bytes()
}

pub fn deserialize_weights(bytes: &[u8]) -> Result<WeightMatrix, AnnError> {
    Ok(WeightImage::from_bytes(bytes)?.weights)
}

/// Parses an EEPROM dump holding back-to-back images. Reading stops at the
/// end of the dump or at erased memory (0x00 or 0xFF).
pub fn parse_eeprom(bytes: &[u8]) -> Result<Vec<WeightImage>, AnnError> {
    if bytes.len() > EEPROM_CAPACITY {
        return Err(AnnError::CapacityExceeded {
            size: bytes.len(),
            capacity: EEPROM_CAPACITY,
        });
    }
    let mut images = Vec::new();
    let mut rest = bytes;
    loop {
        if rest.is_empty() || (!images.is_empty() && (rest[0] == 0x00 || rest[0] == 0xff)) {
            break;
        }
        let (image, used) = WeightImage::decode_prefix(rest)?;
        images.push(image);
        rest = &rest[used..];
    }
    if images.is_empty() {
        return Err(AnnError::Truncated { needed: 4, have: 0 });
    }
    Ok(images)
}
