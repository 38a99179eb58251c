//! Small fully connected networks with manual backpropagation, and the
//! saturating GAN on a one-dimensional mixture of three Gaussians.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RidgeError};
use crate::problems::ZeroSumProblem;
use crate::vecspace::{DenseMatrix, JointPoint};

/// `ln(1e-12)`: log-probabilities are clamped here.
pub const LOG_CLAMP: f64 = -27.631021115928547;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputActivation {
    Identity,
    Sigmoid,
}

/// Layer widths `[in, hidden..., out]`; hidden layers use tanh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub widths: Vec<usize>,
    pub output: OutputActivation,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(RidgeError::Shape(format!("bad layer widths {widths:?}")));
        }
        Ok(Self { widths, output })
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("at least two widths")
    }
}

/// Network parameters stored flat, layer by layer, each layer as its
/// row-major `out × in` weight matrix followed by its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    arch: MlpArch,
    flat: Vec<f64>,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArch) -> Self {
        Self { arch: arch.clone(), flat: vec![0.0; arch.n_params()] }
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init(arch: &MlpArch, rng: &mut impl Rng) -> Self {
        let mut flat = Vec::with_capacity(arch.n_params());
        for w in arch.widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                flat.push(rng.random_range(-bound..=bound));
            }
        }
        Self { arch: arch.clone(), flat }
    }

    pub fn from_flat(arch: &MlpArch, flat: &[f64]) -> Result<Self> {
        if flat.len() != arch.n_params() {
            return Err(RidgeError::Shape(format!(
                "{} parameters for an architecture with {}",
                flat.len(),
                arch.n_params()
            )));
        }
        Ok(Self { arch: arch.clone(), flat: flat.to_vec() })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    /// Offset of layer `l`'s weights in the flat vector.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.arch.widths.windows(2).take(l).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn weight(&self, l: usize) -> DenseMatrix {
        let (n_in, n_out) = (self.arch.widths[l], self.arch.widths[l + 1]);
        let o = self.layer_offset(l);
        DenseMatrix::from_row_major(n_out, n_in, self.flat[o..o + n_in * n_out].to_vec()).expect("layout")
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (n_in, n_out) = (self.arch.widths[l], self.arch.widths[l + 1]);
        let o = self.layer_offset(l) + n_in * n_out;
        &self.flat[o..o + n_out]
    }

    /// Activations of every layer for a row-major batch; the last entry holds
    /// the pre-activation of the output layer.
    fn activations(&self, inputs: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.arch.widths.len());
        acts.push(inputs.to_vec());
        let mut off = 0;
        let last = self.arch.n_layers() - 1;
        for (l, w) in self.arch.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.flat[off..off + n_in * n_out];
            let bias = &self.flat[off + n_in * n_out..off + n_in * n_out + n_out];
            let prev = acts.last().expect("non-empty");
            let mut out = Vec::with_capacity(batch * n_out);
            for sample in prev.chunks_exact(n_in) {
                for (row, b) in weights.chunks_exact(n_in).zip(bias) {
                    let v = b + row.iter().zip(sample).map(|(a, b)| a * b).sum::<f64>();
                    out.push(if l == last { v } else { v.tanh() });
                }
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        acts
    }

    /// Accumulates the parameter gradient of `Σ_b ⟨d_out_b, logits_b⟩` into
    /// `grad` and returns the gradient with respect to the inputs when asked.
    fn backward(&self, acts: &[Vec<f64>], d_out: &[f64], grad: Option<&mut [f64]>, want_input: bool) -> Vec<f64> {
        let n_layers = self.arch.n_layers();
        let mut delta = d_out.to_vec();
        let mut grad = grad;
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.arch.widths[l], self.arch.widths[l + 1]);
            let off = self.layer_offset(l);
            let prev = &acts[l];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (d, p) in delta.chunks_exact(n_out).zip(prev.chunks_exact(n_in)) {
                    for ((o, row), bo) in d.iter().zip(gw.chunks_exact_mut(n_in)).zip(gb.iter_mut()) {
                        if *o == 0.0 {
                            continue;
                        }
                        for (gi, pi) in row.iter_mut().zip(p) {
                            *gi += o * pi;
                        }
                        *bo += o;
                    }
                }
            }
            if l == 0 && !want_input {
                return Vec::new();
            }
            let weights = &self.flat[off..off + n_in * n_out];
            let mut back = vec![0.0; prev.len()];
            for (d, bk) in delta.chunks_exact(n_out).zip(back.chunks_exact_mut(n_in)) {
                for (o, row) in d.iter().zip(weights.chunks_exact(n_in)) {
                    if *o == 0.0 {
                        continue;
                    }
                    for (b, w) in bk.iter_mut().zip(row) {
                        *b += o * w;
                    }
                }
            }
            if l > 0 {
                // prev is a tanh output
                for (b, a) in back.iter_mut().zip(prev) {
                    *b *= 1.0 - a * a;
                }
            }
            delta = back;
        }
        delta
    }
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(a)`, computed stably.
fn log_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        -(-a).exp().ln_1p()
    } else {
        a - a.exp().ln_1p()
    }
}

/// Batch forward pass; rows of `inputs` are samples.
pub fn forward(params: &MlpParams, inputs: &DenseMatrix) -> Result<DenseMatrix> {
    if inputs.cols() != params.arch.input_dim() {
        return Err(RidgeError::Shape(format!(
            "inputs have {} columns, network expects {}",
            inputs.cols(),
            params.arch.input_dim()
        )));
    }
    let out_dim = params.arch.output_dim();
    let mut acts = params.activations(inputs.as_slice(), inputs.rows());
    let mut data = acts.pop().expect("non-empty");
    if params.arch.output == OutputActivation::Sigmoid {
        data.iter_mut().for_each(|v| *v = sigmoid(*v));
    }
    DenseMatrix::from_row_major(inputs.rows(), out_dim, data)
}

/// Value and gradients of the saturating GAN objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GanEval {
    pub value: f64,
    pub grad_gen: Vec<f64>,
    pub grad_disc: Vec<f64>,
}

/// `f = mean log D(data) + mean log(1 - D(G(z))) - l2·‖disc‖²`, where the
/// discriminator ends in a sigmoid and the generator is linear on output.
///
/// Both gradients are of `f` itself; the generator minimises and the
/// discriminator maximises.
pub fn gan_loss_and_grads(
    gen: &MlpParams,
    disc: &MlpParams,
    data: &[f64],
    latents: &DenseMatrix,
    l2_disc: f64,
) -> Result<GanEval> {
    gan_eval(gen, disc, data, latents, l2_disc, true)
}

fn check_gan_shapes(gen: &MlpParams, disc: &MlpParams, data: &[f64], latents: &DenseMatrix) -> Result<()> {
    if data.is_empty() || latents.rows() == 0 {
        return Err(RidgeError::Shape("GAN batches must be non-empty".into()));
    }
    if gen.arch.output_dim() != 1 || disc.arch.input_dim() != 1 || disc.arch.output_dim() != 1 {
        return Err(RidgeError::Shape("the GAN expects scalar samples and a scalar discriminator".into()));
    }
    if disc.arch.output != OutputActivation::Sigmoid || gen.arch.output != OutputActivation::Identity {
        return Err(RidgeError::Shape("generator output must be linear and discriminator output a sigmoid".into()));
    }
    if latents.cols() != gen.arch.input_dim() {
        return Err(RidgeError::Shape("latent width does not match the generator".into()));
    }
    Ok(())
}

/// Per-sample log terms and their logit slopes, scaled by `weight`; clamped
/// samples get a zero slope.
fn log_terms(logits: &[f64], real: bool, weight: f64, first_index: usize) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut slopes = Vec::with_capacity(logits.len());
    for (i, &a) in logits.iter().enumerate() {
        // ln σ(a) has slope σ(-a); ln(1 - σ(a)) = ln σ(-a) has slope -σ(a)
        let l = if real { log_sigmoid(a) } else { log_sigmoid(-a) };
        if !l.is_finite() {
            return Err(RidgeError::NonFiniteLoss { index: first_index + i });
        }
        if l < LOG_CLAMP {
            total += LOG_CLAMP;
            slopes.push(0.0);
        } else {
            total += l;
            slopes.push(weight * if real { sigmoid(-a) } else { -sigmoid(a) });
        }
    }
    Ok((weight * total, slopes))
}

fn gan_eval(
    gen: &MlpParams,
    disc: &MlpParams,
    data: &[f64],
    latents: &DenseMatrix,
    l2: f64,
    want_gen: bool,
) -> Result<GanEval> {
    check_gan_shapes(gen, disc, data, latents)?;
    let mut grad_disc = vec![0.0; disc.flat.len()];
    let mut grad_gen = vec![0.0; if want_gen { gen.flat.len() } else { 0 }];

    let acts = disc.activations(data, data.len());
    let (real, slopes) = log_terms(acts.last().expect("non-empty"), true, 1.0 / data.len() as f64, 0)?;
    disc.backward(&acts, &slopes, Some(&mut grad_disc), false);

    let g_acts = gen.activations(latents.as_slice(), latents.rows());
    let fake_samples = g_acts.last().expect("non-empty");
    let acts = disc.activations(fake_samples, latents.rows());
    let (fake, slopes) = log_terms(acts.last().expect("non-empty"), false, 1.0 / latents.rows() as f64, data.len())?;
    let d_samples = disc.backward(&acts, &slopes, Some(&mut grad_disc), want_gen);
    if want_gen {
        gen.backward(&g_acts, &d_samples, Some(&mut grad_gen), false);
    }

    let sq: f64 = disc.flat.iter().map(|v| v * v).sum();
    let value = real + fake - l2 * sq;
    for (g, p) in grad_disc.iter_mut().zip(&disc.flat) {
        *g -= 2.0 * l2 * p;
    }
    if !value.is_finite() {
        return Err(RidgeError::NonFiniteLoss { index: data.len() + latents.rows() });
    }
    Ok(GanEval { value, grad_gen, grad_disc })
}

/// Configuration of the mixture-of-Gaussians GAN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MogGanConfig {
    pub n_points: usize,
    pub hidden_units: usize,
    pub latent_dim: usize,
    pub seed: u64,
    pub l2_disc: f64,
}

impl MogGanConfig {
    /// 500 points, two hidden layers of 16 units, 8 latent dimensions.
    pub fn desk() -> Self {
        Self { n_points: 500, hidden_units: 16, latent_dim: 8, seed: 0, l2_disc: 0.0002 }
    }

    /// 5000 points, two hidden layers of 64 units, 16 latent dimensions.
    pub fn full() -> Self {
        Self { n_points: 5000, hidden_units: 64, latent_dim: 16, seed: 0, l2_disc: 0.0002 }
    }
}

/// Component means of the data mixture; each has variance 0.01.
pub const MOG_MEANS: [f64; 3] = [-4.0, 0.0, 4.0];

/// The GAN as a zero-sum problem: `x` holds the generator parameters and `y`
/// the discriminator parameters.
#[derive(Debug)]
pub struct MlpGanProblem {
    config: MogGanConfig,
    gen_arch: MlpArch,
    disc_arch: MlpArch,
    data: Vec<f64>,
    latents: DenseMatrix,
    start: JointPoint,
    // generator samples for the last leader parameters seen by grad_y
    samples: Mutex<Option<(Vec<f64>, Vec<f64>)>>,
}

pub fn make_mog_gan(n_points: usize, hidden_units: usize, seed: u64) -> Result<MlpGanProblem> {
    MlpGanProblem::new(MogGanConfig { n_points, hidden_units, latent_dim: 16, seed, l2_disc: 0.0002 })
}

impl MlpGanProblem {
    pub fn new(config: MogGanConfig) -> Result<Self> {
        if config.n_points < 30 {
            return Err(RidgeError::Spec(format!("need at least 30 data points, got {}", config.n_points)));
        }
        if config.hidden_units < 4 {
            return Err(RidgeError::Spec(format!("need at least 4 hidden units, got {}", config.hidden_units)));
        }
        if config.latent_dim == 0 {
            return Err(RidgeError::Spec("latent dimension must be positive".into()));
        }
        let h = config.hidden_units;
        let gen_arch = MlpArch::new(vec![config.latent_dim, h, h, 1], OutputActivation::Identity)?;
        let disc_arch = MlpArch::new(vec![1, h, h, 1], OutputActivation::Sigmoid)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let noise = Normal::new(0.0, 0.1).expect("valid normal");
        let data: Vec<f64> =
            (0..config.n_points).map(|_| MOG_MEANS[rng.random_range(0..3)] + noise.sample(&mut rng)).collect();
        let latents = DenseMatrix::from_fn(config.n_points, config.latent_dim, |_, _| rng.sample(StandardNormal));
        let gen = MlpParams::init(&gen_arch, &mut rng);
        let disc = MlpParams::init(&disc_arch, &mut rng);
        let start = JointPoint::new(gen.into_flat(), disc.into_flat());
        Ok(Self { config, gen_arch, disc_arch, data, latents, start, samples: Mutex::new(None) })
    }

    pub fn config(&self) -> &MogGanConfig {
        &self.config
    }

    pub fn gen_arch(&self) -> &MlpArch {
        &self.gen_arch
    }

    pub fn disc_arch(&self) -> &MlpArch {
        &self.disc_arch
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn latents(&self) -> &DenseMatrix {
        &self.latents
    }

    pub fn split(&self, z: &JointPoint) -> Result<(MlpParams, MlpParams)> {
        Ok((MlpParams::from_flat(&self.gen_arch, &z.x)?, MlpParams::from_flat(&self.disc_arch, &z.y)?))
    }

    pub fn evaluate(&self, z: &JointPoint) -> Result<GanEval> {
        let (g, d) = self.split(z)?;
        gan_loss_and_grads(&g, &d, &self.data, &self.latents, self.config.l2_disc)
    }

    /// Generator samples for the fixed latent batch.
    pub fn generate(&self, gen_params: &[f64]) -> Result<Vec<f64>> {
        let g = MlpParams::from_flat(&self.gen_arch, gen_params)?;
        Ok(forward(&g, &self.latents)?.as_slice().to_vec())
    }

    fn cached_samples(&self, gen_params: &[f64]) -> Result<Vec<f64>> {
        let mut guard = self.samples.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((key, s)) = guard.as_ref() {
            if key.as_slice() == gen_params {
                return Ok(s.clone());
            }
        }
        let s = self.generate(gen_params)?;
        *guard = Some((gen_params.to_vec(), s.clone()));
        Ok(s)
    }

    /// Discriminator gradient given precomputed fake samples.
    fn disc_grad(&self, disc: &MlpParams, fake: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; disc.flat.len()];
        let acts = disc.activations(&self.data, self.data.len());
        let (_, slopes) = log_terms(acts.last().expect("non-empty"), true, 1.0 / self.data.len() as f64, 0)?;
        disc.backward(&acts, &slopes, Some(&mut grad), false);
        let acts = disc.activations(fake, fake.len());
        let (_, slopes) = log_terms(acts.last().expect("non-empty"), false, 1.0 / fake.len() as f64, self.data.len())?;
        disc.backward(&acts, &slopes, Some(&mut grad), false);
        for (g, p) in grad.iter_mut().zip(&disc.flat) {
            *g -= 2.0 * self.config.l2_disc * p;
        }
        Ok(grad)
    }
}

impl ZeroSumProblem for MlpGanProblem {
    fn id(&self) -> String {
        let c = &self.config;
        format!("mog-gan:{}:{}:{}:{}", c.n_points, c.hidden_units, c.latent_dim, c.seed)
    }

    fn dims(&self) -> (usize, usize) {
        (self.gen_arch.n_params(), self.disc_arch.n_params())
    }

    fn value(&self, z: &JointPoint) -> f64 {
        self.evaluate(z).map(|e| e.value).unwrap_or(f64::NAN)
    }

    fn grad(&self, z: &JointPoint) -> JointPoint {
        match self.evaluate(z) {
            Ok(e) => JointPoint::new(e.grad_gen, e.grad_disc),
            Err(_) => {
                let (n, m) = self.dims();
                JointPoint::new(vec![f64::NAN; n], vec![f64::NAN; m])
            }
        }
    }

    fn grad_y(&self, z: &JointPoint) -> Vec<f64> {
        let out = self
            .cached_samples(&z.x)
            .and_then(|fake| self.disc_grad(&MlpParams::from_flat(&self.disc_arch, &z.y)?, &fake));
        out.unwrap_or_else(|_| vec![f64::NAN; self.disc_arch.n_params()])
    }

    fn default_start(&self) -> JointPoint {
        self.start.clone()
    }
}

/// JSON sidecar describing a flat parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointLayout {
    pub format: String,
    pub leader: MlpArch,
    pub follower: MlpArch,
    pub n_leader: usize,
    pub n_follower: usize,
    pub layout: String,
}

impl CheckpointLayout {
    pub fn for_gan(problem: &MlpGanProblem) -> Self {
        Self {
            format: "f64-le".into(),
            leader: problem.gen_arch.clone(),
            follower: problem.disc_arch.clone(),
            n_leader: problem.gen_arch.n_params(),
            n_follower: problem.disc_arch.n_params(),
            layout: "leader then follower; per layer row-major weights (out x in) then bias".into(),
        }
    }
}

/// Writes `<stem>.bin` (little-endian f64, leader then follower) and
/// `<stem>.json`, each through a temporary file and a rename.
pub fn save_checkpoint(stem: &Path, z: &JointPoint, layout: &CheckpointLayout) -> Result<(PathBuf, PathBuf)> {
    if (z.n(), z.m()) != (layout.n_leader, layout.n_follower) {
        return Err(RidgeError::Shape("checkpoint does not match its layout".into()));
    }
    let bin = stem.with_extension("bin");
    let json = stem.with_extension("json");
    let mut bytes = Vec::with_capacity(8 * z.dim());
    for v in z.x.iter().chain(&z.y) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(&bin, &bytes)?;
    let text = serde_json::to_string_pretty(layout).expect("layout serialises");
    write_atomic(&json, text.as_bytes())?;
    Ok((bin, json))
}

pub fn load_checkpoint(stem: &Path) -> Result<(JointPoint, CheckpointLayout)> {
    let io = |e: std::io::Error| RidgeError::Config(format!("cannot read checkpoint {}: {e}", stem.display()));
    let text = fs::read_to_string(stem.with_extension("json")).map_err(io)?;
    let layout: CheckpointLayout =
        serde_json::from_str(&text).map_err(|e| RidgeError::Config(format!("bad checkpoint sidecar: {e}")))?;
    let bytes = fs::read(stem.with_extension("bin")).map_err(io)?;
    if bytes.len() != 8 * (layout.n_leader + layout.n_follower) {
        return Err(RidgeError::Shape("checkpoint size does not match its sidecar".into()));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((JointPoint::from_concat(&vals, layout.n_leader)?, layout))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |e: std::io::Error| RidgeError::Config(format!("cannot write {}: {e}", path.display()));
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("out")));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}
