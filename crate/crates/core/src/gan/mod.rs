//! Four-network recurrent GAN working in an embedded space.
//!
//! * embedder `E`: trace `[T x 1]` to embedding `[T x e]` (sigmoid),
//! * recovery `R`: embedding to trace (sigmoid, so values stay in `[0, 1]`),
//! * generator `G`: per-step noise plus the previous embedding vector to the
//!   next embedding vector. During the stepwise loss the previous vector is
//!   the real one (teacher forcing); when sampling it is `G`'s own output,
//! * discriminator `D`: embedding to per-step probability of "synthetic".
//!
//! Each minibatch runs three phases in order: autoencoder
//! (`L_R + alpha L_S`), generator (`(1 - L_Af) + eta L_S + eta L_D + L_M`),
//! discriminator (`L_Af + L_Ar`). Gradients are computed per example so that
//! DP-SGD sanitisation can be applied to every network.

pub mod losses;
pub mod spsa;

use std::io::Write;
use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causality::{estimate_on_indicators, CausalityMatrix, CausalityState, CausalityTrainConfig};
use crate::data::{denormalize, GlucoseTrace, NormalizedTrace, TraceSet};
use crate::error::{ForgeError, Result};
use crate::motif::{indicator_matrix, MotifSet};
use crate::nn::{Activation, LstmCache, LstmNet, Optimizer, OptimizerKind};
use crate::privacy::{clip_and_noise, epsilon_of, extended_f64, mean_gradient, noise_multiplier_for, DpSgdConfig};

use losses::{bce_grad, loss_distributional_grad, loss_reconstruction, loss_stepwise};
use spsa::{motif_loss_of_batch, spsa_gradient_lm, SpsaConfig};

pub const CHECKPOINT_FORMAT: &str = "forge-gan-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HiddenSizes {
    pub embedder: usize,
    pub recovery: usize,
    pub generator: usize,
    pub discriminator: usize,
}

impl Default for HiddenSizes {
    fn default() -> Self {
        Self { embedder: 16, recovery: 16, generator: 16, discriminator: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub autoencoder: f64,
    pub generator: f64,
    pub discriminator: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { autoencoder: 0.05, generator: 0.05, discriminator: 0.05 }
    }
}

/// DP-SGD settings for the GAN. The noise multiplier is calibrated from
/// `epsilon` unless given explicitly; `epsilon = inf` turns sanitisation
/// into a pass-through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanPrivacy {
    #[serde(with = "extended_f64")]
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_clip", with = "extended_f64")]
    pub clip_norm: f64,
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
}

fn default_delta() -> f64 {
    5e-4
}

fn default_clip() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub embed_dim: usize,
    pub hidden: HiddenSizes,
    pub alpha: f64,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Per-step noise width; defaults to `embed_dim`.
    pub noise_dim: Option<usize>,
    pub learning_rates: LearningRates,
    pub optimizer: OptimizerKind,
    pub privacy: Option<GanPrivacy>,
    /// Whether to steer the generator with the causality matrix.
    pub motif_loss: bool,
    pub spsa: SpsaConfig,
    /// Epochs between refreshes of the synthetic causality matrix.
    pub refresh_every: usize,
    /// Synthetic traces used for each refresh; defaults to `batch_size`.
    pub refresh_batch: Option<usize>,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            embed_dim: 8,
            hidden: HiddenSizes::default(),
            alpha: 0.1,
            eta: 10.0,
            batch_size: 32,
            epochs: 100,
            noise_dim: None,
            learning_rates: LearningRates::default(),
            optimizer: OptimizerKind::Sgd,
            privacy: None,
            motif_loss: true,
            spsa: SpsaConfig::default(),
            refresh_every: 1,
            refresh_batch: None,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn noise_dim(&self) -> usize {
        self.noise_dim.unwrap_or(self.embed_dim)
    }

    pub fn validate(&self, trace_len: usize) -> Result<()> {
        let h = &self.hidden;
        let bad = |msg: String| Err(ForgeError::Config(msg));
        if !(self.alpha > 0.0 && self.eta > 0.0) {
            return bad(format!("alpha and eta must be positive (alpha={}, eta={})", self.alpha, self.eta));
        }
        if self.embed_dim == 0 || self.embed_dim >= trace_len {
            return bad(format!("embed_dim {} must be in 1..T (T={trace_len})", self.embed_dim));
        }
        if [h.embedder, h.recovery, h.generator, h.discriminator].contains(&0) {
            return bad("hidden sizes must be positive".into());
        }
        if self.batch_size == 0 || self.noise_dim() == 0 || self.refresh_every == 0 {
            return bad("batch_size, noise_dim and refresh_every must be positive".into());
        }
        let lr = &self.learning_rates;
        if !(lr.autoencoder > 0.0 && lr.generator > 0.0 && lr.discriminator > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if let Some(p) = &self.privacy {
            if !(p.epsilon >= 0.0) || !(0.0..1.0).contains(&p.delta) || !(p.clip_norm > 0.0) {
                return bad(format!("invalid GAN privacy settings {p:?}"));
            }
        }
        Ok(())
    }

    /// Sanitiser settings for a training set of `n` traces.
    pub fn resolve_privacy(&self, n: usize) -> Result<Option<DpSgdConfig>> {
        let Some(p) = &self.privacy else { return Ok(None) };
        let sample_rate = (self.batch_size.min(n) as f64 / n as f64).min(1.0);
        let steps = (self.epochs.max(1) * n.div_ceil(self.batch_size)) as u64;
        if p.epsilon.is_infinite() {
            return Ok(Some(DpSgdConfig::disabled(sample_rate, steps)));
        }
        let z = match p.noise_multiplier {
            Some(z) => z,
            None => noise_multiplier_for(p.epsilon, p.delta, sample_rate, steps)?,
        };
        Ok(Some(DpSgdConfig { clip_norm: p.clip_norm, noise_multiplier: z, sample_rate, steps }))
    }
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossReport {
    pub epoch: u64,
    pub l_r: f64,
    pub l_s: f64,
    pub l_m: f64,
    pub l_d: f64,
    pub l_ar: f64,
    pub l_af: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "epoch,L_R,L_S,L_M,L_D,L_Ar,L_Af";

    pub fn values(&self) -> [f64; 6] {
        [self.l_r, self.l_s, self.l_m, self.l_d, self.l_ar, self.l_af]
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Shortest round-trip float formatting, so logs compare bitwise.
    pub fn csv_row(&self) -> String {
        let v = self.values();
        format!("{},{:?},{:?},{:?},{:?},{:?},{:?}", self.epoch, v[0], v[1], v[2], v[3], v[4], v[5])
    }
}

pub fn write_loss_log<W: Write>(mut w: W, reports: &[LossReport]) -> Result<()> {
    writeln!(w, "{}", LossReport::CSV_HEADER)?;
    for r in reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

/// Everything the generator needs to compute the motif-causality loss.
#[derive(Debug, Clone)]
pub struct MotifGuidance {
    pub matrix: CausalityMatrix,
    pub motifs: MotifSet,
    pub causality: CausalityTrainConfig,
}

impl MotifGuidance {
    pub fn new(matrix: CausalityMatrix, motifs: MotifSet, causality: CausalityTrainConfig) -> Result<Self> {
        if matrix.m() != motifs.len() {
            return Err(ForgeError::DimensionMismatch(format!(
                "causality matrix is {}x{} but the motif set has {} motifs",
                matrix.m(),
                matrix.m(),
                motifs.len()
            )));
        }
        Ok(Self { matrix, motifs, causality })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NetId {
    Embedder,
    Recovery,
    Generator,
    Discriminator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanState {
    pub embedder: LstmNet,
    pub recovery: LstmNet,
    pub generator: LstmNet,
    pub discriminator: LstmNet,
    pub opt_embedder: Optimizer,
    pub opt_recovery: Optimizer,
    pub opt_generator: Optimizer,
    pub opt_discriminator: Optimizer,
    pub epoch: u64,
    pub seed: u64,
    pub trace_len: usize,
    pub noise_dim: usize,
    /// Networks behind the latest synthetic causality estimate.
    pub synthetic_causality: Option<CausalityState>,
    pub last_motif_loss: f64,
}

fn mix_seed(seed: u64, tag: u64, epoch: u64) -> u64 {
    let mut x = seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93) ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 32;
    x = x.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    x ^ (x >> 32)
}

impl GanState {
    pub fn new(cfg: &GanConfig, trace_len: usize) -> Result<Self> {
        cfg.validate(trace_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1, 0));
        let e = cfg.embed_dim;
        let nz = cfg.noise_dim();
        let h = &cfg.hidden;
        let embedder = LstmNet::random(1, h.embedder, e, Activation::Sigmoid, &mut rng);
        let recovery = LstmNet::random(e, h.recovery, 1, Activation::Sigmoid, &mut rng);
        let generator = LstmNet::random(nz + e, h.generator, e, Activation::Sigmoid, &mut rng);
        let discriminator = LstmNet::random(e, h.discriminator, 1, Activation::Sigmoid, &mut rng);
        Ok(Self {
            opt_embedder: Optimizer::new(cfg.optimizer, embedder.num_params()),
            opt_recovery: Optimizer::new(cfg.optimizer, recovery.num_params()),
            opt_generator: Optimizer::new(cfg.optimizer, generator.num_params()),
            opt_discriminator: Optimizer::new(cfg.optimizer, discriminator.num_params()),
            embedder,
            recovery,
            generator,
            discriminator,
            epoch: 0,
            seed: cfg.seed,
            trace_len,
            noise_dim: nz,
            synthetic_causality: None,
            last_motif_loss: 0.0,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embedder.output_dim()
    }

    pub fn net(&self, id: NetId) -> &LstmNet {
        match id {
            NetId::Embedder => &self.embedder,
            NetId::Recovery => &self.recovery,
            NetId::Generator => &self.generator,
            NetId::Discriminator => &self.discriminator,
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut LstmNet {
        match id {
            NetId::Embedder => &mut self.embedder,
            NetId::Recovery => &mut self.recovery,
            NetId::Generator => &mut self.generator,
            NetId::Discriminator => &mut self.discriminator,
        }
    }

    fn optimizer_and_net(&mut self, id: NetId) -> (&mut Optimizer, &mut LstmNet) {
        match id {
            NetId::Embedder => (&mut self.opt_embedder, &mut self.embedder),
            NetId::Recovery => (&mut self.opt_recovery, &mut self.recovery),
            NetId::Generator => (&mut self.opt_generator, &mut self.generator),
            NetId::Discriminator => (&mut self.opt_discriminator, &mut self.discriminator),
        }
    }

    /// Parameter digests in embedder, recovery, generator, discriminator order.
    pub fn checksums(&self) -> [u64; 4] {
        [self.embedder.checksum(), self.recovery.checksum(), self.generator.checksum(), self.discriminator.checksum()]
    }

    pub fn is_finite(&self) -> bool {
        [&self.embedder, &self.recovery, &self.generator, &self.discriminator].iter().all(|n| n.is_finite())
    }
}

/// Normalised traces as `[T x 1]` matrices.
pub fn trace_matrices(traces: &[NormalizedTrace]) -> Vec<Array2<f64>> {
    traces
        .iter()
        .map(|t| Array2::from_shape_vec((t.values.len(), 1), t.values.clone()).expect("column shape"))
        .collect()
}

fn check_finite_batch(batch: &[Array2<f64>], what: &str) -> Result<()> {
    for s in batch {
        if let Some(step) = s.rows().into_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(ForgeError::NonFinite { step, context: what.into() });
        }
    }
    Ok(())
}

/// Embeds a batch of normalised traces (`[T x 1]` each) into `[T x e]`.
pub fn embed(state: &GanState, x: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    check_finite_batch(x, "embed input")?;
    x.iter().map(|s| Ok(state.embedder.forward(s.view())?.outputs)).collect()
}

/// Maps embeddings back to `[T x 1]` traces in `[0, 1]`.
pub fn recover(state: &GanState, x_e: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    check_finite_batch(x_e, "recover input")?;
    x_e.iter().map(|s| Ok(state.recovery.forward(s.view())?.outputs)).collect()
}

/// Per-step probability that each embedded sequence is synthetic.
pub fn discriminate(state: &GanState, x_e: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    x_e.iter().map(|s| Ok(state.discriminator.forward(s.view())?.outputs)).collect()
}

fn sample_noise(rng: &mut ChaCha8Rng, count: usize, steps: usize, dim: usize) -> Vec<Array2<f64>> {
    (0..count).map(|_| Array2::from_shape_simple_fn((steps, dim), || StandardNormal.sample(rng))).collect()
}

/// Free-running generator output for each noise sequence.
pub fn generate_embedded(state: &GanState, z: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
    z.iter().map(|s| Ok(state.generator.forward_feedback(s.view())?.outputs)).collect()
}

/// `[z_t ; prev_{t-1}]` with `prev_{-1} = 0`.
fn teacher_inputs(z: &Array2<f64>, prev: &Array2<f64>) -> Array2<f64> {
    let (len, nz) = z.dim();
    let e = prev.ncols();
    let mut out = Array2::zeros((len, nz + e));
    out.slice_mut(s![.., ..nz]).assign(z);
    if len > 1 {
        out.slice_mut(s![1.., nz..]).assign(&prev.slice(s![..len - 1, ..]));
    }
    out
}

/// Adds the feedback-column gradient of a teacher-forced input back onto the
/// sequence it was shifted from.
fn unshift_into(d_inputs: &Array2<f64>, nz: usize, target: &mut Array2<f64>) {
    let len = d_inputs.nrows();
    if len > 1 {
        let shifted = d_inputs.slice(s![1.., nz..]);
        let mut dst = target.slice_mut(s![..len - 1, ..]);
        dst += &shifted;
    }
}

/// Samples `count` synthetic traces.
pub fn generate(state: &GanState, count: usize, seed: u64) -> Result<TraceSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_noise(&mut rng, count, state.trace_len, state.noise_dim);
    let x_hat_e = generate_embedded(state, &z)?;
    let x_hat = recover(state, &x_hat_e)?;
    let traces = x_hat
        .into_iter()
        .enumerate()
        .map(|(i, m)| denormalize(&NormalizedTrace { id: format!("syn{i:05}"), values: m.into_raw_vec_and_offset().0 }))
        .collect::<Vec<GlucoseTrace>>();
    TraceSet::new(traces)
}

/// Values of the loss terms seen in one phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTerms {
    pub l_r: f64,
    pub l_s: f64,
    pub l_d: f64,
    pub l_ar: f64,
    pub l_af: f64,
}

/// Objective value and per-example gradients for each network a phase
/// updates. The mean of the per-example gradients is the gradient of the
/// objective.
#[derive(Debug, Clone)]
pub struct PhaseOutput {
    pub objective: f64,
    pub terms: PhaseTerms,
    pub grads: Vec<(NetId, Vec<LstmNet>)>,
}

impl PhaseOutput {
    pub fn mean_grad(&self, id: NetId) -> Option<LstmNet> {
        let (_, per) = self.grads.iter().find(|(n, _)| *n == id)?;
        let flat: Vec<Vec<f64>> = per.iter().map(LstmNet::flat).collect();
        let mean = mean_gradient(&flat).ok()?;
        let mut out = per[0].zeros_like();
        out.set_flat(&mean);
        Some(out)
    }
}

/// Autoencoder phase: `L_R + alpha * L_S`, gradients for `E` and `R`.
pub fn autoencoder_phase(state: &GanState, x: &[Array2<f64>], z: &[Array2<f64>], alpha: f64) -> Result<PhaseOutput> {
    let b = x.len();
    let nz = state.noise_dim;
    struct Fwd {
        ce: LstmCache,
        cr: LstmCache,
        cg: LstmCache,
    }
    let fwd = x
        .par_iter()
        .zip(z.par_iter())
        .map(|(xb, zb)| {
            let ce = state.embedder.forward(xb.view())?;
            let cr = state.recovery.forward(ce.outputs.view())?;
            let cg = state.generator.forward(teacher_inputs(zb, &ce.outputs).view())?;
            Ok(Fwd { ce, cr, cg })
        })
        .collect::<Result<Vec<_>>>()?;

    let x_e: Vec<_> = fwd.iter().map(|f| f.ce.outputs.clone()).collect();
    let x_tilde: Vec<_> = fwd.iter().map(|f| f.cr.outputs.clone()).collect();
    let x_tf: Vec<_> = fwd.iter().map(|f| f.cg.outputs.clone()).collect();
    let l_r = loss_reconstruction(x, &x_tilde)?;
    let l_s = loss_stepwise(&x_e, &x_tf)?;

    let bf = b as f64;
    let (_, d_rec) = losses::loss_reconstruction_grad(x, &x_tilde)?;
    let (_, d_step) = losses::loss_stepwise_grad(&x_e, &x_tf)?;
    let per: Vec<(LstmNet, LstmNet)> = fwd
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let d_xt = &d_rec[i] * bf;
            let (g_r, mut d_xe) = state.recovery.backward(&f.cr, d_xt.view(), None);
            let d_tf = &d_step[i] * (alpha * bf);
            d_xe -= &d_tf;
            let (_, d_in) = state.generator.backward(&f.cg, d_tf.view(), None);
            unshift_into(&d_in, nz, &mut d_xe);
            let (g_e, _) = state.embedder.backward(&f.ce, d_xe.view(), None);
            (g_e, g_r)
        })
        .collect();
    let (ge, gr): (Vec<_>, Vec<_>) = per.into_iter().unzip();
    Ok(PhaseOutput {
        objective: l_r + alpha * l_s,
        terms: PhaseTerms { l_r, l_s, ..Default::default() },
        grads: vec![(NetId::Embedder, ge), (NetId::Recovery, gr)],
    })
}

/// Generator phase: `(1 - L_Af) + eta L_S + eta L_D (+ L_M)`. The
/// `motif_grad` argument carries `dL_M/dx_hat` for each recovered synthetic
/// trace when motif guidance is active; the returned objective excludes
/// `L_M`.
pub fn generator_phase(
    state: &GanState,
    x: &[Array2<f64>],
    z: &[Array2<f64>],
    eta: f64,
    motif_grad: Option<&dyn Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>>,
) -> Result<PhaseOutput> {
    let b = x.len();
    let bf = b as f64;
    struct Fwd {
        xe: Array2<f64>,
        cgf: LstmCache,
        cd: LstmCache,
        cr: LstmCache,
        cgt: LstmCache,
    }
    let fwd = x
        .par_iter()
        .zip(z.par_iter())
        .map(|(xb, zb)| {
            let xe = state.embedder.forward(xb.view())?.outputs;
            let cgf = state.generator.forward_feedback(zb.view())?;
            let cd = state.discriminator.forward(cgf.outputs.view())?;
            let cr = state.recovery.forward(cgf.outputs.view())?;
            let cgt = state.generator.forward(teacher_inputs(zb, &xe).view())?;
            Ok(Fwd { xe, cgf, cd, cr, cgt })
        })
        .collect::<Result<Vec<_>>>()?;

    let x_e: Vec<_> = fwd.iter().map(|f| f.xe.clone()).collect();
    let x_hat_e: Vec<_> = fwd.iter().map(|f| f.cgf.outputs.clone()).collect();
    let probs: Vec<_> = fwd.iter().map(|f| f.cd.outputs.clone()).collect();
    let x_tf: Vec<_> = fwd.iter().map(|f| f.cgt.outputs.clone()).collect();

    let (l_af, d_probs) = bce_grad(&probs, 1.0);
    let (l_d, _, d_mml) = loss_distributional_grad(&x_e, &x_hat_e)?;
    let (l_s, d_step) = losses::loss_stepwise_grad(&x_e, &x_tf)?;
    let d_motif = match motif_grad {
        Some(f) => {
            let rows: Vec<Vec<f64>> = fwd.iter().map(|f| f.cr.outputs.iter().copied().collect()).collect();
            Some(f(&rows)?)
        }
        None => None,
    };

    let grads: Vec<LstmNet> = fwd
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            // minimising (1 - L_Af) ascends L_Af
            let dp = &d_probs[i] * (-bf);
            let (_, mut d_xhat) = state.discriminator.backward(&f.cd, dp.view(), None);
            d_xhat.scaled_add(eta * bf, &d_mml[i]);
            if let Some(dm) = &d_motif {
                let d_rec = Array2::from_shape_vec((dm[i].len(), 1), dm[i].iter().map(|g| g * bf).collect())
                    .expect("column shape");
                let (_, d_from_r) = state.recovery.backward(&f.cr, d_rec.view(), None);
                d_xhat += &d_from_r;
            }
            let (mut g, _) = state.generator.backward(&f.cgf, d_xhat.view(), Some(state.noise_dim));
            let d_tf = &d_step[i] * (eta * bf);
            let (g_tf, _) = state.generator.backward(&f.cgt, d_tf.view(), None);
            g.add_assign(&g_tf);
            g
        })
        .collect();
    Ok(PhaseOutput {
        objective: (1.0 - l_af) + eta * l_s + eta * l_d,
        terms: PhaseTerms { l_s, l_d, l_af, ..Default::default() },
        grads: vec![(NetId::Generator, grads)],
    })
}

/// Discriminator phase: `L_Af + L_Ar` (real labelled 0, synthetic 1).
pub fn discriminator_phase(state: &GanState, x: &[Array2<f64>], z: &[Array2<f64>]) -> Result<PhaseOutput> {
    let bf = x.len() as f64;
    let fwd = x
        .par_iter()
        .zip(z.par_iter())
        .map(|(xb, zb)| {
            let xe = state.embedder.forward(xb.view())?.outputs;
            let xhat = state.generator.forward_feedback(zb.view())?.outputs;
            let cr = state.discriminator.forward(xe.view())?;
            let cf = state.discriminator.forward(xhat.view())?;
            Ok((cr, cf))
        })
        .collect::<Result<Vec<_>>>()?;
    let p_real: Vec<_> = fwd.iter().map(|(c, _)| c.outputs.clone()).collect();
    let p_fake: Vec<_> = fwd.iter().map(|(_, c)| c.outputs.clone()).collect();
    let (l_ar, d_real) = bce_grad(&p_real, 0.0);
    let (l_af, d_fake) = bce_grad(&p_fake, 1.0);
    let grads = fwd
        .par_iter()
        .enumerate()
        .map(|(i, (cr, cf))| {
            let (mut g, _) = state.discriminator.backward(cr, (&d_real[i] * bf).view(), None);
            let (gf, _) = state.discriminator.backward(cf, (&d_fake[i] * bf).view(), None);
            g.add_assign(&gf);
            g
        })
        .collect();
    Ok(PhaseOutput {
        objective: l_af + l_ar,
        terms: PhaseTerms { l_ar, l_af, ..Default::default() },
        grads: vec![(NetId::Discriminator, grads)],
    })
}

/// Mean (or DP-sanitised mean) of per-example gradients.
pub fn aggregate_gradients(per_example: &[LstmNet], dp: Option<&DpSgdConfig>, rng: &mut ChaCha8Rng) -> Result<LstmNet> {
    let flat: Vec<Vec<f64>> = per_example.iter().map(LstmNet::flat).collect();
    let agg = match dp {
        Some(cfg) => clip_and_noise(&flat, cfg, rng)?,
        None => mean_gradient(&flat)?,
    };
    let mut out = per_example[0].zeros_like();
    out.set_flat(&agg);
    Ok(out)
}

fn apply(
    state: &mut GanState,
    out: &PhaseOutput,
    lr: f64,
    dp: Option<&DpSgdConfig>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for (id, per) in &out.grads {
        let g = aggregate_gradients(per, dp, rng)?;
        let (opt, net) = state.optimizer_and_net(*id);
        opt.step(net, &g, lr);
    }
    Ok(())
}

fn diverged(phase: &str, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(ForgeError::Divergence { phase: phase.into(), loss })
    }
}

fn numeric_context(phase: &'static str) -> impl Fn(ForgeError) -> ForgeError {
    move |e| match e {
        ForgeError::NonFinite { step, context } => {
            ForgeError::NonFinite { step, context: format!("{phase}: {context}") }
        }
        other => other,
    }
}

/// Parameter digests after each phase of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseChecksums {
    pub before: [u64; 4],
    pub after_autoencoder: [u64; 4],
    pub after_generator: [u64; 4],
    pub after_discriminator: [u64; 4],
}

fn refresh_synthetic_causality(
    state: &mut GanState,
    guidance: &MotifGuidance,
    cfg: &GanConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let count = cfg.refresh_batch.unwrap_or(cfg.batch_size).max(1);
    let z = sample_noise(rng, count, state.trace_len, state.noise_dim);
    let xr = recover(state, &generate_embedded(state, &z)?)?;
    let rows: Vec<Vec<f64>> = xr.iter().map(|m| m.iter().copied().collect()).collect();
    let warm = state.synthetic_causality.as_ref();
    let ccfg = match warm {
        Some(_) => guidance.causality.clone(),
        // first estimate trains from scratch for the full schedule
        None => CausalityTrainConfig { inner_steps: guidance.causality.epochs, ..guidance.causality.clone() },
    };
    let (l_m, st) = motif_loss_of_batch(&rows, &guidance.matrix, &guidance.motifs, &ccfg, warm)?;
    state.synthetic_causality = Some(st);
    state.last_motif_loss = l_m;
    Ok(())
}

/// One epoch over `real`. See [`train_epoch_traced`].
pub fn train_epoch(
    state: &mut GanState,
    real: &TraceSet,
    guidance: Option<&MotifGuidance>,
    cfg: &GanConfig,
) -> Result<LossReport> {
    Ok(train_epoch_traced(state, real, guidance, cfg)?.0)
}

/// One epoch: seeded shuffle, sequential minibatches, and for each minibatch
/// the autoencoder, generator and discriminator phases in that order.
/// Returns the mean losses and per-minibatch parameter digests.
pub fn train_epoch_traced(
    state: &mut GanState,
    real: &TraceSet,
    guidance: Option<&MotifGuidance>,
    cfg: &GanConfig,
) -> Result<(LossReport, Vec<PhaseChecksums>)> {
    let t = real.trace_len().ok_or_else(|| ForgeError::invalid("empty training set"))?;
    if t != state.trace_len {
        return Err(ForgeError::DimensionMismatch(format!("state trained for T={}, data has T={t}", state.trace_len)));
    }
    cfg.validate(t)?;
    let dp = cfg.resolve_privacy(real.len())?;
    let use_motif = cfg.motif_loss && guidance.is_some();
    let epoch = state.epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(state.seed, 2, epoch));

    if let (true, Some(g)) = (use_motif, guidance) {
        if epoch % cfg.refresh_every as u64 == 0 || state.synthetic_causality.is_none() {
            refresh_synthetic_causality(state, g, cfg, &mut rng).map_err(numeric_context("motif refresh"))?;
        }
    }

    let x_all = trace_matrices(&real.normalized());
    let mut order: Vec<usize> = (0..x_all.len()).collect();
    order.shuffle(&mut rng);

    let mut sums = [0.0f64; 5];
    let mut batches = 0usize;
    let mut trace = Vec::new();
    for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let x: Vec<Array2<f64>> = chunk.iter().map(|&i| x_all[i].clone()).collect();
        let before = state.checksums();

        let z = sample_noise(&mut rng, x.len(), t, state.noise_dim);
        let ae = autoencoder_phase(state, &x, &z, cfg.alpha).map_err(numeric_context("autoencoder"))?;
        diverged("autoencoder", ae.objective)?;
        apply(state, &ae, cfg.learning_rates.autoencoder, dp.as_ref(), &mut rng)?;
        let after_autoencoder = state.checksums();

        let z = sample_noise(&mut rng, x.len(), t, state.noise_dim);
        let spsa_seed = mix_seed(state.seed, 3, epoch * 1_000_003 + bi as u64);
        let gen = {
            let st: &GanState = state;
            let closure;
            let motif_grad: Option<&dyn Fn(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>> = match (use_motif, guidance) {
                (true, Some(g)) => {
                    closure = move |rows: &[Vec<f64>]| {
                        spsa_gradient_lm(
                            rows,
                            &g.matrix,
                            &g.motifs,
                            &g.causality,
                            st.synthetic_causality.as_ref(),
                            &cfg.spsa,
                            spsa_seed,
                        )
                    };
                    Some(&closure)
                }
                _ => None,
            };
            generator_phase(st, &x, &z, cfg.eta, motif_grad).map_err(numeric_context("generator"))?
        };
        diverged("generator", gen.objective)?;
        apply(state, &gen, cfg.learning_rates.generator, dp.as_ref(), &mut rng)?;
        let after_generator = state.checksums();

        let z = sample_noise(&mut rng, x.len(), t, state.noise_dim);
        let disc = discriminator_phase(state, &x, &z).map_err(numeric_context("discriminator"))?;
        diverged("discriminator", disc.objective)?;
        apply(state, &disc, cfg.learning_rates.discriminator, dp.as_ref(), &mut rng)?;
        let after_discriminator = state.checksums();

        if !state.is_finite() {
            return Err(ForgeError::Divergence { phase: "parameter update".into(), loss: f64::NAN });
        }
        sums[0] += ae.terms.l_r;
        sums[1] += ae.terms.l_s;
        sums[2] += gen.terms.l_d;
        sums[3] += disc.terms.l_ar;
        sums[4] += disc.terms.l_af;
        batches += 1;
        trace.push(PhaseChecksums { before, after_autoencoder, after_generator, after_discriminator });
    }
    let n = batches as f64;
    let report = LossReport {
        epoch,
        l_r: sums[0] / n,
        l_s: sums[1] / n,
        l_m: if use_motif { state.last_motif_loss } else { 0.0 },
        l_d: sums[2] / n,
        l_ar: sums[3] / n,
        l_af: sums[4] / n,
    };
    if !report.is_finite() {
        return Err(ForgeError::Divergence { phase: "epoch report".into(), loss: f64::NAN });
    }
    state.epoch += 1;
    Ok((report, trace))
}

/// Trains for `cfg.epochs` epochs from a fresh state.
pub fn train(
    real: &TraceSet,
    guidance: Option<&MotifGuidance>,
    cfg: &GanConfig,
) -> Result<(GanState, Vec<LossReport>)> {
    let t = real.trace_len().ok_or_else(|| ForgeError::invalid("empty training set"))?;
    let mut state = GanState::new(cfg, t)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        log.push(train_epoch(&mut state, real, guidance, cfg)?);
    }
    Ok((state, log))
}

/// Epsilon spent by the configured DP-SGD run, `inf` when not private.
pub fn spent_epsilon(cfg: &GanConfig, n: usize) -> Result<f64> {
    Ok(match (cfg.resolve_privacy(n)?, &cfg.privacy) {
        (Some(dp), Some(p)) => epsilon_of(&dp, p.delta),
        _ => f64::INFINITY,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub config: GanConfig,
    pub state: GanState,
}

impl Checkpoint {
    pub fn new(config: GanConfig, state: GanState, config_hash: impl Into<String>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            config,
            state,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ForgeError::invalid(format!("unsupported checkpoint {} v{}", ck.format, ck.version)));
        }
        Ok(ck)
    }
}

/// Full causality estimate on `count` freshly generated traces.
pub fn synthetic_causality(
    state: &GanState,
    guidance: &MotifGuidance,
    count: usize,
    seed: u64,
) -> Result<CausalityState> {
    let synth = generate(state, count, seed)?;
    let data = guidance
        .motifs
        .encode_set(&synth)?
        .iter()
        .map(|s| indicator_matrix(s, guidance.motifs.len()))
        .collect::<Result<Vec<_>>>()?;
    let ccfg = CausalityTrainConfig { inner_steps: guidance.causality.epochs, ..guidance.causality.clone() };
    estimate_on_indicators(&data, guidance.motifs.len(), &ccfg, None)
}
