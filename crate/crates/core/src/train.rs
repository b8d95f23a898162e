//! The adversarial training loop.
//!
//! One iteration runs `n_critic` discriminator updates, each followed by an
//! update of the kernel-selection logits on the discriminator loss, then one
//! generator update followed by a logits update on the generator loss.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::data::{make_noise, MixtureSpec};
use crate::error::{Error, Result};
use crate::kernels::{BoundKernel, Kernel, KernelKind, NUM_KERNELS};
use crate::losses::{self, GpTarget, LossKind, MmdEstimator};
use crate::metrics::{sample_quality, MetricsReport};
use crate::nn::{predict, Architecture, BatchNormConfig, BoundMlp, MlpSpec, Network, ParamRole, ParamSet, Phase};
use crate::optim::RmsProp;
use crate::rng::{eval_stream, stream, Stream};
use crate::tensor::Tensor;

pub const XI: &str = "xi";
pub const DATA_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Every step sees the whole training set.
    Full,
    /// Rows drawn uniformly with replacement.
    Minibatch(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub kernel: Kernel,
    pub architecture: Architecture,
    pub lambda: f64,
    pub learning_rate: f64,
    pub n_critic: usize,
    pub batch: BatchMode,
    pub iterations: u64,
    pub gp_target: GpTarget,
    pub mmd_estimator: MmdEstimator,
    pub eval_every: u64,
    /// `0` checkpoints only at the end of a run.
    pub checkpoint_every: u64,
    pub seed: u64,
    pub train_size: usize,
    pub eval_samples: usize,
    pub noise_dim: usize,
    pub bn: BatchNormConfig,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Fill the `seconds` column; off by default so runs are byte-for-byte
    /// reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Ckipm,
            kernel: Kernel::Single(KernelKind::Gaussian { sigma: 10.0 }),
            architecture: Architecture::Main,
            lambda: 10.0,
            learning_rate: 1e-4,
            n_critic: 5,
            batch: BatchMode::Full,
            iterations: 10_000,
            gp_target: GpTarget::Witness,
            mmd_estimator: MmdEstimator::Biased,
            eval_every: 500,
            checkpoint_every: 0,
            seed: 0,
            train_size: 2500,
            eval_samples: 2500,
            noise_dim: 2,
            bn: BatchNormConfig::default(),
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            record_wall_time: false,
        }
    }
}

fn check(ok: bool, message: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(message()))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.lambda >= 0.0 && self.lambda.is_finite(), || {
            format!("lambda must be a non-negative number, got {}", self.lambda)
        })?;
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), || {
            format!("learning_rate must be positive, got {}", self.learning_rate)
        })?;
        check(self.n_critic >= 1, || "n_critic must be at least 1".into())?;
        if let BatchMode::Minibatch(b) = self.batch {
            check(b >= 2, || format!("batch_size must be at least 2, got {b}"))?;
        }
        check(self.train_size >= 2, || format!("train_size must be at least 2, got {}", self.train_size))?;
        check(self.eval_samples >= 1, || "eval_samples must be at least 1".into())?;
        check(self.eval_every >= 1, || "eval_every must be at least 1".into())?;
        check(self.noise_dim >= 1, || "noise_dim must be at least 1".into())?;
        check(self.bn.eps > 0.0 && (0.0..1.0).contains(&self.bn.momentum), || {
            format!("invalid batch-norm settings {:?}", self.bn)
        })?;
        check((0.0..1.0).contains(&self.rmsprop_decay) && self.rmsprop_eps > 0.0, || {
            format!(
                "invalid RMSProp settings: decay {}, eps {}",
                self.rmsprop_decay, self.rmsprop_eps
            )
        })?;
        if self.loss == LossKind::WganGp {
            check(!self.kernel.is_mix(), || "wgan_gp does not use a kernel mix".into())?;
        }
        match &self.kernel {
            Kernel::Single(k) => {
                k.clone().validated()?;
            }
            Kernel::Mix(m) => {
                for k in m.components() {
                    k.clone().validated()?;
                }
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        match self.batch {
            BatchMode::Full => self.train_size,
            BatchMode::Minibatch(b) => b,
        }
    }

    /// Output width of the discriminator: the noise dimension for kernel
    /// losses, a scalar critic for WGAN-GP.
    pub fn critic_dim(&self) -> usize {
        match self.loss {
            LossKind::WganGp => 1,
            _ => self.noise_dim,
        }
    }

    pub fn generator_spec(&self) -> Result<MlpSpec> {
        self.architecture.generator(self.noise_dim, DATA_DIM)
    }

    pub fn discriminator_spec(&self) -> Result<MlpSpec> {
        self.architecture.discriminator(DATA_DIM, self.critic_dim())
    }

    fn uses_xi(&self) -> bool {
        self.loss != LossKind::WganGp && self.kernel.is_mix()
    }
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub generator: ParamSet,
    pub discriminator: ParamSet,
    /// Holds the selection logits under [`XI`] when the kernel is a mix.
    pub xi: ParamSet,
    pub opt_g: RmsProp,
    pub opt_d: RmsProp,
    pub opt_xi: RmsProp,
    pub iteration: u64,
    /// Number of logit updates applied so far.
    pub xi_updates: u64,
    pub noise_rng: ChaCha8Rng,
    pub interp_rng: ChaCha8Rng,
    pub batch_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn init(config: &TrainConfig) -> Result<Self> {
        let mut init = stream(config.seed, Stream::Init);
        let generator = config.generator_spec()?.init_params(&mut init);
        let discriminator = config.discriminator_spec()?.init_params(&mut init);
        let mut xi = ParamSet::default();
        if let (true, Kernel::Mix(m)) = (config.uses_xi(), &config.kernel) {
            xi.insert(XI, m.initial_logits(), ParamRole::Trainable);
        }
        let opt = RmsProp::new(config.rmsprop_decay, config.rmsprop_eps);
        Ok(TrainState {
            generator,
            discriminator,
            xi,
            opt_g: opt.clone(),
            opt_d: opt.clone(),
            opt_xi: opt,
            iteration: 0,
            xi_updates: 0,
            noise_rng: stream(config.seed, Stream::Noise),
            interp_rng: stream(config.seed, Stream::Interp),
            batch_rng: stream(config.seed, Stream::Batch),
        })
    }

    pub fn logits(&self) -> Option<&Tensor> {
        self.xi.get(XI)
    }
}

/// Converts a non-finite value into a divergence diagnostic.
fn diverged(iteration: u64, term: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::NonFinite { node, op } => Error::Diverged {
            iteration,
            term: format!("{term} (node {node}, {op})"),
        },
        other => other,
    }
}

fn check_finite_params(params: &ParamSet, iteration: u64, term: &str) -> Result<()> {
    for (name, t, _) in params.iter() {
        if !t.is_finite() {
            return Err(Error::Diverged {
                iteration,
                term: format!("{term} `{name}`"),
            });
        }
    }
    Ok(())
}

/// Random inputs for one loss evaluation.
struct Draw {
    x: Tensor,
    z: Tensor,
    u: Tensor,
}

/// Values of a loss evaluation, with the gradients if requested.
struct Evaluated {
    loss: f64,
    grads: BTreeMap<String, Tensor>,
    xi_grad: Option<Tensor>,
    stats: Vec<crate::nn::BatchStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Objective {
    Discriminator,
    Generator,
}

pub struct Trainer {
    config: TrainConfig,
    dataset: MixtureSpec,
    train_set: Tensor,
    g_spec: MlpSpec,
    d_spec: MlpSpec,
    state: TrainState,
    started: Instant,
}

impl Trainer {
    pub fn new(config: TrainConfig, dataset: MixtureSpec) -> Result<Self> {
        config.validate()?;
        let state = TrainState::init(&config)?;
        Trainer::with_state(config, dataset, state)
    }

    /// Resumes from a saved state.
    pub fn with_state(config: TrainConfig, dataset: MixtureSpec, state: TrainState) -> Result<Self> {
        config.validate()?;
        let g_spec = config.generator_spec()?;
        let d_spec = config.discriminator_spec()?;
        state.generator.check_against(&g_spec)?;
        state.discriminator.check_against(&d_spec)?;
        if config.uses_xi() != state.logits().is_some() {
            return Err(Error::Config("kernel selection logits do not match the kernel config".into()));
        }
        let train_set = dataset.sample(config.train_size, &mut stream(config.seed, Stream::Data));
        Ok(Trainer {
            config,
            dataset,
            train_set,
            g_spec,
            d_spec,
            state,
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dataset(&self) -> &MixtureSpec {
        &self.dataset
    }

    pub fn train_set(&self) -> &Tensor {
        &self.train_set
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    fn draw(&self, rng_batch: &mut ChaCha8Rng, rng_noise: &mut ChaCha8Rng, rng_interp: &mut ChaCha8Rng) -> Draw {
        let x = match self.config.batch {
            BatchMode::Full => self.train_set.clone(),
            BatchMode::Minibatch(b) => {
                let n = self.train_set.rows();
                let idx: Vec<usize> = (0..b).map(|_| rng_batch.gen_range(0..n)).collect();
                self.train_set.gather_rows(&idx)
            }
        };
        let b = x.rows();
        let z = make_noise(b, self.config.noise_dim, rng_noise);
        let u = Tensor::vector((0..b).map(|_| rng_interp.gen::<f64>()).collect());
        Draw { x, z, u }
    }

    /// Builds one objective on a fresh tape and optionally differentiates it
    /// with respect to the updated network and the logits.
    fn evaluate(&self, objective: Objective, draw: Draw, with_grads: bool) -> Result<Evaluated> {
        let cfg = &self.config;
        let it = self.state.iteration;
        let mut tape = Tape::new();
        let mut g = BoundMlp::new(&mut tape, &self.g_spec, &self.state.generator, "G", Phase::Train, cfg.bn)?;
        let mut d = BoundMlp::new(&mut tape, &self.d_spec, &self.state.discriminator, "D", Phase::Train, cfg.bn)?;
        let xi = self.state.logits().map(|t| tape.variable(XI, t.clone()));
        let kernel = match (cfg.loss, &cfg.kernel) {
            (LossKind::WganGp, _) => None,
            (_, k) => Some(BoundKernel::new(&mut tape, k, xi).map_err(diverged(it, "kernel weights"))?),
        };
        let z = tape.constant(draw.z);
        let fake = g.forward(&mut tape, z).map_err(diverged(it, "generator output"))?;

        let loss = match objective {
            Objective::Discriminator => {
                let x = tape.constant(draw.x);
                let u = tape.constant(draw.u);
                let d_real = d.forward(&mut tape, x).map_err(diverged(it, "discriminator output"))?;
                let d_fake = d.forward(&mut tape, fake).map_err(diverged(it, "discriminator output"))?;
                let x_hat = losses::interpolate(&mut tape, x, fake, u)?;
                let d_hat = d.forward(&mut tape, x_hat).map_err(diverged(it, "discriminator output"))?;
                let adv = match (cfg.loss, &kernel) {
                    (LossKind::Ckipm, Some(k)) => losses::ckipm_discriminator_loss(&mut tape, k, z, d_real, d_fake),
                    (LossKind::Mmd2, Some(k)) => losses::mmd2(&mut tape, k, d_real, d_fake, cfg.mmd_estimator)
                        .and_then(|m| tape.neg(m)),
                    _ => losses::wgan_discriminator_loss(&mut tape, d_real, d_fake),
                }
                .map_err(diverged(it, "discriminator loss"))?;
                let pen = match (cfg.loss, cfg.gp_target, &kernel) {
                    (LossKind::WganGp, _, _) => losses::wgan_penalty(&mut tape, x_hat, d_hat),
                    (_, GpTarget::JacobianFro, _) => losses::jacobian_penalty(&mut tape, x_hat, d_hat),
                    (LossKind::Ckipm, GpTarget::Witness, Some(k)) => {
                        losses::witness_penalty(&mut tape, k, z, x_hat, d_hat)
                    }
                    (_, GpTarget::Witness, Some(k)) => {
                        losses::mmd_witness_penalty(&mut tape, k, x_hat, d_hat, d_real, d_fake)
                    }
                    (_, GpTarget::Witness, None) => unreachable!("kernel losses always bind a kernel"),
                }
                .map_err(diverged(it, "gradient penalty"))?;
                let pen = tape.scale(pen, cfg.lambda).map_err(diverged(it, "gradient penalty"))?;
                tape.add(adv, pen).map_err(diverged(it, "discriminator loss"))?
            }
            Objective::Generator => {
                let d_fake = d.forward(&mut tape, fake).map_err(diverged(it, "discriminator output"))?;
                match (cfg.loss, &kernel) {
                    (LossKind::Ckipm, Some(k)) => losses::ckipm_generator_loss(&mut tape, k, z, d_fake),
                    (LossKind::Mmd2, Some(k)) => {
                        let x = tape.constant(draw.x);
                        let d_real = d.forward(&mut tape, x).map_err(diverged(it, "discriminator output"))?;
                        losses::mmd2(&mut tape, k, d_real, d_fake, cfg.mmd_estimator)
                    }
                    _ => losses::wgan_generator_loss(&mut tape, d_fake),
                }
                .map_err(diverged(it, "generator loss"))?
            }
        };
        let value = tape.item(loss)?;

        let (net, term) = match objective {
            Objective::Discriminator => (&d, "discriminator gradient"),
            Objective::Generator => (&g, "generator gradient"),
        };
        let stats = net.batch_stats(0).map(<[_]>::to_vec).unwrap_or_default();
        let mut out = Evaluated {
            loss: value,
            grads: BTreeMap::new(),
            xi_grad: None,
            stats,
        };
        if with_grads {
            let named: Vec<(String, Var)> = net.vars().map(|(n, v)| (n.clone(), v)).collect();
            let mut wrt: Vec<Var> = named.iter().map(|(_, v)| *v).collect();
            wrt.extend(xi);
            let mut grads = tape.gradient(loss, &wrt).map_err(diverged(it, term))?;
            for (name, v) in named {
                let grad = grads.remove(v).expect("requested gradient");
                out.grads.insert(name, grad);
            }
            out.xi_grad = xi.and_then(|v| grads.remove(v));
        }
        Ok(out)
    }

    fn update_xi(&mut self, grad: Option<Tensor>) -> Result<()> {
        if let Some(g) = grad {
            let grads = BTreeMap::from([(XI.to_string(), g)]);
            let lr = self.config.learning_rate;
            self.state.opt_xi.step(&mut self.state.xi, &grads, lr)?;
            self.state.xi_updates += 1;
            check_finite_params(&self.state.xi, self.state.iteration, "selection logits")?;
        }
        Ok(())
    }

    fn discriminator_step(&mut self) -> Result<f64> {
        let (mut rb, mut rn, mut ri) = (
            self.state.batch_rng.clone(),
            self.state.noise_rng.clone(),
            self.state.interp_rng.clone(),
        );
        let draw = self.draw(&mut rb, &mut rn, &mut ri);
        (self.state.batch_rng, self.state.noise_rng, self.state.interp_rng) = (rb, rn, ri);
        let ev = self.evaluate(Objective::Discriminator, draw, true)?;
        let lr = self.config.learning_rate;
        self.state.opt_d.step(&mut self.state.discriminator, &ev.grads, lr)?;
        self.state
            .discriminator
            .update_running_stats(&ev.stats, self.config.bn.momentum);
        check_finite_params(&self.state.discriminator, self.state.iteration, "discriminator parameter")?;
        self.update_xi(ev.xi_grad)?;
        Ok(ev.loss)
    }

    fn generator_step(&mut self) -> Result<f64> {
        let (mut rb, mut rn) = (self.state.batch_rng.clone(), self.state.noise_rng.clone());
        let b = self.config.batch_size();
        let x = match (self.config.loss, self.config.batch) {
            (LossKind::Mmd2, BatchMode::Minibatch(_)) => {
                let n = self.train_set.rows();
                let idx: Vec<usize> = (0..b).map(|_| rb.gen_range(0..n)).collect();
                self.train_set.gather_rows(&idx)
            }
            (LossKind::Mmd2, BatchMode::Full) => self.train_set.clone(),
            _ => Tensor::zeros(&[0, DATA_DIM]),
        };
        let z = make_noise(b, self.config.noise_dim, &mut rn);
        (self.state.batch_rng, self.state.noise_rng) = (rb, rn);
        let draw = Draw {
            x,
            z,
            u: Tensor::zeros(&[0]),
        };
        let ev = self.evaluate(Objective::Generator, draw, true)?;
        let lr = self.config.learning_rate;
        self.state.opt_g.step(&mut self.state.generator, &ev.grads, lr)?;
        self.state
            .generator
            .update_running_stats(&ev.stats, self.config.bn.momentum);
        check_finite_params(&self.state.generator, self.state.iteration, "generator parameter")?;
        self.update_xi(ev.xi_grad)?;
        Ok(ev.loss)
    }

    /// Runs one full iteration and returns the last discriminator loss and
    /// the generator loss.
    pub fn step(&mut self) -> Result<(f64, f64)> {
        let mut loss_d = 0.0;
        for _ in 0..self.config.n_critic {
            loss_d = self.discriminator_step()?;
        }
        let loss_g = self.generator_step()?;
        self.state.iteration += 1;
        Ok((loss_d, loss_g))
    }

    /// `n` generator samples with eval-phase batch norm.
    pub fn generate(&self, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::InvalidParameter("sample count must be positive".into()));
        }
        let z = make_noise(n, self.config.noise_dim, rng);
        predict(&self.g_spec, &self.state.generator, self.config.bn, &z)
    }

    /// Metrics for the current parameters. Samples and loss probes come from
    /// the evaluation stream of the current iteration, so reports never
    /// disturb training randomness.
    pub fn report(&self) -> Result<MetricsReport> {
        let it = self.state.iteration;
        let mut rng = eval_stream(self.config.seed, it);
        let samples = self.generate(self.config.eval_samples, &mut rng)?;
        let quality = sample_quality(&self.dataset, &samples, &self.train_set)?;
        let mut child = || ChaCha8Rng::seed_from_u64(rng.gen());
        let (mut rb, mut rn, mut ri) = (child(), child(), child());
        let draw = self.draw(&mut rb, &mut rn, &mut ri);
        let g_draw = Draw {
            x: draw.x.clone(),
            z: draw.z.clone(),
            u: Tensor::zeros(&[0]),
        };
        let loss_d = self.evaluate(Objective::Discriminator, draw, false)?.loss;
        let loss_g = self.evaluate(Objective::Generator, g_draw, false)?.loss;
        let weights = match self.config.loss {
            LossKind::WganGp => vec![0.0; NUM_KERNELS],
            _ => self
                .config
                .kernel
                .report_weights(self.state.logits().map(Tensor::data)),
        };
        let mut xi = [0.0; NUM_KERNELS];
        xi.copy_from_slice(&weights);
        Ok(MetricsReport {
            iteration: it,
            modes: quality.modes,
            hq: quality.hq,
            kl: quality.kl,
            loss_d,
            loss_g,
            xi,
            seconds: if self.config.record_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    /// Trains up to `config.iterations`, reporting at iteration 0, every
    /// `eval_every` iterations and at the end, and checkpointing every
    /// `checkpoint_every` iterations and at the end.
    pub fn run(&mut self, mut on_event: impl FnMut(Event<'_>) -> Result<()>) -> Result<()> {
        if self.state.iteration == 0 {
            let r = self.report()?;
            on_event(Event::Report(&r))?;
        }
        let total = self.config.iterations;
        while self.state.iteration < total {
            self.step()?;
            let it = self.state.iteration;
            if it.is_multiple_of(self.config.eval_every) || it == total {
                let r = self.report()?;
                on_event(Event::Report(&r))?;
            }
            if self.config.checkpoint_every > 0 && it.is_multiple_of(self.config.checkpoint_every) && it != total {
                on_event(Event::Checkpoint(self))?;
            }
        }
        on_event(Event::Checkpoint(self))
    }
}

pub enum Event<'a> {
    Report(&'a MetricsReport),
    Checkpoint(&'a Trainer),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DatasetKind;
    use crate::kernels::{KernelMix, SelectionMode};

    fn tiny(loss: LossKind, kernel: Kernel) -> TrainConfig {
        TrainConfig {
            loss,
            kernel,
            architecture: Architecture::SimpleSmile,
            batch: BatchMode::Minibatch(8),
            iterations: 2,
            eval_every: 1,
            train_size: 64,
            eval_samples: 32,
            ..TrainConfig::default()
        }
    }

    fn ring() -> MixtureSpec {
        MixtureSpec::standard(DatasetKind::Ring)
    }

    #[test]
    fn zero_iterations_keep_the_initialization() {
        let config = TrainConfig {
            iterations: 0,
            ..tiny(LossKind::Ckipm, TrainConfig::default().kernel)
        };
        let init = TrainState::init(&config).unwrap();
        let mut trainer = Trainer::new(config, ring()).unwrap();
        let mut reports = Vec::new();
        trainer
            .run(|e| {
                if let Event::Report(r) = e {
                    reports.push(r.clone());
                }
                Ok(())
            })
            .unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].iteration, 0);
        assert_eq!(trainer.state(), &init);
    }

    #[test]
    fn logits_update_once_per_critic_step_plus_once() {
        let mix = Kernel::Mix(KernelMix::with_defaults(SelectionMode::Soft));
        let mut trainer = Trainer::new(tiny(LossKind::Ckipm, mix), ring()).unwrap();
        let before = trainer.state().logits().unwrap().clone();
        trainer.step().unwrap();
        assert_eq!(trainer.state().xi_updates, 6);
        trainer.step().unwrap();
        assert_eq!(trainer.state().xi_updates, 12);
        assert_ne!(trainer.state().logits().unwrap(), &before);
    }

    #[test]
    fn every_loss_runs_and_stays_finite() {
        for loss in [LossKind::Ckipm, LossKind::Mmd2, LossKind::WganGp] {
            for gp_target in [GpTarget::Witness, GpTarget::JacobianFro] {
                let config = TrainConfig {
                    gp_target,
                    ..tiny(loss, TrainConfig::default().kernel)
                };
                let mut trainer = Trainer::new(config, ring()).unwrap();
                let (ld, lg) = trainer.step().unwrap();
                assert!(ld.is_finite() && lg.is_finite(), "{loss:?} {gp_target:?}");
                let r = trainer.report().unwrap();
                assert!(r.loss_d.is_finite() && r.hq >= 0.0 && r.kl >= 0.0);
            }
        }
    }

    #[test]
    fn same_seed_same_reports() {
        let run = || {
            let mut trainer = Trainer::new(tiny(LossKind::Ckipm, TrainConfig::default().kernel), ring()).unwrap();
            let mut out = Vec::new();
            trainer
                .run(|e| {
                    if let Event::Report(r) = e {
                        out.push(r.clone());
                    }
                    Ok(())
                })
                .unwrap();
            out
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn reporting_does_not_perturb_training() {
        let config = tiny(LossKind::Ckipm, TrainConfig::default().kernel);
        let mut quiet = Trainer::new(config.clone(), ring()).unwrap();
        let mut chatty = Trainer::new(config, ring()).unwrap();
        for _ in 0..2 {
            quiet.step().unwrap();
            chatty.report().unwrap();
            chatty.step().unwrap();
        }
        assert_eq!(quiet.state(), chatty.state());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = tiny(LossKind::Ckipm, TrainConfig::default().kernel);
        let bad = [
            TrainConfig { lambda: -1.0, ..base.clone() },
            TrainConfig { learning_rate: 0.0, ..base.clone() },
            TrainConfig { n_critic: 0, ..base.clone() },
            TrainConfig { batch: BatchMode::Minibatch(1), ..base.clone() },
            TrainConfig {
                loss: LossKind::WganGp,
                kernel: Kernel::Mix(KernelMix::with_defaults(SelectionMode::Soft)),
                ..base.clone()
            },
        ];
        for config in bad {
            assert!(matches!(Trainer::new(config, ring()), Err(Error::Config(_))));
        }
    }

    #[test]
    fn divergence_names_the_term() {
        let config = TrainConfig {
            learning_rate: 1e300,
            ..tiny(LossKind::Ckipm, TrainConfig::default().kernel)
        };
        let mut trainer = Trainer::new(config, ring()).unwrap();
        let err = (0..3).try_for_each(|_| trainer.step().map(|_| ())).unwrap_err();
        match err {
            Error::Diverged { term, .. } => assert!(!term.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
