use ckgan::checkpoint::Checkpoint;
use ckgan::data::{DatasetKind, MixtureSpec};
use ckgan::kernels::{Kernel, KernelKind, KernelMix, SelectionMode};
use ckgan::losses::{GpTarget, LossKind};
use ckgan::metrics::MetricsReport;
use ckgan::nn::Architecture;
use ckgan::train::{BatchMode, Event, TrainConfig, Trainer};
use ckgan::Error;

fn small(kernel: Kernel, iterations: u64) -> TrainConfig {
    TrainConfig {
        kernel,
        architecture: Architecture::SimpleRing,
        batch: BatchMode::Minibatch(64),
        iterations,
        eval_every: 50,
        train_size: 500,
        eval_samples: 400,
        ..TrainConfig::default()
    }
}

fn soft() -> Kernel {
    Kernel::Mix(KernelMix::with_defaults(SelectionMode::Soft))
}

fn run(trainer: &mut Trainer) -> Vec<MetricsReport> {
    let mut reports = Vec::new();
    trainer
        .run(|e| {
            if let Event::Report(r) = e {
                reports.push(r.clone());
            }
            Ok(())
        })
        .unwrap();
    reports
}

fn ring() -> MixtureSpec {
    MixtureSpec::standard(DatasetKind::Ring)
}

#[test]
fn resuming_from_a_checkpoint_equals_an_uninterrupted_run() {
    let mut whole = Trainer::new(small(soft(), 12), ring()).unwrap();
    let full_reports = run(&mut whole);

    let mut first = Trainer::new(small(soft(), 5), ring()).unwrap();
    run(&mut first);
    let bytes = Checkpoint::from_state(first.state(), "{}").encode();
    let state = Checkpoint::decode(&bytes).unwrap().to_state(&small(soft(), 12)).unwrap();
    let mut resumed = Trainer::with_state(small(soft(), 12), ring(), state).unwrap();
    let tail = run(&mut resumed);

    assert_eq!(resumed.state(), whole.state());
    assert_eq!(tail.last(), full_reports.last());
}

#[test]
fn reference_ring_run_stays_finite_with_weights_on_the_simplex() {
    let mut trainer = Trainer::new(small(soft(), 500), ring()).unwrap();
    let mut reports = Vec::new();
    for _ in 0..500 {
        trainer.step().unwrap();
        let state = trainer.state();
        for set in [&state.generator, &state.discriminator, &state.xi] {
            assert!(set.trainable().values().chain(set.buffers().values()).all(|t| t.is_finite()));
        }
        if state.iteration.is_multiple_of(50) {
            reports.push(trainer.report().unwrap());
        }
    }
    assert_eq!(trainer.state().xi_updates, 500 * 6);
    for r in &reports {
        assert!(r.xi.iter().all(|&w| w > 0.0));
        assert!((r.xi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.loss_d.is_finite() && r.loss_g.is_finite() && r.kl.is_finite());
    }
}

#[test]
fn every_loss_and_selection_mode_trains() {
    let cases = [
        (LossKind::Ckipm, Kernel::Single(KernelKind::Laplacian { sigma: 100.0 }), GpTarget::JacobianFro),
        (LossKind::Ckipm, Kernel::Mix(KernelMix::with_defaults(SelectionMode::DirectLinear)), GpTarget::Witness),
        (LossKind::Ckipm, Kernel::Mix(KernelMix::with_defaults(SelectionMode::OneHot)), GpTarget::Witness),
        (LossKind::Mmd2, soft(), GpTarget::Witness),
        (LossKind::WganGp, Kernel::Single(KernelKind::Gaussian { sigma: 1.0 }), GpTarget::Witness),
    ];
    for (loss, kernel, gp_target) in cases {
        let config = TrainConfig {
            loss,
            gp_target,
            ..small(kernel, 20)
        };
        let mut trainer = Trainer::new(config, ring()).unwrap();
        let reports = run(&mut trainer);
        assert_eq!(reports.iter().map(|r| r.iteration).collect::<Vec<_>>(), [0, 20]);
        assert!(reports.iter().all(|r| r.loss_d.is_finite() && r.loss_g.is_finite()));
    }
}

#[test]
fn runaway_learning_rate_reports_divergence() {
    let config = TrainConfig {
        learning_rate: 1e300,
        ..small(Kernel::Single(KernelKind::Gaussian { sigma: 1.0 }), 200)
    };
    let mut trainer = Trainer::new(config, ring()).unwrap();
    let err = (0..200).try_for_each(|_| trainer.step().map(drop)).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}
