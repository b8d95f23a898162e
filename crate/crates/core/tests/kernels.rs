use ckgan::autodiff::Tape;
use ckgan::kernels::{weights, BoundKernel, Kernel, KernelKind, KernelMix, SelectionMode, NUM_KERNELS};
use ckgan::Tensor;
use nalgebra::DMatrix;
use proptest::prelude::*;

/// The smoothed distance differs from `r` by at most 1e-6 and every kernel
/// has slope below 1 in `r`.
const CLOSED_FORM_TOL: f64 = 1e-6;

fn closed_form(kind: &KernelKind, x: [f64; 2], y: [f64; 2]) -> f64 {
    let (dx, dy) = (x[0] - y[0], x[1] - y[1]);
    let sq = dx * dx + dy * dy;
    let r = sq.sqrt();
    match kind {
        KernelKind::Gaussian { sigma } => (-sq / (2.0 * sigma * sigma)).exp(),
        KernelKind::Laplacian { sigma } => (-(dx.abs() + dy.abs()) / sigma).exp(),
        KernelKind::RbfMixture { sigmas } => sigmas.iter().map(|s| (-sq / (2.0 * s * s)).exp()).sum(),
        KernelKind::Exponential { sigma } => (-r / sigma).exp(),
        KernelKind::Matern32 { alpha, length } => {
            let t = 3f64.sqrt() * r / length;
            alpha * (1.0 + t) * (-t).exp()
        }
        KernelKind::Matern52 { alpha, length } => {
            let t = 5f64.sqrt() * r / length;
            alpha * (1.0 + t + 5.0 * r * r / (3.0 * length * length)) * (-t).exp()
        }
    }
}

fn gram_of(kernel: &Kernel, logits: Option<&[f64]>, x: &Tensor, y: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let l = logits.map(|l| tape.constant(Tensor::vector(l.to_vec())));
    let k = BoundKernel::new(&mut tape, kernel, l).unwrap();
    let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
    let g = k.gram(&mut tape, xv, yv).unwrap();
    tape.value(g).clone()
}

fn points(n: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-20.0f64..20.0, 2 * n).prop_map(move |d| Tensor::matrix(n, 2, d).unwrap())
}

fn kinds() -> Vec<KernelKind> {
    let mut k = KernelKind::defaults();
    k.push(KernelKind::Matern52 { alpha: 2.5, length: 0.5 });
    k.push(KernelKind::Gaussian { sigma: 0.3 });
    k
}

#[test]
fn default_kernels_match_closed_forms() {
    let pairs = [([0.0, 0.0], [0.0, 0.0]), ([1.0, -2.0], [3.5, 0.25]), ([-7.0, 4.0], [10.0, -9.0])];
    for kind in kinds() {
        for (x, y) in pairs {
            let mut tape = Tape::new();
            let (xv, yv) = (tape.constant(Tensor::vector(x.to_vec())), tape.constant(Tensor::vector(y.to_vec())));
            let k = kind.eval(&mut tape, xv, yv).unwrap();
            let got = tape.item(k).unwrap();
            let want = closed_form(&kind, x, y);
            assert!((got - want).abs() < CLOSED_FORM_TOL, "{}: {got} vs {want}", kind.name());
        }
    }
}

#[test]
fn peak_is_attained_on_the_diagonal() {
    for kind in kinds() {
        let x = Tensor::matrix(3, 2, vec![0.5, 1.0, -3.0, 2.0, 100.0, -50.0]).unwrap();
        let g = gram_of(&Kernel::Single(kind.clone()), None, &x, &x);
        for i in 0..3 {
            assert!((g.at(i, i) - kind.peak()).abs() < 1e-12, "{}", kind.name());
        }
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    assert!(KernelKind::gaussian(0.0).is_err());
    assert!(KernelKind::laplacian(-1.0).is_err());
    assert!(KernelKind::rbf_mixture(vec![]).is_err());
    assert!(KernelKind::rbf_mixture(vec![1.0, f64::NAN]).is_err());
    assert!(KernelKind::matern32(0.0, 1.0).is_err());
    assert!(KernelKind::matern52(1.0, f64::INFINITY).is_err());
    let mut six = KernelKind::defaults();
    six.swap(0, 1);
    assert!(KernelMix::new(six, SelectionMode::Soft).is_err());
    assert!(KernelMix::new(KernelKind::defaults()[..5].to_vec(), SelectionMode::Soft).is_err());
}

#[test]
fn mismatched_shapes_are_rejected() {
    let kernel = Kernel::Single(KernelKind::defaults()[0].clone());
    let mut tape = Tape::new();
    let k = BoundKernel::new(&mut tape, &kernel, None).unwrap();
    let a = tape.constant(Tensor::zeros(&[3, 2]));
    let b = tape.constant(Tensor::zeros(&[2, 2]));
    let c = tape.constant(Tensor::zeros(&[3, 3]));
    assert!(k.eval(&mut tape, a, b).is_err());
    assert!(k.gram(&mut tape, a, c).is_err());
    let l = tape.constant(Tensor::zeros(&[NUM_KERNELS]));
    assert!(BoundKernel::new(&mut tape, &kernel, Some(l)).is_err());
    let mix = Kernel::Mix(KernelMix::with_defaults(SelectionMode::Soft));
    assert!(BoundKernel::new(&mut tape, &mix, None).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gram_is_symmetric_bounded_and_psd(x in points(12), which in 0usize..8) {
        let kind = kinds()[which].clone();
        let g = gram_of(&Kernel::Single(kind.clone()), None, &x, &x);
        let m = DMatrix::from_row_slice(12, 12, g.data());
        for i in 0..12 {
            for j in 0..12 {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                prop_assert!(m[(i, j)] >= 0.0 && m[(i, j)] <= kind.peak() + 1e-12);
            }
        }
        let min_eig = m.symmetric_eigenvalues().min();
        prop_assert!(min_eig > -1e-9 * kind.peak() * 12.0, "{}: {min_eig}", kind.name());
    }

    #[test]
    fn gram_agrees_with_row_evaluation(x in points(6), y in points(6), which in 0usize..8) {
        let kind = kinds()[which].clone();
        let g = gram_of(&Kernel::Single(kind.clone()), None, &x, &y);
        let mut tape = Tape::new();
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let rows = kind.eval(&mut tape, xv, yv).unwrap();
        for i in 0..6 {
            prop_assert!((tape.value(rows).data()[i] - g.at(i, i)).abs() < 1e-14);
        }
    }

    #[test]
    fn mixture_weights_lie_on_the_simplex(logits in prop::collection::vec(-30.0f64..30.0, NUM_KERNELS), mode in 0u8..3) {
        let mode = [SelectionMode::Soft, SelectionMode::DirectLinear, SelectionMode::OneHot][mode as usize];
        let w = weights(mode, &logits);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        if mode == SelectionMode::OneHot {
            prop_assert_eq!(w.iter().filter(|&&v| v == 1.0).count(), 1);
        }
    }

    #[test]
    fn mix_is_the_weighted_sum_of_its_components(
        x in points(5), y in points(4),
        logits in prop::collection::vec(-3.0f64..3.0, NUM_KERNELS), mode in 0u8..3
    ) {
        let mode = [SelectionMode::Soft, SelectionMode::DirectLinear, SelectionMode::OneHot][mode as usize];
        let mix = KernelMix::with_defaults(mode);
        let g = gram_of(&Kernel::Mix(mix.clone()), Some(&logits), &x, &y);
        let w = mix.weights(&logits);
        let mut expect = Tensor::zeros(&[5, 4]);
        for (wi, kind) in w.iter().zip(mix.components()) {
            let gi = gram_of(&Kernel::Single(kind.clone()), None, &x, &y);
            for (e, v) in expect.data_mut().iter_mut().zip(gi.data()) {
                *e += wi * v;
            }
        }
        prop_assert!(g.max_abs_diff(&expect) < 1e-12);
    }
}
