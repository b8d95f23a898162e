//! Characteristic kernels and their learned soft-selection mixture.
//!
//! Six kernels are available, each a function of a distance between two
//! points:
//!
//! | kind          | value                                      |
//! |---------------|--------------------------------------------|
//! | Gaussian      | `exp(-‖x-y‖² / 2σ²)`                       |
//! | Laplacian     | `exp(-‖x-y‖₁ / σ)`                         |
//! | RBF mixture   | `Σ_q exp(-‖x-y‖² / 2σ_q²)`                 |
//! | Exponential   | `exp(-‖x-y‖ / σ)`                          |
//! | Matérn 3/2    | `α (1 + √3 r) exp(-√3 r)`, `r = ‖x-y‖ / l` |
//! | Matérn 5/2    | `α (1 + √5 r + 5r²/3) exp(-√5 r)`          |
//!
//! A [`KernelMix`] combines all six as `Σ ξ_i k_i` with weights derived from
//! trainable logits `ξ′`. Any positive combination of characteristic kernels
//! is again characteristic, so the mixture can stand in for a single kernel
//! anywhere.
//!
//! Every evaluation happens on a [`Tape`] and is differentiable with respect
//! to both arguments and the logits.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_KERNELS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian { sigma: f64 },
    Laplacian { sigma: f64 },
    RbfMixture { sigmas: Vec<f64> },
    Exponential { sigma: f64 },
    Matern32 { alpha: f64, length: f64 },
    Matern52 { alpha: f64, length: f64 },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl KernelKind {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        KernelKind::Gaussian { sigma }.validated()
    }

    pub fn laplacian(sigma: f64) -> Result<Self> {
        KernelKind::Laplacian { sigma }.validated()
    }

    pub fn rbf_mixture(sigmas: Vec<f64>) -> Result<Self> {
        KernelKind::RbfMixture { sigmas }.validated()
    }

    pub fn exponential(sigma: f64) -> Result<Self> {
        KernelKind::Exponential { sigma }.validated()
    }

    pub fn matern32(alpha: f64, length: f64) -> Result<Self> {
        KernelKind::Matern32 { alpha, length }.validated()
    }

    pub fn matern52(alpha: f64, length: f64) -> Result<Self> {
        KernelKind::Matern52 { alpha, length }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        match &self {
            KernelKind::Gaussian { sigma }
            | KernelKind::Laplacian { sigma }
            | KernelKind::Exponential { sigma } => positive("sigma", *sigma)?,
            KernelKind::RbfMixture { sigmas } => {
                if sigmas.is_empty() {
                    return Err(Error::InvalidParameter(
                        "RBF mixture needs at least one sigma".into(),
                    ));
                }
                for &s in sigmas {
                    positive("sigma", s)?;
                }
            }
            KernelKind::Matern32 { alpha, length } | KernelKind::Matern52 { alpha, length } => {
                positive("alpha", *alpha)?;
                positive("length", *length)?;
            }
        }
        Ok(self)
    }

    /// The six kernels at their default synthetic-data parameters, in mix
    /// order.
    pub fn defaults() -> Vec<KernelKind> {
        vec![
            KernelKind::Gaussian { sigma: 10.0 },
            KernelKind::Laplacian { sigma: 100.0 },
            KernelKind::RbfMixture {
                sigmas: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            },
            KernelKind::Exponential { sigma: 10.0 },
            KernelKind::Matern32 {
                alpha: 1.0,
                length: 10.0,
            },
            KernelKind::Matern52 {
                alpha: 1.0,
                length: 10.0,
            },
        ]
    }

    /// Position of this kind in the mixture ordering.
    pub fn slot(&self) -> usize {
        match self {
            KernelKind::Gaussian { .. } => 0,
            KernelKind::Laplacian { .. } => 1,
            KernelKind::RbfMixture { .. } => 2,
            KernelKind::Exponential { .. } => 3,
            KernelKind::Matern32 { .. } => 4,
            KernelKind::Matern52 { .. } => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Gaussian { .. } => "gaussian",
            KernelKind::Laplacian { .. } => "laplacian",
            KernelKind::RbfMixture { .. } => "rbf_mixture",
            KernelKind::Exponential { .. } => "exponential",
            KernelKind::Matern32 { .. } => "matern32",
            KernelKind::Matern52 { .. } => "matern52",
        }
    }

    /// Largest value the kernel attains (at zero distance).
    pub fn peak(&self) -> f64 {
        match self {
            KernelKind::RbfMixture { sigmas } => sigmas.len() as f64,
            KernelKind::Matern32 { alpha, .. } | KernelKind::Matern52 { alpha, .. } => *alpha,
            _ => 1.0,
        }
    }

    /// `k(x, y)` for two vectors (a scalar node) or for two `[r, m]`
    /// matrices row by row (an `[r]` node).
    pub fn eval(&self, tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
        let mut d = Distances::rows(tape, x, y)?;
        self.apply(tape, &mut d)
    }

    /// Kernel matrix `G[i][j] = k(X_i, Y_j)`.
    pub fn gram(&self, tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
        let mut d = Distances::pairwise(tape, x, y)?;
        self.apply(tape, &mut d)
    }

    fn apply(&self, tape: &mut Tape, d: &mut Distances) -> Result<Var> {
        match self {
            KernelKind::Gaussian { sigma } => {
                let sq = d.squared(tape)?;
                gaussian(tape, sq, *sigma)
            }
            KernelKind::Laplacian { sigma } => {
                let l1 = d.manhattan(tape)?;
                let t = tape.scale(l1, -1.0 / sigma)?;
                tape.exp(t)
            }
            KernelKind::RbfMixture { sigmas } => {
                let sq = d.squared(tape)?;
                let mut acc = gaussian(tape, sq, sigmas[0])?;
                for &s in &sigmas[1..] {
                    let k = gaussian(tape, sq, s)?;
                    acc = tape.add(acc, k)?;
                }
                Ok(acc)
            }
            KernelKind::Exponential { sigma } => {
                let l2 = d.euclidean(tape)?;
                let t = tape.scale(l2, -1.0 / sigma)?;
                tape.exp(t)
            }
            KernelKind::Matern32 { alpha, length } => {
                let l2 = d.euclidean(tape)?;
                let t = tape.scale(l2, 3f64.sqrt() / length)?;
                let poly = tape.shift(t, 1.0)?;
                matern_tail(tape, poly, t, *alpha)
            }
            KernelKind::Matern52 { alpha, length } => {
                let l2 = d.euclidean(tape)?;
                // with t = √5 r, the polynomial 1 + √5 r + 5r²/3 is 1 + t + t²/3
                let t = tape.scale(l2, 5f64.sqrt() / length)?;
                let t2 = tape.square(t)?;
                let t2 = tape.scale(t2, 1.0 / 3.0)?;
                let poly = tape.add(t, t2)?;
                let poly = tape.shift(poly, 1.0)?;
                matern_tail(tape, poly, t, *alpha)
            }
        }
    }
}

fn gaussian(tape: &mut Tape, sq: Var, sigma: f64) -> Result<Var> {
    let t = tape.scale(sq, -1.0 / (2.0 * sigma * sigma))?;
    tape.exp(t)
}

/// `alpha * poly * exp(-t)`
fn matern_tail(tape: &mut Tape, poly: Var, t: Var, alpha: f64) -> Result<Var> {
    let neg = tape.neg(t)?;
    let e = tape.exp(neg)?;
    let v = tape.mul(poly, e)?;
    if alpha == 1.0 {
        Ok(v)
    } else {
        tape.scale(v, alpha)
    }
}

#[derive(Clone, Copy)]
enum Layout {
    Vector,
    Rows,
    Pairwise,
}

/// Distances between two point sets, computed once per norm and shared by
/// every kernel that needs them.
struct Distances {
    /// One full difference for row-wise layouts, one `[n, p]` slice per
    /// coordinate for pairwise ones.
    diffs: Vec<Var>,
    layout: Layout,
    squared: Option<Var>,
    manhattan: Option<Var>,
    euclidean: Option<Var>,
}

impl Distances {
    fn rows(tape: &mut Tape, x: Var, y: Var) -> Result<Self> {
        let (xs, ys) = (tape.shape(x).to_vec(), tape.shape(y).to_vec());
        if xs != ys || xs.is_empty() || xs.len() > 2 {
            return Err(Error::Shape(format!(
                "kernel arguments must share a vector or matrix shape, got {xs:?} and {ys:?}"
            )));
        }
        let diff = tape.sub(x, y)?;
        Ok(Distances {
            diffs: vec![diff],
            layout: if xs.len() == 1 {
                Layout::Vector
            } else {
                Layout::Rows
            },
            squared: None,
            manhattan: None,
            euclidean: None,
        })
    }

    fn pairwise(tape: &mut Tape, x: Var, y: Var) -> Result<Self> {
        let (xs, ys) = (tape.shape(x).to_vec(), tape.shape(y).to_vec());
        if xs.len() != 2 || ys.len() != 2 || xs[1] != ys[1] {
            return Err(Error::Shape(format!(
                "gram needs [n, m] and [p, m] inputs, got {xs:?} and {ys:?}"
            )));
        }
        let (p, m) = (ys[0], xs[1]);
        let mut diffs = Vec::with_capacity(m);
        for j in 0..m {
            let xj = tape.column(x, j)?;
            let xj = tape.broadcast_cols(xj, p)?;
            let yj = tape.column(y, j)?;
            diffs.push(tape.sub(xj, yj)?);
        }
        Ok(Distances {
            diffs,
            layout: Layout::Pairwise,
            squared: None,
            manhattan: None,
            euclidean: None,
        })
    }

    fn reduce(&self, tape: &mut Tape, parts: Vec<Var>) -> Result<Var> {
        match self.layout {
            Layout::Vector => tape.sum(parts[0]),
            Layout::Rows => tape.sum_cols(parts[0]),
            Layout::Pairwise => {
                let mut acc = parts[0];
                for &p in &parts[1..] {
                    acc = tape.add(acc, p)?;
                }
                Ok(acc)
            }
        }
    }

    fn squared(&mut self, tape: &mut Tape) -> Result<Var> {
        if let Some(v) = self.squared {
            return Ok(v);
        }
        let parts = self
            .diffs
            .iter()
            .map(|&d| tape.square(d))
            .collect::<Result<Vec<_>>>()?;
        let v = self.reduce(tape, parts)?;
        self.squared = Some(v);
        Ok(v)
    }

    fn manhattan(&mut self, tape: &mut Tape) -> Result<Var> {
        if let Some(v) = self.manhattan {
            return Ok(v);
        }
        let parts = self
            .diffs
            .iter()
            .map(|&d| tape.abs(d))
            .collect::<Result<Vec<_>>>()?;
        let v = self.reduce(tape, parts)?;
        self.manhattan = Some(v);
        Ok(v)
    }

    fn euclidean(&mut self, tape: &mut Tape) -> Result<Var> {
        if let Some(v) = self.euclidean {
            return Ok(v);
        }
        let sq = self.squared(tape)?;
        let v = tape.smooth_sqrt(sq)?;
        self.euclidean = Some(v);
        Ok(v)
    }
}

/// How mixture weights are derived from the logits `ξ′`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// `ξ = softmax(ξ′)`.
    Soft,
    /// `ξ = max(ξ′, 0) / Σ max(ξ′, 0)`, uniform when every logit is `≤ 0`.
    DirectLinear,
    /// Indicator of `argmax softmax(ξ′)`, lowest index on ties. The gradient
    /// reaches only the selected logit.
    OneHot,
}

impl SelectionMode {
    /// Logit value every slot starts from. Direct-linear weights have no
    /// gradient when all logits are `≤ 0`, so that mode starts positive.
    pub fn initial_logit(self) -> f64 {
        match self {
            SelectionMode::DirectLinear => 1.0,
            _ => 0.0,
        }
    }
}

/// The learned combination `k = Σ ξ_i k_i` over six fixed kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMix {
    components: Vec<KernelKind>,
    mode: SelectionMode,
}

impl KernelMix {
    /// `components` must hold one kernel of each kind, in mix order.
    pub fn new(components: Vec<KernelKind>, mode: SelectionMode) -> Result<Self> {
        if components.len() != NUM_KERNELS
            || components.iter().enumerate().any(|(i, k)| k.slot() != i)
        {
            return Err(Error::InvalidParameter(
                "a kernel mix needs the six kinds in order gaussian, laplacian, \
                 rbf_mixture, exponential, matern32, matern52"
                    .into(),
            ));
        }
        let components = components
            .into_iter()
            .map(KernelKind::validated)
            .collect::<Result<_>>()?;
        Ok(KernelMix { components, mode })
    }

    pub fn with_defaults(mode: SelectionMode) -> Self {
        KernelMix {
            components: KernelKind::defaults(),
            mode,
        }
    }

    pub fn components(&self) -> &[KernelKind] {
        &self.components
    }

    pub fn mode(&self) -> SelectionMode {
        self.mode
    }

    pub fn initial_logits(&self) -> Tensor {
        Tensor::full(&[NUM_KERNELS], self.mode.initial_logit())
    }

    /// Effective weights for the given logits.
    pub fn weights(&self, logits: &[f64]) -> Vec<f64> {
        weights(self.mode, logits)
    }
}

/// Mixture weights for `logits` under `mode`.
pub fn weights(mode: SelectionMode, logits: &[f64]) -> Vec<f64> {
    let n = logits.len();
    match mode {
        SelectionMode::Soft => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = e.iter().sum();
            e.into_iter().map(|v| v / total).collect()
        }
        SelectionMode::DirectLinear => {
            let clamped: Vec<f64> = logits.iter().map(|&v| v.max(0.0)).collect();
            let total: f64 = clamped.iter().sum();
            if total > 0.0 {
                clamped.into_iter().map(|v| v / total).collect()
            } else {
                vec![1.0 / n as f64; n]
            }
        }
        SelectionMode::OneHot => {
            let mut w = vec![0.0; n];
            w[argmax(logits)] = 1.0;
            w
        }
    }
}

/// Index of the largest entry, lowest index on ties. Softmax is monotone, so
/// this is also the argmax of the soft weights.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Either one kernel or a learned mixture.
#[derive(Clone, Debug, PartialEq)]
pub enum Kernel {
    Single(KernelKind),
    Mix(KernelMix),
}

impl Kernel {
    pub fn is_mix(&self) -> bool {
        matches!(self, Kernel::Mix(_))
    }

    pub fn label(&self) -> String {
        match self {
            Kernel::Single(k) => k.name().to_string(),
            Kernel::Mix(m) => format!("mix_{:?}", m.mode()).to_lowercase(),
        }
    }

    /// Weight vector in mix order: the mixture weights, or an indicator of
    /// the single kernel's slot.
    pub fn report_weights(&self, logits: Option<&[f64]>) -> Vec<f64> {
        match (self, logits) {
            (Kernel::Mix(m), Some(l)) => m.weights(l),
            (Kernel::Mix(m), None) => m.weights(m.initial_logits().data()),
            (Kernel::Single(k), _) => {
                let mut w = vec![0.0; NUM_KERNELS];
                w[k.slot()] = 1.0;
                w
            }
        }
    }
}

/// A kernel attached to a tape, with mixture weights already built from the
/// logits node.
pub struct BoundKernel<'k> {
    kernel: &'k Kernel,
    weights: Vec<(usize, Var)>,
}

impl<'k> BoundKernel<'k> {
    /// `logits` must be given exactly when `kernel` is a mixture.
    pub fn new(tape: &mut Tape, kernel: &'k Kernel, logits: Option<Var>) -> Result<Self> {
        let weights = match (kernel, logits) {
            (Kernel::Single(_), None) => vec![],
            (Kernel::Mix(mix), Some(l)) => weight_nodes(tape, mix.mode, l)?,
            (Kernel::Single(_), Some(_)) => {
                return Err(Error::InvalidParameter(
                    "a single kernel takes no selection logits".into(),
                ))
            }
            (Kernel::Mix(_), None) => {
                return Err(Error::InvalidParameter(
                    "a kernel mix needs a logits node".into(),
                ))
            }
        };
        Ok(BoundKernel { kernel, weights })
    }

    pub fn kernel(&self) -> &Kernel {
        self.kernel
    }

    /// Row-wise (or vector) evaluation; see [`KernelKind::eval`].
    pub fn eval(&self, tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
        let mut d = Distances::rows(tape, x, y)?;
        self.combine(tape, &mut d)
    }

    pub fn gram(&self, tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
        let mut d = Distances::pairwise(tape, x, y)?;
        self.combine(tape, &mut d)
    }

    fn combine(&self, tape: &mut Tape, d: &mut Distances) -> Result<Var> {
        match self.kernel {
            Kernel::Single(k) => k.apply(tape, d),
            Kernel::Mix(mix) => {
                let mut acc: Option<Var> = None;
                for &(slot, w) in &self.weights {
                    let k = mix.components[slot].apply(tape, d)?;
                    let term = tape.mul(w, k)?;
                    acc = Some(match acc {
                        None => term,
                        Some(a) => tape.add(a, term)?,
                    });
                }
                Ok(acc.expect("a mixture has at least one weighted term"))
            }
        }
    }
}

/// Scalar weight nodes `(slot, ξ_slot)` for each kernel that takes part.
fn weight_nodes(tape: &mut Tape, mode: SelectionMode, logits: Var) -> Result<Vec<(usize, Var)>> {
    if tape.shape(logits) != [NUM_KERNELS] {
        return Err(Error::Shape(format!(
            "selection logits must have shape [{NUM_KERNELS}], got {:?}",
            tape.shape(logits)
        )));
    }
    match mode {
        SelectionMode::Soft => {
            let w = tape.softmax(logits)?;
            (0..NUM_KERNELS)
                .map(|i| Ok((i, tape.select(w, i)?)))
                .collect()
        }
        SelectionMode::DirectLinear => {
            let values = tape.value(logits).data().to_vec();
            if values.iter().all(|&v| v <= 0.0) {
                let uniform = Tensor::full(&[NUM_KERNELS], 1.0 / NUM_KERNELS as f64);
                let w = tape.constant(uniform);
                return (0..NUM_KERNELS)
                    .map(|i| Ok((i, tape.select(w, i)?)))
                    .collect();
            }
            let clamped = tape.relu(logits)?;
            let total = tape.sum(clamped)?;
            let w = tape.div(clamped, total)?;
            (0..NUM_KERNELS)
                .map(|i| Ok((i, tape.select(w, i)?)))
                .collect()
        }
        SelectionMode::OneHot => {
            let values = tape.value(logits).data().to_vec();
            let j = argmax(&values);
            // 1 + (ξ′_j - stop_grad(ξ′_j)): exactly one in value, with unit
            // derivative toward the selected logit
            let selected = tape.select(logits, j)?;
            let frozen = tape.constant(Tensor::scalar(values[j]));
            let delta = tape.sub(selected, frozen)?;
            let w = tape.shift(delta, 1.0)?;
            Ok(vec![(j, w)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_pair(kind: &KernelKind, x: &[f64], y: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(x.to_vec()));
        let b = tape.constant(Tensor::vector(y.to_vec()));
        let k = kind.eval(&mut tape, a, b).unwrap();
        tape.item(k).unwrap()
    }

    #[test]
    fn gaussian_values() {
        let g = KernelKind::gaussian(10.0).unwrap();
        assert_eq!(eval_pair(&g, &[0.3, 0.4], &[0.3, 0.4]), 1.0);
        // ‖x − y‖² = 200
        let v = eval_pair(&g, &[0.0, 0.0], &[10.0, 10.0]);
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn peaks_at_coincident_points() {
        let rbf = KernelKind::rbf_mixture(vec![1.0, 2.0, 4.0, 8.0, 16.0]).unwrap();
        assert_eq!(eval_pair(&rbf, &[1.0, -2.0], &[1.0, -2.0]), 5.0);
        let m32 = KernelKind::matern32(1.0, 10.0).unwrap();
        assert_eq!(eval_pair(&m32, &[1.0, -2.0], &[1.0, -2.0]), 1.0);
        for kind in KernelKind::defaults() {
            assert_eq!(eval_pair(&kind, &[0.5, 0.5], &[0.5, 0.5]), kind.peak());
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(KernelKind::gaussian(0.0).is_err());
        assert!(KernelKind::laplacian(-1.0).is_err());
        assert!(KernelKind::rbf_mixture(vec![]).is_err());
        assert!(KernelKind::rbf_mixture(vec![1.0, f64::NAN]).is_err());
        assert!(KernelKind::matern52(1.0, 0.0).is_err());
        let mut wrong_order = KernelKind::defaults();
        wrong_order.swap(0, 1);
        assert!(KernelMix::new(wrong_order, SelectionMode::Soft).is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        let k = KernelKind::gaussian(1.0).unwrap();
        assert!(k.eval(&mut tape, a, b).is_err());
        let x = tape.constant(Tensor::zeros(&[3, 2]));
        let y = tape.constant(Tensor::zeros(&[4, 3]));
        assert!(k.gram(&mut tape, x, y).is_err());
    }

    #[test]
    fn weights_per_mode() {
        let w = weights(SelectionMode::Soft, &[0.0; 6]);
        for v in &w {
            assert!((v - 1.0 / 6.0).abs() < 1e-15);
        }
        let w = weights(SelectionMode::Soft, &[2f64.ln(), 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((w[0] - 2.0 / 7.0).abs() < 1e-15);
        for v in &w[1..] {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
        let w = weights(SelectionMode::OneHot, &[0.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(w, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let w = weights(SelectionMode::OneHot, &[1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(w, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let w = weights(SelectionMode::DirectLinear, &[-1.0, 3.0, 1.0, 0.0, -2.0, 0.0]);
        assert_eq!(w, vec![0.0, 0.75, 0.25, 0.0, 0.0, 0.0]);
        let w = weights(SelectionMode::DirectLinear, &[-1.0; 6]);
        assert_eq!(w, vec![1.0 / 6.0; 6]);
    }

    #[test]
    fn uniform_soft_mix_at_zero_distance() {
        let kernel = Kernel::Mix(KernelMix::with_defaults(SelectionMode::Soft));
        let mut tape = Tape::new();
        let xi = tape.variable("xi", Tensor::zeros(&[6]));
        let bound = BoundKernel::new(&mut tape, &kernel, Some(xi)).unwrap();
        let x = tape.constant(Tensor::vector(vec![0.1, 0.2]));
        let k = bound.eval(&mut tape, x, x).unwrap();
        assert!((tape.item(k).unwrap() - 5.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn one_hot_matches_selected_kernel_and_routes_gradient() {
        let kernel = Kernel::Mix(KernelMix::with_defaults(SelectionMode::OneHot));
        let mut tape = Tape::new();
        let xi = tape.variable("xi", Tensor::vector(vec![2.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
        let bound = BoundKernel::new(&mut tape, &kernel, Some(xi)).unwrap();
        let x = tape.constant(Tensor::vector(vec![0.1, 0.2]));
        let y = tape.constant(Tensor::vector(vec![3.0, -4.0]));
        let k = bound.eval(&mut tape, x, y).unwrap();
        let direct = KernelKind::gaussian(10.0).unwrap().eval(&mut tape, x, y).unwrap();
        assert_eq!(tape.item(k).unwrap(), tape.item(direct).unwrap());
        let g = tape.gradient(k, &[xi]).unwrap();
        let gv = g[xi].data();
        assert_eq!(gv[0], tape.item(direct).unwrap());
        assert!(gv[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mix_requires_logits() {
        let kernel = Kernel::Mix(KernelMix::with_defaults(SelectionMode::Soft));
        let mut tape = Tape::new();
        assert!(BoundKernel::new(&mut tape, &kernel, None).is_err());
        let single = Kernel::Single(KernelKind::gaussian(1.0).unwrap());
        let xi = tape.variable("xi", Tensor::zeros(&[6]));
        assert!(BoundKernel::new(&mut tape, &single, Some(xi)).is_err());
    }

    #[test]
    fn single_point_gram() {
        let k = KernelKind::laplacian(2.0).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(1, 2, vec![0.5, -0.5]).unwrap());
        let g = k.gram(&mut tape, x, x).unwrap();
        assert_eq!(tape.shape(g), &[1, 1]);
        assert_eq!(tape.value(g).data(), &[1.0]);
    }
}
