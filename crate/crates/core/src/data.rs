//! 2D mixture datasets: Ring, Grid, and SmileFace.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Ring,
    Grid,
    Smile,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Ring, DatasetKind::Grid, DatasetKind::Smile];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Ring => "ring",
            DatasetKind::Grid => "grid",
            DatasetKind::Smile => "smile",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset `{s}` (expected ring, grid or smile)")))
    }
}

/// An isotropic Gaussian component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMode {
    pub mean: [f64; 2],
    pub std: f64,
    pub weight: f64,
}

/// Lower half of an axis-aligned ellipse, `(a cos φ, -b sin φ) + center`
/// for `φ ∈ [0, π]`, with isotropic Gaussian jitter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HalfEllipse {
    pub center: [f64; 2],
    pub semi_x: f64,
    pub semi_y: f64,
    pub jitter: f64,
    pub weight: f64,
}

impl HalfEllipse {
    pub fn point(&self, phi: f64) -> [f64; 2] {
        [
            self.center[0] + self.semi_x * phi.cos(),
            self.center[1] - self.semi_y * phi.sin(),
        ]
    }

    /// Euclidean distance from `p` to the arc.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        const GRID: usize = 512;
        let dist = |phi: f64| {
            let q = self.point(phi);
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()
        };
        let step = PI / GRID as f64;
        let (mut best_i, mut best) = (0, f64::INFINITY);
        for i in 0..=GRID {
            let d = dist(i as f64 * step);
            if d < best {
                best = d;
                best_i = i;
            }
        }
        // golden-section refinement inside the neighbouring cells
        let (mut lo, mut hi) = (
            (best_i as f64 - 1.0).max(0.0) * step,
            (best_i as f64 + 1.0).min(GRID as f64) * step,
        );
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..60 {
            let m1 = hi - ratio * (hi - lo);
            let m2 = lo + ratio * (hi - lo);
            if dist(m1) < dist(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        best.min(dist(0.5 * (lo + hi)))
    }
}

/// Free parameters of the SmileFace layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmileParams {
    pub eye_weight: f64,
    pub eye_variance: f64,
    pub mouth_center_y: f64,
    pub mouth_semi_x: f64,
    pub mouth_semi_y: f64,
    pub mouth_jitter: f64,
}

impl Default for SmileParams {
    fn default() -> Self {
        SmileParams {
            eye_weight: 0.25,
            eye_variance: 0.001,
            mouth_center_y: -0.3,
            mouth_semi_x: 0.6,
            mouth_semi_y: 0.5,
            mouth_jitter: 0.01,
        }
    }
}

/// Component of a mixture, as seen by the evaluation metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Component {
    Gaussian(GaussianMode),
    Arc(HalfEllipse),
}

impl Component {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        match self {
            Component::Gaussian(g) => ((p[0] - g.mean[0]).powi(2) + (p[1] - g.mean[1]).powi(2)).sqrt(),
            Component::Arc(a) => a.distance(p),
        }
    }

    /// Spread used by the quality thresholds: the Gaussian std or the arc
    /// jitter.
    pub fn std(&self) -> f64 {
        match self {
            Component::Gaussian(g) => g.std,
            Component::Arc(a) => a.jitter,
        }
    }

    pub fn weight(&self) -> f64 {
        match self {
            Component::Gaussian(g) => g.weight,
            Component::Arc(a) => a.weight,
        }
    }

    pub fn translated(&self, by: [f64; 2]) -> Component {
        match *self {
            Component::Gaussian(mut g) => {
                g.mean = [g.mean[0] + by[0], g.mean[1] + by[1]];
                Component::Gaussian(g)
            }
            Component::Arc(mut a) => {
                a.center = [a.center[0] + by[0], a.center[1] + by[1]];
                Component::Arc(a)
            }
        }
    }
}

/// A 2D mixture distribution and its ground-truth modes.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    kind: DatasetKind,
    gaussians: Vec<GaussianMode>,
    arc: Option<HalfEllipse>,
}

impl MixtureSpec {
    /// Eight modes on the unit circle, the first at `(1, 0)`.
    pub fn ring(std: f64) -> Result<Self> {
        let gaussians = (0..8)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / 8.0;
                GaussianMode {
                    mean: [a.cos(), a.sin()],
                    std,
                    weight: 1.0 / 8.0,
                }
            })
            .collect();
        MixtureSpec::new(DatasetKind::Ring, gaussians, None)
    }

    /// Twenty-five modes on `{-4, -2, 0, 2, 4}²`.
    pub fn grid(std: f64) -> Result<Self> {
        let coords = [-4.0, -2.0, 0.0, 2.0, 4.0];
        let gaussians = coords
            .iter()
            .flat_map(|&x| coords.iter().map(move |&y| [x, y]))
            .map(|mean| GaussianMode {
                mean,
                std,
                weight: 1.0 / 25.0,
            })
            .collect();
        MixtureSpec::new(DatasetKind::Grid, gaussians, None)
    }

    /// Two eye Gaussians and a mouth arc.
    pub fn smile(p: SmileParams) -> Result<Self> {
        let eye_std = p.eye_variance.sqrt();
        let eyes = vec![
            GaussianMode {
                mean: [-0.4, 0.3],
                std: eye_std,
                weight: p.eye_weight,
            },
            GaussianMode {
                mean: [0.4, 0.3],
                std: eye_std,
                weight: p.eye_weight,
            },
        ];
        let mouth = HalfEllipse {
            center: [0.0, p.mouth_center_y],
            semi_x: p.mouth_semi_x,
            semi_y: p.mouth_semi_y,
            jitter: p.mouth_jitter,
            weight: 1.0 - 2.0 * p.eye_weight,
        };
        MixtureSpec::new(DatasetKind::Smile, eyes, Some(mouth))
    }

    /// The dataset with its default parameters.
    pub fn standard(kind: DatasetKind) -> Self {
        match kind {
            DatasetKind::Ring => MixtureSpec::ring(1e-4),
            DatasetKind::Grid => MixtureSpec::grid(0.005),
            DatasetKind::Smile => MixtureSpec::smile(SmileParams::default()),
        }
        .expect("default datasets are valid")
    }

    fn new(kind: DatasetKind, gaussians: Vec<GaussianMode>, arc: Option<HalfEllipse>) -> Result<Self> {
        let total: f64 = gaussians.iter().map(|g| g.weight).sum::<f64>() + arc.map_or(0.0, |a| a.weight);
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, not 1")));
        }
        let spreads = gaussians.iter().map(|g| g.std).chain(arc.map(|a| a.jitter));
        for s in spreads {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidParameter(format!("component spread must be positive, got {s}")));
            }
        }
        if gaussians.iter().any(|g| g.weight < 0.0) || arc.is_some_and(|a| a.weight < 0.0) {
            return Err(Error::InvalidParameter("negative component weight".into()));
        }
        Ok(MixtureSpec { kind, gaussians, arc })
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    /// The modes counted by the mode-capture metric: every Gaussian (for
    /// SmileFace, the two eyes).
    pub fn modes(&self) -> &[GaussianMode] {
        &self.gaussians
    }

    pub fn max_modes(&self) -> usize {
        self.gaussians.len()
    }

    pub fn arc(&self) -> Option<&HalfEllipse> {
        self.arc.as_ref()
    }

    /// All components: the Gaussians in order, then the arc if present.
    pub fn components(&self) -> Vec<Component> {
        self.gaussians
            .iter()
            .copied()
            .map(Component::Gaussian)
            .chain(self.arc.map(Component::Arc))
            .collect()
    }

    /// `n` i.i.d. draws as an `[n, 2]` matrix.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Tensor {
        let components = self.components();
        let cumulative: Vec<f64> = components
            .iter()
            .scan(0.0, |acc, c| {
                *acc += c.weight();
                Some(*acc)
            })
            .collect();
        let mut data = Vec::with_capacity(2 * n);
        for _ in 0..n {
            let u: f64 = rng.gen::<f64>() * cumulative[cumulative.len() - 1];
            let idx = cumulative.iter().position(|&c| u < c).unwrap_or(components.len() - 1);
            let (base, spread) = match &components[idx] {
                Component::Gaussian(g) => (g.mean, g.std),
                Component::Arc(a) => (a.point(rng.gen_range(0.0..=PI)), a.jitter),
            };
            let nx: f64 = StandardNormal.sample(rng);
            let ny: f64 = StandardNormal.sample(rng);
            data.push(base[0] + spread * nx);
            data.push(base[1] + spread * ny);
        }
        Tensor::from_parts(vec![n, 2], data)
    }
}

/// `[n, dim]` noise with entries i.i.d. uniform on `[-1, 1]`.
pub fn make_noise(n: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
    let data = (0..n * dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Tensor::from_parts(vec![n, dim], data)
}
