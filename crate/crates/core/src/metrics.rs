//! Mode-collapse metrics on 2D samples.
//!
//! All functions are pure. Samples are `[n, 2]` tensors.

use serde::{Deserialize, Serialize};

use crate::data::{Component, GaussianMode, MixtureSpec};
use crate::error::{Error, Result};
use crate::kernels::NUM_KERNELS;
use crate::tensor::Tensor;

/// One row of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iteration: u64,
    pub modes: usize,
    pub hq: f64,
    pub kl: f64,
    pub loss_d: f64,
    pub loss_g: f64,
    pub xi: [f64; NUM_KERNELS],
    pub seconds: f64,
}

/// The three sample-quality numbers of a report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleQuality {
    pub modes: usize,
    pub hq: f64,
    pub kl: f64,
}

pub const KL_SMOOTHING: f64 = 1e-10;

fn check_points(samples: &Tensor, what: &str) -> Result<()> {
    if samples.rank() != 2 || samples.cols() != 2 {
        return Err(Error::Shape(format!("{what} must be [n, 2], got {:?}", samples.shape())));
    }
    if samples.rows() == 0 {
        return Err(Error::InvalidParameter(format!("{what} is empty")));
    }
    Ok(())
}

fn points(samples: &Tensor) -> impl Iterator<Item = [f64; 2]> + '_ {
    samples.data().chunks_exact(2).map(|p| [p[0], p[1]])
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Index of and distance to the nearest component. Ties go to the lower
/// index.
pub fn nearest_component(components: &[Component], p: [f64; 2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in components.iter().enumerate() {
        let d = c.distance(p);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Number of modes with at least one sample within one std of their mean.
pub fn modes_captured(samples: &Tensor, modes: &[GaussianMode]) -> Result<usize> {
    check_points(samples, "samples")?;
    let mut hit = vec![false; modes.len()];
    for p in points(samples) {
        for (h, m) in hit.iter_mut().zip(modes) {
            if !*h && dist(p, m.mean) <= m.std {
                *h = true;
            }
        }
    }
    Ok(hit.into_iter().filter(|&h| h).count())
}

/// Percentage of samples within three spreads of their nearest component.
pub fn high_quality_percent(samples: &Tensor, components: &[Component]) -> Result<f64> {
    check_points(samples, "samples")?;
    let good = points(samples)
        .filter(|&p| {
            let (i, d) = nearest_component(components, p);
            d <= 3.0 * components[i].std()
        })
        .count();
    Ok(100.0 * good as f64 / samples.rows() as f64)
}

fn class_histogram(samples: &Tensor, components: &[Component]) -> Vec<f64> {
    let mut counts = vec![0.0; components.len()];
    for p in points(samples) {
        counts[nearest_component(components, p).0] += 1.0;
    }
    let total = samples.rows() as f64;
    counts.iter().map(|c| c / total + KL_SMOOTHING).collect()
}

/// `KL(p_generated || p_reference)` between nearest-component class
/// histograms.
pub fn kl_modes(generated: &Tensor, reference: &Tensor, components: &[Component]) -> Result<f64> {
    check_points(generated, "generated samples")?;
    check_points(reference, "reference samples")?;
    let p = class_histogram(generated, components);
    let q = class_histogram(reference, components);
    let kl: f64 = p.iter().zip(&q).map(|(&pi, &qi)| pi * (pi / qi).ln()).sum();
    Ok(kl.max(0.0))
}

/// Modes, HQ and KL of `generated` against the dataset and a reference
/// sample from it.
pub fn sample_quality(spec: &MixtureSpec, generated: &Tensor, reference: &Tensor) -> Result<SampleQuality> {
    let components = spec.components();
    Ok(SampleQuality {
        modes: modes_captured(generated, spec.modes())?,
        hq: high_quality_percent(generated, &components)?,
        kl: kl_modes(generated, reference, &components)?,
    })
}

fn mean_cov(x: &Tensor) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = x.rows() as f64;
    let mut mu = [0.0; 2];
    for p in points(x) {
        mu[0] += p[0] / n;
        mu[1] += p[1] / n;
    }
    let mut c = [[0.0; 2]; 2];
    for p in points(x) {
        let d = [p[0] - mu[0], p[1] - mu[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j] / (n - 1.0);
            }
        }
    }
    (mu, c)
}

/// Fréchet distance between the Gaussian fits of two 2D point sets.
pub fn frechet_2d(generated: &Tensor, reference: &Tensor) -> Result<f64> {
    check_points(generated, "generated samples")?;
    check_points(reference, "reference samples")?;
    if generated.rows() < 2 || reference.rows() < 2 {
        return Err(Error::InvalidParameter("frechet_2d needs at least two points per set".into()));
    }
    const REG: f64 = 1e-9;
    let (m1, mut s1) = mean_cov(generated);
    let (m2, mut s2) = mean_cov(reference);
    for s in [&mut s1, &mut s2] {
        s[0][0] += REG;
        s[1][1] += REG;
    }
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = s1[i][0] * s2[0][j] + s1[i][1] * s2[1][j];
        }
    }
    // M is similar to a PSD matrix, so its eigenvalues are real and
    // non-negative and tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)).
    let tr = m[0][0] + m[1][1];
    let det = (m[0][0] * m[1][1] - m[0][1] * m[1][0]).max(0.0);
    let tr_sqrt = (tr + 2.0 * det.sqrt()).max(0.0).sqrt();
    let dmu = (m1[0] - m2[0]).powi(2) + (m1[1] - m2[1]).powi(2);
    Ok((dmu + s1[0][0] + s1[1][1] + s2[0][0] + s2[1][1] - 2.0 * tr_sqrt).max(0.0))
}
