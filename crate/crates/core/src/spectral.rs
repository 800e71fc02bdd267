//! Optimization curves, the peak singular value along them, and the finite
//! sampling set used to approximate that peak.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, C64};
use crate::model::{ModelError, OperatingPoint, PoleSet};

/// Anchoring offsets as multiples of a pole's distance to the curve.
pub const ANCHOR_OFFSETS: [f64; 3] = [0.1, 0.3, 1.0];
/// Samples per anchored pole: the projection and the symmetric offsets.
pub const DEFAULT_PER_POLE: usize = 2 * ANCHOR_OFFSETS.len() + 1;
/// Number of positive log-spaced values in the fallback grid.
pub const FALLBACK_POINTS: usize = 20;
/// Anchoring band as a multiple of the distance of the nearest pole.
pub const BAND_FACTOR: f64 = 5.0;
/// Lower bound on the band relative to the nearest-pole distance, so the
/// nearest pole is always anchored even when the spread is small.
pub const BAND_FLOOR: f64 = 1.5;

const GENERIC_GRID: usize = 4096;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SpectralError {
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("sample t = {t} at s = {s} lies on pole {pole}")]
    NearPole { t: f64, s: C64, pole: C64 },
    #[error("sample set is empty")]
    EmptySampleSet,
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error(transparent)]
    Model(ModelError),
}

impl From<ModelError> for SpectralError {
    fn from(e: ModelError) -> Self {
        SpectralError::Model(e)
    }
}

type CurveFn = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

#[derive(Clone)]
pub enum CurveKind {
    /// `γ(t) = Δ + j t` for all real `t`.
    Vertical { delta: f64 },
    /// A continuous map on a closed interval.
    Generic { map: CurveFn, domain: (f64, f64) },
}

/// A continuous curve `γ(t)` in the complex plane.
#[derive(Clone)]
pub struct OptimizationCurve {
    kind: CurveKind,
}

impl fmt::Debug for OptimizationCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            CurveKind::Vertical { delta } => write!(f, "Vertical(Δ = {delta})"),
            CurveKind::Generic { domain, .. } => write!(f, "Generic(t ∈ [{}, {}])", domain.0, domain.1),
        }
    }
}

impl OptimizationCurve {
    pub fn vertical(delta: f64) -> Self {
        Self {
            kind: CurveKind::Vertical { delta },
        }
    }

    /// The map is assumed continuous; `domain` must be a finite, non-empty interval.
    pub fn generic(
        map: impl Fn(f64) -> C64 + Send + Sync + 'static,
        domain: (f64, f64),
    ) -> Result<Self, SpectralError> {
        if !(domain.0.is_finite() && domain.1.is_finite() && domain.0 < domain.1) {
            return Err(SpectralError::InvalidCurve(format!(
                "domain [{}, {}] is not a finite interval",
                domain.0, domain.1
            )));
        }
        Ok(Self {
            kind: CurveKind::Generic {
                map: Arc::new(map),
                domain,
            },
        })
    }

    pub fn kind(&self) -> &CurveKind {
        &self.kind
    }

    pub fn delta(&self) -> Option<f64> {
        match self.kind {
            CurveKind::Vertical { delta } => Some(delta),
            CurveKind::Generic { .. } => None,
        }
    }

    pub fn is_vertical(&self) -> bool {
        matches!(self.kind, CurveKind::Vertical { .. })
    }

    pub fn point(&self, t: f64) -> C64 {
        match &self.kind {
            CurveKind::Vertical { delta } => C64::new(*delta, t),
            CurveKind::Generic { map, domain } => map(t.clamp(domain.0, domain.1)),
        }
    }

    /// Parameter of the closest curve point to `s` and the distance to it.
    pub fn project(&self, s: C64) -> (f64, f64) {
        match &self.kind {
            CurveKind::Vertical { delta } => (s.im, (s.re - delta).abs()),
            CurveKind::Generic { map, domain } => {
                let (a, b) = *domain;
                let h = (b - a) / GENERIC_GRID as f64;
                let dist = |t: f64| (map(t) - s).norm();
                let mut best = (a, dist(a));
                for i in 1..=GENERIC_GRID {
                    let t = a + h * i as f64;
                    let d = dist(t);
                    if d < best.1 {
                        best = (t, d);
                    }
                }
                // golden-section refinement inside the bracketing cell
                let (mut lo, mut hi) = ((best.0 - h).max(a), (best.0 + h).min(b));
                let g = 0.5 * (5f64.sqrt() - 1.0);
                for _ in 0..60 {
                    let x1 = hi - g * (hi - lo);
                    let x2 = lo + g * (hi - lo);
                    if dist(x1) < dist(x2) {
                        hi = x2;
                    } else {
                        lo = x1;
                    }
                }
                let t = 0.5 * (lo + hi);
                let d = dist(t);
                if d < best.1 {
                    (t, d)
                } else {
                    best
                }
            }
        }
    }

    /// Which side of the curve `s` lies on: positive, negative or zero.
    ///
    /// For vertical lines this is `Re(s) - Δ`. For generic curves it is the
    /// signed distance with the left of the direction of travel negative.
    pub fn side(&self, s: C64) -> f64 {
        match &self.kind {
            CurveKind::Vertical { delta } => s.re - delta,
            CurveKind::Generic { domain, .. } => {
                let (t, d) = self.project(s);
                let h = 1e-6 * (domain.1 - domain.0);
                let tangent = self.point((t + h).min(domain.1)) - self.point((t - h).max(domain.0));
                let offset = s - self.point(t);
                // Im(offset * conj(tangent)) > 0 means s is to the left
                let cross = (offset * tangent.conj()).im;
                if cross > 0.0 {
                    -d
                } else {
                    d
                }
            }
        }
    }

    /// `|dγ/dt|` at `t`; used to turn distances into parameter offsets.
    fn speed(&self, t: f64) -> f64 {
        match &self.kind {
            CurveKind::Vertical { .. } => 1.0,
            CurveKind::Generic { domain, .. } => {
                let h = 1e-6 * (domain.1 - domain.0);
                let (lo, hi) = ((t - h).max(domain.0), (t + h).min(domain.1));
                ((self.point(hi) - self.point(lo)).norm() / (hi - lo)).max(f64::MIN_POSITIVE)
            }
        }
    }
}

/// Distance from `s` to the curve.
pub fn curve_distance(s: C64, curve: &OptimizationCurve) -> f64 {
    curve.project(s).1
}

/// Largest singular value; rejects non-finite input.
pub fn sigma_max(g: &DMatrix<C64>) -> Result<f64, SpectralError> {
    if g.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SpectralError::NonFinite("transfer matrix"));
    }
    Ok(linalg::sigma_max(g))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleTag {
    PoleAnchored,
    Refinement,
    FallbackGrid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub tag: SampleTag,
    /// Pole this sample was placed around, for pole-anchored samples.
    pub anchor: Option<C64>,
}

/// An anchored pole with its curve projection and distance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub pole: C64,
    pub t: f64,
    pub distance: f64,
    /// Half-width of the neighbourhood in parameter units.
    pub reach: f64,
}

/// A finite, sorted, duplicate-free set of curve parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    samples: Vec<Sample>,
    anchors: Vec<Anchor>,
    /// Values at `t` and `-t` coincide, so only `t >= 0` needs evaluation.
    folded: bool,
}

impl SampleSet {
    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn is_folded(&self) -> bool {
        self.folded
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// The samples that actually need evaluation.
    pub fn evaluation_samples(&self) -> Vec<Sample> {
        self.samples
            .iter()
            .filter(|s| !self.folded || s.t >= 0.0)
            .copied()
            .collect()
    }

    /// Builds a set from explicit values, tagged as refinement samples.
    pub fn from_values(values: &[f64], folded: bool) -> Self {
        let mut s = Self {
            samples: values
                .iter()
                .map(|&t| Sample {
                    t,
                    tag: SampleTag::Refinement,
                    anchor: None,
                })
                .collect(),
            anchors: Vec::new(),
            folded,
        };
        if folded {
            s.mirror();
        }
        s.normalize();
        s
    }

    /// Adds samples, keeping the set sorted and duplicate-free.
    pub fn extend(&mut self, extra: &SampleSet) {
        self.samples.extend_from_slice(&extra.samples);
        self.anchors.extend_from_slice(&extra.anchors);
        self.folded &= extra.folded;
        self.normalize();
    }

    fn mirror(&mut self) {
        let mirrored: Vec<Sample> = self
            .samples
            .iter()
            .filter(|s| s.t != 0.0)
            .map(|s| Sample {
                t: -s.t,
                tag: s.tag,
                anchor: s.anchor.map(|a| a.conj()),
            })
            .collect();
        self.samples.extend(mirrored);
    }

    fn normalize(&mut self) {
        // anchored samples win over others at the same location
        let rank = |tag: SampleTag| match tag {
            SampleTag::PoleAnchored => 0,
            SampleTag::Refinement => 1,
            SampleTag::FallbackGrid => 2,
        };
        self.samples
            .sort_by(|a, b| a.t.total_cmp(&b.t).then(rank(a.tag).cmp(&rank(b.tag))));
        self.samples
            .dedup_by(|b, a| (b.t - a.t).abs() <= 1e-12 * (1.0 + a.t.abs()));
    }

    /// Neighbourhood of `pole` in which a maximizer counts as attained near it.
    pub fn anchor_of(&self, pole: C64) -> Option<&Anchor> {
        self.anchors
            .iter()
            .filter(|a| (a.pole - pole).norm() <= 1e-9 * (1.0 + pole.norm()))
            .min_by(|a, b| a.distance.total_cmp(&b.distance))
    }
}

/// Default anchoring band for a pole set and curve: `5 d_min`, capped at the
/// pole spread but never below `1.5 d_min`.
pub fn default_band(poles: &PoleSet, curve: &OptimizationCurve) -> f64 {
    let d_min = poles
        .iter()
        .map(|p| curve_distance(p.value, curve))
        .fold(f64::INFINITY, f64::min);
    if !d_min.is_finite() {
        return 1.0;
    }
    let spread = poles.spread();
    let band = (BAND_FACTOR * d_min).min(if spread > 0.0 { spread } else { f64::INFINITY });
    band.max(BAND_FLOOR * d_min).max(f64::MIN_POSITIVE)
}

fn offsets(per_pole: usize) -> Vec<f64> {
    let m = per_pole.saturating_sub(1) / 2;
    match m {
        0 => Vec::new(),
        3 => ANCHOR_OFFSETS.to_vec(),
        1 => vec![1.0],
        _ => (0..m).map(|i| 0.1 * 10f64.powf(i as f64 / (m - 1) as f64)).collect(),
    }
}

/// The sampling set Ω for a pole set and curve.
///
/// Each pole closer than `band` to the curve contributes `per_pole` samples:
/// its projection and offsets of 0.1, 0.3 and 1 times its distance on both
/// sides. A fallback grid is always appended. For vertical lines the set is
/// mirrored about `t = 0` since the systems are real.
pub fn build_sample_set(poles: &PoleSet, curve: &OptimizationCurve, band: f64, per_pole: usize) -> SampleSet {
    let folded = curve.is_vertical();
    let mut samples = Vec::new();
    let mut anchors = Vec::new();
    let factors = offsets(per_pole);
    let max_factor = factors.iter().copied().fold(0.0, f64::max).max(1.0);
    for p in poles.iter() {
        let (t0, d) = curve.project(p.value);
        if d >= band {
            continue;
        }
        // keep anchored points off the pole itself
        let d_eff = d.max(1e-8 * (1.0 + p.value.norm()));
        let scale = d_eff / curve.speed(t0);
        anchors.push(Anchor {
            pole: p.value,
            t: t0,
            distance: d,
            reach: 2.0 * max_factor * scale,
        });
        let mut push = |t: f64| {
            let t = match curve.kind() {
                CurveKind::Generic { domain, .. } => t.clamp(domain.0, domain.1),
                CurveKind::Vertical { .. } => t,
            };
            samples.push(Sample {
                t,
                tag: SampleTag::PoleAnchored,
                anchor: Some(p.value),
            })
        };
        push(t0);
        for &f in &factors {
            push(t0 - f * scale);
            push(t0 + f * scale);
        }
    }
    match curve.kind() {
        CurveKind::Vertical { .. } => {
            let im_max = poles.iter().map(|p| p.value.im.abs()).fold(0.0, f64::max);
            let w_max = (1.25 * im_max).max(1.0);
            let w_min = 1e-3 * w_max;
            samples.push(Sample {
                t: 0.0,
                tag: SampleTag::FallbackGrid,
                anchor: None,
            });
            for i in 0..FALLBACK_POINTS {
                let w = w_min * (w_max / w_min).powf(i as f64 / (FALLBACK_POINTS - 1) as f64);
                samples.push(Sample {
                    t: w,
                    tag: SampleTag::FallbackGrid,
                    anchor: None,
                });
            }
        }
        CurveKind::Generic { domain, .. } => {
            let n = 2 * FALLBACK_POINTS;
            for i in 0..=n {
                samples.push(Sample {
                    t: domain.0 + (domain.1 - domain.0) * i as f64 / n as f64,
                    tag: SampleTag::FallbackGrid,
                    anchor: None,
                });
            }
        }
    }
    if folded {
        // conjugate anchors share the neighbourhood of their mirror images
        let extra: Vec<Anchor> = anchors
            .iter()
            .filter(|a| a.pole.im != 0.0)
            .map(|a| Anchor {
                pole: a.pole.conj(),
                t: -a.t,
                ..*a
            })
            .filter(|a| !anchors.iter().any(|b| (b.pole - a.pole).norm() <= 1e-12 * (1.0 + a.pole.norm())))
            .collect();
        anchors.extend(extra);
    }
    let mut set = SampleSet {
        samples,
        anchors,
        folded,
    };
    if folded {
        set.mirror();
    }
    set.normalize();
    set
}

/// Ω with the default band and density.
pub fn default_sample_set(poles: &PoleSet, curve: &OptimizationCurve) -> SampleSet {
    build_sample_set(poles, curve, default_band(poles, curve), DEFAULT_PER_POLE)
}

/// The sampled peak `max_k σ̄(G(γ(t_k)))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaValue {
    pub value: f64,
    pub argmax_t: f64,
    /// Anchored pole whose neighbourhood contains the maximizer.
    pub attained_near: Option<C64>,
}

/// `σ̄` at every evaluation sample of `omega`, in order.
pub fn sigma_profile(
    op: &OperatingPoint<'_>,
    curve: &OptimizationCurve,
    omega: &SampleSet,
) -> Result<Vec<(Sample, f64)>, SpectralError> {
    let pts = omega.evaluation_samples();
    pts.par_iter()
        .map(|smp| {
            let s = curve.point(smp.t);
            let g = match op.response(s) {
                Ok(r) => r.g,
                Err(ModelError::NearSingular { eigenvalue, .. }) => {
                    return Err(SpectralError::NearPole { t: smp.t, s, pole: eigenvalue })
                }
                Err(e) => return Err(e.into()),
            };
            Ok((*smp, sigma_max(&g)?))
        })
        .collect()
}

/// `Γ(K)` over the sample set, with the maximizer and the pole it sits next to.
pub fn gamma_of(
    op: &OperatingPoint<'_>,
    curve: &OptimizationCurve,
    omega: &SampleSet,
) -> Result<GammaValue, SpectralError> {
    let profile = sigma_profile(op, curve, omega)?;
    // first maximizer in parameter order keeps ties deterministic
    let (best, value) = profile
        .iter()
        .fold(None::<(Sample, f64)>, |acc, &(s, v)| match acc {
            Some((_, bv)) if bv >= v => acc,
            _ => Some((s, v)),
        })
        .ok_or(SpectralError::EmptySampleSet)?;
    Ok(GammaValue {
        value,
        argmax_t: best.t,
        attained_near: attained_near(omega, best),
    })
}

fn attained_near(omega: &SampleSet, best: Sample) -> Option<C64> {
    omega
        .anchors()
        .iter()
        .filter(|a| (best.t - a.t).abs() <= a.reach)
        .min_by(|a, b| {
            let da = (best.t - a.t).abs() / a.reach.max(f64::MIN_POSITIVE);
            let db = (best.t - b.t).abs() / b.reach.max(f64::MIN_POSITIVE);
            da.total_cmp(&db).then(a.distance.total_cmp(&b.distance))
        })
        .map(|a| a.pole)
        .or(best.anchor)
}
