//! Discrete Fourier analysis of binned encounter series.
//!
//! Component `k` of an `N`-bin series means "a pattern repeated `k` times over
//! the window", so its period is `N * bin_width / k`. The transform is
//! unnormalized and keeps the DC term; peak detection ignores it.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::trace::{bin_pair_series, BinMode, BinnedSeries, EncounterTrace, NodeId, TraceError};

/// Magnitudes at or below this fraction of the spectrum maximum are rounding
/// noise and never count as peaks.
const NOISE_FLOOR: f64 = 1e-9;

/// Relative tolerance under which two peak magnitudes rank as tied.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("series has {n} samples, at least 2 are required")]
    SeriesTooShort { n: usize },
    #[error("component k={k} is outside 1..={max} for N={n}")]
    InvalidComponent { k: usize, n: usize, max: usize },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// One-sided spectrum, `k = 0..=N/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    /// Phases in `(-pi, pi]`.
    pub phases: Vec<f64>,
    pub n: usize,
    pub bin_width: u64,
}

/// Direct DFT of a binned series.
pub fn dft(series: &BinnedSeries) -> Result<Spectrum, SpectrumError> {
    dft_with(series, Execution::default())
}

/// [`dft`] with an explicit execution mode. Components are independent, so
/// the parallel path splits over `k`.
pub fn dft_with(series: &BinnedSeries, exec: Execution) -> Result<Spectrum, SpectrumError> {
    let x = &series.values;
    let n = x.len();
    if n < 2 {
        return Err(SpectrumError::SeriesTooShort { n });
    }
    // twiddle[m] = exp(-2*pi*i*m/N); index k*t mod N exactly, so large k*t
    // never loses precision in the angle.
    let twiddle: Vec<(f64, f64)> = (0..n)
        .map(|m| {
            let angle = 2.0 * PI * m as f64 / n as f64;
            (angle.cos(), -angle.sin())
        })
        .collect();
    let half = n / 2;
    let bins = exec.map_range(half + 1, |k| {
        let (mut re, mut im) = (0.0, 0.0);
        let mut idx = 0usize;
        for &v in x {
            if v != 0.0 {
                let (c, s) = twiddle[idx];
                re += v * c;
                im += v * s;
            }
            idx += k;
            if idx >= n {
                idx -= n;
            }
        }
        (re.hypot(im), wrap_phase(im.atan2(re)))
    });
    let (magnitudes, phases) = bins.into_iter().unzip();
    Ok(Spectrum {
        magnitudes,
        phases,
        n,
        bin_width: series.bin_width,
    })
}

/// Maps `-pi` onto `pi` so phases lie in `(-pi, pi]`.
fn wrap_phase(p: f64) -> f64 {
    if p <= -PI {
        PI
    } else {
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakPolicy {
    /// Multiplier on the standard deviation of the non-DC magnitudes.
    pub std_multiplier: f64,
    pub max_peaks: usize,
}

impl Default for PeakPolicy {
    fn default() -> Self {
        PeakPolicy {
            std_multiplier: 2.0,
            max_peaks: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub k: usize,
    pub magnitude: f64,
    pub phase: f64,
}

/// Peaks ordered by descending magnitude, ties by ascending `k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakSet {
    pub peaks: Vec<Peak>,
}

impl PeakSet {
    pub fn is_empty(&self) -> bool {
        self.peaks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.peaks.len()
    }

    pub fn ks(&self) -> Vec<usize> {
        self.peaks.iter().map(|p| p.k).collect()
    }
}

/// Strict local maxima of the non-DC magnitudes that reach
/// `mean + c * std` (population std of the non-DC magnitudes).
pub fn detect_peaks(spec: &Spectrum, policy: &PeakPolicy) -> PeakSet {
    let m = &spec.magnitudes;
    if m.len() < 3 || policy.max_peaks == 0 {
        return PeakSet::default();
    }
    let non_dc = &m[1..];
    let count = non_dc.len() as f64;
    let mean = non_dc.iter().sum::<f64>() / count;
    let var = non_dc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    let threshold = mean + policy.std_multiplier * var.sqrt();
    let floor = NOISE_FLOOR * m.iter().cloned().fold(0.0, f64::max);

    let last = m.len() - 1;
    let mut peaks: Vec<Peak> = (1..=last)
        .filter(|&k| {
            let left = k == 1 || m[k] > m[k - 1];
            let right = k == last || m[k] > m[k + 1];
            left && right && m[k] > floor && m[k] >= threshold
        })
        .map(|k| Peak {
            k,
            magnitude: m[k],
            phase: spec.phases[k],
        })
        .collect();

    peaks.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude).then(a.k.cmp(&b.k)));
    // Re-order near-equal magnitudes by k: equal harmonics differ only by
    // rounding and must rank deterministically.
    let mut start = 0;
    while start < peaks.len() {
        let top = peaks[start].magnitude;
        let mut end = start + 1;
        while end < peaks.len() && top - peaks[end].magnitude <= TIE_TOLERANCE * top {
            end += 1;
        }
        peaks[start..end].sort_by_key(|p| p.k);
        start = end;
    }
    peaks.truncate(policy.max_peaks);
    PeakSet { peaks }
}

/// A periodic pattern recovered from a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicComponent {
    #[serde(rename = "period_s")]
    pub period: f64,
    /// Relative to the strongest component (which has magnitude 1).
    pub magnitude: f64,
    pub phase: f64,
}

/// Converts peaks to `(period, normalized magnitude, phase)` triples.
pub fn to_periods(peaks: &PeakSet, n: usize, bin_width: u64) -> Result<Vec<PeriodicComponent>, SpectrumError> {
    let max = n / 2;
    if let Some(p) = peaks.peaks.iter().find(|p| p.k == 0 || p.k > max) {
        return Err(SpectrumError::InvalidComponent { k: p.k, n, max });
    }
    let top = peaks.peaks.iter().map(|p| p.magnitude).fold(0.0, f64::max);
    Ok(peaks
        .peaks
        .iter()
        .map(|p| PeriodicComponent {
            period: (n as f64 * bin_width as f64) / p.k as f64,
            magnitude: if top > 0.0 { p.magnitude / top } else { 0.0 },
            phase: p.phase,
        })
        .collect())
}

/// Binning plus peak policy shared by `analyze`, `fit` and fidelity checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumConfig {
    pub bin_width: u64,
    pub mode: BinMode,
    pub policy: PeakPolicy,
}

impl SpectrumConfig {
    pub fn new(bin_width: u64) -> Self {
        SpectrumConfig {
            bin_width,
            mode: BinMode::Indicator,
            policy: PeakPolicy::default(),
        }
    }
}

impl Default for SpectrumConfig {
    /// Day-scale bins.
    fn default() -> Self {
        SpectrumConfig::new(86_400)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub k: usize,
    pub period_s: f64,
    pub magnitude: f64,
    pub phase: f64,
}

/// Per-pair output of the `analyze` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub pair: [NodeId; 2],
    pub n: usize,
    pub bin_width_s: u64,
    pub peaks: Vec<PeakReport>,
}

/// bin -> dft -> detect_peaks for one series.
pub fn analyze_series(series: &BinnedSeries, policy: &PeakPolicy) -> Result<(Spectrum, PeakSet), SpectrumError> {
    let spec = dft_with(series, Execution::Sequential)?;
    let peaks = detect_peaks(&spec, policy);
    Ok((spec, peaks))
}

pub fn analyze_pair(
    trace: &EncounterTrace,
    pair: (&NodeId, &NodeId),
    cfg: &SpectrumConfig,
) -> Result<PairAnalysis, SpectrumError> {
    let series = bin_pair_series(trace, pair, cfg.bin_width, cfg.mode)?;
    let (spec, peaks) = analyze_series(&series, &cfg.policy)?;
    let periods = to_periods(&peaks, spec.n, spec.bin_width)?;
    let (a, b) = if pair.0 <= pair.1 {
        (pair.0, pair.1)
    } else {
        (pair.1, pair.0)
    };
    Ok(PairAnalysis {
        pair: [a.clone(), b.clone()],
        n: spec.n,
        bin_width_s: cfg.bin_width,
        peaks: peaks
            .peaks
            .iter()
            .zip(periods)
            .map(|(p, c)| PeakReport {
                k: p.k,
                period_s: c.period,
                magnitude: c.magnitude,
                phase: c.phase,
            })
            .collect(),
    })
}

/// Analyzes every pair with at least one encounter, in canonical pair order.
pub fn analyze_trace(
    trace: &EncounterTrace,
    cfg: &SpectrumConfig,
    exec: Execution,
) -> Result<Vec<PairAnalysis>, SpectrumError> {
    let pairs: Vec<(NodeId, NodeId)> = trace.pairs().into_keys().collect();
    exec.map(&pairs, |(a, b)| analyze_pair(trace, (a, b), cfg))
        .into_iter()
        .collect()
}
