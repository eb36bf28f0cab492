//! Seeded synthetic accelerometer activities, base-population datasets, user
//! deployment streams and the deployment simulator with a truthful user.
//!
//! Every window is synthesized independently from an [`ActivityProfile`]:
//! per axis, a gravity offset plus sinusoid, impact-burst and orientation-ramp
//! components, plus Gaussian noise. Bursts and ramps of one window share a
//! single event time, as an impact and the resulting posture change would.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detector::FallAlarm;
use crate::error::{Error, Result};
use crate::seeds::{self, streams};
use crate::window::{
    AccelWindow, Dataset, FeedbackSample, Label, Provenance, Source, WindowMeta, SAMPLE_PERIOD_MS, WINDOW_LEN,
    WINDOW_OVERLAP,
};

/// Inclusive `[lo, hi]` range sampled uniformly.
pub type Range = (f64, f64);

fn draw(rng: &mut ChaCha8Rng, (lo, hi): Range) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Waveform {
    /// `A·sin(2πft + φ₀ + phase)`; `phase` fixes the relation between axes.
    Sinusoid { amplitude: Range, phase: f64 },
    /// Gaussian impact pulse centred on the event time.
    Burst { amplitude: Range },
    /// Smooth step of height `delta` at the event time (posture change).
    Ramp { delta: Range },
}

/// One axis: a constant gravity component plus zero or more waveforms.
/// No waveforms means a constant signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisProfile {
    pub offset: f64,
    #[serde(default)]
    pub waveforms: Vec<Waveform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityProfile {
    pub activity: String,
    pub label: Label,
    pub axes: [AxisProfile; 3],
    /// Sinusoid frequency in Hz.
    pub frequency: Range,
    /// Standard deviation of bursts and width of ramps, in samples.
    pub event_width: Range,
    pub noise_std: f64,
    /// Standard deviation of per-window orientation jitter added to offsets.
    pub offset_jitter: f64,
}

impl ActivityProfile {
    pub fn validate(&self) -> Result<()> {
        let bad_range = |r: &Range| !(r.0.is_finite() && r.1.is_finite() && r.0 <= r.1);
        let name = &self.activity;
        if bad_range(&self.frequency) || bad_range(&self.event_width) {
            return Err(Error::config(format!("{name}: empty frequency or event-width range")));
        }
        if !(self.noise_std >= 0.0) || !(self.offset_jitter >= 0.0) {
            return Err(Error::config(format!("{name}: noise must be non-negative")));
        }
        for axis in &self.axes {
            for w in &axis.waveforms {
                let r = match w {
                    Waveform::Sinusoid { amplitude, .. } | Waveform::Burst { amplitude } => amplitude,
                    Waveform::Ramp { delta } => delta,
                };
                if bad_range(r) {
                    return Err(Error::config(format!("{name}: empty amplitude range")));
                }
            }
        }
        Ok(())
    }

    /// Synthesizes `len` samples. `intensity` scales sinusoid and burst amplitudes,
    /// `posture` scales ramps; `burst_override` sets the peak burst magnitude and
    /// the event width.
    fn synthesize(
        &self,
        rng: &mut ChaCha8Rng,
        len: usize,
        intensity: f64,
        posture: f64,
        burst_override: Option<&BurstParams>,
    ) -> [Vec<f64>; 3] {
        let dt = SAMPLE_PERIOD_MS as f64 / 1000.0;
        let freq = draw(rng, self.frequency);
        let phase0 = rng.random_range(0.0..2.0 * PI);
        let center = rng.random_range(0.3..0.7) * len as f64;
        let width = match burst_override {
            Some(b) => draw(rng, b.duration),
            None => draw(rng, self.event_width),
        }
        .max(0.5);
        let noise = Normal::new(0.0, self.noise_std.max(0.0)).expect("valid normal");
        let jitter = Normal::new(0.0, self.offset_jitter.max(0.0)).expect("valid normal");
        // Burst amplitudes are drawn up front so an override can rescale the
        // largest one to the requested peak while keeping the axis pattern.
        let mut bursts: Vec<f64> = Vec::new();
        for axis in &self.axes {
            for w in &axis.waveforms {
                if let Waveform::Burst { amplitude } = w {
                    bursts.push(draw(rng, *amplitude) * intensity);
                }
            }
        }
        if let Some(b) = burst_override {
            let peak = bursts.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            if peak > 0.0 {
                let k = draw(rng, b.amplitude).abs() / peak;
                bursts.iter_mut().for_each(|a| *a *= k);
            }
        }
        let mut bursts = bursts.into_iter();
        let mut out: [Vec<f64>; 3] = Default::default();
        for (axis, signal) in self.axes.iter().zip(out.iter_mut()) {
            let offset = axis.offset + jitter.sample(rng);
            let mut s = vec![offset; len];
            for w in &axis.waveforms {
                match w {
                    Waveform::Sinusoid { amplitude, phase } => {
                        let a = draw(rng, *amplitude) * intensity;
                        for (i, v) in s.iter_mut().enumerate() {
                            *v += a * (2.0 * PI * freq * i as f64 * dt + phase0 + phase).sin();
                        }
                    }
                    Waveform::Burst { .. } => {
                        let a = bursts.next().expect("one amplitude per burst");
                        for (i, v) in s.iter_mut().enumerate() {
                            let u = (i as f64 - center) / width;
                            *v += a * (-0.5 * u * u).exp();
                        }
                    }
                    Waveform::Ramp { delta } => {
                        let d = draw(rng, *delta) * posture;
                        for (i, v) in s.iter_mut().enumerate() {
                            let u = (i as f64 - center) / width;
                            *v += d / (1.0 + (-u).exp());
                        }
                    }
                }
            }
            for v in s.iter_mut() {
                *v += noise.sample(rng);
            }
            *signal = s;
        }
        out
    }
}

/// Low-amplitude, high-frequency vibration carried by fall windows (impact ringing).
const VIBRATION: Range = (1.0, 1.0);
const VIBRATION_HZ: Range = (9.0, 12.0);
const SWAY: Range = (0.28, 0.28);

fn sin(amplitude: Range, phase: f64) -> Waveform {
    Waveform::Sinusoid { amplitude, phase }
}

fn burst(amplitude: Range) -> Waveform {
    Waveform::Burst { amplitude }
}

fn ramp(delta: Range) -> Waveform {
    Waveform::Ramp { delta }
}

fn axis(offset: f64, waveforms: Vec<Waveform>) -> AxisProfile {
    AxisProfile { offset, waveforms }
}

#[allow(clippy::too_many_arguments)]
fn profile(
    activity: &str,
    label: Label,
    axes: [AxisProfile; 3],
    frequency: Range,
    event_width: Range,
    noise_std: f64,
    offset_jitter: f64,
) -> ActivityProfile {
    ActivityProfile {
        activity: activity.to_string(),
        label,
        axes,
        frequency,
        event_width,
        noise_std,
        offset_jitter,
    }
}

/// Named activity profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub profiles: Vec<ActivityProfile>,
}

impl Catalog {
    /// Nine everyday activities and three fall directions.
    pub fn standard() -> Self {
        use Label::{Adl, Fall};
        let profiles = vec![
            profile(
                "walking",
                Adl,
                [
                    axis(0.0, vec![sin((1.5, 3.0), 0.0)]),
                    axis(-9.0, vec![sin((1.0, 2.0), PI / 2.0)]),
                    axis(3.0, vec![sin((0.5, 1.2), PI)]),
                ],
                (1.6, 2.2),
                (3.0, 5.0),
                0.3,
                0.4,
            ),
            profile(
                "standing",
                Adl,
                [
                    axis(1.0, vec![sin((0.05, 0.2), 0.0)]),
                    axis(-9.5, vec![sin((0.05, 0.2), PI / 3.0)]),
                    axis(1.5, vec![sin((0.05, 0.2), 2.0 * PI / 3.0)]),
                ],
                (0.1, 0.3),
                (3.0, 5.0),
                0.1,
                0.3,
            ),
            profile(
                "sitting_down",
                Adl,
                [
                    axis(0.5, vec![burst((0.5, 1.5))]),
                    axis(-9.0, vec![ramp((3.0, 5.0)), burst((1.0, 3.0))]),
                    axis(3.0, vec![ramp((-5.0, -3.0))]),
                ],
                (0.5, 1.0),
                (3.0, 6.0),
                0.3,
                0.4,
            ),
            profile(
                "lying_down",
                Adl,
                [
                    axis(0.5, vec![burst((0.45, 1.5)), sin(SWAY, 0.0)]),
                    axis(-9.0, vec![ramp((7.0, 9.0)), burst((1.05, 3.0)), sin(SWAY, 0.0)]),
                    axis(3.0, vec![ramp((-12.0, -9.0)), burst((-2.4, -0.9)), sin(SWAY, 0.0)]),
                ],
                (0.5, 1.0),
                (2.0, 4.0),
                0.6,
                0.4,
            ),
            profile(
                "waving_hands",
                Adl,
                [
                    axis(2.0, vec![sin((3.0, 6.0), 0.0)]),
                    axis(-6.0, vec![sin((2.0, 4.0), PI)]),
                    axis(6.0, vec![sin((0.5, 1.0), PI / 2.0)]),
                ],
                (1.5, 2.5),
                (3.0, 5.0),
                0.4,
                0.4,
            ),
            profile(
                "drinking_water",
                Adl,
                [
                    axis(0.0, vec![sin((3.0, 5.0), 0.0)]),
                    axis(-8.0, vec![sin((1.0, 2.0), PI)]),
                    axis(4.0, vec![sin((2.0, 4.0), PI / 2.0)]),
                ],
                (0.25, 0.45),
                (3.0, 5.0),
                0.2,
                0.4,
            ),
            profile(
                "wearing_jacket",
                Adl,
                [
                    axis(1.0, vec![sin((2.0, 4.0), 0.0)]),
                    axis(-7.0, vec![sin((2.0, 4.0), 2.0 * PI / 3.0)]),
                    axis(5.0, vec![sin((2.0, 4.0), 4.0 * PI / 3.0)]),
                ],
                (0.6, 1.0),
                (3.0, 5.0),
                0.5,
                0.4,
            ),
            profile(
                "washing_hands",
                Adl,
                [
                    axis(3.0, vec![sin((0.8, 1.5), 0.0)]),
                    axis(-5.0, vec![sin((0.8, 1.5), 0.0)]),
                    axis(7.0, vec![]),
                ],
                (3.0, 4.0),
                (3.0, 5.0),
                0.3,
                0.4,
            ),
            profile(
                "brushing_teeth",
                Adl,
                [
                    axis(-2.0, vec![sin((1.0, 2.0), 0.0)]),
                    axis(-4.0, vec![]),
                    axis(8.0, vec![sin((1.0, 2.0), PI)]),
                ],
                (3.5, 4.5),
                (3.0, 5.0),
                0.3,
                0.4,
            ),
            profile(
                "fall_forward",
                Fall,
                [
                    axis(0.0, vec![ramp((6.0, 9.0)), burst((12.0, 20.0)), sin(VIBRATION, 0.0)]),
                    axis(-9.5, vec![ramp((7.0, 9.0)), burst((-20.0, -12.0)), sin(VIBRATION, 0.0)]),
                    axis(1.5, vec![burst((8.0, 14.0)), sin(VIBRATION, 0.0)]),
                ],
                VIBRATION_HZ,
                (2.0, 4.0),
                0.6,
                0.4,
            ),
            profile(
                "fall_backward",
                Fall,
                [
                    axis(0.5, vec![burst((2.0, 10.0)), sin(VIBRATION, 0.0)]),
                    axis(-9.0, vec![ramp((7.0, 9.0)), burst((5.0, 20.0)), sin(VIBRATION, 0.0)]),
                    axis(3.0, vec![ramp((-12.0, -9.0)), burst((-16.0, -4.0)), sin(VIBRATION, 0.0)]),
                ],
                VIBRATION_HZ,
                (2.0, 4.0),
                0.6,
                0.4,
            ),
            profile(
                "fall_lateral",
                Fall,
                [
                    axis(0.5, vec![ramp((-10.0, -8.0)), burst((-20.0, -12.0)), sin(VIBRATION, 0.0)]),
                    axis(-9.0, vec![ramp((7.0, 9.0)), burst((8.0, 14.0)), sin(VIBRATION, 0.0)]),
                    axis(3.0, vec![burst((6.0, 10.0)), sin(VIBRATION, 0.0)]),
                ],
                VIBRATION_HZ,
                (2.0, 4.0),
                0.6,
                0.4,
            ),
        ];
        Self { profiles }
    }

    pub fn get(&self, activity: &str) -> Option<&ActivityProfile> {
        self.profiles.iter().find(|p| p.activity == activity)
    }

    pub fn activities(&self, label: Label) -> Vec<String> {
        self.profiles
            .iter()
            .filter(|p| p.label == label)
            .map(|p| p.activity.clone())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.profiles.iter().enumerate() {
            p.validate()?;
            if self.profiles[..i].iter().any(|q| q.activity == p.activity) {
                return Err(Error::config(format!("duplicate activity `{}`", p.activity)));
            }
        }
        Ok(())
    }

    fn require(&self, activity: &str, label: Label) -> Result<&ActivityProfile> {
        let p = self
            .get(activity)
            .ok_or_else(|| Error::config(format!("unknown activity `{activity}`")))?;
        if p.label != label {
            return Err(Error::config(format!(
                "activity `{activity}` is labeled {}, expected {}",
                p.label.as_str(),
                label.as_str()
            )));
        }
        Ok(p)
    }
}

/// Peak magnitude and width of fall impacts. The fall profile's bursts are
/// rescaled so that the largest equals the drawn peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BurstParams {
    pub amplitude: Range,
    /// Burst width in samples.
    pub duration: Range,
}

/// A wearer's deployment: rounds of consecutive prediction windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamSpec {
    pub seed: u64,
    pub subject_id: String,
    pub rounds: usize,
    pub windows_per_round: usize,
    /// ADL activity → probability; must sum to 1.
    pub activity_mix: BTreeMap<String, f64>,
    /// Probability that a window is a fall.
    pub fall_probability: f64,
    /// Fall activities, drawn uniformly when a fall occurs.
    pub fall_activities: Vec<String>,
    pub fall_burst: Option<BurstParams>,
    /// Per-activity amplitude multiplier (personal movement style); default 1.
    pub intensity: BTreeMap<String, f64>,
    /// Per-activity multiplier on posture changes (ramps); default 1.
    pub posture: BTreeMap<String, f64>,
}

impl Default for StreamSpec {
    fn default() -> Self {
        let catalog = Catalog::standard();
        let adls = catalog.activities(Label::Adl);
        let p = 1.0 / adls.len() as f64;
        Self {
            seed: 42,
            subject_id: "user".into(),
            rounds: 6,
            windows_per_round: 200,
            activity_mix: adls.into_iter().map(|a| (a, p)).collect(),
            fall_probability: 0.02,
            fall_activities: catalog.activities(Label::Fall),
            fall_burst: None,
            intensity: BTreeMap::new(),
            posture: BTreeMap::new(),
        }
    }
}

impl StreamSpec {
    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("rounds must be at least 1"));
        }
        let total: f64 = self.activity_mix.values().sum();
        if self.activity_mix.is_empty() || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("activity mix must sum to 1, sums to {total}")));
        }
        if self.activity_mix.values().any(|&p| !(p >= 0.0)) {
            return Err(Error::config("activity mix probabilities must be non-negative"));
        }
        for a in self.activity_mix.keys() {
            catalog.require(a, Label::Adl)?;
        }
        if !(0.0..=1.0).contains(&self.fall_probability) {
            return Err(Error::config("fall probability must lie in [0, 1]"));
        }
        if self.fall_probability > 0.0 && self.fall_activities.is_empty() {
            return Err(Error::config("falls requested but no fall activities given"));
        }
        for a in &self.fall_activities {
            catalog.require(a, Label::Fall)?;
        }
        if let Some(b) = &self.fall_burst {
            if !(b.amplitude.0 <= b.amplitude.1 && b.duration.0 <= b.duration.1 && b.duration.0 > 0.0) {
                return Err(Error::config("fall burst ranges must be non-empty with positive duration"));
            }
        }
        if self.intensity.values().any(|&k| !(k > 0.0)) {
            return Err(Error::config("intensity multipliers must be positive"));
        }
        if self.posture.values().any(|&k| !(k > 0.0)) {
            return Err(Error::config("posture multipliers must be positive"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("stream spec: {e}")))
    }
}

fn window_t0(index: usize) -> i64 {
    (index * (WINDOW_LEN - WINDOW_OVERLAP)) as i64 * SAMPLE_PERIOD_MS
}

fn make_window(
    rng: &mut ChaCha8Rng,
    profile: &ActivityProfile,
    subject_id: &str,
    source: Source,
    t0_ms: i64,
    intensity: f64,
    posture: f64,
    burst: Option<&BurstParams>,
) -> Result<AccelWindow> {
    let [x, y, z] = profile.synthesize(rng, WINDOW_LEN, intensity, posture, burst);
    let meta = WindowMeta {
        subject_id: subject_id.to_string(),
        label: profile.label,
        activity: Some(profile.activity.clone()),
        source,
    };
    AccelWindow::new(meta, t0_ms, x, y, z)
}

/// Generates `spec.rounds` groups of `spec.windows_per_round` labeled windows.
pub fn generate_stream(spec: &StreamSpec) -> Result<Vec<Vec<AccelWindow>>> {
    generate_stream_with(spec, &Catalog::standard())
}

pub fn generate_stream_with(spec: &StreamSpec, catalog: &Catalog) -> Result<Vec<Vec<AccelWindow>>> {
    generate(spec, catalog, streams::DEPLOYMENT, 0)
}

/// Held-out windows from the same wearer: same style and seed as `spec`, but an
/// independent random stream, its own fall rate, and timestamps after the deployment.
pub fn generate_evaluation(
    spec: &StreamSpec,
    catalog: &Catalog,
    windows: usize,
    fall_probability: f64,
) -> Result<Vec<AccelWindow>> {
    let eval = StreamSpec { rounds: 1, windows_per_round: windows, fall_probability, ..spec.clone() };
    let first = spec.rounds * spec.windows_per_round;
    Ok(generate(&eval, catalog, streams::EVALUATION, first)?.pop().unwrap_or_default())
}

fn generate(spec: &StreamSpec, catalog: &Catalog, stream: u64, first_index: usize) -> Result<Vec<Vec<AccelWindow>>> {
    catalog.validate()?;
    spec.validate(catalog)?;
    let mut rng = seeds::rng(spec.seed, stream);
    let mix: Vec<(&ActivityProfile, f64)> = spec
        .activity_mix
        .iter()
        .map(|(a, &p)| Ok((catalog.require(a, Label::Adl)?, p)))
        .collect::<Result<_>>()?;
    let falls: Vec<&ActivityProfile> = spec
        .fall_activities
        .iter()
        .map(|a| catalog.require(a, Label::Fall))
        .collect::<Result<_>>()?;
    let mut rounds = Vec::with_capacity(spec.rounds);
    let mut index = first_index;
    for _ in 0..spec.rounds {
        let mut windows = Vec::with_capacity(spec.windows_per_round);
        for _ in 0..spec.windows_per_round {
            let is_fall = rng.random::<f64>() < spec.fall_probability;
            let (profile, burst) = if is_fall {
                (falls[rng.random_range(0..falls.len())], spec.fall_burst.as_ref())
            } else {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = mix[mix.len() - 1].0;
                for &(p, w) in &mix {
                    acc += w;
                    if u < acc {
                        chosen = p;
                        break;
                    }
                }
                (chosen, None)
            };
            let k = spec.intensity.get(&profile.activity).copied().unwrap_or(1.0);
            let q = spec.posture.get(&profile.activity).copied().unwrap_or(1.0);
            windows.push(make_window(
                &mut rng,
                profile,
                &spec.subject_id,
                Source::Feedback,
                window_t0(index),
                k,
                q,
                burst,
            )?);
            index += 1;
        }
        rounds.push(windows);
    }
    Ok(rounds)
}

/// A recorded multi-subject dataset in which every subject performs every activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PopulationSpec {
    pub seed: u64,
    pub subjects: usize,
    pub windows_per_adl: usize,
    pub windows_per_fall: usize,
    /// Each subject's amplitude multiplier is drawn from `1 ± intensity_jitter`.
    pub intensity_jitter: f64,
    /// Activities to record; empty means the whole catalog.
    pub activities: Vec<String>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            subjects: 20,
            windows_per_adl: 4,
            windows_per_fall: 6,
            intensity_jitter: 0.15,
            activities: Vec::new(),
        }
    }
}

pub fn generate_population(spec: &PopulationSpec, catalog: &Catalog) -> Result<Dataset> {
    catalog.validate()?;
    if spec.subjects == 0 {
        return Err(Error::config("population needs at least one subject"));
    }
    if !(0.0..1.0).contains(&spec.intensity_jitter) {
        return Err(Error::config("intensity jitter must lie in [0, 1)"));
    }
    let profiles: Vec<&ActivityProfile> = if spec.activities.is_empty() {
        catalog.profiles.iter().collect()
    } else {
        spec.activities
            .iter()
            .map(|a| catalog.get(a).ok_or_else(|| Error::config(format!("unknown activity `{a}`"))))
            .collect::<Result<_>>()?
    };
    let mut rng = seeds::rng(spec.seed, streams::POPULATION);
    let mut windows = Vec::new();
    for s in 0..spec.subjects {
        let subject = format!("s{:02}", s + 1);
        let style = 1.0 + draw(&mut rng, (-spec.intensity_jitter, spec.intensity_jitter));
        let mut index = 0;
        for p in &profiles {
            let n = match p.label {
                Label::Adl => spec.windows_per_adl,
                Label::Fall => spec.windows_per_fall,
            };
            for _ in 0..n {
                windows.push(make_window(&mut rng, p, &subject, Source::BaseDataset, window_t0(index), style, 1.0, None)?);
                index += 1;
            }
        }
    }
    Dataset::new(windows, Provenance::Original)
}

/// Runs the detector over one round; alerted windows become feedback with
/// the truthful verdict, the rest are discarded.
pub fn simulate_round(detector: &impl FallAlarm, windows: &[AccelWindow], round: u32) -> Result<Vec<FeedbackSample>> {
    let alerts = detector.alerts(windows)?;
    windows
        .iter()
        .zip(alerts)
        .filter(|(_, alert)| *alert)
        .map(|(w, _)| FeedbackSample::from_oracle(w.clone(), round))
        .collect()
}

/// Simulated deployment over several rounds (round numbers start at 1).
pub fn simulate_deployment(detector: &impl FallAlarm, rounds: &[Vec<AccelWindow>]) -> Result<Vec<Vec<FeedbackSample>>> {
    rounds
        .iter()
        .enumerate()
        .map(|(r, ws)| simulate_round(detector, ws, r as u32 + 1))
        .collect()
}
