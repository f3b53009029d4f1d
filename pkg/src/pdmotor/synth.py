"""Seeded synthetic patient generator.

Stands in for the private clinical corpus: each patient is a profile
(state mix, tremor frequency, movement scales, idiosyncrasy factors) and
a seed, expanded deterministically into labeled one-minute windows.

State runs are block-structured with geometric lengths (memoryless, so
the fraction of consecutive same-state minute triples is directly set by
the mean run length). Minute rendering by state:

* OFF: still baseline plus sinusoidal tremor bursts at the patient's
  tremor frequency (4-6 Hz) with occasional spikes.
* ON: piecewise-constant arm pose with smooth sigmoid transitions and
  gentle voluntary movement; stable holds between changes.
* DYS: sustained band-limited irregular fluctuations, no stable holds.

A configurable fraction of minutes in every state is rendered near-still
(no-motion), and a configurable fraction is rendered ambiguously (weak or
state-atypical movement) to control class confusability. Per-patient
amplitude gain, sensor bias offset, and wear orientation model
inter-patient variability.
"""

from dataclasses import dataclass, field

import numpy as np

from .dataset import PatientRecord
from .preprocess import RawStream, SensorWindow, write_labels_csv, write_stream_csv
from .states import DYS, OFF, ON

FS = 60.0
N = 3600  # samples per minute


@dataclass
class SynthProfile:
    """Everything that determines one synthetic patient."""

    patient_id: str
    state_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    tremor_freq: float = 5.0          # Hz, rest tremor band is 4-6
    tremor_amp: float = 0.12          # G
    dyskinesia_scale: float = 0.25    # G
    dyskinesia_band: float = 2.0      # Hz, center of the fluctuation band
    pose_change_rate: float = 3.0     # per minute, ON state
    on_move_amp: float = 0.10         # G, voluntary-movement scale
    amplitude_gain: float = 1.0       # per-patient idiosyncrasy multiplier
    bias_offset: tuple[float, float, float] = (0.0, 0.0, 0.0)  # G, sensor bias
    noise_scale: float = 0.025        # G, ambient noise during motion minutes
    no_motion_noise: float = 0.004    # G, noise during no-motion minutes
    mean_run_minutes: float = 22.5    # geometric state-run length
    no_motion_fraction: float = 0.1
    ambiguity: float = 0.25           # fraction of minutes rendered confusably
    minute_variability: float = 0.3   # lognormal sigma of per-minute amplitude
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.state_mix) - 1.0) > 1e-9:
            raise ValueError(f"state_mix must sum to 1, got {self.state_mix}")
        if not (4.0 <= self.tremor_freq <= 6.0):
            raise ValueError(f"tremor_freq must be in [4, 6] Hz, got {self.tremor_freq}")
        if self.mean_run_minutes < 1:
            raise ValueError("mean_run_minutes must be >= 1")


def _unit(v):
    return v / np.linalg.norm(v)


def _random_unit(rng):
    return _unit(rng.normal(size=3))


def _tilted_unit(rng, g, min_dot=0.35, max_dot=0.9):
    """Unit direction with a guaranteed component along gravity, so the
    movement shows up in the acceleration magnitude."""
    w = rng.normal(size=3)
    w = w - (w @ g) * g
    w = _unit(w)
    dot = rng.uniform(min_dot, max_dot) * rng.choice([-1.0, 1.0])
    return _unit(dot * g + np.sqrt(1 - dot * dot) * w)


def _band_noise(rng, n, lo, hi, fs=FS):
    """Unit-RMS noise with spectral support limited to [lo, hi] Hz."""
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    band = (freqs >= lo) & (freqs <= hi)
    spec = np.zeros(freqs.size, dtype=complex)
    k = int(band.sum())
    if k == 0:
        return np.zeros(n)
    spec[band] = rng.normal(size=k) + 1j * rng.normal(size=k)
    sig = np.fft.irfft(spec, n)
    rms = sig.std()
    return sig / rms if rms > 0 else sig


def _burst_envelope(n, center, dur, ramp_frac=0.25):
    """Raised-cosine on/off envelope centered at `center` samples."""
    t = np.arange(n)
    half = dur / 2
    ramp = max(1.0, dur * ramp_frac)
    dist = np.abs(t - center)
    env = np.clip((half - dist) / ramp + 1.0, 0.0, 1.0)
    return env * (env > 0)


def _state_sequence(rng, minutes, mix, mean_run):
    labels = []
    mix = np.asarray(mix, dtype=float)
    prev = None
    while len(labels) < minutes:
        probs = mix.copy()
        if prev is not None:
            probs[prev] = 0.0
        total = probs.sum()
        if total <= 0:
            state = prev if prev is not None else int(np.argmax(mix))
            labels.extend([state] * (minutes - len(labels)))
            break
        state = int(rng.choice(3, p=probs / total))
        run = int(rng.geometric(1.0 / mean_run))
        labels.extend([state] * run)
        prev = state
    return labels[:minutes]


def _off_minute(rng, p: SynthProfile, gravity, ambiguous):
    sig = np.tile(gravity, (N, 1))
    amp = p.tremor_amp * p.amplitude_gain * rng.lognormal(0.0, p.minute_variability)
    n_bursts = int(rng.integers(1, 4))
    duty_scale = 1.0
    if ambiguous:
        amp *= 0.3
        n_bursts = 1
        duty_scale = 0.35
    for _ in range(n_bursts):
        dur = rng.uniform(5.0, 22.0) * FS * duty_scale
        center = rng.uniform(0.1, 0.9) * N
        env = _burst_envelope(N, center, dur)
        freq = p.tremor_freq + rng.normal(0.0, 0.15)
        phase = rng.uniform(0.0, 2 * np.pi)
        t = np.arange(N) / FS
        tremor = amp * env * np.sin(2 * np.pi * freq * t + phase)
        sig += tremor[:, None] * _tilted_unit(rng, gravity)
    # occasional sharp spikes, a second OFF cue
    for _ in range(int(rng.integers(0, 3))):
        center = rng.uniform(0.05, 0.95) * N
        env = _burst_envelope(N, center, 0.4 * FS, ramp_frac=0.5)
        sig += (2.0 * amp * env)[:, None] * _tilted_unit(rng, gravity)
    return sig


def _pose_path(rng, gravity, n_changes):
    """Piecewise-constant orientation with smooth sigmoid blends; returns
    the unit-orientation path and the transition centers (samples)."""
    centers = np.sort(rng.uniform(0.08, 0.92, size=n_changes)) * N
    orientations = [gravity]
    for _ in range(n_changes):
        orientations.append(_unit(orientations[-1] + rng.normal(scale=0.45, size=3)))
    t = np.arange(N)
    path = np.tile(orientations[0], (N, 1))
    width = 0.35 * FS  # ~1.4 s transition (sigmoid 10-90% rise)
    for i, c in enumerate(centers):
        w = 1.0 / (1.0 + np.exp(-(t - c) / width))
        path = path * (1 - w[:, None]) + orientations[i + 1][None, :] * w[:, None]
    path /= np.linalg.norm(path, axis=1, keepdims=True)
    return path, centers


def _on_minute(rng, p: SynthProfile, gravity, ambiguous):
    n_changes = max(1, int(rng.poisson(p.pose_change_rate)))
    path, centers = _pose_path(rng, gravity, n_changes)
    sig = path.copy()
    move = p.on_move_amp * p.amplitude_gain * rng.lognormal(0.0, p.minute_variability)
    t = np.arange(N)
    # moving the arm accelerates it: bump at each pose transition
    for c in centers:
        env = np.exp(-0.5 * ((t - c) / (0.6 * FS)) ** 2)
        sig += (1.6 * move * env)[:, None] * _tilted_unit(rng, gravity)
    # gentle sustained voluntary movement
    sig += (move * _band_noise(rng, N, 0.2, 0.9))[:, None] * _tilted_unit(rng, gravity)
    if ambiguous:
        # fast voluntary activity that mimics dyskinetic fluctuation
        dur = rng.uniform(8.0, 20.0) * FS
        center = rng.uniform(0.2, 0.8) * N
        env = _burst_envelope(N, center, dur)
        shake = 0.7 * p.dyskinesia_scale * p.amplitude_gain * _band_noise(rng, N, 1.8, 3.8)
        sig += (env * shake)[:, None] * _tilted_unit(rng, gravity)
    return sig


def _dys_minute(rng, p: SynthProfile, gravity, ambiguous):
    sig = np.tile(gravity, (N, 1))
    # orientation wanders slowly, never settling
    for ax in range(3):
        sig[:, ax] += 0.08 * _band_noise(rng, N, 0.05, 0.4)
    sig /= np.linalg.norm(sig, axis=1, keepdims=True)
    scale = p.dyskinesia_scale * p.amplitude_gain * rng.lognormal(0.0, p.minute_variability)
    # broadband irregular fluctuation; the patient's band parameter only
    # tilts the upper edge, keeping the class coherent across patients
    lo = 0.5
    hi = min(3.8, p.dyskinesia_band + 1.5)
    fluct = np.ones(N)
    if ambiguous:
        scale *= 0.35
        # a stable hold mimicking controlled ON movement
        hold_len = int(rng.uniform(12.0, 20.0) * FS)
        start = int(rng.uniform(0.0, 1.0) * (N - hold_len))
        fluct[start : start + hold_len] = 0.1
    for _ in range(2):
        fluct_dir = _tilted_unit(rng, gravity)
        sig += (0.7 * scale * fluct * _band_noise(rng, N, lo, hi))[:, None] * fluct_dir
    return sig


def synth_generate(profile: SynthProfile, minutes: int) -> PatientRecord:
    """Expand a profile into `minutes` labeled one-minute windows."""
    if minutes < 1:
        raise ValueError("minutes must be >= 1")
    rng = np.random.default_rng(profile.seed)
    labels = _state_sequence(rng, minutes, profile.state_mix, profile.mean_run_minutes)

    n_still = int(round(profile.no_motion_fraction * minutes))
    still = set(rng.choice(minutes, size=n_still, replace=False).tolist()) if n_still else set()

    gravity = _random_unit(rng)
    bias = np.asarray(profile.bias_offset, dtype=float)
    renderers = {OFF: _off_minute, ON: _on_minute, DYS: _dys_minute}

    windows = []
    for minute, state in enumerate(labels):
        if minute in still:
            sig = np.tile(gravity, (N, 1))
            sig += rng.normal(scale=profile.no_motion_noise, size=(N, 3))
        else:
            ambiguous = bool(rng.random() < profile.ambiguity)
            sig = renderers[state](rng, profile, gravity, ambiguous)
            sig += rng.normal(scale=profile.noise_scale, size=(N, 3))
        windows.append(
            SensorWindow(
                values=sig + bias,
                minute_index=minute,
                label=state,
                patient_id=profile.patient_id,
            )
        )
    return PatientRecord(patient_id=profile.patient_id, windows=windows)


def make_profiles(
    n_patients: int,
    seed: int = 0,
    idiosyncrasy: float = 1.0,
    separation: float = 1.0,
    ambiguity: float = 0.25,
    minute_variability: float = 0.3,
    no_motion_fraction: float = 0.1,
    mean_run_minutes: float = 22.5,
    force_extremes: bool = True,
) -> list[SynthProfile]:
    """Draw a corpus of patient profiles.

    Each patient gets a dominant state taking 50-95% of their minutes, so
    individual mixes are heavily skewed; dominant states cycle through
    OFF/ON/DYS in shuffled order, so every state keeps several majority
    patients in any corpus. idiosyncrasy scales inter-patient gain/offset
    spread; separation scales class-signature amplitudes against fixed
    sensor noise. With force_extremes, the last two patients get an
    all-DYS and a heavily ON-skewed mix.
    """
    root = np.random.SeedSequence(seed)
    child_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(n_patients + 1)]
    rng = np.random.default_rng(child_seeds[-1])
    dominants = rng.permutation(np.resize([0, 1, 2], n_patients))
    profiles = []
    for i in range(n_patients):
        share = rng.uniform(0.5, 0.95)
        rest = rng.dirichlet(np.array([0.8, 0.8])) * (1 - share)
        mix = np.insert(rest, int(dominants[i]), share)
        if force_extremes and n_patients >= 6:
            if i == n_patients - 1:
                mix = np.array([0.0, 0.0, 1.0])
            elif i == n_patients - 2:
                mix = np.array([0.03, 0.95, 0.02])
        profiles.append(
            SynthProfile(
                patient_id=f"P{i:02d}",
                state_mix=tuple(mix / mix.sum()),
                tremor_freq=float(rng.uniform(4.0, 6.0)),
                tremor_amp=0.12 * separation,
                dyskinesia_scale=0.25 * separation,
                dyskinesia_band=float(rng.uniform(1.2, 3.0)),
                pose_change_rate=float(rng.uniform(1.5, 5.0)),
                on_move_amp=0.10 * separation,
                amplitude_gain=float(rng.lognormal(0.0, 0.35 * idiosyncrasy)),
                bias_offset=tuple(rng.uniform(-0.08, 0.08, size=3) * idiosyncrasy),
                noise_scale=0.025,
                mean_run_minutes=mean_run_minutes,
                no_motion_fraction=no_motion_fraction,
                ambiguity=ambiguity,
                minute_variability=minute_variability,
                seed=child_seeds[i],
            )
        )
    return profiles


def generate_corpus(profiles: list[SynthProfile], minutes: int) -> list[PatientRecord]:
    return [synth_generate(p, minutes) for p in profiles]


def export_corpus(records: list[PatientRecord], out_dir, rate: float = FS) -> list[str]:
    """Write per-patient stream and label CSVs in the pipeline's formats.

    rate=60 writes the native uniform grid; other rates re-grid the signal
    by linear interpolation (useful for exercising resampling).
    """
    from pathlib import Path

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for rec in records:
        values = np.concatenate([w.values for w in rec.windows], axis=0)
        t60 = np.arange(values.shape[0]) / FS
        if rate == FS:
            t_out, v_out = t60, values
        else:
            t_out = np.arange(int(np.floor(t60[-1] * rate)) + 1) / rate
            v_out = np.column_stack([np.interp(t_out, t60, values[:, ax]) for ax in range(3)])
        stream = RawStream(timestamps=t_out, samples=v_out, nominal_rate=rate)
        labels = {w.minute_index: w.label for w in rec.windows}
        stream_path = out_dir / f"{rec.patient_id}_stream.csv"
        labels_path = out_dir / f"{rec.patient_id}_labels.csv"
        write_stream_csv(stream, stream_path)
        write_labels_csv(labels, labels_path)
        written.extend([str(stream_path), str(labels_path)])
    return written
