"""Photon timestamp stream generation for single-photon emitters.

Each emitter is modeled as a renewal process: after every emission the
emitter is re-excited at rate R (exponential waiting time) and then decays
with excited-state lifetime tau, so consecutive photons are separated by
delays drawn from

    p(dt) ~ exp(-dt / tau) * (1 - exp(-R * dt)),

normalized to unit mass. Sampling uses rejection: exponential candidates of
mean tau are accepted with probability 1 - exp(-R * dt), which reproduces
the normalized density exactly. Streams from independent emitters can be
merged into a composite record and thinned photon-by-photon to emulate
position-dependent collection efficiency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EmitterPhysics",
    "TimestampStream",
    "derive_rng",
    "mean_interphoton_delay",
    "sample_interphoton_delay",
    "sample_interphoton_delays",
    "generate_stream",
    "merge_streams",
    "thin_stream",
    "save_timestamps",
    "load_timestamps",
]

# Consecutive rejected candidates before the sampler gives up; only reachable
# with a badly mis-scaled re-excitation rate.
REJECTION_CAP = 1_000_000


@dataclass(frozen=True)
class EmitterPhysics:
    """Emission parameters shared by all emitters in a simulation.

    lifetime_ns is the excited-state lifetime tau, reexcitation_rate_per_ns
    the pump re-excitation rate R, and acquisition_ns the length of the
    recorded timestamp stream.
    """

    lifetime_ns: float = 14.0
    reexcitation_rate_per_ns: float = 1.0 / 14.0
    acquisition_ns: float = 1e8

    def __post_init__(self):
        if not self.lifetime_ns > 0:
            raise ValueError(f"lifetime_ns must be positive, got {self.lifetime_ns}")
        if not self.reexcitation_rate_per_ns > 0:
            raise ValueError(
                f"reexcitation_rate_per_ns must be positive, got {self.reexcitation_rate_per_ns}"
            )
        if not self.acquisition_ns > 0:
            raise ValueError(f"acquisition_ns must be positive, got {self.acquisition_ns}")


@dataclass
class TimestampStream:
    """Sorted photon arrival times (ns) over a record of fixed duration."""

    times_ns: np.ndarray
    duration_ns: float

    def __post_init__(self):
        self.times_ns = np.asarray(self.times_ns, dtype=np.float64)
        if self.times_ns.ndim != 1:
            raise ValueError("times_ns must be one-dimensional")
        if not self.duration_ns > 0:
            raise ValueError(f"duration_ns must be positive, got {self.duration_ns}")
        if self.times_ns.size:
            if np.any(np.diff(self.times_ns) < 0):
                raise ValueError("times_ns must be non-decreasing")
            if self.times_ns[0] < 0 or self.times_ns[-1] > self.duration_ns:
                raise ValueError("timestamps must lie in [0, duration_ns]")

    def __len__(self) -> int:
        return int(self.times_ns.size)


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Deterministic sub-generator for (seed, key...) work units.

    Mixing integer keys into the seed sequence gives independent streams for
    e.g. per-emitter or per-scan-position simulation that do not depend on
    evaluation order.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def mean_interphoton_delay(physics: EmitterPhysics) -> float:
    """Mean of the normalized inter-photon delay density.

    Closed form tau * (R*tau + 2) / (R*tau + 1); equals 1 / (photon rate).
    """
    rt = physics.reexcitation_rate_per_ns * physics.lifetime_ns
    return physics.lifetime_ns * (rt + 2.0) / (rt + 1.0)


def sample_interphoton_delay(physics: EmitterPhysics, rng: np.random.Generator) -> float:
    """Draw one inter-photon delay (ns) by rejection sampling."""
    tau = physics.lifetime_ns
    rate = physics.reexcitation_rate_per_ns
    for _ in range(REJECTION_CAP):
        candidate = rng.exponential(tau)
        if rng.random() < -np.expm1(-rate * candidate):
            return candidate
    raise RuntimeError(
        f"rejection sampler exceeded {REJECTION_CAP} rejections; "
        f"check lifetime/re-excitation configuration (tau={tau}, R={rate})"
    )


def sample_interphoton_delays(
    physics: EmitterPhysics, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n`` inter-photon delays (ns), vectorized over rejection blocks."""
    if n < 0:
        raise ValueError("n must be non-negative")
    tau = physics.lifetime_ns
    rate = physics.reexcitation_rate_per_ns
    accept = rate * tau / (rate * tau + 1.0)
    out: list[np.ndarray] = []
    got = 0
    rejected_run = 0
    while got < n:
        block = min(int((n - got) / accept * 1.1) + 64, 1 << 24)
        candidates = rng.exponential(tau, size=block)
        kept = candidates[rng.random(block) < -np.expm1(-rate * candidates)]
        if kept.size == 0:
            rejected_run += block
            if rejected_run > REJECTION_CAP:
                raise RuntimeError(
                    f"rejection sampler exceeded {REJECTION_CAP} rejections; "
                    f"check configuration (tau={tau}, R={rate})"
                )
            continue
        rejected_run = 0
        out.append(kept)
        got += kept.size
    return np.concatenate(out)[:n] if out else np.empty(0)


def generate_stream(physics: EmitterPhysics, rng: np.random.Generator) -> TimestampStream:
    """Simulate one emitter's photon record over the acquisition window.

    Delays are sampled in blocks and cumulatively summed until the running
    time passes acquisition_ns; the overshoot is discarded.
    """
    duration = physics.acquisition_ns
    mean_delay = mean_interphoton_delay(physics)
    accept = 1.0 / (1.0 + 1.0 / (physics.reexcitation_rate_per_ns * physics.lifetime_ns))
    tau = physics.lifetime_ns
    rate = physics.reexcitation_rate_per_ns

    blocks: list[np.ndarray] = []
    t_last = 0.0
    rejected_run = 0
    while t_last <= duration:
        need = int((duration - t_last) / mean_delay * 1.05) + 16
        n_cand = min(int(need / accept) + 64, 1 << 24)
        candidates = rng.exponential(tau, size=n_cand)
        kept = candidates[rng.random(n_cand) < -np.expm1(-rate * candidates)]
        if kept.size == 0:
            rejected_run += n_cand
            if rejected_run > REJECTION_CAP:
                raise RuntimeError(
                    f"rejection sampler exceeded {REJECTION_CAP} rejections; "
                    f"check configuration (tau={tau}, R={rate})"
                )
            continue
        rejected_run = 0
        times = t_last + np.cumsum(kept)
        t_last = float(times[-1])
        blocks.append(times)

    if blocks:
        all_times = np.concatenate(blocks)
        all_times = all_times[all_times <= duration]
    else:
        all_times = np.empty(0)
    return TimestampStream(all_times, duration)


def merge_streams(streams: list[TimestampStream]) -> TimestampStream:
    """Time-sorted union of streams sharing one record duration."""
    if not streams:
        raise ValueError("need at least one stream to merge")
    duration = streams[0].duration_ns
    for s in streams[1:]:
        if s.duration_ns != duration:
            raise ValueError(
                f"inconsistent simulation setup: stream durations differ "
                f"({s.duration_ns} != {duration})"
            )
    merged = np.sort(np.concatenate([s.times_ns for s in streams]), kind="stable")
    return TimestampStream(merged, duration)


def thin_stream(
    stream: TimestampStream, keep_probability: float, rng: np.random.Generator
) -> TimestampStream:
    """Keep each timestamp independently with the given probability."""
    if not 0.0 <= keep_probability <= 1.0:
        raise ValueError(f"keep_probability must be in [0, 1], got {keep_probability}")
    if keep_probability == 1.0:
        return TimestampStream(stream.times_ns.copy(), stream.duration_ns)
    if keep_probability == 0.0:
        return TimestampStream(np.empty(0), stream.duration_ns)
    mask = rng.random(stream.times_ns.size) < keep_probability
    return TimestampStream(stream.times_ns[mask], stream.duration_ns)


def save_timestamps(stream: TimestampStream, path) -> None:
    """Write one decimal timestamp (ns) per line under a duration header."""
    with open(path, "w") as fh:
        fh.write(f"# duration_ns={stream.duration_ns!r}\n")
        for t in stream.times_ns:
            fh.write(f"{t!r}\n")


def load_timestamps(path) -> TimestampStream:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# duration_ns="):
            raise ValueError(f"missing duration header in {path}")
        duration = float(header.split("=", 1)[1])
        times = np.array([float(line) for line in fh if line.strip()], dtype=np.float64)
    return TimestampStream(times, duration)
