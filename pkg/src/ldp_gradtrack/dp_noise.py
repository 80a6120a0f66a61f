"""Laplace privacy noise with per-agent decaying schedules.

Every agent perturbs each shared variable once per round with a fresh vector
of independent Laplace draws.  The per-coordinate standard deviation follows
sigma_0 / (t+1)^varsigma with varsigma below the stepsize decay exponent, so
the noise outlives no useful signal but its variance stays summable.

Randomness is counter-keyed: each (agent, variable tag, round) triple owns an
independent substream addressed by an absolute Philox counter, so draws can be
evaluated in any order, in parallel, or re-read, and always produce the same
bits for the same seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Variable tags keying independent noise substreams.
TAG_ZETA = 0    # tracking-variable noise
TAG_THETA = 1   # model-parameter noise
TAG_DATA = 2    # data-stream samples (used by the problem module)

_COUNTER_STRIDE = np.uint64(1) << np.uint64(32)
_U53 = 1 << 53


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-coordinate Laplace noise standard deviation sigma_0 / (t+1)^varsigma.

    sigma0 = 0 disables the noise entirely (used for noiseless baselines);
    otherwise sigma0 must be positive and varsigma must lie in [1/2, 1).
    """

    sigma0: float
    varsigma: float

    @property
    def enabled(self) -> bool:
        return self.sigma0 > 0.0


@dataclass(frozen=True)
class StepsizeSchedule:
    """Decaying stepsize lambda_0 / (t+1)^v with v in (1/2, 1)."""

    lambda0: float
    v: float

    def at(self, t: int) -> float:
        return self.lambda0 / (t + 1) ** self.v


def std_at(s: NoiseSchedule, t: int) -> float:
    """Per-coordinate noise standard deviation at round t >= 0."""
    if t < 0:
        raise ValueError(f"round index must be >= 0, got {t}")
    return s.sigma0 / (t + 1) ** s.varsigma


def laplace_scale_at(s: NoiseSchedule, t: int) -> float:
    """Laplace scale parameter nu at round t; the variance 2 nu^2 equals std_at^2."""
    return std_at(s, t) / np.sqrt(2.0)


class KeyedStream:
    """Counter-addressable random substream for one (seed, agent, tag) triple.

    `at(t)` returns a generator positioned at an absolute counter derived from
    the round index, so the draw at round t depends only on
    (seed, agent, tag, t) and never on evaluation order.  The seed may be an
    int or a tuple of ints (used to salt repetition replicas).
    """

    def __init__(self, seed, agent: int, tag: int):
        entropy = (seed,) if isinstance(seed, int) else tuple(seed)
        key = np.random.SeedSequence(entropy + (agent, tag)).generate_state(2, np.uint64)
        self._bit_gen = np.random.Philox(key=key)
        self._key = self._bit_gen.state["state"]["key"]

    def at(self, t: int) -> np.random.Generator:
        counter = np.zeros(4, dtype=np.uint64)
        counter[0] = np.uint64(t) * _COUNTER_STRIDE
        self._bit_gen.state = {
            "bit_generator": "Philox",
            "state": {"counter": counter, "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return np.random.Generator(self._bit_gen)


def sample_noise(s: NoiseSchedule, t: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Vector of `dim` independent Laplace draws for round t.

    Uses the inverse CDF applied to a full-precision dyadic uniform on (0, 1),
    which is exact, branch-free, and cannot produce infinities.  With
    sigma0 = 0 the draw is identically zero.
    """
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if not s.enabled:
        return np.zeros(dim)
    nu = laplace_scale_at(s, t)
    u = rng.integers(1, _U53, size=dim) / _U53 - 0.5
    return -nu * np.sign(u) * np.log1p(-2.0 * np.abs(u))


class NoiseSource:
    """Keyed per-agent noise for one simulation run.

    Holds one (tracking, parameter) schedule pair per agent plus the keyed
    substreams; `zeta(t, dim)` and `vartheta(t, dim)` return the m-by-dim
    noise matrices every agent broadcasts at round t.  A single draw per agent
    per variable per round is shared by all of that agent's out-neighbors.
    """

    def __init__(self, seed: int, schedules: list[tuple[NoiseSchedule, NoiseSchedule]]):
        self.seed = seed
        self.schedules = list(schedules)
        m = len(schedules)
        self._zeta_streams = [KeyedStream(seed, i, TAG_ZETA) for i in range(m)]
        self._theta_streams = [KeyedStream(seed, i, TAG_THETA) for i in range(m)]

    @property
    def m(self) -> int:
        return len(self.schedules)

    def zeta(self, t: int, dim: int) -> np.ndarray:
        return np.stack([
            sample_noise(self.schedules[i][0], t, dim, self._zeta_streams[i].at(t))
            for i in range(self.m)
        ])

    def vartheta(self, t: int, dim: int) -> np.ndarray:
        return np.stack([
            sample_noise(self.schedules[i][1], t, dim, self._theta_streams[i].at(t))
            for i in range(self.m)
        ])


def validate_compat(schedules: list[tuple[NoiseSchedule, NoiseSchedule]],
                    step: StepsizeSchedule) -> list[str]:
    """Check noise/stepsize compatibility; returns violation messages.

    Every enabled schedule needs 1/2 <= varsigma < v and the stepsize needs
    v in (1/2, 1) with lambda0 > 0.  Disabled schedules (sigma0 = 0) skip the
    exponent checks; negative sigma0 is always rejected.
    """
    report: list[str] = []
    if not 0.5 < step.v < 1.0:
        report.append(f"stepsize exponent v ∉ (1/2, 1): v = {step.v}")
    if step.lambda0 <= 0:
        report.append(f"stepsize scale must be positive: lambda0 = {step.lambda0}")
    tags = ("zeta", "theta")
    for i, pair in enumerate(schedules):
        for tag, sched in zip(tags, pair):
            if sched.sigma0 < 0:
                report.append(f"agent {i} {tag}: sigma0 < 0 ({sched.sigma0})")
                continue
            if not sched.enabled:
                continue
            if not 0.5 <= sched.varsigma < 1.0:
                report.append(
                    f"agent {i} {tag}: ς ∉ [1/2, 1) (ς = {sched.varsigma})"
                )
            if sched.varsigma >= step.v:
                report.append(
                    f"agent {i} {tag}: ς ≥ v (ς = {sched.varsigma}, v = {step.v}); "
                    "noise must decay strictly slower than the stepsize"
                )
    return report
