"""Phase-space simulation of the two-way prepare-and-measure protocol.

All operations act on :class:`PhasePoint` values whose ``x``/``p`` fields
may be scalars or equally shaped numpy arrays, so a whole batch of rounds
is simulated in one call.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import InvalidParameterError, ReconError
from .stats import RngLike, as_generator

BASES = ("X", "P")

# Sampled quadratures are stored in fixed point with this resolution, so that
# sums, differences and doublings of |values| < 2**20 are exact in binary64.
# This keeps noiseless runs bit-exact (X' == X) under the literal calibration.
GRID = 2.0**-32


def _snap(v):
    return np.round(v / GRID) * GRID


@dataclass(frozen=True)
class ModulationConfig:
    variance: float

    def __post_init__(self):
        if not np.isfinite(self.variance) or self.variance <= 0:
            raise InvalidParameterError(f"modulation variance must be > 0, got {self.variance}")


@dataclass(frozen=True)
class ChannelModel:
    """Additive Gaussian channel.

    Isotropic noise of ``noise_variance`` per quadrature, or, when
    ``scale_transform`` is given, ``Delta = A @ Lambda`` with ``Lambda``
    standard normal so the covariance is ``A @ A.T``.
    """

    noise_variance: float = 0.0
    scale_transform: Optional[tuple] = None
    label: str = "N1"

    def __post_init__(self):
        if not np.isfinite(self.noise_variance) or self.noise_variance < 0:
            raise InvalidParameterError(f"noise variance must be >= 0, got {self.noise_variance}")
        if self.label not in ("N1", "N2"):
            raise InvalidParameterError(f"channel label must be N1 or N2, got {self.label!r}")
        if self.scale_transform is not None:
            a = np.asarray(self.scale_transform, dtype=float)
            if a.shape != (2, 2) or not np.all(np.isfinite(a)):
                raise InvalidParameterError("scale_transform must be a finite 2x2 matrix")
            object.__setattr__(self, "scale_transform", tuple(map(tuple, a.tolist())))

    @property
    def covariance(self) -> np.ndarray:
        if self.scale_transform is None:
            return self.noise_variance * np.eye(2)
        a = np.asarray(self.scale_transform)
        return a @ a.T

    def quadrature_variance(self, basis: str) -> float:
        return float(self.covariance[BASES.index(basis), BASES.index(basis)])

    @property
    def is_noiseless(self) -> bool:
        return not np.any(self.covariance)


@dataclass(frozen=True)
class PhasePoint:
    x: object
    p: object

    def __add__(self, other: "PhasePoint") -> "PhasePoint":
        return PhasePoint(self.x + other.x, self.p + other.p)

    def __sub__(self, other: "PhasePoint") -> "PhasePoint":
        return PhasePoint(self.x - other.x, self.p - other.p)


@dataclass
class RawSession:
    alice_units: np.ndarray
    bob_units: np.ndarray
    bases: np.ndarray  # 0 = X, 1 = P
    sifted_fraction: float
    var_x: float
    var_x_prime: float
    modulation_variance: float
    n1_variance: float
    n2_variance: float
    seed: Optional[int] = None
    rounds: int = 0
    calibration: str = "received"
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.alice_units) != len(self.bob_units):
            raise InvalidParameterError("Alice and Bob raw data must have equal length")

    @property
    def n(self) -> int:
        return len(self.alice_units)

    @property
    def differences(self) -> np.ndarray:
        return self.bob_units - self.alice_units

    def metadata(self) -> dict:
        return {
            "n": self.n,
            "rounds": self.rounds,
            "sifted_fraction": self.sifted_fraction,
            "var_x": self.var_x,
            "var_x_prime": self.var_x_prime,
            "modulation_variance": self.modulation_variance,
            "n1_variance": self.n1_variance,
            "n2_variance": self.n2_variance,
            "seed": self.seed,
            "calibration": self.calibration,
            **self.extra,
        }


def couple_modes(alice: PhasePoint, bob_noisy: PhasePoint) -> dict:
    """Un-normalized sum and difference of Alice's mode and Bob's noisy mode."""
    return {"sum_mode": alice + bob_noisy, "diff_mode": alice - bob_noisy}


def apply_channel(state: PhasePoint, channel: ChannelModel, rng: RngLike) -> PhasePoint:
    shape = np.shape(state.x)
    if channel.is_noiseless:
        return PhasePoint(state.x, state.p)
    gen = as_generator(rng)
    lam = gen.standard_normal((2,) + shape)
    if channel.scale_transform is None:
        noise = np.sqrt(channel.noise_variance) * lam
    else:
        noise = np.tensordot(np.asarray(channel.scale_transform), lam, axes=1)
    noise = _snap(noise)
    if shape == ():
        return PhasePoint(state.x + float(noise[0]), state.p + float(noise[1]))
    return PhasePoint(state.x + noise[0], state.p + noise[1])


def measure_quadrature(state: PhasePoint, basis):
    """Homodyne abstraction: pick ``x`` for basis X and ``p`` for basis P.

    ``basis`` may be a string or an integer array (0 = X, 1 = P).
    """
    if isinstance(basis, str):
        if basis not in BASES:
            raise InvalidParameterError(f"basis must be X or P, got {basis!r}")
        return state.x if basis == "X" else state.p
    return np.where(np.asarray(basis) == 0, state.x, state.p)


def calibrate(measured, bob_original_quadrature):
    return measured + 2 * bob_original_quadrature


def noise_from_line_params(transmittance: float, excess_noise: float) -> float:
    """Channel noise variance (1 - T)/T + excess noise, in shot-noise units."""
    if not (0 < transmittance <= 1):
        raise InvalidParameterError(f"transmittance must be in (0, 1], got {transmittance}")
    if excess_noise < 0:
        raise InvalidParameterError(f"excess noise must be >= 0, got {excess_noise}")
    return (1 - transmittance) / transmittance + excess_noise


def _simulate_rounds(mod, n1, n2, m, gen, calibration):
    sd = np.sqrt(mod.variance)
    bob = PhasePoint(_snap(sd * gen.standard_normal(m)), _snap(sd * gen.standard_normal(m)))
    bob_received = apply_channel(bob, n1, gen)
    alice = PhasePoint(_snap(sd * gen.standard_normal(m)), _snap(sd * gen.standard_normal(m)))
    modes = couple_modes(alice, bob_received)
    alice_basis = gen.integers(0, 2, m)
    x = measure_quadrature(modes["sum_mode"], alice_basis)
    returned = apply_channel(modes["diff_mode"], n2, gen)
    bob_basis = gen.integers(0, 2, m)
    y = measure_quadrature(returned, bob_basis)
    ref = bob_received if calibration == "received" else bob
    x_prime = calibrate(y, measure_quadrature(ref, bob_basis))
    keep = alice_basis == bob_basis
    return x[keep], x_prime[keep], alice_basis[keep], keep


def run_session(
    mod: ModulationConfig,
    n1: ChannelModel,
    n2: ChannelModel,
    target_n: int,
    rng: RngLike,
    calibration: str = "received",
    seed: Optional[int] = None,
) -> RawSession:
    """Simulate rounds until ``target_n`` matched-basis pairs are collected.

    ``calibration`` selects the quadrature Bob adds back (twice) to his
    measurement: ``"received"`` uses his mode after the first channel use,
    so that ``X' - X`` is exactly the second channel's noise;
    ``"prepared"`` uses the value he originally prepared, in which case the
    first channel's noise re-enters ``X' - X`` with weight -2.
    """
    if target_n < 1:
        raise InvalidParameterError(f"target_N must be >= 1, got {target_n}")
    if calibration not in ("received", "prepared"):
        raise InvalidParameterError(f"calibration must be 'received' or 'prepared', got {calibration!r}")
    gen = as_generator(rng)
    xs, xps, bs = [], [], []
    have = 0
    rounds = 0
    while have < target_n:
        need = target_n - have
        m = max(2 * need + 8 * int(np.sqrt(need)) + 64, 1024)
        x, xp, b, keep = _simulate_rounds(mod, n1, n2, m, gen, calibration)
        take = min(need, x.size)
        if take == x.size:
            rounds += m
        else:
            # position of the last kept round that we actually use
            rounds += int(np.flatnonzero(keep)[take - 1]) + 1
        xs.append(x[:take])
        xps.append(xp[:take])
        bs.append(b[:take])
        have += take
    x = np.concatenate(xs)
    xp = np.concatenate(xps)
    var_x = float(np.var(x, ddof=1)) if target_n > 1 else float("nan")
    var_xp = float(np.var(xp, ddof=1)) if target_n > 1 else float("nan")
    return RawSession(
        alice_units=x,
        bob_units=xp,
        bases=np.concatenate(bs).astype(np.int8),
        sifted_fraction=target_n / rounds,
        var_x=var_x,
        var_x_prime=var_xp,
        modulation_variance=mod.variance,
        n1_variance=float(np.trace(n1.covariance) / 2),
        n2_variance=float(np.trace(n2.covariance) / 2),
        seed=seed,
        rounds=rounds,
        calibration=calibration,
    )


def session_rows(session: RawSession):
    basis = np.array(BASES)[session.bases.astype(int)]
    return [
        (i, basis[i], session.alice_units[i], session.bob_units[i]) for i in range(session.n)
    ]


def load_session(csv_path) -> RawSession:
    """Read a session CSV (and its ``.json`` sidecar when present)."""
    csv_path = Path(csv_path)
    try:
        lines = csv_path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ReconError(f"cannot read session file {csv_path}: {exc}") from exc
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body or body[0] != "index,basis,x_alice,x_bob":
        raise ReconError(f"{csv_path}: expected header 'index,basis,x_alice,x_bob'")
    n = len(body) - 1
    x = np.empty(n)
    xp = np.empty(n)
    b = np.empty(n, dtype=np.int8)
    for k, ln in enumerate(body[1:]):
        parts = ln.split(",")
        if len(parts) != 4 or parts[1] not in BASES:
            raise ReconError(f"{csv_path}: malformed row {k + 1}: {ln!r}")
        b[k] = BASES.index(parts[1])
        x[k] = float(parts[2])
        xp[k] = float(parts[3])
    meta = {}
    sidecar = csv_path.with_suffix(".json")
    if sidecar.exists():
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    var_x = float(np.var(x, ddof=1)) if n > 1 else float("nan")
    var_xp = float(np.var(xp, ddof=1)) if n > 1 else float("nan")
    return RawSession(
        alice_units=x,
        bob_units=xp,
        bases=b,
        sifted_fraction=float(meta.get("sifted_fraction", float("nan"))),
        var_x=var_x,
        var_x_prime=var_xp,
        modulation_variance=float(meta.get("modulation_variance", float("nan"))),
        n1_variance=float(meta.get("n1_variance", float("nan"))),
        n2_variance=float(meta.get("n2_variance", float("nan"))),
        seed=meta.get("seed"),
        rounds=int(meta.get("rounds", 0)),
        calibration=meta.get("calibration", "received"),
    )
