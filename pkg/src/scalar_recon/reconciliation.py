"""Logical-layer reconciliation.

Bob (the reference party) splits his secret choice between two public
alphabet values into ``d`` units, hides them behind the CDF of his raw
data and sends ``C(X') * U``. Alice divides by ``C(X)`` unit by unit and
decides which codeword the corrupted vector is closest to.

Single-block functions take 1-D arrays. The ``*_blocks`` variants take
``(n_blocks, d)`` arrays and are what :func:`reconcile_session` uses; the
single-block functions are thin wrappers around them, so both paths share
one decision rule.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats as sps

from .errors import (
    ConditionNotMetError,
    DegenerateCodewordError,
    InsufficientDataError,
    InsufficientSampleError,
    InvalidParameterError,
)
from .quantum import RawSession
from .stats import RandomStream, RngLike, as_generator, gaussian_cdf, q_function

CDF_EPS = 1e-12
MODES = ("affine", "independent")
METHODS = ("scalar", "vector", "projection")


@dataclass(frozen=True)
class Alphabet:
    a: float
    b: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise InvalidParameterError("alphabet values must be finite")
        if self.a == self.b:
            raise InvalidParameterError(f"alphabet values must differ, got a = b = {self.a}")

    def __iter__(self):
        return iter((self.a, self.b))

    @property
    def low(self) -> float:
        return min(self.a, self.b)

    @property
    def gap(self) -> float:
        return abs(self.a - self.b)

    def scaled(self, lam: float) -> "Alphabet":
        return Alphabet(lam * self.a, lam * self.b)


def _sum_tol(a, b):
    return 1e-9 * max(abs(a), abs(b), 1.0)


@dataclass(frozen=True)
class Granulation:
    A: np.ndarray
    B: np.ndarray
    mode: str
    d: int
    a: float
    b: float

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        if A.shape != (self.d,) or B.shape != (self.d,):
            raise InvalidParameterError(f"codewords must have length d = {self.d}")
        tol = _sum_tol(self.a, self.b)
        if abs(A.sum() - self.a) > tol or abs(B.sum() - self.b) > tol:
            raise InvalidParameterError("codeword units must sum to their alphabet values")
        if self.mode == "affine" and np.max(np.abs((A - B) - (self.a - self.b) / self.d)) > tol:
            raise InvalidParameterError("affine codewords must differ by (a - b)/d in every unit")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def alphabet(self) -> Alphabet:
        return Alphabet(self.a, self.b)


@dataclass(frozen=True)
class BlockPair:
    x_block: np.ndarray
    x_prime_block: np.ndarray
    var_x: float
    var_x_prime: float

    def __post_init__(self):
        if np.shape(self.x_block) != np.shape(self.x_prime_block):
            raise InvalidParameterError("Alice and Bob blocks must have the same length")
        if not (self.var_x > 0 and self.var_x_prime > 0):
            raise InvalidParameterError("block variances must be positive")


@dataclass(frozen=True)
class WireMessage:
    payload: np.ndarray
    block_index: int = 0


@dataclass
class NoiseAccounting:
    """Per-unit and per-block noise terms.

    ``delta_block_ratio_of_sums`` is the alternative block noise obtained by
    pooling the CDF values first, ``sum(U) * sum(C(Delta)) / sum(C(X))``. It
    is a diagnostic only; the decoders never see it.
    """

    delta_units: np.ndarray
    cdf_delta_units: np.ndarray
    unit_noise: np.ndarray  # delta_{j,i}
    unit_noise_bob: np.ndarray  # varsigma_{j,i}
    block_noise: np.ndarray  # delta_j
    block_noise_bob: np.ndarray  # varsigma_j
    delta_block_ratio_of_sums: np.ndarray
    sigma_delta_sq: Optional[float]
    eta: Optional[float]


@dataclass
class DecodeReport:
    blocks: int
    bit_errors: int
    ber: float
    eta_hat: Optional[float]
    predicted_pe: Optional[float]
    clamp_count: int
    method: str
    granulation_mode: str
    dropped_units: int = 0
    decisions: np.ndarray = field(default=None, repr=False)
    block_values: np.ndarray = field(default=None, repr=False)

    def to_json_dict(self) -> dict:
        return {
            "blocks": self.blocks,
            "bit_errors": self.bit_errors,
            "ber": self.ber,
            "eta_hat": self.eta_hat,
            "predicted_pe": self.predicted_pe,
            "clamp_count": self.clamp_count,
            "method": self.method,
            "granulation_mode": self.granulation_mode,
            "dropped_units": self.dropped_units,
        }


@dataclass
class ReconciliationResult:
    report: DecodeReport
    noise: NoiseAccounting
    alphabet: Alphabet
    d: int
    choices: np.ndarray  # Bob's ground truth, 0 -> a, 1 -> b
    A: np.ndarray
    B: np.ndarray
    U: np.ndarray
    U_prime: np.ndarray
    payload: np.ndarray
    cdf_alice: np.ndarray
    cdf_bob: np.ndarray
    session: Optional[RawSession] = None


# --- CDF transform -----------------------------------------------------------

def cdf_transform_block(block, variance: float, eps: float = CDF_EPS):
    """Gaussian CDF of each unit, clamped to [eps, 1 - eps].

    Returns ``(values, clamp_count)``.
    """
    u = np.asarray(gaussian_cdf(np.asarray(block, dtype=float), variance))
    clamped = np.clip(u, eps, 1.0 - eps)
    return clamped, int(np.count_nonzero(clamped != u))


# --- granulation -------------------------------------------------------------

def _check_mode(mode):
    if mode not in MODES:
        raise InvalidParameterError(f"granulation mode must be one of {MODES}, got {mode!r}")


def granulation_blocks(alphabet: Alphabet, n_blocks: int, d: int, mode: str, rng: RngLike,
                       spread: float = 0.0):
    """Public codeword pairs for ``n_blocks`` blocks, shape ``(n_blocks, d)``.

    Units scatter around the even split ``a/d`` by uniform offsets of
    half-width ``spread * |a - b| / (2d)``. In affine mode one zero-sum
    offset vector is shared by A and B; in independent mode each codeword
    draws ``d - 1`` units and the last one balances the sum.
    Row ``j`` only depends on the stream and ``j``, not on ``n_blocks``.
    """
    _check_mode(mode)
    if d < 1:
        raise InvalidParameterError(f"d must be >= 1, got {d}")
    if spread < 0:
        raise InvalidParameterError(f"spread must be >= 0, got {spread}")
    a, b = alphabet
    half = spread * abs(a - b) / (2 * d)
    base_a = np.full((n_blocks, d), a / d)
    base_b = np.full((n_blocks, d), b / d)
    if half == 0 or d == 1:
        return base_a, base_b
    gen = as_generator(rng)
    if mode == "affine":
        r = gen.uniform(-half, half, (n_blocks, d))
        r -= r.mean(axis=1, keepdims=True)
        return base_a + r, base_b + r
    u = gen.uniform(-half, half, (n_blocks, 2, d - 1))
    A = np.empty((n_blocks, d))
    B = np.empty((n_blocks, d))
    A[:, :-1] = a / d + u[:, 0]
    B[:, :-1] = b / d + u[:, 1]
    A[:, -1] = a - A[:, :-1].sum(axis=1)
    B[:, -1] = b - B[:, :-1].sum(axis=1)
    return A, B


def granulate(alphabet: Alphabet, choice: float, d: int, mode: str = "affine",
              rng: Optional[RngLike] = None, spread: float = 0.0):
    """Split one block. Returns ``(Granulation, U)`` with U the chosen codeword."""
    if choice not in (alphabet.a, alphabet.b):
        raise InvalidParameterError(f"choice must be one of the alphabet values, got {choice}")
    if rng is None:
        if spread:
            raise InvalidParameterError("a random stream is needed when spread > 0")
        rng = np.random.Generator(np.random.Philox(0))
    A, B = granulation_blocks(alphabet, 1, d, mode, rng, spread)
    gran = Granulation(A[0], B[0], mode, d, alphabet.a, alphabet.b)
    return gran, (gran.A if choice == alphabet.a else gran.B).copy()


# --- wire message ------------------------------------------------------------

def encode_message(cdf_block, U, j: int = 0) -> WireMessage:
    c = np.asarray(cdf_block, dtype=float)
    u = np.asarray(U, dtype=float)
    if c.shape != u.shape:
        raise InvalidParameterError(f"length mismatch: {c.shape} vs {u.shape}")
    return WireMessage(c * u, j)


def decode_units(msg: WireMessage, alice_cdf_block) -> np.ndarray:
    c = np.asarray(alice_cdf_block, dtype=float)
    if c.shape != np.shape(msg.payload):
        raise InvalidParameterError("payload and CDF block lengths differ")
    return msg.payload / c


# --- decoders ----------------------------------------------------------------

def _pick(score, alphabet):
    """score > 0 -> a, score < 0 -> b, exact zero -> min(a, b). Returns 0/1 indices."""
    tie_idx = 0 if alphabet.a < alphabet.b else 1
    return np.where(score > 0, 0, np.where(score < 0, 1, tie_idx)).astype(np.int8)


def scalar_decode_blocks(u_prime, alphabet: Alphabet):
    s = np.asarray(u_prime, dtype=float).sum(axis=-1)
    score = np.abs(s - alphabet.b) - np.abs(s - alphabet.a)
    return _pick(score, alphabet), s


def vector_nn_decode_blocks(u_prime, A, B, alphabet: Alphabet):
    u = np.asarray(u_prime, dtype=float)
    if u.shape != np.shape(A) or u.shape != np.shape(B):
        raise InvalidParameterError("codeword and received vector dimensions differ")
    score = np.sum((u - B) ** 2, axis=-1) - np.sum((u - A) ** 2, axis=-1)
    return _pick(score, alphabet)


def projection_decode_blocks(u_prime, A, B, alphabet: Alphabet):
    u = np.asarray(u_prime, dtype=float)
    if u.shape != np.shape(A) or u.shape != np.shape(B):
        raise InvalidParameterError("codeword and received vector dimensions differ")
    diff = np.asarray(A) - np.asarray(B)
    norm = np.linalg.norm(diff, axis=-1)
    if np.any(norm == 0):
        raise DegenerateCodewordError("codewords coincide, projection direction undefined")
    chi = u - (np.asarray(A) + np.asarray(B)) / 2
    proj = np.sum(diff * chi, axis=-1) / norm
    return _pick(proj, alphabet), proj


def _value(idx, alphabet):
    return alphabet.a if int(idx) == 0 else alphabet.b


def scalar_decode(u_prime, alphabet: Alphabet) -> float:
    idx, _ = scalar_decode_blocks(np.asarray(u_prime, dtype=float)[None, :], alphabet)
    return _value(idx[0], alphabet)


def vector_nn_decode(u_prime, gran: Granulation) -> float:
    u = np.asarray(u_prime, dtype=float)
    if u.shape != (gran.d,):
        raise InvalidParameterError(f"expected {gran.d} units, got {u.shape}")
    idx = vector_nn_decode_blocks(u[None, :], gran.A[None, :], gran.B[None, :], gran.alphabet)
    return _value(idx[0], gran.alphabet)


def projection_decode(u_prime, gran: Granulation) -> dict:
    u = np.asarray(u_prime, dtype=float)
    if u.shape != (gran.d,):
        raise InvalidParameterError(f"expected {gran.d} units, got {u.shape}")
    idx, proj = projection_decode_blocks(u[None, :], gran.A[None, :], gran.B[None, :], gran.alphabet)
    return {"decision": _value(idx[0], gran.alphabet), "projection_value": float(proj[0])}


def decode_blocks(method, u_prime, A, B, alphabet):
    if method == "scalar":
        return scalar_decode_blocks(u_prime, alphabet)[0]
    if method == "vector":
        return vector_nn_decode_blocks(u_prime, A, B, alphabet)
    if method == "projection":
        return projection_decode_blocks(u_prime, A, B, alphabet)[0]
    raise InvalidParameterError(f"method must be one of {METHODS}, got {method!r}")


# --- noise bookkeeping -------------------------------------------------------

def _accounting(x, xp, cx, cxp, U, U_prime):
    delta_units = xp - x
    cdf_delta = cxp - cx
    unit_noise = U / cx * cdf_delta
    unit_noise_bob = U_prime / cxp * cdf_delta
    block_noise = unit_noise.sum(axis=-1)
    block_noise_bob = unit_noise_bob.sum(axis=-1)
    pooled = U.sum(axis=-1) * cdf_delta.sum(axis=-1) / cx.sum(axis=-1)
    n = np.size(block_noise)
    var = float(np.var(block_noise, ddof=1)) if n >= 2 else None
    eta = math.sqrt(var) if var is not None else None
    return NoiseAccounting(delta_units, cdf_delta, unit_noise, unit_noise_bob, block_noise,
                           block_noise_bob, pooled, var, eta)


def noise_accounting(block: BlockPair, gran: Granulation, U) -> NoiseAccounting:
    """Noise terms of one block (block-level variance fields are left empty)."""
    x = np.asarray(block.x_block, dtype=float)
    xp = np.asarray(block.x_prime_block, dtype=float)
    U = np.asarray(U, dtype=float)
    if x.shape != (gran.d,) or U.shape != (gran.d,):
        raise InvalidParameterError("block, codeword and unit dimensions differ")
    cx, _ = cdf_transform_block(x, block.var_x)
    cxp, _ = cdf_transform_block(xp, block.var_x_prime)
    U_prime = decode_units(encode_message(cxp, U), cx)
    acc = _accounting(x, xp, cx, cxp, U, U_prime)
    acc.block_noise = float(acc.block_noise)
    acc.block_noise_bob = float(acc.block_noise_bob)
    acc.delta_block_ratio_of_sums = float(acc.delta_block_ratio_of_sums)
    return acc


def ratio_of_sums_correction(cdf_bob_block, cdf_alice_block, U) -> float:
    """Pooled correction ``sum(C(X')) / sum(C(X)) * sum(U)`` (diagnostic only)."""
    return float(np.sum(cdf_bob_block) / np.sum(cdf_alice_block) * np.sum(U))


# --- error probability -------------------------------------------------------

def _gap(alphabet):
    a, b = alphabet
    return abs(a - b)


def predict_error_probability(alphabet, eta: float) -> float:
    """Q(|a - b| / (2 eta)). ``alphabet`` may be an Alphabet or an (a, b) pair."""
    if not eta > 0:
        raise InvalidParameterError(f"eta must be > 0, got {eta}")
    return q_function(_gap(alphabet) / (2 * eta))


def error_probability_bounds(alphabet, eta: float) -> dict:
    if not eta > 0:
        raise InvalidParameterError(f"eta must be > 0, got {eta}")
    z = _gap(alphabet) / (2 * eta)
    if z <= 1:
        raise ConditionNotMetError(f"bounds need |a - b| > 2 eta (z = {z:g})")
    return tail_bounds(z)


def tail_bounds(z: float) -> dict:
    e = math.exp(-z * z / 2)
    return {"lower": (1 - 1 / z**2) * e / (math.sqrt(2 * math.pi) * z), "upper": e}


def key_guess_log2(N: int, d: int) -> int:
    if d < 1 or N < d:
        raise InvalidParameterError(f"need N >= d >= 1, got N={N}, d={d}")
    return -(int(N) // int(d))


def key_guess_probability(N: int, d: int) -> float:
    """Probability 2**-(N // d) of guessing every block's choice.

    Evaluated with ``ldexp`` from the exact base-2 exponent, so it is exact
    until it underflows to 0.0; use :func:`key_guess_log2` for the exponent.
    """
    return math.ldexp(1.0, key_guess_log2(N, d))


# --- session driver ----------------------------------------------------------

def reconcile_session(
    session: RawSession,
    d: int,
    alphabet: Alphabet,
    mode: str = "affine",
    method: str = "scalar",
    rng: RngLike = None,
    spread: float = 0.0,
    var_x: Optional[float] = None,
    var_x_prime: Optional[float] = None,
) -> ReconciliationResult:
    """Run the logical-layer protocol over all complete blocks of a session.

    Bob's choices come from a private sub-stream and the codewords from a
    public one. CDF variances default to each party's empirical variance.
    """
    _check_mode(mode)
    if method not in METHODS:
        raise InvalidParameterError(f"method must be one of {METHODS}, got {method!r}")
    if d < 1:
        raise InvalidParameterError(f"d must be >= 1, got {d}")
    n = session.n
    if n < d:
        raise InsufficientDataError(f"session has {n} units, fewer than d = {d}")
    if rng is None:
        rng = RandomStream(session.seed or 0)
    n_blocks = n // d
    used = n_blocks * d
    x = np.asarray(session.alice_units[:used], dtype=float).reshape(n_blocks, d)
    xp = np.asarray(session.bob_units[:used], dtype=float).reshape(n_blocks, d)
    vx = var_x if var_x is not None else session.var_x
    vxp = var_x_prime if var_x_prime is not None else session.var_x_prime

    if isinstance(rng, RandomStream):
        bob_gen, public = rng.child(1).generator(), rng.child(2)
    else:
        bob_gen = public = as_generator(rng)
    choices = bob_gen.integers(0, 2, n_blocks).astype(np.int8)
    A, B = granulation_blocks(alphabet, n_blocks, d, mode, public, spread)
    U = np.where(choices[:, None] == 0, A, B)

    cx, k1 = cdf_transform_block(x, vx)
    cxp, k2 = cdf_transform_block(xp, vxp)
    payload = cxp * U
    U_prime = payload / cx
    decisions = decode_blocks(method, U_prime, A, B, alphabet)

    noise = _accounting(x, xp, cx, cxp, U, U_prime)
    errors = int(np.count_nonzero(decisions != choices))
    eta = noise.eta
    if eta is None:
        pe = None
    elif eta > 0:
        pe = predict_error_probability(alphabet, eta)
    else:
        pe = 0.0
    report = DecodeReport(
        blocks=n_blocks,
        bit_errors=errors,
        ber=errors / n_blocks,
        eta_hat=eta,
        predicted_pe=pe,
        clamp_count=k1 + k2,
        method=method,
        granulation_mode=mode,
        dropped_units=n - used,
        decisions=decisions,
        block_values=U_prime.sum(axis=1),
    )
    return ReconciliationResult(report, noise, alphabet, d, choices, A, B, U, U_prime, payload,
                                cx, cxp, session)


def binomial_interval(p: float, n: int, k: float = 3.0):
    half = k * math.sqrt(max(p * (1 - p), 0.0) / n)
    return max(0.0, p - half), min(1.0, p + half)


# --- payload diagnostics -----------------------------------------------------

def sample_payload_populations(a: float, b: float, d: int, n_units: int, variance: float,
                               rng: RngLike, spread: float = 0.0):
    """Payload units ``C(X') * U`` conditioned on Bob choosing a, and on b.

    Takes raw values so that the degenerate ``a == b`` control can be built.
    """
    gen = as_generator(rng)
    n_blocks = -(-n_units // d)
    out = []
    for value in (a, b):
        xp = gen.standard_normal((n_blocks, d)) * math.sqrt(variance)
        c, _ = cdf_transform_block(xp, variance)
        half = spread * abs(a - b) / (2 * d)
        if half and d > 1:
            r = gen.uniform(-half, half, (n_blocks, d))
            r -= r.mean(axis=1, keepdims=True)
        else:
            r = 0.0
        out.append((c * (value / d + r)).ravel()[:n_units])
    return out[0], out[1]


def payload_distinguishability_test(payloads_a, payloads_b) -> dict:
    pa = np.asarray(payloads_a, dtype=float).ravel()
    pb = np.asarray(payloads_b, dtype=float).ravel()
    if pa.size < 1000 or pb.size < 1000:
        raise InsufficientSampleError("need at least 1000 payload units per condition")
    res = sps.ks_2samp(pa, pb)
    return {"ks_two_sample_p": float(res.pvalue), "mean_gap": float(pa.mean() - pb.mean())}
