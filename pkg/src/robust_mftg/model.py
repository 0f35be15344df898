"""LQ mean-field-type game specification and linear policy profiles.

A model holds the time-varying dynamics ``(A_t, Abar_t, B_t, Bbar_t)``, the
state weights ``(Q_t, Qbar_t)`` for ``t = 0..T``, the four noise covariances and
the attenuation level ``gamma``. The adversary enters the dynamics with an
identity coefficient, so its gains are ``m x m``.

Controls follow a single sign convention everywhere in the package::

    u1 = -K1 (x - xbar) - L1 xbar        (minimizer)
    u2 = +K2 (x - xbar) + L2 xbar        (maximizer)
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "LqMftgModel",
    "PolicyProfile",
    "StageGains",
    "closed_loop_matrices",
    "dump_gains",
    "load_gains",
    "load_model",
    "model_from_dict",
    "model_to_dict",
    "random_model",
    "validate_model",
]

SEQUENCE_FIELDS = ("a", "a_bar", "b", "b_bar", "q", "q_bar")
COVARIANCE_FIELDS = ("sigma", "sigma_bar", "sigma0", "sigma0_bar")
SCALAR_FIELDS = ("horizon", "state_dim", "control_dim", "gamma")
REQUIRED_KEYS = ("horizon", "state_dim", "control_dim", "gamma", "a", "b", "q",
                 "q_bar", "sigma", "sigma0")
OPTIONAL_KEYS = ("a_bar", "b_bar", "sigma_bar", "sigma0_bar")

_SYM_TOL = 1e-10


class ConfigError(ValueError):
    """Raised for malformed or invalid model/gain files.

    ``key`` names the offending entry (e.g. ``"gamma"`` or ``"q[0]"``).
    """

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


def _frozen(x) -> np.ndarray:
    try:
        arr = np.array(x, dtype=float)
    except (TypeError, ValueError):
        return x  # left for validate_model to report
    arr.setflags(write=False)
    return arr


def _frozen_seq(xs) -> tuple[np.ndarray, ...]:
    return tuple(_frozen(x) for x in xs)


@dataclass(frozen=True, eq=False)
class LqMftgModel:
    horizon: int
    state_dim: int
    control_dim: int
    a: tuple[np.ndarray, ...]
    a_bar: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    b_bar: tuple[np.ndarray, ...]
    q: tuple[np.ndarray, ...]
    q_bar: tuple[np.ndarray, ...]
    sigma: np.ndarray
    sigma_bar: np.ndarray
    sigma0: np.ndarray
    sigma0_bar: np.ndarray
    gamma: float

    def __post_init__(self):
        for name in SEQUENCE_FIELDS:
            object.__setattr__(self, name, _frozen_seq(getattr(self, name)))
        for name in COVARIANCE_FIELDS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "gamma", float(self.gamma))

    def a_tilde(self, t: int) -> np.ndarray:
        return self.a[t] + self.a_bar[t]

    def b_tilde(self, t: int) -> np.ndarray:
        return self.b[t] + self.b_bar[t]

    def replace(self, **changes) -> "LqMftgModel":
        return dataclasses.replace(self, **changes)

    def with_gamma(self, gamma: float) -> "LqMftgModel":
        return dataclasses.replace(self, gamma=gamma)

    def with_horizon(self, horizon: int) -> "LqMftgModel":
        """Re-horizon a time-invariant model (first-step matrices are reused)."""
        if not self.is_time_invariant():
            raise ValueError("with_horizon requires a time-invariant model")
        T = int(horizon)
        return dataclasses.replace(
            self,
            horizon=T,
            a=(self.a[0],) * T,
            a_bar=(self.a_bar[0],) * T,
            b=(self.b[0],) * T,
            b_bar=(self.b_bar[0],) * T,
            q=(self.q[0],) * T + (self.q[-1],),
            q_bar=(self.q_bar[0],) * T + (self.q_bar[-1],),
        )

    def is_time_invariant(self) -> bool:
        def same(seq):
            return all(np.array_equal(seq[0], s) for s in seq)

        return (all(same(getattr(self, f)) for f in ("a", "a_bar", "b", "b_bar"))
                and same(self.q[:-1]) and same(self.q_bar[:-1]))


class StageGains(NamedTuple):
    """Gains of both players at one timestep."""

    k1: np.ndarray
    k2: np.ndarray
    l1: np.ndarray
    l2: np.ndarray

    @classmethod
    def zeros(cls, m: int, p: int) -> "StageGains":
        return cls(np.zeros((p, m)), np.zeros((m, m)), np.zeros((p, m)), np.zeros((m, m)))


@dataclass(frozen=True, eq=False)
class PolicyProfile:
    """Time-indexed linear gains ``K1_t, K2_t, L1_t, L2_t`` for ``t = 0..T-1``."""

    k1: tuple[np.ndarray, ...]
    k2: tuple[np.ndarray, ...]
    l1: tuple[np.ndarray, ...]
    l2: tuple[np.ndarray, ...]

    def __post_init__(self):
        for name in ("k1", "k2", "l1", "l2"):
            object.__setattr__(self, name, _frozen_seq(getattr(self, name)))
        lengths = {len(self.k1), len(self.k2), len(self.l1), len(self.l2)}
        if len(lengths) != 1:
            raise ValueError(f"gain sequences have unequal lengths {sorted(lengths)}")

    @property
    def horizon(self) -> int:
        return len(self.k1)

    @classmethod
    def zeros(cls, horizon: int, m: int, p: int) -> "PolicyProfile":
        z = StageGains.zeros(m, p)
        return cls((z.k1,) * horizon, (z.k2,) * horizon, (z.l1,) * horizon, (z.l2,) * horizon)

    @classmethod
    def from_stages(cls, stages: Sequence[StageGains]) -> "PolicyProfile":
        return cls(*(tuple(s[i] for s in stages) for i in range(4)))

    def stage(self, t: int) -> StageGains:
        return StageGains(self.k1[t], self.k2[t], self.l1[t], self.l2[t])

    def stages(self) -> list[StageGains]:
        return [self.stage(t) for t in range(self.horizon)]

    def with_stage(self, t: int, gains: StageGains) -> "PolicyProfile":
        stages = self.stages()
        stages[t] = StageGains(*(np.asarray(g, dtype=float) for g in gains))
        return PolicyProfile.from_stages(stages)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for seq in (self.k1, self.k2, self.l1, self.l2)
                   for g in seq)


# ---------------------------------------------------------------------------
# validation


def _shape_of(x) -> tuple | None:
    try:
        arr = np.asarray(x, dtype=float)
    except (TypeError, ValueError):
        return None
    return arr.shape


def _check_sym(name: str, mat: np.ndarray, definite: bool, out: list[str]) -> None:
    if not np.all(np.isfinite(mat)):
        out.append(f"{name} has non-finite entries")
        return
    if np.max(np.abs(mat - mat.T), initial=0.0) > _SYM_TOL * max(1.0, np.max(np.abs(mat))):
        out.append(f"{name} not symmetric")
        return
    eig = np.linalg.eigvalsh((mat + mat.T) / 2)
    scale = max(1.0, float(np.max(np.abs(eig))))
    if definite and eig.min() <= 0:
        out.append(f"{name} not positive definite (min eigenvalue {eig.min():.3g})")
    elif not definite and eig.min() < -_SYM_TOL * scale:
        out.append(f"{name} not positive semi-definite (min eigenvalue {eig.min():.3g})")


def validate_model(model: LqMftgModel) -> list[str]:
    """Return every invariant violation of ``model`` as ``"<path> <reason>"``.

    An empty list means the model is valid. Never raises.
    """
    out: list[str] = []
    try:
        T, m, p = model.horizon, model.state_dim, model.control_dim
    except AttributeError as exc:  # pragma: no cover - not a model at all
        return [f"model: {exc}"]
    for name, val in (("horizon", T), ("state_dim", m), ("control_dim", p)):
        if not isinstance(val, (int, np.integer)) or isinstance(val, bool) or val < 1:
            out.append(f"{name} must be an integer >= 1 (got {val!r})")
    if out:
        return out
    gamma = getattr(model, "gamma", None)
    if not isinstance(gamma, (int, float)) or not np.isfinite(gamma) or gamma <= 0:
        out.append(f"gamma must be a positive real (got {gamma!r})")

    expected = {"a": (T, (m, m)), "a_bar": (T, (m, m)), "b": (T, (m, p)),
                "b_bar": (T, (m, p)), "q": (T + 1, (m, m)), "q_bar": (T + 1, (m, m))}
    for name, (length, shape) in expected.items():
        seq = getattr(model, name, None)
        if seq is None or len(seq) != length:
            n = None if seq is None else len(seq)
            out.append(f"{name} has length {n}, expected {length}")
            continue
        for t, mat in enumerate(seq):
            s = _shape_of(mat)
            if s != shape:
                out.append(f"{name}[{t}] has shape {s}, expected {shape} (dimension mismatch)")
            elif not np.all(np.isfinite(mat)):
                out.append(f"{name}[{t}] has non-finite entries")
            elif name in ("q", "q_bar"):
                _check_sym(f"{name}[{t}]", np.asarray(mat), True, out)
    for name in COVARIANCE_FIELDS:
        mat = getattr(model, name, None)
        s = _shape_of(mat)
        if s != (m, m):
            out.append(f"{name} has shape {s}, expected {(m, m)} (dimension mismatch)")
        else:
            _check_sym(name, np.asarray(mat), False, out)
    return out


def validate_policy(policy: PolicyProfile, model: LqMftgModel) -> list[str]:
    out = []
    T, m, p = model.horizon, model.state_dim, model.control_dim
    if policy.horizon != T:
        out.append(f"policy horizon {policy.horizon} != model horizon {T}")
        return out
    shapes = {"k1": (p, m), "k2": (m, m), "l1": (p, m), "l2": (m, m)}
    for name, shape in shapes.items():
        for t, g in enumerate(getattr(policy, name)):
            if g.shape != shape:
                out.append(f"{name}[{t}] has shape {g.shape}, expected {shape}")
            elif not np.all(np.isfinite(g)):
                out.append(f"{name}[{t}] has non-finite entries")
    return out


def closed_loop_matrices(model: LqMftgModel, policy: PolicyProfile
                         ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Closed-loop transitions of the deviation and mean processes.

    Returns ``(A_t - B_t K1_t + K2_t, Atilde_t - Btilde_t L1_t + L2_t)`` for every t.
    """
    problems = validate_policy(policy, model)
    if problems:
        raise ValueError("; ".join(problems))
    dev, mean = [], []
    for t in range(model.horizon):
        dev.append(model.a[t] - model.b[t] @ policy.k1[t] + policy.k2[t])
        mean.append(model.a_tilde(t) - model.b_tilde(t) @ policy.l1[t] + policy.l2[t])
    return dev, mean


# ---------------------------------------------------------------------------
# configuration files


def _matrix_or_sequence(key: str, value, length: int, shape: tuple[int, int]) -> list[np.ndarray]:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key, f"not a numeric matrix ({exc})") from None
    if arr.ndim == 2:
        return [arr] * length
    if arr.ndim == 3:
        if arr.shape[0] != length:
            raise ConfigError(key, f"expected {length} matrices, got {arr.shape[0]}")
        return list(arr)
    raise ConfigError(key, f"expected a matrix or an array of matrices, got ndim={arr.ndim}")


def model_from_dict(cfg: dict, validate: bool = True) -> LqMftgModel:
    """Build a model from the parsed config tree (see README for the schema)."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "expected a JSON object")
    unknown = sorted(set(cfg) - set(REQUIRED_KEYS) - set(OPTIONAL_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in REQUIRED_KEYS:
        if key not in cfg:
            raise ConfigError(key, "missing required key")
    ints = {}
    for key in ("horizon", "state_dim", "control_dim"):
        val = cfg[key]
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise ConfigError(key, f"expected an integer >= 1, got {val!r}")
        ints[key] = val
    gamma = cfg["gamma"]
    if not isinstance(gamma, (int, float)) or isinstance(gamma, bool):
        raise ConfigError("gamma", f"expected a number, got {gamma!r}")
    T, m, p = ints["horizon"], ints["state_dim"], ints["control_dim"]
    zeros = {"a_bar": np.zeros((m, m)), "b_bar": np.zeros((m, p)),
             "sigma_bar": np.zeros((m, m)), "sigma0_bar": np.zeros((m, m))}
    shapes = {"a": (m, m), "a_bar": (m, m), "b": (m, p), "b_bar": (m, p),
              "q": (m, m), "q_bar": (m, m)}
    seqs = {}
    for key in SEQUENCE_FIELDS:
        length = T + 1 if key in ("q", "q_bar") else T
        seqs[key] = _matrix_or_sequence(key, cfg.get(key, zeros.get(key)), length, shapes[key])
    covs = {}
    for key in COVARIANCE_FIELDS:
        try:
            covs[key] = np.asarray(cfg.get(key, zeros.get(key)), dtype=float)
        except (TypeError, ValueError) as exc:
            raise ConfigError(key, f"not a numeric matrix ({exc})") from None
        if covs[key].ndim != 2:
            raise ConfigError(key, "expected a single matrix")
    model = LqMftgModel(horizon=T, state_dim=m, control_dim=p, gamma=float(gamma),
                        **seqs, **covs)
    if validate:
        problems = validate_model(model)
        if problems:
            first = problems[0]
            raise ConfigError(first.split(" ", 1)[0], "; ".join(problems))
    return model


def load_model(path: str | Path) -> LqMftgModel:
    """Parse and validate a JSON model configuration file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read file ({exc.strerror})") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"malformed JSON: {exc}") from None
    return model_from_dict(cfg)


def model_to_dict(model: LqMftgModel) -> dict:
    """Serialize with every sequence written out in full (no shorthand)."""
    out: dict = {"horizon": model.horizon, "state_dim": model.state_dim,
                 "control_dim": model.control_dim, "gamma": model.gamma}
    for key in SEQUENCE_FIELDS:
        out[key] = [mat.tolist() for mat in getattr(model, key)]
    for key in COVARIANCE_FIELDS:
        out[key] = getattr(model, key).tolist()
    return out


def gains_to_dict(policy: PolicyProfile) -> dict:
    return {name: [g.tolist() for g in getattr(policy, name)] for name in ("k1", "k2", "l1", "l2")}


def dump_gains(policy: PolicyProfile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(gains_to_dict(policy), indent=1), encoding="utf-8")


def load_gains(path: str | Path) -> PolicyProfile:
    cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = sorted(set(cfg) - {"k1", "k2", "l1", "l2"})
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for key in ("k1", "k2", "l1", "l2"):
        if key not in cfg:
            raise ConfigError(key, "missing required key")
    return PolicyProfile(*(np.asarray(cfg[k], dtype=float) for k in ("k1", "k2", "l1", "l2")))


# ---------------------------------------------------------------------------
# instance generation


def _spd(rng: np.random.Generator, n: int, lo: float, hi: float) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (q * rng.uniform(lo, hi, size=n)) @ q.T


def random_model(
    rng: np.random.Generator | int,
    horizon: int = 3,
    m: int = 2,
    p: int = 2,
    gamma: float | None = None,
    a_scale: float = 0.6,
    b_scale: float = 1.0,
    q_range: tuple[float, float] = (0.5, 1.5),
    noise_scale: float = 0.1,
    time_invariant: bool = True,
    gamma_margin: float = 2.0,
) -> LqMftgModel:
    """Draw a random well-posed model.

    ``a_scale`` is the spectral radius target of ``A`` (``Abar`` is a smaller
    perturbation), ``b_scale`` scales ``B``. When ``gamma`` is None it is set to
    ``gamma_margin`` times the smallest level at which the zero-noise Riccati
    recursion keeps ``gamma^2 I - M_t`` positive definite (found by
    stepping up in factors of 1.25).
    """
    rng = np.random.default_rng(rng)

    def draw_a():
        g = rng.standard_normal((m, m))
        return a_scale * g / max(np.max(np.abs(np.linalg.eigvals(g))), 1e-12)

    def draw_b():
        return b_scale * (np.eye(m, p) + 0.3 * rng.standard_normal((m, p)))

    def seq(draw, n):
        if time_invariant:
            x = draw()
            return [x] * n
        return [draw() for _ in range(n)]

    a = seq(draw_a, horizon)
    a_bar = seq(lambda: 0.3 * draw_a(), horizon)
    b = seq(draw_b, horizon)
    b_bar = seq(lambda: 0.2 * b_scale * rng.standard_normal((m, p)), horizon)
    q = seq(lambda: _spd(rng, m, *q_range), horizon) + [_spd(rng, m, *q_range)]
    q_bar = seq(lambda: _spd(rng, m, *q_range), horizon) + [_spd(rng, m, *q_range)]
    covs = {name: noise_scale * _spd(rng, m, 0.5, 1.5) for name in COVARIANCE_FIELDS}
    model = LqMftgModel(horizon=horizon, state_dim=m, control_dim=p, a=a, a_bar=a_bar,
                        b=b, b_bar=b_bar, q=q, q_bar=q_bar, gamma=1.0, **covs)
    if gamma is None:
        from .riccati import solve_riccati  # local import: riccati depends on model

        g = 1.0
        while not solve_riccati(model.with_gamma(g)).cond1_holds:
            g *= 1.25
        gamma = gamma_margin * g
    return model.with_gamma(gamma)

