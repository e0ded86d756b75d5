"""The five two-chunk systems: jump-process rate tables and fluid-limit fields.

Component order per model (used everywhere a state is a plain vector):

=========  ================
plain      (X, Y)
dfc        (A, B, X, Y)
friedman   (X, Y)
delayed    (A, B, X, Y)
enforced   (Z, X, Y)
=========  ================

X (Y) counts peers holding only chunk 0 (1); A (B) counts empty peers that
have committed to chunk 0 (1) first; Z is the waiting room of empty peers.
The persistent seed is not a state component; it shows up only as the
+1/2 and +1 corrections inside the rates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """A state or parameter lies outside the domain of a model."""


class ModelKind(enum.Enum):
    PLAIN = "plain"
    DFC = "dfc"
    FRIEDMAN = "friedman"
    DELAYED = "delayed"
    ENFORCED = "enforced"

    @property
    def labels(self) -> tuple[str, ...]:
        return _LABELS[self]

    @property
    def dimension(self) -> int:
        return len(_LABELS[self])

    @classmethod
    def parse(cls, name: "str | ModelKind") -> "ModelKind":
        if isinstance(name, ModelKind):
            return name
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown model kind {name!r} (expected one of {valid})") from None


_LABELS = {
    ModelKind.PLAIN: ("X", "Y"),
    ModelKind.DFC: ("A", "B", "X", "Y"),
    ModelKind.FRIEDMAN: ("X", "Y"),
    ModelKind.DELAYED: ("A", "B", "X", "Y"),
    ModelKind.ENFORCED: ("Z", "X", "Y"),
}


@dataclass(frozen=True)
class TransitionRule:
    """One arrow of a rate diagram: jump vector, rate function and label."""

    delta: tuple[int, ...]
    rate: Callable[[Sequence[int]], float]
    label: str

    def __post_init__(self):
        nonzero = [v for v in self.delta if v != 0]
        if not nonzero or len(nonzero) > 2 or any(abs(v) != 1 for v in nonzero):
            raise ValueError(f"invalid jump vector {self.delta}")
        if len(nonzero) == 2 and sum(nonzero) != 0:
            raise ValueError(f"two-component jump must be e_i - e_j, got {self.delta}")

    @property
    def is_arrival(self) -> bool:
        return sum(self.delta) == 1 and min(self.delta) == 0


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    lam: float
    labels: tuple[str, ...]
    transitions: tuple[TransitionRule, ...]
    field: Callable[[np.ndarray], np.ndarray]

    @property
    def dimension(self) -> int:
        return len(self.labels)

    @property
    def name(self) -> str:
        return self.kind.value

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def state(self, **counts) -> tuple:
        """Build a state vector from keyword components, e.g. ``state(X=5, Y=5, Z=4)``."""
        unknown = set(counts) - set(self.labels)
        if unknown:
            raise ValueError(f"{self.name} has no components {sorted(unknown)}")
        return tuple(counts.get(label, 0) for label in self.labels)

    def check_point(self, point) -> np.ndarray:
        """Validate a continuous state and return it as a float array.

        The closed orthant is admitted (the fields extend continuously to the
        faces, and the published Delayed Friedman run starts with a = b = 0);
        negative or non-finite coordinates and x + y = 0 are domain errors.
        """
        s = np.asarray(point, dtype=float)
        if s.shape != (self.dimension,):
            raise DomainError(f"{self.name} expects {self.dimension} components, got shape {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DomainError(f"non-finite coordinate in {s.tolist()}")
        if np.any(s < 0):
            raise DomainError(f"negative coordinate in {s.tolist()}")
        ix, iy = self.index("X"), self.index("Y")
        if s[ix] + s[iy] <= 0:
            raise DomainError(f"x + y must be positive, got state {s.tolist()}")
        return s

    def check_state(self, state) -> tuple[int, ...]:
        s = tuple(int(v) for v in state)
        if len(s) != self.dimension:
            raise DomainError(f"{self.name} expects {self.dimension} components, got {len(s)}")
        if any(v != w for v, w in zip(s, state)):
            raise DomainError(f"non-integer count in {tuple(state)}")
        if min(s) < 0:
            raise DomainError(f"negative count in {s}")
        return s


# -- rate functions ---------------------------------------------------------
# Module-level functions bound with functools.partial keep ModelSpec picklable.

def _const(c, s):
    return c


# Rates are written without float literals so that Fraction states give exact
# rational rates (used to certify identities between rate tables).

def _contact(lam, i, ix, iy, s):
    # lam * (N_i + 1/2) / (X + Y + 1): random contact sees a holder of chunk i
    return lam * (2 * s[i] + 1) / (2 * (s[ix] + s[iy] + 1))


def _depart_x(ix, iy, s):
    return s[ix] * (s[iy] + 1) / (s[ix] + s[iy] + 1)


def _depart_y(ix, iy, s):
    return (s[ix] + 1) * s[iy] / (s[ix] + s[iy] + 1)


def _first_chunk(i_src, i_dst, ix, iy, s):
    # A -> X at A (X + 1) / (X + Y + 1)
    return s[i_src] * (s[i_dst] + 1) / (s[ix] + s[iy] + 1)


def _triple_contact(pow_x, pow_y, iz, ix, iy, s):
    hx = 2 * s[ix] + 1
    hy = 2 * s[iy] + 1
    # 3 (X+1/2)^px (Y+1/2)^py Z / D^3 with px + py = 3
    return 3 * hx**pow_x * hy**pow_y * s[iz] / (8 * (s[ix] + s[iy] + 1) ** 3)


def _unit(d, i, sign=1):
    v = [0] * d
    v[i] = sign
    return tuple(v)


def _move(d, src, dst):
    v = [0] * d
    v[src] = -1
    v[dst] = 1
    return tuple(v)


def _departures(d, ix, iy):
    return [
        TransitionRule(_unit(d, ix, -1), partial(_depart_x, ix, iy), "X-departs"),
        TransitionRule(_unit(d, iy, -1), partial(_depart_y, ix, iy), "Y-departs"),
    ]


def _rules(kind: ModelKind, lam: float) -> list[TransitionRule]:
    d = kind.dimension
    if kind is ModelKind.PLAIN:
        x, y = 0, 1
        return [
            TransitionRule(_unit(d, x), partial(_contact, lam, x, x, y), "arrival-to-X"),
            TransitionRule(_unit(d, y), partial(_contact, lam, y, x, y), "arrival-to-Y"),
        ] + _departures(d, x, y)
    if kind is ModelKind.FRIEDMAN:
        x, y = 0, 1
        return [
            TransitionRule(_unit(d, x), partial(_contact, lam, y, x, y), "arrival-to-X"),
            TransitionRule(_unit(d, y), partial(_contact, lam, x, x, y), "arrival-to-Y"),
        ] + _departures(d, x, y)
    if kind in (ModelKind.DFC, ModelKind.DELAYED):
        a, b, x, y = 0, 1, 2, 3
        if kind is ModelKind.DFC:
            to_a = partial(_const, lam / 2)
            to_b = partial(_const, lam / 2)
        else:
            to_a = partial(_contact, lam, y, x, y)
            to_b = partial(_contact, lam, x, x, y)
        return [
            TransitionRule(_unit(d, a), to_a, "arrival-to-A"),
            TransitionRule(_unit(d, b), to_b, "arrival-to-B"),
            TransitionRule(_move(d, a, x), partial(_first_chunk, a, x, x, y), "A-to-X"),
            TransitionRule(_move(d, b, y), partial(_first_chunk, b, y, x, y), "B-to-Y"),
        ] + _departures(d, x, y)
    if kind is ModelKind.ENFORCED:
        z, x, y = 0, 1, 2
        return [
            TransitionRule(_unit(d, z), partial(_const, lam), "arrival-to-Z"),
            TransitionRule(_move(d, z, x), partial(_triple_contact, 1, 2, z, x, y), "Z-to-X"),
            TransitionRule(_move(d, z, y), partial(_triple_contact, 2, 1, z, x, y), "Z-to-Y"),
        ] + _departures(d, x, y)
    raise AssertionError(kind)


# -- large-system-limit fields -----------------------------------------------
# These take an already-validated float array; ModelSpec.check_point guards
# the public entry point.

def _plain_field(lam, s):
    x, y = s.tolist()
    r = x + y
    return np.array([(lam - y) * x / r, (lam - x) * y / r])


def _friedman_field(lam, s):
    x, y = s.tolist()
    r = x + y
    return np.array([(lam - x) * y / r, (lam - y) * x / r])


def _dfc_field(lam, s):
    a, b, x, y = s.tolist()
    r = x + y
    return np.array([
        lam / 2 - a * x / r,
        lam / 2 - b * y / r,
        (a - y) * x / r,
        (b - x) * y / r,
    ])


def _delayed_field(lam, s):
    a, b, x, y = s.tolist()
    r = x + y
    return np.array([
        (lam * y - a * x) / r,
        (lam * x - b * y) / r,
        (a - y) * x / r,
        (b - x) * y / r,
    ])


def _enforced_field(lam, s):
    z, x, y = s.tolist()
    r = x + y
    xy = x * y
    gain = 3.0 * xy * z / r**3
    loss = xy / r
    return np.array([lam - 3.0 * xy * z / r**2, gain * y - loss, gain * x - loss])


_FIELDS = {
    ModelKind.PLAIN: _plain_field,
    ModelKind.DFC: _dfc_field,
    ModelKind.FRIEDMAN: _friedman_field,
    ModelKind.DELAYED: _delayed_field,
    ModelKind.ENFORCED: _enforced_field,
}


def _check_lambda(lam) -> float:
    try:
        lam = float(lam)
    except (TypeError, ValueError):
        raise DomainError(f"arrival rate must be a real number, got {lam!r}") from None
    if not math.isfinite(lam) or lam <= 0:
        raise DomainError(f"arrival rate must be positive and finite, got {lam}")
    return lam


def build_model(kind: "ModelKind | str", lam: float) -> ModelSpec:
    """Return the rate table and fluid-limit field of one of the five systems."""
    kind = ModelKind.parse(kind)
    lam = _check_lambda(lam)
    return ModelSpec(
        kind=kind,
        lam=lam,
        labels=kind.labels,
        transitions=tuple(_rules(kind, lam)),
        field=partial(_FIELDS[kind], lam),
    )


def transition_rates(model: ModelSpec, state) -> list[tuple[tuple[int, ...], float, str]]:
    """Evaluate every rule at ``state``; rules with zero rate are dropped."""
    s = model.check_state(state)
    out = []
    for rule in model.transitions:
        r = rule.rate(s)
        if r > 0:
            out.append((rule.delta, float(r), rule.label))
    return out


def vector_field(model: ModelSpec, point) -> np.ndarray:
    return model.field(model.check_point(point))


# -- (z, rho, beta) coordinates of the Enforced Friedman limit ---------------

def to_transformed(x: float, y: float) -> tuple[float, float]:
    """Map chunk-holder masses to total mass ``rho`` and squared imbalance ``beta``."""
    if not (x > 0 and y > 0 and math.isfinite(x) and math.isfinite(y)):
        raise DomainError(f"x and y must be positive, got ({x}, {y})")
    rho = x + y
    return rho, ((x - y) / rho) ** 2


def from_transformed(rho: float, beta: float, sign: int = 1) -> tuple[float, float]:
    """Inverse of :func:`to_transformed`; ``sign`` is the sign of x - y."""
    if not (rho > 0 and math.isfinite(rho)):
        raise DomainError(f"rho must be positive, got {rho}")
    if not 0 <= beta < 1:
        raise DomainError(f"beta must lie in [0, 1), got {beta}")
    if sign not in (1, -1):
        raise DomainError(f"sign must be +1 or -1, got {sign}")
    r = sign * math.sqrt(beta)
    return rho * (1 + r) / 2, rho * (1 - r) / 2


def enforced_to_transformed(state) -> np.ndarray:
    """(z, x, y) -> (z, rho, beta)."""
    z, x, y = (float(v) for v in state)
    return np.array([z, *to_transformed(x, y)])


def transformed_field(state) -> np.ndarray:
    """Right-hand side of the Enforced Friedman limit in (z, rho, beta), with lambda = 1.

    For other arrival rates rescale time; lambda only scales the system.
    """
    z, rho, beta = (float(v) for v in state)
    if not (z > 0 and rho > 0 and 0 <= beta < 1):
        raise DomainError(f"need z > 0, rho > 0, 0 <= beta < 1, got ({z}, {rho}, {beta})")
    q = 1.0 - beta
    return np.array([
        1.0 - 0.75 * q * z,
        0.25 * q * (3.0 * z - 2.0 * rho),
        -beta * q * (3.0 * z / rho - 1.0),
    ])


# -- consistency of rate table and field --------------------------------------

def limit_consistency_residual(model: ModelSpec, point, N: int) -> np.ndarray:
    """Distance between the N-scaled mean drift of the jump process and the field.

    Arrival rates are scaled by ``N``, the state is ``floor(N * point)``, and
    the drift is divided by ``N``; the residual vanishes like 1/N.
    """
    if N < 10:
        raise DomainError(f"N must be at least 10, got {N}")
    s = model.check_point(point)
    if np.any(s <= 0):
        raise DomainError(f"limit consistency needs an interior point, got {s.tolist()}")
    scaled = build_model(model.kind, N * model.lam)
    state = tuple(math.floor(N * v) for v in s)
    drift = np.zeros(model.dimension)
    for rule in scaled.transitions:
        drift += np.asarray(rule.delta) * rule.rate(state)
    return np.abs(drift / N - model.field(s))
