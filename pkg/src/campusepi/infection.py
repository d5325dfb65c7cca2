"""Infection state machine and mean-field exposure.

Infectivity of a carrier grows linearly with the days the virus has been
carried and saturates after the incubation period. Transmission decays
with distance along a circular arc and vanishes beyond the infection
radius. The per-slice infection probability of an individual averages the
products of both factors over every neighbour inside the radius, scaled by
the share of the group that does not protect itself::

    P = (1 - beta) * (1/N) * sum_n ramp(j_n) * kernel(d_n)

A day keeps the maximum of its slice probabilities; a single uniform draw
at the end of the day decides whether the individual becomes a carrier.

Note on the averaged form: the published formula sums the neighbour
proportions of each carried-days group. Grouping the per-neighbour sum
above by days carried gives exactly that, with the distance factor kept
per neighbour. We implement the per-neighbour form.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "ContactSet",
    "InfectionParams",
    "InfectionState",
    "InfectionStatus",
    "IsolatedAgentError",
    "accumulate_slice",
    "distance_kernel",
    "exposure_probability",
    "resolve_day",
    "viral_ramp",
]


class InfectionState(enum.IntEnum):
    SUSCEPTIBLE = 0
    LATENT = 1
    INFECTED = 2


class IsolatedAgentError(RuntimeError):
    """Exposure was requested for an agent that is isolated."""


@dataclass(frozen=True)
class InfectionParams:
    radius: float = 2.0
    incubation_days: int = 7
    threshold: float = 1.0
    beta: float = 0.0
    asymptomatic_prob: float = 0.0
    slice_seconds: int = 60

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.incubation_days < 1:
            raise ValueError("incubation_days must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if not 0.0 <= self.asymptomatic_prob <= 1.0:
            raise ValueError("asymptomatic_prob must lie in [0, 1]")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")
        if self.slice_seconds < 1:
            raise ValueError("slice_seconds must be >= 1")


def viral_ramp(i_day, incubation_days: float = 7):
    """Relative infectivity after carrying the virus for ``i_day`` days."""
    i_day = np.asarray(i_day, dtype=float)
    if np.any(i_day < 0):
        raise ValueError("i_day must be non-negative")
    out = np.minimum(i_day / incubation_days, 1.0)
    return float(out) if out.ndim == 0 else out


def distance_kernel(d, radius: float = 2.0):
    """Distance attenuation ``sqrt(R^2 - d^2) / R`` inside the radius, 0 outside.

    ``d == 0`` (co-located agents) takes the continuous limit 1.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    inside = d <= radius
    out = np.where(inside, np.sqrt(np.maximum(radius * radius - d * d, 0.0)) / radius, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ContactSet:
    """Neighbours of ``center`` within the infection radius.

    ``neighbors`` holds ``(agent_id, distance, days_carrying)`` triples.
    """

    center: int
    neighbors: tuple[tuple[int, float, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "neighbors", tuple(self.neighbors))
        for nid, _, _ in self.neighbors:
            if nid == self.center:
                raise ValueError("a contact set must not contain its center")

    @property
    def size(self) -> int:
        return len(self.neighbors)

    def validate(self, radius: float) -> None:
        for nid, d, j in self.neighbors:
            if d > radius or d < 0:
                raise ValueError(f"neighbour {nid} at {d} m is outside radius {radius}")
            if j < 0:
                raise ValueError(f"neighbour {nid} has negative days carrying")


def exposure_probability(contacts: ContactSet, params: InfectionParams) -> float:
    """Mean-field infection probability for one time slice."""
    n = contacts.size
    if n == 0:
        return 0.0
    contacts.validate(params.radius)
    _, d, j = zip(*contacts.neighbors)
    terms = viral_ramp(np.asarray(j, float), params.incubation_days) * distance_kernel(
        np.asarray(d, float), params.radius
    )
    p = (1.0 - params.beta) * float(np.sum(terms)) / n
    return min(max(p, 0.0), 1.0)


@dataclass
class InfectionStatus:
    state: InfectionState = InfectionState.SUSCEPTIBLE
    days_carrying: int = 0
    asymptomatic: bool = False
    p_inf_today: float = 0.0
    infected_on_day: int | None = None
    isolated: bool = field(default=False, compare=False)

    def __post_init__(self):
        if (self.state == InfectionState.SUSCEPTIBLE) != (self.days_carrying == 0):
            raise ValueError("susceptible exactly when days_carrying == 0")
        if not 0.0 <= self.p_inf_today <= 1.0:
            raise ValueError("p_inf_today must lie in [0, 1]")

    @property
    def is_carrier(self) -> bool:
        return self.state != InfectionState.SUSCEPTIBLE


def accumulate_slice(status: InfectionStatus, contacts: ContactSet, params: InfectionParams) -> InfectionStatus:
    """Fold one slice's exposure into the running daily maximum."""
    if status.isolated:
        raise IsolatedAgentError("isolated agents are not exposed")
    p = exposure_probability(contacts, params)
    if p > status.p_inf_today:
        return replace(status, p_inf_today=p)
    return status


def resolve_day(
    status: InfectionStatus,
    params: InfectionParams,
    rng: np.random.Generator,
    day: int | None = None,
) -> InfectionStatus:
    """End-of-day update.

    Order of events: existing latent carriers past the incubation period are
    diagnosed, carriers age by one day, then susceptibles are infected with
    probability ``p_inf_today`` (certainly once it reaches the threshold).
    Two uniforms are always consumed so streams stay aligned.
    """
    u_inf, u_asym = rng.random(2)
    if status.is_carrier:
        state = status.state
        if (
            state == InfectionState.LATENT
            and status.days_carrying >= params.incubation_days
            and not status.asymptomatic
        ):
            state = InfectionState.INFECTED
        return replace(status, state=state, days_carrying=status.days_carrying + 1, p_inf_today=0.0)
    p = status.p_inf_today
    if p >= params.threshold or u_inf < p:
        return replace(
            status,
            state=InfectionState.LATENT,
            days_carrying=1,
            asymptomatic=bool(u_asym < params.asymptomatic_prob),
            p_inf_today=0.0,
            infected_on_day=day,
        )
    return replace(status, p_inf_today=0.0)
