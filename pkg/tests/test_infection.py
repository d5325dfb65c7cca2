"""Exposure kernels, mean-field slice probability and the end-of-day update."""

import math
from collections import defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from campusepi.engine import _exposure
from campusepi.infection import (
    ContactSet,
    InfectionParams,
    InfectionState,
    InfectionStatus,
    IsolatedAgentError,
    accumulate_slice,
    distance_kernel,
    exposure_probability,
    resolve_day,
    viral_ramp,
)


# independent scalar oracles written straight from the model definition
def ramp_oracle(i, per=7):
    return i / per if i < per else 1.0


def kernel_oracle(d, r=2.0):
    return math.sqrt(r * r - d * d) / r if d <= r else 0.0


def grouped_oracle(contacts, params):
    """Double sum over carrier-day groups: (1-beta)/N * sum_j f(j) * sum_{n in group j} f(d_n)."""
    if not contacts:
        return 0.0
    groups = defaultdict(list)
    for _, d, j in contacts:
        groups[j].append(d)
    total = 0.0
    for j, ds in groups.items():
        total += ramp_oracle(j, params.incubation_days) * sum(kernel_oracle(d, params.radius) for d in ds)
    return min((1 - params.beta) * total / len(contacts), 1.0)


def test_kernels_match_closed_form_at_random_points(rng):
    days = rng.uniform(0, 20, 1000)
    dist = rng.uniform(0, 3, 1000)
    ramp = viral_ramp(days)
    kern = distance_kernel(dist)
    assert max(abs(a - ramp_oracle(i)) for a, i in zip(ramp, days)) < 1e-12
    assert max(abs(a - kernel_oracle(d)) for a, d in zip(kern, dist)) < 1e-12


def test_kernel_edge_values():
    assert distance_kernel(0.0) == 1.0
    assert distance_kernel(2.0) == 0.0
    assert distance_kernel(2.5) == 0.0
    assert viral_ramp(0) == 0.0
    assert viral_ramp(7) == 1.0
    assert viral_ramp(30) == 1.0
    with pytest.raises(ValueError):
        distance_kernel(-0.1)
    with pytest.raises(ValueError):
        viral_ramp(-1)


@given(st.floats(0, 50), st.floats(0, 50))
def test_ramp_is_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= viral_ramp(lo) <= viral_ramp(hi) <= 1.0


@given(st.floats(0, 5), st.floats(0, 5))
def test_kernel_is_non_increasing_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert 1.0 >= distance_kernel(lo) >= distance_kernel(hi) >= 0.0


def test_product_form_equals_grouped_form_on_random_contact_sets(rng):
    params = InfectionParams()
    worst = 0.0
    for _ in range(10_000):
        n = int(rng.integers(0, 21))
        nbrs = [(k + 1, float(rng.uniform(0, 2)), int(rng.integers(0, 12))) for k in range(n)]
        p = exposure_probability(ContactSet(0, nbrs), params)
        worst = max(worst, abs(p - grouped_oracle(nbrs, params)))
    assert worst < 1e-12


def test_exposure_examples():
    params = InfectionParams()
    # one fully infectious neighbour at distance 0 -> probability 1
    assert exposure_probability(ContactSet(0, [(1, 0.0, 7)]), params) == 1.0
    # a non-carrier neighbour halves it (mean over all neighbours)
    assert exposure_probability(ContactSet(0, [(1, 0.0, 7), (2, 0.5, 0)]), params) == pytest.approx(0.5)
    assert exposure_probability(ContactSet(0, []), params) == 0.0
    assert exposure_probability(ContactSet(0, [(1, 0.0, 7)]), InfectionParams(beta=1.0)) == 0.0
    assert exposure_probability(ContactSet(0, [(1, 0.0, 7)]), InfectionParams(beta=0.6)) == pytest.approx(0.4)


def test_contact_set_validation():
    with pytest.raises(ValueError):
        ContactSet(3, [(3, 1.0, 1)])
    with pytest.raises(ValueError):
        exposure_probability(ContactSet(0, [(1, 2.5, 1)]), InfectionParams())


@pytest.mark.parametrize("kw", [
    {"radius": 0}, {"incubation_days": 0}, {"beta": 1.5}, {"threshold": 0.0},
    {"asymptomatic_prob": -0.1}, {"slice_seconds": 0},
])
def test_invalid_params_rejected(kw):
    with pytest.raises(ValueError):
        InfectionParams(**kw)


def test_vectorised_exposure_matches_per_agent_form(rng):
    """The engine's bincount exposure equals building a ContactSet per agent."""
    params = InfectionParams(beta=0.2)
    n = 300
    xy = rng.uniform(0, 15, (n, 2))
    days = np.where(rng.random(n) < 0.3, rng.integers(1, 10, n), 0)
    active = rng.random(n) < 0.9
    sus = days == 0
    p, _ = _exposure(xy, active, days, sus, params)
    for a in range(n):
        if not (active[a] and sus[a]):
            assert p[a] == 0.0
            continue
        nbrs = []
        for b in range(n):
            if b != a and active[b]:
                d = float(np.hypot(*(xy[a] - xy[b])))
                if d <= params.radius:
                    nbrs.append((b, d, int(days[b])))
        assert p[a] == pytest.approx(exposure_probability(ContactSet(a, nbrs), params), abs=1e-12)


def test_daily_maximum_and_isolation_guard():
    params = InfectionParams()
    s = InfectionStatus()
    s = accumulate_slice(s, ContactSet(0, [(1, 1.0, 7)]), params)
    high = s.p_inf_today
    s = accumulate_slice(s, ContactSet(0, [(1, 1.9, 7)]), params)
    assert s.p_inf_today == high
    with pytest.raises(IsolatedAgentError):
        accumulate_slice(InfectionStatus(isolated=True), ContactSet(0, []), params)


def test_day_boundary_order(rng):
    params = InfectionParams()
    latent = InfectionStatus(InfectionState.LATENT, days_carrying=7)
    out = resolve_day(latent, params, rng)
    assert out.state == InfectionState.INFECTED and out.days_carrying == 8
    young = resolve_day(InfectionStatus(InfectionState.LATENT, days_carrying=6), params, rng)
    assert young.state == InfectionState.LATENT and young.days_carrying == 7
    hidden = resolve_day(InfectionStatus(InfectionState.LATENT, days_carrying=9, asymptomatic=True), params, rng)
    assert hidden.state == InfectionState.LATENT
    # reaching the threshold infects with certainty
    sure = resolve_day(InfectionStatus(p_inf_today=1.0), params, rng, day=4)
    assert sure.state == InfectionState.LATENT and sure.days_carrying == 1 and sure.infected_on_day == 4
    assert resolve_day(InfectionStatus(), params, rng).state == InfectionState.SUSCEPTIBLE


def test_resolution_frequency_matches_probability():
    """30 replications of 2000 agents at p = 0.3: mean within 2 sigma / sqrt(30)."""
    params = InfectionParams()
    p = 0.3
    means = []
    for rep in range(30):
        rng = np.random.default_rng([7, rep])
        hits = sum(
            resolve_day(InfectionStatus(p_inf_today=p), params, rng).is_carrier for _ in range(2000)
        )
        means.append(hits / 2000)
    sigma = math.sqrt(p * (1 - p) / 2000)
    assert abs(np.mean(means) - p) < 2 * sigma / math.sqrt(30)


@settings(max_examples=50)
@given(st.floats(0, 1), st.floats(0, 1))
def test_asymptomatic_flag_frequency_is_bounded(q, u):
    params = InfectionParams(asymptomatic_prob=q)
    out = resolve_day(InfectionStatus(p_inf_today=1.0), params, np.random.default_rng(int(u * 1e6)))
    if q == 0.0:
        assert not out.asymptomatic
    if q == 1.0:
        assert out.asymptomatic
