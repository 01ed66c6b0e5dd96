import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ldpstream.data_targets import GeneratorConfig, gen_synthetic
from ldpstream.errors import DimensionMismatchError, InvalidConfigError
from ldpstream.harness.simulate import FrequencyPopulation, StreamSource, run_stream
from ldpstream.stream_protocols import (APPROXIMATION, PUBLICATION, FrequencyTask, ProtocolKind,
                                        StepOutcome, StreamProtocol, absorption_units,
                                        dissimilarity, publication_allocation,
                                        window_budget_audit, write_trace_csv)


def test_dissimilarity_examples():
    assert dissimilarity([0.6, 0.4], [0.5, 0.5], 0.005) == pytest.approx(0.005)
    assert dissimilarity([0.3, 0.7], [0.3, 0.7], 0.002) == pytest.approx(-0.002)
    with pytest.raises(DimensionMismatchError):
        dissimilarity([0.5, 0.5], [1.0], 0.0)


def test_lbd_first_allocation():
    assert publication_allocation("LBD", 0, 1.0, 20, 1000, [0] * 19, None) == 0.25


def test_lbd_geometric_decay():
    hist = []
    for _ in range(5):
        hist.append(publication_allocation("LBD", 0, 1.0, 20, 1000, hist, None))
    np.testing.assert_allclose(hist, [0.25, 0.125, 0.0625, 0.03125, 0.015625])


def test_absorption_units():
    assert absorption_units(0, None, 5) == 1
    assert absorption_units(3, None, 5) == 4
    assert absorption_units(9, None, 5) == 5
    # a 3-slot publication at t=4 nullifies t=5,6
    assert absorption_units(5, (4, 3), 5) == 0
    assert absorption_units(6, (4, 3), 5) == 0
    assert absorption_units(7, (4, 3), 5) == 1
    assert absorption_units(12, (4, 3), 5) == 5


def test_baseline_allocations():
    assert publication_allocation("LBU", 7, 1.0, 4, 100, [], None) == 0.25
    assert publication_allocation("LPU", 7, 1.0, 4, 101, [], None) == 25
    assert publication_allocation("LSP", 8, 1.0, 4, 100, [], None) == 1.0
    assert publication_allocation("LSP", 9, 1.0, 4, 100, [], None) == 0.0


def test_invalid_protocol_config():
    task = FrequencyTask(2, "kRR")
    with pytest.raises(InvalidConfigError):
        StreamProtocol("LBD", task, 0.0, 5, 100, np.random.default_rng(0))
    with pytest.raises(InvalidConfigError):
        StreamProtocol("LBD", task, 1.0, 0, 100, np.random.default_rng(0))
    with pytest.raises(ValueError):
        StreamProtocol("XYZ", task, 1.0, 5, 100, np.random.default_rng(0))


def _run(kind, w, T=120, n=4000, seed=0, model="LNS"):
    stream = gen_synthetic(GeneratorConfig(model=model, seed=seed), n, T)
    task = FrequencyTask(2, "Ada")
    proto = StreamProtocol(kind, task, 1.0, w, n, np.random.default_rng(seed))
    src = StreamSource(FrequencyPopulation(stream, task, np.random.default_rng(seed + 1)))
    return run_stream(proto, src, T), proto


@pytest.mark.parametrize("kind", [k.value for k in ProtocolKind])
@pytest.mark.parametrize("w", [5, 20])
def test_every_protocol_respects_window(kind, w):
    outcomes, _ = _run(kind, w, model="Pulse")
    assert window_budget_audit(outcomes, 1.0, w, 4000)
    for prev, o in zip(outcomes, outcomes[1:]):
        if o.strategy == APPROXIMATION:
            assert o.publication_budget == 0 and o.publication_population == 0
            np.testing.assert_array_equal(o.release, prev.release)


@pytest.mark.parametrize("kind", ["LBD", "LBA", "LPD", "LPA"])
def test_publication_ranges(kind):
    w, n = 5, 4000
    outcomes, _ = _run(kind, w, n=n, model="Pulse")
    pubs = [o for o in outcomes if o.strategy == PUBLICATION]
    assert pubs
    for o in pubs:
        if kind == "LBD":
            assert 1.0 / 2 ** (w + 1) - 1e-12 <= o.publication_budget <= 0.25
        elif kind == "LBA":
            assert 1.0 / (2 * w) - 1e-12 <= o.publication_budget <= 0.5 + 1e-12
        elif kind == "LPD":
            assert math.floor(n / 2 ** (w + 1)) <= o.publication_population <= n / 4
        else:
            assert math.floor(n / (2 * w)) <= o.publication_population <= n / 2


def test_pd_samples_are_disjoint_and_fresh():
    stream = gen_synthetic(GeneratorConfig(model="Pulse", seed=1), 2000, 60)
    task = FrequencyTask(2, "kRR")
    proto = StreamProtocol("LPA", task, 1.0, 5, 2000, np.random.default_rng(1))
    seen = []

    class Recorder:
        def collect(self, request):
            seen.append((request.t, request.users.copy()))
            return FrequencyPopulation(stream, task, np.random.default_rng(0)).collect(
                request.t, request.epsilon, request.users, False)

    for t in range(60):
        proto.step(t, Recorder())
    last = {}
    by_t = {}
    for t, users in seen:
        assert len(np.unique(users)) == len(users)
        for u in users:
            assert u not in by_t.setdefault(t, set())
            by_t[t].add(u)
            if u in last and last[u] != t:
                assert t - last[u] >= 5
            last[u] = t


def test_lbu_always_publishes():
    outcomes, _ = _run("LBU", 5, T=30)
    assert all(o.strategy == PUBLICATION for o in outcomes)
    assert all(o.budget_used == pytest.approx(0.2) for o in outcomes)


def test_lsp_publishes_window_heads():
    outcomes, _ = _run("LSP", 5, T=30)
    assert [o.t for o in outcomes if o.strategy == PUBLICATION] == list(range(0, 30, 5))


def test_corrupted_trace_fails_audit():
    outcomes, _ = _run("LBU", 5, T=20)
    outcomes[7].budget_used = 0.5
    assert not window_budget_audit(outcomes, 1.0, 5, 4000)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=80), st.integers(1, 12))
def test_lba_absorption_never_overspends(publish_pattern, w):
    """Forcing arbitrary publish/approximate decisions keeps every window within eps/2."""
    last_pub = None
    spent = []
    for t, want in enumerate(publish_pattern):
        eps2 = publication_allocation("LBA", t, 1.0, w, 100, [], last_pub)
        if want and eps2 > 0:
            spent.append(eps2)
            last_pub = (t, absorption_units(t, last_pub, w))
        else:
            spent.append(0.0)
    window = np.convolve(spent, np.ones(min(w, len(spent))), mode="valid")
    assert np.all(window <= 0.5 + 1e-12)


def test_forced_approximation_when_population_exhausted():
    # mark every user as just used so nobody is available
    task = FrequencyTask(2, "kRR")
    proto = StreamProtocol("LPA", task, 1.0, 4, 16, np.random.default_rng(0))
    proto.state.last_used[:] = 0
    stream = gen_synthetic(GeneratorConfig(seed=0), 16, 3)
    src = StreamSource(FrequencyPopulation(stream, task, np.random.default_rng(0)))
    out = proto.step(1, src)
    assert out.strategy == APPROXIMATION and out.err == math.inf


def test_clean_error_decreases_with_population():
    errs = []
    for n in (2000, 40000):
        vals = []
        for seed in range(3):
            outcomes, _ = _run("LBA", 10, T=80, n=n, seed=seed)
            stream = gen_synthetic(GeneratorConfig(seed=seed), n, 80)
            rel = np.stack([o.release for o in outcomes])
            vals.append(np.mean((rel - stream.frequencies()) ** 2))
        errs.append(np.mean(vals))
    assert np.isfinite(errs).all() and errs[1] < errs[0]


def test_trace_csv(tmp_path):
    outcomes, _ = _run("LBD", 5, T=10)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, outcomes)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,strategy,dis_bar,err,budget_used,population_used,release_0,release_1"
    assert len(lines) == 11


def test_step_outcome_defaults():
    o = StepOutcome(0, APPROXIMATION, np.zeros(2), 0.0, 1.0, 0.0, 0)
    assert o.detected is None and o.publication_budget == 0.0
