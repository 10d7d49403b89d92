from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from translog.drain import mine_corpus
from translog.logformat import SYNTH_FORMAT, LineFormat
from translog.synth import (ANOMALY_CLASSES, DomainSpec, SynthConfigError,
                            anomaly_sigma_bound, burst_start_probability,
                            expected_anomalous_moments, generate, make_domain, paired_domains,
                            write_corpus)

SHARED = ["unusual_end_of_program", "program_not_running", "hardware_failure", "memory_error"]


@pytest.fixture(scope="module")
def pair():
    return paired_domains(SHARED, (1, 2))


def test_same_spec_same_bytes(pair, tmp_path):
    src, _ = pair
    a = write_corpus(tmp_path / "a", "s", *generate(src, 500))
    b = write_corpus(tmp_path / "b", "s", *generate(src, 500))
    assert a[0].read_bytes() == b[0].read_bytes()
    assert a[1].read_bytes() == b[1].read_bytes()


def test_zero_rate_has_no_anomalies():
    spec = make_domain("x", "source", SHARED, 3, anomaly_rate=0.0)
    lines, truth = generate(spec, 2000)
    assert all(t is None for t in truth)
    assert all(ln.startswith("- ") for ln in lines)


def test_anomaly_count_within_four_sigma(pair):
    lines, truth = generate(pair[0], 20000)
    count = sum(t is not None for t in truth)
    assert anomaly_sigma_bound(count, 0.05, 20000)


def test_burst_moments_match_simulation():
    # independent oracle: Monte Carlo of the same burst process
    q = burst_start_probability(0.05)
    rng = np.random.default_rng(0)
    counts = []
    for _ in range(4000):
        n, c = 0, 0
        while n < 200:
            if rng.random() < q:
                length = int(rng.integers(1, 4))
                take = min(length, 200 - n)
                c += take
                n += take
            else:
                n += 1
        counts.append(c)
    mean, var = expected_anomalous_moments(0.05, 200)
    assert np.mean(counts) == pytest.approx(mean, rel=0.03)
    assert np.var(counts) == pytest.approx(var, rel=0.1)


def test_long_run_rate():
    mean, _ = expected_anomalous_moments(0.05, 20000)
    assert mean / 20000 == pytest.approx(0.05, rel=0.01)


def test_vocabularies_disjoint(pair):
    src, tgt = pair
    assert not src.literal_vocab() & tgt.literal_vocab()


def test_every_shared_class_appears(pair):
    for spec in pair:
        _, truth = generate(spec, 10000)
        assert set(SHARED) <= set(t for t in truth if t)


def test_mined_template_tables_disjoint(pair):
    fmt = LineFormat.parse(SYNTH_FORMAT)
    tables = []
    for spec in pair:
        lines, _ = generate(spec, 3000)
        templates, _ = mine_corpus([fmt.split(ln)["Content"] for ln in lines])
        tables.append({tuple(t.tokens) for t in templates})
    assert not tables[0] & tables[1]


def test_labels_match_ground_truth(pair):
    lines, truth = generate(pair[1], 1000)
    for ln, t in zip(lines, truth):
        assert ln.split()[0] == ("-" if t is None else t)


def test_class_weights_skew_target():
    _, tgt = paired_domains(SHARED, (1, 2), target_class_weights={"memory_error": 0.05})
    _, truth = generate(tgt, 20000)
    classes = [t for t in truth if t]
    assert classes.count("memory_error") < classes.count("hardware_failure") / 4


def test_ground_truth_file(pair, tmp_path):
    _, gt = write_corpus(tmp_path, "t", *generate(pair[1], 50))
    rows = [json.loads(x) for x in gt.read_text().splitlines()]
    assert [r["index"] for r in rows] == list(range(50))


def test_validation():
    with pytest.raises(SynthConfigError):
        make_domain("x", "source", SHARED, 0, anomaly_rate=1.0)
    with pytest.raises(SynthConfigError):
        make_domain("x", "nope", SHARED, 0)
    with pytest.raises(SynthConfigError):
        paired_domains(SHARED[:1])
    with pytest.raises(SynthConfigError):
        DomainSpec("x", [], [["a"], ["b"]], [("not_a_class", ["c"])])
    with pytest.raises(SynthConfigError):
        generate(make_domain("x", "source", SHARED, 0), 0)


@given(st.integers(0, 10_000), st.integers(1, 300))
def test_generate_length_and_labels(seed, n):
    spec = make_domain("x", "target", SHARED, seed, num_normal=10)
    lines, truth = generate(spec, n)
    assert len(lines) == len(truth) == n
    assert set(t for t in truth if t) <= set(ANOMALY_CLASSES)
