import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from podd.core import (Configuration, Discipline, FIFO, Job, LIFO_PR, PS,
                       RngStream, ServerState, ServiceDistribution,
                       discipline_from_name, empirical_measure,
                       sample_service, tail_counts)


def config_from_lengths(lengths):
    return Configuration.from_lengths(
        lengths, ServiceDistribution.exponential(), RngStream(0))


class TestTailCounts:
    def test_all_empty(self):
        tc = tail_counts(Configuration.empty(3), 2)
        assert tc.pi == (3, 0, 0)

    def test_hand_count(self):
        # lengths (3, 1, 2): one server >= 3, two >= 2, all >= 1
        tc = tail_counts(config_from_lengths([3, 1, 2]), 3)
        assert tc.pi == (3, 3, 2, 1)

    def test_uniform_level(self):
        k = 4
        tc = tail_counts(config_from_lengths([k] * 7), 6)
        assert tc.pi == (7, 7, 7, 7, 7, 0, 0)

    def test_get_past_end_is_zero(self):
        tc = tail_counts(Configuration.empty(3), 1)
        assert tc.get(17) == 0

    def test_k_max_validated(self):
        with pytest.raises(ValueError):
            tail_counts(Configuration.empty(3), 0)

    @given(st.lists(st.integers(min_value=0, max_value=6), min_size=1, max_size=20))
    def test_monotone_and_top(self, lengths):
        tc = tail_counts(config_from_lengths(lengths), 8)
        assert tc.pi[0] == len(lengths)
        assert all(a >= b for a, b in zip(tc.pi, tc.pi[1:]))


class TestEmpiricalMeasure:
    def test_all_empty(self):
        m = empirical_measure(Configuration.empty(3), 2).m
        assert m == (1.0, 0.0, 0.0)

    def test_hand_values(self):
        m = empirical_measure(config_from_lengths([3, 1, 2]), 3).m
        assert m == (0.0, 1 / 3, 1 / 3, 1 / 3)

    def test_truncation_rejected(self):
        with pytest.raises(ValueError):
            empirical_measure(config_from_lengths([5, 0]), 3)

    @given(st.lists(st.integers(min_value=0, max_value=5), min_size=1, max_size=15))
    def test_partition(self, lengths):
        cfg = config_from_lengths(lengths)
        m = empirical_measure(cfg, 6).m
        assert math.isclose(sum(m), 1.0, abs_tol=1e-12)
        tc = tail_counts(cfg, 7)
        # integer identity: pi_k - pi_{k+1} = N * m_k
        for k, mk in enumerate(m):
            assert tc.get(k) - tc.get(k + 1) == round(cfg.N * mk)


class TestJobs:
    def test_residual_positive(self):
        with pytest.raises(ValueError):
            Job(0, 0.0, 0.0)

    def test_config_needs_dist_for_jobs(self):
        with pytest.raises(ValueError):
            Configuration.from_lengths([1, 0])


DISTS = [
    ServiceDistribution.exponential(),
    ServiceDistribution.deterministic(),
    ServiceDistribution.erlang(4),
    ServiceDistribution.hyperexponential_cv2(4.0),
    ServiceDistribution.hyperexponential([0.9, 0.1], [2.0, 0.4]),
    ServiceDistribution.lognormal(0.8),
    ServiceDistribution.weibull(1.7),
]


class TestServiceDistributions:
    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
    def test_analytic_mean_is_one(self, dist):
        assert abs(dist.mean() - 1.0) < 1e-12

    def test_deterministic_is_exact(self):
        d = ServiceDistribution.deterministic()
        assert sample_service(d, RngStream(1)) == 1.0

    def test_exponential_sample_mean(self):
        gen = RngStream(11).child("mean").generator()
        x = ServiceDistribution.exponential().sample(gen, 10**6)
        assert 0.99 < x.mean() < 1.01

    def test_erlang_variance(self):
        gen = RngStream(12).child("var").generator()
        x = ServiceDistribution.erlang(4).sample(gen, 10**6)
        assert abs(x.var() - 0.25) < 0.01
        assert ServiceDistribution.erlang(4).variance() == 0.25

    def test_hyperexponential_cv2(self):
        d = ServiceDistribution.hyperexponential_cv2(4.0)
        assert abs(d.variance() - 4.0) < 1e-9
        gen = RngStream(13).generator()
        x = d.sample(gen, 10**6)
        assert abs(x.mean() - 1.0) < 0.02

    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
    def test_sample_mean_matches(self, dist):
        gen = RngStream(14).child(dist.kind).generator()
        x = np.atleast_1d(dist.sample(gen, 200_000))
        tol = 0.01 + 0.02 * math.sqrt(max(dist.variance(), 1.0))
        assert abs(float(np.mean(x)) - 1.0) < tol

    @pytest.mark.parametrize("dist", DISTS, ids=lambda d: d.kind)
    def test_json_round_trip(self, dist):
        assert ServiceDistribution.from_json(dist.to_json()) == dist

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            ServiceDistribution.erlang(0)
        with pytest.raises(ValueError):
            ServiceDistribution.hyperexponential([1.0], [-2.0])
        with pytest.raises(ValueError):
            ServiceDistribution.hyperexponential_cv2(0.5)


class TestRngStream:
    def test_replay(self):
        a = RngStream(99).child("x", 3).generator().random(32)
        b = RngStream(99).child("x", 3).generator().random(32)
        assert (a == b).all()

    def test_distinct_paths_differ(self):
        a = RngStream(99).child("x", 3).generator().random(8)
        b = RngStream(99).child("x", 4).generator().random(8)
        c = RngStream(99).child("y", 3).generator().random(8)
        assert not (a == b).all()
        assert not (a == c).all()

    def test_schedule_independence(self):
        # children can be created in any order without changing their draws
        root = RngStream(5)
        first = root.child("rep", 7).generator().random(4)
        _ = root.child("rep", 2).generator().random(4)
        again = root.child("rep", 7).generator().random(4)
        assert (first == again).all()


class TestDiscipline:
    def test_known_kinds(self):
        assert discipline_from_name("PS") == PS
        assert FIFO.kind == "FIFO" and LIFO_PR.kind == "LIFO_PR"

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Discipline("ROS")
