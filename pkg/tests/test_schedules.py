import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatednet.gates import gate_probs
from gatednet.schedules import (
    MAX_THETA,
    ScheduleConfig,
    ScheduleError,
    collapse_flags,
    enforce_min_open,
    lambda_at,
    phase_at,
    tau_at,
)


class TestLambda:
    def test_examples(self):
        cfg = ScheduleConfig(total_epochs=10, warmup_epochs=4, lambda_max=1.0)
        assert [lambda_at(t, cfg) for t in range(1, 5)] == [0.0] * 4
        assert lambda_at(7, cfg) == 0.5
        assert lambda_at(10, cfg) == 1.0

    @pytest.mark.parametrize("ramp", ["linear", "cosine"])
    @pytest.mark.parametrize("T,Ew", [(10, 0), (10, 3), (5, 4), (1, 0), (20, 7)])
    def test_monotone_and_zero_in_warmup(self, ramp, T, Ew):
        cfg = ScheduleConfig(total_epochs=T, warmup_epochs=Ew, lambda_max=2.5,
                             lambda_ramp=ramp, phase_ends=None, phase_thetas=[0.6],
                             phase_keeps=[0.5])
        vals = [lambda_at(t, cfg) for t in range(1, T + 1)]
        assert all(v == 0.0 for v in vals[:Ew])
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] == pytest.approx(2.5)

    def test_default_warmup_is_phase_one(self):
        cfg = ScheduleConfig()
        assert cfg.resolved_phase_ends() == [3, 7, 10]
        assert cfg.resolved_warmup() == 3
        assert lambda_at(3, cfg) == 0.0 and lambda_at(4, cfg) > 0.0


class TestTau:
    def test_endpoints_and_midpoint(self):
        cfg = ScheduleConfig(total_epochs=11, tau_start=2.0, tau_end=1.0)
        assert tau_at(1, cfg) == 2.0
        assert tau_at(11, cfg) == 1.0
        assert tau_at(6, cfg) == 1.5

    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_non_increasing(self, kind):
        cfg = ScheduleConfig(total_epochs=15, tau_anneal=kind)
        taus = [tau_at(t, cfg) for t in range(1, 16)]
        assert all(b <= a for a, b in zip(taus, taus[1:]))
        assert min(taus) >= cfg.tau_end

    def test_probabilities_sharpen(self):
        cfg = ScheduleConfig()
        ps = [gate_probs(np.array([0.7]), tau_at(t, cfg))[0] for t in range(1, 11)]
        assert all(b >= a for a, b in zip(ps, ps[1:]))


class TestPhases:
    def test_defaults(self):
        cfg = ScheduleConfig()
        assert phase_at(1, cfg) == (1, 0.55, 0.90)
        assert phase_at(5, cfg) == (2, 0.72, 0.55)
        assert phase_at(10, cfg) == (3, 0.80, 0.30)

    def test_theta_cap_under_defaults(self):
        for T in range(3, 30):
            cfg = ScheduleConfig(total_epochs=T)
            assert all(phase_at(t, cfg)[1] <= MAX_THETA for t in range(1, T + 1))

    def test_uncovered_epoch_is_load_error(self):
        with pytest.raises(ScheduleError, match="cover"):
            ScheduleConfig(total_epochs=10, phase_ends=[3, 6, 8])

    def test_out_of_range_epoch(self):
        with pytest.raises(ScheduleError):
            phase_at(11, ScheduleConfig())

    def test_theta_jump_bounded(self):
        with pytest.raises(ScheduleError, match="jumps"):
            ScheduleConfig(phase_thetas=[0.5, 0.85, 0.86])

    @pytest.mark.parametrize("kwargs", [
        {"warmup_epochs": 10},
        {"tau_start": 0.5, "tau_end": 1.0},
        {"tau_end": 0.0, "tau_start": 0.0},
        {"r_min": 1.5},
        {"phase_keeps": [0.3, 0.5, 0.2]},
        {"lambda_max": -1.0},
        {"phase_ends": [3, 3, 10]},
        {"lambda_ramp": "step"},
        {"p0": 1.0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ScheduleError):
            ScheduleConfig(**kwargs)


class TestMinOpen:
    def test_argmax_forced(self):
        p = np.linspace(0.1, 0.4, 10)[None, :]
        out = enforce_min_open(np.zeros((1, 10)), p, 0.1)
        assert out.tolist() == [[0.0] * 9 + [1.0]]

    def test_already_above_floor(self, rng):
        g = np.array([[1.0, 0.0, 1.0, 0.0]])
        assert np.array_equal(enforce_min_open(g, rng.uniform(size=(1, 4)), 0.5), g)

    def test_identity_without_floor(self, rng):
        g = (rng.uniform(size=(3, 5)) > 0.5).astype(float)
        assert np.array_equal(enforce_min_open(g, rng.uniform(size=(3, 5)), 0.0), g)

    def test_topk_floor(self):
        p = np.array([[0.3, 0.1, 0.2, 0.05]])
        out, forced = enforce_min_open(np.zeros((1, 4)), p, 0.0, topk_floor=2, return_forced=True)
        assert out.tolist() == [[1.0, 0.0, 1.0, 0.0]]
        assert np.array_equal(out, forced)

    def test_ties_lowest_index(self):
        out = enforce_min_open(np.zeros((1, 4)), np.full((1, 4), 0.2), 0.5)
        assert out.tolist() == [[1.0, 1.0, 0.0, 0.0]]

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            enforce_min_open(np.zeros((1, 3)), np.zeros((1, 4)), 0.5)

    @settings(max_examples=80, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 12), st.floats(0.0, 1.0), st.integers(0, 2**31))
    def test_dominates_and_meets_floor(self, rows, n, r_min, seed):
        r = np.random.default_rng(seed)
        g = (r.uniform(size=(rows, n)) > 0.7).astype(float)
        p = r.uniform(size=(rows, n))
        out = enforce_min_open(g, p, r_min)
        assert np.all(out >= g)
        need = int(np.ceil(r_min * n - 1e-12))
        counts = out.sum(axis=1)
        assert np.all(counts >= need)
        # only as many units forced as needed
        assert np.all(counts == np.maximum(g.sum(axis=1), need))


class TestCollapse:
    def test_flag_a(self):
        d = collapse_flags(4, [0.7, 0.9], [0.005, 0.8], theta=0.72)
        assert d.flag_a and not d.flag_b

    def test_flag_b(self):
        d = collapse_flags(4, [0.005, 0.9], [0.0, 0.8], theta=0.72)
        assert d.flag_b and not d.flag_a

    def test_healthy(self):
        d = collapse_flags(4, [0.6, 0.7], [0.4, 0.5], theta=0.72)
        assert not (d.flag_a or d.flag_b)
        assert d.as_dict() == {"collapse_a": False, "collapse_b": False}
