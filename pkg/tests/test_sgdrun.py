"""Tests for starpath.sgdrun module."""

import logging

import numpy as np
import pytest

from starpath.constants import TRACE_META_SUFFIX, TRACE_VERSION
from starpath.errors import CoverageError, DimensionMismatchError, DivergenceError, ReplayMismatchError, \
    TraceFormatError, UnsupportedTraceVersionError
from starpath.problems import QuadraticProblem, make_consistent_least_squares
from starpath.sgdrun import (
    RecordPolicy,
    ReferenceMode,
    RunConfig,
    load_trace,
    replay_epoch,
    run,
    save_trace,
    weight_norm_series,
)


def _cfg(eta, epochs=12, seed=11, kind="every_mth", m=4):
    return RunConfig(eta=eta, epochs=epochs, seed=seed, record_policy=RecordPolicy(kind, m))


class TestRecordPolicy:
    """Which epochs are fully recorded."""

    def test_every_mth(self):
        policy = RecordPolicy("every_mth", 3)
        assert [policy.records_epoch(B) for B in range(7)] == [True, False, False, True, False, False, True]

    def test_boundaries_only(self):
        assert not RecordPolicy("epoch_boundaries").records_epoch(0)

    def test_rejects_unknown_kind(self):
        with pytest.raises(ValueError, match="record policy"):
            RecordPolicy("sometimes")

    def test_reference_label(self):
        assert ReferenceMode("epoch_end", 60).label() == "epoch_end(60)"
        assert ReferenceMode().label() == "final_iterate"


class TestRun:
    """The SGD loop."""

    @pytest.mark.parametrize("kind,expected", [
        ("epoch_boundaries", 13),
        ("every_mth", 13 + 3 * 5),
        ("full", 12 * 6 + 1),
    ])
    def test_checkpoint_counts(self, ls_small, kind, expected):
        trace = run(ls_small, np.zeros(ls_small.d), _cfg(0.01, kind=kind))
        assert len(trace.checkpoints) == expected
        assert trace.completed == 72
        assert trace.epochs_completed == 12

    def test_update_rule(self, quad1d):
        trace = run(quad1d, np.array([1.0]), _cfg(0.5, epochs=3, kind="full"))
        assert [float(trace.iterate(k)[0]) for k in range(4)] == [1.0, 0.5, 0.25, 0.125]
        assert trace.losses.tolist() == [0.5, 0.125, 0.03125]

    def test_sampled_indices_follow_schedule(self, ls_trace):
        s = ls_trace.schedule
        assert [int(xi) for xi in ls_trace.xis] == [s.sample_index(k) for k in range(ls_trace.completed)]

    def test_recorded_loss_replays_from_checkpoints(self, ls_small, ls_trace):
        for k in range(ls_trace.completed):
            replayed = ls_small.component_value(int(ls_trace.xis[k]), ls_trace.iterate(k))
            assert abs(replayed - float(ls_trace.losses[k])) <= 1e-12

    def test_one_dimensional_hand_iteration(self):
        p = QuadraticProblem([1.0], [[1.0]])
        trace = run(p, np.array([0.0]), _cfg(0.1, epochs=2, kind="full"))
        assert trace.iterate(1)[0] == pytest.approx(0.1, abs=1e-15)
        assert trace.iterate(2)[0] == pytest.approx(0.19, abs=1e-15)

    def test_deterministic(self, ls_small, tmp_path):
        cfg = _cfg(0.02)
        save_trace(run(ls_small, np.zeros(ls_small.d), cfg), tmp_path / "a.spth")
        save_trace(run(ls_small, np.zeros(ls_small.d), cfg), tmp_path / "b.spth")
        assert (tmp_path / "a.spth").read_bytes() == (tmp_path / "b.spth").read_bytes()

    def test_warns_when_step_exceeds_inverse_lipschitz(self, ls_small, caplog):
        with caplog.at_level(logging.WARNING, logger="starpath"):
            run(ls_small, np.zeros(ls_small.d), _cfg(1.5 / ls_small.lipschitz_bound, epochs=1))
        assert "step-size hypothesis" in caplog.text

    def test_divergence_keeps_partial_trace(self):
        p = make_consistent_least_squares(10, 20, seed=0)
        with pytest.raises(DivergenceError) as exc:
            run(p, np.zeros(p.d), _cfg(10.0 / p.lipschitz_bound, epochs=200))
        partial = exc.value.trace
        assert partial.diverged
        last = max(partial.checkpoints)
        assert np.all(np.isfinite(partial.checkpoints[last]))
        assert partial.completed <= exc.value.k

    def test_divergence_on_last_step_of_epoch(self):
        # n = 1, so every step closes an epoch; the loss stays tiny while the iterate blows up
        p = QuadraticProblem([1e-30], [[1.0]])
        with pytest.raises(DivergenceError, match="iterate norm") as exc:
            run(p, np.array([0.0]), _cfg(3e30, epochs=100, kind="epoch_boundaries"))
        partial = exc.value.trace
        assert partial.completed == exc.value.k - 1
        assert partial.epochs_completed == partial.completed
        norms = weight_norm_series(partial)
        assert len(norms) == partial.epochs_completed + 1

    def test_x0_dimension_checked(self, ls_small):
        with pytest.raises(DimensionMismatchError):
            run(ls_small, np.zeros(ls_small.d + 1), _cfg(0.01))

    def test_missing_iterate_raises_coverage_error(self, ls_small):
        trace = run(ls_small, np.zeros(ls_small.d), _cfg(0.01, kind="epoch_boundaries"))
        with pytest.raises(CoverageError) as exc:
            trace.iterate(3)
        assert exc.value.missing == [3]

    def test_on_epoch_callback(self, quad1d):
        seen = []
        run(quad1d, np.array([2.0]), _cfg(0.5, epochs=3), on_epoch=lambda B, loss: seen.append(B))
        assert seen == [0, 1, 2]


class TestReplayEpoch:
    """Re-running an epoch from its opening checkpoint."""

    def test_reproduces_recorded_iterates(self, ls_small, ls_trace):
        for B in (0, 6, 14):
            steps = replay_epoch(ls_trace, ls_small, B)
            assert [s.k for s in steps] == list(ls_trace.epoch_span(B))
            for s in steps:
                assert s.x.tobytes() == ls_trace.iterate(s.k).tobytes()
                assert s.loss == float(ls_trace.losses[s.k])
                assert s.xi == int(ls_trace.xis[s.k])

    def test_needs_only_boundaries(self, ls_small):
        trace = run(ls_small, np.zeros(ls_small.d), _cfg(0.01, kind="epoch_boundaries"))
        assert len(replay_epoch(trace, ls_small, 5)) == ls_small.n

    def test_tampered_checkpoint(self, ls_small):
        trace = run(ls_small, np.zeros(ls_small.d), _cfg(0.01, kind="epoch_boundaries"))
        closing = ls_small.n * 3
        trace.checkpoints[closing] = trace.checkpoints[closing] + 1e-3
        with pytest.raises(ReplayMismatchError) as exc:
            replay_epoch(trace, ls_small, 2)
        assert exc.value.k == closing

    def test_wrong_problem(self, ls_trace):
        other = make_consistent_least_squares(6, 10, seed=4)
        with pytest.raises(ReplayMismatchError, match="loss"):
            replay_epoch(ls_trace, other, 1)

    def test_missing_boundary(self, ls_small, ls_trace):
        del ls_trace.checkpoints[ls_trace.n * 2]
        with pytest.raises(CoverageError, match="epoch-boundary"):
            replay_epoch(ls_trace, ls_small, 1)


class TestWeightNorms:
    """Per-epoch parameter norms."""

    def test_constant_when_gradient_vanishes(self):
        p = QuadraticProblem([1.0, 2.0], [[3.0, 4.0], [3.0, 4.0]])
        trace = run(p, np.array([3.0, 4.0]), _cfg(0.1, epochs=5))
        assert [v for _, v in weight_norm_series(trace)] == [5.0] * 6

    def test_missing_boundary(self, ls_trace):
        del ls_trace.checkpoints[ls_trace.n * 3]
        with pytest.raises(CoverageError, match="epoch-boundary"):
            weight_norm_series(ls_trace)


class TestPersistence:
    """Binary trace format."""

    def test_round_trip(self, ls_trace, tmp_path):
        path = tmp_path / "t.spth"
        save_trace(ls_trace, path)
        loaded = load_trace(path)
        assert loaded.fingerprint == ls_trace.fingerprint
        assert loaded.config == ls_trace.config
        assert sorted(loaded.checkpoints) == sorted(ls_trace.checkpoints)
        for k, x in ls_trace.checkpoints.items():
            assert loaded.checkpoints[k].tobytes() == x.tobytes()
        assert loaded.iterations.tobytes() == ls_trace.iterations.tobytes()
        assert loaded.final_iterate.tobytes() == ls_trace.final_iterate.tobytes()

    def test_largest_seed_round_trips(self, quad1d, tmp_path):
        trace = run(quad1d, np.array([1.0]), _cfg(0.5, epochs=2, seed=2 ** 63 - 1))
        save_trace(trace, tmp_path / "t.spth")
        assert load_trace(tmp_path / "t.spth").config.seed == 2 ** 63 - 1

    def test_seed_outside_stored_range_rejected(self):
        with pytest.raises(ValueError, match="seed"):
            _cfg(0.5, seed=2 ** 63)

    def test_wall_metadata_in_sidecar(self, ls_trace, tmp_path):
        path = tmp_path / "t.spth"
        save_trace(ls_trace, path)
        assert (tmp_path / ("t.spth" + TRACE_META_SUFFIX)).is_file()
        assert load_trace(path).wall["elapsed_seconds"] == ls_trace.wall["elapsed_seconds"]

    def test_wrong_magic(self, ls_trace, tmp_path):
        path = tmp_path / "t.spth"
        save_trace(ls_trace, path)
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(TraceFormatError, match="bad magic") as exc:
            load_trace(path)
        assert exc.value.offset == 0

    def test_version_bumped(self, ls_trace, tmp_path):
        path = tmp_path / "t.spth"
        save_trace(ls_trace, path)
        raw = bytearray(path.read_bytes())
        raw[4] += 1
        path.write_bytes(bytes(raw))
        with pytest.raises(UnsupportedTraceVersionError, match=f"unsupported trace version {TRACE_VERSION + 1}"):
            load_trace(path)

    def test_truncated(self, ls_trace, tmp_path):
        path = tmp_path / "t.spth"
        save_trace(ls_trace, path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TraceFormatError, match="truncated"):
            load_trace(path)

    def test_trailing_bytes(self, ls_trace, tmp_path):
        path = tmp_path / "t.spth"
        save_trace(ls_trace, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(TraceFormatError, match="trailing"):
            load_trace(path)
