"""Rotation policies, schedules, the pathwise transform, and its inverse."""
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotinv.errors import EmptyMatrixListError, GridMismatchError
from rotinv.paths import Path, TimeGrid, realized_covariation
from rotinv.rotations import (RotationPolicy, apply_rotation, exit_times,
                              inverse_schedule, realize_policy)
from rotinv.seeding import seed_for_path
from rotinv.simulators import anisotropic_diffusion, brownian, drifted_brownian
from rotinv.stattests import _block_exit_indices


def rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


class TestExitTimes:
    def test_straight_line(self):
        # unit-speed line, dt = 0.1, h = 0.5: exits at every 5th index
        g = TimeGrid(2.0, 20)
        vals = np.zeros((21, 2))
        vals[:, 0] = g.times()
        et = exit_times(Path(g, vals), 0.5)
        np.testing.assert_array_equal(et.indices, [5, 10, 15, 20])
        assert et.complete

    def test_radius_beyond_diameter(self):
        g = TimeGrid(1.0, 50)
        vals = 0.01 * np.sin(np.linspace(0, 3, 51))[:, None] * np.ones((1, 2))
        et = exit_times(Path(g, vals), 10.0)
        assert et.indices.size == 0
        assert not et.complete

    def test_first_exit_mean_scaling(self):
        # E[tau_h] = h^2 / n with upward grid bias of a couple of percent
        g = TimeGrid(1.0, 5000)
        h, n = 0.3, 2
        taus = []
        for i in range(500):
            w = brownian(n, g, seed_for_path(60, i, "brownian"))
            et = exit_times(w, h)
            assert et.indices.size >= 1
            taus.append(et.indices[0] * g.dt)
        mean = np.mean(taus)
        target = h * h / n
        assert abs(mean - target) <= 0.10 * target

    def test_invariant_consistency(self):
        w = brownian(2, TimeGrid(1.0, 2000), 3)
        h = 0.2
        et = exit_times(w, h)
        prev = 0
        for k in et.indices:
            assert np.linalg.norm(w.values[k] - w.values[prev]) >= h
            between = w.values[prev + 1:k] - w.values[prev]
            if between.size:
                assert np.all(np.linalg.norm(between, axis=1) < h)
            prev = k

    def test_requires_positive_radius(self):
        w = brownian(2, TimeGrid(1.0, 10), 0)
        with pytest.raises(ValueError):
            exit_times(w, 0.0)

    def test_block_detector_matches_scalar_detector(self):
        g = TimeGrid(1.0, 3000)
        h = 0.15
        vals = np.stack([brownian(2, g, seed_for_path(61, i, "brownian")).values
                         for i in range(30)])
        block = _block_exit_indices(vals, h)
        for i in range(30):
            single = exit_times(Path(g, vals[i]), h)
            np.testing.assert_array_equal(block[i], single.indices)


class TestRealizePolicy:
    def test_constant(self):
        w = brownian(2, TimeGrid(1.0, 100), 1)
        b = rot(0.7)
        sched = realize_policy(RotationPolicy.constant(b), w)
        assert sched.mats.shape == (100, 2, 2)
        np.testing.assert_array_equal(sched.mats, np.broadcast_to(b, (100, 2, 2)))

    def test_piecewise_interval_convention(self):
        # exits at 5 and 9: increments 1..5 -> R1, 6..9 -> R2, 10.. -> R3
        g = TimeGrid(1.2, 12)
        vals = np.zeros((13, 2))
        vals[:, 0] = np.arange(13) * 0.1
        path = Path(g, vals)
        mats = [rot(0.1), rot(0.2), rot(0.3)]
        h = 0.5
        et = exit_times(path, h)
        np.testing.assert_array_equal(et.indices, [5, 10])
        sched = realize_policy(RotationPolicy.piecewise_exit_time(h, mats), path)
        np.testing.assert_array_equal(sched.mats[:5], np.broadcast_to(mats[0], (5, 2, 2)))
        np.testing.assert_array_equal(sched.mats[5:10], np.broadcast_to(mats[1], (5, 2, 2)))
        np.testing.assert_array_equal(sched.mats[10:], np.broadcast_to(mats[2], (2, 2, 2)))

    def test_matrix_list_exhaustion_repeats_last(self):
        g = TimeGrid(3.0, 30)
        vals = np.zeros((31, 2))
        vals[:, 0] = np.arange(31) * 0.1
        mats = [rot(0.1), rot(0.2)]
        sched = realize_policy(RotationPolicy.piecewise_exit_time(0.5, mats), Path(g, vals))
        # exits every 5 steps; from the third excursion on, the last matrix repeats
        np.testing.assert_array_equal(sched.mats[10:], np.broadcast_to(mats[1], (20, 2, 2)))

    def test_empty_matrix_list(self):
        with pytest.raises(EmptyMatrixListError):
            RotationPolicy.piecewise_exit_time(0.5, [])

    def test_seeded_haar_constant_within_excursion(self):
        w = brownian(2, TimeGrid(1.0, 2000), 17)
        policy = RotationPolicy.seeded_haar_per_exit(h=0.2, seed=5)
        sched = realize_policy(policy, w)
        et = sched.exits
        assert et.indices.size >= 2
        first = et.indices[0]
        for k in range(first):
            np.testing.assert_array_equal(sched.mats[k], sched.mats[0])
        assert not np.array_equal(sched.mats[first], sched.mats[first - 1])
        sched.validate()

    def test_seeded_haar_deterministic(self):
        w = brownian(2, TimeGrid(1.0, 500), 17)
        policy = RotationPolicy.seeded_haar_per_exit(h=0.2, seed=5)
        np.testing.assert_array_equal(realize_policy(policy, w).mats,
                                      realize_policy(policy, w).mats)

    def test_policy_randomness_independent_of_path(self):
        # the matrix bank depends only on the policy stream, not the driver
        policy = RotationPolicy.seeded_haar_per_exit(h=0.2, seed=5)
        w1 = brownian(2, TimeGrid(1.0, 2000), 1)
        w2 = brownian(2, TimeGrid(1.0, 2000), 2)
        s1 = realize_policy(policy, w1)
        s2 = realize_policy(policy, w2)
        np.testing.assert_array_equal(s1.mats[0], s2.mats[0])

    def test_diagonalizing_shrinks_offdiagonals(self):
        # rotated anisotropic diffusion has strongly correlated components;
        # the diagonalizing policy must remove them in realized covariation
        sigma = rot(np.pi / 4) @ np.diag([1.0, 2.0])
        g = TimeGrid(1.0, 10000)
        z = anisotropic_diffusion(2, g, 5, sigma)
        raw = realized_covariation(z).a_hat[-1]
        assert abs(raw[0, 1]) > 0.5  # sanity: strong cross-covariation
        sched = realize_policy(RotationPolicy.diagonalizing(window=200), z)
        zt = apply_rotation(z, sched)
        a = realized_covariation(zt).a_hat[-1]
        assert abs(a[0, 1]) <= 0.05 * a.trace() / 2

    def test_diagonalizing_identity_during_burnin(self):
        z = anisotropic_diffusion(2, TimeGrid(1.0, 1000), 5, np.diag([1.0, 2.0]))
        sched = realize_policy(RotationPolicy.diagonalizing(window=100), z)
        np.testing.assert_array_equal(sched.mats[:100],
                                      np.broadcast_to(np.eye(2), (100, 2, 2)))

    def test_drift_aligning_maps_estimate_onto_e1(self):
        # defining property: the rotation sends the lagged estimated drift
        # direction exactly to +e1
        g = TimeGrid(1.0, 500)
        z = drifted_brownian(2, g, 62, np.array([0.0, 2.0]))
        sched = realize_policy(RotationPolicy.drift_aligning(), z)
        times = g.times()
        for k in (10, 100, 499):
            d_hat = z.values[k] / times[k]
            u = d_hat / np.linalg.norm(d_hat)
            image = sched.mats[k] @ u
            assert image[0] == pytest.approx(1.0, abs=1e-12)
            assert abs(image[1]) <= 1e-12

    def test_drift_aligning_concentrates_on_first_axis(self):
        # once the running estimate stabilizes, drift accumulates along +e1;
        # early rotations are noise-driven, so only most of it lands there
        g = TimeGrid(1.0, 2000)
        b = np.array([0.0, 2.0])
        ends = []
        for i in range(200):
            z = drifted_brownian(2, g, seed_for_path(62, i, "brownian"), b)
            sched = realize_policy(RotationPolicy.drift_aligning(), z)
            ends.append(apply_rotation(z, sched).values[-1])
        mean_end = np.mean(ends, axis=0)
        assert mean_end[0] > 1.0
        assert abs(mean_end[1]) < 0.3

    def test_predictability_all_kinds(self):
        # freezing a prefix and randomizing the suffix never changes the
        # matrices applied up to the cut
        g = TimeGrid(1.0, 400)
        w = brownian(2, g, 23)
        cut = 250
        rng = np.random.default_rng(99)
        tampered_vals = w.values.copy()
        tampered_vals[cut + 1:] += np.cumsum(
            rng.standard_normal(tampered_vals[cut + 1:].shape), axis=0) * 0.05
        tampered = Path(g, tampered_vals)
        policies = [
            RotationPolicy.constant(rot(0.3)),
            RotationPolicy.piecewise_exit_time(0.2, [rot(0.1), rot(0.2), rot(0.3)]),
            RotationPolicy.seeded_haar_per_exit(h=0.2, seed=8),
            RotationPolicy.diagonalizing(window=50),
            RotationPolicy.drift_aligning(),
        ]
        for policy in policies:
            s1 = realize_policy(policy, w)
            s2 = realize_policy(policy, tampered)
            np.testing.assert_array_equal(s1.mats[:cut], s2.mats[:cut],
                                          err_msg=f"kind={policy.kind}")


class TestApplyRotation:
    def test_identity_schedule(self):
        w = brownian(2, TimeGrid(1.0, 300), 4)
        sched = realize_policy(RotationPolicy.constant(np.eye(2)), w)
        out = apply_rotation(w, sched)
        np.testing.assert_array_equal(out.values, w.values - w.values[0])

    def test_constant_rotation_conjugates_qv(self):
        w = brownian(2, TimeGrid(1.0, 2000), 4)
        b = rot(1.1)
        out = apply_rotation(w, realize_policy(RotationPolicy.constant(b), w))
        a_out = realized_covariation(out).a_hat[-1]
        a_in = realized_covariation(w).a_hat[-1]
        np.testing.assert_allclose(a_out, b @ a_in @ b.T, rtol=1e-12, atol=1e-14)

    def test_per_step_isometry(self):
        w = brownian(2, TimeGrid(1.0, 5000), 19)
        sched = realize_policy(RotationPolicy.seeded_haar_per_exit(h=0.1, seed=2), w)
        out = apply_rotation(w, sched)
        n_in = np.linalg.norm(np.diff(w.values, axis=0), axis=1)
        n_out = np.linalg.norm(np.diff(out.values, axis=0), axis=1)
        assert (np.abs(n_out - n_in) / n_in).max() <= 1e-13

    def test_covariation_transform_identity(self):
        w = brownian(2, TimeGrid(1.0, 3000), 19)
        sched = realize_policy(RotationPolicy.seeded_haar_per_exit(h=0.1, seed=2), w)
        out = apply_rotation(w, sched)
        dz = np.diff(w.values, axis=0)
        outer = np.einsum("ki,kj->kij", dz, dz)
        expected = np.cumsum(np.einsum("kip,kpq,kjq->kij", sched.mats, outer, sched.mats),
                             axis=0)
        a_out = realized_covariation(out).a_hat[1:]
        scale = max(1.0, np.abs(expected).max())
        assert np.abs(a_out - expected).max() <= 1e-12 * scale

    def test_grid_mismatch(self):
        w = brownian(2, TimeGrid(1.0, 300), 4)
        other = brownian(2, TimeGrid(1.0, 200), 4)
        sched = realize_policy(RotationPolicy.constant(np.eye(2)), other)
        with pytest.raises(GridMismatchError):
            apply_rotation(w, sched)


class TestInverseSchedule:
    def test_identity(self):
        w = brownian(2, TimeGrid(1.0, 50), 1)
        sched = realize_policy(RotationPolicy.constant(np.eye(2)), w)
        np.testing.assert_array_equal(inverse_schedule(sched).mats, sched.mats)

    def test_roundtrip(self):
        w = brownian(2, TimeGrid(1.0, 10000), 77)
        sched = realize_policy(RotationPolicy.seeded_haar_per_exit(h=0.1, seed=3), w)
        out = apply_rotation(w, sched)
        back = apply_rotation(out, inverse_schedule(sched))
        scale = max(1.0, np.abs(w.values).max())
        assert np.abs(back.values - (w.values - w.values[0])).max() <= 1e-12 * scale

    def test_exit_indices_preserved_by_transform(self):
        # the excursion norm process is identical, so recomputed stopping
        # indices agree exactly
        h = 0.1
        for i in range(20):
            w = brownian(2, TimeGrid(1.0, 5000), seed_for_path(63, i, "brownian"))
            sched = realize_policy(
                RotationPolicy.seeded_haar_per_exit(h=h, seed=100 + i), w)
            out = apply_rotation(w, sched)
            np.testing.assert_array_equal(exit_times(out, h).indices, sched.exits.indices)


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_property_roundtrip_exact(seed):
    g = TimeGrid(1.0, 300)
    w = brownian(2, g, seed)
    sched = realize_policy(RotationPolicy.seeded_haar_per_exit(h=0.3, seed=seed + 1), w)
    out = apply_rotation(w, sched)
    back = apply_rotation(out, inverse_schedule(sched))
    scale = max(1.0, np.abs(w.values).max())
    assert np.abs(back.values - (w.values - w.values[0])).max() <= 1e-12 * scale
