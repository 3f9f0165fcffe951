from __future__ import annotations

import math

import numpy as np
import pytest

import lumacurve.autograd as ag
from lumacurve.color_core import ShapeMismatch
from lumacurve.contrastive import ContrastiveConfig, NormViolation, info_nce

import oracles
from oracles import fd_grad, nce_ref, rel_err


def unit_rows(rng, n, d=8):
    z = rng.normal(size=(n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z.astype(np.float32)


class TestConfig:
    def test_defaults(self):
        cfg = ContrastiveConfig()
        assert cfg.temperature == 1.0
        assert cfg.symmetric is False

    def test_rejects_nonpositive_temperature(self):
        with pytest.raises(ValueError):
            ContrastiveConfig(temperature=0.0)


class TestForward:
    def test_single_sample_is_exactly_zero(self, rng):
        z = unit_rows(rng, 1)
        assert float(info_nce(z, unit_rows(rng, 1)).data) == 0.0

    def test_frozen_two_sample_example(self):
        z = np.eye(2, dtype=np.float32)
        loss = float(info_nce(z, z.copy()).data)
        expected = -math.log(math.e / (math.e + 2.0))
        assert loss == pytest.approx(expected, abs=1e-6)
        # Loss tensors are stored as float32; the forward should agree with
        # the float64 brute-force oracle to the last stored bit.
        assert loss == float(np.float32(nce_ref(z, z)))

    @pytest.mark.parametrize("n", [2, 3, 7, 16])
    def test_matches_brute_force_oracle(self, rng, n):
        za, zb = unit_rows(rng, n), unit_rows(rng, n)
        loss = float(info_nce(za, zb).data)
        assert loss == pytest.approx(nce_ref(za, zb), abs=1e-6)

    def test_temperature_matches_oracle(self, rng):
        za, zb = unit_rows(rng, 5), unit_rows(rng, 5)
        cfg = ContrastiveConfig(temperature=0.5)
        assert float(info_nce(za, zb, cfg).data) == pytest.approx(
            nce_ref(za, zb, tau=0.5), abs=1e-6
        )

    def test_symmetric_averages_both_directions(self, rng):
        za, zb = unit_rows(rng, 6), unit_rows(rng, 6)
        cfg = ContrastiveConfig(symmetric=True)
        expected = 0.5 * (nce_ref(za, zb) + nce_ref(zb, za))
        assert float(info_nce(za, zb, cfg).data) == pytest.approx(expected, abs=1e-6)

    def test_identical_pairs_beat_random_pairs(self, rng):
        # An encoder that maps clean and augmented views to the same point
        # should score better (lower loss) than an unrelated pairing.
        za = unit_rows(rng, 8)
        aligned = float(info_nce(za, za.copy()).data)
        shuffled = float(info_nce(za, np.roll(za, 1, axis=0)).data)
        assert aligned < shuffled

    def test_batch_permutation_is_bitwise_invariant(self, rng):
        za, zb = unit_rows(rng, 9), unit_rows(rng, 9)
        perm = rng.permutation(9)
        a = float(info_nce(za, zb).data)
        b = float(info_nce(za[perm], zb[perm]).data)
        assert a == b


class TestValidation:
    def test_rejects_non_unit_rows(self, rng):
        za = unit_rows(rng, 4)
        bad = za * 1.01
        with pytest.raises(NormViolation):
            info_nce(za, bad)

    def test_rejects_shape_mismatch(self, rng):
        with pytest.raises(ShapeMismatch):
            info_nce(unit_rows(rng, 4), unit_rows(rng, 5))

    def test_rejects_nonfinite(self, rng):
        za = unit_rows(rng, 3).astype(np.float64)
        bad = za.copy()
        bad[0, 0] = np.nan
        with pytest.raises(ValueError):
            info_nce(za, bad)


class TestGradients:
    def test_matches_finite_differences(self, rng):
        za, zb = unit_rows(rng, 6), unit_rows(rng, 6)
        rec = ag.GradientRecord()
        ta, tb = rec.input(za), rec.input(zb)
        loss = info_nce(ta, tb, rec=rec)
        grads = ag.backward(rec, loss)
        fa = fd_grad(lambda v: nce_ref(v, zb), za.astype(np.float64))
        fb = fd_grad(lambda v: nce_ref(za, v), zb.astype(np.float64))
        assert rel_err(grads[ta.node], fa) <= 1e-4
        assert rel_err(grads[tb.node], fb) <= 1e-4

    def test_temperature_gradient_matches(self, rng):
        za, zb = unit_rows(rng, 4), unit_rows(rng, 4)
        cfg = ContrastiveConfig(temperature=0.7)
        rec = ag.GradientRecord()
        ta = rec.input(za)
        loss = info_nce(ta, zb, cfg, rec=rec)
        grads = ag.backward(rec, loss)
        fa = fd_grad(lambda v: nce_ref(v, zb, tau=0.7), za.astype(np.float64))
        assert rel_err(grads[ta.node], fa) <= 1e-4

    def test_single_sample_gradient_is_zero(self, rng):
        za = unit_rows(rng, 1)
        rec = ag.GradientRecord()
        ta = rec.input(za)
        loss = info_nce(ta, unit_rows(rng, 1), rec=rec)
        grads = ag.backward(rec, loss)
        assert np.array_equal(grads[ta.node], np.zeros_like(za))

    def test_constant_argument_stops_gradient(self, rng):
        za, zb = unit_rows(rng, 4), unit_rows(rng, 4)
        rec = ag.GradientRecord()
        ta = rec.input(za)
        loss = info_nce(ta, ag.constant(zb), rec=rec)
        grads = ag.backward(rec, loss)
        assert len(grads) == 1 and ta.node in grads
        assert float(np.abs(grads[ta.node]).max()) > 0.0
