"""Representable radius and tanh rescaling."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorentzkit import lmath
from lorentzkit.errors import NumericError, UsageError
from lorentzkit.manifold import ManifoldHandle, origin, origin_tangent
from lorentzkit.stability import (
    PrecisionProfile,
    RescaleConfig,
    d_max,
    rescale_point,
    rescale_space,
    rescale_tangent,
)

F64 = PrecisionProfile.for_dtype(np.float64)
F32 = PrecisionProfile.for_dtype(np.float32)


class TestDMax:
    def test_f64_k1(self):
        assert d_max(1.0, F64) == pytest.approx(math.acosh(1e8), rel=1e-12)
        assert d_max(1.0, F64) == pytest.approx(19.1138, abs=1e-4)

    def test_f32_k1(self):
        # the formula gives acosh(2000) = 8.294; a figure of 9.1 circulates
        # for this case but does not satisfy the defining equation
        assert d_max(1.0, F32) == pytest.approx(math.acosh(2000.0), rel=1e-12)
        assert d_max(1.0, F32) == pytest.approx(8.2940, abs=1e-4)

    def test_f32_k4(self):
        assert d_max(4.0, F32) == pytest.approx(2 * math.acosh(1000.0), rel=1e-12)
        assert d_max(4.0, F32) == pytest.approx(15.2018, abs=1e-4)

    def test_too_curved_raises(self):
        with pytest.raises(NumericError):
            d_max(1e12, F32)

    def test_profile_defaults_and_override(self):
        assert F32.x_t_max == 2e3 and F64.x_t_max == 1e8
        p = PrecisionProfile.for_dtype(np.float32, 5e3)
        assert p.x_t_max == 5e3
        with pytest.raises(UsageError):
            PrecisionProfile.for_dtype(np.float16)

    def test_tightness_must_be_positive(self):
        with pytest.raises(UsageError):
            RescaleConfig(s=0.0, profile=F64)


class TestRescalePoint:
    def test_origin_fixed(self):
        h = ManifoldHandle("r", 3)
        cfg = RescaleConfig(s=2.0, profile=F64)
        out = rescale_point(origin(h), cfg)
        np.testing.assert_allclose(out.data, origin(h).data, atol=1e-15)

    def test_boundary_hits_99_percent(self):
        for K in (0.5, 1.0, 2.0):
            h = ManifoldHandle(f"b{K}", 3, kappa_raw=math.log(K))
            cfg = RescaleConfig(s=2.0, profile=F64)
            dm = d_max(K, F64)
            z = np.zeros(3)
            z[0] = cfg.s * dm
            y = rescale_point(
                manifold_point(h, z), cfg)
            got = float(lmath.dist0(y.data, K))
            assert got == pytest.approx(0.99 * dm, rel=1e-9)

    def test_output_distance_monotone_in_norm(self):
        h = ManifoldHandle("m", 2)
        cfg = RescaleConfig(s=2.0, profile=F64)
        dm = d_max(1.0, F64)
        grid = np.exp(np.linspace(np.log(1e-4), np.log(cfg.s * dm), 64))
        dists = []
        for n in grid:
            y = rescale_point(manifold_point(h, [n, 0.0]), cfg)
            dists.append(float(lmath.dist0(y.data, 1.0)))
        assert np.all(np.diff(dists) > 0)


def manifold_point(h, z):
    from lorentzkit.manifold import exp_map

    return exp_map(origin(h), origin_tangent(h, np.asarray(z, dtype=h.dtype)))


class TestRescaleTangent:
    def test_zero_fixed(self):
        h = ManifoldHandle("t", 3)
        cfg = RescaleConfig(s=2.0, profile=F64)
        z = origin_tangent(h, np.zeros(3))
        np.testing.assert_array_equal(rescale_tangent(z, cfg).data, np.zeros(4))

    def test_composition_identity_with_point_rescale(self):
        h = ManifoldHandle("c", 3, kappa_raw=math.log(1.7))
        cfg = RescaleConfig(s=2.0, profile=F64)
        rng = np.random.default_rng(0)
        from lorentzkit.manifold import exp_map

        for _ in range(20):
            zs = rng.normal(size=3) * rng.uniform(0.1, 10)
            z = origin_tangent(h, zs)
            a = exp_map(origin(h), rescale_tangent(z, cfg)).data
            b = rescale_point(exp_map(origin(h), z), cfg).data
            np.testing.assert_allclose(a, b, rtol=1e-8, atol=1e-8)

    def test_bounded_up_to_1e6(self):
        h = ManifoldHandle("bd", 2)
        cfg = RescaleConfig(s=2.0, profile=F64)
        dm = d_max(1.0, F64)
        for n in (1e-3, 1.0, 1e3, 1e6):
            out = rescale_tangent(origin_tangent(h, [n, 0]), cfg)
            assert np.linalg.norm(out.data) < dm

    def test_requires_origin_base(self):
        h = ManifoldHandle("rb", 2)
        cfg = RescaleConfig(s=2.0, profile=F64)
        x = manifold_point(h, [1.0, 0.0])
        v = origin_tangent(h, [0.5, 0.0])
        bad = type(v)(v.data, x, check=False)
        with pytest.raises(UsageError):
            rescale_tangent(bad, cfg)


class TestBoundsSweep:
    @pytest.mark.parametrize("dtype", [np.float64, np.float32])
    def test_no_violations_100k(self, dtype):
        rng = np.random.default_rng(42)
        profile = PrecisionProfile.for_dtype(dtype)
        cfg = RescaleConfig(s=2.0, profile=profile)
        K = 1.0
        dm = d_max(K, profile)
        n = 100_000
        lognorm = rng.uniform(np.log(1e-6), np.log(1e6), size=(n, 1))
        direc = rng.normal(size=(n, 3))
        direc /= np.linalg.norm(direc, axis=1, keepdims=True)
        zs = (direc * np.exp(lognorm)).astype(dtype)
        out = np.asarray(rescale_space(zs, K, cfg))
        pts = np.asarray(lmath.expmap0_space(out, K))
        dist0 = np.asarray(lmath.dist0(pts.astype(np.float64), K))
        assert int(np.sum(dist0 >= dm)) == 0
        assert float(np.max(pts[..., 0])) < profile.x_t_max

    def test_direction_preserved(self):
        rng = np.random.default_rng(7)
        cfg = RescaleConfig(s=2.0, profile=F64)
        zs = rng.normal(size=(1000, 4)) * np.exp(rng.uniform(-3, 3, size=(1000, 1)))
        out = np.asarray(rescale_space(zs, 1.0, cfg))
        cos = (out * zs).sum(-1) / (np.linalg.norm(out, axis=-1)
                                    * np.linalg.norm(zs, axis=-1))
        assert np.all(cos > 1 - 1e-12)

    def test_near_origin_amplification_factor(self):
        # the map is not the identity near zero: small norms scale by
        # atanh(0.99)/s, about 1.3234 at s = 2
        cfg = RescaleConfig(s=2.0, profile=F64)
        z = np.array([1e-6, 0.0])
        out = np.asarray(rescale_space(z, 1.0, cfg))
        assert np.linalg.norm(out) / 1e-6 == pytest.approx(math.atanh(0.99) / 2.0,
                                                           rel=1e-6)


@settings(max_examples=80, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0.3, 3.0), st.floats(0.5, 4.0))
def test_monotone_property(norm, K, s):
    cfg = RescaleConfig(s=s, profile=F64)
    a = np.linalg.norm(rescale_space(np.array([norm, 0.0]), K, cfg))
    b = np.linalg.norm(rescale_space(np.array([norm * 1.01, 0.0]), K, cfg))
    if norm * 1.01 < s * d_max(K, F64):
        assert b > a
    else:
        assert b >= a - 1e-12  # saturated region: monotone up to ulp noise
