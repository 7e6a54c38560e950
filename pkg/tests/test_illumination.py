import numpy as np
import pytest
import torch

from deshadow.errors import ShapeError
from deshadow.illumination import (
    CurveParams,
    IlluminationMap,
    apply_shadow_model,
    blend_final,
    enhance_second_order,
)
from deshadow.imaging import ImageTensor


class TestApplyShadowModel:
    def test_zero_mask_is_identity(self, rng):
        img = rng.uniform(size=(16, 16, 3))
        gain = rng.uniform(-0.5, 3.0, size=(16, 16, 3))
        out = apply_shadow_model(img, gain, np.zeros((16, 16)), clamp=False)
        assert np.array_equal(out, img)

    def test_zero_gain_is_identity(self, rng):
        img = rng.uniform(size=(16, 16, 3))
        mask = (rng.uniform(size=(16, 16)) < 0.5).astype(float)
        out = apply_shadow_model(img, np.zeros((16, 16, 3)), mask, clamp=False)
        assert np.array_equal(out, img)

    def test_scalar_case(self):
        img = np.full((4, 4, 3), 0.4)
        out = apply_shadow_model(img, np.full((4, 4, 3), 0.5), np.ones((4, 4)))
        assert out == pytest.approx(0.6, abs=1e-12)

    def test_identity_outside_mask_bit_exact(self, rng):
        img = rng.uniform(size=(12, 12, 3))
        gain = rng.uniform(-0.9, 5.0, size=(12, 12, 3))
        mask = (rng.uniform(size=(12, 12)) < 0.4).astype(float)
        out = apply_shadow_model(img, gain, mask, clamp=False)
        outside = mask == 0.0
        assert np.array_equal(out[outside], img[outside])

    def test_monotone_in_gain(self, rng):
        img = rng.uniform(0.05, 1.0, size=(8, 8, 3))
        g1 = rng.uniform(-0.5, 2.0, size=(8, 8, 3))
        g2 = g1 + 0.1
        out1 = apply_shadow_model(img, g1, np.ones((8, 8)), clamp=False)
        out2 = apply_shadow_model(img, g2, np.ones((8, 8)), clamp=False)
        assert (out2 > out1).all()

    def test_image_tensor_wrapping(self, rng):
        img = ImageTensor(rng.uniform(size=(6, 6, 3)))
        out = apply_shadow_model(img, np.full((6, 6, 3), 0.3), np.ones((6, 6)))
        assert isinstance(out, ImageTensor)
        assert out.data.max() <= 1.0

    def test_torch_tensors(self):
        img = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        gain = torch.full((1, 3, 8, 8), 0.5, dtype=torch.float64)
        mask = torch.zeros(1, 1, 8, 8, dtype=torch.float64)
        out = apply_shadow_model(img, gain, mask, clamp=False)
        assert torch.equal(out, img)

    def test_shape_mismatch(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        with pytest.raises(ShapeError):
            apply_shadow_model(img, rng.uniform(size=(4, 4, 3)), np.ones((8, 8)))
        with pytest.raises(ShapeError):
            apply_shadow_model(img, np.zeros((8, 8, 3)), np.ones((5, 5)))


class TestEnhanceSecondOrder:
    def test_zero_params_identity(self, rng):
        img = rng.uniform(size=(8, 8, 3))
        out = enhance_second_order(img, CurveParams(0.0, 0.0), clamp=False)
        assert np.array_equal(out, img)

    def test_fixed_points(self, rng):
        for value in (0.0, 1.0):
            img = np.full((4, 4, 3), value)
            a1 = rng.uniform(-1, 1, size=(4, 4, 3))
            a2 = rng.uniform(-1, 1, size=(4, 4, 3))
            out = enhance_second_order(img, CurveParams(a1, a2), clamp=False)
            assert np.array_equal(out, img)

    def test_scalar_curve_value(self):
        img = np.full((2, 2, 3), 0.5)
        out = enhance_second_order(img, CurveParams(0.8, 0.0), clamp=False)
        assert out == pytest.approx(0.5 + 0.8 * 0.25, abs=1e-12)

    def test_maps_unit_interval_without_clamp(self, rng):
        # Quadratic curve keeps [0,1] for any params in [-1,1]: the clamp
        # should never fire across a randomized sweep.
        for _ in range(50):
            img = rng.uniform(size=(10, 10, 3))
            params = CurveParams(
                rng.uniform(-1, 1, size=(10, 10, 3)), rng.uniform(-1, 1, size=(10, 10, 3))
            )
            out = enhance_second_order(img, params, clamp=False)
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_param_validation(self):
        with pytest.raises(ValueError):
            CurveParams(1.2, 0.0)
        with pytest.raises(ValueError):
            CurveParams(0.0, np.full((2, 2, 3), -1.5))


class TestBlendFinal:
    def test_alpha_zero_returns_deshadowed_bit_exact(self, rng):
        enhanced = rng.uniform(size=(8, 8, 3))
        deshadowed = rng.uniform(size=(8, 8, 3))
        assert np.array_equal(blend_final(enhanced, deshadowed, 0.0), deshadowed)

    def test_alpha_one_returns_enhanced_bit_exact(self, rng):
        enhanced = rng.uniform(size=(8, 8, 3))
        deshadowed = rng.uniform(size=(8, 8, 3))
        assert np.array_equal(blend_final(enhanced, deshadowed, 1.0), enhanced)

    def test_midpoint(self):
        out = blend_final(np.full((3, 3, 3), 0.8), np.full((3, 3, 3), 0.4), 0.5)
        assert out == pytest.approx(0.6, abs=1e-12)

    def test_bounded_between_inputs(self, rng):
        e = rng.uniform(size=(8, 8, 3))
        d = rng.uniform(size=(8, 8, 3))
        for alpha in (0.2, 0.7, 0.95):
            out = blend_final(e, d, alpha)
            assert (out >= np.minimum(e, d) - 1e-12).all()
            assert (out <= np.maximum(e, d) + 1e-12).all()

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            blend_final(np.ones((2, 2, 3)), np.ones((2, 2, 3)), 1.5)
        with pytest.raises(ValueError):
            blend_final(np.ones((2, 2, 3)), np.ones((2, 2, 3)), -0.1)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            blend_final(np.ones((2, 2, 3)), np.ones((3, 3, 3)), 0.5)


class TestIlluminationMap:
    def test_bounds_enforced(self):
        IlluminationMap(np.full((4, 4, 3), 0.5))
        with pytest.raises(ValueError):
            IlluminationMap(np.full((4, 4, 3), -1.0))
        with pytest.raises(ValueError):
            IlluminationMap(np.full((4, 4, 3), np.inf))
