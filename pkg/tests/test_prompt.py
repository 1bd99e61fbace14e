import numpy as np
import pytest
from hypothesis import given, strategies as st

from prodehaze.haze import apply_asm
from prodehaze.prompt import (
    HaarSubbands, build_condition, decode_latent, default_prompt_kernel, encode_latent, extract_high_freq_prompt,
    haar_dwt, image_condition, inverse_haar, latent_pinv, projection_matrix,
)

from helpers import smooth_image


def brute_haar(img):
    """Loop-based 2x2 orthonormal Haar, one block at a time."""
    h, w, c = img.shape
    out = {k: np.zeros((h // 2, w // 2, c)) for k in ("ll", "lh", "hl", "hh")}
    for i in range(h // 2):
        for j in range(w // 2):
            for ch in range(c):
                a, b = img[2 * i, 2 * j, ch], img[2 * i, 2 * j + 1, ch]
                cc, d = img[2 * i + 1, 2 * j, ch], img[2 * i + 1, 2 * j + 1, ch]
                out["ll"][i, j, ch] = (a + b + cc + d) / 2
                out["lh"][i, j, ch] = (a + b - cc - d) / 2
                out["hl"][i, j, ch] = (a - b + cc - d) / 2
                out["hh"][i, j, ch] = (a - b - cc + d) / 2
    return out


def test_constant_block():
    bands = haar_dwt(np.ones((2, 2, 1)))
    assert bands.ll[0, 0, 0] == 2.0
    assert bands.lh[0, 0, 0] == bands.hl[0, 0, 0] == bands.hh[0, 0, 0] == 0.0


def test_diagonal_checkerboard():
    bands = haar_dwt(np.array([[1.0, 0.0], [0.0, 1.0]])[:, :, None])
    assert (bands.ll[0, 0, 0], bands.lh[0, 0, 0], bands.hl[0, 0, 0], bands.hh[0, 0, 0]) == (1.0, 0.0, 0.0, 1.0)


def test_matches_loop_oracle(rng):
    img = rng.random((6, 8, 3))
    bands = haar_dwt(img)
    ref = brute_haar(img)
    for k in ref:
        assert np.allclose(getattr(bands, k), ref[k], atol=1e-15)


def test_odd_size_rejected():
    with pytest.raises(ValueError):
        haar_dwt(np.zeros((3, 4, 1)))


@given(st.integers(0, 2**32 - 1))
def test_reconstruction_and_energy(seed):
    img = np.random.default_rng(seed).random((8, 8, 3))
    bands = haar_dwt(img)
    assert np.max(np.abs(inverse_haar(bands) - img)) < 1e-12
    energy = sum(np.sum(getattr(bands, k) ** 2) for k in ("ll", "lh", "hl", "hh"))
    assert abs(energy - np.sum(img**2)) <= 1e-9 * np.sum(img**2)


def test_prompt_of_constant_is_zero(rng):
    p = extract_high_freq_prompt(np.full((4, 4, 3), 0.3), rng.random((9, 3)))
    assert np.all(p.x_high == 0.0) and p.x_high.shape == (2, 2, 3)


def test_selector_kernel_returns_lh(rng):
    img = rng.random((4, 6, 3))
    kernel = np.zeros((9, 3))
    kernel[:3] = np.eye(3)
    assert np.array_equal(extract_high_freq_prompt(img, kernel).x_high, haar_dwt(img).lh)


def test_prompt_per_pixel_oracle(rng):
    img = rng.random((4, 4, 3))
    kernel = rng.standard_normal((9, 3))
    ref = brute_haar(img)
    got = extract_high_freq_prompt(img, kernel).x_high
    for i in range(2):
        for j in range(2):
            vec = np.concatenate([ref["lh"][i, j], ref["hh"][i, j], ref["hl"][i, j]])
            assert np.allclose(got[i, j], vec @ kernel, atol=1e-14)


def test_kernel_shape_checked():
    with pytest.raises(ValueError):
        extract_high_freq_prompt(np.zeros((4, 4, 3)), np.zeros((6, 3)))


@given(st.integers(0, 2**32 - 1), st.floats(-1, 1))
def test_prompt_ignores_offset(seed, offset):
    r = np.random.default_rng(seed)
    img, kernel = r.random((6, 6, 3)), r.standard_normal((9, 3))
    a = extract_high_freq_prompt(img, kernel).x_high
    b = extract_high_freq_prompt(img + offset, kernel).x_high
    assert np.allclose(a, b, atol=1e-9)


@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_constant_haze_scales_prompt(seed, t):
    r = np.random.default_rng(seed)
    clean, kernel, light = r.random((8, 8, 3)), r.standard_normal((9, 3)), r.uniform(0.7, 1, 3)
    hazy = apply_asm(clean, np.full((8, 8, 1), t), light, clamp=False)
    assert np.allclose(extract_high_freq_prompt(hazy, kernel).x_high,
                       t * extract_high_freq_prompt(clean, kernel).x_high, atol=1e-9)


def test_band_order_matters(rng):
    img = rng.random((4, 4, 3))
    kernel = rng.standard_normal((9, 3))
    b = haar_dwt(img)
    swapped = HaarSubbands(ll=b.ll, lh=b.hl, hl=b.lh, hh=b.hh)
    from prodehaze.prompt import stack_high_bands
    assert not np.allclose(stack_high_bands(b) @ kernel, stack_high_bands(swapped) @ kernel)


def test_default_kernel_averages_bands():
    k = default_prompt_kernel(3)
    assert k.shape == (9, 3) and np.allclose(k.sum(axis=0), 1.0)


def test_encoder_shapes_and_linearity(rng):
    assert encode_latent(rng.random((8, 8, 3))).shape == (1, 1, 4)
    assert np.all(encode_latent(np.zeros((16, 8, 3))) == 0.0)
    with pytest.raises(ValueError):
        encode_latent(np.zeros((12, 8, 3)))


def test_projection_rows_orthogonal():
    p = projection_matrix(8, 3)
    assert np.allclose(p @ p.T, np.eye(4) / 64, atol=1e-15)


def test_dc_channels_are_block_means(rng):
    img = rng.random((16, 16, 3))
    z = encode_latent(img)
    means = img.reshape(2, 8, 2, 8, 3).mean(axis=(1, 3))
    assert np.allclose(z[:, :, :3], means, atol=1e-14)


def test_pinv_is_projection(rng):
    img = rng.random((16, 8, 3))
    z = encode_latent(img)
    assert np.allclose(encode_latent(latent_pinv(z)), z, atol=1e-13)


@pytest.mark.parametrize("seed", range(8))
def test_decode_reconstructs_smooth_images(seed):
    img = smooth_image(seed)
    rms = np.sqrt(np.mean((decode_latent(encode_latent(img)) - img) ** 2))
    assert rms < 0.05


def test_build_condition(rng):
    a, b = rng.random((1, 1, 4)), rng.random((1, 1, 4))
    c = build_condition(a, b)
    assert c.shape == (1, 1, 8)
    assert np.array_equal(c[:, :, :4], a)
    assert np.all(build_condition(a, np.zeros((1, 1, 4)))[:, :, 4:] == 0)
    with pytest.raises(ValueError):
        build_condition(a, np.zeros((2, 1, 4)))


def test_image_condition_shapes(rng):
    img = rng.random((32, 32, 3))
    c = image_condition(img)
    assert c.shape == (4, 4, 8)
    assert np.all(image_condition(img, use_prompt=False)[:, :, 4:] == 0)
