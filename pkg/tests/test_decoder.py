import numpy as np
import pytest
from scipy import signal as sp_signal

from binscene.decoder import (LoudspeakerLayout, decode_bilateral,
                              decode_binaural, fingerprint, fit_bimagls,
                              fit_inphase_decoder, inphase_weights,
                              load_decoder, normalize_feeds,
                              pad_ambisonics_order, resample_decoder,
                              save_decoder)
from binscene.grids import min_degree_grid
from binscene.hrtf import delta_hrtf_set, pure_delay_hrtf_set
from binscene.shmath import SphericalDirection, eval_real_sh, sh_matrix
from binscene.signals import AmbiSignal


def encode_impulse(direction, order, fs, n=2048, amp=1.0):
    sh = eval_real_sh(order, direction)
    data = np.zeros((n, len(sh.coeffs)))
    data[0] = amp * sh.coeffs
    return AmbiSignal(order, fs, data)


def test_fit_is_deterministic(tiny_hset):
    a = fit_bimagls(tiny_hset, 1, fc=3000.0, nfft=512, filter_len=64)
    b = fit_bimagls(tiny_hset, 1, fc=3000.0, nfft=512, filter_len=64)
    np.testing.assert_array_equal(a.left_filters, b.left_filters)
    assert fingerprint(a) == fingerprint(b)


def test_fit_validates_inputs(tiny_hset):
    with pytest.raises(ValueError):
        fit_bimagls(tiny_hset, 0)
    with pytest.raises(ValueError):
        fit_bimagls(tiny_hset, 1, fc=5000.0)  # past Nyquist at 8 kHz


def test_delta_set_round_trip_flat(tiny_hset):
    dec = fit_bimagls(tiny_hset, 1, fc=3000.0, nfft=512, filter_len=64)
    sig = encode_impulse(SphericalDirection(0.3, 0.1), 1, 8000, n=512)
    out = decode_binaural(sig, dec)
    freqs = np.fft.rfftfreq(4096, 1 / 8000)
    mag = np.abs(np.fft.rfft(out.data[:, 0], 4096))
    band = (freqs > 50) & (freqs < 2800)
    dev = 20 * np.log10(mag[band])
    assert np.max(np.abs(dev)) < 0.5


def test_decode_zero_is_zero(tiny_decoder):
    sig = AmbiSignal(1, 8000, np.zeros((256, 4)))
    assert np.all(decode_binaural(sig, tiny_decoder).data == 0.0)


def test_decode_linear(tiny_decoder):
    rng = np.random.default_rng(2)
    a = AmbiSignal(1, 8000, rng.standard_normal((300, 4)))
    b = AmbiSignal(1, 8000, rng.standard_normal((300, 4)))
    ab = AmbiSignal(1, 8000, a.data + b.data)
    lhs = decode_binaural(ab, tiny_decoder).data
    rhs = decode_binaural(a, tiny_decoder).data + \
        decode_binaural(b, tiny_decoder).data
    assert np.max(np.abs(lhs - rhs)) < 1e-9 * np.max(np.abs(lhs))


def test_decode_shift_equivariant(tiny_decoder):
    rng = np.random.default_rng(4)
    x = rng.standard_normal((400, 4))
    shifted = np.vstack([np.zeros((5, 4)), x])
    out = decode_binaural(AmbiSignal(1, 8000, x), tiny_decoder).data
    out_s = decode_binaural(AmbiSignal(1, 8000, shifted), tiny_decoder).data
    np.testing.assert_allclose(out_s[5:5 + len(out)], out, atol=1e-12)


def test_decode_output_length(tiny_decoder):
    sig = AmbiSignal(1, 8000, np.ones((100, 4)))
    out = decode_binaural(sig, tiny_decoder)
    assert out.data.shape == (100 + 64 - 1, 2)


def test_decode_order_mismatch(tiny_decoder):
    with pytest.raises(ValueError):
        decode_binaural(AmbiSignal(2, 8000, np.ones((10, 9))), tiny_decoder)


def test_plane_wave_matches_direct_hrtf_filtering():
    hset = pure_delay_hrtf_set(fs=8000, ir_len=64, grid_points=26)
    order = 3
    dec = fit_bimagls(hset, order, fc=2500.0, nfft=1024, filter_len=256)
    k = 4  # some grid direction
    sig = encode_impulse(hset.directions[k], order, 8000, n=1024)
    out = decode_binaural(sig, dec).data
    ref = hset.left_irs[k]
    # compare below fc where the fit is complex least squares
    freqs = np.fft.rfftfreq(2048, 1 / 8000)
    band = (freqs > 100) & (freqs < 2000)
    got = np.abs(np.fft.rfft(out[:, 0], 2048))[band]
    want = np.abs(np.fft.rfft(ref, 2048))[band]
    assert np.mean(np.abs(20 * np.log10(got / want))) < 1.0


def test_bilateral_equals_binaural_on_same_field(tiny_decoder):
    rng = np.random.default_rng(6)
    field = AmbiSignal(1, 8000, rng.standard_normal((200, 4)))
    bi = decode_bilateral(field, field, tiny_decoder)
    mono = decode_binaural(field, tiny_decoder)
    np.testing.assert_array_equal(bi.data, mono.data)


def test_bilateral_zero_field_silences_ear(tiny_decoder):
    rng = np.random.default_rng(7)
    field = AmbiSignal(1, 8000, rng.standard_normal((200, 4)))
    silent = AmbiSignal(1, 8000, np.zeros((200, 4)))
    out = decode_bilateral(field, silent, tiny_decoder)
    assert np.any(out.data[:, 0] != 0.0)
    assert np.all(out.data[:, 1] == 0.0)


def test_bilateral_frontal_ild_small():
    # symmetric head model, frontal source: ears should match broadband
    hset = pure_delay_hrtf_set(fs=8000, ir_len=64, grid_points=26)
    dec = fit_bimagls(hset, 2, fc=2500.0, nfft=1024, filter_len=256)
    sig = encode_impulse(SphericalDirection(0.0, 0.0), 2, 8000, n=1024)
    out = decode_bilateral(sig, sig, dec)
    e_left = np.sum(out.data[:, 0] ** 2)
    e_right = np.sum(out.data[:, 1] ** 2)
    assert abs(10 * np.log10(e_left / e_right)) < 1.0


def test_inphase_weights_order_one():
    g = inphase_weights(1)
    assert g[0] == pytest.approx(1.0)
    assert g[1] == pytest.approx(0.5)


def test_inphase_weights_monotone():
    g = inphase_weights(5)
    assert np.all(np.diff(g) < 0)
    assert g[0] == pytest.approx(1.0)


def uniform_layout(order):
    pts, _ = min_degree_grid(2 * order + 1)
    dirs = tuple(SphericalDirection.from_unit_vector(p) for p in pts)
    return LoudspeakerLayout(directions=dirs,
                             names=tuple(f"s{i}" for i in range(len(dirs))),
                             name="uniform")


def test_inphase_gains_nonnegative_on_uniform_layout():
    order = 2
    layout = uniform_layout(order)
    ls = fit_inphase_decoder(layout, order, method="sampling")
    rng = np.random.default_rng(11)
    for _ in range(40):
        d = SphericalDirection(rng.uniform(-np.pi, np.pi),
                               rng.uniform(-np.pi / 2, np.pi / 2))
        gains = ls.matrix @ eval_real_sh(order, d).coeffs
        assert gains.min() > -1e-10


def test_inphase_warns_on_sparse_layout():
    layout = uniform_layout(1)  # enough for order 1 only
    with pytest.warns(UserWarning):
        fit_inphase_decoder(layout, 3)


def test_layout_rejects_duplicates():
    d = SphericalDirection(0.3, 0.1)
    with pytest.raises(ValueError):
        LoudspeakerLayout(directions=(d, d), names=("a", "b"), name="dup")


def test_layout_text_round_trip(tmp_path):
    layout = uniform_layout(2)
    path = str(tmp_path / "layout.txt")
    layout.to_text(path)
    back = LoudspeakerLayout.from_text(path)
    assert back.name == layout.name
    assert back.names == layout.names
    for a, b in zip(back.directions, layout.directions):
        assert a.azimuth == pytest.approx(b.azimuth, abs=1e-6)
        assert a.elevation == pytest.approx(b.elevation, abs=1e-6)


def test_ls_decode_truncates_higher_order():
    order = 1
    ls = fit_inphase_decoder(uniform_layout(order), order)
    rng = np.random.default_rng(13)
    low = AmbiSignal(1, 8000, rng.standard_normal((50, 4)))
    padded = pad_ambisonics_order(low, 3)
    np.testing.assert_allclose(ls.decode(padded), ls.decode(low), atol=1e-12)
    with pytest.raises(ValueError):
        ls.decode(AmbiSignal(0, 8000, np.ones((10, 1))))


def test_pad_order_properties():
    rng = np.random.default_rng(8)
    sig = AmbiSignal(1, 8000, rng.standard_normal((64, 4)))
    up = pad_ambisonics_order(sig, 10)
    assert up.data.shape == (64, 121)
    assert np.all(up.data[:, 4:] == 0.0)
    np.testing.assert_array_equal(up.data[:, :4], sig.data)
    assert np.sum(up.data ** 2) == np.sum(sig.data ** 2)
    same = pad_ambisonics_order(sig, 1)
    np.testing.assert_array_equal(same.data, sig.data)
    with pytest.raises(ValueError):
        pad_ambisonics_order(up, 2)


def test_normalize_feeds_energy_and_scale_invariance():
    rng = np.random.default_rng(10)
    feeds = rng.standard_normal((500, 6))
    out = normalize_feeds(feeds)
    assert np.sum(out ** 2) == pytest.approx(1.0, rel=1e-9)
    np.testing.assert_array_equal(normalize_feeds(7.0 * feeds), out)
    with pytest.raises(ValueError):
        normalize_feeds(np.zeros((10, 2)))


def test_normalized_scenes_share_energy():
    rng = np.random.default_rng(12)
    a = normalize_feeds(rng.standard_normal((400, 6)) * 3.0)
    b = normalize_feeds(rng.standard_normal((700, 6)) * 0.01)
    assert np.sum(a ** 2) == pytest.approx(np.sum(b ** 2), rel=1e-9)


def test_decoder_round_trip(tmp_path, tiny_decoder):
    stem = str(tmp_path / "dec")
    save_decoder(stem, tiny_decoder)
    back = load_decoder(stem)
    assert back.order == tiny_decoder.order
    assert back.fs == tiny_decoder.fs
    assert back.fc == tiny_decoder.fc
    assert fingerprint(back) == fingerprint(tiny_decoder)
    # float32 wire format: filters agree to single precision
    np.testing.assert_allclose(back.left_filters, tiny_decoder.left_filters,
                               atol=1e-7)


def test_resample_decoder_halves_filter_rate(tiny_decoder):
    down = resample_decoder(tiny_decoder, 4000)
    assert down.fs == 4000
    assert down.left_filters.shape[1] == tiny_decoder.left_filters.shape[1] // 2
    # a flat filter stays flat through resampling
    freqs = np.linspace(100, 1500, 50)
    w = 2 * np.pi * freqs / 4000
    _, h = sp_signal.freqz(down.left_filters[0], worN=w)
    base = np.abs(np.fft.rfft(tiny_decoder.left_filters[0], 512))
    assert np.max(np.abs(20 * np.log10(np.abs(h) / np.median(base)))) < 1.0
