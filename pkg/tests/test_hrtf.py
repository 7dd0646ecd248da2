import numpy as np
import pytest
from scipy import signal

from binscene.hrtf import (HrtfSet, coupling_compensation_fit, crop_direct,
                           delta_hrtf_set, lfe_extend, load_hrtf_set,
                           load_iir_filter, pure_delay_hrtf_set,
                           rigid_sphere_hrtf_set, save_hrtf_set,
                           save_iir_filter, voronoi_weights)
from binscene.shmath import SphericalDirection

FS = 16000


def two_dir_set(left, right=None, fs=FS):
    """Minimal two-direction set from one (or two) IR prototypes."""
    left = np.asarray(left, dtype=float)
    right = left.copy() if right is None else np.asarray(right, dtype=float)
    dirs = (SphericalDirection(0.0, 0.0), SphericalDirection(np.pi / 2, 0.0))
    irs_l = np.stack([left, left])
    irs_r = np.stack([right, right])
    return HrtfSet(fs=fs, directions=dirs, left_irs=irs_l, right_irs=irs_r,
                   quadrature_weights=np.full(2, 2 * np.pi))


def spectrum_db(ir, nfft=4096):
    return 20 * np.log10(np.abs(np.fft.rfft(ir, nfft)) + 1e-30)


def test_set_validation():
    with pytest.raises(ValueError):
        HrtfSet(fs=FS, directions=(SphericalDirection(0, 0),),
                left_irs=np.ones((2, 8)), right_irs=np.ones((2, 8)),
                quadrature_weights=np.ones(2))
    with pytest.raises(ValueError):
        HrtfSet(fs=FS,
                directions=(SphericalDirection(0, 0),
                            SphericalDirection(1, 0)),
                left_irs=np.ones((2, 8)), right_irs=np.ones((2, 8)),
                quadrature_weights=np.array([1.0, -1.0]))


def test_crop_keeps_onset_impulse():
    ir = np.zeros(256)
    ir[10] = 1.0
    out = crop_direct(two_dir_set(ir), 64)
    assert out.ir_length == 64
    assert out.left_irs[0, 10] == 1.0
    assert np.all(out.left_irs[0, 11:] == 0.0)


def test_crop_removes_reflection_keeps_direct_energy():
    ir = np.zeros(512)
    ir[20] = 1.0
    ir[200] = 0.6  # late arrival to be cropped away
    full = two_dir_set(ir)
    out = crop_direct(full, 128)
    direct_energy = 1.0
    kept = float(np.sum(out.left_irs[0] ** 2))
    assert abs(10 * np.log10(kept / direct_energy)) < 0.1
    assert np.all(out.left_irs[:, 100:] < 0.3)


def test_crop_idempotent():
    rng = np.random.default_rng(5)
    ir = np.zeros(256)
    ir[12] = 1.0
    ir[13:40] = rng.standard_normal(27) * 0.05
    once = crop_direct(two_dir_set(ir), 64)
    twice = crop_direct(once, 64)
    np.testing.assert_array_equal(once.left_irs, twice.left_irs)


def test_crop_rejects_cut_before_onset():
    ir = np.zeros(256)
    ir[100] = 1.0
    with pytest.raises(ValueError):
        crop_direct(two_dir_set(ir), 64)


def test_lfe_flat_input_unchanged():
    ir = np.zeros(256)
    ir[8] = 1.0  # flat magnitude at all frequencies
    out = lfe_extend(two_dir_set(ir), 250.0)
    dev = spectrum_db(out.left_irs[0]) - spectrum_db(ir)
    assert np.max(np.abs(dev)) < 0.1


def test_lfe_fills_highpassed_low_end():
    sos = signal.butter(4, 200.0, btype="highpass", fs=FS, output="sos")
    imp = np.zeros(1024)
    imp[8] = 1.0
    ir = signal.sosfilt(sos, imp)
    out = lfe_extend(two_dir_set(ir), 250.0)
    freqs = np.fft.rfftfreq(4096, 1 / FS)
    mag = spectrum_db(out.left_irs[0])
    band = (freqs >= 250) & (freqs <= 500)
    plateau = np.mean(mag[band])
    at_50 = mag[np.argmin(np.abs(freqs - 50.0))]
    assert abs(at_50 - plateau) < 1.0


def test_lfe_preserves_high_band():
    rng = np.random.default_rng(9)
    ir = np.zeros(512)
    ir[8] = 1.0
    ir[9:80] = rng.standard_normal(71) * 0.1
    out = lfe_extend(two_dir_set(ir), 250.0)
    freqs = np.fft.rfftfreq(4096, 1 / FS)
    keep = freqs >= 2 * 250.0
    dev = spectrum_db(out.left_irs[0])[keep] - spectrum_db(ir)[keep]
    assert np.max(np.abs(dev)) < 0.1


def test_conditioning_preserves_geometry():
    base = delta_hrtf_set(fs=FS, ir_len=128)
    for op in (lambda s: crop_direct(s, 64), lambda s: lfe_extend(s, 250.0)):
        out = op(base)
        assert out.fs == base.fs
        assert out.directions == base.directions
        assert out.left_irs.shape[0] == out.right_irs.shape[0]


def test_crop_and_lfe_roughly_commute():
    rng = np.random.default_rng(17)
    ir = np.zeros(256)
    ir[10] = 1.0
    ir[11:60] = rng.standard_normal(49) * 0.05
    base = two_dir_set(ir)
    a = lfe_extend(crop_direct(base, 128), 300.0)
    b = crop_direct(lfe_extend(base, 300.0), 128)
    dev = spectrum_db(a.left_irs[0]) - spectrum_db(b.left_irs[0])
    freqs = np.fft.rfftfreq(4096, 1 / FS)
    audible = (freqs > 100) & (freqs < 0.9 * FS / 2)
    assert np.max(np.abs(dev[audible])) < 0.5


def test_coupling_identity_is_flat():
    base = delta_hrtf_set(fs=FS, ir_len=64)
    filt = coupling_compensation_fit(base, base)
    freqs = np.linspace(100, 0.9 * FS / 2, 200)
    gain_db = 20 * np.log10(filt.magnitude(freqs))
    assert np.max(np.abs(gain_db)) < 0.1


def test_coupling_inverts_one_pole_lowpass():
    base = delta_hrtf_set(fs=FS, ir_len=64)
    b, a = signal.butter(1, 2000.0, btype="lowpass", fs=FS)
    coupled = HrtfSet(
        fs=FS, directions=base.directions,
        left_irs=signal.lfilter(b, a, base.left_irs, axis=1),
        right_irs=signal.lfilter(b, a, base.right_irs, axis=1),
        quadrature_weights=base.quadrature_weights)
    filt = coupling_compensation_fit(coupled, base)
    freqs = np.linspace(100, 0.9 * FS / 2, 200)
    _, h = signal.freqz(b, a, worN=freqs, fs=FS)
    target_db = -20 * np.log10(np.abs(h))
    got_db = 20 * np.log10(filt.magnitude(freqs))
    assert np.mean(np.abs(got_db - target_db)) < 1.0


def test_coupling_filter_is_stable():
    base = delta_hrtf_set(fs=FS, ir_len=64)
    b, a = signal.butter(2, 3000.0, btype="lowpass", fs=FS)
    coupled = HrtfSet(
        fs=FS, directions=base.directions,
        left_irs=signal.lfilter(b, a, base.left_irs, axis=1),
        right_irs=signal.lfilter(b, a, base.right_irs, axis=1),
        quadrature_weights=base.quadrature_weights)
    filt = coupling_compensation_fit(coupled, base)
    assert filt.pole_radius() < 1.0


def test_coupling_scale_equivariant():
    base = delta_hrtf_set(fs=FS, ir_len=64)
    from dataclasses import replace
    scaled = replace(base, left_irs=2.0 * base.left_irs,
                     right_irs=2.0 * base.right_irs)
    f1 = coupling_compensation_fit(base, scaled)
    freqs = np.linspace(100, 0.9 * FS / 2, 100)
    gain_db = 20 * np.log10(f1.magnitude(freqs))
    assert np.max(np.abs(gain_db - 20 * np.log10(2.0))) < 0.05


def test_voronoi_weights_cover_sphere():
    base = delta_hrtf_set(fs=FS, ir_len=32)
    w = voronoi_weights(base.directions)
    assert np.all(w > 0)
    assert np.sum(w) == pytest.approx(4 * np.pi, rel=1e-9)


def test_pure_delay_set_has_woodworth_itd():
    hset = pure_delay_hrtf_set(fs=48000, ir_len=128)
    # lateral direction: |ITD| near the spherical-head maximum
    side = np.argmin([abs(d.azimuth - np.pi / 2) + abs(d.elevation)
                      for d in hset.directions])
    left = hset.left_irs[side]
    right = hset.right_irs[side]
    lag = np.argmax(signal.correlate(left, right)) - (len(right) - 1)
    a = 0.175 / 2
    theta = np.pi / 2 - hset.directions[side].azimuth
    expected = (a / 343.0) * (np.cos(theta) + (np.pi / 2 - theta)) * 48000
    assert abs(abs(lag) - abs(expected)) <= 1.5


def test_rigid_sphere_set_sane():
    hset = rigid_sphere_hrtf_set(fs=16000, ir_len=128, grid_points=26)
    assert hset.n_directions == 26
    energies = np.sum(hset.left_irs ** 2, axis=1)
    assert np.all(energies > 0)
    assert np.all(np.isfinite(hset.left_irs))


@pytest.mark.parametrize("interleaved", [False, True])
def test_container_round_trip(tmp_path, interleaved):
    hset = pure_delay_hrtf_set(fs=FS, ir_len=64, grid_points=26)
    path = tmp_path / ("set.wav" if interleaved else "setdir")
    save_hrtf_set(str(path) if not interleaved else str(tmp_path / "set"),
                  hset, interleaved=interleaved)
    back = load_hrtf_set(str(path) if not interleaved
                         else str(tmp_path / "set.wav"))
    assert back.fs == hset.fs
    assert back.n_directions == hset.n_directions
    np.testing.assert_allclose(back.left_irs, hset.left_irs, atol=1e-7)
    np.testing.assert_allclose(back.right_irs, hset.right_irs, atol=1e-7)
    np.testing.assert_allclose(back.quadrature_weights,
                               hset.quadrature_weights, rtol=1e-12)
    assert all(abs(a.azimuth - b.azimuth) < 1e-9
               for a, b in zip(back.directions, hset.directions))


def test_iir_round_trip(tmp_path):
    b, a = signal.butter(3, 1200.0, btype="lowpass", fs=FS)
    from binscene.hrtf import IirFilter
    filt = IirFilter(b=b, a=a, fs=FS)
    save_iir_filter(str(tmp_path / "c.json"), filt)
    back = load_iir_filter(str(tmp_path / "c.json"))
    np.testing.assert_allclose(back.b, filt.b, rtol=1e-15)
    np.testing.assert_allclose(back.a, filt.a, rtol=1e-15)
    assert back.fs == FS
