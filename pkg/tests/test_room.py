import numpy as np
import pytest

from binscene.room import (HeadPose, RoomSpec, ear_positions, estimate_t60,
                           load_ambi_rir, rt60_to_reflectivity,
                           save_ambi_rir, schroeder_decay, simulate_ambi_rir)

FS = 16000


def big_room():
    return RoomSpec((10.0, 10.0, 10.0), 0.5)


def centered_head():
    return HeadPose((5.0, 5.0, 5.0), 0.0, 0.0)


def test_reflectivity_hand_value():
    # alpha = 0.161*60/(94*0.3) = 0.34255, rho = sqrt(1 - alpha)
    rho = rt60_to_reflectivity(RoomSpec((5, 4, 3), 0.3))
    assert rho == pytest.approx(0.8108309, abs=1e-6)


def test_reflectivity_absorption_limit():
    room = RoomSpec((5, 4, 3), 0.3)
    rt60_edge = 0.161 * room.volume / room.surface
    assert rt60_to_reflectivity(RoomSpec((5, 4, 3), rt60_edge)) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        rt60_to_reflectivity(RoomSpec((5, 4, 3), rt60_edge * 0.99))


def test_room_spec_validation():
    with pytest.raises(ValueError):
        RoomSpec((0.0, 4, 3), 0.3)
    with pytest.raises(ValueError):
        RoomSpec((5, 4, 3), 0.0)


def test_direct_free_field_oracle():
    rir = simulate_ambi_rir(big_room(), np.array([6.0, 5.0, 5.0]),
                            np.array([5.0, 5.0, 5.0]), centered_head(),
                            1, FS, mode="direct_only")
    idx = round(FS / 343)
    assert rir.data[idx, 0] == pytest.approx(1 / (4 * np.pi), abs=1e-9)
    nz = np.nonzero(rir.data[:, 0])[0]
    assert nz.tolist() == [idx]
    assert np.all(rir.data[:, 1] == 0.0)  # frontal: sin(az) channel silent


def test_direct_amplitude_inverse_distance():
    one = simulate_ambi_rir(big_room(), np.array([6.0, 5.0, 5.0]),
                            np.array([5.0, 5.0, 5.0]), centered_head(),
                            0, FS, mode="direct_only")
    two = simulate_ambi_rir(big_room(), np.array([7.0, 5.0, 5.0]),
                            np.array([5.0, 5.0, 5.0]), centered_head(),
                            0, FS, mode="direct_only")
    assert two.data[:, 0].max() == pytest.approx(one.data[:, 0].max() / 2,
                                                 rel=1e-12)


def test_first_order_image_delays_in_cube():
    # source (1,2,2), receiver (3,2,2) in a 4 m cube: mirror images across
    # each wall pair sit at hand-computed distances 4, 4, sqrt(20) x4
    room = RoomSpec((4.0, 4.0, 4.0), 0.4)
    head = HeadPose((3.0, 2.0, 2.0), 0.0, 0.0)
    rir = simulate_ambi_rir(room, np.array([1.0, 2.0, 2.0]),
                            np.array([3.0, 2.0, 2.0]), head, 0, FS,
                            mode="full")
    acn0 = rir.data[:, 0]
    for dist in [2.0, 4.0, 4.0, np.sqrt(20), np.sqrt(20), np.sqrt(20),
                 np.sqrt(20)]:
        idx = round(dist / 343 * FS)
        window = acn0[idx - 1:idx + 2]
        assert np.any(window != 0.0), f"no arrival near {dist} m"


def test_direct_only_matches_full_prefix():
    room = RoomSpec((4.0, 4.0, 4.0), 0.4)
    head = HeadPose((3.0, 2.0, 2.0), 0.0, 0.0)
    args = (room, np.array([1.0, 2.0, 2.0]), np.array([3.0, 2.0, 2.0]),
            head, 2, FS)
    full = simulate_ambi_rir(*args, mode="full")
    direct = simulate_ambi_rir(*args, mode="direct_only")
    # the nearest image sits at 4 m so the direct RIR ends well before it
    assert len(direct) < round(4.0 / 343 * FS)
    np.testing.assert_array_equal(direct.data, full.data[:len(direct)])


def test_doubling_fs_doubles_delay_index():
    # distance chosen on the 8 kHz sample lattice so rounding is exact
    d = 343 * 50 / 8000
    src = np.array([5.0 + d, 5.0, 5.0])
    rcv = np.array([5.0, 5.0, 5.0])
    lo = simulate_ambi_rir(big_room(), src, rcv, centered_head(), 0, 8000,
                           mode="direct_only")
    hi = simulate_ambi_rir(big_room(), src, rcv, centered_head(), 0, 16000,
                           mode="direct_only")
    assert np.nonzero(lo.data[:, 0])[0][0] * 2 == np.nonzero(hi.data[:, 0])[0][0]
    assert lo.data[:, 0].max() == hi.data[:, 0].max()


def test_full_mode_length_covers_rt60():
    room = RoomSpec((5, 4, 3), 0.3)
    head = HeadPose((2.5, 2.0, 1.5), 0.0, 0.0)
    rir = simulate_ambi_rir(room, np.array([3.5, 2.0, 1.5]),
                            np.array([2.5, 2.0, 1.5]), head, 0, FS)
    assert len(rir) >= int(np.ceil(room.rt60 * FS))
    assert rir.mode == "full"


def test_simulation_is_deterministic():
    room = RoomSpec((5, 4, 3), 0.3)
    head = HeadPose((2.5, 2.0, 1.5), 0.2, -0.1)
    args = (room, np.array([3.5, 2.2, 1.5]), np.array([2.5, 2.0, 1.5]),
            head, 1, FS)
    np.testing.assert_array_equal(simulate_ambi_rir(*args).data,
                                  simulate_ambi_rir(*args).data)


def test_rejects_source_outside_room():
    with pytest.raises(ValueError):
        simulate_ambi_rir(RoomSpec((4, 4, 4), 0.4), np.array([5.0, 2.0, 2.0]),
                          np.array([2.0, 2.0, 2.0]),
                          HeadPose((2.0, 2.0, 2.0), 0.0, 0.0), 0, FS)


def test_ear_positions_axis_aligned():
    room = RoomSpec((5, 4, 3), 0.3)
    left, right = ear_positions(room, HeadPose((2.5, 2.0, 1.5), 0.0, 0.0))
    np.testing.assert_allclose(left, [2.5, 2.0875, 1.5], atol=1e-12)
    np.testing.assert_allclose(right, [2.5, 1.9125, 1.5], atol=1e-12)


def test_ear_positions_yaw_quarter_turn():
    room = RoomSpec((5, 4, 3), 0.3)
    left, right = ear_positions(room, HeadPose((2.5, 2.0, 1.5),
                                               np.pi / 2, 0.0))
    np.testing.assert_allclose(left, [2.5 - 0.0875, 2.0, 1.5], atol=1e-12)
    np.testing.assert_allclose(right, [2.5 + 0.0875, 2.0, 1.5], atol=1e-12)


def test_ear_separation_rigid():
    room = RoomSpec((5, 4, 3), 0.3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        pose = HeadPose((2.5, 2.0, 1.5), rng.uniform(-np.pi, np.pi),
                        rng.uniform(-0.6, 0.6))
        left, right = ear_positions(room, pose)
        assert np.linalg.norm(left - right) == pytest.approx(0.175, abs=1e-12)


def test_ear_outside_room_rejected():
    room = RoomSpec((5, 4, 3), 0.3)
    with pytest.raises(ValueError):
        ear_positions(room, HeadPose((2.5, 0.05, 1.5), 0.0, 0.0))


def test_schroeder_curve_monotone():
    room = RoomSpec((5, 4, 3), 0.3)
    head = HeadPose((2.5, 2.0, 1.5), 0.0, 0.0)
    rir = simulate_ambi_rir(room, np.array([3.5, 2.0, 1.5]),
                            np.array([2.5, 2.0, 1.5]), head, 0, FS)
    curve = schroeder_decay(rir.data[:, 0])
    assert curve[0] == 0.0
    assert np.all(np.diff(curve) <= 1e-12)


def test_estimate_t60_on_synthetic_decay():
    # analytic: amplitude exp(-6.9078 t / T60) decays 60 dB in T60 seconds
    t60 = 0.4
    t = np.arange(int(1.2 * t60 * FS)) / FS
    ir = np.exp(-6.907755 * t / t60) * np.cos(2 * np.pi * 1000 * t)
    assert estimate_t60(ir, FS) == pytest.approx(t60, rel=0.02)


def test_estimate_t60_simulated_room_within_20pct():
    room = RoomSpec((5, 4, 3), 0.3)
    head = HeadPose((2.5, 2.0, 1.5), 0.0, 0.0)
    rir = simulate_ambi_rir(room, np.array([3.5, 2.0, 1.5]),
                            np.array([2.5, 2.0, 1.5]), head, 0, FS)
    t60 = estimate_t60(rir.data[:, 0], FS, highpass_hz=200)
    assert 0.8 * room.rt60 <= t60 <= 1.2 * room.rt60


def test_estimate_t60_needs_decay_range():
    with pytest.raises(ValueError):
        estimate_t60(np.r_[1.0, np.zeros(100)], FS)


def test_rir_round_trip(tmp_path):
    room = RoomSpec((4, 4, 4), 0.4)
    head = HeadPose((3.0, 2.0, 2.0), 0.1, 0.0)
    rir = simulate_ambi_rir(room, np.array([1.0, 2.0, 2.0]),
                            np.array([3.0, 2.0, 2.0]), head, 2, FS)
    stem = str(tmp_path / "rir")
    save_ambi_rir(stem, rir, room=room, head=head)
    back = load_ambi_rir(stem)
    assert back.order == rir.order and back.fs == rir.fs
    assert back.mode == rir.mode
    np.testing.assert_allclose(back.data, rir.data, atol=1e-7)
