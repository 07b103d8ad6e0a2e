from math import ceil

import numpy as np
import pytest

from zcrid import profiles as prof
from zcrid.features import build_zc_template
from zcrid.profiles import FhssPlan, simple_profile
from zcrid.synth import (CaptureRequest, InterferenceSpec, add_awgn, body_starts,
                         build_ofdm_frame, fhss_hop_order, gen_fhss, subcarrier_split,
                         symbol_body, synth_capture)

DESK = prof.SCALES["desk"]


def _request(label="T0010", snr=10.0, seed=0, interference=None, distance="D00"):
    return CaptureRequest(
        profile=prof.registry("desk").get(label),
        sample_rate=DESK.sample_rate,
        duration=DESK.duration,
        snr_db=snr,
        distance=distance,
        interference=interference if interference is not None else InterferenceSpec.none(),
        seed=seed,
    )


def test_desk_frame_length():
    p = simple_profile(256, 151, 3.072e6, cp=16)
    assert build_ofdm_frame(p, 0).size == 15 * 272


def test_full_frame_duration():
    p = simple_profile(2048, 1201, 30.72e6, cp=0)
    assert build_ofdm_frame(p, 0).size / p.bandwidth == pytest.approx(1.0e-3)


def test_asymmetric_split():
    p = simple_profile(2048, 1201, 30.72e6)
    neg, pos = subcarrier_split(p)
    assert neg + pos == 1200
    lo_virtual = 2048 // 2 - neg
    hi_virtual = 2048 // 2 - 1 - pos
    assert (lo_virtual, hi_virtual) == (424, 423)


def test_frame_length_matches_cp_plan():
    for p in prof.registry("desk").values():
        assert build_ofdm_frame(p, 1).size == sum(p.n_fft + c for c in p.cp_plan)


def test_zc_symbol_peak_at_body_start():
    p = prof.registry("desk")["T0011"]
    frame = build_ofdm_frame(p, 7)
    t = build_zc_template(p, 0, p.bandwidth)
    c = np.abs(np.correlate(frame, t, mode="valid"))
    slot = p.primary_root.symbols[0]
    assert int(np.argmax(c)) == body_starts(p)[slot]


def test_zc_too_long_for_grid():
    p = simple_profile(64, 41, 1e6, zc=(2, 43))
    with pytest.raises(ValueError, match="ZC does not fit grid"):
        build_ofdm_frame(p, 0)


def test_single_hop_tone():
    f_s, f0 = 1e6, 125e3
    plan = FhssPlan(dwell=1e-3, hop_bandwidth=0.0, hops=(f0,))
    x = gen_fhss(plan, 1e-3, f_s, 0)
    spec = np.abs(np.fft.fft(x))
    k = np.argmax(spec)
    assert abs(np.fft.fftfreq(x.size, 1 / f_s)[k] - f0) <= f_s / x.size


def test_hop_order_visible_in_stft():
    f_s = 1e6
    hops = (-300e3, -100e3, 100e3, 300e3)
    plan = FhssPlan(dwell=1e-3, hop_bandwidth=0.0, hops=hops)
    x = gen_fhss(plan, 4e-3, f_s, 42)
    order = fhss_hop_order(plan, 4, 42)
    freqs = np.fft.fftfreq(256, 1 / f_s)
    for j, h in enumerate(order):
        seg = x[j * 1000 + 100: j * 1000 + 356]
        f = freqs[np.argmax(np.abs(np.fft.fft(seg)))]
        assert abs(f - hops[h]) <= f_s / 256


def test_zero_duration_fhss():
    plan = FhssPlan(dwell=1e-3, hop_bandwidth=1e3, hops=(0.0,))
    assert gen_fhss(plan, 0.0, 1e6, 0).size == 0


def test_hop_out_of_band():
    plan = FhssPlan(dwell=1e-3, hop_bandwidth=1e3, hops=(600e3,))
    with pytest.raises(ValueError, match="hop out of band"):
        gen_fhss(plan, 1e-3, 1e6, 0)


def test_measured_snr_at_30_db():
    res = synth_capture(_request(snr=30.0))
    noise = res.capture.samples - res.clean
    m = res.active
    snr = 10 * np.log10(np.mean(np.abs(res.clean[m]) ** 2) / np.mean(np.abs(noise[m]) ** 2))
    assert abs(snr - 30.0) <= 0.5


def test_background_has_no_zc():
    res = synth_capture(_request(label="T0000", snr=0.0))
    assert res.zc_body_starts == [] and not res.active.any()
    x = res.capture.samples
    for p in prof.registry("desk").values():
        t = build_zc_template(p, 0, DESK.sample_rate)
        c = np.abs(np.fft.ifft(np.fft.fft(x) * np.conj(np.fft.fft(t, x.size))))
        assert c.max() < 5 * np.median(c)


def test_full_scale_length():
    p = prof.registry("full")["T0010"]
    req = CaptureRequest(p, 100e6, 0.1, 0.0)
    assert req.n_samples == 10**7


def test_request_validation():
    p = prof.registry("desk")["T0001"]
    with pytest.raises(ValueError, match="capture too short"):
        CaptureRequest(p, 10e6, 1e-4, 0.0)
    with pytest.raises(ValueError):
        CaptureRequest(p, 10e6, 0.02, 31.0)
    with pytest.raises(ValueError):
        CaptureRequest(p, 1e6, 0.02, 0.0)


def test_awgn_vanishing_noise():
    x = np.exp(1j * np.linspace(0, 10, 1000))
    y = add_awgn(x, 100.0, 1.0, 0)
    assert np.mean(np.abs(y - x) ** 2) < 1e-4


def test_awgn_power_at_0_db():
    x = np.zeros(10**6, complex)
    y = add_awgn(x, 0.0, 2.5, 3)
    assert abs(10 * np.log10(np.mean(np.abs(y) ** 2) / 2.5)) < 0.1


def test_awgn_deterministic():
    x = np.ones(100, complex)
    assert np.array_equal(add_awgn(x, 3, 1, 9), add_awgn(x, 3, 1, 9))


def test_resampled_length():
    p = prof.registry("desk")["T0011"]
    from zcrid.dsp import rate_ratio, resample_rational
    frame = build_ofdm_frame(p, 0)
    r = rate_ratio(DESK.sample_rate, p.bandwidth)
    y = resample_rational(frame, r.numerator, r.denominator)
    assert y.size == ceil(frame.size * DESK.sample_rate / p.bandwidth)


def test_distance_ordering():
    powers = [np.mean(np.abs(synth_capture(_request("T0001", 10.0, 5, distance=d)).clean) ** 2)
              for d in ("D00", "D01", "D10")]
    assert powers[0] > powers[1] > powers[2]


def test_same_seed_same_capture():
    a = synth_capture(_request(seed=11, interference=InterferenceSpec()))
    b = synth_capture(_request(seed=11, interference=InterferenceSpec()))
    assert np.array_equal(a.capture.samples, b.capture.samples)


@pytest.mark.parametrize("label", prof.DRONE_LABELS)
def test_every_profile_has_a_clear_peak(label):
    res = synth_capture(_request(label, snr=0.0, seed=3))
    t = build_zc_template(prof.registry("desk")[label], 0, DESK.sample_rate)
    x = res.capture.samples
    c = np.abs(np.fft.ifft(np.fft.fft(x) * np.conj(np.fft.fft(t, x.size))))
    assert c.max() >= 10 * np.median(c)


def test_meta_labels():
    res = synth_capture(_request("T0100", distance="D01"))
    assert res.capture.meta["label"] == "T0100D01"
    assert res.label == "T0100D01"


def test_symbol_body_unit_power():
    p = prof.registry("desk")["T0010"]
    assert np.mean(np.abs(symbol_body(p, p.primary_root)) ** 2) == pytest.approx(1.0)
