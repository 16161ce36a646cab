import pytest
from hypothesis import given, settings, strategies as st

from mgsync.relay import RelayConfig, RelayState, dwell_time, in_band, relay_step, thresholds_for_rating

DEFAULT = thresholds_for_rating(5000)


def test_table_rows():
    c = thresholds_for_rating(300)
    assert (c.df_max, c.dv_max, c.dphi_max) == (0.3, 0.10, 20.0)
    c = thresholds_for_rating(1000)
    assert (c.df_max, c.dv_max, c.dphi_max) == (0.2, 0.05, 15.0)
    c = thresholds_for_rating(5000)
    assert (c.df_max, c.dv_max, c.dphi_max) == (0.1, 0.03, 10.0)


def test_row_boundaries():
    assert thresholds_for_rating(500).df_max == 0.3
    assert thresholds_for_rating(500.001).df_max == 0.2
    assert thresholds_for_rating(1500).df_max == 0.2
    assert thresholds_for_rating(10000).df_max == 0.1
    for bad in (0, -1, 10000.5):
        with pytest.raises(ValueError):
            thresholds_for_rating(bad)


def test_dwell_reproduces_277_8_ms():
    assert dwell_time(0.1, 10.0) == pytest.approx(0.2778, abs=5e-5)
    assert DEFAULT.dwell == pytest.approx(10 / 36)


def test_config_validation():
    with pytest.raises(ValueError):
        RelayConfig(0.1, 0.03, 10.0, 0.0)


def test_phase_wraps_into_band():
    assert in_band(DEFAULT, 0.0, 0.0, 350.0)
    assert not in_band(DEFAULT, 0.0, 0.0, 190.0)


def drive(cfg, samples, dt=1 / 60):
    st_ = RelayState()
    for k, (df, dv, dp) in enumerate(samples):
        st_ = relay_step(cfg, st_, df, dv, dp, k * dt)
    return st_


def test_short_window_then_violation_resets():
    n_in = int(0.2 * 60)
    s = drive(DEFAULT, [(0, 0, 0)] * n_in + [(0.5, 0, 0)] + [(0, 0, 0)] * n_in)
    assert not s.closed
    assert s.in_band_since == pytest.approx((n_in + 1) / 60)


def test_continuous_in_band_closes_after_dwell():
    dt = 1e-3
    st_ = RelayState()
    t0 = 0.5
    for k in range(2000):
        t = k * dt
        st_ = relay_step(DEFAULT, st_, 0.0, 0.0, 0.0 if t >= t0 else 45.0, t)
        if st_.closed:
            break
    assert st_.close_time == pytest.approx(t0 + 0.2778, abs=dt)


def test_once_closed_stays_closed():
    s = drive(DEFAULT, [(0, 0, 0)] * 30 + [(9, 9, 170)] * 10)
    assert s.closed and not s.in_band
    assert s.close_time == pytest.approx(17 / 60)


def test_time_must_increase():
    s = relay_step(DEFAULT, RelayState(), 0, 0, 0, 1.0)
    with pytest.raises(ValueError):
        relay_step(DEFAULT, s, 0, 0, 0, 1.0)


sample = st.one_of(st.just((0.0, 0.0, 0.0)),
                   st.tuples(st.floats(-0.3, 0.3), st.floats(-0.06, 0.06), st.floats(-40, 40)))


@settings(max_examples=300, deadline=None)
@given(st.lists(sample, min_size=1, max_size=120))
def test_never_closes_without_full_dwell(trace):
    dt = 1 / 60
    s = RelayState()
    ok = [in_band(DEFAULT, *x) for x in trace]
    for k, x in enumerate(trace):
        s = relay_step(DEFAULT, s, *x, k * dt)
        if s.closed:
            break
    if s.closed:
        k_close = round(s.close_time / dt)
        k_entry = round(s.in_band_since / dt)
        # every sample from entry to close was in band, and the window spans the dwell
        assert all(ok[k_entry:k_close + 1])
        assert k_entry == 0 or not ok[k_entry - 1]
        assert s.close_time - s.in_band_since >= DEFAULT.dwell - 1e-9
        assert s.close_time - s.in_band_since < DEFAULT.dwell + dt
    else:
        # oracle: no in-band run long enough
        run = None
        for k, flag in enumerate(ok):
            if flag:
                run = k if run is None else run
                assert (k - run) * dt < DEFAULT.dwell - 1e-9
            else:
                run = None
