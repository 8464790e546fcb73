import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from magnetoelastic.errors import ValidationError
from magnetoelastic.loads import FieldLoad, SpatialProfile, TimeProfile

PROFILES = [TimeProfile(), TimeProfile("ramp", 0.5), TimeProfile("sinusoid", 0.7, 0.3)]


def test_validation():
    with pytest.raises(ValidationError):
        TimeProfile("step")
    with pytest.raises(ValidationError):
        TimeProfile("ramp", 0.0)
    with pytest.raises(ValidationError):
        SpatialProfile("box")
    with pytest.raises(ValidationError):
        SpatialProfile("gaussian", width=-1.0)


def test_profile_values():
    ramp = TimeProfile("ramp", 2.0)
    assert ramp.value(-1.0) == 0.0 and ramp.value(1.0) == 0.5 and ramp.value(5.0) == 1.0
    assert TimeProfile("sinusoid", 4.0).value(1.0) == pytest.approx(1.0, abs=1e-15)
    g = SpatialProfile("gaussian", (0.2, 0.3), 0.5)
    assert g.value(np.array([[0.2, 0.3]]))[0] == 1.0
    assert FieldLoad.zero(2).is_zero and not FieldLoad.constant([0.0, 1.0]).is_zero


@pytest.mark.parametrize("profile", PROFILES)
@settings(max_examples=25, deadline=None)
@given(t=st.floats(0.01, 2.0))
def test_rate_is_time_derivative(profile, t):
    h = 1e-6
    fd = (profile.value(t + h) - profile.value(t - h)) / (2 * h)
    if profile.kind == "ramp" and min(abs(t), abs(t - profile.period)) < 2 * h:
        return
    assert profile.rate(t) == pytest.approx(fd, abs=1e-7)


def test_field_gradient_and_rate_match_differences():
    load = FieldLoad((0.3, -0.1), TimeProfile("sinusoid", 1.0), SpatialProfile("gaussian", (0.5, 0.5), 0.4))
    rng = np.random.default_rng(0)
    y = rng.random((10, 2))
    t, h = 0.3, 1e-6
    G = load.gradient(y, t)
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (load.value(y + e, t) - load.value(y - e, t)) / (2 * h)
        np.testing.assert_allclose(G[:, :, j], fd, atol=1e-9)
    fd_t = (load.value(y, t + h) - load.value(y, t - h)) / (2 * h)
    np.testing.assert_allclose(load.rate(y, t), fd_t, atol=1e-8)
    assert load.value(y, t).shape == (10, 2)
    assert FieldLoad((2.0,)).scalar(y).shape == (10,)
