import numpy as np
import pytest

from stereogaze import eyefeatures as ef
from stereogaze import synth
from stereogaze.errors import DegenerateLandmarks


def _symmetric_set():
    o = np.array([100.0, 50.0])
    lid = o + np.array([[60, 0], [30, 22], [0, 26], [-30, 20], [-60, 0], [-30, -28], [0, -33], [30, -29]], float)
    return ef.LandmarkSet(o, lid, o + [-20, 15], o + [20, 15], o + [-20, -15], o + [20, -15], 20.0)


def test_feature_counts():
    f = ef.extract_features(_symmetric_set())
    assert len(f) == 13
    assert f.as_array().shape == (23,)
    assert len(ef.FEATURE_COLUMNS) == 23


def test_mirror_symmetric_reflections():
    f = ef.extract_features(_symmetric_set()).named()
    assert f["v_om"][0] == pytest.approx(-f["v_on"][0])
    assert f["v_om"][1] == pytest.approx(f["v_on"][1])


def test_reflection_on_pupil_is_degenerate():
    lm = _symmetric_set()
    bad = ef.LandmarkSet(lm.o, lm.eyelid, lm.o.copy(), lm.n, lm.p, lm.q, 20.0)
    with pytest.raises(DegenerateLandmarks):
        ef.extract_features(bad)
    with pytest.raises(DegenerateLandmarks):
        ef.features_from_flat(bad.as_flat()[None, :])


def test_translation_invariance(rng):
    lm = _symmetric_set()
    a = ef.extract_features(lm).as_array()
    for _ in range(5):
        b = ef.extract_features(lm.translated(rng.normal(0, 100, 2))).as_array()
        np.testing.assert_allclose(a, b, atol=1e-9)


def test_scaling_about_pupil():
    lm = _symmetric_set()
    k = 1.7
    s = lambda v: lm.o + k * (v - lm.o)
    scaled = ef.LandmarkSet(lm.o, s(lm.eyelid), s(lm.m), s(lm.n), s(lm.p), s(lm.q), 20.0)
    a, b = ef.extract_features(lm), ef.extract_features(scaled)
    assert b.theta3 == pytest.approx(a.theta3)
    np.testing.assert_allclose(b.displacements, k * a.displacements)


def test_theta3_value():
    # o->m = (-20, 15), o->n = (20, 15): angle = 2 * atan(20/15)
    f = ef.extract_features(_symmetric_set())
    assert f.theta3 == pytest.approx(2 * np.degrees(np.arctan2(20, 15)))


def test_vectorized_matches_scalar():
    ds = synth.generate_session(__import__("stereogaze.geometry").geometry.scene1_spec(),
                                synth.make_subject(2, 3), synth.NoiseSpec(0.5, 0.5, 3), 2)
    lms = [f.landmarks for f in ds.frames]
    slow = ef.feature_matrix(lms)
    fast = ef.features_from_flat(np.vstack([lm.as_flat() for lm in lms]))
    np.testing.assert_allclose(fast, slow, atol=1e-10)
    assert fast.shape == (len(lms), 23)


def test_features_ignore_hidden_reflections():
    lm = _symmetric_set()
    hidden = ef.LandmarkSet(lm.o, lm.eyelid, lm.m, lm.n, None, None, 20.0)
    np.testing.assert_array_equal(ef.extract_features(hidden).as_array(), ef.extract_features(lm).as_array())


def test_feature_csv_roundtrip(rng):
    X = rng.normal(size=(4, 23))
    text = ef.write_feature_csv(X)
    assert text.splitlines()[0].split(",") == list(ef.FEATURE_COLUMNS)
    np.testing.assert_array_equal(ef.read_feature_csv(text), X)
    with pytest.raises(ValueError):
        ef.write_feature_csv(X[:, :5])


def test_flat_roundtrip():
    lm = _symmetric_set()
    back = ef.LandmarkSet.from_flat(lm.as_flat(), lm.pupil_radius)
    np.testing.assert_array_equal(back.as_flat(), lm.as_flat())
    assert back["a"].tolist() == lm.eyelid[0].tolist()
