import numpy as np
import pytest
from hypothesis import given, strategies as st

from objgps.demos import DemoRecording, build_mixture, load_demos, resample_to_horizon, write_demos
from objgps.errors import InvalidInputError, ParseError
from objgps.gaussian import Gaussian, kl_gaussian


def write(tmp_path, text):
    p = tmp_path / "demos.csv"
    p.write_text(text)
    return p


def test_load_groups_and_sorts(tmp_path):
    p = write(tmp_path, "demo_id,time,x,y\n"
                        "a,0.2,1,1\nb,0,0,0\na,0,0,0\nb,0.1,1,2\na,0.1,5,5\nb,0.2,3,3\n")
    recs = load_demos(p)
    assert [r.id for r in recs] == ["a", "b"]
    assert all(len(r.times) == 3 for r in recs)
    assert np.array_equal(recs[0].times, [0, 0.1, 0.2])
    assert np.array_equal(recs[0].states[1], [5, 5])


@pytest.mark.parametrize("body,line", [
    ("a,0,1\na,0,2\n", 3),            # duplicate time
    ("a,0,1\na,0.1\n", 3),            # column count
    ("a,0,1\na,zz,2\n", 3),           # bad float
    ("a,0,1\na,0.1,nan\n", 3),        # non-finite
    ("a,0,1\n", 2),                   # single sample
])
def test_parse_errors_name_line(tmp_path, body, line):
    p = write(tmp_path, "demo_id,time,x\n" + body)
    with pytest.raises(ParseError) as exc:
        load_demos(p)
    assert exc.value.line == line
    assert f"line {line}" in str(exc.value)


def test_bad_header(tmp_path):
    with pytest.raises(ParseError):
        load_demos(write(tmp_path, "id,t,x\na,0,1\na,1,2\n"))


def test_write_read_round_trip(tmp_path, rng):
    recs = [DemoRecording(f"d{i}", np.cumsum(rng.uniform(0.01, 1, 7)), rng.standard_normal((7, 3)))
            for i in range(3)]
    write_demos(recs, tmp_path / "d.csv", ["a", "b", "c"])
    back = load_demos(tmp_path / "d.csv")
    for r, b in zip(recs, back):
        assert r.id == b.id
        assert np.max(np.abs(r.times - b.times)) <= 1e-12
        assert np.max(np.abs(r.states - b.states)) <= 1e-12


def test_resample_examples():
    rec = DemoRecording("r", [0.0, 1.0], [[0.0], [10.0]])
    assert np.allclose(resample_to_horizon(rec, 5, 0.2)[:, 0], [2, 4, 6, 8, 10])
    times = 0.2 * np.arange(1, 6)
    vals = np.arange(5.0)[:, None] ** 2
    same = DemoRecording("s", times, vals)
    assert np.array_equal(resample_to_horizon(same, 5, 0.2), vals)


def test_resample_holds_last_value():
    rec = DemoRecording("r", [0.0, 0.5], [[0.0], [3.0]])
    assert np.allclose(resample_to_horizon(rec, 5, 0.2)[:, 0], [1.2, 2.4, 3, 3, 3])


@given(st.lists(st.floats(-100, 100), min_size=2, max_size=10), st.integers(0, 10**6))
def test_resample_exact_at_knots(values, seed):
    rng = np.random.default_rng(seed)
    dt = 0.25
    knots = np.arange(len(values)) * dt
    rec = DemoRecording("k", knots, np.array(values)[:, None])
    T = len(values) - 1
    assert np.allclose(resample_to_horizon(rec, T, dt)[:, 0], values[1:], atol=1e-9)
    # exact on piecewise-linear signals between knots
    mid = rng.uniform(0, knots[-1])
    assert np.interp(mid, knots, values) == pytest.approx(
        resample_to_horizon(DemoRecording("k", knots, np.array(values)[:, None]), 1, mid)[0, 0], abs=1e-9)


def test_mixture_weights():
    recs = [DemoRecording(str(i), [0, 1], [[0.0], [1.0]]) for i in range(3)]
    assert np.allclose(build_mixture(recs, 4, 0.25).weights, [1 / 3] * 3)
    assert np.allclose(build_mixture(recs, 4, 0.25, weights=[2, 1, 1]).weights, [0.5, 0.25, 0.25])
    with pytest.raises(InvalidInputError):
        build_mixture(recs, 4, 0.25, sigma=0.0)
    with pytest.raises(InvalidInputError):
        build_mixture([recs[0], DemoRecording("x", [0, 1], [[0, 0], [1, 1]])], 4, 0.25)


def test_mixture_kl_doubled_sigma():
    rec = DemoRecording("r", [0, 1], [[0.0, 1.0], [1.0, 2.0]])
    mix = build_mixture([rec], 3, 0.3, sigma=0.01)
    wide = build_mixture([rec], 3, 0.3, sigma=0.02)
    kl = mix.kl_from(wide.means[0], wide.covs()[0][None].repeat(3, axis=0))
    # KL(N(mu, 4 s^2) || N(mu, s^2)) per dim = 0.5 (4 - 1 - ln 4)
    assert np.allclose(kl, 2 * 0.5 * (3 - np.log(4)))
    direct = kl_gaussian(Gaussian(wide.means[0, 0], wide.covs()[0]), Gaussian(mix.means[0, 0], mix.covs()[0]))
    assert kl[0, 0] == pytest.approx(direct)


def test_mixture_cost_and_subset():
    recs = [DemoRecording(str(i), [0, 1], [[float(i)], [float(i)]]) for i in range(3)]
    mix = build_mixture(recs, 2, 0.5, sigma=0.5)
    assert mix.cost(np.array([[1.0], [1.0]]), 0) == pytest.approx(0.5 * 2 * 4)
    sub = mix.subset([0, 2])
    assert sub.ids == ("0", "2") and np.allclose(sub.weights, [0.5, 0.5])
