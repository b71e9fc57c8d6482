import math

import numpy as np
import pytest

from fluctuon.dephasing import phi_echo
from fluctuon.errors import ConvergenceError, DatasetError
from fluctuon.fit import (ExperimentDataset, echo_rate_gaussian, fid_rate_gaussian, fit_fast_fluctuator,
                          gamma0_from_gamma2, gamma2_from_gamma0, get_preset, load_dataset, sample_presets,
                          save_dataset, synthetic_dataset, v1_from_echo_rate)

A = get_preset("sample_a")
T = np.linspace(0.0, 3.0, 61)


def test_echo_rate_from_v1():
    # inverse of v1 = Gamma sqrt(2 ln(gamma_c/gamma_m) / ln 2)
    gamma = A.v1 / math.sqrt(2 * math.log(A.gamma_c / A.gamma_m) / math.log(2))
    assert gamma == pytest.approx(0.779, abs=5e-4)
    assert v1_from_echo_rate(gamma, A.gamma_m, A.gamma_c) == pytest.approx(A.v1, rel=1e-14)
    assert v1_from_echo_rate(0.8, A.gamma_m, A.gamma_c) == pytest.approx(5.05, abs=5e-3)


def test_echo_rate_gaussian():
    assert echo_rate_gaussian(2.0, -0.5) == pytest.approx(math.sqrt(2 * math.log(2)) * 0.5, rel=1e-15)
    assert echo_rate_gaussian(0.0, 3.0) == 0.0
    with pytest.raises(ValueError):
        echo_rate_gaussian(-1.0, 1.0)


def test_fid_rate():
    g = fid_rate_gaussian(A.v1, A.v2)
    assert g == pytest.approx(3.975, rel=5e-3)
    assert g / A.gamma_phi_e == pytest.approx(4.96, rel=1e-2)
    assert fid_rate_gaussian(3.0, 0.0) == pytest.approx(3.0 / math.sqrt(2), rel=1e-15)
    with pytest.raises(ValueError):
        fid_rate_gaussian(-1.0, 1.0)


@pytest.mark.parametrize("bad", [(-1.0, 5e-7, 0.5), (1.0, 0.5, 0.5), (1.0, 0.0, 0.5)])
def test_v1_validation(bad):
    with pytest.raises(ValueError):
        v1_from_echo_rate(*bad)


def test_effective_fast_rate():
    g2 = gamma2_from_gamma0(0.5, 4.25)
    assert g2 == pytest.approx(1.2, rel=0.02)
    assert g2 == pytest.approx(0.5 * math.log(8.5) / (1 - 1 / 8.5), rel=1e-15)
    for g0 in (0.5 * (1 + 1e-6), 0.6, 4.25, 500.0, 5e5):
        assert gamma0_from_gamma2(0.5, gamma2_from_gamma0(0.5, g0)) == pytest.approx(g0, rel=1e-9)
    with pytest.raises(ValueError):
        gamma2_from_gamma0(0.5, 0.5)
    with pytest.raises(ValueError):
        gamma0_from_gamma2(0.5, 0.4)


def test_presets_verbatim():
    got = {p.name: (p.gamma1, p.v1, p.gamma2, p.v2, p.gamma_phi_e) for p in sample_presets()}
    assert got == {
        "sample_a": (0.04, 4.92, 1.2, 2.72, 0.8),
        "sample_b": (0.04, 21.0, 5.75, 12.45, 3.75),
        "bias_current": (0.04, 10.5, 2.0, 50.0, 1.7),
    }
    assert A.fast_cutoff == 4.25
    b = get_preset("B")
    assert gamma2_from_gamma0(b.gamma_c, b.fast_cutoff) == pytest.approx(5.75, rel=1e-12)
    assert get_preset("Sample-A") is A
    with pytest.raises(KeyError):
        get_preset("sample_c")
    d = A.to_dict()
    assert d["fast_cutoff"] == 4.25 and d["v2"] == 2.72


@pytest.mark.parametrize("name", [p.name for p in sample_presets()])
def test_noise_free_recovery(name):
    p = get_preset(name)
    ds = synthetic_dataset(p, "echo", T)
    fit = fit_fast_fluctuator(ds, p.gamma1, p.v1, p.gamma_c)
    g2 = gamma2_from_gamma0(p.gamma_c, p.fast_cutoff)
    assert fit.v2 == pytest.approx(p.v2, rel=1e-4)
    assert fit.gamma_2 == pytest.approx(g2, rel=1e-4)
    assert fit.gamma_0 == pytest.approx(p.fast_cutoff, rel=1e-3)
    assert fit.sse < 1e-10
    assert fit.converged


def test_noisy_recovery_sample_a():
    ds = synthetic_dataset(A, "echo", T, noise=0.01, seed=0)
    fit = fit_fast_fluctuator(ds, A.gamma1, A.v1, A.gamma_c)
    assert fit.v2 == pytest.approx(A.v2, rel=0.05)
    assert fit.gamma_0 == pytest.approx(A.fast_cutoff, rel=0.10)
    # weighted residual is of order the sample count
    assert fit.sse < 2 * len(ds)


def test_fid_fit():
    ds = synthetic_dataset(A, "fid", np.linspace(0, 1.5, 41))
    fit = fit_fast_fluctuator(ds, A.gamma1, A.v1, A.gamma_c)
    assert fit.v2 == pytest.approx(A.v2, rel=1e-4)


def test_flat_data_gives_zero_coupling():
    ds = ExperimentDataset(T, np.ones_like(T))
    fit = fit_fast_fluctuator(ds, A.gamma1, 0.0, A.gamma_c)
    assert fit.v2 == 0.0
    assert fit.sse < 1e-12


def test_history_is_monotone():
    ds = synthetic_dataset(A, "echo", T, noise=0.005, seed=1)
    fit = fit_fast_fluctuator(ds, A.gamma1, A.v1, A.gamma_c)
    h = np.array(fit.history)
    assert h.size == fit.iterations
    assert np.all(np.diff(h) <= 0)
    assert h[-1] == pytest.approx(fit.sse)


def test_fit_argument_checks():
    short = ExperimentDataset(T[:5], phi_echo(1.0, 1.0, T[:5]))
    with pytest.raises(ValueError):
        fit_fast_fluctuator(short, A.gamma1, A.v1, A.gamma_c)
    ds = synthetic_dataset(A, "echo", T)
    with pytest.raises(ValueError):
        fit_fast_fluctuator(ds, A.gamma1, A.v1, A.gamma_c, v2_bounds=(5.0, 1.0))
    with pytest.raises(ConvergenceError):
        fit_fast_fluctuator(ds, A.gamma1, A.v1, A.gamma_c, max_iter=2)


def test_fit_result_json():
    fit = fit_fast_fluctuator(synthetic_dataset(A, "echo", T), A.gamma1, A.v1, A.gamma_c)
    import json
    d = json.loads(fit.to_json(label="x"))
    assert set(d) == {"v2", "gamma_0", "gamma_2", "sse", "iterations", "converged", "label"}


# dataset I/O

def test_load_three_row_file(tmp_path):
    f = tmp_path / "echo.csv"
    f.write_text("# protocol=fid\nt_us,envelope\n0,1\n0.5,0.8\n1.0,0.5\n")
    ds = load_dataset(f)
    assert len(ds) == 3 and ds.protocol == "fid" and ds.label == "echo"
    np.testing.assert_array_equal(ds.y, [1.0, 0.8, 0.5])
    assert ds.sigma is None


def test_load_with_sigma(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("0,1,0.01\n1,0.5,0.02\n")
    ds = load_dataset(f, protocol="echo", label="lab")
    np.testing.assert_array_equal(ds.sigma, [0.01, 0.02])
    assert ds.label == "lab"


@pytest.mark.parametrize("body,needle", [
    ("0,1\n1,0.5\n0.5,0.7\n", "increasing"),
    ("0,1\n1,abc\n", ":2:"),
    ("0,1\n1,0.5,0.1\n", ":2:"),
    ("0,1\n1,2,3,4\n", ":2:"),
    ("# only comments\n", "no data"),
    ("0,0.5\n1,0.4\n", "t=0"),
    ("0,1,-0.1\n1,0.5,0.1\n", "sigma"),
    ("0,1\n1,nan\n", "non-finite"),
])
def test_load_errors(tmp_path, body, needle):
    f = tmp_path / "bad.csv"
    f.write_text(body)
    with pytest.raises(DatasetError, match=needle):
        load_dataset(f)


def test_dataset_round_trip_is_byte_identical(tmp_path):
    ds = synthetic_dataset(A, "echo", T, noise=0.01, seed=3)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset(ds, p1)
    back = load_dataset(p1)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.sigma, ds.sigma)
    assert back.protocol == "echo"
    save_dataset(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_synthetic_noise_is_seeded():
    a = synthetic_dataset(A, "echo", T, noise=0.01, seed=5)
    b = synthetic_dataset(A, "echo", T, noise=0.01, seed=5)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.y[0] == 1.0
    np.testing.assert_array_equal(a.sigma, 0.01)
