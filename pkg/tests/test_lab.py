import math

import pytest

from mmgeo.core import is_isomorphic, validate
from mmgeo.gromov import cyl_equal, cyl_pushforward
from mmgeo.lab import (
    ExperimentConfig,
    decays,
    gen_circle,
    gen_interval_with_atom,
    gen_reference_interval,
    gen_split_interval,
    max_workers,
    pmgh_compare,
    read_suite_csv,
    run_suite,
    search_cyl_separating_pair,
)
from mmgeo.spectral import laplacian, spectrum


@pytest.mark.parametrize("n", [2, 3, 8, 32])
def test_interval_with_atom(n):
    s = gen_interval_with_atom(n)
    assert validate(s).ok
    assert s.n == n + 1
    assert s.total_mass == pytest.approx(1.0, abs=1e-12)
    assert s.mass[s.base] >= 1 - 1 / n


@pytest.mark.parametrize("n", [2, 4, 16])
def test_split_interval(n):
    s = gen_split_interval(n)
    assert validate(s).ok
    assert s.diameter >= 2.0
    far = s.base_dist >= 2.0
    assert s.mass[far].sum() == pytest.approx(1 / n, abs=1e-12)
    assert s.mass[~far].sum() == pytest.approx(1 - 1 / n, abs=1e-12)


def test_reference_interval():
    s = gen_reference_interval(1 / 16)
    assert s.n == 17 and s.total_mass == pytest.approx(1.0)
    with pytest.raises(ValueError):
        gen_reference_interval(0.3)


def test_circle_generator():
    space, g = gen_circle(16)
    assert validate(space).ok
    assert space.dist.max() == pytest.approx(0.5)
    assert space.dist[0, 8] == pytest.approx(0.5)
    vals = spectrum(laplacian(g)).eigenvalues
    assert vals[1] == pytest.approx(vals[2], abs=1e-9)
    assert vals[1] == pytest.approx(2 * 16**2 * (1 - math.cos(2 * math.pi / 16)), rel=1e-12)
    with pytest.raises(ValueError):
        gen_circle(2)


def test_pmgh_self_comparison():
    s = gen_split_interval(4)
    r = pmgh_compare(s, s)
    assert r.lower <= 1e-9 and r.upper <= 1e-9


def test_pmgh_split_stays_away_from_reference():
    r = pmgh_compare(gen_split_interval(8), gen_reference_interval())
    assert r.lower >= 0.5 and r.lower <= r.upper


def test_cyl_separating_search_report():
    # The search may or may not find a pair; any pair it returns must be genuine.
    found = search_cyl_separating_pair(trials=300, max_points=4, seed=0)
    if found is not None:
        a, b = found
        assert cyl_equal(cyl_pushforward(a, 2), cyl_pushforward(b, 2))
        assert not cyl_equal(cyl_pushforward(a, 3), cyl_pushforward(b, 3))
        assert not is_isomorphic(a, b).isomorphic


def test_decays_helper():
    assert decays([1.0, 0.5, 0.2])
    assert not decays([1.0, 0.5, 0.6, 0.1])
    assert not decays([1.0, 0.9])
    assert decays([])


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig("convergence", sizes=(8, 4))
    with pytest.raises(ValueError):
        ExperimentConfig("convergence", sizes=(4, 4))
    with pytest.raises(ValueError):
        ExperimentConfig("nope")
    assert ExperimentConfig("mosco-spectral").sizes == (8, 16, 32, 64)


def test_empty_convergence_suite_passes(tmp_path):
    res = run_suite(ExperimentConfig("convergence", sizes=(), out=str(tmp_path)))
    assert res.passed and res.rows == ()
    header, rows = read_suite_csv(tmp_path / "convergence.csv")
    assert header == ("family", "n", "quantity", "lower", "upper") and rows == []


def test_suite_csv_round_trip_and_determinism(tmp_path):
    cfg = ExperimentConfig("mosco-spectral", sizes=(8, 16, 32), out=str(tmp_path / "a"))
    res = run_suite(cfg)
    again = run_suite(ExperimentConfig("mosco-spectral", sizes=(8, 16, 32), out=str(tmp_path / "b")))
    for name in ("mosco-spectral.csv", "mosco-spectral.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header, rows = read_suite_csv(tmp_path / "a" / "mosco-spectral.csv")
    assert header == res.header and len(rows) == len(res.rows)
    for parsed, orig in zip(rows, res.rows):
        for a, b in zip(parsed, orig):
            if isinstance(b, float):
                assert float(a) == b or (math.isnan(b) and a == "nan")
            else:
                assert a == str(b)
    assert again.summary == res.summary


def test_read_suite_csv_rejects_unknown_schema(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("# schema=99,suite=x\na,b\n")
    with pytest.raises(ValueError):
        read_suite_csv(p)


def test_thread_count_env(monkeypatch):
    monkeypatch.setenv("MMGEO_THREADS", "3")
    assert max_workers() == 3
    monkeypatch.setenv("MMGEO_THREADS", "0")
    assert max_workers() == 1
    monkeypatch.setenv("MMGEO_THREADS", "1")
    a = run_suite(ExperimentConfig("convergence", sizes=(4, 8)))
    monkeypatch.setenv("MMGEO_THREADS", "4")
    b = run_suite(ExperimentConfig("convergence", sizes=(4, 8)))
    assert a.csv_text() == b.csv_text()
