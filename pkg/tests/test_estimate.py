import warnings

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import two_atom
from flagdim.errors import DegeneracyError, ValidationError
from flagdim.estimate import (
    cylinder_entropy,
    entropy_cap,
    fiber_entropy,
    furstenberg_entropy,
    knn_cmi,
    local_dimension,
    lyapunov_dimension,
    one_step_dimension,
    path_dimension,
    product_dimension,
    projector_features,
    rw_entropy,
    sample_flag_ensemble,
    stationarity_pvalue,
    verify_report,
    ReportParams,
)
from flagdim.estimate.dimension import DimensionEstimate
from flagdim.randwalk import MatrixMeasure, rotation, shipped_measure
from flagdim.spectrum import lyapunov_spectrum, spectrum_from_exponents
from flagdim.topology import LeftFiltration, RefinementStep, extremes, monotone_path


def gaussian_mixture_mi(mu):
    """I(X; Y) for X uniform on {-mu, mu} and Y = X + N(0, 1), by quadrature."""
    dens = lambda y: 0.5 * (stats.norm.pdf(y, -mu) + stats.norm.pdf(y, mu))
    hy, _ = integrate.quad(lambda y: -dens(y) * np.log(dens(y)), -mu - 12, mu + 12, limit=200)
    return hy - 0.5 * np.log(2 * np.pi * np.e)


def lines(angles):
    q = np.stack([np.cos(angles), np.sin(angles)], axis=1)[:, :, None]
    return projector_features(q)


@pytest.fixture(scope="module")
def sl2_ens(sl2):
    sp = lyapunov_spectrum(sl2, 1000, 16, seed=0)
    return sample_flag_ensemble(sl2, sp, 4000, 400, seed=1)


def test_knn_mi_matches_quadrature():
    rng = np.random.default_rng(0)
    n = 6000
    for mu in (0.5, 1.5):
        x = rng.integers(0, 2, n)
        y = np.where(x == 1, mu, -mu) + rng.standard_normal(n)
        assert knn_cmi(x, y[:, None]) == pytest.approx(gaussian_mixture_mi(mu), abs=0.03)


def test_knn_cmi_with_independent_condition_matches_mi():
    rng = np.random.default_rng(1)
    n = 6000
    x = rng.integers(0, 2, n)
    y = np.where(x == 1, 1.0, -1.0) + rng.standard_normal(n)
    z = rng.standard_normal((n, 1))
    assert knn_cmi(x, y[:, None], z) == pytest.approx(gaussian_mixture_mi(1.0), abs=0.04)


def test_knn_cmi_zero_cases():
    rng = np.random.default_rng(2)
    y = rng.standard_normal((500, 2))
    assert knn_cmi(np.zeros(500), y) == 0.0
    assert knn_cmi(rng.integers(0, 2, 500), np.ones((500, 2))) == 0.0
    assert abs(knn_cmi(rng.integers(0, 2, 4000), rng.standard_normal((4000, 1)))) < 0.02
    with pytest.raises(ValidationError):
        knn_cmi(np.r_[np.zeros(200), np.ones(3)], rng.standard_normal((203, 1)))


def test_ensemble_degenerate_cases():
    m = shipped_measure("deterministic")
    sp = lyapunov_spectrum(m, 200, 4, seed=0)
    ens = sample_flag_ensemble(m, sp, 200, 100, seed=0)
    f = ens.flag_features(LeftFiltration.from_inner(2, [1]))
    assert np.abs(f - f[0]).max() < 1e-10
    iso = shipped_measure("isometric")
    ens_iso = sample_flag_ensemble(iso, lyapunov_spectrum(iso, 200, 4, seed=0), 200, 100, seed=0)
    assert ens_iso.flag_features(LeftFiltration.from_inner(1, [])).shape[1] == 0
    with pytest.raises(ValidationError):
        sample_flag_ensemble(m, sp, 1, 100)
    with pytest.raises(ValidationError):
        sample_flag_ensemble(m, sp, 100, 5)


def test_ensemble_is_stationary(sl2, sl2_ens):
    assert stationarity_pvalue(sl2, sl2_ens, LeftFiltration.from_inner(2, [1]), seed=0) > 0.01


def test_entropies_vanish_for_degenerate_measures():
    for name in ("deterministic", "isometric"):
        m = shipped_measure(name)
        sp = lyapunov_spectrum(m, 200, 4, seed=0)
        ens = sample_flag_ensemble(m, sp, 300, 100, seed=0)
        L = LeftFiltration.from_inner(sp.N, list(range(1, sp.N)))
        assert furstenberg_entropy(m, L, ens).value == 0.0
        t1, t0 = extremes(sp.N)
        assert fiber_entropy(m, t1, t0, ens).value == 0.0
        assert cylinder_entropy(m, t1, t0, ens).value == 0.0


def test_flag_independent_of_step_gives_zero():
    # commuting diagonal atoms: every flag is the coordinate flag
    m = two_atom(np.diag([2, 0.5]), np.diag([3, 1 / 3]))
    sp = lyapunov_spectrum(m, 200, 4, seed=0)
    ens = sample_flag_ensemble(m, sp, 400, 100, seed=0)
    t1, t0 = extremes(2)
    assert furstenberg_entropy(m, LeftFiltration.from_inner(2, [1]), ens).value == 0.0
    assert cylinder_entropy(m, t1, t0, ens).value == 0.0


def test_small_ensemble_is_rejected(sl2, sl2_ens):
    small = sl2_ens.subset(np.arange(50))
    with pytest.raises(ValidationError):
        furstenberg_entropy(sl2, LeftFiltration.from_inner(2, [1]), small)


def test_fiber_entropy_trivial_pair(sl2, sl2_ens):
    t1, _ = extremes(2)
    assert fiber_entropy(sl2, t1, t1, sl2_ens).value == 0.0
    assert cylinder_entropy(sl2, t1, t1, sl2_ens).value == 0.0


def test_estimators_agree_on_sl2(shipped_reports):
    ent = {e["quantity"]: e for e in shipped_reports["sl2_hyperbolic"]["entropies"]}
    kf, kt, kc = ent["furstenberg"], ent["fiber T->T0"], ent["cylinder T->T0"]
    assert abs(kf["value"] - kt["value"]) <= 2 * np.hypot(kf["stderr"], kt["stderr"])
    assert abs(kc["value"] - kf["value"]) <= 3 * np.hypot(kc["stderr"], kf["stderr"])
    # two atoms chosen uniformly: at most log 2 of information about the step
    assert kf["value"] <= np.log(2) + 2 * kf["stderr"]


def test_entropy_cap():
    sp = spectrum_from_exponents([1.0, 0.0, -1.0])
    t1, t0 = extremes(3)
    assert entropy_cap(sp, t1) == pytest.approx(4.0)
    assert entropy_cap(sp, t0) == 0.0
    assert entropy_cap(spectrum_from_exponents([1.0, 0.0, 0.0, -1.0], mults=(1, 2, 1)), t1) == pytest.approx(6.0)


def test_local_dimension_degenerate():
    assert local_dimension(np.ones((100, 3))).value == 0.0
    with pytest.raises(ValidationError):
        local_dimension(np.ones((1, 3)))


def test_local_dimension_circle():
    rng = np.random.default_rng(3)
    a = rng.uniform(0, 2 * np.pi, 10_000)
    est = local_dimension(np.stack([np.cos(a), np.sin(a)], axis=1), seed=0)
    assert est.value == pytest.approx(1.0, abs=0.05)


def test_local_dimension_uniform_projective_line():
    rng = np.random.default_rng(4)
    est = local_dimension(lines(rng.uniform(0, np.pi, 10_000)), seed=0)
    assert est.value == pytest.approx(1.0, abs=0.05)


def test_local_dimension_square():
    rng = np.random.default_rng(5)
    est = local_dimension(rng.uniform(size=(10_000, 2)), seed=0)
    assert est.value == pytest.approx(2.0, abs=0.15)
    assert est.window is not None and est.csv_rows()


def test_one_step_dimension_examples(sl2, sl2_ens):
    t1, t0 = extremes(2)
    step = RefinementStep(t1, t0, (0, 1))
    est = one_step_dimension(sl2, step, sl2_ens)
    assert 0 < est.value <= 1 + 2 * est.stderr
    # a single step path is the one-step dimension
    path = monotone_path(t1, t0, sl2_ens.spectrum)
    assert path_dimension(sl2, path, sl2_ens).value == est.value
    assert path_dimension(sl2, [], sl2_ens).value == 0.0


def test_one_step_dimension_deterministic():
    m = shipped_measure("deterministic")
    sp = lyapunov_spectrum(m, 200, 4, seed=0)
    ens = sample_flag_ensemble(m, sp, 300, 100, seed=0)
    t1, t0 = extremes(2)
    assert one_step_dimension(m, RefinementStep(t1, t0, (0, 1)), ens).value == 0.0


def test_one_step_dimension_needs_gap(sl2, sl2_ens):
    ens = sl2_ens
    t1, t0 = extremes(2)
    flat = spectrum_from_exponents([1e-8, -1e-8], mults=(1, 1))
    saved = ens.spectrum
    try:
        ens.spectrum = flat
        with pytest.raises(DegeneracyError):
            one_step_dimension(sl2, RefinementStep(t1, t0, (0, 1)), ens)
    finally:
        ens.spectrum = saved


def test_product_dimension():
    zero = DimensionEstimate(0.0, 0.0)
    assert product_dimension(zero, zero).value == 0.0
    a = DimensionEstimate(0.4, 0.01)
    out = product_dimension(a, a)
    assert out.value == 0.8 and out.stderr == pytest.approx(np.sqrt(2) * 0.01)
    with pytest.raises(ValidationError):
        product_dimension(a, DimensionEstimate(float("nan"), 0.0))


def test_product_dimension_direct_on_sl2(sl2_ens):
    # unstable and stable lines are independent, so the pair has dimension delta + delta'
    u = projector_features(sl2_ens.unstable_q[:, :, :1])
    s = projector_features(sl2_ens.stable_q[:, :, :1])
    du, ds = local_dimension(u, seed=0), local_dimension(s, seed=0)
    out = product_dimension(du, ds, np.hstack([u, s]), seed=0)
    assert out.components[0]["direct"] == pytest.approx(out.value, rel=0.2)


def test_lyapunov_dimension_examples():
    L = LeftFiltration.from_inner(2, [1])
    sp = spectrum_from_exponents([0.8, -0.8])
    assert lyapunov_dimension(sp, L, 0.0).dim_ly == 0.0
    for kappa in (0.3, 1.0, 1.6):
        assert lyapunov_dimension(sp, L, kappa).dim_ly == pytest.approx(min(1.0, kappa / 1.6))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert lyapunov_dimension(sp, L, 5.0).dim_ly == 1.0
    with pytest.raises(ValidationError):
        lyapunov_dimension(sp, L, -1.0)


def test_lyapunov_dimension_bisection_n3():
    sp = spectrum_from_exponents([1.0, 0.0, -1.0])
    prof = lyapunov_dimension(sp, LeftFiltration.from_inner(3, [1, 2]), 1.5)
    lo, hi = 0.0, float(prof.total_dimension)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if prof(mid) > 0 else (lo, mid)
    assert prof.dim_ly == pytest.approx(0.5 * (lo + hi), abs=1e-10)
    assert prof.dim_ly == pytest.approx(1.5)
    assert prof(prof.dim_ly) == pytest.approx(0.0, abs=1e-12)


def test_rw_entropy_single_atom():
    m = MatrixMeasure(np.array([1.0]), np.diag([2.0, 0.5])[None])
    assert rw_entropy(m, 8).value == 0.0


def test_rw_entropy_free_generators():
    # generators of a free subgroup: distinct words give distinct products
    m = two_atom([[1, 2], [0, 1]], [[1, 0], [2, 1]])
    out = rw_entropy(m, 10)
    assert np.allclose(out.ratios, np.log(2))
    assert out.support_sizes.tolist() == [2 ** n for n in range(1, 11)]


def test_rw_entropy_finite_group_saturates():
    m = two_atom(rotation(np.pi / 3), rotation(-np.pi / 3))
    out = rw_entropy(m, 12)
    assert out.support_sizes.max() <= 6
    assert out.ratios[-1] < out.ratios[0] / 4
    assert out.value == out.ratios.min()
    with pytest.raises(ValidationError):
        rw_entropy(m, 0)


def test_report_schema_and_degenerate_measure(shipped_reports):
    rep = shipped_reports["deterministic"]
    for key in ("spectrum", "topology_path", "entropies", "dimensions", "lyapunov_profile", "inequalities"):
        assert key in rep
    assert all(e["value"] == 0.0 for e in rep["entropies"])
    assert rep["lyapunov_profile"]["dim_ly"] == 0.0


def test_report_sl3_path_has_three_steps(shipped_reports):
    rep = shipped_reports["sl3_hyperbolic"]
    assert len(rep["topology_path"]) == 3
    path = {d["quantity"]: d for d in rep["dimensions"]}["path"]
    assert len(path["components"]) == 3
    assert path["value"] == pytest.approx(sum(c["dimension"] for c in path["components"]))


def test_report_inequalities_hold(shipped_reports):
    for name, rep in shipped_reports.items():
        for q in rep["inequalities"]:
            assert q["holds"], (name, q)
        for c in {d["quantity"]: d for d in rep["dimensions"]}["path"].get("components", []):
            assert c["dimension"] <= c["fiber_dimension"] + 2 * c["kappa_stderr"] / c["chi"] + 1e-9


def test_report_rejects_wrong_filtration(sl2):
    with pytest.raises(ValidationError):
        verify_report(sl2, LeftFiltration.from_inner(3, [1]), ReportParams(count=200, spectrum_horizon=200))
