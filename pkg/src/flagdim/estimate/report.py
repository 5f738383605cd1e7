"""End-to-end verification report: spectrum, path, entropies, dimensions, Lyapunov bound."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..randwalk import MatrixMeasure
from ..spectrum import lyapunov_spectrum
from ..topology import LeftFiltration, extremes, filtered_topology, monotone_path
from .dimension import lyapunov_dimension, local_dimension, path_dimension
from .ensemble import sample_flag_ensemble, stationarity_pvalue
from .entropy import cylinder_entropy, entropy_cap, fiber_entropy, furstenberg_entropy

__all__ = ["ReportParams", "verify_report"]


@dataclass
class ReportParams:
    seed: int = 0
    spectrum_horizon: int = 1000
    replicas: int = 16
    cluster_tol: float | None = None
    horizon: int = 400
    count: int = 2000
    k: int = 4
    probes: int = 500
    cylinder: bool = True

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _ineq(name, lhs, rhs, slack, margin_note=""):
    ok = bool(lhs <= rhs + slack + 1e-12)
    return {
        "name": name,
        "lhs": float(lhs),
        "rhs": float(rhs),
        "slack": float(slack),
        "margin": float(rhs + slack - lhs),
        "holds": ok,
        **({"note": margin_note} if margin_note else {}),
    }


def verify_report(m: MatrixMeasure, L: LeftFiltration | str | None = None,
                  params: ReportParams | None = None) -> dict:
    """Run the full pipeline for one measure and one left filtration.

    The document follows the schema {spectrum, topology_path, entropies,
    dimensions, lyapunov_profile, inequalities}; ``csv`` holds the tables.
    """
    p = params or ReportParams()
    spec = lyapunov_spectrum(m, p.spectrum_horizon, p.replicas, p.cluster_tol, p.seed)
    N = spec.N
    if L is None or isinstance(L, str):
        from ..topology import parse_filtration

        L = parse_filtration(L if isinstance(L, str) else ",".join(str(i) for i in range(1, N)), N)
    if L.N != N:
        from ..errors import ValidationError

        raise ValidationError(f"filtration is for N={L.N} but the spectrum has N={N} exponents")
    t = filtered_topology(L)
    _, t0 = extremes(N)
    path = monotone_path(t, t0, spec)
    ens = sample_flag_ensemble(m, spec, p.count, p.horizon, p.seed + 1)

    entropies = []
    dims = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        kf = furstenberg_entropy(m, L, ens, p.k)
        entropies.append({"quantity": "furstenberg", **kf.to_dict()})
        kt = fiber_entropy(m, t, t0, ens, p.k)
        entropies.append({"quantity": "fiber T->T0", **kt.to_dict()})
        step_kappas = []
        for s in path:
            ks = fiber_entropy(m, s.finer, s.coarser, ens, p.k)
            step_kappas.append(ks)
            entropies.append({"quantity": f"step {s.render()}", **ks.to_dict()})
        if p.cylinder and N > 1:
            kc = cylinder_entropy(m, t, t0, ens, depth=1, seed=p.seed)
            entropies.append({"quantity": "cylinder T->T0", **kc.to_dict()})

        delta = path_dimension(m, path, ens, p.k)
        dims.append({"quantity": "path", **delta.to_dict()})
        direct = local_dimension(ens.flag_features(L), probes=p.probes, seed=p.seed)
        dims.append({"quantity": "direct", **direct.to_dict()})

        prof = lyapunov_dimension(spec, L, kf)
    notes = sorted({str(w.message) for w in caught})

    cap = entropy_cap(spec, t)
    chain_sum = sum(k.value for k in step_kappas)
    chain_se = float(np.sqrt(sum(k.stderr ** 2 for k in step_kappas) + kt.stderr ** 2))
    inequalities = [
        _ineq("entropy cap", kf.value, cap, 2 * kf.stderr),
        _ineq("path dimension <= dim_LY", delta.value, prof.dim_ly, 2 * delta.stderr),
        _ineq("chain rule (sum of steps - total)", abs(chain_sum - kt.value), 0.0, 3 * chain_se),
        _ineq("entropy nonnegative", -kf.raw, 0.0, 2 * kf.stderr),
    ]
    if direct.defined:
        inequalities.append(_ineq("direct dimension <= dim_LY", direct.value, prof.dim_ly,
                                  2 * float(np.hypot(direct.stderr, delta.stderr)), "cross-check"))

    doc = {
        "measure": m.name,
        "params": p.to_dict(),
        "filtration": L.render(),
        "spectrum": spec.to_dict(),
        "topology_path": [
            {"step": s.render(), "pair": [s.pair[0] + 1, s.pair[1] + 1],
             "chi": float(spec.chis[s.pair[0]] - spec.chis[s.pair[1]])}
            for s in path
        ],
        "entropies": entropies,
        "dimensions": dims,
        "lyapunov_profile": prof.to_dict(),
        "inequalities": inequalities,
        "diagnostics": {
            "dropouts": int(ens.dropouts),
            "stationarity_p": stationarity_pvalue(m, ens, L, p.seed),
            "warnings": notes,
        },
    }
    doc["csv"] = {"ball_mass": [("r", "mass"), *direct.csv_rows()]}
    return doc
