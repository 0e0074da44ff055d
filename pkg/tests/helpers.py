"""Shared builders for tests: datasets from arrays and plausible true parameters."""
from __future__ import annotations

import numpy as np

from nlgrowth.dataset import ColumnRoles, LongitudinalDataset
from nlgrowth.model_builder import ModelSpec, parameter_template
from nlgrowth.params import set_cov_block

WAVES = np.arange(6.0)
RECORDS = tuple(range(1, 7))


def make_dataset(values: dict, times, tics: dict | None = None, t_var: str = "T", extra: dict | None = None):
    """Dataset from ``{variable: (N, J) array}`` sharing the ``(N, J)`` time array.

    Wave indices are 1..J.  ``extra`` holds further numeric columns (e.g.
    observed covariate values of a type-0 TVC) that carry no role.
    """
    times = np.asarray(times, dtype=float)
    n, J = times.shape
    roles = ColumnRoles.from_records({v: range(1, J + 1) for v in values}, t_var=t_var, tics=tuple(tics or ()))
    numeric = {}
    for v, arr in values.items():
        arr = np.asarray(arr, dtype=float)
        for j in range(J):
            numeric[f"{v}{j + 1}"] = arr[:, j].copy()
    for j in range(J):
        numeric[f"{t_var}{j + 1}"] = times[:, j].copy()
    for name, col in (tics or {}).items():
        numeric[name] = np.asarray(col, dtype=float).copy()
    for name, col in (extra or {}).items():
        numeric[name] = np.asarray(col, dtype=float).copy()
    return LongitudinalDataset(tuple(str(i + 1) for i in range(n)), roles, numeric)


def jittered_times(rng, n, waves=WAVES, window=0.25):
    return waves + rng.uniform(-window, window, size=(n, len(waves)))


def random_cov(rng, k, scale=1.0):
    A = rng.normal(size=(k, k))
    return scale * (A @ A.T / k + 0.5 * np.eye(k))


# ---------------------------------------------------------------------------
# literature-plausible true parameters (waves 0..5)
# ---------------------------------------------------------------------------

def lgcm_truth(kind: str, intrinsic: bool = False, model: str = "LGCM", variable: str = "Y",
               records=RECORDS, tics=()):
    build = ModelSpec.lgcm if model == "LGCM" else ModelSpec.lcsm
    spec = build(variable, records, kind, intrinsic=intrinsic, tics=tics)
    ps = parameter_template(spec, 2.5)
    p = variable
    if kind == "linear":
        means = {"eta0": 50.0, "eta1": 5.0}
        psi = [[25.0, 1.5], [1.5, 1.0]]
    elif kind == "quadratic":
        means = {"eta0": 50.0, "eta1": 5.0, "eta2": -0.4}
        psi = [[25.0, 1.0, -0.1], [1.0, 1.0, -0.02], [-0.1, -0.02, 0.04]]
    elif kind == "neg_exponential":
        means = {"eta0": 50.0, "eta1": 20.0}
        psi = [[25.0, 3.0], [3.0, 9.0]]
        ps.set(f"{p}.b", 0.8)
    elif kind == "jenss_bayley":
        means = {"eta0": 50.0, "eta1": 4.0, "eta2": -10.0}
        psi = [[25.0, 1.0, 2.0], [1.0, 1.0, 0.5], [2.0, 0.5, 4.0]]
        ps.set(f"{p}.c", -0.7)
    elif kind == "bilinear_spline":
        # initial status 50, slopes 5 then 2, knot 2.5 -> level at knot 62.5
        means = {"eta0p": 62.5, "eta1p": 3.5, "eta2p": -1.5}
        psi = [[30.0, 2.0, 0.5], [2.0, 1.0, 0.2], [0.5, 0.2, 0.5]]
        ps.set(f"{p}.gamma", 2.5)
    elif kind == "nonparametric":
        means = {"eta0": 50.0, "eta1": 5.0}
        psi = [[25.0, 1.5], [1.5, 1.0]]
        for k, r in enumerate((0.9, 0.8, 0.7, 0.6)[: len(records) - 2], start=2):
            ps.set(f"{p}.rate{k}", r)
    else:
        raise ValueError(kind)
    for f, v in means.items():
        ps.set(f"{p}.{f}.mean", v)
    psi = np.array(psi)
    if intrinsic:
        dvar = {"neg_exponential": 0.01, "jenss_bayley": 0.01, "bilinear_spline": 0.09}[kind]
        k = psi.shape[0]
        full = np.zeros((k + 1, k + 1))
        full[:k, :k] = psi
        full[k, k] = dvar
        psi = full
    set_cov_block(ps, f"{p}.psi", psi)
    ps.set(f"{p}.theta", 1.0)
    for x in tics:
        ps.set(f"tic.{x}.mean", 0.5)
        ps.set(f"beta({p}.{spec.processes[0].growth_factors[0]}<-tic.{x})", 1.2)
    return spec, ps


def tvc_truth(tvc_type: int, records=RECORDS):
    spec = ModelSpec.tvc_model("Y", records, "linear", "X", tvc_type)
    ps = parameter_template(spec, 2.5)
    ps.set("Y.eta0.mean", 50.0)
    ps.set("Y.eta1.mean", 5.0)
    set_cov_block(ps, "Y.psi", np.array([[25.0, 1.5], [1.5, 1.0]]))
    ps.set("Y.theta", 1.0)
    ps.set("kappa", 0.8)
    if tvc_type > 0:
        ps.set("X.eta0.mean", 10.0)
        ps.set("X.eta1.mean", 2.0)
        set_cov_block(ps, "X.psi", np.array([[4.0, 0.3], [0.3, 1.0]]))
        for k in range(2, len(records)):
            ps.set(f"X.rate{k}", 0.9)
        ps.set("X.theta", 1.0)
        ps.set("beta(Y.eta0<-X.eta0)", 0.5)
        ps.set("beta(Y.eta1<-X.eta0)", 0.1)
    return spec, ps


def mgm_truth(records=(RECORDS, RECORDS)):
    spec = ModelSpec.mgm(["Y", "Z"], list(records), "linear")
    ps = parameter_template(spec, 2.5)
    for p, (m0, m1) in (("Y", (50.0, 5.0)), ("Z", (20.0, 2.0))):
        ps.set(f"{p}.eta0.mean", m0)
        ps.set(f"{p}.eta1.mean", m1)
    set_cov_block(ps, "psi", np.array([[25.0, 1.5, 5.0, 0.3], [1.5, 1.0, 0.4, 0.2],
                                       [5.0, 0.4, 9.0, 0.5], [0.3, 0.2, 0.5, 1.0]]))
    set_cov_block(ps, "res", np.array([[1.0, 0.3], [0.3, 1.0]]))
    return spec, ps


def mediation_truth(kind: str = "linear", x_longitudinal: bool = False, path: float = 0.3, records=RECORDS):
    spec = ModelSpec.mediation_model("X", "M", "Y", records, kind, x_longitudinal=x_longitudinal)
    ps = parameter_template(spec, 2.5)
    if kind == "linear":
        means = {"eta0": 10.0, "eta1": 1.0}
    else:
        means = {"eta1": 1.0, "etag": 10.0, "eta2": 0.5}
    for proc in spec.processes:
        for f, v in means.items():
            ps.set(f"{proc.name}.{f}.mean", v)
        set_cov_block(ps, f"{proc.name}.psi", np.eye(len(means)))
        ps.set(f"{proc.name}.theta", 1.0)
        if kind != "linear":
            ps.set(f"{proc.name}.gamma", 2.5)
    if not x_longitudinal:
        ps.set("tic.X.mean", 0.5)
    for n in ps:
        if n.startswith("beta("):
            ps.set(n, path)
    return spec, ps


def mixture_truth(G: int = 2, class_tics=(), separation: float = 15.0):
    sub = ModelSpec.lgcm("Y", RECORDS, "linear")
    spec = ModelSpec.mixture_of(sub, G, class_tics=class_tics)
    ps = parameter_template(spec, 2.5)
    for g in range(1, G + 1):
        ps.set(f"c{g}.Y.eta0.mean", 40.0 + separation * (g - 1))
        ps.set(f"c{g}.Y.eta1.mean", 5.0 - 1.5 * (g - 1))
        set_cov_block(ps, f"c{g}.Y.psi", np.array([[9.0, 0.3], [0.3, 0.5]]))
        ps.set(f"c{g}.Y.theta", 1.0)
    return spec, ps
