"""Model specifications and their implied moments.

Every supported family is a linear latent-variable model once the
individual measurement times are fixed:

    xi  = alpha + B xi + zeta,            Cov(zeta) = Phi
    y_i = nu_i + Lambda_i xi + eps_i,     Cov(eps)  = Theta

``Lambda_i`` carries the definition variables (individual times) and, for
intrinsically nonlinear curves, the Taylor columns evaluated at the
model-implied factor means.  Time-invariant covariates are exogenous
latents measured without error.

Two evaluation paths share the same building blocks: :class:`CompiledModel`
evaluates the whole sample at once (used for estimation), while
:func:`build_structural` / :func:`implied_moments` produce reticular-action
matrices for a single record, which serve as a reference implementation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from . import curves
from .curves import FunctionalForm
from .dataset import ColumnRoles, IndividualRecord, LongitudinalDataset
from .exceptions import (
    ClassIndexOutOfRange,
    IncompleteParameterSet,
    MissingColumn,
    NonMonotoneTimes,
    RoleMismatch,
    SingularStructure,
)
from .params import ParameterSet, chol_names

FAMILIES = ("LGCM", "LCSM", "TVC", "MGM", "mediation", "mixture")


# ---------------------------------------------------------------------------
# specifications
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProcessSpec:
    """One longitudinal variable: value columns ``<name><k>``, times ``<t_var><k>``.

    ``model`` is ``LGCM``, ``LCSM`` or ``MED`` (the min/max mediation basis).
    """

    name: str
    records: tuple[int, ...]
    form: FunctionalForm
    model: str = "LGCM"
    t_var: str = "T"

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(int(k) for k in self.records))
        if self.model not in ("LGCM", "LCSM", "MED"):
            raise ValueError(f"unknown process model {self.model!r}")
        if self.model == "LCSM" and self.form.kind not in curves.LCSM_KINDS:
            raise ValueError(f"{self.form.kind} is not available as a change-score model")
        if self.model == "LGCM" and self.form.kind == "nonparametric":
            raise ValueError("the nonparametric form is only available as a change-score model")
        if self.model == "MED" and (self.form.kind not in ("linear", "bilinear_spline") or self.form.intrinsic):
            raise ValueError("mediation models support only linear and reduced bilinear_spline forms")
        if len(self.records) < 2:
            raise ValueError(f"{self.name}: at least two waves are needed")

    @property
    def n_waves(self) -> int:
        return len(self.records)

    @property
    def value_columns(self) -> tuple[str, ...]:
        return tuple(f"{self.name}{k}" for k in self.records)

    @property
    def time_columns(self) -> tuple[str, ...]:
        return tuple(f"{self.t_var}{k}" for k in self.records)

    @property
    def factors(self) -> tuple[str, ...]:
        if self.model == "MED":
            return ("eta0", "eta1") if self.form.kind == "linear" else ("eta1", "etag", "eta2")
        return self.form.factor_names()

    @property
    def deviation(self) -> str | None:
        """Name of the deviation factor of an intrinsic form."""
        return self.factors[-1] if self.form.intrinsic else None

    @property
    def growth_factors(self) -> tuple[str, ...]:
        return tuple(f for f in self.factors if f != self.deviation)

    @property
    def shape_param(self) -> str | None:
        if self.model == "MED":
            return f"{self.name}.gamma" if self.form.kind == "bilinear_spline" else None
        key = self.form.shape_key
        return f"{self.name}.{key}" if key else None

    @property
    def rate_params(self) -> tuple[str, ...]:
        if self.form.kind != "nonparametric":
            return ()
        return tuple(f"{self.name}.rate{k}" for k in range(2, self.n_waves))


@dataclass(frozen=True)
class TVCSpec:
    variable: str
    type: int
    base_model: str = "LGCM"

    def __post_init__(self):
        if self.type not in (0, 1, 2, 3):
            raise ValueError("TVC type must be 0, 1, 2 or 3")
        if self.base_model not in ("LGCM", "LCSM"):
            raise ValueError("TVC base model must be LGCM or LCSM")


@dataclass(frozen=True)
class MediationSpec:
    x: str
    m: str
    y: str
    x_longitudinal: bool = False
    kind: str = "linear"
    paths: tuple[str, ...] = ("xm", "xy", "my")

    def __post_init__(self):
        kind = {"bilinear": "bilinear_spline"}.get(self.kind, self.kind)
        if kind not in ("linear", "bilinear_spline"):
            raise ValueError("mediation form must be linear or bilinear_spline")
        object.__setattr__(self, "kind", kind)
        bad = set(self.paths) - {"xm", "xy", "my"}
        if bad:
            raise ValueError(f"unknown mediation paths {sorted(bad)}")


@dataclass(frozen=True)
class MixtureSpec:
    G: int
    class_tics: tuple[str, ...] = ()
    sub_family: str = "LGCM"
    tie: tuple[str, ...] = ()  # parameter names shared by all classes

    def __post_init__(self):
        if int(self.G) < 2:
            raise ValueError("a mixture needs G >= 2 classes; fit the submodel instead")
        if self.sub_family not in FAMILIES[:-1]:
            raise ValueError(f"unknown submodel family {self.sub_family!r}")


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model description.

    Use the constructors :meth:`lgcm`, :meth:`lcsm`, :meth:`tvc_model`,
    :meth:`mgm`, :meth:`mediation_model` and :meth:`mixture_of` rather than
    filling the fields by hand.
    """

    family: str
    processes: tuple[ProcessSpec, ...]
    tics: tuple[str, ...] = ()
    tvc: TVCSpec | None = None
    mediation: MediationSpec | None = None
    mixture: MixtureSpec | None = None
    outcomes: tuple[str, ...] = ()  # processes receiving TIC regressions

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.family == "mixture" and self.mixture is None:
            raise ValueError("mixture family needs a MixtureSpec")
        fam = self.mixture.sub_family if self.family == "mixture" else self.family
        if self.family != "mixture" and self.mixture is not None:
            raise ValueError("MixtureSpec given for a non-mixture family")
        if (fam == "TVC") != (self.tvc is not None):
            raise ValueError("TVCSpec must be set exactly for the TVC family")
        if (fam == "mediation") != (self.mediation is not None):
            raise ValueError("MediationSpec must be set exactly for the mediation family")
        names = [p.name for p in self.processes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate process names")
        if fam == "MGM":
            if len(self.processes) < 2:
                raise ValueError("a multivariate model needs at least two outcomes")
            forms = {(p.form, p.model) for p in self.processes}
            if len(forms) > 1:
                raise RoleMismatch("all outcomes of a multivariate model must share one functional form")
        if fam in ("LGCM", "LCSM") and len(self.processes) != 1:
            raise ValueError(f"{fam} takes exactly one process")
        if not self.outcomes:
            object.__setattr__(self, "outcomes", tuple(self._default_outcomes(fam)))

    def _default_outcomes(self, fam):
        if fam == "TVC":
            return [self.processes[0].name]
        if fam == "mediation":
            return []
        return [p.name for p in self.processes]

    # -- constructors -----------------------------------------------------
    @classmethod
    def lgcm(cls, variable, records, form, intrinsic=False, t_var="T", tics=()):
        f = form if isinstance(form, FunctionalForm) else FunctionalForm(form, intrinsic)
        return cls("LGCM", (ProcessSpec(variable, records, f, "LGCM", t_var),), tuple(tics))

    @classmethod
    def lcsm(cls, variable, records, form, intrinsic=False, t_var="T", tics=()):
        f = form if isinstance(form, FunctionalForm) else FunctionalForm(form, intrinsic)
        return cls("LCSM", (ProcessSpec(variable, records, f, "LCSM", t_var),), tuple(tics))

    @classmethod
    def tvc_model(cls, variable, records, form, tvc_var, tvc_type, base_model="LGCM",
                  intrinsic=False, t_var="T", tics=()):
        f = form if isinstance(form, FunctionalForm) else FunctionalForm(form, intrinsic)
        procs = [ProcessSpec(variable, records, f, base_model, t_var)]
        if tvc_type > 0:
            procs.append(ProcessSpec(tvc_var, records, FunctionalForm("nonparametric"), "LCSM", t_var))
        return cls("TVC", tuple(procs), tuple(tics), tvc=TVCSpec(tvc_var, tvc_type, base_model))

    @classmethod
    def mgm(cls, variables, records, form, intrinsic=False, model="LGCM", t_vars="T", tics=()):
        f = form if isinstance(form, FunctionalForm) else FunctionalForm(form, intrinsic)
        records = _per_process(records, len(variables))
        t_vars = _per_process(t_vars, len(variables), scalar=str)
        procs = tuple(ProcessSpec(v, r, f, model, t) for v, r, t in zip(variables, records, t_vars))
        return cls("MGM", procs, tuple(tics))

    @classmethod
    def mediation_model(cls, x, m, y, records, kind="linear", x_longitudinal=False, t_vars="T",
                        paths=("xm", "xy", "my")):
        med = MediationSpec(x, m, y, x_longitudinal, kind, tuple(paths))
        names = [x, m, y] if x_longitudinal else [m, y]
        records = _per_process(records, len(names))
        t_vars = _per_process(t_vars, len(names), scalar=str)
        f = FunctionalForm(med.kind)
        procs = tuple(ProcessSpec(v, r, f, "MED", t) for v, r, t in zip(names, records, t_vars))
        return cls("mediation", procs, () if x_longitudinal else (x,), mediation=med)

    @classmethod
    def mixture_of(cls, sub: "ModelSpec", G: int, class_tics=(), tie=()):
        if sub.family == "mixture":
            raise ValueError("nested mixtures are not supported")
        mix = MixtureSpec(int(G), tuple(class_tics), sub.family, tuple(tie))
        return replace(sub, family="mixture", mixture=mix)

    # -- derived structure ------------------------------------------------
    @property
    def base_family(self) -> str:
        return self.mixture.sub_family if self.family == "mixture" else self.family

    def process(self, name) -> ProcessSpec:
        for p in self.processes:
            if p.name == name:
                return p
        raise RoleMismatch(f"no process named {name!r}")

    def roles(self) -> ColumnRoles:
        longit = {p.name: (p.value_columns, p.time_columns) for p in self.processes}
        tics = list(self.tics)
        if self.tvc is not None and self.tvc.type == 0:
            y = self.processes[0]
            longit[self.tvc.variable] = (tuple(f"{self.tvc.variable}{k}" for k in y.records), y.time_columns)
        if self.mixture is not None:
            tics += [c for c in self.mixture.class_tics if c not in tics]
        return ColumnRoles(longit, tuple(tics))

    def latent_names(self) -> list[str]:
        out = [f"{p.name}.{f}" for p in self.processes for f in p.factors]
        return out + [f"tic.{x}" for x in self.tics]

    def observed_names(self) -> list[str]:
        out = [c for p in self.processes for c in p.value_columns]
        return out + list(self.tics)

    def cov_blocks(self) -> list[tuple[str, list[str]]]:
        """Cholesky-parameterised covariance blocks: (block name, labels)."""
        blocks = []
        if self.base_family == "MGM":
            blocks.append(("psi", [f"{p.name}.{f}" for p in self.processes for f in p.factors]))
        else:
            for p in self.processes:
                blocks.append((f"{p.name}.psi", [f"{p.name}.{f}" for f in p.factors]))
        if self.tics:
            blocks.append(("tic.phi", [f"tic.{x}" for x in self.tics]))
        if self.base_family == "MGM":
            blocks.append(("res", [f"res.{p.name}" for p in self.processes]))
        return blocks


def _per_process(value, n, scalar=None):
    if scalar is not None and isinstance(value, scalar):
        return [value] * n
    value = list(value)
    if value and not isinstance(value[0], (list, tuple, range, np.ndarray)) and scalar is None:
        return [tuple(value)] * n
    if len(value) != n:
        raise ValueError(f"expected {n} per-process entries, got {len(value)}")
    return value


# ---------------------------------------------------------------------------
# parameter template
# ---------------------------------------------------------------------------

def parameter_template(spec: ModelSpec, time_hint: float = 0.0) -> ParameterSet:
    """All parameters of ``spec`` with neutral values.

    ``time_hint`` seeds knot locations (a typical mid-study time).
    """
    if spec.family == "mixture":
        sub = class_spec(spec)
        base = parameter_template(sub, time_hint)
        sets = [base.prefixed(f"c{g}.") for g in range(1, spec.mixture.G + 1)]
        ps = ParameterSet.concat(*sets)
        for g in range(2, spec.mixture.G + 1):
            ps.add(f"c{g}.logit.0", 0.0, "logit")
            for x in spec.mixture.class_tics:
                ps.add(f"c{g}.logit.{x}", 0.0, "logit")
        for name in spec.mixture.tie:
            for g in range(2, spec.mixture.G + 1):
                ps.tie(f"c{g}.{name}", f"c1.{name}")
        return ps

    ps = ParameterSet()
    for p in spec.processes:
        for f in p.growth_factors:
            ps.add(f"{p.name}.{f}.mean", 0.0, "mean")
        if p.shape_param:
            default = {"b": 0.5, "c": -0.5, "gamma": time_hint}[p.shape_param.rsplit(".", 1)[1]]
            ps.add(p.shape_param, default, "shape")
        for r in p.rate_params:
            ps.add(r, 1.0, "rate")
    for block, labels in spec.cov_blocks():
        role = "res_chol" if block == "res" else "chol"
        for name, i, j in chol_names(block, len(labels)):
            ps.add(name, 1.0 if i == j else 0.0, role, positive=(i == j))
    if spec.base_family != "MGM":
        for p in spec.processes:
            ps.add(f"{p.name}.theta", 1.0, "residual", positive=True)
    for x in spec.tics:
        ps.add(f"tic.{x}.mean", 0.0, "tic_mean")
    for src, tgt in _tic_paths(spec):
        ps.add(f"beta({tgt}<-{src})", 0.0, "tic_coef" if spec.mediation is None else "path")
    if spec.tvc is not None:
        ps.add("kappa", 0.0, "tvc")
        for src, tgt in _trait_paths(spec):
            ps.add(f"beta({tgt}<-{src})", 0.0, "tvc")
    for src, tgt in _mediation_paths(spec):
        ps.add(f"beta({tgt}<-{src})", 0.0, "path")
    return ps


def _tic_paths(spec):
    """(source latent, target latent) pairs for TIC regressions."""
    out = []
    if spec.mediation is not None:
        med = spec.mediation
        if med.x_longitudinal:
            return out
        for proc_name, key in ((med.m, "xm"), (med.y, "xy")):
            if key in med.paths:
                p = spec.process(proc_name)
                out += [(f"tic.{med.x}", f"{p.name}.{f}") for f in p.growth_factors]
        return out
    for x in spec.tics:
        for name in spec.outcomes:
            p = spec.process(name)
            out += [(f"tic.{x}", f"{p.name}.{f}") for f in p.growth_factors]
    return out


def _trait_paths(spec):
    if spec.tvc is None or spec.tvc.type == 0:
        return []
    y = spec.processes[0]
    return [(f"{spec.tvc.variable}.eta0", f"{y.name}.{f}") for f in y.growth_factors]


def _mediation_paths(spec):
    """Lower-triangular latent paths between longitudinal mediation processes."""
    med = spec.mediation
    if med is None:
        return []
    pairs = [("my", med.m, med.y)]
    if med.x_longitudinal:
        pairs = [("xm", med.x, med.m), ("xy", med.x, med.y)] + pairs
    out = []
    for key, s, t in pairs:
        if key not in med.paths:
            continue
        fs, ft = spec.process(s).factors, spec.process(t).factors
        for c, fc in enumerate(ft):
            for a, fa in enumerate(fs):
                if a <= c:
                    out.append((f"{s}.{fa}", f"{t}.{fc}"))
    return out


def user_parameters(values: Mapping[str, float], spec: ModelSpec, prefix: str = "") -> dict[str, float]:
    """User-facing parameterisation: Cholesky blocks become variances/covariances."""
    if spec.family == "mixture":
        sub = class_spec(spec)
        out = {}
        for g in range(1, spec.mixture.G + 1):
            out.update(user_parameters(values, sub, f"c{g}."))
        for n, v in values.items():
            if ".logit." in n:
                out[n] = v
        return out
    out = {}
    chol_prefixes = tuple(f"{prefix}{b}.chol." for b, _ in spec.cov_blocks())
    for n, v in values.items():
        if n.startswith(prefix) and not n.startswith(chol_prefixes) and ".logit." not in n:
            out[n] = v
    for block, labels in spec.cov_blocks():
        L = _chol(values, prefix + block, len(labels))
        S = L @ L.T
        for i, a in enumerate(labels):
            out[f"{prefix}var({a})"] = S[i, i]
        for i, a in enumerate(labels):
            for j in range(i):
                out[f"{prefix}cov({labels[j]},{a})"] = S[j, i]
    return out


def _chol(values, block, size):
    L = np.zeros((size, size))
    for name, i, j in chol_names(block, size):
        try:
            L[i, j] = values[name]
        except KeyError:
            raise IncompleteParameterSet(name) from None
    return L


# ---------------------------------------------------------------------------
# compiled model: whole-sample moments
# ---------------------------------------------------------------------------

def _wave_means(t: np.ndarray) -> np.ndarray:
    """Column means of an (N, J) time array; empty columns extrapolated over the index."""
    J = t.shape[1]
    with np.errstate(all="ignore"):
        w = np.array([np.nanmean(t[:, j]) if np.any(~np.isnan(t[:, j])) else np.nan for j in range(J)])
    ok = ~np.isnan(w)
    idx = np.arange(J, dtype=float)
    if ok.sum() == 0:
        return idx
    if ok.sum() == 1:
        return w[ok][0] + (idx - idx[ok][0])
    coef = np.polyfit(idx[ok], w[ok], 1)
    out = np.interp(idx, idx[ok], w[ok])
    lo, hi = idx[ok][0], idx[ok][-1]
    out[idx < lo] = np.polyval(coef, idx[idx < lo])
    out[idx > hi] = np.polyval(coef, idx[idx > hi])
    return out


def fill_times(t: np.ndarray, wave_means: np.ndarray) -> np.ndarray:
    """Replace absent times by the wave mean plus the interpolated individual offset."""
    t = np.array(t, dtype=float)
    miss = np.isnan(t)
    if not miss.any():
        return t
    idx = np.arange(t.shape[1], dtype=float)
    off = t - wave_means
    for i in np.flatnonzero(miss.any(axis=1)):
        ok = ~miss[i]
        t[i] = wave_means + (np.interp(idx, idx[ok], off[i, ok]) if ok.any() else 0.0)
    return t


class CompiledModel:
    """Data-bound model of a non-mixture spec; evaluates moments for all individuals.

    Parameters
    ----------
    spec : ModelSpec
        Non-mixture specification (use :func:`class_spec` for mixtures).
    column : callable
        ``column(name) -> (N,) float array`` with NaN for absent cells.
    n : int
        Number of individuals.
    ids : sequence of str, optional
    wave_means : mapping, optional
        ``time column -> mean``; defaults to the sample means.
    """

    def __init__(self, spec: ModelSpec, column: Callable[[str], np.ndarray], n: int,
                 ids: Sequence[str] | None = None, wave_means: Mapping[str, float] | None = None):
        if spec.family == "mixture":
            spec = class_spec(spec)
        self.spec = spec
        self.n = int(n)
        self.ids = tuple(ids) if ids is not None else tuple(str(i + 1) for i in range(n))
        self.latents = spec.latent_names()
        self.observed = spec.observed_names()
        self.K, self.P = len(self.latents), len(self.observed)
        self._lat = {name: k for k, name in enumerate(self.latents)}

        def col(name):
            try:
                return np.asarray(column(name), dtype=float).reshape(self.n)
            except (KeyError, MissingColumn):
                raise MissingColumn(name) from None

        obs = np.column_stack([col(c) for c in self.observed]) if self.P else np.empty((n, 0))
        mask = ~np.isnan(obs)

        # per-process row slices, latent slices and filled times
        self.rows, self.lat_slices, self.times = {}, {}, {}
        r = 0
        for p in spec.processes:
            self.rows[p.name] = slice(r, r + p.n_waves)
            r += p.n_waves
            k0 = self._lat[f"{p.name}.{p.factors[0]}"]
            self.lat_slices[p.name] = slice(k0, k0 + len(p.factors))
            t = np.column_stack([col(c) for c in p.time_columns])
            if wave_means is not None:
                w = np.array([wave_means.get(c, np.nan) for c in p.time_columns], dtype=float)
                if np.isnan(w).any():
                    w = _merge_means(w, _wave_means(t))
            else:
                w = _wave_means(t)
            tf = fill_times(t, w)
            if p.model == "LCSM" and np.any(np.diff(tf, axis=1) <= 0):
                i = int(np.argwhere(np.diff(tf, axis=1) <= 0)[0, 0])
                raise NonMonotoneTimes(f"individual {self.ids[i]!r}: filled times not increasing")
            self.times[p.name] = tf
            self.wave_means = {**getattr(self, "wave_means", {}), **dict(zip(p.time_columns, w))}
        self.tic_rows = slice(r, r + len(spec.tics))

        # TVC type 0: observed covariate values enter as offsets
        self.tvc_x = None
        if spec.tvc is not None and spec.tvc.type == 0:
            y = spec.processes[0]
            x = np.column_stack([col(f"{spec.tvc.variable}{k}") for k in y.records])
            rows = self.rows[y.name]
            mask[:, rows] &= ~np.isnan(x)  # outcome without its covariate value is unusable
            self.tvc_x = np.nan_to_num(x)

        self.obs = np.where(mask, obs, 0.0)
        self.mask = mask
        self.patterns = _patterns(mask)
        self.class_x = None

    @classmethod
    def from_dataset(cls, spec: ModelSpec, data: LongitudinalDataset, **kw):
        cm = cls(spec, data.column, data.n_individuals, data.ids, **kw)
        if spec.family == "mixture" and spec.mixture.class_tics:
            X = data.tic_matrix(spec.mixture.class_tics)
            if np.isnan(X).any():
                raise RoleMismatch("class-membership covariates must be complete")
            cm.class_x = X
        return cm

    # -- parameter -> matrices ------------------------------------------
    def latent_matrices(self, v: Mapping[str, float], prefix: str = ""):
        """alpha (K,), B (K, K), Phi (K, K) of the latent structure."""
        spec, K, lat = self.spec, self.K, self._lat
        alpha = np.zeros(K)
        B = np.zeros((K, K))
        Phi = np.zeros((K, K))
        get = _getter(v, prefix)
        for p in spec.processes:
            for f in p.growth_factors:
                alpha[lat[f"{p.name}.{f}"]] = get(f"{p.name}.{f}.mean")
        for x in spec.tics:
            alpha[lat[f"tic.{x}"]] = get(f"tic.{x}.mean")
        for src, tgt in _tic_paths(spec) + _trait_paths(spec) + _mediation_paths(spec):
            B[lat[tgt], lat[src]] = get(f"beta({tgt}<-{src})")
        for block, labels in spec.cov_blocks():
            if block == "res":
                continue
            L = _chol_get(get, block, len(labels))
            idx = [lat[a] for a in labels]
            Phi[np.ix_(idx, idx)] = L @ L.T
        return alpha, B, Phi

    def residual_matrix(self, v: Mapping[str, float], prefix: str = "") -> np.ndarray:
        spec, get = self.spec, _getter(v, prefix)
        theta = np.zeros((self.P, self.P))
        if spec.base_family == "MGM":
            L = _chol_get(get, "res", len(spec.processes))
            R = L @ L.T
            for a, pa in enumerate(spec.processes):
                for b, pb in enumerate(spec.processes):
                    ra, rb = self.rows[pa.name], self.rows[pb.name]
                    for ja, k in enumerate(pa.records):
                        if k in pb.records:
                            theta[ra.start + ja, rb.start + pb.records.index(k)] = R[a, b]
        else:
            for p in spec.processes:
                r = self.rows[p.name]
                idx = np.arange(r.start, r.stop)
                theta[idx, idx] = get(f"{p.name}.theta")
        return theta

    def loadings(self, v: Mapping[str, float], m: np.ndarray, prefix: str = ""):
        """Lambda (N, P, K) and nu (N, P) given the marginal latent means ``m``."""
        spec, get = self.spec, _getter(v, prefix)
        lam = np.zeros((self.n, self.P, self.K))
        nu = np.zeros((self.n, self.P))
        for p in spec.processes:
            r, ks = self.rows[p.name], self.lat_slices[p.name]
            lam[:, r, ks] = self._process_loadings(p, get, m[ks])
        for q, x in enumerate(spec.tics):
            lam[:, self.tic_rows.start + q, self._lat[f"tic.{x}"]] = 1.0
        if spec.tvc is not None:
            y = spec.processes[0]
            kappa = get("kappa")
            if spec.tvc.type == 0:
                nu[:, self.rows[y.name]] = kappa * self.tvc_x
            else:
                xp = spec.process(spec.tvc.variable)
                w = state_weights(spec.tvc.type, self.times[xp.name], [get(r) for r in xp.rate_params])
                lam[:, self.rows[y.name], self._lat[f"{xp.name}.eta1"]] = kappa * w
        return lam, nu

    def _process_loadings(self, p: ProcessSpec, get, m_p: np.ndarray) -> np.ndarray:
        t = self.times[p.name]
        if p.model == "MED":
            g = get(p.shape_param) if p.shape_param else None
            return curves.mediation_loadings(p.form.kind, t, g)
        shape = {}
        if p.shape_param:
            shape[p.form.shape_key] = get(p.shape_param)
        if p.rate_params:
            shape["rates"] = np.array([get(r) for r in p.rate_params])
        if p.form.intrinsic:
            names = p.factors
            if p.form.kind == "neg_exponential":
                shape["mu_eta1"] = m_p[names.index("eta1")]
            elif p.form.kind == "jenss_bayley":
                shape["mu_eta2"] = m_p[names.index("eta2")]
            else:
                shape["mu_eta2"] = m_p[names.index("eta2p")]
        if p.model == "LCSM":
            return curves.lcsm_loadings(p.form, t, shape)
        return curves.lgcm_loadings(p.form, t, shape)

    def moments(self, v: Mapping[str, float], prefix: str = ""):
        """Implied means (N, P) and covariances (N, P, P) over all slots.

        Entries for absent slots are computed too; callers select with ``mask``.
        """
        alpha, B, Phi = self.latent_matrices(v, prefix)
        IB = np.eye(self.K) - B
        _check_invertible(IB)
        inv = np.linalg.inv(IB)
        m = inv @ alpha
        C = inv @ Phi @ inv.T
        lam, nu = self.loadings(v, m, prefix)
        mu = nu + lam @ m
        sigma = lam @ C @ np.swapaxes(lam, 1, 2) + self.residual_matrix(v, prefix)
        return mu, sigma

    def latent_moments(self, v: Mapping[str, float], prefix: str = ""):
        alpha, B, Phi = self.latent_matrices(v, prefix)
        IB = np.eye(self.K) - B
        _check_invertible(IB)
        inv = np.linalg.inv(IB)
        return inv @ alpha, inv @ Phi @ inv.T


def _merge_means(w, fallback):
    return np.where(np.isnan(w), fallback, w)


def _getter(v, prefix):
    def get(name):
        try:
            return v[prefix + name]
        except KeyError:
            raise IncompleteParameterSet(prefix + name) from None
    return get


def _chol_get(get, block, size):
    L = np.zeros((size, size))
    for name, i, j in chol_names(block, size):
        L[i, j] = get(name)
    return L


def _check_invertible(M):
    if M.size and 1.0 / np.linalg.cond(M, 1) < 1e-12:
        raise SingularStructure("(I - A) is not invertible")


def _patterns(mask: np.ndarray):
    """Group individuals by missingness pattern: list of (row indices, column indices)."""
    if mask.shape[0] == 0:
        return []
    keys, inverse = np.unique(mask, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    return [(np.flatnonzero(inverse == k), np.flatnonzero(keys[k])) for k in range(keys.shape[0])]


def state_weights(tvc_type: int, times: np.ndarray, free_rates) -> np.ndarray:
    """Per-wave weights of the decomposed covariate's slope factor, shape (N, J).

    Type 1: interval slope multiplier ``gamma_{j-1}``; type 2: interval change
    ``gamma_{j-1} * (t_j - t_{j-1})``; type 3: change from baseline.  Wave 1
    has weight 0 for every type.
    """
    times = np.asarray(times, dtype=float)
    J = times.shape[-1]
    rates = curves.full_rates({"rates": np.asarray(free_rates, dtype=float)}, J - 1)
    dt = np.diff(times, axis=-1)
    if tvc_type == 1:
        inc = np.broadcast_to(rates, dt.shape)
    elif tvc_type == 2:
        inc = rates * dt
    elif tvc_type == 3:
        inc = np.cumsum(rates * dt, axis=-1)
    else:
        raise ValueError("state weights exist only for types 1-3")
    zero = np.zeros(times.shape[:-1] + (1,))
    return np.concatenate([zero, inc], axis=-1)


# ---------------------------------------------------------------------------
# single-record reticular action matrices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructuralMatrices:
    """Reticular action model matrices of one individual.

    Variables are ordered observed first, then latent.
    """

    A: np.ndarray
    S: np.ndarray
    F: np.ndarray
    M: np.ndarray
    nu: np.ndarray
    observed: tuple[str, ...]
    mask: np.ndarray = field(default=None)


@dataclass(frozen=True)
class ImpliedMoments:
    mean: np.ndarray
    cov: np.ndarray
    observed: tuple[str, ...] = ()


def _record_column(rec: IndividualRecord):
    def column(name):
        if name not in rec.values:
            raise MissingColumn(name)
        v = rec.values[name]
        return np.array([np.nan if v is None else float(v)])
    return column


def build_structural(spec: ModelSpec, params: ParameterSet | Mapping[str, float], rec: IndividualRecord,
                     wave_means: Mapping[str, float] | None = None) -> StructuralMatrices:
    """Structural matrices of one individual.

    Absent times are filled from ``wave_means`` (or the record's own
    observed times) so that cumulative change-score loadings stay defined.
    """
    if spec.family == "mixture":
        raise RoleMismatch("select a class with class_submodel before building matrices")
    cm = CompiledModel(spec, _record_column(rec), 1, (rec.id,), wave_means)
    v = params.values() if isinstance(params, ParameterSet) else dict(params)
    alpha, B, Phi = cm.latent_matrices(v)
    IB = np.eye(cm.K) - B
    _check_invertible(IB)
    m = np.linalg.solve(IB, alpha)
    lam, nu = cm.loadings(v, m)
    P, K = cm.P, cm.K
    A = np.zeros((P + K, P + K))
    A[:P, P:] = lam[0]
    A[P:, P:] = B
    S = np.zeros((P + K, P + K))
    S[:P, :P] = cm.residual_matrix(v)
    S[P:, P:] = Phi
    F = np.hstack([np.eye(P), np.zeros((P, K))])
    M = np.concatenate([np.zeros(P), alpha])
    return StructuralMatrices(A, S, F, M, nu[0], tuple(cm.observed), cm.mask[0])


def implied_moments(sm: StructuralMatrices, mask=None) -> ImpliedMoments:
    """``mu = F (I-A)^-1 M + nu`` and ``Sigma = F (I-A)^-1 S (I-A)^-T F^T`` over ``mask``.

    ``mask`` is a boolean vector over observed slots or a sequence of 0-based
    indices; by default the record's own observed entries are used.
    """
    n = sm.A.shape[0]
    IA = np.eye(n) - sm.A
    if 1.0 / np.linalg.cond(IA, 1) < 1e-12:
        raise SingularStructure("(I - A) is not invertible")
    inv = np.linalg.inv(IA)
    FI = sm.F @ inv
    mu = FI @ sm.M + sm.nu
    sigma = FI @ sm.S @ FI.T
    if mask is None:
        mask = sm.mask if sm.mask is not None else np.ones(len(mu), dtype=bool)
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(int)
    return ImpliedMoments(mu[idx], sigma[np.ix_(idx, idx)], tuple(sm.observed[i] for i in idx))


# ---------------------------------------------------------------------------
# mixtures
# ---------------------------------------------------------------------------

def class_spec(spec: ModelSpec) -> ModelSpec:
    """The within-class (sub)model of a mixture spec."""
    if spec.family != "mixture":
        return spec
    return replace(spec, family=spec.mixture.sub_family, mixture=None)


def class_submodel(spec: ModelSpec, g: int, params: ParameterSet):
    """Class ``g`` (1-based) submodel and its parameter slice without prefix."""
    if spec.family != "mixture":
        raise RoleMismatch("class_submodel needs a mixture spec")
    if not 1 <= int(g) <= spec.mixture.G:
        raise ClassIndexOutOfRange(f"class {g} outside 1..{spec.mixture.G}")
    return class_spec(spec), params.slice(f"c{int(g)}.")


def class_log_probabilities(values: Mapping[str, float], X_class, G: int, class_tics: Sequence[str] = ()):
    """Log class probabilities; shape (G,) without covariates or (N, G) with them."""
    logits = []
    if X_class is None or len(class_tics) == 0:
        logits = np.zeros(G)
        for g in range(2, G + 1):
            logits[g - 1] = values.get(f"c{g}.logit.0", 0.0)
        if X_class is not None:
            logits = np.broadcast_to(logits, (np.asarray(X_class).shape[0], G)).copy()
    else:
        X = np.atleast_2d(np.asarray(X_class, dtype=float))
        logits = np.zeros((X.shape[0], G))
        for g in range(2, G + 1):
            beta = np.array([values.get(f"c{g}.logit.{x}", 0.0) for x in class_tics])
            logits[:, g - 1] = values.get(f"c{g}.logit.0", 0.0) + X @ beta
    return logits - logsumexp(logits, axis=-1, keepdims=True)


def class_probabilities(params, X_class=None, G: int | None = None, class_tics: Sequence[str] = ()):
    """Multinomial-logistic class probabilities with class 1 as reference.

    ``params`` may be a ParameterSet or mapping holding ``c{g}.logit.0`` and,
    with covariates, ``c{g}.logit.<tic>``.
    """
    v = params.values() if isinstance(params, ParameterSet) else dict(params)
    if G is None:
        gs = [int(n.split(".")[0][1:]) for n in v if ".logit." in n]
        G = max(gs) if gs else 1
    if G < 2:
        raise ValueError("a mixture needs G >= 2 classes")
    if X_class is not None and not class_tics:
        X = np.atleast_2d(np.asarray(X_class, dtype=float))
        names = sorted({n.split(".logit.")[1] for n in v if ".logit." in n} - {"0"})
        if X.shape[1] and len(names) != X.shape[1]:
            raise RoleMismatch("class covariates given without matching logit coefficients")
        class_tics = names
    return np.exp(class_log_probabilities(v, X_class, G, class_tics))


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ModelSpec) -> dict:
    def proc(p):
        return {"name": p.name, "records": list(p.records), "kind": p.form.kind,
                "intrinsic": p.form.intrinsic, "model": p.model, "t_var": p.t_var}

    out = {"family": spec.family, "processes": [proc(p) for p in spec.processes],
           "tics": list(spec.tics), "outcomes": list(spec.outcomes)}
    if spec.tvc is not None:
        out["tvc"] = {"variable": spec.tvc.variable, "type": spec.tvc.type, "base_model": spec.tvc.base_model}
    if spec.mediation is not None:
        m = spec.mediation
        out["mediation"] = {"x": m.x, "m": m.m, "y": m.y, "x_longitudinal": m.x_longitudinal,
                            "kind": m.kind, "paths": list(m.paths)}
    if spec.mixture is not None:
        mx = spec.mixture
        out["mixture"] = {"G": mx.G, "class_tics": list(mx.class_tics), "sub_family": mx.sub_family,
                          "tie": list(mx.tie)}
    return out


def spec_from_dict(d: Mapping) -> ModelSpec:
    procs = tuple(
        ProcessSpec(p["name"], tuple(p["records"]), FunctionalForm(p["kind"], p["intrinsic"]), p["model"], p["t_var"])
        for p in d["processes"]
    )
    tvc = TVCSpec(**d["tvc"]) if d.get("tvc") else None
    med = None
    if d.get("mediation"):
        m = dict(d["mediation"])
        m["paths"] = tuple(m["paths"])
        med = MediationSpec(**m)
    mix = None
    if d.get("mixture"):
        mx = dict(d["mixture"])
        mix = MixtureSpec(int(mx["G"]), tuple(mx["class_tics"]), mx["sub_family"], tuple(mx.get("tie", ())))
    return ModelSpec(d["family"], procs, tuple(d.get("tics", ())), tvc, med, mix, tuple(d.get("outcomes", ())))


def structure_only(spec: ModelSpec) -> CompiledModel:
    """A one-row compiled model at nominal times, for parameter-only computations."""
    spec = class_spec(spec)
    times = {c: float(k) for p in spec.processes for c, k in zip(p.time_columns, p.records)}

    def column(name):
        return np.array([times.get(name, 0.0)])

    return CompiledModel(spec, column, 1)
