"""Scenario files: TOML (or JSON) documents describing a ScenarioConfig.

Layout::

    version = 1
    [meta]            name, description
    [factorization]   kind = "levis" | "alternative" | "np-beta"
    [coefficients.<model>]   term = value; "sigma" (mu) / "alpha" (lambda1)
    [lc]              synthetic L_c law
    [run]             n, replicates, seeds, truth, clipping, quadrature, ...
    [suite]           estimators = [...]
    [fit.<model>]     optional fit term lists overriding the defaults

A term missing from a coefficient table is simply omitted.
"""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .dgp import FACTORIZATIONS, MODEL_FAMILY, NP_BETA, LcGenerator, ModelCoefficients, ScenarioCoefficients
from .errors import ConfigError
from .harness import ScenarioConfig
from .model_fit import GlmFamily, as_terms
from .nuisance import LambdaSpec, NuisanceSpecs

FORMAT_VERSION = 1
TOP_KEYS = {"version", "meta", "factorization", "coefficients", "lc", "run", "suite", "fit"}
DISPERSION_KEY = {"mu": "sigma", "lambda1": "alpha"}
RUN_KEYS = {
    "n", "replicates", "master_seed", "workers", "truth", "truth_n_mc", "truth_repeats",
    "truth_value", "pi_clip", "crossfit_folds", "n_imputations", "laguerre_nodes",
    "hermite_nodes", "y_nodes", "lp_method", "mc_draws", "gamma_shape",
}
FIT_MODELS = {"eta", "mu", "pi", "lambda1", "lambda2"}
FIT_KEYS = {"terms", "family", "known"}


def _fail(where: str, msg: str, cls=ConfigError):
    raise cls(f"{where}: {msg}")


def _only(where, table, allowed):
    if not isinstance(table, Mapping):
        _fail(where, "expected a table")
    extra = sorted(set(table) - set(allowed))
    if extra:
        _fail(where, f"unknown key(s) {extra}; allowed: {sorted(allowed)}")


def load_document(path: "str | Path") -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err}") from None
    try:
        if path.suffix.lower() == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, UnicodeDecodeError) as err:
        raise ConfigError(f"{path}: {err}") from None


def parse_scenario_file(path: "str | Path") -> ScenarioConfig:
    """Read and fully validate a scenario file."""
    return parse_scenario(load_document(path), source=str(path))


def _coefficients(doc, kind, source):
    if kind == NP_BETA:
        if doc.get("coefficients"):
            _fail(f"{source} [coefficients]", "the np-beta design has fixed coefficients")
        return ScenarioCoefficients(NP_BETA, name=doc.get("meta", {}).get("name", ""))
    coefs = doc.get("coefficients")
    if not isinstance(coefs, Mapping):
        _fail(source, "missing [coefficients] section")
    _only(f"{source} [coefficients]", coefs, MODEL_FAMILY)
    models = {}
    for model, table in coefs.items():
        where = f"{source} [coefficients.{model}]"
        if not isinstance(table, Mapping):
            _fail(where, "expected a table of term = value")
        table = dict(table)
        disp_key = DISPERSION_KEY.get(model)
        disp = table.pop(disp_key, None) if disp_key else None
        if disp_key and disp is None:
            _fail(where, f"missing {disp_key!r}")
        for k, v in table.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                _fail(f"{where} {k!r}", "coefficient must be a number")
        try:
            as_terms(table)
            models[model] = ModelCoefficients.from_mapping(table, MODEL_FAMILY[model], disp)
        except ConfigError as err:
            _fail(where, str(err))
    lc_names = tuple(doc.get("lc", {}).get("names", ("L1", "L2", "L3")))
    try:
        return ScenarioCoefficients(kind, models, lc_names, doc.get("meta", {}).get("name", ""))
    except ConfigError as err:
        _fail(f"{source} [coefficients]", str(err), type(err))


def _fit_specs(doc, coef, gamma_shape, source):
    fit = doc.get("fit")
    if not fit:
        return None
    _only(f"{source} [fit]", fit, FIT_MODELS | {"mu_kind"})
    from .dgp import default_nuisance_specs
    base = default_nuisance_specs(coef, gamma_shape)
    kw = dict(pi=base.pi, eta=base.eta, mu=base.mu, eta_known=base.eta_known, mu_kind=base.mu_kind,
              gamma_shape=gamma_shape)
    lam = list(base.lam)
    if "mu_kind" in fit:
        kw["mu_kind"] = fit["mu_kind"]
    for model in ("eta", "mu", "pi"):
        if model in fit:
            _only(f"{source} [fit.{model}]", fit[model], FIT_KEYS - {"family"})
            if "known" in fit[model]:
                if model != "eta":
                    _fail(f"{source} [fit.{model}]", "only eta may be fixed at a known value")
                kw["eta_known"], kw["eta"] = float(fit[model]["known"]), None
            if "terms" in fit[model]:
                kw[model] = tuple(fit[model]["terms"])
                if model == "eta":
                    kw["eta_known"] = None
    for j, model in enumerate(("lambda1", "lambda2")):
        if model in fit:
            _only(f"{source} [fit.{model}]", fit[model], FIT_KEYS - {"known"})
            if j >= len(lam):
                _fail(f"{source} [fit.{model}]", "no such partially missing confounder")
            fam = fit[model].get("family", lam[j].family.value)
            terms = fit[model].get("terms", lam[j].terms)
            lam[j] = LambdaSpec(lam[j].name, GlmFamily(fam), tuple(terms))
    try:
        specs = NuisanceSpecs(lam=tuple(lam), **kw)
        specs.validate(coef.lc_names, coef.lp_names)
    except (ConfigError, ValueError) as err:
        _fail(f"{source} [fit]", str(err))
    return specs


def parse_scenario(doc: Mapping[str, Any], source: str = "<scenario>") -> ScenarioConfig:
    _only(source, doc, TOP_KEYS)
    version = doc.get("version", FORMAT_VERSION)
    if version != FORMAT_VERSION:
        _fail(f"{source} version", f"unsupported format version {version!r}")
    meta = doc.get("meta", {})
    _only(f"{source} [meta]", meta, {"name", "description"})
    fac = doc.get("factorization")
    if not isinstance(fac, Mapping) or "kind" not in fac:
        _fail(source, "missing [factorization] kind")
    _only(f"{source} [factorization]", fac, {"kind"})
    kind = fac["kind"]
    if kind not in FACTORIZATIONS:
        _fail(f"{source} [factorization] kind", f"must be one of {list(FACTORIZATIONS)}")

    coef = _coefficients(doc, kind, source)

    lc_tab = dict(doc.get("lc", {}))
    _only(f"{source} [lc]", lc_tab, {f.name for f in fields(LcGenerator)} | {"names"})
    lc_tab.pop("names", None)
    try:
        lc = LcGenerator(**lc_tab)
    except (ConfigError, TypeError) as err:
        _fail(f"{source} [lc]", str(err))

    run = dict(doc.get("run", {}))
    _only(f"{source} [run]", run, RUN_KEYS)
    kw: dict[str, Any] = {}
    for k in ("n", "replicates", "master_seed", "workers", "truth_n_mc", "truth_repeats",
              "crossfit_folds", "n_imputations", "laguerre_nodes", "hermite_nodes", "y_nodes", "mc_draws"):
        if k in run:
            if isinstance(run[k], bool) or not isinstance(run[k], int):
                _fail(f"{source} [run] {k}", "must be an integer")
            kw[k] = run[k]
    if "truth" in run:
        kw["truth_method"] = run["truth"]
    if "truth_value" in run:
        kw["truth_value"] = float(run["truth_value"])
    if "pi_clip" in run:
        clip = run["pi_clip"]
        if clip == "off":
            kw["pi_clip"] = None
        elif isinstance(clip, list) and len(clip) == 2:
            kw["pi_clip"] = (float(clip[0]), float(clip[1]))
        else:
            _fail(f"{source} [run] pi_clip", 'must be [lo, hi] or "off"')
    if "lp_method" in run:
        kw["lp_method"] = run["lp_method"]
    gamma_shape = run.get("gamma_shape", "moment")
    kw["gamma_shape"] = gamma_shape

    suite = doc.get("suite", {})
    _only(f"{source} [suite]", suite, {"estimators"})
    if "estimators" in suite:
        kw["suite"] = tuple(suite["estimators"])

    kw["fit_specs"] = _fit_specs(doc, coef, gamma_shape, source)
    try:
        return ScenarioConfig(coefficients=coef, lc=lc, name=meta.get("name", ""),
                              description=meta.get("description", ""), **kw)
    except (ConfigError, TypeError) as err:
        _fail(source, str(err))


def to_document(config: ScenarioConfig) -> dict:
    """Inverse of :func:`parse_scenario` (defaults are written out explicitly)."""
    coef = config.coefficients
    doc: dict[str, Any] = {"version": FORMAT_VERSION}
    doc["meta"] = {"name": config.name, "description": config.description}
    doc["factorization"] = {"kind": coef.factorization}
    if coef.factorization != NP_BETA:
        tables = {}
        for model, m in coef.models.items():
            t = m.as_mapping()
            if model in DISPERSION_KEY:
                t[DISPERSION_KEY[model]] = float(m.dispersion)
            tables[model] = t
        doc["coefficients"] = tables
    lc = asdict(config.lc)
    if coef.factorization != NP_BETA:
        lc["names"] = list(coef.lc_names)
    doc["lc"] = lc
    run = {
        "n": config.n, "replicates": config.replicates, "master_seed": config.master_seed,
        "workers": config.workers, "truth": config.truth_method, "truth_n_mc": config.truth_n_mc,
        "truth_repeats": config.truth_repeats,
        "pi_clip": "off" if config.pi_clip is None else list(config.pi_clip),
        "crossfit_folds": config.crossfit_folds, "n_imputations": config.n_imputations,
        "laguerre_nodes": config.laguerre_nodes, "hermite_nodes": config.hermite_nodes,
        "lp_method": config.lp_method, "mc_draws": config.mc_draws, "gamma_shape": config.gamma_shape,
    }
    if config.truth_value is not None:
        run["truth_value"] = config.truth_value
    if config.y_nodes is not None:
        run["y_nodes"] = config.y_nodes
    doc["run"] = run
    doc["suite"] = {"estimators": list(config.suite)}
    if config.fit_specs is not None:
        s = config.fit_specs
        fit: dict[str, Any] = {"mu_kind": s.mu_kind}
        fit["eta"] = {"known": s.eta_known} if s.eta_known is not None else {"terms": [t.name for t in s.eta]}
        if s.mu is not None:
            fit["mu"] = {"terms": [t.name for t in s.mu]}
        fit["pi"] = {"terms": [t.name for t in s.pi]}
        for j, l in enumerate(s.lam):
            fit[f"lambda{j + 1}"] = {"family": l.family.value, "terms": [t.name for t in l.terms]}
        doc["fit"] = fit
    return doc


def serialize(config: ScenarioConfig, fmt: str = "toml") -> str:
    doc = to_document(config)
    if fmt == "json":
        return json.dumps(doc, indent=2)
    return tomli_w.dumps(doc)


def shipped_scenarios() -> dict[str, Path]:
    """Scenario files bundled with the package, keyed by stem."""
    root = Path(__file__).parent / "scenarios"
    return {p.stem: p for p in sorted(root.glob("*.toml"))}


def load_shipped(name: str) -> ScenarioConfig:
    files = shipped_scenarios()
    if name not in files:
        raise ConfigError(f"no shipped scenario {name!r}; available: {sorted(files)}")
    return parse_scenario_file(files[name])
