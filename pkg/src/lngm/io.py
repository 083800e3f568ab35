"""Data ingestion, model configuration files, and run persistence.

Data files are UTF-8 CSV with a header row.  The response column may
contain missing values (empty, ``NA`` or ``nan``), which are excluded from
the likelihood but kept for prediction.  Model configuration is JSON; see
:func:`build_model_from_config` for the schema.  Every run persists its
resolved configuration, seed and library versions so reruns are
reproducible bit for bit.
"""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy
import scipy.sparse as sp

from . import __version__
from .errors import ModelError
from .models import (GAUSSIAN, HyperSetting, Likelihood, ModelSpec, build_ar1,
                     build_ar_p, build_custom, build_icar, build_iid, build_rw1,
                     build_rw2, build_sar, fixed, gamma_prior, observation_matrix,
                     uniform_corr_prior)
from .noise import NoiseFamily

_NA_TOKENS = {"", "na", "nan", "null"}


@dataclass(frozen=True)
class ObservationBundle:
    """Validated data: response (NaN where missing) plus named columns."""

    y: np.ndarray
    columns: dict[str, np.ndarray]
    source: str = ""

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def observed_index(self) -> np.ndarray:
        return np.flatnonzero(np.isfinite(self.y))


def ingest_data(path, required_columns=("y",)) -> ObservationBundle:
    """Read a CSV data file, validating the declared columns.

    Raises ``ModelError`` listing the offending columns or rows.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ModelError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing = [c for c in required_columns if c not in header]
        if missing:
            raise ModelError(f"{path}: missing required column(s) {missing}; "
                             f"found {header}")
        raw = {h: [] for h in header}
        bad_rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                bad_rows.append(lineno)
                continue
            for h, cell in zip(header, row):
                raw[h].append(cell.strip())
        if bad_rows:
            raise ModelError(f"{path}: row(s) {bad_rows} have the wrong number "
                             f"of fields (expected {len(header)})")

    columns: dict[str, np.ndarray] = {}
    for name, cells in raw.items():
        vals = np.empty(len(cells))
        bad = []
        for i, cell in enumerate(cells):
            if cell.lower() in _NA_TOKENS:
                if name == "y":
                    vals[i] = np.nan
                else:
                    bad.append(i + 2)
            else:
                try:
                    vals[i] = float(cell)
                except ValueError:
                    bad.append(i + 2)
        if bad:
            raise ModelError(f"{path}: column {name!r} has non-numeric or "
                             f"missing entries at row(s) {bad[:20]}")
        columns[name] = vals
    y = columns.pop("y")
    return ObservationBundle(y=y, columns=columns, source=str(path))


def emit_data(bundle: ObservationBundle, path) -> None:
    """Write a bundle back to CSV (inverse of :func:`ingest_data`)."""
    path = Path(path)
    names = ["y"] + sorted(bundle.columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(bundle.n):
            row = ["" if not np.isfinite(bundle.y[i]) else repr(float(bundle.y[i]))]
            row += [repr(float(bundle.columns[c][i])) for c in names[1:]]
            writer.writerow(row)


def read_edge_list(path) -> list[tuple[int, int]]:
    """Edge-list CSV with integer columns ``from`` and ``to`` (0-based)."""
    path = Path(path)
    edges = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if "from" not in header or "to" not in header:
            raise ModelError(f"{path}: edge list needs 'from' and 'to' columns")
        ia, ib = header.index("from"), header.index("to")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                edges.append((int(row[ia]), int(row[ib])))
            except (ValueError, IndexError):
                raise ModelError(f"{path}: bad edge at row {lineno}") from None
    if not edges:
        raise ModelError(f"{path}: no edges")
    return edges


def adjacency_from_edges(edges, n: int | None = None) -> np.ndarray:
    n_nodes = n if n is not None else max(max(e) for e in edges) + 1
    adj = np.zeros((n_nodes, n_nodes))
    for i, j in edges:
        adj[i, j] = adj[j, i] = 1.0
    return adj


# ---------------------------------------------------------------------------
# Model configuration JSON
# ---------------------------------------------------------------------------

_COMPONENT_TYPES = ("ar1", "rw1", "rw2", "iid", "sar", "icar", "arp", "custom")


def load_model_config(path) -> dict:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    validate_model_config(cfg)
    cfg["_base_dir"] = str(path.parent)
    return cfg


def validate_model_config(cfg: dict) -> None:
    """Schema validation with error messages naming the offending field."""
    if not isinstance(cfg, dict):
        raise ModelError("model config: top level must be an object")
    comps = cfg.get("components")
    if not isinstance(comps, list) or not comps:
        raise ModelError("model config: 'components' must be a non-empty list")
    for k, c in enumerate(comps):
        where = f"components[{k}]"
        if not isinstance(c, dict):
            raise ModelError(f"model config: {where} must be an object")
        ctype = c.get("type")
        if ctype not in _COMPONENT_TYPES:
            raise ModelError(
                f"model config: {where}.type {ctype!r} not one of {_COMPONENT_TYPES}")
        if ctype in ("ar1", "rw1", "rw2", "iid", "arp") and "n" not in c:
            raise ModelError(f"model config: {where} needs 'n'")
        if ctype in ("ar1", "sar") and "rho" not in c:
            raise ModelError(f"model config: {where} needs 'rho'")
        if ctype in ("sar", "icar") and "edges" not in c:
            raise ModelError(f"model config: {where} needs 'edges' (CSV path)")
        if ctype == "arp" and "autocorrs" not in c:
            raise ModelError(f"model config: {where} needs 'autocorrs'")
        if ctype == "custom" and ("d_matrix" not in c or "h" not in c):
            raise ModelError(f"model config: {where} needs 'd_matrix' and 'h'")
        noise = c.get("noise", {})
        if noise and noise.get("kind", "nig") not in ("nig", "t-student", "gal"):
            raise ModelError(f"model config: {where}.noise.kind invalid")
    lik = cfg.get("likelihood", {"kind": GAUSSIAN})
    if lik.get("kind", GAUSSIAN) not in ("gaussian", "poisson", "bernoulli"):
        raise ModelError("model config: likelihood.kind invalid")
    fe = cfg.get("fixed_effects")
    if fe is not None and not isinstance(fe.get("columns", []), list):
        raise ModelError("model config: fixed_effects.columns must be a list")


def _hyper_from_config(value, kind="positive", default=1.0) -> HyperSetting:
    if value is None:
        return fixed(default, kind)
    if isinstance(value, (int, float)):
        return fixed(float(value), kind)
    if isinstance(value, dict):
        prior = value.get("prior")
        if prior == "gamma":
            return gamma_prior(float(value["shape"]), float(value["rate"]),
                               value.get("init"))
        if prior == "uniform" and kind == "corr":
            return uniform_corr_prior(float(value.get("init", 0.0)))
        raise ModelError(f"model config: unsupported prior spec {value!r}")
    raise ModelError(f"model config: bad hyperparameter spec {value!r}")


def build_model_from_config(cfg: dict, data: ObservationBundle) -> ModelSpec:
    """Construct a :class:`ModelSpec` from a validated config and data."""
    base = Path(cfg.get("_base_dir", "."))
    components = []
    obs_maps = []
    for c in cfg["components"]:
        noise_cfg = c.get("noise", {})
        noise = NoiseFamily(kind=noise_cfg.get("kind", "nig"),
                            eta_prior_rate=float(noise_cfg.get("alpha_eta", 5.0)))
        kw = dict(noise=noise,
                  precision=_hyper_from_config(c.get("precision"), "positive", 1.0),
                  sum_to_zero=bool(c.get("sum_to_zero", False)))
        if "name" in c:
            kw["name"] = c["name"]
        ctype = c["type"]
        if ctype == "ar1":
            rho = _hyper_from_config(c["rho"], "corr", 0.0)
            comp = build_ar1(int(c["n"]), rho.value, rho_setting=rho, **kw)
        elif ctype == "rw1":
            comp = build_rw1(int(c["n"]), **kw)
        elif ctype == "rw2":
            comp = build_rw2(int(c["n"]), **kw)
        elif ctype == "iid":
            comp = build_iid(int(c["n"]), **kw)
        elif ctype == "arp":
            comp = build_ar_p(int(c["n"]), c["autocorrs"], **kw)
        elif ctype == "sar":
            edges = read_edge_list(base / c["edges"])
            rho = _hyper_from_config(c["rho"], "corr", 0.0)
            comp = build_sar(adjacency_from_edges(edges, c.get("n")), rho.value,
                             rho_setting=rho, **kw)
        elif ctype == "icar":
            edges = read_edge_list(base / c["edges"])
            comp = build_icar(edges, n=c.get("n"), **kw)
        else:
            d = np.asarray(c["d_matrix"], dtype=float)
            h = c["h"]
            h = np.full(d.shape[0], float(h)) if np.ndim(h) == 0 else np.asarray(h)
            comp = build_custom(d, h, **kw)
        components.append(comp)
        obs_maps.append(_obs_map_from_config(c.get("observation"), data, comp))

    lik_cfg = cfg.get("likelihood", {"kind": GAUSSIAN})
    likelihood = Likelihood(
        kind=lik_cfg.get("kind", GAUSSIAN),
        precision=_hyper_from_config(lik_cfg.get("precision"), "positive", 1.0))

    fe_cfg = cfg.get("fixed_effects")
    fe = None
    if fe_cfg:
        cols = []
        if fe_cfg.get("intercept", False):
            cols.append(np.ones(data.n))
        for name in fe_cfg.get("columns", []):
            if name not in data.columns:
                raise ModelError(f"fixed_effects column {name!r} not in data "
                                 f"(have {sorted(data.columns)})")
            cols.append(data.columns[name])
        fe = np.column_stack(cols) if cols else None

    return ModelSpec(components=tuple(components), likelihood=likelihood,
                     n_data=data.n, obs_maps=tuple(obs_maps),
                     fixed_effects=fe,
                     fixed_effects_precision=float(
                         (fe_cfg or {}).get("precision", 1e-6)))


def _obs_map_from_config(obs_cfg, data: ObservationBundle, comp):
    if obs_cfg is None or obs_cfg.get("mode", "identity") == "identity":
        return None
    mode = obs_cfg["mode"]
    if mode != "index":
        raise ModelError(f"observation mode {mode!r} unsupported")
    col = obs_cfg["column"]
    if col not in data.columns:
        raise ModelError(f"observation column {col!r} not in data")
    index = data.columns[col].astype(int)
    weight = None
    if "weight_column" in obs_cfg:
        wcol = obs_cfg["weight_column"]
        if wcol not in data.columns:
            raise ModelError(f"observation weight column {wcol!r} not in data")
        weight = data.columns[wcol]
    return observation_matrix(data.n, comp.n_latent, index, weight)


# ---------------------------------------------------------------------------
# Run persistence
# ---------------------------------------------------------------------------

def versions() -> dict:
    return {"lngm": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "python": platform.python_version()}


def write_run_dir(out_dir, config: dict, summary: dict,
                  trace_rows=None, diagnostic_rows=None) -> Path:
    """Persist a run: config.json, summary.json, trace.csv, diagnostics.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = dict(config)
    resolved["versions"] = versions()
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if trace_rows is not None:
        with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "component", "quantity", "index", "value"])
            for row in trace_rows:
                writer.writerow(row)
    if diagnostic_rows is not None:
        with open(out / "diagnostics.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["component", "index", "mean", "q05", "q25",
                             "q50", "q75", "q95", "flagged"])
            for r in diagnostic_rows:
                writer.writerow([r.component, r.index, repr(r.mean), repr(r.q05),
                                 repr(r.q25), repr(r.q50), repr(r.q75),
                                 repr(r.q95), int(r.flagged)])
    return out
