"""File-based workflow: preprocess -> fit -> postprocess -> spatial -> report.

Each command reads the artifacts of earlier stages from the run directory and
writes its own sub-directory. Nothing depends on wall-clock time or absolute
paths, so identical inputs, configuration and seed give identical bytes.

Seeds: the run seed feeds ``numpy.random.SeedSequence(seed).spawn(3)``; child
0 drives ``synth`` (child ``g`` of it seeds manifold ``g``, a further child
places the synthetic centroids), child 1 seeds the Gibbs sampler and child 2
the Moran permutations. Each child is turned into an integer with
``generate_state(1, numpy.uint64)``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict
from pathlib import Path

import jsonschema
import numpy as np
import pandas as pd
from scipy import stats

from . import pipeline, posterior, spatial
from .errors import ConfigInvalid, MissingArtifact, ZeroVariance
from .geometry import DataMatrix
from .hidalgo import NORMALISERS, HidalgoConfig, McmcTraces, hidalgo_fit
from .synthkit import KINDS, ManifoldSpec, mix_manifolds
from .geometry import mu_ratios, nearest_neighbors
from .twonn import twonn, twonn_mle

STAGE_DIRS = ("synth", "preprocess", "fit", "postprocess", "spatial", "report")

DEFAULTS = {
    "seed": 0,
    "out": "run",
    "inputs": {
        "source": None,
        "variables": {},
        "metadata": None,
        "matrix": None,
        "adjacency": None,
        "centroids": None,
    },
    "pipeline": {
        "date_range": None,
        "missing_threshold": pipeline.MISSING_THRESHOLD,
        "min_population": pipeline.MIN_POPULATION,
        "stage": "full",
        "variable_order": None,
    },
    "hidalgo": {k: v for k, v in asdict(HidalgoConfig()).items() if k != "seed"},
    "posterior": {"ci_level": 0.9, "density_points": 200},
    "spatial": {"n_perm": 999, "k": 5, "ks_covariates": []},
    "synth": {
        "specs": [
            {"kind": "isotropic_gaussian", "d_true": 2, "n": 100, "embed_D": 20},
            {"kind": "isotropic_gaussian", "d_true": 8, "n": 100, "embed_D": 20},
        ],
        "separation": 20.0,
    },
}

_num = {"type": "number"}
_path = {"type": ["string", "null"]}
CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "out": {"type": "string"},
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "source": {"enum": [None, "panel", "matrix", "synth"]},
                "variables": {"type": "object", "additionalProperties": {"type": "string"}},
                "metadata": _path,
                "matrix": _path,
                "adjacency": _path,
                "centroids": _path,
            },
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "date_range": {"oneOf": [{"type": "null"},
                                         {"type": "array", "items": {"type": "string"},
                                          "minItems": 2, "maxItems": 2}]},
                "missing_threshold": {"type": "number", "minimum": 0, "maximum": 1},
                "min_population": {"type": "number", "minimum": 0},
                "stage": {"enum": ["full", 1, 2, 3, 4, "1", "2", "3", "4"]},
                "variable_order": {"type": ["array", "null"], "items": {"type": "string"}},
            },
        },
        "hidalgo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "L": {"type": "integer", "minimum": 1},
                "alpha": {"type": "number", "exclusiveMinimum": 0},
                "a_d": {"type": "number", "exclusiveMinimum": 0},
                "b_d": {"type": "number", "exclusiveMinimum": 0},
                "zeta": _num,
                "q": {"type": "integer", "minimum": 1},
                "nsim": {"type": "integer", "minimum": 1},
                "burnin": {"type": "integer", "minimum": 0},
                "d_max": {"type": ["number", "null"]},
                "normaliser": {"enum": list(NORMALISERS)},
            },
        },
        "posterior": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "ci_level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "density_points": {"type": "integer", "minimum": 2},
            },
        },
        "spatial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_perm": {"type": "integer", "minimum": 1},
                "k": {"type": "integer", "minimum": 1},
                "ks_covariates": {"type": "array", "items": {"type": "string"}},
            },
        },
        "synth": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "separation": _num,
                "specs": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["d_true", "n", "embed_D"],
                        "properties": {
                            "kind": {"enum": list(KINDS)},
                            "d_true": {"type": "integer", "minimum": 1},
                            "n": {"type": "integer", "minimum": 3},
                            "embed_D": {"type": "integer", "minimum": 1},
                            "offset": _num,
                            "seed": {"type": "integer", "minimum": 0},
                        },
                    },
                },
            },
        },
    },
}

_summary = {
    "type": "object",
    "required": ["mean", "sd", "median", "ci_low", "ci_high"],
    "properties": {k: {"type": "number"} for k in ("mean", "sd", "median", "ci_low", "ci_high")},
}
REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "manifold-id run report",
    "type": "object",
    "required": ["source", "stage", "n", "D", "K", "vi_score", "ci_level", "observations",
                 "clusters", "moran", "trajectories"],
    "additionalProperties": False,
    "properties": {
        "source": {"enum": ["panel", "matrix", "synth"]},
        "stage": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "D": {"type": "integer", "minimum": 1},
        "K": {"type": "integer", "minimum": 1},
        "vi_score": {"type": "number"},
        "ci_level": {"type": "number"},
        "twonn": {"type": "object"},
        "observations": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "median_id", "cluster"],
                "additionalProperties": False,
                "properties": {"id": {"type": "string"}, "median_id": {"type": "number"},
                               "cluster": {"type": "integer", "minimum": 1}},
            },
        },
        "clusters": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["cluster", "size", "members", "pooled", "component", "density"],
                "additionalProperties": False,
                "properties": {
                    "cluster": {"type": "integer", "minimum": 1},
                    "size": {"type": "integer", "minimum": 1},
                    "members": {"type": "array", "items": {"type": "string"}},
                    "pooled": _summary,
                    "component": _summary,
                    "density": {
                        "type": "object",
                        "required": ["x", "density"],
                        "properties": {"x": {"type": "array", "items": {"type": "number"}},
                                       "density": {"type": "array", "items": {"type": ["number", "null"]}}},
                    },
                },
            },
        },
        "moran": {
            "oneOf": [
                {"type": "null"},
                {"type": "object", "required": ["I", "p_value", "n_perm", "weights"]},
            ]
        },
        "ks": {"type": "array"},
        "trajectories": {
            "type": "object",
            "required": ["file", "variables", "T"],
            "properties": {"file": {"type": "string"},
                           "variables": {"type": "array", "items": {"type": "string"}},
                           "T": {"type": "integer", "minimum": 1}},
        },
    },
}


# ---------------------------------------------------------------- config

def _merge(base, over, where="config"):
    out = copy.deepcopy(base)
    for key, val in over.items():
        if isinstance(out.get(key), dict) and isinstance(val, dict) and key != "variables":
            out[key] = _merge(out[key], val, f"{where}.{key}")
        else:
            out[key] = val
    return out


def load_config(path=None, overrides=None) -> dict:
    """Defaults <- JSON file <- overrides (dotted keys such as ``"hidalgo.nsim"``).

    Relative input paths are resolved against the config file's directory,
    the output directory against the working directory.
    """
    raw = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigInvalid(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"{path}:{exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict):
            raise ConfigInvalid("config must be a JSON object")
        base = path.resolve().parent
    cfg = _merge(DEFAULTS, raw)
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        node = cfg
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = val
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "config"
        raise ConfigInvalid(f"{where}: {exc.message}") from None
    _hidalgo_config(cfg, 0).validate()
    inputs = cfg["inputs"]
    for key in ("metadata", "matrix", "adjacency", "centroids"):
        if inputs[key] is not None:
            inputs[key] = str((base / inputs[key]).resolve())
    inputs["variables"] = {k: str((base / v).resolve()) for k, v in inputs["variables"].items()}
    if inputs["source"] is None:
        inputs["source"] = "panel" if inputs["variables"] else "matrix" if inputs["matrix"] else "synth"
    if inputs["source"] == "panel" and not inputs["variables"]:
        raise ConfigInvalid("inputs.variables is empty")
    if inputs["source"] == "matrix" and not inputs["matrix"]:
        raise ConfigInvalid("inputs.matrix is not set")
    for key in ("metadata", "matrix", "adjacency", "centroids"):
        if inputs[key] is not None and not Path(inputs[key]).is_file():
            raise ConfigInvalid(f"inputs.{key}: file not found: {inputs[key]}")
    for name, p in inputs["variables"].items():
        if not Path(p).is_file():
            raise ConfigInvalid(f"inputs.variables.{name}: file not found: {p}")
    stage = cfg["pipeline"]["stage"]
    cfg["pipeline"]["stage"] = "full" if stage == "full" else int(stage)
    return cfg


def derived_seeds(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(3)
    as_int = [int(c.generate_state(1, np.uint64)[0]) for c in children]
    return {"synth": as_int[0], "fit": as_int[1], "spatial": as_int[2], "_synth_seq": children[0]}


def _hidalgo_config(cfg, seed) -> HidalgoConfig:
    return HidalgoConfig(seed=seed, **cfg["hidalgo"])


# ---------------------------------------------------------------- helpers

def _dump_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _read_json(path, stage):
    path = Path(path)
    if not path.is_file():
        raise MissingArtifact(stage, path)
    return json.loads(path.read_text())


def _require(path, stage) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(stage, path)
    return path


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _summary_dict(s: posterior.Summary) -> dict:
    return {"mean": s.mean, "sd": s.sd, "median": s.median, "ci_low": s.ci_low, "ci_high": s.ci_high}


# ---------------------------------------------------------------- commands

def cmd_synth(cfg) -> Path:
    """Sample the configured manifolds; writes matrix, truth labels and centroids."""
    out = Path(cfg["out"]) / "synth"
    seq = derived_seeds(cfg["seed"])["_synth_seq"]
    entries = cfg["synth"]["specs"]
    kids = seq.spawn(len(entries) + 1)
    specs = []
    for g, entry in enumerate(entries):
        entry = dict(entry)
        entry.setdefault("seed", int(kids[g].generate_state(1, np.uint64)[0]))
        try:
            specs.append(ManifoldSpec(**entry))
        except ValueError as exc:
            raise ConfigInvalid(f"synth.specs[{g}]: {exc}") from None
    X, truth = mix_manifolds(specs, cfg["synth"]["separation"])
    width = len(str(X.n))
    ids = tuple(f"s{i + 1:0{width}d}" for i in range(X.n))
    data = DataMatrix(X.values, ids)
    pipeline.write_matrix(data, out / "matrix.csv")
    pd.DataFrame({"id": ids, "label": truth}).to_csv(out / "truth.csv", index=False, lineterminator="\n")
    # groups sit around separate points on the equator, 40 degrees apart
    rng = np.random.default_rng(kids[-1])
    lon0 = -20.0 * (len(specs) - 1) + 40.0 * (truth - 1)
    lat = np.clip(rng.normal(0.0, 4.0, X.n), -89.0, 89.0)
    lon = lon0 + rng.normal(0.0, 4.0, X.n)
    pd.DataFrame({"id": ids, "lat": lat, "lon": lon}).to_csv(
        out / "centroids.csv", index=False, float_format="%.17g", lineterminator="\n")
    _dump_json(out / "synth.json", {"specs": [asdict(s) for s in specs],
                                    "separation": cfg["synth"]["separation"]})
    return out


def _matrix_source(cfg):
    src = cfg["inputs"]["source"]
    if src == "synth":
        return _require(Path(cfg["out"]) / "synth" / "matrix.csv", "synth")
    return Path(cfg["inputs"]["matrix"])


def cmd_preprocess(cfg) -> Path:
    """Build the analysis matrix; panel sources also get processed panel CSVs."""
    out = Path(cfg["out"]) / "preprocess"
    out.mkdir(parents=True, exist_ok=True)
    source = cfg["inputs"]["source"]
    pcfg = cfg["pipeline"]
    if source != "panel":
        path = _matrix_source(cfg)
        data = pipeline.read_matrix(path)
        pipeline.write_matrix(data, out / "matrix.csv")
        _dump_json(out / "provenance.json", {
            "source": source, "stage": "full", "input": {"file": path.name, "sha256": _sha256(path)},
            "steps": [{"step": "read_matrix"}], "dropped": [], "n": data.n, "D": data.D,
        })
        return out
    inputs = cfg["inputs"]
    panel = pipeline.load_panel(inputs["variables"], pcfg["date_range"], inputs["metadata"])
    processed = pipeline.preprocess(panel, pcfg["stage"], pcfg["missing_threshold"],
                                    pcfg["min_population"])
    order = pcfg["variable_order"] or list(inputs["variables"])
    data = pipeline.assemble_matrix(processed, order)
    pipeline.write_panel(processed, out, order)
    pipeline.write_matrix(data, out / "matrix.csv")
    processed.countries.to_csv(out / "countries.csv", float_format="%.17g", lineterminator="\n")
    files = {name: {"file": Path(p).name, "sha256": _sha256(p)} for name, p in inputs["variables"].items()}
    if inputs["metadata"]:
        files["metadata"] = {"file": Path(inputs["metadata"]).name, "sha256": _sha256(inputs["metadata"])}
    _dump_json(out / "provenance.json", {
        "source": "panel",
        "stage": str(pcfg["stage"]),
        "input": files,
        "steps": list(processed.provenance),
        "dropped": list(processed.dropped),
        "variable_order": order,
        "dates": [processed.dates[0].isoformat(), processed.dates[-1].isoformat()],
        "n": data.n,
        "D": data.D,
        "column_index": "column = v * T + t (0-based variable v, day t)",
    })
    return out


def cmd_fit(cfg) -> Path:
    """Run the sampler on the preprocessed matrix; writes the three trace CSVs."""
    out = Path(cfg["out"]) / "fit"
    data = pipeline.read_matrix(_require(Path(cfg["out"]) / "preprocess" / "matrix.csv", "preprocess"))
    seeds = derived_seeds(cfg["seed"])
    traces = hidalgo_fit(data, _hidalgo_config(cfg, seeds["fit"]))
    traces.save(out)
    est = twonn(data)
    _dump_json(out / "run.json", {
        "seed": cfg["seed"], "derived_seed": seeds["fit"], "n": data.n, "D": data.D,
        "twonn": {"d_hat": est.d_hat, "ci_low": est.ci_low, "ci_high": est.ci_high,
                  "ci_level": est.ci_level},
    })
    return out


def _density(values, points):
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        return np.array([lo]), np.array([np.nan])
    pad = 0.1 * (hi - lo)
    grid = np.linspace(lo - pad, hi + pad, points)
    return grid, stats.gaussian_kde(v)(grid)


def cmd_postprocess(cfg) -> Path:
    """Co-clustering, VI partition, per-observation medians, cluster summaries, densities."""
    run = Path(cfg["out"])
    out = run / "postprocess"
    out.mkdir(parents=True, exist_ok=True)
    fit_dir = run / "fit"
    for name in ("labels.csv", "weights.csv", "ids.csv", "config.json"):
        _require(fit_dir / name, "fit")
    traces = McmcTraces.load(fit_dir)
    ids = list(traces.row_ids)
    pcm = posterior.co_clustering(traces)
    part = posterior.vi_partition_from_traces(traces, pcm)
    chains = posterior.remap_observation_chains(traces)
    ci = cfg["posterior"]["ci_level"]
    summaries = posterior.cluster_id_summary(part, chains, traces, ci)

    pd.DataFrame(pcm, index=pd.Index(ids, name="id"), columns=ids).to_csv(
        out / "pcm.csv", float_format="%.17g", lineterminator="\n")
    pd.DataFrame({"id": ids, "median_id": chains.medians, "cluster": part.labels}).to_csv(
        out / "medians.csv", index=False, float_format="%.17g", lineterminator="\n")
    _dump_json(out / "partition.json", {
        "K": part.K, "vi_score": part.vi_score,
        "sizes": [int(np.sum(part.labels == k)) for k in range(1, part.K + 1)],
        "labels": {i: int(c) for i, c in zip(ids, part.labels)},
        "ordering": "clusters numbered by decreasing size, ties by first member",
    })
    rows, clusters = [], []
    for s in summaries:
        comp = posterior.component_chain(np.asarray(traces.labels), np.asarray(traces.ids),
                                          np.asarray(s.members))
        grid, dens = _density(comp, cfg["posterior"]["density_points"])
        rows.append(pd.DataFrame({"cluster": s.cluster, "x": grid, "density": dens}))
        clusters.append({
            "cluster": s.cluster, "size": s.size, "members": [ids[m] for m in s.members],
            "pooled": _summary_dict(s.pooled), "component": _summary_dict(s.component),
        })
    pd.concat(rows).to_csv(out / "density.csv", index=False, float_format="%.17g",
                           lineterminator="\n")
    _dump_json(out / "clusters.json", {"ci_level": ci, "clusters": clusters})
    return out


def _weights_for(cfg, ids):
    inputs = cfg["inputs"]
    if inputs["adjacency"]:
        return spatial.load_adjacency(inputs["adjacency"], ids), {
            "kind": "adjacency", "file": Path(inputs["adjacency"]).name}
    if inputs["centroids"]:
        path = Path(inputs["centroids"])
    elif inputs["source"] == "synth":
        path = Path(cfg["out"]) / "synth" / "centroids.csv"
    elif inputs["metadata"]:
        meta = pipeline.load_metadata(inputs["metadata"])
        if {"lat", "lon"} <= set(meta.columns):
            sub = meta.reindex(list(ids))[["lat", "lon"]].to_numpy(dtype=np.float64)
            if np.isnan(sub).any():
                raise MissingArtifact("spatial", f"{inputs['metadata']} (lat/lon for every country)")
            k = min(cfg["spatial"]["k"], len(ids) - 1)
            return spatial.build_knn_weights(sub, k, ids), {"kind": "knn", "k": k, "file": "metadata"}
        return None, None
    else:
        return None, None
    cids, coords = spatial.load_centroids(_require(path, "synth"))
    pos = {c: i for i, c in enumerate(cids)}
    missing = [i for i in ids if i not in pos]
    if missing:
        raise MissingArtifact("spatial", f"{path} (no centroid for {missing[0]!r})")
    sub = coords[[pos[i] for i in ids]]
    k = min(cfg["spatial"]["k"], len(ids) - 1)
    return spatial.build_knn_weights(sub, k, ids), {"kind": "knn", "k": k, "file": path.name}


def cmd_spatial(cfg) -> Path:
    """Moran's I on the median IDs; optional KS tests of covariates between clusters.

    Without any weights source the result file records ``null``.
    """
    run = Path(cfg["out"])
    out = run / "spatial"
    out.mkdir(parents=True, exist_ok=True)
    med = pipeline.read_id_csv(_require(run / "postprocess" / "medians.csv", "postprocess"))
    ids = tuple(med["id"])
    weights, info = _weights_for(cfg, ids)
    seed = derived_seeds(cfg["seed"])["spatial"]
    result = None
    if weights is not None:
        values = med["median_id"].to_numpy()
        try:
            m = spatial.moran_permutation_test(values, weights, cfg["spatial"]["n_perm"], seed)
        except ZeroVariance:
            raise ZeroVariance("median_id") from None
        result = {"I": m.I, "p_value": m.p_value, "n_perm": m.n_perm, "seed": seed,
                  "weights": info, "n": len(ids)}
    _dump_json(out / "moran.json", {"moran": result})
    covariates = cfg["spatial"]["ks_covariates"]
    if covariates:
        meta_path = cfg["inputs"]["metadata"]
        if not meta_path:
            raise ConfigInvalid("spatial.ks_covariates needs inputs.metadata")
        meta = pipeline.load_metadata(meta_path).reindex(list(ids))
        clusters = med["cluster"].to_numpy()
        tests = []
        for col in covariates:
            if col not in meta.columns:
                raise ConfigInvalid(f"covariate {col!r} not in metadata")
            x = pd.to_numeric(meta[col], errors="coerce").to_numpy()
            for a in range(1, clusters.max() + 1):
                for b in range(a + 1, clusters.max() + 1):
                    xa = x[(clusters == a) & ~np.isnan(x)]
                    xb = x[(clusters == b) & ~np.isnan(x)]
                    D, p = spatial.ks_two_sample(xa, xb)
                    tests.append({"covariate": col, "clusters": [a, b], "n": [int(xa.size), int(xb.size)],
                                  "D": D, "p_value": p})
        _dump_json(out / "ks.json", {"tests": tests})
    return out


def _trajectories(run: Path, clusters: dict):
    """Per-cluster mean/sd of each standardised variable over time."""
    prov = _read_json(run / "preprocess" / "provenance.json", "preprocess")
    frames = []
    if prov["source"] == "panel":
        variables = prov["variable_order"]
        for v in variables:
            wide = pd.read_csv(_require(run / "preprocess" / f"panel_{v}.csv", "preprocess"),
                               index_col="date", float_precision="round_trip")
            frames.append((v, list(wide.index), wide.to_numpy().T, list(wide.columns)))
    else:
        mat = pipeline.read_id_csv(_require(run / "preprocess" / "matrix.csv", "preprocess"),
                                   index_col="id")
        variables = ["x"]
        frames.append(("x", list(range(1, mat.shape[1] + 1)), mat.to_numpy(), list(mat.index)))
    rows = []
    for v, times, values, ids in frames:
        lab = np.array([clusters[str(i)] for i in ids])
        for k in sorted(set(lab)):
            block = values[lab == k]
            sd = block.std(axis=0, ddof=1) if block.shape[0] > 1 else np.zeros(block.shape[1])
            rows.append(pd.DataFrame({"variable": v, "cluster": k, "t": times,
                                      "mean": block.mean(axis=0), "sd": sd}))
    table = pd.concat(rows, ignore_index=True)
    return table, variables, len(frames[0][1])


def ratio_qq(data) -> pd.DataFrame:
    """QQ data for d_hat * log(mu) against Exp(1), which it follows under the Pareto model."""
    mu = mu_ratios(nearest_neighbors(data, 2))
    est = twonn_mle(mu)
    empirical = np.sort(est.d_hat * np.log(mu))
    n = mu.size
    theoretical = -np.log1p(-(np.arange(1, n + 1) - 0.5) / n)
    return pd.DataFrame({"theoretical": theoretical, "empirical": empirical})


def cmd_report(cfg) -> Path:
    """Consolidate earlier artifacts into report.json, trajectories.csv and ratio_qq.csv."""
    run = Path(cfg["out"])
    out = run / "report"
    out.mkdir(parents=True, exist_ok=True)
    prov = _read_json(run / "preprocess" / "provenance.json", "preprocess")
    fit = _read_json(run / "fit" / "run.json", "fit")
    part = _read_json(run / "postprocess" / "partition.json", "postprocess")
    clus = _read_json(run / "postprocess" / "clusters.json", "postprocess")
    moran = _read_json(run / "spatial" / "moran.json", "spatial")["moran"]
    med = pipeline.read_id_csv(_require(run / "postprocess" / "medians.csv", "postprocess"))
    dens = pd.read_csv(_require(run / "postprocess" / "density.csv", "postprocess"),
                       float_precision="round_trip")

    matrix = pipeline.read_matrix(_require(run / "preprocess" / "matrix.csv", "preprocess"))
    ratio_qq(matrix).to_csv(out / "ratio_qq.csv", index=False, float_format="%.17g",
                            lineterminator="\n")
    traj, variables, T = _trajectories(run, part["labels"])
    traj.to_csv(out / "trajectories.csv", index=False, float_format="%.17g", lineterminator="\n")
    clusters = []
    for c in clus["clusters"]:
        d = dens[dens["cluster"] == c["cluster"]]
        clusters.append({**c, "density": {"x": [float(x) for x in d["x"]],
                                          "density": [_finite(y) for y in d["density"]]}})
    report = {
        "source": prov["source"],
        "stage": str(prov["stage"]),
        "n": int(prov["n"]),
        "D": int(prov["D"]),
        "K": int(part["K"]),
        "vi_score": part["vi_score"],
        "ci_level": clus["ci_level"],
        "twonn": fit["twonn"],
        "observations": [{"id": str(i), "median_id": float(m), "cluster": int(c)}
                         for i, m, c in zip(med["id"], med["median_id"], med["cluster"])],
        "clusters": clusters,
        "moran": moran,
        "trajectories": {"file": "trajectories.csv", "variables": variables, "T": int(T)},
    }
    ks_path = run / "spatial" / "ks.json"
    if ks_path.is_file():
        report["ks"] = json.loads(ks_path.read_text())["tests"]
    jsonschema.validate(report, REPORT_SCHEMA)
    _dump_json(out / "report.json", report)
    _dump_json(out / "report.schema.json", REPORT_SCHEMA)
    return out


def cmd_all(cfg) -> Path:
    if cfg["inputs"]["source"] == "synth":
        cmd_synth(cfg)
    for step in (cmd_preprocess, cmd_fit, cmd_postprocess, cmd_spatial, cmd_report):
        step(cfg)
    return Path(cfg["out"])


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "fit": cmd_fit,
    "postprocess": cmd_postprocess,
    "spatial": cmd_spatial,
    "report": cmd_report,
    "all": cmd_all,
}
