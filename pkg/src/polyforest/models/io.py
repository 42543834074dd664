"""Dataset CSV and model key-value files."""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np

from ..graphs import Dag, read_graph, save_graph
from .forest import (
    BERNOULLI,
    GAUSSIAN,
    NONPARAM,
    BernoulliForestModel,
    ForestModel,
    GaussianForestModel,
    NonparamForestModel,
    check_family,
)


class DatasetFormatError(ValueError):
    pass


def write_dataset(data: np.ndarray, path: str | Path, binary: bool = False) -> None:
    data = np.asarray(data, dtype=float)
    header = ",".join(f"X{j + 1}" for j in range(data.shape[1]))
    fmt = "%d" if binary else "%.17g"
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


def read_dataset(path: str | Path, binary: bool = False) -> np.ndarray:
    """Read an ``X1,...,Xd`` CSV into a read-only column-major float array."""
    text = Path(path).read_text()
    first, _, body = text.partition("\n")
    names = [c.strip() for c in first.split(",")]
    if not names or not all(names):
        raise DatasetFormatError(f"{path}: missing header line")
    try:
        data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2, dtype=float)
    except ValueError as exc:
        raise DatasetFormatError(f"{path}: {exc}") from exc
    if data.size == 0:
        data = data.reshape(0, len(names))
    if data.shape[1] != len(names):
        raise DatasetFormatError(f"{path}: {len(names)} header columns but {data.shape[1]} data columns")
    if binary and not np.isin(data, (0.0, 1.0)).all():
        raise DatasetFormatError(f"{path}: binary dataset contains values other than 0/1")
    data = np.asfortranarray(data)
    data.flags.writeable = False
    return data


def write_model(model: ForestModel, path: str | Path, graph_path: str | Path | None = None) -> None:
    """Write ``model`` as ``key = value`` lines plus a graph file.

    The graph goes to ``graph_path`` (default: ``<path>.graph`` next to the
    model) and is referenced relative to the model file.
    """
    path = Path(path)
    graph_path = Path(graph_path) if graph_path else path.with_suffix(path.suffix + ".graph")
    save_graph(model.graph, graph_path)
    rel = os.path.relpath(graph_path.resolve(), path.resolve().parent)
    lines = [f"family = {model.family}", f"graph = {rel}"]
    for e in sorted(model.graph.edges):
        key = f"edge {e[0]}->{e[1]}"
        if isinstance(model, BernoulliForestModel):
            lines.append(f"{key} = {model.flip_magnitudes[e]!r} {model.signs[e]}")
        elif isinstance(model, GaussianForestModel):
            lines.append(f"{key} = {model.coefficients[e]!r}")
        else:
            lines.append(f"{key} = {model.links[e]}")
    if isinstance(model, GaussianForestModel):
        lines += [f"noise {k} = {v!r}" for k, v in enumerate(model.noise_variances)]
    if isinstance(model, NonparamForestModel):
        lines.append(f"mix_weight = {model.mix_weight!r}")
    path.write_text("\n".join(lines) + "\n")


def read_model(path: str | Path) -> ForestModel:
    path = Path(path)
    entries: dict[str, str] = {}
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{line_no}: expected 'key = value'")
        entries[key.strip()] = value.strip()
    family = check_family(entries.pop("family"))
    graph = read_graph(path.parent / entries.pop("graph"))
    if not isinstance(graph, Dag):
        raise ValueError(f"{path}: model graph must be a DAG")

    def edge_of(key):
        j, k = key.split(None, 1)[1].split("->")
        return int(j), int(k)

    edge_values = {edge_of(k): v for k, v in entries.items() if k.startswith("edge ")}
    if family == BERNOULLI:
        flips, signs = {}, {}
        for e, v in edge_values.items():
            b, r = v.split()
            flips[e], signs[e] = float(b), int(r)
        return BernoulliForestModel(graph, flips, signs)
    if family == GAUSSIAN:
        noise = [float(entries[f"noise {k}"]) for k in range(graph.d)]
        return GaussianForestModel(graph, {e: float(v) for e, v in edge_values.items()}, tuple(noise))
    return NonparamForestModel(graph, dict(edge_values), float(entries.get("mix_weight", 0.3)))
