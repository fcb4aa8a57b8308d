"""File formats: edge-list CSV ingestion/round-trip and metadata tables.

Edge files are CSV lines ``src,dst,relation,value`` with value 0 or 1.
A ``#default: absent`` or ``#default: unobserved`` directive says what an
unlisted (i, j, m) triple means; optional ``#nodes:`` and ``#relations:``
directives pin the full rosters so isolated nodes survive a round trip.
Node and relation ids are arbitrary strings mapped to dense indices in
first-appearance order, and the mapping is returned alongside the tensor.

Metadata files are CSV with a header row naming the features; the first
column is the node id. Numeric columns pass through (standardized to zero
mean and unit variance by default, since the regression priors are scale
sensitive); non-numeric columns are one-hot expanded; an intercept
feature of ones is always prepended.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .model import ABSENT, PRESENT, UNOBSERVED, EdgeData, Metadata

_DEFAULTS = {"absent": ABSENT, "unobserved": UNOBSERVED}


def load_edges(path):
    """Parse an edge CSV into (EdgeData, node_ids, relation_ids)."""
    default_code = None
    node_ids: list[str] = []
    relation_ids: list[str] = []
    node_pos: dict[str, int] = {}
    rel_pos: dict[str, int] = {}
    triples: dict[tuple[int, int, int], int] = {}

    def intern(name, ids, pos):
        if name not in pos:
            pos[name] = len(ids)
            ids.append(name)
        return pos[name]

    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if ":" not in body:
                    raise DataError(f"{path}:{lineno}: malformed directive {line!r}")
                key, _, val = body.partition(":")
                key = key.strip().lower()
                val = val.strip()
                if key == "default":
                    if val.lower() not in _DEFAULTS:
                        raise DataError(
                            f"{path}:{lineno}: unknown default directive {val!r} "
                            "(expected 'absent' or 'unobserved')")
                    default_code = _DEFAULTS[val.lower()]
                elif key == "nodes":
                    for name in val.split(","):
                        if name.strip():
                            intern(name.strip(), node_ids, node_pos)
                elif key == "relations":
                    for name in val.split(","):
                        if name.strip():
                            intern(name.strip(), relation_ids, rel_pos)
                else:
                    raise DataError(f"{path}:{lineno}: unknown directive {key!r}")
                continue
            parts = [p.strip() for p in line.split(",")]
            if parts == ["src", "dst", "relation", "value"]:
                continue  # optional literal header
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 'src,dst,relation,value', got {line!r}")
            src, dst, rel, val = parts
            if val not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: value must be 0 or 1, got {val!r}")
            i = intern(src, node_ids, node_pos)
            j = intern(dst, node_ids, node_pos)
            m = intern(rel, relation_ids, rel_pos)
            code = PRESENT if val == "1" else ABSENT
            key = (i, j, m)
            if key in triples and triples[key] != code:
                raise DataError(
                    f"{path}:{lineno}: duplicate triple ({src},{dst},{rel}) with conflicting value")
            triples[key] = code

    if default_code is None:
        raise DataError(f"{path}: missing '#default: absent|unobserved' directive")
    if not node_ids:
        raise DataError(f"{path}: no nodes found")
    if not relation_ids:
        raise DataError(f"{path}: no relations found")
    n, m_rel = len(node_ids), len(relation_ids)
    obs = np.full((n, n, m_rel), default_code, dtype=np.int8)
    for (i, j, m), code in triples.items():
        obs[i, j, m] = code
    return EdgeData(obs), node_ids, relation_ids


def write_edges(path, data: EdgeData, node_ids=None, relation_ids=None,
                default: str = "absent") -> None:
    """Inverse of :func:`load_edges`; lists every entry that differs from the default."""
    if default not in _DEFAULTS:
        raise DataError(f"default must be 'absent' or 'unobserved', got {default!r}")
    node_ids = node_ids if node_ids is not None else [str(i) for i in range(data.N)]
    relation_ids = relation_ids if relation_ids is not None else [str(m) for m in range(data.M)]
    default_code = _DEFAULTS[default]
    if default_code == ABSENT:
        off_diag = ~np.eye(data.N, dtype=bool)
        if np.any(data.obs[off_diag] == UNOBSERVED):
            raise DataError(
                "data has unobserved off-diagonal entries; write with default='unobserved'")
    with open(path, "w") as fh:
        fh.write(f"#default: {default}\n")
        fh.write("#nodes: " + ",".join(node_ids) + "\n")
        fh.write("#relations: " + ",".join(relation_ids) + "\n")
        fh.write("src,dst,relation,value\n")
        for i, j, m in np.argwhere(data.obs != UNOBSERVED):
            code = data.obs[i, j, m]
            if code == default_code:
                continue
            fh.write(f"{node_ids[i]},{node_ids[j]},{relation_ids[m]},"
                     f"{1 if code == PRESENT else 0}\n")


def load_metadata(path, node_ids, standardize: bool = True) -> Metadata:
    """Build the (F, N) feature matrix for the given node ordering."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if not header.strip():
            raise DataError(f"{path}: empty header row")
        columns = [c.strip() for c in header.split(",")]
        if len(columns) < 2:
            raise DataError(f"{path}: metadata needs an id column and at least one feature")
        rows: dict[str, list[str]] = {}
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != len(columns):
                raise DataError(f"{path}:{lineno}: expected {len(columns)} cells, got {len(parts)}")
            rows[parts[0]] = parts[1:]

    missing = [nid for nid in node_ids if nid not in rows]
    if missing:
        raise DataError(f"{path}: missing metadata rows for nodes {missing[:5]!r}")

    feat_cols = columns[1:]
    raw = [[rows[nid][c] for nid in node_ids] for c in range(len(feat_cols))]

    features = [np.ones(len(node_ids))]
    names = ["intercept"]
    for cname, cells in zip(feat_cols, raw):
        numeric = True
        vals = np.empty(len(cells))
        for idx, cell in enumerate(cells):
            if cell == "":
                raise DataError(f"{path}: empty cell in column {cname!r}")
            try:
                vals[idx] = float(cell)
            except ValueError:
                numeric = False
                break
        if numeric:
            if standardize:
                sd = vals.std()
                vals = (vals - vals.mean()) / (sd if sd > 0 else 1.0)
            features.append(vals)
            names.append(cname)
        else:
            for level in sorted(set(cells)):
                features.append(np.array([1.0 if c == level else 0.0 for c in cells]))
                names.append(f"{cname}={level}")
    return Metadata(np.vstack(features), feature_names=names)


def write_metadata(path, node_ids, columns: dict) -> None:
    """Write a metadata CSV; ``columns`` maps feature name to per-node values."""
    names = list(columns.keys())
    with open(path, "w") as fh:
        fh.write("node," + ",".join(names) + "\n")
        for idx, nid in enumerate(node_ids):
            cells = [str(columns[name][idx]) for name in names]
            fh.write(f"{nid}," + ",".join(cells) + "\n")
