"""File formats: vocabulary, marginals, gold sets, candidates, checkpoints.

All parsers reject malformed input with the offending line number rather than
repairing it. Floating-point values are serialized with 17 significant digits
so every 64-bit value round-trips exactly; checkpoints are a self-describing
text header plus row-major numeric payload, portable at the cost of size.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import Candidate, CandidateList, InputError, LabelSpace, MarginalPrediction
from .made import MadeDensityEstimator
from .masked_attention import MaskedAttentionScorer
from .rerank import RerankedList

MARGINAL_DEFAULT = 1e-6
CHECKPOINT_MAGIC = "labelset-rerank-checkpoint"
CHECKPOINT_VERSION = 1

_MODEL_KINDS = {"made": MadeDensityEstimator, "masksa": MaskedAttentionScorer}


class FormatError(InputError):
    """A file violated its format; the message names the file and line."""


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


# -- vocabulary ----------------------------------------------------------------


def read_vocabulary(path: str | Path) -> LabelSpace:
    """One label code per line; the line number (0-based) is the index."""
    codes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            code = line.rstrip("\n")
            if code == "":
                raise FormatError(f"{path}:{lineno}: empty label code")
            if any(c.isspace() for c in code) or ":" in code:
                raise FormatError(
                    f"{path}:{lineno}: label code {code!r} may not contain whitespace or ':'"
                )
            codes.append(code)
    if not codes:
        raise FormatError(f"{path}: vocabulary is empty")
    try:
        return LabelSpace.from_codes(codes)
    except InputError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_vocabulary(path: str | Path, space: LabelSpace) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for code in space.codes:
            fh.write(code + "\n")


# -- marginals ------------------------------------------------------------------


def read_marginals(path: str | Path, space: LabelSpace) -> list[MarginalPrediction]:
    """Sparse per-line format ``id<TAB>code:prob code:prob ...``.

    Labels not listed on a line default to 1e-6, so an unlisted label can
    never enter the most-probable set.
    """
    out = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'id<TAB>pairs', got {len(parts)} fields")
            instance_id, pair_field = parts
            if instance_id == "":
                raise FormatError(f"{path}:{lineno}: empty instance id")
            if instance_id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate instance id {instance_id!r}")
            seen.add(instance_id)
            probs = np.full(len(space), MARGINAL_DEFAULT)
            listed: set[int] = set()
            for pair in pair_field.split():
                code, sep, prob_text = pair.rpartition(":")
                if not sep or code == "":
                    raise FormatError(f"{path}:{lineno}: malformed pair {pair!r}")
                if code not in space.index:
                    raise FormatError(f"{path}:{lineno}: unknown label code {code!r}")
                idx = space.index[code]
                if idx in listed:
                    raise FormatError(f"{path}:{lineno}: duplicate code {code!r}")
                listed.add(idx)
                try:
                    p = float(prob_text)
                except ValueError:
                    raise FormatError(f"{path}:{lineno}: malformed probability {prob_text!r}") from None
                if not 0.0 <= p <= 1.0 or p != p:
                    raise FormatError(f"{path}:{lineno}: probability {prob_text!r} outside [0, 1]")
                probs[idx] = p
            out.append(MarginalPrediction(instance_id, probs))
    return out


def write_marginals(
    path: str | Path, marginals: Iterable[MarginalPrediction], space: LabelSpace
) -> None:
    """Entries equal to the 1e-6 default are omitted; round-trips are lossless."""
    with open(path, "w", encoding="utf-8") as fh:
        for m in marginals:
            if m.n_labels != len(space):
                raise InputError(
                    f"marginal for {m.instance_id!r} has {m.n_labels} labels, space has {len(space)}"
                )
            pairs = [
                f"{space.codes[i]}:{_fmt(p)}"
                for i, p in enumerate(m.probs)
                if p != MARGINAL_DEFAULT
            ]
            fh.write(f"{m.instance_id}\t{' '.join(pairs)}\n")


# -- gold sets --------------------------------------------------------------------


def read_gold(path: str | Path, space: LabelSpace) -> dict[str, tuple[int, ...]]:
    """Per-line ``id<TAB>code code ...``; an empty code field is the empty set."""
    out: dict[str, tuple[int, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'id<TAB>codes', got {len(parts)} fields")
            instance_id, code_field = parts
            if instance_id == "":
                raise FormatError(f"{path}:{lineno}: empty instance id")
            if instance_id in out:
                raise FormatError(f"{path}:{lineno}: duplicate instance id {instance_id!r}")
            members = []
            seen: set[str] = set()
            for code in code_field.split():
                if code in seen:
                    raise FormatError(f"{path}:{lineno}: duplicate code {code!r}")
                seen.add(code)
                if code not in space.index:
                    raise FormatError(f"{path}:{lineno}: unknown label code {code!r}")
                members.append(space.index[code])
            out[instance_id] = tuple(sorted(members))
    return out


def write_gold(
    path: str | Path, gold: Mapping[str, Sequence[int]] | Sequence[tuple[str, Sequence[int]]], space: LabelSpace
) -> None:
    items = gold.items() if isinstance(gold, Mapping) else gold
    with open(path, "w", encoding="utf-8") as fh:
        for instance_id, members in items:
            codes = " ".join(space.codes[i] for i in sorted(members))
            fh.write(f"{instance_id}\t{codes}\n")


# -- candidate / reranked lists ------------------------------------------------------


def write_candidates(
    path: str | Path,
    lists: Sequence[CandidateList | RerankedList],
    space: LabelSpace,
) -> None:
    """``id<TAB>rank<TAB>base_logprob<TAB>rerank_score<TAB>combined_score<TAB>codes``.

    Unscored fields are written as ``nan``; rank is the 1-based position in
    the list's current order.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for clist in lists:
            for rank, cand in enumerate(clist.candidates, start=1):
                rr = _fmt(cand.rerank_score) if cand.rerank_score is not None else "nan"
                cb = _fmt(cand.combined_score) if cand.combined_score is not None else "nan"
                codes = " ".join(space.codes[i] for i in cand.members)
                fh.write(
                    f"{clist.instance_id}\t{rank}\t{_fmt(cand.base_logprob)}\t{rr}\t{cb}\t{codes}\n"
                )


def read_candidates(path: str | Path, space: LabelSpace) -> list[CandidateList]:
    """Read candidate blocks; consecutive rows per id must count 1, 2, ..."""
    out: list[CandidateList] = []
    current: CandidateList | None = None
    finished: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 6:
                raise FormatError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
            instance_id, rank_text, base_text, rr_text, cb_text, code_field = parts
            if instance_id == "":
                raise FormatError(f"{path}:{lineno}: empty instance id")
            try:
                rank = int(rank_text)
                base = float(base_text)
                rr = float(rr_text)
                cb = float(cb_text)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed numeric field") from None
            members = []
            seen: set[str] = set()
            for code in code_field.split():
                if code in seen:
                    raise FormatError(f"{path}:{lineno}: duplicate code {code!r}")
                seen.add(code)
                if code not in space.index:
                    raise FormatError(f"{path}:{lineno}: unknown label code {code!r}")
                members.append(space.index[code])
            cand = Candidate(
                members=tuple(sorted(members)),
                base_logprob=base,
                rerank_score=None if rr != rr else rr,
                combined_score=None if cb != cb else cb,
            )
            if current is None or instance_id != current.instance_id:
                if current is not None:
                    out.append(current)
                    finished.add(current.instance_id)
                if instance_id in finished:
                    raise FormatError(f"{path}:{lineno}: candidate block for {instance_id!r} split")
                if rank != 1:
                    raise FormatError(f"{path}:{lineno}: first rank for {instance_id!r} is {rank}, not 1")
                current = CandidateList(instance_id, [cand])
            else:
                if rank != len(current.candidates) + 1:
                    raise FormatError(
                        f"{path}:{lineno}: rank {rank} out of sequence for {instance_id!r}"
                    )
                current.candidates.append(cand)
    if current is not None:
        out.append(current)
    if not out:
        raise FormatError(f"{path}: no candidates found")
    return out


# -- exact joint table ----------------------------------------------------------------


def write_joint_table(path: str | Path, joint: np.ndarray) -> None:
    """``bitmask_decimal<TAB>probability`` for every bitmask in order."""
    with open(path, "w", encoding="utf-8") as fh:
        for mask, p in enumerate(np.asarray(joint, dtype=np.float64)):
            fh.write(f"{mask}\t{_fmt(p)}\n")


def read_joint_table(path: str | Path) -> np.ndarray:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'bitmask<TAB>probability'")
            try:
                mask = int(parts[0])
                p = float(parts[1])
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed row") from None
            if mask != lineno - 1:
                raise FormatError(f"{path}:{lineno}: bitmask {mask} out of order")
            rows.append(p)
    n = len(rows)
    if n == 0 or n & (n - 1) != 0:
        raise FormatError(f"{path}: table length {n} is not a power of two")
    return np.asarray(rows)


# -- reports ------------------------------------------------------------------------------


def write_records(path: str | Path, rows: Iterable[Mapping]) -> None:
    """Line-delimited JSON records with sorted keys (digest-stable)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(dict(row), sort_keys=True) + "\n")


# -- checkpoints -----------------------------------------------------------------------------


def save_checkpoint(model, path: str | Path, label_digest: str) -> None:
    """Self-describing text checkpoint: header, hyperparameters, tensors."""
    if isinstance(model, MadeDensityEstimator):
        kind = "made"
        arrays = {
            "orderings": model.orderings_,
            "connectivity": model.connectivity_,
            **model.parameters(),
        }
    elif isinstance(model, MaskedAttentionScorer):
        kind = "masksa"
        arrays = dict(model.parameters())
    else:
        raise InputError(f"cannot checkpoint a {type(model).__name__}")
    n_labels = model.n_labels_
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        fh.write(f"kind {kind}\n")
        fh.write(f"label_digest {label_digest}\n")
        fh.write(f"n_labels {n_labels}\n")
        for name, value in sorted(model.get_params().items()):
            fh.write(f"param {name} {_encode_param(value)}\n")
        for name in sorted(arrays):
            arr = arrays[name]
            dtype = "int64" if np.issubdtype(arr.dtype, np.integer) else "float64"
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"array {name} {dtype} {arr.ndim} {dims}\n")
            rows = arr.reshape(-1, arr.shape[-1]) if arr.ndim > 1 else arr.reshape(1, -1)
            for row in rows:
                if dtype == "int64":
                    fh.write(" ".join(str(int(v)) for v in row) + "\n")
                else:
                    fh.write(" ".join(_fmt(v) for v in row) + "\n")
        fh.write("end\n")


def load_checkpoint(path: str | Path, expected_digest: str | None = None):
    """Reload a checkpoint; scoring is bit-exact w.r.t. the saved model.

    A version or label-digest mismatch is a hard error, as is any truncation
    (the trailing ``end`` marker must be present).
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise FormatError(f"{path}: truncated checkpoint (missing 'end')")
        line = lines[pos]
        pos += 1
        return line

    header = take().split()
    if len(header) != 2 or header[0] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}:1: not a {CHECKPOINT_MAGIC} file")
    if int(header[1]) != CHECKPOINT_VERSION:
        raise FormatError(f"{path}:1: unsupported version {header[1]}")
    kind_line = take().split()
    if len(kind_line) != 2 or kind_line[0] != "kind" or kind_line[1] not in _MODEL_KINDS:
        raise FormatError(f"{path}:2: bad kind line")
    kind = kind_line[1]
    digest_line = take().split()
    if len(digest_line) != 2 or digest_line[0] != "label_digest":
        raise FormatError(f"{path}:3: bad label_digest line")
    label_digest = digest_line[1]
    if expected_digest is not None and label_digest != expected_digest:
        raise FormatError(
            f"{path}: label-space digest mismatch: checkpoint {label_digest[:12]}..., "
            f"expected {expected_digest[:12]}..."
        )
    labels_line = take().split()
    if len(labels_line) != 2 or labels_line[0] != "n_labels":
        raise FormatError(f"{path}:4: bad n_labels line")
    n_labels = int(labels_line[1])

    params: dict[str, object] = {}
    arrays: dict[str, np.ndarray] = {}
    while True:
        line = take()
        if line == "end":
            break
        fields = line.split()
        if not fields:
            raise FormatError(f"{path}:{pos}: blank line inside checkpoint")
        if fields[0] == "param":
            if len(fields) != 3:
                raise FormatError(f"{path}:{pos}: bad param line")
            params[fields[1]] = _decode_param(fields[2])
        elif fields[0] == "array":
            if len(fields) < 4:
                raise FormatError(f"{path}:{pos}: bad array line")
            name, dtype, ndim = fields[1], fields[2], int(fields[3])
            shape = tuple(int(d) for d in fields[4 : 4 + ndim])
            if len(shape) != ndim or dtype not in ("int64", "float64"):
                raise FormatError(f"{path}:{pos}: bad array header for {name!r}")
            n_rows = 1 if ndim == 1 else int(np.prod(shape[:-1]))
            data = []
            for _ in range(n_rows):
                row = take().split()
                if len(row) != shape[-1]:
                    raise FormatError(f"{path}:{pos}: row width mismatch in array {name!r}")
                data.append([int(v) if dtype == "int64" else float(v) for v in row])
            arrays[name] = np.asarray(data, dtype=dtype).reshape(shape)
        else:
            raise FormatError(f"{path}:{pos}: unexpected line {line!r}")

    model = _MODEL_KINDS[kind](**params)
    model.initialize(n_labels)
    if kind == "made":
        expected = {"orderings", "connectivity", *model.parameters().keys()}
        if set(arrays) != expected:
            raise FormatError(f"{path}: checkpoint arrays do not match a {kind} model")
        _assign(model.orderings_, arrays["orderings"], "orderings", path)
        _assign(model.connectivity_, arrays["connectivity"], "connectivity", path)
        for name, target in model.parameters().items():
            _assign(target, arrays[name], name, path)
    else:
        targets = model.parameters()
        if set(arrays) != set(targets):
            raise FormatError(f"{path}: checkpoint arrays do not match a {kind} model")
        for name, target in targets.items():
            _assign(target, arrays[name], name, path)
    model.label_digest_ = label_digest
    return model


def _assign(target: np.ndarray, value: np.ndarray, name: str, path) -> None:
    if target.shape != value.shape:
        raise FormatError(f"{path}: array {name!r} has shape {value.shape}, expected {target.shape}")
    target[...] = value


def _encode_param(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        raise InputError("boolean hyperparameters are not supported")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return _fmt(value)
    raise InputError(f"cannot serialize hyperparameter {value!r}")


def _decode_param(text: str):
    if text == "none":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)
