"""Cosine ranking and the retrieval metrics: rank-1, mAP and CMC.

Rankings are integer matrices ``[num_query, num_gallery]`` of gallery row
indices, nearest first. Equal distances keep gallery order, so a ranking
is fully determined by the embeddings.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from mbanet.data.augment import AugmentationConfig, ImageSource, prepare_eval
from mbanet.data.split import RetrievalSplit, make_split
from mbanet.errors import EmbeddingError
from mbanet.tensor_core import Tensor


@dataclass
class EmbeddingSet:
    matrix: np.ndarray
    labels: np.ndarray
    ids: list = field(default_factory=list)
    role: str = "gallery"

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        self.labels = np.asarray(self.labels)
        if self.matrix.ndim != 2 or len(self.labels) != len(self.matrix):
            raise EmbeddingError(f"{self.role}: {len(self.labels)} labels for a matrix of shape {self.matrix.shape}")
        if self.ids and len(self.ids) != len(self.matrix):
            raise EmbeddingError(f"{self.role}: {len(self.ids)} ids for {len(self.matrix)} rows")
        if self.role not in ("gallery", "query"):
            raise EmbeddingError(f"role must be gallery or query, got {self.role!r}")

    def __len__(self) -> int:
        return len(self.matrix)


def _matrix(x) -> np.ndarray:
    return x.matrix if isinstance(x, EmbeddingSet) else np.asarray(x)


def _unit_rows(m: np.ndarray, role: str) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    zero = np.flatnonzero(norms[:, 0] == 0)
    if zero.size:
        raise EmbeddingError(f"{role} rows {zero.tolist()} have zero norm; cosine distance is undefined")
    return m / norms


def cosine_distances(queries, gallery) -> np.ndarray:
    q, g = _matrix(queries), _matrix(gallery)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise EmbeddingError(f"query dim {q.shape} does not match gallery dim {g.shape}")
    if not len(q) or not len(g):
        raise EmbeddingError("empty query or gallery set")
    return 1.0 - _unit_rows(q, "query") @ _unit_rows(g, "gallery").T


def cosine_rank(queries, gallery) -> np.ndarray:
    """Gallery indices per query by ascending cosine distance, index-stable on ties."""
    return np.argsort(cosine_distances(queries, gallery), axis=1, kind="stable")


def _relevance(ranking, q_labels, g_labels) -> np.ndarray:
    ranking = np.asarray(ranking)
    q_labels, g_labels = np.asarray(q_labels), np.asarray(g_labels)
    if ranking.shape != (len(q_labels), len(g_labels)):
        raise EmbeddingError(f"ranking {ranking.shape} does not match {len(q_labels)} queries "
                             f"x {len(g_labels)} gallery items")
    return g_labels[ranking] == q_labels[:, None]


def rank1(ranking, q_labels, g_labels) -> float:
    rel = _relevance(ranking, q_labels, g_labels)
    return float(rel[:, 0].sum()) / len(rel)


def average_precisions(ranking, q_labels, g_labels) -> list[float]:
    """AP per query: precision at each relevant rank, averaged over relevant items."""
    rel = _relevance(ranking, q_labels, g_labels)
    out = []
    for qi, row in enumerate(rel):
        ranks = np.flatnonzero(row) + 1
        if not ranks.size:
            raise EmbeddingError(f"query {qi} (label {np.asarray(q_labels)[qi]}) has no match in the gallery")
        precisions = [(k + 1) / int(r) for k, r in enumerate(ranks)]
        out.append(sum(precisions) / len(precisions))
    return out


def mean_ap(ranking, q_labels, g_labels) -> float:
    aps = average_precisions(ranking, q_labels, g_labels)
    return sum(aps) / len(aps)


def cmc(ranking, q_labels, g_labels, k: int = 10) -> np.ndarray:
    """Fraction of queries whose first match lies within the top r, for r = 1..k."""
    rel = _relevance(ranking, q_labels, g_labels)
    if not rel.any(axis=1).all():
        raise EmbeddingError("a query label is absent from the gallery")
    first = rel.argmax(axis=1)
    k = min(k, rel.shape[1])
    return np.array([(first < r).mean() for r in range(1, k + 1)])


@dataclass
class EvalReport:
    rank1: list = field(default_factory=list)
    mAP: list = field(default_factory=list)
    cmc: list = field(default_factory=list)

    @property
    def mean(self) -> dict:
        return {"rank1": float(np.mean(self.rank1)), "mAP": float(np.mean(self.mAP))}

    @property
    def std(self) -> dict:
        return {"rank1": float(np.std(self.rank1)), "mAP": float(np.std(self.mAP))}

    @property
    def mean_cmc(self) -> np.ndarray:
        return np.mean(np.stack(self.cmc), axis=0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["repetition", "rank1", "mAP"])
            for i, (r, m) in enumerate(zip(self.rank1, self.mAP)):
                w.writerow([i, repr(r), repr(m)])
            w.writerow(["mean", repr(self.mean["rank1"]), repr(self.mean["mAP"])])
            w.writerow(["std", repr(self.std["rank1"]), repr(self.std["mAP"])])

    def to_dict(self) -> dict:
        return {
            "repetitions": [{"rank1": r, "mAP": m, "cmc": list(map(float, c))}
                            for r, m, c in zip(self.rank1, self.mAP, self.cmc)],
            "mean": self.mean,
            "std": self.std,
            "cmc": self.mean_cmc.tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def score(query: EmbeddingSet, gallery: EmbeddingSet, cmc_k: int = 10) -> EvalReport:
    ranking = cosine_rank(query, gallery)
    return EvalReport([rank1(ranking, query.labels, gallery.labels)],
                      [mean_ap(ranking, query.labels, gallery.labels)],
                      [cmc(ranking, query.labels, gallery.labels, cmc_k)])


def aggregate(reports) -> EvalReport:
    out = EvalReport()
    for rep in reports:
        out.rank1 += rep.rank1
        out.mAP += rep.mAP
        out.cmc += rep.cmc
    return out


def embed_records(net, records, aug: AugmentationConfig, source: ImageSource | None = None,
                  batch_size: int = 50) -> np.ndarray:
    """Eval-mode descriptors for ``records`` in order, as float64 rows."""
    source = source or ImageSource()
    rows = []
    for start in range(0, len(records), batch_size):
        batch = np.stack([prepare_eval(source.load(r.path), aug) for r in records[start:start + batch_size]])
        rows.append(net.forward_embed(Tensor(batch)).data.astype(np.float64))
    return np.concatenate(rows) if rows else np.zeros((0, net.descriptor_dim))


def evaluate(net, split: RetrievalSplit, aug: AugmentationConfig, cmc_k: int = 10,
             source: ImageSource | None = None, cache: dict | None = None) -> EvalReport:
    """Embed gallery and query of one split and score them.

    ``cache`` maps image path to descriptor and is filled as a side effect,
    which lets repeated splits over one dataset embed every image once.
    """
    if not split.gallery or not split.query:
        raise EmbeddingError(f"split has {len(split.gallery)} gallery and {len(split.query)} query images")
    cache = {} if cache is None else cache
    missing = [r for r in dict.fromkeys(split.gallery + split.query) if r.path not in cache]
    if missing:
        for r, row in zip(missing, embed_records(net, missing, aug, source)):
            cache[r.path] = row

    def embedding_set(records, role):
        return EmbeddingSet(np.stack([cache[r.path] for r in records]), split.retrieval_labels(records),
                            [str(r.path) for r in records], role)

    return score(embedding_set(split.query, "query"), embedding_set(split.gallery, "gallery"), cmc_k)


def evaluate_repetitions(net, ds, aug: AugmentationConfig, repetitions: int = 10, seed: int = 0,
                         distractors=None, closed_set: bool = False, cmc_k: int = 10,
                         source: ImageSource | None = None) -> EvalReport:
    cache: dict = {}
    source = source or ImageSource(max_cached=0)
    return aggregate(
        evaluate(net, make_split(ds, seed, rep, distractors, closed_set), aug, cmc_k, source, cache)
        for rep in range(repetitions)
    )
