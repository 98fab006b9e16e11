"""Retrieval evaluation: mAP, CMC/Rank-1, and incremental summaries.

Follows the standard ReID protocol: euclidean ranking of L2-normalized
features, gallery entries sharing both the query's identity and camera are
dropped from that query's ranking, and queries left without any relevant
gallery item are skipped.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


@dataclass
class RetrievalResult:
    average_precisions: np.ndarray
    cmc: np.ndarray
    map: float
    rank1: float


@dataclass
class DatasetScore:
    name: str
    split: str  # "seen" or "unseen"
    map: float
    rank1: float


@dataclass
class IncrementalReport:
    rows: list = field(default_factory=list)
    seen_avg_map: float = 0.0
    seen_avg_rank1: float = 0.0
    unseen_avg_map: float = 0.0
    unseen_avg_rank1: float = 0.0


def embed_gallery(model, dataset, batch_size=64, feature="fused"):
    """Embed every image; rows are L2-normalized retrieval features."""
    chunks = []
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            images = dataset.images[start : start + batch_size]
            reps, _ = model.forward(images)
            if feature == "concat":
                vals = np.concatenate([reps.fused.data] + [a.data for a in reps.aux], axis=1)
            else:
                vals = reps.fused.data
            chunks.append(vals)
    feats = np.concatenate(chunks, axis=0)
    norms = np.sqrt((feats * feats).sum(axis=1, keepdims=True))
    return feats / np.maximum(norms, 1e-12)


def evaluate(query_feats, query_pids, query_camids, gallery_feats, gallery_pids, gallery_camids):
    """Rank the gallery for each query and score AP / CMC.

    Distance ties resolve by ascending gallery index (stable sort).
    """
    query_pids = np.asarray(query_pids)
    query_camids = np.asarray(query_camids)
    gallery_pids = np.asarray(gallery_pids)
    gallery_camids = np.asarray(gallery_camids)
    n_gallery = len(gallery_pids)
    if n_gallery == 0:
        raise ValueError("empty gallery")

    # direct differences, not the |a|^2+|b|^2-2ab expansion: rankings must be
    # reproducible to the last bit so distance ties break by gallery index
    diff = query_feats[:, None, :] - gallery_feats[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))

    aps = []
    first_match_ranks = []
    for qi in range(len(query_pids)):
        keep = ~((gallery_pids == query_pids[qi]) & (gallery_camids == query_camids[qi]))
        if not keep.any():
            continue
        order = np.argsort(dist[qi, keep], kind="stable")
        rel_ranks = np.flatnonzero(gallery_pids[keep][order] == query_pids[qi]) + 1
        if len(rel_ranks) == 0:
            continue  # identity absent from this query's filtered gallery
        # sequential accumulation in rank order keeps the value reproducible
        # against a by-definition enumeration of the same ranking
        precision_sum = 0.0
        for hits, rank in enumerate(rel_ranks, start=1):
            precision_sum += hits / int(rank)
        aps.append(precision_sum / len(rel_ranks))
        first_match_ranks.append(int(rel_ranks[0]))
    if not aps:
        raise ValueError("no query has a relevant gallery item after protocol filtering")

    ranks = np.asarray(first_match_ranks)
    cmc = np.array([(ranks <= r).mean() for r in range(1, n_gallery + 1)])
    return RetrievalResult(
        average_precisions=np.asarray(aps),
        cmc=cmc,
        map=float(np.mean(aps)),
        rank1=float(cmc[0]),
    )


def score_task(model, task, feature="fused"):
    """Embed a task's query/gallery splits and evaluate them."""
    q = embed_gallery(model, task.query, feature=feature)
    g = embed_gallery(model, task.gallery, feature=feature)
    return evaluate(q, task.query.person_ids, task.query.camera_ids, g, task.gallery.person_ids, task.gallery.camera_ids)


def incremental_report(model, seen_tasks, unseen_tasks, feature="fused"):
    """Per-dataset scores after training plus seen / unseen averages."""
    report = IncrementalReport()
    for task in seen_tasks:
        r = score_task(model, task, feature=feature)
        report.rows.append(DatasetScore(name=task.name, split="seen", map=r.map, rank1=r.rank1))
    for task in unseen_tasks:
        r = score_task(model, task, feature=feature)
        report.rows.append(DatasetScore(name=task.name, split="unseen", map=r.map, rank1=r.rank1))
    seen = [r for r in report.rows if r.split == "seen"]
    unseen = [r for r in report.rows if r.split == "unseen"]
    if seen:
        report.seen_avg_map = float(np.mean([r.map for r in seen]))
        report.seen_avg_rank1 = float(np.mean([r.rank1 for r in seen]))
    if unseen:
        report.unseen_avg_map = float(np.mean([r.map for r in unseen]))
        report.unseen_avg_rank1 = float(np.mean([r.rank1 for r in unseen]))
    return report


def aux_overlap(model, dataset, batch_size=64):
    """Mean pairwise |cos| between auxiliary embeddings over a dataset."""
    sums, count = [], 0
    with T.no_grad():
        for start in range(0, len(dataset), batch_size):
            reps, _ = model.forward(dataset.images[start : start + batch_size])
            if len(reps.aux) < 2:
                return 0.0
            vals = np.stack([a.data for a in reps.aux])  # (S, B, D)
            vals = vals / np.maximum(np.sqrt((vals * vals).sum(axis=2, keepdims=True)), 1e-12)
            s = vals.shape[0]
            pair_terms = [
                np.abs((vals[i] * vals[j]).sum(axis=1)) for i in range(s) for j in range(i + 1, s)
            ]
            sums.append(np.mean(pair_terms, axis=0).sum())
            count += vals.shape[1]
    return float(np.sum(sums) / count)
