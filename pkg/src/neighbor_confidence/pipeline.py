"""End-to-end pipeline steps. Each step reads and writes files in the run directory.

Layout of a run directory::

    config.json            resolved configuration
    corpus.ncpc            raw clouds (binary)
    corpus_manifest.json   per-cloud family / scales / seed
    model.ncae             trained autoencoder weights
    loss_history.csv       epoch,loss
    embeddings.csv         id,split,err,z0..
    calibration.json       distance -> error knots
    fig2a.csv, fig2b.csv   PCA scatter of all / new samples
    fig3.csv               id,nn_dist,err for new samples
    verdicts.csv           id,nn_dist,predicted_err,decision
    fig4_batch{i}.csv      id,pc0,pc1,nn_dist,category (i = 1, 2, ...)
    expansion_summary.csv  per-batch category counts and thresholds
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autoenc, confidence, embedspace, selection, synth
from .config import RunConfig
from .embedspace import EmbeddingSet, fmt_float
from .errors import DataError
from .nnindex import NeighborIndex, leave_self_out_distances, nn_distance
from .rng import derive_seed

log = logging.getLogger(__name__)

CORPUS_FILE = "corpus.ncpc"
MANIFEST_FILE = "corpus_manifest.json"
MODEL_FILE = "model.ncae"
LOSS_FILE = "loss_history.csv"
EMBED_FILE = "embeddings.csv"
CALIB_FILE = "calibration.json"
FIG3_FILE = "fig3.csv"
VERDICT_FILE = "verdicts.csv"
SUMMARY_FILE = "expansion_summary.csv"


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _out(cfg: RunConfig) -> Path:
    path = Path(cfg.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---------------------------------------------------------------------------
# sample roles


def split_roles(ids, splits, holdout_every: int) -> tuple[list[int], list[int], list[int]]:
    """Partition ids into (fitted training, calibration holdout, new).

    With ``holdout_every = n > 0`` every n-th train-split id in ascending order
    (positions n-1, 2n-1, ...) is held out of autoencoder training.
    """
    train = sorted(int(i) for i, s in zip(ids, splits) if s == "train")
    new = sorted(int(i) for i, s in zip(ids, splits) if s == "new")
    if holdout_every <= 0:
        return train, [], new
    fitted = [i for p, i in enumerate(train) if p % holdout_every != holdout_every - 1]
    held = [i for p, i in enumerate(train) if p % holdout_every == holdout_every - 1]
    return fitted, held, new


def embedding_roles(emb: EmbeddingSet, cfg: RunConfig):
    return split_roles(emb.ids, emb.splits, cfg.calibration.holdout_every)


# ---------------------------------------------------------------------------
# generate / train / embed


def generate(cfg: RunConfig) -> str:
    out = _out(cfg)
    (out / "config.json").write_text(cfg.to_json())
    corpus, specs = synth.generate_corpus(cfg.corpus)
    synth.write_corpus(out / CORPUS_FILE, corpus)
    synth.write_manifest(out / MANIFEST_FILE, corpus, specs)
    parts = []
    for split in synth.SPLITS:
        counts = ", ".join(f"{fam}={n}" for fam, n in getattr(cfg.corpus, split).items())
        parts.append(f"{split}: {counts}")
    return f"generated {len(corpus)} clouds x {corpus.n_points} points ({'; '.join(parts)}) -> {out / CORPUS_FILE}"


def train_model(clouds: np.ndarray, cfg: RunConfig, round_index: int = 0):
    """Fresh model trained on ``clouds``; round > 0 derives new seeds (retraining)."""
    model_seed, train_cfg = cfg.model_seed, cfg.train
    if round_index:
        model_seed = derive_seed(cfg.model_seed, round_index)
        train_cfg = replace(cfg.train, seed=derive_seed(cfg.train.seed, round_index))
    model = autoenc.init_model(clouds.shape[1], cfg.z_dim, model_seed)
    return autoenc.train(model, clouds, train_cfg)


def train(cfg: RunConfig, corpus_path=None) -> str:
    out = _out(cfg)
    corpus = synth.read_corpus(corpus_path or out / CORPUS_FILE)
    fitted, held, _ = split_roles(
        corpus.ids, [synth.SPLITS[int(s)] for s in corpus.splits], cfg.calibration.holdout_every
    )
    row_of = {int(i): r for r, i in enumerate(corpus.ids)}
    clouds = corpus.normalized()[[row_of[i] for i in fitted]]
    if len(clouds) == 0:
        raise DataError(f"{corpus_path or out / CORPUS_FILE}: corpus has no train-split clouds")
    model, history = train_model(clouds, cfg)
    autoenc.save_model(out / MODEL_FILE, model)
    _write_csv(out / LOSS_FILE, ["epoch", "loss"], [[i + 1, fmt_float(v)] for i, v in enumerate(history)])
    return (
        f"trained {cfg.train.epochs} epochs on {len(clouds)} clouds ({len(held)} held out): "
        f"loss {history[0]:.6g} -> {history[-1]:.6g} -> {out / MODEL_FILE}"
    )


def embed_corpus(model, corpus) -> EmbeddingSet:
    clouds = corpus.normalized()
    zs = np.stack([autoenc.encode(model, c) for c in clouds])
    errs = np.array([autoenc.reconstruction_error(model, c) for c in clouds])
    return EmbeddingSet(
        [int(i) for i in corpus.ids], [synth.SPLITS[int(s)] for s in corpus.splits], zs, errs
    )


def embed(cfg: RunConfig, corpus_path=None, weights_path=None) -> str:
    out = _out(cfg)
    corpus = synth.read_corpus(corpus_path or out / CORPUS_FILE)
    model = autoenc.load_model(weights_path or out / MODEL_FILE)
    if model.n_points != corpus.n_points:
        raise DataError(
            f"{weights_path or out / MODEL_FILE}: field 'n_points' is {model.n_points} "
            f"but the corpus has {corpus.n_points} points per cloud"
        )
    emb = embed_corpus(model, corpus)
    embedspace.write_embeddings(out / EMBED_FILE, emb)
    return f"embedded {len(emb)} clouds into {emb.dim}-d latent space -> {out / EMBED_FILE}"


# ---------------------------------------------------------------------------
# neighbor space, calibration, scoring


def distance_space(emb: EmbeddingSet, cfg: RunConfig, train_ids=None) -> EmbeddingSet:
    """Vectors used for neighbor distances: raw latents, standardized, or 2-D PCA.

    Standardization and PCA statistics come from ``train_ids`` (default: the
    fitted training samples).
    """
    nc = cfg.neighbors
    if nc.space == "latent" and not nc.standardize:
        return emb
    ids = list(train_ids) if train_ids is not None else embedding_roles(emb, cfg)[0]
    z = emb.z
    if nc.standardize:
        ref = emb.vectors(ids)
        scale = ref.std(axis=0, ddof=1) if len(ids) > 1 else np.ones(z.shape[1])
        scale[scale == 0] = 1.0
        z = (z - ref.mean(axis=0)) / scale
    if nc.space == "pca":
        pca = embedspace.pca_fit(z[[emb.index_of(i) for i in ids]], min(2, z.shape[1]))
        z = embedspace.pca_transform(pca, z)
    return EmbeddingSet(emb.ids, emb.splits, z, emb.errors)


def _require_errors(emb: EmbeddingSet, ids, source) -> None:
    missing = [i for i in ids if math.isnan(emb.error_of(i))]
    if missing:
        raise DataError(f"{source}: field 'err' is empty for id {missing[0]}")


def calibrate(space: EmbeddingSet, train_ids, k: int, holdout_ids=()) -> confidence.DistanceErrorModel:
    """Fit the distance->error map.

    Without holdout ids each training sample is queried against the others
    (excluded from its own query). With holdout ids those samples are queried
    against the training index instead.
    """
    train_ids = list(train_ids)
    holdout_ids = list(holdout_ids)
    if holdout_ids:
        if not train_ids:
            raise DataError("calibration needs at least 1 training sample")
        index = NeighborIndex(train_ids, space.vectors(train_ids))
        kk = min(k, len(index))
        d = [nn_distance(index, v, kk) for v in space.vectors(holdout_ids)]
        return confidence.fit_distance_error(zip(d, (space.error_of(i) for i in holdout_ids)))
    if len(train_ids) < 2:
        raise DataError("calibration needs at least 2 training samples")
    index = NeighborIndex(train_ids, space.vectors(train_ids))
    kk = min(k, len(index) - 1)
    d = leave_self_out_distances(index, train_ids, space.vectors(train_ids), kk)
    return confidence.fit_distance_error(zip(d, (space.error_of(i) for i in train_ids)))


def new_sample_distances(space: EmbeddingSet, k: int, train_ids, new_ids) -> list[tuple[int, float]]:
    train_ids = list(train_ids)
    if not train_ids:
        raise DataError("no training embeddings to index")
    index = NeighborIndex(train_ids, space.vectors(train_ids))
    kk = min(k, len(index))
    return [(i, nn_distance(index, space.vectors([i])[0], kk)) for i in new_ids]


@dataclass
class FitResult:
    calibration: confidence.DistanceErrorModel
    distances: list[tuple[int, float]]
    rho: float


def fit(cfg: RunConfig, embeddings_path=None) -> tuple[str, FitResult]:
    out = _out(cfg)
    src = embeddings_path or out / EMBED_FILE
    emb = embedspace.read_embeddings(src)
    _require_errors(emb, emb.ids, src)
    fitted, held, new = embedding_roles(emb, cfg)
    space = distance_space(emb, cfg)
    model = calibrate(space, fitted, cfg.neighbors.k, held)
    confidence.write_calibration(out / CALIB_FILE, model)
    dists = new_sample_distances(space, cfg.neighbors.k, fitted, new)
    errs = [emb.error_of(i) for i, _ in dists]
    _write_csv(out / FIG3_FILE, ["id", "nn_dist", "err"], [[i, fmt_float(d), fmt_float(e)] for (i, d), e in zip(dists, errs)])
    rho = confidence.rank_correlation([d for _, d in dists], errs) if len(dists) >= 2 else math.nan
    msg = (
        f"calibrated on {model.n_calibration} {'held-out' if held else 'training'} samples ({len(model.knots)} knots); "
        f"spearman rho(nn_dist, err) over {len(dists)} new samples = {rho:.4f}"
    )
    return msg, FitResult(model, dists, rho)


def score(cfg: RunConfig, embeddings_path=None, calibration_path=None, mode: str = "tolerance"):
    """Trust/abstain verdicts for the new split.

    ``mode="tolerance"`` thresholds on the calibrated error tolerance;
    ``mode="budget"`` uses the budget cut, where an empty budget means only
    exact matches of training embeddings are trusted.
    """
    out = _out(cfg)
    src = embeddings_path or out / EMBED_FILE
    emb = embedspace.read_embeddings(src)
    model = confidence.read_calibration(calibration_path or out / CALIB_FILE)
    fitted, _, new = embedding_roles(emb, cfg)
    space = distance_space(emb, cfg)
    dists = new_sample_distances(space, cfg.neighbors.k, fitted, new)
    if mode == "budget":
        threshold, _ = confidence.threshold_from_budget(dists, cfg.budget)
        if cfg.budget == 0:
            threshold = 0.0
    else:
        threshold = confidence.threshold_from_tolerance(model, cfg.tolerance)
    verdicts = [
        confidence.Verdict(i, d, confidence.predict_error(model, d), confidence.TRUSTED if d <= threshold else confidence.ABSTAIN)
        for i, d in dists
    ]
    _write_csv(
        out / VERDICT_FILE,
        ["id", "nn_dist", "predicted_err", "decision"],
        [[v.id, fmt_float(v.nn_dist), fmt_float(v.predicted_error), v.decision] for v in verdicts],
    )
    n_trusted = sum(v.decision == confidence.TRUSTED for v in verdicts)
    shown = "inf (trust everything)" if math.isinf(threshold) else f"{threshold:.6g}"
    msg = f"scored {len(verdicts)} new samples at threshold {shown}: {n_trusted} trusted, {len(verdicts) - n_trusted} abstain"
    return msg, verdicts, threshold


# ---------------------------------------------------------------------------
# selection and reports


def _pca_rows(emb: EmbeddingSet, fit_ids, ids) -> np.ndarray:
    pca = embedspace.pca_fit(emb.vectors(fit_ids), min(2, emb.dim))
    pcs = embedspace.pca_transform(pca, emb.vectors(ids))
    if pcs.shape[1] < 2:
        pcs = np.hstack([pcs, np.zeros((len(ids), 2 - pcs.shape[1]))])
    return pcs


def select(cfg: RunConfig, embeddings_path=None, calibration_path=None, corpus_path=None):
    out = _out(cfg)
    src = embeddings_path or out / EMBED_FILE
    emb = embedspace.read_embeddings(src)
    calib = confidence.read_calibration(calibration_path or out / CALIB_FILE)
    fitted, held, new = embedding_roles(emb, cfg)
    state = selection.ExpansionState(tuple(fitted), tuple(new))
    space = distance_space(emb, cfg)

    latents = {id(space): emb}
    retrain_fn = None
    if cfg.retrain:
        corpus = synth.read_corpus(corpus_path or out / CORPUS_FILE)
        norm = corpus.normalized()
        row_of = {int(i): r for r, i in enumerate(corpus.ids)}

        def retrain_fn(training, round_index):
            clouds = norm[[row_of[i] for i in training]]
            model, _ = train_model(clouds, cfg, round_index)
            fresh = embed_corpus(model, corpus)
            embedspace.write_embeddings(out / f"embeddings_batch{round_index + 1}.csv", fresh)
            sp = distance_space(fresh, cfg, training)
            latents[id(sp)] = fresh
            return sp, calibrate(sp, training, cfg.neighbors.k, held)

    state, reports, spaces = selection.run_expansion(
        state, space, calib, cfg.batches, cfg.budget, cfg.tolerance, cfg.neighbors.k, retrain_fn
    )
    summary = []
    for b, (rep, sp) in enumerate(zip(reports, spaces), start=1):
        ids = [e.id for e in rep.entries]
        training = rep.ids_in(selection.TRAINING)
        # PCA for plotting always uses the latents of the current model
        latent = latents[id(sp)]
        pcs = _pca_rows(latent, training, ids) if len(training) >= 2 else np.zeros((len(ids), 2))
        _write_csv(
            out / f"fig4_batch{b}.csv",
            ["id", "pc0", "pc1", "nn_dist", "category"],
            [[e.id, fmt_float(p[0]), fmt_float(p[1]), fmt_float(e.nn_dist), e.category] for e, p in zip(rep.entries, pcs)],
        )
        c = rep.counts()
        summary.append(
            [b, c[selection.TRAINING], c[selection.NOVEL_TRUSTED], c[selection.INSUFFICIENT_NOVELTY],
             c[selection.NOVEL_ABSTAIN], fmt_float(rep.t_low), fmt_float(rep.t_high)]
        )
    _write_csv(
        out / SUMMARY_FILE,
        ["batch", "training", "novel_trusted", "insufficient_novelty", "novel_abstain", "t_low", "t_high"],
        summary,
    )
    msg = (
        f"expanded over {len(reports)} batches: training {len(fitted)} -> {len(state.training)}, "
        f"pool {len(new)} -> {len(state.pool)}"
    )
    return msg, state, reports


def report(cfg: RunConfig, embeddings_path=None) -> str:
    out = _out(cfg)
    emb = embedspace.read_embeddings(embeddings_path or out / EMBED_FILE)
    fitted, held, _ = embedding_roles(emb, cfg)
    pcs = _pca_rows(emb, fitted, emb.ids)
    # calibration holdouts are not part of the known set shown in the plot
    skip = set(held)
    rows = [
        [i, s, fmt_float(p[0]), fmt_float(p[1])]
        for i, s, p in zip(emb.ids, emb.splits, pcs)
        if i not in skip
    ]
    _write_csv(out / "fig2a.csv", ["id", "split", "pc0", "pc1"], rows)
    new_rows = [
        [i, s, fmt_float(p[0]), fmt_float(p[1]), "" if math.isnan(e) else fmt_float(e)]
        for i, s, p, e in zip(emb.ids, emb.splits, pcs, emb.errors)
        if s == "new"
    ]
    _write_csv(out / "fig2b.csv", ["id", "split", "pc0", "pc1", "err"], new_rows)
    return f"wrote fig2a.csv ({len(rows)} samples) and fig2b.csv ({len(new_rows)} new samples) to {out}"


def run_all(cfg: RunConfig) -> list[str]:
    lines = [generate(cfg), train(cfg), embed(cfg)]
    lines.append(fit(cfg)[0])
    lines.append(score(cfg)[0])
    lines.append(select(cfg)[0])
    lines.append(report(cfg))
    return lines
