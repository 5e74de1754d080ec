"""Acceptance gate: one test per criterion, each reporting a PASS/FAIL line.

Criteria 5-8 share one run of the built-in demo config; criterion 11 reruns
it in a second directory and compares the trees byte for byte.
"""

import csv
import itertools
import json
import math
import time

import numpy as np

from conftest import ACCEPTANCE_LINES, STEP_SECONDS
from neighbor_confidence import autoenc, confidence, embedspace, pipeline, synth
from neighbor_confidence.autoenc import layer_shapes
from neighbor_confidence.nnindex import NeighborIndex, query_nearest

# per-batch (Training, NovelTrusted, InsufficientNovelty, NovelAbstain) of the
# demo expansion, pinned from the first verified run
DEMO_GOLDEN_COUNTS = [(300, 0, 136, 64), (364, 26, 72, 38)]


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# oracles


def brute_chamfer(a, b):
    def one_way(p, q):
        total = 0.0
        for x in p:
            total += min((x[0] - y[0]) ** 2 + (x[1] - y[1]) ** 2 + (x[2] - y[2]) ** 2 for y in q)
        return total / len(p)

    return one_way(a, b) + one_way(b, a)


def linear_scan(ids, pts, q, k):
    acc = np.zeros(len(pts))
    for j in range(pts.shape[1]):
        diff = q[j] - pts[:, j]
        acc = acc + diff * diff
    ranked = sorted((float(np.sqrt(s)), int(i)) for s, i in zip(acc, ids))
    return ranked[:k]


def exhaustive_isotonic(y):
    n = len(y)
    best, best_fit = math.inf, None
    for cuts in itertools.product((False, True), repeat=n - 1):
        bounds = [0] + [i + 1 for i, c in enumerate(cuts) if c] + [n]
        values = [sum(y[a:b]) / (b - a) for a, b in zip(bounds, bounds[1:])]
        if any(v1 > v2 for v1, v2 in zip(values, values[1:])):
            continue
        fit = [v for (a, b), v in zip(zip(bounds, bounds[1:]), values) for _ in range(b - a)]
        sse = sum((yi - fi) ** 2 for yi, fi in zip(y, fit))
        if sse < best:
            best, best_fit = sse, fit
    return best_fit


# ---------------------------------------------------------------------------
# 1-4, 9, 10: component checks


def test_criterion_01_chamfer_oracle():
    rng = np.random.default_rng(101)
    pairs = [(rng.normal(size=(rng.integers(1, 9), 3)), rng.normal(size=(rng.integers(1, 9), 3))) for _ in range(200)]
    t0 = time.perf_counter()
    got = [synth.chamfer_distance(a, b) for a, b in pairs]
    elapsed = time.perf_counter() - t0
    worst = max(abs(g - brute_chamfer(a, b)) for g, (a, b) in zip(got, pairs))
    record(1, worst <= 1e-12 and elapsed < 1.0, f"max |diff| {worst:.2e} (tol 1e-12), {elapsed:.3f}s (< 1s)")


def test_criterion_02_kdtree_exact():
    rng = np.random.default_rng(102)
    ids = rng.permutation(10_000)[:1000]
    pts = rng.normal(size=(1000, 16))
    queries = rng.normal(size=(200, 16))
    t0 = time.perf_counter()
    index = NeighborIndex(ids, pts)
    got = [[(h.distance, h.id) for h in query_nearest(index, q, 1)] for q in queries]
    elapsed = time.perf_counter() - t0
    mismatches = sum(g != linear_scan(ids, pts, q, 1) for g, q in zip(got, queries))
    record(2, mismatches == 0 and elapsed < 1.0, f"{mismatches} mismatches in 200 queries (ids and bit-equal distances), {elapsed:.3f}s (< 1s)")


def test_criterion_03_gradient_check():
    t0 = time.perf_counter()
    model = autoenc.init_model(8, 4, 303)
    rng = np.random.default_rng(303)
    for b in model.biases:
        b[:] = rng.normal(scale=0.1, size=b.shape)
    clouds = rng.normal(size=(2, 8, 3))
    _, _, grad = autoenc.loss_and_gradient(model, clouds)
    params, grads = model.parameters(), grad.parameters()
    sizes = [p.size for p in params]
    offsets = np.cumsum([0] + sizes)
    picks = rng.choice(offsets[-1], size=60, replace=False)
    h = 1e-5
    worst = 0.0
    failures = 0
    for flat in picks:
        j = int(np.searchsorted(offsets, flat, side="right") - 1)
        arr, local = params[j].reshape(-1), int(flat - offsets[j])
        old = arr[local]
        arr[local] = old + h
        up = autoenc.loss_and_gradient(model, clouds)[0]
        arr[local] = old - h
        down = autoenc.loss_and_gradient(model, clouds)[0]
        arr[local] = old
        numeric = (up - down) / (2 * h)
        analytic = grads[j].reshape(-1)[local]
        err = abs(analytic - numeric)
        scale = max(abs(analytic), abs(numeric))
        if err > max(1e-4 * scale, 1e-8):
            failures += 1
        if scale > 1e-8:
            worst = max(worst, err / scale)
    elapsed = time.perf_counter() - t0
    assert sum(sizes) == sum(r * c + r for r, c in layer_shapes(8, 4))
    record(3, failures == 0 and elapsed < 10.0,
           f"60 parameters, {failures} outside tolerance, worst rel err {worst:.2e} (tol 1e-4), {elapsed:.2f}s (< 10s)")


def test_criterion_04_permutation_invariance():
    model = autoenc.init_model(64, 16, 404)
    rng = np.random.default_rng(404)
    cloud = synth.normalize_cloud(rng.normal(size=(64, 3)))
    ref = autoenc.encode(model, cloud).tobytes()
    same = sum(autoenc.encode(model, cloud[rng.permutation(64)]).tobytes() == ref for _ in range(20))
    record(4, same == 20, f"{same}/20 permutations give bit-identical latents")


def test_criterion_09_pca(demo_run):
    variances = [4.0, 1.0, 0.25, 0.0625, 0.015625]
    d, n = len(variances), 2 * len(variances)
    rows = []
    for i, v in enumerate(variances):
        e = np.zeros(d)
        e[i] = math.sqrt(v * (n - 1) / 2.0)
        rows += [e, -e]
    pca = embedspace.pca_fit(np.array(rows), d)
    eig_err = float(np.max(np.abs(pca.explained_variance - variances)))
    ortho_err = float(np.max(np.abs(pca.components @ pca.components.T - np.eye(d))))
    rng = np.random.default_rng(909)
    rand = embedspace.pca_fit(rng.normal(size=(60, 8)) * np.arange(1, 9), 8)
    ortho_err = max(ortho_err, float(np.max(np.abs(rand.components @ rand.components.T - np.eye(8)))))
    sorted_ok = bool(np.all(np.diff(rand.explained_variance) <= 0) and np.all(np.diff(pca.explained_variance) <= 0))
    with open(demo_run / "fig2a.csv") as fh:
        header = fh.readline().strip().split(",")
    pcs = [h for h in header if h.startswith("pc")]
    ok = eig_err <= 1e-9 and ortho_err <= 1e-9 and sorted_ok and pcs == ["pc0", "pc1"]
    record(9, ok, f"eigenvalue err {eig_err:.1e}, orthonormality err {ortho_err:.1e} (tol 1e-9), "
                  f"non-increasing {sorted_ok}, fig2a components {pcs}")


def test_criterion_10_isotonic_oracle():
    rng = np.random.default_rng(1010)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        y = rng.uniform(0, 1, size=n).tolist()
        worst = max(worst, float(np.max(np.abs(confidence.isotonic_values(y) - exhaustive_isotonic(y)))))
        if n >= 2:
            # the calibration fit on distinct distances carries the same block values
            model = confidence.fit_distance_error(zip(np.arange(1.0, n + 1), y))
            values = [v for _, v in model.knots]
            oracle = sorted(set(exhaustive_isotonic(y)))
            worst = max(worst, max(min(abs(v - o) for o in oracle) for v in values))
    record(10, worst <= 1e-10, f"100 instances, max |PAVA - exhaustive| {worst:.1e} (tol 1e-10)")


# ---------------------------------------------------------------------------
# 5-8, 11: the demo run


def test_criterion_05_training_efficacy(demo_run):
    losses = [float(r["loss"]) for r in read_rows(demo_run / "loss_history.csv")]
    model = autoenc.load_model(demo_run / "model.ncae")
    manifest = json.loads((demo_run / "corpus_manifest.json").read_text())["clouds"]
    cfg = json.loads((demo_run / "config.json").read_text())
    fitted, _, _ = pipeline.split_roles(
        [c["id"] for c in manifest], [c["split"] for c in manifest], cfg["calibration"]["holdout_every"]
    )
    family = {c["id"]: c["family"] for c in manifest}
    families = {family[i] for i in fitted}
    n_fit = len(fitted)
    seconds = STEP_SECONDS[demo_run]["train"]
    ratio = losses[-1] / losses[0]
    ok = (n_fit == 300 and len(losses) == 500 and model.n_points == 64 and families == {"sphere", "ellipsoid"}
          and ratio <= 0.5 and seconds < 300)
    record(5, ok, f"{n_fit} sphere/ellipsoid clouds, 500 epochs: loss {losses[0]:.4g} -> {losses[-1]:.4g} "
                  f"(ratio {ratio:.3f} <= 0.5), {seconds:.0f}s (< 5 min)")


def test_criterion_06_trend(demo_run):
    rows = read_rows(demo_run / "fig3.csv")
    manifest = {c["id"]: c["family"] for c in json.loads((demo_run / "corpus_manifest.json").read_text())["clouds"]}
    fams = [manifest[int(r["id"])] for r in rows]
    n_id = sum(f in ("sphere", "ellipsoid") for f in fams)
    n_ood = sum(f in ("box", "cylinder") for f in fams)
    rho = confidence.rank_correlation([float(r["nn_dist"]) for r in rows], [float(r["err"]) for r in rows])
    record(6, n_id == 100 and n_ood == 100 and rho >= 0.5,
           f"{n_id} in-distribution + {n_ood} OoD, spearman rho {rho:.4f} (>= 0.5)")


def test_criterion_07_abstention_benefit(demo_run):
    err = {int(r["id"]): float(r["err"]) for r in read_rows(demo_run / "embeddings.csv")}
    verdicts = read_rows(demo_run / "verdicts.csv")
    trusted = [err[int(v["id"])] for v in verdicts if v["decision"] == "Trusted"]
    abstain = [err[int(v["id"])] for v in verdicts if v["decision"] == "Abstain"]
    pool = trusted + abstain
    if not trusted or not abstain:
        record(7, False, f"degenerate split: {len(trusted)} trusted, {len(abstain)} abstain")
    mt, mp, ma = np.mean(trusted), np.mean(pool), np.mean(abstain)
    record(7, mt <= mp <= ma,
           f"mean err trusted {mt:.4f} ({len(trusted)}) <= pool {mp:.4f} ({len(pool)}) <= abstain {ma:.4f} ({len(abstain)})")


def test_criterion_08_expansion(demo_run, demo_rerun):
    batches = [read_rows(demo_run / f"fig4_batch{b}.csv") for b in (1, 2)]
    cfg = json.loads((demo_run / "config.json").read_text())
    budget = cfg["budget"]
    problems = []
    counts = []
    for b, rows in enumerate(batches, start=1):
        cats = [r["category"] for r in rows]
        ids = [int(r["id"]) for r in rows]
        if len(set(ids)) != len(ids):
            problems.append(f"batch {b}: duplicate ids")
        c = tuple(cats.count(k) for k in ("Training", "NovelTrusted", "InsufficientNovelty", "NovelAbstain"))
        counts.append(c)
        if sum(c) != len(rows) or c[0] + c[1] + c[2] + c[3] != 500:
            problems.append(f"batch {b}: categories do not partition the 500 samples")
        if c[1] + c[3] > budget:
            problems.append(f"batch {b}: selected {c[1] + c[3]} > budget {budget}")
    before = {int(r["id"]): float(r["nn_dist"]) for r in batches[0] if r["category"] == "InsufficientNovelty"}
    after = {int(r["id"]): float(r["nn_dist"]) for r in batches[1] if r["category"] != "Training"}
    if set(before) != set(after):
        problems.append("remaining pool changed membership")
    increased = sum(after[i] > before[i] for i in before if i in after)
    if increased:
        problems.append(f"{increased} pool distances increased")
    names = ["fig4_batch1.csv", "fig4_batch2.csv", "expansion_summary.csv"]
    identical = all((demo_run / n).read_bytes() == (demo_rerun / n).read_bytes() for n in names)
    if not identical:
        problems.append("reports differ across reruns")
    if counts != DEMO_GOLDEN_COUNTS:
        problems.append(f"counts {counts} != golden {DEMO_GOLDEN_COUNTS}")
    record(8, not problems, "; ".join(problems) or
           f"counts {counts} match golden, budget {budget} respected, pool nn_dist non-increasing, reports byte-identical")


def test_criterion_11_determinism(demo_run, demo_rerun):
    def tree(root):
        return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}

    a, b = tree(demo_run), tree(demo_rerun)
    differing = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    record(11, not differing and len(a) > 10, f"{len(a)} files compared, differing: {differing or 'none'}")
