"""Acceptance gate: one test per release criterion, each printing a PASS line
with its runtime. Oracles here are purposely independent reimplementations."""
import time
from contextlib import contextmanager

import imageio.v3 as iio
import numpy as np
import pytest

from protochange.baselines import irmad, irmad_baseline, sfa, sfa_baseline
from protochange.config import PipelineConfig
from protochange.cva import kmeans, pca_fit_transform
from protochange.metrics import class_metrics, confusion
from protochange.pipeline import detect, evaluate
from protochange.raster_io import ChangeMask, ImagePair, RasterImage, save_mask
from protochange.refinement import SegmentMap, refine

from conftest import f1_against, make_pair, vanishing_squares_pair


@contextmanager
def criterion(name, limit_seconds):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < limit_seconds, f"{name}: {elapsed:.1f}s exceeded {limit_seconds}s budget"
    print(f"ACCEPTANCE {name}: PASS ({elapsed:.2f}s < {limit_seconds}s)")


def brute_metrics(pred, gt):
    tp = fp = fn = tn = 0
    for r in range(pred.shape[0]):
        for c in range(pred.shape[1]):
            p, g = bool(pred[r, c]), bool(gt[r, c])
            tp += p and g
            fp += p and not g
            fn += (not p) and g
            tn += (not p) and (not g)

    def ratio(a, b):
        return a / b if b > 0 else 0.0

    p1, r1 = ratio(tp, tp + fp), ratio(tp, tp + fn)
    p0, r0 = ratio(tn, tn + fn), ratio(tn, tn + fp)
    return {
        "precision_0": p0,
        "recall_0": r0,
        "f1_0": ratio(2 * p0 * r0, p0 + r0),
        "iou_0": ratio(tn, tn + fn + fp),
        "precision_1": p1,
        "recall_1": r1,
        "f1_1": ratio(2 * p1 * r1, p1 + r1),
        "iou_1": ratio(tp, tp + fp + fn),
        "acc": ratio(tp + tn, tp + fp + fn + tn),
    }


def test_metrics_oracle():
    rng = np.random.default_rng(2024)
    with criterion("metrics-oracle", 5.0):
        for _ in range(200):
            pred = rng.random((32, 32)) > rng.random()
            gt = rng.random((32, 32)) > rng.random()
            got = class_metrics(confusion(ChangeMask(pred), ChangeMask(gt)))
            assert got == brute_metrics(pred, gt)


def test_pca_suite():
    rng = np.random.default_rng(11)
    with criterion("pca-suite", 10.0):
        for _ in range(50):
            x = rng.normal(size=(500, 8)) * rng.uniform(0.5, 3.0, size=8)
            model, _ = pca_fit_transform(x, 8)
            gram = model.components @ model.components.T
            assert np.abs(gram - np.eye(8)).max() < 1e-8
            assert np.all(np.diff(model.explained_variance) <= 1e-12)
            eigvals = np.sort(np.linalg.eigvalsh(np.cov(x, rowvar=False)))[::-1]
            assert np.abs(model.explained_variance - eigvals).max() < 1e-8

            centered = x - x.mean(axis=0)
            pc1_var = centered @ model.components[0]
            pc1_var = (pc1_var**2).sum()
            for _ in range(100):
                u = rng.normal(size=8)
                u /= np.linalg.norm(u)
                assert pc1_var >= ((centered @ u) ** 2).sum() - 1e-9


def exhaustive_two_partition(x):
    n = len(x)
    best = np.inf
    for bits in range(1, 2 ** (n - 1)):
        mask = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        inertia = 0.0
        for part in (x[mask], x[~mask]):
            if len(part) == 0:
                inertia = np.inf
                break
            inertia += ((part - part.mean(axis=0)) ** 2).sum()
        best = min(best, inertia)
    return best


def test_kmeans_suite():
    rng = np.random.default_rng(5)
    with criterion("kmeans-suite", 20.0):
        for trial in range(50):
            x = rng.normal(size=(40, 3))
            result = kmeans(x, k=3, seed=trial)
            assert np.all(np.diff(np.array(result.inertia_history)) <= 1e-12)

        blob_a = rng.normal(size=(30, 2))  # sigma 1, centers 10 sigма apart
        blob_b = rng.normal(size=(30, 2)) + np.array([10.0, 0.0])
        x = np.vstack([blob_a, blob_b])
        for seed in range(20):
            labels = kmeans(x, k=2, seed=seed).labels
            assert len(set(labels[:30].tolist())) == 1
            assert len(set(labels[30:].tolist())) == 1
            assert labels[0] != labels[30]

        local_optimum_cases = []
        for instance in range(5):
            gen = np.random.default_rng(100 + instance)
            # Two loose clumps ~3 sigma apart: competing partitions exist but
            # the global basin is reachable for a multi-start Lloyd.
            x = np.vstack(
                [gen.normal(size=(7, 2)), gen.normal(size=(5, 2)) + gen.normal(3.0, 0.3, size=2)]
            )
            optimal = exhaustive_two_partition(x)
            hits = 0
            for seed in range(20):
                result = kmeans(x, k=2, seed=seed)
                if result.inertia <= optimal * (1 + 1e-9) + 1e-12:
                    hits += 1
                else:
                    local_optimum_cases.append(
                        (instance, seed, float(result.inertia), float(optimal))
                    )
            assert hits >= 18, f"instance {instance}: {hits}/20 optimal"
        if local_optimum_cases:
            print(f"  local-optimum cases: {local_optimum_cases}")


def rank_auc(scores, labels):
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    s = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    pos = labels.astype(bool)
    n_pos, n_neg = pos.sum(), (~pos).sum()
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def test_irmad_criteria():
    rng = np.random.default_rng(21)
    with criterion("irmad", 30.0):
        pre = rng.random((64, 64, 3)) * 0.4
        _, mask = irmad_baseline(make_pair(pre, 2.0 * pre + 0.1))
        assert not mask.values.any()

        pre = np.clip(rng.normal(0.5, 0.1, size=(128, 128, 3)), 0, 1)
        post = np.clip(pre + rng.normal(0.0, 0.01, size=pre.shape), 0, 1)
        changed = rng.random((128, 128)) < 0.05
        post[changed] = np.clip(post[changed] + 0.5, 0, 1)
        result = irmad(make_pair(pre, post), max_iter=60)
        auc = rank_auc(result.score.scores.ravel(), changed.ravel())
        assert auc > 0.95, f"AUC {auc:.4f}"
        cert = result.certificate()
        assert cert["deltas"], "certificate must record correlation movement"
        assert cert["converged"] and cert["final_delta"] < 1e-6


def test_sfa_criteria():
    rng = np.random.default_rng(31)
    with criterion("sfa", 10.0):
        pre = rng.random((64, 64, 4))
        post = np.clip(pre + rng.normal(0, 0.05, size=pre.shape), 0, 1)
        result = sfa(make_pair(pre, post))
        for j, lam in enumerate(result.eigenvalues):
            w = result.eigenvectors[:, j]
            residual = result.diff_cov @ w - lam * (result.mean_cov @ w)
            assert np.linalg.norm(residual) < 1e-6

        pre = rng.random((48, 48, 3)) * 0.4 + 0.1
        post = np.clip(pre + rng.normal(0, 0.04, size=pre.shape), 0.0, 0.7)
        _, mask_a = sfa_baseline(make_pair(pre, post))
        scale = np.array([1.2, 0.25, 0.9])
        offset = np.array([0.02, 0.05, 0.0])
        _, mask_b = sfa_baseline(make_pair(pre * scale + offset, post * scale + offset))
        assert np.array_equal(mask_a.values, mask_b.values)


def test_refinement_criteria():
    rng = np.random.default_rng(41)
    with criterion("refinement", 5.0):
        for _ in range(10):
            labels = np.zeros((30, 30), dtype=np.int32)
            sid = 1
            for r in range(0, 30, 6):
                for c in range(0, 30, 10):
                    labels[r : r + 6, c : c + 10] = sid
                    sid += 1
            seg = SegmentMap(labels)
            coarse = ChangeMask(rng.random((30, 30)) > 0.5)
            out = refine(coarse, seg, threshold=0.6)
            for kept in np.unique(labels[out.values]):
                assert out.values[labels == kept].all()

        labels = np.zeros((20, 20), dtype=np.int32)
        labels[0:10, 0:10] = 1
        seg = SegmentMap(labels)
        coarse = np.zeros((20, 20), dtype=bool)
        coarse[0:7, 0:10] = True  # exactly 70 of 100
        assert not refine(ChangeMask(coarse), seg, threshold=0.7).values.any()
        coarse[7, 0] = True  # 71 of 100
        out = refine(ChangeMask(coarse), seg, threshold=0.7)
        assert out.values.sum() == 100

        labels = np.zeros((40, 40), dtype=np.int32)
        sid = 1
        for r in range(0, 40, 8):
            for c in range(0, 40, 8):
                labels[r : r + 8, c : c + 8] = sid
                sid += 1
        seg = SegmentMap(labels)
        coarse = ChangeMask(rng.random((40, 40)) > 0.4)
        prev = None
        for t in np.sort(rng.random(20)):
            count = refine(coarse, seg, threshold=float(t)).values.sum()
            if prev is not None:
                assert count <= prev
            prev = count


def test_end_to_end_synthetic_pucd():
    with criterion("end-to-end-pucd", 60.0):
        pair, gt = vanishing_squares_pair(256, 256, [(28, 28), (98, 128), (128, 70)])
        refined_mask, report = detect(pair, PipelineConfig(seed=7))
        coarse_mask, _ = detect(pair, PipelineConfig(seed=7, refine_enabled=False))
        refined_f1 = f1_against(refined_mask.values, gt.values)
        coarse_f1 = f1_against(coarse_mask.values, gt.values)
        assert refined_f1 >= 0.90, f"refined F1 {refined_f1:.4f}"
        assert refined_f1 >= coarse_f1, f"{refined_f1:.4f} < {coarse_f1:.4f}"
        assert not report.degenerate
        print(f"  refined F1 {refined_f1:.4f}, coarse F1 {coarse_f1:.4f}")


def test_determinism(tmp_path):
    with criterion("determinism", 60.0):
        pair, _ = vanishing_squares_pair(140, 140, [(28, 28), (84, 70), (28, 98)])
        artifacts = []
        for run in range(2):
            mask, report = detect(pair, PipelineConfig(seed=7))
            mask_path = tmp_path / f"mask{run}.png"
            report_path = tmp_path / f"report{run}.json"
            save_mask(mask, mask_path)
            report.save(report_path)
            artifacts.append((mask_path.read_bytes(), report_path.read_bytes()))
        assert artifacts[0] == artifacts[1]


def test_baseline_comparison_harness(tmp_path):
    with criterion("baseline-harness", 180.0):
        root = tmp_path / "dataset"
        squares = [(28, 28), (84, 70), (28, 98), (84, 14), (14, 42)]
        for sub in ("A", "B", "label"):
            (root / sub).mkdir(parents=True)
        for i in range(5):
            pair, gt = vanishing_squares_pair(140, 140, squares[: 1 + i % 3], tone=0.68 + 0.01 * i)
            iio.imwrite(root / "A" / f"s{i}.png", (pair.pre.data * 255).astype(np.uint8), extension=".png")
            iio.imwrite(root / "B" / f"s{i}.png", (pair.post.data * 255).astype(np.uint8), extension=".png")
            iio.imwrite(root / "label" / f"s{i}.png", np.where(gt.values, 255, 0).astype(np.uint8), extension=".png")

        methods = ["pucd", "pucd-nosam", "cva", "pcakmeans", "irmad", "sfa"]
        report = evaluate(root, methods, PipelineConfig(seed=7), out_dir=tmp_path / "masks")
        for method in methods:
            block = report.methods[method]
            assert block["failed"] == [], f"{method} failures: {block['failed']}"
            assert len(block["samples"]) == 5
            assert block["aggregate"] is not None
        header = report.table.splitlines()[0]
        for column in ("Method", "Pre. (0/1)", "Rec. (0/1)", "F1 (0/1)", "IoU (0/1)", "ACC"):
            assert column in header
        print()
        print(report.table)
