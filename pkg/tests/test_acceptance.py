"""Acceptance gate: one test per shipped guarantee.

Every tolerance is pinned as a module constant, and every test prints a
single line with the values it measured, so a log shows the margin and
not just the verdict. Everything here runs on frozen seeds.
"""
import time

import numpy as np
import pytest

from vimem import (
    audit_privacy_fast,
    audit_privacy_naive,
    classify,
    curve_to_csv,
    evaluate_classification,
    fit_pca,
    kmeans,
    knn_search,
    make_mask,
    make_store,
    new_memory,
    privacy_accuracy_curve,
    project,
    proportion_se,
    r2_report,
    r2_score,
    remove_records,
    two_proportion_ztest,
)
from vimem.governance import CurvePoint
from vimem.procgen import (
    MixParams,
    derive_seed,
    generate_dataset,
    gen_texture,
    kml_compose,
    kml_sample,
    make_image,
    mixup,
    read_manifest,
    regenerate_sample,
    kmeans_rgb,
    to_png_bytes,
)

from oracles import (
    eigen_pca,
    gaussian_benchmark,
    mc_knn_accuracy,
    naive_knn_ids,
    normal_equations_r2,
)

# pinned bounds, one block per criterion
KNN_INSTANCES, KNN_MAX_N, KNN_MAX_D, KNN_MAX_K = 100, 2000, 64, 25
KNN_BUDGET_S = 10.0
UNLEARN_TRIPLES = 200
AUDIT_RANDOM, AUDIT_ADVERSARIAL = 50, 10
AUDIT_KS = (1, 3, 10, 25)
AUDIT_BIG_N, AUDIT_BIG_M, AUDIT_BIG_K = 500, 200, 10
SPEEDUP_MIN = 20.0
SE_TOL = 1e-4
R2_GRIDS, R2_TOL, R2_AFFINE_TOL = 50, 1e-9, 1e-7
PCA_TOL = 1e-6
KMEANS_IMAGES = 100
REGEN_SAMPLES = 1000
PROVENANCE_PIXELS = 10_000
E2E_ACCURACY_TOL = 0.02
E2E_SEPARATION = 3.4181789638  # 10-class Bayes accuracy = 95.00%
E2E_CURVE_SEPARATIONS = (1.0, 2.0, 3.0, 4.0)


def test_criterion_knn_exactness():
    rng = np.random.default_rng(20240819)
    t0 = time.perf_counter()
    for i in range(KNN_INSTANCES):
        n = int(rng.integers(1, KNN_MAX_N + 1))
        d = int(rng.integers(1, KNN_MAX_D + 1))
        k = int(rng.integers(1, KNN_MAX_K + 1))
        store = make_store(
            rng.choice(10 * n, n, replace=False),
            rng.standard_normal((n, d)),
            rng.integers(0, 5, n),
        )
        q = rng.standard_normal(d)
        got = knn_search(store, q, k).ids.tolist()
        want = naive_knn_ids(store.vectors, store.ids, q, k)
        assert got == want, f"instance {i}: id order diverged from the exhaustive oracle"
    dt = time.perf_counter() - t0
    assert dt < KNN_BUDGET_S
    print(f"PASS knn-exactness: {KNN_INSTANCES}/{KNN_INSTANCES} instances exact, "
          f"{dt:.2f}s (budget {KNN_BUDGET_S:.0f}s)")


def test_criterion_unlearning_exactness():
    rng = np.random.default_rng(20240820)
    agree = 0
    for _ in range(UNLEARN_TRIPLES):
        n = int(rng.integers(2, 60))
        d = int(rng.integers(1, 9))
        ids = rng.choice(10 * n, n, replace=False)
        vecs = rng.standard_normal((n, d))
        labels = rng.integers(0, 4, n)
        store = make_store(ids, vecs, labels)
        drop = rng.choice(store.ids, size=int(rng.integers(1, n)), replace=False)
        removed = remove_records(new_memory(store), drop.tolist()).store
        keep = ~np.isin(store.ids, drop)
        rebuilt = make_store(store.ids[keep], store.vectors[keep], store.labels[keep])
        q = rng.standard_normal(d)
        k = int(rng.integers(1, len(rebuilt) + 1))
        assert classify(removed, q, k).label == classify(rebuilt, q, k).label
        agree += 1
    print(f"PASS unlearning-exactness: {agree}/{UNLEARN_TRIPLES} "
          f"remove-vs-rebuild classifications agree")


def _reports_equal(a, b) -> bool:
    return (
        a.non_private_ids == b.non_private_ids
        and a.affected == b.affected
        and a.fraction_non_private == b.fraction_non_private
    )


def test_criterion_audit_equivalence_and_speedup():
    rng = np.random.default_rng(20240821)

    # the budget-setting instance doubles as random instance #1
    vecs = rng.standard_normal((AUDIT_BIG_N, 16))
    labels = rng.integers(0, 5, AUDIT_BIG_N)
    memory = new_memory(make_store(np.arange(AUDIT_BIG_N), vecs, labels))
    queries = list(rng.standard_normal((AUDIT_BIG_M, 16)))
    t0 = time.perf_counter()
    fast = audit_privacy_fast(memory, queries, AUDIT_BIG_K)
    t_fast = time.perf_counter() - t0
    t0 = time.perf_counter()
    naive = audit_privacy_naive(memory, queries, AUDIT_BIG_K)
    t_naive = time.perf_counter() - t0
    assert _reports_equal(fast, naive)
    speedup = t_naive / t_fast
    assert speedup >= SPEEDUP_MIN

    for _ in range(AUDIT_RANDOM - 1):
        n = int(rng.integers(2, 120))
        m = int(rng.integers(1, 40))
        d = int(rng.integers(2, 10))
        k = int(rng.choice(AUDIT_KS))
        mem = new_memory(
            make_store(
                rng.choice(10 * n, n, replace=False),
                rng.standard_normal((n, d)),
                rng.integers(0, 4, n),
            )
        )
        qs = list(rng.standard_normal((m, d)))
        assert _reports_equal(audit_privacy_fast(mem, qs, k), audit_privacy_naive(mem, qs, k))

    # adversarial ties: tiny direction alphabets, power-of-two scalings,
    # duplicated vectors, queries drawn from the same alphabet
    for _ in range(AUDIT_ADVERSARIAL):
        d = 3
        alphabet = rng.standard_normal((int(rng.integers(2, 5)), d))
        n = int(rng.integers(4, 60))
        rows = alphabet[rng.integers(0, len(alphabet), n)]
        rows *= 2.0 ** rng.integers(-2, 3, n)[:, None]
        mem = new_memory(
            make_store(rng.choice(10 * n, n, replace=False), rows, rng.integers(0, 3, n))
        )
        qs = list(alphabet[rng.integers(0, len(alphabet), int(rng.integers(1, 10)))])
        for k in AUDIT_KS:
            assert _reports_equal(
                audit_privacy_fast(mem, qs, k), audit_privacy_naive(mem, qs, k)
            )
    print(f"PASS audit-equivalence: {AUDIT_RANDOM} random + {AUDIT_ADVERSARIAL} adversarial "
          f"instances identical; speedup {speedup:.0f}x at N={AUDIT_BIG_N}, M={AUDIT_BIG_M}, "
          f"k={AUDIT_BIG_K} (floor {SPEEDUP_MIN:.0f}x)")


def test_criterion_statistics_reproduction():
    se1 = proportion_se(0.8331, 1720)
    se2 = proportion_se(0.8244, 1720)
    assert abs(se1 - 0.0090) <= SE_TOL
    assert abs(se2 - 0.0092) <= SE_TOL
    z, significant = two_proportion_ztest(0.8331, 1720, 0.8244, 1720)
    assert not significant
    assert abs(z) < 1.96
    print(f"PASS statistics-reproduction: se={se1:.4f}/{se2:.4f} "
          f"(published 0.0090/0.0092 ± {SE_TOL}), z={z:.3f} not significant at 5%")


def test_criterion_r2_oracle():
    rng = np.random.default_rng(20240822)
    worst = 0.0
    for _ in range(R2_GRIDS):
        rows, cols = int(rng.integers(3, 30)), int(rng.integers(3, 30))
        c = int(rng.integers(1, 9))
        feats = rng.standard_normal((rows, cols, c))
        labels = rng.integers(0, int(rng.integers(2, 6)), (rows, cols))
        while np.unique(labels).size < 2:
            labels = rng.integers(0, 3, (rows, cols))
        got = r2_report(feats, make_mask(labels))["r2_raw"]
        want = normal_equations_r2(feats.reshape(-1, c), labels.ravel())
        worst = max(worst, abs(got - want))
    assert worst <= R2_TOL

    labels = rng.integers(0, 3, (10, 10))
    onehot = (labels[:, :, None] == np.arange(3)[None, None, :]).astype(np.float64)
    perfect = r2_score(onehot, make_mask(labels))
    assert abs(perfect - 1.0) <= R2_TOL
    constant = r2_score(np.full((10, 10, 4), 2.5), make_mask(labels))
    assert constant == 0.0

    feats = rng.standard_normal((12, 12, 4))
    mask = make_mask(rng.integers(0, 3, (12, 12)))
    base = r2_score(feats, mask)
    affine_worst = 0.0
    for _ in range(10):
        mix = rng.standard_normal((4, 4))
        while abs(np.linalg.det(mix)) < 1e-3:
            mix = rng.standard_normal((4, 4))
        affine_worst = max(
            affine_worst, abs(r2_score(feats @ mix + rng.standard_normal(4), mask) - base)
        )
    assert affine_worst <= R2_AFFINE_TOL
    print(f"PASS r2-oracle: {R2_GRIDS} grids, max |lib-oracle| {worst:.2e} (tol {R2_TOL}); "
          f"perfect-fit dev {abs(perfect-1.0):.1e}; constant {constant}; "
          f"affine dev {affine_worst:.2e} (tol {R2_AFFINE_TOL})")


def test_criterion_pca_numerics():
    rng = np.random.default_rng(20240823)
    ortho_worst = var_worst = recon_worst = 0.0
    for _ in range(20):
        n = int(rng.integers(10, 80))
        d = int(rng.integers(2, 10))
        x = rng.standard_normal((n, d)) @ rng.standard_normal((d, d))
        model = fit_pca(x, d)
        gram = model.components @ model.components.T
        ortho_worst = max(ortho_worst, float(np.abs(gram - np.eye(d)).max()))
        total = np.trace(np.cov(x.T, ddof=1)) if d > 1 else float(np.var(x, ddof=1))
        var_worst = max(var_worst, abs(model.explained_variance.sum() - total) / total)

        c = max(1, d // 2)
        clipped = fit_pca(x, c)
        w, _ = eigen_pca(x)
        z = project(clipped, x)
        recon = z @ clipped.components + clipped.mean
        err = ((x - recon) ** 2).sum() / (n - 1)
        discarded = w[c:].sum()
        if discarded > 1e-12:
            recon_worst = max(recon_worst, abs(err - discarded) / discarded)
    assert ortho_worst <= PCA_TOL
    assert var_worst <= PCA_TOL
    assert recon_worst <= PCA_TOL
    print(f"PASS pca-numerics: orthonormality {ortho_worst:.2e}, variance conservation "
          f"{var_worst:.2e}, reconstruction identity {recon_worst:.2e} (tol {PCA_TOL})")


def test_criterion_kmeans_monotone_and_separable():
    rng = np.random.default_rng(20240824)
    for _ in range(KMEANS_IMAGES):
        pixels = rng.random((int(rng.integers(8, 20)), int(rng.integers(8, 20)), 3))
        k = int(rng.integers(2, 6))
        res = kmeans(pixels.reshape(-1, 3), k, seed=int(rng.integers(2**31)))
        hist = np.array(res.inertia_history)
        assert (np.diff(hist) <= 1e-9 * np.maximum(hist[:-1], 1e-30)).all()

    data = np.zeros((16, 16, 3))
    data[:, 8:] = [1.0, 0.0, 0.0]
    data[:, :8] = [0.0, 0.0, 1.0]
    mask = kmeans_rgb(make_image(data, {"pipeline": "x", "params": {}, "seed": 0}), 2, seed=1)
    left = set(mask.assignment[:, :8].ravel().tolist())
    right = set(mask.assignment[:, 8:].ravel().tolist())
    assert mask.inertia == 0.0
    assert len(left) == len(right) == 1 and left != right
    print(f"PASS kmeans: inertia monotone on {KMEANS_IMAGES}/{KMEANS_IMAGES} random images; "
          f"separable two-color partition exact with inertia {mask.inertia}")


def test_criterion_procgen_determinism(tmp_path):
    cfg = {"width": 16, "height": 16}
    specs = [
        ("value-noise", cfg, 250),
        ("voronoi", cfg, 250),
        ("kml", cfg, 250),
        ("kml-mixup", cfg, 250),
    ]
    regenerated = 0
    for pipeline, params, count in specs:
        out = tmp_path / pipeline
        generate_dataset(pipeline, params, count, master_seed=606, out_dir=out)
        for row in read_manifest(out / "manifest.jsonl"):
            disk = (out / row["file"]).read_bytes()
            assert to_png_bytes(regenerate_sample(row)) == disk, (pipeline, row["index"])
            regenerated += 1
    assert regenerated == REGEN_SAMPLES

    a = gen_texture("voronoi", cfg, seed=1)
    b = gen_texture("voronoi", cfg, seed=2)
    assert mixup(a, b, MixParams(1.0, 1.0, 0)).data.tobytes() == a.data.tobytes()
    assert mixup(a, b, MixParams(1.0, 0.0, 0)).data.tobytes() == b.data.tobytes()
    mid = mixup(a, b, MixParams(1.0, 0.5, 0))
    assert np.array_equal(mid.data, 0.5 * a.data + 0.5 * b.data)

    rng = np.random.default_rng(20240825)
    pixels_checked = 0
    while pixels_checked < PROVENANCE_PIXELS:
        seed = int(rng.integers(2**31))
        s1 = gen_texture("value-noise", cfg, derive_seed(seed, 1))
        s2 = gen_texture("sine-grating", cfg, derive_seed(seed, 2))
        s3 = gen_texture("gradient-blend", cfg, derive_seed(seed, 3))
        out = kml_compose(s1, s2, s3, K=int(rng.integers(1, 5)), seed=seed)
        from_s2 = (out.data == s2.data).all(axis=2)
        from_s3 = (out.data == s3.data).all(axis=2)
        assert (from_s2 | from_s3).all()
        pixels_checked += out.data.shape[0] * out.data.shape[1]
    print(f"PASS procgen-determinism: {regenerated}/{REGEN_SAMPLES} manifest regenerations "
          f"bit-identical; mixup identities exact; {pixels_checked} composed pixels "
          f"all traced to a source (floor {PROVENANCE_PIXELS})")


def test_criterion_end_to_end_benchmark():
    mem, mlab, q, qlab = gaussian_benchmark(10, 200, 500, E2E_SEPARATION, seed=20240818)
    store = make_store(np.arange(len(mlab)), mem, mlab)
    queries = make_store(np.arange(10**6, 10**6 + len(qlab)), q, qlab)
    accuracy = evaluate_classification(store, queries, 10).accuracy
    expected = mc_knn_accuracy(10, 200, 500, E2E_SEPARATION, k=10, replicates=8, seed=777)
    assert abs(accuracy - expected) <= E2E_ACCURACY_TOL

    points = []
    for i, sep in enumerate(E2E_CURVE_SEPARATIONS):
        m, ml, qq, ql = gaussian_benchmark(10, 30, 150, sep, seed=4242 + i)
        handle = new_memory(make_store(np.arange(len(ml)), m, ml))
        qstore = make_store(np.arange(10**6, 10**6 + len(ql)), qq, ql)
        pt = privacy_accuracy_curve([handle], qstore, 10)[0]
        points.append(CurvePoint(i, pt.accuracy, pt.fraction_non_private))
    fracs = [p.fraction_non_private for p in points]
    assert all(0.0 <= f <= 1.0 for f in fracs)
    assert all(fracs[i] > fracs[i + 1] for i in range(len(fracs) - 1))
    csv_text = curve_to_csv(points)
    lines = csv_text.splitlines()
    assert lines[0] == "memory,accuracy,fraction_non_private"
    assert len(lines) == 1 + len(E2E_CURVE_SEPARATIONS)
    print(f"PASS end-to-end: accuracy {accuracy:.4f} vs MC expectation {expected:.4f} "
          f"(|diff| {abs(accuracy-expected):.4f} <= {E2E_ACCURACY_TOL}); non-private fractions "
          f"{[round(f, 4) for f in fracs]} strictly decreasing over separations "
          f"{list(E2E_CURVE_SEPARATIONS)}")
