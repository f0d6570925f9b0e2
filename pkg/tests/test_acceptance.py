"""Acceptance criteria 1-8, each test printing a one-line verdict.

Criteria 5-7 train real models (about 10 minutes on one CPU core). The
pretrained models are shared through a module fixture.
"""
import hashlib
import math
import time

import numpy as np
import pytest

from ddt import encoder
from ddt.augment import augment_finetune, augment_pretrain, hflip, spatial_mixup
from ddt.checkpoint import Checkpoint
from ddt.encoder import Arch, Batch, ConvLayer, finite_diff_check, init_encoder
from ddt.gaussian_ot import FullGaussian, GaussianEmbedding, w2_diag_identity, w2_full
from ddt.ppm import decode_ppm, encode_ppm
from ddt.prototype import build_prototype, component_distance
from ddt.protocol import TrainConfig, evaluate, fewshot_sweep, pretrain
from ddt.synthdata import generate_domain, preset, write_dataset

SEEDS = range(10)
SHOTS = (0, 5, 10, 25, 50, 100)
EPOCHS = 50


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


# 1. closed-form W2 against oracles and metric axioms

def test_criterion_1_wasserstein_oracles(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_id = worst_1d = 0.0
    metric_ok = True
    for _ in range(1000):
        k = int(rng.integers(1, 33))
        mu, s, m = rng.normal(0, 2, k), rng.uniform(0.01, 5, k), rng.integers(0, 2, k).astype(float)
        a = w2_diag_identity(GaussianEmbedding(mu, s), m)
        b = w2_full(FullGaussian(mu, s), FullGaussian(m, np.ones(k)))
        worst_id = max(worst_id, rel(a, b))

        m1, m2 = rng.normal(0, 3, 2)
        s1, s2 = rng.uniform(0.05, 4, 2)
        w = w2_full(FullGaussian([m1], [s1 ** 2]), FullGaussian([m2], [s2 ** 2]))
        worst_1d = max(worst_1d, rel(w ** 2, (m1 - m2) ** 2 + (s1 - s2) ** 2))

        p, q, r = (FullGaussian(rng.normal(0, 2, k), rng.uniform(0.01, 5, k)) for _ in range(3))
        pq, qp, pr, rq = w2_full(p, q), w2_full(q, p), w2_full(p, r), w2_full(r, q)
        metric_ok &= pq == qp and pq >= 0 and w2_full(p, p) == 0.0 and pq <= pr + rq + 1e-12
    elapsed = time.perf_counter() - t0
    ok = worst_id <= 1e-9 and worst_1d <= 1e-12 and metric_ok and elapsed < 1.0
    report(1, ok, f"identity-prototype rel {worst_id:.1e}, 1-D rel {worst_1d:.1e}, "
                  f"metric axioms {'hold' if metric_ok else 'violated'}, {elapsed:.2f} s")
    assert ok


# 2. gradient gate

def test_criterion_2_gradient_gate(report):
    t0 = time.perf_counter()
    archs = [encoder.tiny_arch(), Arch(8, 3, (ConvLayer(3, 4, padding=0),), ()), encoder.tiny_arch(),
             Arch(8, 3, (ConvLayer(3, 3), ConvLayer(3, 5)), (6, 5)), encoder.tiny_arch()]
    errors = []
    for seed, arch in enumerate(archs):
        params = init_encoder(arch, 4, 2, seed, head=True)
        data = np.random.default_rng(100 + seed)
        batch = Batch(data.random((4, 8, 8, 3)), np.array([0, 1, 1, 0]))
        proto = build_prototype(2, 4)
        errors.append((finite_diff_check(params, batch, proto, loss="ddt"),
                       finite_diff_check(params, batch, proto, loss="ce")))

    def doubled(params, batch, proto, floor=1e-6):
        loss, grads = encoder.ddt_loss_and_grad(params, batch, proto, floor)
        grads = grads.copy()
        grads[np.argmax(np.abs(grads))] *= 2.0
        return loss, grads

    params = init_encoder(archs[0], 4, 2, 0)
    batch = Batch(np.random.default_rng(100).random((4, 8, 8, 3)), np.array([0, 1, 1, 0]))
    mutant = finite_diff_check(params, batch, build_prototype(2, 4), grad_fn=doubled)
    elapsed = time.perf_counter() - t0
    worst = max(max(e) for e in errors)
    ok = worst <= 1e-4 and mutant > 1e-4 and elapsed < 30
    report(2, ok, f"{len(errors)} networks, worst rel {worst:.1e}, mutant rel {mutant:.2f}, {elapsed:.1f} s")
    assert ok


# 3. prototype layout

def test_criterion_3_prototypes(report):
    problems = []
    for c, k in ((2, 4), (2, 16), (2, 256), (4, 8)):
        proto = build_prototype(c, k)
        p = k // c
        means = proto.means
        if not np.isin(means, (0.0, 1.0)).all():
            problems.append(f"({c},{k}) not binary")
        if not (means.sum(axis=1) == p).all():
            problems.append(f"({c},{k}) wrong block size")
        if not (means.sum(axis=0) <= 1).all():
            problems.append(f"({c},{k}) overlapping supports")
        for i in range(c):
            for j in range(c):
                if i != j and component_distance(proto, i, j) != math.sqrt(2 * p):
                    problems.append(f"({c},{k}) distance {i}-{j}")
    report(3, not problems, "all four layouts exact" if not problems else "; ".join(problems))
    assert not problems


# 4. augmentation exactness

def test_criterion_4_augmentation(report):
    rng = np.random.default_rng(4)
    fails = []
    for _ in range(200):
        h, w = int(rng.integers(2, 20)), 2 * int(rng.integers(1, 10))
        a, b = rng.random((h, w, 3)), rng.random((h, w, 3))
        out = spatial_mixup(a, b)
        if not (np.array_equal(out[:, : w // 2], a[:, : w // 2]) and np.array_equal(out[:, w // 2:], b[:, w // 2:])):
            fails.append("column exactness")
        if not np.array_equal(spatial_mixup(a, a), a):
            fails.append("self-mix")
        if not np.array_equal(hflip(hflip(a)), a):
            fails.append("flip involution")
    images, labels = rng.random((16, 8, 8, 3)), np.arange(16) % 2
    pool = {0: rng.random((5, 8, 8, 3)), 1: rng.random((5, 8, 8, 3))}
    first = augment_pretrain(images, labels, pool, np.random.default_rng(9))
    second = augment_pretrain(images, labels, pool, np.random.default_rng(9))
    if first.tobytes() != second.tobytes():
        fails.append("pretrain determinism")
    for img, src, y in zip(first, images, labels):
        # pixels come from the sample itself or its own class pool: label preserved
        if not np.isin(img, np.concatenate([src.ravel(), pool[y].ravel()])).all():
            fails.append("label preservation")
    ft = [augment_finetune(images[0], pool[0], np.random.default_rng(2)).tobytes() for _ in range(2)]
    if ft[0] != ft[1]:
        fails.append("finetune determinism")
    report(4, not fails, "mixup, self-mix, flip, labels, seeds exact" if not fails else ", ".join(sorted(set(fails))))
    assert not fails


# 5-7. trained models

@pytest.fixture(scope="module")
def benchmark():
    source = generate_domain(preset("A", 0, 500, 100, 100))
    target = generate_domain(preset("B", 1, 500, 100))
    proto = build_prototype(2, 16)
    models, timings = {}, {}
    for seed in SEEDS:
        for name, cfg in (("ddt", TrainConfig(mode="ddt", max_epochs=EPOCHS, seed=seed)),
                          ("ce", TrainConfig(mode="ce", max_epochs=EPOCHS, seed=seed)),
                          ("ddt_nomix", TrainConfig(mode="ddt", max_epochs=EPOCHS, seed=seed, p_mix=0.0))):
            t0 = time.perf_counter()
            models[name, seed], _ = pretrain(cfg, source, proto)
            timings[name, seed] = time.perf_counter() - t0
    return dict(source=source, target=target, proto=proto, models=models, timings=timings)


def zero_shot(bench, name):
    return [evaluate(bench["models"][name, s], bench["proto"], bench["target"]).accuracy for s in SEEDS]


def test_criterion_5_source_learnability(benchmark, report):
    proto, source = benchmark["proto"], benchmark["source"]
    accs = [evaluate(benchmark["models"]["ddt", s], proto, source).accuracy for s in SEEDS]
    slowest = max(benchmark["timings"]["ddt", s] for s in SEEDS)
    rerun, _ = pretrain(TrainConfig(mode="ddt", max_epochs=EPOCHS, seed=0), source, proto)
    deterministic = rerun.to_bytes() == benchmark["models"]["ddt", 0].to_bytes()
    ok = min(accs) >= 0.95 and slowest < 600 and deterministic
    report(5, ok, f"source test accuracy min {min(accs):.3f} over {len(accs)} seeds, "
                  f"slowest pretrain {slowest:.0f} s, rerun {'bit-identical' if deterministic else 'differs'}")
    assert ok


def test_criterion_6_transfer_trend(benchmark, report):
    t0 = time.perf_counter()
    ddt, ce = np.mean(zero_shot(benchmark, "ddt")), np.mean(zero_shot(benchmark, "ce"))
    per_k = {k: [] for k in SHOTS}
    for s in SEEDS:
        res = fewshot_sweep(benchmark["models"]["ddt", s], benchmark["source"], benchmark["target"], SHOTS,
                            runs=1, config=TrainConfig(seed=s), proto=benchmark["proto"])
        for row in res.rows:
            per_k[row.shots].append(row.accuracy)
    means = [float(np.mean(per_k[k])) for k in SHOTS]
    drops = [100 * (a - b) for a, b in zip(means, means[1:]) if b < a]
    sweep_time = time.perf_counter() - t0
    total = sweep_time + sum(benchmark["timings"][n, s] for n in ("ddt", "ce") for s in SEEDS)
    a = ddt >= ce
    b = means[-1] - means[0] >= 0.05
    c = len(drops) <= 1 and all(d <= 2.0 for d in drops)
    ok = a and b and c and total < 3600
    trend = " ".join(f"{k}:{100 * m:.1f}" for k, m in zip(SHOTS, means))
    report(6, ok, f"(a) zero-shot DDT {100 * ddt:.1f}% vs CE {100 * ce:.1f}%; (b)+(c) shots->mean% {trend}; "
                  f"{total / 60:.1f} min")
    assert a, "DDT zero-shot mean below the cross-entropy baseline"
    assert b, "k=100 does not beat zero-shot by 5 points"
    assert c, f"non-monotone few-shot means: drops {drops}"
    assert total < 3600


def test_criterion_7_mixup_effect(benchmark, report):
    mixed, plain = np.mean(zero_shot(benchmark, "ddt")), np.mean(zero_shot(benchmark, "ddt_nomix"))
    ok = mixed >= plain
    report(7, ok, f"zero-shot A->B with mixup {100 * mixed:.1f}% vs without {100 * plain:.1f}%")
    assert ok


# 8. determinism and round-trips

def digest_tree(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism_and_io(tmp_path, report):
    checks = {}
    spec = preset("B", 5, 20, 10, 5, image_size=16)
    a, b = generate_domain(spec), generate_domain(spec)
    write_dataset(a, tmp_path / "a")
    write_dataset(b, tmp_path / "b")
    checks["datasets"] = a.images.tobytes() == b.images.tobytes() and digest_tree(tmp_path / "a") == digest_tree(
        tmp_path / "b")

    arch = Arch(16, 3, (ConvLayer(3, 4), ConvLayer(4, 6)), (8,))
    proto = build_prototype(2, 4)
    cfg = TrainConfig(max_epochs=2, finetune_max_epochs=2, batch_size=8, seed=3)
    source = generate_domain(preset("A", 0, 20, 10, 5, image_size=16))
    c1, _ = pretrain(cfg, source, proto, arch)
    c2, _ = pretrain(cfg, source, proto, arch)
    checks["checkpoints"] = c1.to_bytes() == c2.to_bytes()
    csv1 = fewshot_sweep(c1, source, a, (0, 2, 4), runs=2, config=cfg).to_csv()
    csv2 = fewshot_sweep(c2, source, b, (0, 2, 4), runs=2, config=cfg).to_csv()
    checks["sweep CSVs"] = csv1 == csv2
    checks["checkpoint round-trip"] = Checkpoint.from_bytes(c1.to_bytes()).to_bytes() == c1.to_bytes()
    ppm_ok = True
    for img in a.images[:20]:
        data = encode_ppm(img)
        ppm_ok &= encode_ppm(decode_ppm(data)) == data
    checks["PPM round-trip"] = ppm_ok
    bad = [k for k, v in checks.items() if not v]
    report(8, not bad, "datasets, checkpoints, CSVs bit-identical; round-trips byte-exact" if not bad
           else "mismatch: " + ", ".join(bad))
    assert not bad
