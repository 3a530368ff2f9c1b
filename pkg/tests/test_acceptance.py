"""Acceptance gate. Each test records one pass/fail line that the session
summary prints (see conftest.py), then asserts."""
import itertools
import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE
from mdf import numcore as nc
from mdf.cli import EXIT_INPUT, EXIT_OK, main
from mdf.config import packaged
from mdf.data import batches, generate, weighted_sample_stream
from mdf.fuse import fit_fusion
from mdf.io import IntegrityError, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from mdf.losses import (FocalConfig, SwdConfig, class_conditional_swd, cross_entropy,
                        focal_loss, mdf_loss, swd)
from mdf.model import EO, SAR, ArchConfig, forward, init_twin
from mdf.numcore import Tensor
from mdf.train import evaluate, fit_split_fusion, train_mdf

F64 = np.float64


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)


# 1. sliced Wasserstein against exact and quadrature oracles

def _w2_exact(a, b):
    return math.sqrt(np.mean((np.sort(a) - np.sort(b)) ** 2))


def _fibonacci_sphere(n):
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], 1)


def test_criterion_1_swd_oracles():
    t0 = time.perf_counter()
    r = np.random.default_rng(2024)
    worst_1d = 0.0
    for trial in range(200):
        n, z = int(r.integers(1, 65)), int(r.integers(1, 9))
        a = r.standard_normal((n, z)) * r.uniform(0.1, 5)
        b = r.standard_normal((n, z)) * r.uniform(0.1, 5) + r.uniform(-3, 3)
        if z == 1:
            got = float(swd(a, b, SwdConfig(num_slices=4, seed=trial)))
            want = _w2_exact(a[:, 0], b[:, 0])
        else:
            # one slice: the estimator is the exact 1-D distance along that direction
            cfg = SwdConfig(num_slices=1, seed=trial)
            d = np.random.default_rng(trial).standard_normal((1, z))[0]
            d /= np.linalg.norm(d)
            got = float(swd(a, b, cfg))
            want = _w2_exact(a @ d, b @ d)
        worst_1d = max(worst_1d, abs(got - want))

    # translated clouds: every slice gives |<theta, t>|, averaged over the sphere
    rel = []
    a2 = r.standard_normal((64, 2))
    t2 = np.array([1.2, -0.7])
    ang = (np.arange(200000) + 0.5) * 2 * np.pi / 200000
    oracle2 = np.mean(np.abs(np.cos(ang) * t2[0] + np.sin(ang) * t2[1]))
    rel.append(abs(float(swd(a2, a2 + t2, SwdConfig(10000, seed=1))) / oracle2 - 1))
    a3 = r.standard_normal((64, 3))
    t3 = np.array([0.4, 1.0, -2.0])
    oracle3 = np.mean(np.abs(_fibonacci_sphere(200000) @ t3))
    rel.append(abs(float(swd(a3, a3 + t3, SwdConfig(10000, seed=2))) / oracle3 - 1))
    elapsed = time.perf_counter() - t0
    ok = worst_1d < 1e-6 and max(rel) < 0.02 and elapsed < 30
    record(1, ok, f"max 1-D error {worst_1d:.2e}; quadrature rel. error "
                  f"{max(rel):.4f}; {elapsed:.1f}s")
    assert ok


# 2. gradients against central differences

def _fd_worst(fn, params):
    analytic = nc.grad(fn, params, dtype=F64)
    numeric = nc.central_difference(lambda *p: float(fn(*[Tensor(x) for x in p]).data),
                                    params, step=1e-5)
    return max(float(nc.relative_error(a, n).max()) for a, n in zip(analytic, numeric))


def _twin_fixture(r, trial):
    arch = ArchConfig(input_dim=5, hidden=(6,), latent_dim=3, n_classes=3,
                      unit_norm=bool(trial % 2))
    twin = init_twin(arch, trial)
    params = [p.astype(F64) + 0.05 * r.standard_normal(p.shape) for p in twin.parameters()]
    return twin, params


def test_criterion_2_gradient_checks():
    t0 = time.perf_counter()
    r = np.random.default_rng(7)
    worst = {}
    components = ("focal", "swd", "conditional_swd", "mdf_loss", "twin_forward")
    for trial, name in zip(range(100), itertools.cycle(components)):
        k, n, z = int(r.integers(2, 5)), int(r.integers(3, 9)), int(r.integers(1, 4))
        cfg = SwdConfig(num_slices=6, seed=trial)
        if name == "focal":
            y = r.integers(0, k, n)
            g = float(r.uniform(0, 3))
            err = _fd_worst(lambda x: focal_loss(x, y, FocalConfig(g)), [r.standard_normal((n, k))])
        elif name == "swd":
            err = _fd_worst(lambda a, b: swd(a, b, cfg),
                            [r.standard_normal((n, z)), r.standard_normal((n, z))])
        elif name == "conditional_swd":
            ya, yb = r.integers(0, 2, 2 * n), r.integers(0, 2, 2 * n)
            err = _fd_worst(lambda a, b: class_conditional_swd(a, ya, b, yb, cfg),
                            [r.standard_normal((2 * n, z)), r.standard_normal((2 * n, z))])
        elif name == "mdf_loss":
            y1, y2 = r.integers(0, k, n), r.integers(0, k, n)
            lam, eta = r.uniform(0.1, 2, 2)
            err = _fd_worst(
                lambda l1, l2, h1, h2, u1, u2: mdf_loss(l1, y1, l2, y2, h1, h2, u1, u2, lam, eta,
                                                        swd_cfg=cfg).total,
                [r.standard_normal((n, k)), r.standard_normal((n, k))]
                + [r.standard_normal((n, z)) for _ in range(4)])
        else:
            twin, params = _twin_fixture(r, trial)
            xe, xs, y = r.standard_normal((n, 5)), r.standard_normal((n, 5)), r.integers(0, 3, n)

            def loss(*leaves):
                m = twin.with_parameters(leaves)
                he, le = forward(m, Tensor(xe), EO)
                hs, ls = forward(m, Tensor(xs), SAR)
                return mdf_loss(le, y, ls, y, he, hs, he, hs, 1.0, 1.0, swd_cfg=cfg).total

            err = _fd_worst(loss, params)
        worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    record(2, ok, "max rel. error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
           + f"; {elapsed:.1f}s")
    assert ok


# 3. focal with gamma 0 is cross-entropy

def test_criterion_3_focal_reduces_to_cross_entropy():
    r = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        n, k = int(r.integers(1, 65)), int(r.integers(2, 11))
        logits = r.standard_normal((n, k)) * r.uniform(0.1, 10)
        y = r.integers(0, k, n)
        worst = max(worst, abs(float(focal_loss(logits, y, FocalConfig(0.0, 1.0)))
                               - float(cross_entropy(logits, y))))
    record(3, worst < 1e-9, f"max |focal - CE| {worst:.2e} over 1000 batches")
    assert worst < 1e-9


# 4. alignment gradients never reach the heads

def test_criterion_4_alignment_gradients_skip_the_heads():
    r = np.random.default_rng(4)
    arch = ArchConfig(input_dim=64, hidden=(32,), latent_dim=8, n_classes=10)
    twin = init_twin(arch, 0)
    xe, xs = r.standard_normal((40, 64)), r.standard_normal((40, 64))
    ue, us = r.standard_normal((40, 64)), r.standard_normal((40, 64)) + 0.5
    y = r.integers(0, 10, 40)
    params = [p.astype(F64) for p in twin.parameters()]

    def alignment(*leaves):
        m = twin.with_parameters(leaves)
        he, le = forward(m, Tensor(xe), EO)
        hs, ls = forward(m, Tensor(xs), SAR)
        br = mdf_loss(le, y, ls, y, he, hs, forward(m, Tensor(ue), EO)[0],
                      forward(m, Tensor(us), SAR)[0], 1.0, 1.0)
        return br.lam * br.marginal_swd + br.eta * br.conditional_swd

    grads = nc.grad(alignment, params, dtype=F64)
    n_enc = len(twin.eo_encoder.arrays())
    eo_head = grads[n_enc:n_enc + 2]
    sar_head = grads[-2:]
    encoders = grads[:n_enc] + grads[n_enc + 2:-2]
    heads_zero = all(np.all(g == 0) for g in eo_head + sar_head)
    encoders_live = all(np.any(g != 0) for g in encoders[::2])
    ok = heads_zero and encoders_live
    record(4, ok, f"head gradients exactly zero: {heads_zero}; encoder gradients non-zero: "
                  f"{encoders_live}")
    assert ok


# 5. sampler law

def test_criterion_5_sampler_is_class_uniform():
    bundle = generate(**packaged().data.generate_kwargs())
    counts = bundle.train.class_counts(10)
    draws = np.fromiter((c for c, _ in itertools.islice(weighted_sample_stream(counts, 5), 100000)),
                        dtype=np.int64, count=100000)
    tv_stream = 0.5 * np.abs(np.bincount(draws, minlength=10) / 1e5 - 0.1).sum()
    stream = batches(bundle, batch_size=100, seed=5, use_unlabeled=False)
    labels = np.concatenate([next(stream).labeled.labels for _ in range(1000)])
    tv_batches = 0.5 * np.abs(np.bincount(labels, minlength=10) / len(labels) - 0.1).sum()
    ok = counts.max() / counts.min() >= 100 and max(tv_stream, tv_batches) <= 0.02
    record(5, ok, f"counts {counts.min()}..{counts.max()}; TV stream {tv_stream:.4f}, "
                  f"batches {tv_batches:.4f} at 1e5 draws")
    assert ok


# 6. fusion weights against a grid search

def _grid_oracle(p1, p2, t):
    # objective sum((w1 p1 + w2 p2 - t)^2) expanded into its inner products
    a11, a22, a12 = np.sum(p1 * p1), np.sum(p2 * p2), np.sum(p1 * p2)
    b1, b2, c = np.sum(p1 * t), np.sum(p2 * t), np.sum(t * t)

    def best(lo1, hi1, lo2, hi2, step):
        w1 = np.arange(lo1, hi1 + step / 2, step)[:, None]
        w2 = np.arange(lo2, hi2 + step / 2, step)[None, :]
        f = a11 * w1 ** 2 + a22 * w2 ** 2 + 2 * a12 * w1 * w2 - 2 * b1 * w1 - 2 * b2 * w2 + c
        i, j = np.unravel_index(np.argmin(f), f.shape)
        return w1[i, 0], w2[0, j]

    c1, c2 = best(-3, 3, -3, 3, 1e-2)
    return best(c1 - 0.02, c1 + 0.02, c2 - 0.02, c2 + 0.02, 1e-3)


def test_criterion_6_fusion_optimality():
    r = np.random.default_rng(6)
    worst, residual_ok = 0.0, True
    for _ in range(50):
        n, k = int(r.integers(20, 200)), int(r.integers(2, 11))
        y = r.integers(0, k, n)
        t = np.eye(k)[y]
        m1, m2 = r.uniform(0, 0.9, 2)
        p1 = (1 - m1) * r.dirichlet(np.ones(k), n) + m1 * t
        p2 = (1 - m2) * r.dirichlet(np.ones(k), n) + m2 * t
        w = fit_fusion(p1, p2, y)
        g1, g2 = _grid_oracle(p1, p2, t)
        worst = max(worst, abs(w.w1 - g1), abs(w.w2 - g2))
        residual_ok &= w.residual <= min(np.sum((p1 - t) ** 2), np.sum((p2 - t) ** 2)) + 1e-9
    ok = worst <= 2e-3 and residual_ok
    record(6, ok, f"max |w - grid| {worst:.1e}; fused residual <= single-branch: {residual_ok}")
    assert ok


# 7 and 8. trends on the default bundle

VARIANTS = {
    "supervised": dict(lam=0.0, eta=0.0, use_unlabeled=False),
    "semi_supervised": {},
    "imbalanced": dict(twin=False, use_curation=False, use_sampler=False),
    "curated": dict(twin=False),
}


@pytest.fixture(scope="module")
def trend_runs():
    rc = packaged()
    bundle = generate(**rc.data.generate_kwargs())
    t0 = time.perf_counter()
    out = {}
    for name, over in VARIANTS.items():
        rows = []
        for seed in range(5):
            cfg = replace(rc.train, init_seed=seed, train_seed=seed, **over)
            model, _ = train_mdf(bundle, cfg)
            res = evaluate(model, bundle.test,
                           fit_split_fusion(model, bundle.val) if cfg.twin else None)
            rows.append((res[SAR].top1, res["fused"].top1 if "fused" in res else np.nan))
        out[name] = np.array(rows)
    return out, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_7_ablation_trend(trend_runs):
    runs, elapsed = trend_runs
    sar = {k: v[:, 0].mean() for k, v in runs.items()}
    gain_semi = 100 * (sar["semi_supervised"] - sar["supervised"])
    gain_cur = 100 * (sar["curated"] - sar["imbalanced"])
    ok = gain_semi >= 2 and gain_cur >= 2 and elapsed < 20 * 60
    record(7, ok, f"semi {sar['semi_supervised']:.3f} vs supervised {sar['supervised']:.3f} "
                  f"({gain_semi:+.1f} pts); curated {sar['curated']:.3f} vs imbalanced "
                  f"{sar['imbalanced']:.3f} ({gain_cur:+.1f} pts); {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_8_fusion_trend(trend_runs):
    runs, _ = trend_runs
    semi = runs["semi_supervised"]
    wins = int(np.sum(semi[:, 1] >= semi[:, 0]))
    record(8, wins >= 4, f"fused >= SAR in {wins}/5 seeds (fused {semi[:, 1].mean():.3f}, "
                         f"SAR {semi[:, 0].mean():.3f})")
    assert wins >= 4


# 9 and 10. determinism and formats through the command line

@pytest.fixture(scope="module")
def cli_runs(tmp_path_factory):
    d = tmp_path_factory.mktemp("accept")
    assert main(["generate", "--out", str(d / "data.mdfd")]) == EXIT_OK
    for run in ("a", "b"):
        assert main(["train", "--dataset", str(d / "data.mdfd"), "--out", str(d / run)]) == EXIT_OK
    return d


@pytest.mark.slow
def test_criterion_9_training_is_deterministic(cli_runs):
    same = {name: (cli_runs / "a" / name).read_bytes() == (cli_runs / "b" / name).read_bytes()
            for name in ("checkpoint.mdfc", "history.csv")}
    ok = all(same.values())
    record(9, ok, "byte-identical " + ", ".join(f"{k}: {v}" for k, v in same.items()))
    assert ok


def test_criterion_10_formats(cli_runs, tmp_path):
    data = cli_runs / "data.mdfd"
    bundle = load_dataset(data)
    save_dataset(bundle, tmp_path / "copy.mdfd")
    dataset_exact = ((tmp_path / "copy.mdfd").read_bytes() == data.read_bytes()
                     and (tmp_path / "copy.mdfd.json").read_text()
                     == (cli_runs / "data.mdfd.json").read_text())
    model, header = load_checkpoint(cli_runs / "a" / "checkpoint.mdfc")
    extra = {k: header[k] for k in ("seeds", "mode")}
    save_checkpoint(model, tmp_path / "copy.mdfc", extra=extra)
    checkpoint_exact = ((tmp_path / "copy.mdfc").read_bytes()
                        == (cli_runs / "a" / "checkpoint.mdfc").read_bytes())

    raw = data.read_bytes()
    r = np.random.default_rng(10)
    detected = 0
    positions = r.integers(0, len(raw), 20)
    for pos in positions:
        bad = bytearray(raw)
        bad[pos] ^= 1 << int(r.integers(8))
        (tmp_path / "bad.mdfd").write_bytes(bytes(bad))
        (tmp_path / "bad.mdfd.json").write_text((cli_runs / "data.mdfd.json").read_text())
        try:
            load_dataset(tmp_path / "bad.mdfd")
        except IntegrityError:
            detected += 1
    cli_code = main(["train", "--dataset", str(tmp_path / "bad.mdfd"),
                     "--out", str(tmp_path / "never")])
    ok = dataset_exact and checkpoint_exact and detected == len(positions) and cli_code == EXIT_INPUT
    record(10, ok, f"dataset round-trip exact: {dataset_exact}; checkpoint round-trip exact: "
                   f"{checkpoint_exact}; corruptions detected {detected}/{len(positions)}; "
                   f"train on corrupted data exits {cli_code}")
    assert ok
