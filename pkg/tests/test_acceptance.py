"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> ... PASS|FAIL`` line. The three
long training criteria (4, 5, 8) train for 200 epochs per seed; their results
are cached as JSON under ``tests/acceptance_cache`` keyed by a digest of the
package source (comments and docstrings excluded) and the run settings, so
repeated test runs only retrain after a code change. Set
``WLSSGAN_ACCEPTANCE_RERUN=1`` to ignore the cache.
"""
import ast
import hashlib
import json
import os
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from wlssgan.cli import cmd_train, run_training
from wlssgan.clutter import TEST, TRAIN, ClutterClass, SpectrumParams, make_dataset, sample_rng, synth_spectrum
from wlssgan.config import resolve, train_config
from wlssgan.evaluation import absolute_distance, cosine_similarity, pearson, synthesis_report
from wlssgan.losses import (
    LossConfig,
    adversarial_generator_loss,
    feature_matching_layer,
    joint_feature_matching,
    supervised_loss,
    unsupervised_loss,
    unsupervised_loss_game_value,
    weighted_generator_loss,
)
from wlssgan.models import TAP_SHAPES, Discriminator, Generator
from wlssgan.nn import Tensor, grad_check, no_grad
from wlssgan.trainer import WLSSGANTrainer

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(__file__).parent / "acceptance_cache"
SEEDS = (0, 1, 2)
EPOCHS = 200


@pytest.fixture
def report(capsys):
    def emit(number, name, passed, detail=""):
        with capsys.disabled():
            print(f"\nACCEPTANCE {number} {name}: {'PASS' if passed else 'FAIL'} {detail}".rstrip())

    return emit


# ------------------------------------------------------------ result cache


def _strip_docstrings(tree):
    for node in ast.walk(tree):
        body = getattr(node, "body", None)
        if isinstance(body, list) and body and isinstance(body[0], ast.Expr) and isinstance(getattr(body[0], "value", None), ast.Constant) and isinstance(body[0].value.value, str):
            node.body = body[1:] or [ast.Pass()]
    return tree


def source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted((ROOT / "src" / "wlssgan").rglob("*.py")):
        if path.name in ("cli.py", "plotting.py", "baselines.py"):
            continue  # not on the training / scoring path
        h.update(path.relative_to(ROOT).as_posix().encode())
        h.update(ast.dump(_strip_docstrings(ast.parse(path.read_text()))).encode())
    return h.hexdigest()


def cached(kind: str, settings: dict, compute):
    key = hashlib.sha256(json.dumps({"src": source_digest(), "kind": kind, **settings}, sort_keys=True).encode()).hexdigest()[:20]
    path = CACHE / f"{kind}-{key}.json"
    if path.is_file() and not os.environ.get("WLSSGAN_ACCEPTANCE_RERUN"):
        return json.loads(path.read_text())
    result = compute()
    CACHE.mkdir(exist_ok=True)
    path.write_text(json.dumps({"settings": settings, **result}, indent=1, sort_keys=True))
    return result


def training_run(mode: str, n_lab: int, seed: int) -> dict:
    settings = {"mode": mode, "nlab": n_lab, "seed": seed, "epochs": EPOCHS}

    def compute():
        cfg = resolve({}, dict(settings, plots=False))
        start = time.perf_counter()
        gen, _, rep = run_training(cfg)
        out = {"steady_acc": rep.steady_state_acc, "test_acc": rep.test_acc, "wall_clock": time.perf_counter() - start}
        if gen is not None:
            ds = make_dataset(seed=seed)
            real = ds.train.signals
            untrained = WLSSGANTrainer(ds, train_config(cfg)).G
            out["cs_trained"] = synthesis_report(gen, real, seed=seed).cs
            out["cs_untrained"] = synthesis_report(untrained, real, seed=seed).cs
        return out

    return cached("train", settings, compute)


# ------------------------------------------------------------ 1: gradients


def test_1_gradient_suite(report):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    G, D = Generator(seed=1, dtype=np.float64), Discriminator(seed=2, dtype=np.float64)
    z = Tensor(rng.standard_normal((2, 100, 1)), requires_grad=True)
    x_l = Tensor(rng.uniform(-1, 1, (2, 1, 512)), requires_grad=True)
    x_u = Tensor(rng.uniform(-1, 1, (2, 1, 512)), requires_grad=True)
    y = np.array([0, 2])
    wl = LossConfig(0.7, 0.3, tuple(range(1, 8)))

    def objective():
        drop = np.random.default_rng(5)  # identical dropout masks on every evaluation
        x_g = G(z, training=True, update_stats=False)
        logits_l, _ = D(x_l, training=True, rng=drop, update_stats=False)
        logits_u, taps_u = D(x_u, training=True, rng=drop, update_stats=False)
        logits_g, taps_g = D(x_g, training=True, rng=drop, update_stats=False)
        adv = adversarial_generator_loss(logits_g)
        joint = joint_feature_matching(taps_g, taps_u, wl.l_mul)
        return (
            supervised_loss(logits_l, y)
            + unsupervised_loss(logits_u, logits_g)
            + weighted_generator_loss(adv, joint, wl)
            + adversarial_generator_loss(logits_g, "saturating") * 0.1
            + feature_matching_layer(taps_g[2], taps_u[2]) * 1e-3
        )

    tensors = [z, x_l, x_u] + G.parameters() + D.parameters()
    worst, checked, failures = 0.0, 0, []
    for i, t in enumerate(tensors):
        others = [p for p in tensors if p is not t]
        saved = [p.requires_grad for p in others]
        for p in others:
            p.requires_grad = False
        try:
            # a 1e-5 step on the generator's output layer moves every bin and can push a
            # discriminator pre-activation across a LeakyReLU kink; 1e-6 keeps the
            # difference quotient on one linear piece while staying far above f64 roundoff
            res = grad_check(objective, [t], tolerance=1e-4, step=1e-6, max_coords=8, seed=i)
        finally:
            for p, s in zip(others, saved):
                p.requires_grad = s
        worst = max(worst, res.max_rel_error)
        checked += res.n_checked
        failures += [(t.name or f"input{i}",) + f[1:] for f in res.failures]
    elapsed = time.perf_counter() - start
    passed = not failures and elapsed < 300
    report(1, "gradient suite", passed, f"({checked} coords over {len(tensors)} tensors, max rel err {worst:.2e}, {elapsed:.0f}s)")
    assert not failures, failures[:5]
    assert elapsed < 300


# ------------------------------------------------------------ 2: loss algebra


def test_2_loss_algebra(report):
    rng = np.random.default_rng(1)
    adv, fm = Tensor(rng.normal()), Tensor(rng.normal())
    endpoints = weighted_generator_loss(adv, fm, LossConfig(1.0, 0.0)).item() == adv.item() and (
        weighted_generator_loss(adv, fm, LossConfig(0.0, 1.0)).item() == fm.item()
    )
    D = Discriminator(seed=0, dtype=np.float64)
    with no_grad():
        _, tg = D(Tensor(rng.uniform(-1, 1, (4, 1, 512))), training=False)
        _, tu = D(Tensor(rng.uniform(-1, 1, (4, 1, 512))), training=False)
    singleton = max(
        abs(joint_feature_matching(tg, tu, [l]).item() - feature_matching_layer(tg[l - 1], tu[l - 1]).item() / (2 * c * le))
        for l, (c, le) in enumerate(TAP_SHAPES, start=1)
    )
    game = 0.0
    for _ in range(1000):
        zu, zf = rng.normal(scale=3, size=(8, 4)), rng.normal(scale=3, size=(8, 4))
        game = max(game, abs(unsupervised_loss(Tensor(zu), Tensor(zf)).item() - unsupervised_loss_game_value(zu, zf)))
    passed = endpoints and singleton <= 1e-12 and game <= 1e-12
    report(2, "loss algebra", passed, f"(endpoints exact={endpoints}, singleton {singleton:.1e}, game value {game:.1e})")
    assert endpoints and singleton <= 1e-12 and game <= 1e-12


# ------------------------------------------------------------ 3: shapes


def test_3_shape_suite(report):
    ok = True
    for b in (2, 64):
        G, D = Generator(seed=0), Discriminator(seed=0)
        with no_grad():
            x = G(G.sample_latent(b, np.random.default_rng(0)), training=True)
            logits, taps = D(x, training=True, rng=np.random.default_rng(1))
        ok &= x.shape == (b, 1, 512) and logits.shape == (b, 4)
        ok &= [t.activations.shape for t in taps] == [(b, c, le) for c, le in TAP_SHAPES]
    report(3, "shape suite", ok, "(B = 2, 64)")
    assert ok


# ------------------------------------------------------------ 4, 5, 8: training trends


@pytest.mark.slow
def test_4_semi_supervised_benefit(report):
    wl = [training_run("wlssgan", 30, s) for s in SEEDS]
    sup = [training_run("supervised", 30, s) for s in SEEDS]
    a_wl = float(np.mean([r["steady_acc"] for r in wl]))
    a_sup = float(np.mean([r["steady_acc"] for r in sup]))
    gap = a_wl - a_sup
    slowest = max(r["wall_clock"] for r in wl) / 60
    report(4, "semi-supervised benefit", gap >= 0.05, f"(WL-SSGAN {a_wl:.4f} vs supervised {a_sup:.4f}, gap {100 * gap:+.2f} pts; slowest run {slowest:.1f} min)")
    assert gap >= 0.05


@pytest.mark.slow
def test_5_saturation_trend(report):
    few = float(np.mean([training_run("wlssgan", 30, s)["steady_acc"] for s in SEEDS]))
    many = float(np.mean([training_run("wlssgan", 1500, s)["steady_acc"] for s in SEEDS]))
    report(5, "saturation trend", many >= few, f"(n_lab=1500 {many:.4f} vs n_lab=30 {few:.4f})")
    assert many >= few


@pytest.mark.slow
def test_8_synthesis_sanity(report):
    runs = [training_run("wlssgan", 30, s) for s in SEEDS]
    trained = float(np.mean([r["cs_trained"] for r in runs]))
    untrained = float(np.mean([r["cs_untrained"] for r in runs]))
    report(8, "synthesis sanity", trained - untrained >= 0.2, f"(mean CS trained {trained:.4f} vs untrained {untrained:.4f})")
    assert trained - untrained >= 0.2


# ------------------------------------------------------------ 6: metrics


def test_6_metric_identities(report):
    rng = np.random.default_rng(6)
    worst_id, worst_affine = 0.0, 0.0
    for _ in range(200):
        x, other = rng.uniform(-1, 1, 512), rng.uniform(-1, 1, 512)
        worst_id = max(worst_id, absolute_distance(x, x), abs(cosine_similarity(x, x) - 1), abs(pearson(x, x) - 1))
        a, b = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        worst_affine = max(worst_affine, abs(pearson(x, a * x + b) - 1), abs(pearson(a * x + b, other) - pearson(x, other)))
    passed = worst_id <= 1e-12 and worst_affine <= 1e-12
    report(6, "metric identities", passed, f"(identity err {worst_id:.1e}, affine err {worst_affine:.1e})")
    assert passed


# ------------------------------------------------------------ 7: determinism


def test_7_determinism(report, tmp_path):
    paths = []
    for run in ("a", "b"):
        cfg = resolve({}, dict(iterations=6, seed=3, nlab=30, plots=False, out=str(tmp_path / run)))
        paths.append(cmd_train(cfg))
    same = paths[0].read_bytes() == paths[1].read_bytes()
    report(7, "determinism", same, "(byte-identical report.csv)")
    assert same


# ------------------------------------------------------------ 9: data invariants


def test_9_data_invariants(report):
    ok = True
    for seed in (0, 1, 2):
        ds = make_dataset(seed=seed)
        ok &= ds.class_counts(TRAIN) == {0: 700, 1: 700, 2: 700} and ds.class_counts(TEST) == {0: 300, 1: 300, 2: 300}
        ok &= bool(np.all(ds.signals.min(axis=1) == -1.0) and np.all(ds.signals.max(axis=1) == 1.0))
    clean = replace(SpectrumParams(), amp_jitter=0.0, doppler_jitter=0.0, noise_floor=0.0)
    expected = {ClutterClass.SEA: 2, ClutterClass.LAND: 1, ClutterClass.SEA_LAND: 3}
    for cls, n in expected.items():
        for i in range(20):
            x = synth_spectrum(cls, clean, sample_rng(0, cls, i))
            maxima = int(np.sum((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:])))
            ok &= maxima == n
    report(9, "data invariants", ok, "(balance, [-1, 1] range, noiseless 2/1/3 maxima)")
    assert ok
