"""End-to-end acceptance checks.

Each test prints one ``PASS``/``FAIL`` line; run with ``pytest tests/test_acceptance.py -s``
to see them. Tolerances and runtime budgets are fixed here and never relaxed.
"""

import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from morf import DORFClassifier, MORFClassifier
from morf import forest as fst
from morf.archive import load_model, save_model
from morf.backbone import Backbone, BackboneConfig
from morf.data import SynthConfig, kfold_split, synthesize
from morf.gfs import feature_statistics, partition_features, sample_assignment
from morf.meta import (
    TrainConfig, fit_dorf, init_state, meta_gradient, meta_loss_grad, run_training,
    weighted_train_loss,
)
from morf.ordinal import encode_label, is_monotone
from morf.twwnet import WeightNet

from gradcheck import numerical_grad, rel_error


def report(name, ok, detail):
    print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


# routing

def test_routing_normalization():
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for depth in range(1, 5):
        n_splits = 2 ** depth - 1
        F = rng.normal(0, 3, size=(1000, 16))
        eta = np.stack([rng.choice(16, n_splits, replace=False) for _ in range(4)])
        mu, _ = fst.route(F, eta, depth)
        worst = max(worst, float(np.max(np.abs(mu.sum(-1) - 1.0))))
    elapsed = time.perf_counter() - start
    report("routing normalization", worst <= 1e-12 and elapsed < 1.0,
           f"max |sum-1| = {worst:.2e} (tol 1e-12), {elapsed:.3f}s (budget 1s)")


# gradient suite

def _backbone_case(rng):
    cfg = BackboneConfig(int(rng.integers(2, 5)), (int(rng.integers(2, 6)),), int(rng.integers(3, 7)),
                         ["relu", "tanh"][int(rng.integers(2))], int(rng.integers(1000)))
    bb = Backbone(cfg)
    theta = bb.init_params()
    X = rng.normal(size=(4, cfg.input_dim))
    W = rng.normal(size=(4, cfg.feature_dim))
    F, cache = bb.forward(X, theta)
    g_theta, g_x = bb.backward(W, cache, theta)
    e1 = rel_error(g_theta, numerical_grad(lambda t: np.sum(W * bb.forward(X, t)[0]), theta))
    e2 = rel_error(g_x, numerical_grad(lambda x: np.sum(W * bb.forward(x, theta)[0]), X))
    return max(e1, e2)


def _tree_case(rng):
    depth, T, D, K = int(rng.integers(1, 4)), int(rng.integers(1, 4)), 8, int(rng.integers(2, 5))
    eta = fst.random_assignment(T, 2 ** depth - 1, D, rng)
    leaves = fst.project_monotone(rng.uniform(0.05, 0.95, (T, 2 ** depth, K - 1)))
    F = rng.normal(size=(5, D))
    o = encode_label(rng.integers(1, K + 1, 5), K)
    c = rng.uniform(0.5, 1.5, size=(5, T))

    def loss(F_):
        mu, _ = fst.route(F_, eta, depth)
        return np.sum(c * fst.tree_loss(fst.tree_predict(mu, leaves), o))

    mu, cache = fst.route(F, eta, depth)
    g = fst.tree_predict(mu, leaves)
    dF = fst.split_gradients(c[..., None] * fst.tree_loss_grad(g, o), cache, leaves)
    e1 = rel_error(dF, numerical_grad(loss, F))
    e2 = rel_error(fst.tree_loss_grad(g, o), numerical_grad(lambda g_: np.sum(fst.tree_loss(g_, o)), g))
    return max(e1, e2)


def _weightnet_case(rng):
    T, H = int(rng.integers(1, 4)), int(rng.integers(1, 6))
    net = WeightNet(T, H)
    phi = net.init_params(rng, tied=False) + rng.normal(0, 0.3, (T, 3 * H + 1))
    R = rng.uniform(0.1, 3.0, size=(6, T))
    U = rng.normal(size=(6, T))
    V, cache = net.weight(R, phi)
    dphi, dR = net.weight_gradients(U, cache, phi)
    e1 = rel_error(dphi, numerical_grad(lambda p: np.sum(U * net.weight(R, p)[0]), phi))
    e2 = rel_error(dR, numerical_grad(lambda r: np.sum(U * net.weight(r, phi)[0]), R))
    return max(e1, e2)


def _tiny_state(seed, D=8, T=2, depth=2, H=4, input_dim=3, hidden=(5,), K=3, n=6):
    cfg = TrainConfig(n_trees=T, depth=depth, hidden_dims=hidden, feature_dim=D, weight_hidden=H, seed=seed)
    st = init_state(input_dim, K, cfg)
    rng = np.random.default_rng(seed + 100)
    st.phi = st.phi + rng.normal(0, 0.5, st.phi.shape)
    st.theta = st.theta + rng.normal(0, 0.3, st.theta.shape)
    st.forest.leaves = fst.project_monotone(rng.uniform(0.05, 0.95, st.forest.leaves.shape))
    X = rng.normal(size=(n, input_dim))
    o = encode_label(rng.integers(1, K + 1, n), K)
    return st, X, o, rng


def _composite_case(seed):
    st, X, o, _ = _tiny_state(seed)
    tl = weighted_train_loss(st.backbone, st.theta, st.forest, st.weight_net, st.phi, X, o)
    f = lambda th: weighted_train_loss(st.backbone, th, st.forest, st.weight_net, st.phi, X, o).value
    return rel_error(tl.grad, numerical_grad(f, st.theta))


def test_gradient_suite():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    unit = [case(rng) for case in (_backbone_case, _tree_case, _weightnet_case) for _ in range(30)]
    composite = [_composite_case(s) for s in range(30)]
    elapsed = time.perf_counter() - start
    n = len(unit) + len(composite)
    ok = max(unit) <= 1e-6 and max(composite) <= 1e-5 and n >= 100 and elapsed < 30
    report("gradient suite", ok,
           f"{n} instances, unit max rel err {max(unit):.2e} (tol 1e-6), "
           f"composite max {max(composite):.2e} (tol 1e-5), {elapsed:.1f}s (budget 30s)")


# bilevel

def test_bilevel_exactness():
    start = time.perf_counter()
    worst, count = 0.0, 0
    for seed in range(10):
        D, T, depth = 8 - seed % 3, 1 + seed % 2, 1 + seed % 2
        st, X, o, _ = _tiny_state(seed, D=D, T=T, depth=depth, H=3)
        lr = 0.5

        def composite(phi):
            tl = weighted_train_loss(st.backbone, st.theta, st.forest, st.weight_net, phi, X, o)
            return meta_loss_grad(st.backbone, st.theta - lr * tl.grad, st.forest, X, o)[0]

        _, dphi, _ = meta_gradient(st.backbone, st.theta, st.forest, st.forest, st.weight_net, st.phi,
                                   X, o, X, o, lr)
        worst = max(worst, rel_error(dphi, numerical_grad(composite, st.phi, h=1e-5)))
        count += 1
    elapsed = time.perf_counter() - start
    report("bilevel exactness", worst <= 1e-4 and elapsed < 30,
           f"{count} instances (D<=8, T<=2, depth<=2), max rel err {worst:.2e} (tol 1e-4), {elapsed:.1f}s (budget 30s)")


# leaf update

def test_leaf_update():
    rng = np.random.default_rng(2)
    start = time.perf_counter()
    worst_drop, monotone = 0.0, True
    for _ in range(50):
        depth, T, K, n = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 6)), 40
        F = rng.normal(0, 2, size=(n, 8))
        eta = fst.random_assignment(T, 2 ** depth - 1, 8, rng)
        mu, _ = fst.route(F, eta, depth)
        o = encode_label(rng.integers(1, K + 1, n), K)
        leaves = fst.project_monotone(rng.uniform(0.05, 0.95, (T, 2 ** depth, K - 1)))
        pi, hist = fst.update_leaf_distributions(mu, o, leaves, sweeps=20, track=True)
        scale = np.maximum(np.abs(hist[:-1]), 1.0)
        worst_drop = max(worst_drop, float(np.max((hist[:-1] - hist[1:]) / scale)))
        monotone &= bool(np.all(is_monotone(pi)))
    o = encode_label(rng.integers(1, 4, 500), 3)
    pi = fst.update_leaf_distributions(np.ones((500, 1, 1)), o, np.full((1, 1, 2), 0.5))
    single_err = float(np.max(np.abs(pi[0, 0] - o.mean(0))))
    elapsed = time.perf_counter() - start
    ok = worst_drop <= 1e-12 and monotone and single_err <= 1e-3 and elapsed < 10
    report("leaf update", ok,
           f"50 instances, largest relative loglik drop {worst_drop:.1e} (float rounding only), "
           f"rows monotone={monotone}, single-leaf err {single_err:.1e} (tol 1e-3), {elapsed:.2f}s (budget 10s)")


# GFS

def test_gfs_properties():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    problems = []
    for D, N in ((256, 7), (256, 15), (64, 63), (10, 3), (8, 8)):
        stats = feature_statistics(rng.normal(size=(16, D)))
        groups = partition_features(stats, N)
        joined = np.concatenate(groups)
        if sorted(joined.tolist()) != list(range(D)):
            problems.append(f"coverage D={D} N={N}")
        if any(stats[a].min() < stats[b].max() for a, b in zip(groups, groups[1:])):
            problems.append(f"locality D={D} N={N}")
        sizes = [len(g) for g in groups]
        if max(sizes) - min(sizes) > 1:
            problems.append(f"sizes D={D} N={N}")
        eta = sample_assignment(groups, 10_000, rng)
        for n, g in enumerate(groups):
            if not np.isin(eta[:, n], g).all():
                problems.append(f"node {n} left its group")
            freq = np.array([np.mean(eta[:, n] == f) for f in g])
            if np.max(np.abs(freq - 1.0 / len(g))) > 0.02:
                problems.append(f"uniformity D={D} N={N} node {n}")
    elapsed = time.perf_counter() - start
    report("GFS properties", not problems and elapsed < 5,
           f"coverage/locality/sizes/uniformity over 10000 draws, problems={problems or 'none'}, "
           f"{elapsed:.2f}s (budget 5s)")


# equivalence

def test_morf_reduces_to_dorf():
    ds = synthesize(SynthConfig(320, 6, 3, 0.3, 4))
    base = TrainConfig(n_trees=3, depth=2, hidden_dims=(16,), feature_dim=24, weight_hidden=8, epochs=1, seed=9)
    forced = replace(base, unit_weights=True, use_meta=False, use_gfs=False)

    def trajectory(cfg):
        st = init_state(6, 3, cfg)
        steps = []
        run_training(ds.X, ds.y, 3, cfg, state=st, callback=lambda rec: steps.append(st.theta.tobytes()))
        return st, steps

    s_m, traj_m = trajectory(forced)
    s_d, log_d = fit_dorf(ds.X, ds.y, 3, base)
    # the baseline run, replayed with snapshots under the config fit_dorf derives from ``base``
    _, traj_d = trajectory(s_d.config)
    same = traj_m == traj_d and len(traj_m) == 20 and s_m.theta.tobytes() == s_d.theta.tobytes()
    same = same and s_d.config.unit_weights and not s_d.config.use_meta
    report("MORF/DORF equivalence", same and len(log_d) == 20,
           f"20 iterations, theta trajectories bit-identical={same}")


# comparative trend

SEEDS = range(5)
FIXTURE_EPOCHS = 20


def test_comparative_trend():
    start = time.perf_counter()
    acc = {"MORF": [], "DORF": []}
    var = {"MORF": [], "DORF": []}
    for seed in SEEDS:
        ds = synthesize(SynthConfig(2625, 32, 3, 0.3, seed))
        train, test = kfold_split(ds.y, 5, seed)[0]
        for name, cls in (("DORF", DORFClassifier), ("MORF", MORFClassifier)):
            est = cls(epochs=FIXTURE_EPOCHS, random_state=seed).fit(ds.X[train], ds.y[train])
            acc[name].append(est.score(ds.X[test], ds.y[test]))
            var[name].append(float(np.mean(est.tree_variance(ds.X[test]))))
    elapsed = time.perf_counter() - start
    ma, da = np.mean(acc["MORF"]), np.mean(acc["DORF"])
    mv, dv = np.mean(var["MORF"]), np.mean(var["DORF"])
    report("comparative trend", ma >= da and mv < dv and elapsed <= 300,
           f"accuracy MORF {ma:.4f} vs DORF {da:.4f}; tree variance MORF {mv:.3e} vs DORF {dv:.3e}; "
           f"{len(SEEDS)} seeds, {elapsed:.0f}s (budget 300s)")


# persistence

def test_persistence(tmp_path):
    ds = synthesize(SynthConfig(300, 5, 3, 0.3, 5))
    est = MORFClassifier(n_trees=3, depth=2, hidden_dims=(16,), feature_dim=24, weight_hidden=8,
                         epochs=2).fit(ds.X, ds.y)
    save_model(est, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    X = np.random.default_rng(6).normal(0, 2, size=(1000, 5))
    same = all(
        getattr(est, m)(X).tobytes() == getattr(back, m)(X).tobytes()
        for m in ("predict", "predict_ordinal", "predict_proba", "expected_rank", "tree_ranks")
    )
    report("persistence", same, f"1000 random inputs, predictions bit-identical={same}")


# determinism

def _cli(*args, cwd):
    return subprocess.run([sys.executable, "-m", "morf", *args], cwd=cwd, capture_output=True, text=True)


def test_cli_determinism(tmp_path):
    small = ["--trees", "3", "--depth", "2", "--feature-dim", "16", "--hidden", "12", "--epochs", "2"]
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        steps = [
            ("gen-data", "--n", "200", "--dim", "5", "--seed", "3", "--out", "d.csv"),
            ("train", "--data", "d.csv", "--out", "m.json", "--seed", "1", *small),
            ("train", "--data", "d.csv", "--out", "b.json", "--method", "dorf", "--seed", "1", *small),
            ("eval", "--model", "m.json", "--data", "d.csv", "--out", "r.tsv"),
            ("predict", "--model", "m.json", "--data", "d.csv", "--out", "p.tsv"),
        ]
        stdout = []
        for step in steps:
            res = _cli(*step, cwd=d)
            assert res.returncode == 0, res.stderr
            stdout.append(res.stdout.replace(str(d), "<dir>"))
        files = {p.name: p.read_bytes() for p in sorted(d.iterdir())}
        outputs.append((files, stdout))
    (fa, sa), (fb, sb) = outputs
    diff = [k for k in fa if fa[k] != fb.get(k)]
    report("CLI determinism", not diff and sa == sb,
           f"{len(fa)} files compared, differing={diff or 'none'}, stdout identical={sa == sb}")
