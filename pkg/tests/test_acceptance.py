"""Acceptance criteria 1-11, one test each.

Every test records a single ``CRITERION n: PASS|FAIL ...`` line, printed in
the terminal summary (see conftest) and also to stdout.
"""

import json
import math
import time

import numpy as np
import pytest

from gammanet.analysis import (WeightedGraph, analyze_scans, block_mass_ratio, louvain, ols, peak_regression,
                               reorder_adjacency, svd_analyze)
from gammanet.autodiff import ParamStore, Tensor, gradcheck, ops
from gammanet.dataio import (GraphTopology, compute_stats, load_dataset, make_windows, save_dataset, split,
                             synth_dataset)
from gammanet.gat import gat_forward, gat_frames, init_gat
from gammanet.model import ABLATIONS, ModelConfig, forward, init_params, load_checkpoint, save_checkpoint
from gammanet.sscan import init_ssm, mamba_block, scan, selective_scan_fast, selective_scan_ref
from gammanet.train import (AdamState, EvalReport, TrainConfig, evaluate, metrics, report_from_predictions, train,
                            train_step)

from conftest import ACCEPTANCE_LINES, random_topology

# compact model used wherever real training happens
ABLATION_MODEL = {"d_f": 4, "d_a": 4, "num_layers": 1, "num_heads": 2, "d_state": 4}
ABLATION_EPOCHS = 5
ABLATION_SEEDS = (0, 1, 2)
ABLATION_BUDGET_S = 15 * 60


def record(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------- 1


def test_c01_gradient_integrity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)

    def r(*shape):
        return Tensor(rng.uniform(-2, 2, shape), requires_grad=True)

    mask = np.array([True, False, True, True])
    cases = {
        "add": (lambda a, b: ops.add(a, b), [r(3, 4), r(4)]),
        "sub": (lambda a, b: ops.sub(a, b), [r(3, 4), r(3, 4)]),
        "mul": (lambda a, b: ops.mul(a, b), [r(3, 4), r(3, 4)]),
        "matmul": (lambda a, b: ops.matmul(a, b), [r(3, 4), r(4, 2)]),
        "linear": (lambda x, w, b: ops.linear(x, w, b), [r(2, 3, 4), r(5, 4), r(5)]),
        "bmm": (lambda a, b: ops.bmm(a, b), [r(2, 3, 4), r(2, 4, 2)]),
        "pairwise_add": (lambda a, b: ops.pairwise_add(a, b), [r(2, 3), r(2, 3)]),
        "reshape": (lambda a: ops.reshape(a, (3, 4)), [r(2, 6)]),
        "transpose": (lambda a: ops.transpose_axes(a, (2, 0, 1)), [r(2, 3, 4)]),
        "concat": (lambda a, b: ops.concat_last_axis([a, b]), [r(2, 3), r(2, 2)]),
        "slice_last": (lambda a: ops.slice_last(a, 1, 3), [r(3, 4)]),
        "take_rows": (lambda a: ops.take_rows(a, np.array([0, 2, 2])), [r(3, 4)]),
        "exp": (ops.exp, [r(3, 4)]),
        "silu": (ops.silu, [r(3, 4)]),
        "softplus": (ops.softplus, [r(3, 4)]),
        "leaky_relu": (lambda a: ops.leaky_relu(a, 0.2), [r(3, 4)]),
        "abs": (ops.abs_, [r(3, 4)]),
        "sum": (lambda a: ops.sum(a, axis=0), [r(3, 4)]),
        "mean": (lambda a: ops.mean(a, axis=-1), [r(3, 4)]),
        "layer_norm": (lambda x, g, b: ops.layer_norm(x, g, b), [r(2, 5), r(5), r(5)]),
        "softmax_masked": (lambda a: ops.softmax_masked(a, mask), [r(3, 4)]),
        "causal_conv1d": (lambda x, w, b: ops.causal_conv1d(x, w, b), [r(2, 5, 3), r(3, 4), r(3)]),
    }
    worst_prim = 0.0
    for name, (fn, inputs) in cases.items():
        w = rng.standard_normal(fn(*inputs).shape)
        errs = gradcheck(lambda: ops.sum(ops.mul(fn(*inputs), w)), inputs)
        worst_prim = max(worst_prim, max(errs))

    st = ParamStore()
    init_ssm(st, "m", 2, 3, rng)
    for k in st:
        if not k.endswith(("A_log", "D")):
            st[k].data[...] = rng.normal(0, 0.5, st[k].shape)
    args = [r(2, 5, 4), r(2, 5, 7), st["m.A_log"], st["m.dt_bias"], st["m.D"]]
    w = rng.standard_normal((2, 5, 4))
    worst_prim = max(worst_prim, max(gradcheck(lambda: ops.sum(ops.mul(scan(*args), w)), args)))

    cfg = ModelConfig(T=2, T_prime=2, d_f=2, d_a=2, num_layers=1, num_heads=2, d_state=2)
    topo = GraphTopology.from_links(3, [(0, 1), (1, 2)])
    params = init_params(cfg, topo, 0)
    prng = np.random.default_rng(5)
    for k in params:
        params[k].data[...] = prng.normal(0, 0.5, params[k].shape)
    x = np.stack([prng.standard_normal((2, 2, 3)), np.full((2, 2, 3), 17.0), np.full((2, 2, 3), 3.0)], axis=-1)
    wy = prng.standard_normal((2, 3, 2))
    errs = gradcheck(lambda: ops.sum(ops.mul(forward(x, topo, params, cfg)[0], wy)),
                     [params[k] for k in params], floor=1e-6, normwise=True)
    worst_model = max(errs)
    elapsed = time.perf_counter() - t0
    ok = worst_prim < 1e-4 and worst_model < 1e-3 and elapsed < 60
    record(1, ok, f"primitives max rel err {worst_prim:.2e} (<1e-4), full model {worst_model:.2e} (<1e-3), "
                  f"{elapsed:.1f}s")


# ---------------------------------------------------------------- 2


def test_c02_scan_oracle():
    t0 = time.perf_counter()
    toy = ParamStore()
    toy.add("m.x_proj", np.array([[1.0], [1.0], [0.0]]))
    toy.add("m.A_log", np.array([[math.log(math.log(2.0))]]))
    toy.add("m.dt_bias", np.array([math.log(math.e - 1.0)]))
    toy.add("m.D", np.array([0.0]))
    u = np.ones((3, 1))
    h_toy = selective_scan_fast(Tensor(u), toy.scope("m")).data[:, 0]
    toy_ok = np.allclose(h_toy, [1.0, 1.5, 1.75], atol=1e-14) and \
        np.allclose(selective_scan_ref(u, toy.scope("m"))[:, 0], [1.0, 1.5, 1.75], atol=1e-14)

    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(100):
        L, S = [1, 2, 7, 64][case % 4], [1, 2, 16][case % 3]
        st = ParamStore()
        init_ssm(st, "m", 3, S, np.random.default_rng(case))
        for k in st:
            if not k.endswith("D"):
                st[k].data[...] += rng.normal(0, 0.3, st[k].shape)
        uu = rng.standard_normal((L, 6))
        worst = max(worst, float(np.max(np.abs(selective_scan_fast(Tensor(uu), st.scope("m")).data
                                               - selective_scan_ref(uu, st.scope("m"))))))
    elapsed = time.perf_counter() - t0
    ok = toy_ok and worst < 1e-10 and elapsed < 60
    record(2, ok, f"toy h={np.round(h_toy, 12).tolist()}, 100 cases max abs diff {worst:.2e} (<1e-10), "
                  f"{elapsed:.1f}s")


# ---------------------------------------------------------------- 3


def test_c03_linear_time():
    st = ParamStore()
    d_h, S = 32, 16
    init_ssm(st, "m", d_h, S, np.random.default_rng(0))
    p = st.scope("m")
    rng = np.random.default_rng(1)
    batch = 8
    u64 = Tensor(rng.standard_normal((batch, 64, 2 * d_h)))
    u128 = Tensor(rng.standard_normal((batch, 128, 2 * d_h)))

    def timed(u):
        t = time.perf_counter()
        selective_scan_fast(u, p)
        return time.perf_counter() - t

    timed(u64), timed(u128)  # warm-up
    ratios = []
    for _ in range(20):
        a = timed(u64)
        b = timed(u128)
        ratios.append(b / a)
    mean_ratio = float(np.mean(ratios))
    record(3, mean_ratio < 2.5, f"mean wall-time ratio L=128/L=64 over 20 reps = {mean_ratio:.2f} (<2.5)")


# ---------------------------------------------------------------- 4


def test_c04_gat_properties():
    t0 = time.perf_counter()
    worst_sum, worst_perm, leak = 0.0, 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        topo = random_topology(rng, 5)
        st = ParamStore()
        init_gat(st, "g", 8, 2, rng)
        p = st.scope("g")
        z = rng.standard_normal((5, 8))
        out, _ = gat_forward(Tensor(z), topo, p)
        _, alphas = gat_frames(Tensor(z), topo.adjacency_mask(), p, capture=True)
        for a in alphas:
            worst_sum = max(worst_sum, float(np.max(np.abs(a.sum(axis=-1) - 1.0))))
            leak = max(leak, float(np.max(np.abs(a[~topo.adjacency_mask()]), initial=0.0)))
        perm = rng.permutation(5)
        out_p, _ = gat_forward(Tensor(z[perm]), topo.permuted(perm), p)
        worst_perm = max(worst_perm, float(np.max(np.abs(out_p.data - out.data[perm]))))
    elapsed = time.perf_counter() - t0
    ok = worst_sum < 1e-6 and leak == 0.0 and worst_perm < 1e-10 and elapsed < 60
    record(4, ok, f"simplex dev {worst_sum:.1e}, off-graph max {leak}, permutation diff {worst_perm:.1e}, "
                  f"{elapsed:.1f}s")


# ---------------------------------------------------------------- 5


def test_c05_shape_protocol():
    cfg = ModelConfig()
    ds = synth_dataset(5, 2, 0)
    tr, va, te = split(ds)
    stats = compute_stats(ds, tr)
    w = make_windows(ds, tr, 12, 12, stats)
    params = init_params(cfg, ds.topology, 0, np.float32)
    y, _ = forward(w.x[0], ds.topology, params, cfg)
    small = ModelConfig(d_f=2, d_a=2, num_layers=1, num_heads=2, d_state=2)
    rep = evaluate(init_params(small, ds.topology, 0), small, stats, ds, "test")
    doc = rep.to_dict()
    named_ok = sorted(rep.named()) == [3, 6, 12] and "avg" in doc and len(rep.horizons) == 12
    avg_ok = abs(doc["avg"]["mae"] - np.mean([v[0] for v in rep.horizons.values()])) < 1e-12
    ok = y.shape == (5, 12) and cfg.d_h == 152 and named_ok and avg_ok
    record(5, ok, f"forward shape {y.shape}, d_h={cfg.d_h}, report horizons {sorted(rep.named())} + avg")


# ---------------------------------------------------------------- 6


def test_c06_metrics_oracle():
    mae, rmse, _ = metrics([2.0, 2.0, 5.0], [1.0, 2.0, 3.0], np.ones(3, bool))
    _, _, mape = metrics([2.0, 2.0, 5.0], [1.0, 2.0, 4.0], np.ones(3, bool))
    errs = [abs(mae - 1.0), abs(rmse - math.sqrt(5 / 3)), abs(mape - 125.0 / 3)]
    rng = np.random.default_rng(0)
    y = rng.uniform(1, 100, 200)
    yh = y + rng.normal(0, 5, 200)
    m = rng.random(200) < 0.9
    base = metrics(yh, y, m)
    scale_dev = 0.0
    for c in (0.5, 3.0):
        s = metrics(c * yh, c * y, m)
        scale_dev = max(scale_dev, abs(s[0] - c * base[0]) / base[0], abs(s[1] - c * base[1]) / base[1],
                        abs(s[2] - base[2]) / base[2])
    ok = max(errs) < 1e-9 and scale_dev < 1e-12
    record(6, ok, f"hand examples max err {max(errs):.1e} (<1e-9), scale-consistency rel dev {scale_dev:.1e}")


# ---------------------------------------------------------------- 7


def test_c07_overfit_sanity():
    t0 = time.perf_counter()
    ds = synth_dataset(3, 1, 0)
    cfg = ModelConfig(T=4, T_prime=4, d_f=2, d_a=2, num_layers=1, num_heads=2, d_state=2)
    rows = range(0, 64)
    stats = compute_stats(ds, rows)
    w = make_windows(ds, rows, 4, 4, stats)
    idx = np.arange(16)
    params = init_params(cfg, ds.topology, 0)
    state = AdamState()
    tcfg = TrainConfig(lr=1e-2)
    losses = [train_step(params, state, tcfg, cfg, ds, stats, w.x[idx], w.y[idx], w.y_mask[idx])
              for _ in range(200)]
    ratio = losses[-1] / losses[0]
    elapsed = time.perf_counter() - t0
    record(7, ratio < 0.05 and elapsed < 120,
           f"one batch, 200 epochs: final/initial loss = {ratio:.4f} (<0.05), {elapsed:.1f}s")


# ---------------------------------------------------------------- 8


def test_c08_ablation_ordering():
    ds = synth_dataset(20, 14, 0)
    t0 = time.perf_counter()
    table = {}
    for seed in ABLATION_SEEDS:
        row = {}
        for name, flags in ABLATIONS.items():
            cfg = ModelConfig(**ABLATION_MODEL, **flags)
            res = train(ds, cfg, TrainConfig(max_epochs=ABLATION_EPOCHS, seed=seed, patience=ABLATION_EPOCHS))
            row[name] = min(r.val_mae for r in res.history)
        table[seed] = row
    elapsed = time.perf_counter() - t0

    holds = 0
    details = []
    for seed, row in table.items():
        full, both = row["full"], row["w/o both"]
        others = [row[k] for k in ("w/o GAT", "w/o Temporal", "w/o Spatio")]
        ok = all(full <= o for o in others) and all(both > o for o in others + [full]) and both >= 1.10 * full
        holds += ok
        details.append(f"seed {seed}: " + ", ".join(f"{k}={v:.3f}" for k, v in row.items())
                       + f" (w/o both +{100 * (both / full - 1):.1f}% vs full) {'ok' if ok else 'violated'}")
    for d in details:
        print(d)
    record(8, holds >= 2 and elapsed <= ABLATION_BUDGET_S,
           f"ordering held on {holds}/3 seeds (need 2), {elapsed / 60:.1f} min (<=15); " + " | ".join(details))


# ---------------------------------------------------------------- 9


def test_c09_stability_verdict(tmp_path):
    ds = synth_dataset(8, 3, 1)
    cfg = ModelConfig(**ABLATION_MODEL)
    res = train(ds, cfg, TrainConfig(max_epochs=2, seed=3))
    save_checkpoint(tmp_path, res.params, cfg, res.stats)
    params, cfg, stats, _ = load_checkpoint(tmp_path)
    tr, va, te = split(ds)
    w = make_windows(ds, te, cfg.T, cfg.T_prime, stats)
    _, extras = forward(w.x[:64], ds.topology, params, cfg, capture_scans=True)
    entries = analyze_scans(extras.scans)
    worst = max(float(e.sigma[0]) for e in entries)
    ok = len(entries) == 2 * cfg.num_layers and all(e.stable for e in entries)
    record(9, ok, f"{len(entries)} layer/axis spectra, max sigma {worst:.6f} (<1), all stable={ok}")


# ---------------------------------------------------------------- 10


def test_c10_analysis_oracles():
    rng = np.random.default_rng(10)
    n = 16
    truth = rng.permutation(np.repeat([0, 1], 8))
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            same = truth[i] == truth[j]
            if rng.random() < (0.8 if same else 0.05):
                w[i, j] = w[j, i] = rng.uniform(0.5, 1.0) if same else rng.uniform(0.1, 0.3)
    g = WeightedGraph(w)
    rep = louvain(g)
    matrix, perm = reorder_adjacency(g, rep)
    mass = block_mass_ratio(matrix, rep.assignment[perm])

    ols_dev = 0.0
    for _ in range(10):
        x = rng.uniform(0, 100, 40)
        y = 0.8 * x + 3 + rng.normal(0, 4, 40)
        a, b, _ = ols(x, y)
        X = np.c_[x, np.ones_like(x)]
        coef = np.linalg.solve(X.T @ X, X.T @ y)
        ols_dev = max(ols_dev, abs(a - coef[0]), abs(b - coef[1]))
    s = np.arange(24.0)
    fit = peak_regression(s, 2 * s + 1)
    ols_dev = max(ols_dev, abs(fit.slope - 2.0), abs(fit.intercept - 1.0))

    svd_dev = 0.0
    for _ in range(20):
        a = rng.standard_normal((4, 4))
        oracle = np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(a.T @ a))[::-1], 0, None))
        svd_dev = max(svd_dev, float(np.max(np.abs(svd_analyze(a).sigma - oracle))))
    ok = mass < 0.1 and rep.num_communities == 2 and ols_dev < 1e-10 and svd_dev < 1e-8
    record(10, ok, f"planted blocks off-block mass {mass:.3f} (<0.1) in {rep.num_communities} communities, "
                   f"OLS dev {ols_dev:.1e} (<1e-10), SVD dev {svd_dev:.1e} (<1e-8)")


# ---------------------------------------------------------------- 11


def test_c11_reproducibility(tmp_path):
    ds = synth_dataset(5, 2, 4)
    cfg = ModelConfig(d_f=2, d_a=2, num_layers=1, num_heads=2, d_state=2)
    tcfg = TrainConfig(max_epochs=2, seed=11, batch_size=32)
    a, b = train(ds, cfg, tcfg), train(ds, cfg, tcfg)
    same_train = a.params.equal(b.params) and [r.val_mae for r in a.history] == [r.val_mae for r in b.history]

    save_checkpoint(tmp_path / "ck", a.params, cfg, a.stats)
    params, cfg2, stats, _ = load_checkpoint(tmp_path / "ck")
    same_ckpt = params.equal(a.params) and cfg2 == cfg and stats == a.stats

    save_dataset(ds, tmp_path / "data")
    back = load_dataset(tmp_path / "data")
    same_data = (back.flow.tobytes() == ds.flow.tobytes() and back.topology == ds.topology
                 and np.array_equal(back.tod_index, ds.tod_index) and np.array_equal(back.dow_index, ds.dow_index))
    ok = same_train and same_ckpt and same_data
    record(11, ok, f"training bit-identical={same_train}, checkpoint round-trip={same_ckpt}, "
                   f"dataset round-trip={same_data}")
