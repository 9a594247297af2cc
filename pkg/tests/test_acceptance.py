"""End-to-end acceptance criteria, one test per criterion, each with its stated tolerance."""

import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from cgt import config as cfgmod
from cgt.algo import AlgoConfig, clip_factor, clipped_stepsize_check, cgt_step, initial_state
from cgt.cli import loglog_slope, main, rate_table
from cgt.data import Shard, SparseSample
from cgt.graph import GraphSpec, MixingPair, build_mixing_pair
from cgt.metrics import CsvRecorder
from cgt.objective import Composite, LogisticLq, PowerNorm, Quadratic
from cgt.rng import make_rng
from conftest import A9A_LAM, A9A_P, dense_rho, fd_grad, report

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def run_config(cfg):
    recorder = CsvRecorder()
    mix = cfgmod.build_mixing(cfg)
    objs = cfgmod.build_objectives(cfg)
    x0 = cfgmod.initial_point(cfg, objs[0].dim)
    from cgt.algo import run
    result = run(x0, mix, objs, cfg.algorithm, recorder, seed=cfg.seed)
    return result, recorder.records


@pytest.fixture(scope="module")
def a9a_runs():
    base = cfgmod.load_config(CONFIGS / "a9a_cgt.toml")
    runs = {}
    for name in ("a9a_cgt", "a9a_gt", "a9a_dgd_clip"):
        runs[name] = timed(lambda: run_config(cfgmod.load_config(CONFIGS / f"{name}.toml")))
    half = replace(base, algorithm=replace(base.algorithm, alpha=base.algorithm.alpha / 2))
    runs["a9a_cgt_half"] = timed(lambda: run_config(half))
    return runs


def test_criterion_01_tracking_conservation(a9a_shards):
    def go():
        objs = [LogisticLq(sh, lam, p) for sh, lam, p in zip(a9a_shards, A9A_LAM, A9A_P)]
        mix = build_mixing_pair(GraphSpec("random_strongly_connected", 5, 0.3, 11))
        state = initial_state(make_rng(0).standard_normal((5, 123)), objs)
        cfg = AlgoConfig("cgt", 0.05, 5.0)
        worst = 0.0
        for _ in range(500):
            state = cgt_step(state, mix, objs, cfg)
            total = sum(o.grad(xi) for o, xi in zip(objs, state.x))
            worst = max(worst, np.linalg.norm(state.y.sum(0) - total) / (1 + np.linalg.norm(total)))
        return worst
    worst, secs = timed(go)
    ok = worst <= 1e-9 and secs < 10
    report(1, "tracking conservation", ok, f"max scaled residual {worst:.2e} (<= 1e-9), {secs:.1f}s")
    assert ok


def test_criterion_02_eigen_spectral_suite():
    def go():
        rng = make_rng(2024)
        bad = []
        for j in range(100):
            n = int(rng.integers(2, 21))
            kind = "directed_ring" if j % 5 == 0 else "random_strongly_connected"
            mix = build_mixing_pair(GraphSpec(kind, n, float(rng.uniform(0.05, 1)), j))
            ones = np.ones(n)
            checks = [
                np.max(np.abs(mix.u @ mix.R - mix.u)) <= 1e-10 * n,
                np.max(np.abs(mix.C @ mix.v - mix.v)) <= 1e-10 * n,
                mix.u @ mix.v > 0,
                mix.rho_R < 1 and mix.rho_C < 1,
                abs(mix.rho_R - dense_rho(mix.R, ones, mix.u)) <= 1e-8,
                abs(mix.rho_C - dense_rho(mix.C, mix.v, ones)) <= 1e-8,
            ]
            if not all(checks):
                bad.append(j)
        return bad
    bad, secs = timed(go)
    ok = not bad and secs < 30
    report(2, "eigenvector/spectral suite", ok, f"{100 - len(bad)}/100 specs pass, {secs:.1f}s")
    assert ok


def test_criterion_03_gradient_correctness(a9a_samples):
    rng = make_rng(3)
    M = rng.standard_normal((6, 6))
    shard = Shard(a9a_samples[:400], 123)
    toy = Shard([SparseSample(1.0, ((1, 0.5), (2, -1.0))), SparseSample(0.0, ((2, 2.0),))], 2)
    kinds = {
        "logistic_lq p=4": (LogisticLq(shard, 5e-4, 4), 123),
        "logistic_lq p=5": (LogisticLq(shard, 1e-3, 5), 123),
        "logistic_lq p=6": (LogisticLq(shard, 2e-3, 6), 123),
        "logistic_lq toy": (LogisticLq(toy, 0.01, 4), 2),
        "quadratic": (Quadratic(M @ M.T, rng.standard_normal(6)), 6),
        "power_norm p=4": (PowerNorm(6, 0.5, 4, rng.standard_normal(6)), 6),
        "power_norm p=5": (PowerNorm(6, 0.5, 5), 6),
        "power_norm p=6": (PowerNorm(6, 0.5, 6), 6),
        "custom_composite": (Composite([PowerNorm(6, 1.0, 5), Quadratic.isotropic(2.0, 6)]), 6),
    }

    def go():
        worst = {}
        for name, (obj, d) in kinds.items():
            pts = make_rng(100 + len(worst))
            errs = []
            for _ in range(100):
                theta = pts.standard_normal(d) * pts.uniform(0.1, 1.5)
                h = 1e-5 * (1 + np.linalg.norm(theta))
                g = obj.grad(theta)
                fd = fd_grad(obj.value, theta, h)
                errs.append(np.linalg.norm(g - fd) / max(1e-8, np.linalg.norm(fd)))
            worst[name] = max(errs)
        return worst
    worst, secs = timed(go)
    top = max(worst.values())
    ok = top <= 1e-5 and secs < 10
    report(3, "gradient correctness", ok,
           f"worst rel. err {top:.1e} over {len(worst)} kinds x 100 points, {secs:.1f}s")
    assert ok


def test_criterion_04_stepsize_fuzz():
    regimes = ("both_small", "y_big", "g_big", "both_big")

    def go():
        rng = make_rng(4)
        violations = 0
        counts = dict.fromkeys(regimes, 0)
        n = 100_000
        d = rng.integers(1, 8, n)
        c0 = rng.uniform(0.01, 10, n)
        v_i = rng.uniform(0.01, 3, n)
        v_norm = v_i * rng.uniform(1, 5, n)
        alpha = rng.uniform(1e-3, 1, n)
        a, b = rng.uniform(0, 1, n), rng.uniform(1, 100, n)
        for j in range(n):
            regime = regimes[j % 4]
            y_big = regime in ("y_big", "both_big")
            g_big = regime in ("g_big", "both_big")
            y = rng.standard_normal(d[j])
            y *= c0[j] * (b[j] if y_big else a[j]) / np.linalg.norm(y)
            g = rng.standard_normal(d[j])
            g *= c0[j] / v_i[j] * (b[j] if g_big else a[j]) / np.linalg.norm(g)
            chk = clipped_stepsize_check(y, v_i[j], g, alpha[j], c0[j], v_norm[j])
            violations += not chk.ok()
            counts[regime] += 1
        return violations, counts
    (violations, counts), secs = timed(go)
    ok = violations == 0 and secs < 5
    report(4, "clipped stepsize fuzz", ok,
           f"{violations} violations over {sum(counts.values())} tuples "
           f"({', '.join(f'{k}={v}' for k, v in counts.items())}), {secs:.1f}s")
    assert ok


def test_criterion_05_a9a_qualitative(a9a_runs):
    (cgt, cgt_recs), t_cgt = a9a_runs["a9a_cgt"]
    (gt, gt_recs), t_gt = a9a_runs["a9a_gt"]
    loss = [r.loss_avg for r in cgt_recs]
    grads = np.array([r.grad_norm_avg for r in cgt_recs])
    cgt_ok = (cgt.stop_reason == "max_iters" and cgt_recs[-1].k == 2000 and loss[-1] < loss[0]
              and grads[-1] * 10 <= grads.max())
    g0 = gt_recs[0].grad_norm_avg
    early = [r.grad_norm_avg for r in gt_recs if r.k <= 200]
    exploded = (gt.stop_reason == "non_finite" and gt.iterations <= 200) or \
        np.nanmax(early) >= 1e3 * g0
    ok = cgt_ok and exploded and t_cgt + t_gt < 300
    report(5, "a9a qualitative reproduction", ok,
           f"CGT loss {loss[0]:.3g} -> {loss[-1]:.5g}, grad max/final {grads.max() / grads[-1]:.0f}x; "
           f"GT stop={gt.stop_reason} at k={gt.iterations}, "
           f"peak grad {np.nanmax(early) / g0:.2e}x initial; {t_cgt + t_gt:.0f}s")
    assert ok


def test_criterion_06_dgd_clip_contrast(a9a_runs):
    (_, cgt_recs), t1 = a9a_runs["a9a_cgt"]
    (_, dgd_recs), t2 = a9a_runs["a9a_dgd_clip"]
    tail = lambda recs: np.std([r.grad_norm_avg for r in recs[-500:]])  # noqa: E731
    ratio = tail(dgd_recs) / tail(cgt_recs)
    loss_ok = cgt_recs[-1].loss_avg <= dgd_recs[-1].loss_avg
    ok = loss_ok and ratio >= 2 and t1 + t2 < 300
    report(6, "DGD-clip contrast", ok,
           f"final loss CGT {cgt_recs[-1].loss_avg:.6f} vs DGD-clip {dgd_recs[-1].loss_avg:.6f}; "
           f"last-500 grad-norm std ratio {ratio:.2f} (>= 2)")
    assert ok


def test_criterion_07_rate_scaling(tmp_path):
    cfg = cfgmod.load_config(CONFIGS / "rate_powernorm.toml")
    Ks = [100, 400, 1600, 6400]
    rows, secs = timed(lambda: rate_table(cfg, Ks, tmp_path / "rate", cfg.seed))
    mins = [g for _, _, g in rows]
    slope = loglog_slope(Ks, mins)
    ok = all(b < a for a, b in zip(mins, mins[1:])) and slope <= -0.4 and secs < 120
    report(7, "rate scaling", ok,
           f"min grad {', '.join(f'{g:.2e}' for g in mins)}; slope {slope:.3f} (<= -0.4), {secs:.0f}s")
    assert ok


def test_criterion_08_consensus_boundedness(a9a_runs):
    base = cfgmod.load_config(CONFIGS / "a9a_cgt.toml").algorithm
    (_, full), t1 = a9a_runs["a9a_cgt"]
    (_, half), t2 = a9a_runs["a9a_cgt_half"]
    K = full[-1].k

    def late_max(recs):
        return max(r.consensus_err_sq for r in recs if r.k >= K // 2)
    bound = 1e3 * (base.alpha * base.c0) ** 2
    m_full, m_half = late_max(full), late_max(half)
    ok = m_full <= bound and m_full >= 2 * m_half and t1 + t2 < 600
    report(8, "consensus-error boundedness", ok,
           f"late max {m_full:.3e} (<= {bound:.3g}); halved alpha*c0 gives {m_half:.3e} "
           f"({m_full / m_half:.1f}x smaller, >= 2)")
    assert ok


def test_criterion_09_centralized_reduction():
    one = MixingPair.from_matrices(np.ones((1, 1)), np.ones((1, 1)))

    def go():
        mismatches = 0
        for seed in range(10):
            rng = make_rng(seed)
            M = rng.standard_normal((3, 3))
            obj = Quadratic(M @ M.T + 0.5 * np.eye(3), rng.standard_normal(3))
            cfg = AlgoConfig("cgt", 0.05, 0.5)
            x = rng.standard_normal(3) * 4
            state = initial_state(x[None, :], [obj])
            for _ in range(100):
                g = obj.grad(x)
                x = x - cfg.alpha * clip_factor(g, cfg.c0) * g
                state = cgt_step(state, one, [obj], cfg)
                mismatches += int(not np.array_equal(state.x[0], x))
        return mismatches
    mismatches, secs = timed(go)
    ok = mismatches == 0 and secs < 1
    report(9, "centralized reduction", ok, f"{mismatches} mismatching iterates in 10 x 100 steps, "
           f"{secs:.2f}s")
    assert ok


def test_criterion_10_reproducibility(tmp_path):
    names = ["quadratic_ring", "rate_powernorm", "a9a_cgt"]
    same = []
    for name in names:
        outs = []
        for workers in ("1", "4"):
            prefix = tmp_path / f"{name}_w{workers}"
            text = (CONFIGS / f"{name}.toml").read_text()
            if name == "a9a_cgt":
                text = text.replace("max_iters = 2000", "max_iters = 60")
            cfg_path = tmp_path / f"{name}.toml"
            cfg_path.write_text(text)
            assert main(["run", str(cfg_path), "--workers", workers, "--output", str(prefix),
                         "-q"]) == 0
            outs.append((prefix.with_suffix(".csv").read_bytes(),
                         Path(str(prefix) + ".meta").read_bytes()))
        same.append(outs[0] == outs[1])
    ok = all(same)
    report(10, "reproducibility", ok,
           f"byte-identical CSV+meta for {sum(same)}/{len(names)} configs across 1 and 4 workers")
    assert ok
