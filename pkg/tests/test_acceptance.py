"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL|SKIP ...`` line and then
asserts, so ``pytest -v -s tests/test_acceptance.py`` gives a readable table
and a plain ``pytest`` run still fails on a regression.
"""

import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from dgembed import autodiff as ad
from dgembed import cli, evaluation, graph, models, training
from dgembed.autodiff import Parameter, Tensor
from dgembed.encoder import SingleHeadAttention, single_head_attention
from dgembed.layers import GCNLayer, GINELayer, normalized_adjacency
from dgembed.models import GaussianHead, kl_divergence, triplet_loss
from dgembed.ssm import (
    MambaBlock,
    SSMParams,
    discretize,
    hidden_attention,
    mamba_block_forward,
    ssm_conv_apply,
    ssm_conv_kernel,
    ssm_scan_recurrent,
)

FD_STEP = 1e-5
FD_TOL = 1e-4
INSTANCES = 20


def report(capsys, number, passed, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
    assert passed, f"criterion {number}: {detail}"


# --- 1. recurrent vs convolution form -------------------------------------------------

def test_criterion_1_ssm_forms_agree(capsys):
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(100):
        m, d, L = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 33))
        p = SSMParams(
            Tensor(-rng.uniform(0.1, 3.0, m)),
            Tensor(rng.normal(size=(m, d))),
            Tensor(rng.normal(size=(d, m))),
            Tensor(rng.normal(size=d)),
            float(rng.uniform(0.01, 1.0)),
        )
        x = rng.normal(size=(L, d))
        A_bar, B_bar = discretize(p.A_diag, p.B, p.delta)
        conv = ssm_conv_apply(ssm_conv_kernel(A_bar, B_bar, p.C, L), x, p.D)
        worst = max(worst, float(np.max(np.abs(ssm_scan_recurrent(p, x).data - conv))))
    report(capsys, 1, worst < 1e-10, f"max |recurrent - kernel| = {worst:.2e} over 100 systems (tol 1e-10)")


# --- 2. gradients ---------------------------------------------------------------------

def _away_from_zero(rng, shape):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < 0.05, 0.05 * np.sign(x) + 0.05 * (x == 0), x)


def _gradient_cases(rng):
    def matmul():
        A, B = Parameter(rng.normal(size=(3, 4))), Parameter(rng.normal(size=(4, 2)))
        w = rng.normal(size=(3, 2))
        return lambda: (ad.matmul(A, B) * w).sum(), [A, B]

    def activation(name):
        def case():
            x = Parameter(_away_from_zero(rng, (3, 4)))
            w = rng.normal(size=(3, 4))
            return lambda: (ad.ACTIVATIONS[name](x) * w).sum(), [x]
        return case

    def gcn():
        layer = GCNLayer(3, 2, rng, dropout=0.5)
        layer.eval()
        A = np.triu((rng.random((4, 4)) < 0.4).astype(float), 1)
        A_norm = normalized_adjacency(A + A.T)
        X, w = Parameter(rng.normal(size=(4, 3))), rng.normal(size=(4, 2))
        return lambda: (layer(X, A_norm) * w).sum(), layer.parameters() + [X]

    def gine():
        layer = GINELayer(3, rng, hidden=4)
        layer.eps.data[...] = rng.normal()
        X, w = Parameter(rng.normal(size=(4, 3))), rng.normal(size=(4, 3))
        src, dst, attr = rng.integers(0, 4, 6), rng.integers(0, 4, 6), rng.normal(size=6)
        return lambda: (layer(X, src, dst, attr) * w).sum(), layer.parameters() + [X]

    def attention():
        attn = SingleHeadAttention(3, rng)
        X, w = Parameter(rng.normal(size=(4, 3))), rng.normal(size=(4, 3))
        return lambda: (attn(X) * w).sum(), attn.parameters() + [X]

    def mamba():
        block = MambaBlock(2, 3, 2, rng, expand=1)
        x, w = Parameter(rng.normal(size=(4, 2))), rng.normal(size=(4, 2))
        return lambda: (block(x) * w).sum(), block.parameters() + [x]

    def heads():
        head = GaussianHead(4, 3, rng, 1.0 + models.SIGMA_EPS)
        h = Parameter(rng.normal(size=(5, 4)))
        w1, w2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))

        def loss():
            mu, sigma = head(h)
            return (mu * w1).sum() + (sigma * w2).sum()
        return loss, head.parameters() + [h]

    def kl():
        mu = Parameter(rng.normal(size=(2, 3)))
        sg = Parameter(rng.uniform(0.3, 2, (2, 3)))
        return lambda: kl_divergence(mu[0], sg[0], mu[1], sg[1]), [mu, sg]

    def triplet():
        mu = Parameter(rng.normal(size=(4, 3)))
        sg = Parameter(rng.uniform(0.3, 2, (4, 3)))
        trip = rng.integers(0, 4, (5, 3))
        return lambda: triplet_loss(trip, mu, sg), [mu, sg]

    cases = {"matmul": matmul, "gcn": gcn, "gine": gine, "attention": attention, "mamba_block": mamba,
             "projection_heads": heads, "kl": kl, "triplet_loss": triplet}
    cases.update({f"activation:{name}": activation(name) for name in ad.ACTIVATIONS})
    return cases


def test_criterion_2_gradients(capsys):
    rng = np.random.default_rng(2)
    worst = {}
    for name, make in _gradient_cases(rng).items():
        worst[name] = max(ad.check_gradients(*make(), step=FD_STEP) for _ in range(INSTANCES))
    failing = {k: v for k, v in worst.items() if not v < FD_TOL}
    name, value = max(worst.items(), key=lambda kv: kv[1])
    detail = f"{len(worst)} layers x {INSTANCES} instances, worst relative error {value:.2e} ({name}), tol {FD_TOL:g}"
    if failing:
        detail += f"; failing: {sorted(failing)}"
    report(capsys, 2, not failing, detail)


# --- 3. KL oracle ---------------------------------------------------------------------

def test_criterion_3_kl_oracle(capsys):
    value = float(kl_divergence(np.zeros(1), np.ones(1), np.ones(1), np.full(1, 2.0)).data)
    rng = np.random.default_rng(3)
    mu, sigma = rng.normal(size=4), rng.uniform(0.1, 3, 4)
    self_kl = float(kl_divergence(mu, sigma, mu, sigma).data)
    values = []
    for k in range(1000):
        mu_a, sg_a = rng.normal(size=4), rng.uniform(0.05, 5, 4)
        if k % 2:  # near-identical pairs probe round-off just above zero
            mu_b, sg_b = mu_a + rng.normal(scale=1e-7, size=4), sg_a * (1 + rng.normal(scale=1e-7, size=4))
        else:
            mu_b, sg_b = rng.normal(size=4), rng.uniform(0.05, 5, 4)
        values.append(float(kl_divergence(mu_a, sg_a, mu_b, sg_b).data))
    lowest = min(values)
    ok = abs(value - 0.346574) <= 1e-6 and self_kl == 0.0 and lowest >= -1e-12
    report(capsys, 3, ok, f"KL(N(0,1)||N(1,2)) = {value:.7f}, self = {self_kl}, min over 1000 pairs = {lowest:.3e}")


# --- 4. metric oracle -----------------------------------------------------------------

def _brute(relevant):
    hits = [sum(relevant[: r + 1]) / (r + 1) for r in range(len(relevant)) if relevant[r]]
    ap = sum(hits) / len(hits) if hits else None
    rr = next((1.0 / (r + 1) for r in range(len(relevant)) if relevant[r]), 0.0)
    return ap, rr


def test_criterion_4_metric_oracle(capsys):
    checked = mismatches = 0
    for n in range(1, 6):
        for k in range(0, min(2, n) + 1):
            for pos in itertools.combinations(range(n), k):
                rel = [i in pos for i in range(n)]
                res = evaluation.RankingResult.rank((0, 0), np.arange(n), -np.arange(n, dtype=float), np.array(rel, bool))
                ap, rr = _brute(rel)
                if ap is not None and evaluation.compute_map([res]) != ap:
                    mismatches += 1
                if evaluation.compute_mrr([res]) != rr:
                    mismatches += 1
                checked += 1
    report(capsys, 4, mismatches == 0, f"{checked} rankings, {mismatches} exact mismatches")


# --- 5. causality and hidden attention -----------------------------------------------

def test_criterion_5_causality_and_hidden_attention(capsys):
    rng = np.random.default_rng(5)
    violations = 0
    blocks = 10
    for seed in range(blocks):
        block = MambaBlock(3, 4, 3, np.random.default_rng(seed))
        L = int(rng.integers(2, 33))
        x = rng.normal(size=(L, 3))
        y = mamba_block_forward(block, x).data
        for t in range(L):
            x2 = x.copy()
            x2[t + 1:] += rng.normal(size=(L - t - 1, 3))
            if mamba_block_forward(block, x2).data[: t + 1].tobytes() != y[: t + 1].tobytes():
                violations += 1
        alpha = hidden_attention(block, x)
        if np.any(alpha[np.triu_indices(L, 1)] != 0):
            violations += 1
    report(capsys, 5, violations == 0, f"{blocks} random blocks, {violations} causality or upper-triangle violations")


# --- 6. linear vs quadratic scaling ---------------------------------------------------

def _best_time(fn, x, repeats=9):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn(x)
        times.append(time.perf_counter() - start)
    return min(times)


def test_criterion_6_scaling(capsys):
    d = 16
    rng = np.random.default_rng(6)
    block = MambaBlock(d, 8, 4, rng)
    attn = SingleHeadAttention(d, rng)
    lengths = (256, 512, 1024)
    with ad.no_grad():
        mamba = [_best_time(lambda x: mamba_block_forward(block, x), rng.normal(size=(L, d))) for L in lengths]
        attention = [_best_time(lambda x: single_head_attention(attn, x), rng.normal(size=(L, d))) for L in lengths]
    m_ratio = [mamba[i + 1] / mamba[i] for i in range(2)]
    a_ratio = [attention[i + 1] / attention[i] for i in range(2)]
    ok = max(m_ratio) <= 2.6 and a_ratio[-1] >= 3.3
    report(capsys, 6, ok, f"d={d}, mamba ratios {m_ratio[0]:.2f} {m_ratio[1]:.2f} (<= 2.6), "
                          f"attention ratios {a_ratio[0]:.2f} {a_ratio[1]:.2f} (last >= 3.3)")


# --- 7. end-to-end learning signal ----------------------------------------------------

def test_criterion_7_learning_signal(capsys):
    g = graph.generate_sbm(99, 3, 0.2, 0.01, T=20, rng=np.random.default_rng(0))
    cfg = models.published_config("dg-mamba", "sbm", n=99, d_model=99, lookback=2, epochs=50, patience=50, seed=0)
    model, history = training.fit(g, cfg)
    ratio = history.train_loss[-1] / history.train_loss[0]
    emb = training.embed_all(model, g)
    real = evaluation.evaluate(emb, g, seed=0).map
    shuffled = float(np.mean([
        evaluation.evaluate(evaluation.shuffled_embeddings(emb, np.random.default_rng(k)), g, seed=0).map
        for k in range(5)
    ]))
    ok = ratio < 0.5 and real >= 3 * shuffled
    report(capsys, 7, ok, f"loss ratio {ratio:.4f} (< 0.5), test MAP {real:.4f} vs shuffled {shuffled:.4f} "
                          f"= {real / shuffled:.2f}x (>= 3x)")


# --- 8. Reality Mining reproduction ---------------------------------------------------

def _reality_mining_bundle():
    root = os.environ.get(cli.DATA_ROOT_ENV)
    if root is None:
        return None
    path = Path(root) / "reality_mining"
    return path if (path / "snapshots.tsv").exists() else None


def test_criterion_8_reality_mining(capsys):
    bundle = _reality_mining_bundle()
    if bundle is None:
        with capsys.disabled():
            print("\ncriterion 8: SKIP dataset not found under $DGEMBED_DATA/reality_mining; criterion 7 stands as substitute")
        pytest.skip("Reality Mining bundle not available")
    g = graph.load_bundle(bundle)
    cfg = models.published_config("dg-mamba", "reality_mining", n=g.n, lookback=3, seed=0)
    model, _ = training.fit(g, cfg)
    value = evaluation.evaluate(training.embed_all(model, g), g, seed=0).map
    report(capsys, 8, 0.25 <= value <= 0.40, f"test MAP {value:.4f} (target [0.25, 0.40])")


# --- 9. determinism -------------------------------------------------------------------

def test_criterion_9_determinism(capsys, tmp_path):
    def run(*argv):
        code = cli.main([str(a) for a in argv])
        capsys.readouterr()
        assert code == 0

    run("generate-sbm", "--out", tmp_path / "data", "--n", 30, "--T", 8, "--churn-min", 2, "--churn-max", 4, "--seed", 9)
    config = tmp_path / "run.yaml"
    config.write_text(
        f"dataset: {tmp_path / 'data'}\nmodel: dg-mamba\nd_model: 8\nd_state: 4\nd_conv: 2\n"
        "intermediate: 8\nd_out: 4\nlookback: 2\nepochs: 3\nlr: 0.003\n"
    )
    for name in ("a", "b"):
        run("train", "--config", config, "--out", tmp_path / name, "--seed", 4)
        run("eval", "--checkpoint", tmp_path / name / "model.ckpt", "--dataset", tmp_path / "data",
            "--seed", 4, "--out", tmp_path / name / "metrics.jsonl")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    differing = [str(f) for f in files if (tmp_path / "a" / f).read_bytes() != (tmp_path / "b" / f).read_bytes()]
    record = json.loads((tmp_path / "a" / "metrics.jsonl").read_text())
    report(capsys, 9, not differing and len(files) > 3,
           f"{len(files)} files compared bytewise (MAP {record['MAP']:.4f}), differing: {differing or 'none'}")
