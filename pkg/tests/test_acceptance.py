"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line."""
import math
import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import random_batch
from scd import config as cfgmod
from scd.core_math import RngState, matmul
from scd.encoder import EncoderParams, encode, encode_backward
from scd.evaluation import alignment, evaluate, normalize_rows, spearman, uniformity
from scd.gradcheck import check_gradients, numeric_grad, rel_error
from scd.model import ModelParams
from scd.objective import (
    Hyperparams,
    cross_correlation,
    cross_correlation_backward,
    decorrelation_loss,
    joint_loss,
    self_contrastive_loss,
)
from scd.projector import ProjectorParams, project, project_backward
from scd.synthetic import generate
from scd.trainer import (
    checkpoint_bytes,
    init_checkpoint,
    load_checkpoint,
    save_checkpoint,
    train,
    write_loss_log,
)

SEEDS = (0, 1, 2, 3, 4)
N_INSTANCES = 20


@pytest.fixture
def report(capsys):
    def emit(criterion: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}", flush=True)
        assert ok, f"{criterion}: {detail}"
    return emit


def _perturb_projector(p, gen):
    for arrs in (p.biases, p.gammas, p.betas):
        for a in arrs:
            a += gen.normal(scale=0.3, size=a.shape)


def test_criterion_1_gradient_audit(report):
    start = time.perf_counter()
    gen = np.random.default_rng(2024)
    worst: dict[str, float] = {}

    def record(name, errs):
        worst[name] = max(worst.get(name, 0.0), max(errs) if isinstance(errs, list) else errs)

    for inst in range(N_INSTANCES):
        n, d, P = int(gen.integers(4, 9)), int(gen.integers(8, 17)), int(gen.integers(16, 33))
        ha, hb = gen.normal(size=(n, d)), gen.normal(size=(n, d))
        _, ga, gb = self_contrastive_loss(ha, hb)
        f = lambda: self_contrastive_loss(ha, hb)[0]
        record("L_S", [rel_error(ga, numeric_grad(f, ha)), rel_error(gb, numeric_grad(f, hb))])

        pa, pb = gen.normal(size=(n, P)), gen.normal(size=(n, P))
        for corr_mode in ("cosine", "literal"):
            for sign in ("prose", "literal"):
                def lc():
                    return decorrelation_loss(cross_correlation(pa, pb, corr_mode), 0.013, sign)[0]
                corr = cross_correlation(pa, pb, corr_mode)
                ca, cb = cross_correlation_backward(corr, decorrelation_loss(corr, 0.013, sign)[1])
                record(f"L_C[{corr_mode},{sign}]", [rel_error(ca, numeric_grad(lc, pa)),
                                                     rel_error(cb, numeric_grad(lc, pb))])

        proj = ProjectorParams.init(d, P, RngState(inst), relu_before_bn=bool(inst % 2))
        _perturb_projector(proj, gen)
        H = gen.normal(size=(n, d))
        up = gen.normal(size=(n, P))
        _, cache = project(H, proj)
        grads, dH = project_backward(cache, proj, up)
        fp = lambda: float((project(H, proj)[0] * up).sum())
        errs = check_gradients(fp, proj.named(), grads)
        errs["H"] = rel_error(dH, numeric_grad(fp, H))
        record("projector", list(errs.values()))

        enc = EncoderParams.init(12, 8, d, 2, RngState(inst), token_dropout=bool(inst % 2))
        batch = random_batch(gen, n=n, width=5, vocab=12)
        upe = gen.normal(size=(n, d))
        rng = RngState(inst, (1,))
        out = encode(batch, enc, 0.2, rng)
        fe = lambda: float((encode(batch, enc, 0.2, rng).H * upe).sum())
        record("encoder", list(check_gradients(fe, enc.named(), encode_backward(out.cache, enc, upe)).values()))

        # joint cost grows with P^2, so these instances draw P from the lower part of the range
        P = int(gen.integers(16, 25))
        model = ModelParams.init(12, embed_dim=8, output_dim=d, n_blocks=1, proj_dim=P, rng=RngState(inst),
                                 token_dropout=True)
        _perturb_projector(model.projector, gen)
        hp = Hyperparams(alpha=0.5, lambda_=0.013, r_a=0.05, r_b=0.15,
                         corr_mode=("cosine", "literal")[inst % 2])
        jr = RngState(inst, (2,))
        res = joint_loss(batch, model, hp, jr)
        fj = lambda: joint_loss(batch, model, hp, jr, compute_grads=False).losses.total
        record("joint", list(check_gradients(fj, model.named(), res.grads).values()))

    elapsed = time.perf_counter() - start
    top = max(worst.values())
    detail = f"{N_INSTANCES} instances, max rel err {top:.2e} (" + ", ".join(
        f"{k} {v:.1e}" for k, v in worst.items()) + f"), {elapsed:.1f}s"
    report("criterion 1 gradient audit", top < 1e-5 and elapsed < 60, detail)


def test_criterion_2_loss_invariants(report):
    gen = np.random.default_rng(7)
    ls_min, ls_max, c_max, lc_min = np.inf, -np.inf, 0.0, np.inf
    for _ in range(1000):
        n, d, P = int(gen.integers(2, 9)), int(gen.integers(2, 17)), int(gen.integers(2, 33))
        scale = 10.0 ** gen.uniform(-3, 3)
        ha, hb = gen.normal(size=(n, d)) * scale, gen.normal(size=(n, d))
        if gen.random() < 0.2:
            hb = ha * gen.uniform(0.1, 5)
        l_s = self_contrastive_loss(ha, hb)[0]
        pa, pb = gen.normal(size=(n, P)) * scale, gen.normal(size=(n, P))
        C = cross_correlation(pa, pb).C
        l_c = decorrelation_loss(C, gen.uniform(0, 1))[0]
        ls_min, ls_max = min(ls_min, l_s), max(ls_max, l_s)
        c_max = max(c_max, float(np.abs(C).max()))
        lc_min = min(lc_min, l_c)
    identity_zero = decorrelation_loss(np.eye(6), 0.013)[0] == 0.0
    near = np.eye(3)
    near[0, 1] = 1e-6
    off_identity_positive = decorrelation_loss(near, 0.013)[0] > 0 and decorrelation_loss(
        np.diag([1, 1, 0.999]), 0.013)[0] > 0
    col = np.array([[1.0], [1.0]])
    c11 = cross_correlation(col, col, "literal").C[0, 0]
    ok = (-1 <= ls_min and ls_max <= 1 and c_max <= 1 + 1e-9 and lc_min >= 0 and identity_zero
          and off_identity_positive and abs(c11 - math.sqrt(2)) < 1e-15)
    report("criterion 2 loss invariants", ok,
           f"l_s in [{ls_min:.4f}, {ls_max:.4f}], max|C| {c_max:.12f}, min l_c {lc_min:.3e}, "
           f"l_c(I)=0 {identity_zero}, literal C11={c11:.6f}")


def test_criterion_3_oracle_equivalence(report):
    gen = np.random.default_rng(11)
    sp_exact = True
    for n in (5, 10, 50, 101):
        x, y = gen.permutation(n).astype(float), gen.permutation(n).astype(float)
        closed = 1 - 6 * np.sum((x - y) ** 2) / (n * (n * n - 1))
        sp_exact &= abs(spearman(x + 0.5, y * 3) - closed) <= 1e-15 * n

    def avg_ranks(v):
        return np.array([sum(u < t for u in v) + (sum(u == t for u in v) + 1) / 2 for t in v])

    def pearson(a, b):
        a, b = a - a.mean(), b - b.mean()
        return float(sum(a * b) / math.sqrt(sum(a * a) * sum(b * b)))

    tie_err = 0.0
    for _ in range(20):
        x, y = gen.integers(0, 6, size=40).astype(float), gen.integers(0, 4, size=40).astype(float)
        tie_err = max(tie_err, abs(spearman(x, y) - pearson(avg_ranks(x), avg_ranks(y))))

    za, zb = normalize_rows(gen.normal(size=(50, 6))), normalize_rows(gen.normal(size=(50, 6)))
    al = sum(sum((za[i, k] - zb[i, k]) ** 2 for k in range(6)) for i in range(50)) / 50
    z = normalize_rows(gen.normal(size=(100, 6)))
    acc = [math.exp(-2 * sum((z[i, k] - z[j, k]) ** 2 for k in range(6))) for i in range(100) for j in range(i + 1, 100)]
    al_err, un_err = abs(alignment(za, zb) - al), abs(uniformity(z) - math.log(sum(acc) / len(acc)))

    A, B = gen.normal(size=(7, 9)), gen.normal(size=(9, 5))
    loop = np.array([[sum(A[i, k] * B[k, j] for k in range(9)) for j in range(5)] for i in range(7)])
    mm_err = float(np.abs(matmul(A, B) - loop).max())
    ok = sp_exact and tie_err <= 1e-12 and al_err <= 1e-9 and un_err <= 1e-9 and mm_err <= 1e-12
    report("criterion 3 oracle equivalence", ok,
           f"ties-free closed form {sp_exact}, ties err {tie_err:.1e}, alignment err {al_err:.1e}, "
           f"uniformity err {un_err:.1e}, matmul err {mm_err:.1e}")


@pytest.fixture(scope="module")
def benchmark_runs():
    """Per seed: Spearman/uniformity for joint, lc_only, ls_only and untrained, plus wall time."""
    base = cfgmod.benchmark_config().train
    runs = {}
    for seed in SEEDS:
        start = time.perf_counter()
        bench = generate(seed)
        cfg = replace(base, seed=seed)
        row = {"untrained": evaluate(init_checkpoint(bench.corpus, cfg), bench.pairs)}
        for mode in ("joint", "lc_only", "ls_only"):
            ck = train(bench.corpus, replace(cfg, ablation_mode=mode)).checkpoint
            row[mode] = evaluate(ck, bench.pairs)
        row["seconds"] = time.perf_counter() - start
        runs[seed] = row
    return runs


def test_criterion_4_ablation_ordering(report, benchmark_runs):
    ordered, improved, lines = 0, 0, []
    for seed, r in benchmark_runs.items():
        j, c, s, u = (r[m].spearman for m in ("joint", "lc_only", "ls_only", "untrained"))
        ordered += j > c > s
        improved += j >= u + 0.3
        lines.append(f"seed {seed}: joint {j:.3f} lc_only {c:.3f} ls_only {s:.3f} untrained {u:.3f} "
                     f"({r['seconds']:.0f}s)")
    slowest = max(r["seconds"] for r in benchmark_runs.values())
    ok = ordered >= 4 and improved == len(SEEDS) and slowest < 300
    report("criterion 4 ablation ordering", ok,
           f"joint > lc_only > ls_only in {ordered}/5 seeds; joint >= untrained + 0.3 in {improved}/5; "
           f"slowest seed {slowest:.0f}s\n  " + "\n  ".join(lines))


def test_criterion_5_uniformity_direction(report, benchmark_runs):
    better = sum(r["joint"].uniformity < r["untrained"].uniformity for r in benchmark_runs.values())
    detail = ", ".join(f"seed {s}: {r['joint'].uniformity:.3f} vs {r['untrained'].uniformity:.3f}"
                       for s, r in benchmark_runs.items())
    report("criterion 5 uniformity direction", better >= 4, f"joint < untrained in {better}/5 ({detail})")


def test_criterion_6_determinism_and_resume(report, tmp_path):
    bench = generate(0)
    cfg = replace(cfgmod.benchmark_config().train, epochs=2)
    a, b = train(bench.corpus, cfg), train(bench.corpus, cfg)
    write_loss_log(a.log, tmp_path / "a.csv")
    write_loss_log(b.log, tmp_path / "b.csv")
    same_ck = checkpoint_bytes(a.checkpoint) == checkpoint_bytes(b.checkpoint)
    same_csv = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    half = train(bench.corpus, cfg, max_steps=45)
    save_checkpoint(half.checkpoint, tmp_path / "half.scd")
    rest = train(bench.corpus, cfg, resume=load_checkpoint(tmp_path / "half.scd"))
    resumed = half.log + rest.log == a.log and checkpoint_bytes(rest.checkpoint) == checkpoint_bytes(a.checkpoint)
    report("criterion 6 determinism and resume", same_ck and same_csv and resumed,
           f"byte-identical checkpoints {same_ck}, loss CSVs {same_csv}, "
           f"resume at step 45 of {len(a.log)} matches step-for-step {resumed}")


def test_criterion_7_published_configuration(report, tmp_path):
    text = """\
[model]
embed_dim = 16
hidden_dim = 16
projector_dim = 64

[objective]
alpha = 0.005
lambda = 0.013
r_a = 0.05
r_b = 0.15

[train]
learning_rate = 3.0e-5
batch_size = 192
epochs = 1
"""
    path = tmp_path / "published.ini"
    path.write_text(text, encoding="utf-8")
    cfg = cfgmod.load(path)
    t = cfg.train
    loaded = (t.learning_rate, t.batch_size, t.hp.alpha, t.hp.lambda_, t.hp.r_a, t.hp.r_b) == (
        3.0e-5, 192, 0.005, 0.013, 0.05, 0.15)
    res = train(generate(0).corpus, t, max_steps=1)
    ran = len(res.log) == 1 and np.isfinite(res.log[0]["total"])
    report("criterion 7 published configuration", loaded and ran,
           f"values loaded {loaded}, one step total={res.log[0]['total']:.6f}")
