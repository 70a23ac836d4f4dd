"""Acceptance suite: one test per criterion, each printing a pass line.

Criteria 7-11 train real models; the whole module takes several minutes on
a desktop CPU. Run `pytest tests/test_acceptance.py -v -s` to watch the
per-criterion lines as they complete.
"""

import dataclasses
import json
import math
import time

import mpmath
import numpy as np
import pytest

from droprate.cli import main
from droprate.data import build, sample_batch
from droprate.errors import InvalidRateError
from droprate.model import GptModel, ModelConfig
from droprate.rng import PURPOSE_BATCH, PURPOSE_DROPOUT, RngState, stream_id
from droprate.schedule import (
    AdaptiveState,
    ScheduleConfig,
    adaptive_update,
    rate_cosine,
    rate_exponential,
    rate_linear,
    rate_step,
)
from droprate.tensor import Tensor, backward, dropout, gradcheck, sum_all
from droprate.trainer import (
    AdamW,
    TrainConfig,
    clip_global_norm,
    load_checkpoint,
    train,
)
from droprate.schedule import ScheduleKind


def _passed(num: int, name: str) -> None:
    print(f"ACCEPTANCE {num:02d} {name}: PASS")


# -- 1 -------------------------------------------------------------------


def test_c01_schedule_exactness():
    cfg = ScheduleConfig(p0=0.2, pf=0.0, total_iters=5000)
    assert [rate_linear(t, cfg) for t in (0, 2500, 5000)] == [0.2, 0.1, 0.0]
    assert [rate_cosine(t, cfg) for t in (0, 2500, 5000)] == [0.2, 0.1, 0.0]

    step_cfg = ScheduleConfig(p0=0.2, pf=0.0, decay_factor=0.5, step_size=1000)
    assert [rate_step(t, step_cfg) for t in (999, 1000, 2500)] == [0.2, 0.1, 0.05]

    # exponential with the eps-clamped target, against a 50-digit oracle
    with mpmath.workdps(50):
        p0, pf = mpmath.mpf("0.2"), mpmath.mpf("0.001")
        oracle = [float(p0 * (pf / p0) ** (mpmath.mpf(t) / 5000)) for t in (0, 2500, 5000)]
    got = [rate_exponential(t, cfg) for t in (0, 2500, 5000)]
    for g, o in zip(got, oracle):
        assert abs(g - o) <= 1e-9 * abs(o)
    _passed(1, "schedule exactness")


# -- 2 -------------------------------------------------------------------


def test_c02_randomized_property_suite():
    rng = np.random.Generator(np.random.Philox(key=20240801))
    n_configs = 1000
    for _ in range(n_configs):
        p0 = float(rng.uniform(0.01, 0.95))
        pf = float(rng.uniform(0.0, p0 * 0.999))
        total = int(rng.integers(2, 20000))
        cfg = ScheduleConfig(
            p0=p0, pf=pf, total_iters=total,
            decay_factor=float(rng.uniform(0.05, 1.0)),
            step_size=int(rng.integers(1, 2000)),
        )
        ts = sorted({0, 1, total // 3, total // 2, total - 1})
        for fn in (rate_linear, rate_exponential, rate_step, rate_cosine):
            values = [fn(t, cfg) for t in ts + [total]]
            assert all(0.0 <= v < 1.0 for v in values)
            for t in ts:
                assert fn(t + 1, cfg) <= fn(t, cfg), (fn.__name__, cfg, t)
        # step decay is flat inside each interval
        k = int(rng.integers(0, 4))
        lo = k * cfg.step_size
        probe = {rate_step(t, cfg) for t in (lo, lo + cfg.step_size // 2, lo + cfg.step_size - 1)}
        assert len(probe) == 1
        # adaptive state stays inside its clamp band
        state = AdaptiveState.fresh(cfg)
        for loss in rng.uniform(0.5, 5.0, size=8):
            state, p = adaptive_update(state, float(loss), cfg)
            assert cfg.adapt_p_min <= p <= cfg.adapt_p_max
    _passed(2, f"property suite over {n_configs} random configs")


# -- 3 -------------------------------------------------------------------


def test_c03_adaptive_controller_trace():
    cfg = ScheduleConfig(p0=0.2, adapt_delta=0.01)
    state = AdaptiveState.fresh(cfg)
    trace = []
    for loss in [2.0, 1.9, 1.95, 1.8]:
        state, p = adaptive_update(state, loss, cfg)
        trace.append(p)
    assert trace[1:] == [0.19, 0.20, 0.19], trace
    _passed(3, "adaptive controller trace (decrease, increase, decrease)")


# -- 4 -------------------------------------------------------------------


def test_c04_dropout_statistics():
    n = 10**5
    ones = Tensor(np.ones(n, dtype=np.float32))
    out = dropout(ones, 0.2, training=True, rng=RngState(4242, 7))
    assert abs(float(out.data.mean()) - 1.0) <= 0.01

    x = Tensor(RngState(1, 1).normal((257,)))
    assert dropout(x, 0.0, training=True, rng=RngState(2)) is x
    assert dropout(x, 0.5, training=False) is x

    leaf = Tensor(np.ones(1000, dtype=np.float32), requires_grad=True)
    masked = dropout(leaf, 0.5, training=True, rng=RngState(3, 3))
    backward(sum_all(masked))
    zeroed = masked.data == 0
    assert zeroed.any() and np.all(leaf.grad[zeroed] == 0.0)
    _passed(4, "dropout statistics and identities")


# -- 5 -------------------------------------------------------------------


def test_c05_gradient_check():
    cfg = ModelConfig(n_layer=1, n_head=1, n_embd=16, block_size=8, vocab_size=16, dropout_p=0.2)
    model = GptModel(cfg, seed=3)
    rng = RngState(0, 77)
    x = rng.integers(0, 16, (4, 8))
    y = rng.integers(0, 16, (4, 8))

    def f(params):
        probe = GptModel(cfg, params=params)
        probe.update_dropout(0.0)
        _, loss = probe.forward(x, y, training=False)
        return loss

    report64 = gradcheck(f, model.params, h=1e-3, tol=1e-4, n_coords=200, use_float64=True)
    assert report64.n_checked >= 200
    assert report64.passed, str(report64)
    report32 = gradcheck(f, model.params, h=1e-3, tol=1e-2, n_coords=200, use_float64=False)
    assert report32.passed, str(report32)
    _passed(5, f"gradient check (64-bit max rel {report64.max_rel_err:.2e}, 32-bit {report32.max_rel_err:.2e})")


# -- 6 -------------------------------------------------------------------


def test_c06_architecture_invariants():
    cfg = ModelConfig(n_layer=2, n_head=2, n_embd=16, block_size=8, vocab_size=16, dropout_p=0.2)
    model = GptModel(cfg, seed=9)
    x = RngState(5, 5).integers(0, 16, (3, 8))

    base, _ = model.forward(x, training=False)
    for i in range(x.shape[1] - 1):
        perturbed = x.copy()
        perturbed[:, i + 1 :] = (perturbed[:, i + 1 :] + 7) % 16
        out, _ = model.forward(perturbed, training=False)
        assert np.array_equal(base.data[:, : i + 1], out.data[:, : i + 1]), f"position {i}"

    model.update_dropout(0.11)
    rates = model.site_rates()
    assert len(rates) == 1 + 3 * cfg.n_layer
    assert all(r == 0.11 for _, r in rates)
    with pytest.raises(InvalidRateError):
        model.update_dropout(1.0)

    outs = []
    for p in (0.0, 0.2, 0.5):
        model.update_dropout(p)
        logits, _ = model.forward(x, training=False)
        outs.append(logits.data)
    assert np.array_equal(outs[0], outs[1]) and np.array_equal(outs[0], outs[2])
    _passed(6, "architecture invariants (causality, site uniformity, eval invariance)")


# -- 7 & 8: desk-scale runs ------------------------------------------------


@pytest.fixture(scope="module")
def desk_ds(shakespeare_text):
    return build(shakespeare_text, val_fraction=0.1)


def test_c07_desk_scale_learning(desk_ds):
    assert desk_ds.vocab.size == 65
    mcfg = ModelConfig(n_layer=2, n_head=4, n_embd=128, block_size=64,
                       vocab_size=desk_ds.vocab.size, dropout_p=0.2)
    cfg = TrainConfig(
        model=mcfg,
        schedule_kind=ScheduleKind.CONSTANT,
        schedule=ScheduleConfig(p0=0.2, pf=0.0, total_iters=500),
        batch_size=32, max_iters=500, eval_interval=100, eval_iters=10, seed=1337,
    )
    result = train(cfg, desk_ds)
    initial = result.metrics[0].val_loss
    final = result.metrics[-1].val_loss
    assert abs(initial - math.log(65)) < 0.3, initial
    assert final < 2.5, final
    _passed(7, f"desk-scale learning (val {initial:.3f} -> {final:.3f})")


def test_c08_trace_fidelity():
    # trace checking cares about the schedule, not model capacity
    text = ("we few, we happy few, we band of brothers; " * 700)
    ds = build(text, val_fraction=0.1)
    sched = ScheduleConfig(p0=0.2, pf=0.0, total_iters=500)
    cfg = TrainConfig(
        model=ModelConfig(n_layer=1, n_head=2, n_embd=32, block_size=16,
                          vocab_size=ds.vocab.size, dropout_p=0.2),
        schedule_kind=ScheduleKind.LINEAR_DECAY,
        schedule=sched,
        batch_size=8, max_iters=500, eval_interval=100, eval_iters=2, seed=11,
    )
    result = train(cfg, ds)
    assert [r.iter for r in result.metrics] == [0, 100, 200, 300, 400, 499]
    for r in result.metrics:
        assert r.dropout_p == rate_linear(r.iter, sched), r
    assert result.update_dropout_calls == 500
    _passed(8, "trace fidelity (bit-exact dropout trace, 500 update calls)")


# -- 9 -------------------------------------------------------------------


def _compare_args(corpus_path, out_dir):
    return [
        "compare",
        f"--corpus={corpus_path}",
        f"--out={out_dir}",
        "--model.n_layer=2",
        "--model.n_head=2",
        "--model.n_embd=64",
        "--model.block_size=32",
        "--train.batch_size=16",
        "--train.max_iters=120",
        "--train.eval_interval=40",
        "--train.eval_iters=3",
        "--train.seed=2024",
        "--bench.n_tokens=500",
    ]


def test_c09_comparison_report(tmp_path, shakespeare_text):
    corpus_path = tmp_path / "corpus.txt"
    corpus_path.write_text(shakespeare_text[:300_000], encoding="utf-8")

    out1, out2 = tmp_path / "cmp1", tmp_path / "cmp2"
    assert main(_compare_args(corpus_path, out1)) == 0
    assert main(_compare_args(corpus_path, out2)) == 0

    report = (out1 / "report.md").read_text().splitlines()
    assert report[0] == "| Schedule | FTL | BVL | TTT | AIS |"
    labels = [line.split("|")[1].strip() for line in report[2:7]]
    assert labels == ["baseline", "linear", "exponential", "cosine", "val_adaptive"]

    payload1 = json.loads((out1 / "report.json").read_text())
    payload2 = json.loads((out2 / "report.json").read_text())
    assert len(payload1["rows"]) == 5
    for r1, r2 in zip(payload1["rows"], payload2["rows"]):
        assert r1["ftl"] == r2["ftl"], r1["schedule"]  # bit-exact across invocations
        assert r1["bvl"] == r2["bvl"], r1["schedule"]

    # FTL/BVL agree with each run's own metrics CSV
    for row in payload1["rows"]:
        lines = (out1 / row["schedule"] / "metrics.csv").read_text().strip().splitlines()[1:]
        assert f"{row['ftl']:.4f}" == lines[-1].split(",")[1]
        assert f"{row['bvl']:.4f}" == f"{min(float(l.split(',')[2]) for l in lines):.4f}"

    assert (out1 / "combined.csv").read_bytes() == (out2 / "combined.csv").read_bytes()
    svg = (out1 / "plot.svg").read_text()
    assert svg.count("<polyline") == 10  # 5 schedules x 2 panels
    for label in labels:
        assert svg.count(f">{label}</text>") == 2
    _passed(9, "comparison report (Table-1 shape, deterministic FTL/BVL)")


# -- 10 ------------------------------------------------------------------


def test_c10_noop_fast_path_is_faster(desk_ds):
    mcfg = ModelConfig(n_layer=2, n_head=4, n_embd=128, block_size=64,
                       vocab_size=desk_ds.vocab.size, dropout_p=0.2)
    model = GptModel(mcfg, seed=5)
    optimizer = AdamW(model.params, lr=1e-3)

    def timed_iters(p, n, offset):
        model.update_dropout(p)
        times = []
        for t in range(n):
            x, y = sample_batch(desk_ds, "train", 32, 64, RngState(1, stream_id(PURPOSE_BATCH, offset + t)))
            t0 = time.perf_counter()
            model.params.zero_grad()
            _, loss = model.forward(x, y, training=True, rng=RngState(1, stream_id(PURPOSE_DROPOUT, offset + t)))
            backward(loss)
            clip_global_norm(model.params, 1.0)
            optimizer.step()
            times.append(time.perf_counter() - t0)
        return times

    timed_iters(0.2, 2, 0)  # warmup
    with_dropout, without = [], []
    for rep in range(3):
        with_dropout += timed_iters(0.2, 8, 100 * rep)
        without += timed_iters(0.0, 8, 100 * rep + 50)
    med_with = float(np.median(with_dropout))
    med_without = float(np.median(without))
    assert med_without < med_with, f"p=0 median {med_without:.4f}s vs p=0.2 {med_with:.4f}s"
    _passed(10, f"no-op fast path timing (p=0 {med_without * 1e3:.0f} ms < p=0.2 {med_with * 1e3:.0f} ms)")


# -- 11 ------------------------------------------------------------------


def test_c11_checkpoint_roundtrip_and_resume(tiny_ds, tmp_path):
    model_cfg = ModelConfig(n_layer=1, n_head=2, n_embd=32, block_size=16,
                            vocab_size=tiny_ds.vocab.size, dropout_p=0.2)

    def cfg(max_iters):
        return TrainConfig(
            model=model_cfg,
            schedule_kind=ScheduleKind.LINEAR_DECAY,
            schedule=ScheduleConfig(p0=0.2, pf=0.0, total_iters=60),
            batch_size=8, max_iters=max_iters, eval_interval=20, eval_iters=2, seed=31,
        )

    full = train(cfg(60), tiny_ds, checkpoint_path=str(tmp_path / "full.bin"))
    train(cfg(30), tiny_ds, checkpoint_path=str(tmp_path / "half.bin"))

    saved = load_checkpoint(str(tmp_path / "half.bin"))
    reloaded = saved.restore_params()
    assert reloaded.fingerprint() == saved.restore_params().fingerprint()

    resumed = train(cfg(60), tiny_ds, checkpoint_path=str(tmp_path / "resumed.bin"),
                    resume_from=str(tmp_path / "half.bin"))
    by_iter = {r.iter: r for r in full.metrics}
    assert resumed.metrics
    for r in resumed.metrics:
        ref = by_iter[r.iter]
        assert (r.train_loss, r.val_loss, r.dropout_p) == (ref.train_loss, ref.val_loss, ref.dropout_p)
    assert resumed.final_train_loss == full.final_train_loss
    assert resumed.best_val_loss == min(r.val_loss for r in full.metrics if r.iter >= 30)

    a = load_checkpoint(str(tmp_path / "full.bin"))
    b = load_checkpoint(str(tmp_path / "resumed.bin"))
    assert a.restore_params().fingerprint() == b.restore_params().fingerprint()
    _passed(11, "checkpoint round-trip and bit-exact resume")
