"""Acceptance gate: one test per release criterion.

Each test exercises a stated contract at its stated tolerance and prints a
single summary line with the measured values. Criteria 9 and 10 run the
desk-scale pipeline through the command-line entry point and are the slow
part of the suite; everything else finishes in seconds.
"""

import math
import re
import statistics
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest
import torch

from twintune import cli, models, protocols, schedule, stats
from twintune.data import CorpusSpec, Dataset, Sample, compose_corpus, load_manifest
from twintune.losses import (
    CrossCorrelation,
    EmbeddingBatch,
    LossConfig,
    barlow_twins_loss,
    cross_correlation,
    l21_norm,
    normalize_batch,
    sparse_bt_loss,
)
from twintune.models import EncoderSpec, archive_hashes, build_encoder
from twintune.stats import MetricsSummary, SummaryStat, compare, read_metrics_csv


def announce(capsys, line: str) -> None:
    with capsys.disabled():
        print(f"\n{line}")


def test_criterion_01_loss_fixtures(capsys):
    start = time.perf_counter()

    eye = CrossCorrelation(torch.eye(4, dtype=torch.float64))
    loss_identity = barlow_twins_loss(eye, LossConfig(lambd=0.123)).item()
    assert loss_identity == 0.0

    z = EmbeddingBatch(torch.tensor([[1.0, 1.0], [-1.0, -1.0]], dtype=torch.float64))
    c = cross_correlation(normalize_batch(z), normalize_batch(z))
    assert torch.equal(c.values, torch.ones(2, 2, dtype=torch.float64))
    loss_lam1 = barlow_twins_loss(c, LossConfig(lambd=1.0)).item()
    loss_lam05 = barlow_twins_loss(c, LossConfig(lambd=0.5)).item()
    assert loss_lam1 == 2.0
    assert loss_lam05 == 1.0

    w = torch.tensor([[3.0, 4.0], [0.0, 0.0]], dtype=torch.float64)
    cfg = LossConfig(lambd=1.0, alpha=0.01)
    sparse = sparse_bt_loss(c, w, cfg).item()
    base = barlow_twins_loss(c, cfg).item()
    assert l21_norm(w).item() == 5.0
    assert sparse == base + cfg.alpha * 5.0

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    announce(capsys, f"criterion 1 PASS: identity={loss_identity} lam1={loss_lam1} "
                     f"lam05={loss_lam05} sparse={sparse} ({elapsed:.3f}s < 1s)")


def test_criterion_02_gradient_oracle(capsys):
    start = time.perf_counter()
    cfg = LossConfig(lambd=0.25, alpha=0.05)
    n, d = 8, 4
    rng = np.random.default_rng(42)
    h = 1e-6

    def composed(za, zb, w):
        ca = normalize_batch(EmbeddingBatch(za))
        cb = normalize_batch(EmbeddingBatch(zb))
        return sparse_bt_loss(cross_correlation(ca, cb), w, cfg)

    worst = 0.0
    for _ in range(20):
        za = torch.tensor(rng.normal(size=(n, d)), dtype=torch.float64, requires_grad=True)
        zb = torch.tensor(rng.normal(size=(n, d)), dtype=torch.float64, requires_grad=True)
        w = torch.tensor(rng.normal(size=(5, d)), dtype=torch.float64, requires_grad=True)
        analytic = torch.autograd.grad(composed(za, zb, w), (za, zb, w))
        with torch.no_grad():
            for t, grad in zip((za, zb, w), analytic):
                flat = t.reshape(-1)
                gflat = grad.reshape(-1)
                for i in range(flat.numel()):
                    orig = flat[i].item()
                    flat[i] = orig + h
                    hi = composed(za, zb, w).item()
                    flat[i] = orig - h
                    lo = composed(za, zb, w).item()
                    flat[i] = orig
                    fd = (hi - lo) / (2 * h)
                    rel = abs(gflat[i].item() - fd) / max(abs(fd), 1e-6)
                    worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    assert worst < 1e-4
    assert elapsed < 30.0
    announce(capsys, f"criterion 2 PASS: max relative gradient error {worst:.3e} < 1e-4 "
                     f"over 20 draws ({elapsed:.1f}s < 30s)")


def test_criterion_03_normalization_contract(capsys):
    rng = np.random.default_rng(7)
    worst_mean, worst_std = 0.0, 0.0
    for _ in range(100):
        n = int(rng.integers(3, 65))
        d = int(rng.integers(1, 33))
        raw = rng.normal(size=(n, d)) * 10.0 ** rng.uniform(-2, 2, size=d)
        raw = raw + rng.uniform(-50, 50, size=d)
        if d > 1:
            raw[:, 0] = raw[0, 0]
        out = normalize_batch(EmbeddingBatch(torch.tensor(raw, dtype=torch.float64)))
        vals = out.values.numpy()
        nonconstant = (raw != raw[0]).any(axis=0)
        means = np.abs(vals.mean(axis=0))[nonconstant]
        stds = np.abs(vals.std(axis=0) - 1.0)[nonconstant]
        if means.size:
            worst_mean = max(worst_mean, float(means.max()))
            worst_std = max(worst_std, float(stds.max()))
    assert worst_mean < 1e-6
    assert worst_std < 1e-5
    announce(capsys, f"criterion 3 PASS: over 100 batches max |mean|={worst_mean:.2e} < 1e-6, "
                     f"max |std-1|={worst_std:.2e} < 1e-5")


def test_criterion_04_freeze_contracts(micro_corpus, tmp_path, capsys):
    enc = build_encoder(EncoderSpec(kind="tiny-conv", output_dim=16, init_seed=4))
    pre_dir = tmp_path / "ssl_p"
    cfg = protocols.PretrainConfig(
        mode="ssl_p", epochs_phase1=1, epochs_phase2=1, batch_size=16,
        image_size=16, projector_width=8, projector_layers=2, lr_max=0.003, seed=0,
    )
    protocols.further_pretrain(enc, micro_corpus.split("pretrain"), cfg, pre_dir)
    h_in = archive_hashes(pre_dir / "weights" / "encoder_input.archive")
    h_p1 = archive_hashes(pre_dir / "weights" / "encoder_phase1.archive")
    h_fin = archive_hashes(pre_dir / "weights" / "encoder_final.archive")
    assert h_in == h_p1
    frozen_names = {k for k in h_in if not k.startswith("bottleneck")}
    moving_names = {k for k in h_in if k.startswith("bottleneck")}
    assert frozen_names and moving_names
    assert all(h_in[k] == h_fin[k] for k in frozen_names)
    changed = sorted(k for k in moving_names if h_in[k] != h_fin[k])
    assert changed

    enc2 = build_encoder(EncoderSpec(kind="tiny-conv", output_dim=16, init_seed=4))
    probe_dir = tmp_path / "probe"
    tcfg = protocols.TrainConfig(
        epochs_phase1=1, epochs_phase2=1, batch_size=16, image_size=16,
        lr_max=0.003, tta_k=2, seed=0,
    )
    protocols.linear_probe(enc2, micro_corpus, tcfg, probe_dir)
    p_in = archive_hashes(probe_dir / "weights" / "encoder_input.archive")
    p_fin = archive_hashes(probe_dir / "weights" / "encoder_final.archive")
    assert p_in == p_fin
    announce(capsys, f"criterion 4 PASS: phase-1 encoder unchanged ({len(h_in)} tensors), "
                     f"ssl_p moved {len(changed)}/{len(moving_names)} bottleneck tensors with "
                     f"{len(frozen_names)} others byte-identical, probe encoder byte-identical")


def test_criterion_05_schedule_endpoints_and_coupling(capsys):
    total = 999
    for interp in ("cosine", "linear"):
        cfg = schedule.ScheduleConfig(max_lr=0.4, total_steps=total, div=25.0,
                                      final_div=1e4, pct_ramp=0.25, interp=interp)
        lr0, m0 = schedule.one_cycle(0, cfg)
        assert lr0 == cfg.max_lr / cfg.div and m0 == cfg.m_max
        lrb, mb = schedule.one_cycle(cfg.pct_ramp * total, cfg)
        assert lrb == cfg.max_lr and mb == cfg.m_min
        lrT, mT = schedule.one_cycle(total, cfg)
        assert lrT == cfg.start_lr / cfg.final_div and mT == cfg.m_max

        steps = np.arange(total + 1)
        pairs = np.array([schedule.one_cycle(int(s), cfg) for s in steps])
        lrs, moms = pairs[:, 0], pairs[:, 1]
        assert len(steps) == 1000
        products = (lrs[:, None] - lrs[None, :]) * (moms[:, None] - moms[None, :])
        assert float(products.max()) <= 0.0
    announce(capsys, "criterion 5 PASS: endpoints exact for both interpolations; momentum "
                     "inversely ordered with lr over all pairs of 1,000 sampled steps")


def oracle_weighted_f1(preds, labels, classes):
    """Confusion-matrix route, independent of the library implementation."""
    k = len(classes)
    index = {c: i for i, c in enumerate(classes)}
    cm = np.zeros((k, k), dtype=np.int64)
    np.add.at(cm, (np.array([index[l] for l in labels]),
                   np.array([index[p] for p in preds])), 1)
    tp = np.diag(cm).astype(float)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros(k), where=denom > 0)
    weights = cm.sum(axis=1) / len(labels)
    return float((weights * f1).sum())


def test_criterion_06_weighted_f1_oracle(capsys):
    classes = ("A", "B")
    labels = ["A", "A", "B", "B"]
    preds = ["A", "B", "B", "B"]
    fixture = stats.weighted_f1(preds, labels, classes)
    assert fixture == pytest.approx(11.0 / 15.0, abs=1e-9)
    assert stats.accuracy(preds, labels) == 0.75

    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        n = int(rng.integers(4, 101))
        cls = tuple(f"c{i}" for i in range(k))
        labels = [cls[i] for i in rng.integers(0, k, size=n)]
        preds = [cls[i] for i in rng.integers(0, k, size=n)]
        got = stats.weighted_f1(preds, labels, cls)
        want = oracle_weighted_f1(preds, labels, cls)
        worst = max(worst, abs(got - want))
    assert worst < 1e-12
    announce(capsys, f"criterion 6 PASS: fixture={fixture:.10f} (11/15), accuracy=0.75, "
                     f"max |impl - oracle| = {worst:.2e} < 1e-12 over 1,000 random cases")


def mp_welch_p(mean_a, std_a, n_a, mean_b, std_b, n_b, null):
    """Welch p-value through mpmath's regularized incomplete beta."""
    va, vb = std_a**2 / n_a, std_b**2 / n_b
    t = (mean_a - mean_b) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (n_a - 1) + vb**2 / (n_b - 1))
    x = df / (df + t * t)
    tail = 0.5 * mpmath.betainc(df / 2, mpmath.mpf(1) / 2, 0, x, regularized=True)
    sf = float(tail) if t > 0 else 1.0 - float(tail)
    return t, df, (sf if null == "le" else 2 * min(sf, 1 - sf))


def test_criterion_07_statistics_reproduction(capsys):
    start = time.perf_counter()
    sl = MetricsSummary(accuracy=SummaryStat(0.65701, 0.02109, 35),
                        weighted_f1=SummaryStat(0.66873, 0.01710, 35))
    ssl = MetricsSummary(accuracy=SummaryStat(0.69112, 0.01117, 35),
                         weighted_f1=SummaryStat(0.69628, 0.00902, 35))
    one_sided = compare(ssl, sl, null="le", alpha=0.01)
    assert one_sided.p_accuracy < 1e-8 and one_sided.p_f1 < 1e-8
    assert one_sided.verdict == "greater"
    t_acc, _, p_acc_oracle = mp_welch_p(0.69112, 0.01117, 35, 0.65701, 0.02109, 35, "le")
    assert t_acc > 0
    assert abs(math.log10(one_sided.p_accuracy) - math.log10(p_acc_oracle)) < 1.0

    sl_sslp = MetricsSummary(accuracy=SummaryStat(0.69809, 0.01413, 35),
                             weighted_f1=SummaryStat(0.70484, 0.01213, 35))
    ssl_sslp = MetricsSummary(accuracy=SummaryStat(0.69734, 0.01002, 35),
                              weighted_f1=SummaryStat(0.70499, 0.00837, 35))
    equal = compare(sl_sslp, ssl_sslp, null="eq", alpha=0.01)
    assert equal.p_accuracy > 0.05
    assert equal.verdict == "equal-undetermined"
    _, _, p_eq_oracle = mp_welch_p(0.69809, 0.01413, 35, 0.69734, 0.01002, 35, "eq")
    assert abs(math.log10(equal.p_accuracy) - math.log10(p_eq_oracle)) < 1.0
    assert equal.p_accuracy == pytest.approx(0.79869, abs=5e-4)

    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    announce(capsys, f"criterion 7 PASS: one-sided p=({one_sided.p_accuracy:.2e}, "
                     f"{one_sided.p_f1:.2e}) < 1e-8 verdict=greater; equal-null "
                     f"p_accuracy={equal.p_accuracy:.5f} vs published 0.79869 "
                     f"({elapsed:.3f}s < 1s)")


def _fake_dataset(prefix: str, count: int) -> Dataset:
    samples = [Sample(f"{prefix}/{i:06d}.png", None, "train") for i in range(count)]
    return Dataset(samples, ("lesion",))


def test_criterion_08_corpus_arithmetic(capsys):
    iu_spec = CorpusSpec((("isic2019", 1), ("isic2020", 1), ("ufes20", 1)))
    iu_total = iu_spec.total({"isic2019": 2554, "isic2020": 1280, "ufes20": 2298})
    assert iu_total == 6132

    iud_spec = CorpusSpec((("iu", 2), ("dermnet", 1)))
    assert iud_spec.total({"iu": iu_total, "dermnet": 19559}) == 31823
    composed = compose_corpus(iud_spec, {"iu": _fake_dataset("iu", iu_total),
                                         "dermnet": _fake_dataset("derm", 19559)})
    assert len(composed) == 31823
    assert all(s.split == "pretrain" for s in composed.samples)

    oral_spec = CorpusSpec((("clinic", 1), ("target", 10)))
    oral_total = oral_spec.total({"clinic": 60 + 2374, "target": 62})
    assert oral_total == 3054
    announce(capsys, f"criterion 8 PASS: composed pools {iu_total}, 31823 "
                     f"(len={len(composed)}), {oral_total} exactly")


@pytest.fixture(scope="module")
def desk_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk_corpus")
    code = cli.main(["synth", "--out", str(out), "--classes", "8",
                     "--train", "512", "--test", "2048", "--size", "32",
                     "--seed", "0"])
    assert code == 0
    return out / "manifest.csv"


def _phase2_epoch_means(losses_csv: Path) -> list[float]:
    rows = losses_csv.read_text().splitlines()
    assert rows[0] == "phase,epoch,mean_loss"
    return [float(r.split(",")[2]) for r in rows[1:] if r.startswith("phase2,")]


def _median_accuracy(metrics_csv: Path) -> float:
    return statistics.median(r.accuracy for r in read_metrics_csv(metrics_csv))


def test_criterion_09_desk_scale_end_to_end(desk_manifest, tmp_path, capsys):
    start = time.perf_counter()
    pre_dir = tmp_path / "pretrain"
    code = cli.main([
        "pretrain", "--manifest", str(desk_manifest), "--out", str(pre_dir),
        "--image-size", "32", "--encoder", "tiny-conv", "--output-dim", "128",
        "--mode", "ssl_p", "--epochs-phase1", "1", "--epochs-phase2", "20",
        "--batch-size", "128", "--projector-width", "256",
    ])
    assert code == 0
    epoch_means = _phase2_epoch_means(pre_dir / "losses.csv")
    assert len(epoch_means) == 20
    assert epoch_means[-1] < epoch_means[0]

    archive = pre_dir / "weights" / "encoder_final.archive"
    probe_common = [
        "--manifest", str(desk_manifest), "--image-size", "32",
        "--encoder", "tiny-conv", "--output-dim", "128",
        "--epochs-phase1", "1", "--epochs-phase2", "3", "--batch-size", "128",
        "--lr-max", "0.01", "--seeds", "0,1,2,3,4", "--init-seed", "7",
    ]
    pre_probe = tmp_path / "probe_pretrained"
    code = cli.main(["probe", *probe_common, "--out", str(pre_probe),
                     "--archive", str(archive)])
    assert code == 0
    rand_probe = tmp_path / "probe_random"
    code = cli.main(["probe", *probe_common, "--out", str(rand_probe)])
    assert code == 0

    med_pre = _median_accuracy(pre_probe / "metrics.csv")
    med_rand = _median_accuracy(rand_probe / "metrics.csv")
    elapsed = time.perf_counter() - start
    assert med_pre > med_rand
    assert elapsed < 900.0
    announce(capsys, f"criterion 9 PASS: phase-2 loss {epoch_means[0]:.3f} -> "
                     f"{epoch_means[-1]:.3f}, median probe accuracy pretrained "
                     f"{med_pre:.4f} > random {med_rand:.4f} over 5 seeds "
                     f"({elapsed:.0f}s < 900s)")


def test_criterion_10_determinism(desk_manifest, tmp_path, capsys):
    det_was = torch.are_deterministic_algorithms_enabled()
    threads_was = torch.get_num_threads()

    def pipeline(root: Path) -> tuple[bytes, bytes]:
        pre = root / "pretrain"
        code = cli.main([
            "pretrain", "--manifest", str(desk_manifest), "--out", str(pre),
            "--image-size", "32", "--encoder", "tiny-conv", "--output-dim", "64",
            "--mode", "ssl_p", "--epochs-phase1", "1", "--epochs-phase2", "2",
            "--batch-size", "128", "--projector-width", "64",
            "--lr-max", "0.003", "--deterministic",
        ])
        assert code == 0
        probe = root / "probe"
        code = cli.main([
            "probe", "--manifest", str(desk_manifest), "--out", str(probe),
            "--image-size", "32", "--encoder", "tiny-conv", "--output-dim", "64",
            "--epochs-phase1", "1", "--epochs-phase2", "1", "--batch-size", "128",
            "--lr-max", "0.01", "--seeds", "0,1", "--init-seed", "7",
            "--archive", str(pre / "weights" / "encoder_final.archive"),
            "--deterministic",
        ])
        assert code == 0
        return ((pre / "losses.csv").read_bytes(),
                (probe / "metrics.csv").read_bytes())

    try:
        losses_a, metrics_a = pipeline(tmp_path / "first")
        losses_b, metrics_b = pipeline(tmp_path / "second")
    finally:
        torch.use_deterministic_algorithms(det_was)
        torch.set_num_threads(threads_was)

    assert losses_a == losses_b
    assert metrics_a == metrics_b
    announce(capsys, f"criterion 10 PASS: two seeded deterministic pipeline invocations "
                     f"produced identical losses.csv ({len(losses_a)} bytes) and "
                     f"metrics.csv ({len(metrics_a)} bytes)")
