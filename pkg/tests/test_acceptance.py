"""Acceptance criteria 1-9, one PASS/FAIL line each.

The lines are printed as each criterion finishes and repeated in the
"acceptance criteria" section of the pytest summary.  Tolerances and budgets
are pinned as module constants.
"""

import math
import time

import numpy as np

import conftest
from ganaug import cli
from ganaug.classifier import ClfTrainConfig, VggSpec, build_vgg16, train_classifier
from ganaug.dataio import (
    decode_image,
    denormalize,
    load_checkpoint,
    normalize,
    read_csv,
    save_checkpoint,
)
from ganaug.dcgan import GanTrainConfig, build_discriminator, build_generator, generate, train_dcgan
from ganaug.losses import cross_entropy, disc_loss, gen_loss, minimax_value
from ganaug.metrics import LUMA_WEIGHTS, confusion_matrix, pairwise_auc, roc_curve, ssim_pair
from ganaug.nn import functional as F
from ganaug.nn import init_params
from ganaug.tensor import Rng, Tensor, grad_check, leaky_relu, no_grad, relu, sigmoid, tanh
from helpers import pixel_hist, shapes_fixture, two_tone_fixture, write_tree
from oracles import conv2d_naive, conv_transpose2d_scatter, gaussian_ssim_window_reference

GRAD_TOL = 5e-3
GRAD_BUDGET_S = 60
CONV_TOL = 1e-5
ADJOINT_TOL = 1e-4
LOSS_TOL = 1e-6
GAN_BUDGET_S = 300
CLF_BUDGET_S = 300
E2E_BUDGET_S = 900
AUC_TOL = 1e-9
SSIM_TOL = 1e-6


def report(n, title, ok, detail):
    line = f"criterion {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    conftest.ACCEPTANCE[n] = line
    print(line)
    assert ok, line


def away_from_kinks(x, margin=0.01):
    x = np.array(x)
    x[np.abs(x) < margin] += 2 * margin
    return x


def test_criterion_1_gradients():
    start = time.perf_counter()
    rng = Rng(2024)
    errs = {}

    def check(name, f, x):
        assert x.size <= 512
        errs[name] = grad_check(f, Tensor(x))

    w = Tensor(rng.normal((4, 3, 3, 3), std=0.5))
    b = Tensor(rng.normal((4,)))
    probe = Tensor(rng.normal((2, 4, 4, 4)))
    check("conv2d/x", lambda x: (F.conv2d(x, w, b, 2, 1) * probe).sum(), rng.normal((2, 3, 8, 8)))
    x_conv = Tensor(rng.normal((2, 3, 8, 8)))
    check("conv2d/w", lambda ww: (F.conv2d(x_conv, ww, b, 2, 1) * probe).sum(), w.data)

    wt = Tensor(rng.normal((3, 2, 4, 4), std=0.5))
    probe_t = Tensor(rng.normal((2, 2, 8, 8)))
    check("conv_transpose2d/x", lambda x: (F.conv_transpose2d(x, wt, None, 2, 1) * probe_t).sum(),
          rng.normal((2, 3, 4, 4)))
    x_t = Tensor(rng.normal((2, 3, 4, 4)))
    check("conv_transpose2d/w", lambda ww: (F.conv_transpose2d(x_t, ww, None, 2, 1) * probe_t).sum(),
          wt.data)

    gamma, beta = Tensor(rng.normal((3,), 1.0, 0.3)), Tensor(rng.normal((3,)))
    probe_bn = Tensor(rng.normal((4, 3, 3, 3)))

    def bn(x):
        y = F.batch_norm(x, gamma, beta, np.zeros(3, np.float32), np.ones(3, np.float32), True)
        return (y * probe_bn).sum()
    check("batchnorm(train)/x", bn, rng.normal((4, 3, 3, 3), 2.0, 1.5))

    x_bn = Tensor(rng.normal((4, 3, 3, 3)))

    def bn_gamma(g):
        return (F.batch_norm(x_bn, g, beta, np.zeros(3, np.float32), np.ones(3, np.float32), True)
                * probe_bn).sum()
    check("batchnorm(train)/gamma", bn_gamma, gamma.data)

    wd, bd = Tensor(rng.normal((5, 7))), Tensor(rng.normal((5,)))
    probe_d = Tensor(rng.normal((6, 5)))
    check("dense/x", lambda x: (F.dense(x, wd, bd) * probe_d).sum(), rng.normal((6, 7)))
    x_d = Tensor(rng.normal((6, 7)))
    check("dense/w", lambda ww: (F.dense(x_d, ww, bd) * probe_d).sum(), wd.data)

    probe_a = Tensor(rng.normal((8, 8)))
    x_a = away_from_kinks(rng.normal((8, 8), std=2.0))
    for name, fn in (("relu", relu), ("leaky_relu", lambda x: leaky_relu(x, 0.2)),
                     ("tanh", tanh), ("sigmoid", sigmoid)):
        check(name, lambda x, fn=fn: (fn(x) * probe_a).sum(), x_a)

    probe_p = Tensor(rng.normal((2, 3, 2, 2)))
    check("maxpool", lambda x: (F.max_pool2d(x, 2, 2) * probe_p).sum(),
          rng.permutation(96).reshape(2, 3, 4, 4) / 10.0)
    labels = rng.integers(0, 5, 9)
    check("softmax-cross-entropy", lambda z: cross_entropy(z, labels), rng.normal((9, 5), std=2.0))
    probe_s = Tensor(rng.normal((4, 6)))
    check("softmax", lambda z: (F.softmax(z) * probe_s).sum(), rng.normal((4, 6)))
    fake = Tensor(rng.uniform((16, 1), 0.05, 0.95))
    check("disc_loss/real", lambda r: disc_loss(r, fake), rng.uniform((16, 1), 0.05, 0.95))
    real = Tensor(rng.uniform((16, 1), 0.05, 0.95))
    check("disc_loss/fake", lambda f: disc_loss(real, f), rng.uniform((16, 1), 0.05, 0.95))
    check("gen_loss", gen_loss, rng.uniform((16, 1), 0.05, 0.95))

    elapsed = time.perf_counter() - start
    worst = max(errs, key=errs.get)
    ok = errs[worst] <= GRAD_TOL and elapsed < GRAD_BUDGET_S
    report(1, "gradient correctness", ok,
           f"{len(errs)} checks, max rel err {errs[worst]:.2e} ({worst}) <= {GRAD_TOL}, "
           f"{elapsed:.1f}s < {GRAD_BUDGET_S}s")


def test_criterion_2_convolution_oracles():
    gen = np.random.default_rng(7)
    worst_conv = worst_t = worst_adj = 0.0
    for _ in range(50):
        n, ci, co = (int(v) for v in gen.integers(1, 4, 3))
        k, s = int(gen.integers(1, 5)), int(gen.integers(1, 4))
        p = int(gen.integers(0, k))
        m = int(gen.integers(1, 5))
        h = s * m + k - 2 * p  # conv then transpose returns to h exactly
        if h < 1:
            h, p = s * m + k, 0
        x = gen.uniform(-1, 1, (n, ci, h, h)).astype(np.float32)
        w = gen.uniform(-1, 1, (co, ci, k, k)).astype(np.float32)
        bias = gen.uniform(-1, 1, co).astype(np.float32)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(bias), s, p).data
        worst_conv = max(worst_conv, np.abs(out - conv2d_naive(x, w, bias, s, p)).max())

        y = gen.uniform(-1, 1, out.shape).astype(np.float32)
        wt = gen.uniform(-1, 1, (ci, co, k, k)).astype(np.float32)
        bt = gen.uniform(-1, 1, co).astype(np.float32)
        xt = gen.uniform(-1, 1, (n, ci, m + 1, m + 1)).astype(np.float32)
        tout = F.conv_transpose2d(Tensor(xt), Tensor(wt), Tensor(bt), s, p).data
        worst_t = max(worst_t, np.abs(tout - conv_transpose2d_scatter(xt, wt, bt, s, p)).max())

        fwd = F.conv2d(Tensor(x), Tensor(w), None, s, p).data
        back = F.conv_transpose2d(Tensor(y), Tensor(w), None, s, p).data
        lhs = np.sum(fwd.astype(np.float64) * y)
        rhs = np.sum(x.astype(np.float64) * back)
        worst_adj = max(worst_adj, abs(lhs - rhs))
    ok = worst_conv <= CONV_TOL and worst_t <= CONV_TOL and worst_adj <= ADJOINT_TOL
    report(2, "convolution oracles", ok,
           f"50 configs, conv2d max abs err {worst_conv:.1e}, conv_transpose2d {worst_t:.1e} "
           f"(tol {CONV_TOL}); adjointness gap {worst_adj:.1e} (tol {ADJOINT_TOL})")


def test_criterion_3_loss_identities():
    half = Tensor(np.full((8, 1), 0.5, np.float32))
    d_err = abs(disc_loss(half, half).item() - 2 * math.log(2))
    g_err = abs(gen_loss(half).item() - math.log(2))
    rng = Rng(3)
    exact = 0
    for i in range(100):
        m = int(rng.integers(1, 65))
        # include probabilities at and beyond the clamp
        r = np.clip(rng.uniform((m, 1), -0.05, 1.05), 0, 1)
        f = np.clip(rng.uniform((m, 1), -0.05, 1.05), 0, 1)
        exact += disc_loss(Tensor(r), Tensor(f)).item() == -minimax_value(Tensor(r), Tensor(f))
    ok = d_err <= LOSS_TOL and g_err <= LOSS_TOL and exact == 100
    report(3, "loss identities", ok,
           f"|disc_loss(.5,.5)-2ln2|={d_err:.1e}, |gen_loss(.5)-ln2|={g_err:.1e}, "
           f"disc_loss == -minimax exactly on {exact}/100 batches")


def _conv_shapes(net, x):
    with no_grad():
        return [a.shape[1:] for layer, a in zip(net.layers, net.activations(x))
                if layer.kind in ("conv", "conv_t")]


def test_criterion_4_architecture_shape_chains():
    notes = []
    G = init_params(build_generator(GanTrainConfig()), Rng(0))
    g_chain = [s[1] for s in _conv_shapes(G, Tensor(Rng(1).normal((2, 100, 1, 1))))]
    D = init_params(build_discriminator(GanTrainConfig()), Rng(1))
    d_chain = [64] + [s[1] for s in _conv_shapes(D, Tensor(Rng(2).normal((2, 3, 64, 64))))]
    ok = g_chain == [4, 8, 16, 32, 64] and d_chain == [64, 32, 16, 8, 4, 1]
    notes.append(f"G 100->{'->'.join(map(str, g_chain))}, D {'->'.join(map(str, d_chain))}")
    for size in (16, 32, 64):
        cfg = GanTrainConfig(image_size=size, base_width=8)
        g = init_params(build_generator(cfg), Rng(0))
        d = init_params(build_discriminator(cfg), Rng(1))
        with no_grad():
            img = g(Tensor(Rng(2).normal((2, 100, 1, 1))))
            prob = d(img)
        ok &= img.shape == (2, 3, size, size) and prob.shape == (2, 1)
    notes.append("sizes 16/32/64 build and forward")
    vgg = build_vgg16(VggSpec())
    counts = (vgg.count("conv"), vgg.count("maxpool"), vgg.count("dense"), vgg.learnable_layers)
    ok &= counts == (13, 5, 3, 16)
    notes.append("VGG conv/pool/dense/learnable = %d/%d/%d/%d" % counts)
    report(4, "architecture shape chains", ok, "; ".join(notes))


SMOKE = dict(image_size=16, base_width=16, epochs=30, batch_size=16, lr=0.002)


def test_criterion_5_gan_smoke():
    start = time.perf_counter()
    real = normalize(two_tone_fixture(n=64, size=16), "gan")
    h_real = pixel_hist(real.data)
    decreased, sane = 0, True
    deltas = []
    for seed in range(10):
        dist = {}

        def on_epoch(epoch, G, D, history):
            if epoch in (1, SMOKE["epochs"]):
                dist[epoch] = np.abs(pixel_hist(generate(G, 64, Rng(99))) - h_real).mean()
        _, _, hist = train_dcgan(real, GanTrainConfig(seed=seed, **SMOKE), on_epoch=on_epoch)
        for r in hist.records:
            sane &= math.isfinite(r.loss_d) and math.isfinite(r.loss_g)
            sane &= 0 < r.d_real < 1 and 0 < r.d_fake < 1
        decreased += dist[SMOKE["epochs"]] < dist[1]
        deltas.append(dist[SMOKE["epochs"]] - dist[1])
    elapsed = time.perf_counter() - start
    ok = sane and decreased >= 7 and elapsed < GAN_BUDGET_S
    report(5, "GAN smoke training", ok,
           f"losses finite and D outputs in (0,1): {sane}; histogram distance fell in "
           f"{decreased}/10 seeds (need 7, mean change {np.mean(deltas):+.4f}); "
           f"{elapsed:.0f}s < {GAN_BUDGET_S}s")


def test_criterion_6_classifier_overfit():
    start = time.perf_counter()
    imgs, labels = shapes_fixture(per_class=10, size=64)
    results = []
    for seed in (0, 1, 2):
        cfg = ClfTrainConfig(input_size=64, width_scale=0.125, epochs=200, seed=seed,
                             val_fraction=0.1, stop_at_train_acc=0.99)
        curves = train_classifier(imgs, labels, cfg).curves.epochs
        best = max(e.train_acc for e in curves)
        results.append((seed, best, len(curves)))
    elapsed = time.perf_counter() - start
    ok = all(acc >= 0.99 for _, acc, _ in results) and elapsed < CLF_BUDGET_S
    detail = ", ".join(f"seed {s}: acc {a:.3f} by epoch {n}" for s, a, n in results)
    report(6, "classifier overfit sanity", ok, f"{detail}; {elapsed:.0f}s < {CLF_BUDGET_S}s")


def test_criterion_7_metric_oracles():
    gen = np.random.default_rng(11)
    worst_auc = 0.0
    for _ in range(200):
        n = int(gen.integers(2, 51))
        labels = gen.permutation(np.r_[0, 1, gen.integers(0, 2, n - 2)])
        scores = np.round(gen.random(n), 1)  # ties on purpose
        worst_auc = max(worst_auc, abs(roc_curve(scores, labels, 1).auc
                                       - pairwise_auc(scores, labels == 1)))
    img = gen.integers(0, 256, (24, 24, 3), dtype=np.uint8)
    other = gen.integers(0, 256, (24, 24, 3), dtype=np.uint8)
    identical = ssim_pair(img, img) == 1.0
    weights = np.array(LUMA_WEIGHTS)
    ref = gaussian_ssim_window_reference(img.astype(np.float64) @ weights,
                                         other.astype(np.float64) @ weights)
    ssim_err = abs(ssim_pair(img, other) - ref)
    t, p = gen.integers(0, 3, 300), gen.integers(0, 3, 300)
    cm = confusion_matrix(t, p, 3).counts
    cm_ok = cm.sum() == 300 and np.array_equal(cm.sum(axis=1), np.bincount(t, minlength=3))
    roc = roc_curve(gen.random(300), t, 2)
    ends = (roc.fpr[0], roc.tpr[0], roc.fpr[-1], roc.tpr[-1]) == (0.0, 0.0, 1.0, 1.0)
    ok = worst_auc <= AUC_TOL and identical and ssim_err <= SSIM_TOL and cm_ok and ends
    report(7, "metric oracles", ok,
           f"AUC vs pairwise max gap {worst_auc:.1e} over 200 instances; ssim(x,x)==1: {identical}; "
           f"ssim vs windowed reference {ssim_err:.1e}; confusion totals exact: {cm_ok}; "
           f"ROC endpoints exact: {ends}")


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_8_determinism_and_persistence(tmp_path):
    imgs, labels = shapes_fixture(per_class=6, size=16)
    data = write_tree(tmp_path / "real", imgs, labels)
    gan_args = ["--set", "gan.image_size=16", "--set", "gan.base_width=8", "--set", "gan.epochs=3",
                "--set", "gan.batch_size=4", "--set", "gan.checkpoint_every=1"]
    clf_args = ["--set", "clf.input_size=32", "--set", "clf.width_scale=0.0625",
                "--set", "clf.epochs=2", "--set", "clf.batch_size=4"]
    trees = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert cli.main(["train-gan", "--class", "square", "--data", str(data),
                         "--out", str(out / "gan"), "--seed", "5"] + gan_args) == 0
        assert cli.main(["generate", "--checkpoint", str(out / "gan" / "generator.gacp"),
                         "--n", "6", "--out", str(out / "gen"), "--seed", "2"]) == 0
        assert cli.main(["train-clf", "--data", str(data), "--out", str(out / "clf"),
                         "--seed", "5"] + clf_args) == 0
        trees.append(_tree_bytes(out))
    same_runs = trees[0] == trees[1] and any(k.endswith("loss_history.csv") for k in trees[0])
    n_files = len(trees[0])

    net = load_checkpoint(tmp_path / "a" / "gan" / "generator.gacp")
    save_checkpoint(net, tmp_path / "copy.gacp")
    again = load_checkpoint(tmp_path / "copy.gacp")
    round_trip = ((tmp_path / "copy.gacp").read_bytes()
                  == (tmp_path / "a" / "gan" / "generator.gacp").read_bytes()
                  and all(again.state()[k].tobytes() == v.tobytes() for k, v in net.state().items()))

    vals = np.arange(256, dtype=np.uint8).reshape(1, 16, 16, 1).repeat(3, axis=3)
    exhaustive = all(np.array_equal(denormalize(normalize(vals, m), m), vals) for m in ("gan", "clf"))
    ok = same_runs and round_trip and exhaustive
    report(8, "determinism and persistence", ok,
           f"two seeded runs byte-identical over {n_files} files: {same_runs}; "
           f"checkpoint round trip exact: {round_trip}; normalize/denormalize exact for 256 values: "
           f"{exhaustive}")


def test_criterion_9_end_to_end(tmp_path):
    start = time.perf_counter()
    imgs, labels = shapes_fixture(per_class=12, size=16, seed=3)
    real = write_tree(tmp_path / "real", imgs, labels)
    classes = ("circle", "square", "triangle")
    gan_args = ["--set", "gan.image_size=16", "--set", "gan.base_width=16", "--set", "gan.epochs=40",
                "--set", "gan.batch_size=4", "--set", "gan.lr=0.002", "--set", "gan.checkpoint_every=20"]
    ok = True
    for c in classes:
        ok &= cli.main(["train-gan", "--class", c, "--data", str(real), "--out",
                        str(tmp_path / "gan" / c), "--seed", "1"] + gan_args) == 0
        ok &= cli.main(["generate", "--checkpoint", str(tmp_path / "gan" / c / "generator.gacp"),
                        "--n", "200", "--out", str(tmp_path / "gen" / c), "--seed", "9"]) == 0
    generated = {c: len(list((tmp_path / "gen" / c).iterdir())) for c in classes}
    ok &= set(generated.values()) == {200}
    ok &= decode_image(next((tmp_path / "gen" / "circle").iterdir())).shape == (16, 16, 3)

    ssim_csv = tmp_path / "reports" / "ssim_report.csv"
    ok &= cli.main(["ssim", "--real", str(real), "--generated", str(tmp_path / "gen"),
                    "--out", str(ssim_csv)]) == 0
    rows = read_csv(ssim_csv)
    ssim_ok = [r["class"] for r in rows] == list(classes) and all(
        -1 <= float(r["min"]) <= float(r["mean"]) <= float(r["max"]) <= 1 for r in rows)

    ok &= cli.main(["train-clf", "--data", str(tmp_path / "gen"), "--out", str(tmp_path / "clf"),
                    "--seed", "1", "--set", "clf.input_size=32", "--set", "clf.width_scale=0.125",
                    "--set", "clf.epochs=4", "--set", "clf.batch_size=32"]) == 0
    curves = read_csv(tmp_path / "clf" / "training_curves.csv")
    ok &= len(curves) == 4
    ok &= cli.main(["evaluate", "--model", str(tmp_path / "clf" / "model.gacp"), "--data", str(real),
                    "--out", str(tmp_path / "eval")]) == 0
    ev = tmp_path / "eval"
    files = ["confusion.csv", "roc_class_0.csv", "roc_class_1.csv", "roc_class_2.csv", "summary.csv"]
    present = all((ev / f).exists() for f in files)
    consistent = False
    if present:
        cm = read_csv(ev / "confusion.csv")
        row_sums = [sum(int(v) for k, v in r.items() if k != "true\\pred") for r in cm]
        summary = read_csv(ev / "summary.csv")
        diag = sum(int(r[r["true\\pred"]]) for r in cm)
        consistent = (row_sums == [12, 12, 12]
                      and [r["class"] for r in summary] == list(classes) + ["overall"]
                      and abs(float(summary[-1]["accuracy"]) - diag / 36) < 1e-5)
    elapsed = time.perf_counter() - start
    ok = ok and ssim_ok and present and consistent and elapsed < E2E_BUDGET_S
    report(9, "end-to-end pipeline", ok,
           f"3 GANs trained, 200 images/class generated; ssim rows in [-1,1] with min<=mean<=max: "
           f"{ssim_ok}; confusion/roc x3/summary written: {present}; counts consistent (36 real): "
           f"{consistent}; {elapsed:.0f}s < {E2E_BUDGET_S}s")

