"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The convergence, ordering
and speed criteria train real (tiny) models and dominate the runtime.
"""

import time

import numpy as np
import pytest

import vqgrid.tensor as T
from vqgrid.adversary import (AdversaryConfig, PatchDiscriminator, adaptive_weight,
                              discriminate, gan_losses, train_step)
from vqgrid.codec import Codec, CodecConfig, decode, encode
from vqgrid.config import OptimizerConfig, config_from_mapping, parse_config_text
from vqgrid.data import make_synthetic_dataset, synthetic_pair
from vqgrid.kmeans import nearest_indices as nearest
from vqgrid.metrics import read_metrics
from vqgrid.quantizer import Codebook, IndexGrid, indices_of, lookup, quantize
from vqgrid.sampler import SamplingParams, plan_windows, sample_grid, sliding_window_sample
from vqgrid.scan_orders import KINDS, build
from vqgrid.tensor import Tensor, backward, grad_check
from vqgrid.train import (fit_transformer, fit_vqgan, run_train_transformer,
                          run_train_vqgan)
from vqgrid.transformer import (LatentTransformer, TransformerConfig, make_conditional,
                                make_unconditional, nll, nll_loss)


@pytest.fixture(autouse=True)
def restore_dtype():
    yield
    T.set_default_dtype(np.float64)


@pytest.fixture(scope="module")
def shapes_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("acc_data")
    return make_synthetic_dataset(root, n=16, size=16, seed=7)


def report(criterion, detail):
    print(f"\nACCEPTANCE {criterion} PASS: {detail}")


# -- criterion 1: gradient integrity ----------------------------------------


def test_c01_gradient_integrity():
    t0 = time.time()
    for seed in range(5):
        rng = np.random.default_rng(seed)
        mult = Tensor(rng.standard_normal((3, 4)))
        idx = rng.integers(0, 4, size=3)
        prims = [
            lambda t: (t * mult).sum(),
            lambda t: (t / 2.3).sum(),
            lambda t: ((t @ T.transpose(t)) * 0.5).sum(),
            lambda t: T.exp(t * 0.5).sum(),
            lambda t: T.log(t * t + 1.0).sum(),
            lambda t: T.sqrt(t * t + 0.3).sum(),
            lambda t: T.tanh(t).sum(),
            lambda t: T.sigmoid(t).sum(),
            lambda t: T.softplus(t).sum(),
            lambda t: T.silu(t).sum(),
            lambda t: T.absolute(t + 0.17).sum(),
            lambda t: (T.softmax(t, axis=-1) * mult).sum(),
            lambda t: (T.log_softmax(t, axis=-1) * mult).sum(),
            lambda t: (T.normalize(t, axis=-1) * mult).sum(),
            lambda t: T.take_along_last(t * t, idx).sum(),
            lambda t: (T.reshape(t, (2, 6)) ** 2.0).sum(),
            lambda t: t.mean(axis=1).sum(),
        ]
        x = Tensor(rng.standard_normal((3, 4)) * 0.7 + 0.2, requires_grad=True)
        for f in prims:
            assert grad_check(f, x) < 1e-4
        k = Tensor(rng.standard_normal((2, 2, 2, 2)), requires_grad=True)
        xin = Tensor(rng.standard_normal((1, 2, 4, 4)))
        assert grad_check(lambda t: (T.conv2d(xin, t, 1, 1) ** 2.0).sum(), k) < 1e-4
        table = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
        assert grad_check(lambda t: (T.gather_rows(t, idx) ** 2.0).sum(), table) < 1e-4

        # quantization objective with the chosen indices frozen, via decoder weights
        codec = Codec(CodecConfig(m=1, image_size=8, K=4, n_z=2, base_channels=4,
                                  rec_loss_kind="squared_error", seed=seed))
        x_img = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)))
        z = T.transpose(encode(x_img, codec), (0, 2, 3, 1)).detach()
        fixed = nearest(z.data.reshape(-1, 2), codec.codebook.entries.data)

        def vq_obj(_w):
            zq = T.reshape(T.gather_rows(codec.codebook.entries, fixed), z.shape)
            x_hat = decode(T.transpose(zq, (0, 3, 1, 2)), codec)
            d_cb = z - zq
            d_cm = zq.detach() - z
            return (((x_img - x_hat) ** 2.0).mean() + (d_cb * d_cb).mean()
                    + 0.25 * (d_cm * d_cm).mean())

        assert grad_check(vq_obj, codec.decoder.last_layer_weight, h=1e-5) < 1e-3

        # adversarial losses, both sides, via a discriminator weight
        disc = PatchDiscriminator(base_channels=4, seed=seed)
        real = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)))
        fake = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)))
        w = disc.conv2.w

        def d_obj(_w):
            d_loss, _ = gan_losses(discriminate(real, disc), discriminate(fake, disc))
            return d_loss

        def g_obj(_w):
            _, g_adv = gan_losses(discriminate(real, disc), discriminate(fake, disc))
            return g_adv

        assert grad_check(d_obj, w, h=1e-5) < 1e-3
        assert grad_check(g_obj, w, h=1e-5) < 1e-3

        # autoregressive nll through a transformer block weight
        model = LatentTransformer(TransformerConfig(K=6, seq_len=10, n_layers=1,
                                                    n_heads=2, d_model=16, d_ff=32,
                                                    seed=seed))
        grid = IndexGrid(rng.integers(0, 6, (2, 2)), 6)
        seq = make_unconditional(grid, build("row_major", 2, 2), model.config)
        assert grad_check(lambda _t: nll_loss(seq, model),
                          model.blocks[0].wv.w, h=1e-5) < 1e-3
    elapsed = time.time() - t0
    assert elapsed < 120, f"gradient checks took {elapsed:.0f}s (budget 120s)"
    report("C1", f"all primitives and composite losses pass finite differences "
                 f"(5 seeds, {elapsed:.0f}s)")


# -- criterion 2: quantizer oracle -------------------------------------------


def test_c02_quantizer_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        K = int(rng.integers(1, 33))
        n_z = int(rng.integers(1, 7))
        entries = rng.standard_normal((K, n_z))
        z = rng.standard_normal((8, n_z))
        d = ((z[:, None, :] - entries[None, :, :]) ** 2).sum(axis=2)
        assert np.array_equal(nearest(z, entries), d.argmin(axis=1))

    cb = Codebook(16, 4, rng=np.random.default_rng(1))
    z = Tensor(rng.standard_normal((5, 6, 4)))
    q = quantize(z, cb)
    q2 = quantize(q.z_q.detach(), cb)
    assert np.array_equal(q2.z_q.data, q.z_q.data)
    assert q2.codebook_loss.item() == 0.0 and q2.commitment_loss.item() == 0.0
    assert np.array_equal(lookup(indices_of(q), cb).data, q.z_q.data)
    report("C2", "nearest-neighbor matches brute force on 1000 instances; "
                 "idempotence and lookup round-trip exact")


# -- criterion 3: straight-through contract -----------------------------------


def test_c03_straight_through_identity_bypass():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        codec = Codec(CodecConfig(m=1, image_size=8, K=8, n_z=4, base_channels=4,
                                  rec_loss_kind="squared_error", seed=seed))
        x = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)))
        z = T.transpose(encode(x, codec), (0, 2, 3, 1))
        z_in = Tensor(z.data.copy(), requires_grad=True)
        q = quantize(z_in, codec.codebook)

        st = T.straight_through(z_in, q.z_q)
        loss = ((x - decode(T.transpose(st, (0, 3, 1, 2)), codec)) ** 2.0).mean()
        backward(loss)
        grad_st = z_in.grad.copy()

        z_bypass = Tensor(q.z_q.data.copy(), requires_grad=True)
        loss2 = ((x - decode(T.transpose(z_bypass, (0, 3, 1, 2)), codec)) ** 2.0).mean()
        backward(loss2)
        assert np.array_equal(grad_st, z_bypass.grad)
    report("C3", "straight-through gradient equals the identity-bypass gradient "
                 "exactly on random tiny codecs")


# -- criterion 4: adaptive weight ---------------------------------------------


def test_c04_adaptive_weight():
    assert adaptive_weight(1.0, 0.5) == pytest.approx(2.0, rel=1e-5)
    assert adaptive_weight(1.0, 0.5) == pytest.approx(1.0 / (0.5 + 1e-6), rel=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = float(rng.uniform(0.01, 10))
        assert adaptive_weight(0.0, x) == 0.0
        a, b, c = rng.uniform(0.01, 5, 3)
        lhs = adaptive_weight(c * a, b, lambda_max=np.inf)
        assert lhs == pytest.approx(c * adaptive_weight(a, b, lambda_max=np.inf),
                                    rel=1e-12)
    report("C4", "lambda(1, 0.5) = 2.0, lambda(0, x) = 0, scale covariance over "
                 "100 random pairs")


# -- criterion 5: causality ----------------------------------------------------


def test_c05_causality_bit_exact():
    t0 = time.time()
    model = LatentTransformer(TransformerConfig(K=32, seq_len=64, n_layers=8,
                                                n_heads=4, d_model=64, d_ff=128,
                                                seed=3))
    rng = np.random.default_rng(4)
    model.head.w.data[:] = rng.standard_normal(model.head.w.shape) * 0.2
    tokens = rng.integers(0, 32, size=64)
    with T.no_grad():
        base = model.forward(tokens).data[0]
    for j in range(1, 64):
        mutated = tokens.copy()
        mutated[j] = (mutated[j] + 7) % 32
        with T.no_grad():
            out = model.forward(mutated).data[0]
        assert np.array_equal(out[:j], base[:j]), f"leak at position {j}"
    elapsed = time.time() - t0
    assert elapsed < 60, f"causality check took {elapsed:.0f}s (budget 60s)"
    report("C5", f"8-layer model: logits before j bit-identical under every "
                 f"perturbation of a length-64 sequence ({elapsed:.0f}s)")


# -- criterion 6: scan orders --------------------------------------------------


def test_c06_scan_orders():
    for kind in KINDS:
        if kind in ("z_curve", "subsample"):
            dims = [(h, w) for h in (1, 2, 4, 8, 16) for w in (1, 2, 4, 8, 16)]
        else:
            dims = [(h, w) for h in range(1, 17) for w in range(1, 17)]
        for h, w in dims:
            order = build(kind, h, w)
            assert {tuple(rc) for rc in order.perm} == {
                (r, c) for r in range(h) for c in range(w)}
    for h in range(1, 9):
        for w in range(1, 9):
            assert np.array_equal(build("spiral_in", h, w).perm,
                                  build("spiral_out", h, w).perm[::-1])
    for h, w in [(8, 8), (16, 16), (8, 16)]:
        order = build("subsample", h, w)
        top = int(np.log2(min(h, w)))
        for level in range(top, 0, -1):
            n = (h >> level) * (w >> level)
            assert {tuple(rc) for rc in order.perm[:n]} == {
                (r, c) for r in range(0, h, 1 << level) for c in range(0, w, 1 << level)}
        z = build("z_curve", h, w)
        for t in range(0, h * w, 4):
            quad = z.perm[t:t + 4]
            assert quad[:, 0].max() - quad[:, 0].min() == 1
            assert quad[:, 1].max() - quad[:, 1].min() == 1
    report("C6", "bijectivity on all grids to 16x16, spiral reversal, subsample "
                 "prefixes, z-curve block contiguity")


# -- criterion 7: sliding-window soundness --------------------------------------


def test_c07_sliding_window_soundness():
    t0 = time.time()
    # structural audit of every plan up to 48x48
    for hf in range(16, 49):
        for wf in range(16, 49):
            plan = plan_windows((hf, wf))
            e = plan.entries
            i = np.arange(hf * wf) // wf
            j = np.arange(hf * wf) % wf
            r0, c0, local = e[:, 0], e[:, 1], e[:, 2]
            assert np.all((r0 >= 0) & (r0 <= hf - 16))
            assert np.all((c0 >= 0) & (c0 <= wf - 16))
            assert np.all((i >= r0) & (i < r0 + 16) & (j >= c0) & (j < c0 + 16))
            assert np.all(local == (i - r0) * 16 + (j - c0))

    # explicit cell-level audit on a sample of grids
    for hf, wf in [(16, 16), (17, 23), (20, 20), (48, 17), (48, 48)]:
        plan = plan_windows((hf, wf))
        targets = [(i, j) for i in range(hf) for j in range(wf)]
        if hf * wf > 600:
            rng = np.random.default_rng(hf * 100 + wf)
            targets = [targets[k] for k in rng.choice(len(targets), 600, replace=False)]
        for i, j in targets:
            r0, c0, local = plan.entry(i, j)
            for li in range(local):
                r, c = r0 + li // 16, c0 + li % 16
                assert (r < i) or (r == i and c < j)

    # degenerate window reproduces full-grid sampling bit-exactly
    model = LatentTransformer(TransformerConfig(K=16, seq_len=70, n_layers=2,
                                                n_heads=2, d_model=32, d_ff=64, seed=5))
    rng = np.random.default_rng(6)
    model.head.w.data[:] = rng.standard_normal(model.head.w.shape) * 0.3
    order = build("row_major", 8, 8)
    params = SamplingParams(seed=13, top_k=16)
    direct = sample_grid(model, (8, 8), order, params)
    slid = sliding_window_sample(model, (8, 8), order, params, window=(8, 8))
    assert np.array_equal(direct.values, slid.values)
    elapsed = time.time() - t0
    assert elapsed < 60, f"sliding-window audit took {elapsed:.0f}s (budget 60s)"
    report("C7", f"local-prefix invariant exhaustive to 48x48; degenerate window "
                 f"bit-exact with full-grid sampling ({elapsed:.0f}s)")


# -- criterion 8: convergence ---------------------------------------------------


def test_c08_convergence():
    t0 = time.time()
    # overfit one batch: 8 images, 32x32, m=2, 2000 steps
    T.set_default_dtype(np.float32)
    rng = np.random.default_rng(0)
    images = np.stack([synthetic_pair(rng, 32)[0] for _ in range(8)])
    codec = Codec(CodecConfig(m=2, image_size=32, base_channels=16,
                              channel_multipliers=(1, 2, 2), n_z=8, K=64,
                              rec_loss_kind="squared_error", seed=0))
    disc = PatchDiscriminator(base_channels=16, seed=0)
    adv = AdversaryConfig(disc_start=1000, beta=0.25, base_channels=16)
    opt = OptimizerConfig(lr=2e-3, beta1=0.5, beta2=0.9)
    fit_vqgan(images, codec, disc, adv, opt, steps=2000, batch_size=8, seed=0)
    with T.no_grad():
        from vqgrid.codec import reconstruct
        x = Tensor(images)
        x_hat, _ = reconstruct(x, codec)
        mse = float(((x_hat.data - x.data) ** 2).mean())
    assert mse < 0.01, f"overfit-one-batch MSE {mse:.5f} >= 0.01"
    T.set_default_dtype(np.float64)

    # memorize four grids behind four class tokens, greedy decode each
    rng = np.random.default_rng(1)
    grids = rng.integers(0, 16, size=(4, 6, 6))
    tcfg = TransformerConfig(K=16, seq_len=40, n_layers=2, n_heads=4, d_model=64,
                             d_ff=128, n_classes=4, seed=2)
    model = LatentTransformer(tcfg)
    order = build("row_major", 6, 6)
    seqs = [make_conditional(i, IndexGrid(grids[i], 16), order, None, tcfg)
            for i in range(4)]
    fit_transformer(seqs, model, OptimizerConfig(lr=3e-3, beta1=0.9, beta2=0.95),
                    steps=500, batch_size=4, seed=3)
    reproduced = 0
    for i in range(4):
        out = sample_grid(model, (6, 6), order, SamplingParams(top_k=1), cond=i)
        reproduced += int(np.array_equal(out.values, grids[i]))
    assert reproduced >= 3, f"greedy decode reproduced only {reproduced}/4 grids"
    elapsed = time.time() - t0
    assert elapsed < 1800, f"convergence runs took {elapsed:.0f}s (budget 30 min)"
    report("C8", f"overfit MSE {mse:.5f} < 0.01 after 2000 steps; greedy decode "
                 f"reproduced {reproduced}/4 memorized grids ({elapsed / 60:.1f} min)")


# -- criterion 9: untrained-nll baseline ---------------------------------------


def test_c09_untrained_nll_near_log_vocab():
    K = 1024
    tcfg = TransformerConfig(K=K, seq_len=65, n_layers=2, n_heads=4, d_model=64,
                             d_ff=128, seed=4)
    model = LatentTransformer(tcfg)
    rng = np.random.default_rng(5)
    order = build("row_major", 8, 8)
    seqs = [make_unconditional(IndexGrid(rng.integers(0, K, (8, 8)), K), order, tcfg)
            for _ in range(4)]
    value = nll(seqs, model)
    assert abs(value - np.log(K)) / np.log(K) < 0.05
    report("C9", f"first-eval nll {value:.4f} within 5% of ln {K} = {np.log(K):.4f}")


# -- criterion 10: ordering-study shape (soft) -----------------------------------


def test_c10_ordering_study_shape(shapes_dataset, tmp_path):
    from vqgrid.experiments import run_ordering_study
    t0 = time.time()
    cfg = config_from_mapping(parse_config_text(f"""
task = ordering-study
dataset = {shapes_dataset}
out_dir = {tmp_path}/ordering
seed = 11
batch_size = 8

[codec]
m = 1
base_channels = 8
n_z = 4
K = 32
image_size = 16
rec_loss_kind = squared_error

[adversary]
disc_start = 1000000
base_channels = 8

[transformer]
n_layers = 2
n_heads = 2
d_model = 32
d_ff = 64

[experiment]
codec_steps = 60
transformer_steps = 150
"""))
    result = run_ordering_study(cfg)
    rows = result["rows"]
    assert len(rows) == 6
    assert {r["order_kind"] for r in rows} == set(KINDS)

    # identical initialization: every run starts from the same step-0 nll
    starts = set()
    for r in rows:
        curve = read_metrics(r["curve_file"])
        assert curve[0]["step"] == "0"
        starts.add(curve[0]["nll"])
    assert len(starts) == 1, f"step-0 nll differs across orders: {starts}"

    by_kind = {r["order_kind"]: r["final_nll"] for r in rows}
    consistent = by_kind["row_major"] <= by_kind["subsample"]
    # reported, soft-asserted: a reversal at toy scale is flagged, not failed
    report("C10", f"six orders trained from one init; row_major nll "
                  f"{by_kind['row_major']:.4f} vs subsample {by_kind['subsample']:.4f} "
                  f"({'consistent with expected ranking' if consistent else 'reversed at toy scale; flagged'}); "
                  f"{(time.time() - t0) / 60:.1f} min")


# -- criterion 11: latent vs pixel speed ------------------------------------------


def test_c11_speed_comparison(tmp_path):
    from vqgrid.experiments import run_speed_compare
    t0 = time.time()
    data_dir = make_synthetic_dataset(tmp_path / "data32", n=12, size=32, seed=9)
    cfg = config_from_mapping(parse_config_text(f"""
task = speed-compare
dataset = {data_dir}
out_dir = {tmp_path}/speed
seed = 12
batch_size = 2
dtype = float32

[codec]
m = 1
base_channels = 16
n_z = 8
K = 128
image_size = 32
rec_loss_kind = squared_error

[adversary]
disc_start = 1000000
base_channels = 8

[transformer]
n_layers = 2
n_heads = 4
d_model = 64
d_ff = 256

[experiment]
codec_steps = 30
transformer_steps = 10
pixel_colors = 512
n_timed_samples = 1
"""))
    result = run_speed_compare(cfg)
    assert result["sequence_ratio"] == pytest.approx(4.0)
    assert result["speedup"] >= 3.0, (
        f"latent sampling only {result['speedup']:.2f}x faster (need >= 3x)")
    elapsed = time.time() - t0
    assert elapsed < 1200, f"speed study took {elapsed:.0f}s (budget 20 min)"
    report("C11", f"16x16 latent sampling {result['speedup']:.2f}x faster than "
                  f"32x32 pixel sampling, decode included ({elapsed / 60:.1f} min)")


# -- criterion 12: reproducibility -------------------------------------------------


def test_c12_bit_identical_reruns(shapes_dataset, tmp_path):
    sections = f"""
dataset = {shapes_dataset}
seed = 21
batch_size = 4
eval_every = 4
checkpoint_every = 0

[codec]
m = 1
base_channels = 8
n_z = 4
K = 16
image_size = 16
rec_loss_kind = squared_error

[adversary]
disc_start = 4
base_channels = 8

[transformer]
n_layers = 1
n_heads = 2
d_model = 16
d_ff = 32
"""
    texts = []
    ckpts = []
    for run in range(2):
        cfg = config_from_mapping(parse_config_text(
            f"task = train-vqgan\nout_dir = {tmp_path}/vq{run}\nsteps = 8\n" + sections))
        run_train_vqgan(cfg)
        texts.append((tmp_path / f"vq{run}" / "metrics.csv").read_text())
        ckpts.append(str(tmp_path / f"vq{run}" / "codec.vqgc"))
    assert texts[0] == texts[1], "train-vqgan metrics differ between identical runs"

    tr_texts = []
    for run in range(2):
        cfg = config_from_mapping(parse_config_text(
            f"task = train-transformer\nout_dir = {tmp_path}/tr{run}\nsteps = 6\n"
            f"codec_checkpoint = {ckpts[run]}\n" + sections))
        run_train_transformer(cfg)
        tr_texts.append((tmp_path / f"tr{run}" / "metrics.csv").read_text())
    assert tr_texts[0] == tr_texts[1], "train-transformer metrics differ"

    # sampling: same seed, same grid, twice
    from vqgrid.checkpoint import load_transformer
    model, _ = load_transformer(str(tmp_path / "tr0" / "transformer.vqgt"))
    order = build("row_major", 8, 8)
    params = SamplingParams(seed=33, top_k=16)
    a = sample_grid(model, (8, 8), order, params)
    b = sample_grid(model, (8, 8), order, params)
    assert a == b
    report("C12", "metrics CSVs bit-identical across repeated runs; sampling "
                  "deterministic under a fixed seed")
