"""Acceptance gate: every criterion at its frozen tolerance.

Expensive artifacts (the six-spec synthetic transfer suite and its trained
variants) are built once per module. Suite training uses a reduced budget
(200 iterations, 96 windows) frozen after pilot calibration; the paired
variant comparisons all share sampling seeds, so the directional claims are
apples to apples. PSNR values are capped at 60 dB when averaged across the
suite so that the identity spec (which trains to an exact identity and
yields infinite PSNR) cannot blow up the means.

Each test prints one `[acceptance] criterion N ...: PASS/FAIL` line.
"""

import time

import numpy as np
import pytest

import editfit.autodiff as ad
from editfit.cli import run_cli
from editfit.imgio import Image, save_image
from editfit.inference import apply_model
from editfit.metrics import color_hist3d, hist_distance, psnr, select_reference
from editfit.model import (
    ModelConfig,
    ModelParams,
    bias_count,
    forward_model,
    init_model,
    mac_count,
    param_count,
)
from editfit.presets import (
    PresetSpec,
    Vignette,
    bundled_specs,
    make_fixture_set,
    serialize_preset,
    synthetic_source_images,
)
from editfit.sampler import ReferencePair
from editfit.trainer import TrainConfig, train

PSNR_CAP_DB = 60.0
SUITE_SOURCES = dict(count=6, height=96, width=128, seed=5)
SUITE_TRAIN = dict(iterations=200, batch=96, window=13, seed=0)

LADDER = [
    ("mlp", ModelConfig(use_sine=False, use_split=False, use_residual=False, use_context=False)),
    ("residual", ModelConfig(use_sine=False, use_split=False, use_context=False)),
    ("sine", ModelConfig(use_split=False, use_context=False)),
    ("split", ModelConfig(use_context=False)),
    ("context", ModelConfig()),
]
EXTRA_VARIANTS = [("fourier", ModelConfig(fourier_features=True))]


def _report(criterion: str, ok: bool, detail: str) -> bool:
    print(f"[acceptance] criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    return ok


def _cap(value: float) -> float:
    return min(value, PSNR_CAP_DB)


@pytest.fixture(scope="module")
def suite():
    """Train every model variant over the bundled six-spec suite."""
    sources = synthetic_source_images(**SUITE_SOURCES)
    fixtures = make_fixture_set(sources, bundled_specs(), seed=0)
    by_spec: dict[str, list] = {}
    for fx in fixtures:
        by_spec.setdefault(fx.spec_id, []).append(fx)
    for fxs in by_spec.values():
        fxs.sort(key=lambda f: f.image_id)

    train_cfg = TrainConfig(**SUITE_TRAIN)
    scores: dict[tuple[str, str], dict[int, float]] = {}

    def evaluate(params, fxs, ids):
        return {
            i: psnr(apply_model(params, fxs[i].before), fxs[i].after) for i in ids
        }

    held_out = range(1, 6)
    for spec_id, fxs in by_spec.items():
        ref = ReferencePair(fxs[0].before, fxs[0].after)
        for name, model_cfg in LADDER + EXTRA_VARIANTS:
            params, _ = train([ref], model_cfg, train_cfg)
            scores[(name, spec_id)] = evaluate(params, fxs, held_out)
        refs3 = [ReferencePair(fxs[i].before, fxs[i].after) for i in range(3)]
        params3, _ = train(refs3, ModelConfig(), train_cfg)
        scores[("context3", spec_id)] = evaluate(params3, fxs, range(3, 6))
    return {"scores": scores, "spec_ids": list(by_spec)}


def _suite_mean(suite_data, variant, spec_ids=None, image_ids=None):
    values = []
    for (name, spec_id), per_image in suite_data["scores"].items():
        if name != variant:
            continue
        if spec_ids is not None and spec_id not in spec_ids:
            continue
        for i, v in per_image.items():
            if image_ids is None or i in image_ids:
                values.append(_cap(v))
    return float(np.mean(values))


# -------------------------------------------------------------------------
# 1. Gradient correctness
# -------------------------------------------------------------------------

def test_criterion_1_gradient_correctness():
    start = time.perf_counter()
    step, rtol, floor = 1e-6, 1e-4, 1e-8
    failures = []
    checks = 0

    def fd_direction(build_out, arrays, rng):
        # The L1 target sits a strictly positive offset below the unperturbed
        # output, so no |diff| element crosses its kink within the FD step.
        nonlocal checks
        base, _ = build_out(arrays)
        target = base.data - rng.uniform(0.3, 0.7, size=base.data.shape)

        def loss_of(arrs):
            out, tape = build_out(arrs)
            return ad.l1_loss(out, ad.feature_map(target), tape), tape

        loss, tape = loss_of(arrays)
        grads = ad.backprop(tape, loss)
        vec = {k: rng.normal(size=v.shape) for k, v in arrays.items()}
        analytic = sum(float((grads[k] * vec[k]).sum()) for k in vec)
        plus = {k: v + step * vec[k] for k, v in arrays.items()}
        minus = {k: v - step * vec[k] for k, v in arrays.items()}
        numeric = (float(loss_of(plus)[0].data) - float(loss_of(minus)[0].data)) / (2 * step)
        rel = abs(analytic - numeric) / max(abs(numeric), floor)
        checks += 1
        if rel >= rtol:
            failures.append(rel)

    # per-op checks over random shapes/seeds
    for seed in range(6):
        rng = np.random.default_rng(seed)
        shape = (int(rng.integers(2, 5)), int(rng.integers(3, 8)), int(rng.integers(3, 8)))
        c_out = int(rng.integers(2, 6))

        def conv_out(arrays):
            tape = ad.Tape()
            y = ad.conv1x1(
                ad.parameter("x", arrays["x"]),
                ad.parameter("w", arrays["w"]),
                ad.parameter("b", arrays["b"]),
                tape,
            )
            return y, tape

        fd_direction(
            conv_out,
            {
                "x": rng.normal(size=shape),
                "w": rng.normal(size=(c_out, shape[0])),
                "b": rng.normal(size=(c_out,)),
            },
            rng,
        )

    for seed in range(6):
        rng = np.random.default_rng(100 + seed)
        shape = (int(rng.integers(2, 5)), int(rng.integers(5, 9)), int(rng.integers(5, 9)))

        def dw_out(arrays):
            tape = ad.Tape()
            y = ad.dwconv(
                ad.parameter("x", arrays["x"]),
                ad.parameter("k", arrays["k"]),
                ad.parameter("b", arrays["b"]),
                tape,
            )
            return ad.sine_act(y, 1.7, tape), tape

        fd_direction(
            dw_out,
            {
                "x": rng.normal(size=shape),
                "k": rng.normal(size=(shape[0], 3, 3)),
                "b": rng.normal(size=(shape[0],)),
            },
            rng,
        )

    for seed in range(4):
        rng = np.random.default_rng(200 + seed)
        shape = (3, int(rng.integers(4, 8)), int(rng.integers(4, 8)))

        def sine_out(arrays):
            tape = ad.Tape()
            return ad.sine_act(ad.parameter("x", arrays["x"]), 5.0, tape), tape

        fd_direction(sine_out, {"x": rng.normal(size=shape)}, rng)

    # full composed model (double precision)
    for seed in range(4):
        rng = np.random.default_rng(300 + seed)
        params = init_model(ModelConfig(), seed)
        params.arrays["head.weight"] = rng.normal(0, 0.1, (3, 64)).astype(np.float32)
        arrays64 = {k: v.astype(np.float64) for k, v in params.arrays.items()}
        rgb = rng.random((3, 9, 9))
        coords = rng.uniform(-1, 1, (2, 9, 9))

        def model_out(arrays):
            p = ModelParams(ModelConfig(), dict(arrays))
            tape = ad.Tape()
            return forward_model(p, rgb, coords, tape), tape

        fd_direction(model_out, arrays64, rng)

    elapsed = time.perf_counter() - start
    ok = not failures and checks >= 20 and elapsed < 30.0
    assert _report(
        "1 (gradient correctness)",
        ok,
        f"{checks} directional FD checks, worst failures={failures}, {elapsed:.1f}s",
    )


# -------------------------------------------------------------------------
# 2. Parameter-count reconstruction
# -------------------------------------------------------------------------

def test_criterion_2_parameter_counts():
    ok = param_count(ModelConfig()) == 11_491
    ok &= param_count(ModelConfig(use_context=False)) == 10_851
    grid_ok = True
    for dw in (1, 3, 5, 7):
        for depth in (0, 1, 2):
            for ctx in (True, False):
                cfg = ModelConfig(dw_kernel=dw, extra_depth=depth, use_context=ctx)
                grid_ok &= param_count(cfg) == init_model(cfg, 0).total_scalars()
    ok &= grid_ok
    assert _report(
        "2 (parameter counts)",
        ok,
        f"default={param_count(ModelConfig())}, no-context="
        f"{param_count(ModelConfig(use_context=False))}, ablation grid exact={grid_ok}",
    )


# -------------------------------------------------------------------------
# 3. Identity at initialization and after identity training
# -------------------------------------------------------------------------

def test_criterion_3_identity_training():
    rng = np.random.default_rng(0)
    probe = Image(rng.random((64, 80, 3)).astype(np.float32))
    init_psnr = psnr(apply_model(init_model(ModelConfig(), 11), probe), probe)

    big = synthetic_source_images(2, 512, 512, seed=3)
    pair = ReferencePair(big[0], big[0])
    start = time.perf_counter()
    params, trace = train([pair], ModelConfig(), TrainConfig(seed=0))
    train_seconds = time.perf_counter() - start
    held = psnr(apply_model(params, big[1]), big[1])
    ok = init_psnr == float("inf") and trace[-1] < 1e-3 and held >= 45.0
    assert _report(
        "3 (identity)",
        ok,
        f"init PSNR={init_psnr}, held-out after 1000 iters={held}, "
        f"final loss={trace[-1]:.2e}, train={train_seconds:.0f}s at 512x512",
    )


# -------------------------------------------------------------------------
# 4. Synthetic transfer suite
# -------------------------------------------------------------------------

def test_criterion_4a_context_gap_on_spatial_specs(suite):
    spatial = {"vignette", "local"}
    full = _suite_mean(suite, "context", spec_ids=spatial)
    pixel_only = _suite_mean(suite, "split", spec_ids=spatial)
    gap = full - pixel_only
    ok = gap >= 1.0
    per_spec = {
        s: (_suite_mean(suite, "context", {s}), _suite_mean(suite, "split", {s}))
        for s in spatial
    }
    assert _report(
        "4a (context gap)",
        ok,
        f"vignette+local mean: full={full:.2f} dB, no-context={pixel_only:.2f} dB, "
        f"gap={gap:+.2f} dB (need >= 1.0); per-spec={per_spec}",
    )


def test_criterion_4b_component_ordering(suite):
    means = {name: _suite_mean(suite, name) for name, _ in LADDER}
    chain = [name for name, _ in LADDER]
    violations = [
        f"{a}={means[a]:.2f} > {b}={means[b]:.2f}+0.2"
        for a, b in zip(chain, chain[1:])
        if means[a] > means[b] + 0.2
    ]
    ok = not violations
    assert _report(
        "4b (component ordering)",
        ok,
        f"suite means {({k: round(v, 2) for k, v in means.items()})}, "
        f"violations={violations or 'none'}",
    )


# -------------------------------------------------------------------------
# 5. Multi-reference monotonicity
# -------------------------------------------------------------------------

def test_criterion_5_multi_reference(suite):
    eval_ids = {3, 4, 5}
    local_one = _suite_mean(suite, "context", {"local"}, eval_ids)
    local_three = _suite_mean(suite, "context3", {"local"}, eval_ids)
    suite_one = _suite_mean(suite, "context", image_ids=eval_ids)
    suite_three = _suite_mean(suite, "context3", image_ids=eval_ids)
    ok = local_three >= local_one - 0.1 and suite_three >= suite_one
    assert _report(
        "5 (multi-reference)",
        ok,
        f"local: 3-ref={local_three:.2f} vs 1-ref={local_one:.2f} (slack 0.1); "
        f"suite: 3-ref={suite_three:.2f} vs 1-ref={suite_one:.2f} (outright)",
    )


# -------------------------------------------------------------------------
# 6. Tiled-inference equivalence
# -------------------------------------------------------------------------

def test_criterion_6_tiled_equivalence():
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        params = init_model(ModelConfig(), seed)
        params.arrays["head.weight"] = rng.normal(0, 0.05, (3, 64)).astype(np.float32)
        img = Image(rng.random((200, 300, 3)).astype(np.float32))
        whole = apply_model(params, img, tile=512)
        for tile in (64, 128, 256):
            tiled = apply_model(params, img, tile=tile)
            worst = max(worst, float(np.abs(whole.data - tiled.data).max()))
    ok = worst < 1e-5
    assert _report(
        "6 (tiled equivalence)", ok, f"max |tiled - whole| = {worst:.2e} over tiles 64/128/256"
    )


# -------------------------------------------------------------------------
# 7. Determinism of eval
# -------------------------------------------------------------------------

def test_criterion_7_eval_determinism(tmp_path):
    rng = np.random.default_rng(0)
    src = tmp_path / "src"
    src.mkdir()
    for i in range(3):
        save_image(Image(rng.random((24, 24, 3)).astype(np.float32)), src / f"{i}.png")
    spec_path = tmp_path / "vig.txt"
    spec_path.write_text(serialize_preset(PresetSpec((Vignette(0.8, 1.0),))))
    fixtures = tmp_path / "fx"
    assert run_cli(
        ["gen", "--spec", str(spec_path), "--inputs", str(src), "--out", str(fixtures),
         "--seed", "1"]
    ) == 0
    reports = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        assert run_cli(
            ["eval", "--fixtures", str(fixtures), "--report", str(path), "--seed", "9",
             "--iters", "40", "--samples", "32", "--window", "9", "--no-timings"]
        ) == 0
        reports.append(path.read_bytes())
    ok = reports[0] == reports[1]
    assert _report(
        "7 (eval determinism)", ok, f"CSV byte-identical across runs = {ok}"
    )


# -------------------------------------------------------------------------
# 8. Linear scaling
# -------------------------------------------------------------------------

def test_criterion_8_linear_scaling():
    cfg = ModelConfig()
    mac_ratio = mac_count(cfg, 2160, 3840) / mac_count(cfg, 720, 1280)
    per_pixel = param_count(cfg) - bias_count(cfg)
    bench_macs = mac_count(cfg, 2160, 3840)
    formula = per_pixel * 3840 * 2160
    macs_ok = mac_ratio == 9.0 and abs(bench_macs - formula) / formula <= 0.02

    params = init_model(cfg, 0)
    rng = np.random.default_rng(1)
    params.arrays["head.weight"] = rng.normal(0, 0.05, (3, 64)).astype(np.float32)

    def best_time(height, width, repeats=2):
        img = Image(rng.random((height, width, 3)).astype(np.float32))
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            apply_model(params, img, tile=256)
            times.append(time.perf_counter() - t0)
        return min(times)

    best_time(360, 640, repeats=1)  # warm-up
    hd = best_time(720, 1280)
    uhd = best_time(2160, 3840)
    wall_ratio = uhd / hd
    ok = macs_ok and 7.6 <= wall_ratio <= 10.3
    assert _report(
        "8 (linear scaling)",
        ok,
        f"MAC ratio={mac_ratio}, bench MACs={bench_macs / 1e9:.2f} G "
        f"(formula {formula / 1e9:.2f} G), wall 4K/HD={wall_ratio:.2f} "
        f"(HD {hd:.2f}s, 4K {uhd:.2f}s)",
    )


# -------------------------------------------------------------------------
# 9. Reference selection
# -------------------------------------------------------------------------

def test_criterion_9_reference_selection():
    rng = np.random.default_rng(2)
    base = rng.random((24, 24, 3)) * 0.5
    exact = [
        ReferencePair(Image(rng.random((24, 24, 3)).astype(np.float32)),
                      Image(rng.random((24, 24, 3)).astype(np.float32)))
        for _ in range(3)
    ]
    exact_idx = select_reference(exact[1].before, exact)
    zero_dist = hist_distance(
        color_hist3d(exact[1].before), color_hist3d(exact[exact_idx].before)
    )

    shifts = [0.0, 0.2, 0.4]
    family = [
        ReferencePair(Image(np.clip(base + s, 0, 1).astype(np.float32)),
                      Image(np.clip(base + s, 0, 1).astype(np.float32)))
        for s in shifts
    ]
    probe = Image(np.clip(base + 0.05, 0, 1).astype(np.float32))
    dists = [
        hist_distance(color_hist3d(probe), color_hist3d(p.before)) for p in family
    ]
    oracle_idx = int(np.argmin(dists))
    chosen = select_reference(probe, family)
    ok = exact_idx == 1 and zero_dist == 0.0 and chosen == oracle_idx == 0
    assert _report(
        "9 (reference selection)",
        ok,
        f"exact match idx={exact_idx} dist={zero_dist}, brightness family -> {chosen} "
        f"(oracle {oracle_idx})",
    )


# -------------------------------------------------------------------------
# 10. Fourier-feature direction
# -------------------------------------------------------------------------

def test_criterion_10_fourier_not_superior(suite):
    default_mean = _suite_mean(suite, "context")
    fourier_mean = _suite_mean(suite, "fourier")
    ok = fourier_mean <= default_mean + 0.2
    assert _report(
        "10 (fourier direction)",
        ok,
        f"fourier={fourier_mean:.2f} dB vs raw-input={default_mean:.2f} dB "
        f"(must not exceed by > 0.2)",
    )
