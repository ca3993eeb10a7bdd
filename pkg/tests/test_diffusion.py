import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genssbf import diffusion as D
from genssbf import neuralnet as nn
from genssbf.beamcore import normalized_gain, project_unit
from genssbf.numerics import RngStream, stack_real, standard_complex_gaussian, unstack_real

from fixtures import SMALL_DIFFUSION, single_mode_dataset


def tiny_model(n=2, m=2, seed=0, **kw):
    cfg = D.DiffusionConfig(T=10, hidden=8, depth=2, time_embed_dim=4, prompt_embed_dim=3, **kw)
    return D.build_model(n, m, cfg, RngStream(seed)), cfg


def test_schedule_single_step():
    s = D.linear_schedule(1, 0.01, 0.2)
    assert s.betas.tolist() == [0.01]
    assert s.alpha_bars.tolist() == [pytest.approx(0.99)]


def test_schedule_monotone_and_endpoints():
    s = D.linear_schedule(100, 1e-4, 0.02)
    assert s.betas[0] == 1e-4 and s.betas[-1] == pytest.approx(0.02)
    assert np.all(np.diff(s.alpha_bars) < 0)
    assert s.alpha_bars[0] == s.alphas[0]
    assert np.all((s.alpha_bars > 0) & (s.alpha_bars < 1))


def test_alpha_bar_product_loop_oracle():
    s = D.linear_schedule(100, 1e-4, 0.02)
    # frozen from a plain Python loop prod(1 - (1e-4 + i * (0.02 - 1e-4) / 99))
    assert s.alpha_bar(100) == pytest.approx(0.3635632480554922, abs=1e-12)
    prod = 1.0
    for i in range(100):
        prod *= 1.0 - (1e-4 + i * (0.02 - 1e-4) / 99)
    assert s.alpha_bars[99] == pytest.approx(prod, rel=1e-12)


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_ranges(args):
    with pytest.raises(ValueError):
        D.linear_schedule(*args)


def test_canonicalize_examples():
    assert np.allclose(D.canonicalize_phase(np.array([1j, 0])), stack_real(np.array([1, 0])))
    w = project_unit(np.array([0.6, 0.3 - 0.2j, -0.1j]))
    assert np.allclose(D.canonicalize_phase(w), stack_real(w))
    tiny = np.array([1e-9, 1j]) / np.linalg.norm([1e-9, 1j])
    assert np.allclose(D.canonicalize_phase(tiny), stack_real(tiny))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32))
def test_canonical_target_invariants(seed):
    w = project_unit(standard_complex_gaussian(RngStream(seed, 0), 5))
    h = standard_complex_gaussian(RngStream(seed, 1), 5)
    y = D.canonicalize_phase(w)
    assert np.linalg.norm(y) == pytest.approx(1.0, abs=1e-9)
    assert y[0] >= 0 and y[5] == pytest.approx(0.0, abs=1e-12)
    assert normalized_gain(unstack_real(y), h) == pytest.approx(normalized_gain(w, h), abs=1e-12)
    assert np.allclose(D.canonical_targets(w[None, :])[0], y)


def test_forward_noising_examples():
    s = D.linear_schedule(100, 1e-4, 0.02)
    y0 = np.array([0.6, -0.8])
    assert np.allclose(D.forward_noising(s, y0, 50, np.zeros(2)), math.sqrt(s.alpha_bar(50)) * y0)
    deep = D.linear_schedule(1000, 0.5, 0.5)
    eps = np.array([0.3, 1.2])
    assert np.allclose(D.forward_noising(deep, y0, 1000, eps), eps, atol=1e-12)
    with pytest.raises(ValueError):
        D.forward_noising(s, y0, 0, eps)
    with pytest.raises(ValueError):
        D.forward_noising(s, y0, 101, eps)


def test_forward_noising_statistics_t50():
    s = D.linear_schedule(100, 1e-4, 0.02)
    y0 = np.array([0.5, -0.5, 0.5, 0.5])
    eps = RngStream(60).gen.standard_normal((100_000, 4))
    yt = D.forward_noising(s, y0, np.full(100_000, 50), eps)
    ab = s.alpha_bar(50)
    assert np.allclose(yt.mean(axis=0), math.sqrt(ab) * y0, rtol=0.02)
    assert np.allclose(yt.var(axis=0), 1 - ab, rtol=0.02)


def test_time_embedding_shape_and_range():
    e = D.time_embedding(np.array([1, 50, 100]), 7)
    assert e.shape == (3, 7) and np.all(np.abs(e) <= 1)


def test_zero_loss_when_denoiser_returns_injected_noise():
    # T=1 and y0=0 give y_1 = sqrt(beta) * eps, so a linear denoiser that scales the
    # noisy-target slice by 1/sqrt(beta) and ignores the embeddings returns eps exactly.
    beta, n = 0.04, 2
    cfg = D.DiffusionConfig(T=1, beta_start=beta, beta_end=beta, time_embed_dim=4, prompt_embed_dim=3)
    model = D.build_model(n, 2, cfg, RngStream(0))
    w = np.zeros((2 * n + 4 + 3, 2 * n))
    w[:2 * n, :] = np.eye(2 * n) / math.sqrt(beta)
    model.denoiser = nn.DenseNet([nn.Layer(w, np.zeros(2 * n))])
    loss, grads = D.training_loss(model, np.ones((5, 2)), np.zeros((5, 2 * n)), RngStream(3))
    assert loss == pytest.approx(0.0, abs=1e-20)
    assert all(np.all(np.abs(g) < 1e-12) for g in grads)


def finite_difference_error(model, f, step=1e-5):
    _, grads = f()
    worst = 0.0
    for p, g in zip(model.params(), grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            lp, _ = f()
            flat[k] = orig - step
            lm, _ = f()
            flat[k] = orig
            num = (lp - lm) / (2 * step)
            worst = max(worst, abs(num - gflat[k]) / max(1e-6, abs(num) + abs(gflat[k])))
    return worst


def test_training_loss_gradient_finite_differences():
    model, _ = tiny_model()
    rng = RngStream(70)
    x = rng.child(0).gen.uniform(size=(6, 2))
    y0 = model.target_scale * rng.child(1).gen.normal(size=(6, 4))
    t, eps = D.draw_training_noise(model, 6, rng.child(2))
    err = finite_difference_error(model, lambda: D.loss_and_grads(model, x, y0, t, eps))
    assert err < 1e-5


def test_training_loss_rejects_empty_batch():
    model, _ = tiny_model()
    with pytest.raises(ValueError):
        D.training_loss(model, np.zeros((0, 2)), np.zeros((0, 4)), RngStream(0))


def test_adam_on_frozen_batch_reduces_loss():
    n, m = 4, 3
    cfg = D.DiffusionConfig(hidden=64, depth=2)
    model = D.build_model(n, m, cfg, RngStream(80))
    rng = RngStream(81)
    x = rng.child(0).gen.uniform(size=(256, m))
    y0 = model.target_scale * D.canonical_targets(
        np.stack([project_unit(standard_complex_gaussian(rng.child(1 + i), n)) for i in range(256)]))
    t, eps = D.draw_training_noise(model, 256, rng.child(999))
    first, _ = D.loss_and_grads(model, x, y0, t, eps)
    opt = nn.Adam(lr=1e-3)
    params = model.params()
    for _ in range(500):
        _, g = D.loss_and_grads(model, x, y0, t, eps)
        opt.step(params, g)
    last, _ = D.loss_and_grads(model, x, y0, t, eps)
    assert last < first


def test_train_raises_on_divergence():
    model, cfg = tiny_model(steps=3, batch_size=4)
    model.denoiser.layers[0].bias[:] = np.nan
    with pytest.raises(D.TrainingDivergence):
        D.train(model, np.ones((8, 2)), np.ones((8, 4)) / 2, cfg, RngStream(0))


def test_samples_are_unit_norm_and_deterministic():
    model, _ = tiny_model(n=3, m=2)
    p = np.array([1.0, 0.3])
    a = D.sample(model, p, RngStream(5))
    b = D.sample(model, p, RngStream(5))
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-9)
    cands = D.generate_candidates(model, p, 6, RngStream(6))
    assert np.allclose(np.linalg.norm(cands, axis=1), 1.0, atol=1e-9)


def test_chain_independent_of_batch_composition():
    model, _ = tiny_model(n=3, m=2)
    streams = [RngStream(9, i) for i in range(5)]
    x = RngStream(10).gen.uniform(size=(5, 2))
    batch = D.sample_batch(model, x, streams)
    alone = D.sample_batch(model, x[2:3], [RngStream(9, 2)])
    # matrix products may block differently by batch size, so only the last bits can move
    assert np.allclose(batch[2], alone[0], rtol=0, atol=1e-12)


def test_single_candidate_is_a_plain_sample():
    model, _ = tiny_model()
    p = np.array([0.2, 1.0])
    rng = RngStream(11)
    assert np.array_equal(D.generate_candidates(model, p, 1, rng)[0], D.sample(model, p, rng.child(0)))
    with pytest.raises(ValueError):
        D.generate_candidates(model, p, 0, rng)


def test_candidate_lists_are_prefix_nested():
    model, _ = tiny_model()
    p = np.array([1.0, 0.5])
    short = D.generate_candidates(model, p, 3, RngStream(12))
    long = D.generate_candidates(model, p, 7, RngStream(12))
    assert np.array_equal(short, long[:3])


def test_prompt_dimension_checked():
    model, _ = tiny_model()
    with pytest.raises(ValueError):
        D.sample(model, np.ones(3), RngStream(0))


def test_non_finite_reverse_pass_names_the_step():
    model, _ = tiny_model()
    model.denoiser.layers[-1].bias[:] = np.inf
    with pytest.raises(D.SamplingError, match="t=10"):
        D.sample(model, np.ones(2), RngStream(0))


def test_select_best_examples_and_brute_force():
    h = standard_complex_gaussian(RngStream(13), 4)
    c = np.stack([project_unit(standard_complex_gaussian(RngStream(14, i), 4)) for i in range(6)])
    i, w, g = D.select_best(c, h)
    loop = []
    for cand in c:
        acc = sum(np.conj(a) * b for a, b in zip(cand, h))
        loop.append(abs(acc) ** 2 / sum(abs(b) ** 2 for b in h))
    assert i == int(np.argmax(loop)) and g == pytest.approx(max(loop), abs=1e-12)
    assert D.select_best(c[:1], h)[0] == 0
    dup = np.stack([c[2], c[2], c[0]])
    assert D.select_best(dup, h)[0] in (0, 2) and D.select_best(np.stack([c[i], c[i]]), h)[0] == 0
    with pytest.raises(ValueError):
        D.select_best(c, np.zeros(4))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_select_best_gain_monotone_in_k(seed):
    model, _ = tiny_model(n=3, m=2)
    h = standard_complex_gaussian(RngStream(seed, 1), 3)
    p = np.array([1.0, 0.4])
    cands = D.generate_candidates(model, p, 6, RngStream(seed, 2))
    gains = [D.select_best(cands[:k], h)[2] for k in range(1, 7)]
    assert all(a <= b for a, b in zip(gains, gains[1:]))


def test_checkpoint_roundtrip_preserves_samples(tmp_path):
    model, _ = tiny_model()
    path = tmp_path / "m.bin"
    D.save_model(path, model)
    back = D.load_model(path)
    p = np.array([0.5, 1.0])
    assert np.array_equal(D.sample(model, p, RngStream(3)), D.sample(back, p, RngStream(3)))
    assert back.target_scale == model.target_scale
    assert np.array_equal(back.schedule.betas, model.schedule.betas)


def test_unconditional_checkpoint_and_bad_magic():
    cfg = D.DiffusionConfig(T=5, hidden=8, depth=1, time_embed_dim=4)
    model = D.build_model(2, 0, cfg, RngStream(1))
    buf = io.BytesIO()
    D.write_model(buf, model)
    buf.seek(0)
    back = D.read_model(buf)
    assert back.prompt_net is None and back.prompt_dim == 0
    with pytest.raises(nn.CheckpointError):
        D.read_model(io.BytesIO(b"XXXX" + bytes(40)))


def test_progress_records_are_json_lines():
    model, cfg = tiny_model(steps=5, batch_size=4, log_every=2)
    buf = io.StringIO()
    D.train(model, np.ones((8, 2)), np.ones((8, 4)) / 2, cfg, RngStream(0), D.progress_writer(buf))
    import json
    recs = [json.loads(line) for line in buf.getvalue().splitlines()]
    assert [r["step"] for r in recs] == [0, 2, 4]
    assert set(recs[0]) == {"step", "loss", "wall_ms"}


@pytest.mark.slow
def test_single_mode_fixture_reaches_high_gain():
    n, m = 4, 3
    beam, h, x, y = single_mode_dataset(n, m, 512, seed=15)
    cfg = D.DiffusionConfig(steps=3000, **SMALL_DIFFUSION)
    model = D.build_model(n, m, cfg, RngStream(16))
    D.train(model, x, y, cfg, RngStream(17))
    test_x = RngStream(18).gen.uniform(size=(200, m))
    test_x /= test_x.max(axis=1, keepdims=True)
    w = D.sample_batch(model, test_x, [RngStream(19, i) for i in range(200)])
    gains = [normalized_gain(v, h) for v in w]
    assert np.mean(gains) >= 0.95
