"""Architecture checks: block shapes, symmetry properties, output validity
under fuzzing, and the finite-difference gradient of the whole micro model."""

import numpy as np
import pytest

from conftest import build_sample
from kpcast import nnkernel as nn
from kpcast.errors import DimensionError, ValidationError
from kpcast.loss import LossConfig, total_loss
from kpcast.model import (
    DistVector,
    ModelConfig,
    ModelParams,
    encode_modality,
    forward,
    fuse_and_head,
    init_params,
    project_alignment,
)
from kpcast.nnkernel import GradTape, finite_difference_gradient


def test_distvector_validation():
    DistVector(np.array([0.25, 0.75]))
    with pytest.raises(ValidationError):
        DistVector(np.array([0.5, 0.6]))
    with pytest.raises(ValidationError):
        DistVector(np.array([-0.1, 1.1]))


def test_params_paths_unique_and_weight_selection(micro_params):
    paths = micro_params.paths()
    assert len(paths) == len(set(paths))
    weights = micro_params.weight_paths()
    assert "img.in.W" in weights and "fuse.conv.K" in weights
    assert not any(p.endswith(".b") for p in weights)


def test_encoder_zero_input_zero_weights(micro_config):
    params = init_params(micro_config, seed=0)
    for path in params.paths():
        params[path] = np.zeros_like(params[path])
    x = np.zeros((4, micro_config.img_dim))
    out = encode_modality(x, params, "img")
    assert np.array_equal(out.data, np.zeros((4, micro_config.model_dim)))


def test_encoder_shape_and_width_check(micro_params, micro_config):
    rng = np.random.default_rng(0)
    out = encode_modality(rng.standard_normal((5, micro_config.img_dim)), micro_params, "img")
    assert out.data.shape == (5, micro_config.model_dim)
    with pytest.raises(DimensionError):
        encode_modality(rng.standard_normal((5, 99)), micro_params, "img")


def test_encoder_time_permutation_equivariance(micro_params, micro_config):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((6, micro_config.img_dim))
    perm = rng.permutation(6)
    out = encode_modality(x, micro_params, "img").data
    out_perm = encode_modality(x[perm], micro_params, "img").data
    assert np.allclose(out[perm], out_perm, atol=1e-10)


def test_encoder_gradient_full_block(micro_config):
    params = init_params(micro_config, seed=3)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((3, micro_config.img_dim))
    probe = rng.standard_normal((3, micro_config.model_dim))
    paths = [p for p in params.paths() if p.startswith("img.") and "align" not in p]

    def run(arrays):
        trial = params.copy()
        for path, arr in zip(paths, arrays):
            trial[path] = arr
        return nn.tsum(nn.mul(encode_modality(x, trial, "img"), nn.Tensor(probe))).item()

    tape = GradTape()
    bound = params.copy()
    loss = nn.tsum(nn.mul(encode_modality(x, bound, "img", tape=tape), nn.Tensor(probe)))
    grads = tape.gradients(loss)
    numeric = finite_difference_gradient(run, [params[p] for p in paths])
    for path, gn in zip(paths, numeric):
        ga = grads[path]
        denom = max(np.linalg.norm(ga), np.linalg.norm(gn), 1e-8)
        assert np.linalg.norm(ga - gn) / denom < 1e-5, path


def test_alignment_projection_properties(micro_params, micro_config):
    rng = np.random.default_rng(3)
    h = rng.standard_normal((4, micro_config.model_dim))
    dist = project_alignment(h, micro_params, "img").data
    assert dist.shape == (micro_config.align_bins,)
    assert np.all(dist > 0) and abs(dist.sum() - 1.0) < 1e-12
    # equal-logit head (zero weights) gives the uniform distribution
    flat = micro_params.copy()
    flat["img.align.W"] = np.zeros_like(flat["img.align.W"])
    flat["img.align.b"] = np.zeros_like(flat["img.align.b"])
    uniform = project_alignment(h, flat, "img").data
    assert np.allclose(uniform, 1.0 / micro_config.align_bins, atol=1e-15)


def test_alignment_projection_reproducible(micro_params, micro_config):
    rng = np.random.default_rng(4)
    h = rng.standard_normal((4, micro_config.model_dim))
    a = project_alignment(h, micro_params, "img").data
    b = project_alignment(h, micro_params, "img").data
    assert np.array_equal(a, b)


def test_fuse_concat_width_and_logit_shape(micro_params, micro_config):
    rng = np.random.default_rng(5)
    d = micro_config.model_dim
    encs = [nn.Tensor(rng.standard_normal((4, d))) for _ in range(3)]
    hcat = nn.concat(encs, axis=1)
    assert hcat.data.shape == (4, 3 * d)
    dist28, dist10, dist3, p_high = fuse_and_head(*encs, micro_params)
    assert dist28.data.shape == (micro_config.output_steps, 28)
    assert dist10.data.shape == (micro_config.output_steps, 10)
    assert dist3.data.shape == (micro_config.output_steps, 3)
    assert p_high.data.shape == (micro_config.output_steps,)
    for dist in (dist28, dist10, dist3):
        assert np.allclose(dist.data.sum(axis=1), 1.0, atol=1e-12)
    with pytest.raises(DimensionError):
        fuse_and_head(encs[0], encs[1], nn.Tensor(rng.standard_normal((5, d))), micro_params)


def test_fused_head_logit_count():
    # 28 + 10 + 3 + 1 = 42 outputs per step through the dense head
    cfg = ModelConfig(img_dim=4, sat_dim=2, model_dim=8, heads=2, ff_dim=8,
                      align_bins=5, output_steps=24)
    params = init_params(cfg, seed=0)
    assert params["head.W"].shape == (6 * cfg.model_dim, 24 * 42)


def test_forward_deterministic_in_inference(micro_params, micro_sample):
    a = forward(micro_sample, micro_params, mode="infer")
    b = forward(micro_sample, micro_params, mode="infer")
    assert np.array_equal(a.dist28.data, b.dist28.data)
    assert np.array_equal(a.p_high.data, b.p_high.data)
    assert np.array_equal(a.align_img.data, b.align_img.data)


def test_forward_identical_samples_identical_outputs(micro_params, micro_sample):
    outs = [forward(micro_sample, micro_params, mode="infer") for _ in range(3)]
    for out in outs[1:]:
        assert np.array_equal(outs[0].dist28.data, out.dist28.data)


def test_forward_fuzz_valid_probabilities(micro_config, micro_params):
    rng = np.random.default_rng(6)
    for _ in range(1000):
        sample = build_sample(rng, micro_config)
        out = forward(sample, micro_params, mode="infer")
        for dist in (out.dist28.data, out.dist10.data, out.dist3.data):
            assert np.all(dist >= 0.0)
            assert np.allclose(dist.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((out.p_high.data >= 0.0) & (out.p_high.data <= 1.0))
        for align in (out.align_img.data, out.align_sat.data, out.align_kp.data):
            DistVector(align)


def test_dropout_active_only_in_training(micro_config, micro_sample):
    cfg = ModelConfig(**{**micro_config.__dict__, "dropout_rate": 0.5})
    params = init_params(cfg, seed=1)
    infer_a = forward(micro_sample, params, mode="infer")
    infer_b = forward(micro_sample, params, mode="infer")
    assert np.array_equal(infer_a.dist28.data, infer_b.dist28.data)
    train_a = forward(micro_sample, params, mode="train", rng=np.random.default_rng(0))
    train_b = forward(micro_sample, params, mode="train", rng=np.random.default_rng(1))
    assert not np.array_equal(train_a.dist28.data, train_b.dist28.data)


def test_end_to_end_micro_gradient_check(micro_config, micro_sample):
    params = init_params(micro_config, seed=7)
    lcfg = LossConfig(alpha=0.7, lambda_align=0.25, lambda_l2=0.01)
    paths = params.paths()

    def run(arrays):
        trial = params.copy()
        for path, arr in zip(paths, arrays):
            trial[path] = arr
        out = forward(micro_sample, trial, mode="infer")
        scalar, _ = total_loss(out, micro_sample, trial, lcfg)
        return scalar.item()

    tape = GradTape()
    out = forward(micro_sample, params, mode="infer", tape=tape)
    scalar, _ = total_loss(out, micro_sample, params, lcfg, tape=tape)
    grads = tape.gradients(scalar)
    numeric = finite_difference_gradient(run, [params[p] for p in paths])
    worst = 0.0
    for path, gn in zip(paths, numeric):
        ga = grads[path]
        denom = max(np.linalg.norm(ga), np.linalg.norm(gn), 1e-8)
        worst = max(worst, np.linalg.norm(ga - gn) / denom)
    assert worst < 1e-4
