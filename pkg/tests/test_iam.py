from __future__ import annotations

import numpy as np
import pytest

import tensor as tn
from config import DEFAULT_ITER_POLICY, IamConfig
from errors import ConfigError, DegenerateInputError, DimensionError, UsageError
from featurizer import DenseFeature
from gradcheck import check_gradients
from iam import (
    AttentionParams,
    IamHooks,
    IamParams,
    IterPolicy,
    cross_attend,
    iam_forward,
    pool_latents,
    self_attend,
)
from rng import generator
from tensor import Tensor

N, D, C = 3, 4, 5


def _params(seed: int = 0, heads: int = 1) -> IamParams:
    return IamParams.initialize(IamConfig(n_latents=N, width=D, heads=heads), C, seed, "f64", "iam.")


def _feature(rows: int, seed: int = 0, mask: np.ndarray | None = None) -> DenseFeature:
    matrix = generator(seed, "test/feature").normal(size=(rows, C))
    valid = np.ones(rows, dtype=bool) if mask is None else mask
    return DenseFeature(matrix=Tensor(matrix), modality="video", mask=valid)


def _attention(query: np.ndarray, key: np.ndarray, value: np.ndarray, out: np.ndarray) -> AttentionParams:
    width = query.shape[0]
    return AttentionParams(
        ln_gain=Tensor(np.ones(width)),
        ln_bias=Tensor(np.zeros(width)),
        query=Tensor(query),
        key=Tensor(key),
        value=Tensor(value),
        out_weight=Tensor(out),
        out_bias=Tensor(np.zeros(width)),
    )


@pytest.mark.parametrize("rows", [4, 64, 256])
def test_output_is_fixed_size(rows: int) -> None:
    assert iam_forward(_feature(rows), _params(), 1).shape == (N, D)


def test_parameters_do_not_depend_on_iterations() -> None:
    params = _params()
    names = [name for name, _ in params.named_parameters()]
    count = params.parameter_count()
    for iters in (0, 1, 3, 5):
        assert iam_forward(_feature(6), params, iters).shape == (N, D)
        assert params.parameter_count() == count
    blocks = {name.split(".")[0] for name in names if name != "a_base"}
    assert blocks == {"unrolled", "iterative"}


def test_masked_rows_change_nothing() -> None:
    params = _params()
    base = _feature(6)
    noise = generator(1, "test/noise").normal(size=(2, C))
    data = base.matrix.data
    padded = np.concatenate([data[:1], noise[:1], data[1:4], noise[1:], data[4:]])
    mask = np.ones(8, dtype=bool)
    mask[[1, 5]] = False
    inserted = DenseFeature(matrix=Tensor(padded), modality="video", mask=mask)
    for iters in (0, 3):
        clean = iam_forward(base, params, iters).data
        padded_out = iam_forward(inserted, params, iters).data
        assert np.allclose(clean, padded_out, rtol=0, atol=1e-13)


def test_every_row_masked_is_degenerate() -> None:
    with pytest.raises(DegenerateInputError):
        iam_forward(_feature(3, mask=np.zeros(3, dtype=bool)), _params(), 1)


def test_zero_iterations_is_the_unrolled_block() -> None:
    params = _params()
    feature = _feature(5)
    crossed = cross_attend(params.a_base, feature, params.unrolled.cross, eps=params.ln_eps)
    manual = self_attend(crossed, params.unrolled.self_attn, eps=params.ln_eps)
    assert np.array_equal(iam_forward(feature, params, 0).data, manual.data)


def test_two_iterations_compose_the_shared_block() -> None:
    params = _params()
    feature = _feature(5)
    latents = iam_forward(feature, params, 0)
    for _ in range(2):
        latents = cross_attend(latents, feature, params.iterative.cross, eps=params.ln_eps)
        latents = self_attend(latents, params.iterative.self_attn, eps=params.ln_eps)
    assert np.array_equal(iam_forward(feature, params, 2).data, latents.data)


def test_single_key_cross_attention() -> None:
    rng = generator(2, "test/single")
    block = _attention(rng.normal(size=(D, D)), rng.normal(size=(C, D)), rng.normal(size=(C, D)), rng.normal(size=(D, D)))
    latents = Tensor(rng.normal(size=(N, D)))
    feature = _feature(1)
    out = cross_attend(latents, feature, block).data
    expected = latents.data + (feature.matrix.data @ block.value.data) @ block.out_weight.data
    assert np.allclose(out, expected, rtol=0, atol=1e-12)


def test_uniform_cross_attention_adds_the_feature_mean() -> None:
    rng = generator(3, "test/uniform")
    block = _attention(np.zeros((C, C)), rng.normal(size=(C, C)), np.eye(C), np.eye(C))
    latents = Tensor(rng.normal(size=(N, C)))
    feature = _feature(7)
    out = cross_attend(latents, feature, block, hooks=IamHooks(bypass_layernorm=True)).data
    assert np.allclose(out, latents.data + feature.matrix.data.mean(axis=0), rtol=0, atol=1e-12)


def test_self_attention_examples() -> None:
    rng = generator(4, "test/self")
    block = _attention(rng.normal(size=(D, D)), rng.normal(size=(D, D)), rng.normal(size=(D, D)), rng.normal(size=(D, D)))
    ones, zeros = Tensor(np.ones(D)), Tensor(np.zeros(D))

    single = Tensor(rng.normal(size=(1, D)))
    normed = tn.layernorm(single, ones, zeros, 1e-5).data
    expected = single.data + (normed @ block.value.data) @ block.out_weight.data
    assert np.allclose(self_attend(single, block).data, expected, rtol=0, atol=1e-12)

    latents = Tensor(rng.normal(size=(N, D)))
    order = np.array([2, 0, 1])
    permuted = self_attend(Tensor(latents.data[order]), block).data
    assert np.allclose(permuted, self_attend(latents, block).data[order], rtol=0, atol=1e-12)

    flat = _attention(np.zeros((D, D)), block.key.data, block.value.data, block.out_weight.data)
    normed = tn.layernorm(latents, ones, zeros, 1e-5).data
    mean_value = (normed @ block.value.data).mean(axis=0)
    expected = latents.data + mean_value @ block.out_weight.data
    assert np.allclose(self_attend(latents, flat).data, expected, rtol=0, atol=1e-12)


def test_pool_latents() -> None:
    row = np.array([1.0, -2.0, 3.0])
    assert np.allclose(pool_latents(Tensor(np.tile(row, (4, 1)))).data, row)
    assert pool_latents(Tensor([[1.0, 0.0], [0.0, 1.0]])).data.tolist() == [0.5, 0.5]
    latents = generator(5, "test/pool").normal(size=(4, 3))
    assert np.allclose(pool_latents(Tensor(latents)).data, pool_latents(Tensor(latents[::-1])).data)


def test_argument_errors() -> None:
    with pytest.raises(UsageError):
        iam_forward(_feature(3), _params(), -1)
    wrong = DenseFeature(matrix=Tensor(np.ones((3, C + 1))), modality="text", mask=np.ones(3, dtype=bool))
    with pytest.raises(DimensionError):
        iam_forward(wrong, _params(), 1)


def test_same_seed_same_output() -> None:
    first = iam_forward(_feature(9), _params(seed=11), 3).data
    second = iam_forward(_feature(9), _params(seed=11), 3).data
    assert np.array_equal(first, second)
    assert not np.array_equal(first, iam_forward(_feature(9), _params(seed=12), 3).data)


def test_block_hook_sees_every_application() -> None:
    seen: list[tuple[str, str, int]] = []
    iam_forward(_feature(4), _params(), 3, IamHooks(on_block=lambda *event: seen.append(event)))
    assert seen == [
        ("video", "unrolled", 0),
        ("video", "iterative", 1),
        ("video", "iterative", 2),
        ("video", "iterative", 3),
    ]


@pytest.mark.parametrize("heads", [1, 2])
def test_batched_matches_single(heads: int) -> None:
    params = _params(heads=heads)
    rng = generator(6, "test/batched")
    matrix = rng.normal(size=(2, 6, C))
    mask = np.ones((2, 6), dtype=bool)
    mask[1, 4:] = False
    batched = iam_forward(DenseFeature(Tensor(matrix), "text", mask), params, 2).data
    for b in range(2):
        single = iam_forward(DenseFeature(Tensor(matrix[b]), "text", mask[b]), params, 2).data
        assert np.allclose(batched[b], single, rtol=0, atol=1e-12)


def test_gradients_through_three_iterations() -> None:
    params = _params(seed=7)
    feature_values = Tensor(generator(7, "test/grad").normal(size=(5, C)), requires_grad=True)
    weights = Tensor(generator(8, "test/grad").normal(size=(N, D)))

    def loss_fn() -> Tensor:
        feature = DenseFeature(matrix=feature_values, modality="video", mask=np.ones(5, dtype=bool))
        return tn.sum(tn.mul(iam_forward(feature, params, 3), weights))

    report = check_gradients(
        loss_fn,
        [*params.named_parameters(), ("feature", feature_values)],
        eps=1e-5,
        tolerance=1e-4,
    )
    assert report.passed, [entry.to_row() for entry in report.entries if not entry.passed]


def test_iter_policy() -> None:
    policy = IterPolicy.from_config(DEFAULT_ITER_POLICY)
    assert policy.iters_for("SVST") == (1, 1)
    assert policy.iters_for("LVLT") == (3, 3)
    assert policy.iters_for("LVST") == (3, 1)
    assert policy.iters_for("IT") == (0, 1)
    with pytest.raises(ConfigError):
        IterPolicy.from_config({"SVST": [1, 1]}).require({"SVST", "IT"})
    with pytest.raises(ConfigError):
        IterPolicy.from_config({"SVST": [-1, 1]})
