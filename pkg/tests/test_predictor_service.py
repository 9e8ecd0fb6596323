import numpy as np
import pytest

from schemas.predictor import PredictorDims, PredictorParams, PreparedSample, unflatten
from schemas.run_config import Variant
from services.graph_service import normalize_adjacency, one_hot_states, physical_adjacency
from services.predictor_service import (
    PredictorService, attention_pool, encode_steps, gcn_layer, lstm_forward, stack_batch,
)
from utils.errors import GraphError, MissingArtifactError, ShapeError

DIMS = PredictorDims(phys_in=4, cog_in=3, gcn_width=3, lstm_width=4, attention_width=3, future_steps=2)


def synthetic_sample(rng, n_vehicles, dbn="sor", steps=4, index=0):
    positions = rng.uniform(0, 8, (steps, n_vehicles, 2))
    phys = np.concatenate([positions, rng.standard_normal((steps, n_vehicles, 2))], axis=2)
    states = rng.integers(0, 3, (steps, 3))
    cog_a = rng.uniform(0, 1, (steps, 3, 3)) * (1 - np.eye(3))
    return PreparedSample(
        key=f"synthetic@{index}",
        scenario_id=1,
        phys_features=phys,
        phys_adjacency=normalize_adjacency(physical_adjacency(positions, 5.0)),
        ego_index=0,
        cog_features=one_hot_states(states, 3),
        cog_adjacency=normalize_adjacency(cog_a),
        dbn=dbn,
        origin=positions[-1, 0],
        history_xy=positions[:, 0],
        future_xy=positions[-1, 0] + rng.standard_normal((DIMS.future_steps, 2)),
    )


@pytest.fixture
def samples():
    rng = np.random.default_rng(0)
    return [synthetic_sample(rng, n, index=k) for k, n in enumerate((3, 2, 4))]


@pytest.mark.parametrize("variant", [Variant.P, Variant.CPSOR])
def test_gradient_matches_finite_differences(samples, variant):
    params = PredictorService.init_params(DIMS, seed=1)
    params = params.with_vector(params.vector + 0.1 * np.random.default_rng(2).standard_normal(DIMS.size()))
    batch = stack_batch(samples, variant)
    loss, grad = PredictorService.loss_and_gradients(batch, params, variant, offset_scale=2.0)
    numeric = PredictorService.finite_difference(batch, params, variant, offset_scale=2.0)
    assert loss == pytest.approx(PredictorService.loss(batch, params, variant, offset_scale=2.0))
    # floor keeps near-zero components from amplifying rounding noise
    relative = np.abs(grad - numeric) / np.maximum(np.abs(grad) + np.abs(numeric), 1e-5)
    assert relative.max() < 1e-4
    if variant == Variant.P:
        views = params.with_vector(grad).views()
        assert np.all(views["cog_w1"] == 0) and np.all(views["cog_w2"] == 0)


def test_padding_keeps_each_sample_independent(samples):
    params = PredictorService.init_params(DIMS, seed=3)
    together = PredictorService.predict(samples, params, Variant.CPSOR)
    for k, sample in enumerate(samples):
        alone, _ = PredictorService.forward(sample, params, Variant.CPSOR)
        assert np.allclose(together[k], alone)


def test_attention_weights_form_a_distribution(samples):
    params = PredictorService.init_params(DIMS, seed=4)
    _, trace = PredictorService.forward_batch(stack_batch(samples, Variant.CPSOR), params, Variant.CPSOR)
    assert trace.attention.shape == (3, 4)
    assert np.allclose(trace.attention.sum(axis=1), 1.0)
    assert np.all(trace.attention > 0)


def test_step_embeddings_zero_the_cognitive_half_for_p(samples):
    params = PredictorService.init_params(DIMS, seed=2)
    x, _, cog = encode_steps(stack_batch(samples, Variant.P), params.views(), Variant.P, DIMS)
    assert x.shape == (3, 4, 2 * DIMS.gcn_width)
    assert cog is None
    assert np.all(x[..., DIMS.gcn_width:] == 0.0)
    full, _, _ = encode_steps(stack_batch(samples, Variant.CPSOR), params.views(), Variant.CPSOR, DIMS)
    assert np.array_equal(full[..., :DIMS.gcn_width], x[..., :DIMS.gcn_width])


def test_attention_pool_on_equal_hidden_states():
    hidden = np.ones((5, 2))
    context, weights, _ = attention_pool(hidden, np.eye(2), np.array([1.0, -1.0]))
    assert np.allclose(weights, 0.2)
    assert np.allclose(context, [1.0, 1.0])


def test_lstm_with_zero_weights():
    width = 2
    out = lstm_forward(np.ones((3, 1)), np.zeros((4 * width, 1 + width)), np.zeros(4 * width))
    # every gate is 0.5 and the candidate 0, so the cell stays empty
    assert out["h"].shape == (3, width)
    assert np.allclose(out["h"], 0.0)


def test_gcn_layer_shape_and_relu():
    h = np.array([[1.0, -1.0], [2.0, 0.0]])
    out = gcn_layer(h, np.eye(2), np.array([[1.0], [1.0]]))
    assert np.allclose(out, [[0.0], [2.0]])
    with pytest.raises(ShapeError):
        gcn_layer(h, np.eye(3), np.eye(2))


def test_init_params_forget_bias(samples):
    params = PredictorService.init_params(DIMS, seed=0)
    b = params.views()["lstm_b"]
    h = DIMS.lstm_width
    assert np.all(b[h:2 * h] == 1.0)
    assert np.all(b[:h] == 0.0) and np.all(b[2 * h:] == 0.0)
    assert np.array_equal(params.vector, PredictorService.init_params(DIMS, seed=0).vector)


def test_variant_needs_matching_cognitive_graphs(samples):
    with pytest.raises(GraphError):
        stack_batch(samples, Variant.CP)
    rng = np.random.default_rng(1)
    bare = synthetic_sample(rng, 2).model_copy(update={"cog_features": None, "cog_adjacency": None, "dbn": None})
    with pytest.raises(MissingArtifactError):
        stack_batch([bare], Variant.CPSOR)
    assert stack_batch([bare], Variant.P).cog_x is None


def test_batch_shape_checks(samples):
    with pytest.raises(ShapeError):
        stack_batch([], Variant.P)
    wrong = PredictorDims(phys_in=4, cog_in=3, gcn_width=3, lstm_width=4, attention_width=3, future_steps=5)
    with pytest.raises(ShapeError):
        PredictorService.forward_batch(stack_batch(samples, Variant.P), PredictorService.init_params(wrong, 0),
                                       Variant.P)


def test_prediction_is_offset_from_last_position(samples):
    vector = PredictorService.init_params(DIMS, seed=5).vector.copy()
    blocks = unflatten(DIMS, vector)
    blocks["head_w"][:] = 0.0
    blocks["head_b"][:] = 0.0
    pred = PredictorService.predict(samples, PredictorParams(dims=DIMS, vector=vector), Variant.P)
    for k, sample in enumerate(samples):
        assert np.allclose(pred[k], sample.origin)
