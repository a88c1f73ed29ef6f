"""Tests for the SPP-aided CNN: layout, inference on any legal size, and training."""

import numpy as np
import pytest

from app.models.schemas import CLASS_LABELS, EventType, ModelConfig, MtfGraph, TrainingConfig
from app.services.classifier import (
    ModelTrainer,
    SppCnn,
    build_model,
    label_indices,
    min_input_size,
    predict,
    predict_proba,
    split_by_event,
    training_config_from_settings,
    validate_config,
)
from app.utils.error_handler import (
    ConfigError,
    DegenerateDatasetError,
    EmptyInputError,
    InputTooSmallError,
    ShapeError,
)


def _graph(n, seed=0, label=EventType.LINE_OUTAGE, event_id=1):
    data = np.random.default_rng(seed).uniform(0.0, 1.0, (n, n, 2))
    return MtfGraph(event_id=event_id, pmu_id="PMU001", label=label, q=8, data=data)


@pytest.fixture(scope="module")
def default_model():
    """Untrained model with the reference layout."""
    return build_model(seed=3)


# ============================================================================
# Layout
# ============================================================================


def test_reference_layout_parameter_counts(default_model):
    """Test that the default layout has the reference per-layer parameter counts."""
    counts = default_model.network.layer_param_counts()

    assert counts == {
        "conv1": 608,
        "bn1": 128,
        "conv2": 9248,
        "bn2": 128,
        "conv3": 18496,
        "bn3": 256,
        "conv4": 36928,
        "bn4": 256,
        "conv5": 73856,
        "bn5": 512,
        "conv6": 147584,
        "bn6": 512,
        "dense": 13445,
    }
    assert default_model.network.param_count() == 301_957
    assert default_model.network.trainable_count() == 301_061


def test_pyramid_output_is_size_independent(default_model):
    """Test that the dense layer sees 2688 features for any legal input size."""
    for n in (25, 60, 120, 200):
        assert default_model.network.feature_shape(n) == (2688,)


def test_min_input_size_of_reference_layout(default_model):
    """Test that 25 is the smallest graph the default layout classifies."""
    assert min_input_size(ModelConfig()) == 25
    assert default_model.min_input_size == 25


def test_min_input_size_of_flatten_head(tiny_config):
    """Test that the flatten ablation only accepts its configured size."""
    assert min_input_size(tiny_config.model_copy(update={"head": "flatten"})) == 16


@pytest.mark.parametrize(
    "update",
    [{"head": "bogus"}, {"padding": "full"}, {"pool_after": (7,)}, {"input_size": 10}, {"conv_filters": ()}],
)
def test_validate_config_rejects_bad_layouts(update):
    """Test that unbuildable layouts raise ConfigError."""
    with pytest.raises(ConfigError):
        validate_config(ModelConfig().model_copy(update=update))


def test_build_model_is_seeded(tiny_config):
    """Test that the same seed gives identical initial weights."""
    first = build_model(tiny_config, seed=5).network.state_dict()
    second = build_model(tiny_config, seed=5).network.state_dict()
    other = build_model(tiny_config, seed=6).network.state_dict()

    for name in first:
        np.testing.assert_array_equal(first[name], second[name])
    assert not np.array_equal(first["conv1.weight"], other["conv1.weight"])


def test_load_state_dict_rejects_other_layout(tiny_config):
    """Test that a state from a different layout is a shape error."""
    network = SppCnn(tiny_config)
    wider = SppCnn(tiny_config.model_copy(update={"conv_filters": (5, 4, 6, 6, 8, 8)}))

    with pytest.raises(ShapeError):
        network.load_state_dict(wider.state_dict())


# ============================================================================
# Inference
# ============================================================================


@pytest.mark.parametrize("n", [25, 60, 108, 120])
def test_predict_any_legal_size(default_model, n):
    """Test that graphs of any size from the minimum upwards are classified."""
    prediction = predict(default_model, _graph(n))

    assert len(prediction.probabilities) == 5
    assert sum(prediction.probabilities) == pytest.approx(1.0)
    assert min(prediction.probabilities) >= 0.0
    assert prediction.label is CLASS_LABELS[prediction.label_index]
    assert prediction.latency_ms >= 0.0


def test_predict_rejects_small_graph(default_model):
    """Test that a graph below the minimum size raises InputTooSmallError."""
    with pytest.raises(InputTooSmallError):
        predict(default_model, _graph(24))


def test_flatten_head_rejects_other_sizes(tiny_config):
    """Test that the flatten ablation refuses graphs of a different size."""
    model = build_model(tiny_config.model_copy(update={"head": "flatten"}))

    with pytest.raises(ShapeError):
        predict(model, _graph(20))


def test_predict_proba_matches_single_predictions(default_model):
    """Test that batched probabilities keep input order and agree with single predictions."""
    graphs = [_graph(30, seed=1), _graph(30, seed=2), _graph(40, seed=3)]

    batched = predict_proba(default_model, graphs)

    assert batched.shape == (3, 5)
    for row, graph in zip(batched, graphs):
        np.testing.assert_allclose(row, predict(default_model, graph).probabilities, rtol=1e-4, atol=1e-6)
    np.testing.assert_array_equal(predict_proba(default_model, graphs), batched)


def test_predict_proba_of_nothing(default_model):
    """Test that no graphs give an empty probability matrix."""
    assert predict_proba(default_model, []).shape == (0, 5)


# ============================================================================
# Splitting
# ============================================================================


def test_split_keeps_events_whole_and_stratified(separable_graphs):
    """Test that every event lands on one side and every class is held out once."""
    graphs = separable_graphs(events_per_class=3, pmus_per_event=3)

    train, test = split_by_event(graphs, 0.2, seed=1)

    train_events = {graphs[i].event_id for i in train}
    test_events = {graphs[i].event_id for i in test}
    assert not train_events & test_events
    assert sorted(train + test) == list(range(len(graphs)))
    assert {graphs[i].label for i in test} == set(CLASS_LABELS)
    assert len(test_events) == 5


def test_split_is_seeded(separable_graphs):
    """Test that the same seed reproduces the split."""
    graphs = separable_graphs(events_per_class=4)

    assert split_by_event(graphs, 0.25, seed=9) == split_by_event(graphs, 0.25, seed=9)


def test_label_indices(separable_graphs, tiny_config):
    """Test that labels map to class indices in label-dictionary order."""
    model = build_model(tiny_config)
    graphs = separable_graphs(events_per_class=1, pmus_per_event=1)

    np.testing.assert_array_equal(label_indices(model, graphs), [0, 1, 2, 3, 4])


# ============================================================================
# Training
# ============================================================================


def test_first_epoch_loss_is_near_uniform(settings, logger, separable_graphs, tiny_config):
    """Test that a freshly initialized model starts at a loss close to ln 5."""
    model = build_model(tiny_config, seed=1)
    config = TrainingConfig(epochs=1, batch_size=4, lr=1e-6, seed=1)

    ModelTrainer(settings, logger).train(model, separable_graphs(), config)

    assert model.history.epochs[0].train_loss == pytest.approx(np.log(5.0), abs=0.05)


def test_training_fits_separable_classes(settings, logger, separable_graphs, tiny_config):
    """Test that training reaches full training accuracy on separable graphs."""
    model = build_model(tiny_config, seed=2)
    config = TrainingConfig(epochs=40, batch_size=4, lr=0.01, seed=2)

    ModelTrainer(settings, logger).train(model, separable_graphs(events_per_class=3), config)

    history = model.history.epochs
    assert len(history) == 40
    assert history[-1].train_acc == 1.0
    assert history[-1].train_loss < history[0].train_loss
    assert history[-1].test_acc is not None
    assert model.split_seed == 2


def test_overfit_loss_has_no_large_upticks(settings, logger, separable_graphs, tiny_config):
    """Test that full-batch training loss never rises more than 5% from one epoch to the next."""
    model = build_model(tiny_config, seed=3)
    config = TrainingConfig(epochs=30, batch_size=64, lr=0.001, seed=3)

    ModelTrainer(settings, logger).train(model, separable_graphs(events_per_class=3), config)

    losses = [record.train_loss for record in model.history.epochs]
    assert len(losses) == 30
    for epoch, (previous, current) in enumerate(zip(losses, losses[1:]), start=2):
        assert current <= 1.05 * previous, f"epoch {epoch}: loss {current:.4f} after {previous:.4f}"
    assert losses[-1] < losses[0]


def test_training_is_deterministic(settings, logger, separable_graphs, tiny_config):
    """Test that equal seeds and data give bit-equal weights and histories."""
    config = TrainingConfig(epochs=3, batch_size=4, lr=0.01, seed=4)
    graphs = separable_graphs()
    trainer = ModelTrainer(settings, logger)

    first = trainer.train(build_model(tiny_config, seed=4), graphs, config)
    second = trainer.train(build_model(tiny_config, seed=4), graphs, config)

    assert first.history == second.history
    for name, value in first.network.state_dict().items():
        np.testing.assert_array_equal(value, second.network.state_dict()[name])


def test_training_input_errors(settings, logger, separable_graphs, tiny_config):
    """Test that empty, single-class and wrongly sized training sets are rejected."""
    trainer = ModelTrainer(settings, logger)
    model = build_model(tiny_config)
    graphs = separable_graphs()

    with pytest.raises(EmptyInputError):
        trainer.train(model, [])
    with pytest.raises(DegenerateDatasetError):
        trainer.train(model, [g for g in graphs if g.label is EventType.NORMAL])
    with pytest.raises(ShapeError):
        trainer.train(model, separable_graphs(n=20))


def test_training_config_from_settings(settings):
    """Test that settings seed the training schedule and None overrides are ignored."""
    config = training_config_from_settings(settings, epochs=3, lr=None)

    assert config.epochs == 3
    assert config.lr == settings.lr
    assert config.batch_size == settings.batch_size
