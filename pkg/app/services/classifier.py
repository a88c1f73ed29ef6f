"""Classifier - SPP-aided CNN assembly, training and variable-size inference."""

import time
from typing import Any, Iterable, Optional, Sequence, Union

import numpy as np

from app.core.config import Settings
from app.core.logging_config import timed
from app.models.schemas import (
    CLASS_LABELS,
    EpochRecord,
    EventType,
    EventWindow,
    ModelConfig,
    MtfGraph,
    Prediction,
    TrainingConfig,
    TrainingHistory,
)
from app.neural import (
    Adam,
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool2x2,
    ReLU,
    SpatialPyramidPooling,
    softmax,
    softmax_cross_entropy,
)
from app.utils.error_handler import (
    ConfigError,
    DegenerateDatasetError,
    EmptyInputError,
    InputTooSmallError,
    InsufficientDataError,
    InvalidParameterError,
    ShapeError,
)

MODEL_DTYPE = np.float32
PREDICT_BATCH_SIZE = 64


# ============================================================================
# Network assembly
# ============================================================================


def validate_config(config: ModelConfig) -> None:
    """Raise ConfigError if the layer layout cannot be built."""
    blocks = len(config.conv_filters)
    problems = []
    if blocks == 0 or min(config.conv_filters) < 1:
        problems.append("conv_filters must list at least one positive filter count")
    if config.padding not in ("same", "valid"):
        problems.append(f"padding must be 'same' or 'valid', got {config.padding!r}")
    if config.head not in ("spp", "flatten"):
        problems.append(f"head must be 'spp' or 'flatten', got {config.head!r}")
    for field, blocks_listed in (("pool_after", config.pool_after), ("dropout_after", config.dropout_after)):
        if any(block < 1 or block > blocks for block in blocks_listed):
            problems.append(f"{field} entries must lie in 1..{blocks}")
    if not 0.0 <= config.dropout_rate < 1.0:
        problems.append("dropout_rate must be in [0, 1)")
    if not config.spp_levels or min(config.spp_levels) < 1:
        problems.append("spp_levels must be positive")
    if config.num_classes < 2:
        problems.append("num_classes must be at least 2")
    if not problems and _spatial_after_convs(config, config.input_size) is None:
        problems.append(f"input_size {config.input_size} is too small for the conv stack")
    if not problems and config.input_size < min_input_size(config):
        problems.append(f"input_size {config.input_size} is below the minimum legal size {min_input_size(config)}")
    if problems:
        raise ConfigError("; ".join(problems))


def _spatial_after_convs(config: ModelConfig, n: int) -> Optional[int]:
    """Spatial size reaching the head for an n x n input, or None if a layer cannot run."""
    for block in range(1, len(config.conv_filters) + 1):
        if config.padding == "valid":
            if n < config.kernel_size:
                return None
            n -= config.kernel_size - 1
        if block in config.pool_after:
            n = -(-n // 2)
    return n


def min_input_size(config: ModelConfig) -> int:
    """
    Smallest n for which an n x n x C graph can be classified.

    With the SPP head the feature map reaching the pyramid must be at least
    max(spp_levels) on a side (25 -> 13 -> 7 -> 4 for the default layout).
    The flatten head only accepts the configured input size.
    """
    if config.head == "flatten":
        return config.input_size
    target = max(config.spp_levels)
    n = 1
    while True:
        reached = _spatial_after_convs(config, n)
        if reached is not None and reached >= target:
            return n
        n += 1


class SppCnn:
    """
    Ordered layer stack: conv -> relu -> batch norm blocks with 2x2 pooling
    and dropout after the configured blocks, then SPP (or flatten) and a
    dense output layer. Softmax is applied by the loss and by `predict`.
    """

    def __init__(self, config: ModelConfig, seed: int = 0, dtype: Any = MODEL_DTYPE):
        validate_config(config)
        self.config = config
        self.dtype = np.dtype(dtype)
        init_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
        init_rng = np.random.default_rng(init_seq)
        dropout_rng = np.random.default_rng(dropout_seq)

        self.layers: list[Layer] = []
        channels = config.input_channels
        for block, filters in enumerate(config.conv_filters, start=1):
            self.layers.append(
                Conv2D(f"conv{block}", channels, filters, config.kernel_size, config.padding, rng=init_rng, dtype=self.dtype)
            )
            self.layers.append(ReLU(f"relu{block}"))
            self.layers.append(
                BatchNorm(f"bn{block}", filters, momentum=config.bn_momentum, eps=config.bn_eps, dtype=self.dtype)
            )
            if block in config.pool_after:
                self.layers.append(MaxPool2x2(f"pool{block}"))
            if block in config.dropout_after:
                self.layers.append(Dropout(f"drop{block}", config.dropout_rate, rng=dropout_rng))
            channels = filters

        if config.head == "spp":
            self.layers.append(SpatialPyramidPooling("spp", channels, config.spp_levels))
        else:
            self.layers.append(Flatten("flatten"))

        features = self.feature_shape(config.input_size)[0]
        self.layers.append(
            Dense(
                "dense",
                features,
                config.num_classes,
                rng=init_rng,
                dtype=self.dtype,
                init_scale=config.output_init_scale,
            )
        )

    def feature_shape(self, n: int) -> tuple[int, ...]:
        """Per-sample shape entering the dense layer for an n x n input."""
        shape: tuple[int, ...] = (n, n, self.config.input_channels)
        for layer in self.layers:
            if isinstance(layer, Dense):
                break
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        out = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            out = layer.forward(out, training=training)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{key}": value for layer in self.layers for key, value in layer.parameters().items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{key}": value for layer in self.layers for key, value in layer.gradients().items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{layer.name}.{key}": value for layer in self.layers for key, value in layer.buffers().items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters and buffers in layer order."""
        state = {}
        for layer in self.layers:
            for key, value in {**layer.parameters(), **layer.buffers()}.items():
                state[f"{layer.name}.{key}"] = value
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        current = self.state_dict()
        missing = set(current) - set(state)
        unexpected = set(state) - set(current)
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}")
        for name, target in current.items():
            source = np.asarray(state[name])
            if source.shape != target.shape:
                raise ShapeError(f"{name}: checkpoint shape {source.shape}, model shape {target.shape}")
            target[...] = source.astype(target.dtype)

    def layer_param_counts(self) -> dict[str, int]:
        """Parameter count (including batch-norm running statistics) per layer that has any."""
        return {layer.name: layer.param_count() for layer in self.layers if layer.param_count()}

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def trainable_count(self) -> int:
        return sum(layer.trainable_count() for layer in self.layers)


def build_model(config: Optional[ModelConfig] = None, seed: int = 0, dtype: Any = MODEL_DTYPE) -> "TrainedModel":
    """Assemble an untrained model with seeded initialization."""
    config = config or ModelConfig()
    return TrainedModel(network=SppCnn(config, seed=seed, dtype=dtype), labels=CLASS_LABELS[: config.num_classes])


class TrainedModel:
    """A network together with its label dictionary, history and split provenance."""

    def __init__(
        self,
        network: SppCnn,
        labels: Sequence[EventType] = CLASS_LABELS,
        history: Optional[TrainingHistory] = None,
        split_seed: int = 0,
        test_fraction: float = 0.2,
    ):
        if len(labels) != network.config.num_classes:
            raise ConfigError(f"{len(labels)} labels for {network.config.num_classes} output classes")
        self.network = network
        self.labels = tuple(EventType(label) for label in labels)
        self.history = history or TrainingHistory()
        self.split_seed = split_seed
        self.test_fraction = test_fraction

    @property
    def config(self) -> ModelConfig:
        return self.network.config

    @property
    def min_input_size(self) -> int:
        return min_input_size(self.config)

    def label_index(self, label: EventType) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidParameterError(f"label {label.value!r} is not one of the model's classes") from None


# ============================================================================
# Inference
# ============================================================================


def _check_graph(model: TrainedModel, graph: MtfGraph) -> None:
    n, _, channels = graph.data.shape
    if channels != model.config.input_channels:
        raise ShapeError(f"graph has {channels} channels, model expects {model.config.input_channels}")
    if n < model.min_input_size:
        raise InputTooSmallError(f"graph size {n} is below the minimum legal input size {model.min_input_size}")
    if model.config.head == "flatten" and n != model.config.input_size:
        raise ShapeError(f"flatten head only accepts {model.config.input_size}x{model.config.input_size} graphs, got {n}x{n}")


def predict_proba(model: TrainedModel, graphs: Sequence[MtfGraph], batch_size: int = PREDICT_BATCH_SIZE) -> np.ndarray:
    """
    Class probabilities for many graphs, in input order.

    Consecutive graphs of equal size are batched together; the grouping only
    depends on the input sequence, so equal inputs give bit-equal outputs.
    """
    if not graphs:
        return np.zeros((0, model.config.num_classes))
    for graph in graphs:
        _check_graph(model, graph)

    probabilities = np.zeros((len(graphs), model.config.num_classes))
    start = 0
    while start < len(graphs):
        n = graphs[start].n
        stop = start
        while stop < len(graphs) and stop - start < batch_size and graphs[stop].n == n:
            stop += 1
        batch = np.stack([graph.data for graph in graphs[start:stop]])
        logits = model.network.forward(batch, training=False)
        probabilities[start:stop] = softmax(logits.astype(np.float64))
        start = stop
    return probabilities


def predict(model: TrainedModel, graph: MtfGraph) -> Prediction:
    """Classify one graph of any legal size and time the forward pass."""
    _check_graph(model, graph)
    start = time.perf_counter()
    logits = model.network.forward(graph.data[None, ...], training=False)
    probabilities = softmax(logits.astype(np.float64))[0]
    latency_ms = (time.perf_counter() - start) * 1000.0
    index = int(np.argmax(probabilities))
    return Prediction(
        probabilities=probabilities.tolist(),
        label_index=index,
        label=model.labels[index],
        latency_ms=latency_ms,
    )


# ============================================================================
# Training
# ============================================================================


def split_by_event(
    graphs: Sequence[Union[MtfGraph, EventWindow]], test_fraction: float, seed: int
) -> tuple[list[int], list[int]]:
    """
    Event-level, class-stratified train/test split.

    All graphs of one event land on the same side. Within each class,
    round(test_fraction * events) events go to the test side (at least one
    when the class has two or more events).

    Returns:
        (train indices, test indices), each ascending
    """
    if not 0.0 <= test_fraction < 1.0:
        raise InvalidParameterError(f"test_fraction must be in [0, 1), got {test_fraction}")
    events_by_label: dict[EventType, list[int]] = {}
    for graph in graphs:
        events = events_by_label.setdefault(graph.label, [])
        if graph.event_id not in events:
            events.append(graph.event_id)

    rng = np.random.default_rng(seed)
    test_events: set[int] = set()
    for label in sorted(events_by_label, key=lambda item: item.value):
        events = sorted(events_by_label[label])
        count = round(test_fraction * len(events))
        if test_fraction > 0 and count == 0 and len(events) >= 2:
            count = 1
        chosen = rng.permutation(len(events))[:count]
        test_events.update(events[i] for i in chosen)

    train = [i for i, graph in enumerate(graphs) if graph.event_id not in test_events]
    test = [i for i, graph in enumerate(graphs) if graph.event_id in test_events]
    return train, test


def training_config_from_settings(settings: Settings, **overrides: Any) -> TrainingConfig:
    values = {
        "epochs": settings.epochs,
        "batch_size": settings.batch_size,
        "lr": settings.lr,
        "beta1": settings.beta1,
        "beta2": settings.beta2,
        "eps": settings.eps,
        "seed": settings.seed,
        "test_fraction": settings.test_fraction,
    }
    values.update({key: value for key, value in overrides.items() if value is not None})
    return TrainingConfig(**values)


def model_config_from_settings(settings: Settings, **overrides: Any) -> ModelConfig:
    values: dict[str, Any] = {"spp_levels": tuple(settings.spp_levels), "dropout_rate": settings.dropout}
    values.update({key: value for key, value in overrides.items() if value is not None})
    return ModelConfig(**values)


def _batches(indices: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Split indices into batches, folding a trailing singleton into the previous batch."""
    batches = [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


class ModelTrainer:
    """Mini-batch Adam training on the mean softmax cross-entropy."""

    def __init__(self, settings: Settings, logger: Any):
        """
        Initialize model trainer.

        Args:
            settings: Application settings
            logger: Logger instance
        """
        self.settings = settings
        self.logger = logger

    def train(
        self,
        model: TrainedModel,
        graphs: Sequence[MtfGraph],
        config: Optional[TrainingConfig] = None,
    ) -> TrainedModel:
        """
        Train `model` in place and return it with its history filled in.

        Args:
            model: Untrained (or partially trained) model
            graphs: Labeled graphs, all of the canonical input size
            config: Schedule and optimizer settings (defaults from Settings)

        Returns:
            The trained model

        Raises:
            EmptyInputError: No graphs
            DegenerateDatasetError: Fewer than two classes present
            ShapeError: A graph is not input_size x input_size x channels
        """
        config = config or training_config_from_settings(self.settings)
        y = self._labels(model, graphs)
        train_idx, test_idx = split_by_event(graphs, config.test_fraction, config.seed)
        if len(train_idx) < 2:
            raise InsufficientDataError(f"training split holds {len(train_idx)} graph(s); need at least 2")

        network = model.network
        optimizer = Adam(network.parameters(), lr=config.lr, beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        shuffle_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
        history = TrainingHistory()
        train_idx_arr = np.asarray(train_idx)

        self.logger.info(
            f"Training on {len(train_idx)} graphs ({len(test_idx)} held out), "
            f"{config.epochs} epochs, batch size {config.batch_size}"
        )
        with timed(self.logger, "Training"):
            for epoch in range(1, config.epochs + 1):
                loss_sum = 0.0
                correct = 0
                for batch in _batches(shuffle_rng.permutation(train_idx_arr), config.batch_size):
                    x = np.stack([graphs[i].data for i in batch])
                    logits = network.forward(x, training=True)
                    loss, grad = softmax_cross_entropy(logits.astype(np.float64), y[batch])
                    network.backward(grad.astype(network.dtype))
                    optimizer.step(network.gradients())
                    loss_sum += loss * len(batch)
                    correct += int(np.sum(np.argmax(logits, axis=1) == y[batch]))

                record = EpochRecord(
                    epoch=epoch,
                    train_loss=loss_sum / len(train_idx),
                    train_acc=correct / len(train_idx),
                )
                if test_idx:
                    test_loss, test_acc = self._score(model, [graphs[i] for i in test_idx], y[test_idx])
                    record = record.model_copy(update={"test_loss": test_loss, "test_acc": test_acc})
                history.epochs.append(record)
                self.logger.info(
                    f"Epoch {epoch}/{config.epochs}: loss {record.train_loss:.4f}, "
                    f"train acc {record.train_acc:.3f}"
                    + (f", test acc {record.test_acc:.3f}" if record.test_acc is not None else "")
                )

        model.history = history
        model.split_seed = config.seed
        model.test_fraction = config.test_fraction
        return model

    def _labels(self, model: TrainedModel, graphs: Sequence[MtfGraph]) -> np.ndarray:
        if not graphs:
            raise EmptyInputError("training set is empty")
        size = model.config.input_size
        expected = (size, size, model.config.input_channels)
        for graph in graphs:
            if graph.data.shape != expected:
                raise ShapeError(
                    f"graph {graph.event_id}/{graph.pmu_id} has shape {graph.data.shape}; training needs {expected}"
                )
        y = np.array([model.label_index(graph.label) for graph in graphs], dtype=np.int64)
        if len(np.unique(y)) < 2:
            raise DegenerateDatasetError("training set holds a single class")
        return y

    @staticmethod
    def _score(model: TrainedModel, graphs: list[MtfGraph], y: np.ndarray) -> tuple[float, float]:
        probabilities = predict_proba(model, graphs)
        picked = np.clip(probabilities[np.arange(len(y)), y], 1e-12, None)
        return float(-np.mean(np.log(picked))), float(np.mean(np.argmax(probabilities, axis=1) == y))


def label_indices(model: TrainedModel, labeled: Iterable[Union[MtfGraph, EventWindow]]) -> np.ndarray:
    """Class indices of the labels carried by graphs or windows."""
    return np.array([model.label_index(item.label) for item in labeled], dtype=np.int64)
