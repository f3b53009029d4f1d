"""The 7-layer strided CNN over one-minute windows.

Each layer is Conv -> BN -> ReLU with valid padding. Layer 1 uses a 3x3
kernel with stride (2, 1), collapsing the 3-wide axis; layers 2-7 use
3x1 kernels with stride (2, 1). The time extent contracts
3600 -> 1799 -> 899 -> 449 -> 224 -> 111 -> 55 -> 27, after which global
average pooling and a linear head produce the three class logits. The
head sees only the pooled features, so logits equal the spatial mean of
the per-position head projection plus bias; the class-activation maps
rely on that identity.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .engine import AdamState, LayerParams
from .errors import ArchitectureError, InsufficientDataError, ShapeError
from .states import N_STATES
from .validation import check_labels, check_window_array

PAPER_CHANNELS = (64, 128, 256, 512, 1024, 1024, 1024)
INPUT_SHAPE = (3600, 3, 1)
FEATURE_EXTENT = 27


@dataclass
class NetConfig:
    channels: tuple = PAPER_CHANNELS
    kernels: tuple = ((3, 3),) + ((3, 1),) * 6
    strides: tuple = ((2, 1),) * 7
    width_scale: int = 1  # divisor on the channel counts, for desk-scale runs
    class_count: int = N_STATES
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if len(self.channels) != 7 or len(self.kernels) != 7 or len(self.strides) != 7:
            raise ArchitectureError("config needs 7 channel counts, kernels, and strides")
        if self.width_scale < 1:
            raise ArchitectureError("width_scale must be >= 1")

    def scaled_channels(self) -> tuple:
        return tuple(max(1, c // self.width_scale) for c in self.channels)

    def spatial_chain(self, input_shape=INPUT_SHAPE) -> list[tuple[int, int]]:
        """Extent of the feature map after each layer, starting at the input."""
        h, w = input_shape[0], input_shape[1]
        chain = [(h, w)]
        for (kh, kw), (sh, sw) in zip(self.kernels, self.strides):
            h = engine.conv_output_extent(h, kh, sh)
            w = engine.conv_output_extent(w, kw, sw)
            chain.append((h, w))
        return chain


@dataclass
class NetworkParams:
    """All learnable tensors of one network plus its optimizer state."""

    config: NetConfig
    layers: list[LayerParams]
    head_weight: np.ndarray
    head_bias: np.ndarray
    adam: dict = field(default_factory=dict)

    def tensors(self) -> dict[str, np.ndarray]:
        """Named learnable tensors, in a fixed order.

        Conv biases are excluded: each convolution feeds a BN whose mean
        subtraction cancels them exactly, so their gradient is
        structurally zero and BN beta plays their role. They stay in
        LayerParams (frozen at zero) for the conv contract.
        """
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.kernel"] = layer.kernel
            out[f"layer{i}.bn_gamma"] = layer.bn_gamma
            out[f"layer{i}.bn_beta"] = layer.bn_beta
        out["head.weight"] = self.head_weight
        out["head.bias"] = self.head_bias
        return out

    def state_tensors(self) -> dict[str, np.ndarray]:
        """All persisted tensors: learnables plus conv biases and BN
        running statistics."""
        out = self.tensors()
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.bias"] = layer.bias
            out[f"layer{i}.bn_running_mean"] = layer.bn_running_mean
            out[f"layer{i}.bn_running_var"] = layer.bn_running_var
        return out

    def parameter_count(self) -> int:
        return sum(t.size for t in self.tensors().values())


def build(config: NetConfig) -> NetworkParams:
    """Initialize a network; errors if the schedule does not reach 27x1.

    Kernels are Glorot-uniform (seed-controlled), biases zero, BN gamma 1
    and beta 0, running statistics (0, 1).
    """
    chain = config.spatial_chain()
    if chain[-1] != (FEATURE_EXTENT, 1):
        raise ArchitectureError(
            f"stride/kernel schedule yields final feature map {chain[-1]}, "
            f"need ({FEATURE_EXTENT}, 1)"
        )
    rng = np.random.default_rng(config.seed)
    channels = config.scaled_channels()
    layers = []
    in_c = INPUT_SHAPE[2]
    for out_c, (kh, kw), stride in zip(channels, config.kernels, config.strides):
        fan_in = in_c * kh * kw
        fan_out = out_c * kh * kw
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            LayerParams(
                kernel=rng.uniform(-bound, bound, size=(out_c, in_c, kh, kw)),
                bias=np.zeros(out_c),
                bn_gamma=np.ones(out_c),
                bn_beta=np.zeros(out_c),
                bn_running_mean=np.zeros(out_c),
                bn_running_var=np.ones(out_c),
                stride=stride,
            )
        )
        in_c = out_c
    bound = np.sqrt(6.0 / (in_c + config.class_count))
    params = NetworkParams(
        config=config,
        layers=layers,
        head_weight=rng.uniform(-bound, bound, size=(config.class_count, in_c)),
        head_bias=np.zeros(config.class_count),
    )
    params.adam = {
        name: AdamState.for_param(t, lr=config.lr) for name, t in params.tensors().items()
    }
    return params


def forward(params: NetworkParams, x, mode: str = "eval", update_running: bool = False):
    """Forward pass to logits; also returns the pre-GAP feature map and,
    when caches=True is needed, use `forward_backward` instead.

    x: (n, 3600, 3) windows or a single (3600, 3) window. Returns
    (logits, feature_map) with shapes (n, 3) and (n, 27, 1, C) (batch axis
    dropped for single-window input).
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != INPUT_SHAPE[:2]:
        raise ShapeError(f"expected windows of shape {INPUT_SHAPE[:2]}, got {x.shape[1:]}")
    h = x[..., None]  # (n, 3600, 3, 1)
    for layer in params.layers:
        h, _ = engine.conv2d_forward(h, layer)
        h, _ = engine.batchnorm_forward(h, layer, mode=mode, update_running=update_running)
        h, _ = engine.relu_forward(h)
    feature_map = h
    pooled, _ = engine.global_average_pool_forward(h)
    logits, _ = engine.linear_forward(pooled, params.head_weight, params.head_bias)
    if single:
        return logits[0], feature_map[0]
    return logits, feature_map


def forward_backward(params: NetworkParams, x, y, mode: str = "train", update_running: bool = True):
    """Loss and gradients for a labeled batch.

    Returns (loss, grads dict keyed like params.tensors(), batch logits).
    """
    x = np.asarray(x, dtype=np.float64)
    h = x[..., None]
    caches = []
    for layer in params.layers:
        h, c_conv = engine.conv2d_forward(h, layer)
        h, c_bn = engine.batchnorm_forward(h, layer, mode=mode, update_running=update_running)
        h, c_relu = engine.relu_forward(h)
        caches.append((c_conv, c_bn, c_relu))
    pooled, c_gap = engine.global_average_pool_forward(h)
    logits, c_lin = engine.linear_forward(pooled, params.head_weight, params.head_bias)
    loss, dlogits = engine.softmax_cross_entropy(logits, y)

    grads = {}
    dpooled, grads["head.weight"], grads["head.bias"] = engine.linear_backward(dlogits, c_lin)
    dh = engine.global_average_pool_backward(dpooled, c_gap)
    for i in range(len(params.layers) - 1, -1, -1):
        c_conv, c_bn, c_relu = caches[i]
        dh = engine.relu_backward(dh, c_relu)
        dh, grads[f"layer{i}.bn_gamma"], grads[f"layer{i}.bn_beta"] = engine.batchnorm_backward(dh, c_bn)
        dh, grads[f"layer{i}.kernel"], _ = engine.conv2d_backward(dh, c_conv)
    return loss, grads, logits


def _batches(n, batch_size, rng):
    """Shuffled batch index lists; a trailing singleton is merged into the
    previous batch so BN always sees at least 2 instances."""
    order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def train(params: NetworkParams, X, y, config: NetConfig | None = None):
    """Mini-batch Adam on cross-entropy; returns (params, trace).

    trace is a list of per-epoch dicts with running-batch loss/accuracy.
    A warning string is attached to the trace for any class absent from
    the training data.
    """
    config = config or params.config
    X = check_window_array(X)
    y = check_labels(y, X.shape[0])
    if X.shape[0] == 0:
        raise InsufficientDataError("no training windows")
    if X.shape[0] == 1:
        raise InsufficientDataError("training needs at least 2 windows (batch statistics)")

    trace = []
    missing = sorted(set(range(config.class_count)) - set(int(c) for c in np.unique(y)))
    warnings = [f"class {c} absent from training data" for c in missing]

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x5B]).generate_state(1)[0])
    for epoch in range(config.epochs):
        total_loss = 0.0
        correct = 0
        for idx in _batches(X.shape[0], config.batch_size, shuffle_rng):
            xb, yb = X[idx], y[idx]
            loss, grads, logits = forward_backward(params, xb, yb)
            total_loss += loss * idx.size
            correct += int((np.argmax(logits, axis=1) == yb).sum())
            if config.lr != 0.0:
                tensors = params.tensors()
                for name, grad in grads.items():
                    engine.adam_step(tensors[name], grad, params.adam[name])
        trace.append(
            {
                "epoch": epoch,
                "loss": total_loss / X.shape[0],
                "accuracy": correct / X.shape[0],
            }
        )
    if warnings:
        trace.append({"warnings": warnings})
    return params, trace


def predict(params: NetworkParams, X):
    """Labels, logits, and softmax for windows, with eval-mode BN.

    Argmax ties break toward the lower class index.
    """
    X = check_window_array(X)
    logits, _ = forward(params, X, mode="eval")
    probs = engine.softmax(logits)
    labels = np.argmax(logits, axis=1)
    return labels, logits, probs


def finite_difference_check(params: NetworkParams, X, y, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    over every learnable tensor, for the loss on (X, y).

    Uses train-mode BN without touching running statistics, so repeated
    evaluations are pure.
    """
    X = check_window_array(X)
    y = check_labels(y, X.shape[0])

    def loss_and_grads():
        loss, grads, _ = forward_backward(params, X, y, mode="train", update_running=False)
        return loss, grads

    def loss_only():
        logits, _ = forward(params, X, mode="train", update_running=False)
        return engine.softmax_cross_entropy(logits, y)[0]

    return engine.max_relative_gradient_error(
        loss_and_grads, params.tensors(), h=h, loss_fn=loss_only
    )


def clone_params(params: NetworkParams) -> NetworkParams:
    """Deep copy of all tensors and optimizer state."""
    layers = [
        LayerParams(
            kernel=l.kernel.copy(),
            bias=l.bias.copy(),
            bn_gamma=l.bn_gamma.copy(),
            bn_beta=l.bn_beta.copy(),
            bn_running_mean=l.bn_running_mean.copy(),
            bn_running_var=l.bn_running_var.copy(),
            stride=l.stride,
        )
        for l in params.layers
    ]
    out = NetworkParams(
        config=replace(params.config),
        layers=layers,
        head_weight=params.head_weight.copy(),
        head_bias=params.head_bias.copy(),
    )
    out.adam = {
        name: AdamState(
            m=s.m.copy(), v=s.v.copy(), step_count=s.step_count,
            lr=s.lr, beta1=s.beta1, beta2=s.beta2, epsilon=s.epsilon,
        )
        for name, s in params.adam.items()
    }
    return out
