"""Bidirectional LSTM acoustic model with CTC training.

Layers are stacked bidirectional LSTMs; each layer's forward/backward
hidden states are concatenated, optionally dropped out (inverted
dropout, train mode only), and fed to the next layer. A per-frame
affine map plus softmax produces posteriors over blank + tokens.

Checkpoint format ("SYLB"): magic, u32 version, u32 num_layers, u32
hidden, u32 input_dim, u32 output_dim, f64 dropout, i64 seed, u32 token
count followed by length-prefixed UTF-8 tokens, then all parameter
tensors as little-endian float64 in declared order (per layer: forward
wx, wh, b, then backward wx, wh, b; finally the output weight and bias).
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np

from sylrec import kernels
from sylrec.ctc import log_softmax
from sylrec.frontend import FeatureMatrix

MAGIC = b"SYLB"


@dataclass
class BlstmTopology:
    num_layers: int
    hidden: int
    input_dim: int
    output_dim: int
    dropout: float = 0.0

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden < 1:
            raise ValueError("need at least one layer and one hidden unit")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    def layer_input_dim(self, layer: int) -> int:
        return self.input_dim if layer == 0 else 2 * self.hidden

    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes = []
        h = self.hidden
        for layer in range(self.num_layers):
            d = self.layer_input_dim(layer)
            for _direction in ("fwd", "bwd"):
                shapes += [(4 * h, d), (4 * h, h), (4 * h,)]
        shapes += [(self.output_dim, 2 * h), (self.output_dim,)]
        return shapes

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes())


@dataclass
class BlstmModel:
    topology: BlstmTopology
    params: list[np.ndarray]
    seed: int = 0

    def layer_params(self, layer: int, direction: str):
        off = 6 * layer + (0 if direction == "fwd" else 3)
        return self.params[off], self.params[off + 1], self.params[off + 2]

    @property
    def w_out(self) -> np.ndarray:
        return self.params[-2]

    @property
    def b_out(self) -> np.ndarray:
        return self.params[-1]

    def copy(self) -> "BlstmModel":
        return BlstmModel(topology=self.topology,
                          params=[p.copy() for p in self.params],
                          seed=self.seed)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr_initial: float = 1e-3
    lr_final: float = 3e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    def learning_rate(self, epoch: int) -> float:
        """Exponential decay hitting lr_initial at epoch 1 and lr_final
        at the last epoch exactly."""
        if self.epochs == 1:
            return self.lr_initial
        frac = (epoch - 1) / (self.epochs - 1)
        return self.lr_initial * (self.lr_final / self.lr_initial) ** frac


def init_model(topology: BlstmTopology, seed: int = 0) -> BlstmModel:
    """Uniform(-0.1, 0.1) weights from the seed; forget-gate biases
    start at 1.0 to keep early memory open."""
    rng = np.random.default_rng(seed)
    h = topology.hidden
    params = []
    for shape in topology.param_shapes():
        p = rng.uniform(-0.1, 0.1, size=shape)
        if len(shape) == 1 and shape[0] == 4 * h:
            p[h:2 * h] = 1.0
        params.append(p)
    return BlstmModel(topology=topology, params=params, seed=seed)


# ---------------------------------------------------------------------------
# packing helpers
# ---------------------------------------------------------------------------

def _as_frames(feats) -> np.ndarray:
    if isinstance(feats, FeatureMatrix):
        return feats.frames
    return np.asarray(feats, dtype=np.float64)


def _pack(frame_list):
    """Sort by length descending and pack into (T, B, D) plus active
    counts per frame. Returns (x, kt, lens, order)."""
    order = sorted(range(len(frame_list)),
                   key=lambda i: (-frame_list[i].shape[0], i))
    lens = np.array([frame_list[i].shape[0] for i in order], dtype=np.int64)
    t_max = int(lens[0])
    b = len(order)
    d = frame_list[0].shape[1]
    x = np.zeros((t_max, b, d))
    for slot, i in enumerate(order):
        x[:lens[slot], slot] = frame_list[i]
    kt = (np.arange(t_max)[:, None] < lens[None, :]).sum(axis=1).astype(np.int64)
    return x, kt, lens, order


def _reverse_packed(x: np.ndarray, lens: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for b, n in enumerate(lens):
        out[:n, b] = x[:n, b][::-1]
    return out


def _forward_packed(model: BlstmModel, x, kt, lens, mode: str,
                    dropout_rng: np.random.Generator | None = None):
    """Run all layers plus the output projection on a packed batch.
    Returns (logits, cache); cache is None in infer mode."""
    topo = model.topology
    train = mode == "train"
    p = topo.dropout if train else 0.0
    layer_caches = [] if train else None
    inp = x
    for layer in range(topo.num_layers):
        wxf, whf, bf = model.layer_params(layer, "fwd")
        wxb, whb, bb = model.layer_params(layer, "bwd")
        hf, cf, gf = kernels.lstm_forward(inp, kt, wxf, whf, bf)
        xr = _reverse_packed(inp, lens)
        hb, cb, gb = kernels.lstm_forward(xr, kt, wxb, whb, bb)
        hcat = np.concatenate([hf, _reverse_packed(hb, lens)], axis=2)
        mask = None
        if p > 0.0:
            if dropout_rng is None:
                raise ValueError("train mode with dropout needs an rng")
            mask = (dropout_rng.random(hcat.shape) >= p) / (1.0 - p)
            hcat = hcat * mask
        if train:
            layer_caches.append((inp, hf, cf, gf, xr, hb, cb, gb, mask, hcat))
        inp = hcat
    t_max, b, _ = inp.shape
    logits = (inp.reshape(t_max * b, -1) @ model.w_out.T
              + model.b_out).reshape(t_max, b, -1)
    if not train:
        return logits, None
    return logits, layer_caches


def _backward_packed(model: BlstmModel, dlogits, layer_caches, kt, lens):
    """Gradient of the batch loss wrt every parameter, in param order."""
    topo = model.topology
    grads = [np.zeros_like(pp) for pp in model.params]
    t_max, b, k = dlogits.shape
    flat = dlogits.reshape(t_max * b, k)
    final_out = layer_caches[-1][9]
    grads[-2] += flat.T @ final_out.reshape(t_max * b, -1)
    grads[-1] += flat.sum(axis=0)
    dh = (flat @ model.w_out).reshape(t_max, b, -1)
    h = topo.hidden
    for layer in range(topo.num_layers - 1, -1, -1):
        inp, hf, cf, gf, xr, hb, cb, gb, mask, _ = layer_caches[layer]
        if mask is not None:
            dh = dh * mask
        wxf, whf, _ = model.layer_params(layer, "fwd")
        wxb, whb, _ = model.layer_params(layer, "bwd")
        dxf, dwxf, dwhf, dbf = kernels.lstm_backward(
            inp, kt, wxf, whf, hf, cf, gf, np.ascontiguousarray(dh[:, :, :h]))
        dhb = _reverse_packed(np.ascontiguousarray(dh[:, :, h:]), lens)
        dxbr, dwxb, dwhb, dbb = kernels.lstm_backward(
            xr, kt, wxb, whb, hb, cb, gb, dhb)
        off = 6 * layer
        grads[off] += dwxf
        grads[off + 1] += dwhf
        grads[off + 2] += dbf
        grads[off + 3] += dwxb
        grads[off + 4] += dwhb
        grads[off + 5] += dbb
        dh = dxf + _reverse_packed(dxbr, lens)
    return grads


# ---------------------------------------------------------------------------
# public ops
# ---------------------------------------------------------------------------

def forward(model: BlstmModel, feats, mode: str = "infer",
            dropout_rng: np.random.Generator | None = None):
    """Log posteriors (T, output_dim) for one utterance. In train mode
    the packed activation cache is returned alongside for backprop."""
    frames = _as_frames(feats)
    if frames.shape[1] != model.topology.input_dim:
        raise ValueError(f"feature dim {frames.shape[1]} != model input "
                         f"dim {model.topology.input_dim}")
    x, kt, lens, _ = _pack([frames])
    logits, cache = _forward_packed(model, x, kt, lens, mode, dropout_rng)
    logpost = log_softmax(logits[:, 0, :])
    if mode == "train":
        return logpost, cache
    return logpost


def posteriors(model: BlstmModel, feats) -> np.ndarray:
    return forward(model, feats, mode="infer")


def _batch_loss_and_grads(model, frame_list, label_list, dropout_rng=None,
                          mode="train"):
    x, kt, lens, order = _pack(frame_list)
    logits, caches = _forward_packed(model, x, kt, lens, "train", dropout_rng)
    dlogits = np.zeros_like(logits)
    total = 0.0
    nb = len(order)
    for slot, i in enumerate(order):
        n = int(lens[slot])
        logp = log_softmax(logits[:n, slot, :])
        labels = np.asarray(label_list[i], dtype=np.int64)
        loss, grad, feasible = kernels.ctc_loss_grad(
            np.ascontiguousarray(logp), labels)
        if not feasible:
            raise ValueError(f"infeasible CTC pair slipped through "
                             f"(T={n}, labels={len(labels)})")
        total += loss
        dlogits[:n, slot, :] = grad / nb
    grads = _backward_packed(model, dlogits, caches, kt, lens)
    return total / nb, grads


def _global_norm(grads) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads))


def _ctc_feasible(t_frames: int, labels) -> bool:
    reps = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + reps <= t_frames


def train(model: BlstmModel, data, cfg: TrainConfig):
    """ADAM training of the mean CTC loss; deterministic for a given
    config seed and data order. Returns (trained model, per-epoch mean
    loss list). Infeasible (frames, labels) pairs are skipped with a
    warning; a non-finite loss aborts with the last lr and batch id.
    """
    pairs = []
    skipped = 0
    for feats, labels in data:
        frames = _as_frames(feats)
        if _ctc_feasible(frames.shape[0], labels):
            pairs.append((frames, list(labels)))
        else:
            skipped += 1
    if skipped:
        warnings.warn(f"skipped {skipped} utterances with labels too long "
                      "for their frame count")
    if not pairs:
        raise ValueError("no trainable utterances")

    model = model.copy()
    ss = np.random.SeedSequence(cfg.seed)
    shuffle_ss, dropout_ss = ss.spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    dropout_rng = np.random.default_rng(dropout_ss)

    m = [np.zeros_like(p) for p in model.params]
    v = [np.zeros_like(p) for p in model.params]
    step = 0
    history = []
    n = len(pairs)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate(epoch)
        perm = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            frame_list = [pairs[i][0] for i in idx]
            label_list = [pairs[i][1] for i in idx]
            loss, grads = _batch_loss_and_grads(model, frame_list, label_list,
                                                dropout_rng)
            if not math.isfinite(loss):
                raise RuntimeError(f"non-finite loss at epoch {epoch}, "
                                   f"batch {n_batches} (lr={lr:.6g})")
            gn = _global_norm(grads)
            if gn > cfg.clip_norm:
                scale = cfg.clip_norm / gn
                for g in grads:
                    g *= scale
            step += 1
            bc1 = 1.0 - cfg.adam_beta1 ** step
            bc2 = 1.0 - cfg.adam_beta2 ** step
            for p, g, mi, vi in zip(model.params, grads, m, v):
                mi *= cfg.adam_beta1
                mi += (1.0 - cfg.adam_beta1) * g
                vi *= cfg.adam_beta2
                vi += (1.0 - cfg.adam_beta2) * g * g
                p -= lr * (mi / bc1) / (np.sqrt(vi / bc2) + cfg.adam_eps)
            epoch_loss += loss
            n_batches += 1
        history.append(epoch_loss / n_batches)
    return model, history


def adam_step(value, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One scalar ADAM update, exposed for unit verification. Returns
    (new_value, m, v)."""
    m = beta1 * m + (1.0 - beta1) * grad
    v = beta2 * v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    return value - lr * m_hat / (math.sqrt(v_hat) + eps), m, v


def grad_check(model: BlstmModel, feats, labels, sample_fraction: float = 0.01,
               min_samples: int = 25, fd_step: float = 1e-5, seed: int = 0):
    """Compare analytic parameter gradients of the CTC loss against
    central finite differences on a random parameter sample. Dropout is
    disabled. Returns the max relative error."""
    frames = _as_frames(feats)
    check_model = model.copy()
    check_model.topology = BlstmTopology(
        num_layers=model.topology.num_layers, hidden=model.topology.hidden,
        input_dim=model.topology.input_dim,
        output_dim=model.topology.output_dim, dropout=0.0)

    def loss_of(mdl):
        loss, _ = _batch_loss_and_grads(mdl, [frames], [list(labels)])
        return loss

    _, grads = _batch_loss_and_grads(check_model, [frames], [list(labels)])
    rng = np.random.default_rng(seed)
    total = check_model.topology.param_count()
    n_samples = max(min_samples, int(round(sample_fraction * total)))
    worst = 0.0
    for _ in range(n_samples):
        pi = int(rng.integers(len(check_model.params)))
        flat = check_model.params[pi].reshape(-1)
        j = int(rng.integers(flat.size))
        orig = flat[j]
        flat[j] = orig + fd_step
        up = loss_of(check_model)
        flat[j] = orig - fd_step
        dn = loss_of(check_model)
        flat[j] = orig
        fd = (up - dn) / (2.0 * fd_step)
        an = grads[pi].reshape(-1)[j]
        rel = abs(fd - an) / max(1e-8, abs(fd), abs(an))
        worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# checkpoint IO
# ---------------------------------------------------------------------------

def save_model(model: BlstmModel, path, token_table=None) -> None:
    topo = model.topology
    tokens = token_table or []
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIIII", 1, topo.num_layers, topo.hidden,
                             topo.input_dim, topo.output_dim))
        fh.write(struct.pack("<dq", topo.dropout, model.seed))
        fh.write(struct.pack("<I", len(tokens)))
        for t in tokens:
            raw = t.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
        for p in model.params:
            fh.write(p.astype("<f8").tobytes(order="C"))


def load_model(path):
    """Returns (model, token_table)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a {MAGIC.decode()} checkpoint")
        version, layers, hidden, din, dout = struct.unpack("<IIIII",
                                                           fh.read(20))
        if version != 1:
            raise ValueError(f"{path}: unsupported version {version}")
        dropout, seed = struct.unpack("<dq", fh.read(16))
        (n_tokens,) = struct.unpack("<I", fh.read(4))
        tokens = []
        for _ in range(n_tokens):
            (ln,) = struct.unpack("<I", fh.read(4))
            tokens.append(fh.read(ln).decode("utf-8"))
        topo = BlstmTopology(num_layers=layers, hidden=hidden, input_dim=din,
                             output_dim=dout, dropout=dropout)
        params = []
        for shape in topo.param_shapes():
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise ValueError(f"{path}: truncated parameter block")
            params.append(np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    return BlstmModel(topology=topo, params=params, seed=seed), tokens
