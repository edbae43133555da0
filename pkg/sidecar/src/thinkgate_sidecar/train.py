"""Probe training: a small MLP on hidden states vs short-mode correctness.

Trains a one-hidden-layer network (ReLU, sigmoid head) with binary
cross-entropy, keeps the epoch with the best validation accuracy, runs a
small documented grid over hidden width and learning rate, and exports the
winner in the core's weights-file format.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from thinkgate.scorers import HiddenStateStore

logger = logging.getLogger(__name__)

GRID_WIDTHS = (32, 64, 128)
GRID_LEARNING_RATES = (1e-3, 1e-4)


@dataclass
class ProbeTrainConfig:
    hidden_width: int = 64
    learning_rate: float = 1e-3
    epochs: int = 40
    val_fraction: float = 0.25
    seed: int = 0
    grid_search: bool = False  # sweep GRID_WIDTHS x GRID_LEARNING_RATES

    def __post_init__(self) -> None:
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0,1)")
        if self.epochs < 1 or self.hidden_width < 1:
            raise ValueError("epochs and hidden_width must be positive")


class ProbeNet(nn.Module):
    def __init__(self, in_dim: int, width: int):
        super().__init__()
        self.hidden = nn.Linear(in_dim, width)
        self.head = nn.Linear(width, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(torch.relu(self.hidden(x))).squeeze(-1)

    def predict_proba(self, x: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return torch.sigmoid(self.forward(x))


def load_labels(path: str | Path) -> dict[str, bool]:
    """Read the label file: one {"id", "nothinking_correct"} object per line."""
    labels: dict[str, bool] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            try:
                labels[str(row["id"])] = bool(row["nothinking_correct"])
            except KeyError as exc:
                raise ValueError(f"{path}:{lineno}: missing field {exc}") from exc
    return labels


def _aligned_arrays(
    store: HiddenStateStore, labels: dict[str, bool]
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    ids = sorted(labels)
    missing = [qid for qid in ids if qid not in store]
    if missing:
        raise ValueError(f"labeled ids without feature rows: {missing[:5]}")
    x = np.stack([store.get(qid) for qid in ids]).astype(np.float32)
    y = np.array([labels[qid] for qid in ids], dtype=np.float32)
    return x, y, ids


@dataclass
class TrainResult:
    net: ProbeNet
    val_accuracy: float
    width: int
    learning_rate: float


def _train_once(
    x: np.ndarray, y: np.ndarray, width: int, lr: float, epochs: int,
    val_fraction: float, seed: int,
) -> TrainResult:
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    n_val = max(1, int(round(len(x) * val_fraction)))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise ValueError("training split is empty; need more labeled rows")
    if len(set(y[train_idx].tolist())) < 2:
        raise ValueError("training split has a single class; probe undefined")

    torch.manual_seed(seed)
    net = ProbeNet(x.shape[1], width)
    optimizer = torch.optim.Adam(net.parameters(), lr=lr)
    loss_fn = nn.BCEWithLogitsLoss()
    x_train = torch.from_numpy(x[train_idx])
    y_train = torch.from_numpy(y[train_idx])
    x_val = torch.from_numpy(x[val_idx])
    y_val = torch.from_numpy(y[val_idx])

    best_state = {k: v.clone() for k, v in net.state_dict().items()}
    best_acc = -1.0
    for _ in range(epochs):
        net.train()
        optimizer.zero_grad()
        loss = loss_fn(net(x_train), y_train)
        loss.backward()
        optimizer.step()
        net.eval()
        hits = int(((net.predict_proba(x_val) > 0.5) == y_val.bool()).sum())
        acc = hits / len(y_val)
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.clone() for k, v in net.state_dict().items()}
    net.load_state_dict(best_state)
    net.eval()
    return TrainResult(net=net, val_accuracy=best_acc, width=width, learning_rate=lr)


def train_probe(
    store: HiddenStateStore, labels: dict[str, bool], config: ProbeTrainConfig
) -> TrainResult:
    """Train (optionally grid-searched) and return the best probe by
    validation accuracy."""
    x, y, _ = _aligned_arrays(store, labels)
    if config.grid_search:
        candidates = [
            _train_once(x, y, w, lr, config.epochs, config.val_fraction, config.seed)
            for w in GRID_WIDTHS
            for lr in GRID_LEARNING_RATES
        ]
        best = max(candidates, key=lambda r: r.val_accuracy)
        logger.info(
            "grid search winner: width=%d lr=%g val_acc=%.3f",
            best.width, best.learning_rate, best.val_accuracy,
        )
        return best
    return _train_once(
        x, y, config.hidden_width, config.learning_rate, config.epochs,
        config.val_fraction, config.seed,
    )


def export_weights(net: ProbeNet, path: str | Path) -> Path:
    """Write the probe in the core's weights-file format (row-major f32)."""
    hidden_w = net.hidden.weight.detach().numpy().astype(np.float32)
    hidden_b = net.hidden.bias.detach().numpy().astype(np.float32)
    head_w = net.head.weight.detach().numpy().astype(np.float32)
    head_b = net.head.bias.detach().numpy().astype(np.float32)
    doc = {
        "layers": [
            {
                "in": int(hidden_w.shape[1]),
                "out": int(hidden_w.shape[0]),
                "w": [float(v) for v in hidden_w.reshape(-1)],
                "b": [float(v) for v in hidden_b],
                "act": "relu",
            },
            {
                "in": int(head_w.shape[1]),
                "out": 1,
                "w": [float(v) for v in head_w.reshape(-1)],
                "b": [float(v) for v in head_b],
                "act": "sigmoid",
            },
        ]
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc), encoding="utf-8")
    return path
