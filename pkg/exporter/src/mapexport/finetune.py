"""Baseline fine-tuning of a network as a two-class classifier, with
per-epoch accuracy/loss curves for the train and validation sets."""

from __future__ import annotations

import csv
from typing import Sequence

import torch
from torch import nn

from .nets import build_model
from .preprocess import preprocess_image, to_network_input

CURVE_COLUMNS = ("epoch", "train_acc", "val_acc", "train_loss", "val_loss")


class FinetuneError(Exception):
    """Training diverged or inputs were unusable."""


def _two_class_head(model: nn.Module, model_name: str) -> nn.Module:
    if model_name == "resnet50":
        model.fc = nn.Linear(model.fc.in_features, 2)
    else:
        model.classifier = nn.Conv2d(model.classifier.in_channels, 2, 1)
    return model


def _stack(pairs, model_name, image_size):
    xs, ys = [], []
    for source, label in pairs:
        gray = preprocess_image(source, image_size)
        xs.append(to_network_input(gray, model_name)[0])
        ys.append(int(label))
    return torch.stack(xs), torch.tensor(ys, dtype=torch.long)


@torch.no_grad()
def _evaluate(model, x, y, loss_fn):
    model.eval()
    logits = model(x)
    loss = float(loss_fn(logits, y))
    acc = float((logits.argmax(dim=1) == y).float().mean())
    return acc, loss


def finetune_baseline(
    train_pairs: Sequence[tuple[object, int]],
    val_pairs: Sequence[tuple[object, int]],
    model_name: str,
    *,
    epochs: int = 10,
    batch_size: int = 10,
    learning_rate: float = 1e-4,
    momentum: float = 0.9,
    image_size: int = 256,
    seed: int = 0,
    weights_path=None,
) -> tuple[nn.Module, list[dict]]:
    """SGD-with-momentum fine-tuning; returns the model and curve rows.

    epochs=0 is a no-op that leaves the (seeded or loaded) network
    untouched and returns an empty curve list.
    """
    model = _two_class_head(build_model(model_name, weights_path, seed), model_name)
    if epochs == 0:
        return model, []
    if not train_pairs or not val_pairs:
        raise FinetuneError("need non-empty train and validation sets")
    x_tr, y_tr = _stack(train_pairs, model_name, image_size)
    x_val, y_val = _stack(val_pairs, model_name, image_size)
    loss_fn = nn.CrossEntropyLoss()
    optimizer = torch.optim.SGD(model.parameters(), lr=learning_rate, momentum=momentum)

    curves = []
    for epoch in range(1, epochs + 1):
        gen = torch.Generator().manual_seed(seed * 100_003 + epoch)
        order = torch.randperm(len(train_pairs), generator=gen)
        model.train()
        seen = 0
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            optimizer.zero_grad()
            logits = model(x_tr[idx])
            loss = loss_fn(logits, y_tr[idx])
            if not torch.isfinite(loss):
                raise FinetuneError(f"training diverged at epoch {epoch} (non-finite loss)")
            loss.backward()
            optimizer.step()
            seen += len(idx)
            loss_sum += float(loss.detach()) * len(idx)
            correct += int((logits.argmax(dim=1) == y_tr[idx]).sum())
        val_acc, val_loss = _evaluate(model, x_val, y_val, loss_fn)
        curves.append(
            {
                "epoch": epoch,
                "train_acc": correct / seen,
                "val_acc": val_acc,
                "train_loss": loss_sum / seen,
                "val_loss": val_loss,
            }
        )
    model.eval()
    return model, curves


def write_curves_csv(curves: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for row in curves:
            writer.writerow([row["epoch"]] + [f"{row[c]:.10g}" for c in CURVE_COLUMNS[1:]])
