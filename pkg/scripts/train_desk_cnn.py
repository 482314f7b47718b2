"""Train the bundled desk CNN on the 8x8 digits set and write the fixture.

Float pre-training followed by quantization-aware fine-tuning with per-tensor
fake quantization (weights signed symmetric, activations unsigned). The
exported weights are floats; gavsim derives the integer specs itself from a
calibration batch. Requires torch and scikit-learn (not package dependencies).

    python3 scripts/train_desk_cnn.py --out src/gavsim/data
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np
import torch
import torch.nn as tnn
import torch.nn.functional as F
from sklearn.datasets import load_digits

from gavsim import nn as gnn

A_BITS = W_BITS = 4


class FakeQuant(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, scale, lo, hi):
        q = torch.clamp(torch.sign(x / scale) * torch.floor(torch.abs(x / scale) + 0.5), lo, hi)
        return q * scale

    @staticmethod
    def backward(ctx, g):
        return g, None, None, None


def fq_weight(w, bits):
    qmax = 2 ** (bits - 1) - 1
    scale = w.detach().abs().max().clamp_min(1e-8) / qmax
    return FakeQuant.apply(w, scale, -qmax, qmax)


class ActQuant(tnn.Module):
    def __init__(self, bits, momentum=0.1):
        super().__init__()
        self.bits, self.momentum = bits, momentum
        self.register_buffer("running_max", torch.tensor(0.0))
        self.enabled = False

    def forward(self, x):
        if self.training:
            m = x.detach().max()
            self.running_max = m if self.running_max == 0 else (1 - self.momentum) * self.running_max + self.momentum * m
        if not self.enabled:
            return x
        scale = self.running_max.clamp_min(1e-8) / (2 ** self.bits - 1)
        return FakeQuant.apply(x, scale, 0, 2 ** self.bits - 1)


class DeskCNN(tnn.Module):
    def __init__(self):
        super().__init__()
        self.conv1 = tnn.Conv2d(1, 8, 3, padding=1)
        self.conv2 = tnn.Conv2d(8, 16, 3, padding=1)
        self.conv3 = tnn.Conv2d(16, 16, 3, padding=1)
        self.fc = tnn.Linear(64, 10)
        self.aq = tnn.ModuleList([ActQuant(A_BITS) for _ in range(4)])
        self.qat = False

    def _w(self, layer):
        return fq_weight(layer.weight, W_BITS) if self.qat else layer.weight

    def forward(self, x):
        x = F.relu(F.conv2d(self.aq[0](x), self._w(self.conv1), self.conv1.bias, padding=1))
        x = F.relu(F.conv2d(self.aq[1](x), self._w(self.conv2), self.conv2.bias, padding=1))
        x = F.max_pool2d(x, 2)
        x = F.relu(F.conv2d(self.aq[2](x), self._w(self.conv3), self.conv3.bias, padding=1))
        x = F.avg_pool2d(x, 2).flatten(1)
        return F.linear(self.aq[3](x), self._w(self.fc), self.fc.bias)

    def set_qat(self, on: bool):
        self.qat = on
        for a in self.aq:
            a.enabled = on


def train(model, x, y, epochs, lr, seed):
    g = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    for _ in range(epochs):
        model.train()
        perm = torch.randperm(len(x), generator=g)
        for i in range(0, len(x), 64):
            idx = perm[i: i + 64]
            opt.zero_grad()
            F.cross_entropy(model(x[idx]), y[idx]).backward()
            opt.step()


def to_gavsim(model: DeskCNN, calib: np.ndarray) -> gnn.NetworkModel:
    def arr(t):
        return t.detach().cpu().numpy().astype(np.float64)

    layers = [
        gnn.Conv2d("conv1", arr(model.conv1.weight), arr(model.conv1.bias), 1, 1),
        gnn.Simple("relu", name="relu1"),
        gnn.Conv2d("conv2", arr(model.conv2.weight), arr(model.conv2.bias), 1, 1),
        gnn.Simple("relu", name="relu2"),
        gnn.Simple("maxpool", size=2, name="pool1"),
        gnn.Conv2d("conv3", arr(model.conv3.weight), arr(model.conv3.bias), 1, 1),
        gnn.Simple("relu", name="relu3"),
        gnn.Simple("avgpool", size=2, name="pool2"),
        gnn.Simple("flatten", name="flatten"),
        gnn.Linear("fc", arr(model.fc.weight), arr(model.fc.bias)),
    ]
    # placeholder specs, replaced from the calibration batch below
    for l in layers:
        if l.kind in gnn.GEMM_KINDS:
            l.w_spec = l.a_spec = gnn.QuantSpec(8, 1.0)
    net = gnn.NetworkModel(layers, (1, 8, 8), 10, {"task": "sklearn digits 8x8", "trained_precision": "a4w4"})
    return net.with_precision(A_BITS, W_BITS, calib)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "src" / "gavsim" / "data")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-test", type=int, default=400)
    ap.add_argument("--n-calib", type=int, default=256)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    digits = load_digits()
    raw = digits.images.astype(np.int64)  # 0..16
    labels = digits.target.astype(np.int64)
    order = np.random.default_rng(args.seed).permutation(len(raw))
    test_idx, train_idx = order[: args.n_test], order[args.n_test:]
    input_scale = 1.0 / 16.0
    x_all = raw[:, None].astype(np.float32) * input_scale

    xt = torch.tensor(x_all[train_idx])
    yt = torch.tensor(labels[train_idx])
    model = DeskCNN()
    train(model, xt, yt, epochs=60, lr=3e-3, seed=args.seed)
    model.set_qat(True)
    train(model, xt, yt, epochs=40, lr=1e-3, seed=args.seed + 1)
    model.eval()
    with torch.no_grad():
        qat_acc = (model(torch.tensor(x_all[test_idx])).argmax(1).numpy() == labels[test_idx]).mean()

    calib_idx = train_idx[: args.n_calib]
    net = to_gavsim(model, x_all[calib_idx].astype(np.float64))
    xs = x_all[test_idx].astype(np.float64)
    float_acc = gnn.accuracy(gnn.float_activations(net, xs)[-1], labels[test_idx])
    quant_acc = gnn.accuracy(gnn.reference_forward(net, xs)[-1], labels[test_idx])
    net.meta.update(float_test_accuracy=float_acc, quant_test_accuracy=quant_acc, seed=args.seed)

    (args.out / "desk_cnn").mkdir(parents=True, exist_ok=True)
    gnn.save_network(net, args.out / "desk_cnn" / "manifest.json")
    for name, idx in (("test", test_idx), ("calib", calib_idx)):
        gnn.save_dataset(args.out / "digits" / name, raw[idx][:, None], labels[idx], bits=5, input_scale=input_scale,
                         meta={"source": "sklearn.datasets.load_digits", "split_seed": args.seed})
    print(f"qat(torch)={qat_acc:.4f} float={float_acc:.4f} quant a4w4={quant_acc:.4f}")


if __name__ == "__main__":
    main()
