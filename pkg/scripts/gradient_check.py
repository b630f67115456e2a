#!/usr/bin/env python3
"""Finite-difference check of every weight of a small encoder-decoder, reported per tensor."""

import argparse

import numpy as np

from jitcast import autograd as ag
from jitcast.training import mse_loss
from jitcast.transformer import ModelConfig, Seq2SeqTransformer


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--d-model", type=int, default=8)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--seq", type=int, default=5)
    ap.add_argument("--eps", type=float, default=1e-5)
    args = ap.parse_args()

    cfg = ModelConfig(d_model=args.d_model, n_heads=args.heads, d_ff=2 * args.d_model, zero_init_head=False)
    model = Seq2SeqTransformer(cfg, seed=0)
    rng = np.random.default_rng(0)
    enc, dec = rng.normal(size=(2, args.seq, 3)), rng.normal(size=(2, args.seq, 3))
    target = rng.normal(size=(2, args.seq))

    def loss():
        return mse_loss(model.forward(enc, dec), target)

    ag.backward(loss())
    for p in model.parameters():
        num = ag.numerical_gradient(lambda: float(loss().data), p, eps=args.eps)
        rel = np.abs(p.grad - num) / np.maximum(np.maximum(np.abs(p.grad), np.abs(num)), 1e-8)
        print(f"{p.name:<22} {str(p.shape):<10} max rel err {rel.max():.2e}")


if __name__ == "__main__":
    main()
