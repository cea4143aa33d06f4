"""Batched LSTM recurrence shared by the character and sentence encoders.

Sequences are carried as lists of (B, D) tensors, one per timestep, padded to
a common length.  A float mask freezes the hidden and cell state once a
sequence has ended, so the state at the last timestep is the true final state
for every row regardless of its length.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from nlnde import autodiff as ad
from nlnde.autodiff import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class LstmParams:
    """One direction.  Gate layout along the last axis: input, forget, cell, output."""

    w_in: Tensor   # (D, 4H)
    w_rec: Tensor  # (H, 4H)
    bias: Tensor   # (4H,)
    hidden: int

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int, hidden: int, name: str) -> "LstmParams":
        return cls(
            w_in=ad.parameter(uniform_init(rng, (input_dim, 4 * hidden), input_dim), f"{name}.w_in"),
            w_rec=ad.parameter(uniform_init(rng, (hidden, 4 * hidden), hidden), f"{name}.w_rec"),
            bias=ad.parameter(np.zeros(4 * hidden), f"{name}.bias"),
            hidden=hidden,
        )

    def tensors(self) -> list[Tensor]:
        return [self.w_in, self.w_rec, self.bias]


def lstm_step(x: Tensor, h: Tensor, c: Tensor, p: LstmParams) -> tuple[Tensor, Tensor]:
    gates = x @ p.w_in + h @ p.w_rec + p.bias
    n = p.hidden
    i = ad.sigmoid(gates[:, 0 * n : 1 * n])
    f = ad.sigmoid(gates[:, 1 * n : 2 * n])
    g = ad.tanh(gates[:, 2 * n : 3 * n])
    o = ad.sigmoid(gates[:, 3 * n : 4 * n])
    c_new = f * c + i * g
    h_new = o * ad.tanh(c_new)
    return h_new, c_new


def lstm_scan(
    steps: list[Tensor], mask: np.ndarray, p: LstmParams, reverse: bool = False
) -> tuple[list[Tensor], Tensor]:
    """Run one direction over padded timesteps.

    steps: T tensors of shape (B, D); mask: (B, T) floats, 1 inside each
    sequence.  Returns the per-position hidden states (zeros at padding) and
    the final state, which the freeze-on-mask carry makes exact: the forward
    pass ends frozen at each row's last real step, the backward pass ends at
    position 0.
    """
    bsz = steps[0].shape[0]
    n = p.hidden
    h = ad.constant(np.zeros((bsz, n)))
    c = ad.constant(np.zeros((bsz, n)))
    order = range(len(steps) - 1, -1, -1) if reverse else range(len(steps))
    out: list[Tensor | None] = [None] * len(steps)
    for t in order:
        h_new, c_new = lstm_step(steps[t], h, c, p)
        m = mask[:, t : t + 1]
        h = ad.where(m > 0.5, h_new, h)
        c = ad.where(m > 0.5, c_new, c)
        out[t] = h
    return out, h  # type: ignore[return-value]


@dataclass
class BiLstmParams:
    fwd: LstmParams
    bwd: LstmParams

    @classmethod
    def create(cls, rng: np.random.Generator, input_dim: int, hidden: int, name: str) -> "BiLstmParams":
        return cls(
            fwd=LstmParams.create(rng, input_dim, hidden, f"{name}.fwd"),
            bwd=LstmParams.create(rng, input_dim, hidden, f"{name}.bwd"),
        )

    def tensors(self) -> list[Tensor]:
        return self.fwd.tensors() + self.bwd.tensors()


def bilstm_scan(
    steps: list[Tensor], mask: np.ndarray, p: BiLstmParams
) -> tuple[list[Tensor], Tensor]:
    """Per-position concat of both directions, plus concat of final states."""
    out_f, last_f = lstm_scan(steps, mask, p.fwd, reverse=False)
    out_b, last_b = lstm_scan(steps, mask, p.bwd, reverse=True)
    per_pos = [ad.concat([f, b], axis=1) for f, b in zip(out_f, out_b)]
    return per_pos, ad.concat([last_f, last_b], axis=1)
