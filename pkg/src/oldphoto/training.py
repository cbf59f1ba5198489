"""Pieces shared by every training loop: optimisers, schedules, batching, logs."""
import contextlib
import csv
import math
import warnings
from pathlib import Path

import torch

from .checkpoint import apply_checkpoint, load_checkpoint, save_checkpoint


@contextlib.contextmanager
def frozen(*modules):
    """Temporarily stop gradients from reaching the parameters of ``modules``."""
    saved = []
    for module in modules:
        for p in module.parameters():
            saved.append((p, p.requires_grad))
            p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def adam(params, cfg):
    return torch.optim.Adam(params, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))


def linear_decay(epochs):
    """Constant for the first half of ``epochs``, then linear towards zero."""
    keep = epochs // 2
    decay = max(1, epochs - keep)

    def factor(epoch):
        return max(0.0, 1.0 - max(0, epoch + 1 - keep) / (decay + 1))

    return factor


def scheduler(opt, epochs):
    return torch.optim.lr_scheduler.LambdaLR(opt, linear_decay(epochs))


class BatchStream:
    """Seeded epoch-wise shuffling over ``n`` items; tracks epoch boundaries."""

    def __init__(self, n, batch_size, seed):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.gen = torch.Generator().manual_seed(int(seed))
        self.epoch = 0
        self._order = torch.randperm(n, generator=self.gen)
        self._pos = 0

    def next(self):
        """Return ``(indices, epoch_finished)``."""
        if self._pos + self.batch_size > self.n:
            self.epoch += 1
            self._order = torch.randperm(self.n, generator=self.gen)
            self._pos = 0
            finished = True
        else:
            finished = False
        idx = self._order[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return idx, finished


def random_crop(batch, size, gen):
    h, w = batch.shape[-2:]
    if h == size and w == size:
        return batch
    top = int(torch.randint(0, h - size + 1, (1,), generator=gen))
    left = int(torch.randint(0, w - size + 1, (1,), generator=gen))
    return batch[..., top:top + size, left:left + size]


class LossLog:
    """Per-step loss components, optionally streamed to a CSV-like text file."""

    def __init__(self, path=None, append=False):
        self.rows = []
        self.path = Path(path) if path else None
        self._fields = None
        self._append = append

    def log(self, step, comps):
        row = {"step": int(step)}
        row.update({k: float(v) for k, v in comps.items()})
        self.rows.append(row)
        if self.path is None:
            return
        new = self._fields is None
        if new:
            self._fields = list(row)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            exists = self._append and self.path.exists() and self.path.stat().st_size > 0
            with self.path.open("a" if exists else "w", newline="") as fh:
                writer = csv.DictWriter(fh, self._fields)
                if not exists:
                    writer.writeheader()
                writer.writerow(row)
            return
        with self.path.open("a", newline="") as fh:
            csv.DictWriter(fh, self._fields).writerow(row)

    def series(self, key):
        return [r[key] for r in self.rows if key in r]


def scalars(comps, prefix=""):
    return {prefix + k: float(v.detach()) if hasattr(v, "detach") else float(v) for k, v in comps.items()}


class StageRunner:
    """Step loop with seeded batching, LR decay per epoch, logging and checkpoints.

    ``streams`` maps a name to a dataset size; the first one defines epochs.
    """

    def __init__(self, stage, cfg, modules, optimizers, streams, log_path=None,
                 ckpt_path=None, resume=None, extra=None):
        self.stage = stage
        self.cfg = cfg
        self.modules = modules
        self.optimizers = optimizers
        self.extra = extra or {}
        self.ckpt_path = ckpt_path
        self.streams = {name: BatchStream(n, cfg.batch_size, cfg.seed + 101 * i)
                        for i, (name, n) in enumerate(streams.items())}
        first = next(iter(streams.values()))
        per_epoch = max(1, first // min(cfg.batch_size, first))
        self.total = cfg.max_steps or cfg.epochs * per_epoch
        # a step budget overrides the epoch count, so the decay spans the actual run
        self.schedulers = [scheduler(o, math.ceil(self.total / per_epoch)) for o in optimizers.values()]
        self.gen = torch.Generator().manual_seed(cfg.seed + 7919)
        self.step = 0
        if resume is not None:
            payload = load_checkpoint(resume)
            apply_checkpoint(payload, modules, optimizers)
            self._fast_forward(payload["step"])
        self.log = LossLog(log_path, append=resume is not None)

    def _fast_forward(self, steps):
        for _ in range(steps):
            self._next_indices()
        self.step = steps
        self.gen.manual_seed(self.cfg.seed + 7919 + steps)

    def _next_indices(self):
        out = {}
        for i, (name, stream) in enumerate(self.streams.items()):
            idx, new_epoch = stream.next()
            if i == 0 and new_epoch:
                with warnings.catch_warnings():
                    # epoch boundaries can fall before the first optimiser step after a resume
                    warnings.filterwarnings("ignore", message="Detected call of `lr_scheduler.step")
                    for s in self.schedulers:
                        s.step()
            out[name] = idx
        return out

    def crop(self, batch):
        return random_crop(batch, min(self.cfg.crop, *batch.shape[-2:]), self.gen)

    def run(self, body):
        every = max(1, self.cfg.log_every)
        while self.step < self.total:
            comps = body(self._next_indices())
            self.step += 1
            if self.step % every == 0 or self.step == self.total:
                self.log.log(self.step, comps)
            if self.ckpt_path and self.cfg.checkpoint_every and self.step % self.cfg.checkpoint_every == 0:
                self.save()
        if self.ckpt_path:
            self.save()
        return self.log

    def save(self):
        epoch = next(iter(self.streams.values())).epoch
        save_checkpoint(self.ckpt_path, self.stage, self.modules, self.optimizers, self.step,
                        epoch, self.cfg.to_dict(), self.extra)
