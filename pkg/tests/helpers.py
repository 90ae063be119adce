"""Small drivers shared by the test modules."""

import numpy as np

from driftbench.model import Model, ModelConfig, expand_head
from driftbench.protocol import task_rng, train_one_task


def trajectory(strategy, scen, epochs=2, seed=0, upto=None, lr=1e-3, batch_size=16):
    """Train tasks 1..upto in sequence; return the flat parameter bytes after every step."""
    upto = scen.n_tasks if upto is None else upto
    first = scen.train[0]
    model = Model(ModelConfig(n_features=first.n_features, n_classes=len(scen.task_columns(0)), n_layers=1,
                              hidden=32, n_steps=first.n_steps, seed=seed))
    log = []
    recorder = _Recorder(strategy, model, log)
    for j in range(1, upto + 1):
        if j > 1:
            expand_head(model, len(scen.task_columns(j - 1)), seed=1000 + j)
        train_one_task(model, recorder, scen.train[j - 1], j, epochs, lr, task_rng(seed, j), batch_size)
    return log, model


class _Recorder:
    """Forward every hook to ``inner`` and log the parameters after each optimizer step."""

    def __init__(self, inner, model, log):
        self.inner, self.model, self.log = inner, model, log

    def before_task(self, *a):
        return self.inner.before_task(*a)

    def augment_loss(self, *a):
        return self.inner.augment_loss(*a)

    def post_backward(self, *a):
        return self.inner.post_backward(*a)

    def after_step(self, grads, deltas):
        self.inner.after_step(grads, deltas)
        self.log.append(b"".join(np.ascontiguousarray(p.data).tobytes() for p in self.model.parameters()))

    def after_task(self, *a):
        return self.inner.after_task(*a)
