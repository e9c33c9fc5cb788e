"""Momentum SGD over named parameters."""

import numpy as np

from .errors import ConfigError


class MomentumSGD:
    """Classic momentum update: v <- m*v + g, theta <- theta - lr*v.

    Velocity buffers are keyed by parameter name and created lazily, so a
    step restricted to a parameter subset touches nothing else: untouched
    parameters keep their exact bytes and their buffers keep decaying only
    when they next receive a gradient.
    """

    def __init__(self, lr=1e-4, momentum=0.9):
        if lr < 0:
            raise ConfigError("learning rate must be >= 0, got %g" % lr)
        if not 0 <= momentum < 1:
            raise ConfigError("momentum must be in [0, 1), got %g" % momentum)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.buffers = {}

    def step(self, params, grads, decay_rest=False):
        """Apply one update.

        params maps name -> Tensor, grads maps name -> ndarray for the
        subset of parameters to move; parameter data is updated in place.

        With decay_rest the velocity of every parameter that did not
        receive a gradient this step still decays by the momentum factor
        (the parameter itself is not touched).  Without it a rarely
        selected parameter would wake up to a velocity frozen at full
        strength from many steps ago and get kicked in a stale direction.
        """
        if decay_rest:
            for name in self.buffers:
                if name not in grads:
                    self.buffers[name] = self.momentum * self.buffers[name]
        for name, g in grads.items():
            p = params[name]
            if g.shape != p.data.shape:
                raise ConfigError("gradient shape %s does not match parameter "
                                  "%s %s" % (g.shape, name, p.data.shape))
            v = self.buffers.get(name)
            if v is None:
                v = np.zeros_like(p.data)
            v = self.momentum * v + g
            self.buffers[name] = v
            p.data -= self.lr * v
