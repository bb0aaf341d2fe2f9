"""Small dense networks with hand-written backprop, plus Adam.

Everything is float64 numpy. Gradients are exact (verified against central
finite differences in the test suite), which keeps training deterministic
given a seed and makes the policy loss auditable.
"""

from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class MLP:
    """Tanh hidden layers, linear output."""

    def __init__(self, sizes: list[int], rng: np.random.Generator, out_scale: float = 0.01):
        self.sizes = list(sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            scale = out_scale if i == len(sizes) - 2 else math.sqrt(1.0 / n_in)
            self.weights.append(rng.normal(0.0, scale, size=(n_in, n_out)))
            self.biases.append(np.zeros(n_out))

    def forward(self, x: np.ndarray):
        """Returns (output, cache) for a (batch, n_in) input."""
        acts = [x]
        h = x
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            h = np.tanh(z) if i < len(self.weights) - 1 else z
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], dout: np.ndarray):
        """Gradients for a forward cache; returns ([dW...], [db...], dx)."""
        dw = [None] * len(self.weights)
        db = [None] * len(self.biases)
        delta = dout
        for i in reversed(range(len(self.weights))):
            if i < len(self.weights) - 1:
                delta = delta * (1.0 - acts[i + 1] ** 2)  # tanh'
            dw[i] = acts[i].T @ delta
            db[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return dw, db, delta

    # -- flat parameter views (serialization, finite-difference checks) -----

    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_flat(self, flat: np.ndarray) -> None:
        i = 0
        for arr in self.weights + self.biases:
            arr[...] = flat[i : i + arr.size].reshape(arr.shape)
            i += arr.size
        assert i == flat.size

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @staticmethod
    def from_dict(d: dict) -> "MLP":
        mlp = MLP(d["sizes"], np.random.default_rng(0))
        mlp.weights = [np.asarray(w, dtype=float) for w in d["weights"]]
        mlp.biases = [np.asarray(b, dtype=float) for b in d["biases"]]
        return mlp


class Adam:
    """Adam over a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


class Normalizer:
    """Running mean/std feature normalizer (Welford over batches)."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0

    def update(self, batch: np.ndarray) -> None:
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        total = self.count + n
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (n / total)
        self.var = (self.count * self.var + n * b_var + (delta**2) * self.count * n / total) / total
        self.count = total

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0:
            return x
        return np.clip((x - self.mean) / np.sqrt(self.var + 1e-8), -10.0, 10.0)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist(), "count": self.count}

    @staticmethod
    def from_dict(d: dict) -> "Normalizer":
        norm = Normalizer(len(d["mean"]))
        norm.mean = np.asarray(d["mean"], dtype=float)
        norm.var = np.asarray(d["var"], dtype=float)
        norm.count = float(d["count"])
        return norm


class GaussianPolicy:
    """MLP mean with a state-independent learned log-std vector.

    Raw observations are normalized internally (running stats shared with
    the trainer), so saved policies replay identically at evaluation time.
    """

    def __init__(self, obs_dim: int, action_dim: int, hidden: list[int], rng: np.random.Generator, init_log_std: float = -0.7):
        self.mlp = MLP([obs_dim] + list(hidden) + [action_dim], rng)
        self.log_std = np.full(action_dim, float(init_log_std))
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.obs_norm = Normalizer(obs_dim)

    # -- sampling ------------------------------------------------------------

    def act(self, obs: np.ndarray, rng: np.random.Generator):
        """Sample an action; returns (action, log_prob)."""
        mean = self.mlp(self.obs_norm.apply(obs)[None, :])[0]
        std = np.exp(self.log_std)
        action = mean + std * rng.standard_normal(self.action_dim)
        return action, float(self._logp_single(mean, action))

    def mean_action(self, obs: np.ndarray) -> np.ndarray:
        return self.mlp(self.obs_norm.apply(obs)[None, :])[0]

    def _logp_single(self, mean, action):
        z = (action - mean) / np.exp(self.log_std)
        return -0.5 * np.sum(z * z) - np.sum(self.log_std) - 0.5 * self.action_dim * LOG_2PI

    def log_prob(self, obs: np.ndarray, actions: np.ndarray):
        """(batch,) log-probs plus a cache for backward."""
        mean, acts = self.mlp.forward(self.obs_norm.apply(obs))
        std = np.exp(self.log_std)
        z = (actions - mean) / std
        logp = -0.5 * np.sum(z * z, axis=1) - np.sum(self.log_std) - 0.5 * self.action_dim * LOG_2PI
        return logp, (acts, mean, z, std)

    def log_prob_backward(self, cache, dlogp: np.ndarray):
        """Backprop d loss/d logp into (mlp weight grads, bias grads, log_std grad)."""
        acts, mean, z, std = cache
        # dlogp/dmean = z/std, dlogp/dlog_std = z^2 - 1 (per dim)
        dmean = dlogp[:, None] * (z / std)
        dlog_std = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0)
        dw, db, _ = self.mlp.backward(acts, dmean)
        return dw, db, dlog_std

    def entropy(self) -> float:
        return float(np.sum(self.log_std) + 0.5 * self.action_dim * (1.0 + LOG_2PI))

    # -- parameters ----------------------------------------------------------

    def param_arrays(self) -> list[np.ndarray]:
        return self.mlp.weights + self.mlp.biases + [self.log_std]

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.mlp.get_flat(), self.log_std])

    def set_flat(self, flat: np.ndarray) -> None:
        n = flat.size - self.action_dim
        self.mlp.set_flat(flat[:n])
        self.log_std[...] = flat[n:]

    def to_dict(self) -> dict:
        return {
            "format": 1,
            "kind": "gaussian-mlp",
            "mlp": self.mlp.to_dict(),
            "log_std": self.log_std.tolist(),
            "obs_norm": self.obs_norm.to_dict(),
        }

    @staticmethod
    def from_dict(d: dict) -> "GaussianPolicy":
        if d.get("kind") != "gaussian-mlp":
            raise ValueError(f"not a gaussian-mlp policy file: {d.get('kind')!r}")
        mlp = MLP.from_dict(d["mlp"])
        p = GaussianPolicy(mlp.sizes[0], mlp.sizes[-1], mlp.sizes[1:-1], np.random.default_rng(0))
        p.mlp = mlp
        p.log_std = np.asarray(d["log_std"], dtype=float)
        if "obs_norm" in d:
            p.obs_norm = Normalizer.from_dict(d["obs_norm"])
        return p
