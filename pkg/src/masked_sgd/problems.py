"""Test objectives with known constants and controllable gradient noise.

Quadratics give exact smoothness constants, optima, and optimality gaps,
so convergence bounds can be checked numerically. Model problems wrap a
computation graph over a synthetic dataset; their stochastic gradient is
the mini-batch gradient. Gradient noise follows the standard
relative/absolute bound: for every mask p,

    E ||p * noise||^2  <=  m ||p * grad||^2 + sigma2.

The additive part draws Normal(0, sigma2/d) per coordinate, which meets
the sigma2 budget with equality for the full mask and with slack for any
sub-mask. The relative part multiplies each gradient coordinate by a
Rademacher variable scaled to +-sqrt(m).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .graphs import Array, CompGraph, ParamLayout, as_f64, forward, value_and_grad


@dataclass(frozen=True)
class NoiseModel:
    sigma2: float = 0.0  # absolute variance budget, sum over coordinates
    m: float = 0.0       # relative variance per coordinate

    def __post_init__(self):
        if self.sigma2 < 0 or self.m < 0:
            raise ContractError("noise parameters must be nonnegative")

    @classmethod
    def none(cls):
        return cls(0.0, 0.0)

    @classmethod
    def additive(cls, sigma2: float):
        return cls(sigma2=sigma2)

    @classmethod
    def multiplicative(cls, m: float):
        return cls(m=m)

    @property
    def is_zero(self) -> bool:
        return self.sigma2 == 0.0 and self.m == 0.0

    def sample(self, grad: Array, rng) -> Array:
        """One noise draw; zero-mean by construction."""
        d = grad.size
        noise = np.zeros(d)
        if self.m > 0:
            signs = rng.integers(0, 2, d) * 2.0 - 1.0
            noise += np.sqrt(self.m) * signs * grad
        if self.sigma2 > 0:
            noise += rng.normal(0.0, np.sqrt(self.sigma2 / d), d)
        return noise

    def paired_sample(self, grad_a: Array, grad_b: Array, rng) -> tuple[Array, Array]:
        """Noise at two points sharing one draw of the underlying randomness."""
        d = grad_a.size
        noise_a = np.zeros(d)
        noise_b = np.zeros(d)
        if self.m > 0:
            signs = rng.integers(0, 2, d) * 2.0 - 1.0
            noise_a += np.sqrt(self.m) * signs * grad_a
            noise_b += np.sqrt(self.m) * signs * grad_b
        if self.sigma2 > 0:
            common = rng.normal(0.0, np.sqrt(self.sigma2 / d), d)
            noise_a += common
            noise_b += common
        return noise_a, noise_b


class QuadraticProblem:
    """f(x) = 0.5 x'Ax - b'x with symmetric PSD A.

    Exposes the smoothness constant (largest eigenvalue), the closed-form
    minimizer and optimal value, and a noisy gradient oracle.
    """

    def __init__(self, A: Array, b: Array | None = None, noise: NoiseModel | None = None):
        A = as_f64(A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ContractError("A must be square")
        if np.max(np.abs(A - A.T)) > 1e-12:
            raise ContractError("A must be symmetric within 1e-12")
        self.A = 0.5 * (A + A.T)
        self.dim = A.shape[0]
        self.b = np.zeros(self.dim) if b is None else as_f64(b)
        if self.b.shape != (self.dim,):
            raise ContractError("b must match A's dimension")
        eigs = np.linalg.eigvalsh(self.A)
        if eigs[0] < -1e-10:
            raise ContractError("A must be positive semi-definite")
        self.smoothness = float(eigs[-1])
        self.noise = noise if noise is not None else NoiseModel.none()
        if eigs[0] > 0:
            self.minimizer = np.linalg.solve(self.A, self.b)
            self.optimal_value = float(-0.5 * self.b @ self.minimizer)
        else:
            self.minimizer = None
            self.optimal_value = 0.0 if np.all(self.b == 0) else None

    def loss(self, x: Array) -> float:
        x = as_f64(x)
        return float(0.5 * x @ self.A @ x - self.b @ x)

    def grad(self, x: Array) -> Array:
        return self.A @ as_f64(x) - self.b

    def stochastic_grad(self, x: Array, rng) -> Array:
        g = self.grad(x)
        if self.noise.is_zero:
            return g
        return g + self.noise.sample(g, rng)

    def paired_stochastic_grad(self, x: Array, xt: Array, rng) -> tuple[Array, Array]:
        """Noisy gradients at two points from one shared noise draw."""
        gx, gxt = self.grad(x), self.grad(xt)
        if self.noise.is_zero:
            return gx, gxt
        nx, nt = self.noise.paired_sample(gx, gxt, rng)
        return gx + nx, gxt + nt

    def gap(self, x: Array) -> float:
        """Optimality gap f(x) - f*."""
        if self.optimal_value is None:
            raise ContractError("problem has no finite optimum")
        return self.loss(x) - self.optimal_value


def make_quadratic(dim: int, condition: float, seed: int, smoothness: float = 1.0,
                   b_scale: float = 0.0, noise: NoiseModel | None = None) -> QuadraticProblem:
    """Random quadratic with eigenvalues log-spaced in [L/condition, L].

    The eigenbasis is a seeded random orthogonal matrix; ``b_scale`` > 0
    adds a random linear term (moving the minimizer off the origin).
    """
    if dim < 1:
        raise ContractError("dimension must be >= 1")
    if condition < 1.0:
        raise ContractError("condition number must be >= 1")
    if smoothness <= 0:
        raise ContractError("smoothness must be positive")
    rng = np.random.default_rng(seed)
    if dim == 1:
        eigs = np.array([smoothness])
    else:
        eigs = np.geomspace(smoothness / condition, smoothness, dim)
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    A = (q * eigs) @ q.T
    A = 0.5 * (A + A.T)
    b = b_scale * rng.normal(size=dim) if b_scale > 0 else None
    return QuadraticProblem(A, b, noise=noise)


def stochastic_gradient(problem, x: Array, noise: NoiseModel, rng) -> Array:
    """Noisy gradient with an explicit noise model (overrides the problem's)."""
    g = problem.grad(x)
    return g if noise.is_zero else g + noise.sample(g, rng)


@dataclass(frozen=True)
class Dataset:
    """Column-major features/targets plus a train/validation split."""

    inputs: Array    # (features, samples)
    targets: Array   # (outputs, samples)
    train_idx: Array
    val_idx: Array

    @property
    def n_train(self) -> int:
        return self.train_idx.size


def make_blobs(n: int, dim: int, classes: int, seed: int, separation: float = 3.0,
               spread: float = 1.0, val_fraction: float = 0.25) -> Dataset:
    """Balanced Gaussian-blob classification data, one-hot targets.

    Class sizes differ by at most one; everything is reproducible from
    the seed alone.
    """
    if n < classes or classes < 2 or dim < 1:
        raise ContractError("need n >= classes >= 2 and dim >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, separation, (classes, dim))
    counts = np.full(classes, n // classes)
    counts[: n % classes] += 1
    labels = np.repeat(np.arange(classes), counts)
    points = centers[labels] + rng.normal(0.0, spread, (n, dim))
    perm = rng.permutation(n)
    points, labels = points[perm], labels[perm]
    targets = np.zeros((classes, n))
    targets[labels, np.arange(n)] = 1.0
    n_val = int(round(val_fraction * n))
    idx = np.arange(n)
    return Dataset(points.T.copy(), targets, idx[n_val:], idx[:n_val])


class ModelProblem:
    """A computation graph on a dataset, seen as a function of flat params.

    ``grad``/``loss`` use the full training set; ``stochastic_grad``
    draws a uniform mini-batch (its sampling noise is the gradient
    noise). ``smoothness`` is unknown (None).
    """

    smoothness = None
    optimal_value = None

    def __init__(self, graph: CompGraph, layout: ParamLayout, data: Dataset,
                 batch_size: int, noise: NoiseModel | None = None):
        if batch_size < 1 or batch_size > data.n_train:
            raise ContractError("batch size must be in [1, n_train]")
        self.graph = graph
        self.layout = layout
        self.data = data
        self.batch_size = int(batch_size)
        self.noise = noise if noise is not None else NoiseModel.none()
        self.dim = layout.dim
        self._train_x = data.inputs[:, data.train_idx]
        self._train_y = data.targets[:, data.train_idx]
        self._val_x = data.inputs[:, data.val_idx]
        self._val_y = data.targets[:, data.val_idx]

    def loss(self, x: Array) -> float:
        return forward(self.graph, x, self._train_x, self._train_y)

    def val_loss(self, x: Array) -> float:
        if self._val_x.shape[1] == 0:
            raise ContractError("dataset has no validation split")
        return forward(self.graph, x, self._val_x, self._val_y)

    def grad(self, x: Array) -> Array:
        return value_and_grad(self.graph, x, self._train_x, self._train_y)[1]

    def stochastic_grad(self, x: Array, rng) -> Array:
        idx = rng.choice(self._train_x.shape[1], size=self.batch_size, replace=False)
        g = value_and_grad(
            self.graph, x, self._train_x[:, idx], self._train_y[:, idx]
        )[1]
        if not self.noise.is_zero:
            g = g + self.noise.sample(g, rng)
        return g

    def paired_stochastic_grad(self, x: Array, xt: Array, rng) -> tuple[Array, Array]:
        """Mini-batch gradients at two points on the same batch."""
        idx = rng.choice(self._train_x.shape[1], size=self.batch_size, replace=False)
        batch, targets = self._train_x[:, idx], self._train_y[:, idx]
        gx = value_and_grad(self.graph, x, batch, targets)[1]
        gxt = value_and_grad(self.graph, xt, batch, targets)[1]
        return gx, gxt
