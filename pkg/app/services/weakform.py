"""
Weak-form residual of the empirical measure, the martingale tracker and the work integral.

For a test function phi the residual over [0, t] is

    K(mu^N) = (1/N^2) sum_{i,j} [phi(X_t^i) - phi(X_0^i)
              - (1/2) int (grad phi(X^i) - grad phi(X^j)) . F_eps(X^i - X^j) ds - int Lap phi(X^i) ds].

The symmetrized pair sum equals (1/N) sum_i grad phi(X^i) . b_i with b_i the particle drift, so the
residual is evaluated in that drift form from the stored drifts.
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.schemas.results import WeakResidualReport
from app.services.kernel import KernelSpec, coulomb_force, coulomb_drift, mollified_force, pairwise_forces
from app.services.sde import SQRT2, Trajectory
from app.utils.exceptions import UnavailableError, ValidationError

logger = logging.getLogger(__name__)

TEST_FUNCTION_KINDS = ("gaussian_bump", "polynomial_taper", "constant", "linear")

GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


@dataclass(frozen=True)
class TestFunction:
    """
    Test function with closed-form gradient and Laplacian.

    gaussian_bump: exp(-|x - c|^2 / 2w^2); polynomial_taper: (1 - |x - c|^2 / w^2)^3 inside the ball of
    radius w; constant: the value `scale`; linear: direction . x.
    """

    kind: str
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    width: float = 1.0
    scale: float = 1.0
    direction: Tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in TEST_FUNCTION_KINDS:
            raise ValidationError(f"Unknown test function kind {self.kind!r}")
        if not self.width > 0.0:
            raise ValidationError(f"test function width must be positive, got {self.width}")

    @property
    def label(self) -> str:
        if self.kind in ("gaussian_bump", "polynomial_taper"):
            c = ",".join(f"{v:.4g}" for v in self.center)
            return f"{self.kind}(c=[{c}],w={self.width:g})"
        if self.kind == "constant":
            return f"constant({self.scale:g})"
        return "linear"

    def _offset(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) - np.asarray(self.center)

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.scale)
        if self.kind == "linear":
            return x @ np.asarray(self.direction)
        y = self._offset(x)
        q = np.sum(y * y, axis=-1) / self.width**2
        if self.kind == "gaussian_bump":
            return np.exp(-0.5 * q)
        return np.clip(1.0 - q, 0.0, None) ** 3

    def gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "constant":
            return np.zeros_like(x)
        if self.kind == "linear":
            return np.broadcast_to(np.asarray(self.direction), x.shape).copy()
        y = self._offset(x)
        w2 = self.width**2
        q = np.sum(y * y, axis=-1) / w2
        if self.kind == "gaussian_bump":
            return -(np.exp(-0.5 * q) / w2)[..., None] * y
        return (-6.0 * np.clip(1.0 - q, 0.0, None) ** 2 / w2)[..., None] * y

    def laplacian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind in ("constant", "linear"):
            return np.zeros(x.shape[:-1])
        y = self._offset(x)
        w2 = self.width**2
        q = np.sum(y * y, axis=-1) / w2
        if self.kind == "gaussian_bump":
            return (q - 3.0) / w2 * np.exp(-0.5 * q)
        inside = np.clip(1.0 - q, 0.0, None)
        return (24.0 * q * inside - 18.0 * inside**2) / w2

    def hessian_bound(self) -> float:
        """
        sup |grad^2 phi| in operator norm.
        """
        if self.kind in ("constant", "linear"):
            return 0.0
        if self.kind == "gaussian_bump":
            return 1.0 / self.width**2
        return 6.0 / self.width**2


def icosahedral_centers(count: int = 5, scale: float = 1.0) -> np.ndarray:
    """
    The first `count` vertices of a regular icosahedron inscribed in the sphere of radius `scale`.
    """
    vertices = []
    for a in (1.0, -1.0):
        for b in (GOLDEN, -GOLDEN):
            vertices.extend([(0.0, a, b), (a, b, 0.0), (b, 0.0, a)])
    vertices = np.array(vertices)
    vertices /= np.linalg.norm(vertices[0])
    return scale * vertices[:count]


def test_battery(center_scale: float = 1.0, widths=(0.5, 1.0), kind: str = "gaussian_bump",
                 centers: int = 5) -> List[TestFunction]:
    """
    Bumps on fixed icosahedral centres, one per (centre, width).
    """
    return [
        TestFunction(kind, center=tuple(float(v) for v in c), width=float(w))
        for w in widths
        for c in icosahedral_centers(centers, center_scale)
    ]


def symmetrized_pair_integrand(x, y, phi: TestFunction, spec: Optional[KernelSpec] = None) -> float:
    """
    (grad phi(x) - grad phi(y)) . F_eps(x - y); exact kernel when spec is None.

    Raises:
        SingularityError: x == y with the exact kernel
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    force = coulomb_force(x - y) if spec is None else mollified_force(x - y, spec)
    return float(np.dot(phi.gradient(x) - phi.gradient(y), force))


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    weights = np.zeros_like(times)
    gaps = np.diff(times)
    weights[:-1] += 0.5 * gaps
    weights[1:] += 0.5 * gaps
    return weights


def _quadrature_window(trajectory: Trajectory, t: Optional[float]) -> int:
    k = len(trajectory.times) - 1 if t is None else trajectory.index_of(t)
    if k < 1:
        raise ValidationError(
            "weak residual needs at least two stored quadrature times on [0, t]",
            details={"t": t, "stored": len(trajectory.times)}
        )
    return k


def _residual(positions: np.ndarray, drifts: np.ndarray, times: np.ndarray, phi: TestFunction) -> float:
    if phi.kind == "constant":
        return 0.0
    boundary = float(np.mean(phi.value(positions[-1]) - phi.value(positions[0])))
    rate = np.array([
        np.mean(np.sum(phi.gradient(x) * b, axis=1) + phi.laplacian(x))
        for x, b in zip(positions, drifts)
    ])
    return boundary - float(np.sum(_trapezoid_weights(times) * rate))


def ito_part(trajectory: Trajectory, phi: TestFunction, k: int) -> float:
    """
    (sqrt(2)/N) sum_i sum_k grad phi(X_{t_k}^i) . dB_k^i over the stored intervals.
    """
    if trajectory.increments is None:
        raise UnavailableError("Brownian increments were not retained for this trajectory")
    total = 0.0
    for j in range(k):
        total += float(np.sum(phi.gradient(trajectory.positions[j]) * trajectory.increments[j]))
    return SQRT2 * total / trajectory.n


def weak_residual(trajectory: Trajectory, phi: TestFunction, spec: KernelSpec, t: Optional[float] = None,
                  decompose: bool = True) -> WeakResidualReport:
    """
    K_{psi_eps}(mu^N) on [0, t], time integrals by the trapezoid rule on the stored grid.

    Args:
        trajectory: Simulated path with positions and drifts at the quadrature times
        phi: Test function
        spec: Kernel the drifts were computed with
        t: Evaluation time (default: final stored time)
        decompose: Also compute the Ito part and the exact-kernel residual

    Raises:
        ValidationError: Fewer than two quadrature times on [0, t]
    """
    k = _quadrature_window(trajectory, t)
    times = trajectory.times[: k + 1]
    positions = trajectory.positions[: k + 1]
    drifts = _drifts_for(trajectory, spec, k)
    value = _residual(positions, drifts, times, phi)

    report = WeakResidualReport(
        value=value, N=trajectory.n, epsilon=spec.epsilon, t=float(times[-1]),
        seed=trajectory.seed, phi=phi.label,
    )
    if decompose:
        if trajectory.increments is not None:
            ito = 0.0 if phi.kind == "constant" else ito_part(trajectory, phi, k)
            report.ito_martingale_part = ito
            report.remainder_part = value - ito
        exact = exact_residual(trajectory, phi, float(times[-1]))
        report.exact_value = exact
        report.mollification_gap_part = exact - value
    return report


def _drifts_for(trajectory: Trajectory, spec: KernelSpec, k: int) -> np.ndarray:
    if spec.epsilon == trajectory.epsilon:
        return trajectory.drifts[: k + 1]
    return np.array([pairwise_forces(x, spec) for x in trajectory.positions[: k + 1]])


def exact_residual(trajectory: Trajectory, phi: TestFunction, t: Optional[float] = None) -> float:
    """
    K_psi(mu^N) with the exact Coulomb drift at the stored positions.

    Raises:
        SingularityError: Two particles coincide at a stored time
    """
    k = _quadrature_window(trajectory, t)
    positions = trajectory.positions[: k + 1]
    if phi.kind == "constant":
        return 0.0
    drifts = np.array([coulomb_drift(x) for x in positions])
    return _residual(positions, drifts, trajectory.times[: k + 1], phi)


def mollification_gap(trajectory: Trajectory, phi: TestFunction, spec: KernelSpec,
                      t: Optional[float] = None) -> float:
    """
    K_psi - K_{psi_eps} on the same path.
    """
    k = _quadrature_window(trajectory, t)
    t_k = float(trajectory.times[k])
    mollified = _residual(trajectory.positions[: k + 1], _drifts_for(trajectory, spec, k),
                          trajectory.times[: k + 1], phi)
    return exact_residual(trajectory, phi, t_k) - mollified


def martingale_track(trajectory: Trajectory, spec: KernelSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Output times and M_t = 2 sqrt(2) sum_i int b_i . dB^i, accumulated by the integrator step by step.

    Raises:
        UnavailableError: The run did not retain its Brownian increments
    """
    if trajectory.increments is None:
        raise UnavailableError(
            "martingale needs the Brownian increments; rerun with retain_increments enabled",
            details={"seed": trajectory.seed}
        )
    if spec.epsilon != trajectory.epsilon:
        raise ValidationError("martingale is only defined for the kernel the path was integrated with")
    return trajectory.times.copy(), trajectory.martingale.copy()


def work_series(trajectory: Trajectory, spec: KernelSpec) -> np.ndarray:
    """
    Running trapezoid integral of (1/N) sum_i |b_i|^2 at each output time.
    """
    drifts = _drifts_for(trajectory, spec, len(trajectory.times) - 1)
    rates = np.mean(np.sum(drifts * drifts, axis=2), axis=1)
    out = np.zeros_like(rates)
    if rates.size > 1:
        out[1:] = np.cumsum(0.5 * (rates[1:] + rates[:-1]) * np.diff(trajectory.times))
    return out


def work_integral(trajectory: Trajectory, spec: KernelSpec, t: Optional[float] = None) -> float:
    """
    int_0^t (1/N) sum_i |(1/N) sum_{j != i} F_eps(X^i - X^j)|^2 ds by the trapezoid rule.
    """
    k = len(trajectory.times) - 1 if t is None else trajectory.index_of(t)
    return float(work_series(trajectory, spec)[k])
