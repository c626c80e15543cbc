from .kernel import KernelSpec, pairwise_forces
from .sde import InitialDensity, ParticleEnsemble, RunSpec, StepPolicy, Trajectory, simulate

__all__ = [
    "KernelSpec", "pairwise_forces",
    "InitialDensity", "ParticleEnsemble", "RunSpec", "StepPolicy", "Trajectory", "simulate",
]
