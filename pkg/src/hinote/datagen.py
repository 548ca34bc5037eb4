"""Synthetic datasets: band-limited Gaussian random fields and 2D decaying
turbulence from a pseudo-spectral vorticity solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .fields import GridField
from .sfb import write_sfb
from .spectral import wavenumbers

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


@dataclass
class GRFSpec:
    n: int = 64
    slope: float = 3.0  # power per mode ~ |k|^-slope
    k_min: float = 1.0
    k_max: float = 12.0
    seed: int = 0

    def validate(self) -> None:
        if self.n < 4:
            raise ValueError(f"GRF extent must be >= 4, got {self.n}")
        if self.k_max > self.n / 2 - 1:
            raise ValueError(
                f"k_max={self.k_max} reaches the Nyquist band of an n={self.n} grid "
                f"(must be <= {self.n / 2 - 1})"
            )
        if self.slope < 0 or self.k_min < 0 or self.k_min > self.k_max:
            raise ValueError(f"invalid GRF spectrum parameters {asdict(self)}")


def generate_grf(spec: GRFSpec) -> GridField:
    """Random-phase field with amplitude |k|^(-slope/2) inside [k_min, k_max]."""
    spec.validate()
    n = spec.n
    rng = np.random.default_rng(spec.seed)
    # phases of a real white-noise field are Hermitian symmetric by construction
    noise = np.fft.fft2(rng.standard_normal((n, n)))
    mag = np.abs(noise)
    phase = np.divide(noise, mag, out=np.zeros_like(noise), where=mag > 0)
    k = wavenumbers(n)
    kr = np.hypot(k[:, None], k[None, :])
    band = (kr >= spec.k_min) & (kr <= spec.k_max) & (kr > 0)
    amp = np.zeros_like(kr)
    amp[band] = kr[band] ** (-spec.slope / 2)
    field = np.fft.ifft2(phase * amp).real
    field -= field.mean()
    std = field.std()
    if std > 0:
        field /= std
    return GridField(field[None])


# -- turbulence ---------------------------------------------------------------

class CFLError(RuntimeError):
    def __init__(self, step: int, value: float):
        self.step = step
        super().__init__(f"CFL bound violated at step {step}: dt*n*u_max = {value:.4g} >= 0.5")


@dataclass
class TurbSpec:
    n: int = 64
    viscosity: float = 1e-3
    dt: float = 2e-3
    steps: int = 2000
    seed: int = 0
    k_peak: float = 4.0
    rms_velocity: float = 1.0

    def validate(self) -> None:
        if self.n < 8 or self.n > 256 or self.n & (self.n - 1):
            raise ValueError(f"turbulence grid must be a power of two in [8, 256], got {self.n}")
        if self.viscosity < 0 or self.dt <= 0 or self.steps < 0:
            raise ValueError(f"invalid turbulence parameters {asdict(self)}")


class VorticitySolver:
    """Periodic [0, 2pi]^2 vorticity-streamfunction solver.

    Nonlinear term in flux form with 2/3-rule dealiasing; viscosity handled by
    an integrating factor inside Kutta's third-order Runge-Kutta scheme.
    """

    def __init__(self, n: int, viscosity: float):
        self.n = n
        self.nu = viscosity
        k = wavenumbers(n)
        self.kx = k[None, :]
        self.ky = k[:, None]
        self.k2 = self.kx**2 + self.ky**2
        self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        cut = n / 3.0
        self.dealias = ((np.abs(self.kx) < cut) & (np.abs(self.ky) < cut)).astype(float)

    def velocity(self, w_hat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        psi_hat = w_hat * self.inv_k2  # lap(psi) = -w
        u = np.fft.ifft2(1j * self.ky * psi_hat).real
        v = np.fft.ifft2(-1j * self.kx * psi_hat).real
        return u, v

    def divergence_hat(self, w_hat: np.ndarray) -> np.ndarray:
        psi_hat = w_hat * self.inv_k2
        return 1j * self.kx * (1j * self.ky * psi_hat) + 1j * self.ky * (-1j * self.kx * psi_hat)

    def nonlinear(self, w_hat: np.ndarray) -> np.ndarray:
        u, v = self.velocity(w_hat)
        w = np.fft.ifft2(w_hat).real
        flux = 1j * self.kx * np.fft.fft2(u * w) + 1j * self.ky * np.fft.fft2(v * w)
        return -self.dealias * flux

    def step(self, w_hat: np.ndarray, dt: float) -> np.ndarray:
        e_half = np.exp(-self.nu * self.k2 * dt / 2)
        e_full = e_half * e_half
        n0 = self.nonlinear(w_hat)
        w2 = e_half * (w_hat + 0.5 * dt * n0)
        n2 = self.nonlinear(w2)
        w3 = e_full * (w_hat - dt * n0) + 2 * dt * e_half * n2
        n3 = self.nonlinear(w3)
        return e_full * w_hat + dt / 6 * (e_full * n0 + 4 * e_half * n2 + n3)

    def initial_condition(self, k_peak: float, rms_velocity: float, rng) -> np.ndarray:
        """Random-phase vorticity with a Gaussian energy ring at ``k_peak``."""
        n = self.n
        noise = np.fft.fft2(rng.standard_normal((n, n)))
        kr = np.sqrt(self.k2)
        ring = np.exp(-0.5 * ((kr - k_peak) / max(k_peak / 2, 1.0)) ** 2)
        w_hat = noise * ring * self.dealias
        w_hat[0, 0] = 0
        u, v = self.velocity(w_hat)
        rms = np.sqrt(np.mean(u**2 + v**2))
        return w_hat * (rms_velocity / rms) if rms > 0 else w_hat


def energy(solver: VorticitySolver, w_hat: np.ndarray) -> float:
    u, v = solver.velocity(w_hat)
    return 0.5 * float(np.mean(u**2 + v**2))


def enstrophy(w_hat: np.ndarray) -> float:
    w = np.fft.ifft2(w_hat).real
    return 0.5 * float(np.mean(w**2))


def simulate_turbulence(spec: TurbSpec, snapshots: int | None = None,
                        initial: np.ndarray | None = None) -> list[GridField]:
    """Run the solver and return ``snapshots`` evenly strided vorticity fields.

    With ``snapshots=None`` every step (including the initial state) is returned.
    """
    spec.validate()
    solver = VorticitySolver(spec.n, spec.viscosity)
    if initial is not None:
        w_hat = np.fft.fft2(np.asarray(initial, dtype=float))
    else:
        w_hat = solver.initial_condition(spec.k_peak, spec.rms_velocity,
                                         np.random.default_rng(spec.seed))
    if snapshots is None:
        keep = set(range(spec.steps + 1))
    else:
        if snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        stride = max(spec.steps // snapshots, 1)
        keep = {stride * (i + 1) for i in range(snapshots)}
    out: list[GridField] = []
    for step in range(spec.steps + 1):
        if step in keep:
            w = np.fft.ifft2(w_hat).real
            out.append(GridField(w[None], (0.0, 2 * np.pi, 0.0, 2 * np.pi)))
        if step == spec.steps:
            break
        u, v = solver.velocity(w_hat)
        cfl = spec.dt * spec.n * float(np.sqrt(np.max(u**2 + v**2)))
        if cfl >= 0.5:
            raise CFLError(step, cfl)
        w_hat = solver.step(w_hat, spec.dt)
    return out


# -- datasets -----------------------------------------------------------------

def split_seed(base: int, split: str, index: int = 0) -> int:
    ss = np.random.SeedSequence([base, SPLITS.index(split), index])
    return int(ss.generate_state(1)[0])


def build_dataset(source: str, counts: dict, out_dir, grf: GRFSpec | None = None,
                  turb: TurbSpec | None = None, seed: int = 0) -> dict:
    """Write ``train.sfb``, ``valid.sfb`` and ``test.sfb`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"source": source, "files": {}}
    for split in SPLITS:
        count = int(counts.get(split, 0))
        if count <= 0:
            continue
        if source == "grf":
            base = grf or GRFSpec()
            fields = []
            for i in range(count):
                spec = GRFSpec(**{**asdict(base), "seed": split_seed(seed, split, i)})
                fields.append(generate_grf(spec))
        elif source == "turb":
            base = turb or TurbSpec()
            spec = TurbSpec(**{**asdict(base), "seed": split_seed(seed, split)})
            fields = simulate_turbulence(spec, snapshots=count)
            # normalise each split by its own statistics
            stack = np.stack([f.values for f in fields])
            std = stack.std() or 1.0
            fields = [GridField(f.values / std, f.box) for f in fields]
        else:
            raise ValueError(f"unknown data source {source!r}")
        path = out / f"{split}.sfb"
        write_sfb(path, fields)
        summary["files"][split] = {"path": str(path), "records": len(fields)}
        log.info("wrote %d %s records to %s", len(fields), split, path)
    return summary
