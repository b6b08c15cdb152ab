"""Effective Hubbard model of two exchange-coupled quantum-dot hybrid qubits.

All energies are stored as E/h in GHz and all times in ns, so a splitting of
1 GHz corresponds to a phase period of 1 ns.  The 28 basis states and the
block structure of the Hamiltonian are frozen to the order listed in
:data:`BASIS`; every matrix in the package is indexed against it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import SingularParameterError

#: Planck constant in micro-electronvolt nanoseconds.
PLANCK_UEV_NS = 4.135667696

DIM = 28
#: Table indices (0-based) of the four logical basis states |00>, |01>, |10>, |11>.
LOGICAL_INDICES = (0, 1, 3, 4)
LOGICAL_LABELS = ("00", "01", "10", "11")


def ueV_to_GHz(energy_ueV):
    """Convert an energy in micro-electronvolts to E/h in GHz."""
    if np.ndim(energy_ueV):
        energy_ueV = np.asarray(energy_ueV, dtype=float)
    return energy_ueV / PLANCK_UEV_NS


def GHz_to_ueV(energy_GHz):
    """Convert E/h in GHz to an energy in micro-electronvolts."""
    if np.ndim(energy_GHz):
        energy_GHz = np.asarray(energy_GHz, dtype=float)
    return energy_GHz * PLANCK_UEV_NS


@dataclass(frozen=True)
class SystemParams:
    """Static device energies, all E/h in GHz.

    The defaults are the operating point used throughout the simulations:
    both qubits far detuned, ``D1 == D2`` on each qubit (single-qubit sweet
    spot) and a large negative inter-qubit detuning.
    """

    eps_L: float = 90.0
    Est_L: float = 12.0
    D1_L: float = 8.4
    D2_L: float = 8.4
    eps_R: float = 70.0
    Est_R: float = 9.0
    D1_R: float = 6.3
    D2_R: float = 6.3
    eps_LR: float = -80.0
    G: float = 20.0

    def __post_init__(self):
        if not self.Est_L > 0 or not self.Est_R > 0:
            raise ValueError("singlet-triplet splittings must be positive")

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def shifted(self, d_eps_L=0.0, d_eps_R=0.0, d_eps_LR=0.0) -> "SystemParams":
        """Copy with the three detunings displaced (charge-noise channels)."""
        return dataclasses.replace(
            self,
            eps_L=self.eps_L + d_eps_L,
            eps_R=self.eps_R + d_eps_R,
            eps_LR=self.eps_LR + d_eps_LR,
        )

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemParams":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown system parameters: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


DEFAULT_PARAMS = SystemParams()


class BasisState(NamedTuple):
    index: int  # 1-based, as in the published enumeration
    label: str
    charge: tuple[int, int, int, int]
    block: int  # decoupled subspace id (1-7) when the inter-qubit tunnelling is off
    spin_z: tuple[float, float]  # (S_z of dots 1+2, S_z of dots 3+4)

    @property
    def is_logical(self) -> bool:
        return self.index - 1 in LOGICAL_INDICES


_C1212 = (1, 2, 1, 2)
_C1221 = (1, 2, 2, 1)
_C2112 = (2, 1, 1, 2)
_C2121 = (2, 1, 2, 1)
_C1122 = (1, 1, 2, 2)

# (label, charge, block, (SzL, SzR))
_TABLE = [
    ("|0 0⟩", _C1212, 1, (-0.5, -0.5)),
    ("|0 1⟩", _C1212, 1, (-0.5, -0.5)),
    ("|0 ℒ⟩", _C1221, 1, (-0.5, -0.5)),
    ("|1 0⟩", _C1212, 1, (-0.5, -0.5)),
    ("|1 1⟩", _C1212, 1, (-0.5, -0.5)),
    ("|1 ℒ⟩", _C1221, 1, (-0.5, -0.5)),
    ("|ℒ 0⟩", _C2112, 1, (-0.5, -0.5)),
    ("|ℒ 1⟩", _C2112, 1, (-0.5, -0.5)),
    ("|ℒ ℒ⟩", _C2121, 1, (-0.5, -0.5)),
    ("|0 3⟩", _C1212, 2, (-0.5, -0.5)),
    ("|1 3⟩", _C1212, 2, (-0.5, -0.5)),
    ("|ℒ 3⟩", _C2112, 2, (-0.5, -0.5)),
    ("|v₀ 2⟩", _C1212, 3, (0.5, -1.5)),
    ("|v₁ 2⟩", _C1212, 3, (0.5, -1.5)),
    ("|vℒ 2⟩", _C2112, 3, (0.5, -1.5)),
    ("|3 0⟩", _C1212, 4, (-0.5, -0.5)),
    ("|3 1⟩", _C1212, 4, (-0.5, -0.5)),
    ("|3 ℒ⟩", _C1221, 4, (-0.5, -0.5)),
    ("|2 v₀⟩", _C1212, 5, (-1.5, 0.5)),
    ("|2 v₁⟩", _C1212, 5, (-1.5, 0.5)),
    ("|2 vℒ⟩", _C1221, 5, (-1.5, 0.5)),
    ("|3 3⟩", _C1212, 6, (-0.5, -0.5)),
    ("|v₃ 2⟩", _C1212, 6, (0.5, -1.5)),
    ("|2 v₃⟩", _C1212, 6, (-1.5, 0.5)),
    ("|↓↓ S S⟩", _C1122, 7, (-1.0, 0.0)),
    ("|↓↑ S T₋⟩", _C1122, 7, (0.0, -1.0)),
    ("|↑↓ S T₋⟩", _C1122, 7, (0.0, -1.0)),
    ("|↓↓ S T₀⟩", _C1122, 7, (-1.0, 0.0)),
]

BASIS: tuple[BasisState, ...] = tuple(
    BasisState(i + 1, label, charge, block, sz) for i, (label, charge, block, sz) in enumerate(_TABLE)
)


def enumerate_basis() -> tuple[BasisState, ...]:
    """Return the fixed, ordered catalog of the 28 two-qubit basis states."""
    return BASIS


def block_ids() -> np.ndarray:
    """Subspace id of every basis state, as an integer array of length 28."""
    return np.array([s.block for s in BASIS])


def single_qubit_hamiltonian(eps, Est, D1, D2) -> np.ndarray:
    """Three-level hybrid-qubit Hamiltonian in the basis {|·S>, |·T>, |S·>}."""
    return np.array(
        [
            [-eps / 2, 0.0, D1],
            [0.0, -eps / 2 + Est, -D2],
            [D1, -D2, eps / 2],
        ],
        dtype=float,
    )


_S23 = np.sqrt(2.0 / 3.0)
_S3 = 1.0 / np.sqrt(3.0)
_S6 = 1.0 / np.sqrt(6.0)
_S2 = np.sqrt(2.0)


def _coupling_rows(tau_g: float, tau_x: float) -> np.ndarray:
    """24x4 block coupling states 1-24 to the (1,1,2,2) states 25-28."""
    g, x = tau_g, tau_x
    c = np.zeros((24, 4))
    c[0] = [-g, 0, 0, 0]
    c[1] = [0, -_S23 * g, 0, _S3 * g]
    c[3] = [_S6 * x, 0, 0, 0]
    c[4] = [0, -x / 3, 2 * x / 3, -x / (3 * _S2)]
    c[9] = [0, -_S3 * g, 0, -_S23 * g]
    c[10] = [0, -x / (3 * _S2), _S2 * x / 3, x / 3]
    c[12] = [0, 0, g, 0]
    c[13] = [0, -_S23 * x, _S6 * x, 0]
    c[15] = [-_S3 * x, 0, 0, 0]
    c[16] = [0, _S2 * x / 3, _S2 * x / 3, x / 3]
    c[18] = [-x, 0, 0, 0]
    c[19] = [0, 0, 0, -_S3 * x]
    c[21] = [0, x / 3, x / 3, -_S2 * x / 3]
    c[22] = [0, -_S3 * x, -_S3 * x, 0]
    c[23] = [0, 0, 0, _S23 * x]
    return c


_ZC = np.diag([1.0, 1.0, -1.0])  # (n1 - n2) sign pattern on {(1,2), (1,2), (2,1)}


def real_hamiltonian(params: SystemParams, tau_2g1g: float = 0.0, tau_2x1g: float = 0.0) -> np.ndarray:
    """Real symmetric 28x28 Hamiltonian; see :func:`build_hamiltonian`."""
    p = params
    h_l = single_qubit_hamiltonian(p.eps_L, p.Est_L, p.D1_L, p.D2_L)
    h_r = single_qubit_hamiltonian(p.eps_R, p.Est_R, p.D1_R, p.D2_R)
    eye = np.eye(3)
    coul = p.G / 4.0 * _ZC

    h = np.zeros((DIM, DIM))
    # Kronecker sum: each double dot contributes its own energy.
    h[0:9, 0:9] = np.kron(h_l, eye) + np.kron(eye, h_r) + np.kron(coul, _ZC)
    b23 = h_l + (-p.eps_R / 2 + p.Est_R) * eye + coul
    h[9:12, 9:12] = b23
    h[12:15, 12:15] = b23
    b45 = h_r + (-p.eps_L / 2 + p.Est_L) * eye + coul
    h[15:18, 15:18] = b45
    h[18:21, 18:21] = b45
    h[21:24, 21:24] = (-p.eps_L / 2 + p.Est_L - p.eps_R / 2 + p.Est_R + p.G / 4) * eye
    e_1122 = -p.eps_L / 2 - p.eps_R / 2 - p.eps_LR
    h[24:28, 24:28] = np.diag([e_1122, e_1122 + p.Est_R, e_1122 + p.Est_R, e_1122 + p.Est_R])

    c = _coupling_rows(tau_2g1g, tau_2x1g)
    h[0:24, 24:28] = c
    h[24:28, 0:24] = c.T
    return h


def build_hamiltonian(params: SystemParams, tau_2g1g: float = 0.0, tau_2x1g: float = 0.0) -> np.ndarray:
    """Assemble the 28x28 effective Hamiltonian (GHz) for the given couplings.

    Parameters
    ----------
    params : SystemParams
        Device energies.
    tau_2g1g, tau_2x1g : float
        Instantaneous inter-qubit tunnel couplings in GHz.

    Returns
    -------
    ndarray, complex, shape (28, 28)
        Hermitian matrix indexed against :data:`BASIS`.  With both couplings
        zero it is block diagonal in the seven subspaces given by
        :func:`block_ids`.
    """
    return real_hamiltonian(params, tau_2g1g, tau_2x1g).astype(complex)


def effective_zz_coupling(params: SystemParams, tau_2x1g: float) -> float:
    """Leading-order exchange-induced ZZ rate (GHz) from eliminating the (1,1,2,2) states.

    Returns ``16 tau^2 / (9 (4 eps_LR + 4 Est_L + G))``.  This equals the
    spectral combination ``E00 + E11 - E01 - E10`` of the dressed logical
    levels to leading order in the coupling.
    """
    denom = 4 * params.eps_LR + 4 * params.Est_L + params.G
    if denom == 0:
        raise SingularParameterError("4*eps_LR + 4*Est_L + G vanishes")
    return 16.0 * tau_2x1g**2 / (9.0 * denom)


def hamiltonian_to_json(h: np.ndarray) -> list:
    """Row-major nested list of ``[re, im]`` pairs."""
    h = np.asarray(h, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in h]


def hamiltonian_from_json(data: list) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]
