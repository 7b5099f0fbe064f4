"""Default numerical tolerances.

Every value here is echoed in report envelopes and can be overridden from
the command line with a flag of the same name (``tau_crit`` -> ``--tau-crit``).

=============  ==========  ====================================================
name           default     meaning
=============  ==========  ====================================================
spd_floor      1e-10       smallest admissible metric eigenvalue
tau_lin        1e-12       linear-solve residual target
tau_gauss      1e-8        Fermi gauge check (|g_it|, |g_tt - 1|, g(0,0) = I)
tau_crit       1e-9        gradient norm accepted as a critical point
eps_nd         1e-6        relative nondegeneracy threshold on |eigenvalue|
r_dedup_frac   0.05        dedup radius as a fraction of the chart radius
tau_const      1e-8        relative H range below which H is constant
tau_sym        1e-9        Hessian symmetry tolerance
tau_onto       1e-8        relative singular value threshold for surjectivity
grid_res       33          C^m norm grid points per axis
seeds_per_axis 9           Newton seeds per chart axis
max_iter       60          Newton iteration cap
=============  ==========  ====================================================
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    spd_floor: float = 1e-10
    tau_lin: float = 1e-12
    tau_gauss: float = 1e-8
    tau_crit: float = 1e-9
    eps_nd: float = 1e-6
    r_dedup_frac: float = 0.05
    tau_const: float = 1e-8
    tau_sym: float = 1e-9
    tau_onto: float = 1e-8
    grid_res: int = 33
    seeds_per_axis: int = 9
    max_iter: int = 60

    def as_dict(self) -> dict:
        return asdict(self)

    def updated(self, **changes) -> "Tolerances":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


DEFAULTS = Tolerances()
SPD_FLOOR = DEFAULTS.spd_floor
TAU_LIN = DEFAULTS.tau_lin
TAU_GAUSS = DEFAULTS.tau_gauss
