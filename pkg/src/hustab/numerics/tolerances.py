from dataclasses import dataclass, fields


@dataclass(frozen=True)
class Tolerances:
    """Error targets for the ODE, quadrature and finite-difference kernels."""

    ode_rel: float = 1e-10
    ode_abs: float = 1e-12
    quad_tol: float = 1e-10
    fd_step_scale: float = 1e-5

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not value > 0:
                raise ValueError(f"tolerance {f.name} must be strictly positive, got {value!r}")
        for name in ("ode_rel", "ode_abs", "quad_tol"):
            if getattr(self, name) > 1e-2:
                raise ValueError(f"tolerance {name}={getattr(self, name)!r} exceeds 1e-2")

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}
