"""Benchmark systems: Robertson kinetics and a scalable heating network.

Each model is exposed both as a plain ``OdeSystem`` factory and as a
``ModelFamily`` bundling the factory with its parameter box, initial
condition rule and default time span, which is what training consumes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.special import expit

from .ode import OdeSystem
from .parameter_space import BoxSpace

ROBERTSON_TSPAN = (0.0, 1e5)
ROBERTSON_Y0 = (1.0, 0.0, 0.0)
HEATING_TSPAN = (0.0, 2e4)
VALVE_SHARPNESS = 8.0


@dataclass(frozen=True)
class RobertsonParams:
    k1: float = 0.04
    k2: float = 1e4
    k3: float = 3e7

    def __post_init__(self):
        if min(self.k1, self.k2, self.k3) <= 0:
            raise ValueError("Robertson rate constants must be positive")


def robertson(params: Optional[RobertsonParams] = None) -> OdeSystem:
    params = params or RobertsonParams()
    k1, k2, k3 = params.k1, params.k2, params.k3

    def rhs(t, y):
        y1, y2, y3 = y
        a = k1 * y1
        b = k2 * y2 * y3
        c = k3 * y2 * y2
        return np.array([-a + b, a - b - c, c])

    def jacobian(t, y):
        _, y2, y3 = y
        return np.array(
            [
                [-k1, k2 * y3, k2 * y2],
                [k1, -k2 * y3 - 2.0 * k3 * y2, -k2 * y2],
                [0.0, 2.0 * k3 * y2, 0.0],
            ]
        )

    return OdeSystem(dim=3, rhs=rhs, jacobian=jacobian, name="robertson")


def robertson_param_space(
    rel_width: float = 0.1, nominal: Optional[RobertsonParams] = None
) -> BoxSpace:
    """Box of rate constants ``nominal * (1 +/- rel_width)``.

    The nominal rates sit at the box midpoint, which is also the first
    Sobol sample.
    """
    if not 0 < rel_width < 1:
        raise ValueError("rel_width must lie in (0, 1)")
    nominal = nominal or RobertsonParams()
    nominal = np.array([nominal.k1, nominal.k2, nominal.k3])
    return BoxSpace(
        tuple(nominal * (1 - rel_width)),
        tuple(nominal * (1 + rel_width)),
        names=("k1", "k2", "k3"),
    )


@dataclass(frozen=True)
class HeatingParams:
    """Lumped heating network: one heater loop feeding ``n_rooms`` rooms.

    Units are SI with temperatures in degrees Celsius.
    """

    n_rooms: int = 10
    t_room_set: float = 20.0
    t_fluid_set: float = 70.0
    c_room: float = 1e5
    c_heater: float = 5e3
    u_loss: float = 50.0
    k_exchange: float = 500.0
    k_heater: float = 5e4
    k_p: float = 0.5
    k_i: float = 5e-3
    t_ambient: float = 10.0

    def __post_init__(self):
        if int(self.n_rooms) < 1:
            raise ValueError("n_rooms must be >= 1")
        positive = (
            "t_room_set", "t_fluid_set", "c_room", "c_heater", "u_loss",
            "k_exchange", "k_heater", "k_p", "k_i", "t_ambient",
        )
        bad = [name for name in positive if not getattr(self, name) > 0]
        if bad:
            raise ValueError(f"heating parameters must be positive: {bad}")

    @property
    def dim(self) -> int:
        return 2 * self.n_rooms + 1

    def initial_state(self) -> np.ndarray:
        n = self.n_rooms
        y0 = np.zeros(2 * n + 1)
        y0[0] = self.t_fluid_set
        y0[1 : n + 1] = self.t_ambient
        return y0


def heating(params: Optional[HeatingParams] = None) -> OdeSystem:
    """State layout: ``(T_fluid, T_room[0..N), integrator[0..N))``.

    Each room valve opens through a smooth sigmoid of a PI law on the room
    temperature error. No analytic Jacobian is attached.
    """
    p = params or HeatingParams()
    n = p.n_rooms
    room = slice(1, n + 1)
    integ = slice(n + 1, 2 * n + 1)

    def rhs(t, y):
        t_fluid = y[0]
        t_room = y[room]
        err = p.t_room_set - t_room
        valve = expit(VALVE_SHARPNESS * (p.k_p * err + y[integ]))
        q = p.k_exchange * valve * (t_fluid - t_room)
        dy = np.empty_like(y)
        dy[0] = (p.k_heater * (p.t_fluid_set - t_fluid) - q.sum()) / p.c_heater
        dy[room] = (q - p.u_loss * (t_room - p.t_ambient)) / p.c_room
        dy[integ] = p.k_i * err
        return dy

    return OdeSystem(dim=p.dim, rhs=rhs, jacobian=None, name="heating")


def heating_param_space() -> BoxSpace:
    return BoxSpace((17.0, 65.0), (23.0, 75.0), names=("t_room_set", "t_fluid_set"))


def heating_time_constants(params: Optional[HeatingParams] = None) -> Tuple[float, float]:
    """(heater loop, room open-loop) time constants in seconds."""
    p = params or HeatingParams()
    return p.c_heater / p.k_heater, p.c_room / p.u_loss


@dataclass(frozen=True)
class ModelFamily:
    """A model indexed by a parameter vector over a box.

    ``make(p)`` returns the ``OdeSystem`` at ``p`` and ``y0(p)`` its initial
    state.
    """

    name: str
    make: Callable[[np.ndarray], OdeSystem]
    y0: Callable[[np.ndarray], np.ndarray]
    space: BoxSpace
    tspan: Tuple[float, float]
    dim: int


def robertson_family(
    base: Optional[RobertsonParams] = None,
    rel_width: float = 0.1,
    tspan=ROBERTSON_TSPAN,
) -> ModelFamily:
    base = base or RobertsonParams()
    space = robertson_param_space(rel_width, base)

    def make(p):
        k1, k2, k3 = (float(v) for v in p)
        return robertson(RobertsonParams(k1, k2, k3))

    return ModelFamily(
        name="robertson",
        make=make,
        y0=lambda p: np.array(ROBERTSON_Y0),
        space=space,
        tspan=tuple(tspan),
        dim=3,
    )


def heating_family(
    base: Optional[HeatingParams] = None, tspan=HEATING_TSPAN
) -> ModelFamily:
    base = base or HeatingParams()

    def params_at(p):
        t_room, t_fluid = (float(v) for v in p)
        return replace(base, t_room_set=t_room, t_fluid_set=t_fluid)

    return ModelFamily(
        name="heating",
        make=lambda p: heating(params_at(p)),
        y0=lambda p: params_at(p).initial_state(),
        space=heating_param_space(),
        tspan=tuple(tspan),
        dim=base.dim,
    )
