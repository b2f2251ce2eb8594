"""State/action containers and the object-centric state split."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StateLayout:
    """Dimensions of the full state and which coordinates belong to the object.

    ``objcentric_indices`` may interleave with the remaining coordinates; the
    complement (``rest_indices``) keeps its natural order.
    """

    total_dim: int
    objcentric_indices: tuple
    control_dim: int
    horizon: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.objcentric_indices)
        object.__setattr__(self, "objcentric_indices", idx)
        if self.total_dim < 1 or self.control_dim < 1 or self.horizon < 1:
            raise InvalidInputError("total_dim, control_dim and horizon must be positive")
        if not 1 <= len(idx) <= self.total_dim:
            raise InvalidInputError("need between 1 and total_dim object-centric indices")
        if list(idx) != sorted(set(idx)):
            raise InvalidInputError("objcentric_indices must be unique and sorted")
        if idx[0] < 0 or idx[-1] >= self.total_dim:
            raise InvalidInputError("objcentric index out of range")

    @property
    def obj_dim(self) -> int:
        return len(self.objcentric_indices)

    @property
    def rest_indices(self) -> tuple:
        obj = set(self.objcentric_indices)
        return tuple(i for i in range(self.total_dim) if i not in obj)

    def embedding(self) -> np.ndarray:
        """Matrix P (total_dim x obj_dim) with P.T @ x == x[objcentric_indices]."""
        P = np.zeros((self.total_dim, self.obj_dim))
        P[list(self.objcentric_indices), np.arange(self.obj_dim)] = 1.0
        return P

    def to_dict(self) -> dict:
        return {
            "total_dim": self.total_dim,
            "objcentric_indices": list(self.objcentric_indices),
            "control_dim": self.control_dim,
            "horizon": self.horizon,
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    """T+1 states (x_0..x_T) and T actions (u_0..u_{T-1})."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        states = _frozen(self.states)
        actions = _frozen(self.actions)
        if states.ndim != 2 or actions.ndim != 2:
            raise InvalidInputError("states and actions must be 2-D arrays")
        if states.shape[0] != actions.shape[0] + 1:
            raise InvalidInputError(
                f"expected one more state than actions, got {states.shape[0]} and {actions.shape[0]}"
            )
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions))):
            raise InvalidInputError("trajectory contains non-finite values")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def check_layout(self, layout: StateLayout):
        if (self.states.shape[1] != layout.total_dim
                or self.actions.shape[1] != layout.control_dim
                or self.horizon != layout.horizon):
            raise InvalidInputError(
                f"trajectory shape {self.states.shape}/{self.actions.shape} does not match layout "
                f"(n={layout.total_dim}, m={layout.control_dim}, T={layout.horizon})"
            )


@dataclass(frozen=True, eq=False)
class ObjTrajectory:
    states: np.ndarray

    def __post_init__(self):
        states = _frozen(self.states)
        if states.ndim != 2:
            raise InvalidInputError("object states must be a 2-D array")
        if not np.all(np.isfinite(states)):
            raise InvalidInputError("object trajectory contains non-finite values")
        object.__setattr__(self, "states", states)


def project_objcentric(traj: Trajectory, layout: StateLayout) -> ObjTrajectory:
    traj.check_layout(layout)
    return ObjTrajectory(traj.states[:, list(layout.objcentric_indices)])


def stack_state(obj_part, rest_part, layout: StateLayout) -> np.ndarray:
    """Inverse of the object/rest split for a single state vector."""
    obj_part = np.asarray(obj_part, dtype=float).reshape(-1)
    rest_part = np.asarray(rest_part, dtype=float).reshape(-1)
    if obj_part.size != layout.obj_dim or rest_part.size != layout.total_dim - layout.obj_dim:
        raise InvalidInputError(
            f"expected {layout.obj_dim} object and {layout.total_dim - layout.obj_dim} rest "
            f"coordinates, got {obj_part.size} and {rest_part.size}"
        )
    x = np.empty(layout.total_dim)
    x[list(layout.objcentric_indices)] = obj_part
    x[list(layout.rest_indices)] = rest_part
    return x
