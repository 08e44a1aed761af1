"""Central finite-difference check of tape gradients, run in float64.

The numeric derivative uses the five-point stencil
``(f(x-2h) - 8 f(x-h) + 8 f(x+h) - f(x+2h)) / 12h``.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import numpy as np

from core.tensor import Tape, Tensor, backward, precision

logger = logging.getLogger(__name__)

# |analytic - numeric| / max(|analytic|, |numeric|, RELATIVE_FLOOR)
RELATIVE_FLOOR = 1e-8
# coordinates within this absolute error pass regardless of their relative error
ABSOLUTE_TOLERANCE = 1e-8
# five-point central stencil, truncation error O(h^4)
STENCIL = {-2: 1.0, -1: -8.0, 1: 8.0, 2: -1.0}


@dataclass
class GradCheckReport:
    """Relative and absolute errors per checked coordinate.

    A coordinate passes when its relative error is within the tolerance or its
    absolute error is within ``atol``.
    """

    max_relative_error: float = 0.0
    max_absolute_error: float = 0.0
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None
    checked: int = 0
    errors: Dict[str, float] = field(default_factory=dict)
    coordinates: List[Tuple[str, Tuple[int, ...], float, float]] = field(default_factory=list)

    def failures(self, tolerance: float = 1e-4, atol: float = ABSOLUTE_TOLERANCE):
        """Coordinates ``(name, index, relative, absolute)`` outside both bounds."""
        return [c for c in self.coordinates if c[2] > tolerance and c[3] > atol]

    def passed(self, tolerance: float = 1e-4, atol: float = ABSOLUTE_TOLERANCE) -> bool:
        return self.checked > 0 and not self.failures(tolerance, atol)


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-3,
    max_coords: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare ``backward`` against central differences for every parameter.

    ``loss_fn`` must rebuild its inputs on each call so they pick up the
    float64 precision context. Parameter values are restored afterwards.

    Args:
        loss_fn: Zero-argument callable returning a scalar loss
        params: Named parameters to differentiate
        h: Finite-difference step
        max_coords: Check at most this many random coordinates per parameter
        rng: Generator used to pick coordinates

    Returns:
        GradCheckReport with the per-parameter worst relative error
    """
    rng = rng or np.random.default_rng(0)
    originals = {name: param.values for name, param in params.items()}
    report = GradCheckReport()
    try:
        with precision(np.float64):
            for param in params.values():
                param.values = param.values.astype(np.float64)
            with Tape() as tape:
                tape.watch(*params.values())
                grads = backward(tape, loss_fn())
                analytic = {name: grads[param].values.copy() for name, param in params.items()}

            for name, param in params.items():
                coords: List[Tuple[int, ...]] = list(np.ndindex(param.shape))
                if max_coords is not None and len(coords) > max_coords:
                    picks = rng.choice(len(coords), size=max_coords, replace=False)
                    coords = [coords[i] for i in sorted(picks)]
                worst = 0.0
                for index in coords:
                    original = param.values[index]
                    samples = {}
                    for step in STENCIL:
                        param.values[index] = original + step * h
                        samples[step] = loss_fn().item()
                    param.values[index] = original
                    numeric = sum(STENCIL[step] * samples[step] for step in STENCIL) / (12 * h)
                    exact = float(analytic[name][index])
                    absolute = abs(exact - numeric)
                    error = absolute / max(abs(exact), abs(numeric), RELATIVE_FLOOR)
                    coord = tuple(int(i) for i in index)
                    report.coordinates.append((name, coord, error, absolute))
                    report.max_absolute_error = max(report.max_absolute_error, absolute)
                    worst = max(worst, error)
                    if error >= report.max_relative_error:
                        report.max_relative_error = error
                        report.worst = (name, coord)
                    report.checked += 1
                report.errors[name] = worst
    finally:
        for name, param in params.items():
            param.values = originals[name]

    logger.debug(f"gradient check: {report.checked} coordinates, worst relative {report.max_relative_error:.2e}, "
                 f"worst absolute {report.max_absolute_error:.2e}")
    return report
