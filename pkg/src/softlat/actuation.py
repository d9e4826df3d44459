"""Periodic rest-length actuation.

A spring's force law targets ``factor * rest_length`` where the factor is a
periodic function of simulation time. The built-in waveform is a sine wave
``1 + amplitude * sin(frequency * t)`` on the wrapped local time
``t = (T - offset) mod period``; offsets staggered along a body's x axis
turn it into a traveling expansion wave, which is what makes the worm
bodies crawl.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable

from .errors import InvalidValueError
from .store import ObjectStore

if TYPE_CHECKING:
    from .builder import BodyHandle

#: Defaults for the crawling-worm configuration.
WORM_PERIOD = 1.0        # s
WORM_FREQUENCY = 20.0    # rad/s
WORM_AMPLITUDE = 0.2


@dataclass(frozen=True)
class ActuationParams:
    """Rest-length modulation parameters for one spring.

    ``waveform`` is either ``"sine"`` or a callable mapping local time in
    ``[0, period)`` to a factor; callables run inside the step loop and must
    be cheap, pure, and reentrant. With ``quiescent_before_offset`` the
    factor is held at 1 until sim time first reaches ``offset`` instead of
    wrapping the phase.
    """

    amplitude: float
    frequency: float
    offset: float = 0.0
    period: float = 1.0
    waveform: "str | Callable[[float], float]" = "sine"
    quiescent_before_offset: bool = False

    def __post_init__(self):
        if self.period <= 0:
            raise InvalidValueError(f"period must be positive, got {self.period}")
        if abs(self.amplitude) >= 1:
            raise InvalidValueError(
                f"|amplitude| must be < 1 to keep rest lengths positive, "
                f"got {self.amplitude}")
        if not callable(self.waveform) and self.waveform != "sine":
            raise InvalidValueError(f"unknown waveform {self.waveform!r}")


def local_time(params: ActuationParams, sim_time: float) -> float:
    """Wrapped local time ``(T - offset) mod period``, in ``[0, period)``."""
    return (sim_time - params.offset) % params.period


def actuation_factor(params: ActuationParams, sim_time: float) -> float:
    """Rest-length factor at simulation time ``sim_time``."""
    if params.quiescent_before_offset and sim_time < params.offset:
        return 1.0
    t = local_time(params, sim_time)
    if callable(params.waveform):
        return float(params.waveform(t))
    return 1.0 + params.amplitude * math.sin(params.frequency * t)


def assign_wave_offsets(body: "BodyHandle", store: ObjectStore,
                        template: ActuationParams) -> None:
    """Install ``template`` on all body springs, staggering offsets by
    initial x position.

    Each spring's offset becomes the smaller of its endpoints' build-time
    x coordinates minus the body's minimum build-time x coordinate, so the
    expansion wave starts at the body's trailing x face and sweeps in +x.
    Offsets are translation-invariant: moving the whole body does not
    change them.
    """
    if len(body.mass_handles) == 0 or len(body.spring_handles) == 0:
        raise InvalidValueError("body has no springs to actuate")
    x0 = body.initial_positions[:, 0]
    x_min = float(x0.min())
    slot_to_row = {int(s): i for i, s in enumerate(body.mass_handles.slots)}
    for h in body.spring_handles:
        if not store.spring_is_live(h):
            continue
        spring = store.get_spring(h)
        xa = x0[slot_to_row[spring.m1.slot]]
        xb = x0[slot_to_row[spring.m2.slot]]
        params = ActuationParams(
            amplitude=template.amplitude, frequency=template.frequency,
            offset=float(min(xa, xb)) - x_min, period=template.period,
            waveform=template.waveform,
            quiescent_before_offset=template.quiescent_before_offset)
        store.set_spring_field(h, "actuation", params)


def configure_worm(body: "BodyHandle", store: ObjectStore,
                   period: float = WORM_PERIOD,
                   frequency: float = WORM_FREQUENCY,
                   amplitude: float = WORM_AMPLITUDE,
                   quiescent_before_offset: bool = False) -> None:
    """Apply the crawling-worm actuation pattern to a body."""
    template = ActuationParams(
        amplitude=amplitude, frequency=frequency, period=period,
        quiescent_before_offset=quiescent_before_offset)
    assign_wave_offsets(body, store, template)
