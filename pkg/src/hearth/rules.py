"""Declarative automation rules evaluated against incoming samples.

Three rule kinds: hysteresis (dead-band controller, e.g. the water pump),
threshold (on-above / off-below, e.g. the fan), and motion alarm (latched
output with a timed hold).  Rules are classed vital or comfort: vital
rules act in both operating modes and are copied onto the relay node for
offline fallback; comfort rules act only in auto mode.

Boundary semantics: "below" is strictly <, "above" strictly >; equality
keeps the latch.  Actions are emitted only on latch transitions, so a
rule never repeats an identical write.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .model import MODE_AUTO

logger = logging.getLogger(__name__)

CLASS_VITAL = "vital"
CLASS_COMFORT = "comfort"

ON = "1"
OFF = "0"


@dataclass(frozen=True)
class HysteresisRule:
    rule_id: str
    klass: str  # vital | comfort
    input_pin: int
    output_pin: int
    on_when: str  # below | above
    on_threshold: float
    off_threshold: float

    def __post_init__(self):
        if self.on_when == "below":
            if not self.on_threshold < self.off_threshold:
                raise ValueError(f"{self.rule_id}: empty dead band")
        elif self.on_when == "above":
            if not self.on_threshold > self.off_threshold:
                raise ValueError(f"{self.rule_id}: empty dead band")
        else:
            raise ValueError(f"{self.rule_id}: on_when must be below or above")


@dataclass(frozen=True)
class ThresholdRule:
    rule_id: str
    klass: str
    input_pin: int
    output_pin: int
    on_above: float
    off_below: float

    def __post_init__(self):
        if not self.off_below < self.on_above:
            raise ValueError(f"{self.rule_id}: off_below must sit under on_above")


@dataclass(frozen=True)
class MotionAlarmRule:
    rule_id: str
    klass: str
    input_pin: int
    alarm_pin: int
    hold_s: int
    notify: bool = True

    def __post_init__(self):
        if self.hold_s < 1:
            raise ValueError(f"{self.rule_id}: hold_s must be >= 1")


Rule = HysteresisRule | ThresholdRule | MotionAlarmRule


@dataclass(frozen=True)
class PinWrite:
    """Actuator write produced by a rule; applied with source=auto."""

    rule_id: str
    pin: int
    value: str


@dataclass(frozen=True)
class AlertRaise:
    rule_id: str
    kind: str
    message: str


Action = PinWrite | AlertRaise


@dataclass
class RulesState:
    """Latched outputs and alarm expiries, keyed by rule_id.

    The latch always mirrors the last action a rule emitted; evaluate and
    tick mutate the state they are handed, so the caller owns serialization.
    """

    latch: dict[str, bool] = field(default_factory=dict)
    alarm_expiry_ms: dict[str, int] = field(default_factory=dict)

    def is_on(self, rule_id: str) -> bool:
        return self.latch.get(rule_id, False)

    def copy(self) -> "RulesState":
        return RulesState(dict(self.latch), dict(self.alarm_expiry_ms))


def output_pin(rule: Rule) -> int:
    return rule.alarm_pin if isinstance(rule, MotionAlarmRule) else rule.output_pin


def evaluate(rules: list[Rule], state: RulesState, mode: str,
             pin: int, value: str, t_ms: int) -> list[Action]:
    """Run one incoming sample through the rules, ascending rule_id.

    Comfort rules act only when mode is auto; vital rules always act.
    Unparsable values skip the rule with a diagnostic, never a crash.
    """
    actions: list[Action] = []
    for rule in sorted(rules, key=lambda r: r.rule_id):
        if rule.input_pin != pin:
            continue
        if rule.klass == CLASS_COMFORT and mode != MODE_AUTO:
            continue
        if isinstance(rule, MotionAlarmRule):
            actions.extend(_eval_motion(rule, state, value, t_ms))
        else:
            try:
                v = float(value)
            except ValueError:
                logger.warning("rule %s skipped: unparsable value %r on pin %d",
                               rule.rule_id, value, pin)
                continue
            actions.extend(_eval_band(rule, state, v))
    return actions


def _eval_band(rule: HysteresisRule | ThresholdRule, state: RulesState,
               v: float) -> list[Action]:
    if isinstance(rule, ThresholdRule):
        on_when, on_th, off_th = "above", rule.on_above, rule.off_below
    else:
        on_when, on_th, off_th = rule.on_when, rule.on_threshold, rule.off_threshold
    on = state.is_on(rule.rule_id)
    if on_when == "below":
        want_on = v < on_th
        want_off = v > off_th
    else:
        want_on = v > on_th
        want_off = v < off_th
    if not on and want_on:
        state.latch[rule.rule_id] = True
        return [PinWrite(rule.rule_id, rule.output_pin, ON)]
    if on and want_off:
        state.latch[rule.rule_id] = False
        return [PinWrite(rule.rule_id, rule.output_pin, OFF)]
    return []


def _eval_motion(rule: MotionAlarmRule, state: RulesState, value: str,
                 t_ms: int) -> list[Action]:
    if value not in (ON, OFF):
        logger.warning("rule %s skipped: motion value %r is not 0/1",
                       rule.rule_id, value)
        return []
    if value == OFF or state.is_on(rule.rule_id):
        # Motion clearing does nothing; re-triggers during the hold neither
        # act nor extend it.
        return []
    state.latch[rule.rule_id] = True
    state.alarm_expiry_ms[rule.rule_id] = t_ms + rule.hold_s * 1000
    actions: list[Action] = [PinWrite(rule.rule_id, rule.alarm_pin, ON)]
    if rule.notify:
        actions.append(AlertRaise(rule.rule_id, "motion",
                                  f"motion detected on pin {rule.input_pin}"))
    return actions


def tick(rules: list[Rule], state: RulesState, now_ms: int) -> list[Action]:
    """Expire alarm holds; each expiry emits its OFF write exactly once."""
    actions: list[Action] = []
    for rule in sorted(rules, key=lambda r: r.rule_id):
        if not isinstance(rule, MotionAlarmRule):
            continue
        if not state.is_on(rule.rule_id):
            continue
        expiry = state.alarm_expiry_ms.get(rule.rule_id)
        if expiry is not None and now_ms >= expiry:
            state.latch[rule.rule_id] = False
            del state.alarm_expiry_ms[rule.rule_id]
            actions.append(PinWrite(rule.rule_id, rule.alarm_pin, OFF))
    return actions


def sync_latch(rules: list[Rule], state: RulesState, pin: int, value: str,
               t_ms: int) -> None:
    """Align latches with an externally applied write to a rule's output pin.

    Used by the relay node when the server (authoritative while the link is
    up) asserts an actuator state: the local fallback copy of the rule must
    resume from the same latch, and a motion alarm asserted ON restarts its
    hold locally so an offline expiry still clears it.
    """
    for rule in rules:
        if output_pin(rule) != pin:
            continue
        on = value == ON
        state.latch[rule.rule_id] = on
        if isinstance(rule, MotionAlarmRule):
            if on:
                state.alarm_expiry_ms[rule.rule_id] = t_ms + rule.hold_s * 1000
            else:
                state.alarm_expiry_ms.pop(rule.rule_id, None)


def validate_rules(rules: list[Rule], pin_directions: dict[int, str]) -> None:
    """Config-load checks: unique ids, one rule per actuator, sane pin wiring."""
    seen_ids: set[str] = set()
    seen_outputs: set[int] = set()
    for rule in rules:
        if rule.rule_id in seen_ids:
            raise ValueError(f"duplicate rule_id {rule.rule_id!r}")
        seen_ids.add(rule.rule_id)
        if rule.klass not in (CLASS_VITAL, CLASS_COMFORT):
            raise ValueError(f"{rule.rule_id}: class must be vital or comfort")
        out = output_pin(rule)
        if out in seen_outputs:
            raise ValueError(f"actuator pin {out} owned by more than one rule")
        seen_outputs.add(out)
        if pin_directions.get(rule.input_pin) != "sensor":
            raise ValueError(f"{rule.rule_id}: input pin {rule.input_pin} "
                             "is not a declared sensor pin")
        if pin_directions.get(out) != "actuator":
            raise ValueError(f"{rule.rule_id}: output pin {out} "
                             "is not a declared actuator pin")


def vital_rules(rules: list[Rule]) -> list[Rule]:
    return [r for r in rules if r.klass == CLASS_VITAL]
