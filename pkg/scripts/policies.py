"""
Module: policies
Purpose: Centralized routing-policy registry.
Usage: get_policy(name) returns the PolicyPreset for a config/CLI policy name.
Policies:
    - dsr: baseline, fewest hops, no deadline handling
    - eddsr*: weighted energy/queue/delay cost, deadline-aware, weighting presets
    - emrp: energy + queue route weight
    - alw-<video|ftp|messaging|default>: application link weight presets
Any name may carry the "+rtdsr-admission" modifier.
"""

from dataclasses import dataclass, replace
from typing import Dict, Optional, Tuple

from scripts.qos_policies import ALW_PRESETS

RTDSR_MODIFIER = "rtdsr-admission"

Weights = Tuple[float, float, float]
THIRD = 1.0 / 3.0


@dataclass(frozen=True)
class PolicyPreset:
    name: str
    selector: str
    weights: Weights = (THIRD, THIRD, THIRD)
    alw_weights: Optional[Weights] = None
    deadline_aware: bool = False
    stamps: bool = False
    rtdsr_admission: bool = False
    description: str = ""


# fmt: off
POLICY_REGISTRY: Dict[str, PolicyPreset] = {
    "dsr": PolicyPreset(
        name="dsr", selector="hops",
        description="Baseline DSR: shortest route, RREPs forwarded unmodified, no deadline drops.",
    ),
    "eddsr": PolicyPreset(
        name="eddsr", selector="cost", deadline_aware=True, stamps=True,
        description="ED-DSR with equal weights (plain cost up to a constant factor).",
    ),
    "eddsr-energy": PolicyPreset(
        name="eddsr-energy", selector="cost", weights=(0.6, 0.2, 0.2), deadline_aware=True, stamps=True,
        description="ED-DSR energy aware.",
    ),
    "eddsr-delay": PolicyPreset(
        name="eddsr-delay", selector="cost", weights=(0.2, 0.2, 0.6), deadline_aware=True, stamps=True,
        description="ED-DSR delay aware.",
    ),
    # printed as 0.33 each; stored as exact thirds so the weights sum to one
    "eddsr-default": PolicyPreset(
        name="eddsr-default", selector="cost", deadline_aware=True, stamps=True,
        description="ED-DSR default weighting.",
    ),
    "emrp": PolicyPreset(
        name="emrp", selector="emrp", stamps=True,
        description="EMRP energy + queue route weight.",
    ),
}

for _app, _k in ALW_PRESETS.items():
    POLICY_REGISTRY[f"alw-{_app}"] = PolicyPreset(
        name=f"alw-{_app}", selector="alw", alw_weights=_k, stamps=True,
        description=f"ALW link weight, {_app} application preset.",
    )
# fmt: on


def get_policy(name: str) -> PolicyPreset:
    """
    Safe accessor for policy presets.
    name: e.g. "dsr", "eddsr-energy", "alw-video", "eddsr+rtdsr-admission"
    """
    base, _, modifier = name.strip().partition("+")
    if base not in POLICY_REGISTRY:
        available = list(POLICY_REGISTRY.keys())
        raise ValueError(f"Invalid policy '{base}'. Available: {available}")
    preset = POLICY_REGISTRY[base]
    if modifier:
        if modifier != RTDSR_MODIFIER:
            raise ValueError(f"Invalid policy modifier '{modifier}'. Available: ['{RTDSR_MODIFIER}']")
        preset = with_rtdsr(preset)
    return preset


def with_rtdsr(preset: PolicyPreset) -> PolicyPreset:
    if preset.rtdsr_admission:
        return preset
    return replace(preset, name=f"{preset.name}+{RTDSR_MODIFIER}", rtdsr_admission=True)
