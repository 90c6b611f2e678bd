"""
Module: scenario
Purpose: Load a flat `key = value` scenario file into a validated Scenario.

Unset keys take the 50-node campus scenario defaults (1500 m x 500 m,
25 SMH + 25 LMH, 50/100 J, 1.4/1.0 W, 250 m, 2 Mb/s, queue 50, 512 B CBR).
Node ids 0..n_smh-1 are SMH, the rest LMH; the default flow runs from node 0
to the last node.

Usage:
    scenario = parse_scenario("scenarios/desk-20n-100s.scn")
    faster = scenario.with_overrides(rate_pps=20)
"""
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Mapping, Optional, Tuple

from scripts.mobility import MobilityProfile
from scripts.netmodel import LinkParams, NodeClass
from scripts.policies import PolicyPreset, get_policy, with_rtdsr
from scripts.qos_policies import QosConfig, WeightSumError
from scripts.routing import ControlSizes, RoutingSettings
from scripts.traffic_metrics import CbrFlow

logger = logging.getLogger(__name__)

SEED_ENV_VAR = "SIM_BASE_SEED"


class ScenarioParseError(ValueError):
    def __init__(self, line_no: int, text: str):
        self.line_no = line_no
        self.text = text
        super().__init__(f"line {line_no}: expected 'key = value', got {text!r}")


class ScenarioValidationError(ValueError):
    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_weights(raw: str) -> Tuple[float, float, float]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated weights, got {raw!r}")
    return tuple(float(p) for p in parts)


def _parse_flows(raw: str) -> Tuple[Tuple[int, int], ...]:
    pairs = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        src, sep, dst = item.partition(":")
        if not sep:
            raise ValueError(f"expected src:dst, got {item!r}")
        pairs.append((int(src), int(dst)))
    if not pairs:
        raise ValueError("flow list is empty")
    return tuple(pairs)


# key -> (converter, default); None defaults are derived from other keys
DEFAULTS: Dict[str, Tuple[Callable[[str], object], Optional[str]]] = {
    "area_width": (float, "1500"),
    "area_height": (float, "500"),
    "n_smh": (int, "25"),
    "n_lmh": (int, "25"),
    "energy_smh": (float, "50"),
    "energy_lmh": (float, "100"),
    "p_tx": (float, "1.4"),
    "p_rx": (float, "1.0"),
    "radio_range": (float, "250"),
    "bitrate": (float, "2000000"),
    "v_min": (float, "0.1"),
    "v_max_smh": (float, "2"),
    "v_max_lmh": (float, "20"),
    "pause_smh": (float, "10"),
    "pause_lmh": (float, "0"),
    "queue_capacity": (int, "50"),
    "packet_size": (int, "512"),
    "t_local": (float, "0.005"),
    "policy": (str, "eddsr"),
    "rtdsr_admission": (_parse_bool, "false"),
    "alpha": (float, "1.0"),
    "beta": (float, "1.0"),
    "gamma": (float, "1.0"),
    "weights": (_parse_weights, None),
    "rate_pps": (float, "10"),
    "deadline_s": (float, "15"),
    "flow_start": (float, "0"),
    "flow_stop": (float, None),
    "flows": (_parse_flows, None),
    "duration": (float, "1000"),
    "replications": (int, "5"),
    "base_seed": (int, "1"),
    "rrep_window": (float, "0.5"),
    "cache_timeout": (float, "5"),
    "send_buffer_capacity": (int, "64"),
    "send_buffer_timeout": (float, "30"),
    "retry_backoff_max": (float, "10"),
    "rreq_jitter": (float, "0.01"),
    "rreq_base_bytes": (int, "32"),
    "rreq_hop_bytes": (int, "4"),
    "rrep_base_bytes": (int, "44"),
    "rrep_stamp_bytes": (int, "16"),
    "rerr_bytes": (int, "24"),
}

# sweep names accepted on the command line
SWEEP_ALIASES = {"rate": "rate_pps", "deadline": "deadline_s", "seed": "base_seed"}


@dataclass(frozen=True)
class Scenario:
    name: str
    area: Tuple[float, float]
    n_smh: int
    n_lmh: int
    energy_smh: float
    energy_lmh: float
    p_tx: float
    p_rx: float
    link: LinkParams
    smh_profile: MobilityProfile
    lmh_profile: MobilityProfile
    queue_capacity: int
    packet_size: int
    policy: PolicyPreset
    qos: QosConfig
    flows: Tuple[CbrFlow, ...]
    duration: float
    replications: int
    base_seed: int
    routing: RoutingSettings
    rate_pps: float
    deadline_s: float
    # the raw key/value text the scenario was built from
    values: Mapping[str, str] = field(default_factory=dict, compare=False)

    @property
    def n_nodes(self) -> int:
        return self.n_smh + self.n_lmh

    def node_class(self, node_id: int) -> NodeClass:
        return NodeClass.SMH if node_id < self.n_smh else NodeClass.LMH

    def initial_energy(self, node_id: int) -> float:
        return self.energy_smh if node_id < self.n_smh else self.energy_lmh

    def profile(self, node_id: int) -> MobilityProfile:
        return self.smh_profile if node_id < self.n_smh else self.lmh_profile

    def with_overrides(self, **overrides) -> "Scenario":
        """Rebuild with some keys replaced; `nodes=N` keeps the SMH fraction."""
        values = dict(self.values)
        nodes = overrides.pop("nodes", None)
        if nodes is not None:
            n_smh, n_lmh = split_nodes(int(nodes), self.n_smh, self.n_lmh)
            values["n_smh"], values["n_lmh"] = str(n_smh), str(n_lmh)
        for key, value in overrides.items():
            values[SWEEP_ALIASES.get(key, key)] = str(value)
        return build_scenario(values, self.name)

    def with_policy(self, policy_name: str) -> "Scenario":
        values = dict(self.values)
        if policy_name != self.policy.name:
            # weights set in the file belong to the file's policy
            values.pop("weights", None)
        values["policy"] = policy_name
        return build_scenario(values, self.name)

    def to_config(self) -> dict:
        return {
            "scenario": self.name,
            "policy": self.policy.name,
            "nodes": self.n_nodes,
            "n_smh": self.n_smh,
            "n_lmh": self.n_lmh,
            "duration": self.duration,
            "replications": self.replications,
            "base_seed": self.base_seed,
            "rate_pps": self.rate_pps,
            "deadline_s": self.deadline_s,
            "weights": list(self.qos.weights),
            "flows": [[f.src, f.dst] for f in self.flows],
            "values": dict(self.values),
        }


def split_nodes(total: int, n_smh: int, n_lmh: int) -> Tuple[int, int]:
    """Split `total` nodes keeping the SMH share, with at least one node per class."""
    if total < 2:
        raise ScenarioValidationError("nodes", f"need at least 2 nodes, got {total}")
    fraction = n_smh / (n_smh + n_lmh)
    smh = min(total - 1, max(1, round(total * fraction)))
    return smh, total - smh


def read_values(path) -> Dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    values: Dict[str, str] = {}
    with path.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            key, sep, value = text.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or not key or not value:
                raise ScenarioParseError(line_no, line.rstrip("\n"))
            if key not in DEFAULTS:
                raise ScenarioValidationError(key, "unknown key")
            if key in values:
                raise ScenarioValidationError(key, f"set twice (line {line_no})")
            values[key] = value
    return values


def parse_scenario(path, env: Optional[Mapping[str, str]] = None) -> Scenario:
    env = os.environ if env is None else env
    values = read_values(path)
    if env.get(SEED_ENV_VAR):
        logger.info(f"{SEED_ENV_VAR}={env[SEED_ENV_VAR]} overrides base_seed")
        values["base_seed"] = env[SEED_ENV_VAR]
    scenario = build_scenario(values, Path(path).stem)
    logger.info(
        f"Loaded scenario {scenario.name}: {scenario.n_nodes} nodes, policy {scenario.policy.name}, "
        f"{len(scenario.flows)} flow(s), {scenario.duration:g} s"
    )
    return scenario


def _convert(values: Mapping[str, str]) -> Dict[str, object]:
    typed: Dict[str, object] = {}
    for key, (convert, default) in DEFAULTS.items():
        raw = values.get(key, default)
        if raw is None:
            typed[key] = None
            continue
        try:
            typed[key] = convert(raw)
        except ValueError as e:
            raise ScenarioValidationError(key, str(e)) from e
    return typed


def _require(cond: bool, key: str, reason: str) -> None:
    if not cond:
        raise ScenarioValidationError(key, reason)


def build_scenario(values: Mapping[str, str], name: str = "scenario") -> Scenario:
    unknown = sorted(set(values) - set(DEFAULTS))
    if unknown:
        raise ScenarioValidationError(unknown[0], "unknown key")
    v = _convert(values)

    for key in ("n_smh", "n_lmh", "queue_capacity", "packet_size", "replications", "send_buffer_capacity",
                "rreq_base_bytes", "rrep_base_bytes", "rerr_bytes"):
        _require(v[key] > 0, key, f"must be > 0, got {v[key]}")
    for key in ("rreq_hop_bytes", "rrep_stamp_bytes", "base_seed"):
        _require(v[key] >= 0, key, f"must be >= 0, got {v[key]}")
    for key in ("area_width", "area_height", "energy_smh", "energy_lmh", "radio_range", "bitrate",
                "v_min", "v_max_smh", "v_max_lmh", "duration", "rate_pps", "deadline_s",
                "rrep_window", "cache_timeout", "send_buffer_timeout", "retry_backoff_max"):
        _require(v[key] > 0, key, f"must be > 0, got {v[key]}")
    for key in ("p_tx", "p_rx", "pause_smh", "pause_lmh", "t_local", "flow_start",
                "alpha", "beta", "gamma", "rreq_jitter"):
        _require(v[key] >= 0, key, f"must be >= 0, got {v[key]}")

    duration = v["duration"]
    flow_stop = duration if v["flow_stop"] is None else v["flow_stop"]
    _require(v["flow_start"] < flow_stop <= duration, "flow_stop",
             f"need flow_start < flow_stop <= duration, got {v['flow_start']} / {flow_stop} / {duration}")

    try:
        policy = get_policy(v["policy"])
    except ValueError as e:
        raise ScenarioValidationError("policy", str(e)) from e
    if v["rtdsr_admission"]:
        policy = with_rtdsr(policy)

    weights = policy.weights if v["weights"] is None else v["weights"]
    link = LinkParams(range_m=v["radio_range"], bitrate=v["bitrate"])
    qos = QosConfig(
        alpha=v["alpha"],
        beta=v["beta"],
        gamma=v["gamma"],
        w_energy=weights[0],
        w_queue=weights[1],
        w_delay=weights[2],
        t_local=v["t_local"],
        t_trans=link.t_tx(v["packet_size"]),
        preset=policy.name,
    )
    try:
        qos.validate()
    except (WeightSumError, ValueError) as e:
        raise ScenarioValidationError("weights", str(e)) from e

    n_nodes = v["n_smh"] + v["n_lmh"]
    raw_pairs = v["flows"] if v["flows"] is not None else ((0, -1),)
    pairs = []
    for src, dst in raw_pairs:
        _require(-n_nodes <= src < n_nodes and -n_nodes <= dst < n_nodes, "flows",
                 f"flow {src}:{dst} outside node ids {-n_nodes}..{n_nodes - 1}")
        # -1 is the last node
        src, dst = src % n_nodes, dst % n_nodes
        _require(src != dst, "flows", f"flow {src}:{dst} has the same source and destination")
        pairs.append((src, dst))
    flows = tuple(
        CbrFlow(
            src=src,
            dst=dst,
            rate=v["rate_pps"],
            deadline=v["deadline_s"],
            start=v["flow_start"],
            stop=flow_stop,
            packet_size=v["packet_size"],
            flow_id=i,
        )
        for i, (src, dst) in enumerate(pairs)
    )

    routing = RoutingSettings(
        rrep_window=v["rrep_window"],
        cache_timeout=v["cache_timeout"],
        send_buffer_capacity=v["send_buffer_capacity"],
        send_buffer_timeout=v["send_buffer_timeout"],
        retry_backoff_max=v["retry_backoff_max"],
        rreq_jitter=v["rreq_jitter"],
        sizes=ControlSizes(
            rreq_base=v["rreq_base_bytes"],
            rreq_hop=v["rreq_hop_bytes"],
            rrep_base=v["rrep_base_bytes"],
            rrep_stamp=v["rrep_stamp_bytes"],
            rerr=v["rerr_bytes"],
        ),
    )
    try:
        smh_profile = MobilityProfile(v_max=v["v_max_smh"], v_min=v["v_min"], pause=v["pause_smh"])
        lmh_profile = MobilityProfile(v_max=v["v_max_lmh"], v_min=v["v_min"], pause=v["pause_lmh"])
    except ValueError as e:
        raise ScenarioValidationError("mobility", str(e)) from e

    return Scenario(
        name=name,
        area=(v["area_width"], v["area_height"]),
        n_smh=v["n_smh"],
        n_lmh=v["n_lmh"],
        energy_smh=v["energy_smh"],
        energy_lmh=v["energy_lmh"],
        p_tx=v["p_tx"],
        p_rx=v["p_rx"],
        link=link,
        smh_profile=smh_profile,
        lmh_profile=lmh_profile,
        queue_capacity=v["queue_capacity"],
        packet_size=v["packet_size"],
        policy=policy,
        qos=qos,
        flows=flows,
        duration=duration,
        replications=v["replications"],
        base_seed=v["base_seed"],
        routing=routing,
        rate_pps=v["rate_pps"],
        deadline_s=v["deadline_s"],
        values=dict(values),
    )
