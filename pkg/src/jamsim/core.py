"""Configuration, derived protocol parameters, and energy ledgers.

Everything here is a pure function of a validated :class:`SimConfig`.
Logarithms: ``ln`` is the natural log, ``lg`` is base 2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping

ADVERSARY_MODES = ("adaptive", "reactive")
BUDGET_POLICIES = ("record-only", "enforce")
STRATEGIES = ("null", "phase_blocker", "request_spoofer", "reactive_jammer", "scripted")
PHASE_NAMES = ("inform", "propagation", "request")
VICTIM_RULES = ("all-nodes", "spare-subset")

# delta' in the reactive listen override
REACTIVE_DELTA = 0.5


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class ScheduleError(RuntimeError):
    """A round would exceed the configured slot ceiling."""


class BudgetExhausted(RuntimeError):
    """Raised by :func:`ledger_charge` under the enforce policy."""


@dataclass(frozen=True)
class AdversarySettings:
    strategy: str = "null"
    gamma: float | None = None  # None -> beta + 0.01 ("just above beta")
    targets: tuple[str, ...] = PHASE_NAMES
    victim_rule: str = "all-nodes"
    spare_fraction: float | None = None  # None -> 1 - 32 eps'
    p_commit: float = 1.0
    stop_round: int | None = None
    script: str | None = None


@dataclass(frozen=True)
class SimConfig:
    n: int
    f: Fraction
    k: int
    epsilon_prime: float
    c: float
    C: float
    beta: float
    seed: int
    i_start: int = 1
    max_rounds: int = 40
    adversary_mode: str = "adaptive"
    decoys_enabled: bool = False
    approx_n_exponent: float | None = None
    budget_policy_correct: str = "record-only"
    termination_gate: int | None = None
    max_total_slots: int = 2**27
    adversary: AdversarySettings = field(default_factory=AdversarySettings)

    @property
    def t(self) -> int:
        """Number of Byzantine nodes, floor(f * n)."""
        return math.floor(self.f * self.n)

    @property
    def a(self) -> Fraction:
        return Fraction(1, self.k)

    @property
    def b(self) -> int:
        return 1

    @property
    def ln_n(self) -> float:
        return math.log(self.n)

    @property
    def gate(self) -> int:
        """First round in which threshold termination is allowed."""
        if self.termination_gate is not None:
            return self.termination_gate
        return default_termination_gate(self.n)

    @property
    def gamma(self) -> float:
        g = self.adversary.gamma
        return self.beta + 0.01 if g is None else g

    @property
    def spare_fraction(self) -> float:
        s = self.adversary.spare_fraction
        return max(0.0, 1.0 - 32 * self.epsilon_prime) if s is None else s

    def with_overrides(self, **changes: Any) -> "SimConfig":
        """Unvalidated copy; ``adversary_<field>`` keys reach the nested adversary settings."""
        adv = {
            k[len("adversary_"):]: changes.pop(k)
            for k in list(changes)
            if k.startswith("adversary_") and k != "adversary_mode"
        }
        cfg = replace(self, **changes)
        if adv:
            cfg = replace(cfg, adversary=replace(cfg.adversary, **adv))
        return cfg


def default_termination_gate(n: int) -> int:
    """ceil(3 lg ln n): no threshold termination before this round."""
    if n < 3:
        return 1
    return max(1, math.ceil(3 * math.log2(math.log(n))))


# --------------------------------------------------------------------------
# config parsing
# --------------------------------------------------------------------------

REQUIRED_KEYS = ("n", "f", "k", "epsilon_prime", "c", "C", "beta", "seed")

DEFAULTS: dict[str, Any] = {
    "n": 1024,
    "f": Fraction(1),
    "k": 2,
    "epsilon_prime": 1 / 1024,
    "c": 4.0,
    "C": 5.0,
    "beta": 0.5,
    "seed": 7,
}

_SIM_KEYS = {
    "n", "f", "k", "epsilon_prime", "c", "C", "beta", "seed", "i_start", "max_rounds",
    "adversary_mode", "decoys_enabled", "approx_n_mode", "budget_policy_correct",
    "termination_gate", "max_total_slots",
}
_ADV_KEYS = {
    "adversary.strategy", "adversary.gamma", "adversary.targets", "adversary.victim_rule",
    "adversary.spare_fraction", "adversary.p_commit", "adversary.stop_round", "adversary.script",
}
CONFIG_KEYS = frozenset(_SIM_KEYS | _ADV_KEYS)


def parse_scalar(text: str) -> Any:
    """Best-effort typing of a config value written as text."""
    s = text.strip()
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "'\"":
        return s[1:-1]
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    try:
        return int(s)
    except ValueError:
        pass
    if "/" in s:
        try:
            return Fraction(s)
        except (ValueError, ZeroDivisionError):
            pass
    try:
        return float(s)
    except ValueError:
        return s


def load_config_text(text: str) -> dict[str, Any]:
    """Parse a flat ``key = value`` document or a single JSON object."""
    stripped = text.strip()
    if stripped.startswith("{"):
        data = json.loads(stripped)
        if not isinstance(data, dict):
            raise ConfigError("<file>", "JSON config must be an object")
        out: dict[str, Any] = {}
        for key, value in data.items():
            out[str(key)] = parse_scalar(value) if isinstance(value, str) else value
        return out
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"<line {lineno}>", f"expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_scalar(value)
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    return load_config_text(Path(path).read_text(encoding="utf-8"))


def _as_int(name: str, v: Any) -> int:
    if isinstance(v, bool):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if isinstance(v, int):
        return v
    if isinstance(v, (float, Fraction)) and v == int(v):
        return int(v)
    if isinstance(v, str):
        parsed = parse_scalar(v)
        if not isinstance(parsed, str):
            return _as_int(name, parsed)
    raise ConfigError(name, f"expected an integer, got {v!r}")


def _as_float(name: str, v: Any) -> float:
    if isinstance(v, bool) or v is None:
        raise ConfigError(name, f"expected a number, got {v!r}")
    if isinstance(v, str):
        v = parse_scalar(v)
        if isinstance(v, str):
            raise ConfigError(name, f"expected a number, got {v!r}")
    try:
        return float(v)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected a number, got {v!r}") from None


def _as_fraction(name: str, v: Any) -> Fraction:
    if isinstance(v, bool) or v is None:
        raise ConfigError(name, f"expected a rational number, got {v!r}")
    if isinstance(v, str):
        v = parse_scalar(v)
    if isinstance(v, (int, Fraction)):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(v).limit_denominator(10**9)
    raise ConfigError(name, f"expected a rational number, got {v!r}")


def _as_bool(name: str, v: Any) -> bool:
    if isinstance(v, str):
        v = parse_scalar(v)
    if isinstance(v, bool):
        return v
    if v in (0, 1):
        return bool(v)
    raise ConfigError(name, f"expected true/false, got {v!r}")


def _as_choice(name: str, v: Any, choices: tuple[str, ...]) -> str:
    s = str(v).strip().lower().replace("_", "-") if name != "adversary.strategy" else str(v).strip().lower().replace("-", "_")
    if s not in choices:
        raise ConfigError(name, f"must be one of {', '.join(choices)}; got {v!r}")
    return s


def validate_config(raw: Mapping[str, Any]) -> SimConfig:
    """Build a :class:`SimConfig` from a flat mapping, checking every bound."""
    for key in raw:
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown configuration key")
    for key in REQUIRED_KEYS:
        if key not in raw or raw[key] is None:
            raise ConfigError(key, "missing required field")

    n = _as_int("n", raw["n"])
    if n < 2:
        raise ConfigError("n", f"n must be ≥ 2 (got {n})")
    f = _as_fraction("f", raw["f"])
    if f < 0:
        raise ConfigError("f", f"f must be ≥ 0 (got {f})")
    k = _as_int("k", raw["k"])
    if k < 2:
        raise ConfigError("k", "k must be ≥ 2")
    eps = _as_float("epsilon_prime", raw["epsilon_prime"])
    if not 0.0 < eps < 1.0:
        raise ConfigError("epsilon_prime", f"ε′ must lie in (0, 1) (got {eps})")
    c = _as_float("c", raw["c"])
    if c <= 0:
        raise ConfigError("c", f"c must be > 0 (got {c})")
    C = _as_float("C", raw["C"])
    if C <= 0:
        raise ConfigError("C", f"C must be > 0 (got {C})")
    beta = _as_float("beta", raw["beta"])
    if not 0.0 < beta < 1.0:
        raise ConfigError("beta", f"β must lie in (0, 1) (got {beta})")
    seed = _as_int("seed", raw["seed"])
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", "seed must be a 64-bit unsigned integer")

    i_start = _as_int("i_start", raw.get("i_start", 1))
    if i_start < 1:
        raise ConfigError("i_start", f"i_start must be ≥ 1 (got {i_start})")
    max_rounds = _as_int("max_rounds", raw.get("max_rounds", 40))
    if max_rounds < 0:
        raise ConfigError("max_rounds", f"max_rounds must be ≥ 0 (got {max_rounds})")
    mode = _as_choice("adversary_mode", raw.get("adversary_mode", "adaptive"), ADVERSARY_MODES)
    decoys = _as_bool("decoys_enabled", raw.get("decoys_enabled", False))
    approx_raw = raw.get("approx_n_mode")
    approx: float | None
    if approx_raw in (None, False) or (isinstance(approx_raw, str) and approx_raw.lower() in ("off", "disabled")):
        approx = None
    else:
        approx = _as_float("approx_n_mode", approx_raw)
        if approx < 1:
            raise ConfigError("approx_n_mode", f"overestimate exponent c′ must be ≥ 1 (got {approx})")
    policy = _as_choice("budget_policy_correct", raw.get("budget_policy_correct", "record-only"), BUDGET_POLICIES)
    gate_raw = raw.get("termination_gate")
    gate = None if gate_raw is None else _as_int("termination_gate", gate_raw)
    if gate is not None and gate < 1:
        raise ConfigError("termination_gate", f"termination_gate must be ≥ 1 (got {gate})")
    max_slots = _as_int("max_total_slots", raw.get("max_total_slots", 2**27))
    if max_slots < 1:
        raise ConfigError("max_total_slots", "max_total_slots must be positive")

    adv = _validate_adversary(raw, mode)
    return SimConfig(
        n=n, f=f, k=k, epsilon_prime=eps, c=c, C=C, beta=beta, seed=seed,
        i_start=i_start, max_rounds=max_rounds, adversary_mode=mode, decoys_enabled=decoys,
        approx_n_exponent=approx, budget_policy_correct=policy, termination_gate=gate,
        max_total_slots=max_slots, adversary=adv,
    )


def _validate_adversary(raw: Mapping[str, Any], mode: str) -> AdversarySettings:
    # a bare ``null`` in a config file parses to None, which names the null strategy
    strategy = raw.get("adversary.strategy")
    strategy = _as_choice("adversary.strategy", "null" if strategy is None else strategy, STRATEGIES)
    gamma = raw.get("adversary.gamma")
    if gamma is not None:
        gamma = _as_float("adversary.gamma", gamma)
        if not 0.0 <= gamma <= 1.0:
            raise ConfigError("adversary.gamma", f"γ must lie in [0, 1] (got {gamma})")
    targets_raw = raw.get("adversary.targets", PHASE_NAMES)
    if isinstance(targets_raw, str):
        targets_raw = [t for t in targets_raw.replace(";", ",").split(",") if t.strip()]
    targets = tuple(_as_choice("adversary.targets", t, PHASE_NAMES) for t in targets_raw)
    victim = _as_choice("adversary.victim_rule", raw.get("adversary.victim_rule", "all-nodes"), VICTIM_RULES)
    spare = raw.get("adversary.spare_fraction")
    if spare is not None:
        spare = _as_float("adversary.spare_fraction", spare)
        if not 0.0 <= spare <= 1.0:
            raise ConfigError("adversary.spare_fraction", f"must lie in [0, 1] (got {spare})")
    p_commit = _as_float("adversary.p_commit", raw.get("adversary.p_commit", 1.0))
    if not 0.0 <= p_commit <= 1.0:
        raise ConfigError("adversary.p_commit", f"must lie in [0, 1] (got {p_commit})")
    stop = raw.get("adversary.stop_round")
    stop = None if stop is None else _as_int("adversary.stop_round", stop)
    script = raw.get("adversary.script")
    if strategy == "scripted" and not script:
        raise ConfigError("adversary.script", "scripted strategy needs a script path")
    if strategy == "reactive_jammer" and mode != "reactive":
        raise ConfigError("adversary.strategy", "reactive_jammer requires adversary_mode = reactive")
    return AdversarySettings(
        strategy=strategy, gamma=gamma, targets=targets, victim_rule=victim,
        spare_fraction=spare, p_commit=p_commit, stop_round=stop,
        script=None if script is None else str(script),
    )


def config_to_mapping(cfg: SimConfig) -> dict[str, Any]:
    """Inverse of :func:`validate_config` (flat keys, JSON-friendly values)."""
    out: dict[str, Any] = {
        "n": cfg.n,
        "f": str(cfg.f),
        "k": cfg.k,
        "epsilon_prime": cfg.epsilon_prime,
        "c": cfg.c,
        "C": cfg.C,
        "beta": cfg.beta,
        "seed": cfg.seed,
        "i_start": cfg.i_start,
        "max_rounds": cfg.max_rounds,
        "adversary_mode": cfg.adversary_mode,
        "decoys_enabled": cfg.decoys_enabled,
        "approx_n_mode": cfg.approx_n_exponent if cfg.approx_n_exponent is not None else "off",
        "budget_policy_correct": cfg.budget_policy_correct,
        "termination_gate": cfg.termination_gate,
        "max_total_slots": cfg.max_total_slots,
        "adversary.strategy": cfg.adversary.strategy,
        "adversary.gamma": cfg.adversary.gamma,
        "adversary.targets": ",".join(cfg.adversary.targets),
        "adversary.victim_rule": cfg.adversary.victim_rule,
        "adversary.spare_fraction": cfg.adversary.spare_fraction,
        "adversary.p_commit": cfg.adversary.p_commit,
        "adversary.stop_round": cfg.adversary.stop_round,
        "adversary.script": cfg.adversary.script,
    }
    return out


def make_config(**overrides: Any) -> SimConfig:
    """Defaults plus keyword overrides; dotted adversary keys use ``adversary_`` prefix."""
    raw: dict[str, Any] = dict(DEFAULTS)
    for key, value in overrides.items():
        dotted = key.replace("adversary_", "adversary.", 1)
        raw[dotted if dotted in _ADV_KEYS else key] = value
    return validate_config(raw)


# --------------------------------------------------------------------------
# budgets
# --------------------------------------------------------------------------

def _root(n: int, k: int) -> float:
    r = round(n ** (1.0 / k))
    if r**k == n:
        return float(r)
    return n ** (1.0 / k)


@dataclass(frozen=True)
class Budgets:
    node_budget: int
    alice_budget: int
    carol_budget: int

    def pooled_adversary(self, t: int) -> int:
        return t * self.node_budget + self.carol_budget


def derive_budgets(cfg: SimConfig) -> Budgets:
    # Alice (and Carol) get C n^{1/k} ln n when k = 2 and C n^{1/k} ln^k n otherwise
    root = _root(cfg.n, cfg.k)
    node = math.floor(cfg.C * root)
    log_power = 1 if cfg.k == 2 else cfg.k
    alice = math.floor(cfg.C * root * cfg.ln_n**log_power)
    return Budgets(node_budget=node, alice_budget=alice, carol_budget=alice)


# --------------------------------------------------------------------------
# round schedule
# --------------------------------------------------------------------------

def phase_slots(k: int, i: int) -> int:
    """ceil(2^{(1+1/k) i}); exact when k divides (k+1) i."""
    num = (k + 1) * i
    if num % k == 0:
        return 1 << (num // k)
    return math.ceil(2.0 ** (num / k))


def _clamp(name: str, p: float, events: list[str]) -> float:
    if p > 1.0:
        events.append(name)
        return 1.0
    if p < 0.0:
        events.append(name)
        return 0.0
    return p


def _round_slots(cfg: SimConfig, i: int) -> int:
    steps = cfg.k - 1
    if cfg.approx_n_exponent is not None:
        steps *= math.ceil(cfg.c * cfg.approx_n_exponent * math.log(cfg.n))
    return phase_slots(cfg.k, i) * (2 + steps)


@dataclass(frozen=True)
class RoundSchedule:
    round_index: int
    inform_slots: int
    propagation_steps: int
    step_slots: int
    request_slots: int
    alice_send_p: float
    node_inform_listen_p: float
    node_prop_listen_p: float
    informed_send_p: float
    nack_send_p: float
    node_request_listen_p: float
    alice_request_listen_p: float
    termination_threshold: float
    decoy_send_p: float
    clamped: tuple[str, ...] = ()

    @property
    def total_slots(self) -> int:
        return self.inform_slots + self.propagation_steps * self.step_slots + self.request_slots


def round_schedule(cfg: SimConfig, i: int) -> RoundSchedule:
    if i < 1:
        raise ValueError(f"round index must be ≥ 1 (got {i})")
    k, eps, c, ln_n = cfg.k, cfg.epsilon_prime, cfg.c, cfg.ln_n
    slots = phase_slots(k, i)
    elapsed = sum(_round_slots(cfg, j) for j in range(cfg.i_start, i + 1))
    if elapsed > cfg.max_total_slots:
        raise ScheduleError(f"round {i} would bring the trial to {elapsed} slots, above max_total_slots={cfg.max_total_slots}")
    two_i = 2.0**i
    two_round = 2.0 ** ((k + 1) * i / k)
    clamped: list[str] = []

    if k == 2:
        alice_send = 2 * ln_n / two_i
        prop_listen = 4 * math.e * (c + 1) / two_i
    else:
        alice_send = 2 * c * ln_n**k / two_i
        prop_listen = 2 * math.e * c / (eps * two_i)

    if cfg.decoys_enabled:
        # log-space: e^{3/(2 eps')} overflows for small eps'
        log_p = math.log(16) + 3 / (2 * eps) - math.log(eps * (1 - REACTIVE_DELTA)) - i * math.log(2)
        inform_listen = 2.0 if log_p > 0 else math.exp(log_p)
        decoy = 3 / (4 * eps * cfg.n)
    else:
        inform_listen = 2 / (eps * two_i)
        decoy = 0.0

    return RoundSchedule(
        round_index=i,
        inform_slots=slots,
        propagation_steps=k - 1,
        step_slots=slots,
        request_slots=slots,
        alice_send_p=_clamp("alice_send_p", alice_send, clamped),
        node_inform_listen_p=_clamp("node_inform_listen_p", inform_listen, clamped),
        node_prop_listen_p=_clamp("node_prop_listen_p", prop_listen, clamped),
        informed_send_p=_clamp("informed_send_p", 1 / cfg.n, clamped),
        nack_send_p=_clamp("nack_send_p", 1 / cfg.n, clamped),
        node_request_listen_p=_clamp(
            "node_request_listen_p", (c + 1) / ((1 - math.exp(-64 * eps)) * two_i), clamped
        ),
        alice_request_listen_p=_clamp(
            "alice_request_listen_p", c * ln_n / ((1 - math.exp(-4 * eps)) * two_round), clamped
        ),
        termination_threshold=5 * c * ln_n,
        decoy_send_p=_clamp("decoy_send_p", decoy, clamped),
        clamped=tuple(clamped),
    )


# --------------------------------------------------------------------------
# ledgers
# --------------------------------------------------------------------------

ACTIONS = ("send", "listen", "jam")


@dataclass
class CostLedger:
    budget_limit: int
    sends: int = 0
    listens: int = 0
    jams: int = 0
    violated: bool = False

    @property
    def total(self) -> int:
        return self.sends + self.listens + self.jams

    @property
    def remaining(self) -> int:
        return max(0, self.budget_limit - self.total)


def ledger_charge(ledger: CostLedger, action: str, policy: str = "record-only", count: int = 1) -> CostLedger:
    """Charge ``count`` unit actions; returns the same (mutated) ledger.

    Under ``enforce`` a charge that would cross the limit is refused in full
    and :class:`BudgetExhausted` is raised with the ledger untouched.
    """
    if action not in ACTIONS:
        raise ValueError(f"unknown action {action!r}")
    if count < 0:
        raise ValueError("count must be non-negative")
    if policy == "enforce" and ledger.total + count > ledger.budget_limit:
        raise BudgetExhausted(f"exhausted: {ledger.total}+{count} > {ledger.budget_limit}")
    setattr(ledger, action + "s", getattr(ledger, action + "s") + count)
    if ledger.total > ledger.budget_limit:
        ledger.violated = True
    return ledger
