"""Deterministic discrete-step simulator with carbon accounting.

The loop walks a fixed step (1 s by default) over a carbon-intensity trace.
Each step: (1) adapt the power threshold when the hysteresis rule fires and
re-select the execution strategy (mapping plan or LLM variant), (2) drain
queued requests through the batching -> concurrency -> frequency policy
hierarchy, (3) charge executed energy plus idle power, (4) convert energy
to grams at the step's carbon intensity.

Three execution modes share the loop:

- "batch": one lookup-table engine serving inference requests with dynamic
  batch sizes, concurrent streams and frequency scaling under soft deadlines;
- "llm": token jobs served by the quantized-variant fallback policy;
- "mapping": continuous-flow multi-DNN plans re-searched at every threshold
  change.

Everything is a pure function of (inputs, seed): the decision log and step
series are byte-reproducible.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

from .carbon_model import EmbodiedReport
from .edc_scheduler import (
    EdgeNode,
    ModelVariant,
    SearchParams,
    ci_to_threshold,
    hysteresis_update,
    plan_bottleneck_ms,
    search_mapping,
)
from .errors import InfeasibleError, ValidationFailure

J_PER_KWH = 3.6e6


class TraceExhausted(ValidationFailure):
    """The carbon-intensity trace does not cover the simulation horizon."""


class NoVariantUnderPowerThreshold(InfeasibleError):
    """No LLM variant fits under the current power threshold at any frequency."""


@dataclass(frozen=True)
class CiTrace:
    """Step-interpolated carbon-intensity forecast: each sample's value holds
    until the next timestamp; coverage ends at horizon_s."""

    samples: tuple[tuple[float, float], ...]
    horizon_s: float

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValidationFailure("CiTrace needs at least one sample")
        times = [t for t, _ in self.samples]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationFailure("CiTrace timestamps must be strictly increasing")
        if any(ci < 0 for _, ci in self.samples):
            raise ValidationFailure("carbon intensity must be >= 0")
        if self.horizon_s < times[-1]:
            raise ValidationFailure("horizon_s must cover the last sample")

    def ci_at(self, t_s: float) -> float:
        value = self.samples[0][1]
        for ts, ci in self.samples:
            if ts <= t_s:
                value = ci
            else:
                break
        return value

    @property
    def ci_min(self) -> float:
        return min(ci for _, ci in self.samples)

    @property
    def ci_max(self) -> float:
        return max(ci for _, ci in self.samples)

    @property
    def ci_range(self) -> float:
        return self.ci_max - self.ci_min


@dataclass(frozen=True)
class TraceArrivals:
    """Explicit request arrivals, (time_s, kind), non-decreasing in time."""

    events: tuple[tuple[float, str], ...]

    def __post_init__(self) -> None:
        times = [t for t, _ in self.events]
        if any(b < a for a, b in zip(times, times[1:])):
            raise ValidationFailure("arrival times must be non-decreasing")

    def materialize(self, horizon_s: float) -> list[tuple[float, str]]:
        return [(t, kind) for t, kind in self.events if t < horizon_s]


@dataclass(frozen=True)
class PoissonArrivals:
    rate_per_s: float
    seed: int = 0
    kinds: tuple[str, ...] = ("default",)

    def __post_init__(self) -> None:
        if self.rate_per_s <= 0:
            raise ValidationFailure("Poisson rate must be > 0")
        if not self.kinds:
            raise ValidationFailure("PoissonArrivals needs at least one kind")

    def materialize(self, horizon_s: float) -> list[tuple[float, str]]:
        rng = random.Random(self.seed)
        events: list[tuple[float, str]] = []
        t = rng.expovariate(self.rate_per_s)
        while t < horizon_s:
            kind = self.kinds[0] if len(self.kinds) == 1 else rng.choice(self.kinds)
            events.append((t, kind))
            t += rng.expovariate(self.rate_per_s)
        return events


class ExecLookupTable:
    """Precomputed (batch, frequency) -> (latency, energy) profile plus a
    concurrency-scaling table.

    Load-time invariants: batch latency non-decreasing and energy per
    inference non-increasing in the batch size at every frequency; the table
    must be rectangular over its batch sizes and frequency levels and contain
    batch size 1 and stream count 1.
    """

    def __init__(
        self,
        entries: dict[tuple[int, int], tuple[float, float]],
        concurrency: dict[int, tuple[float, float]] | None = None,
    ) -> None:
        if not entries:
            raise ValidationFailure("ExecLookupTable needs at least one entry")
        batch_sizes = sorted({b for b, _ in entries})
        freqs = sorted({f for _, f in entries})
        if batch_sizes[0] != 1:
            raise ValidationFailure("ExecLookupTable must contain batch size 1")
        if freqs != list(range(len(freqs))):
            raise ValidationFailure("frequency indices must be contiguous from 0")
        for b in batch_sizes:
            if b < 1:
                raise ValidationFailure("batch sizes must be >= 1")
            for f in freqs:
                if (b, f) not in entries:
                    raise ValidationFailure(f"table is not rectangular: missing (b={b}, f={f})")
                latency, energy = entries[(b, f)]
                if latency <= 0 or energy < 0:
                    raise ValidationFailure(f"entry (b={b}, f={f}): latency must be > 0, energy >= 0")
        for f in freqs:
            for b_lo, b_hi in zip(batch_sizes, batch_sizes[1:]):
                if entries[(b_hi, f)][0] < entries[(b_lo, f)][0]:
                    raise ValidationFailure(
                        f"latency must be non-decreasing in batch size (freq {f})"
                    )
                if entries[(b_hi, f)][1] / b_hi > entries[(b_lo, f)][1] / b_lo:
                    raise ValidationFailure(
                        f"energy per inference must be non-increasing in batch size (freq {f})"
                    )
        concurrency = dict(concurrency) if concurrency else {1: (1.0, 1.0)}
        if 1 not in concurrency:
            raise ValidationFailure("concurrency table must contain k=1")
        for k, (t_scale, p_scale) in concurrency.items():
            if k < 1:
                raise ValidationFailure("stream counts must be >= 1")
            if not 0 < t_scale <= k:
                raise ValidationFailure(f"throughput scale for k={k} must be in (0, k]")
            if p_scale < 1.0:
                raise ValidationFailure(f"power scale for k={k} must be >= 1")
        self.entries = dict(entries)
        self.concurrency = concurrency
        self.batch_sizes = tuple(batch_sizes)
        self.n_freqs = len(freqs)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ExecLookupTable)
            and self.entries == other.entries
            and self.concurrency == other.concurrency
        )

    def latency_ms(self, b: int, f: int) -> float:
        return self.entries[(b, f)][0]

    def energy_j(self, b: int, f: int) -> float:
        return self.entries[(b, f)][1]

    def stream_counts(self) -> tuple[int, ...]:
        return tuple(sorted(self.concurrency))

    def scales(self, k: int) -> tuple[float, float]:
        return self.concurrency[k]


@dataclass(frozen=True)
class LlmVariant:
    """One quantized variant: serving rate and power per frequency level."""

    name: str
    precision: str
    quality_score: float
    tokens_per_s: tuple[float, ...]
    power_w: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.tokens_per_s or len(self.tokens_per_s) != len(self.power_w):
            raise ValidationFailure(
                f"variant {self.name!r}: tokens_per_s and power_w need equal, non-zero length"
            )
        if any(tps <= 0 for tps in self.tokens_per_s) or any(p < 0 for p in self.power_w):
            raise ValidationFailure(f"variant {self.name!r}: rates must be > 0, power >= 0")


def validate_llm_variant_order(variants: tuple[LlmVariant, ...] | list[LlmVariant]) -> None:
    """Variant lists are ordered highest precision first with strictly
    decreasing quality."""
    if not variants:
        raise ValidationFailure("need at least one LLM variant")
    scores = [v.quality_score for v in variants]
    if any(b >= a for a, b in zip(scores, scores[1:])):
        raise ValidationFailure("LLM variant quality must be strictly decreasing")


@dataclass(frozen=True)
class LlmChoice:
    variant: LlmVariant
    freq_idx: int
    tps_violated: bool


def choose_batch(
    queue_len: int,
    table: ExecLookupTable,
    deadline_ms: float,
    elapsed_wait_ms: float,
    freq_idx: int,
) -> int:
    """Largest batch that still meets the deadline; 1 when nothing does.

    Energy per inference is non-increasing in batch size (a load-time
    invariant), so the largest feasible batch is also the energy-minimal one.
    """
    if queue_len < 1:
        raise ValidationFailure("queue_len must be >= 1")
    best = 0
    for b in table.batch_sizes:
        if b > queue_len:
            break
        if table.latency_ms(b, freq_idx) + elapsed_wait_ms <= deadline_ms:
            best = b
    return best if best else 1


def choose_frequency(
    batch: int,
    table: ExecLookupTable,
    deadline_ms: float,
    elapsed_wait_ms: float,
) -> int:
    """Lowest frequency meeting the deadline; the highest one as best effort."""
    for f in range(table.n_freqs):
        if table.latency_ms(batch, f) + elapsed_wait_ms <= deadline_ms:
            return f
    return table.n_freqs - 1


def choose_concurrency(active_models: int, table: ExecLookupTable) -> int:
    """Stream count maximizing throughput-per-power scaling; ties pick fewer streams."""
    best_k = 1
    best_ratio = -math.inf
    for k in table.stream_counts():
        if k > max(1, active_models):
            continue
        t_scale, p_scale = table.scales(k)
        ratio = t_scale / p_scale
        if ratio > best_ratio:
            best_k, best_ratio = k, ratio
    return best_k


def ci_level_of(ci_now: float, ci_min: float, ci_max: float) -> str:
    """Tercile classification of the current intensity within the forecast range."""
    if ci_max <= ci_min:
        return "low"
    x = (ci_now - ci_min) / (ci_max - ci_min)
    if x < 1.0 / 3.0:
        return "low"
    if x < 2.0 / 3.0:
        return "mid"
    return "high"


def llm_select(
    variants: tuple[LlmVariant, ...] | list[LlmVariant],
    power_threshold_w: float,
    ci_level: str,
    tps_floor: float,
) -> LlmChoice:
    """Highest-precision variant at the lowest adequate frequency.

    Adequate means power under the threshold and serving rate at or above the
    floor. At high grid intensity the top-precision variant is off the table
    (forced fallback) whenever a lighter one exists. If no combination meets
    the rate floor, the fastest one under the power budget is returned,
    flagged tps_violated.
    """
    validate_llm_variant_order(variants)
    if ci_level not in ("low", "mid", "high"):
        raise ValidationFailure(f"unknown ci_level {ci_level!r}")
    allowed = list(variants)
    if ci_level == "high" and len(allowed) > 1:
        allowed = allowed[1:]
    for variant in allowed:
        for f in range(len(variant.tokens_per_s)):
            if variant.power_w[f] <= power_threshold_w and variant.tokens_per_s[f] >= tps_floor:
                return LlmChoice(variant=variant, freq_idx=f, tps_violated=False)
    best: LlmChoice | None = None
    best_tps = -math.inf
    for variant in allowed:
        for f in range(len(variant.tokens_per_s)):
            if variant.power_w[f] <= power_threshold_w and variant.tokens_per_s[f] > best_tps:
                best = LlmChoice(variant=variant, freq_idx=f, tps_violated=True)
                best_tps = variant.tokens_per_s[f]
    if best is None:
        raise NoVariantUnderPowerThreshold(
            f"no variant runs under {power_threshold_w} W at any frequency"
        )
    return best


@dataclass(frozen=True)
class SimConfig:
    mode: str  # "batch" | "llm" | "mapping"
    horizon_s: float
    step_s: float = 1.0
    policy: str = "adaptive"  # "adaptive" | "static"
    deadline_ms: float = 100.0
    hysteresis_fraction: float = 0.10
    p_min_w: float = 1.0
    p_max_w: float = 10.0
    idle_power_w: float = 0.0
    tokens_per_request: int = 128
    tps_floor: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("batch", "llm", "mapping"):
            raise ValidationFailure(f"unknown sim mode {self.mode!r}")
        if self.policy not in ("adaptive", "static"):
            raise ValidationFailure(f"unknown policy {self.policy!r}")
        if self.horizon_s <= 0 or self.step_s <= 0:
            raise ValidationFailure("horizon_s and step_s must be > 0")
        if not 0.0 <= self.hysteresis_fraction <= 1.0:
            raise ValidationFailure("hysteresis_fraction must be in [0, 1]")
        if self.p_min_w > self.p_max_w or self.p_min_w <= 0:
            raise ValidationFailure("need 0 < p_min_w <= p_max_w")
        if self.deadline_ms <= 0:
            raise ValidationFailure("deadline_ms must be > 0")
        if self.tokens_per_request < 1:
            raise ValidationFailure("tokens_per_request must be >= 1")
        if self.idle_power_w < 0:
            raise ValidationFailure("idle_power_w must be >= 0")


@dataclass(frozen=True)
class LogEvent:
    t_s: float
    kind: str
    detail: dict


@dataclass(frozen=True)
class StepSample:
    t_s: float
    ci: float
    threshold_w: float
    power_w: float
    energy_kwh: float
    cumulative_g: float


@dataclass
class SimReport:
    total_energy_kwh: float
    operational_g: float
    inferences_done: int
    deadline_misses: int
    mean_tps: float
    decision_log: list[LogEvent]
    steps: list[StepSample]
    embodied_amortized_g_per_inference: float | None = None


def amortized_report(embodied: EmbodiedReport, sim: SimReport, lifetime_inferences: float) -> float:
    """Embodied carbon spread over the device lifetime, in grams per inference.

    Stamps the figure on the sim report so it travels with the operational
    numbers; the two fields stay independent (a zero-inference sim still
    amortizes).
    """
    if lifetime_inferences <= 0:
        raise ValidationFailure("lifetime_inferences must be > 0")
    grams = embodied.total_kg * 1000.0 / lifetime_inferences
    sim.embodied_amortized_g_per_inference = grams
    return grams


@dataclass
class _Request:
    arrival_s: float
    kind: str


class _ThresholdController:
    """Owns the hysteresis state; the single writer of the power threshold."""

    def __init__(self, config: SimConfig, trace: CiTrace):
        self.config = config
        self.ci_lo = trace.ci_min
        self.ci_hi = trace.ci_max
        self.range = trace.ci_range
        self.threshold: float | None = None
        self.ci_ref: float | None = None

    def update(self, ci: float) -> tuple[float, bool, str]:
        """Returns (threshold, changed, cause)."""
        if self.threshold is None:
            if self.config.policy == "static":
                self.threshold = self.config.p_max_w
            else:
                self.threshold = ci_to_threshold(
                    ci, self.ci_lo, self.ci_hi, self.config.p_min_w, self.config.p_max_w
                )
            self.ci_ref = ci
            return self.threshold, True, "initial"
        if self.config.policy == "static":
            return self.threshold, False, ""
        if hysteresis_update(self.ci_ref, ci, self.range, self.config.hysteresis_fraction):
            self.threshold = ci_to_threshold(
                ci, self.ci_lo, self.ci_hi, self.config.p_min_w, self.config.p_max_w
            )
            self.ci_ref = ci
            return self.threshold, True, "ci_change"
        return self.threshold, False, ""


def run_simulation(
    config: SimConfig,
    ci_trace: CiTrace,
    arrivals: TraceArrivals | PoissonArrivals | None = None,
    *,
    table: ExecLookupTable | None = None,
    node: EdgeNode | None = None,
    workloads: list[ModelVariant] | None = None,
    llm_variants: tuple[LlmVariant, ...] | list[LlmVariant] | None = None,
    search_params: SearchParams | None = None,
) -> SimReport:
    if config.horizon_s > ci_trace.horizon_s:
        raise TraceExhausted(
            f"horizon {config.horizon_s} s exceeds trace coverage {ci_trace.horizon_s} s"
        )
    if config.mode == "batch" and table is None:
        raise ValidationFailure("batch mode needs an ExecLookupTable")
    if config.mode == "llm":
        if not llm_variants:
            raise ValidationFailure("llm mode needs llm_variants")
        validate_llm_variant_order(llm_variants)
        if config.tps_floor <= 0:
            raise ValidationFailure("llm mode requires an explicit tps_floor > 0")
    if config.mode == "mapping" and (node is None or not workloads):
        raise ValidationFailure("mapping mode needs a node and workloads")
    if config.mode in ("batch", "llm") and arrivals is None:
        raise ValidationFailure(f"{config.mode} mode needs an arrival model")

    arrival_events = arrivals.materialize(config.horizon_s) if arrivals is not None else []
    controller = _ThresholdController(config, ci_trace)

    log: list[LogEvent] = []
    steps: list[StepSample] = []
    total_energy_j = 0.0
    operational_g = 0.0
    inferences = 0
    misses = 0
    tokens_served = 0
    llm_busy_s = 0.0
    flow_inferences = 0.0
    flow_misses = 0.0

    queue: deque[_Request] = deque()
    next_arrival = 0
    device_free = 0.0
    llm_choice: LlmChoice | None = None
    mapping_solution = None
    deadline_s = config.deadline_ms / 1000.0

    def reselect(t: float, threshold: float, ci: float) -> None:
        nonlocal llm_choice, mapping_solution
        if config.mode == "llm":
            level = ci_level_of(ci, ci_trace.ci_min, ci_trace.ci_max)
            llm_choice = llm_select(llm_variants, threshold, level, config.tps_floor)
            log.append(
                LogEvent(
                    t_s=t,
                    kind="llm_select",
                    detail={
                        "variant": llm_choice.variant.name,
                        "freq_idx": llm_choice.freq_idx,
                        "ci_level": level,
                        "tps_violated": llm_choice.tps_violated,
                    },
                )
            )
        elif config.mode == "mapping":
            mapping_solution = search_mapping(
                workloads, node, threshold, search_params
            )
            log.append(
                LogEvent(
                    t_s=t,
                    kind="remap",
                    detail={
                        "power_w": mapping_solution.estimate.power_w,
                        "throughput": mapping_solution.estimate.throughput_inf_per_s,
                        "segments": sum(len(p.segments) for p in mapping_solution.plans),
                    },
                )
            )

    t = 0.0
    while t < config.horizon_s - 1e-12:
        dt = min(config.step_s, config.horizon_s - t)
        step_end = t + dt
        ci = ci_trace.ci_at(t)
        threshold, changed, cause = controller.update(ci)
        if changed:
            log.append(
                LogEvent(
                    t_s=t,
                    kind="adapt",
                    detail={"threshold_w": threshold, "ci": ci, "cause": cause},
                )
            )
            reselect(t, threshold, ci)

        step_energy_j = 0.0
        busy_in_window = max(0.0, min(device_free, step_end) - t)

        if config.mode == "batch":
            now = max(device_free, t)
            gated = False
            while True:
                while next_arrival < len(arrival_events) and arrival_events[next_arrival][0] <= now:
                    at, kind = arrival_events[next_arrival]
                    queue.append(_Request(at, kind))
                    next_arrival += 1
                if not queue:
                    if (
                        next_arrival < len(arrival_events)
                        and arrival_events[next_arrival][0] < step_end
                    ):
                        now = max(now, arrival_events[next_arrival][0])
                        continue
                    break
                if now >= step_end or gated:
                    break
                dispatch = _plan_batch_dispatch(
                    queue, table, config, threshold, now
                )
                if dispatch is None:
                    gated = True
                    log.append(
                        LogEvent(t_s=now, kind="power_gated", detail={"threshold_w": threshold, "ci": ci})
                    )
                    break
                sizes, k, f, duration_s, energy_j, power_w = dispatch
                served: list[_Request] = []
                for b in sizes:
                    for _ in range(b):
                        served.append(queue.popleft())
                completion = now + duration_s
                n_miss = sum(1 for r in served if completion > r.arrival_s + deadline_s)
                inferences += len(served)
                misses += n_miss
                step_energy_j += energy_j
                total_energy_j += energy_j
                busy_in_window += min(completion, step_end) - now
                log.append(
                    LogEvent(
                        t_s=now,
                        kind="dispatch",
                        detail={
                            "batches": list(sizes),
                            "streams": k,
                            "freq_idx": f,
                            "duration_s": duration_s,
                            "energy_j": energy_j,
                            "power_w": power_w,
                            "completion_s": completion,
                            "misses": n_miss,
                            "arrivals": [r.arrival_s for r in served],
                            "ci": ci,
                        },
                    )
                )
                now = completion
                device_free = completion

        elif config.mode == "llm":
            now = max(device_free, t)
            choice = llm_choice
            assert choice is not None
            tps = choice.variant.tokens_per_s[choice.freq_idx]
            power_w = choice.variant.power_w[choice.freq_idx]
            per_request_s = config.tokens_per_request / tps
            while True:
                while next_arrival < len(arrival_events) and arrival_events[next_arrival][0] <= now:
                    at, kind = arrival_events[next_arrival]
                    queue.append(_Request(at, kind))
                    next_arrival += 1
                if not queue:
                    if (
                        next_arrival < len(arrival_events)
                        and arrival_events[next_arrival][0] < step_end
                    ):
                        now = max(now, arrival_events[next_arrival][0])
                        continue
                    break
                if now >= step_end:
                    break
                request = queue.popleft()
                completion = now + per_request_s
                missed = completion > request.arrival_s + deadline_s
                energy_j = power_w * per_request_s
                inferences += 1
                misses += 1 if missed else 0
                tokens_served += config.tokens_per_request
                llm_busy_s += per_request_s
                step_energy_j += energy_j
                total_energy_j += energy_j
                busy_in_window += min(completion, step_end) - now
                log.append(
                    LogEvent(
                        t_s=now,
                        kind="dispatch",
                        detail={
                            "variant": choice.variant.name,
                            "freq_idx": choice.freq_idx,
                            "tokens": config.tokens_per_request,
                            "duration_s": per_request_s,
                            "energy_j": energy_j,
                            "power_w": power_w,
                            "completion_s": completion,
                            "misses": 1 if missed else 0,
                            "arrivals": [request.arrival_s],
                            "ci": ci,
                        },
                    )
                )
                now = completion
                device_free = completion

        else:  # mapping
            assert mapping_solution is not None
            power_w = mapping_solution.estimate.power_w
            energy_j = power_w * dt
            step_energy_j += energy_j
            total_energy_j += energy_j
            done = mapping_solution.estimate.throughput_inf_per_s * dt
            flow_inferences += done
            violated = any(
                plan_bottleneck_ms(plan, variant, node) > config.deadline_ms
                for variant, plan in zip(workloads, mapping_solution.plans)
            )
            if violated:
                flow_misses += done
            busy_in_window = dt
            log.append(
                LogEvent(
                    t_s=t,
                    kind="power",
                    detail={"energy_j": energy_j, "power_w": power_w, "ci": ci},
                )
            )

        if config.mode != "mapping":
            idle_s = max(0.0, dt - busy_in_window)
            if idle_s > 0 and config.idle_power_w > 0:
                idle_energy = config.idle_power_w * idle_s
                step_energy_j += idle_energy
                total_energy_j += idle_energy
                log.append(
                    LogEvent(
                        t_s=step_end,
                        kind="idle",
                        detail={"idle_s": idle_s, "energy_j": idle_energy, "ci": ci},
                    )
                )

        step_g = ci * step_energy_j / J_PER_KWH
        operational_g += step_g
        steps.append(
            StepSample(
                t_s=t,
                ci=ci,
                threshold_w=threshold,
                power_w=step_energy_j / dt,
                energy_kwh=step_energy_j / J_PER_KWH,
                cumulative_g=operational_g,
            )
        )
        t = step_end

    if config.mode == "mapping":
        inferences = int(flow_inferences)
        misses = min(inferences, int(flow_misses))
    mean_tps = tokens_served / llm_busy_s if llm_busy_s > 0 else 0.0
    return SimReport(
        total_energy_kwh=total_energy_j / J_PER_KWH,
        operational_g=operational_g,
        inferences_done=inferences,
        deadline_misses=misses,
        mean_tps=mean_tps,
        decision_log=log,
        steps=steps,
    )


def _plan_batch_dispatch(
    queue: deque,
    table: ExecLookupTable,
    config: SimConfig,
    threshold_w: float,
    now: float,
) -> tuple[tuple[int, ...], int, int, float, float, float] | None:
    """Apply the policy hierarchy to the queue head; None means the step is
    power-gated (no frequency fits under the threshold).

    Returns (batch sizes, streams, freq, duration_s, energy_j, power_w).
    """
    top_freq = table.n_freqs - 1
    wait_ms = (now - queue[0].arrival_s) * 1000.0
    active_kinds = len({r.kind for r in queue})
    k = choose_concurrency(active_kinds, table)

    def group_sizes(k_try: int) -> tuple[int, ...]:
        sizes: list[int] = []
        remaining = len(queue)
        offset = 0
        for _ in range(k_try):
            if remaining < 1:
                break
            head_wait = (now - queue[offset].arrival_s) * 1000.0
            b = choose_batch(remaining, table, config.deadline_ms, head_wait, top_freq)
            sizes.append(b)
            remaining -= b
            offset += b
        return tuple(sizes)

    def group_power(sizes: tuple[int, ...], f: int, k_try: int) -> float:
        _, p_scale = table.scales(k_try)
        serial_ms = sum(table.latency_ms(b, f) for b in sizes)
        serial_energy = sum(table.energy_j(b, f) for b in sizes)
        return serial_energy * 1000.0 / serial_ms * p_scale

    def pick(k_try: int) -> tuple[tuple[int, ...], int, int] | None:
        sizes = group_sizes(k_try)
        k_eff = len(sizes)
        if k_eff == 0:
            return None
        f_policy = choose_frequency(sizes[0], table, config.deadline_ms, wait_ms)
        if group_power(sizes, f_policy, k_eff) <= threshold_w:
            return sizes, k_eff, f_policy
        allowed = [
            f for f in range(table.n_freqs) if group_power(sizes, f, k_eff) <= threshold_w
        ]
        if not allowed:
            return None
        meeting = [
            f
            for f in allowed
            if table.latency_ms(sizes[0], f) + wait_ms <= config.deadline_ms
        ]
        f = min(meeting) if meeting else max(allowed)
        return sizes, k_eff, f

    result = pick(k)
    if result is None and k > 1:
        result = pick(1)
    if result is None:
        return None
    sizes, k_eff, f = result
    t_scale, p_scale = table.scales(k_eff)
    serial_ms = sum(table.latency_ms(b, f) for b in sizes)
    serial_energy = sum(table.energy_j(b, f) for b in sizes)
    duration_s = serial_ms / t_scale / 1000.0
    energy_j = serial_energy * p_scale / t_scale
    power_w = serial_energy * 1000.0 / serial_ms * p_scale
    return sizes, k_eff, f, duration_s, energy_j, power_w
