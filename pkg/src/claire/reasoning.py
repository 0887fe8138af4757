"""Metric-driven explanations.

A :class:`MetricsReport` is serialized into a structured expert prompt. The
explanation comes either from a deterministic rule-based template or from any
chat-completion style HTTP endpoint; endpoint failures fall back to the
template.
"""

from __future__ import annotations

import json
import logging
import math
import os
import socket
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from pathlib import Path
from urllib.parse import urlparse

from .errors import ConfigError
from .metrics import MetricsReport

log = logging.getLogger(__name__)

API_KEY_ENV = "CLAIRE_LLM_API_KEY"
TEMPLATE = "template"
EXTERNAL = "external"

DETECTION_THRESHOLD = 0.5
BIAS_THRESHOLD = 5.0  # percentage points of coverage
DOMINANCE_THRESHOLD = 0.65
CLOUD_THRESHOLD = 0.25

PERSONA = ("You are a satellite imagery domain expert specialising in multimodal land-cover "
           "segmentation from optical and SAR data.")
TASK = ("Using only the quantitative evidence below, write a concise scenario-aware analysis of "
        "this segmentation result: name its main strengths and weaknesses, identify classes that "
        "are systematically misclassified, and assess whether the prediction was driven mainly by "
        "optical features, SAR features or their integration, noting whether the two modalities "
        "complemented each other or were redundant.")

_METRIC_ORDER = MetricsReport.METRIC_FIELDS
_FUSION_ORDER = MetricsReport.FUSION_FIELDS
_FUSION_NOTES = {
    "fusion_quality": "artifact-defined: fused OA minus best single-modality OA",
    "complementarity": "artifact-defined: mean min/max gate ratio, 1 = joint use",
}


@dataclass
class ReasoningPrompt:
    text: str
    fields_included: list[str]
    sample_id: str | None = None


@dataclass
class Explanation:
    text: str
    source: str
    sample_id: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _names(report: MetricsReport, class_names=None) -> list[str]:
    names = class_names or report.class_names
    if names is None or len(names) != report.num_classes:
        names = [f"class_{i}" for i in range(report.num_classes)]
    return list(names)


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return f"{float(v):.4f}"


def _fmt_vector(values, names) -> str:
    return ", ".join(f"{n}={_fmt(v)}" for n, v in zip(names, values))


def _defined(values):
    return [(i, float(v)) for i, v in enumerate(values) if v is not None and not math.isnan(float(v))]


def contextual_notes(report: MetricsReport, class_names=None) -> list[str]:
    names = _names(report, class_names)
    notes = []
    for i, r in _defined(report.detection_rate):
        if r < DETECTION_THRESHOLD:
            notes.append(f"{names[i]} is under-detected: recall {r:.4f} is below {DETECTION_THRESHOLD}.")
    for i, e in _defined(report.per_class_signed_error):
        if abs(e) > BIAS_THRESHOLD:
            kind = "over-predicted" if e > 0 else "under-predicted"
            notes.append(f"{names[i]} coverage is {kind} by {abs(e):.2f} percentage points.")
    if report.rgb_dominance is not None and report.rgb_dominance > DOMINANCE_THRESHOLD:
        notes.append("Modality reliance: prediction predominantly driven by optical features.")
    if report.sar_dominance is not None and report.sar_dominance > DOMINANCE_THRESHOLD:
        notes.append("Modality reliance: prediction predominantly driven by SAR features.")
    cloud = report.metadata.get("cloud_fraction") if report.metadata else None
    if cloud:
        notes.append(f"Scene context: about {100 * float(cloud):.0f}% of optical pixels are cloud-covered.")
    return notes


def build_prompt(report: MetricsReport, class_names=None, sample_id=None) -> ReasoningPrompt:
    """Deterministic prompt: persona and task, metric block, fusion block (only
    when gate-derived fields exist), and contextual notes. Each present field
    name appears exactly once, as the key of its own line."""
    names = _names(report, class_names)
    sid = sample_id if sample_id is not None else report.sample_id
    lines = [PERSONA, TASK, "", f"Sample: {sid if sid is not None else 'unnamed'}",
             f"Classes: {', '.join(names)}", "", "[Segmentation metrics]"]
    included = []
    for name in _METRIC_ORDER:
        v = getattr(report, name)
        lines.append(f"{name}: {_fmt_vector(v, names) if isinstance(v, list) else _fmt(v)}")
        included.append(name)
    fusion = [n for n in _FUSION_ORDER if getattr(report, n) is not None]
    if fusion:
        lines += ["", "[Fusion indicators]"]
        for name in fusion:
            note = f"  ({_FUSION_NOTES[name]})" if name in _FUSION_NOTES else ""
            lines.append(f"{name}: {_fmt(getattr(report, name))}{note}")
            included.append(name)
    notes = contextual_notes(report, names)
    if notes:
        lines += ["", "[Contextual notes]"] + [f"- {n}" for n in notes]
    return ReasoningPrompt(text="\n".join(lines) + "\n", fields_included=included, sample_id=sid)


def explain_template(prompt: ReasoningPrompt, report: MetricsReport, class_names=None) -> Explanation:
    """Rule-based explanation; deterministic and total over valid reports."""
    names = _names(report, class_names)
    ious = _defined(report.per_class_iou)
    parts = []
    perfect = ious and all(v >= 1.0 for _, v in ious) and report.oa >= 1.0
    if perfect:
        parts.append(f"Segmentation succeeded uniformly: every class present ({', '.join(names[i] for i, _ in ious)}) "
                     "was delineated without error.")
    elif ious:
        best = max(ious, key=lambda t: (t[1], -t[0]))
        worst = min(ious, key=lambda t: (t[1], t[0]))
        parts.append(f"The strongest class is {names[best[0]]} (IoU {best[1]:.2f}), "
                     f"with overall accuracy {report.oa:.2f} and mIoU {report.miou:.2f}.")
        if worst[0] != best[0]:
            det = report.detection_rate[worst[0]]
            det_txt = f", recall {float(det):.2f}" if det is not None else ""
            parts.append(f"The weakest class is {names[worst[0]]} (IoU {worst[1]:.2f}{det_txt}).")
    else:
        parts.append(f"No class has a defined overlap score; overall accuracy is {report.oa:.2f}.")

    cloud = float(report.metadata.get("cloud_fraction") or 0.0) if report.metadata else 0.0
    if report.rgb_dominance is None:
        parts.append("Gating masks were not available, so the relative reliance on optical and SAR "
                     "features is not assessed.")
    elif report.sar_dominance > DOMINANCE_THRESHOLD:
        why = (" because the optical data was obscured by cloud cover" if cloud >= CLOUD_THRESHOLD
               else "")
        parts.append(f"The fusion gates favoured SAR features (SAR share {report.sar_dominance:.2f}){why}.")
    elif report.rgb_dominance > DOMINANCE_THRESHOLD:
        parts.append(f"The prediction was driven predominantly by optical features "
                     f"(optical share {report.rgb_dominance:.2f}).")
    else:
        balance = "balanced" if perfect else "fairly balanced"
        parts.append(f"Fusion was {balance} between optical ({report.rgb_dominance:.2f}) and SAR "
                     f"({report.sar_dominance:.2f}) features.")
    if report.complementarity is not None:
        c = report.complementarity
        if c >= 0.7:
            parts.append(f"Both modalities contributed jointly across most pixels (complementarity {c:.2f}).")
        elif c <= 0.3:
            parts.append(f"One modality carried most pixels on its own (complementarity {c:.2f}), "
                         "so the other was largely redundant.")
        else:
            parts.append(f"Modality use was partly complementary (complementarity {c:.2f}).")
    if report.fusion_quality is not None:
        fq = report.fusion_quality
        parts.append(f"Relative to the best single modality, fusion changed overall accuracy by {fq:+.2f}.")

    errs = _defined(report.per_class_signed_error)
    if errs:
        i, e = max(errs, key=lambda t: (abs(t[1]), -t[0]))
        if abs(e) > BIAS_THRESHOLD:
            kind = "over-predicted" if e > 0 else "under-predicted"
            parts.append(f"The largest systematic bias is {names[i]}, {kind} by {abs(e):.1f} "
                         "percentage points of coverage.")
        else:
            parts.append(f"Class coverage is well calibrated (largest deviation {report.systematic_bias:.1f} "
                         "percentage points).")
    return Explanation(text=" ".join(parts), source=TEMPLATE, sample_id=prompt.sample_id)


@dataclass
class EndpointConfig:
    url: str
    model: str = "phi-3-mini"
    api_key_env: str = API_KEY_ENV
    timeout: float = 30.0
    retries: int = 1
    temperature: float = 0.2

    def __post_init__(self):
        parsed = urlparse(self.url or "")
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ConfigError(f"endpoint URL must be http(s)://host[:port]/path, got {self.url!r}")
        if self.timeout <= 0 or self.retries < 0:
            raise ConfigError("timeout must be positive and retries non-negative")


def _request_body(prompt: ReasoningPrompt, endpoint: EndpointConfig) -> bytes:
    return json.dumps({
        "model": endpoint.model,
        "temperature": endpoint.temperature,
        "messages": [{"role": "system", "content": PERSONA},
                     {"role": "user", "content": prompt.text}],
    }).encode()


def _extract_text(raw: bytes) -> str:
    body = raw.decode("utf-8", errors="replace")
    try:
        data = json.loads(body)
    except json.JSONDecodeError:
        return body
    if isinstance(data, dict):
        if data.get("choices"):
            choice = data["choices"][0]
            msg = choice.get("message") or {}
            return msg.get("content") or choice.get("text") or ""
        for key in ("text", "content", "response"):
            if isinstance(data.get(key), str):
                return data[key]
    return body


def _post(prompt, endpoint: EndpointConfig) -> str:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(endpoint.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    req = urllib.request.Request(endpoint.url, data=_request_body(prompt, endpoint), headers=headers,
                                 method="POST")
    with urllib.request.urlopen(req, timeout=endpoint.timeout) as resp:
        return _extract_text(resp.read())


def explain_external(prompt: ReasoningPrompt, endpoint: EndpointConfig | dict | str,
                     report: MetricsReport, class_names=None) -> Explanation:
    """Ask the endpoint for an explanation; on any failure return the template one."""
    if isinstance(endpoint, str):
        endpoint = EndpointConfig(url=endpoint)
    elif isinstance(endpoint, dict):
        endpoint = EndpointConfig(**endpoint)
    last = None
    for attempt in range(endpoint.retries + 1):
        try:
            text = _post(prompt, endpoint).strip()
            if text:
                return Explanation(text=text, source=EXTERNAL, sample_id=prompt.sample_id)
            last = "empty response"
        except (urllib.error.URLError, socket.timeout, TimeoutError, ConnectionError, OSError,
                ValueError) as exc:
            last = exc
        log.debug("endpoint attempt %d failed: %s", attempt + 1, last)
    log.warning("endpoint %s failed (%s); using template explanation", endpoint.url, last)
    return explain_template(prompt, report, class_names)


def explain_reports(reports, mode: str = TEMPLATE, endpoint=None, class_names=None,
                    max_in_flight: int = 2) -> list[Explanation]:
    """Explain many reports; external requests run with at most ``max_in_flight`` in flight."""
    if mode not in (TEMPLATE, EXTERNAL):
        raise ConfigError(f"mode must be {TEMPLATE!r} or {EXTERNAL!r}, got {mode!r}")
    if mode == EXTERNAL and endpoint is None:
        raise ConfigError("external mode needs an endpoint")
    if isinstance(endpoint, str):
        endpoint = EndpointConfig(url=endpoint)

    def one(report):
        prompt = build_prompt(report, class_names)
        if mode == TEMPLATE:
            return explain_template(prompt, report, class_names)
        return explain_external(prompt, endpoint, report, class_names)

    if mode == TEMPLATE or max_in_flight <= 1:
        return [one(r) for r in reports]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(one, reports))


def write_jsonl(explanations, path) -> None:
    with open(Path(path), "w") as fh:
        for e in explanations:
            fh.write(json.dumps(e.to_dict()) + "\n")
