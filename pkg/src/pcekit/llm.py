"""In-context evaluation of chat models: prompt building, clients, verdict parsing."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from .data import Dataset, FixationSequence, PceLabel, PceSample, Stimulus
from .evaluation import EvalReport, evaluate

log = logging.getLogger(__name__)

QUESTION = "Does the caption mention the central entities in the image?"
ANSWER_FORMAT = "Reply with exactly one word: yes, no, or unclear."
TOKEN_ENV = "PCEKIT_API_TOKEN"

_SYSTEM = (
    "You predict how one particular person answered a question about an image and its caption.\n"
    "People differ: answer as this person would, not as you would.\n"
    + ANSWER_FORMAT
)
_VERDICT_RE = re.compile(r"\b(yes|no|unclear)\b", re.IGNORECASE)


class Setup(str, Enum):
    ZERO = "zero"
    FIX = "fix"
    ONE = "one"

    @classmethod
    def parse(cls, value) -> "Setup":
        if isinstance(value, Setup):
            return value
        aliases = {"zeroshot": "zero", "zero-shot": "zero", "fixations": "fix", "oneshot": "one", "one-shot": "one"}
        v = str(value).strip().lower()
        try:
            return cls(aliases.get(v, v))
        except ValueError:
            raise ValueError(f"unknown setup {value!r}; expected zero, fix or one") from None


@dataclass(frozen=True)
class PromptBundle:
    setup: Setup
    system_text: str
    user_text: str
    attachments: tuple[str, ...] = ()

    def to_text(self) -> str:
        """Stable plain-text rendering (used for prompt snapshots)."""
        refs = "\n".join(self.attachments)
        return f"[setup]\n{self.setup.value}\n[system]\n{self.system_text}\n[user]\n{self.user_text}\n[attachments]\n{refs}\n"

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.setup.value, self.system_text, self.user_text, *self.attachments):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


def image_ref(stimulus: Stimulus) -> str:
    return f"stimulus://{stimulus.stimulus_id}/image"


def format_fixations(seq: FixationSequence) -> str:
    return "\n".join(f"{f.index}. {f.aoi} ({f.duration_ms:.2f} ms)" for f in seq.fixations)


def _exposure(stimulus: Stimulus, seq: FixationSequence | None, image_slot: int) -> str:
    lines = [f"Image: attachment {image_slot}", f"Caption: {stimulus.caption}", f"Question: {QUESTION}"]
    if seq is not None:
        lines.append("Fixations of this person, in viewing order (AOI, duration):")
        lines.append(format_fixations(seq))
    return "\n".join(lines)


def build_prompt(sample: PceSample, stimulus: Stimulus, setup, demo: PceSample | None = None,
                 demo_stimulus: Stimulus | None = None) -> PromptBundle:
    """Deterministic prompt for one sample.

    ``zero`` shows only image, caption and question; ``fix`` adds the
    participant's fixation list; ``one`` additionally puts one solved
    example from the same participant in the system text.
    """
    setup = Setup.parse(setup)
    if stimulus.stimulus_id != sample.stimulus_id:
        raise ValueError(f"stimulus {stimulus.stimulus_id} does not belong to sample {sample.stimulus_id}")
    if setup is Setup.ONE:
        if demo is None or demo_stimulus is None:
            raise ValueError("one-shot prompts need a demonstration sample and its stimulus")
        if demo.participant_id != sample.participant_id:
            raise ValueError(
                f"demonstration participant {demo.participant_id} differs from sample participant {sample.participant_id}"
            )
        if demo_stimulus.stimulus_id != demo.stimulus_id:
            raise ValueError("demonstration stimulus does not match the demonstration sample")
        system = (
            f"{_SYSTEM}\n\nSolved example from the same person:\n"
            f"{_exposure(demo_stimulus, demo.sequence, 1)}\nAnswer: {demo.label.text.lower()}"
        )
        user = f"{_exposure(stimulus, sample.sequence, 2)}\n{ANSWER_FORMAT}"
        return PromptBundle(setup, system, user, (image_ref(demo_stimulus), image_ref(stimulus)))
    if demo is not None:
        raise ValueError(f"setup {setup.value!r} takes no demonstration")
    seq = sample.sequence if setup is Setup.FIX else None
    user = f"{_exposure(stimulus, seq, 1)}\n{ANSWER_FORMAT}"
    return PromptBundle(setup, _SYSTEM, user, (image_ref(stimulus),))


def parse_verdict(raw: str | None) -> PceLabel | None:
    """First yes/no/unclear word (any case) in ``raw``; None when there is none."""
    if not raw:
        return None
    m = _VERDICT_RE.search(raw)
    return PceLabel.parse(m.group(1)) if m else None


# -- clients ------------------------------------------------------------------

class TransportError(RuntimeError):
    pass


class CompletionClient(Protocol):
    def send(self, bundle: PromptBundle) -> str: ...


class MockClient:
    """Offline client; ``reply`` is a fixed string or a function of the bundle."""

    def __init__(self, reply: str | Callable[[PromptBundle], str]):
        self.reply = reply
        self.calls = 0

    def send(self, bundle: PromptBundle) -> str:
        self.calls += 1
        return self.reply(bundle) if callable(self.reply) else self.reply


class HttpChatClient:
    """Chat-completion endpoint speaking the common ``{model, messages}`` JSON shape.

    The bearer token is read from the environment at send time and never
    stored on the instance or logged.
    """

    def __init__(self, url: str, model: str, token_env: str = TOKEN_ENV, timeout: float = 60.0,
                 retries: int = 2, backoff: float = 1.0):
        self.url = url
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def __repr__(self):
        return f"HttpChatClient(url={self.url!r}, model={self.model!r})"

    def payload(self, bundle: PromptBundle) -> dict:
        content = [{"type": "text", "text": bundle.user_text}]
        content += [{"type": "image_url", "image_url": {"url": ref}} for ref in bundle.attachments]
        return {
            "model": self.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": content},
            ],
        }

    def send(self, bundle: PromptBundle) -> str:
        body = json.dumps(self.payload(bundle)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return _first_choice_text(json.loads(resp.read().decode("utf-8")))
            except (urllib.error.URLError, TimeoutError, ValueError, KeyError) as exc:
                last = f"{type(exc).__name__}: {getattr(exc, 'reason', exc)}"
                log.warning("request to %s failed (attempt %d/%d): %s", self.url, attempt + 1, self.retries + 1, last)
                if attempt < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise TransportError(f"{self.url}: giving up after {self.retries + 1} attempts ({last})")


def _first_choice_text(obj: Mapping) -> str:
    content = obj["choices"][0]["message"]["content"]
    if isinstance(content, list):
        return "".join(p.get("text", "") for p in content if isinstance(p, Mapping))
    return str(content)


# -- evaluation ---------------------------------------------------------------

@dataclass
class InContextResult:
    report: EvalReport | None
    records: list[dict]
    failed: list[dict] = field(default_factory=list)


def pick_demo(sample: PceSample, pool: Sequence[PceSample]) -> PceSample | None:
    """First pool sample from the same participant on a different stimulus."""
    for d in pool:
        if d.participant_id == sample.participant_id and d.stimulus_id != sample.stimulus_id:
            return d
    return None


def run_incontext_eval(split: Dataset, setup, client: CompletionClient, protocol: str = "3class",
                       transcript: str | Path | None = None, demo_pool: Sequence[PceSample] = (),
                       workers: int = 4) -> InContextResult:
    """One request per sample, verdicts scored by :func:`evaluate`.

    Failed requests (transport errors, no demonstration available) are
    listed in ``failed`` and left out of the report; unparseable answers
    stay in and count as errors.
    """
    setup = Setup.parse(setup)

    def one(sample: PceSample) -> dict:
        rec = {"participant_id": sample.participant_id, "stimulus_id": sample.stimulus_id,
               "setup": setup.value, "gold": sample.label.text}
        try:
            demo = pick_demo(sample, demo_pool) if setup is Setup.ONE else None
            if setup is Setup.ONE and demo is None:
                raise LookupError("no demonstration from this participant")
            bundle = build_prompt(sample, split.stimuli[sample.stimulus_id], setup, demo,
                                  split.stimuli[demo.stimulus_id] if demo else None)
            rec["prompt_hash"] = bundle.digest()
            if demo is not None:
                rec["demo_stimulus_id"] = demo.stimulus_id
            raw = client.send(bundle)
        except (TransportError, LookupError) as exc:
            rec.update(status="failed", error=str(exc), raw=None, verdict=None)
            return rec
        verdict = parse_verdict(raw)
        rec.update(status="ok", raw=raw, verdict=verdict.text if verdict is not None else None)
        return rec

    samples = list(split.samples)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(one, samples))
    else:
        records = [one(s) for s in samples]
    if transcript is not None:
        path = Path(transcript)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return _score(records, protocol)


def _score(records: list[dict], protocol: str) -> InContextResult:
    ok = [r for r in records if r["status"] == "ok"]
    failed = [r for r in records if r["status"] != "ok"]
    report = None
    if ok:
        preds = [PceLabel.parse(r["verdict"]) if r["verdict"] is not None else None for r in ok]
        report = evaluate(preds, [PceLabel.parse(r["gold"]) for r in ok], protocol)
    return InContextResult(report, records, failed)


def replay_transcript(path: str | Path, protocol: str = "3class") -> InContextResult:
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return _score(records, protocol)
