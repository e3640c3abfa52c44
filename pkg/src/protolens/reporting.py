"""Human-facing explanations: which prototypes drove a prediction, and which
verbatim piece of the input each one looked at.

Char offsets always index the original input string, so every reported span
is a literal substring of it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Instance, tokenize_with_spans
from .errors import NotAlignedError
from .model import ForwardRecord, ProtoLensModel
from .spans import (
    SPAN_THRESHOLD,
    MixtureParams,
    extract_discrete_span,
    extract_soft_mask,
)

NO_SPAN_MESSAGE = "(no span above threshold)"


@dataclass
class PrototypeRow:
    prototype_id: int
    aligned_sentence: str
    span_text: str
    span_part_range: tuple[int, int] | None  # 1-based inclusive part indices
    similarity_score: float
    class_weight: float

    def to_dict(self) -> dict:
        return {
            "prototype_id": self.prototype_id,
            "aligned_sentence": self.aligned_sentence,
            "span_text": self.span_text,
            "span_part_range": (
                list(self.span_part_range) if self.span_part_range else None
            ),
            "similarity_score": self.similarity_score,
            "class_weight": self.class_weight,
        }


@dataclass
class ExplanationReport:
    text: str
    prediction: dict  # {"class": int, "probability": float}
    prototypes: list[PrototypeRow]  # all K, descending similarity_score

    def to_dict(self) -> dict:
        return {
            "prediction": dict(self.prediction),
            "prototypes": [row.to_dict() for row in self.prototypes],
        }


@dataclass
class TableRow:
    prototype_id: int
    aligned_sentence: str
    class_weight: float

    @property
    def polarity(self) -> str:
        return "+" if self.class_weight >= 0 else "-"

    def to_dict(self) -> dict:
        return {
            "prototype_id": self.prototype_id,
            "aligned_sentence": self.aligned_sentence,
            "class_weight": self.class_weight,
        }


@dataclass
class PrototypeTable:
    rows: list[TableRow]  # K rows ordered by prototype id

    def to_dict(self) -> dict:
        return {"rows": [row.to_dict() for row in self.rows]}


def _aligned_sentences(model: ProtoLensModel) -> dict[int, str]:
    """Latest alignment round's rank-1 representative per prototype."""
    if not model.alignment_log:
        raise NotAlignedError(
            "model has never been aligned; no prototype interpretations exist"
        )
    sentences: dict[int, str] = {}
    for event in model.alignment_log:  # later rounds overwrite earlier ones
        if event.representatives:
            sentences[event.prototype] = event.representatives[0]
    return sentences


def _class_weight(model: ProtoLensModel, k: int, predicted: int) -> float:
    """Scalar head coefficient shown for prototype k.

    Two-class models report the positive-class contribution; with more
    classes the predicted class's column entry is shown.
    """
    if model.num_classes == 2:
        return model.class_weight_of(k)
    return float(model.head_weights[predicted, k])


def _char_span(
    text: str, part_range: tuple[int, int], n_gram: int, max_tokens: int
) -> tuple[int, int]:
    """Character offsets covered by a 1-based inclusive part index range."""
    tokens = tokenize_with_spans(text)[:max_tokens]
    lo_part, hi_part = part_range
    if len(tokens) < n_gram:
        # the whole (short) token run is a single part
        return tokens[0].start, tokens[-1].end
    first_token = lo_part - 1
    last_token = min(hi_part - 1 + n_gram - 1, len(tokens) - 1)
    return tokens[first_token].start, tokens[last_token].end


def explain_instance(
    model: ProtoLensModel, text: str, record: ForwardRecord | None = None
) -> ExplanationReport:
    """Forward the text and report every prototype's span and weight.

    Rows are sorted by descending similarity score (the gain-scaled value the
    head consumes); ties keep prototype order. Spans are the discrete
    rendering of each prototype's winning mixture component.
    """
    aligned = _aligned_sentences(model)
    if record is None:
        record = model.forward(Instance(text=text, label=0))
    predicted = int(np.argmax(record.probs))
    prediction = {
        "class": predicted,
        "probability": float(record.probs[predicted]),
    }

    rows = []
    for k in range(model.config.K):
        params = MixtureParams(
            nu=record.nu[k],
            pi_raw=record.pi_raw[k],
            pi_norm=record.pi_norm[k],
            mu=record.mu[k],
            sigma=record.sigma[k],
        )
        if record.T < 1:
            part_range = None
        else:
            mask = extract_soft_mask(params, model.config.R, record.T)
            part_range = extract_discrete_span(mask, SPAN_THRESHOLD)
        if part_range is None:
            span_text = ""
        else:
            lo, hi = _char_span(
                text, part_range, model.config.n_gram, model.max_tokens
            )
            span_text = text[lo:hi]
        rows.append(
            PrototypeRow(
                prototype_id=k,
                aligned_sentence=aligned.get(k, ""),
                span_text=span_text,
                span_part_range=part_range,
                similarity_score=float(record.normed[k]),
                class_weight=_class_weight(model, k, predicted),
            )
        )
    rows.sort(key=lambda row: (-row.similarity_score, row.prototype_id))
    return ExplanationReport(text=text, prediction=prediction, prototypes=rows)


def prototype_table(model: ProtoLensModel) -> PrototypeTable:
    """One row per prototype in id order: interpretation and head weight."""
    aligned = _aligned_sentences(model)
    rows = [
        TableRow(
            prototype_id=k,
            aligned_sentence=aligned.get(k, ""),
            class_weight=(
                model.class_weight_of(k)
                if model.num_classes == 2
                else float(np.max(model.head_weights[:, k]))
            ),
        )
        for k in range(model.config.K)
    ]
    return PrototypeTable(rows=rows)


def render(report, format: str = "text", top: int | None = None) -> bytes:
    """Serialize a report for output.

    JSON is canonical (sorted keys, no whitespace) so identical inputs give
    identical bytes. Text is a fixed-layout table with spans set off in
    double brackets. ``top`` limits how many prototype rows appear.
    """
    if format == "json":
        payload = _trim(report.to_dict(), top)
        return (
            json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"
        ).encode("utf-8")
    if format == "text":
        if isinstance(report, ExplanationReport):
            return _render_explanation_text(report, top)
        if isinstance(report, PrototypeTable):
            return _render_table_text(report, top)
        raise ValueError(f"cannot render {type(report).__name__} as text")
    raise ValueError(f"unknown render format {format!r}, expected text or json")


def _trim(payload: dict, top: int | None) -> dict:
    if top is None:
        return payload
    trimmed = dict(payload)
    for key in ("prototypes", "rows"):
        if key in trimmed:
            trimmed[key] = trimmed[key][:top]
    return trimmed


def _render_explanation_text(report: ExplanationReport, top: int | None) -> bytes:
    lines = [
        f"text: {report.text}",
        f"prediction: class {report.prediction['class']} "
        f"(p={report.prediction['probability']:.4f})",
        "",
        f"{'proto':>5}  {'sim':>8}  {'weight':>8}  span / aligned sentence",
    ]
    rows = report.prototypes if top is None else report.prototypes[:top]
    for row in rows:
        shown = f"[[{row.span_text}]]" if row.span_text else NO_SPAN_MESSAGE
        lines.append(
            f"{row.prototype_id:>5}  {row.similarity_score:>8.4f}  "
            f"{row.class_weight:>8.4f}  {shown}"
        )
        if row.aligned_sentence:
            lines.append(f"{'':>5}  {'':>8}  {'':>8}  ~ {row.aligned_sentence}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _render_table_text(table: PrototypeTable, top: int | None) -> bytes:
    lines = [f"{'proto':>5}  {'pol':>3}  {'weight':>9}  aligned sentence"]
    rows = table.rows if top is None else table.rows[:top]
    for row in rows:
        lines.append(
            f"{row.prototype_id:>5}  {row.polarity:>3}  "
            f"{row.class_weight:>9.4f}  {row.aligned_sentence}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")
