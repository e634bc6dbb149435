"""Schema-versioned JSON model and parameter files.

Three document kinds share a header ``{"format": ..., "version": 1}``:

``bidirq-model``
    A finite scattering model.  States are listed with a label, a sector
    (``"F"``/``"B"``) and a diagonal ``H0`` energy; forward states are placed
    before backward ones in the working basis, each group in file order.
    ``bands`` generate equally spaced quasi-continuum levels (midpoints of
    ``count`` cells on ``[e_min, e_max]``) with an optional constant coupling
    to one state.  Off-diagonal ``h0``/``h1`` entries are ``[row, col, value]``
    with labels and a real or ``[re, im]`` value; ``"complete": true``
    fills in each mirror entry so that the operator is pseudo-Hermitian.
    ``channels`` attach a density of states either to one state (wide-band)
    or to a band.
``bidirq-vacuum``
    Parameters of the two-channel vacuum model plus a ``tau`` grid.
``bidirq-cross-section``
    Couplings plus either CM energies in joules or lengths ``hbar c / E_CM``
    in metres.

Every failure raises :class:`ModelFileError` with a line/column (syntax) or
a JSON path (structure and semantics).
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple

import jsonschema
import numpy as np

from bidirq.errors import BidirqError, ModelFileError
from bidirq.krein import BlockOperator, KreinSignature
from bidirq.models import CouplingConstants, VacuumParams
from bidirq.scattering import (
    Channel,
    ConstantDensity,
    SpectralModel,
    TabulatedDensity,
    canonical_form,
)

VERSION = 1

_NUMBER = {"type": "number"}
_COMPLEX = {
    "oneOf": [_NUMBER, {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2}]
}
_ENTRY = {
    "type": "array",
    "prefixItems": [{"type": "string"}, {"type": "string"}, _COMPLEX],
    "minItems": 3,
    "maxItems": 3,
}
_OPERATOR = {
    "type": "object",
    "properties": {
        "entries": {"type": "array", "items": _ENTRY},
        "complete": {"type": "boolean"},
    },
    "additionalProperties": False,
}
_DENSITY = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "constant": {"type": "number", "exclusiveMinimum": 0},
                "support": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
            },
            "required": ["constant"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "table": {
                    "type": "array",
                    "items": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                    "minItems": 2,
                }
            },
            "required": ["table"],
            "additionalProperties": False,
        },
    ]
}
_GRID = {
    "oneOf": [
        {"type": "array", "items": _NUMBER},
        {
            "type": "object",
            "properties": {
                "start": _NUMBER,
                "stop": _NUMBER,
                "num": {"type": "integer", "minimum": 0},
            },
            "required": ["start", "stop", "num"],
            "additionalProperties": False,
        },
    ]
}
_SECTOR = {"enum": ["F", "B"]}
_HEADER = {"version": {"const": VERSION}}

MODEL_SCHEMA = {
    "type": "object",
    "properties": {
        "format": {"const": "bidirq-model"},
        **_HEADER,
        "name": {"type": "string"},
        "description": {"type": "string"},
        "states": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "label": {"type": "string", "minLength": 1},
                    "sector": _SECTOR,
                    "energy": _NUMBER,
                },
                "required": ["label", "sector"],
                "additionalProperties": False,
            },
        },
        "bands": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "sector": _SECTOR,
                    "count": {"type": "integer", "minimum": 1},
                    "e_min": _NUMBER,
                    "e_max": _NUMBER,
                    "coupling": {
                        "type": "object",
                        "properties": {"state": {"type": "string"}, "value": _COMPLEX},
                        "required": ["state", "value"],
                        "additionalProperties": False,
                    },
                },
                "required": ["name", "sector", "count", "e_min", "e_max"],
                "additionalProperties": False,
            },
        },
        "h0": _OPERATOR,
        "h1": _OPERATOR,
        "channels": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "name": {"type": "string", "minLength": 1},
                    "kind": {"enum": ["wide-band", "band"]},
                    "state": {"type": "string"},
                    "band": {"type": "string"},
                    "density": _DENSITY,
                },
                "required": ["name", "kind"],
                "additionalProperties": False,
            },
        },
        "energy_grid": _GRID,
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "rate_check": {
            "type": "object",
            "properties": {
                "source": {"type": "string"},
                "target": {"type": "string"},
                "energy": _NUMBER,
                "times": _GRID,
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["source", "target", "energy", "times"],
            "additionalProperties": False,
        },
        "io_demo": {
            "type": "object",
            "properties": {
                "t_minus": _NUMBER,
                "t_plus": _NUMBER,
                "segments": {"type": "integer", "minimum": 1},
                "input": {"type": "object", "additionalProperties": _COMPLEX},
            },
            "required": ["t_minus", "t_plus"],
            "additionalProperties": False,
        },
    },
    "required": ["format", "version", "states"],
    "additionalProperties": False,
}

_COUPLINGS = {
    "type": "object",
    "properties": {
        "zeta_f": {"type": "number", "minimum": 0},
        "zeta_b": {"type": "number", "minimum": 0},
        "xi": _NUMBER,
    },
    "required": ["zeta_f", "zeta_b", "xi"],
    "additionalProperties": False,
}

VACUUM_SCHEMA = {
    "type": "object",
    "properties": {
        "format": {"const": "bidirq-vacuum"},
        **_HEADER,
        "name": {"type": "string"},
        "description": {"type": "string"},
        "couplings": _COUPLINGS,
        "e0": _NUMBER,
        "e1": {"type": "number", "exclusiveMinimum": 0},
        "theta": _NUMBER,
        "psi": _NUMBER,
        "tau_grid": _GRID,
        "samples": {"type": "integer", "minimum": 2},
    },
    "required": ["format", "version", "couplings", "e0", "e1", "theta", "psi", "tau_grid"],
    "additionalProperties": False,
}

CROSS_SECTION_SCHEMA = {
    "type": "object",
    "properties": {
        "format": {"const": "bidirq-cross-section"},
        **_HEADER,
        "name": {"type": "string"},
        "description": {"type": "string"},
        "couplings": _COUPLINGS,
        "e_cm_joule": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "length_m": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
    },
    "required": ["format", "version", "couplings"],
    "oneOf": [{"required": ["e_cm_joule"]}, {"required": ["length_m"]}],
    "additionalProperties": False,
}

SCHEMAS = {
    "bidirq-model": MODEL_SCHEMA,
    "bidirq-vacuum": VACUUM_SCHEMA,
    "bidirq-cross-section": CROSS_SECTION_SCHEMA,
}


def _json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def read_document(path, expected: Optional[str] = None):
    """Parse and schema-check a file; return ``(document, sha256 hex digest)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ModelFileError(f"cannot read file: {exc.strerror}", where=str(path)) from exc
    try:
        doc = json.loads(raw.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ModelFileError("file is not UTF-8 text", where=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ModelFileError(exc.msg, where=f"{path}:{exc.lineno}:{exc.colno}") from exc
    if not isinstance(doc, dict) or "format" not in doc:
        raise ModelFileError("missing 'format' header", where="$")
    fmt = doc["format"]
    if fmt not in SCHEMAS:
        raise ModelFileError(f"unknown format {fmt!r}", where="$.format")
    if expected is not None and fmt != expected:
        raise ModelFileError(f"expected a {expected!r} document, got {fmt!r}", where="$.format")
    errors = schema_errors(doc)
    if errors:
        raise ModelFileError("; ".join(f"{w}: {m}" for w, m in errors))
    return doc, hashlib.sha256(raw).hexdigest()


def schema_errors(doc) -> list:
    """All schema violations as ``(json path, message)`` pairs, sorted by path."""
    schema = SCHEMAS.get(doc.get("format")) if isinstance(doc, dict) else None
    if schema is None:
        return [("$.format", "unknown or missing format")]
    validator = jsonschema.Draft202012Validator(schema)
    found = [(_json_path(e.absolute_path), e.message) for e in validator.iter_errors(doc)]
    return sorted(found)


def _complex(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, list) else complex(v)


def grid(spec) -> np.ndarray:
    if isinstance(spec, dict):
        return np.linspace(spec["start"], spec["stop"], spec["num"])
    return np.asarray(spec, dtype=float)


def _density(spec, where):
    if spec is None:
        return None
    try:
        if "table" in spec:
            tab = np.asarray(spec["table"], dtype=float)
            return TabulatedDensity(tab[:, 0], tab[:, 1])
        lo, hi = spec.get("support", (-np.inf, np.inf))
        if not lo < hi:
            raise ValueError("support must satisfy lo < hi")
        return ConstantDensity(float(spec["constant"]), float(lo), float(hi))
    except ValueError as exc:
        raise ModelFileError(str(exc), where=where) from exc


@dataclass(frozen=True, eq=False)
class ScatteringSetup:
    """Everything a scattering scenario needs, built from a ``bidirq-model`` file."""

    name: str
    labels: Tuple[str, ...]
    h0: BlockOperator
    h1: BlockOperator
    model: SpectralModel
    energies: np.ndarray
    eps: Optional[float]
    band_spacing: Optional[float]
    document: dict
    sha256: str

    @property
    def signature(self) -> KreinSignature:
        return self.h0.signature

    @property
    def default_eps(self) -> float:
        """Explicit ``eps`` if given, else three band spacings, else ``1e-12``."""
        if self.eps is not None:
            return self.eps
        if self.band_spacing is not None:
            return 3.0 * self.band_spacing
        return 1e-12


def _fill(doc_op, index, sectors, n, where, base=None):
    mat = np.zeros((n, n), dtype=complex) if base is None else base
    if not doc_op:
        return mat
    alpha = np.where(np.array(sectors) == "F", 1.0, -1.0)
    complete = doc_op.get("complete", False)
    for k, (a, b, v) in enumerate(doc_op.get("entries", [])):
        for lab, pos in ((a, 0), (b, 1)):
            if lab not in index:
                raise ModelFileError(f"unknown state label {lab!r}", where=f"{where}.entries[{k}][{pos}]")
        i, j = index[a], index[b]
        val = _complex(v)
        mat[i, j] += val
        if complete and i != j:
            mat[j, i] += alpha[i] * alpha[j] * np.conj(val)
    return mat


def build_setup(doc: dict, sha256: str = "") -> ScatteringSetup:
    """Turn a schema-valid ``bidirq-model`` document into operators and a canonical model."""
    states = [dict(s) for s in doc["states"]]
    band_slots = {}
    spacing = None
    for b_i, band in enumerate(doc.get("bands", [])):
        if not band["e_max"] > band["e_min"]:
            raise ModelFileError("need e_max > e_min", where=f"$.bands[{b_i}]")
        step = (band["e_max"] - band["e_min"]) / band["count"]
        spacing = step if spacing is None else min(spacing, step)
        labels = [f"{band['name']}[{k}]" for k in range(band["count"])]
        band_slots[band["name"]] = labels
        for k, lab in enumerate(labels):
            states.append({"label": lab, "sector": band["sector"], "energy": band["e_min"] + (k + 0.5) * step})
    ordered = [s for s in states if s["sector"] == "F"] + [s for s in states if s["sector"] == "B"]
    labels = [s["label"] for s in ordered]
    if len(set(labels)) != len(labels):
        dup = sorted({lab for lab in labels if labels.count(lab) > 1})
        raise ModelFileError(f"duplicate state labels {dup}", where="$.states")
    if not labels:
        raise ModelFileError("model has no states", where="$.states")
    index = {lab: i for i, lab in enumerate(labels)}
    sectors = [s["sector"] for s in ordered]
    n = len(labels)
    sig = KreinSignature(sectors.count("F"), sectors.count("B"))

    h0 = np.diag([complex(s.get("energy", 0.0)) for s in ordered])
    h0 = _fill(doc.get("h0"), index, sectors, n, "$.h0", h0)
    h1 = _fill(doc.get("h1"), index, sectors, n, "$.h1")
    alpha = np.where(np.array(sectors) == "F", 1.0, -1.0)
    for b_i, band in enumerate(doc.get("bands", [])):
        cpl = band.get("coupling")
        if cpl is None:
            continue
        if cpl["state"] not in index:
            raise ModelFileError(f"unknown state label {cpl['state']!r}", where=f"$.bands[{b_i}].coupling.state")
        d = index[cpl["state"]]
        g = _complex(cpl["value"])
        for lab in band_slots[band["name"]]:
            k = index[lab]
            h1[k, d] += g
            h1[d, k] += alpha[k] * alpha[d] * np.conj(g)

    H0, H1 = BlockOperator(h0, sig), BlockOperator(h1, sig)
    try:
        model = canonical_form(H0)
    except BidirqError as exc:
        raise ModelFileError(f"{type(exc).__name__}: {exc}", where="$.h0") from exc
    slot_labels = [labels[s] for s in model.source_index]

    channels = []
    names = set()
    for c_i, ch in enumerate(doc.get("channels", [])):
        where = f"$.channels[{c_i}]"
        if ch["name"] in names:
            raise ModelFileError(f"duplicate channel name {ch['name']!r}", where=f"{where}.name")
        names.add(ch["name"])
        density = _density(ch.get("density"), f"{where}.density")
        if ch["kind"] == "wide-band":
            lab = ch.get("state")
            if lab not in index:
                raise ModelFileError("wide-band channel needs a known 'state'", where=f"{where}.state")
            if density is None:
                raise ModelFileError("wide-band channel needs a 'density'", where=f"{where}.density")
            try:
                slot = model.slot_of_state(index[lab])
            except ValueError as exc:
                raise ModelFileError(str(exc), where=f"{where}.state") from exc
            channels.append(Channel(ch["name"], sectors[index[lab]], (slot,), density, "wide-band"))
        else:
            band_name = ch.get("band")
            if band_name not in band_slots:
                raise ModelFileError("band channel needs a known 'band'", where=f"{where}.band")
            band = next(b for b in doc["bands"] if b["name"] == band_name)
            try:
                slots = tuple(model.slot_of_state(index[lab]) for lab in band_slots[band_name])
            except ValueError as exc:
                raise ModelFileError(str(exc), where=f"{where}.band") from exc
            if density is None:
                step = (band["e_max"] - band["e_min"]) / band["count"]
                density = ConstantDensity(1.0 / step, band["e_min"], band["e_max"])
            channels.append(Channel(ch["name"], band["sector"], slots, density, "band"))
    model = model.with_channels(channels, slot_labels)
    energies = grid(doc["energy_grid"]) if "energy_grid" in doc else np.zeros(0)
    return ScatteringSetup(
        doc.get("name", ""), tuple(labels), H0, H1, model, energies, doc.get("eps"), spacing, doc, sha256
    )


def load_model(path) -> ScatteringSetup:
    """Read a ``bidirq-model`` file."""
    doc, digest = read_document(path, "bidirq-model")
    return build_setup(doc, digest)


@dataclass(frozen=True, eq=False)
class VacuumSetup:
    params: VacuumParams  # tau is the last grid value
    taus: np.ndarray
    samples: int
    document: dict
    sha256: str


def load_vacuum(path) -> VacuumSetup:
    """Read a ``bidirq-vacuum`` file."""
    doc, digest = read_document(path, "bidirq-vacuum")
    c = doc["couplings"]
    taus = grid(doc["tau_grid"])
    if taus.size and (np.any(taus <= 0) or np.any(np.diff(taus) <= 0)):
        raise ModelFileError("tau grid must be positive and strictly increasing", where="$.tau_grid")
    tau = float(taus[-1]) if taus.size else 1.0
    params = VacuumParams(
        CouplingConstants(c["zeta_f"], c["zeta_b"], c["xi"]), doc["e0"], doc["e1"], tau, doc["theta"], doc["psi"]
    )
    return VacuumSetup(params, taus, int(doc.get("samples", 11)), doc, digest)


@dataclass(frozen=True, eq=False)
class CrossSectionSetup:
    couplings: CouplingConstants
    e_cm: Optional[np.ndarray]
    lengths: Optional[np.ndarray]
    document: dict
    sha256: str


def load_cross_section(path) -> CrossSectionSetup:
    """Read a ``bidirq-cross-section`` file."""
    doc, digest = read_document(path, "bidirq-cross-section")
    c = doc["couplings"]
    e = np.asarray(doc["e_cm_joule"], float) if "e_cm_joule" in doc else None
    lengths = np.asarray(doc["length_m"], float) if "length_m" in doc else None
    return CrossSectionSetup(CouplingConstants(c["zeta_f"], c["zeta_b"], c["xi"]), e, lengths, doc, digest)
