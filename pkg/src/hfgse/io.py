"""Instance files, the synthetic mini-AMES fixture and result exports.

Instance files are UTF-8 JSON documents::

    {
      "horizon": 12, "dt": 1.0,
      "operands":     [{"id": "coal", "name": "Coal", "unit": "GJ"}, ...],
      "buffers":      [{"id": "R1.mine", "location": "R1", "kind": "plant"}, ...],
      "capabilities": [{"id": "R1.gen_coal", "origin": "R1.coal_plant",
                        "destination": "R1.coal_plant",
                        "process": {"kind": "transformation",
                                    "inputs": [{"operand": "coal", "coefficient": 3.102}],
                                    "outputs": [{"operand": "elec", "coefficient": 1.0}]},
                        "duration": 0, "capacity": null}, ...],
      "measurements": [{"id": "R1.demand", "capabilities": ["R1.withdraw_elec"],
                        "resolution": "step", "values": [...], "unit": "MWh"}, ...],
      "capacities":   {"R1.gen_nuclear": 255.0}
    }

A measurement gives either explicit ``buckets`` (lists of 1-based steps) or a
``resolution`` of ``"step"`` (one value per step) or ``"horizon"`` (a single
total).  Values are converted to GJ on load.
"""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from pathlib import Path
from typing import NamedTuple

import jsonschema
import numpy as np

from .core import (Buffer, Capability, Operand, ProcessKind, ProcessSpec, SystemArchitecture,
                   incidence_matrices, validate_architecture)
from .wlse import CapacitySet, EstimationResult, MeasurementError, MeasurementSeries, error_report

GJ_PER_UNIT = {
    "GJ": 1.0,
    "MJ": 1e-3,
    "TJ": 1e3,
    "PJ": 1e6,
    "MWh": 3.6,
    "GWh": 3600.0,
    "thousand MWh": 3600.0,
    "MMBtu": 1.055056,
    "BBtu": 1055.056,
}


def to_gj(value, unit: str):
    try:
        return np.asarray(value, dtype=float) * GJ_PER_UNIT[unit]
    except KeyError:
        raise ValueError(f"unknown energy unit {unit!r}") from None


class InstanceError(Exception):
    exit_code = 1

    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        super().__init__(message)


class InstanceParseError(InstanceError):
    exit_code = 5


class InstanceSchemaError(InstanceError):
    exit_code = 6


class InstanceValidationError(InstanceError):
    exit_code = 3


class ExportError(ValueError):
    pass


_coef_list = {"type": "array", "items": {
    "type": "object", "additionalProperties": False,
    "required": ["operand", "coefficient"],
    "properties": {"operand": {"type": "string"}, "coefficient": {"type": "number"}}}}

INSTANCE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["operands", "buffers", "capabilities", "horizon"],
    "properties": {
        "horizon": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "operands": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["id"],
            "properties": {"id": {"type": "string", "minLength": 1}, "name": {"type": "string"},
                           "unit": {"type": "string"}}}},
        "buffers": {"type": "array", "items": {
            "type": "object", "additionalProperties": False, "required": ["id"],
            "properties": {"id": {"type": "string", "minLength": 1}, "name": {"type": "string"},
                           "location": {"type": "string"},
                           "kind": {"enum": ["plant", "terminal", "port", "substation",
                                             "junction"]}}}},
        "capabilities": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["id", "process", "origin", "destination"],
            "properties": {
                "id": {"type": "string", "minLength": 1},
                "name": {"type": "string"},
                "origin": {"type": "string"},
                "destination": {"type": "string"},
                "duration": {"type": "integer"},
                "capacity": {"type": ["number", "null"]},
                "process": {"type": "object", "additionalProperties": False,
                            "required": ["kind"],
                            "properties": {
                                "kind": {"enum": [k.value for k in ProcessKind]},
                                "name": {"type": "string"},
                                "inputs": _coef_list, "outputs": _coef_list}}}}},
        "measurements": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["id", "capabilities", "values"],
            "oneOf": [{"required": ["buckets"]}, {"required": ["resolution"]}],
            "properties": {
                "id": {"type": "string", "minLength": 1},
                "capabilities": {"type": "array", "items": {"type": "string"}},
                "buckets": {"type": "array", "items": {
                    "type": "array", "items": {"type": "integer"}}},
                "resolution": {"enum": ["step", "horizon"]},
                "values": {"type": "array", "items": {"type": "number"}},
                "unit": {"enum": sorted(GJ_PER_UNIT)},
                "weight": {"type": "number", "exclusiveMinimum": 0},
                "process": {"type": "string"},
                "region": {"type": "string"}}}},
        "capacities": {"type": "object", "additionalProperties": {"type": "number"}},
    },
}


class Instance(NamedTuple):
    arch: SystemArchitecture
    measurements: tuple
    capacities: CapacitySet
    horizon: int
    dt: float = 1.0


def _pairs(items):
    return tuple((d["operand"], d["coefficient"]) for d in items or ())


def _path(err) -> str:
    return "/".join(str(p) for p in err.absolute_path) or "<root>"


def parse_instance(doc) -> Instance:
    """Schema-check and validate a decoded instance document."""
    validator = jsonschema.Draft202012Validator(INSTANCE_SCHEMA)
    errs = sorted(validator.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)),
                                                            e.message))
    if errs:
        diags = [f"{_path(e)}: {e.message}" for e in errs]
        raise InstanceSchemaError(f"schema violation: {diags[0]}", diags)

    K = doc["horizon"]
    operands = [Operand(o["id"], o.get("name", ""), o.get("unit", "GJ")) for o in doc["operands"]]
    buffers = [Buffer(b["id"], b.get("name", ""), b.get("location", ""), b.get("kind", "junction"))
               for b in doc["buffers"]]
    caps = []
    for c in doc["capabilities"]:
        p = c["process"]
        proc = ProcessSpec(p["kind"], _pairs(p.get("inputs")), _pairs(p.get("outputs")),
                           p.get("name", ""))
        caps.append(Capability(c["id"], proc, c["origin"], c["destination"],
                               c.get("duration", 0), c.get("capacity"), c.get("name", "")))
    arch = SystemArchitecture(operands, buffers, caps)
    diags = [str(v) for v in validate_architecture(arch)]

    known = set(arch.capability_ids())
    measurements = []
    for m in doc.get("measurements", []):
        bad = [c for c in m["capabilities"] if c not in known]
        if bad:
            diags.append(f"{m['id']}: unknown capability ({bad[0]})")
            continue
        if "buckets" in m:
            buckets = m["buckets"]
        elif m["resolution"] == "step":
            buckets = [[k] for k in range(1, len(m["values"]) + 1)]
        else:
            buckets = [list(range(1, K + 1))]
        outside = sorted({k for b in buckets for k in b if not 1 <= k <= K})
        if outside:
            diags.append(f"{m['id']}: steps {outside} outside 1..{K}")
            continue
        unit = m.get("unit", "GJ")
        try:
            measurements.append(MeasurementSeries(
                m["id"], tuple(m["capabilities"]), tuple(map(tuple, buckets)),
                to_gj(m["values"], unit), m.get("weight"), "GJ", m.get("process"),
                m.get("region")))
        except MeasurementError as exc:
            diags.append(str(exc))
    ids = [m["id"] for m in doc.get("measurements", [])]
    for dup in sorted({i for i in ids if ids.count(i) > 1}):
        diags.append(f"{dup}: duplicate measurement id")

    overrides = doc.get("capacities", {})
    for cid in sorted(overrides):
        if cid not in known:
            diags.append(f"capacities: unknown capability ({cid})")
        elif not overrides[cid] >= 0:
            diags.append(f"capacities: {cid} must be nonnegative")
    if diags:
        raise InstanceValidationError(f"invalid instance: {diags[0]}", diags)
    capacities = CapacitySet.from_architecture(arch, overrides)
    return Instance(arch, tuple(measurements), capacities, K, float(doc.get("dt", 1.0)))


def load_instance(path) -> Instance:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InstanceParseError(f"cannot read {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_instance(doc)


def instance_to_dict(inst: Instance) -> dict:
    """Inverse of :func:`parse_instance`; values are written in GJ."""
    arch = inst.arch

    def coefs(pairs):
        return [{"operand": o, "coefficient": c} for o, c in pairs]

    caps = []
    for c in arch.capabilities:
        proc = {"kind": c.process.kind.value, "inputs": coefs(c.process.inputs),
                "outputs": coefs(c.process.outputs)}
        if c.process.name:
            proc["name"] = c.process.name
        d = {"id": c.id, "name": c.name, "origin": c.origin, "destination": c.destination,
             "duration": int(c.duration), "capacity": c.capacity, "process": proc}
        caps.append(d)
    meas = []
    for s in inst.measurements:
        d = {"id": s.id, "capabilities": list(s.capabilities),
             "buckets": [list(b) for b in s.buckets], "values": [float(v) for v in s.values],
             "unit": "GJ"}
        for key in ("weight", "process", "region"):
            if getattr(s, key) is not None:
                d[key] = getattr(s, key)
        meas.append(d)
    arch_caps = {c.id: c.capacity for c in arch.capabilities}
    extra = {k: v for k, v in inst.capacities.bounds.items() if arch_caps.get(k) != v}
    return {
        "horizon": int(inst.horizon), "dt": float(inst.dt),
        "operands": [{"id": o.id, "name": o.name, "unit": o.unit} for o in arch.operands],
        "buffers": [{"id": b.id, "name": b.name, "location": b.location, "kind": b.kind.value}
                    for b in arch.buffers],
        "capabilities": caps,
        "measurements": meas,
        "capacities": extra,
    }


def dumps_json(doc) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


# process weights, GJ of input per GJ of electricity or processed oil
HEAT_RATES = {"coal": 3.102, "gas": 2.253, "oil": 3.289, "nuclear": 3.056}
REFINING = 1.285


def _seasonal(base, amplitude, peak_step, K=12):
    return [round(base * (1 + amplitude * math.cos(2 * math.pi * (k - peak_step) / 12)), 3)
            for k in range(1, K + 1)]


def make_mini_ames(region_count: int = 2) -> dict:
    """Synthetic coal, gas, oil and electricity network over 12 monthly steps.

    Each region has coal, gas, crude and nuclear fuel injections, a refinery,
    one power plant per fuel, a substation and withdrawals of electricity,
    gas, coal and processed oil.  With two regions, the first exports coal,
    gas, processed oil and electricity to the second, which has no coal mine
    output of its own.
    """
    if region_count not in (1, 2):
        raise ValueError("region_count must be 1 or 2")
    K = 12
    operands = [
        {"id": "coal", "name": "Coal", "unit": "GJ"},
        {"id": "gas", "name": "Processed natural gas", "unit": "GJ"},
        {"id": "crude", "name": "Crude oil", "unit": "GJ"},
        {"id": "oil", "name": "Processed oil", "unit": "GJ"},
        {"id": "nuclear", "name": "Nuclear fuel", "unit": "GJ"},
        {"id": "elec", "name": "Electric power", "unit": "GJ"},
    ]
    buffers, caps, meas, capacities = [], [], [], {}

    def proc(kind, inputs=(), outputs=(), name=""):
        d = {"kind": kind,
             "inputs": [{"operand": o, "coefficient": c} for o, c in inputs],
             "outputs": [{"operand": o, "coefficient": c} for o, c in outputs]}
        if name:
            d["name"] = name
        return d

    def cap(cid, p, origin, destination=None, name=""):
        caps.append({"id": cid, "name": name, "origin": origin,
                     "destination": destination or origin, "duration": 0, "capacity": None,
                     "process": p})

    for ri in range(region_count):
        r = f"R{ri + 1}"
        scale = 1.0 if ri == 0 else 0.6
        for b, kind in (("coal_mine", "plant"), ("gas_field", "terminal"),
                        ("oil_field", "terminal"), ("refinery", "plant"),
                        ("coal_plant", "plant"), ("gas_plant", "plant"), ("oil_plant", "plant"),
                        ("nuclear_plant", "plant"), ("substation", "substation")):
            buffers.append({"id": f"{r}.{b}", "name": f"{r} {b.replace('_', ' ')}",
                            "location": r, "kind": kind})
        for fuel, site in (("coal", "coal_mine"), ("gas", "gas_field"), ("crude", "oil_field"),
                           ("nuclear", "nuclear_plant")):
            if fuel == "coal" and ri == 1:
                continue  # the second region imports all of its coal
            cap(f"{r}.inject_{fuel}", proc("injection", outputs=[(fuel, 1.0)]), f"{r}.{site}")
        cap(f"{r}.move_crude", proc("transport", [("crude", 1.0)], [("crude", 1.0)]),
            f"{r}.oil_field", f"{r}.refinery")
        cap(f"{r}.refine", proc("transformation", [("crude", REFINING)], [("oil", 1.0)],
                                "process crude oil"), f"{r}.refinery")
        for fuel, src in (("coal", "coal_mine"), ("gas", "gas_field"), ("oil", "refinery")):
            cap(f"{r}.move_{fuel}", proc("transport", [(fuel, 1.0)], [(fuel, 1.0)]),
                f"{r}.{src}", f"{r}.{fuel}_plant")
        for fuel in ("coal", "gas", "oil", "nuclear"):
            cap(f"{r}.gen_{fuel}",
                proc("transformation", [(fuel, HEAT_RATES[fuel])], [("elec", 1.0)],
                     f"generate electric power from {fuel}"), f"{r}.{fuel}_plant")
            cap(f"{r}.transmit_{fuel}", proc("transport", [("elec", 1.0)], [("elec", 1.0)]),
                f"{r}.{fuel}_plant", f"{r}.substation")
        cap(f"{r}.withdraw_elec", proc("withdrawal", [("elec", 1.0)]), f"{r}.substation")
        for fuel, site in (("coal", "coal_mine"), ("gas", "gas_field"), ("oil", "refinery")):
            cap(f"{r}.withdraw_{fuel}", proc("withdrawal", [(fuel, 1.0)]), f"{r}.{site}")

        demand = _seasonal(1000.0 * scale, 0.15, 7)
        meas.append({"id": f"{r}.elec_demand", "capabilities": [f"{r}.withdraw_elec"],
                     "resolution": "step", "values": demand, "unit": "GJ"})
        shares = {"coal": 0.30, "gas": 0.40, "oil": 0.05, "nuclear": 0.25}
        for fuel, share in shares.items():
            # reported generation runs 2% above demand: a deliberate inconsistency
            meas.append({"id": f"{r}.gen_{fuel}", "capabilities": [f"{r}.gen_{fuel}"],
                         "resolution": "step",
                         "values": [round(d * share * 1.02, 3) for d in demand], "unit": "GJ"})
        capacities[f"{r}.gen_nuclear"] = 250.0 * scale
        meas.append({"id": f"{r}.gas_withdrawal", "capabilities": [f"{r}.withdraw_gas"],
                     "resolution": "step", "values": _seasonal(800.0 * scale, 0.3, 1),
                     "unit": "GJ"})
        meas.append({"id": f"{r}.coal_withdrawal", "capabilities": [f"{r}.withdraw_coal"],
                     "resolution": "horizon", "values": [1200.0 * scale], "unit": "GJ"})
        meas.append({"id": f"{r}.oil_withdrawal", "capabilities": [f"{r}.withdraw_oil"],
                     "resolution": "horizon", "values": [6000.0 * scale], "unit": "GJ"})

    if region_count == 2:
        for fuel, site in (("coal", "coal_mine"), ("gas", "gas_field"), ("oil", "refinery"),
                           ("elec", "substation")):
            cap(f"R1-R2.{fuel}", proc("transport", [(fuel, 1.0)], [(fuel, 1.0)]),
                f"R1.{site}", f"R2.{site}")
    return {"horizon": K, "dt": 1.0, "operands": operands, "buffers": buffers,
            "capabilities": caps, "measurements": meas, "capacities": capacities}


# ---------------------------------------------------------------------------
# exports

def fmt(x) -> str:
    """Shortest round-trip decimal; negative zero prints as 0.0."""
    x = float(x)
    return repr(0.0 if x == 0 else x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _close(got, want, what):
    if abs(got - want) > 1e-9 * max(1.0, abs(want)):
        raise ExportError(f"aggregate check failed for {what}: {got!r} != {want!r}")


def _region_of(arch, buffer_id, region_map):
    loc = arch.buffer(buffer_id).location
    if region_map is None:
        return loc
    if loc not in region_map:
        raise ExportError(f"buffer {buffer_id}: location {loc!r} has no region in the mapping")
    return region_map[loc]


def sankey_data(arch: SystemArchitecture, flows) -> dict:
    """Process-type flow links, allocating each place's inflow over its outflows."""
    m_plus, m_minus = incidence_matrices(arch)
    mp, mm = m_plus.tocsr(), m_minus.tocsr()
    labels = [c.process.label for c in arch.capabilities]
    nodes = sorted(set(labels))
    structural = set()
    for place in range(arch.n_places):
        for a in mp.indices[mp.indptr[place]:mp.indptr[place + 1]]:
            for b in mm.indices[mm.indptr[place]:mm.indptr[place + 1]]:
                structural.add((labels[a], labels[b]))
    steps = []
    for k in range(flows.shape[1]):
        u = flows[:, k]
        links = dict.fromkeys(sorted(structural), 0.0)
        for place in range(arch.n_places):
            lo, hi = mp.indptr[place], mp.indptr[place + 1]
            prod = [(labels[a], v * u[a]) for a, v in zip(mp.indices[lo:hi], mp.data[lo:hi])]
            lo, hi = mm.indptr[place], mm.indptr[place + 1]
            cons = [(labels[b], v * u[b]) for b, v in zip(mm.indices[lo:hi], mm.data[lo:hi])]
            total = sum(v for _, v in cons)
            if total <= 0:
                continue
            for la, va in prod:
                for lb, vb in cons:
                    links[(la, lb)] += va * vb / total
        # every unit produced is consumed somewhere, so sources match process outputs
        out_by_type = defaultdict(float)
        for psi, c in enumerate(arch.capabilities):
            out_by_type[labels[psi]] += sum(w for _, w in c.process.outputs) * u[psi]
        sent = defaultdict(float)
        for (la, _), v in links.items():
            sent[la] += v
        for la in nodes:
            if sent[la] or out_by_type[la]:
                _close(sent[la], out_by_type[la], f"sankey source {la!r} at step {k + 1}")
        steps.append({"step": k + 1, "nodes": nodes,
                      "links": [{"source": a, "target": b, "value": float(v)}
                                for (a, b), v in links.items()]})
    return {"steps": steps}


def choropleth_rows(arch, flows, region_map=None):
    """Withdrawn GJ per (region, operand, step)."""
    acc = defaultdict(float)
    keys = set()
    total = np.zeros(flows.shape[1])
    for psi, c in enumerate(arch.capabilities):
        if c.process.kind is not ProcessKind.WITHDRAWAL:
            continue
        region = _region_of(arch, c.origin, region_map)
        for op, coef in c.process.inputs:
            keys.add((region, op))
            for k in range(flows.shape[1]):
                acc[(region, op, k + 1)] += coef * flows[psi, k]
                total[k] += coef * flows[psi, k]
    rows = [(r, o, k, acc[(r, o, k)]) for r, o in sorted(keys) for k in range(1, flows.shape[1] + 1)]
    for k in range(flows.shape[1]):
        _close(sum(v for _, _, s, v in rows if s == k + 1), total[k], f"choropleth step {k + 1}")
    return rows


def interstate_rows(arch, flows, region_map=None):
    """Transport flows whose origin and destination lie in different regions."""
    acc = defaultdict(float)
    keys = set()
    total = np.zeros(flows.shape[1])
    for psi, c in enumerate(arch.capabilities):
        if c.process.kind is not ProcessKind.TRANSPORT:
            continue
        ro, rd = _region_of(arch, c.origin, region_map), _region_of(arch, c.destination, region_map)
        if ro == rd:
            continue
        op = c.process.inputs[0][0]
        keys.add((ro, rd, op))
        for k in range(flows.shape[1]):
            acc[(ro, rd, op, k + 1)] += flows[psi, k]
            total[k] += flows[psi, k]
    rows = [(a, b, o, k, acc[(a, b, o, k)]) for a, b, o in sorted(keys)
            for k in range(1, flows.shape[1] + 1)]
    for k in range(flows.shape[1]):
        _close(sum(r[-1] for r in rows if r[3] == k + 1), total[k], f"interstate step {k + 1}")
    return rows


def measurement_rows(result: EstimationResult):
    from .wlse import _series_tags
    rows = []
    est = result.errors + np.concatenate([s.values for s in result.measurements]) \
        if result.measurements else np.zeros(0)
    i = 0
    for s in result.measurements:
        proc, region = _series_tags(result.arch, s)
        for b, steps in enumerate(s.buckets):
            rows.append((s.id, b + 1, " ".join(map(str, steps)), proc, region,
                         float(s.values[b]), float(est[i]), float(result.errors[i]),
                         float(result.weights.row_weights[i]), float(result.weighted_errors[i])))
            i += 1
    return rows


MEASUREMENT_HEADER = ["series", "bucket", "steps", "process", "region", "measured_gj",
                      "estimated_gj", "error_gj", "weight", "weighted_error"]
ERROR_HEADER = ["group", "imposed_gj", "absolute_error_gj", "weighted_error"]


def export_results(result: EstimationResult, out_dir, *, grouping="both", region_map=None) -> dict:
    """Write the result bundle into ``out_dir`` and return the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arch, flows = result.arch, result.flows
    cap_ids = arch.capability_ids()
    paths = {}

    paths["flows"] = out / "flows.csv"
    _write_csv(paths["flows"], ["capability", "step", "flow_gj"],
               [(cid, k + 1, float(flows[j, k])) for j, cid in enumerate(cap_ids)
                for k in range(flows.shape[1])])

    paths["measurement_errors"] = out / "measurement_errors.csv"
    _write_csv(paths["measurement_errors"], MEASUREMENT_HEADER, measurement_rows(result))

    paths["errors"] = out / "errors.csv"
    _write_csv(paths["errors"], ERROR_HEADER, error_report(result, grouping=grouping))

    sankey = sankey_data(arch, flows)
    paths["sankey"] = out / "sankey.json"
    paths["sankey"].write_text(dumps_json(sankey), encoding="utf-8")

    paths["choropleth"] = out / "choropleth.csv"
    _write_csv(paths["choropleth"], ["region", "operand", "step", "flow_gj"],
               choropleth_rows(arch, flows, region_map))

    paths["interstate"] = out / "interstate.csv"
    _write_csv(paths["interstate"],
               ["origin_region", "destination_region", "operand", "step", "flow_gj"],
               interstate_rows(arch, flows, region_map))

    summary = {
        "objective": result.objective,
        "alpha": result.weights.alpha,
        "iterations": result.solution.iterations,
        "conservation_residual": result.conservation_residual,
        "capacity_bindings": [b._asdict() for b in result.capacity_bindings],
    }
    paths["summary"] = out / "summary.json"
    paths["summary"].write_text(dumps_json(summary), encoding="utf-8")
    return paths


def read_error_table(result_dir, grouping="both"):
    """Regroup the measurement error table of a result directory."""
    if grouping not in ("process", "region", "both", "series"):
        raise ValueError(f"unknown grouping {grouping!r}")
    path = Path(result_dir) / "measurement_errors.csv"
    acc = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            key = {"process": row["process"], "region": row["region"],
                   "both": f"{row['process']} @ {row['region']}", "series": row["series"]}[grouping]
            imp, err, werr = acc.get(key, (0.0, 0.0, 0.0))
            acc[key] = (imp + float(row["measured_gj"]), err + abs(float(row["error_gj"])),
                        werr + float(row["weighted_error"]))
    table = [(k, *v) for k, v in acc.items()]
    table.sort(key=lambda r: (-r[2], r[0]))
    return table
