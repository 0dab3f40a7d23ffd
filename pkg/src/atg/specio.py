"""EnvSpec and env-pool (de)serialization over the plain-text document format."""

from __future__ import annotations

from dataclasses import fields

from .configdoc import DocumentError, format_document, parse_document
from .world import Distractor, EnvSpec, Pose

_FLOAT_FIELDS = {
    "cell_size",
    "target_speed",
    "zigzag_prob",
    "zigzag_amplitude",
    "capture_radius",
}

POOL_SEPARATOR = "---"


def spec_to_doc(spec: EnvSpec) -> dict:
    return {
        "name": spec.name,
        "walls": list(spec.walls),
        "cell_size": float(spec.cell_size),
        "waypoints": [[float(x), float(y)] for x, y in spec.waypoints],
        "direction": spec.direction,
        "target_speed": float(spec.target_speed),
        "zigzag_prob": float(spec.zigzag_prob),
        "zigzag_amplitude": float(spec.zigzag_amplitude),
        "capture_radius": float(spec.capture_radius),
        "target_appearance": spec.target_appearance,
        "floor_palette": spec.floor_palette,
        "ceiling_palette": spec.ceiling_palette,
        "wall_palette": spec.wall_palette,
        "distractors": [
            [float(d.x), float(d.y), float(d.heading), d.appearance, d.visible]
            for d in spec.distractors
        ],
        "initial_target": [float(v) for v in spec.initial_target],
        "agent_start": [float(spec.agent_start.x), float(spec.agent_start.y), float(spec.agent_start.heading)],
        "flip": bool(spec.flip),
    }


def spec_to_text(spec: EnvSpec) -> str:
    return format_document(spec_to_doc(spec))


def _as_floats(value, key: str, count: int) -> list[float]:
    if not isinstance(value, list) or len(value) != count:
        raise DocumentError(f"{key}: expected a list of {count} numbers")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise DocumentError(f"{key}: expected a list of {count} numbers") from None


def spec_from_doc(doc: dict) -> EnvSpec:
    known = {f.name for f in fields(EnvSpec)}
    unknown = set(doc) - known
    if unknown:
        raise DocumentError(f"unknown env spec keys: {sorted(unknown)}")

    kwargs: dict = {}
    for key, value in doc.items():
        if key == "walls":
            kwargs[key] = tuple(str(r) for r in value)
        elif key == "waypoints":
            kwargs[key] = tuple((float(p[0]), float(p[1])) for p in (_as_floats(p, "waypoints", 2) for p in value))
        elif key == "distractors":
            ds = []
            for entry in value:
                if not isinstance(entry, list) or len(entry) != 5:
                    raise DocumentError("distractors: each entry is [x, y, heading, appearance, visible]")
                ds.append(
                    Distractor(
                        x=float(entry[0]),
                        y=float(entry[1]),
                        heading=float(entry[2]),
                        appearance=str(entry[3]),
                        visible=bool(entry[4]),
                    )
                )
            kwargs[key] = tuple(ds)
        elif key == "initial_target":
            kwargs[key] = tuple(_as_floats(value, key, 3))
        elif key == "agent_start":
            x, y, heading = _as_floats(value, key, 3)
            kwargs[key] = Pose(x, y, heading)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(value)
        elif key == "flip":
            if not isinstance(value, bool):
                raise DocumentError("flip: expected true or false")
            kwargs[key] = value
        else:
            kwargs[key] = value

    spec = EnvSpec(**kwargs)
    spec.validate()
    return spec


def spec_from_text(text: str) -> EnvSpec:
    return spec_from_doc(parse_document(text))


def pool_to_text(specs: list[EnvSpec], generator_seed: int | None) -> str:
    """Serialize an env pool: a header document, then one spec document per
    entry, separated by '---' lines."""
    header = {"pool_size": len(specs)}
    if generator_seed is not None:
        header["generator_seed"] = int(generator_seed)
    parts = [format_document(header)]
    parts.extend(spec_to_text(s) for s in specs)
    return f"{POOL_SEPARATOR}\n".join(parts)


def pool_from_text(text: str) -> tuple[list[EnvSpec], int | None]:
    chunks = text.split(f"{POOL_SEPARATOR}\n")
    header = parse_document(chunks[0])
    specs = [spec_from_text(c) for c in chunks[1:]]
    declared = header.get("pool_size")
    if declared is not None and declared != len(specs):
        raise DocumentError(f"pool_size says {declared} specs, found {len(specs)}")
    seed = header.get("generator_seed")
    return specs, seed
