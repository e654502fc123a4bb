"""Extended XYZ reading and writing.

Recognised comment-line keys: ``energy``, ``Lattice``, ``pbc`` and ``Properties``
(columns ``species``/``Z``, ``pos``, ``forces``). Every other key, and every other
per-atom column, is kept verbatim so that it survives a write.
"""

from __future__ import annotations

import shlex

import numpy as np

from .errors import ParseError
from .graph import Configuration

# fmt: off
SYMBOLS = (
    "X H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La Ce "
    "Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po At Rn "
    "Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr Rf Db Sg Bh Hs Mt Ds Rg Cn Nh Fl "
    "Mc Lv Ts Og"
).split()
# fmt: on
ATOMIC_NUMBERS = {s: z for z, s in enumerate(SYMBOLS) if z > 0}

_DEFAULT_PROPERTIES = [("species", "S", 1), ("pos", "R", 3)]


def _parse_comment(line, lineno):
    try:
        tokens = shlex.split(line, posix=True)
    except ValueError as exc:
        raise ParseError(f"cannot tokenise comment line ({exc})", lineno) from None
    info = {}
    for tok in tokens:
        if "=" in tok:
            key, value = tok.split("=", 1)
        else:
            key, value = tok, "T"
        info[key] = value
    return info


def _parse_properties(fields, lineno):
    parts = fields.split(":")
    if len(parts) % 3:
        raise ParseError(f"malformed Properties declaration {fields!r}", lineno)
    props = []
    for name, kind, count in zip(parts[0::3], parts[1::3], parts[2::3]):
        if kind not in ("S", "R", "I", "L") or not count.isdigit() or int(count) < 1:
            raise ParseError(f"malformed Properties entry {name}:{kind}:{count}", lineno)
        props.append((name, kind, int(count)))
    names = [p[0] for p in props]
    if "pos" not in names or not ({"species", "Z"} & set(names)):
        raise ParseError("Properties must declare pos and species (or Z)", lineno)
    return props


def _parse_bool(text):
    return text.strip().upper() in ("T", "TRUE", "1")


def _parse_frame(lines, start, frame_no):
    header = lines[start].strip()
    lineno = start + 1
    try:
        n_atoms = int(header)
    except ValueError:
        raise ParseError(f"frame {frame_no}: expected atom count, got {header!r}", lineno) from None
    if n_atoms < 0:
        raise ParseError(f"frame {frame_no}: negative atom count", lineno)
    if start + 1 >= len(lines):
        raise ParseError(f"frame {frame_no}: missing comment line", lineno + 1)
    info = _parse_comment(lines[start + 1], lineno + 1)
    props = _parse_properties(info.pop("Properties"), lineno + 1) if "Properties" in info else _DEFAULT_PROPERTIES
    width = sum(p[2] for p in props)
    body = lines[start + 2 : start + 2 + n_atoms]
    atom_lines = [b for b in body if b.strip()]
    if len(body) < n_atoms or len(atom_lines) < n_atoms:
        raise ParseError(
            f"frame {frame_no}: header declares {n_atoms} atoms but only "
            f"{len(atom_lines)} atom lines follow",
            lineno,
        )
    columns = {name: [] for name, _, _ in props}
    for k, raw in enumerate(atom_lines):
        fields = raw.split()
        here = start + 3 + k
        if len(fields) != width:
            raise ParseError(
                f"frame {frame_no}: expected {width} columns, found {len(fields)}", here
            )
        col = 0
        for name, kind, count in props:
            chunk = fields[col : col + count]
            col += count
            try:
                if kind == "R":
                    val = [float(x) for x in chunk]
                elif kind == "I":
                    val = [int(x) for x in chunk]
                elif kind == "L":
                    val = [_parse_bool(x) for x in chunk]
                else:
                    val = chunk
            except ValueError:
                raise ParseError(f"frame {frame_no}: non-numeric value in column {name!r}", here) from None
            columns[name].append(val if count > 1 else val[0])
    if "Z" in columns:
        species = [int(z) for z in columns.pop("Z")]
        columns.pop("species", None)
    else:
        species = []
        for k, sym in enumerate(columns.pop("species")):
            if sym.isdigit():
                species.append(int(sym))
            elif sym in ATOMIC_NUMBERS:
                species.append(ATOMIC_NUMBERS[sym])
            else:
                raise ParseError(f"frame {frame_no}: unknown element {sym!r}", start + 3 + k)
    positions = np.array(columns.pop("pos"), dtype=np.float64).reshape(n_atoms, 3)
    forces = columns.pop("forces", None)
    forces = np.array(forces, dtype=np.float64).reshape(n_atoms, 3) if forces is not None else None

    energy = info.pop("energy", None)
    if energy is not None:
        try:
            energy = float(energy)
        except ValueError:
            raise ParseError(f"frame {frame_no}: non-numeric energy {energy!r}", lineno + 1) from None
    cell = None
    if "Lattice" in info:
        try:
            cell = np.array([float(x) for x in info.pop("Lattice").split()]).reshape(3, 3)
        except ValueError:
            raise ParseError(f"frame {frame_no}: Lattice must hold 9 numbers", lineno + 1) from None
    pbc = (cell is not None,) * 3
    if "pbc" in info:
        flags = info.pop("pbc").split()
        if len(flags) != 3:
            raise ParseError(f"frame {frame_no}: pbc must hold 3 flags", lineno + 1)
        pbc = tuple(_parse_bool(f) for f in flags)
    arrays = {name: np.array(vals) for name, vals in columns.items()}
    try:
        config = Configuration(positions, species, energy, forces, cell, pbc, info, arrays)
    except ValueError as exc:
        raise ParseError(f"frame {frame_no}: {exc}", lineno) from None
    return config, start + 2 + n_atoms


def parse_extxyz(text):
    """Parse every frame of an extended-XYZ document (LF or CRLF line endings)."""
    if not text or not text.strip():
        raise ParseError("empty extended-XYZ input")
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    configs = []
    pos = 0
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        config, pos = _parse_frame(lines, pos, len(configs))
        configs.append(config)
    return configs


def read_extxyz(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return []
    return parse_extxyz(text)


def _fmt(x):
    return format(float(x), ".17g")


def _quote(value):
    value = str(value)
    if not value or any(ch.isspace() for ch in value) or '"' in value or "=" in value:
        return '"' + value.replace('"', '\\"') + '"'
    return value


def _kind(arr):
    if arr.dtype.kind == "f":
        return "R"
    if arr.dtype.kind in "iu":
        return "I"
    if arr.dtype.kind == "b":
        return "L"
    return "S"


def _cell_text(arr, kind):
    if kind == "R":
        return _fmt(arr)
    if kind == "L":
        return "T" if arr else "F"
    return str(arr)


def write_extxyz(configs, include_predictions=False):
    """Serialise configurations; predictions are written as ``energy_pred``/``forces_pred``.

    Predictions are taken from ``config.info['energy_pred']`` and
    ``config.arrays['forces_pred']`` when ``include_predictions`` is set.
    """
    out = []
    for c in configs:
        n = len(c)
        props = [("species", "S", 1), ("pos", "R", 3)]
        columns = [[SYMBOLS[z] if z < len(SYMBOLS) else str(z) for z in c.species], c.positions]
        if c.forces is not None:
            props.append(("forces", "R", 3))
            columns.append(c.forces)
        for name, arr in c.arrays.items():
            if name == "forces_pred" and not include_predictions:
                continue
            arr = np.asarray(arr)
            count = 1 if arr.ndim == 1 else arr.shape[1]
            props.append((name, _kind(arr), count))
            columns.append(arr)
        header = []
        if c.energy is not None:
            header.append(f"energy={_fmt(c.energy)}")
        for key, value in c.info.items():
            if key == "energy_pred" and not include_predictions:
                continue
            if key == "energy_pred":
                value = _fmt(value)
            header.append(f"{key}={_quote(value)}")
        if c.cell is not None:
            header.append('Lattice="' + " ".join(_fmt(x) for x in c.cell.ravel()) + '"')
            header.append('pbc="' + " ".join("T" if p else "F" for p in c.pbc) + '"')
        header.append("Properties=" + ":".join(f"{a}:{b}:{k}" for a, b, k in props))
        out.append(str(n))
        out.append(" ".join(header))
        for i in range(n):
            cells = []
            for (name, kind, count), col in zip(props, columns):
                val = col[i]
                if count == 1:
                    cells.append(_cell_text(val, kind))
                else:
                    cells.extend(_cell_text(v, kind) for v in val)
            out.append(" ".join(cells))
    return "\n".join(out) + ("\n" if out else "")
