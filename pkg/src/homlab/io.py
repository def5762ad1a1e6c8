"""Binary field snapshots (DGHM) and corrector-solution containers."""

import hashlib
import io
import json
import struct
import zipfile

import numpy as np

from .fields import CoefficientField, GridSpec

MAGIC = b"DGHM"
VERSION = 1
_HEAD = struct.Struct("<4sIIId")


def field_bytes(fld):
    g = fld.grid
    mid = fld.model_id.encode("utf-8")
    head = _HEAD.pack(MAGIC, VERSION, g.d, g.L, g.h) + struct.pack("<I", len(mid)) + mid
    head += struct.pack("<Q", int(fld.seed) & ((1 << 64) - 1))
    return head + fld.entries.astype("<f8").tobytes(order="C")


def field_hash(fld):
    return hashlib.sha256(field_bytes(fld)).hexdigest()


def write_field(path, fld):
    with open(path, "wb") as fh:
        fh.write(field_bytes(fld))


def parse_field(buf):
    buf = memoryview(buf)
    if len(buf) < _HEAD.size + 4:
        raise ValueError("truncated DGHM header")
    magic, version, d, L, h = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ValueError(f"bad magic {bytes(magic)!r}")
    if version != VERSION:
        raise ValueError(f"unsupported DGHM version {version}")
    off = _HEAD.size
    (n,) = struct.unpack_from("<I", buf, off)
    off += 4
    model_id = bytes(buf[off : off + n]).decode("utf-8")
    off += n
    (seed,) = struct.unpack_from("<Q", buf, off)
    off += 8
    grid = GridSpec(d, L, h, require_pow2=False)
    count = grid.n_cells * grid.n_entries
    if len(buf) - off != 8 * count:
        raise ValueError(f"DGHM body holds {len(buf) - off} bytes, expected {8 * count}")
    ent = np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(np.float64)
    return CoefficientField(grid, ent.reshape(grid.shape + (grid.n_entries,)), model_id, seed)


def read_field(path):
    with open(path, "rb") as fh:
        return parse_field(fh.read())


def _write_npz(path, arrays):
    # np.savez stamps the current time into the zip headers; fix it for byte-stable output
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.external_attr = 0o644 << 16
            zf.writestr(info, buf.getvalue())


def save_solution(path, sol, deterministic=False):
    """Store a corrector solution as an ``.npz`` container with a JSON stats block.

    In deterministic mode the wall time is zeroed so the file is a pure function
    of the numerical result.
    """
    stats = {
        "iterations": [int(s.iterations) for s in sol.stats],
        "residuals": [float(s.residual) for s in sol.stats],
        "converged": [bool(s.converged) for s in sol.stats],
        "tol": float(sol.tol),
        "wall_time": 0.0 if deterministic else float(sol.wall_time),
        "scheme": sol.scheme,
        "sigma_residual": float(sol.sigma_residual),
    }
    _write_npz(path, {
        "field_sha256": np.array(sol.field_hash),
        "phi": sol.phi.astype("<f8"),
        "grad_phi": sol.grad_phi.astype("<f8"),
        "flux": sol.flux.astype("<f8"),
        "sigma": sol.sigma.astype("<f8"),
        "a_hom": sol.a_hom.astype("<f8"),
        "stats": np.array(json.dumps(stats, sort_keys=True)),
    })


def load_solution_arrays(path):
    with np.load(path, allow_pickle=False) as z:
        out = {k: z[k] for k in z.files}
    out["field_sha256"] = str(out["field_sha256"])
    out["stats"] = json.loads(str(out["stats"]))
    return out
