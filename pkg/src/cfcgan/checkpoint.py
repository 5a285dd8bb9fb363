"""Checkpoint serialization.

Layout: magic ``CFCG``, u32 version, length-prefixed canonical-JSON
config echo, u64 iteration counter, then four fixed-order sections
(GEN, DSC, OPT, RNG), each a 4-byte tag plus length-prefixed payload of
named tensors. Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .discriminator import Discriminator
from .errors import CheckpointError
from .invertible import Generator
from .tensor import AdamState, tensor_from_bytes, tensor_to_bytes

MAGIC = b"CFCG"
VERSION = 1
_SECTION_ORDER = (b"GEN ", b"DSC ", b"OPT ", b"RNG ")


def _pack_named(entries: list[tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(entries))]
    for name, arr in entries:
        nb = name.encode()
        blob = tensor_to_bytes(arr)
        out.append(struct.pack("<H", len(nb)) + nb + struct.pack("<I", len(blob)) + blob)
    return b"".join(out)


def _unpack_named(buf: bytes) -> dict[str, np.ndarray]:
    (count,) = struct.unpack_from("<I", buf, 0)
    off = 4
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode()
        off += nlen
        (blen,) = struct.unpack_from("<I", buf, off)
        off += 4
        arr, _ = tensor_from_bytes(buf[off:off + blen])
        off += blen
        out[name] = arr
    return out


def _gen_entries(gen: Generator) -> list[tuple[str, np.ndarray]]:
    entries = [(name, p.data) for name, p in gen.named_parameters()]
    entries += [(name, state.u) for name, state in gen.named_buffers()]
    return entries


def _dsc_entries(disc: Discriminator) -> list[tuple[str, np.ndarray]]:
    entries = [(name, p.data) for name, p in disc.named_parameters()]
    entries += list(disc.buffer_dict().items())
    return entries


def _opt_payload(opt_g: AdamState, opt_d: AdamState,
                 gen: Generator, disc: Discriminator) -> bytes:
    head = json.dumps({"gen_step": opt_g.step, "dsc_step": opt_d.step},
                      sort_keys=True).encode()
    entries = []
    for (name, _), m, v in zip(gen.named_parameters(), opt_g.m, opt_g.v):
        entries.append((f"gen.m.{name}", m))
        entries.append((f"gen.v.{name}", v))
    for (name, _), m, v in zip(disc.named_parameters(), opt_d.m, opt_d.v):
        entries.append((f"dsc.m.{name}", m))
        entries.append((f"dsc.v.{name}", v))
    return struct.pack("<I", len(head)) + head + _pack_named(entries)


def save_checkpoint(path, config: dict, iteration: int, gen: Generator,
                    disc: Discriminator, opt_g: AdamState, opt_d: AdamState,
                    rng_state: dict) -> None:
    cfg_json = json.dumps(config, sort_keys=True).encode()
    sections = {
        b"GEN ": _pack_named(_gen_entries(gen)),
        b"DSC ": _pack_named(_dsc_entries(disc)),
        b"OPT ": _opt_payload(opt_g, opt_d, gen, disc),
        b"RNG ": json.dumps(rng_state, sort_keys=True).encode(),
    }
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(cfg_json)) + cfg_json)
        f.write(struct.pack("<Q", iteration))
        for tag in _SECTION_ORDER:
            payload = sections[tag]
            f.write(tag + struct.pack("<I", len(payload)) + payload)


def load_checkpoint(path):
    """Rebuild models and optimizer state; returns
    (config, iteration, gen, disc, opt_g, opt_d, rng_state)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: version mismatch (file v{version}, supported v{VERSION})")
    (cfg_len,) = struct.unpack_from("<I", buf, 8)
    off = 12
    config = json.loads(buf[off:off + cfg_len].decode())
    off += cfg_len
    (iteration,) = struct.unpack_from("<Q", buf, off)
    off += 8
    sections = {}
    for tag in _SECTION_ORDER:
        if buf[off:off + 4] != tag:
            raise CheckpointError(f"{path}: expected section {tag!r} at offset {off}")
        (plen,) = struct.unpack_from("<I", buf, off + 4)
        off += 8
        sections[tag] = buf[off:off + plen]
        off += plen

    dtype = np.float32 if config.get("precision") == "f32" else np.float64
    gen = Generator.create(blocks=config["blocks"], levels=config["levels"],
                           width=config["width"], seed=config["seed"],
                           w_init=config.get("w_init", "orthogonal"), dtype=dtype)
    disc = Discriminator(widths=tuple(config["disc_widths"]), seed=config["seed"],
                         dtype=dtype)

    gen_arrays = _unpack_named(sections[b"GEN "])
    for name, p in gen.named_parameters():
        p.data = gen_arrays[name].reshape(p.data.shape).astype(dtype)
    for name, state in gen.named_buffers():
        state.u = gen_arrays[name].reshape(state.u.shape)
    gen.refresh_mixing()

    dsc_arrays = _unpack_named(sections[b"DSC "])
    for name, p in disc.named_parameters():
        p.data = dsc_arrays[name].reshape(p.data.shape).astype(dtype)
    for name in disc.buffer_dict():
        disc.set_buffer(name, dsc_arrays[name].reshape(-1).astype(dtype))

    opt_buf = sections[b"OPT "]
    (hlen,) = struct.unpack_from("<I", opt_buf, 0)
    steps = json.loads(opt_buf[4:4 + hlen].decode())
    opt_arrays = _unpack_named(opt_buf[4 + hlen:])
    opt_g = AdamState(step=steps["gen_step"])
    for name, p in gen.named_parameters():
        opt_g.m.append(opt_arrays[f"gen.m.{name}"].reshape(p.data.shape).astype(dtype))
        opt_g.v.append(opt_arrays[f"gen.v.{name}"].reshape(p.data.shape).astype(dtype))
    opt_d = AdamState(step=steps["dsc_step"])
    for name, p in disc.named_parameters():
        opt_d.m.append(opt_arrays[f"dsc.m.{name}"].reshape(p.data.shape).astype(dtype))
        opt_d.v.append(opt_arrays[f"dsc.v.{name}"].reshape(p.data.shape).astype(dtype))

    rng_state = json.loads(sections[b"RNG "].decode())
    return config, iteration, gen, disc, opt_g, opt_d, rng_state
