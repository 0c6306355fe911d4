"""Binary checkpoint format plus agent/model save-load helpers.

Layout: magic "ECKP", u32 tensor count, then per tensor a u16 name length,
utf-8 name, u32 rank, u32 dims, and the float32 payload. Everything is
little-endian. A JSON sidecar at <path>.json carries stage, step, the
headline metric, config hash, rng state, and architecture fields.
"""

import json
import struct

import numpy as np

from . import game, seq2seq

MAGIC = b"ECKP"


def write_tensors(path, named):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(named)))
        for name, arr in named.items():
            # asarray, not ascontiguousarray: the latter turns rank 0 into rank 1
            arr = np.asarray(arr, dtype="<f4")
            raw = name.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"checkpoint tensor name too long: {name[:40]}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_tensors(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"checkpoint {path}: bad magic {blob[:4]!r}")
    pos = 4

    def take(n):
        nonlocal pos
        if pos + n > len(blob):
            raise ValueError(f"checkpoint {path}: truncated at byte {pos}")
        out = blob[pos : pos + n]
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    named = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        if name in named:
            raise ValueError(f"checkpoint {path}: duplicate tensor {name!r}")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(take(4 * n), dtype="<f4").reshape(dims)
        named[name] = data.copy()
    if pos != len(blob):
        raise ValueError(f"checkpoint {path}: {len(blob) - pos} trailing bytes")
    return named


def save_checkpoint(path, tensors, meta):
    write_tensors(path, tensors)
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    tensors = read_tensors(path)
    try:
        with open(str(path) + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"checkpoint {path}: missing sidecar {path}.json")
    return tensors, meta


def rng_state(rng):
    """JSON-safe snapshot of a numpy Generator's position."""
    st = rng.bit_generator.state
    return json.loads(json.dumps(st))


def save_agent(path, agent, *, step, eval_accuracy, config_hash="", rng=None,
               snapshot=None):
    """Persist an agent. `snapshot` lets callers save an earlier ParamStore
    state (e.g. the checkpoint nearest a target accuracy) without rebuilding."""
    tensors = snapshot if snapshot is not None else agent.params().snapshot()
    meta = {
        "stage": "ec",
        "step": int(step),
        "eval_accuracy": float(eval_accuracy),
        "config_hash": config_hash,
        "rng_state": rng_state(rng) if rng is not None else None,
        "arch": {
            "vocab_size": agent.vocab_size,
            "embed_dim": agent.embed_dim,
            "hidden_dim": agent.hidden_dim,
            "feat_dim": agent.feat_dim,
            "l_max": agent.l_max,
        },
    }
    save_checkpoint(path, tensors, meta)


def load_agent(path):
    tensors, meta = load_checkpoint(path)
    if meta.get("stage") != "ec":
        raise ValueError(f"checkpoint {path}: stage {meta.get('stage')!r}, expected 'ec'")
    a = meta["arch"]
    agent = game.Agent(a["vocab_size"], a["embed_dim"], a["hidden_dim"],
                       a["feat_dim"], a["l_max"], np.random.default_rng(0))
    agent.params().load_snapshot(tensors)
    return agent, meta


def save_model(path, model, *, step, valid_bleu, config_hash="", rng=None):
    tensors = dict(model.params().snapshot())
    if model.w_star:
        for name, arr in model.w_star.items():
            tensors["w_star." + name] = arr
    meta = {
        "stage": "nmt",
        "step": int(step),
        "valid_bleu": float(valid_bleu),
        "config_hash": config_hash,
        "rng_state": rng_state(rng) if rng is not None else None,
        "arch": {
            "src_vocab": model.src_vocab,
            "tgt_vocab": model.tgt_vocab,
            "embed_dim": model.encoder_embed.dim,
            "hidden_dim": model.hidden_dim,
            "adapter_bottleneck": model.adapter.bottleneck if model.adapter else None,
            "adapter_drop": model.adapter.drop if model.adapter else None,
            "has_snapshot": bool(model.w_star),
        },
    }
    save_checkpoint(path, tensors, meta)


def load_model(path):
    tensors, meta = load_checkpoint(path)
    if meta.get("stage") != "nmt":
        raise ValueError(f"checkpoint {path}: stage {meta.get('stage')!r}, expected 'nmt'")
    a = meta["arch"]
    model = seq2seq.fresh(a["src_vocab"], a["tgt_vocab"], a["embed_dim"],
                          a["hidden_dim"], np.random.default_rng(0),
                          adapter_bottleneck=a["adapter_bottleneck"],
                          adapter_drop=a["adapter_drop"] or 0.2)
    live = {k: v for k, v in tensors.items() if not k.startswith("w_star.")}
    model.params().load_snapshot(live)
    if a.get("has_snapshot"):
        model.w_star = {k[len("w_star."):]: v for k, v in tensors.items()
                        if k.startswith("w_star.")}
    return model, meta
