"""Local logging shim for pipeline steps.

Emits line-delimited events to the file named by FLOR_EVENTS; resolved
argument values arrive in FLOR_ARGS, checkpoints are exchanged through
FLOR_CKPT_DIR. The channel is one-way: steps never read the store directly.
"""
import json
import os
import shutil

_events_path = os.environ.get("FLOR_EVENTS")
_events = open(_events_path, "a") if _events_path else None
_args = json.loads(os.environ.get("FLOR_ARGS", "{}"))
_ckpt_seq = {}


def _emit(k, n="", v=None, t=None):
    if _events is None:
        return
    ev = {"k": k}
    if n:
        ev["n"] = n
    if v is not None:
        ev["v"] = str(v)
    if t is not None:
        ev["t"] = t
    _events.write(json.dumps(ev) + "\n")
    _events.flush()


def log(name, value):
    if isinstance(value, bool):
        _emit("log", name, str(value).lower())
    elif isinstance(value, int):
        _emit("log", name, value, 1)
    elif isinstance(value, float):
        _emit("log", name, value, 2)
    else:
        _emit("log", name, value)
    return value


def arg(name, default):
    raw = _args.get(name)
    if raw is None:
        value = default
    elif isinstance(default, bool):
        value = raw == "true"
    elif isinstance(default, int):
        value = int(raw)
    elif isinstance(default, float):
        value = float(raw)
    else:
        value = raw
    _emit("arg", name, value)
    return value


def loop(name, vals):
    _emit("loop_begin", name)
    for item in vals:
        _emit("iter_begin", name, item)
        yield item
        _emit("iter_end", name)
    _emit("loop_end", name)


def ckpt(name, state):
    # events are ingested after the process exits, so every emission must
    # point at an immutable snapshot; the bare name stays the latest copy
    d = os.environ.get("FLOR_CKPT_DIR", ".")
    k = _ckpt_seq.get(name, 0)
    _ckpt_seq[name] = k + 1
    snap = os.path.join(d, "%s.%d" % (name, k))
    with open(snap, "w") as f:
        json.dump(state, f)
    shutil.copyfile(snap, os.path.join(d, name))
    _emit("ckpt", name, snap)


def load_ckpt(name):
    d = os.environ.get("FLOR_CKPT_DIR", "")
    path = os.path.join(d, name) if d else name
    if d and os.path.exists(path):
        with open(path) as f:
            return json.load(f)
    return None


def replaying():
    return os.environ.get("FLOR_REPLAY") == "1"
