"""Blob-level scene edits and constrained scene auto-complete."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import grad as gr
from .blobs import REMOVE_SIZE, Blob, BlobScene, SceneTensors, wrap_angle
from .errors import DomainError, FormatError, ShapeError
from .grad import Adam, Tensor
from .layout import LayoutNet
from .metrics import ConsistencyReport, edit_consistency  # noqa: F401  (re-export)

EDIT_KINDS = ("move", "remove", "resize", "rotate", "clone", "restyle", "restructure")


@dataclass
class EditCommand:
    """One declarative scene edit; payload fields depend on ``kind``."""

    kind: str
    target: int
    dx: np.ndarray | None = None         # move: center shift
    s: float | None = None               # remove: size override (default -10)
    ds: float | None = None              # resize: size delta
    dtheta: float | None = None          # rotate: angle delta
    insert_index: int | None = None      # clone: depth slot (default: above target)
    x: np.ndarray | None = None          # clone: new center
    psi: np.ndarray | None = None        # restyle: replacement style
    psi_bg: np.ndarray | None = None     # restyle: its background, for the border blend
    phi: np.ndarray | None = None        # restructure: replacement structure

    def __post_init__(self):
        if self.kind not in EDIT_KINDS:
            raise DomainError(f"unknown edit kind {self.kind!r}")
        for name in ("dx", "x", "psi", "psi_bg", "phi"):
            v = getattr(self, name)
            if v is not None:
                setattr(self, name, np.asarray(v, dtype=np.float32))

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "target": self.target}
        for name in ("s", "ds", "dtheta", "insert_index"):
            v = getattr(self, name)
            if v is not None:
                out[name] = v
        for name in ("dx", "x", "psi", "psi_bg", "phi"):
            v = getattr(self, name)
            if v is not None:
                out[name] = [float(f) for f in np.asarray(v).reshape(-1)]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "EditCommand":
        if not isinstance(d, dict) or "kind" not in d or "target" not in d:
            raise FormatError("edit command needs 'kind' and 'target'")
        known = {"kind", "target", "dx", "s", "ds", "dtheta", "insert_index",
                 "x", "psi", "psi_bg", "phi"}
        unknown = set(d) - known
        if unknown:
            raise FormatError(f"unknown edit fields: {sorted(unknown)}")
        return cls(**d)


def _check_target(scene: BlobScene, index: int) -> None:
    if not 0 <= index < scene.k:
        raise DomainError(f"blob index {index} out of range for k={scene.k}")


def apply_edit(scene: BlobScene, cmd: EditCommand) -> BlobScene:
    """Pure scene transformation; the input scene is never modified."""
    _check_target(scene, cmd.target)
    out = scene.copy()
    b = out.blobs[cmd.target]
    if cmd.kind == "move":
        if cmd.dx is None:
            raise DomainError("move needs dx")
        b.x = (b.x + cmd.dx).astype(np.float32)
    elif cmd.kind == "remove":
        b.s = float(cmd.s) if cmd.s is not None else REMOVE_SIZE
    elif cmd.kind == "resize":
        if cmd.ds is None:
            raise DomainError("resize needs ds")
        b.s = float(np.float32(b.s) + np.float32(cmd.ds))
    elif cmd.kind == "rotate":
        if cmd.dtheta is None:
            raise DomainError("rotate needs dtheta")
        b.theta = wrap_angle(float(np.float32(b.theta) + np.float32(cmd.dtheta)))
    elif cmd.kind == "clone":
        copy = replace(b, x=(cmd.x if cmd.x is not None else b.x).copy(),
                       phi=b.phi.copy(), psi=b.psi.copy(),
                       psi_border=None if b.psi_border is None else b.psi_border.copy())
        at = cmd.insert_index if cmd.insert_index is not None else cmd.target + 1
        if not 0 <= at <= out.k:
            raise DomainError(f"clone insert index {at} out of range")
        out.blobs.insert(at, copy)
    elif cmd.kind == "restyle":
        if cmd.psi is None:
            raise DomainError("restyle needs psi")
        if cmd.psi.shape != b.psi.shape:
            raise ShapeError(f"restyle psi has dim {cmd.psi.shape[0]}, scene uses {b.psi.shape[0]}")
        b.psi = cmd.psi.copy()
        b.psi_border = None if cmd.psi_bg is None else cmd.psi_bg.copy()
    elif cmd.kind == "restructure":
        if cmd.phi is None:
            raise DomainError("restructure needs phi")
        if cmd.phi.shape != b.phi.shape:
            raise ShapeError(f"restructure phi has dim {cmd.phi.shape[0]}, scene uses {b.phi.shape[0]}")
        b.phi = cmd.phi.copy()
    out.blobs[cmd.target] = Blob(**{f: getattr(b, f) for f in
                                    ("x", "s", "a", "theta", "phi", "psi", "psi_border")})
    return out


def apply_edits(scene: BlobScene, cmds: list[EditCommand]) -> BlobScene:
    for cmd in cmds:
        scene = apply_edit(scene, cmd)
    return scene


def style_swap(scene_src: BlobScene, scene_tgt: BlobScene, index: int) -> BlobScene:
    """Replace blob ``index``'s style with the target scene's, blending toward
    the *target* background at the blob border (not the source background)."""
    _check_target(scene_src, index)
    _check_target(scene_tgt, index)
    if scene_src.d_style != scene_tgt.d_style:
        raise ShapeError("style dimensions differ between scenes")
    return apply_edit(scene_src, EditCommand(
        kind="restyle", target=index,
        psi=scene_tgt.blobs[index].psi, psi_bg=scene_tgt.psi_bg))


# ---------------------------------------------------------------------------
# scene auto-complete
# ---------------------------------------------------------------------------

BLOB_FIELDS = ("x", "s", "a", "theta", "phi", "psi")
BG_FIELDS = ("phi", "psi")


@dataclass
class Constraint:
    """Pin one attribute of one blob (index 1..k) or the background (index 0)."""

    index: int
    field: str
    value: np.ndarray

    def __post_init__(self):
        if self.index == 0:
            if self.field not in BG_FIELDS:
                raise DomainError(f"background supports fields {BG_FIELDS}, got {self.field!r}")
        elif self.field not in BLOB_FIELDS:
            raise DomainError(f"unknown blob field {self.field!r}")
        self.value = np.asarray(self.value, dtype=np.float32)


def constraints_from_scene(scene: BlobScene, picks: list[tuple[int, str]]) -> list[Constraint]:
    """Build a constraint set from a source scene, e.g. [(0, 'phi'), (2, 'x')]."""
    out = []
    for index, fieldname in picks:
        if index == 0:
            value = scene.phi_bg if fieldname == "phi" else scene.psi_bg
        else:
            _check_target(scene, index - 1)
            value = getattr(scene.blobs[index - 1], fieldname)
        out.append(Constraint(index, fieldname, np.asarray(value, dtype=np.float32)))
    return out


def _constraint_tensor(st: SceneTensors, c: Constraint) -> Tensor:
    if c.index == 0:
        return st.phi_bg[0] if c.field == "phi" else st.psi_bg[0]
    i = c.index - 1
    if not 0 <= i < st.k:
        raise DomainError(f"constraint blob index {c.index} out of range for k={st.k}")
    return getattr(st, c.field)[0, i]


@dataclass
class AutocompleteResult:
    scene: BlobScene
    final_loss: float           # RMSE over all constrained scalars
    loss_trace: list[float] = field(default_factory=list)
    warning: bool = False       # loss failed to decrease for 50 consecutive steps
    z: np.ndarray | None = None


def autocomplete(net: LayoutNet, constraints: list[Constraint],
                 rng: np.random.Generator | None = None,
                 z_init: np.ndarray | None = None,
                 iters: int = 300, lr: float = 0.01) -> AutocompleteResult:
    """Optimize the input noise so decoded attributes match the constraints.

    Adam on z only; the network stays frozen. The returned scene carries the
    constrained attributes exactly and everything else from the optimized z.
    """
    if iters < 1:
        raise DomainError("need at least one iteration")
    if z_init is None:
        if rng is None:
            raise DomainError("need rng or z_init")
        z_init = rng.standard_normal(net.cfg.d_noise).astype(np.float32)
    z = Tensor(np.asarray(z_init, dtype=np.float32).reshape(1, -1).copy(),
               requires_grad=True)

    if not constraints:
        with gr.no_grad():
            return AutocompleteResult(scene=net.forward(z).scene(0), final_loss=0.0,
                                      z=z.data[0].copy())

    n_scalars = sum(int(np.asarray(c.value).size) for c in constraints)

    def sse(st: SceneTensors) -> Tensor:
        total = None
        for c in constraints:
            diff = gr.sub(_constraint_tensor(st, c), Tensor(c.value))
            term = gr.tsum(gr.square(diff))
            total = term if total is None else gr.add(total, term)
        return total

    def rmse_of(t: Tensor) -> float:
        return float(np.sqrt(max(float(t.data), 0.0) / n_scalars))

    opt = Adam({"z": z}, lr=lr)
    best_loss = np.inf
    best_z = z.data.copy()
    trace: list[float] = []
    stall = 0
    warning = False
    for _ in range(iters):
        total = sse(net.forward(z))
        cur = rmse_of(total)
        trace.append(cur)
        if cur < best_loss - 1e-12:
            best_loss, best_z, stall = cur, z.data.copy(), 0
        else:
            stall += 1
            if stall >= 50:
                warning = True
        opt.zero_grad()
        gr.backward(gr.mul(total, 1.0 / n_scalars))
        opt.step()
    with gr.no_grad():
        final = sse(net.forward(Tensor(z.data)))
        if rmse_of(final) < best_loss:
            best_loss, best_z = rmse_of(final), z.data.copy()

    with gr.no_grad():
        scene = net.forward(Tensor(best_z)).scene(0)
    scene = _overwrite_constraints(scene, constraints)
    return AutocompleteResult(scene=scene, final_loss=best_loss, loss_trace=trace,
                              warning=warning, z=best_z[0].copy())


def _overwrite_constraints(scene: BlobScene, constraints: list[Constraint]) -> BlobScene:
    out = scene.copy()
    for c in constraints:
        if c.index == 0:
            if c.field == "phi":
                out.phi_bg = c.value.copy()
            else:
                out.psi_bg = c.value.copy()
            continue
        b = out.blobs[c.index - 1]
        if c.field == "x":
            b.x = c.value.reshape(2).copy()
        elif c.field == "s":
            b.s = float(c.value)
        elif c.field == "a":
            b.a = float(c.value)
        elif c.field == "theta":
            b.theta = float(c.value)
        elif c.field == "phi":
            b.phi = c.value.copy()
        elif c.field == "psi":
            b.psi = c.value.copy()
    return BlobScene([Blob(**{f: getattr(b, f) for f in
                              ("x", "s", "a", "theta", "phi", "psi", "psi_border")})
                      for b in out.blobs], out.phi_bg, out.psi_bg)
