"""Full encoder-decoder assembly with skip attention, gated KAN enhancement,
three-branch fusion, deep-supervision heads, and bit-exact checkpointing."""

import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FormatError
from .module import Module
from .blocks import (
    ChannelAttention,
    Fusion,
    KANDoubleConv,
    PredictionHead,
    SpatialAttention,
)
from .tensor import Tensor, add, concat_channels, pool, resize2x, scale
from .tikan import TiKANConfig, gate

_DEFAULT_KERNELS = (7, 5, 3, 3)  # coarsest decoder level first

CHECKPOINT_MAGIC = b"FKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    num_classes: int = 9
    levels: int = 5
    widths: tuple = (32, 64, 128, 256, 512)
    decoder_kernels: tuple = None
    supervision_weights: tuple = (0.4, 0.3, 0.2)  # beta_2, beta_3, beta_4
    tikan: TiKANConfig = field(default_factory=TiKANConfig)
    head_fusion: bool = False
    upsample: str = "bilinear"
    input_size: int = 256
    dtype: str = "float32"

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.levels < 2:
            raise ConfigurationError("need at least 2 levels")
        if len(self.widths) != self.levels:
            raise ConfigurationError("len(widths) must equal levels")
        if any(a >= b for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigurationError("widths must be strictly increasing")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be >= 1")
        if self.upsample not in ("bilinear", "nearest"):
            raise ConfigurationError("upsample must be bilinear or nearest")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")
        if self.decoder_kernels is None:
            self.decoder_kernels = _DEFAULT_KERNELS[-(self.levels - 1):]
        self.decoder_kernels = tuple(int(k) for k in self.decoder_kernels)
        if len(self.decoder_kernels) != self.levels - 1:
            raise ConfigurationError("need one decoder kernel per decoder level")
        self.supervision_weights = tuple(float(b) for b in self.supervision_weights)
        if self.input_size % (1 << (self.levels - 1)) != 0:
            raise ConfigurationError("input_size must be divisible by 2^(levels-1)")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        d["decoder_kernels"] = list(self.decoder_kernels)
        d["supervision_weights"] = list(self.supervision_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        tk = d.pop("tikan", {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(tikan=TiKANConfig(**tk), **d)


class FortressModel(Module):
    """Five-level (configurable) encoder-decoder for dense class logits."""

    def __init__(self, cfg, seed=0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        dt = cfg.np_dtype
        j = cfg.levels
        widths = cfg.widths
        self.dropout_rng = np.random.default_rng([int(seed), 7])

        def tikan_if_static(channels, level):
            side = cfg.input_size >> (level - 1)
            return cfg.tikan if gate(channels, side, side, cfg.tikan) else None

        enc_in = (3,) + widths[:-1]
        self.encoders = []
        for lvl in range(1, j + 1):
            block = KANDoubleConv(
                enc_in[lvl - 1], widths[lvl - 1], rng,
                tikan_cfg=tikan_if_static(widths[lvl - 1], lvl), dtype=dt,
            )
            setattr(self, f"enc{lvl}", block)
            self.encoders.append(block)

        # decoder level d consumes skip E_d plus the upsampled level below
        self.decoders = []
        self.skip_channel_att = []
        self.skip_spatial_att = []
        self.fusion_spatial_att = []
        self.fusion_channel_att = []
        self.fusions = []
        for d in range(j - 1, 0, -1):
            c_skip = widths[d - 1]
            c_below = widths[d]
            k_d = cfg.decoder_kernels[j - 1 - d]
            block = KANDoubleConv(
                c_skip + c_below, c_skip, rng,
                tikan_cfg=tikan_if_static(c_skip, d), dtype=dt,
            )
            sca = ChannelAttention(c_skip, rng, dtype=dt)
            ssa = SpatialAttention(k_d, rng, dtype=dt)
            fsa = SpatialAttention(k_d, rng, dtype=dt)
            fca = ChannelAttention(c_skip, rng, dtype=dt)
            fus = Fusion(c_skip, rng, dtype=dt)
            setattr(self, f"dec{d}", block)
            setattr(self, f"skip_ca{d}", sca)
            setattr(self, f"skip_sa{d}", ssa)
            setattr(self, f"fus_sa{d}", fsa)
            setattr(self, f"fus_ca{d}", fca)
            setattr(self, f"fusion{d}", fus)
            self.decoders.append(block)
            self.skip_channel_att.append(sca)
            self.skip_spatial_att.append(ssa)
            self.fusion_spatial_att.append(fsa)
            self.fusion_channel_att.append(fca)
            self.fusions.append(fus)

        self.aux_levels = tuple(d for d in (2, 3, 4) if d <= j - 1)
        self.head_final = PredictionHead(widths[0], cfg.num_classes, rng, dtype=dt)
        for d in self.aux_levels:
            setattr(self, f"head_aux{d}", PredictionHead(widths[d - 1], cfg.num_classes, rng, dtype=dt))

    def _check_input(self, x):
        factor = 1 << (self.cfg.levels - 1)
        n, c, h, w = x.shape
        if c != 3:
            raise ConfigurationError(f"input must have 3 channels, got {c}")
        if h % factor or w % factor:
            raise ConfigurationError(f"spatial dims must be divisible by {factor}")

    def forward(self, x, training=False):
        """Returns {'final': logits, 'aux': [logits@L2, logits@L3, logits@L4]}."""
        self._check_input(x)
        cfg = self.cfg
        j = cfg.levels
        feats = []
        cur = x
        for lvl in range(1, j + 1):
            if lvl > 1:
                cur = pool(cur, "max2x2")
            cur = self.encoders[lvl - 1].forward(cur, training, self.dropout_rng)
            feats.append(cur)

        aux = {}
        r = feats[-1]
        for i, d in enumerate(range(j - 1, 0, -1)):
            up = resize2x(r, cfg.upsample)
            skip = feats[d - 1]
            att = self.skip_spatial_att[i].forward(self.skip_channel_att[i].forward(skip))
            r = self.decoders[i].forward(concat_channels(att, up), training, self.dropout_rng)
            block = self.decoders[i]
            if block.tikan is not None and gate(r.shape[1], r.shape[2], r.shape[3], cfg.tikan):
                kan_branch = block.tikan.apply(r, training, self.dropout_rng)
            else:
                kan_branch = r
            r = self.fusions[i].forward(
                self.fusion_spatial_att[i].forward(r),
                self.fusion_channel_att[i].forward(r),
                kan_branch,
            )
            if d in self.aux_levels:
                aux[d] = getattr(self, f"head_aux{d}").forward(r)
        final = self.head_final.forward(r)
        return {"final": final, "aux": [aux[d] for d in sorted(aux)]}

    def predict(self, image):
        """Eval-mode class-index mask of shape (N, H, W)."""
        out = self.forward(image, training=False)
        logits = out["final"]
        if self.cfg.head_fusion:
            betas = self.cfg.supervision_weights
            for i, aux in enumerate(out["aux"]):
                up = aux
                for _ in range(i + 1):
                    up = resize2x(up, "bilinear")
                logits = add(logits, scale(up, betas[i]))
        return logits.data.argmax(axis=1)


def build(cfg, seed=0):
    return FortressModel(cfg, seed)


# ---------------------------------------------------------------------------
# checkpoint format: magic, version, canonical-JSON config, named tensors


def save(model, path):
    cfg_json = json.dumps(model.cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    cfg_bytes = cfg_json.encode("utf-8")
    arrays = model.state_arrays()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(cfg_bytes)))
        f.write(cfg_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BB", 0, arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated checkpoint while reading {what}")
    return buf


def load(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise FormatError("bad checkpoint magic")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (cfg_len,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        try:
            cfg = ModelConfig.from_dict(json.loads(_read_exact(f, cfg_len, "config")))
        except (json.JSONDecodeError, TypeError, ConfigurationError) as exc:
            raise FormatError(f"bad checkpoint config: {exc}") from exc
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            dtype_code, ndim = struct.unpack("<BB", _read_exact(f, 2, "dtype/ndim"))
            if dtype_code != 0:
                raise FormatError(f"unknown dtype code {dtype_code}")
            dims = struct.unpack(
                "<" + "I" * ndim, _read_exact(f, 4 * ndim, "dims")
            )
            n_vals = int(np.prod(dims)) if ndim else 1
            raw = _read_exact(f, 4 * n_vals, f"values of '{name}'")
            state[name] = np.frombuffer(raw, dtype="<f4").reshape(dims)
        if f.read(1):
            raise FormatError("trailing bytes after last tensor")
    model = FortressModel(cfg, seed=0)
    model.load_state_dict(state)
    return model
