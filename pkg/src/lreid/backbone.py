"""Multi-token transformer encoder for identity embeddings.

The encoder consumes one primary class token, S auxiliary class tokens, and a
patch sequence whose per-channel peak patches are amplified before encoding
(replacing camera/viewpoint side embeddings). Outputs are one primary and S
auxiliary embeddings per image.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .rng import trunc_normal
from .tensor import Tensor

EMPHASIS_MODES = ("emphasis", "mask", "off")


@dataclass
class BackboneConfig:
    image_height: int = 32
    image_width: int = 32
    channels: int = 3
    patch_size: int = 8
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    aux_tokens: int = 2
    mlp_ratio: float = 4.0
    emphasis_mode: str = "emphasis"
    dropout: float = 0.0

    def __post_init__(self):
        if self.image_height % self.patch_size or self.image_width % self.patch_size:
            raise ValueError("image dims must be divisible by patch size")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.aux_tokens < 0:
            raise ValueError("aux_tokens must be >= 0")
        if self.emphasis_mode not in EMPHASIS_MODES:
            raise ValueError(f"emphasis_mode must be one of {EMPHASIS_MODES}")

    @property
    def num_patches(self):
        return (self.image_height // self.patch_size) * (self.image_width // self.patch_size)

    @property
    def seq_len(self):
        # primary token + S auxiliary tokens + patches
        return self.num_patches + self.aux_tokens + 1


@dataclass
class Representations:
    """Per-batch embeddings: primary P, auxiliaries A^1..A^S, fused primary."""

    primary: Tensor
    aux: list = field(default_factory=list)
    fused: Tensor = None

    @property
    def num_aux(self):
        return len(self.aux)


class Backbone:
    """Patchify -> peak emphasis -> token assembly -> pre-norm encoder."""

    def __init__(self, config, rng):
        self.config = config
        self.params = {}
        c = config
        dtype = T.get_default_dtype()

        def p(name, arr):
            t = Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)
            self.params[name] = t
            return t

        patch_in = c.channels * c.patch_size * c.patch_size
        p("patch_proj.w", trunc_normal(rng, (patch_in, c.embed_dim)))
        p("patch_proj.b", np.zeros(c.embed_dim))
        p("cls_tokens", trunc_normal(rng, (c.aux_tokens + 1, c.embed_dim)))
        p("pos_embed", trunc_normal(rng, (c.seq_len, c.embed_dim)))
        hidden = int(c.embed_dim * c.mlp_ratio)
        for i in range(c.depth):
            pre = f"block{i}."
            p(pre + "ln1.g", np.ones(c.embed_dim))
            p(pre + "ln1.b", np.zeros(c.embed_dim))
            for nm in ("q", "k", "v", "o"):
                p(pre + f"attn.w{nm}", trunc_normal(rng, (c.embed_dim, c.embed_dim)))
                p(pre + f"attn.b{nm}", np.zeros(c.embed_dim))
            p(pre + "ln2.g", np.ones(c.embed_dim))
            p(pre + "ln2.b", np.zeros(c.embed_dim))
            p(pre + "mlp.w1", trunc_normal(rng, (c.embed_dim, hidden)))
            p(pre + "mlp.b1", np.zeros(hidden))
            p(pre + "mlp.w2", trunc_normal(rng, (hidden, c.embed_dim)))
            p(pre + "mlp.b2", np.zeros(c.embed_dim))
        p("final_ln.g", np.ones(c.embed_dim))
        p("final_ln.b", np.zeros(c.embed_dim))

    # -- pipeline stages -----------------------------------------------------

    def patchify(self, images):
        """Project B x C x H x W images to the B x N x D patch sequence.

        Patches are ordered row-major, top-left to bottom-right.
        """
        c = self.config
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[1:] != (c.channels, c.image_height, c.image_width):
            raise ValueError(
                f"expected images of shape (B, {c.channels}, {c.image_height}, {c.image_width}),"
                f" got {images.shape}"
            )
        b = images.shape[0]
        ph = c.image_height // c.patch_size
        pw = c.image_width // c.patch_size
        patches = (
            images.reshape(b, c.channels, ph, c.patch_size, pw, c.patch_size)
            .transpose(0, 2, 4, 1, 3, 5)
            .reshape(b, ph * pw, -1)
            .astype(T.get_default_dtype())
        )
        return T.add(T.matmul(Tensor(patches), self.params["patch_proj.w"]), self.params["patch_proj.b"])

    def emphasize(self, z0):
        """Amplify, per embedding channel, the patch holding the channel maximum.

        Ties choose the lowest patch index. The default mode doubles the peak
        entry and keeps all others (z0 * (1 + mask)); "mask" keeps only the
        peaks (z0 * mask); "off" is the identity.
        """
        mode = self.config.emphasis_mode
        if mode == "off":
            return z0
        peak = z0.data.argmax(axis=1)  # (B, D); argmax takes the first maximum
        mask = np.zeros_like(z0.data)
        np.put_along_axis(mask, peak[:, None, :], 1.0, axis=1)
        if mode == "mask":
            return T.mul(z0, Tensor(mask))
        return T.mul(z0, Tensor(mask + 1.0))

    def assemble(self, emphasized):
        """Prepend the class tokens and add the position embedding."""
        b = emphasized.shape[0]
        n_tok = self.config.aux_tokens + 1
        if emphasized.shape[1] != self.config.num_patches or emphasized.shape[2] != self.config.embed_dim:
            raise ValueError(f"unexpected patch sequence shape {emphasized.shape}")
        tokens = T.broadcast_to(
            T.reshape(self.params["cls_tokens"], (1, n_tok, self.config.embed_dim)),
            (b, n_tok, self.config.embed_dim),
        )
        seq = T.concat([tokens, emphasized], axis=1)
        return T.add(seq, self.params["pos_embed"])

    def layer_outputs(self, z, train=False, dropout_rng=None):
        """Yield the sequence after each encoder block, then after the final norm."""
        x = z
        for i in range(self.config.depth):
            pre = f"block{i}."
            h = T.layer_norm(x, self.params[pre + "ln1.g"], self.params[pre + "ln1.b"])
            x = T.add(x, self._attention(h, pre, train, dropout_rng))
            h = T.layer_norm(x, self.params[pre + "ln2.g"], self.params[pre + "ln2.b"])
            x = T.add(x, self._mlp(h, pre, train, dropout_rng))
            yield x
        yield T.layer_norm(x, self.params["final_ln.g"], self.params["final_ln.b"])

    def encode(self, z, train=False, dropout_rng=None):
        """Run the pre-norm encoder stack and split off the token outputs."""
        for x in self.layer_outputs(z, train=train, dropout_rng=dropout_rng):
            pass
        primary = x[:, 0, :]
        aux = [x[:, s, :] for s in range(1, self.config.aux_tokens + 1)]
        return Representations(primary=primary, aux=aux)

    def forward(self, images, train=False, dropout_rng=None):
        z0 = self.patchify(images)
        z = self.assemble(self.emphasize(z0))
        return self.encode(z, train=train, dropout_rng=dropout_rng)

    # -- internals -------------------------------------------------------------

    def _attention(self, h, pre, train, dropout_rng):
        c = self.config
        b, length, d = h.shape
        dh = d // c.heads

        def heads(t):
            return T.transpose(T.reshape(t, (b, length, c.heads, dh)), (0, 2, 1, 3))

        q = heads(T.add(T.matmul(h, self.params[pre + "attn.wq"]), self.params[pre + "attn.bq"]))
        k = heads(T.add(T.matmul(h, self.params[pre + "attn.wk"]), self.params[pre + "attn.bk"]))
        v = heads(T.add(T.matmul(h, self.params[pre + "attn.wv"]), self.params[pre + "attn.bv"]))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        attn = T.softmax(scores, axis=-1)
        out = T.reshape(T.transpose(T.matmul(attn, v), (0, 2, 1, 3)), (b, length, d))
        out = T.add(T.matmul(out, self.params[pre + "attn.wo"]), self.params[pre + "attn.bo"])
        return self._dropout(out, train, dropout_rng)

    def _mlp(self, h, pre, train, dropout_rng):
        x = T.gelu(T.add(T.matmul(h, self.params[pre + "mlp.w1"]), self.params[pre + "mlp.b1"]))
        x = T.add(T.matmul(x, self.params[pre + "mlp.w2"]), self.params[pre + "mlp.b2"])
        return self._dropout(x, train, dropout_rng)

    def _dropout(self, x, train, dropout_rng):
        rate = self.config.dropout
        if not train or rate <= 0.0:
            return x
        if dropout_rng is None:
            raise ValueError("dropout requires a generator in training mode")
        keep = (dropout_rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
        return T.mul(x, Tensor(keep))
