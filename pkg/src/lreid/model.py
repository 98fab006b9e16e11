"""Retrieval model (encoder + growing classifier head) and the EMA pair.

The student is trained by the optimizer; the teacher shares the exact
parameter structure and trails it through an exponential moving average,
providing constant distillation targets.
"""

import numpy as np

from . import fusion
from . import tensor as T
from .backbone import Backbone
from .rng import trunc_normal
from .tensor import Tensor


class ClassifierHead:
    """Linear head over a class space that grows as tasks register."""

    def __init__(self, embed_dim):
        self.embed_dim = embed_dim
        dtype = T.get_default_dtype()
        self.weight = Tensor(np.zeros((0, embed_dim), dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros((0,), dtype=dtype), requires_grad=True)

    @property
    def num_classes(self):
        return self.weight.shape[0]

    def expand(self, count, rng=None, rows=None, bias=None):
        """Append `count` classes. Existing rows are preserved bitwise.

        New rows come from `rows`/`bias` when given (used to mirror the
        student's initialization into the teacher) or are freshly initialized.
        """
        if count == 0:
            return self
        dtype = self.weight.dtype
        if rows is None:
            rows = trunc_normal(rng, (count, self.embed_dim)).astype(dtype)
            bias = np.zeros(count, dtype=dtype)
        grad = self.weight.requires_grad
        self.weight = Tensor(np.concatenate([self.weight.data, rows]), requires_grad=grad)
        self.bias = Tensor(np.concatenate([self.bias.data, bias]), requires_grad=grad)
        return self

    def logits(self, features):
        if self.num_classes == 0:
            raise ValueError("no classes registered in the classifier head")
        return T.add(T.matmul(features, T.transpose(self.weight, (1, 0))), self.bias)


class ReidModel:
    """Encoder plus head; forward yields fused and auxiliary embeddings."""

    def __init__(self, backbone_config, rng=None, clamp_fusion=False, _backbone=None):
        self.config = backbone_config
        self.backbone = _backbone if _backbone is not None else Backbone(backbone_config, rng)
        self.head = ClassifierHead(backbone_config.embed_dim)
        self.clamp_fusion = clamp_fusion

    def named_params(self):
        params = dict(self.backbone.params)
        params["head.w"] = self.head.weight
        params["head.b"] = self.head.bias
        return params

    def trainable_params(self):
        return [p for p in self.named_params().values() if p.requires_grad]

    def forward(self, images, train=False, dropout_rng=None):
        """Encode images; returns (Representations with .fused set, fusion weights)."""
        reps = self.backbone.forward(images, train=train, dropout_rng=dropout_rng)
        reps.fused, weights = fusion.integrate(reps.primary, reps.aux, clamp_weights=self.clamp_fusion)
        return reps, weights

    def logits(self, fused):
        return self.head.logits(fused)

    def set_requires_grad(self, flag):
        for p in self.named_params().values():
            p.requires_grad = flag

    def clone(self, requires_grad=False):
        """Structural copy with duplicated parameter arrays."""
        twin_backbone = Backbone.__new__(Backbone)
        twin_backbone.config = self.backbone.config
        twin_backbone.params = {
            name: Tensor(p.data.copy(), requires_grad=requires_grad)
            for name, p in self.backbone.params.items()
        }
        twin = ReidModel(self.config, clamp_fusion=self.clamp_fusion, _backbone=twin_backbone)
        twin.head.weight = Tensor(self.head.weight.data.copy(), requires_grad=requires_grad)
        twin.head.bias = Tensor(self.head.bias.data.copy(), requires_grad=requires_grad)
        return twin

    def state_arrays(self):
        return {name: p.data for name, p in self.named_params().items()}

    def load_state_arrays(self, arrays, prefix=""):
        params = self.named_params()
        for name in params:
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint missing parameter {key!r}")
        # head shapes may differ until expanded to the stored class count
        stored_classes = arrays[prefix + "head.w"].shape[0]
        if self.head.num_classes != stored_classes:
            self.head.weight = Tensor(arrays[prefix + "head.w"].copy(), requires_grad=self.head.weight.requires_grad)
            self.head.bias = Tensor(arrays[prefix + "head.b"].copy(), requires_grad=self.head.bias.requires_grad)
        else:
            self.head.weight.data = arrays[prefix + "head.w"].copy()
            self.head.bias.data = arrays[prefix + "head.b"].copy()
        for name, p in self.backbone.params.items():
            stored = arrays[prefix + name]
            if stored.shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}: {stored.shape} vs {p.data.shape}")
            p.data = stored.copy()


class StudentTeacherPair:
    """Trainable student and its EMA-trailing teacher."""

    def __init__(self, backbone_config, rng, ema_k=0.996, clamp_fusion=False):
        self.student = ReidModel(backbone_config, rng, clamp_fusion=clamp_fusion)
        self.teacher = self.student.clone(requires_grad=False)
        self.ema_k = ema_k
        self.registered_tasks = {}
        self.class_offsets = []

    @property
    def num_classes(self):
        return self.student.head.num_classes

    def register_task_classes(self, task_id, count, rng):
        """Grow both heads for a new task; the teacher copies the student's
        fresh rows so the structures stay congruent."""
        if task_id in self.registered_tasks:
            raise ValueError(f"task {task_id} classes already registered")
        offset = self.student.head.num_classes
        self.student.head.expand(count, rng=rng)
        new_rows = self.student.head.weight.data[offset:].copy()
        new_bias = self.student.head.bias.data[offset:].copy()
        self.teacher.head.expand(count, rows=new_rows, bias=new_bias)
        self.registered_tasks[task_id] = (offset, count)
        self.class_offsets.append(offset)
        return offset

    def ema_update(self):
        """teacher <- k * teacher + (1 - k) * student, every parameter."""
        k = self.ema_k
        student = self.student.named_params()
        teacher = self.teacher.named_params()
        if student.keys() != teacher.keys():
            raise ValueError("student/teacher parameter sets diverged")
        for name, sp in student.items():
            tp = teacher[name]
            if tp.data.shape != sp.data.shape:
                raise ValueError(f"structural drift in {name}: {tp.data.shape} vs {sp.data.shape}")
            tp.data = k * tp.data + (1.0 - k) * sp.data
