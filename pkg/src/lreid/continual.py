"""Sequential training over a task stream.

Per step: a PK batch of new instances (and, once the exemplar buffer is
non-empty, a PK batch of old instances) runs through both models; the student
takes a gradient step on the combined objective and the teacher trails it by
EMA. After each task the buffer stores a seeded identity-balanced sample of
that task's training data.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import losses as L
from . import evaluation, fusion
from . import tensor as T
from .checkpoint import save_checkpoint
from .data import Dataset, SyntheticSpec, generate_synthetic, load_folder, pk_sample, relabel_tasks, split_query_gallery, TaskData
from .model import StudentTeacherPair
from .optim import SgdMomentum
from .rng import STREAM_BUFFER, STREAM_DATA, STREAM_INIT, derive_rng
from .tensor import Tensor

LOSS_KEYS = ("id", "trip_new", "ortho", "distill", "trip_old", "consist", "soft", "total")


class MemoryBuffer:
    """Bounded exemplar store; each finished task gets its own budget."""

    def __init__(self, ids_per_task, imgs_per_id):
        self.ids_per_task = ids_per_task
        self.imgs_per_id = imgs_per_id
        self.per_task = {}

    def __len__(self):
        return sum(len(d) for d in self.per_task.values())

    @property
    def budget_per_task(self):
        return self.ids_per_task * self.imgs_per_id

    def update(self, task_id, dataset, seed):
        """Sample ids_per_task identities x imgs_per_id images from a finished task."""
        if task_id in self.per_task:
            raise ValueError(f"buffer already holds task {task_id}")
        rng = derive_rng(seed, STREAM_BUFFER, task_id)
        ids = dataset.unique_ids()
        if len(ids) < self.ids_per_task:
            warnings.warn(
                f"task {task_id} has {len(ids)} identities, fewer than the {self.ids_per_task} budget; storing all"
            )
        chosen = rng.choice(ids, size=min(self.ids_per_task, len(ids)), replace=False)
        picks = []
        for pid in chosen:
            candidates = np.flatnonzero(dataset.person_ids == pid)
            if len(candidates) < self.imgs_per_id:
                warnings.warn(f"identity {pid} has {len(candidates)} images, fewer than budget; storing all")
            take = rng.choice(candidates, size=min(self.imgs_per_id, len(candidates)), replace=False)
            picks.append(take)
        subset = dataset.subset(np.concatenate(picks))
        subset.task_ids = np.full(len(subset), task_id, dtype=np.int64)
        self.per_task[task_id] = subset
        return self

    def as_dataset(self):
        if not self.per_task:
            raise ValueError("buffer is empty")
        return Dataset.concatenate([self.per_task[t] for t in sorted(self.per_task)])


@dataclass
class TaskSchedule:
    """Ordered task stream plus the held-out evaluation-only datasets."""

    tasks: list
    unseen: list = field(default_factory=list)
    offsets: list = field(default_factory=list)

    def decode_label(self, global_id):
        """Inverse of the global remap: global id -> (task index, local id)."""
        for t in reversed(range(len(self.offsets))):
            if global_id >= self.offsets[t]:
                return t, global_id - self.offsets[t]
        raise ValueError(f"global id {global_id} below all offsets")


def build_task_stream(cfg):
    """Materialize the task stream: folder tasks if configured, else synthetic."""
    if cfg.task_dirs:
        tasks = _folder_tasks(cfg)
    else:
        tasks = _synthetic_tasks(cfg)
    tasks, offsets = relabel_tasks(tasks)
    unseen = _unseen_tasks(cfg)
    return TaskSchedule(tasks=tasks, unseen=unseen, offsets=offsets)


def _spec_seed(cfg_seed, *path):
    return int(np.random.SeedSequence([cfg_seed, STREAM_DATA, *path]).generate_state(1)[0])


# Per-task canvas shades: consecutive tasks sit in visibly different domains,
# which is what drives forgetting in a naively fine-tuned model.
TASK_BACKGROUNDS = (0.30, 0.55, 0.75, 0.40, 0.65)
UNSEEN_BACKGROUNDS = (0.48, 0.62, 0.36)


def _synthetic_tasks(cfg):
    tasks = []
    for t in range(cfg.num_tasks):
        base = dict(
            ids=cfg.ids_per_task,
            cams=cfg.cams,
            image_size=cfg.image_size,
            background=TASK_BACKGROUNDS[t % len(TASK_BACKGROUNDS)],
            brightness=cfg.brightness,
            translation=cfg.translation,
            noise=cfg.noise,
            seed=_spec_seed(cfg.seed, t),
        )
        train = generate_synthetic(SyntheticSpec(imgs_per_id_per_cam=cfg.train_imgs_per_id_per_cam, split=0, **base))
        test = generate_synthetic(SyntheticSpec(imgs_per_id_per_cam=cfg.test_imgs_per_id_per_cam, split=1, **base))
        query, gallery = split_query_gallery(test)
        tasks.append(TaskData(name=f"task{t + 1}", train=train, query=query, gallery=gallery, num_ids=cfg.ids_per_task))
    return tasks


def _unseen_tasks(cfg):
    """Held-out domains: fresh identities under nuisance ranges never trained on."""
    unseen = []
    for u in range(cfg.unseen_specs):
        spec = SyntheticSpec(
            ids=cfg.ids_per_task,
            cams=cfg.cams,
            imgs_per_id_per_cam=cfg.test_imgs_per_id_per_cam,
            image_size=cfg.image_size,
            background=UNSEEN_BACKGROUNDS[u % len(UNSEEN_BACKGROUNDS)],
            brightness=cfg.brightness * 1.25,
            translation=cfg.translation + 1,
            noise=cfg.noise * 2.0,
            seed=_spec_seed(cfg.seed, 100 + u),
            split=1,
        )
        query, gallery = split_query_gallery(generate_synthetic(spec))
        unseen.append(TaskData(name=f"unseen{u + 1}", train=None, query=query, gallery=gallery, num_ids=spec.ids))
    return unseen


def _folder_tasks(cfg):
    tasks = []
    for t, folder in enumerate(d for d in cfg.task_dirs.split(";") if d):
        full = load_folder(folder, image_size=cfg.image_size)
        # alternate images of each (pid, cam) between train and test
        order = np.lexsort((np.arange(len(full)), full.camera_ids, full.person_ids))
        test_mask = np.zeros(len(full), dtype=bool)
        counters = {}
        for i in order:
            key = (int(full.person_ids[i]), int(full.camera_ids[i]))
            counters[key] = counters.get(key, 0) + 1
            test_mask[i] = counters[key] % 2 == 0
        train = full.subset(np.flatnonzero(~test_mask))
        query, gallery = split_query_gallery(full.subset(np.flatnonzero(test_mask)))
        # local ids must be dense 0..n-1 before the global remap
        uniq = np.unique(train.person_ids)
        remap = {pid: i for i, pid in enumerate(uniq)}
        for ds in (train, query, gallery):
            ds.person_ids = np.asarray([remap[pid] for pid in ds.person_ids], dtype=np.int64)
        tasks.append(TaskData(name=f"task{t + 1}", train=train, query=query, gallery=gallery, num_ids=len(uniq)))
    if not tasks:
        raise ValueError("task_dirs produced no tasks")
    return tasks


def _concat_features(reps):
    """Row features [fused; A^1; ...; A^S] along the feature axis."""
    return T.concat([reps.fused] + list(reps.aux), axis=1)


def _stack_representations(reps):
    """B x (S+1) x D stack [fused; A^1; ...; A^S] for the consistency loss."""
    b, d = reps.fused.shape
    parts = [T.reshape(reps.fused, (b, 1, d))] + [T.reshape(a, (b, 1, d)) for a in reps.aux]
    return T.concat(parts, axis=1)


def _triplet_term(reps, labels, margin, averaged):
    if averaged:
        parts = [reps.fused] + list(reps.aux)
        terms = [L.triplet_loss(L.mine_triplets(p, labels), margin) for p in parts]
        total = terms[0]
        for t in terms[1:]:
            total = T.add(total, t)
        return T.mul(total, 1.0 / len(terms))
    feats = _concat_features(reps)
    return L.triplet_loss(L.mine_triplets(feats, labels), margin)


def training_step(pair, cfg, batch, buffer_batch, dropout_rng=None):
    """One combined-objective step; returns (total Tensor, per-term floats, omega)."""
    zero = Tensor(np.asarray(0.0, dtype=T.get_default_dtype()))
    student, teacher = pair.student, pair.teacher

    reps_new, omega = student.forward(batch.images, train=True, dropout_rng=dropout_rng)
    logits_new = student.logits(reps_new.fused)
    l_id = L.identity_loss(logits_new, batch.person_ids)
    l_trip = _triplet_term(reps_new, batch.person_ids, cfg.margin, cfg.averaged_triplet)
    l_ort = fusion.orthogonality_loss(reps_new.aux) if cfg.use_ortho else zero
    base = L.base_loss(T.mul(l_id, cfg.w_id), T.mul(l_trip, cfg.w_triplet), T.mul(l_ort, cfg.w_ortho))

    l_distill = zero
    if cfg.use_distill:
        reps_t, _ = teacher.forward(batch.images)
        teacher_logits = teacher.logits(reps_t.fused)
        l_distill = L.distill_kl_loss(teacher_logits.data, logits_new, cfg.temperature)

    l_trip_old = zero
    l_consist = zero
    l_soft = zero
    if buffer_batch is not None and (cfg.use_align or cfg.use_soft_targets):
        reps_old, _ = student.forward(buffer_batch.images, train=True, dropout_rng=dropout_rng)
        reps_told, _ = teacher.forward(buffer_batch.images)
        if cfg.use_align:
            l_trip_old = _triplet_term(reps_old, buffer_batch.person_ids, cfg.margin, cfg.averaged_triplet)
            l_consist = L.consistency_loss(_stack_representations(reps_told).data, _stack_representations(reps_old))
        if cfg.use_soft_targets:
            l_soft = L.soft_target_loss(teacher.logits(reps_told.fused).data, student.logits(reps_old.fused))

    align = L.alignment_loss(T.mul(l_trip_old, cfg.w_triplet_old), T.mul(l_consist, cfg.w_consist))
    total = L.total_loss(base, T.mul(l_distill, cfg.w_distill), align, T.mul(l_soft, cfg.w_soft))
    terms = {
        "id": l_id.item(),
        "trip_new": l_trip.item(),
        "ortho": l_ort.item(),
        "distill": l_distill.item(),
        "trip_old": l_trip_old.item(),
        "consist": l_consist.item(),
        "soft": l_soft.item(),
        "total": total.item(),
    }
    return total, terms, omega


def train_task(task_index, schedule, pair, buffer, cfg, log=None, out_dir=None):
    """Train one task of the stream; returns the per-epoch metric records."""
    task = schedule.tasks[task_index]
    if len(task.train) == 0:
        raise ValueError(f"task {task_index} has an empty training set")
    head_rng = derive_rng(cfg.seed, STREAM_INIT, 1000 + task_index)
    pair.register_task_classes(task_index, task.num_ids, head_rng)

    steps_per_epoch = max(1, len(task.train) // cfg.batch_size)
    optimizer = SgdMomentum(
        pair.student.trainable_params(),
        base_lr=cfg.lr,
        momentum=cfg.momentum,
        total_steps=cfg.epochs_per_task * steps_per_epoch,
    )
    use_buffer_losses = cfg.use_buffer and (cfg.use_align or cfg.use_soft_targets)
    dropout_rng = derive_rng(cfg.seed, STREAM_INIT, 2000 + task_index) if cfg.dropout > 0 else None
    records = []
    for epoch in range(cfg.epochs_per_task):
        sums = {k: 0.0 for k in LOSS_KEYS}
        omega_sum = np.zeros(cfg.aux_tokens)
        lr = optimizer.current_lr()
        for step in range(steps_per_epoch):
            step_id = (task_index * cfg.epochs_per_task + epoch) * steps_per_epoch + step
            batch = pk_sample(task.train, cfg.batch_p, cfg.batch_k, cfg.seed, step_id)
            buffer_batch = None
            if use_buffer_losses and len(buffer.per_task) > 0:
                buffer_batch = _buffer_batch(buffer, cfg, step_id)
            total, terms, omega = training_step(pair, cfg, batch, buffer_batch, dropout_rng)
            grads = T.gradient_of(total, optimizer.params)
            lr = optimizer.step(grads)
            pair.ema_update()
            for k in LOSS_KEYS:
                sums[k] += terms[k]
            if omega.size:
                omega_sum += omega.mean(axis=1)
        record = {
            "record": "epoch",
            "task": task_index + 1,
            "epoch": epoch + 1,
            "lr": lr,
            "omega": [float(x) for x in omega_sum / steps_per_epoch],
        }
        record.update({f"loss_{k}": sums[k] / steps_per_epoch for k in LOSS_KEYS})
        records.append(record)
        if log is not None:
            log.write(record)
        if out_dir is not None and (cfg.save_every_epoch or epoch == cfg.epochs_per_task - 1):
            _save_pair_checkpoint(pair, cfg, out_dir, task_index + 1, epoch + 1)

    if cfg.use_buffer:
        buffer.update(task_index, task.train, cfg.seed)
    return records


def _buffer_batch(buffer, cfg, step_id):
    """Identity-balanced draw from the buffer, capped at the new-batch size."""
    data = buffer.as_dataset()
    k = min(cfg.batch_k, max(2, cfg.buffer_imgs_per_id))
    p = min(max(1, cfg.batch_size // k), len(data.unique_ids()))
    return pk_sample(data, p, k, cfg.seed, step_id, stream=STREAM_BUFFER)


def _save_pair_checkpoint(pair, cfg, out_dir, task_number, epoch_number):
    from .config import serialize_config  # local import to avoid a cycle

    arrays = {f"student.{k}": v for k, v in pair.student.state_arrays().items()}
    arrays.update({f"teacher.{k}": v for k, v in pair.teacher.state_arrays().items()})
    arrays["meta.class_offsets"] = np.asarray(pair.class_offsets, dtype=np.int64)
    arrays["meta.task_class_counts"] = np.asarray(
        [pair.registered_tasks[t][1] for t in sorted(pair.registered_tasks)], dtype=np.int64
    )
    path = out_dir / f"task{task_number}_epoch{epoch_number}.ckpt"
    save_checkpoint(path, arrays, serialize_config(cfg))
    return path


def run_training(cfg, out_dir=None, log=None):
    """Full schedule: train every task in order, then evaluate everything seen.

    Returns (pair, schedule, report, aux_overlap value).
    """
    T.set_default_dtype(cfg.precision)
    schedule = build_task_stream(cfg)
    pair = StudentTeacherPair(
        cfg.backbone_config(),
        derive_rng(cfg.seed, STREAM_INIT),
        ema_k=cfg.ema_k,
        clamp_fusion=cfg.clamp_fusion_weights,
    )
    buffer = MemoryBuffer(cfg.buffer_ids_per_task, cfg.buffer_imgs_per_id)
    for t in range(len(schedule.tasks)):
        train_task(t, schedule, pair, buffer, cfg, log=log, out_dir=out_dir)
    eval_model = pair.teacher if cfg.eval_model == "teacher" else pair.student
    report = evaluation.incremental_report(eval_model, schedule.tasks, schedule.unseen, feature=cfg.eval_feature)
    overlap = evaluation.aux_overlap(eval_model, Dataset.concatenate([t.query for t in schedule.tasks]))
    if log is not None:
        for row in report.rows:
            log.write({"record": "eval", "dataset": row.name, "split": row.split, "map": row.map, "rank1": row.rank1})
        log.write(
            {
                "record": "summary",
                "seen_avg_map": report.seen_avg_map,
                "seen_avg_rank1": report.seen_avg_rank1,
                "unseen_avg_map": report.unseen_avg_map,
                "unseen_avg_rank1": report.unseen_avg_rank1,
                "aux_overlap": overlap,
            }
        )
    return pair, schedule, report, overlap
