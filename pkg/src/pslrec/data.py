"""Interaction loading, k-core filtering, IID/OOD/Noise splits and negative sampling."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, EmptyDatasetError, ParseError, SamplingError

SETTINGS = ("iid", "ood", "noise")


def make_rng(seed) -> np.random.Generator:
    """PCG64 stream; identical seeds give identical draws on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed, n: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def round_half_up(x: float) -> int:
    # guard against 2.4999999999 from fractional products such as 0.1 * 25
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable user-item interactions, stored as sorted per-user positive lists."""

    n_users: int
    n_items: int
    positives: tuple
    user_labels: Optional[tuple] = None
    item_labels: Optional[tuple] = None

    def __post_init__(self):
        if len(self.positives) != self.n_users:
            raise DataError(f"expected {self.n_users} positive lists, got {len(self.positives)}")
        fixed = []
        for u, p in enumerate(self.positives):
            arr = np.asarray(p, dtype=np.int64)
            if arr.ndim != 1:
                raise DataError(f"positives of user {u} must be 1-d")
            if arr.size:
                if arr.min() < 0 or arr.max() >= self.n_items:
                    raise DataError(f"user {u} has item index out of range [0, {self.n_items})")
                if np.any(np.diff(arr) <= 0):
                    arr = np.unique(arr)
            arr.setflags(write=False)
            fixed.append(arr)
        object.__setattr__(self, "positives", tuple(fixed))

    @classmethod
    def from_pairs(cls, n_users, n_items, users, items, user_labels=None, item_labels=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape:
            raise DataError("users and items must have the same length")
        if users.size and (users.min() < 0 or users.max() >= n_users):
            raise DataError("user index out of range")
        order = np.lexsort((items, users))
        users, items = users[order], items[order]
        bounds = np.searchsorted(users, np.arange(n_users + 1))
        positives = tuple(np.unique(items[bounds[u]:bounds[u + 1]]) for u in range(n_users))
        return cls(n_users, n_items, positives, user_labels, item_labels)

    @classmethod
    def empty_like(cls, other: "Dataset") -> "Dataset":
        return cls(other.n_users, other.n_items, tuple(() for _ in range(other.n_users)),
                   other.user_labels, other.item_labels)

    @property
    def n_interactions(self) -> int:
        return int(sum(p.size for p in self.positives))

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """All interactions as (users, items), sorted by user then item."""
        sizes = [p.size for p in self.positives]
        users = np.repeat(np.arange(self.n_users, dtype=np.int64), sizes)
        items = np.concatenate(self.positives) if self.n_users else np.zeros(0, dtype=np.int64)
        return users, items.astype(np.int64)

    def item_counts(self) -> np.ndarray:
        _, items = self.pairs()
        return np.bincount(items, minlength=self.n_items)

    def user_counts(self) -> np.ndarray:
        return np.array([p.size for p in self.positives], dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.n_users == other.n_users and self.n_items == other.n_items
                and all(np.array_equal(a, b) for a, b in zip(self.positives, other.positives)))

    def __repr__(self):
        return f"Dataset(n_users={self.n_users}, n_items={self.n_items}, n_interactions={self.n_interactions})"


@dataclass(frozen=True, eq=False)
class SplitBundle:
    train: Dataset
    test: Dataset
    validation: Optional[Dataset] = None
    noise_pool: tuple = ()
    setting_tag: str = "iid"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.setting_tag not in SETTINGS:
            raise DataError(f"unknown setting {self.setting_tag!r}")
        parts = [self.train, self.test] + ([self.validation] if self.validation is not None else [])
        if len({(d.n_users, d.n_items) for d in parts}) != 1:
            raise DataError("train/validation/test must share n_users and n_items")
        if not self.noise_pool:
            object.__setattr__(self, "noise_pool", tuple(np.zeros(0, dtype=np.int64) for _ in range(self.n_users)))
        else:
            pools = tuple(np.unique(np.asarray(p, dtype=np.int64)) for p in self.noise_pool)
            if len(pools) != self.n_users:
                raise DataError("noise_pool must have one entry per user")
            object.__setattr__(self, "noise_pool", pools)

    @property
    def n_users(self):
        return self.train.n_users

    @property
    def n_items(self):
        return self.train.n_items

    def noise_dataset(self) -> Dataset:
        return Dataset(self.n_users, self.n_items, self.noise_pool, self.train.user_labels, self.train.item_labels)


# --------------------------------------------------------------------------- loading


def load_interactions(path) -> Dataset:
    """Read ``user<TAB>item`` lines with string ids, densely re-indexed in first-appearance order."""
    path = Path(path)
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    users, items = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(path, lineno, f"expected 2 tab-separated fields, got {len(fields)}")
            u, i = fields[0].strip(), fields[1].strip()
            if not u or not i:
                raise ParseError(path, lineno, "empty id")
            users.append(user_ids.setdefault(u, len(user_ids)))
            items.append(item_ids.setdefault(i, len(item_ids)))
    if not users:
        raise EmptyDatasetError(f"{path}: no interactions")
    return Dataset.from_pairs(len(user_ids), len(item_ids), users, items,
                              tuple(user_ids), tuple(item_ids))


def k_core_filter(d: Dataset, k: int) -> Dataset:
    """Iteratively drop users and items with fewer than ``k`` interactions, then re-index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    users, items = d.pairs()
    keep = np.ones(users.size, dtype=bool)
    while True:
        uc = np.bincount(users[keep], minlength=d.n_users)
        ic = np.bincount(items[keep], minlength=d.n_items)
        bad = keep & ((uc[users] < k) | (ic[items] < k))
        if not bad.any():
            break
        keep &= ~bad
    users, items = users[keep], items[keep]
    u_keep = np.unique(users)
    i_keep = np.unique(items)
    u_map = np.full(d.n_users, -1, dtype=np.int64)
    i_map = np.full(d.n_items, -1, dtype=np.int64)
    u_map[u_keep] = np.arange(u_keep.size)
    i_map[i_keep] = np.arange(i_keep.size)
    ul = tuple(d.user_labels[j] for j in u_keep) if d.user_labels is not None else None
    il = tuple(d.item_labels[j] for j in i_keep) if d.item_labels is not None else None
    return Dataset.from_pairs(u_keep.size, i_keep.size, u_map[users], i_map[items], ul, il)


# --------------------------------------------------------------------------- splits


def _rebuild(d: Dataset, users, items) -> Dataset:
    return Dataset.from_pairs(d.n_users, d.n_items, users, items, d.user_labels, d.item_labels)


def split_iid(d: Dataset, test_frac: float, val_frac: float, rng: np.random.Generator) -> SplitBundle:
    """Per-user random split: round(|P_u| * test_frac) to test, then val_frac of the rest to validation."""
    if not 0 < test_frac < 1:
        raise ValueError("test_frac must lie in (0, 1)")
    if not 0 <= val_frac < 1:
        raise ValueError("val_frac must lie in [0, 1)")
    tr, va, te = [], [], []
    for p in d.positives:
        perm = p[rng.permutation(p.size)]
        n_test = round_half_up(p.size * test_frac)
        rest = perm[n_test:]
        n_val = round_half_up(rest.size * val_frac)
        te.append(np.sort(perm[:n_test]))
        va.append(np.sort(rest[:n_val]))
        tr.append(np.sort(rest[n_val:]))
    mk = lambda lists: Dataset(d.n_users, d.n_items, tuple(lists), d.user_labels, d.item_labels)
    return SplitBundle(
        train=mk(tr), test=mk(te), validation=mk(va) if val_frac > 0 else None,
        setting_tag="iid", meta={"test_frac": test_frac, "val_frac": val_frac},
    )


def _ood_quota(counts: np.ndarray, target: int) -> int:
    """Smallest per-item quota q with sum(min(q, count - 1)) >= target (water level)."""
    cap = np.maximum(counts - 1, 0)
    if cap.sum() <= target:
        return int(cap.max()) if cap.size else 0
    q = max(1, math.ceil(target / max(1, int((counts > 0).sum()))))
    while np.minimum(cap, q).sum() < target:
        q += 1
    return q


def split_ood(d: Dataset, test_frac: float, rng: np.random.Generator) -> SplitBundle:
    """Popularity-flattened test set; every item keeps at least one training interaction."""
    if not 0 < test_frac < 1:
        raise ValueError("test_frac must lie in (0, 1)")
    users, items = d.pairs()
    target = round_half_up(test_frac * users.size)
    counts = np.bincount(items, minlength=d.n_items)
    q = _ood_quota(counts, target)
    order = np.argsort(items, kind="stable")
    bounds = np.searchsorted(items[order], np.arange(d.n_items + 1))
    chosen = []
    for i in range(d.n_items):
        rows = order[bounds[i]:bounds[i + 1]]
        take = min(q, rows.size - 1)
        if take > 0:
            chosen.append(rng.choice(rows, size=take, replace=False))
    chosen = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    if chosen.size > target:
        chosen = rng.choice(chosen, size=target, replace=False)
    in_test = np.zeros(users.size, dtype=bool)
    in_test[chosen] = True
    return SplitBundle(
        train=_rebuild(d, users[~in_test], items[~in_test]),
        test=_rebuild(d, users[in_test], items[in_test]),
        validation=None, setting_tag="ood",
        meta={"test_frac": test_frac, "ood_quota": q},
    )


def make_noise_pool(s: SplitBundle, noise_frac: float, rng: np.random.Generator) -> SplitBundle:
    """Move round(noise_frac * |train|) random train interactions into per-user false-negative pools."""
    if s.setting_tag != "iid":
        raise DataError("noise pools are built from an iid split")
    if not 0 < noise_frac < 1:
        raise ValueError("noise_frac must lie in (0, 1)")
    users, items = s.train.pairs()
    n_noise = round_half_up(noise_frac * users.size)
    picked = np.zeros(users.size, dtype=bool)
    picked[rng.choice(users.size, size=n_noise, replace=False)] = True
    noise = _rebuild(s.train, users[picked], items[picked])
    meta = dict(s.meta, noise_frac=noise_frac)
    return replace(s, train=_rebuild(s.train, users[~picked], items[~picked]),
                   noise_pool=noise.positives, setting_tag="noise", meta=meta)


# --------------------------------------------------------------------------- sampling


def sample_complement(positives: np.ndarray, n_items: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws (with replacement) from range(n_items) minus the sorted ``positives``."""
    free = n_items - positives.size
    if free <= 0:
        raise SamplingError("user has no non-positive items to sample")
    k = rng.integers(0, free, size=n)
    if positives.size == 0:
        return k
    shifted = positives - np.arange(positives.size)
    return k + np.searchsorted(shifted, k, side="right")


def sample_negatives(s: SplitBundle, user: int, n: int, noise_ratio_p: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` negatives for ``user``; each comes from the noise pool with probability p."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= noise_ratio_p <= 1:
        raise ValueError("noise_ratio_p must lie in [0, 1]")
    pool = s.noise_pool[user]
    p = noise_ratio_p if (s.setting_tag == "noise" and pool.size) else 0.0
    out = np.empty(n, dtype=np.int64)
    if p > 0:
        from_pool = rng.random(n) < p
        n_pool = int(from_pool.sum())
        out[from_pool] = pool[rng.integers(0, pool.size, size=n_pool)]
        rest = ~from_pool
        if n - n_pool:
            out[rest] = sample_complement(s.train.positives[user], s.n_items, n - n_pool, rng)
    else:
        out[:] = sample_complement(s.train.positives[user], s.n_items, n, rng)
    return out


# --------------------------------------------------------------------------- split directories


def _write_tsv(path: Path, d: Dataset, user_labels, item_labels):
    users, items = d.pairs()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in zip(users.tolist(), items.tolist()):
            fh.write(f"{user_labels[u]}\t{item_labels[i]}\n")


def _read_tsv(path: Path, u_index, i_index, n_users, n_items) -> Dataset:
    users, items = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(path, lineno, f"expected 2 tab-separated fields, got {len(fields)}")
            try:
                users.append(u_index[fields[0]])
                items.append(i_index[fields[1]])
            except KeyError as exc:
                raise ParseError(path, lineno, f"id {exc.args[0]!r} missing from manifest") from None
    return Dataset.from_pairs(n_users, n_items, users, items)


def save_split(s: SplitBundle, directory, seed=None, extra: Optional[dict] = None) -> Path:
    """Write train/val/test/noise TSVs plus ``manifest.json`` (ids, fractions, seed, setting)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ul = s.train.user_labels or tuple(str(u) for u in range(s.n_users))
    il = s.train.item_labels or tuple(str(i) for i in range(s.n_items))
    _write_tsv(directory / "train.tsv", s.train, ul, il)
    _write_tsv(directory / "test.tsv", s.test, ul, il)
    _write_tsv(directory / "val.tsv", s.validation if s.validation is not None else Dataset.empty_like(s.train), ul, il)
    _write_tsv(directory / "noise.tsv", s.noise_dataset(), ul, il)
    manifest = {
        "setting_tag": s.setting_tag,
        "seed": seed,
        "n_users": s.n_users,
        "n_items": s.n_items,
        "validation": "present" if s.validation is not None else "none",
        "fractions": {k: v for k, v in s.meta.items() if k.endswith("_frac")},
        "counts": {
            "train": s.train.n_interactions,
            "validation": s.validation.n_interactions if s.validation is not None else 0,
            "test": s.test.n_interactions,
            "noise": int(sum(p.size for p in s.noise_pool)),
        },
        "user_ids": list(ul),
        "item_ids": list(il),
    }
    if extra:
        manifest.update(extra)
    with open(directory / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_split(directory) -> SplitBundle:
    directory = Path(directory)
    mpath = directory / "manifest.json"
    if not mpath.exists():
        raise DataError(f"{directory}: not a split directory (manifest.json missing)")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    ul, il = tuple(manifest["user_ids"]), tuple(manifest["item_ids"])
    u_index = {u: k for k, u in enumerate(ul)}
    i_index = {i: k for k, i in enumerate(il)}
    nu, ni = len(ul), len(il)
    read = lambda name: _read_tsv(directory / name, u_index, i_index, nu, ni)
    label = lambda d: Dataset(d.n_users, d.n_items, d.positives, ul, il)
    train, test = label(read("train.tsv")), label(read("test.tsv"))
    validation = label(read("val.tsv")) if manifest.get("validation") == "present" else None
    noise = read("noise.tsv")
    return SplitBundle(train=train, test=test, validation=validation, noise_pool=noise.positives,
                       setting_tag=manifest["setting_tag"], meta=dict(manifest.get("fractions", {})))


def interaction_set(*datasets: Dataset) -> list[tuple[int, int]]:
    """Sorted multiset of (user, item) pairs across the given datasets (testing helper)."""
    out = []
    for d in datasets:
        users, items = d.pairs()
        out.extend(zip(users.tolist(), items.tolist()))
    return sorted(out)


def from_lists(lists: Sequence[Sequence[int]], n_items: Optional[int] = None) -> Dataset:
    """Convenience constructor from plain per-user item lists."""
    if n_items is None:
        n_items = 1 + max((max(p) for p in lists if len(p)), default=-1)
    return Dataset(len(lists), n_items, tuple(np.asarray(sorted(set(p)), dtype=np.int64) for p in lists))
