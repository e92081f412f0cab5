"""Learning-free text-embedding mixing operations and the edit pipeline.

All mixing operations are row-local: rows outside the declared positions
are returned bitwise-equal to the source. Edit comparisons are seed-paired;
the source and edited images always share the same x_T under deterministic
DDIM sampling, so any difference is attributable to the embedding change.
"""

from dataclasses import dataclass, field

import numpy as np

from .denoiser import AttnMask
from .pipeline import ModelBundle, seed_noise
from .text_encoder import TextEmbedding, TokenSeq
from .toyworld import background_mask, oracle_classify, oracle_style


@dataclass(frozen=True)
class EditRecipe:
    kind: str                       # swap | soft_swap | scale | style | soft_mix | mask
    positions: tuple = ()           # swap / soft_swap
    weight: float = 0.5             # soft_swap: weight on the source row
    scale_pos: int = 0              # scale
    scale: float = 1.0              # scale
    lam: tuple = ()                 # soft_mix
    mask_range: tuple = (0, 0)      # mask: inclusive 0-based (i, j)
    mask_mode: str = "exclude"      # exclude keys from attention, or "zero" rows
    style_boundary: str = "include-eos"

    def label(self) -> str:
        if self.kind == "swap":
            return f"swap[{','.join(map(str, self.positions))}]"
        if self.kind == "soft_swap":
            return f"soft_swap[w={self.weight}]"
        if self.kind == "scale":
            return f"scale[{self.scale_pos}x{self.scale}]"
        if self.kind == "mask":
            return f"mask[{self.mask_range[0]}-{self.mask_range[1]}:{self.mask_mode}]"
        return self.kind


@dataclass(frozen=True)
class EditOutcome:
    i_s: np.ndarray
    i_star: np.ndarray
    class_src: int
    class_star: int
    style_src: float
    style_star: float
    background_l2: float


def diff_positions(t_s: TokenSeq, t_t: TokenSeq) -> set:
    if len(t_s.ids) != len(t_t.ids):
        raise ValueError("token sequences must have equal length")
    return {i for i, (a, b) in enumerate(zip(t_s.ids, t_t.ids)) if a != b}


def _check_shapes(e_s: TextEmbedding, e_t: TextEmbedding) -> None:
    if e_s.data.shape != e_t.data.shape:
        raise ValueError("embedding shapes differ")


def mix_swap(e_s: TextEmbedding, e_t: TextEmbedding, positions) -> TextEmbedding:
    _check_shapes(e_s, e_t)
    out = e_s.data.copy()
    for i in positions:
        out[i] = e_t.data[i]
    return TextEmbedding(data=out, semantic_len=e_s.semantic_len)


def soft_swap(e_s: TextEmbedding, e_t: TextEmbedding, positions,
              w: float) -> TextEmbedding:
    _check_shapes(e_s, e_t)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight {w} outside [0, 1]")
    out = e_s.data.copy()
    for i in positions:
        out[i] = w * e_s.data[i] + (1.0 - w) * e_t.data[i]
    return TextEmbedding(data=out, semantic_len=e_s.semantic_len)


def mix_scale(e: TextEmbedding, j: int, c: float) -> TextEmbedding:
    if not 0 <= j < e.data.shape[0]:
        raise ValueError(f"position {j} out of range")
    out = e.data.copy()
    out[j] = c * out[j]
    return TextEmbedding(data=out, semantic_len=e.semantic_len)


def mix_style(e_s: TextEmbedding, e_t: TextEmbedding,
              boundary: str = "include-eos") -> TextEmbedding:
    """Semantic rows from the source, padding rows from the target.

    boundary "include-eos" keeps BOS..EOS on the source side; "exclude-eos"
    moves the EOS row to the target (padding) side.
    """
    _check_shapes(e_s, e_t)
    if boundary == "include-eos":
        cut = e_s.semantic_len
    elif boundary == "exclude-eos":
        cut = e_s.semantic_len - 1
    else:
        raise ValueError(f"unknown style boundary {boundary!r}")
    out = np.concatenate([e_s.data[:cut], e_t.data[cut:]], axis=0)
    return TextEmbedding(data=out, semantic_len=e_s.semantic_len)


def soft_mix(e_s: TextEmbedding, e_t: TextEmbedding, lam) -> TextEmbedding:
    _check_shapes(e_s, e_t)
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (e_s.data.shape[0],):
        raise ValueError(f"lambda must have length {e_s.data.shape[0]}")
    if np.any(lam < 0.0) or np.any(lam > 1.0):
        raise ValueError("lambda entries must lie in [0, 1]")
    out = lam[:, None] * e_s.data + (1.0 - lam)[:, None] * e_t.data
    return TextEmbedding(data=out, semantic_len=e_s.semantic_len)


def apply_recipe(recipe: EditRecipe, e_s: TextEmbedding, e_t: TextEmbedding,
                 t_s: TokenSeq, t_t: TokenSeq):
    """Resolve a recipe to (edited embedding, attention mask or None)."""
    if recipe.kind == "swap":
        return mix_swap(e_s, e_t, recipe.positions), None
    if recipe.kind == "soft_swap":
        return soft_swap(e_s, e_t, recipe.positions, recipe.weight), None
    if recipe.kind == "scale":
        return mix_scale(e_s, recipe.scale_pos, recipe.scale), None
    if recipe.kind == "style":
        return mix_style(e_s, e_t, recipe.style_boundary), None
    if recipe.kind == "soft_mix":
        return soft_mix(e_s, e_t, recipe.lam), None
    if recipe.kind == "mask":
        i, j = recipe.mask_range
        length = e_s.data.shape[0]
        if not (0 <= i <= j < length):
            raise ValueError(f"mask range {recipe.mask_range} out of bounds")
        if recipe.mask_mode == "exclude":
            allowed = np.ones(length, dtype=bool)
            allowed[i:j + 1] = False
            return e_s, AttnMask(allowed)
        if recipe.mask_mode == "zero":
            out = e_s.data.copy()
            out[i:j + 1] = 0.0
            return TextEmbedding(out, e_s.semantic_len), None
        raise ValueError(f"unknown mask mode {recipe.mask_mode!r}")
    raise ValueError(f"unknown recipe kind {recipe.kind!r}")


def run_edit(bundle: ModelBundle, source_text: str, target_text: str,
             recipe: EditRecipe, seed: int) -> EditOutcome:
    """Generate the source image and its edit from a shared x_T, then score."""
    t_s = bundle.tokens(source_text)
    t_t = bundle.tokens(target_text)
    e_s = bundle.embed(source_text)
    e_t = bundle.embed(target_text)
    e_star, mask = apply_recipe(recipe, e_s, e_t, t_s, t_t)
    x_T = seed_noise(seed)
    i_s = bundle.generate(e_s, x_T)
    i_star = bundle.generate(e_star, x_T, mask=mask)
    k_s = bundle.class_of_text(source_text)
    k_t = bundle.class_of_text(target_text)
    bg = background_mask(bundle.world, k_s, k_t)
    cls_src, _ = oracle_classify(bundle.world, i_s)
    cls_star, _ = oracle_classify(bundle.world, i_star)
    return EditOutcome(
        i_s=i_s,
        i_star=i_star,
        class_src=cls_src,
        class_star=cls_star,
        style_src=oracle_style(bundle.world, i_s, k_s),
        style_star=oracle_style(bundle.world, i_star, cls_star),
        background_l2=float(np.sqrt(np.sum((i_star - i_s)[bg] ** 2))),
    )


def save_edit_report_csv(path, rows) -> None:
    """rows: iterables of (seed, recipe_label, EditOutcome)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("seed,recipe,class_src,class_star,style_src,style_star,"
                "background_l2\n")
        for seed, label, o in rows:
            f.write(f"{seed},{label},{o.class_src},{o.class_star},"
                    f"{o.style_src:.17g},{o.style_star:.17g},"
                    f"{o.background_l2:.17g}\n")
