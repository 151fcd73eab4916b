from __future__ import annotations

from typing import Optional, Sequence, Tuple

import torch
import torch.nn.functional as F

from zsad.core.constants import (
    ABNORMAL_SUFFIX_WORDS,
    GENERIC_ABNORMAL_STATES,
    GENERIC_NORMAL_STATES,
    GENERIC_TEMPLATES,
    MEDICAL_ABNORMAL_STATES,
    MEDICAL_NORMAL_STATES,
    MEDICAL_TEMPLATES,
    NORMAL_SUFFIX_WORDS,
    PROMPT_INIT_STD,
)
from zsad.core.errors import FormatError, ParameterError
from zsad.core.models import (
    FixedPromptSet,
    LearnablePromptState,
    PromptSource,
    Provenance,
    StateLexicon,
    TextPrototypes,
    TokenEmbeddingSequence,
)
from zsad.ports.encoder_port import VisionLanguageEncoder

SLOT = "{}"


# -------------------------
# Lexicons
# -------------------------

def lexicon_for(domain: str) -> StateLexicon:
    if domain == "medical":
        return StateLexicon(MEDICAL_NORMAL_STATES, MEDICAL_ABNORMAL_STATES, domain_tag="medical")
    if domain == "generic":
        return StateLexicon(GENERIC_NORMAL_STATES, GENERIC_ABNORMAL_STATES, domain_tag="generic")
    raise ParameterError(f"unknown lexicon {domain!r}")


def templates_for(domain: str) -> Tuple[str, ...]:
    return MEDICAL_TEMPLATES if domain == "medical" else GENERIC_TEMPLATES


def resolve_fixed_inventory(
    manifest_domain: str,
    lexicon_override: Optional[str] = None,
    templates: Optional[Sequence[str]] = None,
    normal_states: Optional[Sequence[str]] = None,
    abnormal_states: Optional[Sequence[str]] = None,
) -> Tuple[Tuple[str, ...], StateLexicon]:
    """
    Medical manifests select the medical lexicon and templates unless overridden;
    explicit template/state lists replace the chosen defaults.
    """
    domain = lexicon_override or ("medical" if manifest_domain == "medical" else "generic")
    lexicon = lexicon_for(domain)
    if normal_states or abnormal_states:
        lexicon = StateLexicon(
            normal_states=tuple(normal_states or lexicon.normal_states),
            abnormal_states=tuple(abnormal_states or lexicon.abnormal_states),
            domain_tag=lexicon.domain_tag,
        )
    return tuple(templates or templates_for(domain)), lexicon


# -------------------------
# Fixed detection prompts
# -------------------------

def _check_slot(text: str, kind: str) -> None:
    if text.count(SLOT) != 1:
        raise FormatError(f"{kind} {text!r} must contain exactly one '{SLOT}' slot")


def compose_fixed_prompts(
    class_name: str,
    templates: Sequence[str],
    lexicon: StateLexicon,
) -> FixedPromptSet:
    if not templates:
        raise ParameterError("at least one template is required")
    if not lexicon.normal_states or not lexicon.abnormal_states:
        raise ParameterError("lexicon needs both normal and abnormal states")
    for t in templates:
        _check_slot(t, "template")
    for s in (*lexicon.normal_states, *lexicon.abnormal_states):
        _check_slot(s, "state")

    def _product(states: Sequence[str]) -> Tuple[str, ...]:
        # templates outer, states inner
        return tuple(t.replace(SLOT, s.replace(SLOT, class_name)) for t in templates for s in states)

    normal = _product(lexicon.normal_states)
    abnormal = _product(lexicon.abnormal_states)
    shared = sorted(set(normal) & set(abnormal))
    if shared:
        raise FormatError(f"prompts appear in both subsets: {shared}")
    return FixedPromptSet(normal_prompts=normal, abnormal_prompts=abnormal, class_name=class_name)


def _subset_prototype(encoder: VisionLanguageEncoder, prompts: Sequence[str]) -> torch.Tensor:
    if not prompts:
        raise ParameterError("prompt subsets must be non-empty")
    embs = encoder.encode_texts(list(prompts)).detach().to(torch.float64)
    return F.normalize(F.normalize(embs, dim=-1).mean(dim=0), dim=-1)


def build_detection_prototypes(prompts: FixedPromptSet, encoder: VisionLanguageEncoder) -> TextPrototypes:
    return TextPrototypes(
        g_n=_subset_prototype(encoder, prompts.normal_prompts),
        g_a=_subset_prototype(encoder, prompts.abnormal_prompts),
        source=PromptSource.FIXED,
    )


# -------------------------
# Learnable localization prompts
# -------------------------

def init_learnable_prompts(n_tokens: int, token_dim: int, seed: int) -> LearnablePromptState:
    if n_tokens < 1 or token_dim < 1:
        raise ParameterError(f"E and D_t must be >= 1, got E={n_tokens}, D_t={token_dim}")
    gen = torch.Generator().manual_seed(int(seed))
    t_n = torch.randn(n_tokens, token_dim, generator=gen) * PROMPT_INIT_STD
    t_a = torch.randn(n_tokens, token_dim, generator=gen) * PROMPT_INIT_STD
    return LearnablePromptState(T_n=t_n, T_a=t_a, seed=int(seed))


def compose_token_sequence(
    learned: torch.Tensor,
    words: Sequence[str],
    encoder: VisionLanguageEncoder,
) -> TokenEmbeddingSequence:
    """[learned rows, word rows...]; learned rows come first."""
    word_rows = [encoder.lookup_word_embedding(w).to(device=learned.device, dtype=learned.dtype) for w in words]
    rows = torch.cat([learned, *word_rows], dim=0)
    provenance = (Provenance.LEARNED,) * learned.shape[0] + (Provenance.WORD,) * (rows.shape[0] - learned.shape[0])
    return TokenEmbeddingSequence(tokens=rows, provenance=provenance)


def build_localization_prototypes(state: LearnablePromptState, encoder: VisionLanguageEncoder) -> TextPrototypes:
    seq_n = compose_token_sequence(state.T_n, NORMAL_SUFFIX_WORDS, encoder)
    seq_a = compose_token_sequence(state.T_a, ABNORMAL_SUFFIX_WORDS, encoder)
    return TextPrototypes(
        g_n=encoder.encode_token_sequence(seq_n).vector,
        g_a=encoder.encode_token_sequence(seq_a).vector,
        source=PromptSource.LEARNABLE,
    )
