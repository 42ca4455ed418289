"""Protocol prompt strings and pair construction.

Every place that builds a training pair or an inference prompt goes
through this module, so the fine-tuning format and the query formats
can never drift apart. A single newline separates a prompt from the
text the model is expected to produce.
"""

from __future__ import annotations

FINETUNE_PROMPT = "Please tell me a story that you memorized:"
RECALL_SUFFIX = " Reconstruct the entire story that is related to the above question."
QA_SUFFIX = " Answer should be no more than one sentence."
IRAG_INSTRUCTION = "Based on the reconstructed story, answer the following question: "

SEP = "\n"


def finetune_pair(story: str, prompt: str = FINETUNE_PROMPT) -> tuple[str, str]:
    """(context, target) for memorization training."""
    return prompt + SEP, story


def recall_prompt(question: str) -> str:
    return question + RECALL_SUFFIX + SEP


def qa_prompt(question: str) -> str:
    return question + QA_SUFFIX + SEP


def rag_prompt(context_text: str, question: str) -> str:
    """Retrieved raw text placed above the QA prompt."""
    return context_text + SEP + qa_prompt(question)


def irag_prompt(recalled: str, question: str) -> str:
    """Phase-2 prompt: self-recalled story, then instructed QA."""
    return recalled + SEP + IRAG_INSTRUCTION + question + QA_SUFFIX + SEP


def qa_pair(question: str, answer: str) -> tuple[str, str]:
    return qa_prompt(question), answer


def recall_pair(question: str, story: str) -> tuple[str, str]:
    return recall_prompt(question), story
