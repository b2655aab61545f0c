"""Prompt templates and builders for the four agents.

Templates are stored as module constants; builders fill the placeholder slots.
Injected blocks (texts, strategy lists) are fenced with triple quotes so the
offline mock provider can parse its own inputs back out of the finished
prompt; the live provider sees the same prompts.

Placeholders are substituted with str.replace, not str.format, because the
templates contain literal JSON braces.
"""

from __future__ import annotations

FENCE = '"""'


def fenced(text: str) -> str:
    return f"{FENCE}\n{text}\n{FENCE}"


def extract_fenced_after(prompt: str, marker: str) -> str | None:
    """Content of the first fenced block after the marker, or None."""
    at = prompt.find(marker)
    if at < 0:
        return None
    start = prompt.find(FENCE, at)
    if start < 0:
        return None
    start += len(FENCE)
    end = prompt.find(FENCE, start)
    if end < 0:
        return None
    return prompt[start:end].strip("\n")


RECOMMENDER_TEMPLATE = """You are an expert in science communication narrative text revision and strategy recommendation.
Your task is to analyze the given text and recommend effective strategies to improve it.

Step 1: Analyze the Text.
Position: Identify where the selected text {text} appears in the {overall_content}.
Granularity: Determine whether the text consists of sentences, paragraphs, or a complete document.
Core Message: Extract the key ideas that must be preserved and effectively conveyed in text.

Step 2: Select Strategies Review the available strategy list {strategy_info}, including their
definitions, examples, and usage instructions. Choose a set of strategies that align with the
text's characteristics and modification goals. Ensure the selected strategies are compatible
when combined. Consider multiple ways to apply the strategies for improvement.
Only choose strategies mentioned above, and use them appropriately.
Provide {generated_number} different versions, each using distinct or complementary strategy sets.
These different versions should use different strategies, preferably with varied combinations of
strategies.

Step 3: Output the Strategy List Return the strategy selection in JSON format with multiple versions:
{
"Version1": [ "Strategy_A", "Strategy_H", "Strategy_J", "Strategy_B"],
"Version2": [ "Strategy_F",..., "Strategy_E"],
...,
"Version_number": [ "Strategy_G", "Strategy_M",..., "Strategy_C",...,"Strategy_D"]
}
Do not include any extra commentary or explanation outside the JSON.
Let's think step by step."""


GENERATOR_TEMPLATE = """You are an expert in science communication narrative strategy. Your task is to revise the
given text using the recommended strategies and provide a concise overview of how the
strategies were applied.

Step 1: Review the Strategy List
- Read the strategy list {strategy_info}, including each strategy's definition and
how it is typically used.

Step 2: Apply all the Strategies mentioned in the strategy list to the Text: {text}.
Even if the original text already contains elements that align with the strategy, enhance it further
based on how the strategy should be applied.
Also, consider the position of the given text in the whole context {overall_content}.
Make the changed text coherent with the context.

Step 3: Summarize the Application
- Summarize how each selected strategy was applied.
- Keep the summary concise and short to indicate what specific changes have been made using
separate strategies.

Step 4: Do not omit or alter any important information from the original text, but ensure that the
generated text is distinct from the original.

Step 5: If the content is primarily narrative in nature, supplement it with scientifically grounded
explanations, relevant data, or reliable sources to enhance credibility and depth.

Step 6: Output the Result Return a JSON with the following structure:
{
"strategies": ["Strategy_A", ..., "Strategy_B", "Strategy_C", "Strategy_D"],
"summary": "Summarize how each strategy was applied and what specific changes were made to the content based on each strategy. Example: Changed 'Photosynthesis is the process plants use to make food.' to 'What if plants could teach us how to turn sunlight into fuel?' Focus only on the changes from the previous version.",
"newText": "Modified version of the text. Even if the original text already contains elements that align with the strategy, enhance it further based on how the strategy should be applied."
}

Do not include any extra commentary or explanation outside the JSON.
Let's think step and step."""


SCORER_BASE = """You are an engaging audience for science communication.
Given a narrative, evaluate it on two dimensions: (1) Narrative Engagement and (2) Scientific Exposition.
using the detailed scoring rubrics below.
Provide a numerical score from 0 to 100 for each dimension, along with a brief explanation justifying
your rating.

Dimension 1:
Narrative Engagement: Evaluate how effectively the narrative captures attention, evokes emotion,
sparks curiosity, and maintains reader engagement.
Scoring Rubric:
0-20: Extremely boring and dry, no storytelling elements,
21-40: Barely engaging, logical but lacks emotion or creativity,
41-60: Moderately engaging, uses some analogies or description but still feels academic,
61-80: Quite engaging, includes storytelling techniques and relatable examples,
81-100: Highly immersive, vivid storytelling with strong emotional or narrative appeal.

Dimension 2: Scientific Exposition: Assess how well the narrative explains scientific concepts with
clarity, correctness, and alignment with established knowledge.
Scoring Rubric:
0-20: Highly inaccurate or pseudoscientific, major factual errors,
21-40: Misleading or speculative, lacks clarity or evidence,
41-60: Mostly accurate but vague or oversimplified,
61-80: Generally accurate, minor imprecision, lacks citations,
81-100: Highly accurate, precise, and well-aligned with scientific consensus."""


SCORER_REFERENCE = """This is the original text: {text} and its score {currentScore}. Please use this as a reference.
Compare the current version with the original one in terms of scientific exposition and narrative
engagement, and assess whether it performs better or worse than the previous version.
Compared to the previous version's scores, assign a score difference within a reasonable range."""


# Additions beyond the template sheet: the scorer needs the text under
# evaluation and an explicit output schema, neither of which the sheet fixes.
CURRENT_VERSION_HEADER = "This is the current version to evaluate:"

SCORER_FORMAT = """Return a JSON with the following structure:
{"engagement": <integer 0-100>, "exposition": <integer 0-100>, "explanation": "<brief justification>"}
Do not include any extra commentary or explanation outside the JSON."""


CUSTOM_INSTRUCTION_HEADER = "Additional author instruction for this revision:"

MERGE_INSTRUCTION_HEADER = (
    "Additionally, merge the revised text with this other version, "
    "preserving strong elements from each:"
)

CORRECTION_INSTRUCTION = (
    "Your previous reply was not valid JSON for the required schema. "
    "Return only the JSON object in the exact schema requested above, "
    "with no commentary, no code fences, and no extra keys."
)


ANALYZER_TEMPLATE = """You are a reflective writing coach observing an author revising a science text.
Below is the chronological interaction history: labels selected, custom prompts issued,
versions confirmed or merged, strategies toggled, and verdicts on earlier suggestions.
{history}
Identify the author's strengths, weaknesses, recurring editing patterns, and concrete
suggestions for what to try next. Suggestions must reference a label id (1-8) or a
strategy id (1-25) from the library.

Return a JSON with the following structure:
{
"strengths": ["..."],
"weaknesses": ["..."],
"patterns": ["..."],
"suggestions": [{"label_id": <int or null>, "strategy_id": <int or null>, "rationale": "..."}]
}
Do not include any extra commentary or explanation outside the JSON."""


def build_recommender_prompt(
    label_header: str, strategy_lines: str, text: str, overall_content: str, n: int
) -> str:
    info = f"\n{label_header}\n{strategy_lines}\n"
    prompt = RECOMMENDER_TEMPLATE
    prompt = prompt.replace("{text}", fenced(text))
    prompt = prompt.replace("{overall_content}", fenced(overall_content))
    prompt = prompt.replace("{strategy_info}", info)
    prompt = prompt.replace("{generated_number}", str(n))
    return prompt


def build_generator_prompt(
    strategy_lines: str,
    text: str,
    overall_content: str,
    custom_instruction: str | None = None,
    merge_with: str | None = None,
) -> str:
    prompt = GENERATOR_TEMPLATE
    prompt = prompt.replace("{strategy_info}", f"\n{strategy_lines}\n")
    prompt = prompt.replace("{text}", fenced(text))
    prompt = prompt.replace("{overall_content}", fenced(overall_content))
    extras = []
    if merge_with is not None:
        extras.append(f"{MERGE_INSTRUCTION_HEADER}\n{fenced(merge_with)}")
    if custom_instruction is not None:
        extras.append(f"{CUSTOM_INSTRUCTION_HEADER}\n{fenced(custom_instruction)}")
    if extras:
        prompt = prompt + "\n\n" + "\n\n".join(extras)
    return prompt


def build_scorer_prompt(
    text: str,
    baseline_text: str | None = None,
    baseline_score_json: str | None = None,
) -> str:
    parts = [SCORER_BASE]
    if baseline_text is not None and baseline_score_json is not None:
        reference = SCORER_REFERENCE
        reference = reference.replace("{text}", fenced(baseline_text))
        reference = reference.replace("{currentScore}", baseline_score_json)
        parts.append(reference)
    parts.append(f"{CURRENT_VERSION_HEADER}\n{fenced(text)}")
    parts.append(SCORER_FORMAT)
    return "\n\n".join(parts)


def build_analyzer_prompt(history_lines: str) -> str:
    return ANALYZER_TEMPLATE.replace("{history}", fenced(history_lines))
