"""Prompt templates for every provider call the pipeline makes.

Templates are plain strings with ``{name}`` placeholders.  Interpolation is a
single regex pass over the known placeholder names, so literal braces in the
templates (JSON examples) and in interpolated values never get re-expanded.
"""

from __future__ import annotations

import re

DOCUMENT_FILTER = """\
Please determine whether the following book belongs to the category of \
**textbooks or problem books in the fields of physics, chemistry, or biology \
(including their subfields) targeted at undergraduate to doctoral-level \
students**.

If the book is either a textbook or a problem book in these fields, output \
"Yes". If it does not belong to either category, output "No".

Consider the information provided carefully and reason through your judgment \
step by step. Provide your detailed reasoning before delivering the final \
determination.

Here is the book's metadata:
- **Title**: {title}
- **Author**: {author}

After reasoning, output the answer in the following format:
[Determine Begin]Yes/No[Determine End]
"""

PAGE_TRANSCRIPTION = """\
Please convert the content of the image into Markdown text, following a \
logical reading order and ignore headers and footers.
Use LaTeX for any formulas, equations, or chemical structures.
For important illustrations, provide a detailed written description of their \
content. Ignore non-essential visuals.
For blank pages, return the output as:
`empty`
"""

BOUNDARY_DETECTION = """\
For the given book page:
---
{page_text_with_line_index}
---

Please identify if there are any:
1. Chapter beginnings
2. Section beginnings
3. Subsection beginnings
4. Problem (exercise or example) beginnings

Please ignore the following:
1. Headers and footers (especially on line 0, 1, 2)
2. Sub-question markers like "(1)", "(a)", "(i)", etc.
3. Solution indicators such as "**SOLUTION:**", "## Solution", "### General Solution", etc.

Let's solve this step by step:
1. identify any chapter indicators (e.g., "Chapter 1", etc.)
2. look for section markers (e.g., "1.1", "Section 1", etc.)
3. identify subsection markers (e.g., "1.1.1", etc.)
4. look for problem indicators (e.g., "1.1", "1-1", "**1008**", "Exercise 1", "Problem 1", "Example 1.1", etc.)
5. For each identified element: Check if it's a start of a chapter/section/subsection/problem and **it's not part of the elements to be ignored as specified above**

First, explain your reasoning process strictly following the 1~5 steps above. \
Then, provide the list of line numbers in JSON format, for example:
```json
[1, 2, 3]
```
"""

ITEM_EXTRACTION = """\
Input:
---
{chunk}
---

I am a university professor preparing an exercise problem bank.

Please help me extract the problems (include examples) or solutions from \
provided textbook pages.

1. First, find all the problems or solutions in the provided content. \
*Carefully analyze each piece of content to determine whether it is a \
problem or a solution.*
2. Ensure each identified problem is complete and not part of a solution or \
other content.
3. *For problems with multiple sub-problems, DO NOT omit the problem \
statement, DO NOT split the problem with multiple sub-problems.*
4. *DO NOT omit or change any part of the problems and solutions. Ensure the \
content is complete.*

Output the extracted data as a list of JSON objects.

Let's think step by step, output your thought process, and then output the \
extracted results in the following format:

```json
[
    {
        "problem number": "problem number in book, such as 1.1",
        "problem": "Full content of problem 1.1 ."
    },
    {
        "solution number": "1.1",
        "solution": "Full content of solution 1.1 ."
    },
    {
        "problem number": "1.2",
        "problem": "Full content of problem 1.2 ."
    }
]
```
If no problems and solutions are present in the provided content, output an \
empty list:
```json
[]
```
This task is important for my work, so please strictly follow the requirements.
"""

PAIR_VERIFICATION = """\
1. Task Overview
I have extracted problem-solution pairs from textbooks using extraction and \
matching algorithms. Please help me determine if the following problem and \
solution constitute a 'valid' problem-solution pair.

2. Input
Problem:
---
{problem}
---
Solution:
---
{solution}
---

3. Evaluation Process
    a. First, verify that the problem is indeed a 'problem' and the solution \
is a 'solution', not other content
    b. Then, confirm that the problem and solution match - the solution \
specifically addresses this problem, not some other problem
    c. Finally, check if the solution is correct and complete. The solution \
can contain only the final answer without the solving process, but must have \
a final answer.
        'Complete' means the solution does not reference other invisible \
information, such as formulas, diagrams, and answers from other problems, \
and can be independently understood and verified (if the missing information \
does not affect understanding and verification, it can be ignored).
        'Correct' means the final result of the solution is correct. **You \
must verify the correctness of the solution through rigorous reasoning.** If \
it cannot be verified, return False.

4. Output Format
Let's think step by step. Show your reasoning process and provide your final \
judgment in the following format, where 'True' means the problem and solution \
constitute a 'valid' problem-solution pair:
[Begin]True/False[End]
"""

# Optional second opinion used by the quality screen when the LLM
# double-check is enabled.  True means the text is self-contained.
COMPLETENESS_CHECK = """\
Below is a {kind} extracted from a textbook page.

---
{body}
---

Determine whether this {kind} is complete and self-contained. 'Complete' \
means it does not reference other invisible information, such as formulas, \
diagrams, and answers from other problems, and can be independently \
understood and verified (if the missing information does not affect \
understanding and verification, it can be ignored).

Reason step by step, then give your judgment in the following format, where \
'True' means the text is complete and self-contained:
[Begin]True/False[End]
"""

# Preamble sent to reasoning models when collecting candidate solutions.
# Kept minimal so it does not bias the model's style.
SOLVE_PREAMBLE = """\
Solve the following problem. Show your reasoning, then state the final answer.

{problem}
"""

# Agreement check between a model-generated solution and the reference
# solution mined from the source document.
SOLUTION_JUDGE = """\
I am checking machine-generated solutions against reference solutions from a \
problem bank.

Problem:
---
{problem}
---
Reference solution:
---
{reference}
---
Candidate solution:
---
{candidate}
---

Determine whether the candidate solution's final answer agrees with the \
reference solution. Check that the candidate is a genuine solution attempt, \
that it addresses this problem, and that its final result matches the \
reference's final result. Reason step by step, then give your judgment in \
the following format, where 'True' means the candidate's final answer agrees \
with the reference:
[Begin]True/False[End]
"""

# Appended when a response could not be parsed and the stage re-asks once.
# Changes the cache key of the retried request without changing its meaning.
FORMAT_REMINDER = "\n\nReminder: respond in the exact required output format."


def fill(template: str, **values: str) -> str:
    """Interpolate ``{name}`` placeholders in a single pass.

    Values are inserted verbatim; they are never scanned for placeholders
    themselves, and braces that are not a known placeholder are left alone.
    """
    if not values:
        return template
    names = "|".join(re.escape(name) for name in values)
    return re.sub(r"\{(" + names + r")\}", lambda m: values[m.group(1)], template)
